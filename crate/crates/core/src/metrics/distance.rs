use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("beat".into()));
    }
    Ok(())
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unconstrained DTW with `|a_i - b_j|` local cost and steps (1,0), (0,1), (1,1).
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("dtw sequence".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// 1-D Wasserstein-1 distance between two empirical distributions with
/// uniform weights, integrating the gap between their quantile functions.
pub fn wasserstein_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("wasserstein sample".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    if n == m {
        return Ok(xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64);
    }
    // Walk the merged breakpoints k/n and l/m of both step quantile functions.
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_x = (i + 1) as f64 / n as f64;
        let next_y = (j + 1) as f64 / m as f64;
        let next = next_x.min(next_y);
        total += (next - u) * (xs[i] - ys[j]).abs();
        u = next;
        // Compare via integer cross-multiplication to avoid stalling on round-off.
        let (ax, ay) = ((i + 1) * m, (j + 1) * n);
        if ax <= ay {
            i += 1;
        }
        if ay <= ax {
            j += 1;
        }
    }
    Ok(total)
}

/// Mean over time indices of the per-index 1-D Wasserstein-1 distance between
/// the two beat sets.
pub fn emd_1d(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyInput("emd beat set".into()));
    }
    let len = xs[0].len();
    for b in xs.iter().chain(ys) {
        if b.len() != len {
            return Err(Error::DimensionMismatch { expected: len, actual: b.len() });
        }
    }
    if len == 0 {
        return Err(Error::EmptyInput("beat".into()));
    }
    let mut total = 0.0;
    let mut cx = vec![0.0; xs.len()];
    let mut cy = vec![0.0; ys.len()];
    for t in 0..len {
        for (c, b) in cx.iter_mut().zip(xs) {
            *c = b[t];
        }
        for (c, b) in cy.iter_mut().zip(ys) {
            *c = b[t];
        }
        total += wasserstein_1d(&cx, &cy)?;
    }
    Ok(total / len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mmd {
    /// Biased squared-MMD estimate.
    pub value: f64,
    pub bandwidth: f64,
    /// Set when every point in both sets coincides, so no bandwidth exists.
    pub degenerate: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median pairwise Euclidean distance over the pooled set.
pub fn median_bandwidth(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = xs.iter().chain(ys).collect();
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        0.0
    } else {
        median(d)
    }
}

/// Biased squared MMD with kernel `exp(-|x-y|^2 / (2 h^2))`.
pub fn mmd(xs: &[Vec<f64>], ys: &[Vec<f64>], bandwidth: Option<f64>) -> Result<Mmd> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::InvalidArgument(format!("mmd needs at least 2 points per set, got {} and {}", xs.len(), ys.len())));
    }
    let dim = xs[0].len();
    if let Some(b) = xs.iter().chain(ys).find(|b| b.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: b.len() });
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}"))),
        None => median_bandwidth(xs, ys),
    };
    if h == 0.0 {
        return Ok(Mmd { value: 0.0, bandwidth: 0.0, degenerate: true });
    }
    let gamma = 1.0 / (2.0 * h * h);
    let mean_kernel = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for p in a {
            for q in b {
                s += (-gamma * sq_dist(p, q)).exp();
            }
        }
        s / (a.len() * b.len()) as f64
    };
    let value = mean_kernel(xs, xs) + mean_kernel(ys, ys) - 2.0 * mean_kernel(xs, ys);
    Ok(Mmd { value: value.max(0.0), bandwidth: h, degenerate: false })
}
