//! Independent reference implementations used as test oracles.

const EPS: f64 = 1e-12;

/// Minimum warping cost over every monotone path, by explicit enumeration.
pub fn dtw_brute(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn pivot(t: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], r: usize, c: usize) {
    let p = t[r][c];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let row = t[r].clone();
    for (i, other) in t.iter_mut().enumerate() {
        if i != r && other[c] != 0.0 {
            let f = other[c];
            for (v, w) in other.iter_mut().zip(&row) {
                *v -= f * w;
            }
        }
    }
    let f = obj[c];
    for (v, w) in obj.iter_mut().zip(&row) {
        *v -= f * w;
    }
    basis[r] = c;
}

/// Bland's rule; columns at or beyond `allowed` never enter.
fn iterate(t: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], allowed: usize) {
    let rhs = obj.len() - 1;
    while let Some(c) = (0..allowed).find(|&j| obj[j] < -1e-12) {
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[c] > EPS {
                let ratio = row[rhs] / row[c];
                match leave {
                    Some((l, best)) if ratio > best + 1e-15 || (ratio >= best - 1e-15 && basis[i] > basis[l]) => {}
                    _ => leave = Some((i, ratio)),
                }
            }
        }
        let (r, _) = leave.expect("transport LPs are bounded");
        pivot(t, obj, basis, r, c);
    }
}

/// `min c.x` subject to `A x = b`, `x >= 0`: dense two-phase tableau simplex.
pub fn lp_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let (m, n) = (a.len(), c.len());
    let width = n + m + 1;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            let mut row = vec![0.0; width];
            for j in 0..n {
                row[j] = sign * a[i][j];
            }
            row[n + i] = 1.0;
            row[width - 1] = sign * b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut obj = vec![0.0; width];
    for row in &t {
        for j in 0..n {
            obj[j] -= row[j];
        }
        obj[width - 1] -= row[width - 1];
    }
    iterate(&mut t, &mut obj, &mut basis, n);
    assert!(obj[width - 1].abs() < 1e-9, "infeasible LP");

    // Drive zero-level artificials out of the basis; drop rows that are redundant.
    let mut i = 0;
    while i < t.len() {
        if basis[i] >= n {
            match (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                Some(j) => pivot(&mut t, &mut obj, &mut basis, i, j),
                None => {
                    t.remove(i);
                    basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    let mut obj = vec![0.0; width];
    obj[..n].copy_from_slice(c);
    for (row, &bi) in t.iter().zip(&basis) {
        let cb = c[bi];
        for (o, v) in obj.iter_mut().zip(row) {
            *o -= cb * v;
        }
    }
    iterate(&mut t, &mut obj, &mut basis, n);
    -obj[width - 1]
}

/// Optimal transport cost between two uniform point clouds on the line.
pub fn transport_lp(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len(), y.len());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; n * m];
        row[i * m..(i + 1) * m].fill(1.0);
        a.push(row);
        b.push(1.0 / n as f64);
    }
    for j in 0..m {
        let mut row = vec![0.0; n * m];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        a.push(row);
        b.push(1.0 / m as f64);
    }
    let c: Vec<f64> = (0..n * m).map(|k| (x[k / m] - y[k % m]).abs()).collect();
    lp_min(&a, &b, &c)
}

/// Per-sample transport cost averaged over time.
pub fn emd_lp(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let len = xs[0].len();
    (0..len)
        .map(|t| {
            let cx: Vec<f64> = xs.iter().map(|b| b[t]).collect();
            let cy: Vec<f64> = ys.iter().map(|b| b[t]).collect();
            transport_lp(&cx, &cy)
        })
        .sum::<f64>()
        / len as f64
}

/// Biased squared MMD with a Gaussian kernel, written as the plain double sums.
pub fn mmd_naive(xs: &[Vec<f64>], ys: &[Vec<f64>], h: f64) -> f64 {
    let k = |p: &Vec<f64>, q: &Vec<f64>| {
        let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
        (-d2 / (2.0 * h * h)).exp()
    };
    let mut kxx = 0.0;
    for p in xs {
        for q in xs {
            kxx += k(p, q);
        }
    }
    let mut kyy = 0.0;
    for p in ys {
        for q in ys {
            kyy += k(p, q);
        }
    }
    let mut kxy = 0.0;
    for p in xs {
        for q in ys {
            kxy += k(p, q);
        }
    }
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m)
}

fn cov3(rows: &[Vec<f64>]) -> ([f64; 3], [[f64; 3]; 3]) {
    let n = rows.len() as f64;
    let mut mu = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            mu[k] += r[k];
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut c = [[0.0; 3]; 3];
    for r in rows {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    for row in &mut c {
        row.iter_mut().for_each(|v| *v /= n - 1.0);
    }
    (mu, c)
}

/// Frechet distance for 3-dimensional features. `Tr((Sx Sy)^{1/2})` is the sum
/// of square roots of the eigenvalues of `Sx Sy`, which are real and
/// non-negative; they come from the characteristic cubic in trigonometric form.
pub fn fid3(fx: &[Vec<f64>], fy: &[Vec<f64>]) -> f64 {
    let (mx, sx) = cov3(fx);
    let (my, sy) = cov3(fy);
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = (0..3).map(|k| sx[i][k] * sy[k][j]).sum();
        }
    }
    let tr = p[0][0] + p[1][1] + p[2][2];
    let tr_sq: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| p[i][j] * p[j][i]).sum();
    let c2 = 0.5 * (tr * tr - tr_sq);
    let det = p[0][0] * (p[1][1] * p[2][2] - p[1][2] * p[2][1]) - p[0][1] * (p[1][0] * p[2][2] - p[1][2] * p[2][0])
        + p[0][2] * (p[1][0] * p[2][1] - p[1][1] * p[2][0]);
    // lambda^3 - tr lambda^2 + c2 lambda - det, shifted to t^3 + q1 t + q0.
    let s = tr / 3.0;
    let q1 = c2 - tr * tr / 3.0;
    let q0 = -2.0 * tr.powi(3) / 27.0 + tr * c2 / 3.0 - det;
    let roots: Vec<f64> = if q1 >= -1e-12 * (tr * tr).max(f64::MIN_POSITIVE) {
        vec![s + (-q0).cbrt(); 3]
    } else {
        let r = 2.0 * (-q1 / 3.0).sqrt();
        let arg = (3.0 * q0 / (q1 * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3).map(|k| s + r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos()).collect()
    };
    let cross: f64 = roots.iter().map(|l| l.max(0.0).sqrt()).sum();
    let mean: f64 = mx.iter().zip(&my).map(|(a, b)| (a - b).powi(2)).sum();
    mean + (0..3).map(|i| sx[i][i] + sy[i][i]).sum::<f64>() - 2.0 * cross
}

/// Hand-checked cases for the oracles themselves.
pub fn self_check() -> Result<(), String> {
    // Mass 1/2 from 0 to 1 and 1/2 from 2 to 4.
    let got = transport_lp(&[0.0, 2.0], &[1.0, 4.0]);
    if (got - 1.5).abs() > 1e-12 {
        return Err(format!("transport oracle: {got} vs 1.5"));
    }
    // Quantile coupling: 1/6 at distance 1, 1/6 at 2, 1/3 at 1.
    let got = transport_lp(&[0.0, 1.0, 2.0], &[0.0, 3.0]);
    if (got - 5.0 / 6.0).abs() > 1e-12 {
        return Err(format!("transport oracle: {got} vs 5/6"));
    }
    // Rows +-k on axis k: Sx = diag(0.4, 1.6, 3.6), Sy = 4 Sx, (Sx Sy)^{1/2} = 2 Sx.
    // Distinct eigenvalues keep the cubic well conditioned.
    let x: Vec<Vec<f64>> = (0..3)
        .flat_map(|k| [1.0, -1.0].map(|s| (0..3).map(|i| if i == k { s * (k + 1) as f64 } else { 0.0 }).collect()))
        .collect();
    let y: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
    let got = fid3(&x, &y);
    if (got - 5.6).abs() > 1e-12 {
        return Err(format!("fid oracle: {got} vs 5.6"));
    }
    if dtw_brute(&[0.0, 1.0, 2.0], &[0.0, 2.0]) != 1.0 {
        return Err("dtw oracle".into());
    }
    Ok(())
}
