use crate::error::{Error, Result};

/// Row-major square matrix helpers; feature dimensions here stay small.
fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    crate::nn::gemm(n, n, n, 1.0, a, false, b, false, 0.0, &mut c);
    c
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the row-major matrix whose columns are eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[p * n + p], m[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// negative round-off eigenvalues are clamped to zero.
pub fn sqrt_psd(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, vecs) = symmetric_eigen(a, n);
    let mut out = vec![0.0; n * n];
    for (k, &lam) in vals.iter().enumerate() {
        let r = lam.max(0.0).sqrt();
        if r == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += r * vecs[i * n + k] * vecs[j * n + k];
            }
        }
    }
    out
}

/// Mean vector and unbiased covariance of the rows.
pub fn moments(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 feature rows, got {}", rows.len())));
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: r.len() });
    }
    let n = rows.len() as f64;
    let mut mu = vec![0.0; d];
    for r in rows {
        for (m, x) in mu.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mu, cov))
}

/// Frechet distance between Gaussians fitted to two feature matrices.
pub fn fid(fx: &[Vec<f64>], fy: &[Vec<f64>]) -> Result<f64> {
    let (mx, cx) = moments(fx)?;
    let (my, cy) = moments(fy)?;
    if mx.len() != my.len() {
        return Err(Error::DimensionMismatch { expected: mx.len(), actual: my.len() });
    }
    Ok(frechet_distance(&mx, &cx, &my, &cy))
}

/// `|mu_x - mu_y|^2 + Tr(Sx + Sy - 2 (Sx Sy)^{1/2})`, using the symmetric form
/// `Tr((Sx^{1/2} Sy Sx^{1/2})^{1/2})` for the cross term.
pub fn frechet_distance(mx: &[f64], cx: &[f64], my: &[f64], cy: &[f64]) -> f64 {
    let d = mx.len();
    let mean_term: f64 = mx.iter().zip(my).map(|(a, b)| (a - b) * (a - b)).sum();
    let sx = sqrt_psd(cx, d);
    let mut inner = matmul(&matmul(&sx, cy, d), &sx, d);
    // Re-symmetrize against round-off before the second eigen-decomposition.
    for i in 0..d {
        for j in i + 1..d {
            let avg = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = avg;
            inner[j * d + i] = avg;
        }
    }
    let (vals, _) = symmetric_eigen(&inner, d);
    let cross: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let trace: f64 = (0..d).map(|i| cx[i * d + i] + cy[i * d + i]).sum();
    (mean_term + trace - 2.0 * cross).max(0.0)
}
