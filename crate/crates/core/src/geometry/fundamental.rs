//! Normalized eight-point estimation of the fundamental matrix.
//!
//! Convention: a query point `q` and candidate point `m` correspond when
//! `[q 1] F [m 1]ᵀ = 0`, i.e. `F m` is the epipolar line of `m` in the query image.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("need at least 8 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("non-finite point coordinates")]
    NonFinite,
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
}

/// Rank-2 fundamental matrix with unit Frobenius norm and a positive largest-magnitude entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Canonicalizes an arbitrary non-zero matrix (scale and sign only; rank is not touched).
    pub fn canonical(m: Matrix3<f64>) -> Option<Self> {
        let norm = m.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        let mut m = m / norm;
        // row-major scan so the first of equal-magnitude entries wins
        let mut pivot = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                if m[(r, c)].abs() > pivot.abs() {
                    pivot = m[(r, c)];
                }
            }
        }
        if pivot < 0.0 {
            m = -m;
        }
        Some(FundamentalMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Epipolar line `F m` in the query image.
    pub fn line_in_query(&self, candidate: &Vector2<f64>) -> Vector3<f64> {
        self.0 * candidate.push(1.0)
    }

    /// Epipolar line `Fᵀ q` in the candidate image.
    pub fn line_in_candidate(&self, query: &Vector2<f64>) -> Vector3<f64> {
        self.0.transpose() * query.push(1.0)
    }

    /// Algebraic residual `qᵀ F m`.
    pub fn residual(&self, query: &Vector2<f64>, candidate: &Vector2<f64>) -> f64 {
        query.push(1.0).dot(&(self.0 * candidate.push(1.0)))
    }
}

/// Similarity taking a point set to zero mean and RMS distance √2 from the origin.
fn normalizing_transform(points: &[Vector2<f64>]) -> Result<Matrix3<f64>, GeometryError> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let ms = points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n;
    let rms = ms.sqrt();
    if rms.is_nan() || rms <= 1e-12 * (1.0 + mean.norm()) {
        return Err(GeometryError::Degenerate("coincident points"));
    }
    let s = std::f64::consts::SQRT_2 / rms;
    // scatter of the normalized set has trace 2; a near-zero eigenvalue means collinear
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = (p - mean) * s;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let (sxx, sxy, syy) = (sxx / n, sxy / n, syy / n);
    let half_trace = 0.5 * (sxx + syy);
    let det = sxx * syy - sxy * sxy;
    let smallest = half_trace - (half_trace * half_trace - det).max(0.0).sqrt();
    if smallest < 1e-10 {
        return Err(GeometryError::Degenerate("collinear points"));
    }
    Ok(Matrix3::new(
        s,
        0.0,
        -s * mean.x,
        0.0,
        s,
        -s * mean.y,
        0.0,
        0.0,
        1.0,
    ))
}

fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let h = t * p.push(1.0);
    Vector2::new(h.x / h.z, h.y / h.z)
}

/// Hartley-normalized eight-point estimate from `(query, candidate)` pixel pairs.
pub fn estimate_fundamental_8pt(
    pairs: &[(Vector2<f64>, Vector2<f64>)],
) -> Result<FundamentalMatrix, GeometryError> {
    if pairs.len() < 8 {
        return Err(GeometryError::TooFewCorrespondences(pairs.len()));
    }
    if pairs
        .iter()
        .any(|(q, m)| !(q.iter().chain(m.iter()).all(|v| v.is_finite())))
    {
        return Err(GeometryError::NonFinite);
    }
    let query: Vec<Vector2<f64>> = pairs.iter().map(|(q, _)| *q).collect();
    let cand: Vec<Vector2<f64>> = pairs.iter().map(|(_, m)| *m).collect();
    let tq = normalizing_transform(&query)?;
    let tm = normalizing_transform(&cand)?;

    let rows = pairs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (q, m)) in query.iter().zip(&cand).enumerate() {
        let q = apply(&tq, q);
        let m = apply(&tm, m);
        let qh = [q.x, q.y, 1.0];
        let mh = [m.x, m.y, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = qh[r] * mh[c];
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(GeometryError::Degenerate("svd failed"))?;
    let f = v_t.row(min_idx);
    let f_norm = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);

    let mut inner = f_norm.svd(true, true);
    let (smallest, _) = inner
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("three singular values");
    inner.singular_values[smallest] = 0.0;
    let rank2 = inner
        .recompose()
        .map_err(|_| GeometryError::Degenerate("svd failed"))?;

    let denorm = tq.transpose() * rank2 * tm;
    FundamentalMatrix::canonical(denorm).ok_or(GeometryError::Degenerate("null estimate"))
}
