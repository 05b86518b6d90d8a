//! Per-correspondence error measures under a fundamental matrix, in pixels.

use nalgebra::{Vector2, Vector3};

use super::fundamental::FundamentalMatrix;

/// Distance of a correspondence from satisfying the epipolar constraint.
pub trait EpipolarMetric: Send + Sync {
    fn name(&self) -> &'static str;

    fn error(&self, f: &FundamentalMatrix, query: &Vector2<f64>, candidate: &Vector2<f64>) -> f64;
}

fn point_line_distance(p: &Vector2<f64>, line: &Vector3<f64>) -> f64 {
    let n = line.x.hypot(line.y);
    if n == 0.0 {
        return f64::INFINITY;
    }
    (line.x * p.x + line.y * p.y + line.z).abs() / n
}

/// Mean of the point-to-epipolar-line distances in both images.
#[derive(Debug, Default, Clone, Copy)]
pub struct SymmetricEpipolar;

impl EpipolarMetric for SymmetricEpipolar {
    fn name(&self) -> &'static str {
        "symmetric"
    }

    fn error(&self, f: &FundamentalMatrix, query: &Vector2<f64>, candidate: &Vector2<f64>) -> f64 {
        let in_query = point_line_distance(query, &f.line_in_query(candidate));
        let in_candidate = point_line_distance(candidate, &f.line_in_candidate(query));
        0.5 * (in_query + in_candidate)
    }
}

/// First-order geometric error (Sampson distance).
#[derive(Debug, Default, Clone, Copy)]
pub struct Sampson;

impl EpipolarMetric for Sampson {
    fn name(&self) -> &'static str {
        "sampson"
    }

    fn error(&self, f: &FundamentalMatrix, query: &Vector2<f64>, candidate: &Vector2<f64>) -> f64 {
        let lq = f.line_in_query(candidate);
        let lm = f.line_in_candidate(query);
        let denom = lq.x * lq.x + lq.y * lq.y + lm.x * lm.x + lm.y * lm.y;
        if denom == 0.0 {
            return f64::INFINITY;
        }
        f.residual(query, candidate).abs() / denom.sqrt()
    }
}

/// Symmetric epipolar distance.
pub fn epipolar_error(f: &FundamentalMatrix, query: &Vector2<f64>, candidate: &Vector2<f64>) -> f64 {
    SymmetricEpipolar.error(f, query, candidate)
}
