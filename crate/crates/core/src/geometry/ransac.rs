//! Robust fundamental-matrix estimation and the geometric validation of a matched view.

use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::epipolar::EpipolarMetric;
use super::fundamental::{estimate_fundamental_8pt, FundamentalMatrix};
use crate::features::FrameFeatures;
use crate::matching::{MatchPair, MatchSet};

const SAMPLE_SIZE: usize = 8;

/// A pixel correspondence between the query and the candidate image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub query: Vector2<f64>,
    pub candidate: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Fewer matches than this are rejected without estimation.
    pub min_matches: usize,
    /// A view is accepted only with strictly more inliers than this.
    pub min_inliers: usize,
    pub max_iterations: usize,
    /// Target probability of drawing at least one all-inlier sample.
    pub confidence: f64,
    /// Inlier threshold in pixels.
    pub threshold: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            min_matches: 8,
            min_inliers: 12,
            max_iterations: 500,
            confidence: 0.99,
            threshold: 2.0,
        }
    }
}

/// Output of a robust estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub model: Option<FundamentalMatrix>,
    /// Indices into the input correspondences; every one is within the threshold of `model`.
    pub inliers: Vec<usize>,
    pub iterations_run: usize,
    /// Inlier count of the best minimal-sample hypothesis, before refitting.
    pub best_sample_inliers: usize,
}

pub trait RobustEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    fn estimate(
        &self,
        correspondences: &[Correspondence],
        params: &RansacParams,
        metric: &dyn EpipolarMetric,
        seed: u64,
    ) -> Estimate;
}

/// Classic RANSAC over eight-point minimal samples with adaptive termination and a final
/// refit on the consensus set.
///
/// When every 8-subset fits in the iteration budget the subsets are enumerated instead of
/// sampled, so small problems find the best minimal-sample model.
#[derive(Debug, Default, Clone, Copy)]
pub struct Ransac;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Next k-combination of `0..n` in lexicographic order; false after the last one.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let good_sample = inlier_ratio.powi(SAMPLE_SIZE as i32);
    if good_sample >= 1.0 {
        return 0.0;
    }
    if good_sample <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good_sample).ln()
}

fn inliers_of(
    f: &FundamentalMatrix,
    corr: &[Correspondence],
    metric: &dyn EpipolarMetric,
    threshold: f64,
) -> Vec<usize> {
    corr.iter()
        .enumerate()
        .filter(|(_, c)| metric.error(f, &c.query, &c.candidate) <= threshold)
        .map(|(i, _)| i)
        .collect()
}

fn fit(corr: &[Correspondence], subset: &[usize]) -> Option<FundamentalMatrix> {
    let pairs: Vec<_> = subset
        .iter()
        .map(|&i| (corr[i].query, corr[i].candidate))
        .collect();
    estimate_fundamental_8pt(&pairs).ok()
}

impl RobustEstimator for Ransac {
    fn name(&self) -> &'static str {
        "ransac"
    }

    fn estimate(
        &self,
        corr: &[Correspondence],
        params: &RansacParams,
        metric: &dyn EpipolarMetric,
        seed: u64,
    ) -> Estimate {
        let n = corr.len();
        let mut best: Option<(FundamentalMatrix, Vec<usize>)> = None;
        let mut iterations = 0usize;
        if n < SAMPLE_SIZE {
            return Estimate {
                model: None,
                inliers: Vec::new(),
                iterations_run: 0,
                best_sample_inliers: 0,
            };
        }

        let consider = |subset: &[usize], best: &mut Option<(FundamentalMatrix, Vec<usize>)>| -> bool {
            let Some(f) = fit(corr, subset) else {
                return false;
            };
            let inl = inliers_of(&f, corr, metric, params.threshold);
            if best.as_ref().is_none_or(|(_, b)| inl.len() > b.len()) {
                *best = Some((f, inl));
            }
            true
        };

        if binomial(n, SAMPLE_SIZE) <= params.max_iterations as u128 {
            let mut idx: Vec<usize> = (0..SAMPLE_SIZE).collect();
            loop {
                iterations += 1;
                consider(&idx, &mut best);
                if !next_combination(&mut idx, n) {
                    break;
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut effective = 0usize;
            let mut needed = f64::INFINITY;
            while iterations < params.max_iterations && (effective as f64) < needed {
                iterations += 1;
                let subset = sample(&mut rng, n, SAMPLE_SIZE).into_vec();
                // degenerate samples count toward the hard cap only
                if consider(&subset, &mut best) {
                    effective += 1;
                    if let Some((_, inl)) = &best {
                        needed = required_iterations(inl.len() as f64 / n as f64, params.confidence);
                    }
                }
            }
        }

        let Some((mut model, mut inliers)) = best else {
            return Estimate {
                model: None,
                inliers: Vec::new(),
                iterations_run: iterations,
                best_sample_inliers: 0,
            };
        };
        let best_sample_inliers = inliers.len();
        if inliers.len() > SAMPLE_SIZE {
            if let Some(refit) = fit(corr, &inliers) {
                let refit_inliers = inliers_of(&refit, corr, metric, params.threshold);
                if refit_inliers.len() >= inliers.len() {
                    model = refit;
                    inliers = refit_inliers;
                }
            }
        }
        Estimate {
            model: Some(model),
            inliers,
            iterations_run: iterations,
            best_sample_inliers,
        }
    }
}

/// Decision on whether a candidate view is geometrically consistent with the query.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResult {
    pub accepted: bool,
    pub inliers: MatchSet,
    pub fundamental: Option<FundamentalMatrix>,
    pub iterations_run: usize,
}

impl ValidationResult {
    fn rejected() -> Self {
        ValidationResult {
            accepted: false,
            inliers: MatchSet::default(),
            fundamental: None,
            iterations_run: 0,
        }
    }
}

pub fn correspondences(
    query: &FrameFeatures,
    candidate: &FrameFeatures,
    matches: &MatchSet,
) -> Vec<Correspondence> {
    matches
        .iter()
        .map(|p| {
            let q = query.features[p.query_index as usize].point;
            let m = candidate.features[p.candidate_index as usize].point;
            Correspondence {
                query: Vector2::new(q.x as f64, q.y as f64),
                candidate: Vector2::new(m.x as f64, m.y as f64),
            }
        })
        .collect()
}

/// Validates matched local features with a robust estimator: fewer than `min_matches`
/// matches are rejected outright, otherwise the view is accepted iff the final consensus
/// set has more than `min_inliers` members.
pub fn verify_matches(
    estimator: &dyn RobustEstimator,
    metric: &dyn EpipolarMetric,
    query: &FrameFeatures,
    candidate: &FrameFeatures,
    matches: &MatchSet,
    params: &RansacParams,
    seed: u64,
) -> ValidationResult {
    if matches.len() < params.min_matches {
        return ValidationResult::rejected();
    }
    let corr = correspondences(query, candidate, matches);
    let est = estimator.estimate(&corr, params, metric, seed);
    let inliers = MatchSet {
        pairs: est
            .inliers
            .iter()
            .map(|&i| matches.pairs[i])
            .collect::<Vec<MatchPair>>(),
    };
    ValidationResult {
        accepted: est.model.is_some() && inliers.len() > params.min_inliers,
        inliers,
        fundamental: est.model,
        iterations_run: est.iterations_run,
    }
}

/// [`verify_matches`] with RANSAC and the symmetric epipolar distance.
pub fn ransac_verify(
    query: &FrameFeatures,
    candidate: &FrameFeatures,
    matches: &MatchSet,
    params: &RansacParams,
    seed: u64,
) -> ValidationResult {
    verify_matches(
        &Ransac,
        &super::epipolar::SymmetricEpipolar,
        query,
        candidate,
        matches,
        params,
        seed,
    )
}
