//! Peer configuration. Every field has a default, so an empty file is a valid config.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::database::QueryParams;
use crate::geometry::RansacParams;
use crate::matching::MatchParams;
use crate::registry::StrategyNames;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeerConfig {
    /// 1 or 2.
    pub camera_id: u8,
    /// Acquisition rate, frames per second.
    pub rate: u32,
    /// Query sharing rate, frames per second. Must divide `rate`.
    pub share_rate: u32,
    /// Frames processed before the first query is shared.
    pub init_window: u32,
    /// Maximum local features per frame.
    pub max_features: usize,
    /// Minimum view score for a candidate view.
    pub min_score: f64,
    /// Temporal grouping window, in seconds.
    pub group_window: f64,
    /// Candidate cap per unit of acquisition rate.
    pub candidates_per_rate: usize,
    pub min_group_size: usize,
    /// Hamming threshold for local matches (exclusive).
    pub max_distance: u32,
    /// Nearest/second-nearest ratio threshold (exclusive).
    pub ratio: f64,
    /// Minimum number of matched local features; also the query-size guard.
    pub min_matches: usize,
    /// Required inliers (exclusive).
    pub min_inliers: usize,
    pub max_iterations: usize,
    pub confidence: f64,
    /// Inlier threshold in pixels.
    pub threshold: f64,
    /// With geometric validation off, any candidate view is reported as a match.
    pub geometric_validation: bool,
    pub seed: u64,
    pub strategies: StrategyNames,
}

impl Default for PeerConfig {
    fn default() -> Self {
        PeerConfig {
            camera_id: 1,
            rate: 30,
            share_rate: 6,
            init_window: 30,
            max_features: 1000,
            min_score: 0.03,
            group_window: 3.0,
            candidates_per_rate: 50,
            min_group_size: 1,
            max_distance: 50,
            ratio: 0.6,
            min_matches: 8,
            min_inliers: 12,
            max_iterations: 500,
            confidence: 0.99,
            threshold: 2.0,
            geometric_validation: true,
            seed: 0,
            strategies: StrategyNames::default(),
        }
    }
}

impl PeerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PeerConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_camera(&self, camera_id: u8) -> Self {
        PeerConfig {
            camera_id,
            ..self.clone()
        }
    }

    /// Frames between consecutive shared queries.
    pub fn share_period(&self) -> u32 {
        self.rate / self.share_rate
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if !matches!(self.camera_id, 1 | 2) {
            return fail(format!("camera_id must be 1 or 2, got {}", self.camera_id));
        }
        if self.share_rate == 0 || self.rate == 0 {
            return fail("rate and share_rate must be positive".into());
        }
        if self.share_rate > self.rate || !self.rate.is_multiple_of(self.share_rate) {
            return fail(format!(
                "share_rate {} must divide rate {}",
                self.share_rate, self.rate
            ));
        }
        if self.max_features > u16::MAX as usize {
            return fail(format!("max_features {} exceeds 65535", self.max_features));
        }
        if self.max_distance == 0 || self.max_distance > 256 {
            return fail(format!("max_distance {} outside (0, 256]", self.max_distance));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return fail(format!("ratio {} outside (0, 1)", self.ratio));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return fail(format!("confidence {} outside (0, 1)", self.confidence));
        }
        if !(self.threshold > 0.0 && self.min_score >= 0.0 && self.group_window >= 0.0) {
            return fail("threshold must be positive; min_score and group_window non-negative".into());
        }
        if self.min_matches < 8 {
            return fail(format!("min_matches {} below the 8 needed for estimation", self.min_matches));
        }
        Ok(())
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            max_distance: self.max_distance,
            ratio: self.ratio,
        }
    }

    pub fn query_params(&self) -> QueryParams {
        QueryParams {
            min_score: self.min_score,
            candidates_per_rate: self.candidates_per_rate,
            rate: self.rate,
            group_window: self.group_window,
            min_group_size: self.min_group_size,
        }
    }

    pub fn ransac_params(&self) -> RansacParams {
        RansacParams {
            min_matches: self.min_matches,
            min_inliers: self.min_inliers,
            max_iterations: self.max_iterations,
            confidence: self.confidence,
            threshold: self.threshold,
        }
    }
}
