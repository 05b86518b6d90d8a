//! Epipolar geometry: fundamental-matrix estimation and robust validation of matched views.

pub mod epipolar;
pub mod fundamental;
pub mod ransac;

pub use epipolar::{epipolar_error, EpipolarMetric, Sampson, SymmetricEpipolar};
pub use fundamental::{estimate_fundamental_8pt, FundamentalMatrix, GeometryError};
pub use ransac::{
    correspondences, ransac_verify, verify_matches, Correspondence, Estimate, Ransac, RansacParams,
    RobustEstimator, ValidationResult,
};
