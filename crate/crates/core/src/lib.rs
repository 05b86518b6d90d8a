//! Decentralised two-camera view-overlap recognition.
//!
//! Each camera keeps a bag-of-binary-words database of its own frames, shares query
//! feature sets with its partner on a fixed schedule, and answers the partner's queries
//! by candidate-view retrieval followed by local matching and epipolar validation.

pub mod annotate;
pub mod bow;
pub mod config;
pub mod database;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod protocol;
pub mod registry;
pub mod synth;
pub mod vocab;

pub use bow::{score, BowVector};
pub use config::PeerConfig;
pub use database::{CandidateMatch, QueryParams, SharedDatabase, ViewDatabase};
pub use features::{hamming_distance, Descriptor, FrameFeatures, InterestPoint, LocalFeature};
pub use matching::{match_local_features, MatchPair, MatchParams, MatchSet};
pub use registry::{Strategies, StrategyNames, StrategyRegistry};
pub use vocab::{build_vocabulary, Vocabulary};
