//! Synthetic worlds, camera trajectories and rendered feature streams.

pub mod camera;
pub mod scenario;
pub mod scene;

pub use camera::{CameraIntrinsics, CameraPose};
pub use scenario::{synthesize, AliasConfig, CameraSequence, CameraTrack, SceneConfig, Synthesis, Waypoint};
pub use scene::{generate_scene, ground_truth_matches, render_frame, RenderedFrame, SynthError, SyntheticWorld, Volume};
