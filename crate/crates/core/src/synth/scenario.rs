//! Two-camera synthetic scenarios described by a TOML file.
//!
//! Keys: `seed`, `n_points`, `frames`, `epsilon` (bit flip probability), `max_features`,
//! `[volume]` (`kind = "box"` with `min`/`max`, or `kind = "annulus"` with `center`,
//! `inner_radius`, `outer_radius`, `y_min`, `y_max`), `[intrinsics]`, and two
//! `[[cameras]]` tables, each with a list of `[[cameras.waypoints]]` (`frame`,
//! `position`, `yaw_deg`, optional `pitch_deg`) and an optional `[cameras.alias]`
//! (`first_frame`, `end_frame`, `source_offset`).
//!
//! The world's vertical axis is `y`; yaw 0 looks along `+z` and positive yaw turns towards
//! `+x`. Poses between waypoints are linearly interpolated.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FrameFeatures, InterestPoint, LocalFeature};
use crate::io::GroundTruthTable;

use super::camera::{CameraIntrinsics, CameraPose};
use super::scene::{generate_scene, render_frame, RenderedFrame, SynthError, SyntheticWorld, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub frame: u32,
    pub position: [f64; 3],
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
}

/// Frames `first_frame..end_frame` of this camera re-use the descriptors of the other
/// camera's frame `t - source_offset`, placed at random pixel positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AliasConfig {
    pub first_frame: u32,
    pub end_frame: u32,
    pub source_offset: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraTrack {
    pub waypoints: Vec<Waypoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<AliasConfig>,
}

impl CameraTrack {
    /// Camera moving on a horizontal circle while its yaw sweeps `sweep_deg` over `frames`.
    pub fn orbit(
        frames: u32,
        center: [f64; 3],
        radius: f64,
        yaw_start_deg: f64,
        sweep_deg: f64,
        n_waypoints: u32,
    ) -> Self {
        let n = n_waypoints.max(2);
        let last = frames.saturating_sub(1).max(1);
        let waypoints = (0..n)
            .map(|i| {
                let frame = (i as u64 * last as u64 / (n - 1) as u64) as u32;
                let s = frame as f64 / last as f64;
                let yaw = yaw_start_deg + sweep_deg * s;
                let theta = yaw.to_radians();
                Waypoint {
                    frame,
                    position: [
                        center[0] + radius * theta.sin(),
                        center[1],
                        center[2] + radius * theta.cos(),
                    ],
                    yaw_deg: yaw,
                    pitch_deg: 0.0,
                }
            })
            .collect();
        CameraTrack {
            waypoints,
            alias: None,
        }
    }

    pub fn pose_at(&self, frame: u32) -> CameraPose {
        let w = &self.waypoints;
        let i = w.partition_point(|p| p.frame <= frame);
        let (a, b, s) = if i == 0 {
            (&w[0], &w[0], 0.0)
        } else if i == w.len() {
            (&w[i - 1], &w[i - 1], 0.0)
        } else {
            let (a, b) = (&w[i - 1], &w[i]);
            (a, b, (frame - a.frame) as f64 / (b.frame - a.frame) as f64)
        };
        let lerp = |x: f64, y: f64| x + (y - x) * s;
        let eye = Vector3::new(
            lerp(a.position[0], b.position[0]),
            lerp(a.position[1], b.position[1]),
            lerp(a.position[2], b.position[2]),
        );
        let yaw = lerp(a.yaw_deg, b.yaw_deg).to_radians();
        let pitch = lerp(a.pitch_deg, b.pitch_deg).to_radians();
        let forward = Vector3::new(pitch.cos() * yaw.sin(), -pitch.sin(), pitch.cos() * yaw.cos());
        CameraPose::look_at(eye, eye + forward, Vector3::new(0.0, -1.0, 0.0))
    }

    fn validate(&self, camera: usize) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Config(format!("cameras[{camera}]: {m}")));
        if self.waypoints.is_empty() {
            return fail("at least one waypoint is required".into());
        }
        if self.waypoints.windows(2).any(|p| p[0].frame >= p[1].frame) {
            return fail("waypoint frames must be strictly increasing".into());
        }
        if self.waypoints.iter().any(|p| {
            !(p.position.iter().all(|v| v.is_finite()) && p.yaw_deg.is_finite() && p.pitch_deg.abs() < 89.0)
        }) {
            return fail("waypoints need finite positions and |pitch_deg| < 89".into());
        }
        if let Some(a) = self.alias {
            if a.first_frame >= a.end_frame || a.source_offset == 0 {
                return fail(format!("invalid alias range {a:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_points: usize,
    pub frames: u32,
    pub epsilon: f64,
    pub max_features: usize,
    pub volume: Volume,
    pub intrinsics: CameraIntrinsics,
    pub cameras: Vec<CameraTrack>,
}

impl Default for SceneConfig {
    /// Two cameras near the middle of a ring of points, both turning a full circle over
    /// 300 frames; the second follows a slightly displaced path.
    fn default() -> Self {
        SceneConfig {
            seed: 1,
            n_points: 2000,
            frames: 300,
            epsilon: 0.02,
            max_features: 1000,
            volume: Volume::Annulus {
                center: [0.0, 0.0, 0.0],
                inner_radius: 8.0,
                outer_radius: 12.0,
                y_min: -4.0,
                y_max: 4.0,
            },
            intrinsics: CameraIntrinsics::default(),
            cameras: vec![
                CameraTrack::orbit(300, [0.0, 0.0, 0.0], 1.0, 0.0, 360.0, 25),
                CameraTrack::orbit(300, [0.3, 0.2, -0.2], 1.0, 4.0, 360.0, 25),
            ],
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| SynthError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_points == 0 {
            return Err(SynthError::NoPoints);
        }
        if self.frames == 0 {
            return Err(SynthError::Config("frames must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(SynthError::FlipProbability(self.epsilon));
        }
        if self.max_features == 0 || self.max_features > u16::MAX as usize {
            return Err(SynthError::Config(format!(
                "max_features {} outside 1..=65535",
                self.max_features
            )));
        }
        self.volume.validate()?;
        self.intrinsics.validate().map_err(SynthError::Config)?;
        if self.cameras.len() != 2 {
            return Err(SynthError::Config(format!(
                "exactly 2 cameras are required, got {}",
                self.cameras.len()
            )));
        }
        for (i, c) in self.cameras.iter().enumerate() {
            c.validate(i)?;
        }
        Ok(())
    }
}

/// One camera's rendered sequence with its oracle data.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSequence {
    pub camera_id: u8,
    pub poses: Vec<(u32, CameraPose)>,
    pub frames: Vec<FrameFeatures>,
    pub ground_truth: GroundTruthTable,
    /// World positions seen in each frame under the true pose.
    pub points: Vec<(u32, Vec<[f64; 3]>)>,
    /// Frames whose features were replaced by re-used descriptors.
    pub aliased: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub world: SyntheticWorld,
    pub cameras: Vec<CameraSequence>,
}

fn frame_seed(seed: u64, camera: usize, frame: u32, purpose: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((camera as u64) << 48) ^ (purpose << 40) ^ frame as u64
}

/// Generates the world and renders both cameras' sequences.
pub fn synthesize(cfg: &SceneConfig) -> Result<Synthesis, SynthError> {
    cfg.validate()?;
    let world = generate_scene(cfg.n_points, &cfg.volume, cfg.seed)?;
    let rendered: Vec<Vec<(CameraPose, RenderedFrame)>> = cfg
        .cameras
        .iter()
        .enumerate()
        .map(|(c, track)| {
            (0..cfg.frames)
                .into_par_iter()
                .map(|t| {
                    let pose = track.pose_at(t);
                    let frame = render_frame(
                        &world,
                        &pose,
                        &cfg.intrinsics,
                        cfg.epsilon,
                        cfg.max_features,
                        t,
                        frame_seed(cfg.seed, c, t, 0),
                    )?;
                    Ok((pose, frame))
                })
                .collect::<Result<Vec<_>, SynthError>>()
        })
        .collect::<Result<_, _>>()?;

    let cameras = cfg
        .cameras
        .iter()
        .enumerate()
        .map(|(c, track)| {
            let other = &rendered[1 - c];
            let mut seq = CameraSequence {
                camera_id: c as u8 + 1,
                poses: Vec::new(),
                frames: Vec::new(),
                ground_truth: GroundTruthTable::default(),
                points: Vec::new(),
                aliased: Vec::new(),
            };
            for (t, (pose, frame)) in rendered[c].iter().enumerate() {
                let t = t as u32;
                seq.poses.push((t, *pose));
                seq.points.push((t, frame.positions(&world)));
                let alias_source = track.alias.and_then(|a| {
                    let in_range = (a.first_frame..a.end_frame).contains(&t);
                    let src = t.checked_sub(a.source_offset)?;
                    (in_range && (src as usize) < other.len()).then_some(src)
                });
                let out = match alias_source {
                    Some(src) => {
                        seq.aliased.push(t);
                        alias_frame(&other[src as usize].1, t, &cfg.intrinsics, frame_seed(cfg.seed, c, t, 1))
                    }
                    None => frame.clone(),
                };
                seq.ground_truth.frames.push((t, out.source_ids.clone()));
                seq.frames.push(out.features);
            }
            seq
        })
        .collect();
    Ok(Synthesis { world, cameras })
}

fn alias_frame(source: &RenderedFrame, frame_index: u32, k: &CameraIntrinsics, seed: u64) -> RenderedFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = source
        .features
        .features
        .iter()
        .map(|f| LocalFeature {
            point: InterestPoint::new(
                rng.gen_range(0.0..k.width as f32),
                rng.gen_range(0.0..k.height as f32),
            ),
            descriptor: f.descriptor,
        })
        .collect();
    RenderedFrame {
        features: FrameFeatures::new(frame_index, features),
        source_ids: source.source_ids.clone(),
    }
}
