//! Random 3D worlds with identity descriptors, and pinhole rendering of feature frames.

use nalgebra::Vector3;
use rand::distributions::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{hamming_distance, Descriptor, FrameFeatures, InterestPoint, LocalFeature};
use crate::matching::{MatchPair, MatchSet};

use super::camera::{CameraIntrinsics, CameraPose};

/// Minimum pairwise Hamming distance between identity descriptors.
pub const IDENTITY_HAMMING_FLOOR: u32 = 64;
/// Draws allowed per point before generation gives up on the Hamming floor.
pub const IDENTITY_RETRY_BUDGET: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("a world needs at least one point")]
    NoPoints,
    #[error("invalid volume: {0}")]
    Volume(String),
    #[error("could not draw identity descriptor {index} at Hamming distance >= {floor} from the others")]
    HammingFloor { index: usize, floor: u32 },
    #[error("bit flip probability {0} outside [0, 0.5)")]
    FlipProbability(f64),
    #[error("{0}")]
    Config(String),
}

/// Region points are drawn from, uniformly by volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Volume {
    Box { min: [f64; 3], max: [f64; 3] },
    /// Cylindrical shell around the vertical (y) axis through `center`.
    Annulus {
        center: [f64; 3],
        inner_radius: f64,
        outer_radius: f64,
        y_min: f64,
        y_max: f64,
    },
}

impl Volume {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = match *self {
            Volume::Box { min, max } => (0..3).all(|i| min[i] < max[i] && min[i].is_finite() && max[i].is_finite()),
            Volume::Annulus {
                inner_radius,
                outer_radius,
                y_min,
                y_max,
                ..
            } => inner_radius >= 0.0 && inner_radius < outer_radius && y_min < y_max && outer_radius.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::Volume(format!("{self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        match *self {
            Volume::Box { min, max } => Vector3::new(
                rng.gen_range(min[0]..max[0]),
                rng.gen_range(min[1]..max[1]),
                rng.gen_range(min[2]..max[2]),
            ),
            Volume::Annulus {
                center,
                inner_radius,
                outer_radius,
                y_min,
                y_max,
            } => {
                let r2 = rng.gen_range(inner_radius * inner_radius..outer_radius * outer_radius);
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = r2.sqrt();
                Vector3::new(
                    center[0] + r * theta.cos(),
                    center[1] + rng.gen_range(y_min..y_max),
                    center[2] + r * theta.sin(),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub position: Vector3<f64>,
    pub identity: Descriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub points: Vec<WorldPoint>,
    pub seed: u64,
}

/// Uniform points in `volume` with identity descriptors pairwise at least
/// [`IDENTITY_HAMMING_FLOOR`] bits apart.
pub fn generate_scene(n_points: usize, volume: &Volume, seed: u64) -> Result<SyntheticWorld, SynthError> {
    if n_points == 0 {
        return Err(SynthError::NoPoints);
    }
    volume.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<WorldPoint> = Vec::with_capacity(n_points);
    for index in 0..n_points {
        let position = volume.sample(&mut rng);
        let identity = (0..IDENTITY_RETRY_BUDGET)
            .map(|_| Descriptor::from_words(rng.gen()))
            .find(|d| {
                points
                    .iter()
                    .all(|p| hamming_distance(&p.identity, d) >= IDENTITY_HAMMING_FLOOR)
            })
            .ok_or(SynthError::HammingFloor {
                index,
                floor: IDENTITY_HAMMING_FLOOR,
            })?;
        points.push(WorldPoint { position, identity });
    }
    Ok(SyntheticWorld { points, seed })
}

/// A rendered frame together with the world point behind each feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub features: FrameFeatures,
    pub source_ids: Vec<u32>,
}

impl RenderedFrame {
    /// World positions of the observed points, in feature order.
    pub fn positions(&self, world: &SyntheticWorld) -> Vec<[f64; 3]> {
        self.source_ids
            .iter()
            .map(|&id| world.points[id as usize].position.into())
            .collect()
    }
}

/// Projects every point in front of the camera and inside the image, keeps the
/// `max_features` nearest, and flips each descriptor bit with probability `flip_prob`.
pub fn render_frame(
    world: &SyntheticWorld,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    flip_prob: f64,
    max_features: usize,
    frame_index: u32,
    seed: u64,
) -> Result<RenderedFrame, SynthError> {
    if !(0.0..0.5).contains(&flip_prob) {
        return Err(SynthError::FlipProbability(flip_prob));
    }
    let mut visible: Vec<(f64, u32, InterestPoint)> = world
        .points
        .iter()
        .enumerate()
        .filter_map(|(id, p)| {
            let cam = pose.to_camera(&p.position);
            let px = intrinsics.project(&cam)?;
            let point = InterestPoint::new(px.x as f32, px.y as f32);
            // bounds are checked after rounding so stored coordinates stay in the image
            let inside = point.is_finite()
                && point.x >= 0.0
                && point.y >= 0.0
                && (point.x as f64) < intrinsics.width as f64
                && (point.y as f64) < intrinsics.height as f64;
            inside.then_some((cam.z, id as u32, point))
        })
        .collect();
    visible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    visible.truncate(max_features);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = Bernoulli::new(flip_prob).expect("probability checked above");
    let mut features = Vec::with_capacity(visible.len());
    let mut source_ids = Vec::with_capacity(visible.len());
    for (_, id, point) in visible {
        let mut descriptor = world.points[id as usize].identity;
        if flip_prob > 0.0 {
            for bit in 0..crate::features::DESCRIPTOR_BITS {
                if flip.sample(&mut rng) {
                    descriptor.flip_bit(bit);
                }
            }
        }
        features.push(LocalFeature { point, descriptor });
        source_ids.push(id);
    }
    Ok(RenderedFrame {
        features: FrameFeatures::new(frame_index, features),
        source_ids,
    })
}

/// Pairs of observations in `a` and `b` of the same world point.
pub fn ground_truth_matches(a: &RenderedFrame, b: &RenderedFrame) -> MatchSet {
    let in_b: std::collections::HashMap<u32, usize> = b
        .source_ids
        .iter()
        .enumerate()
        .map(|(j, &id)| (id, j))
        .collect();
    let pairs = a
        .source_ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| {
            let &j = in_b.get(id)?;
            Some(MatchPair {
                query_index: i as u32,
                candidate_index: j as u32,
                distance: hamming_distance(
                    &a.features.features[i].descriptor,
                    &b.features.features[j].descriptor,
                ),
            })
        })
        .collect();
    MatchSet { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FundamentalMatrix;
    use nalgebra::{Matrix3, Vector2};
    use proptest::prelude::*;

    fn cube() -> Volume {
        Volume::Box {
            min: [-5.0, -3.0, 5.0],
            max: [5.0, 3.0, 15.0],
        }
    }

    #[test]
    fn single_point_world() {
        let w = generate_scene(1, &cube(), 3).unwrap();
        assert_eq!(w.points.len(), 1);
        assert_eq!(generate_scene(0, &cube(), 3), Err(SynthError::NoPoints));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_scene(50, &cube(), 4), generate_scene(50, &cube(), 4));
        assert_ne!(generate_scene(50, &cube(), 4), generate_scene(50, &cube(), 5));
    }

    #[test]
    fn hamming_floor_holds_for_500_points() {
        let w = generate_scene(500, &cube(), 6).unwrap();
        for i in 0..w.points.len() {
            for j in i + 1..w.points.len() {
                assert!(hamming_distance(&w.points[i].identity, &w.points[j].identity) >= 64);
            }
        }
    }

    #[test]
    fn annulus_points_lie_in_the_shell() {
        let v = Volume::Annulus {
            center: [1.0, 0.0, -2.0],
            inner_radius: 8.0,
            outer_radius: 12.0,
            y_min: -4.0,
            y_max: 4.0,
        };
        for p in generate_scene(300, &v, 1).unwrap().points {
            let r = (p.position.x - 1.0).hypot(p.position.z + 2.0);
            assert!((8.0..12.0).contains(&r), "{r}");
            assert!((-4.0..4.0).contains(&p.position.y));
        }
    }

    #[test]
    fn noiseless_render_keeps_identities() {
        let w = generate_scene(400, &cube(), 7).unwrap();
        let k = CameraIntrinsics::default();
        let f = render_frame(&w, &CameraPose::identity(), &k, 0.0, 1000, 3, 1).unwrap();
        assert!(!f.features.is_empty());
        assert_eq!(f.features.frame_index, 3);
        for (feat, &id) in f.features.features.iter().zip(&f.source_ids) {
            assert_eq!(feat.descriptor, w.points[id as usize].identity);
            assert!(feat.point.x >= 0.0 && (feat.point.x as f64) < 640.0);
            assert!(feat.point.y >= 0.0 && (feat.point.y as f64) < 480.0);
        }
    }

    #[test]
    fn truncation_keeps_nearest() {
        let w = generate_scene(400, &cube(), 8).unwrap();
        let k = CameraIntrinsics::default();
        let pose = CameraPose::identity();
        let all = render_frame(&w, &pose, &k, 0.0, 1000, 0, 1).unwrap();
        let few = render_frame(&w, &pose, &k, 0.0, 10, 0, 1).unwrap();
        assert_eq!(few.source_ids, all.source_ids[..10]);
        let depth = |id: u32| w.points[id as usize].position.z;
        let cutoff = depth(few.source_ids[9]);
        assert!(all.source_ids[10..].iter().all(|&id| depth(id) >= cutoff));
    }

    #[test]
    fn noisy_observation_is_nearest_to_its_identity() {
        let w = generate_scene(300, &cube(), 9).unwrap();
        let k = CameraIntrinsics::default();
        let mut misses = 0;
        let mut total = 0;
        for seed in 0..20 {
            let f = render_frame(&w, &CameraPose::identity(), &k, 0.05, 1000, 0, seed).unwrap();
            for (feat, &id) in f.features.features.iter().zip(&f.source_ids) {
                let own = hamming_distance(&feat.descriptor, &w.points[id as usize].identity);
                let nearest_other = w
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j as u32 != id)
                    .map(|(_, p)| hamming_distance(&feat.descriptor, &p.identity))
                    .min()
                    .unwrap();
                total += 1;
                if own >= nearest_other {
                    misses += 1;
                }
            }
        }
        assert!(total > 1000);
        assert_eq!(misses, 0);
    }

    #[test]
    fn ground_truth_matches_co_visible_points() {
        let w = generate_scene(500, &cube(), 10).unwrap();
        let k = CameraIntrinsics::default();
        let a_pose = CameraPose::identity();
        let b_pose = CameraPose::look_at(
            Vector3::new(3.0, 0.0, 0.0),
            Vector3::new(3.0, 0.0, 10.0),
            Vector3::new(0.0, -1.0, 0.0),
        );
        let a = render_frame(&w, &a_pose, &k, 0.0, 1000, 0, 1).unwrap();
        let b = render_frame(&w, &b_pose, &k, 0.0, 1000, 0, 2).unwrap();
        let gt = ground_truth_matches(&a, &b);
        let expected: std::collections::BTreeSet<u32> = a
            .source_ids
            .iter()
            .filter(|id| b.source_ids.contains(id))
            .copied()
            .collect();
        let got: std::collections::BTreeSet<u32> =
            gt.iter().map(|p| a.source_ids[p.query_index as usize]).collect();
        assert_eq!(got, expected);
        assert!(!got.is_empty() && got.len() < a.source_ids.len());

        let same = ground_truth_matches(&a, &a);
        assert_eq!(same.len(), a.source_ids.len());

        let away = CameraPose::look_at(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -10.0),
            Vector3::new(0.0, -1.0, 0.0),
        );
        let c = render_frame(&w, &away, &k, 0.0, 1000, 0, 3).unwrap();
        assert!(c.features.is_empty());
        assert!(ground_truth_matches(&a, &c).is_empty());
    }

    /// F from the relative pose: `[t]ₓ R` in normalized coordinates mapped through K.
    fn true_fundamental(k: &CameraIntrinsics, q: &CameraPose, m: &CameraPose) -> FundamentalMatrix {
        // x_q = R_rel x_m + t_rel
        let r = q.rotation * m.rotation.transpose();
        let t = q.translation - r * m.translation;
        let tx = Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
        let kinv = k.matrix().try_inverse().unwrap();
        FundamentalMatrix::canonical(kinv.transpose() * tx * r * kinv).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rendered_correspondences_satisfy_true_geometry(seed in 0u64..1000, dx in -2.0f64..2.0, dy in -1.0f64..1.0) {
            let w = generate_scene(300, &cube(), seed).unwrap();
            let k = CameraIntrinsics::default();
            let up = Vector3::new(0.0, -1.0, 0.0);
            let q_pose = CameraPose::look_at(Vector3::zeros(), Vector3::new(0.0, 0.0, 10.0), up);
            let m_pose = CameraPose::look_at(Vector3::new(dx, dy, 0.5), Vector3::new(0.0, 0.0, 10.0), up);
            let a = render_frame(&w, &q_pose, &k, 0.0, 1000, 0, 1).unwrap();
            let b = render_frame(&w, &m_pose, &k, 0.0, 1000, 0, 1).unwrap();
            let f = true_fundamental(&k, &q_pose, &m_pose);
            for p in ground_truth_matches(&a, &b).iter() {
                // exact projections in f64, before the f32 storage rounding
                let id = a.source_ids[p.query_index as usize] as usize;
                let x = w.points[id].position;
                let q = k.project(&q_pose.to_camera(&x)).unwrap();
                let m = k.project(&m_pose.to_camera(&x)).unwrap();
                let e = crate::geometry::epipolar_error(&f, &q, &m);
                prop_assert!(e <= 1e-6, "error {}", e);
                let stored = &a.features.features[p.query_index as usize].point;
                prop_assert!((Vector2::new(stored.x as f64, stored.y as f64) - q).norm() < 1e-3);
            }
            prop_assert!(a.features.len() <= 1000);
        }
    }
}
