//! Ground-truth view-overlap labels from camera poses and observed 3D points.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::FormatError;
use crate::synth::camera::{CameraIntrinsics, CameraPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateParams {
    /// A pair is valid only if its overlap ratio is strictly above this.
    pub overlap_threshold: f64,
    /// A pair is valid only if its optical axes differ by strictly less than this (degrees).
    pub angle_threshold: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for AnnotateParams {
    fn default() -> Self {
        AnnotateParams {
            overlap_threshold: 0.5,
            angle_threshold: 70.0,
            near: 0.1,
            far: 50.0,
        }
    }
}

/// World-frame corners of the camera's viewing volume: four near-plane corners, then the
/// four far-plane corners in the same order.
pub fn frustum_vertices(pose: &CameraPose, k: &CameraIntrinsics, near: f64, far: f64) -> [Vector3<f64>; 8] {
    let (w, h) = (k.width as f64, k.height as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut out = [Vector3::zeros(); 8];
    for (i, &(u, v)) in corners.iter().enumerate() {
        let ray = k.unproject(u, v);
        out[i] = pose.to_world(&(ray * near));
        out[i + 4] = pose.to_world(&(ray * far));
    }
    out
}

const FACES: [[usize; 4]; 6] = [
    [0, 1, 2, 3],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
];

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn separated_along(axis: &Vector3<f64>, a: &[Vector3<f64>; 8], b: &[Vector3<f64>; 8]) -> bool {
    let range = |vs: &[Vector3<f64>; 8]| {
        vs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let d = axis.dot(v);
            (lo.min(d), hi.max(d))
        })
    };
    let (a_lo, a_hi) = range(a);
    let (b_lo, b_hi) = range(b);
    let tol = 1e-9 * (a_hi - a_lo).abs().max((b_hi - b_lo).abs()).max(1.0);
    a_hi < b_lo - tol || b_hi < a_lo - tol
}

/// Whether two convex polyhedra given by frustum vertices overlap (separating-axis test).
pub fn polyhedra_intersect(a: &[Vector3<f64>; 8], b: &[Vector3<f64>; 8]) -> bool {
    let normals = |vs: &[Vector3<f64>; 8]| {
        FACES.map(|f| (vs[f[1]] - vs[f[0]]).cross(&(vs[f[3]] - vs[f[0]])))
    };
    let edges = |vs: &[Vector3<f64>; 8]| EDGES.map(|(i, j)| vs[j] - vs[i]);
    let (ea, eb) = (edges(a), edges(b));
    let face_axes = normals(a).into_iter().chain(normals(b));
    let edge_axes = ea.iter().flat_map(|x| eb.iter().map(move |y| x.cross(y)));
    for axis in face_axes.chain(edge_axes) {
        let n = axis.norm();
        if n < 1e-12 {
            continue;
        }
        if separated_along(&(axis / n), a, b) {
            return false;
        }
    }
    true
}

pub fn frustum_intersects(
    pose_a: &CameraPose,
    pose_b: &CameraPose,
    k: &CameraIntrinsics,
    near: f64,
    far: f64,
) -> bool {
    assert!(0.0 < near && near < far, "need 0 < near < far");
    polyhedra_intersect(
        &frustum_vertices(pose_a, k, near, far),
        &frustum_vertices(pose_b, k, near, far),
    )
}

/// Angle between optical axes (degrees) and distance between camera centers.
pub fn viewpoint_difference(pose_a: &CameraPose, pose_b: &CameraPose) -> (f64, f64) {
    let (u, v) = (pose_a.optical_axis(), pose_b.optical_axis());
    let angle = u.cross(&v).norm().atan2(u.dot(&v)).to_degrees();
    (angle, (pose_a.center() - pose_b.center()).norm())
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain); collinear points are dropped.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    0.5 * twice.abs()
}

/// Fraction of view `b`'s image covered by the convex hull of the in-image projections of
/// `points`.
pub fn overlap_ratio(points: &[[f64; 3]], pose_b: &CameraPose, k: &CameraIntrinsics) -> f64 {
    let projected: Vec<Vector2<f64>> = points
        .iter()
        .filter_map(|p| k.project(&pose_b.to_camera(&Vector3::from(*p))))
        .filter(|px| k.contains(px))
        .collect();
    if projected.len() < 3 {
        return 0.0;
    }
    (polygon_area(&convex_hull(&projected)) / k.area()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapAnnotation {
    pub frame_a: u32,
    pub frame_b: u32,
    #[serde(rename = "intersect")]
    pub frusta_intersect: bool,
    #[serde(rename = "angle_deg")]
    pub angular_distance: f64,
    #[serde(rename = "dist")]
    pub euclidean_distance: f64,
    #[serde(rename = "overlap")]
    pub overlap_ratio: f64,
    pub valid: bool,
}

/// Poses and per-frame observed 3D points of one camera.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosedSequence {
    pub poses: Vec<(u32, CameraPose)>,
    pub points: Vec<(u32, Vec<[f64; 3]>)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotations {
    /// Every pair (camera-a frame, camera-b frame), sorted.
    pub pairs: Vec<OverlapAnnotation>,
    /// Per frame of camera a: whether at least one camera-b frame is a valid partner.
    pub valid_a: BTreeMap<u32, bool>,
    pub valid_b: BTreeMap<u32, bool>,
    /// Frames without a pose, per camera, left out of the table.
    pub excluded_a: Vec<u32>,
    pub excluded_b: Vec<u32>,
}

pub fn annotate_pair(
    frame_a: u32,
    pose_a: &CameraPose,
    points_a: &[[f64; 3]],
    frame_b: u32,
    pose_b: &CameraPose,
    k: &CameraIntrinsics,
    params: &AnnotateParams,
) -> OverlapAnnotation {
    let frusta_intersect = frustum_intersects(pose_a, pose_b, k, params.near, params.far);
    let (angular_distance, euclidean_distance) = viewpoint_difference(pose_a, pose_b);
    let overlap = overlap_ratio(points_a, pose_b, k);
    OverlapAnnotation {
        frame_a,
        frame_b,
        frusta_intersect,
        angular_distance,
        euclidean_distance,
        overlap_ratio: overlap,
        valid: frusta_intersect && overlap > params.overlap_threshold && angular_distance < params.angle_threshold,
    }
}

type PosedFrame<'a> = (u32, CameraPose, &'a [[f64; 3]]);

fn frames_with_pose(seq: &PosedSequence) -> (Vec<PosedFrame<'_>>, Vec<u32>) {
    let points: HashMap<u32, &[[f64; 3]]> = seq.points.iter().map(|(f, p)| (*f, p.as_slice())).collect();
    let mut posed: Vec<_> = seq
        .poses
        .iter()
        .map(|(f, pose)| (*f, *pose, points.get(f).copied().unwrap_or(&[])))
        .collect();
    posed.sort_by_key(|e| e.0);
    let with_pose: BTreeSet<u32> = seq.poses.iter().map(|(f, _)| *f).collect();
    let excluded = seq
        .points
        .iter()
        .map(|(f, _)| *f)
        .filter(|f| !with_pose.contains(f))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    (posed, excluded)
}

/// Labels every frame pair of the two sequences.
pub fn label_pairs(
    a: &PosedSequence,
    b: &PosedSequence,
    k: &CameraIntrinsics,
    params: &AnnotateParams,
) -> Annotations {
    let (fa, excluded_a) = frames_with_pose(a);
    let (fb, excluded_b) = frames_with_pose(b);
    for f in &excluded_a {
        log::warn!("camera a frame {f} has no pose; excluded");
    }
    for f in &excluded_b {
        log::warn!("camera b frame {f} has no pose; excluded");
    }
    let pairs: Vec<OverlapAnnotation> = fa
        .par_iter()
        .flat_map_iter(|(ia, pa, pts)| {
            fb.iter()
                .map(move |(ib, pb, _)| annotate_pair(*ia, pa, pts, *ib, pb, k, params))
        })
        .collect();
    let mut valid_a: BTreeMap<u32, bool> = fa.iter().map(|e| (e.0, false)).collect();
    let mut valid_b: BTreeMap<u32, bool> = fb.iter().map(|e| (e.0, false)).collect();
    for p in pairs.iter().filter(|p| p.valid) {
        valid_a.insert(p.frame_a, true);
        valid_b.insert(p.frame_b, true);
    }
    Annotations {
        pairs,
        valid_a,
        valid_b,
        excluded_a,
        excluded_b,
    }
}

impl Annotations {
    pub fn lookup(&self) -> HashMap<(u32, u32), bool> {
        self.pairs.iter().map(|p| ((p.frame_a, p.frame_b), p.valid)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.valid).count()
    }

    /// Rebuilds the table-derived fields from a pair list.
    pub fn from_pairs(pairs: Vec<OverlapAnnotation>) -> Self {
        let mut valid_a = BTreeMap::new();
        let mut valid_b = BTreeMap::new();
        for p in &pairs {
            *valid_a.entry(p.frame_a).or_insert(false) |= p.valid;
            *valid_b.entry(p.frame_b).or_insert(false) |= p.valid;
        }
        Annotations {
            pairs,
            valid_a,
            valid_b,
            excluded_a: Vec::new(),
            excluded_b: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FormatError> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.pairs {
            out.serialize(p).map_err(crate::io::csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, FormatError> {
        let mut rd = csv::Reader::from_reader(r);
        let pairs = rd
            .deserialize()
            .collect::<Result<Vec<OverlapAnnotation>, _>>()
            .map_err(crate::io::csv_error)?;
        Ok(Self::from_pairs(pairs))
    }

    /// Pair counts: one bin for non-intersecting frusta, then 15° bins of angular distance.
    pub fn angle_histogram(&self) -> Vec<(String, usize)> {
        let mut bins: Vec<(String, usize)> = std::iter::once(("no-intersection".to_string(), 0))
            .chain((0..12).map(|i| (format!("{}-{}", 15 * i, 15 * (i + 1)), 0)))
            .collect();
        for p in &self.pairs {
            let i = if p.frusta_intersect {
                1 + ((p.angular_distance / 15.0).floor() as usize).min(11)
            } else {
                0
            };
            bins[i].1 += 1;
        }
        bins
    }

    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<(), FormatError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin", "count"]).map_err(crate::io::csv_error)?;
        for (bin, count) in self.angle_histogram() {
            out.write_record([bin, count.to_string()]).map_err(crate::io::csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}
