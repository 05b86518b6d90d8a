//! Binary and text file formats: frame-feature sequences (`XVFF`), ground-truth side
//! tables (`XVGT`), pose lists and per-frame 3D point lists.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::{Descriptor, FrameFeatures, InterestPoint, LocalFeature};
use crate::synth::camera::CameraPose;

pub const FEATURES_MAGIC: &[u8; 4] = b"XVFF";
pub const FEATURES_VERSION: u16 = 1;
pub const GROUND_TRUTH_MAGIC: &[u8; 4] = b"XVGT";
pub const GROUND_TRUTH_VERSION: u16 = 1;

/// Serialized size of one local feature: two f32 coordinates and a 32-byte descriptor.
pub const FEATURE_RECORD_BYTES: usize = 40;
/// Serialized size of a frame header: frame index (u32) and feature count (u16).
pub const FRAME_HEADER_BYTES: usize = 6;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("input truncated")]
    Truncated,
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },
    #[error("frame has {count} features, more than the maximum {max}")]
    TooManyFeatures { count: usize, max: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn eof_as_truncated(e: std::io::Error) -> FormatError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        FormatError::Truncated
    } else {
        FormatError::Io(e)
    }
}

pub(crate) fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], FormatError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(buf)
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8, FormatError> {
    Ok(read_array::<1, _>(r)?[0])
}

pub(crate) fn read_u16<R: Read>(r: &mut R) -> Result<u16, FormatError> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> Result<f32, FormatError> {
    Ok(f32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64, FormatError> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4], version: u16) -> Result<(), FormatError> {
    let found: [u8; 4] = read_array(r)?;
    if &found != magic {
        return Err(FormatError::BadMagic {
            expected: *magic,
            found,
        });
    }
    let v = read_u16(r)?;
    if v != version {
        return Err(FormatError::Version {
            expected: version,
            found: v,
        });
    }
    Ok(())
}

/// Appends one frame (index, count, then `(x, y, descriptor)` records) to `out`.
pub fn encode_frame(frame: &FrameFeatures, out: &mut Vec<u8>) {
    assert!(
        frame.len() <= u16::MAX as usize,
        "a frame holds at most 65535 features"
    );
    out.reserve(FRAME_HEADER_BYTES + FEATURE_RECORD_BYTES * frame.len());
    out.extend_from_slice(&frame.frame_index.to_le_bytes());
    out.extend_from_slice(&(frame.len() as u16).to_le_bytes());
    for f in &frame.features {
        out.extend_from_slice(&f.point.x.to_le_bytes());
        out.extend_from_slice(&f.point.y.to_le_bytes());
        out.extend_from_slice(&f.descriptor.to_bytes());
    }
}

/// Reads one frame, rejecting frames with more than `max_features` features.
pub fn decode_frame<R: Read>(r: &mut R, max_features: usize) -> Result<FrameFeatures, FormatError> {
    let frame_index = read_u32(r)?;
    let count = read_u16(r)? as usize;
    if count > max_features {
        return Err(FormatError::TooManyFeatures {
            count,
            max: max_features,
        });
    }
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let x = read_f32(r)?;
        let y = read_f32(r)?;
        let point = InterestPoint::new(x, y);
        if !point.is_finite() {
            return Err(FormatError::Invalid(format!(
                "frame {frame_index}: non-finite interest point"
            )));
        }
        let descriptor = Descriptor::from_bytes(&read_array(r)?);
        features.push(LocalFeature { point, descriptor });
    }
    Ok(FrameFeatures::new(frame_index, features))
}

pub fn encode_sequence(frames: &[FrameFeatures]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&FEATURES_VERSION.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        encode_frame(f, &mut out);
    }
    out
}

pub fn decode_sequence<R: Read>(mut r: R) -> Result<Vec<FrameFeatures>, FormatError> {
    expect_header(&mut r, FEATURES_MAGIC, FEATURES_VERSION)?;
    let count = read_u32(&mut r)?;
    (0..count)
        .map(|_| decode_frame(&mut r, u16::MAX as usize))
        .collect()
}

pub fn write_sequence(path: &Path, frames: &[FrameFeatures]) -> Result<(), FormatError> {
    std::fs::write(path, encode_sequence(frames))?;
    Ok(())
}

pub fn read_sequence(path: &Path) -> Result<Vec<FrameFeatures>, FormatError> {
    decode_sequence(BufReader::new(File::open(path)?))
}

/// Source-point ids of every observation, per frame, in feature order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruthTable {
    pub frames: Vec<(u32, Vec<u32>)>,
}

impl GroundTruthTable {
    pub fn ids_for(&self, frame_index: u32) -> Option<&[u32]> {
        self.frames
            .iter()
            .find(|(f, _)| *f == frame_index)
            .map(|(_, ids)| ids.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(GROUND_TRUTH_MAGIC);
        out.extend_from_slice(&GROUND_TRUTH_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for (frame, ids) in &self.frames {
            out.extend_from_slice(&frame.to_le_bytes());
            out.extend_from_slice(&(ids.len() as u16).to_le_bytes());
            for id in ids {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FormatError> {
        expect_header(&mut r, GROUND_TRUTH_MAGIC, GROUND_TRUTH_VERSION)?;
        let count = read_u32(&mut r)?;
        let mut frames = Vec::new();
        for _ in 0..count {
            let frame = read_u32(&mut r)?;
            let n = read_u16(&mut r)?;
            let ids = (0..n).map(|_| read_u32(&mut r)).collect::<Result<_, _>>()?;
            frames.push((frame, ids));
        }
        Ok(GroundTruthTable { frames })
    }
}

/// Writes poses as `frame_index qw qx qy qz tx ty tz`, one per line.
///
/// The quaternion and translation describe the world-to-camera transform.
pub fn write_poses(path: &Path, poses: &[(u32, CameraPose)]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# frame_index qw qx qy qz tx ty tz (world-to-camera)")?;
    for (frame, pose) in poses {
        let q = pose.quaternion();
        let t = pose.translation;
        writeln!(
            w,
            "{frame} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            q[0], q[1], q[2], q[3], t[0], t[1], t[2]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_poses<R: BufRead>(r: R) -> Result<Vec<(u32, CameraPose)>, FormatError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| FormatError::Parse {
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let frame: u32 = fields[0]
            .parse()
            .map_err(|e| err(format!("frame index: {e}")))?;
        let mut v = [0.0f64; 7];
        for (slot, s) in v.iter_mut().zip(&fields[1..]) {
            *slot = s.parse().map_err(|e| err(format!("{s:?}: {e}")))?;
        }
        let pose = CameraPose::from_quaternion([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]])
            .ok_or_else(|| err("zero quaternion".into()))?;
        out.push((frame, pose));
    }
    Ok(out)
}

pub fn read_poses(path: &Path) -> Result<Vec<(u32, CameraPose)>, FormatError> {
    parse_poses(BufReader::new(File::open(path)?))
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct PointRow {
    frame_index: u32,
    x: f64,
    y: f64,
    z: f64,
}

/// Writes per-frame 3D points as CSV `frame_index,x,y,z`.
pub fn write_frame_points(path: &Path, frames: &[(u32, Vec<[f64; 3]>)]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for (frame, points) in frames {
        for p in points {
            w.serialize(PointRow {
                frame_index: *frame,
                x: p[0],
                y: p[1],
                z: p[2],
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads per-frame 3D points, grouped by frame index in ascending order.
/// Visible 3D points per frame index.
pub type FramePoints = Vec<(u32, Vec<[f64; 3]>)>;

pub fn read_frame_points(path: &Path) -> Result<FramePoints, FormatError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let mut grouped: std::collections::BTreeMap<u32, Vec<[f64; 3]>> = Default::default();
    for row in r.deserialize::<PointRow>() {
        let row = row.map_err(csv_error)?;
        grouped
            .entry(row.frame_index)
            .or_default()
            .push([row.x, row.y, row.z]);
    }
    Ok(grouped.into_iter().collect())
}

pub(crate) fn csv_error(e: csv::Error) -> FormatError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FormatError::Io(io),
        other => FormatError::Invalid(format!("csv: {other:?}")),
    }
}
