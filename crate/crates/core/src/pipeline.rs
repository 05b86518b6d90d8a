//! End-to-end workflows: synthesize, train a vocabulary, run both peers, annotate and
//! score, plus the run manifest that ties outputs to their inputs.

use std::collections::BTreeMap;
use std::fs;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{label_pairs, AnnotateParams, Annotations, PosedSequence};
use crate::config::{ConfigError, PeerConfig};
use crate::eval::{score_run, EvalError, PairReport, RunScore};
use crate::features::{Descriptor, FrameFeatures};
use crate::io::{write_frame_points, write_poses, write_sequence, FormatError};
use crate::protocol::{duplex_pipe, run_peer, Endpoint, PeerError, RecognitionLog, SessionOptions};
use crate::registry::{Strategies, StrategyRegistry, UnknownStrategy};
use crate::synth::{synthesize, CameraSequence, SceneConfig, SynthError, Synthesis};
use crate::vocab::{build_vocabulary, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Peer(#[from] PeerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabParams {
    pub branching_factor: usize,
    pub depth: usize,
    pub seed: u64,
    /// Every `frame_stride`-th frame of each sequence contributes to the training corpus.
    pub frame_stride: usize,
}

impl Default for VocabParams {
    fn default() -> Self {
        VocabParams {
            branching_factor: 10,
            depth: 6,
            seed: 0,
            frame_stride: 5,
        }
    }
}

/// Descriptors of every `stride`-th frame of each sequence.
pub fn vocabulary_corpus(sequences: &[&[FrameFeatures]], stride: usize) -> Vec<Descriptor> {
    let stride = stride.max(1);
    sequences
        .iter()
        .flat_map(|seq| seq.iter().step_by(stride))
        .flat_map(|f| f.descriptors().copied())
        .collect()
}

pub fn train_vocabulary(sequences: &[&[FrameFeatures]], params: &VocabParams) -> Result<Vocabulary, VocabError> {
    let corpus = vocabulary_corpus(sequences, params.frame_stride);
    build_vocabulary(&corpus, params.branching_factor, params.depth, params.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// In-process byte pipe.
    #[default]
    Pipe,
    /// TCP over the given address (port 0 picks a free port).
    Tcp(SocketAddr),
}

/// Both peers' outcomes; a failed session still carries its partial log.
pub struct PairLogs {
    pub cam1: Result<RecognitionLog, PeerError>,
    pub cam2: Result<RecognitionLog, PeerError>,
}

impl PairLogs {
    /// The two logs, partial ones included, or `None` if a peer never started.
    pub fn logs(&self) -> Option<(RecognitionLog, RecognitionLog)> {
        let get = |r: &Result<RecognitionLog, PeerError>| match r {
            Ok(l) => Some(l.clone()),
            Err(e) => e.log().cloned(),
        };
        Some((get(&self.cam1)?, get(&self.cam2)?))
    }

    pub fn complete(&self) -> bool {
        self.cam1.is_ok() && self.cam2.is_ok()
    }
}

const TCP_TIMEOUT: Duration = Duration::from_secs(120);

fn tcp_pair(addr: SocketAddr) -> std::io::Result<(Endpoint, Endpoint)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let connector = thread::spawn(move || TcpStream::connect(local));
    let (server, _) = listener.accept()?;
    let client = connector.join().expect("connect thread")?;
    for s in [&server, &client] {
        s.set_read_timeout(Some(TCP_TIMEOUT))?;
    }
    Ok((Endpoint::from_tcp(server)?, Endpoint::from_tcp(client)?))
}

/// Runs both cameras concurrently over one channel.
#[allow(clippy::too_many_arguments)]
pub fn run_pair(
    cfg1: &PeerConfig,
    cfg2: &PeerConfig,
    vocabulary: &Vocabulary,
    strategies: &Strategies,
    seq1: Vec<FrameFeatures>,
    seq2: Vec<FrameFeatures>,
    transport: Transport,
    options: [&SessionOptions; 2],
) -> Result<PairLogs, PipelineError> {
    let (e1, e2) = match transport {
        Transport::Pipe => duplex_pipe(),
        Transport::Tcp(addr) => tcp_pair(addr)?,
    };
    Ok(thread::scope(|s| {
        let h2 = s.spawn(|| run_peer(cfg2, vocabulary, strategies, seq2, e2, options[1]));
        let cam1 = run_peer(cfg1, vocabulary, strategies, seq1, e1, options[0]);
        PairLogs {
            cam1,
            cam2: h2.join().expect("peer thread panicked"),
        }
    }))
}

pub fn posed_sequence(seq: &CameraSequence) -> PosedSequence {
    PosedSequence {
        poses: seq.poses.clone(),
        points: seq.points.clone(),
    }
}

pub fn annotate_synthesis(synth: &Synthesis, scene: &SceneConfig, params: &AnnotateParams) -> Annotations {
    label_pairs(
        &posed_sequence(&synth.cameras[0]),
        &posed_sequence(&synth.cameras[1]),
        &scene.intrinsics,
        params,
    )
}

/// Everything a full synthetic experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub pair_name: String,
    /// Repetitions of the peer session.
    pub runs: usize,
    /// Give every repetition its own RANSAC seed (`peer.seed + run`).
    pub vary_seeds: bool,
    pub scene: SceneConfig,
    pub vocab: VocabParams,
    pub peer: PeerConfig,
    pub annotate: AnnotateParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pair_name: "synthetic".into(),
            runs: 1,
            vary_seeds: false,
            scene: SceneConfig::default(),
            vocab: VocabParams::default(),
            peer: PeerConfig::default(),
            annotate: AnnotateParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(ConfigError::Parse(e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.runs == 0 {
            return Err(PipelineError::Invalid("runs must be at least 1".into()));
        }
        self.scene.validate()?;
        self.peer.validate()?;
        Ok(())
    }

    /// Peer configuration of `camera_id` for repetition `run`.
    pub fn peer_for(&self, camera_id: u8, run: usize) -> PeerConfig {
        let mut cfg = self.peer.with_camera(camera_id);
        if self.vary_seeds {
            cfg.seed = cfg.seed.wrapping_add(run as u64);
        }
        cfg
    }
}

pub struct PipelineOutput {
    pub synthesis: Synthesis,
    pub vocabulary: Vocabulary,
    pub annotations: Annotations,
    pub logs: Vec<(RecognitionLog, RecognitionLog)>,
    pub report: PairReport,
}

/// Runs the whole experiment in memory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let synthesis = synthesize(&cfg.scene)?;
    let seqs: Vec<&[FrameFeatures]> = synthesis.cameras.iter().map(|c| c.frames.as_slice()).collect();
    let vocabulary = train_vocabulary(&seqs, &cfg.vocab)?;
    let annotations = annotate_synthesis(&synthesis, &cfg.scene, &cfg.annotate);
    let strategies = StrategyRegistry::builtin().resolve(&cfg.peer.strategies)?;
    let mut logs = Vec::with_capacity(cfg.runs);
    let mut scores: Vec<RunScore> = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let pair = run_pair(
            &cfg.peer_for(1, run),
            &cfg.peer_for(2, run),
            &vocabulary,
            &strategies,
            synthesis.cameras[0].frames.clone(),
            synthesis.cameras[1].frames.clone(),
            Transport::Pipe,
            [&SessionOptions::default(), &SessionOptions::default()],
        )?;
        let (l1, l2) = (pair.cam1?, pair.cam2?);
        scores.push(score_run(run, &l1, &l2, &annotations)?);
        logs.push((l1, l2));
    }
    let report = PairReport::new(cfg.pair_name.clone(), scores)?;
    Ok(PipelineOutput {
        synthesis,
        vocabulary,
        annotations,
        logs,
        report,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path relative to the output directory, or as given for inputs.
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, shown_as: impl Into<String>) -> std::io::Result<Self> {
        Ok(FileDigest {
            path: shown_as.into(),
            sha256: sha256_hex(&fs::read(path)?),
        })
    }
}

/// Record of one command invocation. The hash covers everything except `outputs`, so
/// outputs can carry it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    /// Effective configuration, serialized.
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub manifest_hash: String,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, seeds: BTreeMap<String, u64>, config: String, inputs: Vec<FileDigest>) -> Self {
        let mut m = RunManifest {
            tool: "xview".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seeds,
            config,
            inputs,
            manifest_hash: String::new(),
            outputs: Vec::new(),
        };
        let hashed = serde_json::json!({
            "tool": m.tool,
            "version": m.version,
            "command": m.command,
            "seeds": m.seeds,
            "config": m.config,
            "inputs": m.inputs,
        });
        m.manifest_hash = sha256_hex(hashed.to_string().as_bytes());
        m
    }

    /// Hashes `out_dir/name` and lists it as an output.
    pub fn add_output(&mut self, out_dir: &Path, name: &str) -> std::io::Result<()> {
        self.outputs.push(FileDigest::of(&out_dir.join(name), name)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let path = out_dir.join(format!("manifest-{}.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes") + "\n")?;
        Ok(path)
    }
}

/// File names written for camera `id` (1 or 2) by [`write_synthesis`].
pub fn sequence_file(id: u8) -> String {
    format!("cam{id}.xvff")
}

pub fn ground_truth_file(id: u8) -> String {
    format!("cam{id}.xvgt")
}

pub fn poses_file(id: u8) -> String {
    format!("cam{id}_poses.txt")
}

pub fn points_file(id: u8) -> String {
    format!("cam{id}_points.csv")
}

pub fn log_file(id: u8) -> String {
    format!("cam{id}.log.json")
}

pub const SCENE_FILE: &str = "scene.toml";
pub const WORLD_FILE: &str = "world.csv";
pub const VOCAB_FILE: &str = "vocab.xvvc";
pub const ANNOTATION_FILE: &str = "annotations.csv";
pub const HISTOGRAM_FILE: &str = "angle_histogram.csv";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Serialize)]
struct WorldRow {
    id: usize,
    x: f64,
    y: f64,
    z: f64,
    identity: String,
}

/// Writes the scene description, world points and both cameras' files; returns their names.
pub fn write_synthesis(out_dir: &Path, synth: &Synthesis, scene: &SceneConfig) -> Result<Vec<String>, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let mut names = vec![SCENE_FILE.to_string(), WORLD_FILE.to_string()];
    fs::write(out_dir.join(SCENE_FILE), scene.to_toml())?;
    let mut w = csv::Writer::from_path(out_dir.join(WORLD_FILE)).map_err(crate::io::csv_error)?;
    for (id, p) in synth.world.points.iter().enumerate() {
        w.serialize(WorldRow {
            id,
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            identity: hex::encode(p.identity.to_bytes()),
        })
        .map_err(crate::io::csv_error)?;
    }
    w.flush()?;
    for cam in &synth.cameras {
        let id = cam.camera_id;
        write_sequence(&out_dir.join(sequence_file(id)), &cam.frames)?;
        fs::write(out_dir.join(ground_truth_file(id)), cam.ground_truth.to_bytes())?;
        write_poses(&out_dir.join(poses_file(id)), &cam.poses)?;
        write_frame_points(&out_dir.join(points_file(id)), &cam.points)?;
        names.extend([sequence_file(id), ground_truth_file(id), poses_file(id), points_file(id)]);
    }
    Ok(names)
}

pub fn write_log(path: &Path, log: &RecognitionLog) -> std::io::Result<()> {
    fs::write(path, log.to_json() + "\n")
}

pub fn write_annotations(out_dir: &Path, ann: &Annotations) -> Result<Vec<String>, PipelineError> {
    ann.write_csv(fs::File::create(out_dir.join(ANNOTATION_FILE))?)?;
    ann.write_histogram_csv(fs::File::create(out_dir.join(HISTOGRAM_FILE))?)?;
    Ok(vec![ANNOTATION_FILE.into(), HISTOGRAM_FILE.into()])
}

/// Runs the experiment and writes every artifact plus `manifest-pipeline.json`.
pub fn write_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunManifest, PipelineError> {
    let out = run_pipeline(cfg)?;
    fs::create_dir_all(out_dir)?;
    let seeds = BTreeMap::from([
        ("scene".to_string(), cfg.scene.seed),
        ("vocab".to_string(), cfg.vocab.seed),
        ("peer".to_string(), cfg.peer.seed),
    ]);
    let mut manifest = RunManifest::new("pipeline", seeds, cfg.to_toml(), Vec::new());
    let mut names = write_synthesis(out_dir, &out.synthesis, &cfg.scene)?;
    fs::write(out_dir.join(VOCAB_FILE), out.vocabulary.to_bytes())?;
    names.push(VOCAB_FILE.into());
    for (run, (l1, l2)) in out.logs.iter().enumerate() {
        let dir = format!("run{run:02}");
        fs::create_dir_all(out_dir.join(&dir))?;
        for (id, log) in [(1u8, l1), (2u8, l2)] {
            let mut log = log.clone();
            log.manifest = Some(manifest.manifest_hash.clone());
            let name = format!("{dir}/{}", log_file(id));
            write_log(&out_dir.join(&name), &log)?;
            names.push(name);
        }
    }
    names.extend(write_annotations(out_dir, &out.annotations)?);
    write_report(&out_dir.join(REPORT_FILE), &out.report, &manifest.manifest_hash)?;
    names.push(REPORT_FILE.into());
    for n in &names {
        manifest.add_output(out_dir, n)?;
    }
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Writes the report CSV with a trailing `manifest` column holding the manifest hash.
pub fn write_report(path: &Path, report: &PairReport, manifest_hash: &str) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    let mut out = String::with_capacity(text.len() + 80 * report.runs.len());
    for (i, line) in text.lines().enumerate() {
        out.push_str(line);
        out.push(',');
        out.push_str(if i == 0 { "manifest" } else { manifest_hash });
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
