//! `xview` command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use xview::annotate::{label_pairs, AnnotateParams, Annotations, PosedSequence};
use xview::config::ConfigError;
use xview::eval::{score_run, PairReport};
use xview::io::{read_frame_points, read_poses, read_sequence, FormatError};
use xview::pipeline::{
    log_file, points_file, poses_file, run_pair, train_vocabulary, write_annotations, write_log, write_pipeline,
    write_report, write_synthesis, FileDigest, PipelineConfig, PipelineError, RunManifest, Transport, VocabParams,
    REPORT_FILE, SCENE_FILE, VOCAB_FILE,
};
use xview::protocol::{run_peer, Endpoint, PeerError, RecognitionLog, SessionOptions};
use xview::synth::{synthesize, SceneConfig};
use xview::{FrameFeatures, PeerConfig, StrategyRegistry, Vocabulary};

#[derive(Parser)]
#[command(name = "xview", version, about = "Cross-camera view-overlap recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the command's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and the two cameras' sequences and ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a vocabulary from sequence files.
    Vocab {
        #[command(flatten)]
        common: Common,
        /// Sequence files forming the training corpus.
        #[arg(long = "sequence", required = true)]
        sequences: Vec<PathBuf>,
        #[arg(long)]
        branching_factor: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Run both peers concurrently and write their recognition logs.
    RunPair {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seq1: PathBuf,
        #[arg(long)]
        seq2: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Peer configuration for camera 2 (defaults to --config).
        #[arg(long)]
        config2: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Add the run index to the seed of every repetition.
        #[arg(long)]
        vary_seeds: bool,
        #[arg(long, value_enum, default_value_t = TransportKind::Pipe)]
        transport: TransportKind,
        /// TCP address to listen on (port 0 picks a free port).
        #[arg(long, default_value = "127.0.0.1:0")]
        endpoint: SocketAddr,
        /// Kill a peer after some rounds, as CAMERA:ROUNDS (e.g. 2:40).
        #[arg(long, value_parser = parse_abort)]
        abort: Option<(u8, u32)>,
    },
    /// Label every cross-camera frame pair from poses and observed points.
    Annotate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `synth` (poses, points and scene.toml).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        overlap_threshold: Option<f64>,
        #[arg(long)]
        angle_threshold: Option<f64>,
    },
    /// Score recognition logs against annotations.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotations: PathBuf,
        /// Directory with run*/cam1.log.json and run*/cam2.log.json.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value = "pair")]
        pair: String,
    },
    /// Run one peer over TCP.
    Peer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        camera: u8,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, conflicts_with = "connect", required_unless_present = "connect")]
        listen: Option<SocketAddr>,
        #[arg(long)]
        connect: Option<SocketAddr>,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 30)]
        wait: u64,
    },
    /// Synthesis, vocabulary, peer runs, annotation and evaluation in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Pipe,
    Tcp,
}

fn parse_abort(s: &str) -> Result<(u8, u32), String> {
    let (cam, rounds) = s.split_once(':').ok_or("expected CAMERA:ROUNDS")?;
    let cam: u8 = cam.parse().map_err(|e| format!("camera: {e}"))?;
    if !matches!(cam, 1 | 2) {
        return Err("camera must be 1 or 2".into());
    }
    Ok((cam, rounds.parse().map_err(|e| format!("rounds: {e}"))?))
}

/// Failure reported as one JSON line on stderr.
#[derive(Debug, Serialize)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            "usage" | "config" => 2,
            _ => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Config(_) | PipelineError::Synth(_) | PipelineError::Strategy(_) | PipelineError::Invalid(_) => {
                "config"
            }
            PipelineError::Vocab(_) => "vocab",
            PipelineError::Format(_) => "format",
            PipelineError::Peer(_) => "session",
            PipelineError::Eval(_) => "eval",
            PipelineError::Io(_) => "io",
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::new("format", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read_file(path)?).map_err(|_| CliError::new("format", format!("{}: not UTF-8", path.display())))
}

fn parse_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    toml::from_str(&read_text(path)?).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

fn load_config<T: DeserializeOwned + Default>(common: &Common) -> CliResult<T> {
    common.config.as_deref().map_or(Ok(T::default()), parse_toml)
}

fn peer_config(path: Option<&Path>) -> CliResult<PeerConfig> {
    let cfg = match path {
        Some(p) => PeerConfig::from_toml(&read_text(p)?),
        None => Ok(PeerConfig::default()),
    };
    cfg.map_err(|e| {
        let where_ = path.map(|p| format!("{}: ", p.display())).unwrap_or_default();
        CliError::new("config", format!("{where_}{e}"))
    })
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::new("config", e.to_string())
}

fn digest(path: &Path) -> CliResult<FileDigest> {
    FileDigest::of(path, path.display().to_string()).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn inputs(common: &Common, files: &[&Path]) -> CliResult<Vec<FileDigest>> {
    common.config.iter().map(|p| p.as_path()).chain(files.iter().copied()).map(digest).collect()
}

fn load_sequence(path: &Path) -> CliResult<Vec<FrameFeatures>> {
    read_sequence(path).map_err(|e| CliError::new("format", format!("{}: {e}", path.display())))
}

fn load_vocabulary(path: &Path) -> CliResult<Vocabulary> {
    Vocabulary::read_from(std::io::BufReader::new(
        fs::File::open(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?,
    ))
    .map_err(|e| CliError::new("format", format!("{}: {e}", path.display())))
}

/// Hashes the outputs, writes the manifest and prints a one-line summary.
fn finish(mut manifest: RunManifest, out: &Path, outputs: &[String]) -> CliResult<()> {
    for name in outputs {
        manifest.add_output(out, name)?;
    }
    let path = manifest.write(out)?;
    println!(
        "{}",
        serde_json::json!({
            "command": manifest.command,
            "manifest": manifest.manifest_hash,
            "manifest_file": path.display().to_string(),
            "outputs": outputs,
        })
    );
    Ok(())
}

fn cmd_synth(common: &Common) -> CliResult<()> {
    let mut scene: SceneConfig = load_config(common)?;
    if let Some(seed) = common.seed {
        scene.seed = seed;
    }
    scene.validate().map_err(config_error)?;
    let synthesis = synthesize(&scene).map_err(config_error)?;
    let outputs = write_synthesis(&common.out, &synthesis, &scene)?;
    let manifest = RunManifest::new(
        "synth",
        BTreeMap::from([("scene".into(), scene.seed)]),
        scene.to_toml(),
        inputs(common, &[])?,
    );
    finish(manifest, &common.out, &outputs)
}

fn cmd_vocab(
    common: &Common,
    sequences: &[PathBuf],
    branching_factor: Option<usize>,
    depth: Option<usize>,
) -> CliResult<()> {
    let mut params: VocabParams = load_config(common)?;
    params.seed = common.seed.unwrap_or(params.seed);
    params.branching_factor = branching_factor.unwrap_or(params.branching_factor);
    params.depth = depth.unwrap_or(params.depth);
    let seqs = sequences.iter().map(|p| load_sequence(p)).collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&[FrameFeatures]> = seqs.iter().map(|s| s.as_slice()).collect();
    let vocab = train_vocabulary(&refs, &params).map_err(|e| CliError::new("vocab", e.to_string()))?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join(VOCAB_FILE), vocab.to_bytes())?;
    let files: Vec<&Path> = sequences.iter().map(|p| p.as_path()).collect();
    let manifest = RunManifest::new(
        "vocab",
        BTreeMap::from([("vocab".into(), params.seed)]),
        toml::to_string(&params).expect("vocab params serialize"),
        inputs(common, &files)?,
    );
    finish(manifest, &common.out, &[VOCAB_FILE.into()])
}

struct RunPairArgs<'a> {
    seq1: &'a Path,
    seq2: &'a Path,
    vocab: &'a Path,
    config2: Option<&'a Path>,
    runs: usize,
    vary_seeds: bool,
    transport: Transport,
    abort: Option<(u8, u32)>,
}

fn cmd_run_pair(common: &Common, a: RunPairArgs<'_>) -> CliResult<()> {
    if a.runs == 0 {
        return Err(CliError::new("usage", "--runs must be at least 1"));
    }
    let mut cfg1 = peer_config(common.config.as_deref())?.with_camera(1);
    let mut cfg2 = peer_config(a.config2.or(common.config.as_deref()))?.with_camera(2);
    if let Some(seed) = common.seed {
        cfg1.seed = seed;
        cfg2.seed = seed;
    }
    if cfg1.strategies != cfg2.strategies {
        return Err(CliError::new("config", "both cameras must use the same strategies"));
    }
    let strategies = StrategyRegistry::builtin().resolve(&cfg1.strategies).map_err(config_error)?;
    let vocab = load_vocabulary(a.vocab)?;
    let (f1, f2) = (load_sequence(a.seq1)?, load_sequence(a.seq2)?);

    let mut files = vec![a.seq1, a.seq2, a.vocab];
    files.extend(a.config2);
    let manifest = RunManifest::new(
        "run-pair",
        BTreeMap::from([("peer1".into(), cfg1.seed), ("peer2".into(), cfg2.seed)]),
        format!("[cam1]\n{}\n[cam2]\n{}", cfg1.to_toml(), cfg2.to_toml()),
        inputs(common, &files)?,
    );
    let mut options = [SessionOptions::default(), SessionOptions::default()];
    if let Some((cam, rounds)) = a.abort {
        options[cam as usize - 1].abort_after = Some(rounds);
    }

    let mut outputs = Vec::new();
    let mut incomplete = Vec::new();
    for run in 0..a.runs {
        let shift = if a.vary_seeds { run as u64 } else { 0 };
        let c1 = PeerConfig {
            seed: cfg1.seed.wrapping_add(shift),
            ..cfg1.clone()
        };
        let c2 = PeerConfig {
            seed: cfg2.seed.wrapping_add(shift),
            ..cfg2.clone()
        };
        let pair = run_pair(&c1, &c2, &vocab, &strategies, f1.clone(), f2.clone(), a.transport, [&options[0], &options[1]])?;
        let dir = format!("run{run:02}");
        fs::create_dir_all(common.out.join(&dir))?;
        for (id, result) in [(1u8, &pair.cam1), (2u8, &pair.cam2)] {
            let log = match result {
                Ok(log) => log.clone(),
                Err(PeerError::Session { reason, log }) => {
                    incomplete.push(format!("{dir} camera {id}: {reason}"));
                    (**log).clone()
                }
                Err(e) => return Err(CliError::new("session", e.to_string())),
            };
            let name = format!("{dir}/{}", log_file(id));
            let log = RecognitionLog {
                manifest: Some(manifest.manifest_hash.clone()),
                ..log
            };
            write_log(&common.out.join(&name), &log)?;
            outputs.push(name);
        }
    }
    finish(manifest, &common.out, &outputs)?;
    if incomplete.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            "session",
            format!("partial logs written: {}", incomplete.join("; ")),
        ))
    }
}

fn posed(data: &Path, camera: u8) -> CliResult<PosedSequence> {
    let at = |name: String| data.join(name);
    let poses = read_poses(&at(poses_file(camera)))
        .map_err(|e| CliError::new("format", format!("{}: {e}", at(poses_file(camera)).display())))?;
    let points = read_frame_points(&at(points_file(camera)))
        .map_err(|e| CliError::new("format", format!("{}: {e}", at(points_file(camera)).display())))?;
    Ok(PosedSequence { poses, points })
}

fn cmd_annotate(
    common: &Common,
    data: &Path,
    overlap_threshold: Option<f64>,
    angle_threshold: Option<f64>,
) -> CliResult<()> {
    let mut params: AnnotateParams = load_config(common)?;
    params.overlap_threshold = overlap_threshold.unwrap_or(params.overlap_threshold);
    params.angle_threshold = angle_threshold.unwrap_or(params.angle_threshold);
    if !((0.0..=1.0).contains(&params.overlap_threshold)
        && params.angle_threshold > 0.0
        && params.near > 0.0
        && params.far > params.near)
    {
        return Err(CliError::new("config", format!("invalid annotation parameters {params:?}")));
    }
    let scene_path = data.join(SCENE_FILE);
    let scene = SceneConfig::from_toml(&read_text(&scene_path)?)
        .map_err(|e| CliError::new("config", format!("{}: {e}", scene_path.display())))?;
    let (a, b) = (posed(data, 1)?, posed(data, 2)?);
    let ann = label_pairs(&a, &b, &scene.intrinsics, &params);
    fs::create_dir_all(&common.out)?;
    let outputs = write_annotations(&common.out, &ann)?;
    let files: Vec<PathBuf> = [scene_path.clone()]
        .into_iter()
        .chain((1..=2).flat_map(|c| [data.join(poses_file(c)), data.join(points_file(c))]))
        .collect();
    let file_refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    let manifest = RunManifest::new(
        "annotate",
        BTreeMap::new(),
        toml::to_string(&params).expect("annotate params serialize"),
        inputs(common, &file_refs)?,
    );
    eprintln!("{} of {} pairs valid", ann.valid_count(), ann.pairs.len());
    finish(manifest, &common.out, &outputs)
}

fn load_log(path: &Path) -> CliResult<RecognitionLog> {
    RecognitionLog::from_json(&read_text(path)?)
        .map_err(|e| CliError::new("format", format!("{}: {e}", path.display())))
}

fn cmd_eval(common: &Common, annotations: &Path, logs: &Path, pair: &str) -> CliResult<()> {
    let ann = Annotations::read_csv(std::io::BufReader::new(
        fs::File::open(annotations).map_err(|e| CliError::new("io", format!("{}: {e}", annotations.display())))?,
    ))
    .map_err(|e| CliError::new("format", format!("{}: {e}", annotations.display())))?;
    let mut runs: Vec<String> = fs::read_dir(logs)
        .map_err(|e| CliError::new("io", format!("{}: {e}", logs.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("run") && n[3..].parse::<usize>().is_ok())
        .collect();
    runs.sort();
    if runs.is_empty() {
        return Err(CliError::new("io", format!("no run directories in {}", logs.display())));
    }
    let mut scores = Vec::new();
    let mut files = vec![annotations.to_path_buf()];
    for (i, run) in runs.iter().enumerate() {
        let p1 = logs.join(run).join(log_file(1));
        let p2 = logs.join(run).join(log_file(2));
        let (l1, l2) = (load_log(&p1)?, load_log(&p2)?);
        if !(l1.complete && l2.complete) {
            log::warn!("{run}: scoring incomplete logs");
        }
        scores.push(score_run(i, &l1, &l2, &ann).map_err(|e| CliError::new("eval", format!("{run}: {e}")))?);
        files.extend([p1, p2]);
    }
    let report = PairReport::new(pair, scores).map_err(|e| CliError::new("eval", e.to_string()))?;
    let file_refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    let manifest = RunManifest::new("eval", BTreeMap::new(), format!("pair = {pair:?}\n"), inputs(common, &file_refs)?);
    fs::create_dir_all(&common.out)?;
    write_report(&common.out.join(REPORT_FILE), &report, &manifest.manifest_hash)?;
    finish(manifest, &common.out, &[REPORT_FILE.into()])
}

fn connect(addr: SocketAddr, wait: Duration) -> CliResult<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() >= wait => {
                return Err(CliError::new("io", format!("cannot connect to {addr}: {e}")))
            }
            Err(_) => std::thread::sleep(Duration::from_millis(100)),
        }
    }
}

struct PeerArgs<'a> {
    camera: u8,
    sequence: &'a Path,
    vocab: &'a Path,
    listen: Option<SocketAddr>,
    connect: Option<SocketAddr>,
    wait: Duration,
}

fn cmd_peer(common: &Common, a: PeerArgs<'_>) -> CliResult<()> {
    let mut cfg = peer_config(common.config.as_deref())?;
    cfg.camera_id = a.camera;
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.validate().map_err(|e: ConfigError| config_error(e))?;
    let strategies = StrategyRegistry::builtin().resolve(&cfg.strategies).map_err(config_error)?;
    let vocab = load_vocabulary(a.vocab)?;
    let frames = load_sequence(a.sequence)?;
    let manifest = RunManifest::new(
        "peer",
        BTreeMap::from([(format!("peer{}", a.camera), cfg.seed)]),
        cfg.to_toml(),
        inputs(common, &[a.sequence, a.vocab])?,
    );

    let stream = match (a.listen, a.connect) {
        (Some(addr), _) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            listener.accept()?.0
        }
        (None, Some(addr)) => connect(addr, a.wait)?,
        (None, None) => return Err(CliError::new("usage", "one of --listen or --connect is required")),
    };
    stream.set_read_timeout(Some(Duration::from_secs(120)))?;
    let endpoint = Endpoint::from_tcp(stream)?;
    let result = run_peer(&cfg, &vocab, &strategies, frames, endpoint, &SessionOptions::default());
    let (log, failure) = match result {
        Ok(log) => (log, None),
        Err(PeerError::Session { reason, log }) => (*log, Some(reason)),
        Err(e) => return Err(CliError::new("session", e.to_string())),
    };
    fs::create_dir_all(&common.out)?;
    let name = log_file(a.camera);
    write_log(
        &common.out.join(&name),
        &RecognitionLog {
            manifest: Some(manifest.manifest_hash.clone()),
            ..log
        },
    )?;
    finish(manifest, &common.out, &[name])?;
    match failure {
        None => Ok(()),
        Some(reason) => Err(CliError::new("session", format!("partial log written: {reason}"))),
    }
}

fn cmd_pipeline(common: &Common, runs: Option<usize>) -> CliResult<()> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_toml(&read_text(p)?).map_err(|e| {
            let kind = CliError::from(e);
            CliError::new(kind.kind, format!("{}: {}", p.display(), kind.message))
        })?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.scene.seed = seed;
    }
    cfg.runs = runs.unwrap_or(cfg.runs);
    let manifest = write_pipeline(&cfg, &common.out)?;
    let path = common.out.join(format!("manifest-{}.json", manifest.command));
    println!(
        "{}",
        serde_json::json!({
            "command": manifest.command,
            "manifest": manifest.manifest_hash,
            "manifest_file": path.display().to_string(),
            "outputs": manifest.outputs.iter().map(|o| &o.path).collect::<Vec<_>>(),
        })
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { common } => cmd_synth(&common),
        Command::Vocab {
            common,
            sequences,
            branching_factor,
            depth,
        } => cmd_vocab(&common, &sequences, branching_factor, depth),
        Command::RunPair {
            common,
            seq1,
            seq2,
            vocab,
            config2,
            runs,
            vary_seeds,
            transport,
            endpoint,
            abort,
        } => cmd_run_pair(
            &common,
            RunPairArgs {
                seq1: &seq1,
                seq2: &seq2,
                vocab: &vocab,
                config2: config2.as_deref(),
                runs,
                vary_seeds,
                transport: match transport {
                    TransportKind::Pipe => Transport::Pipe,
                    TransportKind::Tcp => Transport::Tcp(endpoint),
                },
                abort,
            },
        ),
        Command::Annotate {
            common,
            data,
            overlap_threshold,
            angle_threshold,
        } => cmd_annotate(&common, &data, overlap_threshold, angle_threshold),
        Command::Eval {
            common,
            annotations,
            logs,
            pair,
        } => cmd_eval(&common, &annotations, &logs, &pair),
        Command::Peer {
            common,
            camera,
            sequence,
            vocab,
            listen,
            connect,
            wait,
        } => cmd_peer(
            &common,
            PeerArgs {
                camera,
                sequence: &sequence,
                vocab: &vocab,
                listen,
                connect,
                wait: Duration::from_secs(wait),
            },
        ),
        Command::Pipeline { common, runs } => cmd_pipeline(&common, runs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let message: Vec<&str> = rendered
                .lines()
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            report(&CliError::new("usage", message.join(" ").trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn report(e: &CliError) {
    eprintln!("error: {}", serde_json::to_string(e).expect("error serializes"));
}
