//! Command-line entry points.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::{
    build_slfn_training_set, crop_patch, read_ensemble, read_scnn, write_ensemble, write_scnn, Ensemble, ScnnModel,
    SefSample,
};
use crate::config::{RunConfig, Substream};
use crate::error::{ClassifyError, FeatureError, FormatError, SceneError};
use crate::eval::{evaluate_sequence, EvalReport};
use crate::features::{preprocess, Frame};
use crate::io::{
    frame_file_name, list_frames, overlay_boxes, read_frame, read_ground_truth, read_labeled_tracks, read_manifest,
    read_shapes, read_tracks, write_frame, write_frames, write_ground_truth, write_labeled_tracks, write_manifest,
    write_tracks, LabeledTrack, ManifestEntry, ShapeWriter,
};
use crate::pipeline::{downscale_point, TrackError, Tracker};
use crate::pmf::{Field, OrientedBox};
use crate::recognition::{balanced_patch_specs, extract_training_patches, PatchSpec, Recognizer};
use crate::scenegen::{generate, ObjectClass, SceneSpec};

#[derive(Parser, Debug)]
#[command(name = "cactus", version, about = "Track every object in a video, classify each track and score the result")]
pub struct Cli {
    /// Run configuration (TOML); missing keys take defaults.
    #[arg(long, global = true, env = "CACTUS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "CACTUS_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); output does not depend on it.
    #[arg(long, global = true, env = "CACTUS_WORKERS")]
    pub workers: Option<usize>,
    /// Writes frames with output boxes drawn on them.
    #[arg(long, global = true, env = "CACTUS_OVERLAY_DIR")]
    pub overlay_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "CACTUS_LOG_LEVEL", value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,
    /// Writes the effective configuration after flags are applied.
    #[arg(long, global = true, env = "CACTUS_EMIT_CONFIG")]
    pub emit_config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Renders a scene spec to frames and ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; receives `frames/`, `gt.csv` and `scene.toml`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tracks a frame directory and writes the track CSV.
    Track {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also writes every filter's posterior shape per frame.
        #[arg(long)]
        shapes: Option<PathBuf>,
    },
    /// Trains the patch classifier from frames and ground truth, or from a
    /// patch manifest.
    TrainScnn {
        #[arg(long, requires = "gt", conflicts_with = "manifest")]
        frames: Option<PathBuf>,
        #[arg(long, requires = "frames")]
        gt: Option<PathBuf>,
        #[arg(long, required_unless_present = "frames")]
        manifest: Option<PathBuf>,
        /// Writes the sampled patch list.
        #[arg(long)]
        manifest_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the network ensemble on tracker output.
    TrainSlfn {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        scnn: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tracks and labels every filter; without an ensemble the patch
    /// classifier decides alone.
    Recognize {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        scnn: PathBuf,
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores labeled tracks against ground truth; pass `--tracks` and
    /// `--gt` once per sequence.
    Evaluate {
        #[arg(long, required = true)]
        tracks: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        /// Report CSV; the table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model error: {0}")]
    Model(#[from] ClassifyError),
    #[error("scene error: {0}")]
    Scene(#[from] SceneError),
    #[error("feature error: {0}")]
    Feature(#[from] FeatureError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Missing(_) => 4,
            CliError::Format(_) => 5,
            CliError::Dimension(_) => 6,
            CliError::Model(_) => 7,
            CliError::Scene(_) => 8,
            CliError::Feature(_) => 9,
            CliError::Io { .. } => 10,
        }
    }
}

impl From<TrackError> for CliError {
    fn from(e: TrackError) -> Self {
        match e {
            TrackError::Feature(f) => CliError::Feature(f),
            TrackError::Config(c) => CliError::Config(c),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.log_level);
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(level: LogLevel) {
    let filter = match level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Warn => log::LevelFilter::Warn,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(filter).try_init();
    log::set_max_level(filter);
}

/// Defaults, then the config file, then flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(require(p)?).map_err(io_err(p))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    if let Some(p) = &cli.emit_config {
        fs::write(p, cfg.to_toml()).map_err(io_err(p))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(cli, &cfg))
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    let overlay = cli.overlay_dir.as_deref();
    match &cli.command {
        Command::Synth { spec, out } => synth(cli, cfg, spec, out),
        Command::Track { frames, out, shapes } => track(cfg, frames, out, shapes.as_deref(), overlay),
        Command::TrainScnn {
            frames,
            gt,
            manifest,
            manifest_out,
            out,
        } => train_scnn(cfg, frames.as_deref(), gt.as_deref(), manifest.as_deref(), manifest_out.as_deref(), out),
        Command::TrainSlfn {
            frames,
            tracks,
            shapes,
            gt,
            scnn,
            out,
        } => train_slfn(cfg, frames, tracks, shapes, gt, scnn, out),
        Command::Recognize {
            frames,
            scnn,
            ensemble,
            out,
        } => recognize(cfg, frames, scnn, ensemble.as_deref(), out, overlay),
        Command::Evaluate { tracks, gt, out } => evaluate(cfg, tracks, gt, out.as_deref()),
    }
}

fn synth(cli: &Cli, cfg: &RunConfig, spec_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(require(spec_path)?).map_err(io_err(spec_path))?;
    let mut spec = SceneSpec::from_toml(&text)?;
    if cli.seed.is_some() {
        spec.seed = cfg.substream_seed(Substream::Scenegen);
    }
    let scene = generate(&spec)?;
    write_frames(&out.join("frames"), &scene.frames)?;
    write_ground_truth(&out.join("gt.csv"), &scene.ground_truth)?;
    let p = out.join("scene.toml");
    fs::write(&p, spec.to_toml()).map_err(io_err(&p))?;
    info!("wrote {} frames to {}", scene.frames.len(), out.display());
    Ok(())
}

/// Frame files of a directory, all of one size.
struct FrameSource {
    paths: Vec<PathBuf>,
    size: Option<(usize, usize)>,
}

impl FrameSource {
    fn open(dir: &Path) -> Result<Self, CliError> {
        let paths = list_frames(require(dir)?)?;
        if paths.is_empty() {
            return Err(CliError::Missing(dir.join("*.png")));
        }
        Ok(FrameSource { paths, size: None })
    }

    fn read(&mut self, i: usize) -> Result<Frame, CliError> {
        let f = read_frame(&self.paths[i])?;
        match self.size {
            None => self.size = Some((f.width, f.height)),
            Some(s) if s != (f.width, f.height) => {
                return Err(CliError::Dimension(format!(
                    "{} is {}x{}, earlier frames are {}x{}",
                    self.paths[i].display(),
                    f.width,
                    f.height,
                    s.0,
                    s.1
                )))
            }
            Some(_) => {}
        }
        Ok(f)
    }
}

/// Distinct colors cycling over filter ids.
fn palette(i: usize) -> [u8; 3] {
    const P: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    P[i % P.len()]
}

fn write_overlay(dir: &Path, index: usize, frame: &Frame, boxes: &[(OrientedBox, [u8; 3])]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_frame(&dir.join(frame_file_name(index)), &overlay_boxes(frame, boxes))?;
    Ok(())
}

fn new_tracker(cfg: &RunConfig) -> Result<Tracker, CliError> {
    Ok(Tracker::new(cfg.tracker.clone(), cfg.filter_bank()?, cfg.preprocess, cfg.mhi))
}

fn track(cfg: &RunConfig, frames: &Path, out: &Path, shapes: Option<&Path>, overlay: Option<&Path>) -> Result<(), CliError> {
    let mut src = FrameSource::open(frames)?;
    let mut tracker = new_tracker(cfg)?;
    let mut shape_out = shapes
        .map(|p| ShapeWriter::create(p, cfg.tracker.sef.shape_dim))
        .transpose()?;
    let mut rows = Vec::new();
    for i in 0..src.paths.len() {
        let frame = src.read(i)?;
        let tracked = tracker.push(&frame)?;
        if let Some(w) = shape_out.as_mut() {
            let states = tracker.cactus().expect("initialized by push").states();
            for o in &tracked.outputs {
                w.push(o.frame, o.sef_id, states[o.sef_id].s_s.values())?;
            }
        }
        if let Some(dir) = overlay {
            let boxes: Vec<_> = tracked.outputs.iter().map(|o| (o.bbox, palette(o.sef_id))).collect();
            write_overlay(dir, i, &frame, &boxes)?;
        }
        rows.extend(tracked.outputs);
    }
    if let Some(w) = shape_out {
        w.finish()?;
    }
    write_tracks(out, &rows, cfg.tracker.n_select)?;
    info!("tracked {} frames", src.paths.len());
    Ok(())
}

/// The classifier substream: first draw seeds the S-CNN, second the
/// ensemble, the rest drives sampling.
fn classifier_stream(cfg: &RunConfig) -> (u64, u64, ChaCha8Rng) {
    let mut rng = cfg.substream(Substream::Classifier);
    let scnn_seed = rng.next_u64() >> 1;
    let ensemble_seed = rng.next_u64() >> 1;
    (scnn_seed, ensemble_seed, rng)
}

fn preprocess_frame(cfg: &RunConfig, frame: &Frame) -> Result<Field, CliError> {
    Ok(preprocess(frame, &cfg.preprocess)?.gray)
}

fn train_scnn(
    cfg: &RunConfig,
    frames: Option<&Path>,
    gt: Option<&Path>,
    manifest: Option<&Path>,
    manifest_out: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (scnn_seed, _, mut rng) = classifier_stream(cfg);
    // jitter has its own stream so a written manifest retrains identically
    let mut jitter = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let (paths, specs) = match (frames, gt, manifest) {
        (Some(frames), Some(gt), _) => {
            let mut src = FrameSource::open(frames)?;
            let gts = read_ground_truth(require(gt)?)?;
            let first = src.read(0)?;
            let specs = balanced_patch_specs(
                &gts,
                src.paths.len(),
                (first.width, first.height),
                cfg.training.patches_per_class,
                cfg.training.clutter_clearance,
                &mut rng,
            );
            (src.paths, specs)
        }
        (_, _, Some(m)) => {
            let entries = read_manifest(require(m)?)?;
            let mut index: BTreeMap<PathBuf, usize> = BTreeMap::new();
            let mut paths = Vec::new();
            let specs = entries
                .iter()
                .map(|e| {
                    let frame = *index.entry(e.frame_path.clone()).or_insert_with(|| {
                        paths.push(e.frame_path.clone());
                        paths.len() - 1
                    });
                    PatchSpec {
                        frame,
                        cx: e.cx,
                        cy: e.cy,
                        label: e.label,
                    }
                })
                .collect();
            (paths, specs)
        }
        _ => return Err(CliError::Config("train-scnn needs --frames with --gt, or --manifest".into())),
    };
    if specs.is_empty() {
        return Err(CliError::Model(ClassifyError::EmptyTrainingSet));
    }
    if let Some(l) = specs.iter().find(|s| s.label.id() >= cfg.scnn.n_classes) {
        return Err(CliError::Config(format!("class {} exceeds scnn.n_classes", l.label.name())));
    }
    if let Some(m) = manifest_out {
        let entries: Vec<ManifestEntry> = specs
            .iter()
            .map(|s| ManifestEntry {
                frame_path: fs::canonicalize(&paths[s.frame]).unwrap_or_else(|_| paths[s.frame].clone()),
                cx: s.cx,
                cy: s.cy,
                label: s.label,
            })
            .collect();
        write_manifest(m, &entries)?;
    }
    // only frames that hold a patch are read
    let mut needed: Vec<usize> = specs.iter().map(|s| s.frame).collect();
    needed.sort_unstable();
    needed.dedup();
    let mut grids: Vec<Field> = vec![Field::zeros(1, 1); paths.len()];
    let mut size = None;
    for &i in &needed {
        let f = read_frame(require(&paths[i])?)?;
        if *size.get_or_insert((f.width, f.height)) != (f.width, f.height) {
            return Err(CliError::Dimension(format!("{} differs in size from earlier frames", paths[i].display())));
        }
        grids[i] = preprocess_frame(cfg, &f)?;
    }
    let (patches, labels) =
        extract_training_patches(&grids, &specs, &cfg.scnn, cfg.preprocess.downsample, &mut jitter);
    let mut model = ScnnModel::new(cfg.scnn.clone(), cfg.filter_bank()?, scnn_seed);
    let acc = model.fit(&patches, &labels)?;
    info!("s-cnn trained on {} patches, training accuracy {:.4}", patches.len(), acc);
    let f = File::create(out).map_err(io_err(out))?;
    write_scnn(&mut BufWriter::new(f), &model)?;
    Ok(())
}

fn load_scnn(path: &Path) -> Result<ScnnModel, CliError> {
    let f = File::open(require(path)?).map_err(io_err(path))?;
    Ok(read_scnn(&mut BufReader::new(f))?)
}

fn load_ensemble(path: &Path) -> Result<Ensemble, CliError> {
    let f = File::open(require(path)?).map_err(io_err(path))?;
    Ok(read_ensemble(&mut BufReader::new(f))?)
}

fn train_slfn(
    cfg: &RunConfig,
    frames: &Path,
    tracks: &Path,
    shapes: &Path,
    gt: &Path,
    scnn: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let (_, ensemble_seed, mut rng) = classifier_stream(cfg);
    let scnn = load_scnn(scnn)?;
    let rows = read_tracks(require(tracks)?)?;
    let gts = read_ground_truth(require(gt)?)?;
    let (side, shape_rows) = read_shapes(require(shapes)?)?;
    let mut shape_of: BTreeMap<(usize, usize), Vec<f32>> =
        shape_rows.into_iter().map(|r| ((r.frame, r.sef_id), r.values)).collect();
    let mut src = FrameSource::open(frames)?;
    let mut by_frame: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for r in rows.into_iter().filter(|r| r.frame >= cfg.training.burn_in) {
        by_frame.entry(r.frame).or_default().push(r);
    }
    let cfg_s = &scnn.config;
    let mut samples = Vec::new();
    for (frame, rows) in by_frame {
        if frame >= src.paths.len() {
            return Err(CliError::Dimension(format!("track frame {frame} beyond the {} frames given", src.paths.len())));
        }
        let grid = preprocess_frame(cfg, &src.read(frame)?)?;
        let patches: Vec<Field> = rows
            .iter()
            .map(|r| {
                let c = downscale_point(r.bbox.cx, r.bbox.cy, cfg.preprocess.downsample);
                crop_patch(&grid, c, cfg_s.patch_size, cfg_s.mask_radius)
            })
            .collect();
        for (r, scores) in rows.iter().zip(scnn.scores_batch(&patches)) {
            let shape = shape_of.remove(&(r.frame, r.sef_id)).ok_or_else(|| {
                CliError::Dimension(format!("no shape record for frame {} filter {}", r.frame, r.sef_id))
            })?;
            if shape.len() != side * side {
                return Err(CliError::Dimension("shape record size".into()));
            }
            samples.push(SefSample {
                frame: r.frame,
                sef_id: r.sef_id,
                bbox: r.bbox,
                energy: r.energy,
                scores,
                shape: shape.into_iter().map(f64::from).collect(),
            });
        }
    }
    let set = build_slfn_training_set(samples, &gts, cfg.slfn.n_bags, &mut rng);
    let ensemble = Ensemble::train(&set, scnn.n_classes(), &cfg.slfn, ensemble_seed)?;
    info!("ensemble trained on {} samples", set.samples.len());
    let f = File::create(out).map_err(io_err(out))?;
    write_ensemble(&mut BufWriter::new(f), &ensemble)?;
    Ok(())
}

fn label_color(c: ObjectClass) -> [u8; 3] {
    match c {
        ObjectClass::Car => [230, 25, 75],
        ObjectClass::Person => [60, 180, 75],
        ObjectClass::Cyclist => [0, 130, 200],
        ObjectClass::Clutter => [128, 128, 128],
    }
}

fn recognize(
    cfg: &RunConfig,
    frames: &Path,
    scnn: &Path,
    ensemble: Option<&Path>,
    out: &Path,
    overlay: Option<&Path>,
) -> Result<(), CliError> {
    let scnn = load_scnn(scnn)?;
    let ensemble = ensemble.map(load_ensemble).transpose()?;
    if let Some(e) = &ensemble {
        if e.n_classes != scnn.n_classes() {
            return Err(CliError::Dimension(format!(
                "ensemble has {} classes, s-cnn {}",
                e.n_classes,
                scnn.n_classes()
            )));
        }
    }
    let mut src = FrameSource::open(frames)?;
    let mut rec = Recognizer {
        tracker: new_tracker(cfg)?,
        scnn,
        ensemble,
    };
    let mut rows = Vec::new();
    for i in 0..src.paths.len() {
        let frame = src.read(i)?;
        let labeled = rec.push(&frame)?;
        if let Some(dir) = overlay {
            let boxes: Vec<_> = labeled
                .iter()
                .filter(|(_, l)| *l != ObjectClass::Clutter)
                .map(|(o, l)| (o.bbox, label_color(*l)))
                .collect();
            write_overlay(dir, i, &frame, &boxes)?;
        }
        rows.extend(labeled.into_iter().map(|(track, label)| LabeledTrack { track, label }));
    }
    write_labeled_tracks(out, &rows)?;
    Ok(())
}

fn evaluate(cfg: &RunConfig, tracks: &[PathBuf], gt: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    if tracks.len() != gt.len() {
        return Err(CliError::Config(format!(
            "{} track files but {} ground-truth files",
            tracks.len(),
            gt.len()
        )));
    }
    let mut sequences = Vec::new();
    for (t, g) in tracks.iter().zip(gt) {
        let dets: Vec<_> = read_labeled_tracks(require(t)?)?.iter().map(|l| l.detection()).collect();
        let gts = read_ground_truth(require(g)?)?;
        let name = t.file_stem().map_or_else(|| t.display().to_string(), |s| s.to_string_lossy().into_owned());
        sequences.push(evaluate_sequence(&name, &dets, &gts, cfg.eval.overlap_threshold));
    }
    let report = EvalReport { sequences };
    print!("{}", report.to_table());
    if let Some(p) = out {
        fs::write(p, report.to_csv()).map_err(io_err(p))?;
    }
    Ok(())
}
