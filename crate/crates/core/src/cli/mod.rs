//! Command-line front end. Data goes to stdout, progress to stderr.
//!
//! Exit codes: 0 success, 2 bad configuration or input, 3 training gave up.

mod config;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::boosting::{Label, Sample};
use crate::cascade::{
    load_cascade, save_cascade, train_cascade_observed, Cascade, TrainError, TrainEvent,
};
use crate::dataset::{
    crossing_sequence, evaluate, load_annotations, operating_points_csv, synth_dataset,
    write_frames, write_synth, CrossingKind, OperatingPoint,
};
use crate::detector::{
    format_detections, group_detections, scan, sort_detections, Detection, ScanConfig,
};
use crate::imaging::{load_pgm, save_pgm, GrayImage};
use crate::tracking::Pipeline;

pub use config::{
    ConfigError, EvalSection, PathsSection, RunConfig, ScanSection, SynthSection, TrackingSection,
    TrainSection,
};

#[derive(Debug, Parser)]
#[command(
    name = "haarscan",
    version,
    about = "Train, run and evaluate Haar-feature cascades; count line crossings"
)]
#[command(after_help = after_help())]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for training and synthesis (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core (overrides the config).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Config override, e.g. `--set train.max_stages=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset: positives, negatives, annotated scenes, crossing clips.
    Synth(SynthArgs),
    /// Train a cascade from a directory of positive crops and one of negative images.
    Train(TrainArgs),
    /// Print grouped detections for images or directories of images.
    Detect(DetectArgs),
    /// Score a cascade against an annotation file.
    Eval(EvalArgs),
    /// Count line crossings in a directory of frames.
    Count(CountArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (default: paths.out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the crossing-clip frame directories.
    #[arg(long)]
    pub no_frames: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub positives: Option<PathBuf>,
    #[arg(long)]
    pub negatives: Option<PathBuf>,
    /// Where to write the cascade (default: paths.cascade).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    /// Write copies of the inputs with detections outlined into this directory.
    #[arg(long)]
    pub draw: Option<PathBuf>,
    /// PGM files or directories of them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Also write an operating-point CSV over grouping thresholds.
    #[arg(long)]
    pub operating_points: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Track cascade detections instead of motion blobs.
    #[arg(long)]
    pub cascade: Option<PathBuf>,
}

fn after_help() -> String {
    let mut s =
        String::from("Configuration fields and defaults (TOML, or --set section.field=value):\n\n");
    for line in RunConfig::defaults_toml().lines() {
        writeln!(s, "    {line}").unwrap();
    }
    s.push_str(
        "\nEmpty paths are unset. Exit codes: 0 ok, 2 bad config or input, 3 training aborted.",
    );
    s
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error("training aborted: {0}")]
    Aborted(TrainError),
    #[error(transparent)]
    Usage(#[from] clap::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Usage(_) => 2,
            CliError::Aborted(_) => 3,
        }
    }
}

fn input(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

/// Config file, then `--set` overrides, then the dedicated flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses the process arguments and runs; the binary's whole `main`.
pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses `args` (without the program name) and runs, writing data to
/// `out`. Help and usage problems are returned as [`CliError::Usage`].
pub fn run_args<I, S>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(
        std::iter::once("haarscan".into()).chain(args.into_iter().map(Into::into)),
    )?;
    run(&cli, out)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| input(format!("cannot start {} workers: {e}", cfg.workers)))?;
    // Buffered so the worker pool never holds the caller's writer.
    let mut buf = Vec::new();
    let result = pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, &mut buf, a),
        Command::Train(a) => cmd_train(&cfg, &mut buf, a),
        Command::Detect(a) => cmd_detect(&cfg, &mut buf, a),
        Command::Eval(a) => cmd_eval(&cfg, &mut buf, a),
        Command::Count(a) => cmd_count(&cfg, &mut buf, a),
    });
    emit(out, &String::from_utf8_lossy(&buf))?;
    result
}

fn pick(flag: &Option<PathBuf>, from_config: &Path, what: &str) -> Result<PathBuf, CliError> {
    match flag {
        Some(p) => Ok(p.clone()),
        None if !from_config.as_os_str().is_empty() => Ok(from_config.to_path_buf()),
        None => Err(input(format!("no {what} given (flag or paths section)"))),
    }
}

/// `.pgm` files of a directory, sorted by name.
pub fn list_pgms(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| input(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e
            .map_err(|e| input(format!("{}: {e}", dir.display())))?
            .path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn emit(sink: &mut dyn Write, text: &str) -> Result<(), CliError> {
    sink.write_all(text.as_bytes())
        .and_then(|()| sink.flush())
        .map_err(|e| input(format!("cannot write output: {e}")))
}

fn load_image(p: &Path) -> Result<GrayImage, CliError> {
    load_pgm(p).map_err(|e| input(format!("{}: {e}", p.display())))
}

fn load_model(p: &Path) -> Result<Cascade<f64>, CliError> {
    load_cascade(p).map_err(|e| input(format!("cascade {}: {e}", p.display())))
}

fn write_file(p: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(p, text).map_err(|e| input(format!("cannot write {}: {e}", p.display())))
}

fn cmd_synth(cfg: &RunConfig, sink: &mut dyn Write, a: &SynthArgs) -> Result<(), CliError> {
    let out = pick(&a.out, &cfg.paths.out, "output directory")?;
    let data = synth_dataset(&cfg.synth_config()?);
    let manifest = write_synth(&data, &out).map_err(input)?;
    emit(sink, &manifest.to_text())?;
    if !a.no_frames {
        for kind in CrossingKind::ALL {
            let dir = out.join("frames").join(kind.name());
            write_frames(&crossing_sequence(kind, cfg.seed), &dir).map_err(input)?;
            emit(sink, &format!("frames_{} {}\n", kind.name(), dir.display()))?;
        }
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, sink: &mut dyn Write, a: &TrainArgs) -> Result<(), CliError> {
    let tcfg = cfg.train_config()?;
    let pos_dir = pick(&a.positives, &cfg.paths.positives, "positives directory")?;
    let neg_dir = pick(&a.negatives, &cfg.paths.negatives, "negatives directory")?;
    let out = pick(&a.out, &cfg.paths.cascade, "cascade output path")?;

    let pos_files = list_pgms(&pos_dir)?;
    let mut positives = Vec::with_capacity(pos_files.len());
    for p in &pos_files {
        let img = load_image(p)?;
        let s =
            Sample::<f64>::from_crop(&img, tcfg.base_window, Label::Positive, tcfg.variance_floor)
                .map_err(|e| input(format!("positive {}: {e}", p.display())))?;
        positives.push(s);
    }
    let negatives = list_pgms(&neg_dir)?
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<Vec<_>, _>>()?;
    if negatives.is_empty() {
        return Err(input(format!(
            "no negative images in {}",
            neg_dir.display()
        )));
    }
    info!(
        "training on {} positives and {} negative images",
        positives.len(),
        negatives.len()
    );

    let mut observer = |e: &TrainEvent| {
        if let TrainEvent::Stage {
            stage,
            stats,
            overall_false_positive_rate,
        } = e
        {
            info!(
                "stage {stage}: stumps {} negatives {} pool_survivors {} detection {:.4} fp {:.4} overall_fp {:.3e}",
                stats.stumps,
                stats.negatives,
                stats.pool_survivors,
                stats.detection_rate,
                stats.false_positive_rate,
                overall_false_positive_rate
            );
        }
    };
    let cascade = match train_cascade_observed(&positives, &negatives, &tcfg, &mut observer) {
        Ok(c) => c,
        Err(
            e @ (TrainError::TooFewPositives(_)
            | TrainError::BadPositive { .. }
            | TrainError::InvalidConfig(_)
            | TrainError::Feature(_)),
        ) => return Err(input(e)),
        Err(e) => return Err(CliError::Aborted(e)),
    };
    if let Some(w) = &cascade.metadata.warning {
        warn!("{w}");
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    }
    save_cascade(&cascade, &out)
        .map_err(|e| input(format!("cannot write {}: {e}", out.display())))?;
    emit(
        sink,
        &format!(
            "cascade {} stages {} stumps {} overall_fp {:.6e}\n",
            out.display(),
            cascade.stages().len(),
            cascade.stump_count(),
            cascade.metadata.overall_false_positive_rate
        ),
    )?;
    Ok(())
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_pgms(p)?);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(input(format!("no such input {}", p.display())));
        }
    }
    Ok(out)
}

/// Grouped detections; images smaller than the window have none.
fn detect_image(c: &Cascade<f64>, img: &GrayImage, scan_cfg: &ScanConfig) -> Vec<Detection<f64>> {
    let raw = raw_detections(c, img, scan_cfg);
    let mut dets = group_detections(&raw, scan_cfg);
    sort_detections(&mut dets);
    dets
}

fn raw_detections(c: &Cascade<f64>, img: &GrayImage, scan_cfg: &ScanConfig) -> Vec<Detection<f64>> {
    scan(c, img, scan_cfg).unwrap_or_default()
}

fn cmd_detect(cfg: &RunConfig, sink: &mut dyn Write, a: &DetectArgs) -> Result<(), CliError> {
    let scan_cfg = cfg.scan_config()?;
    let cascade = load_model(&pick(&a.cascade, &cfg.paths.cascade, "cascade")?)?;
    let files = expand_inputs(&a.inputs)?;
    if let Some(d) = &a.draw {
        std::fs::create_dir_all(d).map_err(|e| input(format!("{}: {e}", d.display())))?;
    }
    let mut out = String::new();
    for p in &files {
        let img = load_image(p)?;
        let dets = detect_image(&cascade, &img, &scan_cfg);
        writeln!(out, "# {}", p.display()).unwrap();
        out.push_str(&format_detections(&dets));
        if let Some(d) = &a.draw {
            let mut canvas = img.clone();
            for det in &dets {
                canvas.draw_outline(det.rect, 255);
            }
            let name = p.file_name().expect("listed files have names");
            let target = d.join(name).with_extension("pgm");
            save_pgm(&canvas, &target).map_err(|e| input(format!("{}: {e}", target.display())))?;
        }
    }
    emit(sink, &out)?;
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, sink: &mut dyn Write, a: &EvalArgs) -> Result<(), CliError> {
    let scan_cfg = cfg.scan_config()?;
    let cascade = load_model(&pick(&a.cascade, &cfg.paths.cascade, "cascade")?)?;
    let ann_path = pick(&a.annotations, &cfg.paths.annotations, "annotation file")?;
    let annotations = load_annotations(&ann_path).map_err(input)?;
    let mut raw = Vec::with_capacity(annotations.len());
    for ann in &annotations {
        let img = load_image(&ann.image_path)?;
        raw.push((
            ann.image_path.clone(),
            raw_detections(&cascade, &img, &scan_cfg),
        ));
    }
    let grouped = |min_neighbors: usize| {
        let c = ScanConfig {
            group_min_neighbors: min_neighbors,
            ..scan_cfg.clone()
        };
        raw.iter()
            .map(|(p, d)| {
                let mut g = group_detections(d, &c);
                sort_detections(&mut g);
                (p.clone(), g)
            })
            .collect::<Vec<_>>()
    };
    let iou = cfg.eval.iou_threshold;
    let report =
        evaluate(&grouped(scan_cfg.group_min_neighbors), &annotations, iou).map_err(input)?;
    emit(sink, &report.to_text())?;
    if let Some(csv) = &a.operating_points {
        let mut points = Vec::new();
        for k in 1..=cfg.eval.max_min_neighbors.max(1) {
            let r = evaluate(&grouped(k), &annotations, iou).map_err(input)?;
            points.push(OperatingPoint {
                min_neighbors: k,
                detection_rate: r.detection_rate,
                false_positives_per_image: r.false_positives_per_image,
                precision: r.precision,
            });
        }
        write_file(csv, &operating_points_csv(&points))?;
        info!("operating points written to {}", csv.display());
    }
    Ok(())
}

fn cmd_count(cfg: &RunConfig, sink: &mut dyn Write, a: &CountArgs) -> Result<(), CliError> {
    let tcfg = cfg.tracking_config()?;
    let dir = pick(&a.frames, &cfg.paths.frames, "frame directory")?;
    let frames = list_pgms(&dir)?;
    if frames.is_empty() {
        return Err(input(format!("no frames in {}", dir.display())));
    }
    let detector = match &a.cascade {
        Some(p) => Some((load_model(p)?, cfg.scan_config()?)),
        None => None,
    };
    let mut pipeline = Pipeline::<f64>::new(tcfg).map_err(input)?;
    for p in &frames {
        let img = load_image(p)?;
        let r = match &detector {
            Some((c, s)) => {
                pipeline.push_detections(img.width(), img.height(), &detect_image(c, &img, s))
            }
            None => pipeline.push_frame(&img),
        };
        r.map_err(|e| input(format!("{}: {e}", p.display())))?;
    }
    emit(sink, &pipeline.finish().to_text())
}
