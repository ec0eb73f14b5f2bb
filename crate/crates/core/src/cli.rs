//! Command-line front end. Every tunable can also be set in a TOML file
//! passed with `--config`; flags given on the command line win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataset::{Dataset, GenerateConfig, Split};
use crate::error::{Error, Result};
use crate::eval::{Thresholds, NMS_DISTANCE};
use crate::fusion::{build_input, Ablation, InputCounts, InputRequest};
use crate::geometry::{ScaleMetric, ScaleRule};
use crate::io;
use crate::net::flops::{flop_count, loglog_slope, time_forward};
use crate::net::{ArchConfig, Params};
use crate::pipeline::{align_scenes, evaluate, gt_records, read_rotation_inits, trajectory_errors, AlignOptions};
use crate::refine::{init_test_pose, NetRefiner, OracleRefiner};
use crate::train::{train_epoch, training_items, write_metrics_row, TrainConfig, Trainer, METRICS_HEADER};

/// Environment variable holding the default dataset directory.
pub const DATA_ENV: &str = "SPARSE_ALIGN_DATA";

#[derive(Debug, Parser)]
#[command(name = "sparse-align", version, about = "Sparse render-and-compare CAD model alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset
    Generate(GenerateArgs),
    /// Train the alignment network
    Train(TrainArgs),
    /// Align every detection of a dataset split
    Align(AlignArgs),
    /// Score alignment records
    Evaluate(EvaluateArgs),
    /// FLOP counts and forward timings against input size
    Bench(BenchArgs),
    /// Write the sparse input rows of one detection
    DumpInput(DumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    All,
}

impl SplitArg {
    fn select(self, ds: &Dataset) -> Vec<crate::scene::SceneSample> {
        match self {
            SplitArg::Train => ds.subset(Split::Train),
            SplitArg::Val => ds.subset(Split::Val),
            SplitArg::All => ds.scenes.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset directory
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
}

/// Per-region row counts; unset flags keep the configured value.
#[derive(Debug, Args, Default)]
pub struct CountArgs {
    #[arg(long)]
    pub n_reproj: Option<usize>,
    #[arg(long)]
    pub n_bbox: Option<usize>,
    #[arg(long)]
    pub n_context: Option<usize>,
    #[arg(long)]
    pub n_cad: Option<usize>,
}

impl CountArgs {
    fn apply(&self, c: &mut InputCounts) {
        if let Some(v) = self.n_reproj {
            c.n_reproj = v;
        }
        if let Some(v) = self.n_bbox {
            c.n_bbox = v;
        }
        if let Some(v) = self.n_context {
            c.n_context = v;
        }
        if let Some(v) = self.n_cad {
            c.n_cad = v;
        }
    }
}

/// Input ablations; a flag only ever switches an ablation on.
#[derive(Debug, Args, Default)]
pub struct AblationArgs {
    #[arg(long)]
    pub no_depth: bool,
    #[arg(long)]
    pub no_normals: bool,
    #[arg(long)]
    pub no_rgb: bool,
    /// zero the pose, bounding-box and CAD-id rows
    #[arg(long)]
    pub no_extra: bool,
    /// sample context rows from every pixel of the image
    #[arg(long)]
    pub whole_image: bool,
}

impl AblationArgs {
    fn apply(&self, a: &mut Ablation) {
        a.no_depth |= self.no_depth;
        a.no_normals |= self.no_normals;
        a.no_rgb |= self.no_rgb;
        a.no_extra |= self.no_extra;
        a.whole_image |= self.whole_image;
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&io::read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory
    #[arg(long, env = DATA_ENV)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg: GenerateConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.n_scenes {
        cfg.n_scenes = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.width {
        cfg.scene.width = v;
    }
    if let Some(v) = a.height {
        cfg.scene.height = v;
    }
    if let Some(v) = a.val_fraction {
        cfg.val_fraction = v;
    }
    let ds = Dataset::generate(&cfg)?;
    ds.save(&a.out, Some(&cfg))?;
    let n_obj: usize = ds.scenes.iter().map(|s| s.objects.len()).sum();
    log::info!("wrote {} scenes ({n_obj} objects) to {}", ds.scenes.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint written periodically and at the end
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Per-(epoch, pass) metrics CSV
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Continue from `--checkpoint` if it exists
    #[arg(long)]
    pub resume: bool,
    /// Total number of epochs
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Worker threads, 0 = all cores
    #[arg(long)]
    pub workers: Option<usize>,
    /// Single-threaded
    #[arg(long)]
    pub deterministic: bool,
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let resumed = a.resume && a.checkpoint.exists();
    let (mut cfg, mut trainer) = if resumed {
        let (cfg, t) = io::load_checkpoint(&a.checkpoint)?;
        log::info!("resuming from {} at epoch {}", a.checkpoint.display(), t.epoch);
        (cfg, Some(t))
    } else {
        (load_config::<TrainConfig>(a.config.as_deref())?, None)
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if a.deterministic {
        cfg.workers = 1;
    }
    if !resumed {
        if let Some(v) = a.seed {
            cfg.seed = v;
        }
        if let Some(v) = a.lr {
            cfg.lamb.lr = v;
        }
        if let Some(v) = a.batch_size {
            cfg.batch_size = v;
        }
    } else if a.seed.is_some() || a.lr.is_some() || a.batch_size.is_some() {
        log::warn!("--seed, --lr and --batch-size are ignored when resuming");
    }
    cfg.validate()?;
    let mut trainer = match trainer.take() {
        Some(t) => t,
        None => Trainer::new(&cfg)?,
    };

    let ds = Dataset::load(&a.data.data)?;
    let scenes = ds.subset(Split::Train);
    let items = training_items(&scenes, &ds.library);
    log::info!("{} training scenes, {} annotated objects", scenes.len(), items.len());
    if let Some(m) = &a.metrics {
        if !resumed || !m.exists() {
            io::write_atomic(m, format!("{METRICS_HEADER}\n").as_bytes())?;
        }
    }
    if trainer.epoch >= cfg.epochs {
        return io::save_checkpoint(&a.checkpoint, &cfg, &trainer);
    }
    while trainer.epoch < cfg.epochs {
        let metrics = train_epoch(&mut trainer, &scenes, &ds.library, &items, &cfg).inspect_err(|e| {
            if matches!(e, Error::NonFiniteLoss(_)) && a.checkpoint.exists() {
                log::error!("training diverged; last good checkpoint is {}", a.checkpoint.display());
            }
        })?;
        if let Some(path) = &a.metrics {
            let mut buf = Vec::new();
            for m in &metrics {
                write_metrics_row(&mut buf, m).map_err(|e| Error::io(path, e))?;
            }
            io::append_line(path, String::from_utf8_lossy(&buf).trim_end())?;
        }
        let last = metrics.last().expect("at least one pass");
        log::info!(
            "epoch {} loss {:.4} c-acc {:.3} t-err {:.3}",
            trainer.epoch,
            last.loss.total,
            last.c_accuracy,
            last.t_error
        );
        if trainer.epoch % cfg.checkpoint_every.max(1) == 0 || trainer.epoch == cfg.epochs {
            io::save_checkpoint(&a.checkpoint, &cfg, &trainer)?;
        }
    }
    Ok(())
}

/// Settings of `align`, also readable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub n_iter: usize,
    /// defaults to the counts the network was trained with
    pub counts: Option<InputCounts>,
    pub ablation: Ablation,
    pub seed: u64,
    pub workers: usize,
    pub split: SplitArg,
    pub trajectory: bool,
    pub oracle: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            n_iter: 3,
            counts: None,
            ablation: Ablation::default(),
            seed: 0,
            workers: 0,
            split: SplitArg::Val,
            trajectory: false,
            oracle: false,
        }
    }
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained network (not needed with --oracle)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output records file
    #[arg(long)]
    pub out: PathBuf,
    /// Use the closed-form ground-truth update instead of the network
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[command(flatten)]
    pub counts: CountArgs,
    #[command(flatten)]
    pub ablation: AblationArgs,
    /// Initial rotations per detection instead of bin selection
    #[arg(long)]
    pub rot_init_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
    /// Store every refinement step in the records
    #[arg(long)]
    pub trajectory: bool,
}

pub fn cmd_align(a: &AlignArgs) -> Result<()> {
    let mut cfg: AlignConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.n_iter {
        cfg.n_iter = v;
    }
    if let Some(v) = a.split {
        cfg.split = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if a.deterministic {
        cfg.workers = 1;
    }
    cfg.oracle |= a.oracle;
    cfg.trajectory |= a.trajectory;
    a.ablation.apply(&mut cfg.ablation);

    let ckpt = match (&a.checkpoint, cfg.oracle) {
        (Some(p), false) => Some(io::load_checkpoint(p)?),
        (None, false) => return Err(Error::Config("--checkpoint is required unless --oracle is set".into())),
        (_, true) => None,
    };
    let mut counts = cfg.counts.or_else(|| ckpt.as_ref().map(|(c, _)| c.counts)).unwrap_or_default();
    a.counts.apply(&mut counts);

    let mut opts = AlignOptions {
        n_iter: cfg.n_iter,
        counts,
        ablation: cfg.ablation,
        seed: cfg.seed,
        workers: cfg.workers,
        keep_trajectory: cfg.trajectory,
        ..AlignOptions::default()
    };
    if let Some(p) = &a.rot_init_file {
        opts.rotation_inits = read_rotation_inits(p)?;
    }
    let ds = Dataset::load(&a.data.data)?;
    let scenes = cfg.split.select(&ds);
    let records = match &ckpt {
        Some((_, t)) => {
            let r = NetRefiner { params: &t.params, counts, ablation: cfg.ablation };
            align_scenes(&r, &scenes, &ds.library, &opts)?
        }
        None => align_scenes(&OracleRefiner, &scenes, &ds.library, &opts)?,
    };
    io::write_records(&a.out, &records)?;
    log::info!("aligned {} detections in {} scenes", records.len(), scenes.len());
    Ok(())
}

/// Settings of `evaluate`, also readable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: SplitArg,
    pub nms_distance: f64,
    pub translation: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    pub legacy_scale: bool,
    /// per-axis scale test instead of the summed one
    pub per_axis_scale: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        EvalConfig {
            split: SplitArg::Val,
            nms_distance: NMS_DISTANCE,
            translation: t.translation,
            rotation_deg: t.rotation_deg,
            scale: t.scale,
            legacy_scale: false,
            per_axis_scale: false,
        }
    }
}

impl EvalConfig {
    pub fn thresholds(&self, metric: ScaleMetric) -> Thresholds {
        Thresholds {
            translation: self.translation,
            rotation_deg: self.rotation_deg,
            scale: self.scale,
            scale_metric: metric,
            scale_rule: if self.per_axis_scale { ScaleRule::PerAxis } else { ScaleRule::Summed },
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Records written by `align`
    #[arg(long)]
    pub records: PathBuf,
    /// Also report the legacy scale metric, which lets per-axis errors cancel
    #[arg(long)]
    pub legacy_scale: bool,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub nms_distance: Option<f64>,
    /// Machine-readable report
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut cfg: EvalConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.split {
        cfg.split = v;
    }
    if let Some(v) = a.nms_distance {
        cfg.nms_distance = v;
    }
    cfg.legacy_scale |= a.legacy_scale;
    let ds = Dataset::load(&a.data.data)?;
    let scenes = cfg.split.select(&ds);
    let preds = io::read_records(&a.records)?;
    let gts = gt_records(&scenes, &ds.library);
    let report = evaluate(&preds, &gts, &scenes, cfg.nms_distance, &cfg.thresholds(ScaleMetric::Corrected))?;
    println!("{report}");
    let mut csv = report.to_csv();
    // camera-frame errors of each refinement step, when trajectories were kept
    let steps = trajectory_errors(&preds, &gts);
    if !steps.is_empty() {
        let fmt: Vec<String> = steps.iter().map(|e| format!("{e:.3}")).collect();
        println!("mean translation error per step (m): {}", fmt.join(" "));
        for (i, e) in steps.iter().enumerate() {
            csv += &format!("t_error_step,{i},{e:.6}\n");
        }
    }
    if cfg.legacy_scale {
        let legacy = evaluate(&preds, &gts, &scenes, cfg.nms_distance, &cfg.thresholds(ScaleMetric::Legacy))?;
        println!("legacy scale metric:\n{legacy}");
        for line in legacy.to_csv().lines().skip(1) {
            let (metric, rest) = line.split_once(',').expect("csv row");
            csv += &format!("legacy_{metric},{rest}\n");
        }
    }
    if let Some(p) = &a.csv {
        io::write_atomic(p, csv.as_bytes())?;
    }
    Ok(())
}

/// Settings of `bench`, also readable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub arch: ArchConfig,
    /// sparse input sizes used for the timing fit
    pub sizes: Vec<usize>,
    /// dense reference: one row per pixel
    pub full_width: usize,
    pub full_height: usize,
    /// the sparse configuration the dense one is compared with
    pub counts: InputCounts,
    pub id_bits: u32,
    pub repeats: usize,
    /// also time the dense reference (slow, several GB of memory)
    pub time_full: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            arch: ArchConfig::default(),
            sizes: vec![100, 1_000, 10_000],
            full_width: 480,
            full_height: 360,
            counts: InputCounts::default(),
            id_bits: 12,
            repeats: 3,
            time_full: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub label: String,
    pub n_input: usize,
    pub flops: u64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// log-log slope of time against input size over `sizes`
    pub slope: f64,
    /// dense FLOPs over sparse FLOPs
    pub flop_ratio: f64,
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.arch.validate()?;
    let params = Params::<f32>::init(&cfg.arch, cfg.seed)?;
    let mut rows = Vec::new();
    let mut pts = Vec::new();
    for &n in &cfg.sizes {
        let t = time_forward(&params, n, cfg.repeats, cfg.seed)?;
        pts.push((n as f64, t));
        rows.push(BenchRow { label: format!("{n}"), n_input: n, flops: flop_count(&cfg.arch, n), seconds: Some(t) });
    }
    let n_sparse = crate::fusion::n_input(
        &cfg.counts,
        &Ablation::default(),
        cfg.id_bits,
        cfg.full_width as u32,
        cfg.full_height as u32,
    );
    let n_full = cfg.full_width * cfg.full_height;
    let sparse_t = if cfg.time_full { Some(time_forward(&params, n_sparse, cfg.repeats, cfg.seed)?) } else { None };
    let full_t = if cfg.time_full { Some(time_forward(&params, n_full, 1, cfg.seed)?) } else { None };
    rows.push(BenchRow {
        label: "sparse".into(),
        n_input: n_sparse,
        flops: flop_count(&cfg.arch, n_sparse),
        seconds: sparse_t,
    });
    rows.push(BenchRow {
        label: "full-image".into(),
        n_input: n_full,
        flops: flop_count(&cfg.arch, n_full),
        seconds: full_t,
    });
    Ok(BenchReport {
        slope: if pts.len() >= 2 { loglog_slope(&pts) } else { f64::NAN },
        flop_ratio: flop_count(&cfg.arch, n_full) as f64 / flop_count(&cfg.arch, n_sparse) as f64,
        rows,
    })
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,n_input,flops,seconds\n");
        for r in &self.rows {
            let t = r.seconds.map_or_else(String::new, |t| format!("{t:.6}"));
            s += &format!("{},{},{},{t}\n", r.label, r.n_input, r.flops);
        }
        s
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<12} {:>8} {:>16} {:>12}", "input", "rows", "MACs", "forward ms")?;
        for r in &self.rows {
            let t = r.seconds.map_or_else(|| "-".to_string(), |t| format!("{:.2}", 1e3 * t));
            writeln!(f, "{:<12} {:>8} {:>16} {:>12}", r.label, r.n_input, r.flops, t)?;
        }
        writeln!(f, "time-vs-rows log-log slope {:.3}", self.slope)?;
        write!(f, "full-image / sparse MAC ratio {:.1}", self.flop_ratio)
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the small architecture (64 latents of width 128)
    #[arg(long)]
    pub small: bool,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Also time the dense reference
    #[arg(long)]
    pub time_full: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = load_config(a.config.as_deref())?;
    if a.small {
        cfg.arch = ArchConfig::small();
    }
    if let Some(v) = &a.sizes {
        cfg.sizes = v.clone();
    }
    if let Some(v) = a.repeats {
        cfg.repeats = v;
    }
    cfg.time_full |= a.time_full;
    let report = run_bench(&cfg)?;
    println!("{report}");
    if let Some(p) = &a.csv {
        io::write_atomic(p, report.to_csv().as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DumpPose {
    /// ground-truth pose
    Gt,
    /// test-time initialization of the first rotation bin
    Init,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub scene: String,
    #[arg(long, default_value_t = 0)]
    pub detection: usize,
    #[arg(long, value_enum, default_value_t = DumpPose::Init)]
    pub pose: DumpPose,
    #[command(flatten)]
    pub counts: CountArgs,
    #[command(flatten)]
    pub ablation: AblationArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rows file
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_dump(a: &DumpArgs) -> Result<()> {
    let ds = Dataset::load(&a.data.data)?;
    let scene =
        ds.scenes.iter().find(|s| s.id == a.scene).ok_or_else(|| Error::Config(format!("no scene '{}'", a.scene)))?;
    let det = scene
        .boxes
        .get(a.detection)
        .ok_or_else(|| Error::Config(format!("scene '{}' has no detection {}", a.scene, a.detection)))?;
    let obj = &scene.objects[det.object];
    let model =
        ds.library.get(obj.model_id).ok_or_else(|| Error::Config(format!("unknown model id {}", obj.model_id)))?;
    let pose = match a.pose {
        DumpPose::Gt => obj.pose,
        DumpPose::Init => init_test_pose(&det.bbox, &scene.intrinsics, det.category, 0.0),
    };
    let mut counts = InputCounts::default();
    a.counts.apply(&mut counts);
    let mut ablation = Ablation::default();
    a.ablation.apply(&mut ablation);
    let x = build_input(
        &InputRequest {
            maps: &scene.maps,
            k: &scene.intrinsics,
            model,
            pose: &pose,
            bbox: &det.bbox,
            counts: &counts,
            ablation: &ablation,
        },
        a.seed,
    )?;
    io::write_atomic(&a.out, &io::encode_rows(&x))?;
    println!("{} rows", x.n_rows());
    for t in 0..=8u8 {
        println!("token {t}: {}", x.count_token(t));
    }
    Ok(())
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::WidthMismatch { .. } | Error::IdOverflow { .. } | Error::InvalidShape(_) => 1,
        Error::NonFiniteLoss(_) | Error::ZeroQuaternion | Error::DegenerateNormal | Error::BehindCamera(_) => 3,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Version { .. }
        | Error::EmptyMesh
        | Error::PlacementFailed(_) => 2,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Align(a) => cmd_align(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::DumpInput(a) => cmd_dump(a),
    }
}
