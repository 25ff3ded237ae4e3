//! `wrin`: cost analysis, gradient checks, training, evaluation and KITTI-style
//! detection scoring for wide-residual-inception networks.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error,
//! 3 numeric failure (non-finite values during training or evaluation).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use wrin_core::checkpoint::{load_checkpoint, load_optimizer_state, save_checkpoint};
use wrin_core::cost::analyze;
use wrin_core::data::cifar::{
    read_cifar, split_paths, synthetic_records, to_image_set, ChannelStats, CifarRecord, CifarVariant, SyntheticSpec,
};
use wrin_core::data::kitti::{read_kitti_dir, Difficulty, DifficultyFilter};
use wrin_core::data::ImageSet;
use wrin_core::detect::eval::DEFAULT_CLASSES;
use wrin_core::detect::{evaluate_kitti, ApMode, EvalConfig};
use wrin_core::gradcheck::{check_config, run_item, run_suite, CheckItem, CheckOptions, SUITE_ITEMS};
use wrin_core::optim::TrainConfig;
use wrin_core::train::{evaluate, train_epochs, write_text, TrainOptions};
use wrin_core::{build_network, builtin_config, NetworkConfig, BUILTIN_NETWORKS};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Seed of the synthetic CIFAR-format generator used by `--synthetic`.
const SYNTHETIC_SEED: u64 = 2024;

#[derive(Parser)]
#[command(name = "wrin", version, about = "Wide-residual-inception network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter, MAC and receptive-field report for a network.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient checks in double precision.
    Gradcheck(GradcheckArgs),
    /// Train a classifier on CIFAR-10/100.
    Train(TrainArgs),
    /// Top-1 error of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Score KITTI-format detections against groundtruth labels.
    DetectEval(DetectEvalArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Built-in network name or path to a JSON network config.
    #[arg(long)]
    net: String,
    /// Input shape as C,H,W (defaults to the network's own input shape).
    #[arg(long, value_parser = parse_shape)]
    input_shape: Option<[usize; 3]>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds per item.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Restrict to these suite items (repeatable).
    #[arg(long = "item")]
    items: Vec<String>,
    /// Check a whole network (built-in name or config) at 8x8 input instead of the suite.
    #[arg(long)]
    net: Option<String>,
    /// Arithmetic precision in bits; only 64 is supported.
    #[arg(long, default_value_t = 64)]
    precision: u32,
    /// Central-difference step.
    #[arg(long, default_value_t = wrin_core::gradcheck::STEP)]
    step: f64,
    #[arg(long)]
    json: bool,
    /// Perturb analytic gradients (negative control; the check must fail).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Cifar10,
    Cifar100,
}

impl Dataset {
    fn variant(self) -> CifarVariant {
        match self {
            Dataset::Cifar10 => CifarVariant::Cifar10,
            Dataset::Cifar100 => CifarVariant::Cifar100,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "cifar10")]
    dataset: Dataset,
    /// Directory holding the binary batches (or the extracted archive directory).
    #[arg(long, env = "WRIN_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Use N class-structured synthetic training images instead of files on disk.
    #[arg(long, value_name = "N", conflicts_with = "data_dir")]
    synthetic: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Built-in network name or path to a JSON network config.
    #[arg(long)]
    net: String,
    #[command(flatten)]
    data: DataArgs,
    /// JSON training config; keys present in the file override command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train on the first N images only.
    #[arg(long)]
    subset: Option<usize>,
    /// Stop once an epoch reaches this training accuracy.
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Disable random crop and flip.
    #[arg(long)]
    no_augment: bool,
    /// Write a checkpoint every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Output directory for log.csv, checkpoints and stats.json.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Resume from a checkpoint written by a previous run (its `.opt` sidecar
    /// restores the momentum buffers).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Epochs already completed by the resumed run (read from `epoch_NNNN.ckpt` names by default).
    #[arg(long, requires = "resume")]
    start_epoch: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Built-in network name or path to a JSON network config.
    #[arg(long)]
    net: String,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Normalization statistics (defaults to stats.json next to the checkpoint).
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DifficultyArg {
    Easy,
    Moderate,
    Hard,
    /// Report all three buckets.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApModeArg {
    ElevenPoint,
    AllPoint,
}

#[derive(Args)]
struct DetectEvalArgs {
    /// Directory of KITTI label files (one `<id>.txt` per image).
    #[arg(long)]
    gt_dir: PathBuf,
    /// Directory of detection files with a trailing score column.
    #[arg(long)]
    det_dir: PathBuf,
    /// IoU threshold for a true positive.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, value_enum, default_value = "all")]
    difficulty: DifficultyArg,
    #[arg(long, value_enum, default_value = "eleven-point")]
    ap_mode: ApModeArg,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CLASSES.map(String::from))]
    classes: Vec<String>,
    #[arg(long)]
    json: bool,
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(format!("expected three positive integers C,H,W, got `{s}`")),
    }
}

fn resolve_net(spec: &str) -> Result<NetworkConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        return NetworkConfig::load(path).with_context(|| format!("loading network config {}", path.display()));
    }
    builtin_config(spec).with_context(|| {
        format!(
            "`{spec}` is neither a config file nor a built-in network ({})",
            BUILTIN_NETWORKS.join(", ")
        )
    })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<u8> {
    let cfg = resolve_net(&args.net)?;
    let shape = args.input_shape.unwrap_or(cfg.input_shape);
    let graph = build_network::<f32>(&cfg.with_input(shape), 0)?;
    let report = analyze(&graph, shape)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(0)
}

#[derive(Serialize)]
struct GradcheckReport {
    first_seed: u64,
    seeds: usize,
    tolerance: f64,
    passed: bool,
    items: Vec<CheckItem>,
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<u8> {
    if args.precision != 64 {
        bail!("only --precision 64 is supported");
    }
    let opts = CheckOptions {
        step: args.step,
        corrupt: args.corrupt,
        ..CheckOptions::default()
    };
    let items = if let Some(net) = &args.net {
        let cfg = resolve_net(net)?;
        let cfg = cfg.clone().with_input([cfg.input_shape[0], 8, 8]);
        (0..args.seeds as u64)
            .map(|s| check_config(&cfg, args.seed + s, &opts))
            .collect::<wrin_core::Result<Vec<_>>>()?
    } else if args.items.is_empty() {
        run_suite(args.seed, args.seeds, &opts)?
    } else {
        for item in &args.items {
            if !SUITE_ITEMS.contains(&item.as_str()) {
                bail!("unknown item `{item}`; known items: {}", SUITE_ITEMS.join(", "));
            }
        }
        args.items
            .iter()
            .map(|item| run_item(item, args.seed, args.seeds, &opts))
            .collect::<wrin_core::Result<Vec<_>>>()?
    };
    let report = GradcheckReport {
        first_seed: args.seed,
        seeds: args.seeds,
        tolerance: wrin_core::gradcheck::TOLERANCE,
        passed: items.iter().all(|i| i.passed),
        items,
    };
    if args.json {
        print_json(&report)?;
    } else {
        for i in &report.items {
            println!(
                "{} {:<24} max rel error {:.3e}  ({} coordinates, {} skipped)",
                if i.passed { "PASS" } else { "FAIL" },
                i.name,
                i.max_rel_error,
                i.coordinates,
                i.skipped
            );
        }
        println!(
            "{}: {} items, seeds {}..{}, tolerance {:e}",
            if report.passed { "all passed" } else { "FAILED" },
            report.items.len(),
            args.seed,
            args.seed + args.seeds as u64,
            report.tolerance
        );
    }
    Ok(if report.passed { 0 } else { EXIT_CHECK_FAILED })
}

fn synthetic_split(n: usize, classes: usize, train: bool) -> Vec<CifarRecord> {
    let held_out = (n / 5).max(classes);
    let spec = SyntheticSpec {
        classes,
        ..SyntheticSpec::default()
    };
    let mut all = synthetic_records(n + held_out, spec, SYNTHETIC_SEED);
    if train {
        all.truncate(n);
        all
    } else {
        all.split_off(n)
    }
}

fn load_split(data: &DataArgs, train: bool) -> Result<Vec<CifarRecord>> {
    let variant = data.dataset.variant();
    if let Some(n) = data.synthetic {
        if n == 0 {
            bail!("--synthetic needs at least one image");
        }
        return Ok(synthetic_split(n, variant.num_classes(), train));
    }
    let Some(dir) = &data.data_dir else {
        bail!("no data directory: pass --data-dir, set WRIN_DATA_DIR, or use --synthetic N");
    };
    let paths = split_paths(dir, variant, train)?;
    Ok(read_cifar(&paths, variant)?)
}

/// Keys present in the JSON file replace the corresponding flag values.
fn apply_config_file(config: TrainConfig, path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overrides: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let serde_json::Value::Object(overrides) = overrides else {
        bail!("{} must hold a JSON object", path.display());
    };
    let mut merged = serde_json::to_value(&config)?;
    for (k, v) in overrides {
        if merged.get(&k).is_none() {
            bail!("{}: unknown training option `{k}`", path.display());
        }
        merged[k] = v;
    }
    serde_json::from_value(merged).with_context(|| format!("invalid training config {}", path.display()))
}

fn epoch_from_name(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("epoch_")?.parse().ok()
}

#[derive(Serialize)]
struct TrainSummary {
    network: String,
    epochs_run: usize,
    reached_target: bool,
    final_loss: Option<f64>,
    final_train_accuracy: Option<f64>,
    out_dir: PathBuf,
}

fn train_cmd(args: TrainArgs) -> Result<u8> {
    let variant = args.data.dataset.variant();
    let net = resolve_net(&args.net)?.with_classes(variant.num_classes());
    let mut config = TrainConfig::classification();
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.lr_initial = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.checkpoint_every {
        config.checkpoint_every = v;
    }
    if args.target_accuracy.is_some() {
        config.target_train_accuracy = args.target_accuracy;
    }
    if args.no_augment {
        config.augment = false;
    }
    if let Some(path) = &args.config {
        config = apply_config_file(config, path)?;
    }
    config.validate()?;

    let mut records = load_split(&args.data, true)?;
    if let Some(n) = args.subset {
        records.truncate(n);
    }
    let stats = ChannelStats::compute(&records);
    let data = to_image_set(&records, variant, &stats);
    if data.shape != net.input_shape {
        bail!(
            "dataset images are {:?} but {} expects {:?}",
            data.shape,
            net.name,
            net.input_shape
        );
    }

    let mut graph = build_network::<f32>(&net, config.seed)?;
    let mut start_epoch = 0;
    let mut optimizer = None;
    if let Some(path) = &args.resume {
        load_checkpoint(&mut graph, path).with_context(|| format!("resuming from {}", path.display()))?;
        start_epoch = match args.start_epoch.or_else(|| epoch_from_name(path)) {
            Some(e) => e,
            None => bail!(
                "cannot tell how many epochs {} covers; pass --start-epoch",
                path.display()
            ),
        };
        let opt_path = path.with_extension("opt");
        if opt_path.is_file() {
            optimizer = Some(
                load_optimizer_state(&graph, &opt_path)
                    .with_context(|| format!("loading optimizer state {}", opt_path.display()))?,
            );
        } else {
            eprintln!("warning: {} not found; momentum restarts from zero", opt_path.display());
        }
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("stats.json"), &serde_json::to_string_pretty(&stats)?)?;
    write_text(
        &args.out.join("train_config.json"),
        &serde_json::to_string_pretty(&config)?,
    )?;
    write_text(&args.out.join("network.json"), &net.to_json())?;

    let options = TrainOptions {
        start_epoch,
        out_dir: Some(args.out.clone()),
        optimizer,
    };
    let log = train_epochs(&mut graph, &data, &config, &options, &mut |r| {
        eprintln!(
            "epoch {:>4}  lr {:.5}  loss {:.4}  acc {:.4}",
            r.epoch, r.lr, r.loss, r.acc
        );
    })?;
    if !args.out.join("final.ckpt").is_file() {
        save_checkpoint(&graph, &args.out.join("final.ckpt"))?;
    }
    let summary = TrainSummary {
        network: net.name.clone(),
        epochs_run: log.records.len(),
        reached_target: log.reached_target,
        final_loss: log.records.last().map(|r| r.loss),
        final_train_accuracy: log.final_accuracy(),
        out_dir: args.out.clone(),
    };
    if args.json {
        print_json(&summary)?;
    } else {
        println!(
            "{}: {} epochs, final train accuracy {:.4}; outputs in {}",
            summary.network,
            summary.epochs_run,
            summary.final_train_accuracy.unwrap_or(0.0),
            summary.out_dir.display()
        );
    }
    Ok(0)
}

fn eval_cmd(args: EvalArgs) -> Result<u8> {
    let variant = args.data.dataset.variant();
    let net = resolve_net(&args.net)?.with_classes(variant.num_classes());
    let mut graph = build_network::<f32>(&net, 0)?;
    load_checkpoint(&mut graph, &args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let stats_path = args.stats.clone().or_else(|| {
        args.checkpoint
            .parent()
            .map(|d| d.join("stats.json"))
            .filter(|p| p.is_file())
    });
    let stats: ChannelStats = match stats_path {
        Some(p) => {
            serde_json::from_str(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => ChannelStats::compute(&load_split(&args.data, true)?),
    };
    let records = load_split(&args.data, false)?;
    let data: ImageSet = to_image_set(&records, variant, &stats);
    let report = evaluate(&graph, &data, args.batch_size)?;
    if !report.loss.is_finite() {
        return Err(wrin_core::Error::NonFinite { node: "loss".into() }.into());
    }
    if args.json {
        print_json(&report)?;
    } else {
        println!(
            "{} on {} test images: top-1 error {:.2}%, loss {:.4}",
            net.name,
            report.samples,
            report.error * 100.0,
            report.loss
        );
    }
    Ok(0)
}

fn detect_eval_cmd(args: DetectEvalArgs) -> Result<u8> {
    if !(args.iou > 0.0 && args.iou <= 1.0) {
        bail!("--iou must be in (0, 1], got {}", args.iou);
    }
    if !args.det_dir.is_dir() {
        bail!("detection directory {} does not exist", args.det_dir.display());
    }
    let gt = read_kitti_dir(&args.gt_dir).with_context(|| format!("reading {}", args.gt_dir.display()))?;
    if gt.is_empty() {
        bail!("no label files in {}", args.gt_dir.display());
    }
    let det = read_kitti_dir(&args.det_dir).with_context(|| format!("reading {}", args.det_dir.display()))?;
    for (id, objs) in &det {
        if let Some(o) = objs.iter().find(|o| o.score.is_none()) {
            bail!("{id}.txt: detection `{}` has no score column", o.kind);
        }
    }
    let filters: Vec<DifficultyFilter> = match args.difficulty {
        DifficultyArg::Easy => vec![DifficultyFilter::UpTo(Difficulty::Easy)],
        DifficultyArg::Moderate => vec![DifficultyFilter::UpTo(Difficulty::Moderate)],
        DifficultyArg::Hard => vec![DifficultyFilter::UpTo(Difficulty::Hard)],
        DifficultyArg::All => Difficulty::LEVELS.map(DifficultyFilter::UpTo).to_vec(),
    };
    let config = EvalConfig {
        iou_threshold: args.iou,
        ap_mode: match args.ap_mode {
            ApModeArg::ElevenPoint => ApMode::ElevenPoint,
            ApModeArg::AllPoint => ApMode::AllPoint,
        },
    };
    let classes: Vec<&str> = args.classes.iter().map(String::as_str).collect();
    let report = evaluate_kitti(&gt, &det, &classes, &filters, &config)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(0)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<wrin_core::Error>() {
        Some(wrin_core::Error::NonFinite { .. }) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::DetectEval(a) => detect_eval_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
