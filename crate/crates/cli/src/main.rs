//! `lesionviz` command line: train, evaluate and inspect lesion classifiers.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use lesionviz::data::image::{center_crop, preprocess};
use lesionviz::train::final_checkpoint_path;
use lesionviz::viz::{
    extract_feature_map, occlusion_map, render_overlay, saliency, save_png, FeatureMapId,
    Heatmap, OcclusionConfig, DEFAULT_ALPHA_MAX,
};
use lesionviz::{
    eval, evaluate, load_checkpoint, train, Checkpoint, Tensor, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "lesionviz",
    version,
    about = "Train a skin-lesion CNN and render its decision-support maps",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier from a manifest of labeled images
    Train(TrainArgs),
    /// Score a manifest with a checkpoint and report ROC-AUC
    Eval(EvalArgs),
    /// Render one feature map as a green overlay PNG
    Featmap(FeatmapArgs),
    /// Render a grid: rows are images, columns are raw + selected maps
    Grid(GridArgs),
    /// Render a gradient saliency overlay
    Saliency(SaliencyArgs),
    /// Render an occlusion-sensitivity overlay
    Occlude(OccludeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest CSV listing `path,label` training samples
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for checkpoints and train.log
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of training epochs [default: 192]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 96]
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate [default: 0.0001]
    #[arg(long)]
    lr: Option<f64>,
    /// Adam first-moment decay [default: 0.9]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999]
    #[arg(long)]
    beta2: Option<f64>,
    /// Master RNG seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Extra loss weight on malignant samples [default: unweighted]
    #[arg(long = "pos-weight")]
    pos_weight: Option<f64>,
    /// Write epoch-N.ckpt every N epochs; 0 keeps only final.ckpt [default: 0]
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<usize>,
    /// Worker threads; 1 guarantees bitwise determinism [default: 1]
    #[arg(long)]
    threads: Option<usize>,
    /// Flat `key = value` config file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score with
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest CSV of `path,label` samples to evaluate
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report file; ROC points go to the same path with extension `roc`
    #[arg(long)]
    report: Option<PathBuf>,
    /// Flat `key = value` config file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FeatmapArgs {
    /// Checkpoint to inspect
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input image (8-bit RGB)
    #[arg(long)]
    image: Option<PathBuf>,
    /// Convolution layer index, 0 = first [default: none, required]
    #[arg(long)]
    layer: Option<usize>,
    /// Filter index within the layer
    #[arg(long)]
    filter: Option<usize>,
    /// Overlay opacity ceiling in [0,1] [default: 0.7]
    #[arg(long = "alpha-max")]
    alpha_max: Option<f32>,
    /// Output PNG path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump the raw map as a space-separated text grid
    #[arg(long = "map-out")]
    map_out: Option<PathBuf>,
    /// Flat `key = value` config file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Checkpoint to inspect
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Text file with one image path per line (relative to the file)
    #[arg(long)]
    images: Option<PathBuf>,
    /// Comma list of `layer:filter` ids, e.g. `0:3,7:28`
    #[arg(long)]
    ids: Option<String>,
    /// Overlay opacity ceiling in [0,1] [default: 0.7]
    #[arg(long = "alpha-max")]
    alpha_max: Option<f32>,
    /// Output PNG path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` config file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SaliencyArgs {
    /// Checkpoint to inspect
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input image (8-bit RGB)
    #[arg(long)]
    image: Option<PathBuf>,
    /// Overlay opacity ceiling in [0,1] [default: 0.7]
    #[arg(long = "alpha-max")]
    alpha_max: Option<f32>,
    /// Output PNG path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump the raw map as a space-separated text grid
    #[arg(long = "map-out")]
    map_out: Option<PathBuf>,
    /// Flat `key = value` config file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OccludeArgs {
    /// Checkpoint to inspect
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input image (8-bit RGB)
    #[arg(long)]
    image: Option<PathBuf>,
    /// Occlusion patch side length in pixels [default: 32]
    #[arg(long)]
    patch: Option<usize>,
    /// Patch step in pixels [default: 8]
    #[arg(long)]
    stride: Option<usize>,
    /// Fill value for occluded pixels, in [0,1] image units [default: 0.5]
    #[arg(long)]
    fill: Option<f32>,
    /// Overlay opacity ceiling in [0,1] [default: 0.7]
    #[arg(long = "alpha-max")]
    alpha_max: Option<f32>,
    /// Output PNG path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump the raw map as a space-separated text grid
    #[arg(long = "map-out")]
    map_out: Option<PathBuf>,
    /// Flat `key = value` config file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(lesionviz::Error),
}

impl From<lesionviz::Error> for Failure {
    fn from(e: lesionviz::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; only real parse
            // problems map to the usage exit code.
            let failed = e.use_stderr();
            let _ = e.print();
            return if failed { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Featmap(args) => run_featmap(args),
        Command::Grid(args) => run_grid(args),
        Command::Saliency(args) => run_saliency(args),
        Command::Occlude(args) => run_occlude(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `lesionviz <subcommand> --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Config-file entries not yet claimed by a flag lookup.
struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> CliResult<FileConfig> {
        let mut entries = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Failure::Usage(format!("cannot read config file {}: {e}", p.display()))
            })?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return usage_err(format!(
                        "{}:{}: expected `key = value`, got `{line}`",
                        p.display(),
                        i + 1
                    ));
                };
                let key = key.trim().to_string();
                if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                    return usage_err(format!(
                        "{}:{}: duplicate key `{key}`",
                        p.display(),
                        i + 1
                    ));
                }
            }
        }
        Ok(FileConfig { entries })
    }

    /// Flag value if given, else the parsed config-file entry.
    fn resolve<T>(&mut self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let entry = self.entries.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match entry {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => usage_err(format!("config key `{key}`: cannot parse `{raw}`: {e}")),
            },
        }
    }

    /// Reject leftovers so typos in config files fail loudly.
    fn finish(self) -> CliResult<()> {
        match self.entries.keys().next() {
            Some(key) => usage_err(format!("unknown config key `{key}`")),
            None => Ok(()),
        }
    }
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    match value {
        Some(v) => Ok(v),
        None => usage_err(format!("missing `--{flag}` (pass the flag or set it in --config)")),
    }
}

fn print_config(entries: &[(&str, String)]) {
    println!("resolved configuration:");
    for (key, value) in entries {
        println!("  {key} = {value}");
    }
}

fn resolve_alpha(file: &mut FileConfig, flag: Option<f32>) -> CliResult<f32> {
    let alpha = file.resolve(flag, "alpha-max")?.unwrap_or(DEFAULT_ALPHA_MAX);
    if !(0.0..=1.0).contains(&alpha) {
        return usage_err(format!("--alpha-max must lie in [0, 1], got {alpha}"));
    }
    Ok(alpha)
}

fn run_train(args: TrainArgs) -> CliResult<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let manifest = require(file.resolve(args.manifest, "manifest")?, "manifest")?;
    let out = require(file.resolve(args.out, "out")?, "out")?;

    let mut config = TrainConfig::default();
    if let Some(v) = file.resolve(args.epochs, "epochs")? {
        config.epochs = v;
    }
    if let Some(v) = file.resolve(args.batch, "batch")? {
        config.batch_size = v;
    }
    if let Some(v) = file.resolve(args.lr, "lr")? {
        config.adam.lr = v;
    }
    if let Some(v) = file.resolve(args.beta1, "beta1")? {
        config.adam.beta1 = v;
    }
    if let Some(v) = file.resolve(args.beta2, "beta2")? {
        config.adam.beta2 = v;
    }
    if let Some(v) = file.resolve(args.seed, "seed")? {
        config.seed = v;
    }
    config.pos_weight = file.resolve(args.pos_weight, "pos-weight")?;
    if let Some(v) = file.resolve(args.checkpoint_every, "checkpoint-every")? {
        config.checkpoint_every = v;
    }
    if let Some(v) = file.resolve(args.threads, "threads")? {
        config.threads = v;
    }
    file.finish()?;

    print_config(&[
        ("manifest", manifest.display().to_string()),
        ("out", out.display().to_string()),
        ("epochs", config.epochs.to_string()),
        ("batch", config.batch_size.to_string()),
        ("lr", config.adam.lr.to_string()),
        ("beta1", config.adam.beta1.to_string()),
        ("beta2", config.adam.beta2.to_string()),
        ("seed", config.seed.to_string()),
        (
            "pos-weight",
            config.pos_weight.map_or_else(|| "none".to_string(), |v| v.to_string()),
        ),
        ("checkpoint-every", config.checkpoint_every.to_string()),
        ("threads", config.threads.to_string()),
    ]);

    train(&manifest, &config, &out)?;
    println!("wrote {}", final_checkpoint_path(&out).display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> CliResult<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let checkpoint = require(file.resolve(args.checkpoint, "checkpoint")?, "checkpoint")?;
    let manifest = require(file.resolve(args.manifest, "manifest")?, "manifest")?;
    let report_path = file.resolve(args.report, "report")?;
    file.finish()?;

    print_config(&[
        ("checkpoint", checkpoint.display().to_string()),
        ("manifest", manifest.display().to_string()),
        (
            "report",
            report_path
                .as_ref()
                .map_or_else(|| "none".to_string(), |p| p.display().to_string()),
        ),
    ]);

    let ckpt = load_checkpoint(&checkpoint)?;
    let report = evaluate(&ckpt, &manifest)?;

    match report.auc {
        Some(auc) => println!("auc = {auc}"),
        None => println!("auc = undefined (single-class manifest)"),
    }
    let c = &report.confusion;
    println!("accuracy = {} ({}/{} at threshold 0.5)", c.accuracy(),
        c.true_positive + c.true_negative, c.total());
    println!(
        "tp={} fp={} tn={} fn={}",
        c.true_positive, c.false_positive, c.true_negative, c.false_negative
    );

    if let Some(path) = report_path {
        eval::write_report(&report, &path)?;
        let roc_path = path.with_extension("roc");
        eval::write_roc_points(&report, &roc_path)?;
        println!("wrote {}", path.display());
        println!("wrote {}", roc_path.display());
    }
    Ok(())
}

/// Decode, resize to 300x300 and center-crop to the checkpoint's input size.
fn load_input(path: &Path, ckpt: &Checkpoint) -> CliResult<Tensor<f32>> {
    let img = preprocess(path)?;
    Ok(center_crop(&img, ckpt.model.config.input_shape[1])?)
}

fn display_or_none(path: &Option<PathBuf>) -> String {
    path.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

/// Dump the map at its native resolution, one row per line, for oracles.
fn write_map_text(map: &Heatmap, path: Option<&Path>) -> CliResult<()> {
    if let Some(path) = path {
        map.write_text(path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Upscale a map to the crop resolution, blend it green over the crop and
/// write the PNG.
fn write_overlay(input: &Tensor<f32>, map: &Heatmap, alpha: f32, out: &Path) -> CliResult<()> {
    let size = input.shape()[1];
    let map = map.upscaled(size, size)?;
    let overlay = render_overlay(input, &map, alpha)?;
    save_png(&overlay, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_featmap(args: FeatmapArgs) -> CliResult<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let checkpoint = require(file.resolve(args.checkpoint, "checkpoint")?, "checkpoint")?;
    let image = require(file.resolve(args.image, "image")?, "image")?;
    let layer = require(file.resolve(args.layer, "layer")?, "layer")?;
    let filter = require(file.resolve(args.filter, "filter")?, "filter")?;
    let alpha = resolve_alpha(&mut file, args.alpha_max)?;
    let out = require(file.resolve(args.out, "out")?, "out")?;
    let map_out = file.resolve(args.map_out, "map-out")?;
    file.finish()?;

    print_config(&[
        ("checkpoint", checkpoint.display().to_string()),
        ("image", image.display().to_string()),
        ("layer", layer.to_string()),
        ("filter", filter.to_string()),
        ("alpha-max", alpha.to_string()),
        ("out", out.display().to_string()),
        ("map-out", display_or_none(&map_out)),
    ]);

    let ckpt = load_checkpoint(&checkpoint)?;
    let id = FeatureMapId::new(layer, filter);
    // A bad layer/filter is a flag mistake, not a runtime failure.
    if let Err(e) = id.validate(&ckpt.model) {
        return usage_err(e.to_string());
    }
    let input = load_input(&image, &ckpt)?;
    let map = extract_feature_map(&ckpt.model, &input, id)?;
    write_map_text(&map, map_out.as_deref())?;
    write_overlay(&input, &map, alpha, &out)
}

fn parse_ids(list: &str) -> CliResult<Vec<FeatureMapId>> {
    let mut ids = Vec::new();
    for part in list.split(',') {
        let part = part.trim();
        let Some((layer, filter)) = part.split_once(':') else {
            return usage_err(format!("bad id `{part}`, expected `layer:filter`"));
        };
        let parse = |s: &str, what: &str| -> CliResult<usize> {
            match s.trim().parse() {
                Ok(v) => Ok(v),
                Err(_) => usage_err(format!("bad {what} in id `{part}`")),
            }
        };
        ids.push(FeatureMapId::new(
            parse(layer, "layer")?,
            parse(filter, "filter")?,
        ));
    }
    Ok(ids)
}

fn run_grid(args: GridArgs) -> CliResult<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let checkpoint = require(file.resolve(args.checkpoint, "checkpoint")?, "checkpoint")?;
    let images_list = require(file.resolve(args.images, "images")?, "images")?;
    let ids_spec = require(file.resolve(args.ids, "ids")?, "ids")?;
    let alpha = resolve_alpha(&mut file, args.alpha_max)?;
    let out = require(file.resolve(args.out, "out")?, "out")?;
    file.finish()?;

    print_config(&[
        ("checkpoint", checkpoint.display().to_string()),
        ("images", images_list.display().to_string()),
        ("ids", ids_spec.clone()),
        ("alpha-max", alpha.to_string()),
        ("out", out.display().to_string()),
    ]);

    let ids = parse_ids(&ids_spec)?;
    let ckpt = load_checkpoint(&checkpoint)?;
    for id in &ids {
        if let Err(e) = id.validate(&ckpt.model) {
            return usage_err(e.to_string());
        }
    }

    let list_text = std::fs::read_to_string(&images_list).map_err(|e| lesionviz::Error::Io {
        path: images_list.clone(),
        source: e,
    })?;
    let base = images_list.parent().unwrap_or(Path::new(""));
    let mut inputs = Vec::new();
    for line in list_text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let path = base.join(line);
        inputs.push(load_input(&path, &ckpt)?);
    }
    if inputs.is_empty() {
        return usage_err(format!("{} lists no images", images_list.display()));
    }

    lesionviz::viz::render_grid(&ckpt.model, &inputs, &ids, alpha, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_saliency(args: SaliencyArgs) -> CliResult<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let checkpoint = require(file.resolve(args.checkpoint, "checkpoint")?, "checkpoint")?;
    let image = require(file.resolve(args.image, "image")?, "image")?;
    let alpha = resolve_alpha(&mut file, args.alpha_max)?;
    let out = require(file.resolve(args.out, "out")?, "out")?;
    let map_out = file.resolve(args.map_out, "map-out")?;
    file.finish()?;

    print_config(&[
        ("checkpoint", checkpoint.display().to_string()),
        ("image", image.display().to_string()),
        ("alpha-max", alpha.to_string()),
        ("out", out.display().to_string()),
        ("map-out", display_or_none(&map_out)),
    ]);

    let ckpt = load_checkpoint(&checkpoint)?;
    let input = load_input(&image, &ckpt)?;
    let map = saliency(&ckpt.model, &input)?;
    write_map_text(&map, map_out.as_deref())?;
    write_overlay(&input, &map, alpha, &out)
}

fn run_occlude(args: OccludeArgs) -> CliResult<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let checkpoint = require(file.resolve(args.checkpoint, "checkpoint")?, "checkpoint")?;
    let image = require(file.resolve(args.image, "image")?, "image")?;
    let defaults = OcclusionConfig::default();
    let occlusion = OcclusionConfig {
        patch_size: file.resolve(args.patch, "patch")?.unwrap_or(defaults.patch_size),
        stride: file.resolve(args.stride, "stride")?.unwrap_or(defaults.stride),
        fill: file.resolve(args.fill, "fill")?.unwrap_or(defaults.fill),
    };
    let alpha = resolve_alpha(&mut file, args.alpha_max)?;
    let out = require(file.resolve(args.out, "out")?, "out")?;
    let map_out = file.resolve(args.map_out, "map-out")?;
    file.finish()?;

    print_config(&[
        ("checkpoint", checkpoint.display().to_string()),
        ("image", image.display().to_string()),
        ("patch", occlusion.patch_size.to_string()),
        ("stride", occlusion.stride.to_string()),
        ("fill", occlusion.fill.to_string()),
        ("alpha-max", alpha.to_string()),
        ("out", out.display().to_string()),
        ("map-out", display_or_none(&map_out)),
    ]);

    let ckpt = load_checkpoint(&checkpoint)?;
    let size = ckpt.model.config.input_shape[1];
    // Geometry that cannot fit the input is a flag mistake.
    if let Err(e) = occlusion.validate(size, size) {
        return usage_err(e.to_string());
    }
    let input = load_input(&image, &ckpt)?;
    let map = occlusion_map(&ckpt.model, &input, &occlusion)?;
    write_map_text(&map, map_out.as_deref())?;
    write_overlay(&input, &map, alpha, &out)
}
