//! `seesaw`: inspect, cost, train and evaluate the SeesawFaceNets model
//! family from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seesaw_core::analytics::{compare_reports, count_model, format_count, CostReport};
use seesaw_core::arch::{build_model, layer_out_shape, model_by_name, LayerKind, ModelSpec};
use seesaw_core::blocks::BlockVariant;
use seesaw_core::error::Error;
use seesaw_core::serialize::{load_weights_into, model_to_weights, WeightFile};
use seesaw_core::specfmt::{format_spec, parse_spec};
use seesaw_core::tensor::Shape;
use seesaw_core::training::{
    fit, synthesize_identity_dataset, synthesize_pairset, ArcFaceHead, LabeledDataset,
    SyntheticSpec, TrainConfig,
};
use seesaw_core::verify::{evaluate_model, PairSet};

#[derive(Parser)]
#[command(
    name = "seesaw",
    about = "SeesawFaceNets engine: architecture summaries, cost reports, toy training and pair-set verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the layer table of a model (inputs, operators, outputs)
    Summarize(ModelArgs),
    /// Per-layer and total parameter / MAdds report
    Cost(ModelArgs),
    /// Compare the cost reports of two models
    Compare(CompareArgs),
    /// Write a model spec in the text format
    SpecDump(ModelArgs),
    /// Train a width-reduced model on a synthetic or on-disk identity dataset
    TrainToy(TrainArgs),
    /// Evaluate a checkpoint on a labeled pair manifest (10-fold protocol)
    EvalPairs(EvalArgs),
    /// Build a model deterministically and export its weights
    Export(ExportArgs),
    /// Inspect a weight container, optionally loading it into a model and re-exporting
    Import(ImportArgs),
    /// Generate a synthetic identity dataset and pair manifest on disk
    SynthData(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Structured,
}

#[derive(Args)]
struct ModelSelector {
    /// Predefined model name
    #[arg(long, conflicts_with = "spec")]
    model: Option<String>,
    /// Path to a spec file in the text format
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override the uneven-group split ratio of every block
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Force squeeze-and-excitation on in every block
    #[arg(long, conflicts_with = "no_se")]
    se: bool,
    /// Force squeeze-and-excitation off in every block
    #[arg(long)]
    no_se: bool,
    /// Override the block variant: shuffle | share | inverted_residual
    #[arg(long)]
    variant: Option<String>,
}

impl ModelSelector {
    fn resolve(&self) -> Result<ModelSpec, Error> {
        let mut spec = match (&self.model, &self.spec) {
            (Some(name), None) => model_by_name(name)?,
            (None, Some(path)) => parse_spec(&std::fs::read_to_string(path)?)?,
            _ => {
                return Err(Error::Config(
                    "select a model with exactly one of --model or --spec".into(),
                ))
            }
        };
        let variant = match self.variant.as_deref() {
            Some(v) => Some(
                BlockVariant::parse(v).ok_or_else(|| Error::Config(format!("unknown variant '{v}'")))?,
            ),
            None => None,
        };
        for layer in &mut spec.layers {
            if let LayerKind::Block(cfg) = &mut layer.kind {
                if let Some(r) = self.split_ratio {
                    cfg.split_ratio = r;
                }
                if self.se {
                    cfg.use_se = true;
                }
                if self.no_se {
                    cfg.use_se = false;
                }
                if let Some(v) = variant {
                    cfg.variant = v;
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    select: ModelSelector,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
}

#[derive(Args)]
struct CompareArgs {
    /// First model name (numerator of the reported ratios)
    model_a: String,
    /// Second model name
    model_b: String,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    select: ModelSelector,
    /// Identity dataset manifest; omitted = built-in synthetic 20-identity set
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Epochs at which the rate decays by 10x
    #[arg(long, value_delimiter = ',', default_value = "9,13,15")]
    decay_epochs: Vec<usize>,
    /// ArcFace scale s
    #[arg(long, default_value_t = 64.0)]
    scale: f64,
    /// ArcFace angular margin m (radians)
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for per-epoch checkpoints (.ssfn + .meta)
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    select: ModelSelector,
    /// Weight container produced by train-toy or export
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pair manifest: `path_a, path_b, 0/1` per line
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    select: ModelSelector,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output weight container path
    #[arg(long, short = 'o')]
    output: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    /// Weight container to read
    #[arg(long)]
    input: PathBuf,
    /// Verify the container against this model (and allow re-export)
    #[arg(long, conflicts_with = "spec")]
    model: Option<String>,
    /// Spec file variant of --model
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Re-export destination (requires a model)
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    identities: usize,
    #[arg(long, default_value_t = 10)]
    samples_per_identity: usize,
    /// Square image size in pixels
    #[arg(long, default_value_t = 28)]
    size: usize,
    /// Per-pixel Gaussian noise (8-bit units)
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    /// Number of labeled pairs to emit (0 = none)
    #[arg(long, default_value_t = 60)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn shape_str(s: Shape) -> String {
    format!("{}x{}x{}", s.h, s.w, s.c)
}

fn operator_str(kind: &LayerKind, repeat: usize) -> String {
    let rep = |label: &str| {
        if repeat == 1 {
            label.to_string()
        } else {
            format!("{label} {repeat}x")
        }
    };
    match kind {
        LayerKind::StemConv { out_channels, stride, .. } => {
            format!("3x3 Conv, /{stride}, {out_channels}")
        }
        LayerKind::DwConv { kernel, .. } => format!("{kernel}x{kernel} DWconv"),
        LayerKind::Block(cfg) => {
            let label = if cfg.residual { "RBlock" } else { "Block" };
            let stride = if cfg.stride == 2 { "/2, " } else { "" };
            let se = if cfg.use_se { ", SE" } else { "" };
            let skip = if cfg.downsample_skip { ", +skip" } else { "" };
            format!(
                "{} [{}] {{1x1 Conv, {}; 3x3 DWconv, {}{}; 1x1 Conv, Linear, {}{}{}}}",
                rep(label),
                cfg.variant.name(),
                cfg.expansion_channels,
                stride,
                cfg.expansion_channels,
                cfg.out_channels,
                se,
                skip,
            )
        }
        LayerKind::HeadConv { out_channels, .. } => format!("1x1 Conv, {out_channels}"),
        LayerKind::GdConv { kernel } => format!("linear GD{kernel}x{kernel} Conv"),
        LayerKind::EmbeddingLinear { out_features } => format!("linear 1x1 Conv, {out_features}"),
    }
}

fn cmd_summarize(args: &ModelArgs) -> Result<(), Error> {
    let spec = args.select.resolve()?;
    // One row per spec line, repeats collapsed like the published tables.
    let mut cur = spec.input_shape(1);
    let mut rows = Vec::new();
    for layer in &spec.layers {
        let input = cur;
        for _ in 0..layer.repeat {
            cur = layer_out_shape(&layer.kind, cur)?;
        }
        rows.push((input, operator_str(&layer.kind, layer.repeat), cur));
    }
    match args.format {
        OutputFormat::Text => {
            println!("model: {}  (embedding {})", spec.name, spec.embedding_dim);
            let op_width = rows.iter().map(|r| r.1.len()).max().unwrap_or(8);
            println!("{:<12} | {:<op_width$} | output", "input", "operator");
            for (input, op, output) in &rows {
                println!("{:<12} | {op:<op_width$} | {}", shape_str(*input), shape_str(*output));
            }
        }
        OutputFormat::Structured => {
            println!("model={}", spec.name);
            println!("embedding={}", spec.embedding_dim);
            println!("layers={}", rows.len());
            for (i, (input, op, output)) in rows.iter().enumerate() {
                println!("layer.{i}.input={}", shape_str(*input));
                println!("layer.{i}.op={op}");
                println!("layer.{i}.output={}", shape_str(*output));
            }
        }
    }
    Ok(())
}

fn print_cost(report: &CostReport, format: OutputFormat) {
    match format {
        OutputFormat::Text => {
            println!("model: {}", report.model);
            let name_width = report
                .layers
                .iter()
                .map(|l| l.name.len())
                .max()
                .unwrap_or(10)
                .max("total (rounded)".len());
            println!("{:<name_width$}  {:>12}  {:>14}", "layer", "params", "madds");
            for layer in &report.layers {
                println!("{:<name_width$}  {:>12}  {:>14}", layer.name, layer.params, layer.madds);
            }
            println!(
                "{:<name_width$}  {:>12}  {:>14}",
                "total", report.total_params, report.total_madds
            );
            println!(
                "{:<name_width$}  {:>12}  {:>14}",
                "total (rounded)",
                format_count(report.total_params),
                format_count(report.total_madds)
            );
            println!("counting rule: {}", report.counting_rule);
        }
        OutputFormat::Structured => {
            println!("model={}", report.model);
            for layer in &report.layers {
                println!("layer.{}.params={}", layer.name, layer.params);
                println!("layer.{}.madds={}", layer.name, layer.madds);
            }
            println!("total.params={}", report.total_params);
            println!("total.madds={}", report.total_madds);
            println!("total.params_rounded={}", format_count(report.total_params));
            println!("total.madds_rounded={}", format_count(report.total_madds));
        }
    }
}

fn cmd_cost(args: &ModelArgs) -> Result<(), Error> {
    let spec = args.select.resolve()?;
    let report = count_model(&spec)?;
    print_cost(&report, args.format);
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Error> {
    let a = count_model(&model_by_name(&args.model_a)?)?;
    let b = count_model(&model_by_name(&args.model_b)?)?;
    let cmp = compare_reports(&a, &b);
    match args.format {
        OutputFormat::Text => {
            println!("{} vs {}", cmp.model_a, cmp.model_b);
            println!(
                "params: {} vs {}  (ratio {:.3})",
                format_count(a.total_params),
                format_count(b.total_params),
                cmp.params_ratio
            );
            println!(
                "madds:  {} vs {}  (ratio {:.3})",
                format_count(a.total_madds),
                format_count(b.total_madds),
                cmp.madds_ratio
            );
            println!("params delta: {:+}", cmp.params_delta);
            println!("madds delta:  {:+}", cmp.madds_delta);
        }
        OutputFormat::Structured => {
            println!("model_a={}", cmp.model_a);
            println!("model_b={}", cmp.model_b);
            println!("a.params={}", a.total_params);
            println!("b.params={}", b.total_params);
            println!("a.madds={}", a.total_madds);
            println!("b.madds={}", b.total_madds);
            println!("params_ratio={:.6}", cmp.params_ratio);
            println!("madds_ratio={:.6}", cmp.madds_ratio);
        }
    }
    Ok(())
}

fn cmd_spec_dump(args: &ModelArgs) -> Result<(), Error> {
    let spec = args.select.resolve()?;
    print!("{}", format_spec(&spec));
    Ok(())
}

fn cmd_train_toy(args: &TrainArgs) -> Result<(), Error> {
    let spec = match (&args.select.model, &args.select.spec) {
        (None, None) => model_by_name("seesaw-toy")?,
        _ => args.select.resolve()?,
    };
    let dataset = match &args.dataset {
        Some(manifest) => LabeledDataset::from_manifest(manifest)?,
        None => {
            let (_, h, _) = spec.input;
            eprintln!("no --dataset given; using the built-in synthetic 20-identity set");
            synthesize_identity_dataset(&SyntheticSpec {
                size: h,
                seed: args.seed,
                ..SyntheticSpec::default()
            })
        }
    };
    if dataset.is_empty() {
        return Err(Error::Training("dataset is empty".into()));
    }
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        momentum: args.momentum,
        initial_lr: args.lr,
        lr_decay_epochs: args.decay_epochs.iter().copied().filter(|&e| e < args.epochs).collect(),
        decay_factor: 0.1,
        weight_decay: 0.0,
        seed: args.seed,
        checkpoint_dir: args.checkpoint_dir.clone(),
    };
    let mut model = build_model::<f32>(&spec, args.seed)?;
    let mut head_rng = seesaw_core::rng::Rng::new(args.seed ^ 0xA5CF);
    let mut head = ArcFaceHead::<f32>::new(dataset.num_classes, spec.embedding_dim, &mut head_rng);
    head.scale = args.scale;
    head.margin = args.margin;

    println!(
        "model={} identities={} samples={} batch_size={} epochs={}",
        spec.name,
        dataset.num_classes,
        dataset.len(),
        cfg.batch_size,
        cfg.epochs
    );
    let log = fit(&mut model, &mut head, &dataset, &cfg)?;
    for e in &log.epochs {
        println!(
            "epoch={} lr={:.6} loss={:.6} accuracy={:.4}",
            e.epoch, e.lr, e.loss, e.train_accuracy
        );
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        println!("checkpoints={}", dir.display());
    }
    Ok(())
}

fn cmd_eval_pairs(args: &EvalArgs) -> Result<(), Error> {
    let spec = args.select.resolve()?;
    let mut model = build_model::<f32>(&spec, 0)?;
    let weights = WeightFile::read_from(&args.checkpoint)?;
    load_weights_into(&mut model, &weights)?;
    let pairset = PairSet::from_manifest(&args.pairs)?;
    let report = evaluate_model(&mut model, &pairset, args.folds)?;
    match args.format {
        OutputFormat::Text => {
            println!("pairs: {}  folds: {}", report.pair_count, report.fold_count);
            println!("mean accuracy: {:.4}", report.kfold.mean_accuracy);
            for (i, (acc, thr)) in report
                .kfold
                .fold_accuracies
                .iter()
                .zip(&report.kfold.fold_thresholds)
                .enumerate()
            {
                println!("fold {i}: accuracy {acc:.4} at threshold {thr:.4}");
            }
        }
        OutputFormat::Structured => {
            println!("pairs={}", report.pair_count);
            println!("folds={}", report.fold_count);
            println!("mean_accuracy={:.6}", report.kfold.mean_accuracy);
            for (i, (acc, thr)) in report
                .kfold
                .fold_accuracies
                .iter()
                .zip(&report.kfold.fold_thresholds)
                .enumerate()
            {
                println!("fold.{i}.accuracy={acc:.6}");
                println!("fold.{i}.threshold={thr:.6}");
            }
        }
    }
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<(), Error> {
    let spec = args.select.resolve()?;
    let model = build_model::<f32>(&spec, args.seed)?;
    let file = model_to_weights(&model);
    file.write_to(&args.output)?;
    println!(
        "wrote {} ({} tensors, {} params)",
        args.output.display(),
        file.records.len(),
        model.param_count()
    );
    Ok(())
}

fn cmd_import(args: &ImportArgs) -> Result<(), Error> {
    let file = WeightFile::read_from(&args.input)?;
    println!("container: {} tensors", file.records.len());
    let total: usize = file.records.iter().map(|r| r.numel()).sum();
    println!("elements: {total}");
    match (&args.model, &args.spec) {
        (None, None) => {
            for rec in &file.records {
                let dims: Vec<String> = rec.dims.iter().map(|d| d.to_string()).collect();
                println!("{}  {}  {}", rec.name, rec.dtype, dims.join("x"));
            }
            if args.output.is_some() {
                return Err(Error::Config("re-export needs --model or --spec".into()));
            }
        }
        (model, spec) => {
            let selector = ModelSelector {
                model: model.clone(),
                spec: spec.clone(),
                split_ratio: None,
                se: false,
                no_se: false,
                variant: None,
            };
            let resolved = selector.resolve()?;
            let mut built = build_model::<f32>(&resolved, 0)?;
            load_weights_into(&mut built, &file)?;
            println!("verified against model {}", resolved.name);
            if let Some(out) = &args.output {
                model_to_weights(&built).write_to(out)?;
                println!("re-exported to {}", out.display());
            }
        }
    }
    Ok(())
}

fn cmd_synth_data(args: &SynthArgs) -> Result<(), Error> {
    let dataset = synthesize_identity_dataset(&SyntheticSpec {
        identities: args.identities,
        samples_per_identity: args.samples_per_identity,
        size: args.size,
        noise_std: args.noise,
        seed: args.seed,
    });
    let manifest = dataset.write_manifest(&args.out, "dataset.txt")?;
    println!("dataset manifest: {}", manifest.display());
    if args.pairs > 0 {
        let pairs = synthesize_pairset(&dataset, args.pairs, args.seed ^ 0x9A12)?;
        let manifest = pairs.write_manifest(args.out.join("pairs"), "pairs.txt")?;
        println!("pair manifest: {}", manifest.display());
    }
    Ok(())
}

fn run() -> Result<(), Error> {
    match Cli::parse().cmd {
        Cmd::Summarize(args) => cmd_summarize(&args),
        Cmd::Cost(args) => cmd_cost(&args),
        Cmd::Compare(args) => cmd_compare(&args),
        Cmd::SpecDump(args) => cmd_spec_dump(&args),
        Cmd::TrainToy(args) => cmd_train_toy(&args),
        Cmd::EvalPairs(args) => cmd_eval_pairs(&args),
        Cmd::Export(args) => cmd_export(&args),
        Cmd::Import(args) => cmd_import(&args),
        Cmd::SynthData(args) => cmd_synth_data(&args),
    }
}

fn main() -> ExitCode {
    // Die quietly when the pipe closes (`seesaw summarize | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
