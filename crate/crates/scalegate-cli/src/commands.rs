use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use scalegate::data::{self, GenConfig, Sample};
use scalegate::diagnostics::{self, SpoofGrid};
use scalegate::error::{DataError, TrainError};
use scalegate::model::{self, AdapterStack, ModelBundle, Variant};
use scalegate::resolver::{inject_gsd, SensorRegistry};
use scalegate::scale::assign_tier;
use scalegate::train::{self, TrainConfig};

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Parser)]
#[command(
    name = "scalegate",
    version,
    about = "Scale-gated adapter experiments: data generation, GSD injection, training, evaluation and diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic scale-layered corpus (JSONL)
    GenData(GenDataArgs),
    /// Attach GSD annotations to samples via the sensor registry
    Resolve(ResolveArgs),
    /// Train a model variant on a corpus
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus under the evaluation scale rule
    Eval(EvalArgs),
    /// Sweep spoofed GSD values against one or more checkpoints
    Spoof(SpoofArgs),
    /// Per-rank ridge probe of the bottleneck latent against block energies
    Probe(ProbeArgs),
    /// Export per-tier gate curves over a log-scale grid
    Gates(GatesArgs),
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Resolve(a) => resolve(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Spoof(a) => run_spoof(a),
        Command::Probe(a) => run_probe(a),
        Command::Gates(a) => run_gates(a),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        format!(
            "unknown variant '{s}' (expected one of: {})",
            Variant::ALL.map(|v| v.name()).join(", ")
        )
    })
}

fn data_err(e: DataError) -> CliError {
    let code = match &e {
        DataError::Io { .. } => crate::EXIT_RUNTIME,
        _ => crate::EXIT_VALIDATION,
    };
    CliError {
        code,
        message: format!("data: {e}"),
    }
}

fn train_err(e: TrainError) -> CliError {
    let code = match &e {
        TrainError::Diverged { .. } | TrainError::Diff(_) => crate::EXIT_RUNTIME,
        TrainError::Data(inner) => return data_err_named(inner, "trainer"),
        _ => crate::EXIT_VALIDATION,
    };
    CliError {
        code,
        message: format!("trainer: {e}"),
    }
}

fn data_err_named(e: &DataError, module: &str) -> CliError {
    let code = match e {
        DataError::Io { .. } => crate::EXIT_RUNTIME,
        _ => crate::EXIT_VALIDATION,
    };
    CliError {
        code,
        message: format!("{module}: {e}"),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Vec<Sample>, CliError> {
    data::load_jsonl(path).map_err(data_err)
}

fn load_bundle(path: &Path) -> Result<ModelBundle, CliError> {
    let loaded = train::load_checkpoint(path)
        .map_err(|e| CliError::validation(format!("checkpoint: {e}")))?;
    Ok(loaded.bundle)
}

// ---- gen-data ---------------------------------------------------------------

#[derive(Args)]
pub struct GenDataArgs {
    /// Number of samples
    #[arg(long, default_value_t = 7500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL path
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 33)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Per-coordinate feature noise sigma
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of samples with a heavily blurred scale cue
    #[arg(long)]
    pub ambiguous_frac: Option<f64>,
    #[arg(long)]
    pub exact_frac: Option<f64>,
    #[arg(long)]
    pub range_frac: Option<f64>,
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = GenConfig {
        n: args.n,
        feature_dim: args.feature_dim,
        classes: args.classes,
        ..GenConfig::default()
    };
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.ambiguous_frac {
        cfg.ambiguous_frac = v;
    }
    if let Some(v) = args.exact_frac {
        cfg.exact_frac = v;
    }
    if let Some(v) = args.range_frac {
        cfg.range_frac = v;
    }
    let samples = data::generate(&cfg, args.seed).map_err(data_err)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    data::save_jsonl(&samples, &args.out).map_err(data_err)?;

    let mut manifest = RunManifest::new(
        "gen-data",
        args.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    manifest.output(&args.out);
    let dir = args.out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    manifest.write(&dir)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

// ---- resolve ------------------------------------------------------------------

#[derive(Args)]
pub struct ResolveArgs {
    /// Input JSONL of samples (annotated or not)
    #[arg(long)]
    pub input: PathBuf,
    /// Sensor registry JSON (tag -> annotation); defaults ship built in
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Output JSONL path
    #[arg(long)]
    pub out: PathBuf,
}

fn resolve(args: ResolveArgs) -> Result<(), CliError> {
    let registry = match &args.registry {
        Some(path) => SensorRegistry::load(path)
            .map_err(|e| CliError::validation(format!("resolver: {e}")))?,
        None => SensorRegistry::default(),
    };
    let mut samples = load_corpus(&args.input)?;
    let mut resolved = 0usize;
    for sample in &mut samples {
        if sample.gsd.is_unknown() {
            let injected = inject_gsd(sample.sensor.as_deref(), &registry);
            if !injected.is_unknown() {
                resolved += 1;
            }
            sample.gsd = injected;
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    data::save_jsonl(&samples, &args.out).map_err(data_err)?;

    let mut manifest = RunManifest::new(
        "resolve",
        0,
        serde_json::json!({ "registry": args.registry.as_ref().map(|p| p.display().to_string()) }),
    );
    manifest.input(&args.input);
    if let Some(r) = &args.registry {
        manifest.input(r);
    }
    manifest.output(&args.out);
    let dir = args.out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    manifest.write(&dir)?;
    println!(
        "resolved {resolved} of {} samples; wrote {}",
        samples.len(),
        args.out.display()
    );
    Ok(())
}

// ---- train -------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    /// Training corpus (JSONL)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Model variant: cs_hlora, vanilla_lora, scale_as_feature, bucketed_moe
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
}

fn build_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
        cfg.sampler.batch_size = v;
    }
    if let Some(v) = args.rank {
        cfg.rank = v;
        cfg.lora_scale = v as f64 / 2.0;
    }
    Ok(cfg)
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = build_train_config(&args)?;
    cfg.validate().map_err(train_err)?;
    let corpus = load_corpus(&args.corpus)?;
    ensure_dir(&args.out_dir)?;

    let outcome = train::train(&cfg, &corpus).map_err(train_err)?;
    let fingerprint = train::fingerprint_json(&cfg);
    let ckpt_path = args.out_dir.join("checkpoint.json");
    train::save_checkpoint(&outcome.bundle, &fingerprint, &ckpt_path)
        .map_err(|e| CliError::runtime(format!("trainer: {e}")))?;
    let metrics_path = args.out_dir.join("metrics.csv");
    train::write_metrics_csv(&outcome.metrics, &metrics_path)
        .map_err(|e| CliError::runtime(format!("trainer: {e}")))?;

    let mut manifest = RunManifest::new(
        "train",
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    manifest.input(&args.corpus);
    manifest.output(&ckpt_path);
    manifest.output(&metrics_path);
    manifest.write(&args.out_dir)?;

    if let Some(step) = outcome.diverged_at {
        return Err(CliError::runtime(format!(
            "trainer: training diverged at step {step}; last good checkpoint saved to {}",
            ckpt_path.display()
        )));
    }
    println!(
        "trained {} for {} steps; checkpoint {}",
        cfg.variant.name(),
        cfg.steps,
        ckpt_path.display()
    );
    Ok(())
}

// ---- eval --------------------------------------------------------------------

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&args.checkpoint)?;
    let corpus = load_corpus(&args.corpus)?;
    let (d, _) = train::corpus_dims(&corpus).map_err(train_err)?;
    if d != bundle.dims.feature_dim {
        return Err(CliError::validation(format!(
            "eval: corpus feature dimension {d} conflicts with checkpoint feature dimension {}",
            bundle.dims.feature_dim
        )));
    }
    let hits = model::eval_correctness(&bundle, &corpus, None).map_err(train_err)?;
    let acc = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;

    // per-tier accuracy by annotation (unknown tracked separately)
    let mut groups: [(usize, usize); 4] = [(0, 0); 4];
    for (sample, &hit) in corpus.iter().zip(&hits) {
        let idx = match assign_tier(&sample.gsd) {
            Ok(t) => t as usize,
            Err(_) => 3,
        };
        groups[idx].0 += hit as usize;
        groups[idx].1 += 1;
    }
    let ratio = |(h, n): (usize, usize)| if n == 0 { f64::NAN } else { h as f64 / n as f64 };

    ensure_dir(&args.out_dir)?;
    let csv_path = args.out_dir.join("eval.csv");
    let csv = format!(
        "variant,n,accuracy,acc_high,acc_mid,acc_low,acc_unknown\n{},{},{},{},{},{},{}\n",
        bundle.variant.name(),
        corpus.len(),
        acc,
        ratio(groups[0]),
        ratio(groups[1]),
        ratio(groups[2]),
        ratio(groups[3]),
    );
    write_text(&csv_path, &csv)?;

    let mut manifest = RunManifest::new("eval", 0, serde_json::json!({}));
    manifest.input(&args.checkpoint);
    manifest.input(&args.corpus);
    manifest.output(&csv_path);
    manifest.write(&args.out_dir)?;
    println!(
        "{}: accuracy {:.4} over {} samples ({} )",
        bundle.variant.name(),
        acc,
        corpus.len(),
        csv_path.display()
    );
    Ok(())
}

// ---- spoof -------------------------------------------------------------------

#[derive(Args)]
pub struct SpoofArgs {
    /// Checkpoint(s); repeat the flag to overlay variant curves
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// True GSD of the generated evaluation set, meters/pixel
    #[arg(long, default_value_t = 2.0)]
    pub true_g: f64,
    /// Seed the evaluated corpus was generated with (fixes the class
    /// prototypes the eval set must share)
    #[arg(long, default_value_t = 0)]
    pub gen_seed: u64,
    #[arg(long, default_value_t = 99)]
    pub eval_seed: u64,
    /// Evaluation set size (class balanced)
    #[arg(long, default_value_t = 2000)]
    pub eval_n: usize,
    #[arg(long, default_value_t = 0.01)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 30.0)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 13)]
    pub points: usize,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

fn run_spoof(args: SpoofArgs) -> Result<(), CliError> {
    if !(args.true_g > 0.0) {
        return Err(CliError::validation(format!(
            "spoof: true_g must be positive, got {}",
            args.true_g
        )));
    }
    let bundles: Vec<ModelBundle> = args
        .checkpoint
        .iter()
        .map(|p| load_bundle(p))
        .collect::<Result<_, _>>()?;
    let dims = bundles[0].dims;
    for (path, b) in args.checkpoint.iter().zip(&bundles) {
        if b.dims.feature_dim != dims.feature_dim || b.dims.classes != dims.classes {
            return Err(CliError::validation(format!(
                "spoof: checkpoint {} dimensions {:?} conflict with {:?}",
                path.display(),
                (b.dims.feature_dim, b.dims.classes),
                (dims.feature_dim, dims.classes)
            )));
        }
    }
    let gen_cfg = GenConfig {
        n: args.eval_n,
        feature_dim: dims.feature_dim,
        classes: dims.classes,
        ..GenConfig::default()
    };
    let (eval_set, _) = data::generate_at_scale(
        &gen_cfg,
        args.gen_seed,
        args.eval_seed,
        args.true_g.log10(),
        args.eval_n,
    )
    .map_err(data_err)?;
    let grid = SpoofGrid {
        min_g: args.grid_min,
        max_g: args.grid_max,
        points: args.points,
    };
    let mut reports = Vec::new();
    for bundle in &bundles {
        let rep = diagnostics::spoof_sweep(
            bundle,
            &eval_set,
            args.true_g,
            &grid,
            args.resamples,
            args.eval_seed,
        )
        .map_err(|e| CliError::runtime(format!("diagnostics: {e}")))?;
        reports.push(rep);
    }
    ensure_dir(&args.out_dir)?;
    let csv_path = args.out_dir.join("spoof.csv");
    write_text(&csv_path, &diagnostics::spoof_csv(&reports))?;

    let mut manifest = RunManifest::new(
        "spoof",
        args.eval_seed,
        serde_json::json!({
            "true_g": args.true_g,
            "gen_seed": args.gen_seed,
            "eval_n": args.eval_n,
            "grid": { "min": args.grid_min, "max": args.grid_max, "points": args.points },
            "resamples": args.resamples,
        }),
    );
    for p in &args.checkpoint {
        manifest.input(p);
    }
    manifest.output(&csv_path);
    manifest.write(&args.out_dir)?;
    for rep in &reports {
        let peak = &rep.points[rep.peak_index()];
        println!(
            "{}: peak accuracy {:.4} at {:.3} m (true {} m); wrote {}",
            rep.variant,
            peak.accuracy,
            peak.g,
            args.true_g,
            csv_path.display()
        );
    }
    Ok(())
}

// ---- probe -------------------------------------------------------------------

#[derive(Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Probe set (JSONL); block energies come from these samples
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

fn run_probe(args: ProbeArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&args.checkpoint)?;
    let corpus = load_corpus(&args.corpus)?;
    let (d, classes) = train::corpus_dims(&corpus).map_err(train_err)?;
    if d != bundle.dims.feature_dim {
        return Err(CliError::validation(format!(
            "probe: corpus feature dimension {d} conflicts with checkpoint feature dimension {}",
            bundle.dims.feature_dim
        )));
    }
    let gen_cfg = GenConfig {
        n: corpus.len(),
        feature_dim: d,
        classes,
        ..GenConfig::default()
    };
    let report = diagnostics::tau_probe(&bundle, &corpus, &gen_cfg)
        .map_err(|e| CliError::validation(format!("diagnostics: {e}")))?;
    ensure_dir(&args.out_dir)?;
    let csv_path = args.out_dir.join("probe.csv");
    write_text(&csv_path, &diagnostics::probe_csv(&report))?;

    let mut manifest = RunManifest::new("probe", 0, serde_json::json!({}));
    manifest.input(&args.checkpoint);
    manifest.input(&args.corpus);
    manifest.output(&csv_path);
    manifest.write(&args.out_dir)?;
    let drift = report.tau_drift();
    println!(
        "probe: matched-factor mean R2 {:.3}, mismatched {:.3}; threshold drift per tier ({:.3}, {:.3}, {:.3}); wrote {}",
        report.matched_mean(),
        report.mismatched_mean(),
        drift[0],
        drift[1],
        drift[2],
        csv_path.display()
    );
    Ok(())
}

// ---- gates -------------------------------------------------------------------

#[derive(Args)]
pub struct GatesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = -2.0)]
    pub s_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub s_max: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

fn run_gates(args: GatesArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&args.checkpoint)?;
    let adapter = match &bundle.adapters {
        AdapterStack::Gated(ads) => &ads[0],
        _ => {
            return Err(CliError::validation(format!(
                "gates: checkpoint holds the {} variant; gate curves need cs_hlora",
                bundle.variant.name()
            )))
        }
    };
    let curve = diagnostics::export_gate_curves(adapter, args.s_min, args.s_max, args.points)
        .map_err(|e| CliError::validation(format!("diagnostics: {e}")))?;
    ensure_dir(&args.out_dir)?;
    let csv_path = args.out_dir.join("gates.csv");
    write_text(&csv_path, &diagnostics::gates_csv(&curve))?;

    let mut manifest = RunManifest::new(
        "gates",
        0,
        serde_json::json!({ "s_min": args.s_min, "s_max": args.s_max, "points": args.points }),
    );
    manifest.input(&args.checkpoint);
    manifest.output(&csv_path);
    manifest.write(&args.out_dir)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}
