use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use refer3d::checkpoint;
use refer3d::config::RunConfig;
use refer3d::eval_bench::{ablation_csv, run_ablation, seeded_eval, validator, BaselineKind, Truncation};
use refer3d::language::tokenize;
use refer3d::model::RefModel;
use refer3d::par::Execution;
use refer3d::scene::io::{load_dataset, read_descriptions, read_scene, save_dataset};
use refer3d::scene::synth::generate_synthetic_dataset;
use refer3d::scene::{dataset_stats, Dataset, Lexicon};
use refer3d::training::{init_model, train, TrainMode};
use refer3d::Error;

#[derive(Parser, Debug)]
#[command(name = "refer3d", version, about = "Localize objects in 3D scans from natural-language descriptions")]
struct Cli {
    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene/description corpus.
    GenData(Common),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a baseline.
    Eval(EvalArgs),
    /// Localize one description in one scene.
    Infer(InferArgs),
    /// Feature x language-classifier ablation grid.
    Ablate(TrainArgs),
    /// Print the full configuration (defaults plus overrides).
    PrintConfig(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file for print-config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory; a synthetic corpus is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Extra `key=value` config overrides.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    lobjcls: Option<OnOff>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    truncate: Option<String>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    /// Description file (annotation JSON array or JSON lines) instead of a dataset directory.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    /// Extra lexicon list as `name=path`.
    #[arg(long)]
    lexicon: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    iters: Option<usize>,
    /// Validate every this many iterations.
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    text: String,
}

/// What went wrong, for the diagnostic prefix and exit status.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(io) if io.kind() == ErrorKind::NotFound => ("missing file", 3),
                Error::Config(_) => ("invalid config", 4),
                _ => ("error", 1),
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == ErrorKind::NotFound {
                return ("missing file", 3);
            }
        }
    }
    ("error", 1)
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(ErrorKind::NotFound, path.display().to_string())).into());
    }
    Ok(())
}

fn build_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            require_file(p)?;
            RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if !c.overrides.is_empty() {
        cfg = refer3d::config::apply_overrides(&cfg, &c.overrides)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(f) = &c.features {
        cfg.model.features.set_flags(f)?;
    }
    if let Some(l) = c.lobjcls {
        cfg.train.lang_cls = matches!(l, OnOff::On);
    }
    if let Some(m) = &c.mode {
        cfg.train.mode = m.parse::<TrainMode>()?;
    }
    if let Some(s) = &c.seeds {
        cfg.eval.seeds = s
            .split(',')
            .map(|x| x.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Config(format!("--seeds: {e}")))?;
    }
    if let Some(b) = &c.baseline {
        cfg.eval.baseline = b.parse::<BaselineKind>()?;
    }
    if let Some(t) = &c.truncate {
        cfg.eval.truncate = t.parse::<Truncation>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(c: &Common, cfg: &RunConfig) -> anyhow::Result<Dataset> {
    match &c.data {
        Some(dir) => {
            require_file(dir)?;
            Ok(load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?)
        }
        None => Ok(generate_synthetic_dataset(&cfg.synth, cfg.seed)?),
    }
}

fn out_dir(c: &Common) -> anyhow::Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<RefModel<f32>> {
    require_file(path)?;
    Ok(checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?)
}

fn gen_data(c: &Common) -> anyhow::Result<()> {
    let cfg = build_config(c)?;
    let ds = generate_synthetic_dataset(&cfg.synth, cfg.seed)?;
    let dir = out_dir(c)?;
    save_dataset(&ds, &dir)?;
    println!("wrote {} scenes and {} descriptions to {}", ds.scenes.len(), ds.records.len(), dir.display());
    Ok(())
}

fn stats(a: &StatsArgs) -> anyhow::Result<()> {
    let mut lex = Lexicon::bundled();
    for spec in &a.lexicon {
        let (name, path) = spec.split_once('=').ok_or_else(|| Error::Config(format!("--lexicon expects name=path, got `{spec}`")))?;
        require_file(Path::new(path))?;
        lex.load_list(name, Path::new(path))?;
    }
    let report = match &a.descriptions {
        Some(p) => {
            require_file(p)?;
            let records = read_descriptions(p)?;
            dataset_stats(&records, &[], &lex)
        }
        None => {
            let cfg = build_config(&a.common)?;
            let ds = dataset(&a.common, &cfg)?;
            dataset_stats(&ds.records, &ds.scenes, &lex)
        }
    };
    print!("{report}");
    if let Some(out) = &a.common.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("stats.txt"), report.to_string())?;
    }
    Ok(())
}

fn run_train(a: &TrainArgs, exec: Execution) -> anyhow::Result<()> {
    let mut cfg = build_config(&a.common)?;
    if let Some(n) = a.iters {
        cfg.train.iterations = n;
    }
    if let Some(n) = a.eval_every {
        cfg.train.eval_every = n;
    }
    cfg.validate()?;
    let ds = dataset(&a.common, &cfg)?;
    let dir = out_dir(&a.common)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let mut model = init_model::<f32>(&cfg.model, &ds, cfg.seed)?;
    let hook = validator::<f32>(&ds, &cfg.train, cfg.eval.limit, exec);
    let has_val = !ds.records_in(cfg.eval.split).is_empty();
    let log = train(&mut model, &ds, &cfg.train, exec, if has_val && cfg.train.iterations > 0 { Some(&hook) } else { None })?;
    checkpoint::save(&model, &dir.join("model.ckpt"))?;
    fs::write(dir.join("loss.csv"), log.loss_csv())?;
    fs::write(dir.join("metrics.log"), log.eval_lines())?;
    print!("{}", log.eval_lines());
    println!("checkpoint: {}", dir.join("model.ckpt").display());
    Ok(())
}

fn run_eval(a: &EvalArgs, exec: Execution) -> anyhow::Result<()> {
    let cfg = build_config(&a.common)?;
    let model = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None if cfg.eval.baseline.needs_model() => {
            return Err(Error::Config(format!("baseline {} needs --checkpoint", cfg.eval.baseline)).into())
        }
        None => None,
    };
    let ds = dataset(&a.common, &cfg)?;
    let report = seeded_eval(model.as_ref(), &ds, &cfg.eval, exec)?;
    let dir = out_dir(&a.common)?;
    fs::write(dir.join("report.txt"), report.to_string())?;
    fs::write(dir.join("report.csv"), report.csv())?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    if let Some(ap) = &report.ap {
        fs::write(dir.join("map.csv"), ap.csv(&report.baseline.to_string()))?;
    }
    print!("{report}");
    Ok(())
}

#[derive(Serialize)]
struct InferOutput<'a> {
    scene_id: &'a str,
    text: &'a str,
    #[serde(rename = "box")]
    bbox: Option<refer3d::grounding::BoxRecord>,
    confidence: f64,
    proposal: Option<usize>,
}

fn infer(a: &InferArgs) -> anyhow::Result<()> {
    let cfg = build_config(&a.common)?;
    let model = load_checkpoint(&a.checkpoint)?;
    require_file(&a.scene)?;
    let scene = read_scene(&a.scene)?;
    let tokens = tokenize(&a.text);
    let seed = cfg.eval.seeds[0];
    let out = match model.localize(&scene, &tokens, seed) {
        Ok(l) => InferOutput {
            scene_id: &scene.scene_id,
            text: &a.text,
            bbox: Some(l.bbox.into()),
            confidence: l.confidence,
            proposal: Some(l.proposal),
        },
        Err(Error::NoProposals) => InferOutput {
            scene_id: &scene.scene_id,
            text: &a.text,
            bbox: None,
            confidence: 0.0,
            proposal: None,
        },
        Err(e) => return Err(e.into()),
    };
    let line = serde_json::to_string(&out)?;
    println!("{line}");
    if let Some(o) = &a.common.out {
        fs::create_dir_all(o)?;
        fs::write(o.join("inference.jsonl"), format!("{line}\n"))?;
    }
    Ok(())
}

fn ablate(a: &TrainArgs, exec: Execution) -> anyhow::Result<()> {
    let mut cfg = build_config(&a.common)?;
    if let Some(n) = a.iters {
        cfg.train.iterations = n;
    }
    let ds = dataset(&a.common, &cfg)?;
    // synthetic scenes carry their own appearance width
    if let Some(app) = ds.scenes.first().and_then(|s| s.appearance.as_ref()) {
        cfg.model.features.appearance_dim = app.dim;
    }
    let cells = run_ablation(&cfg, &ds, exec)?;
    let csv = ablation_csv(&cells);
    let dir = out_dir(&a.common)?;
    fs::write(dir.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn print_config(c: &Common) -> anyhow::Result<()> {
    let text = build_config(c)?.to_text();
    match &c.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = match cli.threads {
        Some(0) => return Err(Error::Config("--threads must be positive".into()).into()),
        Some(1) => Execution::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| anyhow!("thread pool: {e}"))?;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Stats(a) => stats(a),
        Command::Train(a) => run_train(a, exec),
        Command::Eval(a) => run_eval(a, exec),
        Command::Infer(a) => infer(a),
        Command::Ablate(a) => ablate(a, exec),
        Command::PrintConfig(c) => print_config(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("{kind}: {e:#}");
            ExitCode::from(code)
        }
    }
}
