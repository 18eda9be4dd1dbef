//! `arterymatch` command-line tool.
//!
//! Every subcommand prints a JSON summary on stdout. Failures print
//! `{"error": kind, "message": ...}` on stderr and exit non-zero.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arterymatch::graph::{load_graph, PrimaryAngle, SecondaryAngle, ViewAngle};
use arterymatch::labeling::{LabelConfig, PivotChoice, ScreeningMode};
use arterymatch::pipeline::{self, TrainRequest};
use arterymatch::synth::{DatasetSpec, TreeSpec};
use arterymatch::training::TrainConfig;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "arterymatch", version, about = "Multi-graph matching for coronary artery labeling")]
struct Cli {
    /// Base seed; falls back to MGM_SEED, then to the config file.
    #[arg(long, global = true, env = "MGM_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Label the test split of a dataset.
    Label(LabelArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Detect and grade stenoses.
    Stenosis(StenosisArgs),
    /// Match a set of graphs and optionally dump the solver internals.
    Match(MatchArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Dataset spec (JSON); defaults to the built-in 60-tree spec.
    #[arg(long, alias = "config")]
    spec: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Train/test/template sizes, e.g. 40/14/6.
    #[arg(long)]
    splits: Option<String>,
    /// Feature noise sigma.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training config (JSON, same keys as the library config).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_tuples: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines metrics log (default: `<out>.metrics.jsonl`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write the optimizer state next to the checkpoint.
    #[arg(long)]
    save_optimizer: bool,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeling config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = ["strict", "soft"])]
    mode: Option<String>,
    #[arg(long, value_parser = ["test", "random"])]
    pivot: Option<String>,
    #[arg(long)]
    max_tuples: Option<usize>,
    /// Output directory for reports and predictions.
    #[arg(long)]
    out: PathBuf,
    /// Write a per-matching CSV as well.
    #[arg(long)]
    debug_csv: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Dataset directory or predictions-format file.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StenosisArgs {
    #[arg(long, conflicts_with_all = ["mask", "centerline"], required_unless_present = "mask")]
    data: Option<PathBuf>,
    /// Predicted labels used to decide label correctness.
    #[arg(long, requires = "data")]
    pred: Option<PathBuf>,
    /// Binary vessel mask (PGM).
    #[arg(long, requires = "centerline")]
    mask: Option<PathBuf>,
    /// Centerline points as JSON `[[x, y], ...]`.
    #[arg(long, requires = "mask")]
    centerline: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long, num_args = 2.., required = true)]
    graphs: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pivot: usize,
    /// Write soft affinities, spectrum, factor and matchings here.
    #[arg(long)]
    dump_debug: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl From<arterymatch::Error> for Failure {
    fn from(e: arterymatch::Error) -> Self {
        Failure { kind: e.kind(), message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { kind: "usage", message: message.into() }
}

type Outcome = Result<Value, Failure>;

fn default_spec() -> DatasetSpec {
    let mut tree = TreeSpec::new(3, 2, 2, 2, ViewAngle::new(PrimaryAngle::LAO, SecondaryAngle::CRA));
    tree.feature_noise = 0.05;
    DatasetSpec { tree, count: 60, splits: [40, 14, 6], lesion_rate: 0.3, lesion_percent: [5.0, 90.0] }
}

fn parse_splits(s: &str) -> Result<[usize; 3], Failure> {
    let parts: Vec<&str> = s.split('/').collect();
    let bad = || usage(format!("--splits expects train/test/template, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

fn to_value(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn save(out: Option<&Path>, v: &Value) -> Result<(), Failure> {
    if let Some(p) = out {
        pipeline::save_json(p, v)?;
    }
    Ok(())
}

fn generate(a: GenerateArgs, seed: u64) -> Outcome {
    let mut spec = match &a.spec {
        Some(p) => pipeline::load_json::<DatasetSpec>(p)?,
        None => default_spec(),
    };
    if let Some(c) = a.count {
        spec.count = c;
    }
    if let Some(s) = &a.splits {
        spec.splits = parse_splits(s)?;
    }
    if let Some(n) = a.noise {
        spec.tree.feature_noise = n;
    }
    let m = pipeline::generate(&a.out, &spec, seed)?;
    Ok(json!({ "out": a.out, "seed": seed, "counts": m.counts, "lesioned_graphs": m.lesions.len() }))
}

fn train(a: TrainArgs, seed: Option<u64>) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => pipeline::load_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if a.max_tuples.is_some() {
        cfg.max_tuples_per_graph = a.max_tuples;
    }
    cfg.validate()?;
    let metrics = a.metrics.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    });
    let reports = pipeline::train(&TrainRequest {
        data: &a.data,
        config: cfg.clone(),
        out: &a.out,
        metrics: Some(&metrics),
        resume: a.resume.as_deref(),
        save_optimizer: a.save_optimizer,
    })?;
    Ok(json!({ "checkpoint": a.out, "metrics": metrics, "config": cfg, "epochs": reports }))
}

fn label(a: LabelArgs, seed: Option<u64>) -> Outcome {
    let mut cfg: LabelConfig = match &a.config {
        Some(p) => pipeline::load_json(p)?,
        None => LabelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(mode) = &a.mode {
        cfg.mode = serde_json::from_value::<ScreeningMode>(json!(mode)).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(p) = &a.pivot {
        cfg.pivot = serde_json::from_value::<PivotChoice>(json!(p)).map_err(|e| usage(e.to_string()))?;
    }
    if a.max_tuples.is_some() {
        cfg.max_tuples_per_graph = a.max_tuples;
    }
    let (reports, _) = pipeline::label(&a.data, &a.checkpoint, &cfg, &a.out, a.debug_csv)?;
    let abstained: Vec<&str> = reports.iter().filter(|r| r.abstained).map(|r| r.graph_id.as_str()).collect();
    Ok(json!({
        "out": a.out,
        "graphs": reports.len(),
        "abstained": abstained,
        "accepted": reports.iter().map(|r| r.accepted).sum::<usize>(),
        "rejected": reports.iter().map(|r| r.rejected).sum::<usize>(),
    }))
}

fn eval(a: EvalArgs) -> Outcome {
    let pred = pipeline::Predictions::load(&a.pred)?;
    let truth = pipeline::load_truth(&a.truth)?;
    let v = to_value(&pipeline::evaluate(&pred, &truth)?);
    save(a.out.as_deref(), &v)?;
    Ok(v)
}

fn stenosis(a: StenosisArgs) -> Outcome {
    let v = match (&a.data, &a.mask, &a.centerline) {
        (Some(d), _, _) => {
            let pred = a.pred.as_deref().map(pipeline::Predictions::load).transpose()?;
            to_value(&pipeline::stenosis_dataset(d, pred.as_ref())?)
        }
        (None, Some(m), Some(c)) => {
            let (profile, finding) = pipeline::stenosis_from_mask(m, c)?;
            json!({ "profile": profile, "finding": finding })
        }
        _ => return Err(usage("give --data, or --mask with --centerline")),
    };
    save(a.out.as_deref(), &v)?;
    Ok(v)
}

fn match_cmd(a: MatchArgs) -> Outcome {
    let graphs = a.graphs.iter().map(load_graph).collect::<arterymatch::Result<Vec<_>>>()?;
    let v = pipeline::match_graphs(graphs, &a.checkpoint, a.pivot, Default::default(), a.dump_debug.as_deref())?;
    save(a.out.as_deref(), &v)?;
    Ok(v)
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { kind: "runtime", message: e.to_string() })?;
    }
    match cli.command {
        Command::Generate(a) => generate(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train(a, cli.seed),
        Command::Label(a) => label(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Stenosis(a) => stenosis(a),
        Command::Match(a) => match_cmd(a),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
    ExitCode::from(if f.kind == "usage" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(usage(e.render().to_string().trim_end())),
    };
    match run(cli) {
        Ok(v) => {
            // a closed pipe on stdout is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(f) => fail(f),
    }
}
