mod check;
mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hce_core::analysis::{build_candidate_pool, radial_histogram, tag_specificity, traverse, EmbeddedPool, PoolConfig};
use hce_core::data::{
    build_vocab, generate_synthetic, load_checkpoint, load_dataset, read_specificity, restrict_to_vocab,
    save_checkpoint, write_dataset, write_specificity, CheckpointMeta, Dataset, SynthConfig,
};
use hce_core::eval::{eval_report, DcgForm, EvalConfig};
use hce_core::model::{init_params, ModelParams, Vocabulary};
use hce_core::training::{train, StepRecord, SubsetPolicy, TrainObserver};
use hce_core::Error;
use serde::Serialize;

use crate::config::RunConfig;

/// Hyperbolic co-embedding of font features and impression tags.
#[derive(Parser)]
#[command(name = "hce", version)]
struct Cli {
    /// Worker threads for parallel sections; 1 gives the reproducibility baseline.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with ground-truth tag specificity.
    Synth(SynthArgs),
    /// Train from a JSON config; writes checkpoints and a metrics log.
    Train(TrainArgs),
    /// Retrieval metrics of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Nearest tag sets along the geodesic from the origin to a font.
    Traverse(TraverseArgs),
    /// Rank vocabulary tags by distance from the origin.
    Specificity(SpecificityArgs),
    /// Radial distances of test fonts, their tag sets, and sampled subsets.
    Histogram(HistogramArgs),
    /// Run the built-in numerical self-tests.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    SyntheticSmall,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "synthetic-small")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives records.jsonl, specificity.json and synth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (JSON). Flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Records file (JSON lines).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct ModelInput {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Records file; tags outside the checkpoint vocabulary are dropped.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DcgArg {
    Linear,
    Exponential,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Seed for multi-tag query sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// nDCG cutoff.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Gain form of DCG.
    #[arg(long, value_enum, default_value = "linear")]
    dcg: DcgArg,
    /// Report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraverseArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Target font id.
    #[arg(long)]
    font: String,
    #[arg(long, default_value_t = 50)]
    n_points: usize,
    /// Neighbors retrieved per point.
    #[arg(long, default_value_t = 1)]
    top_k: usize,
    /// Masked variants drawn per record for the candidate pool.
    #[arg(long, default_value_t = 30)]
    pool_rounds: usize,
    /// Per-tag keep probability when masking.
    #[arg(long, default_value_t = 0.5)]
    keep_prob: f64,
    #[arg(long, default_value_t = 100_000)]
    pool_max: usize,
    /// Seed for the candidate pool.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives traversal.json and traversal.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpecificityArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ground-truth coverage counts (specificity.json from `synth`).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory; receives specificity.json and specificity.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    input: ModelInput,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Subset sampling policy: uniform_proper or bernoulli(p).
    #[arg(long, default_value = "uniform_proper")]
    policy: SubsetPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives histogram.json and histogram.csv.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_) => 1,
                Error::NonFinite(_)
                | Error::OffManifold { .. }
                | Error::DegenerateApex
                | Error::DegeneratePair { .. }
                | Error::Divergence { .. } => 3,
                _ => 2,
            },
            Failure::Check => 3,
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Failure::Usage(e.to_string())),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Check => eprintln!("error: self-test failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Traverse(a) => run_traverse(a),
        Command::Specificity(a) => run_specificity(a),
        Command::Histogram(a) => run_histogram(a),
        Command::Check => run_check(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let cfg = match a.preset {
        Preset::SyntheticSmall => SynthConfig::synthetic_small(a.seed),
    };
    let data = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_dataset(a.out.join("records.jsonl"), &data.dataset)?;
    write_specificity(a.out.join("specificity.json"), &data.specificity)?;
    write_json(&a.out.join("synth.json"), &cfg)?;
    println!(
        "wrote {} fonts, {} tags to {}",
        data.dataset.records.len(),
        data.dataset.vocab.len(),
        a.out.display()
    );
    Ok(())
}

/// Streams the metrics log and writes a checkpoint at every evaluation.
struct RunWriter<'a> {
    log: BufWriter<File>,
    dir: &'a Path,
    meta: CheckpointMeta,
}

impl TrainObserver for RunWriter<'_> {
    fn on_step(&mut self, record: &StepRecord) -> hce_core::Result<()> {
        serde_json::to_writer(&mut self.log, record)?;
        self.log.write_all(b"\n")?;
        if record.step.is_multiple_of(100) {
            eprintln!("step {} total {:.6}", record.step, record.total);
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: usize, params: &ModelParams) -> hce_core::Result<()> {
        let meta = CheckpointMeta {
            step,
            ..self.meta.clone()
        };
        save_checkpoint(params, &meta, self.dir.join(format!("step_{step:06}.hce")))
    }
}

#[derive(Serialize)]
struct TrainSummary {
    best_step: usize,
    steps: usize,
    parameters: usize,
    final_total: Option<f64>,
    evaluations: Vec<hce_core::training::Evaluation>,
}

fn resolve_config(a: &TrainArgs) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if cfg.data.is_none() {
        return Err(Failure::Usage(
            "no dataset: pass --data or set \"data\" in the config".into(),
        ));
    }
    if cfg.out.is_none() {
        return Err(Failure::Usage(
            "no output directory: pass --out or set \"out\" in the config".into(),
        ));
    }
    cfg.train.validate()?;
    cfg.loss.validate()?;
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> Outcome {
    let cfg = resolve_config(&a)?;
    let (data_path, out) = (
        cfg.data.clone().unwrap_or_default(),
        cfg.out.clone().unwrap_or_default(),
    );
    let dataset = build_vocab(&load_dataset(&data_path)?, cfg.min_count)?;
    let dims = cfg.model.dims(dataset.vocab.len(), dataset.feature_dim());
    let init = init_params(dims, cfg.model.curvature, cfg.model.cone_k, cfg.train.seed)?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let meta = CheckpointMeta {
        dims,
        curvature: cfg.model.curvature,
        cone_k: cfg.model.cone_k,
        seed: cfg.train.seed,
        step: 0,
        vocab: dataset.vocab.tags().to_vec(),
        blocks: Vec::new(),
    };
    let mut writer = RunWriter {
        log: BufWriter::new(File::create(out.join("metrics.jsonl"))?),
        dir: &out,
        meta: meta.clone(),
    };
    let outcome = train(&dataset, init, &cfg.train, &cfg.loss, &mut writer);
    writer.log.flush()?;
    let outcome = outcome?;

    save_checkpoint(
        &outcome.best,
        &CheckpointMeta {
            step: outcome.best_step,
            ..meta.clone()
        },
        out.join("best.hce"),
    )?;
    save_checkpoint(
        &outcome.last,
        &CheckpointMeta {
            step: cfg.train.steps,
            ..meta
        },
        out.join("last.hce"),
    )?;
    write_json(
        &out.join("summary.json"),
        &TrainSummary {
            best_step: outcome.best_step,
            steps: cfg.train.steps,
            parameters: outcome.best.num_parameters(),
            final_total: outcome.log.last().map(|r| r.total),
            evaluations: outcome.evaluations,
        },
    )?;
    println!(
        "best checkpoint at step {} -> {}",
        outcome.best_step,
        out.join("best.hce").display()
    );
    Ok(())
}

fn load_model(input: &ModelInput) -> std::result::Result<(ModelParams, Dataset), Failure> {
    let (params, meta) = load_checkpoint(&input.checkpoint)?;
    let vocab = Vocabulary::new(meta.vocab)?;
    let dataset = restrict_to_vocab(&load_dataset(&input.data)?, &vocab)?;
    if dataset.feature_dim() != params.dims.feature_dim {
        return Err(Error::DimensionMismatch {
            what: "font features",
            expected: params.dims.feature_dim,
            got: dataset.feature_dim(),
        }
        .into());
    }
    Ok((params, dataset))
}

fn run_eval(a: EvalArgs) -> Outcome {
    let (params, dataset) = load_model(&a.input)?;
    let cfg = EvalConfig {
        k: a.k,
        dcg: match a.dcg {
            DcgArg::Linear => DcgForm::Linear,
            DcgArg::Exponential => DcgForm::Exponential,
        },
        ..EvalConfig::default()
    };
    let report = eval_report(&params, &dataset, a.seed, &cfg)?;
    print!("{report}");
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn run_traverse(a: TraverseArgs) -> Outcome {
    let (params, dataset) = load_model(&a.input)?;
    let pool_cfg = PoolConfig {
        rounds: a.pool_rounds,
        keep_prob: a.keep_prob,
        max_size: a.pool_max,
    };
    let pool = EmbeddedPool::new(&params, build_candidate_pool(&dataset, &pool_cfg, a.seed)?)?;
    let steps = traverse(&params, &dataset, &a.font, &pool, a.n_points, a.top_k)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("traversal.json"), &steps)?;
    let mut csv = String::from("t,radius,rank,distance,size,tags\n");
    for s in &steps {
        for (rank, n) in s.neighbors.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.t,
                s.radius,
                rank,
                n.distance,
                n.tags.len(),
                n.tags.join(" ")
            ));
        }
    }
    fs::write(a.out.join("traversal.csv"), csv)?;
    for s in &steps {
        if let Some(n) = s.neighbors.first() {
            println!("{:.3}  {}", s.t, n.tags.join(", "));
        }
    }
    Ok(())
}

fn run_specificity(a: SpecificityArgs) -> Outcome {
    let (params, meta) = load_checkpoint(&a.checkpoint)?;
    let vocab = Vocabulary::new(meta.vocab)?;
    let mut table = tag_specificity(&params, &vocab)?;
    if let Some(truth) = &a.truth {
        table = table.with_coverage(&read_specificity(truth)?);
        println!("spearman(distance, -coverage) = {:.4}", table.coverage_correlation()?);
    }
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("specificity.json"), &table)?;
    fs::write(a.out.join("specificity.csv"), table.to_csv())?;
    Ok(())
}

fn run_histogram(a: HistogramArgs) -> Outcome {
    let (params, dataset) = load_model(&a.input)?;
    let hist = radial_histogram(&params, &dataset, a.policy, a.bins, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("histogram.json"), &hist)?;
    fs::write(a.out.join("histogram.csv"), hist.to_csv())?;
    println!(
        "mean distance: fonts {:.4}, tag sets {:.4}, subsets {:.4}",
        hist.means[0], hist.means[1], hist.means[2]
    );
    Ok(())
}

fn run_check() -> Outcome {
    let mut failed = false;
    for o in check::run_all() {
        match &o.result {
            Ok(msg) => println!("PASS {:<10} {msg}", o.name),
            Err(msg) => {
                failed = true;
                println!("FAIL {:<10} {msg}", o.name);
            }
        }
    }
    if failed {
        Err(Failure::Check)
    } else {
        Ok(())
    }
}
