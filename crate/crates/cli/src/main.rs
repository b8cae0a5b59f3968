mod settings;

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use tdif_core::corpus::{ingest_jsonl, load_topics, Document, Topic};
use tdif_core::learn::{fit_weights, instances_from_stream, FitConfig, InstanceConfig, Objective, WeightsFile};
use tdif_core::metrics::{
    evaluate_run, write_scores_csv, DocMeta, GradeThresholds, Judging, MetricParams, Qrels, MEASURES,
};
use tdif_core::select::{read_run, run_stream, write_run, FeatureConfig, RunRow, StreamConfig, Strategy, WindowReport};
use tdif_core::synth::{generate, SynthConfig};

use settings::Overrides;

const HOUR_MS: i64 = 3_600_000;

#[derive(Parser)]
#[command(name = "tdif", version, about = "Topic-focused dynamic information filtering over tweet streams")]
struct Cli {
    /// `key = value` file; its settings override the corresponding flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-topic processing; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic stream, topics and qrels.
    Synth(SynthArgs),
    /// Learn utility weights from a stream and its judgments.
    Train(TrainArgs),
    /// Run a selection strategy over a stream and write a run file.
    Run(RunArgs),
    /// Score a run file with the diversity measures.
    Eval(EvalArgs),
    /// Time strategies per window and count utility evaluations.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    topics: usize,
    #[arg(long, default_value_t = 16)]
    days: usize,
    /// Documents per topic per day.
    #[arg(long, default_value_t = 200)]
    docs_per_day: usize,
    #[arg(long, default_value_t = 40)]
    subtopics: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for stream.jsonl, topics.json and qrels.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    /// Window length in hours.
    #[arg(long, default_value_t = 48)]
    window_length: i64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: StreamArgs,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value = "sequential")]
    objective: Objective,
    /// Measure whose gain the ideal sequences maximize.
    #[arg(long, default_value = "alpha-ndcg")]
    target: String,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 20)]
    cutoff: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    /// Leading windows that become training instances.
    #[arg(long, default_value_t = 1)]
    train_windows: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: StreamArgs,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long = "k", default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    select: SelectArgs,
    #[arg(long, default_value = "dp")]
    strategy: Strategy,
    /// Run file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    /// Recency/confidence sidecar for static judging.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Judge each window as of its end using document times and followers
    /// from this stream.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Measures to report; all six by default.
    #[arg(long, value_delimiter = ',')]
    metric: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
    #[arg(long, default_value_t = 20)]
    cutoff: usize,
    /// Window length in hours, for windowed judging.
    #[arg(long, default_value_t = 48)]
    window_length: i64,
    /// Score at least this many windows; missing blocks score 0.
    #[arg(long, default_value_t = 0)]
    windows: usize,
    /// Scores CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    select: SelectArgs,
    #[arg(long, value_delimiter = ',', default_value = "dp,toprel,allbatch")]
    strategies: Vec<Strategy>,
    /// Timing CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<tdif_core::Error> for Failure {
    fn from(e: tdif_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let mut overrides = Overrides::load(cli.config.as_deref())?;
    let mut workers = cli.workers;
    overrides.apply("workers", &mut workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Usage(e.into()))?;
    let result = match cli.command {
        Command::Synth(a) => synth(a, &mut overrides),
        Command::Train(a) => train(a, &mut overrides),
        Command::Run(a) => pool.install(|| run(a, &mut overrides)),
        Command::Eval(a) => eval(a, &mut overrides),
        Command::Bench(a) => pool.install(|| bench(a, &mut overrides)),
    };
    overrides.warn_unused();
    result
}

fn synth(mut a: SynthArgs, o: &mut Overrides) -> Result<(), Failure> {
    o.apply("topics", &mut a.topics)?;
    o.apply("days", &mut a.days)?;
    o.apply("docs_per_day", &mut a.docs_per_day)?;
    o.apply("subtopics", &mut a.subtopics)?;
    let config = SynthConfig {
        topics: a.topics,
        days: a.days,
        docs_per_day: a.docs_per_day,
        subtopics: a.subtopics,
        seed: o.seed(a.seed)?,
        ..SynthConfig::default()
    };
    config.validate().map_err(|e| Failure::Usage(e.into()))?;
    let data = generate(&config)?;
    data.write_to(&a.out)?;
    log::info!("wrote {} documents to {}", data.documents.len(), a.out.display());
    Ok(())
}

struct Inputs {
    stream: Vec<Document>,
    topics: Vec<Topic>,
}

fn load_inputs(a: &StreamArgs) -> Result<Inputs, Failure> {
    let stream = ingest_jsonl(&a.stream)?;
    let topics = load_topics(&a.topics)?;
    Ok(Inputs { stream, topics })
}

fn window_ms(hours: i64) -> Result<i64, Failure> {
    if hours <= 0 {
        return Err(usage(format!("window_length must be positive, got {hours}")));
    }
    Ok(hours * HOUR_MS)
}

fn feature_config(o: &mut Overrides, seed: u64) -> Result<FeatureConfig, Failure> {
    let mut features = FeatureConfig {
        params: o.features()?,
        ..FeatureConfig::default()
    };
    features.plsa.seed = seed;
    o.apply("plsa_topics", &mut features.plsa.num_topics)?;
    if features.plsa.num_topics == 0 {
        return Err(usage("plsa_topics must be positive"));
    }
    Ok(features)
}

fn apply_stream_overrides(a: &mut StreamArgs, o: &mut Overrides) -> Result<(), Failure> {
    o.apply("window_length", &mut a.window_length)
}

fn train(mut a: TrainArgs, o: &mut Overrides) -> Result<(), Failure> {
    apply_stream_overrides(&mut a.input, o)?;
    o.apply("objective", &mut a.objective)?;
    o.apply("target", &mut a.target)?;
    o.apply("alpha", &mut a.alpha)?;
    o.apply("gamma", &mut a.gamma)?;
    o.apply("cutoff", &mut a.cutoff)?;
    o.apply("learning_rate", &mut a.learning_rate)?;
    o.apply("iterations", &mut a.iterations)?;
    o.apply("train_windows", &mut a.train_windows)?;
    let seed = o.seed(a.input.seed)?;
    let target = MetricParams {
        alpha: a.alpha,
        gamma: a.gamma,
        cutoff: a.cutoff,
        ..MetricParams::measure(&a.target).map_err(|e| Failure::Usage(e.into()))?
    };
    target.validate().map_err(|e| Failure::Usage(e.into()))?;
    if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
        return Err(usage(format!("learning_rate must be positive, got {}", a.learning_rate)));
    }
    if a.train_windows == 0 {
        return Err(usage("train_windows must be positive"));
    }
    let config = InstanceConfig {
        objective: a.objective,
        target,
        features: feature_config(o, seed)?,
        window_length_ms: window_ms(a.input.window_length)?,
        windows: a.train_windows,
        seed,
        ..InstanceConfig::default()
    };

    let inputs = load_inputs(&a.input)?;
    let qrels = Qrels::load(&a.qrels)?;
    let judged: Vec<Topic> = inputs
        .topics
        .iter()
        .filter(|t| {
            let known = qrels.has_topic(&t.topic_id);
            if !known {
                log::warn!("topic {} has no judgments and is not used for training", t.topic_id);
            }
            known
        })
        .cloned()
        .collect();
    let instances = instances_from_stream(&judged, &inputs.stream, &qrels, &config)?;
    let fit = fit_weights(
        &instances,
        &FitConfig {
            objective: a.objective,
            learning_rate: a.learning_rate,
            iterations: a.iterations,
            seed,
        },
    )?;
    if let (Some(first), Some(last)) = (fit.trace.first(), fit.trace.last()) {
        log::info!("{} instances, objective {first:.6} -> {last:.6}", instances.len());
    }
    let source = a
        .input
        .stream
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let trained_on = format!(
        "{source} target={} windows={} lr={} iterations={} seed={seed}",
        target.name(),
        a.train_windows,
        a.learning_rate,
        a.iterations
    );
    WeightsFile::new(&fit.weights, a.objective, trained_on).save(&a.out)?;
    Ok(())
}

struct Selection {
    inputs: Inputs,
    weights: tdif_core::select::WeightVector,
    config: StreamConfig,
}

fn prepare_selection(a: &mut SelectArgs, strategy: Strategy, o: &mut Overrides) -> Result<Selection, Failure> {
    apply_stream_overrides(&mut a.input, o)?;
    o.apply("k", &mut a.k)?;
    o.apply("m", &mut a.m)?;
    let seed = o.seed(a.input.seed)?;
    let config = StreamConfig {
        strategy,
        k: a.k,
        m: a.m,
        window_length_ms: window_ms(a.input.window_length)?,
        features: feature_config(o, seed)?,
        ..StreamConfig::default()
    };
    if a.k == 0 {
        return Err(usage("K must be positive"));
    }
    config.validate().map_err(|e| Failure::Usage(e.into()))?;
    let weights = WeightsFile::load(&a.weights)?.weights()?;
    let inputs = load_inputs(&a.input)?;
    Ok(Selection {
        inputs,
        weights,
        config,
    })
}

/// Runs every topic on the current worker pool; results keep topic order.
fn run_topics(sel: &Selection, config: &StreamConfig) -> Result<Vec<Vec<WindowReport>>, Failure> {
    sel.inputs
        .topics
        .par_iter()
        .map(|t| run_stream(t, &sel.inputs.stream, &sel.weights, config))
        .collect::<tdif_core::Result<Vec<_>>>()
        .map_err(Failure::from)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(mut a: RunArgs, o: &mut Overrides) -> Result<(), Failure> {
    let mut strategy = a.strategy;
    o.apply("strategy", &mut strategy)?;
    let sel = prepare_selection(&mut a.select, strategy, o)?;
    let reports = run_topics(&sel, &sel.config)?;
    let mut rows = Vec::new();
    for (topic, topic_reports) in sel.inputs.topics.iter().zip(&reports) {
        for r in topic_reports {
            rows.extend(RunRow::from_result(&topic.topic_id, r.window_index, &r.result));
        }
    }
    let mut w = output(a.out.as_deref())?;
    write_run(&mut w, &rows).context("writing run file")?;
    Ok(())
}

fn eval(mut a: EvalArgs, o: &mut Overrides) -> Result<(), Failure> {
    o.apply("alpha", &mut a.alpha)?;
    o.apply("gamma", &mut a.gamma)?;
    o.apply("beta", &mut a.beta)?;
    o.apply("cutoff", &mut a.cutoff)?;
    o.apply("window_length", &mut a.window_length)?;
    o.apply("windows", &mut a.windows)?;
    let mut metric_list = a.metric.join(",");
    o.apply("metric", &mut metric_list)?;
    let names: Vec<&str> = if metric_list.is_empty() {
        MEASURES.to_vec()
    } else {
        metric_list.split(',').map(str::trim).collect()
    };
    let measures = names
        .iter()
        .map(|n| {
            let p = MetricParams {
                alpha: a.alpha,
                gamma: a.gamma,
                beta: a.beta,
                cutoff: a.cutoff,
                ..MetricParams::measure(n)?
            };
            p.validate().map(|()| p)
        })
        .collect::<tdif_core::Result<Vec<_>>>()
        .map_err(|e| Failure::Usage(e.into()))?;
    let window_length_ms = window_ms(a.window_length)?;

    let file = File::open(&a.run).with_context(|| format!("cannot open {}", a.run.display()))?;
    let rows = read_run(BufReader::new(file)).with_context(|| format!("{}", a.run.display()))?;
    let topics = load_topics(&a.topics)?;
    let mut qrels = Qrels::load(&a.qrels)?;
    if let Some(sidecar) = &a.sidecar {
        qrels.load_sidecar(sidecar)?;
    }

    let evaluation = match &a.stream {
        Some(path) => {
            let stream = ingest_jsonl(path)?;
            let anchor_ms = stream
                .iter()
                .map(|d| d.epoch_ms)
                .min()
                .ok_or_else(|| anyhow!("{}: empty stream", path.display()))?;
            let meta: HashMap<String, DocMeta> = stream
                .iter()
                .map(|d| {
                    (
                        d.doc_id.clone(),
                        DocMeta {
                            epoch_ms: d.epoch_ms,
                            followers: d.followers,
                        },
                    )
                })
                .collect();
            let judging = Judging::Windowed {
                qrels: &qrels,
                meta: &meta,
                anchor_ms,
                window_length_ms,
                thresholds: GradeThresholds::default(),
            };
            evaluate_run(&rows, &topics, &judging, &measures, a.windows)?
        }
        None => evaluate_run(&rows, &topics, &Judging::Static(&qrels), &measures, a.windows)?,
    };
    let mut w = output(a.out.as_deref())?;
    write_scores_csv(&mut w, &evaluation).context("writing scores")?;
    Ok(())
}

fn bench(mut a: BenchArgs, o: &mut Overrides) -> Result<(), Failure> {
    let mut list = a
        .strategies
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    o.apply("strategies", &mut list)?;
    let strategies = list
        .split(',')
        .map(|s| s.trim().parse::<Strategy>())
        .collect::<tdif_core::Result<Vec<_>>>()
        .map_err(|e| Failure::Usage(e.into()))?;
    let first = *strategies.first().ok_or_else(|| usage("no strategies given"))?;
    let sel = prepare_selection(&mut a.select, first, o)?;

    let mut w = output(a.out.as_deref())?;
    writeln!(w, "strategy,window,wall_ms,utility_evals").context("writing bench")?;
    for strategy in strategies {
        let config = StreamConfig { strategy, ..sel.config };
        config.validate().map_err(|e| Failure::Usage(e.into()))?;
        let reports = run_topics(&sel, &config)?;
        let windows = reports.iter().map(Vec::len).max().unwrap_or(0);
        let topics = reports.len().max(1) as f64;
        let mut total_ms = 0.0;
        let mut total_evals = 0u64;
        for win in 0..windows {
            let (ms, evals) = reports
                .iter()
                .filter_map(|r| r.get(win))
                .fold((0.0, 0u64), |(ms, ev), r| {
                    (ms + r.elapsed.as_secs_f64() * 1e3, ev + r.utility_evals)
                });
            // mean over topics of the time spent on this window
            let ms = ms / topics;
            total_ms += ms;
            total_evals += evals;
            writeln!(w, "{strategy},{win},{ms:.3},{evals}").context("writing bench")?;
        }
        let n = windows.max(1) as f64;
        writeln!(w, "{strategy},mean,{:.3},{:.1}", total_ms / n, total_evals as f64 / n).context("writing bench")?;
    }
    w.flush().context("writing bench")?;
    Ok(())
}
