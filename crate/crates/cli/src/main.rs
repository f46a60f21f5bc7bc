use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fma_eta::bench::{bench_latency, BenchConfig};
use fma_eta::data::{
    filter_trips, fit_normalization, generate_dataset, read_jsonl, split_by_time, write_jsonl, Trip, WorldConfig,
};
use fma_eta::models::{
    count_parameters, load_checkpoint, matched_config, EtaModel, ModelConfig, Normalization, Variant,
};
use fma_eta::training::{evaluate, predict_trips, train, MetricsReport, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "fma-eta", version, about = "Travel-time estimation models on synthetic trips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a road network and write trips as JSONL.
    GenData(GenDataArgs),
    /// Train one model and write its best checkpoint.
    Train(TrainArgs),
    /// Score models on a dataset.
    Eval(EvalArgs),
    /// Time single-trip inference across sequence lengths.
    Bench(BenchArgs),
    /// Print the estimated travel time of one trip, in seconds.
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// WorldConfig as TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write filtered train/valid/test files next to --out.
    #[arg(long)]
    partition: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Run configuration (`[model]`, `[train]`, `split`) as TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where the best checkpoint goes.
    #[arg(long)]
    checkpoint: PathBuf,
    /// History CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    All,
    Train,
    Valid,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Parameter-free variants to score without a checkpoint.
    #[arg(long)]
    variant: Vec<Variant>,
    /// Run configuration whose `split` picks the partition.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Part,
    /// Write the reports as a JSON array.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON lines instead of the table.
    #[arg(long)]
    json: bool,
    /// Per-trip CSV: variant,trip_id,label_s,prediction_s.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Untrained variants, sized to match the fma model from --config.
    #[arg(long)]
    variant: Vec<Variant>,
    /// ModelConfig for --variant models, as TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for samples.csv, summary.csv and fits.csv.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Parameter-free variant used when no checkpoint is given.
    #[arg(long)]
    variant: Option<Variant>,
    /// One trip as JSON; `-` reads standard input.
    trip: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
    /// Weeks in train, valid and test.
    split: (usize, usize, usize),
    /// Size baselines to the parameter count of the `[model]` fma network.
    match_parameters: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: (16, 2, 2),
            match_parameters: true,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    } else {
        toml::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

fn load_trips(path: &Path) -> Result<Vec<Trip>> {
    read_jsonl(path).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<EtaModel> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn parameter_free(variant: Variant) -> Result<EtaModel> {
    if variant.is_learned() {
        bail!("variant {variant} needs a trained checkpoint");
    }
    let config = ModelConfig::default().with_variant(variant);
    Ok(EtaModel::new(config, Normalization::default(), &mut ChaCha8Rng::seed_from_u64(0))?)
}

fn sibling(path: &Path, part: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{part}.jsonl"))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut world: WorldConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        world.rng_seed = seed;
    }
    let trips = generate_dataset(&world)?;
    write_jsonl(&trips, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("{} trips -> {}", trips.len(), args.out.display());
    if args.partition {
        let split = split_by_time(filter_trips(trips), (16, 2, 2))?;
        for (part, set) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
            let path = sibling(&args.out, part);
            write_jsonl(set, &path).with_context(|| format!("writing {}", path.display()))?;
            println!("{} trips -> {}", set.len(), path.display());
        }
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut run: RunConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    run.train.checkpoint = Some(args.checkpoint.clone());
    run.train.history = args.out.clone();
    let split = split_by_time(filter_trips(load_trips(&args.dataset)?), run.split)?;
    let norm = fit_normalization(&split.train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    let variant = args.variant.unwrap_or(run.model.variant);
    let config = if run.match_parameters && variant != Variant::Fma && variant.is_learned() {
        let reference = EtaModel::new(run.model.with_variant(Variant::Fma), norm, &mut rng.clone())?;
        matched_config(&run.model, variant, count_parameters(&reference))?
    } else {
        run.model.with_variant(variant)
    };
    let model = EtaModel::new(config, norm, &mut rng)?;
    eprintln!(
        "training {variant} ({} parameters) on {} trips, validating on {}",
        count_parameters(&model),
        split.train.len(),
        split.valid.len()
    );
    let out = train(model, &split.train, &split.valid, &run.train)?;
    let best = out.best_row();
    println!(
        "best step {}: valid MAE {:.3} s, RMSE {:.3} s, MAPE {:.3}% -> {}",
        out.best_step,
        best.valid_mae,
        best.valid_rmse,
        best.valid_mape,
        args.checkpoint.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct NamedReport {
    variant: Variant,
    #[serde(flatten)]
    report: MetricsReport,
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let mut models = args.checkpoint.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    for &v in &args.variant {
        models.push(parameter_free(v)?);
    }
    if models.is_empty() {
        bail!("nothing to evaluate: give --checkpoint or --variant route_eta");
    }
    let trips = filter_trips(load_trips(&args.dataset)?);
    let trips = match args.split {
        Part::All => trips,
        part => {
            let run: RunConfig = load_config(args.config.as_deref())?;
            let split = split_by_time(trips, run.split)?;
            match part {
                Part::Train => split.train,
                Part::Valid => split.valid,
                _ => split.test,
            }
        }
    };
    let mut reports = Vec::with_capacity(models.len());
    let mut prediction_rows = csv_writer(args.predictions.as_deref())?;
    for model in &models {
        let report = evaluate(model, &trips)?;
        if let Some(w) = prediction_rows.as_mut() {
            for (trip, y_hat) in trips.iter().zip(predict_trips(model, &trips)?) {
                w.write_record([
                    model.variant().to_string(),
                    trip.trip_id.to_string(),
                    trip.label().to_string(),
                    y_hat.to_string(),
                ])?;
            }
        }
        reports.push(NamedReport {
            variant: model.variant(),
            report,
        });
    }
    if let Some(mut w) = prediction_rows {
        w.flush()?;
    }
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if args.json {
        for r in &reports {
            println!("{}", serde_json::to_string(r)?);
        }
    } else {
        print!("{}", metrics_table(&reports));
    }
    Ok(())
}

fn csv_writer(path: Option<&Path>) -> Result<Option<csv::Writer<std::fs::File>>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["variant", "trip_id", "label_s", "prediction_s"])?;
    Ok(Some(w))
}

fn metrics_table(reports: &[NamedReport]) -> String {
    let mut out = format!(
        "{:<12} {:>10} {:>10} {:>9} {:>12} {:>8}\n",
        "model", "MAE (s)", "RMSE (s)", "MAPE (%)", "latency (ms)", "trips"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>10.3} {:>10.3} {:>9.3} {:>12.4} {:>8}\n",
            r.variant.name(),
            r.report.mae_s,
            r.report.rmse_s,
            r.report.mape_pct,
            r.report.latency_ms_mean,
            r.report.n
        ));
    }
    out
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let mut models = args.checkpoint.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    if !args.variant.is_empty() {
        let base: ModelConfig = load_config(args.config.as_deref())?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed.unwrap_or(0));
        let reference = EtaModel::new(base.with_variant(Variant::Fma), Normalization::default(), &mut rng)?;
        let target = count_parameters(&reference);
        for &v in &args.variant {
            let config = if v == Variant::Fma { base.with_variant(v) } else { matched_config(&base, v, target)? };
            models.push(EtaModel::new(config, Normalization::default(), &mut rng)?);
        }
    }
    if models.is_empty() {
        bail!("nothing to benchmark: give --checkpoint or --variant");
    }
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        lengths: args.lengths.unwrap_or(defaults.lengths),
        reps: args.reps.unwrap_or(defaults.reps),
        warmup: args.warmup.unwrap_or(defaults.warmup),
        seed: args.seed.unwrap_or(defaults.seed),
        threads: args.threads.unwrap_or(defaults.threads),
    };
    let report = bench_latency(&models, &cfg)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let create = |name: &str| {
        let path = args.out.join(name);
        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))
    };
    report.write_samples_csv(create("samples.csv")?)?;
    report.write_summary_csv(create("summary.csv")?)?;
    report.write_fits_csv(create("fits.csv")?)?;

    println!("{:<12} {:>5} {:>10} {:>10} {:>10}", "model", "T", "mean (ms)", "p50 (ms)", "p99 (ms)");
    for s in &report.summaries {
        println!(
            "{:<12} {:>5} {:>10.4} {:>10.4} {:>10.4}",
            s.variant.name(),
            s.t,
            s.mean_ms,
            s.p50_ms,
            s.p99_ms
        );
    }
    for f in &report.fits {
        println!(
            "{}: ms = {:.4}·ln(T) {:+.4}  ({} parameters, {} thread(s))",
            f.variant, f.a, f.b, f.parameters, f.threads
        );
    }
    println!("wrote samples.csv, summary.csv, fits.csv to {}", args.out.display());
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let model = match (&args.checkpoint, args.variant) {
        (Some(path), _) => load_model(path)?,
        (None, Some(v)) => parameter_free(v)?,
        (None, None) => bail!("give --checkpoint or --variant route_eta"),
    };
    let text = if args.trip == Path::new("-") {
        std::io::read_to_string(std::io::stdin())?
    } else {
        std::fs::read_to_string(&args.trip).with_context(|| format!("reading {}", args.trip.display()))?
    };
    let trip: Trip = serde_json::from_str(text.trim()).context("parsing trip JSON")?;
    println!("{}", model.predict(&trip.features()?)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Predict(a) => predict_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
