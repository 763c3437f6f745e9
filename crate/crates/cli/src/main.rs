//! `latentflow` command-line entry point.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use latentflow::autodiff::{load_checkpoint, save_checkpoint, Tape, Tensor};
use latentflow::forecaster::ForecastResult;
use latentflow::graph::SpectralGraphSequence;
use latentflow::init::Initializer;
use latentflow::ode::{export_field_grid, GateMode, GridSpec, VectorField};
use latentflow::signal::{read_record, write_record};
use latentflow::train::{
    evaluate, finetune_classifier, generate_corpus, featurize_record, history_jsonl, train_forecaster, CorpusSpec,
    Dataset, FeaturizeConfig, HistoryRecord, LogisticBaseline, Model, ModelConfig, ModelOptions, RecordData, RunConfig,
    Stage, WindowSpec,
};
use latentflow::Error;

#[derive(Parser)]
#[command(name = "latentflow", version, about = "Continuous latent dynamics over EEG spectral graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory of this subcommand.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batch-parallel sections (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone, Debug)]
struct RunArgs {
    /// Featurized corpus directory.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Run directory holding the checkpoint.
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of binary records.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Epoch, transform and graph every record of a corpus.
    Featurize {
        #[command(flatten)]
        common: Common,
        /// Corpus directory written by `synth`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Forecasting pretraining.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Classification fine-tuning of a pretrained run.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Test-split metrics of a run.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Forecast future epochs of one record.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        /// Record name; the first test record when absent.
        #[arg(long)]
        record: Option<String>,
        /// Last observed epoch; the earliest valid one when absent.
        #[arg(long)]
        anchor: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Export the learned vector field on a 2-D grid.
    Field {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 20)]
        resolution: usize,
        /// Test samples whose trajectories fit the projection.
        #[arg(long, default_value_t = 64)]
        reference_samples: usize,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn classify(err: &Error) -> u8 {
    match err {
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Json(_) => 2,
        e if e.is_validation() => 2,
        _ => 1,
    }
}

/// Attaches the failing module and operation to an error.
trait Context<T> {
    fn ctx(self, module: &str, op: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, Error> {
    fn ctx(self, module: &str, op: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            code: classify(&e),
            message: format!("{module}::{op}: {e}"),
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn ctx(self, module: &str, op: &str) -> Result<T, CliError> {
        self.map_err(Error::from).ctx(module, op)
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).ctx("cli", "read_config")?;
    RunConfig::from_json_str(&text).ctx("cli", "read_config")
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).ctx("cli", "write_output")?;
    }
    fs::write(path, text).ctx("cli", "write_output")
}

fn guard_overwrite(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(usage(format!(
            "cli::guard_overwrite: {} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_text(&dir.join("config.resolved.json"), &cfg.to_json_string().ctx("cli", "echo_config")?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusEntry {
    name: String,
    file: String,
    seed: u64,
    event_windows: Vec<(f64, f64)>,
    burst_amplitude: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusManifest {
    corpus: CorpusSpec,
    records: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureEntry {
    name: String,
    record_file: String,
    graphs_file: String,
    epochs: usize,
    presym_row_bound_holds: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureManifest {
    featurize: FeaturizeConfig,
    tau: usize,
    records: Vec<FeatureEntry>,
}

/// Shapes that the model layout depends on, stored with the checkpoint.
#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelShape {
    nodes: usize,
    feature_dim: usize,
    observed: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    model: ModelConfig,
    shape: ModelShape,
    stage: Stage,
}

fn cmd_synth(cfg: &RunConfig, out: &Path, force: bool) -> CliResult<()> {
    let manifest_path = out.join("manifest.json");
    guard_overwrite(&manifest_path, force)?;
    let corpus = generate_corpus(&cfg.corpus).ctx("signal_pipeline", "generate_synthetic_record")?;
    fs::create_dir_all(out).ctx("cli", "synth")?;
    let mut records = Vec::with_capacity(corpus.len());
    for rec in &corpus {
        let file = format!("{}.lfsr", rec.name);
        write_record(&out.join(&file), &rec.record).ctx("signal_pipeline", "write_record")?;
        records.push(CorpusEntry {
            name: rec.name.clone(),
            file,
            seed: rec.spec.seed,
            event_windows: rec.spec.event_windows.clone(),
            burst_amplitude: rec.spec.burst_amplitude,
        });
    }
    let manifest = CorpusManifest {
        corpus: cfg.corpus.clone(),
        records,
    };
    write_text(&manifest_path, &serde_json::to_string_pretty(&manifest).map_err(Error::from).ctx("cli", "synth")?)?;
    echo_config(out, cfg)?;
    println!("wrote {} records to {}", corpus.len(), out.display());
    Ok(())
}

fn cmd_featurize(cfg: &RunConfig, data: &Path, out: &Path, force: bool) -> CliResult<()> {
    let manifest_path = out.join("manifest.json");
    guard_overwrite(&manifest_path, force)?;
    let text = fs::read_to_string(data.join("manifest.json")).ctx("cli", "featurize")?;
    let corpus: CorpusManifest = serde_json::from_str(&text).map_err(Error::from).ctx("cli", "featurize")?;
    fs::create_dir_all(out).ctx("cli", "featurize")?;
    let mut entries = Vec::with_capacity(corpus.records.len());
    for rec in &corpus.records {
        let record_path = data.join(&rec.file);
        let record = read_record(&record_path).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", record_path.display()),
            },
            other => other,
        });
        let record = record.ctx("signal_pipeline", "read_record")?;
        let graphs = featurize_record(&record, &cfg.featurize, cfg.train.tau).ctx("graph_builder", "correlation_adjacency")?;
        let graphs_file = format!("{}.graphs.json", rec.name);
        write_text(&out.join(&graphs_file), &graphs.to_json_string().ctx("graph_builder", "serialize")?)?;
        entries.push(FeatureEntry {
            name: rec.name.clone(),
            record_file: record_path.to_string_lossy().into_owned(),
            graphs_file,
            epochs: graphs.len(),
            presym_row_bound_holds: graphs.graphs.iter().all(|g| g.presym_max_row_nnz <= g.tau),
        });
    }
    let manifest = FeatureManifest {
        featurize: cfg.featurize.clone(),
        tau: cfg.train.tau,
        records: entries,
    };
    write_text(&manifest_path, &serde_json::to_string_pretty(&manifest).map_err(Error::from).ctx("cli", "featurize")?)?;
    echo_config(out, cfg)?;
    println!("featurized {} records into {}", manifest.records.len(), out.display());
    Ok(())
}

fn load_dataset(features: &Path, cfg: &RunConfig) -> CliResult<Dataset> {
    let text = fs::read_to_string(features.join("manifest.json")).ctx("cli", "load_dataset")?;
    let manifest: FeatureManifest = serde_json::from_str(&text).map_err(Error::from).ctx("cli", "load_dataset")?;
    if manifest.tau != cfg.train.tau {
        return Err(usage(format!(
            "cli::load_dataset: features were built with tau {} but train.tau is {}",
            manifest.tau, cfg.train.tau
        )));
    }
    let mut records = Vec::with_capacity(manifest.records.len());
    for e in &manifest.records {
        let record = read_record(Path::new(&e.record_file)).ctx("signal_pipeline", "read_record")?;
        let text = fs::read_to_string(features.join(&e.graphs_file)).ctx("cli", "load_dataset")?;
        let graphs = SpectralGraphSequence::from_json_str(&text).ctx("graph_builder", "deserialize")?;
        records.push(RecordData::new(&e.name, &record, graphs, &manifest.featurize).ctx("training_eval", "load_dataset")?);
    }
    Dataset::new(records, WindowSpec::from_config(&cfg.train), cfg.train.split_seed).ctx("training_eval", "split_records")
}

fn thread_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError {
            code: 1,
            message: format!("cli::thread_pool: {e}"),
        })
}

fn save_model(dir: &Path, stem: &str, model: &Model, stage: Stage) -> CliResult<()> {
    let meta = CheckpointMeta {
        model: model.config.clone(),
        shape: ModelShape {
            nodes: model.nodes,
            feature_dim: model.feature_dim,
            observed: model.observed,
        },
        stage,
    };
    let value = serde_json::to_value(&meta).map_err(Error::from).ctx("autodiff_engine", "save_checkpoint")?;
    save_checkpoint(dir, stem, &model.store, Some(value)).ctx("autodiff_engine", "save_checkpoint")?;
    Ok(())
}

fn load_model(dir: &Path, stem: &str, cfg: &RunConfig) -> CliResult<(Model, Stage)> {
    let (store, meta) = load_checkpoint(&dir.join(format!("{stem}.json"))).ctx("autodiff_engine", "load_checkpoint")?;
    let meta = meta.ok_or_else(|| usage("autodiff_engine::load_checkpoint: checkpoint carries no model description"))?;
    let meta: CheckpointMeta = serde_json::from_value(meta).map_err(Error::from).ctx("autodiff_engine", "load_checkpoint")?;
    let mut model = Model::new(
        &meta.model,
        ModelOptions::from_config(&cfg.train),
        meta.shape.nodes,
        meta.shape.feature_dim,
        meta.shape.observed,
        &mut Initializer::zeros(),
    )
    .ctx("training_eval", "build_model")?;
    model.load_params(&store).ctx("autodiff_engine", "load_checkpoint")?;
    Ok((model, meta.stage))
}

fn write_history(path: &Path, records: &[HistoryRecord]) -> CliResult<()> {
    write_text(path, &history_jsonl(records).ctx("training_eval", "history")?)
}

fn read_history(path: &Path) -> CliResult<Vec<HistoryRecord>> {
    let text = fs::read_to_string(path).ctx("training_eval", "history")?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from).ctx("training_eval", "history"))
        .collect()
}

fn cmd_train(cfg: &mut RunConfig, features: &Path, out: &Path, force: bool, pool: &rayon::ThreadPool) -> CliResult<()> {
    guard_overwrite(&out.join("pretrained.json"), force)?;
    cfg.train.stage = Stage::ForecastPretrain;
    let data = load_dataset(features, cfg)?;
    let mut model = Model::new(
        &cfg.model,
        ModelOptions::from_config(&cfg.train),
        data.nodes(),
        data.feature_dim(),
        cfg.train.observed_epochs,
        &mut Initializer::seeded(cfg.train.seed),
    )
    .ctx("training_eval", "build_model")?;
    let outcome = train_forecaster(&mut model, &data, &cfg.train, pool).ctx("training_eval", "train_forecaster")?;
    fs::create_dir_all(out).ctx("cli", "train")?;
    echo_config(out, cfg)?;
    save_model(out, "pretrained", &model, Stage::ForecastPretrain)?;
    save_model(out, "checkpoint", &model, Stage::ForecastPretrain)?;
    write_history(&out.join("history.jsonl"), &outcome.history)?;
    println!(
        "pretrained for {} epochs; best validation loss {:.6} at epoch {}",
        outcome.history.len(),
        outcome.best_metric,
        outcome.best_epoch
    );
    Ok(())
}

fn cmd_finetune(cfg: &mut RunConfig, features: &Path, run: &Path, out: &Path, pool: &rayon::ThreadPool) -> CliResult<()> {
    cfg.train.stage = Stage::ClassifyFinetune;
    let data = load_dataset(features, cfg)?;
    let (mut model, _) = load_model(run, "pretrained", cfg)?;
    let outcome = finetune_classifier(&mut model, &data, &cfg.train, pool).ctx("training_eval", "finetune_classifier")?;
    let history_path = run.join("history.jsonl");
    let mut history: Vec<HistoryRecord> = if history_path.exists() {
        read_history(&history_path)?
            .into_iter()
            .filter(|h| h.stage == Stage::ForecastPretrain)
            .collect()
    } else {
        Vec::new()
    };
    history.extend(outcome.history.iter().cloned());
    fs::create_dir_all(out).ctx("cli", "finetune")?;
    echo_config(out, cfg)?;
    if out != run {
        let (pre, _) = load_model(run, "pretrained", cfg)?;
        save_model(out, "pretrained", &pre, Stage::ForecastPretrain)?;
    }
    save_model(out, "checkpoint", &model, Stage::ClassifyFinetune)?;
    write_history(&out.join("history.jsonl"), &history)?;
    println!(
        "fine-tuned for {} epochs; best validation AUROC {:.6} at epoch {}",
        outcome.history.len(),
        outcome.best_metric,
        outcome.best_epoch
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluationDetails {
    test_samples: usize,
    test_positives: usize,
    threshold: f64,
    persistence_gji: f64,
    baseline_auroc: f64,
}

fn cmd_eval(cfg: &RunConfig, features: &Path, run: &Path, out: &Path, pool: &rayon::ThreadPool) -> CliResult<()> {
    let data = load_dataset(features, cfg)?;
    let (model, _) = load_model(run, "checkpoint", cfg)?;
    let ev = evaluate(&model, &data, &data.test, &cfg.train, pool).ctx("training_eval", "evaluate")?;
    let baseline = LogisticBaseline::fit_dataset(&data).ctx("training_eval", "baseline")?;
    let base_scores = baseline.score_samples(&data, &data.test);
    let baseline_auroc = latentflow::train::compute_auroc(&base_scores, &ev.labels).ctx("training_eval", "compute_auroc")?;
    let details = EvaluationDetails {
        test_samples: ev.labels.len(),
        test_positives: ev.labels.iter().filter(|&&l| l != 0).count(),
        threshold: ev.threshold,
        persistence_gji: ev.persistence_gji,
        baseline_auroc,
    };
    let json = |v: &dyn erased::Json| v.to_pretty();
    write_text(&out.join("metrics.json"), &json(&ev.report).ctx("training_eval", "metrics")?)?;
    write_text(&out.join("evaluation.json"), &json(&details).ctx("training_eval", "metrics")?)?;
    println!(
        "auroc {:.4}  f1 {:.4}  gji {:.4} (persistence {:.4})  baseline auroc {:.4}",
        ev.report.auroc, ev.report.f1, ev.report.gji, ev.persistence_gji, baseline_auroc
    );
    Ok(())
}

mod erased {
    use latentflow::Error;

    pub trait Json {
        fn to_pretty(&self) -> Result<String, Error>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_pretty(&self) -> Result<String, Error> {
            Ok(serde_json::to_string_pretty(self)?)
        }
    }
}

fn cmd_forecast(
    cfg: &RunConfig,
    features: &Path,
    run: &Path,
    out: &Path,
    record: Option<&str>,
    anchor: Option<usize>,
    horizon: usize,
) -> CliResult<()> {
    let data = load_dataset(features, cfg)?;
    let (model, _) = load_model(run, "checkpoint", cfg)?;
    let ri = match record {
        Some(name) => data
            .records
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| usage(format!("forecaster::forecast: no record named {name}")))?,
        None => data.splits.test[0],
    };
    let rec = &data.records[ri];
    let w = data.window;
    let first = (w.observed - 1) * w.stride;
    let t = anchor.unwrap_or(first);
    if t < first || t >= rec.graphs.len() {
        return Err(usage(format!(
            "forecaster::forecast: anchor {t} outside [{first}, {}) for {}",
            rec.graphs.len(),
            rec.name
        )));
    }
    let observed: Vec<usize> = w.observed_epochs(t);
    let graphs: Vec<_> = observed.iter().map(|&e| &rec.graphs.graphs[e]).collect();
    let window = rec.temporal_window(&observed).ctx("encoders", "encode_temporal_stochastic")?;
    let inf = model.infer(&graphs, &window, horizon).ctx("forecaster", "decode_step")?;
    let offsets: Vec<usize> = (1..=horizon).map(|k| k * w.stride).collect();
    let truth: Vec<&Tensor> = offsets
        .iter()
        .map_while(|o| rec.graphs.graphs.get(t + o).map(|g| &g.node_features))
        .collect();
    let result = ForecastResult::new(&inf.predictions, &offsets, &truth, cfg.train.tau, inf.trajectory.nfe)
        .ctx("forecaster", "forecast")?;
    write_text(&out.join("forecast.json"), &result.to_json_string().ctx("forecaster", "forecast")?)?;
    println!("forecast {} steps of {} from epoch {t}", result.horizon(), rec.name);
    Ok(())
}

fn cmd_field(cfg: &RunConfig, features: &Path, run: &Path, out: &Path, resolution: usize, refs: usize) -> CliResult<()> {
    let data = load_dataset(features, cfg)?;
    let (model, _) = load_model(run, "checkpoint", cfg)?;
    let mut reference = Vec::new();
    for s in data.test.iter().take(refs.max(1)) {
        let graphs = data.observed_graphs(s);
        let window = data.temporal_window(s).ctx("encoders", "encode_temporal_stochastic")?;
        let inf = model.infer(&graphs, &window, data.window.horizon).ctx("neural_ode", "solve_trajectory")?;
        reference.extend(inf.trajectory.states);
    }
    let c = model.config.stoch_dim;
    let eval_field = |z: &[f64]| -> latentflow::Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape, |_| false);
        let zv = tape.constant(Tensor::row(z.to_vec()));
        let zs = tape.constant(Tensor::row(z[..c].to_vec()));
        let gate = (model.options.gate == GateMode::Random).then(|| Tensor::filled(1, z.len(), 0.5));
        let field = model.field.bind(&mut tape, &p, zs, gate)?;
        let f = field.eval(&mut tape, zv)?;
        Ok(tape.value(f).data().to_vec())
    };
    let grid = GridSpec {
        resolution_x: resolution,
        resolution_y: resolution,
        bounds: None,
    };
    let exported = export_field_grid(&eval_field, &reference, &grid).ctx("neural_ode", "export_field_grid")?;
    write_text(&out.join("field.csv"), &exported.to_csv())?;
    write_text(
        &out.join("field.json"),
        &serde_json::to_string_pretty(&exported).map_err(Error::from).ctx("neural_ode", "export_field_grid")?,
    )?;
    println!("exported {} arrows to {}", exported.arrows.len(), out.join("field.csv").display());
    Ok(())
}

fn resolve(common: &Common, run_dir: Option<&Path>) -> CliResult<RunConfig> {
    let cfg = match (&common.config, run_dir) {
        (Some(p), _) => read_config(p)?,
        (None, Some(dir)) if dir.join("config.resolved.json").exists() => read_config(&dir.join("config.resolved.json"))?,
        _ => RunConfig::default(),
    };
    cfg.validate().ctx("cli", "validate_config")?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { common } => {
            let mut cfg = resolve(&common, None)?;
            if let Some(s) = common.seed {
                cfg.corpus.seed = s;
            }
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.data_dir));
            cfg.paths.data_dir = out.to_string_lossy().into_owned();
            thread_pool(common.threads)?.install(|| cmd_synth(&cfg, &out, common.force))
        }
        Command::Featurize { common, data } => {
            let mut cfg = resolve(&common, None)?;
            let data = data.unwrap_or_else(|| PathBuf::from(&cfg.paths.data_dir));
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.features_dir));
            cfg.paths.data_dir = data.to_string_lossy().into_owned();
            cfg.paths.features_dir = out.to_string_lossy().into_owned();
            thread_pool(common.threads)?.install(|| cmd_featurize(&cfg, &data, &out, common.force))
        }
        Command::Train { common, features } => {
            let mut cfg = resolve(&common, None)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let features = features.unwrap_or_else(|| PathBuf::from(&cfg.paths.features_dir));
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.run_dir));
            cfg.paths.features_dir = features.to_string_lossy().into_owned();
            cfg.paths.run_dir = out.to_string_lossy().into_owned();
            let pool = thread_pool(common.threads)?;
            pool.install(|| cmd_train(&mut cfg, &features, &out, common.force, &pool))
        }
        Command::Finetune { common, run } => {
            let (mut cfg, features, run_dir, out) = run_context(&common, &run)?;
            let pool = thread_pool(common.threads)?;
            pool.install(|| cmd_finetune(&mut cfg, &features, &run_dir, &out, &pool))
        }
        Command::Eval { common, run } => {
            let (cfg, features, run_dir, out) = run_context(&common, &run)?;
            let pool = thread_pool(common.threads)?;
            pool.install(|| cmd_eval(&cfg, &features, &run_dir, &out, &pool))
        }
        Command::Forecast {
            common,
            run,
            record,
            anchor,
            horizon,
        } => {
            let (cfg, features, run_dir, out) = run_context(&common, &run)?;
            let horizon = horizon.unwrap_or(cfg.train.horizon);
            if horizon == 0 {
                return Err(usage("forecaster::forecast: horizon must be ≥ 1"));
            }
            thread_pool(common.threads)?
                .install(|| cmd_forecast(&cfg, &features, &run_dir, &out, record.as_deref(), anchor, horizon))
        }
        Command::Field {
            common,
            run,
            resolution,
            reference_samples,
        } => {
            let (cfg, features, run_dir, out) = run_context(&common, &run)?;
            thread_pool(common.threads)?
                .install(|| cmd_field(&cfg, &features, &run_dir, &out, resolution, reference_samples))
        }
    }
}

/// Config, features directory, run directory and output directory of the
/// subcommands that operate on an existing run.
fn run_context(common: &Common, run: &RunArgs) -> CliResult<(RunConfig, PathBuf, PathBuf, PathBuf)> {
    let provisional = run.run.clone();
    let mut cfg = resolve(common, provisional.as_deref())?;
    let run_dir = provisional.unwrap_or_else(|| PathBuf::from(&cfg.paths.run_dir));
    if common.config.is_none() && run.run.is_none() {
        cfg = resolve(common, Some(&run_dir))?;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    let features = run.features.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.features_dir));
    let out = common.out.clone().unwrap_or_else(|| run_dir.clone());
    cfg.paths.features_dir = features.to_string_lossy().into_owned();
    cfg.paths.run_dir = run_dir.to_string_lossy().into_owned();
    Ok((cfg, features, run_dir, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
