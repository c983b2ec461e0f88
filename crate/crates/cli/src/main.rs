//! `pgraph`: command-line driver for the outcome prediction pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use patient_graph::cohort::{generate_synthetic_cohort, load_cohort, save_cohort, SyntheticSpec};
use patient_graph::pipeline::{
    evaluate, prepare_cohort, run_cv_search, FoldPreprocessing, ModelKind, RunConfig, SelectionResult, TaskName,
    TestReport, SELECTION_FILE, TEST_REPORT_FILE,
};
use patient_graph::{Cohort, Error, Task};

#[derive(Parser)]
#[command(name = "pgraph", version, about = "Outcome prediction with patient population graphs")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort as features/endpoints CSV files.
    Synth(SynthArgs),
    /// Fit standardization, feature clustering and ranking on a cohort.
    Preprocess(PreprocessArgs),
    /// Cross-validated grid search; writes the selected models.
    Train(TrainArgs),
    /// Evaluate one or more trained selections on a test cohort.
    Evaluate(EvaluateArgs),
    /// Write the Kaplan-Meier curves of a test report as CSV.
    KmExport(KmExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthTask {
    Classification,
    Survival,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "classification")]
    task: SynthTask,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Coefficients of the leading features; the rest are noise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "3,-2,1.5")]
    signal: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    censor_rate: f64,
    /// Additional patients written to test_features.csv / test_endpoints.csv.
    #[arg(long, default_value_t = 0)]
    test_n: usize,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    endpoints: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    task: Option<CliTask>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    task: Option<CliTask>,
    #[arg(long, value_enum)]
    model: Option<CliModel>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// selection.json files or directories holding them; defaults to the
    /// output directory. Several classification models add a Combo entry.
    #[arg(long, num_args = 1..)]
    selection: Vec<PathBuf>,
}

#[derive(Args)]
struct KmExportArgs {
    /// Test report; defaults to test_report.json in the output directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliTask {
    Hpv,
    BinOs,
    Os,
    Dm,
}

impl From<CliTask> for TaskName {
    fn from(t: CliTask) -> Self {
        match t {
            CliTask::Hpv => TaskName::Hpv,
            CliTask::BinOs => TaskName::BinOs,
            CliTask::Os => TaskName::Os,
            CliTask::Dm => TaskName::Dm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliModel {
    Linear,
    Lpnl,
    Phgn,
}

impl From<CliModel> for ModelKind {
    fn from(m: CliModel) -> Self {
        match m {
            CliModel::Linear => ModelKind::Linear,
            CliModel::Lpnl => ModelKind::Lpnl,
            CliModel::Phgn => ModelKind::Phgn,
        }
    }
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Lib(e) if e.is_data_error() => 2,
            Failure::Lib(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Log lines go to stderr and to `run.log` in the output directory.
struct Tee(Option<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some(f) = &mut self.0 {
            f.write_all(buf)?;
        }
        io::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = &mut self.0 {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Lib(Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn init_logging(level: log::LevelFilter, out: &Path) {
    let file = std::fs::create_dir_all(out)
        .and_then(|_| OpenOptions::new().create(true).append(true).open(out.join("run.log")))
        .ok();
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Pipe(Box::new(Tee(file))))
        .init();
}

fn load_config(cli: &Cli) -> CliResult<Option<RunConfig>> {
    cli.config.as_ref().map(RunConfig::load).transpose().map_err(Failure::from)
}

fn output_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn require(path: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| Failure::Usage(format!("{flag} is required (flag or config data section)")))
}

fn load_data(data: &DataArgs, features: Option<&PathBuf>, endpoints: Option<&PathBuf>) -> CliResult<Cohort> {
    let f = require(data.features.clone().or_else(|| features.cloned()), "--features")?;
    let e = require(data.endpoints.clone().or_else(|| endpoints.cloned()), "--endpoints")?;
    info!("loading {} and {}", f.display(), e.display());
    Ok(load_cohort(f, e)?)
}

fn write_json(path: &Path, json: String) -> CliResult<()> {
    std::fs::write(path, json).map_err(|e| io_err(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn synth(cli: &Cli, args: &SynthArgs, out: &Path) -> CliResult<()> {
    let task = match args.task {
        SynthTask::Classification => Task::Classification,
        SynthTask::Survival => Task::Survival,
    };
    if args.signal.len() > args.p {
        return Err(Failure::Usage(format!("{} signal coefficients for {} features", args.signal.len(), args.p)));
    }
    let total = args.n + args.test_n;
    let spec = SyntheticSpec::with_leading_signal(total, args.p, task, &args.signal, args.censor_rate, cli.seed.unwrap_or(0));
    let cohort = generate_synthetic_cohort(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let idx: Vec<usize> = (0..total).collect();
    save_cohort(&cohort.subset(&idx[..args.n]), out.join("features.csv"), out.join("endpoints.csv"))?;
    if args.test_n > 0 {
        save_cohort(
            &cohort.subset(&idx[args.n..]),
            out.join("test_features.csv"),
            out.join("test_endpoints.csv"),
        )?;
    }
    info!("wrote synthetic cohort of {} + {} patients to {}", args.n, args.test_n, out.display());
    Ok(())
}

fn preprocess(cli: &Cli, args: &PreprocessArgs, cfg: Option<RunConfig>, out: &Path) -> CliResult<()> {
    let task: TaskName = match (args.task, &cfg) {
        (Some(t), _) => t.into(),
        (None, Some(c)) => c.task,
        (None, None) => return Err(Failure::Usage("--task or --config is required".into())),
    };
    let mut cfg = cfg.unwrap_or_else(|| RunConfig::new(task, ModelKind::Linear));
    cfg.task = task;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cohort = load_data(&args.data, cfg.data.features.as_ref(), cfg.data.endpoints.as_ref())?;
    let cohort = prepare_cohort(&cohort, task, cfg.preprocessing.binarize_days)?;
    let prep = FoldPreprocessing::fit(&cohort, task, &cfg.preprocessing, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_json(&out.join("standardizer.json"), prep.standardizer.to_json()?)?;
    write_json(
        &out.join("clusters.json"),
        serde_json::to_string_pretty(&prep.clusters).map_err(Error::from)?,
    )?;
    write_json(&out.join("ranking.json"), prep.ranking.to_json()?)?;
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs, cfg: Option<RunConfig>, out: &Path) -> CliResult<()> {
    let mut cfg = match (cfg, args.task, args.model) {
        (Some(c), _, _) => c,
        (None, Some(t), Some(m)) => RunConfig::new(t.into(), m.into()),
        (None, _, _) => return Err(Failure::Usage("--config, or both --task and --model, are required".into())),
    };
    if let Some(t) = args.task {
        cfg.task = t.into();
    }
    if let Some(m) = args.model {
        cfg.model = m.into();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.output.dir = out.to_path_buf();
    cfg.validate()?;
    let cohort = load_data(&args.data, cfg.data.features.as_ref(), cfg.data.endpoints.as_ref())?;
    info!(
        "training {} for {} on {} patients, seed {}",
        cfg.model.name(),
        cfg.task.endpoint(),
        cohort.len(),
        cfg.seed
    );
    let selection = run_cv_search(&cohort, &cfg)?;
    let best = selection.best();
    info!(
        "best configuration {} with score {:.4} ({:?})",
        best.index,
        best.score.unwrap_or(f64::NAN),
        best.hyperparameters
    );
    for c in selection.configs.iter().filter(|c| c.failure.is_some()) {
        log::warn!("configuration {} disqualified: {}", c.index, c.failure.as_deref().unwrap_or(""));
    }
    for p in selection.save(out)? {
        info!("wrote {}", p.display());
    }
    write_json(&out.join("run_config.json"), cfg.to_json()?)?;
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs, cfg: Option<RunConfig>, out: &Path) -> CliResult<()> {
    let paths = if args.selection.is_empty() {
        vec![out.join(SELECTION_FILE)]
    } else {
        args.selection.clone()
    };
    let selections = paths
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join(SELECTION_FILE) } else { p.clone() };
            if !file.exists() {
                return Err(Failure::Lib(Error::MissingData(format!(
                    "checkpoint {} not found; run `pgraph train` first",
                    file.display()
                ))));
            }
            Ok(SelectionResult::load(&file)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let data = cfg.map(|c| c.data).unwrap_or_default();
    let test = load_data(&args.data, data.test_features.as_ref(), data.test_endpoints.as_ref())?;
    let report = evaluate(&selections, &test)?;
    for m in report.models.iter().chain(&report.combo) {
        info!("{}: {:?}", m.label, m.metrics);
        if let Some(s) = &m.stratification {
            info!(
                "{}: log-rank chi2 {:.3}, p {:.4}{}",
                m.label,
                s.logrank.chi_square,
                s.logrank.p_value,
                if s.significant { " (significant)" } else { "" }
            );
        }
    }
    for p in report.save(out)? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn km_export(args: &KmExportArgs, out: &Path) -> CliResult<()> {
    let path = args.report.clone().unwrap_or_else(|| out.join(TEST_REPORT_FILE));
    if !path.exists() {
        return Err(Failure::Lib(Error::MissingData(format!("report {} not found", path.display()))));
    }
    let report = TestReport::load(&path)?;
    let written = report.export_km(out)?;
    if written.is_empty() {
        log::warn!("report {} has no stratified models", path.display());
    }
    for p in written {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: &Cli, cfg: Option<RunConfig>, out: &Path) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a, out),
        Command::Preprocess(a) => preprocess(cli, a, cfg, out),
        Command::Train(a) => train(cli, a, cfg, out),
        Command::Evaluate(a) => evaluate_cmd(a, cfg, out),
        Command::KmExport(a) => km_export(a, out),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("error: {f}");
    ExitCode::from(f.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(f) => return fail(f),
    };
    let out = output_dir(&cli, cfg.as_ref());
    init_logging(cli.log_level, &out);
    match run(&cli, cfg, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}
