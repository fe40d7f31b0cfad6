//! Command-line driver: `simulate`, `cluster`, `train`, `forecast`,
//! `evaluate`, `compare` and `bench`.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 1 for
//! runtime failures. Errors are reported on stderr as one JSON object.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tsen::encoders::EncoderKind;
use tsen::io::write_atomic;
use tsen::pipeline::{self, BenchConfig, MethodSpec, PipelineConfig};
use tsen::stats::{friedman, wilcoxon_signed_rank, Alternative, ScoreTable};
use tsen::varma::{simulate_case, SimCase};
use tsen::Error;

#[derive(Debug, Parser)]
#[command(name = "tsen", version, about = "Grouped multi-series forecasting toolkit")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one synthetic benchmark panel as CSV.
    Simulate {
        #[arg(long)]
        case: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the case's number of observations.
        #[arg(long)]
        obs: Option<usize>,
    },
    /// Group series by target distance; writes partition and distance CSVs.
    Cluster(RunArgs),
    /// Train grouped models (and baselines) for every group.
    Train(RunArgs),
    /// Forecast from the most recent window with trained models.
    Forecast(RunArgs),
    /// Score trained models on the test split.
    Evaluate(RunArgs),
    /// Friedman and signed-rank tests on a score table CSV.
    Compare(CompareArgs),
    /// Simulation benchmark: every method on repeated synthetic panels.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `data.panel`.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Overrides `eval.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `cluster.k`.
    #[arg(long)]
    k: Option<usize>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AltArg {
    ABetter,
    TwoSided,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    scores: PathBuf,
    /// First method of the signed-rank test (default: best average rank).
    #[arg(long, requires = "b")]
    a: Option<String>,
    /// Second method (default: second-best average rank).
    #[arg(long, requires = "a")]
    b: Option<String>,
    #[arg(long, value_enum, default_value = "a-better")]
    alternative: AltArg,
    /// Also write the JSON lines to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON file with bench settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<u8>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    obs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated method names, e.g. TSEN-GRU,GRU.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let env = env_logger::Env::default().default_filter_or(level);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } => "shape",
        Error::Contract(_) => "contract",
        Error::Numeric(_) => "numeric",
        Error::Data(_) => "data",
        Error::Ingest { .. } => "ingest",
        Error::Generation(_) => "generation",
        Error::Degenerate(_) => "degenerate",
        Error::Config(_) => "config",
        Error::ParamFile { .. } => "param_file",
        Error::Io { .. } => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

/// Runs the tool on `argv` (including the program name) and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", e.to_string().trim());
            return 2;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            report_error(kind(&e), &e.to_string());
            exit_code(&e)
        }
    }
}

fn resolve(args: &RunArgs) -> tsen::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(p) = &args.panel {
        cfg.data.panel = Some(p.clone());
    }
    if let Some(o) = &args.out {
        cfg.eval.out_dir = o.clone();
    }
    if let Some(k) = args.k {
        cfg.cluster.k = Some(k);
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    log::info!("resolved config: {}", serde_json::to_string(&cfg)?);
    log::info!("seed: {}", cfg.train.seed);
    Ok(cfg)
}

fn dispatch(cmd: Command) -> tsen::Result<()> {
    match cmd {
        Command::Simulate { case, seed, out, obs } => {
            let mut c = SimCase::new(case)?;
            if let Some(n) = obs {
                c = c.with_obs(n);
            }
            log::info!("simulate case {case} ({} obs), seed {seed}", c.n_obs);
            let panel = simulate_case(&c, seed)?;
            panel.write_csv(&out)?;
            println!("wrote {} ({} series x {} steps)", out.display(), panel.series().len(), panel.len());
            Ok(())
        }
        Command::Cluster(args) => {
            let cfg = resolve(&args)?;
            let r = pipeline::run_cluster(&cfg)?;
            for (g, members) in r.partition.groups().iter().enumerate() {
                let names: Vec<&str> = members.iter().map(|&i| r.ids[i].as_str()).collect();
                println!("group {g}: {}", names.join(", "));
            }
            println!("wrote {}", cfg.eval.out_dir.display());
            Ok(())
        }
        Command::Train(args) => {
            let cfg = resolve(&args)?;
            let m = pipeline::run_train(&cfg)?;
            for e in &m.entries {
                println!(
                    "{} unit {}: training loss {:.6} -> {:.6} ({})",
                    e.method, e.unit, e.outcome.initial_loss, e.outcome.final_loss, e.file
                );
            }
            Ok(())
        }
        Command::Forecast(args) => {
            let cfg = resolve(&args)?;
            let r = pipeline::run_forecast(&cfg)?;
            for row in &r.rows {
                println!(
                    "{} {} origin {} +{}: {}",
                    row.series_id, row.method, row.origin, row.horizon, row.forecast
                );
            }
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg = resolve(&args)?;
            let r = pipeline::run_evaluate(&cfg)?;
            print!("{}", r.rmse.to_csv_string()?);
            println!("({} test windows per series; RMSE on the original scale)", r.n_test);
            Ok(())
        }
        Command::Compare(args) => compare(&args),
        Command::Bench(args) => bench(&args),
    }
}

fn compare(args: &CompareArgs) -> tsen::Result<()> {
    let file = std::fs::File::open(&args.scores).map_err(|e| Error::Io {
        path: args.scores.clone(),
        source: e,
    })?;
    let table = ScoreTable::from_csv(file)?;
    let mut lines = Vec::new();
    let f = friedman(&table)?;
    eprintln!(
        "Friedman over {} series x {} methods: chi2 = {:.4}, p = {:.4e}",
        f.n,
        table.methods.len(),
        f.statistic,
        f.p_value
    );
    let ranks = f.average_ranks.clone().unwrap_or_default();
    for (m, r) in table.methods.iter().zip(&ranks) {
        eprintln!("  {m}: average rank {r:.3}");
    }
    lines.push(json!({ "test": f, "rows": "series", "methods": table.methods }));

    let explicit = args.a.is_some();
    let (a, b) = match (&args.a, &args.b) {
        (Some(a), Some(b)) => (a.clone(), b.clone()),
        _ => {
            let mut order: Vec<usize> = (0..table.methods.len()).collect();
            order.sort_by(|&x, &y| ranks[x].total_cmp(&ranks[y]));
            (table.methods[order[0]].clone(), table.methods[order[1]].clone())
        }
    };
    let column = |m: &str| {
        table
            .column(m)
            .ok_or_else(|| Error::Config(format!("method `{m}` is missing from the score table or incomplete")))
    };
    let alternative = match args.alternative {
        AltArg::ABetter => Alternative::ABetter,
        AltArg::TwoSided => Alternative::TwoSided,
    };
    match wilcoxon_signed_rank(&column(&a)?, &column(&b)?, alternative) {
        Ok(w) => {
            eprintln!("Wilcoxon {a} vs {b}: W = {}, p = {:.4e} ({})", w.statistic, w.p_value, w.hypothesis);
            lines.push(json!({ "test": w, "a": a, "b": b }));
        }
        Err(e) if !explicit => {
            eprintln!("Wilcoxon {a} vs {b} skipped: {e}");
            lines.push(json!({ "test": { "method": "wilcoxon" }, "a": a, "b": b, "skipped": e.to_string() }));
        }
        Err(e) => return Err(e),
    }
    let mut text = String::new();
    for l in &lines {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

fn load_bench_config(path: &Path) -> tsen::Result<BenchConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}

fn bench(args: &BenchArgs) -> tsen::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => load_bench_config(p)?,
        None => BenchConfig::default(),
    };
    if let Some(v) = args.case {
        cfg.case = v;
    }
    if let Some(v) = args.reps {
        cfg.reps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.obs.is_some() {
        cfg.n_obs = args.obs;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.hidden {
        cfg.train.hidden_width = v;
    }
    if let Some(v) = args.depth {
        cfg.train.depth = v;
    }
    if let Some(v) = args.lookback {
        cfg.train.lookback = v;
    }
    if let Some(v) = args.horizon {
        cfg.train.horizon = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(ms) = &args.methods {
        cfg.methods = ms
            .iter()
            .map(|m| m.parse::<MethodSpec>())
            .collect::<tsen::Result<Vec<_>>>()?;
    }
    cfg.train.encoder = cfg.methods.first().map_or(EncoderKind::Lstm, |m| m.encoder);
    cfg.validate()?;
    log::info!("resolved bench config: {}", serde_json::to_string(&cfg)?);
    log::info!("seed: {}", cfg.seed);
    let started = std::time::Instant::now();
    let report = pipeline::run_bench(&cfg)?;
    log::info!("bench finished in {:.1} s", started.elapsed().as_secs_f64());
    pipeline::write_bench(&report, &args.out)?;
    eprintln!("median RMSE (normalized scale), case {}:", cfg.case);
    print!("{}", report.median.rmse.to_csv_string()?);
    for f in &report.failures {
        eprintln!("failure: rep {} {}: {}", f.rep, f.method, f.message);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
