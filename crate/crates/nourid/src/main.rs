//! `nourid` operator CLI: seed registries, serve the API, run persona
//! scenarios, report matcher/validator accuracy and evaluate forecasts.
//!
//! Exit codes: 0 success, 1 failures occurred, 2 usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nourid::accounts::Role;
use nourid::accuracy::{
    TARGET_ACCURACY, TARGET_MODEL_SHARE, evaluate_forecasts, matcher_accuracy, synthetic_corpus, validator_accuracy,
};
use nourid::config::Config;
use nourid::registry::{Registry, seed_population};
use nourid::scenario::{self, Credentials, REPORT_VERSION, ScenarioOptions, render_table};
use nourid::service::{self, AppState, CalibrationRecord};
use nourid::storage::{read_series_csv, write_series_csv};
use nourid_core::PropertyType;
use serde_json::json;

#[derive(Parser)]
#[command(name = "nourid", version, about = "Digital energy identity platform")]
struct Cli {
    /// TOML or JSON config file (default: $NOURID_CONFIG, else built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seed the registries and calibrate the matcher into a data directory.
    Seed {
        #[arg(long)]
        seed: Option<u64>,
        /// Data directory (default: the config's data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Drive persona scenarios end to end.
    Run(RunArgs),
    /// Matcher calibration and validator evaluation.
    Accuracy {
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 10_000)]
        docs: usize,
        #[arg(long, default_value_t = 0.2)]
        defect_rate: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecaster against seasonal naive, per property.
    ForecastEval(ForecastArgs),
    /// Officer account management.
    Officer {
        #[command(subcommand)]
        command: OfficerCommand,
    },
}

#[derive(Subcommand)]
enum OfficerCommand {
    /// Provision an officer account (run while the service is stopped).
    Add {
        #[arg(long)]
        email: String,
        #[arg(long)]
        name: String,
        /// Falls back to $NOURID_OFFICER_PASSWORD.
        #[arg(long)]
        password: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ForecastArgs {
    /// Synthetic properties to generate.
    #[arg(long, default_value_t = 50)]
    properties: usize,
    /// Days of hourly history per property.
    #[arg(long, default_value_t = 730)]
    days: u32,
    #[arg(long, default_value = "2023-01-01")]
    start: chrono::NaiveDate,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate these CSV series (timestamp,kwh) instead of synthetic ones.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Property type of the --input series: household, agricultural or commercial.
    #[arg(long, default_value = "household")]
    property_type: String,
    /// Write each synthetic series here as CSV.
    #[arg(long)]
    export_dir: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Citizens per persona.
    #[arg(long, default_value_t = 1)]
    n: u32,
    #[arg(long, default_value_t = 0.0)]
    defect_rate: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
    #[arg(long, default_value_t = 0)]
    officer_delay_ms: u64,
    #[arg(long, default_value_t = 5)]
    forecast_sample: usize,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run against this service instead of an in-process one.
    #[arg(long, requires_all = ["data_dir", "officer_email"])]
    url: Option<String>,
    /// Data directory of the service at --url, or the in-process scratch
    /// directory (default: a fresh temporary one).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    officer_email: Option<String>,
    /// Falls back to $NOURID_OFFICER_PASSWORD.
    #[arg(long)]
    officer_password: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let body = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, body + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn password_arg(given: Option<String>) -> Result<String, Failure> {
    given
        .or_else(|| std::env::var("NOURID_OFFICER_PASSWORD").ok())
        .ok_or_else(|| usage("a password is required (--password or NOURID_OFFICER_PASSWORD)"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nUsage: nourid [--config FILE] <seed|serve|run|accuracy|forecast-eval|officer> [OPTIONS]");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Failure> {
    let config = Config::load(cli.config.as_deref()).map_err(usage)?;
    match cli.command {
        Command::Seed { seed, out } => cmd_seed(config, seed, out),
        Command::Serve { data_dir, listen } => cmd_serve(config, data_dir, listen),
        Command::Run(args) => cmd_run(config, args),
        Command::Accuracy { pairs, docs, defect_rate, seed, out } => {
            cmd_accuracy(&config, pairs, docs, defect_rate, seed.unwrap_or(config.seed), out)
        }
        Command::ForecastEval(args) => cmd_forecast_eval(&config, args),
        Command::Officer { command: OfficerCommand::Add { email, name, password, data_dir } } => {
            let password = password_arg(password)?;
            let dir = data_dir.unwrap_or_else(|| config.data_dir.clone());
            let (state, _) = AppState::open_data_dir(config, &dir).map_err(runtime)?;
            let account = state.register(&name, &email, "", &password, Role::Officer).map_err(|e| runtime(e.message))?;
            println!("officer {} provisioned as {}", account.email, account.account_id);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_seed(mut config: Config, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    if let Some(s) = seed {
        config.seed = s;
    }
    let dir = out.unwrap_or_else(|| config.data_dir.clone());
    let registry = seed_population(&config.population, config.seed).map_err(usage)?;
    registry.export(&dir.join(service::REGISTRY_DIR)).map_err(runtime)?;
    let calibration = CalibrationRecord::compute(&config).map_err(runtime)?;
    calibration.write(&dir).map_err(runtime)?;
    println!(
        "seeded {} identities, {} parcels, {} documents, {} meters into {} (matcher threshold {:.4})",
        registry.identities().count(),
        registry.parcels().count(),
        registry.documents().count(),
        registry.meters().count(),
        dir.display(),
        calibration.threshold
    );
    Ok(ExitCode::SUCCESS)
}

fn runtime_builder() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)
}

fn cmd_serve(mut config: Config, data_dir: Option<PathBuf>, listen: Option<std::net::SocketAddr>) -> Result<ExitCode, Failure> {
    if let Some(l) = listen {
        config.listen = l;
    }
    let dir = data_dir.unwrap_or_else(|| config.data_dir.clone());
    let listen = config.listen;
    let (state, recovery) = AppState::open_data_dir(config, &dir).map_err(runtime)?;
    tracing::info!(?recovery, "state recovered");
    runtime_builder()?.block_on(async move {
        let handle = service::start(Arc::new(state), listen).await.map_err(runtime)?;
        // Parsed by tests and scripts that bind port 0.
        println!("listening on {}", handle.base_url());
        tokio::signal::ctrl_c().await.map_err(runtime)?;
        handle.stop().await.map_err(runtime)?;
        Ok(ExitCode::SUCCESS)
    })
}

fn cmd_run(config: Config, args: RunArgs) -> Result<ExitCode, Failure> {
    if !(0.0..=1.0).contains(&args.defect_rate) {
        return Err(usage("--defect-rate must lie in [0, 1]"));
    }
    let opts = ScenarioOptions {
        n_per_persona: args.n,
        defect_rate: args.defect_rate,
        seed: args.seed.unwrap_or(config.seed),
        parallelism: args.parallelism.max(1),
        officer_delay_ms: args.officer_delay_ms,
        forecast_sample: args.forecast_sample,
        ..ScenarioOptions::default()
    };
    let rt = runtime_builder()?;
    let report = match args.url {
        Some(url) => {
            let dir = args.data_dir.expect("clap requires data_dir with url");
            let registry = Registry::import(&dir.join(service::REGISTRY_DIR)).map_err(usage)?;
            let officer = Credentials {
                email: args.officer_email.expect("clap requires officer_email with url"),
                password: password_arg(args.officer_password)?,
            };
            let matcher = CalibrationRecord::read(&dir);
            rt.block_on(scenario::run_scenario(&url, Arc::new(registry), &officer, matcher, &opts))
        }
        None => {
            let (dir, scratch) = match args.data_dir {
                Some(d) => (d, false),
                None => (std::env::temp_dir().join(format!("nourid-run-{}-{}", std::process::id(), opts.seed)), true),
            };
            let r = rt.block_on(scenario::run_in_process(config, &dir, &opts));
            if scratch {
                let _ = std::fs::remove_dir_all(&dir);
            }
            r
        }
    }
    .map_err(runtime)?;
    print!("{}", render_table(&report));
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(if report.outcomes.errors > 0 || !report.failures.is_empty() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_accuracy(config: &Config, pairs: usize, docs: usize, defect_rate: f64, seed: u64, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    if !(0.0..=1.0).contains(&defect_rate) {
        return Err(usage("--defect-rate must lie in [0, 1]"));
    }
    let m = &config.matcher;
    let matcher = matcher_accuracy(pairs, m.noise_sigma, config.population.template_dimension, seed).map_err(runtime)?;
    let validator = validator_accuracy(docs, defect_rate, config.validator.detectability, seed);
    println!(
        "matcher   balanced accuracy {:.4} at threshold {:.4} ({} genuine + {} impostor pairs, {} ms)",
        matcher.balanced_accuracy, matcher.threshold, matcher.genuine_pairs, matcher.impostor_pairs, matcher.elapsed_ms
    );
    println!(
        "validator accuracy {:.4} on {} documents ({} defective, {} missed, {} false alarms, {} ms)",
        validator.accuracy,
        validator.documents,
        validator.defective,
        validator.false_negatives,
        validator.false_positives,
        validator.elapsed_ms
    );
    if let Some(out) = &out {
        write_json(out, &json!({ "report_version": REPORT_VERSION, "seed": seed, "matcher": matcher, "validator": validator }))?;
    }
    let ok = matcher.balanced_accuracy >= TARGET_ACCURACY && validator.accuracy >= TARGET_ACCURACY;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_forecast_eval(config: &Config, args: ForecastArgs) -> Result<ExitCode, Failure> {
    let seed = args.seed.unwrap_or(config.seed);
    let corpus = if args.input.is_empty() {
        let corpus = synthetic_corpus(args.properties, args.start, args.days, &config.analytics.load, seed).map_err(usage)?;
        if let Some(dir) = &args.export_dir {
            std::fs::create_dir_all(dir).map_err(runtime)?;
            for s in &corpus {
                let path = dir.join(format!("{}.csv", s.deid));
                let file = std::fs::File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                write_series_csv(s, std::io::BufWriter::new(file)).map_err(runtime)?;
            }
        }
        corpus
    } else {
        let ptype = PropertyType::ALL
            .into_iter()
            .find(|p| p.as_str() == args.property_type)
            .ok_or_else(|| usage(format!("unknown property type {:?}", args.property_type)))?;
        let mut corpus = Vec::new();
        for path in &args.input {
            let file = std::fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            corpus.push(read_series_csv(file, &name, ptype).map_err(|e| usage(format!("{}: {e}", path.display())))?);
        }
        corpus
    };
    let report = evaluate_forecasts(&corpus, &config.analytics.model, seed).map_err(runtime)?;
    for p in &report.properties {
        println!("{:<12} {:<12} model MAPE {:.4}  baseline MAPE {:.4}", p.deid, p.property_type.as_str(), p.model_mape, p.baseline_mape);
    }
    println!(
        "model beats seasonal naive on {}/{} properties ({:.0}%, {} ms)",
        report.model_better,
        report.properties.len(),
        100.0 * report.share_better,
        report.elapsed_ms
    );
    if let Some(out) = &args.out {
        write_json(out, &json!({ "report_version": REPORT_VERSION, "seed": seed, "evaluation": report }))?;
    }
    Ok(if report.share_better >= TARGET_MODEL_SHARE { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
