//! `recourse` command-line tool.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or query error,
//! 3 model error, 4 infeasible observational distribution.

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use recourse_core::io::{
    format_bounds_table, format_oracle_table, format_recourse_table, load_model, run_bounds, run_oracle, run_recourse,
    Assignment, BoundsQuery, ModelFile, RecourseQuery,
};
use recourse_core::model::Classifier;
use recourse_core::oracle::{random_instance, OracleConfounding};
use recourse_core::recourse::{BoundMode, Bundle, CostModel, FeasibilitySpec, Objective, DEFAULT_THRESHOLD};
use recourse_core::Error;
use recourse_service::{AppState, ModelStore, ServiceConfig};

#[derive(Parser)]
#[command(name = "recourse", version, about = "Bounds on counterfactual recourse outcomes in discrete causal models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound the expected (or worst-case) outcome of one action.
    Bounds(BoundsArgs),
    /// Rank all feasible actions and pick the cheapest certified one.
    Recourse(RecourseArgs),
    /// Exact counterfactual value from the model's ground_truth section.
    Oracle(OracleArgs),
    /// Serve every model in a directory over HTTP.
    Serve(ServeArgs),
    /// Write a random model with a ground_truth section.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fc,
    Pc,
}

impl From<ModeArg> for BoundMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fc => BoundMode::Fc,
            ModeArg::Pc => BoundMode::Pc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Expected,
    #[value(alias = "worst-case")]
    Worst,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Expected => Objective::Expected,
            ObjectiveArg::Worst => Objective::Worst,
        }
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    /// Full configuration, e.g. "X1=0,X2=1".
    #[arg(long)]
    factual: String,
    #[arg(long, value_enum, default_value = "fc")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "expected")]
    objective: ObjectiveArg,
    /// Box width for the certified PC bound.
    #[arg(long)]
    grid_resolution: Option<f64>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Intervention, e.g. "X2=1".
    #[arg(long)]
    action: String,
}

#[derive(Args)]
struct RecourseArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    factual: String,
    #[arg(long)]
    action: String,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long)]
    model_dir: PathBuf,
    /// Per-request compute cap in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    variables: usize,
    #[arg(long, default_value_t = 2)]
    max_cardinality: usize,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Internal(_) => 1,
        e if e.is_query_error() => 2,
        Error::Infeasible(_) => 4,
        _ => 3,
    }
}

fn emit<T: Serialize>(format: Format, report: &T, table: impl FnOnce(&T) -> String) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(report).expect("reports serialise")),
        Format::Table => print!("{}", table(report)),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Bounds(args) => {
            let q = args.query;
            let loaded = load_model(&q.model)?;
            let query = BoundsQuery {
                factual: Assignment::Text(q.factual),
                action: Assignment::Text(args.action),
                mode: q.mode.into(),
                objective: q.objective.into(),
                grid_resolution: q.grid_resolution,
            };
            emit(q.format, &run_bounds(&loaded, &query)?, format_bounds_table);
        }
        Command::Recourse(args) => {
            let q = args.query;
            let loaded = load_model(&q.model)?;
            let query = RecourseQuery {
                factual: Assignment::Text(q.factual),
                threshold: args.threshold,
                epsilon: args.epsilon,
                mode: q.mode.into(),
                objective: q.objective.into(),
                grid_resolution: q.grid_resolution,
            };
            emit(q.format, &run_recourse(&loaded, &query)?, format_recourse_table);
        }
        Command::Oracle(args) => {
            let loaded = load_model(&args.model)?;
            let report = run_oracle(&loaded, &Assignment::Text(args.factual), &Assignment::Text(args.action))?;
            emit(args.format, &report, format_oracle_table);
        }
        Command::Serve(args) => {
            let store = ModelStore::load_dir(&args.model_dir)?;
            log::info!("{} model(s) loaded", store.len());
            let config = ServiceConfig { timeout: Duration::from_secs(args.timeout), ..ServiceConfig::default() };
            let state = AppState::new(store, config);
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Internal(e.to_string()))?;
            runtime
                .block_on(recourse_service::serve(SocketAddr::new(args.host, args.port), state))
                .map_err(|e| Error::Internal(format!("server stopped: {e}")))?;
        }
        Command::Generate(args) => {
            let scm = random_instance(args.seed, args.variables, args.max_cardinality, OracleConfounding::Arbitrary)?;
            let model = scm.model().clone();
            let h = Classifier::indicator(&model, model.len() - 1)?;
            let bundle = Bundle::new(
                model.clone(),
                scm.observational_distribution()?,
                h,
                FeasibilitySpec::all(&model),
                CostModel::uniform(model.len()),
            )?;
            let description = format!(
                "random instance: seed {}, {} variables, max cardinality {}",
                args.seed, args.variables, args.max_cardinality
            );
            let text = ModelFile::from_bundle(&bundle, Some(&scm), Some(description)).to_json_pretty();
            match args.out {
                Some(path) => std::fs::write(&path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
