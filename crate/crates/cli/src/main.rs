use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fogplace::baselines::StrategyKind;
use fogplace::matrix::{run_matrix, summary_table, MatrixOptions, MatrixReport};
use fogplace::scenario::{load_topology, Scenario};
use fogplace::trace::{gen_trace, write_trace, TraceSpec};

#[derive(Parser)]
#[command(
    name = "fogplace",
    version,
    about = "Replica placement experiments for mobile fog clients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy x seed cell of a scenario and write the metrics CSV.
    Simulate(RunArgs),
    /// Same as simulate, then print mean ± stddev per strategy.
    Compare(RunArgs),
    /// Generate a synthetic trace: cyclic_commuter, random_adjacent_waypoint or teleporter.
    GenTrace(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Replaces the scenario's seed list; repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Replaces the scenario's strategy list; repeatable.
    #[arg(long)]
    strategy: Vec<String>,
    /// Write each run's final predictor state as JSON under <out-dir>/predictors.
    #[arg(long)]
    dump_predictors: bool,
}

#[derive(Args)]
struct GenArgs {
    kind: String,
    /// Generator parameters as key=value, values in TOML syntax
    /// (e.g. nodes=[0,1,2] dwell_s=100).
    params: Vec<String>,
    /// Topology TOML file.
    #[arg(long)]
    topology: PathBuf,
    /// TOML file with more parameters; key=value arguments override it.
    #[arg(long)]
    params_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate(args) => {
            let report = run(&args)?;
            for r in &report.runs {
                let m = &r.output.metrics;
                println!(
                    "{:<18} seed {:<6} hit_ratio {:.4}  mean_latency_ms {:.3}  bytes {}",
                    r.strategy.name(),
                    r.seed,
                    m.hit_ratio,
                    m.mean_latency_ms,
                    m.bytes_transferred
                );
            }
            println!("metrics: {}", report.out_dir.join("metrics.csv").display());
        }
        Command::Compare(args) => {
            let report = run(&args)?;
            print!("{}", summary_table(&report.summary));
            println!("metrics: {}", report.out_dir.join("metrics.csv").display());
        }
        Command::GenTrace(args) => gen(&args)?,
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<MatrixReport> {
    // Strategy names are checked before the scenario is loaded and before any run.
    let strategies = args
        .strategy
        .iter()
        .map(|s| s.parse::<StrategyKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let scenario = Scenario::load(&args.scenario)?;
    let opts = MatrixOptions {
        out_dir: args.out_dir.clone(),
        strategies: (!strategies.is_empty()).then_some(strategies),
        seeds: (!args.seed.is_empty()).then(|| args.seed.clone()),
        dump_predictors: args.dump_predictors,
    };
    Ok(run_matrix(&scenario, &opts)?)
}

fn spec_from_args(kind: &str, params: &[String], params_file: Option<&Path>) -> Result<TraceSpec> {
    let mut table = match params_file {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    for param in params {
        let Some((key, value)) = param.split_once('=') else {
            bail!("parameter {param:?} is not key=value");
        };
        let doc: toml::Table = format!("v = {value}")
            .parse()
            .with_context(|| format!("value of {key} is not valid TOML: {value}"))?;
        table.insert(key.trim().to_string(), doc["v"].clone());
    }
    table.insert("kind".into(), toml::Value::String(kind.to_string()));
    toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid parameters for {kind}"))
}

fn gen(args: &GenArgs) -> Result<()> {
    let spec = spec_from_args(&args.kind, &args.params, args.params_file.as_deref())?;
    let topology = load_topology(&args.topology)?;
    let rows = gen_trace(&spec, &topology, args.seed)?;
    let file = fs::File::create(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    write_trace(std::io::BufWriter::new(file), &rows)?;
    println!("{} rows -> {}", rows.len(), args.output.display());
    Ok(())
}
