use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use otlab_core::experiment::{
    fit_prefactor, read_json, read_summary_csv, run_experiment, CellFile, ExperimentConfig, ExperimentKind, FitModel,
};
use otlab_core::measure::DiscreteMeasure;
use otlab_core::transport::{brute_force_oracle, solve_exact, CostKind};
use otlab_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "otlab", version, about = "Optimal transport regularity laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Log,
    Power,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    MatchingScaling,
    HarmonicApprox,
    EpsregDecay,
    Cascade,
    RstarTail,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a TOML config and write summary.csv and manifest.json.
    Run { config: PathBuf },
    /// Fit ensemble means of a statistic from a summary CSV against log L.
    Fit {
        summary: PathBuf,
        #[arg(long, value_enum, default_value = "log")]
        model: Model,
        #[arg(long, default_value = "w2_per_area")]
        statistic: String,
    },
    /// Print the key, status and statistics of a cell artifact.
    Inspect { cell: PathBuf },
    /// Compare the exact solver with exhaustive enumeration on a small instance.
    Oracle { instance: PathBuf },
    /// Print a config with every default filled in.
    Template {
        #[arg(value_enum)]
        kind: Kind,
        #[arg(long, default_value = "runs/out")]
        dir: PathBuf,
    },
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(config: PathBuf) -> Result<ExitCode, Error> {
    let cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e @ (Error::InvalidInput(_) | Error::Io(_))) => {
            eprintln!("config error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
        Err(e) => return Err(e),
    };
    let out = run_experiment(&cfg)?;
    print(&serde_json::to_value(&out)?);
    if out.all_failed() {
        eprintln!("all {} cells failed", out.total);
        return Ok(ExitCode::from(EXIT_ALL_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn inspect(cell: PathBuf) -> Result<ExitCode, Error> {
    let f: CellFile = read_json(&cell)?;
    let stats: serde_json::Map<String, Value> = f
        .output
        .as_ref()
        .map(|o| {
            o.stats
                .iter()
                .map(|(k, v)| {
                    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
                    (k.clone(), json!({ "values": v, "mean": mean }))
                })
                .collect()
        })
        .unwrap_or_default();
    print(&json!({
        "key": f.key,
        "status": f.status,
        "error": f.error,
        "valid": f.output_hash.is_some() && f.output.is_some(),
        "wall_seconds": f.wall_seconds,
        "stats": stats,
    }));
    Ok(ExitCode::SUCCESS)
}

fn oracle(instance: PathBuf) -> Result<ExitCode, Error> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&instance)?)?;
    let measure = |k: &str| -> Result<DiscreteMeasure, Error> {
        let v = doc.get(k).ok_or_else(|| Error::InvalidInput(format!("instance lacks `{k}`")))?;
        DiscreteMeasure::from_json(&v.to_string())
    };
    let (src, tgt) = (measure("src")?, measure("tgt")?);
    let cost: CostKind = match doc.get("cost") {
        Some(c) => serde_json::from_value(c.clone())?,
        None => CostKind::Periodic,
    };
    let (plan, _) = solve_exact(&src, &tgt, cost)?;
    let brute = brute_force_oracle(&src, &tgt, cost)?;
    let rel = (plan.total_cost - brute.total_cost).abs() / brute.total_cost.abs().max(f64::MIN_POSITIVE);
    let agree = rel <= 1e-9 || (plan.total_cost - brute.total_cost).abs() <= 1e-12;
    print(&json!({ "exact": plan.total_cost, "oracle": brute.total_cost, "relative_difference": rel, "agree": agree }));
    Ok(if agree { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run(config),
        Command::Fit { summary, model, statistic } => (|| {
            let rows = read_summary_csv(std::fs::File::open(&summary)?)?;
            let model = match model {
                Model::Log => FitModel::Log,
                Model::Power => FitModel::Power,
            };
            print(&serde_json::to_value(fit_prefactor(&rows, &statistic, model)?)?);
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Inspect { cell } => inspect(cell),
        Command::Oracle { instance } => oracle(instance),
        Command::Template { kind, dir } => (|| {
            let kind = match kind {
                Kind::MatchingScaling => ExperimentKind::MatchingScaling,
                Kind::HarmonicApprox => ExperimentKind::HarmonicApprox,
                Kind::EpsregDecay => ExperimentKind::EpsregDecay,
                Kind::Cascade => ExperimentKind::Cascade,
                Kind::RstarTail => ExperimentKind::RstarTail,
            };
            print!("{}", ExperimentConfig::new(kind, dir).to_toml()?);
            Ok(ExitCode::SUCCESS)
        })(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
