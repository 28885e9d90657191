use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use legend_core::harness::{self, MicroStudy, OUTPUT_DIR_ENV};
use legend_core::planner::{DepthRule, PlannerParams};
use legend_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Adaptive-depth federated LoRA fine-tuning simulator.
#[derive(Parser, Debug)]
#[command(name = "legend", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment from a TOML config file or a preset name
    /// (default, hetero10, hetero10-dynamic, homogeneous, converge).
    Run { config: String },
    /// Plan one round for a device profile CSV
    /// (device_id,mu,beta,forward_time,compute_budget,comm_budget).
    Plan {
        profile: PathBuf,
        #[arg(long)]
        psi: Option<usize>,
        #[arg(long)]
        lambda: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long, value_parser = parse_depth_rule)]
        depth_rule: Option<DepthRule>,
    },
    /// Run a toy-scale study: position, depth or rankdist.
    Micro {
        #[arg(value_parser = parse_study)]
        study: MicroStudy,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_depth_rule(s: &str) -> Result<DepthRule, String> {
    match s {
        "endpoint_normalized" => Ok(DepthRule::EndpointNormalized),
        "slowest_normalized" => Ok(DepthRule::SlowestNormalized),
        other => Err(format!(
            "unknown depth rule {other:?}; expected endpoint_normalized or slowest_normalized"
        )),
    }
}

fn parse_study(s: &str) -> Result<MicroStudy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. }
        | Error::MalformedProfile { .. }
        | Error::InfeasibleRankBudget { .. }
        | Error::InvalidLoraConfig(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn env_output_dir() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn run(command: Command) -> Result<(), Error> {
    let override_dir = env_output_dir();
    match command {
        Command::Run { config } => {
            let config = harness::load_config(&config)?;
            let out = harness::cmd_run(config, override_dir.as_deref())?;
            let log = &out.log;
            println!("planner: {}", log.label());
            println!("rounds: {}", log.rounds.len());
            println!("total_time: {}", log.total_time());
            println!("total_bytes: {}", log.total_bytes());
            println!("mean_avg_wait: {}", log.mean_avg_wait());
            if let Some(last) = log.final_round() {
                println!("final_eval_acc: {}", last.eval_acc);
                println!("final_train_acc: {}", last.train_acc);
            }
            println!("output: {}", out.dir.display());
        }
        Command::Plan {
            profile,
            psi,
            lambda,
            layers,
            depth_rule,
        } => {
            let defaults = PlannerParams::default();
            let params = PlannerParams {
                psi: psi.unwrap_or(defaults.psi),
                lambda: lambda.unwrap_or(defaults.lambda),
                layers: layers.unwrap_or(defaults.layers),
                depth_rule: depth_rule.unwrap_or(defaults.depth_rule),
                ..defaults
            };
            print!("{}", harness::cmd_plan(&profile, &params)?);
        }
        Command::Micro { study, seed } => {
            let dir = harness::output_dir(override_dir.as_deref(), Path::new("out"));
            let (path, text) = harness::cmd_micro(study, seed, &dir)?;
            print!("{text}");
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
