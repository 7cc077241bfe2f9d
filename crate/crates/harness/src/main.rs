use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use valstab::checkers::demo_necessity;
use valstab::envzoo::{EnvSpec, ENV_KINDS};
use valstab::policies::POLICY_KINDS;
use valstab_cli::config::ExperimentConfig;
use valstab_cli::verify::parse_prefix;
use valstab_cli::{run_experiment, verify, CheckerKind, HarnessError, VerifyParams};

#[derive(Parser)]
#[command(
    name = "valstab",
    version,
    about = "Self-optimizing policies on certified environment classes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config: one CSV per seed plus a summary JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, replacing the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra seed appended to the config's list; repeatable.
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Check an environment's certificate by sampling.
    Verify {
        /// Environment spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// `value_stability` or `recoverability`.
        #[arg(long)]
        checker: String,
        #[arg(long, default_value_t = 100)]
        k: u64,
        /// Window length (value stability) or horizon (recoverability).
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `uniform`, `repeat:<action>` or `forced:<a>,<b>,...`.
        #[arg(long, default_value = "uniform")]
        prefix: String,
        #[arg(long)]
        window: Option<u64>,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the necessity-family demonstration and write its report.
    DemoNecessity {
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print registered environment and policy kinds.
    List,
}

fn init_logging() -> Result<(), HarnessError> {
    let level = match std::env::var("VALSTAB_LOG").as_deref() {
        Err(_) | Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(HarnessError::Config(format!(
                "VALSTAB_LOG must be quiet, info or debug, not `{other}`"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_write_style("never")
        .try_init()
        .ok();
    Ok(())
}

fn write_json(path: Option<&PathBuf>, body: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| HarnessError::Runtime(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(p, body)
                .map_err(|e| HarnessError::Runtime(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<u8, HarnessError> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            horizon,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.seeds.extend(seed);
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let summary = run_experiment(&cfg, &out_dir)?;
            for run in &summary.runs {
                println!(
                    "seed {}: final_avg {} final_gap {}",
                    run.seed,
                    run.final_avg,
                    run.final_gap.map_or("n/a".into(), |g| g.to_string())
                );
            }
            Ok(0)
        }
        Command::Verify {
            spec,
            checker,
            k,
            n,
            eps,
            samples,
            seed,
            prefix,
            window,
            out,
        } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", spec.display())))?;
            let spec: EnvSpec =
                serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
            let params = VerifyParams {
                checker: checker.parse::<CheckerKind>()?,
                k,
                n,
                eps,
                n_samples: samples,
                seed,
                prefix: parse_prefix(&prefix)?,
                window,
            };
            let report = verify(&spec, &params)?;
            let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            write_json(out.as_ref(), &body)?;
            log::info!("{}: pass = {}", report.env_label, report.pass);
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::DemoNecessity {
            horizon,
            seeds,
            out,
        } => {
            if horizon == 0 || seeds.is_empty() {
                return Err(HarnessError::Config(
                    "horizon and seeds must be non-empty".into(),
                ));
            }
            let report = demo_necessity(horizon, &seeds)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            write_json(Some(&out), &body)?;
            println!(
                "qualifying runs {}, trade-off holds: {}",
                report.qualifying_runs, report.headline_holds
            );
            Ok(0)
        }
        Command::List => {
            let mut kinds: Vec<&str> = ENV_KINDS
                .iter()
                .chain(POLICY_KINDS.iter())
                .copied()
                .collect();
            kinds.sort_unstable();
            for kind in kinds {
                println!("{kind}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_logging().and_then(|()| execute(cli.command));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("valstab: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
