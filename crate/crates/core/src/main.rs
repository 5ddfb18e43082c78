use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pamlab::cli::{error_report, report, run, validate};
use pamlab::config::RawConfig;
use pamlab::ensemble::Runner;
use pamlab::noise::parse_seed;
use pamlab::Error;

#[derive(Parser)]
#[command(
    name = "pamlab",
    version,
    about = "Stochastic reaction-diffusion and PAM coupling experiments on the torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed (decimal or 0x-hex); overrides the file.
        #[arg(long, value_parser = seed_arg)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Dry-run checks of a configuration; prints a JSON report.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Also write the report to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-aggregate the per-trajectory series CSVs of an earlier run.
    Report {
        /// Output directory of the earlier run.
        #[arg(long)]
        input: PathBuf,
        /// Recompute the dissipation frequency for this rate.
        #[arg(long, requires_all = ["from", "horizon"])]
        gamma: Option<f64>,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).map_err(|e| e.to_string())
}

fn fail(err: &Error, out: Option<&Path>) -> ExitCode {
    let doc = error_report(err);
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
    eprintln!("{text}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let result = RawConfig::load(&config).and_then(|raw| run(raw, seed, &Runner::new(workers)));
            match result.and_then(|o| o.write(&out).map(|_| o)) {
                Ok(o) => {
                    log::info!("{} finished; results in {}", o.kind, out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, Some(&out)),
            }
        }
        Command::Validate { config, out } => match RawConfig::load(&config).and_then(validate) {
            Ok(doc) => {
                let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
                println!("{text}");
                if let Some(dir) = &out {
                    if let Err(e) = std::fs::create_dir_all(dir)
                        .and_then(|_| std::fs::write(dir.join("validate.json"), format!("{text}\n")))
                    {
                        return fail(&Error::from(e), None);
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, out.as_deref()),
        },
        Command::Report {
            input,
            gamma,
            from,
            horizon,
            out,
        } => {
            let dissipation = gamma.map(|g| (g, from.unwrap_or(0.0), horizon.unwrap_or(f64::INFINITY)));
            let out = out.unwrap_or_else(|| input.clone());
            match report(&input, dissipation).and_then(|o| o.write(&out)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(&e, Some(&out)),
            }
        }
    }
}
