use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qmc_amis::harness::{experiment_truth, run_experiment, write_csv, ExperimentConfig, ExperimentKind};
use qmc_amis::pointgen::generate_sobol;
use qmc_amis::Result;

#[derive(Parser)]
#[command(name = "qmc-amis", version, about = "Adaptive multiple importance sampling with RQMC point sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write its CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write here instead of `<output_dir>/<experiment>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in experiments.
    ListExperiments,
    /// Print a scrambled Sobol' point set with 2^m points in d dimensions.
    DumpPoints {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the ground truth of an experiment and where it comes from.
    Truth {
        #[arg(long)]
        experiment: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let result = run_experiment(&cfg)?;
            let path = out.unwrap_or_else(|| cfg.resolved_output_dir().join(format!("{}.csv", result.experiment)));
            write_csv(&result, &path)?;
            for f in &result.fits {
                eprintln!("{} {}: slope {:.3}", f.method, f.sampler.as_str(), f.slope);
            }
            for s in result.failures() {
                eprintln!(
                    "{} {} budget {} failed: {}",
                    s.method,
                    s.sampler.as_str(),
                    s.budget,
                    s.failure.as_deref().unwrap_or("")
                );
            }
            println!("{}", path.display());
        }
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<14}{}", k.as_str(), k.description());
            }
        }
        Command::DumpPoints { m, d, seed } => {
            let ps = generate_sobol(m, d, seed)?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            ps.write_dump(&mut lock)
                .and_then(|_| lock.flush())
                .map_err(|e| qmc_amis::Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                })?;
        }
        Command::Truth { experiment } => {
            let cfg = ExperimentConfig::new(ExperimentKind::parse(&experiment)?);
            let (truth, provenance) = experiment_truth(&cfg)?;
            let vals: Vec<String> = truth.iter().map(|t| qmc_amis::numeric::format_sig17(*t)).collect();
            println!("{} {}", vals.join(","), provenance.as_str());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
