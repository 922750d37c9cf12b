use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use oppo::agent::Variant;
use oppo::harness::{plot_dir, run_experiment, verify_all, ExperimentConfig, ExperimentResult, Suite, VerifyConfig};
use oppo::par::Execution;

#[derive(Parser)]
#[command(name = "oppo", version, about = "Optimistic PPO on tabular MDPs: training, sweeps and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant over the configured seeds and write metrics CSVs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra `key=value` overrides, e.g. `--set agent.beta=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run seeds one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the verification suites; exits with status 2 on any failure.
    Verify {
        /// Suites to run (repeatable); all when omitted.
        #[arg(long = "suite")]
        suites: Vec<Suite>,
        /// Posterior samples per instance.
        #[arg(long)]
        samples: Option<usize>,
        /// Random instances for the posterior-bound suites.
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiply ν by this factor before checking (mutation testing).
        #[arg(long)]
        nu_scale: Option<f64>,
    },
    /// Train once per value of one parameter, each run in its own subdirectory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key; bare names address the agent section.
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render summary CSVs found in a directory to plot.svg.
    Plot {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn parse_override(text: &str) -> Result<(String, String)> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => bail!("override `{text}` is not of the form key=value"),
    }
}

fn report(result: &ExperimentResult) {
    for run in &result.runs {
        println!("{} seed {:>3}: final moving average {:.4}, AUC {:.4}", result.variant, run.seed, run.final_moving_average(), run.auc());
    }
    println!("{} mean over {} seeds: final {:.4}, AUC {:.4}", result.variant, result.runs.len(), result.mean_final(), result.mean_auc());
}

fn train(mut cfg: ExperimentConfig, seed: Option<u64>, variant: Option<Variant>, out: Option<PathBuf>, sequential: bool) -> Result<()> {
    if let Some(v) = variant {
        cfg = cfg.with_variant(v);
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    if sequential {
        cfg.execution = Execution::Sequential;
    }
    cfg.validate()?;
    let result = run_experiment(&cfg).with_context(|| format!("training into {}", cfg.output_dir.display()))?;
    report(&result);
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config, seed, variant, out, overrides, sequential } => {
            let overrides = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
            let cfg = ExperimentConfig::load_with_overrides(&config, &overrides).with_context(|| format!("loading {}", config.display()))?;
            train(cfg, seed, variant, out, sequential)?;
        }
        Command::Verify { suites, samples, instances, seed, nu_scale } => {
            let mut cfg = VerifyConfig { seed, ..VerifyConfig::default() };
            if !suites.is_empty() {
                cfg.suites = suites;
            }
            if let Some(n) = samples {
                cfg.monte_carlo.samples = n;
            }
            if let Some(n) = instances {
                cfg.instances = n;
            }
            if let Some(f) = nu_scale {
                cfg.monte_carlo.nu_scale = f;
            }
            let report = verify_all(&cfg)?;
            println!("{report}");
            if !report.all_pass() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep { config, param, values, variant, out } => {
            let base = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let root = out.unwrap_or_else(|| base.output_dir.clone());
            for value in &values {
                let cfg = ExperimentConfig::load_with_overrides(&config, &[(param.clone(), value.clone())])
                    .with_context(|| format!("setting {param} = {value}"))?;
                let dir = root.join(format!("{param}={value}"));
                println!("== {param} = {value}");
                train(cfg, None, variant, Some(dir), false)?;
            }
        }
        Command::Plot { dir } => {
            let out = plot_dir(&dir)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
