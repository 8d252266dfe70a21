use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use floodda::config::{ExperimentConfig, Mode};
use floodda::experiment::{cmd_run, cmd_synthesize, cmd_truth, cmd_verify, Layout, Setup};
use floodda::{Error, Result};

/// Twin experiments for ensemble flood data assimilation.
#[derive(Parser)]
#[command(name = "floodda", version)]
struct Cli {
    /// INI configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    members: Option<usize>,
    /// Output directory holding every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic truth.
    Truth,
    /// Turn the truth into noisy observations.
    Synthesize,
    /// Run one experiment (free run or assimilation).
    Run,
    /// Score runs against truth and observations; all runs on disk unless --mode is given.
    Verify,
    /// Print the effective configuration.
    PrintConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fr,
    Ida,
    Iwda,
    Ihda,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fr => Mode::Fr,
            ModeArg::Ida => Mode::Ida,
            ModeArg::Iwda => Mode::Iwda,
            ModeArg::Ihda => Mode::Ihda,
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.members {
        cfg.members = n;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    if let Command::PrintConfig = cli.command {
        print!("{}", cfg.to_ini());
        return Ok(());
    }
    let setup = Setup::new(&cfg)?;
    let layout = Layout::new(&cfg.out_dir);
    match cli.command {
        Command::Truth => {
            let traj = cmd_truth(&setup, &layout)?;
            eprintln!(
                "truth: {} gauge samples, {} depth snapshots in {}",
                traj.gauges.times.len(),
                traj.snapshots.len(),
                layout.truth().display()
            );
        }
        Command::Synthesize => {
            let obs = cmd_synthesize(&setup, &layout)?;
            eprintln!(
                "observations: {} gauge, {} WSR, {} extent maps in {}",
                obs.gauges.len(),
                obs.wsr.len(),
                obs.extents.len(),
                layout.obs().display()
            );
        }
        Command::Run => {
            let out = cmd_run(&setup, &layout, cfg.mode)?;
            let analysed = out.diagnostics.iter().filter(|d| d.analysed).count();
            eprintln!(
                "{}: {} cycles ({analysed} analysed) in {}",
                cfg.mode.as_str(),
                out.diagnostics.len(),
                layout.run(cfg.mode).display()
            );
        }
        Command::Verify => {
            let modes: Vec<Mode> = cli.mode.map(Mode::from).into_iter().collect();
            let report = cmd_verify(&setup, &layout, &modes)?;
            for r in &report.rmse {
                println!(
                    "{:5} {:11} rmse vs obs {:.4} m, vs truth {:.4} m",
                    r.mode.as_str(),
                    r.station,
                    r.vs_obs,
                    r.vs_truth
                );
            }
            eprintln!("report written to {}", layout.report().display());
        }
        Command::PrintConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
