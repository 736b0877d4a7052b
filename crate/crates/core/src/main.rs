use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmwave_v2i::experiment::{self, CliError, Command, Preset, RunOptions};

/// Connectivity and throughput of mmWave vehicle-to-infrastructure links.
#[derive(Parser)]
#[command(name = "mmv2i", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate coverage radii over densities and array configurations.
    Coverage,
    /// Closed-form connectivity metrics along density sweeps.
    Connectivity,
    /// Average throughput along density sweeps and per configuration.
    Throughput,
    /// Compare closed forms with road simulations.
    Validate,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Coverage trials per cell.
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,
    /// Figure preset (fig1, fig3, fig5, fig6, fig7, fig8).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<Preset>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Coverage CSV providing the radii for connectivity and throughput.
    #[arg(long, global = true, value_name = "PATH")]
    coverage: Option<PathBuf>,
    /// Also write gnuplot scripts next to the CSVs.
    #[arg(long, global = true)]
    gnuplot: bool,
    #[arg(long, global = true, hide = true)]
    inject_fault: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let command = match cli.command {
        Cmd::Coverage => Command::Coverage,
        Cmd::Connectivity => Command::Connectivity,
        Cmd::Throughput => Command::Throughput,
        Cmd::Validate => Command::Validate,
    };
    let c = cli.common;
    if c.jobs == Some(0) {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(1);
    }
    let opts = RunOptions {
        config: c.config,
        out: c.out,
        seed: c.seed,
        trials: c.trials,
        preset: c.preset,
        coverage: c.coverage,
        gnuplot: c.gnuplot,
        inject_fault: c.inject_fault,
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs.unwrap_or(0))
        .build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| experiment::run(command, &opts)) {
        Ok(m) => {
            for name in m.files.keys() {
                println!("{}", opts.out.join(name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Validation { failed, .. } = &e {
                let _ = experiment::report_failures(failed, io::stderr());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
