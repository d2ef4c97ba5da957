//! Command-line front end: Monte Carlo sweeps, bound tables, the energy
//! allocator, and Tracy-Widom lookups.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmwave_cs::analysis::{
    allocate, srp_bound_aoa, srp_bound_aod, srp_bound_aod_consistent, AllocationInputs, SrpQuery,
    TracyWidomTable,
};
use mmwave_cs::error::{Error, Result};
use mmwave_cs::harness::{
    emit_curves_csv, emit_trials_csv, noise_std_for_snr, run_experiment, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "mmwave-cs", about = "Two-stage mmWave channel estimation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo sweep described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for trials.csv and curves.csv.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the per-stage SRP bounds across the config's SNR grid.
    Bounds {
        #[arg(long)]
        config: PathBuf,
    },
    /// Minimum-energy two-stage power split for given SRP targets.
    Allocate(AllocateArgs),
    /// Tracy-Widom table lookup: quantile for q=<prob> or CDF for s=<point>.
    Tw {
        #[arg(long)]
        query: String,
    },
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 0.95)]
    eta1: f64,
    #[arg(long, default_value_t = 0.95)]
    eta2: f64,
    #[arg(long = "n-r", default_value_t = 20)]
    n_r: usize,
    #[arg(long = "n-t", default_value_t = 64)]
    n_t: usize,
    #[arg(long = "n-rf", default_value_t = 4)]
    n_rf: usize,
    #[arg(long, default_value_t = 4)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    bt1: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long = "h-min", default_value_t = 1.0)]
    h_min: f64,
    #[arg(long, default_value_t = 0.0)]
    mu1: f64,
    /// Stage-2 coherence; computed from the truncated grid when omitted.
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    oversampling: f64,
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

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            std::fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.display().to_string(),
                source,
            })?;
            let result = run_experiment(&cfg)?;
            emit_trials_csv(&result.trials, &out.join("trials.csv"))?;
            emit_curves_csv(&result.curves, &out.join("curves.csv"))?;
            for c in &result.curves {
                println!(
                    "{} snr={} srp={:.4} mse={:.4e} nmse={:.4e} ({} trials)",
                    c.estimator, c.snr_db, c.srp, c.mse, c.nmse, c.trials
                );
            }
            Ok(())
        }
        Command::Bounds { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let table = TracyWidomTable::embedded();
            println!("snr_db sigma p1 p2 aoa_bound aod_bound aod_bound_printed");
            for &snr in &cfg.snr_grid_db {
                let sigma = noise_std_for_snr(snr);
                let plan = cfg.plan_for(table, sigma)?;
                let q = SrpQuery {
                    num_paths: cfg.num_paths,
                    mip_constant: cfg.mu1,
                    min_gain_modulus: cfg.h_min,
                    noise_std: sigma,
                    p1: plan.p1,
                    bt1: plan.bt1,
                    n_r: cfg.num_rx_antennas,
                    n_t: cfg.num_tx_antennas,
                    p2: plan.p2,
                    bt2: plan.bt2,
                };
                let aoa = srp_bound_aoa(table, &q)?;
                let q2 = SrpQuery { mip_constant: cfg.mu2, ..q };
                let aod = srp_bound_aod_consistent(table, &q2)?;
                let aod_printed = srp_bound_aod(table, &q2)?;
                println!(
                    "{snr} {sigma:.6} {:.6} {:.6} {aoa:.6} {aod:.6} {aod_printed:.6}",
                    plan.p1, plan.p2
                );
            }
            Ok(())
        }
        Command::Allocate(a) => {
            let table = TracyWidomTable::embedded();
            let out = allocate(
                table,
                &AllocationInputs {
                    total_channel_uses: a.k,
                    num_rf_chains: a.n_rf,
                    n_r: a.n_r,
                    n_t: a.n_t,
                    num_paths: a.paths,
                    min_gain_modulus: a.h_min,
                    noise_std: a.sigma,
                    eta1: a.eta1,
                    eta2: a.eta2,
                    bt1: a.bt1,
                    mu1: a.mu1,
                    mu2: a.mu2,
                    oversampling: a.oversampling,
                },
            )?;
            println!("bt1 = {}", out.bt1);
            println!("bt2 = {}", out.bt2);
            println!("e1 = {:.6}", out.e1);
            println!("e2 = {:.6}", out.e2);
            println!("p1 = {:.6}", out.p1);
            println!("p2 = {:.6}", out.p2);
            println!(
                "achieved bounds: aoa = {:.6}, aod = {:.6}",
                out.achieved_bounds.0, out.achieved_bounds.1
            );
            Ok(())
        }
        Command::Tw { query } => {
            let table = TracyWidomTable::embedded();
            let (key, value) = query
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected q=<prob> or s=<point>, got '{query}'")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{value}'")))?;
            match key.trim() {
                "q" => println!("{:.10}", table.inverse(value)?),
                "s" => println!("{:.10}", table.cdf(value)),
                other => return Err(Error::Parse(format!("unknown query '{other}'"))),
            }
            Ok(())
        }
    }
}
