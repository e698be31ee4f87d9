use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plasticity::scenario::{compare_models, privacy_only, run_scenario, ScenarioConfig};
use plasticity::Error;

#[derive(Parser)]
#[command(name = "plasticity", version, about = "Aggregator bidding and dispatch with clustered appliance models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Multiplies the expected population.
    #[arg(long, global = true)]
    population_scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Bid, dispatch through the protocol and settle one realization.
    Run { config: PathBuf },
    /// Cluster-model and tank-model bids against the same realization.
    Compare { config: PathBuf },
    /// Uplink leakage bounds only.
    Privacy { config: PathBuf },
    /// Prints the built-in desk-scale config.
    DefaultConfig,
}

fn load(cli: &Cli, path: &PathBuf) -> Result<ScenarioConfig, Error> {
    let mut cfg = ScenarioConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        e => e,
    })?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(f) = cli.population_scale {
        if !(f >= 0.0 && f.is_finite()) {
            return Err(Error::Config("--population-scale must be nonnegative".into()));
        }
        cfg.scale_population(f);
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Run { config } => {
            let r = run_scenario(&load(cli, config)?)?;
            let s = &r.summary;
            println!("requests            {}", s.requests);
            println!("forward cost        {:.6}", s.forward_cost);
            println!("deviation cost      {:.6}", s.deviation_cost);
            println!("total cost          {:.6}", s.total_cost);
            println!("mean |L - B| / flex {:.4}", s.deviation.relative);
            println!("uplink / downlink   {} / {}", s.uplink_messages, s.downlink_messages);
            println!("MI bound (bits)     {:.4}", s.mi_bound_bits);
            for f in &r.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Compare { config } => {
            let (c, files) = compare_models(&load(cli, config)?)?;
            println!("{:>3} {:>10} {:>10} {:>10} {:>10}", "h", "B_cluster", "L_cluster", "B_tank", "L_tank");
            for r in &c.rows {
                println!(
                    "{:>3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                    r.h, r.bid_cluster, r.load_cluster, r.bid_tank, r.load_tank
                );
            }
            println!(
                "cluster total {:.6} (deviation {:.6})",
                c.cluster.settlement.total, c.cluster.settlement.deviation
            );
            println!("tank    total {:.6} (deviation {:.6})", c.tank.settlement.total, c.tank.settlement.deviation);
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
        Command::Privacy { config } => {
            let (s, files) = privacy_only(&load(cli, config)?)?;
            println!("peak-step MI bound  {:.4} bits", s.peak_mi_bound_bits);
            match s.peak_err_lower {
                Some(e) => println!("error lower bound   {e:.4} (clamped {:.4})", e.max(0.0)),
                None => println!("error lower bound   undefined (deterministic uplink)"),
            }
            println!("horizon MI bound    {:.4} bits", s.window_mi_bound_bits);
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
        Command::DefaultConfig => {
            let text = serde_json::to_string_pretty(&ScenarioConfig::paper_default()).map_err(Error::from)?;
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Csv(_) => 2,
        e if e.is_infeasibility() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
