//! Command-line surface: simulate, certify, sweep, estimate-csh, verify.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure,
//! 3 invariant violation reported by `verify`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phaseslide::config::{parse_config, RunConfig};
use phaseslide::harness;
use phaseslide::sliding::detect_reaching;

#[derive(Parser)]
#[command(name = "phaseslide", version, about = "Sliding-mode controlled tumor-growth simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and emit time series, snapshots and certificate.
    Simulate {
        /// Configuration file (flat `key = value` text).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to `output.dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the sliding certificate (runs the pilot when the config asks
    /// for an empirical offset constant).
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Independent runs over a list of control gains; prints a summary
    /// table sorted by gain.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list of gains.
        #[arg(long, value_delimiter = ',', required = true)]
        rho: Vec<f64>,
    },
    /// Print the estimated embedding constant of the configured grid.
    EstimateCsh {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant suite.
    Verify,
}

fn load(config: &PathBuf) -> Result<RunConfig, phaseslide::Error> {
    parse_config(config)
}

fn run() -> Result<(), (i32, String)> {
    let cli = Cli::parse();
    let fail = |e: phaseslide::Error| (harness::error_category(&e), e.to_string());
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load(&config).map_err(fail)?;
            let outdir = out.unwrap_or_else(|| cfg.output_dir.clone());
            println!("# parsed configuration");
            print!("{}", cfg.to_config_string());
            let summary = harness::simulate_to_dir(&cfg, &outdir).map_err(fail)?;
            println!("# results");
            println!("rows = {}", summary.output.series.rows().len());
            println!("delta_slide = {:.6e}", summary.delta_slide);
            match summary.t_num {
                Some(t) => println!("t_num = {t:.6e}"),
                None => println!("t_num = absent"),
            }
            match summary.cert.t_star {
                Some(t) => println!("t_star = {t:.6e}"),
                None => println!("t_star = absent"),
            }
            if let Some(p) = summary.envelope_passed {
                println!("envelope_passed = {p}");
            }
            println!("output_dir = {}", outdir.display());
            Ok(())
        }
        Command::Certify { config } => {
            let cfg = load(&config).map_err(fail)?;
            let prep = harness::prepare(&cfg).map_err(fail)?;
            let resolution = harness::resolve_certificate(&prep).map_err(fail)?;
            print!("{}", resolution.cert.to_key_value_block());
            if let Some(pilot) = &resolution.pilot {
                let delta = harness::delta_slide_of(&cfg, &resolution.constants);
                match detect_reaching(&pilot.series, delta) {
                    Some(t) => println!("pilot_t_num = {t:.6e}"),
                    None => println!("pilot_t_num = absent"),
                }
            }
            Ok(())
        }
        Command::Sweep { config, rho } => {
            let cfg = load(&config).map_err(fail)?;
            let mut rhos = rho;
            rhos.sort_by(|a, b| a.partial_cmp(b).expect("finite gains"));
            let rows = harness::sweep(&cfg, &rhos).map_err(fail)?;
            let table = harness::sweep_table(&rows);
            print!("{table}");
            std::fs::create_dir_all(&cfg.output_dir)
                .and_then(|_| std::fs::write(cfg.output_dir.join("sweep.csv"), &table))
                .map_err(|e| (1, format!("cannot write sweep table: {e}")))?;
            Ok(())
        }
        Command::EstimateCsh { config } => {
            let cfg = load(&config).map_err(fail)?;
            let (grid, _, _) = cfg.build().map_err(fail)?;
            let c = phaseslide::elliptic::estimate_embedding_constant(&grid);
            println!("c_sh = {c:.16e}");
            Ok(())
        }
        Command::Verify => {
            let results = phaseslide::verify::run_builtin_suite();
            let mut failed = 0;
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                if r.detail.is_empty() {
                    println!("[{tag}] {}", r.name);
                } else {
                    println!("[{tag}] {} ({})", r.name, r.detail);
                }
                if !r.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err((3, format!("{failed} invariant check(s) failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
