use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use probhull_cli::bench::{run_bench, write_bench_csv};
use probhull_cli::config::ConfigFlags;
use probhull_cli::grid::{run_gridsearch, GridSpec};
use probhull_cli::output::{emit, to_json_string, ResultJson};
use probhull_cli::plot::result_to_svg;
use probhull_cli::{execute_oracle, execute_verify, EXIT_CAP, EXIT_CONFIG};

/// Guaranteed safe-probability intervals for feedforward networks under
/// Gaussian inputs.
#[derive(Parser)]
#[command(name = "probhull", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute [L_s, U_s] for a network and safety property.
    Verify {
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Monte-Carlo estimate of the safe probability (Wilson interval).
    Oracle {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Sample count (>= 1000).
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        /// Interval confidence level in (0,1).
        #[arg(long, default_value_t = 0.99)]
        confidence: f64,
    },
    /// Render the hulls of a result file (needs --emit-hulls) as SVG.
    Plot {
        /// Result JSON produced by `verify`.
        #[arg(long)]
        result: String,
        /// Two input dimensions to draw, e.g. "0,1".
        #[arg(long, default_value = "0,1")]
        dims: String,
        /// Output SVG path (stdout when omitted).
        #[arg(long)]
        out: Option<String>,
    },
    /// Run the hyperparameter grid and emit a CSV with a Pareto flag.
    Gridsearch {
        #[command(flatten)]
        flags: ConfigFlags,
        /// TOML grid specification.
        #[arg(long)]
        grid: String,
        /// Run cells in parallel (cells are independent).
        #[arg(long)]
        parallel_cells: bool,
    },
    /// Compare subdivision strategies under identical settings.
    Bench {
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Verify { flags } => {
            let cfg = flags.resolve()?;
            let outcome = execute_verify(&cfg)?;
            emit(cfg.out.as_deref(), &outcome.json)?;
            let s = &outcome.report.stats;
            eprintln!(
                "L_s={:.6} U_s={:.6} gap={:.6} iterations={} verifier_calls={} exit={:?}",
                outcome.report.l_s,
                outcome.report.u_s,
                outcome.report.gap,
                s.iterations,
                s.verifier_calls,
                s.exit_reason
            );
            Ok(if outcome.cap_exit { EXIT_CAP } else { 0 })
        }
        Command::Oracle {
            flags,
            n,
            confidence,
        } => {
            let cfg = flags.resolve()?;
            let report = execute_oracle(&cfg, n, confidence)?;
            emit(cfg.out.as_deref(), &to_json_string(&report))?;
            Ok(0)
        }
        Command::Plot { result, dims, out } => {
            let text = std::fs::read_to_string(&result)
                .map_err(|e| anyhow::anyhow!("cannot read result file {result}: {e}"))?;
            let parsed: ResultJson = serde_json::from_str(&text)
                .map_err(|e| anyhow::anyhow!("invalid result file {result}: {e}"))?;
            let (dx, dy) = parse_dims(&dims)?;
            let svg = result_to_svg(&parsed, (dx, dy))?;
            emit(out.as_deref(), &svg)?;
            Ok(0)
        }
        Command::Gridsearch {
            flags,
            grid,
            parallel_cells,
        } => {
            let cfg = flags.resolve()?;
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| anyhow::anyhow!("gridsearch needs --out for the CSV"))?;
            let spec = GridSpec::from_toml_file(Path::new(&grid))?;
            let outcome = run_gridsearch(&spec, &cfg, Path::new(&out), parallel_cells)?;
            eprintln!(
                "grid search finished: {} rows ({} resumed), written to {out}",
                outcome.rows.len(),
                outcome.resumed
            );
            Ok(0)
        }
        Command::Bench { flags } => {
            let cfg = flags.resolve()?;
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| anyhow::anyhow!("bench needs --out for the CSV"))?;
            let rows = run_bench(&cfg, cfg.time_cap_s);
            write_bench_csv(Path::new(&out), &rows)?;
            for row in &rows {
                eprintln!(
                    "{}: gap={:?} calls={:?} time={:?} exit={:?}",
                    row.strategy, row.gap, row.verifier_calls, row.wall_time_s, row.exit_reason
                );
            }
            Ok(0)
        }
    }
}

fn parse_dims(s: &str) -> anyhow::Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        anyhow::bail!("--dims expects two comma-separated indices, e.g. 0,1");
    }
    Ok((parts[0].parse()?, parts[1].parse()?))
}
