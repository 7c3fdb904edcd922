//! `pinch-isac` command-line interface: runs one experiment mode over seeded
//! random realizations and writes CSV or JSON results.
//!
//! Exit codes: 0 on success, 2 when some rows recorded per-row failures,
//! 1 on fatal configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::Parser;

use pinch_isac::harness::{
    self, emit_results, reports_to_csv, run_sweep, Mode, OutputFormat, SweepSpec,
};
use pinch_isac::scenario::{load_config, SystemConfig};

#[derive(Parser, Debug)]
#[command(
    name = "pinch-isac",
    about = "Pinching-antenna ISAC placement experiments",
    after_help = "Modes: single-cc, single-sc, single-pareto, multi-sc, multi-cc, multi-pareto, baselines, verify.\n\
                  Sweep example: --sweep region_x_m=4,6,8,10,12,14"
)]
struct Cli {
    /// Experiment mode.
    mode: String,

    /// Config file (flat `key = value` text); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Swept variable and comma-separated values, `var=v1,v2,...`.
    #[arg(long)]
    sweep: Option<String>,

    /// Realizations per sweep value (overrides the config).
    #[arg(long)]
    realizations: Option<usize>,

    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,

    /// Output path.
    #[arg(long)]
    out: PathBuf,

    /// Output format.
    #[arg(long, default_value = "csv")]
    format: String,

    /// Monte-Carlo samples for the verify mode.
    #[arg(long, default_value_t = 200_000)]
    mc_samples: usize,
}

fn parse_sweep(arg: &str) -> Result<(String, Vec<f64>), String> {
    let (var, vals) = arg
        .split_once('=')
        .ok_or_else(|| format!("--sweep expects var=v1,v2,..., got `{arg}`"))?;
    let values = vals
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad sweep value `{v}`"))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() {
        return Err("empty sweep value list".into());
    }
    Ok((var.trim().to_string(), values))
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let mode = Mode::from_str(&cli.mode).map_err(|e| e.to_string())?;
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).map_err(|e| e.to_string())?,
        None => SystemConfig::default(),
    };
    if let Some(r) = cli.realizations {
        cfg.num_realizations = r;
    }
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    let cfg = cfg.validated().map_err(|e| e.to_string())?;
    let format = OutputFormat::from_str(&cli.format)
        .map_err(|_| format!("unknown format `{}` (csv or json)", cli.format))?;

    if mode == Mode::Verify {
        let reports = harness::run_verify(&cfg, cli.mc_samples).map_err(|e| e.to_string())?;
        std::fs::write(&cli.out, reports_to_csv(&reports))
            .map_err(|e| format!("cannot write {}: {e}", cli.out.display()))?;
        let worst = reports
            .iter()
            .map(|r| r.relative_error)
            .fold(0.0f64, f64::max);
        eprintln!(
            "verify: {} checks written to {}, worst relative error {worst:.3e}",
            reports.len(),
            cli.out.display()
        );
        return Ok(ExitCode::SUCCESS);
    }

    let sweep = match &cli.sweep {
        Some(arg) => Some(parse_sweep(arg)?),
        None => None,
    };
    let spec = SweepSpec {
        mode,
        sweep,
        num_realizations: cfg.num_realizations,
    };
    let rows = run_sweep(&spec, &cfg).map_err(|e| e.to_string())?;
    emit_results(&rows, format, &cli.out, &cfg).map_err(|e| e.to_string())?;

    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{}: {} rows ({} failed) -> {} (+ .summary.csv)",
        mode,
        rows.len(),
        failures,
        cli.out.display()
    );
    print!("{}", harness::summarize_csv(&rows));
    Ok(if failures > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
