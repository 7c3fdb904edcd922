//! Experiment harness: seeded sweeps over random realizations, result
//! persistence, and the oracle verification mode.
//!
//! Determinism contract: a sweep is a pure function of (config, seed).  Rows
//! are computed per realization from the stream derived from
//! `(seed, realization_id)` and merged in realization order, so re-running a
//! sweep reproduces the CSV body byte for byte.  Wall-clock timings are
//! therefore kept out of the CSV and live only in the JSON envelope.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, UlaConfig};
use crate::channel;
use crate::exec;
use crate::fisher::{self, GhqRule};
use crate::multi_pa::{self, AlParams, AoParams};
use crate::oracles::{self, OracleReport};
use crate::scenario::{
    realization_rng, sample_realization, ConfigError, SystemConfig, TransceiverLayout,
};
use crate::single_pa;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown sweep variable `{0}`")]
    UnknownSweepVariable(String),
    #[error("unknown mode `{0}` (expected single-cc, single-sc, single-pareto, multi-sc, multi-cc, multi-pareto, baselines, or verify)")]
    UnknownMode(String),
    #[error("result file {0} is malformed: {1}")]
    Malformed(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SingleCc,
    SingleSc,
    SinglePareto,
    MultiSc,
    MultiCc,
    MultiPareto,
    Baselines,
    Verify,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::SingleCc,
        Mode::SingleSc,
        Mode::SinglePareto,
        Mode::MultiSc,
        Mode::MultiCc,
        Mode::MultiPareto,
        Mode::Baselines,
        Mode::Verify,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::SingleCc => "single-cc",
            Mode::SingleSc => "single-sc",
            Mode::SinglePareto => "single-pareto",
            Mode::MultiSc => "multi-sc",
            Mode::MultiCc => "multi-cc",
            Mode::MultiPareto => "multi-pareto",
            Mode::Baselines => "baselines",
            Mode::Verify => "verify",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| HarnessError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(HarnessError::UnknownMode(other.to_string())),
        }
    }
}

/// A sweep request: mode, optional swept variable, and realization count.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub mode: Mode,
    /// `(config key or "alpha", values)`.
    pub sweep: Option<(String, Vec<f64>)>,
    pub num_realizations: usize,
}

/// One result row; exactly one per (realization, sweep point, scheme).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRow {
    pub realization_id: u64,
    pub mode: String,
    pub scheme: String,
    pub sweep_variable: String,
    pub sweep_value: f64,
    pub rate: f64,
    pub bcrb: f64,
    pub iterations: u64,
    pub feasible: bool,
    pub error: Option<String>,
    /// Not part of the deterministic CSV body; recorded in JSON only.
    pub wall_time_ms: f64,
}

/// Fixed, documented CSV column order (timings excluded for determinism).
pub const CSV_HEADER: &str =
    "realization_id,mode,scheme,sweep_variable,sweep_value,rate_bps_hz,bcrb_m2,iterations,feasible,error";

/// Applies one swept value onto a copy of the config.  `alpha` is not a
/// config key: it parameterizes the Pareto modes and leaves the config
/// untouched.
pub fn apply_sweep_value(
    cfg: &SystemConfig,
    var: &str,
    value: f64,
) -> Result<SystemConfig, HarnessError> {
    let mut c = cfg.clone();
    match var {
        "alpha" => return Ok(c),
        "carrier_freq_hz" => c.carrier_freq_hz = value,
        "guided_index" => c.guided_index = value,
        "region_x_m" => c.region_x = value,
        "region_y_m" => c.region_y = value,
        "height_m" => c.height = value,
        "y_tx_m" => c.y_tx = value,
        "y_rx_m" => c.y_rx = value,
        "tx_power_dbm" => c.tx_power_dbm = value,
        "noise_user_dbm" => c.noise_user_dbm = value,
        "noise_sense_dbm" => c.noise_sense_dbm = value,
        "min_snr_db" => c.min_snr_db = value,
        "max_bcrb" => c.max_bcrb = value,
        "n_tx" => c.n_tx = value as usize,
        "n_rx" => c.n_rx = value as usize,
        "num_users" => c.num_users = value as usize,
        "grid_points" => c.grid_points = value as usize,
        "ghq_nodes" => c.ghq_nodes = value as usize,
        other => return Err(HarnessError::UnknownSweepVariable(other.to_string())),
    }
    Ok(c.validated()?)
}

/// Default 21-point profile grid for the Pareto modes.
pub fn default_alphas() -> Vec<f64> {
    (1..=21).map(|i| i as f64 / 22.0).collect()
}

fn err_row(
    realization_id: u64,
    mode: Mode,
    scheme: &str,
    sweep_variable: &str,
    sweep_value: f64,
    msg: String,
    t0: Instant,
) -> ResultRow {
    ResultRow {
        realization_id,
        mode: mode.as_str().into(),
        scheme: scheme.into(),
        sweep_variable: sweep_variable.into(),
        sweep_value,
        rate: f64::NAN,
        bcrb: f64::NAN,
        iterations: 0,
        feasible: false,
        error: Some(msg),
        wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
    }
}

struct RowCtx<'a> {
    mode: Mode,
    sweep_variable: &'a str,
    sweep_value: f64,
    realization_id: u64,
}

fn ok_row(
    ctx: &RowCtx,
    scheme: &str,
    rate: f64,
    bcrb: f64,
    iterations: u64,
    feasible: bool,
    t0: Instant,
) -> ResultRow {
    ResultRow {
        realization_id: ctx.realization_id,
        mode: ctx.mode.as_str().into(),
        scheme: scheme.into(),
        sweep_variable: ctx.sweep_variable.into(),
        sweep_value: ctx.sweep_value,
        rate,
        bcrb,
        iterations,
        feasible,
        error: None,
        wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
    }
}

/// Runs one realization of one mode at one sweep point.  Failures come back
/// as error rows, never as panics or sweep aborts.
fn run_realization(
    mode: Mode,
    cfg: &SystemConfig,
    rule: &GhqRule,
    seed: u64,
    realization_id: u64,
    sweep_variable: &str,
    sweep_value: f64,
    alpha: Option<f64>,
) -> Vec<ResultRow> {
    let t0 = Instant::now();
    let mut rng = realization_rng(seed, realization_id);
    let (users, prior) = sample_realization(cfg, &mut rng);
    let ctx = RowCtx {
        mode,
        sweep_variable,
        sweep_value,
        realization_id,
    };
    let scheme = mode.as_str();
    let fail = |msg: String| {
        vec![err_row(
            realization_id,
            mode,
            scheme,
            sweep_variable,
            sweep_value,
            msg,
            t0,
        )]
    };

    match mode {
        Mode::SingleCc => {
            // Transmit element from the candidate-set optimum; receive
            // element mirrored about the prior mean for the sensing metric.
            let (x_t, rate) = match single_pa::cc_optimal_tx(&users, cfg) {
                Ok(v) => v,
                Err(e) => return fail(e.to_string()),
            };
            let x_r = single_pa::rx_best_response(x_t, &prior, cfg);
            let layout = TransceiverLayout::new(vec![x_t], vec![x_r]);
            match fisher::bcrb(&layout, &prior, rule, cfg) {
                Ok(b) => vec![ok_row(&ctx, scheme, rate, b.bcrb, 0, true, t0)],
                Err(e) => fail(e.to_string()),
            }
        }
        Mode::SingleSc => {
            let layout = single_pa::sc_optimal_layout(&prior, cfg);
            let rate = match channel::multicast_rate(&users, &layout, cfg) {
                Ok(r) => r,
                Err(e) => return fail(e.to_string()),
            };
            match fisher::bcrb(&layout, &prior, rule, cfg) {
                Ok(b) => vec![ok_row(&ctx, scheme, rate, b.bcrb, 0, true, t0)],
                Err(e) => fail(e.to_string()),
            }
        }
        Mode::SinglePareto => {
            let alpha = alpha.unwrap_or(0.5);
            match single_pa::pareto_single(alpha, &users, &prior, rule, cfg) {
                Ok(p) => {
                    let layout = TransceiverLayout::new(vec![p.x_t], vec![p.x_r]);
                    match fisher::bcrb(&layout, &prior, rule, cfg) {
                        Ok(b) => vec![ok_row(&ctx, scheme, p.rate, b.bcrb, 0, true, t0)],
                        Err(e) => fail(e.to_string()),
                    }
                }
                Err(e) => fail(e.to_string()),
            }
        }
        Mode::MultiSc => {
            let params = AoParams::default();
            let init = match multi_pa::default_layout(cfg) {
                Ok(l) => l,
                Err(e) => return fail(e.to_string()),
            };
            let attempt = multi_pa::alg1_sensing_centric(&init, &users, &prior, rule, cfg, &params);
            let attempt = match attempt {
                Err(multi_pa::AoError::InfeasibleStart { .. }) => {
                    match multi_pa::warm_start_layout(&users, cfg) {
                        Ok(warm) => multi_pa::alg1_sensing_centric(
                            &warm, &users, &prior, rule, cfg, &params,
                        ),
                        Err(e) => Err(e),
                    }
                }
                other => other,
            };
            match attempt {
                Ok((state, bfim)) => {
                    let rate = state.rate_trace.last().copied().unwrap_or(f64::NAN);
                    vec![ok_row(
                        &ctx,
                        scheme,
                        rate,
                        bfim.bcrb,
                        state.iteration as u64,
                        true,
                        t0,
                    )]
                }
                Err(multi_pa::AoError::InfeasibleStart { got_db, need_db }) => {
                    vec![err_row(
                        realization_id,
                        mode,
                        scheme,
                        sweep_variable,
                        sweep_value,
                        format!("infeasible after warm start: {got_db:.2} dB < {need_db:.2} dB"),
                        t0,
                    )]
                }
                Err(e) => fail(e.to_string()),
            }
        }
        Mode::MultiCc => {
            let params = AoParams::default();
            let al = AlParams::for_config(cfg);
            let init = match multi_pa::default_layout(cfg) {
                Ok(l) => l,
                Err(e) => return fail(e.to_string()),
            };
            match multi_pa::alg2_comm_centric(&init, &users, &prior, rule, cfg, &al, &params) {
                Ok((state, al_state)) => {
                    let rate = state.rate_trace.last().copied().unwrap_or(f64::NAN);
                    let bcrb = state.bcrb_trace.last().copied().unwrap_or(f64::NAN);
                    vec![ok_row(
                        &ctx,
                        scheme,
                        rate,
                        bcrb,
                        state.iteration as u64,
                        al_state.feasible,
                        t0,
                    )]
                }
                Err(e) => fail(e.to_string()),
            }
        }
        Mode::MultiPareto => {
            let alpha = alpha.unwrap_or(0.5);
            let params = AoParams::default();
            let init = match multi_pa::default_layout(cfg) {
                Ok(l) => l,
                Err(e) => return fail(e.to_string()),
            };
            match multi_pa::alg3_single_alpha(alpha, &init, &users, &prior, rule, cfg, &params) {
                Ok((p, state)) => vec![ok_row(
                    &ctx,
                    scheme,
                    p.rate,
                    p.bcrb,
                    state.iteration as u64,
                    true,
                    t0,
                )],
                Err(e) => fail(e.to_string()),
            }
        }
        Mode::Baselines => {
            let mut rows = Vec::with_capacity(4);
            match baselines::random_layout(cfg, &mut rng) {
                Ok(l) => match baselines::eval_pass_layout(&l, &users, &prior, rule, cfg) {
                    Ok((rate, bcrb)) => {
                        rows.push(ok_row(&ctx, "random-pa", rate, bcrb, 0, true, t0))
                    }
                    Err(e) => rows.push(err_row(
                        realization_id,
                        mode,
                        "random-pa",
                        sweep_variable,
                        sweep_value,
                        e.to_string(),
                        t0,
                    )),
                },
                Err(e) => rows.push(err_row(
                    realization_id,
                    mode,
                    "random-pa",
                    sweep_variable,
                    sweep_value,
                    e.to_string(),
                    t0,
                )),
            }
            match baselines::centered_layout(cfg) {
                Ok(l) => match baselines::eval_pass_layout(&l, &users, &prior, rule, cfg) {
                    Ok((rate, bcrb)) => {
                        rows.push(ok_row(&ctx, "centered-pa", rate, bcrb, 0, true, t0))
                    }
                    Err(e) => rows.push(err_row(
                        realization_id,
                        mode,
                        "centered-pa",
                        sweep_variable,
                        sweep_value,
                        e.to_string(),
                        t0,
                    )),
                },
                Err(e) => rows.push(err_row(
                    realization_id,
                    mode,
                    "centered-pa",
                    sweep_variable,
                    sweep_value,
                    e.to_string(),
                    t0,
                )),
            }
            let ula = UlaConfig::from_cfg(cfg, 6);
            match baselines::ula_analog_bf(&users, &prior, rule, cfg, &ula) {
                Ok(e) => rows.push(ok_row(&ctx, "ula-analog", e.rate, e.bcrb, 0, true, t0)),
                Err(e) => rows.push(err_row(
                    realization_id,
                    mode,
                    "ula-analog",
                    sweep_variable,
                    sweep_value,
                    e.to_string(),
                    t0,
                )),
            }
            match baselines::ula_digital_bf(&users, &prior, rule, cfg, &ula) {
                Ok(e) => rows.push(ok_row(&ctx, "ula-digital", e.rate, e.bcrb, 0, true, t0)),
                Err(e) => rows.push(err_row(
                    realization_id,
                    mode,
                    "ula-digital",
                    sweep_variable,
                    sweep_value,
                    e.to_string(),
                    t0,
                )),
            }
            rows
        }
        Mode::Verify => unreachable!("verify is dispatched separately"),
    }
}

/// Executes a sweep: for each sweep value and realization, runs the selected
/// mode and collects one row per scheme.  Deterministic under a fixed
/// (config, seed); per-row failures are recorded, never fatal.
pub fn run_sweep(spec: &SweepSpec, cfg: &SystemConfig) -> Result<Vec<ResultRow>, HarnessError> {
    let (var, values): (String, Vec<f64>) = match (&spec.sweep, spec.mode) {
        (Some((v, vals)), _) => (v.clone(), vals.clone()),
        (None, Mode::SinglePareto | Mode::MultiPareto) => ("alpha".into(), default_alphas()),
        (None, _) => ("none".into(), vec![0.0]),
    };
    let seed = cfg.rng_seed;
    let mut rows = Vec::new();
    for &value in &values {
        let cfg_v = if var == "none" {
            cfg.clone()
        } else {
            apply_sweep_value(cfg, &var, value)?
        };
        let rule = fisher::ghq_rule(cfg_v.ghq_nodes).map_err(|e| HarnessError::Malformed(
            "ghq".into(),
            e.to_string(),
        ))?;
        let alpha = if var == "alpha" { Some(value) } else { None };
        let n = spec.num_realizations;
        let blocks = exec::map_collect(n, |i| {
            run_realization(
                spec.mode,
                &cfg_v,
                &rule,
                seed,
                i as u64,
                &var,
                value,
                alpha,
            )
        });
        for block in blocks {
            rows.extend(block);
        }
    }
    Ok(rows)
}

/// FNV-1a hash of the canonical config text, rendered as 16 hex digits.
pub fn config_hash(cfg: &SystemConfig) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in cfg.canonical_text().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn sanitize(msg: &str) -> String {
    msg.chars()
        .map(|c| match c {
            ',' | '\n' | '\r' | '"' => ';',
            c => c,
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Serializes rows as CSV: a config-hash comment line, the fixed header,
/// then one line per row.  Timings are deliberately excluded so identical
/// (config, seed) runs produce byte-identical bodies.
pub fn rows_to_csv(rows: &[ResultRow], cfg: &SystemConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("# config_hash={}\n", config_hash(cfg)));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.realization_id,
            r.mode,
            r.scheme,
            r.sweep_variable,
            fmt_f64(r.sweep_value),
            fmt_f64(r.rate),
            fmt_f64(r.bcrb),
            r.iterations,
            r.feasible,
            r.error.as_deref().map(sanitize).unwrap_or_default(),
        ));
    }
    s
}

/// Schema-versioned JSON envelope carrying the resolved config for
/// reproducibility.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub rows: Vec<ResultRow>,
}

fn config_to_json(cfg: &SystemConfig) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for line in cfg.canonical_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            let num: f64 = v.parse().unwrap_or(f64::NAN);
            map.insert(k.to_string(), serde_json::json!(num));
        }
    }
    serde_json::Value::Object(map)
}

/// Writes rows to `path` in the chosen format and a `.summary.csv` sidecar
/// with per-group aggregates.
pub fn emit_results(
    rows: &[ResultRow],
    format: OutputFormat,
    path: impl AsRef<Path>,
    cfg: &SystemConfig,
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let io_err = |source: std::io::Error| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    match format {
        OutputFormat::Csv => {
            out.write_all(rows_to_csv(rows, cfg).as_bytes()).map_err(io_err)?;
        }
        OutputFormat::Json => {
            let envelope = ResultEnvelope {
                schema_version: 1,
                config_hash: config_hash(cfg),
                config: config_to_json(cfg),
                rows: rows.to_vec(),
            };
            serde_json::to_writer_pretty(&mut out, &envelope)
                .map_err(|e| HarnessError::Malformed(path.display().to_string(), e.to_string()))?;
        }
    }
    out.flush().map_err(io_err)?;

    let summary_path = path.with_extension("summary.csv");
    let mut sw = BufWriter::new(File::create(&summary_path).map_err(io_err)?);
    sw.write_all(summarize_csv(rows).as_bytes()).map_err(io_err)?;
    sw.flush().map_err(io_err)?;
    Ok(())
}

/// Loads a JSON envelope back; the round-trip inverse of
/// [`emit_results`] with [`OutputFormat::Json`].
pub fn load_results_json(path: impl AsRef<Path>) -> Result<ResultEnvelope, HarnessError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_reader(file)
        .map_err(|e| HarnessError::Malformed(path.display().to_string(), e.to_string()))
}

/// Aggregate row: mean and 10/90 percentiles of rate and BCRB per
/// (mode, scheme, sweep value), over rows without errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub scheme: String,
    pub sweep_variable: String,
    pub sweep_value: f64,
    pub count: usize,
    pub rate_mean: f64,
    pub rate_p10: f64,
    pub rate_p90: f64,
    pub bcrb_mean: f64,
    pub bcrb_p10: f64,
    pub bcrb_p90: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(String, String, String, f64)> = Vec::new();
    for r in rows {
        let key = (
            r.mode.clone(),
            r.scheme.clone(),
            r.sweep_variable.clone(),
            r.sweep_value,
        );
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups
        .into_iter()
        .map(|(mode, scheme, var, value)| {
            let mut rates: Vec<f64> = Vec::new();
            let mut bcrbs: Vec<f64> = Vec::new();
            for r in rows {
                if r.mode == mode
                    && r.scheme == scheme
                    && r.sweep_variable == var
                    && r.sweep_value == value
                    && r.error.is_none()
                {
                    rates.push(r.rate);
                    bcrbs.push(r.bcrb);
                }
            }
            rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bcrbs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            SummaryRow {
                mode,
                scheme,
                sweep_variable: var,
                sweep_value: value,
                count: rates.len(),
                rate_mean: mean(&rates),
                rate_p10: percentile(&rates, 0.1),
                rate_p90: percentile(&rates, 0.9),
                bcrb_mean: mean(&bcrbs),
                bcrb_p10: percentile(&bcrbs, 0.1),
                bcrb_p90: percentile(&bcrbs, 0.9),
            }
        })
        .collect()
}

pub fn summarize_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(
        "mode,scheme,sweep_variable,sweep_value,count,rate_mean,rate_p10,rate_p90,bcrb_mean,bcrb_p10,bcrb_p90\n",
    );
    for r in summarize(rows) {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.mode,
            r.scheme,
            r.sweep_variable,
            fmt_f64(r.sweep_value),
            r.count,
            fmt_f64(r.rate_mean),
            fmt_f64(r.rate_p10),
            fmt_f64(r.rate_p90),
            fmt_f64(r.bcrb_mean),
            fmt_f64(r.bcrb_p10),
            fmt_f64(r.bcrb_p90),
        ));
    }
    s
}

/// Oracle cross-checks exercising the independent reference implementations
/// against the fast paths; one report row per check and scenario.
pub fn run_verify(cfg: &SystemConfig, mc_samples: usize) -> Result<Vec<OracleReport>, HarnessError> {
    use crate::fisher::{Axis, Side};
    let mut reports = Vec::new();
    let seed = cfg.rng_seed;

    // GHQ-vs-MC on single-element scenarios, where the quadrature fully
    // resolves the integrand.
    let mut cfg1 = cfg.clone();
    cfg1.n_tx = 1;
    cfg1.n_rx = 1;
    let cfg1 = cfg1.validated()?;
    let rule = fisher::ghq_rule(cfg1.ghq_nodes)
        .map_err(|e| HarnessError::Malformed("ghq".into(), e.to_string()))?;
    for i in 0..3u64 {
        let mut rng = realization_rng(seed, i);
        let (_, prior) = sample_realization(&cfg1, &mut rng);
        let layout = baselines::random_layout(&cfg1, &mut rng)
            .map_err(|e| HarnessError::Malformed("layout".into(), e.to_string()))?;
        let fast = fisher::ofim(&layout, &prior, &rule, &cfg1)
            .map_err(|e| HarnessError::Malformed("ofim".into(), e.to_string()))?;
        let mc = oracles::mc_ofim(&layout, &prior, mc_samples, &mut rng, &cfg1);
        reports.push(OracleReport::new(
            "ghq_vs_mc_fxx",
            i,
            mc.mean[0][0],
            fast.xx,
            mc.samples as u64,
        ));
        reports.push(OracleReport::new(
            "ghq_vs_mc_fyy",
            i,
            mc.mean[1][1],
            fast.yy,
            mc.samples as u64,
        ));
    }

    // Analytic Jacobian vs central finite differences.
    let rule_full = fisher::ghq_rule(cfg.ghq_nodes)
        .map_err(|e| HarnessError::Malformed("ghq".into(), e.to_string()))?;
    for i in 0..5u64 {
        let mut rng = realization_rng(seed.wrapping_add(1), i);
        let (_, prior) = sample_realization(cfg, &mut rng);
        let layout = baselines::random_layout(cfg, &mut rng)
            .map_err(|e| HarnessError::Malformed("layout".into(), e.to_string()))?;
        let target = (prior.mean_x, prior.mean_y);
        let [fdx, _] = oracles::finite_diff_mean_jacobian(target, &layout, cfg, 1e-7);
        let fx = fisher::jacobian_entry(Axis::X, target, &layout, cfg)
            .map_err(|e| HarnessError::Malformed("jacobian".into(), e.to_string()))?;
        reports.push(OracleReport::new(
            "jacobian_vs_fd_fx_mag",
            i,
            fdx.norm(),
            fx.norm(),
            1,
        ));
    }

    // Element-wise OFIM vs full recomputation.
    for i in 0..5u64 {
        let mut rng = realization_rng(seed.wrapping_add(2), i);
        let (_, prior) = sample_realization(cfg, &mut rng);
        let layout = baselines::random_layout(cfg, &mut rng)
            .map_err(|e| HarnessError::Malformed("layout".into(), e.to_string()))?;
        let q = (i as usize) % cfg.n_tx;
        let cache = fisher::OfimElementCache::build(&layout, Side::Tx, q, &prior, &rule_full, cfg)
            .map_err(|e| HarnessError::Malformed("cache".into(), e.to_string()))?;
        let x = multi_pa::local_feasible_set(Side::Tx, q, &layout, cfg)
            .into_iter()
            .next()
            .unwrap_or(layout.tx_x[q]);
        let fast = cache
            .eval(x, cfg)
            .map_err(|e| HarnessError::Malformed("eval".into(), e.to_string()))?;
        let mut moved = layout.clone();
        moved.tx_x[q] = x;
        let full = fisher::ofim(&moved, &prior, &rule_full, cfg)
            .map_err(|e| HarnessError::Malformed("ofim".into(), e.to_string()))?;
        reports.push(OracleReport::new(
            "elementwise_vs_full_fxx",
            i,
            full.xx,
            fast.xx,
            cfg.grid_points as u64,
        ));
    }

    // Candidate-set optimum vs exhaustive grid.
    for i in 0..5u64 {
        let mut rng = realization_rng(seed.wrapping_add(3), i);
        let (users, _) = sample_realization(cfg, &mut rng);
        let (x_fast, _) = single_pa::cc_optimal_tx(&users, cfg)
            .map_err(|e| HarnessError::Malformed("cc".into(), e.to_string()))?;
        let fast_obj = single_pa::minmax_sq_distance(&users, x_fast, cfg);
        let (_, ref_obj) = oracles::exhaustive_single_pa_cc(&users, cfg, 10_001);
        reports.push(OracleReport::new(
            "cc_vs_exhaustive_objective",
            i,
            ref_obj,
            fast_obj,
            10_001,
        ));
    }
    Ok(reports)
}

/// CSV rendering of verification reports.
pub fn reports_to_csv(reports: &[OracleReport]) -> String {
    let mut s = String::from(
        "check,scenario_id,reference_value,fast_value,relative_error,samples_or_gridsize\n",
    );
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.check,
            r.scenario_id,
            fmt_f64(r.reference_value),
            fmt_f64(r.fast_value),
            fmt_f64(r.relative_error),
            r.samples_or_gridsize,
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::default();
        cfg.n_tx = 2;
        cfg.n_rx = 2;
        cfg.grid_points = 60;
        cfg.ghq_nodes = 4;
        cfg.num_realizations = 2;
        cfg.validated().unwrap()
    }

    #[test]
    fn sweep_rows_are_deterministic() {
        let cfg = tiny_cfg();
        let spec = SweepSpec {
            mode: Mode::SingleCc,
            sweep: Some(("region_x_m".into(), vec![8.0, 10.0])),
            num_realizations: 3,
        };
        let a = run_sweep(&spec, &cfg).unwrap();
        let b = run_sweep(&spec, &cfg).unwrap();
        let strip = |rows: &[ResultRow]| rows_to_csv(rows, &cfg);
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn csv_has_fixed_header_and_hash() {
        let cfg = tiny_cfg();
        let spec = SweepSpec {
            mode: Mode::SingleSc,
            sweep: None,
            num_realizations: 1,
        };
        let rows = run_sweep(&spec, &cfg).unwrap();
        let csv = rows_to_csv(&rows, &cfg);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn json_roundtrip_preserves_rows() {
        let cfg = tiny_cfg();
        let spec = SweepSpec {
            mode: Mode::Baselines,
            sweep: None,
            num_realizations: 2,
        };
        let rows = run_sweep(&spec, &cfg).unwrap();
        let dir = std::env::temp_dir().join("pinch_isac_harness_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.json");
        emit_results(&rows, OutputFormat::Json, &path, &cfg).unwrap();
        let envelope = load_results_json(&path).unwrap();
        assert_eq!(envelope.schema_version, 1);
        assert_eq!(envelope.config_hash, config_hash(&cfg));
        assert_eq!(envelope.rows, rows);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn baselines_emit_one_row_per_scheme() {
        let cfg = tiny_cfg();
        let spec = SweepSpec {
            mode: Mode::Baselines,
            sweep: None,
            num_realizations: 1,
        };
        let rows = run_sweep(&spec, &cfg).unwrap();
        let schemes: Vec<&str> = rows.iter().map(|r| r.scheme.as_str()).collect();
        assert_eq!(
            schemes,
            vec!["random-pa", "centered-pa", "ula-analog", "ula-digital"]
        );
    }

    #[test]
    fn unknown_sweep_variable_rejected() {
        let cfg = tiny_cfg();
        assert!(matches!(
            apply_sweep_value(&cfg, "bogus_key", 1.0),
            Err(HarnessError::UnknownSweepVariable(_))
        ));
    }

    #[test]
    fn summary_groups_by_sweep_value() {
        let cfg = tiny_cfg();
        let spec = SweepSpec {
            mode: Mode::SingleCc,
            sweep: Some(("tx_power_dbm".into(), vec![20.0, 30.0])),
            num_realizations: 4,
        };
        let rows = run_sweep(&spec, &cfg).unwrap();
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 2);
        for s in &summary {
            assert_eq!(s.count, 4);
            assert!(s.rate_p10 <= s.rate_mean + 1e-12);
            assert!(s.rate_p90 >= s.rate_mean - 1e-12);
        }
    }
}
