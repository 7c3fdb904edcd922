//! System parameters, random scenario generation, and layout validity.
//!
//! Every other module consumes the types defined here.  Power and noise are
//! taken in dBm at the boundary and converted to Watts exactly once at
//! validation time, so the SNR/Fisher formulas never touch dB values.
//!
//! The configuration file format is flat `key = value` text; `#` starts a
//! comment and blank lines are ignored.  All keys are optional and default to
//! the desk-scale setup documented in the README; unknown keys are rejected.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Slack (1 nm) applied to spacing and range comparisons so layouts built
/// from exact arithmetic (e.g. a gap of exactly λ/2) survive f64 rounding.
pub const SPACING_SLACK_M: f64 = 1e-9;

/// Floor applied to sampled prior variances; keeps the prior Fisher
/// information finite while staying negligible against the sampled range.
pub const PRIOR_VAR_FLOOR_M2: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config value for `{field}`: {msg}")]
    Validation { field: &'static str, msg: String },
}

/// Physical constants, geometry, power/noise budgets, and algorithm knobs.
///
/// The trailing block of fields (`lambda` onward) is derived during
/// [`SystemConfig::validated`] and must not be set directly; call
/// `validated()` again after mutating any raw field.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub carrier_freq_hz: f64,
    pub guided_index: f64,
    /// Waveguide / service-region extent along x (m), `D_x`.
    pub region_x: f64,
    /// Service-region extent along y (m), `D_y`.
    pub region_y: f64,
    /// Deployment height of both waveguides (m).
    pub height: f64,
    pub y_tx: f64,
    pub y_rx: f64,
    pub tx_power_dbm: f64,
    pub noise_user_dbm: f64,
    pub noise_sense_dbm: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Number of grid points discretizing `[0, D_x]` for placement searches.
    pub grid_points: usize,
    /// Gauss-Hermite order used for prior averaging.
    pub ghq_nodes: usize,
    /// Minimum per-user SNR requirement (dB), `γ_c`.
    pub min_snr_db: f64,
    /// Maximum BCRB requirement (m²), `Γ_s`.
    pub max_bcrb: f64,
    pub rng_seed: u64,
    pub num_realizations: usize,
    pub num_users: usize,

    // Derived (filled by `validated`).
    pub lambda: f64,
    pub lambda_g: f64,
    pub k0: f64,
    pub kg: f64,
    /// Free-space gain constant η = c²/(16π²f_c²).
    pub eta: f64,
    /// Minimum inter-element spacing λ/2 (m).
    pub delta_min: f64,
    pub tx_power_w: f64,
    pub noise_user_w: f64,
    pub noise_sense_w: f64,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl Default for SystemConfig {
    /// Desk-scale defaults: 28 GHz carrier, 10 m × 6 m region, waveguides at
    /// y = ±3 m and h = 5 m, 30 dBm transmit power, −90 dBm noise floors,
    /// four elements per waveguide, a 400-point placement grid, and a
    /// 10-node quadrature rule.
    fn default() -> Self {
        SystemConfig {
            carrier_freq_hz: 28e9,
            guided_index: 1.44,
            region_x: 10.0,
            region_y: 6.0,
            height: 5.0,
            y_tx: 3.0,
            y_rx: -3.0,
            tx_power_dbm: 30.0,
            noise_user_dbm: -90.0,
            noise_sense_dbm: -90.0,
            n_tx: 4,
            n_rx: 4,
            grid_points: 400,
            ghq_nodes: 10,
            min_snr_db: 12.0,
            max_bcrb: 0.1,
            rng_seed: 42,
            num_realizations: 50,
            num_users: 4,
            lambda: 0.0,
            lambda_g: 0.0,
            k0: 0.0,
            kg: 0.0,
            eta: 0.0,
            delta_min: 0.0,
            tx_power_w: 0.0,
            noise_user_w: 0.0,
            noise_sense_w: 0.0,
        }
        .validated()
        .expect("default config is valid")
    }
}

impl SystemConfig {
    /// Recomputes derived constants and checks every invariant.  Returns the
    /// config with `lambda`, `k0`, `kg`, `eta`, `delta_min` and the Watt
    /// conversions populated.
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::Validation {
                    field,
                    msg: format!("must be a positive finite number, got {v}"),
                });
            }
            Ok(())
        }
        positive("carrier_freq_hz", self.carrier_freq_hz)?;
        positive("guided_index", self.guided_index)?;
        positive("region_x_m", self.region_x)?;
        positive("region_y_m", self.region_y)?;
        positive("height_m", self.height)?;
        positive("max_bcrb", self.max_bcrb)?;
        for (field, v) in [
            ("y_tx_m", self.y_tx),
            ("y_rx_m", self.y_rx),
            ("tx_power_dbm", self.tx_power_dbm),
            ("noise_user_dbm", self.noise_user_dbm),
            ("noise_sense_dbm", self.noise_sense_dbm),
            ("min_snr_db", self.min_snr_db),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::Validation {
                    field,
                    msg: format!("must be finite, got {v}"),
                });
            }
        }
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(ConfigError::Validation {
                field: "n_tx",
                msg: "element counts must be at least 1".into(),
            });
        }
        if self.grid_points < 2 {
            return Err(ConfigError::Validation {
                field: "grid_points",
                msg: format!("need at least 2 grid points, got {}", self.grid_points),
            });
        }
        if self.ghq_nodes == 0 || self.ghq_nodes > 64 {
            return Err(ConfigError::Validation {
                field: "ghq_nodes",
                msg: format!("quadrature order must be in 1..=64, got {}", self.ghq_nodes),
            });
        }
        if self.num_users == 0 {
            return Err(ConfigError::Validation {
                field: "num_users",
                msg: "need at least one user".into(),
            });
        }

        self.lambda = SPEED_OF_LIGHT_M_S / self.carrier_freq_hz;
        self.lambda_g = self.lambda / self.guided_index;
        self.k0 = 2.0 * std::f64::consts::PI / self.lambda;
        self.kg = 2.0 * std::f64::consts::PI / self.lambda_g;
        self.eta = SPEED_OF_LIGHT_M_S * SPEED_OF_LIGHT_M_S
            / (16.0 * std::f64::consts::PI.powi(2) * self.carrier_freq_hz.powi(2));
        self.delta_min = self.lambda / 2.0;
        self.tx_power_w = dbm_to_watts(self.tx_power_dbm);
        self.noise_user_w = dbm_to_watts(self.noise_user_dbm);
        self.noise_sense_w = dbm_to_watts(self.noise_sense_dbm);

        for (field, n) in [("n_tx", self.n_tx), ("n_rx", self.n_rx)] {
            let span = (n as f64 - 1.0) * self.delta_min;
            if span > self.region_x + SPACING_SLACK_M {
                return Err(ConfigError::Validation {
                    field,
                    msg: format!(
                        "{n} elements at minimum spacing span {span:.4} m > region_x {:.4} m",
                        self.region_x
                    ),
                });
            }
        }
        Ok(self)
    }

    /// Minimum per-user SNR requirement in linear units.
    pub fn gamma_c(&self) -> f64 {
        10f64.powf(self.min_snr_db / 10.0)
    }

    /// Multicast rate target Γ_c = log2(1 + γ_c), for reporting.
    pub fn rate_target(&self) -> f64 {
        (1.0 + self.gamma_c()).log2()
    }

    /// The `grid_points`-point placement grid over `[0, D_x]`.
    pub fn grid(&self) -> Vec<f64> {
        grid_coordinates(self.grid_points, self.region_x)
    }

    /// Canonical `key = value` rendering (sorted, full precision); the basis
    /// of the config hash embedded in result files.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("carrier_freq_hz", format!("{}", self.carrier_freq_hz)),
            ("guided_index", format!("{}", self.guided_index)),
            ("region_x_m", format!("{}", self.region_x)),
            ("region_y_m", format!("{}", self.region_y)),
            ("height_m", format!("{}", self.height)),
            ("y_tx_m", format!("{}", self.y_tx)),
            ("y_rx_m", format!("{}", self.y_rx)),
            ("tx_power_dbm", format!("{}", self.tx_power_dbm)),
            ("noise_user_dbm", format!("{}", self.noise_user_dbm)),
            ("noise_sense_dbm", format!("{}", self.noise_sense_dbm)),
            ("n_tx", format!("{}", self.n_tx)),
            ("n_rx", format!("{}", self.n_rx)),
            ("grid_points", format!("{}", self.grid_points)),
            ("ghq_nodes", format!("{}", self.ghq_nodes)),
            ("min_snr_db", format!("{}", self.min_snr_db)),
            ("max_bcrb", format!("{}", self.max_bcrb)),
            ("rng_seed", format!("{}", self.rng_seed)),
            ("num_realizations", format!("{}", self.num_realizations)),
            ("num_users", format!("{}", self.num_users)),
        ] {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}

/// Uniform `n`-point grid over `[0, d_x]` including both endpoints.  Shared
/// by the placement searches and the brute-force oracles so "within one grid
/// step" statements are exact.
pub fn grid_coordinates(n: usize, d_x: f64) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least two points");
    let step = d_x / (n - 1) as f64;
    (0..n).map(|i| i as f64 * step).collect()
}

/// Parses the documented flat key-value format and validates the result.
pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Parses config text (see module docs for the format).
pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let mut cfg = raw_default();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value, line_no)?;
    }
    cfg.validated()
}

fn raw_default() -> SystemConfig {
    // Default doubles as the raw template; derived fields are overwritten by
    // `validated`.
    SystemConfig::default()
}

fn apply_key(
    cfg: &mut SystemConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    fn parse_f64(value: &str, key: &str, line: usize) -> Result<f64, ConfigError> {
        value.parse::<f64>().map_err(|_| ConfigError::Parse {
            line,
            msg: format!("`{key}` expects a number, got `{value}`"),
        })
    }
    fn parse_usize(value: &str, key: &str, line: usize) -> Result<usize, ConfigError> {
        value.parse::<usize>().map_err(|_| ConfigError::Parse {
            line,
            msg: format!("`{key}` expects a non-negative integer, got `{value}`"),
        })
    }
    match key {
        "carrier_freq_hz" => cfg.carrier_freq_hz = parse_f64(value, key, line)?,
        "guided_index" => cfg.guided_index = parse_f64(value, key, line)?,
        "region_x_m" => cfg.region_x = parse_f64(value, key, line)?,
        "region_y_m" => cfg.region_y = parse_f64(value, key, line)?,
        "height_m" => cfg.height = parse_f64(value, key, line)?,
        "y_tx_m" => cfg.y_tx = parse_f64(value, key, line)?,
        "y_rx_m" => cfg.y_rx = parse_f64(value, key, line)?,
        "tx_power_dbm" => cfg.tx_power_dbm = parse_f64(value, key, line)?,
        "noise_user_dbm" => cfg.noise_user_dbm = parse_f64(value, key, line)?,
        "noise_sense_dbm" => cfg.noise_sense_dbm = parse_f64(value, key, line)?,
        "n_tx" => cfg.n_tx = parse_usize(value, key, line)?,
        "n_rx" => cfg.n_rx = parse_usize(value, key, line)?,
        "grid_points" => cfg.grid_points = parse_usize(value, key, line)?,
        "ghq_nodes" => cfg.ghq_nodes = parse_usize(value, key, line)?,
        "min_snr_db" => cfg.min_snr_db = parse_f64(value, key, line)?,
        "max_bcrb" => cfg.max_bcrb = parse_f64(value, key, line)?,
        "rng_seed" => {
            cfg.rng_seed = value.parse::<u64>().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("`rng_seed` expects an unsigned integer, got `{value}`"),
            })?
        }
        "num_realizations" => cfg.num_realizations = parse_usize(value, key, line)?,
        "num_users" => cfg.num_users = parse_usize(value, key, line)?,
        other => {
            return Err(ConfigError::Parse {
                line,
                msg: format!("unknown key `{other}`"),
            })
        }
    }
    Ok(())
}

/// Multicast user positions on the ground plane (z = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct UserSet {
    /// (x, y) coordinates in meters.
    pub positions: Vec<(f64, f64)>,
}

impl UserSet {
    pub fn count(&self) -> usize {
        self.positions.len()
    }
}

/// Independent Gaussian prior on the target's planar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPrior {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
}

/// Ordered Tx/Rx element x-coordinates on the two waveguides.
#[derive(Debug, Clone, PartialEq)]
pub struct TransceiverLayout {
    pub tx_x: Vec<f64>,
    pub rx_x: Vec<f64>,
}

impl TransceiverLayout {
    pub fn new(tx_x: Vec<f64>, rx_x: Vec<f64>) -> Self {
        TransceiverLayout { tx_x, rx_x }
    }

    fn side_ok(xs: &[f64], cfg: &SystemConfig) -> bool {
        if xs.is_empty() {
            return false;
        }
        for &x in xs {
            if !x.is_finite() || x < -SPACING_SLACK_M || x > cfg.region_x + SPACING_SLACK_M {
                return false;
            }
        }
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                return false;
            }
            if w[1] - w[0] < cfg.delta_min - SPACING_SLACK_M {
                return false;
            }
        }
        true
    }
}

/// True iff ordering, range, and minimum-spacing invariants hold on both
/// waveguides (to within the 1 nm slack).
pub fn validate_layout(layout: &TransceiverLayout, cfg: &SystemConfig) -> bool {
    TransceiverLayout::side_ok(&layout.tx_x, cfg) && TransceiverLayout::side_ok(&layout.rx_x, cfg)
}

/// Derives the per-realization RNG stream from `(seed, index)`, so sweeps are
/// order-independent and safely parallelizable.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one random scenario: `K` users uniform on the service rectangle, a
/// prior mean uniform on the same rectangle, and prior variances
/// `σ_x² ~ U(0,1)`, `σ_y² ~ U(0,2)`, resampled while below the variance floor.
pub fn sample_realization(cfg: &SystemConfig, rng: &mut impl Rng) -> (UserSet, TargetPrior) {
    let half_y = cfg.region_y / 2.0;
    let positions = (0..cfg.num_users)
        .map(|_| {
            (
                rng.gen_range(0.0..cfg.region_x),
                rng.gen_range(-half_y..half_y),
            )
        })
        .collect();
    let mean_x = rng.gen_range(0.0..cfg.region_x);
    let mean_y = rng.gen_range(-half_y..half_y);
    let mut var_x = rng.gen_range(0.0..1.0);
    while var_x < PRIOR_VAR_FLOOR_M2 {
        var_x = rng.gen_range(0.0..1.0);
    }
    let mut var_y = rng.gen_range(0.0..2.0);
    while var_y < PRIOR_VAR_FLOOR_M2 {
        var_y = rng.gen_range(0.0..2.0);
    }
    (
        UserSet { positions },
        TargetPrior {
            mean_x,
            mean_y,
            var_x,
            var_y,
        },
    )
}
