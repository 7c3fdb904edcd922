//! Closed-form and semi-closed-form single-element designs: the
//! communications-centric candidate-set optimum, the sensing-centric
//! symmetric layout with its closed-form displacement, and the rate-profile
//! Pareto sweep.
//!
//! The sensing quantities in this module use the one-dimensional model in
//! which the target's y-coordinate is pinned to the waveguide midline, so
//! the slant offset is Δ_s = √(h² + ((y_rx−y_tx)/2)²).

use crate::channel::{self, ChannelError};
use crate::exec;
use crate::fisher::{FisherError, GhqRule};
use crate::scenario::{SystemConfig, TargetPrior, TransceiverLayout, UserSet};

/// Perturbation added to the rate-profile denominators at the endpoints
/// α ∈ {0, 1} so both terms stay finite.
pub const RATE_PROFILE_PERTURBATION: f64 = 1e-6;

/// Denominators (α + δ(α,0), (1−α) + δ(α,1)) of the rate-profile utility.
pub fn rate_profile_denominators(alpha: f64) -> (f64, f64) {
    let da = alpha + if alpha == 0.0 { RATE_PROFILE_PERTURBATION } else { 0.0 };
    let db = (1.0 - alpha) + if alpha == 1.0 { RATE_PROFILE_PERTURBATION } else { 0.0 };
    (da, db)
}

/// Rate-profile utility min{rate/(α+δ), sensing_rate/((1−α)+δ)}.
pub fn rate_profile_utility(alpha: f64, rate: f64, sensing_rate: f64) -> f64 {
    let (da, db) = rate_profile_denominators(alpha);
    (rate / da).min(sensing_rate / db)
}

/// Symmetric sensing geometry of the one-dimensional model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricSensingGeometry {
    /// Slant offset Δ_s = √(h² + ((y_rx−y_tx)/2)²).
    pub delta_s: f64,
    /// Symmetry center c (the prior mean).
    pub center: f64,
    /// Optimal displacement d★ from the center.
    pub displacement: f64,
}

pub fn symmetric_geometry(prior: &TargetPrior, cfg: &SystemConfig) -> SymmetricSensingGeometry {
    let (d_exact, _) = sc_displacement(cfg);
    SymmetricSensingGeometry {
        delta_s: delta_s(cfg),
        center: prior.mean_x,
        displacement: d_exact,
    }
}

/// Slant offset of the midline target from either waveguide.
pub fn delta_s(cfg: &SystemConfig) -> f64 {
    let half = (cfg.y_rx - cfg.y_tx) / 2.0;
    (cfg.height * cfg.height + half * half).sqrt()
}

/// Squared-distance envelope objective max_k[(x−x̂_k)² + Δ_k²] minimized by
/// the communications-centric design.
pub fn minmax_sq_distance(users: &UserSet, x: f64, cfg: &SystemConfig) -> f64 {
    users
        .positions
        .iter()
        .map(|&(ux, uy)| {
            let dk2 = (cfg.y_tx - uy).powi(2) + cfg.height * cfg.height;
            (x - ux).powi(2) + dk2
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Finite candidate set containing the communications-centric optimum: the
/// region endpoints, the user x-coordinates, and every pairwise
/// equal-distance point that falls inside `[0, D_x]`.
pub fn cc_candidate_set(users: &UserSet, cfg: &SystemConfig) -> Vec<f64> {
    let mut cands = vec![0.0, cfg.region_x];
    for &(x, _) in &users.positions {
        cands.push(x);
    }
    let k = users.count();
    for i in 0..k {
        for j in (i + 1)..k {
            let (xi, yi) = users.positions[i];
            let (xj, yj) = users.positions[j];
            if xi == xj {
                continue;
            }
            let di2 = (cfg.y_tx - yi).powi(2) + cfg.height * cfg.height;
            let dj2 = (cfg.y_tx - yj).powi(2) + cfg.height * cfg.height;
            let xi_j = (dj2 - di2) / (2.0 * (xj - xi)) + (xi + xj) / 2.0;
            if (0.0..=cfg.region_x).contains(&xi_j) {
                cands.push(xi_j);
            }
        }
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    cands
}

/// Communications-centric transmit placement: the candidate-set minimizer of
/// the max-distance envelope, with ties broken toward the smallest
/// coordinate.  Returns the placement and its multicast rate.
pub fn cc_optimal_tx(users: &UserSet, cfg: &SystemConfig) -> Result<(f64, f64), ChannelError> {
    let cands = cc_candidate_set(users, cfg);
    let mut best_x = cands[0];
    let mut best = f64::INFINITY;
    for &x in &cands {
        let v = minmax_sq_distance(users, x, cfg);
        if v < best {
            best = v;
            best_x = x;
        }
    }
    let rate = channel::multicast_rate_tx(users, &[best_x], cfg)?;
    Ok((best_x, rate))
}

/// Conditional Fisher information for the target's x-coordinate in the
/// one-dimensional symmetric model, as a function of the two element
/// placements:
/// F = (2|μ|²/σ_s²)[(k₀²+R_t⁻²)cos²θ_t + (k₀²+R_r⁻²)cos²θ_r
///     + 2(k₀²+(R_tR_r)⁻¹)cosθ_t cosθ_r Φ],  Φ = cos(k₀(R_t−R_r)),
/// with |μ|² = η²P_t/(R_t²R_r²).
pub fn conditional_fisher_1d(
    u_x: f64,
    x_t: f64,
    x_r: f64,
    cfg: &SystemConfig,
) -> Result<f64, ChannelError> {
    let d = delta_s(cfg);
    let rt = ((u_x - x_t).powi(2) + d * d).sqrt();
    let rr = ((u_x - x_r).powi(2) + d * d).sqrt();
    if rt < channel::MIN_RANGE_M || rr < channel::MIN_RANGE_M {
        return Err(ChannelError::DegenerateGeometry { r: rt.min(rr) });
    }
    let ct = (u_x - x_t) / rt;
    let cr = (u_x - x_r) / rr;
    let phi = (cfg.k0 * (rt - rr)).cos();
    let k2 = cfg.k0 * cfg.k0;
    let bracket = (k2 + 1.0 / (rt * rt)) * ct * ct
        + (k2 + 1.0 / (rr * rr)) * cr * cr
        + 2.0 * (k2 + 1.0 / (rt * rr)) * ct * cr * phi;
    let mu2 = cfg.eta * cfg.eta * cfg.tx_power_w / (rt * rt * rr * rr);
    Ok(2.0 * mu2 / cfg.noise_sense_w * bracket)
}

/// Prior-averaged one-dimensional Fisher information, by the order-T
/// Gauss-Hermite rule over u_x ~ N(mean_x, var_x).
pub fn avg_fisher_1d(
    x_t: f64,
    x_r: f64,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<f64, FisherError> {
    if !(prior.var_x > 0.0) {
        return Err(FisherError::DegeneratePrior);
    }
    let s = prior.var_x.sqrt();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut acc = 0.0;
    for (&xi, &w) in rule.nodes.iter().zip(&rule.weights) {
        let u = prior.mean_x + std::f64::consts::SQRT_2 * s * xi;
        acc += w * conditional_fisher_1d(u, x_t, x_r, cfg)?;
    }
    Ok(acc * inv_sqrt_pi)
}

/// One-dimensional Bayesian bound 1/(F̄ + σ_x⁻²).
pub fn bcrb_1d(
    x_t: f64,
    x_r: f64,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<f64, FisherError> {
    Ok(1.0 / (avg_fisher_1d(x_t, x_r, prior, rule, cfg)? + 1.0 / prior.var_x))
}

/// Closed-form optimal displacement `(d_exact, d_approx)`: the nonnegative
/// root of the stationarity quadratic in d², and its high-frequency
/// approximation Δ_s/√2.
pub fn sc_displacement(cfg: &SystemConfig) -> (f64, f64) {
    let d = delta_s(cfg);
    let k2 = cfg.k0 * cfg.k0;
    let d2 = d * d;
    let disc = (9.0 * k2 * k2 * d2 * d2 + 14.0 * k2 * d2 + 9.0).sqrt();
    let x = (-(k2 * d2 + 3.0) + disc) / (4.0 * k2);
    (x.max(0.0).sqrt(), d / std::f64::consts::SQRT_2)
}

/// Residual of the stationarity quadratic −2k₀²x² − (k₀²Δ²+3)x + (k₀²Δ⁴+Δ²)
/// at x = d², relative to the largest participating term.
pub fn sc_displacement_residual(d: f64, cfg: &SystemConfig) -> f64 {
    let ds = delta_s(cfg);
    let k2 = cfg.k0 * cfg.k0;
    let x = d * d;
    let t1 = -2.0 * k2 * x * x;
    let t2 = -(k2 * ds * ds + 3.0) * x;
    let t3 = k2 * ds.powi(4) + ds * ds;
    let scale = t1.abs().max(t2.abs()).max(t3.abs());
    (t1 + t2 + t3).abs() / scale
}

/// Sensing-centric single-element layout: both elements at μ_x − d★, clamped
/// into the waveguide span (a clamp is logged as a feasibility note).
pub fn sc_optimal_layout(prior: &TargetPrior, cfg: &SystemConfig) -> TransceiverLayout {
    let (d_exact, _) = sc_displacement(cfg);
    let raw = prior.mean_x - d_exact;
    let x = raw.clamp(0.0, cfg.region_x);
    if x != raw {
        log::warn!(
            "sensing-centric placement {raw:.4} m clamped into [0, {:.4}] m",
            cfg.region_x
        );
    }
    TransceiverLayout::new(vec![x], vec![x])
}

/// Sensing-driven receive best response x_r ≈ 2μ_x − x_t, clamped into the
/// waveguide span.
pub fn rx_best_response(x_t: f64, prior: &TargetPrior, cfg: &SystemConfig) -> f64 {
    (2.0 * prior.mean_x - x_t).clamp(0.0, cfg.region_x)
}

/// One point of the single-element rate-profile sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoSinglePoint {
    pub alpha: f64,
    pub x_t: f64,
    pub x_r: f64,
    pub utility: f64,
    pub rate: f64,
    /// One-dimensional sensing rate 1/BCRB₁D (the utility's sensing term).
    pub sensing_rate: f64,
}

/// Rate-profile point for a given α: the transmit coordinate maximizes the
/// profile utility over the placement grid with the receive element at its
/// sensing-driven best response; ties break toward the smallest coordinate.
pub fn pareto_single(
    alpha: f64,
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<ParetoSinglePoint, FisherError> {
    let grid = cfg.grid();
    let evals = exec::map_collect(grid.len(), |i| -> Result<(f64, f64, f64), FisherError> {
        let x = grid[i];
        let rate = channel::multicast_rate_tx(users, &[x], cfg)?;
        let x_r = rx_best_response(x, prior, cfg);
        let sensing = avg_fisher_1d(x, x_r, prior, rule, cfg)? + 1.0 / prior.var_x;
        Ok((rate, sensing, x_r))
    });
    let mut best: Option<ParetoSinglePoint> = None;
    for (i, e) in evals.into_iter().enumerate() {
        let (rate, sensing, x_r) = e?;
        let utility = rate_profile_utility(alpha, rate, sensing);
        let better = match &best {
            None => true,
            Some(b) => utility > b.utility,
        };
        if better {
            best = Some(ParetoSinglePoint {
                alpha,
                x_t: grid[i],
                x_r,
                utility,
                rate,
                sensing_rate: sensing,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
