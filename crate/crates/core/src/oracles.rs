//! Independent brute-force reference implementations used by tests and the
//! verification harness: Monte-Carlo expectations, exhaustive grid searches,
//! and finite-difference derivatives.
//!
//! Deliberately simple and slow.  Everything here is re-derived from the
//! propagation model directly — the only shared code is the `scenario` type
//! layer — so agreement with the fast paths is evidence, not tautology.

use num_complex::Complex64;
use rand::Rng;

use crate::exec;
use crate::scenario::{grid_coordinates, SystemConfig, TargetPrior, TransceiverLayout, UserSet};

/// One row of a verification run: a reference value, the fast-path value it
/// checks, and their relative error.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OracleReport {
    pub check: String,
    pub scenario_id: u64,
    pub reference_value: f64,
    pub fast_value: f64,
    pub relative_error: f64,
    pub samples_or_gridsize: u64,
}

impl OracleReport {
    pub fn new(
        check: impl Into<String>,
        scenario_id: u64,
        reference_value: f64,
        fast_value: f64,
        samples_or_gridsize: u64,
    ) -> Self {
        let relative_error =
            (fast_value - reference_value).abs() / reference_value.abs().max(1e-30);
        OracleReport {
            check: check.into(),
            scenario_id,
            reference_value,
            fast_value,
            relative_error,
            samples_or_gridsize,
        }
    }
}

/// Power-normalized echo mean μ̃(ζ) = g_t(ζ)·g_r(ζ), written out from the
/// propagation model with no shared channel code.
fn mean_echo(target: (f64, f64), tx: &[f64], rx: &[f64], cfg: &SystemConfig) -> Complex64 {
    fn side(target: (f64, f64), xs: &[f64], y: f64, cfg: &SystemConfig) -> Complex64 {
        let amp = (1.0 / xs.len() as f64).sqrt() * cfg.eta.sqrt();
        let mut g = Complex64::new(0.0, 0.0);
        for &x in xs {
            let dx = target.0 - x;
            let dy = target.1 - y;
            let r = (dx * dx + dy * dy + cfg.height * cfg.height).sqrt();
            g += amp * Complex64::cis(-(cfg.k0 * r + cfg.kg * x)) / r;
        }
        g
    }
    side(target, tx, cfg.y_tx, cfg) * side(target, rx, cfg.y_rx, cfg)
}

/// Central finite differences of the echo mean with respect to the target
/// coordinates: returns (∂μ̃/∂u_x, ∂μ̃/∂u_y).
pub fn finite_diff_mean_jacobian(
    target: (f64, f64),
    layout: &TransceiverLayout,
    cfg: &SystemConfig,
    step: f64,
) -> [Complex64; 2] {
    assert!((1e-9..=1e-3).contains(&step), "step outside sane range");
    let fx = (mean_echo((target.0 + step, target.1), &layout.tx_x, &layout.rx_x, cfg)
        - mean_echo((target.0 - step, target.1), &layout.tx_x, &layout.rx_x, cfg))
        / (2.0 * step);
    let fy = (mean_echo((target.0, target.1 + step), &layout.tx_x, &layout.rx_x, cfg)
        - mean_echo((target.0, target.1 - step), &layout.tx_x, &layout.rx_x, cfg))
        / (2.0 * step);
    [fx, fy]
}

/// Monte-Carlo estimate of the observation Fisher matrix with per-entry
/// standard errors.
#[derive(Debug, Clone)]
pub struct McOfim {
    pub mean: [[f64; 2]; 2],
    pub stderr: [[f64; 2]; 2],
    pub samples: usize,
}

const FD_STEP_M: f64 = 1e-7;

/// Plain Monte-Carlo average of 2P_t/σ_s²·Re{f_α*f_β} over prior draws,
/// using antithetic pairs for variance reduction.  `n_samples` is the total
/// draw count (two draws per antithetic pair).
pub fn mc_ofim(
    layout: &TransceiverLayout,
    prior: &TargetPrior,
    n_samples: usize,
    rng: &mut impl Rng,
    cfg: &SystemConfig,
) -> McOfim {
    assert!(n_samples >= 2, "need at least one antithetic pair");
    let pairs = n_samples / 2;
    let sx = prior.var_x.sqrt();
    let sy = prior.var_y.sqrt();
    // Draw all offsets up front (sequential, deterministic), then evaluate
    // in fixed-size chunks whose partial sums are folded in order.
    let zs: Vec<(f64, f64)> = (0..pairs)
        .map(|_| {
            // Box-Muller transform of two uniforms.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * u2;
            (r * th.cos(), r * th.sin())
        })
        .collect();

    const CHUNK: usize = 2048;
    let n_chunks = pairs.div_ceil(CHUNK);
    let chunk_sums = exec::map_collect(n_chunks, |ci| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(pairs);
        let mut s = [0.0f64; 3];
        let mut s2 = [0.0f64; 3];
        for &(zx, zy) in &zs[lo..hi] {
            let mut pair = [0.0f64; 3];
            for sgn in [1.0, -1.0] {
                let u = (prior.mean_x + sgn * sx * zx, prior.mean_y + sgn * sy * zy);
                let fx = (mean_echo((u.0 + FD_STEP_M, u.1), &layout.tx_x, &layout.rx_x, cfg)
                    - mean_echo((u.0 - FD_STEP_M, u.1), &layout.tx_x, &layout.rx_x, cfg))
                    / (2.0 * FD_STEP_M);
                let fy = (mean_echo((u.0, u.1 + FD_STEP_M), &layout.tx_x, &layout.rx_x, cfg)
                    - mean_echo((u.0, u.1 - FD_STEP_M), &layout.tx_x, &layout.rx_x, cfg))
                    / (2.0 * FD_STEP_M);
                pair[0] += 0.5 * fx.norm_sqr();
                pair[1] += 0.5 * (fx.conj() * fy).re;
                pair[2] += 0.5 * fy.norm_sqr();
            }
            for k in 0..3 {
                s[k] += pair[k];
                s2[k] += pair[k] * pair[k];
            }
        }
        (s, s2)
    });
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    for (s, s2) in chunk_sums {
        for k in 0..3 {
            sum[k] += s[k];
            sumsq[k] += s2[k];
        }
    }
    let scale = 2.0 * cfg.tx_power_w / cfg.noise_sense_w;
    let np = pairs as f64;
    let mut mean = [0.0f64; 3];
    let mut se = [0.0f64; 3];
    for k in 0..3 {
        let m = sum[k] / np;
        let var = ((sumsq[k] / np - m * m) / np).max(0.0);
        mean[k] = scale * m;
        se[k] = scale * var.sqrt();
    }
    McOfim {
        mean: [[mean[0], mean[1]], [mean[1], mean[2]]],
        stderr: [[se[0], se[1]], [se[1], se[2]]],
        samples: pairs * 2,
    }
}

/// Independent Gauss-Hermite rule: nodes by bisection on the orthonormal
/// Hermite polynomial, weights from the Christoffel sum 1/Σ p_k(x)².
pub fn gauss_hermite_reference(t: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(t >= 1 && t <= 64);
    // Orthonormal Hermite polynomials wrt e^{−x²}:
    //   p_0 = π^{−1/4},  p_{n+1} = (x·p_n − √(n/2)·p_{n−1})/√((n+1)/2).
    fn p_all(t: usize, x: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(t + 1);
        p.push(std::f64::consts::PI.powf(-0.25));
        if t >= 1 {
            p.push(x * p[0] / (0.5f64).sqrt());
        }
        for n in 1..t {
            let next = (x * p[n] - (n as f64 / 2.0).sqrt() * p[n - 1])
                / (((n + 1) as f64 / 2.0).sqrt());
            p.push(next);
        }
        p
    }
    let pt = |x: f64| p_all(t, x)[t];
    let bound = (2.0 * t as f64 + 1.0).sqrt() + 1.0;
    let samples = 80 * t;
    let mut roots = Vec::with_capacity(t);
    let mut prev_x = -bound;
    let mut prev_v = pt(prev_x);
    for i in 1..=samples {
        let x = -bound + 2.0 * bound * i as f64 / samples as f64;
        let v = pt(x);
        if v == 0.0 {
            // Landed exactly on a root; record it once and let the next
            // interval start past it.
            roots.push(x);
        } else if prev_v != 0.0 && prev_v.signum() != v.signum() {
            let (mut a, mut b) = (prev_x, x);
            let mut fa = prev_v;
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = pt(m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if fa.signum() != fm.signum() {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_x = x;
        prev_v = v;
    }
    assert_eq!(roots.len(), t, "root bracketing missed a node");
    let weights = roots
        .iter()
        .map(|&x| {
            let p = p_all(t, x);
            1.0 / p[..t].iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    (roots, weights)
}

/// Reference 2×2 BCRB: own quadrature rule, finite-difference Jacobians of
/// the own echo mean, closed-form trace of the inverse.
pub fn bcrb_2d_reference(
    tx: &[f64],
    rx: &[f64],
    prior: &TargetPrior,
    t: usize,
    cfg: &SystemConfig,
) -> f64 {
    let (nodes, weights) = gauss_hermite_reference(t);
    let layout = TransceiverLayout::new(tx.to_vec(), rx.to_vec());
    let sx = prior.var_x.sqrt();
    let sy = prior.var_y.sqrt();
    let mut f = [0.0f64; 3];
    for (i, &xi) in nodes.iter().enumerate() {
        for (j, &xj) in nodes.iter().enumerate() {
            let u = (
                prior.mean_x + std::f64::consts::SQRT_2 * sx * xi,
                prior.mean_y + std::f64::consts::SQRT_2 * sy * xj,
            );
            let [fx, fy] = finite_diff_mean_jacobian(u, &layout, cfg, FD_STEP_M);
            let w = weights[i] * weights[j] / std::f64::consts::PI;
            f[0] += w * fx.norm_sqr();
            f[1] += w * (fx.conj() * fy).re;
            f[2] += w * fy.norm_sqr();
        }
    }
    let scale = 2.0 * cfg.tx_power_w / cfg.noise_sense_w;
    let a = scale * f[0] + 1.0 / prior.var_x;
    let b = scale * f[2] + 1.0 / prior.var_y;
    let det = a * b - (scale * f[1]).powi(2);
    (a + b) / det
}

/// Exhaustive single-element communications search: the grid minimizer of
/// the max squared-distance envelope.  Returns `(x_star, objective)`.
pub fn exhaustive_single_pa_cc(users: &UserSet, cfg: &SystemConfig, grid_n: usize) -> (f64, f64) {
    let grid = grid_coordinates(grid_n, cfg.region_x);
    let mut best_x = grid[0];
    let mut best = f64::INFINITY;
    for &x in &grid {
        let mut v = f64::NEG_INFINITY;
        for &(ux, uy) in &users.positions {
            let dk2 = (cfg.y_tx - uy).powi(2) + cfg.height * cfg.height;
            v = v.max((x - ux).powi(2) + dk2);
        }
        if v < best {
            best = v;
            best_x = x;
        }
    }
    (best_x, best)
}

/// Exhaustive transmit/receive pair search for the single-element case:
/// global grid minimizer of the reference 2D BCRB.  Returns
/// `(x_t, x_r, bcrb)`.
pub fn exhaustive_pair_search(
    prior: &TargetPrior,
    cfg: &SystemConfig,
    grid_n: usize,
) -> (f64, f64, f64) {
    assert!(grid_n <= 300, "pair search is O(grid²); keep it affordable");
    let grid = grid_coordinates(grid_n, cfg.region_x);
    let t = cfg.ghq_nodes;
    let rows = exec::map_collect(grid.len(), |i| {
        let xt = grid[i];
        let mut best = (0usize, f64::INFINITY);
        for (j, &xr) in grid.iter().enumerate() {
            let b = bcrb_2d_reference(&[xt], &[xr], prior, t, cfg);
            if b < best.1 {
                best = (j, b);
            }
        }
        best
    });
    let mut best = (0usize, 0usize, f64::INFINITY);
    for (i, (j, b)) in rows.into_iter().enumerate() {
        if b < best.2 {
            best = (i, j, b);
        }
    }
    (grid[best.0], grid[best.1], best.2)
}

/// Reference conditional 1D Fisher information at a midline target, from a
/// finite difference of the own echo mean (no closed-form bracket algebra).
pub fn conditional_fisher_1d_reference(u_x: f64, x_t: f64, x_r: f64, cfg: &SystemConfig) -> f64 {
    let mid = (cfg.y_tx + cfg.y_rx) / 2.0;
    let d = (mean_echo((u_x + FD_STEP_M, mid), &[x_t], &[x_r], cfg)
        - mean_echo((u_x - FD_STEP_M, mid), &[x_t], &[x_r], cfg))
        / (2.0 * FD_STEP_M);
    2.0 * cfg.tx_power_w / cfg.noise_sense_w * d.norm_sqr()
}

/// Grid maximizer of the prior-averaged same-side 1D Fisher information
/// over the displacement d ∈ [0, d_max].  Returns `(d_star, value)`.
pub fn sc_displacement_grid(
    sigma_x: f64,
    mu_x: f64,
    cfg: &SystemConfig,
    grid_n: usize,
    d_max: f64,
) -> (f64, f64) {
    let (nodes, weights) = gauss_hermite_reference(cfg.ghq_nodes);
    let ds = grid_coordinates(grid_n, d_max);
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let vals = exec::map_collect(ds.len(), |i| {
        let d = ds[i];
        let x = mu_x - d;
        let mut acc = 0.0;
        for (&xi, &w) in nodes.iter().zip(&weights) {
            let u = mu_x + std::f64::consts::SQRT_2 * sigma_x * xi;
            acc += w * conditional_fisher_1d_reference(u, x, x, cfg);
        }
        acc * inv_sqrt_pi
    });
    let mut best = (ds[0], f64::NEG_INFINITY);
    for (i, v) in vals.into_iter().enumerate() {
        if v > best.1 {
            best = (ds[i], v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{realization_rng, sample_realization, SystemConfig};

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn reference_rule_matches_analytic_low_orders() {
        let (n1, w1) = gauss_hermite_reference(1);
        assert!(n1[0].abs() < 1e-12);
        assert!((w1[0] - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        let (n2, w2) = gauss_hermite_reference(2);
        assert!((n2[1] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((w2[0] - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
        // Moments at a larger order.
        let (n, w) = gauss_hermite_reference(16);
        let m0: f64 = w.iter().sum();
        let m2: f64 = n.iter().zip(&w).map(|(&x, &w)| w * x * x).sum();
        assert!((m0 - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        assert!((m2 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-10);
    }

    #[test]
    fn fd_error_scales_quadratically() {
        let cfg = cfg();
        let layout = TransceiverLayout::new(vec![2.0, 6.0], vec![3.0, 8.0]);
        let target = (5.3, 0.7);
        let tiny = finite_diff_mean_jacobian(target, &layout, &cfg, 1e-8)[0];
        let errs: Vec<f64> = [1e-5, 1e-4]
            .iter()
            .map(|&h| (finite_diff_mean_jacobian(target, &layout, &cfg, h)[0] - tiny).norm())
            .collect();
        let order = (errs[1] / errs[0]).log10();
        assert!(
            (1.5..=2.5).contains(&order),
            "observed order {order}, errs {errs:?}"
        );
    }

    #[test]
    fn mc_stderr_shrinks_with_samples() {
        let cfg = cfg();
        let layout = TransceiverLayout::new(vec![3.0], vec![7.0]);
        let prior = TargetPrior {
            mean_x: 5.0,
            mean_y: 0.0,
            var_x: 0.5,
            var_y: 0.5,
        };
        let a = mc_ofim(&layout, &prior, 20_000, &mut realization_rng(1, 0), &cfg);
        let b = mc_ofim(&layout, &prior, 40_000, &mut realization_rng(1, 1), &cfg);
        let ratio = a.stderr[0][0] / b.stderr[0][0];
        assert!((1.2..=1.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mc_point_mass_matches_gramian() {
        let cfg = cfg();
        let layout = TransceiverLayout::new(vec![3.0], vec![7.0]);
        let prior = TargetPrior {
            mean_x: 5.0,
            mean_y: 0.2,
            var_x: 1e-18,
            var_y: 1e-18,
        };
        let m = mc_ofim(&layout, &prior, 2_000, &mut realization_rng(2, 0), &cfg);
        let [fx, fy] = finite_diff_mean_jacobian((5.0, 0.2), &layout, &cfg, FD_STEP_M);
        let s = 2.0 * cfg.tx_power_w / cfg.noise_sense_w;
        assert!((m.mean[0][0] - s * fx.norm_sqr()).abs() / m.mean[0][0] < 1e-6);
        assert!((m.mean[1][1] - s * fy.norm_sqr()).abs() / m.mean[1][1] < 1e-6);
    }

    #[test]
    fn exhaustive_cc_basics() {
        let cfg = cfg();
        let users = UserSet {
            positions: vec![(3.024, 1.0)],
        };
        let (x, _) = exhaustive_single_pa_cc(&users, &cfg, 1001);
        assert!((x - 3.024).abs() <= 10.0 / 1000.0 / 2.0 + 1e-12);

        // Refining the grid 10x never worsens the objective (nested grids).
        let mut rng = realization_rng(3, 0);
        let (users, _) = sample_realization(&cfg, &mut rng);
        let coarse = exhaustive_single_pa_cc(&users, &cfg, 101).1;
        let fine = exhaustive_single_pa_cc(&users, &cfg, 1001).1;
        assert!(fine <= coarse + 1e-12);
    }
}
