//! Fisher information for target localization: the Gauss-Hermite rule, the
//! derivative kernels of the echo mean, the observation/prior Fisher
//! matrices, the closed-form 2×2 BCRB, and the element-wise decomposition
//! that makes single-coordinate updates O(T²) instead of O(T²·N).
//!
//! Convention notes, fixed by the finite-difference oracle in `oracles`:
//! the y-component of the derivative kernel uses χ_y = u_y − y_wg (target y
//! minus that waveguide's y-offset), and the Jacobian pairs each waveguide's
//! kernel sum with the *other* waveguide's effective channel, as the product
//! rule of μ = g_t·g_r requires.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::{inwaveguide_vector, ChannelError, MIN_RANGE_M};
use crate::exec;
use crate::scenario::{SystemConfig, TargetPrior, TransceiverLayout};

#[derive(Debug, Error)]
pub enum FisherError {
    #[error("unsupported Gauss-Hermite order {0} (valid range is 1..=64)")]
    UnsupportedOrder(usize),
    #[error("tridiagonal eigen-solve failed to converge")]
    EigenNoConvergence,
    #[error("degenerate prior: variances must be positive")]
    DegeneratePrior,
    #[error("ill-conditioned Fisher matrix: determinant {det:.3e} below 1e-30")]
    IllConditioned { det: f64 },
    #[error("stale element-wise cache: the frozen layout changed since the cache was built")]
    StaleCache,
    #[error(transparent)]
    Geometry(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Tx,
    Rx,
}

/// Symmetric 2×2 matrix over the (x, y) target coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Mat2 {
    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn scaled(&self, s: f64) -> Mat2 {
        Mat2 {
            xx: self.xx * s,
            xy: self.xy * s,
            yy: self.yy * s,
        }
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2 {
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            yy: self.yy + o.yy,
        }
    }

    /// Eigenvalues (ascending) of the symmetric matrix.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let d = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - d, m + d)
    }

    pub fn frobenius(&self) -> f64 {
        (self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy).sqrt()
    }
}

/// Gauss-Hermite rule for ∫ψ(x)e^{−x²}dx ≈ Σᵢ ωᵢψ(ξᵢ).
#[derive(Debug, Clone, PartialEq)]
pub struct GhqRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GhqRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Builds the order-`t` Gauss-Hermite rule by eigen-decomposing the Jacobi
/// matrix of the Hermite recurrence (zero diagonal, off-diagonals √(k/2)).
/// Nodes are symmetrized exactly about zero.
pub fn ghq_rule(t: usize) -> Result<GhqRule, FisherError> {
    if t == 0 || t > 64 {
        return Err(FisherError::UnsupportedOrder(t));
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    if t == 1 {
        return Ok(GhqRule {
            nodes: vec![0.0],
            weights: vec![sqrt_pi],
        });
    }
    let mut d = vec![0.0f64; t];
    let mut e: Vec<f64> = (0..t)
        .map(|k| if k + 1 < t { ((k + 1) as f64 / 2.0).sqrt() } else { 0.0 })
        .collect();
    let mut z0 = vec![0.0f64; t];
    z0[0] = 1.0;
    tqli(&mut d, &mut e, &mut z0)?;

    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
    let mut nodes: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut weights: Vec<f64> = order.iter().map(|&i| sqrt_pi * z0[i] * z0[i]).collect();

    // Enforce exact ± symmetry: ξ_i = −ξ_{t−1−i}, matching weights averaged.
    for i in 0..t / 2 {
        let j = t - 1 - i;
        let mag = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -mag;
        nodes[j] = mag;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if t % 2 == 1 {
        nodes[t / 2] = 0.0;
    }
    Ok(GhqRule { nodes, weights })
}

/// Implicit-shift QL for a symmetric tridiagonal matrix, accumulating only
/// the first row of the eigenvector matrix (all Gauss weights need).
/// `d` holds the diagonal, `e[i]` couples `d[i]` and `d[i+1]`.
fn tqli(d: &mut [f64], e: &mut [f64], z0: &mut [f64]) -> Result<(), FisherError> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(FisherError::EigenNoConvergence);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(if g >= 0.0 { 1.0 } else { -1.0 }));
            let mut s = 1.0f64;
            let mut c = 1.0f64;
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = z0[i + 1];
                z0[i + 1] = s * z0[i] + c * f;
                z0[i] = c * z0[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Per-waveguide sums at a ground-plane target: the effective channel
/// g = Σ wₙ·√η·e^{−jk₀Rₙ}/Rₙ and the kernel sums S_α = Σ K_α over elements.
fn waveguide_sums(
    target: (f64, f64),
    xs: &[f64],
    waveguide_y: f64,
    weights: &[Complex64],
    cfg: &SystemConfig,
) -> Result<(Complex64, Complex64, Complex64), ChannelError> {
    let sqrt_eta = cfg.eta.sqrt();
    let dy = target.1 - waveguide_y;
    let base = dy * dy + cfg.height * cfg.height;
    let mut g = Complex64::new(0.0, 0.0);
    let mut sx = Complex64::new(0.0, 0.0);
    let mut sy = Complex64::new(0.0, 0.0);
    for (&x, &w) in xs.iter().zip(weights) {
        let dx = target.0 - x;
        let r = (dx * dx + base).sqrt();
        if r < MIN_RANGE_M {
            return Err(ChannelError::DegenerateGeometry { r });
        }
        let e = sqrt_eta * w * Complex64::cis(-cfg.k0 * r);
        g += e / r;
        let kfac = e * Complex64::new(1.0, cfg.k0 * r) / (r * r * r);
        sx += kfac * dx;
        sy += kfac * dy;
    }
    Ok((g, sx, sy))
}

/// Unified derivative kernel K_α of element `n` on side `side`:
/// √η·[φ]_n·e^{−jk₀R}·χ_α·(1 + jk₀R)/R³ with χ_x = u_x − x_n and
/// χ_y = u_y − y_wg.
pub fn derivative_kernel(
    alpha: Axis,
    side: Side,
    n: usize,
    target: (f64, f64),
    layout: &TransceiverLayout,
    cfg: &SystemConfig,
) -> Result<Complex64, FisherError> {
    let (xs, y) = match side {
        Side::Tx => (&layout.tx_x, cfg.y_tx),
        Side::Rx => (&layout.rx_x, cfg.y_rx),
    };
    let x = xs[n];
    let w = crate::channel::inwaveguide_coeff(x, xs.len(), cfg);
    let dx = target.0 - x;
    let dy = target.1 - y;
    let r = (dx * dx + dy * dy + cfg.height * cfg.height).sqrt();
    if r < MIN_RANGE_M {
        return Err(ChannelError::DegenerateGeometry { r }.into());
    }
    let chi = match alpha {
        Axis::X => dx,
        Axis::Y => dy,
    };
    Ok(cfg.eta.sqrt() * w * Complex64::cis(-cfg.k0 * r) * chi * Complex64::new(1.0, cfg.k0 * r)
        / (r * r * r))
}

/// Both Jacobian entries (f_x, f_y) of the power-normalized echo mean
/// μ̃ = g_t·g_r: f_α = −(g_r·S_{t,α} + g_t·S_{r,α}).
pub fn jacobian_pair(
    target: (f64, f64),
    tx_xs: &[f64],
    tx_w: &[Complex64],
    rx_xs: &[f64],
    rx_w: &[Complex64],
    cfg: &SystemConfig,
) -> Result<(Complex64, Complex64), FisherError> {
    let (gt, stx, sty) = waveguide_sums(target, tx_xs, cfg.y_tx, tx_w, cfg)?;
    let (gr, srx, sry) = waveguide_sums(target, rx_xs, cfg.y_rx, rx_w, cfg)?;
    Ok((-(gr * stx + gt * srx), -(gr * sty + gt * sry)))
}

/// Single Jacobian entry f_α for a pinching layout.
pub fn jacobian_entry(
    alpha: Axis,
    target: (f64, f64),
    layout: &TransceiverLayout,
    cfg: &SystemConfig,
) -> Result<Complex64, FisherError> {
    let tx_w = inwaveguide_vector(&layout.tx_x, cfg);
    let rx_w = inwaveguide_vector(&layout.rx_x, cfg);
    let (fx, fy) = jacobian_pair(target, &layout.tx_x, &tx_w, &layout.rx_x, &rx_w, cfg)?;
    Ok(match alpha {
        Axis::X => fx,
        Axis::Y => fy,
    })
}

/// Distance from a quadrature node at which the integrand is evaluated at a
/// perturbed abscissa instead (cannot trigger at deployment heights; exists
/// for degenerate test geometries).
const NODE_GUARD_M: f64 = 1e-6;

fn guard_node(u: (f64, f64), sides: [(&[f64], f64); 2], cfg: &SystemConfig) -> (f64, f64) {
    for (xs, y) in sides {
        let dy = u.1 - y;
        let base = dy * dy + cfg.height * cfg.height;
        for &x in xs {
            let dx = u.0 - x;
            if (dx * dx + base).sqrt() < NODE_GUARD_M {
                log::warn!(
                    "quadrature node ({:.6}, {:.6}) within {NODE_GUARD_M} m of an element; \
                     perturbing abscissa",
                    u.0,
                    u.1
                );
                return (u.0 + NODE_GUARD_M, u.1);
            }
        }
    }
    u
}

/// 2P_t/σ_s² prefactor of the observation Fisher matrix (deterministic pilot
/// with |s|² = P_t and unit scattering gain).
fn ofim_scale(cfg: &SystemConfig) -> f64 {
    2.0 * cfg.tx_power_w / cfg.noise_sense_w
}

fn ofim_weighted_impl(
    tx_xs: &[f64],
    tx_w: &[Complex64],
    rx_xs: &[f64],
    rx_w: &[Complex64],
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
    sequential: bool,
) -> Result<Mat2, FisherError> {
    if !(prior.var_x > 0.0) || !(prior.var_y > 0.0) {
        return Err(FisherError::DegeneratePrior);
    }
    let t = rule.len();
    let sx = prior.var_x.sqrt();
    let sy = prior.var_y.sqrt();
    let inv_pi = 1.0 / std::f64::consts::PI;
    let node = |idx: usize| -> Result<Mat2, FisherError> {
        let i = idx / t;
        let j = idx % t;
        let u = (
            prior.mean_x + std::f64::consts::SQRT_2 * sx * rule.nodes[i],
            prior.mean_y + std::f64::consts::SQRT_2 * sy * rule.nodes[j],
        );
        let u = guard_node(u, [(tx_xs, cfg.y_tx), (rx_xs, cfg.y_rx)], cfg);
        let (fx, fy) = jacobian_pair(u, tx_xs, tx_w, rx_xs, rx_w, cfg)?;
        let w = rule.weights[i] * rule.weights[j] * inv_pi;
        Ok(Mat2 {
            xx: w * fx.norm_sqr(),
            xy: w * (fx.conj() * fy).re,
            yy: w * fy.norm_sqr(),
        })
    };
    let parts = if sequential {
        exec::map_collect_seq(t * t, node)
    } else {
        exec::map_collect(t * t, node)
    };
    let mut acc = Mat2::default();
    for p in parts {
        acc = acc.add(&p?);
    }
    Ok(acc.scaled(ofim_scale(cfg)))
}

/// Observation Fisher matrix under explicit element weights (used directly
/// by the fixed-array baselines).
pub fn ofim_weighted(
    tx_xs: &[f64],
    tx_w: &[Complex64],
    rx_xs: &[f64],
    rx_w: &[Complex64],
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<Mat2, FisherError> {
    ofim_weighted_impl(tx_xs, tx_w, rx_xs, rx_w, prior, rule, cfg, false)
}

/// Observation Fisher matrix of a pinching layout, averaged over the prior
/// by the tensorized T×T Gauss-Hermite sum and scaled by 2P_t/σ_s².
pub fn ofim(
    layout: &TransceiverLayout,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<Mat2, FisherError> {
    let tx_w = inwaveguide_vector(&layout.tx_x, cfg);
    let rx_w = inwaveguide_vector(&layout.rx_x, cfg);
    ofim_weighted_impl(
        &layout.tx_x,
        &tx_w,
        &layout.rx_x,
        &rx_w,
        prior,
        rule,
        cfg,
        false,
    )
}

/// Sequential reference path for [`ofim`]; same arithmetic order, no thread
/// pool.  Kept public so the bench suite can compare both in one build.
pub fn ofim_seq(
    layout: &TransceiverLayout,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<Mat2, FisherError> {
    let tx_w = inwaveguide_vector(&layout.tx_x, cfg);
    let rx_w = inwaveguide_vector(&layout.rx_x, cfg);
    ofim_weighted_impl(
        &layout.tx_x,
        &tx_w,
        &layout.rx_x,
        &rx_w,
        prior,
        rule,
        cfg,
        true,
    )
}

/// Prior Fisher matrix Diag(1/σ_x², 1/σ_y²).
pub fn pfim(prior: &TargetPrior) -> Result<Mat2, FisherError> {
    if !(prior.var_x > 0.0) || !(prior.var_y > 0.0) {
        return Err(FisherError::DegeneratePrior);
    }
    Ok(Mat2 {
        xx: 1.0 / prior.var_x,
        xy: 0.0,
        yy: 1.0 / prior.var_y,
    })
}

/// Assembled Bayesian Fisher information and its BCRB trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bfim {
    pub f_xx: f64,
    pub f_xy: f64,
    pub f_yy: f64,
    pub prior_xx: f64,
    pub prior_yy: f64,
    /// tr{(F̃ + Fᵖ)⁻¹} in m².
    pub bcrb: f64,
}

/// Closed-form trace of the inverse 2×2 Bayesian Fisher matrix.
pub fn bcrb_from_parts(obs: &Mat2, prior_mat: &Mat2) -> Result<f64, FisherError> {
    let a = obs.xx + prior_mat.xx;
    let b = obs.yy + prior_mat.yy;
    let det = a * b - obs.xy * obs.xy;
    if det < 1e-30 {
        return Err(FisherError::IllConditioned { det });
    }
    Ok((a + b) / det)
}

fn assemble_bfim(obs: Mat2, prior: &TargetPrior) -> Result<Bfim, FisherError> {
    let p = pfim(prior)?;
    let bcrb = bcrb_from_parts(&obs, &p)?;
    Ok(Bfim {
        f_xx: obs.xx,
        f_xy: obs.xy,
        f_yy: obs.yy,
        prior_xx: p.xx,
        prior_yy: p.yy,
        bcrb,
    })
}

/// BCRB of a pinching layout against the given prior.
pub fn bcrb(
    layout: &TransceiverLayout,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<Bfim, FisherError> {
    assemble_bfim(ofim(layout, prior, rule, cfg)?, prior)
}

/// BCRB under explicit element weights (fixed-array baselines).
pub fn bcrb_weighted(
    tx_xs: &[f64],
    tx_w: &[Complex64],
    rx_xs: &[f64],
    rx_w: &[Complex64],
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<Bfim, FisherError> {
    assemble_bfim(
        ofim_weighted(tx_xs, tx_w, rx_xs, rx_w, prior, rule, cfg)?,
        prior,
    )
}

fn layout_fingerprint(side: Side, q: usize, layout: &TransceiverLayout) -> u64 {
    let mut h = DefaultHasher::new();
    (layout.tx_x.len() as u64).hash(&mut h);
    (layout.rx_x.len() as u64).hash(&mut h);
    (matches!(side, Side::Rx) as u8).hash(&mut h);
    (q as u64).hash(&mut h);
    for (i, &x) in layout.tx_x.iter().enumerate() {
        if !(matches!(side, Side::Tx) && i == q) {
            x.to_bits().hash(&mut h);
        }
    }
    for (i, &x) in layout.rx_x.iter().enumerate() {
        if !(matches!(side, Side::Rx) && i == q) {
            x.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Frozen per-node state for one quadrature abscissa.
#[derive(Debug, Clone)]
struct NodeCtx {
    u: (f64, f64),
    w: f64,
    /// Constant Jacobian part C_α = −(g_oth·S_own^{(−q)} + g_own^{(−q)}·S_oth).
    c_x: Complex64,
    c_y: Complex64,
    /// Full sums of the waveguide that is not being updated.
    g_oth: Complex64,
    s_oth_x: Complex64,
    s_oth_y: Complex64,
}

/// Element-wise OFIM cache: freezes every element except (`side`, `q`) and
/// evaluates the full T×T-averaged OFIM for any candidate coordinate at
/// O(T²) cost, independent of the element counts.
#[derive(Debug, Clone)]
pub struct OfimElementCache {
    side: Side,
    q: usize,
    nodes: Vec<NodeCtx>,
    /// Constant part Φ of the decomposition, already scaled.
    phi: Mat2,
    scale: f64,
    inv_sqrt_n_own: f64,
    y_own: f64,
    prior_mat: Mat2,
    fingerprint: u64,
}

impl OfimElementCache {
    pub fn build(
        layout: &TransceiverLayout,
        side: Side,
        q: usize,
        prior: &TargetPrior,
        rule: &GhqRule,
        cfg: &SystemConfig,
    ) -> Result<Self, FisherError> {
        let (own_xs, own_y, oth_xs, oth_y) = match side {
            Side::Tx => (&layout.tx_x, cfg.y_tx, &layout.rx_x, cfg.y_rx),
            Side::Rx => (&layout.rx_x, cfg.y_rx, &layout.tx_x, cfg.y_tx),
        };
        assert!(q < own_xs.len(), "element index out of range");
        if !(prior.var_x > 0.0) || !(prior.var_y > 0.0) {
            return Err(FisherError::DegeneratePrior);
        }
        let n_own = own_xs.len();
        let own_w_all = {
            let mut w = Vec::with_capacity(n_own.saturating_sub(1));
            let mut x = Vec::with_capacity(n_own.saturating_sub(1));
            for (j, &xj) in own_xs.iter().enumerate() {
                if j != q {
                    w.push(crate::channel::inwaveguide_coeff(xj, n_own, cfg));
                    x.push(xj);
                }
            }
            (x, w)
        };
        let oth_w = inwaveguide_vector(oth_xs, cfg);

        let t = rule.len();
        let sx = prior.var_x.sqrt();
        let sy = prior.var_y.sqrt();
        let inv_pi = 1.0 / std::f64::consts::PI;
        let (frozen_xs, frozen_w) = &own_w_all;
        let node = |idx: usize| -> Result<NodeCtx, FisherError> {
            let i = idx / t;
            let j = idx % t;
            let u = (
                prior.mean_x + std::f64::consts::SQRT_2 * sx * rule.nodes[i],
                prior.mean_y + std::f64::consts::SQRT_2 * sy * rule.nodes[j],
            );
            let u = guard_node(u, [(frozen_xs.as_slice(), own_y), (oth_xs, oth_y)], cfg);
            let (g_own_c, s_own_cx, s_own_cy) =
                waveguide_sums(u, frozen_xs, own_y, frozen_w, cfg)?;
            let (g_oth, s_oth_x, s_oth_y) = waveguide_sums(u, oth_xs, oth_y, &oth_w, cfg)?;
            Ok(NodeCtx {
                u,
                w: rule.weights[i] * rule.weights[j] * inv_pi,
                c_x: -(g_oth * s_own_cx + g_own_c * s_oth_x),
                c_y: -(g_oth * s_own_cy + g_own_c * s_oth_y),
                g_oth,
                s_oth_x,
                s_oth_y,
            })
        };
        let parts = exec::map_collect(t * t, node);
        let mut nodes = Vec::with_capacity(t * t);
        for p in parts {
            nodes.push(p?);
        }
        let scale = ofim_scale(cfg);
        let mut phi = Mat2::default();
        for n in &nodes {
            phi.xx += n.w * n.c_x.norm_sqr();
            phi.xy += n.w * (n.c_x.conj() * n.c_y).re;
            phi.yy += n.w * n.c_y.norm_sqr();
        }
        Ok(OfimElementCache {
            side,
            q,
            nodes,
            phi: phi.scaled(scale),
            scale,
            inv_sqrt_n_own: (1.0 / n_own as f64).sqrt(),
            y_own: own_y,
            prior_mat: pfim(prior)?,
            fingerprint: layout_fingerprint(side, q, layout),
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn moving_index(&self) -> usize {
        self.q
    }

    /// Errors with `StaleCache` if the frozen part of `layout` differs from
    /// the layout this cache was built from.
    pub fn verify_layout(&self, layout: &TransceiverLayout) -> Result<(), FisherError> {
        if layout_fingerprint(self.side, self.q, layout) != self.fingerprint {
            return Err(FisherError::StaleCache);
        }
        Ok(())
    }

    /// Moving-element Jacobian contribution A_α at node `n` for candidate `x`:
    /// A_α = −(g_oth·K_α(x) + g_q(x)·S_oth,α).
    fn moving_parts(
        &self,
        n: &NodeCtx,
        x: f64,
        cfg: &SystemConfig,
    ) -> Result<(Complex64, Complex64), FisherError> {
        let dx = n.u.0 - x;
        let dy = n.u.1 - self.y_own;
        let r = (dx * dx + dy * dy + cfg.height * cfg.height).sqrt();
        if r < MIN_RANGE_M {
            return Err(ChannelError::DegenerateGeometry { r }.into());
        }
        let w = self.inv_sqrt_n_own * Complex64::cis(-cfg.kg * x);
        let e = cfg.eta.sqrt() * w * Complex64::cis(-cfg.k0 * r);
        let g_q = e / r;
        let kfac = e * Complex64::new(1.0, cfg.k0 * r) / (r * r * r);
        let k_x = kfac * dx;
        let k_y = kfac * dy;
        Ok((
            -(n.g_oth * k_x + g_q * n.s_oth_x),
            -(n.g_oth * k_y + g_q * n.s_oth_y),
        ))
    }

    /// Full OFIM with the moving element at `x` (scaled by 2P_t/σ_s²).
    pub fn eval(&self, x: f64, cfg: &SystemConfig) -> Result<Mat2, FisherError> {
        let mut acc = Mat2::default();
        for n in &self.nodes {
            let (ax, ay) = self.moving_parts(n, x, cfg)?;
            let fx = n.c_x + ax;
            let fy = n.c_y + ay;
            acc.xx += n.w * fx.norm_sqr();
            acc.xy += n.w * (fx.conj() * fy).re;
            acc.yy += n.w * fy.norm_sqr();
        }
        Ok(acc.scaled(self.scale))
    }

    /// The (Φ, Λ(x), Ω(x)) split of [`OfimElementCache::eval`]: Φ is constant
    /// in `x`, Λ collects the cross terms, Ω the pure moving-element terms.
    pub fn split_at(&self, x: f64, cfg: &SystemConfig) -> Result<(Mat2, Mat2, Mat2), FisherError> {
        let mut lambda = Mat2::default();
        let mut omega = Mat2::default();
        for n in &self.nodes {
            let (ax, ay) = self.moving_parts(n, x, cfg)?;
            lambda.xx += n.w * 2.0 * (n.c_x.conj() * ax).re;
            lambda.xy += n.w * ((n.c_x.conj() * ay).re + (ax.conj() * n.c_y).re);
            lambda.yy += n.w * 2.0 * (n.c_y.conj() * ay).re;
            omega.xx += n.w * ax.norm_sqr();
            omega.xy += n.w * (ax.conj() * ay).re;
            omega.yy += n.w * ay.norm_sqr();
        }
        Ok((self.phi, lambda.scaled(self.scale), omega.scaled(self.scale)))
    }

    /// BCRB with the moving element at `x`.
    pub fn bcrb_at(&self, x: f64, cfg: &SystemConfig) -> Result<f64, FisherError> {
        bcrb_from_parts(&self.eval(x, cfg)?, &self.prior_mat)
    }
}

/// Spec-shaped wrapper: verifies the cache against `layout`, then evaluates
/// the element-wise OFIM at candidate `x`.
pub fn ofim_elementwise(
    cache: &OfimElementCache,
    layout: &TransceiverLayout,
    x: f64,
    cfg: &SystemConfig,
) -> Result<Mat2, FisherError> {
    cache.verify_layout(layout)?;
    cache.eval(x, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{realization_rng, sample_realization, SystemConfig};
    use rand::Rng;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    fn gamma_half_integer(m: u32) -> f64 {
        // ∫ x^m e^{−x²} dx over ℝ = Γ((m+1)/2) for even m, 0 for odd m.
        if m % 2 == 1 {
            return 0.0;
        }
        let mut val = std::f64::consts::PI.sqrt(); // Γ(1/2)
        let mut k = 0.5;
        for _ in 0..(m / 2) {
            val *= k;
            k += 1.0;
        }
        val
    }

    #[test]
    fn ghq_low_order_analytic() {
        let r1 = ghq_rule(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - std::f64::consts::PI.sqrt()).abs() < 1e-14);

        let r2 = ghq_rule(2).unwrap();
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        assert!((r2.nodes[0] + inv_sqrt2).abs() < 1e-12);
        assert!((r2.nodes[1] - inv_sqrt2).abs() < 1e-12);
        for w in &r2.weights {
            assert!((w - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
        }
        assert!(ghq_rule(0).is_err());
        assert!(ghq_rule(65).is_err());
    }

    #[test]
    fn ghq_moments_and_polynomial_exactness() {
        for t in [1usize, 2, 3, 5, 10, 20, 40, 64] {
            let r = ghq_rule(t).unwrap();
            let w_sum: f64 = r.weights.iter().sum();
            assert!(
                (w_sum - std::f64::consts::PI.sqrt()).abs() / w_sum < 1e-10,
                "t={t}"
            );
            // Exact for monomials of degree ≤ 2t−1.
            for m in (0..2 * t as u32).step_by(2) {
                let quad: f64 = r
                    .nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(&x, &w)| w * x.powi(m as i32))
                    .sum();
                let exact = gamma_half_integer(m);
                assert!(
                    (quad - exact).abs() / exact < 1e-10,
                    "t={t} m={m}: quad {quad} vs exact {exact}"
                );
            }
            // Symmetry is exact by construction.
            for i in 0..t {
                assert_eq!(r.nodes[i], -r.nodes[t - 1 - i]);
                assert_eq!(r.weights[i], r.weights[t - 1 - i]);
            }
        }
        // Degree-4 example at T=10: ∫x⁴e^{−x²} = (3/4)√π.
        let r = ghq_rule(10).unwrap();
        let quad: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(&x, &w)| w * x.powi(4))
            .sum();
        assert!((quad - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kernel_vanishes_when_target_above_element_x() {
        let cfg = cfg();
        let layout = TransceiverLayout::new(vec![4.0], vec![6.0]);
        let k = derivative_kernel(Axis::X, Side::Tx, 0, (4.0, 1.0), &layout, &cfg).unwrap();
        assert_eq!(k.norm(), 0.0);
    }

    #[test]
    fn kernel_modulus_formula() {
        let cfg = cfg();
        let layout = TransceiverLayout::new(vec![2.0, 6.0], vec![5.0]);
        let target = (3.5, -1.0);
        let n = 1usize;
        let k = derivative_kernel(Axis::X, Side::Tx, n, target, &layout, &cfg).unwrap();
        let dx: f64 = target.0 - 6.0;
        let dy: f64 = target.1 - cfg.y_tx;
        let r = (dx * dx + dy * dy + cfg.height * cfg.height).sqrt();
        let expect = cfg.eta.sqrt() * (1.0 / 2f64.sqrt()) * dx.abs()
            * (1.0 + cfg.k0 * cfg.k0 * r * r).sqrt()
            / (r * r * r);
        assert!((k.norm() - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn jacobian_y_entry_cancels_for_mirror_layouts_on_axis() {
        // u_y = 0, y_tx = −y_rx, identical element coordinates on both sides:
        // the per-waveguide y-kernels are equal and opposite, so f_y = 0.
        let cfg = cfg();
        let xs = vec![1.5, 4.0, 7.25];
        let layout = TransceiverLayout::new(xs.clone(), xs);
        let fy = jacobian_entry(Axis::Y, (6.2, 0.0), &layout, &cfg).unwrap();
        let fx = jacobian_entry(Axis::X, (6.2, 0.0), &layout, &cfg).unwrap();
        assert!(fy.norm() < 1e-12 * fx.norm(), "fy {fy} fx {fx}");
    }

    #[test]
    fn jacobian_independent_of_power() {
        let mut lo = cfg();
        lo.tx_power_dbm = 0.0;
        let lo = lo.validated().unwrap();
        let mut hi = cfg();
        hi.tx_power_dbm = 40.0;
        let hi = hi.validated().unwrap();
        let layout = TransceiverLayout::new(vec![2.0, 5.0], vec![3.0, 8.0]);
        let a = jacobian_entry(Axis::X, (4.4, 1.2), &layout, &lo).unwrap();
        let b = jacobian_entry(Axis::X, (4.4, 1.2), &layout, &hi).unwrap();
        assert!((a - b).norm() < 1e-18);
    }

    #[test]
    fn pfim_diagonal() {
        let p = pfim(&TargetPrior {
            mean_x: 0.0,
            mean_y: 0.0,
            var_x: 1.0,
            var_y: 2.0,
        })
        .unwrap();
        assert_eq!(p.xx, 1.0);
        assert_eq!(p.yy, 0.5);
        assert_eq!(p.xy, 0.0);
        assert!(pfim(&TargetPrior {
            mean_x: 0.0,
            mean_y: 0.0,
            var_x: 0.0,
            var_y: 1.0
        })
        .is_err());
    }

    #[test]
    fn ofim_point_prior_limit_is_single_gramian() {
        let cfg = cfg();
        let layout = TransceiverLayout::new(vec![2.0, 6.0], vec![3.0, 7.0]);
        let prior = TargetPrior {
            mean_x: 5.0,
            mean_y: 0.4,
            var_x: 1e-16,
            var_y: 1e-16,
        };
        let rule = ghq_rule(8).unwrap();
        let f = ofim(&layout, &prior, &rule, &cfg).unwrap();
        let fx = jacobian_entry(Axis::X, (5.0, 0.4), &layout, &cfg).unwrap();
        let fy = jacobian_entry(Axis::Y, (5.0, 0.4), &layout, &cfg).unwrap();
        let s = 2.0 * cfg.tx_power_w / cfg.noise_sense_w;
        assert!((f.xx - s * fx.norm_sqr()).abs() / f.xx.abs() < 1e-6);
        assert!((f.yy - s * fy.norm_sqr()).abs() / f.yy.abs() < 1e-6);
        assert!((f.xy - s * (fx.conj() * fy).re).abs() / f.frobenius() < 1e-6);
    }

    #[test]
    fn ofim_matches_sequential_path_bitwise() {
        let cfg = cfg();
        let layout = TransceiverLayout::new(vec![1.0, 4.0, 8.0], vec![2.0, 6.5]);
        let prior = TargetPrior {
            mean_x: 5.0,
            mean_y: -0.5,
            var_x: 0.3,
            var_y: 0.8,
        };
        let rule = ghq_rule(10).unwrap();
        let a = ofim(&layout, &prior, &rule, &cfg).unwrap();
        let b = ofim_seq(&layout, &prior, &rule, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bcrb_bounded_by_prior_and_monotone_in_power() {
        let rule = ghq_rule(10).unwrap();
        for i in 0..20 {
            let cfg = cfg();
            let mut rng = realization_rng(100, i);
            let (_, prior) = sample_realization(&cfg, &mut rng);
            let layout = TransceiverLayout::new(
                vec![rng.gen_range(0.0..4.0), rng.gen_range(5.0..10.0)],
                vec![rng.gen_range(0.0..4.0), rng.gen_range(5.0..10.0)],
            );
            let b = bcrb(&layout, &prior, &rule, &cfg).unwrap();
            assert!(b.bcrb <= prior.var_x + prior.var_y + 1e-12);
            assert!(b.f_xx >= 0.0 && b.f_yy >= 0.0);

            let mut hot = cfg.clone();
            hot.tx_power_dbm += 3.0;
            let hot = hot.validated().unwrap();
            let b2 = bcrb(&layout, &prior, &rule, &hot).unwrap();
            assert!(b2.bcrb < b.bcrb);
        }
    }

    #[test]
    fn bcrb_zero_power_returns_prior_trace() {
        let mut cfg = cfg();
        cfg.tx_power_dbm = -1000.0;
        let cfg = cfg.validated().unwrap();
        let rule = ghq_rule(6).unwrap();
        let prior = TargetPrior {
            mean_x: 4.0,
            mean_y: 0.0,
            var_x: 0.5,
            var_y: 1.5,
        };
        let layout = TransceiverLayout::new(vec![3.0], vec![5.0]);
        let b = bcrb(&layout, &prior, &rule, &cfg).unwrap();
        assert!((b.bcrb - 2.0).abs() < 1e-9);
    }

    #[test]
    fn elementwise_cache_matches_full_ofim() {
        let cfg = cfg();
        let rule = ghq_rule(6).unwrap();
        let mut rng = realization_rng(200, 0);
        for trial in 0..40 {
            let n_t = rng.gen_range(1..=4usize);
            let n_r = rng.gen_range(1..=4usize);
            let spread = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
                let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for i in 1..xs.len() {
                    if xs[i] - xs[i - 1] < cfg.delta_min {
                        xs[i] = xs[i - 1] + cfg.delta_min;
                    }
                }
                xs
            };
            let layout = TransceiverLayout::new(spread(&mut rng, n_t), spread(&mut rng, n_r));
            let (_, prior) = sample_realization(&cfg, &mut rng);
            let (side, q) = if rng.gen_bool(0.5) {
                (Side::Tx, rng.gen_range(0..n_t))
            } else {
                (Side::Rx, rng.gen_range(0..n_r))
            };
            let cache = OfimElementCache::build(&layout, side, q, &prior, &rule, &cfg).unwrap();
            let x_new = rng.gen_range(0.0..10.0);
            let fast = ofim_elementwise(&cache, &layout, x_new, &cfg).unwrap();
            let mut moved = layout.clone();
            match side {
                Side::Tx => moved.tx_x[q] = x_new,
                Side::Rx => moved.rx_x[q] = x_new,
            }
            let full = ofim(&moved, &prior, &rule, &cfg).unwrap();
            let num = Mat2 {
                xx: fast.xx - full.xx,
                xy: fast.xy - full.xy,
                yy: fast.yy - full.yy,
            }
            .frobenius();
            assert!(
                num / full.frobenius() < 1e-10,
                "trial {trial}: rel {}",
                num / full.frobenius()
            );

            // Split agrees with the direct evaluation.
            let (phi, lambda, omega) = cache.split_at(x_new, &cfg).unwrap();
            let sum = phi.add(&lambda).add(&omega);
            let d = Mat2 {
                xx: sum.xx - fast.xx,
                xy: sum.xy - fast.xy,
                yy: sum.yy - fast.yy,
            };
            assert!(d.frobenius() / full.frobenius() < 1e-10);
        }
    }

    #[test]
    fn elementwise_single_tx_collapse() {
        // With one transmit element, the frozen own-side sums vanish, so the
        // constant part reduces to the pure receive contribution and the
        // moving part carries both cross terms.
        let cfg = cfg();
        let rule = ghq_rule(4).unwrap();
        let layout = TransceiverLayout::new(vec![4.0], vec![2.0, 7.0]);
        let prior = TargetPrior {
            mean_x: 5.0,
            mean_y: 0.0,
            var_x: 0.2,
            var_y: 0.2,
        };
        let cache = OfimElementCache::build(&layout, Side::Tx, 0, &prior, &rule, &cfg).unwrap();
        // C_α at every node must equal −g_own_c·S_oth − g_oth·S_own_c with
        // empty own complement = 0.
        for n in &cache.nodes {
            assert_eq!(n.c_x, Complex64::new(0.0, 0.0));
            assert_eq!(n.c_y, Complex64::new(0.0, 0.0));
        }
        assert_eq!(cache.phi, Mat2::default());
    }

    #[test]
    fn stale_cache_detected() {
        let cfg = cfg();
        let rule = ghq_rule(4).unwrap();
        let layout = TransceiverLayout::new(vec![2.0, 6.0], vec![3.0, 8.0]);
        let prior = TargetPrior {
            mean_x: 5.0,
            mean_y: 0.0,
            var_x: 0.3,
            var_y: 0.3,
        };
        let cache = OfimElementCache::build(&layout, Side::Tx, 0, &prior, &rule, &cfg).unwrap();
        let mut other = layout.clone();
        other.rx_x[1] = 8.5;
        assert!(matches!(
            ofim_elementwise(&cache, &other, 1.0, &cfg),
            Err(FisherError::StaleCache)
        ));
        // Moving only the cached element is fine.
        let mut moved = layout.clone();
        moved.tx_x[0] = 1.0;
        assert!(ofim_elementwise(&cache, &moved, 1.0, &cfg).is_ok());
    }

    #[test]
    fn ofim_psd_over_random_scenarios() {
        let cfg = cfg();
        let rule = ghq_rule(6).unwrap();
        for i in 0..200 {
            let mut rng = realization_rng(300, i);
            let (_, prior) = sample_realization(&cfg, &mut rng);
            let layout = TransceiverLayout::new(
                vec![rng.gen_range(0.0..4.9), rng.gen_range(5.0..10.0)],
                vec![rng.gen_range(0.0..4.9), rng.gen_range(5.0..10.0)],
            );
            let f = ofim(&layout, &prior, &rule, &cfg).unwrap();
            let (lo, _) = f.eigenvalues();
            assert!(lo >= -1e-9 * f.trace(), "eigenvalue {lo} trace {}", f.trace());
            assert_eq!(f.xy, f.xy); // symmetric storage by construction
        }
    }
}
