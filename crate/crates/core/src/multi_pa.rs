//! Multi-element placement algorithms: element-wise alternating optimization
//! for the sensing-centric design, an augmented-Lagrangian variant for the
//! communications-centric design, and the rate-profile Pareto scan.
//!
//! Every update is a one-dimensional search over the element's local
//! feasible grid set; a move is adopted only when it strictly improves the
//! relevant objective, so the per-design traces are monotone and the
//! incumbent survives ties (no grid-induced oscillation).

use thiserror::Error;

use crate::channel::{self, ChannelError, ElementwiseSnr};
use crate::exec;
use crate::fisher::{self, Bfim, FisherError, GhqRule, OfimElementCache, Side};
use crate::scenario::{
    validate_layout, SystemConfig, TargetPrior, TransceiverLayout, UserSet, SPACING_SLACK_M,
};
use crate::single_pa::{cc_optimal_tx, rate_profile_utility};

#[derive(Debug, Error)]
pub enum AoError {
    #[error("initial layout violates ordering/range/spacing")]
    InvalidInit,
    #[error(
        "initial layout violates the multicast constraint: min user SNR {got_db:.2} dB < required {need_db:.2} dB"
    )]
    InfeasibleStart { got_db: f64, need_db: f64 },
    #[error("cannot construct a layout: {0}")]
    LayoutConstruction(String),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Sweep-level knobs shared by the three algorithms.
#[derive(Debug, Clone, Copy)]
pub struct AoParams {
    /// Maximum number of full element sweeps.
    pub max_sweeps: usize,
    /// Relative objective-change threshold declaring convergence.
    pub rel_tol: f64,
}

impl Default for AoParams {
    fn default() -> Self {
        AoParams {
            max_sweeps: 30,
            rel_tol: 1e-3,
        }
    }
}

/// Augmented-Lagrangian knobs.  `eps_feas` defaults to 1e-3·Γ_s.
#[derive(Debug, Clone, Copy)]
pub struct AlParams {
    pub lambda0: f64,
    pub rho0: f64,
    pub beta: f64,
    pub eps_in: f64,
    pub eps_out: f64,
    pub eps_feas: f64,
    pub max_inner: usize,
    pub max_outer: usize,
}

impl AlParams {
    pub fn for_config(cfg: &SystemConfig) -> Self {
        AlParams {
            lambda0: 0.0,
            rho0: 1e-4,
            beta: 2.0,
            eps_in: 1e-3,
            eps_out: 1e-3,
            eps_feas: 1e-3 * cfg.max_bcrb,
            max_inner: 50,
            max_outer: 20,
        }
    }
}

/// Optimization trajectory: the layout plus per-accepted-update traces.
#[derive(Debug, Clone)]
pub struct AoState {
    pub layout: TransceiverLayout,
    pub bcrb_trace: Vec<f64>,
    pub rate_trace: Vec<f64>,
    /// Completed full sweeps.
    pub iteration: usize,
    pub converged: bool,
}

/// Augmented-Lagrangian trajectory state.
#[derive(Debug, Clone)]
pub struct AlState {
    pub lambda: f64,
    pub rho: f64,
    /// Final constraint violation [BCRB − Γ_s]⁺.
    pub violation: f64,
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub converged: bool,
    /// Whether the returned layout satisfies the BCRB constraint within
    /// `eps_feas`.
    pub feasible: bool,
    pub lambda_trace: Vec<f64>,
    pub rho_trace: Vec<f64>,
}

/// One recorded point of the Pareto scan.
#[derive(Debug, Clone)]
pub struct ParetoPoint {
    pub alpha: f64,
    pub layout: TransceiverLayout,
    pub rate: f64,
    pub bcrb: f64,
    pub utility: f64,
}

/// Grid candidates for element (`side`, `q`) that keep the minimum spacing
/// to both existing neighbors and preserve the element order between them.
pub fn local_feasible_set(
    side: Side,
    q: usize,
    layout: &TransceiverLayout,
    cfg: &SystemConfig,
) -> Vec<f64> {
    let xs = match side {
        Side::Tx => &layout.tx_x,
        Side::Rx => &layout.rx_x,
    };
    let lo = if q > 0 {
        xs[q - 1] + cfg.delta_min
    } else {
        0.0
    };
    let hi = if q + 1 < xs.len() {
        xs[q + 1] - cfg.delta_min
    } else {
        cfg.region_x
    };
    cfg.grid()
        .into_iter()
        .filter(|&x| x >= lo - SPACING_SLACK_M && x <= hi + SPACING_SLACK_M)
        .collect()
}

fn side_of(layout: &TransceiverLayout, side: Side) -> &[f64] {
    match side {
        Side::Tx => &layout.tx_x,
        Side::Rx => &layout.rx_x,
    }
}

fn set_element(layout: &mut TransceiverLayout, side: Side, q: usize, x: f64) {
    match side {
        Side::Tx => layout.tx_x[q] = x,
        Side::Rx => layout.rx_x[q] = x,
    }
}

/// Element-wise AO for the sensing-centric design: cyclic single-coordinate
/// grid searches minimizing the BCRB, with every transmit update restricted
/// to candidates that keep all users at or above the SNR requirement.
pub fn alg1_sensing_centric(
    init: &TransceiverLayout,
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
    params: &AoParams,
) -> Result<(AoState, Bfim), AoError> {
    if !validate_layout(init, cfg) {
        return Err(AoError::InvalidInit);
    }
    let gamma_c = cfg.gamma_c();
    let mut min_snr = f64::INFINITY;
    for &u in &users.positions {
        min_snr = min_snr.min(channel::user_snr(u, init, cfg)?);
    }
    if min_snr < gamma_c {
        return Err(AoError::InfeasibleStart {
            got_db: 10.0 * min_snr.log10(),
            need_db: cfg.min_snr_db,
        });
    }

    let mut layout = init.clone();
    let mut bcrb_cur = fisher::bcrb(&layout, prior, rule, cfg)?.bcrb;
    let mut rate_cur = channel::multicast_rate(users, &layout, cfg)?;
    let mut state = AoState {
        layout: layout.clone(),
        bcrb_trace: vec![bcrb_cur],
        rate_trace: vec![rate_cur],
        iteration: 0,
        converged: false,
    };

    for _sweep in 0..params.max_sweeps {
        let bcrb_at_sweep_start = bcrb_cur;
        for (side, count) in [(Side::Tx, layout.tx_x.len()), (Side::Rx, layout.rx_x.len())] {
            for q in 0..count {
                let cache = OfimElementCache::build(&layout, side, q, prior, rule, cfg)?;
                let snr_cache = if matches!(side, Side::Tx) {
                    Some(ElementwiseSnr::build(users, &layout.tx_x, q, cfg)?)
                } else {
                    None
                };
                let cands = local_feasible_set(side, q, &layout, cfg);
                let evals = exec::map_collect(cands.len(), |i| -> Result<(f64, bool), AoError> {
                    let x = cands[i];
                    let feasible = match &snr_cache {
                        Some(sc) => sc.min_snr(x, cfg)? >= gamma_c,
                        None => true,
                    };
                    if !feasible {
                        return Ok((f64::INFINITY, false));
                    }
                    Ok((cache.bcrb_at(x, cfg)?, true))
                });
                let mut best: Option<(f64, f64)> = None; // (x, bcrb)
                for (i, e) in evals.into_iter().enumerate() {
                    let (b, ok) = e?;
                    if ok && best.map_or(true, |(_, bb)| b < bb) {
                        best = Some((cands[i], b));
                    }
                }
                if let Some((x_new, b_new)) = best {
                    if b_new < bcrb_cur {
                        set_element(&mut layout, side, q, x_new);
                        bcrb_cur = b_new;
                        if matches!(side, Side::Tx) {
                            rate_cur = channel::multicast_rate(users, &layout, cfg)?;
                        }
                        debug_assert!(validate_layout(&layout, cfg));
                        state.bcrb_trace.push(bcrb_cur);
                        state.rate_trace.push(rate_cur);
                    }
                }
            }
        }
        state.iteration += 1;
        let change = (bcrb_at_sweep_start - bcrb_cur) / bcrb_at_sweep_start.max(1e-300);
        if change < params.rel_tol {
            state.converged = true;
            break;
        }
    }
    let bfim = fisher::bcrb(&layout, prior, rule, cfg)?;
    state.layout = layout;
    Ok((state, bfim))
}

/// Augmented-Lagrangian element-wise AO for the communications-centric
/// design: maximizes the multicast rate under a maximum-BCRB constraint via
/// multiplier and quadratic-penalty terms, with a projected multiplier
/// ascent after every inner sweep and a geometric penalty schedule.
pub fn alg2_comm_centric(
    init: &TransceiverLayout,
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
    al: &AlParams,
    params: &AoParams,
) -> Result<(AoState, AlState), AoError> {
    if !validate_layout(init, cfg) {
        return Err(AoError::InvalidInit);
    }
    let gamma_s = cfg.max_bcrb;
    let mut layout = init.clone();
    let mut lambda = al.lambda0.max(0.0);
    let mut rho = al.rho0;
    let al_objective = |rate: f64, bcrb: f64, lambda: f64, rho: f64| {
        let delta = bcrb - gamma_s;
        rate - lambda * delta - 0.5 * rho * delta.max(0.0).powi(2)
    };

    let mut bcrb_cur = fisher::bcrb(&layout, prior, rule, cfg)?.bcrb;
    let mut rate_cur = channel::multicast_rate(users, &layout, cfg)?;
    let mut state = AoState {
        layout: layout.clone(),
        bcrb_trace: vec![bcrb_cur],
        rate_trace: vec![rate_cur],
        iteration: 0,
        converged: false,
    };
    let mut al_state = AlState {
        lambda,
        rho,
        violation: (bcrb_cur - gamma_s).max(0.0),
        outer_iter: 0,
        inner_iter: 0,
        converged: false,
        feasible: false,
        lambda_trace: vec![lambda],
        rho_trace: vec![rho],
    };
    let mut best_feasible: Option<(f64, TransceiverLayout, f64)> = None; // (rate, layout, bcrb)
    let track_feasible =
        |rate: f64, bcrb: f64, layout: &TransceiverLayout, best: &mut Option<(f64, TransceiverLayout, f64)>| {
            if (bcrb - gamma_s).max(0.0) <= al.eps_feas
                && best.as_ref().map_or(true, |(r, _, _)| rate > *r)
            {
                *best = Some((rate, layout.clone(), bcrb));
            }
        };
    track_feasible(rate_cur, bcrb_cur, &layout, &mut best_feasible);

    let mut converged = false;
    'outer: for outer in 0..al.max_outer {
        al_state.outer_iter = outer + 1;
        let rate_at_outer_start = rate_cur;
        let mut obj_prev = al_objective(rate_cur, bcrb_cur, lambda, rho);
        for _inner in 0..al.max_inner {
            al_state.inner_iter += 1;
            // One full element sweep on the AL objective.
            for (side, count) in [(Side::Tx, layout.tx_x.len()), (Side::Rx, layout.rx_x.len())] {
                for q in 0..count {
                    let cache = OfimElementCache::build(&layout, side, q, prior, rule, cfg)?;
                    let snr_cache = if matches!(side, Side::Tx) {
                        Some(ElementwiseSnr::build(users, &layout.tx_x, q, cfg)?)
                    } else {
                        None
                    };
                    let cands = local_feasible_set(side, q, &layout, cfg);
                    let cur_x = side_of(&layout, side)[q];
                    let score = |x: f64| -> Result<(f64, f64, f64), AoError> {
                        let b = cache.bcrb_at(x, cfg)?;
                        let r = match &snr_cache {
                            Some(sc) => (1.0 + sc.min_snr(x, cfg)?).log2(),
                            None => rate_cur,
                        };
                        Ok((al_objective(r, b, lambda, rho), r, b))
                    };
                    let incumbent = score(cur_x)?;
                    let evals =
                        exec::map_collect(cands.len(), |i| -> Result<(f64, f64, f64), AoError> {
                            score(cands[i])
                        });
                    let mut best: Option<(f64, (f64, f64, f64))> = None;
                    for (i, e) in evals.into_iter().enumerate() {
                        let v = e?;
                        if best.as_ref().map_or(true, |(_, bv)| v.0 > bv.0) {
                            best = Some((cands[i], v));
                        }
                    }
                    if let Some((x_new, v)) = best {
                        if v.0 > incumbent.0 {
                            set_element(&mut layout, side, q, x_new);
                            rate_cur = v.1;
                            bcrb_cur = v.2;
                            debug_assert!(validate_layout(&layout, cfg));
                            state.bcrb_trace.push(bcrb_cur);
                            state.rate_trace.push(rate_cur);
                            track_feasible(rate_cur, bcrb_cur, &layout, &mut best_feasible);
                        }
                    }
                }
            }
            state.iteration += 1;
            // Projected multiplier ascent (per the algorithm listing, the
            // multiplier moves after every inner sweep).
            lambda = (lambda + rho * (bcrb_cur - gamma_s)).max(0.0);
            al_state.lambda_trace.push(lambda);
            let obj_now = al_objective(rate_cur, bcrb_cur, lambda, rho);
            let done = (obj_now - obj_prev).abs() <= al.eps_in * obj_prev.abs().max(1.0);
            obj_prev = obj_now;
            if done {
                break;
            }
            if state.iteration >= params.max_sweeps * al.max_outer {
                break 'outer;
            }
        }
        let violation = (bcrb_cur - gamma_s).max(0.0);
        if violation > al.eps_feas {
            rho *= al.beta;
        }
        al_state.rho_trace.push(rho);
        al_state.violation = violation;
        if (rate_cur - rate_at_outer_start).abs() <= al.eps_out * rate_at_outer_start.abs().max(1.0)
            && violation <= al.eps_feas
        {
            converged = true;
            break;
        }
    }

    al_state.lambda = lambda;
    al_state.rho = rho;
    al_state.converged = converged;
    let final_violation = (bcrb_cur - gamma_s).max(0.0);
    if final_violation > al.eps_feas {
        if let Some((rate, best_layout, bcrb)) = best_feasible {
            log::warn!(
                "augmented-Lagrangian run ended infeasible (violation {final_violation:.3e}); \
                 returning best feasible iterate"
            );
            layout = best_layout;
            rate_cur = rate;
            bcrb_cur = bcrb;
            al_state.feasible = true;
        } else {
            al_state.feasible = false;
        }
        al_state.violation = (bcrb_cur - gamma_s).max(0.0);
    } else {
        al_state.feasible = true;
        al_state.violation = final_violation;
    }
    state.layout = layout;
    state.converged = converged;
    state.bcrb_trace.push(bcrb_cur);
    state.rate_trace.push(rate_cur);
    Ok((state, al_state))
}

/// Rate-profile Pareto point for one α: cyclic sweeps where transmit
/// elements maximize the profile utility and receive elements minimize the
/// BCRB, accepting only utility-non-decreasing moves.
pub fn alg3_single_alpha(
    alpha: f64,
    init: &TransceiverLayout,
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
    params: &AoParams,
) -> Result<(ParetoPoint, AoState), AoError> {
    if !validate_layout(init, cfg) {
        return Err(AoError::InvalidInit);
    }
    let mut layout = init.clone();
    let mut bcrb_cur = fisher::bcrb(&layout, prior, rule, cfg)?.bcrb;
    let mut rate_cur = channel::multicast_rate(users, &layout, cfg)?;
    let utility = |rate: f64, bcrb: f64| rate_profile_utility(alpha, rate, 1.0 / bcrb);
    let mut util_cur = utility(rate_cur, bcrb_cur);
    let mut state = AoState {
        layout: layout.clone(),
        bcrb_trace: vec![bcrb_cur],
        rate_trace: vec![rate_cur],
        iteration: 0,
        converged: false,
    };

    for _sweep in 0..params.max_sweeps {
        let util_at_start = util_cur;
        for (side, count) in [(Side::Tx, layout.tx_x.len()), (Side::Rx, layout.rx_x.len())] {
            for q in 0..count {
                let cache = OfimElementCache::build(&layout, side, q, prior, rule, cfg)?;
                let snr_cache = if matches!(side, Side::Tx) {
                    Some(ElementwiseSnr::build(users, &layout.tx_x, q, cfg)?)
                } else {
                    None
                };
                let cands = local_feasible_set(side, q, &layout, cfg);
                let evals =
                    exec::map_collect(cands.len(), |i| -> Result<(f64, f64), AoError> {
                        let x = cands[i];
                        let b = cache.bcrb_at(x, cfg)?;
                        let r = match &snr_cache {
                            Some(sc) => (1.0 + sc.min_snr(x, cfg)?).log2(),
                            None => rate_cur,
                        };
                        Ok((r, b))
                    });
                match side {
                    Side::Tx => {
                        let mut best: Option<(f64, f64, f64, f64)> = None; // (util, x, rate, bcrb)
                        for (i, e) in evals.into_iter().enumerate() {
                            let (r, b) = e?;
                            let u = utility(r, b);
                            if best.map_or(true, |(bu, ..)| u > bu) {
                                best = Some((u, cands[i], r, b));
                            }
                        }
                        if let Some((u, x_new, r, b)) = best {
                            if u > util_cur {
                                set_element(&mut layout, side, q, x_new);
                                util_cur = u;
                                rate_cur = r;
                                bcrb_cur = b;
                                state.bcrb_trace.push(bcrb_cur);
                                state.rate_trace.push(rate_cur);
                            }
                        }
                    }
                    Side::Rx => {
                        let mut best: Option<(f64, f64)> = None; // (bcrb, x)
                        for (i, e) in evals.into_iter().enumerate() {
                            let (_, b) = e?;
                            if best.map_or(true, |(bb, _)| b < bb) {
                                best = Some((b, cands[i]));
                            }
                        }
                        if let Some((b_new, x_new)) = best {
                            if b_new < bcrb_cur {
                                set_element(&mut layout, side, q, x_new);
                                bcrb_cur = b_new;
                                util_cur = utility(rate_cur, bcrb_cur);
                                state.bcrb_trace.push(bcrb_cur);
                                state.rate_trace.push(rate_cur);
                            }
                        }
                    }
                }
            }
        }
        state.iteration += 1;
        let change = (util_cur - util_at_start) / util_at_start.abs().max(1e-300);
        if change < params.rel_tol {
            state.converged = true;
            break;
        }
    }
    state.layout = layout.clone();
    let point = ParetoPoint {
        alpha,
        layout,
        rate: rate_cur,
        bcrb: bcrb_cur,
        utility: util_cur,
    };
    Ok((point, state))
}

/// Pareto scan over a profile grid; every α starts from the same initial
/// layout and is recorded as one `(BCRB, rate)` point.
pub fn alg3_pareto_scan(
    alphas: &[f64],
    init: &TransceiverLayout,
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
    params: &AoParams,
) -> Result<Vec<ParetoPoint>, AoError> {
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let (point, _) = alg3_single_alpha(alpha, init, users, prior, rule, cfg, params)?;
        points.push(point);
    }
    Ok(points)
}

/// Snaps positions onto the placement grid, pushing collided elements apart
/// by whole grid steps while keeping the minimum spacing.
fn snap_to_grid(positions: &[f64], cfg: &SystemConfig) -> Result<Vec<f64>, AoError> {
    let l = cfg.grid_points;
    let step = cfg.region_x / (l - 1) as f64;
    let sep = ((cfg.delta_min - SPACING_SLACK_M) / step).ceil().max(1.0) as i64;
    let mut idx: Vec<i64> = positions
        .iter()
        .map(|&x| (x / step).round() as i64)
        .collect();
    for i in 1..idx.len() {
        if idx[i] < idx[i - 1] + sep {
            idx[i] = idx[i - 1] + sep;
        }
    }
    // Pull back anything pushed past the end of the grid.
    let max_idx = (l - 1) as i64;
    for i in (0..idx.len()).rev() {
        let limit = max_idx - sep * (idx.len() - 1 - i) as i64;
        if idx[i] > limit {
            idx[i] = limit;
        }
        if i > 0 && idx[i - 1] > idx[i] - sep {
            idx[i - 1] = idx[i] - sep;
        }
    }
    if idx.first().copied().unwrap_or(0) < 0 {
        return Err(AoError::LayoutConstruction(format!(
            "{} elements do not fit on a {l}-point grid at the required spacing",
            positions.len()
        )));
    }
    Ok(idx.into_iter().map(|i| i as f64 * step).collect())
}

/// Default initial layout: elements spread evenly over the waveguide
/// interior at positions (i+1)·D_x/(N+1), snapped to the placement grid.
pub fn default_layout(cfg: &SystemConfig) -> Result<TransceiverLayout, AoError> {
    let spread = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| (i + 1) as f64 * cfg.region_x / (n + 1) as f64)
            .collect()
    };
    let layout = TransceiverLayout::new(
        snap_to_grid(&spread(cfg.n_tx), cfg)?,
        snap_to_grid(&spread(cfg.n_rx), cfg)?,
    );
    if !validate_layout(&layout, cfg) {
        return Err(AoError::LayoutConstruction(
            "default layout failed validation".into(),
        ));
    }
    Ok(layout)
}

/// Warm-start layout for infeasible starts: transmit elements packed around
/// the communications-centric single-element optimum at minimum spacing,
/// receive elements on the default spread.
pub fn warm_start_layout(
    users: &UserSet,
    cfg: &SystemConfig,
) -> Result<TransceiverLayout, AoError> {
    let (x_star, _) = cc_optimal_tx(users, cfg)?;
    let n = cfg.n_tx;
    let span = (n as f64 - 1.0) * cfg.delta_min;
    let start = (x_star - span / 2.0).clamp(0.0, cfg.region_x - span);
    let tx: Vec<f64> = (0..n).map(|i| start + i as f64 * cfg.delta_min).collect();
    let layout = TransceiverLayout::new(snap_to_grid(&tx, cfg)?, default_layout(cfg)?.rx_x);
    if !validate_layout(&layout, cfg) {
        return Err(AoError::LayoutConstruction(
            "warm-start layout failed validation".into(),
        ));
    }
    Ok(layout)
}
