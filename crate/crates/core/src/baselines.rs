//! Comparison schemes: random and centered pinching layouts, and fixed
//! uniform linear arrays with analog or digital beamforming.
//!
//! All four are measured by the same rate and BCRB code as the optimized
//! designs — the arrays enter through the weighted channel/Fisher paths with
//! their beamforming weights in place of the in-waveguide coefficients.

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::channel::{self, freespace_gain};
use crate::fisher::{self, FisherError, GhqRule};
use crate::scenario::{SystemConfig, TargetPrior, TransceiverLayout, UserSet};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("{n} elements at minimum spacing do not fit in {span:.3} m")]
    DoesNotFit { n: usize, span: f64 },
}

/// Fixed uniform linear array anchored at the waveguide feed.
#[derive(Debug, Clone, Copy)]
pub struct UlaConfig {
    pub n_elements: usize,
    pub origin_x: f64,
    pub spacing: f64,
}

impl UlaConfig {
    /// The benchmark array: `n` elements from the feed at λ/2 spacing.
    pub fn from_cfg(cfg: &SystemConfig, n_elements: usize) -> Self {
        UlaConfig {
            n_elements,
            origin_x: 0.0,
            spacing: cfg.delta_min,
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_elements)
            .map(|i| self.origin_x + i as f64 * self.spacing)
            .collect()
    }
}

fn fits(n: usize, cfg: &SystemConfig) -> Result<(), LayoutError> {
    let span = (n as f64 - 1.0) * cfg.delta_min;
    if span > cfg.region_x {
        return Err(LayoutError::DoesNotFit {
            n,
            span: cfg.region_x,
        });
    }
    Ok(())
}

fn random_side(n: usize, cfg: &SystemConfig, rng: &mut impl Rng) -> Result<Vec<f64>, LayoutError> {
    fits(n, cfg)?;
    // Sorted uniforms on the spacing-shrunk interval plus deterministic
    // offsets: rejection-free and exactly spacing-feasible.
    let free = cfg.region_x - (n as f64 - 1.0) * cfg.delta_min;
    let mut us: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=free)).collect();
    us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(us
        .into_iter()
        .enumerate()
        .map(|(i, u)| u + i as f64 * cfg.delta_min)
        .collect())
}

/// Random pinching layout: both sides drawn under the minimum-spacing
/// constraint.
pub fn random_layout(
    cfg: &SystemConfig,
    rng: &mut impl Rng,
) -> Result<TransceiverLayout, LayoutError> {
    let tx = random_side(cfg.n_tx, cfg, rng)?;
    let rx = random_side(cfg.n_rx, cfg, rng)?;
    Ok(TransceiverLayout::new(tx, rx))
}

fn centered_side(n: usize, cfg: &SystemConfig) -> Result<Vec<f64>, LayoutError> {
    fits(n, cfg)?;
    let mid = cfg.region_x / 2.0;
    Ok((0..n)
        .map(|i| mid + (i as f64 - (n as f64 - 1.0) / 2.0) * cfg.delta_min)
        .collect())
}

/// Contiguous minimum-spacing block at the waveguide center.
pub fn centered_layout(cfg: &SystemConfig) -> Result<TransceiverLayout, LayoutError> {
    Ok(TransceiverLayout::new(
        centered_side(cfg.n_tx, cfg)?,
        centered_side(cfg.n_rx, cfg)?,
    ))
}

/// Rate and BCRB of a pinching layout under the shared metric code.
pub fn eval_pass_layout(
    layout: &TransceiverLayout,
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<(f64, f64), FisherError> {
    let rate = channel::multicast_rate(users, layout, cfg)?;
    let bcrb = fisher::bcrb(layout, prior, rule, cfg)?.bcrb;
    Ok((rate, bcrb))
}

/// A fixed-array baseline evaluation: the achieved multicast rate under the
/// communication weights and the BCRB under the sensing weights.
#[derive(Debug, Clone)]
pub struct UlaEval {
    pub rate: f64,
    pub bcrb: f64,
    pub comm_weights: Vec<Complex64>,
    pub sense_tx_weights: Vec<Complex64>,
    pub sense_rx_weights: Vec<Complex64>,
    /// Min-SNR value after each accepted ascent step (non-decreasing).
    pub ascent_trace: Vec<f64>,
}

fn user_channels(
    users: &UserSet,
    xs: &[f64],
    y: f64,
    cfg: &SystemConfig,
) -> Result<Vec<Vec<Complex64>>, FisherError> {
    users
        .positions
        .iter()
        .map(|&(ux, uy)| {
            xs.iter()
                .map(|&x| Ok(freespace_gain([ux, uy, 0.0], x, y, cfg)?))
                .collect()
        })
        .collect()
}

fn min_snr(weights: &[Complex64], hs: &[Vec<Complex64>], cfg: &SystemConfig) -> f64 {
    let norm2: f64 = weights.iter().map(|w| w.norm_sqr()).sum();
    let mut min = f64::INFINITY;
    for h in hs {
        let g: Complex64 = h.iter().zip(weights).map(|(a, b)| a * b).sum();
        let snr = cfg.tx_power_w * g.norm_sqr() / (cfg.noise_user_w * norm2);
        if snr < min {
            min = snr;
        }
    }
    min
}

/// Dominant eigenvector of Σ_k h_k*h_kᵀ/σ² by power iteration.
fn dominant_direction(hs: &[Vec<Complex64>]) -> Vec<Complex64> {
    let n = hs[0].len();
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + (i as f64) * 1e-3, 0.0))
        .collect();
    for _ in 0..200 {
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        for h in hs {
            // h* (hᵀ v)
            let inner: Complex64 = h.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (nx, hh) in next.iter_mut().zip(h) {
                *nx += hh.conj() * inner;
            }
        }
        let norm = next.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        for x in &mut next {
            *x /= norm;
        }
        v = next;
    }
    v
}

fn normalize(w: &mut [Complex64]) {
    let n = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in w {
            *x /= n;
        }
    }
}

/// Steering conjugate toward the prior-mean target, unit-modulus per element.
fn matched_phases(xs: &[f64], y: f64, prior: &TargetPrior, cfg: &SystemConfig) -> Vec<Complex64> {
    let amp = (1.0 / xs.len() as f64).sqrt();
    xs.iter()
        .map(|&x| {
            let h = freespace_gain([prior.mean_x, prior.mean_y, 0.0], x, y, cfg)
                .expect("targets sit below the array plane");
            amp * Complex64::cis(-h.arg())
        })
        .collect()
}

/// Matched filter toward the prior-mean target (full digital freedom).
fn matched_full(xs: &[f64], y: f64, prior: &TargetPrior, cfg: &SystemConfig) -> Vec<Complex64> {
    let mut w: Vec<Complex64> = xs
        .iter()
        .map(|&x| {
            freespace_gain([prior.mean_x, prior.mean_y, 0.0], x, y, cfg)
                .expect("targets sit below the array plane")
                .conj()
        })
        .collect();
    normalize(&mut w);
    w
}

const PHASE_GRID: usize = 64;
const MAX_ASCENT_SWEEPS: usize = 50;

/// Coordinate ascent on min-user SNR over per-element phases (unit modulus).
fn analog_ascent(
    init_phases: Vec<f64>,
    hs: &[Vec<Complex64>],
    cfg: &SystemConfig,
) -> (Vec<Complex64>, Vec<f64>) {
    let n = init_phases.len();
    let amp = (1.0 / n as f64).sqrt();
    let build = |phases: &[f64]| -> Vec<Complex64> {
        phases.iter().map(|&p| amp * Complex64::cis(p)).collect()
    };
    let mut phases = init_phases;
    let mut cur = min_snr(&build(&phases), hs, cfg);
    let mut trace = vec![cur];
    for _ in 0..MAX_ASCENT_SWEEPS {
        let mut improved = false;
        for i in 0..n {
            let mut best = (phases[i], cur);
            for k in 0..PHASE_GRID {
                let cand = 2.0 * std::f64::consts::PI * k as f64 / PHASE_GRID as f64;
                let mut trial = phases.clone();
                trial[i] = cand;
                let v = min_snr(&build(&trial), hs, cfg);
                if v > best.1 {
                    best = (cand, v);
                }
            }
            if best.1 > cur {
                phases[i] = best.0;
                cur = best.1;
                trace.push(cur);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (build(&phases), trace)
}

/// Coordinate ascent on min-user SNR over unconstrained complex weights.
fn digital_ascent(
    mut w: Vec<Complex64>,
    hs: &[Vec<Complex64>],
    cfg: &SystemConfig,
) -> (Vec<Complex64>, Vec<f64>) {
    normalize(&mut w);
    let n = w.len();
    let mut cur = min_snr(&w, hs, cfg);
    let mut trace = vec![cur];
    let rms = (1.0 / n as f64).sqrt();
    for _ in 0..MAX_ASCENT_SWEEPS {
        let mut improved = false;
        for i in 0..n {
            let mut best = (w[i], cur);
            for k in 0..16 {
                let phase = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
                for mag in [0.0, 0.25, 0.5, 1.0, 2.0] {
                    let cand = mag * rms * Complex64::cis(phase);
                    let mut trial = w.clone();
                    trial[i] = cand;
                    let v = min_snr(&trial, hs, cfg);
                    if v > best.1 {
                        best = (cand, v);
                    }
                }
            }
            if best.1 > cur {
                w[i] = best.0;
                cur = best.1;
                trace.push(cur);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    normalize(&mut w);
    (w, trace)
}

fn ula_sensing_bcrb(
    ula: &UlaConfig,
    tx_w: &[Complex64],
    rx_w: &[Complex64],
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
) -> Result<f64, FisherError> {
    let xs = ula.positions();
    Ok(fisher::bcrb_weighted(&xs, tx_w, &xs, rx_w, prior, rule, cfg)?.bcrb)
}

/// Fixed array with per-element constant-modulus weights: multicast phases
/// by coordinate ascent from the dominant-direction initialization, sensing
/// phases conjugate-matched to the prior-mean steering.
pub fn ula_analog_bf(
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
    ula: &UlaConfig,
) -> Result<UlaEval, FisherError> {
    let xs = ula.positions();
    let hs = user_channels(users, &xs, cfg.y_tx, cfg)?;
    let init = dominant_direction(&hs);
    let (w, trace) = analog_ascent(init.iter().map(|c| c.arg()).collect(), &hs, cfg);
    let rate = (1.0 + min_snr(&w, &hs, cfg)).log2();
    let tx_s = matched_phases(&xs, cfg.y_tx, prior, cfg);
    let rx_s = matched_phases(&xs, cfg.y_rx, prior, cfg);
    let bcrb = ula_sensing_bcrb(ula, &tx_s, &rx_s, prior, rule, cfg)?;
    Ok(UlaEval {
        rate,
        bcrb,
        comm_weights: w,
        sense_tx_weights: tx_s,
        sense_rx_weights: rx_s,
        ascent_trace: trace,
    })
}

/// Fixed array with fully digital weights: multicast weights by min-SNR
/// coordinate ascent from the dominant-direction initialization (never worse
/// than the analog solution, which is a member of its search space), sensing
/// by matched transmit/receive filters toward the prior mean.
pub fn ula_digital_bf(
    users: &UserSet,
    prior: &TargetPrior,
    rule: &GhqRule,
    cfg: &SystemConfig,
    ula: &UlaConfig,
) -> Result<UlaEval, FisherError> {
    let xs = ula.positions();
    let hs = user_channels(users, &xs, cfg.y_tx, cfg)?;
    let (w_eig, mut trace) = digital_ascent(dominant_direction(&hs), &hs, cfg);
    // The analog output is a feasible digital weight vector; keep whichever
    // scores better so the digital baseline dominates by construction.
    let analog = ula_analog_bf(users, prior, rule, cfg, ula)?;
    let v_eig = min_snr(&w_eig, &hs, cfg);
    let v_analog = min_snr(&analog.comm_weights, &hs, cfg);
    let (w, v) = if v_analog > v_eig {
        trace.push(v_analog);
        (analog.comm_weights.clone(), v_analog)
    } else {
        (w_eig, v_eig)
    };
    let rate = (1.0 + v).log2();
    let tx_s = matched_full(&xs, cfg.y_tx, prior, cfg);
    let rx_s = matched_full(&xs, cfg.y_rx, prior, cfg);
    let bcrb = ula_sensing_bcrb(ula, &tx_s, &rx_s, prior, rule, cfg)?;
    Ok(UlaEval {
        rate,
        bcrb,
        comm_weights: w,
        sense_tx_weights: tx_s,
        sense_rx_weights: rx_s,
        ascent_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::ghq_rule;
    use crate::scenario::{realization_rng, sample_realization, validate_layout, SystemConfig};

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn random_layout_valid_and_seeded() {
        let cfg = cfg();
        for i in 0..50 {
            let l = random_layout(&cfg, &mut realization_rng(600, i)).unwrap();
            assert!(validate_layout(&l, &cfg));
        }
        let a = random_layout(&cfg, &mut realization_rng(600, 7)).unwrap();
        let b = random_layout(&cfg, &mut realization_rng(600, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_layout_order_statistics() {
        let cfg = cfg();
        let mut first = 0.0;
        let mut last = 0.0;
        let n = 500;
        for i in 0..n {
            let l = random_layout(&cfg, &mut realization_rng(601, i)).unwrap();
            first += l.tx_x[0];
            last += *l.tx_x.last().unwrap();
        }
        assert!(first / (n as f64) < last / (n as f64));
    }

    #[test]
    fn random_layout_single_element_uniform_support() {
        let mut cfg = cfg();
        cfg.n_tx = 1;
        cfg.n_rx = 1;
        let cfg = cfg.validated().unwrap();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for i in 0..2000 {
            let l = random_layout(&cfg, &mut realization_rng(602, i)).unwrap();
            min = min.min(l.tx_x[0]);
            max = max.max(l.tx_x[0]);
        }
        assert!(min < 0.05 * cfg.region_x && max > 0.95 * cfg.region_x);
    }

    #[test]
    fn centered_layout_geometry() {
        let mut cfg = cfg();
        cfg.n_tx = 2;
        cfg.n_rx = 1;
        let cfg = cfg.validated().unwrap();
        let l = centered_layout(&cfg).unwrap();
        assert!((l.tx_x[0] - (5.0 - cfg.delta_min / 2.0)).abs() < 1e-12);
        assert!((l.tx_x[1] - (5.0 + cfg.delta_min / 2.0)).abs() < 1e-12);
        assert_eq!(l.rx_x, vec![5.0]);
        assert!(validate_layout(&l, &cfg));
        let span = l.tx_x.last().unwrap() - l.tx_x[0];
        assert!((span - cfg.delta_min).abs() < 1e-12);
    }

    #[test]
    fn does_not_fit_detected() {
        let mut cfg = cfg();
        cfg.region_x = 0.02;
        cfg.grid_points = 10;
        let cfg = cfg.validated().unwrap();
        // 4 elements need 3·λ/2 ≈ 0.016 m, fits; 8 would not.
        assert!(centered_layout(&cfg).is_ok());
        let err = random_side(8, &cfg, &mut realization_rng(0, 0)).unwrap_err();
        assert!(matches!(err, LayoutError::DoesNotFit { .. }));
    }

    #[test]
    fn digital_single_user_is_matched_filter() {
        let cfg = cfg();
        let rule = ghq_rule(6).unwrap();
        let users = UserSet {
            positions: vec![(4.0, 1.5)],
        };
        let prior = TargetPrior {
            mean_x: 6.0,
            mean_y: 0.0,
            var_x: 0.5,
            var_y: 0.5,
        };
        let ula = UlaConfig::from_cfg(&cfg, 6);
        let eval = ula_digital_bf(&users, &prior, &rule, &cfg, &ula).unwrap();
        let xs = ula.positions();
        let h: Vec<Complex64> = xs
            .iter()
            .map(|&x| freespace_gain([4.0, 1.5, 0.0], x, cfg.y_tx, &cfg).unwrap())
            .collect();
        let h2: f64 = h.iter().map(|c| c.norm_sqr()).sum();
        let expect = (1.0 + cfg.tx_power_w * h2 / cfg.noise_user_w).log2();
        assert!(
            (eval.rate - expect).abs() / expect < 1e-9,
            "rate {} expected {expect}",
            eval.rate
        );
    }

    #[test]
    fn digital_dominates_analog_and_traces_ascend() {
        let cfg = cfg();
        let rule = ghq_rule(6).unwrap();
        for i in 0..10 {
            let mut rng = realization_rng(603, i);
            let (users, prior) = sample_realization(&cfg, &mut rng);
            let ula = UlaConfig::from_cfg(&cfg, 6);
            let analog = ula_analog_bf(&users, &prior, &rule, &cfg, &ula).unwrap();
            let digital = ula_digital_bf(&users, &prior, &rule, &cfg, &ula).unwrap();
            assert!(digital.rate >= analog.rate - 1e-12, "seed {i}");
            for w in analog.ascent_trace.windows(2) {
                assert!(w[1] >= w[0]);
            }
            // Constant modulus after normalization.
            let n = analog.comm_weights.len() as f64;
            let norm2: f64 = analog.comm_weights.iter().map(|w| w.norm_sqr()).sum();
            assert!((norm2 - 1.0).abs() < 1e-9);
            for w in &analog.comm_weights {
                assert!((w.norm() - (1.0 / n).sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn analog_single_user_within_taper_gap_of_digital() {
        let cfg = cfg();
        let rule = ghq_rule(6).unwrap();
        let users = UserSet {
            positions: vec![(7.0, -2.0)],
        };
        let prior = TargetPrior {
            mean_x: 3.0,
            mean_y: 0.0,
            var_x: 0.5,
            var_y: 0.5,
        };
        let ula = UlaConfig::from_cfg(&cfg, 6);
        let analog = ula_analog_bf(&users, &prior, &rule, &cfg, &ula).unwrap();
        let digital = ula_digital_bf(&users, &prior, &rule, &cfg, &ula).unwrap();
        // Analytic taper bound: phases aligned, equal amplitudes.
        let xs = ula.positions();
        let h: Vec<f64> = xs
            .iter()
            .map(|&x| {
                freespace_gain([7.0, -2.0, 0.0], x, cfg.y_tx, &cfg)
                    .unwrap()
                    .norm()
            })
            .collect();
        let taper = (1.0
            + cfg.tx_power_w * h.iter().sum::<f64>().powi(2)
                / (xs.len() as f64 * cfg.noise_user_w))
            .log2();
        assert!(analog.rate >= taper - 1e-9);
        assert!(analog.rate <= digital.rate + 1e-12);
    }

    #[test]
    fn ula_bcrb_monotone_in_power() {
        let rule = ghq_rule(6).unwrap();
        let users = UserSet {
            positions: vec![(4.0, 1.0), (8.0, -1.0)],
        };
        let prior = TargetPrior {
            mean_x: 5.0,
            mean_y: 0.5,
            var_x: 0.4,
            var_y: 0.9,
        };
        let mut prev = f64::INFINITY;
        for p in [20.0, 25.0, 30.0, 35.0] {
            let mut cfg = cfg();
            cfg.tx_power_dbm = p;
            let cfg = cfg.validated().unwrap();
            let ula = UlaConfig::from_cfg(&cfg, 6);
            let eval = ula_digital_bf(&users, &prior, &rule, &cfg, &ula).unwrap();
            assert!(eval.bcrb < prev);
            prev = eval.bcrb;
        }
    }
}
