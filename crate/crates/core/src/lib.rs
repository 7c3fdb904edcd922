//! Placement optimization for pinching-antenna integrated sensing and
//! multicast communication.
//!
//! The crate models two parallel dielectric waveguides whose radiating
//! elements can be repositioned along the x-axis.  It evaluates the max-min
//! multicast rate toward a set of ground users and a Bayesian Cramér-Rao
//! bound on planar target localization (prior-averaged by Gauss-Hermite
//! quadrature), and optimizes element placement under three criteria:
//! communications-centric, sensing-centric, and rate-profile Pareto.
//!
//! Module map:
//! - [`scenario`]: parameters, sampling, layout validity;
//! - [`channel`]: propagation, SNR, multicast rate, element-wise SNR split;
//! - [`fisher`]: GHQ rule, Fisher matrices, BCRB, element-wise OFIM cache;
//! - [`single_pa`]: closed-form single-element designs;
//! - [`multi_pa`]: the three element-wise AO placement algorithms;
//! - [`baselines`]: random/centered layouts and fixed arrays;
//! - [`oracles`]: independent brute-force references;
//! - [`harness`]: seeded sweeps, CSV/JSON emission, verification runs.
//!
//! With the default `parallel` feature the data-parallel inner loops
//! (quadrature nodes, grid candidates, Monte-Carlo samples, realizations)
//! run on rayon; disabling it yields a dependency-light sequential build
//! with bit-identical results.

pub mod baselines;
pub mod channel;
mod exec;
pub mod fisher;
pub mod harness;
pub mod multi_pa;
pub mod oracles;
pub mod scenario;
pub mod single_pa;
