//! Nested alternating design of `(F_1, F_2, G)` and the baseline schemes.
//!
//! One outer sweep computes `F_1` against `R_Z1` for the current relay
//! matrix, then `F_2` against `R_Z2` (which contains the new `F_1`), then a
//! new `G` from the relay solver. Sweeps repeat until the objective settles.
//! The loop starts from the naive design (isotropic sources, scaled-identity
//! relay) and always returns the best design seen, including that start.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::metrics::{self, sic_context, Evaluation};
use crate::model::{effective_model, ChannelSet, Mode, NetworkConfig, Source};
use crate::precoder::{source_precoder, whitened_gram, Policy};
use crate::relay::{relay_geometry, solve_relay, true_power};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Joint design accounting for the direct links.
    Jds,
    /// Isotropic sources with a power-controlled scaled-identity relay.
    Nas,
    /// Joint design on the channels with direct links removed, evaluated with them.
    Sos,
    /// The SOS design evaluated without the direct links.
    Nod,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Jds, Scheme::Nas, Scheme::Sos, Scheme::Nod];

    /// Whether the scheme's performance counts the direct links.
    pub fn evaluates_direct_links(self) -> bool {
        self != Scheme::Nod
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Jds => "jds",
            Scheme::Nas => "nas",
            Scheme::Sos => "sos",
            Scheme::Nod => "nod",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jds" => Ok(Scheme::Jds),
            "nas" => Ok(Scheme::Nas),
            "sos" => Ok(Scheme::Sos),
            "nod" => Ok(Scheme::Nod),
            other => Err(Error::InvalidConfig(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub f1: CMat,
    pub f2: CMat,
    pub g: CMat,
    pub scheme: Scheme,
    pub mode: Mode,
    /// Objective after each outer sweep, on the channels the design was computed for.
    pub objective_trace: Vec<f64>,
    /// Objective of the naive starting point.
    pub initial_objective: f64,
    /// Objective of the returned (best) design.
    pub objective: f64,
    pub outer_iters: usize,
    /// Relative objective change fell below `outer_tol`.
    pub converged: bool,
    /// A sweep worsened the objective and the loop stopped on the best design.
    pub stopped_on_worsening: bool,
    /// Sweeps whose objective was worse than the preceding one.
    pub non_monotone_sweeps: usize,
    /// Every inner-loop `α` over all sweeps.
    pub alpha_iterates: Vec<f64>,
    /// `α` of the relay solve that produced `g` (0 for the naive relay).
    pub alpha_final: f64,
    /// Modified-minus-exact relay power of the relay solve that produced `g`.
    pub power_residual: f64,
    /// Relay solves whose inner loop hit its iteration cap.
    pub inner_maxed_out: usize,
}

impl Design {
    /// The outer loop stopped before `outer_max_iters` through either exit.
    pub fn terminated_early(&self) -> bool {
        self.converged || self.stopped_on_worsening
    }

    pub fn source_powers(&self) -> (f64, f64) {
        (
            linalg::trace_re(&(&self.f1 * self.f1.adjoint())),
            linalg::trace_re(&(&self.f2 * self.f2.adjoint())),
        )
    }

    /// Exact relay power `tr{G (I + Σ H_ri F_i F_i† H_ri†) G†}`.
    pub fn relay_power(&self, channels: &ChannelSet) -> f64 {
        let geo = relay_geometry(channels, &self.f1, &self.f2);
        true_power(&geo, &self.g)
    }

    /// Largest ratio of used power to budget over the three nodes (0 budgets count as 1
    /// only when unused).
    pub fn worst_power_ratio(&self, channels: &ChannelSet, config: &NetworkConfig) -> f64 {
        let (q1, q2) = self.source_powers();
        let ratio = |used: f64, budget: f64| {
            if budget > 0.0 {
                used / budget
            } else if used > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        ratio(q1, config.p1)
            .max(ratio(q2, config.p2))
            .max(ratio(self.relay_power(channels), config.p_r))
    }
}

/// Objective of `mode` for a design on `channels`.
pub fn objective(mode: Mode, channels: &ChannelSet, f1: &CMat, f2: &CMat, g: &CMat) -> Result<f64> {
    match mode {
        Mode::Capacity => Ok(metrics::sum_capacity(channels, f1, f2, g)),
        Mode::Mse => metrics::sum_mse(&effective_model(channels, g), f1, f2),
    }
}

fn not_worse(mode: Mode, candidate: f64, reference: f64) -> bool {
    match mode {
        Mode::Capacity => candidate >= reference,
        Mode::Mse => candidate <= reference,
    }
}

/// Naive precoders `√(P_i/N_s) I` and relay `η I` with
/// `η = √(P_r / tr(I + Σ H_ri F_i F_i† H_ri†))`.
pub fn naive_matrices(channels: &ChannelSet, config: &NetworkConfig) -> (CMat, CMat, CMat) {
    let ns = channels.n_s();
    let nr = channels.n_r();
    let f1 = linalg::identity(ns) * linalg::real((config.p1 / ns as f64).sqrt());
    let f2 = linalg::identity(ns) * linalg::real((config.p2 / ns as f64).sqrt());
    let mut load = nr as f64;
    for (h, f) in [(&channels.h_r1, &f1), (&channels.h_r2, &f2)] {
        let hf = h * f;
        load += linalg::trace_re(&(&hf * hf.adjoint()));
    }
    let eta = (config.p_r / load).sqrt();
    (f1, f2, linalg::identity(nr) * linalg::real(eta))
}

/// Eigenmode precoder, or isotropic when the source has no usable eigenmode
/// (its composite channel is zero and every precoder is equally useless).
fn precoder_for(
    eff: &crate::model::EffectiveModel,
    source: Source,
    r_z: &CMat,
    p: f64,
    policy: Policy,
) -> Result<CMat> {
    let basis = whitened_gram(eff, source, r_z)?;
    match source_precoder(&basis, p, policy) {
        Ok(f) => Ok(f),
        Err(Error::NoUsableEigenmode { .. }) => {
            let n = basis.lambda.len();
            Ok(linalg::identity(n) * linalg::real((p / n as f64).sqrt()))
        }
        Err(e) => Err(e),
    }
}

/// Nested alternating optimization of `(F_1, F_2, G)` on `channels`.
pub fn jds_optimize(channels: &ChannelSet, config: &NetworkConfig) -> Result<Design> {
    let mode = config.mode;
    let policy = Policy::for_mode(mode);
    let (f1, f2, g) = naive_matrices(channels, config);
    let initial_objective = objective(mode, channels, &f1, &f2, &g)?;

    let mut best = (f1, f2, g.clone());
    let mut best_objective = initial_objective;
    let mut best_relay = (0.0, 0.0);
    let mut previous = initial_objective;
    let mut current_g = g;

    let mut trace = Vec::new();
    let mut alpha_iterates = Vec::new();
    let mut inner_maxed_out = 0;
    let mut non_monotone_sweeps = 0;
    let mut converged = false;
    let mut stopped_on_worsening = false;
    let mut outer_iters = 0;

    while outer_iters < config.outer_max_iters {
        outer_iters += 1;
        let eff = effective_model(channels, &current_g);
        let r_z1 = eff.noise_covariance();
        let f1 = precoder_for(&eff, Source::One, &r_z1, config.p1, policy)?;
        let sic = sic_context(&eff, &f1);
        let f2 = precoder_for(&eff, Source::Two, &sic.r_z2, config.p2, policy)?;

        let geo = relay_geometry(channels, &f1, &f2);
        let relay = solve_relay(&geo, config.p_r, mode, config.inner_tol, config.inner_max_iters);
        alpha_iterates.extend_from_slice(&relay.alpha_iterates);
        if relay.inner_loop_maxed_out() {
            inner_maxed_out += 1;
        }

        let value = objective(mode, channels, &f1, &f2, &relay.g)?;
        trace.push(value);
        let settled = (value - previous).abs() <= config.outer_tol * (1.0 + previous.abs());
        if not_worse(mode, value, best_objective) {
            best = (f1, f2, relay.g.clone());
            best_objective = value;
            best_relay = (relay.alpha, relay.power_residual);
        }
        if settled {
            converged = true;
            break;
        }
        if !not_worse(mode, value, previous) {
            non_monotone_sweeps += 1;
            stopped_on_worsening = true;
            break;
        }
        previous = value;
        current_g = relay.g;
    }

    let (f1, f2, g) = best;
    Ok(Design {
        f1,
        f2,
        g,
        scheme: Scheme::Jds,
        mode,
        objective_trace: trace,
        initial_objective,
        objective: best_objective,
        outer_iters,
        converged,
        stopped_on_worsening,
        non_monotone_sweeps,
        alpha_iterates,
        alpha_final: best_relay.0,
        power_residual: best_relay.1,
        inner_maxed_out,
    })
}

/// Design of a comparison scheme. `Scheme::Jds` is accepted and runs
/// [`jds_optimize`].
///
/// SOS and NOD share the same matrices: the joint design computed as if the
/// direct links were absent. They differ only in [`evaluate_design`].
pub fn baseline_design(channels: &ChannelSet, config: &NetworkConfig, scheme: Scheme) -> Result<Design> {
    match scheme {
        Scheme::Jds => jds_optimize(channels, config),
        Scheme::Nas => {
            let (f1, f2, g) = naive_matrices(channels, config);
            let value = objective(config.mode, channels, &f1, &f2, &g)?;
            Ok(Design {
                f1,
                f2,
                g,
                scheme,
                mode: config.mode,
                objective_trace: vec![value],
                initial_objective: value,
                objective: value,
                outer_iters: 0,
                converged: true,
                stopped_on_worsening: false,
                non_monotone_sweeps: 0,
                alpha_iterates: Vec::new(),
                alpha_final: 0.0,
                power_residual: 0.0,
                inner_maxed_out: 0,
            })
        }
        Scheme::Sos | Scheme::Nod => {
            let mut design = jds_optimize(&channels.without_direct_links(), config)?;
            design.scheme = scheme;
            Ok(design)
        }
    }
}

/// Designs for several schemes on one channel set; SOS and NOD are computed once.
pub fn design_schemes(
    channels: &ChannelSet,
    config: &NetworkConfig,
    schemes: &[Scheme],
) -> Result<Vec<Design>> {
    let mut shared: Option<Design> = None;
    schemes
        .iter()
        .map(|&scheme| match scheme {
            Scheme::Sos | Scheme::Nod => {
                if shared.is_none() {
                    shared = Some(baseline_design(channels, config, Scheme::Sos)?);
                }
                let mut d = shared.clone().expect("just computed");
                d.scheme = scheme;
                Ok(d)
            }
            other => baseline_design(channels, config, other),
        })
        .collect()
}

/// Performance of a design on the true channels under its scheme's convention
/// (NOD drops the direct links).
pub fn evaluate_design(channels: &ChannelSet, design: &Design) -> Result<Evaluation> {
    if design.scheme.evaluates_direct_links() {
        metrics::evaluate(channels, &design.f1, &design.f2, &design.g)
    } else {
        metrics::evaluate(&channels.without_direct_links(), &design.f1, &design.f2, &design.g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius;
    use crate::model::generate_channels;

    fn config(mode: Mode) -> NetworkConfig {
        NetworkConfig {
            mode,
            seed: 42,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("xyz".parse::<Scheme>().is_err());
    }

    #[test]
    fn zero_source_power() {
        for mode in [Mode::Capacity, Mode::Mse] {
            let c = NetworkConfig {
                p1: 0.0,
                p2: 0.0,
                ..config(mode)
            };
            let ch = generate_channels(&c, 0);
            let d = jds_optimize(&ch, &c).unwrap();
            assert!(frobenius(&d.f1) == 0.0 && frobenius(&d.f2) == 0.0);
            assert!(frobenius(&d.g) == 0.0);
            assert_eq!(d.outer_iters, 1);
            let expected = match mode {
                Mode::Capacity => 0.0,
                Mode::Mse => 2.0 * c.n_s as f64,
            };
            assert!((d.objective - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_relay_gain_without_source_relay_channel() {
        let c = config(Mode::Capacity);
        let mut ch = generate_channels(&c, 0);
        ch.h_r1 = linalg::zeros(4, 4);
        ch.h_r2 = linalg::zeros(4, 4);
        let (_, _, g) = naive_matrices(&ch, &c);
        let eta = (c.p_r / 4.0).sqrt();
        assert!(frobenius(&(g - linalg::identity(4) * linalg::real(eta))) < 1e-12);
    }

    #[test]
    fn sos_and_nod_share_matrices_and_order() {
        for mode in [Mode::Capacity, Mode::Mse] {
            let c = config(mode);
            for t in 0..5 {
                let ch = generate_channels(&c, t);
                let d = design_schemes(&ch, &c, &[Scheme::Sos, Scheme::Nod]).unwrap();
                assert_eq!(d[0].f1, d[1].f1);
                assert_eq!(d[0].g, d[1].g);
                let sos = evaluate_design(&ch, &d[0]).unwrap();
                let nod = evaluate_design(&ch, &d[1]).unwrap();
                assert!(sos.sum_capacity >= nod.sum_capacity - 1e-12);
            }
        }
    }

    #[test]
    fn jds_improves_on_naive_and_is_feasible() {
        for mode in [Mode::Capacity, Mode::Mse] {
            let c = config(mode);
            for t in 0..10 {
                let ch = generate_channels(&c, t);
                let d = jds_optimize(&ch, &c).unwrap();
                let nas = baseline_design(&ch, &c, Scheme::Nas).unwrap();
                assert!(not_worse(mode, d.objective, nas.objective), "trial {t}");
                assert!(d.worst_power_ratio(&ch, &c) <= 1.0 + 1e-8);
                assert!(d.alpha_iterates.iter().all(|a| (0.0..=1.0).contains(a)));
                let again = jds_optimize(&ch, &c).unwrap();
                assert_eq!(d, again);
            }
        }
    }

    #[test]
    fn jds_equals_nod_without_direct_links() {
        let c = config(Mode::Capacity);
        let ch = generate_channels(&c, 3).without_direct_links();
        let jds = jds_optimize(&ch, &c).unwrap();
        let nod = baseline_design(&ch, &c, Scheme::Nod).unwrap();
        let a = evaluate_design(&ch, &jds).unwrap().sum_capacity;
        let b = evaluate_design(&ch, &nod).unwrap().sum_capacity;
        assert!((a - b).abs() <= 1e-6);
    }
}
