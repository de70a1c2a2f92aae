//! Network configuration, fading channel generation and the effective
//! two-phase receive model seen by the destination.
//!
//! During phase one both sources transmit to the relay and the destination;
//! during phase two the relay forwards `G y_r`. Stacking both phases gives
//!
//! ```text
//! Y = H_1 F_1 s_1 + H_2 F_2 s_2 + H_3 N,   H_i = [H_di; H_dr G H_ri]
//! ```
//!
//! with effective noise covariance `H_3 H_3† = diag(I, R)`,
//! `R = I + H_dr G G† H_dr†`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Design criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Capacity,
    Mse,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Capacity => f.write_str("capacity"),
            Mode::Mse => f.write_str("mse"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "capacity" => Ok(Mode::Capacity),
            "mse" => Ok(Mode::Mse),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// Identifies one of the two source nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    One,
    Two,
}

/// `10^(db/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_s: usize,
    pub n_r: usize,
    pub n_d: usize,
    /// Linear-scale power budgets (noise has unit variance).
    pub p1: f64,
    pub p2: f64,
    pub p_r: f64,
    pub l_sr: f64,
    pub l_rd: f64,
    pub tau: f64,
    pub mode: Mode,
    pub outer_max_iters: usize,
    pub inner_max_iters: usize,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    /// Four antennas everywhere, 20 dB at every node, relay halfway along a
    /// source-destination distance of 10, path-loss exponent 3.
    fn default() -> Self {
        let p = db_to_linear(20.0);
        NetworkConfig {
            n_s: 4,
            n_r: 4,
            n_d: 4,
            p1: p,
            p2: p,
            p_r: p,
            l_sr: 5.0,
            l_rd: 5.0,
            tau: 3.0,
            mode: Mode::Capacity,
            outer_max_iters: 50,
            inner_max_iters: 50,
            outer_tol: 1e-4,
            inner_tol: 1e-6,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Source-destination distance; both sources sit at the same position on
    /// the line through the relay.
    pub fn l_sd(&self) -> f64 {
        self.l_sr + self.l_rd
    }

    /// Sets `p1 = p2 = p_r = 10^(db/10)`.
    pub fn with_power_db(mut self, db: f64) -> Self {
        let p = db_to_linear(db);
        self.p1 = p;
        self.p2 = p;
        self.p_r = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_s == 0 || self.n_r == 0 || self.n_d == 0 {
            return bad(format!(
                "antenna counts must be >= 1 (ns={}, nr={}, nd={})",
                self.n_s, self.n_r, self.n_d
            ));
        }
        for (name, v) in [("p1", self.p1), ("p2", self.p2), ("p_r", self.p_r)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        for (name, v) in [("l_sr", self.l_sr), ("l_rd", self.l_rd)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad(format!("tau must be finite and nonnegative, got {}", self.tau));
        }
        for (name, v) in [("outer_tol", self.outer_tol), ("inner_tol", self.inner_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if self.outer_max_iters == 0 || self.inner_max_iters == 0 {
            return bad("iteration caps must be >= 1".into());
        }
        Ok(())
    }

    /// Per-entry variance `1 / l^tau` of a link of length `l`.
    pub fn link_variance(&self, l: f64) -> f64 {
        l.powf(-self.tau)
    }
}

/// One channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Source i to relay, `n_r × n_s`.
    pub h_r1: CMat,
    pub h_r2: CMat,
    /// Source i to destination, `n_d × n_s`.
    pub h_d1: CMat,
    pub h_d2: CMat,
    /// Relay to destination, `n_d × n_r`.
    pub h_dr: CMat,
}

impl ChannelSet {
    pub fn n_s(&self) -> usize {
        self.h_r1.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.h_dr.ncols()
    }

    pub fn n_d(&self) -> usize {
        self.h_dr.nrows()
    }

    pub fn h_r(&self, source: Source) -> &CMat {
        match source {
            Source::One => &self.h_r1,
            Source::Two => &self.h_r2,
        }
    }

    pub fn h_d(&self, source: Source) -> &CMat {
        match source {
            Source::One => &self.h_d1,
            Source::Two => &self.h_d2,
        }
    }

    /// Copy with both source-destination links zeroed.
    pub fn without_direct_links(&self) -> ChannelSet {
        ChannelSet {
            h_d1: linalg::zeros(self.n_d(), self.n_s()),
            h_d2: linalg::zeros(self.n_d(), self.n_s()),
            ..self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.h_r1, &self.h_r2, &self.h_d1, &self.h_d2, &self.h_dr]
            .into_iter()
            .all(linalg::is_finite)
    }

    /// Checks that all five matrices agree with the antenna counts in `config`.
    pub fn matches(&self, config: &NetworkConfig) -> bool {
        let (ns, nr, nd) = (config.n_s, config.n_r, config.n_d);
        self.h_r1.shape() == (nr, ns)
            && self.h_r2.shape() == (nr, ns)
            && self.h_d1.shape() == (nd, ns)
            && self.h_d2.shape() == (nd, ns)
            && self.h_dr.shape() == (nd, nr)
    }
}

fn unit_cn_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std_dev: f64) -> CMat {
    // CN(0, v): real and imaginary parts i.i.d. N(0, v/2)
    let scale = std_dev * std::f64::consts::FRAC_1_SQRT_2;
    let mut m = linalg::zeros(rows, cols);
    // column-major fill order is part of the reproducibility contract
    for c in 0..cols {
        for r in 0..rows {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(r, c)] = Complex64::new(re * scale, im * scale);
        }
    }
    m
}

/// Trial `trial_index`'s channels, drawn from ChaCha stream `trial_index` of `config.seed`.
///
/// The small-scale fading depends only on `(seed, trial_index)` and the
/// antenna counts; distances and `tau` only scale it. Sweeps over power or
/// relay position therefore see common random numbers.
pub fn generate_channels(config: &NetworkConfig, trial_index: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial_index);
    let (ns, nr, nd) = (config.n_s, config.n_r, config.n_d);
    let sr = config.link_variance(config.l_sr).sqrt();
    let sd = config.link_variance(config.l_sd()).sqrt();
    let rd = config.link_variance(config.l_rd).sqrt();
    let h_r1 = unit_cn_matrix(&mut rng, nr, ns, sr);
    let h_r2 = unit_cn_matrix(&mut rng, nr, ns, sr);
    let h_d1 = unit_cn_matrix(&mut rng, nd, ns, sd);
    let h_d2 = unit_cn_matrix(&mut rng, nd, ns, sd);
    let h_dr = unit_cn_matrix(&mut rng, nd, nr, rd);
    ChannelSet {
        h_r1,
        h_r2,
        h_d1,
        h_d2,
        h_dr,
    }
}

/// Composite channels and phase-two noise covariance for a fixed relay matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveModel {
    /// `[H_d1; H_dr G H_r1]`, `2 n_d × n_s`.
    pub h1: CMat,
    pub h2: CMat,
    /// `I + H_dr G G† H_dr†`.
    pub r: CMat,
    pub g: CMat,
}

impl EffectiveModel {
    pub fn h(&self, source: Source) -> &CMat {
        match source {
            Source::One => &self.h1,
            Source::Two => &self.h2,
        }
    }

    pub fn n_d(&self) -> usize {
        self.r.nrows()
    }

    /// `H_3 H_3† = diag(I_{n_d}, R)`.
    pub fn noise_covariance(&self) -> CMat {
        linalg::block_diag(&linalg::identity(self.n_d()), &self.r)
    }
}

/// Builds the stacked two-phase model for relay matrix `g`.
///
/// Panics if `g` is not `n_r × n_r`.
pub fn effective_model(channels: &ChannelSet, g: &CMat) -> EffectiveModel {
    let nr = channels.n_r();
    assert_eq!(g.shape(), (nr, nr), "relay matrix must be n_r x n_r");
    let hdr_g = &channels.h_dr * g;
    let h1 = linalg::vstack(&channels.h_d1, &(&hdr_g * &channels.h_r1));
    let h2 = linalg::vstack(&channels.h_d2, &(&hdr_g * &channels.h_r2));
    let r = linalg::hermitian_part(&(linalg::identity(channels.n_d()) + &hdr_g * hdr_g.adjoint()));
    EffectiveModel {
        h1,
        h2,
        r,
        g: g.clone(),
    }
}
