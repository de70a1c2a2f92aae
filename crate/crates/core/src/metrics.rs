//! MMSE-SIC performance measures at the destination.
//!
//! Source 2 is decoded first, treating source 1 as interference; source 1 is
//! decoded after source 2 has been cancelled. All capacities are in bits per
//! channel use without a two-phase pre-factor.

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{effective_model, ChannelSet, EffectiveModel, Source};

/// Capacities in `[-CAPACITY_CLAMP, 0)` are roundoff and reported as 0.
pub const CAPACITY_CLAMP: f64 = 1e-10;

/// Interference-plus-noise covariances under the fixed decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct SicContext {
    /// `diag(I, R)`.
    pub r_z1: CMat,
    /// `diag(I, R) + H_1 F_1 F_1† H_1†`.
    pub r_z2: CMat,
}

impl SicContext {
    pub fn r_z(&self, source: Source) -> &CMat {
        match source {
            Source::One => &self.r_z1,
            Source::Two => &self.r_z2,
        }
    }
}

pub fn sic_context(eff: &EffectiveModel, f1: &CMat) -> SicContext {
    let r_z1 = eff.noise_covariance();
    let hf = &eff.h1 * f1;
    let r_z2 = linalg::hermitian_part(&(&r_z1 + &hf * hf.adjoint()));
    SicContext { r_z1, r_z2 }
}

/// `I + F† H† R_Z^{-1} H F`, with `R_Z^{-1}` applied through a Cholesky solve.
fn information_matrix(h: &CMat, f: &CMat, r_z: &CMat) -> Result<CMat> {
    let chol = linalg::cholesky(r_z).ok_or(Error::IllConditionedNoiseCovariance)?;
    let mut w = h * f;
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    let n = f.ncols();
    Ok(linalg::hermitian_part(&(linalg::identity(n) + w.adjoint() * w)))
}

/// MSE matrix `E_i = (I + F_i† H_i† R_Zi^{-1} H_i F_i)^{-1}`.
pub fn mse_matrix(eff: &EffectiveModel, source: Source, f: &CMat, r_z: &CMat) -> Result<CMat> {
    let info = information_matrix(eff.h(source), f, r_z)?;
    let chol = linalg::cholesky(&info).ok_or(Error::IllConditionedNoiseCovariance)?;
    Ok(linalg::hermitian_part(&chol.inverse()))
}

/// `C_i = log2 |I + F_i† H_i† R_Zi^{-1} H_i F_i|`.
pub fn per_source_capacity(
    eff: &EffectiveModel,
    source: Source,
    f: &CMat,
    r_z: &CMat,
) -> Result<f64> {
    let info = information_matrix(eff.h(source), f, r_z)?;
    Ok(clamp_capacity(linalg::log2_det_hpd(&info)))
}

pub fn clamp_capacity(c: f64) -> f64 {
    if (-CAPACITY_CLAMP..0.0).contains(&c) {
        0.0
    } else {
        c
    }
}

/// Block terms of the destination's received covariance for fixed precoders.
///
/// `t = I + Σ H_di Π_i H_di†`, `s = Σ H_ri Π_i H_ri†`,
/// `k_tilde = (Σ H_ri Π_i H_di†) t^{-1} (Σ H_di Π_i H_ri†)` and `k = s - k_tilde`,
/// with `Π_i = F_i F_i†`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurTerms {
    pub t: CMat,
    pub s: CMat,
    pub k_tilde: CMat,
    pub k: CMat,
}

pub fn schur_terms(channels: &ChannelSet, f1: &CMat, f2: &CMat) -> SchurTerms {
    let (nr, nd) = (channels.n_r(), channels.n_d());
    let mut t = linalg::identity(nd);
    let mut s = linalg::zeros(nr, nr);
    let mut cross = linalg::zeros(nr, nd);
    for (source, f) in [(Source::One, f1), (Source::Two, f2)] {
        let rf = channels.h_r(source) * f;
        let df = channels.h_d(source) * f;
        t += &df * df.adjoint();
        s += &rf * rf.adjoint();
        cross += &rf * df.adjoint();
    }
    let t = linalg::hermitian_part(&t);
    let s = linalg::hermitian_part(&s);
    // t >= I, so the factorization cannot fail
    let chol = linalg::cholesky(&t).expect("I + PSD is positive definite");
    let mut x = cross.adjoint();
    chol.l_dirty().solve_lower_triangular_mut(&mut x);
    let k_tilde = linalg::hermitian_part(&(x.adjoint() * x));
    let k = &s - &k_tilde;
    SchurTerms { t, s, k_tilde, k }
}

/// Sum capacity `log2|T| + log2|H_dr G K G† H_dr† + R| - log2|R|`.
///
/// Equal to `log2|H_1Π_1H_1† + H_2Π_2H_2† + H_3H_3†| - log2|H_3H_3†|` by the
/// block determinant expansion.
pub fn sum_capacity(channels: &ChannelSet, f1: &CMat, f2: &CMat, g: &CMat) -> f64 {
    let terms = schur_terms(channels, f1, f2);
    sum_capacity_with(channels, &terms, g)
}

pub(crate) fn sum_capacity_with(channels: &ChannelSet, terms: &SchurTerms, g: &CMat) -> f64 {
    let hdr_g = &channels.h_dr * g;
    let r = linalg::identity(channels.n_d()) + &hdr_g * hdr_g.adjoint();
    let signal = &hdr_g * &terms.k * hdr_g.adjoint() + &r;
    clamp_capacity(
        linalg::log2_det_hpd(&terms.t) + linalg::log2_det_hpd(&signal) - linalg::log2_det_hpd(&r),
    )
}

/// `tr(E_1) + tr(E_2)`.
pub fn sum_mse(eff: &EffectiveModel, f1: &CMat, f2: &CMat) -> Result<f64> {
    let sic = sic_context(eff, f1);
    let e1 = mse_matrix(eff, Source::One, f1, &sic.r_z1)?;
    let e2 = mse_matrix(eff, Source::Two, f2, &sic.r_z2)?;
    Ok(linalg::trace_re(&e1) + linalg::trace_re(&e2))
}

/// Every published quantity for one design on one channel set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub c1: f64,
    pub c2: f64,
    pub sum_capacity: f64,
    pub sum_mse: f64,
}

pub fn evaluate(channels: &ChannelSet, f1: &CMat, f2: &CMat, g: &CMat) -> Result<Evaluation> {
    let eff = effective_model(channels, g);
    let sic = sic_context(&eff, f1);
    let c1 = per_source_capacity(&eff, Source::One, f1, &sic.r_z1)?;
    let c2 = per_source_capacity(&eff, Source::Two, f2, &sic.r_z2)?;
    let e1 = mse_matrix(&eff, Source::One, f1, &sic.r_z1)?;
    let e2 = mse_matrix(&eff, Source::Two, f2, &sic.r_z2)?;
    Ok(Evaluation {
        c1,
        c2,
        sum_capacity: sum_capacity(channels, f1, f2, g),
        sum_mse: linalg::trace_re(&e1) + linalg::trace_re(&e2),
    })
}
