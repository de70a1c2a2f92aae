//! Source precoders for a fixed relay matrix.
//!
//! For source `i` the whitened Gram matrix `H_si = H_i† R_Zi^{-1} H_i` is
//! Hermitian PSD with eigendecomposition `U_i Λ_i U_i†`. The precoder is
//! `F_i = U_i Σ_i`, where `Σ_i²` is a water-filling load on `Λ_i`:
//!
//! * Policy A (capacity): `σ²_k = [μ - 1/λ_k]⁺`
//! * Policy B (MSE):      `σ²_k = [μ λ_k^{-1/2} - 1/λ_k]⁺`
//!
//! with `Σ σ²_k = P`. The water level is found by an exact active-set
//! search: candidate sets are the `k` strongest modes, and `μ` has a closed
//! form on each.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{EffectiveModel, Mode, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    /// Policy A, maximizes `Σ log(1 + σ²λ)`.
    WaterFilling,
    /// Policy B, minimizes `Σ 1 / (1 + σ²λ)`.
    InverseWaterFilling,
}

impl Policy {
    pub fn for_mode(mode: Mode) -> Policy {
        match mode {
            Mode::Capacity => Policy::WaterFilling,
            Mode::Mse => Policy::InverseWaterFilling,
        }
    }
}

/// Eigenbasis of the whitened Gram matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub u: CMat,
    pub lambda: Vec<f64>,
}

impl EigenBasis {
    pub fn identity(n: usize) -> EigenBasis {
        EigenBasis {
            u: linalg::identity(n),
            lambda: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLoad {
    pub sigma_sq: Vec<f64>,
    pub mu: f64,
    pub policy: Policy,
}

impl PowerLoad {
    pub fn total(&self) -> f64 {
        self.sigma_sq.iter().sum()
    }
}

/// Eigendecomposition of `H_i† R_Z^{-1} H_i`.
pub fn whitened_gram(eff: &EffectiveModel, source: Source, r_z: &CMat) -> Result<EigenBasis> {
    let h = eff.h(source);
    let n = h.ncols();
    let chol = linalg::cholesky(r_z).ok_or(Error::IllConditionedNoiseCovariance)?;
    let mut w = h.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    let gram = w.adjoint() * w;
    if gram.iter().all(|z| z.norm_sqr() == 0.0) {
        return Ok(EigenBasis::identity(n));
    }
    let (mut lambda, u) = linalg::eigh_descending(&gram);
    let scale = lambda[0].max(1.0);
    for v in lambda.iter_mut() {
        if *v < 0.0 && *v >= -linalg::NEG_EIG_CLAMP * scale {
            *v = 0.0;
        }
    }
    Ok(EigenBasis { u, lambda })
}

/// Policy A load, see [`load`].
pub fn water_fill(lambda: &[f64], p: f64) -> Result<PowerLoad> {
    load(lambda, p, Policy::WaterFilling)
}

/// Policy B load, see [`load`].
pub fn inverse_water_fill(lambda: &[f64], p: f64) -> Result<PowerLoad> {
    load(lambda, p, Policy::InverseWaterFilling)
}

/// Distributes `p` over eigenmodes `lambda` by the given policy.
///
/// Modes with `λ ≤ 0` never receive power. The output is in the input order;
/// `lambda` need not be sorted. Errors with [`Error::NoUsableEigenmode`] when
/// `p > 0` and no mode is usable.
pub fn load(lambda: &[f64], p: f64, policy: Policy) -> Result<PowerLoad> {
    let mut usable: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
    usable.sort_by(|&a, &b| lambda[b].total_cmp(&lambda[a]));
    let mut sigma_sq = vec![0.0; lambda.len()];

    // activation threshold of a mode: the water level at which it turns on
    let threshold = |l: f64| match policy {
        Policy::WaterFilling => 1.0 / l,
        Policy::InverseWaterFilling => 1.0 / l.sqrt(),
    };

    if p <= 0.0 {
        let mu = usable.first().map_or(0.0, |&i| threshold(lambda[i]));
        return Ok(PowerLoad {
            sigma_sq,
            mu,
            policy,
        });
    }
    if usable.is_empty() {
        return Err(Error::NoUsableEigenmode { power: p });
    }

    let level = |active: &[usize]| -> f64 {
        let inv_sum: f64 = active.iter().map(|&i| 1.0 / lambda[i]).sum();
        match policy {
            Policy::WaterFilling => (p + inv_sum) / active.len() as f64,
            Policy::InverseWaterFilling => {
                (p + inv_sum) / active.iter().map(|&i| lambda[i].powf(-0.5)).sum::<f64>()
            }
        }
    };

    // the strongest mode alone is always feasible, so this terminates at k = 1
    let mut mu = 0.0;
    let mut active = 1;
    for k in (1..=usable.len()).rev() {
        let candidate = level(&usable[..k]);
        if candidate > threshold(lambda[usable[k - 1]]) || k == 1 {
            mu = candidate;
            active = k;
            break;
        }
    }
    for &i in &usable[..active] {
        let l = lambda[i];
        let s = match policy {
            Policy::WaterFilling => mu - 1.0 / l,
            Policy::InverseWaterFilling => mu / l.sqrt() - 1.0 / l,
        };
        sigma_sq[i] = s.max(0.0);
    }
    Ok(PowerLoad {
        sigma_sq,
        mu,
        policy,
    })
}

/// `F = U diag(√σ²)` with the load for budget `p`.
pub fn source_precoder(basis: &EigenBasis, p: f64, policy: Policy) -> Result<CMat> {
    let loaded = load(&basis.lambda, p, policy)?;
    Ok(precoder_from_load(basis, &loaded))
}

pub fn precoder_from_load(basis: &EigenBasis, loaded: &PowerLoad) -> CMat {
    let amplitudes: Vec<f64> = loaded.sigma_sq.iter().map(|s| s.sqrt()).collect();
    &basis.u * linalg::diag_real(&amplitudes)
}

/// `Σ log2(1 + σ²λ)`.
pub fn eigenmode_capacity(lambda: &[f64], sigma_sq: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(sigma_sq)
        .map(|(l, s)| (1.0 + s * l).log2())
        .sum()
}

/// `Σ 1 / (1 + σ²λ)`.
pub fn eigenmode_mse(lambda: &[f64], sigma_sq: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(sigma_sq)
        .map(|(l, s)| 1.0 / (1.0 + s * l))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, identity, real, zeros};
    use crate::metrics::{per_source_capacity, sic_context};
    use crate::model::{effective_model, generate_channels, NetworkConfig};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    /// Best objective over the simplex `s1 + s2 = p` on a grid of `steps` cells.
    fn grid_best(p: f64, steps: usize, objective: impl Fn(f64, f64) -> f64) -> f64 {
        (0..=steps)
            .map(|k| {
                let s1 = p * k as f64 / steps as f64;
                objective(s1, p - s1)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn water_fill_examples() {
        let single = water_fill(&[1.0], 1.0).unwrap();
        assert_close(&single.sigma_sq, &[1.0], 1e-15);
        assert!((single.mu - 2.0).abs() < 1e-15);

        let two = water_fill(&[2.0, 1.0], 3.0).unwrap();
        assert!((two.mu - 2.25).abs() < 1e-15);
        assert_close(&two.sigma_sq, &[1.75, 1.25], 1e-15);
        let grid = grid_best(3.0, 30_000, |a, b| eigenmode_capacity(&[2.0, 1.0], &[a, b]));
        let ours = eigenmode_capacity(&[2.0, 1.0], &two.sigma_sq);
        assert!(ours >= grid - 1e-12 && ours - grid < 1e-6);

        let skewed = water_fill(&[10.0, 0.01], 0.2).unwrap();
        assert_close(&skewed.sigma_sq, &[0.2, 0.0], 1e-15);
        assert!((skewed.mu - 0.3).abs() < 1e-15);
        let grid = grid_best(0.2, 20_000, |a, b| eigenmode_capacity(&[10.0, 0.01], &[a, b]));
        assert!(eigenmode_capacity(&[10.0, 0.01], &skewed.sigma_sq) >= grid - 1e-12);
    }

    #[test]
    fn inverse_water_fill_examples() {
        let single = inverse_water_fill(&[1.0], 1.0).unwrap();
        assert_close(&single.sigma_sq, &[1.0], 1e-15);
        assert!((single.mu - 2.0).abs() < 1e-15);

        let two = inverse_water_fill(&[4.0, 1.0], 3.0).unwrap();
        assert!((two.mu - 17.0 / 6.0).abs() < 1e-14);
        assert_close(&two.sigma_sq, &[7.0 / 6.0, 11.0 / 6.0], 1e-14);
        let grid = grid_best(3.0, 30_000, |a, b| -eigenmode_mse(&[4.0, 1.0], &[a, b]));
        let ours = -eigenmode_mse(&[4.0, 1.0], &two.sigma_sq);
        assert!(ours >= grid - 1e-12);

        // mode 2 turns on only once mu exceeds 1/sqrt(0.01) = 10
        let tiny = inverse_water_fill(&[100.0, 0.01], 0.05).unwrap();
        assert!(tiny.mu * 0.1 - 100.0 < 0.0);
        assert_close(&tiny.sigma_sq, &[0.05, 0.0], 1e-15);
    }

    #[test]
    fn no_usable_mode() {
        assert!(matches!(
            water_fill(&[0.0, 0.0], 1.0),
            Err(Error::NoUsableEigenmode { .. })
        ));
        assert!(matches!(
            inverse_water_fill(&[0.0], 2.0),
            Err(Error::NoUsableEigenmode { .. })
        ));
        let zero_budget = water_fill(&[0.0, 0.0], 0.0).unwrap();
        assert_eq!(zero_budget.sigma_sq, vec![0.0, 0.0]);
    }

    #[test]
    fn unsorted_input_keeps_positions() {
        let load = water_fill(&[1.0, 2.0], 3.0).unwrap();
        assert_close(&load.sigma_sq, &[1.25, 1.75], 1e-15);
    }

    #[test]
    fn zero_channel_gives_identity_basis() {
        let c = NetworkConfig {
            n_s: 3,
            n_r: 3,
            n_d: 3,
            ..NetworkConfig::default()
        };
        let ch = generate_channels(&c, 0).without_direct_links();
        let eff = effective_model(&ch, &zeros(3, 3));
        let sic = sic_context(&eff, &zeros(3, 3));
        let basis = whitened_gram(&eff, Source::One, &sic.r_z1).unwrap();
        assert_eq!(basis, EigenBasis::identity(3));
    }

    #[test]
    fn diagonal_gram() {
        // H = diag(sqrt 3, 1) stacked over a zero block with R_Z = I
        let mut h = zeros(4, 2);
        h[(0, 0)] = real(3f64.sqrt());
        h[(1, 1)] = real(1.0);
        let eff = EffectiveModel {
            h1: h.clone(),
            h2: h,
            r: identity(2),
            g: identity(2),
        };
        let basis = whitened_gram(&eff, Source::One, &identity(4)).unwrap();
        assert_close(&basis.lambda, &[3.0, 1.0], 1e-14);
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((basis.u[(i, j)].norm() - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_by_two_eigenvalues_match_quadratic_formula() {
        let c = NetworkConfig {
            n_s: 2,
            n_r: 2,
            n_d: 2,
            tau: 0.0,
            ..NetworkConfig::default()
        };
        for t in 0..20 {
            let ch = generate_channels(&c, t);
            let eff = effective_model(&ch, &ch.h_dr.clone());
            let sic = sic_context(&eff, &ch.h_r2);
            for (src, rz) in [(Source::One, &sic.r_z1), (Source::Two, &sic.r_z2)] {
                let basis = whitened_gram(&eff, src, rz).unwrap();
                let h = eff.h(src);
                let rz_inv = rz.clone().try_inverse().unwrap();
                let m = h.adjoint() * rz_inv * h;
                let (a, d) = (m[(0, 0)].re, m[(1, 1)].re);
                let b = m[(0, 1)].norm_sqr();
                let disc = ((a - d) * (a - d) + 4.0 * b).sqrt();
                let expected = [(a + d + disc) / 2.0, (a + d - disc) / 2.0];
                assert_close(&basis.lambda, &expected, 1e-10 * (1.0 + a + d));
                assert!(frobenius(&(basis.u.adjoint() * &basis.u - identity(2))) <= 1e-9);
                let rec = &basis.u * linalg::diag_real(&basis.lambda) * basis.u.adjoint();
                assert!(frobenius(&(rec - &m)) <= 1e-9 * frobenius(&m));
            }
        }
    }

    #[test]
    fn precoder_edge_cases() {
        let basis = EigenBasis {
            u: identity(1),
            lambda: vec![1.0],
        };
        let f = source_precoder(&basis, 1.0, Policy::WaterFilling).unwrap();
        assert!((f[(0, 0)] - real(1.0)).norm() < 1e-15);
        let z = source_precoder(&basis, 0.0, Policy::WaterFilling).unwrap();
        assert!(z.iter().all(|x| *x == real(0.0)));
    }

    #[test]
    fn policy_a_beats_random_precoders() {
        let c = NetworkConfig {
            n_s: 3,
            n_r: 3,
            n_d: 3,
            seed: 21,
            ..NetworkConfig::default()
        };
        let ch = generate_channels(&c, 0);
        let g = identity(3) * real(8.0);
        let eff = effective_model(&ch, &g);
        let sic = sic_context(&eff, &zeros(3, 3));
        let basis = whitened_gram(&eff, Source::One, &sic.r_z1).unwrap();
        let p = 50.0;
        let f = source_precoder(&basis, p, Policy::WaterFilling).unwrap();
        assert!((linalg::trace_re(&(&f * f.adjoint())) - p).abs() <= 1e-8 * p);
        let best = per_source_capacity(&eff, Source::One, &f, &sic.r_z1).unwrap();
        let aux = NetworkConfig {
            tau: 0.0,
            seed: 99,
            ..c.clone()
        };
        for t in 0..50 {
            let mut rand_f = generate_channels(&aux, t).h_r1;
            let tr = linalg::trace_re(&(&rand_f * rand_f.adjoint()));
            rand_f *= real((p / tr).sqrt());
            let cap = per_source_capacity(&eff, Source::One, &rand_f, &sic.r_z1).unwrap();
            assert!(best >= cap - 1e-9, "random precoder {t} beat water-filling");
        }
    }

    #[test]
    fn eigenspace_mixing_is_harmless() {
        // degenerate eigenvalue: any unitary rotation within the eigenspace
        let lambda = vec![2.0, 2.0, 0.5];
        let load = water_fill(&lambda, 4.0).unwrap();
        let theta: f64 = 0.7;
        let mut rot = identity(3);
        rot[(0, 0)] = real(theta.cos());
        rot[(0, 1)] = Complex64::new(0.0, -theta.sin());
        rot[(1, 0)] = Complex64::new(0.0, -theta.sin());
        rot[(1, 1)] = real(theta.cos());
        let h_si = linalg::diag_real(&lambda);
        let plain = precoder_from_load(&EigenBasis { u: identity(3), lambda: lambda.clone() }, &load);
        let mixed = precoder_from_load(&EigenBasis { u: rot, lambda: lambda.clone() }, &load);
        let cap = |f: &CMat| {
            linalg::log2_det_hpd(&(identity(3) + f.adjoint() * &h_si * f))
        };
        assert!((cap(&plain) - cap(&mixed)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn loads_meet_budget_and_slackness(
            lambda in proptest::collection::vec(0.0f64..50.0, 1..7),
            p in 0.0f64..500.0,
        ) {
            prop_assume!(lambda.iter().any(|&l| l > 1e-6));
            for policy in [Policy::WaterFilling, Policy::InverseWaterFilling] {
                let loaded = load(&lambda, p, policy).unwrap();
                prop_assert!((loaded.total() - p).abs() <= 1e-8 * p.max(1e-300));
                for (l, s) in lambda.iter().zip(&loaded.sigma_sq) {
                    prop_assert!(*s >= 0.0);
                    let bracket = match policy {
                        Policy::WaterFilling => loaded.mu - 1.0 / l,
                        Policy::InverseWaterFilling => loaded.mu / l.sqrt() - 1.0 / l,
                    };
                    if *l <= 0.0 || bracket <= 0.0 {
                        prop_assert_eq!(*s, 0.0);
                    }
                }
            }
            let a = water_fill(&lambda, p).unwrap();
            for i in 0..lambda.len() {
                for j in 0..lambda.len() {
                    if lambda[i] >= lambda[j] {
                        prop_assert!(a.sigma_sq[i] >= a.sigma_sq[j] - 1e-12);
                    }
                }
            }
        }
    }
}
