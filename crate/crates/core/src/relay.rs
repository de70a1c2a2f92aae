//! Relay processing matrix for fixed source precoders.
//!
//! The relay matrix has the structure `G = V_H Ξ U_K†` where `K = U_K Λ_K U_K†`
//! and `H_dr = U_H Θ V_H†`. With that structure both the capacity objective and
//! the modified power constraint
//!
//! ```text
//! tr{G (I + K) G†} + α κ tr{G† G} <= P_r,    κ = tr(K̃)
//! ```
//!
//! are diagonal in `ξ = diag(Ξ²)`. The scalar `α = tr(K̃ G†G) / (κ tr(G†G))`
//! depends on `G` itself, so the allocation alternates with an `α` update
//! until `α` settles. The result is finally scaled down, if needed, so the
//! exact constraint `tr{G (I + Σ H_ri Π_i H_ri†) G†} <= P_r` holds.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, CMat};
use crate::metrics::{schur_terms, SchurTerms};
use crate::model::{ChannelSet, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct RelayGeometry {
    pub t: CMat,
    pub k: CMat,
    pub k_tilde: CMat,
    /// `Σ H_ri Π_i H_ri† = k + k_tilde`.
    pub s: CMat,
    pub kappa: f64,
    pub u_k: CMat,
    /// Eigenvalues of `k`, descending, roundoff negatives clamped to 0.
    pub lambda_k: Vec<f64>,
    pub u_h: CMat,
    pub v_h: CMat,
    /// Singular values of `H_dr`, descending, zero-padded to `n_r`.
    pub theta: Vec<f64>,
}

impl RelayGeometry {
    pub fn n_r(&self) -> usize {
        self.lambda_k.len()
    }
}

pub fn relay_geometry(channels: &ChannelSet, f1: &CMat, f2: &CMat) -> RelayGeometry {
    let SchurTerms { t, s, k_tilde, k } = schur_terms(channels, f1, f2);
    let kappa = linalg::trace_re(&k_tilde).max(0.0);
    let (mut lambda_k, u_k) = linalg::eigh_descending(&k);
    // k is a Schur complement of a PSD block matrix; negatives are roundoff
    let scale = lambda_k.first().copied().unwrap_or(0.0).max(1.0);
    for v in lambda_k.iter_mut() {
        if *v < 0.0 && *v >= -1e-9 * scale {
            *v = 0.0;
        }
    }
    let (u_h, theta, v_h) = linalg::svd_full_right(&channels.h_dr);
    RelayGeometry {
        t,
        k,
        k_tilde,
        s,
        kappa,
        u_k,
        lambda_k,
        u_h,
        v_h,
        theta,
    }
}

/// `tr(K̃ G†G) / (tr(K̃) tr(G†G))`, or 0 when either trace vanishes.
pub fn alpha_of(k_tilde: &CMat, g: &CMat) -> f64 {
    let gg = g.adjoint() * g;
    let kappa = linalg::trace_re(k_tilde);
    let power = linalg::trace_re(&gg);
    if kappa <= 0.0 || power <= 0.0 {
        return 0.0;
    }
    let alpha = linalg::trace_re(&(k_tilde * gg)) / (kappa * power);
    alpha.clamp(0.0, 1.0)
}

/// `G = V_H diag(√ξ) U_K†`.
pub fn assemble(geometry: &RelayGeometry, xi: &[f64]) -> CMat {
    let amplitudes: Vec<f64> = xi.iter().map(|x| x.max(0.0).sqrt()).collect();
    &geometry.v_h * linalg::diag_real(&amplitudes) * geometry.u_k.adjoint()
}

/// Exact relay transmit power `tr{G (I + Σ H_ri Π_i H_ri†) G†}`.
pub fn true_power(geometry: &RelayGeometry, g: &CMat) -> f64 {
    let n = g.ncols();
    linalg::trace_re(&(g * (linalg::identity(n) + &geometry.s) * g.adjoint()))
}

/// Modified-constraint power `Σ (λ_i + 1 + ακ) ξ_i`.
pub fn modified_power(lambda: &[f64], kappa: f64, alpha: f64, xi: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(xi)
        .map(|(l, x)| (l + 1.0 + alpha * kappa) * x)
        .sum()
}

/// `Σ log2[(θ²ξλ + θ²ξ + 1) / (θ²ξ + 1)]`.
pub fn capacity_objective(lambda: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(theta)
        .zip(xi)
        .map(|((l, th), x)| {
            let a = th * th * x;
            ((a * l + a + 1.0) / (a + 1.0)).log2()
        })
        .sum()
}

/// `(Σ (θ²λξ + θ²ξ + 1)^{-1}) (Σ (θ²ξ + 2))`.
pub fn mse_surrogate(lambda: &[f64], theta: &[f64], xi: &[f64]) -> f64 {
    let (inv, lin) = surrogate_sums(lambda, theta, xi, 0.0);
    inv * lin
}

/// Both factor sums of the surrogate; `idle` modes with zero gain add 1 and 2.
fn surrogate_sums(lambda: &[f64], theta: &[f64], xi: &[f64], idle: f64) -> (f64, f64) {
    lambda.iter().zip(theta).zip(xi).fold(
        (idle, 2.0 * idle),
        |(inv, lin), ((l, th), x)| {
            let a = th * th * x;
            (inv + 1.0 / (a * l + a + 1.0), lin + a + 2.0)
        },
    )
}

fn surrogate_gradient(lambda: &[f64], theta: &[f64], xi: &[f64], idle: f64) -> Vec<f64> {
    let (inv, lin) = surrogate_sums(lambda, theta, xi, idle);
    lambda
        .iter()
        .zip(theta)
        .zip(xi)
        .map(|((l, th), x)| {
            let th2 = th * th;
            let c = th2 * (l + 1.0);
            let d = c * x + 1.0;
            -c / (d * d) * lin + inv * th2
        })
        .collect()
}

fn useful_modes(lambda: &[f64], theta: &[f64]) -> Vec<usize> {
    (0..lambda.len())
        .filter(|&i| lambda[i] > 0.0 && theta[i] > 0.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityAllocation {
    pub xi: Vec<f64>,
    /// Water level; 0 when nothing is allocated.
    pub mu: f64,
    /// Positive budget but no mode with `λ_i θ_i > 0`: the relay cannot help.
    pub relay_useless: bool,
}

/// Closed-form per-mode relay power for water level `mu`.
pub fn capacity_xi(lambda: f64, theta: f64, weight: f64, mu: f64) -> f64 {
    if lambda <= 0.0 || theta <= 0.0 {
        return 0.0;
    }
    let th2 = theta * theta;
    let b = lambda + 1.0;
    let root = (lambda * lambda + 4.0 * lambda * th2 * b * mu / weight).sqrt();
    ((root - lambda - 2.0) / (2.0 * th2 * b)).max(0.0)
}

/// Maximizes the diagonalized capacity subject to the modified budget,
/// which is met with equality.
pub fn capacity_allocation(
    lambda_k: &[f64],
    theta: &[f64],
    kappa: f64,
    alpha: f64,
    p_r: f64,
) -> CapacityAllocation {
    let n = lambda_k.len();
    let modes = useful_modes(lambda_k, theta);
    if p_r <= 0.0 || modes.is_empty() {
        return CapacityAllocation {
            xi: vec![0.0; n],
            mu: 0.0,
            relay_useless: p_r > 0.0 && modes.is_empty(),
        };
    }
    let weight = |i: usize| lambda_k[i] + 1.0 + alpha * kappa;
    let spent = |mu: f64| -> f64 {
        modes
            .iter()
            .map(|&i| weight(i) * capacity_xi(lambda_k[i], theta[i], weight(i), mu))
            .sum()
    };

    // mode i switches on above mu_i = w_i / (λ_i θ_i²)
    let mut lo = modes
        .iter()
        .map(|&i| weight(i) / (lambda_k[i] * theta[i] * theta[i]))
        .fold(f64::INFINITY, f64::min);
    let mut hi = 2.0 * lo;
    while spent(hi) < p_r {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if spent(mid) < p_r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = hi;
    let mut xi = vec![0.0; n];
    for &i in &modes {
        xi[i] = capacity_xi(lambda_k[i], theta[i], weight(i), mu);
    }
    // remove the last ulps of bisection error so the budget is exact
    let total = modified_power(lambda_k, kappa, alpha, &xi);
    if total > 0.0 {
        let fix = p_r / total;
        xi.iter_mut().for_each(|x| *x *= fix);
    }
    CapacityAllocation {
        xi,
        mu,
        relay_useless: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseAllocation {
    pub xi: Vec<f64>,
    pub iters: usize,
    /// `‖P(ξ - ∇J̃) - ξ‖₂` at the returned point.
    pub stationarity: f64,
    pub converged: bool,
    pub relay_useless: bool,
}

/// Euclidean projection of `y` onto `{x >= 0, Σ w_i x_i <= budget}`.
fn project_weighted_budget(y: &[f64], w: &[f64], budget: f64) -> Vec<f64> {
    let clamped: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
    let spent: f64 = clamped.iter().zip(w).map(|(x, w)| x * w).sum();
    if spent <= budget {
        return clamped;
    }
    // x_i = max(0, y_i - τ w_i); breakpoints τ_i = y_i / w_i
    let mut order: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    order.sort_by(|&a, &b| (y[b] / w[b]).total_cmp(&(y[a] / w[a])));
    let (mut wy, mut ww) = (0.0, 0.0);
    let mut tau = 0.0;
    for (k, &i) in order.iter().enumerate() {
        wy += w[i] * y[i];
        ww += w[i] * w[i];
        tau = (wy - budget) / ww;
        let next = order.get(k + 1).map_or(0.0, |&j| y[j] / w[j]);
        if tau >= next {
            break;
        }
    }
    y.iter()
        .zip(w)
        .map(|(y, w)| (y - tau * w).max(0.0))
        .collect()
}

/// Minimizes the MSE surrogate `J̃` over the modified budget polytope by
/// spectral projected gradient with Armijo backtracking, starting from
/// `xi_init` (projected onto the feasible set first).
///
/// Only modes with `λ_i θ_i > 0` are optimized; the rest stay at 0. Every
/// accepted step decreases `J̃`.
#[allow(clippy::too_many_arguments)]
pub fn mse_allocation(
    lambda_k: &[f64],
    theta: &[f64],
    kappa: f64,
    alpha: f64,
    p_r: f64,
    xi_init: &[f64],
    tol: f64,
    max_iters: usize,
) -> MseAllocation {
    let n = lambda_k.len();
    let modes = useful_modes(lambda_k, theta);
    if p_r <= 0.0 || modes.is_empty() {
        return MseAllocation {
            xi: vec![0.0; n],
            iters: 0,
            stationarity: 0.0,
            converged: true,
            relay_useless: p_r > 0.0 && modes.is_empty(),
        };
    }
    let lam: Vec<f64> = modes.iter().map(|&i| lambda_k[i]).collect();
    let th: Vec<f64> = modes.iter().map(|&i| theta[i]).collect();
    let w: Vec<f64> = lam.iter().map(|l| l + 1.0 + alpha * kappa).collect();
    // inactive modes contribute constants: 1 to the inverse sum, 2 to the linear sum
    let idle = (n - modes.len()) as f64;
    let objective = |x: &[f64]| -> f64 {
        let (inv, lin) = surrogate_sums(&lam, &th, x, idle);
        inv * lin
    };
    let gradient = |x: &[f64]| surrogate_gradient(&lam, &th, x, idle);
    let stationarity = |x: &[f64], grad: &[f64]| -> f64 {
        let y: Vec<f64> = x.iter().zip(grad).map(|(x, g)| x - g).collect();
        let p = project_weighted_budget(&y, &w, p_r);
        p.iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };

    let start: Vec<f64> = modes.iter().map(|&i| xi_init[i]).collect();
    let mut x = project_weighted_budget(&start, &w, p_r);
    let mut fx = objective(&x);
    let mut grad = gradient(&x);
    let mut step = 1.0;
    let mut iters = 0;
    let mut pg = stationarity(&x, &grad);
    let mut converged = pg <= tol;

    while !converged && iters < max_iters {
        iters += 1;
        let trial: Vec<f64> = x.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
        let target = project_weighted_budget(&trial, &w, p_r);
        let dir: Vec<f64> = target.iter().zip(&x).map(|(a, b)| a - b).collect();
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // no descent direction left at working precision
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            let fc = objective(&cand);
            if fc <= fx + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((next, f_next)) = accepted else {
            break;
        };
        let g_next = gradient(&next);
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_next.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { 1e12 };
        x = next;
        fx = f_next;
        grad = g_next;
        pg = stationarity(&x, &grad);
        converged = pg <= tol;
    }

    let mut xi = vec![0.0; n];
    for (k, &i) in modes.iter().enumerate() {
        xi[i] = x[k];
    }
    MseAllocation {
        xi,
        iters,
        stationarity: pg,
        converged,
        relay_useless: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayDesign {
    #[serde(skip)]
    pub g: CMat,
    /// Allocation after the final feasibility scaling.
    pub xi: Vec<f64>,
    /// The `α` used for the returned allocation.
    pub alpha: f64,
    /// Every `α` visited by the inner loop, starting with the initial value.
    pub alpha_iterates: Vec<f64>,
    /// Exact relay power of `g`.
    pub used_power: f64,
    /// Modified-constraint estimate minus exact power, before scaling.
    pub power_residual: f64,
    /// Factor applied to `ξ` to restore the exact budget (1 when not needed).
    pub scale: f64,
    pub inner_iters: usize,
    /// False when the inner loop hit its cap (reported, not fatal).
    pub inner_converged: bool,
    pub relay_useless: bool,
}

impl RelayDesign {
    /// The inner loop hit `inner_max_iters` without `α` settling.
    pub fn inner_loop_maxed_out(&self) -> bool {
        !self.inner_converged
    }
}

/// Builds the relay matrix for the given geometry and criterion.
pub fn solve_relay(
    geometry: &RelayGeometry,
    p_r: f64,
    mode: Mode,
    inner_tol: f64,
    inner_max_iters: usize,
) -> RelayDesign {
    let n = geometry.n_r();
    let lambda = &geometry.lambda_k;
    let theta = &geometry.theta;
    let kappa = geometry.kappa;

    let allocate = |alpha: f64| -> (Vec<f64>, bool) {
        let cap = capacity_allocation(lambda, theta, kappa, alpha, p_r);
        match mode {
            Mode::Capacity => (cap.xi, cap.relay_useless),
            Mode::Mse => {
                let m = mse_allocation(
                    lambda,
                    theta,
                    kappa,
                    alpha,
                    p_r,
                    &cap.xi,
                    inner_tol,
                    MSE_MAX_ITERS,
                );
                (m.xi, m.relay_useless)
            }
        }
    };

    // a scaled identity is the reference relay; α is scale invariant
    let mut alpha = if kappa > 0.0 {
        alpha_of(&geometry.k_tilde, &linalg::identity(n))
    } else {
        0.0
    };
    let mut alpha_iterates = vec![alpha];
    let mut inner_iters = 0;
    let mut inner_converged = false;
    let (mut xi, mut relay_useless) = (vec![0.0; n], false);
    while inner_iters < inner_max_iters {
        inner_iters += 1;
        (xi, relay_useless) = allocate(alpha);
        if kappa <= 0.0 {
            inner_converged = true;
            break;
        }
        let next = alpha_of(&geometry.k_tilde, &assemble(geometry, &xi));
        alpha_iterates.push(next);
        if (next - alpha).abs() <= inner_tol {
            inner_converged = true;
            break;
        }
        alpha = next;
    }

    let mut g = assemble(geometry, &xi);
    let exact = true_power(geometry, &g);
    let estimate = modified_power(lambda, kappa, alpha, &xi);
    let mut scale = 1.0;
    if exact > p_r && exact > 0.0 {
        scale = p_r / exact;
        xi.iter_mut().for_each(|x| *x *= scale);
        g *= linalg::real(scale.sqrt());
    }
    RelayDesign {
        used_power: true_power(geometry, &g),
        g,
        xi,
        alpha,
        alpha_iterates,
        power_residual: estimate - exact,
        scale,
        inner_iters,
        inner_converged,
        relay_useless,
    }
}

/// Iteration cap of the MSE allocation solver inside each inner iterate.
pub const MSE_MAX_ITERS: usize = 500;
