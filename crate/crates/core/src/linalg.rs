//! Dense complex linear-algebra helpers shared by the design modules.
//!
//! Everything here works on `DMatrix<Complex64>`. Hermitian arguments are
//! symmetrized before factorization so roundoff in the upper and lower
//! triangles cannot disagree.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

/// Eigenvalues within this distance below zero are treated as roundoff and clamped.
pub const NEG_EIG_CLAMP: f64 = 1e-10;

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `(m + m†) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * real(0.5)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.trace().re
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn diag_real(values: &[f64]) -> CMat {
    let n = values.len();
    let mut d = zeros(n, n);
    for (i, &v) in values.iter().enumerate() {
        d[(i, i)] = real(v);
    }
    d
}

/// Block-diagonal `diag(a, b)`.
pub fn block_diag(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Vertical stack `[top; bottom]`.
pub fn vstack(top: &CMat, bottom: &CMat) -> CMat {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack column mismatch");
    let (rt, c) = top.shape();
    let rb = bottom.nrows();
    let mut out = zeros(rt + rb, c);
    out.view_mut((0, 0), (rt, c)).copy_from(top);
    out.view_mut((rt, 0), (rb, c)).copy_from(bottom);
    out
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Cholesky factorization of the Hermitian part of `m`, or `None` if it is not positive definite.
pub fn cholesky(m: &CMat) -> Option<Cholesky<Complex64, Dyn>> {
    Cholesky::new(hermitian_part(m))
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in descending order.
///
/// Ties keep the order produced by the decomposition (stable sort).
pub fn eigh_descending(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Clamps roundoff negatives in `[-NEG_EIG_CLAMP, 0)` to zero; larger negatives are kept.
pub fn clamp_roundoff(values: &mut [f64]) {
    for v in values.iter_mut() {
        if *v < 0.0 && *v >= -NEG_EIG_CLAMP {
            *v = 0.0;
        }
    }
}

/// Natural log-determinant of a Hermitian positive definite matrix.
///
/// Uses the Cholesky pivots; if the factorization fails (an argument that is
/// PSD analytically but indefinite by roundoff) falls back to the eigenvalues
/// clamped at the smallest positive double.
pub fn ln_det_hpd(m: &CMat) -> f64 {
    match cholesky(m) {
        Some(chol) => {
            let l = chol.l_dirty();
            (0..m.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0
        }
        None => {
            let (values, _) = eigh_descending(m);
            values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum()
        }
    }
}

pub fn log2_det_hpd(m: &CMat) -> f64 {
    ln_det_hpd(m) / std::f64::consts::LN_2
}

/// Thin SVD completed to a full right basis: `a = U_H Θ V_H†` where `V_H` is
/// `cols × cols` unitary and `Θ` holds `cols` singular values, descending,
/// zero-padded when `rows < cols`. `U_H` is `rows × min(rows, cols)`.
pub fn svd_full_right(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));

    let mut u_h = zeros(rows, k);
    let mut v_h = zeros(cols, cols);
    let mut theta = vec![0.0; cols];
    for (dst, &src) in order.iter().enumerate() {
        u_h.set_column(dst, &u.column(src));
        v_h.set_column(dst, &v_t.row(src).adjoint());
        theta[dst] = svd.singular_values[src];
    }
    complete_orthonormal_columns(&mut v_h, k);
    (u_h, theta, v_h)
}

/// Fills columns `filled..` of `q` with an orthonormal complement of the first
/// `filled` (orthonormal) columns by Gram-Schmidt against the standard basis.
fn complete_orthonormal_columns(q: &mut CMat, filled: usize) {
    let n = q.nrows();
    let mut next = filled;
    let mut e = 0;
    while next < q.ncols() && e < n {
        let mut v = nalgebra::DVector::<Complex64>::zeros(n);
        v[e] = real(1.0);
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for j in 0..next {
                let qj = q.column(j);
                let proj = qj.dotc(&v);
                v -= qj * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            q.set_column(next, &(v / real(norm)));
            next += 1;
        }
        e += 1;
    }
}
