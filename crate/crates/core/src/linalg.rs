//! Complex linear-algebra helpers shared across the solver modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Double-precision complex scalar.
pub type C64 = Complex<f64>;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = DVector<C64>;
/// Dense real matrix.
pub type RMat = DMatrix<f64>;
/// Dense real column vector.
pub type RVec = DVector<f64>;

/// Complex unit.
pub const J: C64 = Complex::new(0.0, 1.0);

/// `e^{j theta}`.
#[inline]
pub fn cis(theta: f64) -> C64 {
    Complex::from_polar(1.0, theta)
}

/// Real scalar promoted to a complex one.
#[inline]
pub fn cr(x: f64) -> C64 {
    Complex::new(x, 0.0)
}

/// Projects onto the Hermitian part, `(A + A^H)/2`.
///
/// Applied after product chains that are Hermitian in exact arithmetic so
/// round-off does not leak into eigenvalue routines.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Frobenius norm squared.
#[inline]
pub fn fro_norm_sq(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Trace of a square complex matrix.
pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows()).map(|i| a[(i, i)]).sum()
}

/// Cholesky factorization that actually certifies Hermitian positive
/// definiteness.
///
/// nalgebra's complex Cholesky happily factors indefinite Hermitian
/// matrices (the complex square root of a negative pivot exists), leaving
/// imaginary entries on the factor's diagonal. This wrapper rejects any
/// factor whose diagonal is not strictly positive real.
pub fn hpd_cholesky(a: &CMat) -> Option<nalgebra::Cholesky<C64, nalgebra::Dyn>> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || !d.re.is_finite() || d.im.abs() > 1e-9 * d.re {
            return None;
        }
    }
    Some(chol)
}

/// `ln det(A)` for a Hermitian positive-definite matrix, via Cholesky.
pub fn ln_det_hpd(a: &CMat) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let chol =
        hpd_cholesky(a).ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    Ok((0..a.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    let chol =
        hpd_cholesky(a).ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_hpd(a: &CMat) -> Result<CMat> {
    let chol =
        hpd_cholesky(a).ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    Ok(hermitize(&chol.inverse()))
}

/// Eigenvalues (ascending is not guaranteed) and eigenvectors of a Hermitian
/// matrix. The input is hermitized first.
pub fn hermitian_eigen(a: &CMat) -> (RVec, CMat) {
    let se = hermitize(a).symmetric_eigen();
    (se.eigenvalues, se.eigenvectors)
}

/// Largest eigenvalue of a Hermitian matrix; `0` for an empty matrix.
pub fn max_eigenvalue(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let (vals, _) = hermitian_eigen(a);
    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Hermitian positive-semidefinite square root via eigendecomposition.
///
/// Eigenvalues below `-tol * max_eig` are rejected; small negative values are
/// clamped to zero.
pub fn hermitian_sqrt(a: &CMat, tol: f64) -> Result<CMat> {
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    let (vals, vecs) = hermitian_eigen(a);
    let max = vals.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
    let mut roots = Vec::with_capacity(vals.len());
    for &v in vals.iter() {
        if v < -tol * max {
            return Err(Error::Numeric(format!(
                "matrix is not positive semidefinite (eigenvalue {v:.3e})"
            )));
        }
        roots.push(cr(v.max(0.0).sqrt()));
    }
    let d = CMat::from_diagonal(&CVec::from_vec(roots));
    Ok(hermitize(&(&vecs * d * vecs.adjoint())))
}

/// Hadamard product `A .* B`.
pub fn hadamard(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.shape(), b.shape(), "hadamard shape mismatch");
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(i, j)])
}

/// Horizontal concatenation of equally tall blocks.
pub fn hstack(blocks: &[CMat]) -> CMat {
    assert!(!blocks.is_empty());
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of equally wide blocks.
pub fn vstack(blocks: &[CMat]) -> CMat {
    assert!(!blocks.is_empty());
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// One draw of a circularly-symmetric complex Gaussian with unit variance
/// (`1/2` per real component).
pub fn standard_complex<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. unit-variance circularly-symmetric Gaussian entries.
pub fn complex_gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    // Column-major fill keeps draws independent of storage details.
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = standard_complex(rng);
        }
    }
    m
}

/// True when every entry is finite.
pub fn all_finite(a: &CMat) -> bool {
    a.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}
