//! Complex vector helpers and Hermitian eigen-utilities on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigenvalues below this (relative to the spectral radius) are numerical noise.
pub const PSD_CLAMP: f64 = 1e-10;

/// `x^H y`.
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|a| a.norm_sqr()).sum()
}

/// `|h^H w|²`.
pub fn abs2_inner(h: &[Complex64], w: &[Complex64]) -> f64 {
    inner(h, w).norm_sqr()
}

/// `w^H Q w` (real part; `Q` Hermitian).
pub fn quad_form(q: &CMatrix, w: &[Complex64]) -> f64 {
    let n = w.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..n {
            row += q[(i, j)] * w[j];
        }
        acc += w[i].conj() * row;
    }
    acc.re
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(q: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = q.nrows();
    let herm = (q + q.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn check_psd(values: &[f64]) -> Result<f64> {
    let radius = values.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    let floor = -PSD_CLAMP * radius.max(1.0);
    match values.iter().copied().find(|&v| v < floor) {
        Some(v) => Err(Error::NotPsd { min_eigenvalue: v }),
        None => Ok(radius),
    }
}

/// Hermitian PSD square root; tiny negative eigenvalues are clamped to zero.
pub fn psd_sqrt(q: &CMatrix) -> Result<CMatrix> {
    let (values, vectors) = hermitian_eigen(q);
    check_psd(&values)?;
    let n = q.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (j, &v) in values.iter().enumerate() {
        let s = math::sqrt(v.max(0.0));
        if s == 0.0 {
            continue;
        }
        let col = vectors.column(j);
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] += col[r] * col[c].conj() * s;
            }
        }
    }
    Ok(out)
}

/// Factors `f_j` with `Q = Σ_j f_j f_j^H`, dropping null directions.
pub fn psd_factors(q: &CMatrix) -> Result<Vec<Vec<Complex64>>> {
    let (values, vectors) = hermitian_eigen(q);
    let radius = check_psd(&values)?;
    let cutoff = PSD_CLAMP * radius;
    Ok(values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cutoff)
        .map(|(j, &v)| {
            let s = math::sqrt(v);
            vectors.column(j).iter().map(|z| z * s).collect()
        })
        .collect())
}

/// Unit eigenvector of the largest eigenvalue, phase-normalized so the
/// largest-magnitude entry is real positive.
pub fn principal_eigenvector(q: &CMatrix) -> (f64, Vec<Complex64>) {
    let (values, vectors) = hermitian_eigen(q);
    let n = q.nrows();
    let v: Vec<Complex64> = vectors.column(n - 1).iter().copied().collect();
    (values[n - 1], normalize_phase(v))
}

/// Rotates `v` so its largest-magnitude entry (first on ties) is real positive.
pub fn normalize_phase(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let mut best = 0;
    for (i, z) in v.iter().enumerate() {
        if z.norm_sqr() > v[best].norm_sqr() * (1.0 + 1e-12) {
            best = i;
        }
    }
    let a = v[best];
    let mag = a.norm();
    if mag > 0.0 {
        let phase = a.conj() / mag;
        for z in &mut v {
            *z *= phase;
        }
    }
    v
}

/// `Σ_i x_i x_i^H`.
pub fn outer_sum<'a, I: IntoIterator<Item = &'a [Complex64]>>(n: usize, vectors: I) -> CMatrix {
    let mut q = CMatrix::zeros(n, n);
    for x in vectors {
        for r in 0..n {
            for c in 0..n {
                q[(r, c)] += x[r] * x[c].conj();
            }
        }
    }
    q
}

pub fn trace_re(q: &CMatrix) -> f64 {
    (0..q.nrows()).map(|i| q[(i, i)].re).sum()
}
