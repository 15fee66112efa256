//! Small dense-vector helpers used by the hot solver loops.
//!
//! Vectors are plain `[f64]` slices; matrices come from `nalgebra` where a
//! factorization is needed.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += s * x`
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(s: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| s * v).collect()
}

/// `Aᵀ v` for a dense matrix.
pub fn mat_t_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a.transpose() * DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect()
}

/// Orthogonal projector onto the complement of the column space of `h`,
/// computed from a thin SVD so that rank-deficient matrices are handled
/// (columns with singular value below `rcond * s_max` are dropped).
pub fn complement_projector(h: &DMatrix<f64>) -> DMatrix<f64> {
    let m = h.nrows();
    let mut proj = DMatrix::<f64>::identity(m, m);
    if h.ncols() == 0 || m == 0 {
        return proj;
    }
    let svd = h.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = s_max * (m.max(h.ncols()) as f64) * f64::EPSILON;
    for (j, &sv) in svd.singular_values.iter().enumerate() {
        if sv > tol {
            let col = u.column(j);
            proj -= col * col.transpose();
        }
    }
    proj
}

pub fn mat_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(v)).iter().copied().collect()
}
