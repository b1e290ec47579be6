//! Small dense complex linear-algebra helpers shared by the modules.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QfpError, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Eigenvalues at or above this are clipped to zero when taking square roots.
pub const PSD_CLIP: f64 = -1e-10;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

pub fn from_rows(rows: &[&[Complex64]]) -> CMatrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn from_real_rows(rows: &[&[f64]]) -> CMatrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| c64(rows[i][j], 0.0))
}

pub fn identity(n: usize) -> CMatrix {
    DMatrix::identity(n, n)
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// `Tr(A† B)`
pub fn inner(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn hermitian_defect(m: &CMatrix) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// matching eigenvector columns.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let herm = (m + m.adjoint()) * c64(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Principal square root of a positive semidefinite matrix. Eigenvalues in
/// `[PSD_CLIP, 0)` are clipped to zero; anything lower is an error.
pub fn psd_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let (vals, vecs) = hermitian_eigen(m);
    let scale = vals.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut roots = Vec::with_capacity(vals.len());
    for &v in &vals {
        if v < PSD_CLIP * scale {
            return Err(QfpError::NotPsd(v));
        }
        roots.push(v.max(0.0).sqrt());
    }
    Ok(reassemble(&vecs, &roots))
}

fn reassemble(vecs: &CMatrix, vals: &[f64]) -> CMatrix {
    let n = vecs.nrows();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        for i in 0..n {
            scaled[(i, j)] *= v;
        }
    }
    scaled * vecs.adjoint()
}

/// Inverse square root of a positive definite matrix.
pub fn pd_inv_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let (vals, vecs) = hermitian_eigen(m);
    if vals.first().is_some_and(|&v| v <= 0.0) {
        return Err(QfpError::Degenerate("matrix is not positive definite".into()));
    }
    let inv: Vec<f64> = vals.iter().map(|v| 1.0 / v.sqrt()).collect();
    Ok(reassemble(&vecs, &inv))
}

/// Complex Ginibre matrix with i.i.d. standard normal real and imaginary parts.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    DMatrix::from_fn(rows, cols, |_, _| {
        c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Haar-random unitary via QR of a Ginibre matrix with the `R` diagonal
/// phases removed.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    orthonormalize(&ginibre(n, n, rng))
}

/// Unitary factor of the QR decomposition with a positive real `R` diagonal.
pub fn orthonormalize(g: &CMatrix) -> CMatrix {
    let qr = g.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { c64(1.0, 0.0) };
        for i in 0..q.nrows() {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Largest singular value.
pub fn operator_norm(m: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(&(m.adjoint() * m));
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = haar_unitary(5, &mut rng);
        assert!(max_abs_diff(&(u.adjoint() * &u), &identity(5)) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = ginibre(3, 3, &mut rng);
        let p = &g * g.adjoint();
        let s = psd_sqrt(&p).unwrap();
        assert!(max_abs_diff(&(&s * &s), &p) < 1e-10);
    }

    #[test]
    fn negative_matrix_rejected() {
        let m = from_real_rows(&[&[1.0, 0.0], &[0.0, -0.5]]);
        assert!(matches!(psd_sqrt(&m), Err(QfpError::NotPsd(_))));
    }

    #[test]
    fn tiny_negative_eigenvalue_clipped() {
        let m = from_real_rows(&[&[1.0, 0.0], &[0.0, -1e-12]]);
        let s = psd_sqrt(&m).unwrap();
        assert_eq!(s[(1, 1)], c64(0.0, 0.0));
    }
}
