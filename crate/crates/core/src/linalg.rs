//! Jacobi decompositions for the tiny dense matrices a particle carries.
//!
//! nalgebra's decompositions need typenum bounds that do not compose with
//! `const D: usize` generics, and for `D <= 4` cyclic Jacobi is both simple
//! and accurate to a few ulps in every singular value.

use nalgebra::{SMatrix, SVector};

const MAX_SWEEPS: usize = 60;

/// `A = U diag(s) Vᵀ`. Singular values are not sorted.
#[derive(Debug, Clone, Copy)]
pub struct Svd<const D: usize> {
    pub u: SMatrix<f64, D, D>,
    pub singular_values: SVector<f64, D>,
    pub v: SMatrix<f64, D, D>,
}

impl<const D: usize> Svd<D> {
    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd<const D: usize>(a: &SMatrix<f64, D, D>) -> Svd<D> {
    let mut u = *a;
    let mut v = SMatrix::<f64, D, D>::identity();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..D {
            for q in (p + 1)..D {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_columns(&mut u, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut singular_values = SVector::<f64, D>::zeros();
    for i in 0..D {
        let norm = u.column(i).norm();
        singular_values[i] = norm;
        if norm > 0.0 {
            u.column_mut(i).unscale_mut(norm);
        }
    }
    Svd {
        u,
        singular_values,
        v,
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns, unsorted.
pub fn symmetric_eigen<const D: usize>(
    s: &SMatrix<f64, D, D>,
) -> (SVector<f64, D>, SMatrix<f64, D, D>) {
    let mut a = (s + s.transpose()) * 0.5;
    let mut v = SMatrix::<f64, D, D>::identity();
    let scale = a.norm_squared();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..D {
            for q in (p + 1)..D {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off == 0.0 || off <= 1e-32 * scale {
            break;
        }
        for p in 0..D {
            for q in (p + 1)..D {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                rotate_columns(&mut a, p, q, c, s);
                rotate_rows(&mut a, p, q, c, s);
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                rotate_columns(&mut v, p, q, c, s);
            }
        }
    }
    (a.diagonal(), v)
}

/// Symmetric positive semi-definite square root factor `Q·diag(√λ)`, with
/// negative rounding eigenvalues clamped to zero.
pub fn psd_sqrt_factor<const D: usize>(s: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    let (values, vectors) = symmetric_eigen(s);
    let mut factor = vectors;
    for i in 0..D {
        factor.column_mut(i).scale_mut(libm::sqrt(values[i].max(0.0)));
    }
    factor
}

#[inline]
fn rotate_columns<const D: usize>(m: &mut SMatrix<f64, D, D>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..D {
        let mp = m[(k, p)];
        let mq = m[(k, q)];
        m[(k, p)] = c * mp - s * mq;
        m[(k, q)] = s * mp + c * mq;
    }
}

#[inline]
fn rotate_rows<const D: usize>(m: &mut SMatrix<f64, D, D>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..D {
        let mp = m[(p, k)];
        let mq = m[(q, k)];
        m[(p, k)] = c * mp - s * mq;
        m[(q, k)] = s * mp + c * mq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn mat4(vals: &[f64]) -> Matrix4<f64> {
        Matrix4::from_row_slice(vals)
    }

    #[test]
    fn svd_of_diagonal() {
        let m = SMatrix::<f64, 2, 2>::new(2.0, 0.0, 0.0, 1.0e-30);
        let d = svd(&m);
        let mut s: std::vec::Vec<f64> = d.singular_values.iter().copied().collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(s, [1.0e-30, 2.0]);
    }

    proptest! {
        #[test]
        fn svd_reconstructs(vals in proptest::collection::vec(-3.0f64..3.0, 16)) {
            let m = mat4(&vals);
            let d = svd(&m);
            let rebuilt = d.u * SMatrix::from_diagonal(&d.singular_values) * d.v.transpose();
            prop_assert!((rebuilt - m).norm() <= 1e-12 * (1.0 + m.norm()));
            prop_assert!((d.v.transpose() * d.v - Matrix4::identity()).norm() < 1e-12);
        }

        #[test]
        fn eigen_reconstructs(vals in proptest::collection::vec(-3.0f64..3.0, 16)) {
            let m = mat4(&vals);
            let s = m * m.transpose();
            let (l, q) = symmetric_eigen(&s);
            let rebuilt = q * SMatrix::from_diagonal(&l) * q.transpose();
            prop_assert!((rebuilt - s).norm() <= 1e-12 * (1.0 + s.norm()));
            prop_assert!((q.transpose() * q - Matrix4::identity()).norm() < 1e-12);
            let f = psd_sqrt_factor(&s);
            prop_assert!((f * f.transpose() - s).norm() <= 1e-11 * (1.0 + s.norm()));
        }
    }
}
