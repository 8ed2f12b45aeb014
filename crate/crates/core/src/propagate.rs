//! Time evolution `exp(-i t H)` under a real symmetric hopping operator.
//!
//! Small spaces use a dense eigendecomposition. Larger ones use a
//! sub-stepped Taylor series on the sparse operator, where every sub-step
//! has `|h|·‖H‖ ≤ 1` and the series is cut once a term drops below
//! `1e-16` of the running sum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::fock::HoppingOperator;

/// Largest dimension for which [`ExpmMethod::Auto`] picks the eigensolver.
pub const EIGEN_DIM_LIMIT: usize = 300;

const TAYLOR_TOL: f64 = 1e-16;
const TAYLOR_MAX_TERMS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpmMethod {
    #[default]
    Auto,
    Eigen,
    Taylor,
}

#[derive(Debug, Clone)]
enum Kernel {
    Eigen {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
    },
    Taylor {
        norm: f64,
    },
}

#[derive(Debug, Clone)]
pub struct HoppingPropagator {
    op: HoppingOperator,
    kernel: Kernel,
}

impl HoppingPropagator {
    pub fn new(op: HoppingOperator, method: ExpmMethod) -> Self {
        let use_eigen = match method {
            ExpmMethod::Eigen => true,
            ExpmMethod::Taylor => false,
            ExpmMethod::Auto => op.dim() <= EIGEN_DIM_LIMIT,
        };
        let kernel = if use_eigen {
            let eig = SymmetricEigen::new(op.to_dense());
            Kernel::Eigen {
                vectors: eig.eigenvectors,
                values: eig.eigenvalues,
            }
        } else {
            Kernel::Taylor {
                norm: op.norm_bound(),
            }
        };
        Self { op, kernel }
    }

    pub fn operator(&self) -> &HoppingOperator {
        &self.op
    }

    /// `psi ← exp(-i t H) psi`.
    pub fn apply(&self, t: f64, psi: &mut [Complex64]) {
        if t == 0.0 {
            return;
        }
        match &self.kernel {
            Kernel::Eigen { vectors, values } => apply_eigen(vectors, values, t, psi),
            Kernel::Taylor { norm } => apply_taylor(&self.op, *norm, t, psi),
        }
    }
}

fn apply_eigen(vectors: &DMatrix<f64>, values: &DVector<f64>, t: f64, psi: &mut [Complex64]) {
    let d = psi.len();
    let re = DVector::from_iterator(d, psi.iter().map(|z| z.re));
    let im = DVector::from_iterator(d, psi.iter().map(|z| z.im));
    let mut cre = vectors.tr_mul(&re);
    let mut cim = vectors.tr_mul(&im);
    for k in 0..d {
        let phase = Complex64::from_polar(1.0, -t * values[k]);
        let z = Complex64::new(cre[k], cim[k]) * phase;
        cre[k] = z.re;
        cim[k] = z.im;
    }
    let out_re = vectors * cre;
    let out_im = vectors * cim;
    for (k, z) in psi.iter_mut().enumerate() {
        *z = Complex64::new(out_re[k], out_im[k]);
    }
}

fn apply_taylor(op: &HoppingOperator, norm: f64, t: f64, psi: &mut [Complex64]) {
    if norm == 0.0 {
        return;
    }
    let steps = (t.abs() * norm).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let d = psi.len();
    let mut term = vec![Complex64::new(0.0, 0.0); d];
    let mut next = vec![Complex64::new(0.0, 0.0); d];
    for _ in 0..steps {
        term.copy_from_slice(psi);
        let scale = l2(psi);
        for k in 1..=TAYLOR_MAX_TERMS {
            op.apply_into(&term, &mut next);
            let factor = Complex64::new(0.0, -h / k as f64);
            for (n, p) in next.iter_mut().zip(psi.iter_mut()) {
                *n *= factor;
                *p += *n;
            }
            std::mem::swap(&mut term, &mut next);
            if l2(&term) <= TAYLOR_TOL * scale {
                break;
            }
        }
    }
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_basis, hopping_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..d)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn taylor_matches_eigen() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, l) in [(1, 2), (4, 3), (6, 4), (12, 3)] {
            let basis = build_basis(n, l).unwrap();
            let weights: Vec<f64> = (0..l - 1).map(|_| rng.random_range(0.0..1.0)).collect();
            let op = hopping_matrix(&basis, &weights).unwrap();
            let eig = HoppingPropagator::new(op.clone(), ExpmMethod::Eigen);
            let tay = HoppingPropagator::new(op, ExpmMethod::Taylor);
            for t in [0.3, -1.1, 4.0] {
                let v = random_vec(basis.dim(), &mut rng);
                let (mut a, mut b) = (v.clone(), v);
                eig.apply(t, &mut a);
                tay.apply(t, &mut b);
                let diff = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
                assert!(diff < 1e-10, "n={n} l={l} t={t} diff={diff}");
            }
        }
    }

    #[test]
    fn forward_then_backward_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let basis = build_basis(8, 3).unwrap();
        let op = hopping_matrix(&basis, &[0.7, 0.4]).unwrap();
        for method in [ExpmMethod::Eigen, ExpmMethod::Taylor] {
            let p = HoppingPropagator::new(op.clone(), method);
            let v = random_vec(basis.dim(), &mut rng);
            let mut w = v.clone();
            p.apply(2.5, &mut w);
            p.apply(-2.5, &mut w);
            let diff = v.iter().zip(&w).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-11);
        }
    }

    #[test]
    fn two_mode_rotation() {
        let basis = build_basis(1, 2).unwrap();
        let op = hopping_matrix(&basis, &[1.0]).unwrap();
        let t = std::f64::consts::FRAC_PI_4;
        for method in [ExpmMethod::Eigen, ExpmMethod::Taylor] {
            let p = HoppingPropagator::new(op.clone(), method);
            let mut v = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
            p.apply(t, &mut v);
            assert!((v[0] - Complex64::new(t.cos(), 0.0)).norm() < 1e-14);
            assert!((v[1] - Complex64::new(0.0, -t.sin())).norm() < 1e-14);
        }
    }
}
