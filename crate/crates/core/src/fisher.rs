//! Information matrices over `x = (φ, ε_1, …, ε_ℓ)` and the effective
//! Fisher information `F_eff = 1 / [(I_prior + F)⁻¹]₁₁`.
//!
//! `F_Q` follows the covariance convention `[F_Q]_ij = ⟨H_i H_j⟩ − ⟨H_i⟩⟨H_j⟩`
//! (no factor 4). The classical Fisher information of a pure-state readout is
//! the usual `Σ ∂P ∂P / P`; under an ideal echo it approaches `4 F_Q`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::error_model::CouplingMatrix;
use crate::fock::{occupancy_moments, StateVector};

/// Outcomes below this probability are left out of CFI sums.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Relative cut-off for the numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// `⟨n̂_i n̂_j⟩ − ⟨n̂_i⟩⟨n̂_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyCovariance {
    pub matrix: DMatrix<f64>,
}

pub fn occupancy_covariance(state: &StateVector) -> Result<OccupancyCovariance> {
    let (mean, second) = occupancy_moments(state)?;
    let cov = second - &mean * mean.transpose();
    Ok(OccupancyCovariance {
        matrix: symmetrize(&cov),
    })
}

/// `F_Q = f F_N fᵀ`.
pub fn qfi_matrix(state: &StateVector, coupling: &CouplingMatrix) -> Result<DMatrix<f64>> {
    if coupling.mode_count() != state.basis().mode_count() {
        return Err(Error::DimensionMismatch {
            expected: state.basis().mode_count(),
            actual: coupling.mode_count(),
        });
    }
    let f_n = occupancy_covariance(state)?.matrix;
    Ok(qfi_from_covariance(&f_n, coupling.rows()))
}

pub fn qfi_from_covariance(f_n: &DMatrix<f64>, rows: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(rows * f_n * rows.transpose()))
}

/// Direct covariance of the diagonal generators `H_0, …, H_ℓ`.
pub fn generator_covariance(state: &StateVector, coupling: &CouplingMatrix) -> Result<DMatrix<f64>> {
    let gens = coupling.generator_diagonals(state.basis())?;
    let probs = state.probabilities();
    let k = gens.len();
    let means: Vec<f64> = gens
        .iter()
        .map(|g| g.iter().zip(&probs).map(|(x, p)| x * p).sum())
        .collect();
    Ok(DMatrix::from_fn(k, k, |i, j| {
        gens[i]
            .iter()
            .zip(&gens[j])
            .zip(&probs)
            .map(|((a, b), p)| p * (a - means[i]) * (b - means[j]))
            .sum()
    }))
}

/// `F_ij = Σ_n ∂_i P_n ∂_j P_n / P_n` over outcomes with `P_n > PROBABILITY_FLOOR`.
///
/// `gradients[i][n]` is `∂P_n/∂x_i`.
pub fn cfi_matrix(probabilities: &[f64], gradients: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = gradients.len();
    if gradients.iter().any(|g| g.len() != probabilities.len()) {
        return Err(invalid("every gradient needs one entry per outcome"));
    }
    let mut f = DMatrix::zeros(k, k);
    for (n, &p) in probabilities.iter().enumerate() {
        if p <= PROBABILITY_FLOOR {
            continue;
        }
        for i in 0..k {
            let gi = gradients[i][n] / p;
            for j in i..k {
                f[(i, j)] += gi * gradients[j][n];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            f[(i, j)] = f[(j, i)];
        }
    }
    Ok(f)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `1 / [(prior + info)⁻¹]₁₁` via one symmetric solve.
pub fn effective_fisher(prior: &DMatrix<f64>, info: &DMatrix<f64>) -> Result<f64> {
    if prior.shape() != info.shape() || !prior.is_square() || prior.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: prior.nrows(),
            actual: info.nrows(),
        });
    }
    let total = symmetrize(&(prior + info));
    let mut e1 = DVector::zeros(total.nrows());
    e1[0] = 1.0;
    let column = match total.clone().cholesky() {
        Some(ch) => ch.solve(&e1),
        None => total
            .lu()
            .solve(&e1)
            .ok_or(Error::Singular("effective Fisher information"))?,
    };
    if !(column[0] > 0.0 && column[0].is_finite()) {
        return Err(Error::Singular("effective Fisher information"));
    }
    Ok(1.0 / column[0])
}

/// `I_φ + ν (F_eff⁽¹⁾ − I_φ)`.
pub fn effective_fisher_after(nu: usize, f_eff_1: f64, prior_phi: f64) -> f64 {
    prior_phi + nu as f64 * (f_eff_1 - prior_phi)
}

/// Joint prior plus Fisher matrix after `shots` datapoints with fresh errors.
///
/// Variables are ordered `(φ, ε⁽¹⁾, …, ε⁽ᵅ⁾)`; the result is the
/// `(1 + αℓ)`-square arrowhead-block matrix whose `φφ` entry is
/// `I_φ + α F_φφ`, whose `φ, ε⁽ᵏ⁾` blocks are the single-shot cross terms and
/// whose `ε⁽ᵏ⁾` diagonal blocks are `I_ε + F_εε`.
pub fn multi_shot_information(prior: &DMatrix<f64>, cfi: &DMatrix<f64>, shots: usize) -> DMatrix<f64> {
    let k = prior.nrows();
    let l = k - 1;
    let dim = 1 + shots * l;
    let mut m = DMatrix::zeros(dim, dim);
    m[(0, 0)] = prior[(0, 0)] + shots as f64 * cfi[(0, 0)];
    for s in 0..shots {
        let off = 1 + s * l;
        for i in 0..l {
            m[(0, off + i)] = cfi[(0, 1 + i)];
            m[(off + i, 0)] = cfi[(1 + i, 0)];
            for j in 0..l {
                m[(off + i, off + j)] = prior[(1 + i, 1 + j)] + cfi[(1 + i, 1 + j)];
            }
        }
    }
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FisherBundle {
    pub prior: DMatrix<f64>,
    pub cfi: DMatrix<f64>,
    pub qfi: DMatrix<f64>,
    pub f_eff: f64,
    pub f_eff_qfi_bound: f64,
}

impl FisherBundle {
    /// `qfi` must already be in the same normalization as `cfi`.
    pub fn new(prior: DMatrix<f64>, cfi: DMatrix<f64>, qfi: DMatrix<f64>) -> Result<Self> {
        let f_eff = effective_fisher(&prior, &cfi)?;
        let f_eff_qfi_bound = effective_fisher(&prior, &qfi)?;
        Ok(Self {
            prior,
            cfi,
            qfi,
            f_eff,
            f_eff_qfi_bound,
        })
    }

    pub fn prior_phi(&self) -> f64 {
        self.prior[(0, 0)]
    }

    /// `F_eff` after `nu` datapoints.
    pub fn f_eff_after(&self, nu: usize) -> f64 {
        effective_fisher_after(nu, self.f_eff, self.prior_phi())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoewnerReport {
    pub f_eff_cfi: f64,
    pub f_eff_qfi: f64,
    /// Smallest eigenvalue of `qfi − cfi`.
    pub min_gap_eigenvalue: f64,
    pub holds: bool,
}

/// Checks `F_eff(cfi) ≤ F_eff(qfi) + 1e-8` and reports the `qfi − cfi` gap.
pub fn loewner_bound_check(
    prior: &DMatrix<f64>,
    cfi: &DMatrix<f64>,
    qfi: &DMatrix<f64>,
) -> Result<LoewnerReport> {
    let f_eff_cfi = effective_fisher(prior, cfi)?;
    let f_eff_qfi = effective_fisher(prior, qfi)?;
    let gap = SymmetricEigen::new(symmetrize(&(qfi - cfi))).eigenvalues;
    let min_gap_eigenvalue = gap.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LoewnerReport {
        f_eff_cfi,
        f_eff_qfi,
        min_gap_eigenvalue,
        holds: f_eff_cfi <= f_eff_qfi + 1e-8 * f_eff_qfi.max(1.0),
    })
}

/// `F_k + 1/σ_max² ≤ λ_k ≤ F_k + 1/σ_min²` for the eigenvalues `λ_k` of
/// `I_prior + F_Q`, both spectra ascending.
pub fn weyl_eigen_bounds(prior_sigmas: &[f64], qfi_eigenvalues: &[f64]) -> Result<Vec<(f64, f64)>> {
    if prior_sigmas.is_empty() || prior_sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("prior widths must be positive"));
    }
    let s_min = prior_sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    let s_max = prior_sigmas.iter().copied().fold(0.0, f64::max);
    let mut f = qfi_eigenvalues.to_vec();
    f.sort_by(f64::total_cmp);
    Ok(f.iter()
        .map(|fk| (fk + 1.0 / (s_max * s_max), fk + 1.0 / (s_min * s_min)))
        .collect())
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `rank F_Q = min(L − 1, ℓ + 1)`.
pub fn rank_prediction(modes: usize, channels: usize) -> usize {
    modes.saturating_sub(1).min(channels + 1)
}

/// Singular values below `RANK_THRESHOLD × largest` count as zero.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= RANK_THRESHOLD * max).count()
}

/// `N(N+L) / (L(L+1))`.
pub fn typical_f_min(atoms: usize, modes: usize) -> f64 {
    let (n, l) = (atoms as f64, modes as f64);
    n * (n + l) / (l * (l + 1.0))
}

/// Haar-typical occupancy covariance `c (1 − J/L)` with `c = typical_f_min`.
pub fn typical_f_n(atoms: usize, modes: usize) -> DMatrix<f64> {
    let c = typical_f_min(atoms, modes);
    let l = modes as f64;
    DMatrix::from_fn(modes, modes, |i, j| {
        c * (if i == j { 1.0 } else { 0.0 } - 1.0 / l)
    })
}

/// Limit of `F_eff` as the information matrix is scaled to infinity.
///
/// With `Z` spanning the null space of `info`, this is
/// `1 / [Z (Zᵀ P Z)⁻¹ Zᵀ]₁₁`; `None` when `e₁` has no overlap with the null
/// space, in which case `F_eff` grows without bound.
pub fn saturation_ceiling(prior: &DMatrix<f64>, info: &DMatrix<f64>) -> Option<f64> {
    let eig = SymmetricEigen::new(symmetrize(info));
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let null: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] < RANK_THRESHOLD * max.max(f64::MIN_POSITIVE))
        .collect();
    if null.is_empty() {
        return None;
    }
    let z = eig.eigenvectors.select_columns(&null);
    let inner = z.transpose() * prior * &z;
    let inv = inner.try_inverse()?;
    let value = (&z * inv * z.transpose())[(0, 0)];
    (value > 1e-14).then(|| 1.0 / value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_model::{build_coupling, ErrorModel};
    use crate::fock::build_basis;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn covariance_examples() {
        let basis = build_basis(4, 3).unwrap();
        let s = StateVector::all_in_first_site(basis);
        assert_eq!(occupancy_covariance(&s).unwrap().matrix, DMatrix::zeros(3, 3));

        let basis = build_basis(1, 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = StateVector::new(basis, vec![Complex64::new(h, 0.0), Complex64::new(0.0, h)]).unwrap();
        let cov = occupancy_covariance(&s).unwrap().matrix;
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((cov - expected).abs().max() < 1e-14);
    }

    #[test]
    fn qfi_routes_agree_and_ignore_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = build_basis(5, 4).unwrap();
        let amps = (0..basis.dim())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let s = StateVector::normalized(basis, amps).unwrap();
        let model = ErrorModel::random_uniform(2, 4, 0.01, 0.01, &mut rng).unwrap();
        let raw = build_coupling(&model, false);
        let centered = build_coupling(&model, true);
        let q = qfi_matrix(&s, &raw).unwrap();
        assert!((&q - generator_covariance(&s, &raw).unwrap()).abs().max() < 1e-10);
        assert!((&q - qfi_matrix(&s, &centered).unwrap()).abs().max() < 1e-10);
        assert!(sorted_eigenvalues(&q)[0] > -1e-10);
        assert_eq!(q, q.transpose());

        let f_n = occupancy_covariance(&s).unwrap().matrix;
        for row in f_n.row_iter() {
            assert!(row.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn qfi_of_fock_state_vanishes() {
        let basis = build_basis(3, 2).unwrap();
        let s = StateVector::all_in_first_site(basis);
        let m = ErrorModel::with_modes(vec![], vec![], 0.1, Some(2)).unwrap();
        let q = qfi_matrix(&s, &build_coupling(&m, false)).unwrap();
        assert_eq!(q, DMatrix::zeros(1, 1));
    }

    #[test]
    fn cfi_two_outcome() {
        for phi in [0.3, std::f64::consts::FRAC_PI_2, 2.0] {
            let p = (phi / 2.0f64).cos().powi(2);
            let dp = -phi.sin() / 2.0;
            let f = cfi_matrix(&[p, 1.0 - p], &[vec![dp, -dp]]).unwrap();
            assert!((f[(0, 0)] - 1.0).abs() < 1e-12);
        }
        let f = cfi_matrix(&[1.0, 0.0], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(f, DMatrix::zeros(2, 2));
        assert!(cfi_matrix(&[1.0, 0.0], &[vec![0.0]]).is_err());
    }

    #[test]
    fn effective_fisher_examples() {
        let f = effective_fisher(&diag(&[100.0, 10_000.0]), &diag(&[7.0, 3.0])).unwrap();
        assert!((f - 107.0).abs() < 1e-10);

        // Direct 2×2 inversion: M = [[104, 2], [2, 10001]], [M⁻¹]₁₁ = 10001 / det.
        let info = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]);
        let f = effective_fisher(&diag(&[100.0, 10_000.0]), &info).unwrap();
        let det = 104.0 * 10_001.0 - 4.0;
        assert!((f - det / 10_001.0).abs() < 1e-9);
        assert!((f - 1_040_100.0 / 10_001.0).abs() < 1e-9);

        // Rank-one information saturates at p + q.
        let (p, q) = (100.0, 400.0);
        let ones = DMatrix::from_element(2, 2, 1.0);
        let mut last = 0.0;
        for g in [1e2, 1e4, 1e6, 1e8] {
            let f = effective_fisher(&diag(&[p, q]), &(&ones * g)).unwrap();
            assert!(f >= last);
            last = f;
        }
        assert!((last - (p + q)).abs() / (p + q) < 1e-5);

        assert!(effective_fisher(&diag(&[1.0]), &diag(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn nu_linearity() {
        assert_eq!(effective_fisher_after(1, 104.0, 100.0), 104.0);
        assert_eq!(effective_fisher_after(3, 104.0, 100.0), 112.0);
        assert_eq!(effective_fisher_after(0, 104.0, 100.0), 100.0);
    }

    #[test]
    fn multi_shot_matches_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prior = diag(&[50.0, 300.0, 800.0]);
        let cfi = random_psd(3, &mut rng) * 40.0;
        let f1 = effective_fisher(&prior, &cfi).unwrap();
        let m = multi_shot_information(&prior, &cfi, 2);
        assert_eq!(m.shape(), (5, 5));
        let direct = 1.0 / m.try_inverse().unwrap()[(0, 0)];
        let predicted = effective_fisher_after(2, f1, 50.0);
        assert!((direct - predicted).abs() / predicted < 1e-10);
        assert_eq!(multi_shot_information(&prior, &cfi, 1), prior + cfi);
    }

    #[test]
    fn loewner_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let prior = diag(&[1e4, 1e4, 1e4]);
        let q = random_psd(3, &mut rng) * 1e4;
        let r = loewner_bound_check(&prior, &q, &q).unwrap();
        assert!(r.holds && (r.f_eff_cfi - r.f_eff_qfi).abs() < 1e-8);

        let r = loewner_bound_check(&prior, &DMatrix::zeros(3, 3), &q).unwrap();
        assert!((r.f_eff_cfi - 1e4).abs() < 1e-8 && r.holds);

        let bad = &q + DMatrix::identity(3, 3) * 1e3;
        let r = loewner_bound_check(&prior, &bad, &q).unwrap();
        assert!(!r.holds);
        assert!(r.min_gap_eigenvalue < 0.0);
    }

    #[test]
    fn weyl_examples() {
        let b = weyl_eigen_bounds(&[0.1, 0.1], &[2.0, 5.0]).unwrap();
        for ((lo, hi), want) in b.iter().zip([102.0, 105.0]) {
            assert!((lo - want).abs() < 1e-10 && (hi - want).abs() < 1e-10);
        }
        let b = weyl_eigen_bounds(&[0.5], &[3.0]).unwrap();
        assert!((b[0].0 - 7.0).abs() < 1e-12 && (b[0].1 - 7.0).abs() < 1e-12);
        assert!(weyl_eigen_bounds(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_prediction(4, 4), 3);
        assert_eq!(rank_prediction(6, 4), 5);
        assert_eq!(rank_prediction(2, 0), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 2)), 0);
        assert_eq!(numerical_rank(&DMatrix::from_element(3, 3, 2.0)), 1);
    }

    #[test]
    fn typical_values() {
        assert_eq!(typical_f_min(100, 4), 520.0);
        assert!((typical_f_min(20, 3) - 38.333_333_333).abs() < 1e-8);
        let f = typical_f_n(7, 5);
        for row in f.row_iter() {
            assert!(row.sum().abs() < 1e-12);
        }
        let ev = sorted_eigenvalues(&f);
        assert!(ev[0].abs() < 1e-10);
        for e in &ev[1..] {
            assert!((e - typical_f_min(7, 5)).abs() < 1e-10);
        }
    }

    #[test]
    fn ceiling_bounds_saturating_information() {
        let prior = diag(&[1e4, 1e4, 1e4]);
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.5, -0.2]);
        let w = DMatrix::from_column_slice(3, 1, &[0.3, -1.0, 0.5]);
        let shape = &v * v.transpose() + &w * w.transpose();
        let ceiling = saturation_ceiling(&prior, &shape).unwrap();
        let f = effective_fisher(&prior, &(&shape * 1e12)).unwrap();
        assert!(f <= ceiling * (1.0 + 1e-9));
        assert!((f - ceiling).abs() / ceiling < 1e-3);
        assert!(saturation_ceiling(&prior, &DMatrix::identity(3, 3)).is_none());
    }
}
