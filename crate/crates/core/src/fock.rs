//! Fixed-particle-number Fock space of `N` bosons in `L` modes.
//!
//! Basis states are ordered lexicographically descending: site 1 occupation
//! runs from `N` down to 0, then site 2 within that block, and so on. For
//! `N = 2, L = 2` this gives `(2,0), (1,1), (0,2)`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Default cap on the number of basis states.
pub const DEFAULT_DIMENSION_CAP: usize = 200_000;

const NORM_TOLERANCE: f64 = 1e-10;
const MOMENT_NORM_TOLERANCE: f64 = 1e-8;

/// `binomial(n, k)` in 128-bit arithmetic, saturating on overflow.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of Fock states of `atoms` bosons in `modes` modes.
pub fn fock_dimension(atoms: usize, modes: usize) -> u128 {
    if modes == 0 {
        return 0;
    }
    binomial((atoms + modes - 1) as u64, atoms as u64)
}

#[derive(Debug, Clone)]
pub struct FockBasis {
    atoms: usize,
    modes: usize,
    occupations: Vec<u32>,
    index: HashMap<Vec<u32>, usize>,
}

impl FockBasis {
    pub fn new(atoms: usize, modes: usize) -> Result<Self> {
        Self::with_cap(atoms, modes, DEFAULT_DIMENSION_CAP)
    }

    pub fn with_cap(atoms: usize, modes: usize, cap: usize) -> Result<Self> {
        if modes == 0 {
            return Err(invalid("mode count must be at least 1"));
        }
        let dimension = fock_dimension(atoms, modes);
        if dimension > cap as u128 {
            return Err(Error::DimensionCap {
                atoms,
                modes,
                dimension,
                cap,
            });
        }
        let dim = dimension as usize;
        let mut occupations = Vec::with_capacity(dim * modes);
        let mut current = vec![0u32; modes];
        enumerate(atoms as u32, 0, &mut current, &mut occupations);
        debug_assert_eq!(occupations.len(), dim * modes);

        let index = occupations
            .chunks_exact(modes)
            .enumerate()
            .map(|(k, occ)| (occ.to_vec(), k))
            .collect();
        Ok(Self {
            atoms,
            modes,
            occupations,
            index,
        })
    }

    pub fn atom_count(&self) -> usize {
        self.atoms
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn dim(&self) -> usize {
        self.occupations.len() / self.modes
    }

    /// Occupation vector of basis state `k`.
    pub fn state(&self, k: usize) -> &[u32] {
        &self.occupations[k * self.modes..(k + 1) * self.modes]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.occupations.chunks_exact(self.modes)
    }

    pub fn index_of(&self, occupation: &[u32]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// Evaluates `f` on every basis state, giving a diagonal in this basis.
    pub fn map_states<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[u32]) -> f64,
    {
        self.states().map(f).collect()
    }
}

fn enumerate(remaining: u32, site: usize, current: &mut [u32], out: &mut Vec<u32>) {
    if site + 1 == current.len() {
        current[site] = remaining;
        out.extend_from_slice(current);
        return;
    }
    for n in (0..=remaining).rev() {
        current[site] = n;
        enumerate(remaining - n, site + 1, current, out);
    }
}

/// Builds the complete basis; see [`FockBasis::with_cap`] for a custom cap.
pub fn build_basis(atoms: usize, modes: usize) -> Result<Arc<FockBasis>> {
    FockBasis::new(atoms, modes).map(Arc::new)
}

/// Complex amplitudes over a [`FockBasis`], normalized to one.
#[derive(Debug, Clone)]
pub struct StateVector {
    basis: Arc<FockBasis>,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Wraps amplitudes that are already normalized to `1e-10`.
    pub fn new(basis: Arc<FockBasis>, amplitudes: Vec<Complex64>) -> Result<Self> {
        check_len(&basis, amplitudes.len())?;
        let norm_sqr = norm_sqr(&amplitudes);
        if (norm_sqr - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm_sqr });
        }
        Ok(Self { basis, amplitudes })
    }

    /// Rescales arbitrary nonzero amplitudes onto the unit sphere.
    pub fn normalized(basis: Arc<FockBasis>, mut amplitudes: Vec<Complex64>) -> Result<Self> {
        check_len(&basis, amplitudes.len())?;
        let norm = norm_sqr(&amplitudes).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { basis, amplitudes })
    }

    pub fn fock(basis: Arc<FockBasis>, occupation: &[u32]) -> Result<Self> {
        let k = basis
            .index_of(occupation)
            .ok_or_else(|| invalid(format!("{occupation:?} is not a basis state")))?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amplitudes[k] = Complex64::new(1.0, 0.0);
        Ok(Self { basis, amplitudes })
    }

    /// All atoms in site 1: `(a₁†)^N / √N! |vac⟩`.
    pub fn all_in_first_site(basis: Arc<FockBasis>) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self { basis, amplitudes }
    }

    pub(crate) fn from_raw(basis: Arc<FockBasis>, amplitudes: Vec<Complex64>) -> Self {
        debug_assert_eq!(basis.dim(), amplitudes.len());
        Self { basis, amplitudes }
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Expectation of a diagonal observable.
    pub fn expect(&self, observable: &DiagonalObservable) -> f64 {
        self.amplitudes
            .iter()
            .zip(&observable.diagonal)
            .map(|(a, v)| a.norm_sqr() * v)
            .sum()
    }
}

fn norm_sqr(amplitudes: &[Complex64]) -> f64 {
    amplitudes.iter().map(|a| a.norm_sqr()).sum()
}

fn check_len(basis: &FockBasis, len: usize) -> Result<()> {
    if len != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            actual: len,
        });
    }
    Ok(())
}

/// Real observable that is diagonal in the Fock basis.
#[derive(Debug, Clone)]
pub struct DiagonalObservable {
    basis: Arc<FockBasis>,
    diagonal: Vec<f64>,
}

impl DiagonalObservable {
    pub fn new(basis: Arc<FockBasis>, diagonal: Vec<f64>) -> Result<Self> {
        check_len(&basis, diagonal.len())?;
        Ok(Self { basis, diagonal })
    }

    /// `Σ_i coeffs[i] n̂_i`.
    pub fn linear(basis: Arc<FockBasis>, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() != basis.mode_count() {
            return Err(Error::DimensionMismatch {
                expected: basis.mode_count(),
                actual: coeffs.len(),
            });
        }
        let diagonal = basis.map_states(|occ| {
            occ.iter()
                .zip(coeffs)
                .map(|(&n, c)| c * n as f64)
                .sum()
        });
        Ok(Self { basis, diagonal })
    }

    /// `Σ_i detuning[i] n̂_i + interaction[i] n̂_i (n̂_i − 1)`.
    pub fn onsite(basis: Arc<FockBasis>, detuning: &[f64], interaction: &[f64]) -> Result<Self> {
        let modes = basis.mode_count();
        for len in [detuning.len(), interaction.len()] {
            if len != modes {
                return Err(Error::DimensionMismatch {
                    expected: modes,
                    actual: len,
                });
            }
        }
        let diagonal = basis.map_states(|occ| {
            occ.iter()
                .enumerate()
                .map(|(i, &n)| {
                    let n = n as f64;
                    detuning[i] * n + interaction[i] * n * (n - 1.0)
                })
                .sum()
        });
        Ok(Self { basis, diagonal })
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }
}

/// `n̂_site` for a 1-based site index.
pub fn number_diagonal(basis: &Arc<FockBasis>, site: usize) -> Result<DiagonalObservable> {
    if site == 0 || site > basis.mode_count() {
        return Err(Error::OutOfRange {
            index: site,
            max: basis.mode_count(),
        });
    }
    let diagonal = basis.map_states(|occ| occ[site - 1] as f64);
    DiagonalObservable::new(basis.clone(), diagonal)
}

/// Real symmetric hopping operator `Σ_i J_i (a†_i a_{i+1} + a†_{i+1} a_i)`
/// stored in compressed-row form.
#[derive(Debug, Clone)]
pub struct HoppingOperator {
    basis: Arc<FockBasis>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl HoppingOperator {
    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Matrix element `⟨r|H|c⟩` (zero when not stored).
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r)
            .filter(|&(col, _)| col == c)
            .map(|(_, v)| v)
            .sum()
    }

    /// `out = H · input`.
    pub fn apply_into(&self, input: &[Complex64], out: &mut [Complex64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += input[self.col_idx[k]] * self.values[k];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, input: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); input.len()];
        self.apply_into(input, &mut out);
        out
    }

    /// Maximum absolute row sum, an upper bound on the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim())
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for r in 0..d {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

pub fn hopping_matrix(basis: &Arc<FockBasis>, bond_weights: &[f64]) -> Result<HoppingOperator> {
    let modes = basis.mode_count();
    if bond_weights.len() + 1 != modes {
        return Err(Error::DimensionMismatch {
            expected: modes - 1,
            actual: bond_weights.len(),
        });
    }
    if bond_weights.iter().any(|w| !w.is_finite()) {
        return Err(invalid("bond weights must be finite"));
    }

    let d = basis.dim();
    let mut row_ptr = Vec::with_capacity(d + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    let mut target = vec![0u32; modes];
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * modes);
    for occ in basis.states() {
        entries.clear();
        for (i, &j) in bond_weights.iter().enumerate() {
            if j == 0.0 {
                continue;
            }
            // a†_i a_{i+1}: one atom moves from site i+1 to site i.
            if occ[i + 1] > 0 {
                target.copy_from_slice(occ);
                target[i] += 1;
                target[i + 1] -= 1;
                let amp = ((occ[i] as f64 + 1.0) * occ[i + 1] as f64).sqrt();
                entries.push((basis.index_of(&target).expect("N-conserving move"), j * amp));
            }
            // a†_{i+1} a_i: one atom moves from site i to site i+1.
            if occ[i] > 0 {
                target.copy_from_slice(occ);
                target[i] -= 1;
                target[i + 1] += 1;
                let amp = (occ[i] as f64 * (occ[i + 1] as f64 + 1.0)).sqrt();
                entries.push((basis.index_of(&target).expect("N-conserving move"), j * amp));
            }
        }
        entries.sort_unstable_by_key(|&(c, _)| c);
        for &(c, v) in entries.iter() {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(HoppingOperator {
        basis: basis.clone(),
        row_ptr,
        col_idx,
        values,
    })
}

/// Mean occupations `⟨n̂_i⟩` and second moments `⟨n̂_i n̂_j⟩`.
pub fn occupancy_moments(state: &StateVector) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let norm_sqr = state.norm_sqr();
    if (norm_sqr - 1.0).abs() > MOMENT_NORM_TOLERANCE {
        return Err(Error::NotNormalized { norm_sqr });
    }
    let basis = state.basis();
    let modes = basis.mode_count();
    let mut mean = DVector::zeros(modes);
    let mut second = DMatrix::zeros(modes, modes);
    for (occ, amp) in basis.states().zip(state.amplitudes()) {
        let p = amp.norm_sqr();
        if p == 0.0 {
            continue;
        }
        for i in 0..modes {
            let ni = occ[i] as f64;
            mean[i] += p * ni;
            for j in 0..modes {
                second[(i, j)] += p * ni * occ[j] as f64;
            }
        }
    }
    Ok((mean, second))
}
