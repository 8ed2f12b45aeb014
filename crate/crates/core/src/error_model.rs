//! Spatial-inhomogeneity error channels.
//!
//! During shot `α` the on-site potential is `η z + Σ_i ε_i^{(α)} f_i(z)` with
//! `ε_i ~ N(0, σ_i)` drawn afresh each shot. Sampled at the lattice sites the
//! profiles become the rows of the coupling matrix: row 0 holds the tilt
//! coefficients `j` of `H₀ = Σ_j j n̂_j`, rows `1..=ℓ` hold `f_ij` so that
//! `H_i = Σ_j f_ij n̂_j`.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{DiagonalObservable, FockBasis};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorModel {
    /// Lattice coordinates `z_j`; defaults to `1..=L`.
    pub site_positions: Vec<f64>,
    /// `f_ij = f_i(z_j)`, one row per error channel.
    pub profiles: Vec<Vec<f64>>,
    /// Standard deviation of each `ε_i`.
    pub sigmas: Vec<f64>,
    /// Prior width on `φ`.
    pub sigma_phi: f64,
    /// Phase-acquisition time; scales the error phases.
    pub tau: f64,
}

impl ErrorModel {
    /// A model with explicit profile rows and one `σ` per row.
    ///
    /// Zero `σ` is accepted and switches that channel off when sampling;
    /// [`prior_information`] still requires strictly positive widths.
    pub fn new(profiles: Vec<Vec<f64>>, sigmas: Vec<f64>, sigma_phi: f64) -> Result<Self> {
        let modes = profiles.first().map(Vec::len);
        Self::with_modes(profiles, sigmas, sigma_phi, modes)
    }

    /// Same as [`ErrorModel::new`] but fixes `L` even when there are no channels.
    pub fn with_modes(
        profiles: Vec<Vec<f64>>,
        sigmas: Vec<f64>,
        sigma_phi: f64,
        modes: Option<usize>,
    ) -> Result<Self> {
        let modes = modes.ok_or_else(|| invalid("mode count required when ℓ = 0"))?;
        if modes == 0 {
            return Err(invalid("at least one site is required"));
        }
        if profiles.iter().any(|row| row.len() != modes) {
            return Err(invalid("every profile row must have one entry per site"));
        }
        if profiles.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("profile values must be finite"));
        }
        if sigmas.len() != profiles.len() {
            return Err(Error::DimensionMismatch {
                expected: profiles.len(),
                actual: sigmas.len(),
            });
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("error widths must be finite and non-negative"));
        }
        if !(sigma_phi.is_finite() && sigma_phi > 0.0) {
            return Err(invalid("σ_φ must be positive"));
        }
        Ok(Self {
            site_positions: (1..=modes).map(|j| j as f64).collect(),
            profiles,
            sigmas,
            sigma_phi,
            tau: 1.0,
        })
    }

    /// `ℓ` channels with every `f_ij` uniform in `[-1, 1]` and a common width.
    pub fn random_uniform<R: Rng + ?Sized>(
        channels: usize,
        modes: usize,
        sigma_err: f64,
        sigma_phi: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        let profiles = (0..channels)
            .map(|_| (0..modes).map(|_| dist.sample(rng)).collect())
            .collect();
        Self::with_modes(profiles, vec![sigma_err; channels], sigma_phi, Some(modes))
    }

    /// Reads a profile table: one row per channel, one column per site.
    /// Lines starting with `#` are ignored.
    pub fn read_profiles<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .parse::<f64>()
                        .map_err(|e| invalid(format!("bad profile value {field:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
        Self::read_profiles(std::fs::File::open(path)?)
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn channel_count(&self) -> usize {
        self.profiles.len()
    }

    pub fn mode_count(&self) -> usize {
        self.site_positions.len()
    }
}

/// One shot's error vector `(ε_1, …, ε_ℓ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDraw {
    pub epsilon: Vec<f64>,
}

impl ErrorDraw {
    pub fn zeros(channels: usize) -> Self {
        Self {
            epsilon: vec![0.0; channels],
        }
    }
}

pub fn sample_errors<R: Rng + ?Sized>(model: &ErrorModel, rng: &mut R) -> ErrorDraw {
    let epsilon = model
        .sigmas
        .iter()
        .map(|&s| Normal::new(0.0, s).expect("σ validated").sample(rng))
        .collect();
    ErrorDraw { epsilon }
}

/// `(ℓ+1) × L` coefficients of `n̂_j` in `H₀, H₁, …, H_ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    rows: DMatrix<f64>,
    centered: bool,
}

impl CouplingMatrix {
    pub fn from_rows(rows: DMatrix<f64>, centered: bool) -> Self {
        Self { rows, centered }
    }

    /// Gravity row followed by orthonormal error rows, all orthogonal to
    /// `(1, …, 1)`: `L − 1` rows in total, so `ℓ = L − 2`.
    ///
    /// Row 0 is the centered tilt `j − (L+1)/2` scaled to unit length. With
    /// this coupling the spectrum of `f F_N fᵀ` is the nonzero spectrum of
    /// `F_N` itself.
    pub fn orthonormal_complement(modes: usize) -> Result<Self> {
        if modes < 2 {
            return Err(invalid("need at least two sites"));
        }
        let mean = (modes as f64 + 1.0) / 2.0;
        let ones = DVector::from_element(modes, 1.0 / (modes as f64).sqrt());
        let mut basis: Vec<DVector<f64>> = vec![ones];
        let mut rows = Vec::with_capacity(modes - 1);
        let candidates = std::iter::once(DVector::from_fn(modes, |j, _| j as f64 + 1.0 - mean))
            .chain((0..modes).map(|k| DVector::from_fn(modes, |j, _| f64::from(j == k))));
        for mut v in candidates {
            for b in &basis {
                v -= b * b.dot(&v);
            }
            let n = v.norm();
            if n > 1e-8 {
                v /= n;
                rows.push(v.clone());
                basis.push(v);
            }
            if rows.len() == modes - 1 {
                break;
            }
        }
        let rows = DMatrix::from_fn(modes - 1, modes, |i, j| rows[i][j]);
        Ok(Self {
            rows,
            centered: true,
        })
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// `ℓ`, the number of error rows.
    pub fn channel_count(&self) -> usize {
        self.rows.nrows() - 1
    }

    pub fn mode_count(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, channel: usize) -> Vec<f64> {
        self.rows.row(channel).iter().copied().collect()
    }

    /// Diagonals of every generator in `basis`, row-major `[channel][state]`.
    pub fn generator_diagonals(&self, basis: &FockBasis) -> Result<Vec<Vec<f64>>> {
        if basis.mode_count() != self.mode_count() {
            return Err(Error::DimensionMismatch {
                expected: self.mode_count(),
                actual: basis.mode_count(),
            });
        }
        Ok((0..self.rows.nrows())
            .map(|c| {
                let row = self.rows.row(c);
                basis.map_states(|occ| occ.iter().zip(row.iter()).map(|(&n, f)| f * n as f64).sum())
            })
            .collect())
    }
}

pub fn build_coupling(model: &ErrorModel, center: bool) -> CouplingMatrix {
    let modes = model.mode_count();
    let channels = model.channel_count();
    let mut rows = DMatrix::zeros(channels + 1, modes);
    for j in 0..modes {
        rows[(0, j)] = (j + 1) as f64;
        for i in 0..channels {
            rows[(i + 1, j)] = model.profiles[i][j];
        }
    }
    if center {
        for mut row in rows.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
    }
    CouplingMatrix {
        rows,
        centered: center,
    }
}

/// `diag(1/σ_φ², 1/σ_1², …, 1/σ_ℓ²)`.
pub fn prior_information(model: &ErrorModel) -> Result<DMatrix<f64>> {
    let widths: Vec<f64> = std::iter::once(model.sigma_phi)
        .chain(model.sigmas.iter().copied())
        .collect();
    if widths.iter().any(|&s| !(s > 0.0)) {
        return Err(invalid("prior information needs strictly positive widths"));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_iterator(
        widths.len(),
        widths.iter().map(|s| 1.0 / (s * s)),
    )))
}

/// `H_channel = Σ_j rows[channel][j] n̂_j`; channel 0 is the tilt.
pub fn error_generator(
    coupling: &CouplingMatrix,
    channel: usize,
    basis: &Arc<FockBasis>,
) -> Result<DiagonalObservable> {
    if channel > coupling.channel_count() {
        return Err(Error::OutOfRange {
            index: channel,
            max: coupling.channel_count(),
        });
    }
    DiagonalObservable::linear(basis.clone(), &coupling.row(channel))
}
