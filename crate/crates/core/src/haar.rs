//! Haar-random states in a fixed-N Fock sector and the closed-form moments
//! of their occupancy covariance.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fisher::occupancy_covariance;
use crate::fock::{fock_dimension, FockBasis, StateVector};

/// Independent standard complex Gaussians, normalized.
pub fn haar_state<R: Rng + ?Sized>(basis: &Arc<FockBasis>, rng: &mut R) -> StateVector {
    loop {
        let amps: Vec<Complex64> = (0..basis.dim())
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        if let Ok(s) = StateVector::normalized(basis.clone(), amps) {
            return s;
        }
    }
}

/// Haar-averaged covariance entries and leading-order fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaarPrediction {
    pub dimension: f64,
    pub diag_cov: f64,
    pub cross_cov: f64,
    /// `8 (N/L)⁴ / D`, valid for `N, L ≫ 1`.
    pub var_diag: f64,
    /// `(N/L)⁴ / D`, valid for `N, L ≫ 1`.
    pub var_cross: f64,
}

pub fn predicted_haar_moments(atoms: usize, modes: usize) -> Result<HaarPrediction> {
    if atoms < 1 || modes < 2 {
        return Err(invalid("need N ≥ 1 and L ≥ 2"));
    }
    let d = fock_dimension(atoms, modes) as f64;
    let (n, l) = (atoms as f64, modes as f64);
    let scale = d / (d + 1.0);
    let base = n * (n + l) / (l * l * (l + 1.0));
    let filling = n / l;
    Ok(HaarPrediction {
        dimension: d,
        diag_cov: scale * base * (l - 1.0),
        cross_cov: -scale * base,
        var_diag: 8.0 * filling.powi(4) / d,
        var_cross: filling.powi(4) / d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarStats {
    pub atoms: usize,
    pub modes: usize,
    pub sample_count: usize,
    /// Mean over samples of the site-averaged diagonal covariance.
    pub mean_diag_cov: f64,
    /// Mean over samples of the pair-averaged off-diagonal covariance.
    pub mean_cross_cov: f64,
    pub se_diag_cov: f64,
    pub se_cross_cov: f64,
    /// Sample variance of `Cov(n₁, n₁)`.
    pub var_diag_cov: f64,
    /// Sample variance of `Cov(n₁, n₂)`.
    pub var_cross_cov: f64,
    /// Mean `⟨n̂₁⟩`, with standard error.
    pub mean_n1: f64,
    pub se_n1: f64,
    pub predicted: HaarPrediction,
    pub z_diag: f64,
    pub z_cross: f64,
    pub z_n1: f64,
    /// `predicted.diag_cov + (L − 1) predicted.cross_cov`, zero by construction.
    pub sum_rule: f64,
    pub var_ratio_diag: f64,
    pub var_ratio_cross: f64,
    pub means_ok: bool,
    pub variances_ok: bool,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt(), var)
}

fn z_score(value: f64, expected: f64, se: f64) -> f64 {
    if se > 0.0 {
        (value - expected) / se
    } else if value == expected {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Monte-Carlo comparison against [`predicted_haar_moments`].
///
/// Means pass within 5 standard errors; the variances are leading-order
/// asymptotics and pass within a factor of two. Failures are reported in
/// the returned flags, never as errors.
pub fn haar_validate<R: Rng + ?Sized>(
    atoms: usize,
    modes: usize,
    samples: usize,
    rng: &mut R,
) -> Result<HaarStats> {
    if samples < 100 {
        return Err(invalid("need at least 100 samples"));
    }
    let predicted = predicted_haar_moments(atoms, modes)?;
    let basis = Arc::new(FockBasis::new(atoms, modes)?);
    let l = modes as f64;

    let mut diag_avg = Vec::with_capacity(samples);
    let mut cross_avg = Vec::with_capacity(samples);
    let mut diag_11 = Vec::with_capacity(samples);
    let mut cross_12 = Vec::with_capacity(samples);
    let mut n1 = Vec::with_capacity(samples);
    for _ in 0..samples {
        let state = haar_state(&basis, rng);
        let cov = occupancy_covariance(&state)?.matrix;
        let trace = cov.trace();
        diag_avg.push(trace / l);
        cross_avg.push((cov.sum() - trace) / (l * (l - 1.0)));
        diag_11.push(cov[(0, 0)]);
        cross_12.push(cov[(0, 1)]);
        n1.push(
            state
                .amplitudes()
                .iter()
                .zip(basis.states())
                .map(|(a, occ)| a.norm_sqr() * occ[0] as f64)
                .sum(),
        );
    }
    let (mean_diag_cov, se_diag_cov, _) = mean_and_se(&diag_avg);
    let (mean_cross_cov, se_cross_cov, _) = mean_and_se(&cross_avg);
    let (_, _, var_diag_cov) = mean_and_se(&diag_11);
    let (_, _, var_cross_cov) = mean_and_se(&cross_12);
    let (mean_n1, se_n1, _) = mean_and_se(&n1);

    let z_diag = z_score(mean_diag_cov, predicted.diag_cov, se_diag_cov);
    let z_cross = z_score(mean_cross_cov, predicted.cross_cov, se_cross_cov);
    let z_n1 = z_score(mean_n1, atoms as f64 / l, se_n1);
    let var_ratio_diag = var_diag_cov / predicted.var_diag;
    let var_ratio_cross = var_cross_cov / predicted.var_cross;
    let within_two = |r: f64| (0.5..=2.0).contains(&r);
    Ok(HaarStats {
        atoms,
        modes,
        sample_count: samples,
        mean_diag_cov,
        mean_cross_cov,
        se_diag_cov,
        se_cross_cov,
        var_diag_cov,
        var_cross_cov,
        mean_n1,
        se_n1,
        predicted,
        z_diag,
        z_cross,
        z_n1,
        sum_rule: predicted.diag_cov + (l - 1.0) * predicted.cross_cov,
        var_ratio_diag,
        var_ratio_cross,
        means_ok: z_diag.abs() < 5.0 && z_cross.abs() < 5.0 && z_n1.abs() < 5.0,
        variances_ok: within_two(var_ratio_diag) && within_two(var_ratio_cross),
    })
}
