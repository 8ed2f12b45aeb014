use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::record::{Cell, Check, ResultRecord};
use super::{Mode, ScenarioConfig};
use crate::bayes::median;
use crate::dynamics::{prepare_state, random_schedule};
use crate::error::Result;
use crate::error_model::{build_coupling, prior_information, CouplingMatrix, ErrorModel};
use crate::fisher::{
    effective_fisher, numerical_rank, qfi_from_covariance, qfi_matrix, rank_prediction,
    saturation_ceiling, sorted_eigenvalues, typical_f_min, typical_f_n,
};
use crate::fock::{fock_dimension, FockBasis, StateVector, DEFAULT_DIMENSION_CAP};
use crate::haar::haar_validate;
use crate::seeding::{derive_seed, trial_rng};

/// Seed key of a (first, second) scan coordinate pair.
fn point_key(a: usize, b: usize) -> u64 {
    ((a as u64) << 32) | b as u64
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Random centered coupling: the site tilt plus `ℓ` uniform profiles.
fn random_coupling(
    config: &ScenarioConfig,
    modes: usize,
    channels: usize,
    trial: usize,
) -> Result<(DMatrix<f64>, CouplingMatrix)> {
    let mut rng = trial_rng(config.seed, point_key(modes, channels), trial as u64);
    let model = ErrorModel::random_uniform(channels, modes, config.sigma_err, config.sigma_phi, &mut rng)?;
    Ok((prior_information(&model)?, build_coupling(&model, true)))
}

struct CouplingDraws {
    priors: Vec<DMatrix<f64>>,
    couplings: Vec<CouplingMatrix>,
}

impl CouplingDraws {
    fn new(config: &ScenarioConfig, modes: usize, channels: usize) -> Result<Self> {
        let (priors, couplings) = (0..config.trials)
            .map(|t| random_coupling(config, modes, channels, t))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { priors, couplings })
    }

    /// Per-draw `F_eff` with the Haar-typical `F_N`.
    fn f_eff(&self, atoms: usize, modes: usize) -> Result<Vec<f64>> {
        let f_n = typical_f_n(atoms, modes);
        self.priors
            .iter()
            .zip(&self.couplings)
            .map(|(p, c)| effective_fisher(p, &qfi_from_covariance(&f_n, c.rows())))
            .collect()
    }
}

fn spread(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    let m = median(&mut v);
    (m, v[0], v[v.len() - 1])
}

fn optional(v: Option<f64>) -> Cell {
    v.map_or_else(|| Cell::Text(String::new()), Cell::Float)
}

/// `F_eff` against `N` with Haar-typical `F_N`, per `(L, ℓ)`.
///
/// Every `(L, ℓ)` curve uses the same `trials` coupling draws at each `N`.
/// The slope is fitted over the top decade of `N`; it is checked against
/// saturation (`< 0.2`) for `L < ℓ + 2` and against `[1.8, 2.05]` otherwise.
pub fn cmd_scaling_scan(config: &ScenarioConfig) -> Result<ResultRecord> {
    let mut record = ResultRecord::new(
        config,
        Mode::ScalingScan,
        &[
            "modes",
            "channels",
            "atoms",
            "f_eff_median",
            "f_eff_min",
            "f_eff_max",
            "ceiling_median",
            "qfi_rank",
            "rank_predicted",
        ],
    );
    let mut atoms = config.atoms.clone();
    atoms.sort_unstable();
    atoms.dedup();
    let pairs: Vec<(usize, usize)> = config
        .modes
        .iter()
        .flat_map(|&l| config.channels.iter().map(move |&c| (l, c)))
        .collect();

    let curves = pairs
        .par_iter()
        .map(|&(modes, channels)| -> Result<_> {
            let draws = CouplingDraws::new(config, modes, channels)?;
            let f_n = typical_f_n(atoms[atoms.len() - 1], modes);
            let mut ceilings: Vec<f64> = Vec::new();
            let mut rank = 0;
            for (p, c) in draws.priors.iter().zip(&draws.couplings) {
                let info = qfi_from_covariance(&f_n, c.rows());
                rank = rank.max(numerical_rank(&info));
                if let Some(v) = saturation_ceiling(p, &info) {
                    ceilings.push(v);
                }
            }
            let ceiling = (ceilings.len() == draws.priors.len()).then(|| median(&mut ceilings));
            let medians = atoms
                .iter()
                .map(|&n| draws.f_eff(n, modes).map(|v| spread(&v)))
                .collect::<Result<Vec<_>>>()?;
            Ok((modes, channels, rank, ceiling, medians))
        })
        .collect::<Result<Vec<_>>>()?;

    let top = atoms[atoms.len() - 1] as f64;
    for (modes, channels, rank, ceiling, medians) in curves {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (&n, &(med, lo, hi)) in atoms.iter().zip(&medians) {
            record.push_row(vec![
                modes.into(),
                channels.into(),
                n.into(),
                med.into(),
                lo.into(),
                hi.into(),
                optional(ceiling),
                rank.into(),
                rank_prediction(modes, channels).into(),
            ]);
            if n as f64 >= top / 10.0 {
                xs.push(n as f64);
                ys.push(med);
            }
        }
        let name = format!("slope L={modes} l={channels}");
        match log_log_slope(&xs, &ys) {
            Some(slope) if modes < channels + 2 => {
                record.checks.push(Check::new(name, slope, "< 0.2", slope < 0.2));
            }
            Some(slope) => {
                record.checks.push(Check::new(name, slope, "in [1.8, 2.05]", (1.8..=2.05).contains(&slope)));
            }
            None => record.notices.push(format!("{name}: need two N values in the top decade")),
        }
    }
    record
        .notices
        .push(format!("median over {} coupling draws per (L, l)", config.trials));
    Ok(record)
}

/// `F_eff` against `L` at each `N`, per `ℓ`, with the knee check
/// `F_eff(L = ℓ+2) / F_eff(L = ℓ+1) ≥ 10` wherever both sites counts are scanned.
pub fn cmd_mode_scan(config: &ScenarioConfig) -> Result<ResultRecord> {
    let mut record = ResultRecord::new(
        config,
        Mode::ModeScan,
        &["atoms", "channels", "modes", "f_eff_median", "f_eff_min", "f_eff_max", "rank_predicted"],
    );
    let mut modes = config.modes.clone();
    modes.sort_unstable();
    modes.dedup();
    let points: Vec<(usize, usize)> = config
        .channels
        .iter()
        .flat_map(|&c| modes.iter().map(move |&l| (c, l)))
        .collect();
    let draws = points
        .par_iter()
        .map(|&(c, l)| CouplingDraws::new(config, l, c))
        .collect::<Result<Vec<_>>>()?;

    for &atoms in &config.atoms {
        let values = points
            .par_iter()
            .zip(&draws)
            .map(|(&(_, l), d)| d.f_eff(atoms, l).map(|v| spread(&v)))
            .collect::<Result<Vec<_>>>()?;
        for (&(channels, l), &(med, lo, hi)) in points.iter().zip(&values) {
            record.push_row(vec![
                atoms.into(),
                channels.into(),
                l.into(),
                med.into(),
                lo.into(),
                hi.into(),
                rank_prediction(l, channels).into(),
            ]);
        }
        for &channels in &config.channels {
            let curve: Vec<(usize, f64)> = points
                .iter()
                .zip(&values)
                .filter(|((c, _), _)| *c == channels)
                .map(|((_, l), v)| (*l, v.0))
                .collect();
            let at = |l: usize| curve.iter().find(|p| p.0 == l).map(|p| p.1);
            if let (Some(below), Some(knee)) = (at(channels + 1), at(channels + 2)) {
                let ratio = knee / below;
                record.checks.push(Check::new(
                    format!("knee N={atoms} l={channels} L={}", channels + 2),
                    ratio,
                    ">= 10",
                    ratio >= 10.0,
                ));
            }
            if curve.windows(2).any(|w| w[1].1 < w[0].1) {
                record
                    .notices
                    .push(format!("N={atoms} l={channels}: median F_eff not monotone in L"));
            }
        }
    }
    record
        .notices
        .push(format!("median over {} coupling draws per (L, l)", config.trials));
    Ok(record)
}

/// Smallest eigenvalue of `F_Q` for states prepared by random pulse
/// sequences, compared with `N(N+L)/(L(L+1))`.
///
/// `F_Q` uses the orthonormal complement coupling, so its spectrum is the
/// nonzero spectrum of the occupancy covariance. Points over the dimension
/// cap are skipped with a notice.
pub fn cmd_pulse_fmin(config: &ScenarioConfig) -> Result<ResultRecord> {
    let mut record = ResultRecord::new(
        config,
        Mode::PulseFmin,
        &[
            "atoms",
            "modes",
            "dimension",
            "f_min_median",
            "f_min_min",
            "f_min_max",
            "predicted",
            "ratio",
        ],
    );
    let mut points = Vec::new();
    for &l in &config.modes {
        for &n in &config.atoms {
            let dim = fock_dimension(n, l);
            if dim > DEFAULT_DIMENSION_CAP as u128 {
                record
                    .notices
                    .push(format!("skipped N={n} L={l}: dimension {dim} over cap {DEFAULT_DIMENSION_CAP}"));
            } else {
                points.push((n, l));
            }
        }
    }
    let results = points
        .iter()
        .map(|&(n, l)| -> Result<_> {
            let basis = Arc::new(FockBasis::new(n, l)?);
            let psi0 = StateVector::all_in_first_site(basis.clone());
            let coupling = CouplingMatrix::orthonormal_complement(l)?;
            let mins = (0..config.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = derive_seed(config.seed, point_key(n, l), t as u64);
                    let schedule = random_schedule(config.pulse_pairs, config.total_time, l, seed)?;
                    let state = prepare_state(&psi0, &schedule)?;
                    Ok(sorted_eigenvalues(&qfi_matrix(&state, &coupling)?)[0])
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((n, l, basis.dim(), spread(&mins)))
        })
        .collect::<Result<Vec<_>>>()?;
    for (n, l, dim, (med, lo, hi)) in results {
        let predicted = typical_f_min(n, l);
        let ratio = med / predicted;
        record.push_row(vec![
            n.into(),
            l.into(),
            dim.into(),
            med.into(),
            lo.into(),
            hi.into(),
            predicted.into(),
            ratio.into(),
        ]);
        record.checks.push(Check::new(
            format!("f_min N={n} L={l}"),
            ratio,
            "within 35% of 1",
            (ratio - 1.0).abs() <= 0.35,
        ));
    }
    record.notices.push(format!(
        "median over {} schedules with n={} pulse pairs, T={}",
        config.trials, config.pulse_pairs, config.total_time
    ));
    Ok(record)
}

/// Haar Monte Carlo on every `(N, L)` of the grid. Means are checked at
/// five standard errors; the variance ratios are leading-order and only
/// reported.
pub fn cmd_haar_validate(config: &ScenarioConfig) -> Result<ResultRecord> {
    let mut record = ResultRecord::new(
        config,
        Mode::HaarValidate,
        &[
            "atoms",
            "modes",
            "dimension",
            "samples",
            "mean_diag_cov",
            "predicted_diag_cov",
            "z_diag",
            "mean_cross_cov",
            "predicted_cross_cov",
            "z_cross",
            "z_n1",
            "sum_rule",
            "var_ratio_diag",
            "var_ratio_cross",
        ],
    );
    let points: Vec<(usize, usize)> = config
        .atoms
        .iter()
        .flat_map(|&n| config.modes.iter().map(move |&l| (n, l)))
        .collect();
    let stats = points
        .par_iter()
        .map(|&(n, l)| {
            let mut rng = trial_rng(config.seed, point_key(n, l), 0);
            haar_validate(n, l, config.samples, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    for s in stats {
        record.push_row(vec![
            s.atoms.into(),
            s.modes.into(),
            (s.predicted.dimension as usize).into(),
            s.sample_count.into(),
            s.mean_diag_cov.into(),
            s.predicted.diag_cov.into(),
            s.z_diag.into(),
            s.mean_cross_cov.into(),
            s.predicted.cross_cov.into(),
            s.z_cross.into(),
            s.z_n1.into(),
            s.sum_rule.into(),
            s.var_ratio_diag.into(),
            s.var_ratio_cross.into(),
        ]);
        let worst = s.z_diag.abs().max(s.z_cross.abs()).max(s.z_n1.abs());
        record.checks.push(Check::new(
            format!("haar means N={} L={}", s.atoms, s.modes),
            worst,
            "|z| < 5",
            s.means_ok,
        ));
        if !s.variances_ok {
            record.notices.push(format!(
                "N={} L={}: variance ratios {:.3}, {:.3} outside [0.5, 2] (asymptotic formula)",
                s.atoms, s.modes, s.var_ratio_diag, s.var_ratio_cross
            ));
        }
    }
    Ok(record)
}
