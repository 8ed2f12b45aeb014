//! Sequential Bayesian inference of `φ` with fresh errors every shot.
//!
//! After outcome `n⃗_α` the joint posterior is
//! `P_α(φ, ε) ∝ P(n⃗_α | φ, ε) P_{α−1}(φ) P_err(ε)`: the error prior is the
//! same Gaussian at every step because `ε` is redrawn for each datapoint, so
//! only the marginal over `φ` is carried forward. The `ε` integral is a
//! tensor Gauss–Hermite rule; `φ` lives on a fixed grid with trapezoidal
//! weights.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EchoExperiment, PulseSchedule};
use crate::error::{invalid, Error, Result};
use crate::error_model::{prior_information, CouplingMatrix, ErrorModel};
use crate::fisher::{cfi_matrix, qfi_matrix, FisherBundle};
use crate::fock::{FockBasis, StateVector};
use crate::quadrature::QuadratureRule;

/// Prior support is `center ± PRIOR_SPAN_WIDTHS · width`.
pub const PRIOR_SPAN_WIDTHS: f64 = 6.0;
pub const DEFAULT_GRID_POINTS: usize = 512;
pub const DEFAULT_QUADRATURE_NODES: usize = 9;
/// Regrid once the ±`REGRID_WIDTHS` σ window is below `REGRID_FRACTION` of the span.
const REGRID_WIDTHS: f64 = 6.0;
const REGRID_FRACTION: f64 = 0.05;

/// Discretized density over `φ`, normalized with the trapezoidal rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePosterior {
    grid: Vec<f64>,
    density: Vec<f64>,
}

fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|k| {
            let left = if k > 0 { grid[k] - grid[k - 1] } else { 0.0 };
            let right = if k + 1 < n { grid[k + 1] - grid[k] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

impl PhasePosterior {
    /// Normalizes `density` over a strictly increasing `grid`.
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(invalid("grid and density need equal length ≥ 2"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("grid must be strictly increasing"));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(invalid("density must be finite and non-negative"));
        }
        let mut p = Self { grid, density };
        let z = p.integral();
        if !(z > 0.0) {
            return Err(invalid("density has zero mass"));
        }
        p.density.iter_mut().for_each(|d| *d /= z);
        Ok(p)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.grid)
    }

    pub fn integral(&self) -> f64 {
        self.weights().iter().zip(&self.density).map(|(w, d)| w * d).sum()
    }

    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.weights()
            .iter()
            .zip(&self.density)
            .zip(&self.grid)
            .map(|((w, d), x)| w * d * f(*x))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment(|x| x)
    }

    /// `(Δ²φ) = ∫ φ² P − (∫ φ P)²`.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(|x| (x - m).powi(2))
    }

    pub fn span(&self) -> f64 {
        self.grid[self.grid.len() - 1] - self.grid[0]
    }

    /// A finer grid around the bulk once the posterior occupies a small
    /// fraction of the current span; the density is linearly interpolated.
    pub fn regridded_if_concentrated(&self) -> Option<Self> {
        let (m, s) = (self.mean(), self.variance().sqrt());
        if !(s > 0.0) || 2.0 * REGRID_WIDTHS * s >= REGRID_FRACTION * self.span() {
            return None;
        }
        let half = 2.0 * REGRID_WIDTHS * s;
        let n = self.grid.len();
        let grid: Vec<f64> = (0..n)
            .map(|k| m - half + 2.0 * half * k as f64 / (n - 1) as f64)
            .collect();
        let density = grid.iter().map(|&x| self.interpolate(x)).collect();
        Self::new(grid, density).ok()
    }

    fn interpolate(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let k = g.partition_point(|&v| v <= x).clamp(1, g.len() - 1);
        let t = (x - g[k - 1]) / (g[k] - g[k - 1]);
        self.density[k - 1] * (1.0 - t) + self.density[k] * t
    }
}

/// Gaussian prior truncated to `center ± 6 width` on a uniform grid.
pub fn init_posterior(center: f64, width: f64, grid_points: usize) -> Result<PhasePosterior> {
    if !(width > 0.0 && width.is_finite()) || !center.is_finite() {
        return Err(invalid("prior needs a finite center and positive width"));
    }
    if grid_points < 51 {
        return Err(invalid("posterior grid needs at least 51 points"));
    }
    let half = PRIOR_SPAN_WIDTHS * width;
    let grid: Vec<f64> = (0..grid_points)
        .map(|k| center - half + 2.0 * half * k as f64 / (grid_points - 1) as f64)
        .collect();
    let density = grid
        .iter()
        .map(|x| (-0.5 * ((x - center) / width).powi(2)).exp())
        .collect();
    PhasePosterior::new(grid, density)
}

/// Outcome likelihood `P(n⃗ | φ, ε)`.
pub trait Likelihood: Sync {
    fn likelihood(&self, outcome: usize, phi: f64, eps: &[f64]) -> f64;

    /// Values on the `phis × eps_points` product, row-major (`eps` fastest).
    fn likelihood_table(&self, outcome: usize, phis: &[f64], eps_points: &[Vec<f64>]) -> Vec<f64> {
        phis.par_iter()
            .flat_map_iter(|&phi| eps_points.iter().map(move |e| self.likelihood(outcome, phi, e)))
            .collect()
    }
}

/// Adapts a closure `(outcome, φ, ε) → P` into a [`Likelihood`].
pub struct FnLikelihood<F>(pub F);

impl<F> Likelihood for FnLikelihood<F>
where
    F: Fn(usize, f64, &[f64]) -> f64 + Sync,
{
    fn likelihood(&self, outcome: usize, phi: f64, eps: &[f64]) -> f64 {
        (self.0)(outcome, phi, eps)
    }
}

impl Likelihood for EchoExperiment {
    fn likelihood(&self, outcome: usize, phi: f64, eps: &[f64]) -> f64 {
        EchoExperiment::likelihood(self, outcome, phi, eps)
    }

    /// Splits `exp(-iθ)` into its `φ` and `ε` factors so the whole table
    /// costs one complex multiply-add per (node, node, basis state).
    fn likelihood_table(&self, outcome: usize, phis: &[f64], eps_points: &[Vec<f64>]) -> Vec<f64> {
        let row = self.readout_row(outcome);
        let gens = self.generators();
        let tau = self.tau();
        let base: Vec<Complex64> = row
            .iter()
            .zip(self.prepared_amplitudes())
            .map(|(r, a)| r * a)
            .collect();
        let error_phases: Vec<Vec<Complex64>> = eps_points
            .iter()
            .map(|eps| {
                (0..base.len())
                    .map(|m| {
                        let theta: f64 = eps.iter().zip(&gens[1..]).map(|(e, g)| e * g[m]).sum();
                        Complex64::from_polar(1.0, -tau * theta)
                    })
                    .collect()
            })
            .collect();
        phis.par_iter()
            .flat_map_iter(|&phi| {
                let shifted: Vec<Complex64> = base
                    .iter()
                    .zip(&gens[0])
                    .map(|(b, g)| b * Complex64::from_polar(1.0, -phi * g))
                    .collect();
                error_phases
                    .iter()
                    .map(move |ph| {
                        shifted
                            .iter()
                            .zip(ph)
                            .map(|(s, p)| s * p)
                            .sum::<Complex64>()
                            .norm_sqr()
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Joint posterior masses over (φ grid node, ε quadrature point) from the
/// last update; masses sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSlice {
    pub eps_points: Vec<Vec<f64>>,
    /// `masses[g * eps_points.len() + q]`.
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Update {
    pub posterior: PhasePosterior,
    /// `P_{α−1}(n⃗_α)`, the normalizer of the update.
    pub evidence: f64,
    pub joint: Option<JointSlice>,
    /// Set when the likelihood vanished on the whole grid; the posterior is
    /// then returned unchanged.
    pub model_mismatch: bool,
}

pub fn update<L: Likelihood + ?Sized>(
    posterior: &PhasePosterior,
    outcome: usize,
    likelihood: &L,
    quadrature: &QuadratureRule,
) -> Update {
    let points = quadrature.tensor_points();
    let (eps_points, eps_weights): (Vec<Vec<f64>>, Vec<f64>) = points.into_iter().unzip();
    let q = eps_points.len();
    let table = likelihood.likelihood_table(outcome, posterior.grid(), &eps_points);
    let tw = posterior.weights();

    let mut masses = vec![0.0; table.len()];
    let mut marginal = vec![0.0; posterior.grid().len()];
    for (g, (m, p)) in marginal.iter_mut().zip(posterior.density()).enumerate() {
        let mut acc = 0.0;
        for k in 0..q {
            let v = eps_weights[k] * table[g * q + k] * p;
            masses[g * q + k] = v * tw[g];
            acc += v;
        }
        *m = acc;
    }
    let evidence: f64 = marginal.iter().zip(&tw).map(|(m, w)| m * w).sum();
    if !(evidence > 0.0 && evidence.is_finite()) {
        return Update {
            posterior: posterior.clone(),
            evidence: 0.0,
            joint: None,
            model_mismatch: true,
        };
    }
    masses.iter_mut().for_each(|m| *m /= evidence);
    let density = marginal.iter().map(|m| m / evidence).collect();
    Update {
        posterior: PhasePosterior {
            grid: posterior.grid().to_vec(),
            density,
        },
        evidence,
        joint: Some(JointSlice { eps_points, masses }),
        model_mismatch: false,
    }
}

/// Posterior mean of `ε` for the datapoint just absorbed.
pub fn datapoint_error_estimate(joint: &JointSlice) -> Vec<f64> {
    let channels = joint.eps_points.first().map_or(0, Vec::len);
    let q = joint.eps_points.len();
    let mut est = vec![0.0; channels];
    for (k, m) in joint.masses.iter().enumerate() {
        for (e, x) in est.iter_mut().zip(&joint.eps_points[k % q]) {
            *e += m * x;
        }
    }
    est
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceSettings {
    /// True signal; `None` draws it from the prior `N(prior_center, σ_φ)`.
    pub phi_true: Option<f64>,
    pub prior_center: f64,
    pub datapoints: usize,
    pub grid_points: usize,
    pub quadrature_nodes: usize,
    pub regrid: bool,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            phi_true: None,
            prior_center: 0.0,
            datapoints: 100,
            grid_points: DEFAULT_GRID_POINTS,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            regrid: true,
        }
    }
}

/// Full scenario for [`run_inference`].
#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub atoms: usize,
    pub schedule: PulseSchedule,
    pub model: ErrorModel,
    pub coupling: CouplingMatrix,
    pub settings: InferenceSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub outcome_index: usize,
    pub outcome: Vec<u32>,
    pub posterior_mean: f64,
    pub posterior_var: f64,
    pub eps_estimate: Vec<f64>,
    pub eps_true: Vec<f64>,
    pub evidence: f64,
    pub model_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub phi_true: f64,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub records: Vec<TraceRecord>,
}

impl InferenceTrace {
    /// Posterior variance after `0, 1, …, ν` datapoints.
    pub fn variances(&self) -> Vec<f64> {
        std::iter::once(self.prior_variance)
            .chain(self.records.iter().map(|r| r.posterior_var))
            .collect()
    }

    pub fn final_mean(&self) -> f64 {
        self.records.last().map_or(self.prior_mean, |r| r.posterior_mean)
    }

    pub fn final_variance(&self) -> f64 {
        self.records.last().map_or(self.prior_variance, |r| r.posterior_var)
    }

    /// Columns: `step, outcome_index, posterior_mean, posterior_var,
    /// eps_est_1.., eps_true_1..`. Step 0 is the prior.
    pub fn write_csv<W: Write>(&self, writer: W, channels: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "step".to_string(),
            "outcome_index".into(),
            "posterior_mean".into(),
            "posterior_var".into(),
        ];
        header.extend((1..=channels).map(|i| format!("eps_est_{i}")));
        header.extend((1..=channels).map(|i| format!("eps_true_{i}")));
        w.write_record(&header)?;
        let mut prior = vec![
            "0".to_string(),
            String::new(),
            self.prior_mean.to_string(),
            self.prior_variance.to_string(),
        ];
        prior.extend(std::iter::repeat_n(String::new(), 2 * channels));
        w.write_record(&prior)?;
        for r in &self.records {
            let mut row = vec![
                r.step.to_string(),
                r.outcome_index.to_string(),
                r.posterior_mean.to_string(),
                r.posterior_var.to_string(),
            ];
            row.extend(r.eps_estimate.iter().map(f64::to_string));
            row.extend(r.eps_true.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates `ν` echo datapoints with fresh errors and updates the posterior.
pub fn run_inference<R: Rng + ?Sized>(config: &InferenceConfig, rng: &mut R) -> Result<InferenceTrace> {
    let basis = std::sync::Arc::new(FockBasis::new(config.atoms, config.model.mode_count())?);
    let psi0 = StateVector::all_in_first_site(basis);
    let experiment = EchoExperiment::new(&psi0, &config.schedule, &config.coupling, config.model.tau)?;
    run_inference_with(&experiment, &config.model, &config.settings, rng)
}

/// [`run_inference`] for an experiment that is already prepared.
pub fn run_inference_with<R: Rng + ?Sized>(
    experiment: &EchoExperiment,
    model: &ErrorModel,
    settings: &InferenceSettings,
    rng: &mut R,
) -> Result<InferenceTrace> {
    if experiment.channel_count() != model.channel_count() {
        return Err(Error::DimensionMismatch {
            expected: experiment.channel_count(),
            actual: model.channel_count(),
        });
    }
    let phi_true = match settings.phi_true {
        Some(phi) => phi,
        None => {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            settings.prior_center + model.sigma_phi * z
        }
    };
    let quadrature = QuadratureRule::gauss_hermite(&model.sigmas, settings.quadrature_nodes)?;
    let mut posterior = init_posterior(settings.prior_center, model.sigma_phi, settings.grid_points)?;
    let mut regridded = !settings.regrid;
    let mut trace = InferenceTrace {
        phi_true,
        prior_mean: posterior.mean(),
        prior_variance: posterior.variance(),
        records: Vec::with_capacity(settings.datapoints),
    };
    for step in 1..=settings.datapoints {
        let shot = experiment.shot(model, phi_true, rng)?;
        let up = update(&posterior, shot.outcome_index, experiment, &quadrature);
        let eps_estimate = up
            .joint
            .as_ref()
            .map_or_else(|| vec![f64::NAN; model.channel_count()], datapoint_error_estimate);
        posterior = up.posterior;
        if !regridded {
            if let Some(finer) = posterior.regridded_if_concentrated() {
                posterior = finer;
                regridded = true;
            }
        }
        trace.records.push(TraceRecord {
            step,
            outcome_index: shot.outcome_index,
            outcome: shot.outcome,
            posterior_mean: posterior.mean(),
            posterior_var: posterior.variance(),
            eps_estimate,
            eps_true: shot.error_draw.epsilon,
            evidence: up.evidence,
            model_mismatch: up.model_mismatch,
        });
    }
    Ok(trace)
}

/// Prior-averaged classical Fisher information `E_{φ,ε}[F(φ, ε)]` of the
/// echo readout, with `φ ~ N(phi_center, σ_φ)` and `ε ~ N(0, σ)` integrated
/// by a tensor Gauss–Hermite rule.
pub fn expected_cfi(
    experiment: &EchoExperiment,
    model: &ErrorModel,
    phi_center: f64,
    quadrature_nodes: usize,
) -> Result<DMatrix<f64>> {
    let widths: Vec<f64> = std::iter::once(model.sigma_phi)
        .chain(model.sigmas.iter().copied())
        .collect();
    let rule = QuadratureRule::gauss_hermite(&widths, quadrature_nodes)?;
    let k = experiment.channel_count() + 1;
    let terms = rule
        .tensor_points()
        .par_iter()
        .map(|(x, w)| {
            let (p, g) = experiment.distribution_and_gradients(phi_center + x[0], &x[1..]);
            cfi_matrix(&p, &g).map(|f| f * *w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(terms.into_iter().fold(DMatrix::zeros(k, k), |a, b| a + b))
}

/// Prior, prior-averaged CFI and `4 F_Q` (QFI in the CFI normalization,
/// with the `τ` factors of the error parameters) for one experiment.
pub fn fisher_bundle(
    experiment: &EchoExperiment,
    model: &ErrorModel,
    coupling: &CouplingMatrix,
    phi_center: f64,
    quadrature_nodes: usize,
) -> Result<FisherBundle> {
    let prior = prior_information(model)?;
    let cfi = expected_cfi(experiment, model, phi_center, quadrature_nodes)?;
    let mut qfi = qfi_matrix(&experiment.prepared_state(), coupling)? * 4.0;
    let tau = experiment.tau();
    for i in 0..qfi.nrows() {
        for j in 0..qfi.ncols() {
            let si = if i == 0 { 1.0 } else { tau };
            let sj = if j == 0 { 1.0 } else { tau };
            qfi[(i, j)] *= si * sj;
        }
    }
    FisherBundle::new(prior, cfi, qfi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub step: usize,
    /// Mean posterior variance over runs.
    pub empirical: f64,
    /// Mean of `1 / F_eff^{(α)}` over runs.
    pub bound: f64,
    pub slack: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanTreesReport {
    pub steps: Vec<StepCheck>,
    pub violations: Vec<usize>,
    /// Median over runs of `Δ²φ_ν · F_eff^{(ν)}`.
    pub final_ratio_median: f64,
}

impl VanTreesReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Numerical floor on the relative slack (grid and quadrature error).
const VAN_TREES_NUMERICAL_SLACK: f64 = 1e-3;

/// Compares the run-averaged posterior variance with the van Trees bound
/// `1 / F_eff^{(α)}` at every step. `bundles` holds either one bundle shared
/// by all traces or one per trace. The allowed relative shortfall is three
/// standard errors of the mean variance (at least `1e-3`).
pub fn van_trees_check(traces: &[InferenceTrace], bundles: &[FisherBundle]) -> Result<VanTreesReport> {
    if traces.is_empty() {
        return Err(invalid("no traces to check"));
    }
    if bundles.len() != 1 && bundles.len() != traces.len() {
        return Err(Error::DimensionMismatch {
            expected: traces.len(),
            actual: bundles.len(),
        });
    }
    let bundle_of = |r: usize| &bundles[if bundles.len() == 1 { 0 } else { r }];
    let steps = traces[0].records.len();
    if traces.iter().any(|t| t.records.len() != steps) {
        return Err(invalid("traces must have equal length"));
    }
    let runs = traces.len() as f64;
    let variances: Vec<Vec<f64>> = traces.iter().map(InferenceTrace::variances).collect();
    let mut checks = Vec::with_capacity(steps + 1);
    let mut violations = Vec::new();
    for step in 0..=steps {
        let vals: Vec<f64> = variances.iter().map(|v| v[step]).collect();
        let empirical = vals.iter().sum::<f64>() / runs;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - empirical).powi(2)).sum::<f64>() / (runs - 1.0)).sqrt()
        } else {
            0.0
        };
        let bound = (0..traces.len())
            .map(|r| 1.0 / bundle_of(r).f_eff_after(step))
            .sum::<f64>()
            / runs;
        let slack = (3.0 * sd / runs.sqrt() / empirical).max(VAN_TREES_NUMERICAL_SLACK);
        let ok = empirical >= (1.0 - slack) * bound;
        if !ok {
            violations.push(step);
        }
        checks.push(StepCheck {
            step,
            empirical,
            bound,
            slack,
            ok,
        });
    }
    let mut ratios: Vec<f64> = traces
        .iter()
        .enumerate()
        .map(|(r, t)| t.final_variance() * bundle_of(r).f_eff_after(steps))
        .collect();
    Ok(VanTreesReport {
        steps: checks,
        violations,
        final_ratio_median: median(&mut ratios),
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
