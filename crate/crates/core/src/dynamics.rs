//! Random-pulse state preparation, phase acquisition and Loschmidt-echo
//! readout.
//!
//! A schedule of `n` pulse pairs with width `dt = T / 2n` implements
//! `U_SP = Π_k exp(-i dt H₂^{(k)}) exp(-i dt H₁^{(k)})` where `H₁` is the
//! on-site term `Σ Δ_i n̂_i + U_i n̂_i(n̂_i − 1)` and `H₂` the hopping term.
//! The echo applies `U_M = U_SP†` after the phase imprint, so that with no
//! signal and no error every atom returns to the initial Fock state.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::error_model::{sample_errors, CouplingMatrix, ErrorDraw, ErrorModel};
use crate::fock::{hopping_matrix, DiagonalObservable, FockBasis, StateVector};
use crate::propagate::{ExpmMethod, HoppingPropagator};

const PROBABILITY_NEGATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub pulse_pairs: usize,
    pub total_time: f64,
    /// `J_i^{(k)}`, `n × (L−1)`.
    pub hopping: Vec<Vec<f64>>,
    /// `Δ_i^{(k)}`, `n × L`.
    pub detuning: Vec<Vec<f64>>,
    /// `U_i^{(k)}`, `n × L`.
    pub interaction: Vec<Vec<f64>>,
    /// Seed the matrices were drawn from, when random.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PulseSchedule {
    /// All controls off: `U_SP = 1`.
    pub fn identity(pulse_pairs: usize, total_time: f64, modes: usize) -> Self {
        Self {
            pulse_pairs,
            total_time,
            hopping: vec![vec![0.0; modes.saturating_sub(1)]; pulse_pairs],
            detuning: vec![vec![0.0; modes]; pulse_pairs],
            interaction: vec![vec![0.0; modes]; pulse_pairs],
            seed: None,
        }
    }

    pub fn dt(&self) -> f64 {
        self.total_time / (2.0 * self.pulse_pairs as f64)
    }

    pub fn mode_count(&self) -> usize {
        self.detuning.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulse_pairs == 0 {
            return Err(invalid("schedule needs at least one pulse pair"));
        }
        if !(self.total_time.is_finite() && self.total_time > 0.0) {
            return Err(invalid("total time must be positive"));
        }
        let modes = self.mode_count();
        let shape_ok = |m: &Vec<Vec<f64>>, cols: usize| {
            m.len() == self.pulse_pairs && m.iter().all(|r| r.len() == cols)
        };
        if modes == 0
            || !shape_ok(&self.detuning, modes)
            || !shape_ok(&self.interaction, modes)
            || !shape_ok(&self.hopping, modes - 1)
        {
            return Err(invalid("schedule matrices have inconsistent shapes"));
        }
        let all = self
            .hopping
            .iter()
            .chain(&self.detuning)
            .chain(&self.interaction)
            .flatten();
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(invalid("schedule entries must be finite"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schedule: Self = serde_json::from_str(text)?;
        schedule.validate()?;
        Ok(schedule)
    }
}

/// `J ~ U[0,1]`, `Δ, U ~ U[−1,1]`, drawn from a ChaCha8 stream seeded by `seed`.
///
/// Draw order is pulse by pulse: `J` row, then `Δ` row, then `U` row.
pub fn random_schedule(
    pulse_pairs: usize,
    total_time: f64,
    modes: usize,
    seed: u64,
) -> Result<PulseSchedule> {
    if modes == 0 {
        return Err(invalid("need at least one site"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule = PulseSchedule::identity(pulse_pairs, total_time, modes);
    for k in 0..pulse_pairs {
        for j in schedule.hopping[k].iter_mut() {
            *j = rng.random_range(0.0..=1.0);
        }
        for d in schedule.detuning[k].iter_mut() {
            *d = rng.random_range(-1.0..=1.0);
        }
        for u in schedule.interaction[k].iter_mut() {
            *u = rng.random_range(-1.0..=1.0);
        }
    }
    schedule.seed = Some(seed);
    schedule.validate()?;
    Ok(schedule)
}

#[derive(Debug, Clone)]
struct Pulse {
    onsite: Vec<f64>,
    hopping: HoppingPropagator,
}

/// Precomputed `U_SP` for one schedule on one basis.
#[derive(Debug, Clone)]
pub struct Preparation {
    basis: Arc<FockBasis>,
    dt: f64,
    pulses: Vec<Pulse>,
}

impl Preparation {
    pub fn new(basis: Arc<FockBasis>, schedule: &PulseSchedule) -> Result<Self> {
        Self::with_method(basis, schedule, ExpmMethod::Auto)
    }

    pub fn with_method(
        basis: Arc<FockBasis>,
        schedule: &PulseSchedule,
        method: ExpmMethod,
    ) -> Result<Self> {
        schedule.validate()?;
        if schedule.mode_count() != basis.mode_count() {
            return Err(Error::DimensionMismatch {
                expected: basis.mode_count(),
                actual: schedule.mode_count(),
            });
        }
        let pulses = (0..schedule.pulse_pairs)
            .map(|k| {
                let onsite = DiagonalObservable::onsite(
                    basis.clone(),
                    &schedule.detuning[k],
                    &schedule.interaction[k],
                )?;
                let hop = hopping_matrix(&basis, &schedule.hopping[k])?;
                Ok(Pulse {
                    onsite: onsite.diagonal().to_vec(),
                    hopping: HoppingPropagator::new(hop, method),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            basis,
            dt: schedule.dt(),
            pulses,
        })
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    /// `psi ← U_SP psi`.
    pub fn apply(&self, psi: &mut [Complex64]) {
        for pulse in &self.pulses {
            apply_phases(psi, &pulse.onsite, self.dt);
            pulse.hopping.apply(self.dt, psi);
        }
    }

    /// `psi ← U_SP† psi`: adjoint pulses in reverse order.
    pub fn apply_adjoint(&self, psi: &mut [Complex64]) {
        for pulse in self.pulses.iter().rev() {
            pulse.hopping.apply(-self.dt, psi);
            apply_phases(psi, &pulse.onsite, -self.dt);
        }
    }
}

/// `psi_k ← exp(-i t h_k) psi_k`.
fn apply_phases(psi: &mut [Complex64], diagonal: &[f64], t: f64) {
    for (z, h) in psi.iter_mut().zip(diagonal) {
        *z *= Complex64::from_polar(1.0, -t * h);
    }
}

pub fn prepare_state(psi0: &StateVector, schedule: &PulseSchedule) -> Result<StateVector> {
    let prep = Preparation::new(psi0.basis().clone(), schedule)?;
    let mut amps = psi0.amplitudes().to_vec();
    prep.apply(&mut amps);
    Ok(StateVector::from_raw(psi0.basis().clone(), amps))
}

/// Phase `θ(n⃗) = φ g₀(n⃗) + τ Σ_i ε_i g_i(n⃗)` accumulated by each basis state.
pub fn phase_angles(generators: &[Vec<f64>], phi: f64, eps: &[f64], tau: f64) -> Vec<f64> {
    let mut theta: Vec<f64> = generators[0].iter().map(|g| phi * g).collect();
    for (e, g) in eps.iter().zip(&generators[1..]) {
        if *e == 0.0 {
            continue;
        }
        for (t, gi) in theta.iter_mut().zip(g) {
            *t += tau * e * gi;
        }
    }
    theta
}

fn check_eps(coupling: &CouplingMatrix, eps: &ErrorDraw) -> Result<()> {
    if eps.epsilon.len() != coupling.channel_count() {
        return Err(Error::DimensionMismatch {
            expected: coupling.channel_count(),
            actual: eps.epsilon.len(),
        });
    }
    Ok(())
}

pub fn phase_evolve(
    state: &StateVector,
    coupling: &CouplingMatrix,
    phi: f64,
    eps: &ErrorDraw,
    tau: f64,
) -> Result<StateVector> {
    check_eps(coupling, eps)?;
    let generators = coupling.generator_diagonals(state.basis())?;
    let theta = phase_angles(&generators, phi, &eps.epsilon, tau);
    let amps = state
        .amplitudes()
        .iter()
        .zip(&theta)
        .map(|(a, t)| a * Complex64::from_polar(1.0, -t))
        .collect();
    Ok(StateVector::from_raw(state.basis().clone(), amps))
}

/// Prepared state, generators and echo for one schedule and coupling.
///
/// Evaluating `P(n⃗ | φ, ε)` for a fixed outcome only needs row `n⃗` of
/// `U_M`, which is `conj(U_SP |n⃗⟩)`; those rows are computed on demand and
/// cached.
#[derive(Debug)]
pub struct EchoExperiment {
    prep: Preparation,
    prepared: Vec<Complex64>,
    generators: Vec<Vec<f64>>,
    tau: f64,
    rows: Mutex<HashMap<usize, Arc<Vec<Complex64>>>>,
}

impl EchoExperiment {
    pub fn new(
        psi0: &StateVector,
        schedule: &PulseSchedule,
        coupling: &CouplingMatrix,
        tau: f64,
    ) -> Result<Self> {
        let prep = Preparation::new(psi0.basis().clone(), schedule)?;
        Self::from_preparation(prep, psi0, coupling, tau)
    }

    pub fn from_preparation(
        prep: Preparation,
        psi0: &StateVector,
        coupling: &CouplingMatrix,
        tau: f64,
    ) -> Result<Self> {
        if !tau.is_finite() {
            return Err(invalid("τ must be finite"));
        }
        let generators = coupling.generator_diagonals(prep.basis())?;
        let mut prepared = psi0.amplitudes().to_vec();
        prep.apply(&mut prepared);
        Ok(Self {
            prep,
            prepared,
            generators,
            tau,
            rows: Mutex::new(HashMap::new()),
        })
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        self.prep.basis()
    }

    pub fn dim(&self) -> usize {
        self.prepared.len()
    }

    /// `ℓ`.
    pub fn channel_count(&self) -> usize {
        self.generators.len() - 1
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    /// `U_SP |ψ₀⟩`.
    pub fn prepared_state(&self) -> StateVector {
        StateVector::from_raw(self.basis().clone(), self.prepared.clone())
    }

    pub fn prepared_amplitudes(&self) -> &[Complex64] {
        &self.prepared
    }

    fn imprinted(&self, phi: f64, eps: &[f64]) -> Vec<Complex64> {
        let theta = phase_angles(&self.generators, phi, eps, self.tau);
        self.prepared
            .iter()
            .zip(&theta)
            .map(|(a, t)| a * Complex64::from_polar(1.0, -t))
            .collect()
    }

    /// Final amplitudes `U_M D(φ, ε) U_SP |ψ₀⟩`.
    pub fn amplitudes(&self, phi: f64, eps: &[f64]) -> Vec<Complex64> {
        let mut chi = self.imprinted(phi, eps);
        self.prep.apply_adjoint(&mut chi);
        chi
    }

    pub fn distribution(&self, phi: f64, eps: &[f64]) -> Vec<f64> {
        self.amplitudes(phi, eps).iter().map(|a| a.norm_sqr()).collect()
    }

    /// Outcome distribution and its analytic partial derivatives with
    /// respect to `x = (φ, ε_1, …, ε_ℓ)`, as `grads[param][outcome]`.
    pub fn distribution_and_gradients(&self, phi: f64, eps: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let chi = self.imprinted(phi, eps);
        let mut amps = chi.clone();
        self.prep.apply_adjoint(&mut amps);
        let probs: Vec<f64> = amps.iter().map(|a| a.norm_sqr()).collect();
        let grads = self
            .generators
            .iter()
            .enumerate()
            .map(|(c, g)| {
                let scale = if c == 0 { 1.0 } else { self.tau };
                let mut d: Vec<Complex64> = chi
                    .iter()
                    .zip(g)
                    .map(|(z, gi)| z * Complex64::new(0.0, -scale * gi))
                    .collect();
                self.prep.apply_adjoint(&mut d);
                amps.iter()
                    .zip(&d)
                    .map(|(a, da)| 2.0 * (a.conj() * da).re)
                    .collect()
            })
            .collect();
        (probs, grads)
    }

    /// Row `outcome` of `U_M`, i.e. `conj(U_SP |outcome⟩)`.
    pub fn readout_row(&self, outcome: usize) -> Arc<Vec<Complex64>> {
        let mut rows = self.rows.lock().expect("row cache poisoned");
        rows.entry(outcome)
            .or_insert_with(|| {
                let mut e = vec![Complex64::new(0.0, 0.0); self.dim()];
                e[outcome] = Complex64::new(1.0, 0.0);
                self.prep.apply(&mut e);
                e.iter_mut().for_each(|z| *z = z.conj());
                Arc::new(e)
            })
            .clone()
    }

    /// `P(outcome | φ, ε)`.
    pub fn likelihood(&self, outcome: usize, phi: f64, eps: &[f64]) -> f64 {
        let row = self.readout_row(outcome);
        let theta = phase_angles(&self.generators, phi, eps, self.tau);
        row.iter()
            .zip(&self.prepared)
            .zip(&theta)
            .map(|((r, a), t)| r * a * Complex64::from_polar(1.0, -t))
            .sum::<Complex64>()
            .norm_sqr()
    }

    /// Draws fresh errors and one readout outcome at signal `phi`.
    pub fn shot<R: Rng + ?Sized>(
        &self,
        model: &ErrorModel,
        phi: f64,
        rng: &mut R,
    ) -> Result<SensingRun> {
        let draw = sample_errors(model, rng);
        let probs = self.distribution(phi, &draw.epsilon);
        let outcome_index = sample_outcome(&probs, rng)?;
        Ok(SensingRun {
            phi_true: phi,
            outcome: self.basis().state(outcome_index).to_vec(),
            outcome_index,
            error_draw: draw,
        })
    }
}

/// One simulated datapoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingRun {
    pub phi_true: f64,
    pub error_draw: ErrorDraw,
    pub outcome_index: usize,
    pub outcome: Vec<u32>,
}

/// `P(n⃗) = |⟨n⃗| U_SP† D(φ, ε) U_SP |ψ₀⟩|²` over the whole basis.
pub fn echo_distribution(
    psi0: &StateVector,
    schedule: &PulseSchedule,
    coupling: &CouplingMatrix,
    phi: f64,
    eps: &ErrorDraw,
    tau: f64,
) -> Result<Vec<f64>> {
    check_eps(coupling, eps)?;
    let exp = EchoExperiment::new(psi0, schedule, coupling, tau)?;
    Ok(exp.distribution(phi, &eps.epsilon))
}

/// Inverse-CDF draw of an outcome index.
pub fn sample_outcome<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> Result<usize> {
    if probabilities.is_empty() {
        return Err(Error::InvalidProbabilities("empty".into()));
    }
    if let Some(p) = probabilities
        .iter()
        .find(|p| !p.is_finite() || **p < -PROBABILITY_NEGATIVE_TOLERANCE)
    {
        return Err(Error::InvalidProbabilities(format!("entry {p}")));
    }
    let total: f64 = probabilities.iter().map(|p| p.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidProbabilities("zero total mass".into()));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, p) in probabilities.iter().enumerate() {
        let p = p.max(0.0);
        if p > 0.0 {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(last_positive)
}

/// Dense `U_SP` (columns are images of basis states). Only for small bases.
pub fn preparation_unitary(prep: &Preparation) -> DMatrix<Complex64> {
    let d = prep.basis().dim();
    let mut u = DMatrix::zeros(d, d);
    for c in 0..d {
        let mut e = vec![Complex64::new(0.0, 0.0); d];
        e[c] = Complex64::new(1.0, 0.0);
        prep.apply(&mut e);
        for r in 0..d {
            u[(r, c)] = e[r];
        }
    }
    u
}
