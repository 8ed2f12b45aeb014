//! Acceptance gate. Every criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.
//!
//! Run with `cargo test --test acceptance -- --nocapture`.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gravlab::dynamics::{random_schedule, EchoExperiment};
use gravlab::error_model::{build_coupling, ErrorModel};
use gravlab::experiments::{run, Mode, ResultRecord, ScenarioConfig};
use gravlab::fisher::{cfi_matrix, effective_fisher, effective_fisher_after, multi_shot_information, qfi_matrix};
use gravlab::fock::{FockBasis, StateVector};
use gravlab::haar::haar_validate;

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
    limit: f64,
}

impl Outcome {
    fn ok(&self) -> bool {
        self.passed && self.seconds < self.limit
    }
}

fn report(outcomes: &[Outcome]) {
    println!();
    for o in outcomes {
        println!(
            "criterion {} [{}] {} ({:.1}s, limit {}s): {}",
            o.id,
            if o.ok() { "PASS" } else { "FAIL" },
            o.title,
            o.seconds,
            o.limit,
            o.detail
        );
    }
}

fn timed(id: u32, title: &'static str, limit: f64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f();
    Outcome {
        id,
        title,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
        limit,
    }
}

fn checks_summary(record: &ResultRecord, filter: impl Fn(&str) -> bool) -> (bool, String) {
    let selected: Vec<_> = record.checks.iter().filter(|c| filter(&c.name)).collect();
    let passed = !selected.is_empty() && selected.iter().all(|c| c.passed);
    let detail = selected
        .iter()
        .map(|c| format!("{}={:.4} ({})", c.name, c.value, c.target))
        .collect::<Vec<_>>()
        .join("; ");
    (passed, detail)
}

fn haar_moments() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, l) in [(2, 2), (6, 3), (8, 4)] {
        let s = haar_validate(n, l, 2000, &mut rng).unwrap();
        let pass = s.z_diag.abs() < 5.0 && s.z_cross.abs() < 5.0;
        ok &= pass;
        parts.push(format!("(N={n},L={l}) z_diag={:.2} z_cross={:.2}", s.z_diag, s.z_cross));
    }
    (ok, parts.join("; "))
}

fn random_psd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() * rng.random_range(1.0..100.0)
}

fn arrowhead_linearity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        for channels in 1..=3 {
            let k = channels + 1;
            let prior = DMatrix::from_fn(k, k, |i, j| if i == j { rng.random_range(1.0..1e4) } else { 0.0 });
            let cfi = random_psd(k, &mut rng);
            let f1 = effective_fisher(&prior, &cfi).unwrap();
            for shots in 1..=5 {
                let full = multi_shot_information(&prior, &cfi, shots);
                let direct = 1.0 / full.try_inverse().unwrap()[(0, 0)];
                let linear = effective_fisher_after(shots, f1, prior[(0, 0)]);
                worst = worst.max((direct - linear).abs() / direct.abs());
            }
        }
    }
    (worst <= 1e-10, format!("max relative deviation {worst:.2e} (tolerance 1e-10)"))
}

fn scaling_config() -> ScenarioConfig {
    ScenarioConfig {
        atoms: vec![1000, 1500, 2000, 3000, 5000, 7000, 10000],
        modes: vec![4, 5, 6],
        channels: vec![4],
        sigma_phi: 0.01,
        sigma_err: 0.01,
        trials: 20,
        seed: 3,
        ..ScenarioConfig::default()
    }
}

fn knee_config() -> ScenarioConfig {
    ScenarioConfig {
        atoms: vec![10_000],
        modes: vec![2, 3, 4, 5],
        channels: vec![1, 2, 3],
        sigma_phi: 0.01,
        sigma_err: 0.01,
        trials: 20,
        seed: 4,
        ..ScenarioConfig::default()
    }
}

fn pulse_config() -> ScenarioConfig {
    ScenarioConfig {
        atoms: vec![10, 20, 40],
        modes: vec![3],
        pulse_pairs: 10,
        total_time: 40.0,
        trials: 20,
        seed: 5,
        ..ScenarioConfig::default()
    }
}

fn echo_config() -> ScenarioConfig {
    ScenarioConfig {
        atoms: vec![10],
        modes: vec![2, 3],
        channels: vec![1],
        sigma_phi: 0.02,
        sigma_err: 0.02,
        datapoints: 100,
        trials: 20,
        seed: 7,
        ..ScenarioConfig::default()
    }
}

/// Central-difference CFI of the echo distribution.
fn finite_difference_cfi(exp: &EchoExperiment, phi: f64, eps: &[f64]) -> DMatrix<f64> {
    let h = 1e-5;
    let k = eps.len() + 1;
    let p = exp.distribution(phi, eps);
    let grads: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let shift = |s: f64| {
                let mut x: Vec<f64> = std::iter::once(phi).chain(eps.iter().copied()).collect();
                x[j] += s;
                exp.distribution(x[0], &x[1..])
            };
            let (up, down) = (shift(h), shift(-h));
            up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    DMatrix::from_fn(k, k, |a, b| {
        p.iter()
            .enumerate()
            .filter(|(_, &pm)| pm > 1e-12)
            .map(|(m, &pm)| grads[a][m] * grads[b][m] / pm)
            .sum()
    })
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

struct CfiCase {
    exp: EchoExperiment,
    qfi: DMatrix<f64>,
    channels: usize,
}

fn cfi_cases() -> Vec<CfiCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut cases = Vec::new();
    for (n, l, channels) in [(1, 2, 0), (2, 2, 1), (3, 3, 0), (4, 3, 1), (6, 3, 2), (5, 2, 0)] {
        let model = ErrorModel::random_uniform(channels, l, 0.01, 0.01, &mut rng).unwrap();
        let coupling = build_coupling(&model, true);
        let basis = Arc::new(FockBasis::new(n, l).unwrap());
        let psi0 = StateVector::all_in_first_site(basis);
        let schedule = random_schedule(10, 40.0, l, rng.random()).unwrap();
        let exp = EchoExperiment::new(&psi0, &schedule, &coupling, 1.0).unwrap();
        let qfi = qfi_matrix(&exp.prepared_state(), &coupling).unwrap() * 4.0;
        cases.push(CfiCase { exp, qfi, channels });
    }
    cases
}

fn cfi_correctness() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cases = cfi_cases();
    let (mut worst_fd, mut worst_q): (f64, f64) = (0.0, 0.0);
    for case in &cases {
        for _ in 0..4 {
            let phi = rng.random_range(0.2..1.5);
            let eps: Vec<f64> = (0..case.channels).map(|_| rng.random_range(-0.5..0.5)).collect();
            let (p, g) = case.exp.distribution_and_gradients(phi, &eps);
            let cfi = cfi_matrix(&p, &g).unwrap();
            worst_fd = worst_fd.max(relative(&cfi, &finite_difference_cfi(&case.exp, phi, &eps)));
            worst_q = worst_q.max(relative(&cfi, &case.qfi));
        }
    }
    // Reference: along any direction v, vᵀ CFI(s v) v approaches vᵀ (4 F_Q) v
    // as s → 0. This is the regime where the echo readout is optimal.
    let mut worst_local: f64 = 0.0;
    for case in &cases {
        let k = case.channels + 1;
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = 1e-3;
        let (p, g) = case.exp.distribution_and_gradients(s * v[0], &v[1..].iter().map(|x| s * x).collect::<Vec<_>>());
        let cfi = cfi_matrix(&p, &g).unwrap();
        let quad = |m: &DMatrix<f64>| (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| v[i] * m[(i, j)] * v[j]).sum::<f64>();
        let (a, b) = (quad(&cfi), quad(&case.qfi));
        worst_local = worst_local.max((a - b).abs() / b);
    }
    let fd_ok = worst_fd <= 1e-5;
    let q_ok = worst_q <= 1e-6;
    (
        fd_ok && q_ok,
        format!(
            "finite differences {worst_fd:.2e} (tolerance 1e-5, {}); CFI vs QFI at generic phi {worst_q:.2e} (tolerance 1e-6, {}); \
             reference: local directional limit {worst_local:.2e}",
            if fd_ok { "ok" } else { "fail" },
            if q_ok { "ok" } else { "fail" },
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = Vec::new();

    outcomes.push(timed(1, "Haar occupancy covariance means within 5 SE", 60.0, haar_moments));
    outcomes.push(timed(2, "multi-shot information is linear in the shot count", 1.0, arrowhead_linearity));

    outcomes.push(timed(3, "saturation for L < l+2, N^2 growth for L >= l+2", 10.0, || {
        let record = run(Mode::ScalingScan, &scaling_config()).unwrap();
        let (passed, detail) = checks_summary(&record, |n| n.starts_with("slope"));
        // Reference only: the same draws with the scan extended to N = 1e6.
        let mut wide = scaling_config();
        wide.atoms.extend([20_000, 50_000, 100_000, 200_000, 500_000, 1_000_000]);
        let reference = run(Mode::ScalingScan, &wide).unwrap();
        let (_, wide_detail) = checks_summary(&reference, |n| n.starts_with("slope"));
        (passed, format!("{detail}; reference, top decade ending at N=1e6: {wide_detail}"))
    }));

    outcomes.push(timed(4, "knee between L = l+1 and L = l+2 at N = 1e4", 30.0, || {
        let record = run(Mode::ModeScan, &knee_config()).unwrap();
        checks_summary(&record, |n| n.starts_with("knee"))
    }));

    outcomes.push(timed(5, "random-pulse F_min near N(N+L)/(L(L+1))", 300.0, || {
        let record = run(Mode::PulseFmin, &pulse_config()).unwrap();
        checks_summary(&record, |n| n.starts_with("f_min"))
    }));

    outcomes.push(timed(6, "CFI gradients and CFI = QFI under the echo readout", 60.0, cfi_correctness));

    let start = Instant::now();
    let echo = run(Mode::EchoInfer, &echo_config()).unwrap();
    let echo_seconds = start.elapsed().as_secs_f64();
    let (passed, detail) = checks_summary(&echo, |n| n.ends_with("l=1 L=3") && !n.starts_with("paired"));
    outcomes.push(Outcome {
        id: 7,
        title: "Bayesian inference: van Trees at every step, final variance within 2x",
        passed,
        detail,
        seconds: echo_seconds,
        limit: 600.0,
    });
    let (passed, detail) = checks_summary(&echo, |n| n.starts_with("paired"));
    outcomes.push(Outcome {
        id: 8,
        title: "L=3 beats L=2 with one error channel in paired runs",
        passed,
        detail,
        seconds: echo_seconds,
        limit: 600.0,
    });

    report(&outcomes);
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.ok()).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
