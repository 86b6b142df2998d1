//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qnem::circuit::{Gate, Observable, Pauli, PauliString};
use qnem::experiment::{self, cell_circuit, CellKey, CircuitKind, ExperimentConfig, ResultTable, RunOutcome};
use qnem::linalg::{CMatrix, C64};
use qnem::mitigation::{
    correct_depolarizing, lagrange_weights_at_zero, total_variation, unfold, unfold_distribution, zne_quadratic,
    ConfusionMatrix, Estimate, QubitConfusion,
};
use qnem::simulator::{sample_counts, simulate_density, DensityMatrix, NoiseModel, StateVector};
use qnem::transforms::{FoldFactor, TwirlAssignment, TWIRL_TABLE};
use qnem::xx_model::{exact_magnetization, target_circuit, xxyy_block, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

type Outcome = Result<(bool, String), String>;

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.1}s of {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

fn criterion_1() -> Outcome {
    let cnot = Gate::cnot(0, 1).unitary();
    let matches = |t: &TwirlAssignment| -> Result<f64, String> {
        let u = t.dressed_circuit().unitary().map_err(|e| e.to_string())?;
        Ok(u.distance_up_to_phase(&cnot))
    };
    let mut worst: f64 = 0.0;
    for row in &TWIRL_TABLE {
        worst = worst.max(matches(row)?);
    }
    let mut found = Vec::new();
    for p in Pauli::ALL {
        for q in Pauli::ALL {
            for r in Pauli::ALL {
                for s in Pauli::ALL {
                    let t = TwirlAssignment::new(p, q, r, s);
                    if matches(&t)? <= 1e-12 {
                        found.push(t);
                    }
                }
            }
        }
    }
    let same_set = found.len() == 16 && TWIRL_TABLE.iter().all(|row| found.contains(row));
    Ok((
        worst <= 1e-12 && same_set,
        format!("worst table distance {worst:.1e}, exhaustive search found {} tuples", found.len()),
    ))
}

fn criterion_2() -> Outcome {
    // exp(−iθ(XX+YY)) acts as a rotation by 2θ inside span{|01⟩, |10⟩}.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta: f64 = rng.random_range(-7.0..7.0);
        let (c, s) = ((2.0 * theta).cos(), (2.0 * theta).sin());
        let mut dense = CMatrix::identity(4);
        dense.set(1, 1, C64::new(c, 0.0));
        dense.set(2, 2, C64::new(c, 0.0));
        dense.set(1, 2, C64::new(0.0, -s));
        dense.set(2, 1, C64::new(0.0, -s));
        let got = xxyy_block(theta).unitary().map_err(|e| e.to_string())?;
        worst = worst.max(got.distance_up_to_phase(&dense));
    }
    Ok((worst <= 1e-10, format!("worst distance {worst:.1e} over 100 angles")))
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector {
    let amps: Vec<C64> = (0..1usize << n)
        .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect())
}

fn random_traceless(n: usize, rng: &mut ChaCha8Rng) -> Observable {
    let mut obs = Observable::new(n, 0.0);
    for _ in 0..4 {
        let paulis: Vec<Pauli> = (0..n).map(|_| Pauli::ALL[rng.random_range(0..4)]).collect();
        let s = PauliString::from_paulis(&paulis);
        if !s.is_identity() {
            obs.add_term(rng.random_range(-1.0..1.0), s).expect("non-identity term");
        }
    }
    obs
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let psi = random_state(6, &mut rng);
        let obs = random_traceless(6, &mut rng);
        let p = rng.random_range(0.0..=0.9);
        let mut rho = DensityMatrix::from_pure(&psi);
        let clean = rho.expectation(&obs).map_err(|e| e.to_string())?;
        rho.apply_global_depolarizing(p).map_err(|e| e.to_string())?;
        let noisy = rho.expectation(&obs).map_err(|e| e.to_string())?;
        let back = correct_depolarizing(noisy, 1.0 - p, 0.0).map_err(|e| e.to_string())?;
        worst = worst.max((back - clean).abs());
    }
    Ok((worst <= 1e-12, format!("worst recovery error {worst:.1e}")))
}

fn criterion_4() -> Outcome {
    let err = |dt: f64| -> Result<f64, String> {
        let params = ModelParams {
            dt,
            steps: (3.0 / dt).round() as usize,
            ..ModelParams::default()
        };
        let trotter = exact_magnetization(&params, 3.0, true).map_err(|e| e.to_string())?;
        let exact = exact_magnetization(&params, 3.0, false).map_err(|e| e.to_string())?;
        Ok((trotter - exact).abs())
    };
    let (coarse, fine) = (err(0.2)?, err(0.1)?);
    let ratio = coarse / fine;
    Ok((
        (3.5..=4.5).contains(&ratio),
        format!("error {coarse:.4e} at dt=0.2, {fine:.4e} at dt=0.1, ratio {ratio:.3}"),
    ))
}

fn criterion_5() -> Outcome {
    let weights = lagrange_weights_at_zero(&[1.0, 3.0, 5.0]);
    let weights_ok = weights.iter().zip([1.875, -1.25, 0.375]).all(|(a, b)| (a - b).abs() < 1e-12);
    let points = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, Estimate)> {
        [1.0, 3.0, 5.0].iter().map(|&n| (n, Estimate::exact(f(n)))).collect()
    };
    let e = zne_quadratic(&points(&|n| (-0.1 * n).exp())).map_err(|e| e.to_string())?;
    let affine = zne_quadratic(&points(&|n| 0.7 - 0.13 * n)).map_err(|e| e.to_string())?;
    let ok = weights_ok && (e.value - 0.99800).abs() <= 1e-5 && (affine.value - 0.7).abs() <= 1e-12;
    Ok((
        ok,
        format!("exponential -> {:.6}, affine error {:.1e}", e.value, (affine.value - 0.7).abs()),
    ))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        instances: 256,
        exact: true,
        noise: NoiseModel {
            coherent_angle: 0.05,
            ..NoiseModel::noiseless()
        },
        model: ModelParams {
            steps: 5,
            ..ModelParams::default()
        },
        ..ExperimentConfig::default()
    };
    let mut purity_ok = true;
    let mut purity_note = String::new();
    for step in 1..=cfg.model.steps {
        let target = target_circuit(&cfg.model.with_steps(step)).map_err(|e| e.to_string())?;
        let mut states = Vec::with_capacity(cfg.instances);
        let mut purities = Vec::with_capacity(cfg.instances);
        for instance in 0..cfg.instances {
            let key = CellKey {
                step,
                fold: FoldFactor::ONE,
                instance,
                kind: CircuitKind::Target,
            };
            let (circuit, _) = cell_circuit(&cfg, &target, &key);
            let rho = simulate_density(&circuit, &cfg.noise).map_err(|e| e.to_string())?;
            purities.push(rho.purity());
            states.push(rho);
        }
        purities.sort_by(f64::total_cmp);
        let median = 0.5 * (purities[cfg.instances / 2 - 1] + purities[cfg.instances / 2]);
        let averaged = DensityMatrix::average(&states).expect("non-empty").purity();
        purity_ok &= averaged < median;
        if step == cfg.model.steps {
            purity_note = format!("step {step} purity: averaged {averaged:.4}, median single {median:.4}");
        }
    }
    let (table, _) = experiment::run_in_memory(&cfg, None).map_err(|e| e.to_string())?;
    let mut error_ok = table.is_complete();
    let mut worst_ratio: f64 = 0.0;
    for row in &table.rows {
        let (Some(m), Some(o)) = (row.mitigated, row.original) else {
            error_ok = false;
            continue;
        };
        let mitigated = (m.value - row.exact_trotter).abs();
        let original = (o.mean - row.exact_trotter).abs();
        if row.step == 0 {
            error_ok &= mitigated <= 1e-12 && original <= 1e-12;
        } else {
            error_ok &= mitigated < original;
            worst_ratio = worst_ratio.max(mitigated / original);
        }
    }
    let (time_ok, time) = within(start.elapsed(), Duration::from_secs(300));
    Ok((
        purity_ok && error_ok && time_ok,
        format!("{purity_note}; worst mitigated/unmitigated error ratio {worst_ratio:.3}; {time}"),
    ))
}

fn fig3_config() -> ExperimentConfig {
    ExperimentConfig {
        instances: 128,
        exact: true,
        noise: NoiseModel {
            p2: 0.01,
            coherent_angle: 0.02,
            global_p: None,
            readout: vec![QubitConfusion { p01: 0.02, p10: 0.05 }],
        },
        model: ModelParams::default(),
        ..ExperimentConfig::default()
    }
}

fn criterion_7(table: &ResultTable, elapsed: Duration) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut complete = table.is_complete();
    for row in &table.rows {
        match row.mitigated {
            Some(m) => worst = worst.max((m.value - row.exact_trotter).abs()),
            None => complete = false,
        }
    }
    let late = &table.rows[table.rows.len().saturating_sub(4)..];
    let damping = late
        .iter()
        .filter_map(|r| r.original.map(|o| (o.mean - r.exact_trotter).abs()))
        .fold(0.0, f64::max);
    let toward_zero = late
        .iter()
        .all(|r| r.original.is_some_and(|o| o.mean.abs() < r.exact_trotter.abs()));
    let (time_ok, time) = within(elapsed, Duration::from_secs(1800));
    Ok((
        complete && worst <= 0.10 && damping >= 0.3 && toward_zero && time_ok,
        format!("max |mitigated - exact| {worst:.4}, late original deviation {damping:.3}; {time}"),
    ))
}

fn criterion_8(exact: &ResultTable) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        exact: false,
        shots: 2048,
        unfold_iterations: 100,
        ..fig3_config()
    };
    let (sampled, _) = experiment::run_in_memory(&cfg, None).map_err(|e| e.to_string())?;
    let mut ok = sampled.is_complete();
    let mut worst: f64 = 0.0;
    for (s, e) in sampled.rows.iter().zip(&exact.rows) {
        let (Some(s), Some(e)) = (s.mitigated, e.mitigated) else {
            ok = false;
            continue;
        };
        let z = (s.value - e.value).abs() / s.uncertainty;
        worst = worst.max(z);
        ok &= (s.value - e.value).abs() <= 3.0 * s.uncertainty;
    }
    let (time_ok, time) = within(start.elapsed(), Duration::from_secs(3600));
    Ok((ok && time_ok, format!("worst |sampled - exact| = {worst:.2} x uncertainty; {time}")))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let weights: Vec<f64> = (0..64).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = weights.iter().sum();
    let truth: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let confusion = ConfusionMatrix::tensor(vec![QubitConfusion { p01: 0.02, p10: 0.05 }; 6]).map_err(|e| e.to_string())?;
    let mut diag = CMatrix::zeros(64);
    for (k, p) in truth.iter().enumerate() {
        diag.set(k, k, C64::new(*p, 0.0));
    }
    let rho = DensityMatrix::from_matrix(6, &diag);
    let counts = sample_counts(&rho, 1_000_000, &confusion, 99).map_err(|e| e.to_string())?;
    let unfolded = unfold(&counts, &confusion, 100).map_err(|e| e.to_string())?;
    let tv = total_variation(&unfolded, &truth);
    let fixed = unfold_distribution(&truth, &ConfusionMatrix::identity(6), 100).map_err(|e| e.to_string())?;
    let exact_fixed_point = fixed == truth;
    Ok((
        tv < 0.01 && exact_fixed_point,
        format!("unfolded TV {tv:.5}, identity fixed point exact: {exact_fixed_point}"),
    ))
}

fn read_tables(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    [
        experiment::FIG3_FILE,
        experiment::FIG4_FILE,
        experiment::FIG5_FILE,
        experiment::FIG6_FILE,
    ]
    .iter()
    .map(|f| std::fs::read(dir.join(f)).map_err(|e| e.to_string()))
    .collect()
}

fn criterion_10(first_dir: &Path) -> Outcome {
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    experiment::run(&fig3_config(), second.path(), Some(2)).map_err(|e| e.to_string())?;
    let (a, b) = (read_tables(first_dir)?, read_tables(second.path())?);
    let bytes: usize = a.iter().map(Vec::len).sum();
    Ok((a == b, format!("{bytes} bytes of tables compared")))
}

fn report(index: usize, title: &str, outcome: Outcome) -> bool {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("{} criterion {index:>2} {title}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn main() -> ExitCode {
    let timed = |f: fn() -> Outcome, limit: Option<Duration>| -> Outcome {
        let start = Instant::now();
        let (ok, detail) = f()?;
        match limit {
            Some(limit) => {
                let (time_ok, time) = within(start.elapsed(), limit);
                Ok((ok && time_ok, format!("{detail}; {time}")))
            }
            None => Ok((ok, detail)),
        }
    };
    let mut all = true;
    all &= report(1, "twirl table", timed(criterion_1, Some(Duration::from_secs(1))));
    all &= report(2, "block decomposition", timed(criterion_2, Some(Duration::from_secs(1))));
    all &= report(3, "depolarizing correction", timed(criterion_3, Some(Duration::from_secs(10))));
    all &= report(4, "trotter convergence", timed(criterion_4, Some(Duration::from_secs(10))));
    all &= report(5, "zne oracle", timed(criterion_5, None));
    all &= report(6, "coherent-to-incoherent conversion", criterion_6());

    let first = tempfile::tempdir().expect("temporary directory");
    let start = Instant::now();
    let fig3: Result<RunOutcome, String> =
        experiment::run(&fig3_config(), first.path(), None).map_err(|e| e.to_string());
    let elapsed = start.elapsed();
    let fig3 = fig3.map(|o| o.table);
    all &= report(7, "end-to-end pipeline", fig3.clone().and_then(|t| criterion_7(&t, elapsed)));
    all &= report(8, "sampled-mode consistency", fig3.clone().and_then(|t| criterion_8(&t)));
    all &= report(9, "unfolding", criterion_9());
    all &= report(10, "determinism", fig3.and_then(|_| criterion_10(first.path())));

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
