use std::collections::BTreeMap;

use proptest::prelude::*;
use qnem::circuit::{Circuit, Gate, Observable, OneQubitGate};
use qnem::mitigation::{
    correct_depolarizing, unfold_distribution, zne_quadratic, ConfusionMatrix, Estimate, QubitConfusion,
};
use qnem::simulator::{simulate_density, simulate_statevector, DensityMatrix, NoiseModel, StateVector};
use qnem::transforms::{fold_cnots, randomized_compile, FoldFactor};
use qnem::xx_model::{total_magnetization, trotter_circuit, xxyy_block, ModelParams};

fn one_qubit_gate() -> impl Strategy<Value = OneQubitGate> {
    let angle = -7.0..7.0f64;
    prop_oneof![
        Just(OneQubitGate::X),
        Just(OneQubitGate::Y),
        Just(OneQubitGate::Z),
        Just(OneQubitGate::H),
        angle.clone().prop_map(OneQubitGate::Rx),
        angle.clone().prop_map(OneQubitGate::Ry),
        angle.clone().prop_map(OneQubitGate::Rz),
        (angle.clone(), angle.clone(), angle).prop_map(|(theta, phi, lambda)| OneQubitGate::U3 { theta, phi, lambda }),
    ]
}

fn gate(width: usize) -> impl Strategy<Value = Gate> {
    prop_oneof![
        (one_qubit_gate(), 0..width).prop_map(|(g, q)| Gate::one(g, q)),
        (0..width, 1..width).prop_map(move |(c, off)| Gate::cnot(c, (c + off) % width)),
    ]
}

fn circuit(width: usize, max_gates: usize) -> impl Strategy<Value = Circuit> {
    prop::collection::vec(gate(width), 0..max_gates).prop_map(move |gates| {
        let mut c = Circuit::new(width);
        for g in gates {
            c.append(g).expect("generated gates are valid");
        }
        c
    })
}

fn fold_factor() -> impl Strategy<Value = FoldFactor> {
    prop_oneof![Just(FoldFactor::ONE), Just(FoldFactor::THREE), Just(FoldFactor::FIVE)]
}

fn distribution(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, dim).prop_filter_map("nonzero", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn twirling_preserves_the_unitary(c in circuit(3, 24), seed in any::<u64>()) {
        let u = c.unitary().unwrap();
        let rc = randomized_compile(&c, seed);
        prop_assert!(rc.unitary().unwrap().distance_up_to_phase(&u) < 1e-10);
        prop_assert_eq!(rc.cnot_count(), c.cnot_count());
    }

    #[test]
    fn folding_scales_cnots_and_keeps_the_unitary(c in circuit(3, 20), f in fold_factor()) {
        let folded = fold_cnots(&c, f);
        prop_assert_eq!(folded.cnot_count(), f.get() as usize * c.cnot_count());
        prop_assert_eq!(folded.gate_count() - folded.cnot_count(), c.gate_count() - c.cnot_count());
        prop_assert!(folded.unitary().unwrap().distance(&c.unitary().unwrap()) < 1e-10);
    }

    #[test]
    fn folding_and_twirling_commute_on_counts(c in circuit(4, 20), f in fold_factor(), seed in any::<u64>()) {
        let a = fold_cnots(&randomized_compile(&c, seed), f);
        let b = randomized_compile(&fold_cnots(&c, f), seed);
        prop_assert_eq!(a.cnot_count(), b.cnot_count());
        prop_assert!(a.unitary().unwrap().distance_up_to_phase(&b.unitary().unwrap()) < 1e-10);
    }

    #[test]
    fn noiseless_density_matches_statevector(c in circuit(4, 30)) {
        let rho = simulate_density(&c, &NoiseModel::noiseless()).unwrap();
        let psi = simulate_statevector(&c).unwrap();
        let pure = DensityMatrix::from_pure(&psi);
        prop_assert!(rho.to_matrix().distance(&pure.to_matrix()) < 1e-10);
        prop_assert!((rho.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layers_apply_in_order(a in circuit(3, 10), b in circuit(3, 10)) {
        let mut ab = a.clone();
        ab.extend(&b).unwrap();
        let expected = b.unitary().unwrap().matmul(&a.unitary().unwrap());
        prop_assert!(ab.unitary().unwrap().distance(&expected) < 1e-10);
    }

    #[test]
    fn depolarizing_composes_multiplicatively(c in circuit(3, 12), p1 in 0.0..1.0f64, p2 in 0.0..1.0f64) {
        let rho = simulate_density(&c, &NoiseModel::noiseless()).unwrap();
        let mut twice = rho.clone();
        twice.apply_depolarizing(&[0, 2], p1).unwrap();
        twice.apply_depolarizing(&[0, 2], p2).unwrap();
        let mut once = rho;
        once.apply_depolarizing(&[0, 2], 1.0 - (1.0 - p1) * (1.0 - p2)).unwrap();
        prop_assert!(twice.to_matrix().distance(&once.to_matrix()) < 1e-12);
    }

    #[test]
    fn global_depolarizing_scales_traceless_expectations(c in circuit(3, 12), p in 0.0..1.0f64, q in 0..3usize) {
        let mut rho = simulate_density(&c, &NoiseModel::noiseless()).unwrap();
        let z = Observable::sigma_z(3, q);
        let clean = rho.expectation(&z).unwrap();
        rho.apply_global_depolarizing(p).unwrap();
        prop_assert!((rho.expectation(&z).unwrap() - (1.0 - p) * clean).abs() < 1e-12);
    }

    #[test]
    fn purity_never_increases_under_depolarizing(c in circuit(3, 12), ps in prop::collection::vec(0.0..0.3f64, 1..6)) {
        let mut rho = simulate_density(&c, &NoiseModel::noiseless()).unwrap();
        let mut last = rho.purity();
        for (i, p) in ps.into_iter().enumerate() {
            rho.apply_depolarizing(&[i % 3, (i + 1) % 3], p).unwrap();
            let now = rho.purity();
            prop_assert!(now <= last + 1e-12);
            prop_assert!(now >= 1.0 / 8.0 - 1e-12);
            last = now;
        }
    }

    #[test]
    fn noisy_states_stay_physical(c in circuit(3, 16), p2 in 0.0..0.2f64, eps in -0.3..0.3f64) {
        let noise = NoiseModel { p2, coherent_angle: eps, ..NoiseModel::noiseless() };
        let rho = simulate_density(&c, &noise).unwrap();
        prop_assert!((rho.trace() - 1.0).abs() < 1e-12);
        prop_assert!(rho.hermiticity_defect() < 1e-12);
        prop_assert!(rho.probabilities().iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn correction_is_shift_equivariant(y in -1.0..1.0f64, f in 0.05..1.0f64, c in -1.0..1.0f64, s in -2.0..2.0f64) {
        let base = correct_depolarizing(y, f, c).unwrap();
        let shifted = correct_depolarizing(y + s, f, c + s).unwrap();
        prop_assert!((shifted - (base + s)).abs() < 1e-9 * (1.0 + base.abs() + s.abs()) / f);
    }

    #[test]
    fn correction_inverts_global_depolarizing(x in -1.0..1.0f64, p in 0.0..0.95f64, c in -1.0..1.0f64) {
        let noisy = (1.0 - p) * x + p * c;
        let back = correct_depolarizing(noisy, 1.0 - p, c).unwrap();
        prop_assert!((back - x).abs() < 1e-10);
    }

    #[test]
    fn zne_is_affine_equivariant(ys in prop::array::uniform3(-1.0..1.0f64), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let pts = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, Estimate)> {
            [1.0, 3.0, 5.0].iter().zip(ys).map(|(&x, y)| (x, Estimate::new(f(y), 0.1))).collect()
        };
        let plain = zne_quadratic(&pts(&|y| y)).unwrap();
        let mapped = zne_quadratic(&pts(&|y| a * y + b)).unwrap();
        prop_assert!((mapped.value - (a * plain.value + b)).abs() < 1e-12 * (1.0 + a.abs() * 10.0 + b.abs()));
        prop_assert!((mapped.uncertainty - plain.uncertainty).abs() < 1e-12);
    }

    #[test]
    fn zne_reproduces_quadratics(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64) {
        let pts: Vec<(f64, Estimate)> = [1.0, 3.0, 5.0]
            .iter()
            .map(|&x: &f64| (x, Estimate::exact(a + b * x + c * x * x)))
            .collect();
        prop_assert!((zne_quadratic(&pts).unwrap().value - a).abs() < 1e-12);
    }

    #[test]
    fn identity_confusion_is_a_fixed_point(d in distribution(8), iters in 1..50usize) {
        let out = unfold_distribution(&d, &ConfusionMatrix::identity(3), iters).unwrap();
        prop_assert_eq!(out, d);
    }

    #[test]
    fn unfolding_keeps_a_distribution(d in distribution(8), p01 in 0.0..0.2f64, p10 in 0.0..0.2f64) {
        let conf = ConfusionMatrix::tensor(vec![QubitConfusion::from_flips(p01, p10).unwrap(); 3]).unwrap();
        let out = unfold_distribution(&conf.forward(&d), &conf, 30).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn xxyy_block_fixes_aligned_states(theta in -4.0..4.0f64) {
        let block = xxyy_block(theta);
        for index in [0usize, 3] {
            let mut psi = StateVector::basis_state(2, index);
            psi.apply_circuit(&block).unwrap();
            let p = psi.probabilities();
            prop_assert!((p[index] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trotter_steps_conserve_total_magnetization(basis in 0usize..64, steps in 0usize..4, dt in 0.01..0.6f64) {
        let params = ModelParams { steps, dt, ..ModelParams::default() };
        let mut psi = StateVector::basis_state(6, basis);
        let before = total_magnetization(&psi);
        psi.apply_circuit(&trotter_circuit(&params).unwrap()).unwrap();
        prop_assert!((total_magnetization(&psi) - before).abs() < 1e-10);
    }

    #[test]
    fn merging_half_steps_keeps_the_state(steps in 1usize..5, dt in 0.01..0.6f64, basis in 0usize..64) {
        let plain = ModelParams { steps, dt, ..ModelParams::default() };
        let merged = ModelParams { merge_half_steps: true, ..plain.clone() };
        let run = |p: &ModelParams| {
            let mut psi = StateVector::basis_state(6, basis);
            psi.apply_circuit(&trotter_circuit(p).unwrap()).unwrap();
            psi
        };
        let (a, b) = (run(&plain), run(&merged));
        let overlap: f64 = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| x.conj() * y).sum::<qnem::linalg::C64>().norm();
        prop_assert!((overlap - 1.0).abs() < 1e-10);
    }
}

#[test]
fn folds_keep_distinct_instances_deterministic() {
    let mut c = Circuit::new(2);
    c.append(Gate::one(OneQubitGate::H, 0)).unwrap();
    c.append(Gate::cnot(0, 1)).unwrap();
    let mut seen = BTreeMap::new();
    for seed in 0..32u64 {
        let text = randomized_compile(&c, seed).to_text();
        assert_eq!(text, randomized_compile(&c, seed).to_text());
        *seen.entry(text).or_insert(0) += 1;
    }
    assert!(seen.len() > 4, "twirl draws should vary with the seed");
}
