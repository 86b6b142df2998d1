//! Quenched XX chain: Hamiltonian, second-order Trotter circuits, domain-wall
//! preparation, last-site magnetization and noiseless reference values.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, Gate, Observable, OneQubitGate, Pauli, PauliString};
use crate::linalg::{C64, I};
use crate::simulator::StateVector;

/// Largest chain simulated densely by [`exact_magnetization`].
pub const EXACT_CAP: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("chain length {n} exceeds the exact-solution cap of {cap}")]
    WidthOverCap { n: usize, cap: usize },
    #[error("time {t} is not a whole number of steps of {dt}")]
    TimeNotOnGrid { t: f64, dt: f64 },
}

/// Which bonds carry the half-step exponentials. Bond `j` couples qubits
/// `j` and `j+1`; `Odd` means bonds 1, 3, 5, … counted from one (0, 2, 4, …
/// counted from zero).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HalfStepBonds {
    #[default]
    Odd,
    Even,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Chain length.
    pub n: usize,
    /// Coupling `J`.
    pub coupling: f64,
    /// Time step `Δt` (ħ = 1).
    pub dt: f64,
    /// Number of Trotter steps.
    pub steps: usize,
    /// Fuse the trailing half step of one Trotter step with the leading half
    /// step of the next.
    pub merge_half_steps: bool,
    pub half_step_bonds: HalfStepBonds,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            n: 6,
            coupling: 1.0,
            dt: 0.25,
            steps: 15,
            merge_half_steps: false,
            half_step_bonds: HalfStepBonds::Odd,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n < 2 {
            return Err(ModelError::InvalidParams(format!("n = {} < 2", self.n)));
        }
        if self.n > 64 {
            return Err(ModelError::InvalidParams(format!("n = {} > 64", self.n)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ModelError::InvalidParams(format!("dt = {} must be positive", self.dt)));
        }
        if !self.coupling.is_finite() {
            return Err(ModelError::InvalidParams("coupling is not finite".into()));
        }
        Ok(())
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        ModelParams {
            steps,
            ..self.clone()
        }
    }

    /// Bonds carrying the half-step (`F`) and full-step (`G`) exponentials.
    pub fn bond_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let (odd, even): (Vec<usize>, Vec<usize>) = (0..self.n - 1).partition(|j| j % 2 == 0);
        match self.half_step_bonds {
            HalfStepBonds::Odd => (odd, even),
            HalfStepBonds::Even => (even, odd),
        }
    }
}

/// `H = −J Σ_j (X_j X_{j+1} + Y_j Y_{j+1})`.
pub fn build_hamiltonian(params: &ModelParams) -> Result<Observable, ModelError> {
    params.validate()?;
    let n = params.n;
    let mut h = Observable::new(n, 0.0);
    for j in 0..n - 1 {
        for p in [Pauli::X, Pauli::Y] {
            let s = PauliString::identity(n).with(j, p).with(j + 1, p);
            h.add_term(-params.coupling, s).expect("bond strings are not identity");
        }
    }
    Ok(h)
}

/// Appends `exp[−iθ(X_a X_b + Y_a Y_b)]` as five layers with two CNOTs.
///
/// With `V = Rx(−π/2)` mapping Z to Y, `XX+YY = (V⊗V)(XX+ZZ)(V⊗V)†`, and
/// `CNOT·(XX+ZZ)·CNOT = X_a + Z_b`, so the block is
/// `(V⊗V)·CNOT·(Rx(2θ)⊗Rz(2θ))·CNOT·(V†⊗V†)`.
fn push_blocks(circuit: &mut Circuit, bonds: &[(usize, usize)], theta: f64) {
    let each = |f: &dyn Fn(usize, usize) -> Vec<Gate>| -> Vec<Gate> {
        bonds.iter().flat_map(|&(a, b)| f(a, b)).collect()
    };
    let layers = [
        each(&|a, b| {
            vec![
                Gate::one(OneQubitGate::Rx(FRAC_PI_2), a),
                Gate::one(OneQubitGate::Rx(FRAC_PI_2), b),
            ]
        }),
        each(&|a, b| vec![Gate::cnot(a, b)]),
        each(&|a, b| {
            vec![
                Gate::one(OneQubitGate::Rx(2.0 * theta), a),
                Gate::one(OneQubitGate::Rz(2.0 * theta), b),
            ]
        }),
        each(&|a, b| vec![Gate::cnot(a, b)]),
        each(&|a, b| {
            vec![
                Gate::one(OneQubitGate::Rx(-FRAC_PI_2), a),
                Gate::one(OneQubitGate::Rx(-FRAC_PI_2), b),
            ]
        }),
    ];
    for layer in layers {
        circuit.push_layer(layer).expect("bonds in one set are disjoint");
    }
}

/// Two-qubit circuit for `exp[−iθ(XX + YY)]`.
pub fn xxyy_block(theta: f64) -> Circuit {
    let mut c = Circuit::new(2);
    push_blocks(&mut c, &[(0, 1)], theta);
    c
}

/// Second-order Trotter evolution `e^{−iFΔt/2} e^{−iGΔt} e^{−iFΔt/2}` per
/// step, without state preparation.
pub fn trotter_circuit(params: &ModelParams) -> Result<Circuit, ModelError> {
    params.validate()?;
    let (outer, inner) = params.bond_sets();
    let pairs = |bonds: &[usize]| bonds.iter().map(|&j| (j, j + 1)).collect::<Vec<_>>();
    let (outer, inner) = (pairs(&outer), pairs(&inner));
    // exp(−iFτ) with F = −J Σ(XX+YY) is a block with θ = −Jτ
    let half = -params.coupling * params.dt / 2.0;
    let full = -params.coupling * params.dt;
    let mut c = Circuit::new(params.n);
    if params.steps == 0 {
        return Ok(c);
    }
    if params.merge_half_steps {
        push_blocks(&mut c, &outer, half);
        for k in 0..params.steps {
            push_blocks(&mut c, &inner, full);
            let theta = if k + 1 == params.steps { half } else { full };
            push_blocks(&mut c, &outer, theta);
        }
    } else {
        for _ in 0..params.steps {
            push_blocks(&mut c, &outer, half);
            push_blocks(&mut c, &inner, full);
            push_blocks(&mut c, &outer, half);
        }
    }
    Ok(c)
}

/// X on the first `⌈n/2⌉` qubits: `|1…10…0⟩`.
pub fn domain_wall_prep(n: usize) -> Circuit {
    let mut c = Circuit::new(n);
    c.push_layer((0..n.div_ceil(2)).map(|q| Gate::one(OneQubitGate::X, q)).collect())
        .expect("one gate per wire");
    c
}

/// Domain-wall preparation followed by `params.steps` Trotter steps.
pub fn target_circuit(params: &ModelParams) -> Result<Circuit, ModelError> {
    let mut c = domain_wall_prep(params.n);
    c.extend(&trotter_circuit(params)?).expect("same width");
    Ok(c)
}

/// `σ_z` on the last site.
pub fn magnetization_observable(n: usize) -> Observable {
    Observable::sigma_z(n, n - 1)
}

fn domain_wall_state(n: usize) -> StateVector {
    let ones = n.div_ceil(2);
    let index = ((1usize << ones) - 1) << (n - ones);
    StateVector::basis_state(n, index)
}

/// Noiseless last-site magnetization at time `t`: through the Trotter
/// circuit when `trotterized`, else under `e^{−iHt}`.
pub fn exact_magnetization(params: &ModelParams, t: f64, trotterized: bool) -> Result<f64, ModelError> {
    params.validate()?;
    if params.n > EXACT_CAP {
        return Err(ModelError::WidthOverCap {
            n: params.n,
            cap: EXACT_CAP,
        });
    }
    let obs = magnetization_observable(params.n);
    let psi = if trotterized {
        let steps = (t / params.dt).round();
        if (steps * params.dt - t).abs() > 1e-9 * t.abs().max(1.0) || steps < 0.0 {
            return Err(ModelError::TimeNotOnGrid { t, dt: params.dt });
        }
        let mut psi = StateVector::zero_state(params.n);
        psi.apply_circuit(&target_circuit(&params.with_steps(steps as usize))?)
            .expect("same width");
        psi
    } else {
        let h = build_hamiltonian(params)?;
        StateVector::from_amplitudes(evolve(&h, domain_wall_state(params.n).amplitudes(), t))
    };
    Ok(psi.expectation(&obs).expect("same width"))
}

/// Trotterized magnetization after each of `0..=params.steps` steps.
pub fn exact_trotter_curve(params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    params.validate()?;
    if params.n > EXACT_CAP {
        return Err(ModelError::WidthOverCap {
            n: params.n,
            cap: EXACT_CAP,
        });
    }
    let obs = magnetization_observable(params.n);
    let step = trotter_circuit(&ModelParams {
        steps: 1,
        merge_half_steps: false,
        ..params.clone()
    })?;
    let mut psi = StateVector::zero_state(params.n);
    psi.apply_circuit(&domain_wall_prep(params.n)).expect("same width");
    let mut out = vec![psi.expectation(&obs).expect("same width")];
    for _ in 0..params.steps {
        psi.apply_circuit(&step).expect("same width");
        out.push(psi.expectation(&obs).expect("same width"));
    }
    Ok(out)
}

/// `e^{−iHt}·v` by Taylor series on short sub-intervals.
pub fn evolve(h: &Observable, v: &[C64], t: f64) -> Vec<C64> {
    let bound: f64 = h.constant().abs() + h.terms().iter().map(|(c, _)| c.abs()).sum::<f64>();
    let slices = ((bound * t.abs()) / 0.5).ceil().max(1.0) as usize;
    let tau = t / slices as f64;
    let mut psi = v.to_vec();
    for _ in 0..slices {
        let mut term = psi.clone();
        let mut acc = psi.clone();
        for k in 1..=60 {
            let ht = h.apply(&term);
            let scale = -I * (tau / k as f64);
            term = ht.into_iter().map(|x| x * scale).collect();
            let size: f64 = term.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            acc.iter_mut().zip(&term).for_each(|(a, x)| *a += x);
            if size < 1e-18 {
                break;
            }
        }
        psi = acc;
    }
    psi
}

/// `Σ_j ⟨σ_z^j⟩` of a pure state.
pub fn total_magnetization(psi: &StateVector) -> f64 {
    let n = psi.width();
    (0..n)
        .map(|q| psi.expectation(&Observable::sigma_z(n, q)).expect("same width"))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ZERO;

    #[test]
    fn hamiltonian_term_counts() {
        let p2 = ModelParams {
            n: 2,
            coupling: 0.7,
            ..ModelParams::default()
        };
        let h = build_hamiltonian(&p2).unwrap();
        let strings: Vec<String> = h.terms().iter().map(|(_, s)| s.to_string()).collect();
        assert_eq!(strings, vec!["XX", "YY"]);
        assert!(h.terms().iter().all(|(c, _)| *c == -0.7));
        assert_eq!(h.constant(), 0.0);
        assert_eq!(build_hamiltonian(&ModelParams::default()).unwrap().terms().len(), 10);
    }

    #[test]
    fn params_validation() {
        let bad = ModelParams {
            n: 1,
            ..ModelParams::default()
        };
        assert!(build_hamiltonian(&bad).is_err());
        let bad = ModelParams {
            dt: 0.0,
            ..ModelParams::default()
        };
        assert!(trotter_circuit(&bad).is_err());
    }

    #[test]
    fn cnot_counts_per_convention() {
        let p = ModelParams::default();
        assert_eq!(trotter_circuit(&p.with_steps(0)).unwrap().cnot_count(), 0);
        assert_eq!(trotter_circuit(&p.with_steps(1)).unwrap().cnot_count(), 16);
        assert_eq!(trotter_circuit(&p.with_steps(15)).unwrap().cnot_count(), 240);
        let merged = ModelParams {
            merge_half_steps: true,
            ..p.clone()
        };
        for k in [1, 2, 15] {
            assert_eq!(trotter_circuit(&merged.with_steps(k)).unwrap().cnot_count(), 10 * k + 6);
        }
        let even = ModelParams {
            half_step_bonds: HalfStepBonds::Even,
            ..p
        };
        assert_eq!(trotter_circuit(&even.with_steps(1)).unwrap().cnot_count(), 14);
        assert_eq!(trotter_circuit(&even.with_steps(15)).unwrap().cnot_count(), 210);
    }

    #[test]
    fn domain_wall_layouts() {
        let psi6 = {
            let mut s = StateVector::zero_state(6);
            s.apply_circuit(&domain_wall_prep(6)).unwrap();
            s
        };
        assert_eq!(psi6, StateVector::basis_state(6, 0b111000));
        assert_eq!(domain_wall_state(6), psi6);
        assert_eq!(domain_wall_state(2), StateVector::basis_state(2, 0b10));
        assert_eq!(domain_wall_state(5), StateVector::basis_state(5, 0b11100));
        assert!(total_magnetization(&psi6).abs() < 1e-15);
    }

    #[test]
    fn magnetization_signs() {
        let obs = magnetization_observable(6);
        let a = StateVector::basis_state(6, 0b111000);
        let b = StateVector::basis_state(6, 0b000111);
        assert_eq!(a.expectation(&obs).unwrap(), 1.0);
        assert_eq!(b.expectation(&obs).unwrap(), -1.0);
        assert_eq!(obs.matrix().trace(), ZERO);
    }

    #[test]
    fn magnetization_at_time_zero() {
        let p = ModelParams::default();
        assert_eq!(exact_magnetization(&p, 0.0, true).unwrap(), 1.0);
        assert!((exact_magnetization(&p, 0.0, false).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            exact_magnetization(&p, 0.3, true),
            Err(ModelError::TimeNotOnGrid { .. })
        ));
        let big = ModelParams {
            n: 13,
            ..ModelParams::default()
        };
        assert!(matches!(
            exact_magnetization(&big, 1.0, false),
            Err(ModelError::WidthOverCap { .. })
        ));
    }

    #[test]
    fn curve_matches_pointwise_values() {
        let p = ModelParams {
            steps: 4,
            ..ModelParams::default()
        };
        let curve = exact_trotter_curve(&p).unwrap();
        for (k, m) in curve.iter().enumerate() {
            let direct = exact_magnetization(&p, k as f64 * p.dt, true).unwrap();
            assert!((m - direct).abs() < 1e-12);
        }
    }
}
