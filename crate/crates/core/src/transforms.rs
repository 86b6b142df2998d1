//! Circuit-to-circuit passes: randomized compiling, CNOT folding and
//! estimation-circuit derivation.

use std::f64::consts::TAU;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, Gate, OneQubitGate, Pauli};
use crate::linalg::Mat2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("fold factor must be odd and positive, got {0}")]
    InvalidFoldFactor(u32),
}

/// Number of consecutive CNOTs substituted for each logical CNOT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct FoldFactor(u32);

impl FoldFactor {
    pub const ONE: FoldFactor = FoldFactor(1);
    pub const THREE: FoldFactor = FoldFactor(3);
    pub const FIVE: FoldFactor = FoldFactor(5);
    pub const STANDARD: [FoldFactor; 3] = [Self::ONE, Self::THREE, Self::FIVE];

    pub fn new(value: u32) -> Result<Self, TransformError> {
        if value % 2 == 1 {
            Ok(FoldFactor(value))
        } else {
            Err(TransformError::InvalidFoldFactor(value))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for FoldFactor {
    type Error = TransformError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        FoldFactor::new(value)
    }
}

impl From<FoldFactor> for u32 {
    fn from(f: FoldFactor) -> u32 {
        f.0
    }
}

impl fmt::Display for FoldFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Paulis dressing one CNOT: `R` (control) and `S` (target) run before it,
/// `P` (control) and `Q` (target) after it, so the dressed gate is
/// `(P⊗Q)·CNOT·(R⊗S)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TwirlAssignment {
    pub p: Pauli,
    pub q: Pauli,
    pub r: Pauli,
    pub s: Pauli,
}

impl TwirlAssignment {
    pub const fn new(p: Pauli, q: Pauli, r: Pauli, s: Pauli) -> Self {
        TwirlAssignment { p, q, r, s }
    }

    /// The dressed gate as a two-qubit circuit (qubit 0 = control).
    pub fn dressed_circuit(&self) -> Circuit {
        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::one(self.r.gate(), 0), Gate::one(self.s.gate(), 1)])
            .and_then(|c| c.push_layer(vec![Gate::cnot(0, 1)]))
            .and_then(|c| c.push_layer(vec![Gate::one(self.p.gate(), 0), Gate::one(self.q.gate(), 1)]))
            .expect("dressing layers are disjoint");
        c
    }
}

/// Every `(P, Q, R, S)` that leaves CNOT unchanged up to phase.
pub const TWIRL_TABLE: [TwirlAssignment; 16] = {
    use Pauli::{I, X, Y, Z};
    const fn t(p: Pauli, q: Pauli, r: Pauli, s: Pauli) -> TwirlAssignment {
        TwirlAssignment::new(p, q, r, s)
    }
    [
        t(I, I, I, I),
        t(I, X, I, X),
        t(I, Y, Z, Y),
        t(I, Z, Z, Z),
        t(Y, I, Y, X),
        t(Y, X, Y, I),
        t(Y, Y, X, Z),
        t(Y, Z, X, Y),
        t(X, I, X, X),
        t(X, X, X, I),
        t(X, Y, Y, Z),
        t(X, Z, Y, Y),
        t(Z, I, Z, I),
        t(Z, X, Z, X),
        t(Z, Y, I, Y),
        t(Z, Z, I, Z),
    ]
};

/// Accumulated single-qubit operation waiting to be emitted on one wire.
#[derive(Clone, Copy, Debug)]
enum Pending {
    Empty,
    Gate(OneQubitGate),
    Matrix(Mat2),
}

impl Pending {
    /// Composes `g` after whatever is pending.
    fn then(self, g: OneQubitGate) -> Pending {
        if g == OneQubitGate::I {
            return self;
        }
        match self {
            Pending::Empty => Pending::Gate(g),
            Pending::Gate(h) => Pending::Matrix(g.matrix() * h.matrix()),
            Pending::Matrix(m) => Pending::Matrix(g.matrix() * m),
        }
    }

    fn flush(self) -> Option<OneQubitGate> {
        match self {
            Pending::Empty => None,
            Pending::Gate(g) => Some(g),
            Pending::Matrix(m) => {
                if m.distance_up_to_phase(&Mat2::IDENTITY) < 1e-14 {
                    None
                } else {
                    Some(zyz_decompose(&m))
                }
            }
        }
    }
}

/// Euler angles with `U = e^{iα}·Rz(φ)·Ry(θ)·Rz(λ)`, returned as a `U3`.
pub fn zyz_decompose(u: &Mat2) -> OneQubitGate {
    let (u00, u01, u10, u11) = (u.get(0, 0), u.get(0, 1), u.get(1, 0), u.get(1, 1));
    let theta = 2.0 * u10.norm().atan2(u00.norm());
    const EPS: f64 = 1e-12;
    let (phi, lambda) = if u10.norm() < EPS {
        ((u11 * u00.conj()).arg(), 0.0)
    } else if u00.norm() < EPS {
        ((u10 * (-u01).conj()).arg(), 0.0)
    } else {
        // Ratios carry whole angles, so no half-angle branch is needed.
        ((u10 * u00.conj()).arg(), (-u01 * u00.conj()).arg())
    };
    OneQubitGate::U3 { theta, phi, lambda }
}

/// Dresses every CNOT with an independently drawn row of [`TWIRL_TABLE`] and
/// merges runs of single-qubit gates into one gate per wire. The output
/// alternates single-qubit layers with the input's CNOT layers.
pub fn randomized_compile(circuit: &Circuit, seed: u64) -> Circuit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomized_compile_with(circuit, &mut rng)
}

pub fn randomized_compile_with<R: Rng>(circuit: &Circuit, rng: &mut R) -> Circuit {
    let n = circuit.width();
    let mut out = Circuit::new(n);
    let mut pending = vec![Pending::Empty; n];
    for layer in circuit.layers() {
        let mut cnots = Vec::new();
        for g in layer {
            match *g {
                Gate::One { gate, qubit } => pending[qubit] = pending[qubit].then(gate),
                Gate::Cnot { control, target } => cnots.push((control, target)),
            }
        }
        if cnots.is_empty() {
            continue;
        }
        let rows: Vec<TwirlAssignment> = cnots
            .iter()
            .map(|_| TWIRL_TABLE[rng.random_range(0..TWIRL_TABLE.len())])
            .collect();
        let mut before = Vec::new();
        for (&(c, t), row) in cnots.iter().zip(&rows) {
            for (q, pauli) in [(c, row.r), (t, row.s)] {
                let p = std::mem::replace(&mut pending[q], Pending::Empty).then(pauli.gate());
                if let Some(g) = p.flush() {
                    before.push(Gate::one(g, q));
                }
            }
        }
        out.push_layer(before).expect("one gate per wire");
        out.push_layer(cnots.iter().map(|&(c, t)| Gate::cnot(c, t)).collect())
            .expect("input layer was valid");
        for (&(c, t), row) in cnots.iter().zip(&rows) {
            pending[c] = Pending::Empty.then(row.p.gate());
            pending[t] = Pending::Empty.then(row.q.gate());
        }
    }
    let tail: Vec<Gate> = pending
        .into_iter()
        .enumerate()
        .filter_map(|(q, p)| p.flush().map(|g| Gate::one(g, q)))
        .collect();
    out.push_layer(tail).expect("one gate per wire");
    out
}

/// Replaces each CNOT with `factor` consecutive copies on the same pair.
pub fn fold_cnots(circuit: &Circuit, factor: FoldFactor) -> Circuit {
    let mut out = Circuit::new(circuit.width());
    for layer in circuit.layers() {
        out.push_layer(layer.clone()).expect("input layer was valid");
        let cnots: Vec<Gate> = layer.iter().copied().filter(Gate::is_cnot).collect();
        if cnots.is_empty() {
            continue;
        }
        for _ in 1..factor.get() {
            out.push_layer(cnots.clone()).expect("input layer was valid");
        }
    }
    out
}

/// True when the CNOTs of `circuit`, read as a linear map over GF(2), are
/// the identity permutation of basis states.
pub fn cnot_skeleton_is_identity(circuit: &Circuit) -> bool {
    let n = circuit.width();
    let mut rows: Vec<u128> = (0..n).map(|q| 1u128 << q).collect();
    for g in circuit.gates() {
        if let Gate::Cnot { control, target } = *g {
            rows[target] ^= rows[control];
        }
    }
    rows.iter().enumerate().all(|(q, r)| *r == 1u128 << q)
}

/// Keeps only the target's CNOT layers and sandwiches them between a layer
/// of seeded random rotations and its exact inverse.
///
/// Rotations are full Euler rotations when the CNOT skeleton is the identity
/// map; otherwise they are Z rotations, which leave `|0…0⟩` fixed through
/// any CNOT network. Either way the noiseless output is `|0…0⟩`.
pub fn derive_estimation_circuit(target: &Circuit, seed: u64) -> Circuit {
    let n = target.width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let euler = cnot_skeleton_is_identity(target);
    let rotations: Vec<OneQubitGate> = (0..n)
        .map(|_| {
            if euler {
                OneQubitGate::U3 {
                    theta: rng.random::<f64>() * TAU,
                    phi: rng.random::<f64>() * TAU,
                    lambda: rng.random::<f64>() * TAU,
                }
            } else {
                OneQubitGate::Rz(rng.random::<f64>() * TAU)
            }
        })
        .collect();
    let mut out = Circuit::new(n);
    out.push_layer(rotations.iter().enumerate().map(|(q, g)| Gate::one(*g, q)).collect())
        .expect("one gate per wire");
    for layer in target.layers() {
        let cnots: Vec<Gate> = layer.iter().copied().filter(Gate::is_cnot).collect();
        out.push_layer(cnots).expect("input layer was valid");
    }
    out.push_layer(
        rotations
            .iter()
            .enumerate()
            .map(|(q, g)| Gate::one(g.inverse(), q))
            .collect(),
    )
    .expect("one gate per wire");
    out
}
