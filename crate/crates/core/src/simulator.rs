//! Density-matrix simulator with CNOT-attached noise, a noiseless
//! state-vector path, exact expectations and shot sampling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, Gate, Observable};
use crate::kernels::{self, qubit_bit};
use crate::linalg::{CMatrix, C64, ONE, ZERO};
use crate::mitigation::{ConfusionMatrix, QubitConfusion};

pub const DEFAULT_DENSITY_CAP: usize = 10;
pub const DEFAULT_STATEVECTOR_CAP: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("width {width} exceeds the simulator cap of {cap} qubits")]
    WidthOverCap { width: usize, cap: usize },
    #[error("width mismatch: state has {state} qubits, operand has {operand}")]
    WidthMismatch { state: usize, operand: usize },
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid qubit subset {0:?}")]
    InvalidSubset(Vec<usize>),
    #[error("shot count must be positive")]
    ZeroShots,
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

/// Synthetic device noise.
///
/// After each CNOT the simulator applies `exp(-i·ε/2·Z⊗Z)` on the CNOT's pair
/// (when `coherent_angle ≠ 0`) and then two-qubit depolarizing with rate `p2`.
/// `global_p` depolarizes the whole register once at the end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseModel {
    #[serde(default)]
    pub p2: f64,
    #[serde(default)]
    pub coherent_angle: f64,
    #[serde(default)]
    pub global_p: Option<f64>,
    /// Empty: ideal readout. One entry: shared by every qubit. Otherwise one
    /// entry per qubit.
    #[serde(default)]
    pub readout: Vec<QubitConfusion>,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for p in [Some(self.p2), self.global_p].into_iter().flatten() {
            check_probability(p)?;
        }
        if !self.coherent_angle.is_finite() {
            return Err(SimError::InvalidNoise("coherent angle is not finite".into()));
        }
        for c in &self.readout {
            c.validate()
                .map_err(|e| SimError::InvalidNoise(e.to_string()))?;
        }
        Ok(())
    }

    pub fn readout_for(&self, qubit: usize) -> QubitConfusion {
        match self.readout.len() {
            0 => QubitConfusion::ideal(),
            1 => self.readout[0],
            _ => self.readout[qubit],
        }
    }

    /// Per-qubit confusion matrix for an `n`-qubit register.
    pub fn readout_confusion(&self, n: usize) -> Result<ConfusionMatrix, SimError> {
        if self.readout.len() > 1 && self.readout.len() != n {
            return Err(SimError::InvalidNoise(format!(
                "{} readout entries for {n} qubits",
                self.readout.len()
            )));
        }
        ConfusionMatrix::tensor((0..n).map(|q| self.readout_for(q)).collect())
            .map_err(|e| SimError::InvalidNoise(e.to_string()))
    }
}

fn check_probability(p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::InvalidProbability(p))
    }
}

/// Mixed state on `width` qubits, row-major `2^n × 2^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    width: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn zero_state(width: usize) -> Self {
        let dim = 1usize << width;
        let mut data = vec![ZERO; dim * dim];
        data[0] = ONE;
        DensityMatrix { width, data }
    }

    pub fn maximally_mixed(width: usize) -> Self {
        let dim = 1usize << width;
        let mut data = vec![ZERO; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C64::new(1.0 / dim as f64, 0.0);
        }
        DensityMatrix { width, data }
    }

    pub fn from_pure(state: &StateVector) -> Self {
        let amps = state.amplitudes();
        let dim = amps.len();
        let mut data = vec![ZERO; dim * dim];
        for (r, a) in amps.iter().enumerate() {
            for (c, b) in amps.iter().enumerate() {
                data[r * dim + c] = a * b.conj();
            }
        }
        DensityMatrix {
            width: state.width(),
            data,
        }
    }

    /// Wraps a dense matrix; no validity checks beyond shape.
    pub fn from_matrix(width: usize, m: &CMatrix) -> Self {
        assert_eq!(m.dim(), 1usize << width, "matrix does not match width");
        DensityMatrix {
            width,
            data: m.as_slice().to_vec(),
        }
    }

    /// Equal-weight mixture of states of the same width.
    pub fn average(states: &[DensityMatrix]) -> Option<Self> {
        let first = states.first()?;
        let mut data = vec![ZERO; first.data.len()];
        for s in states {
            assert_eq!(s.width, first.width, "cannot average states of different width");
            for (d, x) in data.iter_mut().zip(&s.data) {
                *d += x;
            }
        }
        let k = states.len() as f64;
        data.iter_mut().for_each(|d| *d /= k);
        Some(DensityMatrix {
            width: first.width,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        1usize << self.width
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim() + c]
    }

    pub fn to_matrix(&self) -> CMatrix {
        CMatrix::from_rows(self.dim(), self.data.clone())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i).re).sum()
    }

    /// `tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        let dim = self.dim();
        let mut acc = 0.0;
        for r in 0..dim {
            for c in 0..dim {
                acc += (self.data[r * dim + c] * self.data[c * dim + r]).re;
            }
        }
        acc
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        for r in 0..dim {
            for c in r..dim {
                worst = worst.max((self.data[r * dim + c] - self.data[c * dim + r].conj()).norm());
            }
        }
        worst
    }

    /// Computational-basis probabilities, negatives clamped to zero.
    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i).re.max(0.0)).collect()
    }

    pub fn apply_gate(&mut self, gate: &Gate) {
        match *gate {
            Gate::One { gate, qubit } => {
                kernels::apply_one_density(&mut self.data, self.width, qubit, &gate.matrix())
            }
            Gate::Cnot { control, target } => {
                kernels::apply_cnot_density(&mut self.data, self.width, control, target)
            }
        }
    }

    /// `exp(-i·angle/2·Z_a Z_b)`.
    pub fn apply_zz_rotation(&mut self, a: usize, b: usize, angle: f64) {
        let (ba, bb) = (qubit_bit(self.width, a), qubit_bit(self.width, b));
        let even = C64::from_polar(1.0, -angle / 2.0);
        let odd = C64::from_polar(1.0, angle / 2.0);
        let phases: Vec<C64> = (0..self.dim())
            .map(|i| if (i & ba != 0) ^ (i & bb != 0) { odd } else { even })
            .collect();
        kernels::apply_diagonal_density(&mut self.data, &phases);
    }

    /// Depolarizing channel restricted to `qubits`:
    /// `(1−p)ρ + p·Tr_S(ρ) ⊗ I/2^|S|`.
    pub fn apply_depolarizing(&mut self, qubits: &[usize], p: f64) -> Result<(), SimError> {
        check_probability(p)?;
        let mut mask = 0usize;
        for &q in qubits {
            if q >= self.width || mask & qubit_bit(self.width, q) != 0 {
                return Err(SimError::InvalidSubset(qubits.to_vec()));
            }
            mask |= qubit_bit(self.width, q);
        }
        if mask == 0 {
            return Err(SimError::InvalidSubset(qubits.to_vec()));
        }
        kernels::depolarize_density(&mut self.data, self.width, mask, p);
        Ok(())
    }

    /// Whole-register depolarizing, `(1−p)ρ + p·I/2^n`.
    pub fn apply_global_depolarizing(&mut self, p: f64) -> Result<(), SimError> {
        let all: Vec<usize> = (0..self.width).collect();
        self.apply_depolarizing(&all, p)
    }

    /// `tr(ρO)`; the imaginary residue is dropped.
    pub fn expectation(&self, obs: &Observable) -> Result<f64, SimError> {
        if obs.width() != self.width {
            return Err(SimError::WidthMismatch {
                state: self.width,
                operand: obs.width(),
            });
        }
        let dim = self.dim();
        let mut total = obs.constant();
        for (coef, s) in obs.terms() {
            // tr(ρS) = Σ_j ⟨j|ρ S|j⟩ = Σ_j phase(j)·ρ[j ⊕ x][j]
            let x = s.x_mask();
            let v: C64 = (0..dim).map(|j| s.phase(j) * self.data[(j ^ x) * dim + j]).sum();
            total += coef * v.re;
        }
        Ok(total)
    }
}

/// Pure state on `width` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    width: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn zero_state(width: usize) -> Self {
        let mut amps = vec![ZERO; 1usize << width];
        amps[0] = ONE;
        StateVector { width, amps }
    }

    /// Wraps amplitudes; panics if the length is not a power of two.
    pub fn from_amplitudes(amps: Vec<C64>) -> Self {
        assert!(amps.len().is_power_of_two(), "length is not a power of two");
        StateVector {
            width: amps.len().trailing_zeros() as usize,
            amps,
        }
    }

    pub fn basis_state(width: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1usize << width];
        amps[index] = ONE;
        StateVector { width, amps }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn apply_gate(&mut self, gate: &Gate) {
        kernels::apply_gate_vec(&mut self.amps, self.width, gate);
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<(), SimError> {
        if circuit.width() != self.width {
            return Err(SimError::WidthMismatch {
                state: self.width,
                operand: circuit.width(),
            });
        }
        for g in circuit.gates() {
            self.apply_gate(g);
        }
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn expectation(&self, obs: &Observable) -> Result<f64, SimError> {
        if obs.width() != self.width {
            return Err(SimError::WidthMismatch {
                state: self.width,
                operand: obs.width(),
            });
        }
        let ov = obs.apply(&self.amps);
        Ok(self
            .amps
            .iter()
            .zip(&ov)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            .re)
    }
}

/// Runs `circuit` from `|0…0⟩` under `noise`.
pub fn simulate_density(circuit: &Circuit, noise: &NoiseModel) -> Result<DensityMatrix, SimError> {
    simulate_density_capped(circuit, noise, DEFAULT_DENSITY_CAP)
}

pub fn simulate_density_capped(
    circuit: &Circuit,
    noise: &NoiseModel,
    cap: usize,
) -> Result<DensityMatrix, SimError> {
    let width = circuit.width();
    if width > cap {
        return Err(SimError::WidthOverCap { width, cap });
    }
    noise.validate()?;
    let mut rho = DensityMatrix::zero_state(width);
    for gate in circuit.gates() {
        rho.apply_gate(gate);
        if let Gate::Cnot { control, target } = *gate {
            if noise.coherent_angle != 0.0 {
                rho.apply_zz_rotation(control, target, noise.coherent_angle);
            }
            if noise.p2 > 0.0 {
                rho.apply_depolarizing(&[control, target], noise.p2)?;
            }
        }
    }
    if let Some(p) = noise.global_p {
        rho.apply_global_depolarizing(p)?;
    }
    Ok(rho)
}

/// Noiseless evolution of `|0…0⟩`.
pub fn simulate_statevector(circuit: &Circuit) -> Result<StateVector, SimError> {
    simulate_statevector_capped(circuit, DEFAULT_STATEVECTOR_CAP)
}

pub fn simulate_statevector_capped(circuit: &Circuit, cap: usize) -> Result<StateVector, SimError> {
    let width = circuit.width();
    if width > cap {
        return Err(SimError::WidthOverCap { width, cap });
    }
    let mut psi = StateVector::zero_state(width);
    psi.apply_circuit(circuit)?;
    Ok(psi)
}

/// Measured outcome counts. Outcome `k` is the basis index, qubit 0 first
/// when written as a bit string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    width: usize,
    counts: BTreeMap<usize, u64>,
    shots: u64,
}

impl CountHistogram {
    pub fn new(width: usize) -> Self {
        CountHistogram {
            width,
            counts: BTreeMap::new(),
            shots: 0,
        }
    }

    pub fn record(&mut self, outcome: usize, count: u64) {
        assert!(outcome < 1usize << self.width, "outcome out of range");
        if count > 0 {
            *self.counts.entry(outcome).or_insert(0) += count;
            self.shots += count;
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn count(&self, outcome: usize) -> u64 {
        self.counts.get(&outcome).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    /// Empirical distribution over all `2^n` outcomes.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; 1usize << self.width];
        if self.shots == 0 {
            return f;
        }
        for (k, v) in &self.counts {
            f[*k] = *v as f64 / self.shots as f64;
        }
        f
    }

    pub fn bitstring(&self, outcome: usize) -> String {
        format!("{:0width$b}", outcome, width = self.width)
    }

    /// Counts keyed by bit string, for persistence.
    pub fn to_bitstring_map(&self) -> BTreeMap<String, u64> {
        self.counts
            .iter()
            .map(|(k, v)| (self.bitstring(*k), *v))
            .collect()
    }

    pub fn from_bitstring_map(width: usize, map: &BTreeMap<String, u64>) -> Option<Self> {
        let mut h = CountHistogram::new(width);
        for (k, v) in map {
            if k.len() != width {
                return None;
            }
            let idx = usize::from_str_radix(k, 2).ok()?;
            h.record(idx, *v);
        }
        Some(h)
    }
}

/// Draws `shots` computational-basis outcomes from `diag(ρ)` and corrupts
/// each through `readout`. Deterministic for a fixed seed.
pub fn sample_counts(
    rho: &DensityMatrix,
    shots: u64,
    readout: &ConfusionMatrix,
    seed: u64,
) -> Result<CountHistogram, SimError> {
    if shots == 0 {
        return Err(SimError::ZeroShots);
    }
    if readout.width() != rho.width() {
        return Err(SimError::WidthMismatch {
            state: rho.width(),
            operand: readout.width(),
        });
    }
    let probs = rho.probabilities();
    let cumulative = cumulative(&probs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = CountHistogram::new(rho.width());
    let mut tally = vec![0u64; probs.len()];
    for _ in 0..shots {
        let u: f64 = rng.random();
        let true_outcome = pick(&cumulative, u);
        let observed = readout.corrupt(true_outcome, &mut rng);
        tally[observed] += 1;
    }
    for (k, c) in tally.into_iter().enumerate() {
        hist.record(k, c);
    }
    Ok(hist)
}

pub(crate) fn cumulative(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

/// Index of the first cumulative weight above `u`.
pub(crate) fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

/// Draws one observed outcome for a true outcome given a sampler.
pub(crate) fn flip_bits<R: Rng>(n: usize, outcome: usize, flips: &[QubitConfusion], rng: &mut R) -> usize {
    let mut out = outcome;
    for (q, c) in flips.iter().enumerate() {
        let bit = qubit_bit(n, q);
        let value = usize::from(outcome & bit != 0);
        let p_flip = c.flip_probability(value);
        if p_flip > 0.0 && rng.random::<f64>() < p_flip {
            out ^= bit;
        }
    }
    out
}
