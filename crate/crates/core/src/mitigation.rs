//! Post-processing: readout unfolding, fidelity estimation, depolarizing
//! correction, three-point zero-noise extrapolation and instance statistics.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::qubit_bit;
use crate::simulator::{cumulative, flip_bits, pick, CountHistogram};
use crate::transforms::FoldFactor;

/// Fidelities below this are refused by [`correct_depolarizing`].
pub const DEFAULT_FIDELITY_FLOOR: f64 = 0.02;
pub const DEFAULT_UNFOLD_ITERATIONS: usize = 100;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MitigationError {
    #[error("invalid confusion matrix: {0}")]
    InvalidConfusion(String),
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("histogram width {histogram} does not match confusion width {confusion}")]
    WidthMismatch { histogram: usize, confusion: usize },
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("no input values")]
    EmptyInput,
    #[error("fidelity {0} is not positive; the state is fully depolarized")]
    FullyDepolarized(f64),
    #[error("fidelity {value} is below the floor {floor}; correction would only amplify noise")]
    BelowFloor { value: f64, floor: f64 },
    #[error("extrapolation needs exactly three points, got {0}")]
    WrongPointCount(usize),
    #[error("duplicate noise factor {0}")]
    DuplicateFactor(f64),
    #[error("fold factor {0} is missing from the fidelity estimate")]
    MissingFold(u32),
    #[error("response matrix is singular")]
    Singular,
}

/// Readout response of one qubit: `p01 = P(read 1 | state 0)`,
/// `p10 = P(read 0 | state 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitConfusion {
    pub p01: f64,
    pub p10: f64,
}

impl QubitConfusion {
    pub fn ideal() -> Self {
        QubitConfusion { p01: 0.0, p10: 0.0 }
    }

    pub fn from_flips(p01: f64, p10: f64) -> Result<Self, MitigationError> {
        let c = QubitConfusion { p01, p10 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), MitigationError> {
        for p in [self.p01, self.p10] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MitigationError::InvalidConfusion(format!(
                    "flip probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Column-stochastic matrix, `m[observed][true]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.p01, self.p10], [self.p01, 1.0 - self.p10]]
    }

    pub fn flip_probability(&self, true_bit: usize) -> f64 {
        if true_bit == 0 {
            self.p01
        } else {
            self.p10
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Response {
    Tensor { qubits: Vec<QubitConfusion> },
    /// Row-major `m[observed][true]`.
    Full { width: usize, matrix: Vec<f64> },
}

/// Measurement response: column = true outcome, row = observed outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix(Response);

impl ConfusionMatrix {
    pub fn identity(width: usize) -> Self {
        ConfusionMatrix(Response::Tensor {
            qubits: vec![QubitConfusion::ideal(); width],
        })
    }

    pub fn tensor(qubits: Vec<QubitConfusion>) -> Result<Self, MitigationError> {
        for q in &qubits {
            q.validate()?;
        }
        Ok(ConfusionMatrix(Response::Tensor { qubits }))
    }

    /// Full `2^n × 2^n` response given as `rows[observed][true]`.
    pub fn full(width: usize, rows: Vec<Vec<f64>>) -> Result<Self, MitigationError> {
        let dim = 1usize << width;
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(MitigationError::InvalidConfusion(format!(
                "expected a {dim}x{dim} matrix"
            )));
        }
        let matrix: Vec<f64> = rows.into_iter().flatten().collect();
        if matrix.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MitigationError::InvalidConfusion("entry outside [0, 1]".into()));
        }
        for col in 0..dim {
            let s: f64 = (0..dim).map(|r| matrix[r * dim + col]).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(MitigationError::InvalidConfusion(format!(
                    "column {col} sums to {s}"
                )));
            }
        }
        Ok(ConfusionMatrix(Response::Full { width, matrix }))
    }

    pub fn width(&self) -> usize {
        match &self.0 {
            Response::Tensor { qubits } => qubits.len(),
            Response::Full { width, .. } => *width,
        }
    }

    pub fn is_tensor(&self) -> bool {
        matches!(self.0, Response::Tensor { .. })
    }

    /// Per-qubit factors, when the response is a tensor product.
    pub fn qubit_factors(&self) -> Option<&[QubitConfusion]> {
        match &self.0 {
            Response::Tensor { qubits } => Some(qubits),
            Response::Full { .. } => None,
        }
    }

    /// `P(observed | true)`.
    pub fn response(&self, observed: usize, truth: usize) -> f64 {
        match &self.0 {
            Response::Tensor { qubits } => {
                let n = qubits.len();
                qubits
                    .iter()
                    .enumerate()
                    .map(|(q, c)| {
                        let bit = qubit_bit(n, q);
                        let o = usize::from(observed & bit != 0);
                        let t = usize::from(truth & bit != 0);
                        c.matrix()[o][t]
                    })
                    .product()
            }
            Response::Full { width, matrix } => matrix[observed * (1usize << width) + truth],
        }
    }

    /// Dense row-major response matrix.
    pub fn dense(&self) -> Vec<f64> {
        let dim = 1usize << self.width();
        if let Response::Full { matrix, .. } = &self.0 {
            return matrix.clone();
        }
        let mut out = vec![0.0; dim * dim];
        for o in 0..dim {
            for t in 0..dim {
                out[o * dim + t] = self.response(o, t);
            }
        }
        out
    }

    /// Pushes a true distribution through the response.
    pub fn forward(&self, truth: &[f64]) -> Vec<f64> {
        let dim = truth.len();
        let r = self.dense();
        (0..dim)
            .map(|o| (0..dim).map(|t| r[o * dim + t] * truth[t]).sum())
            .collect()
    }

    /// Samples an observed outcome for a true one.
    pub fn corrupt<R: Rng>(&self, truth: usize, rng: &mut R) -> usize {
        match &self.0 {
            Response::Tensor { qubits } => flip_bits(qubits.len(), truth, qubits, rng),
            Response::Full { width, matrix } => {
                let dim = 1usize << width;
                let column: Vec<f64> = (0..dim).map(|o| matrix[o * dim + truth]).collect();
                pick(&cumulative(&column), rng.random())
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("confusion matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MitigationError> {
        let parsed: ConfusionMatrix =
            serde_json::from_str(s).map_err(|e| MitigationError::InvalidConfusion(e.to_string()))?;
        // re-run validation
        match parsed.0 {
            Response::Tensor { qubits } => ConfusionMatrix::tensor(qubits),
            Response::Full { width, matrix } => {
                let dim = 1usize << width;
                if matrix.len() != dim * dim {
                    return Err(MitigationError::InvalidConfusion("wrong matrix size".into()));
                }
                ConfusionMatrix::full(width, matrix.chunks(dim).map(<[f64]>::to_vec).collect())
            }
        }
    }
}

/// Iterative Bayesian unfolding from a uniform prior.
pub fn unfold(
    counts: &CountHistogram,
    confusion: &ConfusionMatrix,
    iterations: usize,
) -> Result<Vec<f64>, MitigationError> {
    if counts.shots() == 0 {
        return Err(MitigationError::EmptyHistogram);
    }
    if counts.width() != confusion.width() {
        return Err(MitigationError::WidthMismatch {
            histogram: counts.width(),
            confusion: confusion.width(),
        });
    }
    unfold_distribution(&counts.frequencies(), confusion, iterations)
}

/// [`unfold`] on an already-normalized measured distribution.
pub fn unfold_distribution(
    measured: &[f64],
    confusion: &ConfusionMatrix,
    iterations: usize,
) -> Result<Vec<f64>, MitigationError> {
    if iterations == 0 {
        return Err(MitigationError::ZeroIterations);
    }
    let dim = measured.len();
    if dim != 1usize << confusion.width() {
        return Err(MitigationError::WidthMismatch {
            histogram: dim.trailing_zeros() as usize,
            confusion: confusion.width(),
        });
    }
    let r = confusion.dense();
    let mut t = vec![1.0 / dim as f64; dim];
    let mut folded = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    for _ in 0..iterations {
        for (o, f) in folded.iter_mut().enumerate() {
            *f = (0..dim).map(|i| r[o * dim + i] * t[i]).sum();
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for o in 0..dim {
            let d = measured[o];
            if d == 0.0 || folded[o] == 0.0 {
                continue;
            }
            for i in 0..dim {
                let w = r[o * dim + i] * t[i];
                if w != 0.0 {
                    next[i] += d * (w / folded[o]);
                }
            }
        }
        std::mem::swap(&mut t, &mut next);
    }
    Ok(t)
}

/// Direct inversion `R⁻¹·d`; may return negative entries.
pub fn unfold_inverse(
    counts: &CountHistogram,
    confusion: &ConfusionMatrix,
) -> Result<Vec<f64>, MitigationError> {
    if counts.shots() == 0 {
        return Err(MitigationError::EmptyHistogram);
    }
    if counts.width() != confusion.width() {
        return Err(MitigationError::WidthMismatch {
            histogram: counts.width(),
            confusion: confusion.width(),
        });
    }
    let n = confusion.width();
    let mut d = counts.frequencies();
    match confusion.qubit_factors() {
        Some(qubits) => {
            for (q, c) in qubits.iter().enumerate() {
                let [[a, b], [cc, dd]] = c.matrix();
                let det = a * dd - b * cc;
                if det.abs() < 1e-15 {
                    return Err(MitigationError::Singular);
                }
                let inv = [[dd / det, -b / det], [-cc / det, a / det]];
                let bit = qubit_bit(n, q);
                for i0 in (0..d.len()).filter(|i| i & bit == 0) {
                    let i1 = i0 | bit;
                    let (x, y) = (d[i0], d[i1]);
                    d[i0] = inv[0][0] * x + inv[0][1] * y;
                    d[i1] = inv[1][0] * x + inv[1][1] * y;
                }
            }
            Ok(d)
        }
        None => solve_dense(confusion.dense(), d),
    }
}

fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, MitigationError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col].abs() < 1e-15 {
            return Err(MitigationError::Singular);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `⟨σ_z⟩` of the last qubit (least significant bit) under a distribution.
pub fn sigma_z_last(distribution: &[f64]) -> f64 {
    distribution
        .iter()
        .enumerate()
        .map(|(k, p)| if k & 1 == 0 { *p } else { -*p })
        .sum()
}

/// Which quantity of an estimation circuit is read as `1 − p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FidelityMode {
    #[default]
    SigmaZLast,
    AllZerosProbability,
}

/// One estimation-circuit result.
#[derive(Clone, Debug, PartialEq)]
pub enum EstimationOutput {
    /// Unfolded outcome distribution.
    Distribution(Vec<f64>),
    /// The mode's quantity computed exactly.
    Exact(f64),
}

impl EstimationOutput {
    pub fn value(&self, mode: FidelityMode) -> f64 {
        match self {
            EstimationOutput::Exact(v) => *v,
            EstimationOutput::Distribution(d) => match mode {
                FidelityMode::SigmaZLast => sigma_z_last(d),
                FidelityMode::AllZerosProbability => d.first().copied().unwrap_or(0.0),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldFidelity {
    /// Mean clipped to at most 1.
    pub one_minus_p: f64,
    pub raw_mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
    pub instances: usize,
    /// Raw mean exceeded 1 and was clipped.
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FidelityEstimate {
    pub folds: BTreeMap<FoldFactor, FoldFidelity>,
}

impl FidelityEstimate {
    pub fn get(&self, fold: FoldFactor) -> Option<&FoldFidelity> {
        self.folds.get(&fold)
    }
}

/// Mean `1 − p` per fold factor with its standard error.
pub fn estimate_fidelity(
    outputs: &BTreeMap<FoldFactor, Vec<EstimationOutput>>,
    mode: FidelityMode,
) -> Result<FidelityEstimate, MitigationError> {
    if outputs.is_empty() {
        return Err(MitigationError::EmptyInput);
    }
    let mut est = FidelityEstimate::default();
    for (fold, instances) in outputs {
        let values: Vec<f64> = instances.iter().map(|o| o.value(mode)).collect();
        let s = aggregate(&values)?;
        let clipped = s.mean > 1.0;
        // Round-off above 1 is routine in exact mode; only real excess is worth a warning.
        if s.mean > 1.0 + 1e-9 {
            log::warn!("fold {fold}: fidelity mean {} exceeds 1, clipping", s.mean);
        }
        est.folds.insert(
            *fold,
            FoldFidelity {
                one_minus_p: s.mean.min(1.0),
                raw_mean: s.mean,
                std_dev: s.std_dev,
                std_err: s.std_err,
                instances: s.count,
                clipped,
            },
        );
    }
    Ok(est)
}

/// `(noisy − c)/(1 − p) + c` with the default floor.
pub fn correct_depolarizing(noisy: f64, one_minus_p: f64, c: f64) -> Result<f64, MitigationError> {
    correct_depolarizing_with_floor(noisy, one_minus_p, c, DEFAULT_FIDELITY_FLOOR)
}

pub fn correct_depolarizing_with_floor(
    noisy: f64,
    one_minus_p: f64,
    c: f64,
    floor: f64,
) -> Result<f64, MitigationError> {
    if one_minus_p <= 0.0 || one_minus_p.is_nan() {
        return Err(MitigationError::FullyDepolarized(one_minus_p));
    }
    if one_minus_p < floor {
        return Err(MitigationError::BelowFloor {
            value: one_minus_p,
            floor,
        });
    }
    Ok((noisy - c) / one_minus_p + c)
}

/// A value with a one-sigma uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub uncertainty: f64,
}

impl Estimate {
    pub fn new(value: f64, uncertainty: f64) -> Self {
        Estimate { value, uncertainty }
    }

    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            uncertainty: 0.0,
        }
    }
}

/// Lagrange weights at zero for the given nodes.
pub fn lagrange_weights_at_zero(nodes: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            nodes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, xj)| -xj / (xi - xj))
                .product()
        })
        .collect()
}

/// Quadratic through three `(noise factor, value)` points, evaluated at 0.
/// The uncertainty is `sqrt(Σ wᵢ² σᵢ²)`.
pub fn zne_quadratic(points: &[(f64, Estimate)]) -> Result<Estimate, MitigationError> {
    if points.len() != 3 {
        return Err(MitigationError::WrongPointCount(points.len()));
    }
    for (i, (a, _)) in points.iter().enumerate() {
        if points[..i].iter().any(|(b, _)| b == a) {
            return Err(MitigationError::DuplicateFactor(*a));
        }
    }
    let nodes: Vec<f64> = points.iter().map(|(n, _)| *n).collect();
    let w = lagrange_weights_at_zero(&nodes);
    let value = w.iter().zip(points).map(|(w, (_, e))| w * e.value).sum();
    let var: f64 = w
        .iter()
        .zip(points)
        .map(|(w, (_, e))| (w * e.uncertainty).powi(2))
        .sum();
    Ok(Estimate::new(value, var.sqrt()))
}

/// Mean, sample standard deviation and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
    pub count: usize,
    /// One sample only; `std_dev` is reported as 0.
    pub single_sample: bool,
}

impl Summary {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.mean, self.std_err)
    }
}

/// Summation runs in slice order, so results are reproducible bit for bit.
pub fn aggregate(values: &[f64]) -> Result<Summary, MitigationError> {
    let n = values.len();
    if n == 0 {
        return Err(MitigationError::EmptyInput);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(Summary {
            mean,
            std_dev: 0.0,
            std_err: 0.0,
            count: 1,
            single_sample: true,
        });
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std_dev = (ss / (n - 1) as f64).sqrt();
    Ok(Summary {
        mean,
        std_dev,
        std_err: std_dev / (n as f64).sqrt(),
        count: n,
        single_sample: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MitigatedValue {
    pub value: f64,
    pub uncertainty: f64,
    /// Corrected value per fold, before extrapolation.
    pub corrected: BTreeMap<FoldFactor, Estimate>,
    pub target_instances: BTreeMap<FoldFactor, usize>,
    pub fidelity_instances: BTreeMap<FoldFactor, usize>,
}

/// Divides each fold's target mean by that fold's fidelity, then
/// extrapolates the corrected values to zero noise.
pub fn mitigate(
    targets: &BTreeMap<FoldFactor, Summary>,
    fidelities: &FidelityEstimate,
    c: f64,
) -> Result<MitigatedValue, MitigationError> {
    mitigate_with_floor(targets, fidelities, c, DEFAULT_FIDELITY_FLOOR)
}

pub fn mitigate_with_floor(
    targets: &BTreeMap<FoldFactor, Summary>,
    fidelities: &FidelityEstimate,
    c: f64,
    floor: f64,
) -> Result<MitigatedValue, MitigationError> {
    let mut corrected = BTreeMap::new();
    let mut target_instances = BTreeMap::new();
    let mut fidelity_instances = BTreeMap::new();
    for (fold, t) in targets {
        let f = fidelities
            .get(*fold)
            .ok_or(MitigationError::MissingFold(fold.get()))?;
        let value = correct_depolarizing_with_floor(t.mean, f.one_minus_p, c, floor)?;
        let shifted = t.mean - c;
        let var = (t.std_err / f.one_minus_p).powi(2)
            + (shifted * f.std_err / f.one_minus_p.powi(2)).powi(2);
        corrected.insert(*fold, Estimate::new(value, var.sqrt()));
        target_instances.insert(*fold, t.count);
        fidelity_instances.insert(*fold, f.instances);
    }
    let points: Vec<(f64, Estimate)> = corrected
        .iter()
        .map(|(f, e)| (f64::from(f.get()), *e))
        .collect();
    let zne = zne_quadratic(&points)?;
    Ok(MitigatedValue {
        value: zne.value,
        uncertainty: zne.uncertainty,
        corrected,
        target_instances,
        fidelity_instances,
    })
}
