//! Python bindings: circuits, noise models, simulation, transforms,
//! mitigation and the experiment runner.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qnem_core::experiment::{self, ExperimentConfig};
use qnem_core::mitigation::{self, ConfusionMatrix, Estimate, QubitConfusion};
use qnem_core::simulator::{self, CountHistogram};
use qnem_core::transforms::{self, FoldFactor};
use qnem_core::xx_model::{self, HalfStepBonds, ModelParams};
use qnem_core::{Gate, OneQubitGate};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Circuit", module = "qnem", skip_from_py_object)]
#[derive(Clone)]
struct PyCircuit {
    inner: qnem_core::Circuit,
}

#[pymethods]
impl PyCircuit {
    #[new]
    fn new(width: usize) -> Self {
        PyCircuit {
            inner: qnem_core::Circuit::new(width),
        }
    }

    /// Appends a single-qubit gate by name, e.g. `("rz", 2, [0.3])`.
    #[pyo3(signature = (name, qubit, angles = Vec::new()))]
    fn gate(&mut self, name: &str, qubit: usize, angles: Vec<f64>) -> PyResult<()> {
        let g = OneQubitGate::from_parts(name, &angles).map_err(value_err)?;
        self.inner.append(Gate::one(g, qubit)).map(|_| ()).map_err(value_err)
    }

    fn cnot(&mut self, control: usize, target: usize) -> PyResult<()> {
        self.inner.append(Gate::cnot(control, target)).map(|_| ()).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.layers().len()
    }

    fn gate_count(&self) -> usize {
        self.inner.gate_count()
    }

    fn cnot_count(&self) -> usize {
        self.inner.cnot_count()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        qnem_core::Circuit::from_text(text)
            .map(|inner| PyCircuit { inner })
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Circuit(width={}, depth={}, gates={})",
            self.inner.width(),
            self.inner.layers().len(),
            self.inner.gate_count()
        )
    }
}

#[pyclass(name = "NoiseModel", module = "qnem", skip_from_py_object)]
#[derive(Clone)]
struct PyNoiseModel {
    inner: simulator::NoiseModel,
}

#[pymethods]
impl PyNoiseModel {
    /// `readout` holds `(p01, p10)` pairs: one shared pair or one per qubit.
    #[new]
    #[pyo3(signature = (p2 = 0.0, coherent_angle = 0.0, global_p = None, readout = Vec::new()))]
    fn new(p2: f64, coherent_angle: f64, global_p: Option<f64>, readout: Vec<(f64, f64)>) -> PyResult<Self> {
        let readout = readout
            .into_iter()
            .map(|(p01, p10)| QubitConfusion::from_flips(p01, p10))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let inner = simulator::NoiseModel {
            p2,
            coherent_angle,
            global_p,
            readout,
        };
        inner.validate().map_err(value_err)?;
        Ok(PyNoiseModel { inner })
    }

    #[getter]
    fn p2(&self) -> f64 {
        self.inner.p2
    }

    #[getter]
    fn coherent_angle(&self) -> f64 {
        self.inner.coherent_angle
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn noise_or_ideal(noise: Option<PyRef<'_, PyNoiseModel>>) -> simulator::NoiseModel {
    noise.map(|n| n.inner.clone()).unwrap_or_default()
}

/// Basis-state probabilities after noisy density-matrix simulation.
#[pyfunction]
#[pyo3(signature = (circuit, noise = None))]
fn probabilities(circuit: PyRef<'_, PyCircuit>, noise: Option<PyRef<'_, PyNoiseModel>>) -> PyResult<Vec<f64>> {
    let rho = simulator::simulate_density(&circuit.inner, &noise_or_ideal(noise)).map_err(value_err)?;
    Ok(rho.probabilities())
}

/// `tr(ρ O)` for an observable given as `[(coefficient, "IXZ..."), ...]`.
#[pyfunction]
#[pyo3(signature = (circuit, terms, noise = None, constant = 0.0))]
fn expectation(
    circuit: PyRef<'_, PyCircuit>,
    terms: Vec<(f64, String)>,
    noise: Option<PyRef<'_, PyNoiseModel>>,
    constant: f64,
) -> PyResult<f64> {
    let width = circuit.inner.width();
    let mut obs = qnem_core::Observable::new(width, constant);
    for (coefficient, label) in terms {
        let pauli: qnem_core::PauliString = label.parse().map_err(value_err)?;
        obs.add_term(coefficient, pauli).map_err(value_err)?;
    }
    let rho = simulator::simulate_density(&circuit.inner, &noise_or_ideal(noise)).map_err(value_err)?;
    rho.expectation(&obs).map_err(value_err)
}

/// Sampled counts keyed by bit string (qubit 0 first).
#[pyfunction]
#[pyo3(signature = (circuit, shots, seed, noise = None))]
fn sample(
    circuit: PyRef<'_, PyCircuit>,
    shots: u64,
    seed: u64,
    noise: Option<PyRef<'_, PyNoiseModel>>,
) -> PyResult<BTreeMap<String, u64>> {
    let noise = noise_or_ideal(noise);
    let width = circuit.inner.width();
    let rho = simulator::simulate_density(&circuit.inner, &noise).map_err(value_err)?;
    let readout = noise.readout_confusion(width).map_err(value_err)?;
    let counts = simulator::sample_counts(&rho, shots, &readout, seed).map_err(value_err)?;
    Ok(counts.to_bitstring_map())
}

#[pyfunction]
fn randomized_compile(circuit: PyRef<'_, PyCircuit>, seed: u64) -> PyCircuit {
    PyCircuit {
        inner: transforms::randomized_compile(&circuit.inner, seed),
    }
}

#[pyfunction]
fn fold_cnots(circuit: PyRef<'_, PyCircuit>, factor: u32) -> PyResult<PyCircuit> {
    let factor = FoldFactor::new(factor).map_err(value_err)?;
    Ok(PyCircuit {
        inner: transforms::fold_cnots(&circuit.inner, factor),
    })
}

#[pyfunction]
fn estimation_circuit(circuit: PyRef<'_, PyCircuit>, seed: u64) -> PyCircuit {
    PyCircuit {
        inner: transforms::derive_estimation_circuit(&circuit.inner, seed),
    }
}

fn model(n: usize, coupling: f64, dt: f64, steps: usize, merge: bool, even_bonds: bool) -> PyResult<ModelParams> {
    let params = ModelParams {
        n,
        coupling,
        dt,
        steps,
        merge_half_steps: merge,
        half_step_bonds: if even_bonds {
            HalfStepBonds::Even
        } else {
            HalfStepBonds::Odd
        },
    };
    params.validate().map_err(value_err)?;
    Ok(params)
}

/// Domain-wall preparation followed by `steps` Trotter steps.
#[pyfunction]
#[pyo3(signature = (n = 6, steps = 15, dt = 0.25, coupling = 1.0, merge = false, even_bonds = false))]
fn xx_target_circuit(
    n: usize,
    steps: usize,
    dt: f64,
    coupling: f64,
    merge: bool,
    even_bonds: bool,
) -> PyResult<PyCircuit> {
    let params = model(n, coupling, dt, steps, merge, even_bonds)?;
    Ok(PyCircuit {
        inner: xx_model::target_circuit(&params).map_err(value_err)?,
    })
}

/// Noiseless last-site magnetization at time `t`.
#[pyfunction]
#[pyo3(signature = (t, n = 6, dt = 0.25, coupling = 1.0, trotterized = true))]
fn exact_magnetization(t: f64, n: usize, dt: f64, coupling: f64, trotterized: bool) -> PyResult<f64> {
    let steps = (t / dt).round().max(1.0) as usize;
    let params = model(n, coupling, dt, steps, false, false)?;
    xx_model::exact_magnetization(&params, t, trotterized).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (noisy, fidelity, c = 0.0))]
fn correct_depolarizing(noisy: f64, fidelity: f64, c: f64) -> PyResult<f64> {
    mitigation::correct_depolarizing(noisy, fidelity, c).map_err(value_err)
}

/// Quadratic extrapolation to zero of `[(factor, value, uncertainty), ...]`.
#[pyfunction]
fn zne_quadratic(points: Vec<(f64, f64, f64)>) -> PyResult<(f64, f64)> {
    let points: Vec<(f64, Estimate)> = points.into_iter().map(|(x, v, u)| (x, Estimate::new(v, u))).collect();
    let e = mitigation::zne_quadratic(&points).map_err(value_err)?;
    Ok((e.value, e.uncertainty))
}

#[pyfunction]
fn lagrange_weights_at_zero(nodes: Vec<f64>) -> Vec<f64> {
    mitigation::lagrange_weights_at_zero(&nodes)
}

/// Iterative Bayesian unfolding of bit-string counts through per-qubit
/// `(p01, p10)` flip rates.
#[pyfunction]
#[pyo3(signature = (counts, width, flips, iterations = mitigation::DEFAULT_UNFOLD_ITERATIONS))]
fn unfold(counts: BTreeMap<String, u64>, width: usize, flips: Vec<(f64, f64)>, iterations: usize) -> PyResult<Vec<f64>> {
    let hist = CountHistogram::from_bitstring_map(width, &counts)
        .ok_or_else(|| PyValueError::new_err("malformed bit strings"))?;
    let qubits = flips
        .into_iter()
        .map(|(p01, p10)| QubitConfusion::from_flips(p01, p10))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let qubits = if qubits.len() == 1 { vec![qubits[0]; width] } else { qubits };
    let confusion = ConfusionMatrix::tensor(qubits).map_err(value_err)?;
    mitigation::unfold(&hist, &confusion, iterations).map_err(value_err)
}

/// Runs the sweep described by a TOML configuration. Writes into `out_dir`
/// when given (resuming if possible). Returns the four tables as CSV text
/// keyed by file name.
#[pyfunction]
#[pyo3(signature = (config_toml = String::new(), out_dir = None, workers = None))]
fn run_experiment(
    py: Python<'_>,
    config_toml: String,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<BTreeMap<&'static str, String>> {
    let config = ExperimentConfig::from_toml_str(&config_toml).map_err(value_err)?;
    let table = py
        .detach(|| match &out_dir {
            Some(dir) => experiment::run(&config, dir, workers).map(|o| o.table),
            None => experiment::run_in_memory(&config, workers).map(|(t, _)| t),
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(BTreeMap::from([
        (experiment::FIG3_FILE, table.fig3_csv()),
        (experiment::FIG4_FILE, table.fig4_csv()),
        (experiment::FIG5_FILE, table.fig5_csv()),
        (experiment::FIG6_FILE, table.fig6_csv()),
    ]))
}

/// Built-in checks as `(name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (workers = None))]
fn selftest(py: Python<'_>, workers: Option<usize>) -> Vec<(String, bool, String)> {
    py.detach(|| experiment::selftest(workers))
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect()
}

#[pymodule]
fn qnem(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCircuit>()?;
    m.add_class::<PyNoiseModel>()?;
    m.add_function(wrap_pyfunction!(probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(expectation, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(randomized_compile, m)?)?;
    m.add_function(wrap_pyfunction!(fold_cnots, m)?)?;
    m.add_function(wrap_pyfunction!(estimation_circuit, m)?)?;
    m.add_function(wrap_pyfunction!(xx_target_circuit, m)?)?;
    m.add_function(wrap_pyfunction!(exact_magnetization, m)?)?;
    m.add_function(wrap_pyfunction!(correct_depolarizing, m)?)?;
    m.add_function(wrap_pyfunction!(zne_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(lagrange_weights_at_zero, m)?)?;
    m.add_function(wrap_pyfunction!(unfold, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
