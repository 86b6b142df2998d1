//! Seeded sweep over (time step × fold factor × instance × circuit kind),
//! run-record persistence, aggregation and plot-ready tables.
//!
//! Every cell derives its own seed from the master seed and its key, so the
//! result does not depend on how cells are scheduled across workers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, Write as _};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, Gate, Observable, OneQubitGate};
use crate::mitigation::{
    self, aggregate, estimate_fidelity, lagrange_weights_at_zero, mitigate_with_floor, unfold, zne_quadratic,
    ConfusionMatrix, Estimate, EstimationOutput, FidelityEstimate, FidelityMode, MitigationError,
    QubitConfusion, Summary,
};
use crate::simulator::{sample_counts, simulate_density, CountHistogram, DensityMatrix, NoiseModel, SimError};
use crate::transforms::{derive_estimation_circuit, fold_cnots, randomized_compile, FoldFactor};
use crate::xx_model::{exact_trotter_curve, magnetization_observable, target_circuit, ModelError, ModelParams};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const CONFUSION_FILE: &str = "confusion.json";
pub const FIG3_FILE: &str = "fig3_magnetization.csv";
pub const FIG4_FILE: &str = "fig4_fidelity.csv";
pub const FIG5_FILE: &str = "fig5_target.csv";
pub const FIG6_FILE: &str = "fig6_mitigated.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mitigation(#[from] MitigationError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("run directory {0} holds records from a different configuration")]
    ConfigMismatch(PathBuf),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Two preparations per qubit; the response is a tensor product.
    #[default]
    PerQubit,
    /// Every basis state prepared; the full `2^n × 2^n` response.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub shots: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mode: CalibrationMode::PerQubit,
            shots: 100_000,
        }
    }
}

/// Everything that determines a run's numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub instances: usize,
    /// Read `tr(ρO)` directly instead of sampling shots.
    pub exact: bool,
    pub shots: u64,
    pub folds: Vec<FoldFactor>,
    pub unfold_iterations: usize,
    pub fidelity_mode: FidelityMode,
    pub fidelity_floor: f64,
    /// Replace each target circuit by an estimation circuit; every mitigated
    /// value should then be 1.
    pub self_test: bool,
    /// Where `run` writes when no directory is given explicitly.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelParams,
    pub noise: NoiseModel,
    pub calibration: CalibrationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 2021,
            instances: 448,
            exact: false,
            shots: 8192,
            folds: FoldFactor::STANDARD.to_vec(),
            unfold_iterations: mitigation::DEFAULT_UNFOLD_ITERATIONS,
            fidelity_mode: FidelityMode::SigmaZLast,
            fidelity_floor: mitigation::DEFAULT_FIDELITY_FLOOR,
            self_test: false,
            output_dir: None,
            model: ModelParams::default(),
            noise: NoiseModel::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// 64 instances × 2048 shots; a few minutes on a laptop.
    pub fn desk_scale() -> Self {
        ExperimentConfig {
            instances: 64,
            shots: 2048,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.model.validate()?;
        self.noise.validate()?;
        self.noise.readout_confusion(self.model.n)?;
        let bad = |m: &str| Err(RunError::InvalidConfig(m.to_string()));
        if self.instances == 0 {
            return bad("instances must be at least 1");
        }
        if self.instances > u32::MAX as usize {
            return bad("too many instances");
        }
        if self.model.steps >= 1 << 16 {
            return bad("too many steps");
        }
        if !self.exact && self.shots == 0 {
            return bad("shots must be positive in sampled mode");
        }
        if self.unfold_iterations == 0 {
            return bad("unfold_iterations must be at least 1");
        }
        if self.folds.len() != 3 {
            return bad("exactly three fold factors are required");
        }
        if self.folds.iter().any(|f| f.get() >= 256) {
            return bad("fold factors must be below 256");
        }
        let mut sorted = self.folds.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.folds.len() {
            return bad("fold factors must be distinct");
        }
        if !(0.0..1.0).contains(&self.fidelity_floor) {
            return bad("fidelity_floor must be in [0, 1)");
        }
        if self.calibration.shots == 0 {
            return bad("calibration shots must be positive");
        }
        if self.calibration.mode == CalibrationMode::Full && self.model.n > 10 {
            return bad("full calibration is limited to 10 qubits");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, RunError> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| RunError::Parse {
            path: PathBuf::from("<config>"),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| RunError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    /// True when both configurations produce the same cells.
    pub fn same_experiment(&self, other: &ExperimentConfig) -> bool {
        let strip = |c: &ExperimentConfig| ExperimentConfig {
            output_dir: None,
            ..c.clone()
        };
        strip(self) == strip(other)
    }

    fn folds_sorted(&self) -> Vec<FoldFactor> {
        let mut f = self.folds.clone();
        f.sort();
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitKind {
    Target,
    Estimation,
}

impl CircuitKind {
    fn tag(self) -> u64 {
        match self {
            CircuitKind::Target => 0,
            CircuitKind::Estimation => 1,
        }
    }
}

/// Identity of one sweep cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub step: usize,
    pub fold: FoldFactor,
    pub instance: usize,
    pub kind: CircuitKind,
}

const CALIBRATION_TAG: u64 = 2;

/// splitmix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn seed_for(master: u64, packed: u64) -> u64 {
    mix64(master ^ mix64(packed))
}

/// Per-cell seed. Injective in the key for a fixed master seed while
/// `step < 2^16`, `fold < 2^8` and `instance < 2^32`.
pub fn cell_seed(master: u64, key: &CellKey) -> u64 {
    let packed = (key.step as u64) << 42
        | u64::from(key.fold.get()) << 34
        | (key.instance as u64) << 2
        | key.kind.tag();
    seed_for(master, packed)
}

fn calibration_seed(master: u64, circuit_index: usize) -> u64 {
    seed_for(master, (circuit_index as u64) << 2 | CALIBRATION_TAG | 1u64 << 63)
}

/// One simulated circuit: the unit of persistence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub fold: FoldFactor,
    pub instance: usize,
    pub kind: CircuitKind,
    pub seed: u64,
    /// Raw counts keyed by bit string (sampled mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<BTreeMap<String, u64>>,
    /// `tr(ρO)` of the recorded quantity (exact mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
    /// Magnetization for targets, fidelity quantity for estimation circuits,
    /// after readout unfolding in sampled mode.
    pub value: f64,
}

impl RunRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            step: self.step,
            fold: self.fold,
            instance: self.instance,
            kind: self.kind,
        }
    }
}

/// The circuit actually simulated for a cell, before noise.
pub fn cell_circuit(config: &ExperimentConfig, target: &Circuit, key: &CellKey) -> (Circuit, CellSeeds) {
    let seeds = CellSeeds::new(cell_seed(config.master_seed, key));
    let logical = match (key.kind, config.self_test) {
        (CircuitKind::Target, false) => target.clone(),
        _ => derive_estimation_circuit(target, seeds.rotations),
    };
    let compiled = randomized_compile(&logical, seeds.twirl);
    (fold_cnots(&compiled, key.fold), seeds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellSeeds {
    pub cell: u64,
    pub rotations: u64,
    pub twirl: u64,
    pub shots: u64,
}

impl CellSeeds {
    fn new(cell: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cell);
        CellSeeds {
            cell,
            rotations: rng.next_u64(),
            twirl: rng.next_u64(),
            shots: rng.next_u64(),
        }
    }
}

struct CellContext<'a> {
    config: &'a ExperimentConfig,
    targets: &'a [Circuit],
    observable: Observable,
    true_readout: ConfusionMatrix,
    unfold_with: Option<&'a ConfusionMatrix>,
}

impl CellContext<'_> {
    fn quantity(&self, kind: CircuitKind, rho: &DensityMatrix) -> Result<f64, RunError> {
        let fidelity_like = kind == CircuitKind::Estimation || self.config.self_test;
        Ok(match (fidelity_like, self.config.fidelity_mode) {
            (true, FidelityMode::AllZerosProbability) => rho.get(0, 0).re,
            _ => rho.expectation(&self.observable)?,
        })
    }

    fn quantity_from_distribution(&self, kind: CircuitKind, dist: &[f64]) -> f64 {
        let fidelity_like = kind == CircuitKind::Estimation || self.config.self_test;
        let mode = if fidelity_like {
            self.config.fidelity_mode
        } else {
            FidelityMode::SigmaZLast
        };
        EstimationOutput::Distribution(dist.to_vec()).value(mode)
    }

    fn run(&self, key: &CellKey) -> Result<RunRecord, RunError> {
        let (circuit, seeds) = cell_circuit(self.config, &self.targets[key.step], key);
        let rho = simulate_density(&circuit, &self.config.noise)?;
        let mut record = RunRecord {
            step: key.step,
            fold: key.fold,
            instance: key.instance,
            kind: key.kind,
            seed: seeds.cell,
            counts: None,
            exact: None,
            value: 0.0,
        };
        if self.config.exact {
            let v = self.quantity(key.kind, &rho)?;
            record.exact = Some(v);
            record.value = v;
        } else {
            let counts = sample_counts(&rho, self.config.shots, &self.true_readout, seeds.shots)?;
            let confusion = self.unfold_with.expect("sampled mode has a confusion matrix");
            let dist = unfold(&counts, confusion, self.config.unfold_iterations)?;
            record.value = self.quantity_from_distribution(key.kind, &dist);
            record.counts = Some(counts.to_bitstring_map());
        }
        Ok(record)
    }
}

/// All cell keys in canonical order.
pub fn cell_keys(config: &ExperimentConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for step in 0..=config.model.steps {
        for fold in config.folds_sorted() {
            for kind in [CircuitKind::Target, CircuitKind::Estimation] {
                for instance in 0..config.instances {
                    keys.push(CellKey {
                        step,
                        fold,
                        instance,
                        kind,
                    });
                }
            }
        }
    }
    keys
}

/// Measures the readout response through the simulator.
pub fn calibrate(config: &ExperimentConfig) -> Result<ConfusionMatrix, RunError> {
    config.validate()?;
    let n = config.model.n;
    let truth = config.noise.readout_confusion(n)?;
    let shots = config.calibration.shots;
    let run_prep = |index: usize, state: usize| -> Result<CountHistogram, RunError> {
        let mut c = Circuit::new(n);
        let layer = (0..n)
            .filter(|q| state & (1usize << (n - 1 - q)) != 0)
            .map(|q| Gate::one(OneQubitGate::X, q))
            .collect();
        c.push_layer(layer).expect("one gate per wire");
        let rho = simulate_density(&c, &config.noise)?;
        Ok(sample_counts(&rho, shots, &truth, calibration_seed(config.master_seed, index))?)
    };
    match config.calibration.mode {
        CalibrationMode::PerQubit => {
            let mut qubits = Vec::with_capacity(n);
            for q in 0..n {
                let bit = 1usize << (n - 1 - q);
                let zero = run_prep(2 * q, 0)?;
                let one = run_prep(2 * q + 1, bit)?;
                let read_one = |h: &CountHistogram| {
                    h.iter().filter(|(k, _)| k & bit != 0).map(|(_, c)| c).sum::<u64>() as f64
                        / h.shots() as f64
                };
                qubits.push(QubitConfusion::from_flips(read_one(&zero), 1.0 - read_one(&one))?);
            }
            Ok(ConfusionMatrix::tensor(qubits)?)
        }
        CalibrationMode::Full => {
            let dim = 1usize << n;
            let mut rows = vec![vec![0.0; dim]; dim];
            for state in 0..dim {
                let freqs = run_prep(state, state)?.frequencies();
                for (observed, f) in freqs.into_iter().enumerate() {
                    rows[observed][state] = f;
                }
            }
            Ok(ConfusionMatrix::full(n, rows)?)
        }
    }
}

/// Runs (or resumes) the sweep in `out_dir` and writes the result tables.
/// `workers = None` uses every core.
pub fn run(config: &ExperimentConfig, out_dir: &Path, workers: Option<usize>) -> Result<RunOutcome, RunError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let config_path = out_dir.join(CONFIG_FILE);
    let records_path = out_dir.join(RECORDS_FILE);
    let mut existing = BTreeMap::new();
    if config_path.exists() {
        let previous = ExperimentConfig::load(&config_path)?;
        if !previous.same_experiment(config) {
            return Err(RunError::ConfigMismatch(out_dir.to_path_buf()));
        }
        for r in read_records(&records_path)? {
            existing.insert(r.key(), r);
        }
    } else {
        fs::write(&config_path, config.to_toml_string()).map_err(io_err(&config_path))?;
    }

    let confusion = if config.exact {
        None
    } else {
        let path = out_dir.join(CONFUSION_FILE);
        let c = if path.exists() {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            ConfusionMatrix::from_json(&text)?
        } else {
            let c = calibrate(config)?;
            fs::write(&path, c.to_json()).map_err(io_err(&path))?;
            c
        };
        Some(c)
    };

    let missing: Vec<CellKey> = cell_keys(config)
        .into_iter()
        .filter(|k| !existing.contains_key(k))
        .collect();
    let computed = execute(config, confusion.as_ref(), &missing, workers)?;
    let mut failures = BTreeMap::new();
    let mut fresh = 0;
    for (key, result) in missing.iter().zip(computed) {
        match result {
            Ok(r) => {
                existing.insert(*key, r);
                fresh += 1;
            }
            Err(e) => {
                failures.entry((key.step, key.fold)).or_insert_with(|| e.to_string());
            }
        }
    }
    write_records(&records_path, existing.values())?;
    let records: Vec<RunRecord> = existing.into_values().collect();
    let mut table = build_table(config, &records)?;
    for ((step, fold), msg) in failures {
        if let Some(row) = table.rows.get_mut(step) {
            row.failures.push(format!("fold {fold}: {msg}"));
        }
    }
    write_tables(&table, out_dir)?;
    Ok(RunOutcome {
        table,
        computed_cells: fresh,
    })
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub table: ResultTable,
    /// Cells simulated by this invocation (the rest were reused).
    pub computed_cells: usize,
}

/// Runs the sweep fully in memory, without touching the filesystem.
pub fn run_in_memory(config: &ExperimentConfig, workers: Option<usize>) -> Result<(ResultTable, Vec<RunRecord>), RunError> {
    config.validate()?;
    let confusion = if config.exact { None } else { Some(calibrate(config)?) };
    let keys = cell_keys(config);
    let results = execute(config, confusion.as_ref(), &keys, workers)?;
    let mut records = Vec::with_capacity(keys.len());
    let mut failures = BTreeMap::new();
    for (key, r) in keys.iter().zip(results) {
        match r {
            Ok(r) => records.push(r),
            Err(e) => {
                failures.entry((key.step, key.fold)).or_insert_with(|| e.to_string());
            }
        }
    }
    let mut table = build_table(config, &records)?;
    for ((step, fold), msg) in failures {
        table.rows[step].failures.push(format!("fold {fold}: {msg}"));
    }
    Ok((table, records))
}

fn execute(
    config: &ExperimentConfig,
    confusion: Option<&ConfusionMatrix>,
    keys: &[CellKey],
    workers: Option<usize>,
) -> Result<Vec<Result<RunRecord, RunError>>, RunError> {
    let targets = (0..=config.model.steps)
        .map(|k| target_circuit(&config.model.with_steps(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = CellContext {
        config,
        targets: &targets,
        observable: magnetization_observable(config.model.n),
        true_readout: config.noise.readout_confusion(config.model.n)?,
        unfold_with: confusion,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    Ok(pool.install(|| keys.par_iter().map(|k| ctx.run(k)).collect()))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RunError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RunRecord = serde_json::from_str(&line).map_err(|e| RunError::Parse {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        out.push(r);
    }
    Ok(out)
}

fn write_records<'a>(path: &Path, records: impl Iterator<Item = &'a RunRecord>) -> Result<(), RunError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Extrapolated value with its propagated uncertainty and the spread of the
/// same processing applied to each instance separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessedValue {
    pub value: f64,
    pub uncertainty: f64,
    pub std_dev: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub time: f64,
    pub exact_trotter: f64,
    /// Fold-1 target circuits, no correction and no extrapolation.
    pub original: Option<Summary>,
    pub target_folds: BTreeMap<FoldFactor, Summary>,
    pub fidelity: FidelityEstimate,
    pub target_zne: Option<ProcessedValue>,
    /// Corrected target value per fold (before extrapolation).
    pub mitigated_folds: BTreeMap<FoldFactor, ProcessedValue>,
    pub mitigated: Option<ProcessedValue>,
    pub failures: Vec<String>,
}

impl StepRow {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.mitigated.is_some() && self.target_zne.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<StepRow>,
}

impl ResultTable {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(StepRow::is_complete)
    }
}

/// Aggregates records (in canonical key order) into per-step rows.
pub fn build_table(config: &ExperimentConfig, records: &[RunRecord]) -> Result<ResultTable, RunError> {
    let exact = if config.self_test {
        vec![1.0; config.model.steps + 1]
    } else {
        exact_trotter_curve(&config.model)?
    };
    let mut by_key: BTreeMap<CellKey, &RunRecord> = BTreeMap::new();
    for r in records {
        by_key.insert(r.key(), r);
    }
    let folds = config.folds_sorted();
    let c = 0.0;
    let mut rows = Vec::with_capacity(config.model.steps + 1);
    for step in 0..=config.model.steps {
        let mut row = StepRow {
            step,
            time: step as f64 * config.model.dt,
            exact_trotter: exact[step],
            original: None,
            target_folds: BTreeMap::new(),
            fidelity: FidelityEstimate::default(),
            target_zne: None,
            mitigated_folds: BTreeMap::new(),
            mitigated: None,
            failures: Vec::new(),
        };
        let mut target_values: BTreeMap<FoldFactor, Vec<f64>> = BTreeMap::new();
        let mut estimation: BTreeMap<FoldFactor, Vec<EstimationOutput>> = BTreeMap::new();
        for &fold in &folds {
            let collect = |kind| -> Vec<f64> {
                (0..config.instances)
                    .filter_map(|instance| {
                        by_key.get(&CellKey {
                            step,
                            fold,
                            instance,
                            kind,
                        })
                    })
                    .map(|r| r.value)
                    .collect()
            };
            let t = collect(CircuitKind::Target);
            let e = collect(CircuitKind::Estimation);
            if t.len() != config.instances || e.len() != config.instances {
                row.failures.push(format!(
                    "fold {fold}: {} of {} target and {} estimation records",
                    t.len(),
                    config.instances,
                    e.len()
                ));
            }
            if !t.is_empty() {
                row.target_folds.insert(fold, aggregate(&t)?);
                target_values.insert(fold, t);
            }
            if !e.is_empty() {
                estimation.insert(fold, e.into_iter().map(EstimationOutput::Exact).collect());
            }
        }
        row.original = row.target_folds.get(&folds[0]).copied();
        if !estimation.is_empty() {
            row.fidelity = estimate_fidelity(&estimation, config.fidelity_mode)?;
        }
        if !row.failures.is_empty() {
            rows.push(row);
            continue;
        }
        let weights = lagrange_weights_at_zero(&folds.iter().map(|f| f64::from(f.get())).collect::<Vec<_>>());
        let per_instance_zne = |per_fold: &[Vec<f64>]| -> Vec<f64> {
            (0..config.instances)
                .map(|i| weights.iter().zip(per_fold).map(|(w, v)| w * v[i]).sum())
                .collect()
        };

        let raw: Vec<Vec<f64>> = folds.iter().map(|f| target_values[f].clone()).collect();
        let zne_points: Vec<(f64, Estimate)> = folds
            .iter()
            .map(|f| (f64::from(f.get()), row.target_folds[f].estimate()))
            .collect();
        let zne = zne_quadratic(&zne_points)?;
        row.target_zne = Some(ProcessedValue {
            value: zne.value,
            uncertainty: zne.uncertainty,
            std_dev: aggregate(&per_instance_zne(&raw))?.std_dev,
        });

        match mitigate_with_floor(&row.target_folds, &row.fidelity, c, config.fidelity_floor) {
            Ok(m) => {
                let corrected: Vec<Vec<f64>> = folds
                    .iter()
                    .map(|f| {
                        let fid = row.fidelity.folds[f].one_minus_p;
                        target_values[f].iter().map(|y| (y - c) / fid + c).collect()
                    })
                    .collect();
                for (f, values) in folds.iter().zip(&corrected) {
                    row.mitigated_folds.insert(
                        *f,
                        ProcessedValue {
                            value: m.corrected[f].value,
                            uncertainty: m.corrected[f].uncertainty,
                            std_dev: aggregate(values)?.std_dev,
                        },
                    );
                }
                row.mitigated = Some(ProcessedValue {
                    value: m.value,
                    uncertainty: m.uncertainty,
                    std_dev: aggregate(&per_instance_zne(&corrected))?.std_dev,
                });
            }
            Err(e) => row.failures.push(format!("mitigation: {e}")),
        }
        rows.push(row);
    }
    Ok(ResultTable { rows })
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub const FIG3_HEADER: &str = "step,time,exact_trotter,original,original_std_dev,original_sem,target_zne,target_zne_uncertainty,target_zne_std_dev,mitigated,mitigated_uncertainty,mitigated_std_dev,status";
pub const FIG4_HEADER: &str = "step,fold,mean_fidelity,sem,instances,clipped";
pub const FIG5_HEADER: &str = "step,fold,magnetization,sem,std_dev";
pub const FIG6_HEADER: &str = "step,fold,magnetization,uncertainty,std_dev";

impl ResultTable {
    /// Magnetization comparison: exact, original, target ZNE, mitigated.
    pub fn fig3_csv(&self) -> String {
        let mut s = format!("{FIG3_HEADER}\n");
        for r in &self.rows {
            let status = if r.failures.is_empty() {
                "ok".to_string()
            } else {
                format!("\"{}\"", r.failures.join("; ").replace('"', "'"))
            };
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                num(r.time),
                num(r.exact_trotter),
                opt(r.original.map(|o| o.mean)),
                opt(r.original.map(|o| o.std_dev)),
                opt(r.original.map(|o| o.std_err)),
                opt(r.target_zne.map(|z| z.value)),
                opt(r.target_zne.map(|z| z.uncertainty)),
                opt(r.target_zne.map(|z| z.std_dev)),
                opt(r.mitigated.map(|m| m.value)),
                opt(r.mitigated.map(|m| m.uncertainty)),
                opt(r.mitigated.map(|m| m.std_dev)),
                status
            )
            .expect("writing to a string");
        }
        s
    }

    /// Estimated fidelity per step and fold.
    pub fn fig4_csv(&self) -> String {
        let mut s = format!("{FIG4_HEADER}\n");
        for r in &self.rows {
            for (f, v) in &r.fidelity.folds {
                writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.step,
                    f,
                    num(v.one_minus_p),
                    num(v.std_err),
                    v.instances,
                    v.clipped
                )
                .expect("writing to a string");
            }
        }
        s
    }

    /// Target magnetization per fold; fold 0 is the extrapolation.
    pub fn fig5_csv(&self) -> String {
        let mut s = format!("{FIG5_HEADER}\n");
        for r in &self.rows {
            for (f, v) in &r.target_folds {
                writeln!(s, "{},{},{},{},{}", r.step, f, num(v.mean), num(v.std_err), num(v.std_dev))
                    .expect("writing to a string");
            }
            if let Some(z) = r.target_zne {
                writeln!(s, "{},0,{},{},{}", r.step, num(z.value), num(z.uncertainty), num(z.std_dev))
                    .expect("writing to a string");
            }
        }
        s
    }

    /// Corrected magnetization per fold; fold 0 is the extrapolation.
    pub fn fig6_csv(&self) -> String {
        let mut s = format!("{FIG6_HEADER}\n");
        for r in &self.rows {
            for (f, v) in &r.mitigated_folds {
                writeln!(s, "{},{},{},{},{}", r.step, f, num(v.value), num(v.uncertainty), num(v.std_dev))
                    .expect("writing to a string");
            }
            if let Some(m) = r.mitigated {
                writeln!(s, "{},0,{},{},{}", r.step, num(m.value), num(m.uncertainty), num(m.std_dev))
                    .expect("writing to a string");
            }
        }
        s
    }
}

pub fn write_tables(table: &ResultTable, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in [
        (FIG3_FILE, table.fig3_csv()),
        (FIG4_FILE, table.fig4_csv()),
        (FIG5_FILE, table.fig5_csv()),
        (FIG6_FILE, table.fig6_csv()),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Rebuilds the tables of a run directory from its records. A directory
/// without a configuration yields empty tables.
pub fn report(run_dir: &Path) -> Result<ResultTable, RunError> {
    let config_path = run_dir.join(CONFIG_FILE);
    let table = if config_path.exists() {
        let config = ExperimentConfig::load(&config_path)?;
        let records = read_records(&run_dir.join(RECORDS_FILE))?;
        build_table(&config, &records)?
    } else {
        ResultTable::default()
    };
    write_tables(&table, run_dir)?;
    Ok(table)
}

/// Outcome of one built-in check.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick end-to-end checks against exact oracles; runs in seconds.
pub fn selftest(workers: Option<usize>) -> Vec<SelfCheck> {
    let mut out = Vec::new();
    let mut check = |name, result: Result<(bool, String), RunError>| {
        let (passed, detail) = result.unwrap_or_else(|e| (false, e.to_string()));
        out.push(SelfCheck { name, passed, detail });
    };

    check("twirl table", {
        let target = Gate::cnot(0, 1).unitary();
        let worst = crate::transforms::TWIRL_TABLE
            .iter()
            .map(|row| {
                row.dressed_circuit()
                    .unitary()
                    .map(|u| u.distance_up_to_phase(&target))
                    .unwrap_or(f64::INFINITY)
            })
            .fold(0.0, f64::max);
        Ok((worst <= 1e-12, format!("worst distance {worst:.3e}")))
    });

    check("zne oracle", {
        let points: Vec<(f64, Estimate)> = [1.0, 3.0, 5.0]
            .iter()
            .map(|&n: &f64| (n, Estimate::exact((-0.1 * n).exp())))
            .collect();
        zne_quadratic(&points)
            .map(|e| ((e.value - 0.997_996).abs() < 1e-5, format!("extrapolated {:.6}", e.value)))
            .map_err(RunError::from)
    });

    let small = ExperimentConfig {
        instances: 8,
        exact: true,
        model: ModelParams {
            n: 4,
            steps: 3,
            ..ModelParams::default()
        },
        ..ExperimentConfig::default()
    };
    check(
        "noiseless pipeline",
        run_in_memory(&small, workers).map(|(table, _)| {
            let worst = table
                .rows
                .iter()
                .flat_map(|r| {
                    [
                        r.original.map(|o| o.mean),
                        r.target_zne.map(|z| z.value),
                        r.mitigated.map(|m| m.value),
                    ]
                    .map(|v| v.map_or(f64::INFINITY, |v| (v - r.exact_trotter).abs()))
                })
                .fold(0.0, f64::max);
            (worst <= 1e-9, format!("worst deviation {worst:.3e}"))
        }),
    );

    let noisy = ExperimentConfig {
        self_test: true,
        noise: NoiseModel {
            p2: 0.01,
            coherent_angle: 0.02,
            global_p: None,
            readout: Vec::new(),
        },
        ..small.clone()
    };
    check(
        "estimation self-division",
        run_in_memory(&noisy, workers).map(|(table, _)| {
            let mut ok = true;
            let mut worst = 0.0f64;
            for r in &table.rows {
                match r.mitigated {
                    Some(m) => {
                        let dev = (m.value - 1.0).abs();
                        worst = worst.max(dev);
                        ok &= dev <= 3.0 * m.uncertainty + 1e-9;
                    }
                    None => ok = false,
                }
            }
            (ok, format!("worst |mitigated - 1| {worst:.3e}"))
        }),
    );

    let readout = ExperimentConfig {
        calibration: CalibrationConfig {
            mode: CalibrationMode::PerQubit,
            shots: 100_000,
        },
        noise: NoiseModel {
            readout: vec![QubitConfusion { p01: 0.02, p10: 0.05 }],
            ..NoiseModel::default()
        },
        ..small
    };
    check(
        "readout calibration",
        calibrate(&readout).map(|c| {
            let sigma = |p: f64| (p * (1.0 - p) / 100_000.0).sqrt();
            let ok = c.qubit_factors().is_some_and(|qs| {
                qs.iter().all(|q| {
                    (q.p01 - 0.02).abs() <= 3.0 * sigma(0.02) && (q.p10 - 0.05).abs() <= 3.0 * sigma(0.05)
                })
            });
            (ok, "per-qubit flips within 3 sigma".to_string())
        }),
    );
    out
}
