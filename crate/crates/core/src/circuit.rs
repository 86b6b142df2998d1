//! Gate/circuit intermediate representation.
//!
//! A [`Circuit`] is a list of layers; every layer holds gates on pairwise
//! disjoint qubits. Qubit 0 is the most significant bit of a basis index, so
//! `|q0 q1 … q(n-1)⟩` reads left to right.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kernels;
use crate::linalg::{CMatrix, Mat2, C64, I, ONE, ZERO};

/// Largest width for which [`Circuit::unitary`] builds a dense matrix.
pub const DEFAULT_UNITARY_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("qubit {qubit} is out of range for a {width}-qubit circuit")]
    QubitOutOfRange { qubit: usize, width: usize },
    #[error("gate uses qubit {0} twice")]
    RepeatedQubit(usize),
    #[error("qubit {0} appears twice in one layer")]
    LayerConflict(usize),
    #[error("width {width} exceeds the dense cap of {cap} qubits")]
    WidthOverCap { width: usize, cap: usize },
    #[error("circuit widths differ ({0} vs {1})")]
    WidthMismatch(usize, usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Single-qubit gate kinds. Rotation angles are in radians.
///
/// `U3 { theta, phi, lambda }` is `Rz(phi)·Ry(theta)·Rz(lambda)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OneQubitGate {
    I,
    X,
    Y,
    Z,
    H,
    Rx(f64),
    Ry(f64),
    Rz(f64),
    U3 { theta: f64, phi: f64, lambda: f64 },
}

impl OneQubitGate {
    pub fn matrix(&self) -> Mat2 {
        match *self {
            OneQubitGate::I => Mat2::IDENTITY,
            OneQubitGate::X => Mat2::new(ZERO, ONE, ONE, ZERO),
            OneQubitGate::Y => Mat2::new(ZERO, -I, I, ZERO),
            OneQubitGate::Z => Mat2::new(ONE, ZERO, ZERO, -ONE),
            OneQubitGate::H => {
                let h = C64::new(FRAC_1_SQRT_2, 0.0);
                Mat2::new(h, h, h, -h)
            }
            OneQubitGate::Rx(a) => {
                let (s, c) = (a / 2.0).sin_cos();
                Mat2::new(
                    C64::new(c, 0.0),
                    C64::new(0.0, -s),
                    C64::new(0.0, -s),
                    C64::new(c, 0.0),
                )
            }
            OneQubitGate::Ry(a) => {
                let (s, c) = (a / 2.0).sin_cos();
                Mat2::new(
                    C64::new(c, 0.0),
                    C64::new(-s, 0.0),
                    C64::new(s, 0.0),
                    C64::new(c, 0.0),
                )
            }
            OneQubitGate::Rz(a) => Mat2::new(
                C64::from_polar(1.0, -a / 2.0),
                ZERO,
                ZERO,
                C64::from_polar(1.0, a / 2.0),
            ),
            OneQubitGate::U3 { theta, phi, lambda } => {
                OneQubitGate::Rz(phi).matrix()
                    * OneQubitGate::Ry(theta).matrix()
                    * OneQubitGate::Rz(lambda).matrix()
            }
        }
    }

    /// Exact inverse with negated angles.
    pub fn inverse(&self) -> OneQubitGate {
        match *self {
            OneQubitGate::Rx(a) => OneQubitGate::Rx(-a),
            OneQubitGate::Ry(a) => OneQubitGate::Ry(-a),
            OneQubitGate::Rz(a) => OneQubitGate::Rz(-a),
            OneQubitGate::U3 { theta, phi, lambda } => OneQubitGate::U3 {
                theta: -theta,
                phi: -lambda,
                lambda: -phi,
            },
            g => g,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OneQubitGate::I => "i",
            OneQubitGate::X => "x",
            OneQubitGate::Y => "y",
            OneQubitGate::Z => "z",
            OneQubitGate::H => "h",
            OneQubitGate::Rx(_) => "rx",
            OneQubitGate::Ry(_) => "ry",
            OneQubitGate::Rz(_) => "rz",
            OneQubitGate::U3 { .. } => "u3",
        }
    }

    pub fn angles(&self) -> Vec<f64> {
        match *self {
            OneQubitGate::Rx(a) | OneQubitGate::Ry(a) | OneQubitGate::Rz(a) => vec![a],
            OneQubitGate::U3 { theta, phi, lambda } => vec![theta, phi, lambda],
            _ => Vec::new(),
        }
    }

    /// Parses a lowercase gate name (`x`, `rz`, `u3`, ...) with its angles.
    pub fn from_parts(name: &str, angles: &[f64]) -> Result<Self, String> {
        let want = |n: usize| {
            if angles.len() == n {
                Ok(())
            } else {
                Err(format!("`{name}` takes {n} angle(s), got {}", angles.len()))
            }
        };
        let gate = match name {
            "i" => want(0).map(|_| OneQubitGate::I)?,
            "x" => want(0).map(|_| OneQubitGate::X)?,
            "y" => want(0).map(|_| OneQubitGate::Y)?,
            "z" => want(0).map(|_| OneQubitGate::Z)?,
            "h" => want(0).map(|_| OneQubitGate::H)?,
            "rx" => want(1).map(|_| OneQubitGate::Rx(angles[0]))?,
            "ry" => want(1).map(|_| OneQubitGate::Ry(angles[0]))?,
            "rz" => want(1).map(|_| OneQubitGate::Rz(angles[0]))?,
            "u3" => want(3).map(|_| OneQubitGate::U3 {
                theta: angles[0],
                phi: angles[1],
                lambda: angles[2],
            })?,
            other => return Err(format!("unknown gate `{other}`")),
        };
        Ok(gate)
    }
}

/// A gate placed on concrete qubits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    One { gate: OneQubitGate, qubit: usize },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn one(gate: OneQubitGate, qubit: usize) -> Self {
        Gate::One { gate, qubit }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Gate::Cnot { control, target }
    }

    pub fn is_cnot(&self) -> bool {
        matches!(self, Gate::Cnot { .. })
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::One { qubit, .. } => vec![qubit],
            Gate::Cnot { control, target } => vec![control, target],
        }
    }

    /// The local unitary: 2×2 for single-qubit gates, 4×4 for CNOT with the
    /// control as the high bit.
    pub fn unitary(&self) -> CMatrix {
        match self {
            Gate::One { gate, .. } => gate.matrix().to_dense(),
            Gate::Cnot { .. } => {
                let mut m = CMatrix::zeros(4);
                m.set(0, 0, ONE);
                m.set(1, 1, ONE);
                m.set(2, 3, ONE);
                m.set(3, 2, ONE);
                m
            }
        }
    }

    fn validate(&self, width: usize) -> Result<(), CircuitError> {
        for q in self.qubits() {
            if q >= width {
                return Err(CircuitError::QubitOutOfRange { qubit: q, width });
            }
        }
        if let Gate::Cnot { control, target } = *self {
            if control == target {
                return Err(CircuitError::RepeatedQubit(control));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Gate {
    /// One line of the text format; angles carry 17 significant digits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::One { gate, qubit } => {
                write!(f, "{} {}", gate.name(), qubit)?;
                for a in gate.angles() {
                    write!(f, " {a:.16e}")?;
                }
                Ok(())
            }
            Gate::Cnot { control, target } => write!(f, "cx {control} {target}"),
        }
    }
}

/// Layered circuit on a fixed number of qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    width: usize,
    layers: Vec<Vec<Gate>>,
}

impl Circuit {
    pub fn new(width: usize) -> Self {
        Circuit {
            width,
            layers: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layers(&self) -> &[Vec<Gate>] {
        &self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Appends a gate, packing it into the last layer when its qubits are
    /// free there.
    pub fn append(&mut self, gate: Gate) -> Result<&mut Self, CircuitError> {
        gate.validate(self.width)?;
        let qubits = gate.qubits();
        let fits = self.layers.last().is_some_and(|layer| {
            layer
                .iter()
                .all(|g| g.qubits().iter().all(|q| !qubits.contains(q)))
        });
        match self.layers.last_mut() {
            Some(layer) if fits => layer.push(gate),
            _ => self.layers.push(vec![gate]),
        }
        Ok(self)
    }

    /// Adds a whole layer as given. Empty layers are dropped.
    pub fn push_layer(&mut self, layer: Vec<Gate>) -> Result<&mut Self, CircuitError> {
        let mut used = vec![false; self.width];
        for g in &layer {
            g.validate(self.width)?;
            for q in g.qubits() {
                if std::mem::replace(&mut used[q], true) {
                    return Err(CircuitError::LayerConflict(q));
                }
            }
        }
        if !layer.is_empty() {
            self.layers.push(layer);
        }
        Ok(self)
    }

    /// Appends every layer of `other` after this circuit, keeping its layering.
    pub fn extend(&mut self, other: &Circuit) -> Result<&mut Self, CircuitError> {
        if other.width != self.width {
            return Err(CircuitError::WidthMismatch(self.width, other.width));
        }
        self.layers.extend(other.layers.iter().cloned());
        Ok(self)
    }

    /// Gates in execution order.
    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flatten()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn cnot_count(&self) -> usize {
        self.gates().filter(|g| g.is_cnot()).count()
    }

    /// Dense unitary of the whole circuit.
    pub fn unitary(&self) -> Result<CMatrix, CircuitError> {
        self.unitary_with_cap(DEFAULT_UNITARY_CAP)
    }

    pub fn unitary_with_cap(&self, cap: usize) -> Result<CMatrix, CircuitError> {
        if self.width > cap {
            return Err(CircuitError::WidthOverCap {
                width: self.width,
                cap,
            });
        }
        let dim = 1usize << self.width;
        let mut out = CMatrix::zeros(dim);
        let mut column = vec![ZERO; dim];
        for j in 0..dim {
            column.iter_mut().for_each(|a| *a = ZERO);
            column[j] = ONE;
            for g in self.gates() {
                kernels::apply_gate_vec(&mut column, self.width, g);
            }
            for (r, a) in column.iter().enumerate() {
                out.set(r, j, *a);
            }
        }
        Ok(out)
    }

    /// Line-oriented text form: a `width` header, then `layer` markers each
    /// followed by one gate per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("width {}\n", self.width);
        for layer in &self.layers {
            s.push_str("layer\n");
            for g in layer {
                s.push_str(&g.to_string());
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CircuitError> {
        let err = |line: usize, msg: String| CircuitError::Parse { line, msg };
        let mut circuit: Option<Circuit> = None;
        let mut layer: Option<Vec<Gate>> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            match (head, circuit.as_mut()) {
                ("width", None) => {
                    let w = parts
                        .next()
                        .and_then(|w| w.parse::<usize>().ok())
                        .ok_or_else(|| err(line_no, "bad width".into()))?;
                    circuit = Some(Circuit::new(w));
                }
                (_, None) => return Err(err(line_no, "expected `width` header".into())),
                ("layer", Some(c)) => {
                    if let Some(l) = layer.take() {
                        c.push_layer(l)?;
                    }
                    layer = Some(Vec::new());
                }
                (name, Some(_)) => {
                    let current = layer
                        .as_mut()
                        .ok_or_else(|| err(line_no, "gate before first `layer`".into()))?;
                    let fields: Vec<&str> = parts.collect();
                    let gate = parse_gate(name, &fields).map_err(|m| err(line_no, m))?;
                    current.push(gate);
                }
            }
        }
        let mut c = circuit.ok_or_else(|| err(0, "missing `width` header".into()))?;
        if let Some(l) = layer {
            c.push_layer(l)?;
        }
        Ok(c)
    }
}

impl FromStr for Circuit {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Circuit::from_text(s)
    }
}

fn parse_gate(name: &str, fields: &[&str]) -> Result<Gate, String> {
    let index = |s: &str| s.parse::<usize>().map_err(|_| format!("bad qubit `{s}`"));
    if name == "cx" {
        if fields.len() != 2 {
            return Err("`cx` takes two qubits".into());
        }
        return Ok(Gate::cnot(index(fields[0])?, index(fields[1])?));
    }
    let (q, rest) = fields
        .split_first()
        .ok_or_else(|| format!("`{name}` needs a qubit"))?;
    let angles = rest
        .iter()
        .map(|a| a.parse::<f64>().map_err(|_| format!("bad angle `{a}`")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Gate::one(OneQubitGate::from_parts(name, &angles)?, index(q)?))
}

/// Single-qubit Pauli factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn gate(self) -> OneQubitGate {
        match self {
            Pauli::I => OneQubitGate::I,
            Pauli::X => OneQubitGate::X,
            Pauli::Y => OneQubitGate::Y,
            Pauli::Z => OneQubitGate::Z,
        }
    }

    pub fn matrix(self) -> Mat2 {
        self.gate().matrix()
    }

    fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tensor product of Paulis over `width` qubits, stored as X/Z bit masks
/// using the same bit order as basis indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    width: usize,
    x: usize,
    z: usize,
}

impl PauliString {
    pub fn identity(width: usize) -> Self {
        PauliString { width, x: 0, z: 0 }
    }

    pub fn from_paulis(paulis: &[Pauli]) -> Self {
        let width = paulis.len();
        let mut s = Self::identity(width);
        for (q, p) in paulis.iter().enumerate() {
            s = s.with(q, *p);
        }
        s
    }

    /// Single Pauli `p` on `qubit`, identity elsewhere.
    pub fn single(width: usize, qubit: usize, p: Pauli) -> Self {
        Self::identity(width).with(qubit, p)
    }

    pub fn with(mut self, qubit: usize, p: Pauli) -> Self {
        assert!(qubit < self.width, "qubit {qubit} out of range");
        let bit = 1usize << (self.width - 1 - qubit);
        self.x &= !bit;
        self.z &= !bit;
        match p {
            Pauli::I => {}
            Pauli::X => self.x |= bit,
            Pauli::Y => {
                self.x |= bit;
                self.z |= bit;
            }
            Pauli::Z => self.z |= bit,
        }
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, qubit: usize) -> Pauli {
        let bit = 1usize << (self.width - 1 - qubit);
        match (self.x & bit != 0, self.z & bit != 0) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    pub fn x_mask(&self) -> usize {
        self.x
    }

    /// `S|j⟩ = phase(j)·|j ⊕ x⟩`; returns the phase.
    #[inline]
    pub fn phase(&self, j: usize) -> C64 {
        let sign = if (j & self.z).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        let ny = (self.x & self.z).count_ones() % 4;
        let ipow = match ny {
            0 => ONE,
            1 => I,
            2 => -ONE,
            _ => -I,
        };
        ipow * sign
    }

    /// `S·v` for a state vector `v`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; v.len()];
        for (j, a) in v.iter().enumerate() {
            out[j ^ self.x] += self.phase(j) * a;
        }
        out
    }

    pub fn matrix(&self) -> CMatrix {
        let dim = 1usize << self.width;
        let mut m = CMatrix::zeros(dim);
        for j in 0..dim {
            m.set(j ^ self.x, j, self.phase(j));
        }
        m
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.width {
            write!(f, "{}", self.get(q).symbol())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let paulis = s
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(format!("unknown Pauli `{other}`")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PauliString::from_paulis(&paulis))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("the all-identity string belongs in the constant, not in a term")]
    IdentityTerm,
    #[error("term width {term} does not match observable width {observable}")]
    WidthMismatch { term: usize, observable: usize },
}

/// `O = c·I + Σ cᵢ Sᵢ` with every `Sᵢ` traceless.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    width: usize,
    constant: f64,
    terms: Vec<(f64, PauliString)>,
}

impl Observable {
    pub fn new(width: usize, constant: f64) -> Self {
        Observable {
            width,
            constant,
            terms: Vec::new(),
        }
    }

    pub fn add_term(&mut self, coefficient: f64, string: PauliString) -> Result<(), ObservableError> {
        if string.width() != self.width {
            return Err(ObservableError::WidthMismatch {
                term: string.width(),
                observable: self.width,
            });
        }
        if string.is_identity() {
            return Err(ObservableError::IdentityTerm);
        }
        self.terms.push((coefficient, string));
        Ok(())
    }

    pub fn with_term(mut self, coefficient: f64, string: PauliString) -> Result<Self, ObservableError> {
        self.add_term(coefficient, string)?;
        Ok(self)
    }

    /// σ_z on one qubit.
    pub fn sigma_z(width: usize, qubit: usize) -> Self {
        let mut o = Observable::new(width, 0.0);
        o.terms.push((1.0, PauliString::single(width, qubit, Pauli::Z)));
        o
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    /// The traceless part `O − c·I`.
    pub fn traceless_part(&self) -> Observable {
        Observable {
            width: self.width,
            constant: 0.0,
            terms: self.terms.clone(),
        }
    }

    pub fn matrix(&self) -> CMatrix {
        let dim = 1usize << self.width;
        let mut m = CMatrix::identity(dim).scale(C64::new(self.constant, 0.0));
        for (c, s) in &self.terms {
            for j in 0..dim {
                let r = j ^ s.x_mask();
                m.set(r, j, m.get(r, j) + s.phase(j) * c);
            }
        }
        m
    }

    /// `O·v` without forming the dense matrix.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> = v.iter().map(|a| a * self.constant).collect();
        for (c, s) in &self.terms {
            for (j, a) in v.iter().enumerate() {
                out[j ^ s.x_mask()] += s.phase(j) * a * c;
            }
        }
        out
    }
}
