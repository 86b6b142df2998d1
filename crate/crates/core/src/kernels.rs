//! In-place gate and channel kernels on state vectors and row-major density
//! matrices. Qubit `q` of an `n`-qubit register is bit `n-1-q`.

use crate::circuit::Gate;
use crate::linalg::{Mat2, C64};

#[inline]
pub fn qubit_bit(n: usize, q: usize) -> usize {
    1usize << (n - 1 - q)
}

pub fn apply_one_vec(amps: &mut [C64], n: usize, q: usize, u: &Mat2) {
    let bit = qubit_bit(n, q);
    let [[a, b], [c, d]] = u.0;
    for i0 in 0..amps.len() {
        if i0 & bit != 0 {
            continue;
        }
        let i1 = i0 | bit;
        let (x, y) = (amps[i0], amps[i1]);
        amps[i0] = a * x + b * y;
        amps[i1] = c * x + d * y;
    }
}

pub fn apply_cnot_vec(amps: &mut [C64], n: usize, control: usize, target: usize) {
    let cb = qubit_bit(n, control);
    let tb = qubit_bit(n, target);
    for i in 0..amps.len() {
        if i & cb != 0 && i & tb == 0 {
            amps.swap(i, i | tb);
        }
    }
}

pub fn apply_gate_vec(amps: &mut [C64], n: usize, gate: &Gate) {
    match *gate {
        Gate::One { gate, qubit } => apply_one_vec(amps, n, qubit, &gate.matrix()),
        Gate::Cnot { control, target } => apply_cnot_vec(amps, n, control, target),
    }
}

/// `ρ ← U ρ U†` for a single-qubit `U`.
pub fn apply_one_density(rho: &mut [C64], n: usize, q: usize, u: &Mat2) {
    let dim = 1usize << n;
    let bit = qubit_bit(n, q);
    let [[a, b], [c, d]] = u.0;
    // rows: U·ρ
    for r0 in 0..dim {
        if r0 & bit != 0 {
            continue;
        }
        let r1 = r0 | bit;
        for col in 0..dim {
            let x = rho[r0 * dim + col];
            let y = rho[r1 * dim + col];
            rho[r0 * dim + col] = a * x + b * y;
            rho[r1 * dim + col] = c * x + d * y;
        }
    }
    // columns: (Uρ)·U†
    let (ac, bc, cc, dc) = (a.conj(), b.conj(), c.conj(), d.conj());
    for row in rho.chunks_exact_mut(dim) {
        for c0 in 0..dim {
            if c0 & bit != 0 {
                continue;
            }
            let c1 = c0 | bit;
            let (x, y) = (row[c0], row[c1]);
            row[c0] = x * ac + y * bc;
            row[c1] = x * cc + y * dc;
        }
    }
}

pub fn apply_cnot_density(rho: &mut [C64], n: usize, control: usize, target: usize) {
    let dim = 1usize << n;
    let cb = qubit_bit(n, control);
    let tb = qubit_bit(n, target);
    for r in 0..dim {
        if r & cb != 0 && r & tb == 0 {
            let r1 = r | tb;
            for col in 0..dim {
                rho.swap(r * dim + col, r1 * dim + col);
            }
        }
    }
    for row in rho.chunks_exact_mut(dim) {
        for col in 0..dim {
            if col & cb != 0 && col & tb == 0 {
                row.swap(col, col | tb);
            }
        }
    }
}

/// `ρ ← D ρ D†` for a diagonal unitary `D = diag(phases)`.
pub fn apply_diagonal_density(rho: &mut [C64], phases: &[C64]) {
    let dim = phases.len();
    for (r, row) in rho.chunks_exact_mut(dim).enumerate() {
        let pr = phases[r];
        for (x, pc) in row.iter_mut().zip(phases) {
            *x *= pr * pc.conj();
        }
    }
}

/// Depolarizing channel on the qubits in `mask`:
/// `ρ ← (1−p)ρ + p·Tr_S(ρ) ⊗ I_S / 2^|S|`.
pub fn depolarize_density(rho: &mut [C64], n: usize, mask: usize, p: f64) {
    if p == 0.0 || mask == 0 {
        return;
    }
    let dim = 1usize << n;
    let subs = submasks(mask);
    let norm = p / subs.len() as f64;
    let keep = 1.0 - p;
    for ri in (0..dim).filter(|i| i & mask == 0) {
        for rj in (0..dim).filter(|j| j & mask == 0) {
            let s: C64 = subs.iter().map(|k| rho[(ri | k) * dim + (rj | k)]).sum();
            for &k1 in &subs {
                for &k2 in &subs {
                    let idx = (ri | k1) * dim + (rj | k2);
                    rho[idx] *= keep;
                    if k1 == k2 {
                        rho[idx] += s * norm;
                    }
                }
            }
        }
    }
}

/// All submasks of `mask`, including 0 and `mask` itself.
pub fn submasks(mask: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(1 << mask.count_ones());
    let mut sub = mask;
    loop {
        out.push(sub);
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & mask;
    }
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn submasks_enumerate_all_subsets() {
        assert_eq!(submasks(0), vec![0]);
        assert_eq!(submasks(0b101), vec![0, 1, 4, 5]);
        assert_eq!(submasks(0b1110).len(), 8);
    }
}
