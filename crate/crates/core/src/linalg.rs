//! Small dense complex linear algebra used by the circuit and simulator code.
//!
//! Matrices are square, row-major and sized for at most a few thousand rows,
//! which is all a ten-qubit unitary needs.

use std::ops::Mul;

use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// A 2×2 complex matrix, the unitary of a single-qubit gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[C64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[ONE, ZERO], [ZERO, ONE]]);

    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Mat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.0[r][c]
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut out = CMatrix::zeros(2);
        for r in 0..2 {
            for c in 0..2 {
                out.set(r, c, self.0[r][c]);
            }
        }
        out
    }

    /// Frobenius distance to `other` after removing the relative global phase.
    pub fn distance_up_to_phase(&self, other: &Mat2) -> f64 {
        self.to_dense().distance_up_to_phase(&other.to_dense())
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, entry) in row.iter_mut().enumerate() {
                *entry = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        Mat2(out)
    }
}

/// Dense square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, ONE);
        }
        m
    }

    /// Builds a matrix from row-major entries. Panics if `data` is not square.
    pub fn from_rows(dim: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), dim * dim, "matrix data is not {dim}x{dim}");
        CMatrix { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.dim + c] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                out.set(c, r, self.get(r, c).conj());
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * n..(k + 1) * n];
                let dst = &mut out.data[r * n..(r + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        (0..self.dim)
            .map(|r| {
                self.data[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &CMatrix) -> CMatrix {
        let n = self.dim * rhs.dim;
        let mut out = Self::zeros(n);
        for ar in 0..self.dim {
            for ac in 0..self.dim {
                let a = self.get(ar, ac);
                if a == ZERO {
                    continue;
                }
                for br in 0..rhs.dim {
                    for bc in 0..rhs.dim {
                        out.set(ar * rhs.dim + br, ac * rhs.dim + bc, a * rhs.get(br, bc));
                    }
                }
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &CMatrix) -> CMatrix {
        self.add(&rhs.scale(-ONE))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius distance, an upper bound on the operator-norm distance.
    pub fn distance(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Distance after aligning the global phase of `other` to `self` on the
    /// entry of largest modulus in `other`.
    pub fn distance_up_to_phase(&self, other: &CMatrix) -> f64 {
        let (k, pivot) = other
            .data
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .map(|(k, v)| (k, *v))
            .unwrap_or((0, ZERO));
        if pivot == ZERO {
            return self.distance(other);
        }
        let ratio = self.data[k] / pivot;
        let phase = if ratio.norm() > 0.0 {
            ratio / ratio.norm()
        } else {
            ONE
        };
        self.distance(&other.scale(phase))
    }

    /// Distance of `self · self†` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        self.matmul(&self.adjoint()).distance(&Self::identity(self.dim))
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.distance(&self.adjoint())
    }
}

/// Lifts a 2×2 operator on `qubit` of an `n`-qubit register to the full space.
///
/// Qubit 0 is the most significant bit of the basis index.
pub fn embed_one(n: usize, qubit: usize, u: &Mat2) -> CMatrix {
    let dim = 1usize << n;
    let bit = 1usize << (n - 1 - qubit);
    let mut out = CMatrix::zeros(dim);
    for r in 0..dim {
        let rb = usize::from(r & bit != 0);
        for cb in 0..2 {
            let c = if cb == 1 { r | bit } else { r & !bit };
            let v = u.get(rb, cb);
            if v != ZERO {
                out.set(r, c, v);
            }
        }
    }
    out
}
