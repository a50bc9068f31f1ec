//! Small dense complex matrices (dimension 2 or 4) and a Hermitian eigensolver.
//!
//! Everything here is stack allocated. Two-qubit work never needs more than a
//! 4×4 operator, and the measurement optimizer evaluates thousands of them per
//! state, so heap traffic matters more than generality.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

/// Largest supported dimension.
pub const MAX_DIM: usize = 4;

/// Off-diagonal Frobenius norm, relative to the full norm, below which the
/// Jacobi sweeps stop.
pub const EIGEN_TOLERANCE: f64 = 1e-13;

const MAX_SWEEPS: usize = 64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A square complex matrix of dimension `dim ≤ 4`, stored row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: [Complex64; MAX_DIM * MAX_DIM],
}

impl CMatrix {
    /// # Panics
    ///
    /// If `dim` is zero or larger than [`MAX_DIM`].
    pub fn zeros(dim: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "unsupported matrix dimension {dim}"
        );
        CMatrix {
            dim,
            data: [ZERO; MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from row-major entries; `entries.len()` must be a
    /// supported square size.
    pub fn from_row_major(entries: &[Complex64]) -> Option<Self> {
        let dim = (1..=MAX_DIM).find(|d| d * d == entries.len())?;
        Some(Self::from_fn(dim, |i, j| entries[i * dim + j]))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.dim * self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.push(self[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut m = *self;
        for v in m.data.iter_mut() {
            *v *= s;
        }
        m
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Kronecker product `self ⊗ other`; the result must fit in [`MAX_DIM`].
    pub fn kron(&self, other: &CMatrix) -> Self {
        let (a, b) = (self.dim, other.dim);
        Self::from_fn(a * b, |i, j| self[(i / b, j / b)] * other[(i % b, j % b)])
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest `|m_ij − conj(m_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `(m + m†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let mut m = Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5);
        for i in 0..self.dim {
            m[(i, i)].im = 0.0;
        }
        m
    }

    fn frobenius_sq(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self[(i, j)].norm_sqr();
            }
        }
        s
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.dim && j < self.dim);
        &self.data[i * MAX_DIM + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.dim && j < self.dim);
        &mut self.data[i * MAX_DIM + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in product");
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Mul for CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: CMatrix) -> CMatrix {
        &self * &rhs
    }
}

impl Add for CMatrix {
    type Output = CMatrix;
    fn add(mut self, rhs: CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in sum");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for CMatrix {
    type Output = CMatrix;
    fn sub(mut self, rhs: CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in difference");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
        self
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}×{})", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  [")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, " {:+.6}{:+.6}i", z.re, z.im)?;
            }
            writeln!(f, " ]")?;
        }
        Ok(())
    }
}

/// The Pauli matrices σx, σy, σz.
pub fn pauli() -> [CMatrix; 3] {
    let i = Complex64::new(0.0, 1.0);
    let sx = CMatrix::from_fn(2, |r, c| if r != c { ONE } else { ZERO });
    let sy = CMatrix::from_fn(2, |r, c| match (r, c) {
        (0, 1) => -i,
        (1, 0) => i,
        _ => ZERO,
    });
    let sz = CMatrix::from_real_diagonal(&[1.0, -1.0]);
    [sx, sy, sz]
}

/// Returned when the Jacobi sweeps fail to converge; does not happen for
/// finite Hermitian input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoConvergence {
    pub off_diagonal: f64,
}

/// Eigenvalues of a Hermitian matrix, ascending.
///
/// Cyclic complex Jacobi: each rotation first removes the phase of the pivot
/// and then applies a real Givens rotation. Only the Hermitian part of `m` is
/// used.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Result<Eigenvalues, NoConvergence> {
    let n = m.dim();
    let mut a = m.hermitian_part();
    let scale = a.frobenius_sq().sqrt();
    if scale == 0.0 || n == 1 {
        return Ok(Eigenvalues::from_diagonal(&a));
    }
    let threshold = (EIGEN_TOLERANCE * scale).powi(2);
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_sq(&a);
        if off <= threshold {
            return Ok(Eigenvalues::from_diagonal(&a));
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                rotate(&mut a, p, q);
            }
        }
    }
    let off = off_diagonal_sq(&a);
    if off <= threshold {
        Ok(Eigenvalues::from_diagonal(&a))
    } else {
        Err(NoConvergence {
            off_diagonal: off.sqrt(),
        })
    }
}

fn off_diagonal_sq(a: &CMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s
}

fn rotate(a: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let phase = apq / mag; // e^{iφ}
    let theta = (aqq - app) / (2.0 * mag);
    let t = if theta >= 0.0 {
        1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        -1.0 / (-theta + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // G = diag(1, e^{-iφ}) · [[c, s], [-s, c]];  A ← G† A G
    let n = a.dim();
    let ph_conj = phase.conj();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)] * ph_conj;
        a[(k, p)] = akp * c - akq * s;
        a[(k, q)] = akp * s + akq * c;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)] * phase;
        a[(p, k)] = apk * c - aqk * s;
        a[(q, k)] = apk * s + aqk * c;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)].im = 0.0;
    a[(q, q)].im = 0.0;
}

/// Real spectrum of a Hermitian matrix, sorted ascending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalues {
    len: usize,
    values: [f64; MAX_DIM],
}

impl Eigenvalues {
    fn from_diagonal(a: &CMatrix) -> Self {
        let mut values = [0.0; MAX_DIM];
        for (i, v) in values.iter_mut().enumerate().take(a.dim()) {
            *v = a[(i, i)].re;
        }
        values[..a.dim()].sort_by(f64::total_cmp);
        Eigenvalues {
            len: a.dim(),
            values,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.len - 1]
    }
}
