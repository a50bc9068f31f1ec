//! Two-qubit quantum-information primitives and the measurement optimizer.
//!
//! Basis ordering is `|a b⟩ ↦ 2a + b`: qubit A is the first tensor factor.
//! Measurements act on qubit B only, with rank-1 projectors `(I ± n·σ)/2`.
//! All entropies are in bits.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, pauli, CMatrix};
use crate::simplex::{nelder_mead, NelderMeadOptions};

/// Entrywise Hermiticity and trace tolerance used by validation.
pub const VALIDATION_TOL: f64 = 1e-12;
/// Eigenvalues in `[-EIGEN_CLAMP, 0)` are treated as rounding noise.
pub const EIGEN_CLAMP: f64 = 1e-10;
/// Outcomes with probability at or below this are recorded as null.
pub const NULL_PROBABILITY: f64 = 1e-12;
/// Slack allowed below zero before a correlation is clamped.
pub const CLAMP_TOL: f64 = 1e-9;

/// A validated density operator on one (dim 2) or two (dim 4) qubits.
#[derive(Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    /// Validates `m` as a density matrix.
    ///
    /// Hermiticity defects up to [`VALIDATION_TOL`] are removed by taking the
    /// Hermitian part; larger ones are rejected.
    pub fn new(m: CMatrix) -> Result<Self> {
        let dim = m.dim();
        if dim != 2 && dim != 4 {
            return Err(Error::InvalidDimension(dim));
        }
        let defect = m.hermitian_defect();
        if !(defect <= VALIDATION_TOL) {
            return Err(Error::NotHermitian { defect });
        }
        let m = m.hermitian_part();
        let trace = m.trace().re;
        if !((trace - 1.0).abs() <= VALIDATION_TOL) {
            return Err(Error::TraceNotOne { trace });
        }
        let eig = hermitian_eigenvalues(&m).map_err(|e| Error::EigenNoConvergence(e.off_diagonal))?;
        if eig.min() < -EIGEN_CLAMP {
            return Err(Error::NotPositive {
                eigenvalue: eig.min(),
            });
        }
        Ok(DensityMatrix { m })
    }

    /// Wraps an operator already known to be a density matrix, up to rounding.
    pub(crate) fn new_unchecked(m: CMatrix) -> Self {
        DensityMatrix {
            m: m.hermitian_part(),
        }
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim != 2 && dim != 4 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(DensityMatrix {
            m: CMatrix::identity(dim).scale_real(1.0 / dim as f64),
        })
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) state vector of length 2 or 4.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm == 0.0 {
            return Err(Error::TraceNotOne { trace: 0.0 });
        }
        let dim = psi.len();
        if dim != 2 && dim != 4 {
            return Err(Error::InvalidDimension(dim));
        }
        Self::new(CMatrix::from_fn(dim, |i, j| psi[i] * psi[j].conj() / norm))
    }

    /// `(|00⟩ + |11⟩)/√2`.
    pub fn bell_phi_plus() -> Self {
        let h = Complex64::new(0.5, 0.0);
        let z = Complex64::new(0.0, 0.0);
        DensityMatrix {
            m: CMatrix::from_fn(4, |i, j| if (i == 0 || i == 3) && (j == 0 || j == 3) { h } else { z }),
        }
    }

    /// `ρ_A ⊗ ρ_B`; both factors must be single-qubit states.
    pub fn product(a: &DensityMatrix, b: &DensityMatrix) -> Result<Self> {
        if a.dim() != 2 || b.dim() != 2 {
            return Err(Error::InvalidDimension(a.dim().max(b.dim()) * 2));
        }
        Ok(DensityMatrix {
            m: a.m.kron(&b.m),
        })
    }

    /// Single-qubit state with Bloch vector `r`, `|r| ≤ 1`.
    pub fn qubit(r: [f64; 3]) -> Result<Self> {
        let [sx, sy, sz] = pauli();
        let m = (CMatrix::identity(2) + sx.scale_real(r[0]) + sy.scale_real(r[1]) + sz.scale_real(r[2]))
            .scale_real(0.5);
        Self::new(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    #[inline]
    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    /// Eigenvalues, ascending, with `[-EIGEN_CLAMP, 0)` clamped to zero.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let eig = hermitian_eigenvalues(&self.m).map_err(|e| Error::EigenNoConvergence(e.off_diagonal))?;
        eig.as_slice()
            .iter()
            .map(|&l| {
                if l < -EIGEN_CLAMP {
                    Err(Error::NotPositive { eigenvalue: l })
                } else {
                    Ok(l.max(0.0))
                }
            })
            .collect()
    }

    /// `U ρ U†` for a unitary `u` of matching dimension.
    pub fn conjugate_by(&self, u: &CMatrix) -> Self {
        DensityMatrix::new_unchecked(&(u * &self.m) * &u.adjoint())
    }
}

impl fmt::Debug for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DensityMatrix {:?}", self.m)
    }
}

/// `-Σ λ log₂ λ` over a spectrum, with `0 log 0 = 0`.
pub fn shannon_bits(spectrum: &[f64]) -> f64 {
    let s: f64 = spectrum
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| -l * l.log2())
        .sum();
    s.max(0.0)
}

/// Binary entropy `H(q)` in bits.
pub fn binary_entropy(q: f64) -> f64 {
    shannon_bits(&[q, 1.0 - q])
}

pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    Ok(shannon_bits(&rho.spectrum()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

/// Reduced state of the kept qubit of a two-qubit state.
pub fn partial_trace(rho: &DensityMatrix, keep: Subsystem) -> Result<DensityMatrix> {
    if rho.dim() != 4 {
        return Err(Error::InvalidDimension(rho.dim()));
    }
    let m = rho.matrix();
    let reduced = CMatrix::from_fn(2, |i, j| match keep {
        Subsystem::A => m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)],
        Subsystem::B => m[(i, j)] + m[(2 + i, 2 + j)],
    });
    Ok(DensityMatrix::new_unchecked(reduced))
}

/// A measurement axis on the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochDirection {
    theta: f64,
    phi: f64,
}

impl BlochDirection {
    pub const Z: BlochDirection = BlochDirection { theta: 0.0, phi: 0.0 };
    pub const X: BlochDirection = BlochDirection {
        theta: FRAC_PI_2,
        phi: 0.0,
    };
    pub const Y: BlochDirection = BlochDirection {
        theta: FRAC_PI_2,
        phi: FRAC_PI_2,
    };

    /// `theta ∈ [0, π]`, `phi ∈ [0, 2π)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) || !(0.0..TAU).contains(&phi) {
            return Err(Error::InvalidDirection { theta, phi });
        }
        Ok(BlochDirection { theta, phi })
    }

    /// Maps arbitrary finite angles onto the same axis in canonical range.
    pub fn wrapped(theta: f64, phi: f64) -> Self {
        let mut t = theta.rem_euclid(TAU);
        let mut p = phi;
        if t > PI {
            t = TAU - t;
            p += PI;
        }
        let mut p = p.rem_euclid(TAU);
        if p >= TAU {
            p = 0.0;
        }
        BlochDirection { theta: t, phi: p }
    }

    pub fn from_vector(n: [f64; 3]) -> Self {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let theta = (n[2] / norm).clamp(-1.0, 1.0).acos();
        Self::wrapped(theta, n[1].atan2(n[0]))
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    pub fn antipode(&self) -> Self {
        Self::wrapped(PI - self.theta, self.phi + PI)
    }
}

/// `(I ± n·σ)/2`, in the order `[+, −]`.
pub fn measurement_projectors(dir: &BlochDirection) -> [CMatrix; 2] {
    projectors_for(dir.unit_vector())
}

fn projectors_for(n: [f64; 3]) -> [CMatrix; 2] {
    let [sx, sy, sz] = pauli();
    let ns = sx.scale_real(n[0]) + sy.scale_real(n[1]) + sz.scale_real(n[2]);
    let id = CMatrix::identity(2);
    [(id + ns).scale_real(0.5), (id - ns).scale_real(0.5)]
}

/// One measurement outcome; `state` is `None` when the outcome has
/// (numerically) zero probability.
#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub probability: f64,
    pub state: Option<DensityMatrix>,
}

/// Post-measurement ensemble `{p_k, ρ_k}` for outcomes `[+, −]`.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalEnsemble {
    pub outcomes: [Outcome; 2],
}

impl ConditionalEnsemble {
    /// `Σ p_k S(ρ_k)`; null outcomes contribute zero.
    pub fn entropy(&self) -> Result<f64> {
        let mut total = 0.0;
        for o in &self.outcomes {
            if let Some(state) = &o.state {
                total += o.probability * von_neumann_entropy(state)?;
            }
        }
        Ok(total)
    }
}

/// Projective measurement of qubit B along `dir`.
pub fn measure_b(rho: &DensityMatrix, dir: &BlochDirection) -> Result<ConditionalEnsemble> {
    measure_b_along(rho, dir.unit_vector())
}

fn measure_b_along(rho: &DensityMatrix, n: [f64; 3]) -> Result<ConditionalEnsemble> {
    if rho.dim() != 4 {
        return Err(Error::InvalidDimension(rho.dim()));
    }
    let id = CMatrix::identity(2);
    let outcomes = projectors_for(n).map(|proj| {
        let lifted = id.kron(&proj);
        let post = &(&lifted * rho.matrix()) * &lifted;
        let probability = post.trace().re.max(0.0);
        let state = (probability > NULL_PROBABILITY)
            .then(|| DensityMatrix::new_unchecked(post.scale_real(1.0 / probability)));
        Outcome { probability, state }
    });
    Ok(ConditionalEnsemble { outcomes })
}

/// Measured conditional entropy `S(ρ | {Π_k})` in bits.
pub fn conditional_entropy(rho: &DensityMatrix, dir: &BlochDirection) -> Result<f64> {
    measure_b(rho, dir)?.entropy()
}

/// Settings for [`minimize_conditional_entropy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Grid points in θ over `[0, π/2]`, endpoints included.
    pub theta_points: usize,
    /// Grid points in φ over `[0, 2π)`.
    pub phi_points: usize,
    /// Number of best grid points refined by simplex descent.
    pub starts: usize,
    /// Value tolerance of the refinement.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            theta_points: 33,
            phi_points: 64,
            starts: 3,
            tol: 1e-8,
            max_iterations: 400,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_points < 4 || self.phi_points < 4 {
            return Err(Error::ConfigInvalid(format!(
                "grid {}x{} is below 4 points per axis",
                self.theta_points, self.phi_points
            )));
        }
        if self.starts == 0 {
            return Err(Error::ConfigInvalid("at least one refinement start is required".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::ConfigInvalid(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

impl fmt::Display for OptimizerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "grid={}x{} starts={} tol={:e} max_iter={}",
            self.theta_points, self.phi_points, self.starts, self.tol, self.max_iterations
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizationResult {
    /// The optimization term `min S(ρ | {Π_k})`, in bits.
    pub c_min: f64,
    pub argmin: BlochDirection,
    pub evaluations: usize,
}

/// Minimizes the measured conditional entropy over measurement axes on B.
///
/// A coarse grid over the upper hemisphere (antipodal axes give the same
/// ensemble with outcomes swapped) seeds Nelder–Mead refinements from the
/// best `cfg.starts` grid points.
pub fn minimize_conditional_entropy(rho: &DensityMatrix, cfg: &OptimizerConfig) -> Result<OptimizationResult> {
    cfg.validate()?;
    if rho.dim() != 4 {
        return Err(Error::InvalidDimension(rho.dim()));
    }
    let objective = |theta: f64, phi: f64| -> Result<f64> {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        measure_b_along(rho, [st * cp, st * sp, ct])?.entropy()
    };

    let d_theta = FRAC_PI_2 / (cfg.theta_points - 1) as f64;
    let d_phi = TAU / cfg.phi_points as f64;
    let mut grid = Vec::with_capacity(cfg.theta_points * cfg.phi_points);
    for i in 0..cfg.theta_points {
        let theta = i as f64 * d_theta;
        for j in 0..cfg.phi_points {
            let phi = j as f64 * d_phi;
            grid.push((objective(theta, phi)?, theta, phi));
        }
    }
    let mut evaluations = grid.len();
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (mut best, mut best_theta, mut best_phi) = grid[0];
    let opts = NelderMeadOptions {
        initial_step: [d_theta, d_phi],
        f_tol: cfg.tol,
        x_tol: 1e-9,
        max_iterations: cfg.max_iterations,
    };
    for &(_, theta0, phi0) in grid.iter().take(cfg.starts) {
        let mut err = None;
        let res = nelder_mead(
            |p| match objective(p[0], p[1]) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::INFINITY
                }
            },
            [theta0, phi0],
            &opts,
        );
        if let Some(e) = err {
            return Err(e);
        }
        evaluations += res.evaluations;
        if res.value < best {
            best = res.value;
            best_theta = res.point[0];
            best_phi = res.point[1];
        }
    }
    Ok(OptimizationResult {
        c_min: best.max(0.0),
        argmin: BlochDirection::wrapped(best_theta, best_phi),
        evaluations,
    })
}

/// `I = S(ρ_A) + S(ρ_B) − S(ρ_AB)`.
pub fn mutual_information(rho: &DensityMatrix) -> Result<f64> {
    let sa = von_neumann_entropy(&partial_trace(rho, Subsystem::A)?)?;
    let sb = von_neumann_entropy(&partial_trace(rho, Subsystem::B)?)?;
    let sab = von_neumann_entropy(rho)?;
    Ok(clamp_small_negative(sa + sb - sab))
}

/// `C = S(ρ_A) − c(ρ)`.
pub fn classical_correlation(rho: &DensityMatrix, cfg: &OptimizerConfig) -> Result<f64> {
    let sa = von_neumann_entropy(&partial_trace(rho, Subsystem::A)?)?;
    let c = minimize_conditional_entropy(rho, cfg)?;
    Ok(clamp_small_negative(sa - c.c_min))
}

/// `Q = S(ρ_B) − S(ρ_AB) + c(ρ)`.
pub fn quantum_discord(rho: &DensityMatrix, cfg: &OptimizerConfig) -> Result<f64> {
    Ok(DiscordBreakdown::compute(rho, cfg)?.discord)
}

/// Every term entering the discord of one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscordBreakdown {
    pub entropy_a: f64,
    pub entropy_b: f64,
    pub entropy_ab: f64,
    pub optimization: OptimizationResult,
    pub mutual_information: f64,
    pub classical_correlation: f64,
    /// Before clamping.
    pub raw_discord: f64,
    pub discord: f64,
}

impl DiscordBreakdown {
    pub fn compute(rho: &DensityMatrix, cfg: &OptimizerConfig) -> Result<Self> {
        let entropy_a = von_neumann_entropy(&partial_trace(rho, Subsystem::A)?)?;
        let entropy_b = von_neumann_entropy(&partial_trace(rho, Subsystem::B)?)?;
        let entropy_ab = von_neumann_entropy(rho)?;
        let optimization = minimize_conditional_entropy(rho, cfg)?;
        let raw_discord = entropy_b - entropy_ab + optimization.c_min;
        Ok(DiscordBreakdown {
            entropy_a,
            entropy_b,
            entropy_ab,
            optimization,
            mutual_information: clamp_small_negative(entropy_a + entropy_b - entropy_ab),
            classical_correlation: clamp_small_negative(entropy_a - optimization.c_min),
            raw_discord,
            discord: clamp_small_negative(raw_discord),
        })
    }
}

fn clamp_small_negative(v: f64) -> f64 {
    if (-CLAMP_TOL..0.0).contains(&v) {
        0.0
    } else {
        v
    }
}

/// Writes a state record: a `dim` line followed by one `re im` line per entry,
/// row-major, 17 significant digits.
pub fn write_state<W: Write>(mut w: W, m: &CMatrix) -> std::io::Result<()> {
    writeln!(w, "dim {}", m.dim())?;
    for z in m.row_major() {
        writeln!(w, "{:.16e} {:.16e}", z.re, z.im)?;
    }
    Ok(())
}

/// Reads a record written by [`write_state`]; blank lines and `#` comments
/// are ignored. Returns the raw matrix; validate with [`DensityMatrix::new`].
pub fn read_state<R: BufRead>(r: R) -> Result<CMatrix> {
    let mut dim = None;
    let mut entries = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        match (dim, fields.next()) {
            (None, Some("dim")) => {
                let d: usize = fields
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(lineno, "expected `dim <n>`"))?;
                if d != 2 && d != 4 {
                    return Err(Error::InvalidDimension(d));
                }
                dim = Some(d);
            }
            (None, _) => return Err(Error::parse(lineno, "state record must start with `dim`")),
            (Some(_), Some(re)) => {
                let im = fields
                    .next()
                    .ok_or_else(|| Error::parse(lineno, "expected `re im`"))?;
                let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(lineno, e.to_string()));
                entries.push(Complex64::new(parse(re)?, parse(im)?));
            }
            (Some(_), None) => unreachable!(),
        }
    }
    let dim = dim.ok_or_else(|| Error::parse(0, "missing `dim` line"))?;
    if entries.len() != dim * dim {
        return Err(Error::parse(0, format!("expected {} entries, found {}", dim * dim, entries.len())));
    }
    Ok(CMatrix::from_row_major(&entries).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn classical_mixture() -> DensityMatrix {
        DensityMatrix::new(CMatrix::from_real_diagonal(&[0.5, 0.0, 0.0, 0.5])).unwrap()
    }

    fn random_qubit(rng: &mut impl Rng) -> DensityMatrix {
        let r: f64 = rng.random::<f64>().cbrt();
        let d = BlochDirection::wrapped(rng.random::<f64>() * PI, rng.random::<f64>() * TAU);
        let n = d.unit_vector();
        DensityMatrix::qubit([r * n[0], r * n[1], r * n[2]]).unwrap()
    }

    #[test]
    fn validation_accepts_maximally_mixed() {
        let m = CMatrix::identity(4).scale_real(0.25);
        assert!(DensityMatrix::new(m).is_ok());
    }

    #[test]
    fn validation_rejects_wrong_trace() {
        let m = CMatrix::from_real_diagonal(&[0.5, 0.6, 0.0, 0.0]);
        assert!(matches!(DensityMatrix::new(m), Err(Error::TraceNotOne { .. })));
    }

    #[test]
    fn validation_rejects_negative_eigenvalue() {
        let m = CMatrix::from_real_diagonal(&[1.1, -0.1, 0.0, 0.0]);
        match DensityMatrix::new(m) {
            Err(Error::NotPositive { eigenvalue }) => assert_abs_diff_eq!(eigenvalue, -0.1, epsilon = 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_non_hermitian_and_bad_dimension() {
        let mut m = CMatrix::identity(4).scale_real(0.25);
        m[(0, 1)] = c(1e-6);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotHermitian { .. })));
        assert!(matches!(
            DensityMatrix::new(CMatrix::identity(3).scale_real(1.0 / 3.0)),
            Err(Error::InvalidDimension(3))
        ));
    }

    #[test]
    fn validation_symmetrizes_tiny_defects() {
        let mut m = CMatrix::identity(4).scale_real(0.25);
        m[(0, 1)] = c(1e-13);
        let rho = DensityMatrix::new(m).unwrap();
        assert_eq!(rho.matrix()[(0, 1)], rho.matrix()[(1, 0)].conj());
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(
            von_neumann_entropy(&DensityMatrix::maximally_mixed(4).unwrap()).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        let zero = DensityMatrix::pure(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert_eq!(von_neumann_entropy(&zero).unwrap(), 0.0);
        let half = DensityMatrix::new(CMatrix::from_real_diagonal(&[0.5, 0.5, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(von_neumann_entropy(&half).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn entropy_clamps_rounding_noise() {
        let m = CMatrix::from_real_diagonal(&[1.0 + 5e-11, -5e-11]);
        let rho = DensityMatrix::new_unchecked(m);
        assert_eq!(rho.spectrum().unwrap()[0], 0.0);
        let bad = DensityMatrix::new_unchecked(CMatrix::from_real_diagonal(&[1.0 + 1e-9, -1e-9]));
        assert!(matches!(von_neumann_entropy(&bad), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn partial_trace_of_product_and_bell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_qubit(&mut rng);
        let b = random_qubit(&mut rng);
        let ab = DensityMatrix::product(&a, &b).unwrap();
        let ra = partial_trace(&ab, Subsystem::A).unwrap();
        let rb = partial_trace(&ab, Subsystem::B).unwrap();
        assert!((*ra.matrix() - *a.matrix()).max_abs() < 1e-15);
        assert!((*rb.matrix() - *b.matrix()).max_abs() < 1e-15);

        let bell = DensityMatrix::bell_phi_plus();
        let rb = partial_trace(&bell, Subsystem::B).unwrap();
        assert!((*rb.matrix() - CMatrix::identity(2).scale_real(0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn partial_trace_requires_two_qubits() {
        let q = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(partial_trace(&q, Subsystem::A).is_err());
    }

    #[test]
    fn projector_examples() {
        let [p, m] = measurement_projectors(&BlochDirection::Z);
        assert!((p - CMatrix::from_real_diagonal(&[1.0, 0.0])).max_abs() < 1e-15);
        assert!((m - CMatrix::from_real_diagonal(&[0.0, 1.0])).max_abs() < 1e-15);
        let [p, _] = measurement_projectors(&BlochDirection::X);
        let expect = CMatrix::from_fn(2, |_, _| c(0.5));
        assert!((p - expect).max_abs() < 1e-15);
    }

    #[test]
    fn measuring_maximally_mixed_along_z() {
        let rho = DensityMatrix::maximally_mixed(4).unwrap();
        let ens = measure_b(&rho, &BlochDirection::Z).unwrap();
        for (k, o) in ens.outcomes.iter().enumerate() {
            assert_abs_diff_eq!(o.probability, 0.5, epsilon = 1e-15);
            let mut ket = [0.0; 2];
            ket[k] = 1.0;
            let expect = CMatrix::identity(2)
                .scale_real(0.5)
                .kron(&CMatrix::from_real_diagonal(&ket));
            assert!((*o.state.unwrap().matrix() - expect).max_abs() < 1e-15);
        }
        assert_abs_diff_eq!(
            conditional_entropy(&rho, &BlochDirection::Z).unwrap(),
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn null_outcome_is_flagged() {
        let rho = DensityMatrix::pure(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        let ens = measure_b(&rho, &BlochDirection::Z).unwrap();
        assert_abs_diff_eq!(ens.outcomes[0].probability, 1.0, epsilon = 1e-15);
        assert_eq!(ens.outcomes[1].probability, 0.0);
        assert!(ens.outcomes[1].state.is_none());
        assert_eq!(ens.entropy().unwrap(), 0.0);
    }

    #[test]
    fn bell_conditional_entropy_vanishes_on_a_direction_grid() {
        let bell = DensityMatrix::bell_phi_plus();
        for i in 0..=8 {
            for j in 0..16 {
                let d = BlochDirection::new(i as f64 * PI / 8.0, j as f64 * TAU / 16.0).unwrap();
                assert_abs_diff_eq!(conditional_entropy(&bell, &d).unwrap(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn product_conditional_entropy_is_entropy_of_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_qubit(&mut rng);
        let b = random_qubit(&mut rng);
        let ab = DensityMatrix::product(&a, &b).unwrap();
        let sa = von_neumann_entropy(&a).unwrap();
        for _ in 0..20 {
            let d = BlochDirection::wrapped(rng.random::<f64>() * PI, rng.random::<f64>() * TAU);
            assert_abs_diff_eq!(conditional_entropy(&ab, &d).unwrap(), sa, epsilon = 1e-9);
        }
    }

    #[test]
    fn optimizer_examples() {
        let cfg = OptimizerConfig::default();
        let bell = minimize_conditional_entropy(&DensityMatrix::bell_phi_plus(), &cfg).unwrap();
        assert_abs_diff_eq!(bell.c_min, 0.0, epsilon = 1e-6);
        let mixed = minimize_conditional_entropy(&DensityMatrix::maximally_mixed(4).unwrap(), &cfg).unwrap();
        assert_abs_diff_eq!(mixed.c_min, 1.0, epsilon = 1e-9);
        assert!(mixed.evaluations >= 33 * 64);
    }

    #[test]
    fn optimizer_rejects_tiny_grid() {
        let cfg = OptimizerConfig {
            theta_points: 3,
            ..OptimizerConfig::default()
        };
        let r = minimize_conditional_entropy(&DensityMatrix::bell_phi_plus(), &cfg);
        assert!(matches!(r, Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn correlation_examples() {
        let cfg = OptimizerConfig::default();
        let bell = DensityMatrix::bell_phi_plus();
        assert_abs_diff_eq!(mutual_information(&bell).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(classical_correlation(&bell, &cfg).unwrap(), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(quantum_discord(&bell, &cfg).unwrap(), 1.0, epsilon = 1e-6);

        let mixed = DensityMatrix::maximally_mixed(4).unwrap();
        assert_abs_diff_eq!(mutual_information(&mixed).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(classical_correlation(&mixed, &cfg).unwrap(), 0.0, epsilon = 1e-9);

        let cq = classical_mixture();
        assert_abs_diff_eq!(quantum_discord(&cq, &cfg).unwrap(), 0.0, epsilon = 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prod = DensityMatrix::product(&random_qubit(&mut rng), &random_qubit(&mut rng)).unwrap();
        assert_abs_diff_eq!(mutual_information(&prod).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(classical_correlation(&prod, &cfg).unwrap(), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(quantum_discord(&prod, &cfg).unwrap(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn direction_wrapping() {
        let d = BlochDirection::wrapped(-0.3, 7.0);
        let e = BlochDirection::wrapped(0.3, 7.0 + PI);
        for (a, b) in d.unit_vector().iter().zip(e.unit_vector()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(BlochDirection::new(4.0, 0.0).is_err());
        assert!(BlochDirection::new(1.0, TAU).is_err());
        let v = BlochDirection::from_vector([0.0, -2.0, 0.0]).unit_vector();
        assert_abs_diff_eq!(v[1], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn state_record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = DensityMatrix::product(&random_qubit(&mut rng), &random_qubit(&mut rng)).unwrap();
        let mut buf = Vec::new();
        write_state(&mut buf, rho.matrix()).unwrap();
        let back = read_state(buf.as_slice()).unwrap();
        assert_eq!(back, *rho.matrix());
    }

    #[test]
    fn state_record_errors() {
        assert!(read_state("0.5 0\n".as_bytes()).is_err());
        assert!(read_state("dim 2\n0.5 0\n".as_bytes()).is_err());
        assert!(matches!(read_state("dim 3\n".as_bytes()), Err(Error::InvalidDimension(3))));
    }
}
