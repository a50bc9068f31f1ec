//! X-states: construction from seven real parameters, closed-form
//! conditional entropies at candidate measurement axes, and the one-parameter
//! example family `ρ(a)` with its analytic optimization term.
//!
//! For an X-state with diagonal `(ρ11, ρ22, ρ33, ρ44)` and coherences
//! `ρ14`, `ρ23`, measuring qubit B along `z` leaves A in the diagonal states
//! `diag(ρ11, ρ33)` and `diag(ρ22, ρ44)`. Measuring along the equatorial axis
//! `(cos φ, sin φ, 0)` gives two equiprobable conditional states with Bloch
//! length
//!
//! ```text
//! θ(φ) = sqrt((ρ11 + ρ22 − ρ33 − ρ44)² + 4 |ρ14 e^{iφ} + ρ23 e^{−iφ}|²)
//! ```
//!
//! so every candidate is a binary entropy `S′(θ) = H((1 − θ)/2)`.

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::quantum::{binary_entropy, BlochDirection, DensityMatrix};

/// Slack allowed on the parameter inequalities.
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// `x = (ρ11, ρ22, ρ33, Re ρ14, Im ρ14, Re ρ23, Im ρ23)`, `ρ44 = 1 − x1 − x2 − x3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XStateParams {
    x: [f64; 7],
}

impl XStateParams {
    pub const DIM: usize = 7;

    pub fn new(x: [f64; 7]) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConstraintViolated("parameters must be finite".into()));
        }
        let p = XStateParams { x };
        for (name, v) in [("rho11", p.rho11()), ("rho22", p.rho22()), ("rho33", p.rho33()), ("rho44", p.rho44())] {
            if v < -CONSTRAINT_TOL {
                return Err(Error::ConstraintViolated(format!("{name} = {v} is negative")));
            }
        }
        let c14 = p.rho11() * p.rho44() - p.rho14().norm_sqr();
        if c14 < -CONSTRAINT_TOL {
            return Err(Error::ConstraintViolated(format!(
                "|rho14|^2 <= rho11*rho44 fails by {:e}",
                -c14
            )));
        }
        let c23 = p.rho22() * p.rho33() - p.rho23().norm_sqr();
        if c23 < -CONSTRAINT_TOL {
            return Err(Error::ConstraintViolated(format!(
                "|rho23|^2 <= rho22*rho33 fails by {:e}",
                -c23
            )));
        }
        Ok(p)
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let arr: [f64; 7] = x
            .try_into()
            .map_err(|_| Error::ShapeMismatch(format!("X-state needs 7 parameters, got {}", x.len())))?;
        Self::new(arr)
    }

    /// Reads the parameters off a matrix with X-shaped support.
    pub fn from_matrix(m: &CMatrix) -> Result<Self> {
        if m.dim() != 4 {
            return Err(Error::InvalidDimension(m.dim()));
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j && i + j != 3 && m[(i, j)].norm() > CONSTRAINT_TOL {
                    return Err(Error::ConstraintViolated(format!(
                        "entry ({},{}) lies outside the X pattern",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Self::new([
            m[(0, 0)].re,
            m[(1, 1)].re,
            m[(2, 2)].re,
            m[(0, 3)].re,
            m[(0, 3)].im,
            m[(1, 2)].re,
            m[(1, 2)].im,
        ])
    }

    pub fn as_array(&self) -> &[f64; 7] {
        &self.x
    }

    pub fn rho11(&self) -> f64 {
        self.x[0]
    }
    pub fn rho22(&self) -> f64 {
        self.x[1]
    }
    pub fn rho33(&self) -> f64 {
        self.x[2]
    }
    pub fn rho44(&self) -> f64 {
        1.0 - self.x[0] - self.x[1] - self.x[2]
    }
    pub fn rho14(&self) -> Complex64 {
        Complex64::new(self.x[3], self.x[4])
    }
    pub fn rho23(&self) -> Complex64 {
        Complex64::new(self.x[5], self.x[6])
    }

    pub fn to_matrix(&self) -> CMatrix {
        let mut m = CMatrix::from_real_diagonal(&[self.rho11(), self.rho22(), self.rho33(), self.rho44()]);
        m[(0, 3)] = self.rho14();
        m[(3, 0)] = self.rho14().conj();
        m[(1, 2)] = self.rho23();
        m[(2, 1)] = self.rho23().conj();
        m
    }
}

pub fn xstate_from_params(p: &XStateParams) -> Result<DensityMatrix> {
    DensityMatrix::new(p.to_matrix())
}

/// `S′(θ) = −((1−θ)/2) log₂((1−θ)/2) − ((1+θ)/2) log₂((1+θ)/2)`.
pub fn binary_entropy_of_length(theta: f64) -> f64 {
    binary_entropy((1.0 - theta.clamp(0.0, 1.0)) / 2.0)
}

/// Conditional entropies at the candidate axes, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSet {
    pub s_z: f64,
    pub s_x: f64,
    pub s_y: f64,
    /// Equatorial axis aligned with the coherence phases; it maximizes the
    /// conditional Bloch length among equatorial axes.
    pub s_equator: f64,
    pub equator_axis: BlochDirection,
}

impl CandidateSet {
    pub fn min(&self) -> f64 {
        self.s_z.min(self.s_x).min(self.s_y).min(self.s_equator)
    }
}

pub fn pauli_candidates(p: &XStateParams) -> CandidateSet {
    let (r11, r22, r33, r44) = (p.rho11(), p.rho22(), p.rho33(), p.rho44());
    let split = |top: f64, bottom: f64| {
        let w = top + bottom;
        if w > 0.0 {
            w * binary_entropy(top / w)
        } else {
            0.0
        }
    };
    let s_z = split(r11, r33) + split(r22, r44);

    let bias = r11 + r22 - r33 - r44;
    let equatorial = |coherence: f64| binary_entropy_of_length((bias * bias + 4.0 * coherence * coherence).sqrt());
    let (z14, z23) = (p.rho14(), p.rho23());
    let s_x = equatorial((z14 + z23).norm());
    let s_y = equatorial((z14 - z23).norm());
    // |ρ14 e^{iφ} + ρ23 e^{−iφ}| peaks at φ = (arg ρ23 − arg ρ14)/2.
    let phi = if z14.norm() > 0.0 && z23.norm() > 0.0 {
        (z23.arg() - z14.arg()) / 2.0
    } else {
        0.0
    };
    let s_equator = equatorial(z14.norm() + z23.norm());
    CandidateSet {
        s_z,
        s_x,
        s_y,
        s_equator,
        equator_axis: BlochDirection::wrapped(FRAC_PI_2, phi.rem_euclid(TAU)),
    }
}

/// Smallest closed-form candidate. An upper bound on the optimization term,
/// exact whenever the optimum lies at `z` or on the equator.
pub fn analytic_c(p: &XStateParams) -> f64 {
    pauli_candidates(p).min()
}

/// The one-parameter example family, entries verbatim. Its trace is
/// `1 + 0.2a`, so only `a = 0` gives a normalized state.
pub fn example_state(a: f64) -> CMatrix {
    let mut m = CMatrix::from_real_diagonal(&[0.35 - 0.35 * a, 0.25 + 0.25 * a, 0.2 + 0.5 * a, 0.2 - 0.2 * a]);
    let c14 = Complex64::new(-0.2 + 0.2 * a, 0.0);
    let c23 = Complex64::new(-0.15 + 0.6 * a, 0.0);
    m[(0, 3)] = c14;
    m[(3, 0)] = c14;
    m[(1, 2)] = c23;
    m[(2, 1)] = c23;
    m
}

/// `example_state(a)` divided by its trace.
pub fn normalized_example_state(a: f64) -> Result<DensityMatrix> {
    let m = example_state(a);
    let tr = m.trace().re;
    if !(tr > 0.0) {
        return Err(Error::DomainError(format!("trace {tr} at a = {a}")));
    }
    DensityMatrix::new(m.scale_real(1.0 / tr))
}

/// The closed-form curves of the example family at one value of `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleCurves {
    pub a: f64,
    /// `θ1..θ4`.
    pub theta: [f64; 4],
    /// `(0.55+0.15a) S′(θ1) + (0.45−0.15a) S′(θ2)`.
    pub z_curve: f64,
    /// `S′(θ3)`.
    pub x_curve: f64,
    /// `S′(θ4)`.
    pub y_curve: f64,
    pub min: f64,
}

const THETA_DOMAIN_TOL: f64 = 1e-12;

pub fn example_thetas(a: f64) -> Result<[f64; 4]> {
    let w1 = 0.55 + 0.15 * a;
    let w2 = 0.45 - 0.15 * a;
    if !(w1 > 0.0 && w2 > 0.0) {
        return Err(Error::DomainError(format!("outcome weights vanish at a = {a}")));
    }
    let theta = [
        ((0.15 - 0.85 * a).powi(2) / w1.powi(2)).sqrt(),
        ((0.05 + 0.25 * a).powi(2) / w2.powi(2)).sqrt(),
        ((0.1325 - 0.62 * a + 0.73 * a * a) / 0.25).sqrt(),
        ((0.0125 - 0.02 * a + 0.25 * a * a) / 0.25).sqrt(),
    ];
    if let Some((j, t)) = theta.iter().enumerate().find(|(_, t)| !(**t <= 1.0 + THETA_DOMAIN_TOL)) {
        return Err(Error::DomainError(format!("theta{} = {t} exceeds 1 at a = {a}", j + 1)));
    }
    Ok(theta)
}

pub fn example_analytic_c(a: f64) -> Result<ExampleCurves> {
    let theta = example_thetas(a)?;
    let s = theta.map(binary_entropy_of_length);
    let z_curve = (0.55 + 0.15 * a) * s[0] + (0.45 - 0.15 * a) * s[1];
    let x_curve = s[2];
    let y_curve = s[3];
    Ok(ExampleCurves {
        a,
        theta,
        z_curve,
        x_curve,
        y_curve,
        min: z_curve.min(x_curve).min(y_curve),
    })
}

/// Interval of `a` around 0 on which the normalized example state is
/// positive semidefinite, located by bisection on its smallest eigenvalue.
pub fn example_valid_interval() -> (f64, f64) {
    let valid = |a: f64| normalized_example_state(a).is_ok();
    let edge = |step: f64| {
        let mut inside = 0.0;
        let mut outside = step;
        while valid(outside) {
            inside = outside;
            outside += step;
            if outside.abs() > 100.0 {
                return outside;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if mid == inside || mid == outside {
                break;
            }
            if valid(mid) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    (edge(-0.01), edge(0.01))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{conditional_entropy, minimize_conditional_entropy, OptimizerConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn parameter_examples() {
        let mixed = xstate_from_params(&XStateParams::new([0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!((*mixed.matrix() - CMatrix::identity(4).scale_real(0.25)).max_abs() < 1e-16);

        let bell = xstate_from_params(&XStateParams::new([0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!((*bell.matrix() - *DensityMatrix::bell_phi_plus().matrix()).max_abs() < 1e-16);

        let err = XStateParams::new([0.25, 0.25, 0.25, 0.3, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolated(ref s) if s.contains("rho14")), "{err}");
        let err = XStateParams::new([0.1, 0.1, 0.1, 0.0, 0.0, 0.0, 0.2]).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolated(ref s) if s.contains("rho23")), "{err}");
        assert!(XStateParams::new([0.6, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let p = XStateParams::new([0.3, 0.2, 0.1, 0.1, -0.2, 0.05, 0.1]).unwrap();
        assert_eq!(XStateParams::from_matrix(&p.to_matrix()).unwrap(), p);
        let mut m = p.to_matrix();
        m[(0, 1)] = Complex64::new(0.01, 0.0);
        assert!(XStateParams::from_matrix(&m).is_err());
    }

    #[test]
    fn candidate_examples() {
        let bell = XStateParams::new([0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let c = pauli_candidates(&bell);
        for v in [c.s_z, c.s_x, c.s_y, c.s_equator] {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let mixed = XStateParams::new([0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let c = pauli_candidates(&mixed);
        for v in [c.s_z, c.s_x, c.s_y, c.s_equator] {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(analytic_c(&mixed), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn candidates_match_numeric_conditional_entropy() {
        let p = XStateParams::new([0.3, 0.2, 0.1, 0.1, -0.2, 0.05, 0.1]).unwrap();
        let rho = xstate_from_params(&p).unwrap();
        let c = pauli_candidates(&p);
        for (v, d) in [
            (c.s_z, BlochDirection::Z),
            (c.s_x, BlochDirection::X),
            (c.s_y, BlochDirection::Y),
            (c.s_equator, c.equator_axis),
        ] {
            assert_abs_diff_eq!(v, conditional_entropy(&rho, &d).unwrap(), epsilon = 1e-10);
        }
        assert!(c.s_equator <= c.s_x.min(c.s_y) + 1e-15);
    }

    #[test]
    fn example_state_entries() {
        let m = example_state(0.0);
        let diag: Vec<f64> = (0..4).map(|i| m[(i, i)].re).collect();
        assert_eq!(diag, vec![0.35, 0.25, 0.2, 0.2]);
        assert_eq!(m[(0, 3)].re, -0.2);
        assert_eq!(m[(1, 2)].re, -0.15);
        assert_abs_diff_eq!(m.trace().re, 1.0, epsilon = 1e-15);
        for a in [-0.05, 0.3, 0.9] {
            assert_abs_diff_eq!(example_state(a).trace().re, 1.0 + 0.2 * a, epsilon = 1e-15);
        }
    }

    #[test]
    fn example_thetas_at_zero() {
        let t = example_thetas(0.0).unwrap();
        assert_abs_diff_eq!(t[0], 0.15 / 0.55, epsilon = 1e-12);
        assert_abs_diff_eq!(t[0], 0.272727, epsilon = 1e-6);
        assert_abs_diff_eq!(binary_entropy_of_length(1.0), 0.0);
        assert_abs_diff_eq!(binary_entropy_of_length(0.0), 1.0);
    }

    #[test]
    fn example_curves_match_oracle_at_zero() {
        let curves = example_analytic_c(0.0).unwrap();
        let rho = normalized_example_state(0.0).unwrap();
        assert_abs_diff_eq!(curves.z_curve, conditional_entropy(&rho, &BlochDirection::Z).unwrap(), epsilon = 1e-10);
        assert_abs_diff_eq!(curves.x_curve, conditional_entropy(&rho, &BlochDirection::X).unwrap(), epsilon = 1e-10);
        assert_abs_diff_eq!(curves.y_curve, conditional_entropy(&rho, &BlochDirection::Y).unwrap(), epsilon = 1e-10);
        let oracle = minimize_conditional_entropy(&rho, &OptimizerConfig::default()).unwrap();
        assert_abs_diff_eq!(curves.min, oracle.c_min, epsilon = 1e-4);
    }

    #[test]
    fn example_domain_error() {
        assert!(matches!(example_analytic_c(4.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn valid_interval_matches_closed_form_roots() {
        // PSD of the X-state reduces to ρ22ρ33 ≥ ρ23² (lower edge) and
        // ρ11, ρ44 ≥ 0 (upper edge at a = 1).
        let (qa, qb, qc): (f64, f64, f64) = (0.125 - 0.36, 0.175 + 0.18, 0.05 - 0.0225);
        let lower = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        let (lo, hi) = example_valid_interval();
        assert_abs_diff_eq!(lo, lower, epsilon = 1e-6);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-6);
    }
}
