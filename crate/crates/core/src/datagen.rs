//! Random X-states and real states, oracle labeling, and dataset files.
//!
//! Diagonals are uniform on the probability simplex (spacings of three sorted
//! uniforms). X-state coherences have modulus uniform on `[0, √(ρii ρjj)]`
//! and uniform phase, which already makes every draw positive semidefinite.
//! Real-state off-diagonals are uniform on `[−√(ρii ρjj), √(ρii ρjj)]` and
//! the draw is rejected when the assembled matrix has a negative eigenvalue.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{hermitian_eigenvalues, CMatrix};
use crate::quantum::{minimize_conditional_entropy, DensityMatrix, OptimizerConfig};
use crate::xstate::{XStateParams, CONSTRAINT_TOL};

pub const DEFAULT_MAX_REJECTIONS: usize = 10_000;

/// Which parametrized state family a parameter vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    XState,
    Real,
}

impl Family {
    /// Number of free parameters.
    pub fn n(self) -> usize {
        match self {
            Family::XState => XStateParams::DIM,
            Family::Real => RealStateParams::DIM,
        }
    }

    /// Builds the density matrix described by `x`, checking the family's
    /// constraints.
    pub fn state(self, x: &[f64]) -> Result<DensityMatrix> {
        match self {
            Family::XState => DensityMatrix::new(XStateParams::from_slice(x)?.to_matrix()),
            Family::Real => DensityMatrix::new(RealStateParams::from_slice(x)?.to_matrix()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::XState => "xstate",
            Family::Real => "real",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xstate" | "x" => Ok(Family::XState),
            "real" => Ok(Family::Real),
            _ => Err(Error::ConfigInvalid(format!("unknown state family {s:?}"))),
        }
    }
}

/// A real symmetric two-qubit state in nine parameters:
///
/// ```text
/// x1 x4 x5 x6
/// x4 x2 x7 x8
/// x5 x7 x3 x9
/// x6 x8 x9 x0      x0 = 1 − x1 − x2 − x3
/// ```
///
/// stored as `[x1, …, x9]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealStateParams {
    x: [f64; 9],
}

/// Upper-triangle positions of `x4 … x9`.
const REAL_OFF_DIAGONAL: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

impl RealStateParams {
    pub const DIM: usize = 9;

    /// Checks the diagonal, the `|ρij|² ≤ ρii ρjj` bounds and positivity.
    pub fn new(x: [f64; 9]) -> Result<Self> {
        let p = Self::new_unchecked(x)?;
        let eig = hermitian_eigenvalues(&p.to_matrix()).map_err(|e| Error::EigenNoConvergence(e.off_diagonal))?;
        if eig.min() < -crate::quantum::EIGEN_CLAMP {
            return Err(Error::NotPositive { eigenvalue: eig.min() });
        }
        Ok(p)
    }

    fn new_unchecked(x: [f64; 9]) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConstraintViolated("parameters must be finite".into()));
        }
        let p = RealStateParams { x };
        let d = p.diagonal();
        if let Some(i) = d.iter().position(|&v| v < -CONSTRAINT_TOL) {
            return Err(Error::ConstraintViolated(format!("rho{0}{0} = {1} is negative", i + 1, d[i])));
        }
        for (k, &(i, j)) in REAL_OFF_DIAGONAL.iter().enumerate() {
            let slack = d[i] * d[j] - x[3 + k] * x[3 + k];
            if slack < -CONSTRAINT_TOL {
                return Err(Error::ConstraintViolated(format!(
                    "|rho{}{}|^2 <= rho{}{}*rho{}{} fails by {:e}",
                    i + 1,
                    j + 1,
                    i + 1,
                    i + 1,
                    j + 1,
                    j + 1,
                    -slack
                )));
            }
        }
        Ok(p)
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let arr: [f64; 9] = x
            .try_into()
            .map_err(|_| Error::ShapeMismatch(format!("real state needs 9 parameters, got {}", x.len())))?;
        Self::new(arr)
    }

    /// Reads the parameters off a real symmetric matrix.
    pub fn from_matrix(m: &CMatrix) -> Result<Self> {
        if m.dim() != 4 {
            return Err(Error::InvalidDimension(m.dim()));
        }
        if m.row_major().iter().any(|z| z.im.abs() > CONSTRAINT_TOL) {
            return Err(Error::ConstraintViolated("real state has complex entries".into()));
        }
        let mut x = [m[(0, 0)].re, m[(1, 1)].re, m[(2, 2)].re, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (k, &(i, j)) in REAL_OFF_DIAGONAL.iter().enumerate() {
            x[3 + k] = m[(i, j)].re;
        }
        Self::new(x)
    }

    pub fn as_array(&self) -> &[f64; 9] {
        &self.x
    }

    /// `(ρ11, ρ22, ρ33, ρ44)`.
    pub fn diagonal(&self) -> [f64; 4] {
        [self.x[0], self.x[1], self.x[2], 1.0 - self.x[0] - self.x[1] - self.x[2]]
    }

    pub fn to_matrix(&self) -> CMatrix {
        let mut m = CMatrix::from_real_diagonal(&self.diagonal());
        for (k, &(i, j)) in REAL_OFF_DIAGONAL.iter().enumerate() {
            m[(i, j)].re = self.x[3 + k];
            m[(j, i)].re = self.x[3 + k];
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub family: Family,
    pub seed: u64,
    /// Draws allowed per accepted real state.
    pub max_rejections: usize,
}

impl SamplerConfig {
    pub fn new(family: Family, seed: u64) -> Self {
        SamplerConfig {
            family,
            seed,
            max_rejections: DEFAULT_MAX_REJECTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rejections == 0 {
            return Err(Error::ConfigInvalid("max_rejections must be positive".into()));
        }
        Ok(())
    }
}

/// Draws and accepted draws, for acceptance-rate reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectionStats {
    pub attempts: usize,
    pub accepted: usize,
}

impl RejectionStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

/// Uniform point on the 3-simplex; returns `(ρ11, ρ22, ρ33)`.
fn simplex_diagonal(rng: &mut impl Rng) -> [f64; 3] {
    let mut u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    u.sort_by(f64::total_cmp);
    [u[0], u[1] - u[0], u[2] - u[1]]
}

pub fn sample_xstate(rng: &mut impl Rng) -> XStateParams {
    let [r11, r22, r33] = simplex_diagonal(rng);
    let r44 = 1.0 - r11 - r22 - r33;
    let mut coherence = |a: f64, b: f64| {
        let radius = rng.random::<f64>() * (a * b).max(0.0).sqrt();
        let (s, c) = (rng.random::<f64>() * TAU).sin_cos();
        (radius * c, radius * s)
    };
    let (re14, im14) = coherence(r11, r44);
    let (re23, im23) = coherence(r22, r33);
    XStateParams::new([r11, r22, r33, re14, im14, re23, im23]).expect("sampler respects the X-state constraints")
}

/// Rejection sampler for real states. `stats` accumulates every draw.
pub fn sample_real_state(
    rng: &mut impl Rng,
    max_rejections: usize,
    stats: &mut RejectionStats,
) -> Result<RealStateParams> {
    for _ in 0..max_rejections {
        stats.attempts += 1;
        let [r11, r22, r33] = simplex_diagonal(rng);
        let d = [r11, r22, r33, 1.0 - r11 - r22 - r33];
        let mut x = [r11, r22, r33, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (k, &(i, j)) in REAL_OFF_DIAGONAL.iter().enumerate() {
            let bound = (d[i] * d[j]).max(0.0).sqrt();
            x[3 + k] = rng.random_range(-1.0..=1.0) * bound;
        }
        let p = RealStateParams::new_unchecked(x)?;
        let eig = hermitian_eigenvalues(&p.to_matrix()).map_err(|e| Error::EigenNoConvergence(e.off_diagonal))?;
        if eig.min() >= 0.0 {
            stats.accepted += 1;
            return Ok(p);
        }
    }
    Err(Error::RejectionBudgetExhausted {
        attempts: max_rejections,
    })
}

/// A seeded stream of parameter vectors of one family.
pub struct Sampler {
    cfg: SamplerConfig,
    rng: ChaCha20Rng,
    stats: RejectionStats,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sampler {
            cfg,
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            stats: RejectionStats::default(),
        })
    }

    pub fn next_params(&mut self) -> Result<Vec<f64>> {
        match self.cfg.family {
            Family::XState => {
                self.stats.attempts += 1;
                self.stats.accepted += 1;
                Ok(sample_xstate(&mut self.rng).as_array().to_vec())
            }
            Family::Real => {
                sample_real_state(&mut self.rng, self.cfg.max_rejections, &mut self.stats).map(|p| p.as_array().to_vec())
            }
        }
    }

    pub fn stats(&self) -> RejectionStats {
        self.stats
    }
}

/// Parameter vectors with their optimization-term labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub family: Family,
    /// `M × n`, one parameter vector per row.
    pub x: Array2<f64>,
    /// Labels `c(ρ)` in bits.
    pub c: Array1<f64>,
    pub sampler_seed: u64,
    pub oracle: OptimizerConfig,
    /// Sampling accounting; all zero for datasets read from disk.
    pub stats: RejectionStats,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn labels(&self) -> ArrayView1<'_, f64> {
        self.c.view()
    }

    /// `Φ(x)` for every row.
    pub fn features(&self, map: &FeatureMap) -> Result<Array2<f64>> {
        if map.n() != self.n() {
            return Err(Error::FamilyMismatch {
                expected: format!("n={}", map.n()),
                found: format!("{} (n={})", self.family, self.n()),
            });
        }
        let rows: Vec<&[f64]> = self.x.rows().into_iter().map(|r| r.to_slice().expect("row-major")).collect();
        map.transform_batch(&rows)
    }

    /// Shape, family constraints and label range.
    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.c.len() || self.x.ncols() != self.family.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} dataset has a {:?} parameter matrix and {} labels",
                self.family,
                self.x.dim(),
                self.c.len()
            )));
        }
        for (i, row) in self.x.rows().into_iter().enumerate() {
            self.family
                .state(row.as_slice().expect("row-major"))
                .map_err(|e| Error::ConstraintViolated(format!("row {i}: {e}")))?;
            let c = self.c[i];
            if !(0.0..=2.0).contains(&c) {
                return Err(Error::ConstraintViolated(format!("row {i}: label {c} outside [0, 2]")));
            }
        }
        Ok(())
    }

    /// The first `m` rows.
    pub fn head(&self, m: usize) -> Dataset {
        let m = m.min(self.len());
        Dataset {
            x: self.x.slice(ndarray::s![..m, ..]).to_owned(),
            c: self.c.slice(ndarray::s![..m]).to_owned(),
            ..self.clone()
        }
    }
}

/// Oracle label of one parameter vector.
pub fn label(family: Family, x: &[f64], oracle: &OptimizerConfig) -> Result<f64> {
    Ok(minimize_conditional_entropy(&family.state(x)?, oracle)?.c_min)
}

/// Samples `m` states sequentially from the seeded stream, then labels them
/// in parallel. Row order follows the stream, whatever the thread count.
pub fn build_dataset(cfg: &SamplerConfig, m: usize, oracle: &OptimizerConfig) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    oracle.validate()?;
    let mut sampler = Sampler::new(*cfg)?;
    let mut x = Array2::zeros((m, cfg.family.n()));
    for mut row in x.rows_mut() {
        row.assign(&ArrayView1::from(&sampler.next_params()?));
    }
    let rows: Vec<&[f64]> = x.rows().into_iter().map(|r| r.to_slice().expect("row-major")).collect();
    let labels: Vec<f64> = rows
        .par_iter()
        .map(|r| label(cfg.family, r, oracle))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        family: cfg.family,
        x,
        c: Array1::from(labels),
        sampler_seed: cfg.seed,
        oracle: *oracle,
        stats: sampler.stats(),
    })
}

const DATASET_MAGIC: &str = "# qdiscord dataset v1";

/// Header lines then one `x1 … xn c` record per line, 17 significant digits.
pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> std::io::Result<()> {
    writeln!(w, "{DATASET_MAGIC}")?;
    writeln!(w, "family {}", ds.family)?;
    writeln!(w, "n {}", ds.n())?;
    writeln!(w, "M {}", ds.len())?;
    writeln!(w, "seed {}", ds.sampler_seed)?;
    let o = &ds.oracle;
    writeln!(
        w,
        "oracle theta_points={} phi_points={} starts={} tol={:e} max_iterations={}",
        o.theta_points, o.phi_points, o.starts, o.tol, o.max_iterations
    )?;
    for (row, c) in ds.x.rows().into_iter().zip(&ds.c) {
        for v in row {
            write!(w, "{v:.16e} ")?;
        }
        writeln!(w, "{c:.16e}")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(Error::parse(n, e.to_string())),
            None => Err(Error::parse(0, format!("unexpected end of file, expected {what}"))),
        }
    };
    let (_, magic) = next_line("header")?;
    if magic.trim() != DATASET_MAGIC {
        let found = magic.trim().strip_prefix("# qdiscord dataset ").unwrap_or(magic.trim()).to_string();
        return Err(Error::FormatVersionUnsupported { found });
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (n, l) = next_line(key)?;
        let rest = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::parse(n, format!("expected `{key} …`")))?;
        Ok((n, rest.trim().to_string()))
    };
    let parse_num = |n: usize, s: &str| -> Result<u64> { s.parse().map_err(|_| Error::parse(n, format!("bad integer {s:?}"))) };

    let (_, family) = field("family")?;
    let family: Family = family.parse()?;
    let (ln, n) = field("n")?;
    let n = parse_num(ln, &n)? as usize;
    if n != family.n() {
        return Err(Error::FamilyMismatch {
            expected: format!("{family} with n={}", family.n()),
            found: format!("n={n}"),
        });
    }
    let (ln, m) = field("M")?;
    let m = parse_num(ln, &m)? as usize;
    let (ln, seed) = field("seed")?;
    let seed = parse_num(ln, &seed)?;
    let (ln, oracle_line) = field("oracle")?;
    let mut oracle = OptimizerConfig::default();
    for kv in oracle_line.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::parse(ln, format!("bad oracle field {kv:?}")))?;
        let bad = || Error::parse(ln, format!("bad value in {kv:?}"));
        match k {
            "theta_points" => oracle.theta_points = v.parse().map_err(|_| bad())?,
            "phi_points" => oracle.phi_points = v.parse().map_err(|_| bad())?,
            "starts" => oracle.starts = v.parse().map_err(|_| bad())?,
            "tol" => oracle.tol = v.parse().map_err(|_| bad())?,
            "max_iterations" => oracle.max_iterations = v.parse().map_err(|_| bad())?,
            _ => return Err(Error::parse(ln, format!("unknown oracle field {k:?}"))),
        }
    }

    let mut x = Array2::zeros((m, n));
    let mut c = Array1::zeros(m);
    for i in 0..m {
        let (ln, l) = next_line("a record")?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Error::parse(ln, e.to_string())))
            .collect::<Result<_>>()?;
        if vals.len() != n + 1 {
            return Err(Error::parse(ln, format!("expected {} fields, found {}", n + 1, vals.len())));
        }
        x.row_mut(i).assign(&ArrayView1::from(&vals[..n]));
        c[i] = vals[n];
    }
    Ok(Dataset {
        family,
        x,
        c,
        sampler_seed: seed,
        oracle,
        stats: RejectionStats::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{partial_trace, von_neumann_entropy, Subsystem};

    #[test]
    fn xstate_samples_are_valid() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = sample_xstate(&mut rng);
            assert!(p.rho11() * p.rho44() - p.rho14().norm_sqr() >= -1e-15);
            assert!(p.rho22() * p.rho33() - p.rho23().norm_sqr() >= -1e-15);
            assert!(DensityMatrix::new(p.to_matrix()).is_ok());
        }
    }

    #[test]
    fn real_samples_are_valid_and_counted() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut stats = RejectionStats::default();
        for _ in 0..2000 {
            let p = sample_real_state(&mut rng, DEFAULT_MAX_REJECTIONS, &mut stats).unwrap();
            let m = p.to_matrix();
            assert!((m.trace().re - 1.0).abs() < 1e-12);
            assert!(hermitian_eigenvalues(&m).unwrap().min() >= -1e-10);
            assert!(DensityMatrix::new(m).is_ok());
        }
        assert_eq!(stats.accepted, 2000);
        assert!(stats.attempts >= stats.accepted);
        assert!(stats.acceptance_rate() > 0.0);
    }

    #[test]
    fn rejection_budget() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut stats = RejectionStats::default();
        // A one-draw budget fails as soon as the first draw is rejected.
        let failed = (0..200).any(|_| {
            matches!(
                sample_real_state(&mut rng, 1, &mut stats),
                Err(Error::RejectionBudgetExhausted { attempts: 1 })
            )
        });
        assert!(failed);
    }

    #[test]
    fn sampler_is_deterministic() {
        for family in [Family::XState, Family::Real] {
            let draw = |seed| {
                let mut s = Sampler::new(SamplerConfig::new(family, seed)).unwrap();
                (0..50).map(|_| s.next_params().unwrap()).collect::<Vec<_>>()
            };
            assert_eq!(draw(5), draw(5));
            assert_ne!(draw(5), draw(6));
        }
    }

    #[test]
    fn real_params_layout() {
        let p = RealStateParams::new([0.4, 0.3, 0.2, 0.1, 0.0, 0.05, 0.0, 0.0, 0.02]).unwrap();
        let m = p.to_matrix();
        assert_eq!(m[(0, 1)].re, 0.1);
        assert_eq!(m[(1, 0)].re, 0.1);
        assert_eq!(m[(0, 3)].re, 0.05);
        assert_eq!(m[(3, 2)].re, 0.02);
        assert!((m[(3, 3)].re - 0.1).abs() < 1e-15);
        assert!(matches!(
            RealStateParams::new([0.4, 0.3, 0.2, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(Error::ConstraintViolated(_))
        ));
        assert!(RealStateParams::from_slice(&[0.1; 8]).is_err());
    }

    #[test]
    fn small_dataset_labels_and_roundtrip() {
        let oracle = OptimizerConfig::default();
        let ds = build_dataset(&SamplerConfig::new(Family::XState, 9), 40, &oracle).unwrap();
        ds.validate().unwrap();
        assert!(ds.c.iter().all(|&c| (0.0..=1.0).contains(&c)));
        for (row, &c) in ds.x.rows().into_iter().zip(&ds.c) {
            let again = label(Family::XState, row.as_slice().unwrap(), &oracle).unwrap();
            assert!((again - c).abs() <= 1e-6);
        }

        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.c, ds.c);
        assert_eq!(back.oracle, ds.oracle);
        assert_eq!(back.sampler_seed, 9);
    }

    #[test]
    fn product_state_label_is_marginal_entropy() {
        // diag(p, q) ⊗ diag(r, 1 − r) is an X-state with no coherences.
        let (p, r) = (0.3, 0.8);
        let x = [p * r, p * (1.0 - r), (1.0 - p) * r, 0.0, 0.0, 0.0, 0.0];
        let c = label(Family::XState, &x, &OptimizerConfig::default()).unwrap();
        let rho = Family::XState.state(&x).unwrap();
        let sa = von_neumann_entropy(&partial_trace(&rho, Subsystem::A).unwrap()).unwrap();
        assert!((c - sa).abs() <= 1e-6);
    }

    #[test]
    fn dataset_reader_errors() {
        let bad_version = "# qdiscord dataset v9\nfamily xstate\n";
        assert!(matches!(
            read_dataset(bad_version.as_bytes()),
            Err(Error::FormatVersionUnsupported { .. })
        ));
        let wrong_n = format!("{DATASET_MAGIC}\nfamily real\nn 7\nM 0\nseed 1\noracle tol=1e-8\n");
        assert!(matches!(read_dataset(wrong_n.as_bytes()), Err(Error::FamilyMismatch { .. })));
        let short = format!("{DATASET_MAGIC}\nfamily xstate\nn 7\nM 2\nseed 1\noracle tol=1e-8\n0 0 0 0 0 0 0 0\n");
        assert!(matches!(read_dataset(short.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn family_parsing() {
        assert_eq!("xstate".parse::<Family>().unwrap(), Family::XState);
        assert_eq!("REAL".parse::<Family>().unwrap(), Family::Real);
        assert!("complex".parse::<Family>().is_err());
        assert_eq!(Family::Real.n(), 9);
    }
}
