//! Gradient-descent training with a staircase learning-rate schedule,
//! evaluation, replicate experiments, and checkpoints.
//!
//! Two solvers run the same update rule:
//!
//! * [`Solver::Dense`] updates the full `F × D` input matrices directly.
//! * [`Solver::Subspace`] uses the fact that every input-layer gradient is a
//!   combination of training rows, `∇W1 = dZᵀ X`, so the weights only ever
//!   move inside the row space of `X`. With the eigendecomposition
//!   `XᵀX = V Λ Vᵀ` it keeps `W1 = W1₀ + B V_rᵀ` and trains `B` against the
//!   projected inputs `Y = X V_r`. That turns each step from `O(M·D·F)` into
//!   `O(M·r·F)`. Directions whose cumulative effect on the pre-activations
//!   over the whole schedule, `(2/M)·Σ lr·λ`, stays below the tolerance are
//!   left frozen. With every direction kept it is the dense run up to
//!   rounding.
//!
//! Gradient clipping is applied to the gradient that is actually used. In
//! the subspace solver that is the projected gradient `G V_rᵀ`. When every
//! row of `G` has Euclidean norm at most the clip bound, no entry of
//! `G V_rᵀ` can exceed it and the step stays in the subspace. Otherwise the
//! step is taken in full coordinates with clipping, folded into `W1₀`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use faer::{Accum, MatMut, MatRef, Par, Side};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::datagen::{Dataset, Family};
use crate::error::{Error, Result};
use crate::features::{feature_dim, FeatureMap};
use crate::models::{
    backward, clip_value, forward, forward_from_preactivations, init_weights, dead_units,
    preactivation_gradients, quadratic_loss, ModelKind, ModelWeights, GRADIENT_CLIP,
};

pub const DEFAULT_STEPS: usize = 300_000;
pub const DEFAULT_LR0: f64 = 0.2;
pub const DEFAULT_DECAY_INTERVAL: usize = 3000;
pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_DEGREE: usize = 6;
pub const DEFAULT_LOG_EVERY: usize = 1000;
pub const DEFAULT_SUBSPACE_TOL: f64 = 1e-5;
pub const DEFAULT_TEST_SIZE: usize = 2000;
pub const DEFAULT_TRAIN_SIZE: usize = 6000;

/// Eigenvalues of `XᵀX` below this fraction of the largest are treated as
/// zero whatever the tolerance.
const RANK_FLOOR: f64 = 1e-13;

/// Per-interval decay: 0.98 for X-states, 0.96 for real states.
pub fn default_decay(family: Family) -> f64 {
    match family {
        Family::XState => 0.98,
        Family::Real => 0.96,
    }
}

/// Seed of the held-out test set, derived from the training seed so the two
/// sample streams never coincide.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0x7e57_5e7d_0000_0001
}

/// Seed of replicate `run` (0-based).
pub fn replicate_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    Mini(usize),
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchMode::Full => f.write_str("full"),
            BatchMode::Mini(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(BatchMode::Full);
        }
        s.parse()
            .ok()
            .filter(|&b| b > 0)
            .map(BatchMode::Mini)
            .ok_or_else(|| Error::ConfigInvalid(format!("batch must be `full` or a positive size, got {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Dense,
    Subspace { tol: f64 },
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Solver::Dense => f.write_str("dense"),
            Solver::Subspace { tol } => write!(f, "subspace:{tol:e}"),
        }
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ConfigInvalid(format!("solver must be `dense` or `subspace[:tol]`, got {s:?}"));
        match s.split_once(':') {
            None if s == "dense" => Ok(Solver::Dense),
            None if s == "subspace" => Ok(Solver::Subspace {
                tol: DEFAULT_SUBSPACE_TOL,
            }),
            Some(("subspace", t)) => Ok(Solver::Subspace {
                tol: t.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub steps: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub hidden: usize,
    pub degree: usize,
    pub batch: BatchMode,
    pub seed: u64,
    pub log_every: usize,
    pub solver: Solver,
}

impl TrainConfig {
    /// Defaults for the given family and model.
    pub fn new(family: Family, kind: ModelKind) -> Self {
        TrainConfig {
            kind,
            steps: DEFAULT_STEPS,
            lr0: DEFAULT_LR0,
            decay_factor: default_decay(family),
            decay_interval: DEFAULT_DECAY_INTERVAL,
            hidden: DEFAULT_HIDDEN,
            degree: DEFAULT_DEGREE,
            batch: BatchMode::Full,
            seed: 0,
            log_every: DEFAULT_LOG_EVERY,
            solver: Solver::Subspace {
                tol: DEFAULT_SUBSPACE_TOL,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!("decay factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_interval == 0 || self.log_every == 0 {
            return fail("decay interval and log interval must be positive".into());
        }
        if self.hidden == 0 {
            return fail("hidden width must be positive".into());
        }
        if let Solver::Subspace { tol } = self.solver {
            if !(tol >= 0.0 && tol.is_finite()) {
                return fail(format!("subspace tolerance must be non-negative, got {tol}"));
            }
        }
        Ok(())
    }

    pub fn lr_at_step(&self, step: usize) -> f64 {
        lr_at_step(self, step)
    }

    /// `Σ_{t < steps} lr(t)`.
    pub fn lr_sum(&self) -> f64 {
        (0..self.steps).map(|t| self.lr_at_step(t)).sum()
    }
}

/// `lr0 · decay^⌊step / interval⌋`.
pub fn lr_at_step(cfg: &TrainConfig, step: usize) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((step / cfg.decay_interval) as i32)
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={} steps={} lr0={} decay={} interval={} hidden={} degree={} batch={} seed={} log_every={} solver={}",
            self.kind,
            self.steps,
            self.lr0,
            self.decay_factor,
            self.decay_interval,
            self.hidden,
            self.degree,
            self.batch,
            self.seed,
            self.log_every,
            self.solver
        )
    }
}

impl FromStr for TrainConfig {
    type Err = Error;

    /// Parses the `key=value` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = TrainConfig::new(Family::XState, ModelKind::Nn);
        let mut seen_decay = false;
        for kv in s.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("expected key=value, got {kv:?}")))?;
            let num = || Error::ConfigInvalid(format!("bad value in {kv:?}"));
            match k {
                "kind" => cfg.kind = v.parse()?,
                "steps" => cfg.steps = v.parse().map_err(|_| num())?,
                "lr0" => cfg.lr0 = v.parse().map_err(|_| num())?,
                "decay" => {
                    cfg.decay_factor = v.parse().map_err(|_| num())?;
                    seen_decay = true;
                }
                "interval" => cfg.decay_interval = v.parse().map_err(|_| num())?,
                "hidden" => cfg.hidden = v.parse().map_err(|_| num())?,
                "degree" => cfg.degree = v.parse().map_err(|_| num())?,
                "batch" => cfg.batch = v.parse()?,
                "seed" => cfg.seed = v.parse().map_err(|_| num())?,
                "log_every" => cfg.log_every = v.parse().map_err(|_| num())?,
                "solver" => cfg.solver = v.parse()?,
                _ => return Err(Error::ConfigInvalid(format!("unknown config key {k:?}"))),
            }
        }
        if !seen_decay {
            return Err(Error::ConfigInvalid("config is missing `decay`".into()));
        }
        Ok(cfg)
    }
}

/// Eigendecomposition of `XᵀX`, largest eigenvalues first, restricted to the
/// numerically nonzero part.
#[derive(Debug, Clone)]
pub struct GramSpectrum {
    pub values: Vec<f64>,
    /// `D × k`, column `i` belongs to `values[i]`.
    pub vectors: Array2<f64>,
}

/// Features and labels ready for training, with the Gram spectrum computed on
/// first use by the subspace solver.
#[derive(Debug)]
pub struct PreparedData {
    pub family: Family,
    pub degree: usize,
    /// `M × D`.
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    spectrum: OnceLock<GramSpectrum>,
}

impl PreparedData {
    pub fn new(ds: &Dataset, degree: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let map = FeatureMap::new(ds.n(), degree)?;
        Ok(PreparedData {
            family: ds.family,
            degree,
            features: ds.features(&map)?,
            labels: ds.c.clone(),
            spectrum: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn spectrum(&self) -> Result<&GramSpectrum> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        let s = gram_spectrum(self.features.view())?;
        Ok(self.spectrum.get_or_init(|| s))
    }

    /// Number of directions the subspace solver keeps for `cfg`.
    pub fn subspace_rank(&self, cfg: &TrainConfig) -> Result<usize> {
        let Solver::Subspace { tol } = cfg.solver else {
            return Ok(self.feature_dim());
        };
        let scale = 2.0 / self.len() as f64 * cfg.lr_sum();
        Ok(self.spectrum()?.values.iter().take_while(|&&l| scale * l > tol).count())
    }
}

fn rm(a: &Array2<f64>) -> MatRef<'_, f64> {
    MatRef::from_row_major_slice(a.as_slice().expect("standard layout"), a.nrows(), a.ncols())
}

fn rm_mut(a: &mut Array2<f64>) -> MatMut<'_, f64> {
    let (r, c) = a.dim();
    MatMut::from_row_major_slice_mut(a.as_slice_mut().expect("standard layout"), r, c)
}

fn gemm(dst: MatMut<'_, f64>, accum: Accum, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    faer::linalg::matmul::matmul(dst, accum, lhs, rhs, 1.0, Par::Seq);
    clear_upper_vector_state();
}

/// faer's wide-vector kernels can return with the upper halves of the vector
/// registers dirty. Until something clears them, every legacy-SSE instruction
/// that follows (libm `exp`, plain ndarray loops) pays a transition penalty,
/// which made the elementwise part of a training step ~25x slower.
fn clear_upper_vector_state() {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support was just checked.
        unsafe { zero_upper() }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn zero_upper() {
    std::arch::x86_64::_mm256_zeroupper();
}

fn gram_spectrum(x: ArrayView2<'_, f64>) -> Result<GramSpectrum> {
    let x = x.as_standard_layout().to_owned();
    let d = x.ncols();
    let mut gram = faer::Mat::<f64>::zeros(d, d);
    gemm(gram.as_mut(), Accum::Replace, rm(&x).transpose(), rm(&x));
    let evd = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenNoConvergence(f64::NAN))?;
    clear_upper_vector_state();
    let s = evd.S().column_vector();
    let u = evd.U();
    let lmax = s[d - 1].max(0.0);
    // faer returns ascending eigenvalues.
    let keep: Vec<usize> = (0..d).rev().take_while(|&i| s[i] > lmax * RANK_FLOOR).collect();
    let values = keep.iter().map(|&i| s[i]).collect();
    let vectors = Array2::from_shape_fn((d, keep.len()), |(row, k)| u[(row, keep[k])]);
    Ok(GramSpectrum { values, vectors })
}

/// One logged point of a loss trajectory. The loss is measured before the
/// update of that step; the final entry is the loss after the last update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub kind: ModelKind,
    /// 1-based replicate index.
    pub run: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub wall_time: Duration,
    pub trajectory: Vec<LogEntry>,
    /// Entropy-activation units that were dead on every training sample at
    /// initialization.
    pub dead_units_at_init: usize,
    /// Directions trained by the subspace solver (`D` for dense runs).
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub weights: ModelWeights,
}

trait Engine {
    /// Loss on `rows` (all rows when `None`) at the current weights; applies
    /// the update only when the loss is finite.
    fn step(&mut self, rows: Option<&[usize]>, lr: f64) -> Result<f64>;
    fn weights(&self) -> Result<ModelWeights>;
}

struct DenseEngine<'a> {
    data: &'a PreparedData,
    w: ModelWeights,
}

impl Engine for DenseEngine<'_> {
    fn step(&mut self, rows: Option<&[usize]>, lr: f64) -> Result<f64> {
        let gathered;
        let (x, y) = match rows {
            None => (self.data.features.view(), self.data.labels.view()),
            Some(idx) => {
                gathered = (self.data.features.select(Axis(0), idx), self.data.labels.select(Axis(0), idx));
                (gathered.0.view(), gathered.1.view())
            }
        };
        let trace = forward(&self.w, x)?;
        let loss = quadratic_loss(trace.prediction.view(), y)?;
        if loss.is_finite() {
            let g = backward(&self.w, x, y, &trace)?;
            self.w.apply_gradient(&g, lr);
        }
        Ok(loss)
    }

    fn weights(&self) -> Result<ModelWeights> {
        Ok(self.w.clone())
    }
}

struct SubspaceEngine<'a> {
    data: &'a PreparedData,
    /// `D × r` orthonormal basis.
    v: Array2<f64>,
    /// `X V`, `M × r`, and its transpose stored row-major.
    y: Array2<f64>,
    yt: Array2<f64>,
    state: SubspaceState,
}

struct SubspaceState {
    kind: ModelKind,
    hidden: usize,
    /// Frozen part of the input layers, `kF × D` (W1 rows, then Wc rows).
    base: Array2<f64>,
    /// `X baseᵀ`, `M × kF`.
    z0: Array2<f64>,
    /// `Bᵀ`, `r × kF`.
    bt: Array2<f64>,
    w2: Array1<f64>,
}

impl<'a> SubspaceEngine<'a> {
    fn new(data: &'a PreparedData, w: &ModelWeights, rank: usize) -> Result<Self> {
        let v = data.spectrum()?.vectors.slice(s![.., ..rank]).to_owned();
        let x = &data.features;
        let mut y = Array2::zeros((x.nrows(), rank));
        gemm(rm_mut(&mut y), Accum::Replace, rm(x), rm(&v));
        let yt = y.t().as_standard_layout().to_owned();
        let base = match w.wcond() {
            Some(wc) => ndarray::concatenate(Axis(0), &[w.w1(), wc])
                .expect("matching widths")
                .as_standard_layout()
                .to_owned(),
            None => w.w1().to_owned(),
        };
        let mut z0 = Array2::zeros((x.nrows(), base.nrows()));
        gemm(rm_mut(&mut z0), Accum::Replace, rm(x), rm(&base).transpose());
        Ok(SubspaceEngine {
            data,
            v,
            y,
            yt,
            state: SubspaceState {
                kind: w.kind(),
                hidden: w.hidden(),
                bt: Array2::zeros((rank, base.nrows())),
                base,
                z0,
                w2: w.w2().to_owned(),
            },
        })
    }
}

struct StepInputs<'b> {
    v: &'b Array2<f64>,
    x: &'b Array2<f64>,
    y: &'b Array2<f64>,
    yt: &'b Array2<f64>,
    labels: ArrayView1<'b, f64>,
}

impl SubspaceState {
    /// One update; `z` starts as the frozen pre-activations of the batch.
    fn step(&mut self, inp: StepInputs<'_>, mut z: Array2<f64>, lr: f64) -> Result<f64> {
        let f = self.hidden;
        // Zᵀ += B Yᵀ
        gemm(rm_mut(&mut z).transpose_mut(), Accum::Add, rm(&self.bt).transpose(), rm(inp.y).transpose());
        let (z1, zc) = if self.kind.has_condition_branch() {
            (z.slice(s![.., ..f]).to_owned(), Some(z.slice(s![.., f..]).to_owned()))
        } else {
            (z, None)
        };
        let trace = forward_from_preactivations(self.kind, self.w2.view(), z1, zc);
        let loss = quadratic_loss(trace.prediction.view(), inp.labels)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let pre = preactivation_gradients(self.w2.view(), inp.labels, &trace)?;
        let dz = match pre.zc {
            Some(dzc) => ndarray::concatenate(Axis(1), &[pre.z1.view(), dzc.view()])
                .expect("matching heights")
                .as_standard_layout()
                .to_owned(),
            None => pre.z1,
        };
        // Gᵀ = Yᵀ dZ, stored so that G is column-major.
        let mut gt = Array2::zeros(self.bt.dim());
        gemm(rm_mut(&mut gt).transpose_mut(), Accum::Replace, rm(&dz).transpose(), rm(inp.yt).transpose());

        let fits = gt.axis_iter(Axis(1)).all(|col| col.dot(&col).sqrt() <= GRADIENT_CLIP);
        if fits {
            self.bt.scaled_add(-lr, &gt);
        } else {
            let mut full = gt.t().dot(&inp.v.t());
            full.mapv_inplace(clip_value);
            self.base.scaled_add(-lr, &full);
            let shift = inp.x.dot(&full.t());
            self.z0.scaled_add(-lr, &shift);
        }
        self.w2.scaled_add(-lr, &pre.w2.mapv(clip_value));
        Ok(loss)
    }
}

impl Engine for SubspaceEngine<'_> {
    fn step(&mut self, rows: Option<&[usize]>, lr: f64) -> Result<f64> {
        let x = &self.data.features;
        match rows {
            None => {
                let z = self.state.z0.clone();
                let inp = StepInputs {
                    v: &self.v,
                    x,
                    y: &self.y,
                    yt: &self.yt,
                    labels: self.data.labels.view(),
                };
                self.state.step(inp, z, lr)
            }
            Some(idx) => {
                let y = self.y.select(Axis(0), idx);
                let yt = y.t().as_standard_layout().to_owned();
                let z = self.state.z0.select(Axis(0), idx);
                let labels = self.data.labels.select(Axis(0), idx);
                let inp = StepInputs {
                    v: &self.v,
                    x,
                    y: &y,
                    yt: &yt,
                    labels: labels.view(),
                };
                self.state.step(inp, z, lr)
            }
        }
    }

    fn weights(&self) -> Result<ModelWeights> {
        let st = &self.state;
        let all = &st.base + &st.bt.t().dot(&self.v.t());
        let f = st.hidden;
        let (w1, wc) = if st.kind.has_condition_branch() {
            (all.slice(s![..f, ..]).to_owned(), Some(all.slice(s![f.., ..]).to_owned()))
        } else {
            (all, None)
        };
        ModelWeights::new(st.kind, w1, st.w2.clone(), wc)
    }
}

/// Yields the row subsets of successive steps.
struct Batches {
    size: Option<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha20Rng,
}

impl Batches {
    fn new(mode: BatchMode, m: usize, seed: u64) -> Self {
        let size = match mode {
            BatchMode::Full => None,
            BatchMode::Mini(b) if b >= m => None,
            BatchMode::Mini(b) => Some(b),
        };
        Batches {
            size,
            order: (0..m).collect(),
            pos: m,
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0xba7c_4e5_u64),
        }
    }

    fn next(&mut self) -> Option<&[usize]> {
        let b = self.size?;
        if self.pos + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += b;
        Some(&self.order[self.pos - b..self.pos])
    }
}

/// Trains one model from `init_weights(cfg.kind, cfg.hidden, D, cfg.seed)`.
pub fn train_prepared(cfg: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.degree != data.degree {
        return Err(Error::ShapeMismatch(format!(
            "config degree {} but features were built with degree {}",
            cfg.degree, data.degree
        )));
    }
    let start = Instant::now();
    let init = init_weights(cfg.kind, cfg.hidden, data.feature_dim(), cfg.seed)?;
    let init_trace = forward(&init, data.features.view())?;
    let dead = dead_units(&init_trace).len();

    let rank = match cfg.solver {
        Solver::Dense => data.feature_dim(),
        Solver::Subspace { .. } if cfg.steps == 0 => data.feature_dim(),
        Solver::Subspace { .. } => data.subspace_rank(cfg)?,
    };
    let mut engine: Box<dyn Engine> = match cfg.solver {
        Solver::Subspace { .. } if cfg.steps > 0 => Box::new(SubspaceEngine::new(data, &init, rank)?),
        _ => Box::new(DenseEngine { data, w: init }),
    };
    let mut batches = Batches::new(cfg.batch, data.len(), cfg.seed);
    let mut trajectory = Vec::with_capacity(cfg.steps / cfg.log_every + 2);
    for step in 0..cfg.steps {
        let lr = cfg.lr_at_step(step);
        let loss = engine.step(batches.next(), lr)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if step % cfg.log_every == 0 {
            trajectory.push(LogEntry { step, lr, loss });
        }
    }
    let weights = engine.weights()?;
    let train_loss = evaluate(&weights, data.features.view(), data.labels.view())?.loss;
    if !train_loss.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: train_loss,
        });
    }
    trajectory.push(LogEntry {
        step: cfg.steps,
        lr: cfg.lr_at_step(cfg.steps),
        loss: train_loss,
    });
    Ok(TrainOutcome {
        record: RunRecord {
            kind: cfg.kind,
            run: 1,
            seed: cfg.seed,
            status: RunStatus::Completed,
            train_loss,
            test_loss: None,
            wall_time: start.elapsed(),
            trajectory,
            dead_units_at_init: dead,
            rank,
        },
        weights,
    })
}

/// Builds features of degree `cfg.degree` and trains.
pub fn train(cfg: &TrainConfig, train_set: &Dataset) -> Result<TrainOutcome> {
    train_prepared(cfg, &PreparedData::new(train_set, cfg.degree)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// `(c, ĉ)` per sample, in dataset order.
    pub pairs: Vec<(f64, f64)>,
}

pub fn evaluate(w: &ModelWeights, features: ArrayView2<'_, f64>, labels: ArrayView1<'_, f64>) -> Result<Evaluation> {
    let pred = forward(w, features)?.prediction;
    let loss = quadratic_loss(pred.view(), labels)?;
    Ok(Evaluation {
        loss,
        pairs: labels.iter().copied().zip(pred.iter().copied()).collect(),
    })
}

/// Evaluates on a dataset, checking that the model was trained on the same
/// family and degree.
pub fn evaluate_dataset(w: &ModelWeights, ds: &Dataset, degree: usize) -> Result<Evaluation> {
    let d = feature_dim(ds.n(), degree)?;
    if d != w.feature_dim() {
        return Err(Error::FamilyMismatch {
            expected: format!("D={}", w.feature_dim()),
            found: format!("{} with L={degree} (D={d})", ds.family),
        });
    }
    let map = FeatureMap::new(ds.n(), degree)?;
    evaluate(w, ds.features(&map)?.view(), ds.labels())
}

#[derive(Debug, Clone)]
pub struct ReplicateReport {
    pub kind: ModelKind,
    pub rows: Vec<RunRecord>,
    /// Means over completed runs, unscaled.
    pub mean_train: f64,
    pub mean_test: f64,
}

impl ReplicateReport {
    fn from_rows(kind: ModelKind, rows: Vec<RunRecord>) -> Self {
        let done: Vec<&RunRecord> = rows.iter().filter(|r| r.status == RunStatus::Completed).collect();
        let mean = |f: &dyn Fn(&RunRecord) -> f64| {
            if done.is_empty() {
                f64::NAN
            } else {
                done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64
            }
        };
        ReplicateReport {
            kind,
            mean_train: mean(&|r| r.train_loss),
            mean_test: mean(&|r| r.test_loss.unwrap_or(f64::NAN)),
            rows,
        }
    }

    pub fn completed(&self) -> usize {
        self.rows.iter().filter(|r| r.status == RunStatus::Completed).count()
    }
}

/// Trains `runs` replicates that share the dataset and differ only in the
/// weight seed, in parallel. Diverged runs are kept in the table with NaN
/// losses and excluded from the averages.
pub fn replicate_experiment(
    cfg: &TrainConfig,
    train_set: &PreparedData,
    test_set: &PreparedData,
    runs: usize,
) -> Result<(ReplicateReport, Vec<Option<ModelWeights>>)> {
    if runs == 0 {
        return Err(Error::ConfigInvalid("runs must be at least 1".into()));
    }
    if test_set.feature_dim() != train_set.feature_dim() {
        return Err(Error::ShapeMismatch("train and test features differ in dimension".into()));
    }
    if cfg.solver != Solver::Dense && cfg.steps > 0 {
        // Compute the shared spectrum once, before the workers need it.
        train_set.spectrum()?;
    }
    let results: Vec<(RunRecord, Option<ModelWeights>)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let run_cfg = TrainConfig {
                seed: replicate_seed(cfg.seed, i),
                ..*cfg
            };
            let start = Instant::now();
            match train_prepared(&run_cfg, train_set) {
                Ok(mut out) => {
                    let test = evaluate(&out.weights, test_set.features.view(), test_set.labels.view())?;
                    out.record.test_loss = Some(test.loss);
                    out.record.run = i + 1;
                    Ok((out.record, Some(out.weights)))
                }
                Err(Error::Diverged { step, .. }) => Ok((
                    RunRecord {
                        kind: cfg.kind,
                        run: i + 1,
                        seed: run_cfg.seed,
                        status: RunStatus::Diverged { step },
                        train_loss: f64::NAN,
                        test_loss: None,
                        wall_time: start.elapsed(),
                        trajectory: Vec::new(),
                        dead_units_at_init: 0,
                        rank: 0,
                    },
                    None,
                )),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let (rows, weights): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((ReplicateReport::from_rows(cfg.kind, rows), weights))
}

/// Comma-separated table: `model,run,seed,train_loss_e-3,test_loss_e-3,status,wall_s`
/// with a final `avg` row over completed runs. Losses are multiplied by 10³.
pub fn write_report<W: Write>(mut w: W, reports: &[ReplicateReport]) -> std::io::Result<()> {
    writeln!(w, "model,run,seed,train_loss_e-3,test_loss_e-3,status,wall_s")?;
    for rep in reports {
        for r in &rep.rows {
            let status = match r.status {
                RunStatus::Completed => "ok".to_string(),
                RunStatus::Diverged { step } => format!("diverged@{step}"),
            };
            writeln!(
                w,
                "{},{},{},{:.16e},{:.16e},{},{:.3}",
                rep.kind,
                r.run,
                r.seed,
                r.train_loss * 1e3,
                r.test_loss.unwrap_or(f64::NAN) * 1e3,
                status,
                r.wall_time.as_secs_f64()
            )?;
        }
        writeln!(
            w,
            "{},avg,,{:.16e},{:.16e},{}/{},",
            rep.kind,
            rep.mean_train * 1e3,
            rep.mean_test * 1e3,
            rep.completed(),
            rep.rows.len()
        )?;
    }
    Ok(())
}

/// `step,lr,loss` lines.
pub fn write_trajectory<W: Write>(mut w: W, trajectory: &[LogEntry]) -> std::io::Result<()> {
    writeln!(w, "step,lr,loss")?;
    for e in trajectory {
        writeln!(w, "{},{:.16e},{:.16e}", e.step, e.lr, e.loss)?;
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: &str = "v1";
const CHECKPOINT_MAGIC: &str = "qdiscord-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub family: Family,
    pub config: TrainConfig,
    /// Gradient steps taken to reach these weights.
    pub steps_done: usize,
    pub weights: ModelWeights,
}

impl Checkpoint {
    pub fn n(&self) -> usize {
        self.family.n()
    }
}

fn write_matrix(out: &mut String, name: &str, m: ArrayView2<'_, f64>) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

/// Writes a checkpoint. The first line names the format version, the second
/// carries the SHA-256 of everything after it.
pub fn save_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let wt = &ckpt.weights;
    let mut body = String::new();
    let _ = writeln!(body, "family {}", ckpt.family);
    let _ = writeln!(body, "kind {}", wt.kind());
    let _ = writeln!(body, "hidden {}", wt.hidden());
    let _ = writeln!(body, "dim {}", wt.feature_dim());
    let _ = writeln!(body, "n {}", ckpt.n());
    let _ = writeln!(body, "degree {}", ckpt.config.degree);
    let _ = writeln!(body, "seed {}", ckpt.config.seed);
    let _ = writeln!(body, "steps {}", ckpt.steps_done);
    let _ = writeln!(body, "config {}", ckpt.config);
    write_matrix(&mut body, "W1", wt.w1());
    write_matrix(&mut body, "W2", wt.w2().insert_axis(Axis(0)));
    if let Some(wc) = wt.wcond() {
        write_matrix(&mut body, "Wc", wc);
    }
    let digest = Sha256::digest(body.as_bytes());
    writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(w, "sha256 {}", hex(&digest))?;
    w.write_all(body.as_bytes())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_checkpoint<R: BufRead>(mut r: R) -> Result<Checkpoint> {
    let mut first = String::new();
    r.read_line(&mut first).map_err(|e| Error::parse(1, e.to_string()))?;
    let first = first.trim_end();
    match first.split_once(' ') {
        Some((CHECKPOINT_MAGIC, CHECKPOINT_VERSION)) => {}
        Some((CHECKPOINT_MAGIC, v)) => return Err(Error::FormatVersionUnsupported { found: v.to_string() }),
        _ => return Err(Error::FormatVersionUnsupported { found: first.to_string() }),
    }
    let mut sha_line = String::new();
    r.read_line(&mut sha_line).map_err(|_| Error::CorruptChecksum)?;
    let expected = sha_line.trim_end().strip_prefix("sha256 ").ok_or(Error::CorruptChecksum)?.to_string();
    let mut body = String::new();
    r.read_to_string(&mut body).map_err(|_| Error::CorruptChecksum)?;
    if hex(&Sha256::digest(body.as_bytes())) != expected {
        return Err(Error::CorruptChecksum);
    }
    parse_checkpoint_body(&body)
}

struct BodyLines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> BodyLines<'a> {
    /// Next line with its 1-based number in the file (the body starts on line 3).
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 3, l))
            .ok_or_else(|| Error::parse(0, format!("missing {what}")))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, l) = self.next(key)?;
        let v = l
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| Error::parse(n, format!("expected `{key} …`")))?;
        Ok((n, v))
    }

    fn int(&mut self, key: &str) -> Result<usize> {
        let (n, v) = self.field(key)?;
        v.parse().map_err(|_| Error::parse(n, format!("bad integer {v:?}")))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let (ln, shape) = self.field(name)?;
        if shape != format!("{rows} {cols}") {
            return Err(Error::parse(ln, format!("{name} has shape {shape}, expected {rows} {cols}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, l) = self.next(name)?;
            let before = data.len();
            for tok in l.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| Error::parse(ln, e.to_string()))?);
            }
            if data.len() - before != cols {
                return Err(Error::parse(ln, format!("expected {cols} values")));
            }
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("sizes checked"))
    }
}

fn parse_checkpoint_body(body: &str) -> Result<Checkpoint> {
    let mut lines = BodyLines {
        inner: body.lines().enumerate(),
    };
    let family: Family = lines.field("family")?.1.parse()?;
    let kind: ModelKind = lines.field("kind")?.1.parse()?;
    let hidden = lines.int("hidden")?;
    let dim = lines.int("dim")?;
    let n = lines.int("n")?;
    let degree = lines.int("degree")?;
    let (sn, seed) = lines.field("seed")?;
    let seed: u64 = seed.parse().map_err(|_| Error::parse(sn, "bad seed"))?;
    let steps_done = lines.int("steps")?;
    let config: TrainConfig = lines.field("config")?.1.parse()?;
    if n != family.n() || config.degree != degree || config.seed != seed || config.kind != kind || config.hidden != hidden {
        return Err(Error::parse(0, "checkpoint header fields disagree"));
    }
    if feature_dim(n, degree)? != dim {
        return Err(Error::parse(0, format!("dim {dim} does not match n={n}, L={degree}")));
    }
    let w1 = lines.matrix("W1", hidden, dim)?;
    let w2 = lines.matrix("W2", 1, hidden)?.index_axis_move(Axis(0), 0);
    let wc = if kind.has_condition_branch() {
        Some(lines.matrix("Wc", hidden, dim)?)
    } else {
        None
    };
    Ok(Checkpoint {
        family,
        config,
        steps_done,
        weights: ModelWeights::new(kind, w1, w2, wc)?,
    })
}
