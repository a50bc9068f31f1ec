//! The three one-hidden-layer regressors and exact gradients of the mean
//! quadratic loss.
//!
//! * NN:   `ŷ = W2 · σ(W1 x)`
//! * PKNN: `ŷ = W2 · E(W1 x)` with the entropy activation `E(z) = z log₂ z`
//! * DBNN: `ŷ = W2 · (E(W1 x) ∘ σ(Wc x))`
//!
//! `x` is a feature vector whose first entry is the constant 1, which is the
//! only source of bias. Batches are `M × D` matrices with one sample per row.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Below this pre-activation the entropy derivative is taken to be zero.
pub const ENTROPY_KINK: f64 = 1e-12;
/// Per-entry bound applied to every gradient.
pub const GRADIENT_CLIP: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Nn,
    Pknn,
    Dbnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Nn, ModelKind::Pknn, ModelKind::Dbnn];

    pub fn has_condition_branch(self) -> bool {
        self == ModelKind::Dbnn
    }

    pub fn uses_entropy(self) -> bool {
        self != ModelKind::Nn
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nn => "NN",
            ModelKind::Pknn => "PKNN",
            ModelKind::Dbnn => "DBNN",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(ModelKind::Nn),
            "pknn" => Ok(ModelKind::Pknn),
            "dbnn" => Ok(ModelKind::Dbnn),
            _ => Err(Error::ConfigInvalid(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Weights of one network. `w1` and `wcond` are `F × D`, `w2` has length `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    kind: ModelKind,
    pub(crate) w1: Array2<f64>,
    pub(crate) w2: Array1<f64>,
    pub(crate) wcond: Option<Array2<f64>>,
}

impl ModelWeights {
    pub fn new(kind: ModelKind, w1: Array2<f64>, w2: Array1<f64>, wcond: Option<Array2<f64>>) -> Result<Self> {
        let (f, d) = w1.dim();
        if f == 0 || d == 0 {
            return Err(Error::ShapeMismatch("W1 must be non-empty".into()));
        }
        if w2.len() != f {
            return Err(Error::ShapeMismatch(format!("W2 has {} entries, W1 has {f} rows", w2.len())));
        }
        match (&wcond, kind.has_condition_branch()) {
            (Some(wc), true) if wc.dim() != (f, d) => {
                return Err(Error::ShapeMismatch(format!(
                    "Wcond is {:?}, W1 is {:?}",
                    wc.dim(),
                    (f, d)
                )));
            }
            (None, true) => return Err(Error::ShapeMismatch("DBNN requires Wcond".into())),
            (Some(_), false) => return Err(Error::ShapeMismatch(format!("{kind} has no condition branch"))),
            _ => {}
        }
        let w = ModelWeights { kind, w1, w2, wcond };
        if !w.all_finite() {
            return Err(Error::ConfigInvalid("weights contain non-finite entries".into()));
        }
        Ok(w)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Hidden width `F`.
    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    /// Feature dimension `D`.
    pub fn feature_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn w1(&self) -> ArrayView2<'_, f64> {
        self.w1.view()
    }

    pub fn w2(&self) -> ArrayView1<'_, f64> {
        self.w2.view()
    }

    pub fn wcond(&self) -> Option<ArrayView2<'_, f64>> {
        self.wcond.as_ref().map(|w| w.view())
    }

    pub fn num_parameters(&self) -> usize {
        self.w1.len() + self.w2.len() + self.wcond.as_ref().map_or(0, |w| w.len())
    }

    pub fn all_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|v| v.is_finite())
            && self.wcond.as_ref().is_none_or(|w| w.iter().all(|v| v.is_finite()))
    }

    /// `w ← w − lr · g`.
    pub fn apply_gradient(&mut self, g: &Gradients, lr: f64) {
        self.w1.scaled_add(-lr, &g.w1);
        self.w2.scaled_add(-lr, &g.w2);
        if let (Some(w), Some(gw)) = (self.wcond.as_mut(), g.wcond.as_ref()) {
            w.scaled_add(-lr, gw);
        }
    }
}

/// Same layout as [`ModelWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub w2: Array1<f64>,
    pub wcond: Option<Array2<f64>>,
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `E(z) = z log₂ z` for `z > 0`, else 0.
pub fn entropy_activation(z: f64) -> f64 {
    if z > 0.0 {
        z * z.log2()
    } else {
        0.0
    }
}

/// `E′(z) = log₂ z + 1/ln 2` above [`ENTROPY_KINK`], else 0.
pub fn entropy_activation_derivative(z: f64) -> f64 {
    if z > ENTROPY_KINK {
        z.log2() + std::f64::consts::LOG2_E
    } else {
        0.0
    }
}

/// Intermediate quantities of one forward pass, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub kind: ModelKind,
    /// `W1 x`.
    pub z1: Array2<f64>,
    /// `Wc x` (DBNN only).
    pub zc: Option<Array2<f64>>,
    /// `σ(z1)` for NN, `E(z1)` otherwise.
    pub h: Array2<f64>,
    /// `σ(zc)` (DBNN only).
    pub hc: Option<Array2<f64>>,
    /// The vector fed to the output layer: `h ∘ hc` for DBNN, `h` otherwise.
    pub yp: Array2<f64>,
    pub prediction: Array1<f64>,
}

fn check_batch(w: &ModelWeights, x: &ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != w.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} features, model expects {}",
            x.ncols(),
            w.feature_dim()
        )));
    }
    Ok(())
}

/// Forward pass over a batch.
pub fn forward(w: &ModelWeights, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
    check_batch(w, &x)?;
    let z1 = x.dot(&w.w1.t());
    let zc = w.wcond.as_ref().map(|wc| x.dot(&wc.t()));
    Ok(forward_from_preactivations(w.kind, w.w2.view(), z1, zc))
}

/// Predictions only.
pub fn predict(w: &ModelWeights, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    forward(w, x).map(|t| t.prediction)
}

/// Completes a forward pass given the hidden pre-activations. Training code
/// that obtains `z1` by other means (for example incrementally) shares the
/// rest of the computation through this function.
pub fn forward_from_preactivations(
    kind: ModelKind,
    w2: ArrayView1<'_, f64>,
    z1: Array2<f64>,
    zc: Option<Array2<f64>>,
) -> ForwardTrace {
    let h = match kind {
        ModelKind::Nn => z1.mapv(sigmoid),
        ModelKind::Pknn | ModelKind::Dbnn => z1.mapv(entropy_activation),
    };
    let hc = zc.as_ref().map(|zc| zc.mapv(sigmoid));
    let yp = match &hc {
        Some(hc) => &h * hc,
        None => h.clone(),
    };
    let prediction = yp.dot(&w2);
    ForwardTrace {
        kind,
        z1,
        zc,
        h,
        hc,
        yp,
        prediction,
    }
}

/// `(1/M) Σ (y_i − ŷ_i)²`.
pub fn quadratic_loss(prediction: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            prediction.len(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = prediction.iter().zip(target).map(|(p, y)| (y - p).powi(2)).sum();
    Ok(sum / target.len() as f64)
}

/// Loss gradients with respect to the output weights and the hidden
/// pre-activations, before they are contracted with the inputs.
#[derive(Debug, Clone)]
pub struct PreactivationGradients {
    pub w2: Array1<f64>,
    pub z1: Array2<f64>,
    pub zc: Option<Array2<f64>>,
}

pub fn preactivation_gradients(
    w2: ArrayView1<'_, f64>,
    target: ArrayView1<'_, f64>,
    trace: &ForwardTrace,
) -> Result<PreactivationGradients> {
    let m = target.len();
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if trace.prediction.len() != m || trace.z1.ncols() != w2.len() {
        return Err(Error::ShapeMismatch("trace does not match targets or weights".into()));
    }
    // ∂ℓ/∂ŷ_i
    let g = (&trace.prediction - &target) * (2.0 / m as f64);
    let gw2 = trace.yp.t().dot(&g);

    let mut dz1 = Array2::zeros(trace.z1.dim());
    let mut dzc = trace.zc.as_ref().map(|zc| Array2::zeros(zc.dim()));
    for (i, &gi) in g.iter().enumerate() {
        for (j, &w2j) in w2.iter().enumerate() {
            // ∂ℓ/∂yp_ij
            let gy = gi * w2j;
            let z = trace.z1[(i, j)];
            dz1[(i, j)] = match trace.kind {
                ModelKind::Nn => {
                    let s = trace.h[(i, j)];
                    gy * s * (1.0 - s)
                }
                ModelKind::Pknn => gy * entropy_activation_derivative(z),
                ModelKind::Dbnn => {
                    let hc = trace.hc.as_ref().expect("DBNN trace carries hc")[(i, j)];
                    if let Some(dzc) = dzc.as_mut() {
                        dzc[(i, j)] = gy * trace.h[(i, j)] * hc * (1.0 - hc);
                    }
                    gy * hc * entropy_activation_derivative(z)
                }
            };
        }
    }
    Ok(PreactivationGradients { w2: gw2, z1: dz1, zc: dzc })
}

pub(crate) fn clip(a: &mut Array2<f64>) {
    a.mapv_inplace(clip_value);
}

pub(crate) fn clip_value(v: f64) -> f64 {
    v.clamp(-GRADIENT_CLIP, GRADIENT_CLIP)
}

/// Exact gradients of [`quadratic_loss`] at `w`, clipped per entry to
/// `±GRADIENT_CLIP`.
pub fn backward(
    w: &ModelWeights,
    x: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
    trace: &ForwardTrace,
) -> Result<Gradients> {
    check_batch(w, &x)?;
    if x.nrows() != target.len() || trace.kind != w.kind {
        return Err(Error::ShapeMismatch("trace, inputs and targets disagree".into()));
    }
    let pre = preactivation_gradients(w.w2.view(), target, trace)?;
    let mut g1 = pre.z1.t().dot(&x);
    clip(&mut g1);
    let gc = pre.zc.map(|dzc| {
        let mut g = dzc.t().dot(&x);
        clip(&mut g);
        g
    });
    Ok(Gradients {
        w1: g1,
        w2: pre.w2.mapv(clip_value),
        wcond: gc,
    })
}

/// Loss and gradients in one call.
pub fn loss_and_gradients(w: &ModelWeights, x: ArrayView2<'_, f64>, target: ArrayView1<'_, f64>) -> Result<(f64, Gradients)> {
    let trace = forward(w, x)?;
    let loss = quadratic_loss(trace.prediction.view(), target)?;
    Ok((loss, backward(w, x, target, &trace)?))
}

/// Uniform initialization from a ChaCha20 stream: `W1`, then `W2`, then
/// `Wc`, each row-major. Bounds are `1/√D` for the input layers and `1/√F`
/// for the output layer.
pub fn init_weights(kind: ModelKind, hidden: usize, dim: usize, seed: u64) -> Result<ModelWeights> {
    if hidden == 0 || dim == 0 {
        return Err(Error::ConfigInvalid(format!("F and D must be positive (got F={hidden}, D={dim})")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let b_in = 1.0 / (dim as f64).sqrt();
    let b_out = 1.0 / (hidden as f64).sqrt();
    let u_in = Uniform::new_inclusive(-b_in, b_in).expect("finite bounds");
    let u_out = Uniform::new_inclusive(-b_out, b_out).expect("finite bounds");
    let w1 = Array2::from_shape_simple_fn((hidden, dim), || u_in.sample(&mut rng));
    let w2 = Array1::from_shape_simple_fn(hidden, || u_out.sample(&mut rng));
    let wcond = kind
        .has_condition_branch()
        .then(|| Array2::from_shape_simple_fn((hidden, dim), || u_in.sample(&mut rng)));
    ModelWeights::new(kind, w1, w2, wcond)
}

/// Hidden units whose entropy input is `≤ 0` on every sample of the trace.
/// Such a unit outputs exactly 0 and receives no gradient through `W1`.
/// Always empty for NN.
pub fn dead_units(trace: &ForwardTrace) -> Vec<usize> {
    if !trace.kind.uses_entropy() {
        return Vec::new();
    }
    (0..trace.z1.ncols())
        .filter(|&j| trace.z1.column(j).iter().all(|&z| z <= 0.0))
        .collect()
}

/// True when an entropy model's output is identically zero on the batch
/// because every hidden unit sits in the dead zone of `E`.
pub fn is_degenerate(trace: &ForwardTrace) -> bool {
    trace.kind.uses_entropy() && dead_units(trace).len() == trace.z1.ncols()
}
