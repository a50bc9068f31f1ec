//! Power-series feature map: all monomials of a parameter vector up to a
//! total degree.
//!
//! Monomials are listed in graded lexicographic order (ascending total
//! degree, ties broken lexicographically on the exponent tuple), so the first
//! feature is the constant 1 and, for `n = 2, L = 2`, the order is
//! `1, x2, x1, x2², x1x2, x1²`.

use std::collections::HashMap;
use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Number of monomials in `n` variables of total degree at most `degree`,
/// i.e. `C(n + degree, n)`.
pub fn feature_dim(n: usize, degree: usize) -> Result<usize> {
    if n == 0 || degree == 0 {
        return Err(Error::ConfigInvalid(format!(
            "feature map needs n >= 1 and L >= 1 (got n={n}, L={degree})"
        )));
    }
    // C(n+L, k) built up multiplicatively; every partial product is an exact binomial.
    let k = n.min(degree);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        acc = acc
            .checked_mul((n + degree) as u128 - k as u128 + i)
            .ok_or(Error::Overflow { n, degree })?
            / i;
    }
    usize::try_from(acc).map_err(|_| Error::Overflow { n, degree })
}

/// Exponent tuple `(a_1, …, a_n)` of one monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `Π x_i^{a_i}` evaluated directly, with `0⁰ = 1`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&a, &xi)| xi.powi(a as i32))
            .product()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// All multi-indices with `n` entries and total degree `≤ degree`, in
/// graded lexicographic order.
pub fn enumerate_multi_indices(n: usize, degree: usize) -> Result<Vec<MultiIndex>> {
    let dim = feature_dim(n, degree)?;
    let mut out = Vec::with_capacity(dim);
    let mut current = vec![0u32; n];
    for d in 0..=degree as u32 {
        push_compositions(&mut out, &mut current, 0, d);
    }
    debug_assert_eq!(out.len(), dim);
    Ok(out)
}

fn push_compositions(out: &mut Vec<MultiIndex>, current: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex(current.to_vec()));
        return;
    }
    for a in 0..=remaining {
        current[pos] = a;
        push_compositions(out, current, pos + 1, remaining - a);
    }
    current[pos] = 0;
}

/// A reusable feature map for fixed `(n, L)`.
///
/// Each monomial of degree `d ≥ 1` is computed as an earlier monomial of
/// degree `d − 1` times one variable, so a full transform costs one
/// multiplication per feature.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    n: usize,
    degree: usize,
    indices: Vec<MultiIndex>,
    /// `(parent feature, variable)` for features `1..dim`.
    recipe: Vec<(usize, usize)>,
}

impl FeatureMap {
    pub fn new(n: usize, degree: usize) -> Result<Self> {
        let indices = enumerate_multi_indices(n, degree)?;
        let position: HashMap<&MultiIndex, usize> = indices.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let mut recipe = Vec::with_capacity(indices.len().saturating_sub(1));
        for idx in &indices[1..] {
            let var = idx.0.iter().position(|&a| a > 0).expect("non-constant monomial");
            let mut parent = idx.0.clone();
            parent[var] -= 1;
            let p = position[&MultiIndex(parent)];
            recipe.push((p, var));
        }
        Ok(FeatureMap {
            n,
            degree,
            indices,
            recipe,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Writes `Φ(x)` into `out` (length [`dim`](Self::dim)).
    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "feature map expects {} parameters, got {}",
                self.n,
                x.len()
            )));
        }
        if out.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature buffer has length {}, expected {}",
                out.len(),
                self.dim()
            )));
        }
        out[0] = 1.0;
        for (j, &(parent, var)) in self.recipe.iter().enumerate() {
            out[j + 1] = out[parent] * x[var];
        }
        Ok(())
    }

    pub fn transform(&self, x: &[f64]) -> Result<FeatureVector> {
        let mut values = vec![0.0; self.dim()];
        self.transform_into(x, &mut values)?;
        Ok(FeatureVector(values))
    }

    /// Feature matrix with one row per input vector.
    pub fn transform_batch<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> Result<Array2<f64>> {
        let dim = self.dim();
        let mut out = Array2::zeros((rows.len(), dim));
        out.as_slice_mut()
            .expect("fresh arrays are contiguous")
            .par_chunks_mut(dim)
            .zip(rows.par_iter())
            .try_for_each(|(dst, src)| self.transform_into(src.as_ref(), dst))?;
        Ok(out)
    }
}

/// `Φ(x)`; the first component is always 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One-shot `Φ(x)` for degree `degree`.
pub fn feature_map(x: &[f64], degree: usize) -> Result<FeatureVector> {
    FeatureMap::new(x.len(), degree)?.transform(x)
}
