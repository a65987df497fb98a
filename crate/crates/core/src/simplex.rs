//! Simplex codes and the simplex-net that emits one code per
//! (architecture, channel) pair.
//!
//! The net has an architecture branch over the `L·O` one-hot encoding and
//! an optional channel branch over the `L` raw width ratios, each a
//! two-layer ReLU perceptron of width `h`. Branch features are concatenated
//! and a linear head produces `K` logits; softmax projects them onto the
//! simplex.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::space::{SpaceSpec, Subnet};
use crate::supernet::WeightDictionary;
use crate::tensor::Tensor;

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Nonnegative coefficients summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexCode {
    coeffs: Vec<f64>,
}

impl SimplexCode {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        let code = SimplexCode { coeffs };
        code.validate()?;
        Ok(code)
    }

    /// Wraps coefficients without checking them.
    pub fn from_raw(coeffs: Vec<f64>) -> Self {
        SimplexCode { coeffs }
    }

    pub fn uniform(k: usize) -> Self {
        SimplexCode {
            coeffs: vec![1.0 / k as f64; k],
        }
    }

    /// The `i`-th vertex `e_i`.
    pub fn vertex(k: usize, i: usize) -> Self {
        let mut coeffs = vec![0.0; k];
        coeffs[i] = 1.0;
        SimplexCode { coeffs }
    }

    /// Uniform draw on the simplex: normalized independent exponentials.
    pub fn sample_uniform<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = e.iter().sum();
        SimplexCode {
            coeffs: e.into_iter().map(|v: f64| v / s).collect(),
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(Error::Contract("empty simplex code".into()));
        }
        if self.coeffs.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::Contract(format!("negative or non-finite code {:?}", self.coeffs)));
        }
        let sum: f64 = self.coeffs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Contract(format!("code sums to {sum}")));
        }
        Ok(())
    }

    pub fn renormalized(&self) -> SimplexCode {
        let sum: f64 = self.coeffs.iter().sum();
        if sum == 1.0 {
            return self.clone();
        }
        SimplexCode {
            coeffs: self.coeffs.iter().map(|c| c / sum).collect(),
        }
    }

    pub fn dot(&self, other: &SimplexCode) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn linf_distance(&self, other: &SimplexCode) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplexNetShape {
    pub k: usize,
    pub hidden: usize,
    pub arch_in: usize,
    /// `Some(L)` when the channel branch is present.
    pub channel_in: Option<usize>,
}

/// Parameters in a fixed order: arch branch (w1, b1, w2, b2), channel
/// branch (w1, b1, w2, b2) when present, then head (w, b). Weights are
/// `[out × in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexNetParams {
    shape: SimplexNetShape,
    tensors: Vec<Tensor>,
}

impl SimplexNetParams {
    /// Branch layers use uniform fan-in initialization; the head starts at
    /// zero, so every code is uniform before training.
    pub fn new(space: &SpaceSpec, k: usize, hidden: usize, channel_branch: bool, seed: u64) -> Result<Self> {
        if k == 0 || hidden == 0 {
            return Err(Error::Config("simplex-net needs K ≥ 1 and hidden ≥ 1".into()));
        }
        let shape = SimplexNetShape {
            k,
            hidden,
            arch_in: space.num_layers * space.num_ops(),
            channel_in: channel_branch.then_some(space.num_layers),
        };
        let mut rng = seeded(seed, 0x51_4d);
        let mut layer = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let w = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            let b = (0..rows).map(|_| rng.random_range(-bound..bound)).collect();
            [Tensor::matrix(rows, cols, w).unwrap(), Tensor::vector(b).unwrap()]
        };
        let mut tensors = Vec::new();
        tensors.extend(layer(hidden, shape.arch_in));
        tensors.extend(layer(hidden, hidden));
        if let Some(c) = shape.channel_in {
            tensors.extend(layer(hidden, c));
            tensors.extend(layer(hidden, hidden));
        }
        let fused = if shape.channel_in.is_some() { 2 * hidden } else { hidden };
        tensors.push(Tensor::zeros(&[k, fused]));
        tensors.push(Tensor::zeros(&[k]));
        Ok(SimplexNetParams { shape, tensors })
    }

    pub fn shape(&self) -> SimplexNetShape {
        self.shape
    }

    pub fn k(&self) -> usize {
        self.shape.k
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Ids of the head weight and bias.
    pub fn head_ids(&self) -> (usize, usize) {
        (self.tensors.len() - 2, self.tensors.len() - 1)
    }

    fn check(&self, space: &SpaceSpec, subnet: &Subnet) -> Result<()> {
        let arch_len = subnet.arch.choices.len() * space.num_ops();
        if arch_len != self.shape.arch_in {
            return Err(Error::shape(
                "generate_code",
                format!("architecture encoding length {arch_len}, expected {}", self.shape.arch_in),
            ));
        }
        if let Some(c) = self.shape.channel_in {
            if subnet.channels.ratios.len() != c {
                return Err(Error::shape(
                    "generate_code",
                    format!("channel encoding length {}, expected {c}", subnet.channels.ratios.len()),
                ));
            }
        }
        Ok(())
    }
}

/// Records the simplex-net on a graph for a batch of subnets; returns the
/// `[m × K]` code matrix and the inserted parameter vars by tensor id.
pub fn graph_codes(
    g: &mut Graph,
    params: &SimplexNetParams,
    space: &SpaceSpec,
    subnets: &[Subnet],
    trainable: bool,
) -> Result<(Var, Vec<(usize, Var)>)> {
    if subnets.is_empty() {
        return Err(Error::Input("no subnets to encode".into()));
    }
    for s in subnets {
        params.check(space, s)?;
    }
    let m = subnets.len();
    let vars: Vec<(usize, Var)> = params
        .tensors
        .iter()
        .enumerate()
        .map(|(id, t)| {
            let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            (id, v)
        })
        .collect();
    let p = |i: usize| vars[i].1;

    let mlp = |g: &mut Graph, x: Var, base: usize| -> Result<Var> {
        let mut h = x;
        for layer in 0..2 {
            let wt = g.transpose(p(base + 2 * layer))?;
            let z = g.matmul(h, wt)?;
            let z = g.add_row(z, p(base + 2 * layer + 1))?;
            h = g.relu(z);
        }
        Ok(h)
    };

    let arch: Vec<f64> = subnets
        .iter()
        .flat_map(|s| s.arch.one_hot(space.num_ops()))
        .collect();
    let arch = g.constant(Tensor::matrix(m, params.shape.arch_in, arch)?);
    let mut features = mlp(g, arch, 0)?;
    let mut next = 4;
    if let Some(c) = params.shape.channel_in {
        let chan: Vec<f64> = subnets.iter().flat_map(|s| s.channels.ratios.clone()).collect();
        let chan = g.constant(Tensor::matrix(m, c, chan)?);
        let cf = mlp(g, chan, 4)?;
        features = g.concat_cols(features, cf)?;
        next = 8;
    }
    let wt = g.transpose(p(next))?;
    let logits = g.matmul(features, wt)?;
    let logits = g.add_row(logits, p(next + 1))?;
    Ok((g.softmax(logits), vars))
}

/// Codes for a batch of subnets.
pub fn generate_codes(params: &SimplexNetParams, space: &SpaceSpec, subnets: &[Subnet]) -> Result<Vec<SimplexCode>> {
    let mut g = Graph::new();
    let (codes, _) = graph_codes(&mut g, params, space, subnets, false)?;
    let t = g.value(codes);
    Ok((0..subnets.len())
        .map(|i| SimplexCode::from_raw(t.row(i).to_vec()))
        .collect())
}

pub fn generate_code(params: &SimplexNetParams, space: &SpaceSpec, subnet: &Subnet) -> Result<SimplexCode> {
    Ok(generate_codes(params, space, std::slice::from_ref(subnet))?.remove(0))
}

/// Similarity of two merged supernets at one slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    /// `λ₁ᵀ ΘᵀΘ λ₂`.
    pub similarity: f64,
    /// `‖ΘᵀΘ‖_F · ‖λ₁λ₂ᵀ‖_F`, the Cauchy–Schwarz upper bound.
    pub bound: f64,
    /// `λ₁ᵀλ₂`.
    pub inner: f64,
}

pub fn code_similarity(
    a: &SimplexCode,
    b: &SimplexCode,
    dict: &WeightDictionary,
    slot: usize,
) -> Result<Similarity> {
    let k = dict.k();
    if a.len() != k || b.len() != k {
        return Err(Error::shape("code_similarity", format!("codes must have length {k}")));
    }
    if slot >= dict.slots().len() {
        return Err(Error::Input(format!("slot {slot} does not exist")));
    }
    let cols = dict.slot_columns(slot);
    gram_similarity(a, b, &cols)
}

/// As [`code_similarity`] for an explicit dictionary matrix given by its
/// `K` columns.
pub fn gram_similarity(a: &SimplexCode, b: &SimplexCode, columns: &[Vec<f64>]) -> Result<Similarity> {
    let k = columns.len();
    if a.len() != k || b.len() != k {
        return Err(Error::shape("code_similarity", format!("codes must have length {k}")));
    }
    let gram: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| columns[i].iter().zip(&columns[j]).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();
    let (la, lb) = (a.coeffs(), b.coeffs());
    let mut similarity = 0.0;
    for i in 0..k {
        for j in 0..k {
            similarity += la[i] * gram[i][j] * lb[j];
        }
    }
    let gram_norm = gram.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let outer_norm = la.iter().map(|v| v * v).sum::<f64>().sqrt() * lb.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(Similarity {
        similarity,
        bound: gram_norm * outer_norm,
        inner: a.dot(b),
    })
}
