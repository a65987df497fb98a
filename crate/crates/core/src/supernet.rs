//! K-shot weight dictionary, per-path weight merging, ordinal channel
//! slicing and subnet forward passes.
//!
//! Every non-identity operation slot (and the classifier head) keeps `K`
//! weight/bias copies. A path merges them with its simplex code before any
//! forward computation, so the forward itself has the same cost for every
//! `K`. Channel widths take the leftmost rows of each weight and the
//! matching leftmost input columns of the next layer.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::simplex::SimplexCode;
use crate::space::{OpKind, SpaceSpec, Subnet};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotId {
    Layer { layer: usize, op: usize },
    Head,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotInfo {
    pub id: SlotId,
    pub rows: usize,
    pub cols: usize,
    pub relu: bool,
}

impl SlotInfo {
    /// Flattened weight plus bias length.
    pub fn dim(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

/// `K` weight and bias copies for every linear slot of the space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDictionary {
    k: usize,
    slots: Vec<SlotInfo>,
    /// Laid out as `[(slot · K + copy) · 2]` = weight, `+ 1` = bias.
    tensors: Vec<Tensor>,
}

impl WeightDictionary {
    /// Copy `k` is drawn from its own seed stream with uniform fan-in
    /// scaling, `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new(space: &SpaceSpec, k: usize, seed: u64) -> Result<Self> {
        space.validate()?;
        if k == 0 {
            return Err(Error::Config("K must be ≥ 1".into()));
        }
        let mut slots = Vec::new();
        for layer in 0..space.num_layers {
            for (op, kind) in space.ops.iter().enumerate() {
                if let OpKind::Linear { hidden, relu } = *kind {
                    slots.push(SlotInfo {
                        id: SlotId::Layer { layer, op },
                        rows: hidden,
                        cols: space.max_in_width(layer),
                        relu,
                    });
                }
            }
        }
        slots.push(SlotInfo {
            id: SlotId::Head,
            rows: space.num_classes,
            cols: space.max_in_width(space.num_layers),
            relu: false,
        });

        let mut per_copy: Vec<Vec<(Tensor, Tensor)>> = Vec::with_capacity(k);
        for copy in 0..k {
            let mut rng = seeded(seed, copy as u64);
            per_copy.push(
                slots
                    .iter()
                    .map(|s| init_linear(&mut rng, s.rows, s.cols))
                    .collect(),
            );
        }
        let mut tensors = Vec::with_capacity(slots.len() * k * 2);
        for s in 0..slots.len() {
            for copy in per_copy.iter() {
                let (w, b) = &copy[s];
                tensors.push(w.clone());
                tensors.push(b.clone());
            }
        }
        Ok(WeightDictionary { k, slots, tensors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn slots(&self) -> &[SlotInfo] {
        &self.slots
    }

    pub fn slot_index(&self, id: SlotId) -> Option<usize> {
        self.slots.iter().position(|s| s.id == id)
    }

    pub fn weight_id(&self, slot: usize, copy: usize) -> usize {
        (slot * self.k + copy) * 2
    }

    pub fn bias_id(&self, slot: usize, copy: usize) -> usize {
        self.weight_id(slot, copy) + 1
    }

    pub fn weight(&self, slot: usize, copy: usize) -> &Tensor {
        &self.tensors[self.weight_id(slot, copy)]
    }

    pub fn bias(&self, slot: usize, copy: usize) -> &Tensor {
        &self.tensors[self.bias_id(slot, copy)]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalars across all copies.
    pub fn num_weights(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Slots a path passes through, in forward order, head last.
    pub fn path_slots(&self, space: &SpaceSpec, subnet: &Subnet) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = subnet
            .arch
            .choices
            .iter()
            .enumerate()
            .map(|(layer, &op)| self.slot_index(SlotId::Layer { layer, op }))
            .collect();
        out.push(self.slot_index(SlotId::Head));
        debug_assert_eq!(out.len(), space.num_layers + 1);
        out
    }

    /// Flattened `[weight, bias]` of each copy of a slot: the columns of
    /// the slot's `d × K` dictionary matrix.
    pub fn slot_columns(&self, slot: usize) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|c| {
                let mut col = self.weight(slot, c).data().to_vec();
                col.extend_from_slice(self.bias(slot, c).data());
                col
            })
            .collect()
    }
}

fn init_linear<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    let w = Tensor::matrix(rows, cols, draw(rows * cols)).expect("positive dims");
    let b = Tensor::vector(draw(rows)).expect("positive dims");
    (w, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    pub weight: Tensor,
    pub bias: Tensor,
    pub relu: bool,
}

/// Weights of one path after merging (and optionally slicing).
#[derive(Clone, Debug, PartialEq)]
pub struct MergedSubnet {
    pub subnet: Subnet,
    pub code: SimplexCode,
    /// `None` for identity layers.
    pub layers: Vec<Option<LinearWeights>>,
    pub head: LinearWeights,
}

/// `θ̃ = Σ_k λ_k θ_k` for every slot on the path. Shapes stay at full
/// dictionary size; see [`slice_channels`].
pub fn merge_weights(
    dict: &WeightDictionary,
    space: &SpaceSpec,
    subnet: &Subnet,
    code: &SimplexCode,
) -> Result<MergedSubnet> {
    space.check_subnet(subnet)?;
    if code.len() != dict.k() {
        return Err(Error::Contract(format!(
            "code has {} coefficients, dictionary has K = {}",
            code.len(),
            dict.k()
        )));
    }
    code.validate()?;
    let code = code.renormalized();
    let coeffs = code.coeffs();
    let merge_slot = |slot: usize| -> LinearWeights {
        let mut w: Vec<f64> = dict.weight(slot, 0).data().iter().map(|v| coeffs[0] * v).collect();
        let mut b: Vec<f64> = dict.bias(slot, 0).data().iter().map(|v| coeffs[0] * v).collect();
        for (c, &l) in coeffs.iter().enumerate().skip(1) {
            for (o, v) in w.iter_mut().zip(dict.weight(slot, c).data()) {
                *o += l * v;
            }
            for (o, v) in b.iter_mut().zip(dict.bias(slot, c).data()) {
                *o += l * v;
            }
        }
        let info = &dict.slots()[slot];
        LinearWeights {
            weight: Tensor::matrix(info.rows, info.cols, w).expect("slot shape"),
            bias: Tensor::vector(b).expect("slot shape"),
            relu: info.relu,
        }
    };
    let path = dict.path_slots(space, subnet);
    let (layer_slots, head_slot) = path.split_at(space.num_layers);
    Ok(MergedSubnet {
        subnet: subnet.clone(),
        code: code.clone(),
        layers: layer_slots.iter().map(|s| s.map(merge_slot)).collect(),
        head: merge_slot(head_slot[0].expect("head slot exists")),
    })
}

/// Restricts every merged weight to the leftmost rows kept by the path's
/// channel ratios and the leftmost input columns produced upstream.
pub fn slice_channels(merged: &MergedSubnet, space: &SpaceSpec) -> Result<MergedSubnet> {
    let (dims, head_in) = space.layer_dims(&merged.subnet);
    let slice = |lw: &LinearWeights, rows: usize, cols: usize| -> Result<LinearWeights> {
        Ok(LinearWeights {
            weight: tensor::slice_leading(&lw.weight, rows, cols)?,
            bias: tensor::slice_leading(&lw.bias, 1, rows)?,
            relu: lw.relu,
        })
    };
    let layers = merged
        .layers
        .iter()
        .zip(&dims)
        .map(|(lw, d)| match (lw, d) {
            (Some(lw), Some(d)) => slice(lw, d.out_width, d.in_width).map(Some),
            (None, None) => Ok(None),
            _ => Err(Error::Contract("merged layers disagree with subnet".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MergedSubnet {
        subnet: merged.subnet.clone(),
        code: merged.code.clone(),
        layers,
        head: slice(&merged.head, space.num_classes, head_in)?,
    })
}

/// Merged and sliced weights, ready for [`forward`].
pub fn materialize(
    dict: &WeightDictionary,
    space: &SpaceSpec,
    subnet: &Subnet,
    code: &SimplexCode,
) -> Result<MergedSubnet> {
    slice_channels(&merge_weights(dict, space, subnet, code)?, space)
}

fn apply_linear(x: &Tensor, lw: &LinearWeights) -> Result<Tensor> {
    if x.cols() != lw.weight.cols() {
        return Err(Error::shape(
            "forward",
            format!("features have width {}, weight expects {}", x.cols(), lw.weight.cols()),
        ));
    }
    let h = tensor::add_row(&tensor::matmul(x, &tensor::transpose(&lw.weight)?)?, &lw.bias)?;
    Ok(if lw.relu { tensor::relu(&h) } else { h })
}

/// Logits `[batch × classes]` of a sliced merged subnet. Identity layers
/// pass features through unchanged.
pub fn forward(subnet: &MergedSubnet, batch: &Tensor) -> Result<Tensor> {
    let mut h = batch.clone();
    for lw in subnet.layers.iter().flatten() {
        h = apply_linear(&h, lw)?;
    }
    apply_linear(&h, &subnet.head)
}

/// Graph-side handles for the dictionary tensors a path touched.
#[derive(Debug, Default)]
pub struct PathVars {
    /// `(dictionary tensor id, graph var)` for every inserted copy.
    pub inserted: Vec<(usize, Var)>,
}

/// Records merge → slice → forward of one path on a graph. Dictionary
/// tensors are inserted as trainable leaves when `trainable`, otherwise as
/// constants.
pub fn graph_forward(
    g: &mut Graph,
    dict: &WeightDictionary,
    space: &SpaceSpec,
    subnet: &Subnet,
    code: Var,
    x: Var,
    trainable: bool,
) -> Result<(Var, PathVars)> {
    let (dims, head_in) = space.layer_dims(subnet);
    let path = dict.path_slots(space, subnet);
    let mut vars = PathVars::default();
    let mut h = x;
    let mut insert = |g: &mut Graph, id: usize| -> Var {
        let t = dict.tensors()[id].clone();
        let v = if trainable { g.param(t) } else { g.constant(t) };
        vars.inserted.push((id, v));
        v
    };
    for (layer, slot) in path.iter().enumerate() {
        let Some(slot) = *slot else { continue };
        let (rows, cols) = if layer < space.num_layers {
            let d = dims[layer].expect("linear layer has dims");
            (d.out_width, d.in_width)
        } else {
            (space.num_classes, head_in)
        };
        let ws: Vec<Var> = (0..dict.k()).map(|c| insert(g, dict.weight_id(slot, c))).collect();
        let bs: Vec<Var> = (0..dict.k()).map(|c| insert(g, dict.bias_id(slot, c))).collect();
        let w = g.combine(code, &ws)?;
        let b = g.combine(code, &bs)?;
        let w = g.slice(w, rows, cols)?;
        let b = g.slice(b, 1, rows)?;
        let wt = g.transpose(w)?;
        let z = g.matmul(h, wt)?;
        let z = g.add_row(z, b)?;
        h = if dict.slots()[slot].relu { g.relu(z) } else { z };
    }
    Ok((h, vars))
}

/// Flattened stand-alone weights of every path through one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct StandAloneMatrix {
    pub d: usize,
    pub columns: Vec<Vec<f64>>,
    pub path_ids: Vec<usize>,
}

impl StandAloneMatrix {
    pub fn new(columns: Vec<Vec<f64>>, path_ids: Vec<usize>) -> Result<Self> {
        let d = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || d == 0 {
            return Err(Error::EmptyMatrix("stand-alone matrix has no entries".into()));
        }
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::shape("stand_alone_matrix", "columns differ in length"));
        }
        Ok(StandAloneMatrix {
            d,
            columns,
            path_ids,
        })
    }

    pub fn num_paths(&self) -> usize {
        self.columns.len()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.columns.len(), |r, c| self.columns[c][r])
    }
}

/// Singular values in descending order.
pub fn singular_values(w: &StandAloneMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = w.to_matrix().singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `min_{rank ≤ K} ‖W − ΘΛ‖_F`, via the truncated SVD reconstruction.
pub fn approximation_gap(w: &StandAloneMatrix, k: usize) -> Result<f64> {
    let m = w.to_matrix();
    let max_rank = w.d.min(w.num_paths());
    if k == 0 || k > max_rank {
        return Err(Error::Input(format!("K = {k} outside 1..={max_rank}")));
    }
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut approx = DMatrix::<f64>::zeros(m.nrows(), m.ncols());
    for &i in order.iter().take(k) {
        approx += svd.singular_values[i] * u.column(i) * vt.row(i);
    }
    Ok((m - approx).norm())
}
