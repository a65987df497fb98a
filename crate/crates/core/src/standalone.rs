//! Plain single-copy networks with no merge step. Used to train subnets
//! from scratch and as an independent one-shot reference trainer.

use crate::autodiff::{Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::{cosine_lr, Sgd};
use crate::rng::seeded;
use crate::space::{self, SpaceSpec, Subnet};
use crate::supernet::{SlotId, WeightDictionary};
use crate::tensor::{self, Tensor};
use crate::trainer::{epoch_batches, TrainConfig, STREAM_DATA, STREAM_PATHS};

/// One weight and bias per slot, laid out like a `K = 1` dictionary and
/// initialized identically to its single copy.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainNet {
    layout: WeightDictionary,
}

impl PlainNet {
    pub fn new(space: &SpaceSpec, seed: u64) -> Result<Self> {
        Ok(PlainNet {
            layout: WeightDictionary::new(space, 1, seed)?,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        self.layout.tensors()
    }

    /// Path weights as `(slot, flattened weight ++ bias)` at full slot shape,
    /// with every entry outside the path's sliced region set to zero.
    pub fn padded_path_weights(&self, space: &SpaceSpec, subnet: &Subnet) -> Vec<(SlotId, Vec<f64>)> {
        let (dims, head_in) = space.layer_dims(subnet);
        let path = self.layout.path_slots(space, subnet);
        let mut out = Vec::new();
        for (layer, slot) in path.iter().enumerate() {
            let Some(slot) = *slot else { continue };
            let info = &self.layout.slots()[slot];
            let (rows, cols) = if layer < space.num_layers {
                let d = dims[layer].expect("linear layer has dims");
                (d.out_width, d.in_width)
            } else {
                (space.num_classes, head_in)
            };
            let w = self.layout.weight(slot, 0);
            let b = self.layout.bias(slot, 0);
            let mut flat = vec![0.0; info.rows * info.cols + info.rows];
            for r in 0..rows {
                for c in 0..cols {
                    flat[r * info.cols + c] = w.get2(r, c);
                }
                flat[info.rows * info.cols + r] = b.data()[r];
            }
            out.push((info.id, flat));
        }
        out
    }
}

/// Forward of one path without any merge. Returns the logits and the
/// inserted `(tensor id, var)` pairs.
pub fn plain_graph_forward(
    g: &mut Graph,
    net: &PlainNet,
    space: &SpaceSpec,
    subnet: &Subnet,
    x: Var,
) -> Result<(Var, Vec<(usize, Var)>)> {
    space.check_subnet(subnet)?;
    let (dims, head_in) = space.layer_dims(subnet);
    let path = net.layout.path_slots(space, subnet);
    let mut vars = Vec::new();
    let mut h = x;
    for (layer, slot) in path.iter().enumerate() {
        let Some(slot) = *slot else { continue };
        let (rows, cols) = if layer < space.num_layers {
            let d = dims[layer].expect("linear layer has dims");
            (d.out_width, d.in_width)
        } else {
            (space.num_classes, head_in)
        };
        let (wid, bid) = (net.layout.weight_id(slot, 0), net.layout.bias_id(slot, 0));
        let w = g.param(net.tensors()[wid].clone());
        let b = g.param(net.tensors()[bid].clone());
        vars.push((wid, w));
        vars.push((bid, b));
        let ws = g.slice(w, rows, cols)?;
        let bs = g.slice(b, 1, rows)?;
        let wt = g.transpose(ws)?;
        let z = g.matmul(h, wt)?;
        let z = g.add_row(z, bs)?;
        h = if net.layout.slots()[slot].relu { g.relu(z) } else { z };
    }
    Ok((h, vars))
}

#[allow(clippy::too_many_arguments)]
pub fn plain_step(
    net: &mut PlainNet,
    opt: &mut Sgd,
    space: &SpaceSpec,
    subnet: &Subnet,
    x: &Tensor,
    y: &[usize],
    lr: f64,
    step: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (logits, vars) = plain_graph_forward(&mut g, net, space, subnet, xv)?;
    let loss = g.cross_entropy(logits, y)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("loss {value} on {}", subnet.label()),
        });
    }
    g.backward(loss)?;
    let grads: Vec<(usize, Vec<f64>)> = vars
        .iter()
        .map(|&(id, v)| (id, g.grad(v).map_or_else(|| vec![0.0; net.tensors()[id].len()], <[f64]>::to_vec)))
        .collect();
    opt.step(net.layout.tensors_mut(), &grads, lr, step)?;
    Ok(value)
}

/// Inference without a graph.
pub fn plain_logits(net: &PlainNet, space: &SpaceSpec, subnet: &Subnet, x: &Tensor) -> Result<Tensor> {
    space.check_subnet(subnet)?;
    let (dims, head_in) = space.layer_dims(subnet);
    let path = net.layout.path_slots(space, subnet);
    let mut h = x.clone();
    for (layer, slot) in path.iter().enumerate() {
        let Some(slot) = *slot else { continue };
        let (rows, cols) = if layer < space.num_layers {
            let d = dims[layer].expect("linear layer has dims");
            (d.out_width, d.in_width)
        } else {
            (space.num_classes, head_in)
        };
        let w = tensor::slice_leading(net.layout.weight(slot, 0), rows, cols)?;
        let b = tensor::slice_leading(net.layout.bias(slot, 0), 1, rows)?;
        let z = tensor::add_row(&tensor::matmul(&h, &tensor::transpose(&w)?)?, &b)?;
        h = if net.layout.slots()[slot].relu { tensor::relu(&z) } else { z };
    }
    Ok(h)
}

/// Budget for training one subnet from scratch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandaloneConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

/// Trains one fixed path from a fresh initialization.
pub fn train_standalone(
    space: &SpaceSpec,
    subnet: &Subnet,
    data: &Dataset,
    cfg: &StandaloneConfig,
    seed: u64,
) -> Result<PlainNet> {
    if cfg.batch_size == 0 || cfg.batch_size > data.len() {
        return Err(Error::Config(format!(
            "stand-alone batch size {} for {} samples",
            cfg.batch_size,
            data.len()
        )));
    }
    let mut net = PlainNet::new(space, seed)?;
    let mut opt = Sgd::new(cfg.momentum, net.tensors().len());
    let mut rng = seeded(seed, STREAM_DATA);
    let mut step = 0;
    while step < cfg.steps {
        for idx in epoch_batches(&mut rng, data.len(), cfg.batch_size) {
            if step == cfg.steps {
                break;
            }
            let (x, y) = data.batch(&idx)?;
            let lr = cosine_lr(cfg.lr, step, cfg.steps);
            plain_step(&mut net, &mut opt, space, subnet, &x, &y, lr, step)?;
            step += 1;
        }
    }
    Ok(net)
}

/// One-shot supernet training on plain weights, following the K-shot
/// schedule: every warmup step and every even step after warmup trains a
/// uniformly sampled path; odd steps after warmup consume their batch
/// without an update.
pub fn train_one_shot_reference(cfg: &TrainConfig, space: &SpaceSpec, data: &Dataset) -> Result<PlainNet> {
    cfg.validate()?;
    let mut net = PlainNet::new(space, cfg.seed)?;
    let mut opt = Sgd::new(cfg.momentum, net.tensors().len());
    let mut data_rng = seeded(cfg.seed, STREAM_DATA);
    let mut path_rng = seeded(cfg.seed, STREAM_PATHS);
    let spe = cfg.steps_per_epoch(data.len());
    let total = cfg.total_epochs * spe;
    let warm = cfg.warmup_epochs * spe;
    let mut step = 0;
    for _ in 0..cfg.total_epochs {
        for idx in epoch_batches(&mut data_rng, data.len(), cfg.batch_size) {
            if step < warm || step % 2 == 0 {
                let (x, y) = data.batch(&idx)?;
                let subnet = space::sample_uniform(space, &mut path_rng);
                let lr = cosine_lr(cfg.lr, step, total);
                plain_step(&mut net, &mut opt, space, &subnet, &x, &y, lr, step)?;
            }
            step += 1;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataSpec;
    use crate::metrics::top1_accuracy;

    #[test]
    fn standalone_training_learns_the_spiral() {
        let space = SpaceSpec::default();
        let (train, val) = DataSpec {
            train_size: 512,
            val_size: 256,
            ..DataSpec::default()
        }
        .generate()
        .unwrap();
        let subnet = Subnet::new(
            crate::space::ArchEncoding::new(vec![2, 2, 2]),
            crate::space::ChannelEncoding::full(3),
        );
        let cfg = StandaloneConfig {
            steps: 400,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
        };
        let net = train_standalone(&space, &subnet, &train, &cfg, 0).unwrap();
        let acc = top1_accuracy(&plain_logits(&net, &space, &subnet, &val.x).unwrap(), &val.y);
        assert!(acc > 0.7, "accuracy {acc}");
    }

    #[test]
    fn padded_weights_zero_outside_slice() {
        let space = SpaceSpec::default();
        let net = PlainNet::new(&space, 0).unwrap();
        let subnet = Subnet::new(
            crate::space::ArchEncoding::new(vec![1, 0, 0]),
            crate::space::ChannelEncoding::new(vec![0.5, 1.0, 1.0]),
        );
        let w = net.padded_path_weights(&space, &subnet);
        assert_eq!(w.len(), 2);
        let (id, flat) = &w[0];
        assert_eq!(*id, SlotId::Layer { layer: 0, op: 1 });
        // 8x2 weight, rows 4..8 zero; bias entries 4..8 zero.
        assert!(flat[8..16].iter().all(|&v| v == 0.0));
        assert!(flat[16 + 4..].iter().all(|&v| v == 0.0));
        assert!(flat[..8].iter().all(|&v| v != 0.0));
    }
}
