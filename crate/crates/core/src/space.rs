//! Toy architecture/channel search space: encodings, enumeration, uniform
//! sampling and analytic MAC counting.
//!
//! A subnet is a chain of `L` layers. At each layer one of `O` operation
//! slots is chosen; every slot is either an identity bypass or a linear
//! layer (optionally followed by ReLU) whose output width is the slot's
//! hidden width scaled by the layer's channel ratio. A linear classifier
//! head maps the last features to the class logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpKind {
    Identity,
    Linear { hidden: usize, relu: bool },
}

impl OpKind {
    pub fn is_identity(&self) -> bool {
        matches!(self, OpKind::Identity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub num_layers: usize,
    /// Operation slots available at every layer.
    pub ops: Vec<OpKind>,
    /// Channel ratios, strictly increasing, ending at 1.0.
    pub width_choices: Vec<f64>,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Whether channel widths are part of the search.
    #[serde(default = "default_true")]
    pub channel_search: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SpaceSpec {
    /// Three layers of {identity, narrow, wide} with widths {0.5, 1.0}.
    fn default() -> Self {
        SpaceSpec {
            num_layers: 3,
            ops: vec![
                OpKind::Identity,
                OpKind::Linear {
                    hidden: 8,
                    relu: true,
                },
                OpKind::Linear {
                    hidden: 16,
                    relu: true,
                },
            ],
            width_choices: vec![0.5, 1.0],
            input_dim: 2,
            num_classes: 2,
            channel_search: true,
        }
    }
}

/// Scaled channel count: `max(1, floor(ratio · full))`.
pub fn scaled_width(full: usize, ratio: f64) -> usize {
    // The epsilon absorbs representation error such as 0.3 * 10 = 2.9999….
    ((ratio * full as f64 + 1e-9).floor() as usize).max(1)
}

/// Shapes of one linear layer as used by a concrete subnet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerDims {
    pub in_width: usize,
    pub out_width: usize,
}

impl SpaceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::Config("num_layers must be ≥ 1".into()));
        }
        if self.ops.is_empty() {
            return Err(Error::Config("ops must not be empty".into()));
        }
        if self.width_choices.is_empty()
            || self.width_choices.windows(2).any(|w| w[0] >= w[1])
            || self.width_choices[0] <= 0.0
            || *self.width_choices.last().unwrap() != 1.0
        {
            return Err(Error::Config(
                "width_choices must be strictly increasing in (0, 1] and end at 1.0".into(),
            ));
        }
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config("input_dim ≥ 1 and num_classes ≥ 2 required".into()));
        }
        if self
            .ops
            .iter()
            .any(|op| matches!(op, OpKind::Linear { hidden: 0, .. }))
        {
            return Err(Error::Config("linear ops need hidden ≥ 1".into()));
        }
        Ok(())
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    /// Width choices in play: all of them under channel search, else only 1.0.
    pub fn active_widths(&self) -> Vec<f64> {
        if self.channel_search {
            self.width_choices.clone()
        } else {
            vec![1.0]
        }
    }

    /// Number of distinct architectures `O^L`, or `None` on overflow.
    pub fn num_architectures(&self) -> Option<u64> {
        (self.num_ops() as u64).checked_pow(self.num_layers as u32)
    }

    /// Number of (architecture, channel) pairs, or `None` on overflow.
    pub fn num_subnets(&self, include_channels: bool) -> Option<u64> {
        let archs = self.num_architectures()?;
        if include_channels {
            let w = (self.active_widths().len() as u64).checked_pow(self.num_layers as u32)?;
            archs.checked_mul(w)
        } else {
            Some(archs)
        }
    }

    /// Largest input width that layer `layer` (or the head, `layer == L`)
    /// can receive over all subnets.
    pub fn max_in_width(&self, layer: usize) -> usize {
        let max_hidden = self
            .ops
            .iter()
            .filter_map(|op| match op {
                OpKind::Linear { hidden, .. } => Some(*hidden),
                OpKind::Identity => None,
            })
            .max();
        let has_identity = self.ops.iter().any(OpKind::is_identity);
        let mut width = self.input_dim;
        for _ in 0..layer {
            width = match (max_hidden, has_identity) {
                (Some(h), true) => h.max(width),
                (Some(h), false) => h,
                (None, _) => width,
            };
        }
        width
    }

    pub fn width_index(&self, ratio: f64) -> Option<usize> {
        self.width_choices.iter().position(|&w| w == ratio)
    }

    /// Per-layer linear dimensions (`None` for identity layers) and the
    /// head's input width.
    pub fn layer_dims(&self, subnet: &Subnet) -> (Vec<Option<LayerDims>>, usize) {
        let mut width = self.input_dim;
        let mut dims = Vec::with_capacity(self.num_layers);
        for (layer, &op) in subnet.arch.choices.iter().enumerate() {
            match self.ops[op] {
                OpKind::Identity => dims.push(None),
                OpKind::Linear { hidden, .. } => {
                    let out = scaled_width(hidden, subnet.channels.ratios[layer]);
                    dims.push(Some(LayerDims {
                        in_width: width,
                        out_width: out,
                    }));
                    width = out;
                }
            }
        }
        (dims, width)
    }

    pub fn check_subnet(&self, subnet: &Subnet) -> Result<()> {
        if subnet.arch.choices.len() != self.num_layers
            || subnet.channels.ratios.len() != self.num_layers
        {
            return Err(Error::shape(
                "subnet",
                format!(
                    "expected {} layers, got {} ops and {} ratios",
                    self.num_layers,
                    subnet.arch.choices.len(),
                    subnet.channels.ratios.len()
                ),
            ));
        }
        if subnet.arch.choices.iter().any(|&c| c >= self.num_ops()) {
            return Err(Error::Input("op choice out of range".into()));
        }
        if subnet.channels.ratios.iter().any(|&r| self.width_index(r).is_none()) {
            return Err(Error::Input("channel ratio not among width_choices".into()));
        }
        Ok(())
    }
}

/// Operation choice per layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchEncoding {
    pub choices: Vec<usize>,
}

impl ArchEncoding {
    pub fn new(choices: Vec<usize>) -> Self {
        ArchEncoding { choices }
    }

    /// Concatenated per-layer one-hot blocks, length `L·O`.
    pub fn one_hot(&self, num_ops: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.choices.len() * num_ops];
        for (layer, &c) in self.choices.iter().enumerate() {
            v[layer * num_ops + c] = 1.0;
        }
        v
    }

    pub fn from_one_hot(bits: &[f64], num_ops: usize) -> Result<Self> {
        if num_ops == 0 || !bits.len().is_multiple_of(num_ops) {
            return Err(Error::shape("one_hot", format!("length {} for {num_ops} ops", bits.len())));
        }
        let choices = bits
            .chunks(num_ops)
            .map(|block| {
                let hot: Vec<usize> = (0..num_ops).filter(|&i| block[i] == 1.0).collect();
                let cold = block.iter().all(|&b| b == 0.0 || b == 1.0);
                match (hot.as_slice(), cold) {
                    ([i], true) => Ok(*i),
                    _ => Err(Error::Input(format!("block {block:?} is not one-hot"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ArchEncoding { choices })
    }
}

/// Channel ratio per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEncoding {
    pub ratios: Vec<f64>,
}

impl ChannelEncoding {
    pub fn new(ratios: Vec<f64>) -> Self {
        ChannelEncoding { ratios }
    }

    pub fn full(num_layers: usize) -> Self {
        ChannelEncoding {
            ratios: vec![1.0; num_layers],
        }
    }

    pub fn vector(&self) -> &[f64] {
        &self.ratios
    }

    pub fn l1_distance(&self, other: &ChannelEncoding) -> f64 {
        self.ratios
            .iter()
            .zip(&other.ratios)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// One (architecture, channel) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subnet {
    pub arch: ArchEncoding,
    pub channels: ChannelEncoding,
}

/// Hashable identity of a subnet: op choices plus width indices.
pub type SubnetKey = (Vec<usize>, Vec<usize>);

impl Subnet {
    pub fn new(arch: ArchEncoding, channels: ChannelEncoding) -> Self {
        Subnet { arch, channels }
    }

    pub fn key(&self, space: &SpaceSpec) -> SubnetKey {
        let widths = self
            .channels
            .ratios
            .iter()
            .map(|&r| space.width_index(r).unwrap_or(usize::MAX))
            .collect();
        (self.arch.choices.clone(), widths)
    }

    /// Compact text form, e.g. `1-0-2|0.5-1-1`.
    pub fn label(&self) -> String {
        let ops: Vec<String> = self.arch.choices.iter().map(usize::to_string).collect();
        let ratios: Vec<String> = self.channels.ratios.iter().map(f64::to_string).collect();
        format!("{}|{}", ops.join("-"), ratios.join("-"))
    }
}

/// Lexicographic iterator over every subnet of a space; layer 0 is the most
/// significant digit, architecture before channels.
#[derive(Clone, Debug)]
pub struct Enumeration {
    num_layers: usize,
    num_ops: usize,
    widths: Vec<f64>,
    next: u64,
    total: u64,
}

impl Enumeration {
    pub fn total(&self) -> u64 {
        self.total
    }

    /// The subnet at a given enumeration index.
    pub fn nth_subnet(&self, mut index: u64) -> Subnet {
        let w = self.widths.len() as u64;
        let mut width_idx = vec![0usize; self.num_layers];
        for layer in (0..self.num_layers).rev() {
            width_idx[layer] = (index % w) as usize;
            index /= w;
        }
        let mut choices = vec![0usize; self.num_layers];
        for layer in (0..self.num_layers).rev() {
            choices[layer] = (index % self.num_ops as u64) as usize;
            index /= self.num_ops as u64;
        }
        Subnet {
            arch: ArchEncoding { choices },
            channels: ChannelEncoding {
                ratios: width_idx.iter().map(|&i| self.widths[i]).collect(),
            },
        }
    }
}

impl Iterator for Enumeration {
    type Item = Subnet;

    fn next(&mut self) -> Option<Subnet> {
        if self.next >= self.total {
            return None;
        }
        let s = self.nth_subnet(self.next);
        self.next += 1;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Enumeration {}

/// Every (architecture, channel) pair exactly once. Without channels every
/// ratio is 1.0.
pub fn enumerate(space: &SpaceSpec, include_channels: bool, cap: u64) -> Result<Enumeration> {
    let include = include_channels && space.channel_search;
    let size = space.num_subnets(include);
    match size {
        Some(n) if n <= cap => Ok(Enumeration {
            num_layers: space.num_layers,
            num_ops: space.num_ops(),
            widths: if include {
                space.width_choices.clone()
            } else {
                vec![1.0]
            },
            next: 0,
            total: n,
        }),
        _ => {
            let size = match size {
                Some(n) => n.to_string(),
                None => format!("{}^{} or more", space.num_ops(), space.num_layers),
            };
            Err(Error::EnumerationCap { size, cap })
        }
    }
}

/// Each layer's op and width drawn independently and uniformly.
pub fn sample_uniform<R: Rng + ?Sized>(space: &SpaceSpec, rng: &mut R) -> Subnet {
    let widths = space.active_widths();
    let mut choices = Vec::with_capacity(space.num_layers);
    let mut ratios = Vec::with_capacity(space.num_layers);
    for _ in 0..space.num_layers {
        choices.push(rng.random_range(0..space.num_ops()));
        ratios.push(widths[rng.random_range(0..widths.len())]);
    }
    Subnet {
        arch: ArchEncoding { choices },
        channels: ChannelEncoding { ratios },
    }
}

/// Per-layer multiply-accumulates (identity layers count 0) and the head's.
pub fn layer_flops(space: &SpaceSpec, subnet: &Subnet) -> (Vec<u64>, u64) {
    let (dims, head_in) = space.layer_dims(subnet);
    let layers = dims
        .iter()
        .map(|d| d.map_or(0, |d| (d.in_width * d.out_width) as u64))
        .collect();
    (layers, (head_in * space.num_classes) as u64)
}

/// Total multiply-accumulates of one forward sample through the subnet.
pub fn count_flops(space: &SpaceSpec, subnet: &Subnet) -> u64 {
    let (layers, head) = layer_flops(space, subnet);
    layers.iter().sum::<u64>() + head
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBudget {
    pub max_flops: u64,
}

impl FlopsBudget {
    pub fn new(max_flops: u64) -> Result<Self> {
        if max_flops == 0 {
            return Err(Error::Config("FLOPs budget must be > 0".into()));
        }
        Ok(FlopsBudget { max_flops })
    }

    pub fn admits(&self, flops: u64) -> bool {
        flops <= self.max_flops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(hidden: usize) -> OpKind {
        OpKind::Linear { hidden, relu: true }
    }

    fn space(layers: usize, ops: Vec<OpKind>, widths: Vec<f64>) -> SpaceSpec {
        SpaceSpec {
            num_layers: layers,
            ops,
            width_choices: widths,
            input_dim: 8,
            num_classes: 2,
            channel_search: true,
        }
    }

    #[test]
    fn enumerate_without_channels() {
        let s = space(2, vec![linear(4), linear(8), OpKind::Identity], vec![0.5, 1.0]);
        let all: Vec<_> = enumerate(&s, false, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all.len(), 9);
        assert!(all.iter().all(|n| n.channels.ratios == vec![1.0, 1.0]));
    }

    #[test]
    fn enumerate_with_channels_is_lexicographic() {
        let s = space(2, vec![linear(4), linear(8)], vec![0.5, 1.0]);
        let all: Vec<_> = enumerate(&s, true, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all.len(), 16);
        let keys: Vec<_> = all.iter().map(|n| n.key(&s)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn mobilenet_scale_hits_cap() {
        let ops = (0..13).map(|i| linear(i + 1)).collect();
        let s = space(21, ops, vec![1.0]);
        assert!(matches!(
            enumerate(&s, false, DEFAULT_ENUMERATION_CAP),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn default_space_is_216_pairs() {
        let s = SpaceSpec::default();
        s.validate().unwrap();
        assert_eq!(enumerate(&s, true, DEFAULT_ENUMERATION_CAP).unwrap().count(), 216);
    }

    #[test]
    fn single_op_layer_is_always_chosen() {
        let s = space(3, vec![linear(4)], vec![1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(sample_uniform(&s, &mut rng).arch.choices, vec![0, 0, 0]);
        }
    }

    #[test]
    fn sampling_frequencies_within_three_sigma() {
        let s = space(3, vec![linear(4), linear(8)], vec![0.5, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let sub = sample_uniform(&s, &mut rng);
            for (layer, &c) in sub.arch.choices.iter().enumerate() {
                counts[layer] += c;
            }
        }
        let sigma = (n as f64 * 0.25).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.5).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let s = SpaceSpec::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_uniform(&s, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn all_identity_costs_only_the_head() {
        let s = SpaceSpec::default();
        let sub = Subnet::new(ArchEncoding::new(vec![0, 0, 0]), ChannelEncoding::full(3));
        assert_eq!(count_flops(&s, &sub), (s.input_dim * s.num_classes) as u64);
    }

    #[test]
    fn single_linear_layer_macs() {
        let s = space(1, vec![linear(8), OpKind::Identity], vec![0.5, 1.0]);
        let sub = Subnet::new(ArchEncoding::new(vec![0]), ChannelEncoding::full(1));
        let (layers, _) = layer_flops(&s, &sub);
        assert_eq!(layers, vec![64]);
    }

    #[test]
    fn half_width_both_sides() {
        // Layer 1 reads the 4 channels layer 0 kept and keeps 4 of its own.
        let s = space(2, vec![linear(8), OpKind::Identity], vec![0.5, 1.0]);
        let sub = Subnet::new(ArchEncoding::new(vec![0, 0]), ChannelEncoding::new(vec![0.5, 0.5]));
        let (layers, _) = layer_flops(&s, &sub);
        assert_eq!(layers[1], 16);
    }

    #[test]
    fn scaled_width_floors_with_minimum_one() {
        assert_eq!(scaled_width(8, 0.5), 4);
        assert_eq!(scaled_width(10, 0.3), 3);
        assert_eq!(scaled_width(3, 0.25), 1);
        assert_eq!(scaled_width(1, 0.1), 1);
    }

    #[test]
    fn one_hot_rejects_bad_blocks() {
        assert!(ArchEncoding::from_one_hot(&[1.0, 1.0, 0.0], 3).is_err());
        assert!(ArchEncoding::from_one_hot(&[0.0, 0.0], 2).is_err());
        assert!(ArchEncoding::from_one_hot(&[1.0, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn invalid_widths_rejected() {
        let mut s = SpaceSpec {
            width_choices: vec![0.5, 0.75],
            ..SpaceSpec::default()
        };
        assert!(s.validate().is_err());
        s.width_choices = vec![1.0, 0.5];
        assert!(s.validate().is_err());
    }

    proptest! {
        #[test]
        fn one_hot_round_trip(choices in prop::collection::vec(0usize..5, 1..8)) {
            let a = ArchEncoding::new(choices);
            let bits = a.one_hot(5);
            prop_assert_eq!(bits.iter().filter(|&&b| b == 1.0).count(), a.choices.len());
            prop_assert_eq!(ArchEncoding::from_one_hot(&bits, 5).unwrap(), a);
        }

        #[test]
        fn enumeration_size_matches_formula(layers in 1usize..4, ops in 2usize..4, nw in 1usize..4) {
            let widths: Vec<f64> = (1..=nw).map(|i| i as f64 / nw as f64).collect();
            let s = space(layers, (0..ops).map(|i| linear(i + 2)).collect(), widths);
            let n = enumerate(&s, true, DEFAULT_ENUMERATION_CAP).unwrap().count();
            prop_assert_eq!(n, ops.pow(layers as u32) * nw.pow(layers as u32));
        }

        #[test]
        fn flops_monotone_in_ratios(
            choices in prop::collection::vec(0usize..3, 3),
            widths in prop::collection::vec(0usize..4, 3),
            layer in 0usize..3,
        ) {
            let s = SpaceSpec {
                width_choices: vec![0.25, 0.5, 0.75, 1.0],
                ..SpaceSpec::default()
            };
            let ratios: Vec<f64> = widths.iter().map(|&i| s.width_choices[i]).collect();
            let base = Subnet::new(ArchEncoding::new(choices.clone()), ChannelEncoding::new(ratios.clone()));
            let mut wider = ratios;
            wider[layer] = 1.0;
            let up = Subnet::new(ArchEncoding::new(choices), ChannelEncoding::new(wider));
            prop_assert!(count_flops(&s, &up) >= count_flops(&s, &base));
        }
    }
}
