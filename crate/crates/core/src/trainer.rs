//! Warmup, alternating supernet / simplex-net optimization and the channel
//! similarity regularizer.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::{Checkpoint, CodeMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::optim::{cosine_lr, Sgd};
use crate::rng::seeded;
use crate::simplex::{self, SimplexCode, SimplexNetParams};
use crate::space::{self, ChannelEncoding, SpaceSpec, Subnet};
use crate::supernet::{graph_forward, WeightDictionary};
use crate::tensor::Tensor;

pub(crate) const STREAM_DATA: u64 = 1 << 40;
pub(crate) const STREAM_PATHS: u64 = (1 << 40) + 1;
pub(crate) const STREAM_SIMPLEX: u64 = (1 << 40) + 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of weight copies per slot.
    pub k: usize,
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Paths sampled per simplex-net step; the batch is split evenly.
    pub group_count: usize,
    pub lr: f64,
    pub simplex_lr: f64,
    pub momentum: f64,
    pub temperature: f64,
    /// Weight of the channel regularizer.
    pub alpha: f64,
    /// ℓ1 channel distance under which two codes form a positive pair.
    /// Defaults to one width step times `L / 4`.
    pub threshold_distance: Option<f64>,
    pub simplex_hidden: usize,
    pub channel_branch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 4,
            total_epochs: 60,
            warmup_epochs: 5,
            batch_size: 64,
            group_count: 16,
            lr: 0.05,
            simplex_lr: 0.005,
            momentum: 0.9,
            temperature: 0.3,
            alpha: 1.0,
            threshold_distance: None,
            simplex_hidden: 32,
            channel_branch: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.warmup_epochs > self.total_epochs {
            return fail(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if self.batch_size == 0 || self.group_count == 0 || !self.batch_size.is_multiple_of(self.group_count) {
            return fail(format!(
                "group_count {} must divide batch_size {}",
                self.group_count, self.batch_size
            ));
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be positive".into());
        }
        if !(self.alpha >= 0.0) {
            return fail("alpha must be non-negative".into());
        }
        if !(self.lr > 0.0) || !(self.simplex_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)".into());
        }
        if self.simplex_hidden == 0 {
            return fail("simplex_hidden must be positive".into());
        }
        if let Some(t) = self.threshold_distance {
            if !(t > 0.0) {
                return fail("threshold_distance must be positive".into());
            }
        }
        Ok(())
    }

    pub fn threshold(&self, space: &SpaceSpec) -> f64 {
        self.threshold_distance.unwrap_or_else(|| default_threshold(space))
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n / self.batch_size
    }
}

/// One width step times `L / 4`.
pub fn default_threshold(space: &SpaceSpec) -> f64 {
    let mut w = space.active_widths();
    w.sort_by(f64::total_cmp);
    let step = w
        .windows(2)
        .map(|p| p[1] - p[0])
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let step = if step.is_finite() { step } else { 1.0 };
    step * space.num_layers as f64 / 4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Supernet,
    Simplex,
    /// Simplex-net slot of a run whose code is fixed.
    Idle,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Supernet => "supernet",
            Phase::Simplex => "simplex",
            Phase::Idle => "idle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub phase: Phase,
    pub loss: Option<f64>,
    pub r_c: Option<f64>,
    /// Largest per-coordinate std of the codes drawn in this step.
    pub code_dispersion: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
    pub r_c: Option<f64>,
}

/// Append-only record of every optimization step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Mean loss per epoch over the steps that produced one.
    pub fn epoch_means(&self) -> Vec<EpochSummary> {
        let mut out: Vec<EpochSummary> = Vec::new();
        let mut i = 0;
        while i < self.records.len() {
            let epoch = self.records[i].epoch;
            let (mut loss, mut nl, mut rc, mut nr) = (0.0, 0usize, 0.0, 0usize);
            while i < self.records.len() && self.records[i].epoch == epoch {
                let r = &self.records[i];
                if let Some(l) = r.loss {
                    loss += l;
                    nl += 1;
                }
                if let Some(v) = r.r_c {
                    rc += v;
                    nr += 1;
                }
                i += 1;
            }
            out.push(EpochSummary {
                epoch,
                loss: loss / nl.max(1) as f64,
                r_c: (nr > 0).then(|| rc / nr as f64),
            });
        }
        out
    }

    /// Mean loss of supernet-side steps (warmup or supernet) per epoch.
    pub fn supernet_epoch_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.records {
            let (Some(l), Phase::Warmup | Phase::Supernet) = (r.loss, r.phase) else { continue };
            match out.last_mut() {
                Some(last) if last.0 == r.epoch => {
                    last.1 += l;
                    last.2 += 1;
                }
                _ => out.push((r.epoch, l, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = String::from("epoch,step,phase,loss,r_c,code_dispersion\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.step,
                r.phase.as_str(),
                opt(r.loss),
                opt(r.r_c),
                opt(r.code_dispersion)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Shuffled, full-size batches for one epoch. A trailing partial batch is
/// dropped so every simplex-net step splits evenly.
pub(crate) fn epoch_batches<R: Rng + ?Sized>(rng: &mut R, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks_exact(batch).map(<[usize]>::to_vec).collect()
}

fn collect_grads(g: &Graph, vars: &[(usize, Var)], sizes: impl Fn(usize) -> usize) -> Vec<(usize, Vec<f64>)> {
    vars.iter()
        .map(|&(id, v)| (id, g.grad(v).map_or_else(|| vec![0.0; sizes(id)], <[f64]>::to_vec)))
        .collect()
}

/// Trains the dictionary entries on one path under a fixed code. Shared by
/// warmup and supernet steps.
#[allow(clippy::too_many_arguments)]
pub fn dictionary_step(
    dict: &mut WeightDictionary,
    opt: &mut Sgd,
    space: &SpaceSpec,
    subnet: &Subnet,
    code: &SimplexCode,
    x: &Tensor,
    y: &[usize],
    lr: f64,
    step: usize,
) -> Result<f64> {
    if code.len() != dict.k() {
        return Err(Error::Contract(format!("code length {} for K = {}", code.len(), dict.k())));
    }
    code.validate()?;
    let mut g = Graph::new();
    let cv = g.constant(Tensor::vector(code.coeffs().to_vec())?);
    let xv = g.constant(x.clone());
    let (logits, vars) = graph_forward(&mut g, dict, space, subnet, cv, xv, true)?;
    let loss = g.cross_entropy(logits, y)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("loss {value} on {}", subnet.label()),
        });
    }
    g.backward(loss)?;
    let grads = collect_grads(&g, &vars.inserted, |id| dict.tensors()[id].len());
    opt.step(dict.tensors_mut(), &grads, lr, step)?;
    Ok(value)
}

/// Samples one path and trains it under the uniform code.
#[allow(clippy::too_many_arguments)]
pub fn warmup_step<R: Rng + ?Sized>(
    dict: &mut WeightDictionary,
    opt: &mut Sgd,
    space: &SpaceSpec,
    x: &Tensor,
    y: &[usize],
    rng: &mut R,
    lr: f64,
    step: usize,
) -> Result<f64> {
    let subnet = space::sample_uniform(space, rng);
    let code = SimplexCode::uniform(dict.k());
    dictionary_step(dict, opt, space, &subnet, &code, x, y, lr, step)
}

/// Samples one path, takes its code from the frozen simplex-net and trains
/// the dictionary only.
#[allow(clippy::too_many_arguments)]
pub fn supernet_step<R: Rng + ?Sized>(
    dict: &mut WeightDictionary,
    opt: &mut Sgd,
    simplex: &SimplexNetParams,
    space: &SpaceSpec,
    x: &Tensor,
    y: &[usize],
    rng: &mut R,
    lr: f64,
    step: usize,
) -> Result<f64> {
    let subnet = space::sample_uniform(space, rng);
    let code = simplex::generate_code(simplex, space, &subnet)?;
    dictionary_step(dict, opt, space, &subnet, &code, x, y, lr, step)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexStepOutput {
    pub loss: f64,
    /// `None` when the regularizer is not applicable (no channel search,
    /// or no anchor had both a positive and a negative).
    pub r_c: Option<f64>,
    pub dispersion: f64,
}

/// Samples `m` paths, splits the batch into `m` groups and trains the
/// simplex-net through the frozen dictionary.
#[allow(clippy::too_many_arguments)]
pub fn simplexnet_step<R: Rng + ?Sized>(
    dict: &WeightDictionary,
    simplex: &mut SimplexNetParams,
    opt: &mut Sgd,
    space: &SpaceSpec,
    x: &Tensor,
    y: &[usize],
    rng: &mut R,
    cfg: &TrainConfig,
    lr: f64,
    step: usize,
) -> Result<SimplexStepOutput> {
    let m = cfg.group_count;
    if x.rows() != y.len() || !y.len().is_multiple_of(m) || y.is_empty() {
        return Err(Error::Input(format!("batch of {} cannot split into {m} groups", y.len())));
    }
    let per = y.len() / m;
    let subnets: Vec<Subnet> = (0..m).map(|_| space::sample_uniform(space, rng)).collect();
    let mut g = Graph::new();
    let (codes, pvars) = simplex::graph_codes(&mut g, simplex, space, &subnets, true)?;
    let mut total: Option<Var> = None;
    for (i, s) in subnets.iter().enumerate() {
        let rows: Vec<usize> = (i * per..(i + 1) * per).collect();
        let code = g.row(codes, i)?;
        let xi = g.constant(x.select_rows(&rows)?);
        let (logits, _) = graph_forward(&mut g, dict, space, s, code, xi, false)?;
        let l = g.cross_entropy(logits, &y[i * per..(i + 1) * per])?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let task = g.scale(total.expect("m >= 1"), 1.0 / m as f64);
    let loss = g.value(task).data()[0];
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("simplex-net loss {loss}"),
        });
    }
    let code_values: Vec<SimplexCode> = {
        let t = g.value(codes);
        (0..m).map(|i| SimplexCode::from_raw(t.row(i).to_vec())).collect()
    };
    let channels: Vec<ChannelEncoding> = subnets.iter().map(|s| s.channels.clone()).collect();
    let thr = cfg.threshold(space);
    let regularize = space.channel_search && m >= 2;
    let r_c = if regularize {
        regularizer_value(&code_values, &channels, cfg.temperature, thr)
    } else {
        None
    };
    let objective = match (regularize && cfg.alpha > 0.0, r_c) {
        (true, Some(_)) => {
            let rc = graph_regularizer(&mut g, codes, &channels, cfg.temperature, thr)?.expect("same anchors");
            let rc = g.scale(rc, cfg.alpha);
            g.add(task, rc)?
        }
        _ => task,
    };
    g.backward(objective)?;
    let grads = collect_grads(&g, &pvars, |id| simplex.tensors()[id].len());
    opt.step(simplex.tensors_mut(), &grads, lr, step)?;
    let dispersion = if m >= 2 {
        metrics::code_dispersion(&code_values)?.max_std()
    } else {
        0.0
    };
    Ok(SimplexStepOutput {
        loss,
        r_c: if regularize { Some(r_c.unwrap_or(0.0)) } else { None },
        dispersion,
    })
}

/// For every anchor with a positive, `(anchor, positive, negatives)`.
/// The positive is the nearest other code by ℓ1 channel distance, strictly
/// under `threshold`; ties go to the lower index. Anchors with no positive
/// or no negatives are skipped.
pub fn regularizer_terms(channels: &[ChannelEncoding], threshold: f64) -> Vec<(usize, usize, Vec<usize>)> {
    let n = channels.len();
    let mut out = Vec::new();
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| j != i) {
            let d = channels[i].l1_distance(&channels[j]);
            if d < threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let Some((k, _)) = best else { continue };
        let negatives: Vec<usize> = (0..n).filter(|&j| j != i && j != k).collect();
        if !negatives.is_empty() {
            out.push((i, k, negatives));
        }
    }
    out
}

/// `r_c`: mean over anchors of `−log P(c_i | c_k)` with
/// `P = e^{λ_iᵀλ_k/τ} / (e^{λ_iᵀλ_k/τ} + Σ_j e^{λ_iᵀλ_j/τ})`.
/// Returns 0 with a warning when no anchor qualifies.
pub fn channel_regularizer(codes: &[SimplexCode], channels: &[ChannelEncoding], temperature: f64, threshold: f64) -> f64 {
    regularizer_value(codes, channels, temperature, threshold).unwrap_or_else(|| {
        warn!("channel regularizer: no anchor has both a positive and a negative");
        0.0
    })
}

fn regularizer_value(codes: &[SimplexCode], channels: &[ChannelEncoding], tau: f64, thr: f64) -> Option<f64> {
    let terms = regularizer_terms(channels, thr);
    if terms.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for (i, k, neg) in &terms {
        let logits: Vec<f64> = std::iter::once(*k)
            .chain(neg.iter().copied())
            .map(|j| codes[*i].dot(&codes[j]) / tau)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[0];
    }
    Some(total / terms.len() as f64)
}

/// The same quantity recorded on a graph over an `[m × K]` code matrix.
fn graph_regularizer(g: &mut Graph, codes: Var, channels: &[ChannelEncoding], tau: f64, thr: f64) -> Result<Option<Var>> {
    let terms = regularizer_terms(channels, thr);
    if terms.is_empty() {
        return Ok(None);
    }
    let m = channels.len();
    let ct = g.transpose(codes)?;
    let sims = g.matmul(codes, ct)?;
    let sims = g.scale(sims, 1.0 / tau);
    let mut total: Option<Var> = None;
    for (i, k, neg) in &terms {
        let idx: Vec<usize> = std::iter::once(*k).chain(neg.iter().copied()).map(|j| i * m + j).collect();
        let logits = g.gather(sims, &idx)?;
        let nll = g.cross_entropy(logits, &[0])?;
        total = Some(match total {
            None => nll,
            Some(t) => g.add(t, nll)?,
        });
    }
    Ok(Some(g.scale(total.expect("non-empty"), 1.0 / terms.len() as f64)))
}

/// Runs the full schedule: warmup epochs with the uniform (or fixed) code,
/// then supernet steps on even global steps and simplex-net steps on odd
/// ones.
pub fn train(cfg: &TrainConfig, space: &SpaceSpec, data: &Dataset) -> Result<(Checkpoint, TrainLog)> {
    train_with_mode(cfg, space, data, CodeMode::Learned)
}

pub fn train_with_mode(
    cfg: &TrainConfig,
    space: &SpaceSpec,
    data: &Dataset,
    mode: CodeMode,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    space.validate()?;
    if let CodeMode::Fixed { code } = &mode {
        if code.len() != cfg.k {
            return Err(Error::Config(format!("fixed code has length {}, k = {}", code.len(), cfg.k)));
        }
        code.validate()?;
    }
    if data.x.cols() != space.input_dim || data.num_classes != space.num_classes {
        return Err(Error::Config(format!(
            "dataset is {}-dimensional with {} classes, space expects {} and {}",
            data.x.cols(),
            data.num_classes,
            space.input_dim,
            space.num_classes
        )));
    }
    let spe = cfg.steps_per_epoch(data.len());
    if spe == 0 {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            data.len()
        )));
    }
    let mut dict = WeightDictionary::new(space, cfg.k, cfg.seed)?;
    let mut simplex = SimplexNetParams::new(
        space,
        cfg.k,
        cfg.simplex_hidden,
        cfg.channel_branch && space.channel_search,
        cfg.seed,
    )?;
    let mut dict_opt = Sgd::new(cfg.momentum, dict.tensors().len());
    let mut simplex_opt = Sgd::new(cfg.momentum, simplex.tensors().len());
    let mut data_rng = seeded(cfg.seed, STREAM_DATA);
    let mut path_rng = seeded(cfg.seed, STREAM_PATHS);
    let mut simplex_rng = seeded(cfg.seed, STREAM_SIMPLEX);
    let total = cfg.total_epochs * spe;
    let warm = cfg.warmup_epochs * spe;
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.total_epochs {
        for idx in epoch_batches(&mut data_rng, data.len(), cfg.batch_size) {
            let (x, y) = data.batch(&idx)?;
            let lr = cosine_lr(cfg.lr, step, total);
            let mut rec = StepRecord {
                epoch,
                step,
                phase: Phase::Warmup,
                loss: None,
                r_c: None,
                code_dispersion: None,
            };
            if step < warm {
                let code = match &mode {
                    CodeMode::Learned => SimplexCode::uniform(cfg.k),
                    CodeMode::Fixed { code } => code.clone(),
                };
                let subnet = space::sample_uniform(space, &mut path_rng);
                rec.loss = Some(dictionary_step(
                    &mut dict, &mut dict_opt, space, &subnet, &code, &x, &y, lr, step,
                )?);
            } else if step % 2 == 0 {
                rec.phase = Phase::Supernet;
                let subnet = space::sample_uniform(space, &mut path_rng);
                let code = match &mode {
                    CodeMode::Learned => simplex::generate_code(&simplex, space, &subnet)?,
                    CodeMode::Fixed { code } => code.clone(),
                };
                rec.loss = Some(dictionary_step(
                    &mut dict, &mut dict_opt, space, &subnet, &code, &x, &y, lr, step,
                )?);
            } else if mode == CodeMode::Learned {
                rec.phase = Phase::Simplex;
                let slr = cosine_lr(cfg.simplex_lr, step, total);
                let out = simplexnet_step(
                    &dict,
                    &mut simplex,
                    &mut simplex_opt,
                    space,
                    &x,
                    &y,
                    &mut simplex_rng,
                    cfg,
                    slr,
                    step,
                )?;
                rec.loss = Some(out.loss);
                rec.r_c = out.r_c;
                rec.code_dispersion = Some(out.dispersion);
            } else {
                rec.phase = Phase::Idle;
            }
            log.push(rec);
            step += 1;
        }
    }
    let ckpt = Checkpoint {
        space: space.clone(),
        config: cfg.clone(),
        code_mode: mode,
        dictionary: dict,
        simplex,
        dict_optimizer: dict_opt,
        simplex_optimizer: simplex_opt,
        epochs_completed: cfg.total_epochs,
        steps_completed: step,
    };
    Ok((ckpt, log))
}
