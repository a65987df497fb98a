//! Ablation arms: one-shot, fixed and random codes, and ensembles of
//! independently trained one-shot supernets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CodeMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::top1_accuracy;
use crate::rng::{derive_seed, seeded};
use crate::search::{score_subnets, subnet_probabilities};
use crate::simplex::SimplexCode;
use crate::space::{SpaceSpec, Subnet};
use crate::tensor::Tensor;
use crate::trainer::{train, train_with_mode, TrainConfig, TrainLog};

/// Independent runs of the random-code arm.
pub const RANDOM_CODE_RUNS: usize = 10;
const STREAM_RANDOM_CODE: u64 = (1 << 40) + 32;
const STREAM_ENSEMBLE: u64 = (1 << 40) + 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    OneShot,
    FixedCode,
    RandomCode,
    EnsembleAvg,
    EnsembleMax,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::OneShot,
        BaselineKind::FixedCode,
        BaselineKind::RandomCode,
        BaselineKind::EnsembleAvg,
        BaselineKind::EnsembleMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::OneShot => "one_shot",
            BaselineKind::FixedCode => "fixed_code",
            BaselineKind::RandomCode => "random_code",
            BaselineKind::EnsembleAvg => "ensemble_avg",
            BaselineKind::EnsembleMax => "ensemble_max",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = BaselineKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown baseline {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Trained supernet(s) of one baseline arm.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub kind: BaselineKind,
    pub checkpoints: Vec<Checkpoint>,
    pub logs: Vec<TrainLog>,
    /// Optimization steps summed over every trained supernet.
    pub training_steps: usize,
}

/// Seed of ensemble member `i`; member 0 reuses the base seed.
pub fn ensemble_member_seed(seed: u64, i: usize) -> u64 {
    if i == 0 {
        seed
    } else {
        derive_seed(seed, STREAM_ENSEMBLE + i as u64)
    }
}

/// Code and training seed of random-code run `r`.
pub fn random_code_run(seed: u64, k: usize, r: usize) -> (SimplexCode, u64) {
    let run_seed = derive_seed(seed, STREAM_RANDOM_CODE + r as u64);
    let code = SimplexCode::sample_uniform(k, &mut seeded(run_seed, 0));
    (code, run_seed)
}

pub fn run_baseline(kind: BaselineKind, cfg: &TrainConfig, space: &SpaceSpec, data: &Dataset) -> Result<BaselineRun> {
    let mut checkpoints = Vec::new();
    let mut logs = Vec::new();
    match kind {
        BaselineKind::OneShot => {
            let (c, l) = train(&TrainConfig { k: 1, ..cfg.clone() }, space, data)?;
            checkpoints.push(c);
            logs.push(l);
        }
        BaselineKind::FixedCode => {
            let mode = CodeMode::Fixed {
                code: SimplexCode::uniform(cfg.k),
            };
            let (c, l) = train_with_mode(cfg, space, data, mode)?;
            checkpoints.push(c);
            logs.push(l);
        }
        BaselineKind::RandomCode => {
            for r in 0..RANDOM_CODE_RUNS {
                let (code, run_seed) = random_code_run(cfg.seed, cfg.k, r);
                let run_cfg = TrainConfig {
                    seed: run_seed,
                    ..cfg.clone()
                };
                let (c, l) = train_with_mode(&run_cfg, space, data, CodeMode::Fixed { code })?;
                checkpoints.push(c);
                logs.push(l);
            }
        }
        BaselineKind::EnsembleAvg | BaselineKind::EnsembleMax => {
            for i in 0..cfg.k {
                let member = TrainConfig {
                    k: 1,
                    seed: ensemble_member_seed(cfg.seed, i),
                    ..cfg.clone()
                };
                let (c, l) = train(&member, space, data)?;
                checkpoints.push(c);
                logs.push(l);
            }
        }
    }
    let training_steps = checkpoints.iter().map(|c| c.steps_completed).sum();
    Ok(BaselineRun {
        kind,
        checkpoints,
        logs,
        training_steps,
    })
}

/// Accuracy of the averaged member probabilities.
fn ensemble_avg_accuracy(probs: &[Tensor], labels: &[usize]) -> f64 {
    let mut sum = probs[0].clone();
    for p in &probs[1..] {
        for (s, v) in sum.data_mut().iter_mut().zip(p.data()) {
            *s += v;
        }
    }
    top1_accuracy(&sum, labels)
}

/// Accuracy when each sample takes the prediction of the member with the
/// highest top-1 probability.
fn ensemble_max_accuracy(probs: &[Tensor], labels: &[usize]) -> f64 {
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for p in probs {
            let row = p.row(i);
            let (arg, top) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            if top > best.0 {
                best = (top, arg);
            }
        }
        hits += usize::from(best.1 == label);
    }
    hits as f64 / labels.len().max(1) as f64
}

/// Supernet-side scores of `subnets`, one vector per independent run of
/// the arm (ten for the random-code arm, one otherwise).
pub fn baseline_scores(run: &BaselineRun, subnets: &[Subnet], val: &Dataset) -> Result<Vec<Vec<f64>>> {
    match run.kind {
        BaselineKind::OneShot | BaselineKind::FixedCode | BaselineKind::RandomCode => run
            .checkpoints
            .iter()
            .map(|c| score_subnets(c, subnets, val, 0))
            .collect(),
        BaselineKind::EnsembleAvg | BaselineKind::EnsembleMax => {
            let scores = subnets
                .iter()
                .map(|s| {
                    let probs = run
                        .checkpoints
                        .iter()
                        .map(|c| subnet_probabilities(c, s, val))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(if run.kind == BaselineKind::EnsembleAvg {
                        ensemble_avg_accuracy(&probs, &val.y)
                    } else {
                        ensemble_max_accuracy(&probs, &val.y)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(vec![scores])
        }
    }
}
