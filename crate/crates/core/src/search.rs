//! Scoring subnets on a trained supernet and searching the space with
//! NSGA-II under a hard FLOPs budget.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::top1_accuracy;
use crate::rng::seeded;
use crate::space::{self, FlopsBudget, SpaceSpec, Subnet, SubnetKey};
use crate::supernet::{forward, materialize};
use crate::tensor::{self, Tensor};

const STREAM_SEARCH: u64 = (1 << 40) + 16;
const STREAM_RANDOM: u64 = (1 << 40) + 17;
/// Consecutive budget rejections tolerated before the budget is declared
/// infeasible.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub population: usize,
    pub generations: usize,
    /// Top individuals by accuracy that breed each generation.
    pub parents: usize,
    pub mutation_rate: f64,
    /// `None` admits every subnet.
    pub max_flops: Option<u64>,
    /// Validation rows per forward pass; 0 evaluates the whole set at once.
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population: 20,
            generations: 10,
            parents: 8,
            mutation_rate: 0.1,
            max_flops: None,
            eval_batch: 0,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.parents == 0 || self.parents > self.population {
            return Err(Error::Config(format!(
                "need 1 <= parents ({}) <= population ({})",
                self.parents, self.population
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config("mutation_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> Result<FlopsBudget> {
        FlopsBudget::new(self.max_flops.unwrap_or(u64::MAX))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub subnet: Subnet,
    pub score: f64,
    pub flops: u64,
    /// Pareto front index, 0 for the non-dominated front.
    pub rank: usize,
    pub crowding: f64,
}

/// Top-1 validation accuracy of one subnet: code from the checkpoint,
/// merge, slice, forward.
pub fn evaluate(ckpt: &Checkpoint, subnet: &Subnet, val: &Dataset, eval_batch: usize) -> Result<f64> {
    let code = ckpt.code_for(subnet)?;
    let merged = materialize(&ckpt.dictionary, &ckpt.space, subnet, &code)?;
    let logits = batched(val, eval_batch, |x| forward(&merged, x))?;
    Ok(top1_accuracy(&logits, &val.y))
}

/// Runs `f` over row blocks of the validation set and stacks the outputs.
pub(crate) fn batched(val: &Dataset, eval_batch: usize, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let n = val.len();
    if eval_batch == 0 || eval_batch >= n {
        return f(&val.x);
    }
    let mut data = Vec::new();
    let mut cols = 0;
    for start in (0..n).step_by(eval_batch) {
        let idx: Vec<usize> = (start..(start + eval_batch).min(n)).collect();
        let out = f(&val.x.select_rows(&idx)?)?;
        cols = out.cols();
        data.extend_from_slice(out.data());
    }
    Tensor::matrix(n, cols, data)
}

/// Scores for a list of subnets, in order.
pub fn score_subnets(ckpt: &Checkpoint, subnets: &[Subnet], val: &Dataset, eval_batch: usize) -> Result<Vec<f64>> {
    subnets
        .par_iter()
        .map(|s| evaluate(ckpt, s, val, eval_batch))
        .collect()
}

/// Every subnet of the space, best first; ties keep enumeration order.
pub fn exhaustive_rank(ckpt: &Checkpoint, val: &Dataset, cap: u64) -> Result<Vec<Individual>> {
    let space = &ckpt.space;
    let subnets: Vec<Subnet> = space::enumerate(space, true, cap)?.collect();
    let scores = score_subnets(ckpt, &subnets, val, 0)?;
    let mut out: Vec<Individual> = subnets
        .into_iter()
        .zip(scores)
        .map(|(s, score)| Individual {
            flops: space::count_flops(space, &s),
            subnet: s,
            score,
            rank: 0,
            crowding: 0.0,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub generation: usize,
    pub label: String,
    pub score: f64,
    pub flops: u64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    /// Final population, best score first.
    pub population: Vec<Individual>,
    pub trace: Vec<TraceRow>,
    /// Distinct subnets scored.
    pub evaluations: usize,
}

impl SearchOutcome {
    pub fn best(&self) -> &Individual {
        &self.population[0]
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("generation,arch,channels,score,flops,pareto_rank\n");
        for r in &self.trace {
            let (arch, ch) = r.label.split_once('|').unwrap_or((&r.label, ""));
            let _ = writeln!(out, "{},{},{},{},{},{}", r.generation, arch, ch, r.score, r.flops, r.rank);
        }
        out
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Memoized scorer shared by the search strategies.
struct Scorer<'a> {
    ckpt: &'a Checkpoint,
    val: &'a Dataset,
    eval_batch: usize,
    cache: HashMap<SubnetKey, f64>,
}

impl<'a> Scorer<'a> {
    fn new(ckpt: &'a Checkpoint, val: &'a Dataset, eval_batch: usize) -> Self {
        Scorer {
            ckpt,
            val,
            eval_batch,
            cache: HashMap::new(),
        }
    }

    fn score_all(&mut self, subnets: &[Subnet]) -> Result<Vec<f64>> {
        let space = &self.ckpt.space;
        let mut seen = HashSet::new();
        let missing: Vec<&Subnet> = subnets
            .iter()
            .filter(|s| {
                let k = s.key(space);
                !self.cache.contains_key(&k) && seen.insert(k)
            })
            .collect();
        let fresh = missing
            .par_iter()
            .map(|s| evaluate(self.ckpt, s, self.val, self.eval_batch))
            .collect::<Result<Vec<_>>>()?;
        for (s, v) in missing.into_iter().zip(fresh) {
            self.cache.insert(s.key(space), v);
        }
        Ok(subnets.iter().map(|s| self.cache[&s.key(space)]).collect())
    }
}

fn draw_admitted<R: Rng + ?Sized>(space: &SpaceSpec, budget: &FlopsBudget, rng: &mut R) -> Result<Subnet> {
    for _ in 0..MAX_REJECTIONS {
        let s = space::sample_uniform(space, rng);
        if budget.admits(space::count_flops(space, &s)) {
            return Ok(s);
        }
    }
    Err(Error::InfeasibleBudget {
        budget: budget.max_flops,
        draws: MAX_REJECTIONS,
    })
}

/// Up to `n` distinct admitted subnets; duplicates are accepted once
/// distinct draws stop succeeding.
fn initial_population<R: Rng + ?Sized>(space: &SpaceSpec, budget: &FlopsBudget, n: usize, rng: &mut R) -> Result<Vec<Subnet>> {
    let mut out = Vec::with_capacity(n);
    let mut keys = HashSet::new();
    while out.len() < n {
        let mut pick = draw_admitted(space, budget, rng)?;
        for _ in 0..MAX_REJECTIONS {
            if !keys.contains(&pick.key(space)) {
                break;
            }
            pick = draw_admitted(space, budget, rng)?;
        }
        keys.insert(pick.key(space));
        out.push(pick);
    }
    Ok(out)
}

fn crossover<R: Rng + ?Sized>(a: &Subnet, b: &Subnet, rng: &mut R) -> Subnet {
    let mut child = a.clone();
    for l in 0..child.arch.choices.len() {
        if rng.random_bool(0.5) {
            child.arch.choices[l] = b.arch.choices[l];
            child.channels.ratios[l] = b.channels.ratios[l];
        }
    }
    child
}

fn mutate<R: Rng + ?Sized>(s: &mut Subnet, space: &SpaceSpec, rate: f64, rng: &mut R) {
    let widths = space.active_widths();
    for l in 0..s.arch.choices.len() {
        if rng.random_bool(rate) {
            s.arch.choices[l] = rng.random_range(0..space.num_ops());
        }
        if rng.random_bool(rate) {
            s.channels.ratios[l] = widths[rng.random_range(0..widths.len())];
        }
    }
}

fn dominates(a: &Individual, b: &Individual) -> bool {
    a.score >= b.score && a.flops <= b.flops && (a.score > b.score || a.flops < b.flops)
}

/// Fast non-dominated sort; returns fronts of indices.
pub fn non_dominated_fronts(pop: &[Individual]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates(&pop[i], &pop[j]) {
                dominated_by[i].push(j);
            } else if i != j && dominates(&pop[j], &pop[i]) {
                count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front, in front order.
pub fn crowding_distances(pop: &[Individual], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let objectives: [&dyn Fn(&Individual) -> f64; 2] = [&|i| i.score, &|i| i.flops as f64];
    for obj in objectives {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| obj(&pop[front[a]]).total_cmp(&obj(&pop[front[b]])).then(a.cmp(&b)));
        let lo = obj(&pop[front[order[0]]]);
        let hi = obj(&pop[front[order[n - 1]]]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                let gap = obj(&pop[front[order[w + 1]]]) - obj(&pop[front[order[w - 1]]]);
                dist[order[w]] += gap / (hi - lo);
            }
        }
    }
    dist
}

/// Keeps `size` individuals: whole fronts first, then the most isolated
/// members of the first front that does not fit.
fn select_survivors(mut pool: Vec<Individual>, size: usize) -> Vec<Individual> {
    let fronts = non_dominated_fronts(&pool);
    for (r, front) in fronts.iter().enumerate() {
        let d = crowding_distances(&pool, front);
        for (&i, c) in front.iter().zip(d) {
            pool[i].rank = r;
            pool[i].crowding = c;
        }
    }
    let mut keep = Vec::with_capacity(size);
    for front in &fronts {
        if keep.len() + front.len() <= size {
            keep.extend(front.iter().copied());
        } else {
            let mut rest = front.clone();
            rest.sort_by(|&a, &b| pool[b].crowding.total_cmp(&pool[a].crowding).then(a.cmp(&b)));
            keep.extend(rest.into_iter().take(size - keep.len()));
        }
        if keep.len() == size {
            break;
        }
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| pool[i].clone()).collect()
}

fn sort_by_score(pop: &mut [Individual]) {
    pop.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.flops.cmp(&b.flops)));
}

/// NSGA-II over (accuracy ↑, FLOPs ↓). Offspring that exceed the budget
/// are rejected before they are scored.
pub fn search(cfg: &SearchConfig, ckpt: &Checkpoint, val: &Dataset) -> Result<SearchOutcome> {
    cfg.validate()?;
    let space = &ckpt.space;
    let budget = cfg.budget()?;
    let mut rng = seeded(cfg.seed, STREAM_SEARCH);
    let mut scorer = Scorer::new(ckpt, val, cfg.eval_batch);
    let make = |subnets: Vec<Subnet>, scores: Vec<f64>| -> Vec<Individual> {
        subnets
            .into_iter()
            .zip(scores)
            .map(|(s, score)| Individual {
                flops: space::count_flops(space, &s),
                subnet: s,
                score,
                rank: 0,
                crowding: 0.0,
            })
            .collect()
    };
    let init = initial_population(space, &budget, cfg.population, &mut rng)?;
    let scores = scorer.score_all(&init)?;
    let mut pop = select_survivors(make(init, scores), cfg.population);
    let mut trace = Vec::new();
    let record = |trace: &mut Vec<TraceRow>, generation: usize, pop: &[Individual]| {
        for ind in pop {
            trace.push(TraceRow {
                generation,
                label: ind.subnet.label(),
                score: ind.score,
                flops: ind.flops,
                rank: ind.rank,
            });
        }
    };
    record(&mut trace, 0, &pop);
    for generation in 1..=cfg.generations {
        let mut by_score = pop.clone();
        sort_by_score(&mut by_score);
        let parents = &by_score[..cfg.parents];
        let mut offspring = Vec::with_capacity(cfg.population);
        let mut rejections = 0;
        while offspring.len() < cfg.population {
            let a = &parents[rng.random_range(0..parents.len())].subnet;
            let b = &parents[rng.random_range(0..parents.len())].subnet;
            let mut child = crossover(a, b, &mut rng);
            mutate(&mut child, space, cfg.mutation_rate, &mut rng);
            if budget.admits(space::count_flops(space, &child)) {
                offspring.push(child);
                rejections = 0;
            } else {
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::InfeasibleBudget {
                        budget: budget.max_flops,
                        draws: MAX_REJECTIONS,
                    });
                }
            }
        }
        let scores = scorer.score_all(&offspring)?;
        let mut pool = pop;
        pool.extend(make(offspring, scores));
        pop = select_survivors(pool, cfg.population);
        record(&mut trace, generation, &pop);
    }
    sort_by_score(&mut pop);
    Ok(SearchOutcome {
        population: pop,
        trace,
        evaluations: scorer.cache.len(),
    })
}

/// Uniform sampling under the budget until `evaluations` distinct subnets
/// are scored (or the admitted space runs out). Best first.
pub fn random_search(
    ckpt: &Checkpoint,
    val: &Dataset,
    budget: &FlopsBudget,
    evaluations: usize,
    seed: u64,
) -> Result<Vec<Individual>> {
    let space = &ckpt.space;
    let mut rng = seeded(seed, STREAM_RANDOM);
    let picks = initial_population(space, budget, evaluations, &mut rng)?;
    let mut seen = HashSet::new();
    let picks: Vec<Subnet> = picks.into_iter().filter(|s| seen.insert(s.key(space))).collect();
    let scores = score_subnets(ckpt, &picks, val, 0)?;
    let mut out: Vec<Individual> = picks
        .into_iter()
        .zip(scores)
        .map(|(s, score)| Individual {
            flops: space::count_flops(space, &s),
            subnet: s,
            score,
            rank: 0,
            crowding: 0.0,
        })
        .collect();
    sort_by_score(&mut out);
    Ok(out)
}

/// Logits of the checkpoint's subnet for the validation set; used by
/// ensemble scoring.
pub fn subnet_probabilities(ckpt: &Checkpoint, subnet: &Subnet, val: &Dataset) -> Result<Tensor> {
    let code = ckpt.code_for(subnet)?;
    let merged = materialize(&ckpt.dictionary, &ckpt.space, subnet, &code)?;
    Ok(tensor::softmax_rows(&forward(&merged, &val.x)?))
}
