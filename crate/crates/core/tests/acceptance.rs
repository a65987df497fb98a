//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test -p kshot-core --test acceptance -- 4 5`.
//!
//! The toy experiment uses `ExperimentConfig::default()`. Supernets shared
//! by several criteria are trained once.

// Finite-difference loops index by coordinate on purpose.
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use std::cell::OnceCell;
use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use kshot_core::autodiff::{Graph, Var};
use kshot_core::baselines::{baseline_scores, run_baseline, BaselineKind};
use kshot_core::checkpoint::{Checkpoint, CodeMode};
use kshot_core::config::ExperimentConfig;
use kshot_core::data::{DataSpec, Dataset};
use kshot_core::metrics::{
    code_dispersion, grouped_kendall, kendall_tau, max_pairwise_linf, pearson, spearman_rho, DEGENERATE_LINF,
    DEGENERATE_STD,
};
use kshot_core::oracle::{build_oracle, extract_standalone_matrix, OracleTable};
use kshot_core::rng::seeded;
use kshot_core::search::{random_search, score_subnets, search, SearchConfig};
use kshot_core::simplex::{graph_codes, SimplexNetParams};
use kshot_core::space::{self, ArchEncoding, ChannelEncoding, SpaceSpec, Subnet, SubnetKey};
use kshot_core::standalone::train_one_shot_reference;
use kshot_core::supernet::{
    approximation_gap, forward, graph_forward, materialize, singular_values, WeightDictionary,
};
use kshot_core::trainer::{train, train_with_mode, TrainConfig};
use kshot_core::{SimplexCode, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;
const SWEEP_SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// Shared toy experiment

struct Run {
    ckpt: Checkpoint,
    tau: f64,
}

struct Toy {
    cfg: ExperimentConfig,
    train: Dataset,
    val: Dataset,
    oracle: OracleTable,
    subnets: Vec<Subnet>,
    oracle_scores: Vec<f64>,
    oracle_by_key: HashMap<SubnetKey, f64>,
}

impl Toy {
    fn build() -> Toy {
        let cfg = ExperimentConfig::default();
        let (train, val) = cfg.data.generate().unwrap();
        let t = Instant::now();
        let oracle = build_oracle(&cfg.space, &train, &val, &cfg.train, &cfg.oracle).unwrap();
        println!(
            "  [setup] oracle: {} subnets x {} seeds, {} steps each, {:.1}s",
            oracle.rows.len(),
            cfg.oracle.seeds.len(),
            oracle.meta.steps,
            t.elapsed().as_secs_f64()
        );
        let subnets = oracle.subnets();
        let oracle_scores = oracle.scores();
        let oracle_by_key = subnets
            .iter()
            .zip(&oracle_scores)
            .map(|(s, &a)| (s.key(&cfg.space), a))
            .collect();
        Toy {
            cfg,
            train,
            val,
            oracle,
            subnets,
            oracle_scores,
            oracle_by_key,
        }
    }

    fn train_cfg(&self, k: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            k,
            seed,
            ..self.cfg.train.clone()
        }
    }

    fn run(&self, cfg: &TrainConfig, mode: CodeMode) -> Run {
        let (ckpt, _) = train_with_mode(cfg, &self.cfg.space, &self.train, mode).unwrap();
        let scores = score_subnets(&ckpt, &self.subnets, &self.val, 0).unwrap();
        let tau = kendall_tau(&scores, &self.oracle_scores).unwrap();
        Run { ckpt, tau }
    }

    fn runs(&self, label: &str, seeds: u64, make: impl Fn(u64) -> (TrainConfig, CodeMode)) -> Vec<Run> {
        let t = Instant::now();
        let out: Vec<Run> = (0..seeds)
            .map(|s| {
                let (cfg, mode) = make(s);
                self.run(&cfg, mode)
            })
            .collect();
        println!("  [setup] {label}: {seeds} runs, {:.1}s", t.elapsed().as_secs_f64());
        out
    }
}

#[derive(Default)]
struct Lab {
    toy: OnceCell<Toy>,
    learned: OnceCell<HashMap<usize, Vec<Run>>>,
    alpha0: OnceCell<Vec<Run>>,
    fixed: OnceCell<Vec<Run>>,
    random_mean_tau: OnceCell<f64>,
    started: OnceCell<Instant>,
}

impl Lab {
    fn toy(&self) -> &Toy {
        self.toy.get_or_init(|| {
            self.started.get_or_init(Instant::now);
            Toy::build()
        })
    }

    /// Learned-code runs: K = 1 and K = 4 over ten seeds; K = 2, 8, 12 over
    /// the first five.
    fn learned(&self, k: usize) -> &[Run] {
        let all = self.learned.get_or_init(|| {
            let toy = self.toy();
            let mut m = HashMap::new();
            for (k, seeds) in [(1, SEEDS), (4, SEEDS), (2, SWEEP_SEEDS), (8, SWEEP_SEEDS), (12, SWEEP_SEEDS)] {
                let runs = toy.runs(&format!("learned K={k}"), seeds, |s| (toy.train_cfg(k, s), CodeMode::Learned));
                m.insert(k, runs);
            }
            m
        });
        &all[&k]
    }

    fn alpha0(&self) -> &[Run] {
        self.alpha0.get_or_init(|| {
            let toy = self.toy();
            toy.runs("learned K=4 alpha=0", SWEEP_SEEDS, |s| {
                (
                    TrainConfig {
                        alpha: 0.0,
                        ..toy.train_cfg(4, s)
                    },
                    CodeMode::Learned,
                )
            })
        })
    }

    fn fixed(&self) -> &[Run] {
        self.fixed.get_or_init(|| {
            let toy = self.toy();
            toy.runs("fixed code K=4", SEEDS, |s| {
                (toy.train_cfg(4, s), CodeMode::Fixed { code: SimplexCode::uniform(4) })
            })
        })
    }

    /// Mean tau of the random-code arm (ten runs with independent codes).
    fn random_mean_tau(&self) -> f64 {
        *self.random_mean_tau.get_or_init(|| {
            let toy = self.toy();
            let t = Instant::now();
            let run = run_baseline(BaselineKind::RandomCode, &toy.train_cfg(4, 0), &toy.cfg.space, &toy.train).unwrap();
            let sets = baseline_scores(&run, &toy.subnets, &toy.val).unwrap();
            let taus: Vec<f64> = sets.iter().map(|s| kendall_tau(s, &toy.oracle_scores).unwrap()).collect();
            println!(
                "  [setup] random code K=4: {} runs, {:.1}s",
                taus.len(),
                t.elapsed().as_secs_f64()
            );
            taus.iter().sum::<f64>() / taus.len() as f64
        })
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn taus(runs: &[Run]) -> Vec<f64> {
    runs.iter().map(|r| r.tau).collect()
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------------------
// Criteria

fn c1_ranking_fidelity(lab: &Lab) -> Outcome {
    let k1 = taus(lab.learned(1));
    let k4 = taus(lab.learned(4));
    let wins = k1.iter().zip(&k4).filter(|(a, b)| b > a).count();
    let delta = mean(k4.iter().zip(&k1).map(|(b, a)| b - a));
    let elapsed = lab.started.get().map_or(0.0, |t| t.elapsed().as_secs_f64());
    outcome(
        wins >= 7 && delta > 0.0 && elapsed <= 3600.0,
        format!(
            "K=4 beats K=1 in {wins}/10 seeds (need >= 7), mean delta {delta:+.4} (need > 0); \
             K=1 taus {} K=4 taus {}; {elapsed:.0}s elapsed",
            fmt_list(&k1),
            fmt_list(&k4)
        ),
    )
}

fn c2_k_sweep(lab: &Lab) -> Outcome {
    let m = |k: usize| mean(lab.learned(k).iter().take(SWEEP_SEEDS as usize).map(|r| r.tau));
    let (t1, t2, t4, t8, t12) = (m(1), m(2), m(4), m(8), m(12));
    let pass = t1 <= t2 && t2 <= t4 && t12 <= t8;
    outcome(
        pass,
        format!(
            "mean tau over {SWEEP_SEEDS} seeds: K1 {t1:.4} K2 {t2:.4} K4 {t4:.4} K8 {t8:.4} K12 {t12:.4} \
             (need K1 <= K2 <= K4 and K12 <= K8)"
        ),
    )
}

fn c3_low_rank(lab: &Lab) -> Outcome {
    let toy = lab.toy();
    let space = &toy.cfg.space;
    let dict = WeightDictionary::new(space, 1, 0).unwrap();
    let mut checked = 0;
    let mut worst_energy: f64 = 0.0;
    let mut monotone = true;
    for info in dict.slots() {
        let w = extract_standalone_matrix(&toy.oracle, info.id).unwrap();
        let sv = singular_values(&w);
        let mut prev = f64::INFINITY;
        for k in 1..=sv.len() {
            let gap = approximation_gap(&w, k).unwrap();
            let tail: f64 = sv[k..].iter().map(|s| s * s).sum();
            worst_energy = worst_energy.max((gap * gap - tail).abs());
            monotone &= gap <= prev;
            prev = gap;
            checked += 1;
        }
    }
    outcome(
        monotone && worst_energy <= 1e-8,
        format!(
            "{checked} (slot, K) pairs over {} slots; gap non-increasing: {monotone}; \
             max |gap^2 - tail energy| = {worst_energy:.2e} (need <= 1e-8)",
            dict.slots().len()
        ),
    )
}

fn small_data(n: usize) -> Dataset {
    DataSpec {
        train_size: n,
        val_size: 64,
        ..DataSpec::default()
    }
    .generate()
    .unwrap()
    .0
}

fn bits(ts: &[Tensor]) -> Vec<u64> {
    ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

fn c4_degeneracy(_: &Lab) -> Outcome {
    let space = SpaceSpec::default();
    let data = small_data(512);
    let cfg = TrainConfig {
        k: 1,
        total_epochs: 4,
        warmup_epochs: 1,
        seed: 11,
        ..TrainConfig::default()
    };

    let (one, _) = train(&cfg, &space, &data).unwrap();
    let reference = train_one_shot_reference(&cfg, &space, &data).unwrap();
    let pipeline_eq = bits(one.dictionary.tensors()) == bits(reference.tensors());

    let fixed = run_baseline(BaselineKind::FixedCode, &cfg, &space, &data).unwrap();
    let shot = run_baseline(BaselineKind::OneShot, &cfg, &space, &data).unwrap();
    let fixed_eq = bits(fixed.checkpoints[0].dictionary.tensors()) == bits(shot.checkpoints[0].dictionary.tensors());

    // Uniform-code forward against the forward of the copy-averaged weights.
    let k = 4;
    let dict = WeightDictionary::new(&space, k, 5).unwrap();
    let mut mean_dict = WeightDictionary::new(&space, 1, 0).unwrap();
    for s in 0..dict.slots().len() {
        for (id, get) in [
            (mean_dict.weight_id(s, 0), 0usize),
            (mean_dict.bias_id(s, 0), 1usize),
        ] {
            let copies: Vec<&Tensor> = (0..k)
                .map(|c| if get == 0 { dict.weight(s, c) } else { dict.bias(s, c) })
                .collect();
            let t = &mut mean_dict.tensors_mut()[id];
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = copies.iter().map(|c| c.data()[i]).sum::<f64>() / k as f64;
            }
        }
    }
    let x = data.batch(&(0..32).collect::<Vec<_>>()).unwrap().0;
    let mut worst: f64 = 0.0;
    for subnet in space::enumerate(&space, true, 10_000).unwrap() {
        let expected = forward(
            &materialize(&mean_dict, &space, &subnet, &SimplexCode::uniform(1)).unwrap(),
            &x,
        )
        .unwrap();
        let mut g = Graph::new();
        let code = g.constant(Tensor::vector(SimplexCode::uniform(k).coeffs().to_vec()).unwrap());
        let xv = g.constant(x.clone());
        let (logits, _) = graph_forward(&mut g, &dict, &space, &subnet, code, xv, true).unwrap();
        for (a, b) in g.value(logits).data().iter().zip(expected.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        pipeline_eq && fixed_eq && worst <= 1e-10,
        format!(
            "K=1 pipeline == plain one-shot bitwise: {pipeline_eq}; fixed_code(K=1) == one_shot bitwise: {fixed_eq}; \
             uniform-code vs mean-weight forward max diff {worst:.1e} (need <= 1e-10)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Gradient checks

const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so relu kinks are not straddled.
fn rand_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Largest entrywise relative error between analytic gradients and central
/// differences of `build`'s scalar output with respect to every input.
fn gradcheck(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vs);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vs);
    g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vs.iter().enumerate() {
        let analytic = g.grad(*v).map_or_else(|| vec![0.0; inputs[i].len()], <[f64]>::to_vec);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Reduces any output to a scalar through a fixed random weighting.
fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.value(v).shape().to_vec();
    let w = g.constant(rand_tensor(&mut seeded(seed, 99), &shape));
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

fn op_gradchecks() -> Vec<(&'static str, f64)> {
    let mut rng = seeded(2024, 0);
    let mut out = Vec::new();
    let mut check = |name: &'static str, inputs: Vec<Tensor>, build: &dyn Fn(&mut Graph, &[Var]) -> Var| {
        out.push((name, gradcheck(&inputs, build)));
    };
    let (a, b) = (rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4, 2]));
    check("matmul", vec![a, b], &|g, v| {
        let m = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, m, 1)
    });
    check("transpose", vec![rand_tensor(&mut rng, &[3, 2])], &|g, v| {
        let t = g.transpose(v[0]).unwrap();
        weighted_sum(g, t, 2)
    });
    check("add", vec![rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[2, 3])], &|g, v| {
        let t = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, t, 3)
    });
    check("add scalar", vec![rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[1])], &|g, v| {
        let t = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, t, 4)
    });
    check("mul", vec![rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[2, 3])], &|g, v| {
        let t = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, t, 5)
    });
    check("mul scalar", vec![rand_tensor(&mut rng, &[1]), rand_tensor(&mut rng, &[4])], &|g, v| {
        let t = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, t, 6)
    });
    check("scale", vec![rand_tensor(&mut rng, &[5])], &|g, v| {
        let t = g.scale(v[0], -2.5);
        weighted_sum(g, t, 7)
    });
    check("relu", vec![rand_nonzero(&mut rng, &[3, 3])], &|g, v| {
        let t = g.relu(v[0]);
        weighted_sum(g, t, 8)
    });
    check("add_row", vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4])], &|g, v| {
        let t = g.add_row(v[0], v[1]).unwrap();
        weighted_sum(g, t, 9)
    });
    check("softmax vector", vec![rand_tensor(&mut rng, &[5])], &|g, v| {
        let t = g.softmax(v[0]);
        weighted_sum(g, t, 10)
    });
    check("softmax rows", vec![rand_tensor(&mut rng, &[3, 4])], &|g, v| {
        let t = g.softmax(v[0]);
        weighted_sum(g, t, 11)
    });
    check("cross_entropy", vec![rand_tensor(&mut rng, &[4, 3])], &|g, v| {
        g.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap()
    });
    check("cross_entropy vector", vec![rand_tensor(&mut rng, &[4])], &|g, v| {
        g.cross_entropy(v[0], &[3]).unwrap()
    });
    let code = Tensor::vector(vec![0.2, 0.5, 0.3]).unwrap();
    let items: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[2, 3])).collect();
    let mut inputs = vec![code];
    inputs.extend(items);
    check("combine", inputs, &|g, v| {
        let t = g.combine(v[0], &v[1..]).unwrap();
        weighted_sum(g, t, 12)
    });
    check("slice", vec![rand_tensor(&mut rng, &[4, 5])], &|g, v| {
        let t = g.slice(v[0], 2, 3).unwrap();
        weighted_sum(g, t, 13)
    });
    check("concat_cols", vec![rand_tensor(&mut rng, &[3, 2]), rand_tensor(&mut rng, &[3, 4])], &|g, v| {
        let t = g.concat_cols(v[0], v[1]).unwrap();
        weighted_sum(g, t, 14)
    });
    check("gather", vec![rand_tensor(&mut rng, &[3, 3])], &|g, v| {
        let t = g.gather(v[0], &[4, 0, 4, 8]).unwrap();
        weighted_sum(g, t, 15)
    });
    check("row", vec![rand_tensor(&mut rng, &[3, 3])], &|g, v| {
        let t = g.row(v[0], 1).unwrap();
        weighted_sum(g, t, 16)
    });
    check("sum", vec![rand_tensor(&mut rng, &[2, 3])], &|g, v| g.sum(v[0]));
    check("mean", vec![rand_tensor(&mut rng, &[2, 3])], &|g, v| g.mean(v[0]));
    out
}

/// Simplex-net parameters → code → merged path weights → loss, checked
/// with respect to every simplex-net tensor and every dictionary tensor on
/// the path.
fn chain_gradcheck() -> f64 {
    let space = SpaceSpec::default();
    let k = 3;
    let dict = WeightDictionary::new(&space, k, 8).unwrap();
    let mut net = SimplexNetParams::new(&space, k, 6, true, 9).unwrap();
    // The zero head would zero every gradient below it.
    let mut rng = seeded(77, 0);
    let (hw, hb) = net.head_ids();
    for id in [hw, hb] {
        let shape = net.tensors()[id].shape().to_vec();
        net.tensors_mut()[id] = rand_tensor(&mut rng, &shape);
    }
    let subnets = [
        Subnet::new(ArchEncoding::new(vec![2, 0, 1]), ChannelEncoding::new(vec![0.5, 1.0, 0.5])),
        Subnet::new(ArchEncoding::new(vec![1, 2, 2]), ChannelEncoding::new(vec![1.0, 0.5, 1.0])),
    ];
    let data = small_data(64);
    let (x, y) = data.batch(&(0..6).collect::<Vec<_>>()).unwrap();

    let n_net = net.tensors().len();
    let loss_of = |net_t: &[Tensor], dict_t: &[Tensor], g: &mut Graph| -> (Var, Vec<(usize, Var)>, Vec<(usize, Var)>) {
        let mut n = net.clone();
        n.tensors_mut().clone_from_slice(net_t);
        let mut d = dict.clone();
        d.tensors_mut().clone_from_slice(dict_t);
        let (codes, net_vars) = graph_codes(g, &n, &space, &subnets, true).unwrap();
        let xv = g.constant(x.clone());
        let mut dict_vars = Vec::new();
        let mut losses = Vec::new();
        for (i, s) in subnets.iter().enumerate() {
            let code = g.row(codes, i).unwrap();
            let (logits, pv) = graph_forward(g, &d, &space, s, code, xv, true).unwrap();
            dict_vars.extend(pv.inserted);
            losses.push(g.cross_entropy(logits, &y).unwrap());
        }
        let total = g.add(losses[0], losses[1]).unwrap();
        (total, net_vars, dict_vars)
    };

    let net_t = net.tensors().to_vec();
    let dict_t = dict.tensors().to_vec();
    let mut g = Graph::new();
    let (loss, net_vars, dict_vars) = loss_of(&net_t, &dict_t, &mut g);
    g.backward(loss).unwrap();
    let mut analytic: HashMap<(bool, usize), Vec<f64>> = HashMap::new();
    for (id, v) in &net_vars {
        let grad = g.grad(*v).map_or_else(|| vec![0.0; net_t[*id].len()], <[f64]>::to_vec);
        analytic.insert((true, *id), grad);
    }
    for (id, v) in &dict_vars {
        let grad = g.grad(*v).map_or_else(|| vec![0.0; dict_t[*id].len()], <[f64]>::to_vec);
        // A tensor shared by both paths appears twice; gradients add.
        analytic
            .entry((false, *id))
            .and_modify(|acc| acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b))
            .or_insert(grad);
    }
    let eval = |net_t: &[Tensor], dict_t: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let (loss, _, _) = loss_of(net_t, dict_t, &mut g);
        g.value(loss).data()[0]
    };
    assert_eq!(n_net, net_vars.len());
    let mut worst: f64 = 0.0;
    for ((is_net, id), grad) in &analytic {
        for j in 0..grad.len() {
            let (mut np, mut nm) = (net_t.clone(), net_t.clone());
            let (mut dp, mut dm) = (dict_t.clone(), dict_t.clone());
            if *is_net {
                np[*id].data_mut()[j] += H;
                nm[*id].data_mut()[j] -= H;
            } else {
                dp[*id].data_mut()[j] += H;
                dm[*id].data_mut()[j] -= H;
            }
            let numeric = (eval(&np, &dp) - eval(&nm, &dm)) / (2.0 * H);
            worst = worst.max(rel_err(grad[j], numeric));
        }
    }
    worst
}

fn c5_gradients(_: &Lab) -> Outcome {
    let ops = op_gradchecks();
    let (worst_name, worst_op) = ops
        .iter()
        .cloned()
        .fold(("", 0.0), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let failing: Vec<&str> = ops.iter().filter(|(_, e)| *e >= 1e-4).map(|(n, _)| *n).collect();
    let chain = chain_gradcheck();
    outcome(
        failing.is_empty() && chain < 1e-3,
        format!(
            "{} ops, worst rel err {worst_op:.1e} ({worst_name}), failing {failing:?} (need < 1e-4); \
             full chain rel err {chain:.1e} (need < 1e-3)",
            ops.len()
        ),
    )
}

fn c6_cost(_: &Lab) -> Outcome {
    let space = SpaceSpec::default();
    let data = small_data(256);
    let (x, y) = data.batch(&(0..64).collect::<Vec<_>>()).unwrap();
    let subnet = Subnet::new(ArchEncoding::new(vec![2, 2, 2]), ChannelEncoding::full(3));
    let step_counters = |k: usize| {
        let dict = WeightDictionary::new(&space, k, 1).unwrap();
        let mut g = Graph::new();
        let code = g.constant(Tensor::vector(SimplexCode::uniform(k).coeffs().to_vec()).unwrap());
        let xv = g.constant(x.clone());
        let (logits, _) = graph_forward(&mut g, &dict, &space, &subnet, code, xv, true).unwrap();
        let forward_macs = g.counters().forward_macs;
        let loss = g.cross_entropy(logits, &y).unwrap();
        g.backward(loss).unwrap();
        (forward_macs, g.counters().total())
    };
    let per_k: Vec<(usize, u64, u64)> = [1, 2, 4, 8, 12]
        .into_iter()
        .map(|k| {
            let (f, t) = step_counters(k);
            (k, f, t)
        })
        .collect();
    let forward_const = per_k.iter().all(|&(_, f, _)| f == per_k[0].1);
    let total1 = per_k[0].2 as f64;
    let total8 = per_k.iter().find(|r| r.0 == 8).unwrap().2 as f64;
    let ratio = total8 / total1;
    outcome(
        forward_const && ratio < 2.0,
        format!(
            "forward MACs per K {:?} constant: {forward_const}; step MACs K=8 / K=1 = {ratio:.3} (need < 2)",
            per_k.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>()
        ),
    )
}

/// Mean code inner product over same-architecture pairs whose channel
/// encodings are farther apart than the positive-pair threshold.
fn far_pair_similarity(toy: &Toy, ckpt: &Checkpoint) -> f64 {
    let space = &toy.cfg.space;
    let threshold = ckpt.config.threshold(space);
    let codes = ckpt.codes_for(&toy.subnets).unwrap();
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..toy.subnets.len() {
        for j in i + 1..toy.subnets.len() {
            let (a, b) = (&toy.subnets[i], &toy.subnets[j]);
            if a.arch == b.arch && a.channels.l1_distance(&b.channels) > threshold {
                sum += codes[i].dot(&codes[j]);
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn c7_regularizer(lab: &Lab) -> Outcome {
    let toy = lab.toy();
    let with: Vec<f64> = lab.learned(4)[..SWEEP_SEEDS as usize]
        .iter()
        .map(|r| far_pair_similarity(toy, &r.ckpt))
        .collect();
    let without: Vec<f64> = lab.alpha0().iter().map(|r| far_pair_similarity(toy, &r.ckpt)).collect();
    let (mw, mo) = (mean(with.iter().copied()), mean(without.iter().copied()));
    outcome(
        mw < mo,
        format!(
            "far-pair code inner product over {SWEEP_SEEDS} seeds: alpha=1 {mw:.4} {} vs alpha=0 {mo:.4} {} (need alpha=1 lower)",
            fmt_list(&with),
            fmt_list(&without)
        ),
    )
}

fn c8_search(lab: &Lab) -> Outcome {
    let toy = lab.toy();
    let space = &toy.cfg.space;
    let mut flops: Vec<u64> = toy.subnets.iter().map(|s| space::count_flops(space, s)).collect();
    flops.sort_unstable();
    let budget_flops = flops[flops.len() / 2];
    let mut wins = 0;
    let mut all_feasible = true;
    let mut top10 = 0;
    let mut sorted = toy.oracle_scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top10_cut = sorted[(sorted.len() / 10).max(1) - 1];
    for (seed, run) in lab.learned(4).iter().enumerate() {
        let cfg = SearchConfig {
            max_flops: Some(budget_flops),
            seed: seed as u64,
            ..toy.cfg.search.clone()
        };
        let budget = cfg.budget().unwrap();
        let out = search(&cfg, &run.ckpt, &toy.val).unwrap();
        let rand = random_search(&run.ckpt, &toy.val, &budget, out.evaluations, seed as u64).unwrap();
        all_feasible &= out.population.iter().all(|i| i.flops <= budget_flops)
            && out.trace.iter().all(|t| t.flops <= budget_flops)
            && rand.iter().all(|i| i.flops <= budget_flops);
        let acc = |s: &Subnet| toy.oracle_by_key[&s.key(space)];
        let (a_evo, a_rand) = (acc(&out.best().subnet), acc(&rand[0].subnet));
        wins += usize::from(a_evo >= a_rand);
        top10 += usize::from(a_evo >= top10_cut);
    }
    outcome(
        wins >= 8 && all_feasible,
        format!(
            "NSGA-II best >= random best (oracle accuracy) in {wins}/10 seeds (need >= 8); all within budget \
             {budget_flops} MACs: {all_feasible}; best in oracle top 10%: {top10}/10"
        ),
    )
}

fn c9_code_spread(lab: &Lab) -> Outcome {
    let toy = lab.toy();
    let runs = lab.learned(4);
    let stats: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| {
            let codes = r.ckpt.codes_for(&toy.subnets).unwrap();
            (code_dispersion(&codes).unwrap().max_std(), max_pairwise_linf(&codes))
        })
        .collect();
    let ok = |&(s, l): &(f64, f64)| s > DEGENERATE_STD && l > DEGENERATE_LINF;
    let healthy = stats.iter().filter(|s| ok(s)).count();
    let (s0, l0) = stats[0];
    outcome(
        ok(&stats[0]),
        format!(
            "default run (seed 0): max coordinate std {s0:.4} (need > 0.01), max pairwise l_inf {l0:.4} (need > 0.05); \
             non-degenerate in {healthy}/{} seeds",
            stats.len()
        ),
    )
}

fn c10_metrics(_: &Lab) -> Outcome {
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    let hand = [
        kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap() == 1.0,
        kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap() == -1.0,
        close(kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 4.0 / 6.0, 1e-15),
        spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() == 1.0,
        close(spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5, 1e-15),
        spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() == -1.0,
        close(pearson(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap(), 1.0, 1e-15),
        close(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0, 1e-15),
        // cov 1.5 / sqrt(1 * 2.3333...) = 0.98198...
        close(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(), 1.5 / (7.0f64 / 3.0).sqrt(), 1e-12)
            && format!("{:.4}", pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap()) == "0.9820",
        close(
            grouped_kendall(&[3.0, 4.0, 2.0, 1.0], &[4.0, 3.0, 2.0, 1.0], 1).unwrap(),
            1.0 / 3.0,
            1e-15,
        ),
    ];
    let hand_ok = hand.iter().filter(|&&b| b).count();

    let mut rng = seeded(10, 0);
    let mut agree = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8usize);
        let g = rng.random_range(1..n);
        // Small integer ranges force ties on both sides.
        let sup: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let ora: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ora[b].total_cmp(&ora[a]).then(a.cmp(&b)));
        let high = &order[..g];
        let low = &order[g..];
        let sign = |v: f64| (v > 0.0) as i64 - (v < 0.0) as i64;
        let mut score = 0i64;
        for &h in high {
            for &l in low {
                score += sign(sup[h] - sup[l]) * sign(ora[h] - ora[l]);
            }
        }
        let brute = score as f64 / (g * (n - g)) as f64;
        if close(grouped_kendall(&sup, &ora, g).unwrap(), brute, 1e-12) {
            agree += 1;
        }
    }
    outcome(
        hand_ok == hand.len() && agree == 1000,
        format!(
            "hand cases {hand_ok}/{}; grouped_kendall matches brute force in {agree}/1000 trials",
            hand.len()
        ),
    )
}

fn c11_baseline_order(lab: &Lab) -> Outcome {
    let kshot = taus(lab.learned(4));
    let one = taus(lab.learned(1));
    let fixed = taus(lab.fixed());
    let random = lab.random_mean_tau();
    let holds = (0..SEEDS as usize)
        .filter(|&s| kshot[s] >= fixed[s] && fixed[s] >= random.max(one[s]))
        .count();
    outcome(
        holds > SEEDS as usize / 2,
        format!(
            "K-shot >= fixed >= max(random, one-shot) in {holds}/10 seeds (need > 5); mean taus: K-shot {:.4} \
             fixed {:.4} random {random:.4} one-shot {:.4}",
            mean(kshot.iter().copied()),
            mean(fixed.iter().copied()),
            mean(one.iter().copied())
        ),
    )
}

type Criterion = (u32, &'static str, fn(&Lab) -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "ranking fidelity K=4 vs K=1", c1_ranking_fidelity),
        (2, "K sweep trend", c2_k_sweep),
        (3, "low-rank gap monotonicity", c3_low_rank),
        (4, "degeneracy equivalences", c4_degeneracy),
        (5, "gradient correctness", c5_gradients),
        (6, "merge cost", c6_cost),
        (7, "channel regularizer effect", c7_regularizer),
        (8, "search quality and budget", c8_search),
        (9, "code non-degeneracy", c9_code_spread),
        (10, "metric correctness", c10_metrics),
        (11, "baseline ordering", c11_baseline_order),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // Cheap criteria first, so their lines appear before the long training runs.
    let order = [10, 5, 6, 4, 3, 9, 1, 2, 7, 8, 11];
    let lab = Lab::default();
    let mut failed = Vec::new();
    for n in order {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let (_, name, f) = criteria[n as usize - 1];
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| f(&lab)));
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "criterion {n:>2} {}: {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
