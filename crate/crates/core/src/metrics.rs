//! Rank correlation between supernet scores and ground truth, plus
//! dispersion statistics for simplex codes.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simplex::SimplexCode;
use crate::tensor::Tensor;

fn check_pair(op: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("{op}: lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Input(format!("{op}: need at least two entries")));
    }
    Ok(())
}

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// `(concordant − discordant) / C(n, 2)`. A pair tied on either side
/// counts as neither but stays in the denominator.
pub fn kendall_tau(r: &[f64], s: &[f64]) -> Result<f64> {
    check_pair("kendall_tau", r, s)?;
    let n = r.len();
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            score += sign(r[i] - r[j]) * sign(s[i] - s[j]);
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

/// Sample covariance over the product of sample standard deviations.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("pearson", x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn is_permutation(r: &[f64]) -> bool {
    let n = r.len();
    let mut seen = vec![false; n];
    for &v in r {
        if v.fract() != 0.0 || v < 1.0 || v > n as f64 {
            return false;
        }
        let i = v as usize - 1;
        if seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// `1 − 6Σd²/(n(n²−1))` when both inputs are permutations of `1..=n`;
/// otherwise Pearson on midranks.
pub fn spearman_rho(r: &[f64], s: &[f64]) -> Result<f64> {
    check_pair("spearman_rho", r, s)?;
    if is_permutation(r) && is_permutation(s) {
        let n = r.len() as f64;
        let d2: f64 = r.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
        return Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)));
    }
    pearson(&midranks(r, false), &midranks(s, false))
}

fn midranks(scores: &[f64], descending: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let c = scores[a].total_cmp(&scores[b]);
        if descending {
            c.reverse()
        } else {
            c
        }
    });
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Rank 1 is the highest score; tied scores share their midrank.
pub fn to_ranks(scores: &[f64]) -> Vec<f64> {
    midranks(scores, true)
}

/// Indices of the top `g` entries by oracle score; ties broken by index.
fn high_group(oracle: &[f64], g: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..oracle.len()).collect();
    order.sort_by(|&a, &b| oracle[b].total_cmp(&oracle[a]).then(a.cmp(&b)));
    let mut high = vec![false; oracle.len()];
    for &i in &order[..g] {
        high[i] = true;
    }
    high
}

/// Kendall tau restricted to pairs with one member among the top `g` by
/// oracle score and the other outside it.
pub fn grouped_kendall(supernet: &[f64], oracle: &[f64], g: usize) -> Result<f64> {
    check_pair("grouped_kendall", supernet, oracle)?;
    let n = supernet.len();
    if g == 0 || g >= n {
        return Err(Error::Input(format!("group size {g} outside 1..{n}")));
    }
    let high = high_group(oracle, g);
    let mut low_scores: Vec<f64> = (0..n).filter(|&i| !high[i]).map(|i| supernet[i]).collect();
    low_scores.sort_by(f64::total_cmp);
    // Oracle ties can only straddle the boundary at the lowest high score.
    let boundary = (0..n)
        .filter(|&i| high[i])
        .map(|i| oracle[i])
        .fold(f64::INFINITY, f64::min);
    let tied_lows: Vec<usize> = (0..n).filter(|&i| !high[i] && oracle[i] == boundary).collect();
    let mut score = 0i64;
    for h in (0..n).filter(|&i| high[i]) {
        let below = low_scores.partition_point(|&v| v < supernet[h]) as i64;
        let above = (low_scores.len() - low_scores.partition_point(|&v| v <= supernet[h])) as i64;
        score += below - above;
        if oracle[h] == boundary {
            for &l in &tied_lows {
                score -= sign(supernet[h] - supernet[l]);
            }
        }
    }
    Ok(score as f64 / (g * (n - g)) as f64)
}

/// Fraction of rows whose largest logit is at the label.
pub fn top1_accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let pred = crate::tensor::argmax_rows(logits);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Per-coordinate spread of a set of codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dispersion {
    pub mean: Vec<f64>,
    /// Population standard deviation per coordinate.
    pub std: Vec<f64>,
    pub histogram: Histogram,
}

impl Dispersion {
    pub fn max_std(&self) -> f64 {
        self.std.iter().cloned().fold(0.0, f64::max)
    }
}

pub const HISTOGRAM_BINS: usize = 20;

/// Per-coordinate counts over equal bins of `[0, 1]`; the last bin is
/// closed.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub counts: Vec<[u64; HISTOGRAM_BINS]>,
}

impl Histogram {
    pub fn bin_of(v: f64) -> usize {
        ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi");
        for k in 0..self.counts.len() {
            let _ = write!(out, ",coord_{k}");
        }
        out.push('\n');
        for b in 0..HISTOGRAM_BINS {
            let lo = b as f64 / HISTOGRAM_BINS as f64;
            let hi = (b + 1) as f64 / HISTOGRAM_BINS as f64;
            let _ = write!(out, "{lo},{hi}");
            for c in &self.counts {
                let _ = write!(out, ",{}", c[b]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn code_dispersion(codes: &[SimplexCode]) -> Result<Dispersion> {
    if codes.len() < 2 {
        return Err(Error::Input("dispersion needs at least two codes".into()));
    }
    let k = codes[0].len();
    if codes.iter().any(|c| c.len() != k) {
        return Err(Error::shape("code_dispersion", "codes differ in length"));
    }
    let n = codes.len() as f64;
    let mut mean = vec![0.0; k];
    let mut counts = vec![[0u64; HISTOGRAM_BINS]; k];
    for c in codes {
        for (j, &v) in c.coeffs().iter().enumerate() {
            mean[j] += v / n;
            counts[j][Histogram::bin_of(v)] += 1;
        }
    }
    let std = (0..k)
        .map(|j| {
            let var = codes.iter().map(|c| (c.coeffs()[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    Ok(Dispersion {
        mean,
        std,
        histogram: Histogram { counts },
    })
}

/// Largest ℓ∞ distance between any two codes.
pub fn max_pairwise_linf(codes: &[SimplexCode]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in codes.iter().enumerate() {
        for b in &codes[i + 1..] {
            best = best.max(a.linf_distance(b));
        }
    }
    best
}

/// Minimum per-coordinate std a trained code set must exceed.
pub const DEGENERATE_STD: f64 = 0.01;
/// Minimum ℓ∞ gap between some two codes of a trained code set.
pub const DEGENERATE_LINF: f64 = 0.05;

/// True when codes barely vary across the space, so the supernet behaves
/// like a single one-shot supernet.
pub fn is_degenerate(codes: &[SimplexCode]) -> Result<bool> {
    let d = code_dispersion(codes)?;
    Ok(d.max_std() <= DEGENERATE_STD || max_pairwise_linf(codes) <= DEGENERATE_LINF)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScorePair {
    pub subnet: String,
    pub flops: u64,
    pub supernet: f64,
    pub oracle: f64,
}

/// Paired scores of one evaluator against ground truth, with every
/// correlation statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub label: String,
    pub seed: u64,
    pub pairs: Vec<ScorePair>,
    pub kendall: f64,
    /// `None` when either side has no variance.
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub grouped: Vec<(usize, f64)>,
}

fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl RankingReport {
    pub fn new(label: impl Into<String>, seed: u64, pairs: Vec<ScorePair>) -> Result<Self> {
        let sup: Vec<f64> = pairs.iter().map(|p| p.supernet).collect();
        let ora: Vec<f64> = pairs.iter().map(|p| p.oracle).collect();
        let kendall = kendall_tau(&sup, &ora)?;
        let spearman = undefined_as_none(spearman_rho(&to_ranks(&sup), &to_ranks(&ora)))?;
        let pearson = undefined_as_none(pearson(&sup, &ora))?;
        let n = pairs.len();
        let mut grouped = Vec::new();
        for g in [n / 8, n / 4, n / 2] {
            if g >= 1 && g < n && grouped.last().map(|&(last, _)| last) != Some(g) {
                grouped.push((g, grouped_kendall(&sup, &ora, g)?));
            }
        }
        Ok(RankingReport {
            label: label.into(),
            seed,
            pairs,
            kendall,
            spearman,
            pearson,
            grouped,
        })
    }

    pub fn write_pairs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        for p in &self.pairs {
            w.serialize(p).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let mut s = format!(
            "{} (seed {}): n={} kendall={:.4} spearman={} pearson={}",
            self.label,
            self.seed,
            self.pairs.len(),
            self.kendall,
            opt(self.spearman),
            opt(self.pearson)
        );
        for (g, t) in &self.grouped {
            let _ = write!(s, " grouped[{g}]={t:.4}");
        }
        s
    }
}

/// One row per report, for side-by-side comparison.
pub fn comparison_csv(reports: &[RankingReport]) -> String {
    let mut out = String::from("label,seed,n,kendall,spearman,pearson,grouped\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in reports {
        let grouped: Vec<String> = r.grouped.iter().map(|(g, t)| format!("{g}:{t}")).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label,
            r.seed,
            r.pairs.len(),
            r.kendall,
            opt(r.spearman),
            opt(r.pearson),
            grouped.join(";")
        );
    }
    out
}
