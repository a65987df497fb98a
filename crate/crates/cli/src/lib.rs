//! Subcommand implementations behind the `kshot` binary. Every command reads
//! an [`ExperimentConfig`], writes its outputs under the configured output
//! directory, and is deterministic for a fixed config and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kshot_core::baselines::{baseline_scores, run_baseline, BaselineKind};
use kshot_core::checkpoint::Checkpoint;
use kshot_core::config::ExperimentConfig;
use kshot_core::data::Dataset;
use kshot_core::metrics::{code_dispersion, comparison_csv, is_degenerate, max_pairwise_linf, RankingReport};
use kshot_core::oracle::{build_oracle_in, OracleTable};
use kshot_core::search::{score_subnets, search, SearchOutcome};
use kshot_core::trainer::train;
use kshot_core::{Error, Result};
use log::info;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const ORACLE_DIR: &str = "oracle";
pub const TRACE_FILE: &str = "search_trace.csv";
pub const BEST_FILE: &str = "search_best.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
}

/// Reads the config (defaults when `path` is `None`) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(k) = overrides.k {
        cfg.train.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Process exit status for an error; 2 is left to usage errors.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse(_) => 3,
        Error::InfeasibleBudget { .. } => 4,
        Error::EnumerationCap { .. } => 5,
        Error::Divergence { .. } => 6,
        Error::Integrity { .. } => 7,
        Error::Io { .. } => 8,
        _ => 1,
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    Ok(cfg.out_dir.clone())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    cfg.data.generate()
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.space != cfg.space {
        return Err(Error::Config(format!(
            "{} was trained on a different search space than the config describes",
            path.display()
        )));
    }
    Ok(ckpt)
}

fn load_oracle(cfg: &ExperimentConfig) -> Result<OracleTable> {
    let dir = cfg.out_dir.join(ORACLE_DIR);
    let table = OracleTable::load(&dir)?;
    if table.meta.space != cfg.space {
        return Err(Error::Config(format!(
            "oracle in {} covers a different search space",
            dir.display()
        )));
    }
    Ok(table)
}

/// Trains a supernet and writes the checkpoint plus its training log.
/// Returns the checkpoint path.
pub fn cmd_train(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let dir = out_dir(cfg)?;
    let (train_set, _) = datasets(cfg)?;
    let (ckpt, log) = train(&cfg.train, &cfg.space, &train_set)?;
    let path = checkpoint.map_or_else(|| dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    ckpt.save(&path)?;
    log.write_csv(&dir.join(TRAIN_LOG_FILE))?;
    info!(
        "trained K={} for {} steps; checkpoint at {}",
        ckpt.k(),
        ckpt.steps_completed,
        path.display()
    );
    Ok(path)
}

/// Builds or resumes the stand-alone oracle table under `<out>/oracle`.
pub fn cmd_oracle(cfg: &ExperimentConfig) -> Result<OracleTable> {
    let dir = out_dir(cfg)?.join(ORACLE_DIR);
    let (train_set, val) = datasets(cfg)?;
    build_oracle_in(&dir, &cfg.space, &train_set, &val, &cfg.train, &cfg.oracle)
}

/// Runs NSGA-II on a trained checkpoint and writes the trace and the best
/// individual. The best individual's oracle accuracy is included when an
/// oracle table exists.
pub fn cmd_search(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<SearchOutcome> {
    let dir = out_dir(cfg)?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let (_, val) = datasets(cfg)?;
    let outcome = search(&cfg.search, &ckpt, &val)?;
    outcome.write_trace(&dir.join(TRACE_FILE))?;
    let best = outcome.best();
    let oracle_acc = match load_oracle(cfg) {
        Ok(table) => table
            .rows
            .iter()
            .find(|r| r.subnet == best.subnet)
            .map(|r| r.accuracy().to_string())
            .unwrap_or_default(),
        Err(_) => String::new(),
    };
    let ratios: Vec<String> = best.subnet.channels.ratios.iter().map(f64::to_string).collect();
    let ops: Vec<String> = best.subnet.arch.choices.iter().map(usize::to_string).collect();
    let text = format!(
        "arch,channels,score,flops,evaluations,oracle_accuracy\n{},{},{},{},{},{}\n",
        ops.join("-"),
        ratios.join("-"),
        best.score,
        best.flops,
        outcome.evaluations,
        oracle_acc
    );
    write_file(&dir.join(BEST_FILE), &text)?;
    Ok(outcome)
}

fn code_summary(ckpt: &Checkpoint, table: &OracleTable) -> Result<(String, String)> {
    let codes = ckpt.codes_for(&table.subnets())?;
    let disp = code_dispersion(&codes)?;
    let line = format!(
        " code_max_std={:.4} code_max_linf={:.4}{}",
        disp.max_std(),
        max_pairwise_linf(&codes),
        if ckpt.k() > 1 && is_degenerate(&codes)? {
            " DEGENERATE (codes nearly constant; behaves as one-shot)"
        } else {
            ""
        }
    );
    Ok((line, disp.histogram.to_csv()))
}

fn unique_label(stem: String, taken: &[RankingReport]) -> String {
    if !taken.iter().any(|r| r.label == stem) {
        return stem;
    }
    (2..).map(|i| format!("{stem}_{i}")).find(|l| !taken.iter().any(|r| &r.label == l)).unwrap()
}

/// Scores every oracle row on each checkpoint and writes one ranking table
/// and code histogram per checkpoint, a side-by-side comparison, and a
/// summary. Returns the summary text.
pub fn cmd_report(cfg: &ExperimentConfig, checkpoints: &[PathBuf]) -> Result<String> {
    if checkpoints.is_empty() {
        return Err(Error::Config("report needs at least one checkpoint".into()));
    }
    let dir = out_dir(cfg)?;
    let table = load_oracle(cfg)?;
    let (_, val) = datasets(cfg)?;
    let subnets = table.subnets();
    let mut reports: Vec<RankingReport> = Vec::new();
    let mut summary = String::new();
    for path in checkpoints {
        let ckpt = load_checkpoint(cfg, path)?;
        let stem = path.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
        let label = unique_label(stem, &reports);
        let scores = score_subnets(&ckpt, &subnets, &val, cfg.search.eval_batch)?;
        let report = table.report(&label, ckpt.config.seed, &scores)?;
        report.write_pairs_csv(&dir.join(format!("report_{label}.csv")))?;
        let (codes_line, histogram) = code_summary(&ckpt, &table)?;
        write_file(&dir.join(format!("codes_{label}.csv")), &histogram)?;
        let _ = writeln!(summary, "{} k={}{codes_line}", report.summary(), ckpt.k());
        reports.push(report);
    }
    write_file(&dir.join(COMPARISON_FILE), &comparison_csv(&reports))?;
    write_file(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Trains one baseline arm, saves its checkpoints under
/// `<out>/baseline_<kind>`, and ranks it against the oracle. Returns the
/// summary text.
pub fn cmd_baseline(cfg: &ExperimentConfig, kind: BaselineKind) -> Result<String> {
    let table = load_oracle(cfg)?;
    let dir = out_dir(cfg)?.join(format!("baseline_{kind}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let (train_set, val) = datasets(cfg)?;
    let run = run_baseline(kind, &cfg.train, &cfg.space, &train_set)?;
    for (i, (ckpt, log)) in run.checkpoints.iter().zip(&run.logs).enumerate() {
        ckpt.save(&dir.join(format!("checkpoint_{i}.json")))?;
        log.write_csv(&dir.join(format!("train_log_{i}.csv")))?;
    }
    let score_sets = baseline_scores(&run, &table.subnets(), &val)?;
    let mut reports = Vec::new();
    for (i, scores) in score_sets.iter().enumerate() {
        let label = if score_sets.len() == 1 {
            kind.to_string()
        } else {
            format!("{kind}_{i}")
        };
        let report = table.report(&label, cfg.seed, scores)?;
        report.write_pairs_csv(&dir.join(format!("report_{label}.csv")))?;
        reports.push(report);
    }
    let mean_tau = reports.iter().map(|r| r.kendall).sum::<f64>() / reports.len() as f64;
    let mut summary = String::new();
    for r in &reports {
        let _ = writeln!(summary, "{}", r.summary());
    }
    let _ = writeln!(
        summary,
        "{kind}: runs={} mean_kendall={mean_tau:.4} training_steps={}",
        reports.len(),
        run.training_steps
    );
    write_file(&dir.join(COMPARISON_FILE), &comparison_csv(&reports))?;
    write_file(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
