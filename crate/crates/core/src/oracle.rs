//! Ground truth by brute force: every subnet of a small space trained from
//! scratch, persisted as a CSV table plus a checksummed binary sidecar of
//! the seed-0 weights.
//!
//! Sidecar record layout, little endian, one per table row in index order:
//! `u32 index`, `u32 n`, `n × f64` values, then the 32-byte SHA-256 of the
//! preceding `8 + 8n` bytes. Values are the row's padded path weights
//! (weight then bias, slot by slot along the path).

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{top1_accuracy, RankingReport, ScorePair};
use crate::rng::derive_seed;
use crate::space::{self, ArchEncoding, ChannelEncoding, SpaceSpec, Subnet};
use crate::standalone::{plain_logits, train_standalone, PlainNet, StandaloneConfig};
use crate::supernet::{SlotId, StandAloneMatrix};
use crate::trainer::TrainConfig;

pub const TABLE_FILE: &str = "oracle.csv";
pub const SIDECAR_FILE: &str = "oracle_weights.bin";
pub const META_FILE: &str = "oracle_meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub seeds: Vec<u64>,
    /// Multiplier on the per-path share of supernet training steps.
    pub fairness_factor: f64,
    /// Lower bound on stand-alone steps, so rows are near convergence.
    pub min_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub enumeration_cap: u64,
    /// Rows trained between two appends to disk.
    pub chunk_size: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seeds: vec![0, 1, 2],
            fairness_factor: 10.0,
            min_steps: 800,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
            enumeration_cap: space::DEFAULT_ENUMERATION_CAP,
            chunk_size: 32,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("oracle needs at least one seed".into()));
        }
        if self.batch_size == 0 || self.chunk_size == 0 || !(self.lr > 0.0) || !(self.fairness_factor > 0.0) {
            return Err(Error::Config(
                "oracle batch_size, chunk_size, lr and fairness_factor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `max(min_steps, ⌈factor · supernet steps / |space|⌉)`.
    pub fn steps(&self, train: &TrainConfig, n_train: usize, space_size: u64) -> usize {
        let spe = train.steps_per_epoch(n_train);
        let total = train.total_epochs * spe;
        let warm = (train.warmup_epochs * spe).min(total);
        let supernet_steps = warm + (warm..total).filter(|s| s % 2 == 0).count();
        let share = (self.fairness_factor * supernet_steps as f64 / space_size.max(1) as f64).ceil() as usize;
        share.max(self.min_steps)
    }

    fn standalone(&self, steps: usize) -> StandaloneConfig {
        StandaloneConfig {
            steps,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub index: usize,
    pub subnet: Subnet,
    pub flops: u64,
    /// Validation accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
    /// Padded path weights of the first seed, one entry per path slot.
    pub weights: Vec<(SlotId, Vec<f64>)>,
}

impl OracleRow {
    pub fn accuracy(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    pub fn accuracy_std(&self) -> f64 {
        let m = self.accuracy();
        let n = self.accuracies.len() as f64;
        (self.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMeta {
    pub space: SpaceSpec,
    pub config: OracleConfig,
    pub steps: usize,
    pub num_rows: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    pub meta: OracleMeta,
    pub rows: Vec<OracleRow>,
}

impl OracleTable {
    /// Mean accuracies in row order.
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(OracleRow::accuracy).collect()
    }

    pub fn subnets(&self) -> Vec<Subnet> {
        self.rows.iter().map(|r| r.subnet.clone()).collect()
    }

    /// Pairs supernet scores, given in row order, with the oracle accuracy.
    pub fn report(&self, label: &str, seed: u64, scores: &[f64]) -> Result<RankingReport> {
        if scores.len() != self.rows.len() {
            return Err(Error::Input(format!(
                "{} scores for {} oracle rows",
                scores.len(),
                self.rows.len()
            )));
        }
        let pairs = self
            .rows
            .iter()
            .zip(scores)
            .map(|(r, &s)| ScorePair {
                subnet: r.subnet.label(),
                flops: r.flops,
                supernet: s,
                oracle: r.accuracy(),
            })
            .collect();
        RankingReport::new(label, seed, pairs)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = read_meta(dir)?.ok_or_else(|| Error::Input(format!("no oracle table in {}", dir.display())))?;
        let rows = read_rows(dir, &meta)?;
        if rows.len() as u64 != meta.num_rows {
            return Err(Error::Integrity {
                path: dir.join(TABLE_FILE),
                row: rows.len(),
                detail: format!("table is incomplete: {} of {} rows", rows.len(), meta.num_rows),
            });
        }
        Ok(OracleTable { meta, rows })
    }
}

/// Stand-alone weights of every path through `slot`, one column per path.
pub fn extract_standalone_matrix(table: &OracleTable, slot: SlotId) -> Result<StandAloneMatrix> {
    let mut columns = Vec::new();
    let mut ids = Vec::new();
    for row in &table.rows {
        if let Some((_, w)) = row.weights.iter().find(|(id, _)| *id == slot) {
            columns.push(w.clone());
            ids.push(row.index);
        }
    }
    if columns.is_empty() {
        return Err(Error::EmptyMatrix(format!("no path uses slot {slot:?}")));
    }
    StandAloneMatrix::new(columns, ids)
}

fn train_row(
    space: &SpaceSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &OracleConfig,
    steps: usize,
    index: usize,
    subnet: Subnet,
) -> Result<OracleRow> {
    let scfg = cfg.standalone(steps);
    let mut accuracies = Vec::with_capacity(cfg.seeds.len());
    let mut weights = Vec::new();
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let net = train_standalone(space, &subnet, train, &scfg, derive_seed(seed, index as u64))?;
        accuracies.push(top1_accuracy(&plain_logits(&net, space, &subnet, &val.x)?, &val.y));
        if i == 0 {
            weights = net.padded_path_weights(space, &subnet);
        }
    }
    Ok(OracleRow {
        index,
        flops: space::count_flops(space, &subnet),
        subnet,
        accuracies,
        weights,
    })
}

fn plan(space: &SpaceSpec, train: &Dataset, train_cfg: &TrainConfig, cfg: &OracleConfig) -> Result<(space::Enumeration, usize)> {
    space.validate()?;
    cfg.validate()?;
    let all = space::enumerate(space, true, cfg.enumeration_cap)?;
    let steps = cfg.steps(train_cfg, train.len(), all.total());
    Ok((all, steps))
}

/// Trains every subnet in memory.
pub fn build_oracle(
    space: &SpaceSpec,
    train: &Dataset,
    val: &Dataset,
    train_cfg: &TrainConfig,
    cfg: &OracleConfig,
) -> Result<OracleTable> {
    let (all, steps) = plan(space, train, train_cfg, cfg)?;
    let total = all.total();
    let subnets: Vec<Subnet> = all.collect();
    let rows = subnets
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| train_row(space, train, val, cfg, steps, i, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleTable {
        meta: OracleMeta {
            space: space.clone(),
            config: cfg.clone(),
            steps,
            num_rows: total,
        },
        rows,
    })
}

/// As [`build_oracle`], persisting to `dir`. Rows already on disk are
/// verified and kept; missing rows are trained and appended in index order.
pub fn build_oracle_in(
    dir: &Path,
    space: &SpaceSpec,
    train: &Dataset,
    val: &Dataset,
    train_cfg: &TrainConfig,
    cfg: &OracleConfig,
) -> Result<OracleTable> {
    let (all, steps) = plan(space, train, train_cfg, cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = OracleMeta {
        space: space.clone(),
        config: cfg.clone(),
        steps,
        num_rows: all.total(),
    };
    let mut rows = match read_meta(dir)? {
        Some(existing) if existing == meta => read_rows(dir, &meta)?,
        Some(_) => {
            return Err(Error::Config(format!(
                "{} holds an oracle built with different settings",
                dir.display()
            )))
        }
        None => {
            write_meta(dir, &meta)?;
            start_files(dir)?;
            Vec::new()
        }
    };
    if !rows.is_empty() {
        info!("resuming oracle at row {} of {}", rows.len(), meta.num_rows);
    }
    let pending: Vec<(usize, Subnet)> = all.enumerate().skip(rows.len()).collect();
    for chunk in pending.chunks(cfg.chunk_size) {
        let fresh = chunk
            .par_iter()
            .map(|(i, s)| train_row(space, train, val, cfg, steps, *i, s.clone()))
            .collect::<Result<Vec<_>>>()?;
        append_rows(dir, &fresh)?;
        rows.extend(fresh);
        info!("oracle rows {}/{}", rows.len(), meta.num_rows);
    }
    Ok(OracleTable { meta, rows })
}

fn read_meta(dir: &Path) -> Result<Option<OracleMeta>> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_meta(dir: &Path, meta: &OracleMeta) -> Result<()> {
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    index: usize,
    arch: String,
    channels: String,
    flops: u64,
    accuracy: f64,
    accuracy_std: f64,
    seed_accuracies: String,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join("-")
}

fn start_files(dir: &Path) -> Result<()> {
    let table = dir.join(TABLE_FILE);
    let header = "index,arch,channels,flops,accuracy,accuracy_std,seed_accuracies\n";
    std::fs::write(&table, header).map_err(|e| Error::io(&table, e))?;
    let sidecar = dir.join(SIDECAR_FILE);
    File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

fn record_bytes(row: &OracleRow) -> Vec<u8> {
    let values: Vec<f64> = row.weights.iter().flat_map(|(_, w)| w.iter().copied()).collect();
    let mut buf = Vec::with_capacity(8 + 8 * values.len() + 32);
    buf.extend_from_slice(&(row.index as u32).to_le_bytes());
    buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(digest.as_slice());
    buf
}

fn append_rows(dir: &Path, rows: &[OracleRow]) -> Result<()> {
    let sidecar = dir.join(SIDECAR_FILE);
    let mut f = OpenOptions::new()
        .append(true)
        .open(&sidecar)
        .map_err(|e| Error::io(&sidecar, e))?;
    for r in rows {
        f.write_all(&record_bytes(r)).map_err(|e| Error::io(&sidecar, e))?;
    }
    f.sync_data().map_err(|e| Error::io(&sidecar, e))?;

    let table = dir.join(TABLE_FILE);
    let file = OpenOptions::new()
        .append(true)
        .open(&table)
        .map_err(|e| Error::io(&table, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(CsvRow {
            index: r.index,
            arch: join(&r.subnet.arch.choices),
            channels: join(&r.subnet.channels.ratios),
            flops: r.flops,
            accuracy: r.accuracy(),
            accuracy_std: r.accuracy_std(),
            seed_accuracies: join(&r.accuracies),
        })
        .map_err(|e| Error::io(&table, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&table, e))
}

fn read_rows(dir: &Path, meta: &OracleMeta) -> Result<Vec<OracleRow>> {
    let table = dir.join(TABLE_FILE);
    let sidecar = dir.join(SIDECAR_FILE);
    let integrity = |path: &PathBuf, row: usize, detail: String| Error::Integrity {
        path: path.clone(),
        row,
        detail,
    };
    let mut reader = csv::Reader::from_path(&table).map_err(|e| Error::io(&table, e.into()))?;
    let bytes = std::fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let all = space::enumerate(&meta.space, true, meta.config.enumeration_cap)?;
    let layout = PlainNet::new(&meta.space, 0)?;
    let mut rows = Vec::new();
    let mut offset = 0usize;
    for (row_no, rec) in reader.deserialize::<CsvRow>().enumerate() {
        let rec = rec.map_err(|e| integrity(&table, row_no, e.to_string()))?;
        if rec.index != row_no {
            return Err(integrity(&table, row_no, format!("index {} out of order", rec.index)));
        }
        let parse_err = |what: &str| integrity(&table, row_no, format!("malformed {what}"));
        let choices = rec
            .arch
            .split('-')
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err("arch"))?;
        let ratios = rec
            .channels
            .split('-')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err("channels"))?;
        let accuracies = rec
            .seed_accuracies
            .split('-')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err("seed_accuracies"))?;
        let subnet = Subnet::new(ArchEncoding::new(choices), ChannelEncoding::new(ratios));
        if row_no as u64 >= all.total() || all.nth_subnet(row_no as u64) != subnet {
            return Err(integrity(&table, row_no, "subnet does not match the enumeration".into()));
        }
        if accuracies.len() != meta.config.seeds.len() {
            return Err(integrity(&table, row_no, "wrong number of seed accuracies".into()));
        }

        // Sidecar record.
        let head = bytes
            .get(offset..offset + 8)
            .ok_or_else(|| integrity(&sidecar, row_no, "record missing or truncated".into()))?;
        let index = u32::from_le_bytes(head[..4].try_into().expect("4 bytes")) as usize;
        let n = u32::from_le_bytes(head[4..].try_into().expect("4 bytes")) as usize;
        let end = offset + 8 + 8 * n;
        let body = bytes
            .get(offset..end)
            .ok_or_else(|| integrity(&sidecar, row_no, "record truncated".into()))?;
        let stored = bytes
            .get(end..end + 32)
            .ok_or_else(|| integrity(&sidecar, row_no, "checksum truncated".into()))?;
        if Sha256::digest(body).as_slice() != stored {
            return Err(integrity(&sidecar, row_no, "checksum mismatch".into()));
        }
        if index != row_no {
            return Err(integrity(&sidecar, row_no, format!("record index {index}")));
        }
        let values: Vec<f64> = body[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset = end + 32;

        let shapes = layout.padded_path_weights(&meta.space, &subnet);
        let expected: usize = shapes.iter().map(|(_, w)| w.len()).sum();
        if expected != values.len() {
            return Err(integrity(
                &sidecar,
                row_no,
                format!("{} values, path needs {expected}", values.len()),
            ));
        }
        let mut weights = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for (id, w) in shapes {
            weights.push((id, values[at..at + w.len()].to_vec()));
            at += w.len();
        }
        rows.push(OracleRow {
            index: row_no,
            flops: space::count_flops(&meta.space, &subnet),
            subnet,
            accuracies,
            weights,
        });
    }
    if offset != bytes.len() {
        return Err(integrity(&sidecar, rows.len(), "trailing bytes after the last row".into()));
    }
    Ok(rows)
}
