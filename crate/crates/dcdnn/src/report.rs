//! CSV tables and the JSON summary of a run.
//!
//! Real numbers are written in plain decimal rounded to 6 significant
//! digits; absent values (retention of an empty cluster) are empty fields.
//!
//! | file | columns |
//! |---|---|
//! | `loss_per_round.csv` | modes, round, cluster, groups, mean_loss |
//! | `retention.csv` | modes, round, cluster, retention |
//! | `rounds.csv` | modes, round, total_loss, partitioned_loss, mean_retention, min_retention |
//! | `epochs.csv` | modes, round, cluster, block_size, epoch, lr, loss |
//! | `usage.csv` | block_size, tus, dcdnn_tus, dcdnn_pixels |
//! | `mode_histogram.csv` | family, mode, count |
//! | `decisions.csv` | image, x, y, size, family, mode, sse, bits, cost |
//! | `assignment.csv` | group, image, pu_x, pu_y, pu_size, cluster |
//! | `summary.json` | see [`Summary`] |

use std::fs;
use std::path::Path;

use dcdnn_core::dataset::{BlockOrigin, Dataset};
use dcdnn_core::evaluator::{mode_histogram, Choice, ModeDecision, ModeHistogram};
use dcdnn_core::fcnet::BLOCK_SIZES;
use dcdnn_core::trainer::{Assignment, EpochRecord, EpochStat, RoundRecord, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `v` rounded to 6 significant digits.
pub fn round6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

pub fn fmt6(v: f64) -> String {
    format!("{}", round6(v))
}

fn opt6(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(io_at(path))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_at(path))
}

pub fn write_history_tables(history: &TrainHistory, dir: &Path) -> Result<()> {
    let path = dir.join("loss_per_round.csv");
    let mut w = writer(&path)?;
    w.write_record(["modes", "round", "cluster", "groups", "mean_loss"])?;
    for r in &history.rounds {
        for (c, (loss, groups)) in r.cluster_loss.iter().zip(&r.cluster_groups).enumerate() {
            w.write_record([r.modes.to_string(), r.round.to_string(), c.to_string(), groups.to_string(), opt6(*loss)])?;
        }
    }
    finish(w, &path)?;

    let path = dir.join("retention.csv");
    let mut w = writer(&path)?;
    w.write_record(["modes", "round", "cluster", "retention"])?;
    for r in &history.rounds {
        for (c, ret) in r.retention.iter().enumerate() {
            w.write_record([r.modes.to_string(), r.round.to_string(), c.to_string(), opt6(*ret)])?;
        }
    }
    finish(w, &path)?;

    let path = dir.join("rounds.csv");
    let mut w = writer(&path)?;
    w.write_record(["modes", "round", "total_loss", "partitioned_loss", "mean_retention", "min_retention"])?;
    for r in &history.rounds {
        w.write_record([
            r.modes.to_string(),
            r.round.to_string(),
            fmt6(r.total_loss),
            fmt6(r.partitioned_loss),
            opt6(r.mean_retention()),
            opt6(r.min_retention()),
        ])?;
    }
    finish(w, &path)?;

    let path = dir.join("epochs.csv");
    let mut w = writer(&path)?;
    w.write_record(["modes", "round", "cluster", "block_size", "epoch", "lr", "loss"])?;
    for e in &history.epochs {
        w.write_record([
            e.modes.to_string(),
            e.round.to_string(),
            e.cluster.to_string(),
            e.stat.block_size.to_string(),
            e.stat.epoch.to_string(),
            fmt6(e.stat.lr),
            fmt6(e.stat.loss),
        ])?;
    }
    finish(w, &path)
}

pub fn write_assignment(dataset: &Dataset, assignment: &Assignment, dir: &Path) -> Result<()> {
    if assignment.clusters.len() != dataset.groups.len() {
        return Err(Error::Format(format!(
            "assignment covers {} groups, dataset has {}",
            assignment.clusters.len(),
            dataset.groups.len()
        )));
    }
    let path = dir.join("assignment.csv");
    let mut w = writer(&path)?;
    w.write_record(["group", "image", "pu_x", "pu_y", "pu_size", "cluster"])?;
    for (g, c) in dataset.groups.iter().zip(&assignment.clusters) {
        w.write_record([g.id, g.image, g.pu_x, g.pu_y, g.pu_size, *c].map(|v| v.to_string()))?;
    }
    finish(w, &path)
}

fn choice_fields(c: Choice) -> (&'static str, u32) {
    match c {
        Choice::Baseline(m) => ("baseline", m as u32),
        Choice::Dcdnn(k) => ("dcdnn", k),
    }
}

pub fn write_decisions(decisions: &[ModeDecision], dir: &Path) -> Result<()> {
    let path = dir.join("decisions.csv");
    let mut w = writer(&path)?;
    w.write_record(["image", "x", "y", "size", "family", "mode", "sse", "bits", "cost"])?;
    for d in decisions {
        let (family, mode) = choice_fields(d.chosen);
        let o = d.origin;
        w.write_record([
            o.image.to_string(),
            o.x.to_string(),
            o.y.to_string(),
            o.size.to_string(),
            family.into(),
            mode.to_string(),
            fmt6(d.sse),
            fmt6(d.bits),
            fmt6(d.cost),
        ])?;
    }
    finish(w, &path)
}

/// Decisions as read back from `decisions.csv`, reals rounded.
pub fn read_decisions(path: &Path) -> Result<Vec<ModeDecision>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let int = |i: usize| -> Result<u32> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad integer {:?}", path.display(), field(i))))
        };
        let real = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad number {:?}", path.display(), field(i))))
        };
        let chosen = match field(4) {
            "baseline" => Choice::Baseline(int(5)? as u8),
            "dcdnn" => Choice::Dcdnn(int(5)?),
            f => return Err(Error::Format(format!("{}: bad mode family {f:?}", path.display()))),
        };
        out.push(ModeDecision {
            origin: BlockOrigin {
                image: int(0)?,
                x: int(1)?,
                y: int(2)?,
                size: int(3)?,
            },
            chosen,
            sse: real(6)?,
            bits: real(7)?,
            cost: real(8)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageClass {
    pub block_size: usize,
    pub tus: u64,
    pub dcdnn_tus: u64,
    pub dcdnn_pixels: u64,
}

pub fn usage_classes(decisions: &[ModeDecision]) -> Vec<UsageClass> {
    BLOCK_SIZES
        .iter()
        .map(|&n| {
            let of: Vec<_> = decisions.iter().filter(|d| d.origin.size as usize == n).collect();
            let dcdnn = of.iter().filter(|d| d.chosen.is_dcdnn()).count() as u64;
            UsageClass {
                block_size: n,
                tus: of.len() as u64,
                dcdnn_tus: dcdnn,
                dcdnn_pixels: dcdnn * (n * n) as u64,
            }
        })
        .collect()
}

fn write_usage(classes: &[UsageClass], dir: &Path) -> Result<()> {
    let path = dir.join("usage.csv");
    let mut w = writer(&path)?;
    w.write_record(["block_size", "tus", "dcdnn_tus", "dcdnn_pixels"])?;
    for c in classes {
        w.write_record([c.block_size as u64, c.tus, c.dcdnn_tus, c.dcdnn_pixels].map(|v| v.to_string()))?;
    }
    finish(w, &path)
}

fn write_histogram(h: &ModeHistogram, rows: bool, dir: &Path) -> Result<()> {
    let path = dir.join("mode_histogram.csv");
    let mut w = writer(&path)?;
    w.write_record(["family", "mode", "count"])?;
    if !rows {
        return finish(w, &path);
    }
    for (m, c) in h.baseline.iter().enumerate() {
        w.write_record(["baseline".to_string(), m.to_string(), c.to_string()])?;
    }
    for (k, c) in h.dcdnn.iter().enumerate() {
        w.write_record(["dcdnn".to_string(), k.to_string(), c.to_string()])?;
    }
    finish(w, &path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub modes: usize,
    pub round: u32,
    pub total_loss: f64,
    pub partitioned_loss: f64,
    pub mean_retention: Option<f64>,
    pub min_retention: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub modes: usize,
    pub rounds: Vec<RoundSummary>,
    pub final_mean_retention: Option<f64>,
    pub decisions: u64,
    pub dcdnn_decisions: u64,
    pub histogram_total: u64,
    /// Pixels of all evaluated frames.
    pub frame_pixels: u64,
    pub dcdnn_pixels: u64,
    pub usage_rate: Option<f64>,
    pub usage: Vec<UsageClass>,
}

/// What a report is built from.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs<'a> {
    pub history: Option<&'a TrainHistory>,
    pub decisions: &'a [ModeDecision],
    pub modes: usize,
    /// Frame area for the usage rate; defaults to the decided area.
    pub frame_pixels: Option<u64>,
}

/// Writes every table and `summary.json` into `dir`.
pub fn emit_report(run: &RunOutputs, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let empty = TrainHistory::default();
    let history = run.history.unwrap_or(&empty);
    write_history_tables(history, dir)?;
    write_decisions(run.decisions, dir)?;
    let classes = usage_classes(run.decisions);
    // An empty run leaves every table with its header only.
    let has_rows = !run.decisions.is_empty();
    write_usage(if has_rows { &classes } else { &[] }, dir)?;
    let modes = run
        .decisions
        .iter()
        .filter_map(|d| match d.chosen {
            Choice::Dcdnn(k) => Some(k as usize + 1),
            Choice::Baseline(_) => None,
        })
        .max()
        .unwrap_or(0)
        .max(run.modes);
    let hist = mode_histogram(run.decisions, modes);
    write_histogram(&hist, has_rows, dir)?;

    let frame_pixels = run
        .frame_pixels
        .unwrap_or_else(|| run.decisions.iter().map(|d| (d.origin.size * d.origin.size) as u64).sum());
    let dcdnn_pixels: u64 = classes.iter().map(|c| c.dcdnn_pixels).sum();
    let summary = Summary {
        schema_version: REPORT_SCHEMA_VERSION,
        modes,
        rounds: history
            .rounds
            .iter()
            .map(|r| RoundSummary {
                modes: r.modes,
                round: r.round,
                total_loss: round6(r.total_loss),
                partitioned_loss: round6(r.partitioned_loss),
                mean_retention: r.mean_retention().map(round6),
                min_retention: r.min_retention().map(round6),
            })
            .collect(),
        final_mean_retention: history.rounds.last().and_then(RoundRecord::mean_retention).map(round6),
        decisions: run.decisions.len() as u64,
        dcdnn_decisions: classes.iter().map(|c| c.dcdnn_tus).sum(),
        histogram_total: hist.total(),
        frame_pixels,
        dcdnn_pixels,
        usage_rate: (frame_pixels > 0).then(|| round6(dcdnn_pixels as f64 / frame_pixels as f64)),
        usage: classes,
    };
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&path, text).map_err(io_at(&path))?;
    Ok(summary)
}

// Full-precision history for handing training runs to `report`.

#[derive(Serialize, Deserialize)]
struct RoundJson {
    modes: usize,
    round: u32,
    cluster_groups: Vec<usize>,
    cluster_loss: Vec<Option<f64>>,
    retention: Vec<Option<f64>>,
    total_loss: f64,
    partitioned_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct EpochJson {
    modes: usize,
    round: u32,
    cluster: usize,
    block_size: usize,
    epoch: usize,
    lr: f64,
    loss: f64,
}

#[derive(Serialize, Deserialize)]
struct HistoryJson {
    schema_version: u32,
    rounds: Vec<RoundJson>,
    epochs: Vec<EpochJson>,
    assignment: Option<(u32, Vec<u32>)>,
}

pub fn history_to_json(h: &TrainHistory) -> Result<String> {
    let j = HistoryJson {
        schema_version: REPORT_SCHEMA_VERSION,
        rounds: h
            .rounds
            .iter()
            .map(|r| RoundJson {
                modes: r.modes,
                round: r.round,
                cluster_groups: r.cluster_groups.clone(),
                cluster_loss: r.cluster_loss.clone(),
                retention: r.retention.clone(),
                total_loss: r.total_loss,
                partitioned_loss: r.partitioned_loss,
            })
            .collect(),
        epochs: h
            .epochs
            .iter()
            .map(|e| EpochJson {
                modes: e.modes,
                round: e.round,
                cluster: e.cluster,
                block_size: e.stat.block_size,
                epoch: e.stat.epoch,
                lr: e.stat.lr,
                loss: e.stat.loss,
            })
            .collect(),
        assignment: h.assignment.as_ref().map(|a| (a.round, a.clusters.clone())),
    };
    let mut text = serde_json::to_string_pretty(&j)?;
    text.push('\n');
    Ok(text)
}

pub fn history_from_json(text: &str) -> Result<TrainHistory> {
    let j: HistoryJson = serde_json::from_str(text)?;
    if j.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "history schema version {} is not supported (expects {REPORT_SCHEMA_VERSION})",
            j.schema_version
        )));
    }
    Ok(TrainHistory {
        rounds: j
            .rounds
            .into_iter()
            .map(|r| RoundRecord {
                modes: r.modes,
                round: r.round,
                cluster_groups: r.cluster_groups,
                cluster_loss: r.cluster_loss,
                retention: r.retention,
                total_loss: r.total_loss,
                partitioned_loss: r.partitioned_loss,
            })
            .collect(),
        epochs: j
            .epochs
            .into_iter()
            .map(|e| EpochRecord {
                modes: e.modes,
                round: e.round,
                cluster: e.cluster,
                stat: EpochStat {
                    block_size: e.block_size,
                    epoch: e.epoch,
                    lr: e.lr,
                    loss: e.loss,
                },
            })
            .collect(),
        assignment: j.assignment.map(|(round, clusters)| Assignment { round, clusters }),
    })
}
