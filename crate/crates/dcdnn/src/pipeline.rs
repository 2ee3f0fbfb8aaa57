//! The stages behind each subcommand. Every stage writes a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use dcdnn_core::dataset::{Dataset, Plane};
use dcdnn_core::evaluator::{evaluate_plane, evaluate_samples, BlockEvaluation};
use dcdnn_core::trainer::{self, ModeNets, TrainHistory};
use log::info;

use crate::config::RunConfig;
use crate::dataset_file::{read_dataset, write_dataset};
use crate::error::{io_at, Error, Result};
use crate::manifest::Manifest;
use crate::model_file::{read_bank, write_bank};
use crate::pgm::{expand_inputs, load_plane};
use crate::report::{self, emit_report, RunOutputs, Summary};

pub const BANK_FILE: &str = "bank.dcdb";
pub const HISTORY_FILE: &str = "history.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// `<file>.manifest.json` for stages that write a single file.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn load_planes(inputs: &[PathBuf], manifest: &mut Manifest) -> Result<Vec<Plane>> {
    let paths = expand_inputs(inputs)?;
    if paths.is_empty() {
        return Err(Error::Config("no input images".into()));
    }
    paths
        .iter()
        .map(|p| {
            manifest.add_input(p)?;
            load_plane(p)
        })
        .collect()
}

pub fn extract(cfg: &RunConfig, inputs: &[PathBuf], references: &[PathBuf], out: &Path) -> Result<Dataset> {
    let ex = cfg.extract_config()?;
    let mut manifest = Manifest::new("extract", cfg);
    let planes = load_planes(inputs, &mut manifest)?;
    let refs = if references.is_empty() {
        None
    } else {
        Some(load_planes(references, &mut manifest)?)
    };
    let ds = Dataset::extract(&planes, refs.as_deref(), &ex)?;
    info!(
        "extracted {} groups / {} samples from {} images (sizes {:?})",
        ds.groups.len(),
        ds.samples.len(),
        planes.len(),
        ds.block_sizes
    );
    if ds.groups.is_empty() {
        log::warn!("dataset is empty");
    }
    write_dataset(&ds, out)?;
    manifest.add_output(out)?;
    manifest.write(&manifest_path_for(out))?;
    Ok(ds)
}

fn write_training(dir: &Path, ds: &Dataset, bank: &[ModeNets], history: &TrainHistory, mut manifest: Manifest) -> Result<()> {
    create_dir(dir)?;
    let bank_path = dir.join(BANK_FILE);
    write_bank(bank, &bank_path)?;
    let hist_path = dir.join(HISTORY_FILE);
    fs::write(&hist_path, report::history_to_json(history)?).map_err(io_at(&hist_path))?;
    report::write_history_tables(history, dir)?;
    let mut outputs = vec![bank_path, hist_path];
    if let Some(a) = &history.assignment {
        report::write_assignment(ds, a, dir)?;
        outputs.push(dir.join("assignment.csv"));
    }
    for f in ["loss_per_round.csv", "retention.csv", "rounds.csv", "epochs.csv"] {
        outputs.push(dir.join(f));
    }
    for p in &outputs {
        manifest.add_output(p)?;
    }
    manifest.write(&dir.join(MANIFEST_FILE))
}

pub fn pretrain(cfg: &RunConfig, dataset: &Path, out_dir: &Path) -> Result<Vec<ModeNets>> {
    let tcfg = cfg.trainer_config()?;
    let mut manifest = Manifest::new("pretrain", cfg);
    manifest.add_input(dataset)?;
    let ds = read_dataset(dataset)?;
    let (mode, mut history) = trainer::pretrain(&ds, &tcfg)?;
    let bank = vec![mode];
    history.assignment = Some(trainer::partition(&ds, &bank, 0)?);
    if let Some(last) = history.epochs.last() {
        info!("pretrained: final epoch loss {:.6}", last.stat.loss);
    }
    write_training(out_dir, &ds, &bank, &history, manifest)?;
    Ok(bank)
}

pub fn split(cfg: &RunConfig, models: &Path, out: &Path) -> Result<Vec<ModeNets>> {
    let mut manifest = Manifest::new("split", cfg);
    manifest.add_input(models)?;
    let bank = read_bank(models)?;
    let doubled = trainer::split_modes(&bank, &cfg.split_config())?;
    info!("split {} modes into {}", bank.len(), doubled.len());
    write_bank(&doubled, out)?;
    manifest.add_output(out)?;
    manifest.write(&manifest_path_for(out))?;
    Ok(doubled)
}

/// Refines the given bank, then keeps splitting and refining up to `modes`.
pub fn train(cfg: &RunConfig, dataset: &Path, models: Option<&Path>, out_dir: &Path) -> Result<(Vec<ModeNets>, TrainHistory)> {
    let Some(models) = models else {
        return Err(Error::Config(
            "train needs --models: a bank written by `pretrain` or `split`".into(),
        ));
    };
    let tcfg = cfg.trainer_config()?;
    let mut manifest = Manifest::new("train", cfg);
    manifest.add_input(dataset)?;
    manifest.add_input(models)?;
    let ds = read_dataset(dataset)?;
    let mut bank = read_bank(models)?;
    if bank.is_empty() || bank.len() > tcfg.modes || !bank.len().is_power_of_two() {
        return Err(Error::Config(format!(
            "bank holds {} modes, target is {} (must be a power of two no larger than the target)",
            bank.len(),
            tcfg.modes
        )));
    }
    let mut history = TrainHistory::default();
    trainer::refine(&ds, &mut bank, &tcfg, &mut history)?;
    while bank.len() < tcfg.modes {
        bank = trainer::split_modes(&bank, &tcfg.split)?;
        trainer::refine(&ds, &mut bank, &tcfg, &mut history)?;
    }
    for r in &history.rounds {
        info!(
            "K={} round {}: total loss {:.6e}, mean retention {}",
            r.modes,
            r.round,
            r.total_loss,
            r.mean_retention().map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    write_training(out_dir, &ds, &bank, &history, manifest)?;
    Ok((bank, history))
}

pub enum EvalSource<'a> {
    Dataset(&'a Path),
    Images(&'a [PathBuf]),
}

fn summarize(evals: &[BlockEvaluation]) -> (f64, f64) {
    evals.iter().fold((0.0, 0.0), |(b, d), e| (b + e.baseline_sse, d + e.dcdnn_sse))
}

/// Mode decisions for every block; `block_size` picks the TU grid for images.
pub fn evaluate(
    cfg: &RunConfig,
    models: &Path,
    source: EvalSource,
    block_size: Option<usize>,
    out_dir: &Path,
) -> Result<Summary> {
    let mut manifest = Manifest::new("evaluate", cfg);
    manifest.add_input(models)?;
    let bank = read_bank(models)?;
    let cost = cfg.cost_model(bank.len())?;
    let sizes = bank.first().map(ModeNets::block_sizes).unwrap_or_default();
    let ref_lines = bank
        .first()
        .and_then(|m| m.nets.first())
        .map(|n| n.ref_lines)
        .ok_or_else(|| Error::Config("empty model bank".into()))?;
    let (evals, frame_pixels) = match source {
        EvalSource::Dataset(path) => {
            manifest.add_input(path)?;
            let ds = read_dataset(path)?;
            if ds.ref_lines != ref_lines {
                return Err(Error::Config(format!(
                    "dataset has {} reference lines, models expect {ref_lines}",
                    ds.ref_lines
                )));
            }
            (evaluate_samples(&ds, &bank, &cost)?, None)
        }
        EvalSource::Images(paths) => {
            let n = match block_size {
                Some(n) => n,
                None => *sizes.iter().find(|&&n| n == 8).or(sizes.first()).expect("non-empty bank"),
            };
            let planes = load_planes(paths, &mut manifest)?;
            let mut evals = Vec::new();
            let mut frame = 0u64;
            for (i, plane) in planes.iter().enumerate() {
                evals.extend(evaluate_plane(plane, i as u32, n, ref_lines, &bank, &cost)?);
                frame += (plane.width * plane.height) as u64;
            }
            (evals, Some(frame))
        }
    };
    let decisions: Vec<_> = evals.iter().map(|e| e.decision).collect();
    let (baseline_sse, dcdnn_sse) = summarize(&evals);
    info!(
        "{} blocks, lambda {:.4}: summed best SSE baseline {:.6e}, learned {:.6e}",
        decisions.len(),
        cost.lambda,
        baseline_sse,
        dcdnn_sse
    );
    let summary = emit_report(
        &RunOutputs {
            history: None,
            decisions: &decisions,
            modes: bank.len(),
            frame_pixels,
        },
        out_dir,
    )?;
    info!(
        "usage rate {}",
        summary.usage_rate.map_or("-".into(), |v| format!("{v:.4}"))
    );
    for f in ["decisions.csv", "usage.csv", "mode_histogram.csv", "summary.json"] {
        manifest.add_output(&out_dir.join(f))?;
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(summary)
}

/// Rebuilds the report tables of a training and/or evaluation directory.
pub fn report(cfg: &RunConfig, run_dirs: &[PathBuf], out_dir: &Path) -> Result<Summary> {
    let mut manifest = Manifest::new("report", cfg);
    let mut history: Option<TrainHistory> = None;
    let mut decisions = Vec::new();
    let mut modes = 0;
    let mut frame_pixels = None;
    for dir in run_dirs {
        let hist = dir.join(HISTORY_FILE);
        if hist.exists() {
            manifest.add_input(&hist)?;
            let text = fs::read_to_string(&hist).map_err(io_at(&hist))?;
            let h = report::history_from_json(&text)?;
            let merged = history.get_or_insert_with(TrainHistory::default);
            merged.rounds.extend(h.rounds);
            merged.epochs.extend(h.epochs);
            merged.assignment = h.assignment.or(merged.assignment.take());
        }
        let bank = dir.join(BANK_FILE);
        if bank.exists() {
            modes = modes.max(read_bank(&bank)?.len());
        }
        let dec = dir.join("decisions.csv");
        if dec.exists() {
            manifest.add_input(&dec)?;
            decisions.extend(report::read_decisions(&dec)?);
            let summary = dir.join("summary.json");
            if summary.exists() {
                let text = fs::read_to_string(&summary).map_err(io_at(&summary))?;
                let s: Summary = serde_json::from_str(&text)?;
                modes = modes.max(s.modes);
                frame_pixels = Some(frame_pixels.unwrap_or(0) + s.frame_pixels);
            }
        }
    }
    if history.is_none() && decisions.is_empty() {
        return Err(Error::Config(format!(
            "no {HISTORY_FILE} or decisions.csv found in {}",
            run_dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    let summary = emit_report(
        &RunOutputs {
            history: history.as_ref(),
            decisions: &decisions,
            modes,
            frame_pixels,
        },
        out_dir,
    )?;
    for f in [
        "loss_per_round.csv",
        "retention.csv",
        "rounds.csv",
        "epochs.csv",
        "decisions.csv",
        "usage.csv",
        "mode_histogram.csv",
        "summary.json",
    ] {
        manifest.add_output(&out_dir.join(f))?;
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(summary)
}

/// extract → pretrain → split → train → evaluate → report under `out_dir`.
pub fn run_all(cfg: &RunConfig, inputs: &[PathBuf], out_dir: &Path) -> Result<Summary> {
    create_dir(out_dir)?;
    let data = out_dir.join("data.dcds");
    extract(cfg, inputs, &[], &data)?;
    let pre = out_dir.join("pretrain");
    pretrain(cfg, &data, &pre)?;
    let train_dir = out_dir.join("train");
    if cfg.modes > 1 {
        let split_bank = out_dir.join("split.dcdb");
        split(cfg, &pre.join(BANK_FILE), &split_bank)?;
        train(cfg, &data, Some(&split_bank), &train_dir)?;
    } else {
        create_dir(&train_dir)?;
        fs::copy(pre.join(BANK_FILE), train_dir.join(BANK_FILE)).map_err(io_at(&train_dir))?;
    }
    let eval = out_dir.join("evaluate");
    evaluate(cfg, &train_dir.join(BANK_FILE), EvalSource::Dataset(&data), None, &eval)?;
    let dirs = if cfg.modes > 1 { vec![train_dir, eval] } else { vec![pre, eval] };
    report(cfg, &dirs, &out_dir.join("report"))
}

/// Writes `images` PGM planes of tiled synthetic textures plus `labels.txt`
/// (one line per image, family index per tile in raster order).
pub fn synth(out_dir: &Path, families: usize, images: usize, size: usize, tile: usize, seed: u64) -> Result<Vec<PathBuf>> {
    use dcdnn_core::synthetic::{tiled_plane, Family, TextureParams};
    if families == 0 || families > Family::ALL.len() {
        return Err(Error::Config(format!("families must be 1..={}", Family::ALL.len())));
    }
    create_dir(out_dir)?;
    let mut labels = String::new();
    let mut paths = Vec::new();
    for i in 0..images {
        let s = dcdnn_core::rng::derive_seed(seed, &[i as u64]);
        let (plane, tiles) = tiled_plane(size, size, tile, &Family::ALL[..families], &TextureParams::default(), s)?;
        let path = out_dir.join(format!("synth_{i:04}.pgm"));
        crate::pgm::save_pgm(&plane, &path)?;
        let line: Vec<String> = tiles.iter().map(usize::to_string).collect();
        labels.push_str(&line.join(" "));
        labels.push('\n');
        paths.push(path);
    }
    let lp = out_dir.join("labels.txt");
    fs::write(&lp, labels).map_err(io_at(&lp))?;
    Ok(paths)
}
