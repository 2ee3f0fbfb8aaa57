//! Rate-distortion mode decision between the directional baseline and the
//! learned modes, plus usage statistics.
//!
//! Bits are idealized: one flag distinguishes the two mode families, a
//! baseline mode costs a fixed `baseline_mode_bits`, and a learned mode
//! costs `log2(K)` bits for a bank of `K` modes. A candidate's cost is
//! `sse + lambda · bits`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::baseline::{self, DirectionalMode, RefLine, NUM_MODES};
use crate::dataset::{extract_sample, reference_layout, BlockOrigin, Dataset, Plane, TrainSample};
use crate::error::{Error, Result};
use crate::trainer::{predict_centered, ModeNets};

/// HEVC-style Lagrange multiplier for a quantization parameter.
pub fn lambda_from_qp(qp: f64) -> f64 {
    0.85 * libm::pow(2.0, (qp - 12.0) / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub lambda: f64,
    pub flag_bits: f64,
    pub baseline_mode_bits: f64,
    /// Number of learned modes `K`.
    pub modes: usize,
}

impl CostModel {
    pub fn new(lambda: f64, modes: usize) -> Result<Self> {
        let m = CostModel {
            lambda,
            flag_bits: 1.0,
            baseline_mode_bits: 6.0,
            modes,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.modes == 0 {
            return Err(Error::Config("cost model needs K >= 1".into()));
        }
        if !(self.flag_bits >= 0.0 && self.baseline_mode_bits >= 0.0) {
            return Err(Error::Config("bit costs must be >= 0".into()));
        }
        Ok(())
    }

    pub fn dcdnn_mode_bits(&self) -> f64 {
        libm::log2(self.modes as f64)
    }

    pub fn baseline_bits(&self) -> f64 {
        self.flag_bits + self.baseline_mode_bits
    }

    pub fn dcdnn_bits(&self) -> f64 {
        self.flag_bits + self.dcdnn_mode_bits()
    }

    pub fn cost(&self, sse: f64, bits: f64) -> f64 {
        sse + self.lambda * bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Choice {
    Baseline(u8),
    Dcdnn(u32),
}

impl Choice {
    pub fn is_dcdnn(self) -> bool {
        matches!(self, Choice::Dcdnn(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDecision {
    pub origin: BlockOrigin,
    pub chosen: Choice,
    pub sse: f64,
    pub bits: f64,
    pub cost: f64,
}

/// What the decision needs to know about one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockContext {
    pub sample: TrainSample,
    pub refs: RefLine,
    /// Original pixels, row-major.
    pub block: Vec<i32>,
}

impl BlockContext {
    pub fn from_plane(plane: &Plane, image: u32, x: usize, y: usize, block_size: usize, ref_lines: usize) -> Result<Self> {
        let mut sample = extract_sample(plane, x, y, block_size, ref_lines)?;
        sample.origin.image = image;
        Self::from_sample(sample, ref_lines)
    }

    /// Rebuilds the single-line references and pixels from a centered sample.
    pub fn from_sample(sample: TrainSample, ref_lines: usize) -> Result<Self> {
        let n = sample.block_size();
        let layout = reference_layout(n, ref_lines);
        if layout.len() != sample.ref_vector.len() {
            return Err(Error::shape("sample reference vector", layout.len(), sample.ref_vector.len()));
        }
        let mut above = vec![0i32; 2 * n + 1];
        let mut left = vec![0i32; 2 * n + 1];
        let pixel = |v: f64| libm::round(v + sample.ref_mean) as i32;
        for (&(dx, dy), &v) in layout.iter().zip(&sample.ref_vector) {
            match (dx, dy) {
                (-1, -1) => {
                    above[0] = pixel(v);
                    left[0] = pixel(v);
                }
                (dx, -1) if dx >= 0 => above[1 + dx as usize] = pixel(v),
                (-1, dy) if dy >= 0 => left[1 + dy as usize] = pixel(v),
                _ => {}
            }
        }
        let block = sample.original_block().into_iter().map(i32::from).collect();
        Ok(BlockContext {
            refs: RefLine::new(n, above, left)?,
            block,
            sample,
        })
    }

    pub fn block_size(&self) -> usize {
        self.sample.block_size()
    }
}

fn dcdnn_sse(ctx: &BlockContext, mode: &ModeNets) -> Result<f64> {
    let n = ctx.block_size();
    let net = mode
        .get(n)
        .ok_or_else(|| Error::Config(format!("no network for {n}x{n} blocks")))?;
    let pred = predict_centered(net, &ctx.sample)?;
    Ok(pred.iter().zip(&ctx.sample.target).map(|(p, t)| (p - t) * (p - t)).sum())
}

/// Every candidate `(choice, sse, bits)` in decision order: baseline modes
/// 0..=34, then learned modes 0..K.
pub fn candidates(ctx: &BlockContext, bank: &[ModeNets], cost: &CostModel) -> Result<Vec<(Choice, f64, f64)>> {
    let mut out = Vec::with_capacity(NUM_MODES + bank.len());
    for mode in DirectionalMode::all() {
        let sse = baseline::sse(&ctx.block, &baseline::predict(mode, &ctx.refs)) as f64;
        out.push((Choice::Baseline(mode.index()), sse, cost.baseline_bits()));
    }
    for (k, mode) in bank.iter().enumerate() {
        out.push((Choice::Dcdnn(k as u32), dcdnn_sse(ctx, mode)?, cost.dcdnn_bits()));
    }
    Ok(out)
}

/// A decision together with the best SSE each mode family reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEvaluation {
    pub decision: ModeDecision,
    pub baseline_sse: f64,
    /// Infinite when the bank is empty.
    pub dcdnn_sse: f64,
}

pub fn evaluate_block(ctx: &BlockContext, bank: &[ModeNets], cost: &CostModel) -> Result<BlockEvaluation> {
    cost.validate()?;
    let mut best: Option<ModeDecision> = None;
    let (mut baseline_sse, mut dcdnn_sse) = (f64::INFINITY, f64::INFINITY);
    for (chosen, sse, bits) in candidates(ctx, bank, cost)? {
        match chosen {
            Choice::Baseline(_) => baseline_sse = baseline_sse.min(sse),
            Choice::Dcdnn(_) => dcdnn_sse = dcdnn_sse.min(sse),
        }
        let c = cost.cost(sse, bits);
        if best.is_none_or(|b| c < b.cost) {
            best = Some(ModeDecision {
                origin: ctx.sample.origin,
                chosen,
                sse,
                bits,
                cost: c,
            });
        }
    }
    Ok(BlockEvaluation {
        decision: best.expect("35 baseline candidates"),
        baseline_sse,
        dcdnn_sse,
    })
}

/// Minimum-cost candidate; ties favour the baseline, then the lower index.
pub fn decide(ctx: &BlockContext, bank: &[ModeNets], cost: &CostModel) -> Result<ModeDecision> {
    Ok(evaluate_block(ctx, bank, cost)?.decision)
}

/// Best baseline SSE and best learned-mode SSE of a block.
pub fn mse_improvement(ctx: &BlockContext, bank: &[ModeNets]) -> Result<(f64, f64)> {
    let (_, base) = baseline::best_baseline_mode(&ctx.block, &ctx.refs)?;
    let mut learned = f64::INFINITY;
    for mode in bank {
        learned = learned.min(dcdnn_sse(ctx, mode)?);
    }
    Ok((base as f64, learned))
}

/// Share of the `width × height` frame predicted by learned modes:
/// `Σ n_N · N² / (W · H)`.
pub fn usage_rate(decisions: &[ModeDecision], width: usize, height: usize) -> Result<f64> {
    let frame = width * height;
    if frame == 0 {
        return Err(Error::Data("usage rate of an empty frame".into()));
    }
    let mut counts = [0usize; 4];
    let mut area = 0usize;
    for d in decisions {
        let o = d.origin;
        let n = o.size as usize;
        if o.x as usize + n > width || o.y as usize + n > height {
            return Err(Error::Data(format!("decision at ({}, {}) size {n} leaves the {width}x{height} frame", o.x, o.y)));
        }
        area += n * n;
        if d.chosen.is_dcdnn() {
            let slot = n.trailing_zeros().checked_sub(2).filter(|&s| s < 4 && n.is_power_of_two());
            let Some(slot) = slot else {
                return Err(Error::Data(format!("unsupported TU size {n}")));
            };
            counts[slot as usize] += 1;
        }
    }
    if area > frame {
        return Err(Error::Data(format!("decisions cover {area} pixels of a {frame}-pixel frame")));
    }
    let coded: usize = counts.iter().zip([4usize, 8, 16, 32]).map(|(&c, n)| c * n * n).sum();
    Ok(coded as f64 / frame as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeHistogram {
    pub baseline: [u64; NUM_MODES],
    pub dcdnn: Vec<u64>,
}

impl ModeHistogram {
    pub fn total(&self) -> u64 {
        self.baseline.iter().sum::<u64>() + self.dcdnn.iter().sum::<u64>()
    }
}

pub fn mode_histogram(decisions: &[ModeDecision], modes: usize) -> ModeHistogram {
    let mut h = ModeHistogram {
        baseline: [0; NUM_MODES],
        dcdnn: vec![0; modes],
    };
    for d in decisions {
        match d.chosen {
            Choice::Baseline(m) => h.baseline[m as usize] += 1,
            Choice::Dcdnn(k) => {
                let k = k as usize;
                if k >= h.dcdnn.len() {
                    h.dcdnn.resize(k + 1, 0);
                }
                h.dcdnn[k] += 1;
            }
        }
    }
    h
}

fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Evaluates every `block_size` TU of a plane on a regular grid, in raster order.
pub fn evaluate_plane(
    plane: &Plane,
    image: u32,
    block_size: usize,
    ref_lines: usize,
    bank: &[ModeNets],
    cost: &CostModel,
) -> Result<Vec<BlockEvaluation>> {
    let mut coords = Vec::new();
    for y in (0..plane.height / block_size).map(|i| i * block_size) {
        for x in (0..plane.width / block_size).map(|i| i * block_size) {
            coords.push((x, y));
        }
    }
    map_ordered(&coords, |&(x, y)| {
        let ctx = BlockContext::from_plane(plane, image, x, y, block_size, ref_lines)?;
        evaluate_block(&ctx, bank, cost)
    })
}

/// Evaluates every sample of a dataset, in sample order.
pub fn evaluate_samples(dataset: &Dataset, bank: &[ModeNets], cost: &CostModel) -> Result<Vec<BlockEvaluation>> {
    map_ordered(&dataset.samples, |s| {
        let ctx = BlockContext::from_sample(s.clone(), dataset.ref_lines)?;
        evaluate_block(&ctx, bank, cost)
    })
}
