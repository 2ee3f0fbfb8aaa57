//! Clustering-driven recursive training.
//!
//! A single mode is pretrained on the whole dataset. Every network is then
//! split in two and the bank is refined in rounds: each group goes to the
//! mode that predicts it with the lowest summed squared error, and every
//! mode is retrained on its own groups. Rounds stop once assignments settle
//! (per-cluster retention above a threshold) or after a fixed count, and the
//! split/refine cycle repeats until the requested number of modes exists.
//!
//! Networks see pixel values divided by [`PIXEL_SCALE`]; losses reported in
//! [`TrainHistory`] are in the pixel domain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, PredictionGroup, TrainSample};
use crate::error::{Error, Result};
use crate::fcnet::{
    check_block_size, default_hidden_dim, init_network, sgd_step, Gradients, InitScheme, Mlp, NetConfig, Network,
    OptimizerState, DEFAULT_DEPTH, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY,
};
use crate::rng::{derive_seed, SeededRng};
use crate::split::{split_bank, SplitConfig};

/// Pixel values are divided by this before entering a network.
pub const PIXEL_SCALE: f64 = 255.0;

/// Samples per gradient chunk; chunks are reduced in a fixed order so the
/// batch gradient does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

/// Piecewise-constant exponential learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_floor: f64,
    /// Epochs per stage.
    pub step: usize,
}

impl Schedule {
    /// 40 epochs, 0.1 down to 1e-4 in steps of 10 epochs.
    pub const PRETRAIN: Schedule = Schedule {
        epochs: 40,
        lr_start: 0.1,
        lr_floor: 1e-4,
        step: 10,
    };

    /// 30 epochs, 0.01 down to 1e-4 in steps of 10 epochs.
    pub const RECURSIVE: Schedule = Schedule {
        epochs: 30,
        lr_start: 0.01,
        lr_floor: 1e-4,
        step: 10,
    };

    pub fn validate(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::Config("schedule step must be >= 1".into()));
        }
        if !(self.lr_floor > 0.0 && self.lr_start >= self.lr_floor && self.lr_start.is_finite()) {
            return Err(Error::Config(format!(
                "schedule needs lr_start >= lr_floor > 0, got {} / {}",
                self.lr_start, self.lr_floor
            )));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.epochs.div_ceil(self.step).max(1)
    }

    /// Same decay shape compressed to `epochs`, keeping the stage count.
    pub fn scaled(&self, epochs: usize) -> Schedule {
        let stages = self.stages();
        Schedule {
            epochs,
            step: epochs.div_ceil(stages).max(1),
            ..*self
        }
    }
}

/// Learning rate of `epoch`; the last stage is exactly `lr_floor`.
pub fn lr_at(schedule: &Schedule, epoch: usize) -> Result<f64> {
    schedule.validate()?;
    if epoch >= schedule.epochs {
        return Err(Error::Usage(format!("epoch {epoch} outside schedule of {} epochs", schedule.epochs)));
    }
    let stages = schedule.stages();
    let stage = epoch / schedule.step;
    if stages == 1 {
        return Ok(schedule.lr_start);
    }
    if stage == stages - 1 {
        return Ok(schedule.lr_floor);
    }
    let ratio = schedule.lr_floor / schedule.lr_start;
    Ok(schedule.lr_start * libm::pow(ratio, stage as f64 / (stages - 1) as f64))
}

/// One prediction mode: a network per block size.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeNets {
    pub nets: Vec<Network>,
}

impl ModeNets {
    pub fn new(mut nets: Vec<Network>) -> Result<Self> {
        nets.sort_by_key(|n| n.block_size);
        if nets.windows(2).any(|w| w[0].block_size == w[1].block_size) {
            return Err(Error::Config("mode has two networks for one block size".into()));
        }
        if nets.windows(2).any(|w| w[0].ref_lines != w[1].ref_lines) {
            return Err(Error::Config("mode mixes reference line counts".into()));
        }
        Ok(ModeNets { nets })
    }

    pub fn get(&self, block_size: usize) -> Option<&Network> {
        self.nets.iter().find(|n| n.block_size == block_size)
    }

    pub fn get_mut(&mut self, block_size: usize) -> Option<&mut Network> {
        self.nets.iter_mut().find(|n| n.block_size == block_size)
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.nets.iter().map(|n| n.block_size).collect()
    }

    fn net_for(&self, block_size: usize) -> Result<&Network> {
        self.get(block_size)
            .ok_or_else(|| Error::Config(format!("no network for {block_size}x{block_size} blocks")))
    }
}

/// Centered pixel-domain prediction of a sample.
pub fn predict_centered(net: &Network, sample: &TrainSample) -> Result<Vec<f64>> {
    let input: Vec<f64> = sample.ref_vector.iter().map(|v| v / PIXEL_SCALE).collect();
    Ok(net.predict(&input)?.into_iter().map(|v| v * PIXEL_SCALE).collect())
}

/// Summed squared error of one sample, pixel domain.
pub fn sample_loss(net: &Network, sample: &TrainSample) -> Result<f64> {
    if net.block_size != sample.block_size() {
        return Err(Error::Usage(format!(
            "{}x{} network applied to a {}x{} sample",
            net.block_size,
            net.block_size,
            sample.block_size(),
            sample.block_size()
        )));
    }
    let pred = predict_centered(net, sample)?;
    Ok(pred.iter().zip(&sample.target).map(|(p, t)| (p - t) * (p - t)).sum())
}

/// SSE summed over every TU of the group, each TU predicted by the mode's
/// network of its size.
pub fn group_loss(group: &PredictionGroup, mode: &ModeNets, dataset: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for s in dataset.samples_of(group) {
        total += sample_loss(mode.net_for(s.block_size())?, s)?;
    }
    Ok(total)
}

/// `losses[g][c]`: loss of group `g` under mode `c`.
pub fn loss_matrix(dataset: &Dataset, bank: &[ModeNets]) -> Result<Vec<Vec<f64>>> {
    let row = |g: &PredictionGroup| -> Result<Vec<f64>> { bank.iter().map(|m| group_loss(g, m, dataset)).collect() };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        dataset.groups.par_iter().map(row).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        dataset.groups.iter().map(row).collect()
    }
}

/// Cluster index of every group; `clusters[g]` is in `0..bank size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub round: u32,
    pub clusters: Vec<u32>,
}

impl Assignment {
    /// Groups per cluster.
    pub fn counts(&self, modes: usize) -> Vec<usize> {
        let mut c = vec![0; modes];
        for &k in &self.clusters {
            c[k as usize] += 1;
        }
        c
    }
}

/// Argmin per row; ties go to the lowest index.
pub fn argmin_rows(losses: &[Vec<f64>]) -> Vec<u32> {
    losses
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}

/// Assigns every group to the mode with the lowest group loss.
pub fn partition(dataset: &Dataset, bank: &[ModeNets], round: u32) -> Result<Assignment> {
    if bank.is_empty() {
        return Err(Error::Usage("partition with an empty bank".into()));
    }
    if dataset.groups.is_empty() {
        return Err(Error::Usage("partition of an empty dataset".into()));
    }
    let losses = loss_matrix(dataset, bank)?;
    Ok(Assignment {
        round,
        clusters: argmin_rows(&losses),
    })
}

/// Fraction of each cluster's groups in `prev` that stay put in `next`;
/// `None` for clusters empty in `prev`.
pub fn retention(prev: &Assignment, next: &Assignment) -> Result<Vec<Option<f64>>> {
    if prev.clusters.len() != next.clusters.len() {
        return Err(Error::Usage(format!(
            "assignments cover {} and {} groups",
            prev.clusters.len(),
            next.clusters.len()
        )));
    }
    let modes = prev.clusters.iter().chain(&next.clusters).map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut stayed = vec![0usize; modes];
    let mut total = vec![0usize; modes];
    for (&p, &n) in prev.clusters.iter().zip(&next.clusters) {
        total[p as usize] += 1;
        if p == n {
            stayed[p as usize] += 1;
        }
    }
    Ok(stayed
        .iter()
        .zip(&total)
        .map(|(&s, &t)| (t > 0).then(|| s as f64 / t as f64))
        .collect())
}

/// Optimizer and batching knobs shared by every training call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Batch size for 4×4 and 8×8 blocks.
    pub batch_small: usize,
    /// Batch size for 16×16 and 32×32 blocks.
    pub batch_large: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_small: 128,
            batch_large: 64,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }
}

impl TrainOptions {
    pub fn batch_size(&self, block_size: usize) -> usize {
        if block_size <= 8 {
            self.batch_small
        } else {
            self.batch_large
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_small == 0 || self.batch_large == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss of one epoch for one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStat {
    pub block_size: usize,
    pub epoch: usize,
    pub lr: f64,
    /// `1/(2M) Σ ‖F(x) − y‖²` over the epoch, network domain, before updates.
    pub loss: f64,
}

type Pair = (Vec<f64>, Vec<f64>);

fn scaled_pair(s: &TrainSample) -> Pair {
    (
        s.ref_vector.iter().map(|v| v / PIXEL_SCALE).collect(),
        s.target.iter().map(|v| v / PIXEL_SCALE).collect(),
    )
}

/// Mean data gradient of a batch plus `γΘ`, with the summed SSE.
fn batch_gradient(mlp: &Mlp, pairs: &[Pair], batch: &[usize], weight_decay: f64) -> Result<(Gradients, f64)> {
    let chunk = |idx: &[usize]| -> Result<(Gradients, f64)> {
        let mut g = Gradients::zeros_like(mlp);
        let mut sse = 0.0;
        for &i in idx {
            let (x, y) = &pairs[i];
            let (out, cache) = mlp.forward(x)?;
            sse += out.iter().zip(y).map(|(f, t)| (f - t) * (f - t)).sum::<f64>();
            mlp.accumulate_backward(&cache, y, &mut g)?;
        }
        Ok((g, sse))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<(Gradients, f64)> = {
        use rayon::prelude::*;
        batch.par_chunks(GRAD_CHUNK).map(chunk).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(Gradients, f64)> = batch.chunks(GRAD_CHUNK).map(chunk).collect::<Result<_>>()?;

    let mut iter = parts.into_iter();
    let (mut total, mut sse) = iter.next().ok_or_else(|| Error::Usage("empty batch".into()))?;
    for (g, s) in iter {
        total.add_assign(&g);
        sse += s;
    }
    total.scale(1.0 / batch.len() as f64);
    mlp.add_weight_decay(&mut total, weight_decay);
    Ok((total, sse))
}

/// Shuffled mini-batch momentum SGD of one network.
pub fn train_network(
    net: &mut Network,
    members: &[&TrainSample],
    schedule: &Schedule,
    opts: &TrainOptions,
    seed: u64,
) -> Result<Vec<EpochStat>> {
    schedule.validate()?;
    opts.validate()?;
    if members.is_empty() || schedule.epochs == 0 {
        return Ok(Vec::new());
    }
    if let Some(s) = members.iter().find(|s| s.block_size() != net.block_size) {
        return Err(Error::Usage(format!(
            "{}x{} sample given to the {}x{} network",
            s.block_size(),
            s.block_size(),
            net.block_size,
            net.block_size
        )));
    }
    let pairs: Vec<Pair> = members.iter().map(|s| scaled_pair(s)).collect();
    let batch_size = opts.batch_size(net.block_size);
    let mut state = OptimizerState::new(&net.mlp, opts.momentum, opts.weight_decay)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut stats = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let lr = lr_at(schedule, epoch)?;
        SeededRng::new(derive_seed(seed, &[epoch as u64])).shuffle(&mut order);
        let mut sse = 0.0;
        for batch in order.chunks(batch_size) {
            let (grads, batch_sse) = batch_gradient(&net.mlp, &pairs, batch, opts.weight_decay)?;
            sse += batch_sse;
            sgd_step(&mut net.mlp, &grads, &mut state, lr)?;
        }
        let loss = sse / (2.0 * pairs.len() as f64);
        if !loss.is_finite() {
            return Err(Error::Data(format!(
                "training diverged at epoch {epoch} ({}x{} network, lr {lr:e})",
                net.block_size, net.block_size
            )));
        }
        stats.push(EpochStat {
            block_size: net.block_size,
            epoch,
            lr,
            loss,
        });
    }
    Ok(stats)
}

/// Trains each network of a mode on the member samples of its size.
pub fn train_cluster(
    mode: &mut ModeNets,
    members: &[&TrainSample],
    schedule: &Schedule,
    opts: &TrainOptions,
    seed: u64,
) -> Result<Vec<EpochStat>> {
    let mut stats = Vec::new();
    for net in &mut mode.nets {
        let n = net.block_size;
        let mine: Vec<&TrainSample> = members.iter().copied().filter(|s| s.block_size() == n).collect();
        stats.extend(train_network(net, &mine, schedule, opts, derive_seed(seed, &[n as u64]))?);
    }
    if let Some(s) = members.iter().find(|s| mode.get(s.block_size()).is_none()) {
        return Err(Error::Config(format!("no network for {}x{} blocks", s.block_size(), s.block_size())));
    }
    Ok(stats)
}

/// Network architecture shared by every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct NetShape {
    pub ref_lines: usize,
    pub depth: usize,
    pub init: InitScheme,
    /// Hidden width for 4, 8, 16 and 32 blocks.
    pub hidden_dims: [usize; 4],
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            ref_lines: crate::fcnet::DEFAULT_REF_LINES,
            depth: DEFAULT_DEPTH,
            init: InitScheme::FanInScaled,
            hidden_dims: [4, 8, 16, 32].map(|n| default_hidden_dim(n).expect("standard size")),
        }
    }
}

impl NetShape {
    pub fn hidden_dim(&self, block_size: usize) -> usize {
        self.hidden_dims[block_size.trailing_zeros() as usize - 2]
    }

    pub fn net_config(&self, block_size: usize) -> Result<NetConfig> {
        check_block_size(block_size)?;
        Ok(NetConfig {
            block_size,
            ref_lines: self.ref_lines,
            hidden_dim: self.hidden_dim(block_size),
            depth: self.depth,
            init: self.init,
        })
    }
}

/// Everything the recursive trainer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Target number of modes, a power of two.
    pub modes: usize,
    pub shape: NetShape,
    pub pretrain: Schedule,
    pub recursive: Schedule,
    /// Maximum partition/train rounds after each split.
    pub rounds: usize,
    /// Rounds stop once every cluster's retention reaches this value.
    pub stop_threshold: f64,
    pub split: SplitConfig,
    pub options: TrainOptions,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            modes: 2,
            shape: NetShape::default(),
            pretrain: Schedule::PRETRAIN,
            recursive: Schedule::RECURSIVE,
            rounds: 8,
            stop_threshold: 0.97,
            split: SplitConfig::default(),
            options: TrainOptions::default(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || !self.modes.is_power_of_two() {
            return Err(Error::Config(format!("mode count {} is not a power of two", self.modes)));
        }
        self.pretrain.validate()?;
        self.recursive.validate()?;
        self.split.validate()?;
        self.options.validate()?;
        if self.shape.ref_lines == 0 || self.shape.depth == 0 || self.shape.hidden_dims.contains(&0) {
            return Err(Error::Config("network shape needs ref_lines, depth and hidden dims >= 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss of one epoch, tagged with where it happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Bank size while training.
    pub modes: usize,
    /// 0 for pretraining.
    pub round: u32,
    pub cluster: usize,
    pub stat: EpochStat,
}

/// Outcome of one partition/train round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub modes: usize,
    /// 1-based within the current bank size.
    pub round: u32,
    /// Groups per cluster during the round.
    pub cluster_groups: Vec<usize>,
    /// Mean post-training group loss over each cluster's groups.
    pub cluster_loss: Vec<Option<f64>>,
    /// Share of each cluster's groups kept by the next partition.
    pub retention: Vec<Option<f64>>,
    /// Σ loss of every group under its round assignment.
    pub total_loss: f64,
    /// Σ loss of every group under its best mode after training.
    pub partitioned_loss: f64,
}

impl RoundRecord {
    /// Group-weighted mean retention, i.e. the share of unmoved groups.
    pub fn mean_retention(&self) -> Option<f64> {
        let total: usize = self.cluster_groups.iter().sum();
        if total == 0 {
            return None;
        }
        let kept: f64 = self
            .retention
            .iter()
            .zip(&self.cluster_groups)
            .filter_map(|(r, &n)| r.map(|r| r * n as f64))
            .sum();
        Some(kept / total as f64)
    }

    pub fn min_retention(&self) -> Option<f64> {
        self.retention.iter().flatten().copied().reduce(f64::min)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rounds: Vec<RoundRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Assignment produced by the last partition.
    pub assignment: Option<Assignment>,
}

impl TrainHistory {
    pub fn rounds_for(&self, modes: usize) -> impl Iterator<Item = &RoundRecord> {
        self.rounds.iter().filter(move |r| r.modes == modes)
    }
}

fn tag_epochs(history: &mut TrainHistory, modes: usize, round: u32, cluster: usize, stats: Vec<EpochStat>) {
    history
        .epochs
        .extend(stats.into_iter().map(|stat| EpochRecord { modes, round, cluster, stat }));
}

/// Freshly initialized mode with one network per dataset block size.
pub fn init_mode(dataset: &Dataset, cfg: &TrainerConfig) -> Result<ModeNets> {
    if dataset.ref_lines != cfg.shape.ref_lines {
        return Err(Error::Config(format!(
            "dataset has {} reference lines, networks expect {}",
            dataset.ref_lines, cfg.shape.ref_lines
        )));
    }
    let nets = dataset
        .block_sizes
        .iter()
        .map(|&n| init_network(&cfg.shape.net_config(n)?, derive_seed(cfg.seed, &[0x1417, n as u64])))
        .collect::<Result<Vec<_>>>()?;
    ModeNets::new(nets)
}

/// Initializes and trains a single mode on the whole dataset.
pub fn pretrain(dataset: &Dataset, cfg: &TrainerConfig) -> Result<(ModeNets, TrainHistory)> {
    cfg.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Usage("pretraining on an empty dataset".into()));
    }
    let mut mode = init_mode(dataset, cfg)?;
    let all: Vec<&TrainSample> = dataset.samples.iter().collect();
    let stats = train_cluster(&mut mode, &all, &cfg.pretrain, &cfg.options, derive_seed(cfg.seed, &[0x9e7, 1]))?;
    let mut history = TrainHistory::default();
    tag_epochs(&mut history, 1, 0, 0, stats);
    Ok((mode, history))
}

/// Doubles a bank: mode `c` yields modes `2c` and `2c + 1`.
pub fn split_modes(bank: &[ModeNets], cfg: &SplitConfig) -> Result<Vec<ModeNets>> {
    let Some(first) = bank.first() else {
        return Err(Error::Usage("split of an empty bank".into()));
    };
    let sizes = first.block_sizes();
    if bank.iter().any(|m| m.block_sizes() != sizes) {
        return Err(Error::Usage("modes of a bank cover different block sizes".into()));
    }
    let mut out: Vec<Vec<Network>> = vec![Vec::new(); bank.len() * 2];
    for &n in &sizes {
        let nets: Vec<Network> = bank.iter().map(|m| m.get(n).expect("same sizes").clone()).collect();
        let size_cfg = SplitConfig {
            seed: derive_seed(cfg.seed, &[bank.len() as u64, n as u64]),
            ..*cfg
        };
        for (i, child) in split_bank(&nets, &size_cfg)?.into_iter().enumerate() {
            out[i].push(child);
        }
    }
    out.into_iter().map(ModeNets::new).collect()
}

/// Refills empty clusters by splitting the lowest-loss non-empty mode.
///
/// Returns whether anything was respawned.
fn respawn_empty(bank: &mut [ModeNets], losses: &[Vec<f64>], assignment: &Assignment, cfg: &TrainerConfig, round: u32) -> Result<bool> {
    let counts = assignment.counts(bank.len());
    let mut changed = false;
    for empty in (0..bank.len()).filter(|&c| counts[c] == 0) {
        let mean = |c: usize| -> f64 {
            let (sum, n) = assignment
                .clusters
                .iter()
                .zip(losses)
                .filter(|(&a, _)| a as usize == c)
                .fold((0.0, 0usize), |(s, n), (_, row)| (s + row[c], n + 1));
            sum / n as f64
        };
        let Some(best) = (0..bank.len())
            .filter(|&c| counts[c] > 0)
            .min_by(|&a, &b| mean(a).total_cmp(&mean(b)))
        else {
            break;
        };
        let split = SplitConfig {
            seed: derive_seed(cfg.split.seed, &[0x5e5, bank.len() as u64, round as u64, empty as u64]),
            ..cfg.split
        };
        let mut pair = split_modes(core::slice::from_ref(&bank[best]), &split)?;
        bank[empty] = pair.pop().expect("two children");
        bank[best] = pair.pop().expect("two children");
        changed = true;
    }
    Ok(changed)
}

fn partition_with_respawn(dataset: &Dataset, bank: &mut [ModeNets], cfg: &TrainerConfig, round: u32) -> Result<(Assignment, Vec<Vec<f64>>)> {
    let mut losses = loss_matrix(dataset, bank)?;
    let mut assignment = Assignment {
        round,
        clusters: argmin_rows(&losses),
    };
    for _ in 0..bank.len() {
        if !respawn_empty(bank, &losses, &assignment, cfg, round)? {
            break;
        }
        losses = loss_matrix(dataset, bank)?;
        assignment.clusters = argmin_rows(&losses);
    }
    Ok((assignment, losses))
}

fn train_round(
    dataset: &Dataset,
    bank: &mut [ModeNets],
    assignment: &Assignment,
    cfg: &TrainerConfig,
) -> Result<Vec<Vec<EpochStat>>> {
    let modes = bank.len();
    let members: Vec<Vec<&TrainSample>> = (0..modes)
        .map(|c| {
            dataset
                .groups
                .iter()
                .zip(&assignment.clusters)
                .filter(|(_, &a)| a as usize == c)
                .flat_map(|(g, _)| dataset.samples_of(g))
                .collect()
        })
        .collect();
    let job = |(c, mode): (usize, &mut ModeNets)| -> Result<Vec<EpochStat>> {
        let seed = derive_seed(cfg.seed, &[0x9e7, modes as u64, assignment.round as u64, c as u64]);
        train_cluster(mode, &members[c], &cfg.recursive, &cfg.options, seed)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        bank.par_iter_mut().enumerate().map(job).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        bank.iter_mut().enumerate().map(job).collect()
    }
}

/// Partition/train rounds at the current bank size.
pub fn refine(dataset: &Dataset, bank: &mut [ModeNets], cfg: &TrainerConfig, history: &mut TrainHistory) -> Result<()> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(Error::Usage("refine with an empty bank".into()));
    }
    let modes = bank.len();
    let (mut assignment, _) = partition_with_respawn(dataset, bank, cfg, 1)?;
    for round in 1..=cfg.rounds as u32 {
        assignment.round = round;
        let stats = train_round(dataset, bank, &assignment, cfg)?;
        for (c, s) in stats.into_iter().enumerate() {
            tag_epochs(history, modes, round, c, s);
        }

        let losses = loss_matrix(dataset, bank)?;
        let next = Assignment {
            round: round + 1,
            clusters: argmin_rows(&losses),
        };
        let counts = assignment.counts(modes);
        let mut sums = vec![0.0; modes];
        let mut total_loss = 0.0;
        let mut partitioned_loss = 0.0;
        for ((row, &a), &b) in losses.iter().zip(&assignment.clusters).zip(&next.clusters) {
            sums[a as usize] += row[a as usize];
            total_loss += row[a as usize];
            partitioned_loss += row[b as usize];
        }
        let record = RoundRecord {
            modes,
            round,
            cluster_loss: sums.iter().zip(&counts).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect(),
            cluster_groups: counts,
            retention: retention(&assignment, &next)?,
            total_loss,
            partitioned_loss,
        };
        let settled = record.min_retention().is_some_and(|r| r >= cfg.stop_threshold);
        history.rounds.push(record);

        assignment = next;
        if settled || round as usize == cfg.rounds {
            break;
        }
        if assignment.counts(modes).contains(&0) {
            assignment = partition_with_respawn(dataset, bank, cfg, round + 1)?.0;
        }
    }
    history.assignment = Some(assignment);
    Ok(())
}

/// Pretrain, then split and refine until `cfg.modes` modes exist.
pub fn run_recursive(dataset: &Dataset, cfg: &TrainerConfig) -> Result<(Vec<ModeNets>, TrainHistory)> {
    cfg.validate()?;
    if dataset.groups.is_empty() {
        return Err(Error::Usage("training on an empty dataset".into()));
    }
    let (root, mut history) = pretrain(dataset, cfg)?;
    let mut bank = vec![root];
    while bank.len() < cfg.modes {
        bank = split_modes(&bank, &cfg.split)?;
        refine(dataset, &mut bank, cfg, &mut history)?;
    }
    if history.assignment.is_none() {
        history.assignment = Some(partition(dataset, &bank, 0)?);
    }
    Ok((bank, history))
}
