//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Every check compares library output against an oracle written here.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dcdnn_core::baseline::{self, DirectionalMode, RefLine};
use dcdnn_core::dataset::{BlockOrigin, Dataset, ExtractConfig, Plane, Tiling};
use dcdnn_core::evaluator::{mse_improvement, usage_rate, BlockContext, Choice, ModeDecision};
use dcdnn_core::fcnet::{init_mlp, input_dim, Gradients, InitScheme, Mlp, Network};
use dcdnn_core::rng::{derive_seed, SeedInfo, SeededRng};
use dcdnn_core::split::{split_network, SplitConfig};
use dcdnn_core::synthetic::{block_corpus, Family, SyntheticCorpus, TextureParams};
use dcdnn_core::trainer::{
    partition, pretrain, refine, run_recursive, split_modes, ModeNets, NetShape, Schedule, TrainHistory,
    TrainOptions, TrainerConfig, PIXEL_SCALE,
};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} [{verdict}] {name}: {detail}");
}

// ---------------------------------------------------------------------------
// Reference MLP used as an oracle.

/// Pre-activations of every layer and the output.
fn oracle_forward(mlp: &Mlp, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut pre = Vec::new();
    let mut a = x.to_vec();
    for layer in &mlp.layers {
        let mut z = vec![0.0; layer.out_dim];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut acc = layer.bias[o];
            for (i, xi) in a.iter().enumerate() {
                acc += layer.weights[o * layer.in_dim + i] * xi;
            }
            *zo = acc;
        }
        pre.push(z.clone());
        a = match &layer.prelu_slopes {
            Some(s) => z.iter().zip(s).map(|(&v, &k)| if v >= 0.0 { v } else { k * v }).collect(),
            None => z,
        };
    }
    (pre, a)
}

fn oracle_loss(mlp: &Mlp, batch: &[(Vec<f64>, Vec<f64>)], wd: f64) -> f64 {
    let data: f64 = batch
        .iter()
        .map(|(x, y)| oracle_forward(mlp, x).1.iter().zip(y).map(|(f, t)| (f - t) * (f - t)).sum::<f64>())
        .sum();
    let norm: f64 = mlp.param_vec().iter().map(|p| p * p).sum();
    data / (2.0 * batch.len() as f64) + 0.5 * wd * norm
}

/// Pixel-domain SSE of a group under a mode.
fn oracle_group_loss(ds: &Dataset, group: usize, mode: &ModeNets) -> f64 {
    ds.groups[group]
        .members
        .iter()
        .map(|&m| {
            let s = &ds.samples[m];
            let net = mode.get(s.block_size()).expect("mode covers the size");
            let x: Vec<f64> = s.ref_vector.iter().map(|v| v / PIXEL_SCALE).collect();
            let out = oracle_forward(&net.mlp, &x).1;
            out.iter().zip(&s.target).map(|(p, t)| (p * PIXEL_SCALE - t).powi(2)).sum::<f64>()
        })
        .sum()
}

fn oracle_dataset_loss(ds: &Dataset, bank: &[ModeNets]) -> f64 {
    (0..ds.groups.len())
        .map(|g| bank.iter().map(|m| oracle_group_loss(ds, g, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

#[test]
fn criterion_01_gradient_check() {
    let start = Instant::now();
    let (mut worst, mut neg, mut pos, mut params) = (0.0f64, 0usize, 0usize, 0usize);
    let wd = 1e-3;
    for k in 0..50u64 {
        let mut rng = SeededRng::new(derive_seed(101, &[k]));
        let (i, h, d, o) = (1 + rng.below(16), 1 + rng.below(16), 1 + rng.below(3), 1 + rng.below(16));
        let mut mlp = init_mlp(i, h, d, o, InitScheme::FanInScaled, &mut rng);
        for layer in &mut mlp.layers {
            layer.bias.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
            if let Some(s) = layer.prelu_slopes.as_mut() {
                s.iter_mut().for_each(|a| *a = rng.uniform(-0.5, 1.5));
            }
        }
        // Inputs whose hidden pre-activations sit clear of the kink.
        let batch: Vec<(Vec<f64>, Vec<f64>)> = loop {
            let b: Vec<_> = (0..4)
                .map(|_| ((0..i).map(|_| rng.normal()).collect::<Vec<_>>(), (0..o).map(|_| rng.normal()).collect()))
                .collect();
            if b.iter().all(|(x, _)| oracle_forward(&mlp, x).0[..d].iter().flatten().all(|z| z.abs() > 1e-2)) {
                break b;
            }
        };
        for (x, _) in &batch {
            for z in oracle_forward(&mlp, x).0[..d].iter().flatten() {
                if *z < 0.0 {
                    neg += 1
                } else {
                    pos += 1
                }
            }
        }
        let mut g = Gradients::zeros_like(&mlp);
        for (x, y) in &batch {
            let (_, cache) = mlp.forward(x).unwrap();
            mlp.accumulate_backward(&cache, y, &mut g).unwrap();
        }
        g.scale(1.0 / batch.len() as f64);
        mlp.add_weight_decay(&mut g, wd);
        let analytic = g.to_vec();
        let theta = mlp.param_vec();
        params += theta.len();
        for p in 0..theta.len() {
            let step = 1e-4 * theta[p].abs().max(1.0);
            let mut at = |offset: f64| {
                let mut probe = theta.clone();
                probe[p] = theta[p] + offset * step;
                mlp.set_param_vec(&probe).unwrap();
                oracle_loss(&mlp, &batch, wd)
            };
            // Five-point central difference.
            let numeric = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * step);
            let rel = (analytic[p] - numeric).abs() / analytic[p].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        mlp.set_param_vec(&theta).unwrap();
    }
    let elapsed = start.elapsed();
    let builtin = dcdnn::selftest::gradient_check(7, 50);
    let pass = worst <= 1e-4
        && neg > 0
        && pos > 0
        && elapsed < Duration::from_secs(30)
        && builtin.max_rel_error <= 1e-4;
    report(
        1,
        "gradient check",
        pass,
        &format!(
            "50 nets, {params} params, max rel error {worst:.2e} (selftest {:.2e}), branches -{neg}/+{pos}, {:.2?}",
            builtin.max_rel_error, elapsed
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Split symmetry

#[test]
fn criterion_02_split_symmetry() {
    let mut worst = 0.0f64;
    let mut zero_identical = true;
    let mut children_differ = true;
    for k in 0..100u64 {
        let mut rng = SeededRng::new(derive_seed(202, &[k]));
        let n = [4usize, 8, 16][rng.below(3)];
        let l = 1 + rng.below(3);
        let mlp = init_mlp(input_dim(n, l), 1 + rng.below(24), 1 + rng.below(4), n * n, InitScheme::FanInScaled, &mut rng);
        let parent = Network::new(n, l, mlp, SeedInfo::chacha8(k)).unwrap();
        let cfg = SplitConfig {
            kappa: rng.uniform(0.001, 0.5),
            seed: derive_seed(203, &[k]),
            perturb_bias: rng.coin(),
            perturb_slopes: rng.coin(),
        };
        let (a, b) = split_network(&parent, &cfg).unwrap();
        let p = parent.mlp.param_vec();
        let scale = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((x, y), q) in a.mlp.param_vec().iter().zip(b.mlp.param_vec()).zip(&p) {
            worst = worst.max(((x + y) / 2.0 - q).abs() / scale);
        }
        children_differ &= a.mlp != b.mlp;
        let (a0, b0) = split_network(&parent, &SplitConfig { kappa: 0.0, ..cfg }).unwrap();
        let bits = |m: &Mlp| m.param_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        zero_identical &= bits(&a0.mlp) == bits(&parent.mlp) && bits(&b0.mlp) == bits(&parent.mlp);
    }
    let pass = worst <= 1e-12 && zero_identical && children_differ;
    report(
        2,
        "split symmetry",
        pass,
        &format!("100 parents, max mirror error {worst:.2e}, kappa=0 bit-identical {zero_identical}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Partition optimality

fn small_shape(ref_lines: usize, hidden: usize) -> NetShape {
    NetShape {
        ref_lines,
        depth: 2,
        init: InitScheme::FanInScaled,
        hidden_dims: [hidden; 4],
    }
}

#[test]
fn criterion_03_partition_optimality() {
    let mut rng = SeededRng::new(303);
    // 25 × 20 PUs of 8×8, each four 4×4 TUs.
    let (w, h) = (200, 160);
    let plane = Plane::new(w, h, (0..w * h).map(|_| rng.below(256) as u8).collect()).unwrap();
    let cfg = ExtractConfig {
        ref_lines: 1,
        pu_size: 8,
        tiling: Tiling::Uniform(4),
        stride: 8,
        filter: false,
    };
    let ds = Dataset::extract(&[plane], None, &cfg).unwrap();
    assert_eq!(ds.groups.len(), 500);
    let bank: Vec<ModeNets> = (0..4)
        .map(|k| {
            let tc = TrainerConfig {
                shape: small_shape(1, 8),
                seed: 900 + k,
                ..TrainerConfig::default()
            };
            dcdnn_core::trainer::init_mode(&ds, &tc).unwrap()
        })
        .collect();
    let assignment = partition(&ds, &bank, 1).unwrap();
    let losses: Vec<Vec<f64>> = (0..ds.groups.len())
        .map(|g| bank.iter().map(|m| oracle_group_loss(&ds, g, m)).collect())
        .collect();
    let total = |clusters: &[u32]| -> f64 { clusters.iter().enumerate().map(|(g, &c)| losses[g][c as usize]).sum() };

    let mut argmin_ok = true;
    for (g, row) in losses.iter().enumerate() {
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] < row[best] {
                best = k;
            }
        }
        argmin_ok &= assignment.clusters[g] as usize == best;
    }
    let ours = total(&assignment.clusters);
    let mut dominated = true;
    for _ in 0..100 {
        let alt: Vec<u32> = (0..ds.groups.len()).map(|_| rng.below(bank.len()) as u32).collect();
        let t = total(&alt);
        let tied = alt.iter().enumerate().all(|(g, &c)| losses[g][c as usize] == losses[g][assignment.clusters[g] as usize]);
        dominated &= if tied { ours <= t } else { ours < t };
    }
    let pass = argmin_ok && dominated;
    report(
        3,
        "partition optimality",
        pass,
        &format!("500 groups x 4 modes, exact argmin {argmin_ok}, beats 100 random assignments {dominated}, total {ours:.1}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4-7. Clustering runs on synthetic corpora

const BLOCKS: usize = 2000;

fn synthetic(families: &[Family]) -> SyntheticCorpus {
    block_corpus(families, BLOCKS, 4, 1, &TextureParams::default(), 404).unwrap()
}

fn cluster_config(modes: usize, rounds: usize) -> TrainerConfig {
    TrainerConfig {
        modes,
        shape: small_shape(1, 32),
        pretrain: Schedule {
            lr_start: 0.3,
            ..Schedule::PRETRAIN.scaled(10)
        },
        recursive: Schedule {
            lr_start: 0.1,
            ..Schedule::RECURSIVE.scaled(10)
        },
        rounds,
        stop_threshold: f64::INFINITY,
        options: TrainOptions {
            batch_small: 8,
            ..TrainOptions::default()
        },
        seed: 4,
        ..TrainerConfig::default()
    }
}

/// Best one-to-one matching of clusters to labels, as a fraction of groups.
fn best_matching_purity(labels: &[usize], clusters: &[u32], classes: usize) -> f64 {
    let mut counts = vec![vec![0usize; classes]; classes];
    for (&l, &c) in labels.iter().zip(clusters) {
        counts[c as usize][l] += 1;
    }
    fn search(counts: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == counts.len() {
            return 0;
        }
        let mut best = 0;
        for l in 0..used.len() {
            if !used[l] {
                used[l] = true;
                best = best.max(counts[row][l] + search(counts, row + 1, used));
                used[l] = false;
            }
        }
        best
    }
    search(&counts, 0, &mut vec![false; classes]) as f64 / labels.len() as f64
}

#[test]
fn criterion_04_clustering_recovery() {
    let start = Instant::now();
    let corpus = synthetic(&[Family::Horizontal, Family::Vertical]);
    let (_, history) = run_recursive(&corpus.dataset, &cluster_config(2, 4)).unwrap();
    let assignment = history.assignment.as_ref().unwrap();
    let purity = best_matching_purity(&corpus.labels, &assignment.clusters, 2);
    let elapsed = start.elapsed();
    let pass = purity >= 0.9 && elapsed < Duration::from_secs(600) && history.rounds.len() == 4;
    report(
        4,
        "synthetic clustering recovery",
        pass,
        &format!("{BLOCKS} blocks, DCDNN-2 after 4 rounds, purity {purity:.4}, {elapsed:.2?}"),
    );
    assert!(pass);
}

/// Eight-round DCDNN-2 run shared by the loss and retention criteria.
struct EightRounds {
    corpus: SyntheticCorpus,
    bank: Vec<ModeNets>,
    history: TrainHistory,
}

fn eight_round_run() -> &'static EightRounds {
    static RUN: OnceLock<EightRounds> = OnceLock::new();
    RUN.get_or_init(|| {
        let corpus = synthetic(&[Family::Horizontal, Family::Vertical]);
        let (bank, history) = run_recursive(&corpus.dataset, &cluster_config(2, 8)).unwrap();
        EightRounds { corpus, bank, history }
    })
}

fn eight_rounds() -> &'static TrainHistory {
    &eight_round_run().history
}

#[test]
fn trained_pair_beats_directional_baseline() {
    let run = eight_round_run();
    let (mut baseline, mut learned) = (0.0, 0.0);
    for s in &run.corpus.dataset.samples {
        let ctx = BlockContext::from_sample(s.clone(), 1).unwrap();
        let (b, l) = mse_improvement(&ctx, &run.bank).unwrap();
        baseline += b;
        learned += l;
    }
    writeln!(std::io::stderr(), "best directional SSE {baseline:.1}, best learned SSE {learned:.1}").unwrap();
    assert!(learned < baseline, "learned {learned} vs baseline {baseline}");
}

#[test]
fn criterion_05_loss_trend() {
    let rounds: Vec<_> = eight_rounds().rounds_for(2).collect();
    let mut monotone = rounds.len() == 8;
    let mut improved = rounds.len() == 8;
    let mut worst_rise = 0.0f64;
    for pair in rounds.windows(2) {
        for (a, b) in pair[0].cluster_loss.iter().zip(&pair[1].cluster_loss) {
            if let (Some(a), Some(b)) = (a, b) {
                worst_rise = worst_rise.max(b / a - 1.0);
                monotone &= *b <= a * 1.02;
            }
        }
    }
    let (first, last) = (&rounds[0], &rounds[rounds.len() - 1]);
    for (a, b) in first.cluster_loss.iter().zip(&last.cluster_loss) {
        if let (Some(a), Some(b)) = (a, b) {
            improved &= b < a;
        }
    }
    let fmt = |r: &dcdnn_core::trainer::RoundRecord| {
        r.cluster_loss.iter().map(|l| l.map_or("-".into(), |v| format!("{v:.1}"))).collect::<Vec<_>>().join("/")
    };
    let pass = monotone && improved;
    report(
        5,
        "per-cluster loss trend",
        pass,
        &format!("round 1 {} -> round 8 {}, worst rise {:+.2}%", fmt(first), fmt(last), 100.0 * worst_rise),
    );
    assert!(pass);
}

#[test]
fn criterion_06_retention_trend() {
    let rounds: Vec<_> = eight_rounds().rounds_for(2).collect();
    let mean = |r: &dcdnn_core::trainer::RoundRecord| {
        let kept: f64 = r
            .retention
            .iter()
            .zip(&r.cluster_groups)
            .map(|(ret, &n)| ret.unwrap_or(0.0) * n as f64)
            .sum();
        kept / r.cluster_groups.iter().sum::<usize>() as f64
    };
    let first = mean(rounds[0]);
    let last = mean(rounds[rounds.len() - 1]);
    let pass = rounds.len() == 8 && last >= first && last >= 0.9;
    report(
        6,
        "retention trend",
        pass,
        &format!("mean retention round 1 {first:.4} -> round 8 {last:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_split_benefit() {
    let corpus = synthetic(&Family::ALL);
    let ds = &corpus.dataset;
    let cfg = TrainerConfig {
        stop_threshold: 0.97,
        ..cluster_config(2, 8)
    };
    let (root, mut history) = pretrain(ds, &cfg).unwrap();
    let mut two = split_modes(&[root], &cfg.split).unwrap();
    refine(ds, &mut two, &cfg, &mut history).unwrap();
    let loss_two = oracle_dataset_loss(ds, &two);

    let mut four = split_modes(&two, &cfg.split).unwrap();
    let one_round = TrainerConfig { rounds: 1, ..cfg.clone() };
    refine(ds, &mut four, &one_round, &mut history).unwrap();
    let loss_four = oracle_dataset_loss(ds, &four);
    let recorded = history.rounds_for(4).next().map(|r| r.partitioned_loss);

    let consistent = recorded.is_some_and(|r| (r - loss_four).abs() <= 1e-6 * loss_four);
    let pass = loss_four <= loss_two && consistent;
    report(
        7,
        "split benefit",
        pass,
        &format!(
            "4 families, DCDNN-2 converged after {} rounds {loss_two:.1}, DCDNN-4 after one round {loss_four:.1}",
            history.rounds_for(2).count()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Baseline conformance

/// Reference samples addressed as `p(x, y)` with `x = −1` or `y = −1`.
struct Refs<'a>(&'a RefLine);

impl Refs<'_> {
    fn p(&self, x: i32, y: i32) -> i32 {
        match (x, y) {
            (-1, y) => self.0.left[(y + 1) as usize],
            (x, -1) => self.0.above[(x + 1) as usize],
            _ => unreachable!("not a reference position"),
        }
    }
}

fn oracle_angle(mode: i32) -> i32 {
    match mode {
        2 | 34 => 32,
        3 | 33 => 26,
        4 | 32 => 21,
        5 | 31 => 17,
        6 | 30 => 13,
        7 | 29 => 9,
        8 | 28 => 5,
        9 | 27 => 2,
        10 | 26 => 0,
        11 | 25 => -2,
        12 | 24 => -5,
        13 | 23 => -9,
        14 | 22 => -13,
        15 | 21 => -17,
        16 | 20 => -21,
        17 | 19 => -26,
        18 => -32,
        _ => unreachable!(),
    }
}

/// Literal planar/DC/angular equations, `pred[x][y]` returned row-major.
fn oracle_predict(mode: i32, refs: &RefLine) -> Vec<i32> {
    let n = refs.size as i32;
    let log2 = n.trailing_zeros() as i32;
    let r = Refs(refs);
    let mut pred = vec![vec![0i32; n as usize]; n as usize];
    match mode {
        0 => {
            for x in 0..n {
                for y in 0..n {
                    pred[x as usize][y as usize] = ((n - 1 - x) * r.p(-1, y)
                        + (x + 1) * r.p(n, -1)
                        + (n - 1 - y) * r.p(x, -1)
                        + (y + 1) * r.p(-1, n)
                        + n)
                        >> (log2 + 1);
                }
            }
        }
        1 => {
            let sum: i32 = (0..n).map(|i| r.p(i, -1) + r.p(-1, i)).sum();
            let dc = (sum + n) >> (log2 + 1);
            pred.iter_mut().for_each(|col| col.iter_mut().for_each(|v| *v = dc));
        }
        _ => {
            let angle = oracle_angle(mode);
            let inv_angle = if angle < 0 { (8192.0 / angle as f64).round() as i32 } else { 0 };
            // refm[k] for k in −n..=2n, stored at k + n.
            let mut refm = BTreeMap::new();
            let vertical = mode >= 18;
            let main = |k: i32| if vertical { r.p(-1 + k, -1) } else { r.p(-1, -1 + k) };
            let side = |k: i32| if vertical { r.p(-1, -1 + k) } else { r.p(-1 + k, -1) };
            for k in 0..=n {
                refm.insert(k, main(k));
            }
            if angle < 0 {
                if (n * angle) >> 5 < -1 {
                    for k in (n * angle) >> 5..=-1 {
                        refm.insert(k, side((k * inv_angle + 128) >> 8));
                    }
                }
            } else {
                for k in n + 1..=2 * n {
                    refm.insert(k, main(k));
                }
            }
            for x in 0..n {
                for y in 0..n {
                    let (along, across) = if vertical { (y, x) } else { (x, y) };
                    let idx = ((along + 1) * angle) >> 5;
                    let fact = ((along + 1) * angle) & 31;
                    let v = if fact != 0 {
                        ((32 - fact) * refm[&(across + idx + 1)] + fact * refm[&(across + idx + 2)] + 16) >> 5
                    } else {
                        refm[&(across + idx + 1)]
                    };
                    pred[x as usize][y as usize] = v;
                }
            }
        }
    }
    (0..n as usize).flat_map(|y| (0..n as usize).map(move |x| (x, y))).map(|(x, y)| pred[x][y]).collect()
}

#[test]
fn criterion_08_baseline_conformance() {
    let mut rng = SeededRng::new(808);
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for _ in 0..1000 {
        let n = [4usize, 8, 16, 32][rng.below(4)];
        // Mix full-range, narrow-range and near-flat references.
        let (lo, span) = match rng.below(3) {
            0 => (0, 256),
            1 => (rng.below(200) as i32, 56),
            _ => (rng.below(250) as i32, 6),
        };
        let draw = |rng: &mut SeededRng| (0..=2 * n).map(|_| lo + rng.below(span) as i32).collect::<Vec<i32>>();
        let above = draw(&mut rng);
        let mut left = draw(&mut rng);
        left[0] = above[0];
        let refs = RefLine::new(n, above, left).unwrap();
        for mode in DirectionalMode::all() {
            compared += 1;
            if baseline::predict(mode, &refs) != oracle_predict(mode.index() as i32, &refs) {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0;
    report(
        8,
        "baseline conformance",
        pass,
        &format!("1000 fixtures x 35 modes, {mismatches} of {compared} predictions differ from the oracle"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. Usage rate

fn quadtree(x: u32, y: u32, size: u32, rng: &mut SeededRng, out: &mut Vec<ModeDecision>) {
    if size > 4 && rng.below(3) != 0 {
        let h = size / 2;
        for (dx, dy) in [(0, 0), (h, 0), (0, h), (h, h)] {
            quadtree(x + dx, y + dy, h, rng, out);
        }
        return;
    }
    let chosen = if rng.coin() {
        Choice::Dcdnn(rng.below(4) as u32)
    } else {
        Choice::Baseline(rng.below(35) as u8)
    };
    out.push(ModeDecision {
        origin: BlockOrigin { image: 0, x, y, size },
        chosen,
        sse: 0.0,
        bits: 0.0,
        cost: 0.0,
    });
}

#[test]
fn criterion_09_usage_rate() {
    let mut rng = SeededRng::new(909);
    let mut exact = 0;
    for _ in 0..100 {
        let (w, h) = (16 * (1 + rng.below(8)), 16 * (1 + rng.below(8)));
        let mut decisions = Vec::new();
        for y in (0..h).step_by(16) {
            for x in (0..w).step_by(16) {
                quadtree(x as u32, y as u32, 16, &mut rng, &mut decisions);
            }
        }
        let mut marked = vec![false; w * h];
        for d in decisions.iter().filter(|d| d.chosen.is_dcdnn()) {
            let o = d.origin;
            for yy in o.y..o.y + o.size {
                for xx in o.x..o.x + o.size {
                    marked[yy as usize * w + xx as usize] = true;
                }
            }
        }
        let brute = marked.iter().filter(|&&m| m).count() as f64 / (w * h) as f64;
        if usage_rate(&decisions, w, h).unwrap() == brute {
            exact += 1;
        }
    }
    let pass = exact == 100;
    report(9, "usage rate", pass, &format!("{exact} of 100 random tilings match the pixel count exactly"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism

fn dcdnn(cwd: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_dcdnn"))
        .current_dir(cwd)
        .env_remove("DCDNN_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn dcdnn");
    assert!(out.status.success(), "dcdnn {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let settings = [
        "ref_lines=1",
        "tiling=uniform-4",
        "hidden_4=16",
        "depth=2",
        "modes=4",
        "pretrain_epochs=4",
        "recursive_epochs=3",
        "rounds=2",
        "batch_small=16",
        "seed=10",
        "split_seed=11",
    ];
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let cwd = tmp.path().join(name);
        std::fs::create_dir(&cwd).unwrap();
        dcdnn(&cwd, &["synth", "--out-dir", "images", "--families", "2", "--images", "2", "--size", "64", "--tile", "16", "--seed", "5"]);
        let mut args = vec!["--threads", "1"];
        for s in &settings {
            args.extend(["--set", s]);
        }
        args.extend(["run", "images", "--out-dir", "out"]);
        dcdnn(&cwd, &args);
        runs.push(tree(&cwd.join("out")));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<_> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).cloned().collect();
    let required = ["train/bank.dcdb", "train/assignment.csv", "report/summary.json", "report/loss_per_round.csv"];
    let present = required.iter().all(|f| a.contains_key(*f));
    let pass = differing.is_empty() && present;
    report(
        10,
        "end-to-end determinism",
        pass,
        &format!("{} output files compared, differing {:?}, required artifacts present {present}", a.len(), differing),
    );
    assert!(pass);
}
