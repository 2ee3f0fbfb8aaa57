//! Built-in numerical checks run by `dcdnn selftest`.

use dcdnn_core::fcnet::{init_mlp, Gradients, InitScheme, Mlp, Network};
use dcdnn_core::rng::{derive_seed, SeedInfo, SeededRng};
use dcdnn_core::split::{split_network, SplitConfig};

/// Pre-activations closer than this to zero are resampled so the finite
/// difference never straddles the PReLU kink.
const KINK_MARGIN: f64 = 1e-2;
const FD_STEP: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub networks: usize,
    pub parameters: usize,
    pub max_rel_error: f64,
    /// Hidden units seen on the negative and the positive PReLU branch.
    pub negative_branch: usize,
    pub positive_branch: usize,
}

type Batch = Vec<(Vec<f64>, Vec<f64>)>;

fn random_case(rng: &mut SeededRng) -> (Mlp, Batch) {
    let (i, h, d, o) = (1 + rng.below(16), 1 + rng.below(16), 1 + rng.below(3), 1 + rng.below(16));
    let mut mlp = init_mlp(i, h, d, o, InitScheme::FanInScaled, rng);
    for layer in &mut mlp.layers {
        layer.bias.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
        if let Some(s) = layer.prelu_slopes.as_mut() {
            s.iter_mut().for_each(|a| *a = rng.uniform(-0.5, 1.5));
        }
    }
    'retry: loop {
        let batch: Batch = (0..3)
            .map(|_| ((0..i).map(|_| rng.normal()).collect(), (0..o).map(|_| rng.normal()).collect()))
            .collect();
        for (x, _) in &batch {
            let (_, cache) = mlp.forward(x).expect("matching dims");
            if cache.pre[..d].iter().flatten().any(|z| z.abs() < KINK_MARGIN) {
                continue 'retry;
            }
        }
        return (mlp, batch);
    }
}

fn analytic(mlp: &Mlp, batch: &Batch, wd: f64) -> Vec<f64> {
    let mut g = Gradients::zeros_like(mlp);
    for (x, y) in batch {
        let (_, cache) = mlp.forward(x).expect("matching dims");
        mlp.accumulate_backward(&cache, y, &mut g).expect("fresh cache");
    }
    g.scale(1.0 / batch.len() as f64);
    mlp.add_weight_decay(&mut g, wd);
    g.to_vec()
}

/// Analytic gradients of `networks` random nets against five-point central
/// differences.
pub fn gradient_check(seed: u64, networks: usize) -> GradCheckReport {
    let wd = 1e-3;
    let mut report = GradCheckReport {
        networks,
        parameters: 0,
        max_rel_error: 0.0,
        negative_branch: 0,
        positive_branch: 0,
    };
    for k in 0..networks {
        let mut rng = SeededRng::new(derive_seed(seed, &[k as u64]));
        let (mut mlp, batch) = random_case(&mut rng);
        for (x, _) in &batch {
            let (_, cache) = mlp.forward(x).expect("matching dims");
            for z in cache.pre[..mlp.layers.len() - 1].iter().flatten() {
                if *z < 0.0 {
                    report.negative_branch += 1;
                } else {
                    report.positive_branch += 1;
                }
            }
        }
        let grad = analytic(&mlp, &batch, wd);
        let theta = mlp.param_vec();
        for i in 0..theta.len() {
            let h = FD_STEP * theta[i].abs().max(1.0);
            let mut at = |offset: f64| {
                let mut probe = theta.clone();
                probe[i] = theta[i] + offset * h;
                mlp.set_param_vec(&probe).expect("same length");
                mlp.batch_loss(&batch, wd).expect("non-empty batch")
            };
            // Five-point central difference, fourth-order accurate.
            let numeric = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        mlp.set_param_vec(&theta).expect("same length");
        report.parameters += theta.len();
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCheckReport {
    pub parents: usize,
    /// Worst `|(a + b)/2 − p|` relative to the largest parameter magnitude.
    pub max_mirror_error: f64,
    /// Every kappa = 0 split gave bit-identical children.
    pub zero_kappa_identical: bool,
}

pub fn split_symmetry(seed: u64, parents: usize) -> SplitCheckReport {
    let mut report = SplitCheckReport {
        parents,
        max_mirror_error: 0.0,
        zero_kappa_identical: true,
    };
    for k in 0..parents {
        let mut rng = SeededRng::new(derive_seed(seed, &[k as u64]));
        let n = [4usize, 8][rng.below(2)];
        let l = 1 + rng.below(2);
        let in_dim = dcdnn_core::fcnet::input_dim(n, l);
        let mlp = init_mlp(in_dim, 1 + rng.below(16), 1 + rng.below(3), n * n, InitScheme::FanInScaled, &mut rng);
        let parent = Network::new(n, l, mlp, SeedInfo::chacha8(k as u64)).expect("consistent shape");
        let cfg = SplitConfig {
            kappa: rng.uniform(0.0, 0.5),
            seed: derive_seed(seed, &[k as u64, 1]),
            perturb_bias: rng.coin(),
            perturb_slopes: rng.coin(),
        };
        let (a, b) = split_network(&parent, &cfg).expect("finite parent");
        let p = parent.mlp.param_vec();
        let scale = p.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for ((x, y), q) in a.mlp.param_vec().iter().zip(b.mlp.param_vec()).zip(&p) {
            report.max_mirror_error = report.max_mirror_error.max(((x + y) / 2.0 - q).abs() / scale);
        }
        let zero = SplitConfig { kappa: 0.0, ..cfg };
        let (a, b) = split_network(&parent, &zero).expect("finite parent");
        let bits = |m: &Mlp| m.param_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&a.mlp) != bits(&parent.mlp) || bits(&b.mlp) != bits(&parent.mlp) {
            report.zero_kappa_identical = false;
        }
    }
    report
}
