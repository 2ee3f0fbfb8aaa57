use std::collections::HashSet;

use dcdnn_core::dataset::{
    complexity_filter, extract_sample, reference_availability, reference_layout, substitute_unavailable, Plane,
};
use dcdnn_core::fcnet::{init_mlp, InitScheme, Mlp};
use dcdnn_core::rng::{SeedInfo, SeededRng};
use dcdnn_core::split::{split_network, SplitConfig};
use dcdnn_core::trainer::{argmin_rows, retention, Assignment};
use dcdnn_core::fcnet::Network;
use proptest::prelude::*;

fn random_mlp(seed: u64, dims: (usize, usize, usize, usize)) -> Mlp {
    let mut rng = SeededRng::new(seed);
    init_mlp(dims.0, dims.1, dims.2, dims.3, InitScheme::FanInScaled, &mut rng)
}

fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
    let mut rng = SeededRng::new(seed);
    Plane::new(w, h, (0..w * h).map(|_| rng.below(256) as u8).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), i in 1usize..12, h in 1usize..12, d in 0usize..4, o in 1usize..12) {
        let mlp = random_mlp(seed, (i, h, d, o));
        let mut rng = SeededRng::new(seed ^ 1);
        let x: Vec<f64> = (0..i).map(|_| rng.normal()).collect();
        let a = mlp.predict(&x).unwrap();
        let (b, _) = mlp.forward(&x).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a, mlp.clone().predict(&x).unwrap());
    }

    #[test]
    fn loss_decomposes(seed in any::<u64>(), m in 1usize..8, gamma in 0.0f64..0.1) {
        let mlp = random_mlp(seed, (6, 5, 2, 3));
        let mut rng = SeededRng::new(seed ^ 2);
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
            .map(|_| ((0..6).map(|_| rng.normal()).collect(), (0..3).map(|_| rng.normal()).collect()))
            .collect();
        let mut data = 0.0;
        for (x, y) in &batch {
            let f = mlp.predict(x).unwrap();
            data += f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let norm: f64 = mlp.param_vec().iter().map(|p| p * p).sum();
        let expect = data / (2.0 * m as f64) + gamma / 2.0 * norm;
        let got = mlp.batch_loss(&batch, gamma).unwrap();
        prop_assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn split_children_mirror_parent(seed in any::<u64>(), kappa in 0.0f64..0.5, bias in any::<bool>()) {
        let parent = Network::new(4, 1, random_mlp(seed, (17, 6, 2, 16)), SeedInfo::chacha8(seed)).unwrap();
        let cfg = SplitConfig { kappa, seed: seed ^ 3, perturb_bias: bias, perturb_slopes: false };
        let (a, b) = split_network(&parent, &cfg).unwrap();
        let (pa, pb, pp) = (a.mlp.param_vec(), b.mlp.param_vec(), parent.mlp.param_vec());
        let scale = pp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((x, y), p) in pa.iter().zip(&pb).zip(&pp) {
            prop_assert!(((x + y) / 2.0 - p).abs() <= 1e-12 * scale);
        }
        for (la, lp) in a.mlp.layers.iter().zip(&parent.mlp.layers) {
            prop_assert_eq!(&la.prelu_slopes, &lp.prelu_slopes);
            if !bias {
                prop_assert_eq!(&la.bias, &lp.bias);
            }
        }
    }

    #[test]
    fn extraction_zero_centers(seed in any::<u64>(), nx in 0usize..8, ny in 0usize..8, n_idx in 0usize..2, l in 1usize..5) {
        let n = [4usize, 8][n_idx];
        let plane = random_plane(64, 64, seed);
        let (x, y) = (nx * n, ny * n);
        let s = extract_sample(&plane, x, y, n, l).unwrap();
        prop_assert_eq!(s.ref_vector.len(), 4 * n * l + l * l);
        let mean = s.ref_vector.iter().sum::<f64>() / s.ref_vector.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert_eq!(s.original_block(), plane.block(x, y, n).unwrap());
        let avail = reference_availability(&plane, x, y, n, l);
        for (((dx, dy), v), ok) in reference_layout(n, l).iter().zip(&s.ref_vector).zip(&avail.0) {
            if *ok {
                let px = plane.at((x as i32 + dx) as usize, (y as i32 + dy) as usize) as f64;
                prop_assert!((v + s.ref_mean - px).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn substitution_is_total(values in proptest::collection::vec(0u8..=255, 1..64), mask in proptest::collection::vec(any::<bool>(), 64)) {
        let avail = &mask[..values.len()];
        let out = substitute_unavailable(&values, avail, 128).unwrap();
        prop_assert_eq!(out.len(), values.len());
        if avail.iter().all(|&a| !a) {
            prop_assert!(out.iter().all(|&v| v == 128));
        } else {
            let present: HashSet<u8> = values.iter().zip(avail).filter(|(_, &a)| a).map(|(&v, _)| v).collect();
            prop_assert!(out.iter().all(|v| present.contains(v)));
        }
        for ((o, v), &a) in out.iter().zip(&values).zip(avail) {
            if a {
                prop_assert_eq!(o, v);
            }
        }
    }

    #[test]
    fn filter_is_stable(mses in proptest::collection::vec((0u32..3, 0.0f64..100.0), 1..40)) {
        let keep = complexity_filter(&mses);
        prop_assert!(keep.iter().filter(|&&k| k).count() <= mses.len());
        for img in 0..3 {
            let of: Vec<f64> = mses.iter().filter(|m| m.0 == img).map(|m| m.1).collect();
            if of.is_empty() {
                continue;
            }
            let threshold = 2.0 * of.iter().sum::<f64>() / of.len() as f64;
            for (&(i, m), &k) in mses.iter().zip(&keep) {
                if i == img {
                    prop_assert_eq!(k, m < threshold || (threshold == 0.0 && m <= threshold));
                }
            }
        }
    }

    #[test]
    fn partition_is_idempotent_and_retention_weighted(seed in any::<u64>(), groups in 1usize..60, k in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let losses: Vec<Vec<f64>> = (0..groups).map(|_| (0..k).map(|_| rng.below(5) as f64).collect()).collect();
        let a = argmin_rows(&losses);
        prop_assert_eq!(&a, &argmin_rows(&losses));
        let prev = Assignment { round: 1, clusters: (0..groups).map(|_| rng.below(k) as u32).collect() };
        let next = Assignment { round: 2, clusters: a };
        let rates = retention(&prev, &next).unwrap();
        let counts = prev.counts(k);
        let mut weighted = 0.0;
        for (r, &c) in rates.iter().zip(&counts) {
            match r {
                Some(r) => {
                    prop_assert!((0.0..=1.0).contains(r));
                    weighted += r * c as f64;
                }
                None => prop_assert_eq!(c, 0),
            }
        }
        let stayed = prev.clusters.iter().zip(&next.clusters).filter(|(a, b)| a == b).count();
        prop_assert!((weighted / groups as f64 - stayed as f64 / groups as f64).abs() < 1e-12);
    }
}

#[test]
fn layout_is_bijective_and_causal() {
    for n in [4usize, 8, 16, 32] {
        for l in [1usize, 2, 8] {
            let layout = reference_layout(n, l);
            assert_eq!(layout.len(), 4 * n * l + l * l);
            let set: HashSet<_> = layout.iter().copied().collect();
            assert_eq!(set.len(), layout.len());
            assert!(layout.iter().all(|&(dx, dy)| dx < 0 || dy < 0));
            assert_eq!(layout, reference_layout(n, l));
        }
    }
}
