//! Mirrored network splitting.
//!
//! A parent network yields two children by adding and subtracting the same
//! Gaussian noise tensor, layer by layer. The noise scale of each layer is
//! `kappa · RMS(W)`, small enough that the PReLU sign pattern (and so the
//! mapping) of the parent is mostly kept while the two children are pushed
//! in opposite directions.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fcnet::{LayerParams, Network};
use crate::rng::{derive_seed, SeedInfo, SeededRng};

pub const DEFAULT_KAPPA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    /// Noise standard deviation relative to the layer's weight RMS.
    pub kappa: f64,
    pub seed: u64,
    pub perturb_bias: bool,
    pub perturb_slopes: bool,
}

impl SplitConfig {
    pub fn new(kappa: f64, seed: u64) -> Self {
        SplitConfig {
            kappa,
            seed,
            perturb_bias: false,
            perturb_slopes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::Config(format!("kappa {} must be finite and >= 0", self.kappa)));
        }
        Ok(())
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self::new(DEFAULT_KAPPA, 0)
    }
}

/// `kappa · sqrt(Σ w² / n)` over the layer's weights.
pub fn noise_sigma(layer: &LayerParams, kappa: f64) -> Result<f64> {
    if layer.weights.is_empty() {
        return Err(Error::Usage("noise_sigma on a layer without weights".into()));
    }
    let ms = layer.weights.iter().map(|w| w * w).sum::<f64>() / layer.weights.len() as f64;
    Ok(kappa * libm::sqrt(ms))
}

fn mirror(a: &mut [f64], b: &mut [f64], sigma: f64, rng: &mut SeededRng) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let n = sigma * rng.normal();
        *x += n;
        *y -= n;
    }
}

/// Returns `(parent + n, parent − n)` with one noise draw per parameter.
pub fn split_network(parent: &Network, cfg: &SplitConfig) -> Result<(Network, Network)> {
    cfg.validate()?;
    if !parent.mlp.is_finite() {
        return Err(Error::Data("cannot split a network with non-finite parameters".into()));
    }
    let mut a = parent.clone();
    let mut b = parent.clone();
    let info = SeedInfo::chacha8(cfg.seed);
    a.seed_info = info;
    b.seed_info = info;
    let mut rng = SeededRng::new(cfg.seed);
    for (la, lb) in a.mlp.layers.iter_mut().zip(b.mlp.layers.iter_mut()) {
        let sigma = noise_sigma(la, cfg.kappa)?;
        // Zero noise must leave children bit-identical to the parent.
        if sigma == 0.0 {
            continue;
        }
        mirror(&mut la.weights, &mut lb.weights, sigma, &mut rng);
        if cfg.perturb_bias {
            mirror(&mut la.bias, &mut lb.bias, sigma, &mut rng);
        }
        if cfg.perturb_slopes {
            if let (Some(sa), Some(sb)) = (la.prelu_slopes.as_mut(), lb.prelu_slopes.as_mut()) {
                mirror(sa, sb, sigma, &mut rng);
            }
        }
    }
    Ok((a, b))
}

/// Splits every network of a same-size bank; children of `bank[i]` land at
/// `2i` and `2i + 1`.
pub fn split_bank(bank: &[Network], cfg: &SplitConfig) -> Result<Vec<Network>> {
    let Some(first) = bank.first() else {
        return Err(Error::Usage("split_bank on an empty bank".into()));
    };
    if let Some(odd) = bank.iter().find(|n| n.block_size != first.block_size) {
        return Err(Error::Usage(format!(
            "bank mixes block sizes {} and {}",
            first.block_size, odd.block_size
        )));
    }
    let mut out = Vec::with_capacity(bank.len() * 2);
    for (i, net) in bank.iter().enumerate() {
        let child_cfg = SplitConfig {
            seed: derive_seed(cfg.seed, &[i as u64]),
            ..*cfg
        };
        let (a, b) = split_network(net, &child_cfg)?;
        out.push(a);
        out.push(b);
    }
    Ok(out)
}
