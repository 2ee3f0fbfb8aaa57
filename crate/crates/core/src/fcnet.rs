//! Dense prediction networks.
//!
//! An [`Mlp`] is an ordered stack of affine layers. Every layer except the
//! last is followed by a PReLU with one learnable slope per output channel.
//! [`Network`] wraps an [`Mlp`] with the block geometry it predicts: it maps
//! the `4NL + L²` zero-centered reference samples of an `N×N` block to the
//! `N²` block pixels in raster order.
//!
//! Training uses the squared-error loss with joint L2 regularization of all
//! weights, biases and slopes:
//!
//! ```text
//! L(Θ) = 1/(2M) Σ_j ‖F(x_j | Θ) − y_j‖² + γ/2 ‖Θ‖²
//! ```
//!
//! and classic momentum SGD (`v ← μ·v + g`, `θ ← θ − lr·v`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{SeedInfo, SeededRng};

/// Block sizes a network can be built for.
pub const BLOCK_SIZES: [usize; 4] = [4, 8, 16, 32];

pub const DEFAULT_REF_LINES: usize = 8;
pub const DEFAULT_DEPTH: usize = 4;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const INITIAL_SLOPE: f64 = 0.25;

/// Length of the reference vector for an `N×N` block with `L` reference lines.
pub const fn input_dim(block_size: usize, ref_lines: usize) -> usize {
    4 * block_size * ref_lines + ref_lines * ref_lines
}

/// Hidden width used for each block size unless configured otherwise.
pub fn default_hidden_dim(block_size: usize) -> Option<usize> {
    match block_size {
        4 => Some(128),
        8 | 16 => Some(256),
        32 => Some(512),
        _ => None,
    }
}

pub fn check_block_size(block_size: usize) -> Result<()> {
    if BLOCK_SIZES.contains(&block_size) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "block size {block_size} not in {{4, 8, 16, 32}}"
        )))
    }
}

/// Standard deviation of the initial Gaussian weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `1 / sqrt(fan_in)` per layer.
    FanInScaled,
    /// Unit variance regardless of fan-in.
    UnitGaussian,
}

impl InitScheme {
    fn sigma(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::FanInScaled => 1.0 / libm::sqrt(fan_in as f64),
            InitScheme::UnitGaussian => 1.0,
        }
    }
}

/// One affine layer, optionally followed by a PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out_dim × in_dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// PReLU slopes, present on every layer but the last.
    pub prelu_slopes: Option<Vec<f64>>,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize, activated: bool) -> Self {
        LayerParams {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            prelu_slopes: activated.then(|| vec![0.0; out_dim]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len() + self.prelu_slopes.as_ref().map_or(0, Vec::len)
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim, self.prelu_slopes.is_some())
    }

    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        [Some(&self.weights[..]), Some(&self.bias[..]), self.prelu_slopes.as_deref()]
            .into_iter()
            .flatten()
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        [
            Some(&mut self.weights[..]),
            Some(&mut self.bias[..]),
            self.prelu_slopes.as_deref_mut(),
        ]
        .into_iter()
        .flatten()
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// PReLU: identity for `x ≥ 0`, `a·x` otherwise.
pub fn prelu(x: &[f64], slopes: &[f64]) -> Result<Vec<f64>> {
    if x.len() != slopes.len() {
        return Err(Error::shape("prelu slopes", x.len(), slopes.len()));
    }
    Ok(x.iter().zip(slopes).map(|(&v, &a)| prelu_scalar(v, a)).collect())
}

#[inline]
fn prelu_scalar(x: f64, a: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        a * x
    }
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Affine outputs of every layer; the last entry is the network output.
    pub pre: Vec<Vec<f64>>,
    /// PReLU outputs of the activated layers.
    pub post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map_or(&[], Vec::as_slice)
    }
}

/// Parameter-shaped gradient (or momentum) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            layers: mlp.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(LayerParams::tensors)
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(LayerParams::tensors_mut)
    }

    fn same_shape(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers.len()
            && self.layers.iter().zip(&mlp.layers).all(|(g, l)| {
                g.in_dim == l.in_dim
                    && g.out_dim == l.out_dim
                    && g.weights.len() == l.weights.len()
                    && g.prelu_slopes.is_some() == l.prelu_slopes.is_some()
            })
    }
}

/// A training pair as seen by the loss.
pub trait Example {
    fn input(&self) -> &[f64];
    fn target(&self) -> &[f64];
}

impl Example for (Vec<f64>, Vec<f64>) {
    fn input(&self) -> &[f64] {
        &self.0
    }
    fn target(&self) -> &[f64] {
        &self.1
    }
}

impl<E: Example + ?Sized> Example for &E {
    fn input(&self) -> &[f64] {
        (**self).input()
    }
    fn target(&self) -> &[f64] {
        (**self).target()
    }
}

/// The dense engine behind a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LayerParams>,
}

impl Mlp {
    /// Checks chaining, slope placement and finiteness.
    pub fn from_layers(layers: Vec<LayerParams>) -> Result<Self> {
        let mlp = Mlp { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.len().checked_sub(1) else {
            return Err(Error::Config("network has no layers".into()));
        };
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if layer.weights.len() != layer.in_dim * layer.out_dim {
                return Err(Error::shape("layer weights", layer.in_dim * layer.out_dim, layer.weights.len()));
            }
            if layer.bias.len() != layer.out_dim {
                return Err(Error::shape("layer bias", layer.out_dim, layer.bias.len()));
            }
            match (&layer.prelu_slopes, i == last) {
                (Some(s), false) if s.len() != layer.out_dim => {
                    return Err(Error::shape("prelu slopes", layer.out_dim, s.len()));
                }
                (Some(_), true) => {
                    return Err(Error::Config("final layer must not carry PReLU slopes".into()));
                }
                (None, false) => {
                    return Err(Error::Config(format!("hidden layer {i} is missing PReLU slopes")));
                }
                _ => {}
            }
            if i > 0 && self.layers[i - 1].out_dim != layer.in_dim {
                return Err(Error::shape("layer chaining", self.layers[i - 1].out_dim, layer.in_dim));
            }
        }
        if !self.is_finite() {
            return Err(Error::Data("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `‖Θ‖²` over weights, biases and slopes.
    pub fn sq_norm(&self) -> f64 {
        self.tensors().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    /// All parameters flattened layer by layer as weights, bias, slopes.
    pub fn param_vec(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_param_vec(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape("parameter vector", self.param_count(), values.len()));
        }
        let mut rest = values;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(LayerParams::tensors)
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(LayerParams::tensors_mut)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.len()));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite network input".into()));
        }
        Ok(())
    }

    /// Inference without keeping intermediates.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine(&cur, &mut next);
            if let Some(slopes) = &layer.prelu_slopes {
                next.iter_mut().zip(slopes).for_each(|(v, &a)| *v = prelu_scalar(*v, a));
            }
            core::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len().saturating_sub(1));
        for (i, layer) in self.layers.iter().enumerate() {
            let x: &[f64] = if i == 0 { input } else { &post[i - 1] };
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine(x, &mut z);
            if let Some(slopes) = &layer.prelu_slopes {
                let h = z.iter().zip(slopes).map(|(&v, &a)| prelu_scalar(v, a)).collect();
                pre.push(z);
                post.push(h);
            } else {
                pre.push(z);
            }
        }
        let cache = ForwardCache {
            input: input.to_vec(),
            pre,
            post,
        };
        Ok((cache.output().to_vec(), cache))
    }

    /// Gradient of `½‖F(x) − y‖² + γ/2 ‖Θ‖²` for the sample cached by `forward`.
    pub fn backward(&self, cache: &ForwardCache, target: &[f64], weight_decay: f64) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_backward(cache, target, &mut grads)?;
        if weight_decay != 0.0 {
            self.add_weight_decay(&mut grads, weight_decay);
        }
        Ok(grads)
    }

    /// Adds the data-term gradient of one sample into `grads`.
    pub fn accumulate_backward(&self, cache: &ForwardCache, target: &[f64], grads: &mut Gradients) -> Result<()> {
        let stale = cache.pre.len() != self.layers.len()
            || cache.post.len() + 1 != self.layers.len()
            || cache.input.len() != self.input_dim()
            || cache.pre.iter().zip(&self.layers).any(|(z, l)| z.len() != l.out_dim);
        if stale {
            return Err(Error::Usage("forward cache does not match network".into()));
        }
        if !grads.same_shape(self) {
            return Err(Error::Usage("gradient buffer does not match network".into()));
        }
        if target.len() != self.output_dim() {
            return Err(Error::shape("target", self.output_dim(), target.len()));
        }

        let mut delta: Vec<f64> = cache.output().iter().zip(target).map(|(f, y)| f - y).collect();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x: &[f64] = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let g = &mut grads.layers[i];
            for ((g_row, &d), gb) in g.weights.chunks_exact_mut(layer.in_dim).zip(&delta).zip(&mut g.bias) {
                *gb += d;
                if d != 0.0 {
                    g_row.iter_mut().zip(x).for_each(|(gw, xv)| *gw += d * xv);
                }
            }
            if i == 0 {
                break;
            }
            let mut upstream = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                if d != 0.0 {
                    upstream.iter_mut().zip(row).for_each(|(u, w)| *u += w * d);
                }
            }
            let prev = &self.layers[i - 1];
            let slopes = prev.prelu_slopes.as_ref().expect("validated hidden layer");
            let g_slopes = grads.layers[i - 1].prelu_slopes.as_mut().expect("validated hidden layer");
            let z = &cache.pre[i - 1];
            for k in 0..upstream.len() {
                if z[k] < 0.0 {
                    g_slopes[k] += upstream[k] * z[k];
                    upstream[k] *= slopes[k];
                }
            }
            delta = upstream;
        }
        Ok(())
    }

    /// Adds `γ·Θ` to `grads`.
    pub fn add_weight_decay(&self, grads: &mut Gradients, weight_decay: f64) {
        for (g, p) in grads.tensors_mut().zip(self.tensors()) {
            g.iter_mut().zip(p).for_each(|(g, p)| *g += weight_decay * p);
        }
    }

    pub fn batch_loss<E: Example>(&self, batch: &[E], weight_decay: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("batch_loss on an empty batch".into()));
        }
        let mut data = 0.0;
        for ex in batch {
            data += self.sample_sse(ex.input(), ex.target())?;
        }
        Ok(data / (2.0 * batch.len() as f64) + 0.5 * weight_decay * self.sq_norm())
    }

    /// `‖F(x) − y‖²` for one sample.
    pub fn sample_sse(&self, input: &[f64], target: &[f64]) -> Result<f64> {
        if target.len() != self.output_dim() {
            return Err(Error::shape("target", self.output_dim(), target.len()));
        }
        let out = self.predict(input)?;
        Ok(out.iter().zip(target).map(|(f, y)| (f - y) * (f - y)).sum())
    }
}

/// Stacked network for one block size.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub block_size: usize,
    pub ref_lines: usize,
    pub mlp: Mlp,
    pub seed_info: SeedInfo,
}

/// Shape and initialization of a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub block_size: usize,
    pub ref_lines: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub init: InitScheme,
}

impl NetConfig {
    /// Default geometry for a block size: 8 reference lines, depth 4 and the
    /// per-size hidden width.
    pub fn for_block(block_size: usize) -> Result<Self> {
        check_block_size(block_size)?;
        Ok(NetConfig {
            block_size,
            ref_lines: DEFAULT_REF_LINES,
            hidden_dim: default_hidden_dim(block_size).expect("checked block size"),
            depth: DEFAULT_DEPTH,
            init: InitScheme::FanInScaled,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_block_size(self.block_size)?;
        if self.ref_lines == 0 {
            return Err(Error::Config("ref_lines must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gaussian weights, zero biases and 0.25 slopes from a seeded stream.
pub fn init_network(cfg: &NetConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut rng = SeededRng::new(seed);
    let in_dim = input_dim(cfg.block_size, cfg.ref_lines);
    let out_dim = cfg.block_size * cfg.block_size;
    let mlp = init_mlp(in_dim, cfg.hidden_dim, cfg.depth, out_dim, cfg.init, &mut rng);
    Ok(Network {
        block_size: cfg.block_size,
        ref_lines: cfg.ref_lines,
        mlp,
        seed_info: SeedInfo::chacha8(seed),
    })
}

/// `depth` PReLU layers of width `hidden_dim` followed by an affine output layer.
pub fn init_mlp(
    in_dim: usize,
    hidden_dim: usize,
    depth: usize,
    out_dim: usize,
    init: InitScheme,
    rng: &mut SeededRng,
) -> Mlp {
    let mut layers = Vec::with_capacity(depth + 1);
    let mut fan_in = in_dim;
    for i in 0..=depth {
        let activated = i < depth;
        let width = if activated { hidden_dim } else { out_dim };
        let mut layer = LayerParams::zeros(fan_in, width, activated);
        let sigma = init.sigma(fan_in);
        layer.weights.iter_mut().for_each(|w| *w = sigma * rng.normal());
        if let Some(s) = layer.prelu_slopes.as_mut() {
            s.fill(INITIAL_SLOPE);
        }
        layers.push(layer);
        fan_in = width;
    }
    Mlp { layers }
}

impl Network {
    /// Wraps an engine, checking it against the block geometry.
    pub fn new(block_size: usize, ref_lines: usize, mlp: Mlp, seed_info: SeedInfo) -> Result<Self> {
        let net = Network {
            block_size,
            ref_lines,
            mlp,
            seed_info,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        check_block_size(self.block_size)?;
        if self.ref_lines == 0 {
            return Err(Error::Config("ref_lines must be >= 1".into()));
        }
        self.mlp.validate()?;
        let want_in = input_dim(self.block_size, self.ref_lines);
        if self.mlp.input_dim() != want_in {
            return Err(Error::shape("network input dim", want_in, self.mlp.input_dim()));
        }
        let want_out = self.block_size * self.block_size;
        if self.mlp.output_dim() != want_out {
            return Err(Error::shape("network output dim", want_out, self.mlp.output_dim()));
        }
        let hidden = self.hidden_dim();
        if let Some(bad) = self.mlp.layers[..self.depth()].iter().find(|l| l.out_dim != hidden) {
            return Err(Error::shape("hidden width", hidden, bad.out_dim));
        }
        Ok(())
    }

    /// Number of PReLU layers.
    pub fn depth(&self) -> usize {
        self.mlp.layers.len() - 1
    }

    /// Width of the hidden layers, 0 for a single affine layer.
    pub fn hidden_dim(&self) -> usize {
        if self.depth() == 0 {
            0
        } else {
            self.mlp.layers[0].out_dim
        }
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.block_size, self.ref_lines)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.mlp.forward(input)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.mlp.predict(input)
    }

    pub fn backward(&self, cache: &ForwardCache, target: &[f64], weight_decay: f64) -> Result<Gradients> {
        self.mlp.backward(cache, target, weight_decay)
    }

    pub fn batch_loss<E: Example>(&self, batch: &[E], weight_decay: f64) -> Result<f64> {
        self.mlp.batch_loss(batch, weight_decay)
    }
}

/// Momentum buffers and regularization strength.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(mlp: &Mlp, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {weight_decay} must be finite and >= 0")));
        }
        Ok(OptimizerState {
            velocity: Gradients::zeros_like(mlp),
            momentum,
            weight_decay,
        })
    }
}

/// `v ← μ·v + g; θ ← θ − lr·v`.
///
/// Non-finite gradients abort the step before anything is modified.
pub fn sgd_step(mlp: &mut Mlp, grads: &Gradients, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Usage(format!("learning rate {lr} must be finite and >= 0")));
    }
    if !grads.same_shape(mlp) || !state.velocity.same_shape(mlp) {
        return Err(Error::Usage("gradient or momentum buffers do not match network".into()));
    }
    for (li, g) in grads.layers.iter().enumerate() {
        for (name, t) in [("weights", Some(&g.weights)), ("bias", Some(&g.bias)), ("slopes", g.prelu_slopes.as_ref())] {
            let Some(t) = t else { continue };
            if let Some((idx, v)) = t.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                let max_abs = g.weights.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
                return Err(Error::Data(format!(
                    "training aborted: non-finite gradient {v} in layer {li} {name}[{idx}] \
                     (largest finite weight gradient in layer: {max_abs:e}, lr {lr:e})"
                )));
            }
        }
    }
    let mu = state.momentum;
    for ((p, v), g) in mlp.tensors_mut().zip(state.velocity.tensors_mut()).zip(grads.tensors()) {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}
