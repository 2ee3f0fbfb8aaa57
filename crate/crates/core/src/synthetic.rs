//! Labeled synthetic textures.
//!
//! The background is an unstructured random field. Inside a textured region
//! every sample copies its neighbor along the family direction and adds a
//! positive ramp `s`:
//!
//! - `Horizontal`: from the left, `v(x, y) = v(x − 1, y) + s`;
//! - `Vertical`: from above, `v(x, y) = v(x, y − 1) + s`;
//! - `DiagonalDown`: from the upper left;
//! - `DiagonalUp`: from the upper right.
//!
//! Gaussian noise is added to every sample afterwards. The references of a
//! block do not reveal its family, so a single predictor can only average
//! the directions while one mode per family predicts exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{extract_sample, BlockOrigin, Dataset, Plane, PredictionGroup, TuRect};
use crate::error::{Error, Result};
use crate::fcnet::check_block_size;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Horizontal,
    Vertical,
    DiagonalDown,
    DiagonalUp,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Horizontal, Family::Vertical, Family::DiagonalDown, Family::DiagonalUp];

    /// Offset of the neighbor a sample is propagated from.
    pub fn source(self) -> (i64, i64) {
        match self {
            Family::Horizontal => (-1, 0),
            Family::Vertical => (0, -1),
            Family::DiagonalDown => (-1, -1),
            Family::DiagonalUp => (1, -1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureParams {
    pub base: f64,
    /// Half-width of the uniform background field around `base`.
    pub field_amplitude: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub noise_sigma: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            base: 128.0,
            field_amplitude: 25.0,
            slope_min: 1.5,
            slope_max: 3.5,
            noise_sigma: 2.0,
        }
    }
}

/// Noise-free samples of a texture under construction.
struct Canvas {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Canvas {
    fn field(width: usize, height: usize, params: &TextureParams, rng: &mut SeededRng) -> Self {
        let a = params.field_amplitude;
        let values = (0..width * height).map(|_| params.base + rng.uniform(-a, a)).collect();
        Canvas { width, height, values }
    }

    /// Propagates `family` over `[x0, x0 + w) × [y0, y0 + h)` in raster order.
    fn paint(&mut self, (x0, y0, w, h): (usize, usize, usize, usize), family: Family, params: &TextureParams, rng: &mut SeededRng) {
        let slope = rng.uniform(params.slope_min, params.slope_max);
        let (dx, dy) = family.source();
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let sx = (x as i64 + dx).clamp(0, self.width as i64 - 1) as usize;
                let sy = (y as i64 + dy).clamp(0, self.height as i64 - 1) as usize;
                let v = if (sx, sy) == (x, y) {
                    params.base
                } else {
                    self.values[sy * self.width + sx] + slope
                };
                self.values[y * self.width + x] = v;
            }
        }
    }

    fn render(&self, params: &TextureParams, rng: &mut SeededRng) -> Plane {
        let samples = self
            .values
            .iter()
            .map(|v| libm::round(v + params.noise_sigma * rng.normal()).clamp(0.0, 255.0) as u8)
            .collect();
        Plane {
            width: self.width,
            height: self.height,
            samples,
        }
    }
}

/// Labeled block corpus, one single-TU group per block.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    /// Family index (into the `families` argument) of every group.
    pub labels: Vec<usize>,
}

/// `count` blocks cycling through `families`, each at `(L, L)` of its own
/// `(L + 2N)²` patch.
pub fn block_corpus(
    families: &[Family],
    count: usize,
    block_size: usize,
    ref_lines: usize,
    params: &TextureParams,
    seed: u64,
) -> Result<SyntheticCorpus> {
    check_block_size(block_size)?;
    if families.is_empty() {
        return Err(Error::Config("synthetic corpus needs at least one family".into()));
    }
    let side = ref_lines + 2 * block_size;
    let mut ds = Dataset::empty(ref_lines);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % families.len();
        let mut rng = SeededRng::new(derive_seed(seed, &[i as u64]));
        let mut canvas = Canvas::field(side, side, params, &mut rng);
        canvas.paint((ref_lines, ref_lines, block_size, block_size), families[label], params, &mut rng);
        let plane = canvas.render(params, &mut rng);
        let mut s = extract_sample(&plane, ref_lines, ref_lines, block_size, ref_lines)?;
        s.origin = BlockOrigin {
            image: i as u32,
            x: ref_lines as u32,
            y: ref_lines as u32,
            size: block_size as u32,
        };
        s.group_id = i as u32;
        ds.groups.push(PredictionGroup {
            id: i as u32,
            image: i as u32,
            pu_x: ref_lines as u32,
            pu_y: ref_lines as u32,
            pu_size: block_size as u32,
            tus: vec![TuRect::new(ref_lines as u32, ref_lines as u32, block_size as u32)],
            members: vec![i],
        });
        ds.samples.push(s);
        labels.push(label);
    }
    ds.refresh_block_sizes();
    Ok(SyntheticCorpus { dataset: ds, labels })
}

/// A `width × height` plane tiled with `tile × tile` textures of random
/// families. Returns the plane and the family index of each tile, row-major.
pub fn tiled_plane(
    width: usize,
    height: usize,
    tile: usize,
    families: &[Family],
    params: &TextureParams,
    seed: u64,
) -> Result<(Plane, Vec<usize>)> {
    if tile == 0 || families.is_empty() {
        return Err(Error::Config("tiled plane needs a tile size and at least one family".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut canvas = Canvas::field(width, height, params, &mut rng);
    let mut labels = Vec::new();
    for ty in (0..height).step_by(tile) {
        for tx in (0..width).step_by(tile) {
            let label = rng.below(families.len());
            let (w, h) = (tile.min(width - tx), tile.min(height - ty));
            canvas.paint((tx, ty, w, h), families[label], params, &mut rng);
            labels.push(label);
        }
    }
    Ok((canvas.render(params, &mut rng), labels))
}
