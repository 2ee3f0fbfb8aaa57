//! HEVC-style directional intra prediction: planar (0), DC (1) and the 33
//! angular modes (2..=34) on a single reference line.
//!
//! Reference smoothing and the DC/horizontal/vertical boundary filters are
//! not applied.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const NUM_MODES: usize = 35;
pub const PLANAR: u8 = 0;
pub const DC: u8 = 1;
pub const HORIZONTAL: u8 = 10;
pub const VERTICAL: u8 = 26;

/// Displacement (in 1/32 sample) of each angular mode, indexed by mode.
const INTRA_PRED_ANGLE: [i32; NUM_MODES] = [
    0, 0, // planar, DC
    32, 26, 21, 17, 13, 9, 5, 2, 0, -2, -5, -9, -13, -17, -21, -26, //
    -32, -26, -21, -17, -13, -9, -5, -2, 0, 2, 5, 9, 13, 17, 21, 26, 32,
];

/// `round(8192 / angle)` for the negative-angle modes 11..=25.
const INV_ANGLE: [i32; 15] = [
    -4096, -1638, -910, -630, -482, -390, -315, -256, -315, -390, -482, -630, -910, -1638, -4096,
];

/// One of the 35 directional modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectionalMode(u8);

impl DirectionalMode {
    pub fn new(index: u8) -> Result<Self> {
        if (index as usize) < NUM_MODES {
            Ok(DirectionalMode(index))
        } else {
            Err(Error::Usage(format!("directional mode {index} outside 0..=34")))
        }
    }

    pub fn all() -> impl Iterator<Item = DirectionalMode> {
        (0..NUM_MODES as u8).map(DirectionalMode)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn is_angular(self) -> bool {
        self.0 >= 2
    }

    /// Angular displacement in 1/32 sample; 0 for planar and DC.
    pub fn displacement(self) -> i32 {
        INTRA_PRED_ANGLE[self.0 as usize]
    }
}

/// Substituted single-line references of an `N×N` block.
///
/// `above[0]` and `left[0]` both hold the top-left corner sample;
/// `above[1 + x]` is the sample at `(x, −1)` and `left[1 + y]` the one at
/// `(−1, y)`, for `x, y` in `0..2N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefLine {
    pub size: usize,
    pub above: Vec<i32>,
    pub left: Vec<i32>,
}

impl RefLine {
    pub fn new(size: usize, above: Vec<i32>, left: Vec<i32>) -> Result<Self> {
        if !size.is_power_of_two() || !(4..=32).contains(&size) {
            return Err(Error::Config(format!("block size {size} not in {{4, 8, 16, 32}}")));
        }
        if above.len() != 2 * size + 1 {
            return Err(Error::shape("above references", 2 * size + 1, above.len()));
        }
        if left.len() != 2 * size + 1 {
            return Err(Error::shape("left references", 2 * size + 1, left.len()));
        }
        if above[0] != left[0] {
            return Err(Error::Data("above and left disagree on the corner sample".into()));
        }
        Ok(RefLine { size, above, left })
    }

    /// Every reference sample set to `value`.
    pub fn constant(size: usize, value: i32) -> Result<Self> {
        Self::new(size, vec![value; 2 * size + 1], vec![value; 2 * size + 1])
    }

    fn log2_size(&self) -> u32 {
        self.size.trailing_zeros()
    }

    pub fn min_max(&self) -> (i32, i32) {
        self.above
            .iter()
            .chain(&self.left)
            .fold((i32::MAX, i32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Constant block at the rounded mean of the `N` above and `N` left samples.
pub fn predict_dc(refs: &RefLine) -> Vec<i32> {
    let n = refs.size;
    let sum: i32 = refs.above[1..=n].iter().chain(&refs.left[1..=n]).sum();
    let dc = (sum + n as i32) >> (refs.log2_size() + 1);
    vec![dc; n * n]
}

/// Average of a horizontal and a vertical linear interpolation towards the
/// top-right and bottom-left samples.
pub fn predict_planar(refs: &RefLine) -> Vec<i32> {
    let n = refs.size;
    let ni = n as i32;
    let top_right = refs.above[n + 1];
    let bottom_left = refs.left[n + 1];
    let shift = refs.log2_size() + 1;
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        let yi = y as i32;
        for x in 0..n {
            let xi = x as i32;
            let v = (ni - 1 - xi) * refs.left[1 + y]
                + (xi + 1) * top_right
                + (ni - 1 - yi) * refs.above[1 + x]
                + (yi + 1) * bottom_left
                + ni;
            out.push(v >> shift);
        }
    }
    out
}

/// Angular projection with 1/32-sample linear interpolation.
pub fn predict_angular(mode: DirectionalMode, refs: &RefLine) -> Result<Vec<i32>> {
    if !mode.is_angular() {
        return Err(Error::Usage(format!("mode {} is not angular", mode.index())));
    }
    let n = refs.size;
    let angle = mode.displacement();
    let vertical = mode.index() >= 18;
    let (main, side) = if vertical {
        (&refs.above, &refs.left)
    } else {
        (&refs.left, &refs.above)
    };

    // ref_main[k + n] holds the reference at signed position k in [−n, 2n].
    let mut ref_main = vec![0i32; 3 * n + 1];
    ref_main[n..].copy_from_slice(main);
    if angle < 0 {
        let last = (n as i32 * angle) >> 5;
        if last < -1 {
            let inv = INV_ANGLE[mode.index() as usize - 11];
            for k in last..=-1 {
                let src = (k * inv + 128) >> 8;
                ref_main[(k + n as i32) as usize] = side[src as usize];
            }
        }
    }

    let mut out = vec![0i32; n * n];
    for j in 0..n {
        let pos = (j as i32 + 1) * angle;
        let idx = pos >> 5;
        let fact = pos & 31;
        for i in 0..n {
            let base = (i as i32 + idx + 1 + n as i32) as usize;
            let v = if fact != 0 {
                ((32 - fact) * ref_main[base] + fact * ref_main[base + 1] + 16) >> 5
            } else {
                ref_main[base]
            };
            // Vertical modes run j over rows; horizontal modes over columns.
            let (x, y) = if vertical { (i, j) } else { (j, i) };
            out[y * n + x] = v;
        }
    }
    Ok(out)
}

/// Prediction of any of the 35 modes, row-major `N×N`.
pub fn predict(mode: DirectionalMode, refs: &RefLine) -> Vec<i32> {
    match mode.index() {
        PLANAR => predict_planar(refs),
        DC => predict_dc(refs),
        _ => predict_angular(mode, refs).expect("angular mode"),
    }
}

pub fn sse(block: &[i32], pred: &[i32]) -> u64 {
    block
        .iter()
        .zip(pred)
        .map(|(&a, &b)| {
            let d = (a - b) as i64;
            (d * d) as u64
        })
        .sum()
}

/// Exhaustive search over the 35 modes; ties go to the lowest mode index.
pub fn best_baseline_mode(block: &[i32], refs: &RefLine) -> Result<(DirectionalMode, u64)> {
    if block.len() != refs.size * refs.size {
        return Err(Error::shape("block", refs.size * refs.size, block.len()));
    }
    let mut best = (DirectionalMode(0), u64::MAX);
    for mode in DirectionalMode::all() {
        let cost = sse(block, &predict(mode, refs));
        if cost < best.1 {
            best = (mode, cost);
        }
    }
    Ok(best)
}
