//! Training data: reference gathering, substitution, zero-centering,
//! PU/TU grouping and complexity filtering on 8-bit luma planes.
//!
//! # Reference layout
//!
//! The `4NL + L²` reference samples of an `N×N` block at `(x, y)` are the
//! offsets `(dx, dy)` relative to the block origin, in this order:
//!
//! 1. the `L×L` top-left corner, `dy ∈ [−L, −1]`, `dx ∈ [−L, −1]`;
//! 2. the `L` rows above, `dy ∈ [−L, −1]`, `dx ∈ [0, 2N)`;
//! 3. the `L` columns to the left, `dy ∈ [0, 2N)`, `dx ∈ [−L, −1]`.
//!
//! Each region is row-major. This order is versioned by [`LAYOUT_VERSION`].
//!
//! # Substitution
//!
//! Positions outside the plane are filled by scanning each reference ring
//! (distance `l = 0..L` from the block) from the bottom-left end up the left
//! column and along the top row to the right end, copying the last available
//! value forward. Ring 0 alone reproduces HEVC reference sample substitution.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::baseline::{self, RefLine};
use crate::error::{Error, Result};
use crate::fcnet::{check_block_size, input_dim, Example};

/// Version tag of the reference ordering described in the module docs.
pub const LAYOUT_VERSION: u32 = 1;

/// Value used when no reference sample is available (8-bit mid-gray).
pub const DEFAULT_SAMPLE: u8 = 128;

/// An 8-bit luma plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width.checked_mul(height) != Some(samples.len()) {
            return Err(Error::shape("plane samples", width.saturating_mul(height), samples.len()));
        }
        Ok(Plane {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Plane {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    /// Sample at signed coordinates, `None` outside the plane.
    #[inline]
    pub fn get(&self, x: i64, y: i64) -> Option<u8> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.at(x as usize, y as usize))
        }
    }

    /// The `N×N` block at `(x, y)`, row-major.
    pub fn block(&self, x: usize, y: usize, size: usize) -> Result<Vec<u8>> {
        self.check_block(x, y, size)?;
        let mut out = Vec::with_capacity(size * size);
        for row in y..y + size {
            out.extend_from_slice(&self.samples[row * self.width + x..row * self.width + x + size]);
        }
        Ok(out)
    }

    fn check_block(&self, x: usize, y: usize, size: usize) -> Result<()> {
        if x + size > self.width || y + size > self.height {
            return Err(Error::Usage(format!(
                "block {size}x{size} at ({x}, {y}) exceeds plane {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Canonical reference offsets for an `N×N` block with `L` lines.
pub fn reference_layout(block_size: usize, ref_lines: usize) -> Vec<(i32, i32)> {
    let n = block_size as i32;
    let l = ref_lines as i32;
    let mut out = Vec::with_capacity(input_dim(block_size, ref_lines));
    for dy in -l..0 {
        for dx in -l..0 {
            out.push((dx, dy));
        }
    }
    for dy in -l..0 {
        for dx in 0..2 * n {
            out.push((dx, dy));
        }
    }
    for dy in 0..2 * n {
        for dx in -l..0 {
            out.push((dx, dy));
        }
    }
    out
}

/// Layout indices in substitution scan order (ring by ring, see module docs).
pub fn substitution_scan(block_size: usize, ref_lines: usize) -> Vec<usize> {
    let layout = reference_layout(block_size, ref_lines);
    let index: BTreeMap<(i32, i32), usize> = layout.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let n = block_size as i32;
    let mut out = Vec::with_capacity(layout.len());
    for ring in 0..ref_lines as i32 {
        let edge = -1 - ring;
        for dy in (edge..2 * n).rev() {
            out.push(index[&(edge, dy)]);
        }
        for dx in edge + 1..2 * n {
            out.push(index[&(dx, edge)]);
        }
    }
    out
}

/// Per-position availability of reference samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefAvailability(pub Vec<bool>);

impl RefAvailability {
    pub fn all_available(&self) -> bool {
        self.0.iter().all(|&a| a)
    }

    pub fn none_available(&self) -> bool {
        self.0.iter().all(|&a| !a)
    }
}

/// Fills unavailable entries of a scan-ordered sequence.
///
/// Leading gaps take the first available value, later gaps the previous
/// value; with nothing available everything becomes `default`.
pub fn substitute_unavailable<T: Copy>(values: &[T], availability: &[bool], default: T) -> Result<Vec<T>> {
    if values.len() != availability.len() {
        return Err(Error::shape("availability", values.len(), availability.len()));
    }
    let Some(first) = availability.iter().position(|&a| a) else {
        return Ok(vec![default; values.len()]);
    };
    let mut last = values[first];
    Ok(values
        .iter()
        .zip(availability)
        .map(|(&v, &a)| {
            if a {
                last = v;
            }
            last
        })
        .collect())
}

/// Substituted reference samples of the block at `(x, y)` in layout order.
pub fn gather_references(plane: &Plane, x: usize, y: usize, block_size: usize, ref_lines: usize) -> Vec<u8> {
    let layout = reference_layout(block_size, ref_lines);
    let scan = substitution_scan(block_size, ref_lines);
    let (raw, avail): (Vec<u8>, Vec<bool>) = scan
        .iter()
        .map(|&i| {
            let (dx, dy) = layout[i];
            match plane.get(x as i64 + dx as i64, y as i64 + dy as i64) {
                Some(v) => (v, true),
                None => (0, false),
            }
        })
        .unzip();
    let filled = substitute_unavailable(&raw, &avail, DEFAULT_SAMPLE).expect("equal lengths");
    let mut out = vec![0u8; layout.len()];
    for (&i, v) in scan.iter().zip(filled) {
        out[i] = v;
    }
    out
}

/// Availability of each layout position (inside the plane or not).
pub fn reference_availability(plane: &Plane, x: usize, y: usize, block_size: usize, ref_lines: usize) -> RefAvailability {
    RefAvailability(
        reference_layout(block_size, ref_lines)
            .iter()
            .map(|&(dx, dy)| plane.get(x as i64 + dx as i64, y as i64 + dy as i64).is_some())
            .collect(),
    )
}

/// Single-line HEVC references for the directional baseline.
pub fn baseline_refs(plane: &Plane, x: usize, y: usize, block_size: usize) -> Result<RefLine> {
    check_block_size(block_size)?;
    let refs = gather_references(plane, x, y, block_size, 1);
    // L = 1 layout: [corner, above (2N), left (2N)].
    let n2 = 2 * block_size;
    let corner = refs[0] as i32;
    let mut above = Vec::with_capacity(n2 + 1);
    above.push(corner);
    above.extend(refs[1..=n2].iter().map(|&v| v as i32));
    let mut left = Vec::with_capacity(n2 + 1);
    left.push(corner);
    left.extend(refs[n2 + 1..].iter().map(|&v| v as i32));
    RefLine::new(block_size, above, left)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockOrigin {
    pub image: u32,
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

/// Zero-centered (reference, target) pair for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub ref_vector: Vec<f64>,
    pub target: Vec<f64>,
    /// Mean of the reference samples before centering.
    pub ref_mean: f64,
    pub origin: BlockOrigin,
    pub group_id: u32,
}

impl TrainSample {
    pub fn block_size(&self) -> usize {
        self.origin.size as usize
    }

    /// Original block pixels recovered from the centered target.
    pub fn original_block(&self) -> Vec<u8> {
        self.target
            .iter()
            .map(|t| libm::round(t + self.ref_mean).clamp(0.0, 255.0) as u8)
            .collect()
    }
}

impl Example for TrainSample {
    fn input(&self) -> &[f64] {
        &self.ref_vector
    }
    fn target(&self) -> &[f64] {
        &self.target
    }
}

/// References from `reference`, target pixels from `source`.
///
/// Passing a reconstructed plane as `reference` emulates coding noise in the
/// references while keeping the original pixels as the target.
pub fn extract_sample_with(
    source: &Plane,
    reference: &Plane,
    x: usize,
    y: usize,
    block_size: usize,
    ref_lines: usize,
) -> Result<TrainSample> {
    check_block_size(block_size)?;
    if ref_lines == 0 {
        return Err(Error::Config("ref_lines must be >= 1".into()));
    }
    if (source.width, source.height) != (reference.width, reference.height) {
        return Err(Error::Usage("reference plane size differs from source plane".into()));
    }
    let block = source.block(x, y, block_size)?;
    let refs = gather_references(reference, x, y, block_size, ref_lines);
    let ref_mean = refs.iter().map(|&v| v as f64).sum::<f64>() / refs.len() as f64;
    Ok(TrainSample {
        ref_vector: refs.iter().map(|&v| v as f64 - ref_mean).collect(),
        target: block.iter().map(|&v| v as f64 - ref_mean).collect(),
        ref_mean,
        origin: BlockOrigin {
            image: 0,
            x: x as u32,
            y: y as u32,
            size: block_size as u32,
        },
        group_id: 0,
    })
}

pub fn extract_sample(plane: &Plane, x: usize, y: usize, block_size: usize, ref_lines: usize) -> Result<TrainSample> {
    extract_sample_with(plane, plane, x, y, block_size, ref_lines)
}

/// A TU inside a PU, offsets relative to the PU origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TuRect {
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl TuRect {
    pub const fn new(x: u32, y: u32, size: u32) -> Self {
        TuRect { x, y, size }
    }
}

/// How a PU is divided into TUs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tiling {
    /// All TUs of one size.
    Uniform(usize),
    /// The mixed 64×64 quadtree of one 32×32, eight 16×16, fourteen 8×8 and
    /// eight 4×4 TUs.
    Mixed64,
    Custom(Vec<TuRect>),
}

impl Tiling {
    /// Parses `uniform-<N>`, `<N>` or `mixed64`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mixed64") {
            return Ok(Tiling::Mixed64);
        }
        let n = s.strip_prefix("uniform-").unwrap_or(s);
        let n = n
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("unknown tiling '{s}' (expected uniform-<N> or mixed64)")))?;
        check_block_size(n)?;
        Ok(Tiling::Uniform(n))
    }

    pub fn name(&self) -> alloc::string::String {
        match self {
            Tiling::Uniform(n) => format!("uniform-{n}"),
            Tiling::Mixed64 => "mixed64".into(),
            Tiling::Custom(t) => format!("custom-{}", t.len()),
        }
    }

    /// TUs in z-scan order, checked to tile the PU exactly.
    pub fn tus(&self, pu_size: usize) -> Result<Vec<TuRect>> {
        let tus = match self {
            Tiling::Uniform(n) => {
                check_block_size(*n)?;
                if pu_size == 0 || !pu_size.is_multiple_of(*n) {
                    return Err(Error::Config(format!("uniform {n}x{n} TUs cannot tile a {pu_size}x{pu_size} PU")));
                }
                let mut out = Vec::new();
                z_order(0, 0, pu_size as u32, *n as u32, &mut out);
                out
            }
            Tiling::Mixed64 => {
                if pu_size != 64 {
                    return Err(Error::Config(format!("mixed64 tiling needs a 64x64 PU, got {pu_size}")));
                }
                mixed64()
            }
            Tiling::Custom(t) => t.clone(),
        };
        validate_tiling(pu_size, &tus)?;
        Ok(tus)
    }
}

fn z_order(x: u32, y: u32, size: u32, leaf: u32, out: &mut Vec<TuRect>) {
    if size == leaf {
        out.push(TuRect::new(x, y, size));
        return;
    }
    let h = size / 2;
    for (qx, qy) in [(0, 0), (h, 0), (0, h), (h, h)] {
        z_order(x + qx, y + qy, h, leaf, out);
    }
}

fn mixed64() -> Vec<TuRect> {
    let mut out = vec![TuRect::new(0, 0, 32)];
    z_order(32, 0, 32, 16, &mut out);
    z_order(0, 32, 32, 16, &mut out);
    // Bottom-right quadrant: all 8×8, with the first two 8×8s split to 4×4.
    z_order(32, 32, 8, 4, &mut out);
    z_order(40, 32, 8, 4, &mut out);
    out.push(TuRect::new(32, 40, 8));
    out.push(TuRect::new(40, 40, 8));
    for (x, y) in [(48, 32), (32, 48), (48, 48)] {
        z_order(x, y, 16, 8, &mut out);
    }
    out
}

/// Checks TU sizes, bounds, overlap and full coverage.
pub fn validate_tiling(pu_size: usize, tus: &[TuRect]) -> Result<()> {
    let mut covered = vec![false; pu_size * pu_size];
    for tu in tus {
        check_block_size(tu.size as usize)?;
        let (x, y, s) = (tu.x as usize, tu.y as usize, tu.size as usize);
        if x + s > pu_size || y + s > pu_size {
            return Err(Error::Config(format!("TU {s}x{s} at ({x}, {y}) leaves the {pu_size}x{pu_size} PU")));
        }
        for row in y..y + s {
            for cell in &mut covered[row * pu_size + x..row * pu_size + x + s] {
                if *cell {
                    return Err(Error::Config(format!("TU at ({x}, {y}) overlaps another TU")));
                }
                *cell = true;
            }
        }
    }
    if covered.iter().any(|&c| !c) {
        return Err(Error::Config(format!("tiling does not cover the {pu_size}x{pu_size} PU")));
    }
    Ok(())
}

/// PUs sharing one prediction mode; `members[i]` is the sample of `tus[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionGroup {
    pub id: u32,
    pub image: u32,
    pub pu_x: u32,
    pub pu_y: u32,
    pub pu_size: u32,
    /// TU rectangles with absolute plane coordinates.
    pub tus: Vec<TuRect>,
    pub members: Vec<usize>,
}

impl PredictionGroup {
    pub fn area(&self) -> usize {
        self.tus.iter().map(|t| (t.size * t.size) as usize).sum()
    }
}

/// PU grid over the plane with `stride` spacing; partial PUs at the right
/// and bottom edges are cropped. `members` is left empty.
pub fn build_groups(plane: &Plane, pu_size: usize, tiling: &Tiling, stride: usize) -> Result<Vec<PredictionGroup>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let local = tiling.tus(pu_size)?;
    let mut out = Vec::new();
    if plane.width < pu_size || plane.height < pu_size {
        return Ok(out);
    }
    for py in (0..=plane.height - pu_size).step_by(stride) {
        for px in (0..=plane.width - pu_size).step_by(stride) {
            out.push(PredictionGroup {
                id: out.len() as u32,
                image: 0,
                pu_x: px as u32,
                pu_y: py as u32,
                pu_size: pu_size as u32,
                tus: local
                    .iter()
                    .map(|t| TuRect::new(px as u32 + t.x, py as u32 + t.y, t.size))
                    .collect(),
                members: Vec::new(),
            });
        }
    }
    Ok(out)
}

/// Keep mask of the complexity filter for units `(image id, mse)`.
///
/// Per image, `mean` is the average unit MSE and a unit is kept iff
/// `mse < 2·mean`; when `mean == 0` the comparison is non-strict.
pub fn complexity_filter(units: &[(u32, f64)]) -> Vec<bool> {
    let mut per_image: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for &(img, mse) in units {
        let e = per_image.entry(img).or_insert((0.0, 0));
        e.0 += mse;
        e.1 += 1;
    }
    units
        .iter()
        .map(|&(img, mse)| {
            let (sum, count) = per_image[&img];
            let threshold = 2.0 * sum / count as f64;
            if threshold == 0.0 {
                mse <= threshold
            } else {
                mse < threshold
            }
        })
        .collect()
}

/// Dataset configuration for extraction from planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractConfig {
    pub ref_lines: usize,
    pub pu_size: usize,
    pub tiling: Tiling,
    pub stride: usize,
    pub filter: bool,
}

impl ExtractConfig {
    /// Independent `N×N` blocks on an `N` grid.
    pub fn blocks(block_size: usize, ref_lines: usize) -> Self {
        ExtractConfig {
            ref_lines,
            pu_size: block_size,
            tiling: Tiling::Uniform(block_size),
            stride: block_size,
            filter: false,
        }
    }
}

/// Samples and the groups that tie them together.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ref_lines: usize,
    /// Block sizes present in the file header, ascending.
    pub block_sizes: Vec<usize>,
    pub samples: Vec<TrainSample>,
    pub groups: Vec<PredictionGroup>,
}

impl Dataset {
    pub fn empty(ref_lines: usize) -> Self {
        Dataset {
            ref_lines,
            block_sizes: Vec::new(),
            samples: Vec::new(),
            groups: Vec::new(),
        }
    }

    /// Extracts every PU of every plane, ordered by (image, y, x).
    ///
    /// `references`, when given, supplies one reconstructed plane per source
    /// plane for the reference samples.
    pub fn extract(planes: &[Plane], references: Option<&[Plane]>, cfg: &ExtractConfig) -> Result<Self> {
        if let Some(r) = references {
            if r.len() != planes.len() {
                return Err(Error::Usage("one reference plane per source plane required".into()));
            }
        }
        let mut ds = Dataset::empty(cfg.ref_lines);
        let mut unit_mse = Vec::new();
        for (img, plane) in planes.iter().enumerate() {
            let reference = references.map_or(plane, |r| &r[img]);
            for mut group in build_groups(plane, cfg.pu_size, &cfg.tiling, cfg.stride)? {
                group.image = img as u32;
                group.id = ds.groups.len() as u32;
                let mut base_sse = 0u64;
                for tu in &group.tus {
                    let (x, y, n) = (tu.x as usize, tu.y as usize, tu.size as usize);
                    let mut s = extract_sample_with(plane, reference, x, y, n, cfg.ref_lines)?;
                    s.origin.image = img as u32;
                    s.group_id = group.id;
                    if cfg.filter {
                        let block: Vec<i32> = plane.block(x, y, n)?.iter().map(|&v| v as i32).collect();
                        let refs = baseline_refs(reference, x, y, n)?;
                        base_sse += baseline::best_baseline_mode(&block, &refs)?.1;
                    }
                    group.members.push(ds.samples.len());
                    ds.samples.push(s);
                }
                unit_mse.push((img as u32, base_sse as f64 / group.area() as f64));
                ds.groups.push(group);
            }
        }
        if cfg.filter {
            let keep = complexity_filter(&unit_mse);
            ds = ds.retain_groups(&keep);
        }
        ds.refresh_block_sizes();
        Ok(ds)
    }

    /// Keeps the groups whose mask entry is true, renumbering groups and
    /// samples in order.
    pub fn retain_groups(self, keep: &[bool]) -> Self {
        let mut out = Dataset::empty(self.ref_lines);
        let mut samples: Vec<Option<TrainSample>> = self.samples.into_iter().map(Some).collect();
        for (group, &k) in self.groups.into_iter().zip(keep) {
            if !k {
                continue;
            }
            let id = out.groups.len() as u32;
            let mut g = group;
            g.id = id;
            for m in &mut g.members {
                let mut s = samples[*m].take().expect("sample belongs to one group");
                s.group_id = id;
                *m = out.samples.len();
                out.samples.push(s);
            }
            out.groups.push(g);
        }
        out.block_sizes = self.block_sizes;
        out.refresh_block_sizes();
        out
    }

    /// Appends another dataset, renumbering its groups and samples.
    pub fn append(&mut self, other: Dataset) -> Result<()> {
        if other.ref_lines != self.ref_lines {
            return Err(Error::Usage(format!(
                "cannot merge datasets with {} and {} reference lines",
                self.ref_lines, other.ref_lines
            )));
        }
        let sample_base = self.samples.len();
        let group_base = self.groups.len() as u32;
        for mut s in other.samples {
            s.group_id += group_base;
            self.samples.push(s);
        }
        for mut g in other.groups {
            g.id += group_base;
            g.members.iter_mut().for_each(|m| *m += sample_base);
            self.groups.push(g);
        }
        self.refresh_block_sizes();
        Ok(())
    }

    pub fn refresh_block_sizes(&mut self) {
        for s in &self.samples {
            let n = s.block_size();
            if !self.block_sizes.contains(&n) {
                self.block_sizes.push(n);
            }
        }
        self.block_sizes.sort_unstable();
    }

    /// Structural checks: sample shapes, group membership and ids.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            let n = s.block_size();
            check_block_size(n)?;
            if !self.block_sizes.contains(&n) {
                return Err(Error::Usage(format!("sample {i} has undeclared block size {n}")));
            }
            if s.ref_vector.len() != input_dim(n, self.ref_lines) {
                return Err(Error::shape("sample reference vector", input_dim(n, self.ref_lines), s.ref_vector.len()));
            }
            if s.target.len() != n * n {
                return Err(Error::shape("sample target", n * n, s.target.len()));
            }
            if s.group_id as usize >= self.groups.len() {
                return Err(Error::Usage(format!("sample {i} references missing group {}", s.group_id)));
            }
        }
        let mut owner = vec![false; self.samples.len()];
        for (gi, g) in self.groups.iter().enumerate() {
            if g.id as usize != gi {
                return Err(Error::Usage(format!("group at position {gi} has id {}", g.id)));
            }
            if g.members.len() != g.tus.len() {
                return Err(Error::Usage(format!("group {gi} has {} TUs but {} members", g.tus.len(), g.members.len())));
            }
            for &m in &g.members {
                if m >= self.samples.len() || owner[m] || self.samples[m].group_id as usize != gi {
                    return Err(Error::Usage(format!("group {gi} has inconsistent member {m}")));
                }
                owner[m] = true;
            }
        }
        Ok(())
    }

    pub fn samples_of<'a>(&'a self, group: &'a PredictionGroup) -> impl Iterator<Item = &'a TrainSample> + 'a {
        group.members.iter().map(move |&m| &self.samples[m])
    }
}
