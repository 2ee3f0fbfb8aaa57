//! `.dcds` dataset files, little-endian.
//!
//! ```text
//! "DCDS"  u32 version  u32 L  u32 layout version
//! u32 S, then S block sizes (u32)   u64 sample count   u64 group count
//! per sample: u32 N, image, x, y, group; f64 ref_mean; f64 ref_vector[4NL+L²]; f64 target[N²]
//! per group:  u32 id, image, pu_x, pu_y, pu_size, T; T × (u32 x, y, size); T × u64 member
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use dcdnn_core::dataset::{BlockOrigin, Dataset, PredictionGroup, TrainSample, TuRect, LAYOUT_VERSION};
use dcdnn_core::fcnet::{check_block_size, input_dim};

use crate::error::{io_at, truncated, Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"DCDS";
pub const DATASET_VERSION: u32 = 1;

/// Serializes a dataset. Samples must use the declared block sizes and `L`.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    let w = &mut out;
    let put = |w: &mut Vec<u8>, v: u32| w.write_u32::<LE>(v).expect("writing to a Vec");
    put(w, DATASET_VERSION);
    put(w, ds.ref_lines as u32);
    put(w, LAYOUT_VERSION);
    put(w, ds.block_sizes.len() as u32);
    for &n in &ds.block_sizes {
        put(w, n as u32);
    }
    w.write_u64::<LE>(ds.samples.len() as u64).expect("writing to a Vec");
    w.write_u64::<LE>(ds.groups.len() as u64).expect("writing to a Vec");
    for s in &ds.samples {
        let o = s.origin;
        for v in [o.size, o.image, o.x, o.y, s.group_id] {
            put(w, v);
        }
        w.write_f64::<LE>(s.ref_mean).expect("writing to a Vec");
        for &v in s.ref_vector.iter().chain(&s.target) {
            w.write_f64::<LE>(v).expect("writing to a Vec");
        }
    }
    for g in &ds.groups {
        for v in [g.id, g.image, g.pu_x, g.pu_y, g.pu_size, g.tus.len() as u32] {
            put(w, v);
        }
        for t in &g.tus {
            for v in [t.x, t.y, t.size] {
                put(w, v);
            }
        }
        for &m in &g.members {
            w.write_u64::<LE>(m as u64).expect("writing to a Vec");
        }
    }
    Ok(out)
}

fn u32_of(r: &mut impl Read) -> Result<u32> {
    r.read_u32::<LE>().map_err(truncated("dataset"))
}

fn f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| r.read_f64::<LE>().map_err(truncated("dataset"))).collect()
}

pub fn decode_dataset(data: &[u8]) -> Result<Dataset> {
    let mut r = Cursor::new(data);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("dataset"))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let version = u32_of(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {version} is not supported by this build (expects version {DATASET_VERSION})"
        )));
    }
    let ref_lines = u32_of(&mut r)? as usize;
    let layout = u32_of(&mut r)?;
    if layout != LAYOUT_VERSION {
        return Err(Error::Format(format!(
            "dataset uses reference layout version {layout}, this build uses {LAYOUT_VERSION}"
        )));
    }
    if ref_lines == 0 || ref_lines > 64 {
        return Err(Error::Format(format!("implausible reference line count {ref_lines}")));
    }
    let n_sizes = u32_of(&mut r)? as usize;
    if n_sizes > 4 {
        return Err(Error::Format(format!("dataset declares {n_sizes} block sizes")));
    }
    let mut block_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        let n = u32_of(&mut r)? as usize;
        check_block_size(n).map_err(|e| Error::Format(format!("dataset header: {e}")))?;
        block_sizes.push(n);
    }
    let n_samples = r.read_u64::<LE>().map_err(truncated("dataset"))? as usize;
    let n_groups = r.read_u64::<LE>().map_err(truncated("dataset"))? as usize;
    let remaining = data.len().saturating_sub(r.position() as usize);
    if n_samples > remaining || n_groups > remaining {
        return Err(Error::Format("truncated dataset".into()));
    }
    let mut ds = Dataset {
        ref_lines,
        block_sizes,
        samples: Vec::with_capacity(n_samples),
        groups: Vec::with_capacity(n_groups),
    };
    for i in 0..n_samples {
        let size = u32_of(&mut r)?;
        let n = size as usize;
        if !ds.block_sizes.contains(&n) {
            return Err(Error::Format(format!("sample {i} has undeclared block size {n}")));
        }
        let (image, x, y, group_id) = (u32_of(&mut r)?, u32_of(&mut r)?, u32_of(&mut r)?, u32_of(&mut r)?);
        let ref_mean = r.read_f64::<LE>().map_err(truncated("dataset"))?;
        ds.samples.push(TrainSample {
            ref_vector: f64s(&mut r, input_dim(n, ref_lines))?,
            target: f64s(&mut r, n * n)?,
            ref_mean,
            origin: BlockOrigin { image, x, y, size },
            group_id,
        });
    }
    for _ in 0..n_groups {
        let (id, image, pu_x, pu_y, pu_size) =
            (u32_of(&mut r)?, u32_of(&mut r)?, u32_of(&mut r)?, u32_of(&mut r)?, u32_of(&mut r)?);
        let t = u32_of(&mut r)? as usize;
        if t > 1024 {
            return Err(Error::Format(format!("group {id} declares {t} TUs")));
        }
        let mut tus = Vec::with_capacity(t);
        for _ in 0..t {
            tus.push(TuRect::new(u32_of(&mut r)?, u32_of(&mut r)?, u32_of(&mut r)?));
        }
        let members = (0..t)
            .map(|_| r.read_u64::<LE>().map(|m| m as usize).map_err(truncated("dataset")))
            .collect::<Result<_>>()?;
        ds.groups.push(PredictionGroup {
            id,
            image,
            pu_x,
            pu_y,
            pu_size,
            tus,
            members,
        });
    }
    if r.position() as usize != data.len() {
        return Err(Error::Format(format!("{} trailing bytes after dataset", data.len() - r.position() as usize)));
    }
    ds.validate().map_err(|e| Error::Format(format!("inconsistent dataset: {e}")))?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    fs::write(path, bytes).map_err(io_at(path))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let data = fs::read(path).map_err(io_at(path))?;
    decode_dataset(&data).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcdnn_core::dataset::{ExtractConfig, Plane, Tiling};
    use dcdnn_core::rng::SeededRng;

    fn dataset() -> Dataset {
        let mut rng = SeededRng::new(4);
        let plane = Plane::new(64, 64, (0..4096).map(|_| rng.below(256) as u8).collect()).unwrap();
        let cfg = ExtractConfig {
            ref_lines: 2,
            pu_size: 64,
            tiling: Tiling::Mixed64,
            stride: 64,
            filter: false,
        };
        Dataset::extract(&[plane], None, &cfg).unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = dataset();
        assert_eq!(ds.block_sizes, [4, 8, 16, 32]);
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn undeclared_size_is_usage_error() {
        let mut ds = dataset();
        ds.block_sizes.retain(|&n| n != 16);
        assert!(matches!(encode_dataset(&ds), Err(Error::Core(dcdnn_core::Error::Usage(_)))));
    }

    #[test]
    fn truncation_and_version() {
        let bytes = encode_dataset(&dataset()).unwrap();
        for cut in [0, 5, 17, 40, bytes.len() / 3, bytes.len() - 1] {
            assert!(matches!(decode_dataset(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut v = bytes;
        v[4] = 2;
        assert!(decode_dataset(&v).unwrap_err().to_string().contains("version 2"));
    }
}
