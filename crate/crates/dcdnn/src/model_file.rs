//! Binary model and bank files, little-endian.
//!
//! A model is
//!
//! ```text
//! "DCDN"  u32 version
//! u32 N   u32 L   u32 D   u32 hidden   u8 element type (0 = f64, 1 = f32)
//! u16 len + PRNG id bytes   u64 seed   u32 reference layout version
//! per layer: weights [out × in] row-major, bias [out], slopes [out] (hidden layers only)
//! ```
//!
//! A bank is `"DCDB"`, `u32 version`, `u32 K`, `u32 S` followed by `K × S`
//! models, the `S` block sizes of mode 0 first.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use dcdnn_core::dataset::LAYOUT_VERSION;
use dcdnn_core::fcnet::{input_dim, LayerParams, Mlp, Network};
use dcdnn_core::rng::{Generator, SeedInfo};
use dcdnn_core::trainer::ModeNets;

use crate::error::{io_at, truncated, Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DCDN";
pub const BANK_MAGIC: &[u8; 4] = b"DCDB";
pub const MODEL_VERSION: u32 = 1;
pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    F64,
    F32,
}

impl ElementType {
    fn tag(self) -> u8 {
        match self {
            ElementType::F64 => 0,
            ElementType::F32 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ElementType::F64),
            1 => Ok(ElementType::F32),
            t => Err(Error::Format(format!("unknown element type tag {t}"))),
        }
    }
}

fn put_values(out: &mut Vec<u8>, values: &[f64], elem: ElementType) {
    for &v in values {
        match elem {
            ElementType::F64 => out.write_f64::<LE>(v),
            ElementType::F32 => out.write_f32::<LE>(v as f32),
        }
        .expect("writing to a Vec");
    }
}

fn get_values(r: &mut impl Read, n: usize, elem: ElementType) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| match elem {
            ElementType::F64 => r.read_f64::<LE>(),
            ElementType::F32 => r.read_f32::<LE>().map(f64::from),
        })
        .collect::<std::io::Result<_>>()
        .map_err(truncated("model parameters"))
}

fn check_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(truncated(what))?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad {what} magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn check_version(r: &mut impl Read, want: u32, what: &str) -> Result<()> {
    let v = r.read_u32::<LE>().map_err(truncated(what))?;
    if v != want {
        return Err(Error::Format(format!(
            "{what} format version {v} is not supported by this build (expects version {want})"
        )));
    }
    Ok(())
}

pub fn encode_network(net: &Network, elem: ElementType, out: &mut Vec<u8>) {
    out.extend_from_slice(MODEL_MAGIC);
    let mut header = Vec::new();
    for v in [MODEL_VERSION, net.block_size as u32, net.ref_lines as u32, net.depth() as u32, net.hidden_dim() as u32] {
        header.write_u32::<LE>(v).expect("writing to a Vec");
    }
    header.push(elem.tag());
    let id = net.seed_info.generator.id().as_bytes();
    header.write_u16::<LE>(id.len() as u16).expect("writing to a Vec");
    header.extend_from_slice(id);
    header.write_u64::<LE>(net.seed_info.seed).expect("writing to a Vec");
    header.write_u32::<LE>(LAYOUT_VERSION).expect("writing to a Vec");
    out.extend_from_slice(&header);
    for layer in &net.mlp.layers {
        put_values(out, &layer.weights, elem);
        put_values(out, &layer.bias, elem);
        if let Some(s) = &layer.prelu_slopes {
            put_values(out, s, elem);
        }
    }
}

pub fn decode_network(r: &mut impl Read) -> Result<Network> {
    check_magic(r, MODEL_MAGIC, "model")?;
    check_version(r, MODEL_VERSION, "model")?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.read_u32::<LE>().map_err(truncated("model header"))? as usize;
    }
    let [n, l, depth, hidden] = dims;
    let elem = ElementType::from_tag(r.read_u8().map_err(truncated("model header"))?)?;
    let id_len = r.read_u16::<LE>().map_err(truncated("model header"))? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(truncated("model header"))?;
    let id = String::from_utf8(id).map_err(|_| Error::Format("PRNG id is not UTF-8".into()))?;
    let generator = Generator::from_id(&id).ok_or_else(|| Error::Format(format!("unknown PRNG {id:?}")))?;
    let seed = r.read_u64::<LE>().map_err(truncated("model header"))?;
    let layout = r.read_u32::<LE>().map_err(truncated("model header"))?;
    if layout != LAYOUT_VERSION {
        return Err(Error::Format(format!(
            "model uses reference layout version {layout}, this build uses {LAYOUT_VERSION}"
        )));
    }
    dcdnn_core::fcnet::check_block_size(n).map_err(|e| Error::Format(format!("model header: {e}")))?;
    if l == 0 || l > 64 || (depth > 0 && hidden == 0) || depth > 64 || hidden > 1 << 16 {
        return Err(Error::Format(format!("implausible model shape L={l} D={depth} hidden={hidden}")));
    }
    let mut layers = Vec::with_capacity(depth + 1);
    let mut fan_in = input_dim(n, l);
    for i in 0..=depth {
        let activated = i < depth;
        let width = if activated { hidden } else { n * n };
        let mut layer = LayerParams::zeros(fan_in, width, activated);
        layer.weights = get_values(r, fan_in * width, elem)?;
        layer.bias = get_values(r, width, elem)?;
        if activated {
            layer.prelu_slopes = Some(get_values(r, width, elem)?);
        }
        layers.push(layer);
        fan_in = width;
    }
    let mlp = Mlp::from_layers(layers).map_err(|e| Error::Format(format!("model body: {e}")))?;
    Ok(Network::new(n, l, mlp, SeedInfo { generator, seed })?)
}

pub fn encode_bank(bank: &[ModeNets], elem: ElementType) -> Result<Vec<u8>> {
    let sizes = bank.first().map(ModeNets::block_sizes).unwrap_or_default();
    if bank.iter().any(|m| m.block_sizes() != sizes) {
        return Err(dcdnn_core::Error::Usage("modes of a bank cover different block sizes".into()).into());
    }
    let mut out = Vec::new();
    out.extend_from_slice(BANK_MAGIC);
    for v in [BANK_VERSION, bank.len() as u32, sizes.len() as u32] {
        out.write_u32::<LE>(v).expect("writing to a Vec");
    }
    for mode in bank {
        for net in &mode.nets {
            encode_network(net, elem, &mut out);
        }
    }
    Ok(out)
}

pub fn decode_bank(data: &[u8]) -> Result<Vec<ModeNets>> {
    let mut r = Cursor::new(data);
    check_magic(&mut r, BANK_MAGIC, "bank")?;
    check_version(&mut r, BANK_VERSION, "bank")?;
    let k = r.read_u32::<LE>().map_err(truncated("bank header"))? as usize;
    let s = r.read_u32::<LE>().map_err(truncated("bank header"))? as usize;
    if s > 4 {
        return Err(Error::Format(format!("bank declares {s} block sizes per mode")));
    }
    let mut bank = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        let nets = (0..s).map(|_| decode_network(&mut r)).collect::<Result<Vec<_>>>()?;
        let mode = ModeNets::new(nets).map_err(|e| Error::Format(format!("bank: {e}")))?;
        if bank.first().is_some_and(|m: &ModeNets| m.block_sizes() != mode.block_sizes()) {
            return Err(Error::Format("bank modes cover different block sizes".into()));
        }
        bank.push(mode);
    }
    if (r.position() as usize) != data.len() {
        return Err(Error::Format(format!("{} trailing bytes after bank", data.len() - r.position() as usize)));
    }
    Ok(bank)
}

pub fn write_bank(bank: &[ModeNets], path: &Path) -> Result<()> {
    let bytes = encode_bank(bank, ElementType::F64)?;
    let mut f = fs::File::create(path).map_err(io_at(path))?;
    f.write_all(&bytes).map_err(io_at(path))
}

pub fn read_bank(path: &Path) -> Result<Vec<ModeNets>> {
    let data = fs::read(path).map_err(io_at(path))?;
    decode_bank(&data).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcdnn_core::fcnet::{init_network, NetConfig};

    fn net(n: usize, seed: u64) -> Network {
        let cfg = NetConfig {
            hidden_dim: 6,
            depth: 2,
            ref_lines: 2,
            ..NetConfig::for_block(n).unwrap()
        };
        init_network(&cfg, seed).unwrap()
    }

    fn bank() -> Vec<ModeNets> {
        (0..3).map(|k| ModeNets::new(vec![net(4, k), net(8, k + 10)]).unwrap()).collect()
    }

    #[test]
    fn network_round_trip() {
        let a = net(8, 3);
        let mut buf = Vec::new();
        encode_network(&a, ElementType::F64, &mut buf);
        assert_eq!(&buf[..4], b"DCDN");
        assert_eq!(decode_network(&mut Cursor::new(&buf)).unwrap(), a);
    }

    #[test]
    fn f32_round_trip_is_close() {
        let a = net(4, 5);
        let mut buf = Vec::new();
        encode_network(&a, ElementType::F32, &mut buf);
        let b = decode_network(&mut Cursor::new(&buf)).unwrap();
        for (x, y) in a.mlp.param_vec().iter().zip(b.mlp.param_vec()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn bank_round_trip() {
        let b = bank();
        let bytes = encode_bank(&b, ElementType::F64).unwrap();
        assert_eq!(decode_bank(&bytes).unwrap(), b);
        assert_eq!(bytes, encode_bank(&decode_bank(&bytes).unwrap(), ElementType::F64).unwrap());
    }

    #[test]
    fn bad_files() {
        let bytes = encode_bank(&bank(), ElementType::F64).unwrap();
        for cut in [0, 3, 10, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_bank(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_bank(&magic), Err(Error::Format(_))));
        let mut version = bytes.clone();
        version[4] = 9;
        let err = decode_bank(&version).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_bank(&extra).is_err());
    }
}
