//! Binary checkpoint format.
//!
//! ```text
//! magic       8 bytes   "EBM3DNET"
//! version     u32
//! grid_w      u32       pooling cells across the width
//! grid_l      u32       pooling cells along the length
//! channels    u32
//! enc_width   u32
//! hidden      u32
//! n_layers    u32       followed by (out u32, in u32) per layer
//! n_tensors   u32
//! per tensor: name_len u16, name (utf-8), rows u32, cols u32, rows*cols f64
//! ```
//!
//! All integers and floats are little-endian. Tensors appear in declaration
//! order (`<layer>.weight`, `<layer>.bias`); biases are stored as `out × 1`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, EnergyNet, NetDims, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::pooling::PoolConfig;
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EBM3DNET";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_checkpoint<T: Real, W: Write>(net: &EnergyNet<T>, mut w: W) -> std::io::Result<()> {
    let d = net.dims();
    let mut buf = Vec::with_capacity(64 + net.param_count() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [d.pool.grid_w, d.pool.grid_l, d.channels, d.enc_width, d.hidden] {
        put_u32(&mut buf, v);
    }
    let shapes = d.layer_shapes();
    put_u32(&mut buf, shapes.len());
    for (o, i) in shapes {
        put_u32(&mut buf, o);
        put_u32(&mut buf, i);
    }
    put_u32(&mut buf, 2 * net.layers.len());
    for (name, layer) in LAYER_NAMES.iter().zip(&net.layers) {
        for (suffix, rows, cols, values) in [
            ("weight", layer.weight.nrows(), layer.weight.ncols(), layer.weight.as_slice().expect("layout")),
            ("bias", layer.bias.len(), 1, layer.bias.as_slice().expect("layout")),
        ] {
            let full = format!("{name}.{suffix}");
            buf.extend_from_slice(&(full.len() as u16).to_le_bytes());
            buf.extend_from_slice(full.as_bytes());
            put_u32(&mut buf, rows);
            put_u32(&mut buf, cols);
            for v in values {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
    }
    w.write_all(&buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<EnergyNet<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("reading checkpoint: {e}")))?;
    let mut rd = Reader { buf: &bytes, pos: 0 };
    if rd.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dims = NetDims {
        pool: PoolConfig::new(rd.u32()?, rd.u32()?)?,
        channels: rd.u32()?,
        enc_width: rd.u32()?,
        hidden: rd.u32()?,
    };
    dims.validate()?;
    let shapes = dims.layer_shapes();
    let n_layers = rd.u32()?;
    if n_layers != shapes.len() {
        return Err(Error::Format(format!("expected {} layers, found {n_layers}", shapes.len())));
    }
    for &(o, i) in &shapes {
        let (ro, ri) = (rd.u32()?, rd.u32()?);
        if (ro, ri) != (o, i) {
            return Err(Error::Format(format!("layer table ({ro}, {ri}) disagrees with dims ({o}, {i})")));
        }
    }
    let n_tensors = rd.u32()?;
    if n_tensors != 2 * shapes.len() {
        return Err(Error::Format(format!("expected {} tensors, found {n_tensors}", 2 * shapes.len())));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (name, &(o, i)) in LAYER_NAMES.iter().zip(&shapes) {
        let mut read_tensor = |suffix: &str, rows: usize, cols: usize| -> Result<Vec<T>> {
            let len = rd.u16()? as usize;
            let got = std::str::from_utf8(rd.take(len)?)
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
                .to_string();
            let want = format!("{name}.{suffix}");
            if got != want {
                return Err(Error::Format(format!("expected tensor {want}, found {got}")));
            }
            let (r, c) = (rd.u32()?, rd.u32()?);
            if (r, c) != (rows, cols) {
                return Err(Error::Format(format!("tensor {want} is {r}x{c}, expected {rows}x{cols}")));
            }
            (0..r * c).map(|_| rd.f64().map(T::lit)).collect()
        };
        let w = read_tensor("weight", o, i)?;
        let b = read_tensor("bias", o, 1)?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((o, i), w).expect("shape checked"),
            bias: Array1::from_vec(b),
        });
    }
    if rd.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let net = EnergyNet { dims, layers };
    if !net.all_finite() {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    Ok(net)
}

pub fn save_checkpoint<T: Real>(net: &EnergyNet<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<EnergyNet<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dims = NetDims {
            pool: PoolConfig::new(2, 2).unwrap(),
            channels: 3,
            enc_width: 4,
            hidden: 6,
        };
        let net = EnergyNet::<f64>::init(dims, 11).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back: EnergyNet<f64> = read_checkpoint(&bytes[..]).unwrap();
        let a = net.flat_params();
        let b = back.flat_params();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.dims(), net.dims());
    }

    #[test]
    fn rejects_corruption() {
        let net = EnergyNet::<f64>::init(NetDims { pool: PoolConfig::new(1, 1).unwrap(), channels: 1, enc_width: 1, hidden: 1 }, 0).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint::<f64, _>(&bad[..]).is_err());
        assert!(read_checkpoint::<f64, _>(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint::<f64, _>(&extra[..]).is_err());
    }
}
