//! `FFN1` model files, little-endian:
//!
//! ```text
//! b"FFN1"
//! u32 input C, H, W
//! f32 output shift, output scale
//! u32 layer count
//! per layer: u8 tag, u32 a, u32 b, u32 c
//! per parameter tensor (layer order, weight then bias): u32 length, f32 values
//! ```
//!
//! Tags: 1 conv (kernel, stride, out), 2 relu, 3 maxpool, 4 global average
//! pool, 5 linear (out, 0, 0).

use std::path::Path;

use super::layers::{LayerSpec, NetworkConfig};
use super::network::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FFN1";

fn layer_words(l: &LayerSpec) -> (u8, [u32; 3]) {
    match *l {
        LayerSpec::Conv2d {
            kernel,
            stride,
            out_channels,
        } => (1, [kernel as u32, stride as u32, out_channels as u32]),
        LayerSpec::Relu => (2, [0; 3]),
        LayerSpec::MaxPool2 => (3, [0; 3]),
        LayerSpec::GlobalAvgPool => (4, [0; 3]),
        LayerSpec::Linear { out } => (5, [out as u32, 0, 0]),
    }
}

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for d in net.input_shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&net.out_shift.to_le_bytes());
    out.extend_from_slice(&net.out_scale.to_le_bytes());
    out.extend_from_slice(&(net.config.layers.len() as u32).to_le_bytes());
    for l in &net.config.layers {
        let (tag, words) = layer_words(l);
        out.push(tag);
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    for t in net.parameters() {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing FFN1 header".into()));
    }
    let input_shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let (shift, scale) = (r.f32()?, r.f32()?);
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let tag = r.take(1)?[0];
        let w = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        layers.push(match tag {
            1 => LayerSpec::Conv2d {
                kernel: w[0],
                stride: w[1],
                out_channels: w[2],
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::MaxPool2,
            4 => LayerSpec::GlobalAvgPool,
            5 => LayerSpec::Linear { out: w[0] },
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        });
    }
    let config = NetworkConfig { layers };
    let expected = Network::zeros(config.clone(), input_shape)?;
    let mut blobs = Vec::new();
    for t in expected.parameters() {
        let len = r.u32()? as usize;
        if len != t.len() {
            return Err(Error::Format(format!(
                "parameter blob of {len} values for shape {:?}",
                t.shape
            )));
        }
        let raw = r.take(4 * len)?;
        blobs.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Network::from_parts(config, input_shape, blobs, shift, scale)
}

pub fn write_checkpoint(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    decode_checkpoint(&std::fs::read(path)?)
}
