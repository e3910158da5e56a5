//! `SPNGNET1` checkpoint format.
//!
//! All integers are little-endian `u32`, all parameters little-endian `f64`.
//!
//! ```text
//! magic          8 bytes  "SPNGNET1"
//! input rank R   u32
//! input extents  R x u32
//! layer count L  u32
//! L records      u32 byte length n, then n bytes:
//!                  u8 kind code, followed by the kind's u32 fields
//!                  0 dense      inputs, outputs
//!                  1 conv2d     in_channels, out_channels, kernel, stride
//!                  2 relu       -
//!                  3 maxpool2d  size, stride
//!                  4 avgpool2d  size, stride
//!                  5 flatten    -
//! parameters     per layer in order: weights then biases, f64 each;
//!                counts follow from the records (dense weights are
//!                [outputs][inputs], conv weights [out][in][k][k])
//! ```
//!
//! Nothing may follow the last parameter block.

use std::io::{Read, Write};
use std::path::Path;

use super::layer::LayerSpec;
use super::network::{Network, NetworkSpec};
use crate::error::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 8] = b"SPNGNET1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("checkpoint", format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_network(net: &Network) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(NETWORK_MAGIC);
    put_u32(&mut out, net.input_shape().len())?;
    for &d in net.input_shape() {
        put_u32(&mut out, d)?;
    }
    put_u32(&mut out, net.layers().len())?;
    for layer in net.layers() {
        let mut rec = vec![layer.kind().code()];
        let fields: Vec<usize> = match layer.spec {
            LayerSpec::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => vec![in_channels, out_channels, kernel, stride],
            LayerSpec::MaxPool2d { size, stride } | LayerSpec::AvgPool2d { size, stride } => vec![size, stride],
            LayerSpec::Relu | LayerSpec::Flatten => vec![],
        };
        for f in fields {
            put_u32(&mut rec, f)?;
        }
        put_u32(&mut out, rec.len())?;
        out.extend_from_slice(&rec);
    }
    for p in net.params() {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

fn decode_layer(rec: &[u8]) -> Result<LayerSpec> {
    let (&code, rest) = rec
        .split_first()
        .ok_or_else(|| Error::format("checkpoint", "empty layer record"))?;
    if rest.len() % 4 != 0 {
        return Err(Error::format("checkpoint", "layer record fields are not u32-aligned"));
    }
    let f: Vec<usize> = rest
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let want = match code {
        0 | 3 | 4 => 2,
        1 => 4,
        2 | 5 => 0,
        _ => return Err(Error::format("checkpoint", format!("unknown layer kind code {code}"))),
    };
    if f.len() != want {
        return Err(Error::format(
            "checkpoint",
            format!("layer kind {code} expects {want} fields, found {}", f.len()),
        ));
    }
    Ok(match code {
        0 => LayerSpec::Dense {
            inputs: f[0],
            outputs: f[1],
        },
        1 => LayerSpec::Conv2d {
            in_channels: f[0],
            out_channels: f[1],
            kernel: f[2],
            stride: f[3],
        },
        2 => LayerSpec::Relu,
        3 => LayerSpec::MaxPool2d { size: f[0], stride: f[1] },
        4 => LayerSpec::AvgPool2d { size: f[0], stride: f[1] },
        _ => LayerSpec::Flatten,
    })
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != NETWORK_MAGIC {
        return Err(Error::format("checkpoint", "bad magic, expected SPNGNET1"));
    }
    let rank = c.u32()?;
    let input_shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let count = c.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let n = c.u32()?;
        layers.push(decode_layer(c.take(n)?)?);
    }
    let mut net = Network::with_zero_params(&NetworkSpec { input_shape, layers })?;
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = c.f64()?;
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::format(
            "checkpoint",
            format!("{} trailing bytes", bytes.len() - c.pos),
        ));
    }
    Ok(net)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_network(net)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_network(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_network;

    fn cnn() -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![1, 8, 8],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { size: 2, stride: 2 },
                LayerSpec::AvgPool2d { size: 1, stride: 1 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 18, outputs: 3 },
            ],
        }
    }

    #[test]
    fn header_layout() {
        let net = build_network(&cnn(), 1).unwrap();
        let b = encode_network(&net).unwrap();
        assert_eq!(&b[..8], b"SPNGNET1");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
        // header + 8 bytes per parameter
        let params = net.param_count() * 8;
        let header = 8 + 4 + 12 + 4 + (4 + 17) + (4 + 1) + (4 + 9) * 2 + (4 + 1) + (4 + 9);
        assert_eq!(b.len(), header + params);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut net = build_network(&cnn(), 42).unwrap();
        net.set_param(0, -0.0);
        net.set_param(1, f64::MIN_POSITIVE / 2.0);
        let back = decode_network(&encode_network(&net).unwrap()).unwrap();
        let bits = |n: &Network| n.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&net), bits(&back));
        assert_eq!(net.spec(), back.spec());
    }

    #[test]
    fn rejects_corruption() {
        let net = build_network(&cnn(), 42).unwrap();
        let b = encode_network(&net).unwrap();
        assert!(decode_network(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode_network(&extra).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_network(&bad).is_err());
    }
}
