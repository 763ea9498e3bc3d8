//! `RLNN` checkpoints: magic, version u32, layer count u32, input dimension
//! u32, then per layer width u32, activation u8, dropout f64, BN flag u8,
//! W row-major, b, and γ, β, running mean, running variance when BN is on.
//! Little-endian throughout.

use std::fs;
use std::path::Path;

use super::{Activation, BatchNorm, Layer, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RLNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, net.num_layers() as u32, net.input_dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in net.layers() {
        out.extend_from_slice(&(layer.spec.width as u32).to_le_bytes());
        out.push(layer.spec.activation.code());
        out.extend_from_slice(&layer.spec.dropout_rate.to_le_bytes());
        out.push(u8::from(layer.spec.batch_norm));
        put_f64s(&mut out, layer.w.data());
        put_f64s(&mut out, &layer.b);
        if let Some(bn) = &layer.bn {
            for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                put_f64s(&mut out, v);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                needed: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:02x?}")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_layers = r.u32()? as usize;
    let input_dim = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    let mut fan_in = input_dim;
    for _ in 0..n_layers {
        let width = r.u32()? as usize;
        let activation = Activation::from_code(r.u8()?)?;
        let dropout_rate = r.f64()?;
        let batch_norm = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad batch-norm flag {b}"))),
        };
        let w = Matrix::from_vec(fan_in, width, r.f64s(fan_in * width)?)?;
        let b = r.f64s(width)?;
        let bn = if batch_norm {
            Some(BatchNorm {
                gamma: r.f64s(width)?,
                beta: r.f64s(width)?,
                running_mean: r.f64s(width)?,
                running_var: r.f64s(width)?,
            })
        } else {
            None
        };
        layers.push(Layer {
            spec: LayerSpec {
                width,
                activation,
                dropout_rate,
                batch_norm,
            },
            w,
            b,
            bn,
        });
        fan_in = width;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Network::from_layers(input_dim, layers)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Network {
        let mut hidden = LayerSpec::relu(5);
        hidden.batch_norm = true;
        hidden.dropout_rate = 0.25;
        let mut net = Network::new(3, &[hidden, LayerSpec::linear(4), LayerSpec::softmax(2)], 11).unwrap();
        net.layer_mut(1).bn.as_mut().unwrap().running_var[2] = 0.3;
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = sample();
        let bytes = encode_checkpoint(&net);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_checkpoint(&back), bytes);
        let x = Matrix::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 0.3);
        assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn corruption_detected() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_checkpoint(&v2).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.rlnn");
        save_checkpoint(&sample(), &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), sample());
    }
}
