//! Binary parameter blocks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SLVAEMLP"
//! version u32 (= 1)
//! layers  u32
//! per layer: in u32, out u32, activation u8
//! payload: per layer, weight (in*out f64, row-major) then bias (out f64)
//! sha256 of every preceding byte (32 bytes)
//! ```

use sha2::{Digest, Sha256};

use super::mlp::{Activation, Layer, MlpParams};
use super::tensor::Matrix;
use crate::error::{Error, Result};

pub const MLP_MAGIC: &[u8; 8] = b"SLVAEMLP";
pub const MLP_VERSION: u32 = 1;

pub fn encode_mlp(p: &MlpParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MLP_MAGIC);
    out.extend_from_slice(&MLP_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.layers().len() as u32).to_le_bytes());
    for l in p.layers() {
        out.extend_from_slice(&(l.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
        out.push(l.activation.tag());
    }
    for l in p.layers() {
        for v in l.weight.as_slice().iter().chain(l.bias.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated input: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Decode one block from the front of `buf`; returns the parameters and
/// the number of bytes consumed.
pub fn decode_mlp(buf: &[u8]) -> Result<(MlpParams, usize)> {
    let mut r = Reader::new(buf);
    if r.take(8)? != MLP_MAGIC {
        return Err(Error::Format("bad parameter block magic".into()));
    }
    let version = r.u32()?;
    if version != MLP_VERSION {
        return Err(Error::Format(format!("unsupported parameter version {version}")));
    }
    let n = r.u32()? as usize;
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        let i = r.u32()? as usize;
        let o = r.u32()? as usize;
        let a = Activation::from_tag(r.u8()?)
            .ok_or_else(|| Error::Format("unknown activation tag".into()))?;
        dims.push((i, o, a));
    }
    let mut layers = Vec::with_capacity(n);
    for (i, o, activation) in dims {
        let weight = Matrix::from_vec(i, o, r.f64s(i * o)?)?;
        let bias = Matrix::from_vec(1, o, r.f64s(o)?)?;
        layers.push(Layer {
            weight,
            bias,
            activation,
        });
    }
    let body_end = r.position();
    let stored = r.take(32)?;
    if Sha256::digest(&buf[..body_end]).as_slice() != stored {
        return Err(Error::Format("parameter block checksum mismatch".into()));
    }
    Ok((MlpParams::from_layers(layers)?, r.position()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), a in 1usize..6, b in 1usize..6, c in 1usize..4) {
            let p = MlpParams::init(
                &[a, b, c],
                &[Activation::Relu, Activation::Sigmoid],
                &mut rng_from(seed),
            );
            let bytes = encode_mlp(&p);
            let (q, used) = decode_mlp(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(q, p);
        }
    }

    #[test]
    fn corruption_detected() {
        let p = MlpParams::init(&[3, 2], &[Activation::Identity], &mut rng_from(1));
        let mut bytes = encode_mlp(&p);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(decode_mlp(&bytes).is_err());
        assert!(decode_mlp(&bytes[..10]).is_err());
    }
}
