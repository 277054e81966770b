//! Trained-model bundle: forward surrogate, encoder, decoder and latent
//! bank in one checksummed binary file.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::ForwardParams;
use crate::inference::LatentBank;
use crate::numerics::persist::{decode_mlp, encode_mlp, Reader};
use crate::numerics::Matrix;
use crate::vae::VaeParams;

pub const BUNDLE_MAGIC: &[u8; 8] = b"SLVAEBND";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub forward: ForwardParams,
    pub vae: VaeParams,
    pub bank: LatentBank,
}

impl ModelBundle {
    pub fn num_nodes(&self) -> usize {
        self.vae.num_nodes()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.forward.depth as u32).to_le_bytes());
        out.extend_from_slice(&(self.vae.latent_dim as u32).to_le_bytes());
        for block in [&self.forward.mlp, &self.vae.encoder, &self.vae.decoder] {
            out.extend_from_slice(&encode_mlp(block));
        }
        out.extend_from_slice(&(self.bank.samples.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.bank.source_count as u64).to_le_bytes());
        for v in self.bank.samples.as_slice().iter().chain(&self.bank.z_bar) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.take(8)? != BUNDLE_MAGIC {
            return Err(Error::Format("not a model bundle".into()));
        }
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported bundle version {version}")));
        }
        let depth = r.u32()? as usize;
        let k = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(3);
        let mut pos = r.position();
        for _ in 0..3 {
            let (p, used) = decode_mlp(&buf[pos..])?;
            blocks.push(p);
            pos += used;
        }
        let mut r = Reader::new(buf);
        r.take(pos)?;
        let rows = r.u32()? as usize;
        let source_count = r.u64()? as usize;
        let samples = Matrix::from_vec(rows, k, r.f64s(rows * k)?)?;
        let z_bar = r.f64s(k)?;
        let end = r.position();
        if Sha256::digest(&buf[..end]).as_slice() != r.take(32)? {
            return Err(Error::Format("bundle checksum mismatch".into()));
        }
        let decoder = blocks.pop().unwrap();
        let encoder = blocks.pop().unwrap();
        let fwd_mlp = blocks.pop().unwrap();
        let forward = ForwardParams { mlp: fwd_mlp, depth };
        forward.validate()?;
        let vae = VaeParams {
            encoder,
            decoder,
            latent_dim: k,
        };
        vae.validate()?;
        Ok(ModelBundle {
            forward,
            vae,
            bank: LatentBank {
                samples,
                z_bar,
                source_count,
            },
        })
    }

    /// Write to `path`; returns the hex SHA-256 of the file.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.encode();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn sample() -> ModelBundle {
        let mut rng = rng_from(11);
        ModelBundle {
            forward: ForwardParams::init(3, 6, &mut rng),
            vae: VaeParams::init(9, 2, 5, &mut rng),
            bank: LatentBank {
                samples: Matrix::from_vec(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap(),
                z_bar: vec![0.01, -0.02],
                source_count: 7,
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let b = sample();
        let back = ModelBundle::decode(&b.encode()).unwrap();
        assert_eq!(b, back);
        assert_eq!(back.encode(), b.encode());
    }

    #[test]
    fn corruption_and_truncation_rejected() {
        let bytes = sample().encode();
        let mut bad = bytes.clone();
        let mid = bad.len() - 40;
        bad[mid] ^= 1;
        assert!(ModelBundle::decode(&bad).is_err());
        assert!(ModelBundle::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(ModelBundle::decode(b"SLVAEMLP").is_err());
    }
}
