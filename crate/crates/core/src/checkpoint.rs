//! Binary checkpoint format.
//!
//! All integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "CPFRNN\0\x01"
//! version    u32
//! config     u64 length + UTF-8 text
//! seed       u64
//! records    u64 count, then per record:
//!              u32 name length, name, u32 rank, rank x u64 dims,
//!              product(dims) x f64 values (row-major)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"CPFRNN\0\x01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub seed: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_version(VERSION)
    }

    fn to_bytes_with_version(&self, version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic header)".into(),
            ));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let len = r.len64()?;
        let config = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let seed = r.u64()?;
        let count = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.len64()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let data = r
                .take(n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            seed,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.saturating_add(n);
        if end > self.bytes.len() {
            return Err(Error::CheckpointTruncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: "model = rnn\n".into(),
            seed: 77,
            tensors: vec![
                (
                    "w".into(),
                    Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
                ),
                ("empty".into(), Tensor::zeros(&[0, 2])),
            ],
        }
    }

    #[test]
    fn round_trip_is_idempotent() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(
            back.get("w").unwrap().data()[1].to_bits(),
            (-0.0f64).to_bits()
        );
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = sample().to_bytes();
        let full = bytes.len();
        match Checkpoint::from_bytes(&bytes[..full - 3]).unwrap_err() {
            Error::CheckpointTruncated { expected, actual } => {
                assert_eq!(actual, full - 3);
                assert!(expected > actual);
            }
            e => panic!("{e}"),
        }
        let v2 = sample().to_bytes_with_version(2);
        match Checkpoint::from_bytes(&v2).unwrap_err() {
            Error::CheckpointVersion {
                found: 2,
                expected: 1,
            } => {}
            e => panic!("{e}"),
        }
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(values in proptest::collection::vec(any::<f64>(), 0..40), seed in any::<u64>()) {
            let c = Checkpoint {
                config: "seed = 1".into(),
                seed,
                tensors: vec![("x".into(), Tensor::new(vec![values.len()], values.clone()).unwrap())],
            };
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            let bits: Vec<u64> = back.tensors[0].1.data().iter().map(|v| v.to_bits()).collect();
            let expected: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, expected);
            prop_assert_eq!(back.seed, seed);
        }
    }
}
