//! Weights file format.
//!
//! Layout: magic `DRLW`, format version (u16 LE), tensor count (u32 LE),
//! then per tensor: name length (u16 LE) + UTF-8 name, rank (u8),
//! extents (u32 LE each), and the raw little-endian f32 payload. Rank 0
//! encodes a scalar with a single payload element. Round-trips are
//! bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelWeights, Tensor};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"DRLW";
pub const WEIGHTS_FORMAT_VERSION: u16 = 1;

#[derive(Debug)]
pub enum WeightsIoError {
    Io(io::Error),
    BadMagic { found: [u8; 4] },
    UnsupportedVersion { found: u16 },
    Truncated,
    NameNotUtf8,
    /// Count/extent fields describe something that cannot fit in memory.
    ImplausibleSize { what: &'static str, value: u64 },
    DuplicateName { name: String },
}

impl std::fmt::Display for WeightsIoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(e) => write!(f, "weights file I/O: {e}"),
            Self::BadMagic { found } => {
                write!(f, "not a weights file: magic {found:?} != {WEIGHTS_MAGIC:?}")
            }
            Self::UnsupportedVersion { found } => {
                write!(f, "unsupported weights format version {found}")
            }
            Self::Truncated => write!(f, "weights file ends mid-record"),
            Self::NameNotUtf8 => write!(f, "tensor name is not valid UTF-8"),
            Self::ImplausibleSize { what, value } => {
                write!(f, "implausible {what} in weights file: {value}")
            }
            Self::DuplicateName { name } => {
                write!(f, "weights file repeats tensor name `{name}`")
            }
        }
    }
}

impl std::error::Error for WeightsIoError {}

impl From<io::Error> for WeightsIoError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

const MAX_EXTENT: u64 = 1 << 28;

pub fn save_weights(weights: &ModelWeights<f32>, path: &Path) -> Result<(), WeightsIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(weights.len() as u32).to_le_bytes())?;
    for (name, tensor) in weights.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &extent in tensor.shape() {
            w.write_all(&(extent as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelWeights<f32>, WeightsIoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != WEIGHTS_MAGIC {
        return Err(WeightsIoError::BadMagic { found: magic });
    }
    let version = read_u16(&mut r)?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(WeightsIoError::UnsupportedVersion { found: version });
    }
    let count = read_u32(&mut r)?;
    let mut weights = ModelWeights::new();
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf)?;
        let name = String::from_utf8(name_buf).map_err(|_| WeightsIoError::NameNotUtf8)?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank[0] {
            let extent = u64::from(read_u32(&mut r)?);
            numel = numel.saturating_mul(extent);
            if numel > MAX_EXTENT {
                return Err(WeightsIoError::ImplausibleSize {
                    what: "tensor size",
                    value: numel,
                });
            }
            shape.push(extent as usize);
        }
        let mut data = vec![0.0f32; numel as usize];
        for v in data.iter_mut() {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b)?;
            *v = f32::from_le_bytes(b);
        }
        let tensor = Tensor::new(shape, data).map_err(|_| WeightsIoError::ImplausibleSize {
            what: "tensor extent",
            value: 0,
        })?;
        weights
            .push(name.clone(), tensor)
            .map_err(|_| WeightsIoError::DuplicateName { name })?;
    }
    Ok(weights)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), WeightsIoError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WeightsIoError::Truncated
        } else {
            WeightsIoError::Io(e)
        }
    })
}

fn read_u16(r: &mut impl Read) -> Result<u16, WeightsIoError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, WeightsIoError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_weights() -> ModelWeights<f32> {
        let mut w = ModelWeights::new();
        w.push(
            "enc.w",
            Tensor::new(vec![2, 3], vec![0.1, -0.2, 3.0e-7, 4.5, -0.0, f32::MIN_POSITIVE])
                .unwrap(),
        )
        .unwrap();
        w.push("enc.b", Tensor::new(vec![2], vec![0.5, -1.5]).unwrap())
            .unwrap();
        w.push_scalar("meta.epoch", 7.0).unwrap();
        w
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.drlw");
        let w = sample_weights();
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(w.len(), back.len());
        for ((n1, t1), (n2, t2)) in w.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits1, bits2);
        }
    }

    #[test]
    fn scalar_meta_round_trips_through_rank_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.drlw");
        save_weights(&sample_weights(), &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.scalar_value("meta.epoch"), Some(7.0));
        assert!(back.get("meta.epoch").unwrap().shape().is_empty());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.drlw");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00").unwrap();
        let err = load_weights(&path).unwrap_err();
        assert!(matches!(err, WeightsIoError::BadMagic { .. }));
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.drlw");
        save_weights(&sample_weights(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_weights(&path).unwrap_err();
        assert!(matches!(err, WeightsIoError::Truncated));
    }
}
