//! Named-tensor container shared by checkpoints and attention records.
//!
//! Layout, all integers unsigned 32-bit little-endian:
//! magic `S2TP`, version, config length + UTF-8 config text, tensor count,
//! then per tensor: name length + UTF-8 name, rank, dims, and `prod(dims)`
//! little-endian `f32` values in row-major order.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"S2TP";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Configuration snapshot (`key = value` text).
    pub config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, len_u32(self.config.len()));
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, len_u32(self.tensors.len()));
        for (name, t) in &self.tensors {
            put_u32(&mut out, len_u32(name.len()));
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, len_u32(t.shape().len()));
            for &d in t.shape() {
                put_u32(&mut out, len_u32(d));
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Incompatible(format!("format version {version}, expected {VERSION}")));
        }
        let config = r.string("config")?;
        let count = r.u32("tensor count")? as usize;
        // every tensor needs at least its name length and rank
        if count > r.remaining() / 8 {
            return Err(Error::Format(format!("tensor count {count} exceeds file size")));
        }
        let mut names = BTreeSet::new();
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string("tensor name")?;
            if !names.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
            let rank = r.u32("rank")? as usize;
            if rank > MAX_RANK {
                return Err(Error::Format(format!("`{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel = 1usize;
            for _ in 0..rank {
                let d = r.u32("dimension")? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::Format(format!("`{name}` is too large")))?;
                shape.push(d);
            }
            let bytes = numel
                .checked_mul(4)
                .filter(|&b| b <= r.remaining())
                .ok_or_else(|| Error::Format(format!("`{name}` data runs past the end")))?;
            let data = r
                .take(bytes, "tensor data")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn len_u32(n: usize) -> u32 {
    u32::try_from(n).expect("sizes in the container fit in 32 bits")
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// Cross-attention output and weights of one example, for offline latent
/// selection.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    /// `n x d`.
    pub z: Tensor<f32>,
    /// `n x m`.
    pub a: Tensor<f32>,
    pub frame_mask: Vec<bool>,
}

impl AttentionRecord {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mask = self.frame_mask.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Checkpoint {
            config: String::new(),
            tensors: vec![
                ("Z".into(), self.z.clone()),
                ("A".into(), self.a.clone()),
                (
                    "frame_mask".into(),
                    Tensor::new(&[self.frame_mask.len()], mask).expect("sized by construction"),
                ),
            ],
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let get = |name: &str| c.tensor(name).ok_or_else(|| Error::Format(format!("record lacks `{name}`")));
        let (z, a, mask) = (get("Z")?, get("A")?, get("frame_mask")?);
        if z.rank() != 2 || a.rank() != 2 || mask.rank() != 1 {
            return Err(Error::Format("record tensors must be Z [n x d], A [n x m], frame_mask [m]".into()));
        }
        if z.rows() != a.rows() || a.cols() != mask.numel() || z.rows() == 0 {
            return Err(Error::Format(format!(
                "record shapes disagree: Z {:?}, A {:?}, frame_mask {:?}",
                z.shape(),
                a.shape(),
                mask.shape()
            )));
        }
        let frame_mask = mask
            .data()
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(Error::Format(format!("frame_mask entry {v} is not 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            z: z.clone(),
            a: a.clone(),
            frame_mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: "d_model = 4\n".into(),
            tensors: vec![
                ("w".into(), Tensor::new(&[2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, f32::MAX, -7.25]).unwrap()),
                ("b".into(), Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap()),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let c = sample();
        let bytes = c.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.config, c.config);
        for ((na, a), (nb, b)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..4], b"S2TP");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[12, 0, 0, 0]);
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = sample().encode();
        for cut in 0..bytes.len() {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = sample().encode();
        bytes[4] = 2;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Incompatible(_))));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn oversized_headers_do_not_allocate() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn record_round_trip_and_validation() {
        let rec = AttentionRecord {
            z: Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap(),
            a: Tensor::new(&[2, 3], vec![0.5, 0.5, 0.0, 0.2, 0.8, 0.0]).unwrap(),
            frame_mask: vec![true, true, false],
        };
        let c = Checkpoint::decode(&rec.to_checkpoint().encode()).unwrap();
        assert_eq!(AttentionRecord::from_checkpoint(&c).unwrap(), rec);
        let mut bad = rec.to_checkpoint();
        bad.tensors[2].1 = Tensor::new(&[3], vec![1.0, 0.5, 0.0]).unwrap();
        assert!(matches!(AttentionRecord::from_checkpoint(&bad), Err(Error::Format(_))));
        bad.tensors.pop();
        assert!(matches!(AttentionRecord::from_checkpoint(&bad), Err(Error::Format(_))));
    }
}
