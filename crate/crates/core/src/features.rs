//! `QFT1` feature files: little-endian, `magic | u32 utterances | u32 dim |
//! u32 frames per utterance... | f32 frames`.

use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURES_MAGIC: &[u8; 4] = b"QFT1";

/// Utterances of `[frames][dim]` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub utterances: Vec<Vec<Vec<f32>>>,
}

impl FeatureSet {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::CorruptFeatures("dimension is zero".into()));
        }
        for (u, utt) in self.utterances.iter().enumerate() {
            if utt.is_empty() {
                return Err(Error::CorruptFeatures(format!("utterance {u} has no frames")));
            }
            if let Some(f) = utt.iter().position(|f| f.len() != self.dim) {
                return Err(Error::CorruptFeatures(format!(
                    "utterance {u} frame {f} has {} values, expected {}",
                    utt[f].len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let frames: usize = self.utterances.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(12 + 4 * self.utterances.len() + 4 * frames * self.dim);
        out.extend_from_slice(FEATURES_MAGIC);
        out.extend_from_slice(&u32_of(self.utterances.len())?.to_le_bytes());
        out.extend_from_slice(&u32_of(self.dim)?.to_le_bytes());
        for u in &self.utterances {
            out.extend_from_slice(&u32_of(u.len())?.to_le_bytes());
        }
        for v in self.utterances.iter().flatten().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != FEATURES_MAGIC {
            return Err(Error::CorruptFeatures("bad magic, expected QFT1".into()));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let frames = (0..count).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let total: usize = frames.iter().sum();
        let expected = total
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptFeatures("header sizes overflow".into()))?;
        if bytes.len() - r.pos != expected {
            return Err(Error::CorruptFeatures(format!(
                "payload has {} bytes, header implies {expected}",
                bytes.len() - r.pos
            )));
        }
        let utterances = frames
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| (0..dim).map(|_| r.f32()).collect::<Result<Vec<f32>>>())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let set = FeatureSet { dim, utterances };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::CorruptFeatures(format!("{n} does not fit the u32 header")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::CorruptFeatures("file truncated".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
