//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BGFG"            4 bytes magic
//! version           u32 (currently 1)
//! meta_len          u32, followed by that many bytes of UTF-8 JSON metadata
//! tensor_count      u32
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rank u32, dims u64 × rank
//!   dtype u8 (0 = f64), trainable u8 (0/1)
//!   payload: product(dims) × 8 bytes, f64 little-endian
//! ```
//!
//! Values are stored bit for bit, so a save/load round trip reproduces every
//! parameter exactly.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pipeline::{ModelConfig, TrainingConfig, TwoStageModel};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"BGFG";
pub const VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const MAX_RANK: u32 = 8;
const MAX_NAME: u32 = 4096;

/// Segmenter input channels in order: the frame first, then (when present) the
/// reconstructed background.
pub fn channel_order(in_channels: usize) -> Vec<String> {
    let mut order = vec!["frame".to_string()];
    if in_channels == 6 {
        order.push("background".to_string());
    }
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub normalization: Normalization,
    pub channel_order: Vec<String>,
    pub seed: u64,
    pub training: Option<TrainingConfig>,
    /// Number of schedule steps finished when the checkpoint was written.
    pub completed_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &TwoStageModel, training: Option<&TrainingConfig>, completed_steps: usize) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                model: model.config.clone(),
                normalization: model.normalization,
                channel_order: channel_order(model.config.stage2.in_channels),
                seed: training.map(|t| t.seed).unwrap_or(0),
                training: training.cloned(),
                completed_steps,
            },
            params: model.params.clone(),
        }
    }

    /// Rebuilds the model, checking every parameter shape against the stored config.
    pub fn into_model(self) -> Result<TwoStageModel> {
        let expected = channel_order(self.meta.model.stage2.in_channels);
        if self.meta.channel_order != expected {
            return Err(Error::Data(format!(
                "checkpoint channel order {:?} does not match a {}-channel segmenter",
                self.meta.channel_order, self.meta.model.stage2.in_channels
            )));
        }
        TwoStageModel::from_params(self.meta.model, self.meta.normalization, self.params)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&len_u32(meta.len(), "metadata")?.to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&len_u32(self.params.len(), "tensor count")?.to_le_bytes())?;
        for (name, p) in self.params.iter() {
            w.write_all(&len_u32(name.len(), "name")?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let shape = p.value.shape();
            w.write_all(&len_u32(shape.len(), "rank")?.to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&[DTYPE_F64, p.trainable as u8])?;
            let mut buf = Vec::with_capacity(p.value.len() * 8);
            for v in p.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Parses a checkpoint, rejecting wrong magic, unknown versions, truncation
    /// and trailing bytes.
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(r);
        let mut magic = [0u8; 4];
        r.exact(&mut magic, "magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_bytes = r.bytes(meta_len, "metadata")?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&meta_bytes).map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        for i in 0..count {
            let name_len = r.u32("name length")?;
            if name_len > MAX_NAME {
                return Err(Error::Data(format!("tensor {i}: name length {name_len} is implausible")));
            }
            let name = String::from_utf8(r.bytes(name_len as usize, "name")?)
                .map_err(|_| Error::Data(format!("tensor {i}: name is not UTF-8")))?;
            let rank = r.u32("rank")?;
            if rank > MAX_RANK {
                return Err(Error::Data(format!("tensor `{name}`: rank {rank} is implausible")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                let d = r.u64("dimension")?;
                shape.push(usize::try_from(d).map_err(|_| Error::Data(format!("tensor `{name}`: dimension too large")))?);
            }
            let mut flags = [0u8; 2];
            r.exact(&mut flags, "dtype")?;
            if flags[0] != DTYPE_F64 {
                return Err(Error::Data(format!("tensor `{name}`: unknown dtype {}", flags[0])));
            }
            if flags[1] > 1 {
                return Err(Error::Data(format!("tensor `{name}`: bad trainable flag {}", flags[1])));
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8).map(|_| n))
                .ok_or_else(|| Error::Data(format!("tensor `{name}`: element count overflows")))?;
            let payload = r.bytes(n * 8, "payload")?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            if params.get(&name).is_some() {
                return Err(Error::Data(format!("duplicate tensor `{name}`")));
            }
            params.insert(name, Tensor::new(shape, data)?, flags[1] == 1);
        }
        let mut probe = [0u8; 1];
        if r.0.read(&mut probe)? != 0 {
            return Err(Error::Data("trailing bytes after the last tensor".into()));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Data(format!("checkpoint {what} {n} does not fit in 32 bits")))
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Truncated(format!("ended while reading {what}")),
            _ => Error::Io(e),
        })
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Reads `n` bytes without trusting `n` for the up-front allocation.
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let got = (&mut self.0).take(n as u64).read_to_end(&mut out)?;
        if got != n {
            return Err(Error::Truncated(format!("ended while reading {what}")));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitScheme;

    fn model() -> TwoStageModel {
        TwoStageModel::initialized(ModelConfig::desk(), Normalization::default(), InitScheme::He, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let ck = Checkpoint::from_model(&m, Some(&TrainingConfig::desk()), 2);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ck.meta);
        for (name, p) in m.params.iter() {
            let q = back.params.get(name).unwrap();
            assert_eq!(q.trainable, p.trainable);
            let a: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = q.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let rebuilt = back.into_model().unwrap();
        assert_eq!(rebuilt.params, m.params);
    }

    #[test]
    fn special_values_survive() {
        let mut params = ParamStore::new();
        params.insert("x", Tensor::new(vec![4], vec![-0.0, f64::MIN_POSITIVE, 1e308, f64::NAN]).unwrap(), true);
        let ck = Checkpoint {
            meta: Checkpoint::from_model(&model(), None, 0).meta,
            params,
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let bits: Vec<u64> = back.params.value("x").unwrap().data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = ck.params.value("x").unwrap().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn corrupted_headers_are_rejected() {
        let bytes = Checkpoint::from_model(&model(), None, 0).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(m)) if &m == b"XGFG"));
        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::UnsupportedVersion(2))));
        for cut in [0, 3, 7, 11, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected_on_rebuild() {
        let mut ck = Checkpoint::from_model(&model(), None, 0);
        let name = ck.params.trainable_names("stage2.")[0].clone();
        ck.params.insert(name, Tensor::zeros(vec![1]), true);
        assert!(ck.clone().into_model().is_err());
        let mut ck = Checkpoint::from_model(&model(), None, 0);
        ck.meta.channel_order.reverse();
        assert!(ck.into_model().is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bgfg");
        let ck = Checkpoint::from_model(&model(), None, 3);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(!path.with_extension("tmp").exists());
    }
}
