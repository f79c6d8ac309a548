//! Checkpoint file format.
//!
//! Binary layout: magic "MCK1", u32 format version, length-prefixed
//! config JSON blob, named parameter tensors (u32 name length, name
//! bytes, u32 rows, u32 cols, f64 row-major values), the Adam state
//! (step counter plus first/second moment tensors per parameter), and
//! a length-prefixed best-metric JSON record. All integers and floats
//! are little-endian; tensors are stored at full width regardless of
//! the run precision.

use crate::dataset::io::write_atomic;
use crate::error::{Error, Result};
use crate::model::{ModelParams, TrainerConfig};
use crate::numerics::{AdamConfig, AdamMoments, AdamState, DenseMatrix};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 4] = b"MCK1";
const CHECKPOINT_VERSION: u32 = 1;

/// Dataset identity baked into a checkpoint so evaluation can reject
/// mismatched inputs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub n_users: usize,
    pub n_items: usize,
    /// Modality names with their feature dimensions, in model order.
    pub modalities: Vec<(String, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConfigBlob {
    trainer: TrainerConfig,
    dataset: DatasetMeta,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BestMetric {
    pub epoch: usize,
    pub valid_recall: f64,
}

pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub trainer: TrainerConfig,
    pub dataset: DatasetMeta,
    pub best: BestMetric,
}

fn push_tensor<T: Scalar>(out: &mut Vec<u8>, tensor: &DenseMatrix<T>) {
    out.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
    for &v in tensor.data() {
        out.extend_from_slice(&v.into_f64().to_le_bytes());
    }
}

fn push_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

pub fn save_checkpoint<T: Scalar>(path: &Path, checkpoint: &Checkpoint<T>) -> Result<()> {
    let blob = serde_json::to_vec(&ConfigBlob {
        trainer: checkpoint.trainer.clone(),
        dataset: checkpoint.dataset.clone(),
    })
    .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);

    let tensors = checkpoint.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &tensors {
        push_name(&mut out, name);
        push_tensor(&mut out, tensor);
    }

    out.extend_from_slice(&checkpoint.adam.step.to_le_bytes());
    out.extend_from_slice(&(checkpoint.adam.moments.len() as u32).to_le_bytes());
    for m in &checkpoint.adam.moments {
        push_name(&mut out, &m.name);
        push_tensor(&mut out, &m.m);
        push_tensor(&mut out, &m.v);
    }

    let best = serde_json::to_vec(&checkpoint.best)
        .map_err(|e| Error::Config(format!("best-metric serialization failed: {e}")))?;
    out.extend_from_slice(&(best.len() as u32).to_le_bytes());
    out.extend_from_slice(&best);

    write_atomic(path, &out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.off + n {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{}: truncated at offset {}",
                self.path, self.off
            )));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::IncompatibleCheckpoint(format!("{}: bad tensor name", self.path)))
    }

    fn tensor<T: Scalar>(&mut self) -> Result<DenseMatrix<T>> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let body = self.take(rows * cols * 8)?;
        let data: Vec<T> = (0..rows * cols)
            .map(|k| {
                T::from_f64_lossy(f64::from_le_bytes(
                    body[k * 8..k * 8 + 8].try_into().unwrap(),
                ))
            })
            .collect();
        DenseMatrix::from_vec(rows, cols, data)
    }
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        bytes: &bytes,
        off: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{}: missing MCK1 magic",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let blob_len = r.u32()? as usize;
    let blob: ConfigBlob = serde_json::from_slice(r.take(blob_len)?)
        .map_err(|e| Error::IncompatibleCheckpoint(format!("bad config blob: {e}")))?;

    let n_params = r.u32()? as usize;
    let mut named: BTreeMap<String, DenseMatrix<T>> = BTreeMap::new();
    for _ in 0..n_params {
        let name = r.name()?;
        let tensor = r.tensor()?;
        named.insert(name, tensor);
    }
    let modality_order: Vec<String> = blob.dataset.modalities.iter().map(|(n, _)| n.clone()).collect();
    let params = ModelParams::from_tensors(named, &modality_order)?;

    let step = r.u64()?;
    let n_moments = r.u32()? as usize;
    let mut moments = Vec::with_capacity(n_moments);
    for _ in 0..n_moments {
        let name = r.name()?;
        let m = r.tensor()?;
        let v = r.tensor()?;
        moments.push(AdamMoments { name, m, v });
    }
    let adam = AdamState {
        config: AdamConfig {
            learning_rate: blob.trainer.learning_rate,
            weight_decay: blob.trainer.l2,
            ..AdamConfig::default()
        },
        step,
        moments,
    };

    let best_len = r.u32()? as usize;
    let best: BestMetric = serde_json::from_slice(r.take(best_len)?)
        .map_err(|e| Error::IncompatibleCheckpoint(format!("bad best-metric record: {e}")))?;

    Ok(Checkpoint {
        params,
        adam,
        trainer: blob.trainer,
        dataset: blob.dataset,
        best,
    })
}

/// Rejects checkpoints whose dataset identity differs from the data on
/// disk.
pub fn check_compatibility(meta: &DatasetMeta, n_users: usize, n_items: usize) -> Result<()> {
    if meta.n_users != n_users || meta.n_items != n_items {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint was trained on {}x{} users/items, dataset has {}x{}",
            meta.n_users, meta.n_items, n_users, n_items
        )));
    }
    Ok(())
}
