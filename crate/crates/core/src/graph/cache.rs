//! On-disk cache for initial graphs.
//!
//! The initial graph is parameter-free and reused across runs and
//! sweeps, so it is cached keyed by (feature content hash, k,
//! self-loop flag). File format: magic "MGR1", u32 N, u32 k, f64
//! lambda (0 for pre-blend stages), stage byte, then CSR arrays as u64
//! row pointers, u32 column indices, f64 values (little-endian).

use crate::dataset::io::write_atomic;
use crate::error::{Error, Result};
use crate::graph::knn::build_initial_graph;
use crate::graph::GraphStage;
use crate::numerics::{CsrStructure, DenseMatrix, SparseMatrix};
use crate::scalar::Scalar;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;

const GRAPH_MAGIC: &[u8; 4] = b"MGR1";

pub fn write_graph<T: Scalar>(
    path: &Path,
    graph: &SparseMatrix<T>,
    k: usize,
    lambda: f64,
    stage: GraphStage,
) -> Result<()> {
    let s = graph.structure();
    let mut out = Vec::new();
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&(s.rows as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&lambda.to_le_bytes());
    out.push(stage.as_byte());
    for &p in &s.indptr {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &c in &s.indices {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for &v in graph.values() {
        out.extend_from_slice(&v.into_f64().to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn read_graph<T: Scalar>(path: &Path) -> Result<(SparseMatrix<T>, usize, f64, GraphStage)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let err = |message: String| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message,
    };
    if bytes.len() < 21 || &bytes[0..4] != GRAPH_MAGIC {
        return Err(err("missing MGR1 magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let lambda = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let stage = GraphStage::from_byte(bytes[20])
        .ok_or_else(|| err(format!("bad stage byte {}", bytes[20])))?;

    let mut off = 21usize;
    let need = |off: usize, len: usize| -> Result<()> {
        if bytes.len() < off + len {
            Err(err("truncated graph file".into()))
        } else {
            Ok(())
        }
    };
    need(off, (n + 1) * 8)?;
    let indptr: Vec<usize> = (0..=n)
        .map(|i| {
            u64::from_le_bytes(bytes[off + i * 8..off + i * 8 + 8].try_into().unwrap()) as usize
        })
        .collect();
    off += (n + 1) * 8;
    let nnz = indptr[n];
    need(off, nnz * 4)?;
    let indices: Vec<usize> = (0..nnz)
        .map(|e| {
            u32::from_le_bytes(bytes[off + e * 4..off + e * 4 + 4].try_into().unwrap()) as usize
        })
        .collect();
    off += nnz * 4;
    need(off, nnz * 8)?;
    let values: Vec<T> = (0..nnz)
        .map(|e| {
            T::from_f64_lossy(f64::from_le_bytes(
                bytes[off + e * 8..off + e * 8 + 8].try_into().unwrap(),
            ))
        })
        .collect();

    let structure = Arc::new(CsrStructure::new(n, n, indptr, indices)?);
    Ok((SparseMatrix::new(structure, values)?, k, lambda, stage))
}

/// Content hash of the cache key: feature bytes, k, self-loop flag.
pub fn cache_key<T: Scalar>(features: &DenseMatrix<T>, k: usize, keep_self_loops: bool) -> String {
    let mut hasher = Sha256::new();
    hasher.update((features.rows() as u64).to_le_bytes());
    hasher.update((features.cols() as u64).to_le_bytes());
    for &v in features.data() {
        hasher.update(v.into_f64().to_le_bytes());
    }
    hasher.update((k as u64).to_le_bytes());
    hasher.update([keep_self_loops as u8]);
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the initial graph, going through the on-disk cache when a
/// cache directory is provided. Corrupt or mismatched entries are
/// recomputed and overwritten.
pub fn initial_graph_cached<T: Scalar>(
    features: &DenseMatrix<T>,
    k: usize,
    keep_self_loops: bool,
    cache_dir: Option<&Path>,
) -> Result<SparseMatrix<T>> {
    let path: Option<PathBuf> = cache_dir.map(|dir| {
        dir.join(format!(
            "graph_{}.mgr",
            cache_key(features, k, keep_self_loops)
        ))
    });
    if let Some(path) = &path {
        if path.exists() {
            if let Ok((graph, cached_k, _, GraphStage::Initial)) = read_graph::<T>(path) {
                if cached_k == k && graph.rows() == features.rows() {
                    return Ok(graph);
                }
            }
        }
    }
    let graph = build_initial_graph(features, k, keep_self_loops)?;
    if let Some(path) = &path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        write_graph(path, &graph, k, 0.0, GraphStage::Initial)?;
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    #[test]
    fn graph_file_round_trip() {
        let mut rng = derive_rng(5, "cache");
        let data: Vec<f64> = (0..40).map(|_| rng.gen_range(0.1..1.0)).collect();
        let feats = DenseMatrix::from_vec(8, 5, data).unwrap();
        let graph = build_initial_graph(&feats, 3, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.mgr");
        write_graph(&path, &graph, 3, 0.0, GraphStage::Initial).unwrap();
        let (back, k, lambda, stage) = read_graph::<f64>(&path).unwrap();
        assert_eq!(back, graph);
        assert_eq!(k, 3);
        assert_eq!(lambda, 0.0);
        assert_eq!(stage, GraphStage::Initial);
    }

    #[test]
    fn cache_hit_returns_identical_graph() {
        let mut rng = derive_rng(6, "cache");
        let data: Vec<f64> = (0..60).map(|_| rng.gen_range(0.1..1.0)).collect();
        let feats = DenseMatrix::from_vec(12, 5, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = initial_graph_cached(&feats, 4, true, Some(dir.path())).unwrap();
        let entries = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(entries, 1);
        let second = initial_graph_cached(&feats, 4, true, Some(dir.path())).unwrap();
        assert_eq!(first, second);
        // Different k lands in a different entry.
        let _third = initial_graph_cached(&feats, 5, true, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
