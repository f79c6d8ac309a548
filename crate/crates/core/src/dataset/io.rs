//! Dataset file formats.
//!
//! Interactions: UTF-8 text, one `user_id<TAB>item_id` per line.
//! Features: binary `.mfv` (magic "MFV1", u32 rows, u32 cols, u8
//! element width 4 or 8, little-endian row-major values) or `.csv`
//! with one numeric row per item; the variant is picked by extension.
//! Feature row order must match a sibling item-id manifest (one id per
//! line).

use crate::dataset::{Interaction, InteractionTable, ModalityFeatures, SplitTag};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const FEATURE_MAGIC: &[u8; 4] = b"MFV1";

/// Parses an interactions file into a contiguous-index table. Item ids
/// present in the manifest but never interacted with still receive
/// indices, so feature rows and graph nodes stay aligned.
pub fn load_interactions(path: &Path, manifest: Option<&Path>) -> Result<InteractionTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();

    if let Some(manifest) = manifest {
        for id in read_manifest(manifest)? {
            item_index.insert(id.clone(), item_ids.len());
            item_ids.push(id);
        }
    }

    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
    let mut interactions = Vec::new();
    let mut duplicates = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (user, item) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(i), None) if !u.is_empty() && !i.is_empty() => (u, i),
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: "expected `user_id<TAB>item_id`".into(),
                })
            }
        };
        let u = *user_index.entry(user.to_string()).or_insert_with(|| {
            user_ids.push(user.to_string());
            user_ids.len() - 1
        });
        let i = match item_index.get(item) {
            Some(&i) => i,
            None if manifest.is_some() => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("item id `{item}` missing from the manifest"),
                })
            }
            None => {
                item_index.insert(item.to_string(), item_ids.len());
                item_ids.push(item.to_string());
                item_ids.len() - 1
            }
        };
        if seen.insert((u, i), ()).is_some() {
            duplicates += 1;
            continue;
        }
        interactions.push(Interaction {
            user: u,
            item: i,
            tag: SplitTag::Train,
        });
    }

    if interactions.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: "no interactions found".into(),
        });
    }

    Ok(InteractionTable {
        n_users: user_ids.len(),
        n_items: item_ids.len(),
        interactions,
        user_ids,
        item_ids,
        duplicates_dropped: duplicates,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let ids: Vec<String> = text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if ids.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: "empty manifest".into(),
        });
    }
    Ok(ids)
}

/// Loads a feature matrix, picking the format by extension.
pub fn load_features<T: Scalar>(path: &Path, name: &str) -> Result<ModalityFeatures<T>> {
    let matrix = match path.extension().and_then(|e| e.to_str()) {
        Some("mfv") => read_mfv(path)?,
        Some("csv") => read_feature_csv(path)?,
        other => {
            return Err(Error::Config(format!(
                "unknown feature file extension {:?} for {} (expected .mfv or .csv)",
                other,
                path.display()
            )))
        }
    };
    Ok(ModalityFeatures {
        name: name.to_string(),
        matrix,
    })
}

fn read_mfv<T: Scalar>(path: &Path) -> Result<DenseMatrix<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let err = |message: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: message.into(),
    };
    if bytes.len() < 13 || &bytes[0..4] != FEATURE_MAGIC {
        return Err(err("missing MFV1 magic"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = bytes[12] as usize;
    if width != 4 && width != 8 {
        return Err(err("element width flag must be 4 or 8"));
    }
    let expected = 13 + rows * cols * width;
    if bytes.len() != expected {
        return Err(err(&format!(
            "file length {} does not match header ({expected} expected)",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let body = &bytes[13..];
    for k in 0..rows * cols {
        let v = if width == 4 {
            f32::from_le_bytes(body[k * 4..k * 4 + 4].try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(body[k * 8..k * 8 + 8].try_into().unwrap())
        };
        data.push(T::from_f64_lossy(v));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// Writes the binary feature format; values are stored at full width.
pub fn write_mfv<T: Scalar>(path: &Path, matrix: &DenseMatrix<T>) -> Result<()> {
    let mut out = Vec::with_capacity(13 + matrix.data().len() * 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(matrix.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.cols() as u32).to_le_bytes());
    out.push(8u8);
    for &v in matrix.data() {
        out.extend_from_slice(&v.into_f64().to_le_bytes());
    }
    write_atomic(path, &out)
}

fn read_feature_csv<T: Scalar>(path: &Path) -> Result<DenseMatrix<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut cols = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<T> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map(T::from_f64_lossy).map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("bad numeric field `{f}`"),
                })
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("expected {c} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: "empty feature csv".into(),
        });
    }
    let cols = cols.unwrap();
    DenseMatrix::from_vec(rows.len(), cols, rows.into_iter().flatten().collect())
}

pub fn write_interactions(path: &Path, table: &InteractionTable) -> Result<()> {
    let mut out = String::new();
    for it in &table.interactions {
        out.push_str(&table.user_ids[it.user]);
        out.push('\t');
        out.push_str(&table.item_ids[it.item]);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_manifest(path: &Path, item_ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for id in item_ids {
        out.push_str(id);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Writes via a temp file + rename so concurrent readers never observe
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "tmp.{}",
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_exact_bytes(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(content: &str, ext: &str) -> tempfile::TempPath {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.into_temp_path()
    }

    #[test]
    fn three_line_file_builds_contiguous_indices() {
        let path = temp_file("a\tx\nb\ty\na\tz\n", ".tsv");
        let table = load_interactions(&path, None).unwrap();
        assert_eq!(table.n_users, 2);
        assert_eq!(table.n_items, 3);
        assert_eq!(table.interactions.len(), 3);
        assert_eq!(table.user_ids, vec!["a", "b"]);
    }

    #[test]
    fn empty_file_rejected() {
        let path = temp_file("", ".tsv");
        assert!(load_interactions(&path, None).is_err());
    }

    #[test]
    fn duplicates_deduplicated_with_count() {
        let path = temp_file("a\tx\na\tx\nb\tx\n", ".tsv");
        let table = load_interactions(&path, None).unwrap();
        assert_eq!(table.interactions.len(), 2);
        assert_eq!(table.duplicates_dropped, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let path = temp_file("a\tx\nbroken line here\n", ".tsv");
        let err = load_interactions(&path, None).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn mfv_round_trip() {
        let m = DenseMatrix::from_rows(&[vec![1.5, -2.25], vec![0.0, 42.0]]).unwrap();
        let path = tempfile::Builder::new()
            .suffix(".mfv")
            .tempfile()
            .unwrap()
            .into_temp_path();
        write_mfv(&path, &m).unwrap();
        let back: DenseMatrix<f64> = read_mfv(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_features_parse() {
        let path = temp_file("1.0, 2.0\n3.5,4.5\n", ".csv");
        let m: DenseMatrix<f64> = read_feature_csv(&path).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m[(1, 0)], 3.5);
    }

    #[test]
    fn manifest_constrains_item_ids() {
        let manifest = temp_file("x\ny\n", ".txt");
        let good = temp_file("a\tx\nb\ty\n", ".tsv");
        let table = load_interactions(&good, Some(&manifest)).unwrap();
        assert_eq!(table.n_items, 2);
        let bad = temp_file("a\tunknown\n", ".tsv");
        assert!(load_interactions(&bad, Some(&manifest)).is_err());
    }
}
