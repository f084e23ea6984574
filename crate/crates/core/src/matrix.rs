//! Row-major feature matrices and their on-disk form.
//!
//! A dataset file is raw little-endian `f64` values, row-major, with a JSON
//! sidecar at `<path>.json` holding `{"n": .., "m": ..}`. Optional class
//! labels live at `<path>.labels` as little-endian `u32`, one per row.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::input(format!(
                "feature matrix must be non-empty, got {n}x{m}"
            )));
        }
        if data.len() != n * m {
            return Err(Error::input(format!(
                "data length {} does not match {n}x{m}",
                data.len()
            )));
        }
        Ok(Self { n, m, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * m);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != m {
                return Err(Error::input(format!(
                    "row {i} has {} features, expected {m}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), m, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row_stride_bytes(&self) -> u64 {
        self.m as u64 * 8
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.m)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let meta = MatrixMeta {
            n: self.n,
            m: self.m,
        };
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: MatrixMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        let bytes = fs::read(path)?;
        let expected = meta.n * meta.m * 8;
        if bytes.len() != expected {
            return Err(Error::format(
                "dataset",
                format!(
                    "{} holds {} bytes, sidecar promises {}x{} = {expected}",
                    path.display(),
                    bytes.len(),
                    meta.n,
                    meta.m
                ),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(meta.n, meta.m, data)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub n: usize,
    pub m: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            "labels",
            format!("{} is not a whole number of u32 values", path.display()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
