//! Data-layout and computation reordering.
//!
//! Data-layout methods (first-touch, RCB, Hilbert, Z-order) return a
//! [`Permutation`] of dataset rows; computation methods either permute a
//! query set (Z-order computation reordering) or rearrange an access
//! sequence in place (page blocking).

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::sfc::{self, Curve, QuantizerConfig};

/// `map[new_position] = old_index`. Always a bijection on `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &old in &map {
            if old >= map.len() || std::mem::replace(&mut seen[old], true) {
                return Err(Error::input(format!(
                    "not a bijection on 0..{}: index {old} out of range or repeated",
                    map.len()
                )));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            map: (0..len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &o)| i == o)
    }

    /// `inverse().map()[old_index] = new_position`.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (new, &old) in self.map.iter().enumerate() {
            inv[old] = new;
        }
        Self { map: inv }
    }

    /// Reorder any per-row companion array (labels, queries, ...).
    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.map.len() {
            return Err(Error::input(format!(
                "permutation of length {} applied to {} items",
                self.map.len(),
                items.len()
            )));
        }
        Ok(self.map.iter().map(|&old| items[old].clone()).collect())
    }

    /// One `new_position,old_index` line per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (new, old) in self.map.iter().enumerate() {
            writeln!(w, "{new},{old}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut map = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::format("permutation", format!("line {}: `{line}`", lineno + 1));
            let (new, old) = line.split_once(',').ok_or_else(bad)?;
            let new: usize = new.trim().parse().map_err(|_| bad())?;
            let old: usize = old.trim().parse().map_err(|_| bad())?;
            if new != map.len() {
                return Err(bad());
            }
            map.push(old);
        }
        Self::new(map).map_err(|e| Error::format("permutation", e.to_string()))
    }
}

/// Row indices touched by a computation, in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccessSequence(pub Vec<usize>);

impl AccessSequence {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Rewrite indices into a permuted layout (old index -> new position).
    pub fn relabel(&self, perm: &Permutation) -> Result<Self> {
        let inv = perm.inverse();
        self.0
            .iter()
            .map(|&i| {
                inv.map.get(i).copied().ok_or_else(|| {
                    Error::input(format!("row {i} out of range for permutation of {}", perm.len()))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(AccessSequence)
    }
}

/// Inspector-executor first-touch layout: rows in order of first access,
/// untouched rows appended in ascending original order.
pub fn reorder_first_touch(inspected: &AccessSequence, n: usize) -> Result<Permutation> {
    let mut placed = vec![false; n];
    let mut map = Vec::with_capacity(n);
    for &i in &inspected.0 {
        if i >= n {
            return Err(Error::input(format!("inspected row {i} out of range for n={n}")));
        }
        if !placed[i] {
            placed[i] = true;
            map.push(i);
        }
    }
    map.extend((0..n).filter(|&i| !placed[i]));
    Ok(Permutation { map })
}

/// Recursive coordinate bisection. Each partition larger than `leaf_size`
/// is split at the lower median of its widest dimension (max - min, ties to
/// the lowest dimension); leaves are concatenated in recursion order.
pub fn reorder_rcb(dataset: &FeatureMatrix, leaf_size: usize) -> Result<Permutation> {
    rcb_with_leaves(dataset, leaf_size).map(|(p, _)| p)
}

/// RCB permutation plus the size of every leaf, in layout order.
pub fn rcb_with_leaves(dataset: &FeatureMatrix, leaf_size: usize) -> Result<(Permutation, Vec<usize>)> {
    if leaf_size == 0 {
        return Err(Error::input("RCB leaf size must be at least 1"));
    }
    let mut idx: Vec<usize> = (0..dataset.n()).collect();
    let mut leaves = Vec::new();
    rcb_split(dataset, &mut idx, leaf_size, &mut leaves);
    Ok((Permutation { map: idx }, leaves))
}

fn rcb_split(ds: &FeatureMatrix, idx: &mut [usize], leaf_size: usize, leaves: &mut Vec<usize>) {
    if idx.len() <= leaf_size {
        leaves.push(idx.len());
        return;
    }
    let dim = widest_dimension(ds, idx);
    idx.sort_unstable_by(|&a, &b| ds.row(a)[dim].total_cmp(&ds.row(b)[dim]).then(a.cmp(&b)));
    // Lower median stays on the left; sibling sizes differ by at most one.
    let mid = idx.len().div_ceil(2);
    let (left, right) = idx.split_at_mut(mid);
    rcb_split(ds, left, leaf_size, leaves);
    rcb_split(ds, right, leaf_size, leaves);
}

fn widest_dimension(ds: &FeatureMatrix, idx: &[usize]) -> usize {
    let m = ds.m();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for &i in idx {
        for (j, &v) in ds.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut best = 0;
    let mut best_spread = f64::NEG_INFINITY;
    for j in 0..m {
        let spread = hi[j] - lo[j];
        if spread > best_spread {
            best = j;
            best_spread = spread;
        }
    }
    best
}

/// Stable sort of rows by curve index, with quantization bounds fitted to
/// the dataset's own per-dimension min/max.
pub fn reorder_sfc(dataset: &FeatureMatrix, curve: Curve, bits: u32) -> Result<Permutation> {
    sort_by_curve(dataset, curve, bits)
}

/// Z-order computation reordering: the order in which queries are issued.
pub fn reorder_queries_zorder(queries: &FeatureMatrix, bits: u32) -> Result<Permutation> {
    sort_by_curve(queries, Curve::Zorder, bits)
}

fn sort_by_curve(points: &FeatureMatrix, curve: Curve, bits: u32) -> Result<Permutation> {
    let cfg = QuantizerConfig::fit(points.m(), bits, points.rows())?;
    let codes = points
        .rows()
        .map(|row| sfc::encode(curve, &sfc::quantize(row, &cfg)?, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut map: Vec<usize> = (0..points.n()).collect();
    map.sort_unstable_by(|&a, &b| codes[a].cmp(&codes[b]).then(a.cmp(&b)));
    Ok(Permutation { map })
}

/// Locality-based blocking: inside each window of `window` consecutive
/// accesses, accesses are grouped by OS page (groups in order of first
/// appearance, original order within a group). The page of a row is the
/// page holding its first byte.
pub fn block_by_page(
    seq: &AccessSequence,
    row_stride_bytes: u64,
    page_size_bytes: u64,
    window: usize,
) -> Result<AccessSequence> {
    if window == 0 {
        return Err(Error::input("blocking window must be at least 1"));
    }
    if page_size_bytes == 0 {
        return Err(Error::input("page size must be positive"));
    }
    let page_of = |i: usize| i as u64 * row_stride_bytes / page_size_bytes;
    let mut out = Vec::with_capacity(seq.len());
    let mut slot: HashMap<u64, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for chunk in seq.0.chunks(window) {
        slot.clear();
        groups.clear();
        for &i in chunk {
            let g = *slot.entry(page_of(i)).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        for g in &groups {
            out.extend_from_slice(g);
        }
    }
    Ok(AccessSequence(out))
}

pub fn apply_permutation(dataset: &FeatureMatrix, perm: &Permutation) -> Result<FeatureMatrix> {
    if perm.len() != dataset.n() {
        return Err(Error::input(format!(
            "permutation of length {} does not match {} rows",
            perm.len(),
            dataset.n()
        )));
    }
    let mut data = Vec::with_capacity(dataset.data().len());
    for &old in &perm.map {
        data.extend_from_slice(dataset.row(old));
    }
    FeatureMatrix::new(dataset.n(), dataset.m(), data)
}
