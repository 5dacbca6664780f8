//! Sparse incidence matrices and the handful of kernels diffusion runs on.
//!
//! Matrices are stored row-compressed with sorted column indices. The
//! structural incidence is `|V| x |S|` (entity rows, sentence columns) and the
//! semantic incidence is `|V| x K` (entity rows, cluster columns). Both are
//! kept alongside their transposes so that products in either direction cost
//! `O(nnz)` of the touched rows.

use std::io::Write;

use crate::error::{Error, Result};

/// Row-compressed sparse matrix with sorted, unique column indices per row and
/// no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets in any order.
    ///
    /// Exact zeros are dropped. Out-of-range indices, duplicate coordinates
    /// and non-finite values are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        triplets.retain(|t| t.2 != 0.0);
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Config(format!(
                    "entry ({r}, {c}) out of range for {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("non-finite value at ({r}, {c})")));
            }
            if prev == Some((r, c)) {
                return Err(Error::Config(format!("duplicate entry at ({r}, {c})")));
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c as u32);
            values.push(v);
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from a dense row-major array, skipping zeros.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    actual: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n_rows, n_cols, triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn row_iter(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&c, &v)| (c as usize, v))
    }

    /// All stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row_iter(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n_rows {
            return 0.0;
        }
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Rows are visited in ascending order, so each transposed row comes
        // out sorted without a second pass.
        for i in 0..self.n_rows {
            for (j, v) in self.row_iter(i) {
                let slot = next[j];
                col_idx[slot] = i as u32;
                values[slot] = v;
                next[j] += 1;
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Dense product `M x`.
    pub fn mul_dense(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                actual: x.len(),
            });
        }
        Ok((0..self.n_rows)
            .map(|i| self.row_iter(i).map(|(j, v)| v * x[j]).sum())
            .collect())
    }

    /// Dense product `M^T x` computed by scattering over the rows of `M`.
    pub fn tr_mul_dense(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                actual: x.len(),
            });
        }
        let mut out = vec![0.0; self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row_iter(i) {
                out[j] += v * xi;
            }
        }
        Ok(out)
    }

    /// Sparse product `M x`. Costs `O(n_cols + nnz)`; prefer
    /// [`SparseMatrix::tr_mul_sparse`] on a stored transpose when `x` is small.
    pub fn mul_sparse(&self, x: &SparseVector) -> Result<SparseVector> {
        if x.dim != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                actual: x.dim,
            });
        }
        let dense = x.to_dense();
        let out = self.mul_dense(&dense)?;
        Ok(SparseVector::from_dense(&out))
    }

    /// Sparse product `M^T x`, touching only the rows in the support of `x`.
    pub fn tr_mul_sparse(&self, x: &SparseVector) -> Result<SparseVector> {
        if x.dim != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                actual: x.dim,
            });
        }
        let mut acc = vec![0.0; self.n_cols];
        let mut seen = vec![false; self.n_cols];
        let mut touched = Vec::new();
        for (i, xi) in x.iter() {
            for (j, v) in self.row_iter(i) {
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
                acc[j] += v * xi;
            }
        }
        touched.sort_unstable();
        let pairs = touched
            .into_iter()
            .filter(|&j| acc[j] != 0.0)
            .map(|j| (j, acc[j]));
        Ok(SparseVector::from_sorted(self.n_cols, pairs))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (&c, &v) in self.col_idx.iter().zip(&self.values) {
            out[c as usize] += v;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, j, v) in self.triplets() {
            out[i][j] = v;
        }
        out
    }

    /// Little-endian block: `n_rows`, `n_cols`, `nnz` as u64, then `nnz` u32
    /// row indices, `nnz` u32 column indices and `nnz` f64 values.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&(self.n_rows as u64).to_le_bytes())?;
        out.write_all(&(self.n_cols as u64).to_le_bytes())?;
        out.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for i in 0..self.n_rows {
            for _ in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.write_all(&(i as u32).to_le_bytes())?;
            }
        }
        for &c in &self.col_idx {
            out.write_all(&c.to_le_bytes())?;
        }
        for &v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(24 + self.nnz() * 16);
        self.write_binary(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_binary(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut reader = ByteReader::new(bytes);
        let n_rows = reader.u64()? as usize;
        let n_cols = reader.u64()? as usize;
        let nnz = reader.u64()? as usize;
        let expected = nnz
            .checked_mul(16)
            .and_then(|n| n.checked_add(24))
            .ok_or("entry count overflows")?;
        if bytes.len() != expected {
            return Err(format!(
                "expected {expected} bytes for {nnz} entries, found {}",
                bytes.len()
            ));
        }
        let rows: Vec<u32> = (0..nnz).map(|_| reader.u32()).collect::<Result<_, _>>()?;
        let cols: Vec<u32> = (0..nnz).map(|_| reader.u32()).collect::<Result<_, _>>()?;
        let vals: Vec<f64> = (0..nnz).map(|_| reader.f64()).collect::<Result<_, _>>()?;
        let triplets = rows
            .into_iter()
            .zip(cols)
            .zip(vals)
            .map(|((r, c), v)| (r as usize, c as usize, v))
            .collect::<Vec<_>>();
        if triplets.iter().any(|t| t.2 == 0.0) {
            return Err("stored zero value".into());
        }
        Self::from_triplets(n_rows, n_cols, triplets).map_err(|e| e.to_string())
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| format!("unexpected end of data at byte {}", self.pos))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, String> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, String> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> std::result::Result<f64, String> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Sparse vector with sorted unique indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(index, value)` pairs in any order; repeated indices are
    /// summed and zeros dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_by_key(|p| p.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if i >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: i + 1,
                });
            }
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        Ok(Self::from_sorted(dim, merged))
    }

    fn from_sorted(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut out = Self::new(dim);
        for (i, v) in pairs {
            if v != 0.0 {
                out.indices.push(i as u32);
                out.values.push(v);
            }
        }
        out
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_sorted(
            values.len(),
            values.iter().copied().enumerate().filter(|p| p.1 != 0.0),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.indices.binary_search(&(i as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|&i| i as usize)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scale(&self, factor: f64) -> SparseVector {
        Self::from_sorted(self.dim, self.iter().map(|(i, v)| (i, v * factor)))
    }

    /// Entrywise sum of two vectors of the same dimension.
    pub fn add(&self, other: &SparseVector) -> Result<SparseVector> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut out = Vec::with_capacity(self.nnz() + other.nnz());
        let (mut a, mut b) = (self.iter().peekable(), other.iter().peekable());
        loop {
            match (a.peek().copied(), b.peek().copied()) {
                (Some((i, x)), Some((j, y))) if i == j => {
                    out.push((i, x + y));
                    a.next();
                    b.next();
                }
                (Some((i, x)), Some((j, _))) if i < j => {
                    out.push((i, x));
                    a.next();
                }
                (_, Some((j, y))) => {
                    out.push((j, y));
                    b.next();
                }
                (Some((i, x)), None) => {
                    out.push((i, x));
                    a.next();
                }
                (None, None) => break,
            }
        }
        Ok(Self::from_sorted(self.dim, out))
    }

    /// Keeps only entries strictly greater than `epsilon`.
    pub fn prune_above(&self, epsilon: f64) -> SparseVector {
        Self::from_sorted(self.dim, self.iter().filter(|&(_, v)| v > epsilon))
    }
}

/// Binary entity-by-sentence incidence: entry `(i, j)` is 1 iff entity `i`
/// occurs in sentence `j`. Sentences without entities keep an empty column.
pub fn build_structural_incidence(
    n_entities: usize,
    sentence_entities: &[Vec<usize>],
) -> Result<SparseMatrix> {
    let mut triplets = Vec::new();
    for (j, ents) in sentence_entities.iter().enumerate() {
        let mut seen = ents.clone();
        seen.sort_unstable();
        seen.dedup();
        triplets.extend(seen.into_iter().map(|i| (i, j, 1.0)));
    }
    SparseMatrix::from_triplets(n_entities, sentence_entities.len(), triplets)
}

/// An incidence matrix together with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub matrix: SparseMatrix,
    pub transposed: SparseMatrix,
}

impl Incidence {
    pub fn new(matrix: SparseMatrix) -> Self {
        let transposed = matrix.transpose();
        Self { matrix, transposed }
    }

    /// `H x` for a sparse hyperedge-space vector.
    pub fn project_to_nodes(&self, x: &SparseVector) -> Result<SparseVector> {
        self.transposed.tr_mul_sparse(x)
    }

    /// `H^T a` for a sparse node-space vector.
    pub fn project_to_edges(&self, a: &SparseVector) -> Result<SparseVector> {
        self.matrix.tr_mul_sparse(a)
    }
}

/// The hybrid hypergraph: structural (sentence) and semantic (cluster)
/// hyperedges over one shared entity set.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    pub structural: Incidence,
    pub semantic: Incidence,
}

impl Hypergraph {
    pub fn new(h_str: SparseMatrix, h_sem: SparseMatrix) -> Result<Self> {
        if h_str.n_rows() != h_sem.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: h_str.n_rows(),
                actual: h_sem.n_rows(),
            });
        }
        Ok(Self {
            structural: Incidence::new(h_str),
            semantic: Incidence::new(h_sem),
        })
    }

    pub fn n_entities(&self) -> usize {
        self.structural.matrix.n_rows()
    }

    pub fn n_sentences(&self) -> usize {
        self.structural.matrix.n_cols()
    }

    pub fn n_clusters(&self) -> usize {
        self.semantic.matrix.n_cols()
    }

    /// Same graph with every semantic hyperedge removed.
    pub fn without_semantic(&self) -> Self {
        Self {
            structural: self.structural.clone(),
            semantic: Incidence::new(SparseMatrix::zeros(self.n_entities(), 0)),
        }
    }
}
