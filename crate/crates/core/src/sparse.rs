//! Compressed sparse row matrices and the coordinate-triplet exchange format.

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::learning::Tensor;

/// Multiply-adds below which `mul_dense` stays on the calling thread.
const PAR_WORK: usize = 1 << 22;

/// `o += a * x`.
#[inline(always)]
pub(crate) fn axpy(o: &mut [f64], a: f64, x: &[f64]) {
    for (ov, &xv) in o.iter_mut().zip(x) {
        *ov += a * xv;
    }
}

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicate coordinates are summed. Explicit zeros are kept.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (u32, u32, f64)>,
    ) -> Result<Self, SparseError> {
        let mut t: Vec<(u32, u32, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &t {
            if r as usize >= rows || c as usize >= cols {
                return Err(SparseError::OutOfBounds {
                    row: r as usize,
                    col: c as usize,
                    rows,
                    cols,
                });
            }
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indices.push(c);
            values.push(v);
            indptr[r as usize + 1] += 1;
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds directly from CSR arrays whose rows are already sorted and free of duplicates.
    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(indptr.len(), rows + 1);
        debug_assert_eq!(indices.len(), values.len());
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// Triplets in lexicographic `(row, col)` order.
    pub fn triplets(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (idx, vals) = self.row(r);
            idx.iter().zip(vals).map(move |(&c, &v)| (r as u32, c, v))
        })
    }

    pub fn map_values(&self, f: impl Fn(u32, u32, f64) -> f64) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] = f(r as u32, self.indices[k], self.values[k]);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.cols, self.rows, self.triplets().map(|(r, c, v)| (c, r, v)))
            .expect("transpose stays in bounds")
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.triplets().all(|(r, c, v)| self.get(c as usize, r as usize) == v)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, c, v) in self.triplets() {
            d[r as usize][c as usize] = v;
        }
        d
    }

    /// `self * x`. Rows are computed independently, so the result is identical
    /// for any thread count.
    pub fn mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(
            self.cols,
            x.rows(),
            "sparse product shape mismatch: {}x{} * {}x{}",
            self.rows,
            self.cols,
            x.rows(),
            x.cols()
        );
        let c = x.cols();
        let mut out = Tensor::zeros(self.rows, c);
        if c == 0 {
            return out;
        }
        let xd = x.data();
        let kernel = |r: usize, o: &mut [f64]| {
            let (idx, vals) = self.row(r);
            for (&j, &v) in idx.iter().zip(vals) {
                axpy(o, v, &xd[j as usize * c..(j as usize + 1) * c]);
            }
        };
        if self.nnz() * c >= PAR_WORK && rayon::current_num_threads() > 1 {
            out.data_mut().par_chunks_mut(c).enumerate().for_each(|(r, o)| kernel(r, o));
        } else {
            out.data_mut().chunks_mut(c).enumerate().for_each(|(r, o)| kernel(r, o));
        }
        out
    }

    /// `self^T * x`, accumulated row by row in index order.
    pub fn t_mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(
            self.rows,
            x.rows(),
            "sparse transpose product shape mismatch: ({}x{})^T * {}x{}",
            self.rows,
            self.cols,
            x.rows(),
            x.cols()
        );
        let mut out = Tensor::zeros(self.cols, x.cols());
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let xr = x.row(r);
            for (&j, &v) in idx.iter().zip(vals) {
                for (o, &xv) in out.row_mut(j as usize).iter_mut().zip(xr) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    /// Writes the coordinate exchange format: a `rows cols nnz` header line, then
    /// one `i j weight` line per entry in lexicographic order.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v}")?;
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self, SparseError> {
        let mut lines = r.lines();
        let parse_err = |line: usize, reason: &str| SparseError::Parse {
            line,
            reason: reason.to_string(),
        };
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(1, "header must be `rows cols nnz`"))?;
        let [rows, cols, nnz] = dims[..] else {
            return Err(parse_err(1, "header must be `rows cols nnz`"));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(i), Some(j), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(parse_err(k + 2, "expected `i j weight`"));
            };
            let i = i.parse().map_err(|_| parse_err(k + 2, "bad row index"))?;
            let j = j.parse().map_err(|_| parse_err(k + 2, "bad column index"))?;
            let v = v.parse().map_err(|_| parse_err(k + 2, "bad weight"))?;
            triplets.push((i, j, v));
        }
        if triplets.len() != nnz {
            return Err(parse_err(1, &format!("header declares {nnz} entries, found {}", triplets.len())));
        }
        Self::from_triplets(rows, cols, triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_merged_and_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, [(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.triplets().collect::<Vec<_>>(), vec![(0, 1, 2.0), (1, 2, 1.5)]);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 0.0);
        assert!(CsrMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn products_match_dense() {
        let m = CsrMatrix::from_triplets(3, 2, [(0, 0, 1.0), (1, 1, 2.0), (2, 0, -1.0), (2, 1, 3.0)]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let dense = Tensor::from_rows(&m.to_dense());
        assert_eq!(m.mul_dense(&x), dense.matmul(&x));
        let y = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(m.t_mul_dense(&y), dense.t_matmul(&y));
        assert_eq!(m.transpose().mul_dense(&y), m.t_mul_dense(&y));
    }

    #[test]
    fn exchange_format_roundtrip() {
        let m = CsrMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0), (2, 2, 0.25)]).unwrap();
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("3 3 3\n0 1 1\n"));
        assert_eq!(CsrMatrix::read_triplets(&buf[..]).unwrap(), m);
        assert!(CsrMatrix::read_triplets(&b"2 2 1\n0 x 1\n"[..]).is_err());
        assert!(CsrMatrix::read_triplets(&b"2 2 2\n0 1 1\n"[..]).is_err());
    }
}
