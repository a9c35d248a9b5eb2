//! Sparse matrices in sorted coordinate form.
//!
//! Resampling matrices between hierarchy levels are almost entirely zero
//! (one-hot selection rows, barycentric rows with at most three entries), so
//! they are stored as sorted `(row, col, value)` triplets with a CSR-style
//! row index for fast row scans.

use std::io::{BufRead, Write};
use std::sync::Arc;

use thiserror::Error;

use super::{NumericError, Tensor};

#[derive(Debug, Error)]
pub enum SparseReadError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Entry(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable sparse matrix. Triplets are sorted row-major, duplicates merged,
/// exact zeros dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    row_start: Vec<usize>,
}

impl SparseMatrix {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, NumericError> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(NumericError::SparseOutOfBounds {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            entries.push((r, c, v));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != 0.0);
        Ok(Self::from_sorted(rows, cols, merged))
    }

    fn from_sorted(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut row_start = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_start[r + 1] += 1;
        }
        for i in 0..rows {
            row_start[i + 1] += row_start[i];
        }
        SparseMatrix {
            rows,
            cols,
            entries,
            row_start,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_sorted(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn row(&self, r: usize) -> &[(usize, usize, f64)] {
        &self.entries[self.row_start[r]..self.row_start[r + 1]]
    }

    /// `self * x` where `x` is dense `[cols, c]`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, NumericError> {
        if x.shape().len() != 2 || x.rows() != self.cols {
            return Err(NumericError::ShapeMismatch {
                op: "sparse apply",
                lhs: vec![self.rows, self.cols],
                rhs: x.shape().to_vec(),
            });
        }
        let c = x.cols();
        let mut out = Tensor::zeros(&[self.rows, c]);
        let xv = x.values();
        let ov = out.values_mut();
        for &(r, j, v) in &self.entries {
            let src = &xv[j * c..(j + 1) * c];
            let dst = &mut ov[r * c..(r + 1) * c];
            for k in 0..c {
                dst[k] += v * src[k];
            }
        }
        Ok(out)
    }

    /// `self^T * y` where `y` is dense `[rows, c]`.
    pub fn apply_transpose(&self, y: &Tensor) -> Result<Tensor, NumericError> {
        if y.shape().len() != 2 || y.rows() != self.rows {
            return Err(NumericError::ShapeMismatch {
                op: "sparse apply_transpose",
                lhs: vec![self.cols, self.rows],
                rhs: y.shape().to_vec(),
            });
        }
        let c = y.cols();
        let mut out = Tensor::zeros(&[self.cols, c]);
        let yv = y.values();
        let ov = out.values_mut();
        for &(r, j, v) in &self.entries {
            let src = &yv[r * c..(r + 1) * c];
            let dst = &mut ov[j * c..(j + 1) * c];
            for k in 0..c {
                dst[k] += v * src[k];
            }
        }
        Ok(out)
    }

    /// Sparse-sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix, NumericError> {
        if self.cols != other.rows {
            return Err(NumericError::ShapeMismatch {
                op: "sparse matmul",
                lhs: vec![self.rows, self.cols],
                rhs: vec![other.rows, other.cols],
            });
        }
        let mut acc: std::collections::BTreeMap<(usize, usize), f64> =
            std::collections::BTreeMap::new();
        for &(i, k, va) in &self.entries {
            for &(_, j, vb) in other.row(k) {
                *acc.entry((i, j)).or_insert(0.0) += va * vb;
            }
        }
        let entries: Vec<_> = acc
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        Ok(Self::from_sorted(self.rows, other.cols, entries))
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for &(r, c, v) in &self.entries {
            t.set(r, c, v);
        }
        t
    }

    /// Text form: a `rows cols nnz` header, then one `row col value` line per
    /// entry. Values print in round-trippable form.
    pub fn write_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.entries.len())?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{} {} {}", r, c, v)?;
        }
        Ok(())
    }

    pub fn read_text(r: &mut impl BufRead) -> Result<Self, SparseReadError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| SparseReadError::Malformed {
                line: 1,
                reason: "missing header".into(),
            })??;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 {
            return Err(SparseReadError::Malformed {
                line: 1,
                reason: format!("expected `rows cols nnz`, got {:?}", header),
            });
        }
        let parse = |s: &str, line: usize| {
            s.parse::<usize>().map_err(|_| SparseReadError::Malformed {
                line,
                reason: format!("bad integer {:?}", s),
            })
        };
        let rows = parse(head[0], 1)?;
        let cols = parse(head[1], 1)?;
        let nnz = parse(head[2], 1)?;
        let mut triplets = Vec::with_capacity(nnz);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(SparseReadError::Malformed {
                    line: lineno,
                    reason: format!("expected `row col value`, got {:?}", line),
                });
            }
            let v = parts[2]
                .parse::<f64>()
                .map_err(|_| SparseReadError::Malformed {
                    line: lineno,
                    reason: format!("bad value {:?}", parts[2]),
                })?;
            triplets.push((parse(parts[0], lineno)?, parse(parts[1], lineno)?, v));
        }
        if triplets.len() != nnz {
            return Err(SparseReadError::Malformed {
                line: 1,
                reason: format!("header promises {} entries, found {}", nnz, triplets.len()),
            });
        }
        Ok(SparseMatrix::from_triplets(rows, cols, triplets)?)
    }
}

/// Shared handle used by tape ops so recording a resampling step does not
/// copy the matrix.
pub type SharedSparse = Arc<SparseMatrix>;
