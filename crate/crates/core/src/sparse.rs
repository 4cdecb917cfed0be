//! Compressed-row sparse matrices.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

/// Square CSR matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    inner: CsMat<f64>,
}

impl SparseMatrix {
    /// Assembles from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut tri = TriMat::new((n, n));
        for (r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::Dimension(format!("entry ({r}, {c}) outside a {n}×{n} matrix")));
            }
            if !v.is_finite() {
                return Err(Error::Dimension(format!("non-finite entry at ({r}, {c})")));
            }
            tri.add_triplet(r, c, v);
        }
        Ok(Self { inner: tri.to_csr() })
    }

    /// Assembles from per-row `(col, value)` lists whose columns are unique.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        indptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Dimension(format!("duplicate entry ({r}, {})", w[0].0)));
                }
            }
            for (c, v) in row {
                if c >= n {
                    return Err(Error::Dimension(format!("entry ({r}, {c}) outside a {n}×{n} matrix")));
                }
                if !v.is_finite() {
                    return Err(Error::Dimension(format!("non-finite entry at ({r}, {c})")));
                }
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            inner: CsMat::new((n, n), indptr, indices, data),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: CsMat::eye(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.inner.indptr().outer_inds_sz(i);
        (&self.inner.indices()[range.clone()], &self.inner.data()[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.dim()).all(|i| {
            let (cols, vals) = self.row(i);
            cols == [i] && vals == [1.0]
        })
    }

    /// `y = M x`, accumulating each row in column order.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} against a {}×{} matrix",
                x.len(),
                self.dim(),
                self.dim()
            )));
        }
        let mut y = vec![0.0; self.dim()];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            *yi = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m[(i, *c)] = *v;
            }
        }
        m
    }

    /// Matrix Market coordinate text, 1-based indices, row-major order.
    pub fn to_matrix_market(&self) -> String {
        let mut out = Vec::new();
        self.write_matrix_market_to(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("ASCII output")
    }

    fn write_matrix_market_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.dim(), self.dim(), self.nnz())?;
        for i in 0..self.dim() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.16e}", i + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_matrix_market_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Self> {
        let tri: TriMat<f64> = sprs::io::read_matrix_market(path).map_err(|e| Error::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        if tri.rows() != tri.cols() {
            return Err(Error::Dimension("matrix is not square".into()));
        }
        Ok(Self { inner: tri.to_csr() })
    }

    pub(crate) fn csr(&self) -> &CsMat<f64> {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(3, [(0, 0, 2.0), (2, 1, -1.5), (0, 2, 0.25), (1, 1, 1.0), (0, 0, 1.0)]).unwrap()
    }

    #[test]
    fn triplets_are_summed_and_sorted() {
        let m = sample();
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.row(0), (&[0usize, 2][..], &[3.0, 0.25][..]));
        assert_eq!(m.get(2, 1), -1.5);
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(m.matvec(&[1.0, 2.0, 4.0]).unwrap(), vec![4.0, 2.0, -3.0]);
        assert!(m.matvec(&[1.0]).is_err());
    }

    #[test]
    fn rows_reject_duplicates() {
        assert!(SparseMatrix::from_rows(vec![vec![(0, 1.0), (0, 2.0)]]).is_err());
        let m = SparseMatrix::from_rows(vec![vec![(1, 1.0), (0, 2.0)], vec![(1, 3.0)]]).unwrap();
        assert_eq!(m.row(0).0, &[0, 1]);
    }

    #[test]
    fn identity_detection() {
        assert!(SparseMatrix::identity(4).is_identity());
        assert!(!sample().is_identity());
    }

    #[test]
    fn matrix_market_round_trip() {
        let m = SparseMatrix::from_triplets(3, [(0, 0, 0.1), (1, 2, -1.0 / 3.0), (2, 0, 1e-300)]).unwrap();
        let text = m.to_matrix_market();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n3 3 3\n1 1 "));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        m.write_matrix_market(&path).unwrap();
        assert_eq!(SparseMatrix::read_matrix_market(&path).unwrap(), m);
    }
}
