use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Coordinate-format matrix. Duplicate entries are summed whenever the matrix
/// is converted to another representation.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> TripletMatrix<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(
        rows: usize,
        cols: usize,
        entries: Vec<(usize, usize, T)>,
    ) -> Result<Self> {
        for &(row, col, _) in &entries {
            if row >= rows || col >= cols {
                return Err(Error::IndexOutOfBounds {
                    row,
                    col,
                    rows,
                    cols,
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn push(&mut self, row: usize, col: usize, value: T) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::IndexOutOfBounds {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        self.entries.push((row, col, value));
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(usize, usize, T)> {
        self.entries
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            d[(i, j)] += v;
        }
        d
    }

    /// Collects the nonzero entries of a dense matrix.
    pub fn from_dense(d: &DenseMatrix<T>) -> Self {
        let mut entries = Vec::new();
        for j in 0..d.cols() {
            for (i, &v) in d.col(j).iter().enumerate() {
                if v != T::zero() {
                    entries.push((i, j, v));
                }
            }
        }
        Self {
            rows: d.rows(),
            cols: d.cols(),
            entries,
        }
    }

    /// Per-row `(first, last)` column of stored entries; `None` for empty rows.
    ///
    /// Explicitly stored zeros count as structural nonzeros.
    pub fn row_spans(&self) -> Vec<Option<(usize, usize)>> {
        let mut spans: Vec<Option<(usize, usize)>> = vec![None; self.rows];
        for &(i, j, _) in &self.entries {
            spans[i] = Some(match spans[i] {
                None => (j, j),
                Some((lo, hi)) => (lo.min(j), hi.max(j)),
            });
        }
        spans
    }

    /// Maximum over rows of `last - first` stored column.
    pub fn bandwidth(&self) -> usize {
        self.row_spans()
            .into_iter()
            .flatten()
            .map(|(lo, hi)| hi - lo)
            .max()
            .unwrap_or(0)
    }

    /// Envelope width in row order: the maximum over rows `i` of
    /// `max(last_0..=last_i) - first_i`.
    ///
    /// Unlike [`bandwidth`](Self::bandwidth) this depends on the row order,
    /// and it bounds the working width of a row-by-row elimination.
    pub fn envelope_bandwidth(&self) -> usize {
        let mut reach = 0usize;
        let mut width = 0usize;
        for (lo, hi) in self.row_spans().into_iter().flatten() {
            reach = reach.max(hi);
            width = width.max(reach - lo);
        }
        width
    }

    /// Number of distinct stored positions.
    pub fn structural_nnz(&self) -> usize {
        let mut pos: Vec<(usize, usize)> = self.entries.iter().map(|&(i, j, _)| (i, j)).collect();
        pos.sort_unstable();
        pos.dedup();
        pos.len()
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.iter().map(|&(i, j, v)| (j, i, v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TripletMatrix<U> {
        TripletMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .map(|&(i, j, v)| (i, j, U::of(v.as_f64())))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let t = TripletMatrix::<f64>::from_entries(1, 1, vec![(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(t.to_dense()[(0, 0)], 3.0);
        assert_eq!(t.structural_nnz(), 1);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mut t = TripletMatrix::<f32>::new(2, 2);
        assert!(matches!(
            t.push(2, 0, 1.0),
            Err(Error::IndexOutOfBounds { row: 2, .. })
        ));
        assert!(TripletMatrix::<f32>::from_entries(2, 2, vec![(0, 5, 1.0)]).is_err());
    }

    #[test]
    fn spans_and_bandwidth() {
        let t = TripletMatrix::<f64>::from_entries(
            3,
            4,
            vec![(0, 0, 1.0), (0, 2, 1.0), (2, 3, 1.0)],
        )
        .unwrap();
        assert_eq!(t.row_spans(), vec![Some((0, 2)), None, Some((3, 3))]);
        assert_eq!(t.bandwidth(), 2);
    }
}
