//! Exact k-nearest-neighbor queries over a fixed reference matrix.
//!
//! Brute force on purpose: every caller in this crate works at a scale
//! where a linear scan is both fast enough and bit-reproducible. Distances
//! are Euclidean; equidistant candidates are ordered by ascending reference
//! index so results never depend on sort internals.

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeighborsError {
    #[error("reference matrix has no rows")]
    Empty,
    #[error("non-finite reference value at row {row}")]
    NonFinite { row: usize },
    #[error("query dimension {found} does not match reference dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("k = {k} exceeds the {available} available candidates")]
    KTooLarge { k: usize, available: usize },
    #[error("row {row} is out of bounds for {n} references")]
    RowRange { row: usize, n: usize },
}

/// Reference point set answering exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Array2<f64>,
}

impl NeighborIndex {
    pub fn new(points: Array2<f64>) -> Result<Self, NeighborsError> {
        if points.nrows() == 0 {
            return Err(NeighborsError::Empty);
        }
        for (row, r) in points.rows().into_iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(NeighborsError::NonFinite { row });
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Indices of the `k` nearest references to `query`, nearest first.
    /// `exclude` removes one reference index from consideration (used for
    /// self-queries). Errors when `k` exceeds the candidate count.
    pub fn knn(
        &self,
        query: ArrayView1<'_, f64>,
        k: usize,
        exclude: Option<usize>,
    ) -> Result<Vec<usize>, NeighborsError> {
        if k == 0 {
            return Err(NeighborsError::ZeroK);
        }
        if query.len() != self.dim() {
            return Err(NeighborsError::DimMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        let excluded = exclude.map_or(0, |e| usize::from(e < self.len()));
        let available = self.len() - excluded;
        if k > available {
            return Err(NeighborsError::KTooLarge { k, available });
        }

        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(available);
        for (i, row) in self.points.rows().into_iter().enumerate() {
            if exclude == Some(i) {
                continue;
            }
            let d2: f64 = row
                .iter()
                .zip(query.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            ranked.push((d2, i));
        }
        ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(ranked[..k].iter().map(|&(_, i)| i).collect())
    }

    /// k nearest references to reference row `row` itself.
    pub fn knn_of_row(
        &self,
        row: usize,
        k: usize,
        exclude_self: bool,
    ) -> Result<Vec<usize>, NeighborsError> {
        if row >= self.len() {
            return Err(NeighborsError::RowRange { row, n: self.len() });
        }
        let exclude = exclude_self.then_some(row);
        self.knn(self.points.row(row), k, exclude)
    }
}
