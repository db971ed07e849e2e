use trimodal_autodiff::Tensor;

use crate::error::{Error, Result};

/// Row-wise L2-normalized `N×d` embedding matrix for one view of a pool.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet(Tensor);

/// Tolerance on row norms accepted by [`EmbeddingSet::new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

impl EmbeddingSet {
    /// Wraps a matrix whose rows are already unit-norm.
    pub fn new(matrix: Tensor) -> Result<Self> {
        if !matrix.is_matrix() {
            return Err(Error::InvalidArgument(format!(
                "embedding set must be a matrix, got shape {:?}",
                matrix.shape()
            )));
        }
        for i in 0..matrix.rows() {
            let norm = row_norm(matrix.row(i));
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self(matrix))
    }

    /// Normalizes each row; rows with norm at or below `1e-12` are rejected.
    pub fn normalize(mut matrix: Tensor) -> Result<Self> {
        for i in 0..matrix.rows() {
            let norm = row_norm(matrix.row(i));
            if !(norm > trimodal_autodiff::NORM_EPSILON) {
                return Err(Error::Autodiff(trimodal_autodiff::AutodiffError::DegenerateEmbedding {
                    row: i,
                    norm,
                }));
            }
            for v in matrix.row_mut(i) {
                *v /= norm;
            }
        }
        Ok(Self(matrix))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.0
    }

    pub fn into_matrix(self) -> Tensor {
        self.0
    }

    /// Rows reordered so that row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.0.numel());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Self(Tensor::matrix(self.len(), self.dim(), data).expect("same shape"))
    }
}

pub(crate) fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
