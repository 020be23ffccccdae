//! Rule prototypes and relevance matching.
//!
//! A prototype is the sum, over all training epochs satisfying one rule, of
//! those epochs' column-normalized embeddings. Epochs are then described by
//! their cosine similarity to every prototype; these similarities are the
//! features the interpretable classifiers consume.

use crate::embedder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rulebank::RuleAssignment;
use ndarray::Array2;

const NORM_EPS: f64 = 1e-12;

/// Prototype embeddings, one column per rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatrix {
    /// dim x k matrix; column j is the prototype of rule `rule_indices[j]`.
    pub matrix: Array2<f64>,
    /// Bank rule index of each column.
    pub rule_indices: Vec<usize>,
}

impl PrototypeMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_rules(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Cosine similarities, one row per epoch and one column per rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub matrix: Array2<f64>,
    pub rule_indices: Vec<usize>,
}

/// Divides every column by its L2 norm over the rows; all-zero columns stay
/// zero.
pub fn column_normalize(h: &EmbeddingMatrix) -> Array2<f64> {
    let mut out = h.matrix.clone();
    for mut col in out.columns_mut() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > NORM_EPS {
            col.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Prototype matrix from normalized embeddings and a binary rule assignment:
/// the matrix product of the transposed embeddings with the assignment.
pub fn build_prototypes(
    h_normalized: &Array2<f64>,
    assignment: &RuleAssignment,
) -> Result<PrototypeMatrix> {
    if h_normalized.nrows() != assignment.n_epochs() {
        return Err(Error::Shape(format!(
            "{} embedding rows vs {} assignment rows",
            h_normalized.nrows(),
            assignment.n_epochs()
        )));
    }
    let r = assignment.to_f64();
    let matrix = h_normalized.t().dot(&r);
    Ok(PrototypeMatrix {
        matrix,
        rule_indices: assignment.rule_indices.clone(),
    })
}

/// Cosine similarity of every (raw) embedding row against every prototype
/// column. A zero embedding or zero prototype yields similarity 0.
pub fn similarity(h: &EmbeddingMatrix, prototypes: &PrototypeMatrix) -> Result<SimilarityMatrix> {
    if h.dim() != prototypes.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs prototype dim {}",
            h.dim(),
            prototypes.dim()
        )));
    }
    let row_norms: Vec<f64> = h
        .matrix
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let col_norms: Vec<f64> = prototypes
        .matrix
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut matrix = h.matrix.dot(&prototypes.matrix);
    for (i, mut row) in matrix.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let denom = row_norms[i] * col_norms[j];
            *v = if denom > NORM_EPS { *v / denom } else { 0.0 };
        }
    }
    Ok(SimilarityMatrix {
        matrix,
        rule_indices: prototypes.rule_indices.clone(),
    })
}
