//! Interpretable final-stage classifiers over similarity (or raw rule)
//! features, plus the annotated tree renderer.

pub mod gbt;
pub mod logreg;
pub mod render;
pub mod tree;

pub use gbt::{gbt_fit, GbtModel};
pub use logreg::{logreg_fit, LogRegModel};
pub use render::{render_tree_dot, render_tree_text};
pub use tree::{DecisionTree, RouteStep, TreeNode, TreeSplit};

use crate::types::{SleepStage, NUM_STAGES};
use serde::{Deserialize, Serialize};

/// Numerically stable softmax over a stage-score array.
pub(crate) fn softmax5(z: &[f64; NUM_STAGES]) -> [f64; NUM_STAGES] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_STAGES];
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

/// Any of the final-stage models, as persisted in classifier artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StageModel {
    Tree(DecisionTree),
    LogReg(LogRegModel),
    Gbt(GbtModel),
}

impl StageModel {
    pub fn predict_proba(&self, row: &[f64]) -> [f64; NUM_STAGES] {
        match self {
            StageModel::Tree(t) => t.predict(row).1,
            StageModel::LogReg(m) => m.predict_proba(row),
            StageModel::Gbt(m) => m.predict_proba(row),
        }
    }

    pub fn predict(&self, row: &[f64]) -> SleepStage {
        match self {
            StageModel::Tree(t) => t.predict(row).0,
            StageModel::LogReg(m) => m.predict(row),
            StageModel::Gbt(m) => m.predict(row),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StageModel::Tree(_) => "dt",
            StageModel::LogReg(_) => "lr",
            StageModel::Gbt(_) => "gbt",
        }
    }
}
