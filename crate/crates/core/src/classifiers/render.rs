//! Annotated rendering of a fitted decision tree over rule-similarity
//! features, as indented text and as a dot-compatible graph description.
//!
//! Internal nodes carry six rows: the rule's feature and grouping criterion,
//! its channels, the cosine threshold, the percentage of training data
//! passing through, the five stage ratios in [Wake, N1, N2, N3, REM] order,
//! and the majority stage. Leaves carry the last three rows.

use super::tree::{DecisionTree, TreeNode};
use crate::error::{Error, Result};
use crate::rulebank::RuleBank;
use std::fmt::Write;

fn node_rows(
    node: &TreeNode,
    bank: &RuleBank,
    active: &[usize],
) -> Result<Vec<String>> {
    let mut rows = Vec::with_capacity(6);
    if let Some(split) = &node.split {
        let rule_idx = *active.get(split.feature_index).ok_or_else(|| {
            Error::Render(format!(
                "feature index {} outside the bank's {} active rules",
                split.feature_index,
                active.len()
            ))
        })?;
        let rule = bank.rules()[rule_idx];
        rows.push(rule.describe());
        rows.push(rule.target.label());
        rows.push(format!("similarity >= {:.2}", split.threshold));
    }
    rows.push(format!("{:.1}% of training data", 100.0 * node.n_fraction));
    let ratios: Vec<String> = node.class_ratios.iter().map(|r| format!("{r:.2}")).collect();
    rows.push(format!("[{}]", ratios.join(", ")));
    rows.push(node.majority.name().to_string());
    Ok(rows)
}

/// Indented text rendering. Left children satisfy `similarity < threshold`,
/// right children `similarity >= threshold`.
pub fn render_tree_text(tree: &DecisionTree, bank: &RuleBank) -> Result<String> {
    let active = bank.active_rules();
    let mut out = String::new();
    fn walk(
        node: &TreeNode,
        bank: &RuleBank,
        active: &[usize],
        indent: usize,
        branch: &str,
        out: &mut String,
    ) -> Result<()> {
        let pad = "    ".repeat(indent);
        let rows = node_rows(node, bank, active)?;
        writeln!(out, "{pad}{branch}{}", rows.join(" | ")).expect("string write");
        if let Some(split) = &node.split {
            walk(&split.left, bank, active, indent + 1, "< : ", out)?;
            walk(&split.right, bank, active, indent + 1, ">=: ", out)?;
        }
        Ok(())
    }
    walk(&tree.root, bank, &active, 0, "", &mut out)?;
    Ok(out)
}

/// Graphviz-compatible dot document with one record-style label per node.
pub fn render_tree_dot(tree: &DecisionTree, bank: &RuleBank) -> Result<String> {
    let active = bank.active_rules();
    let mut out = String::from("digraph stage_tree {\n  node [shape=box, fontname=\"monospace\"];\n");
    let mut counter = 0usize;
    fn walk(
        node: &TreeNode,
        bank: &RuleBank,
        active: &[usize],
        counter: &mut usize,
        out: &mut String,
    ) -> Result<usize> {
        let id = *counter;
        *counter += 1;
        let rows = node_rows(node, bank, active)?;
        let label = rows.join("\\n").replace('"', "'");
        writeln!(out, "  n{id} [label=\"{label}\"];").expect("string write");
        if let Some(split) = &node.split {
            let l = walk(&split.left, bank, active, counter, out)?;
            let r = walk(&split.right, bank, active, counter, out)?;
            writeln!(out, "  n{id} -> n{l} [label=\"<\"];").expect("string write");
            writeln!(out, "  n{id} -> n{r} [label=\">=\"];").expect("string write");
        }
        Ok(id)
    }
    walk(&tree.root, bank, &active, &mut counter, &mut out)?;
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::tree::DecisionTree;
    use crate::dsp::EpochFeatures;
    use crate::types::SleepStage;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn fitted_bank() -> RuleBank {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let features: Vec<EpochFeatures> = (0..30)
            .map(|_| {
                let mut f = EpochFeatures {
                    band_power: [[0.0; 4]; 9],
                    amplitude: [0.0; 9],
                    kurtosis: [0.0; 9],
                    spindle_sec: [0.0; 3],
                    sws_sec: [0.0; 3],
                };
                for row in f.band_power.iter_mut() {
                    for v in row.iter_mut() {
                        *v = rng.gen_range(0.0..10.0);
                    }
                }
                f
            })
            .collect();
        let mut bank = RuleBank::build();
        bank.fit_thresholds(&features).unwrap();
        bank
    }

    fn toy_tree(n_features: usize) -> DecisionTree {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((40, n_features), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<SleepStage> = (0..40)
            .map(|_| SleepStage::from_code(rng.gen_range(0..5)).unwrap())
            .collect();
        DecisionTree::fit(&x, &labels, 3, 2).unwrap()
    }

    #[test]
    fn root_reports_hundred_percent() {
        let bank = fitted_bank();
        let tree = toy_tree(240);
        let text = render_tree_text(&tree, &bank).unwrap();
        assert!(text.contains("100.0% of training data"), "{text}");
    }

    #[test]
    fn single_leaf_tree_renders_three_rows() {
        let bank = fitted_bank();
        let x = ndarray::array![[0.3], [0.4]];
        let tree = DecisionTree::fit(&x, &[SleepStage::N2, SleepStage::N2], 9, 1).unwrap();
        let text = render_tree_text(&tree, &bank).unwrap();
        let first_line = text.lines().next().unwrap();
        assert_eq!(first_line.split(" | ").count(), 3);
        assert!(first_line.ends_with("N2"));
    }

    #[test]
    fn rendered_ratios_resum_to_one() {
        let bank = fitted_bank();
        let tree = toy_tree(240);
        let text = render_tree_text(&tree, &bank).unwrap();
        for line in text.lines() {
            let bracket = line.split('[').nth(1).unwrap().split(']').next().unwrap();
            let sum: f64 = bracket.split(", ").map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() <= 0.01 + 1e-9, "ratios {bracket} sum {sum}");
        }
    }

    #[test]
    fn out_of_range_feature_index_errors() {
        let bank = fitted_bank();
        // Tree over 400 features: indices beyond 240 cannot map to the bank.
        let mut tree = toy_tree(2);
        if let Some(split) = tree.root.split.as_mut() {
            split.feature_index = 399;
        }
        match render_tree_text(&tree, &bank) {
            Err(Error::Render(_)) => {}
            other => panic!("expected render error, got {other:?}"),
        }
    }

    #[test]
    fn dot_output_is_structurally_sound() {
        let bank = fitted_bank();
        let tree = toy_tree(240);
        let dot = render_tree_dot(&tree, &bank).unwrap();
        assert!(dot.starts_with("digraph"));
        assert!(dot.trim_end().ends_with('}'));
        let nodes = dot
            .lines()
            .filter(|l| l.contains("[label=") && !l.contains("->"))
            .count();
        let arrows = dot.lines().filter(|l| l.contains("->")).count();
        assert_eq!(arrows + 1, nodes, "tree edge/node count mismatch in:\n{dot}");
        assert_eq!(arrows % 2, 0, "binary tree must have an even edge count");
    }
}
