//! Evaluation: confusion matrix, accuracy, per-stage sensitivity, Cohen's
//! kappa with its agreement-band wording, and macro one-vs-rest ROC-AUC.

use crate::error::{Error, Result};
use crate::types::{SleepStage, NUM_STAGES};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;

/// 5x5 counts; rows are expert labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn from_labels(y_true: &[SleepStage], y_pred: &[SleepStage]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Shape(format!(
                "{} true labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut counts = [[0u64; NUM_STAGES]; NUM_STAGES];
        for (t, p) in y_true.iter().zip(y_pred) {
            counts[t.code()][p.code()] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..NUM_STAGES).map(|k| self.counts[k][k]).sum();
        trace as f64 / self.total() as f64
    }

    fn row_sums(&self) -> [u64; NUM_STAGES] {
        std::array::from_fn(|k| self.counts[k].iter().sum())
    }

    fn col_sums(&self) -> [u64; NUM_STAGES] {
        std::array::from_fn(|k| (0..NUM_STAGES).map(|r| self.counts[r][k]).sum())
    }

    /// Per-stage sensitivity (recall against expert labels); `NaN` when the
    /// stage never occurs in the expert labels.
    pub fn sensitivity(&self) -> [f64; NUM_STAGES] {
        let rows = self.row_sums();
        std::array::from_fn(|k| {
            if rows[k] == 0 {
                f64::NAN
            } else {
                self.counts[k][k] as f64 / rows[k] as f64
            }
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("expert\\predicted,Wake,N1,N2,N3,REM\n");
        for (k, row) in self.counts.iter().enumerate() {
            let name = SleepStage::from_code(k).unwrap().name();
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }
}

/// Cohen's kappa from a confusion matrix: chance agreement is the product of
/// marginal label frequencies summed over stages.
pub fn kappa_oracle_check(confusion: &ConfusionMatrix) -> Result<f64> {
    let n = confusion.total();
    if n == 0 {
        return Err(Error::Eval("kappa of an empty confusion matrix".into()));
    }
    let acc = confusion.accuracy();
    let rows = confusion.row_sums();
    let cols = confusion.col_sums();
    let n2 = (n as f64) * (n as f64);
    let pe: f64 = (0..NUM_STAGES)
        .map(|k| rows[k] as f64 * cols[k] as f64)
        .sum::<f64>()
        / n2;
    Ok(kappa_from(acc, pe))
}

fn kappa_from(acc: f64, pe: f64) -> f64 {
    if (1.0 - pe).abs() < 1e-15 {
        // Degenerate single-class agreement: perfect iff accuracy is perfect.
        if acc >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (acc - pe) / (1.0 - pe)
    }
}

/// Agreement wording for a kappa value.
pub fn kappa_band(kappa: f64) -> &'static str {
    if kappa > 0.81 {
        "almost perfect agreement"
    } else if kappa > 0.61 {
        "substantial agreement"
    } else if kappa > 0.41 {
        "moderate agreement"
    } else if kappa > 0.21 {
        "fair agreement"
    } else if kappa > 0.01 {
        "slight agreement"
    } else {
        "less than chance agreement"
    }
}

/// Area under the ROC curve for one binary problem, by trapezoid over the
/// score thresholds (ties contribute diagonal segments). `None` when either
/// class is absent.
fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    let mut area = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Some(area / (n_pos as f64 * n_neg as f64))
}

/// Macro ROC-AUC: unweighted mean of the one-vs-rest AUCs over the stages
/// present in both classes; `None` if no stage yields a defined AUC.
pub fn macro_roc_auc(y_true: &[SleepStage], scores: &Array2<f64>) -> Option<f64> {
    let mut aucs = Vec::new();
    for k in 0..NUM_STAGES {
        let positive: Vec<bool> = y_true.iter().map(|y| y.code() == k).collect();
        let class_scores: Vec<f64> = scores.column(k).to_vec();
        if let Some(a) = binary_auc(&class_scores, &positive) {
            aucs.push(a);
        }
    }
    if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub kappa: f64,
    /// Absent when no scores were provided or no stage had a defined AUC.
    pub roc_auc_macro: Option<f64>,
    /// Per-stage recall; `NaN` (JSON `null`) for stages absent from the
    /// expert labels.
    pub sensitivity: [f64; NUM_STAGES],
    pub confusion: ConfusionMatrix,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy : {:.4}", self.accuracy)?;
        writeln!(f, "kappa    : {:.4} ({})", self.kappa, kappa_band(self.kappa))?;
        match self.roc_auc_macro {
            Some(a) => writeln!(f, "macro AUC: {a:.4}")?,
            None => writeln!(f, "macro AUC: n/a")?,
        }
        writeln!(f, "sensitivity per stage:")?;
        for (k, s) in self.sensitivity.iter().enumerate() {
            let name = SleepStage::from_code(k).unwrap().name();
            if s.is_nan() {
                writeln!(f, "  {name:4} : n/a")?;
            } else {
                writeln!(f, "  {name:4} : {s:.4}")?;
            }
        }
        writeln!(f, "confusion matrix (rows = expert, cols = predicted):")?;
        for row in self.confusion.counts.iter() {
            writeln!(f, "  {row:?}")?;
        }
        Ok(())
    }
}

/// Computes every metric. `scores` rows must align with the labels and hold
/// per-stage probabilities (or any ranking scores) for the AUC.
pub fn evaluate(
    y_true: &[SleepStage],
    y_pred: &[SleepStage],
    scores: Option<&Array2<f64>>,
) -> Result<EvalReport> {
    if y_true.is_empty() {
        return Err(Error::Eval("cannot evaluate zero epochs".into()));
    }
    if let Some(s) = scores {
        if s.nrows() != y_true.len() || s.ncols() != NUM_STAGES {
            return Err(Error::Shape(format!(
                "scores are {}x{}, expected {}x{NUM_STAGES}",
                s.nrows(),
                s.ncols(),
                y_true.len()
            )));
        }
    }
    let confusion = ConfusionMatrix::from_labels(y_true, y_pred)?;
    let n = y_true.len() as f64;

    let accuracy = confusion.accuracy();
    let mut true_counts = [0f64; NUM_STAGES];
    let mut pred_counts = [0f64; NUM_STAGES];
    for (t, p) in y_true.iter().zip(y_pred) {
        true_counts[t.code()] += 1.0;
        pred_counts[p.code()] += 1.0;
    }
    let pe: f64 = (0..NUM_STAGES)
        .map(|k| pred_counts[k] * true_counts[k])
        .sum::<f64>()
        / (n * n);
    let kappa = kappa_from(accuracy, pe);
    let roc_auc_macro = scores.and_then(|s| macro_roc_auc(y_true, s));

    Ok(EvalReport {
        accuracy,
        kappa,
        roc_auc_macro,
        sensitivity: confusion.sensitivity(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn stages(codes: &[usize]) -> Vec<SleepStage> {
        codes.iter().map(|&c| SleepStage::from_code(c).unwrap()).collect()
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let y = stages(&[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        let report = evaluate(&y, &y, None).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.kappa, 1.0);
        for s in report.sensitivity {
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn two_class_reduction_matches_hand_computation() {
        // true [A,A,B,B], predicted all A: Acc 0.5, p_e 0.5, kappa 0.
        let y_true = stages(&[0, 0, 1, 1]);
        let y_pred = stages(&[0, 0, 0, 0]);
        let report = evaluate(&y_true, &y_pred, None).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.kappa, 0.0);
    }

    #[test]
    fn perfect_and_inverted_rankings_bound_the_auc() {
        let y = stages(&[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        let mut perfect = Array2::zeros((10, NUM_STAGES));
        for (i, label) in y.iter().enumerate() {
            perfect[[i, label.code()]] = 1.0;
        }
        let report = evaluate(&y, &y, Some(&perfect)).unwrap();
        assert_eq!(report.roc_auc_macro, Some(1.0));

        let inverted = perfect.mapv(|v| 1.0 - v);
        let report = evaluate(&y, &y, Some(&inverted)).unwrap();
        assert_eq!(report.roc_auc_macro, Some(0.0));
    }

    #[test]
    fn kappa_oracle_on_diagonal_and_uniform_matrices() {
        let mut diag = [[0u64; NUM_STAGES]; NUM_STAGES];
        for (k, row) in diag.iter_mut().enumerate() {
            row[k] = 7;
        }
        let kappa = kappa_oracle_check(&ConfusionMatrix { counts: diag }).unwrap();
        assert_eq!(kappa, 1.0);

        let uniform = [[3u64; NUM_STAGES]; NUM_STAGES];
        let kappa = kappa_oracle_check(&ConfusionMatrix { counts: uniform }).unwrap();
        assert!(kappa.abs() < 1e-15, "uniform kappa {kappa}");
    }

    #[test]
    fn kappa_oracle_agrees_with_evaluate_on_random_sets() {
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        for _ in 0..300 {
            let n = rng.gen_range(5..60);
            let y_true = stages(&(0..n).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
            let y_pred = stages(&(0..n).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
            let report = evaluate(&y_true, &y_pred, None).unwrap();
            let oracle = kappa_oracle_check(&report.confusion).unwrap();
            assert!(
                (report.kappa - oracle).abs() < 1e-12,
                "kappa {} vs oracle {oracle}",
                report.kappa
            );
        }
    }

    #[test]
    fn metrics_are_invariant_under_joint_permutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let n = 200;
        let y_true = stages(&(0..n).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let y_pred = stages(&(0..n).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let a = evaluate(&y_true, &y_pred, None).unwrap();

        let mut idx: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let yt: Vec<SleepStage> = idx.iter().map(|&i| y_true[i]).collect();
        let yp: Vec<SleepStage> = idx.iter().map(|&i| y_pred[i]).collect();
        let b = evaluate(&yt, &yp, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_independent_scores_give_half_auc() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let n = 2000;
        let y = stages(&(0..n).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let scores = Array2::from_shape_fn((n, NUM_STAGES), |_| rng.gen_range(0.0..1.0));
        let auc = macro_roc_auc(&y, &scores).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "random-score AUC {auc}");

        let constant = Array2::from_elem((n, NUM_STAGES), 0.3);
        let auc = macro_roc_auc(&y, &constant).unwrap();
        assert!((auc - 0.5).abs() < 1e-12, "constant-score AUC {auc}");
    }

    #[test]
    fn kappa_is_bounded_by_accuracy() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..100 {
            let n = rng.gen_range(10..100);
            let y_true = stages(&(0..n).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
            let y_pred = stages(&(0..n).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
            let r = evaluate(&y_true, &y_pred, None).unwrap();
            if r.accuracy < 1.0 {
                assert!(r.kappa <= r.accuracy + 1e-12);
            }
        }
    }

    #[test]
    fn absent_stage_sensitivity_is_nan() {
        let y_true = stages(&[0, 0, 1]);
        let y_pred = stages(&[0, 1, 1]);
        let r = evaluate(&y_true, &y_pred, None).unwrap();
        assert!(r.sensitivity[0].is_finite());
        assert!(r.sensitivity[4].is_nan());
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let a = stages(&[0, 1]);
        let b = stages(&[0]);
        assert!(matches!(evaluate(&a, &b, None), Err(Error::Shape(_))));
    }

    #[test]
    fn report_text_mentions_agreement_band() {
        let y = stages(&[0, 1, 2, 3, 4]);
        let r = evaluate(&y, &y, None).unwrap();
        let text = r.to_string();
        assert!(text.contains("almost perfect agreement"), "{text}");
    }
}
