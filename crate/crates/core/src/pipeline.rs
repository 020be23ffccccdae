//! End-to-end orchestration: split, rule fitting and selection, CNN
//! training, prototype construction, classifier fitting, evaluation, and the
//! artifact store shared by the command-line tools.

use crate::classifiers::{gbt_fit, logreg_fit, DecisionTree, StageModel};
use crate::dsp::{EpochFeatures, FeatureExtractor};
use crate::embedder::{
    self, embed_all, load_checkpoint, save_checkpoint, CnnConfig, CnnModel,
};
use crate::error::{Error, Result};
use crate::prototypes::{build_prototypes, column_normalize, similarity, PrototypeMatrix};
use crate::rulebank::{RuleBank, FULL_BANK_SIZE};
use crate::types::{split_by_subject, DatasetSplit, Recording, SleepStage, NUM_STAGES};
use crate::metrics::{evaluate, EvalReport};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

/// Which features feed the final classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    /// Cosine similarities to rule prototypes.
    Prototype,
    /// The binary rule assignment itself.
    Rule,
    /// The CNN's own softmax head (the performance-ceiling baseline).
    CnnHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    Tree,
    LogReg,
    Gbt,
}

/// The classifier menu exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierChoice {
    Dt,
    Lr,
    Gbt,
    RuleDt,
    RuleLr,
    RuleGbt,
    Cnn,
}

impl ClassifierChoice {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "dt" => Self::Dt,
            "lr" => Self::Lr,
            "gbt" => Self::Gbt,
            "rule-dt" => Self::RuleDt,
            "rule-lr" => Self::RuleLr,
            "rule-gbt" => Self::RuleGbt,
            "cnn" => Self::Cnn,
            other => {
                return Err(Error::State(format!(
                    "unknown classifier {other:?} (expected dt|lr|gbt|rule-dt|rule-lr|rule-gbt|cnn)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dt => "dt",
            Self::Lr => "lr",
            Self::Gbt => "gbt",
            Self::RuleDt => "rule-dt",
            Self::RuleLr => "rule-lr",
            Self::RuleGbt => "rule-gbt",
            Self::Cnn => "cnn",
        }
    }

    pub fn source(self) -> FeatureSource {
        match self {
            Self::Dt | Self::Lr | Self::Gbt => FeatureSource::Prototype,
            Self::RuleDt | Self::RuleLr | Self::RuleGbt => FeatureSource::Rule,
            Self::Cnn => FeatureSource::CnnHead,
        }
    }

    pub fn family(self) -> Option<ModelFamily> {
        match self {
            Self::Dt | Self::RuleDt => Some(ModelFamily::Tree),
            Self::Lr | Self::RuleLr => Some(ModelFamily::LogReg),
            Self::Gbt | Self::RuleGbt => Some(ModelFamily::Gbt),
            Self::Cnn => None,
        }
    }
}

/// Everything the pipeline needs to run one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub test_fraction: f64,
    /// Number of rules kept by selection.
    pub rule_k: usize,
    /// `false` trains on all 240 rules without selection.
    pub select_rules: bool,
    pub cnn: CnnConfig,
    pub classifier: ClassifierChoice,
    pub tree_depth: usize,
    pub min_leaf: usize,
    pub gbt_trees: usize,
    pub gbt_shrinkage: f64,
    pub gbt_depth: usize,
    pub lr_l2: f64,
    pub lr_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            test_fraction: 0.1,
            rule_k: 96,
            select_rules: true,
            cnn: CnnConfig::reduced(),
            classifier: ClassifierChoice::Dt,
            tree_depth: 9,
            min_leaf: 1,
            gbt_trees: 100,
            gbt_shrinkage: 0.1,
            gbt_depth: 3,
            lr_l2: 1e-4,
            lr_iters: 300,
        }
    }
}

/// Extracts features for every epoch of the given recordings, in order.
pub fn extract_features_all(recordings: &[&Recording]) -> Vec<EpochFeatures> {
    let extractor = FeatureExtractor::new();
    let epochs: Vec<_> = recordings.iter().flat_map(|r| r.epochs().iter()).collect();
    epochs.par_iter().map(|e| extractor.extract(e)).collect()
}

/// CNN softmax probabilities for every epoch, in order.
pub fn predict_probs_all(model: &CnnModel<f32>, recordings: &[&Recording]) -> Array2<f64> {
    let epochs: Vec<_> = recordings.iter().flat_map(|r| r.epochs().iter()).collect();
    let rows: Vec<Vec<f32>> = epochs
        .par_iter()
        .map(|e| {
            let input = model.epoch_input(e);
            model.forward_trace(&input).probs
        })
        .collect();
    let mut out = Array2::zeros((rows.len(), NUM_STAGES));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v as f64;
        }
    }
    out
}

fn labels_of(recordings: &[&Recording]) -> Result<Vec<SleepStage>> {
    let mut out = Vec::new();
    for r in recordings {
        let labels = r
            .labels()
            .ok_or_else(|| Error::State("recording lacks labels".into()))?;
        out.extend_from_slice(labels);
    }
    Ok(out)
}

/// A fully trained pipeline plus the cached train/test design matrices.
pub struct Experiment {
    pub config: PipelineConfig,
    pub split: DatasetSplit,
    pub bank: RuleBank,
    pub model: CnnModel<f32>,
    pub loss_trace: Vec<f64>,
    pub prototypes: PrototypeMatrix,
    pub classifier: Option<StageModel>,
    pub y_train: Vec<SleepStage>,
    pub y_test: Vec<SleepStage>,
    /// Cosine-similarity features.
    pub sim_train: Array2<f64>,
    pub sim_test: Array2<f64>,
    /// Binary rule features (as floats).
    pub rule_train: Array2<f64>,
    pub rule_test: Array2<f64>,
    /// CNN head probabilities.
    pub head_train: Array2<f64>,
    pub head_test: Array2<f64>,
}

impl Experiment {
    pub fn features_for(&self, source: FeatureSource, test: bool) -> &Array2<f64> {
        match (source, test) {
            (FeatureSource::Prototype, false) => &self.sim_train,
            (FeatureSource::Prototype, true) => &self.sim_test,
            (FeatureSource::Rule, false) => &self.rule_train,
            (FeatureSource::Rule, true) => &self.rule_test,
            (FeatureSource::CnnHead, false) => &self.head_train,
            (FeatureSource::CnnHead, true) => &self.head_test,
        }
    }

    /// Fits one classifier of the given choice on the training features.
    pub fn fit_classifier(&self, choice: ClassifierChoice) -> Result<Option<StageModel>> {
        self.fit_classifier_with_depth(choice, self.config.tree_depth)
    }

    pub fn fit_classifier_with_depth(
        &self,
        choice: ClassifierChoice,
        tree_depth: usize,
    ) -> Result<Option<StageModel>> {
        let x = self.features_for(choice.source(), false);
        Ok(match choice.family() {
            None => None,
            Some(ModelFamily::Tree) => Some(StageModel::Tree(DecisionTree::fit(
                x,
                &self.y_train,
                tree_depth,
                self.config.min_leaf,
            )?)),
            Some(ModelFamily::LogReg) => Some(StageModel::LogReg(
                logreg_fit(x, &self.y_train, self.config.lr_l2, self.config.lr_iters)?.0,
            )),
            Some(ModelFamily::Gbt) => Some(StageModel::Gbt(
                gbt_fit(
                    x,
                    &self.y_train,
                    self.config.gbt_trees,
                    self.config.gbt_shrinkage,
                    self.config.gbt_depth,
                )?
                .0,
            )),
        })
    }

    /// Test-set predictions and per-stage scores for a fitted choice.
    pub fn predict_test(
        &self,
        choice: ClassifierChoice,
        model: Option<&StageModel>,
    ) -> (Vec<SleepStage>, Array2<f64>) {
        let x = self.features_for(choice.source(), true);
        predictions_of(choice, model, x)
    }

    /// Evaluates one classifier choice on the held-out test subjects.
    pub fn evaluate_choice(
        &self,
        choice: ClassifierChoice,
        model: Option<&StageModel>,
    ) -> Result<EvalReport> {
        let (preds, scores) = self.predict_test(choice, model);
        evaluate(&self.y_test, &preds, Some(&scores))
    }
}

/// Predictions + scores for a model over a feature matrix.
pub fn predictions_of(
    choice: ClassifierChoice,
    model: Option<&StageModel>,
    x: &Array2<f64>,
) -> (Vec<SleepStage>, Array2<f64>) {
    let n = x.nrows();
    let mut scores = Array2::zeros((n, NUM_STAGES));
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = x.row(i).to_vec();
        let p: [f64; NUM_STAGES] = match (choice, model) {
            (ClassifierChoice::Cnn, _) => {
                // Head features are already the stage probabilities.
                std::array::from_fn(|k| row[k])
            }
            (_, Some(m)) => m.predict_proba(&row),
            (_, None) => [0.2; NUM_STAGES],
        };
        for (k, &v) in p.iter().enumerate() {
            scores[[i, k]] = v;
        }
        let best = (0..NUM_STAGES).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        preds.push(SleepStage::from_code(best).unwrap());
    }
    (preds, scores)
}

/// Runs the full training pipeline on labeled recordings.
pub fn build_experiment(recordings: &[Recording], config: &PipelineConfig) -> Result<Experiment> {
    let split = split_by_subject(recordings, config.test_fraction, config.seed)?;
    let (train, test): (Vec<&Recording>, Vec<&Recording>) = recordings
        .iter()
        .partition(|r| !split.is_test_subject(r.subject_id().unwrap_or("")));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split("empty train or test partition".into()));
    }

    let y_train = labels_of(&train)?;
    let y_test = labels_of(&test)?;

    // Expert rules: fit thresholds on the training split, select by ANOVA.
    let features_train = extract_features_all(&train);
    let features_test = extract_features_all(&test);
    let mut bank = RuleBank::build();
    bank.fit_thresholds(&features_train)?;
    if config.select_rules {
        let full = bank.assign(&features_train)?;
        bank.anova_select(&full, &y_train, config.rule_k)?;
    }
    let assign_train = bank.assign(&features_train)?;
    let assign_test = bank.assign(&features_test)?;

    // Signal embeddings.
    let cnn_cfg = CnnConfig { seed: config.seed, ..config.cnn.clone() };
    let (model, loss_trace) = embedder::train(&cnn_cfg, &train)?;
    let h_train = embed_all(&model, &train)?;
    let h_test = embed_all(&model, &test)?;

    // Prototypes from the training split only.
    let normalized = column_normalize(&h_train);
    let prototypes = build_prototypes(&normalized, &assign_train)?;
    let sim_train = similarity(&h_train, &prototypes)?.matrix;
    let sim_test = similarity(&h_test, &prototypes)?.matrix;

    let head_train = predict_probs_all(&model, &train);
    let head_test = predict_probs_all(&model, &test);

    let mut experiment = Experiment {
        config: config.clone(),
        split,
        bank,
        model,
        loss_trace,
        prototypes,
        classifier: None,
        y_train,
        y_test,
        sim_train,
        sim_test,
        rule_train: assign_train.to_f64(),
        rule_test: assign_test.to_f64(),
        head_train,
        head_test,
    };
    experiment.classifier = experiment.fit_classifier(config.classifier)?;
    Ok(experiment)
}

/// Rebuilds the cached design matrices from persisted artifacts and the
/// original corpus, without retraining anything. Used by the sweep commands.
pub fn experiment_from_artifacts(
    recordings: &[Recording],
    artifacts: &Artifacts,
) -> Result<Experiment> {
    let split = artifacts.split.clone();
    let (train, test): (Vec<&Recording>, Vec<&Recording>) = recordings
        .iter()
        .partition(|r| !split.is_test_subject(r.subject_id().unwrap_or("")));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(
            "artifact split does not match the given corpus".into(),
        ));
    }
    let y_train = labels_of(&train)?;
    let y_test = labels_of(&test)?;

    let features_train = extract_features_all(&train);
    let features_test = extract_features_all(&test);
    let assign_train = artifacts.bank.assign(&features_train)?;
    let assign_test = artifacts.bank.assign(&features_test)?;

    let h_train = embed_all(&artifacts.model, &train)?;
    let h_test = embed_all(&artifacts.model, &test)?;
    let sim_train = similarity(&h_train, &artifacts.prototypes)?.matrix;
    let sim_test = similarity(&h_test, &artifacts.prototypes)?.matrix;
    let head_train = predict_probs_all(&artifacts.model, &train);
    let head_test = predict_probs_all(&artifacts.model, &test);

    Ok(Experiment {
        config: artifacts.config.clone(),
        split,
        bank: artifacts.bank.clone(),
        model: artifacts.model.clone(),
        loss_trace: Vec::new(),
        prototypes: artifacts.prototypes.clone(),
        classifier: artifacts.classifier.clone(),
        y_train,
        y_test,
        sim_train,
        sim_test,
        rule_train: assign_train.to_f64(),
        rule_test: assign_test.to_f64(),
        head_train,
        head_test,
    })
}

/// Scores an arbitrary recording against trained artifacts.
pub struct ScoredRecording {
    pub predictions: Vec<SleepStage>,
    pub scores: Array2<f64>,
    pub similarities: Array2<f64>,
    pub report: Option<EvalReport>,
}

pub fn score_recording(artifacts: &Artifacts, recording: &Recording) -> Result<ScoredRecording> {
    let recs = [recording];
    let features = extract_features_all(&recs);
    let assignment = artifacts.bank.assign(&features)?;
    let h = embed_all(&artifacts.model, &recs)?;
    let sims = similarity(&h, &artifacts.prototypes)?.matrix;

    let choice = artifacts.config.classifier;
    let x = match choice.source() {
        FeatureSource::Prototype => sims.clone(),
        FeatureSource::Rule => assignment.to_f64(),
        FeatureSource::CnnHead => predict_probs_all(&artifacts.model, &recs),
    };
    let (predictions, scores) = predictions_of(choice, artifacts.classifier.as_ref(), &x);
    let report = match recording.labels() {
        Some(labels) => Some(evaluate(labels, &predictions, Some(&scores))?),
        None => None,
    };
    Ok(ScoredRecording {
        predictions,
        scores,
        similarities: sims,
        report,
    })
}

/// The persisted artifact set: checkpoint, rule bank, prototypes, classifier
/// and the run configuration (paths are fixed names inside one directory).
pub struct Artifacts {
    pub config: PipelineConfig,
    pub split: DatasetSplit,
    pub bank: RuleBank,
    pub model: CnnModel<f32>,
    pub prototypes: PrototypeMatrix,
    pub classifier: Option<StageModel>,
}

pub const CHECKPOINT_FILE: &str = "cnn.ckpt";
pub const RULEBANK_FILE: &str = "rulebank.json";
pub const PROTOTYPES_FILE: &str = "prototypes.bin";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const SPLIT_FILE: &str = "split.json";
pub const PIPELINE_FILE: &str = "pipeline.json";

impl Artifacts {
    pub fn from_experiment(e: &Experiment) -> Self {
        Self {
            config: e.config.clone(),
            split: e.split.clone(),
            bank: e.bank.clone(),
            model: e.model.clone(),
            prototypes: e.prototypes.clone(),
            classifier: e.classifier.clone(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&self.model, dir.join(CHECKPOINT_FILE))?;
        std::fs::write(dir.join(RULEBANK_FILE), self.bank.to_json()?)?;
        save_prototypes(&self.prototypes, dir.join(PROTOTYPES_FILE))?;
        std::fs::write(
            dir.join(CLASSIFIER_FILE),
            serde_json::to_string_pretty(&self.classifier)?,
        )?;
        std::fs::write(dir.join(SPLIT_FILE), serde_json::to_string_pretty(&self.split)?)?;
        std::fs::write(
            dir.join(PIPELINE_FILE),
            serde_json::to_string_pretty(&self.config)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let missing = |name: &str| {
            Error::State(format!(
                "missing artifact {name} in {} (run `sleeper train` first)",
                dir.display()
            ))
        };
        let read = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name)).map_err(|_| missing(name))
        };
        if !dir.join(CHECKPOINT_FILE).exists() {
            return Err(missing(CHECKPOINT_FILE));
        }
        let model = load_checkpoint(dir.join(CHECKPOINT_FILE))?;
        let bank = RuleBank::from_json(&read(RULEBANK_FILE)?)?;
        let prototypes = load_prototypes(dir.join(PROTOTYPES_FILE))?;
        let classifier: Option<StageModel> = serde_json::from_str(&read(CLASSIFIER_FILE)?)?;
        let split: DatasetSplit = serde_json::from_str(&read(SPLIT_FILE)?)?;
        let config: PipelineConfig = serde_json::from_str(&read(PIPELINE_FILE)?)?;
        Ok(Self {
            config,
            split,
            bank,
            model,
            prototypes,
            classifier,
        })
    }
}

const PROTO_MAGIC: &[u8; 4] = b"PROT";

/// Prototype store: magic, version, dim, rule count, column rule ids, then
/// the matrix as little-endian f64 in row-major order.
pub fn save_prototypes(p: &PrototypeMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PROTO_MAGIC)?;
    w.write_all(&1u16.to_le_bytes())?;
    w.write_all(&(p.dim() as u32).to_le_bytes())?;
    w.write_all(&(p.n_rules() as u32).to_le_bytes())?;
    for &r in &p.rule_indices {
        w.write_all(&(r as u32).to_le_bytes())?;
    }
    for v in p.matrix.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_prototypes(path: impl AsRef<Path>) -> Result<PrototypeMatrix> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let err = |offset: usize, reason: &str| Error::Format {
        offset: offset as u64,
        reason: reason.to_string(),
    };
    let need = |pos: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(pos..pos + n)
            .ok_or_else(|| err(bytes.len(), "truncated prototype store"))
    };
    if need(0, 4)? != PROTO_MAGIC {
        return Err(err(0, "bad prototype magic"));
    }
    let version = u16::from_le_bytes(need(4, 2)?.try_into().unwrap());
    if version != 1 {
        return Err(err(4, "unsupported prototype version"));
    }
    let dim = u32::from_le_bytes(need(6, 4)?.try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(need(10, 4)?.try_into().unwrap()) as usize;
    let mut pos = 14;
    let mut rule_indices = Vec::with_capacity(k);
    for _ in 0..k {
        rule_indices.push(u32::from_le_bytes(need(pos, 4)?.try_into().unwrap()) as usize);
        pos += 4;
    }
    let raw = need(pos, dim * k * 8)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    pos += dim * k * 8;
    if pos != bytes.len() {
        return Err(err(pos, "trailing bytes in prototype store"));
    }
    let matrix = Array2::from_shape_vec((dim, k), values)
        .map_err(|e| Error::Shape(format!("prototype store shape: {e}")))?;
    Ok(PrototypeMatrix { matrix, rule_indices })
}

/// Depth-sweep: refits the prototype decision tree per depth and reports the
/// held-out macro AUC.
pub fn sweep_depth(experiment: &Experiment, depths: &[usize]) -> Result<Vec<(usize, f64)>> {
    if depths.is_empty() {
        return Err(Error::State("depth sweep needs at least one depth".into()));
    }
    depths
        .iter()
        .map(|&d| {
            let model = experiment.fit_classifier_with_depth(ClassifierChoice::Dt, d)?;
            let report = experiment.evaluate_choice(ClassifierChoice::Dt, model.as_ref())?;
            Ok((d, report.roc_auc_macro.unwrap_or(f64::NAN)))
        })
        .collect()
}

/// Rule-count sweep: re-selects the top-k rules, rebuilds prototypes, and
/// reports held-out macro AUC for prototype features vs raw rule features.
pub fn sweep_rules(
    recordings: &[Recording],
    base: &Experiment,
    ks: &[usize],
) -> Result<Vec<(usize, f64, f64)>> {
    if ks.is_empty() {
        return Err(Error::State("rule sweep needs at least one k".into()));
    }
    if ks.iter().any(|&k| k == 0 || k > FULL_BANK_SIZE) {
        return Err(Error::State(format!(
            "rule counts must be in 1..={FULL_BANK_SIZE}"
        )));
    }
    // Recompute features and embeddings once from the base experiment's model.
    let (train, test): (Vec<&Recording>, Vec<&Recording>) = recordings
        .iter()
        .partition(|r| !base.split.is_test_subject(r.subject_id().unwrap_or("")));
    let features_train = extract_features_all(&train);
    let features_test = extract_features_all(&test);
    let h_train = embed_all(&base.model, &train)?;
    let h_test = embed_all(&base.model, &test)?;
    let normalized = column_normalize(&h_train);

    let mut full_bank = RuleBank::build();
    full_bank.fit_thresholds(&features_train)?;
    let full_assign = full_bank.assign(&features_train)?;

    ks.iter()
        .map(|&k| {
            let mut bank = full_bank.clone();
            bank.anova_select(&full_assign, &base.y_train, k)?;
            let assign_train = bank.assign(&features_train)?;
            let assign_test = bank.assign(&features_test)?;
            let prototypes = build_prototypes(&normalized, &assign_train)?;
            let sim_train = similarity(&h_train, &prototypes)?.matrix;
            let sim_test = similarity(&h_test, &prototypes)?.matrix;

            let auc_of = |xtr: &Array2<f64>, xte: &Array2<f64>| -> Result<f64> {
                let tree = DecisionTree::fit(
                    xtr,
                    &base.y_train,
                    base.config.tree_depth,
                    base.config.min_leaf,
                )?;
                let model = StageModel::Tree(tree);
                let (preds, scores) = predictions_of(ClassifierChoice::Dt, Some(&model), xte);
                let report = evaluate(&base.y_test, &preds, Some(&scores))?;
                Ok(report.roc_auc_macro.unwrap_or(f64::NAN))
            };
            let proto_auc = auc_of(&sim_train, &sim_test)?;
            let rule_auc = auc_of(&assign_train.to_f64(), &assign_test.to_f64())?;
            Ok((k, proto_auc, rule_auc))
        })
        .collect()
}
