//! The expert rule bank: 240 parameterized rules over epoch features,
//! percentile thresholds fitted on training data, binary rule assignment,
//! and ANOVA-based selection of the most discriminative rules.

use crate::dsp::EpochFeatures;
use crate::error::{Error, Result};
use crate::types::{ChannelId, ChannelPair, SleepStage, NUM_STAGES};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Total number of rules in the full bank.
pub const FULL_BANK_SIZE: usize = 240;
/// Default number of rules kept by selection.
pub const DEFAULT_SELECTED: usize = 96;

/// Event duration bounds in seconds, one rule per bound.
pub const DURATION_BOUNDS: [f64; 4] = [3.0, 6.0, 12.0, 18.0];
/// Percentile cut points, one rule per point.
pub const PERCENTILE_CUTS: [f64; 4] = [20.0, 40.0, 60.0, 80.0];

/// The feature a rule thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleFeature {
    Spindle,
    Sws,
    Delta,
    Theta,
    Alpha,
    Beta,
    Amplitude,
    Kurtosis,
}

impl RuleFeature {
    /// Band index for the four spectral features.
    fn band_index(self) -> Option<usize> {
        match self {
            RuleFeature::Delta => Some(0),
            RuleFeature::Theta => Some(1),
            RuleFeature::Alpha => Some(2),
            RuleFeature::Beta => Some(3),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleFeature::Spindle => "Spindle",
            RuleFeature::Sws => "Slow waves",
            RuleFeature::Delta => "Delta power",
            RuleFeature::Theta => "Theta power",
            RuleFeature::Alpha => "Alpha power",
            RuleFeature::Beta => "Beta power",
            RuleFeature::Amplitude => "Amplitude",
            RuleFeature::Kurtosis => "Kurtosis",
        }
    }
}

/// What the rule is evaluated on: a channel pair for events, a single
/// channel for scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleTarget {
    Pair(ChannelPair),
    Channel(ChannelId),
}

impl RuleTarget {
    pub fn label(self) -> String {
        match self {
            RuleTarget::Pair(p) => p.name().to_string(),
            RuleTarget::Channel(c) => c.name().to_string(),
        }
    }
}

/// Rule predicate group: minimum event seconds or a percentile upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RuleGroup {
    /// Event rule: total duration strictly greater than this many seconds.
    MinSeconds(f64),
    /// Scalar rule: value strictly below this training percentile.
    BelowPercentile(f64),
}

impl RuleGroup {
    pub fn label(self) -> String {
        match self {
            RuleGroup::MinSeconds(s) => format!(">{s:.0}s"),
            RuleGroup::BelowPercentile(p) => format!("<P{p:.0}"),
        }
    }
}

/// One parameterized expert rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub feature: RuleFeature,
    pub target: RuleTarget,
    pub group: RuleGroup,
}

impl RuleSpec {
    /// Raw feature value this rule thresholds, read from extracted features.
    pub fn feature_value(&self, f: &EpochFeatures) -> f64 {
        match (self.feature, self.target) {
            (RuleFeature::Spindle, RuleTarget::Pair(p)) => f.spindle_sec[p.index()],
            (RuleFeature::Sws, RuleTarget::Pair(p)) => f.sws_sec[p.index()],
            (RuleFeature::Amplitude, RuleTarget::Channel(c)) => f.amplitude[c.row()],
            (RuleFeature::Kurtosis, RuleTarget::Channel(c)) => f.kurtosis[c.row()],
            (feat, RuleTarget::Channel(c)) => {
                let b = feat.band_index().expect("scalar rule with band feature");
                f.band_power[c.row()][b]
            }
            _ => unreachable!("event rules always target pairs"),
        }
    }

    pub fn describe(&self) -> String {
        format!("{} {}", self.feature.name(), self.group.label())
    }
}

/// The full bank in canonical order: spindles, slow waves, the four bands,
/// amplitude, kurtosis.
fn build_rules() -> Vec<RuleSpec> {
    let mut rules = Vec::with_capacity(FULL_BANK_SIZE);
    for feature in [RuleFeature::Spindle, RuleFeature::Sws] {
        for pair in ChannelPair::ALL {
            for bound in DURATION_BOUNDS {
                rules.push(RuleSpec {
                    feature,
                    target: RuleTarget::Pair(pair),
                    group: RuleGroup::MinSeconds(bound),
                });
            }
        }
    }
    for feature in [
        RuleFeature::Delta,
        RuleFeature::Theta,
        RuleFeature::Alpha,
        RuleFeature::Beta,
        RuleFeature::Amplitude,
        RuleFeature::Kurtosis,
    ] {
        for ch in ChannelId::ALL {
            for cut in PERCENTILE_CUTS {
                rules.push(RuleSpec {
                    feature,
                    target: RuleTarget::Channel(ch),
                    group: RuleGroup::BelowPercentile(cut),
                });
            }
        }
    }
    assert_eq!(rules.len(), FULL_BANK_SIZE, "rule bookkeeping broke");
    rules
}

/// Binary rule-assignment matrix over a bank's active rule set.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleAssignment {
    /// N x K binary matrix, entries 0/1.
    pub matrix: Array2<u8>,
    /// Bank rule index of each column.
    pub rule_indices: Vec<usize>,
}

impl RuleAssignment {
    pub fn n_epochs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_rules(&self) -> usize {
        self.matrix.ncols()
    }

    /// Assignment as a float matrix (for classifiers and prototype algebra).
    pub fn to_f64(&self) -> Array2<f64> {
        self.matrix.mapv(|v| v as f64)
    }
}

/// The rule bank with optional fitted thresholds and selection mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBank {
    rules: Vec<RuleSpec>,
    /// Per-rule threshold; `None` for event rules (their bounds are fixed)
    /// and for scalar rules before fitting.
    thresholds: Vec<Option<f64>>,
    /// Per-rule ANOVA F-score, set by selection.
    f_scores: Option<Vec<f64>>,
    /// Selection mask over the full bank.
    selected: Option<Vec<bool>>,
    fitted: bool,
}

impl RuleBank {
    /// Builds the unfitted 240-rule bank.
    pub fn build() -> Self {
        let rules = build_rules();
        let thresholds = vec![None; rules.len()];
        Self {
            rules,
            thresholds,
            f_scores: None,
            selected: None,
            fitted: false,
        }
    }

    pub fn rules(&self) -> &[RuleSpec] {
        &self.rules
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn threshold(&self, rule: usize) -> Option<f64> {
        self.thresholds[rule]
    }

    pub fn f_scores(&self) -> Option<&[f64]> {
        self.f_scores.as_deref()
    }

    pub fn selected_mask(&self) -> Option<&[bool]> {
        self.selected.as_deref()
    }

    /// Bank rule indices of the active rule set (selected rules if any
    /// selection happened, the full bank otherwise), in bank order.
    pub fn active_rules(&self) -> Vec<usize> {
        match &self.selected {
            Some(mask) => (0..self.rules.len()).filter(|&i| mask[i]).collect(),
            None => (0..self.rules.len()).collect(),
        }
    }

    /// Fits percentile thresholds for every scalar rule on training features.
    pub fn fit_thresholds(&mut self, features: &[EpochFeatures]) -> Result<()> {
        if features.len() < 5 {
            return Err(Error::Fit(format!(
                "threshold fitting needs at least 5 training epochs, got {}",
                features.len()
            )));
        }
        // One sort per (feature, channel); four cut points read from it.
        let mut i = 0;
        while i < self.rules.len() {
            let rule = self.rules[i];
            match rule.group {
                RuleGroup::MinSeconds(_) => {
                    i += 1;
                }
                RuleGroup::BelowPercentile(_) => {
                    let mut values: Vec<f64> =
                        features.iter().map(|f| rule.feature_value(f)).collect();
                    values.sort_unstable_by(f64::total_cmp);
                    for (j, cut) in PERCENTILE_CUTS.iter().enumerate() {
                        debug_assert!(matches!(
                            self.rules[i + j].group,
                            RuleGroup::BelowPercentile(p) if p == *cut
                        ));
                        self.thresholds[i + j] =
                            Some(crate::stats::percentile_sorted(&values, *cut));
                    }
                    i += PERCENTILE_CUTS.len();
                }
            }
        }
        self.fitted = true;
        Ok(())
    }

    /// Evaluates one rule on one epoch's features.
    fn rule_bit(&self, rule_idx: usize, f: &EpochFeatures) -> u8 {
        let rule = &self.rules[rule_idx];
        let value = rule.feature_value(f);
        let hit = match rule.group {
            RuleGroup::MinSeconds(bound) => value > bound,
            RuleGroup::BelowPercentile(_) => {
                let thr = self.thresholds[rule_idx].expect("fitted scalar rule has threshold");
                value < thr
            }
        };
        hit as u8
    }

    /// Binary assignment matrix over the bank's active rule set.
    pub fn assign(&self, features: &[EpochFeatures]) -> Result<RuleAssignment> {
        if !self.fitted {
            return Err(Error::State("rule bank is not fitted".into()));
        }
        let active = self.active_rules();
        let mut matrix = Array2::zeros((features.len(), active.len()));
        for (row, f) in features.iter().enumerate() {
            for (col, &rule_idx) in active.iter().enumerate() {
                matrix[[row, col]] = self.rule_bit(rule_idx, f);
            }
        }
        Ok(RuleAssignment {
            matrix,
            rule_indices: active,
        })
    }

    /// Ranks rules by one-way ANOVA F over the stage groups and keeps the
    /// top `k`. The assignment must cover the full bank.
    pub fn anova_select(
        &mut self,
        assignment: &RuleAssignment,
        labels: &[SleepStage],
        k: usize,
    ) -> Result<()> {
        if assignment.n_rules() != self.rules.len() {
            return Err(Error::Shape(format!(
                "selection needs the full {}-rule assignment, got {} columns",
                self.rules.len(),
                assignment.n_rules()
            )));
        }
        if labels.len() != assignment.n_epochs() {
            return Err(Error::Shape(format!(
                "{} labels for {} assignment rows",
                labels.len(),
                assignment.n_epochs()
            )));
        }
        if k == 0 || k > self.rules.len() {
            return Err(Error::Select(format!("k must be in 1..=240, got {k}")));
        }
        let f = anova_f_scores(assignment, labels)?;

        let mut order: Vec<usize> = (0..f.len()).collect();
        order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
        let mut mask = vec![false; f.len()];
        for &i in order.iter().take(k) {
            mask[i] = true;
        }
        self.f_scores = Some(f);
        self.selected = Some(mask);
        Ok(())
    }

    /// Versioned, human-auditable JSON document.
    pub fn to_json(&self) -> Result<String> {
        let file = RuleBankFile {
            version: 1,
            rule_count: self.rules.len(),
            fitted: self.fitted,
            rules: self
                .rules
                .iter()
                .enumerate()
                .map(|(i, r)| RuleRecord {
                    index: i,
                    feature: r.feature,
                    target: r.target,
                    group: r.group,
                    threshold: self.thresholds[i],
                    f_score: self.f_scores.as_ref().map(|f| f[i]),
                    selected: self.selected.as_ref().map(|m| m[i]),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RuleBankFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(Error::State(format!(
                "unsupported rule bank version {}",
                file.version
            )));
        }
        if file.rules.len() != file.rule_count {
            return Err(Error::State("rule bank count mismatch".into()));
        }
        let mut bank = RuleBank::build();
        if file.rules.len() != bank.rules.len() {
            return Err(Error::State(format!(
                "expected {} rules, file has {}",
                bank.rules.len(),
                file.rules.len()
            )));
        }
        for (i, rec) in file.rules.iter().enumerate() {
            if rec.feature != bank.rules[i].feature
                || rec.target != bank.rules[i].target
                || rec.group != bank.rules[i].group
            {
                return Err(Error::State(format!("rule {i} does not match canonical bank")));
            }
            bank.thresholds[i] = rec.threshold;
        }
        bank.fitted = file.fitted;
        if file.rules.iter().any(|r| r.f_score.is_some()) {
            bank.f_scores = Some(file.rules.iter().map(|r| r.f_score.unwrap_or(0.0)).collect());
        }
        if file.rules.iter().any(|r| r.selected.is_some()) {
            bank.selected = Some(
                file.rules
                    .iter()
                    .map(|r| r.selected.unwrap_or(false))
                    .collect(),
            );
        }
        Ok(bank)
    }
}

/// One-way ANOVA F per binary column, grouped by stage.
fn anova_f_scores(assignment: &RuleAssignment, labels: &[SleepStage]) -> Result<Vec<f64>> {
    let n = labels.len();
    let mut group_counts = [0usize; NUM_STAGES];
    for l in labels {
        group_counts[l.code()] += 1;
    }
    let groups: Vec<usize> = (0..NUM_STAGES).filter(|&g| group_counts[g] > 0).collect();
    if groups.len() < 2 {
        return Err(Error::Select(
            "ANOVA needs at least two distinct stages in the labels".into(),
        ));
    }
    let g = groups.len();
    let dof_between = (g - 1) as f64;
    let dof_within = (n - g) as f64;

    let scores = (0..assignment.n_rules())
        .map(|col| {
            let mut ones = [0usize; NUM_STAGES];
            for (row, l) in labels.iter().enumerate() {
                ones[l.code()] += assignment.matrix[[row, col]] as usize;
            }
            let total_ones: usize = ones.iter().sum();
            let grand_mean = total_ones as f64 / n as f64;

            let mut ssb = 0.0;
            let mut ssw = 0.0;
            for &gi in &groups {
                let ng = group_counts[gi] as f64;
                let mean_g = ones[gi] as f64 / ng;
                ssb += ng * (mean_g - grand_mean).powi(2);
                // Within-group SS of a binary column.
                ssw += ng * mean_g * (1.0 - mean_g);
            }
            let msb = ssb / dof_between;
            let msw = if dof_within > 0.0 { ssw / dof_within } else { 0.0 };
            msb / msw.max(1e-12)
        })
        .collect();
    Ok(scores)
}

#[derive(Serialize, Deserialize)]
struct RuleBankFile {
    version: u32,
    rule_count: usize,
    fitted: bool,
    rules: Vec<RuleRecord>,
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    index: usize,
    feature: RuleFeature,
    target: RuleTarget,
    group: RuleGroup,
    threshold: Option<f64>,
    f_score: Option<f64>,
    selected: Option<bool>,
}
