//! Subcommand implementations.

use crate::{chart, csvio, ensure_out_dir, resolve_seed};
use anyhow::{bail, Context, Result};
use clap::Args;
use sleeper_core::classifiers::{render_tree_dot, render_tree_text, StageModel};
use sleeper_core::embedder::{CnnConfig, FULL_EMBEDDING_DIM};
use sleeper_core::io::{read_recording, write_labels_csv, write_recording};
use sleeper_core::metrics::evaluate;
use sleeper_core::pipeline::{
    build_experiment, experiment_from_artifacts, extract_features_all, score_recording, sweep_depth,
    sweep_rules, Artifacts, ClassifierChoice, PipelineConfig,
};
use sleeper_core::synth::{generate_synthetic, SynthConfig};
use sleeper_core::types::Recording;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for the generated corpus.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    subjects: usize,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    /// Pink background noise scale in microvolts.
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run_synth(args: SynthArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, None);
    ensure_out_dir(&args.out)?;
    let mut cfg = SynthConfig::new(args.subjects, args.epochs, seed);
    cfg.noise_scale_uv = args.noise;
    let recordings = generate_synthetic(&cfg).context("generating synthetic corpus")?;
    for rec in &recordings {
        let id = rec.subject_id().unwrap_or("unknown").to_string();
        write_recording(rec, args.out.join(format!("{id}.psgb")))
            .with_context(|| format!("writing subject {id}"))?;
        write_labels_csv(rec, args.out.join(format!("{id}.labels.csv")))
            .with_context(|| format!("writing labels of {id}"))?;
    }
    println!(
        "wrote {} recordings x {} epochs (seed {seed}) to {}",
        recordings.len(),
        args.epochs,
        args.out.display()
    );
    Ok(())
}

/// Reads every `*.psgb` file under a directory, sorted by file name.
fn read_corpus(dir: &Path) -> Result<Vec<Recording>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "psgb"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .psgb files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| read_recording(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory of .psgb training data.
    #[arg(long)]
    data: PathBuf,
    /// Artifact output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON pipeline config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CNN profile: `reduced` (desk-scale) or `full` (2,496-dim embedding).
    #[arg(long)]
    profile: Option<String>,
    /// Number of rules kept by ANOVA selection.
    #[arg(long)]
    rules: Option<usize>,
    /// Skip selection and keep all 240 rules.
    #[arg(long, default_value_t = false)]
    no_select: bool,
    /// Final classifier: dt|lr|gbt|rule-dt|rule-lr|rule-gbt|cnn.
    #[arg(long)]
    classifier: Option<String>,
    /// Decision-tree depth.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also dump per-epoch training features to this CSV.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

fn load_pipeline_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn apply_train_overrides(cfg: &mut PipelineConfig, args: &TrainArgs) -> Result<()> {
    if let Some(profile) = &args.profile {
        cfg.cnn = match profile.as_str() {
            "full" => CnnConfig::full(),
            "reduced" => CnnConfig::reduced(),
            other => bail!("unknown profile {other:?} (expected full|reduced)"),
        };
    }
    if let Some(k) = args.rules {
        cfg.rule_k = k;
    }
    if args.no_select {
        cfg.select_rules = false;
    }
    if let Some(c) = &args.classifier {
        cfg.classifier = ClassifierChoice::parse(c)?;
    }
    if let Some(d) = args.depth {
        cfg.tree_depth = d;
    }
    if let Some(m) = args.min_leaf {
        cfg.min_leaf = m;
    }
    if let Some(f) = args.test_fraction {
        cfg.test_fraction = f;
    }
    cfg.seed = resolve_seed(args.seed, Some(cfg.seed));
    Ok(())
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = load_pipeline_config(&args.config)?;
    apply_train_overrides(&mut cfg, &args)?;
    ensure_out_dir(&args.out)?;

    let recordings = read_corpus(&args.data).context("loading training data")?;
    println!(
        "training on {} recordings (seed {}, classifier {}, {} rules{})",
        recordings.len(),
        cfg.seed,
        cfg.classifier.name(),
        if cfg.select_rules { cfg.rule_k } else { 240 },
        if cfg.select_rules { " selected by ANOVA" } else { ", no selection" },
    );
    let flatten = cfg.cnn.flatten_dim().map_err(|e| anyhow::anyhow!("{e}"))?;
    if flatten != FULL_EMBEDDING_DIM {
        println!(
            "reduced CNN profile: embedding dim {flatten} (full profile uses {FULL_EMBEDDING_DIM})"
        );
    }

    let experiment = build_experiment(&recordings, &cfg).context("training pipeline")?;
    println!("split: {} train / {} test subjects", experiment.split.train.len(), experiment.split.test.len());
    println!("loss trace:");
    for (i, l) in experiment.loss_trace.iter().enumerate() {
        println!("  epoch {i:3}: {l:.4}");
    }
    if let Some(f) = experiment.bank.f_scores() {
        let mut selected = experiment.bank.active_rules();
        selected.sort_by(|&a, &b| f[b].total_cmp(&f[a]));
        println!("selected {} rules; strongest by ANOVA F:", selected.len());
        for &r in selected.iter().take(5) {
            let rule = experiment.bank.rules()[r];
            println!("  {} on {} (F={:.1})", rule.describe(), rule.target.label(), f[r]);
        }
    }

    if let Some(path) = &args.dump_features {
        let (train, _): (Vec<&Recording>, Vec<&Recording>) = recordings
            .iter()
            .partition(|r| !experiment.split.is_test_subject(r.subject_id().unwrap_or("")));
        let features = extract_features_all(&train);
        csvio::write_features(path, &features)?;
        println!("training features dumped to {}", path.display());
    }

    Artifacts::from_experiment(&experiment)
        .save(&args.out)
        .context("persisting artifacts")?;
    println!("artifacts written to {}", args.out.display());

    let report = experiment
        .evaluate_choice(cfg.classifier, experiment.classifier.as_ref())
        .context("evaluating on the held-out subjects")?;
    println!("held-out performance:\n{report}");
    std::fs::write(
        args.out.join("train_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!("done in {:.1?}", started.elapsed());
    Ok(())
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Artifact directory produced by `train`.
    #[arg(long)]
    artifacts: PathBuf,
    /// Recording to score (.psgb).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-epoch decision-tree routing trace.
    #[arg(long, default_value_t = false)]
    explain: bool,
    /// Also dump the epoch features to this CSV.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

pub fn run_score(args: ScoreArgs) -> Result<()> {
    let artifacts = Artifacts::load(&args.artifacts).context("loading artifacts")?;
    let recording = read_recording(&args.input).context("reading input recording")?;
    ensure_out_dir(&args.out)?;

    let scored = score_recording(&artifacts, &recording).context("scoring recording")?;
    csvio::write_hypnogram(&args.out.join("hypnogram.csv"), &scored.predictions)?;
    csvio::write_similarities(
        &args.out.join("similarities.csv"),
        &scored.similarities,
        &artifacts.prototypes.rule_indices,
    )?;

    if let Some(report) = &scored.report {
        std::fs::write(
            args.out.join("report.json"),
            serde_json::to_string_pretty(report)?,
        )?;
        std::fs::write(args.out.join("report.txt"), report.to_string())?;
        std::fs::write(args.out.join("confusion.csv"), report.confusion.to_csv())?;
        println!("{report}");
    } else {
        println!(
            "input has no labels; wrote predictions for {} epochs (metrics omitted)",
            scored.predictions.len()
        );
    }

    if args.explain {
        let trace = explain_routes(&artifacts, &scored.similarities)?;
        std::fs::write(args.out.join("trace.txt"), trace)?;
        println!("routing trace written to {}", args.out.join("trace.txt").display());
    }
    if let Some(path) = &args.dump_features {
        let recs = [&recording];
        let features = extract_features_all(&recs);
        csvio::write_features(path, &features)?;
    }
    println!("outputs written to {}", args.out.display());
    Ok(())
}

/// Text trace of the decision path for every epoch (tree classifiers only).
fn explain_routes(artifacts: &Artifacts, sims: &ndarray::Array2<f64>) -> Result<String> {
    let Some(StageModel::Tree(tree)) = &artifacts.classifier else {
        bail!("routing traces need a decision-tree classifier (got {})",
            artifacts.classifier.as_ref().map_or("cnn", |m| m.kind()));
    };
    let active = artifacts.bank.active_rules();
    let mut out = String::new();
    for i in 0..sims.nrows() {
        let row: Vec<f64> = sims.row(i).to_vec();
        let (stage, _, steps) = tree.predict_with_trace(&row);
        out.push_str(&format!("epoch {i}: {}\n", stage.name()));
        for s in steps {
            let rule = artifacts.bank.rules()[active[s.feature_index]];
            out.push_str(&format!(
                "  {} on {}: similarity {:.3} {} {:.3}\n",
                rule.describe(),
                rule.target.label(),
                s.value,
                if s.went_left { "<" } else { ">=" },
                s.threshold,
            ));
        }
    }
    Ok(out)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Labeled recording holding the expert stages (.psgb).
    #[arg(long)]
    truth: PathBuf,
    /// Predictions CSV (`epoch_index,stage_code[,...]`).
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    let recording = read_recording(&args.truth).context("reading truth recording")?;
    let Some(labels) = recording.labels() else {
        bail!("{} has no labels", args.truth.display());
    };
    let predictions = csvio::read_stage_csv(&args.predictions)?;
    if predictions.len() != labels.len() {
        bail!(
            "{} predictions vs {} labeled epochs",
            predictions.len(),
            labels.len()
        );
    }
    ensure_out_dir(&args.out)?;
    let report = evaluate(labels, &predictions, None).map_err(|e| anyhow::anyhow!("{e}"))?;
    std::fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(args.out.join("report.txt"), report.to_string())?;
    std::fs::write(args.out.join("confusion.csv"), report.confusion.to_csv())?;
    println!("{report}");
    Ok(())
}

#[derive(Args)]
pub struct SweepDepthArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    artifacts: PathBuf,
    /// Comma-separated tree depths, e.g. `1,3,5,7,9,12`.
    #[arg(long, value_delimiter = ',', required = true)]
    depths: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_sweep_depth(args: SweepDepthArgs) -> Result<()> {
    if args.depths.is_empty() {
        bail!("depth list is empty");
    }
    let artifacts = Artifacts::load(&args.artifacts).context("loading artifacts")?;
    let recordings = read_corpus(&args.data)?;
    let experiment = experiment_from_artifacts(&recordings, &artifacts)
        .context("rebuilding design matrices")?;
    let rows = sweep_depth(&experiment, &args.depths).map_err(|e| anyhow::anyhow!("{e}"))?;
    ensure_out_dir(&args.out)?;

    println!("depth,roc_auc");
    for (d, auc) in &rows {
        println!("{d},{auc:.4}");
    }
    csvio::write_table(
        &args.out.join("sweep_depth.csv"),
        "depth,roc_auc",
        &rows.iter().map(|(d, a)| vec![*d as f64, *a]).collect::<Vec<_>>(),
    )?;
    chart::write_line_chart(
        &args.out.join("sweep_depth.svg"),
        "Held-out ROC-AUC vs tree depth",
        "tree depth",
        "macro ROC-AUC",
        &[chart::Series {
            label: "prototype DT",
            points: rows.iter().map(|(d, a)| (*d as f64, *a)).collect(),
        }],
    )?;
    println!("sweep written to {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct SweepRulesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    artifacts: PathBuf,
    /// Comma-separated rule counts, e.g. `8,16,32,64,96,240`.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_sweep_rules(args: SweepRulesArgs) -> Result<()> {
    if args.ks.is_empty() {
        bail!("rule-count list is empty");
    }
    let artifacts = Artifacts::load(&args.artifacts).context("loading artifacts")?;
    let recordings = read_corpus(&args.data)?;
    let experiment = experiment_from_artifacts(&recordings, &artifacts)
        .context("rebuilding design matrices")?;
    let rows =
        sweep_rules(&recordings, &experiment, &args.ks).map_err(|e| anyhow::anyhow!("{e}"))?;
    ensure_out_dir(&args.out)?;

    println!("k,roc_auc_prototype,roc_auc_rule");
    for (k, proto, rule) in &rows {
        println!("{k},{proto:.4},{rule:.4}");
    }
    csvio::write_table(
        &args.out.join("sweep_rules.csv"),
        "k,roc_auc_prototype,roc_auc_rule",
        &rows
            .iter()
            .map(|(k, p, r)| vec![*k as f64, *p, *r])
            .collect::<Vec<_>>(),
    )?;
    chart::write_line_chart(
        &args.out.join("sweep_rules.svg"),
        "Held-out ROC-AUC vs number of rules",
        "number of rules",
        "macro ROC-AUC",
        &[
            chart::Series {
                label: "prototype DT",
                points: rows.iter().map(|(k, p, _)| (*k as f64, *p)).collect(),
            },
            chart::Series {
                label: "rule DT",
                points: rows.iter().map(|(k, _, r)| (*k as f64, *r)).collect(),
            },
        ],
    )?;
    println!("sweep written to {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    artifacts: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_explain(args: ExplainArgs) -> Result<()> {
    let artifacts = Artifacts::load(&args.artifacts).context("loading artifacts")?;
    let Some(StageModel::Tree(tree)) = &artifacts.classifier else {
        bail!(
            "explain needs a decision-tree classifier; artifacts hold {}",
            artifacts.classifier.as_ref().map_or("cnn", |m| m.kind())
        );
    };
    ensure_out_dir(&args.out)?;
    let text = render_tree_text(tree, &artifacts.bank).map_err(|e| anyhow::anyhow!("{e}"))?;
    let dot = render_tree_dot(tree, &artifacts.bank).map_err(|e| anyhow::anyhow!("{e}"))?;
    std::fs::write(args.out.join("tree.txt"), &text)?;
    std::fs::write(args.out.join("tree.dot"), dot)?;
    println!("{text}");
    println!("tree renderings written to {}", args.out.display());
    Ok(())
}
