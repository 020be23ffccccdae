use sleeper_core::pipeline::*;
use sleeper_core::synth::{generate_synthetic, SynthConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let subjects: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(40);
    let epochs: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(60);
    let t0 = Instant::now();
    let cfg = PipelineConfig::default();
    let recs = generate_synthetic(&SynthConfig::new(subjects, epochs, cfg.seed)).unwrap();
    println!("[{:6.1?}] corpus: {subjects}x{epochs}", t0.elapsed());

    let e = build_experiment(&recs, &cfg).unwrap();
    println!("[{:6.1?}] built; loss {:.4} -> {:.4}", t0.elapsed(),
        e.loss_trace.first().unwrap(), e.loss_trace.last().unwrap());

    for choice in [ClassifierChoice::Dt, ClassifierChoice::RuleDt, ClassifierChoice::Lr, ClassifierChoice::RuleLr, ClassifierChoice::Gbt, ClassifierChoice::RuleGbt, ClassifierChoice::Cnn] {
        let model = if choice == ClassifierChoice::Dt { e.classifier.clone() } else { e.fit_classifier(choice).unwrap() };
        let r = e.evaluate_choice(choice, model.as_ref()).unwrap();
        println!("[{:6.1?}] {:8}: acc {:.4} kappa {:.4} auc {:.4} sens {:?}",
            t0.elapsed(), choice.name(), r.accuracy, r.kappa, r.roc_auc_macro.unwrap_or(f64::NAN),
            r.sensitivity.map(|s| (s*100.0).round()/100.0));
    }
    let depths = sweep_depth(&e, &[3, 6, 9, 12]).unwrap();
    println!("[{:6.1?}] depth sweep: {depths:?}", t0.elapsed());
    println!("total: {:?}", t0.elapsed());
}
