//! Align, adapt, and score on scenarios the model never trained on, with the
//! persistence and majority-vote references printed alongside.

use wmlm::config::RunConfig;
use wmlm::eval::{self, SplitSpec};
use wmlm::scenegen;
use wmlm::train;

fn main() -> wmlm::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.traversals = 1;
    cfg.align.epochs = 8;
    cfg.train.epochs = 6;
    cfg.train.patience = 0;
    cfg.eval.split = "S6".into();
    let seed = 42;

    let corpus: Vec<_> = scenegen::presets(seed, cfg.data.traversals)
        .iter()
        .map(scenegen::gen_scenario)
        .collect::<wmlm::Result<_>>()?;

    let stage1 = train::run_stage1(&cfg, &corpus, seed)?;
    let s1 = stage1.history.last().expect("align epochs > 0");
    println!("stage 1: loss {:.4}, in-batch retrieval {:.4}", s1.loss, s1.retrieval);

    let stage2 = train::run_stage2(&cfg, &corpus, Some(&stage1.checkpoint), seed)?;
    println!("stage 2: {} epochs on scenarios 1..6, encoders frozen", stage2.epochs_run);

    let spec = SplitSpec::from_eval_config(&cfg.eval)?;
    let report = eval::evaluate(&stage2.checkpoint, &corpus, &spec)?;
    println!(
        "zero-shot on scenarios {:?} ({} windows):",
        spec.test_scenarios, report.n_test_windows
    );
    println!("{:>12}  {:>7}  {:>7}  {:>7}", "", "step 1", "step 2", "step 3");
    println!(
        "{:>12}  {:>7.3}  {:>7.3}  {:>7.3}",
        "top-1", report.top1[0], report.top1[1], report.top1[2]
    );
    println!(
        "{:>12}  {:>7.3}  {:>7.3}  {:>7.3}",
        "top-5", report.top5[0], report.top5[1], report.top5[2]
    );
    println!(
        "{:>12}  {:>7.3}  {:>7.3}  {:>7.3}",
        "persistence",
        report.persistence_top1[0],
        report.persistence_top1[1],
        report.persistence_top1[2]
    );
    println!(
        "{:>12}  {:>7.3}  {:>7.3}  {:>7.3}   (beam {})",
        "majority",
        report.majority_top1[0],
        report.majority_top1[1],
        report.majority_top1[2],
        report.majority_label
    );
    println!(
        "forecast nmse {:.4} (persistence {:.4}), beam/vision retrieval {:.4}",
        report.nmse.unwrap_or(f64::NAN),
        report.persistence_nmse,
        report.retrieval.unwrap_or(f64::NAN)
    );
    Ok(())
}
