//! Run the anchor-choice grid at toy scale: every anchor arm crossed with
//! both scenario splits, three seeds per cell, summarized by medians.

use wmlm::compare;
use wmlm::config::RunConfig;
use wmlm::encoders::EncoderConfig;
use wmlm::model::BackboneConfig;
use wmlm::scenegen;

fn main() -> wmlm::Result<()> {
    // Deliberately tiny so the 8-cell grid finishes in seconds; the eval
    // numbers are only meaningful at the defaults.
    let mut cfg = RunConfig {
        encoders: EncoderConfig { d_model: 16, hidden: 8, ..Default::default() },
        backbone: BackboneConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            ffn: Some(32),
            ..Default::default()
        },
        seed: 21,
        ..Default::default()
    };
    cfg.data.traversals = 1;
    cfg.align.epochs = 2;
    cfg.train.epochs = 2;
    cfg.train.patience = 0;

    let corpus: Vec<_> = scenegen::presets(cfg.seed, cfg.data.traversals)
        .iter()
        .map(scenegen::gen_scenario)
        .collect::<wmlm::Result<_>>()?;

    let report = compare::compare_anchors(&cfg, &corpus, 3, 2)?;
    println!(
        "{} cells ({} seeds per cell), config digest {}",
        report.cells.len(),
        report.n_seeds,
        &report.config_digest[..16]
    );
    println!(
        "{:>5}  {:>7}  {:>12}  {:>12}  {:>12}",
        "split", "anchor", "median top1", "top1 spread", "median nmse"
    );
    for s in &report.summary {
        println!(
            "{:>5}  {:>7}  {:>12.4}  {:>12.4}  {:>12.4}",
            s.split, s.anchor, s.median_top1[2], s.spread_top1[2], s.median_nmse
        );
    }

    let dir = std::env::temp_dir().join("wmlm_compare_example");
    std::fs::create_dir_all(&dir)?;
    let files = compare::write_compare(&report, &dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
