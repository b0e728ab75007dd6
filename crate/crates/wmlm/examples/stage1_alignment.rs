//! Contrastively align GPS and vision encoders to the beam encoder on one
//! synthetic scenario, then watch in-batch retrieval climb above chance.

use wmlm::align::{stage1_train, AlignConfig, Anchor, Stage1Result};
use wmlm::encoders::EncoderConfig;
use wmlm::scenegen;

fn main() -> wmlm::Result<()> {
    let configs = scenegen::presets(7, 2);
    let mut windows = Vec::new();
    for cfg in configs.iter().take(2) {
        windows.extend(scenegen::gen_scenario(cfg)?.windows());
    }
    println!("{} training windows from 2 scenarios", windows.len());

    let enc_cfg = EncoderConfig::default();
    let align_cfg = AlignConfig {
        anchor: Anchor::Beam,
        epochs: 10,
        ..Default::default()
    };
    let out: Stage1Result<f32> = stage1_train(&windows, &enc_cfg, &align_cfg, 42)?;

    println!("{:>5}  {:>10}  {:>9}", "epoch", "loss", "retrieval");
    for row in &out.history {
        println!("{:>5}  {:>10.4}  {:>9.4}", row.epoch, row.loss, row.retrieval);
    }
    let chance = 1.0 / align_cfg.batch_size as f64;
    let last = out.history.last().expect("epochs > 0");
    println!(
        "final retrieval {:.4} = {:.1}x chance ({:.4}); temperature {:.4}",
        last.retrieval,
        last.retrieval / chance,
        chance,
        out.temperature.to_f64_vec()[0]
    );
    Ok(())
}
