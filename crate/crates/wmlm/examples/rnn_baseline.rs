//! Train the GRU reference model and put its size next to the transformer's.

use wmlm::config::RunConfig;
use wmlm::encoders::Encoders;
use wmlm::model::{TokenLayout, WmlmModel};
use wmlm::rnn::{GruBaseline, RNN_INPUT_DIM};
use wmlm::scenegen;
use wmlm::train;

fn main() -> wmlm::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 8;
    cfg.train.patience = 0;

    // The baseline consumes a flat per-step feature vector instead of
    // per-modality token streams.
    let gru: GruBaseline<f32> = GruBaseline::with_config(&cfg.train.rnn, 42)?;
    let encoders: Encoders<f32> = Encoders::new(&cfg.encoders, 42)?;
    let layout = TokenLayout::new(&cfg.encoders.modalities)?;
    let wmlm: WmlmModel<f32> = WmlmModel::new(&cfg.backbone, layout, 42)?;
    let big = wmlm.param_count() + encoders.params()?.num_elements();
    println!(
        "gru: input {} hidden {} -> {} parameters ({:.1}% of the {}-parameter wmlm stack)",
        RNN_INPUT_DIM,
        cfg.train.rnn.hidden,
        gru.param_count(),
        100.0 * gru.param_count() as f64 / big as f64,
        big
    );

    let corpus: Vec<_> = scenegen::presets(7, 1)
        .iter()
        .map(scenegen::gen_scenario)
        .collect::<wmlm::Result<_>>()?;
    let art = train::train_rnn_baseline(&cfg, &corpus, 42)?;
    println!("stage tag: {}", art.checkpoint.header.stage);
    for row in &art.history {
        if row.split == "val" {
            println!(
                "epoch {:>2} val: loss {:>8.4}  top1 {:.3}/{:.3}/{:.3}",
                row.epoch, row.loss, row.top1[0], row.top1[1], row.top1[2]
            );
        }
    }
    let last = art.history.last().expect("epochs > 0");
    println!(
        "stopped after {} epochs (best {}), final {} top1 {:.3}/{:.3}/{:.3}",
        art.epochs_run, art.best_epoch, last.split, last.top1[0], last.top1[1], last.top1[2]
    );
    Ok(())
}
