//! Overfit the multi-task transformer on a small window subset, then replay
//! the trained checkpoint autoregressively with greedy and sampled decoding.

use wmlm::checkpoint::params_digest;
use wmlm::config::{RunConfig, TrainConfig};
use wmlm::encoders::{EncoderConfig, Encoders};
use wmlm::model::{BackboneConfig, GenMode, TokenLayout, WmlmModel};
use wmlm::scenegen::{self, SampleWindow};
use wmlm::train;

fn main() -> wmlm::Result<()> {
    let corpus: Vec<_> = scenegen::presets(7, 1)
        .iter()
        .take(2)
        .map(scenegen::gen_scenario)
        .collect::<wmlm::Result<_>>()?;

    let mut cfg = RunConfig {
        encoders: EncoderConfig { d_model: 32, hidden: 16, ..Default::default() },
        backbone: BackboneConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            ffn: Some(64),
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 60,
            lr: 3e-3,
            batch_size: 16,
            overfit_windows: 16,
            patience: 0,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.eval.split = "custom".into();
    cfg.eval.custom_train = vec![1];
    cfg.eval.custom_test = vec![2];
    cfg.eval.val_fraction = 0.0;

    let art = train::run_stage2(&cfg, &corpus, None, 42)?;
    println!(
        "trained {} epochs (best {}), checkpoint holds {} tensors",
        art.epochs_run,
        art.best_epoch,
        art.checkpoint.names().count()
    );
    for row in art.history.iter().filter(|r| r.split == "train").step_by(10) {
        println!(
            "epoch {:>3}: loss {:>8.4}  top1 {:.3}/{:.3}/{:.3}  nmse {:.4}",
            row.epoch,
            row.loss,
            row.top1[0],
            row.top1[1],
            row.top1[2],
            row.nmse.unwrap_or(f64::NAN)
        );
    }

    // Rebuild the network from the checkpoint the way a fresh process would.
    let encoders: Encoders<f32> = Encoders::new(&cfg.encoders, 42)?;
    let layout = TokenLayout::new(&cfg.encoders.modalities)?;
    let model: WmlmModel<f32> = WmlmModel::new(&cfg.backbone, layout, 42)?;
    let mut params = encoders.params()?;
    model.params()?.iter().try_for_each(|(n, t)| params.insert(n, t.clone()))?;
    art.checkpoint.load_into(&params)?;
    println!("restored parameter digest {}", &params_digest(&params)[..16]);

    // Autoregressive generation feeds each predicted beam back in as a
    // pseudo-observation before decoding the next step.
    let windows = corpus[0].windows();
    let batch: Vec<&SampleWindow> = windows[..8].iter().collect();
    let greedy = model.generate_rollout(&encoders, &batch, GenMode::Greedy)?;
    let sampled = model.generate_rollout(&encoders, &batch, GenMode::Sample(1))?;
    let seq = |v: &[usize]| v.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" ");
    let mut hits = 0;
    let mut total = 0;
    println!("{:>6}  {:>10}  {:>10}  {:>10}", "window", "labels", "greedy", "sampled");
    for (i, w) in batch.iter().enumerate() {
        let labels: Vec<usize> = w.future.iter().map(|r| r.beam_label).collect();
        hits += greedy[i].iter().zip(&labels).filter(|(a, b)| a == b).count();
        total += labels.len();
        println!("{:>6}  {:>10}  {:>10}  {:>10}", i, seq(&labels), seq(&greedy[i]), seq(&sampled[i]));
    }
    println!("greedy rollout hits on training-scenario windows: {hits}/{total}");
    Ok(())
}
