//! Training drivers. Stage 1 wraps the contrastive alignment loop, stage 2
//! adapts the transformer with the joint classification + forecast loss, and
//! the GRU baseline trains on classification alone. Each driver returns a
//! checkpoint plus a per-epoch history.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{stage1_train, Anchor, Stage1EpochRow};
use crate::autodiff::optim::{Adam, ParamSet};
use crate::autodiff::{nmse, no_grad, Tensor};
use crate::checkpoint::{params_digest, Checkpoint, StageTag};
use crate::config::{RunConfig, TOOL_VERSION};
use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::eval::{beam_vision_retrieval, partition, AccuracyTally, SplitSpec};
use crate::model::{future_labels, future_powers, log_compress, TokenLayout, WmlmModel};
use crate::phy::N_BEAMS;
use crate::rng;
use crate::rnn::GruBaseline;
use crate::scenegen::{SampleWindow, ScenarioData, HORIZON};

pub const HISTORY_FORMAT: &str = "wmlm-history-1";

/// Scoring passes batch this many windows.
const SCORE_BATCH: usize = 256;

/// One training-history record. Stage-2 histories carry two rows per epoch
/// (running train metrics and a clean validation pass); overfit runs and
/// runs without validation windows carry the train row only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub top1: [f64; HORIZON],
    pub top3: [f64; HORIZON],
    pub top5: [f64; HORIZON],
    pub nmse: Option<f64>,
    pub retrieval: Option<f64>,
}

/// History file: one JSON header line, then one JSON row per record.
pub fn write_history<T: Serialize>(
    path: &Path,
    stage: StageTag,
    cfg: &RunConfig,
    seed: u64,
    rows: &[T],
) -> Result<()> {
    let digest = cfg.digest()?;
    let header = serde_json::json!({
        "format": HISTORY_FORMAT,
        "stage": stage.to_string(),
        "config_digest": digest,
        "seed": seed,
        "tool_version": TOOL_VERSION,
    });
    let mut out = serde_json::to_string(&header)
        .map_err(|e| Error::Data(format!("history header: {e}")))?;
    out.push('\n');
    for row in rows {
        out.push_str(
            &serde_json::to_string(row).map_err(|e| Error::Data(format!("history row: {e}")))?,
        );
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub struct Stage1Artifacts {
    pub checkpoint: Checkpoint,
    pub history: Vec<Stage1EpochRow>,
}

/// Stage 1 on the split's train windows. `anchor = none` is the unaligned
/// control arm: the encoders are checkpointed at their random init.
pub fn run_stage1(cfg: &RunConfig, corpus: &[ScenarioData], seed: u64) -> Result<Stage1Artifacts> {
    cfg.validate()?;
    let spec = SplitSpec::from_eval_config(&cfg.eval)?;
    let parts = partition(corpus, &spec)?;
    if cfg.align.anchor == Anchor::None {
        let encoders: Encoders<f32> = Encoders::new(&cfg.encoders, seed)?;
        let checkpoint =
            Checkpoint::from_params(StageTag::Stage1, &encoders.params()?, cfg, seed, None)?;
        return Ok(Stage1Artifacts { checkpoint, history: Vec::new() });
    }
    let result = stage1_train::<f32>(&parts.train, &cfg.encoders, &cfg.align, seed)?;
    let metrics = result
        .history
        .last()
        .map(|r| serde_json::json!({ "loss": r.loss, "retrieval": r.retrieval }));
    let checkpoint =
        Checkpoint::from_params(StageTag::Stage1, &result.params()?, cfg, seed, metrics)?;
    Ok(Stage1Artifacts { checkpoint, history: result.history })
}

pub struct TrainArtifacts {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRow>,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Keep the first n windows of a seeded shuffle. The stream name is shared
/// by both model families so they overfit the same subset.
fn overfit_subset(windows: &mut Vec<SampleWindow>, n: usize, seed: u64) -> Result<()> {
    use rand::RngExt;
    if n > windows.len() {
        return Err(Error::Config(format!(
            "overfit_windows = {n} exceeds the {} train windows",
            windows.len()
        )));
    }
    let mut r = rng::stream(seed, "train.overfit");
    for i in 0..n {
        let j = i + r.random_range(0..windows.len() - i);
        windows.swap(i, j);
    }
    windows.truncate(n);
    Ok(())
}

fn shuffled_order(len: usize, seed: u64, name: &str, epoch: usize) -> Vec<usize> {
    use rand::RngExt;
    let mut order: Vec<usize> = (0..len).collect();
    let mut r = rng::stream_indexed(seed, name, epoch as u64);
    for i in (1..order.len()).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn snapshot(params: &ParamSet<f32>) -> Vec<Vec<f32>> {
    params.iter().map(|(_, t)| t.data().to_vec()).collect()
}

fn restore(params: &ParamSet<f32>, snap: &[Vec<f32>]) -> Result<()> {
    for ((_, t), s) in params.iter().zip(snap) {
        t.set_data(s.clone())?;
    }
    Ok(())
}

fn mean3(xs: &[f64; HORIZON]) -> f64 {
    xs.iter().sum::<f64>() / HORIZON as f64
}

/// Accumulates per-batch training metrics into one epoch row for free; the
/// numbers are computed from the same forward passes the optimizer uses.
#[derive(Default)]
struct RunningEpoch {
    loss_sum: f64,
    nmse_sum: f64,
    samples: usize,
    tally: AccuracyTally,
}

impl RunningEpoch {
    fn add_batch(
        &mut self,
        windows: &[&SampleWindow],
        logits: &Tensor<f32>,
        loss: f64,
        nmse_val: Option<f64>,
    ) {
        let n = windows.len() * HORIZON;
        self.loss_sum += loss * n as f64;
        if let Some(v) = nmse_val {
            self.nmse_sum += v * n as f64;
        }
        self.samples += n;
        let rows = logits.to_f64_vec();
        for (i, w) in windows.iter().enumerate() {
            for (s, fut) in w.future.iter().enumerate() {
                let base = (i * HORIZON + s) * N_BEAMS;
                self.tally.add(s, &rows[base..base + N_BEAMS], fut.beam_label);
            }
        }
    }

    fn row(&self, epoch: usize, with_nmse: bool) -> EpochRow {
        let (top1, top3, top5) = self.tally.finish();
        let n = self.samples.max(1) as f64;
        EpochRow {
            epoch,
            split: "train".to_string(),
            loss: self.loss_sum / n,
            top1,
            top3,
            top5,
            nmse: if with_nmse { Some(self.nmse_sum / n) } else { None },
            retrieval: None,
        }
    }
}

struct Stage2Nets<'a> {
    model: &'a WmlmModel<f32>,
    encoders: &'a Encoders<f32>,
    enc_train: bool,
    lambda: f64,
}

impl Stage2Nets<'_> {
    /// Joint loss `cross_entropy + lambda * nmse` in log-power space.
    fn batch_loss(
        &self,
        batch: &[&SampleWindow],
        train: bool,
        drop_rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(Tensor<f32>, Tensor<f32>, f64)> {
        let b = batch.len();
        let seq =
            self.model.assemble_sequence(self.encoders, batch, train && self.enc_train, drop_rng)?;
        let hidden = self.model.forward(&seq, train, drop_rng)?;
        let logits = self.model.predict_beams(&hidden)?;
        let powers = self.model.forecast_powers(&hidden)?.reshape(&[b * HORIZON, N_BEAMS])?;
        let ce = WmlmModel::classification_loss(&logits, &future_labels(batch))?;
        let target =
            log_compress(&future_powers::<f32>(batch)?.reshape(&[b * HORIZON, N_BEAMS])?);
        let fit = nmse(&log_compress(&powers), &target)?;
        let nmse_val = fit.loss.to_f64_vec()[0];
        let loss = ce.add(&fit.loss.mul_scalar(self.lambda))?;
        Ok((loss, logits, nmse_val))
    }

    /// Clean pass over a window set in eval mode.
    fn score(&self, windows: &[SampleWindow], epoch: usize, seed: u64) -> Result<EpochRow> {
        let mut drop_rng = rng::stream(seed, "stage2.score");
        let mut running = RunningEpoch::default();
        no_grad(|| -> Result<()> {
            for chunk in windows.chunks(SCORE_BATCH) {
                let batch: Vec<&SampleWindow> = chunk.iter().collect();
                let (loss, logits, nmse_val) = self.batch_loss(&batch, false, &mut drop_rng)?;
                running.add_batch(&batch, &logits, loss.to_f64_vec()[0], Some(nmse_val));
            }
            Ok(())
        })?;
        let mut row = running.row(epoch, true);
        row.split = "val".to_string();
        row.retrieval = beam_vision_retrieval(self.encoders, windows, seed)?;
        Ok(row)
    }
}

/// Stage-2 adaptation. With `init` the encoders start from the checkpoint
/// and are frozen unless `train.unfreeze_encoders` is set; frozen encoders
/// are excluded from the optimizer and run without dropout, so their bytes
/// are unchanged by training.
pub fn run_stage2(
    cfg: &RunConfig,
    corpus: &[ScenarioData],
    init: Option<&Checkpoint>,
    seed: u64,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let spec = SplitSpec::from_eval_config(&cfg.eval)?;
    let parts = partition(corpus, &spec)?;
    let mut train_windows = parts.train;
    let mut val_windows = parts.val;
    let overfit = cfg.train.overfit_windows > 0;
    if overfit {
        overfit_subset(&mut train_windows, cfg.train.overfit_windows, seed)?;
        val_windows.clear();
    }

    let encoders: Encoders<f32> = Encoders::new(&cfg.encoders, seed)?;
    let layout = TokenLayout::new(&cfg.encoders.modalities)?;
    let model: WmlmModel<f32> = WmlmModel::new(&cfg.backbone, layout, seed)?;
    let enc_params = encoders.params()?;
    let model_params = model.params()?;

    let mut frozen = false;
    if let Some(ckpt) = init {
        match ckpt.header.stage {
            StageTag::Stage1 => ckpt.load_into(&enc_params)?,
            StageTag::Stage2 => {
                ckpt.load_into(&enc_params)?;
                ckpt.load_into(&model_params)?;
            }
            StageTag::Rnn => {
                return Err(Error::Checkpoint(
                    "an rnn checkpoint cannot initialize the wmlm model".into(),
                ))
            }
        }
        frozen = !cfg.train.unfreeze_encoders;
    }
    let frozen_digest = frozen.then(|| params_digest(&enc_params));

    let mut all_params = ParamSet::new();
    for (n, t) in enc_params.iter() {
        all_params.insert(n, t.clone())?;
    }
    for (n, t) in model_params.iter() {
        all_params.insert(n, t.clone())?;
    }
    let mut trainable = ParamSet::new();
    if !frozen {
        for (n, t) in enc_params.iter() {
            trainable.insert(n, t.clone())?;
        }
    }
    for (n, t) in model_params.iter() {
        trainable.insert(n, t.clone())?;
    }

    let nets = Stage2Nets {
        model: &model,
        encoders: &encoders,
        enc_train: !frozen,
        lambda: cfg.train.lambda_nmse,
    };
    let mut opt = Adam::new(cfg.train.lr);
    let mut history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = snapshot(&all_params);
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    let early_stop = !val_windows.is_empty() && cfg.train.patience > 0;

    for epoch in 0..cfg.train.epochs {
        epochs_run = epoch + 1;
        let order = shuffled_order(train_windows.len(), seed, "stage2.shuffle", epoch);
        let mut drop_rng = rng::stream_indexed(seed, "stage2.dropout", epoch as u64);
        let mut running = RunningEpoch::default();
        for (step, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let batch: Vec<&SampleWindow> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let (loss, logits, nmse_val) = nets.batch_loss(&batch, true, &mut drop_rng)?;
            let loss_val = loss.to_f64_vec()[0];
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite stage-2 loss at epoch {epoch} step {step}"
                )));
            }
            trainable.zero_grad_all();
            loss.backward()?;
            opt.step(&trainable)?;
            running.add_batch(&batch, &logits, loss_val, Some(nmse_val));
        }
        let train_row = running.row(epoch, true);
        let stop_now = overfit && train_row.top1.iter().all(|&a| a >= 0.99);
        history.push(train_row);

        if !val_windows.is_empty() {
            let val_row = nets.score(&val_windows, epoch, seed)?;
            let metric = mean3(&val_row.top1);
            history.push(val_row);
            if early_stop {
                if metric > best + 1e-12 {
                    best = metric;
                    best_epoch = epoch;
                    best_snap = snapshot(&all_params);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale > cfg.train.patience {
                        break;
                    }
                }
            }
        }
        if stop_now {
            break;
        }
    }
    if early_stop {
        restore(&all_params, &best_snap)?;
    } else {
        best_epoch = epochs_run.saturating_sub(1);
    }

    if let Some(before) = frozen_digest {
        if params_digest(&enc_params) != before {
            return Err(Error::Numeric("frozen encoders were modified".into()));
        }
    }

    let metrics = history
        .last()
        .map(|r| serde_json::to_value(r).expect("row serializes"));
    let checkpoint = Checkpoint::from_params(StageTag::Stage2, &all_params, cfg, seed, metrics)?;
    Ok(TrainArtifacts { checkpoint, history, epochs_run, best_epoch })
}

/// GRU baseline trained on classification alone.
pub fn train_rnn_baseline(
    cfg: &RunConfig,
    corpus: &[ScenarioData],
    seed: u64,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let spec = SplitSpec::from_eval_config(&cfg.eval)?;
    let parts = partition(corpus, &spec)?;
    let mut train_windows = parts.train;
    let mut val_windows = parts.val;
    let overfit = cfg.train.overfit_windows > 0;
    if overfit {
        overfit_subset(&mut train_windows, cfg.train.overfit_windows, seed)?;
        val_windows.clear();
    }

    let gru: GruBaseline<f32> = GruBaseline::with_config(&cfg.train.rnn, seed)?;
    let params = gru.params()?;
    let pos_scale = cfg.encoders.pos_scale;

    let batch_loss = |batch: &[&SampleWindow]| -> Result<(Tensor<f32>, Tensor<f32>)> {
        let x = GruBaseline::<f32>::features(batch.iter().map(|w| w.obs.as_slice()), pos_scale)?;
        let logits = gru.forward(&x)?;
        let loss = WmlmModel::classification_loss(&logits, &future_labels(batch))?;
        Ok((loss, logits))
    };
    let score = |windows: &[SampleWindow], epoch: usize| -> Result<EpochRow> {
        let mut running = RunningEpoch::default();
        no_grad(|| -> Result<()> {
            for chunk in windows.chunks(SCORE_BATCH) {
                let batch: Vec<&SampleWindow> = chunk.iter().collect();
                let (loss, logits) = batch_loss(&batch)?;
                running.add_batch(&batch, &logits, loss.to_f64_vec()[0], None);
            }
            Ok(())
        })?;
        let mut row = running.row(epoch, false);
        row.split = "val".to_string();
        Ok(row)
    };

    let mut opt = Adam::new(cfg.train.lr);
    let mut history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = snapshot(&params);
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    let early_stop = !val_windows.is_empty() && cfg.train.patience > 0;

    for epoch in 0..cfg.train.epochs {
        epochs_run = epoch + 1;
        let order = shuffled_order(train_windows.len(), seed, "rnn.shuffle", epoch);
        let mut running = RunningEpoch::default();
        for (step, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let batch: Vec<&SampleWindow> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let (loss, logits) = batch_loss(&batch)?;
            let loss_val = loss.to_f64_vec()[0];
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite rnn loss at epoch {epoch} step {step}"
                )));
            }
            params.zero_grad_all();
            loss.backward()?;
            opt.step(&params)?;
            running.add_batch(&batch, &logits, loss_val, None);
        }
        let train_row = running.row(epoch, false);
        let stop_now = overfit && train_row.top1.iter().all(|&a| a >= 0.99);
        history.push(train_row);

        if !val_windows.is_empty() {
            let val_row = score(&val_windows, epoch)?;
            let metric = mean3(&val_row.top1);
            history.push(val_row);
            if early_stop {
                if metric > best + 1e-12 {
                    best = metric;
                    best_epoch = epoch;
                    best_snap = snapshot(&params);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale > cfg.train.patience {
                        break;
                    }
                }
            }
        }
        if stop_now {
            break;
        }
    }
    if early_stop {
        restore(&params, &best_snap)?;
    } else {
        best_epoch = epochs_run.saturating_sub(1);
    }

    let metrics = history
        .last()
        .map(|r| serde_json::to_value(r).expect("row serializes"));
    let checkpoint = Checkpoint::from_params(StageTag::Rnn, &params, cfg, seed, metrics)?;
    Ok(TrainArtifacts { checkpoint, history, epochs_run, best_epoch })
}
