//! Zero-shot cross-scenario evaluation: scenario-level splits, top-k and
//! NMSE metrics, and the trivial reference predictors (persistence and
//! majority class) that a learned model has to beat.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::no_grad;
use crate::checkpoint::{params_digest, Checkpoint, StageTag};
use crate::config::{EvalConfig, RunConfig, TOOL_VERSION};
use crate::encoders::{Encoders, Modality};
use crate::error::{Error, Result};
use crate::model::{TokenLayout, WmlmModel};
use crate::phy::N_BEAMS;
use crate::rng;
use crate::rnn::GruBaseline;
use crate::scenegen::{SampleWindow, ScenarioData, HORIZON};

pub const REPORT_FORMAT: &str = "wmlm-report-1";

/// Evaluation forward passes run in chunks of this many windows.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub train_scenarios: Vec<u8>,
    pub test_scenarios: Vec<u8>,
    pub val_fraction: f64,
}

impl SplitSpec {
    pub fn new(
        name: &str,
        train: &[u8],
        test: &[u8],
        val_fraction: f64,
    ) -> Result<SplitSpec> {
        let mut train: Vec<u8> = train.to_vec();
        let mut test: Vec<u8> = test.to_vec();
        train.sort_unstable();
        train.dedup();
        test.sort_unstable();
        test.dedup();
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("split needs train and test scenarios".into()));
        }
        if train.iter().any(|id| test.contains(id)) {
            return Err(Error::Config("train and test scenarios must be disjoint".into()));
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(SplitSpec { name: name.to_string(), train_scenarios: train, test_scenarios: test, val_fraction })
    }

    /// "S4" trains on scenarios 1..4, "S6" on 1..6; the rest of 1..8 is the
    /// zero-shot test set.
    pub fn preset(name: &str, val_fraction: f64) -> Result<SplitSpec> {
        let n = match name {
            "S4" => 4u8,
            "S6" => 6,
            other => return Err(Error::Config(format!("unknown split preset {other:?}"))),
        };
        let train: Vec<u8> = (1..=n).collect();
        let test: Vec<u8> = (n + 1..=8).collect();
        SplitSpec::new(name, &train, &test, val_fraction)
    }

    pub fn from_eval_config(cfg: &EvalConfig) -> Result<SplitSpec> {
        cfg.validate()?;
        match cfg.split.as_str() {
            "custom" => SplitSpec::new("custom", &cfg.custom_train, &cfg.custom_test, cfg.val_fraction),
            preset => SplitSpec::preset(preset, cfg.val_fraction),
        }
    }
}

/// Window-level partition of a corpus under a split.
pub struct SplitWindows {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Validation windows are taken at a fixed stride within each train
/// scenario, so the partition is deterministic without consuming RNG state.
pub fn partition(corpus: &[ScenarioData], spec: &SplitSpec) -> Result<SplitWindows> {
    let find = |id: u8| -> Result<&ScenarioData> {
        corpus
            .iter()
            .find(|s| s.config.scenario_id == id)
            .ok_or_else(|| Error::Config(format!("split references scenario {id} missing from the dataset")))
    };
    let stride = if spec.val_fraction > 0.0 {
        (1.0 / spec.val_fraction).round() as usize
    } else {
        usize::MAX
    };
    let mut out = SplitWindows { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for &id in &spec.train_scenarios {
        for (i, w) in find(id)?.windows().into_iter().enumerate() {
            if stride != usize::MAX && i % stride == stride - 1 {
                out.val.push(w);
            } else {
                out.train.push(w);
            }
        }
    }
    for &id in &spec.test_scenarios {
        out.test.extend(find(id)?.windows());
    }
    if out.test.is_empty() {
        return Err(Error::Config("test split contains no windows".into()));
    }
    if out.train.is_empty() {
        return Err(Error::Config("train split contains no windows".into()));
    }
    Ok(out)
}

/// Number of logits strictly greater than the label's logit; the label is in
/// the top k when fewer than k entries beat it.
fn rank_of(logits: &[f64], label: usize) -> usize {
    let own = logits[label];
    logits.iter().filter(|&&v| v > own).count()
}

/// Per-horizon-step top-1/3/5 hit counting.
#[derive(Debug, Clone, Default)]
pub struct AccuracyTally {
    hits: [[usize; HORIZON]; 3],
    n: usize,
}

impl AccuracyTally {
    pub fn add(&mut self, step: usize, logits: &[f64], label: usize) {
        let rank = rank_of(logits, label);
        for (ki, k) in [1usize, 3, 5].into_iter().enumerate() {
            if rank < k {
                self.hits[ki][step] += 1;
            }
        }
        if step == 0 {
            self.n += 1;
        }
    }

    pub fn windows(&self) -> usize {
        self.n
    }

    /// (top1, top3, top5) per step.
    pub fn finish(&self) -> ([f64; HORIZON], [f64; HORIZON], [f64; HORIZON]) {
        let f = |ki: usize| {
            let mut out = [0.0; HORIZON];
            for s in 0..HORIZON {
                out[s] = self.hits[ki][s] as f64 / self.n.max(1) as f64;
            }
            out
        };
        (f(0), f(1), f(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub model: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub split: SplitSpec,
    pub n_test_windows: usize,
    pub top1: [f64; HORIZON],
    pub top3: [f64; HORIZON],
    pub top5: [f64; HORIZON],
    /// Mean forecast NMSE in log-power space; absent for models without a
    /// forecast head.
    pub nmse: Option<f64>,
    /// Mean in-batch (beam, vision) retrieval accuracy of the encoders.
    pub retrieval: Option<f64>,
    pub persistence_top1: [f64; HORIZON],
    pub persistence_nmse: f64,
    pub majority_label: usize,
    pub majority_top1: [f64; HORIZON],
    pub runtime_seconds: f64,
}

impl MetricsReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("report serialization: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MetricsReport> {
        let text = std::fs::read_to_string(path)?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("report parse: {e}")))?;
        if report.format != REPORT_FORMAT {
            return Err(Error::Data(format!("unsupported report format {:?}", report.format)));
        }
        Ok(report)
    }

    fn check_invariants(&self) -> Result<()> {
        for s in 0..HORIZON {
            let (a, b, c) = (self.top1[s], self.top3[s], self.top5[s]);
            let ordered = a <= b + 1e-12 && b <= c + 1e-12;
            let in_range = (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&c);
            if !ordered || !in_range {
                return Err(Error::Numeric(format!(
                    "accuracy invariant violated at step {s}: {a} / {b} / {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Log-space NMSE of one prediction against one target vector.
fn log_nmse_sample(pred: &[f64], target: &[f64]) -> f64 {
    let lp: Vec<f64> = pred.iter().map(|&p| (p + crate::encoders::LOG_EPS).log10()).collect();
    let lt: Vec<f64> = target.iter().map(|&p| (p + crate::encoders::LOG_EPS).log10()).collect();
    let num: f64 = lp.iter().zip(&lt).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = lt.iter().map(|b| b * b).sum();
    num / den
}

/// Persistence reference: repeat the last observed label and power vector
/// for every horizon step.
pub fn persistence_references(test: &[SampleWindow]) -> ([f64; HORIZON], f64) {
    let mut tally = AccuracyTally::default();
    let mut nmse_sum = 0.0;
    let mut nmse_n = 0usize;
    for w in test {
        let last = w.obs.last().expect("windows are non-empty");
        let mut one_hot = vec![0.0; N_BEAMS];
        one_hot[last.beam_label] = 1.0;
        for (s, fut) in w.future.iter().enumerate() {
            tally.add(s, &one_hot, fut.beam_label);
            nmse_sum += log_nmse_sample(&last.powers, &fut.powers);
            nmse_n += 1;
        }
    }
    let (top1, _, _) = tally.finish();
    (top1, nmse_sum / nmse_n.max(1) as f64)
}

/// Majority-class reference: the most common future label in the train
/// windows, scored on the test windows.
pub fn majority_reference(train: &[SampleWindow], test: &[SampleWindow]) -> (usize, [f64; HORIZON]) {
    let mut counts = [0usize; N_BEAMS];
    for w in train {
        for r in &w.future {
            counts[r.beam_label] += 1;
        }
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut top1 = [0.0; HORIZON];
    for (s, acc) in top1.iter_mut().enumerate() {
        let hits = test.iter().filter(|w| w.future[s].beam_label == majority).count();
        *acc = hits as f64 / test.len().max(1) as f64;
    }
    (majority, top1)
}

struct ModelOutputs {
    tally: AccuracyTally,
    nmse: Option<f64>,
    retrieval: Option<f64>,
}

fn eval_wmlm(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    test: &[SampleWindow],
    seed: u64,
) -> Result<ModelOutputs> {
    let encoders: Encoders<f32> = Encoders::new(&cfg.encoders, seed)?;
    let layout = TokenLayout::new(&cfg.encoders.modalities)?;
    let model: WmlmModel<f32> = WmlmModel::new(&cfg.backbone, layout, seed)?;
    let mut params = encoders.params()?;
    model.params()?.iter().try_for_each(|(n, t)| params.insert(n, t.clone()))?;
    ckpt.load_into(&params)?;
    let before = params_digest(&params);

    let mut drop_rng = rng::stream(seed, "eval");
    let mut tally = AccuracyTally::default();
    let mut nmse_sum = 0.0;
    let mut nmse_n = 0usize;
    no_grad(|| -> Result<()> {
        for chunk in test.chunks(EVAL_BATCH) {
            let batch: Vec<&SampleWindow> = chunk.iter().collect();
            let seq = model.assemble_sequence(&encoders, &batch, false, &mut drop_rng)?;
            let hidden = model.forward(&seq, false, &mut drop_rng)?;
            let logits = model.predict_beams(&hidden)?.to_f64_vec();
            let powers = model.forecast_powers(&hidden)?.to_f64_vec();
            for (i, w) in chunk.iter().enumerate() {
                for (s, fut) in w.future.iter().enumerate() {
                    let base = (i * HORIZON + s) * N_BEAMS;
                    tally.add(s, &logits[base..base + N_BEAMS], fut.beam_label);
                    nmse_sum += log_nmse_sample(&powers[base..base + N_BEAMS], &fut.powers);
                    nmse_n += 1;
                }
            }
        }
        Ok(())
    })?;

    let retrieval = beam_vision_retrieval(&encoders, test, seed)?;
    if params_digest(&params) != before {
        return Err(Error::Numeric("evaluation mutated model parameters".into()));
    }
    Ok(ModelOutputs { tally, nmse: Some(nmse_sum / nmse_n.max(1) as f64), retrieval })
}

/// Mean in-batch retrieval accuracy for (beam, vision) pairs over batches of
/// 64 test windows. None when either modality is disabled.
pub fn beam_vision_retrieval(
    encoders: &Encoders<f32>,
    windows: &[SampleWindow],
    seed: u64,
) -> Result<Option<f64>> {
    if encoders.get(Modality::Beam).is_err() || encoders.get(Modality::Vis).is_err() {
        return Ok(None);
    }
    let mut drop_rng = rng::stream(seed, "eval.retrieval");
    let mut total = 0.0;
    let mut n = 0usize;
    no_grad(|| -> Result<()> {
        for chunk in windows.chunks(64) {
            if chunk.len() < 2 {
                continue;
            }
            let obs: Vec<&[crate::scenegen::MultimodalRecord]> =
                chunk.iter().map(|w| w.obs.as_slice()).collect();
            let beam_feats = crate::encoders::features_for(Modality::Beam, &obs, encoders.config.pos_scale);
            let vis_feats = crate::encoders::features_for(Modality::Vis, &obs, encoders.config.pos_scale);
            let beam = encoders.encode_features(Modality::Beam, &beam_feats, false, &mut drop_rng)?;
            let vis = encoders.encode_features(Modality::Vis, &vis_feats, false, &mut drop_rng)?;
            total += crate::align::retrieval_accuracy(&beam.pooled, &vis.pooled)?;
            n += 1;
        }
        Ok(())
    })?;
    Ok(if n == 0 { None } else { Some(total / n as f64) })
}

fn eval_rnn(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    test: &[SampleWindow],
    seed: u64,
) -> Result<ModelOutputs> {
    let gru: GruBaseline<f32> = GruBaseline::with_config(&cfg.train.rnn, seed)?;
    let params = gru.params()?;
    ckpt.load_into(&params)?;
    let before = params_digest(&params);

    let mut tally = AccuracyTally::default();
    no_grad(|| -> Result<()> {
        for chunk in test.chunks(EVAL_BATCH) {
            let x = GruBaseline::<f32>::features(
                chunk.iter().map(|w| w.obs.as_slice()),
                cfg.encoders.pos_scale,
            )?;
            let logits = gru.forward(&x)?.to_f64_vec();
            for (i, w) in chunk.iter().enumerate() {
                for (s, fut) in w.future.iter().enumerate() {
                    let base = (i * HORIZON + s) * N_BEAMS;
                    tally.add(s, &logits[base..base + N_BEAMS], fut.beam_label);
                }
            }
        }
        Ok(())
    })?;
    if params_digest(&params) != before {
        return Err(Error::Numeric("evaluation mutated model parameters".into()));
    }
    Ok(ModelOutputs { tally, nmse: None, retrieval: None })
}

/// Zero-shot evaluation of a trained checkpoint on the split's held-out
/// scenarios. Performs no parameter writes; the parameter digest is checked
/// before and after the forward passes.
pub fn evaluate(ckpt: &Checkpoint, corpus: &[ScenarioData], spec: &SplitSpec) -> Result<MetricsReport> {
    let start = Instant::now();
    let cfg = ckpt
        .header
        .config
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks an embedded run config".into()))?;
    cfg.validate()?;
    let seed = ckpt.header.seed;
    let windows = partition(corpus, spec)?;

    let (outputs, model_tag) = match ckpt.header.stage {
        StageTag::Stage1 => {
            return Err(Error::Checkpoint(
                "stage-1 checkpoint has no task heads; evaluate a stage-2 or rnn checkpoint".into(),
            ))
        }
        StageTag::Stage2 => (eval_wmlm(cfg, ckpt, &windows.test, seed)?, "wmlm"),
        StageTag::Rnn => (eval_rnn(cfg, ckpt, &windows.test, seed)?, "rnn"),
    };

    let (top1, top3, top5) = outputs.tally.finish();
    let (persistence_top1, persistence_nmse) = persistence_references(&windows.test);
    let mut train_and_val = windows.train;
    train_and_val.extend(windows.val);
    let (majority_label, majority_top1) = majority_reference(&train_and_val, &windows.test);

    let report = MetricsReport {
        format: REPORT_FORMAT.to_string(),
        model: model_tag.to_string(),
        config_digest: ckpt.header.config_digest.clone(),
        seed,
        tool_version: TOOL_VERSION.to_string(),
        split: spec.clone(),
        n_test_windows: windows.test.len(),
        top1,
        top3,
        top5,
        nmse: outputs.nmse,
        retrieval: outputs.retrieval,
        persistence_top1,
        persistence_nmse,
        majority_label,
        majority_top1,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    report.check_invariants()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::AlignConfig;
    use crate::config::{EvalConfig, RunConfig};
    use crate::encoders::EncoderConfig;
    use crate::model::BackboneConfig;
    use crate::scenegen;

    fn corpus() -> Vec<ScenarioData> {
        scenegen::presets(13, 1)
            .iter()
            .take(2)
            .map(|c| scenegen::gen_scenario(c).unwrap())
            .collect()
    }

    fn small_cfg() -> RunConfig {
        RunConfig {
            encoders: EncoderConfig { d_model: 16, hidden: 8, ..Default::default() },
            backbone: BackboneConfig {
                d_model: 16,
                n_layers: 1,
                n_heads: 2,
                ffn: Some(32),
                ..Default::default()
            },
            align: AlignConfig { batch_size: 16, epochs: 2, ..Default::default() },
            eval: EvalConfig {
                split: "custom".to_string(),
                custom_train: vec![1],
                custom_test: vec![2],
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn stage2_checkpoint(cfg: &RunConfig, seed: u64) -> Checkpoint {
        let encoders: Encoders<f32> = Encoders::new(&cfg.encoders, seed).unwrap();
        let layout = TokenLayout::new(&cfg.encoders.modalities).unwrap();
        let model: WmlmModel<f32> = WmlmModel::new(&cfg.backbone, layout, seed).unwrap();
        let mut params = encoders.params().unwrap();
        model.params().unwrap().iter().for_each(|(n, t)| params.insert(n, t.clone()).unwrap());
        Checkpoint::from_params(StageTag::Stage2, &params, cfg, seed, None).unwrap()
    }

    #[test]
    fn split_presets_and_validation() {
        let s4 = SplitSpec::preset("S4", 0.1).unwrap();
        assert_eq!(s4.train_scenarios, vec![1, 2, 3, 4]);
        assert_eq!(s4.test_scenarios, vec![5, 6, 7, 8]);
        let s6 = SplitSpec::preset("S6", 0.1).unwrap();
        assert_eq!(s6.train_scenarios, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(s6.test_scenarios, vec![7, 8]);
        assert!(SplitSpec::preset("S5", 0.1).is_err());
        assert!(SplitSpec::new("x", &[1, 2], &[2, 3], 0.1).is_err());
        let err = SplitSpec::new("x", &[1], &[], 0.1).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn from_eval_config_resolves_custom() {
        let cfg = EvalConfig {
            split: "custom".to_string(),
            custom_train: vec![2, 1],
            custom_test: vec![5],
            val_fraction: 0.2,
        };
        let spec = SplitSpec::from_eval_config(&cfg).unwrap();
        assert_eq!(spec.train_scenarios, vec![1, 2]);
        assert_eq!(spec.val_fraction, 0.2);
    }

    #[test]
    fn partition_counts_and_val_stride() {
        let data = corpus();
        let spec = SplitSpec::new("custom", &[1], &[2], 0.1).unwrap();
        let w = partition(&data, &spec).unwrap();
        let total = data[0].windows().len();
        assert_eq!(w.train.len() + w.val.len(), total);
        assert_eq!(w.val.len(), total / 10);
        assert_eq!(w.test.len(), data[1].windows().len());
        assert!(w.test.iter().all(|x| x.scenario_id == 2));

        let missing = SplitSpec::new("custom", &[1], &[7], 0.1).unwrap();
        assert_eq!(partition(&data, &missing).err().unwrap().exit_code(), 2);

        let no_val = SplitSpec::new("custom", &[1], &[2], 0.0).unwrap();
        let w = partition(&data, &no_val).unwrap();
        assert!(w.val.is_empty());
        assert_eq!(w.train.len(), total);
    }

    #[test]
    fn tally_ranks_and_monotonicity() {
        let mut logits = vec![0.0; 64];
        for (i, v) in logits.iter_mut().enumerate() {
            *v = -(i as f64);
        }
        // label 0 is rank 0, label 3 is rank 3 (top-5 but not top-3)
        let mut t = AccuracyTally::default();
        t.add(0, &logits, 0);
        t.add(1, &logits, 3);
        t.add(2, &logits, 40);
        let (top1, top3, top5) = t.finish();
        assert_eq!(top1, [1.0, 0.0, 0.0]);
        assert_eq!(top3, [1.0, 0.0, 0.0]);
        assert_eq!(top5, [1.0, 1.0, 0.0]);
        for s in 0..3 {
            assert!(top1[s] <= top3[s] && top3[s] <= top5[s]);
        }
    }

    #[test]
    fn true_label_oracle_scores_one() {
        let data = corpus();
        let spec = SplitSpec::new("custom", &[1], &[2], 0.1).unwrap();
        let w = partition(&data, &spec).unwrap();
        let mut tally = AccuracyTally::default();
        for win in &w.test {
            for (s, fut) in win.future.iter().enumerate() {
                let mut one_hot = vec![0.0; N_BEAMS];
                one_hot[fut.beam_label] = 1.0;
                tally.add(s, &one_hot, fut.beam_label);
            }
        }
        let (top1, _, top5) = tally.finish();
        assert_eq!(top1, [1.0; 3]);
        assert_eq!(top5, [1.0; 3]);
    }

    #[test]
    fn persistence_beats_majority_at_step_one() {
        let data = corpus();
        let spec = SplitSpec::new("custom", &[1], &[2], 0.1).unwrap();
        let w = partition(&data, &spec).unwrap();
        let (p_top1, p_nmse) = persistence_references(&w.test);
        let (label, m_top1) = majority_reference(&w.train, &w.test);
        assert!(label < N_BEAMS);
        assert!(p_nmse.is_finite() && p_nmse >= 0.0);
        assert!(
            p_top1[0] > m_top1[0],
            "persistence {p_top1:?} should beat majority {m_top1:?} at step 1"
        );
    }

    #[test]
    fn evaluate_reports_are_sane_and_pure() {
        let data = corpus();
        let cfg = small_cfg();
        let spec = SplitSpec::from_eval_config(&cfg.eval).unwrap();
        let ckpt = stage2_checkpoint(&cfg, 3);
        let r = evaluate(&ckpt, &data, &spec).unwrap();
        assert_eq!(r.model, "wmlm");
        assert_eq!(r.n_test_windows, data[1].windows().len());
        for s in 0..3 {
            assert!(r.top1[s] <= r.top3[s] && r.top3[s] <= r.top5[s]);
            assert!((0.0..=1.0).contains(&r.top1[s]));
        }
        assert!(r.nmse.unwrap().is_finite());
        assert!(r.retrieval.is_some());

        // reproducible except for the runtime field
        let mut a = evaluate(&ckpt, &data, &spec).unwrap();
        let mut b = evaluate(&ckpt, &data, &spec).unwrap();
        a.runtime_seconds = 0.0;
        b.runtime_seconds = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_rejects_stage1_and_missing_config() {
        let data = corpus();
        let cfg = small_cfg();
        let spec = SplitSpec::from_eval_config(&cfg.eval).unwrap();
        let encoders: Encoders<f32> = Encoders::new(&cfg.encoders, 3).unwrap();
        let s1 = Checkpoint::from_params(
            StageTag::Stage1,
            &encoders.params().unwrap(),
            &cfg,
            3,
            None,
        )
        .unwrap();
        assert_eq!(evaluate(&s1, &data, &spec).err().unwrap().exit_code(), 4);

        let mut no_cfg = stage2_checkpoint(&cfg, 3);
        no_cfg.header.config = None;
        assert_eq!(evaluate(&no_cfg, &data, &spec).err().unwrap().exit_code(), 4);
    }

    #[test]
    fn rnn_reports_omit_forecast_metrics() {
        let data = corpus();
        let mut cfg = small_cfg();
        cfg.train.rnn.hidden = 8;
        let spec = SplitSpec::from_eval_config(&cfg.eval).unwrap();
        let gru: GruBaseline<f32> = GruBaseline::with_config(&cfg.train.rnn, 3).unwrap();
        let ckpt =
            Checkpoint::from_params(StageTag::Rnn, &gru.params().unwrap(), &cfg, 3, None).unwrap();
        let r = evaluate(&ckpt, &data, &spec).unwrap();
        assert_eq!(r.model, "rnn");
        assert!(r.nmse.is_none());
        assert!(r.retrieval.is_none());
    }

    #[test]
    fn report_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = corpus();
        let cfg = small_cfg();
        let spec = SplitSpec::from_eval_config(&cfg.eval).unwrap();
        let ckpt = stage2_checkpoint(&cfg, 3);
        let r = evaluate(&ckpt, &data, &spec).unwrap();
        let path = dir.path().join("report.json");
        r.save(&path).unwrap();
        let back = MetricsReport::load(&path).unwrap();
        assert_eq!(r, back);
    }
}
