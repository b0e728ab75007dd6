//! Stage-1 contrastive alignment: train the modality encoders so the
//! non-anchor modalities land in the anchor's representation space.
//!
//! The loss is symmetric InfoNCE over pooled window embeddings with a
//! learnable temperature clamped to [0.01, 1.0] after every step. The anchor
//! tower is held fixed (stop-gradient), so it genuinely anchors the shared
//! space instead of drifting toward the other modalities.

use serde::{Deserialize, Serialize};

use crate::autodiff::optim::{Adam, ParamSet};
use crate::autodiff::{el, no_grad, Element, Tensor};
use crate::encoders::{features_for, EncoderConfig, Encoders, Modality};
use crate::error::{Error, Result};
use crate::rng;
use crate::scenegen::{MultimodalRecord, SampleWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Beam,
    Vision,
    Joint,
    None,
}

impl Anchor {
    pub const ALL: [Anchor; 4] = [Anchor::Beam, Anchor::Vision, Anchor::Joint, Anchor::None];

    pub fn tag(self) -> &'static str {
        match self {
            Anchor::Beam => "beam",
            Anchor::Vision => "vision",
            Anchor::Joint => "joint",
            Anchor::None => "none",
        }
    }

    /// Modalities that act as anchors for this mode.
    pub fn anchor_modalities(self) -> &'static [Modality] {
        match self {
            Anchor::Beam => &[Modality::Beam],
            Anchor::Vision => &[Modality::Vis],
            Anchor::Joint => &[Modality::Beam, Modality::Vis],
            Anchor::None => &[],
        }
    }
}

impl std::str::FromStr for Anchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Anchor::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown anchor '{s}' (beam|vision|joint|none)")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub anchor: Anchor,
    /// Initial temperature; the learnable value stays in [0.01, 1.0].
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { anchor: Anchor::Beam, temperature: 0.07, batch_size: 64, epochs: 20, lr: 1e-3 }
    }
}

pub const TEMP_MIN: f64 = 0.01;
pub const TEMP_MAX: f64 = 1.0;

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

fn check_unit_rows<E: Element>(t: &Tensor<E>, name: &str) -> Result<(usize, usize)> {
    let shape = t.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape { op: "info_nce", left: shape, right: vec![0, 0] });
    }
    let (b, d) = (shape[0], shape[1]);
    let data = t.to_f64_vec();
    for r in 0..b {
        let norm: f64 = data[r * d..(r + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::Config(format!("{name} row {r} is not unit-norm (got {norm:.6})")));
        }
    }
    Ok((b, d))
}

/// Symmetric InfoNCE over matched batches of unit-norm embeddings.
///
/// Logits are `(anchor · otherᵀ)/τ`; the loss averages the cross-entropy of
/// the logit matrix and its transpose against diagonal labels, so swapping
/// the two batches leaves the value unchanged exactly.
pub fn info_nce<E: Element>(
    anchor: &Tensor<E>,
    other: &Tensor<E>,
    tau: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (b, d) = check_unit_rows(anchor, "anchor")?;
    let (b2, d2) = check_unit_rows(other, "other")?;
    if b != b2 || d != d2 {
        return Err(Error::Shape { op: "info_nce", left: vec![b, d], right: vec![b2, d2] });
    }
    if b < 2 {
        return Err(Error::Config("info_nce needs a batch of at least 2 (no negatives)".into()));
    }
    if tau.len() != 1 {
        return Err(Error::Shape { op: "info_nce", left: tau.shape().to_vec(), right: vec![1] });
    }
    if tau.to_f64_vec()[0] <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let logits = anchor.matmul(&other.transpose()?)?.div(tau)?;
    let labels: Vec<usize> = (0..b).collect();
    let fwd = Tensor::cross_entropy(&logits, &labels)?;
    let rev = Tensor::cross_entropy(&logits.transpose()?, &labels)?;
    Ok(fwd.add(&rev)?.mul_scalar(0.5))
}

/// Fraction of rows whose nearest `other` row (by dot product) is their own
/// match. Diagnostic only; never differentiated.
pub fn retrieval_accuracy<E: Element>(anchor: &Tensor<E>, other: &Tensor<E>) -> Result<f64> {
    let (b, d) = check_unit_rows(anchor, "anchor")?;
    let (b2, d2) = check_unit_rows(other, "other")?;
    if b != b2 || d != d2 {
        return Err(Error::Shape { op: "retrieval", left: vec![b, d], right: vec![b2, d2] });
    }
    let a = anchor.to_f64_vec();
    let o = other.to_f64_vec();
    let mut hits = 0usize;
    for i in 0..b {
        let mut best = 0usize;
        let mut best_dot = f64::NEG_INFINITY;
        for j in 0..b {
            let dot: f64 =
                (0..d).map(|k| a[i * d + k] * o[j * d + k]).sum();
            if dot > best_dot {
                best_dot = dot;
                best = j;
            }
        }
        if best == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / b as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub retrieval: f64,
}

pub struct Stage1Result<E: Element> {
    pub encoders: Encoders<E>,
    pub temperature: Tensor<E>,
    pub history: Vec<Stage1EpochRow>,
}

impl<E: Element> Stage1Result<E> {
    /// All trained parameters, temperature included.
    pub fn params(&self) -> Result<ParamSet<E>> {
        let mut set = self.encoders.params()?;
        set.insert("align.temperature", self.temperature.clone())?;
        Ok(set)
    }
}

/// The (anchor, other) modality pairs whose InfoNCE terms are summed.
pub fn anchor_pairs(anchor: Anchor, enabled: &[Modality]) -> Result<Vec<(Modality, Modality)>> {
    if anchor == Anchor::None {
        return Err(Error::Config("anchor=none disables stage 1".into()));
    }
    let mut pairs = Vec::new();
    for &a in anchor.anchor_modalities() {
        if !enabled.contains(&a) {
            return Err(Error::Config(format!(
                "anchor modality {} is not in the encoder set",
                a.tag()
            )));
        }
        for &m in enabled {
            if m != a {
                pairs.push((a, m));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config("need at least two modalities to align".into()));
    }
    Ok(pairs)
}

/// Train the encoders contrastively and report per-epoch loss and in-batch
/// retrieval accuracy on a fixed probe set.
pub fn stage1_train<E: Element>(
    windows: &[SampleWindow],
    enc_cfg: &EncoderConfig,
    align_cfg: &AlignConfig,
    seed: u64,
) -> Result<Stage1Result<E>> {
    enc_cfg.validate()?;
    align_cfg.validate()?;
    let pairs = anchor_pairs(align_cfg.anchor, &enc_cfg.modalities)?;
    if windows.len() < 2 {
        return Err(Error::Config(format!(
            "stage 1 needs at least 2 windows, got {}",
            windows.len()
        )));
    }

    let encoders: Encoders<E> = Encoders::new(enc_cfg, seed)?;
    let temperature =
        Tensor::param(&[1], vec![el::<E>(align_cfg.temperature)]).expect("scalar param");
    let mut params = encoders.params()?;
    params.insert("align.temperature", temperature.clone())?;
    let mut opt = Adam::new(align_cfg.lr);

    // Features never change across epochs; extract once per modality.
    let obs: Vec<&[MultimodalRecord]> = windows.iter().map(|w| w.obs.as_slice()).collect();
    let modalities: Vec<Modality> = encoders.modalities().collect();
    let feats: Vec<Vec<Vec<f64>>> =
        modalities.iter().map(|&m| features_for(m, &obs, enc_cfg.pos_scale)).collect();
    let feat_of = |m: Modality| -> &Vec<Vec<f64>> {
        &feats[modalities.iter().position(|&x| x == m).expect("enabled")]
    };

    let batch = align_cfg.batch_size.min(windows.len());
    let probe = sample_indices(&mut rng::stream(seed, "stage1.probe"), windows.len(), batch);

    let mut history = Vec::with_capacity(align_cfg.epochs);
    for epoch in 0..align_cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        shuffle(&mut order, &mut rng::stream_indexed(seed, "stage1.shuffle", epoch as u64));
        let mut drop_rng = rng::stream_indexed(seed, "stage1.dropout", epoch as u64);

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            params.zero_grad_all();
            let pooled: Vec<(Modality, Tensor<E>)> = modalities
                .iter()
                .map(|&m| {
                    let rows: Vec<Vec<f64>> =
                        chunk.iter().map(|&i| feat_of(m)[i].clone()).collect();
                    encoders
                        .encode_features(m, &rows, true, &mut drop_rng)
                        .map(|out| (m, out.pooled))
                })
                .collect::<Result<_>>()?;
            let get = |m: Modality| &pooled.iter().find(|(pm, _)| *pm == m).expect("enabled").1;

            let mut loss: Option<Tensor<E>> = None;
            for &(a, o) in &pairs {
                // The anchor defines the target space, so its tower receives
                // no gradient from this term; only the other tower (and the
                // temperature) moves toward it.
                let term = info_nce(&get(a).detach(), get(o), &temperature)?;
                loss = Some(match loss {
                    Some(acc) => acc.add(&term)?,
                    None => term,
                });
            }
            let loss = loss.expect("pairs non-empty");
            let value = loss.item().to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite stage-1 loss at epoch {epoch} step {steps}"
                )));
            }
            loss.backward()?;
            opt.step(&params)?;
            temperature.with_data_mut(|d| {
                d[0] = d[0].max(el::<E>(TEMP_MIN)).min(el::<E>(TEMP_MAX));
            });
            loss_sum += value;
            steps += 1;
        }

        let retrieval = probe_retrieval(&encoders, &pairs, &probe, &feats, &modalities, seed)?;
        history.push(Stage1EpochRow {
            epoch,
            loss: loss_sum / steps.max(1) as f64,
            retrieval,
        });
    }

    Ok(Stage1Result { encoders, temperature, history })
}

/// Eval-mode retrieval accuracy averaged over the anchor pairs on a fixed
/// probe subset.
fn probe_retrieval<E: Element>(
    encoders: &Encoders<E>,
    pairs: &[(Modality, Modality)],
    probe: &[usize],
    feats: &[Vec<Vec<f64>>],
    modalities: &[Modality],
    seed: u64,
) -> Result<f64> {
    let mut eval_rng = rng::stream(seed, "stage1.probe.eval");
    let pooled: Vec<(Modality, Tensor<E>)> = no_grad(|| {
        let mut out = Vec::with_capacity(modalities.len());
        for (k, &m) in modalities.iter().enumerate() {
            let rows: Vec<Vec<f64>> = probe.iter().map(|&i| feats[k][i].clone()).collect();
            out.push((m, encoders.encode_features(m, &rows, false, &mut eval_rng)?.pooled));
        }
        Ok::<_, Error>(out)
    })?;
    let get = |m: Modality| &pooled.iter().find(|(pm, _)| *pm == m).expect("enabled").1;
    let mut total = 0.0;
    for &(a, o) in pairs {
        total += retrieval_accuracy(get(a), get(o))?;
    }
    Ok(total / pairs.len() as f64)
}

fn shuffle(xs: &mut [usize], r: &mut rand_chacha::ChaCha8Rng) {
    use rand::RngExt;
    for i in (1..xs.len()).rev() {
        let j = r.random_range(0..=i);
        xs.swap(i, j);
    }
}

fn sample_indices(r: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    shuffle(&mut all, r);
    all.truncate(k);
    all.sort_unstable();
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{gen_scenario, ScenarioConfig};
    use rand_distr::{Distribution, StandardNormal};

    fn tau(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    fn unit_rows(b: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "unit-rows");
        let mut data = Vec::with_capacity(b * d);
        for _ in 0..b {
            let mut row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v /= norm;
            }
            data.extend(row);
        }
        Tensor::from_vec(&[b, d], data).unwrap()
    }

    #[test]
    fn two_orthogonal_pairs_match_closed_form() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = info_nce(&a, &a, &tau(1.0)).unwrap().item();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn identical_embeddings_give_log_b() {
        let row = [0.6, 0.8];
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend(row);
        }
        let a = Tensor::from_vec(&[5, 2], data).unwrap();
        let loss = info_nce(&a, &a, &tau(0.07)).unwrap().item();
        assert!((loss - 5.0f64.ln()).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn consistent_permutation_preserves_loss() {
        let a = unit_rows(6, 16, 1);
        let b = unit_rows(6, 16, 2);
        let base = info_nce(&a, &b, &tau(0.5)).unwrap().item();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permute = |t: &Tensor<f64>| {
            let d = t.shape()[1];
            let src = t.to_vec();
            let mut out = Vec::with_capacity(src.len());
            for &p in &perm {
                out.extend_from_slice(&src[p * d..(p + 1) * d]);
            }
            Tensor::from_vec(&[perm.len(), d], out).unwrap()
        };
        let permuted = info_nce(&permute(&a), &permute(&b), &tau(0.5)).unwrap().item();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn loss_is_exactly_symmetric() {
        let a = unit_rows(8, 32, 3);
        let b = unit_rows(8, 32, 4);
        let ab = info_nce(&a, &b, &tau(0.07)).unwrap().item();
        let ba = info_nce(&b, &a, &tau(0.07)).unwrap().item();
        assert_eq!(ab, ba);
    }

    #[test]
    fn rejects_tiny_batch_and_non_unit_rows() {
        let one = Tensor::from_vec(&[1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let err = info_nce(&one, &one, &tau(1.0)).err().unwrap();
        assert_eq!(err.exit_code(), 2);

        let bad = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let good = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(info_nce(&bad, &good, &tau(1.0)).is_err());
    }

    #[test]
    fn gradients_flow_to_embeddings_and_temperature() {
        let a = unit_rows(4, 8, 5);
        let stack = |t: &Tensor<f64>| Tensor::param(&[4, 8], t.to_vec()).unwrap();
        let (pa, pb) = (stack(&a), stack(&unit_rows(4, 8, 6)));
        let tp = Tensor::param(&[1], vec![0.2]).unwrap();
        let worst = crate::gradcheck::check_grads(&[pa.clone(), pb.clone(), tp.clone()], &|| {
            // renormalize inside the graph so perturbed params stay unit-norm
            info_nce(&pa.l2_normalize_rows()?, &pb.l2_normalize_rows()?, &tp)
        })
        .unwrap();
        assert!(worst < crate::gradcheck::REL_TOL, "rel err {worst:.3e}");
    }

    #[test]
    fn retrieval_oracles() {
        let a = unit_rows(6, 12, 7);
        assert_eq!(retrieval_accuracy(&a, &a).unwrap(), 1.0);

        // orthonormal rows reversed: even B so no row maps to itself
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let id = Tensor::from_vec(&[4, 4], eye.clone()).unwrap();
        let mut rev = Vec::new();
        for i in (0..4).rev() {
            rev.extend_from_slice(&eye[i * 4..(i + 1) * 4]);
        }
        let rv = Tensor::from_vec(&[4, 4], rev).unwrap();
        assert_eq!(retrieval_accuracy(&id, &rv).unwrap(), 0.0);
    }

    #[test]
    fn random_retrieval_matches_chance() {
        let draws = 200;
        let mut means = Vec::with_capacity(draws);
        for k in 0..draws {
            let a = unit_rows(64, 128, 1000 + 2 * k as u64);
            let b = unit_rows(64, 128, 1001 + 2 * k as u64);
            means.push(retrieval_accuracy(&a, &b).unwrap());
        }
        let m = means.iter().sum::<f64>() / draws as f64;
        let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let chance = 1.0 / 64.0;
        assert!(
            (m - chance).abs() <= 3.0 * se,
            "mean {m:.5} vs chance {chance:.5} (se {se:.5})"
        );
    }

    fn small_windows(n_traversals: usize) -> Vec<SampleWindow> {
        let cfg = ScenarioConfig {
            scenario_id: 1,
            road_offset_m: 10.0,
            speed_mps: 10.0,
            x_range_m: (-50.0, 50.0),
            dt_s: 0.1,
            gps_noise_std_m: 0.5,
            vis_noise_std: 0.02,
            blockage_prob: 0.1,
            blockage_atten_db: 10.0,
            n_traversals,
            seed: 21,
        };
        gen_scenario(&cfg).unwrap().windows()
    }

    #[test]
    fn anchor_pair_construction() {
        let all = Modality::ALL.to_vec();
        let beam = anchor_pairs(Anchor::Beam, &all).unwrap();
        assert_eq!(beam, vec![(Modality::Beam, Modality::Pos), (Modality::Beam, Modality::Vis)]);
        let joint = anchor_pairs(Anchor::Joint, &all).unwrap();
        assert_eq!(joint.len(), 4);
        assert!(anchor_pairs(Anchor::None, &all).is_err());
        assert!(anchor_pairs(Anchor::Vision, &[Modality::Beam, Modality::Pos]).is_err());
        assert!(anchor_pairs(Anchor::Beam, &[Modality::Beam]).is_err());
    }

    #[test]
    fn training_reduces_loss_and_lifts_retrieval() {
        let windows = small_windows(1);
        let enc_cfg = EncoderConfig { hidden: 64, ..Default::default() };
        let align_cfg = AlignConfig { batch_size: 32, epochs: 8, ..Default::default() };
        let out: Stage1Result<f32> = stage1_train(&windows, &enc_cfg, &align_cfg, 77).unwrap();
        assert_eq!(out.history.len(), 8);
        let first = &out.history[0];
        let last = out.history.last().unwrap();
        assert!(last.loss < first.loss, "loss {} -> {}", first.loss, last.loss);
        assert!(
            last.retrieval > 2.0 / 32.0,
            "retrieval stayed near chance: {}",
            last.retrieval
        );
        let t = out.temperature.to_f64_vec()[0];
        assert!((TEMP_MIN..=TEMP_MAX).contains(&t));
    }

    #[test]
    fn first_five_epoch_losses_are_monotone_in_seed_median() {
        let windows = small_windows(1);
        let enc_cfg = EncoderConfig { hidden: 64, ..Default::default() };
        let align_cfg = AlignConfig { batch_size: 32, epochs: 5, ..Default::default() };
        let mut per_epoch = vec![Vec::new(); 5];
        for seed in [101u64, 102, 103] {
            let out: Stage1Result<f32> =
                stage1_train(&windows, &enc_cfg, &align_cfg, seed).unwrap();
            for (e, row) in out.history.iter().enumerate() {
                per_epoch[e].push(row.loss);
            }
        }
        let medians: Vec<f64> = per_epoch
            .iter()
            .map(|v| {
                let mut s = v.clone();
                s.sort_by(f64::total_cmp);
                s[s.len() / 2]
            })
            .collect();
        for w in medians.windows(2) {
            assert!(w[1] < w[0], "median losses not monotone: {medians:?}");
        }
    }

    #[test]
    fn same_seed_reproduces_history_and_parameters() {
        let windows = small_windows(1);
        let enc_cfg = EncoderConfig { hidden: 32, d_model: 32, ..Default::default() };
        let align_cfg = AlignConfig { batch_size: 16, epochs: 2, ..Default::default() };
        let a: Stage1Result<f32> = stage1_train(&windows, &enc_cfg, &align_cfg, 5).unwrap();
        let b: Stage1Result<f32> = stage1_train(&windows, &enc_cfg, &align_cfg, 5).unwrap();
        assert_eq!(a.history, b.history);
        let pa = a.params().unwrap();
        let pb = b.params().unwrap();
        for ((na, ta), (nb, tb)) in pa.iter().zip(pb.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.to_vec(), tb.to_vec());
        }
    }

    #[test]
    fn extreme_lr_keeps_temperature_clamped() {
        let windows = small_windows(1);
        let enc_cfg = EncoderConfig { hidden: 16, d_model: 16, ..Default::default() };
        let align_cfg = AlignConfig { batch_size: 16, epochs: 2, lr: 1.0, ..Default::default() };
        let out: Stage1Result<f32> = stage1_train(&windows, &enc_cfg, &align_cfg, 9).unwrap();
        let t = out.temperature.to_f64_vec()[0];
        assert!((TEMP_MIN..=TEMP_MAX).contains(&t), "temperature escaped clamp: {t}");
    }

    #[test]
    fn nan_input_aborts_with_epoch_and_step() {
        let mut windows = small_windows(1);
        windows[0].obs[0].powers[0] = f64::NAN;
        let enc_cfg = EncoderConfig { hidden: 16, d_model: 16, ..Default::default() };
        let align_cfg = AlignConfig { batch_size: 64, epochs: 1, ..Default::default() };
        let err = stage1_train::<f32>(&windows, &enc_cfg, &align_cfg, 3)
            .err()
            .expect("nan must abort");
        let msg = err.to_string();
        assert!(msg.contains("epoch 0"), "{msg}");
        assert!(msg.contains("step"), "{msg}");
        assert_eq!(err.exit_code(), 5);
    }
}
