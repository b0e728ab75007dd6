//! Stage-2 model: a pre-norm causal transformer over interleaved modality
//! tokens with three learned query tokens, plus a classification head, a
//! forecast head, and an autoregressive generation mode that feeds predicted
//! beam indices back as embedding tokens.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::optim::ParamSet;
use crate::autodiff::{el, no_grad, Element, Tensor};
use crate::encoders::{features_for, Encoders, Modality};
use crate::error::{Error, Result};
use crate::phy::N_BEAMS;
use crate::rng;
use crate::scenegen::{MultimodalRecord, SampleWindow, HORIZON, OBS_LEN};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Defaults to 4 * d_model when absent.
    pub ffn: Option<usize>,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            ffn: None,
            dropout: 0.1,
            max_seq_len: 32,
        }
    }
}

impl BackboneConfig {
    pub fn ffn_width(&self) -> usize {
        self.ffn.unwrap_or(4 * self.d_model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.ffn_width() == 0 {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Token order: for each observed step t, one token per enabled modality in
/// fixed (beam, pos, vis) order, then three query tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    modalities: Vec<Modality>,
}

impl TokenLayout {
    pub fn new(modalities: &[Modality]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if !modalities.iter().all(|m| seen.insert(*m)) {
            return Err(Error::Config("duplicate modality in layout".into()));
        }
        let ordered: Vec<Modality> =
            Modality::ALL.into_iter().filter(|m| modalities.contains(m)).collect();
        if ordered.is_empty() {
            return Err(Error::Config("layout needs at least one modality".into()));
        }
        Ok(TokenLayout { modalities: ordered })
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    /// Observation tokens only.
    pub fn obs_tokens(&self) -> usize {
        OBS_LEN * self.modalities.len()
    }

    /// Full one-shot sequence: observations plus the three query tokens.
    pub fn seq_len(&self) -> usize {
        self.obs_tokens() + HORIZON
    }

    /// Longest autoregressive sequence: queries interleaved with feedback.
    pub fn rollout_len(&self) -> usize {
        self.seq_len() + (HORIZON - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    Greedy,
    Sample(u64),
}

struct Block<E: Element> {
    ln1_g: Tensor<E>,
    ln1_b: Tensor<E>,
    wq: Tensor<E>,
    bq: Tensor<E>,
    wk: Tensor<E>,
    bk: Tensor<E>,
    wv: Tensor<E>,
    bv: Tensor<E>,
    wo: Tensor<E>,
    bo: Tensor<E>,
    ln2_g: Tensor<E>,
    ln2_b: Tensor<E>,
    w1: Tensor<E>,
    b1: Tensor<E>,
    w2: Tensor<E>,
    b2: Tensor<E>,
}

fn xavier<E: Element>(r: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<E> {
    use rand::RngExt;
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<E> = (0..fan_in * fan_out).map(|_| el::<E>(r.random_range(-a..a))).collect();
    Tensor::param(&[fan_in, fan_out], data).expect("shape matches data")
}

fn zeros_param<E: Element>(n: usize) -> Tensor<E> {
    Tensor::param(&[n], vec![E::zero(); n]).expect("zeros")
}

fn ones_param<E: Element>(n: usize) -> Tensor<E> {
    Tensor::param(&[n], vec![E::one(); n]).expect("ones")
}

fn normal_param<E: Element>(r: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<E> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n).map(|_| el::<E>(dist.sample(r))).collect();
    Tensor::param(shape, data).expect("shape matches data")
}

impl<E: Element> Block<E> {
    fn new(cfg: &BackboneConfig, seed: u64, index: usize) -> Self {
        let mut r = rng::stream_indexed(seed, "init.bb.block", index as u64);
        let d = cfg.d_model;
        let f = cfg.ffn_width();
        Block {
            ln1_g: ones_param(d),
            ln1_b: zeros_param(d),
            wq: xavier(&mut r, d, d),
            bq: zeros_param(d),
            wk: xavier(&mut r, d, d),
            bk: zeros_param(d),
            wv: xavier(&mut r, d, d),
            bv: zeros_param(d),
            wo: xavier(&mut r, d, d),
            bo: zeros_param(d),
            ln2_g: ones_param(d),
            ln2_b: zeros_param(d),
            w1: xavier(&mut r, d, f),
            b1: zeros_param(f),
            w2: xavier(&mut r, f, d),
            b2: zeros_param(d),
        }
    }

    fn register(&self, params: &mut ParamSet<E>, prefix: &str) -> Result<()> {
        for (name, t) in [
            ("ln1.g", &self.ln1_g),
            ("ln1.b", &self.ln1_b),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2.g", &self.ln2_g),
            ("ln2.b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ] {
            params.insert(&format!("{prefix}.{name}"), t.clone())?;
        }
        Ok(())
    }
}

/// Linear layer applied to the last axis of a `[B, T, d_in]` tensor.
fn linear3d<E: Element>(x: &Tensor<E>, w: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = x.shape().to_vec();
    let (bs, t, d_in) = (shape[0], shape[1], shape[2]);
    let d_out = w.shape()[1];
    x.reshape(&[bs * t, d_in])?.matmul(w)?.add(b)?.reshape(&[bs, t, d_out])
}

pub struct WmlmModel<E: Element> {
    pub config: BackboneConfig,
    pub layout: TokenLayout,
    blocks: Vec<Block<E>>,
    ln_f_g: Tensor<E>,
    ln_f_b: Tensor<E>,
    type_vec: Tensor<E>,
    time_vec: Tensor<E>,
    query_vec: Tensor<E>,
    gen_embed: Tensor<E>,
    cls_w: Tensor<E>,
    cls_b: Tensor<E>,
    fc_w: Tensor<E>,
    fc_b: Tensor<E>,
}

impl<E: Element> WmlmModel<E> {
    pub fn new(config: &BackboneConfig, layout: TokenLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        if layout.rollout_len() > config.max_seq_len {
            return Err(Error::Config(format!(
                "max_seq_len {} cannot hold a rollout of {} tokens",
                config.max_seq_len,
                layout.rollout_len()
            )));
        }
        let d = config.d_model;
        let blocks = (0..config.n_layers).map(|i| Block::new(config, seed, i)).collect();
        let mut rv = rng::stream(seed, "init.bb.vectors");
        let mut rh = rng::stream(seed, "init.bb.heads");
        Ok(WmlmModel {
            config: config.clone(),
            layout: layout.clone(),
            blocks,
            ln_f_g: ones_param(d),
            ln_f_b: zeros_param(d),
            type_vec: normal_param(&mut rv, &[layout.n_modalities(), d], 0.02),
            time_vec: normal_param(&mut rv, &[OBS_LEN + HORIZON, d], 0.02),
            query_vec: normal_param(&mut rv, &[HORIZON, d], 0.02),
            gen_embed: normal_param(&mut rv, &[N_BEAMS, d], 0.02),
            cls_w: xavier(&mut rh, d, N_BEAMS),
            cls_b: zeros_param(N_BEAMS),
            fc_w: xavier(&mut rh, d, N_BEAMS),
            fc_b: zeros_param(N_BEAMS),
        })
    }

    pub fn params(&self) -> Result<ParamSet<E>> {
        let mut set = ParamSet::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.register(&mut set, &format!("bb.block{i}"))?;
        }
        set.insert("bb.ln_f.g", self.ln_f_g.clone())?;
        set.insert("bb.ln_f.b", self.ln_f_b.clone())?;
        set.insert("bb.type_vec", self.type_vec.clone())?;
        set.insert("bb.time_vec", self.time_vec.clone())?;
        set.insert("bb.query_vec", self.query_vec.clone())?;
        set.insert("bb.gen_embed", self.gen_embed.clone())?;
        set.insert("head.cls.w", self.cls_w.clone())?;
        set.insert("head.cls.b", self.cls_b.clone())?;
        set.insert("head.fc.w", self.fc_w.clone())?;
        set.insert("head.fc.b", self.fc_b.clone())?;
        Ok(set)
    }

    /// Total learnable parameter count (reported at build time by the
    /// training entry points).
    pub fn param_count(&self) -> usize {
        self.params().expect("fresh set").num_elements()
    }

    fn check_encoders(&self, encoders: &Encoders<E>) -> Result<()> {
        if encoders.config.d_model != self.config.d_model {
            return Err(Error::Config(format!(
                "encoder d_model {} does not match backbone d_model {}",
                encoders.config.d_model, self.config.d_model
            )));
        }
        for &m in self.layout.modalities() {
            encoders.get(m)?;
        }
        Ok(())
    }

    /// Interleaved observation tokens `[B, 5*|M|, d]` with modality-type and
    /// time-position vectors added.
    fn assemble_observations(
        &self,
        encoders: &Encoders<E>,
        windows: &[&SampleWindow],
        train: bool,
        drop_rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<E>> {
        self.check_encoders(encoders)?;
        if windows.is_empty() {
            return Err(Error::Config("cannot assemble an empty batch".into()));
        }
        let obs: Vec<&[MultimodalRecord]> = windows.iter().map(|w| w.obs.as_slice()).collect();
        let mods = self.layout.modalities();
        let per_modality: Vec<Tensor<E>> = mods
            .iter()
            .map(|&m| {
                let feats = features_for(m, &obs, encoders.config.pos_scale);
                encoders.encode_features(m, &feats, train, drop_rng).map(|o| o.tokens)
            })
            .collect::<Result<_>>()?;

        let mut slices = Vec::with_capacity(self.layout.obs_tokens());
        let mut type_idx = Vec::with_capacity(self.layout.obs_tokens());
        let mut time_idx = Vec::with_capacity(self.layout.obs_tokens());
        for t in 0..OBS_LEN {
            for (s, tokens) in per_modality.iter().enumerate() {
                slices.push(tokens.slice(1, t, 1)?);
                type_idx.push(s);
                time_idx.push(t);
            }
        }
        let seq = Tensor::concat(&slices, 1)?;
        let additive = Tensor::embedding_lookup(&self.type_vec, &type_idx)?
            .add(&Tensor::embedding_lookup(&self.time_vec, &time_idx)?)?;
        seq.add(&additive.reshape(&[self.layout.obs_tokens(), self.config.d_model])?)
    }

    /// Append query token k (0-based horizon step) to a `[B, T, d]` sequence.
    fn append_query(&self, seq: &Tensor<E>, k: usize) -> Result<Tensor<E>> {
        let d = self.config.d_model;
        let b = seq.shape()[0];
        let tok = self
            .query_vec
            .slice(0, k, 1)?
            .reshape(&[d])?
            .add(&self.time_vec.slice(0, OBS_LEN + k, 1)?.reshape(&[d])?)?;
        let expanded = Tensor::zeros(&[b, 1, d]).add(&tok)?;
        Tensor::concat(&[seq.clone(), expanded], 1)
    }

    /// Append the beam-embedding feedback token for horizon step k.
    fn append_feedback(&self, seq: &Tensor<E>, indices: &[usize], k: usize) -> Result<Tensor<E>> {
        let d = self.config.d_model;
        let b = seq.shape()[0];
        if indices.len() != b {
            return Err(Error::Shape {
                op: "append_feedback",
                left: vec![indices.len()],
                right: vec![b],
            });
        }
        let fb = Tensor::embedding_lookup(&self.gen_embed, indices)?
            .add(&self.time_vec.slice(0, OBS_LEN + k, 1)?.reshape(&[d])?)?
            .reshape(&[b, 1, d])?;
        Tensor::concat(&[seq.clone(), fb], 1)
    }

    /// One-shot sequence per TokenLayout: observations then Q1..Q3.
    pub fn assemble_sequence(
        &self,
        encoders: &Encoders<E>,
        windows: &[&SampleWindow],
        train: bool,
        drop_rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<E>> {
        let mut seq = self.assemble_observations(encoders, windows, train, drop_rng)?;
        for k in 0..HORIZON {
            seq = self.append_query(&seq, k)?;
        }
        Ok(seq)
    }

    /// Pre-norm decoder stack with final layer norm.
    pub fn forward(
        &self,
        tokens: &Tensor<E>,
        train: bool,
        drop_rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<E>> {
        let shape = tokens.shape().to_vec();
        if shape.len() != 3 || shape[2] != self.config.d_model {
            return Err(Error::Shape {
                op: "forward",
                left: shape,
                right: vec![0, 0, self.config.d_model],
            });
        }
        if shape[1] > self.config.max_seq_len {
            return Err(Error::Shape {
                op: "forward",
                left: vec![shape[1]],
                right: vec![self.config.max_seq_len],
            });
        }
        let p = self.config.dropout;
        let mut x = tokens.clone();
        for blk in &self.blocks {
            let h = x.layer_norm(&blk.ln1_g, &blk.ln1_b, LN_EPS)?;
            let q = linear3d(&h, &blk.wq, &blk.bq)?;
            let k = linear3d(&h, &blk.wk, &blk.bk)?;
            let v = linear3d(&h, &blk.wv, &blk.bv)?;
            let a = Tensor::causal_attention(&q, &k, &v, self.config.n_heads)?;
            let a = linear3d(&a, &blk.wo, &blk.bo)?.dropout(p, drop_rng, train)?;
            x = x.add(&a)?;
            let h = x.layer_norm(&blk.ln2_g, &blk.ln2_b, LN_EPS)?;
            let f = linear3d(&h, &blk.w1, &blk.b1)?
                .gelu()
                .dropout(p, drop_rng, train)?;
            let f = linear3d(&f, &blk.w2, &blk.b2)?.dropout(p, drop_rng, train)?;
            x = x.add(&f)?;
        }
        x.layer_norm(&self.ln_f_g, &self.ln_f_b, LN_EPS)
    }

    fn query_states(&self, hidden: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = hidden.shape().to_vec();
        if shape.len() != 3 || shape[1] != self.layout.seq_len() {
            return Err(Error::Shape {
                op: "query_states",
                left: shape,
                right: vec![0, self.layout.seq_len(), self.config.d_model],
            });
        }
        let b = shape[0];
        hidden
            .slice(1, self.layout.obs_tokens(), HORIZON)?
            .reshape(&[b * HORIZON, self.config.d_model])
    }

    /// Classification logits `[B, 3, 64]` from the query-token states.
    pub fn predict_beams(&self, hidden: &Tensor<E>) -> Result<Tensor<E>> {
        let b = hidden.shape()[0];
        let states = self.query_states(hidden)?;
        states.matmul(&self.cls_w)?.add(&self.cls_b)?.reshape(&[b, HORIZON, N_BEAMS])
    }

    /// Nonnegative power forecasts `[B, 3, 64]` from the query-token states.
    pub fn forecast_powers(&self, hidden: &Tensor<E>) -> Result<Tensor<E>> {
        let b = hidden.shape()[0];
        let states = self.query_states(hidden)?;
        states.matmul(&self.fc_w)?.add(&self.fc_b)?.softplus().reshape(&[b, HORIZON, N_BEAMS])
    }

    /// Mean cross-entropy over all horizon steps and windows.
    pub fn classification_loss(logits: &Tensor<E>, labels: &[usize]) -> Result<Tensor<E>> {
        let shape = logits.shape().to_vec();
        let flat = logits.reshape(&[shape[0] * shape[1], shape[2]])?;
        Tensor::cross_entropy(&flat, labels)
    }

    /// Greedy or sampled autoregressive generation of the 3 future beams.
    pub fn generate_rollout(
        &self,
        encoders: &Encoders<E>,
        windows: &[&SampleWindow],
        mode: GenMode,
    ) -> Result<Vec<[usize; HORIZON]>> {
        no_grad(|| {
            let b = windows.len();
            let mut drop_rng = rng::stream(0, "rollout.eval");
            let mut sample_rng = match mode {
                GenMode::Greedy => None,
                GenMode::Sample(seed) => Some(rng::stream(seed, "rollout.sample")),
            };
            let mut seq = self.assemble_observations(encoders, windows, false, &mut drop_rng)?;
            let mut out = vec![[0usize; HORIZON]; b];
            for k in 0..HORIZON {
                seq = self.append_query(&seq, k)?;
                let hidden = self.forward(&seq, false, &mut drop_rng)?;
                let t = hidden.shape()[1];
                let last = hidden
                    .slice(1, t - 1, 1)?
                    .reshape(&[b, self.config.d_model])?;
                let logits = last.matmul(&self.cls_w)?.add(&self.cls_b)?;
                let rows = logits.to_f64_vec();
                let mut picked = Vec::with_capacity(b);
                for r in 0..b {
                    let row = &rows[r * N_BEAMS..(r + 1) * N_BEAMS];
                    let idx = match sample_rng.as_mut() {
                        None => argmax(row),
                        Some(rng) => sample_softmax(row, rng),
                    };
                    out[r][k] = idx;
                    picked.push(idx);
                }
                if k + 1 < HORIZON {
                    seq = self.append_feedback(&seq, &picked, k)?;
                }
            }
            Ok(out)
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b })
}

fn sample_softmax(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::RngExt;
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut u = rng.random_range(0.0..1.0) * total;
    for (i, &e) in exps.iter().enumerate() {
        u -= e;
        if u <= 0.0 {
            return i;
        }
    }
    row.len() - 1
}

/// Log-compress a power tensor: log10(p + 1e-12), applied in-graph.
pub fn log_compress<E: Element>(powers: &Tensor<E>) -> Tensor<E> {
    powers.add_scalar(crate::encoders::LOG_EPS).ln().mul_scalar(std::f64::consts::LOG10_E)
}

/// Future beam labels flattened as `[B * HORIZON]`.
pub fn future_labels(windows: &[&SampleWindow]) -> Vec<usize> {
    windows.iter().flat_map(|w| w.future.iter().map(|r| r.beam_label)).collect()
}

/// True future power vectors as a constant `[B, HORIZON, 64]` tensor.
pub fn future_powers<E: Element>(windows: &[&SampleWindow]) -> Result<Tensor<E>> {
    let b = windows.len();
    let mut data = Vec::with_capacity(b * HORIZON * N_BEAMS);
    for w in windows {
        for r in &w.future {
            data.extend(r.powers.iter().map(|&p| el::<E>(p)));
        }
    }
    Tensor::from_vec(&[b, HORIZON, N_BEAMS], data)
}
