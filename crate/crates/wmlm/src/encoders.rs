//! Modality encoders: each maps a 5-step observation window into per-step
//! tokens in the shared d_model space plus one pooled, L2-normalized
//! embedding for contrastive alignment.
//!
//! Preprocessing is part of the contract:
//! - beam: log10(p + 1e-12), then standardization over the whole window, so
//!   a uniform power rescale (pure gain change) leaves the input unchanged;
//! - pos: GPS centered on the window's first observation and scaled, so
//!   absolute coordinates never leak across scenarios;
//! - vis: raw 4-dim proxy features.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::optim::ParamSet;
use crate::autodiff::{el, Element, Tensor};
use crate::error::{Error, Result};
use crate::phy::N_BEAMS;
use crate::rng;
use crate::scenegen::{MultimodalRecord, OBS_LEN};

/// Floor added before log-compression of beam powers.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Beam,
    Pos,
    Vis,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Beam, Modality::Pos, Modality::Vis];

    pub fn input_dim(self) -> usize {
        match self {
            Modality::Beam => N_BEAMS,
            Modality::Pos => 2,
            Modality::Vis => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Beam => "beam",
            Modality::Pos => "pos",
            Modality::Vis => "vis",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub modalities: Vec<Modality>,
    /// Scale applied to centered GPS coordinates (1/meters).
    pub pos_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 128,
            hidden: 128,
            dropout: 0.1,
            modalities: Modality::ALL.to_vec(),
            pos_scale: 1.0 / 50.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.hidden == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.modalities.is_empty() {
            return Err(Error::Config("modality set must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.modalities.iter().all(|m| seen.insert(*m)) {
            return Err(Error::Config("duplicate modality in set".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-step tokens and the pooled alignment embedding for one batch.
pub struct ModalityTokens<E: Element> {
    /// `[B, OBS_LEN, d_model]`
    pub tokens: Tensor<E>,
    /// `[B, d_model]`, rows unit-norm
    pub pooled: Tensor<E>,
    pub modality: Modality,
}

/// Two-layer perceptron applied per step, plus learned per-position
/// additive vectors.
pub struct ModalityEncoder<E: Element> {
    pub modality: Modality,
    w1: Tensor<E>,
    b1: Tensor<E>,
    w2: Tensor<E>,
    b2: Tensor<E>,
    pos_vec: Tensor<E>,
    dropout: f64,
}

/// Xavier-uniform linear init.
fn linear_init<E: Element>(r: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<E> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<E> = (0..fan_in * fan_out).map(|_| el::<E>(r.random_range(-a..a))).collect();
    Tensor::param(&[fan_in, fan_out], data).expect("shape matches data")
}

fn small_normal<E: Element>(r: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<E> {
    use rand_distr::{Distribution, Normal};
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("valid std");
    let data: Vec<E> = (0..n).map(|_| el::<E>(dist.sample(r))).collect();
    Tensor::param(shape, data).expect("shape matches data")
}

impl<E: Element> ModalityEncoder<E> {
    fn new(modality: Modality, cfg: &EncoderConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, &format!("init.enc.{}", modality.tag()));
        let d_in = modality.input_dim();
        ModalityEncoder {
            modality,
            w1: linear_init(&mut r, d_in, cfg.hidden),
            b1: Tensor::param(&[cfg.hidden], vec![E::zero(); cfg.hidden]).expect("zeros"),
            w2: linear_init(&mut r, cfg.hidden, cfg.d_model),
            b2: Tensor::param(&[cfg.d_model], vec![E::zero(); cfg.d_model]).expect("zeros"),
            pos_vec: small_normal(&mut r, &[OBS_LEN, cfg.d_model], 0.02),
            dropout: cfg.dropout,
        }
    }

    pub fn register(&self, params: &mut ParamSet<E>, prefix: &str) -> Result<()> {
        params.insert(&format!("{prefix}.w1"), self.w1.clone())?;
        params.insert(&format!("{prefix}.b1"), self.b1.clone())?;
        params.insert(&format!("{prefix}.w2"), self.w2.clone())?;
        params.insert(&format!("{prefix}.b2"), self.b2.clone())?;
        params.insert(&format!("{prefix}.pos_vec"), self.pos_vec.clone())?;
        Ok(())
    }

    /// Encode a batch of preprocessed windows `[B, OBS_LEN, d_in]`.
    pub fn encode(
        &self,
        x: &Tensor<E>,
        train: bool,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<ModalityTokens<E>> {
        let shape = x.shape().to_vec();
        let d_in = self.modality.input_dim();
        if shape.len() != 3 || shape[1] != OBS_LEN || shape[2] != d_in {
            return Err(Error::Shape {
                op: "encode",
                left: shape,
                right: vec![0, OBS_LEN, d_in],
            });
        }
        let b = shape[0];
        let d_model = self.b2.len();
        let flat = x.reshape(&[b * OBS_LEN, d_in])?;
        let h = flat.matmul(&self.w1)?.add(&self.b1)?.gelu();
        let h = h.dropout(self.dropout, dropout_rng, train)?;
        let out = h.matmul(&self.w2)?.add(&self.b2)?;
        // per-position vectors broadcast across the batch
        let tokens = out.reshape(&[b, OBS_LEN, d_model])?.add(&self.pos_vec.reshape(&[OBS_LEN, d_model])?)?;
        let pooled = tokens.mean_axis(1)?.l2_normalize_rows()?;
        Ok(ModalityTokens { tokens, pooled, modality: self.modality })
    }
}

/// The full encoder bank (only enabled modalities are instantiated).
pub struct Encoders<E: Element> {
    pub config: EncoderConfig,
    encoders: Vec<ModalityEncoder<E>>,
}

impl<E: Element> Encoders<E> {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoders =
            config.modalities.iter().map(|&m| ModalityEncoder::new(m, config, seed)).collect();
        Ok(Encoders { config: config.clone(), encoders })
    }

    pub fn get(&self, modality: Modality) -> Result<&ModalityEncoder<E>> {
        self.encoders
            .iter()
            .find(|e| e.modality == modality)
            .ok_or_else(|| Error::Config(format!("modality {} not enabled", modality.tag())))
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.encoders.iter().map(|e| e.modality)
    }

    /// Register every encoder parameter under `enc.<modality>.<name>`.
    pub fn register(&self, params: &mut ParamSet<E>) -> Result<()> {
        for enc in &self.encoders {
            enc.register(params, &format!("enc.{}", enc.modality.tag()))?;
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ParamSet<E>> {
        let mut set = ParamSet::new();
        self.register(&mut set)?;
        Ok(set)
    }

    /// Encode one modality from raw per-window feature rows.
    pub fn encode_features(
        &self,
        modality: Modality,
        features: &[Vec<f64>],
        train: bool,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<ModalityTokens<E>> {
        let d_in = modality.input_dim();
        let b = features.len();
        let mut flat = Vec::with_capacity(b * OBS_LEN * d_in);
        for row in features {
            if row.len() != OBS_LEN * d_in {
                return Err(Error::Shape {
                    op: "encode_features",
                    left: vec![row.len()],
                    right: vec![OBS_LEN * d_in],
                });
            }
            flat.extend_from_slice(row);
        }
        let x = Tensor::from_f64_slice(&[b, OBS_LEN, d_in], &flat)?;
        self.get(modality)?.encode(&x, train, dropout_rng)
    }
}

/// Log-compressed, per-window standardized beam powers: `OBS_LEN × 64`
/// values flattened row-major.
pub fn beam_features(obs: &[MultimodalRecord]) -> Vec<f64> {
    let mut vals: Vec<f64> = obs
        .iter()
        .flat_map(|r| r.powers.iter().map(|&p| (p + LOG_EPS).log10()))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-6);
    for v in vals.iter_mut() {
        *v = (*v - mean) / std;
    }
    vals
}

/// GPS coordinates centered on the window's first observation and scaled.
pub fn pos_features(obs: &[MultimodalRecord], pos_scale: f64) -> Vec<f64> {
    let origin = obs.first().map(|r| r.gps).unwrap_or([0.0, 0.0]);
    obs.iter()
        .flat_map(|r| [(r.gps[0] - origin[0]) * pos_scale, (r.gps[1] - origin[1]) * pos_scale])
        .collect()
}

/// Raw 4-dim vision proxy rows.
pub fn vis_features(obs: &[MultimodalRecord]) -> Vec<f64> {
    obs.iter().flat_map(|r| r.vis).collect()
}

/// Feature rows for one modality over a batch of observation windows.
pub fn features_for(
    modality: Modality,
    windows: &[&[MultimodalRecord]],
    pos_scale: f64,
) -> Vec<Vec<f64>> {
    windows
        .iter()
        .map(|obs| match modality {
            Modality::Beam => beam_features(obs),
            Modality::Pos => pos_features(obs, pos_scale),
            Modality::Vis => vis_features(obs),
        })
        .collect()
}
