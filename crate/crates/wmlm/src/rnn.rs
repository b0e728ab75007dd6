//! Small recurrent baseline: a single-layer GRU over per-step concatenated
//! raw features, with a linear head mapping the final hidden state to the
//! 3 x 64 future-beam logits.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::optim::ParamSet;
use crate::autodiff::{el, Element, Tensor};
use crate::encoders::LOG_EPS;
use crate::error::{Error, Result};
use crate::phy::N_BEAMS;
use crate::rng;
use crate::scenegen::{MultimodalRecord, HORIZON, OBS_LEN};

/// log-powers (64) ‖ centered gps (2) ‖ vis (4)
pub const RNN_INPUT_DIM: usize = N_BEAMS + 2 + 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnnConfig {
    pub hidden: usize,
}

impl Default for RnnConfig {
    fn default() -> Self {
        // 96 keeps the whole baseline under a tenth of the transformer's
        // parameter count; 128 would not
        RnnConfig { hidden: 96 }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("rnn hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step feature rows for one window, flattened `OBS_LEN x RNN_INPUT_DIM`.
pub fn rnn_features(obs: &[MultimodalRecord], pos_scale: f64) -> Vec<f64> {
    let origin = obs.first().map(|r| r.gps).unwrap_or([0.0, 0.0]);
    let mut out = Vec::with_capacity(obs.len() * RNN_INPUT_DIM);
    for r in obs {
        out.extend(r.powers.iter().map(|&p| (p + LOG_EPS).log10()));
        out.push((r.gps[0] - origin[0]) * pos_scale);
        out.push((r.gps[1] - origin[1]) * pos_scale);
        out.extend(r.vis);
    }
    out
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

/// Standard GRU cell (update and reset gates) plus the classification head.
pub struct GruBaseline<E: Element> {
    pub input_dim: usize,
    pub hidden: usize,
    wz: Tensor<E>,
    uz: Tensor<E>,
    bz: Tensor<E>,
    wr: Tensor<E>,
    ur: Tensor<E>,
    br: Tensor<E>,
    wh: Tensor<E>,
    uh: Tensor<E>,
    bh: Tensor<E>,
    head_w: Tensor<E>,
    head_b: Tensor<E>,
}

impl<E: Element> GruBaseline<E> {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Config("rnn dimensions must be positive".into()));
        }
        let mut r = rng::stream(seed, "init.rnn");
        Ok(GruBaseline {
            input_dim,
            hidden,
            wz: xavier(&mut r, input_dim, hidden),
            uz: xavier(&mut r, hidden, hidden),
            bz: zeros_param(hidden),
            wr: xavier(&mut r, input_dim, hidden),
            ur: xavier(&mut r, hidden, hidden),
            br: zeros_param(hidden),
            wh: xavier(&mut r, input_dim, hidden),
            uh: xavier(&mut r, hidden, hidden),
            bh: zeros_param(hidden),
            head_w: xavier(&mut r, hidden, HORIZON * N_BEAMS),
            head_b: zeros_param(HORIZON * N_BEAMS),
        })
    }

    pub fn with_config(cfg: &RnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Self::new(RNN_INPUT_DIM, cfg.hidden, seed)
    }

    pub fn params(&self) -> Result<ParamSet<E>> {
        let mut set = ParamSet::new();
        for (name, t) in [
            ("rnn.wz", &self.wz),
            ("rnn.uz", &self.uz),
            ("rnn.bz", &self.bz),
            ("rnn.wr", &self.wr),
            ("rnn.ur", &self.ur),
            ("rnn.br", &self.br),
            ("rnn.wh", &self.wh),
            ("rnn.uh", &self.uh),
            ("rnn.bh", &self.bh),
            ("rnn.head.w", &self.head_w),
            ("rnn.head.b", &self.head_b),
        ] {
            set.insert(name, t.clone())?;
        }
        Ok(set)
    }

    pub fn param_count(&self) -> usize {
        self.params().expect("fresh set").num_elements()
    }

    /// One GRU step: h' = (1 - z) ⊙ h + z ⊙ tanh(x Wh + (r ⊙ h) Uh + bh).
    fn step(&self, x: &Tensor<E>, h: &Tensor<E>) -> Result<Tensor<E>> {
        let z = x.matmul(&self.wz)?.add(&h.matmul(&self.uz)?)?.add(&self.bz)?.sigmoid();
        let r = x.matmul(&self.wr)?.add(&h.matmul(&self.ur)?)?.add(&self.br)?.sigmoid();
        let cand = x
            .matmul(&self.wh)?
            .add(&r.mul(h)?.matmul(&self.uh)?)?
            .add(&self.bh)?
            .tanh_act();
        let keep = z.mul_scalar(-1.0).add_scalar(1.0);
        keep.mul(h)?.add(&z.mul(&cand)?)
    }

    /// Run the recurrence over `[B, T, input_dim]` and return the final
    /// hidden state `[B, hidden]`.
    pub fn final_hidden(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = x.shape().to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(Error::Shape {
                op: "gru_forward",
                left: shape,
                right: vec![0, 0, self.input_dim],
            });
        }
        let (b, t) = (shape[0], shape[1]);
        let mut h = Tensor::zeros(&[b, self.hidden]);
        for step in 0..t {
            let xt = x.slice(1, step, 1)?.reshape(&[b, self.input_dim])?;
            h = self.step(&xt, &h)?;
        }
        Ok(h)
    }

    /// Future-beam logits `[B, 3, 64]`.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let b = x.shape()[0];
        self.final_hidden(x)?
            .matmul(&self.head_w)?
            .add(&self.head_b)?
            .reshape(&[b, HORIZON, N_BEAMS])
    }

    /// Batch feature tensor from observation windows.
    pub fn features<'a>(
        windows: impl Iterator<Item = &'a [MultimodalRecord]>,
        pos_scale: f64,
    ) -> Result<Tensor<E>> {
        let mut data = Vec::new();
        let mut b = 0;
        for obs in windows {
            data.extend(rnn_features(obs, pos_scale));
            b += 1;
        }
        Tensor::from_f64_slice(&[b, OBS_LEN, RNN_INPUT_DIM], &data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderConfig;
    use crate::model::{BackboneConfig, TokenLayout, WmlmModel};
    use crate::scenegen::{gen_scenario, ScenarioConfig};

    fn windows() -> Vec<crate::scenegen::SampleWindow> {
        let cfg = ScenarioConfig {
            scenario_id: 2,
            road_offset_m: 20.0,
            speed_mps: 10.0,
            x_range_m: (-50.0, 50.0),
            dt_s: 0.1,
            gps_noise_std_m: 1.0,
            vis_noise_std: 0.03,
            blockage_prob: 0.15,
            blockage_atten_db: 12.0,
            n_traversals: 1,
            seed: 41,
        };
        gen_scenario(&cfg).unwrap().windows()
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let ws = windows();
        let gru: GruBaseline<f32> = GruBaseline::with_config(&RnnConfig::default(), 3).unwrap();
        let x = GruBaseline::<f32>::features(ws[..4].iter().map(|w| w.obs.as_slice()), 0.02)
            .unwrap();
        assert_eq!(x.shape(), &[4, 5, 70]);
        let a = gru.forward(&x).unwrap();
        assert_eq!(a.shape(), &[4, 3, 64]);
        let b = gru.forward(&x).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());

        let other: GruBaseline<f32> = GruBaseline::with_config(&RnnConfig::default(), 4).unwrap();
        assert_ne!(a.to_vec(), other.forward(&x).unwrap().to_vec());
    }

    #[test]
    fn default_parameter_count_is_under_a_tenth_of_the_transformer() {
        let gru: GruBaseline<f32> = GruBaseline::with_config(&RnnConfig::default(), 1).unwrap();
        assert_eq!(gru.param_count(), 66_720);

        let layout = TokenLayout::new(&crate::encoders::Modality::ALL).unwrap();
        let model: WmlmModel<f32> =
            WmlmModel::new(&BackboneConfig::default(), layout, 1).unwrap();
        let encoders: crate::encoders::Encoders<f32> =
            crate::encoders::Encoders::new(&EncoderConfig::default(), 1).unwrap();
        let total = model.param_count() + encoders.params().unwrap().num_elements();
        assert!(
            (gru.param_count() as f64) < 0.10 * total as f64,
            "{} vs 10% of {}",
            gru.param_count(),
            total
        );
    }

    #[test]
    fn hand_computed_recurrence() {
        // 1-dim cell with fixed weights: z = r = 0.5, candidate = tanh(x)
        let gru: GruBaseline<f64> = GruBaseline::new(1, 1, 0).unwrap();
        gru.wz.with_data_mut(|d| d[0] = 0.0);
        gru.uz.with_data_mut(|d| d[0] = 0.0);
        gru.wr.with_data_mut(|d| d[0] = 0.0);
        gru.ur.with_data_mut(|d| d[0] = 0.0);
        gru.wh.with_data_mut(|d| d[0] = 1.0);
        gru.uh.with_data_mut(|d| d[0] = 0.0);

        let xs = [0.3, -1.1, 2.0];
        let x = Tensor::from_vec(&[1, 3, 1], xs.to_vec()).unwrap();
        let got = gru.final_hidden(&x).unwrap().to_vec()[0];
        let mut h = 0.0f64;
        for v in xs {
            h = 0.5 * h + 0.5 * v.tanh();
        }
        assert!((got - h).abs() < 1e-12, "{got} vs {h}");
    }

    #[test]
    fn feature_layout_per_step() {
        let ws = windows();
        let f = rnn_features(&ws[0].obs, 0.02);
        assert_eq!(f.len(), 5 * RNN_INPUT_DIM);
        // first step: gps is centered on itself
        assert_eq!(f[64], 0.0);
        assert_eq!(f[65], 0.0);
        let rec = &ws[0].obs[0];
        assert!((f[0] - (rec.powers[0] + LOG_EPS).log10()).abs() < 1e-15);
        assert_eq!(&f[66..70], &rec.vis);
    }

    #[test]
    fn gradients_flow_through_the_cell() {
        let gru: GruBaseline<f64> = GruBaseline::new(3, 4, 7).unwrap();
        let x = Tensor::from_vec(
            &[2, 3, 3],
            (0..18).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect(),
        )
        .unwrap();
        let labels = vec![1usize, 5, 9, 2, 6, 10];
        let params: Vec<Tensor<f64>> =
            gru.params().unwrap().iter().map(|(_, t)| t.clone()).collect();
        let worst = crate::gradcheck::check_grads(&params, &|| {
            let logits = gru.forward(&x)?;
            WmlmModel::classification_loss(&logits, &labels)
        })
        .unwrap();
        assert!(worst < crate::gradcheck::REL_TOL, "rel err {worst:.3e}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let gru: GruBaseline<f32> = GruBaseline::new(70, 8, 0).unwrap();
        let wrong = Tensor::<f32>::zeros(&[2, 5, 69]);
        assert!(gru.forward(&wrong).is_err());
        assert!(GruBaseline::<f32>::new(0, 8, 0).is_err());
    }
}
