use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recurrent layers in the sequence encoder.
pub const NUM_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder output width.
    pub d_t: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Channels per raw window.
    pub input_channels: usize,
    /// Handcrafted feature width.
    pub feature_dim: usize,
    pub num_activities: usize,
    pub num_contexts: usize,
    pub num_users: usize,
    /// `false` drops the sequence encoder; the fused vector is then just
    /// the handcrafted features.
    pub use_encoder: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_t", self.d_t),
            ("hidden_size", self.hidden_size),
            ("input_channels", self.input_channels),
            ("feature_dim", self.feature_dim),
            ("num_activities", self.num_activities),
            ("num_contexts", self.num_contexts),
            ("num_users", self.num_users),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be positive")));
            }
        }
        if self.num_layers != NUM_LAYERS {
            return Err(Error::Config(format!("encoder has exactly {NUM_LAYERS} layers")));
        }
        Ok(())
    }

    /// Width of the fused representation fed to the heads.
    pub fn fused_dim(&self) -> usize {
        if self.use_encoder {
            self.d_t + self.feature_dim
        } else {
            self.feature_dim
        }
    }

    pub fn encoded_dim(&self) -> usize {
        if self.use_encoder {
            self.d_t
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `4H × input`, gate blocks ordered input, forget, cell, output.
    pub w_ih: Array2<f64>,
    /// `4H × H`
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<LstmLayer>,
    /// `d_t × H`
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

impl Encoder {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.w_ih.as_slice().expect("standard layout"));
            out.push(l.w_hh.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.proj_w.as_slice().expect("standard layout"));
        out.push(self.proj_b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_ih.as_slice_mut().expect("standard layout"));
            out.push(l.w_hh.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.proj_w.as_slice_mut().expect("standard layout"));
        out.push(self.proj_b.as_slice_mut().expect("standard layout"));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// All trainable weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Option<Encoder>,
    pub activity: Linear,
    pub context: Linear,
    pub user: Linear,
}

fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let k = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-k..=k))
}

fn uniform1(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Array1<f64> {
    let k = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(n, || rng.random_range(-k..=k))
}

impl ModelParams {
    /// Seeded uniform init in `±1/sqrt(fan_in)`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = cfg.hidden_size;
        let encoder = cfg.use_encoder.then(|| {
            let mut layers = Vec::with_capacity(cfg.num_layers);
            for l in 0..cfg.num_layers {
                let input = if l == 0 { cfg.input_channels } else { h };
                layers.push(LstmLayer {
                    w_ih: uniform2(&mut rng, 4 * h, input, input),
                    w_hh: uniform2(&mut rng, 4 * h, h, h),
                    bias: uniform1(&mut rng, 4 * h, h),
                });
            }
            Encoder {
                layers,
                proj_w: uniform2(&mut rng, cfg.d_t, h, h),
                proj_b: uniform1(&mut rng, cfg.d_t, h),
            }
        });
        let f = cfg.fused_dim();
        let mut head = |c| Linear { w: uniform2(&mut rng, c, f, f), b: uniform1(&mut rng, c, f) };
        let activity = head(cfg.num_activities);
        let context = head(cfg.num_contexts);
        let user = head(cfg.num_users);
        Ok(Self { encoder, activity, context, user })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every weight array, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoder.as_ref().map(Encoder::tensors).unwrap_or_default();
        for h in [&self.activity, &self.context, &self.user] {
            out.push(h.w.as_slice().expect("standard layout"));
            out.push(h.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.encoder.as_mut().map(Encoder::tensors_mut).unwrap_or_default();
        for h in [&mut self.activity, &mut self.context, &mut self.user] {
            out.push(h.w.as_slice_mut().expect("standard layout"));
            out.push(h.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            for i in 0..e.layers.len() {
                out.push(format!("encoder.layer{i}.w_ih"));
                out.push(format!("encoder.layer{i}.w_hh"));
                out.push(format!("encoder.layer{i}.bias"));
            }
            out.push("encoder.proj_w".into());
            out.push("encoder.proj_b".into());
        }
        for h in ["activity", "context", "user"] {
            out.push(format!("{h}.w"));
            out.push(format!("{h}.b"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn num_encoder_params(&self) -> usize {
        self.encoder.as_ref().map_or(0, |e| e.tensors().iter().map(|t| t.len()).sum())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
