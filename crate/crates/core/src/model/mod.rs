//! The trainable network: sequence encoder, fusion with handcrafted
//! features, and one linear head per task.

mod checkpoint;
mod lstm;
mod params;

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use params::{Encoder, Linear, LstmLayer, ModelConfig, ModelParams, NUM_LAYERS};

use crate::error::{Error, Result};
use crate::pipeline::{Instance, RawWindow};

use lstm::{encoder_backward, encoder_forward, EncoderTape};

/// Instances per encoder work unit. Fixed so that results do not depend
/// on the number of threads.
pub const CHUNK: usize = 16;

/// Raw per-head outputs; activations live in the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits {
    pub activity: Array2<f64>,
    pub context: Array2<f64>,
    pub user: Array2<f64>,
}

impl HeadLogits {
    pub fn zeros_like(&self) -> Self {
        Self {
            activity: Array2::zeros(self.activity.raw_dim()),
            context: Array2::zeros(self.context.raw_dim()),
            user: Array2::zeros(self.user.raw_dim()),
        }
    }

    pub fn all_finite(&self) -> bool {
        [&self.activity, &self.context, &self.user]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            activity: self.activity.select(Axis(0), rows),
            context: self.context.select(Axis(0), rows),
            user: self.user.select(Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Fused representation, `B × (d_t + D)` (or `B × D` without encoder).
    pub fused: Array2<f64>,
    pub logits: HeadLogits,
}

/// Saved activations for [`Model::backward`].
pub struct Tape {
    chunks: Vec<EncoderTape>,
    fused: Array2<f64>,
}

/// Concatenates encoder codes and features row-wise.
pub fn fuse(encoded: ArrayView2<f64>, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    if encoded.nrows() != features.nrows() {
        return Err(Error::invalid(format!(
            "fuse: {} encoded rows vs {} feature rows",
            encoded.nrows(),
            features.nrows()
        )));
    }
    Ok(concatenate(Axis(1), &[encoded, features]).expect("row counts match"))
}

fn linear(x: ArrayView2<f64>, head: &Linear) -> Array2<f64> {
    let mut out = Array2::from_shape_fn((x.nrows(), head.b.len()), |(_, j)| head.b[j]);
    general_mat_mul(1.0, &x, &head.w.t(), 1.0, &mut out);
    out
}

pub fn predict_heads(fused: ArrayView2<f64>, params: &ModelParams) -> Result<HeadLogits> {
    let expect = params.activity.w.ncols();
    if fused.ncols() != expect {
        return Err(Error::invalid(format!(
            "fused width {} does not match head input {expect}",
            fused.ncols()
        )));
    }
    Ok(HeadLogits {
        activity: linear(fused, &params.activity),
        context: linear(fused, &params.context),
        user: linear(fused, &params.user),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if params.encoder.is_some() != config.use_encoder
            || params.activity.w.dim() != (config.num_activities, config.fused_dim())
            || params.context.w.dim() != (config.num_contexts, config.fused_dim())
            || params.user.w.dim() != (config.num_users, config.fused_dim())
        {
            return Err(Error::invalid("parameters do not match model config"));
        }
        Ok(Self { config, params })
    }

    fn check_windows(&self, windows: &[&RawWindow]) -> Result<()> {
        let Some(first) = windows.first() else {
            return Err(Error::invalid("empty batch"));
        };
        let t = first.len();
        for w in windows {
            if w.num_channels() != self.config.input_channels || w.len() != t || t == 0 {
                return Err(Error::invalid(format!(
                    "window shape {:?} does not match {} channels × {t} steps",
                    w.data.dim(),
                    self.config.input_channels
                )));
            }
        }
        Ok(())
    }

    fn encode_chunks(&self, windows: &[&RawWindow]) -> Result<(Array2<f64>, Vec<EncoderTape>)> {
        self.check_windows(windows)?;
        let enc = self.params.encoder.as_ref().ok_or_else(|| Error::invalid("model has no sequence encoder"))?;
        let chunks: Vec<&[&RawWindow]> = windows.chunks(CHUNK).collect();
        let results = crate::par::map(&chunks, |chunk| {
            let views: Vec<ArrayView2<f64>> = chunk.iter().map(|w| w.data.view()).collect();
            encoder_forward(enc, &views)
        });
        let mut codes = Array2::zeros((windows.len(), self.config.d_t));
        let mut tapes = Vec::with_capacity(results.len());
        for (i, (c, tape)) in results.into_iter().enumerate() {
            let start = i * CHUNK;
            codes.slice_mut(s![start..start + c.nrows(), ..]).assign(&c);
            tapes.push(tape);
        }
        Ok((codes, tapes))
    }

    /// Encoder codes, `B × d_t`.
    pub fn encode_sequence(&self, windows: &[&RawWindow]) -> Result<Array2<f64>> {
        self.encode_chunks(windows).map(|(c, _)| c)
    }

    fn feature_matrix(&self, batch: &[&Instance]) -> Result<Array2<f64>> {
        let d = self.config.feature_dim;
        if let Some(bad) = batch.iter().find(|i| i.features.dim() != d) {
            return Err(Error::invalid(format!("feature dim {} does not match model {d}", bad.features.dim())));
        }
        Ok(Array2::from_shape_fn((batch.len(), d), |(i, j)| batch[i].features.values[j]))
    }

    pub fn forward_with_tape(&self, batch: &[&Instance]) -> Result<(ForwardOutput, Tape)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let features = self.feature_matrix(batch)?;
        let (fused, chunks) = if self.config.use_encoder {
            let windows: Vec<&RawWindow> = batch.iter().map(|i| &i.window).collect();
            let (codes, tapes) = self.encode_chunks(&windows)?;
            (fuse(codes.view(), features.view())?, tapes)
        } else {
            (features, Vec::new())
        };
        let logits = predict_heads(fused.view(), &self.params)?;
        let out = ForwardOutput { fused: fused.clone(), logits };
        Ok((out, Tape { chunks, fused }))
    }

    pub fn forward(&self, batch: &[&Instance]) -> Result<ForwardOutput> {
        self.forward_with_tape(batch).map(|(o, _)| o)
    }

    /// Parameter gradients given upstream gradients on the fused
    /// representation and on each head's logits.
    pub fn backward(&self, tape: &Tape, d_fused: ArrayView2<f64>, d_logits: &HeadLogits) -> ModelParams {
        let mut grad = self.params.zeros_like();
        let mut d_x = d_fused.to_owned();
        for (head, g_head, d) in [
            (&self.params.activity, &mut grad.activity, &d_logits.activity),
            (&self.params.context, &mut grad.context, &d_logits.context),
            (&self.params.user, &mut grad.user, &d_logits.user),
        ] {
            general_mat_mul(1.0, &d.t(), &tape.fused, 1.0, &mut g_head.w);
            g_head.b += &d.sum_axis(Axis(0));
            general_mat_mul(1.0, d, &head.w, 1.0, &mut d_x);
        }
        if let (Some(enc), Some(g_enc)) = (&self.params.encoder, &mut grad.encoder) {
            let d_t = self.config.d_t;
            let idx: Vec<usize> = (0..tape.chunks.len()).collect();
            let partial = crate::par::map(&idx, |&i| {
                let start = i * CHUNK;
                let end = (start + CHUNK).min(d_x.nrows());
                let mut g = enc.clone();
                for t in g.tensors_mut() {
                    t.fill(0.0);
                }
                encoder_backward(enc, &tape.chunks[i], d_x.slice(s![start..end, ..d_t]), &mut g);
                g
            });
            for g in &partial {
                for (a, b) in g_enc.tensors_mut().into_iter().zip(g.tensors()) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
        grad
    }
}
