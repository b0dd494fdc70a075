//! Dataset splitting, mini-batching, the optimisation loop with ablation
//! switches, grid search and ablation runs.

mod split;

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use split::{split_by_user, split_sizes, take_split, SplitIndices, SplitSpec};

use crate::error::{Error, Result};
use crate::labels::{head_matrix, LabelKind, LabelSchema, LabelSet, PairingScope};
use crate::losses::{class_weights, total_loss_with_grad, BatchTargets, LossBreakdown, LossWeights};
use crate::metrics::{EvalReport, MetricsReport};
use crate::model::{ForwardOutput, HeadLogits, Model, ModelConfig, NUM_LAYERS};
use crate::optim::{RAdam, RAdamConfig};
use crate::pipeline::Instance;

/// Instances per forward pass during evaluation.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "none")]
    None,
    /// User head weight set to zero.
    #[serde(rename = "no_UI")]
    NoUi,
    /// Contrastive weight set to zero.
    #[serde(rename = "no_CL")]
    NoCl,
    /// Sequence encoder removed.
    #[serde(rename = "no_TS")]
    NoTs,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoUi, Ablation::NoCl, Ablation::NoTs];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoUi => "no_UI",
            Ablation::NoCl => "no_CL",
            Ablation::NoTs => "no_TS",
        }
    }

    /// Row name in ablation tables.
    pub fn variant_name(self) -> &'static str {
        match self {
            Ablation::None => "full",
            other => other.as_str(),
        }
    }

    pub fn loss_weights(self, base: LossWeights) -> LossWeights {
        match self {
            Ablation::NoUi => LossWeights { gamma2: 0.0, ..base },
            Ablation::NoCl => LossWeights { alpha: 0.0, ..base },
            _ => base,
        }
    }

    pub fn use_encoder(self) -> bool {
        self != Ablation::NoTs
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "full" => Ok(Ablation::None),
            "no_ui" => Ok(Ablation::NoUi),
            "no_cl" => Ok(Ablation::NoCl),
            "no_ts" => Ok(Ablation::NoTs),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

/// Candidate values per grid axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub alpha: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub d_t: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alpha: vec![0.1, 0.5, 1.0],
            gamma1: vec![0.1, 0.5, 1.0],
            gamma2: vec![0.1, 0.5, 1.0],
            learning_rate: vec![1e-3],
            d_t: vec![64],
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.alpha.len() * self.gamma1.len() * self.gamma2.len() * self.learning_rate.len() * self.d_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product applied on top of `base`, in axis order
    /// α, γ₁, γ₂, learning rate, d_t.
    pub fn expand(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &alpha in &self.alpha {
            for &gamma1 in &self.gamma1 {
                for &gamma2 in &self.gamma2 {
                    for &lr in &self.learning_rate {
                        for &d_t in &self.d_t {
                            let mut c = base.clone();
                            c.loss_weights = LossWeights { alpha, gamma1, gamma2 };
                            c.learning_rate = lr;
                            c.d_t = d_t;
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub ablation: Ablation,
    pub pairing_scope: PairingScope,
    pub hidden_size: usize,
    pub d_t: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 50,
            learning_rate: 1e-3,
            patience: 10,
            loss_weights: LossWeights::default(),
            seed: 0,
            ablation: Ablation::None,
            pairing_scope: PairingScope::default(),
            hidden_size: 64,
            d_t: 64,
        }
    }
}

impl TrainConfig {
    /// Loss weights after the ablation switch.
    pub fn effective_weights(&self) -> LossWeights {
        self.ablation.loss_weights(self.loss_weights)
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_weights().validate()?;
        if self.effective_weights().alpha > 0.0 && self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 when alpha > 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        RAdamConfig { lr: self.learning_rate, ..Default::default() }.validate()
    }

    pub fn model_config(&self, schema: &LabelSchema, sample: &Instance) -> ModelConfig {
        ModelConfig {
            d_t: self.d_t,
            hidden_size: self.hidden_size,
            num_layers: NUM_LAYERS,
            input_channels: sample.window.num_channels(),
            feature_dim: sample.features.dim(),
            num_activities: schema.num_activities(),
            num_contexts: schema.num_contexts(),
            num_users: schema.num_users(),
            use_encoder: self.ablation.use_encoder(),
            seed: self.seed,
        }
    }
}

/// Shuffled mini-batches of `0..n`. With `drop_short`, a trailing batch
/// smaller than `batch_size` is dropped unless it is the only batch.
pub fn make_batches(n: usize, batch_size: usize, drop_short: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if drop_short && batches.len() > 1 && batches.last().is_some_and(|b| b.len() < batch_size) {
        batches.pop();
    }
    batches
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub train: LossBreakdown,
    pub val: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the selected parameters.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    pub fn best_val_mcc(&self) -> f64 {
        self.best().val.activity.macro_mcc
    }
}

/// Forward pass over any number of instances in fixed-size slices.
pub fn predict(model: &Model, instances: &[Instance]) -> Result<ForwardOutput> {
    if instances.is_empty() {
        return Err(Error::invalid("nothing to predict"));
    }
    let mut fused = Vec::new();
    let mut logits = Vec::new();
    for chunk in instances.chunks(EVAL_BATCH) {
        let refs: Vec<&Instance> = chunk.iter().collect();
        let out = model.forward(&refs)?;
        fused.push(out.fused);
        logits.push(out.logits);
    }
    let cat = |parts: Vec<&Array2<f64>>| {
        let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
        concatenate(Axis(0), &views).expect("consistent widths")
    };
    Ok(ForwardOutput {
        fused: cat(fused.iter().collect()),
        logits: HeadLogits {
            activity: cat(logits.iter().map(|l| &l.activity).collect()),
            context: cat(logits.iter().map(|l| &l.context).collect()),
            user: cat(logits.iter().map(|l| &l.user).collect()),
        },
    })
}

/// Scores logits for all three heads against the instances' labels.
pub fn evaluate_logits(schema: &LabelSchema, logits: &HeadLogits, labels: &[&LabelSet], threshold: f64) -> Result<EvalReport> {
    let head = |kind: LabelKind, z: &Array2<f64>| {
        let truth = head_matrix(labels.iter().copied(), kind);
        MetricsReport::evaluate_at(kind, schema.names(kind), z.view(), truth.view(), threshold)
    };
    Ok(EvalReport {
        activity: head(LabelKind::Activity, &logits.activity)?,
        context: head(LabelKind::Context, &logits.context)?,
        user: head(LabelKind::User, &logits.user)?,
    })
}

pub fn evaluate(model: &Model, schema: &LabelSchema, instances: &[Instance]) -> Result<EvalReport> {
    evaluate_at(model, schema, instances, 0.5)
}

pub fn evaluate_at(model: &Model, schema: &LabelSchema, instances: &[Instance], threshold: f64) -> Result<EvalReport> {
    let out = predict(model, instances)?;
    let labels: Vec<&LabelSet> = instances.iter().map(|i| &i.labels).collect();
    evaluate_logits(schema, &out.logits, &labels, threshold)
}

/// Trains one model and returns the parameters of the best validation
/// epoch (activity macro-MCC) together with the full history.
pub fn train(config: &TrainConfig, schema: &LabelSchema, train_set: &[Instance], val_set: &[Instance]) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("train and validation sets must be non-empty"));
    }
    let weights = config.effective_weights();
    if weights.alpha > 0.0 && train_set.len() < 2 {
        return Err(Error::DegenerateBatch(train_set.len()));
    }
    let mut model = Model::new(config.model_config(schema, &train_set[0]))?;
    let all_labels: Vec<&LabelSet> = train_set.iter().map(|i| &i.labels).collect();
    let w_a = class_weights(head_matrix(all_labels.iter().copied(), LabelKind::Activity).view())?;
    let w_pp = class_weights(head_matrix(all_labels.iter().copied(), LabelKind::Context).view())?;
    let mut opt = RAdam::new(RAdamConfig { lr: config.learning_rate, ..Default::default() }, &model.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));

    let mut epochs = Vec::new();
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_params = model.params.clone();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        let batches = make_batches(train_set.len(), config.batch_size, weights.alpha > 0.0, &mut rng);
        let mut sum = LossBreakdown::default();
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Instance> = idx.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<&LabelSet> = batch.iter().map(|i| &i.labels).collect();
            let targets = BatchTargets::from_labels(&labels, config.pairing_scope);
            let (out, tape) = model.forward_with_tape(&batch)?;
            let (loss, grads) = total_loss_with_grad(&out.logits, out.fused.view(), &targets, &weights, &w_a, &w_pp)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, detail: format!("{loss:?}") });
            }
            let g = model.backward(&tape, grads.d_fused.view(), &grads.d_logits);
            opt.step(&mut model.params, &g);
            sum.l_a += loss.l_a;
            sum.l_pp += loss.l_pp;
            sum.l_u += loss.l_u;
            sum.l_d += loss.l_d;
            sum.total += loss.total;
        }
        let n = batches.len().max(1) as f64;
        let train_loss = LossBreakdown {
            l_a: sum.l_a / n,
            l_pp: sum.l_pp / n,
            l_u: sum.l_u / n,
            l_d: sum.l_d / n,
            total: sum.total / n,
        };
        let val = evaluate(&model, schema, val_set)?;
        let score = val.activity.macro_mcc;
        debug!("epoch {epoch}: loss {:.4} val activity MCC {score:.4}", train_loss.total);
        epochs.push(EpochRecord { epoch, train: train_loss, val });
        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    info!("best epoch {best_epoch} of {}, val activity MCC {best_score:.4}", epochs.len());
    model.params = best_params;
    Ok((model, TrainHistory { epochs, best_epoch, stopped_early }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub config: TrainConfig,
    pub val_mcc: f64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: usize,
    pub trials: Vec<GridTrial>,
}

impl GridResult {
    pub fn best_config(&self) -> &TrainConfig {
        &self.trials[self.best].config
    }
}

/// Index of the best trial: highest score, then smaller α, then smaller
/// learning rate, then grid order.
pub fn select_best(trials: &[(f64, &TrainConfig)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (score, cfg)) in trials.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let (bs, bc) = trials[b];
                score > &bs
                    || (*score == bs
                        && (cfg.loss_weights.alpha < bc.loss_weights.alpha
                            || (cfg.loss_weights.alpha == bc.loss_weights.alpha && cfg.learning_rate < bc.learning_rate)))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Trains every grid point (in parallel) and picks the best by
/// validation activity macro-MCC.
pub fn grid_search(
    base: &TrainConfig,
    grid: &GridSpec,
    schema: &LabelSchema,
    train_set: &[Instance],
    val_set: &[Instance],
) -> Result<GridResult> {
    grid_search_configs(grid.expand(base), schema, train_set, val_set)
}

/// Grid search over an explicit list of trial configurations.
pub fn grid_search_configs(
    configs: Vec<TrainConfig>,
    schema: &LabelSchema,
    train_set: &[Instance],
    val_set: &[Instance],
) -> Result<GridResult> {
    if configs.is_empty() {
        return Err(Error::Config("grid search needs at least one candidate".into()));
    }
    let results = crate::par::map(&configs, |cfg| train(cfg, schema, train_set, val_set).map(|(_, h)| h));
    let mut trials = Vec::with_capacity(configs.len());
    for (cfg, r) in configs.into_iter().zip(results) {
        let history = r?;
        info!(
            "trial alpha={} gamma1={} gamma2={} lr={} d_t={}: val MCC {:.4}",
            cfg.loss_weights.alpha,
            cfg.loss_weights.gamma1,
            cfg.loss_weights.gamma2,
            cfg.learning_rate,
            cfg.d_t,
            history.best_val_mcc()
        );
        trials.push(GridTrial { val_mcc: history.best_val_mcc(), config: cfg, history });
    }
    let keys: Vec<(f64, &TrainConfig)> = trials.iter().map(|t| (t.val_mcc, &t.config)).collect();
    let best = select_best(&keys).expect("non-empty");
    Ok(GridResult { best, trials })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: Ablation,
    pub encoder_params: usize,
    pub test: EvalReport,
    pub history: TrainHistory,
}

/// Trains every variant on the same data and seed and scores it on test.
pub fn ablate(
    base: &TrainConfig,
    variants: &[Ablation],
    schema: &LabelSchema,
    train_set: &[Instance],
    val_set: &[Instance],
    test_set: &[Instance],
) -> Result<Vec<(AblationRun, Model)>> {
    let results = crate::par::map(variants, |&variant| -> Result<(AblationRun, Model)> {
        let cfg = TrainConfig { ablation: variant, ..base.clone() };
        let (model, history) = train(&cfg, schema, train_set, val_set)?;
        let test = evaluate(&model, schema, test_set)?;
        let run = AblationRun { variant, encoder_params: model.params.num_encoder_params(), test, history };
        Ok((run, model))
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests;
