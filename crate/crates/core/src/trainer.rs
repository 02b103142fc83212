//! Mini-batch Adam training with early stopping on validation recall@10.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::cograph::CoGraph;
use crate::error::{Error, Result};
use crate::eval::rank_users;
use crate::ingest::{sample_triplets, Dataset, Split};
use crate::intents::{total_loss, LossWeights, ModelConfig, ModelInputs, ModelParams, ModelVars, ScoringSnapshot, TowerValues};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weights: LossWeights,
    pub model: ModelConfig,
    /// Modalities to train on; empty means all available.
    pub modalities: Vec<String>,
    pub seed: u64,
    /// Recompute the towers every this many steps, reusing detached
    /// outputs in between.
    pub refresh_interval: usize,
    /// Global gradient-norm clip; `0` disables.
    pub clip_norm: f64,
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            max_epochs: 1000,
            patience: 20,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            modalities: Vec::new(),
            seed: 0,
            refresh_interval: 1,
            clip_norm: 5.0,
            eval_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.refresh_interval == 0 {
            return bad("batch_size, max_epochs, patience and refresh_interval must be at least 1");
        }
        if self.eval_k == 0 {
            return bad("eval_k must be at least 1");
        }
        let w = self.weights;
        if [w.assignment, w.independence, w.l2, self.clip_norm].iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("loss weights and clip_norm must be non-negative");
        }
        Ok(())
    }
}

/// Per-block Adam moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Array2<f64>, Array2<f64>)>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let moments = params
            .blocks()
            .into_iter()
            .map(|(name, b)| (name, (Array2::zeros(b.dim()), Array2::zeros(b.dim()))))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn moments(&self, block: &str) -> Option<(&Array2<f64>, &Array2<f64>)> {
        self.moments.get(block).map(|(m, v)| (m, v))
    }
}

/// One bias-corrected Adam update over the named gradient blocks.
///
/// Every gradient is checked before any parameter moves; a non-finite entry
/// aborts the step and names its block.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[(String, Array2<f64>)],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteGradient(name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let block = params
            .block_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter block `{name}`")))?;
        if block.dim() != g.dim() {
            return Err(Error::Shape(format!("gradient for `{name}` has shape {:?}", g.dim())));
        }
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Array2::zeros(g.dim()), Array2::zeros(g.dim())));
        ndarray::Zip::from(&mut *block)
            .and(&mut *m)
            .and(&mut *v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(String, Array2<f64>)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub assignment: f64,
    pub independence: f64,
    pub bpr: f64,
    pub val_recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation recall.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// `epoch,train_loss,l1,l2,l3,val_recall10`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,l1,l2,l3,val_recall10\n");
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.assignment, r.independence, r.bpr, r.val_recall
        )
        .unwrap();
    }
    out
}

fn mix_seed(seed: u64, stream: u64, epoch: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct BatchStats {
    total: f64,
    assignment: f64,
    independence: f64,
    bpr: f64,
}

/// Trains from scratch, or from `init` when resuming.
pub fn train(
    dataset: &Dataset,
    graph: &CoGraph,
    config: &TrainConfig,
    init: Option<ModelParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if graph.n_nodes() != dataset.n_items() {
        return Err(Error::Shape(format!(
            "graph has {} nodes, dataset {} items",
            graph.n_nodes(),
            dataset.n_items()
        )));
    }
    let inputs = ModelInputs::new(graph, dataset.features(), &config.modalities)?;
    let mut params = match init {
        Some(p) => p,
        None => ModelParams::init(
            dataset.n_users(),
            dataset.n_items(),
            &inputs.feature_dims(),
            &config.model,
            config.seed,
        )?,
    };
    let mut adam = AdamState::new(&params);
    let mut history = Vec::new();
    let mut best: Option<(ModelParams, usize, f64)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut cache: Option<BTreeMap<String, TowerValues>> = None;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=config.max_epochs {
        let mut triplets = sample_triplets(dataset, mix_seed(config.seed, 1, epoch as u64));
        if triplets.is_empty() {
            return Err(Error::InvalidArgument("no training triplets could be sampled".into()));
        }
        triplets.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 2, epoch as u64)));

        let mut sums = BatchStats {
            total: 0.0,
            assignment: 0.0,
            independence: 0.0,
            bpr: 0.0,
        };
        let mut n_batches = 0usize;
        for batch in triplets.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let refresh = cache.is_none() || step.is_multiple_of(config.refresh_interval);
            let vars = if refresh {
                ModelVars::build(&mut tape, &params, &inputs, true)?
            } else {
                ModelVars::build_cached(&mut tape, &params, &inputs, cache.as_ref().unwrap())?
            };
            if refresh && config.refresh_interval > 1 {
                cache = Some(vars.tower_values(&tape));
            }
            let terms = total_loss(&mut tape, &vars, batch, config.weights, config.model.sum_modality_losses)?;
            let loss = tape.scalar_value(terms.total);
            if !loss.is_finite() {
                log::error!("non-finite loss at epoch {epoch}; keeping the last good checkpoint");
                stop = StopReason::NonFiniteLoss { epoch };
                break 'epochs;
            }
            sums.total += loss;
            sums.assignment += tape.scalar_value(terms.assignment);
            sums.independence += tape.scalar_value(terms.independence);
            sums.bpr += tape.scalar_value(terms.bpr);
            n_batches += 1;

            let mut g = tape.backward(terms.total)?;
            let mut grads: Vec<(String, Array2<f64>)> = vars
                .blocks
                .iter()
                .map(|(name, v)| (name.clone(), g.take(*v).expect("parameter gradient")))
                .collect();
            clip_global_norm(&mut grads, config.clip_norm);
            step += 1;
            if let Err(e) = adam_step(&mut params, &grads, &mut adam, config.learning_rate) {
                log::warn!("epoch {epoch}: {e}; skipping the rest of the epoch");
                break;
            }
        }

        let snapshot = ScoringSnapshot::from_params(&params, &inputs)?;
        let report = rank_users(&snapshot, dataset, Split::Validation, &[config.eval_k])?;
        let val_recall = report.recall[&config.eval_k];
        let denom = n_batches.max(1) as f64;
        let record = EpochRecord {
            epoch,
            train_loss: sums.total / denom,
            assignment: sums.assignment / denom,
            independence: sums.independence / denom,
            bpr: sums.bpr / denom,
            val_recall,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} bpr {:.6} val recall@{} {:.4}",
            record.train_loss,
            record.bpr,
            config.eval_k,
            val_recall
        );
        history.push(record);

        let improved = best.as_ref().is_none_or(|(_, _, r)| val_recall > *r);
        if improved {
            best = Some((params.clone(), epoch, val_recall));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }

    let (params, best_epoch, best_val_recall) = best.unwrap_or((params, 0, f64::NAN));
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_val_recall,
        history,
        stop,
    })
}
