//! Training recipe: relative-L2 objective, Adam with decoupled weight decay,
//! one-cycle schedule, shuffled mini-batches over variable-size samples,
//! best-by-test checkpointing and run history.

mod checkpoint;
mod loss;
mod optimizer;
mod schedule;

pub use checkpoint::{load as load_checkpoint, save as save_checkpoint};
pub use loss::{relative_l2, relative_l2_on_tape};
pub use optimizer::{AdamConfig, AdamState};
pub use schedule::{lr_at, ScheduleConfig};

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleBundle;
use crate::error::{Error, Result};
use crate::model::{
    forward_values, model_forward, ModelConfig, ModelParams, NormStats, ParamVars, PreparedSample,
};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_warm")]
    pub warm_frac: f64,
    #[serde(default = "default_start_div")]
    pub start_div: f64,
    #[serde(default = "default_final_div")]
    pub final_div: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    500
}
fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    1e-3
}
fn default_warm() -> f64 {
    0.2
}
fn default_start_div() -> f64 {
    2.0
}
fn default_final_div() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rel_l2: f64,
    pub test_rel_l2: f64,
    pub lr: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_test_rel_l2: f64,
    pub final_test_rel_l2: f64,
    pub skipped_steps: u64,
}

#[derive(Debug)]
pub struct TrainOutput {
    /// Parameters at the best test error.
    pub best: ModelParams,
    /// Parameters after the final epoch.
    pub final_params: ModelParams,
    pub history: RunHistory,
}

/// Per-sample report from [`evaluate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEval {
    pub index: usize,
    pub label: String,
    pub rel_l2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_rel_l2: f64,
    /// Per-sample errors, sorted ascending.
    pub per_sample: Vec<SampleEval>,
    /// Mean per label group.
    pub groups: BTreeMap<String, f64>,
}

fn require_preprocessed(bundles: &[SampleBundle]) -> Result<()> {
    for (i, b) in bundles.iter().enumerate() {
        if b.features.is_none() || b.grad_weights.is_none() {
            return Err(Error::Dataset(format!(
                "sample {i} lacks precomputed features/gradient weights; run preprocessing first"
            )));
        }
    }
    Ok(())
}

fn prepare_all(cfg: &ModelConfig, bundles: &[SampleBundle]) -> Result<Vec<PreparedSample>> {
    bundles
        .par_iter()
        .map(|b| {
            crate::model::prepare_sample(
                cfg,
                &b.sample,
                b.features.as_ref().unwrap(),
                b.grad_weights.as_ref().unwrap(),
            )
        })
        .collect()
}

/// Forward + loss + backward for one sample. Returns the loss value and the
/// parameter gradients in named order.
fn sample_pass(
    params: &ModelParams,
    prep: &PreparedSample,
    index: usize,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let pred = model_forward(&mut tape, &vars, params, prep)?;
    let reference = prep
        .reference
        .as_ref()
        .ok_or(Error::ZeroReference { sample: index })?;
    let l = relative_l2_on_tape(&mut tape, pred, reference, &prep.mask, prep.ref_norm, index)?;
    let value = tape.value(l).item();
    let grads = tape.backward(l)?;
    let mut out = Vec::new();
    let mut g = grads;
    for v in vars.ordered() {
        out.push(g.take(v));
    }
    Ok((value, out))
}

fn eval_loss(params: &ModelParams, prep: &PreparedSample, index: usize) -> Result<f64> {
    let pred = forward_values(params, prep)?;
    let reference = prep
        .reference
        .as_ref()
        .ok_or(Error::ZeroReference { sample: index })?;
    let d_u = reference.shape()[1];
    relative_l2(pred.real(), reference.real(), &prep.mask, d_u)
}

fn mean_eval(params: &ModelParams, preps: &[PreparedSample]) -> Result<f64> {
    let losses: Vec<Result<f64>> = preps
        .par_iter()
        .enumerate()
        .map(|(i, p)| eval_loss(params, p, i))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / preps.len() as f64)
}

/// Train on preprocessed bundles. Deterministic given the seed when run on a
/// fixed thread count (gradient accumulation is order-fixed regardless of
/// parallelism).
pub fn train(
    cfg: &TrainConfig,
    train_bundles: &[SampleBundle],
    test_bundles: &[SampleBundle],
) -> Result<TrainOutput> {
    if train_bundles.is_empty() || test_bundles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.model.validate()?;
    require_preprocessed(train_bundles)?;
    require_preprocessed(test_bundles)?;

    // normalization statistics over unmasked training nodes
    let pairs: Vec<(&crate::geometry::PointCloudSample, &crate::geometry::GeometryFeatures)> =
        train_bundles
            .iter()
            .map(|b| (&b.sample, b.features.as_ref().unwrap()))
            .collect();
    let norm = NormStats::from_dataset(&cfg.model, &pairs)?;

    let mut params = ModelParams::init(cfg.model.clone(), cfg.seed)?;
    params.norm = norm;
    let extent = params.norm.bbox_extent.clone();
    params.set_length_scales(&extent);

    let train_preps = prepare_all(&cfg.model, train_bundles)?;
    let test_preps = prepare_all(&cfg.model, test_bundles)?;

    let n = train_preps.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let sched = ScheduleConfig {
        base_lr: cfg.base_lr,
        total_steps: cfg.epochs * batches_per_epoch,
        warm_frac: cfg.warm_frac,
        start_div: cfg.start_div,
        final_div: cfg.final_div,
    };
    sched.validate()?;
    let mut adam = AdamState::new(cfg.adam.clone(), &params);

    let mut history = RunHistory {
        best_test_rel_l2: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5u64));
    let mut step = 0usize;
    let mut initial_loss: Option<f64> = None;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = lr_at(&sched, step);
            step += 1;
            let results: Vec<Result<(f64, Vec<Option<Tensor>>)>> = chunk
                .par_iter()
                .map(|&i| sample_pass(&params, &train_preps[i], i))
                .collect();
            // deterministic accumulation: fixed chunk order
            let mut batch_loss = 0.0;
            let mut acc: Option<Vec<Option<Tensor>>> = None;
            for r in results {
                let (l, gs) = r?;
                batch_loss += l;
                match &mut acc {
                    None => acc = Some(gs),
                    Some(a) => {
                        for (slot, g) in a.iter_mut().zip(gs) {
                            match (slot.as_mut(), g) {
                                (Some(t), Some(g)) => {
                                    let mut v = t.to_real_vec();
                                    for (x, y) in v.iter_mut().zip(g.to_real_vec()) {
                                        *x += y;
                                    }
                                    t.set_from_real_vec(&v);
                                }
                                (None, Some(g)) => *slot = Some(g),
                                _ => {}
                            }
                        }
                    }
                }
            }
            let bsz = chunk.len() as f64;
            epoch_loss += batch_loss;
            let mut grads = acc.unwrap();
            for g in grads.iter_mut().flatten() {
                let mut v = g.to_real_vec();
                v.iter_mut().for_each(|x| *x /= bsz);
                g.set_from_real_vec(&v);
            }
            adam.step(&mut params, &grads, lr);
        }
        let train_rel = epoch_loss / n as f64;
        let init = *initial_loss.get_or_insert(train_rel);
        if !train_rel.is_finite() || train_rel > 1e3 * init {
            history.skipped_steps = adam.skipped;
            return Err(Error::Diverged {
                epoch,
                loss: train_rel,
                initial: init,
                history: Box::new(history),
            });
        }
        let test_rel = mean_eval(&params, &test_preps)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_rel_l2: train_rel,
            test_rel_l2: test_rel,
            lr: lr_at(&sched, step.saturating_sub(1)),
            wall_secs: started.elapsed().as_secs_f64(),
        });
        if test_rel < history.best_test_rel_l2 {
            history.best_test_rel_l2 = test_rel;
            history.best_epoch = epoch;
            best = params.clone();
        }
        history.final_test_rel_l2 = test_rel;
    }
    history.skipped_steps = adam.skipped;
    Ok(TrainOutput {
        best,
        final_params: params,
        history,
    })
}

/// Evaluate a model on preprocessed bundles: mean, sorted per-sample errors
/// and per-label group means.
pub fn evaluate(params: &ModelParams, bundles: &[SampleBundle]) -> Result<EvalReport> {
    if bundles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    require_preprocessed(bundles)?;
    let preps = prepare_all(&params.config, bundles)?;
    let losses: Vec<Result<f64>> = preps
        .par_iter()
        .enumerate()
        .map(|(i, p)| eval_loss(params, p, i))
        .collect();
    let mut per_sample = Vec::with_capacity(preps.len());
    let mut total = 0.0;
    let mut group_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (i, l) in losses.into_iter().enumerate() {
        let l = l?;
        total += l;
        let label = preps[i].label.clone();
        let e = group_sums.entry(label.clone()).or_insert((0.0, 0));
        e.0 += l;
        e.1 += 1;
        per_sample.push(SampleEval {
            index: i,
            label,
            rel_l2: l,
        });
    }
    per_sample.sort_by(|a, b| a.rel_l2.partial_cmp(&b.rel_l2).unwrap());
    let groups = group_sums
        .into_iter()
        .map(|(k, (s, c))| (k, s / c as f64))
        .collect();
    Ok(EvalReport {
        mean_rel_l2: total / preps.len() as f64,
        per_sample,
        groups,
    })
}
