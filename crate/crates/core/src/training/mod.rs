//! Joint two-domain training: batch loss on the tape, clipping, Adam and
//! validation-driven early stopping.

mod gradcheck;
mod init;
mod loss;
mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::gradcheck::{
    finite_difference_check, toy_problem, GradCheckOptions, GradCheckReport, ParamCheck, ToyProblem,
};
pub use self::init::{xavier_bound, xavier_init};
pub use self::loss::{cross_entropy, joint_loss};
pub use self::optim::{adam_step, clip_gradients, AdamHyper, AdamState};
use crate::autodiff::{Tape, Var};
use crate::data::{Domain, HybridSequence};
use crate::error::{Error, Result};
use crate::eval::{leave_last_out, rank_targets};
use crate::graph::CdsGraph;
use crate::model::{
    propagate, score_batch, Gradients, ModelConfig, ModelParams, ParamId, ParamVars,
    PropagationPlan, ScoringBatch,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    pub max_epochs: usize,
    /// Epochs without a validation MRR@5 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Weight of the domain-B term in the joint loss.
    pub domain_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 128,
            clip_min: -5.0,
            clip_max: 5.0,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            domain_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN bounds too
        if !(self.clip_min < self.clip_max) {
            return bad(format!(
                "clip range [{}, {}] is empty",
                self.clip_min, self.clip_max
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.domain_weight >= 0.0 && self.domain_weight.is_finite()) {
            return bad(format!(
                "domain_weight must be >= 0, got {}",
                self.domain_weight
            ));
        }
        Ok(())
    }
}

/// Next item of one domain with its same-domain history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Target {
    pub history: Vec<usize>,
    pub item: usize,
}

/// The leave-last-out example of one training sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub account: usize,
    pub targets: [Option<Target>; 2],
}

/// One pair per sequence that has a usable target in at least one domain.
pub fn training_pairs(seqs: &[HybridSequence]) -> Vec<TrainingPair> {
    seqs.iter()
        .filter_map(|s| {
            let targets = Domain::BOTH.map(|d| {
                let (hist, target) = leave_last_out(s, d)?;
                let history: Vec<usize> = hist
                    .iter()
                    .filter(|e| e.domain == d)
                    .map(|e| e.index)
                    .collect();
                (!history.is_empty()).then_some(Target {
                    history,
                    item: target.index,
                })
            });
            targets.iter().any(Option::is_some).then_some(TrainingPair {
                account: s.account,
                targets,
            })
        })
        .collect()
}

/// Records the mean joint loss of `pairs` and returns its node.
pub fn record_loss(
    tape: &mut Tape,
    plan: &PropagationPlan,
    pv: &ParamVars,
    config: &ModelConfig,
    pairs: &[&TrainingPair],
    domain_weight: f64,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Data("no training signal".into()));
    }
    let reps = propagate(tape, plan, pv, config);
    let mut total: Option<Var> = None;
    for d in Domain::BOTH {
        let mut batch = ScoringBatch::new(d);
        let mut targets = Vec::new();
        for p in pairs {
            if let Some(t) = &p.targets[d.index()] {
                batch.push(p.account, t.history.clone());
                targets.push(t.item);
            }
        }
        if batch.is_empty() {
            continue;
        }
        let logits = score_batch(tape, plan, pv, &reps, config, &batch);
        let mut ce = tape.softmax_xent(logits, targets.into());
        if d == Domain::B && domain_weight != 1.0 {
            ce = tape.scale(ce, domain_weight);
        }
        total = Some(match total {
            Some(t) => tape.add(t, ce),
            None => ce,
        });
    }
    let total = total.ok_or_else(|| Error::Data("no training signal".into()))?;
    Ok(tape.scale(total, 1.0 / pairs.len() as f64))
}

/// Mean joint loss of a batch and its exact gradient for every parameter.
pub fn loss_and_gradients(
    params: &ModelParams,
    plan: &PropagationPlan,
    config: &ModelConfig,
    pairs: &[&TrainingPair],
    domain_weight: f64,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let loss = record_loss(&mut tape, plan, &pv, config, pairs, domain_weight)?;
    let mut raw = tape.backward(loss);
    let mut grads = Gradients::zeros_like(params);
    for id in ParamId::ALL {
        if let Some(g) = raw.take(pv.get(id)) {
            *grads.get_mut(id) = g;
        }
    }
    Ok((tape.scalar(loss), grads))
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mrr5: f64,
    pub val_recall5: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// 1-based epoch the parameters come from.
    pub best_epoch: usize,
    pub best_val_mrr5: f64,
}

pub fn train(
    train_seqs: &[HybridSequence],
    valid_seqs: &[HybridSequence],
    graph: &CdsGraph,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(train_seqs, valid_seqs, graph, model, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with<F: FnMut(&EpochLog)>(
    train_seqs: &[HybridSequence],
    valid_seqs: &[HybridSequence],
    graph: &CdsGraph,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if train_seqs.is_empty() || valid_seqs.is_empty() {
        return Err(Error::Data(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let pairs = training_pairs(train_seqs);
    if pairs.is_empty() {
        return Err(Error::Data("no training signal".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model, graph.sizes(), &mut rng);
    let plan = PropagationPlan::new(graph, model.h);
    let mut adam = AdamState::new(&params);

    let mut best = params.clone();
    let mut best_mrr = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, mut grads) =
                loss_and_gradients(&params, &plan, model, &batch, cfg.domain_weight)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * batch.len() as f64;
            clip_gradients(&mut grads, cfg.clip_min, cfg.clip_max);
            adam_step(&mut params, &grads, &mut adam, cfg.lr);
        }

        let val = rank_targets(&params, model, &plan, valid_seqs)
            .report()
            .pooled();
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / pairs.len() as f64,
            val_mrr5: val.mrr5,
            val_recall5: val.recall5,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        if val.mrr5 > best_mrr {
            best_mrr = val.mrr5;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best,
        log,
        best_epoch,
        best_val_mrr5: best_mrr,
    })
}
