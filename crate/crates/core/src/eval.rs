//! Leave-last-out next-item evaluation.

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::data::{Domain, HybridSequence, ItemRef, VocabSizes};
use crate::error::{Error, Result};
use crate::graph::CdsGraph;
use crate::model::{
    propagate, score_batch, Checkpoint, ModelConfig, ModelParams, ParamVars, PropagationPlan,
    ScoringBatch,
};

/// Cutoffs reported by [`MetricsReport`].
pub const CUTOFFS: [usize; 2] = [5, 20];

/// Rows scored per tape when evaluating large sets.
const EVAL_CHUNK: usize = 1024;

/// Splits off the last event of `domain` as the target. The history is
/// every event (of either domain) strictly before it.
pub fn leave_last_out(seq: &HybridSequence, domain: Domain) -> Option<(&[ItemRef], ItemRef)> {
    let pos = seq.events.iter().rposition(|e| e.domain == domain)?;
    if pos == 0 {
        return None;
    }
    Some((&seq.events[..pos], seq.events[pos]))
}

/// 1-based rank of `target`; ties go to the lower index.
pub fn rank_of_target(scores: ArrayView1<f64>, target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < target))
        .count()
}

pub fn mrr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub mrr5: f64,
    pub mrr20: f64,
    pub recall5: f64,
    pub recall20: f64,
    pub n: usize,
}

impl DomainMetrics {
    /// Means over a list of target ranks.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len();
        if n == 0 {
            return DomainMetrics::default();
        }
        let mean = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n as f64;
        DomainMetrics {
            mrr5: mean(&|r| mrr_at_k(r, 5)),
            mrr20: mean(&|r| mrr_at_k(r, 20)),
            recall5: mean(&|r| recall_at_k(r, 5)),
            recall20: mean(&|r| recall_at_k(r, 20)),
            n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// SHA-256 of the checkpoint bytes.
    pub checkpoint: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Per-domain MRR@K / Recall@K.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "domain_A")]
    pub domain_a: DomainMetrics,
    #[serde(rename = "domain_B")]
    pub domain_b: DomainMetrics,
    pub meta: ReportMeta,
}

impl MetricsReport {
    pub fn domain(&self, d: Domain) -> &DomainMetrics {
        match d {
            Domain::A => &self.domain_a,
            Domain::B => &self.domain_b,
        }
    }

    /// Target-weighted mean over both domains of (mrr5, recall5, mrr20, recall20).
    pub fn pooled(&self) -> DomainMetrics {
        let (a, b) = (&self.domain_a, &self.domain_b);
        let n = a.n + b.n;
        if n == 0 {
            return DomainMetrics::default();
        }
        let mix = |x: f64, y: f64| (x * a.n as f64 + y * b.n as f64) / n as f64;
        DomainMetrics {
            mrr5: mix(a.mrr5, b.mrr5),
            mrr20: mix(a.mrr20, b.mrr20),
            recall5: mix(a.recall5, b.recall5),
            recall20: mix(a.recall20, b.recall20),
            n,
        }
    }
}

/// Ranks of every evaluated target, per domain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankSet {
    pub ranks: [Vec<usize>; 2],
}

impl RankSet {
    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            domain_a: DomainMetrics::from_ranks(&self.ranks[0]),
            domain_b: DomainMetrics::from_ranks(&self.ranks[1]),
            meta: ReportMeta::default(),
        }
    }
}

/// Histories restricted to the queried domain plus the target, for every
/// sequence and domain that has both.
pub(crate) fn domain_examples(
    seqs: &[HybridSequence],
    domain: Domain,
) -> Vec<(usize, Vec<usize>, usize)> {
    seqs.iter()
        .filter_map(|s| {
            let (hist, target) = leave_last_out(s, domain)?;
            let items: Vec<usize> = hist
                .iter()
                .filter(|e| e.domain == domain)
                .map(|e| e.index)
                .collect();
            // no same-domain context: nothing to pool, the domain is skipped
            (!items.is_empty()).then_some((s.account, items, target.index))
        })
        .collect()
}

/// Scores every leave-last-out target of `seqs` with one propagation over
/// the plan's graph.
pub fn rank_targets(
    params: &ModelParams,
    config: &ModelConfig,
    plan: &PropagationPlan,
    seqs: &[HybridSequence],
) -> RankSet {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let reps = propagate(&mut tape, plan, &pv, config);
    let mut out = RankSet::default();
    for d in Domain::BOTH {
        let examples = domain_examples(seqs, d);
        for chunk in examples.chunks(EVAL_CHUNK) {
            let mut batch = ScoringBatch::new(d);
            for (acct, hist, _) in chunk {
                batch.push(*acct, hist.clone());
            }
            let logits = score_batch(&mut tape, plan, &pv, &reps, config, &batch);
            let logits = tape.value(logits);
            let ranks: Vec<usize> = chunk
                .par_iter()
                .enumerate()
                .map(|(r, (_, _, target))| rank_of_target(logits.row(r), *target))
                .collect();
            out.ranks[d.index()].extend(ranks);
        }
    }
    out
}

/// Short stable hash of a model configuration.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..6])
}

pub fn checkpoint_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Evaluates a checkpoint on held-out sequences using the training graph.
pub fn evaluate(
    ckpt: &Checkpoint,
    graph: &CdsGraph,
    test: &[HybridSequence],
) -> Result<MetricsReport> {
    check_sizes(ckpt.meta.sizes, graph.sizes())?;
    if test.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    for s in test {
        check_sequence(s, graph.sizes())?;
    }
    let plan = PropagationPlan::new(graph, ckpt.meta.config.h);
    let ranks = rank_targets(&ckpt.params, &ckpt.meta.config, &plan, test);
    if ranks.ranks.iter().all(Vec::is_empty) {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut report = ranks.report();
    report.meta = ReportMeta {
        checkpoint: checkpoint_digest(&ckpt.to_bytes()),
        seed: ckpt.meta.seed,
        config_hash: config_hash(&ckpt.meta.config),
    };
    Ok(report)
}

fn check_sizes(expected: VocabSizes, actual: VocabSizes) -> Result<()> {
    for (what, e, a) in [
        ("accounts", expected.accounts, actual.accounts),
        ("domain A items", expected.items_a, actual.items_a),
        ("domain B items", expected.items_b, actual.items_b),
    ] {
        if e != a {
            return Err(Error::VocabMismatch {
                what,
                expected: e,
                actual: a,
            });
        }
    }
    Ok(())
}

fn check_sequence(s: &HybridSequence, sizes: VocabSizes) -> Result<()> {
    if s.account >= sizes.accounts {
        return Err(Error::Index {
            what: "account",
            index: s.account,
            size: sizes.accounts,
        });
    }
    for e in &s.events {
        if e.index >= sizes.items(e.domain) {
            return Err(Error::Index {
                what: "item",
                index: e.index,
                size: sizes.items(e.domain),
            });
        }
    }
    Ok(())
}

/// Items ranked by training frequency, ties by ascending index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Popularity {
    /// Per domain, item indices best-first.
    pub ranking: [Vec<usize>; 2],
}

pub fn popularity_baseline(train: &[HybridSequence], sizes: VocabSizes) -> Result<Popularity> {
    if train.is_empty() {
        return Err(Error::Data("no sequences".into()));
    }
    let ranking = Domain::BOTH.map(|d| {
        let mut counts = vec![0usize; sizes.items(d)];
        for s in train {
            for i in s.domain_items(d) {
                counts[i] += 1;
            }
        }
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        order
    });
    Ok(Popularity { ranking })
}

impl Popularity {
    pub fn rank_targets(&self, seqs: &[HybridSequence]) -> RankSet {
        let mut out = RankSet::default();
        for d in Domain::BOTH {
            let mut pos = vec![0usize; self.ranking[d.index()].len()];
            for (r, &i) in self.ranking[d.index()].iter().enumerate() {
                pos[i] = r + 1;
            }
            out.ranks[d.index()] = domain_examples(seqs, d)
                .into_iter()
                .map(|(_, _, t)| pos[t])
                .collect();
        }
        out
    }
}
