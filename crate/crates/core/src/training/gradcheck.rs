use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, record_loss, TrainingPair};
use crate::autodiff::Tape;
use crate::error::Result;
use crate::model::{ModelConfig, ModelParams, ParamId, ParamVars, PropagationPlan};

/// Analytic gradients smaller than this are compared by absolute error.
const ABS_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per parameter array (all of them if fewer).
    pub coords_per_param: usize,
    pub seed: u64,
    pub domain_weight: f64,
    /// Doubles the analytic gradient of this array before comparing.
    pub inject_fault: Option<ParamId>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            coords_per_param: 20,
            seed: 0,
            domain_weight: 1.0,
            inject_fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose ±eps probes straddle a LeakyReLU or max-pool kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.params.iter().all(|p| p.checked > 0)
    }
}

fn probe(
    params: &ModelParams,
    plan: &PropagationPlan,
    config: &ModelConfig,
    pairs: &[&TrainingPair],
    domain_weight: f64,
) -> Result<(f64, Vec<u32>)> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let loss = record_loss(&mut tape, plan, &pv, config, pairs, domain_weight)?;
    Ok((tape.scalar(loss), tape.kink_signature()))
}

/// Compares tape gradients with central differences on sampled coordinates
/// of every parameter array.
pub fn finite_difference_check(
    params: &ModelParams,
    plan: &PropagationPlan,
    config: &ModelConfig,
    pairs: &[&TrainingPair],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, mut grads) = loss_and_gradients(params, plan, config, pairs, opts.domain_weight)?;
    if let Some(id) = opts.inject_fault {
        grads.get_mut(id).mapv_inplace(|g| 2.0 * g);
    }
    let (_, base_sig) = probe(params, plan, config, pairs, opts.domain_weight)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        params: Vec::new(),
        max_rel_error: 0.0,
    };

    for id in ParamId::ALL {
        let len = params.get(id).len();
        let coords = if len <= opts.coords_per_param {
            (0..len).collect::<Vec<_>>()
        } else {
            sample(&mut rng, len, opts.coords_per_param).into_vec()
        };
        let mut check = ParamCheck {
            name: id.name().to_owned(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        let cols = params.get(id).ncols();
        for flat in coords {
            let at = [flat / cols, flat % cols];
            let mut shifted = params.clone();
            shifted.get_mut(id)[at] += opts.eps;
            let (plus, sig_p) = probe(&shifted, plan, config, pairs, opts.domain_weight)?;
            shifted.get_mut(id)[at] -= 2.0 * opts.eps;
            let (minus, sig_m) = probe(&shifted, plan, config, pairs, opts.domain_weight)?;
            if sig_p != base_sig || sig_m != base_sig {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = grads.get(id)[at];
            let err = if analytic.abs() < ABS_THRESHOLD {
                (analytic - numeric).abs()
            } else {
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
            };
            check.checked += 1;
            check.max_rel_error = check.max_rel_error.max(err);
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}

/// Small corpus, graph and parameters for gradient checks: 5 accounts,
/// 10 items per domain.
pub struct ToyProblem {
    pub graph: crate::graph::CdsGraph,
    pub pairs: Vec<TrainingPair>,
    pub params: ModelParams,
}

pub fn toy_problem(config: &ModelConfig, seed: u64) -> Result<ToyProblem> {
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::graph::{build_cds_graph, GraphOptions};

    config.validate()?;
    let corpus = generate_synthetic(&SyntheticSpec {
        n_accounts: 5,
        personas_per_account: 2,
        clusters_per_domain: 2,
        items_per_domain: 10,
        seq_len: 10,
        noise_rate: 0.2,
        rng_seed: seed,
        sequences_per_account: 1,
        item_skew: 1.0,
    })?;
    let graph = build_cds_graph(
        &corpus.sequences,
        corpus.vocab.sizes(),
        &GraphOptions::default(),
    )?;
    let pairs = super::training_pairs(&corpus.sequences);
    let params = ModelParams::init(config, graph.sizes(), &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ToyProblem {
        graph,
        pairs,
        params,
    })
}
