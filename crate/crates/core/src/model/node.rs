//! Single-node forms of the message-passing equations.
//!
//! These compute one node at a time from plain vectors and mirror the
//! batched tape implementation in `forward`. They are used for inspection
//! and as an independent reference in tests.

use ndarray::{Array1, ArrayView1, ArrayView2};

use super::{AttentionMode, ModelConfig, ModelParams, Pooling};
use crate::autodiff::ZERO_NORM;

/// Cosine similarity clamped to `[-1, 1]`; zero when either norm is below
/// `1e-12`.
pub fn cosine_similarity(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let nx = x.dot(&x).sqrt();
    let ny = y.dot(&y).sqrt();
    if nx < ZERO_NORM || ny < ZERO_NORM {
        return 0.0;
    }
    (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0)
}

/// Attention weights of a target node, aligned with its neighbor lists.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub neighbors: Vec<f64>,
    pub self_weight: f64,
}

/// Turns neighbor scores and the self score into weights.
pub fn normalize(scores: &[f64], self_score: f64, config: &ModelConfig) -> AttentionWeights {
    if !config.use_attention {
        let w = 1.0 / (scores.len() + 1) as f64;
        return AttentionWeights {
            neighbors: vec![w; scores.len()],
            self_weight: w,
        };
    }
    match config.attention_mode {
        AttentionMode::Softmax => {
            let m = scores.iter().copied().fold(self_score, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let es = (self_score - m).exp();
            let z = ex.iter().sum::<f64>() + es;
            AttentionWeights {
                neighbors: ex.iter().map(|e| e / z).collect(),
                self_weight: es / z,
            }
        }
        AttentionMode::Literal => {
            let mut denom = scores.iter().map(|s| s.exp()).sum::<f64>() + self_score;
            if denom <= 1e-12 {
                denom = 1.0;
            }
            AttentionWeights {
                neighbors: scores.iter().map(|s| s.exp() / denom).collect(),
                self_weight: self_score.exp() / denom,
            }
        }
    }
}

/// Weights of latent user `j` of `account` over its A and B item neighbors
/// (in that order) and itself.
pub fn attention_user(
    params: &ModelParams,
    config: &ModelConfig,
    neighbors_a: &[usize],
    neighbors_b: &[usize],
    account: usize,
    j: usize,
) -> AttentionWeights {
    let u = params.latent_user(config.h, account, j);
    let scores: Vec<f64> = neighbors_a
        .iter()
        .map(|&i| cosine_similarity(u, params.item_a.row(i)))
        .chain(
            neighbors_b
                .iter()
                .map(|&i| cosine_similarity(u, params.item_b.row(i))),
        )
        .collect();
    normalize(&scores, cosine_similarity(u, u), config)
}

/// `γ(W₁·e_item + W₂(e_item ⊙ e_user))`
pub fn message_user_from_item(
    e_item: ArrayView1<f64>,
    e_user: ArrayView1<f64>,
    w1: ArrayView2<f64>,
    w2: ArrayView2<f64>,
    gamma: f64,
) -> Array1<f64> {
    (w1.dot(&e_item) + w2.dot(&(&e_item * &e_user))) * gamma
}

/// `γ·W₁·e_user`
pub fn message_self(e_user: ArrayView1<f64>, w1: ArrayView2<f64>, gamma: f64) -> Array1<f64> {
    w1.dot(&e_user) * gamma
}

pub fn leaky_relu(x: Array1<f64>, slope: f64) -> Array1<f64> {
    x.mapv_into(|v| if v >= 0.0 { v } else { slope * v })
}

/// LeakyReLU of the summed messages.
pub fn aggregate_user(messages: &[Array1<f64>], slope: f64) -> Array1<f64> {
    let mut sum = messages[0].clone();
    for m in &messages[1..] {
        sum += m;
    }
    leaky_relu(sum, slope)
}

/// Item update from neighboring latent users and predecessor items:
/// each source sends `γ(W₃·e_src + W₄(e_src ⊙ e_item))`, the item itself
/// `γ_self·W₃·e_item`.
pub fn update_item(
    e_item: ArrayView1<f64>,
    users: &[ArrayView1<f64>],
    predecessors: &[ArrayView1<f64>],
    w3: ArrayView2<f64>,
    w4: ArrayView2<f64>,
    config: &ModelConfig,
) -> Array1<f64> {
    let sources: Vec<ArrayView1<f64>> = users.iter().chain(predecessors).copied().collect();
    let scores: Vec<f64> = sources
        .iter()
        .map(|s| cosine_similarity(e_item, *s))
        .collect();
    let w = normalize(&scores, cosine_similarity(e_item, e_item), config);
    let mut messages = vec![message_self(e_item, w3, w.self_weight)];
    for (s, g) in sources.iter().zip(&w.neighbors) {
        messages.push(message_user_from_item(*s, e_item, w3, w4, *g));
    }
    aggregate_user(&messages, config.leaky_slope)
}

/// Mean of an account's latent-user vectors.
pub fn account_embedding(latent: &[ArrayView1<f64>]) -> Array1<f64> {
    let mut out = latent[0].to_owned();
    for v in &latent[1..] {
        out += v;
    }
    out / latent.len() as f64
}

/// Pools history item representations and appends the account
/// representation. `None` when the history is empty.
pub fn sequence_embedding(
    history: &[ArrayView1<f64>],
    account: ArrayView1<f64>,
    pooling: Pooling,
) -> Option<Array1<f64>> {
    let first = history.first()?;
    let mut pooled = first.to_owned();
    for v in &history[1..] {
        match pooling {
            Pooling::Mean => pooled += v,
            Pooling::Max => pooled.zip_mut_with(v, |a, &b| *a = a.max(b)),
        }
    }
    if pooling == Pooling::Mean {
        pooled /= history.len() as f64;
    }
    Some(ndarray::concatenate![ndarray::Axis(0), pooled, account])
}

/// Logits over a domain vocabulary: `E · (W_out · seq)`.
pub fn score_domain(
    seq_emb: ArrayView1<f64>,
    items: ArrayView2<f64>,
    w_out: ArrayView2<f64>,
) -> Array1<f64> {
    items.dot(&w_out.dot(&seq_emb))
}

/// Softmax of a logit vector.
pub fn probabilities(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|x| (x - m).exp());
    let z = e.sum();
    e / z
}
