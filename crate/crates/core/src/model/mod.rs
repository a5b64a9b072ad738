//! Latent-user and item representations over the CDS graph.

mod checkpoint;
mod forward;
pub mod node;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use self::forward::{propagate, score_batch, ParamVars, PropagationPlan, Reps, ScoringBatch};
pub use crate::autodiff::{AttentionMode, Matrix, Pooling};
use crate::data::{Domain, VocabSizes};
use crate::error::{Error, Result};
use crate::training::xavier_init;

/// Allowed number of latent users per account.
pub const H_RANGE: std::ops::RangeInclusive<usize> = 1..=5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Projection output width of the message weights.
    pub d_prime: usize,
    /// Latent users per account.
    pub h: usize,
    pub leaky_slope: f64,
    pub attention_mode: AttentionMode,
    /// Propagation rounds.
    pub layers: usize,
    /// When off every neighbor (and self) gets the same weight.
    pub use_attention: bool,
    pub seq_pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 100,
            d_prime: 100,
            h: 2,
            leaky_slope: 0.2,
            attention_mode: AttentionMode::Softmax,
            layers: 1,
            use_attention: true,
            seq_pooling: Pooling::Mean,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d_prime == 0 {
            return bad("d and d_prime must be at least 1".into());
        }
        if !H_RANGE.contains(&self.h) {
            return bad(format!(
                "h must be in [{}, {}], got {}",
                H_RANGE.start(),
                H_RANGE.end(),
                self.h
            ));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.layers > 1 && self.d_prime != self.d {
            return bad(format!(
                "stacking {} layers needs d_prime == d (got {} vs {})",
                self.layers, self.d_prime, self.d
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!(
                "leaky_slope must be in (0,1), got {}",
                self.leaky_slope
            ));
        }
        Ok(())
    }

    /// Width of propagated node representations.
    pub fn rep_width(&self) -> usize {
        if self.layers == 0 {
            self.d
        } else {
            self.d_prime
        }
    }

    /// Width of a sequence embedding (pooled items ++ account).
    pub fn seq_width(&self) -> usize {
        2 * self.rep_width()
    }
}

/// Identifies one trainable array. Declaration order is checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    ItemA,
    ItemB,
    Users,
    W1,
    W2,
    W3,
    W4,
    OutA,
    OutB,
}

impl ParamId {
    pub const ALL: [ParamId; 9] = [
        ParamId::ItemA,
        ParamId::ItemB,
        ParamId::Users,
        ParamId::W1,
        ParamId::W2,
        ParamId::W3,
        ParamId::W4,
        ParamId::OutA,
        ParamId::OutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::ItemA => "E_A",
            ParamId::ItemB => "E_B",
            ParamId::Users => "E_U",
            ParamId::W1 => "W1",
            ParamId::W2 => "W2",
            ParamId::W3 => "W3",
            ParamId::W4 => "W4",
            ParamId::OutA => "W_out_A",
            ParamId::OutB => "W_out_B",
        }
    }

    pub fn out(domain: Domain) -> ParamId {
        match domain {
            Domain::A => ParamId::OutA,
            Domain::B => ParamId::OutB,
        }
    }

    pub fn items(domain: Domain) -> ParamId {
        match domain {
            Domain::A => ParamId::ItemA,
            Domain::B => ParamId::ItemB,
        }
    }
}

/// All trainable arrays.
///
/// Latent users are stored flat: row `k * h + j` is latent user `j` of
/// account `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub item_a: Matrix,
    pub item_b: Matrix,
    pub users: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub w4: Matrix,
    pub out_a: Matrix,
    pub out_b: Matrix,
}

impl ModelParams {
    /// Xavier-uniform initialization of every array.
    pub fn init<R: Rng>(config: &ModelConfig, sizes: VocabSizes, rng: &mut R) -> Self {
        let (d, dp, h) = (config.d, config.d_prime, config.h);
        ModelParams {
            item_a: xavier_init(sizes.items_a, d, rng),
            item_b: xavier_init(sizes.items_b, d, rng),
            users: xavier_init(sizes.accounts * h, d, rng),
            w1: xavier_init(dp, d, rng),
            w2: xavier_init(dp, d, rng),
            w3: xavier_init(dp, d, rng),
            w4: xavier_init(dp, d, rng),
            out_a: xavier_init(d, config.seq_width(), rng),
            out_b: xavier_init(d, config.seq_width(), rng),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        match id {
            ParamId::ItemA => &self.item_a,
            ParamId::ItemB => &self.item_b,
            ParamId::Users => &self.users,
            ParamId::W1 => &self.w1,
            ParamId::W2 => &self.w2,
            ParamId::W3 => &self.w3,
            ParamId::W4 => &self.w4,
            ParamId::OutA => &self.out_a,
            ParamId::OutB => &self.out_b,
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        match id {
            ParamId::ItemA => &mut self.item_a,
            ParamId::ItemB => &mut self.item_b,
            ParamId::Users => &mut self.users,
            ParamId::W1 => &mut self.w1,
            ParamId::W2 => &mut self.w2,
            ParamId::W3 => &mut self.w3,
            ParamId::W4 => &mut self.w4,
            ParamId::OutA => &mut self.out_a,
            ParamId::OutB => &mut self.out_b,
        }
    }

    pub fn items(&self, domain: Domain) -> &Matrix {
        self.get(ParamId::items(domain))
    }

    pub fn latent_user(&self, h: usize, account: usize, j: usize) -> ndarray::ArrayView1<'_, f64> {
        self.users.row(account * h + j)
    }

    pub fn all_finite(&self) -> bool {
        ParamId::ALL
            .iter()
            .all(|&id| self.get(id).iter().all(|x| x.is_finite()))
    }

    /// Verifies every array has the shape implied by `config` and `sizes`.
    pub fn check_shapes(&self, config: &ModelConfig, sizes: VocabSizes) -> Result<()> {
        let (d, dp, h) = (config.d, config.d_prime, config.h);
        let expect = [
            (ParamId::ItemA, (sizes.items_a, d)),
            (ParamId::ItemB, (sizes.items_b, d)),
            (ParamId::Users, (sizes.accounts * h, d)),
            (ParamId::W1, (dp, d)),
            (ParamId::W2, (dp, d)),
            (ParamId::W3, (dp, d)),
            (ParamId::W4, (dp, d)),
            (ParamId::OutA, (d, config.seq_width())),
            (ParamId::OutB, (d, config.seq_width())),
        ];
        for (id, shape) in expect {
            let got = self.get(id).dim();
            if got != shape {
                return Err(Error::Config(format!(
                    "{} has shape {:?}, expected {:?}",
                    id.name(),
                    got,
                    shape
                )));
            }
        }
        Ok(())
    }
}

/// One gradient array per parameter, same shapes as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub ModelParams);

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let mut g = params.clone();
        for id in ParamId::ALL {
            g.get_mut(id).fill(0.0);
        }
        Gradients(g)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        self.0.get(id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        self.0.get_mut(id)
    }
}
