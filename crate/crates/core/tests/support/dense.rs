//! Dense matrix-form reference for message passing.
//!
//! Builds full adjacency masks and full cosine/attention matrices and sums
//! every message `γ(W·y + W'(y ⊙ x))` explicitly, one per edge. Shared by
//! the core integration tests and the acceptance suite.

#![allow(dead_code)]

use dagcn::autodiff::{Matrix, Tape};
use dagcn::data::{Domain, HybridSequence, ItemRef, VocabSizes};
use dagcn::graph::{build_cds_graph, CdsGraph, GraphOptions};
use dagcn::model::{
    propagate, AttentionMode, ModelConfig, ModelParams, ParamVars, Pooling, PropagationPlan,
};
use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cos(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let (nx, ny) = (x.dot(&x).sqrt(), y.dot(&y).sqrt());
    if nx < 1e-12 || ny < 1e-12 {
        0.0
    } else {
        (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0)
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

/// One round for a family of targets `x` over sources `y` with a dense mask.
fn dense_round(
    x: &Matrix,
    y: &Matrix,
    mask: &[Vec<bool>],
    wa: &Matrix,
    wb: &Matrix,
    cfg: &ModelConfig,
) -> Matrix {
    let n_t = x.nrows();
    let n_s = y.nrows();
    // full score matrix, masked afterwards
    let scores = Matrix::from_shape_fn((n_t, n_s), |(t, s)| cos(x.row(t), y.row(s)));
    let mut out = Matrix::zeros((n_t, wa.nrows()));
    for t in 0..n_t {
        let nbrs: Vec<usize> = (0..n_s).filter(|&s| mask[t][s]).collect();
        let s_self = cos(x.row(t), x.row(t));
        let (gam, g_self): (Vec<f64>, f64) = if !cfg.use_attention {
            let u = 1.0 / (nbrs.len() + 1) as f64;
            (vec![u; nbrs.len()], u)
        } else {
            match cfg.attention_mode {
                AttentionMode::Softmax => {
                    let z: f64 =
                        nbrs.iter().map(|&s| scores[[t, s]].exp()).sum::<f64>() + s_self.exp();
                    (
                        nbrs.iter().map(|&s| scores[[t, s]].exp() / z).collect(),
                        s_self.exp() / z,
                    )
                }
                AttentionMode::Literal => {
                    let mut z: f64 =
                        nbrs.iter().map(|&s| scores[[t, s]].exp()).sum::<f64>() + s_self;
                    if z <= 1e-12 {
                        z = 1.0;
                    }
                    (
                        nbrs.iter().map(|&s| scores[[t, s]].exp() / z).collect(),
                        s_self.exp() / z,
                    )
                }
            }
        };
        let xt = x.row(t);
        let mut acc: Array1<f64> = wa.dot(&xt) * g_self;
        for (k, &s) in nbrs.iter().enumerate() {
            let ys = y.row(s);
            let msg = wa.dot(&ys) + wb.dot(&(&ys * &xt));
            acc = acc + msg * gam[k];
        }
        out.row_mut(t)
            .assign(&acc.mapv(|v| leaky(v, cfg.leaky_slope)));
    }
    out
}

/// Dense propagation. Returns (latent users, stacked items).
pub fn dense_propagate(
    graph: &CdsGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> (Matrix, Matrix) {
    let sizes = graph.sizes();
    let (n, h, p, q) = (sizes.accounts, cfg.h, sizes.items_a, sizes.items_b);
    let n_items = p + q;
    let stacked = |d: Domain, i: usize| if d == Domain::A { i } else { p + i };

    let mut user_mask = vec![vec![false; n_items]; n * h];
    for k in 0..n {
        for d in Domain::BOTH {
            for &(i, _) in graph.user_neighbors(k, d).unwrap() {
                for j in 0..h {
                    user_mask[k * h + j][stacked(d, i)] = true;
                }
            }
        }
    }
    let mut item_mask = vec![vec![false; n * h + n_items]; n_items];
    for d in Domain::BOTH {
        for i in 0..sizes.items(d) {
            let nb = graph.item_neighbors(ItemRef::new(d, i)).unwrap();
            let t = stacked(d, i);
            for a in nb.accounts {
                for j in 0..h {
                    item_mask[t][a * h + j] = true;
                }
            }
            for u in nb.predecessors {
                item_mask[t][n * h + stacked(d, u)] = true;
            }
        }
    }

    let mut users = params.users.clone();
    let mut items = ndarray::concatenate![ndarray::Axis(0), params.item_a, params.item_b];
    for _ in 0..cfg.layers {
        let nu = dense_round(&users, &items, &user_mask, &params.w1, &params.w2, cfg);
        let src = ndarray::concatenate![ndarray::Axis(0), users, items];
        let ni = dense_round(&items, &src, &item_mask, &params.w3, &params.w4, cfg);
        users = nu;
        items = ni;
    }
    (users, items)
}

/// Sparse tape propagation. Returns (latent users, stacked items).
pub fn sparse_propagate(
    graph: &CdsGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> (Matrix, Matrix) {
    let plan = PropagationPlan::new(graph, cfg.h);
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let reps = propagate(&mut tape, &plan, &pv, cfg);
    (
        tape.value(reps.users).clone(),
        tape.value(reps.items).clone(),
    )
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub struct Case {
    pub graph: CdsGraph,
    pub corpus: Vec<HybridSequence>,
    pub params: ModelParams,
    pub config: ModelConfig,
}

/// Random corpus, graph, config and parameters within the stated bounds
/// (≤ 20 accounts, ≤ 30 items per domain, h ≤ 3, layers ≤ 2).
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = VocabSizes {
        accounts: rng.random_range(1..=20),
        items_a: rng.random_range(1..=30),
        items_b: rng.random_range(1..=30),
    };
    let n_seq = rng.random_range(1..=2 * sizes.accounts);
    let corpus: Vec<HybridSequence> = (0..n_seq)
        .map(|_| {
            let len = rng.random_range(2..=12);
            let events = (0..len)
                .map(|_| {
                    let d = if rng.random_bool(0.5) {
                        Domain::A
                    } else {
                        Domain::B
                    };
                    ItemRef::new(d, rng.random_range(0..sizes.items(d)))
                })
                .collect();
            HybridSequence::new(rng.random_range(0..sizes.accounts), events)
        })
        .collect();
    let opts = GraphOptions {
        include_sequential_edges: rng.random_bool(0.8),
        min_edge_count: 1,
    };
    let graph = build_cds_graph(&corpus, sizes, &opts).unwrap();
    let d = rng.random_range(2..=6);
    let layers = rng.random_range(1..=2);
    let config = ModelConfig {
        d,
        d_prime: if layers == 1 {
            rng.random_range(2..=6)
        } else {
            d
        },
        h: rng.random_range(1..=3),
        layers,
        attention_mode: if rng.random_bool(0.5) {
            AttentionMode::Softmax
        } else {
            AttentionMode::Literal
        },
        use_attention: rng.random_bool(0.8),
        seq_pooling: Pooling::Mean,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config, sizes, &mut rng);
    Case {
        graph,
        corpus,
        params,
        config,
    }
}
