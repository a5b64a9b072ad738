use std::sync::Arc;

use crate::autodiff::{Matrix, Segments, Tape, Var};
use crate::data::{Domain, ItemRef, VocabSizes};
use crate::graph::CdsGraph;

use super::{ModelConfig, ModelParams, ParamId};

/// Neighborhood layout of one family of target nodes.
#[derive(Clone, Debug)]
struct ConvLayout {
    seg: Arc<Segments>,
    /// target id of every neighbor entry
    owners: Arc<[usize]>,
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
    /// weights used when attention is disabled
    uniform: Matrix,
}

impl ConvLayout {
    fn new(seg: Segments) -> Self {
        let n_t = seg.n_segments();
        let mut uniform = Matrix::zeros((seg.n_entries() + n_t, 1));
        for t in 0..n_t {
            let w = 1.0 / (seg.range(t).len() + 1) as f64;
            for e in seg.range(t) {
                uniform[[e, 0]] = w;
            }
            uniform[[seg.n_entries() + t, 0]] = w;
        }
        ConvLayout {
            owners: seg.owners().into(),
            sources: seg.index.clone().into(),
            targets: (0..n_t).collect::<Vec<_>>().into(),
            seg: Arc::new(seg),
            uniform,
        }
    }
}

/// Static message-passing structure derived from a graph.
///
/// Items are addressed in a stacked table: A items first, then B items
/// offset by `|A|`. Latent-user rows are `account * h + j`.
#[derive(Clone, Debug)]
pub struct PropagationPlan {
    sizes: VocabSizes,
    h: usize,
    /// latent users <- items of the account in both domains
    user: ConvLayout,
    /// items <- latent users of adjacent accounts and same-domain predecessors,
    /// sources addressed in the stacked `[users; items]` table
    item: ConvLayout,
}

impl PropagationPlan {
    pub fn new(graph: &CdsGraph, h: usize) -> Self {
        let sizes = graph.sizes();
        let p = sizes.items_a;
        let offset = |d: Domain| if d == Domain::A { 0 } else { p };

        let user = Segments::from_lists((0..sizes.accounts).flat_map(|k| {
            let list: Vec<usize> = Domain::BOTH
                .iter()
                .flat_map(|&d| {
                    graph
                        .user_neighbors(k, d)
                        .expect("account in range")
                        .iter()
                        .map(move |&(i, _)| offset(d) + i)
                })
                .collect();
            std::iter::repeat_n(list, h)
        }));

        let n_users = sizes.accounts * h;
        let item = Segments::from_lists(Domain::BOTH.iter().flat_map(|&d| {
            (0..sizes.items(d)).map(move |i| {
                let it = ItemRef::new(d, i);
                let mut list: Vec<usize> = graph
                    .item_accounts(it)
                    .iter()
                    .flat_map(|&a| (0..h).map(move |j| a * h + j))
                    .collect();
                list.extend(
                    graph
                        .predecessors(it)
                        .iter()
                        .map(|&(u, _)| n_users + offset(d) + u),
                );
                list
            })
        }));

        PropagationPlan {
            sizes,
            h,
            user: ConvLayout::new(user),
            item: ConvLayout::new(item),
        }
    }

    pub fn sizes(&self) -> VocabSizes {
        self.sizes
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Stacked-table row of an item.
    pub fn stacked(&self, item: ItemRef) -> usize {
        match item.domain {
            Domain::A => item.index,
            Domain::B => self.sizes.items_a + item.index,
        }
    }
}

/// Tape handles of every parameter array.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    vars: [Var; 9],
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        ParamVars {
            vars: ParamId::ALL.map(|id| tape.leaf(params.get(id).clone())),
        }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id as usize]
    }
}

/// Propagated node representations on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Reps {
    /// `n·h × d′` latent users
    pub users: Var,
    /// `(|A|+|B|) × d′` stacked items
    pub items: Var,
    /// `n × d′` merged accounts (mean over latent users)
    pub accounts: Var,
}

/// One attention-weighted message-passing step for a family of targets:
///
/// `out_t = LeakyReLU(W_a(γ_self·x_t + Σ γ_e·y_e) + W_b(x_t ⊙ Σ γ_e·y_e))`
///
/// which equals summing `γ_e(W_a·y_e + W_b(y_e ⊙ x_t))` over neighbors plus
/// `γ_self·W_a·x_t`, with the projections pulled out of the sums.
fn conv(
    tape: &mut Tape,
    x: Var,
    y: Var,
    layout: &ConvLayout,
    wa: Var,
    wb: Var,
    config: &ModelConfig,
) -> Var {
    let seg = &layout.seg;
    let weights = if config.use_attention {
        let nb = tape.pair_cosine(x, y, layout.owners.clone(), layout.sources.clone());
        let own = tape.pair_cosine(x, x, layout.targets.clone(), layout.targets.clone());
        let scores = tape.concat_rows(nb, own);
        tape.attention(scores, seg.clone(), config.attention_mode)
    } else {
        tape.leaf(layout.uniform.clone())
    };
    let w_nb = tape.slice_rows(weights, 0, seg.n_entries());
    let w_self = tape.slice_rows(weights, seg.n_entries(), seg.n_segments());
    let agg = tape.segment_sum(w_nb, y, seg.clone());
    let own = tape.row_scale(x, w_self);
    let linear = tape.add(own, agg);
    let inter = tape.mul(agg, x);
    let pa = tape.matmul_t(linear, wa);
    let pb = tape.matmul_t(inter, wb);
    let pre = tape.add(pa, pb);
    tape.leaky_relu(pre, config.leaky_slope)
}

/// Runs `config.layers` simultaneous update rounds over all latent users and
/// items. Every round reads only the previous round's representations.
pub fn propagate(
    tape: &mut Tape,
    plan: &PropagationPlan,
    pv: &ParamVars,
    config: &ModelConfig,
) -> Reps {
    assert_eq!(plan.h, config.h, "plan built for a different h");
    let mut users = pv.get(ParamId::Users);
    let mut items = tape.concat_rows(pv.get(ParamId::ItemA), pv.get(ParamId::ItemB));
    for _ in 0..config.layers {
        let next_users = conv(
            tape,
            users,
            items,
            &plan.user,
            pv.get(ParamId::W1),
            pv.get(ParamId::W2),
            config,
        );
        let sources = tape.concat_rows(users, items);
        let next_items = conv(
            tape,
            items,
            sources,
            &plan.item,
            pv.get(ParamId::W3),
            pv.get(ParamId::W4),
            config,
        );
        users = next_users;
        items = next_items;
    }
    let accounts = tape.group_mean(users, config.h);
    Reps {
        users,
        items,
        accounts,
    }
}

/// Sequence contexts to score against one domain's vocabulary.
#[derive(Clone, Debug)]
pub struct ScoringBatch {
    pub domain: Domain,
    pub accounts: Vec<usize>,
    /// Per example, the history items of `domain` (domain-local indices).
    /// Every list must be non-empty.
    pub histories: Vec<Vec<usize>>,
}

impl ScoringBatch {
    pub fn new(domain: Domain) -> Self {
        ScoringBatch {
            domain,
            accounts: Vec::new(),
            histories: Vec::new(),
        }
    }

    pub fn push(&mut self, account: usize, history: Vec<usize>) {
        assert!(!history.is_empty(), "empty history has no context");
        self.accounts.push(account);
        self.histories.push(history);
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }
}

/// Logits (`batch × |domain|`) for a batch: pooled history representation
/// concatenated with the account representation, projected by `W_out` and
/// scored against the raw item embeddings of the domain.
pub fn score_batch(
    tape: &mut Tape,
    plan: &PropagationPlan,
    pv: &ParamVars,
    reps: &Reps,
    config: &ModelConfig,
    batch: &ScoringBatch,
) -> Var {
    let d = batch.domain;
    let seg = Segments::from_lists(batch.histories.iter().map(|h| {
        h.iter()
            .map(move |&i| plan.stacked(ItemRef::new(d, i)))
            .collect::<Vec<_>>()
    }));
    let pooled = tape.pool(reps.items, Arc::new(seg), config.seq_pooling);
    let acct = tape.gather(reps.accounts, batch.accounts.clone().into());
    let seq = tape.concat_cols(pooled, acct);
    let proj = tape.matmul_t(seq, pv.get(ParamId::out(d)));
    tape.matmul_t(proj, pv.get(ParamId::items(d)))
}
