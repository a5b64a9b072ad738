//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Values are row-major `f64` matrices. Besides the usual dense primitives
//! the tape knows a handful of sparse graph operations (per-edge cosine,
//! per-segment attention normalization, weighted segment sums and pooling)
//! so that one message-passing round over the whole graph records a few
//! dozen nodes rather than one node per edge.
//!
//! ```
//! use dagcn::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(array![[3.0]]);
//! let y = tape.mul(x, x);
//! let grads = tape.backward(y);
//! assert_eq!(tape.scalar(y), 9.0);
//! assert_eq!(grads.get(x).unwrap()[[0, 0]], 6.0);
//! ```

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

/// Norms below this are treated as zero by the cosine primitive.
pub const ZERO_NORM: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Compressed row layout: segment `t` owns entries `offsets[t]..offsets[t+1]`
/// and entry `e` refers to source row `index[e]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Segments {
    pub offsets: Vec<usize>,
    pub index: Vec<usize>,
}

impl Segments {
    pub fn from_lists<I, L>(lists: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut index = Vec::new();
        for list in lists {
            index.extend(list);
            offsets.push(index.len());
        }
        Segments { offsets, index }
    }

    pub fn n_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_entries(&self) -> usize {
        self.index.len()
    }

    #[inline]
    pub fn range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    /// Segment id of every entry.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_entries());
        for t in 0..self.n_segments() {
            out.extend(std::iter::repeat_n(t, self.range(t).len()));
        }
        out
    }
}

/// How attention scores are turned into weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Every term, the self term included, is exponentiated and normalized.
    #[default]
    Softmax,
    /// The printed form: the self score enters the denominator without `exp`
    /// while its numerator is `exp(s_self)`. Weights need not sum to one.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a · wᵀ`
    MatMulT(Var, Var),
    LeakyRelu(Var, f64),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    Gather(Var, Arc<[usize]>),
    SliceRows(Var, usize, usize),
    /// Row `t` of the matrix scaled by entry `t` of a column vector.
    RowScale(Var, Var),
    /// Column of cosines between `a[ai[e]]` and `b[bi[e]]`.
    PairCosine {
        a: Var,
        b: Var,
        ai: Arc<[usize]>,
        bi: Arc<[usize]>,
    },
    /// Scores laid out as all neighbor entries followed by one self entry per
    /// segment.
    Attention {
        scores: Var,
        seg: Arc<Segments>,
        mode: AttentionMode,
    },
    /// `out[t] = Σ_{e∈t} w[e] · src[index[e]]`
    SegmentSum {
        weights: Var,
        src: Var,
        seg: Arc<Segments>,
    },
    /// Mean over consecutive groups of rows.
    GroupMean(Var, usize),
    Pool {
        src: Var,
        seg: Arc<Segments>,
        mode: Pooling,
    },
    /// Sum of all entries, as a 1 x 1 matrix.
    Sum(Var),
    /// Summed softmax cross-entropy of each row against its target column.
    SoftmaxXent {
        logits: Var,
        targets: Arc<[usize]>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "not a scalar node");
        m[[0, 0]]
    }

    /// Input node. Leaves are differentiable; whether their gradient is
    /// used is up to the caller.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Var {
        let value = self.eval(&op);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.record(Op::Scale(a, k))
    }

    /// `a · wᵀ`: applies `w` (out × in) to every row of `a` (n × in).
    pub fn matmul_t(&mut self, a: Var, w: Var) -> Var {
        self.record(Op::MatMulT(a, w))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.record(Op::LeakyRelu(a, slope))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::ConcatCols(a, b))
    }

    pub fn gather(&mut self, a: Var, rows: Arc<[usize]>) -> Var {
        self.record(Op::Gather(a, rows))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.record(Op::SliceRows(a, start, len))
    }

    pub fn row_scale(&mut self, a: Var, col: Var) -> Var {
        self.record(Op::RowScale(a, col))
    }

    pub fn pair_cosine(&mut self, a: Var, b: Var, ai: Arc<[usize]>, bi: Arc<[usize]>) -> Var {
        assert_eq!(ai.len(), bi.len());
        self.record(Op::PairCosine { a, b, ai, bi })
    }

    pub fn attention(&mut self, scores: Var, seg: Arc<Segments>, mode: AttentionMode) -> Var {
        self.record(Op::Attention { scores, seg, mode })
    }

    pub fn segment_sum(&mut self, weights: Var, src: Var, seg: Arc<Segments>) -> Var {
        self.record(Op::SegmentSum { weights, src, seg })
    }

    pub fn group_mean(&mut self, a: Var, group: usize) -> Var {
        self.record(Op::GroupMean(a, group))
    }

    pub fn pool(&mut self, src: Var, seg: Arc<Segments>, mode: Pooling) -> Var {
        self.record(Op::Pool { src, seg, mode })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.record(Op::Sum(a))
    }

    pub fn softmax_xent(&mut self, logits: Var, targets: Arc<[usize]>) -> Var {
        self.record(Op::SoftmaxXent { logits, targets })
    }

    fn eval(&self, op: &Op) -> Matrix {
        let v = |x: &Var| &self.nodes[x.0].value;
        match op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::Add(a, b) => v(a) + v(b),
            Op::Mul(a, b) => v(a) * v(b),
            Op::Scale(a, k) => v(a) * *k,
            Op::MatMulT(a, w) => v(a).dot(&v(w).t()),
            Op::LeakyRelu(a, slope) => v(a).mapv(|x| if x >= 0.0 { x } else { slope * x }),
            Op::ConcatRows(a, b) => {
                concatenate(Axis(0), &[v(a).view(), v(b).view()]).expect("column counts must agree")
            }
            Op::ConcatCols(a, b) => {
                concatenate(Axis(1), &[v(a).view(), v(b).view()]).expect("row counts must agree")
            }
            Op::Gather(a, rows) => v(a).select(Axis(0), rows),
            Op::SliceRows(a, start, len) => v(a).slice(s![*start..start + len, ..]).to_owned(),
            Op::RowScale(a, col) => {
                let (a, col) = (v(a), v(col));
                assert_eq!(col.dim(), (a.nrows(), 1));
                a * col
            }
            Op::PairCosine { a, b, ai, bi } => {
                let (a, b) = (v(a), v(b));
                Matrix::from_shape_fn((ai.len(), 1), |(e, _)| cosine(a.row(ai[e]), b.row(bi[e])).0)
            }
            Op::Attention { scores, seg, mode } => attention_forward(v(scores), seg, *mode),
            Op::SegmentSum { weights, src, seg } => {
                let (w, src) = (v(weights), v(src));
                assert_eq!(w.nrows(), seg.n_entries());
                let mut out = Matrix::zeros((seg.n_segments(), src.ncols()));
                for t in 0..seg.n_segments() {
                    let mut row = out.row_mut(t);
                    for e in seg.range(t) {
                        row.scaled_add(w[[e, 0]], &src.row(seg.index[e]));
                    }
                }
                out
            }
            Op::GroupMean(a, group) => {
                let a = v(a);
                assert_eq!(a.nrows() % group, 0);
                let mut out = Matrix::zeros((a.nrows() / group, a.ncols()));
                for (r, row) in a.rows().into_iter().enumerate() {
                    out.row_mut(r / group).scaled_add(1.0 / *group as f64, &row);
                }
                out
            }
            Op::Pool { src, seg, mode } => {
                let src = v(src);
                let mut out = Matrix::zeros((seg.n_segments(), src.ncols()));
                for t in 0..seg.n_segments() {
                    let r = seg.range(t);
                    assert!(!r.is_empty(), "pooling over an empty segment");
                    let mut row = out.row_mut(t);
                    match mode {
                        Pooling::Mean => {
                            let k = 1.0 / r.len() as f64;
                            for e in r {
                                row.scaled_add(k, &src.row(seg.index[e]));
                            }
                        }
                        Pooling::Max => {
                            row.assign(&src.row(seg.index[r.start]));
                            for e in r.skip(1) {
                                row.zip_mut_with(&src.row(seg.index[e]), |o, &x| {
                                    if x > *o {
                                        *o = x
                                    }
                                });
                            }
                        }
                    }
                }
                out
            }
            Op::Sum(a) => Matrix::from_elem((1, 1), v(a).sum()),
            Op::SoftmaxXent { logits, targets } => {
                let l = v(logits);
                assert_eq!(l.nrows(), targets.len());
                let total: f64 = l
                    .rows()
                    .into_iter()
                    .zip(targets.iter())
                    .map(|(row, &t)| log_sum_exp(row) - row[t])
                    .sum();
                Matrix::from_elem((1, 1), total)
            }
        }
    }

    /// Recomputes every non-leaf node from its recorded inputs and checks
    /// the result is bitwise identical to what was recorded.
    pub fn replay_matches(&self) -> bool {
        self.nodes.iter().all(|n| match n.op {
            Op::Leaf => true,
            ref op => {
                let again = self.eval(op);
                again.shape() == n.value.shape()
                    && again
                        .iter()
                        .zip(n.value.iter())
                        .all(|(a, b)| a.to_bits() == b.to_bits())
            }
        })
    }

    /// Activation pattern of every non-smooth primitive: the sign of each
    /// LeakyReLU input and the winning row of each max-pool coordinate.
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::LeakyRelu(a, _) => {
                    sig.extend(self.value(*a).iter().map(|&x| (x >= 0.0) as u32));
                }
                Op::Pool {
                    src,
                    seg,
                    mode: Pooling::Max,
                } => {
                    let src = self.value(*src);
                    for t in 0..seg.n_segments() {
                        for c in 0..src.ncols() {
                            sig.push(max_entry(src, seg, t, c) as u32);
                        }
                    }
                }
                _ => {}
            }
        }
        sig
    }

    /// Smallest |input| over all LeakyReLU nodes.
    pub fn min_kink_distance(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(a, _) => self.value(a).iter().map(|x| x.abs()).reduce(f64::min),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Reverse accumulation from a scalar node.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward needs a scalar root"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::ones((1, 1)));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let val = |x: &Var| &self.nodes[x.0].value;
            let mut acc = |x: Var, d: Matrix| accumulate(&mut grads, x, d);
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(b));
                    acc(*b, &g * val(a));
                }
                Op::Scale(a, k) => acc(*a, &g * *k),
                Op::MatMulT(a, w) => {
                    acc(*a, g.dot(val(w)));
                    acc(*w, g.t().dot(val(a)));
                }
                Op::LeakyRelu(a, slope) => {
                    let mut d = g.clone();
                    d.zip_mut_with(val(a), |d, &x| {
                        if x < 0.0 {
                            *d *= slope
                        }
                    });
                    acc(*a, d);
                }
                Op::ConcatRows(a, b) => {
                    let n = val(a).nrows();
                    acc(*a, g.slice(s![..n, ..]).to_owned());
                    acc(*b, g.slice(s![n.., ..]).to_owned());
                }
                Op::ConcatCols(a, b) => {
                    let n = val(a).ncols();
                    acc(*a, g.slice(s![.., ..n]).to_owned());
                    acc(*b, g.slice(s![.., n..]).to_owned());
                }
                Op::Gather(a, rows) => {
                    let mut d = Matrix::zeros(val(a).raw_dim());
                    for (r, &src) in rows.iter().enumerate() {
                        d.row_mut(src).scaled_add(1.0, &g.row(r));
                    }
                    acc(*a, d);
                }
                Op::SliceRows(a, start, len) => {
                    let mut d = Matrix::zeros(val(a).raw_dim());
                    d.slice_mut(s![*start..start + len, ..]).assign(&g);
                    acc(*a, d);
                }
                Op::RowScale(a, col) => {
                    let (av, cv) = (val(a), val(col));
                    let dcol = (&g * av).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, &g * cv);
                    acc(*col, dcol);
                }
                Op::PairCosine { a, b, ai, bi } => {
                    let (av, bv) = (val(a), val(b));
                    let mut da = Matrix::zeros(av.raw_dim());
                    let mut db = Matrix::zeros(bv.raw_dim());
                    for e in 0..ai.len() {
                        let (x, y) = (av.row(ai[e]), bv.row(bi[e]));
                        let (c, nx, ny) = cosine(x, y);
                        if nx < ZERO_NORM || ny < ZERO_NORM {
                            continue;
                        }
                        let ge = g[[e, 0]];
                        // dc/dx = y/(|x||y|) - c·x/|x|²
                        let inv = 1.0 / (nx * ny);
                        let mut rx = da.row_mut(ai[e]);
                        rx.scaled_add(ge * inv, &y);
                        rx.scaled_add(-ge * c / (nx * nx), &x);
                        let mut ry = db.row_mut(bi[e]);
                        ry.scaled_add(ge * inv, &x);
                        ry.scaled_add(-ge * c / (ny * ny), &y);
                    }
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Attention { scores, seg, mode } => {
                    acc(
                        *scores,
                        attention_backward(val(scores), &node.value, &g, seg, *mode),
                    );
                }
                Op::SegmentSum { weights, src, seg } => {
                    let (w, sv) = (val(weights), val(src));
                    let mut dw = Matrix::zeros(w.raw_dim());
                    let mut ds = Matrix::zeros(sv.raw_dim());
                    for t in 0..seg.n_segments() {
                        let gt = g.row(t);
                        for e in seg.range(t) {
                            let r = seg.index[e];
                            dw[[e, 0]] = gt.dot(&sv.row(r));
                            ds.row_mut(r).scaled_add(w[[e, 0]], &gt);
                        }
                    }
                    acc(*weights, dw);
                    acc(*src, ds);
                }
                Op::GroupMean(a, group) => {
                    let av = val(a);
                    let mut d = Matrix::zeros(av.raw_dim());
                    let k = 1.0 / *group as f64;
                    for r in 0..av.nrows() {
                        d.row_mut(r).scaled_add(k, &g.row(r / group));
                    }
                    acc(*a, d);
                }
                Op::Pool { src, seg, mode } => {
                    let sv = val(src);
                    let mut d = Matrix::zeros(sv.raw_dim());
                    for t in 0..seg.n_segments() {
                        let r = seg.range(t);
                        match mode {
                            Pooling::Mean => {
                                let k = 1.0 / r.len() as f64;
                                for e in r {
                                    d.row_mut(seg.index[e]).scaled_add(k, &g.row(t));
                                }
                            }
                            Pooling::Max => {
                                for c in 0..sv.ncols() {
                                    let e = max_entry(sv, seg, t, c);
                                    d[[seg.index[e], c]] += g[[t, c]];
                                }
                            }
                        }
                    }
                    acc(*src, d);
                }
                Op::Sum(a) => acc(*a, Matrix::from_elem(val(a).raw_dim(), g[[0, 0]])),
                Op::SoftmaxXent { logits, targets } => {
                    let l = val(logits);
                    let g0 = g[[0, 0]];
                    let mut d = Matrix::zeros(l.raw_dim());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = l.row(r);
                        let lse = log_sum_exp(row);
                        let mut drow = d.row_mut(r);
                        drow.zip_mut_with(&row, |d, &x| *d = g0 * (x - lse).exp());
                        drow[t] -= g0;
                    }
                    acc(*logits, d);
                }
            }
        }
        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], x: Var, d: Matrix) {
    match &mut grads[x.0] {
        Some(g) => *g += &d,
        slot @ None => *slot = Some(d),
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    /// `None` when the node does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Cosine similarity with the zero-norm rule, plus both norms.
#[inline]
pub(crate) fn cosine(x: ArrayView1<f64>, y: ArrayView1<f64>) -> (f64, f64, f64) {
    let nx = x.dot(&x).sqrt();
    let ny = y.dot(&y).sqrt();
    if nx < ZERO_NORM || ny < ZERO_NORM {
        return (0.0, nx, ny);
    }
    ((x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0), nx, ny)
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn max_entry(src: &Matrix, seg: &Segments, t: usize, c: usize) -> usize {
    let mut best = seg.offsets[t];
    for e in seg.range(t).skip(1) {
        if src[[seg.index[e], c]] > src[[seg.index[best], c]] {
            best = e;
        }
    }
    best
}

/// Literal-mode denominators at or below this are replaced by one; only an
/// isolated node with a zero embedding can get there.
const LITERAL_FLOOR: f64 = 1e-12;

fn attention_forward(scores: &Matrix, seg: &Segments, mode: AttentionMode) -> Matrix {
    let n_nb = seg.n_entries();
    assert_eq!(scores.dim(), (n_nb + seg.n_segments(), 1));
    let mut w = Matrix::zeros(scores.raw_dim());
    for t in 0..seg.n_segments() {
        let self_pos = n_nb + t;
        let r = seg.range(t);
        match mode {
            AttentionMode::Softmax => {
                let m = r
                    .clone()
                    .map(|e| scores[[e, 0]])
                    .fold(scores[[self_pos, 0]], f64::max);
                let mut z = 0.0;
                for e in r.clone().chain(std::iter::once(self_pos)) {
                    let x = (scores[[e, 0]] - m).exp();
                    w[[e, 0]] = x;
                    z += x;
                }
                for e in r.chain(std::iter::once(self_pos)) {
                    w[[e, 0]] /= z;
                }
            }
            AttentionMode::Literal => {
                let s_self = scores[[self_pos, 0]];
                let mut denom = s_self;
                for e in r.clone() {
                    denom += scores[[e, 0]].exp();
                }
                if denom <= LITERAL_FLOOR {
                    denom = 1.0;
                }
                for e in r {
                    w[[e, 0]] = scores[[e, 0]].exp() / denom;
                }
                w[[self_pos, 0]] = s_self.exp() / denom;
            }
        }
    }
    w
}

fn attention_backward(
    scores: &Matrix,
    w: &Matrix,
    g: &Matrix,
    seg: &Segments,
    mode: AttentionMode,
) -> Matrix {
    let n_nb = seg.n_entries();
    let mut d = Matrix::zeros(scores.raw_dim());
    for t in 0..seg.n_segments() {
        let self_pos = n_nb + t;
        let entries = || seg.range(t).chain(std::iter::once(self_pos));
        let dot: f64 = entries().map(|e| g[[e, 0]] * w[[e, 0]]).sum();
        match mode {
            AttentionMode::Softmax => {
                for e in entries() {
                    d[[e, 0]] = w[[e, 0]] * (g[[e, 0]] - dot);
                }
            }
            AttentionMode::Literal => {
                let s_self = scores[[self_pos, 0]];
                let raw: f64 = s_self + seg.range(t).map(|e| scores[[e, 0]].exp()).sum::<f64>();
                if raw <= LITERAL_FLOOR {
                    // constant denominator: only the numerators move
                    for e in entries() {
                        d[[e, 0]] = g[[e, 0]] * w[[e, 0]];
                    }
                    continue;
                }
                for e in seg.range(t) {
                    d[[e, 0]] = w[[e, 0]] * (g[[e, 0]] - dot);
                }
                d[[self_pos, 0]] = g[[self_pos, 0]] * w[[self_pos, 0]] - dot / raw;
            }
        }
    }
    d
}
