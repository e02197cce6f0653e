//! Reverse-mode automatic differentiation over 2-D f64 tensors.
//!
//! A `Tape` records a DAG of operations during the forward pass; `backward`
//! walks the nodes in reverse, accumulating gradients into parameter slots.
//! Attention over a ragged batch is a single fused op: sentences of unequal
//! length are stacked row-wise and described by per-sentence row blocks, so
//! no padding or masking tensors are materialised.

use ndarray::{s, Array2, Axis};

pub type NodeId = usize;

/// Contiguous row range of one sentence inside a stacked batch matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowBlock {
    pub start: usize,
    pub len: usize,
}

impl RowBlock {
    pub fn new(start: usize, len: usize) -> Self {
        RowBlock { start, len }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

enum Op {
    /// Leaf with no gradient.
    Const,
    /// Leaf tied to parameter slot `pid`; gradients accumulate there.
    Param { pid: usize },
    MatMul { a: NodeId, b: NodeId },
    /// a · bᵀ without materialising the transpose.
    MatMulT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Adds the single row of `row` (1 x c) to every row of `a`.
    AddRow { a: NodeId, row: NodeId },
    Scale { a: NodeId, c: f64 },
    Relu { a: NodeId },
    /// Elementwise product with a constant mask (inverted dropout).
    Mask { a: NodeId, mask: Array2<f64> },
    /// Row-wise layer normalisation with learned gain/bias (1 x c each).
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        // Saved forward statistics, one per row.
        normed: Array2<f64>,
        inv_std: Vec<f64>,
    },
    /// Row gather: out[i] = src[indices[i]]. Used for embedding lookup.
    Rows { src: NodeId, indices: Vec<usize> },
    /// Scaled dot-product attention over aligned ragged blocks.
    /// q is (Rq x h*dh), k and v are (Rkv x h*dh) with h heads of width dh.
    /// Block i of q attends to block i of k/v; `causal` requires equal
    /// block lengths and masks positions after the query index.
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        q_blocks: Vec<RowBlock>,
        kv_blocks: Vec<RowBlock>,
        heads: usize,
        scale: f64,
        // Softmax matrices saved for backward: [block][head] of (tq x tk).
        attn: Vec<Vec<Array2<f64>>>,
    },
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Softmax matrices of a fused attention node: [sentence][head].
    pub fn attention_weights(&self, id: NodeId) -> &[Vec<Array2<f64>>] {
        match &self.nodes[id].op {
            Op::Attention { attn, .. } => attn,
            _ => panic!("node {id} is not an attention op"),
        }
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn param(&mut self, pid: usize, value: Array2<f64>) -> NodeId {
        self.push(Op::Param { pid }, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(Op::MatMul { a, b }, value)
    }

    /// a · bᵀ.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value.t());
        self.push(Op::MatMulT { a, b }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(Op::Add { a, b }, value)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.nodes[row].value.row(0).to_owned();
        let value = &self.nodes[a].value + &r;
        self.push(Op::AddRow { a, row }, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a].value * c;
        self.push(Op::Scale { a, c }, value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(Op::Relu { a }, value)
    }

    pub fn mask(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        assert_eq!(self.nodes[a].value.dim(), mask.dim());
        let value = &self.nodes[a].value * &mask;
        self.push(Op::Mask { a, mask }, value)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let xv = &self.nodes[x].value;
        let (rows, cols) = xv.dim();
        let mut normed = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.mean().unwrap();
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + EPS).sqrt();
            inv_std.push(istd);
            for j in 0..cols {
                normed[[i, j]] = (row[j] - mean) * istd;
            }
        }
        let g = self.nodes[gain].value.row(0).to_owned();
        let b = self.nodes[bias].value.row(0).to_owned();
        let value = &normed * &g + &b;
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            value,
        )
    }

    pub fn rows(&mut self, src: NodeId, indices: Vec<usize>) -> NodeId {
        let srcv = &self.nodes[src].value;
        let cols = srcv.ncols();
        let mut value = Array2::zeros((indices.len(), cols));
        for (i, &ix) in indices.iter().enumerate() {
            value.row_mut(i).assign(&srcv.row(ix));
        }
        self.push(Op::Rows { src, indices }, value)
    }

    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        q_blocks: Vec<RowBlock>,
        kv_blocks: Vec<RowBlock>,
        heads: usize,
        causal: bool,
    ) -> NodeId {
        assert_eq!(q_blocks.len(), kv_blocks.len());
        let qv = &self.nodes[q].value;
        let kv = &self.nodes[k].value;
        let vv = &self.nodes[v].value;
        let width = qv.ncols();
        assert_eq!(width % heads, 0, "model width not divisible by heads");
        assert_eq!(kv.ncols(), width);
        assert_eq!(vv.ncols(), width);
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut out = Array2::zeros((qv.nrows(), width));
        let mut attn = Vec::with_capacity(q_blocks.len());
        for (qb, kb) in q_blocks.iter().zip(&kv_blocks) {
            if causal {
                assert_eq!(qb.len, kb.len, "causal attention needs square blocks");
            }
            let mut per_head = Vec::with_capacity(heads);
            for h in 0..heads {
                let hc = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![qb.range(), hc.clone()]);
                let kh = kv.slice(s![kb.range(), hc.clone()]);
                let vh = vv.slice(s![kb.range(), hc.clone()]);
                let mut scores = qh.dot(&kh.t()) * scale;
                if causal {
                    for i in 0..qb.len {
                        for j in (i + 1)..kb.len {
                            scores[[i, j]] = f64::NEG_INFINITY;
                        }
                    }
                }
                softmax_rows(&mut scores);
                let oh = scores.dot(&vh);
                out.slice_mut(s![qb.range(), hc]).assign(&oh);
                per_head.push(scores);
            }
            attn.push(per_head);
        }
        self.push(
            Op::Attention {
                q,
                k,
                v,
                q_blocks,
                kv_blocks,
                heads,
                scale,
                attn,
            },
            out,
        )
    }

    /// Backpropagates `seed` (d loss / d node `root`) through the tape and
    /// accumulates parameter gradients into `param_grads`, which must hold
    /// one correctly shaped zeroed (or partially accumulated) tensor per
    /// parameter slot.
    pub fn backward(&self, root: NodeId, seed: Array2<f64>, param_grads: &mut [Array2<f64>]) {
        assert_eq!(self.nodes[root].value.dim(), seed.dim());
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(seed);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param { pid } => {
                    param_grads[*pid] += &g;
                }
                Op::MatMul { a, b } => {
                    let da = g.dot(&self.nodes[*b].value.t());
                    let db = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT { a, b } => {
                    let da = g.dot(&self.nodes[*b].value);
                    let db = g.t().dot(&self.nodes[*a].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow { a, row } => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, dr);
                }
                Op::Scale { a, c } => {
                    accumulate(&mut grads, *a, &g * *c);
                }
                Op::Relu { a } => {
                    let da = &g * &self.nodes[*a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::Mask { a, mask } => {
                    accumulate(&mut grads, *a, &g * mask);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let cols = normed.ncols() as f64;
                    let gval = self.nodes[*gain].value.row(0).to_owned();
                    let dgain = (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let mut dx = Array2::zeros(normed.dim());
                    for i in 0..normed.nrows() {
                        // dnormed for this row.
                        let dn: Vec<f64> = g
                            .row(i)
                            .iter()
                            .zip(gval.iter())
                            .map(|(gi, gn)| gi * gn)
                            .collect();
                        let sum_dn: f64 = dn.iter().sum();
                        let sum_dn_n: f64 = dn
                            .iter()
                            .zip(normed.row(i))
                            .map(|(d, n)| d * n)
                            .sum();
                        for j in 0..normed.ncols() {
                            dx[[i, j]] = inv_std[i]
                                * (dn[j] - sum_dn / cols - normed[[i, j]] * sum_dn_n / cols);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::Rows { src, indices } => {
                    let mut dsrc = Array2::zeros(self.nodes[*src].value.dim());
                    for (i, &ix) in indices.iter().enumerate() {
                        let mut row = dsrc.row_mut(ix);
                        row += &g.row(i);
                    }
                    accumulate(&mut grads, *src, dsrc);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    q_blocks,
                    kv_blocks,
                    heads,
                    scale,
                    attn,
                    ..
                } => {
                    let qv = &self.nodes[*q].value;
                    let kv = &self.nodes[*k].value;
                    let vv = &self.nodes[*v].value;
                    let dh = qv.ncols() / heads;
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    for (bi, (qb, kb)) in q_blocks.iter().zip(kv_blocks).enumerate() {
                        for h in 0..*heads {
                            let hc = h * dh..(h + 1) * dh;
                            let a = &attn[bi][h];
                            let go = g.slice(s![qb.range(), hc.clone()]);
                            let qh = qv.slice(s![qb.range(), hc.clone()]);
                            let kh = kv.slice(s![kb.range(), hc.clone()]);
                            let vh = vv.slice(s![kb.range(), hc.clone()]);
                            // O = A·V.
                            let da = go.dot(&vh.t());
                            let dvh = a.t().dot(&go);
                            // Softmax backward per row: dS = A ⊙ (dA - rowsum(dA ⊙ A)).
                            let mut ds = Array2::zeros(a.dim());
                            for i in 0..a.nrows() {
                                let dot: f64 = da
                                    .row(i)
                                    .iter()
                                    .zip(a.row(i))
                                    .map(|(x, y)| x * y)
                                    .sum();
                                for j in 0..a.ncols() {
                                    ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot);
                                }
                            }
                            let dqh = ds.dot(&kh) * *scale;
                            let dkh = ds.t().dot(&qh) * *scale;
                            dq.slice_mut(s![qb.range(), hc.clone()])
                                .zip_mut_with(&dqh, |x, y| *x += y);
                            dk.slice_mut(s![kb.range(), hc.clone()])
                                .zip_mut_with(&dkh, |x, y| *x += y);
                            dv.slice_mut(s![kb.range(), hc])
                                .zip_mut_with(&dvh, |x, y| *x += y);
                        }
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
    match &mut grads[id] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// In-place row softmax. Rows that are entirely -inf would produce NaN;
/// callers never construct such rows (causal masks keep the diagonal).
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}
