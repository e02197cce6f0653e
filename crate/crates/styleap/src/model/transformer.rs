//! Tape forward pass of the encoder-decoder over a ragged batch.
//!
//! Sentences are stacked row-wise into one matrix per side; `RowBlock`s
//! delimit each sentence so the fused attention op never mixes sentences
//! and no padding is introduced.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenId;
use crate::model::tape::{NodeId, RowBlock, Tape};
use crate::model::{ParamSet, TranslationModel};

/// Handles into the tape after one forward pass.
pub struct ForwardPass {
    /// (total decoder rows x vocab) pre-softmax scores.
    pub logits: NodeId,
    /// Decoder row blocks, aligned with the order of `dec_inputs`.
    pub dec_blocks: Vec<RowBlock>,
    pub enc_blocks: Vec<RowBlock>,
    /// Decoder self-attention nodes, one per decoder layer.
    pub dec_self_attn: Vec<NodeId>,
    /// Decoder cross-attention nodes, one per decoder layer.
    pub dec_cross_attn: Vec<NodeId>,
    /// Encoder output node (total encoder rows x model_dim).
    pub enc_out: NodeId,
}

fn blocks_of(seqs: &[Vec<TokenId>]) -> Vec<RowBlock> {
    let mut blocks = Vec::with_capacity(seqs.len());
    let mut start = 0;
    for s in seqs {
        blocks.push(RowBlock::new(start, s.len()));
        start += s.len();
    }
    blocks
}

struct Ctx<'a> {
    param_nodes: Vec<NodeId>,
    params: &'a ParamSet,
    heads: usize,
    dropout: f64,
}

impl Ctx<'_> {
    fn p(&self, name: &str) -> NodeId {
        self.param_nodes[self.params.id(name)]
    }
}

fn dropout_node(
    tape: &mut Tape,
    x: NodeId,
    ctx: &Ctx,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> NodeId {
    let Some(rng) = rng else { return x };
    if ctx.dropout == 0.0 {
        return x;
    }
    let keep = 1.0 - ctx.dropout;
    let dim = tape.value(x).dim();
    let mask = Array2::from_shape_fn(dim, |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    tape.mask(x, mask)
}

/// Residual + post-layer-norm around a sublayer output.
fn post_ln(tape: &mut Tape, x: NodeId, sub: NodeId, ctx: &Ctx, prefix: &str) -> NodeId {
    let sum = tape.add(x, sub);
    let g = ctx.p(&format!("{prefix}.g"));
    let b = ctx.p(&format!("{prefix}.b"));
    tape.layer_norm(sum, g, b)
}

fn attention_sublayer(
    tape: &mut Tape,
    x_q: NodeId,
    x_kv: NodeId,
    q_blocks: &[RowBlock],
    kv_blocks: &[RowBlock],
    ctx: &Ctx,
    prefix: &str,
    causal: bool,
) -> NodeId {
    let q = tape.matmul(x_q, ctx.p(&format!("{prefix}.wq")));
    let k = tape.matmul(x_kv, ctx.p(&format!("{prefix}.wk")));
    let v = tape.matmul(x_kv, ctx.p(&format!("{prefix}.wv")));
    let o = tape.attention(
        q,
        k,
        v,
        q_blocks.to_vec(),
        kv_blocks.to_vec(),
        ctx.heads,
        causal,
    );
    tape.matmul(o, ctx.p(&format!("{prefix}.wo")))
}

fn ffn_sublayer(tape: &mut Tape, x: NodeId, ctx: &Ctx, prefix: &str) -> NodeId {
    let h = tape.matmul(x, ctx.p(&format!("{prefix}.w1")));
    let h = tape.add_row(h, ctx.p(&format!("{prefix}.b1")));
    let h = tape.relu(h);
    let h = tape.matmul(h, ctx.p(&format!("{prefix}.w2")));
    tape.add_row(h, ctx.p(&format!("{prefix}.b2")))
}

fn embed_stack(
    tape: &mut Tape,
    model: &TranslationModel,
    embed_node: NodeId,
    seqs: &[Vec<TokenId>],
) -> NodeId {
    let indices: Vec<usize> = seqs
        .iter()
        .flat_map(|s| s.iter().map(|&t| t as usize))
        .collect();
    let gathered = tape.rows(embed_node, indices);
    let scaled = tape.scale(gathered, (model.config.model_dim as f64).sqrt());
    let pos = model.positions(seqs.iter().flat_map(|s| 0..s.len()));
    let pos_node = tape.constant(pos);
    tape.add(scaled, pos_node)
}

impl TranslationModel {
    /// Records the full encoder-decoder forward pass on `tape`.
    ///
    /// `enc_inputs[i]` pairs with `dec_inputs[i]`; every sequence must be
    /// non-empty (callers append EOS / prepend BOS). Dropout is active only
    /// when an RNG is supplied.
    pub fn forward(
        &self,
        tape: &mut Tape,
        enc_inputs: &[Vec<TokenId>],
        dec_inputs: &[Vec<TokenId>],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> ForwardPass {
        assert_eq!(enc_inputs.len(), dec_inputs.len());
        assert!(!enc_inputs.is_empty(), "empty batch");
        for s in enc_inputs.iter().chain(dec_inputs) {
            assert!(!s.is_empty(), "empty sequence in batch");
        }

        let param_nodes: Vec<NodeId> = self
            .params
            .tensors
            .iter()
            .enumerate()
            .map(|(pid, t)| tape.param(pid, t.clone()))
            .collect();
        let ctx = Ctx {
            param_nodes,
            params: &self.params,
            heads: self.config.heads,
            dropout: self.config.dropout,
        };
        let embed_node = ctx.p("embed");
        let enc_blocks = blocks_of(enc_inputs);
        let dec_blocks = blocks_of(dec_inputs);

        // Encoder.
        let mut h = embed_stack(tape, self, embed_node, enc_inputs);
        h = dropout_node(tape, h, &ctx, &mut dropout_rng);
        for l in 0..self.config.enc_layers {
            let a = attention_sublayer(
                tape,
                h,
                h,
                &enc_blocks,
                &enc_blocks,
                &ctx,
                &format!("enc{l}.attn"),
                false,
            );
            let a = dropout_node(tape, a, &ctx, &mut dropout_rng);
            h = post_ln(tape, h, a, &ctx, &format!("enc{l}.ln1"));
            let f = ffn_sublayer(tape, h, &ctx, &format!("enc{l}.ffn"));
            let f = dropout_node(tape, f, &ctx, &mut dropout_rng);
            h = post_ln(tape, h, f, &ctx, &format!("enc{l}.ln2"));
        }
        let enc_out = h;

        // Decoder.
        let mut d = embed_stack(tape, self, embed_node, dec_inputs);
        d = dropout_node(tape, d, &ctx, &mut dropout_rng);
        let mut dec_self_attn = Vec::with_capacity(self.config.dec_layers);
        let mut dec_cross_attn = Vec::with_capacity(self.config.dec_layers);
        for l in 0..self.config.dec_layers {
            let a = attention_sublayer(
                tape,
                d,
                d,
                &dec_blocks,
                &dec_blocks,
                &ctx,
                &format!("dec{l}.self"),
                true,
            );
            // The wo matmul sits directly above the attention node.
            dec_self_attn.push(a - 1);
            let a = dropout_node(tape, a, &ctx, &mut dropout_rng);
            d = post_ln(tape, d, a, &ctx, &format!("dec{l}.ln1"));

            let c = attention_sublayer(
                tape,
                d,
                enc_out,
                &dec_blocks,
                &enc_blocks,
                &ctx,
                &format!("dec{l}.cross"),
                false,
            );
            dec_cross_attn.push(c - 1);
            let c = dropout_node(tape, c, &ctx, &mut dropout_rng);
            d = post_ln(tape, d, c, &ctx, &format!("dec{l}.ln2"));

            let f = ffn_sublayer(tape, d, &ctx, &format!("dec{l}.ffn"));
            let f = dropout_node(tape, f, &ctx, &mut dropout_rng);
            d = post_ln(tape, d, f, &ctx, &format!("dec{l}.ln3"));
        }

        // Tied output projection: logits = H · Eᵀ.
        let logits = tape.matmul_t(d, embed_node);

        ForwardPass {
            logits,
            dec_blocks,
            enc_blocks,
            dec_self_attn,
            dec_cross_attn,
            enc_out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;

    fn model() -> TranslationModel {
        TranslationModel::new(ModelConfig::tiny(24), 3).unwrap()
    }

    #[test]
    fn forward_shapes_follow_ragged_blocks() {
        let m = model();
        let enc = vec![vec![5, 6, 7, 2], vec![8, 2]];
        let dec = vec![vec![1, 9, 10], vec![1, 11, 12, 13, 14]];
        let mut tape = Tape::new();
        let fp = m.forward(&mut tape, &enc, &dec, None);
        let logits = tape.value(fp.logits);
        assert_eq!(logits.dim(), (3 + 5, 24));
        assert_eq!(fp.dec_blocks, vec![RowBlock::new(0, 3), RowBlock::new(3, 5)]);
        assert_eq!(tape.value(fp.enc_out).dim(), (6, m.config.model_dim));
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let m = model();
        let enc = vec![vec![5, 6, 2]];
        let dec = vec![vec![1, 7, 8]];
        let mut t1 = Tape::new();
        let f1 = m.forward(&mut t1, &enc, &dec, None);
        let mut t2 = Tape::new();
        let f2 = m.forward(&mut t2, &enc, &dec, None);
        assert_eq!(t1.value(f1.logits), t2.value(f2.logits));
    }

    #[test]
    fn batch_composition_does_not_change_logits() {
        // A sentence's logits must be identical whether it is alone in the
        // batch or stacked with another sentence.
        let m = model();
        let enc_a = vec![5, 6, 7, 2];
        let dec_a = vec![1, 9, 10];
        let mut solo = Tape::new();
        let fp_solo = m.forward(&mut solo, &[enc_a.clone()], &[dec_a.clone()], None);
        let solo_logits = solo.value(fp_solo.logits).clone();

        let mut joint = Tape::new();
        let fp = m.forward(
            &mut joint,
            &[vec![8, 8, 2], enc_a],
            &[vec![1, 4, 5, 6], dec_a],
            None,
        );
        let joint_logits = joint.value(fp.logits);
        let b = fp.dec_blocks[1];
        for i in 0..b.len {
            for jcol in 0..24 {
                let x = solo_logits[[i, jcol]];
                let y = joint_logits[[b.start + i, jcol]];
                assert!((x - y).abs() < 1e-9, "row {i} col {jcol}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn attention_nodes_expose_softmax_weights() {
        let m = model();
        let enc = vec![vec![5, 6, 2]];
        let dec = vec![vec![1, 7, 8, 9]];
        let mut tape = Tape::new();
        let fp = m.forward(&mut tape, &enc, &dec, None);
        let self_w = tape.attention_weights(fp.dec_self_attn[0]);
        assert_eq!(self_w.len(), 1);
        assert_eq!(self_w[0].len(), m.config.heads);
        assert_eq!(self_w[0][0].dim(), (4, 4));
        // Causal: strictly upper triangle is zero.
        assert_eq!(self_w[0][0][[0, 3]], 0.0);
        let cross_w = tape.attention_weights(fp.dec_cross_attn[0]);
        assert_eq!(cross_w[0][0].dim(), (4, 3));
        for row in cross_w[0][0].rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_changes_outputs_only_when_enabled() {
        let mut cfg = ModelConfig::tiny(24);
        cfg.dropout = 0.5;
        let m = TranslationModel::new(cfg, 3).unwrap();
        let enc = vec![vec![5, 6, 2]];
        let dec = vec![vec![1, 7, 8]];
        let mut t1 = Tape::new();
        let f1 = m.forward(&mut t1, &enc, &dec, None);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut t2 = Tape::new();
        let f2 = m.forward(&mut t2, &enc, &dec, Some(&mut rng));
        assert_ne!(t1.value(f1.logits), t2.value(f2.logits));
    }
}
