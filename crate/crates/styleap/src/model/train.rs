//! Training loop: label-smoothed cross-entropy, Adam with inverse-sqrt
//! warmup, token-budget batching over ragged blocks, divergence detection,
//! and best-dev checkpointing in memory.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS_ID, EOS_ID};
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::model::tape::Tape;
use crate::model::TranslationModel;
use crate::util::derive_seed;

/// Tokenized parallel training data; ids carry no BOS/EOS yet.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

impl Dataset {
    pub fn new(pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>) -> Self {
        Dataset { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_steps: usize,
    /// Budget of source+target tokens per batch.
    pub batch_tokens: usize,
    /// Peak is reached at `warmup_steps`; inverse-sqrt decay afterwards.
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    /// Fraction of examples held out for dev-loss checkpoint selection.
    pub dev_fraction: f64,
    /// Dev loss is evaluated every this many steps (and at the end).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 2000,
            batch_tokens: 2000,
            learning_rate: 3e-3,
            warmup_steps: 200,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            grad_clip: 1.0,
            dev_fraction: 0.05,
            eval_every: 200,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainStats {
    pub curve: Vec<CurvePoint>,
    pub final_train_loss: f64,
    pub best_dev_loss: f64,
    pub steps_run: usize,
}

impl TrainStats {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,train_loss,dev_loss\n");
        for p in &self.curve {
            out.push_str(&format!("{},{:.6},{:.6}\n", p.step, p.train_loss, p.dev_loss));
        }
        out
    }
}

/// Builds encoder input, decoder input and decoder targets from a raw pair.
pub fn io_sequences(
    src: &[TokenId],
    tgt: &[TokenId],
) -> (Vec<TokenId>, Vec<TokenId>, Vec<TokenId>) {
    let mut enc_in = Vec::with_capacity(src.len() + 1);
    enc_in.extend_from_slice(src);
    enc_in.push(EOS_ID);
    let mut dec_in = Vec::with_capacity(tgt.len() + 1);
    dec_in.push(BOS_ID);
    dec_in.extend_from_slice(tgt);
    let mut dec_out = Vec::with_capacity(tgt.len() + 1);
    dec_out.extend_from_slice(tgt);
    dec_out.push(EOS_ID);
    (enc_in, dec_in, dec_out)
}

/// Label-smoothed cross-entropy and its logit gradient, both averaged
/// over rows. `targets` aligns with logits rows.
pub fn loss_and_dlogits(
    logits: &Array2<f64>,
    targets: &[TokenId],
    smoothing: f64,
) -> (f64, Array2<f64>) {
    let (rows, vocab) = logits.dim();
    assert_eq!(rows, targets.len());
    let off = smoothing / vocab as f64;
    let on = 1.0 - smoothing + off;
    let mut dlogits = Array2::zeros((rows, vocab));
    let mut loss = 0.0;
    for i in 0..rows {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        for &x in row.iter() {
            sum_exp += (x - max).exp();
        }
        let log_z = max + sum_exp.ln();
        let y = targets[i] as usize;
        // loss = -Σ_v q_v (x_v - log_z), with q uniform `off` except target.
        let sum_x: f64 = row.sum();
        loss += log_z - off * sum_x - (on - off) * row[y];
        for j in 0..vocab {
            let p = (row[j] - max).exp() / sum_exp;
            dlogits[[i, j]] = p - if j == y { on } else { off };
        }
    }
    let n = rows as f64;
    (loss / n, dlogits / n)
}

/// Forward + backward over one prepared batch; accumulates parameter
/// gradients and returns the mean per-token loss.
pub(crate) fn loss_and_grads(
    model: &TranslationModel,
    enc_inputs: &[Vec<TokenId>],
    dec_inputs: &[Vec<TokenId>],
    targets_flat: &[TokenId],
    dropout_rng: Option<&mut ChaCha8Rng>,
    grads: &mut [Array2<f64>],
) -> f64 {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, enc_inputs, dec_inputs, dropout_rng);
    let (loss, dlogits) = loss_and_dlogits(
        tape.value(fp.logits),
        targets_flat,
        model.config.label_smoothing,
    );
    tape.backward(fp.logits, dlogits, grads);
    loss
}

fn batch_loss_only(
    model: &TranslationModel,
    enc_inputs: &[Vec<TokenId>],
    dec_inputs: &[Vec<TokenId>],
    targets_flat: &[TokenId],
) -> f64 {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, enc_inputs, dec_inputs, None);
    loss_and_dlogits(
        tape.value(fp.logits),
        targets_flat,
        model.config.label_smoothing,
    )
    .0
}

struct PreparedBatch {
    enc: Vec<Vec<TokenId>>,
    dec: Vec<Vec<TokenId>>,
    targets: Vec<TokenId>,
}

fn make_batches(
    pairs: &[(Vec<TokenId>, Vec<TokenId>)],
    order: &[usize],
    batch_tokens: usize,
) -> Vec<PreparedBatch> {
    let mut batches = Vec::new();
    let mut cur = PreparedBatch {
        enc: Vec::new(),
        dec: Vec::new(),
        targets: Vec::new(),
    };
    let mut used = 0usize;
    for &ix in order {
        let (src, tgt) = &pairs[ix];
        let cost = src.len() + tgt.len() + 2;
        if used > 0 && used + cost > batch_tokens {
            batches.push(std::mem::replace(
                &mut cur,
                PreparedBatch {
                    enc: Vec::new(),
                    dec: Vec::new(),
                    targets: Vec::new(),
                },
            ));
            used = 0;
        }
        let (e, d, t) = io_sequences(src, tgt);
        cur.enc.push(e);
        cur.dec.push(d);
        cur.targets.extend(t);
        used += cost;
    }
    if !cur.enc.is_empty() {
        batches.push(cur);
    }
    batches
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: usize,
}

impl Adam {
    fn new(model: &TranslationModel) -> Self {
        Adam {
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut TranslationModel, grads: &[Array2<f64>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (pid, g) in grads.iter().enumerate() {
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            let p = &mut model.params.tensors[pid];
            azip(m, v, p, g, |m, v, p, g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            });
        }
    }
}

fn azip(
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    mut f: impl FnMut(&mut f64, &mut f64, &mut f64, f64),
) {
    for (((m, v), p), g) in m.iter_mut().zip(v.iter_mut()).zip(p.iter_mut()).zip(g.iter()) {
        f(m, v, p, *g);
    }
}

fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let s = step.max(1) as f64;
    let w = cfg.warmup_steps.max(1) as f64;
    cfg.learning_rate * (s / w).min((w / s).sqrt())
}

fn clip_grads(grads: &mut [Array2<f64>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm: f64 = grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            g.mapv_inplace(|x| x * scale);
        }
    }
}

/// Trains in place. The parameters left on the model are those of the best
/// dev-loss evaluation (final train-state parameters if no dev split).
pub fn train(
    model: &mut TranslationModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let limit = model.config.max_positions.saturating_sub(1);
    for (i, (s, t)) in data.pairs.iter().enumerate() {
        if s.len() > limit || t.len() > limit {
            return Err(Error::Config(format!(
                "training pair {i} exceeds max positions {limit}"
            )));
        }
        model.validate_tokens(s)?;
        model.validate_tokens(t)?;
    }

    // Deterministic dev split.
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dev-split"));
    order.shuffle(&mut split_rng);
    let n_dev = ((data.len() as f64 * cfg.dev_fraction).round() as usize)
        .min(data.len().saturating_sub(1));
    let dev_ix: Vec<usize> = order[..n_dev].to_vec();
    let train_ix: Vec<usize> = order[n_dev..].to_vec();
    let dev_batches = make_batches(&data.pairs, &dev_ix, cfg.batch_tokens);

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout"));
    let mut adam = Adam::new(model);
    let mut curve = Vec::new();
    let mut best_dev = f64::INFINITY;
    let mut best_params: Option<Vec<Array2<f64>>> = None;
    let mut step = 0usize;
    let mut epoch = 0usize;
    let mut recent_loss = 0.0;
    let mut recent_count = 0usize;
    let mut final_train_loss = f64::NAN;

    'outer: loop {
        let mut shuffled = train_ix.clone();
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch{epoch}")));
        shuffled.shuffle(&mut epoch_rng);
        let batches = make_batches(&data.pairs, &shuffled, cfg.batch_tokens);
        for (bi, batch) in batches.iter().enumerate() {
            if step >= cfg.max_steps {
                break 'outer;
            }
            step += 1;
            let mut grads = model.params.zeros_like();
            let loss = loss_and_grads(
                model,
                &batch.enc,
                &batch.dec,
                &batch.targets,
                Some(&mut dropout_rng),
                &mut grads,
            );
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    batch: bi,
                    message: format!("non-finite loss {loss}"),
                });
            }
            clip_grads(&mut grads, cfg.grad_clip);
            adam.step(model, &grads, lr_at(step, cfg), cfg);
            recent_loss += loss;
            recent_count += 1;
            final_train_loss = loss;

            if step % cfg.eval_every == 0 || step == cfg.max_steps {
                let dev_loss = eval_dev(model, &dev_batches);
                let train_avg = recent_loss / recent_count as f64;
                recent_loss = 0.0;
                recent_count = 0;
                curve.push(CurvePoint {
                    step,
                    train_loss: train_avg,
                    dev_loss,
                });
                if !dev_batches.is_empty() && dev_loss < best_dev {
                    best_dev = dev_loss;
                    best_params = Some(model.params.tensors.clone());
                }
            }
        }
        epoch += 1;
    }

    if let Some(best) = best_params {
        model.params.tensors = best;
    }
    Ok(TrainStats {
        curve,
        final_train_loss,
        best_dev_loss: best_dev,
        steps_run: step,
    })
}

fn eval_dev(model: &TranslationModel, dev_batches: &[PreparedBatch]) -> f64 {
    if dev_batches.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for b in dev_batches {
        let loss = batch_loss_only(model, &b.enc, &b.dec, &b.targets);
        total += loss * b.targets.len() as f64;
        tokens += b.targets.len();
    }
    total / tokens as f64
}
