//! Finite-difference validation of the analytic gradients.
//!
//! Central differences on every scalar of a tiny model are compared to the
//! tape gradients of the same batch. Relative error uses a unit floor in
//! the denominator so near-zero pairs do not explode the ratio.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::model::tape::Tape;
use crate::model::train::{io_sequences, loss_and_dlogits, loss_and_grads};
use crate::model::TranslationModel;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked_scalars: usize,
}

fn batch_loss(
    model: &TranslationModel,
    enc: &[Vec<TokenId>],
    dec: &[Vec<TokenId>],
    targets: &[TokenId],
) -> f64 {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, enc, dec, None);
    loss_and_dlogits(tape.value(fp.logits), targets, model.config.label_smoothing).0
}

/// Compares analytic and numeric gradients of the training loss on the
/// given pairs. Dropout must be disabled in the model config; every
/// parameter scalar is perturbed by `h` in both directions.
pub fn gradient_check(
    model: &TranslationModel,
    pairs: &[(Vec<TokenId>, Vec<TokenId>)],
    h: f64,
) -> Result<GradCheckReport> {
    if model.config.dropout != 0.0 {
        return Err(Error::Config(
            "gradient check requires dropout 0".into(),
        ));
    }
    if pairs.is_empty() {
        return Err(Error::Config("gradient check needs at least one pair".into()));
    }
    let mut enc = Vec::new();
    let mut dec = Vec::new();
    let mut targets = Vec::new();
    for (s, t) in pairs {
        let (e, d, o) = io_sequences(s, t);
        enc.push(e);
        dec.push(d);
        targets.extend(o);
    }

    let mut analytic = model.params.zeros_like();
    loss_and_grads(model, &enc, &dec, &targets, None, &mut analytic);

    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for pid in 0..probe.params.len() {
        let dim = probe.params.tensors[pid].dim();
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                let orig = probe.params.tensors[pid][[i, j]];
                probe.params.tensors[pid][[i, j]] = orig + h;
                let up = batch_loss(&probe, &enc, &dec, &targets);
                probe.params.tensors[pid][[i, j]] = orig - h;
                let down = batch_loss(&probe, &enc, &dec, &targets);
                probe.params.tensors[pid][[i, j]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[pid][[i, j]];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                if rel > max_rel {
                    max_rel = rel;
                    worst = format!("{}[{},{}]", model.params.names[pid], i, j);
                }
                checked += 1;
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        checked_scalars: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, TranslationModel};

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let model = TranslationModel::new(ModelConfig::tiny(16), 21).unwrap();
        let pairs = vec![
            (vec![5u32, 6, 7], vec![8u32, 9]),
            (vec![10u32, 11], vec![12u32, 13, 14]),
        ];
        let report = gradient_check(&model, &pairs, 1e-5).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
        assert_eq!(report.checked_scalars, model.params.scalar_count());
    }

    #[test]
    fn dropout_enabled_is_rejected() {
        let mut cfg = ModelConfig::tiny(16);
        cfg.dropout = 0.1;
        let model = TranslationModel::new(cfg, 1).unwrap();
        assert!(gradient_check(&model, &[(vec![5], vec![6])], 1e-5).is_err());
    }
}
