//! Corpus-level BLEU: clipped n-gram precision up to order 4 with the
//! brevity penalty. Unsmoothed by default; an add-epsilon option exists
//! for tiny test sets. The builtin tokenizer approximates the common
//! "13a" punctuation splitting; scores are internally comparable, not
//! comparable to externally published tables.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// How hypothesis/reference strings are split into tokens for scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuTokenization {
    /// Whitespace splitting only (input is already tokenized).
    #[default]
    AsGiven,
    /// Builtin word tokenizer: punctuation split off as separate tokens.
    Builtin,
}

/// Zero-precision handling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    /// Any zero n-gram precision zeroes the whole score.
    None,
    /// Zero precisions are replaced by this epsilon.
    Epsilon(f64),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::None
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn split_tokens(text: &str, mode: BleuTokenization) -> Vec<String> {
    match mode {
        BleuTokenization::AsGiven => text.split_whitespace().map(String::from).collect(),
        BleuTokenization::Builtin => {
            let mut out = Vec::new();
            let mut cur = String::new();
            for c in text.chars() {
                if c.is_whitespace() {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                } else if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(c.to_string());
                } else {
                    cur.push(c);
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
            out
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU of aligned hypothesis/reference lists (one reference per
/// hypothesis).
pub fn corpus_bleu(
    hypotheses: &[String],
    references: &[String],
    tokenization: BleuTokenization,
    smoothing: Smoothing,
) -> Result<BleuScore> {
    if hypotheses.is_empty() {
        return Err(Error::Config("empty corpus for BLEU".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Config(format!(
            "hypothesis/reference length mismatch: {} vs {}",
            hypotheses.len(),
            references.len()
        )));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, reference) in hypotheses.iter().zip(references) {
        let h = split_tokens(hyp, tokenization);
        let r = split_tokens(reference, tokenization);
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            if h.len() < n {
                continue;
            }
            totals[n - 1] += h.len() - n + 1;
            let ref_counts = ngram_counts(&r, n);
            let hyp_counts = ngram_counts(&h, n);
            for (gram, count) in hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
            }
        }
    }

    let mut precisions = [0.0f64; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }

    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };

    // Orders with no hypothesis n-grams at all (corpus shorter than n)
    // are excluded from the geometric mean, so BLEU(h, h) = 100 holds for
    // short sentences too.
    let mut log_sum = 0.0f64;
    let mut orders = 0usize;
    let mut zeroed = false;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        orders += 1;
        let effective = match (precisions[n], smoothing) {
            (p, _) if p > 0.0 => p,
            (_, Smoothing::Epsilon(eps)) => eps,
            (_, Smoothing::None) => {
                zeroed = true;
                break;
            }
        };
        log_sum += effective.ln();
    }
    let score = if zeroed || hyp_len == 0 || orders == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / orders as f64).exp()
    };

    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}
