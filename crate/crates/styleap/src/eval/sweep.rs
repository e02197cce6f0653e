//! Corpus-size sweep: how each system degrades as the stylized data
//! shrinks.
//!
//! For every level the stylized resources are subsampled with a seeded
//! shuffle. The StyleAP pipeline keeps its trained joint model and only
//! rebuilds the per-style datastores over the subsample; the tag
//! comparator is retrained on the subsampled styled pairs. The no-prompt
//! baseline does not touch stylized data and is scored once per level for
//! reference. A level equal to the full corpus size reproduces the
//! non-sweep evaluation exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelPair, StyledCorpus, TokenizerModel};
use crate::embedder::HashEmbedder;
use crate::error::{Error, Result};
use crate::eval::{
    run_comparison, BleuTokenization, MultiwayTestSet, Smoothing, StyleClassifier, SystemOutput,
};
use crate::experiment::{
    build_stores, make_pipeline, single_pass_hypotheses, styleap_hypotheses, train_tag_model,
    DeskConfig,
};
use crate::model::TranslationModel;
use crate::util::derive_seed;

/// Everything a sweep needs: the task data, the already trained joint
/// model and the experiment configuration used for tag retraining.
pub struct SweepInputs<'a> {
    pub parallel: &'a [ParallelPair],
    pub mono: &'a BTreeMap<String, StyledCorpus>,
    pub testset: &'a MultiwayTestSet,
    pub classifier: &'a StyleClassifier,
    pub joint_model: &'a TranslationModel,
    pub tokenizer: &'a TokenizerModel,
    pub cfg: &'a DeskConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// Stylized sentences per style available at this level.
    pub level: usize,
    pub system: String,
    pub style: String,
    pub bleu: f64,
    pub transfer_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, level: usize, system: &str, style: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.level == level && r.system == system && r.style == style)
    }

    /// Macro average BLEU over styles for one system at one level.
    pub fn macro_bleu(&self, level: usize, system: &str) -> Option<f64> {
        average(self.rows.iter().filter_map(|r| {
            (r.level == level && r.system == system).then_some(r.bleu)
        }))
    }

    /// Macro average transfer ratio over styles for one system at one level.
    pub fn macro_ratio(&self, level: usize, system: &str) -> Option<f64> {
        average(self.rows.iter().filter_map(|r| {
            (r.level == level && r.system == system).then_some(r.transfer_ratio)
        }))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,system,style,bleu,transfer_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.2}\n",
                r.level, r.system, r.style, r.bleu, r.transfer_ratio
            ));
        }
        out
    }
}

fn average(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Seeded subsample of `count` indices out of `n`, returned in ascending
/// order so that `count == n` yields the identity selection.
fn subsample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(count);
    indices.sort_unstable();
    indices
}

fn subsample_mono(
    mono: &BTreeMap<String, StyledCorpus>,
    level: usize,
    seed: u64,
) -> Result<BTreeMap<String, StyledCorpus>> {
    let mut out = BTreeMap::new();
    for (style, corpus) in mono {
        let n = corpus.sentences.len();
        if level > n {
            return Err(Error::Config(format!(
                "sweep level {level} exceeds the {n} stylized sentences of style {style:?}"
            )));
        }
        let keep = subsample_indices(n, level, derive_seed(seed, &format!("mono-{level}-{style}")));
        out.insert(
            style.clone(),
            StyledCorpus {
                style_id: corpus.style_id.clone(),
                language: corpus.language.clone(),
                sentences: keep.iter().map(|&i| corpus.sentences[i].clone()).collect(),
            },
        );
    }
    Ok(out)
}

/// Keeps every plain pair and at most `level` styled pairs per style.
fn subsample_parallel(
    parallel: &[ParallelPair],
    styles: &[String],
    level: usize,
    seed: u64,
) -> Result<Vec<ParallelPair>> {
    let mut keep = vec![false; parallel.len()];
    for (i, p) in parallel.iter().enumerate() {
        if p.style_label.is_none() {
            keep[i] = true;
        }
    }
    for style in styles {
        let styled: Vec<usize> = parallel
            .iter()
            .enumerate()
            .filter(|(_, p)| p.style_label.as_deref() == Some(style))
            .map(|(i, _)| i)
            .collect();
        if level > styled.len() {
            return Err(Error::Config(format!(
                "sweep level {level} exceeds the {} styled pairs of style {style:?}",
                styled.len()
            )));
        }
        let chosen = subsample_indices(
            styled.len(),
            level,
            derive_seed(seed, &format!("pairs-{level}-{style}")),
        );
        for c in chosen {
            keep[styled[c]] = true;
        }
    }
    Ok(parallel
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| p.clone())
        .collect())
}

/// Runs the sweep over `levels`. Produces one row per (level, system,
/// style) for the systems `styleap`, `tag` and `baseline`.
pub fn size_sweep(inputs: &SweepInputs, levels: &[usize], seed: u64) -> Result<SweepReport> {
    if levels.is_empty() {
        return Err(Error::Config("no sweep levels given".into()));
    }
    let styles: Vec<String> = inputs.mono.keys().cloned().collect();
    let provider = HashEmbedder::new(inputs.cfg.embed_dim);

    // The baseline ignores stylized data entirely; its hypotheses are
    // computed once and rescored at each level for a complete table.
    let baseline_pipeline = make_pipeline(
        inputs.joint_model.clone(),
        inputs.tokenizer.clone(),
        BTreeMap::new(),
        inputs.cfg.embed_dim,
    );
    let mut baseline_hyps = BTreeMap::new();
    for style in &styles {
        baseline_hyps.insert(
            style.clone(),
            single_pass_hypotheses(&baseline_pipeline, inputs.testset, style, false)?,
        );
    }

    let mut report = SweepReport::default();
    for &level in levels {
        let mono = subsample_mono(inputs.mono, level, seed)?;
        let stores = build_stores(&mono, &provider, inputs.cfg.metric)?;
        let styleap = make_pipeline(
            inputs.joint_model.clone(),
            inputs.tokenizer.clone(),
            stores,
            inputs.cfg.embed_dim,
        );
        let mut styleap_hyps = BTreeMap::new();
        for style in &styles {
            styleap_hyps.insert(
                style.clone(),
                styleap_hypotheses(
                    &styleap,
                    inputs.testset,
                    style,
                    derive_seed(seed, &format!("eval-{level}")),
                )?,
            );
        }

        let pairs = subsample_parallel(inputs.parallel, &styles, level, seed)?;
        let (tag_model, _) = train_tag_model(&pairs, inputs.tokenizer, inputs.cfg)?;
        let tag_pipeline = make_pipeline(
            tag_model,
            inputs.tokenizer.clone(),
            BTreeMap::new(),
            inputs.cfg.embed_dim,
        );
        let mut tag_hyps = BTreeMap::new();
        for style in &styles {
            tag_hyps.insert(
                style.clone(),
                single_pass_hypotheses(&tag_pipeline, inputs.testset, style, true)?,
            );
        }

        let systems = [
            SystemOutput {
                name: "styleap".into(),
                hypotheses: styleap_hyps,
            },
            SystemOutput {
                name: "tag".into(),
                hypotheses: tag_hyps,
            },
            SystemOutput {
                name: "baseline".into(),
                hypotheses: baseline_hyps.clone(),
            },
        ];
        let scored = run_comparison(
            &systems,
            inputs.testset,
            inputs.classifier,
            BleuTokenization::AsGiven,
            Smoothing::Epsilon(0.01),
        )?;
        for row in scored.rows {
            report.rows.push(SweepRow {
                level,
                system: row.system,
                style: row.style,
                bleu: row.bleu,
                transfer_ratio: row.transfer_ratio,
            });
        }
    }
    Ok(report)
}
