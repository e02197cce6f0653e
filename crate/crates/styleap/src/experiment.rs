//! Desk-scale experiment driver: glue that turns generated task data into
//! tokenizers, datastores, training sets, trained systems and reports.
//! The CLI subcommands, the corpus-size sweep and the integration tests
//! all build on these functions.

use std::collections::BTreeMap;

use crate::corpus::{train_tokenizer, ParallelPair, StyledCorpus, TokenizerModel};
use crate::datastore::{Datastore, Metric};
use crate::embedder::{EmbeddingProvider, HashEmbedder};
use crate::error::{Error, Result};
use crate::eval::{
    run_comparison, BleuTokenization, ComparisonReport, MultiwayTestSet, Smoothing,
};
use crate::model::{train, Dataset, ModelConfig, TrainConfig, TrainStats, TranslationModel};
use crate::pipeline::{StylePipeline, StyledRequest};
use crate::prompt::{build_dataset, unsupervised_pool, MixConfig, PromptStrategy};
use crate::synth::SyntheticData;
use crate::util::derive_seed;

/// Hyperparameters for one desk experiment.
#[derive(Clone, Debug)]
pub struct DeskConfig {
    /// Template for model shapes; `vocab_size` is replaced by the
    /// tokenizer's actual vocabulary before use.
    pub model: ModelConfig,
    pub max_vocab: usize,
    pub min_frequency: usize,
    pub embed_dim: usize,
    pub metric: Metric,
    pub mix: MixConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            model: ModelConfig::small(0),
            max_vocab: 2000,
            min_frequency: 2,
            embed_dim: 256,
            metric: Metric::Cosine,
            mix: MixConfig {
                prompted_fraction: 1.0,
                max_len: 64,
                seed: 1,
            },
            train: TrainConfig::default(),
            seed: 1,
        }
    }
}

impl DeskConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            ..self.model.clone()
        }
    }
}

/// Trains the subword tokenizer over every text surface of the task:
/// parallel sources and targets plus the styled monolingual corpora. The
/// extra corpora reuse existing style ids so the tag inventory stays
/// exactly the declared style set.
pub fn tokenizer_for(
    parallel: &[ParallelPair],
    mono: &BTreeMap<String, StyledCorpus>,
    max_vocab: usize,
    min_frequency: usize,
) -> Result<TokenizerModel> {
    let first_style = mono
        .keys()
        .next()
        .ok_or_else(|| Error::Config("no styled corpora".into()))?;
    let mut corpora: Vec<StyledCorpus> = mono.values().cloned().collect();
    let mut sides = StyledCorpus {
        style_id: first_style.clone(),
        language: "both".into(),
        sentences: Vec::with_capacity(parallel.len() * 2),
    };
    for p in parallel {
        sides.sentences.push(p.source.clone());
        sides.sentences.push(p.target.clone());
    }
    corpora.push(sides);
    train_tokenizer(&corpora, max_vocab, min_frequency)
}

/// One datastore per style over the monolingual corpora.
pub fn build_stores(
    mono: &BTreeMap<String, StyledCorpus>,
    provider: &dyn EmbeddingProvider,
    metric: Metric,
) -> Result<BTreeMap<String, Datastore>> {
    mono.iter()
        .map(|(style, corpus)| Ok((style.clone(), Datastore::build(corpus, provider, metric)?)))
        .collect()
}

/// Tokenizes prompted pairs into a model dataset, via the marked reader so
/// separator literals become the separator id.
pub fn tokenize_dataset(
    pairs: &[crate::prompt::PromptedPair],
    tokenizer: &TokenizerModel,
) -> Dataset {
    Dataset::new(
        pairs
            .iter()
            .map(|p| {
                (
                    tokenizer.tokenize_marked(&p.source),
                    tokenizer.tokenize_marked(&p.target),
                )
            })
            .collect(),
    )
}

/// Builds the prompted training set and trains the joint StyleAP model.
/// `stores_for_training` is the per-style map for the supervised setting;
/// pass pooled stores for every style to train the unsupervised variant.
pub fn train_joint_model(
    parallel: &[ParallelPair],
    stores_for_training: &BTreeMap<String, Datastore>,
    provider: &dyn EmbeddingProvider,
    tokenizer: &TokenizerModel,
    cfg: &DeskConfig,
) -> Result<(TranslationModel, TrainStats)> {
    let (pairs, _) = build_dataset(
        parallel,
        stores_for_training,
        provider,
        PromptStrategy::RetrievedTarget,
        None,
        &cfg.mix,
    )?;
    let data = tokenize_dataset(&pairs, tokenizer);
    let mut model = TranslationModel::new(
        cfg.model_config(tokenizer.vocab_size()),
        derive_seed(cfg.seed, "model-init"),
    )?;
    let stats = train(&mut model, &data, &cfg.train)?;
    Ok((model, stats))
}

/// Replaces every style store with the pooled union, for the unsupervised
/// training variant.
pub fn pooled_training_stores(
    stores: &BTreeMap<String, Datastore>,
) -> Result<BTreeMap<String, Datastore>> {
    let refs: Vec<&Datastore> = stores.values().collect();
    let pooled = unsupervised_pool(&refs)?;
    Ok(stores
        .keys()
        .map(|k| (k.clone(), pooled.clone()))
        .collect())
}

/// Trains the tag-tuning comparator: styled pairs get their style tag
/// token prefixed to the source, plain pairs stay as they are.
pub fn train_tag_model(
    parallel: &[ParallelPair],
    tokenizer: &TokenizerModel,
    cfg: &DeskConfig,
) -> Result<(TranslationModel, TrainStats)> {
    let mut pairs = Vec::with_capacity(parallel.len());
    for p in parallel {
        let mut src = Vec::new();
        if let Some(style) = &p.style_label {
            let tag = tokenizer
                .tag_id(style)
                .ok_or_else(|| Error::UnknownStyle(style.clone()))?;
            src.push(tag);
        }
        src.extend(tokenizer.tokenize(&p.source.text));
        pairs.push((src, tokenizer.tokenize(&p.target.text)));
    }
    let mut model = TranslationModel::new(
        cfg.model_config(tokenizer.vocab_size()),
        derive_seed(cfg.seed, "tag-model-init"),
    )?;
    let stats = train(&mut model, &Dataset::new(pairs), &cfg.train)?;
    Ok((model, stats))
}

/// Assembles the inference pipeline around a trained joint model.
pub fn make_pipeline(
    model: TranslationModel,
    tokenizer: TokenizerModel,
    stores: BTreeMap<String, Datastore>,
    embed_dim: usize,
) -> StylePipeline {
    StylePipeline::new(
        model,
        tokenizer,
        Box::new(HashEmbedder::new(embed_dim)),
        stores,
    )
}

/// Hypotheses of the two-pass pipeline for every test item of one style.
pub fn styleap_hypotheses(
    pipeline: &StylePipeline,
    testset: &MultiwayTestSet,
    style: &str,
    run_seed: u64,
) -> Result<Vec<String>> {
    let requests: Vec<StyledRequest> = testset
        .items
        .iter()
        .map(|item| StyledRequest {
            source: item.source.text.clone(),
            style_id: style.to_string(),
        })
        .collect();
    let results = pipeline.batch_translate_styled(&requests, run_seed)?;
    Ok(results.into_iter().map(|r| r.hypothesis).collect())
}

/// Hypotheses of a single-pass system over every test item of one style.
/// `tagged` selects the tag prefix path; otherwise the plain path runs
/// (the no-prompt baseline).
pub fn single_pass_hypotheses(
    pipeline: &StylePipeline,
    testset: &MultiwayTestSet,
    style: &str,
    tagged: bool,
) -> Result<Vec<String>> {
    testset
        .items
        .iter()
        .map(|item| {
            if tagged {
                pipeline.translate_tagged(&item.source.text, style)
            } else {
                pipeline.translate_plain(&item.source.text)
            }
        })
        .collect()
}

/// Scores named hypothesis sets with the standard report settings.
pub fn score_systems(
    systems: &[crate::eval::SystemOutput],
    data: &SyntheticData,
) -> Result<ComparisonReport> {
    run_comparison(
        systems,
        &data.test,
        &data.classifier,
        BleuTokenization::AsGiven,
        Smoothing::Epsilon(0.01),
    )
}
