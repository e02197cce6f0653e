//! Prompt selection and training-data augmentation.
//!
//! A styled pair selected for prompting becomes
//! `prompt [s] source -> prompt [s] target`, where the prompt is a
//! sentence retrieved from the style's datastore. Retrieval queries use
//! the target side during data building (the reference is available) and
//! the draft translation at inference.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelPair, Sentence};
use crate::datastore::Datastore;
use crate::embedder::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Separator literal used in augmented text; the tokenizer maps it to the
/// reserved separator id via `tokenize_marked`.
pub const SEPARATOR_TEXT: &str = "[s]";

/// How the prompt for a sentence is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    /// Nearest stored sentence to the target (training) or draft
    /// translation (inference).
    RetrievedTarget,
    /// Nearest stored sentence to the source sentence.
    RetrievedSource,
    /// Uniformly random stored sentence.
    Random,
    /// One constant sentence for every pair.
    Fixed,
}

impl PromptStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PromptStrategy::RetrievedTarget => "retrieved_target",
            PromptStrategy::RetrievedSource => "retrieved_source",
            PromptStrategy::Random => "random",
            PromptStrategy::Fixed => "fixed",
        }
    }

    pub fn all() -> [PromptStrategy; 4] {
        [
            PromptStrategy::RetrievedTarget,
            PromptStrategy::RetrievedSource,
            PromptStrategy::Random,
            PromptStrategy::Fixed,
        ]
    }
}

impl FromStr for PromptStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrieved_target" | "retrieved-target" | "draft" => {
                Ok(PromptStrategy::RetrievedTarget)
            }
            "retrieved_source" | "retrieved-source" | "source" => {
                Ok(PromptStrategy::RetrievedSource)
            }
            "random" => Ok(PromptStrategy::Random),
            "fixed" => Ok(PromptStrategy::Fixed),
            other => Err(Error::Config(format!("unknown prompt strategy {other:?}"))),
        }
    }
}

/// One output pair of the data builder; `prompt` is set iff the pair was
/// augmented.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptedPair {
    pub source: String,
    pub target: String,
    pub style_label: Option<String>,
    pub prompt: Option<String>,
}

impl PromptedPair {
    pub fn to_parallel(&self) -> ParallelPair {
        ParallelPair {
            source: Sentence::new(self.source.clone()),
            target: Sentence::new(self.target.clone()),
            style_label: self.style_label.clone(),
        }
    }
}

/// Controls which fraction of the styled pairs receives a prompt.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixConfig {
    /// Fraction of style-labelled pairs to augment, rounded to nearest.
    pub prompted_fraction: f64,
    /// Augmented pairs whose source or target exceeds this many
    /// whitespace words are dropped.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            prompted_fraction: 0.5,
            max_len: 64,
            seed: 1,
        }
    }
}

/// Provenance sidecar written next to augmented datasets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub strategy: String,
    pub seed: u64,
    pub prompted_fraction: f64,
    pub input_pairs: usize,
    pub prompted_pairs: usize,
    pub dropped_overlong: usize,
    /// style_id -> datastore content checksum.
    pub store_checksums: BTreeMap<String, u32>,
}

impl DatasetMeta {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&data).map_err(|e| Error::Format(format!("dataset meta: {e}")))
    }
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn augment_text(prompt: &str, text: &str) -> String {
    format!("{prompt} {SEPARATOR_TEXT} {text}")
}

/// Nearest stored sentence to `query_text`, excluding entries whose text
/// equals `exclude_text` (self-matches when the corpus built the store).
fn retrieve_prompt(
    store: &Datastore,
    provider: &dyn EmbeddingProvider,
    query_text: &str,
    exclude_text: Option<&str>,
) -> Result<Option<String>> {
    let query = provider.embed(&Sentence::new(query_text.to_string()));
    let exclude: HashSet<u32> = match exclude_text {
        Some(t) => store
            .values()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.text == t)
            .map(|(i, _)| i as u32)
            .collect(),
        None => HashSet::new(),
    };
    let result = store.query(&query, 1, &exclude)?;
    Ok(result.hits.first().map(|h| h.value.text.clone()))
}

/// Chooses the training-time prompt for one styled pair.
pub fn build_training_prompt(
    pair: &ParallelPair,
    store: &Datastore,
    provider: &dyn EmbeddingProvider,
    strategy: PromptStrategy,
    fixed_prompt: Option<&str>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<String>> {
    match strategy {
        PromptStrategy::RetrievedTarget => retrieve_prompt(
            store,
            provider,
            &pair.target.text,
            Some(&pair.target.text),
        ),
        PromptStrategy::RetrievedSource => retrieve_prompt(
            store,
            provider,
            &pair.source.text,
            Some(&pair.target.text),
        ),
        PromptStrategy::Random => {
            let ix = rng.gen_range(0..store.len()) as u32;
            Ok(store.value(ix).map(|s| s.text.clone()))
        }
        PromptStrategy::Fixed => fixed_prompt
            .map(|p| Some(p.to_string()))
            .ok_or_else(|| Error::Config("fixed strategy needs a prompt".into())),
    }
}

/// Chooses the inference-time prompt for one request.
pub fn select_prompt_inference(
    draft: &str,
    source: &str,
    store: &Datastore,
    provider: &dyn EmbeddingProvider,
    strategy: PromptStrategy,
    fixed_prompt: Option<&str>,
    seed: u64,
) -> Result<Option<String>> {
    match strategy {
        PromptStrategy::RetrievedTarget => retrieve_prompt(store, provider, draft, None),
        PromptStrategy::RetrievedSource => retrieve_prompt(store, provider, source, None),
        PromptStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ix = rng.gen_range(0..store.len()) as u32;
            Ok(store.value(ix).map(|s| s.text.clone()))
        }
        PromptStrategy::Fixed => fixed_prompt
            .map(|p| Some(p.to_string()))
            .ok_or_else(|| Error::Config("fixed strategy needs a prompt".into())),
    }
}

/// Builds the mixed training set: a seeded sample of the style-labelled
/// pairs is augmented with prompts, everything else passes through
/// unchanged. Augmented pairs that exceed `mix.max_len` words on either
/// side are dropped, so the output can be shorter than the input.
pub fn build_dataset(
    pairs: &[ParallelPair],
    stores: &BTreeMap<String, Datastore>,
    provider: &dyn EmbeddingProvider,
    strategy: PromptStrategy,
    fixed_prompt: Option<&str>,
    mix: &MixConfig,
) -> Result<(Vec<PromptedPair>, DatasetMeta)> {
    if !(0.0..=1.0).contains(&mix.prompted_fraction) {
        return Err(Error::Config(format!(
            "prompted_fraction {} out of [0, 1]",
            mix.prompted_fraction
        )));
    }
    let styled: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.style_label.is_some())
        .map(|(i, _)| i)
        .collect();
    for &i in &styled {
        let label = pairs[i].style_label.as_deref().unwrap();
        if !stores.contains_key(label) {
            return Err(Error::UnknownStyle(label.to_string()));
        }
    }

    let n_prompt = (mix.prompted_fraction * styled.len() as f64).round() as usize;
    let mut order = styled.clone();
    let mut select_rng = ChaCha8Rng::seed_from_u64(derive_seed(mix.seed, "prompt-select"));
    for i in (1..order.len()).rev() {
        let j = select_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let selected: HashSet<usize> = order.into_iter().take(n_prompt).collect();

    let mut prompt_rng = ChaCha8Rng::seed_from_u64(derive_seed(mix.seed, "prompt-pick"));
    let mut out = Vec::with_capacity(pairs.len());
    let mut dropped = 0usize;
    let mut prompted = 0usize;
    for (i, pair) in pairs.iter().enumerate() {
        if !selected.contains(&i) {
            out.push(PromptedPair {
                source: pair.source.text.clone(),
                target: pair.target.text.clone(),
                style_label: pair.style_label.clone(),
                prompt: None,
            });
            continue;
        }
        let label = pair.style_label.as_deref().unwrap();
        let store = &stores[label];
        let prompt =
            build_training_prompt(pair, store, provider, strategy, fixed_prompt, &mut prompt_rng)?;
        let Some(prompt) = prompt else {
            // Retrieval found nothing (store holds only the pair itself);
            // fall back to the plain pair.
            out.push(PromptedPair {
                source: pair.source.text.clone(),
                target: pair.target.text.clone(),
                style_label: pair.style_label.clone(),
                prompt: None,
            });
            continue;
        };
        let source = augment_text(&prompt, &pair.source.text);
        let target = augment_text(&prompt, &pair.target.text);
        if word_count(&source) > mix.max_len || word_count(&target) > mix.max_len {
            dropped += 1;
            continue;
        }
        prompted += 1;
        out.push(PromptedPair {
            source,
            target,
            style_label: pair.style_label.clone(),
            prompt: Some(prompt),
        });
    }

    let meta = DatasetMeta {
        strategy: strategy.name().to_string(),
        seed: mix.seed,
        prompted_fraction: mix.prompted_fraction,
        input_pairs: pairs.len(),
        prompted_pairs: prompted,
        dropped_overlong: dropped,
        store_checksums: stores
            .iter()
            .map(|(k, v)| (k.clone(), v.checksum()))
            .collect(),
    };
    Ok((out, meta))
}

/// Pools several styled datastores into one style-agnostic store for the
/// unsupervised training variant. Entry order follows the input order.
pub fn unsupervised_pool(stores: &[&Datastore]) -> Result<Datastore> {
    let first = stores
        .first()
        .ok_or_else(|| Error::Config("cannot pool zero datastores".into()))?;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for s in stores {
        if s.metric() != first.metric() || s.dim() != first.dim() {
            return Err(Error::Config(
                "pooled datastores must share metric and dimension".into(),
            ));
        }
        keys.extend_from_slice(s.keys());
        values.extend_from_slice(s.values());
    }
    Datastore::from_parts("pooled", first.metric(), first.dim(), keys, values)
}
