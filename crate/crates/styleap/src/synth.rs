//! Synthetic stylized-translation task generator.
//!
//! The task is a deterministic word-for-word language: source word `sa{i}`
//! translates to `ta{i}`, and entity tokens `ent{t}` are copied verbatim.
//! Every sentence belongs to a topic; the topic picks the entity, biases
//! the content words and fixes the style-marker variant. Styled text is
//! the plain text with one marker inserted after the first token and one
//! appended, drawn from the style's marker lexicon.
//!
//! The topic coupling is what gives retrieval its edge: a draft
//! translation shares content words with same-topic datastore entries, so
//! the retrieved prompt carries the marker variant the reference uses.
//! Topics are sampled with a quadratic skew, which keeps high-index
//! variants rare; a fixed prompt pinned to the rarest topic is therefore
//! a strictly weaker choice than random sampling.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelPair, Sentence, StyledCorpus};
use crate::error::{Error, Result};
use crate::eval::{MultiwayItem, MultiwayTestSet, StyleClassifier};
use crate::util::derive_seed;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    /// Parallel pairs; about half keep a plain target, the rest split
    /// evenly across styles with styled targets.
    pub n_parallel: usize,
    /// Sentences per styled monolingual corpus.
    pub n_mono_per_style: usize,
    pub n_test_items: usize,
    /// Distinct sa/ta content word types.
    pub n_word_types: usize,
    pub n_topics: usize,
    /// Probability that a sentence mentions its topic entity.
    pub entity_prob: f64,
    pub min_content_words: usize,
    pub max_content_words: usize,
    pub styles: Vec<String>,
    /// Marker words per style; the variant used is `topic % variants`.
    pub variants_per_style: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            n_parallel: 4000,
            n_mono_per_style: 600,
            n_test_items: 200,
            n_word_types: 60,
            n_topics: 12,
            entity_prob: 0.5,
            min_content_words: 3,
            max_content_words: 6,
            styles: vec!["archaic".into(), "formal".into()],
            variants_per_style: 3,
            seed: 7,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.styles.len() < 2 {
            return Err(Error::Config("need at least two styles".into()));
        }
        if self.n_word_types < 10 || self.n_topics == 0 || self.variants_per_style == 0 {
            return Err(Error::Config("word types, topics and variants must be positive".into()));
        }
        if self.min_content_words == 0 || self.min_content_words > self.max_content_words {
            return Err(Error::Config("bad content word range".into()));
        }
        if !(0.0..=1.0).contains(&self.entity_prob) {
            return Err(Error::Config("entity_prob out of [0, 1]".into()));
        }
        Ok(())
    }

    /// Marker word for a style and variant. Marker shapes are distinct
    /// from content words and entities.
    pub fn marker(&self, style_index: usize, variant: usize) -> String {
        format!("mk{style_index}x{variant}")
    }

    pub fn lexicons(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.styles
            .iter()
            .enumerate()
            .map(|(si, s)| {
                let set = (0..self.variants_per_style)
                    .map(|v| self.marker(si, v))
                    .collect();
                (s.clone(), set)
            })
            .collect()
    }
}

/// One generated sentence skeleton, before styling.
#[derive(Clone, Debug)]
struct Skeleton {
    topic: usize,
    has_entity: bool,
    /// Content word indices into the sa/ta vocabulary.
    words: Vec<usize>,
}

/// Everything the desk experiment needs, generated in one call.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub parallel: Vec<ParallelPair>,
    pub mono: BTreeMap<String, StyledCorpus>,
    pub test: MultiwayTestSet,
    pub classifier: StyleClassifier,
    /// Per style: a styled sentence of the rarest topic, for the fixed
    /// prompt ablation.
    pub fixed_prompts: BTreeMap<String, String>,
}

struct Gen<'a> {
    spec: &'a SyntheticTaskSpec,
}

impl Gen<'_> {
    /// Quadratically skewed topic: low indices common, high indices rare.
    fn sample_topic(&self, rng: &mut ChaCha8Rng) -> usize {
        let r: f64 = rng.gen();
        ((r * r * self.spec.n_topics as f64) as usize).min(self.spec.n_topics - 1)
    }

    fn sample_skeleton(&self, rng: &mut ChaCha8Rng) -> Skeleton {
        let spec = self.spec;
        let topic = self.sample_topic(rng);
        let has_entity = rng.gen::<f64>() < spec.entity_prob;
        let n = rng.gen_range(spec.min_content_words..=spec.max_content_words);
        // Topic words come from a window of the vocabulary, so sentences
        // of one topic overlap heavily.
        let window = 8.min(spec.n_word_types);
        let base = (topic * spec.n_word_types) / spec.n_topics;
        let words = (0..n)
            .map(|_| (base + rng.gen_range(0..window)) % spec.n_word_types)
            .collect();
        Skeleton {
            topic,
            has_entity,
            words,
        }
    }

    fn side(&self, sk: &Skeleton, prefix: &str) -> String {
        let mut parts = Vec::with_capacity(sk.words.len() + 1);
        if sk.has_entity {
            parts.push(format!("ent{}", sk.topic));
        }
        parts.extend(sk.words.iter().map(|w| format!("{prefix}{w}")));
        parts.join(" ")
    }

    fn source(&self, sk: &Skeleton) -> String {
        self.side(sk, "sa")
    }

    fn target(&self, sk: &Skeleton) -> String {
        self.side(sk, "ta")
    }

    fn variant(&self, topic: usize) -> usize {
        topic % self.spec.variants_per_style
    }

    /// Plain target text with the style's markers woven in.
    fn stylize(&self, plain: &str, style_index: usize, topic: usize) -> String {
        let m = self.spec.marker(style_index, self.variant(topic));
        let words: Vec<&str> = plain.split_whitespace().collect();
        let mut out = Vec::with_capacity(words.len() + 2);
        out.push(words[0].to_string());
        out.push(m.clone());
        out.extend(words[1..].iter().map(|w| w.to_string()));
        out.push(m);
        out.join(" ")
    }
}

/// Generates the full experiment inputs for one seed.
pub fn generate(spec: &SyntheticTaskSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let g = Gen { spec };
    let n_styles = spec.styles.len();

    // Parallel corpus: even indices plain, odd indices styled round-robin.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "parallel"));
    let mut parallel = Vec::with_capacity(spec.n_parallel);
    for i in 0..spec.n_parallel {
        let sk = g.sample_skeleton(&mut rng);
        let source = g.source(&sk);
        if i % 2 == 0 {
            parallel.push(ParallelPair {
                source: Sentence::new(source),
                target: Sentence::new(g.target(&sk)),
                style_label: None,
            });
        } else {
            let si = (i / 2) % n_styles;
            let target = g.stylize(&g.target(&sk), si, sk.topic);
            parallel.push(ParallelPair {
                source: Sentence::new(source),
                target: Sentence::new(target),
                style_label: Some(spec.styles[si].clone()),
            });
        }
    }

    // Styled monolingual corpora (target language only).
    let mut mono = BTreeMap::new();
    for (si, style) in spec.styles.iter().enumerate() {
        let mut mrng =
            ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("mono-{style}")));
        let sentences = (0..spec.n_mono_per_style)
            .map(|_| {
                let sk = g.sample_skeleton(&mut mrng);
                Sentence::new(g.stylize(&g.target(&sk), si, sk.topic))
            })
            .collect();
        mono.insert(
            style.clone(),
            StyledCorpus {
                style_id: style.clone(),
                language: "trg".into(),
                sentences,
            },
        );
    }

    // Multiway test set: one reference per style for every item.
    let mut trng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "test"));
    let mut items = Vec::with_capacity(spec.n_test_items);
    for _ in 0..spec.n_test_items {
        let sk = g.sample_skeleton(&mut trng);
        let plain = g.target(&sk);
        let references = spec
            .styles
            .iter()
            .enumerate()
            .map(|(si, s)| (s.clone(), Sentence::new(g.stylize(&plain, si, sk.topic))))
            .collect();
        items.push(MultiwayItem {
            source: Sentence::new(g.source(&sk)),
            references,
        });
    }
    let test = MultiwayTestSet { items };

    // Fixed prompts: rarest topic, entity included, mid-length content.
    let mut fixed_prompts = BTreeMap::new();
    let rare_topic = spec.n_topics - 1;
    for (si, style) in spec.styles.iter().enumerate() {
        let sk = Skeleton {
            topic: rare_topic,
            has_entity: true,
            words: (0..spec.min_content_words.max(3))
                .map(|k| ((rare_topic * spec.n_word_types) / spec.n_topics + k) % spec.n_word_types)
                .collect(),
        };
        fixed_prompts.insert(style.clone(), g.stylize(&g.target(&sk), si, rare_topic));
    }

    Ok(SyntheticData {
        parallel,
        mono,
        test,
        classifier: StyleClassifier::new(spec.lexicons()),
        fixed_prompts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            n_parallel: 200,
            n_mono_per_style: 50,
            n_test_items: 30,
            ..SyntheticTaskSpec::default()
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = small_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.parallel, b.parallel);
        assert_eq!(a.test, b.test);
        for (s, c) in &a.mono {
            assert_eq!(c.sentences, b.mono[s].sentences);
        }
        let other = generate(&SyntheticTaskSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.parallel, other.parallel);
    }

    #[test]
    fn plain_and_styled_pairs_are_mixed_evenly() {
        let d = generate(&small_spec()).unwrap();
        let plain = d.parallel.iter().filter(|p| p.style_label.is_none()).count();
        let styled = d.parallel.len() - plain;
        assert_eq!(plain, 100);
        assert_eq!(styled, 100);
        // Styles split the styled half evenly.
        let a = d
            .parallel
            .iter()
            .filter(|p| p.style_label.as_deref() == Some("archaic"))
            .count();
        assert_eq!(a, 50);
    }

    #[test]
    fn styled_targets_carry_their_style_markers_only() {
        let d = generate(&small_spec()).unwrap();
        for p in &d.parallel {
            match &p.style_label {
                None => assert_eq!(d.classifier.classify(&p.target.text), None),
                Some(s) => assert_eq!(d.classifier.classify(&p.target.text), Some(s.as_str())),
            }
        }
    }

    #[test]
    fn references_differ_from_plain_only_by_markers() {
        let spec = small_spec();
        let d = generate(&spec).unwrap();
        for item in &d.test.items {
            let refs: Vec<&Sentence> = item.references.values().collect();
            // Stripping markers from any reference yields the same plain
            // sentence, itself the word-for-word translation of the source.
            let markers: BTreeSet<String> = spec
                .lexicons()
                .values()
                .flat_map(|s| s.iter().cloned())
                .collect();
            let mut stripped: Vec<String> = refs
                .iter()
                .map(|r| {
                    r.text
                        .split_whitespace()
                        .filter(|w| !markers.contains(*w))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            stripped.dedup();
            assert_eq!(stripped.len(), 1);
            let expected: Vec<String> = item
                .source
                .text
                .split_whitespace()
                .map(|w| {
                    if let Some(rest) = w.strip_prefix("sa") {
                        format!("ta{rest}")
                    } else {
                        w.to_string()
                    }
                })
                .collect();
            assert_eq!(stripped[0], expected.join(" "));
        }
    }

    #[test]
    fn topic_skew_makes_high_variants_rare() {
        let spec = SyntheticTaskSpec {
            n_parallel: 2000,
            ..small_spec()
        };
        let d = generate(&spec).unwrap();
        let g = Gen { spec: &spec };
        let mut counts = vec![0usize; spec.variants_per_style];
        for p in &d.parallel {
            if p.style_label.is_some() {
                // Recover the variant from the emitted marker.
                let marker = p.target.text.split_whitespace().nth(1).unwrap();
                let v: usize = marker.split('x').nth(1).unwrap().parse().unwrap();
                counts[v] += 1;
            }
        }
        let _ = g;
        assert!(counts[0] > counts[spec.variants_per_style - 1]);
    }

    #[test]
    fn test_set_validates_and_covers_all_styles() {
        let d = generate(&small_spec()).unwrap();
        d.test.validate().unwrap();
        assert_eq!(d.test.styles(), vec!["archaic".to_string(), "formal".to_string()]);
        assert_eq!(d.test.len(), 30);
    }

    #[test]
    fn fixed_prompts_are_classified_styled_sentences() {
        let d = generate(&small_spec()).unwrap();
        for (style, prompt) in &d.fixed_prompts {
            assert_eq!(d.classifier.classify(prompt), Some(style.as_str()));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small_spec();
        s.styles = vec!["only".into()];
        assert!(generate(&s).is_err());
        let mut s2 = small_spec();
        s2.entity_prob = 1.4;
        assert!(generate(&s2).is_err());
        let mut s3 = small_spec();
        s3.min_content_words = 9;
        s3.max_content_words = 3;
        assert!(generate(&s3).is_err());
    }
}
