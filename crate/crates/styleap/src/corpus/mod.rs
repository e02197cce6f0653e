//! Corpora: loading, validation, tokenization, filtering and persistence
//! of parallel and stylized-monolingual data.
//!
//! File formats:
//! - Parallel corpus TSV: `source<TAB>target<TAB>style_label?`, UTF-8,
//!   one pair per line, no header.
//! - Monolingual corpus: one sentence per line; the style id and language
//!   come from a JSON manifest `{style_id, language, path}` or are passed
//!   explicitly.

mod tokenizer;

pub use tokenizer::{
    train_tokenizer, SpecialTokens, TokenizerModel, BOS_ID, EOS_ID, ESCAPE_CHAR, PAD_ID, SEP_ID,
    UNK_ID, WORD_MARK,
};

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token id type; dense `0..|V|` with special tokens first.
pub type TokenId = u32;

/// One sentence: raw text plus its token ids once tokenized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<TokenId>,
}

impl Sentence {
    pub fn new(text: impl Into<String>) -> Self {
        Sentence {
            text: text.into(),
            tokens: Vec::new(),
        }
    }

    pub fn with_tokens(text: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        Sentence {
            text: text.into(),
            tokens,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }

    pub fn is_tokenized(&self) -> bool {
        !self.tokens.is_empty() || self.is_empty()
    }
}

/// A source/target pair, optionally carrying a style label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: Sentence,
    pub target: Sentence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_label: Option<String>,
}

impl ParallelPair {
    pub fn new(source: Sentence, target: Sentence, style_label: Option<String>) -> Self {
        ParallelPair {
            source,
            target,
            style_label,
        }
    }
}

/// A monolingual corpus whose sentences share one declared style.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyledCorpus {
    pub style_id: String,
    pub language: String,
    pub sentences: Vec<Sentence>,
}

impl StyledCorpus {
    pub fn new(style_id: impl Into<String>, language: impl Into<String>) -> Self {
        StyledCorpus {
            style_id: style_id.into(),
            language: language.into(),
            sentences: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Manifest describing a monolingual corpus file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub style_id: String,
    pub language: String,
    pub path: String,
}

/// Drop pairs whose source or target exceeds `max_len` tokens.
/// Order is preserved; the operation is idempotent.
pub fn length_filter(pairs: Vec<ParallelPair>, max_len: usize) -> Vec<ParallelPair> {
    pairs
        .into_iter()
        .filter(|p| p.source.tokens.len() <= max_len && p.target.tokens.len() <= max_len)
        .collect()
}

/// Load a parallel corpus from TSV. Malformed lines are reported with
/// their 1-based line number.
pub fn load_parallel_tsv(path: impl AsRef<Path>) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in data.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Malformed {
                line: i + 1,
                message: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        if fields[0].trim().is_empty() || fields[1].trim().is_empty() {
            return Err(Error::Malformed {
                line: i + 1,
                message: "empty source or target".into(),
            });
        }
        let style = fields
            .get(2)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(String::from);
        pairs.push(ParallelPair::new(
            Sentence::new(fields[0]),
            Sentence::new(fields[1]),
            style,
        ));
    }
    Ok(pairs)
}

/// Write a parallel corpus as TSV (inverse of [`load_parallel_tsv`]).
pub fn save_parallel_tsv(path: impl AsRef<Path>, pairs: &[ParallelPair]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.source.text);
        out.push('\t');
        out.push_str(&p.target.text);
        if let Some(style) = &p.style_label {
            out.push('\t');
            out.push_str(style);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a monolingual corpus: one sentence per line.
pub fn load_monolingual(
    path: impl AsRef<Path>,
    style_id: impl Into<String>,
    language: impl Into<String>,
) -> Result<StyledCorpus> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = StyledCorpus::new(style_id, language);
    if corpus.style_id.trim().is_empty() {
        return Err(Error::Config("style_id must be non-empty".into()));
    }
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            return Err(Error::Malformed {
                line: i + 1,
                message: "empty sentence".into(),
            });
        }
        corpus.sentences.push(Sentence::new(line));
    }
    Ok(corpus)
}

/// Write a monolingual corpus, one sentence per line.
pub fn save_monolingual(path: impl AsRef<Path>, corpus: &StyledCorpus) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in &corpus.sentences {
        writeln!(w, "{}", s.text).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load a monolingual corpus via its JSON manifest. The corpus path is
/// resolved relative to the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<StyledCorpus> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&data).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_monolingual(base.join(&manifest.path), manifest.style_id, manifest.language)
}

/// Tokenize every sentence of a corpus in place.
pub fn tokenize_corpus(model: &TokenizerModel, corpus: &mut StyledCorpus) {
    for s in &mut corpus.sentences {
        s.tokens = model.tokenize(&s.text);
    }
}

/// Tokenize both sides of every pair in place.
pub fn tokenize_pairs(model: &TokenizerModel, pairs: &mut [ParallelPair]) {
    for p in pairs {
        p.source.tokens = model.tokenize(&p.source.text);
        p.target.tokens = model.tokenize(&p.target.text);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_pairs() -> Vec<ParallelPair> {
        vec![
            ParallelPair::new(Sentence::new("a b"), Sentence::new("x y"), None),
            ParallelPair::new(Sentence::new("c"), Sentence::new("z"), Some("formal".into())),
            ParallelPair::new(Sentence::new("d e f"), Sentence::new("w"), None),
        ]
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        let pairs = toy_pairs();
        save_parallel_tsv(&path, &pairs).unwrap();
        let loaded = load_parallel_tsv(&path).unwrap();
        assert_eq!(loaded, pairs);
    }

    #[test]
    fn three_line_tsv_gives_three_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        std::fs::write(&path, "a\tb\nc\td\ne\tf\n").unwrap();
        assert_eq!(load_parallel_tsv(&path).unwrap().len(), 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        std::fs::write(&path, "a\tb\nonly-one-field\nc\td\n").unwrap();
        match load_parallel_tsv(&path) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_parallel_tsv("/nonexistent/x.tsv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn length_filter_drops_overlong_and_is_idempotent() {
        let mut pairs = toy_pairs();
        for p in &mut pairs {
            p.source.tokens = vec![5; p.source.text.split_whitespace().count()];
            p.target.tokens = vec![5; p.target.text.split_whitespace().count()];
        }
        let filtered = length_filter(pairs.clone(), 2);
        assert_eq!(filtered.len(), 2);
        assert_eq!(length_filter(filtered.clone(), 2), filtered);

        // All pairs within the limit: identity.
        assert_eq!(length_filter(pairs.clone(), 64), pairs);
    }

    #[test]
    fn monolingual_round_trip_via_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("mono.txt");
        let manifest_path = dir.path().join("mono.json");
        let mut corpus = StyledCorpus::new("archaic", "en");
        corpus.sentences.push(Sentence::new("thou art kind"));
        corpus.sentences.push(Sentence::new("what say you"));
        save_monolingual(&corpus_path, &corpus).unwrap();
        std::fs::write(
            &manifest_path,
            r#"{"style_id":"archaic","language":"en","path":"mono.txt"}"#,
        )
        .unwrap();
        let loaded = load_manifest(&manifest_path).unwrap();
        assert_eq!(loaded, corpus);
    }
}
