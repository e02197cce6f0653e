//! Deterministic greedy longest-match subword tokenizer.
//!
//! Words are prefixed with [`WORD_MARK`] and matched greedily against the
//! piece vocabulary, falling back to single characters and finally to
//! `<unk>`. Special-token literals occurring in raw text are escaped with
//! [`ESCAPE_CHAR`] so that special ids are never produced by tokenizing
//! ordinary text.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{StyledCorpus, TokenId};
use crate::error::{Error, Result};

/// Marks the start of a word inside piece strings (U+2581, as in common
/// subword tooling).
pub const WORD_MARK: char = '\u{2581}';

/// Reserved escape prefix for special-token literals found in raw text.
pub const ESCAPE_CHAR: char = '\u{241b}';

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const SEP_ID: TokenId = 4;

/// The reserved token inventory: separator, per-style tags and the
/// pad/bos/eos/unk housekeeping tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: String,
    pub bos: String,
    pub eos: String,
    pub unk: String,
    pub separator: String,
    /// style_id -> tag literal, for the tag-tuning comparator.
    pub style_tags: BTreeMap<String, String>,
}

impl SpecialTokens {
    pub fn for_styles<S: AsRef<str>>(styles: impl IntoIterator<Item = S>) -> Self {
        let mut tags = BTreeMap::new();
        for s in styles {
            let s = s.as_ref();
            tags.insert(s.to_string(), format!("[tag:{s}]"));
        }
        SpecialTokens {
            pad: "<pad>".into(),
            bos: "<bos>".into(),
            eos: "<eos>".into(),
            unk: "<unk>".into(),
            separator: "[s]".into(),
            style_tags: tags,
        }
    }

    fn literals(&self) -> Vec<&str> {
        let mut lits = vec![
            self.pad.as_str(),
            self.bos.as_str(),
            self.eos.as_str(),
            self.unk.as_str(),
            self.separator.as_str(),
        ];
        lits.extend(self.style_tags.values().map(|s| s.as_str()));
        lits
    }
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens::for_styles(Vec::<&str>::new())
    }
}

/// Trained tokenizer: dense vocabulary (specials first), greedy
/// longest-match segmentation rules, and the frequency settings it was
/// trained with. Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenizerModel {
    vocab: Vec<String>,
    specials: SpecialTokens,
    n_special: usize,
    min_frequency: usize,
    max_vocab: usize,
    #[serde(skip)]
    lookup: HashMap<String, TokenId>,
    #[serde(skip)]
    max_piece_chars: usize,
}

impl TokenizerModel {
    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        self.max_piece_chars = self
            .vocab
            .iter()
            .skip(self.n_special)
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(1);
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    pub fn n_special(&self) -> usize {
        self.n_special
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id as usize).map(|s| s.as_str())
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.n_special
    }

    pub fn sep_id(&self) -> TokenId {
        SEP_ID
    }

    /// Tag token id for a style, if registered.
    pub fn tag_id(&self, style_id: &str) -> Option<TokenId> {
        let tag = self.specials.style_tags.get(style_id)?;
        self.lookup.get(tag).copied()
    }

    fn escape(&self, text: &str) -> String {
        let esc = ESCAPE_CHAR.to_string();
        let mut s = text.replace(ESCAPE_CHAR, &format!("{esc}{esc}"));
        s = s.replace(WORD_MARK, &format!("{esc}{WORD_MARK}"));
        for lit in self.specials.literals() {
            s = s.replace(lit, &format!("{esc}{lit}"));
        }
        s
    }

    fn unescape(text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut chars = text.chars();
        while let Some(c) = chars.next() {
            if c == ESCAPE_CHAR {
                if let Some(next) = chars.next() {
                    out.push(next);
                }
            } else {
                out.push(c);
            }
        }
        out
    }

    /// Greedy longest-match over one marked word (`WORD_MARK` + word).
    fn match_word(&self, marked: &[char], ids: &mut Vec<TokenId>) {
        let n = marked.len();
        let mut i = 0;
        while i < n {
            let mut matched = None;
            let max_len = self.max_piece_chars.min(n - i);
            for len in (1..=max_len).rev() {
                let cand: String = marked[i..i + len].iter().collect();
                if let Some(&id) = self.lookup.get(&cand) {
                    if !self.is_special(id) {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    i += len;
                }
                None => {
                    ids.push(UNK_ID);
                    i += 1;
                }
            }
        }
    }

    /// Tokenize raw text. Total: unknown spans map to `<unk>`, and
    /// special-token literals are escaped, never emitted as special ids.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        if text.trim().is_empty() {
            return Vec::new();
        }
        let escaped = self.escape(text);
        let mut ids = Vec::new();
        for word in escaped.split_whitespace() {
            let marked: Vec<char> = std::iter::once(WORD_MARK).chain(word.chars()).collect();
            self.match_word(&marked, &mut ids);
        }
        ids
    }

    /// Tokenize text in which whole words equal to the separator or a tag
    /// literal denote the genuine special token. This is the reader for
    /// augmented dataset TSVs, where `[s]` is a real separator.
    pub fn tokenize_marked(&self, text: &str) -> Vec<TokenId> {
        if text.trim().is_empty() {
            return Vec::new();
        }
        let tag_ids: HashMap<&str, TokenId> = self
            .specials
            .style_tags
            .values()
            .filter_map(|lit| self.lookup.get(lit).map(|&id| (lit.as_str(), id)))
            .collect();
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            if word == self.specials.separator {
                ids.push(SEP_ID);
            } else if let Some(&id) = tag_ids.get(word) {
                ids.push(id);
            } else {
                let escaped = self.escape(word);
                for w in escaped.split_whitespace() {
                    let marked: Vec<char> =
                        std::iter::once(WORD_MARK).chain(w.chars()).collect();
                    self.match_word(&marked, &mut ids);
                }
            }
        }
        ids
    }

    /// Reconstruct text from ids. Pad/bos/eos are dropped; separator and
    /// tags render as their literals; in-vocabulary text round-trips.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                PAD_ID | BOS_ID | EOS_ID => continue,
                UNK_ID => {
                    s.push(WORD_MARK);
                    s.push_str(&self.specials.unk);
                }
                _ if self.is_special(id) => {
                    s.push(WORD_MARK);
                    s.push_str(&self.vocab[id as usize]);
                }
                _ => s.push_str(&self.vocab[id as usize]),
            }
        }
        let spaced: String = s
            .chars()
            .map(|c| if c == WORD_MARK { ' ' } else { c })
            .collect();
        Self::unescape(spaced.trim())
    }

    /// Serialize the model to a JSON file (deterministic bytes).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: TokenizerModel =
            serde_json::from_str(&data).map_err(|e| Error::Format(format!("tokenizer: {e}")))?;
        model.rebuild_lookup();
        Ok(model)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("tokenizer model serializes")
    }
}

/// Train the tokenizer over the given corpora. Deterministic given
/// identical input order: pieces are ranked by (frequency desc, string
/// asc). Every character seen in training is kept as a fallback piece, so
/// segmentation is total over the training alphabet.
pub fn train_tokenizer(
    corpora: &[StyledCorpus],
    max_vocab: usize,
    min_frequency: usize,
) -> Result<TokenizerModel> {
    if corpora.is_empty() || corpora.iter().all(|c| c.sentences.is_empty()) {
        return Err(Error::Config("cannot train tokenizer on an empty corpus".into()));
    }
    let specials = SpecialTokens::for_styles(corpora.iter().map(|c| c.style_id.as_str()));
    let n_special = 5 + specials.style_tags.len();
    if max_vocab < n_special + 16 {
        return Err(Error::Config(format!(
            "max_vocab {max_vocab} too small: need at least {} (specials + 16)",
            n_special + 16
        )));
    }

    // Probe model used only for escaping during counting.
    let mut probe = TokenizerModel {
        vocab: Vec::new(),
        specials: specials.clone(),
        n_special,
        min_frequency,
        max_vocab,
        lookup: HashMap::new(),
        max_piece_chars: 1,
    };
    probe.rebuild_lookup();

    let mut word_counts: HashMap<String, usize> = HashMap::new();
    let mut char_counts: HashMap<char, usize> = HashMap::new();
    for corpus in corpora {
        for sentence in &corpus.sentences {
            let escaped = probe.escape(&sentence.text);
            for word in escaped.split_whitespace() {
                let marked: String = std::iter::once(WORD_MARK).chain(word.chars()).collect();
                for c in marked.chars() {
                    *char_counts.entry(c).or_insert(0) += 1;
                }
                *word_counts.entry(marked).or_insert(0) += 1;
            }
        }
    }

    let mut vocab: Vec<String> = vec![
        specials.pad.clone(),
        specials.bos.clone(),
        specials.eos.clone(),
        specials.unk.clone(),
        specials.separator.clone(),
    ];
    vocab.extend(specials.style_tags.values().cloned());
    debug_assert_eq!(vocab.len(), n_special);

    let mut chars: Vec<(char, usize)> = char_counts.into_iter().collect();
    chars.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if n_special + chars.len() > max_vocab {
        return Err(Error::Config(format!(
            "max_vocab {max_vocab} too small for {} character pieces",
            chars.len()
        )));
    }
    vocab.extend(chars.iter().map(|(c, _)| c.to_string()));

    let mut words: Vec<(String, usize)> = word_counts
        .into_iter()
        .filter(|(w, n)| *n >= min_frequency && w.chars().count() > 1)
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (w, _) in words {
        if vocab.len() >= max_vocab {
            break;
        }
        vocab.push(w);
    }

    let mut model = TokenizerModel {
        vocab,
        specials,
        n_special,
        min_frequency,
        max_vocab,
        lookup: HashMap::new(),
        max_piece_chars: 1,
    };
    model.rebuild_lookup();
    Ok(model)
}
