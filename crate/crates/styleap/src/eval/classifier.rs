//! Rule-based style classification and the transfer ratio.
//!
//! A hypothesis is classified as style S iff it contains at least one
//! token from S's marker lexicon and none from any competing lexicon;
//! ambiguous or marker-free hypotheses stay unclassified and count
//! against the ratio.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StyleClassifier {
    /// style_id -> marker tokens.
    pub lexicons: BTreeMap<String, BTreeSet<String>>,
}

impl StyleClassifier {
    pub fn new(lexicons: BTreeMap<String, BTreeSet<String>>) -> Self {
        StyleClassifier { lexicons }
    }

    pub fn styles(&self) -> impl Iterator<Item = &str> {
        self.lexicons.keys().map(|s| s.as_str())
    }

    pub fn covers(&self, style_id: &str) -> bool {
        self.lexicons.contains_key(style_id)
    }

    /// Deterministic, total classification of one sentence.
    pub fn classify(&self, text: &str) -> Option<&str> {
        let tokens: BTreeSet<&str> = text.split_whitespace().collect();
        let mut matched: Option<&str> = None;
        for (style, lexicon) in &self.lexicons {
            if lexicon.iter().any(|m| tokens.contains(m.as_str())) {
                if matched.is_some() {
                    return None; // markers from competing styles
                }
                matched = Some(style);
            }
        }
        matched
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&data).map_err(|e| Error::Format(format!("classifier: {e}")))
    }
}

/// Percentage of hypotheses classified as the requested style.
pub fn transfer_ratio(
    hypotheses: &[String],
    style_id: &str,
    classifier: &StyleClassifier,
) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Config("empty hypothesis set for transfer ratio".into()));
    }
    if !classifier.covers(style_id) {
        return Err(Error::UnknownStyle(style_id.to_string()));
    }
    let hits = hypotheses
        .iter()
        .filter(|h| classifier.classify(h) == Some(style_id))
        .count();
    Ok(100.0 * hits as f64 / hypotheses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classifier() -> StyleClassifier {
        let mut lex = BTreeMap::new();
        lex.insert(
            "A".to_string(),
            ["aya", "ayo"].iter().map(|s| s.to_string()).collect(),
        );
        lex.insert(
            "B".to_string(),
            ["boh", "bah"].iter().map(|s| s.to_string()).collect(),
        );
        StyleClassifier::new(lex)
    }

    #[test]
    fn all_marked_is_100() {
        let c = classifier();
        let hyps: Vec<String> = (0..10).map(|i| format!("w{i} aya w{i}")).collect();
        assert_eq!(transfer_ratio(&hyps, "A", &c).unwrap(), 100.0);
    }

    #[test]
    fn none_marked_is_0() {
        let c = classifier();
        let hyps: Vec<String> = (0..10).map(|i| format!("w{i} x y")).collect();
        assert_eq!(transfer_ratio(&hyps, "A", &c).unwrap(), 0.0);
    }

    #[test]
    fn mixed_fixture_counts_exactly() {
        let c = classifier();
        let mut hyps = Vec::new();
        for i in 0..50 {
            if i < 37 {
                hyps.push(format!("s{i} ayo"));
            } else {
                hyps.push(format!("s{i} plain"));
            }
        }
        assert!((transfer_ratio(&hyps, "A", &c).unwrap() - 74.0).abs() < 1e-12);
    }

    #[test]
    fn competing_markers_are_unclassified() {
        let c = classifier();
        assert_eq!(c.classify("x aya boh y"), None);
        assert_eq!(c.classify("x y"), None);
        assert_eq!(c.classify("x aya"), Some("A"));
    }

    #[test]
    fn disjoint_lexicon_ratios_do_not_double_count() {
        let c = classifier();
        let hyps: Vec<String> = vec!["a aya".into(), "b boh".into(), "c aya".into(), "d".into()];
        let ra = transfer_ratio(&hyps, "A", &c).unwrap();
        let rb = transfer_ratio(&hyps, "B", &c).unwrap();
        assert!(ra + rb <= 100.0);
    }

    #[test]
    fn empty_input_and_unknown_style_are_errors() {
        let c = classifier();
        assert!(transfer_ratio(&[], "A", &c).is_err());
        let hyps = vec!["x".to_string()];
        assert!(matches!(
            transfer_ratio(&hyps, "Z", &c),
            Err(Error::UnknownStyle(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicons.json");
        let c = classifier();
        c.save(&path).unwrap();
        let loaded = StyleClassifier::load(&path).unwrap();
        assert_eq!(loaded.lexicons, c.lexicons);
    }
}
