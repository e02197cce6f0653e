//! Multiway test sets and the system-comparison report: per-system,
//! per-style BLEU against the matching reference plus the transfer ratio.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::eval::bleu::{corpus_bleu, BleuTokenization, Smoothing};
use crate::eval::classifier::{transfer_ratio, StyleClassifier};

/// One source sentence with one reference per declared style.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiwayItem {
    pub source: Sentence,
    pub references: BTreeMap<String, Sentence>,
}

/// A test set where every item carries a reference for every style.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MultiwayTestSet {
    pub items: Vec<MultiwayItem>,
}

impl MultiwayTestSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn styles(&self) -> Vec<String> {
        self.items
            .first()
            .map(|i| i.references.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Every item must reference every declared style.
    pub fn validate(&self) -> Result<()> {
        let styles = self.styles();
        for (i, item) in self.items.iter().enumerate() {
            let keys: Vec<String> = item.references.keys().cloned().collect();
            if keys != styles {
                return Err(Error::Invalid(format!(
                    "test item {i} has references {keys:?}, expected {styles:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn references_for(&self, style_id: &str) -> Result<Vec<String>> {
        self.items
            .iter()
            .map(|item| {
                item.references
                    .get(style_id)
                    .map(|s| s.text.clone())
                    .ok_or_else(|| Error::UnknownStyle(style_id.to_string()))
            })
            .collect()
    }

    /// JSON-lines persistence: one item per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        for (i, line) in data.lines().enumerate() {
            let item: MultiwayItem = serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            items.push(item);
        }
        let set = MultiwayTestSet { items };
        set.validate()?;
        Ok(set)
    }
}

/// One system's hypotheses: style_id -> one hypothesis per test item.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemOutput {
    pub name: String,
    pub hypotheses: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub style: String,
    pub bleu: f64,
    pub transfer_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    /// system -> macro average BLEU over styles.
    pub macro_bleu: BTreeMap<String, f64>,
    /// system -> macro average transfer ratio over styles.
    pub macro_ratio: BTreeMap<String, f64>,
}

impl ComparisonReport {
    pub fn row(&self, system: &str, style: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.style == style)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,style,bleu,transfer_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.4},{:.2}\n",
                r.system, r.style, r.bleu, r.transfer_ratio
            ));
        }
        out
    }

    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:<12} {:>8} {:>10}\n",
            "system", "style", "BLEU", "ratio(%)"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:<12} {:>8.2} {:>10.1}\n",
                r.system, r.style, r.bleu, r.transfer_ratio
            ));
        }
        for (system, avg) in &self.macro_bleu {
            out.push_str(&format!(
                "{:<16} {:<12} {:>8.2} {:>10.1}\n",
                system, "(macro)", avg, self.macro_ratio[system]
            ));
        }
        out
    }
}

/// Score every system against the matching-style references and the
/// style classifier. Deterministic; rows ordered by input system order,
/// then style order.
pub fn run_comparison(
    systems: &[SystemOutput],
    testset: &MultiwayTestSet,
    classifier: &StyleClassifier,
    tokenization: BleuTokenization,
    smoothing: Smoothing,
) -> Result<ComparisonReport> {
    testset.validate()?;
    let styles = testset.styles();
    let mut rows = Vec::new();
    let mut macro_bleu = BTreeMap::new();
    let mut macro_ratio = BTreeMap::new();
    for system in systems {
        let mut bleu_sum = 0.0;
        let mut ratio_sum = 0.0;
        for style in &styles {
            let hyps = system.hypotheses.get(style).ok_or_else(|| {
                Error::Invalid(format!(
                    "system {:?} is missing hypotheses for style {style:?}",
                    system.name
                ))
            })?;
            if hyps.len() != testset.len() {
                return Err(Error::Invalid(format!(
                    "system {:?} style {style:?}: {} hypotheses for {} items",
                    system.name,
                    hyps.len(),
                    testset.len()
                )));
            }
            let refs = testset.references_for(style)?;
            let bleu = corpus_bleu(hyps, &refs, tokenization, smoothing)?;
            let ratio = transfer_ratio(hyps, style, classifier)?;
            bleu_sum += bleu.score;
            ratio_sum += ratio;
            rows.push(ReportRow {
                system: system.name.clone(),
                style: style.clone(),
                bleu: bleu.score,
                transfer_ratio: ratio,
            });
        }
        macro_bleu.insert(system.name.clone(), bleu_sum / styles.len() as f64);
        macro_ratio.insert(system.name.clone(), ratio_sum / styles.len() as f64);
    }
    Ok(ComparisonReport {
        rows,
        macro_bleu,
        macro_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn testset() -> MultiwayTestSet {
        let mut items = Vec::new();
        for i in 0..4 {
            let mut references = BTreeMap::new();
            references.insert("A".into(), Sentence::new(format!("t{i} u{i} aya")));
            references.insert("B".into(), Sentence::new(format!("t{i} u{i} boh")));
            items.push(MultiwayItem {
                source: Sentence::new(format!("s{i} r{i}")),
                references,
            });
        }
        MultiwayTestSet { items }
    }

    fn classifier() -> StyleClassifier {
        let mut lex = BTreeMap::new();
        lex.insert("A".to_string(), BTreeSet::from(["aya".to_string()]));
        lex.insert("B".to_string(), BTreeSet::from(["boh".to_string()]));
        StyleClassifier::new(lex)
    }

    #[test]
    fn references_as_hypotheses_score_100() {
        let ts = testset();
        let mut hypotheses = BTreeMap::new();
        for style in ["A", "B"] {
            hypotheses.insert(style.to_string(), ts.references_for(style).unwrap());
        }
        let sys = SystemOutput {
            name: "oracle".into(),
            hypotheses,
        };
        let report = run_comparison(
            &[sys],
            &ts,
            &classifier(),
            BleuTokenization::AsGiven,
            Smoothing::None,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert!((row.bleu - 100.0).abs() < 1e-9);
            assert_eq!(row.transfer_ratio, 100.0);
        }
        assert!((report.macro_bleu["oracle"] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn report_shape_is_systems_by_styles() {
        let ts = testset();
        let mut systems = Vec::new();
        for name in ["sys1", "sys2", "sys3"] {
            let mut hypotheses = BTreeMap::new();
            for style in ["A", "B"] {
                hypotheses.insert(
                    style.to_string(),
                    (0..ts.len()).map(|i| format!("t{i} x")).collect(),
                );
            }
            systems.push(SystemOutput {
                name: name.into(),
                hypotheses,
            });
        }
        let report = run_comparison(
            &systems,
            &ts,
            &classifier(),
            BleuTokenization::AsGiven,
            Smoothing::Epsilon(0.01),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 3 * 2);
        assert!(report.to_csv().lines().count() == 7);
    }

    #[test]
    fn missing_hypotheses_is_error() {
        let ts = testset();
        let sys = SystemOutput {
            name: "incomplete".into(),
            hypotheses: BTreeMap::new(),
        };
        assert!(run_comparison(
            &[sys],
            &ts,
            &classifier(),
            BleuTokenization::AsGiven,
            Smoothing::None
        )
        .is_err());
    }

    #[test]
    fn testset_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.jsonl");
        let ts = testset();
        ts.save(&path).unwrap();
        let loaded = MultiwayTestSet::load(&path).unwrap();
        assert_eq!(loaded, ts);
    }

    #[test]
    fn validate_rejects_inconsistent_references() {
        let mut ts = testset();
        ts.items[2].references.remove("B");
        assert!(ts.validate().is_err());
    }
}
