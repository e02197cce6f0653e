//! Evaluation: corpus BLEU against multiway stylized references, the
//! style-transfer ratio via a pluggable rule-based classifier, system
//! comparison reports, and the corpus-size sweep driver.

mod bleu;
mod classifier;
mod report;
pub mod sweep;

pub use bleu::{corpus_bleu, BleuScore, BleuTokenization, Smoothing, MAX_ORDER};
pub use classifier::{transfer_ratio, StyleClassifier};
pub use report::{
    run_comparison, ComparisonReport, MultiwayItem, MultiwayTestSet, ReportRow, SystemOutput,
};
pub use sweep::{size_sweep, SweepInputs, SweepReport, SweepRow};
