//! Retrieval-based style activation prompting for machine translation.
//!
//! The crate covers the full workflow at desk scale:
//!
//! 1. [`corpus`] — parallel / stylized-monolingual corpora, the subword
//!    tokenizer and the special-token inventory.
//! 2. [`embedder`] — pluggable sentence-to-vector providers (feature
//!    hashing by default, or the translator's learned embeddings).
//! 3. [`datastore`] — the (vector, sentence) key-value store with exact
//!    and IVF approximate search.
//! 4. [`prompt`] — prompt retrieval and prompt-augmented training data.
//! 5. [`model`] — a small trainable encoder–decoder transformer with
//!    attention extraction and a finite-difference gradient check.
//! 6. [`pipeline`] — two-pass stylized inference and the tag-tuning
//!    comparator path.
//! 7. [`eval`] — corpus BLEU, style-transfer ratio, comparison reports,
//!    ablation and corpus-size sweeps.
//! 8. [`synth`] — a deterministic synthetic bilingual style task for
//!    desk-scale experiments.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `styleap` binary for the end-to-end command line workflow.

pub mod cli;
pub mod corpus;
pub mod datastore;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
