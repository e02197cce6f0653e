//! Generate the synthetic task, build per-style datastores and construct
//! a prompt-augmented training set, printing a few of the resulting
//! pairs and the dataset sidecar.

use styleap::datastore::Metric;
use styleap::embedder::HashEmbedder;
use styleap::experiment::build_stores;
use styleap::prompt::{build_dataset, MixConfig, PromptStrategy};
use styleap::synth::{generate, SyntheticTaskSpec};

fn main() -> styleap::Result<()> {
    let data = generate(&SyntheticTaskSpec {
        n_parallel: 400,
        n_mono_per_style: 100,
        n_test_items: 20,
        ..SyntheticTaskSpec::default()
    })?;

    let provider = HashEmbedder::new(128);
    let stores = build_stores(&data.mono, &provider, Metric::Cosine)?;

    let mix = MixConfig {
        prompted_fraction: 0.5,
        max_len: 64,
        seed: 3,
    };
    let (pairs, meta) = build_dataset(
        &data.parallel,
        &stores,
        &provider,
        PromptStrategy::RetrievedTarget,
        None,
        &mix,
    )?;

    println!(
        "{} input pairs -> {} output pairs ({} prompted, {} dropped)",
        meta.input_pairs,
        pairs.len(),
        meta.prompted_pairs,
        meta.dropped_overlong
    );
    for pair in pairs.iter().filter(|p| p.prompt.is_some()).take(3) {
        println!("prompt: {:?}", pair.prompt.as_deref().unwrap());
        println!("  source: {:?}", pair.source);
        println!("  target: {:?}", pair.target);
    }
    for pair in pairs.iter().filter(|p| p.prompt.is_none()).take(1) {
        println!("plain pair kept as-is: {:?} -> {:?}", pair.source, pair.target);
    }
    println!("store checksums: {:?}", meta.store_checksums);
    Ok(())
}
