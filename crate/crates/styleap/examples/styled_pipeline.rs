//! End-to-end two-pass stylized translation on the synthetic task:
//! generate data, train a joint model on prompt-augmented pairs, then
//! watch the pipeline draft, retrieve a prompt and re-translate.
//!
//! Training is kept short, so a sentence may occasionally fall back to
//! its draft; the full experiment uses more steps.

use styleap::datastore::Metric;
use styleap::embedder::HashEmbedder;
use styleap::experiment::{build_stores, make_pipeline, tokenizer_for, train_joint_model, DeskConfig};
use styleap::model::TrainConfig;
use styleap::pipeline::StyledRequest;
use styleap::prompt::MixConfig;
use styleap::synth::{generate, SyntheticTaskSpec};

fn main() -> styleap::Result<()> {
    let data = generate(&SyntheticTaskSpec {
        n_parallel: 1200,
        n_mono_per_style: 300,
        n_test_items: 20,
        ..SyntheticTaskSpec::default()
    })?;

    let cfg = DeskConfig {
        embed_dim: 128,
        mix: MixConfig {
            prompted_fraction: 1.0,
            max_len: 64,
            seed: 1,
        },
        train: TrainConfig {
            max_steps: 500,
            batch_tokens: 1500,
            warmup_steps: 80,
            eval_every: 100,
            ..TrainConfig::default()
        },
        ..DeskConfig::default()
    };

    let tokenizer = tokenizer_for(&data.parallel, &data.mono, cfg.max_vocab, cfg.min_frequency)?;
    let provider = HashEmbedder::new(cfg.embed_dim);
    let stores = build_stores(&data.mono, &provider, Metric::Cosine)?;
    println!("vocab {}, training...", tokenizer.vocab_size());
    let (model, stats) = train_joint_model(&data.parallel, &stores, &provider, &tokenizer, &cfg)?;
    println!("final loss {:.3}", stats.final_train_loss);

    let pipeline = make_pipeline(model, tokenizer, stores, cfg.embed_dim);
    for (i, item) in data.test.items.iter().take(3).enumerate() {
        for style in data.mono.keys() {
            let result = pipeline.translate_styled(
                &StyledRequest {
                    source: item.source.text.clone(),
                    style_id: style.clone(),
                },
                i as u64,
            )?;
            println!("source [{style}]: {}", item.source.text);
            println!("  draft:      {}", result.draft);
            println!("  prompt:     {:?}", result.prompt_used);
            println!("  hypothesis: {}", result.hypothesis);
            println!("  reference:  {}", item.references[style].text);
            if result.fallback_used {
                println!("  (fell back to the draft)");
            }
        }
    }
    println!("decode invocations: {}", pipeline.invocations());
    Ok(())
}
