//! Train a tiny copy model from scratch and translate with greedy and
//! beam search decoding.

use styleap::model::{
    train, Dataset, DecodeOptions, ModelConfig, TrainConfig, TranslationModel,
};

fn main() -> styleap::Result<()> {
    // A toy task: copy the input sequence. Token ids 5.. are ordinary
    // vocabulary; ids 0..5 are reserved.
    let vocab = 30;
    let mut pairs = Vec::new();
    for a in 5..vocab {
        for b in 5..vocab {
            pairs.push((vec![a, b], vec![a, b]));
        }
    }
    let data = Dataset::new(pairs);

    let config = ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        model_dim: 32,
        heads: 4,
        ffn_dim: 64,
        dropout: 0.1,
        ..ModelConfig::small(vocab as usize)
    };
    let mut model = TranslationModel::new(config, 7)?;
    let stats = train(
        &mut model,
        &data,
        &TrainConfig {
            max_steps: 300,
            batch_tokens: 600,
            warmup_steps: 50,
            eval_every: 50,
            ..TrainConfig::default()
        },
    )?;
    println!(
        "trained {} steps, final loss {:.3}, best dev {:.3}",
        stats.steps_run, stats.final_train_loss, stats.best_dev_loss
    );

    let source = vec![9u32, 17];
    let greedy = model.translate_greedy(&source, 10)?;
    println!("greedy: {source:?} -> {greedy:?}");

    let (beam, score) = model.translate_beam(
        &source,
        &DecodeOptions {
            beam_size: 4,
            max_len: 10,
            length_normalize: true,
        },
    )?;
    println!("beam:   {source:?} -> {beam:?} (score {score:.3})");
    Ok(())
}
