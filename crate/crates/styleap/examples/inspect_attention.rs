//! Teacher-force a target through a model and inspect the decoder's
//! final-layer self-attention: for each emitted token, where did the
//! heads look on average?

use styleap::model::{ModelConfig, TranslationModel};

fn main() -> styleap::Result<()> {
    let model = TranslationModel::new(
        ModelConfig {
            enc_layers: 1,
            dec_layers: 2,
            model_dim: 32,
            heads: 4,
            ffn_dim: 64,
            dropout: 0.0,
            ..ModelConfig::small(50)
        },
        11,
    )?;

    let source = vec![7u32, 8, 9, 10];
    let target = vec![20u32, 21, 22, 23, 24];
    let trace = model.attention_trace(&source, &target)?;

    println!(
        "self-attention layers: {}, cross-attention layers: {}",
        trace.self_attn.len(),
        trace.cross_attn.len()
    );

    // Head-averaged final-layer self-attention; row t shows how much
    // emission t attends to each earlier decoder position.
    let mean = trace.final_self_mean();
    println!("head-averaged final-layer self-attention (rows sum to 1):");
    for (t, row) in mean.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        println!("  t={t}: [{}] argmax {argmax}", cells.join(", "));
    }
    Ok(())
}
