//! Score two hand-made systems against a multiway test set: corpus BLEU
//! per style against the matching reference plus the style-transfer
//! ratio from a lexicon classifier.

use std::collections::{BTreeMap, BTreeSet};

use styleap::corpus::Sentence;
use styleap::eval::{
    corpus_bleu, run_comparison, BleuTokenization, MultiwayItem, MultiwayTestSet, Smoothing,
    StyleClassifier, SystemOutput,
};

fn main() -> styleap::Result<()> {
    let mut items = Vec::new();
    for i in 0..5 {
        let mut references = BTreeMap::new();
        references.insert("pirate".into(), Sentence::new(format!("arr the ship {i} sails")));
        references.insert("robot".into(), Sentence::new(format!("beep the ship {i} sails")));
        items.push(MultiwayItem {
            source: Sentence::new(format!("das schiff {i} segelt")),
            references,
        });
    }
    let testset = MultiwayTestSet { items };

    let mut lexicons = BTreeMap::new();
    lexicons.insert("pirate".to_string(), BTreeSet::from(["arr".to_string()]));
    lexicons.insert("robot".to_string(), BTreeSet::from(["beep".to_string()]));
    let classifier = StyleClassifier::new(lexicons);

    // A faithful system emits the right marker; a sloppy one never does.
    let mut faithful = BTreeMap::new();
    let mut sloppy = BTreeMap::new();
    for style in ["pirate", "robot"] {
        faithful.insert(style.to_string(), testset.references_for(style)?);
        sloppy.insert(
            style.to_string(),
            (0..testset.len())
                .map(|i| format!("the ship {i} sails"))
                .collect(),
        );
    }
    let systems = [
        SystemOutput {
            name: "faithful".into(),
            hypotheses: faithful,
        },
        SystemOutput {
            name: "sloppy".into(),
            hypotheses: sloppy,
        },
    ];

    let report = run_comparison(
        &systems,
        &testset,
        &classifier,
        BleuTokenization::AsGiven,
        Smoothing::Epsilon(0.01),
    )?;
    print!("{}", report.to_pretty());

    // Standalone BLEU with explicit smoothing control.
    let bleu = corpus_bleu(
        &["the the the the".into()],
        &["the cat".into()],
        BleuTokenization::AsGiven,
        Smoothing::None,
    )?;
    println!("degenerate hypothesis BLEU: {:.1}", bleu.score);
    Ok(())
}
