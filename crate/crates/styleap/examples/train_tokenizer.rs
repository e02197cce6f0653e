//! Train the subword tokenizer on a couple of styled corpora and show
//! how plain and marked tokenization treat the separator and style tags.

use styleap::corpus::{train_tokenizer, Sentence, StyledCorpus, SEP_ID};

fn corpus(style: &str, lines: &[&str]) -> StyledCorpus {
    StyledCorpus {
        style_id: style.to_string(),
        language: "en".to_string(),
        sentences: lines.iter().map(|l| Sentence::new(*l)).collect(),
    }
}

fn main() -> styleap::Result<()> {
    let corpora = vec![
        corpus(
            "shouty",
            &[
                "the cat sat on the mat",
                "the dog sat on the rug",
                "cats and dogs sat together",
            ],
        ),
        corpus(
            "sleepy",
            &[
                "a quiet evening on the porch",
                "the quiet cat slept on the rug",
            ],
        ),
    ];

    let tokenizer = train_tokenizer(&corpora, 200, 1)?;
    println!("vocabulary size: {}", tokenizer.vocab_size());
    println!("style tags: {:?}", tokenizer.specials().style_tags);

    let text = "the quiet cat sat";
    let ids = tokenizer.tokenize(text);
    let pieces: Vec<&str> = ids
        .iter()
        .map(|&id| tokenizer.piece(id).unwrap_or("?"))
        .collect();
    println!("{text:?} -> {ids:?} -> {pieces:?}");
    assert_eq!(tokenizer.detokenize(&ids), text);

    // The marked reader maps the literal separator word to the reserved
    // separator id, which the two-pass pipeline splits on.
    let marked = tokenizer.tokenize_marked("the cat [s] the dog");
    let sep_at = marked.iter().position(|&t| t == SEP_ID);
    println!("marked tokens: {marked:?}, separator at {sep_at:?}");
    Ok(())
}
