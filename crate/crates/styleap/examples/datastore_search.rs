//! Build a datastore of hashed sentence embeddings and query it, first
//! exactly and then through the inverted-file (IVF) approximate index.

use styleap::corpus::{Sentence, StyledCorpus};
use styleap::datastore::{Datastore, Metric};
use styleap::embedder::{EmbeddingProvider, HashEmbedder};

fn main() -> styleap::Result<()> {
    let mut corpus = StyledCorpus::new("casual", "en");
    for i in 0..500 {
        corpus.sentences.push(Sentence::new(format!(
            "topic{} word{} filler{}",
            i % 10,
            i,
            i % 7
        )));
    }

    let embedder = HashEmbedder::new(128);
    let mut store = Datastore::build(&corpus, &embedder, Metric::Cosine)?;
    println!(
        "store: {} entries, dim {}, checksum {:#010x}",
        store.len(),
        store.dim(),
        store.checksum()
    );

    let query = embedder.embed(&Sentence::new("topic3 word123 filler4"));
    let exact = store.query(&query, 3, &Default::default())?;
    for hit in &exact.hits {
        println!(
            "exact  d={:.4} {:?}",
            hit.distance,
            store.value(hit.id).unwrap().text
        );
    }

    // IVF trades a little recall for a shorter scan; probing every
    // cluster makes it exact again.
    store.build_ivf(16, 10, 4, 42)?;
    let approx = store.query_approx(&query, 3, &Default::default())?;
    for hit in &approx.hits {
        println!(
            "approx d={:.4} {:?}",
            hit.distance,
            store.value(hit.id).unwrap().text
        );
    }
    println!("exhaustive scan: {}", approx.exhaustive);
    Ok(())
}
