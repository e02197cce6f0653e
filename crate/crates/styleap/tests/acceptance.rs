//! Acceptance gate: ten criteria, each printed as one PASS/FAIL line.
//!
//! Criteria 1-4 check the deterministic components against independent
//! oracles written in this file. Criteria 5-10 share one expensive
//! fixture: the synthetic two-style task at full desk scale with a
//! jointly trained model, an unsupervised variant, a tag-tuning
//! comparator and a corpus-size sweep.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use styleap::corpus::{Sentence, TokenizerModel, SEP_ID};
use styleap::datastore::{Datastore, Metric};
use styleap::embedder::{HashEmbedder, SentenceVector};
use styleap::eval::{
    corpus_bleu, run_comparison, size_sweep, BleuTokenization, ComparisonReport, Smoothing,
    SweepInputs, SweepReport, SystemOutput,
};
use styleap::experiment::{
    build_stores, make_pipeline, pooled_training_stores, single_pass_hypotheses, tokenizer_for,
    train_joint_model, train_tag_model, DeskConfig,
};
use styleap::model::{gradient_check, ModelConfig, TrainConfig, TranslationModel};
use styleap::pipeline::{StyledRequest, StyledResult};
use styleap::prompt::{augment_text, PromptStrategy};
use styleap::synth::{generate, SyntheticData, SyntheticTaskSpec};
use styleap::util::derive_seed;

fn check(criterion: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {verdict} ({detail})");
    assert!(ok, "{criterion} failed: {detail}");
}

// ---------------------------------------------------------------------
// Criterion 1: retrieval exactness vs a brute-force oracle.
// ---------------------------------------------------------------------

fn oracle_distance(metric: Metric, a: &[f32], b: &[f32]) -> f32 {
    match metric {
        Metric::L2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f32>()
            .sqrt(),
        Metric::Cosine => {
            let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
            let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    }
}

fn oracle_top_k(metric: Metric, keys: &[Vec<f32>], query: &[f32], k: usize) -> Vec<u32> {
    let mut scored: Vec<(f32, u32)> = keys
        .iter()
        .enumerate()
        .map(|(i, key)| (oracle_distance(metric, key, query), i as u32))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect()
}

fn store_from_raw(raw: &[Vec<f32>], metric: Metric) -> Datastore {
    let keys: Vec<SentenceVector> = raw.iter().map(|v| SentenceVector::new(v.clone())).collect();
    let values: Vec<Sentence> = (0..raw.len())
        .map(|i| Sentence::new(format!("v{i}")))
        .collect();
    Datastore::from_parts("test", metric, raw[0].len(), keys, values).unwrap()
}

#[test]
fn criterion_01_retrieval_exactness() {
    let start = Instant::now();
    let dim = 32;
    let raw = random_vectors(1000, dim, 101);
    let queries = random_vectors(100, dim, 202);
    let mut agree = 0usize;
    let mut total = 0usize;
    for metric in [Metric::Cosine, Metric::L2] {
        let store = store_from_raw(&raw, metric);
        for q in &queries {
            let expect = oracle_top_k(metric, &raw, q, 10);
            let got = store
                .query(&SentenceVector::new(q.clone()), 10, &HashSet::new())
                .unwrap();
            let got_ids: Vec<u32> = got.hits.iter().map(|h| h.id).collect();
            total += 1;
            if got_ids == expect {
                agree += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        "criterion 1 (retrieval exactness)",
        agree == total && secs < 10.0,
        &format!("{agree}/{total} queries agree with the brute-force oracle, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------
// Criterion 2: IVF recall and degenerate exactness.
// ---------------------------------------------------------------------

#[test]
fn criterion_02_ivf_quality() {
    let start = Instant::now();
    let dim = 256;
    let n = 10_000;
    // Clustered keys: nearest-neighbor structure that an inverted file
    // can exploit, like sentence embeddings of topical corpora.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let centers = random_vectors(100, dim, 303);
    let raw: Vec<Vec<f32>> = (0..n)
        .map(|_| {
            let c = &centers[rng.gen_range(0..centers.len())];
            c.iter().map(|x| x + rng.gen_range(-0.08f32..0.08)).collect()
        })
        .collect();
    let queries: Vec<Vec<f32>> = (0..100)
        .map(|_| {
            let c = &centers[rng.gen_range(0..centers.len())];
            c.iter().map(|x| x + rng.gen_range(-0.08f32..0.08)).collect()
        })
        .collect();

    let metric = Metric::L2;
    let mut store = store_from_raw(&raw, metric);
    store.build_ivf(64, 10, 8, 11).unwrap();
    let mut hit1 = 0usize;
    for q in &queries {
        let v = SentenceVector::new(q.clone());
        let exact = store.query(&v, 1, &HashSet::new()).unwrap();
        let approx = store.query_approx(&v, 1, &HashSet::new()).unwrap();
        if exact.hits[0].id == approx.hits[0].id {
            hit1 += 1;
        }
    }
    let recall = hit1 as f64 / queries.len() as f64;

    // Degenerate settings must reproduce exact search results in full.
    let mut exact_matches = true;
    for (kc, nprobe) in [(1usize, 1usize), (64, 64)] {
        let mut s = store_from_raw(&raw[..2000], metric);
        s.build_ivf(kc, 10, nprobe, 13).unwrap();
        for q in queries.iter().take(25) {
            let v = SentenceVector::new(q.clone());
            let exact: Vec<u32> = s
                .query(&v, 5, &HashSet::new())
                .unwrap()
                .hits
                .iter()
                .map(|h| h.id)
                .collect();
            let approx: Vec<u32> = s
                .query_approx(&v, 5, &HashSet::new())
                .unwrap()
                .hits
                .iter()
                .map(|h| h.id)
                .collect();
            exact_matches &= exact == approx;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        "criterion 2 (IVF quality)",
        recall >= 0.95 && exact_matches && secs < 60.0,
        &format!("recall@1 {recall:.3}, degenerate cases exact: {exact_matches}, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------
// Criterion 3: BLEU vs a naive n-gram-counting oracle.
// ---------------------------------------------------------------------

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(|s| s.to_string()).collect::<Vec<_>>())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Independent unsmoothed corpus BLEU: clipped n-gram precision up to 4
/// summed over the corpus, geometric mean, brevity penalty.
fn naive_bleu(hyps: &[String], refs: &[String]) -> f64 {
    let mut matched = [0usize; 4];
    let mut possible = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=4 {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            for (gram, count) in &hc {
                matched[n - 1] += count.min(rc.get(gram).unwrap_or(&0));
            }
            possible[n - 1] += ht.len().saturating_sub(n - 1);
        }
    }
    let mut log_sum = 0.0f64;
    for n in 0..4 {
        if matched[n] == 0 || possible[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / possible[n] as f64).ln();
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * (log_sum / 4.0).exp()
}

#[test]
fn criterion_03_bleu_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let vocab = ["a", "b", "c", "d", "e", "f"];
    let mut max_diff = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(3..12);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n {
            let mk = |rng: &mut ChaCha8Rng| {
                (0..rng.gen_range(4..15))
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            hyps.push(mk(&mut rng));
            refs.push(mk(&mut rng));
        }
        let ours = corpus_bleu(&hyps, &refs, BleuTokenization::AsGiven, Smoothing::None)
            .unwrap()
            .score;
        let oracle = naive_bleu(&hyps, &refs);
        max_diff = max_diff.max((ours - oracle).abs());
    }

    let h = vec!["x y z w v".to_string()];
    let identity = corpus_bleu(&h, &h, BleuTokenization::AsGiven, Smoothing::None)
        .unwrap()
        .score;

    let clipped = corpus_bleu(
        &["the the the the".to_string()],
        &["the cat".to_string()],
        BleuTokenization::AsGiven,
        Smoothing::None,
    )
    .unwrap();

    let ok = max_diff < 1e-6
        && (identity - 100.0).abs() < 1e-9
        && (clipped.precisions[0] - 0.25).abs() < 1e-9
        && clipped.score == 0.0;
    check(
        "criterion 3 (BLEU correctness)",
        ok,
        &format!(
            "max oracle diff {max_diff:.2e}, BLEU(h,h) {identity:.2}, clipped p1 {:.2}, score {:.1}",
            clipped.precisions[0], clipped.score
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 4: finite-difference gradient check.
// ---------------------------------------------------------------------

#[test]
fn criterion_04_gradient_validity() {
    let model = TranslationModel::new(
        ModelConfig {
            dropout: 0.0,
            ..ModelConfig::tiny(14)
        },
        5,
    )
    .unwrap();
    let pairs = vec![
        (vec![5u32, 6, 7], vec![8u32, 9]),
        (vec![10, 11], vec![12, 13, 5]),
    ];
    let report = gradient_check(&model, &pairs, 1e-5).unwrap();
    check(
        "criterion 4 (gradient validity)",
        report.max_rel_error < 1e-4,
        &format!(
            "max relative error {:.2e} at {} over {} scalars",
            report.max_rel_error, report.worst_param, report.checked_scalars
        ),
    );
}

// ---------------------------------------------------------------------
// Shared fixture for criteria 5-10.
// ---------------------------------------------------------------------

const RUN_SEED: u64 = 99;
const SWEEP_SEED: u64 = 55;

struct Fixture {
    spec: SyntheticTaskSpec,
    data: SyntheticData,
    cfg: DeskConfig,
    tokenizer: TokenizerModel,
    stores: BTreeMap<String, Datastore>,
    styles: Vec<String>,
    joint: TranslationModel,
    /// Strategy systems (named by strategy) plus `baseline`.
    report: ComparisonReport,
    /// Full two-pass results of the retrieved-target strategy per style.
    styleap_results: BTreeMap<String, Vec<StyledResult>>,
    /// style -> BLEU of its StyleAP hypotheses against the other style's
    /// references.
    cross_bleu: BTreeMap<String, f64>,
    /// System `unsupervised`: joint model trained with pooled retrieval.
    unsup_report: ComparisonReport,
    /// System `tag` trained on the full parallel corpus.
    tag_report: ComparisonReport,
    /// Sweep at the smallest level (10 stylized sentences per style).
    sweep: SweepReport,
    build_secs: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(build_fixture)
}

fn desk_config() -> DeskConfig {
    DeskConfig {
        train: TrainConfig {
            max_steps: 1500,
            batch_tokens: 2000,
            warmup_steps: 150,
            eval_every: 300,
            ..TrainConfig::default()
        },
        ..DeskConfig::default()
    }
}

fn task_spec() -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        n_parallel: 5000,
        n_mono_per_style: 1000,
        n_test_items: 500,
        ..SyntheticTaskSpec::default()
    }
}

fn styleap_batch(
    pipeline: &styleap::pipeline::StylePipeline,
    data: &SyntheticData,
    style: &str,
    run_seed: u64,
) -> Vec<StyledResult> {
    let requests: Vec<StyledRequest> = data
        .test
        .items
        .iter()
        .map(|item| StyledRequest {
            source: item.source.text.clone(),
            style_id: style.to_string(),
        })
        .collect();
    pipeline.batch_translate_styled(&requests, run_seed).unwrap()
}

/// Evaluates every prompt strategy plus the no-prompt baseline with one
/// joint model. Deterministic in (model, stores, seeds).
fn strategy_report(
    joint: &TranslationModel,
    tokenizer: &TokenizerModel,
    stores: &BTreeMap<String, Datastore>,
    data: &SyntheticData,
    cfg: &DeskConfig,
) -> (ComparisonReport, BTreeMap<String, Vec<StyledResult>>) {
    let styles: Vec<String> = data.mono.keys().cloned().collect();
    let mut pipeline = make_pipeline(joint.clone(), tokenizer.clone(), stores.clone(), cfg.embed_dim);
    let mut systems = Vec::new();
    let mut retrieved_results = BTreeMap::new();
    for strategy in PromptStrategy::all() {
        pipeline.strategy = strategy;
        let mut hyps = BTreeMap::new();
        for style in &styles {
            pipeline.fixed_prompt = data.fixed_prompts.get(style).cloned();
            let results = styleap_batch(
                &pipeline,
                data,
                style,
                derive_seed(RUN_SEED, strategy.name()),
            );
            hyps.insert(
                style.clone(),
                results.iter().map(|r| r.hypothesis.clone()).collect(),
            );
            if strategy == PromptStrategy::RetrievedTarget {
                retrieved_results.insert(style.clone(), results);
            }
        }
        systems.push(SystemOutput {
            name: strategy.name().into(),
            hypotheses: hyps,
        });
    }
    let mut baseline = BTreeMap::new();
    for style in &styles {
        baseline.insert(
            style.clone(),
            single_pass_hypotheses(&pipeline, &data.test, style, false).unwrap(),
        );
    }
    systems.push(SystemOutput {
        name: "baseline".into(),
        hypotheses: baseline,
    });
    let report = run_comparison(
        &systems,
        &data.test,
        &data.classifier,
        BleuTokenization::AsGiven,
        Smoothing::Epsilon(0.01),
    )
    .unwrap();
    (report, retrieved_results)
}

fn single_system_report(
    name: &str,
    hyps: BTreeMap<String, Vec<String>>,
    data: &SyntheticData,
) -> ComparisonReport {
    run_comparison(
        &[SystemOutput {
            name: name.into(),
            hypotheses: hyps,
        }],
        &data.test,
        &data.classifier,
        BleuTokenization::AsGiven,
        Smoothing::Epsilon(0.01),
    )
    .unwrap()
}

fn build_fixture() -> Fixture {
    let start = Instant::now();
    let spec = task_spec();
    let data = generate(&spec).unwrap();
    let cfg = desk_config();
    let tokenizer =
        tokenizer_for(&data.parallel, &data.mono, cfg.max_vocab, cfg.min_frequency).unwrap();
    let provider = HashEmbedder::new(cfg.embed_dim);
    let stores = build_stores(&data.mono, &provider, cfg.metric).unwrap();
    let styles: Vec<String> = data.mono.keys().cloned().collect();

    let (joint, _) =
        train_joint_model(&data.parallel, &stores, &provider, &tokenizer, &cfg).unwrap();
    let (report, styleap_results) = strategy_report(&joint, &tokenizer, &stores, &data, &cfg);

    // Cross-style BLEU for criterion 5b.
    let mut cross_bleu = BTreeMap::new();
    for style in &styles {
        let other = styles.iter().find(|s| *s != style).unwrap();
        let hyps: Vec<String> = styleap_results[style]
            .iter()
            .map(|r| r.hypothesis.clone())
            .collect();
        let refs = data.test.references_for(other).unwrap();
        let bleu = corpus_bleu(&hyps, &refs, BleuTokenization::AsGiven, Smoothing::Epsilon(0.01))
            .unwrap()
            .score;
        cross_bleu.insert(style.clone(), bleu);
    }

    // Unsupervised variant: training-time retrieval from the pooled
    // store; inference stays style-restricted.
    let pooled = pooled_training_stores(&stores).unwrap();
    let (unsup, _) =
        train_joint_model(&data.parallel, &pooled, &provider, &tokenizer, &cfg).unwrap();
    let unsup_pipeline = make_pipeline(unsup, tokenizer.clone(), stores.clone(), cfg.embed_dim);
    let mut unsup_hyps = BTreeMap::new();
    for style in &styles {
        let results = styleap_batch(
            &unsup_pipeline,
            &data,
            style,
            derive_seed(RUN_SEED, "unsupervised"),
        );
        unsup_hyps.insert(
            style.clone(),
            results.iter().map(|r| r.hypothesis.clone()).collect(),
        );
    }
    let unsup_report = single_system_report("unsupervised", unsup_hyps, &data);

    // Tag comparator on the full corpus.
    let (tag, _) = train_tag_model(&data.parallel, &tokenizer, &cfg).unwrap();
    let tag_pipeline = make_pipeline(tag, tokenizer.clone(), BTreeMap::new(), cfg.embed_dim);
    let mut tag_hyps = BTreeMap::new();
    for style in &styles {
        tag_hyps.insert(
            style.clone(),
            single_pass_hypotheses(&tag_pipeline, &data.test, style, true).unwrap(),
        );
    }
    let tag_report = single_system_report("tag", tag_hyps, &data);

    // Smallest sweep level; the tag comparator retrains on 10 styled
    // pairs per style inside.
    let sweep = size_sweep(
        &SweepInputs {
            parallel: &data.parallel,
            mono: &data.mono,
            testset: &data.test,
            classifier: &data.classifier,
            joint_model: &joint,
            tokenizer: &tokenizer,
            cfg: &cfg,
        },
        &[10],
        SWEEP_SEED,
    )
    .unwrap();

    Fixture {
        spec,
        data,
        cfg,
        tokenizer,
        stores,
        styles,
        joint,
        report,
        styleap_results,
        cross_bleu,
        unsup_report,
        tag_report,
        sweep,
        build_secs: start.elapsed().as_secs_f64(),
    }
}

fn macro_of(report: &ComparisonReport, system: &str) -> (f64, f64) {
    (report.macro_bleu[system], report.macro_ratio[system])
}

// ---------------------------------------------------------------------
// Criterion 5: end-to-end style activation.
// ---------------------------------------------------------------------

#[test]
fn criterion_05_end_to_end_style_activation() {
    let f = fixture();
    let mut ok = true;
    let mut notes = Vec::new();
    for style in &f.styles {
        let styleap = f.report.row("retrieved_target", style).unwrap();
        let baseline = f.report.row("baseline", style).unwrap();
        let cross = f.cross_bleu[style];
        ok &= styleap.transfer_ratio >= 90.0;
        ok &= baseline.transfer_ratio <= 20.0;
        ok &= styleap.bleu > cross;
        notes.push(format!(
            "{style}: ratio {:.1} vs baseline {:.1}, BLEU match {:.1} > cross {:.1}",
            styleap.transfer_ratio, baseline.transfer_ratio, styleap.bleu, cross
        ));
    }
    ok &= f.build_secs < 1800.0;
    notes.push(format!("fixture build {:.0}s", f.build_secs));
    check(
        "criterion 5 (end-to-end style activation)",
        ok,
        &notes.join("; "),
    );
}

// ---------------------------------------------------------------------
// Criterion 6: prompt strategy ordering.
// ---------------------------------------------------------------------

#[test]
fn criterion_06_strategy_ordering() {
    let f = fixture();
    let retrieved = macro_of(&f.report, "retrieved_target").0;
    let source = macro_of(&f.report, "retrieved_source").0;
    let random = macro_of(&f.report, "random").0;
    let fixed = macro_of(&f.report, "fixed").0;
    let ok = retrieved >= source && source >= random && random >= fixed && retrieved > fixed;
    check(
        "criterion 6 (strategy ordering)",
        ok,
        &format!(
            "retrieved {retrieved:.2} >= source {source:.2} >= random {random:.2} >= fixed {fixed:.2}"
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 7: unsupervised robustness.
// ---------------------------------------------------------------------

#[test]
fn criterion_07_unsupervised_robustness() {
    let f = fixture();
    let supervised = macro_of(&f.report, "retrieved_target").0;
    let unsup = macro_of(&f.unsup_report, "unsupervised").0;
    let degradation = (supervised - unsup) / supervised;
    let tag_small = f.sweep.macro_bleu(10, "tag").unwrap();
    let ok = degradation <= 0.15 && unsup > tag_small;
    check(
        "criterion 7 (unsupervised robustness)",
        ok,
        &format!(
            "degradation {:.1}% (supervised {supervised:.2}, unsupervised {unsup:.2}), tag small-data {tag_small:.2}",
            degradation * 100.0
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 8: size-sweep ordering at the smallest level.
// ---------------------------------------------------------------------

#[test]
fn criterion_08_size_sweep_ordering() {
    let f = fixture();
    let styleap_ratio = f.sweep.macro_ratio(10, "styleap").unwrap();
    let baseline_ratio = f.sweep.macro_ratio(10, "baseline").unwrap();

    let styleap_full = macro_of(&f.report, "retrieved_target").0;
    let styleap_small = f.sweep.macro_bleu(10, "styleap").unwrap();
    let tag_full = macro_of(&f.tag_report, "tag").0;
    let tag_small = f.sweep.macro_bleu(10, "tag").unwrap();
    let styleap_drop = (styleap_full - styleap_small) / styleap_full;
    let tag_drop = (tag_full - tag_small) / tag_full;

    let ok = styleap_ratio > baseline_ratio && tag_drop > styleap_drop;
    check(
        "criterion 8 (size-sweep ordering)",
        ok,
        &format!(
            "ratio@10 styleap {styleap_ratio:.1} > baseline {baseline_ratio:.1}; relative BLEU drop tag {:.1}% > styleap {:.1}%",
            tag_drop * 100.0,
            styleap_drop * 100.0
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 9: attention on the prompt at marker emissions.
// ---------------------------------------------------------------------

#[test]
fn criterion_09_attention_interpretability() {
    let f = fixture();
    // Style markers that the tokenizer keeps as single tokens.
    let mut marker_ids = HashSet::new();
    for lexicon in f.spec.lexicons().values() {
        for word in lexicon {
            let ids = f.tokenizer.tokenize(word);
            if ids.len() == 1 {
                marker_ids.insert(ids[0]);
            }
        }
    }
    assert!(!marker_ids.is_empty(), "no single-token style markers");

    let mut events = 0usize;
    let mut in_prompt = 0usize;
    'outer: for style in &f.styles {
        for (result, item) in f.styleap_results[style].iter().zip(&f.data.test.items) {
            let Some(prompt) = &result.prompt_used else {
                continue;
            };
            if result.fallback_used {
                continue;
            }
            let src = f
                .tokenizer
                .tokenize_marked(&augment_text(prompt, &item.source.text));
            let tgt = f
                .tokenizer
                .tokenize_marked(&augment_text(prompt, &result.hypothesis));
            let Some(sep) = tgt.iter().position(|&t| t == SEP_ID) else {
                continue;
            };
            let trace = f.joint.attention_trace(&src, &tgt).unwrap();
            let mean = trace.final_self_mean();
            // Decoder input row j holds tgt[j-1] (row 0 is BOS); the
            // logits at row j emit tgt[j]. The prompt occupies decoder
            // positions 1..=sep, the separator sits at sep+1.
            for (j, &tok) in tgt.iter().enumerate().skip(sep + 1) {
                if !marker_ids.contains(&tok) {
                    continue;
                }
                let row = mean.row(j);
                let mut best: Option<(usize, f64)> = None;
                for p in 0..=j {
                    if j - p <= 2 {
                        continue;
                    }
                    let w = row[p];
                    if best.map_or(true, |(_, bw)| w > bw) {
                        best = Some((p, w));
                    }
                }
                if let Some((argmax, _)) = best {
                    events += 1;
                    if (1..=sep).contains(&argmax) {
                        in_prompt += 1;
                    }
                }
            }
            if events >= 400 {
                break 'outer;
            }
        }
    }
    let frac = in_prompt as f64 / events.max(1) as f64;
    check(
        "criterion 9 (attention interpretability)",
        events >= 200 && frac >= 0.70,
        &format!("{in_prompt}/{events} marker emissions attend into the prompt span ({:.1}%)", frac * 100.0),
    );
}

// ---------------------------------------------------------------------
// Criterion 10: determinism of repeated runs.
// ---------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let f = fixture();
    // Regenerate the corpus and re-run the full strategy evaluation with
    // the same seeds on the same checkpoint.
    let data2 = generate(&f.spec).unwrap();
    let (report2, _) = strategy_report(&f.joint, &f.tokenizer, &f.stores, &data2, &f.cfg);
    let same_report = f.report.to_csv() == report2.to_csv();

    let sweep2 = size_sweep(
        &SweepInputs {
            parallel: &f.data.parallel,
            mono: &f.data.mono,
            testset: &f.data.test,
            classifier: &f.data.classifier,
            joint_model: &f.joint,
            tokenizer: &f.tokenizer,
            cfg: &f.cfg,
        },
        &[10],
        SWEEP_SEED,
    )
    .unwrap();
    let same_sweep = f.sweep.to_csv() == sweep2.to_csv();

    check(
        "criterion 10 (determinism)",
        same_report && same_sweep,
        &format!("report byte-identical: {same_report}, sweep byte-identical: {same_sweep}"),
    );
}
