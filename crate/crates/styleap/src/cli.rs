//! Command line interface: one binary whose subcommands cover the full
//! workflow from synthetic corpus generation to ablation reports.
//!
//! Every subcommand resolves a [`RunConfig`] from an optional JSON config
//! file plus flag overrides, echoes it, and archives it next to the
//! outputs as `<command>.run.json`. Outputs are never clobbered unless
//! `--overwrite` is passed. All randomness flows from the single resolved
//! seed; sub-seeds are derived by labeled hashing.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_manifest, load_parallel_tsv, save_monolingual, save_parallel_tsv, CorpusManifest,
    ParallelPair, StyledCorpus, TokenizerModel,
};
use crate::datastore::{Datastore, Metric};
use crate::embedder::HashEmbedder;
use crate::error::{Error, Result};
use crate::eval::{
    size_sweep, MultiwayTestSet, StyleClassifier, SweepInputs, SystemOutput,
};
use crate::experiment::{
    build_stores, make_pipeline, pooled_training_stores, score_systems, single_pass_hypotheses,
    styleap_hypotheses, tokenize_dataset, tokenizer_for, train_joint_model, train_tag_model,
    DeskConfig,
};
use crate::model::{train, ModelConfig, TrainConfig, TranslationModel};
use crate::prompt::{build_dataset, unsupervised_pool, MixConfig, PromptStrategy};
use crate::synth::{generate, SyntheticData, SyntheticTaskSpec};
use crate::util::derive_seed;

/// Fully resolved run settings, archived next to every command's outputs.
/// A JSON config file may set any subset; flags override the file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Embedding provider name, `hash<dim>` (for example `hash256`).
    pub embedder: String,
    /// Distance metric for datastores: `cosine` or `l2`.
    pub metric: String,
    /// Prompt strategy for data construction and styled inference.
    pub strategy: String,
    pub fixed_prompt: Option<String>,
    pub prompted_fraction: f64,
    pub max_len: usize,
    pub max_vocab: usize,
    pub min_frequency: usize,
    pub max_steps: usize,
    pub batch_tokens: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: 1,
            embedder: "hash256".into(),
            metric: "cosine".into(),
            strategy: PromptStrategy::RetrievedTarget.name().into(),
            fixed_prompt: None,
            prompted_fraction: 1.0,
            max_len: 64,
            max_vocab: 2000,
            min_frequency: 2,
            max_steps: t.max_steps,
            batch_tokens: t.batch_tokens,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&data).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn embedder_dim(&self) -> Result<usize> {
        let rest = self
            .embedder
            .strip_prefix("hash")
            .ok_or_else(|| Error::Config(format!("unknown embedder {:?}", self.embedder)))?;
        rest.parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Config(format!("unknown embedder {:?}", self.embedder)))
    }

    pub fn metric_value(&self) -> Result<Metric> {
        match self.metric.as_str() {
            "cosine" => Ok(Metric::Cosine),
            "l2" => Ok(Metric::L2),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }

    pub fn strategy_value(&self) -> Result<PromptStrategy> {
        self.strategy.parse()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_steps: self.max_steps,
            batch_tokens: self.batch_tokens,
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            seed: derive_seed(self.seed, "train"),
            ..TrainConfig::default()
        }
    }

    fn desk_config(&self, model: ModelConfig) -> Result<DeskConfig> {
        Ok(DeskConfig {
            model,
            max_vocab: self.max_vocab,
            min_frequency: self.min_frequency,
            embed_dim: self.embedder_dim()?,
            metric: self.metric_value()?,
            mix: MixConfig {
                prompted_fraction: self.prompted_fraction,
                max_len: self.max_len,
                seed: derive_seed(self.seed, "mix"),
            },
            train: self.train_config(),
            seed: self.seed,
        })
    }
}

#[derive(Parser, Debug)]
#[command(name = "styleap", version, about = "Retrieval-prompted stylized translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every other random choice is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Allow existing outputs to be replaced.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic stylized translation task.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        /// Output directory for the generated corpora.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_parallel: Option<usize>,
        #[arg(long)]
        n_mono_per_style: Option<usize>,
        #[arg(long)]
        n_test_items: Option<usize>,
    },
    /// Build per-style datastores over the monolingual corpora.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        /// Directory produced by gen-synthetic (or containing manifests).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        embedder: Option<String>,
        #[arg(long)]
        metric: Option<String>,
        /// Optional IVF index as `centroids,nprobe`.
        #[arg(long)]
        ivf: Option<String>,
    },
    /// Construct the prompt-augmented training dataset.
    MakeData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory of datastores from build-index.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        fixed_prompt: Option<String>,
        #[arg(long)]
        prompted_fraction: Option<f64>,
        /// Pool all styles into one store for prompt retrieval.
        #[arg(long)]
        unsupervised: bool,
    },
    /// Train a translation model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory from gen-synthetic (tokenizer sources, tag pairs).
        #[arg(long)]
        data: PathBuf,
        /// Prompted dataset directory from make-data (joint system only).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `joint` (prompted) or `tag` (style tag prefix).
        #[arg(long, default_value = "joint")]
        system: String,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        batch_tokens: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        warmup_steps: Option<usize>,
    },
    /// Two-pass stylized translation of a file of source sentences.
    Translate {
        #[command(flatten)]
        common: Common,
        /// Model directory from train.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Input file, one source sentence per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        style: String,
        /// Output JSON-lines file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        fixed_prompt: Option<String>,
    },
    /// Score systems on the multiway test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Optional tag-tuning model directory for a third system row.
        #[arg(long)]
        tag_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ablations over strategies, supervision and corpus size.
    Ablate {
        #[command(subcommand)]
        which: AblateCommand,
    },
}

#[derive(Subcommand, Debug)]
enum AblateCommand {
    /// Compare prompt selection strategies with one trained model.
    Strategy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with style-labeled vs pooled stores and compare.
    Unsupervised {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        batch_tokens: Option<usize>,
    },
    /// Corpus-size sweep: shrink stylized data, rescore systems.
    Size {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Joint model directory from train.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated stylized sentence counts per style.
        #[arg(long, default_value = "10000,1000,100,10")]
        levels: String,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        batch_tokens: Option<usize>,
    },
}

/// Parses arguments and runs; the binary's whole main.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration and usage problems, 1 for runtime failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownStyle(_) => 2,
        Error::BatchItem { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic {
            common,
            out,
            n_parallel,
            n_mono_per_style,
            n_test_items,
        } => cmd_gen_synthetic(&common, &out, n_parallel, n_mono_per_style, n_test_items),
        Command::BuildIndex {
            common,
            data,
            out,
            embedder,
            metric,
            ivf,
        } => {
            let mut cfg = resolve(&common)?;
            override_opt(&mut cfg.embedder, embedder);
            override_opt(&mut cfg.metric, metric);
            cmd_build_index(&common, &cfg, &data, &out, ivf.as_deref())
        }
        Command::MakeData {
            common,
            data,
            index,
            out,
            strategy,
            fixed_prompt,
            prompted_fraction,
            unsupervised,
        } => {
            let mut cfg = resolve(&common)?;
            override_opt(&mut cfg.strategy, strategy);
            if fixed_prompt.is_some() {
                cfg.fixed_prompt = fixed_prompt;
            }
            if let Some(f) = prompted_fraction {
                cfg.prompted_fraction = f;
            }
            cmd_make_data(&common, &cfg, &data, &index, &out, unsupervised)
        }
        Command::Train {
            common,
            data,
            dataset,
            out,
            system,
            max_steps,
            batch_tokens,
            learning_rate,
            warmup_steps,
        } => {
            let mut cfg = resolve(&common)?;
            override_opt(&mut cfg.max_steps, max_steps);
            override_opt(&mut cfg.batch_tokens, batch_tokens);
            override_opt(&mut cfg.learning_rate, learning_rate);
            override_opt(&mut cfg.warmup_steps, warmup_steps);
            cmd_train(&common, &cfg, &data, dataset.as_deref(), &out, &system)
        }
        Command::Translate {
            common,
            model,
            index,
            input,
            style,
            out,
            strategy,
            fixed_prompt,
        } => {
            let mut cfg = resolve(&common)?;
            override_opt(&mut cfg.strategy, strategy);
            if fixed_prompt.is_some() {
                cfg.fixed_prompt = fixed_prompt;
            }
            cmd_translate(&common, &cfg, &model, &index, &input, &style, &out)
        }
        Command::Evaluate {
            common,
            data,
            model,
            index,
            tag_model,
            out,
        } => {
            let cfg = resolve(&common)?;
            cmd_evaluate(&common, &cfg, &data, &model, &index, tag_model.as_deref(), &out)
        }
        Command::Ablate { which } => match which {
            AblateCommand::Strategy {
                common,
                data,
                model,
                index,
                out,
            } => {
                let cfg = resolve(&common)?;
                cmd_ablate_strategy(&common, &cfg, &data, &model, &index, &out)
            }
            AblateCommand::Unsupervised {
                common,
                data,
                out,
                max_steps,
                batch_tokens,
            } => {
                let mut cfg = resolve(&common)?;
                override_opt(&mut cfg.max_steps, max_steps);
                override_opt(&mut cfg.batch_tokens, batch_tokens);
                cmd_ablate_unsupervised(&common, &cfg, &data, &out)
            }
            AblateCommand::Size {
                common,
                data,
                model,
                out,
                levels,
                max_steps,
                batch_tokens,
            } => {
                let mut cfg = resolve(&common)?;
                override_opt(&mut cfg.max_steps, max_steps);
                override_opt(&mut cfg.batch_tokens, batch_tokens);
                cmd_ablate_size(&common, &cfg, &data, &model, &out, &levels)
            }
        },
    }
}

fn override_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Config file, then flag overrides, then defaults.
fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    override_opt(&mut cfg.seed, common.seed);
    Ok(cfg)
}

fn check_clobber(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::Config(format!(
            "{} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Echoes the resolved config and archives it in the output directory.
fn archive_config(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let json = serde_json::to_string_pretty(cfg).map_err(|e| Error::Format(e.to_string()))?;
    println!("{command} config: {}", serde_json::to_string(cfg).unwrap_or_default());
    write_text(&dir.join(format!("{command}.run.json")), &json)
}

/// The on-disk names used by gen-synthetic and read back by the other
/// subcommands.
mod names {
    pub const PARALLEL: &str = "parallel.tsv";
    pub const TEST: &str = "test.jsonl";
    pub const CLASSIFIER: &str = "classifier.json";
    pub const FIXED_PROMPTS: &str = "fixed_prompts.json";
    pub const STYLES: &str = "styles.json";
    pub const TOKENIZER: &str = "tokenizer.json";
    pub const MODEL: &str = "model.bin";
    pub const CURVE: &str = "curve.csv";
    pub const PROMPTED: &str = "prompted.tsv";
    pub const META: &str = "meta.json";

    pub fn mono(style: &str) -> String {
        format!("mono-{style}.txt")
    }

    pub fn manifest(style: &str) -> String {
        format!("manifest-{style}.json")
    }

    pub fn store(style: &str) -> String {
        format!("{style}.store")
    }
}

/// A generated task directory loaded back from disk.
struct TaskDir {
    parallel: Vec<ParallelPair>,
    mono: BTreeMap<String, StyledCorpus>,
    test: MultiwayTestSet,
    classifier: StyleClassifier,
    fixed_prompts: BTreeMap<String, String>,
}

fn load_task_dir(dir: &Path) -> Result<TaskDir> {
    let styles: Vec<String> = read_json(&dir.join(names::STYLES))?;
    let mut mono = BTreeMap::new();
    for style in &styles {
        mono.insert(style.clone(), load_manifest(dir.join(names::manifest(style)))?);
    }
    Ok(TaskDir {
        parallel: load_parallel_tsv(dir.join(names::PARALLEL))?,
        mono,
        test: MultiwayTestSet::load(dir.join(names::TEST))?,
        classifier: StyleClassifier::load(dir.join(names::CLASSIFIER))?,
        fixed_prompts: read_json(&dir.join(names::FIXED_PROMPTS))?,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&data).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_text(path, &json)
}

fn load_stores(dir: &Path) -> Result<BTreeMap<String, Datastore>> {
    let mut stores = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("store") {
            let store = Datastore::load(&path)?;
            stores.insert(store.style_id().to_string(), store);
        }
    }
    if stores.is_empty() {
        return Err(Error::Config(format!(
            "no .store files found in {}",
            dir.display()
        )));
    }
    Ok(stores)
}

fn load_model_dir(dir: &Path) -> Result<(TranslationModel, TokenizerModel)> {
    Ok((
        TranslationModel::load(dir.join(names::MODEL))?,
        TokenizerModel::load(dir.join(names::TOKENIZER))?,
    ))
}

fn cmd_gen_synthetic(
    common: &Common,
    out: &Path,
    n_parallel: Option<usize>,
    n_mono_per_style: Option<usize>,
    n_test_items: Option<usize>,
) -> Result<()> {
    let cfg = resolve(common)?;
    let mut spec = SyntheticTaskSpec {
        seed: derive_seed(cfg.seed, "synthetic"),
        ..SyntheticTaskSpec::default()
    };
    override_opt(&mut spec.n_parallel, n_parallel);
    override_opt(&mut spec.n_mono_per_style, n_mono_per_style);
    override_opt(&mut spec.n_test_items, n_test_items);

    ensure_dir(out)?;
    check_clobber(&out.join(names::PARALLEL), common.overwrite)?;
    let data: SyntheticData = generate(&spec)?;

    save_parallel_tsv(out.join(names::PARALLEL), &data.parallel)?;
    let styles: Vec<String> = data.mono.keys().cloned().collect();
    for (style, corpus) in &data.mono {
        save_monolingual(out.join(names::mono(style)), corpus)?;
        write_json(
            &out.join(names::manifest(style)),
            &CorpusManifest {
                style_id: style.clone(),
                language: corpus.language.clone(),
                path: names::mono(style),
            },
        )?;
    }
    write_json(&out.join(names::STYLES), &styles)?;
    data.test.save(out.join(names::TEST))?;
    data.classifier.save(out.join(names::CLASSIFIER))?;
    write_json(&out.join(names::FIXED_PROMPTS), &data.fixed_prompts)?;
    write_json(&out.join("spec.json"), &spec)?;
    archive_config(out, "gen-synthetic", &cfg)?;
    println!(
        "wrote {} parallel pairs, {} styles, {} test items to {}",
        data.parallel.len(),
        styles.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build_index(
    common: &Common,
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    ivf: Option<&str>,
) -> Result<()> {
    let task = load_task_dir(data)?;
    let provider = HashEmbedder::new(cfg.embedder_dim()?);
    let metric = cfg.metric_value()?;
    ensure_dir(out)?;
    let mut stores = build_stores(&task.mono, &provider, metric)?;
    if let Some(spec) = ivf {
        let (kc, nprobe) = parse_ivf(spec)?;
        for store in stores.values_mut() {
            store.build_ivf(kc, 10, nprobe, derive_seed(cfg.seed, "ivf"))?;
        }
    }
    for (style, store) in &stores {
        let path = out.join(names::store(style));
        check_clobber(&path, common.overwrite)?;
        store.save(&path)?;
        println!("{}: {} entries, checksum {:#010x}", style, store.len(), store.checksum());
    }
    archive_config(out, "build-index", cfg)
}

fn parse_ivf(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    let parsed: Option<(usize, usize)> = match parts.as_slice() {
        [a, b] => a.parse().ok().zip(b.parse().ok()),
        _ => None,
    };
    parsed.ok_or_else(|| Error::Config(format!("--ivf expects `centroids,nprobe`, got {spec:?}")))
}

fn cmd_make_data(
    common: &Common,
    cfg: &RunConfig,
    data: &Path,
    index: &Path,
    out: &Path,
    unsupervised: bool,
) -> Result<()> {
    let task = load_task_dir(data)?;
    let mut stores = load_stores(index)?;
    if unsupervised {
        let refs: Vec<&Datastore> = stores.values().collect();
        let pooled = unsupervised_pool(&refs)?;
        stores = stores.keys().map(|k| (k.clone(), pooled.clone())).collect();
    }
    let strategy = cfg.strategy_value()?;
    let provider = HashEmbedder::new(cfg.embedder_dim()?);
    let mix = MixConfig {
        prompted_fraction: cfg.prompted_fraction,
        max_len: cfg.max_len,
        seed: derive_seed(cfg.seed, "mix"),
    };
    let (pairs, meta) = build_dataset(
        &task.parallel,
        &stores,
        &provider,
        strategy,
        cfg.fixed_prompt.as_deref(),
        &mix,
    )?;
    ensure_dir(out)?;
    let prompted_path = out.join(names::PROMPTED);
    check_clobber(&prompted_path, common.overwrite)?;
    let as_parallel: Vec<ParallelPair> = pairs.iter().map(|p| p.to_parallel()).collect();
    save_parallel_tsv(&prompted_path, &as_parallel)?;
    meta.save(out.join(names::META))?;
    archive_config(out, "make-data", cfg)?;
    println!(
        "wrote {} pairs ({} prompted, {} dropped overlong)",
        pairs.len(),
        meta.prompted_pairs,
        meta.dropped_overlong
    );
    Ok(())
}

fn cmd_train(
    common: &Common,
    cfg: &RunConfig,
    data: &Path,
    dataset: Option<&Path>,
    out: &Path,
    system: &str,
) -> Result<()> {
    let task = load_task_dir(data)?;
    let tokenizer = tokenizer_for(&task.parallel, &task.mono, cfg.max_vocab, cfg.min_frequency)?;
    ensure_dir(out)?;
    check_clobber(&out.join(names::MODEL), common.overwrite)?;

    let desk = cfg.desk_config(ModelConfig::small(0))?;
    let (model, stats) = match system {
        "joint" => {
            let dataset = dataset.ok_or_else(|| {
                Error::Config("--dataset (a make-data directory) is required for --system joint".into())
            })?;
            let prompted = load_parallel_tsv(dataset.join(names::PROMPTED))?;
            let pairs: Vec<crate::prompt::PromptedPair> = prompted
                .iter()
                .map(|p| crate::prompt::PromptedPair {
                    source: p.source.text.clone(),
                    target: p.target.text.clone(),
                    style_label: p.style_label.clone(),
                    prompt: None,
                })
                .collect();
            let data = tokenize_dataset(&pairs, &tokenizer);
            let mut model = TranslationModel::new(
                desk.model_config(tokenizer.vocab_size()),
                derive_seed(cfg.seed, "model-init"),
            )?;
            let stats = train(&mut model, &data, &desk.train)?;
            (model, stats)
        }
        "tag" => train_tag_model(&task.parallel, &tokenizer, &desk)?,
        other => {
            return Err(Error::Config(format!(
                "unknown system {other:?}; expected joint or tag"
            )))
        }
    };

    model.save(out.join(names::MODEL))?;
    tokenizer.save(out.join(names::TOKENIZER))?;
    write_text(&out.join(names::CURVE), &stats.curve_csv())?;
    archive_config(out, "train", cfg)?;
    println!(
        "trained {system} model: {} steps, final loss {:.4}, best dev {:.4}",
        stats.steps_run, stats.final_train_loss, stats.best_dev_loss
    );
    Ok(())
}

#[derive(Serialize)]
struct TranslationRecord<'a> {
    source: &'a str,
    draft: &'a str,
    prompt: Option<&'a str>,
    hypothesis: &'a str,
    style_id: &'a str,
    fallback: bool,
}

fn cmd_translate(
    common: &Common,
    cfg: &RunConfig,
    model_dir: &Path,
    index: &Path,
    input: &Path,
    style: &str,
    out: &Path,
) -> Result<()> {
    let (model, tokenizer) = load_model_dir(model_dir)?;
    let stores = load_stores(index)?;
    if !stores.contains_key(style) {
        return Err(Error::UnknownStyle(style.to_string()));
    }
    check_clobber(out, common.overwrite)?;

    let mut pipeline = make_pipeline(model, tokenizer, stores, cfg.embedder_dim()?);
    pipeline.strategy = cfg.strategy_value()?;
    pipeline.fixed_prompt = cfg.fixed_prompt.clone();

    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let requests: Vec<crate::pipeline::StyledRequest> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| crate::pipeline::StyledRequest {
            source: l.to_string(),
            style_id: style.to_string(),
        })
        .collect();
    let results = pipeline.batch_translate_styled(&requests, derive_seed(cfg.seed, "translate"))?;

    let mut lines = String::new();
    for (req, res) in requests.iter().zip(&results) {
        let record = TranslationRecord {
            source: &req.source,
            draft: &res.draft,
            prompt: res.prompt_used.as_deref(),
            hypothesis: &res.hypothesis,
            style_id: style,
            fallback: res.fallback_used,
        };
        lines.push_str(&serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?);
        lines.push('\n');
    }
    write_text(out, &lines)?;
    if let Some(dir) = out.parent() {
        archive_config(dir, "translate", cfg)?;
    }
    println!("translated {} sentences into style {style}", results.len());
    Ok(())
}

fn cmd_evaluate(
    common: &Common,
    cfg: &RunConfig,
    data: &Path,
    model_dir: &Path,
    index: &Path,
    tag_model: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let task = load_task_dir(data)?;
    let (model, tokenizer) = load_model_dir(model_dir)?;
    let stores = load_stores(index)?;
    ensure_dir(out)?;
    let report_path = out.join("report.csv");
    check_clobber(&report_path, common.overwrite)?;

    let mut pipeline = make_pipeline(model, tokenizer, stores, cfg.embedder_dim()?);
    pipeline.strategy = cfg.strategy_value()?;
    pipeline.fixed_prompt = cfg.fixed_prompt.clone();

    let styles: Vec<String> = task.mono.keys().cloned().collect();
    let mut systems = Vec::new();
    let mut styleap = BTreeMap::new();
    let mut baseline = BTreeMap::new();
    for style in &styles {
        styleap.insert(
            style.clone(),
            styleap_hypotheses(&pipeline, &task.test, style, derive_seed(cfg.seed, "evaluate"))?,
        );
        baseline.insert(
            style.clone(),
            single_pass_hypotheses(&pipeline, &task.test, style, false)?,
        );
    }
    systems.push(SystemOutput {
        name: "styleap".into(),
        hypotheses: styleap,
    });
    systems.push(SystemOutput {
        name: "baseline".into(),
        hypotheses: baseline,
    });
    if let Some(dir) = tag_model {
        let (tag, tag_tok) = load_model_dir(dir)?;
        let tag_pipeline = make_pipeline(tag, tag_tok, BTreeMap::new(), cfg.embedder_dim()?);
        let mut hyps = BTreeMap::new();
        for style in &styles {
            hyps.insert(
                style.clone(),
                single_pass_hypotheses(&tag_pipeline, &task.test, style, true)?,
            );
        }
        systems.push(SystemOutput {
            name: "tag".into(),
            hypotheses: hyps,
        });
    }

    let report = crate::eval::run_comparison(
        &systems,
        &task.test,
        &task.classifier,
        crate::eval::BleuTokenization::AsGiven,
        crate::eval::Smoothing::Epsilon(0.01),
    )?;
    write_text(&report_path, &report.to_csv())?;
    archive_config(out, "evaluate", cfg)?;
    print!("{}", report.to_pretty());
    Ok(())
}

fn cmd_ablate_strategy(
    common: &Common,
    cfg: &RunConfig,
    data: &Path,
    model_dir: &Path,
    index: &Path,
    out: &Path,
) -> Result<()> {
    let task = load_task_dir(data)?;
    let (model, tokenizer) = load_model_dir(model_dir)?;
    let stores = load_stores(index)?;
    ensure_dir(out)?;
    let report_path = out.join("strategy.csv");
    check_clobber(&report_path, common.overwrite)?;

    let mut pipeline = make_pipeline(model, tokenizer, stores, cfg.embedder_dim()?);
    let styles: Vec<String> = task.mono.keys().cloned().collect();
    let mut systems = Vec::new();
    for strategy in PromptStrategy::all() {
        pipeline.strategy = strategy;
        let mut hyps = BTreeMap::new();
        for style in &styles {
            // The fixed strategy uses the per-style prompt generated with
            // the task; other strategies ignore the field.
            pipeline.fixed_prompt = task.fixed_prompts.get(style).cloned();
            hyps.insert(
                style.clone(),
                styleap_hypotheses(
                    &pipeline,
                    &task.test,
                    style,
                    derive_seed(cfg.seed, strategy.name()),
                )?,
            );
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
            single_pass_hypotheses(&pipeline, &task.test, style, false)?,
        );
    }
    systems.push(SystemOutput {
        name: "baseline".into(),
        hypotheses: baseline,
    });

    let report = score_systems(&systems, &task_to_data(&task))?;
    write_text(&report_path, &report.to_csv())?;
    archive_config(out, "ablate-strategy", cfg)?;
    print!("{}", report.to_pretty());
    Ok(())
}

/// score_systems takes the generated bundle; rebuild one from a loaded
/// task directory.
fn task_to_data(task: &TaskDir) -> SyntheticData {
    SyntheticData {
        parallel: task.parallel.clone(),
        mono: task.mono.clone(),
        test: task.test.clone(),
        classifier: task.classifier.clone(),
        fixed_prompts: task.fixed_prompts.clone(),
    }
}

fn cmd_ablate_unsupervised(
    common: &Common,
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
) -> Result<()> {
    let task = load_task_dir(data)?;
    ensure_dir(out)?;
    let report_path = out.join("unsupervised.csv");
    check_clobber(&report_path, common.overwrite)?;

    let desk = cfg.desk_config(ModelConfig::small(0))?;
    let tokenizer = tokenizer_for(&task.parallel, &task.mono, cfg.max_vocab, cfg.min_frequency)?;
    let provider = HashEmbedder::new(desk.embed_dim);
    let stores = build_stores(&task.mono, &provider, desk.metric)?;
    let pooled = pooled_training_stores(&stores)?;

    let (supervised, _) =
        train_joint_model(&task.parallel, &stores, &provider, &tokenizer, &desk)?;
    let (unsupervised, _) =
        train_joint_model(&task.parallel, &pooled, &provider, &tokenizer, &desk)?;

    let styles: Vec<String> = task.mono.keys().cloned().collect();
    let mut systems = Vec::new();
    for (name, model) in [("supervised", supervised), ("unsupervised", unsupervised)] {
        let pipeline = make_pipeline(model, tokenizer.clone(), stores.clone(), desk.embed_dim);
        let mut hyps = BTreeMap::new();
        for style in &styles {
            hyps.insert(
                style.clone(),
                styleap_hypotheses(&pipeline, &task.test, style, derive_seed(cfg.seed, name))?,
            );
        }
        systems.push(SystemOutput {
            name: name.into(),
            hypotheses: hyps,
        });
    }
    let report = score_systems(&systems, &task_to_data(&task))?;
    write_text(&report_path, &report.to_csv())?;
    archive_config(out, "ablate-unsupervised", cfg)?;
    print!("{}", report.to_pretty());
    Ok(())
}

fn cmd_ablate_size(
    common: &Common,
    cfg: &RunConfig,
    data: &Path,
    model_dir: &Path,
    out: &Path,
    levels: &str,
) -> Result<()> {
    let task = load_task_dir(data)?;
    let (model, tokenizer) = load_model_dir(model_dir)?;
    ensure_dir(out)?;
    let report_path = out.join("size.csv");
    check_clobber(&report_path, common.overwrite)?;

    let parsed: Result<Vec<usize>> = levels
        .split(',')
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad sweep level {l:?}")))
        })
        .collect();
    let mut parsed = parsed?;
    // Levels beyond the corpus are capped rather than rejected, so the
    // default ladder works at any desk scale.
    let full = task
        .mono
        .values()
        .map(|c| c.sentences.len())
        .min()
        .unwrap_or(0);
    for level in &mut parsed {
        *level = (*level).min(full);
    }
    parsed.dedup();

    let desk = cfg.desk_config(model.config.clone())?;
    let inputs = SweepInputs {
        parallel: &task.parallel,
        mono: &task.mono,
        testset: &task.test,
        classifier: &task.classifier,
        joint_model: &model,
        tokenizer: &tokenizer,
        cfg: &desk,
    };
    let report = size_sweep(&inputs, &parsed, derive_seed(cfg.seed, "size-sweep"))?;
    write_text(&report_path, &report.to_csv())?;
    archive_config(out, "ablate-size", cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}
