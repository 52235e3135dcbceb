//! Command-line interface.
//!
//! Settings resolve as flag, then config file, then built-in default. The
//! config file is TOML with the same keys as the long flags (underscores for
//! dashes); it comes from `--config` or the `DIALCOH_CONFIG` variable. Every
//! command that writes to `--out` also writes the resolved settings there as
//! `config.json`.
//!
//! Exit codes: 0 success, 1 usage, 2 bad input data, 3 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{group_stats, mcc_report, AnalysisError};
use crate::corpus::{derive_vocabularies, load_corpus, CorpusError, Dialogue, Tagset, Turn, Vocabularies};
use crate::grid::{GridFeatureSet, TransitionConfig};
use crate::linearizer::{Channels, EncodingConfig};
use crate::metrics::{
    evaluate_rating, evaluate_selection, leave_one_out_correlation, quadratic_weighted_kappa, random_baseline,
    BaselineMetric, Gain, MetricError, MetricsReport, RatingMatrix,
};
use crate::models::{
    load_checkpoint, rank_scores, save_checkpoint, train_linear, train_neural_from, CheckpointError, CoherenceModel,
    LinearConfig, ModelCheckpoint, ModelError, NeuralConfig, NeuralModel,
};
use crate::swapgen::{
    build_selection_dataset, load_rated_testset, read_instances, write_instances, DatasetConfig, RankingInstance,
    SwapError, SwapMode,
};

pub const CONFIG_ENV: &str = "DIALCOH_CONFIG";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(CorpusError, SwapError, CheckpointError, AnalysisError, serde_json::Error);

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dialcoh", version, about = "Entity and dialogue-act coherence models for next-turn ranking")]
struct Cli {
    /// TOML settings file (defaults to $DIALCOH_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a corpus for annotation errors and print a summary.
    Validate(ValidateArgs),
    /// Derive and save channel vocabularies.
    Vocab(VocabArgs),
    /// Build a response-selection dataset by swapping in adversarial turns.
    GenDataset(GenArgs),
    /// Train a neural or linear coherence model.
    Train(TrainArgs),
    /// Accuracy, MRR, R@1 and R@2 on a selection dataset.
    EvalSelection(EvalSelectionArgs),
    /// Accuracy, MRR, R@1 and nDCG on a rated candidate set.
    EvalRating(EvalRatingArgs),
    /// Score and rank the candidates of ad-hoc JSON input.
    Rate(RateArgs),
    /// Regression of ratings on entity and act features, and group means.
    Analyze(AnalyzeArgs),
    /// Weighted kappa and leave-one-out correlation of a rating table.
    Agreement(AgreementArgs),
    /// Random-ranking baseline estimates.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tagset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tagset: Option<PathBuf>,
    #[arg(long)]
    min_word_count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tagset: Option<PathBuf>,
    /// internal, external or mixed.
    #[arg(long)]
    mode: Option<String>,
    /// Insertion points per dialogue.
    #[arg(long)]
    points: Option<usize>,
    /// Adversarial candidates per insertion point.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    ctx_min: Option<usize>,
    #[arg(long)]
    ctx_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// neural or linear.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    train: PathBuf,
    /// Development set for early stopping (neural).
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Vocabularies from `vocab`; derived from the training data otherwise.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    tagset: Option<PathBuf>,
    #[arg(long)]
    min_word_count: Option<usize>,
    /// Comma-separated subset of word, role, da, turn (or `all`).
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    emb_dim_word: Option<usize>,
    #[arg(long)]
    emb_dim_other: Option<usize>,
    #[arg(long)]
    gru_layers: Option<usize>,
    #[arg(long)]
    gru_hidden: Option<usize>,
    #[arg(long)]
    head_hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    /// Text word vectors (`token v1 … vd` per line) for the word embeddings.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    /// entity, da or joint (linear).
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    l2: Option<f64>,
    /// Passes over the training pairs (linear).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    transition_length: Option<usize>,
    #[arg(long)]
    saliency: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalSelectionArgs {
    /// Checkpoint; repeat for several runs, whose metrics are averaged.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalRatingArgs {
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Require one original, three internal and three external candidates.
    #[arg(long)]
    strict: bool,
    /// linear or exponential.
    #[arg(long)]
    gain: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RateArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON object with `context` (turns) and `candidates` (turns).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Act inventory for the indicator features; taken from the data otherwise.
    #[arg(long)]
    tagset: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AgreementArgs {
    /// TSV: header of rater names, one item per row, empty cells missing.
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    candidates: Option<usize>,
    /// accuracy, mrr, r@k or ndcg.
    #[arg(long)]
    metric: Option<String>,
    /// Comma-separated candidate ratings; replaces `--candidates`.
    #[arg(long)]
    ratings: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Settings that may come from the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    tagset: Option<PathBuf>,
    min_word_count: Option<usize>,
    mode: Option<String>,
    points: Option<usize>,
    negatives: Option<usize>,
    ctx_min: Option<usize>,
    ctx_max: Option<usize>,
    model: Option<String>,
    channels: Option<String>,
    emb_dim_word: Option<usize>,
    emb_dim_other: Option<usize>,
    gru_layers: Option<usize>,
    gru_hidden: Option<usize>,
    head_hidden: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    margin: Option<f64>,
    features: Option<String>,
    l2: Option<f64>,
    epochs: Option<usize>,
    transition_length: Option<usize>,
    saliency: Option<usize>,
    gain: Option<String>,
    metric: Option<String>,
    candidates: Option<usize>,
    trials: Option<usize>,
}

fn load_file_config(flag: Option<&Path>) -> Result<FileConfig, CliError> {
    let path = match flag {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
    };
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_name<T: DeserializeOwned>(s: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| CliError::Usage(format!("invalid {what} `{s}`")))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn load_tagset(path: Option<&Path>) -> Result<Option<Tagset>, CliError> {
    path.map(|p| Tagset::load(p).map_err(CliError::from)).transpose()
}

fn corpus_of_instances(instances: &[RankingInstance]) -> Vec<Dialogue> {
    instances
        .iter()
        .map(|inst| {
            let mut turns = inst.context.clone();
            turns.extend(inst.candidates.iter().map(|c| c.turn.clone()));
            Dialogue {
                id: inst.dialogue_id.clone(),
                turns,
            }
        })
        .collect()
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Validate(a) => validate(a, &file),
        Command::Vocab(a) => vocab(a, &file),
        Command::GenDataset(a) => gen_dataset(a, &file),
        Command::Train(a) => train(a, &file),
        Command::EvalSelection(a) => eval_selection(a),
        Command::EvalRating(a) => eval_rating(a, &file),
        Command::Rate(a) => rate(a),
        Command::Analyze(a) => analyze(a, &file),
        Command::Agreement(a) => agreement(a),
        Command::Baseline(a) => baseline(a, &file),
    }
}

fn validate(a: ValidateArgs, file: &FileConfig) -> Result<(), CliError> {
    let tagset = load_tagset(a.tagset.as_deref().or(file.tagset.as_deref()))?;
    let corpus = load_corpus(&a.corpus, tagset.as_ref())?;
    let turns: usize = corpus.iter().map(|d| d.turns.len()).sum();
    let mentions: usize = corpus
        .iter()
        .flat_map(|d| &d.turns)
        .map(|t| t.mentions().count())
        .sum();
    let acts = Tagset::from_corpus(&corpus)?;
    let summary = json!({
        "dialogues": corpus.len(),
        "turns": turns,
        "mentions": mentions,
        "acts": acts.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
        "min_turns": corpus.iter().map(|d| d.turns.len()).min(),
        "max_turns": corpus.iter().map(|d| d.turns.len()).max(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn vocab(a: VocabArgs, file: &FileConfig) -> Result<(), CliError> {
    let tagset_path = a.tagset.or(file.tagset.clone());
    let tagset = load_tagset(tagset_path.as_deref())?;
    let min_word_count = pick(a.min_word_count, file.min_word_count, 1);
    let corpus = load_corpus(&a.corpus, tagset.as_ref())?;
    let v = derive_vocabularies(&corpus, min_word_count, tagset.as_ref())?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("vocab.json"), &v)?;
    write_json(
        &a.out.join("config.json"),
        &json!({
            "command": "vocab",
            "corpus": a.corpus,
            "tagset": tagset_path,
            "min_word_count": min_word_count,
        }),
    )?;
    println!(
        "words {}  roles {}  acts {}",
        v.words.len(),
        v.roles.len(),
        v.das.len()
    );
    Ok(())
}

fn gen_dataset(a: GenArgs, file: &FileConfig) -> Result<(), CliError> {
    let tagset_path = a.tagset.or(file.tagset.clone());
    let tagset = load_tagset(tagset_path.as_deref())?;
    let mode: SwapMode = parse_name(&pick(a.mode, file.mode.clone(), "external".into()), "mode")?;
    let defaults = DatasetConfig::default();
    let ctx_min = a.ctx_min.or(file.ctx_min);
    let ctx_max = a.ctx_max.or(file.ctx_max);
    let ctx_range = match (ctx_min, ctx_max) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(1), hi.unwrap_or(usize::MAX))),
    };
    let cfg = DatasetConfig {
        points_per_dialogue: pick(a.points, file.points, defaults.points_per_dialogue),
        n_neg: pick(a.negatives, file.negatives, defaults.n_neg),
        mode,
        ctx_range,
        seed: pick(a.seed, file.seed, defaults.seed),
    };
    let corpus = load_corpus(&a.corpus, tagset.as_ref())?;
    let ds = build_selection_dataset(&corpus, &cfg)?;
    prepare_out(&a.out)?;
    write_instances(&a.out.join("dataset.jsonl"), &ds.instances)?;
    write_json(&a.out.join("manifest.json"), &ds.manifest)?;
    write_json(
        &a.out.join("config.json"),
        &json!({
            "command": "gen-dataset",
            "corpus": a.corpus,
            "tagset": tagset_path,
            "dataset": cfg,
        }),
    )?;
    println!(
        "{} insertion points, {} pairs",
        ds.manifest.insertion_points, ds.manifest.pairs
    );
    Ok(())
}

fn train(a: TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let kind = pick(a.model.clone(), file.model.clone(), "neural".into()).to_ascii_lowercase();
    let seed = pick(a.seed, file.seed, 0);
    let train = read_instances(&a.train)?;
    let tagset_path = a.tagset.clone().or(file.tagset.clone());
    let tagset = load_tagset(tagset_path.as_deref())?;
    let min_word_count = pick(a.min_word_count, file.min_word_count, 1);
    let vocab: Vocabularies = match &a.vocab {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => derive_vocabularies(&corpus_of_instances(&train), min_word_count, tagset.as_ref())?,
    };
    prepare_out(&a.out)?;
    let ckpt_path = a.out.join("model.ckpt");
    match kind.as_str() {
        "neural" => {
            let d = NeuralConfig::default();
            let channels = match a.channels.as_ref().or(file.channels.as_ref()) {
                Some(s) => Channels::parse(s).map_err(|e| CliError::Usage(e.to_string()))?,
                None => d.channels,
            };
            let cfg = NeuralConfig {
                channels,
                emb_dim_word: pick(a.emb_dim_word, file.emb_dim_word, d.emb_dim_word),
                emb_dim_other: pick(a.emb_dim_other, file.emb_dim_other, d.emb_dim_other),
                gru_layers: pick(a.gru_layers, file.gru_layers, d.gru_layers),
                gru_hidden: pick(a.gru_hidden, file.gru_hidden, d.gru_hidden),
                head_hidden: pick(a.head_hidden, file.head_hidden, d.head_hidden),
                lr: pick(a.lr, file.lr, d.lr),
                batch: pick(a.batch, file.batch, d.batch),
                max_epochs: pick(a.max_epochs, file.max_epochs, d.max_epochs),
                patience: pick(a.patience, file.patience, d.patience),
                margin: pick(a.margin, file.margin, d.margin),
                seed,
                adam: d.adam,
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let dev_path = a
                .dev
                .as_ref()
                .ok_or_else(|| CliError::Usage("neural training needs --dev".into()))?;
            let dev = read_instances(dev_path)?;
            let encoding = EncodingConfig::new(channels, vocab).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut init = NeuralModel::new(cfg.clone(), encoding)?;
            let vectors = match &a.word_vectors {
                Some(p) => Some(init.load_word_vectors(&read_text(p)?)?),
                None => None,
            };
            let trained = train_neural_from(init, &train, &dev)?;
            let mut tsv = String::from("epoch\ttrain_loss\tdev_mrr\tdev_accuracy\n");
            for h in &trained.history {
                let _ = writeln!(
                    tsv,
                    "{}\t{:.6}\t{:.6}\t{:.6}",
                    h.epoch, h.train_loss, h.dev_mrr, h.dev_accuracy
                );
            }
            write_text(&a.out.join("history.tsv"), &tsv)?;
            write_json(&a.out.join("history.json"), &trained.history)?;
            write_json(&a.out.join("manifest.json"), &trained.manifest)?;
            save_checkpoint(
                &ModelCheckpoint {
                    model: CoherenceModel::Neural(trained.model),
                    manifest: Some(trained.manifest.clone()),
                },
                &ckpt_path,
            )?;
            write_json(
                &a.out.join("config.json"),
                &json!({
                    "command": "train",
                    "model": "neural",
                    "train": a.train,
                    "dev": dev_path,
                    "vocab": a.vocab,
                    "tagset": tagset_path,
                    "min_word_count": min_word_count,
                    "word_vectors": a.word_vectors,
                    "word_vectors_loaded": vectors,
                    "neural": cfg,
                }),
            )?;
            println!(
                "best epoch {} of {}, dev MRR {:.4}",
                trained.manifest.best_epoch, trained.manifest.epochs_run, trained.manifest.best_dev_mrr
            );
        }
        "linear" => {
            let d = LinearConfig::default();
            let features: GridFeatureSet = match a.features.as_ref().or(file.features.as_ref()) {
                Some(s) => parse_name(s, "feature set")?,
                None => d.features,
            };
            let transition = TransitionConfig::new(
                pick(a.transition_length, file.transition_length, d.transition.k),
                pick(a.saliency, file.saliency, d.transition.saliency),
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            let cfg = LinearConfig {
                features,
                transition,
                l2: pick(a.l2, file.l2, d.l2),
                epochs: pick(a.epochs, file.epochs, d.epochs),
                seed,
            };
            let model = train_linear(&train, &cfg, &vocab)?;
            save_checkpoint(
                &ModelCheckpoint {
                    model: CoherenceModel::Linear(model),
                    manifest: None,
                },
                &ckpt_path,
            )?;
            write_json(
                &a.out.join("config.json"),
                &json!({
                    "command": "train",
                    "model": "linear",
                    "train": a.train,
                    "vocab": a.vocab,
                    "tagset": tagset_path,
                    "min_word_count": min_word_count,
                    "linear": cfg,
                }),
            )?;
            println!("trained linear ranker on {} instances", train.len());
        }
        other => return Err(CliError::Usage(format!("unknown model `{other}` (neural or linear)"))),
    }
    Ok(())
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<CoherenceModel>, CliError> {
    paths.iter().map(|p| Ok(load_checkpoint(p)?.model)).collect()
}

fn eval_selection(a: EvalSelectionArgs) -> Result<(), CliError> {
    let models = load_models(&a.models)?;
    let data = read_instances(&a.data)?;
    let positives: Vec<usize> = data.iter().map(|i| i.positive_position).collect();
    let mut runs = Vec::new();
    for m in &models {
        let scores = data
            .iter()
            .map(|inst| {
                let turns: Vec<Turn> = inst.candidates.iter().map(|c| c.turn.clone()).collect();
                m.score_candidates(&inst.context, &turns)
            })
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(evaluate_selection(&scores, &positives)?.named());
    }
    let report = MetricsReport::from_runs("selection", data.len(), &runs);
    prepare_out(&a.out)?;
    write_json(&a.out.join("metrics.json"), &report)?;
    write_text(&a.out.join("metrics.tsv"), &report.to_tsv())?;
    write_json(
        &a.out.join("config.json"),
        &json!({ "command": "eval-selection", "models": a.models, "data": a.data }),
    )?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn eval_rating(a: EvalRatingArgs, file: &FileConfig) -> Result<(), CliError> {
    let gain: Gain = parse_name(&pick(a.gain.clone(), file.gain.clone(), "linear".into()), "gain")?;
    let models = load_models(&a.models)?;
    let data = load_rated_testset(&a.data, a.strict)?;
    let ratings: Vec<Vec<f64>> = data.iter().map(|i| i.ratings()).collect();
    let mut runs = Vec::new();
    for m in &models {
        let scores = data
            .iter()
            .map(|inst| m.score_candidates(&inst.context, &inst.turns()))
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(evaluate_rating(&scores, &ratings, gain)?.named());
    }
    let report = MetricsReport::from_runs("rating", data.len(), &runs);
    prepare_out(&a.out)?;
    write_json(&a.out.join("metrics.json"), &report)?;
    write_text(&a.out.join("metrics.tsv"), &report.to_tsv())?;
    write_json(
        &a.out.join("config.json"),
        &json!({
            "command": "eval-rating",
            "models": a.models,
            "data": a.data,
            "strict": a.strict,
            "gain": gain,
        }),
    )?;
    print!("{}", report.to_tsv());
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RateCandidate {
    Turn(Turn),
    Wrapped { turn: Turn },
}

#[derive(Deserialize)]
struct RateInput {
    context: Vec<Turn>,
    candidates: Vec<RateCandidate>,
}

fn describe(t: &Turn) -> String {
    let acts: Vec<&str> = t.das().map(|d| d.as_str()).collect();
    let heads: Vec<&str> = t.mentions().map(|m| m.head.as_str()).collect();
    let text = t.text();
    if text.is_empty() {
        format!("[{}] {}", acts.join(" "), heads.join(" "))
    } else {
        format!("[{}] {}", acts.join(" "), text)
    }
}

fn rate(a: RateArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&a.model)?.model;
    let input: RateInput = serde_json::from_str(&read_text(&a.input)?)?;
    let turns: Vec<Turn> = input
        .candidates
        .into_iter()
        .map(|c| match c {
            RateCandidate::Turn(t) | RateCandidate::Wrapped { turn: t } => t,
        })
        .collect();
    let scores = model.score_candidates(&input.context, &turns)?;
    let ranked = rank_scores(&scores, None);
    println!("rank\tcandidate\tscore\tturn");
    for r in ranked {
        println!("{}\t{}\t{:.6}\t{}", r.rank, r.index + 1, r.score, describe(&turns[r.index]));
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs, file: &FileConfig) -> Result<(), CliError> {
    let data = load_rated_testset(&a.data, a.strict)?;
    let tagset_path = a.tagset.or(file.tagset.clone());
    let tagset = match load_tagset(tagset_path.as_deref())? {
        Some(t) => t,
        None => {
            let turns: Vec<Dialogue> = data
                .iter()
                .map(|i| Dialogue {
                    id: i.id.clone(),
                    turns: i.context.iter().cloned().chain(i.turns()).collect(),
                })
                .collect();
            Tagset::from_corpus(&turns)?
        }
    };
    let report = mcc_report(&data, &tagset)?;
    let stats = group_stats(&data)?;
    prepare_out(&a.out)?;
    write_text(&a.out.join("coefficients.tsv"), &report.coefficients_tsv())?;
    write_json(&a.out.join("summary.json"), &report.summary())?;
    let mut g = String::from("provenance\tn\tmean\tsd\n");
    for s in &stats {
        let _ = writeln!(g, "{}\t{}\t{:.4}\t{:.4}", s.provenance.as_str(), s.n, s.mean, s.sd);
    }
    write_text(&a.out.join("groups.tsv"), &g)?;
    write_json(
        &a.out.join("config.json"),
        &json!({ "command": "analyze", "data": a.data, "tagset": tagset_path, "strict": a.strict }),
    )?;
    for gf in &report.groups {
        println!("{}\tR2 {:.4}\tadj {:.4}", gf.group.name(), gf.fit.r2, gf.fit.adj_r2);
    }
    print!("{g}");
    Ok(())
}

fn agreement(a: AgreementArgs) -> Result<(), CliError> {
    let m = RatingMatrix::parse_tsv(&read_text(&a.ratings)?).map_err(CliError::Data)?;
    let mut pairs = Vec::new();
    for i in 0..m.raters.len() {
        for j in i + 1..m.raters.len() {
            let (x, y) = m.pair(i, j);
            if x.is_empty() {
                continue;
            }
            let k = quadratic_weighted_kappa(&x, &y, &[1, 2, 3])?;
            pairs.push(json!({ "a": m.raters[i], "b": m.raters[j], "items": x.len(), "kappa": k }));
        }
    }
    let mean_kappa = if pairs.is_empty() {
        None
    } else {
        Some(pairs.iter().map(|p| p["kappa"].as_f64().unwrap_or(f64::NAN)).sum::<f64>() / pairs.len() as f64)
    };
    let loo = leave_one_out_correlation(&m)?;
    let out = json!({
        "items": m.items.len(),
        "raters": m.raters,
        "pairwise_kappa": pairs,
        "mean_kappa": mean_kappa,
        "leave_one_out": loo,
    });
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
        write_json(&dir.join("agreement.json"), &out)?;
        write_json(&dir.join("config.json"), &json!({ "command": "agreement", "ratings": a.ratings }))?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn baseline(a: BaselineArgs, file: &FileConfig) -> Result<(), CliError> {
    let metric_name = pick(a.metric, file.metric.clone(), "mrr".into());
    let metric: BaselineMetric = metric_name.parse().map_err(CliError::Usage)?;
    let relevance: Vec<f64> = match &a.ratings {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("invalid ratings `{s}`")))?,
        None => {
            let n = pick(a.candidates, file.candidates, 10);
            (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
        }
    };
    let trials = pick(a.trials, file.trials, 100_000);
    let seed = pick(a.seed, file.seed, 0);
    let est = random_baseline(&relevance, metric, trials, seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "metric": metric_name,
            "candidates": relevance.len(),
            "trials": trials,
            "seed": seed,
            "mean": est.mean,
            "std_error": est.std_error,
            "closed_form": est.closed_form,
        }))?
    );
    Ok(())
}
