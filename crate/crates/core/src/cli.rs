//! `rumorpipe` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::embeddings::{load_store, EmbeddingError, EmbeddingMix, EmbeddingStore, FakeEmbedder};
use crate::eval::{
    always_comment, cross_validate, evaluate_stance, evaluate_veracity, render, CvOptions, EvalError, NamedReport,
    ReportFile, Task,
};
use crate::features::FeatureError;
use crate::models::{
    read_predictions, stance_estimate_map, train_pipeline, write_predictions, ConfigA, ConfigB, ModelError,
    Prediction, StanceClassifier, VeracityClassifier,
};
use crate::nn::NnError;
use crate::preprocess::{normalize_and_tokenize, read_token_file, write_token_file, TokenFileError, TokenSequence, EMPTY_TOKEN};
use crate::thread_model::{load_dataset_with_report, DataError, Dataset, Split};

pub const PREDICTIONS_A: &str = "predictions_a.jsonl";
pub const PREDICTIONS_B: &str = "predictions_b.jsonl";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";
pub const MODEL_A: &str = "model_a.ckpt";
pub const MODEL_B: &str = "model_b.ckpt";
pub const LOSS_A: &str = "loss_a.json";
pub const LOSS_B: &str = "loss_b.json";
pub const THREADS_ENV: &str = "RUMORPIPE_THREADS";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn io_is_input_problem(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::NotFound | ErrorKind::UnexpectedEof | ErrorKind::InvalidData)
}

fn classify(input_problem: bool, message: String) -> CliError {
    if input_problem {
        CliError::validation(message)
    } else {
        CliError::runtime(message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let input = match &e {
            DataError::Io { source, .. } => io_is_input_problem(source),
            _ => true,
        };
        classify(input, e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        let input = match &e {
            EmbeddingError::Io(source) => io_is_input_problem(source),
            _ => true,
        };
        classify(input, e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Embedding(inner) => inner.into(),
            FeatureError::Data(inner) => inner.into(),
            FeatureError::NotFitted => CliError::runtime(e.to_string()),
            other => CliError::validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Data(inner) => inner.into(),
            ModelError::Embedding(inner) => inner.into(),
            ModelError::Feature(inner) => inner.into(),
            ModelError::Io { ref source, .. } => classify(io_is_input_problem(source), e.to_string()),
            ModelError::Nn(NnError::Format(_)) | ModelError::Nn(NnError::Shape(_)) => CliError::validation(e.to_string()),
            ModelError::Nn(NnError::Io(ref source)) => classify(io_is_input_problem(source), e.to_string()),
            ModelError::Config(_) | ModelError::Integrity(_) | ModelError::Parse { .. } | ModelError::EmptyTraining => {
                CliError::validation(e.to_string())
            }
            ModelError::NonFiniteLoss { .. } | ModelError::Nn(_) => CliError::runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(inner) => inner.into(),
            other => CliError::validation(other.to_string()),
        }
    }
}

impl From<TokenFileError> for CliError {
    fn from(e: TokenFileError) -> Self {
        let input = match &e {
            TokenFileError::Io(source) => io_is_input_problem(source),
            _ => true,
        };
        classify(input, e.to_string())
    }
}

fn write_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::runtime(format!("cannot write {}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "rumorpipe", version, about = "Stance and veracity classification for rumour threads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize posts into a token file for an external embedder.
    Preprocess(PreprocessArgs),
    /// Validate an externally produced embedding store and copy it into place.
    EmbedImport(EmbedImportArgs),
    /// Build a deterministic stand-in embedding store.
    EmbedFake(EmbedFakeArgs),
    /// Train the stance and/or veracity model.
    Train(TrainArgs),
    /// Write predictions from trained models.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Topic-grouped k-fold cross validation over repeated runs.
    Cv(CvArgs),
    /// Print the tables of an existing report.json.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TaskSel {
    A,
    B,
    Both,
}

impl TaskSel {
    fn has_a(self) -> bool {
        self != TaskSel::B
    }

    fn has_b(self) -> bool {
        self != TaskSel::A
    }

    fn tasks(self) -> Vec<Task> {
        match self {
            TaskSel::A => vec![Task::A],
            TaskSel::B => vec![Task::B],
            TaskSel::Both => vec![Task::A, Task::B],
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset file(s) in JSON Lines form; several files are merged.
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Split tag for the loaded posts.
    #[arg(long, default_value = "train")]
    split: Split,
}

#[derive(Args, Debug)]
struct MixArgs {
    /// Scale applied to the mixed embedding.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Per-layer mixing weights, comma separated (default: uniform).
    #[arg(long, value_delimiter = ',')]
    layer_weights: Option<Vec<f64>>,
}

impl MixArgs {
    fn mix(&self, layers: usize) -> Result<EmbeddingMix, CliError> {
        let mix = match &self.layer_weights {
            None => EmbeddingMix {
                gamma: self.gamma,
                ..EmbeddingMix::uniform(layers)
            },
            Some(w) => EmbeddingMix {
                gamma: self.gamma,
                layer_weights: w.clone(),
            },
        };
        if mix.layer_weights.len() != layers {
            return Err(CliError::validation(format!(
                "{} layer weights given but the store holds {layers} layers",
                mix.layer_weights.len()
            )));
        }
        Ok(mix)
    }
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON file with `config_a` and/or `config_b` objects (a manifest works).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Convolution channels per kernel size (stance model only).
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(serde::Deserialize, Default)]
struct ConfigFile {
    config_a: Option<ConfigA>,
    config_b: Option<ConfigB>,
}

impl Overrides {
    fn configs(&self) -> Result<(ConfigA, ConfigB), CliError> {
        let file = match &self.config {
            None => ConfigFile::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::validation(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
            }
        };
        let mut a = file.config_a.unwrap_or_default();
        let mut b = file.config_b.unwrap_or_default();
        if let Some(v) = self.epochs {
            a.epochs = v;
            b.epochs = v;
        }
        if let Some(v) = self.batch_size {
            a.batch_size = v;
            b.batch_size = v;
        }
        if let Some(v) = self.lr {
            a.learning_rate = v;
            b.learning_rate = v;
        }
        if let Some(v) = self.hidden {
            a.hidden = v;
            b.hidden = v;
        }
        if let Some(v) = self.channels {
            a.channels = v;
        }
        if let Some(v) = self.dropout {
            a.dropout = v;
            b.dropout = v;
        }
        if let Some(v) = self.l2 {
            a.l2 = v;
            b.l2 = v;
        }
        a.validate()?;
        b.validate()?;
        Ok((a, b))
    }
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Token file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EmbedImportArgs {
    /// Store produced by the exporter.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the validated store; omit to only validate.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Token file the store was exported from; sequence lengths are checked.
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Dataset whose posts must all be present.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedFakeArgs {
    /// Dataset file(s) to embed.
    #[arg(long, num_args = 1.., required_unless_present = "tokens", conflicts_with = "tokens")]
    data: Vec<PathBuf>,
    /// Token file to embed instead of a dataset.
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Vector width D.
    #[arg(long, default_value_t = 1024)]
    dim: usize,
    /// Stored layers (L + 1).
    #[arg(long, default_value_t = 3)]
    layers: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "both")]
    task: TaskSel,
    #[command(flatten)]
    data: DataArgs,
    /// Embedding store (needed unless only task b is trained from --estimates).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Stance predictions to train task b on.
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    mix: MixArgs,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, value_enum, default_value = "both")]
    task: TaskSel,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Directory holding model_a.ckpt / model_b.ckpt (default: --out).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Stance predictions to feed task b when task a is not run.
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "both")]
    task: TaskSel,
    #[command(flatten)]
    data: DataArgs,
    /// Directory holding the prediction files (default: --out).
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also score the always-comment stance baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long, value_enum, default_value = "a")]
    task: TaskSel,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    mix: MixArgs,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json written by `eval` or `cv`.
    #[arg(long)]
    input: PathBuf,
}

/// Collects input digests and settings for `manifest.json`.
struct Manifest {
    command: &'static str,
    arguments: Vec<String>,
    inputs: BTreeMap<String, String>,
    settings: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    fn new(command: &'static str, arguments: &[String]) -> Self {
        Manifest {
            command,
            arguments: arguments.to_vec(),
            inputs: BTreeMap::new(),
            settings: serde_json::Map::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| classify(io_is_input_problem(&e), format!("cannot read {}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn set(&mut self, key: &str, value: impl serde::Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.settings.insert(key.to_string(), v);
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut obj = serde_json::Map::new();
        obj.insert("tool".into(), format!("rumorpipe {}", env!("CARGO_PKG_VERSION")).into());
        obj.insert("command".into(), self.command.into());
        obj.insert("arguments".into(), serde_json::to_value(&self.arguments).unwrap_or_default());
        obj.insert("inputs".into(), serde_json::to_value(&self.inputs).unwrap_or_default());
        for (k, v) in &self.settings {
            obj.insert(k.clone(), v.clone());
        }
        write_json(path, &serde_json::Value::Object(obj))
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| write_error(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| write_error(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| write_error(dir, e))
}

fn sidecar_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn load_data(args: &DataArgs, manifest: &mut Manifest) -> Result<Dataset, CliError> {
    let mut parts = Vec::with_capacity(args.data.len());
    for path in &args.data {
        let (d, report) = load_dataset_with_report(path, args.split)?;
        if !report.missing_metadata.is_empty() {
            log::warn!(
                "{}: {} posts lack user metadata (defaulted)",
                path.display(),
                report.missing_metadata.len()
            );
        }
        manifest.input(path)?;
        parts.push(d);
    }
    let dataset = if parts.len() == 1 {
        parts.pop().unwrap_or_else(|| Dataset::empty(args.split))
    } else {
        Dataset::merge(&parts, args.split)?
    };
    log::info!("loaded {} threads, {} posts", dataset.threads.len(), dataset.num_posts());
    Ok(dataset)
}

fn load_store_checked(path: &Path, manifest: &mut Manifest) -> Result<EmbeddingStore, CliError> {
    let store = load_store(path).map_err(|e| CliError::from(e).prefixed(path))?;
    manifest.input(path)?;
    log::info!(
        "embedding store {}: {} posts, D={}, {} layers",
        path.display(),
        store.len(),
        store.dim(),
        store.layers()
    );
    Ok(store)
}

impl CliError {
    fn prefixed(self, path: &Path) -> Self {
        CliError {
            code: self.code,
            message: format!("{}: {}", path.display(), self.message),
        }
    }
}

fn require_store<'a>(store: &'a Option<PathBuf>, why: &str) -> Result<&'a PathBuf, CliError> {
    store
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("--store is required {why}")))
}

fn read_estimates(path: &Path, manifest: &mut Manifest) -> Result<HashMap<String, [f64; 4]>, CliError> {
    let preds = read_predictions(path, 4)?;
    manifest.input(path)?;
    Ok(stance_estimate_map(&preds)?)
}

fn cmd_preprocess(args: &PreprocessArgs, argv: &[String]) -> Result<(), CliError> {
    let mut manifest = Manifest::new("preprocess", argv);
    let dataset = load_data(&args.data, &mut manifest)?;
    let seqs: Vec<(String, TokenSequence)> = dataset
        .posts()
        .map(|p| (p.id.clone(), normalize_and_tokenize(&p.raw_text)))
        .collect();
    let file = std::fs::File::create(&args.out).map_err(|e| write_error(&args.out, e))?;
    let mut w = BufWriter::new(file);
    write_token_file(&mut w, seqs.iter().map(|(id, s)| (id.as_str(), s))).map_err(|e| match e {
        TokenFileError::Io(io) => write_error(&args.out, io),
        other => CliError::validation(other.to_string()),
    })?;
    w.flush().map_err(|e| write_error(&args.out, e))?;
    let empty = seqs.iter().filter(|(_, s)| s.is_empty()).count();
    let truncated = seqs.iter().filter(|(_, s)| s.truncated).count();
    manifest.set("posts", seqs.len());
    manifest.write(&sidecar_manifest(&args.out))?;
    println!(
        "wrote {} posts to {} ({empty} empty, {truncated} truncated)",
        seqs.len(),
        args.out.display()
    );
    Ok(())
}

fn token_sequences_from_file(path: &Path) -> Result<Vec<(String, TokenSequence)>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| classify(io_is_input_problem(&e), format!("cannot read {}: {e}", path.display())))?;
    let entries = read_token_file(BufReader::new(file)).map_err(|e| CliError::from(e).prefixed(path))?;
    Ok(entries
        .into_iter()
        .map(|(id, tokens)| {
            let tokens = if tokens.len() == 1 && tokens[0] == EMPTY_TOKEN {
                Vec::new()
            } else {
                tokens
            };
            (
                id,
                TokenSequence {
                    tokens,
                    truncated: false,
                },
            )
        })
        .collect())
}

fn cmd_embed_fake(args: &EmbedFakeArgs, argv: &[String]) -> Result<(), CliError> {
    if args.dim == 0 || args.layers == 0 {
        return Err(CliError::validation("--dim and --layers must be positive"));
    }
    let mut manifest = Manifest::new("embed-fake", argv);
    let seqs = match &args.tokens {
        Some(path) => {
            manifest.input(path)?;
            token_sequences_from_file(path)?
        }
        None => {
            let data = DataArgs {
                data: args.data.clone(),
                split: Split::Train,
            };
            let dataset = load_data(&data, &mut manifest)?;
            dataset
                .posts()
                .map(|p| (p.id.clone(), normalize_and_tokenize(&p.raw_text)))
                .collect()
        }
    };
    let embedder = FakeEmbedder::new(args.seed, args.layers, args.dim);
    let store = embedder.build_store(seqs.iter().map(|(id, s)| (id.as_str(), s)))?;
    store.save(&args.out).map_err(|e| write_error(&args.out, e))?;
    manifest.set("seed", args.seed);
    manifest.set("dim", args.dim);
    manifest.set("layers", args.layers);
    manifest.write(&sidecar_manifest(&args.out))?;
    println!(
        "wrote {} posts to {} (D={}, {} layers)",
        store.len(),
        args.out.display(),
        args.dim,
        args.layers
    );
    Ok(())
}

fn cmd_embed_import(args: &EmbedImportArgs, argv: &[String]) -> Result<(), CliError> {
    let mut manifest = Manifest::new("embed-import", argv);
    let store = load_store_checked(&args.input, &mut manifest)?;
    if let Some(path) = &args.tokens {
        manifest.input(path)?;
        let seqs = token_sequences_from_file(path)?;
        for (id, seq) in &seqs {
            let stored = store.get(id)?;
            let expected = seq.model_tokens().len();
            if stored.tokens() != expected {
                return Err(CliError::validation(format!(
                    "post {id}: store holds {} tokens, token file has {expected}",
                    stored.tokens()
                )));
            }
        }
        if seqs.len() != store.len() {
            return Err(CliError::validation(format!(
                "store holds {} posts, token file lists {}",
                store.len(),
                seqs.len()
            )));
        }
    }
    if !args.data.is_empty() {
        let data = DataArgs {
            data: args.data.clone(),
            split: Split::Train,
        };
        let dataset = load_data(&data, &mut manifest)?;
        for post in dataset.posts() {
            let stored = store.get(&post.id)?;
            let expected = normalize_and_tokenize(&post.raw_text).model_tokens().len();
            if stored.tokens() != expected {
                return Err(CliError::validation(format!(
                    "post {}: store holds {} tokens, preprocessing yields {expected}",
                    post.id,
                    stored.tokens()
                )));
            }
        }
    }
    if let Some(out) = &args.out {
        store.save(out).map_err(|e| write_error(out, e))?;
        manifest.write(&sidecar_manifest(out))?;
    }
    println!(
        "store ok: {} posts, D={}, {} layers",
        store.len(),
        store.dim(),
        store.layers()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let (config_a, config_b) = args.overrides.configs()?;
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("train", argv);
    if let Some(c) = &args.overrides.config {
        manifest.input(c)?;
    }
    let dataset = load_data(&args.data, &mut manifest)?;
    manifest.set("seed", args.seed);
    let model_a_path = args.out.join(MODEL_A);

    if args.task == TaskSel::Both {
        let store = load_store_checked(require_store(&args.store, "to train task a")?, &mut manifest)?;
        let mix = args.mix.mix(store.layers())?;
        let p = train_pipeline(&dataset, &store, &mix, &config_a, &config_b, args.seed)?;
        p.stance.save(&model_a_path)?;
        p.veracity.save(args.out.join(MODEL_B))?;
        write_json(&args.out.join(LOSS_A), &p.stance_loss)?;
        write_json(&args.out.join(LOSS_B), &p.veracity_loss)?;
        manifest.set("mix", &mix);
        manifest.set("config_a", &config_a);
        manifest.set("config_b", &config_b);
    } else if args.task == TaskSel::A {
        let store = load_store_checked(require_store(&args.store, "to train task a")?, &mut manifest)?;
        let mix = args.mix.mix(store.layers())?;
        let (model, loss) = StanceClassifier::train(&dataset, &store, &mix, &config_a, args.seed)?;
        model.save(&model_a_path)?;
        write_json(&args.out.join(LOSS_A), &loss)?;
        manifest.set("mix", &mix);
        manifest.set("config_a", &config_a);
    } else {
        let estimates = match &args.estimates {
            Some(path) => read_estimates(path, &mut manifest)?,
            None if model_a_path.exists() => {
                let store_path = require_store(&args.store, "to derive stance estimates from model_a.ckpt")?;
                let store = load_store_checked(store_path, &mut manifest)?;
                manifest.input(&model_a_path)?;
                let model = StanceClassifier::load(&model_a_path)?;
                log::info!("deriving stance estimates with {}", model_a_path.display());
                stance_estimate_map(&model.predict(&dataset, &store)?)?
            }
            None => {
                return Err(CliError::validation(format!(
                    "task b needs stance estimates: pass --estimates or train task a first (missing {})",
                    model_a_path.display()
                )))
            }
        };
        let (model, loss) = VeracityClassifier::train(&dataset, &estimates, &config_b, args.seed.wrapping_add(1))?;
        model.save(args.out.join(MODEL_B))?;
        write_json(&args.out.join(LOSS_B), &loss)?;
        manifest.set("config_b", &config_b);
    }
    manifest.write(&args.out.join(MANIFEST))?;
    println!("models written to {}", args.out.display());
    Ok(())
}

fn cmd_predict(args: &PredictArgs, argv: &[String]) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    let models = args.models.clone().unwrap_or_else(|| args.out.clone());
    let mut manifest = Manifest::new("predict", argv);
    let dataset = load_data(&args.data, &mut manifest)?;
    let model_a_path = models.join(MODEL_A);
    let stance_preds: Option<Vec<Prediction>> = if args.task.has_a() || args.estimates.is_none() {
        if !model_a_path.exists() {
            return Err(CliError::validation(format!("missing stance model {}", model_a_path.display())));
        }
        let store = load_store_checked(require_store(&args.store, "to run the stance model")?, &mut manifest)?;
        manifest.input(&model_a_path)?;
        let model = StanceClassifier::load(&model_a_path)?;
        Some(model.predict(&dataset, &store)?)
    } else {
        None
    };
    if let (true, Some(preds)) = (args.task.has_a(), &stance_preds) {
        let path = args.out.join(PREDICTIONS_A);
        write_predictions(&path, preds)?;
        println!("wrote {} stance predictions to {}", preds.len(), path.display());
    }
    if args.task.has_b() {
        let estimates = match (&stance_preds, &args.estimates) {
            (Some(p), _) => stance_estimate_map(p)?,
            (None, Some(path)) => read_estimates(path, &mut manifest)?,
            (None, None) => unreachable!("stance predictions are computed when no estimates are given"),
        };
        let model_b_path = models.join(MODEL_B);
        if !model_b_path.exists() {
            return Err(CliError::validation(format!("missing veracity model {}", model_b_path.display())));
        }
        manifest.input(&model_b_path)?;
        let model = VeracityClassifier::load(&model_b_path)?;
        let preds = model.predict(&dataset, &estimates)?;
        let path = args.out.join(PREDICTIONS_B);
        write_predictions(&path, &preds)?;
        println!("wrote {} veracity predictions to {}", preds.len(), path.display());
    }
    manifest.write(&args.out.join(MANIFEST))?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs, argv: &[String]) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    let dir = args.predictions.clone().unwrap_or_else(|| args.out.clone());
    let mut manifest = Manifest::new("eval", argv);
    let dataset = load_data(&args.data, &mut manifest)?;
    let split = args.data.split.to_string();
    let mut entries = Vec::new();
    if args.task.has_a() {
        let path = dir.join(PREDICTIONS_A);
        let preds = read_predictions(&path, 4)?;
        manifest.input(&path)?;
        entries.push(NamedReport {
            name: "model".into(),
            report: evaluate_stance(&preds, &dataset, &split)?,
        });
    }
    if args.baseline {
        entries.push(NamedReport {
            name: "always comment".into(),
            report: evaluate_stance(&always_comment(&dataset), &dataset, &split)?,
        });
    }
    if args.task.has_b() {
        let path = dir.join(PREDICTIONS_B);
        let preds = read_predictions(&path, 3)?;
        manifest.input(&path)?;
        entries.push(NamedReport {
            name: "model".into(),
            report: evaluate_veracity(&preds, &dataset, &split)?,
        });
    }
    let report = ReportFile::Evaluation { entries };
    write_json(&args.out.join(REPORT), &report)?;
    manifest.write(&args.out.join(MANIFEST))?;
    print!("{}", render(&report));
    Ok(())
}

fn cmd_cv(args: &CvArgs, argv: &[String]) -> Result<(), CliError> {
    let (config_a, config_b) = args.overrides.configs()?;
    if args.repeats == 0 {
        return Err(CliError::validation("--repeats must be at least 1"));
    }
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("cv", argv);
    if let Some(c) = &args.overrides.config {
        manifest.input(c)?;
    }
    let dataset = load_data(&args.data, &mut manifest)?;
    let store = load_store_checked(&args.store, &mut manifest)?;
    let mix = args.mix.mix(store.layers())?;
    let options = CvOptions {
        tasks: args.task.tasks(),
        k: args.k,
        repeats: args.repeats,
        seed: args.seed,
        config_a: config_a.clone(),
        config_b: config_b.clone(),
    };
    let cv = cross_validate(&dataset, &store, &mix, &options)?;
    let report = ReportFile::CrossValidation(cv);
    write_json(&args.out.join(REPORT), &report)?;
    manifest.set("seed", args.seed);
    manifest.set("k", args.k);
    manifest.set("repeats", args.repeats);
    manifest.set("mix", &mix);
    manifest.set("config_a", &config_a);
    if args.task.has_b() {
        manifest.set("config_b", &config_b);
    }
    manifest.write(&args.out.join(MANIFEST))?;
    print!("{}", render(&report));
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| classify(io_is_input_problem(&e), format!("cannot read {}: {e}", args.input.display())))?;
    let report: ReportFile =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", args.input.display())))?;
    print!("{}", render(&report));
    Ok(())
}

fn thread_limit() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a, argv),
        Command::EmbedImport(a) => cmd_embed_import(a, argv),
        Command::EmbedFake(a) => cmd_embed_fake(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Predict(a) => cmd_predict(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::Cv(a) => cmd_cv(a, argv),
        Command::Report(a) => cmd_report(a),
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let rest = argv.get(1..).unwrap_or_default();
    let result = thread_limit().and_then(|limit| match limit {
        None => dispatch(&cli, rest),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::runtime(format!("cannot start worker pool: {e}")))?
            .install(|| dispatch(&cli, rest)),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
