//! Command-line front end.
//!
//! Exit codes: `0` success, `1` run failure, `2` usage error, `3` I/O error,
//! `4` configuration error. Failures print one line to stderr of the form
//! `error[<class>]: <message>`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, RunManifest, DEFAULT_BOOTSTRAP_RESAMPLES};
use crate::conllu;
use crate::experiment::{self, Evaluation, ExperimentConfig, LanguageData, LanguageMeta, TransferMatrix};
use crate::instances::{read_instances, write_instances};
use crate::probe::{self, ProbeModel, Sample, TrainConfig};
use crate::role::{self, Role, RoleInstance};
use crate::seed::{derive_seed, rng};
use crate::store::EmbeddingStore;
use crate::synth::{self, SynthConfig};

pub const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (store format 1, probe format 1)");

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Config(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }

    fn class(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Config(_) => "config",
            CliError::Failure(_) => "failure",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Config(m) | CliError::Failure(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let one_line = self.message().replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {}", self.class(), one_line)
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "subjprobe", version = LONG_VERSION, about = "Subjecthood probes over dependency treebanks", arg_required_else_help = true)]
pub struct Cli {
    /// Master seed; overrides the seed in any configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for training and evaluation sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label noun arguments of a CoNLL-U treebank as A/O/S/S_PASSIVE.
    Label {
        treebank: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate synthetic languages (stores, instance files and a run config).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build one balanced A/O dataset and print its summary as JSON.
    Dataset {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long, default_value_t = 1012)]
        n: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train one probe per language and layer and save the models.
    Train(RunArgs),
    /// Within-language sweep: train and evaluate each language on itself.
    Eval(RunArgs),
    /// Zero-shot transfer matrix over all configured source/destination pairs.
    Transfer(RunArgs),
    /// Re-emit report files from a saved results file.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Check the probe's analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        models: usize,
        #[arg(long, default_value_t = 100)]
        params: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// One language entry of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageEntry {
    #[serde(flatten)]
    pub meta: LanguageMeta,
    /// JSON-lines instance file. When absent the treebanks are labeled,
    /// numbering sentences consecutively across files.
    #[serde(default)]
    pub instances: Option<PathBuf>,
    pub store: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub languages: Vec<LanguageEntry>,
    /// Layers to probe; all layers of the stores when absent.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Source languages for `transfer`; all languages when absent.
    #[serde(default)]
    pub sources: Option<Vec<String>>,
    /// Destination languages for `transfer`; all languages when absent.
    #[serde(default)]
    pub dests: Option<Vec<String>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_n_per_class() -> usize {
    1012
}

fn default_resamples() -> usize {
    DEFAULT_BOOTSTRAP_RESAMPLES
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("report")
}

/// A validated run configuration with its data loaded.
pub struct LoadedRun {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub languages: Vec<LanguageData>,
    pub layers: Vec<usize>,
}

impl LoadedRun {
    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            n_per_class: self.config.n_per_class,
            master_seed: self.config.master_seed,
            train: self.config.train.clone(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.config.output_dir)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn open_store(path: &Path) -> CliResult<EmbeddingStore> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    EmbeddingStore::read_from(std::io::BufReader::new(file)).map_err(|e| io_err(path, e))
}

fn load_instances_file(path: &Path) -> CliResult<Vec<RoleInstance>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_instances(file).map_err(|e| io_err(path, e))
}

/// Labels a list of treebanks as one corpus with consecutive sentence
/// numbering.
pub fn label_treebanks(paths: &[PathBuf], language: &str) -> CliResult<Vec<RoleInstance>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for path in paths {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut sentences = conllu::parse_document(file).map_err(|e| match e {
            conllu::ConlluError::Io(e) => io_err(path, e),
            other => CliError::Failure(format!("{}: {other}", path.display())),
        })?;
        for s in &mut sentences {
            s.sent_index += offset;
        }
        offset += sentences.len();
        out.extend(role::extract_instances(&sentences, language));
    }
    Ok(out)
}

/// Validates a run configuration, naming the offending field on failure,
/// and loads every referenced file.
pub fn load_run(path: &Path, seed_override: Option<u64>) -> CliResult<LoadedRun> {
    let mut config: RunConfig = read_json(path)?;
    if let Some(seed) = seed_override {
        config.master_seed = seed;
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg_err = |field: String, msg: &str| CliError::Config(format!("{field}: {msg}"));

    if config.languages.is_empty() {
        return Err(cfg_err("languages".into(), "at least one language is required"));
    }
    if config.n_per_class == 0 {
        return Err(cfg_err("n_per_class".into(), "must be at least 1"));
    }
    config.train.validate().map_err(|e| cfg_err("train".into(), &e.to_string()))?;

    let mut seen = std::collections::BTreeSet::new();
    for (i, lang) in config.languages.iter().enumerate() {
        if lang.meta.code.is_empty() {
            return Err(cfg_err(format!("languages[{i}].code"), "must be non-empty"));
        }
        if !seen.insert(lang.meta.code.clone()) {
            return Err(cfg_err(format!("languages[{i}].code"), &format!("duplicate language `{}`", lang.meta.code)));
        }
        let store = resolve(&base_dir, &lang.store);
        if !store.is_file() {
            return Err(cfg_err(format!("languages[{i}].store"), &format!("file not found: {}", store.display())));
        }
        match &lang.instances {
            Some(p) => {
                let p = resolve(&base_dir, p);
                if !p.is_file() {
                    return Err(cfg_err(format!("languages[{i}].instances"), &format!("file not found: {}", p.display())));
                }
            }
            None => {
                if lang.meta.treebanks.is_empty() {
                    return Err(cfg_err(format!("languages[{i}]"), "needs `instances` or `treebanks`"));
                }
                for (j, t) in lang.meta.treebanks.iter().enumerate() {
                    let t = resolve(&base_dir, t);
                    if !t.is_file() {
                        return Err(cfg_err(format!("languages[{i}].treebanks[{j}]"), &format!("file not found: {}", t.display())));
                    }
                }
            }
        }
    }
    for (field, list) in [("sources", &config.sources), ("dests", &config.dests)] {
        for (j, code) in list.iter().flatten().enumerate() {
            if !seen.contains(code) {
                return Err(cfg_err(format!("{field}[{j}]"), &format!("unknown language `{code}`")));
            }
        }
    }

    let mut languages = Vec::with_capacity(config.languages.len());
    for entry in &config.languages {
        let store = open_store(&resolve(&base_dir, &entry.store))?;
        let instances = match &entry.instances {
            Some(p) => load_instances_file(&resolve(&base_dir, p))?,
            None => {
                let paths: Vec<PathBuf> = entry.meta.treebanks.iter().map(|t| resolve(&base_dir, t)).collect();
                label_treebanks(&paths, &entry.meta.code)?
            }
        };
        languages.push(LanguageData { meta: entry.meta.clone(), instances, store });
    }

    let min_layers = languages.iter().map(|l| l.store.num_layers()).min().unwrap_or(0);
    let layers = match &config.layers {
        Some(layers) => {
            if layers.is_empty() {
                return Err(cfg_err("layers".into(), "must not be empty"));
            }
            for (j, &l) in layers.iter().enumerate() {
                if l >= min_layers {
                    return Err(cfg_err(format!("layers[{j}]"), &format!("layer {l} >= num_layers {min_layers} of a store")));
                }
            }
            layers.clone()
        }
        None => (0..min_layers).collect(),
    };
    Ok(LoadedRun { config, base_dir, languages, layers })
}

/// Results of an `eval` or `transfer` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResults {
    pub manifest: RunManifest,
    pub evaluations: Vec<Evaluation>,
}

fn manifest_for(run: &LoadedRun, matrix: &TransferMatrix) -> RunManifest {
    let mut config = run.config.clone();
    config.output_dir = PathBuf::new();
    let mut config_json = serde_json::to_value(&config).expect("config serializes");
    if let Some(obj) = config_json.as_object_mut() {
        obj.remove("output_dir");
    }
    let master = run.config.master_seed;
    let mut manifest = RunManifest::new(master, run.config.bootstrap_resamples, config_json);
    manifest.config["layers"] = serde_json::json!(run.layers);
    for lang in &run.languages {
        let code = lang.code();
        manifest.seeds.insert(format!("split/{code}"), experiment::split_seed(master, code));
        manifest.counts.insert(format!("instances/{code}"), lang.instances.len());
        manifest.counts.insert(format!("store_records/{code}"), lang.store.len());
    }
    for p in &matrix.probes {
        manifest.seeds.insert(format!("probe/{}/{}", p.language, p.layer), p.seed);
        manifest.probes.push(analysis::ProbeRecord {
            language: p.language.clone(),
            layer: p.layer,
            seed: p.seed,
            train_accuracy: p.train_accuracy,
            final_loss: p.final_loss,
        });
    }
    manifest.seeds.insert("bootstrap".into(), bootstrap_seed(master));
    manifest.counts.insert("cells".into(), matrix.evaluations.len());
    manifest.counts.insert("failures".into(), matrix.failures.len());
    manifest.counts.insert("probes".into(), matrix.probes.len());
    manifest.counts.insert("predictions".into(), matrix.evaluations.iter().map(|e| e.predictions.len()).sum());
    manifest.failures = matrix.failures.clone();
    manifest
}

pub fn bootstrap_seed(master: u64) -> u64 {
    derive_seed(master, &["bootstrap"])
}

/// Which sweep to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Within,
    Transfer,
}

/// Runs a sweep and returns its results.
pub fn execute(run: &LoadedRun, sweep: Sweep) -> CliResult<RunResults> {
    let cfg = run.experiment_config();
    let codes: Vec<&str> = run.languages.iter().map(|l| l.code()).collect();
    let matrix = match sweep {
        Sweep::Transfer => {
            let sources: Vec<&str> = run.config.sources.as_ref().map_or(codes.clone(), |v| v.iter().map(String::as_str).collect());
            let dests: Vec<&str> = run.config.dests.as_ref().map_or(codes.clone(), |v| v.iter().map(String::as_str).collect());
            experiment::run_transfer(&run.languages, &sources, &dests, &run.layers, &cfg)
        }
        Sweep::Within => {
            let mut merged = TransferMatrix { evaluations: vec![], failures: vec![], probes: vec![], models: vec![] };
            for code in &codes {
                let m = experiment::run_transfer(&run.languages, &[code], &[code], &run.layers, &cfg)
                    .map_err(|e| CliError::Failure(e.to_string()))?;
                merged.evaluations.extend(m.evaluations);
                merged.failures.extend(m.failures);
                merged.probes.extend(m.probes);
                merged.models.extend(m.models);
            }
            Ok(merged)
        }
    }
    .map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(RunResults { manifest: manifest_for(run, &matrix), evaluations: matrix.evaluations })
}

pub const RESULTS_JSON: &str = "results.json";

/// Writes report files plus `results.json` into `dir`.
pub fn write_results(results: &RunResults, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let m = &results.manifest;
    let breakdowns = analysis::all_breakdowns(&results.evaluations, m.bootstrap_resamples, bootstrap_seed(m.master_seed));
    let mut files = analysis::emit_report(&results.evaluations, &breakdowns, m, dir).map_err(|e| match e {
        analysis::AnalysisError::Io { .. } | analysis::AnalysisError::Csv { .. } => CliError::Io(e.to_string()),
        other => CliError::Failure(other.to_string()),
    })?;
    let path = dir.join(RESULTS_JSON);
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, results).map_err(|e| io_err(&path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
    files.push(path);
    Ok(files)
}

/// Suite of synthetic languages for the `synth` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSuite {
    #[serde(default)]
    pub seed: u64,
    /// Draw every language's geometry from one shared axis seed.
    #[serde(default)]
    pub shared_axes: bool,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    /// Per-language generator settings. `seed` and `axis_seed` are derived
    /// from the suite seed and any values given here are replaced.
    pub languages: Vec<SynthConfig>,
}

impl SynthSuite {
    /// The per-language configs with derived seeds.
    pub fn configs(&self) -> Vec<SynthConfig> {
        self.languages
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.seed = derive_seed(self.seed, &["synth", &c.language]);
                c.axis_seed = Some(if self.shared_axes {
                    derive_seed(self.seed, &["axes"])
                } else {
                    derive_seed(self.seed, &["axes", &c.language])
                });
                c
            })
            .collect()
    }
}

/// Generates every language of `suite` into `dir` along with a `run.json`
/// that references them.
pub fn write_synth_suite(suite: &SynthSuite, dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut entries = Vec::new();
    let mut codes = std::collections::BTreeSet::new();
    for (i, cfg) in suite.configs().iter().enumerate() {
        if !codes.insert(cfg.language.clone()) {
            return Err(CliError::Config(format!("languages[{i}].language: duplicate `{}`", cfg.language)));
        }
        let corpus = synth::generate_corpus(cfg).map_err(|e| CliError::Config(format!("languages[{i}]: {e}")))?;
        let store_name = format!("{}.store", cfg.language);
        let inst_name = format!("{}.instances.jsonl", cfg.language);
        let store_path = dir.join(&store_name);
        let f = File::create(&store_path).map_err(|e| io_err(&store_path, e))?;
        corpus.store.write_to(BufWriter::new(f)).map_err(|e| io_err(&store_path, e))?;
        let inst_path = dir.join(&inst_name);
        let f = File::create(&inst_path).map_err(|e| io_err(&inst_path, e))?;
        write_instances(&corpus.instances, BufWriter::new(f)).map_err(|e| io_err(&inst_path, e))?;
        entries.push(LanguageEntry {
            meta: LanguageMeta {
                code: cfg.language.clone(),
                name: format!("synthetic {}", cfg.alignment),
                alignment: cfg.alignment,
                treebanks: vec![],
            },
            instances: Some(PathBuf::from(inst_name)),
            store: PathBuf::from(store_name),
        });
    }
    let run = RunConfig {
        languages: entries,
        layers: None,
        n_per_class: suite.n_per_class,
        master_seed: suite.seed,
        train: TrainConfig::default(),
        bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
        sources: None,
        dests: None,
        output_dir: PathBuf::from("report"),
    };
    let run_path = dir.join("run.json");
    write_json(&run_path, &run)?;
    Ok(run_path)
}

#[derive(Serialize)]
struct DatasetSummary {
    language: String,
    layer: usize,
    n_per_class: usize,
    split_seed: u64,
    train: BTreeMap<String, usize>,
    test: BTreeMap<Role, usize>,
    missing_embeddings: usize,
    train_keys: Vec<(usize, usize)>,
}

/// Gradient checks `models` random probes.
pub fn run_gradcheck(
    models: usize,
    params: usize,
    dim: usize,
    batch: usize,
    seed: u64,
) -> CliResult<Vec<probe::GradCheckReport>> {
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};
    if models == 0 || params == 0 || dim == 0 || batch == 0 {
        return Err(CliError::Usage("gradcheck: counts must be positive".into()));
    }
    (0..models)
        .map(|m| {
            let mut r = rng(derive_seed(seed, &["gradcheck", &m.to_string()]));
            let mut model = ProbeModel::initialized(dim, &mut r);
            for p in model.params_mut() {
                // perturb so biases are non-zero too
                *p += r.random_range(-0.1..0.1);
            }
            let samples: Vec<Sample> = (0..batch)
                .map(|i| {
                    let x = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
                    Sample::new(x, if i % 2 == 0 { probe::Label::A } else { probe::Label::O })
                })
                .collect();
            probe::gradient_check(&model, &samples, params, derive_seed(seed, &["gradcheck-params", &m.to_string()]))
                .map_err(|e| CliError::Failure(e.to_string()))
        })
        .collect()
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Label { treebank, lang, output } => {
            let instances = label_treebanks(&[treebank], &lang)?;
            let f = File::create(&output).map_err(|e| io_err(&output, e))?;
            write_instances(&instances, BufWriter::new(f)).map_err(|e| io_err(&output, e))?;
            let mut counts: BTreeMap<Role, usize> = Role::ALL.iter().map(|&r| (r, 0)).collect();
            for i in &instances {
                *counts.entry(i.role).or_default() += 1;
            }
            let summary: Vec<String> = counts.iter().map(|(r, n)| format!("{r}={n}")).collect();
            println!("labeled {} instances ({})", instances.len(), summary.join(" "));
        }
        Command::Synth { config, output } => {
            let mut suite: SynthSuite = read_json(&config)?;
            if let Some(s) = seed {
                suite.seed = s;
            }
            let run = write_synth_suite(&suite, &output)?;
            println!("{}", run.display());
        }
        Command::Dataset { instances, store, layer, n, output } => {
            let insts = load_instances_file(&instances)?;
            let store = open_store(&store)?;
            let language = store.language().to_string();
            let split_seed = experiment::split_seed(seed.unwrap_or(0), &language);
            let data = LanguageData {
                meta: LanguageMeta {
                    code: language.clone(),
                    name: String::new(),
                    alignment: crate::lang::Alignment::Nominative,
                    treebanks: vec![],
                },
                instances: insts,
                store,
            };
            let ds = experiment::build_balanced_dataset(&data, layer, n, split_seed).map_err(|e| match e {
                experiment::ExperimentError::EmptyTrainingSet | experiment::ExperimentError::Layer { .. } => {
                    CliError::Config(e.to_string())
                }
                other => CliError::Failure(other.to_string()),
            })?;
            let summary = DatasetSummary {
                language,
                layer,
                n_per_class: n,
                split_seed,
                train: [("A".to_string(), ds.split.train_a.len()), ("O".to_string(), ds.split.train_o.len())].into(),
                test: Role::ALL.iter().map(|&r| (r, ds.split.test_count(r))).collect(),
                missing_embeddings: ds.split.missing_embeddings,
                train_keys: ds.train_keys.clone(),
            };
            match output {
                Some(path) => write_json(&path, &summary)?,
                None => println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes")),
            }
        }
        Command::Train(args) => {
            let run = load_run(&args.config, seed)?;
            let dir = args.output.clone().unwrap_or_else(|| run.output_dir());
            let models_dir = dir.join("models");
            fs::create_dir_all(&models_dir).map_err(|e| io_err(&models_dir, e))?;
            let codes: Vec<&str> = run.languages.iter().map(|l| l.code()).collect();
            let matrix = experiment::run_transfer(&run.languages, &codes, &[], &run.layers, &run.experiment_config())
                .map_err(|e| CliError::Failure(e.to_string()))?;
            for model in &matrix.models {
                let path = models_dir.join(format!("{}_layer{}.probe", model.meta.language, model.meta.layer));
                let f = File::create(&path).map_err(|e| io_err(&path, e))?;
                model.write_to(BufWriter::new(f)).map_err(|e| io_err(&path, e))?;
            }
            for p in &matrix.probes {
                println!(
                    "{}\tlayer {}\ttrain_accuracy {}\tfinal_loss {}",
                    p.language,
                    p.layer,
                    analysis::format_sig6(p.train_accuracy),
                    analysis::format_sig6(p.final_loss)
                );
            }
            let expected = codes.len() * run.layers.len();
            if matrix.models.len() != expected {
                return Err(CliError::Failure(format!("trained {} of {expected} probes", matrix.models.len())));
            }
        }
        Command::Eval(args) => run_sweep(&args, seed, Sweep::Within)?,
        Command::Transfer(args) => run_sweep(&args, seed, Sweep::Transfer)?,
        Command::Report { results, output, resamples } => {
            let mut res: RunResults = read_json(&results)?;
            if let Some(r) = resamples {
                res.manifest.bootstrap_resamples = r;
            }
            write_results(&res, &output)?;
            println!("{}", output.display());
        }
        Command::Gradcheck { models, params, dim, batch, tolerance } => {
            let reports = run_gradcheck(models, params, dim, batch, seed.unwrap_or(0))?;
            for (i, r) in reports.iter().enumerate() {
                println!(
                    "model {i}\tmax_rel_error {:.3e}\tchecked {}\tskipped_kinks {}",
                    r.max_rel_error, r.checked, r.skipped_kinks
                );
            }
            let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            if let Some(r) = reports.iter().find(|r| r.checked < params) {
                return Err(CliError::Failure(format!("only {} parameters could be checked", r.checked)));
            }
            println!("max_rel_error {worst:.3e} over {models} models");
            if worst.is_nan() || worst > tolerance {
                return Err(CliError::Failure(format!("gradient check failed: {worst:.3e} > {tolerance:.1e}")));
            }
        }
    }
    Ok(())
}

fn run_sweep(args: &RunArgs, seed: Option<u64>, sweep: Sweep) -> CliResult<()> {
    let run = load_run(&args.config, seed)?;
    let dir = args.output.clone().unwrap_or_else(|| run.output_dir());
    let results = execute(&run, sweep)?;
    write_results(&results, &dir)?;
    for f in &results.manifest.failures {
        eprintln!("warning: {} -> {} layer {}: {}", f.source, f.dest, f.layer, f.error);
    }
    println!("{}", dir.display());
    Ok(())
}

/// Parses `argv` and runs the selected subcommand. Returns the process
/// exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("{}", CliError::Failure(e.to_string()));
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
