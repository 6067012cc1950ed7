//! Balanced A/O datasets, the per-layer probe sweep and the cross-lingual
//! transfer matrix.
//!
//! For every `(language, layer)` a probe is trained on `n_per_class` A and
//! `n_per_class` O embeddings. It is then evaluated on the held-out items of
//! one or more destination languages: the remaining A and O items plus every
//! S and passive S. A prediction counts as A when `P(A) > 0.5`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Alignment;
use crate::probe::{self, Label, ProbeError, ProbeModel, Sample, TrainConfig};
use crate::role::{Animacy, Role, RoleInstance};
use crate::seed::{derive_seed, rng};
use crate::store::EmbeddingStore;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{language}: need {needed} A and {needed} O instances with embeddings, found A={available_a}, O={available_o}")]
    Insufficient { language: String, needed: usize, available_a: usize, available_o: usize },

    #[error("n_per_class must be at least 1")]
    EmptyTrainingSet,

    #[error("{language}: layer {layer} out of range (store has {num_layers} layers)")]
    Layer { language: String, layer: usize, num_layers: usize },

    #[error("probe for {source_lang} has dim {expected}, {dest} store has dim {found}")]
    Dimension { source_lang: String, dest: String, expected: usize, found: usize },

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageMeta {
    pub code: String,
    #[serde(default)]
    pub name: String,
    pub alignment: Alignment,
    #[serde(default)]
    pub treebanks: Vec<PathBuf>,
}

/// A language ready for probing: metadata, labeled instances and their
/// embeddings.
#[derive(Clone, Debug)]
pub struct LanguageData {
    pub meta: LanguageMeta,
    pub instances: Vec<RoleInstance>,
    pub store: EmbeddingStore,
}

impl LanguageData {
    pub fn code(&self) -> &str {
        &self.meta.code
    }

    fn embedding(&self, index: usize, layer: usize) -> Option<&[f32]> {
        let inst = &self.instances[index];
        self.store.lookup(inst.sent_index as u32, inst.token_index as u32, layer)
    }

    fn check_layer(&self, layer: usize) -> Result<(), ExperimentError> {
        if layer >= self.store.num_layers() {
            return Err(ExperimentError::Layer {
                language: self.meta.code.clone(),
                layer,
                num_layers: self.store.num_layers(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_per_class: usize,
    pub master_seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { n_per_class: 1012, master_seed: 0, train: TrainConfig::default() }
    }
}

/// Seed of the train/test split of a language (shared by all layers).
pub fn split_seed(master: u64, language: &str) -> u64 {
    derive_seed(master, &["split", language])
}

/// Seed of the probe trained on `(language, layer)`.
pub fn probe_seed(master: u64, language: &str, layer: usize) -> u64 {
    derive_seed(master, &["probe", language, &layer.to_string()])
}

/// Train/test membership of one language, as indices into its instance
/// list. Identical for every layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_a: Vec<usize>,
    pub train_o: Vec<usize>,
    pub test_by_role: BTreeMap<Role, Vec<usize>>,
    /// Instances skipped because the store has no embedding for them.
    pub missing_embeddings: usize,
}

impl DatasetSplit {
    pub fn test_count(&self, role: Role) -> usize {
        self.test_by_role.get(&role).map_or(0, Vec::len)
    }
}

/// Samples the balanced training set: `n_per_class` A and O items drawn
/// uniformly without replacement; everything else with an embedding is test
/// data.
pub fn split_instances(
    language: &str,
    instances: &[RoleInstance],
    store: &EmbeddingStore,
    n_per_class: usize,
    split_seed: u64,
) -> Result<DatasetSplit, ExperimentError> {
    if n_per_class == 0 {
        return Err(ExperimentError::EmptyTrainingSet);
    }
    let mut by_role: BTreeMap<Role, Vec<usize>> = BTreeMap::new();
    let mut missing = 0usize;
    for (i, inst) in instances.iter().enumerate() {
        if store.contains(inst.sent_index as u32, inst.token_index as u32) {
            by_role.entry(inst.role).or_default().push(i);
        } else {
            missing += 1;
        }
    }
    if missing > 0 {
        log::warn!("{language}: {missing} instances have no embedding and were skipped");
    }
    let available_a = by_role.get(&Role::A).map_or(0, Vec::len);
    let available_o = by_role.get(&Role::O).map_or(0, Vec::len);
    if available_a < n_per_class || available_o < n_per_class {
        return Err(ExperimentError::Insufficient {
            language: language.to_string(),
            needed: n_per_class,
            available_a,
            available_o,
        });
    }

    let mut rng = rng(split_seed);
    let mut draw = |pool: Vec<usize>| -> (Vec<usize>, Vec<usize>) {
        let mut shuffled = pool;
        shuffled.shuffle(&mut rng);
        let mut rest = shuffled.split_off(n_per_class);
        rest.sort_unstable();
        (shuffled, rest)
    };
    let (train_a, rest_a) = draw(by_role.remove(&Role::A).unwrap_or_default());
    let (train_o, rest_o) = draw(by_role.remove(&Role::O).unwrap_or_default());

    let mut test_by_role = BTreeMap::new();
    test_by_role.insert(Role::A, rest_a);
    test_by_role.insert(Role::O, rest_o);
    for role in [Role::S, Role::SPassive] {
        test_by_role.insert(role, by_role.remove(&role).unwrap_or_default());
    }
    Ok(DatasetSplit { train_a, train_o, test_by_role, missing_embeddings: missing })
}

/// Training data for one `(language, layer)` plus its held-out items.
#[derive(Clone, Debug)]
pub struct BalancedDataset {
    pub language: String,
    pub layer: usize,
    /// A items first, then O items, each in sampled order.
    pub train: Vec<Sample>,
    /// `(sent_index, token_index)` of every training item, aligned with `train`.
    pub train_keys: Vec<(usize, usize)>,
    pub split: DatasetSplit,
}

impl BalancedDataset {
    /// Held-out vectors of `role` at this dataset's layer.
    pub fn test_vectors<'a>(&'a self, role: Role, data: &'a LanguageData) -> impl Iterator<Item = &'a [f32]> + 'a {
        self.split
            .test_by_role
            .get(&role)
            .into_iter()
            .flatten()
            .filter_map(move |&i| data.embedding(i, self.layer))
    }

    pub fn test_keys(&self, role: Role, instances: &[RoleInstance]) -> Vec<(usize, usize)> {
        self.split.test_by_role.get(&role).into_iter().flatten().map(|&i| instances[i].key()).collect()
    }
}

fn materialize(data: &LanguageData, split: DatasetSplit, layer: usize) -> Result<BalancedDataset, ExperimentError> {
    data.check_layer(layer)?;
    let mut train = Vec::with_capacity(split.train_a.len() + split.train_o.len());
    let mut train_keys = Vec::with_capacity(train.capacity());
    for (indices, label) in [(&split.train_a, Label::A), (&split.train_o, Label::O)] {
        for &i in indices {
            let v = data.embedding(i, layer).expect("split only keeps embedded instances");
            train.push(Sample::new(v.iter().map(|&x| x as f64).collect(), label));
            train_keys.push(data.instances[i].key());
        }
    }
    Ok(BalancedDataset { language: data.meta.code.clone(), layer, train, train_keys, split })
}

/// Builds the balanced dataset of one language at one layer.
pub fn build_balanced_dataset(
    data: &LanguageData,
    layer: usize,
    n_per_class: usize,
    split_seed: u64,
) -> Result<BalancedDataset, ExperimentError> {
    data.check_layer(layer)?;
    let split = split_instances(&data.meta.code, &data.instances, &data.store, n_per_class, split_seed)?;
    materialize(data, split, layer)
}

/// Hard-label counts of one role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardCounts {
    pub to_a: usize,
    pub to_o: usize,
}

impl HardCounts {
    pub fn total(&self) -> usize {
        self.to_a + self.to_o
    }
}

/// Log odds of S items being classified A minus the log odds of O items
/// being classified A, with 1/2 added to every cell. `None` when either
/// role has no items.
pub fn log_odds_s_vs_o(s: HardCounts, o: HardCounts) -> Option<f64> {
    if s.total() == 0 || o.total() == 0 {
        return None;
    }
    let odds = |c: HardCounts| ((c.to_a as f64 + 0.5) / (c.to_o as f64 + 0.5)).ln();
    Some(odds(s) - odds(o))
}

/// Metrics for one `(source, destination, layer)` evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub source: String,
    pub dest: String,
    pub layer: usize,
    /// Mean of A recall and O recall over held-out items; `None` when the
    /// destination has neither held-out A nor O items.
    pub accuracy_ao: Option<f64>,
    /// Mean predicted P(A) per role, for roles with at least one item.
    pub p_a_by_role: BTreeMap<Role, f64>,
    pub n_by_role: BTreeMap<Role, usize>,
    pub n_pred_a_by_role: BTreeMap<Role, usize>,
    pub log_odds_s_vs_o: Option<f64>,
}

impl TransferCell {
    pub fn counts(&self, role: Role) -> HardCounts {
        let n = self.n_by_role.get(&role).copied().unwrap_or(0);
        let to_a = self.n_pred_a_by_role.get(&role).copied().unwrap_or(0);
        HardCounts { to_a, to_o: n - to_a }
    }

    /// Fraction of `role` items classified A.
    pub fn proportion_a(&self, role: Role) -> Option<f64> {
        let c = self.counts(role);
        (c.total() > 0).then(|| c.to_a as f64 / c.total() as f64)
    }
}

/// One held-out item scored by a probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sent_index: usize,
    pub token_index: usize,
    pub role: Role,
    pub animacy: Option<Animacy>,
    pub case: Option<String>,
    pub p_a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cell: TransferCell,
    pub source_alignment: Alignment,
    pub dest_alignment: Alignment,
    pub predictions: Vec<Prediction>,
}

/// A probe with its training trace.
#[derive(Clone, Debug)]
pub struct TrainedProbe {
    pub model: ProbeModel,
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

pub fn train_probe(dataset: &BalancedDataset, config: &ExperimentConfig) -> Result<TrainedProbe, ExperimentError> {
    let train_config = TrainConfig { seed: probe_seed(config.master_seed, &dataset.language, dataset.layer), ..config.train.clone() };
    let outcome = probe::train(&dataset.train, &train_config)?;
    let mut model = outcome.model;
    model.meta.language = dataset.language.clone();
    model.meta.layer = dataset.layer;
    let train_accuracy = probe::accuracy(&model, &dataset.train)?;
    Ok(TrainedProbe { model, loss_history: outcome.loss_history, train_accuracy })
}

/// Scores every held-out item of `dest` with `model`.
pub fn evaluate(
    model: &ProbeModel,
    source: &LanguageMeta,
    dest: &LanguageData,
    split: &DatasetSplit,
    layer: usize,
) -> Result<Evaluation, ExperimentError> {
    dest.check_layer(layer)?;
    if model.dim() != dest.store.dim() {
        return Err(ExperimentError::Dimension {
            source_lang: source.code.clone(),
            dest: dest.meta.code.clone(),
            expected: model.dim(),
            found: dest.store.dim(),
        });
    }
    let mut predictions = Vec::new();
    let mut n_by_role = BTreeMap::new();
    let mut n_pred_a_by_role = BTreeMap::new();
    let mut p_a_by_role = BTreeMap::new();

    for role in Role::ALL {
        let mut n = 0usize;
        let mut pred_a = 0usize;
        let mut sum = 0.0;
        for &i in split.test_by_role.get(&role).into_iter().flatten() {
            let Some(v) = dest.embedding(i, layer) else { continue };
            let p_a = model.prob_a(v)?;
            n += 1;
            pred_a += (p_a > 0.5) as usize;
            sum += p_a;
            let inst = &dest.instances[i];
            predictions.push(Prediction {
                sent_index: inst.sent_index,
                token_index: inst.token_index,
                role,
                animacy: inst.animacy,
                case: inst.case.clone(),
                p_a,
            });
        }
        n_by_role.insert(role, n);
        n_pred_a_by_role.insert(role, pred_a);
        if n > 0 {
            p_a_by_role.insert(role, sum / n as f64);
        }
    }

    let mut cell = TransferCell {
        source: source.code.clone(),
        dest: dest.meta.code.clone(),
        layer,
        accuracy_ao: None,
        p_a_by_role,
        n_by_role,
        n_pred_a_by_role,
        log_odds_s_vs_o: None,
    };
    let a = cell.counts(Role::A);
    let o = cell.counts(Role::O);
    let recalls: Vec<f64> = [
        (a.total() > 0).then(|| a.to_a as f64 / a.total() as f64),
        (o.total() > 0).then(|| o.to_o as f64 / o.total() as f64),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !recalls.is_empty() {
        cell.accuracy_ao = Some(recalls.iter().sum::<f64>() / recalls.len() as f64);
    }
    cell.log_odds_s_vs_o = log_odds_s_vs_o(cell.counts(Role::S), o);

    Ok(Evaluation { cell, source_alignment: source.alignment, dest_alignment: dest.meta.alignment, predictions })
}

/// Within-language sweep: one probe per layer, evaluated on its own
/// language's held-out items. Results follow the order of `layers`.
pub fn run_within_language(
    data: &LanguageData,
    layers: &[usize],
    config: &ExperimentConfig,
) -> Result<Vec<Evaluation>, ExperimentError> {
    let split = split_instances(
        &data.meta.code,
        &data.instances,
        &data.store,
        config.n_per_class,
        split_seed(config.master_seed, &data.meta.code),
    )?;
    layers
        .par_iter()
        .map(|&layer| {
            let dataset = materialize(data, split.clone(), layer)?;
            let probe = train_probe(&dataset, config)?;
            evaluate(&probe.model, &data.meta, data, &split, layer)
        })
        .collect()
}

/// A `(source, dest, layer)` cell that could not be computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub source: String,
    pub dest: String,
    pub layer: usize,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct ProbeSummary {
    pub language: String,
    pub layer: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Output of a transfer sweep, ordered by source, destination and layer in
/// the order they were requested.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    pub evaluations: Vec<Evaluation>,
    pub failures: Vec<CellFailure>,
    pub probes: Vec<ProbeSummary>,
    pub models: Vec<ProbeModel>,
}

impl TransferMatrix {
    pub fn cell(&self, source: &str, dest: &str, layer: usize) -> Option<&Evaluation> {
        self.evaluations.iter().find(|e| e.cell.source == source && e.cell.dest == dest && e.cell.layer == layer)
    }
}

/// Zero-shot transfer: each source's probes (trained on its own balanced
/// set only) score every destination's held-out items. A cell that fails
/// is logged and reported in `failures`; it does not abort the sweep.
pub fn run_transfer(
    languages: &[LanguageData],
    sources: &[&str],
    dests: &[&str],
    layers: &[usize],
    config: &ExperimentConfig,
) -> Result<TransferMatrix, ExperimentError> {
    let find = |code: &str| {
        languages.iter().position(|l| l.meta.code == code).ok_or_else(|| ExperimentError::UnknownLanguage(code.to_string()))
    };
    let source_idx: Vec<usize> = sources.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let dest_idx: Vec<usize> = dests.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let mut involved: Vec<usize> = source_idx.iter().chain(&dest_idx).copied().collect();
    involved.sort_unstable();
    involved.dedup();

    let splits: BTreeMap<usize, Result<DatasetSplit, String>> = involved
        .par_iter()
        .map(|&i| {
            let l = &languages[i];
            let seed = split_seed(config.master_seed, &l.meta.code);
            let split = split_instances(&l.meta.code, &l.instances, &l.store, config.n_per_class, seed).map_err(|e| e.to_string());
            (i, split)
        })
        .collect();

    let tasks: Vec<(usize, usize)> = source_idx.iter().flat_map(|&s| layers.iter().map(move |&l| (s, l))).collect();
    let trained: Vec<Result<TrainedProbe, String>> = tasks
        .par_iter()
        .map(|&(s, layer)| {
            let split = splits[&s].clone()?;
            let dataset = materialize(&languages[s], split, layer).map_err(|e| e.to_string())?;
            train_probe(&dataset, config).map_err(|e| e.to_string())
        })
        .collect();
    let probes: BTreeMap<(usize, usize), Result<TrainedProbe, String>> = tasks.into_iter().zip(trained).collect();

    let cells: Vec<(usize, usize, usize)> = source_idx
        .iter()
        .flat_map(|&s| dest_idx.iter().flat_map(move |&d| layers.iter().map(move |&l| (s, d, l))))
        .collect();
    let results: Vec<Result<Evaluation, String>> = cells
        .par_iter()
        .map(|&(s, d, layer)| {
            let probe = probes[&(s, layer)].as_ref().map_err(Clone::clone)?;
            let split = splits[&d].as_ref().map_err(Clone::clone)?;
            evaluate(&probe.model, &languages[s].meta, &languages[d], split, layer).map_err(|e| e.to_string())
        })
        .collect();

    let mut evaluations = Vec::new();
    let mut failures = Vec::new();
    for ((s, d, layer), result) in cells.into_iter().zip(results) {
        match result {
            Ok(e) => evaluations.push(e),
            Err(error) => {
                let (source, dest) = (languages[s].meta.code.clone(), languages[d].meta.code.clone());
                log::error!("transfer {source} -> {dest} layer {layer}: {error}");
                failures.push(CellFailure { source, dest, layer, error });
            }
        }
    }

    let mut summaries = Vec::new();
    let mut models = Vec::new();
    for ((s, layer), probe) in probes {
        if let Ok(p) = probe {
            summaries.push(ProbeSummary {
                language: languages[s].meta.code.clone(),
                layer,
                seed: p.model.meta.seed,
                train_accuracy: p.train_accuracy,
                final_loss: p.loss_history.last().copied().unwrap_or(f64::NAN),
            });
            models.push(p.model);
        }
    }
    Ok(TransferMatrix { evaluations, failures, probes: summaries, models })
}
