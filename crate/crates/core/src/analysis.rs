//! Aggregation of probe outputs: per-feature breakdowns with bootstrap
//! confidence intervals, a two-sample permutation test for comparing groups
//! of languages, and the CSV/JSON report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{CellFailure, Evaluation};
use crate::role::Role;
use crate::seed::{derive_seed, rng};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("permutation test needs two non-empty groups")]
    EmptyGroup,

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Passive,
    Animacy,
    Case,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Passive, Feature::Animacy, Feature::Case];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Passive => "passive",
            Feature::Animacy => "animacy",
            Feature::Case => "case",
        }
    }
}

/// Case values counted as agentive.
pub fn is_agentive_case(case: &str) -> bool {
    matches!(case, "Nom" | "Erg")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub source: String,
    pub dest: String,
    pub layer: usize,
    pub role: Role,
    pub feature: Feature,
    pub value: String,
    /// Only set for the case feature.
    pub agentive: Option<bool>,
    pub n: usize,
    pub mean_p_a: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap 95% interval of the mean, widened if necessary so
/// that it contains the sample mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    assert!(!values.is_empty(), "bootstrap of an empty sample");
    let point = mean(values);
    if values.len() == 1 || resamples == 0 {
        return (point, point);
    }
    let mut rng = rng(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let low = quantile(&means, 0.025).min(point);
    let high = quantile(&means, 0.975).max(point);
    (low, high)
}

fn feature_value(feature: Feature, role: Role, animacy: Option<crate::role::Animacy>, case: Option<&str>) -> Option<String> {
    match feature {
        Feature::Passive => Some(if role == Role::SPassive { "passive" } else { "active" }.to_string()),
        Feature::Animacy => animacy.map(|a| a.as_str().to_string()),
        Feature::Case => case.map(str::to_string),
    }
}

/// Groups the predictions of every evaluation at `layer` by
/// `(source, dest, role, feature value)` and summarizes each group by its
/// mean P(A) and a bootstrap interval. Predictions without the feature are
/// dropped and counted in the log.
pub fn breakdown_by_feature(
    evaluations: &[Evaluation],
    feature: Feature,
    layer: usize,
    resamples: usize,
    seed: u64,
) -> Vec<Breakdown> {
    let mut groups: BTreeMap<(String, String, Role, String), Vec<f64>> = BTreeMap::new();
    let mut dropped = 0usize;
    for eval in evaluations.iter().filter(|e| e.cell.layer == layer) {
        for p in &eval.predictions {
            match feature_value(feature, p.role, p.animacy, p.case.as_deref()) {
                Some(value) => groups
                    .entry((eval.cell.source.clone(), eval.cell.dest.clone(), p.role, value))
                    .or_default()
                    .push(p.p_a),
                None => dropped += 1,
            }
        }
    }
    if dropped > 0 {
        log::info!("{} breakdown at layer {layer}: {dropped} predictions lack the feature", feature.as_str());
    }

    groups
        .into_iter()
        .map(|((source, dest, role, value), values)| {
            let group_seed =
                derive_seed(seed, &[feature.as_str(), &source, &dest, &layer.to_string(), role.as_str(), &value]);
            let (ci_low, ci_high) = bootstrap_mean_ci(&values, resamples, group_seed);
            Breakdown {
                agentive: (feature == Feature::Case).then(|| is_agentive_case(&value)),
                source,
                dest,
                layer,
                role,
                feature,
                value,
                n: values.len(),
                mean_p_a: mean(&values),
                ci_low,
                ci_high,
            }
        })
        .collect()
}

/// Breakdowns for every feature at every layer present in `evaluations`.
pub fn all_breakdowns(evaluations: &[Evaluation], resamples: usize, seed: u64) -> Vec<Breakdown> {
    let mut layers: Vec<usize> = evaluations.iter().map(|e| e.cell.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let mut out = Vec::new();
    for feature in Feature::ALL {
        for &layer in &layers {
            out.extend(breakdown_by_feature(evaluations, feature, layer, resamples, seed));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PermutationResult {
    /// `mean(first) - mean(second)`.
    pub observed: f64,
    pub p_value: f64,
}

/// Two-sided permutation test on the difference of group means.
///
/// `p = (1 + #{|permuted diff| >= |observed|}) / (1 + resamples)`. The
/// groups are put into a canonical order before resampling, so swapping
/// them flips the sign of `observed` and leaves `p_value` unchanged.
pub fn permutation_group_test(
    first: &[f64],
    second: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<PermutationResult, AnalysisError> {
    if first.is_empty() || second.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let observed = mean(first) - mean(second);

    let canonical = |g: &[f64]| {
        let mut v = g.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (canonical(first), canonical(second));
    let swap = (b.len(), &b).partial_cmp(&(a.len(), &a)) == Some(std::cmp::Ordering::Less);
    let (a, b) = if swap { (b, a) } else { (a, b) };

    let threshold = observed.abs() * (1.0 - 1e-12);
    let n_a = a.len();
    let mut pooled: Vec<f64> = a.into_iter().chain(b).collect();
    let mut rng = rng(seed);
    let mut extreme = 0usize;
    for _ in 0..resamples {
        pooled.shuffle(&mut rng);
        let diff = mean(&pooled[..n_a]) - mean(&pooled[n_a..]);
        if diff.abs() >= threshold {
            extreme += 1;
        }
    }
    let p_value = (1 + extreme) as f64 / (1 + resamples) as f64;
    Ok(PermutationResult { observed, p_value })
}

/// Formats a float with 6 significant digits in its shortest form.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    let s = rounded.to_string();
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

/// Seeds, configuration, versions and counts of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub store_format_version: u16,
    pub probe_format_version: u16,
    pub master_seed: u64,
    pub bootstrap_resamples: usize,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub counts: BTreeMap<String, usize>,
    pub probes: Vec<ProbeRecord>,
    pub failures: Vec<CellFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub language: String,
    pub layer: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

impl RunManifest {
    pub fn new(master_seed: u64, bootstrap_resamples: usize, config: serde_json::Value) -> Self {
        RunManifest {
            toolkit_version: crate::VERSION.to_string(),
            store_format_version: crate::store::FORMAT_VERSION,
            probe_format_version: crate::probe::MODEL_FORMAT_VERSION,
            master_seed,
            bootstrap_resamples,
            seeds: BTreeMap::new(),
            config,
            counts: BTreeMap::new(),
            probes: Vec::new(),
            failures: Vec::new(),
        }
    }
}

pub const TRANSFER_MATRIX_CSV: &str = "transfer_matrix.csv";
pub const BY_ROLE_BY_LAYER_CSV: &str = "by_role_by_layer.csv";
pub const S_DISTRIBUTIONS_CSV: &str = "s_distributions.csv";
pub const BREAKDOWNS_CSV: &str = "breakdowns.csv";
pub const MANIFEST_JSON: &str = "run_manifest.json";

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, AnalysisError> {
        let path = dir.join(name);
        let writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_path(&path)
            .map_err(|source| AnalysisError::Csv { path: path.clone(), source })?;
        let mut out = CsvOut { path, writer };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), AnalysisError> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.writer.write_record(&fields).map_err(|source| AnalysisError::Csv { path: self.path.clone(), source })
    }

    fn finish(mut self) -> Result<PathBuf, AnalysisError> {
        self.writer.flush().map_err(|source| AnalysisError::Io { path: self.path.clone(), source })?;
        Ok(self.path)
    }
}

pub const TRANSFER_MATRIX_HEADER: [&str; 17] = [
    "source",
    "dest",
    "layer",
    "accuracy_ao",
    "p_a_A",
    "p_a_O",
    "p_a_S",
    "p_a_S_PASSIVE",
    "n_A",
    "n_O",
    "n_S",
    "n_S_PASSIVE",
    "n_pred_a_A",
    "n_pred_a_O",
    "n_pred_a_S",
    "n_pred_a_S_PASSIVE",
    "log_odds_s_vs_o",
];

/// Writes the report files into `dir` (created if needed) and returns their
/// paths.
pub fn emit_report(
    evaluations: &[Evaluation],
    breakdowns: &[Breakdown],
    manifest: &RunManifest,
    dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(dir).map_err(|source| AnalysisError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();

    let mut matrix = CsvOut::create(dir, TRANSFER_MATRIX_CSV, &TRANSFER_MATRIX_HEADER)?;
    for e in evaluations {
        let c = &e.cell;
        let mut row = vec![c.source.clone(), c.dest.clone(), c.layer.to_string(), opt(c.accuracy_ao)];
        row.extend(Role::ALL.iter().map(|r| opt(c.p_a_by_role.get(r).copied())));
        row.extend(Role::ALL.iter().map(|r| c.n_by_role.get(r).copied().unwrap_or(0).to_string()));
        row.extend(Role::ALL.iter().map(|r| c.n_pred_a_by_role.get(r).copied().unwrap_or(0).to_string()));
        row.push(opt(c.log_odds_s_vs_o));
        matrix.row(row)?;
    }
    written.push(matrix.finish()?);

    let mut by_role = CsvOut::create(
        dir,
        BY_ROLE_BY_LAYER_CSV,
        &["source", "dest", "layer", "role", "n", "n_pred_a", "proportion_a", "mean_p_a"],
    )?;
    for e in evaluations {
        let c = &e.cell;
        for role in Role::ALL {
            let counts = c.counts(role);
            by_role.row([
                c.source.clone(),
                c.dest.clone(),
                c.layer.to_string(),
                role.to_string(),
                counts.total().to_string(),
                counts.to_a.to_string(),
                opt(c.proportion_a(role)),
                opt(c.p_a_by_role.get(&role).copied()),
            ])?;
        }
    }
    written.push(by_role.finish()?);

    let mut s_dist = CsvOut::create(
        dir,
        S_DISTRIBUTIONS_CSV,
        &["source", "source_alignment", "dest", "dest_alignment", "layer", "sent_index", "token_index", "p_a"],
    )?;
    for e in evaluations {
        for p in e.predictions.iter().filter(|p| p.role == Role::S) {
            s_dist.row([
                e.cell.source.clone(),
                e.source_alignment.to_string(),
                e.cell.dest.clone(),
                e.dest_alignment.to_string(),
                e.cell.layer.to_string(),
                p.sent_index.to_string(),
                p.token_index.to_string(),
                format_sig6(p.p_a),
            ])?;
        }
    }
    written.push(s_dist.finish()?);

    let mut bd = CsvOut::create(
        dir,
        BREAKDOWNS_CSV,
        &["source", "dest", "layer", "role", "feature", "value", "agentive", "n", "mean_p_a", "ci_low", "ci_high"],
    )?;
    for b in breakdowns {
        bd.row([
            b.source.clone(),
            b.dest.clone(),
            b.layer.to_string(),
            b.role.to_string(),
            b.feature.as_str().to_string(),
            b.value.clone(),
            b.agentive.map(|a| a.to_string()).unwrap_or_default(),
            b.n.to_string(),
            format_sig6(b.mean_p_a),
            format_sig6(b.ci_low),
            format_sig6(b.ci_high),
        ])?;
    }
    written.push(bd.finish()?);

    let path = dir.join(MANIFEST_JSON);
    let mut json = serde_json::to_string_pretty(manifest).map_err(|source| AnalysisError::Json { path: path.clone(), source })?;
    json.push('\n');
    fs::write(&path, json).map_err(|source| AnalysisError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(written)
}
