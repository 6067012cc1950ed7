//! Acceptance suite. Prints one PASS/FAIL/SKIP line per check and exits
//! non-zero if any check fails.
//!
//! Checks 10 and 11 need real extracted stores. Point `SUBJPROBE_REAL_RUN`
//! at a run config whose languages include `en` (English) and `eu` (Basque)
//! to enable them.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use subjprobe::analysis::permutation_group_test;
use subjprobe::cli::{load_run, run_gradcheck, SynthSuite};
use subjprobe::experiment::{
    log_odds_s_vs_o, run_transfer, run_within_language, ExperimentConfig, HardCounts, LanguageData,
};
use subjprobe::lang::Alignment;
use subjprobe::role::Role;
use subjprobe::seed::{derive_seed, rng};
use subjprobe::store::{read_store, write_store, EmbeddingRecord, StoreHeader};
use subjprobe::synth::{dot, SynthAxes, SynthConfig};

use common::{data_path, expected_labels, hand_encoded_single_record, language, random_records};

/// Master seed of every synthetic run below, fixed before any result was
/// looked at.
const SEED: u64 = 0;
const TOP: usize = 1;

type Check = fn() -> Verdict;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn suite(seed: u64, shared_axes: bool, langs: &[(&str, Alignment)]) -> Vec<SynthConfig> {
    SynthSuite {
        seed,
        shared_axes,
        n_per_class: 1012,
        languages: langs
            .iter()
            .map(|&(code, alignment)| SynthConfig { language: code.into(), alignment, ..SynthConfig::default() })
            .collect(),
    }
    .configs()
}

fn experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig { master_seed: seed, ..ExperimentConfig::default() }
}

fn labeling_oracle() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("fixture.jsonl");
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_subjprobe"))
        .args(["label", data_path("fixture.conllu").to_str().unwrap(), "--lang", "en", "-o", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Verdict::Fail(format!("label exited with {:?}", out.status.code()));
    }
    let got = subjprobe::instances::read_instances(fs::File::open(&out_path).unwrap()).unwrap();
    let expected = expected_labels();
    let mut mismatches = got.len().abs_diff(expected.len());
    for (g, e) in got.iter().zip(&expected) {
        if (g.sent_index, g.token_index, g.role, g.animacy, g.case.as_ref())
            != (e.sent_index, e.token_index, e.role, e.animacy, e.case.as_ref())
        {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("{mismatches} mismatches over {} hand labels, {:.0} ms", expected.len(), elapsed.as_secs_f64() * 1e3),
    )
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let reports = run_gradcheck(10, 100, 16, 16, SEED).unwrap();
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let min_checked = reports.iter().map(|r| r.checked).min().unwrap();
    let skipped: usize = reports.iter().map(|r| r.skipped_kinks).sum();
    verdict(
        reports.len() >= 10 && min_checked >= 100 && worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "max relative error {worst:.2e} over {} models x {min_checked} parameters ({skipped} kink draws replaced), {:.2} s",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Share of S items that the projection-threshold oracle on
/// `u_role + u_case` puts on the A side.
fn oracle_s_share_a(config: &SynthConfig, data: &LanguageData) -> f64 {
    let axes = SynthAxes::from_seed(config.axis_seed(), config.dim);
    let w: Vec<f64> = axes.role.iter().zip(axes.case_axis(config.alignment)).map(|(r, c)| r + c).collect();
    let s: Vec<f64> = data
        .instances
        .iter()
        .filter(|i| i.role == Role::S)
        .map(|i| {
            let v = data.store.lookup(i.sent_index as u32, i.token_index as u32, TOP).unwrap();
            let x: Vec<f64> = v.iter().map(|&f| f as f64).collect();
            (dot(&x, &w) > 0.0) as u8 as f64
        })
        .collect();
    common::mean(&s)
}

fn alignment_pair() -> (Vec<SynthConfig>, LanguageData, LanguageData) {
    let configs = suite(SEED, true, &[("nom", Alignment::Nominative), ("erg", Alignment::Ergative)]);
    let (nom, erg) = (language(&configs[0]), language(&configs[1]));
    (configs, nom, erg)
}

fn alignment_recovery() -> Verdict {
    let start = Instant::now();
    let (configs, nom, erg) = alignment_pair();
    let cfg = experiment(SEED);
    let n = run_within_language(&nom, &[TOP], &cfg).unwrap().remove(0).cell;
    let e = run_within_language(&erg, &[TOP], &cfg).unwrap().remove(0).cell;
    let elapsed = start.elapsed();
    let (n_s, n_acc, e_s) = (n.p_a_by_role[&Role::S], n.accuracy_ao.unwrap(), e.p_a_by_role[&Role::S]);
    let diff = n.log_odds_s_vs_o.unwrap() - e.log_odds_s_vs_o.unwrap();
    let (oracle_n, oracle_e) = (oracle_s_share_a(&configs[0], &nom), oracle_s_share_a(&configs[1], &erg));
    verdict(
        n_s >= 0.8 && n_acc >= 0.95 && e_s <= 0.5 && diff >= 2.0 && elapsed < Duration::from_secs(120),
        format!(
            "Nom S mean P(A) {n_s:.4}, A/O accuracy {n_acc:.4}; Erg S mean P(A) {e_s:.4}; log-odds difference {diff:.4} \
             (oracle S share A: Nom {oracle_n:.3}, Erg {oracle_e:.3}), {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn layer_contrast() -> Verdict {
    let (_, nom, _) = alignment_pair();
    let cells = run_within_language(&nom, &[0, TOP], &experiment(SEED)).unwrap();
    let noise = cells[0].cell.accuracy_ao.unwrap();
    let signal = cells[1].cell.accuracy_ao.unwrap();
    verdict(
        (0.4..=0.6).contains(&noise) && signal >= 0.95,
        format!("noise layer accuracy {noise:.4}, signal layer accuracy {signal:.4}"),
    )
}

fn cross_accuracies(configs: &[SynthConfig], seed: u64) -> (f64, f64) {
    let langs: Vec<LanguageData> = configs.iter().map(language).collect();
    let (a, b) = (configs[0].language.as_str(), configs[1].language.as_str());
    let m = run_transfer(&langs, &[a, b], &[a, b], &[TOP], &experiment(seed)).unwrap();
    (
        m.cell(a, b, TOP).unwrap().cell.accuracy_ao.unwrap(),
        m.cell(b, a, TOP).unwrap().cell.accuracy_ao.unwrap(),
    )
}

fn transfer() -> Verdict {
    let shared = cross_accuracies(&suite(SEED, true, &[("p1", Alignment::Nominative), ("p2", Alignment::Nominative)]), SEED);
    let independent =
        cross_accuracies(&suite(SEED, false, &[("i1", Alignment::Nominative), ("i2", Alignment::Nominative)]), SEED);

    let mut wins = 0;
    for k in 0..10u64 {
        let seed = derive_seed(SEED, &["sign-test", &k.to_string()]);
        let configs = suite(
            seed,
            true,
            &[("dest", Alignment::Nominative), ("nomsrc", Alignment::Nominative), ("ergsrc", Alignment::Ergative)],
        );
        let langs: Vec<LanguageData> = configs.iter().map(language).collect();
        let m = run_transfer(&langs, &["nomsrc", "ergsrc"], &["dest"], &[TOP], &experiment(seed)).unwrap();
        let to_o = |src| m.cell(src, "dest", TOP).unwrap().cell.counts(Role::S).to_o;
        if to_o("ergsrc") > to_o("nomsrc") {
            wins += 1;
        }
    }

    let shared_ok = shared.0 >= 0.9 && shared.1 >= 0.9;
    let chance = 0.35..=0.65;
    let independent_ok = chance.contains(&independent.0) && chance.contains(&independent.1);
    verdict(
        shared_ok && independent_ok && wins >= 9,
        format!(
            "shared axes {:.4} / {:.4}; independent axes {:.4} / {:.4}; ergative source labels more S as O in {wins}/10 seeds",
            shared.0, shared.1, independent.0, independent.1
        ),
    )
}

fn log_odds_arithmetic() -> Verdict {
    let value = log_odds_s_vs_o(HardCounts { to_a: 90, to_o: 10 }, HardCounts { to_a: 5, to_o: 95 }).unwrap();
    let hand = 5.0086;
    let recomputed = (90.5f64 / 10.5).ln() - (5.5f64 / 95.5).ln();
    let symmetric = log_odds_s_vs_o(HardCounts { to_a: 30, to_o: 70 }, HardCounts { to_a: 30, to_o: 70 }).unwrap();
    verdict(
        (value - hand).abs() <= 1e-4 && symmetric == 0.0,
        format!(
            "value {value:.10} vs hand oracle {hand} (|diff| {:.2e}, tolerance 1e-4); exact recomputation {recomputed:.10}; symmetric case {symmetric}",
            (value - hand).abs()
        ),
    )
}

/// Exact two-sided permutation p-value by enumerating every split of the
/// pooled sample.
fn exhaustive_p(first: &[f64], second: &[f64]) -> f64 {
    let pooled: Vec<f64> = first.iter().chain(second).copied().collect();
    let (n, k) = (pooled.len(), first.len());
    let observed = (common::mean(first) - common::mean(second)).abs();
    let (mut extreme, mut total) = (0usize, 0usize);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, &x) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                a.push(x);
            } else {
                b.push(x);
            }
        }
        let (ma, mb) = (common::mean(&a), common::mean(&b));
        total += 1;
        if (ma - mb).abs() >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

fn ks_against_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

fn permutation_validity() -> Verdict {
    use rand_distr::{Distribution, StandardNormal};
    let (a, b) = ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
    let exact = exhaustive_p(&a, &b);
    let mc = permutation_group_test(&a, &b, 9999, SEED).unwrap().p_value;

    let p_values: Vec<f64> = (0..200)
        .map(|t| {
            let mut r = rng(derive_seed(SEED, &["ks-data", &t.to_string()]));
            let g1: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut r)).collect();
            let g2: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut r)).collect();
            permutation_group_test(&g1, &g2, 999, derive_seed(SEED, &["ks-perm", &t.to_string()])).unwrap().p_value
        })
        .collect();
    let ks = ks_against_uniform(p_values);
    verdict(
        (exact - 0.1).abs() < 1e-12 && mc <= 0.2 && (mc - exact).abs() <= 0.01 && ks < 0.15,
        format!("exhaustive p {exact:.4}, resampled p {mc:.4} (9999 resamples); null KS distance {ks:.4} over 200 trials"),
    )
}

fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                let digest = Sha256::digest(fs::read(&path).unwrap());
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}

fn pipeline(dir: &Path) {
    let bin = env!("CARGO_BIN_EXE_subjprobe");
    let suite = r#"{"seed": 0, "shared_axes": true, "languages": [
        {"language": "nom", "alignment": "Nominative", "animacy_gain": 0.5},
        {"language": "erg", "alignment": "Ergative"}]}"#;
    fs::write(dir.join("suite.json"), suite).unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(bin).current_dir(dir).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--config", "suite.json", "-o", "data"]);
    run(&["transfer", "--config", "data/run.json", "-o", "report"]);
    run(&["report", "--results", "report/results.json", "-o", "rereport"]);
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (ha, hb) = (hash_tree(a.path()), hash_tree(b.path()));
    let differing: Vec<&String> = ha.keys().filter(|k| ha.get(*k) != hb.get(*k)).collect();
    let reports = ha.keys().filter(|k| k.ends_with(".csv") || k.ends_with(".json")).count();
    verdict(
        ha.len() == hb.len() && differing.is_empty() && reports >= 10,
        format!("{} files hashed per run ({reports} CSV/JSON), {} differ {differing:?}", ha.len(), differing.len()),
    )
}

fn store_format() -> Verdict {
    let (dim, layers) = (8, 3);
    let records = random_records(10_000, dim, layers, derive_seed(SEED, &["store"]));
    let mut bytes = Vec::new();
    write_store(&StoreHeader::new("xx", dim as u32, layers as u16), records.clone(), &mut bytes).unwrap();
    let store = read_store(bytes.as_slice()).unwrap();
    let mut bad = 0usize;
    for r in &records {
        for l in 0..layers {
            let got = store.lookup(r.sent_index, r.token_index, l).unwrap();
            if !got.iter().zip(&r.vectors[l * dim..(l + 1) * dim]).all(|(x, y)| x.to_bits() == y.to_bits()) {
                bad += 1;
            }
        }
    }
    let mut single = Vec::new();
    let rec = EmbeddingRecord { sent_index: 7, token_index: 3, vectors: vec![1.0, 2.0] };
    write_store(&StoreHeader::new("en", 2, 1), vec![rec], &mut single).unwrap();
    let layout_ok = single == hand_encoded_single_record();
    verdict(
        store.len() == 10_000 && bad == 0 && layout_ok,
        format!("{} records read back, {bad} vectors differ; single-record layout matches: {layout_ok}", store.len()),
    )
}

fn real_run() -> Option<subjprobe::cli::LoadedRun> {
    let path = std::env::var_os("SUBJPROBE_REAL_RUN")?;
    Some(load_run(Path::new(&path), None).expect("SUBJPROBE_REAL_RUN config loads"))
}

fn real_language<'a>(run: &'a subjprobe::cli::LoadedRun, code: &str) -> Option<&'a LanguageData> {
    run.languages.iter().find(|l| l.meta.code == code)
}

fn real_within_language() -> Verdict {
    let Some(run) = real_run() else {
        return Verdict::Skip("SUBJPROBE_REAL_RUN not set".into());
    };
    let Some(en) = real_language(&run, "en") else {
        return Verdict::Skip("no `en` language in the real-data config".into());
    };
    let cell = run_within_language(en, &[10], &run.experiment_config()).unwrap().remove(0).cell;
    let acc = cell.accuracy_ao.unwrap_or(f64::NAN);
    let gap = cell.p_a_by_role.get(&Role::S).copied().unwrap_or(f64::NAN)
        - cell.p_a_by_role.get(&Role::O).copied().unwrap_or(f64::NAN);
    verdict(acc >= 0.85 && gap >= 0.3, format!("English layer 10 accuracy {acc:.4}, S minus O mean P(A) {gap:.4}"))
}

fn real_ergativity_direction() -> Verdict {
    let Some(run) = real_run() else {
        return Verdict::Skip("SUBJPROBE_REAL_RUN not set".into());
    };
    let (Some(en), Some(eu)) = (real_language(&run, "en"), real_language(&run, "eu")) else {
        return Verdict::Skip("real-data config lacks `en` or `eu`".into());
    };
    let cfg = run.experiment_config();
    let lo = |l: &LanguageData| run_within_language(l, &[10], &cfg).unwrap().remove(0).cell.log_odds_s_vs_o;
    let (en_lo, eu_lo) = (lo(en), lo(eu));
    let ok = matches!((en_lo, eu_lo), (Some(e), Some(b)) if b < e);
    verdict(ok, format!("layer 10 log-odds S vs O: Basque {eu_lo:?}, English {en_lo:?}"))
}

fn main() {
    let criteria: [(u32, &str, Check); 11] = [
        (1, "labeling oracle", labeling_oracle),
        (2, "gradient correctness", gradient_correctness),
        (3, "alignment recovery", alignment_recovery),
        (4, "layer contrast", layer_contrast),
        (5, "transfer", transfer),
        (6, "log-odds arithmetic", log_odds_arithmetic),
        (7, "permutation test validity", permutation_validity),
        (8, "determinism", determinism),
        (9, "store format", store_format),
        (10, "real-data within-language", real_within_language),
        (11, "real-data ergativity direction", real_ergativity_direction),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Verdict::Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match result {
            Verdict::Pass(d) => {
                passed += 1;
                ("PASS", d)
            }
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => {
                skipped += 1;
                ("SKIP", d)
            }
        };
        println!("{tag} {id:>2} {name}: {detail} [{secs:.2} s]");
    }
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed > 0 {
        std::process::exit(1);
    }
}
