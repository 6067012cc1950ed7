#![allow(dead_code)]

use std::path::PathBuf;

use subjprobe::experiment::{LanguageData, LanguageMeta};
use subjprobe::lang::Alignment;
use subjprobe::role::{Animacy, Role};
use subjprobe::synth::{generate_corpus, SynthConfig};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

pub fn synth_config(code: &str, alignment: Alignment, seed: u64, axis_seed: u64) -> SynthConfig {
    SynthConfig { language: code.into(), alignment, seed, axis_seed: Some(axis_seed), ..SynthConfig::default() }
}

pub fn language(config: &SynthConfig) -> LanguageData {
    let corpus = generate_corpus(config).expect("valid synth config");
    LanguageData {
        meta: LanguageMeta {
            code: config.language.clone(),
            name: format!("synthetic {}", config.alignment),
            alignment: config.alignment,
            treebanks: vec![],
        },
        instances: corpus.instances,
        store: corpus.store,
    }
}

pub fn synth_language(code: &str, alignment: Alignment, seed: u64, axis_seed: u64) -> LanguageData {
    language(&synth_config(code, alignment, seed, axis_seed))
}

/// One row of the hand-labeled fixture table.
#[derive(Clone, Debug, PartialEq)]
pub struct Expected {
    pub sent_index: usize,
    pub token_index: usize,
    pub role: Role,
    pub animacy: Option<Animacy>,
    pub case: Option<String>,
}

pub fn expected_labels() -> Vec<Expected> {
    let text = std::fs::read_to_string(data_path("fixture_expected.tsv")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 5, "bad expected row {l:?}");
            let opt = |s: &str| (s != "_").then(|| s.to_string());
            Expected {
                sent_index: f[0].parse().unwrap(),
                token_index: f[1].parse().unwrap(),
                role: f[2].parse().unwrap(),
                animacy: opt(f[3]).map(|a| match a.as_str() {
                    "Animate" => Animacy::Animate,
                    "Inanimate" => Animacy::Inanimate,
                    other => panic!("unknown animacy {other}"),
                }),
                case: opt(f[4]),
            }
        })
        .collect()
}

/// Mean of `values`; NaN when empty.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// The single-record store (language "en", dim 2, one layer, key (7, 3),
/// vector (1.0, 2.0)) encoded byte by byte.
pub fn hand_encoded_single_record() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"SUBJPRB1");
    b.extend_from_slice(&[0x01, 0x00]);
    b.extend_from_slice(&[0x02, 0x00, 0x00, 0x00]);
    b.extend_from_slice(&[0x01, 0x00]);
    b.extend_from_slice(&[0x01, 0, 0, 0, 0, 0, 0, 0]);
    b.extend_from_slice(&[0x02, 0x00]);
    b.extend_from_slice(b"en");
    b.extend_from_slice(&[0x07, 0x00, 0x00, 0x00]);
    b.extend_from_slice(&[0x03, 0x00, 0x00, 0x00]);
    b.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
    b.extend_from_slice(&[0x00, 0x00, 0x00, 0x40]);
    b
}

/// `n` records with distinct random keys and arbitrary finite floats.
pub fn random_records(n: usize, dim: usize, layers: usize, seed: u64) -> Vec<subjprobe::store::EmbeddingRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut keys = std::collections::BTreeSet::new();
    while keys.len() < n {
        keys.insert((rng.random_range(0..5_000u32), rng.random_range(1..60u32)));
    }
    let mut records: Vec<_> = keys
        .into_iter()
        .map(|(s, t)| {
            let vectors = (0..dim * layers)
                .map(|_| loop {
                    let v = f32::from_bits(rng.random::<u32>());
                    if v.is_finite() {
                        break v;
                    }
                })
                .collect();
            subjprobe::store::EmbeddingRecord { sent_index: s, token_index: t, vectors }
        })
        .collect();
    // writers must not depend on input order
    use rand::seq::SliceRandom;
    records.shuffle(&mut rng);
    records
}
