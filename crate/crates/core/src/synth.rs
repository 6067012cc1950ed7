//! Synthetic languages with a known alignment.
//!
//! Each synthetic noun gets a top-layer vector
//!
//! ```text
//! role_gain * r * u_role + case_gain * c * u_case + animacy_gain * a * u_anim + noise
//! ```
//!
//! with `r = +1` for A, `-1` for O and `s_role_value` for S, and the case
//! coordinate `c` grouping {A, S} against {O} under nominative alignment and
//! {A} against {S, O} under ergative alignment. Lower layers hold noise only.
//!
//! Axes are drawn from the axis seed, so two languages sharing it encode
//! roles in parallel. Nominative and ergative case marking use different
//! (orthogonal) case directions drawn from the same axis seed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Alignment;
use crate::role::{Animacy, Role, RoleInstance};
use crate::seed::rng;
use crate::store::{EmbeddingRecord, EmbeddingStore, StoreHeader};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleCounts {
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "O")]
    pub o: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "S_PASSIVE")]
    pub s_passive: usize,
}

impl Default for RoleCounts {
    fn default() -> Self {
        RoleCounts { a: 1200, o: 1200, s: 400, s_passive: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub language: String,
    pub dim: usize,
    pub num_layers: usize,
    pub n_per_role: RoleCounts,
    pub alignment: Alignment,
    pub role_gain: f64,
    pub case_gain: f64,
    /// Position of S on the role axis, in [-1, 1].
    pub s_role_value: f64,
    /// Position of passive subjects on the role axis, in [-1, 1].
    pub passive_role_value: f64,
    /// Strength of an animacy direction leaning towards the A side of the
    /// role axis. Zero makes animacy independent of the embedding.
    pub animacy_gain: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Seed of the geometry. `None` uses `seed`.
    pub axis_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            language: "syn".into(),
            dim: 16,
            num_layers: 2,
            n_per_role: RoleCounts::default(),
            alignment: Alignment::Nominative,
            role_gain: 1.0,
            case_gain: 1.0,
            s_role_value: 0.5,
            passive_role_value: 0.0,
            animacy_gain: 0.0,
            noise_sigma: 0.5,
            seed: 0,
            axis_seed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.num_layers < 1 || self.num_layers > u16::MAX as usize {
            return bad("num_layers must be in 1..=65535");
        }
        if !(self.role_gain >= 0.0 && self.case_gain >= 0.0 && self.animacy_gain >= 0.0) {
            return bad("gains must be non-negative");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        for (name, v) in [("s_role_value", self.s_role_value), ("passive_role_value", self.passive_role_value)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(SynthError::Config(format!("{name} must lie in [-1, 1]")));
            }
        }
        if self.alignment == Alignment::SplitErgative {
            return bad("synthetic languages are Nominative or Ergative");
        }
        if self.language.is_empty() {
            return bad("language must be non-empty");
        }
        Ok(())
    }

    pub fn axis_seed(&self) -> u64 {
        self.axis_seed.unwrap_or(self.seed)
    }

    /// Role-axis coordinate of a role.
    pub fn role_coordinate(&self, role: Role) -> f64 {
        match role {
            Role::A => 1.0,
            Role::O => -1.0,
            Role::S => self.s_role_value,
            Role::SPassive => self.passive_role_value,
        }
    }

    /// Case-axis coordinate of a role.
    pub fn case_coordinate(&self, role: Role) -> f64 {
        match (self.alignment, role) {
            (_, Role::A) => 1.0,
            (_, Role::O) => -1.0,
            (Alignment::Nominative, Role::S | Role::SPassive) => 1.0,
            (_, Role::S | Role::SPassive) => -1.0,
        }
    }

    fn case_label(&self, role: Role) -> &'static str {
        let subject_side = self.case_coordinate(role) > 0.0;
        match (self.alignment, subject_side) {
            (Alignment::Nominative, true) => "Nom",
            (Alignment::Nominative, false) => "Acc",
            (_, true) => "Erg",
            (_, false) => "Abs",
        }
    }
}

/// Unit directions of a synthetic geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthAxes {
    pub role: Vec<f64>,
    pub case_nominative: Vec<f64>,
    pub case_ergative: Vec<f64>,
    pub animacy: Vec<f64>,
}

impl SynthAxes {
    /// Draws orthonormal directions from `seed` by Gram-Schmidt on gaussian
    /// vectors. With `dim < 4` some directions coincide: the ergative case
    /// axis falls back to the nominative one and the animacy axis to the
    /// role axis.
    pub fn from_seed(seed: u64, dim: usize) -> Self {
        let mut rng = rng(seed);
        let wanted = dim.min(4);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(wanted);
        while basis.len() < wanted {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        let role = basis[0].clone();
        let case_nominative = basis[1].clone();
        let case_ergative = basis.get(2).cloned().unwrap_or_else(|| case_nominative.clone());
        let animacy = match basis.get(3) {
            Some(extra) => role.iter().zip(extra).map(|(r, e)| (r + e) / std::f64::consts::SQRT_2).collect(),
            None => role.clone(),
        };
        SynthAxes { role, case_nominative, case_ergative, animacy }
    }

    pub fn case_axis(&self, alignment: Alignment) -> &[f64] {
        match alignment {
            Alignment::Nominative => &self.case_nominative,
            _ => &self.case_ergative,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A generated language: labeled instances plus their embeddings.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub instances: Vec<RoleInstance>,
    pub store: EmbeddingStore,
}

/// Generates a synthetic corpus. Every instance is its own one-token
/// sentence; `sent_index` runs over A, then O, then S, then passive
/// subjects.
pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let axes = SynthAxes::from_seed(config.axis_seed(), config.dim);
    let case_axis = axes.case_axis(config.alignment);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut rng = rng(config.seed);

    let counts = &config.n_per_role;
    let plan = [(Role::A, counts.a), (Role::O, counts.o), (Role::S, counts.s), (Role::SPassive, counts.s_passive)];
    let total: usize = plan.iter().map(|(_, n)| n).sum();
    let mut instances = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(total);
    let top = config.num_layers - 1;

    for (role, n) in plan {
        let mut animacy: Vec<Animacy> =
            (0..n).map(|i| if i < n.div_ceil(2) { Animacy::Animate } else { Animacy::Inanimate }).collect();
        animacy.shuffle(&mut rng);

        let r = config.role_gain * config.role_coordinate(role);
        let c = config.case_gain * config.case_coordinate(role);
        for anim in animacy {
            let sent_index = instances.len();
            let a = config.animacy_gain * if anim == Animacy::Animate { 1.0 } else { -1.0 };
            let mut vectors = Vec::with_capacity(config.num_layers * config.dim);
            for layer in 0..config.num_layers {
                for ((role_k, case_k), anim_k) in axes.role.iter().zip(case_axis).zip(&axes.animacy) {
                    let mut v = noise.sample(&mut rng);
                    if layer == top {
                        v += r * role_k + c * case_k + a * anim_k;
                    }
                    vectors.push(v as f32);
                }
            }
            records.push(EmbeddingRecord { sent_index: sent_index as u32, token_index: 1, vectors });
            instances.push(RoleInstance {
                language: config.language.clone(),
                sent_index,
                token_index: 1,
                role,
                upos: "NOUN".into(),
                animacy: Some(anim),
                case: Some(config.case_label(role).to_string()),
                lemma: format!("w{sent_index}"),
            });
        }
    }

    let header = StoreHeader::new(config.language.clone(), config.dim as u32, config.num_layers as u16);
    let store = EmbeddingStore::from_records(header, records).expect("generated records are well-formed");
    Ok(SynthCorpus { instances, store })
}
