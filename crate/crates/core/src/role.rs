//! Grammatical-role labeling of noun arguments.
//!
//! A noun (`NOUN` or `PROPN`) attached to a `VERB` is labeled
//!
//! * `O` when its relation is `obj`, `dobj` or `iobj` (subtypes allowed),
//! * `A` when its relation is bare `nsubj` and the verb also governs an
//!   object dependent of any part of speech,
//! * `S` when its relation is bare `nsubj` and the verb governs no object,
//! * `S_PASSIVE` when its relation is `nsubj:pass` or `nsubjpass`.
//!
//! Arguments of a verb that governs an expletive are dropped, as are
//! dependents of auxiliaries, pronouns and every other token.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conllu::{deprel_base, Sentence, TokenRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    A,
    O,
    S,
    #[serde(rename = "S_PASSIVE")]
    SPassive,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::A, Role::O, Role::S, Role::SPassive];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::A => "A",
            Role::O => "O",
            Role::S => "S",
            Role::SPassive => "S_PASSIVE",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Role::A),
            "O" => Ok(Role::O),
            "S" => Ok(Role::S),
            "S_PASSIVE" => Ok(Role::SPassive),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Animacy {
    Animate,
    Inanimate,
}

impl Animacy {
    /// Normalizes a UD `Animacy` value. `Hum`/`Nhum` fold into animate and
    /// inanimate; anything else is dropped.
    pub fn from_feature(value: &str) -> Option<Self> {
        match value {
            "Anim" | "Hum" => Some(Animacy::Animate),
            "Inan" | "Nhum" => Some(Animacy::Inanimate),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Animacy::Animate => "Animate",
            Animacy::Inanimate => "Inanimate",
        }
    }
}

/// One labeled noun occurrence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleInstance {
    pub language: String,
    pub sent_index: usize,
    /// 1-based token id within the sentence.
    pub token_index: usize,
    pub role: Role,
    pub upos: String,
    pub animacy: Option<Animacy>,
    pub case: Option<String>,
    pub lemma: String,
}

impl RoleInstance {
    pub fn key(&self) -> (usize, usize) {
        (self.sent_index, self.token_index)
    }
}

fn is_object_relation(deprel: &str) -> bool {
    matches!(deprel_base(deprel), "obj" | "dobj" | "iobj")
}

fn is_noun(token: &TokenRow) -> bool {
    token.upos == "NOUN" || token.upos == "PROPN"
}

/// Role of a single token, or `None` when the token is not a labeled argument.
pub fn label_token(sentence: &Sentence, token: &TokenRow) -> Option<Role> {
    if !is_noun(token) {
        return None;
    }
    let head = sentence.token(token.head)?;
    if head.upos != "VERB" {
        return None;
    }
    if sentence.dependents(head.id).any(|d| d.deprel_base() == "expl") {
        return None;
    }

    if is_object_relation(&token.deprel) {
        return Some(Role::O);
    }
    match token.deprel.as_str() {
        "nsubj" => {
            let transitive = sentence
                .dependents(head.id)
                .any(|d| d.id != token.id && is_object_relation(&d.deprel));
            Some(if transitive { Role::A } else { Role::S })
        }
        "nsubj:pass" | "nsubjpass" => Some(Role::SPassive),
        _ => None,
    }
}

/// Labels every argument noun of `sentence`, in token order.
///
/// `language` and `sent_index` of the returned instances are taken from the
/// arguments and the sentence respectively.
pub fn label_sentence(sentence: &Sentence, language: &str) -> Vec<RoleInstance> {
    sentence
        .tokens
        .iter()
        .filter_map(|token| {
            let role = label_token(sentence, token)?;
            Some(RoleInstance {
                language: language.to_string(),
                sent_index: sentence.sent_index,
                token_index: token.id,
                role,
                upos: token.upos.clone(),
                animacy: token.feats.get("Animacy").and_then(|v| Animacy::from_feature(v)),
                case: token.feats.get("Case").cloned(),
                lemma: token.lemma.clone(),
            })
        })
        .collect()
}

/// Labels a whole corpus.
pub fn extract_instances(sentences: &[Sentence], language: &str) -> Vec<RoleInstance> {
    sentences.iter().flat_map(|s| label_sentence(s, language)).collect()
}
