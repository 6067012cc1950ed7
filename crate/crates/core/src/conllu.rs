//! CoNLL-U reader.
//!
//! Only the basic dependency columns are interpreted. Multiword-token ranges
//! (`1-2`) and empty nodes (`1.1`) are skipped, and the enhanced `DEPS`
//! column is ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sentence {sent_index}: {message}")]
    Structure { sent_index: usize, message: String },

    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

/// Morphological features, ordered by name.
pub type Features = BTreeMap<String, String>;

/// One syntactic word of a sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRow {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: Features,
    /// Index of the governing token; `0` is the artificial root.
    pub head: usize,
    pub deprel: String,
}

impl TokenRow {
    /// The relation label without its language-specific subtype.
    pub fn deprel_base(&self) -> &str {
        deprel_base(&self.deprel)
    }
}

/// Strips the subtype from a relation label (`nsubj:pass` -> `nsubj`).
pub fn deprel_base(deprel: &str) -> &str {
    deprel.split(':').next().unwrap_or(deprel)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_index: usize,
    pub tokens: Vec<TokenRow>,
    pub comments: Vec<String>,
}

impl Sentence {
    /// Token with the given 1-based id.
    pub fn token(&self, id: usize) -> Option<&TokenRow> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    /// Tokens whose head is `id`.
    pub fn dependents(&self, id: usize) -> impl Iterator<Item = &TokenRow> {
        self.tokens.iter().filter(move |t| t.head == id)
    }

    /// The `# sent_id` comment value, if present.
    pub fn sent_id(&self) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let rest = c.strip_prefix('#')?.trim_start();
            let value = rest.strip_prefix("sent_id")?.trim_start();
            Some(value.strip_prefix('=')?.trim())
        })
    }

    fn validate(&self) -> Result<(), ConlluError> {
        let n = self.tokens.len();
        for (i, token) in self.tokens.iter().enumerate() {
            if token.id != i + 1 {
                return Err(ConlluError::Structure {
                    sent_index: self.sent_index,
                    message: format!("token ids are not consecutive: expected {}, found {}", i + 1, token.id),
                });
            }
            if token.head > n {
                return Err(ConlluError::Structure {
                    sent_index: self.sent_index,
                    message: format!("token {} has head {} but the sentence has {} tokens", token.id, token.head, n),
                });
            }
            if token.head == token.id {
                return Err(ConlluError::Structure {
                    sent_index: self.sent_index,
                    message: format!("token {} is its own head", token.id),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Sentence {
    /// Writes the comments and token rows in CoNLL-U layout, followed by the
    /// terminating blank line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for comment in &self.comments {
            writeln!(f, "{comment}")?;
        }
        for t in &self.tokens {
            let feats = if t.feats.is_empty() {
                "_".to_string()
            } else {
                t.feats.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("|")
            };
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t_\t_",
                t.id, t.form, t.lemma, t.upos, t.xpos, feats, t.head, t.deprel
            )?;
        }
        writeln!(f)
    }
}

fn parse_feats(column: &str, line: usize) -> Result<Features, ConlluError> {
    let mut feats = Features::new();
    if column == "_" {
        return Ok(feats);
    }
    for pair in column.split('|') {
        let (name, value) = pair.split_once('=').ok_or_else(|| ConlluError::Parse {
            line,
            message: format!("malformed feature `{pair}`"),
        })?;
        feats.insert(name.to_string(), value.to_string());
    }
    Ok(feats)
}

/// Parses a single token line. Returns `None` for multiword-token ranges and
/// empty nodes.
fn parse_token_line(text: &str, line: usize) -> Result<Option<TokenRow>, ConlluError> {
    let cols: Vec<&str> = text.split('\t').collect();
    if cols.len() != 10 {
        return Err(ConlluError::Parse {
            line,
            message: format!("expected 10 tab-separated columns, found {}", cols.len()),
        });
    }
    if cols[0].contains('-') || cols[0].contains('.') {
        return Ok(None);
    }
    let id: usize = cols[0].parse().map_err(|_| ConlluError::Parse {
        line,
        message: format!("non-integer token id `{}`", cols[0]),
    })?;
    if id == 0 {
        return Err(ConlluError::Parse { line, message: "token id must be positive".into() });
    }
    let head: usize = cols[6].parse().map_err(|_| ConlluError::Parse {
        line,
        message: format!("non-integer head `{}`", cols[6]),
    })?;
    Ok(Some(TokenRow {
        id,
        form: cols[1].to_string(),
        lemma: cols[2].to_string(),
        upos: cols[3].to_string(),
        xpos: cols[4].to_string(),
        feats: parse_feats(cols[5], line)?,
        head,
        deprel: cols[7].to_string(),
    }))
}

/// Parses a complete CoNLL-U document. Any malformed line aborts the whole
/// document.
pub fn parse_document<R: Read>(input: R) -> Result<Vec<Sentence>, ConlluError> {
    let reader = BufReader::new(input);
    let mut sentences = Vec::new();
    let mut current = Sentence::default();
    let mut in_block = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);

        if line.trim().is_empty() {
            if in_block {
                current.sent_index = sentences.len();
                current.validate()?;
                sentences.push(std::mem::take(&mut current));
                in_block = false;
            }
            continue;
        }
        in_block = true;
        if line.starts_with('#') {
            current.comments.push(line.to_string());
            continue;
        }
        if let Some(token) = parse_token_line(line, line_no)? {
            current.tokens.push(token);
        }
    }
    if in_block {
        current.sent_index = sentences.len();
        current.validate()?;
        sentences.push(current);
    }
    Ok(sentences)
}

/// Parses a document held in memory.
pub fn parse_str(text: &str) -> Result<Vec<Sentence>, ConlluError> {
    parse_document(text.as_bytes())
}
