use std::fmt;

use serde::{Deserialize, Serialize};

/// Morphosyntactic alignment of a language's case system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Alignment {
    Nominative,
    Ergative,
    SplitErgative,
}

impl Alignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Alignment::Nominative => "Nominative",
            Alignment::Ergative => "Ergative",
            Alignment::SplitErgative => "SplitErgative",
        }
    }

    /// Whether the language has any ergative marking.
    pub fn is_ergative(self) -> bool {
        !matches!(self, Alignment::Nominative)
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
