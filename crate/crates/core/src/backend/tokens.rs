//! Token counting schemes.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    /// Usage numbers reported by the HTTP provider.
    ProviderReported,
    /// Maximal runs of non-whitespace characters.
    Whitespace,
    /// `ceil(chars / 4)` over Unicode scalar values.
    CharsDiv4,
}

impl TokenScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenScheme::ProviderReported => "provider_reported",
            TokenScheme::Whitespace => "whitespace",
            TokenScheme::CharsDiv4 => "chars_div_4",
        }
    }
}

impl fmt::Display for TokenScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Counts tokens locally. Returns `None` for [`TokenScheme::ProviderReported`],
/// which only the provider can answer.
pub fn count_tokens(text: &str, scheme: TokenScheme) -> Option<u64> {
    match scheme {
        TokenScheme::ProviderReported => None,
        TokenScheme::Whitespace => Some(text.split_whitespace().count() as u64),
        TokenScheme::CharsDiv4 => Some((text.chars().count() as u64).div_ceil(4)),
    }
}
