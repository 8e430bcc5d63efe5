use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UnicodeForm {
    /// NFC
    #[default]
    Composed,
    /// NFD
    Decomposed,
}

/// How raw text is cleaned before sentence splitting and tokenization.
///
/// The default keeps diacritics and the original casing: in Portuguese the
/// accent is often the only thing separating two words (`bebê` / `bebe`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub keep_diacritics: bool,
    pub keep_casing: bool,
    pub unicode_form: UnicodeForm,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy {
            keep_diacritics: true,
            keep_casing: true,
            unicode_form: UnicodeForm::Composed,
        }
    }
}

/// Decodes raw bytes, reporting the offset of the first invalid sequence.
pub fn decode_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Decode {
        offset: e.valid_up_to(),
    })
}

/// Normalizes `text` under `policy`.
///
/// Control characters are dropped, whitespace runs collapse to one space and
/// the result is trimmed. Casing and diacritics are folded only when the
/// policy asks for it. The function is idempotent.
pub fn normalize(text: &str, policy: &NormalizationPolicy) -> String {
    // Decompose first so case folding and mark stripping see base letters.
    let mut chars: Vec<char> = text
        .nfd()
        .filter(|c| c.is_whitespace() || !c.is_control())
        .collect();
    if !policy.keep_casing {
        chars = chars.into_iter().flat_map(char::to_lowercase).nfd().collect();
    }
    if !policy.keep_diacritics {
        chars.retain(|&c| !is_combining_mark(c));
    }
    let recomposed: String = match policy.unicode_form {
        UnicodeForm::Composed => chars.into_iter().nfc().collect(),
        UnicodeForm::Decomposed => chars.into_iter().nfd().collect(),
    };
    let mut out = String::with_capacity(recomposed.len());
    for word in recomposed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}
