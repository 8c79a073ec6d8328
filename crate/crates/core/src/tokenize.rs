//! Deterministic token counting and lexical normalization.
//!
//! Two counting modes exist so chunk budgets are reproducible without a
//! model vocabulary: `unicode_words` counts UAX #29 words, `bytes_div4`
//! counts `ceil(bytes / 4)`.

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// How chunk budgets are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// Unicode word segmentation; the default for space-delimited languages.
    #[default]
    UnicodeWords,
    /// `ceil(len_bytes / 4)`; the default for CJK and mixed corpora.
    BytesDiv4,
}

impl TokenizerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizerMode::UnicodeWords => "unicode_words",
            TokenizerMode::BytesDiv4 => "bytes_div4",
        }
    }
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unicode_words" => Ok(TokenizerMode::UnicodeWords),
            "bytes_div4" => Ok(TokenizerMode::BytesDiv4),
            other => Err(format!("unknown tokenizer mode `{other}` (expected unicode_words or bytes_div4)")),
        }
    }
}

pub fn count_tokens(text: &str, mode: TokenizerMode) -> usize {
    match mode {
        TokenizerMode::UnicodeWords => text.unicode_words().count(),
        TokenizerMode::BytesDiv4 => text.len().div_ceil(4),
    }
}

/// Segmentation used by the lexical metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LanguageMode {
    #[default]
    Unicode,
    /// Every CJK codepoint becomes its own token.
    Cjk,
}

impl std::str::FromStr for LanguageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unicode" => Ok(LanguageMode::Unicode),
            "cjk" => Ok(LanguageMode::Cjk),
            other => Err(format!("unknown language mode `{other}` (expected unicode or cjk)")),
        }
    }
}

/// Han, kana, Hangul and CJK punctuation-free ideographic ranges.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // ext A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0x1100..=0x11FF    // hangul jamo
        | 0x31F0..=0x31FF    // katakana ext
        | 0x20000..=0x2FA1F  // ext B..F, compat supplement
    )
}

/// Lowercased word tokens with punctuation removed.
///
/// Words are UAX #29 word segments that contain at least one alphanumeric
/// character. In [`LanguageMode::Cjk`] any segment containing CJK
/// codepoints is further split so that each CJK codepoint is a token and
/// runs of non-CJK characters stay together.
pub fn normalize_tokens(text: &str, mode: LanguageMode) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.unicode_words() {
        let lower = word.to_lowercase();
        match mode {
            LanguageMode::Unicode => push_stripped(&mut out, &lower),
            LanguageMode::Cjk => {
                let mut run = String::new();
                for c in lower.chars() {
                    if is_cjk(c) {
                        push_stripped(&mut out, &run);
                        run.clear();
                        out.push(c.to_string());
                    } else {
                        run.push(c);
                    }
                }
                push_stripped(&mut out, &run);
            }
        }
    }
    out
}

fn push_stripped(out: &mut Vec<String>, word: &str) {
    let kept: String = word.chars().filter(|c| c.is_alphanumeric()).collect();
    if !kept.is_empty() {
        out.push(kept);
    }
}
