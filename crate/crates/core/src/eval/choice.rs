//! Multiple-choice scoring from free-text responses.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::tokenize::{normalize_tokens, LanguageMode};

pub fn choice_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

fn letter_index(s: &str) -> usize {
    (s.as_bytes()[0] - b'A') as usize
}

fn cue_patterns() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            // "answer is C", "Answer: (C)", "correct option is C"
            Regex::new(r"(?i:(?:answer|option|choice)\s*(?:is|:|：)?\s*(?:option\s+)?)\(?([A-Z])\)?\b").expect("static regex"),
            // leading "C." or "C)"
            Regex::new(r"^\s*\(?([A-Z])[.)](?:\s|$)").expect("static regex"),
            Regex::new(r"\(([A-Z])\)").expect("static regex"),
        ]
    })
}

fn set_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i:answers?\s*(?:are|is|:|：)?\s*)([A-Z](?:\s*(?:,|、|/|&|(?i:and))\s*[A-Z])+)\b").expect("static regex")
    })
}

/// Earliest letter cue naming a valid option.
fn letter_cue(response: &str, n_options: usize) -> Option<usize> {
    cue_patterns()
        .iter()
        .flat_map(|re| re.captures_iter(response))
        .filter_map(|c| {
            let m = c.get(1).expect("group 1");
            let i = letter_index(m.as_str());
            (i < n_options).then_some((m.start(), i))
        })
        .min()
        .map(|(_, i)| i)
}

fn contains_seq(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Options whose whole normalized text occurs in the response.
fn quoted_options(response: &str, options: &[String], mode: LanguageMode) -> Vec<usize> {
    let hay = normalize_tokens(response, mode);
    options
        .iter()
        .enumerate()
        .filter(|(_, o)| contains_seq(&hay, &normalize_tokens(o, mode)))
        .map(|(i, _)| i)
        .collect()
}

/// The option a response picks, by precedence: (1) the earliest letter
/// cue (`answer is X`, a leading `X.` / `X)`, or `(X)`), (2) the single
/// option whose full text the response quotes, (3) none.
pub fn exact_match_choice(response: &str, options: &[String], mode: LanguageMode) -> Option<usize> {
    if let Some(i) = letter_cue(response, options.len()) {
        return Some(i);
    }
    match quoted_options(response, options, mode).as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// Chosen option set for questions that may have several correct answers:
/// a letter list after an answer cue (`answers are A and C`), else a single
/// letter cue, else every option quoted in full.
pub fn extract_choice_set(response: &str, options: &[String], mode: LanguageMode) -> BTreeSet<usize> {
    if let Some(c) = set_pattern().captures(response) {
        let set: BTreeSet<usize> = c[1]
            .split(|ch: char| !ch.is_ascii_uppercase())
            .filter(|s| s.len() == 1)
            .map(letter_index)
            .filter(|&i| i < options.len())
            .collect();
        if !set.is_empty() {
            return set;
        }
    }
    if let Some(i) = letter_cue(response, options.len()) {
        return BTreeSet::from([i]);
    }
    quoted_options(response, options, mode).into_iter().collect()
}

/// Gold answer as an index, a list of indices, or letters (`"C"`, `"A,C"`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Index(usize),
    Indices(Vec<usize>),
    Letters(String),
}

impl Gold {
    pub fn indices(&self) -> BTreeSet<usize> {
        match self {
            Gold::Index(i) => BTreeSet::from([*i]),
            Gold::Indices(v) => v.iter().copied().collect(),
            Gold::Letters(s) => s.chars().filter(char::is_ascii_uppercase).map(|c| (c as u8 - b'A') as usize).collect(),
        }
    }

    /// Scores 1 when the response's choice (or choice set, for multi-answer
    /// gold) equals the gold exactly.
    pub fn score(&self, response: &str, options: &[String], mode: LanguageMode) -> f64 {
        let gold = self.indices();
        let hit = if gold.len() > 1 {
            extract_choice_set(response, options, mode) == gold
        } else {
            exact_match_choice(response, options, mode).is_some_and(|i| gold.contains(&i))
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const U: LanguageMode = LanguageMode::Unicode;

    fn opts(o: &[&str]) -> Vec<String> {
        o.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn letter_cues() {
        let o = opts(&["liver", "kidney", "spleen", "heart"]);
        assert_eq!(exact_match_choice("The answer is C.", &o, U), Some(2));
        assert_eq!(exact_match_choice("B. Because the kidney filters blood.", &o, U), Some(1));
        assert_eq!(exact_match_choice("I would pick (D) here.", &o, U), Some(3));
        assert_eq!(exact_match_choice("Answer: A", &o, U), Some(0));
        // earliest cue wins
        assert_eq!(exact_match_choice("(B) is wrong; the answer is A", &o, U), Some(1));
        // letters beyond the option count are not cues
        assert_eq!(exact_match_choice("The answer is F.", &o, U), None);
        // "a" as an article is not a letter cue
        assert_eq!(exact_match_choice("The answer is a spleen", &o, U), Some(2));
    }

    #[test]
    fn quoted_option_rules() {
        let o = opts(&["bile salts", "insulin", "glucagon"]);
        assert_eq!(exact_match_choice("It is produced as bile salts by hepatocytes", &o, U), Some(0));
        assert_eq!(exact_match_choice("insulin and glucagon both matter", &o, U), None);
        assert_eq!(exact_match_choice("no idea", &o, U), None);
    }

    #[test]
    fn multi_answer_sets() {
        let o = opts(&["w", "x", "y", "z"]);
        assert_eq!(extract_choice_set("The answers are A and C.", &o, U), BTreeSet::from([0, 2]));
        assert_eq!(extract_choice_set("Answer: B, D", &o, U), BTreeSet::from([1, 3]));
        let gold = Gold::Letters("A,C".into());
        assert_eq!(gold.score("answers are A and C", &o, U), 1.0);
        assert_eq!(gold.score("the answer is A", &o, U), 0.0);
        assert_eq!(Gold::Index(2).score("(C)", &o, U), 1.0);
        let parsed: Gold = serde_json::from_str("[0, 2]").unwrap();
        assert_eq!(parsed.indices(), BTreeSet::from([0, 2]));
    }

    proptest! {
        #[test]
        fn quoted_choice_survives_permutation(words in prop::collection::btree_set("q[a-z]{4,8}", 4..=4), pick in 0usize..4, shift in 1usize..4) {
            let o: Vec<String> = words.into_iter().collect();
            let response = format!("I believe it must be {} overall", o[pick]);
            let first = exact_match_choice(&response, &o, U).map(|i| o[i].clone());
            let mut rotated = o.clone();
            rotated.rotate_left(shift);
            let second = exact_match_choice(&response, &rotated, U).map(|i| rotated[i].clone());
            prop_assert_eq!(first.as_deref(), Some(o[pick].as_str()));
            prop_assert_eq!(first, second);
        }

        #[test]
        fn total_and_deterministic(response in ".{0,60}") {
            let o = opts(&["alpha", "beta", "gamma"]);
            let a = exact_match_choice(&response, &o, U);
            prop_assert_eq!(a, exact_match_choice(&response, &o, U));
            prop_assert!(a.map_or(true, |i| i < o.len()));
        }
    }
}
