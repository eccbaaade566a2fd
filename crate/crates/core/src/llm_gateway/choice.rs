//! Mapping a free-text model answer onto one of the prompt's options.
//!
//! Precedence:
//! 1. an explicit marker such as `Answer: B`, `The answer is (C)`, `Option D`;
//! 2. standalone option labels (`B`, `B.`, `(B)`, `**B**`, `AC` past 26
//!    options). Exactly one distinct label wins; more than one is ambiguous
//!    and abstains. Entity names are masked first so letters inside names do
//!    not count, `I` is ignored before a lowercase word (pronoun) and so is a
//!    sentence-initial `A` (article);
//! 3. case-insensitive containment of exactly one option's entity name;
//! 4. otherwise abstain.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::prompt_forge::PromptOption;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceOutcome {
    /// 0-based index into the prompt's options.
    Chosen(usize),
    Abstain(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceResult {
    pub outcome: ChoiceOutcome,
    pub raw_response: String,
}

impl ChoiceResult {
    pub fn abstain(reason: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            outcome: ChoiceOutcome::Abstain(reason.into()),
            raw_response: raw.into(),
        }
    }

    pub fn chosen(&self) -> Option<usize> {
        match self.outcome {
            ChoiceOutcome::Chosen(i) => Some(i),
            ChoiceOutcome::Abstain(_) => None,
        }
    }
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?i:\b(?:answer|option|choice)\b)(?:\s+is)?\s*[:\-]?\s*[\(\[\*"']*([A-Z]{1,2})(?:[^A-Za-z0-9]|$)"#,
        )
        .expect("static regex")
    })
}

fn index_of(label: &str, options: &[PromptOption]) -> Option<usize> {
    options.iter().position(|o| o.label == label)
}

/// Replace every case-insensitive occurrence of an option name with spaces.
fn mask_names(raw: &str, options: &[PromptOption]) -> String {
    let mut chars: Vec<char> = raw.chars().collect();
    let lower: Vec<char> = raw.chars().flat_map(char::to_lowercase).collect();
    if lower.len() != chars.len() {
        // lowercasing changed the length; masking by position is unsafe
        return raw.to_string();
    }
    for o in options {
        let name: Vec<char> = o.name.chars().flat_map(char::to_lowercase).collect();
        if name.is_empty() || name.len() > lower.len() {
            continue;
        }
        let mut i = 0;
        while i + name.len() <= lower.len() {
            if lower[i..i + name.len()] == name[..] {
                for c in &mut chars[i..i + name.len()] {
                    *c = ' ';
                }
                i += name.len();
            } else {
                i += 1;
            }
        }
    }
    chars.into_iter().collect()
}

/// Tokens of one or two uppercase ASCII letters, the shape of an option label.
fn standalone_letters(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_alphanumeric() {
            i += 1;
        }
        let token = &chars[start..i];
        if token.len() > 2 || !token.iter().all(char::is_ascii_uppercase) {
            continue;
        }
        if token.len() == 2 {
            out.push(token.iter().collect());
            continue;
        }
        let letter = chars[start];
        let followed_by_word = chars.get(start + 1) == Some(&' ')
            && chars.get(start + 2).is_some_and(|c| c.is_lowercase());
        if letter == 'I' && followed_by_word {
            continue;
        }
        if letter == 'A' && followed_by_word {
            let prev = chars[..start]
                .iter()
                .rev()
                .find(|c| !c.is_whitespace() && **c != '*');
            if matches!(prev, None | Some('.') | Some('!') | Some('?') | Some(':')) {
                continue;
            }
        }
        out.push(letter.to_string());
    }
    out
}

/// Interpret `raw` as a choice among `options`. Never returns an index
/// outside `options`.
pub fn parse_choice(raw: &str, options: &[PromptOption]) -> ChoiceResult {
    let result = |outcome| ChoiceResult {
        outcome,
        raw_response: raw.to_string(),
    };
    if options.is_empty() {
        return ChoiceResult::abstain("no options", raw);
    }
    if raw.trim().is_empty() {
        return ChoiceResult::abstain("empty response", raw);
    }

    let masked = mask_names(raw, options);

    for cap in marker_regex().captures_iter(&masked) {
        if let Some(i) = index_of(&cap[1], options) {
            return result(ChoiceOutcome::Chosen(i));
        }
    }

    let mut letters: Vec<usize> = standalone_letters(&masked)
        .into_iter()
        .filter_map(|l| index_of(&l, options))
        .collect();
    letters.sort_unstable();
    letters.dedup();
    match letters.len() {
        1 => return result(ChoiceOutcome::Chosen(letters[0])),
        0 => {}
        _ => {
            return result(ChoiceOutcome::Abstain(
                "ambiguous: several option letters".into(),
            ))
        }
    }

    let lower = raw.to_lowercase();
    let named: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.name.is_empty() && lower.contains(&o.name.to_lowercase()))
        .map(|(i, _)| i)
        .collect();
    if named.len() == 1 {
        return result(ChoiceOutcome::Chosen(named[0]));
    }
    result(ChoiceOutcome::Abstain("unparseable".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_store::EntityId;

    fn opts(names: &[&str]) -> Vec<PromptOption> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| PromptOption {
                label: crate::prompt_forge::option_label_for(i).unwrap(),
                target: EntityId(100 + i as u32),
                name: n.to_string(),
                block: String::new(),
            })
            .collect()
    }

    fn four() -> Vec<PromptOption> {
        opts(&[
            "City of Fairfield",
            "City of Bankstown",
            "Hornsby Shire",
            "Sydney",
        ])
    }

    fn chosen(raw: &str, o: &[PromptOption]) -> Option<usize> {
        parse_choice(raw, o).chosen()
    }

    #[test]
    fn letter_forms() {
        let o = four();
        for raw in [
            "B",
            "B.",
            "(B)",
            "Answer: B",
            "**B**",
            "The answer is B.",
            "option B",
            " B\n",
        ] {
            assert_eq!(chosen(raw, &o), Some(1), "{raw:?}");
        }
        assert_eq!(chosen("Answer: (D)", &o), Some(3));
    }

    #[test]
    fn explicit_marker_beats_other_letters() {
        assert_eq!(
            chosen("Answer: C. A is wrong because it is a suburb.", &four()),
            Some(2)
        );
    }

    #[test]
    fn name_containment() {
        assert_eq!(
            chosen("The correct entity is City of Bankstown", &four()),
            Some(1)
        );
        assert_eq!(
            chosen("the correct entity is city of bankstown", &four()),
            Some(1)
        );
    }

    #[test]
    fn two_letters_abstain() {
        let r = parse_choice("Both A and C are plausible", &four());
        assert!(matches!(r.outcome, ChoiceOutcome::Abstain(_)));
        assert_eq!(r.raw_response, "Both A and C are plausible");
    }

    #[test]
    fn pronoun_and_article_are_not_letters() {
        let o = opts(&[
            "Ottawa", "Paris", "Rome", "Oslo", "Lima", "Quito", "Bern", "Kyiv", "Riga", "Doha",
        ]);
        assert_eq!(chosen("I think B", &o), Some(1));
        assert_eq!(chosen("A careful reading points to B.", &o), Some(1));
        assert_eq!(chosen("I.", &o), Some(8));
    }

    #[test]
    fn letters_inside_names_are_masked() {
        let o = opts(&["John F Kennedy Airport", "LaGuardia", "C", "D", "E", "F"]);
        assert_eq!(
            chosen("B. LaGuardia, not John F Kennedy Airport", &o),
            Some(1)
        );
    }

    #[test]
    fn out_of_range_letter_ignored() {
        assert!(parse_choice("E", &four()).chosen().is_none());
    }

    #[test]
    fn two_letter_labels() {
        let names: Vec<String> = (0..30).map(|i| format!("Town {i}")).collect();
        let o = opts(&names.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(chosen("AC", &o), Some(28));
        assert_eq!(chosen("Answer: (AB)", &o), Some(27));
        assert_eq!(chosen("C", &o), Some(2));
        assert_eq!(chosen("OK", &four()), None);
    }

    #[test]
    fn unparseable_and_empty() {
        assert_eq!(
            parse_choice("I cannot determine.", &four()).outcome,
            ChoiceOutcome::Abstain("unparseable".into())
        );
        assert!(parse_choice("   ", &four()).chosen().is_none());
        assert!(parse_choice("A", &[]).chosen().is_none());
    }

    #[test]
    fn overlapping_names_are_ambiguous() {
        let o = opts(&["Springfield", "Springfield Township"]);
        assert!(parse_choice("springfield township", &o).chosen().is_none());
    }
}
