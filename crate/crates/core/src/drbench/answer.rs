//! Answer normalization.

use serde::{Deserialize, Serialize};

use super::{QuestionType, SampleRecord};

pub const UNPARSED: &str = "UNPARSED";

/// Words accepted as yes/no, in any language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerAliases {
    pub yes: Vec<String>,
    pub no: Vec<String>,
}

impl Default for AnswerAliases {
    fn default() -> Self {
        Self {
            yes: vec!["yes".into(), "是".into(), "对".into()],
            no: vec!["no".into(), "否".into(), "不是".into(), "不对".into()],
        }
    }
}

impl AnswerAliases {
    fn classify(&self, word: &str) -> Option<&'static str> {
        let w = word.trim().to_lowercase();
        if self.yes.iter().any(|a| a.to_lowercase() == w) {
            Some("yes")
        } else if self.no.iter().any(|a| a.to_lowercase() == w) {
            Some("no")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerFormat {
    /// Option letters `A..` up to the option count.
    Letter(usize),
    YesNo,
    Open,
}

pub fn answer_format(sample: &SampleRecord, aliases: &AnswerAliases) -> AnswerFormat {
    match (sample.question_type, &sample.options) {
        (QuestionType::Mcq, Some(opts)) => AnswerFormat::Letter(opts.len()),
        (QuestionType::Mcq, None) => AnswerFormat::Letter(4),
        (QuestionType::Others, _) if aliases.classify(&sample.gt_answer).is_some() => AnswerFormat::YesNo,
        (QuestionType::Others, _) => AnswerFormat::Open,
    }
}

/// Lowercases, strips punctuation and collapses whitespace.
pub fn normalize_open(text: &str) -> String {
    text.chars()
        .filter(|c| !is_punctuation(*c))
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '，' | '。' | '？' | '！' | '：' | '；' | '、' | '“' | '”' | '‘' | '’')
}

fn letter_of(index: usize) -> String {
    char::from(b'A' + index as u8).to_string()
}

fn first_letter(raw: &str, count: usize) -> Option<String> {
    let count = count.min(26);
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() == 1)
        .find_map(|w| {
            let c = w.chars().next()?.to_ascii_uppercase();
            let idx = (c as u32).checked_sub('A' as u32)? as usize;
            (c.is_ascii_uppercase() && idx < count).then(|| c.to_string())
        })
}

fn longest_option_match(raw: &str, options: &[String]) -> Option<String> {
    let haystack = raw.to_lowercase();
    options
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.trim().is_empty() && haystack.contains(&o.trim().to_lowercase()))
        .max_by_key(|(i, o)| (o.trim().chars().count(), std::cmp::Reverse(*i)))
        .map(|(i, _)| letter_of(i))
}

fn is_boundary(c: Option<char>) -> bool {
    c.is_none_or(|c| !c.is_ascii_alphanumeric())
}

fn first_yes_no(raw: &str, aliases: &AnswerAliases) -> Option<&'static str> {
    let haystack = raw.to_lowercase();
    let mut best: Option<(usize, usize, &'static str)> = None;
    let candidates = aliases
        .yes
        .iter()
        .map(|a| (a, "yes"))
        .chain(aliases.no.iter().map(|a| (a, "no")));
    for (alias, label) in candidates {
        let alias = alias.to_lowercase();
        if alias.is_empty() {
            continue;
        }
        for (pos, _) in haystack.match_indices(&alias) {
            let before = haystack[..pos].chars().next_back();
            let after = haystack[pos + alias.len()..].chars().next();
            if is_boundary(before) && is_boundary(after) {
                let better = match best {
                    None => true,
                    Some((p, len, _)) => pos < p || (pos == p && alias.len() > len),
                };
                if better {
                    best = Some((pos, alias.len(), label));
                }
                break;
            }
        }
    }
    best.map(|(_, _, label)| label)
}

/// Maps raw model output to a comparable answer, or [`UNPARSED`].
pub fn extract_answer(raw_text: &str, sample: &SampleRecord, aliases: &AnswerAliases) -> String {
    let raw = raw_text.trim();
    if raw.is_empty() {
        return UNPARSED.to_string();
    }
    let found = match answer_format(sample, aliases) {
        AnswerFormat::Letter(count) => first_letter(raw, count)
            .or_else(|| sample.options.as_deref().and_then(|o| longest_option_match(raw, o))),
        AnswerFormat::YesNo => first_yes_no(raw, aliases).map(str::to_string),
        AnswerFormat::Open => Some(normalize_open(raw)).filter(|s| !s.is_empty()),
    };
    found.unwrap_or_else(|| UNPARSED.to_string())
}

/// The ground truth in the same normalized form as [`extract_answer`].
pub fn expected_answer(sample: &SampleRecord, aliases: &AnswerAliases) -> String {
    let gt = sample.gt_answer.trim();
    match answer_format(sample, aliases) {
        AnswerFormat::Letter(count) => first_letter(gt, count)
            .or_else(|| sample.options.as_deref().and_then(|o| longest_option_match(gt, o)))
            .unwrap_or_else(|| gt.to_uppercase()),
        AnswerFormat::YesNo => aliases.classify(gt).unwrap_or("yes").to_string(),
        AnswerFormat::Open => normalize_open(gt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ImageRef;

    fn mcq(options: usize) -> SampleRecord {
        SampleRecord {
            v: 1,
            id: "m".into(),
            dataset: "d".into(),
            question_type: QuestionType::Mcq,
            image: ImageRef::Toy("x=A".into()),
            prompt: "p".into(),
            options: Some(["red car", "blue car", "car", "bus", "van"][..options].iter().map(|s| s.to_string()).collect()),
            gt_answer: "A".into(),
        }
    }

    fn others(gt: &str) -> SampleRecord {
        SampleRecord { question_type: QuestionType::Others, options: None, gt_answer: gt.into(), ..mcq(2) }
    }

    fn ex(raw: &str, s: &SampleRecord) -> String {
        extract_answer(raw, s, &AnswerAliases::default())
    }

    #[test]
    fn common_cases() {
        assert_eq!(ex("The answer is B.", &mcq(4)), "B");
        assert_eq!(ex("Yes, there is a dog.", &others("yes")), "yes");
        assert_eq!(ex("", &mcq(4)), UNPARSED);
        assert_eq!(ex("   ", &others("no")), UNPARSED);
        assert_eq!(ex("", &others("a cat")), UNPARSED);
    }

    #[test]
    fn letters_respect_option_count() {
        assert_eq!(ex("E", &mcq(4)), UNPARSED);
        assert_eq!(ex("E", &mcq(5)), "E");
        assert_eq!(ex("(c)", &mcq(4)), "C");
        assert_eq!(ex("Answer: d", &mcq(4)), "D");
    }

    #[test]
    fn falls_back_to_longest_option_text() {
        assert_eq!(ex("It is the blue car.", &mcq(4)), "B");
        assert_eq!(ex("I saw one bus!", &mcq(4)), "D");
        assert_eq!(ex("nothing matches", &mcq(4)), UNPARSED);
    }

    #[test]
    fn yes_no_matching() {
        assert_eq!(ex("No.", &others("yes")), "no");
        assert_eq!(ex("Nope, yes it is", &others("yes")), "yes");
        assert_eq!(ex("是的", &others("否")), "yes");
        assert_eq!(ex("不是", &others("是")), "no");
        assert_eq!(ex("maybe", &others("yes")), UNPARSED);
        assert_eq!(ex("yesterday", &others("yes")), UNPARSED);
    }

    #[test]
    fn open_ended_normalization() {
        assert_eq!(ex("  A Red Apple. ", &others("red apple")), "a red apple");
        assert_eq!(expected_answer(&others("Red apple!"), &AnswerAliases::default()), "red apple");
        assert_eq!(ex("...", &others("x")), UNPARSED);
    }

    #[test]
    fn expected_answers() {
        let a = AnswerAliases::default();
        assert_eq!(expected_answer(&SampleRecord { gt_answer: "b".into(), ..mcq(4) }, &a), "B");
        assert_eq!(expected_answer(&SampleRecord { gt_answer: "bus".into(), ..mcq(4) }, &a), "D");
        assert_eq!(expected_answer(&others("Yes"), &a), "yes");
        assert_eq!(expected_answer(&others("否"), &a), "no");
    }
}
