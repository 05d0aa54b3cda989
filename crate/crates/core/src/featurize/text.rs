use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{LexicalView, SyntacticView};
use crate::dataset::Utterance;
use crate::error::{Error, Result};

/// A sentence is long when it has strictly more words than this.
pub const LONG_SENTENCE_WORDS: usize = 15;

/// The six word lists used for lexical counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconSet {
    pub positive: HashSet<String>,
    pub negative: HashSet<String>,
    pub first_person: HashSet<String>,
    pub second_person: HashSet<String>,
    pub negations: HashSet<String>,
    pub stop_words: HashSet<String>,
}

const FILES: [&str; 6] = [
    "positive.txt",
    "negative.txt",
    "first_person.txt",
    "second_person.txt",
    "negations.txt",
    "stop_words.txt",
];

fn parse_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

impl LexiconSet {
    /// Word lists bundled with the crate.
    pub fn builtin() -> Self {
        Self {
            positive: parse_list(include_str!("../../resources/lexicons/positive.txt")),
            negative: parse_list(include_str!("../../resources/lexicons/negative.txt")),
            first_person: parse_list(include_str!("../../resources/lexicons/first_person.txt")),
            second_person: parse_list(include_str!("../../resources/lexicons/second_person.txt")),
            negations: parse_list(include_str!("../../resources/lexicons/negations.txt")),
            stop_words: parse_list(include_str!("../../resources/lexicons/stop_words.txt")),
        }
    }

    /// Load from a directory; any of the six files that is absent keeps its
    /// built-in list.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir.to_path_buf()));
        }
        let mut set = Self::builtin();
        let slots: [&mut HashSet<String>; 6] = [
            &mut set.positive,
            &mut set.negative,
            &mut set.first_person,
            &mut set.second_person,
            &mut set.negations,
            &mut set.stop_words,
        ];
        for (file, slot) in FILES.iter().zip(slots) {
            let path = dir.join(file);
            if path.exists() {
                *slot = parse_list(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?);
            }
        }
        Ok(set)
    }
}

impl Default for LexiconSet {
    fn default() -> Self {
        Self::builtin()
    }
}

fn sentences(transcript: &[Utterance]) -> Vec<usize> {
    transcript
        .iter()
        .flat_map(|u| u.text.split(['.', '!', '?']))
        .map(|s| s.split_whitespace().count())
        .filter(|&n| n > 0)
        .collect()
}

pub fn syntactic_features(transcript: &[Utterance]) -> Result<SyntacticView> {
    let counts = sentences(transcript);
    if counts.is_empty() {
        return Err(Error::EmptyTranscript);
    }
    let n = counts.len() as f64;
    let words: usize = counts.iter().sum();
    let long = counts.iter().filter(|&&c| c > LONG_SENTENCE_WORDS).count();
    Ok(SyntacticView {
        avg_word_count: words as f64 / n,
        long_sentence_rate: long as f64 / n,
        sentence_count: counts.len() as u32,
    })
}

fn normalize_token(tok: &str) -> String {
    tok.trim_matches(|c: char| !(c.is_alphanumeric() || c == '\''))
        .replace('\u{2019}', "'")
        .to_lowercase()
}

pub fn lexical_features(transcript: &[Utterance], lexicons: &LexiconSet) -> Result<LexicalView> {
    let mut view = LexicalView::default();
    let mut any = false;
    for u in transcript {
        for raw in u.text.split_whitespace() {
            let tok = normalize_token(raw);
            if tok.is_empty() {
                continue;
            }
            any = true;
            let hit = |set: &HashSet<String>| u32::from(set.contains(&tok));
            view.pos_emotion += hit(&lexicons.positive);
            view.neg_emotion += hit(&lexicons.negative);
            view.i_statements += hit(&lexicons.first_person);
            view.you_statements += hit(&lexicons.second_person);
            view.negations += hit(&lexicons.negations);
            view.stop_words += hit(&lexicons.stop_words);
        }
    }
    if !any {
        return Err(Error::EmptyTranscript);
    }
    Ok(view)
}
