use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::ImageRef;
use crate::synthetic::lexicon;
use crate::text::{alnum_key, content_words, tokens};

/// What a question checks and what an error is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Existence,
    Color,
    Number,
    Shape,
    State,
    Texture,
    Relation,
    Position,
    Background,
    Style,
}

impl Aspect {
    pub const ALL: [Aspect; 10] = [
        Aspect::Existence,
        Aspect::Color,
        Aspect::Number,
        Aspect::Shape,
        Aspect::State,
        Aspect::Texture,
        Aspect::Relation,
        Aspect::Position,
        Aspect::Background,
        Aspect::Style,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Existence => "existence",
            Aspect::Color => "color",
            Aspect::Number => "number",
            Aspect::Shape => "shape",
            Aspect::State => "state",
            Aspect::Texture => "texture",
            Aspect::Relation => "relation",
            Aspect::Position => "position",
            Aspect::Background => "background",
            Aspect::Style => "style",
        }
    }

    /// Default severity when the integration agent gives none.
    pub fn default_severity(self) -> u8 {
        match self {
            Aspect::Existence | Aspect::Number => 3,
            Aspect::Background | Aspect::Style => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = String;

    /// Case-insensitive; accepts a few common synonyms agents use.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase();
        let aspect = match key.as_str() {
            "existence" | "object" | "presence" | "missing" | "extra" => Aspect::Existence,
            "color" | "colour" => Aspect::Color,
            "number" | "count" | "quantity" | "counting" => Aspect::Number,
            "shape" => Aspect::Shape,
            "state" | "action" | "pose" => Aspect::State,
            "texture" | "material" => Aspect::Texture,
            "relation" | "relationship" => Aspect::Relation,
            "position" | "spatial" | "layout" => Aspect::Position,
            "background" | "scene" => Aspect::Background,
            "style" => Aspect::Style,
            _ => return Err(format!("unknown aspect {s:?}")),
        };
        Ok(aspect)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceKind {
    Object,
    Relationship,
    Background,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaSentence {
    pub index: usize,
    pub text: String,
    pub kind: PieceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: usize,
    pub target: usize,
    pub aspect: Aspect,
    pub question_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Vqa,
    Caption,
    Integrated,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Vqa => "vqa",
            Branch::Caption => "caption",
            Branch::Integrated => "integrated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub category: Aspect,
    pub explanation: String,
    pub branch: Branch,
    #[serde(default)]
    pub mapped_sentence: Option<usize>,
    pub severity: u8,
    /// For integrated records: the input records this one stands for,
    /// as `"vqa:<i>"` / `"caption:<i>"`, or `"verifier"` for additions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

impl ErrorRecord {
    pub fn new(category: Aspect, explanation: impl Into<String>, branch: Branch) -> Self {
        Self {
            category,
            explanation: explanation.into(),
            branch,
            mapped_sentence: None,
            severity: category.default_severity(),
            sources: Vec::new(),
        }
    }

    /// Duplicate-detection key: category plus alphanumeric-only explanation.
    pub fn dedup_key(&self) -> (Aspect, String) {
        (self.category, alnum_key(&self.explanation))
    }

    /// The thing the error is about: the first known noun in the
    /// explanation, else the first background or style word.
    pub fn subject(&self) -> Option<String> {
        error_subject(&self.explanation)
    }

    /// Whether two records describe the same problem. Uses the subject
    /// when both have one, else any shared content word.
    pub fn same_problem(&self, other: &ErrorRecord) -> bool {
        if self.category != other.category {
            return false;
        }
        match (self.subject(), other.subject()) {
            (Some(a), Some(b)) => a == b,
            _ => {
                let mine = content_words(&self.explanation);
                content_words(&other.explanation).iter().any(|w| mine.contains(w))
            }
        }
    }
}

pub fn error_subject(explanation: &str) -> Option<String> {
    let toks = tokens(explanation);
    if let Some(noun) = toks.iter().find_map(|t| lexicon::singular(t)) {
        return Some(noun.to_string());
    }
    toks.iter()
        .find(|t| lexicon::BACKGROUNDS.contains(&t.as_str()) || lexicon::STYLES.contains(&t.as_str()))
        .cloned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSet {
    pub branch: Branch,
    pub records: Vec<ErrorRecord>,
}

impl ErrorSet {
    pub fn new(branch: Branch) -> Self {
        Self { branch, records: Vec::new() }
    }

    /// Add a record unless one with the same dedup key exists. The
    /// record's branch is forced to the set's branch.
    pub fn insert(&mut self, mut record: ErrorRecord) -> bool {
        record.branch = self.branch;
        let key = record.dedup_key();
        if self.records.iter().any(|r| r.dedup_key() == key) {
            return false;
        }
        self.records.push(record);
        true
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn contains_problem(&self, record: &ErrorRecord) -> bool {
        self.records.iter().any(|r| r.same_problem(record))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMapping {
    /// Index into the integrated error set.
    pub error: usize,
    /// Index into the prompt pieces.
    pub sentence: usize,
    pub rationale: String,
}

/// An input record the integration agent chose not to keep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub original_prompt: String,
    pub original_image: ImageRef,
    pub pieces: Vec<MetaSentence>,
    pub questions: Vec<QuestionItem>,
    pub vqa_errors: ErrorSet,
    pub caption_errors: ErrorSet,
    pub caption: String,
    pub error_set: ErrorSet,
    #[serde(default)]
    pub rejected: Vec<Rejection>,
    pub mappings: Vec<ErrorMapping>,
    #[serde(default)]
    pub history: Vec<String>,
}

impl RunMetadata {
    /// Whether the structural invariants hold: an integrated error set,
    /// and exactly one valid mapping per error that agrees with the
    /// record's `mapped_sentence`.
    pub fn consistent(&self) -> bool {
        self.error_set.branch == Branch::Integrated
            && self.error_set.records.iter().all(|r| r.branch == Branch::Integrated)
            && self.mappings.len() == self.error_set.len()
            && self.mappings.iter().enumerate().all(|(i, m)| {
                m.error == i
                    && m.sentence < self.pieces.len()
                    && self.error_set.records[i].mapped_sentence == Some(m.sentence)
            })
            && self.questions.iter().all(|q| q.target < self.pieces.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_ignores_case_and_punctuation() {
        let mut set = ErrorSet::new(Branch::Vqa);
        assert!(set.insert(ErrorRecord::new(Aspect::Number, "Only 3 baozi!", Branch::Vqa)));
        assert!(!set.insert(ErrorRecord::new(Aspect::Number, "only 3 baozi", Branch::Caption)));
        assert!(set.insert(ErrorRecord::new(Aspect::Color, "only 3 baozi", Branch::Vqa)));
        assert!(set.records.iter().all(|r| r.branch == Branch::Vqa));
    }

    #[test]
    fn aspect_parsing_is_lenient() {
        assert_eq!("Quantity".parse::<Aspect>().unwrap(), Aspect::Number);
        assert_eq!(" COLOR ".parse::<Aspect>().unwrap(), Aspect::Color);
        assert!("vibes".parse::<Aspect>().is_err());
    }

    #[test]
    fn subjects_and_same_problem() {
        let a = ErrorRecord::new(Aspect::Number, "Are there six baozi? observed 3, expected 6", Branch::Vqa);
        let b = ErrorRecord::new(Aspect::Number, "the caption mentions three baozi", Branch::Caption);
        assert_eq!(a.subject().as_deref(), Some("baozi"));
        assert!(a.same_problem(&b));
        let c = ErrorRecord::new(Aspect::Number, "two steamers instead of one", Branch::Vqa);
        assert!(!a.same_problem(&c));
    }
}
