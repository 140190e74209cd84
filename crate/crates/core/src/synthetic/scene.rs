//! Scene descriptions and the prompt grammar parser.
//!
//! Grammar (informal). A prompt is a list of clauses separated by `.`, `;`,
//! `!` or `?`. Inside a clause, tokens are read left to right:
//!
//! * `<count>` (`a`, `an`, `one`..`ten`, digits) and attribute words
//!   (color, texture, state, shape) accumulate as pending modifiers;
//! * a noun attaches the pending modifiers to the object of that noun,
//!   creating it on first mention (count defaults to 1);
//! * `is`/`are` make following attribute words apply to the last noun;
//! * a predicate (`in`, `on`, `next to`, `left of`, ...) between two nouns
//!   adds a relation;
//! * `without`, `no`, `free` turn the next noun into an exclusion;
//! * `<background word> background` and `<style word> style` set the
//!   background and style;
//! * attribute words left over at clause end apply to the last noun;
//! * every other token (adverbs, fillers) is ignored.
//!
//! On repeated mentions the first value given for an attribute wins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lexicon::{self, join_predicates};
use super::SimError;
use crate::text::tokens;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub noun: String,
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
}

impl SceneObject {
    pub fn new(noun: &str, count: u32) -> Self {
        Self { noun: noun.into(), count, color: None, shape: None, state: None, texture: None }
    }

    pub fn attribute(&self, kind: AttrKind) -> Option<&str> {
        match kind {
            AttrKind::Color => self.color.as_deref(),
            AttrKind::Shape => self.shape.as_deref(),
            AttrKind::State => self.state.as_deref(),
            AttrKind::Texture => self.texture.as_deref(),
        }
    }

    pub fn attribute_mut(&mut self, kind: AttrKind) -> &mut Option<String> {
        match kind {
            AttrKind::Color => &mut self.color,
            AttrKind::Shape => &mut self.shape,
            AttrKind::State => &mut self.state,
            AttrKind::Texture => &mut self.texture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Color,
    Shape,
    State,
    Texture,
}

impl AttrKind {
    pub const ALL: [AttrKind; 4] = [AttrKind::Color, AttrKind::Shape, AttrKind::State, AttrKind::Texture];

    pub fn of_token(token: &str) -> Option<AttrKind> {
        if lexicon::COLORS.contains(&token) {
            Some(AttrKind::Color)
        } else if lexicon::TEXTURES.contains(&token) {
            Some(AttrKind::Texture)
        } else if lexicon::STATES.contains(&token) {
            Some(AttrKind::State)
        } else if lexicon::SHAPES.contains(&token) {
            Some(AttrKind::Shape)
        } else {
            None
        }
    }

    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            AttrKind::Color => lexicon::COLORS,
            AttrKind::Shape => lexicon::SHAPES,
            AttrKind::State => lexicon::STATES,
            AttrKind::Texture => lexicon::TEXTURES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttrKind::Color => "color",
            AttrKind::Shape => "shape",
            AttrKind::State => "state",
            AttrKind::Texture => "texture",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

/// A structured stand-in for an image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub background: String,
    #[serde(default)]
    pub style: String,
    /// Nouns the prompt asks to keep out of the image. Always empty for
    /// rendered scenes, which list what is actually present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusions: Vec<String>,
}

impl SceneSpec {
    pub fn object(&self, noun: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.noun == noun)
    }

    pub fn index_of(&self, noun: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.noun == noun)
    }

    /// Count of `noun` present (0 when absent).
    pub fn count_of(&self, noun: &str) -> u32 {
        self.object(noun).map_or(0, |o| o.count)
    }

    /// Predicate between two nouns, if any.
    pub fn predicate_between(&self, subject: &str, object: &str) -> Option<&str> {
        self.relations.iter().find_map(|r| {
            (self.objects[r.subject].noun == subject && self.objects[r.object].noun == object)
                .then_some(r.predicate.as_str())
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for r in &self.relations {
            if r.subject >= self.objects.len() || r.object >= self.objects.len() {
                return Err(SimError::InvalidScene(format!("relation index out of range: {r:?}")));
            }
        }
        Ok(())
    }

    /// Stable identifier: hash of the canonical JSON.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("scene serializes");
        crate::text::sha256_hex(&json)[..24].to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPrompt {
    pub scene: SceneSpec,
    /// Tokens of each clause, multi-word predicates joined.
    pub clauses: Vec<Vec<String>>,
}

impl ParsedPrompt {
    /// Tokens of all clauses that mention any of `words`.
    pub fn clauses_mentioning(&self, words: &[&str]) -> Vec<&str> {
        self.clauses
            .iter()
            .filter(|c| c.iter().any(|t| words.contains(&t.as_str())))
            .flat_map(|c| c.iter().map(String::as_str))
            .collect()
    }

    pub fn all_tokens(&self) -> Vec<&str> {
        self.clauses.iter().flat_map(|c| c.iter().map(String::as_str)).collect()
    }
}

pub fn split_clauses(text: &str) -> Vec<&str> {
    text.split(['.', ';', '!', '?'])
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .collect()
}

/// Parse with the grammar; fails when no object noun is found.
pub fn parse_prompt(text: &str) -> Result<ParsedPrompt, SimError> {
    let parsed = parse_lenient(text);
    if parsed.scene.objects.is_empty() {
        return Err(SimError::Grammar(format!("no known object noun in {text:?}")));
    }
    Ok(parsed)
}

/// Parse with the grammar, accepting clauses without objects.
pub fn parse_lenient(text: &str) -> ParsedPrompt {
    let mut scene = SceneSpec::default();
    let mut clauses = Vec::new();
    for clause in split_clauses(text) {
        let toks = join_predicates(tokens(clause));
        parse_clause(&toks, &mut scene);
        clauses.push(toks);
    }
    ParsedPrompt { scene, clauses }
}

fn parse_clause(toks: &[String], scene: &mut SceneSpec) {
    let mut count: Option<u32> = None;
    let mut attrs: BTreeMap<AttrKind, String> = BTreeMap::new();
    let mut last: Option<usize> = None;
    let mut predicate: Option<(usize, String)> = None;
    let mut negate = false;
    let mut copula = false;

    for (i, tok) in toks.iter().enumerate() {
        let t = tok.as_str();
        let next = toks.get(i + 1).map(String::as_str);
        if next == Some("background") && lexicon::BACKGROUNDS.contains(&t) {
            if scene.background.is_empty() {
                scene.background = t.to_string();
            }
            continue;
        }
        if next == Some("style") && lexicon::STYLES.contains(&t) {
            if scene.style.is_empty() {
                scene.style = t.to_string();
            }
            continue;
        }
        if lexicon::NEGATIONS.contains(&t) {
            negate = true;
            continue;
        }
        if lexicon::COPULAS.contains(&t) {
            copula = true;
            continue;
        }
        if lexicon::is_predicate(t) {
            copula = false;
            if let Some(subject) = last {
                predicate = Some((subject, t.to_string()));
            }
            continue;
        }
        if let Some(kind) = AttrKind::of_token(t) {
            match (copula, last) {
                (true, Some(idx)) => {
                    let slot = scene.objects[idx].attribute_mut(kind);
                    if slot.is_none() {
                        *slot = Some(t.to_string());
                    }
                }
                _ => {
                    attrs.entry(kind).or_insert_with(|| t.to_string());
                }
            }
            continue;
        }
        if let Some(n) = lexicon::count_value(t) {
            count = Some(n);
            continue;
        }
        if let Some(noun) = lexicon::singular(t) {
            if negate {
                if !scene.exclusions.iter().any(|x| x == noun) {
                    scene.exclusions.push(noun.to_string());
                }
                negate = false;
                count = None;
                attrs.clear();
                continue;
            }
            let idx = match scene.index_of(noun) {
                Some(idx) => idx,
                None => {
                    scene.objects.push(SceneObject::new(noun, count.unwrap_or(1)));
                    scene.objects.len() - 1
                }
            };
            for (kind, value) in std::mem::take(&mut attrs) {
                let slot = scene.objects[idx].attribute_mut(kind);
                if slot.is_none() {
                    *slot = Some(value);
                }
            }
            if let Some((subject, pred)) = predicate.take() {
                let dup = scene
                    .relations
                    .iter()
                    .any(|r| r.subject == subject && r.object == idx);
                if subject != idx && !dup {
                    scene.relations.push(Relation { subject, predicate: pred, object: idx });
                }
            }
            count = None;
            last = Some(idx);
            continue;
        }
    }
    if let Some(idx) = last {
        for (kind, value) in attrs {
            let slot = scene.objects[idx].attribute_mut(kind);
            if slot.is_none() {
                *slot = Some(value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baozi_prompt() {
        let p = parse_prompt("six baozi in a bamboo steamer").unwrap();
        let s = &p.scene;
        assert_eq!(s.objects.len(), 2);
        assert_eq!(s.count_of("baozi"), 6);
        assert_eq!(s.object("steamer").unwrap().texture.as_deref(), Some("bamboo"));
        assert_eq!(s.predicate_between("baozi", "steamer"), Some("in"));
    }

    #[test]
    fn copula_and_leftover_attributes() {
        let p = parse_prompt("a cat on a mat. the mat is blue").unwrap();
        assert_eq!(p.scene.object("mat").unwrap().color.as_deref(), Some("blue"));
        let q = parse_prompt("Is the apple red?").unwrap();
        assert_eq!(q.scene.object("apple").unwrap().color.as_deref(), Some("red"));
    }

    #[test]
    fn exclusions_background_and_style() {
        let p = parse_prompt(
            "two green chairs next to a table, without any dog, with a kitchen background, in watercolor style",
        )
        .unwrap();
        assert_eq!(p.scene.exclusions, vec!["dog"]);
        assert_eq!(p.scene.background, "kitchen");
        assert_eq!(p.scene.style, "watercolor");
        assert_eq!(p.scene.predicate_between("chair", "table"), Some("next to"));
        assert_eq!(p.scene.object("chair").unwrap().color.as_deref(), Some("green"));
    }

    #[test]
    fn emphasis_and_repetition_do_not_change_scene() {
        let plain = parse_prompt("six baozi in a bamboo steamer").unwrap().scene;
        let emph = parse_prompt(
            "Remarkably, exactly six lovely baozi in a bamboo steamer, six baozi in total",
        )
        .unwrap()
        .scene;
        assert_eq!(plain, emph);
    }

    #[test]
    fn free_of_is_negation() {
        let p = parse_prompt("a cup, free of any bird").unwrap();
        assert_eq!(p.scene.exclusions, vec!["bird"]);
        assert!(p.scene.object("bird").is_none());
    }

    #[test]
    fn no_nouns_is_grammar_error() {
        assert!(matches!(parse_prompt("a glorious sunset"), Err(SimError::Grammar(_))));
    }
}
