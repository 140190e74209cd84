//! Every chat agent of the pipeline, played by deterministic rules over the
//! synthetic oracles.
//!
//! Agents read the structured `context` of a [`ChatRequest`] (the values its
//! templates were rendered from) and reply in exactly the text format a
//! real model is asked for, so the same parsing code runs against both.
//!
//! The refinement agent models a model that learns from memory: for the
//! error at hand it can apply three mitigation edits, and includes each one
//! in a candidate with probability `min(0.85, 0.45 + 0.15 * attempt)`, where
//! `attempt` counts earlier memory entries for the same error. Each
//! candidate also gets a neutral filler adjective with probability 0.5, and
//! the emphasis adverb avoids adverbs already tried in memory. All choices
//! are hash draws on `(seed, iteration, candidate index, salt)`.

use std::sync::Arc;

use serde_json::{json, Value};

use super::lexicon::{self, count_word, noun_forms, plural, with_article};
use super::render::{
    load_scene, COLOR_WORDS, EXIST_WORDS, SHAPE_WORDS, STATE_WORDS, TEXTURE_WORDS,
};
use super::scene::{parse_lenient, AttrKind};
use super::vqa::{compare_caption, describe_scene, mock_vqa_answer};
use crate::backends::{
    AgentRole, ArtifactStore, BackendConfig, BackendError, ChatBackend, ChatRequest,
    ChatResponse, Usage,
};
use crate::error_analysis::{error_subject, Aspect, ErrorRecord, QuestionItem};
use crate::text::{alnum_key, content_words, stable_hash, tokens, unit_interval};

/// Chat backend simulating all agents against the synthetic environment.
pub struct SimulatedAgents {
    store: Arc<ArtifactStore>,
    pinned_rating: Option<u8>,
    fail_rating_for: Option<String>,
}

impl SimulatedAgents {
    pub fn new(store: Arc<ArtifactStore>) -> Self {
        Self { store, pinned_rating: None, fail_rating_for: None }
    }

    /// Rate every rubric item with the same value.
    pub fn with_pinned_rating(mut self, rating: u8) -> Self {
        self.pinned_rating = Some(rating);
        self
    }

    /// Reply with unparseable ratings for prompts containing `needle`.
    pub fn with_failing_rating_for(mut self, needle: impl Into<String>) -> Self {
        self.fail_rating_for = Some(needle.into());
        self
    }

    fn reply(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let ctx = &request.context;
        let text = match request.agent {
            AgentRole::Decompose => decompose_reply(str_field(ctx, "prompt")?),
            AgentRole::Questions => questions_reply(&pieces_field(ctx)?),
            AgentRole::Vqa => {
                let question: QuestionItem = field(ctx, "question")?;
                let scene = self.scene(request)?;
                match mock_vqa_answer(&scene, &question) {
                    Ok(a) => a.reply(),
                    Err(_) => "UNSURE".into(),
                }
            }
            AgentRole::Caption => describe_scene(&self.scene(request)?),
            AgentRole::CompareCaption => {
                let found = compare_caption(str_field(ctx, "prompt")?, str_field(ctx, "caption")?);
                let errors: Vec<Value> = found
                    .into_iter()
                    .map(|(a, e)| json!({"category": a.as_str(), "explanation": e}))
                    .collect();
                json!({ "errors": errors }).to_string()
            }
            AgentRole::Integrate => {
                let vqa: Vec<ErrorRecord> = field(ctx, "vqa")?;
                let caption: Vec<ErrorRecord> = field(ctx, "caption")?;
                integrate_reply(&vqa, &caption)
            }
            AgentRole::MapErrors => {
                let errors: Vec<ErrorRecord> = field(ctx, "errors")?;
                map_reply(&errors, &pieces_field(ctx)?)
            }
            AgentRole::Refine => refine_reply(ctx)?,
            AgentRole::Merge => {
                let merged = merge_text(
                    str_field(ctx, "prompt")?,
                    str_field(ctx, "original_sentence")?,
                    str_field(ctx, "modified_sentence")?,
                );
                json!({ "prompt": merged }).to_string()
            }
            AgentRole::ScoreVqa => {
                let questions: Vec<QuestionItem> = field(ctx, "questions")?;
                let scene = self.scene(request)?;
                let answers: Vec<Value> = questions
                    .iter()
                    .map(|q| match mock_vqa_answer(&scene, q) {
                        Ok(a) => json!({
                            "id": q.id,
                            "label": if a.yes { "YES" } else { "NO" },
                            "explanation": a.explanation,
                        }),
                        Err(e) => json!({"id": q.id, "label": "NO", "explanation": e.to_string()}),
                    })
                    .collect();
                json!({ "answers": answers }).to_string()
            }
            AgentRole::Rate => {
                let prompt = ctx.get("prompt").and_then(Value::as_str).unwrap_or_default();
                if self.fail_rating_for.as_deref().is_some_and(|n| prompt.contains(n)) {
                    return Ok("I cannot rate this image.".into());
                }
                rate_reply(ctx, self.pinned_rating)?
            }
            AgentRole::Summarize => summarize_reply(ctx),
            AgentRole::Rewrite => rewrite_reply(ctx)?,
        };
        Ok(text)
    }

    fn scene(&self, request: &ChatRequest) -> Result<super::SceneSpec, BackendError> {
        let image = request
            .images()
            .next()
            .ok_or_else(|| BackendError::Precondition("request carries no image".into()))?;
        load_scene(&self.store, image).map_err(|e| BackendError::Precondition(e.to_string()))
    }
}

impl ChatBackend for SimulatedAgents {
    fn id(&self) -> &str {
        "simulated-agents"
    }

    fn complete(
        &self,
        request: &ChatRequest,
        _config: &BackendConfig,
    ) -> Result<ChatResponse, BackendError> {
        let text = self.reply(request)?;
        Ok(ChatResponse { text, usage: Usage::default(), backend_id: self.id().into() })
    }
}

fn missing(key: &str) -> BackendError {
    BackendError::Precondition(format!("agent context lacks {key:?}"))
}

fn str_field<'a>(ctx: &'a Value, key: &str) -> Result<&'a str, BackendError> {
    ctx.get(key).and_then(Value::as_str).ok_or_else(|| missing(key))
}

fn field<T: serde::de::DeserializeOwned>(ctx: &Value, key: &str) -> Result<T, BackendError> {
    let v = ctx.get(key).ok_or_else(|| missing(key))?;
    serde_json::from_value(v.clone()).map_err(|_| missing(key))
}

fn pieces_field(ctx: &Value) -> Result<Vec<String>, BackendError> {
    let pieces = ctx.get("pieces").and_then(Value::as_array).ok_or_else(|| missing("pieces"))?;
    pieces
        .iter()
        .map(|p| {
            p.as_str()
                .or_else(|| p.get("text").and_then(Value::as_str))
                .map(str::to_string)
                .ok_or_else(|| missing("pieces"))
        })
        .collect()
}

// ---------------------------------------------------------------- stage 1

fn has_subject(text: &str) -> bool {
    let parsed = parse_lenient(text).scene;
    !parsed.objects.is_empty()
        || !parsed.exclusions.is_empty()
        || !parsed.background.is_empty()
        || !parsed.style.is_empty()
}

/// Split a prompt into pieces at `.`, `;`, `!` and `,`; pieces that name
/// nothing are folded into their neighbour. Every piece is an exact
/// substring of the prompt.
pub fn split_pieces(prompt: &str) -> Vec<String> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for (i, c) in prompt.char_indices() {
        if matches!(c, '.' | ';' | '!' | ',') {
            spans.push((start, i));
            start = i + c.len_utf8();
        }
    }
    spans.push((start, prompt.len()));
    let trimmed: Vec<(usize, usize)> = spans
        .into_iter()
        .filter_map(|(s, e)| {
            let piece = &prompt[s..e];
            let lead = piece.len() - piece.trim_start().len();
            let t = piece.trim();
            (!t.is_empty()).then(|| (s + lead, s + lead + t.len()))
        })
        .collect();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<usize> = None;
    for (s, e) in trimmed {
        let s = pending.take().unwrap_or(s);
        if has_subject(&prompt[s..e]) {
            merged.push((s, e));
        } else if let Some(last) = merged.last_mut() {
            last.1 = e;
        } else {
            pending = Some(s);
        }
    }
    if let Some(s) = pending {
        merged.push((s, prompt.trim_end().len()));
    }
    merged.into_iter().map(|(s, e)| prompt[s..e].to_string()).collect()
}

pub fn classify_piece(text: &str) -> &'static str {
    let parsed = parse_lenient(text).scene;
    if !parsed.relations.is_empty() {
        "relationship"
    } else if !parsed.objects.is_empty() || !parsed.exclusions.is_empty() {
        "object"
    } else if !parsed.background.is_empty() || !parsed.style.is_empty() {
        "background"
    } else {
        "object"
    }
}

fn decompose_reply(prompt: &str) -> String {
    let pieces: Vec<Value> = split_pieces(prompt)
        .into_iter()
        .map(|p| json!({"text": p, "kind": classify_piece(&p)}))
        .collect();
    json!({ "pieces": pieces }).to_string()
}

fn questions_reply(pieces: &[String]) -> String {
    use super::render::constraints;
    use super::vqa::question_for;
    let mut seen: Vec<String> = Vec::new();
    let mut out: Vec<Value> = Vec::new();
    for (target, piece) in pieces.iter().enumerate() {
        let parsed = parse_lenient(piece).scene;
        let mut own: Vec<(Aspect, String)> = constraints(&parsed)
            .iter()
            .filter_map(|c| question_for(c).map(|q| (c.aspect(), q)))
            .collect();
        let fresh: Vec<(Aspect, String)> =
            own.iter().filter(|(_, q)| !seen.contains(q)).cloned().collect();
        if !fresh.is_empty() {
            own = fresh;
        } else {
            own.truncate(1);
        }
        for (aspect, q) in own {
            seen.push(q.clone());
            out.push(json!({"target": target, "aspect": aspect.as_str(), "question": q}));
        }
    }
    json!({ "questions": out }).to_string()
}

fn integrate_reply(vqa: &[ErrorRecord], caption: &[ErrorRecord]) -> String {
    let mut groups: Vec<(Aspect, String, Vec<String>, String)> = Vec::new();
    let inputs = vqa
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("vqa:{i}"), r))
        .chain(caption.iter().enumerate().map(|(i, r)| (format!("caption:{i}"), r)));
    for (source, record) in inputs {
        let key = record.subject().unwrap_or_else(|| alnum_key(&record.explanation));
        match groups.iter_mut().find(|(a, k, _, _)| *a == record.category && *k == key) {
            Some(group) => group.2.push(source),
            None => groups.push((record.category, key, vec![source], record.explanation.clone())),
        }
    }
    let errors: Vec<Value> = groups
        .into_iter()
        .map(|(category, _, sources, explanation)| {
            json!({
                "category": category.as_str(),
                "explanation": explanation,
                "severity": category.default_severity(),
                "sources": sources,
            })
        })
        .collect();
    json!({ "errors": errors, "rejected": [] }).to_string()
}

/// Content words with nouns reduced to their singular form.
fn keywords(text: &str) -> Vec<String> {
    content_words(text)
        .into_iter()
        .map(|w| lexicon::singular(&w).map_or(w, str::to_string))
        .collect()
}

/// Index of the piece sharing the most distinct keywords with `text`,
/// lowest index on ties.
pub fn best_overlap(text: &str, pieces: &[String]) -> (usize, usize) {
    let mut words = keywords(text);
    words.sort();
    words.dedup();
    let mut best = (0, 0);
    for (i, piece) in pieces.iter().enumerate() {
        let piece_words = keywords(piece);
        let overlap = words.iter().filter(|w| piece_words.contains(w)).count();
        if overlap > best.1 {
            best = (i, overlap);
        }
    }
    best
}

fn map_reply(errors: &[ErrorRecord], pieces: &[String]) -> String {
    let mappings: Vec<Value> = errors
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (sentence, overlap) = best_overlap(&e.explanation, pieces);
            json!({
                "error": i,
                "sentence": sentence,
                "rationale": format!("{overlap} shared keyword(s) with piece {sentence}"),
            })
        })
        .collect();
    json!({ "mappings": mappings }).to_string()
}

// ---------------------------------------------------------------- stage 2

/// What a refinement targets, recovered from the error and the sentence.
#[derive(Debug, Clone, PartialEq)]
enum Focus {
    Count { noun: String, count: u32 },
    Exists { noun: String },
    Attribute { noun: String, attr: AttrKind, value: String },
    Relation { subject: String, predicate: String, object: String },
    Excluded { noun: String },
    Background { value: String },
    Style { value: String },
    Clutter,
    Unknown,
}

fn expected_value(explanation: &str) -> Option<String> {
    let rest = explanation.rsplit("expected ").next()?;
    tokens(rest).into_iter().next()
}

fn focus_of(sentence: &str, category: Aspect, explanation: &str) -> Focus {
    let parsed = parse_lenient(sentence).scene;
    let subject = error_subject(explanation);
    let noun_in_sentence = subject.as_deref().and_then(|s| parsed.object(s));
    let lowered = explanation.to_lowercase();
    match category {
        Aspect::Number => {
            let Some(noun) = subject.clone() else { return Focus::Unknown };
            let count = noun_in_sentence
                .map(|o| o.count)
                .filter(|c| *c >= 2)
                .or_else(|| expected_value(explanation).and_then(|v| lexicon::count_value(&v)));
            match count {
                Some(count) => Focus::Count { noun, count },
                None => Focus::Unknown,
            }
        }
        Aspect::Existence => {
            if lowered.contains("unrequested") {
                Focus::Clutter
            } else if lowered.contains("free of")
                || lowered.contains("exclude")
                || lowered.contains("expected none")
            {
                match subject {
                    Some(noun) => Focus::Excluded { noun },
                    None => Focus::Unknown,
                }
            } else {
                match subject {
                    Some(noun) => Focus::Exists { noun },
                    None => Focus::Unknown,
                }
            }
        }
        Aspect::Color | Aspect::Texture | Aspect::State | Aspect::Shape => {
            let attr = match category {
                Aspect::Color => AttrKind::Color,
                Aspect::Texture => AttrKind::Texture,
                Aspect::State => AttrKind::State,
                _ => AttrKind::Shape,
            };
            let Some(noun) = subject.clone() else { return Focus::Unknown };
            let value = noun_in_sentence
                .and_then(|o| o.attribute(attr).map(str::to_string))
                .or_else(|| expected_value(explanation));
            match value {
                Some(value) => Focus::Attribute { noun, attr, value },
                None => Focus::Unknown,
            }
        }
        Aspect::Relation | Aspect::Position => {
            let rel = parsed.relations.iter().find(|r| {
                subject.as_deref().is_none_or(|s| parsed.objects[r.subject].noun == s)
            });
            match rel {
                Some(r) => Focus::Relation {
                    subject: parsed.objects[r.subject].noun.clone(),
                    predicate: r.predicate.clone(),
                    object: parsed.objects[r.object].noun.clone(),
                },
                None => Focus::Unknown,
            }
        }
        Aspect::Background => {
            if parsed.background.is_empty() {
                Focus::Unknown
            } else {
                Focus::Background { value: parsed.background.clone() }
            }
        }
        Aspect::Style => {
            if parsed.style.is_empty() {
                Focus::Unknown
            } else {
                Focus::Style { value: parsed.style.clone() }
            }
        }
    }
}

/// A sentence being edited word by word.
struct Edit {
    words: Vec<String>,
    tail: String,
}

fn bare(word: &str) -> String {
    alnum_key(word)
}

impl Edit {
    fn new(sentence: &str) -> Self {
        let trimmed = sentence.trim_end();
        let body = trimmed.trim_end_matches(['.', '!', ';']);
        Self {
            words: body.split_whitespace().map(str::to_string).collect(),
            tail: trimmed[body.len()..].to_string(),
        }
    }

    fn position(&self, pred: impl Fn(&str) -> bool) -> Option<usize> {
        self.words.iter().position(|w| pred(&bare(w)))
    }

    fn has(&self, word: &str) -> bool {
        self.words.iter().any(|w| bare(w) == word)
    }

    /// Insert `word` before the first word matching `pred`, unless the
    /// preceding word already is `word`.
    fn insert_before(&mut self, pred: impl Fn(&str) -> bool, word: &str) -> bool {
        match self.position(pred) {
            Some(i) if i > 0 && bare(&self.words[i - 1]) == word => false,
            Some(i) => {
                self.words.insert(i, word.to_string());
                true
            }
            None => false,
        }
    }

    fn append(&mut self, phrase: &str) {
        if let Some(last) = self.words.last_mut() {
            last.push(',');
        }
        self.words.extend(phrase.split_whitespace().map(str::to_string));
    }

    fn emphasize(&mut self, adverb: &str) {
        if let Some(first) = self.words.first_mut() {
            let mut chars = first.chars();
            let lower_second = first.chars().nth(1).is_some_and(char::is_lowercase);
            if let (Some(c), true) = (chars.next(), lower_second) {
                *first = c.to_lowercase().collect::<String>() + chars.as_str();
            }
        }
        let mut capitalized = adverb[..1].to_uppercase();
        capitalized.push_str(&adverb[1..]);
        capitalized.push(',');
        self.words.insert(0, capitalized);
    }

    fn finish(self) -> String {
        self.words.join(" ") + &self.tail
    }
}

fn is_noun_form(noun: &str) -> impl Fn(&str) -> bool + '_ {
    move |w| noun_forms(noun).contains(&w)
}

/// Apply mitigation edit `k` (0..3) for `focus`. Returns whether the
/// sentence changed.
fn apply_feature(edit: &mut Edit, focus: &Focus, k: usize, adverb: &str, pick: u64) -> bool {
    let choose = |list: &[&str]| list[(pick % list.len() as u64) as usize].to_string();
    match (focus, k) {
        (Focus::Count { count, .. }, 0) => {
            if edit.has("exactly") || edit.has("precisely") {
                return false;
            }
            let c = *count;
            edit.insert_before(|w| lexicon::count_value(w) == Some(c) && w != "a" && w != "an", "exactly")
        }
        (Focus::Count { noun, count }, 1) => {
            edit.append(&format!("{} {} in total", count_word(*count), plural(noun)));
            true
        }
        (Focus::Exists { noun }, 0) => edit.insert_before(is_noun_form(noun), &choose(EXIST_WORDS)),
        (Focus::Exists { noun }, 1) => {
            edit.append(&format!("the {noun} in full view"));
            true
        }
        (Focus::Attribute { attr, value, .. }, 0) => {
            let words = match attr {
                AttrKind::Color => COLOR_WORDS,
                AttrKind::Texture => TEXTURE_WORDS,
                AttrKind::State => STATE_WORDS,
                AttrKind::Shape => SHAPE_WORDS,
            };
            edit.insert_before(|w| w == value, &choose(words))
        }
        (Focus::Attribute { noun, value, .. }, 1) => {
            edit.append(&format!("the {noun} is {value}"));
            true
        }
        (Focus::Relation { predicate, .. }, 0) => {
            let first = predicate.split(' ').next().unwrap_or(predicate).to_string();
            edit.insert_before(|w| w == first, "directly")
        }
        (Focus::Relation { subject, predicate, object }, 1) => {
            edit.append(&format!("the {subject} {predicate} the {object}"));
            true
        }
        (Focus::Excluded { noun }, 0) => {
            if edit.insert_before(|w| lexicon::NEGATIONS.contains(&w), "absolutely") {
                true
            } else {
                edit.append(&format!("absolutely no {noun}"));
                true
            }
        }
        (Focus::Excluded { noun }, 1) => {
            edit.append(&format!("no {noun} anywhere"));
            true
        }
        (Focus::Excluded { noun }, 2) => {
            edit.append(&format!("free of any {noun}"));
            true
        }
        (Focus::Background { value }, 0) => edit.insert_before(|w| w == value, "detailed"),
        (Focus::Background { value }, 1) => {
            edit.append(&format!("{} background", with_article(value)));
            true
        }
        (Focus::Style { value }, 0) => edit.insert_before(|w| w == value, "strictly"),
        (Focus::Style { value }, 1) => {
            edit.append(&format!("{value} style"));
            true
        }
        (Focus::Clutter, 0) => {
            edit.append("and nothing else");
            true
        }
        (Focus::Clutter, 1) => edit.insert_before(|w| lexicon::singular(w).is_some(), "only"),
        (_, _) => {
            if edit.words.iter().any(|w| lexicon::EMPHASIS.contains(&bare(w).as_str())) {
                return false;
            }
            edit.emphasize(adverb);
            true
        }
    }
}

fn focus_noun(focus: &Focus) -> Option<&str> {
    match focus {
        Focus::Count { noun, .. }
        | Focus::Exists { noun }
        | Focus::Attribute { noun, .. }
        | Focus::Excluded { noun } => Some(noun),
        Focus::Relation { subject, .. } => Some(subject),
        _ => None,
    }
}

/// Inclusion probability of each mitigation edit after `attempt` rounds.
pub fn feature_probability(attempt: usize) -> f64 {
    (0.45 + 0.15 * attempt as f64).min(0.85)
}

#[allow(clippy::too_many_arguments)]
fn refine_one(
    sentence: &str,
    focus: &Focus,
    attempt: usize,
    adverbs: &[&str],
    seed: u64,
    iteration: u64,
    j: u64,
    salt: u64,
) -> String {
    let h = |tag: &str, k: u64| {
        stable_hash(&[
            &seed.to_le_bytes(),
            &iteration.to_le_bytes(),
            &j.to_le_bytes(),
            &salt.to_le_bytes(),
            tag.as_bytes(),
            &k.to_le_bytes(),
        ])
    };
    let p = feature_probability(attempt);
    let mut chosen: Vec<usize> =
        (0..3).filter(|k| unit_interval(h("feature", *k as u64)) < p).collect();
    if chosen.is_empty() {
        chosen.push((h("fallback", 0) % 3) as usize);
    }
    let adverb = adverbs[(h("adverb", 0) % adverbs.len() as u64) as usize];
    let mut edit = Edit::new(sentence);
    let mut changed = false;
    if unit_interval(h("filler", 0)) < 0.5 {
        let filler = lexicon::FILLERS[(h("filler", 1) % lexicon::FILLERS.len() as u64) as usize];
        let target = focus_noun(focus).map(str::to_string);
        changed |= match target {
            Some(noun) => edit.insert_before(is_noun_form(&noun), filler),
            None => edit.insert_before(|w| lexicon::singular(w).is_some(), filler),
        };
    }
    for k in chosen {
        changed |= apply_feature(&mut edit, focus, k, adverb, h("pick", k as u64));
    }
    let mut out = edit.finish();
    if !changed || out == sentence {
        let mut edit = Edit::new(&out);
        edit.emphasize(adverb);
        out = edit.finish();
    }
    out
}

fn refine_reply(ctx: &Value) -> Result<String, BackendError> {
    let sentence = str_field(ctx, "sentence")?;
    let error = ctx.get("error").ok_or_else(|| missing("error"))?;
    let category: Aspect = error
        .get("category")
        .and_then(Value::as_str)
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| missing("error.category"))?;
    let explanation = error.get("explanation").and_then(Value::as_str).unwrap_or_default();
    let n = ctx.get("n").and_then(Value::as_u64).ok_or_else(|| missing("n"))?;
    let attempt = ctx.get("attempt").and_then(Value::as_u64).unwrap_or(0) as usize;
    let seed = ctx.get("seed").and_then(Value::as_u64).unwrap_or(0);
    let iteration = ctx.get("iteration").and_then(Value::as_u64).unwrap_or(0);
    let salt = ctx.get("reask").and_then(Value::as_u64).unwrap_or(0);
    let tried: Vec<String> = ctx
        .get("memory_prompts")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).flat_map(tokens).collect())
        .unwrap_or_default();
    let fresh: Vec<&str> = lexicon::EMPHASIS
        .iter()
        .copied()
        .filter(|a| !tried.iter().any(|t| t == a))
        .collect();
    let adverbs = if fresh.is_empty() { lexicon::EMPHASIS.to_vec() } else { fresh };
    let focus = focus_of(sentence, category, explanation);
    let candidates: Vec<String> = (0..n)
        .map(|j| refine_one(sentence, &focus, attempt, &adverbs, seed, iteration, j, salt))
        .collect();
    Ok(json!({ "candidates": candidates }).to_string())
}

/// Replace the first occurrence of `original` in `prompt` by `modified`.
pub fn merge_text(prompt: &str, original: &str, modified: &str) -> String {
    if let Some(at) = prompt.find(original) {
        return format!("{}{}{}", &prompt[..at], modified, &prompt[at + original.len()..]);
    }
    let lower = prompt.to_lowercase();
    if let Some(at) = lower.find(&original.to_lowercase()) {
        return format!("{}{}{}", &prompt[..at], modified, &prompt[at + original.len()..]);
    }
    format!("{}. {}", prompt.trim_end().trim_end_matches('.'), modified)
}

/// Rating rule for one rubric item: YES is 5; a wrong count loses one point
/// per unit of difference (at most 3), a missing object or unwanted one is
/// 1, any other mismatch is 2.
pub fn rate_item(aspect: Aspect, yes: bool, explanation: &str) -> u8 {
    if yes {
        return 5;
    }
    match aspect {
        Aspect::Existence => 1,
        Aspect::Number => {
            let nums: Vec<i64> = tokens(explanation).iter().filter_map(|t| t.parse().ok()).collect();
            match nums.as_slice() {
                [0, ..] => 1,
                [observed, expected, ..] => 5 - (observed - expected).abs().min(3) as u8,
                _ => 2,
            }
        }
        _ => 2,
    }
}

fn rate_reply(ctx: &Value, pinned: Option<u8>) -> Result<String, BackendError> {
    let questions: Vec<QuestionItem> = field(ctx, "questions")?;
    let answers = ctx.get("answers").and_then(Value::as_array).ok_or_else(|| missing("answers"))?;
    let ratings: Vec<Value> = questions
        .iter()
        .map(|q| {
            let answer = answers.iter().find(|a| a.get("id").and_then(Value::as_u64) == Some(q.id as u64));
            let label = answer.and_then(|a| a.get("label")).and_then(Value::as_str).unwrap_or("NO");
            let explanation =
                answer.and_then(|a| a.get("explanation")).and_then(Value::as_str).unwrap_or("");
            let yes = label.eq_ignore_ascii_case("yes");
            let rating = pinned.unwrap_or_else(|| rate_item(q.aspect, yes, explanation));
            let note = if yes { "matches the prompt".to_string() } else { explanation.to_string() };
            json!({"id": q.id, "rating": rating, "note": note})
        })
        .collect();
    Ok(json!({ "ratings": ratings }).to_string())
}

fn summarize_reply(ctx: &Value) -> String {
    let sampled = ctx.get("sampled").and_then(Value::as_array).cloned().unwrap_or_default();
    let mut best = f64::MIN;
    let mut findings: Vec<String> = Vec::new();
    for s in &sampled {
        best = best.max(s.get("score").and_then(Value::as_f64).unwrap_or(0.0));
        for f in s.get("findings").and_then(Value::as_array).into_iter().flatten() {
            if let Some(f) = f.as_str() {
                if !findings.iter().any(|x| x == f) {
                    findings.push(f.to_string());
                }
            }
        }
    }
    if findings.is_empty() {
        format!("Best sampled score {best:.2}. All rubric items were satisfied.")
    } else {
        format!("Best sampled score {best:.2}. Remaining issues: {}.", findings.join("; "))
    }
}

/// Error-agnostic rewrite: one neutral or emphasis word at a random spot.
fn rewrite_reply(ctx: &Value) -> Result<String, BackendError> {
    let sentence = str_field(ctx, "sentence")?;
    let seed = ctx.get("seed").and_then(Value::as_u64).unwrap_or(0);
    let iteration = ctx.get("iteration").and_then(Value::as_u64).unwrap_or(0);
    let h = |tag: &str| stable_hash(&[&seed.to_le_bytes(), &iteration.to_le_bytes(), tag.as_bytes()]);
    let vocab: Vec<&str> = lexicon::FILLERS.iter().chain(lexicon::EMPHASIS).copied().collect();
    let word = vocab[(h("word") % vocab.len() as u64) as usize];
    let mut edit = Edit::new(sentence);
    let at = (h("position") % (edit.words.len() as u64 + 1)) as usize;
    edit.words.insert(at, word.to_string());
    Ok(json!({ "candidates": [edit.finish()] }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_analysis::Branch;

    #[test]
    fn pieces_are_exact_substrings() {
        let prompt = "two green chairs next to a table, without any dog, with a kitchen background, in watercolor style";
        let pieces = split_pieces(prompt);
        assert_eq!(pieces.len(), 4);
        for p in &pieces {
            assert!(prompt.contains(p.as_str()));
        }
        assert_eq!(split_pieces("a cat on a mat. the mat is blue"), vec!["a cat on a mat", "the mat is blue"]);
        assert_eq!(classify_piece("a cat on a mat"), "relationship");
        assert_eq!(classify_piece("the mat is blue"), "object");
        assert_eq!(classify_piece("with a kitchen background"), "background");
    }

    #[test]
    fn subjectless_segments_fold_into_neighbours() {
        assert_eq!(split_pieces("a red apple, shiny and lovely"), vec!["a red apple, shiny and lovely"]);
        assert_eq!(split_pieces("lovely, a red apple"), vec!["lovely, a red apple"]);
    }

    #[test]
    fn baozi_questions_include_existence_and_number() {
        let reply = questions_reply(&["six baozi in a bamboo steamer".to_string()]);
        assert!(reply.contains("Is there a baozi?"));
        assert!(reply.contains("Are there six baozi?"));
    }

    #[test]
    fn count_refinement_matches_reference_phrasing() {
        let focus = focus_of("six baozi in a bamboo steamer", Aspect::Number, "Are there six baozi? observed 4, expected 6");
        assert_eq!(focus, Focus::Count { noun: "baozi".into(), count: 6 });
        let mut edit = Edit::new("six baozi in a bamboo steamer");
        assert!(apply_feature(&mut edit, &focus, 0, "remarkably", 0));
        assert!(apply_feature(&mut edit, &focus, 1, "remarkably", 0));
        assert!(apply_feature(&mut edit, &focus, 2, "remarkably", 0));
        assert_eq!(
            edit.finish(),
            "Remarkably, exactly six baozi in a bamboo steamer, six baozi in total"
        );
    }

    #[test]
    fn refinements_differ_from_the_original() {
        for (category, explanation) in [
            (Aspect::Number, "Are there six baozi? observed 4, expected 6"),
            (Aspect::Texture, "Is the steamer bamboo in texture? observed no particular texture, expected bamboo"),
            (Aspect::Style, "nothing useful"),
        ] {
            let focus = focus_of("six baozi in a bamboo steamer", category, explanation);
            for j in 0..20 {
                let out = refine_one("six baozi in a bamboo steamer", &focus, 0, lexicon::EMPHASIS, 1, 1, j, 0);
                assert_ne!(out, "six baozi in a bamboo steamer");
            }
        }
    }

    #[test]
    fn merge_replaces_the_mapped_piece() {
        assert_eq!(merge_text("A. B.", "B.", "B'."), "A. B'.");
        assert_eq!(merge_text("A. B.", "B.", "B."), "A. B.");
    }

    #[test]
    fn rating_rule() {
        assert_eq!(rate_item(Aspect::Number, false, "observed 3, expected 6"), 2);
        assert_eq!(rate_item(Aspect::Number, false, "observed 5, expected 6"), 4);
        assert_eq!(rate_item(Aspect::Number, false, "observed 0, expected 6"), 1);
        assert_eq!(rate_item(Aspect::Color, false, "x"), 2);
        assert_eq!(rate_item(Aspect::Existence, false, "x"), 1);
        assert_eq!(rate_item(Aspect::Color, true, ""), 5);
    }

    #[test]
    fn integration_merges_by_category_and_subject() {
        let vqa = vec![ErrorRecord::new(Aspect::Number, "Are there six baozi? observed 3, expected 6", Branch::Vqa)];
        let cap = vec![
            ErrorRecord::new(Aspect::Number, "the image shows three baozi but the prompt asks for six", Branch::Caption),
            ErrorRecord::new(Aspect::Texture, "frosty texture on the boards is missing", Branch::Caption),
        ];
        let reply: Value = serde_json::from_str(&integrate_reply(&vqa, &cap)).unwrap();
        let errors = reply["errors"].as_array().unwrap();
        assert_eq!(errors.len(), 2);
        assert_eq!(errors[0]["sources"], json!(["vqa:0", "caption:0"]));
    }
}
