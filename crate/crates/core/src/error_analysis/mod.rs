//! Stage 1: decompose the prompt, generate coverage questions, detect
//! errors through a question-answering branch and a caption branch,
//! integrate both into one verified error set, and map every error back to
//! the prompt piece that caused it.

mod types;

pub use types::*;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::backends::{AgentRole, BackendError, ImageRef};
use crate::engine::{reask, AskError, Engine};
use crate::templates::TemplateError;
use crate::text::{content_words, normalize_ws, tokens};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("decomposition dropped content words: {}", missing.join(", "))]
    CoverageFailure { missing: Vec<String> },
    #[error("no question targets piece(s) {untargeted:?}")]
    IncompleteCoverage { untargeted: Vec<usize> },
    #[error("reply to question {question} has no YES/NO label: {reply:?}")]
    UnparseableLabel { question: usize, reply: String },
    #[error("error {error} could not be mapped to a piece: {reply}")]
    UnmappableError { error: usize, reply: String },
    #[error("reply does not follow the expected schema: {0}")]
    Schema(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl From<AskError> for AnalysisError {
    fn from(e: AskError) -> Self {
        match e {
            AskError::Backend(b) => AnalysisError::Backend(b),
            AskError::Template(t) => AnalysisError::Template(t),
        }
    }
}

/// Prompts longer than this are decomposed in sentence-aligned chunks.
pub const CHUNK_CHARS: usize = 1500;

fn schema(what: &str, reply: &Map<String, Value>) -> AnalysisError {
    AnalysisError::Schema(format!("{what} in {}", Value::Object(reply.clone())))
}

/// Split at sentence ends so that each chunk stays under `limit` characters
/// (a single overlong sentence becomes its own chunk).
pub fn sentence_chunks(text: &str, limit: usize) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut last_end = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?' | ';') {
            let end = i + c.len_utf8();
            if end - start > limit && last_end > start {
                chunks.push(text[start..last_end].trim());
                start = last_end;
            }
            last_end = end;
        }
    }
    if text.len() - start > limit && last_end > start && last_end < text.len() {
        chunks.push(text[start..last_end].trim());
        start = last_end;
    }
    chunks.push(text[start..].trim());
    chunks.retain(|c| !c.is_empty());
    chunks
}

/// Heuristic piece kind for replies that omit it.
pub fn guess_kind(text: &str) -> PieceKind {
    const BACKGROUND: &[&str] =
        &["background", "backdrop", "style", "setting", "scene", "atmosphere", "lighting"];
    const RELATIONAL: &[&str] = &[
        "in", "on", "inside", "beside", "next", "under", "behind", "above", "below", "left",
        "right", "near", "holding", "between", "atop", "beneath",
    ];
    let toks = tokens(text);
    let has_relation = toks.iter().any(|t| RELATIONAL.contains(&t.as_str()));
    if toks.iter().any(|t| BACKGROUND.contains(&t.as_str())) && !has_relation {
        PieceKind::Background
    } else if has_relation {
        PieceKind::Relationship
    } else {
        PieceKind::Object
    }
}

fn parse_kind(value: Option<&Value>, text: &str) -> PieceKind {
    match value.and_then(Value::as_str).map(str::to_lowercase).as_deref() {
        Some("object") | Some("objects") => PieceKind::Object,
        Some("relationship") | Some("relationships") | Some("relation") => PieceKind::Relationship,
        Some("background") => PieceKind::Background,
        _ => guess_kind(text),
    }
}

fn parse_pieces(reply: &Map<String, Value>) -> Result<Vec<(String, PieceKind)>, AnalysisError> {
    let items = reply.get("pieces").and_then(Value::as_array).ok_or_else(|| schema("no pieces array", reply))?;
    let mut out = Vec::new();
    for item in items {
        let (text, kind) = match item {
            Value::String(s) => (s.clone(), None),
            Value::Object(o) => (
                o.get("text").and_then(Value::as_str).unwrap_or_default().to_string(),
                o.get("kind"),
            ),
            _ => return Err(schema("piece is neither string nor object", reply)),
        };
        let text = text.trim().to_string();
        if !text.is_empty() {
            let kind = parse_kind(kind, &text);
            out.push((text, kind));
        }
    }
    Ok(out)
}

/// Content words of `source` missing from `pieces`.
pub fn missing_words(source: &str, pieces: &[String]) -> Vec<String> {
    let covered: Vec<String> = pieces.iter().flat_map(|p| content_words(p)).collect();
    let mut missing: Vec<String> =
        content_words(source).into_iter().filter(|w| !covered.contains(w)).collect();
    missing.dedup();
    missing
}

/// Split a prompt into meta-sentences classified as objects,
/// relationships or background.
pub fn decompose_prompt(prompt: &str, engine: &Engine) -> Result<Vec<MetaSentence>, AnalysisError> {
    if prompt.trim().is_empty() {
        return Err(AnalysisError::Precondition("prompt must be non-empty".into()));
    }
    let mut out = Vec::new();
    for chunk in sentence_chunks(prompt, CHUNK_CHARS) {
        let req = engine.request(AgentRole::Decompose, &[("prompt", chunk)], json!({"prompt": chunk}), &[])?;
        let mut pieces = parse_pieces(&engine.ask_json(&req)?)?;
        let mut texts: Vec<String> = pieces.iter().map(|p| p.0.clone()).collect();
        let missing = missing_words(chunk, &texts);
        if !missing.is_empty() {
            let repair = reask(
                &req,
                format!(
                    "Your pieces leave out these words of the prompt: {}. Every word must appear in some piece.",
                    missing.join(", ")
                ),
            );
            pieces = parse_pieces(&engine.ask_json(&repair)?)?;
            texts = pieces.iter().map(|p| p.0.clone()).collect();
            let missing = missing_words(chunk, &texts);
            if !missing.is_empty() {
                return Err(AnalysisError::CoverageFailure { missing });
            }
        }
        if pieces.is_empty() {
            return Err(AnalysisError::CoverageFailure { missing: content_words(chunk) });
        }
        out.extend(pieces);
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(index, (text, kind))| MetaSentence { index, text: normalize_ws(&text), kind })
        .collect())
}

fn numbered_pieces(pieces: &[MetaSentence]) -> String {
    pieces.iter().map(|p| format!("{}: {}", p.index, p.text)).collect::<Vec<_>>().join("\n")
}

fn parse_questions(reply: &Map<String, Value>, n_pieces: usize) -> Result<Vec<QuestionItem>, AnalysisError> {
    let items = reply
        .get("questions")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("no questions array", reply))?;
    let mut out = Vec::new();
    for item in items {
        let target = item.get("target").and_then(Value::as_u64).map(|t| t as usize);
        let aspect = item.get("aspect").and_then(Value::as_str).and_then(|a| a.parse::<Aspect>().ok());
        let text = item.get("question").and_then(Value::as_str).map(str::trim);
        match (target, aspect, text) {
            (Some(target), Some(aspect), Some(text)) if target < n_pieces && !text.is_empty() => {
                out.push(QuestionItem { id: out.len(), target, aspect, question_text: text.to_string() })
            }
            _ => tracing::warn!(?item, "dropping malformed question"),
        }
    }
    Ok(out)
}

fn untargeted(questions: &[QuestionItem], n: usize) -> Vec<usize> {
    (0..n).filter(|i| !questions.iter().any(|q| q.target == *i)).collect()
}

/// Yes/no questions covering every piece.
pub fn generate_questions(
    pieces: &[MetaSentence],
    engine: &Engine,
) -> Result<Vec<QuestionItem>, AnalysisError> {
    if pieces.is_empty() {
        return Err(AnalysisError::Precondition("no pieces to question".into()));
    }
    let listing = numbered_pieces(pieces);
    let texts: Vec<&str> = pieces.iter().map(|p| p.text.as_str()).collect();
    let req = engine.request(AgentRole::Questions, &[("pieces", &listing)], json!({"pieces": texts}), &[])?;
    let mut questions = parse_questions(&engine.ask_json(&req)?, pieces.len())?;
    let mut gaps = untargeted(&questions, pieces.len());
    if !gaps.is_empty() {
        let repair = reask(&req, format!("Pieces {gaps:?} have no question. Cover every piece."));
        questions = parse_questions(&engine.ask_json(&repair)?, pieces.len())?;
        gaps = untargeted(&questions, pieces.len());
        if !gaps.is_empty() {
            return Err(AnalysisError::IncompleteCoverage { untargeted: gaps });
        }
    }
    for p in pieces.iter().filter(|p| p.kind == PieceKind::Object) {
        if !questions.iter().any(|q| q.target == p.index && q.aspect == Aspect::Existence) {
            tracing::warn!(piece = p.index, "object piece has no existence question");
        }
    }
    Ok(questions)
}

/// First standalone YES/NO token of a reply, uppercase-normalized.
pub fn parse_label(reply: &str) -> Option<bool> {
    tokens(reply).into_iter().find_map(|t| match t.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    })
}

/// The reply text after its label, with leading punctuation removed.
fn after_label(reply: &str) -> String {
    let upper = reply.to_uppercase();
    let at = upper
        .match_indices("NO")
        .find(|(i, _)| {
            let before = upper[..*i].chars().last().is_none_or(|c| !c.is_alphanumeric());
            let after = upper[i + 2..].chars().next().is_none_or(|c| !c.is_alphanumeric());
            before && after
        })
        .map_or(0, |(i, _)| i + 2);
    reply[at..].trim_start_matches(|c: char| !c.is_alphanumeric()).trim().to_string()
}

/// Ask every question about the image; every NO becomes an error record.
pub fn answer_questions(
    image: &ImageRef,
    questions: &[QuestionItem],
    engine: &Engine,
) -> Result<ErrorSet, AnalysisError> {
    if questions.is_empty() {
        return Err(AnalysisError::Precondition("no questions to answer".into()));
    }
    let answers: Vec<Result<(usize, Option<String>), AnalysisError>> = questions
        .par_iter()
        .map(|q| {
            let req = engine.request(
                AgentRole::Vqa,
                &[("question", &q.question_text)],
                json!({"question": q}),
                &[image],
            )?;
            let reply = engine.ask(&req)?;
            match parse_label(&reply) {
                Some(true) => Ok((q.id, None)),
                Some(false) => Ok((q.id, Some(after_label(&reply)))),
                None => Err(AnalysisError::UnparseableLabel { question: q.id, reply }),
            }
        })
        .collect();
    let mut set = ErrorSet::new(Branch::Vqa);
    let mut sorted: Vec<&QuestionItem> = questions.iter().collect();
    sorted.sort_by_key(|q| q.id);
    let mut by_id = std::collections::BTreeMap::new();
    for a in answers {
        let (id, explanation) = a?;
        by_id.insert(id, explanation);
    }
    for q in sorted {
        if let Some(Some(detail)) = by_id.get(&q.id) {
            let explanation = if detail.is_empty() {
                q.question_text.clone()
            } else {
                format!("{} {}", q.question_text, detail)
            };
            set.insert(ErrorRecord::new(q.aspect, explanation, Branch::Vqa));
        }
    }
    Ok(set)
}

/// Result of the caption branch.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionAnalysis {
    pub caption: String,
    pub errors: ErrorSet,
}

fn parse_error_list(reply: &Map<String, Value>, branch: Branch) -> Result<ErrorSet, AnalysisError> {
    let items = reply.get("errors").and_then(Value::as_array).ok_or_else(|| schema("no errors array", reply))?;
    let mut set = ErrorSet::new(branch);
    for item in items {
        let category = item.get("category").and_then(Value::as_str).and_then(|c| c.parse::<Aspect>().ok());
        let explanation = item.get("explanation").and_then(Value::as_str).map(str::trim);
        match (category, explanation) {
            (Some(c), Some(e)) if !e.is_empty() => {
                set.insert(ErrorRecord::new(c, e, branch));
            }
            _ => tracing::warn!(?item, "dropping malformed error record"),
        }
    }
    Ok(set)
}

/// Caption the image, then compare the caption with the prompt.
pub fn caption_and_compare(
    image: &ImageRef,
    prompt: &str,
    engine: &Engine,
) -> Result<CaptionAnalysis, AnalysisError> {
    if prompt.trim().is_empty() {
        return Err(AnalysisError::Precondition("prompt must be non-empty".into()));
    }
    let req = engine.request(AgentRole::Caption, &[], json!({}), &[image])?;
    let caption = engine.ask(&req)?.trim().to_string();
    let req = engine.request(
        AgentRole::CompareCaption,
        &[("prompt", prompt), ("caption", &caption)],
        json!({"prompt": prompt, "caption": caption}),
        &[],
    )?;
    let errors = parse_error_list(&engine.ask_json(&req)?, Branch::Caption)?;
    Ok(CaptionAnalysis { caption, errors })
}

/// Outcome of integration, with its audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub errors: ErrorSet,
    pub rejected: Vec<Rejection>,
    /// Input labels the agent neither kept nor rejected; re-added verbatim.
    pub restored: Vec<String>,
}

fn labelled(set: &ErrorSet, prefix: &str) -> String {
    if set.is_empty() {
        return "(none)".into();
    }
    set.records
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{prefix}:{i} [{}] {}", r.category, r.explanation))
        .collect::<Vec<_>>()
        .join("\n")
}

fn source_record<'a>(label: &str, e_vqa: &'a ErrorSet, e_c: &'a ErrorSet) -> Option<&'a ErrorRecord> {
    let (prefix, idx) = label.split_once(':')?;
    let idx: usize = idx.trim().parse().ok()?;
    match prefix.trim() {
        "vqa" => e_vqa.records.get(idx),
        "caption" => e_c.records.get(idx),
        _ => None,
    }
}

fn add_merging(set: &mut ErrorSet, record: ErrorRecord) {
    let key = record.dedup_key();
    if let Some(existing) = set.records.iter_mut().find(|r| r.dedup_key() == key) {
        for s in record.sources {
            if !existing.sources.contains(&s) {
                existing.sources.push(s);
            }
        }
        existing.severity = existing.severity.max(record.severity);
    } else {
        set.insert(record);
    }
}

/// Verified union of both branches.
pub fn integrate_errors(
    image: &ImageRef,
    prompt: &str,
    e_vqa: &ErrorSet,
    e_c: &ErrorSet,
    engine: &Engine,
) -> Result<Integration, AnalysisError> {
    if e_vqa.branch != Branch::Vqa || e_c.branch != Branch::Caption {
        return Err(AnalysisError::Precondition("integration needs one VQA and one caption set".into()));
    }
    let mut out = Integration { errors: ErrorSet::new(Branch::Integrated), rejected: vec![], restored: vec![] };
    if e_vqa.is_empty() && e_c.is_empty() {
        return Ok(out);
    }
    let (vqa_text, cap_text) = (labelled(e_vqa, "vqa"), labelled(e_c, "caption"));
    let req = engine.request(
        AgentRole::Integrate,
        &[("prompt", prompt), ("errors", &vqa_text), ("findings", &cap_text)],
        json!({"prompt": prompt, "vqa": e_vqa.records, "caption": e_c.records}),
        &[image],
    )?;
    let reply = engine.ask_json(&req)?;
    let items = reply.get("errors").and_then(Value::as_array).ok_or_else(|| schema("no errors array", &reply))?;
    let mut accounted: Vec<String> = Vec::new();
    for item in items {
        let sources: Vec<String> = item
            .get("sources")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(|s| s.trim().to_string()).collect())
            .unwrap_or_default();
        let valid: Vec<String> =
            sources.into_iter().filter(|s| source_record(s, e_vqa, e_c).is_some()).collect();
        let originals: Vec<&ErrorRecord> =
            valid.iter().filter_map(|s| source_record(s, e_vqa, e_c)).collect();
        let stated = item.get("category").and_then(Value::as_str).and_then(|c| c.parse::<Aspect>().ok());
        let category = match (stated, originals.first()) {
            (Some(c), None) => c,
            (Some(c), Some(_)) if originals.iter().any(|o| o.category == c) => c,
            (_, Some(first)) => first.category,
            (None, None) => {
                tracing::warn!(?item, "integrated record without category or sources dropped");
                continue;
            }
        };
        let explanation = item
            .get("explanation")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|e| !e.is_empty())
            .map(str::to_string)
            .or_else(|| originals.first().map(|o| o.explanation.clone()));
        let Some(explanation) = explanation else { continue };
        let severity = item
            .get("severity")
            .and_then(Value::as_u64)
            .filter(|s| (1..=3).contains(s))
            .map_or(2, |s| s as u8);
        let mut record = ErrorRecord::new(category, explanation, Branch::Integrated);
        record.severity = severity;
        record.sources = if valid.is_empty() {
            tracing::info!(explanation = %record.explanation, "verifier added an error");
            vec!["verifier".to_string()]
        } else {
            valid.clone()
        };
        accounted.extend(valid);
        add_merging(&mut out.errors, record);
    }
    for r in reply.get("rejected").and_then(Value::as_array).into_iter().flatten() {
        let source = r.get("source").and_then(Value::as_str).unwrap_or_default().trim().to_string();
        if source_record(&source, e_vqa, e_c).is_some() {
            let reason = r.get("reason").and_then(Value::as_str).unwrap_or("no reason given").to_string();
            tracing::info!(%source, %reason, "integration rejected a finding");
            accounted.push(source.clone());
            out.rejected.push(Rejection { source, reason });
        }
    }
    let labels = (0..e_vqa.len())
        .map(|i| format!("vqa:{i}"))
        .chain((0..e_c.len()).map(|i| format!("caption:{i}")));
    for label in labels {
        if accounted.contains(&label) {
            continue;
        }
        let original = source_record(&label, e_vqa, e_c).expect("label from input sets");
        tracing::warn!(%label, "integration silently dropped a finding; restoring it");
        let mut record = ErrorRecord::new(original.category, original.explanation.clone(), Branch::Integrated);
        record.sources = vec![label.clone()];
        out.restored.push(label);
        add_merging(&mut out.errors, record);
    }
    Ok(out)
}

fn parse_index(v: &Value) -> Option<usize> {
    v.as_u64().map(|n| n as usize).or_else(|| {
        let s = v.as_str()?;
        let digits: String = s.chars().skip_while(|c| !c.is_ascii_digit()).take_while(char::is_ascii_digit).collect();
        digits.parse().ok()
    })
}

fn parse_mappings(
    reply: &Map<String, Value>,
    n_errors: usize,
    n_pieces: usize,
) -> Result<Vec<ErrorMapping>, (usize, String)> {
    let items = reply.get("mappings").and_then(Value::as_array).cloned().unwrap_or_default();
    let mut out: Vec<Option<ErrorMapping>> = vec![None; n_errors];
    for item in &items {
        let error = item.get("error").and_then(parse_index);
        let sentence = item.get("sentence").and_then(parse_index);
        let rationale = item.get("rationale").and_then(Value::as_str).unwrap_or_default().to_string();
        match (error, sentence) {
            (Some(e), Some(s)) if e < n_errors && s < n_pieces => {
                if out[e].is_none() {
                    out[e] = Some(ErrorMapping { error: e, sentence: s, rationale });
                }
            }
            (Some(e), _) if e < n_errors => return Err((e, item.to_string())),
            _ => {}
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, m)| m.ok_or_else(|| (i, Value::Object(reply.clone()).to_string())))
        .collect()
}

/// Attribute every integrated error to one piece; sets `mapped_sentence`.
pub fn map_errors(
    errors: &mut ErrorSet,
    pieces: &[MetaSentence],
    engine: &Engine,
) -> Result<Vec<ErrorMapping>, AnalysisError> {
    if errors.is_empty() {
        return Err(AnalysisError::Precondition("no errors to map".into()));
    }
    let listing = numbered_pieces(pieces);
    let error_listing = errors
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{i}: [{}] {}", r.category, r.explanation))
        .collect::<Vec<_>>()
        .join("\n");
    let texts: Vec<&str> = pieces.iter().map(|p| p.text.as_str()).collect();
    let req = engine.request(
        AgentRole::MapErrors,
        &[("pieces", &listing), ("errors", &error_listing)],
        json!({"errors": errors.records, "pieces": texts}),
        &[],
    )?;
    let mappings = match parse_mappings(&engine.ask_json(&req)?, errors.len(), pieces.len()) {
        Ok(m) => m,
        Err((error, _)) => {
            let repair = reask(
                &req,
                format!(
                    "Error {error} was not mapped to a valid piece. Use piece numbers 0 to {}.",
                    pieces.len() - 1
                ),
            );
            parse_mappings(&engine.ask_json(&repair)?, errors.len(), pieces.len())
                .map_err(|(error, reply)| AnalysisError::UnmappableError { error, reply })?
        }
    };
    for m in &mappings {
        errors.records[m.error].mapped_sentence = Some(m.sentence);
    }
    Ok(mappings)
}

/// One fresh error analysis of an image: both branches plus integration.
pub fn detect_errors(
    image: &ImageRef,
    prompt: &str,
    questions: &[QuestionItem],
    engine: &Engine,
) -> Result<(ErrorSet, CaptionAnalysis, Integration), AnalysisError> {
    let (vqa, caption) = rayon::join(
        || answer_questions(image, questions, engine),
        || caption_and_compare(image, prompt, engine),
    );
    let (vqa, caption) = (vqa?, caption?);
    let integration = integrate_errors(image, prompt, &vqa, &caption.errors, engine)?;
    Ok((vqa, caption, integration))
}

/// Run all of Stage 1 on a prompt.
pub fn analyze(prompt: &str, engine: &Engine, seed: u64) -> Result<RunMetadata, AnalysisError> {
    let pieces = decompose_prompt(prompt, engine)?;
    let questions = generate_questions(&pieces, engine)?;
    let image = engine.backends.generate_image(prompt, seed)?;
    let (vqa_errors, caption, integration) = detect_errors(&image, prompt, &questions, engine)?;
    let mut error_set = integration.errors;
    let mappings = if error_set.is_empty() {
        Vec::new()
    } else {
        map_errors(&mut error_set, &pieces, engine)?
    };
    Ok(RunMetadata {
        original_prompt: prompt.to_string(),
        original_image: image,
        pieces,
        questions,
        vqa_errors,
        caption_errors: caption.errors,
        caption: caption.caption,
        error_set,
        rejected: integration.rejected,
        mappings,
        history: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_respect_sentence_boundaries() {
        let text = "One two. Three four. Five six.";
        assert_eq!(sentence_chunks(text, 100), vec![text]);
        assert_eq!(sentence_chunks(text, 10), vec!["One two.", "Three four.", "Five six."]);
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_label("YES"), Some(true));
        assert_eq!(parse_label("no. observed 3, expected 6"), Some(false));
        assert_eq!(parse_label("Answer: Yes, clearly"), Some(true));
        assert_eq!(parse_label("maybe"), None);
        assert_eq!(parse_label("nothing here"), None);
        assert_eq!(after_label("NO. observed 3, expected 6"), "observed 3, expected 6");
    }

    #[test]
    fn kind_heuristic() {
        assert_eq!(guess_kind("a cat on a mat"), PieceKind::Relationship);
        assert_eq!(guess_kind("the mat is blue"), PieceKind::Object);
        assert_eq!(guess_kind("a snowy background"), PieceKind::Background);
    }

    #[test]
    fn missing_word_detection() {
        let pieces = vec!["a cat on a mat".to_string(), "the mat is".to_string()];
        assert_eq!(missing_words("a cat on a mat. the mat is blue", &pieces), vec!["blue"]);
    }

    #[test]
    fn mapping_parse_accepts_textual_indices() {
        let reply: Map<String, Value> =
            serde_json::from_str(r#"{"mappings":[{"error":0,"sentence":"sentence 1","rationale":"r"}]}"#).unwrap();
        let m = parse_mappings(&reply, 1, 2).unwrap();
        assert_eq!(m[0].sentence, 1);
        let bad: Map<String, Value> =
            serde_json::from_str(r#"{"mappings":[{"error":0,"sentence":"sentence 9"}]}"#).unwrap();
        assert!(parse_mappings(&bad, 1, 2).is_err());
    }
}
