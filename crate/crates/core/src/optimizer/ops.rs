use serde_json::{json, Map, Value};

use super::types::{Best, ItemRating, MemoryEntry, ScoreReport};
use super::OptimizeError;
use crate::backends::{AgentRole, BackendError, ImageRef};
use crate::clustering::{ClusterAssignment, ClusterPosterior};
use crate::engine::{reask, Engine};
use crate::error_analysis::{ErrorRecord, QuestionItem};
use crate::text::{content_words, contains_normalized, normalize_ws, sha256_hex};

/// Inputs of one proposal round.
#[derive(Debug, Clone)]
pub struct ProposalInput<'a> {
    pub prompt: &'a str,
    pub sentence: &'a str,
    pub error: &'a ErrorRecord,
    pub strategies: &'a [String],
    pub memory: &'a [MemoryEntry],
    pub n: usize,
    /// Earlier memory entries for the same error.
    pub attempt: usize,
    pub seed: u64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposals {
    pub sentences: Vec<String>,
    /// Indices equal to the original sentence or to an earlier proposal.
    pub flagged: Vec<usize>,
}

fn parse_candidates(reply: &Map<String, Value>) -> Vec<String> {
    reply
        .get("candidates")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|c| c.as_str().or_else(|| c.get("text").and_then(Value::as_str)))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

fn flag(sentences: &[String], original: &str) -> Vec<usize> {
    let original = normalize_ws(original);
    (0..sentences.len())
        .filter(|&i| {
            let s = normalize_ws(&sentences[i]);
            s == original || sentences[..i].iter().any(|p| normalize_ws(p) == s)
        })
        .collect()
}

fn memory_text(memory: &[MemoryEntry]) -> String {
    if memory.is_empty() {
        return "(none yet)".into();
    }
    memory
        .iter()
        .map(|m| {
            let best = m.scores.iter().copied().fold(f64::MIN, f64::max);
            format!("Round {} (best {best:.2}): {}", m.iteration, m.feedback_summary)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `n` rewrites of the mapped sentence aimed at one error.
pub fn propose_candidates(input: &ProposalInput<'_>, engine: &Engine) -> Result<Proposals, OptimizeError> {
    if input.n == 0 {
        return Err(OptimizeError::Precondition("n must be at least 1".into()));
    }
    let error_text = format!("[{}] {}", input.error.category, input.error.explanation);
    let strategies = if input.strategies.is_empty() {
        "(no catalogued strategy)".to_string()
    } else {
        input.strategies.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
    };
    let memory = memory_text(input.memory);
    let n = input.n.to_string();
    let memory_prompts: Vec<&str> = input.memory.iter().flat_map(|m| m.prompts.iter().map(String::as_str)).collect();
    let req = engine.request(
        AgentRole::Refine,
        &[
            ("prompt", input.prompt),
            ("sentence", input.sentence),
            ("errors", &error_text),
            ("strategies", &strategies),
            ("memory", &memory),
            ("n", &n),
        ],
        json!({
            "prompt": input.prompt,
            "sentence": input.sentence,
            "error": {"category": input.error.category, "explanation": input.error.explanation},
            "n": input.n,
            "attempt": input.attempt,
            "seed": input.seed,
            "iteration": input.iteration,
            "memory_prompts": memory_prompts,
            "strategies": input.strategies,
        }),
        &[],
    )?;
    let mut sentences = parse_candidates(&engine.ask_json(&req)?);
    sentences.truncate(input.n);
    if sentences.len() < input.n || !flag(&sentences, input.sentence).is_empty() {
        let repair = reask(
            &req,
            format!(
                "Write exactly {} rewrites. Every rewrite must differ from the original piece and from each other.",
                input.n
            ),
        );
        let mut second = parse_candidates(&engine.ask_json(&repair)?);
        second.truncate(input.n);
        if second.len() >= sentences.len() {
            sentences = second;
        }
    }
    if sentences.is_empty() {
        return Err(OptimizeError::Backend(BackendError::MalformedReply {
            attempts: 2,
            last_reply: "no candidates".into(),
        }));
    }
    if sentences.len() < input.n {
        tracing::warn!(got = sentences.len(), wanted = input.n, "refinement returned fewer candidates");
    }
    let flagged = flag(&sentences, input.sentence);
    if !flagged.is_empty() {
        tracing::info!(?flagged, "accepting duplicate or unchanged proposals");
    }
    Ok(Proposals { sentences, flagged })
}

/// Content words of `pieces` missing from `text`.
fn lost_words(text: &str, pieces: &[&str]) -> Vec<String> {
    let have = content_words(text);
    let mut lost: Vec<String> = pieces
        .iter()
        .flat_map(|p| content_words(p))
        .filter(|w| !have.contains(w))
        .collect();
    lost.dedup();
    lost
}

/// Splice a modified sentence into the prompt. `untouched` are the other
/// pieces, whose content words must survive.
pub fn merge_candidate(
    prompt: &str,
    original_sentence: &str,
    modified_sentence: &str,
    untouched: &[&str],
    engine: &Engine,
) -> Result<String, OptimizeError> {
    if modified_sentence.trim().is_empty() {
        return Err(OptimizeError::Precondition("modified sentence is empty".into()));
    }
    if normalize_ws(modified_sentence) == normalize_ws(original_sentence) {
        return Ok(prompt.to_string());
    }
    let req = engine.request(
        AgentRole::Merge,
        &[("prompt", prompt), ("sentence", original_sentence), ("modified", modified_sentence)],
        json!({
            "prompt": prompt,
            "original_sentence": original_sentence,
            "modified_sentence": modified_sentence,
        }),
        &[],
    )?;
    let check = |reply: &Map<String, Value>| -> Result<String, Vec<String>> {
        let merged = reply.get("prompt").and_then(Value::as_str).map(str::trim).unwrap_or_default();
        let mut lost = lost_words(merged, untouched);
        if !contains_normalized(merged, modified_sentence) {
            lost.push(format!("<edited piece {modified_sentence:?}>"));
        }
        if merged.is_empty() || !lost.is_empty() {
            Err(lost)
        } else {
            Ok(merged.to_string())
        }
    };
    match check(&engine.ask_json(&req)?) {
        Ok(merged) => Ok(merged),
        Err(lost) => {
            let repair = reask(
                &req,
                format!("Your merge lost: {}. Keep every other piece and the edited piece verbatim.", lost.join(", ")),
            );
            check(&engine.ask_json(&repair)?).map_err(|missing| OptimizeError::MergeLoss { missing })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Answer {
    yes: bool,
    explanation: String,
}

fn parse_answers(reply: &Map<String, Value>, questions: &[QuestionItem]) -> Vec<Answer> {
    let items = reply.get("answers").and_then(Value::as_array).cloned().unwrap_or_default();
    questions
        .iter()
        .map(|q| {
            let item = items.iter().find(|a| a.get("id").and_then(Value::as_u64) == Some(q.id as u64));
            match item {
                Some(a) => Answer {
                    yes: a.get("label").and_then(Value::as_str).is_some_and(|l| l.trim().eq_ignore_ascii_case("yes")),
                    explanation: a.get("explanation").and_then(Value::as_str).unwrap_or_default().trim().to_string(),
                },
                None => {
                    tracing::warn!(question = q.id, "scorer skipped a rubric question");
                    Answer { yes: false, explanation: "not answered".into() }
                }
            }
        })
        .collect()
}

fn parse_ratings(reply: &Map<String, Value>, questions: &[QuestionItem]) -> Result<Vec<(u8, String)>, String> {
    let items = reply.get("ratings").and_then(Value::as_array).ok_or("no ratings array")?;
    questions
        .iter()
        .map(|q| {
            let item = items
                .iter()
                .find(|r| r.get("id").and_then(Value::as_u64) == Some(q.id as u64))
                .ok_or_else(|| format!("no rating for question {}", q.id))?;
            let rating = item
                .get("rating")
                .and_then(Value::as_u64)
                .filter(|r| (1..=5).contains(r))
                .ok_or_else(|| format!("rating for question {} is not an integer in 1..=5", q.id))?;
            let note = item.get("note").and_then(Value::as_str).unwrap_or_default().to_string();
            Ok((rating as u8, note))
        })
        .collect()
}

/// Rate an image against the rubric: checklist answers, then per-item
/// ratings, averaged.
pub fn score_image(
    candidate: usize,
    prompt: &str,
    image: &ImageRef,
    questions: &[QuestionItem],
    engine: &Engine,
) -> Result<ScoreReport, OptimizeError> {
    if questions.is_empty() {
        return Err(OptimizeError::Precondition("no rubric questions".into()));
    }
    let listing = questions.iter().map(|q| format!("{}: {}", q.id, q.question_text)).collect::<Vec<_>>().join("\n");
    let req = engine.request(AgentRole::ScoreVqa, &[("questions", &listing)], json!({"questions": questions}), &[image])?;
    let answers = parse_answers(&engine.ask_json(&req)?, questions);
    let findings = questions
        .iter()
        .zip(&answers)
        .map(|(q, a)| {
            let label = if a.yes { "YES" } else { "NO" };
            format!("{} [{}] {} -> {label}. {}", q.id, q.aspect, q.question_text, a.explanation).trim().to_string()
        })
        .collect::<Vec<_>>()
        .join("\n");
    let answer_json: Vec<Value> = questions
        .iter()
        .zip(&answers)
        .map(|(q, a)| json!({"id": q.id, "label": if a.yes { "YES" } else { "NO" }, "explanation": a.explanation}))
        .collect();
    let req = engine.request(
        AgentRole::Rate,
        &[("prompt", prompt), ("findings", &findings)],
        json!({"questions": questions, "answers": answer_json, "prompt": prompt}),
        &[],
    )?;
    let first = match engine.ask_json(&req) {
        Ok(reply) => parse_ratings(&reply, questions),
        Err(BackendError::MalformedReply { last_reply, .. }) => Err(last_reply),
        Err(e) => return Err(e.into()),
    };
    let ratings = match first {
        Ok(r) => r,
        Err(problem) => {
            let repair = reask(&req, format!("{problem}. Give every item an integer rating from 1 to 5."));
            match engine.ask_json(&repair) {
                Ok(reply) => parse_ratings(&reply, questions).map_err(|reply| OptimizeError::UnparseableRating { reply })?,
                Err(BackendError::MalformedReply { last_reply, .. }) => {
                    return Err(OptimizeError::UnparseableRating { reply: last_reply })
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    let per_item: Vec<ItemRating> = questions
        .iter()
        .zip(answers)
        .zip(ratings)
        .map(|((q, a), (rating, note))| ItemRating {
            question: q.id,
            aspect: q.aspect,
            yes: a.yes,
            explanation: a.explanation,
            rating,
            note,
        })
        .collect();
    let average = per_item.iter().map(|i| i.rating as f64).sum::<f64>() / per_item.len() as f64;
    Ok(ScoreReport { candidate, per_item, average, image: image.clone() })
}

/// Generate the candidate's image and score it.
pub fn score_prompt(
    candidate: usize,
    prompt: &str,
    questions: &[QuestionItem],
    seed: u64,
    engine: &Engine,
) -> Result<ScoreReport, OptimizeError> {
    let image = engine.backends.generate_image(prompt, seed)?;
    score_image(candidate, prompt, &image, questions, engine)
}

/// Up to `m` members of the best cluster by score, descending, ties to
/// the lower id. `ids` and `scores` align with the assignment's points.
pub fn sample_cluster(
    assignment: &ClusterAssignment,
    posterior: &ClusterPosterior,
    ids: &[usize],
    scores: &[f64],
    m: usize,
) -> Vec<usize> {
    let mut members: Vec<(usize, f64)> = assignment
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == posterior.best)
        .map(|(i, _)| (ids[i], scores[i]))
        .collect();
    members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    members.into_iter().take(m).map(|(id, _)| id).collect()
}

/// A sampled candidate handed to memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub candidate: usize,
    pub text: String,
    pub image: ImageRef,
    pub score: f64,
    pub findings: Vec<String>,
}

fn entry_hash(error: usize, sampled: &[Sampled]) -> String {
    let body = json!({
        "error": error,
        "sampled": sampled.iter().map(|s| json!([s.text, s.score, s.image.content_hash])).collect::<Vec<_>>(),
    });
    sha256_hex(body.to_string().as_bytes())
}

/// Summarize the sampled set and append it to memory. Returns the new
/// entry, or `None` when an identical entry is already stored.
pub fn update_memory(
    memory: &mut Vec<MemoryEntry>,
    sampled: &[Sampled],
    error: &ErrorRecord,
    error_index: usize,
    iteration: usize,
    engine: &Engine,
) -> Result<Option<MemoryEntry>, OptimizeError> {
    if sampled.is_empty() {
        return Err(OptimizeError::Precondition("nothing sampled".into()));
    }
    let hash = entry_hash(error_index, sampled);
    if memory.iter().any(|m| m.content_hash == hash) {
        return Ok(None);
    }
    let error_text = format!("[{}] {}", error.category, error.explanation);
    let findings = sampled
        .iter()
        .map(|s| {
            let issues = if s.findings.is_empty() { "none".to_string() } else { s.findings.join("; ") };
            format!("score {:.2}: {}\n  remaining: {issues}", s.score, s.text)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let sampled_json: Vec<Value> =
        sampled.iter().map(|s| json!({"prompt": s.text, "score": s.score, "findings": s.findings})).collect();
    let req = engine.request(
        AgentRole::Summarize,
        &[("errors", &error_text), ("findings", &findings)],
        json!({"error": error_text, "sampled": sampled_json}),
        &[],
    )?;
    let summary = engine.ask(&req)?.trim().to_string();
    let top = sampled
        .iter()
        .max_by(|a, b| a.score.total_cmp(&b.score).then(b.candidate.cmp(&a.candidate)))
        .expect("non-empty");
    let candidate_best = Best { candidate: top.candidate, score: top.score, text: top.text.clone() };
    let best_so_far = match memory.last().map(|m| &m.best_so_far) {
        Some(prev) if prev.score >= candidate_best.score => prev.clone(),
        _ => candidate_best,
    };
    let entry = MemoryEntry {
        iteration,
        error: error_index,
        sampled_prompts: sampled.iter().map(|s| s.candidate).collect(),
        prompts: sampled.iter().map(|s| s.text.clone()).collect(),
        images: sampled.iter().map(|s| s.image.clone()).collect(),
        scores: sampled.iter().map(|s| s.score).collect(),
        feedback_summary: summary,
        best_so_far,
        content_hash: hash,
    };
    memory.push(entry.clone());
    Ok(Some(entry))
}
