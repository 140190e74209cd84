//! Reference searches the full loop is compared against. Both reuse the
//! Stage-1 output and scorer of a [`Session`](super::Session) so scores are
//! comparable.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ops::{merge_candidate, propose_candidates, score_prompt, ProposalInput};
use super::{OptimizeError, RunConfig};
use crate::backends::AgentRole;
use crate::engine::Engine;
use crate::error_analysis::{QuestionItem, RunMetadata};
use crate::pattern_catalog::Catalog;
use crate::text::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Error-agnostic paraphrase of a random piece per step, best kept.
    RandomRewrite,
    /// One round of N targeted proposals, best taken, no clustering or memory.
    BestOfN,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::RandomRewrite => "random-rewrite",
            Baseline::BestOfN => "best-of-n",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub baseline: Baseline,
    pub final_prompt: String,
    pub final_score: f64,
    pub evaluations: usize,
}

/// Run `baseline` from a finished Stage 1 and the original prompt's score.
pub fn run_baseline(
    baseline: Baseline,
    metadata: &RunMetadata,
    rubric: &[QuestionItem],
    original_score: f64,
    config: &RunConfig,
    engine: &Engine,
    catalog: &Catalog,
) -> Result<BaselineResult, OptimizeError> {
    match baseline {
        Baseline::RandomRewrite => random_rewrite(metadata, rubric, original_score, config, engine),
        Baseline::BestOfN => best_of_n(metadata, rubric, original_score, config, engine, catalog),
    }
}

fn random_rewrite(
    metadata: &RunMetadata,
    rubric: &[QuestionItem],
    original_score: f64,
    config: &RunConfig,
    engine: &Engine,
) -> Result<BaselineResult, OptimizeError> {
    let mut pieces: Vec<String> = metadata.pieces.iter().map(|p| p.text.clone()).collect();
    let mut prompt = metadata.original_prompt.clone();
    let mut best = (original_score, prompt.clone());
    let mut evaluations = 0;
    if pieces.is_empty() {
        return Ok(BaselineResult { baseline: Baseline::RandomRewrite, final_prompt: prompt, final_score: original_score, evaluations });
    }
    for step in 1..=config.max_iterations {
        let piece = (mix_seed(config.seed, &[step as u64, 0x7069_6563]) % pieces.len() as u64) as usize;
        let req = engine.request(
            AgentRole::Rewrite,
            &[("sentence", &pieces[piece])],
            json!({"sentence": pieces[piece], "seed": config.seed, "iteration": step}),
            &[],
        )?;
        let reply = engine.ask_json(&req)?;
        let Some(rewrite) = reply
            .get("candidates")
            .and_then(|c| c.as_array())
            .and_then(|a| a.first())
            .and_then(|c| c.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
        else {
            continue;
        };
        let untouched: Vec<&str> =
            pieces.iter().enumerate().filter(|(i, _)| *i != piece).map(|(_, t)| t.as_str()).collect();
        let merged = match merge_candidate(&prompt, &pieces[piece], &rewrite, &untouched, engine) {
            Ok(m) => m,
            Err(e) if config.fail_soft => {
                tracing::warn!(step, error = %e, "random rewrite dropped");
                continue;
            }
            Err(e) => return Err(e),
        };
        let report = score_prompt(step, &merged, rubric, config.seed, engine)?;
        evaluations += 1;
        pieces[piece] = rewrite;
        prompt = merged;
        if report.average > best.0 {
            best = (report.average, prompt.clone());
        }
    }
    Ok(BaselineResult { baseline: Baseline::RandomRewrite, final_prompt: best.1, final_score: best.0, evaluations })
}

fn best_of_n(
    metadata: &RunMetadata,
    rubric: &[QuestionItem],
    original_score: f64,
    config: &RunConfig,
    engine: &Engine,
    catalog: &Catalog,
) -> Result<BaselineResult, OptimizeError> {
    let mut best = (original_score, metadata.original_prompt.clone());
    let queue = super::error_queue(&metadata.error_set);
    let Some(&error_index) = queue.first() else {
        return Ok(BaselineResult { baseline: Baseline::BestOfN, final_prompt: best.1, final_score: best.0, evaluations: 0 });
    };
    let error = &metadata.error_set.records[error_index];
    let piece = metadata.mappings[error_index].sentence;
    let sentence = &metadata.pieces[piece].text;
    let untouched: Vec<&str> = metadata
        .pieces
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != piece)
        .map(|(_, p)| p.text.as_str())
        .collect();
    let strategies: Vec<String> = catalog
        .match_patterns(error)
        .into_iter()
        .take(super::STRATEGY_HINTS)
        .map(|p| format!("{}: {}", p.name, p.strategy))
        .collect();
    let proposals = propose_candidates(
        &ProposalInput {
            prompt: &metadata.original_prompt,
            sentence,
            error,
            strategies: &strategies,
            memory: &[],
            n: config.n_candidates,
            attempt: 0,
            seed: config.seed,
            iteration: 1,
        },
        engine,
    )?;
    let mut evaluations = 0;
    for (j, s) in proposals.sentences.iter().enumerate() {
        let scored = merge_candidate(&metadata.original_prompt, sentence, s, &untouched, engine)
            .and_then(|merged| Ok((score_prompt(j + 1, &merged, rubric, config.seed, engine)?, merged)));
        match scored {
            Ok((report, merged)) => {
                evaluations += 1;
                if report.average > best.0 {
                    best = (report.average, merged);
                }
            }
            Err(e) if config.fail_soft => tracing::warn!(candidate = j + 1, error = %e, "best-of-n candidate dropped"),
            Err(e) => return Err(e),
        }
    }
    Ok(BaselineResult { baseline: Baseline::BestOfN, final_prompt: best.1, final_score: best.0, evaluations })
}
