//! Stage 2: iterative repair of the detected errors.
//!
//! Errors are handled one at a time, most severe first. Each iteration
//! proposes N rewrites of the sentence the error maps to, merges each into
//! the working prompt, renders and scores every candidate, clusters the
//! candidates by embedding, picks the cluster with the highest posterior
//! (priors carried over from the previous round), samples its top `m`
//! members into memory, and advances the working prompt when the best
//! sample strictly beats it. The best candidate ever sampled is kept.
//!
//! Every iteration is reported as a [`RunEvent`] before the next begins,
//! which makes runs resumable from their logs ([`Session::resume`]).

pub mod baselines;
mod ops;
mod types;

use std::io;

use rayon::prelude::*;

pub use ops::{
    merge_candidate, propose_candidates, sample_cluster, score_image, score_prompt, update_memory,
    ProposalInput, Proposals, Sampled,
};
pub use types::*;

use crate::backends::{BackendError, ImageRef};
use crate::clustering::{
    bayesian_update, carry_prior_forward, compute_likelihoods, kmeans_fit, uniform_prior, ClusterError,
};
use crate::engine::{AskError, Engine};
use crate::error_analysis::{
    analyze, caption_and_compare, integrate_errors, AnalysisError, Branch, ErrorRecord, ErrorSet,
    QuestionItem, RunMetadata,
};
use crate::pattern_catalog::Catalog;
use crate::runlog::EventWriter;
use crate::templates::TemplateError;
use crate::text::{mix_seed, normalize_ws, sha256_hex};

/// Strategies from the pattern catalog shown to the refinement agent.
pub const STRATEGY_HINTS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("merge dropped content: {}", missing.join(", "))]
    MergeLoss { missing: Vec<String> },
    #[error("rating reply could not be parsed: {reply}")]
    UnparseableRating { reply: String },
    #[error("every candidate of iteration {iteration} failed: {reasons:?}")]
    AllCandidatesFailed { iteration: usize, reasons: Vec<String> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("writing run log: {0}")]
    Log(#[from] io::Error),
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl From<AskError> for OptimizeError {
    fn from(e: AskError) -> Self {
        match e {
            AskError::Backend(b) => OptimizeError::Backend(b),
            AskError::Template(t) => OptimizeError::Template(t),
        }
    }
}

/// Receives run events in order; each must be durable when `emit` returns.
pub trait EventSink {
    fn emit(&mut self, event: &RunEvent) -> io::Result<()>;
}

impl EventSink for Vec<RunEvent> {
    fn emit(&mut self, event: &RunEvent) -> io::Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

impl EventSink for EventWriter {
    fn emit(&mut self, event: &RunEvent) -> io::Result<()> {
        self.write(event)
    }
}

/// Discards events.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _: &RunEvent) -> io::Result<()> {
        Ok(())
    }
}

/// Deduplicate rubric questions by text, keeping the first of each.
pub fn rubric_from(questions: &[QuestionItem]) -> Vec<QuestionItem> {
    let mut out: Vec<QuestionItem> = Vec::new();
    for q in questions {
        if !out.iter().any(|o| normalize_ws(&o.question_text).eq_ignore_ascii_case(&normalize_ws(&q.question_text))) {
            out.push(q.clone());
        }
    }
    out
}

/// Handling order: severity descending, then error index.
pub fn error_queue(errors: &ErrorSet) -> Vec<usize> {
    let mut queue: Vec<usize> = (0..errors.len()).collect();
    queue.sort_by_key(|&i| (std::cmp::Reverse(errors.records[i].severity), i));
    queue
}

/// A run in progress.
pub struct Session<'a> {
    engine: &'a Engine,
    catalog: &'a Catalog,
    pub config: RunConfig,
    pub metadata: RunMetadata,
    pub rubric: Vec<QuestionItem>,
    pub original: ScoreReport,
    pub stage1_calls: u64,
    pub memory: Vec<MemoryEntry>,
    pub state: LoopState,
}

struct Scored {
    candidate: CandidatePrompt,
    report: ScoreReport,
}

impl<'a> Session<'a> {
    /// Run Stage 1 and score the original prompt.
    pub fn start(
        prompt: &str,
        config: RunConfig,
        engine: &'a Engine,
        catalog: &'a Catalog,
        sink: &mut dyn EventSink,
    ) -> Result<Self, OptimizeError> {
        config.validate().map_err(OptimizeError::Config)?;
        if prompt.trim().is_empty() {
            return Err(OptimizeError::Precondition("prompt must be non-empty".into()));
        }
        let metadata = analyze(prompt, engine, config.seed)?;
        let rubric = rubric_from(&metadata.questions);
        let original = score_image(0, prompt, &metadata.original_image, &rubric, engine)?;
        let stage1_calls = engine.backends.chat_calls();
        sink.emit(&RunEvent::Stage1Done {
            metadata: Box::new(metadata.clone()),
            rubric: rubric.clone(),
            original: original.clone(),
            stage1_calls,
        })?;
        Ok(Self::from_stage1(config, engine, catalog, metadata, rubric, original, stage1_calls))
    }

    fn from_stage1(
        config: RunConfig,
        engine: &'a Engine,
        catalog: &'a Catalog,
        metadata: RunMetadata,
        rubric: Vec<QuestionItem>,
        original: ScoreReport,
        stage1_calls: u64,
    ) -> Self {
        let queue = error_queue(&metadata.error_set);
        let stop = queue.is_empty().then_some(StopReason::NoErrors);
        let state = LoopState {
            iterations_done: 0,
            working_prompt: metadata.original_prompt.clone(),
            working_candidate: 0,
            working_score: original.average,
            piece_texts: metadata.pieces.iter().map(|p| p.text.clone()).collect(),
            queue,
            resolved: Vec::new(),
            carried: None,
            stall: 0,
            next_candidate_id: 1,
            latest_analysis: None,
            stop,
        };
        Self { engine, catalog, config, metadata, rubric, original, stage1_calls, memory: Vec::new(), state }
    }

    /// Rebuild a session from the events of an unfinished run. Returns
    /// `Ok(None)` when the run already finished.
    pub fn resume(
        events: &[RunEvent],
        config: RunConfig,
        engine: &'a Engine,
        catalog: &'a Catalog,
    ) -> Result<Option<Self>, OptimizeError> {
        if events.iter().any(|e| matches!(e, RunEvent::Final(_))) {
            return Ok(None);
        }
        let Some((metadata, rubric, original, stage1_calls)) = events.iter().find_map(|e| match e {
            RunEvent::Stage1Done { metadata, rubric, original, stage1_calls } => {
                Some(((**metadata).clone(), rubric.clone(), original.clone(), *stage1_calls))
            }
            _ => None,
        }) else {
            return Err(OptimizeError::Resume("log has no stage1_done event".into()));
        };
        let mut session = Self::from_stage1(config, engine, catalog, metadata, rubric, original, stage1_calls);
        let last = events.iter().rev().find_map(|e| match e {
            RunEvent::Iteration(r) => Some(r),
            _ => None,
        });
        if let Some(record) = last {
            session.state = record.state.clone();
            session.memory = events
                .iter()
                .filter_map(|e| match e {
                    RunEvent::MemoryAppend { entry } if entry.iteration <= record.iteration => Some(entry.clone()),
                    _ => None,
                })
                .collect();
        }
        Ok(Some(session))
    }

    pub fn best_so_far(&self) -> Option<&Best> {
        self.memory.last().map(|m| &m.best_so_far)
    }

    pub fn is_finished(&self) -> bool {
        self.state.stop.is_some()
    }

    fn check_stop(&self) -> Option<StopReason> {
        let s = &self.state;
        if self.best_so_far().is_some_and(|b| b.score >= self.config.score_target) {
            Some(StopReason::TargetReached)
        } else if s.current_error().is_none() {
            Some(StopReason::AllResolved)
        } else if s.stall >= self.config.patience {
            Some(StopReason::Patience)
        } else if s.iterations_done >= self.config.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        }
    }

    /// Merge and score every proposal; failures drop the candidate when
    /// running fail-soft.
    fn evaluate(
        &self,
        candidates: Vec<CandidatePrompt>,
        original_sentence: &str,
        untouched: &[&str],
    ) -> Result<(Vec<Scored>, Vec<Dropped>), OptimizeError> {
        let engine = self.engine;
        let results: Vec<Result<Scored, (usize, OptimizeError)>> = candidates
            .into_par_iter()
            .map(|mut c| {
                let merged = merge_candidate(
                    &self.state.working_prompt,
                    original_sentence,
                    &c.modified_sentence,
                    untouched,
                    engine,
                )
                .map_err(|e| (c.id, e))?;
                c.full_text = merged;
                let report =
                    score_prompt(c.id, &c.full_text, &self.rubric, self.config.seed, engine).map_err(|e| (c.id, e))?;
                Ok(Scored { candidate: c, report })
            })
            .collect();
        let mut scored = Vec::new();
        let mut dropped = Vec::new();
        for r in results {
            match r {
                Ok(s) => scored.push(s),
                Err((id, e)) if self.config.fail_soft => {
                    tracing::warn!(candidate = id, error = %e, "dropping candidate");
                    dropped.push(Dropped { candidate: id, reason: e.to_string() });
                }
                Err((_, e)) => return Err(e),
            }
        }
        Ok((scored, dropped))
    }

    /// Fresh error analysis of a scored image, reusing its checklist
    /// answers as the question-answering branch.
    fn reanalyze(&self, prompt: &str, report: &ScoreReport) -> Result<ErrorSet, OptimizeError> {
        let mut vqa = ErrorSet::new(Branch::Vqa);
        for item in report.per_item.iter().filter(|i| !i.yes) {
            let q = self.rubric.iter().find(|q| q.id == item.question).map_or("", |q| q.question_text.as_str());
            let explanation = format!("{q} {}", item.explanation).trim().to_string();
            vqa.insert(ErrorRecord::new(item.aspect, explanation, Branch::Vqa));
        }
        let caption = caption_and_compare(&report.image, prompt, self.engine)?;
        let integrated = integrate_errors(&report.image, prompt, &vqa, &caption.errors, self.engine)?;
        Ok(integrated.errors)
    }

    /// Mark queued errors that the working prompt no longer exhibits.
    fn settle_queue(&mut self) {
        let target_met = self.state.working_score >= self.config.score_target;
        let latest = self.state.latest_analysis.clone();
        for &e in &self.state.queue.clone() {
            if self.state.resolved.contains(&e) {
                continue;
            }
            let gone = latest.as_ref().is_some_and(|a| !a.contains_problem(&self.metadata.error_set.records[e]));
            if target_met || gone {
                self.state.resolved.push(e);
            }
        }
    }

    /// One propose, merge, score, cluster, sample and remember round.
    pub fn run_iteration(&mut self) -> Result<(IterationRecord, Option<MemoryEntry>), OptimizeError> {
        let Some(error_index) = self.state.current_error() else {
            return Err(OptimizeError::Precondition("no unresolved error".into()));
        };
        let iteration = self.state.iterations_done + 1;
        let error = self.metadata.error_set.records[error_index].clone();
        let mapping = self.metadata.mappings[error_index].clone();
        let piece = mapping.sentence;
        let sentence = self.state.piece_texts[piece].clone();
        let untouched: Vec<&str> = self
            .state
            .piece_texts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != piece)
            .map(|(_, t)| t.as_str())
            .collect();
        let strategies: Vec<String> = self
            .catalog
            .match_patterns(&error)
            .into_iter()
            .take(STRATEGY_HINTS)
            .map(|p| format!("{}: {}", p.name, p.strategy))
            .collect();
        let window_start = self.memory.len().saturating_sub(self.config.memory_window);
        let attempt = self.memory.iter().filter(|m| m.error == error_index).count();
        let proposals = propose_candidates(
            &ProposalInput {
                prompt: &self.state.working_prompt,
                sentence: &sentence,
                error: &error,
                strategies: &strategies,
                memory: &self.memory[window_start..],
                n: self.config.n_candidates,
                attempt,
                seed: self.config.seed,
                iteration,
            },
            self.engine,
        )?;
        let first_id = self.state.next_candidate_id;
        let candidates: Vec<CandidatePrompt> = proposals
            .sentences
            .iter()
            .enumerate()
            .map(|(j, s)| CandidatePrompt {
                id: first_id + j,
                full_text: String::new(),
                modified_sentence: s.clone(),
                source_mapping: mapping.clone(),
                iteration,
                parent: Some(self.state.working_candidate),
            })
            .collect();
        let next_candidate_id = first_id + candidates.len();
        let (scored, dropped) = self.evaluate(candidates, &sentence, &untouched)?;
        if scored.is_empty() {
            return Err(OptimizeError::AllCandidatesFailed {
                iteration,
                reasons: dropped.iter().map(|d| d.reason.clone()).collect(),
            });
        }
        let texts: Vec<String> = scored.iter().map(|s| s.candidate.full_text.clone()).collect();
        let embeddings: Vec<Vec<f64>> =
            self.engine.backends.embed(&texts)?.into_iter().map(|v| v.values).collect();
        let embeddings_hash = sha256_hex(serde_json::to_string(&embeddings).expect("finite floats").as_bytes());

        // One point per distinct prompt text; duplicates average their scores.
        let mut reps: Vec<usize> = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for (i, s) in scored.iter().enumerate() {
            match reps.iter().position(|&r| scored[r].candidate.full_text == s.candidate.full_text) {
                Some(g) => groups[g].push(s.report.average),
                None => {
                    reps.push(i);
                    groups.push(vec![s.report.average]);
                }
            }
        }
        let rep_ids: Vec<usize> = reps.iter().map(|&i| scored[i].candidate.id).collect();
        let rep_scores: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
        let rep_points: Vec<&Vec<f64>> = reps.iter().map(|&i| &embeddings[i]).collect();
        let assignment = kmeans_fit(
            &rep_points.iter().map(|p| p.as_slice()).collect::<Vec<_>>(),
            self.config.k_clusters,
            mix_seed(self.config.seed, &[iteration as u64]),
        )?;
        let likelihoods = compute_likelihoods(&assignment, &rep_scores)?;
        let priors = match &self.state.carried {
            Some(c) if c.error == error_index => {
                carry_prior_forward(&c.posterior, &c.centroids, &assignment.centroids)?
            }
            _ => uniform_prior(assignment.k_effective),
        };
        let posterior = bayesian_update(&priors, &likelihoods)?;
        let sampled_ids = sample_cluster(&assignment, &posterior, &rep_ids, &rep_scores, self.config.m_samples);

        let by_id = |id: usize| scored.iter().find(|s| s.candidate.id == id).expect("sampled id is scored");
        let sampled: Vec<Sampled> = sampled_ids
            .iter()
            .map(|&id| {
                let s = by_id(id);
                let score = rep_scores[rep_ids.iter().position(|r| *r == id).expect("rep")];
                Sampled {
                    candidate: id,
                    text: s.candidate.full_text.clone(),
                    image: s.report.image.clone(),
                    score,
                    findings: s.report.findings(&self.rubric),
                }
            })
            .collect();
        let previous_best = self.best_so_far().map(|b| b.score);
        let mut memory = self.memory.clone();
        let entry = update_memory(&mut memory, &sampled, &error, error_index, iteration, self.engine)?;

        let top = &sampled[0];
        let advanced = top.score > self.state.working_score;
        let mut state = self.state.clone();
        let mut reanalysis = None;
        let mut resolved = top.score >= self.config.score_target;
        if advanced {
            let winner = by_id(top.candidate);
            state.working_prompt = top.text.clone();
            state.working_candidate = top.candidate;
            state.working_score = top.score;
            state.piece_texts[piece] = winner.candidate.modified_sentence.clone();
            state.latest_analysis = None;
            if !resolved {
                let fresh = self.reanalyze(&top.text, &winner.report)?;
                resolved = !fresh.contains_problem(&error);
                state.latest_analysis = Some(fresh.clone());
                reanalysis = Some(fresh);
            }
        }
        if resolved {
            state.resolved.push(error_index);
            state.carried = None;
        } else {
            state.carried =
                Some(Carried { error: error_index, posterior: posterior.clone(), centroids: assignment.centroids.clone() });
        }
        let new_best = memory.last().map(|m| m.best_so_far.score);
        let improved = match (previous_best, new_best) {
            (None, Some(_)) => true,
            (Some(a), Some(b)) => b > a,
            _ => false,
        };
        state.stall = if improved { 0 } else { state.stall + 1 };
        state.iterations_done = iteration;
        state.next_candidate_id = next_candidate_id;

        // Commit.
        self.memory = memory;
        self.state = state;
        self.settle_queue();
        self.state.stop = self.check_stop();

        let summary = entry.as_ref().map(|e| e.feedback_summary.clone()).unwrap_or_default();
        let (candidates, reports): (Vec<CandidatePrompt>, Vec<ScoreReport>) =
            scored.into_iter().map(|s| (s.candidate, s.report)).unzip();
        let record = IterationRecord {
            iteration,
            error: error_index,
            sentence,
            candidates,
            flagged: proposals.flagged,
            dropped,
            reports,
            embeddings,
            embeddings_hash,
            clustered: rep_ids,
            cluster_scores: rep_scores,
            assignment,
            posterior,
            sampled: sampled_ids,
            summary,
            advanced,
            resolved,
            reanalysis,
            best_so_far: self.best_so_far().cloned(),
            state: self.state.clone(),
        };
        Ok((record, entry))
    }

    pub fn final_result(&self) -> FinalResult {
        let best = self.best_so_far().cloned();
        let (final_prompt, final_score) = match &best {
            Some(b) if b.score > self.original.average => (b.text.clone(), b.score),
            _ => (self.metadata.original_prompt.clone(), self.original.average),
        };
        FinalResult {
            original_prompt: self.metadata.original_prompt.clone(),
            original_score: self.original.average,
            final_prompt,
            final_score,
            iterations: self.state.iterations_done,
            best_so_far: best,
            stop_reason: self.state.stop.unwrap_or(StopReason::MaxIterations),
            resolved: self.state.resolved.clone(),
            unresolved: self.state.queue.iter().copied().filter(|e| !self.state.resolved.contains(e)).collect(),
        }
    }

    /// Iterate until a stop condition holds, then emit the final event.
    pub fn run(&mut self, sink: &mut dyn EventSink) -> Result<FinalResult, OptimizeError> {
        while !self.is_finished() {
            let (record, entry) = self.run_iteration()?;
            if let Some(entry) = entry {
                sink.emit(&RunEvent::MemoryAppend { entry })?;
            }
            sink.emit(&RunEvent::Iteration(Box::new(record)))?;
        }
        let result = self.final_result();
        sink.emit(&RunEvent::Final(result.clone()))?;
        Ok(result)
    }
}

/// Analyse and optimize a prompt end to end.
pub fn optimize(
    prompt: &str,
    config: RunConfig,
    engine: &Engine,
    catalog: &Catalog,
    sink: &mut dyn EventSink,
) -> Result<FinalResult, OptimizeError> {
    Session::start(prompt, config, engine, catalog, sink)?.run(sink)
}

/// Images of a record's sampled candidates, in sampling order.
pub fn sampled_images(record: &IterationRecord) -> Vec<&ImageRef> {
    record
        .sampled
        .iter()
        .filter_map(|id| record.reports.iter().find(|r| r.candidate == *id).map(|r| &r.image))
        .collect()
}

/// Chat-call ceiling for a run of `iterations` iterations.
pub fn call_budget(stage1_calls: u64, iterations: usize, config: &RunConfig) -> u64 {
    let n = config.n_candidates as u64;
    let per_iteration = n * (1 + 1) + n * 2 + 1;
    stage1_calls + iterations as u64 * per_iteration
}
