use serde::{Deserialize, Serialize};

use crate::backends::ImageRef;
use crate::clustering::{ClusterAssignment, ClusterPosterior};
use crate::error_analysis::{Aspect, ErrorMapping, ErrorSet, QuestionItem, RunMetadata};

/// Search hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Candidate rewrites proposed per iteration.
    pub n_candidates: usize,
    /// Clusters requested per iteration.
    pub k_clusters: usize,
    pub max_iterations: usize,
    /// Candidates sampled from the winning cluster into memory.
    pub m_samples: usize,
    pub score_target: f64,
    /// Iterations without a best-so-far improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Drop candidates whose merge or scoring fails instead of aborting.
    pub fail_soft: bool,
    /// Most recent memory entries shown to the refinement agent.
    pub memory_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_candidates: 20,
            k_clusters: 5,
            max_iterations: 10,
            m_samples: 3,
            score_target: 5.0,
            patience: 3,
            seed: 0,
            fail_soft: true,
            memory_window: 5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("n_candidates", self.n_candidates),
            ("k_clusters", self.k_clusters),
            ("max_iterations", self.max_iterations),
            ("m_samples", self.m_samples),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be at least 1"));
        }
        if self.m_samples > self.n_candidates {
            return Err("m_samples must not exceed n_candidates".into());
        }
        if !(1.0..=5.0).contains(&self.score_target) {
            return Err("score_target must lie in [1, 5]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePrompt {
    pub id: usize,
    pub full_text: String,
    pub modified_sentence: String,
    pub source_mapping: ErrorMapping,
    pub iteration: usize,
    /// The working prompt's candidate id when this one was proposed.
    pub parent: Option<usize>,
}

/// One rubric item's verdict and rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRating {
    pub question: usize,
    pub aspect: Aspect,
    pub yes: bool,
    pub explanation: String,
    pub rating: u8,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub candidate: usize,
    pub per_item: Vec<ItemRating>,
    pub average: f64,
    pub image: ImageRef,
}

impl ScoreReport {
    /// Rubric items that are not fully satisfied, as short findings.
    pub fn findings(&self, rubric: &[QuestionItem]) -> Vec<String> {
        self.per_item
            .iter()
            .filter(|i| i.rating < 5)
            .map(|i| {
                let q = rubric.iter().find(|q| q.id == i.question).map_or("", |q| q.question_text.as_str());
                format!("{q} {}", i.explanation).trim().to_string()
            })
            .collect()
    }
}

/// The best candidate seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub candidate: usize,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub iteration: usize,
    /// Index of the error being worked on.
    pub error: usize,
    pub sampled_prompts: Vec<usize>,
    pub prompts: Vec<String>,
    pub images: Vec<ImageRef>,
    pub scores: Vec<f64>,
    pub feedback_summary: String,
    pub best_so_far: Best,
    pub content_hash: String,
}

/// Posterior and centroids kept for aligning the next round's priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carried {
    pub error: usize,
    pub posterior: ClusterPosterior,
    pub centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoErrors,
    TargetReached,
    AllResolved,
    Patience,
    MaxIterations,
}

/// Everything the loop needs to continue, besides Stage-1 output and
/// memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub iterations_done: usize,
    pub working_prompt: String,
    /// Candidate id of the working prompt (0 is the original prompt).
    pub working_candidate: usize,
    pub working_score: f64,
    /// Current text of every prompt piece.
    pub piece_texts: Vec<String>,
    /// Error indices in handling order.
    pub queue: Vec<usize>,
    pub resolved: Vec<usize>,
    pub carried: Option<Carried>,
    /// Consecutive iterations without best-so-far improvement.
    pub stall: usize,
    pub next_candidate_id: usize,
    /// Fresh analysis of the working prompt's image, when one was run.
    pub latest_analysis: Option<ErrorSet>,
    pub stop: Option<StopReason>,
}

impl LoopState {
    pub fn current_error(&self) -> Option<usize> {
        self.queue.iter().copied().find(|e| !self.resolved.contains(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub candidate: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub error: usize,
    pub sentence: String,
    pub candidates: Vec<CandidatePrompt>,
    /// Proposal indices that were duplicates or equal to the original.
    pub flagged: Vec<usize>,
    pub dropped: Vec<Dropped>,
    pub reports: Vec<ScoreReport>,
    /// Embedding of each report's candidate, aligned with `reports`.
    pub embeddings: Vec<Vec<f64>>,
    pub embeddings_hash: String,
    /// Candidate ids that were clustered (one per distinct prompt text).
    pub clustered: Vec<usize>,
    pub cluster_scores: Vec<f64>,
    pub assignment: ClusterAssignment,
    pub posterior: ClusterPosterior,
    pub sampled: Vec<usize>,
    pub summary: String,
    pub advanced: bool,
    pub resolved: bool,
    pub reanalysis: Option<ErrorSet>,
    pub best_so_far: Option<Best>,
    pub state: LoopState,
}

impl IterationRecord {
    /// Cluster label of a candidate; duplicates share their twin's label.
    pub fn label_of(&self, candidate: usize) -> Option<usize> {
        let text = &self.candidates.iter().find(|c| c.id == candidate)?.full_text;
        let rep = self
            .clustered
            .iter()
            .position(|id| self.candidates.iter().any(|c| c.id == *id && &c.full_text == text))?;
        self.assignment.labels.get(rep).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub original_prompt: String,
    pub original_score: f64,
    pub final_prompt: String,
    pub final_score: f64,
    pub iterations: usize,
    pub best_so_far: Option<Best>,
    pub stop_reason: StopReason,
    pub resolved: Vec<usize>,
    pub unresolved: Vec<usize>,
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    RunStarted { run_id: String, prompt: String, config: RunConfig, backends: serde_json::Value },
    Stage1Done { metadata: Box<RunMetadata>, rubric: Vec<QuestionItem>, original: ScoreReport, stage1_calls: u64 },
    MemoryAppend { entry: MemoryEntry },
    Iteration(Box<IterationRecord>),
    Final(FinalResult),
}
