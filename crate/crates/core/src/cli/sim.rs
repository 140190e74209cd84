//! Batch runs over synthetic tasks, with optional baselines.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::optimizer::baselines::{run_baseline, Baseline, BaselineResult};
use crate::optimizer::{OptimizeError, RunConfig, RunEvent, Session, StopReason};
use crate::pattern_catalog::Catalog;
use crate::synthetic::{task_backends, SyntheticTask, TaskFamily};
use crate::templates::Templates;

pub const FULL_METHOD: &str = "full";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub id: String,
    pub family: TaskFamily,
    pub prompt: String,
    pub original_score: f64,
    pub final_score: f64,
    pub final_prompt: String,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Whether best-so-far never decreased across iterations.
    pub best_monotone: bool,
    pub chat_calls: u64,
    pub baselines: Vec<BaselineResult>,
}

fn best_monotone(events: &[RunEvent]) -> bool {
    let scores: Vec<f64> = events
        .iter()
        .filter_map(|e| match e {
            RunEvent::Iteration(r) => Some(r.best_so_far.as_ref().map_or(f64::MIN, |b| b.score)),
            _ => None,
        })
        .collect();
    scores.windows(2).all(|w| w[1] >= w[0])
}

/// Optimize one task under the mock stack, then run each baseline from
/// the same Stage-1 output.
pub fn run_task(
    task: &SyntheticTask,
    config: &RunConfig,
    catalog: &Catalog,
    templates: &Arc<Templates>,
    baselines: &[Baseline],
) -> Result<TaskOutcome, OptimizeError> {
    let engine = Engine { backends: task_backends(task.clone()), templates: templates.clone() };
    let mut events: Vec<RunEvent> = Vec::new();
    let mut session = Session::start(&task.prompt, config.clone(), &engine, catalog, &mut events)?;
    let result = session.run(&mut events)?;
    let chat_calls = engine.backends.chat_calls();
    let baselines = baselines
        .iter()
        .map(|b| {
            run_baseline(*b, &session.metadata, &session.rubric, session.original.average, config, &engine, catalog)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TaskOutcome {
        id: task.id.clone(),
        family: task.family,
        prompt: task.prompt.clone(),
        original_score: result.original_score,
        final_score: result.final_score,
        final_prompt: result.final_prompt,
        iterations: result.iterations,
        stop_reason: result.stop_reason,
        best_monotone: best_monotone(&events),
        chat_calls,
        baselines,
    })
}

/// Run every task in parallel; results keep task order.
pub fn run_tasks(
    tasks: &[SyntheticTask],
    config: &RunConfig,
    catalog: &Catalog,
    templates: &Arc<Templates>,
    baselines: &[Baseline],
) -> Result<Vec<TaskOutcome>, OptimizeError> {
    tasks.par_iter().map(|t| run_task(t, config, catalog, templates, baselines)).collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub tasks: usize,
    pub median: f64,
    pub mean: f64,
    /// Tasks whose final score reached the target.
    pub reached: usize,
}

fn summary(method: &str, scores: &[f64], target: f64) -> MethodSummary {
    MethodSummary {
        method: method.to_string(),
        tasks: scores.len(),
        median: median(scores),
        mean: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
        reached: scores.iter().filter(|s| **s >= target).count(),
    }
}

/// The full method first, then each baseline in the order run.
pub fn summarize(outcomes: &[TaskOutcome], target: f64) -> Vec<MethodSummary> {
    let full: Vec<f64> = outcomes.iter().map(|o| o.final_score).collect();
    let mut out = vec![summary(FULL_METHOD, &full, target)];
    if let Some(first) = outcomes.first() {
        for (i, b) in first.baselines.iter().enumerate() {
            let scores: Vec<f64> = outcomes.iter().map(|o| o.baselines[i].final_score).collect();
            out.push(summary(b.baseline.name(), &scores, target));
        }
    }
    out
}

pub fn outcome_table(outcomes: &[TaskOutcome]) -> String {
    let mut s = String::from("task      family         original  final  iters  stop\n");
    for o in outcomes {
        let stop = serde_json::to_value(o.stop_reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let family = serde_json::to_value(o.family).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let _ = writeln!(
            s,
            "{:<9} {:<14} {:>8.2} {:>6.2} {:>6}  {}",
            o.id, family, o.original_score, o.final_score, o.iterations, stop
        );
    }
    s
}

pub fn summary_table(summaries: &[MethodSummary]) -> String {
    let mut s = String::from("method           median   mean  reached\n");
    for m in summaries {
        let _ = writeln!(s, "{:<15} {:>7.3} {:>6.3}  {}/{}", m.method, m.median, m.mean, m.reached, m.tasks);
    }
    s
}
