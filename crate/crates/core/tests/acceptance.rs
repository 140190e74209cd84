//! One check per acceptance criterion; each prints a PASS/FAIL line.
//! Set `PROMPTSEARCH_BLESS=1` to rewrite the golden files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use promptsearch::cli::sim::{median, run_tasks, summarize};
use promptsearch::clustering::{bayesian_update, kmeans_fit};
use promptsearch::engine::Engine;
use promptsearch::error_analysis::{decompose_prompt, detect_errors, generate_questions, Aspect, ErrorRecord};
use promptsearch::optimizer::{RunConfig, RunEvent, Session};
use promptsearch::pattern_catalog::Catalog;
use promptsearch::runlog::{read_events, EventWriter};
use promptsearch::synthetic::render::{constraints, load_scene, Constraint};
use promptsearch::synthetic::{
    adhoc_task, baozi_task, generate_tasks, render_scene, task_backends, CorruptionProfile, SyntheticTask,
};
use promptsearch::templates::Templates;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

const BAYES_TOL: f64 = 1e-12;
const ARI_MIN: f64 = 0.9;
const REACHED_MIN: f64 = 0.8;
const MEDIAN_MIN: f64 = 4.5;
const GAP_MIN: f64 = 0.5;
const GAP_TOL: f64 = 1e-9;

fn report(criterion: u8, pass: bool, detail: String) {
    let line = format!("criterion {criterion}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    // Written to the raw handle so the line shows without --nocapture.
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion}: {detail}");
}

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// The frozen value, or `value` itself when blessing.
fn golden(name: &str, value: Value) -> Value {
    let path = golden_path(name);
    if std::env::var_os("PROMPTSEARCH_BLESS").is_some() || !path.exists() {
        fs::write(&path, serde_json::to_string_pretty(&value).unwrap() + "\n").unwrap();
        return value;
    }
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn default_config(seed: u64) -> RunConfig {
    RunConfig { n_candidates: 20, k_clusters: 5, max_iterations: 10, seed, ..RunConfig::default() }
}

#[test]
fn criterion_1_bayesian_update_matches_the_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut argmax_stable = true;
    for _ in 0..1000 {
        let k = rng.random_range(1..=8);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let priors: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let likelihoods: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let post = bayesian_update(&priors, &likelihoods).unwrap();
        let evidence: f64 = priors.iter().zip(&likelihoods).map(|(p, l)| p * l).sum();
        for j in 0..k {
            worst = worst.max((post.posteriors[j] - priors[j] * likelihoods[j] / evidence).abs());
        }
        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = likelihoods.iter().map(|l| l * c).collect();
        argmax_stable &= bayesian_update(&priors, &scaled).unwrap().best == post.best;
    }
    let elapsed = start.elapsed();
    report(
        1,
        worst <= BAYES_TOL && argmax_stable && elapsed < Duration::from_secs(1),
        format!("max |error| {worst:.1e} <= {BAYES_TOL:.0e}, argmax scale-invariant {argmax_stable}, {elapsed:.2?}"),
    );
}

/// Adjusted Rand index by direct pair counting.
fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += (sa && sb) as u8 as f64;
            in_a += sa as u8 as f64;
            in_b += sb as u8 as f64;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let expected = in_a * in_b / pairs;
    let max = (in_a + in_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

#[test]
fn criterion_2_kmeans_recovers_planted_blobs() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut worst = f64::MAX;
    let mut deterministic = true;
    for instance in 0..20u64 {
        let blobs = if instance % 2 == 0 { 2 } else { 3 };
        let dim = rng.random_range(2..=8);
        let n = rng.random_range(blobs * 4..=30);
        let centers: Vec<Vec<f64>> = (0..blobs)
            .map(|b| (0..dim).map(|d| if d == b { 10.0 } else { 0.0 }).collect())
            .collect();
        let planted: Vec<usize> = (0..n).map(|i| i % blobs).collect();
        let points: Vec<Vec<f64>> = planted
            .iter()
            .map(|&b| centers[b].iter().map(|c| c + noise.sample(&mut rng)).collect())
            .collect();
        let fit = kmeans_fit(&points, blobs, instance).unwrap();
        deterministic &= kmeans_fit(&points, blobs, instance).unwrap() == fit;
        worst = worst.min(ari_oracle(&fit.labels, &planted));
    }
    let elapsed = start.elapsed();
    report(
        2,
        worst >= ARI_MIN && deterministic && elapsed < Duration::from_secs(5),
        format!("min ARI {worst:.3} >= {ARI_MIN} over 20 instances, deterministic {deterministic}, {elapsed:.2?}"),
    );
}

fn templates() -> Arc<Templates> {
    Arc::new(Templates::default())
}

#[test]
fn criterion_3_synthetic_runs_converge() {
    let start = Instant::now();
    let tasks = generate_tasks(50, 0);
    let outcomes = run_tasks(&tasks, &default_config(0), &Catalog::bundled(), &templates(), &[]).unwrap();
    let elapsed = start.elapsed();
    let scores: Vec<f64> = outcomes.iter().map(|o| o.final_score).collect();
    let reached = scores.iter().filter(|s| **s >= 5.0).count();
    let med = median(&scores);
    let monotone = outcomes.iter().all(|o| o.best_monotone);
    report(
        3,
        reached as f64 >= REACHED_MIN * 50.0 && med >= MEDIAN_MIN && monotone && elapsed < Duration::from_secs(60),
        format!("{reached}/50 reach 5.0 (need 80%), median {med:.3} >= {MEDIAN_MIN}, best-so-far monotone {monotone}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_4_full_method_beats_random_rewrite() {
    use promptsearch::optimizer::baselines::Baseline;
    let tasks = generate_tasks(50, 0);
    let cfg = default_config(0);
    let outcomes = run_tasks(&tasks, &cfg, &Catalog::bundled(), &templates(), &[Baseline::RandomRewrite]).unwrap();
    let summary = summarize(&outcomes, cfg.score_target);
    let gap = summary[0].median - summary[1].median;
    let frozen = golden("bench_gap.json", json!({ "median_gap": gap }))["median_gap"].as_f64().unwrap();
    report(
        4,
        gap >= GAP_MIN && gap >= frozen - GAP_TOL,
        format!(
            "median {:.3} vs random-rewrite {:.3}: gap {gap:.3} >= {GAP_MIN}, frozen gap {frozen:.3}",
            summary[0].median, summary[1].median
        ),
    );
}

#[test]
fn criterion_5_baozi_trajectory() {
    let task = baozi_task();
    let original = render_scene(&task.prompt, &task, task.seed).unwrap().count_of("baozi");
    let frozen = golden("baozi_original_count.json", json!({ "count": original }))["count"].as_u64().unwrap();
    let engine = Engine::new(task_backends(task.clone()), Templates::default());
    let catalog = Catalog::bundled();
    let mut events = Vec::new();
    let f = promptsearch::optimizer::optimize(&task.prompt, default_config(task.seed), &engine, &catalog, &mut events)
        .unwrap();
    let emphasis = f.final_prompt.contains("exactly");
    report(
        5,
        f.iterations <= 10 && emphasis && f.final_score == 5.0 && original as u64 == frozen,
        format!(
            "{} baozi rendered (frozen {frozen}), {:.2} -> {:.2} in {} iteration(s), final prompt {:?}",
            original, f.original_score, f.final_score, f.iterations, f.final_prompt
        ),
    );
}

/// Run a task to completion into `path` with fresh backends.
fn logged_run(task: &SyntheticTask, path: &Path) {
    let engine = Engine::new(task_backends(task.clone()), Templates::default());
    let catalog = Catalog::bundled();
    let mut w = EventWriter::create(path).unwrap();
    let mut s = Session::start(&task.prompt, default_config(task.seed), &engine, &catalog, &mut w).unwrap();
    s.run(&mut w).unwrap();
}

/// Cut the log after event `keep`, then resume it with fresh backends.
fn resume_from(task: &SyntheticTask, path: &Path, keep: usize) {
    let log = read_events::<RunEvent>(path).unwrap();
    let engine = Engine::new(task_backends(task.clone()), Templates::default());
    let catalog = Catalog::bundled();
    let mut w = EventWriter::resume(path, log.ends[keep]).unwrap();
    let mut s = Session::resume(&log.events[..=keep], default_config(task.seed), &engine, &catalog).unwrap().unwrap();
    s.run(&mut w).unwrap();
}

#[test]
fn criterion_6_resume_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = generate_tasks(50, 0);
    let mut checked = 0;
    let mut identical = true;
    let mut multi = 0;
    for task in tasks.iter().take(12) {
        let golden_log = dir.path().join(format!("{}.jsonl", task.id));
        logged_run(task, &golden_log);
        let golden_bytes = fs::read(&golden_log).unwrap();
        let events = read_events::<RunEvent>(&golden_log).unwrap().events;
        let cuts: Vec<usize> = events
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, RunEvent::Stage1Done { .. } | RunEvent::Iteration(_)))
            .map(|(i, _)| i)
            .collect();
        multi += (cuts.len() > 2) as usize;
        for keep in cuts {
            let path = dir.path().join("cut.jsonl");
            fs::write(&path, &golden_bytes).unwrap();
            resume_from(task, &path, keep);
            identical &= fs::read(&path).unwrap() == golden_bytes;
            checked += 1;
        }
    }
    report(
        6,
        identical && multi > 0,
        format!("{checked} interruptions over 12 runs ({multi} with 2+ iterations), all byte-identical {identical}"),
    );
}

/// A known defect in a rendered image: its aspect and the words that name it.
struct Defect {
    aspect: Aspect,
    subjects: Vec<String>,
}

fn defects(task: &SyntheticTask, scene: &promptsearch::synthetic::SceneSpec) -> Vec<Defect> {
    let mut out: Vec<Defect> = constraints(&task.ground_truth)
        .into_iter()
        .filter(|c| !c.holds(scene))
        .map(|c| {
            let subjects = match &c {
                Constraint::Exists { noun }
                | Constraint::Count { noun, .. }
                | Constraint::Attribute { noun, .. }
                | Constraint::Excluded { noun } => vec![noun.clone()],
                Constraint::Relation { subject, object, .. } => vec![subject.clone(), object.clone()],
                Constraint::Background { value } | Constraint::Style { value } => vec![value.clone()],
                Constraint::Uncluttered => vec![],
            };
            Defect { aspect: c.aspect(), subjects }
        })
        .collect();
    for o in &scene.objects {
        if o.count > 0 && task.ground_truth.object(&o.noun).is_none() {
            out.push(Defect { aspect: Aspect::Existence, subjects: vec![o.noun.clone()] });
        }
    }
    out
}

fn describes(record: &ErrorRecord, defect: &Defect) -> bool {
    record.category == defect.aspect && record.subject().is_some_and(|s| defect.subjects.contains(&s))
}

#[test]
fn criterion_7_integration_covers_every_detected_defect() {
    let (mut injected, mut detected, mut covered, mut duplicates, mut unaccounted) = (0, 0, 0, 0, 0);
    for (i, t) in generate_tasks(100, 7).into_iter().enumerate() {
        let task = adhoc_task(&t.prompt, CorruptionProfile::uniform(0.5).with_clutter(0.3), i as u64).unwrap();
        let engine = Engine::new(task_backends(task.clone()), Templates::default());
        let pieces = decompose_prompt(&task.prompt, &engine).unwrap();
        let questions = generate_questions(&pieces, &engine).unwrap();
        let image = engine.backends.generate_image(&task.prompt, i as u64).unwrap();
        let scene = load_scene(&engine.backends.store, &image).unwrap();
        let (vqa, caption, integration) = detect_errors(&image, &task.prompt, &questions, &engine).unwrap();
        let eu = &integration.errors.records;
        let found = defects(&task, &scene);
        injected += found.len();
        for d in &found {
            if vqa.records.iter().chain(&caption.errors.records).any(|r| describes(r, d)) {
                detected += 1;
                covered += eu.iter().any(|r| describes(r, d)) as usize;
            }
        }
        for (a, ra) in eu.iter().enumerate() {
            duplicates += eu[a + 1..].iter().filter(|rb| rb.dedup_key() == ra.dedup_key()).count();
        }
        let labels = (0..vqa.len()).map(|i| format!("vqa:{i}")).chain((0..caption.errors.len()).map(|i| format!("caption:{i}")));
        for label in labels {
            let kept = eu.iter().filter(|r| r.sources.contains(&label)).count();
            let rejected = integration.rejected.iter().any(|r| r.source == label);
            duplicates += kept.saturating_sub(1);
            unaccounted += (kept == 0 && !rejected) as usize;
        }
    }
    let coverage = covered as f64 / detected.max(1) as f64;
    report(
        7,
        detected > 0 && covered == detected && duplicates == 0 && unaccounted == 0,
        format!(
            "100 images, {injected} injected defects, {detected} detected, coverage {:.1}%, {duplicates} duplicates, {unaccounted} findings unaccounted",
            coverage * 100.0
        ),
    );
}
