//! Synthetic optimization tasks.
//!
//! Tasks cycle through ten families, one per aspect category, in the order
//! of [`TaskFamily::ALL`]. The focus aspect of a family gets a high
//! susceptibility that depends on the task's difficulty (`index % 3`:
//! easy 0.6, medium 0.8, hard 0.95); every other aspect gets 0.15 and
//! clutter 0.05.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{self, count_word, plural, with_article as a};
use super::render::constraints;
use super::scene::{parse_prompt, SceneSpec};
use super::SimError;
use crate::error_analysis::Aspect;
use crate::text::mix_seed;

pub const DIFFICULTY_FOCUS: [f64; 3] = [0.6, 0.8, 0.95];
pub const BACKGROUND_SUSCEPTIBILITY: f64 = 0.15;
pub const CLUTTER_SUSCEPTIBILITY: f64 = 0.05;

/// Per-aspect corruption susceptibility in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionProfile {
    pub aspects: BTreeMap<Aspect, f64>,
    /// Chance an unrequested object shows up.
    pub clutter: f64,
}

impl CorruptionProfile {
    pub fn uniform(p: f64) -> Self {
        Self { aspects: Aspect::ALL.iter().map(|a| (*a, p)).collect(), clutter: p }
    }

    pub fn with(mut self, aspect: Aspect, p: f64) -> Self {
        self.aspects.insert(aspect, p);
        self
    }

    pub fn with_clutter(mut self, p: f64) -> Self {
        self.clutter = p;
        self
    }

    pub fn susceptibility(&self, aspect: Aspect) -> f64 {
        self.aspects.get(&aspect).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Count,
    ColorBinding,
    Spatial,
    Relation,
    Exclusion,
    Texture,
    State,
    Shape,
    Background,
    Style,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 10] = [
        TaskFamily::Count,
        TaskFamily::ColorBinding,
        TaskFamily::Spatial,
        TaskFamily::Relation,
        TaskFamily::Exclusion,
        TaskFamily::Texture,
        TaskFamily::State,
        TaskFamily::Shape,
        TaskFamily::Background,
        TaskFamily::Style,
    ];

    pub fn focus(self) -> Aspect {
        match self {
            TaskFamily::Count => Aspect::Number,
            TaskFamily::ColorBinding => Aspect::Color,
            TaskFamily::Spatial => Aspect::Position,
            TaskFamily::Relation => Aspect::Relation,
            TaskFamily::Exclusion => Aspect::Existence,
            TaskFamily::Texture => Aspect::Texture,
            TaskFamily::State => Aspect::State,
            TaskFamily::Shape => Aspect::Shape,
            TaskFamily::Background => Aspect::Background,
            TaskFamily::Style => Aspect::Style,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: String,
    pub family: TaskFamily,
    pub prompt: String,
    pub ground_truth: SceneSpec,
    pub profile: CorruptionProfile,
    pub seed: u64,
}

impl SyntheticTask {
    /// Build a task from a grammar prompt; the ground truth is its parse.
    pub fn from_prompt(
        id: impl Into<String>,
        family: TaskFamily,
        prompt: impl Into<String>,
        profile: CorruptionProfile,
        seed: u64,
    ) -> Self {
        let prompt = prompt.into();
        let mut ground_truth = parse_prompt(&prompt).expect("task prompt follows the grammar").scene;
        ground_truth.exclusions.clear();
        Self { id: id.into(), family, prompt, ground_truth, profile, seed }
    }
}

/// A task for an arbitrary grammar prompt, with every aspect equally
/// susceptible. The family follows the first constraint beyond existence.
pub fn adhoc_task(prompt: &str, profile: CorruptionProfile, seed: u64) -> Result<SyntheticTask, SimError> {
    let parsed = parse_prompt(prompt)?;
    let family = constraints(&parsed.scene)
        .iter()
        .find(|c| c.aspect() != Aspect::Existence)
        .and_then(|c| TaskFamily::ALL.iter().copied().find(|f| f.focus() == c.aspect()))
        .unwrap_or(TaskFamily::Count);
    Ok(SyntheticTask::from_prompt("adhoc", family, prompt, profile, seed))
}

/// The steamed-bun counting task used as the reference trajectory.
pub fn baozi_task() -> SyntheticTask {
    let profile = CorruptionProfile::uniform(0.1)
        .with(Aspect::Number, 0.9)
        .with_clutter(0.0);
    SyntheticTask::from_prompt("baozi", TaskFamily::Count, "six baozi in a bamboo steamer", profile, 7)
}

fn nouns(rng: &mut ChaCha8Rng, k: usize) -> Vec<&'static str> {
    let all: Vec<&str> = lexicon::NOUNS.iter().map(|(s, _)| *s).collect();
    all.choose_multiple(rng, k).copied().collect()
}

fn pick(rng: &mut ChaCha8Rng, list: &[&'static str]) -> &'static str {
    list.choose(rng).copied().expect("non-empty vocabulary")
}

fn prompt_for(family: TaskFamily, rng: &mut ChaCha8Rng) -> String {
    let n = nouns(rng, 3);
    match family {
        TaskFamily::Count => {
            let k = rng.random_range(2..=7);
            let texture = pick(rng, lexicon::TEXTURES);
            format!("{} {} on {} {}", count_word(k), plural(n[0]), a(texture), n[1])
        }
        TaskFamily::ColorBinding => {
            let c: Vec<&str> = lexicon::COLORS.choose_multiple(rng, 2).copied().collect();
            format!("{} {} beside {} {}", a(c[0]), n[0], a(c[1]), n[1])
        }
        TaskFamily::Spatial => format!(
            "{} {} {}, with {} background",
            a(n[0]),
            pick(rng, lexicon::POSITION_PREDICATES),
            a(n[1]),
            a(pick(rng, lexicon::BACKGROUNDS))
        ),
        TaskFamily::Relation => {
            format!("{} inside {} {}", a(n[0]), a(pick(rng, lexicon::COLORS)), n[1])
        }
        TaskFamily::Exclusion => {
            let k = rng.random_range(2..=4);
            format!("{} {} on {}, without any {}", count_word(k), plural(n[0]), a(n[1]), n[2])
        }
        TaskFamily::Texture => {
            format!("{} {} next to {}", a(pick(rng, lexicon::TEXTURES)), n[0], a(n[1]))
        }
        TaskFamily::State => format!("{} {} on {}", a(pick(rng, lexicon::STATES)), n[0], a(n[1])),
        TaskFamily::Shape => format!("{} {} in {}", a(pick(rng, lexicon::SHAPES)), n[0], a(n[1])),
        TaskFamily::Background => format!(
            "{} {} with {} background",
            a(pick(rng, lexicon::COLORS)),
            n[0],
            a(pick(rng, lexicon::BACKGROUNDS))
        ),
        TaskFamily::Style => {
            let k = rng.random_range(2..=4);
            format!("{} {} in {} style", count_word(k), plural(n[0]), pick(rng, lexicon::STYLES))
        }
    }
}

/// Deterministic task list cycling through all families.
pub fn generate_tasks(count: usize, seed: u64) -> Vec<SyntheticTask> {
    (0..count)
        .map(|i| {
            let family = TaskFamily::ALL[i % TaskFamily::ALL.len()];
            let task_seed = mix_seed(seed, &[i as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
            let prompt = prompt_for(family, &mut rng);
            let profile = CorruptionProfile::uniform(BACKGROUND_SUSCEPTIBILITY)
                .with(family.focus(), DIFFICULTY_FOCUS[i % 3])
                .with_clutter(CLUTTER_SUSCEPTIBILITY);
            SyntheticTask::from_prompt(format!("task-{i:03}"), family, prompt, profile, task_seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_tasks(50, 0), generate_tasks(50, 0));
        assert_ne!(generate_tasks(5, 0), generate_tasks(5, 1));
    }

    #[test]
    fn single_task_has_valid_ground_truth() {
        let tasks = generate_tasks(1, 3);
        assert_eq!(tasks.len(), 1);
        assert!(!tasks[0].ground_truth.objects.is_empty());
        assert!(tasks[0].ground_truth.validate().is_ok());
    }

    // Oracle: enumerate the constraints of every generated prompt and
    // collect the aspects they exercise.
    #[test]
    fn twelve_tasks_cover_at_least_six_aspects() {
        let covered: BTreeSet<Aspect> = generate_tasks(12, 0)
            .iter()
            .flat_map(|t| {
                let parsed = parse_prompt(&t.prompt).unwrap();
                constraints(&parsed.scene).into_iter().map(|c| c.aspect()).collect::<Vec<_>>()
            })
            .collect();
        assert!(covered.len() >= 6, "{covered:?}");
        let focus: BTreeSet<Aspect> = generate_tasks(12, 0).iter().map(|t| t.family.focus()).collect();
        assert_eq!(focus.len(), 10);
    }

    #[test]
    fn adhoc_tasks_follow_the_prompt() {
        let t = adhoc_task("six baozi in a bamboo steamer", CorruptionProfile::uniform(0.5), 1).unwrap();
        assert_eq!(t.family, TaskFamily::Count);
        assert_eq!(t.ground_truth.objects[0].count, 6);
        assert!(adhoc_task("an unknown thing", CorruptionProfile::uniform(0.5), 1).is_err());
    }

    #[test]
    fn ground_truth_satisfies_prompt_constraints() {
        for t in generate_tasks(30, 11) {
            let parsed = parse_prompt(&t.prompt).unwrap();
            for c in constraints(&parsed.scene) {
                assert!(c.holds(&t.ground_truth), "{} violates {c:?}", t.prompt);
            }
        }
    }
}
