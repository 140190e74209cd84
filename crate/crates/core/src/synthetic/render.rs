//! Seeded, prompt-sensitive "rendering" of a prompt into a scene.
//!
//! The scene starts as the parse of the prompt. Every constraint the prompt
//! expresses is then corrupted iff
//!
//! ```text
//! unit(hash(render_key(prompt), constraint_id, seed)) < susceptibility(aspect) * Π multipliers
//! ```
//!
//! where the multipliers come from mitigation features found in the clauses
//! that mention the constraint's subject (see [`mitigation_features`]).
//! A constraint carrying all of its features is never corrupted, so every
//! task can reach a perfect score.
//! `render_key` is the id of the scene the prompt asks for, so rewording
//! that requests the same scene keeps the same draws: only mitigation
//! features move a constraint across its threshold. A prompt that asks for
//! a different scene draws afresh.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::lexicon::{self, noun_forms};
use super::scene::{parse_prompt, AttrKind, ParsedPrompt, SceneObject, SceneSpec};
use super::tasks::{CorruptionProfile, SyntheticTask};
use super::{encode_scene_png, SimError};
use crate::backends::{
    ArtifactStore, BackendConfig, BackendError, ImageBackend, ImageRef, Provenance,
};
use crate::error_analysis::Aspect;
use crate::text::{sha256_hex, stable_hash, unit_interval};

pub const EMPHASIS_MULT: f64 = 0.6;

pub const COUNT_EXACT: &[&str] = &["exactly", "precisely"];
pub const COUNT_EXACT_MULT: f64 = 0.35;
pub const COUNT_REPEAT_MULT: f64 = 0.45;

pub const REPEAT_MULT: f64 = 0.4;
pub const DETAIL_MULT: f64 = 0.5;
pub const COLOR_WORDS: &[&str] = &["vivid", "bright", "pure", "deep", "solid", "entirely"];
pub const TEXTURE_WORDS: &[&str] = &["detailed", "textured", "pronounced", "tactile"];
pub const STATE_WORDS: &[&str] = &["fully", "obviously", "definitely"];
pub const SHAPE_WORDS: &[&str] = &["perfectly", "geometric", "sharply"];
pub const EXIST_WORDS: &[&str] = &["prominent", "visible", "whole"];

pub const RELATION_WORDS: &[&str] = &["directly", "precisely", "exactly"];
pub const RELATION_WORD_MULT: f64 = 0.4;
pub const RELATION_REPEAT_MULT: f64 = 0.5;

pub const EXCLUSION_WORDS: &[&str] = &["absolutely", "strictly", "completely"];
pub const EXCLUSION_WORD_MULT: f64 = 0.35;
pub const EXCLUSION_REPEAT_MULT: f64 = 0.45;
pub const EXCLUSION_FREE_MULT: f64 = 0.6;

pub const BACKGROUND_WORDS: &[&str] = &["detailed"];
pub const STYLE_WORDS: &[&str] = &["strictly", "consistent", "uniform"];

pub const CLUTTER_NOTHING_MULT: f64 = 0.3;
pub const CLUTTER_ONLY_MULT: f64 = 0.5;

/// One checkable requirement a prompt places on its image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Exists { noun: String },
    Count { noun: String, count: u32 },
    Attribute { noun: String, attr: AttrKind, value: String },
    Relation { subject: String, predicate: String, object: String },
    Excluded { noun: String },
    Background { value: String },
    Style { value: String },
    /// Nothing unrequested appears.
    Uncluttered,
}

impl Constraint {
    pub fn id(&self) -> String {
        match self {
            Constraint::Exists { noun } => format!("exist:{noun}"),
            Constraint::Count { noun, .. } => format!("count:{noun}"),
            Constraint::Attribute { noun, attr, .. } => format!("{}:{noun}", attr.as_str()),
            Constraint::Relation { subject, predicate, object } => {
                format!("rel:{subject}:{predicate}:{object}")
            }
            Constraint::Excluded { noun } => format!("excl:{noun}"),
            Constraint::Background { .. } => "bg".into(),
            Constraint::Style { .. } => "style".into(),
            Constraint::Uncluttered => "clutter".into(),
        }
    }

    /// The aspect whose susceptibility governs this constraint.
    pub fn aspect(&self) -> Aspect {
        match self {
            Constraint::Exists { .. } | Constraint::Excluded { .. } | Constraint::Uncluttered => {
                Aspect::Existence
            }
            Constraint::Count { .. } => Aspect::Number,
            Constraint::Attribute { attr, .. } => attr_aspect(*attr),
            Constraint::Relation { predicate, .. } => {
                if lexicon::is_position_predicate(predicate) {
                    Aspect::Position
                } else {
                    Aspect::Relation
                }
            }
            Constraint::Background { .. } => Aspect::Background,
            Constraint::Style { .. } => Aspect::Style,
        }
    }

    /// Whether the scene satisfies the constraint.
    pub fn holds(&self, scene: &SceneSpec) -> bool {
        match self {
            Constraint::Exists { noun } => scene.count_of(noun) >= 1,
            Constraint::Count { noun, count } => scene.count_of(noun) == *count,
            Constraint::Attribute { noun, attr, value } => scene
                .object(noun)
                .is_some_and(|o| o.count > 0 && o.attribute(*attr) == Some(value.as_str())),
            Constraint::Relation { subject, predicate, object } => {
                scene.predicate_between(subject, object) == Some(predicate.as_str())
            }
            Constraint::Excluded { noun } => scene.count_of(noun) == 0,
            Constraint::Background { value } => scene.background == *value,
            Constraint::Style { value } => scene.style == *value,
            Constraint::Uncluttered => true,
        }
    }
}

pub fn attr_aspect(attr: AttrKind) -> Aspect {
    match attr {
        AttrKind::Color => Aspect::Color,
        AttrKind::Shape => Aspect::Shape,
        AttrKind::State => Aspect::State,
        AttrKind::Texture => Aspect::Texture,
    }
}

/// Constraints expressed by a parsed prompt, in a fixed order.
pub fn constraints(scene: &SceneSpec) -> Vec<Constraint> {
    let mut out = Vec::new();
    for o in &scene.objects {
        out.push(Constraint::Exists { noun: o.noun.clone() });
        if o.count >= 2 {
            out.push(Constraint::Count { noun: o.noun.clone(), count: o.count });
        }
        for attr in AttrKind::ALL {
            if let Some(v) = o.attribute(attr) {
                out.push(Constraint::Attribute {
                    noun: o.noun.clone(),
                    attr,
                    value: v.to_string(),
                });
            }
        }
    }
    for r in &scene.relations {
        out.push(Constraint::Relation {
            subject: scene.objects[r.subject].noun.clone(),
            predicate: r.predicate.clone(),
            object: scene.objects[r.object].noun.clone(),
        });
    }
    for noun in &scene.exclusions {
        out.push(Constraint::Excluded { noun: noun.clone() });
    }
    if !scene.background.is_empty() {
        out.push(Constraint::Background { value: scene.background.clone() });
    }
    if !scene.style.is_empty() {
        out.push(Constraint::Style { value: scene.style.clone() });
    }
    out.push(Constraint::Uncluttered);
    out
}

/// A mitigation feature found in the prompt and its multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mitigation {
    pub name: &'static str,
    pub multiplier: f64,
}

fn occurrences(toks: &[&str], pred: impl Fn(&str) -> bool) -> usize {
    toks.iter().filter(|t| pred(t)).count()
}

fn any_of(toks: &[&str], words: &[&str]) -> bool {
    toks.iter().any(|t| words.contains(t))
}

fn push_if(out: &mut Vec<Mitigation>, cond: bool, name: &'static str, multiplier: f64) {
    if cond {
        out.push(Mitigation { name, multiplier });
    }
}

/// Mitigation features of `constraint` present in the prompt.
pub fn mitigation_features(constraint: &Constraint, parsed: &ParsedPrompt) -> Vec<Mitigation> {
    let mut out = Vec::new();
    let emphasis = |toks: &[&str]| any_of(toks, lexicon::EMPHASIS);
    match constraint {
        Constraint::Count { noun, count } => {
            let toks = parsed.clauses_mentioning(&noun_forms(noun));
            push_if(&mut out, any_of(&toks, COUNT_EXACT), "count_exact", COUNT_EXACT_MULT);
            let repeats = occurrences(&toks, |t| {
                !matches!(t, "a" | "an") && lexicon::count_value(t) == Some(*count)
            });
            push_if(&mut out, repeats >= 2, "count_repeat", COUNT_REPEAT_MULT);
            push_if(&mut out, emphasis(&toks), "emphasis", EMPHASIS_MULT);
        }
        Constraint::Exists { noun } => {
            let forms = noun_forms(noun);
            let toks = parsed.clauses_mentioning(&forms);
            push_if(&mut out, any_of(&toks, EXIST_WORDS), "exist_word", DETAIL_MULT);
            let repeats = occurrences(&toks, |t| forms.contains(&t));
            push_if(&mut out, repeats >= 2, "noun_repeat", REPEAT_MULT);
            push_if(&mut out, emphasis(&toks), "emphasis", EMPHASIS_MULT);
        }
        Constraint::Attribute { noun, attr, value } => {
            let toks = parsed.clauses_mentioning(&noun_forms(noun));
            let words = match attr {
                AttrKind::Color => COLOR_WORDS,
                AttrKind::Texture => TEXTURE_WORDS,
                AttrKind::State => STATE_WORDS,
                AttrKind::Shape => SHAPE_WORDS,
            };
            push_if(&mut out, any_of(&toks, words), "attr_word", DETAIL_MULT);
            let repeats = occurrences(&toks, |t| t == value);
            push_if(&mut out, repeats >= 2, "attr_repeat", REPEAT_MULT);
            push_if(&mut out, emphasis(&toks), "emphasis", EMPHASIS_MULT);
        }
        Constraint::Relation { subject, predicate, .. } => {
            let toks = parsed.clauses_mentioning(&noun_forms(subject));
            push_if(&mut out, any_of(&toks, RELATION_WORDS), "relation_word", RELATION_WORD_MULT);
            let repeats = occurrences(&toks, |t| t == predicate);
            push_if(&mut out, repeats >= 2, "relation_repeat", RELATION_REPEAT_MULT);
            push_if(&mut out, emphasis(&toks), "emphasis", EMPHASIS_MULT);
        }
        Constraint::Excluded { noun } => {
            let forms = noun_forms(noun);
            let toks = parsed.clauses_mentioning(&forms);
            push_if(&mut out, any_of(&toks, EXCLUSION_WORDS), "exclusion_word", EXCLUSION_WORD_MULT);
            let repeats = occurrences(&toks, |t| forms.contains(&t));
            push_if(&mut out, repeats >= 2, "exclusion_repeat", EXCLUSION_REPEAT_MULT);
            push_if(&mut out, any_of(&toks, &["free"]), "exclusion_free", EXCLUSION_FREE_MULT);
        }
        Constraint::Background { value } => {
            let toks = parsed.clauses_mentioning(&[value.as_str()]);
            push_if(&mut out, any_of(&toks, BACKGROUND_WORDS), "background_word", DETAIL_MULT);
            let repeats = occurrences(&toks, |t| t == value);
            push_if(&mut out, repeats >= 2, "background_repeat", REPEAT_MULT);
            push_if(&mut out, emphasis(&toks), "emphasis", EMPHASIS_MULT);
        }
        Constraint::Style { value } => {
            let toks = parsed.clauses_mentioning(&[value.as_str()]);
            push_if(&mut out, any_of(&toks, STYLE_WORDS), "style_word", DETAIL_MULT);
            let repeats = occurrences(&toks, |t| t == value);
            push_if(&mut out, repeats >= 2, "style_repeat", REPEAT_MULT);
            push_if(&mut out, emphasis(&toks), "emphasis", EMPHASIS_MULT);
        }
        Constraint::Uncluttered => {
            let toks = parsed.all_tokens();
            push_if(&mut out, any_of(&toks, &["nothing"]), "clutter_nothing", CLUTTER_NOTHING_MULT);
            push_if(&mut out, any_of(&toks, &["only"]), "clutter_only", CLUTTER_ONLY_MULT);
        }
    }
    out
}

/// Number of distinct mitigation features a constraint can carry.
pub fn feature_kinds(constraint: &Constraint) -> usize {
    match constraint {
        Constraint::Uncluttered => 2,
        _ => 3,
    }
}

/// Probability that `constraint` is corrupted when rendering `parsed`.
/// A constraint carrying every feature of its kind is never corrupted.
pub fn corruption_probability(
    constraint: &Constraint,
    parsed: &ParsedPrompt,
    profile: &CorruptionProfile,
) -> f64 {
    let base = match constraint {
        Constraint::Uncluttered => profile.clutter,
        other => profile.susceptibility(other.aspect()),
    };
    let features = mitigation_features(constraint, parsed);
    if features.len() >= feature_kinds(constraint) {
        return 0.0;
    }
    features.iter().fold(base, |p, m| p * m.multiplier)
}

/// What determines the render draws: the requested scene.
pub fn render_key(parsed: &ParsedPrompt) -> String {
    parsed.scene.id()
}

fn draw(key: &str, constraint_id: &str, seed: u64, salt: &str) -> u64 {
    stable_hash(&[key.as_bytes(), constraint_id.as_bytes(), &seed.to_le_bytes(), salt.as_bytes()])
}

/// Whether `constraint` is corrupted for this prompt and seed.
pub fn is_corrupted(
    constraint: &Constraint,
    parsed: &ParsedPrompt,
    profile: &CorruptionProfile,
    seed: u64,
) -> bool {
    let key = render_key(parsed);
    unit_interval(draw(&key, &constraint.id(), seed, "gate"))
        < corruption_probability(constraint, parsed, profile)
}

fn pick_other<'a>(vocab: &[&'a str], current: &str, h: u64) -> &'a str {
    let others: Vec<&str> = vocab.iter().copied().filter(|v| *v != current).collect();
    others[(h % others.len() as u64) as usize]
}

/// Render a prompt for a task: parse, then corrupt per the threshold rule.
pub fn render_scene(prompt: &str, task: &SyntheticTask, seed: u64) -> Result<SceneSpec, SimError> {
    if prompt.trim().is_empty() {
        return Err(SimError::Grammar("empty prompt".into()));
    }
    let parsed = parse_prompt(prompt)?;
    Ok(render_parsed(&parsed, &task.profile, seed))
}

pub fn render_parsed(parsed: &ParsedPrompt, profile: &CorruptionProfile, seed: u64) -> SceneSpec {
    let key = render_key(parsed);
    let mut scene = parsed.scene.clone();
    let excluded = std::mem::take(&mut scene.exclusions);
    for c in constraints(&parsed.scene) {
        let id = c.id();
        if unit_interval(draw(&key, &id, seed, "gate")) >= corruption_probability(&c, parsed, profile)
        {
            continue;
        }
        let h = draw(&key, &id, seed, "effect");
        match &c {
            Constraint::Exists { noun } => {
                if let Some(i) = scene.index_of(noun) {
                    scene.objects[i].count = 0;
                }
            }
            Constraint::Count { noun, count } => {
                let Some(i) = scene.index_of(noun) else { continue };
                if scene.objects[i].count == 0 {
                    continue;
                }
                let features = mitigation_features(&c, parsed).len() as u64;
                let spread = 3u64.saturating_sub(features).max(1);
                let d = 1 + (h % spread) as u32;
                scene.objects[i].count = if *count > d { count - d } else { count + d };
            }
            Constraint::Attribute { noun, attr, value } => {
                let Some(i) = scene.index_of(noun) else { continue };
                let slot = scene.objects[i].attribute_mut(*attr);
                *slot = match attr {
                    AttrKind::Texture => None,
                    _ => Some(pick_other(attr.vocabulary(), value, h).to_string()),
                };
            }
            Constraint::Relation { subject, object, predicate } => {
                let (Some(s), Some(o)) = (scene.index_of(subject), scene.index_of(object)) else {
                    continue;
                };
                let all: Vec<&str> = lexicon::RELATION_PREDICATES
                    .iter()
                    .chain(lexicon::POSITION_PREDICATES)
                    .copied()
                    .collect();
                let new = pick_other(&all, predicate, h).to_string();
                if let Some(r) = scene.relations.iter_mut().find(|r| r.subject == s && r.object == o) {
                    r.predicate = new;
                }
            }
            Constraint::Excluded { noun } => {
                if scene.index_of(noun).is_none() {
                    scene.objects.push(SceneObject::new(noun, 1));
                }
            }
            Constraint::Background { value } => {
                scene.background = pick_other(lexicon::BACKGROUNDS, value, h).to_string();
            }
            Constraint::Style { value } => {
                scene.style = pick_other(lexicon::STYLES, value, h).to_string();
            }
            Constraint::Uncluttered => {
                let candidates: Vec<&str> = lexicon::NOUNS
                    .iter()
                    .map(|(s, _)| *s)
                    .filter(|n| scene.index_of(n).is_none() && !excluded.iter().any(|x| x == n))
                    .collect();
                if !candidates.is_empty() {
                    let noun = candidates[(h % candidates.len() as u64) as usize];
                    scene.objects.push(SceneObject::new(noun, 1));
                }
            }
        }
    }
    scene
}

/// Text-to-image backend that renders prompts into scenes for one task.
///
/// The scene is stored as a sidecar JSON document keyed by its id, and a
/// small placeholder PNG encoding the scene becomes the image bytes.
pub struct SyntheticImager {
    task: Arc<SyntheticTask>,
    store: Arc<ArtifactStore>,
}

impl SyntheticImager {
    pub fn new(task: Arc<SyntheticTask>, store: Arc<ArtifactStore>) -> Self {
        Self { task, store }
    }
}

impl ImageBackend for SyntheticImager {
    fn id(&self) -> &str {
        "synthetic-imager"
    }

    fn generate(
        &self,
        prompt: &str,
        seed: u64,
        _config: &BackendConfig,
    ) -> Result<ImageRef, BackendError> {
        let scene = render_scene(prompt, &self.task, seed)
            .map_err(|e| BackendError::ContentRejected(e.to_string()))?;
        store_scene(&self.store, &scene, prompt)
    }
}

/// Persist a scene and its placeholder PNG; returns the image handle.
pub fn store_scene(
    store: &ArtifactStore,
    scene: &SceneSpec,
    prompt: &str,
) -> Result<ImageRef, BackendError> {
    let scene_id = scene.id();
    store.put_sidecar(&scene_id, serde_json::to_vec(scene).expect("scene serializes"))?;
    let png = encode_scene_png(scene)?;
    Ok(store.put(
        png,
        "image/png",
        Provenance::Synthetic {
            prompt_id: sha256_hex(prompt.as_bytes())[..16].to_string(),
            scene_id,
        },
    )?)
}

/// Load the scene behind a synthetic image.
pub fn load_scene(store: &ArtifactStore, image: &ImageRef) -> Result<SceneSpec, SimError> {
    let id = image
        .scene_id()
        .ok_or_else(|| SimError::InvalidScene("image has no synthetic scene".into()))?;
    let bytes = store.sidecar(id).map_err(|e| SimError::InvalidScene(e.to_string()))?;
    let scene: SceneSpec =
        serde_json::from_slice(&bytes).map_err(|e| SimError::InvalidScene(e.to_string()))?;
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::scene::parse_prompt;
    use crate::synthetic::tasks::{baozi_task, CorruptionProfile};

    #[test]
    fn zero_susceptibility_renders_ground_truth() {
        let task = SyntheticTask {
            profile: CorruptionProfile::uniform(0.0),
            ..baozi_task()
        };
        let prompt = "Remarkably, exactly six baozi in a bamboo steamer, six baozi in total";
        let scene = render_scene(prompt, &task, 7).unwrap();
        assert_eq!(scene, task.ground_truth);
    }

    #[test]
    fn rendering_is_pure() {
        let task = baozi_task();
        let a = render_scene("six baozi in a bamboo steamer", &task, 7).unwrap();
        let b = render_scene("six baozi in a bamboo steamer", &task, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fillers_do_not_change_the_render() {
        let task = baozi_task();
        for seed in 0..20 {
            let a = render_scene("six baozi in a bamboo steamer", &task, seed).unwrap();
            let b = render_scene("six lovely baozi in a cozy bamboo steamer", &task, seed).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn count_features_are_detected() {
        let parsed =
            parse_prompt("Remarkably, exactly six baozi in a bamboo steamer, six baozi in total").unwrap();
        let c = Constraint::Count { noun: "baozi".into(), count: 6 };
        let names: Vec<_> = mitigation_features(&c, &parsed).iter().map(|m| m.name).collect();
        assert_eq!(names, vec!["count_exact", "count_repeat", "emphasis"]);
        assert_eq!(corruption_probability(&c, &parsed, &CorruptionProfile::uniform(1.0)), 0.0);
        let parsed = parse_prompt("exactly six baozi in a bamboo steamer, six baozi in total").unwrap();
        let p = corruption_probability(&c, &parsed, &CorruptionProfile::uniform(1.0));
        assert!((p - COUNT_EXACT_MULT * COUNT_REPEAT_MULT).abs() < 1e-12);
    }

    #[test]
    fn constraint_holds_on_its_own_ground_truth() {
        let parsed = parse_prompt(
            "two green chairs next to a table, without any dog, with a kitchen background, in watercolor style",
        )
        .unwrap();
        let mut truth = parsed.scene.clone();
        truth.exclusions.clear();
        for c in constraints(&parsed.scene) {
            assert!(c.holds(&truth), "{c:?}");
        }
    }

    #[test]
    fn exclusion_corruption_adds_the_object() {
        let parsed = parse_prompt("a cup on a table, without any dog").unwrap();
        let profile = CorruptionProfile::uniform(0.0).with(Aspect::Existence, 1.0);
        let scene = render_parsed(&parsed, &profile, 3);
        assert_eq!(scene.count_of("dog"), 1);
        assert_eq!(scene.count_of("cup"), 0);
    }

    #[test]
    fn synthetic_image_round_trips_through_store() {
        let store = Arc::new(ArtifactStore::in_memory());
        let imager = SyntheticImager::new(Arc::new(baozi_task()), store.clone());
        let image = imager.generate("six baozi in a bamboo steamer", 7, &BackendConfig::default()).unwrap();
        let scene = load_scene(&store, &image).unwrap();
        assert_eq!(scene, render_scene("six baozi in a bamboo steamer", &baozi_task(), 7).unwrap());
        assert!(scene.validate().is_ok());
        assert!(store.resolve(&image).is_ok());
    }
}
