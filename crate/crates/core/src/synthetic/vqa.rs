//! Exact oracles over scenes: yes/no answers, captions and caption/prompt
//! comparison.
//!
//! Questions are read with the prompt grammar, so the oracle answers any
//! question of the forms produced by [`question_for`]:
//!
//! | aspect | form |
//! |---|---|
//! | existence | `Is there a cat?` / `Is the image free of any dog?` |
//! | number | `Are there six baozi?` |
//! | color, state | `Is the apple red?` |
//! | texture, shape | `Is the board frosty in texture?` |
//! | relation, position | `Is the cat on the mat?` |
//! | background | `Is there a kitchen background?` |
//! | style | `Is the image in watercolor style?` |

use super::lexicon::{self, count_word, plural, with_article};
use super::render::Constraint;
use super::scene::{parse_lenient, AttrKind, SceneSpec};
use super::SimError;
use crate::error_analysis::{Aspect, QuestionItem};

/// A yes/no verdict with the observed-vs-expected explanation on NO.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VqaAnswer {
    pub yes: bool,
    pub explanation: String,
}

impl VqaAnswer {
    fn yes() -> Self {
        Self { yes: true, explanation: String::new() }
    }

    fn no(observed: impl std::fmt::Display, expected: impl std::fmt::Display) -> Self {
        Self { yes: false, explanation: format!("observed {observed}, expected {expected}") }
    }

    /// Reply text in the format VQA agents are asked for.
    pub fn reply(&self) -> String {
        if self.yes {
            "YES".into()
        } else {
            format!("NO. {}", self.explanation)
        }
    }
}

/// The yes/no question checking one constraint (none for clutter).
pub fn question_for(constraint: &Constraint) -> Option<String> {
    let q = match constraint {
        Constraint::Exists { noun } => format!("Is there {}?", with_article(noun)),
        Constraint::Count { noun, count } => {
            format!("Are there {} {}?", count_word(*count), plural(noun))
        }
        Constraint::Attribute { noun, attr, value } => match attr {
            AttrKind::Color | AttrKind::State => format!("Is the {noun} {value}?"),
            AttrKind::Texture | AttrKind::Shape => {
                format!("Is the {noun} {value} in {}?", attr.as_str())
            }
        },
        Constraint::Relation { subject, predicate, object } => {
            format!("Is the {subject} {predicate} the {object}?")
        }
        Constraint::Excluded { noun } => format!("Is the image free of any {noun}?"),
        Constraint::Background { value } => format!("Is there {} background?", with_article(value)),
        Constraint::Style { value } => format!("Is the image in {value} style?"),
        Constraint::Uncluttered => return None,
    };
    Some(q)
}

fn count_phrase(n: u32, noun: &str) -> String {
    match n {
        0 => format!("no {}", plural(noun)),
        1 => format!("one {noun}"),
        _ => format!("{} {}", n, plural(noun)),
    }
}

/// Answer a question exactly against a scene.
pub fn mock_vqa_answer(scene: &SceneSpec, question: &QuestionItem) -> Result<VqaAnswer, SimError> {
    let asked = parse_lenient(&question.question_text).scene;
    let unsupported = || SimError::UnsupportedAspect(question.aspect, question.question_text.clone());
    let first = asked.objects.first();
    let answer = match question.aspect {
        Aspect::Existence => {
            if let Some(noun) = asked.exclusions.first() {
                match scene.count_of(noun) {
                    0 => VqaAnswer::yes(),
                    n => VqaAnswer::no(count_phrase(n, noun), "none"),
                }
            } else {
                let noun = &first.ok_or_else(unsupported)?.noun;
                match scene.count_of(noun) {
                    0 => VqaAnswer::no(count_phrase(0, noun), format!("at least one {noun}")),
                    _ => VqaAnswer::yes(),
                }
            }
        }
        Aspect::Number => {
            let o = first.ok_or_else(unsupported)?;
            let observed = scene.count_of(&o.noun);
            if observed == o.count {
                VqaAnswer::yes()
            } else {
                VqaAnswer::no(observed, o.count)
            }
        }
        Aspect::Color | Aspect::Shape | Aspect::State | Aspect::Texture => {
            let kind = match question.aspect {
                Aspect::Color => AttrKind::Color,
                Aspect::Shape => AttrKind::Shape,
                Aspect::State => AttrKind::State,
                _ => AttrKind::Texture,
            };
            let o = first.ok_or_else(unsupported)?;
            let expected = o.attribute(kind).ok_or_else(unsupported)?;
            match scene.object(&o.noun).filter(|s| s.count > 0) {
                None => VqaAnswer::no(count_phrase(0, &o.noun), format!("a {expected} {}", o.noun)),
                Some(s) if s.attribute(kind) == Some(expected) => VqaAnswer::yes(),
                Some(s) => VqaAnswer::no(
                    format!("{} {}", s.attribute(kind).unwrap_or("no particular"), kind.as_str()),
                    expected,
                ),
            }
        }
        Aspect::Relation | Aspect::Position => {
            let r = asked.relations.first().ok_or_else(unsupported)?;
            let (s, o) = (&asked.objects[r.subject].noun, &asked.objects[r.object].noun);
            if scene.count_of(s) == 0 || scene.count_of(o) == 0 {
                let missing = if scene.count_of(s) == 0 { s } else { o };
                VqaAnswer::no(count_phrase(0, missing), format!("the {s} {} the {o}", r.predicate))
            } else {
                match scene.predicate_between(s, o) {
                    Some(p) if p == r.predicate => VqaAnswer::yes(),
                    Some(p) => VqaAnswer::no(
                        format!("the {s} {p} the {o}"),
                        format!("the {s} {} the {o}", r.predicate),
                    ),
                    None => VqaAnswer::no(
                        format!("no relation between the {s} and the {o}"),
                        format!("the {s} {} the {o}", r.predicate),
                    ),
                }
            }
        }
        Aspect::Background => {
            if asked.background.is_empty() {
                return Err(unsupported());
            }
            if scene.background == asked.background {
                VqaAnswer::yes()
            } else {
                VqaAnswer::no(
                    format!("{} background", or_plain(&scene.background)),
                    format!("{} background", asked.background),
                )
            }
        }
        Aspect::Style => {
            if asked.style.is_empty() {
                return Err(unsupported());
            }
            if scene.style == asked.style {
                VqaAnswer::yes()
            } else {
                VqaAnswer::no(
                    format!("{} style", or_plain(&scene.style)),
                    format!("{} style", asked.style),
                )
            }
        }
    };
    Ok(answer)
}

fn or_plain(value: &str) -> &str {
    if value.is_empty() {
        "plain"
    } else {
        value
    }
}

/// A caption listing objects with counts and colors, relations, background
/// and style. Textures, states and shapes are not described.
pub fn describe_scene(scene: &SceneSpec) -> String {
    let items: Vec<String> = scene
        .objects
        .iter()
        .filter(|o| o.count > 0)
        .map(|o| {
            let noun = if o.count == 1 { o.noun.as_str() } else { plural(&o.noun) };
            let phrase = match &o.color {
                Some(c) => format!("{c} {noun}"),
                None => noun.to_string(),
            };
            if o.count == 1 {
                with_article(&phrase)
            } else {
                format!("{} {phrase}", count_word(o.count))
            }
        })
        .collect();
    let mut sentences = vec![format!("The image shows {}", items.join(", "))];
    for r in &scene.relations {
        let (s, o) = (&scene.objects[r.subject], &scene.objects[r.object]);
        if s.count > 0 && o.count > 0 {
            sentences.push(format!("The {} is {} the {}", s.noun, r.predicate, o.noun));
        }
    }
    if !scene.background.is_empty() {
        sentences.push(format!("It has {} background", with_article(&scene.background)));
    }
    if !scene.style.is_empty() {
        sentences.push(format!("It is drawn in {} style", scene.style));
    }
    sentences.join(". ") + "."
}

/// Discrepancies between what a prompt asks for and what a caption says.
pub fn compare_caption(prompt: &str, caption: &str) -> Vec<(Aspect, String)> {
    let want = parse_lenient(prompt).scene;
    let seen = parse_lenient(caption).scene;
    let mut out = Vec::new();
    for o in &want.objects {
        let Some(c) = seen.object(&o.noun) else {
            out.push((
                Aspect::Existence,
                format!("the {} requested by the prompt is missing from the image", o.noun),
            ));
            continue;
        };
        if c.count != o.count {
            out.push((
                Aspect::Number,
                format!(
                    "the image shows {} {} but the prompt asks for {}",
                    count_word(c.count),
                    o.noun,
                    count_word(o.count)
                ),
            ));
        }
        if let (Some(w), Some(s)) = (&o.color, &c.color) {
            if w != s {
                out.push((
                    Aspect::Color,
                    format!("the {} is {s} in the image but {w} in the prompt", o.noun),
                ));
            }
        }
    }
    for r in &want.relations {
        let (s, o) = (&want.objects[r.subject].noun, &want.objects[r.object].noun);
        if seen.object(s).is_none() || seen.object(o).is_none() {
            continue;
        }
        let aspect = if lexicon::is_position_predicate(&r.predicate) {
            Aspect::Position
        } else {
            Aspect::Relation
        };
        match seen.predicate_between(s, o) {
            Some(p) if p == r.predicate => {}
            Some(p) => out.push((
                aspect,
                format!("the {s} is {p} the {o} instead of {} it", r.predicate),
            )),
            None => out.push((
                aspect,
                format!("the {s} is not {} the {o} in the image", r.predicate),
            )),
        }
    }
    for noun in &want.exclusions {
        if seen.object(noun).is_some() {
            out.push((
                Aspect::Existence,
                format!("the image contains {}, which the prompt excludes", with_article(noun)),
            ));
        }
    }
    for c in &seen.objects {
        if want.object(&c.noun).is_none() && !want.exclusions.contains(&c.noun) {
            out.push((Aspect::Existence, format!("an unrequested {} appears in the image", c.noun)));
        }
    }
    if !want.background.is_empty() && seen.background != want.background {
        out.push((
            Aspect::Background,
            format!(
                "the prompt asks for {} background but the image shows {}",
                with_article(&want.background),
                or_plain(&seen.background)
            ),
        ));
    }
    if !want.style.is_empty() && seen.style != want.style {
        out.push((
            Aspect::Style,
            format!(
                "the prompt asks for {} style but the image is {}",
                want.style,
                or_plain(&seen.style)
            ),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::render::constraints;
    use crate::synthetic::scene::{parse_prompt, SceneObject};

    fn q(aspect: Aspect, text: &str) -> QuestionItem {
        QuestionItem { id: 0, target: 0, aspect, question_text: text.into() }
    }

    fn baozi_scene(count: u32) -> SceneSpec {
        let mut scene = parse_prompt("six baozi in a bamboo steamer").unwrap().scene;
        scene.objects[0].count = count;
        scene
    }

    #[test]
    fn number_mismatch_reports_observed_and_expected() {
        let a = mock_vqa_answer(&baozi_scene(3), &q(Aspect::Number, "Are there six baozi?")).unwrap();
        assert!(!a.yes);
        assert_eq!(a.explanation, "observed 3, expected 6");
        assert!(a.reply().starts_with("NO"));
    }

    #[test]
    fn every_generated_question_holds_on_ground_truth() {
        let parsed = parse_prompt(
            "two green chairs next to a table, without any dog, with a kitchen background, in watercolor style. the table is wooden",
        )
        .unwrap();
        let mut truth = parsed.scene.clone();
        truth.exclusions.clear();
        for c in constraints(&parsed.scene) {
            if let Some(text) = question_for(&c) {
                let a = mock_vqa_answer(&truth, &q(c.aspect(), &text)).unwrap();
                assert!(a.yes, "{text}: {}", a.explanation);
            }
        }
    }

    #[test]
    fn style_question_without_style_is_unsupported() {
        let r = mock_vqa_answer(&baozi_scene(6), &q(Aspect::Style, "Is the image pretty?"));
        assert!(matches!(r, Err(SimError::UnsupportedAspect(..))));
    }

    #[test]
    fn caption_of_prompt_scene_agrees_with_prompt() {
        let prompt = "two green chairs next to a table, with a kitchen background, in watercolor style";
        let scene = parse_prompt(prompt).unwrap().scene;
        assert!(compare_caption(prompt, &describe_scene(&scene)).is_empty());
    }

    #[test]
    fn caption_flags_count_extra_and_excluded() {
        let prompt = "six baozi in a bamboo steamer, without any cat";
        let mut scene = baozi_scene(3);
        scene.objects.push(SceneObject::new("cat", 1));
        scene.objects.push(SceneObject::new("lamp", 1));
        let found = compare_caption(prompt, &describe_scene(&scene));
        let aspects: Vec<Aspect> = found.iter().map(|(a, _)| *a).collect();
        assert_eq!(aspects, vec![Aspect::Number, Aspect::Existence, Aspect::Existence]);
        assert!(found[2].1.contains("lamp"));
    }
}
