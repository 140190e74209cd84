//! Agent instructions as editable plain-text assets.
//!
//! Each template has a system part and a user part separated by a line
//! containing only `---`. Placeholders are written `{{name}}`; rendering
//! fails if any placeholder is left without a value. Defaults are compiled
//! in from `assets/templates/`; a directory of `<name>.txt` files can
//! override any of them.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::backends::AgentRole;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("template {name:?} has no value for placeholder {{{{{placeholder}}}}}")]
    Unfilled { name: String, placeholder: String },
    #[error("template {0:?} lacks the '---' separator between system and user parts")]
    Malformed(String),
    #[error("reading template overrides: {0}")]
    Io(#[from] io::Error),
}

const DEFAULTS: &[(&str, &str)] = &[
    ("decompose", include_str!("../assets/templates/decompose.txt")),
    ("questions", include_str!("../assets/templates/questions.txt")),
    ("vqa", include_str!("../assets/templates/vqa.txt")),
    ("caption", include_str!("../assets/templates/caption.txt")),
    ("compare_caption", include_str!("../assets/templates/compare_caption.txt")),
    ("integrate", include_str!("../assets/templates/integrate.txt")),
    ("map_errors", include_str!("../assets/templates/map_errors.txt")),
    ("refine", include_str!("../assets/templates/refine.txt")),
    ("merge", include_str!("../assets/templates/merge.txt")),
    ("score_vqa", include_str!("../assets/templates/score_vqa.txt")),
    ("rate", include_str!("../assets/templates/rate.txt")),
    ("summarize", include_str!("../assets/templates/summarize.txt")),
    ("rewrite", include_str!("../assets/templates/rewrite.txt")),
];

/// A rendered template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone)]
pub struct Templates {
    sources: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            sources: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Templates {
    /// Defaults, with `<dir>/<name>.txt` files taking precedence.
    pub fn load(dir: Option<&Path>) -> Result<Self, TemplateError> {
        let mut templates = Self::default();
        if let Some(dir) = dir {
            for (name, _) in DEFAULTS {
                let path = dir.join(format!("{name}.txt"));
                if path.exists() {
                    templates.sources.insert(name.to_string(), fs::read_to_string(path)?);
                }
            }
        }
        for name in templates.sources.keys() {
            templates.split(name)?;
        }
        Ok(templates)
    }

    pub fn source(&self, name: &str) -> Option<&str> {
        self.sources.get(name).map(String::as_str)
    }

    fn split(&self, name: &str) -> Result<(&str, &str), TemplateError> {
        let src = self.source(name).ok_or_else(|| TemplateError::Unknown(name.into()))?;
        let mut lines = src.split_inclusive('\n');
        let mut offset = 0;
        for line in lines.by_ref() {
            if line.trim_end() == "---" {
                return Ok((&src[..offset], &src[offset + line.len()..]));
            }
            offset += line.len();
        }
        Err(TemplateError::Malformed(name.into()))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<Rendered, TemplateError> {
        let (system, user) = self.split(name)?;
        Ok(Rendered {
            system: substitute(name, system.trim(), vars)?,
            user: substitute(name, user.trim(), vars)?,
        })
    }

    pub fn for_role(&self, role: AgentRole, vars: &[(&str, &str)]) -> Result<Rendered, TemplateError> {
        self.render(role.as_str(), vars)
    }
}

/// Replace `{{name}}` placeholders. Values are inserted verbatim and are not
/// themselves scanned for placeholders.
pub fn substitute(name: &str, text: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let key = after[..end].trim();
        match vars.iter().find(|(k, _)| *k == key) {
            Some((_, v)) => out.push_str(v),
            None => {
                return Err(TemplateError::Unfilled { name: name.into(), placeholder: key.into() })
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Names of all placeholders in a text, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let key = after[..end].trim().to_string();
        if !out.contains(&key) {
            out.push(key);
        }
        rest = &after[end + 2..];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_role_has_a_well_formed_default() {
        let t = Templates::default();
        for (name, _) in DEFAULTS {
            assert!(t.split(name).is_ok(), "{name}");
        }
        assert!(t.source("refine").unwrap().contains("{{memory}}"));
    }

    #[test]
    fn substitution_and_missing_values() {
        assert_eq!(substitute("t", "a {{x}} b {{ y }}", &[("x", "1"), ("y", "{{z}}")]).unwrap(), "a 1 b {{z}}");
        let err = substitute("t", "{{prompt}} {{caption}}", &[("prompt", "p")]).unwrap_err();
        assert!(matches!(err, TemplateError::Unfilled { placeholder, .. } if placeholder == "caption"));
    }

    #[test]
    fn overrides_replace_defaults() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("vqa.txt"), "sys\n---\nQ: {{question}}\n").unwrap();
        let t = Templates::load(Some(dir.path())).unwrap();
        let r = t.render("vqa", &[("question", "Is there a cat?")]).unwrap();
        assert_eq!(r, Rendered { system: "sys".into(), user: "Q: Is there a cat?".into() });
        fs::write(dir.path().join("caption.txt"), "no separator").unwrap();
        assert!(matches!(Templates::load(Some(dir.path())), Err(TemplateError::Malformed(_))));
    }

    #[test]
    fn placeholder_listing() {
        assert_eq!(placeholders("{{a}} {{b}} {{a}}"), vec!["a", "b"]);
    }
}
