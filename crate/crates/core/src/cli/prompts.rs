//! Prompt ingestion: plain text with one prompt per line, or JSONL with
//! `{"id": ..., "prompt": ...}` objects.

use std::collections::BTreeSet;

use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptItem {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Deserialize)]
struct JsonPrompt {
    id: Option<serde_json::Value>,
    prompt: String,
}

/// Parse a prompt list. JSONL is detected by a first non-blank line
/// starting with `{`. Blank lines and `#` comments in plain text are
/// skipped; plain-text ids are `p<line number>`.
pub fn parse_prompts(text: &str) -> Result<Vec<PromptItem>, String> {
    let jsonl = text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.trim_start().starts_with('{'));
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (!jsonl && line.starts_with('#')) {
            continue;
        }
        let item = if jsonl {
            let p: JsonPrompt = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let id = match p.id {
                Some(serde_json::Value::String(s)) => s,
                Some(v) => v.to_string(),
                None => format!("p{}", i + 1),
            };
            PromptItem { id, prompt: p.prompt.trim().to_string() }
        } else {
            PromptItem { id: format!("p{}", i + 1), prompt: line.to_string() }
        };
        if item.prompt.is_empty() {
            return Err(format!("line {}: empty prompt", i + 1));
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err("no prompts found".into());
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = items.iter().find(|p| !seen.insert(p.id.clone())) {
        return Err(format!("duplicate prompt id {:?}", dup.id));
    }
    if let Some(bad) = items.iter().find(|p| !safe_id(&p.id)) {
        return Err(format!("prompt id {:?} is not usable as a directory name", bad.id));
    }
    Ok(items)
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_text_lines() {
        let items = parse_prompts("# list\nsix baozi in a steamer\n\na red apple\n").unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0], PromptItem { id: "p2".into(), prompt: "six baozi in a steamer".into() });
        assert_eq!(items[1].id, "p4");
    }

    #[test]
    fn jsonl_objects() {
        let items = parse_prompts("{\"id\": \"a\", \"prompt\": \"x y\"}\n{\"id\": 7, \"prompt\": \"z\"}\n").unwrap();
        assert_eq!(items[0].id, "a");
        assert_eq!(items[1].id, "7");
    }

    #[test]
    fn rejects_bad_lists() {
        assert!(parse_prompts("\n\n").is_err());
        assert!(parse_prompts("{\"id\": \"a\", \"prompt\": \"x\"}\n{\"id\": \"a\", \"prompt\": \"y\"}").is_err());
        assert!(parse_prompts("{\"id\": \"../up\", \"prompt\": \"x\"}").is_err());
        assert!(parse_prompts("{\"prompt\": 3}").is_err());
    }
}
