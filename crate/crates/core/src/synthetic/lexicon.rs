//! Closed vocabulary of the synthetic prompt grammar.

/// (singular, plural)
pub const NOUNS: &[(&str, &str)] = &[
    ("apple", "apples"),
    ("baozi", "baozi"),
    ("steamer", "steamers"),
    ("cat", "cats"),
    ("dog", "dogs"),
    ("mat", "mats"),
    ("chair", "chairs"),
    ("table", "tables"),
    ("book", "books"),
    ("cup", "cups"),
    ("bird", "birds"),
    ("ball", "balls"),
    ("box", "boxes"),
    ("vase", "vases"),
    ("flower", "flowers"),
    ("car", "cars"),
    ("tree", "trees"),
    ("board", "boards"),
    ("boat", "boats"),
    ("lamp", "lamps"),
    ("clock", "clocks"),
    ("pear", "pears"),
    ("horse", "horses"),
    ("umbrella", "umbrellas"),
    ("bench", "benches"),
    ("candle", "candles"),
    ("bowl", "bowls"),
    ("bicycle", "bicycles"),
    ("teapot", "teapots"),
    ("kite", "kites"),
];

pub const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "purple", "orange", "white", "black", "pink", "brown", "gray",
];
pub const TEXTURES: &[&str] = &[
    "frosty", "wooden", "bamboo", "furry", "glossy", "rough", "metallic", "woven", "velvet",
    "marble",
];
pub const STATES: &[&str] =
    &["open", "closed", "ripe", "sleeping", "running", "broken", "lit", "melting", "steaming"];
pub const SHAPES: &[&str] = &["round", "square", "triangular", "oval", "spherical"];
pub const BACKGROUNDS: &[&str] =
    &["kitchen", "beach", "forest", "desert", "garden", "studio", "meadow", "street", "library"];
pub const STYLES: &[&str] = &["watercolor", "cartoon", "photographic", "pixel", "sketch", "oil"];

/// Relation predicates; multi-word entries are joined before matching.
pub const RELATION_PREDICATES: &[&str] = &["in", "on", "inside", "beside", "next to"];
pub const POSITION_PREDICATES: &[&str] =
    &["under", "behind", "above", "below", "left of", "right of"];

pub const COUNT_WORDS: &[&str] =
    &["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];

pub const NEGATIONS: &[&str] = &["without", "no", "free"];
pub const COPULAS: &[&str] = &["is", "are"];

/// Adverbs that emphasize whatever clause they sit in.
pub const EMPHASIS: &[&str] = &[
    "clearly",
    "distinctly",
    "remarkably",
    "visibly",
    "unmistakably",
    "prominently",
    "noticeably",
    "strikingly",
];

/// Neutral adjectives with no effect on the scene or on corruption.
pub const FILLERS: &[&str] = &[
    "lovely", "charming", "simple", "classic", "cozy", "fresh", "gentle", "quiet", "pleasant",
    "tidy", "modest", "calm",
];

pub fn singular(token: &str) -> Option<&'static str> {
    NOUNS
        .iter()
        .find(|(s, p)| *s == token || *p == token)
        .map(|(s, _)| *s)
}

pub fn plural(noun: &str) -> &str {
    NOUNS.iter().find(|(s, _)| *s == noun).map_or(noun, |(_, p)| p)
}

pub fn noun_forms(noun: &str) -> [&str; 2] {
    [noun, plural(noun)]
}

/// `"a noun"` or `"an noun"`.
pub fn with_article(word: &str) -> String {
    let article = if word.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    format!("{article} {word}")
}

pub fn count_value(token: &str) -> Option<u32> {
    match token {
        "a" | "an" => Some(1),
        _ => COUNT_WORDS
            .iter()
            .position(|w| *w == token)
            .map(|i| i as u32)
            .or_else(|| token.parse::<u32>().ok().filter(|n| *n <= 99)),
    }
}

pub fn count_word(n: u32) -> String {
    COUNT_WORDS.get(n as usize).map_or_else(|| n.to_string(), |w| (*w).to_string())
}

pub fn is_predicate(token: &str) -> bool {
    RELATION_PREDICATES.contains(&token) || POSITION_PREDICATES.contains(&token)
}

pub fn is_position_predicate(token: &str) -> bool {
    POSITION_PREDICATES.contains(&token)
}

/// Merge multi-word predicates ("next to", "left of", "right of") into single tokens.
pub fn join_predicates(tokens: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let pair = tokens.get(i + 1).map(|next| format!("{} {}", tokens[i], next));
        match pair {
            Some(p) if matches!(p.as_str(), "next to" | "left of" | "right of") => {
                out.push(p);
                i += 2;
            }
            _ => {
                out.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plural_lookup() {
        assert_eq!(singular("boxes"), Some("box"));
        assert_eq!(singular("baozi"), Some("baozi"));
        assert_eq!(plural("bench"), "benches");
    }

    #[test]
    fn counts() {
        assert_eq!(count_value("six"), Some(6));
        assert_eq!(count_value("an"), Some(1));
        assert_eq!(count_value("12"), Some(12));
        assert_eq!(count_word(3), "three");
        assert_eq!(count_word(14), "14");
        assert_eq!(with_article("apple"), "an apple");
        assert_eq!(with_article("cat"), "a cat");
    }

    #[test]
    fn multiword_predicates_join() {
        let t: Vec<String> = ["cat", "next", "to", "the", "dog"].iter().map(|s| s.to_string()).collect();
        assert_eq!(join_predicates(t), vec!["cat", "next to", "the", "dog"]);
    }

    #[test]
    fn vocabularies_are_disjoint() {
        let mut all: Vec<&str> = Vec::new();
        all.extend(NOUNS.iter().flat_map(|(s, p)| [*s, *p]));
        for list in [COLORS, TEXTURES, STATES, SHAPES, BACKGROUNDS, STYLES, EMPHASIS, FILLERS] {
            all.extend(list.iter());
        }
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        // "baozi" is its own plural
        assert_eq!(sorted.len(), all.len() - 1);
    }
}
