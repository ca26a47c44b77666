//! Closed vocabularies shared by the scenario generator, the planner and the
//! oracle tools. Matching is exact on these word lists.

pub const CATEGORIES: [&str; 8] = [
    "horse", "car", "dog", "person", "bird", "cat", "truck", "guitar",
];

pub const COLORS: [&str; 6] = ["black", "white", "brown", "red", "blue", "gray"];

pub const SIZES: [&str; 3] = ["small", "large", "adult"];

/// Event grammar: `<verb> <direction> [<qualifier>]`.
pub const MOTION_VERBS: [&str; 5] = ["moving", "running", "walking", "jumping", "turning"];
pub const DIRECTIONS: [&str; 5] = ["left", "right", "up", "down", "around"];
pub const QUALIFIERS: [&str; 3] = ["quickly", "slowly", "then stopping"];

/// Audio classes. The first eight are emitted by objects, the rest are ambient.
pub const AUDIO_CLASSES: [&str; 10] = [
    "neigh", "engine", "bark", "speech", "chirp", "meow", "horn", "strum", "wind", "rain",
];

pub const AMBIENT_AUDIO: [&str; 2] = ["wind", "rain"];

pub fn is_category(word: &str) -> bool {
    CATEGORIES.contains(&word)
}

pub fn is_attribute(word: &str) -> bool {
    COLORS.contains(&word) || SIZES.contains(&word)
}

pub fn is_motion_verb(word: &str) -> bool {
    MOTION_VERBS.contains(&word)
}

pub fn plural(category: &str) -> String {
    match category {
        "person" => "people".to_string(),
        other => format!("{other}s"),
    }
}

/// Maps a (possibly plural) token to its category.
pub fn category_of_token(token: &str) -> Option<&'static str> {
    CATEGORIES
        .iter()
        .copied()
        .find(|c| *c == token || plural(c) == token)
}

pub fn audio_class_for_category(category: &str) -> Option<&'static str> {
    CATEGORIES
        .iter()
        .position(|c| *c == category)
        .map(|i| AUDIO_CLASSES[i])
}

pub fn category_for_audio_class(class_label: &str) -> Option<&'static str> {
    AUDIO_CLASSES
        .iter()
        .take(CATEGORIES.len())
        .position(|c| *c == class_label)
        .map(|i| CATEGORIES[i])
}

/// All descriptions the event grammar can produce, in a fixed order.
pub fn all_event_descriptions() -> Vec<String> {
    let mut out = Vec::new();
    for verb in MOTION_VERBS {
        for dir in DIRECTIONS {
            out.push(format!("{verb} {dir}"));
            for q in QUALIFIERS {
                out.push(format!("{verb} {dir} {q}"));
            }
        }
    }
    out
}

/// Lowercased alphanumeric tokens; everything else separates words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Category words, attribute words and the motion phrase of a referring
/// expression. The motion phrase runs from the first motion verb to the end.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryTerms {
    pub categories: Vec<&'static str>,
    pub attributes: Vec<String>,
    pub motion_phrase: Option<String>,
}

impl QueryTerms {
    pub fn parse(text: &str) -> Self {
        let tokens = tokenize(text);
        let verb_at = tokens.iter().position(|t| is_motion_verb(t));
        let head = &tokens[..verb_at.unwrap_or(tokens.len())];
        let mut categories = Vec::new();
        let mut attributes = Vec::new();
        for t in head {
            if let Some(c) = category_of_token(t) {
                if !categories.contains(&c) {
                    categories.push(c);
                }
            } else if is_attribute(t) && !attributes.contains(t) {
                attributes.push(t.clone());
            }
        }
        let motion_phrase = verb_at.map(|i| tokens[i..].join(" "));
        QueryTerms {
            categories,
            attributes,
            motion_phrase,
        }
    }

    pub fn category(&self) -> Option<&'static str> {
        self.categories.first().copied()
    }
}
