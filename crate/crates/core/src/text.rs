//! Token handling shared by anchoring, embeddings and snippets.

/// Case-folds `text` and splits it on every non-alphanumeric character.
///
/// `"Who co-starred with Brian Backer?"` becomes
/// `["who", "co", "starred", "with", "brian", "backer"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Number of whitespace-separated tokens; this is the unit of token cost.
pub fn whitespace_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Case-folded lookup key for a surface name.
pub fn fold(name: &str) -> String {
    name.trim().to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation_and_case() {
        assert_eq!(
            tokenize("Who co-starred with Brian Backer?"),
            ["who", "co", "starred", "with", "brian", "backer"]
        );
        assert_eq!(tokenize("starred_actors"), ["starred", "actors"]);
        assert!(tokenize("  ?! ").is_empty());
    }

    #[test]
    fn whitespace_count_matches_snippet_form() {
        assert_eq!(
            whitespace_count("Moving Violations --- starred_actors: Jennifer Tilly"),
            6
        );
        assert_eq!(whitespace_count(""), 0);
    }
}
