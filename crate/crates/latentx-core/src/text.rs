//! Shared text tokenization.

/// Lowercase and split on whitespace and punctuation, dropping empty tokens.
/// A token is a maximal run of alphanumeric characters. This tokenizer is
/// frozen: both the evaluation metrics and the offline embedder depend on
/// its output being stable across versions.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::tokenize;

    #[test]
    fn splits_on_punctuation_and_whitespace() {
        assert_eq!(
            tokenize("The object moves horizontally, to the right."),
            vec!["the", "object", "moves", "horizontally", "to", "the", "right"]
        );
    }

    #[test]
    fn empty_and_punctuation_only_yield_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("?!...").is_empty());
    }
}
