//! Text normalization shared by the concept linker and the metrics.

/// Lowercases, replaces every non-alphanumeric character with a space and
/// collapses runs of whitespace.
pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

/// Lowercased alphanumeric tokens, punctuation treated as a separator.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Sorted, so lookups can binary-search.
pub const STOPWORDS: [&str; 100] = [
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "both", "but", "by", "can", "could", "did",
    "do", "does", "down", "during", "each", "for", "from", "had", "has", "have", "he", "her",
    "here", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "more",
    "most", "my", "no", "not", "now", "of", "on", "only", "or", "other", "our", "out", "over",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "them", "then",
    "there", "these", "they", "this", "those", "through", "to", "under", "until", "up", "very",
    "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_and_unique() {
        assert_eq!(STOPWORDS.len(), 100);
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn normalize_strips_punctuation_and_case() {
        assert_eq!(normalize("  Chest-PAIN,  (exertional)\t"), "chest pain exertional");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("___ pt"), "pt");
    }
}
