//! String normalization shared by grouping, scoring, and overlap metrics.

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':'];
const ARTICLES: &[&str] = &["a", "an", "the"];

/// Lowercase, collapse whitespace, and strip trailing punctuation.
///
/// Two answers are "the same" for grouping iff their normalized forms match.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
        .to_string()
}

/// [`normalize_answer`] plus removal of the English articles "a", "an", "the".
pub fn normalize_direct_answer(s: &str) -> String {
    normalize_answer(s)
        .split(' ')
        .filter(|w| !w.is_empty() && !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased word tokens with punctuation removed.
pub fn tokenize(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Approximate token count used when a backend reports no usage.
pub fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}
