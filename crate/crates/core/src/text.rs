//! Small text utilities shared by refusal detection, caching, and the
//! reference classifiers.

/// Number of whitespace-delimited words in `text`.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Returns the prefix of `text` ending at the last character of its
/// `limit`-th whitespace-delimited word. Texts with at most `limit` words are
/// returned unchanged.
pub fn first_words(text: &str, limit: usize) -> &str {
    if limit == 0 {
        return "";
    }
    let mut seen = 0;
    let mut in_word = false;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                in_word = false;
                if seen == limit {
                    return &text[..idx];
                }
            }
        } else if !in_word {
            in_word = true;
            seen += 1;
        }
    }
    text
}

/// Trims and collapses every internal whitespace run to a single space.
pub fn canonicalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric tokens. Apostrophes inside words are dropped so
/// "can't" and "cant" tokenize alike.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .map(|t| {
            t.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// True for tokens that parse as a number once thousands separators are gone,
/// e.g. "1989" or "3".
pub fn is_numeric_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_digit())
}
