//! Segmentation and completion-token counting.

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segmented {
    /// Maximal runs of letters, digits and apostrophes, lowercased.
    pub tokens: Vec<String>,
    /// Sentences ending at '.', '!' or '?' followed by whitespace or the end
    /// of the text, trimmed. A trailing fragment without a terminator counts
    /// as a sentence.
    pub sentences: Vec<String>,
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

/// Case-preserving token runs.
pub(crate) fn raw_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !is_token_char(c))
        .filter(|t| !t.is_empty())
}

pub fn tokens(text: &str) -> Vec<String> {
    raw_tokens(text).map(str::to_lowercase).collect()
}

pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

pub fn segment(text: &str) -> Segmented {
    Segmented {
        tokens: tokens(text),
        sentences: sentences(text),
    }
}

/// Counts completion tokens. Swap in a vendor-accurate implementation when
/// the brevity limit must match a provider's own accounting.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Counts the tokens produced by [`segment`].
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn count(&self, text: &str) -> usize {
        raw_tokens(text).count()
    }
}

pub fn count_completion_tokens(text: &str, tokenizer: &dyn Tokenizer) -> usize {
    tokenizer.count(text)
}
