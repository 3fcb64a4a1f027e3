/// Lowercases, splits on whitespace, and peels leading/trailing ASCII
/// punctuation off each chunk as one-character tokens. Internal punctuation
/// ("wasn't", "eur25,000") stays inside the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        while start < chars.len() && chars[start].is_ascii_punctuation() {
            start += 1;
        }
        if start == chars.len() {
            out.extend(chars.iter().map(char::to_string));
            continue;
        }
        let mut end = chars.len();
        while end > start && chars[end - 1].is_ascii_punctuation() {
            end -= 1;
        }
        out.extend(chars[..start].iter().map(char::to_string));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(char::to_string));
    }
    out
}

/// Splits after '.', '!' or '?' when followed by whitespace or the end of
/// the text. No abbreviation handling. Segments are trimmed and empty ones
/// dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = iter.peek().is_none_or(|&(_, next)| next.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                push_trimmed(&mut out, &text[start..end]);
                start = end;
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, segment: &str) {
    let s = segment.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}
