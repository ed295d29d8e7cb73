//! Character-offset helpers and edit distance.
//!
//! Every offset in this crate counts Unicode scalar values, never bytes.

/// Number of characters in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by character offsets `[start, end)`. `None` when out of range.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut begin = None;
    for (count, (byte, _)) in s.char_indices().enumerate() {
        if count == start {
            begin = Some(byte);
        }
        if count == end {
            return begin.map(|b| &s[b..byte]);
        }
    }
    let total = s.chars().count();
    if end == total {
        let b = if start == total { s.len() } else { begin? };
        Some(&s[b..])
    } else {
        None
    }
}

/// Single-character lowercase fold. Characters whose lowercase form expands
/// to several code points are kept as-is so that offsets stay aligned.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn fold_chars(s: &str) -> Vec<char> {
    s.chars().map(fold_char).collect()
}

/// Unit-cost Levenshtein distance over characters.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Case-insensitive Levenshtein distance between two strings.
pub fn levenshtein_ci(a: &str, b: &str) -> usize {
    levenshtein(&fold_chars(a), &fold_chars(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_by_characters() {
        let s = "héllo wörld";
        assert_eq!(char_slice(s, 0, 5), Some("héllo"));
        assert_eq!(char_slice(s, 6, 11), Some("wörld"));
        assert_eq!(char_slice(s, 11, 11), Some(""));
        assert_eq!(char_slice(s, 3, 3), Some(""));
        assert_eq!(char_slice(s, 6, 12), None);
        assert_eq!(char_slice(s, 4, 2), None);
        assert_eq!(char_slice("", 0, 0), Some(""));
    }

    #[test]
    fn levenshtein_basics() {
        let d = |a: &str, b: &str| levenshtein(&fold_chars(a), &fold_chars(b));
        assert_eq!(d("kitten", "sitting"), 3);
        assert_eq!(d("", "abc"), 3);
        assert_eq!(d("abc", ""), 3);
        assert_eq!(d("flaw", "lawn"), 2);
        assert_eq!(levenshtein_ci("Berylliosis", "BERYLLIOSIS"), 0);
    }
}
