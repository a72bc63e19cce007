/// Collapses every whitespace run to a single space and trims both ends.
pub(crate) fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

const TERMINAL_PUNCTUATION: &[char] = &['.', '!', '?', ';', ':', ',', '…'];

/// Comparison key for descriptions: lowercase, whitespace-collapsed, with
/// terminal punctuation removed.
pub(crate) fn description_key(text: &str) -> String {
    let collapsed = normalize_whitespace(&text.to_lowercase());
    collapsed
        .trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
        .to_string()
}

/// Lowercase ASCII slug usable in file names.
pub(crate) fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut dash = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push('x');
    }
    out
}
