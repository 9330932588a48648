fn is_separator(c: char) -> bool {
    c == '_' || c.is_whitespace()
}

/// A token of four or more ASCII letters none of which is a vowel.
fn is_garbled(token: &str) -> bool {
    token.chars().count() >= 4
        && token
            .chars()
            .all(|c| c.is_ascii_alphabetic() && !matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u'))
}

/// Strips the trailing run of consonant-only tokens from an action label.
/// Tokens are split on underscores and whitespace; the retained prefix keeps
/// its original separators.
pub fn sanitize_intent(label: &str) -> String {
    let mut tokens: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, c) in label.char_indices() {
        match (is_separator(c), start) {
            (true, Some(s)) => {
                tokens.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push((s, label.len()));
    }

    let keep = tokens.iter().rposition(|&(s, e)| !is_garbled(&label[s..e])).map_or(0, |i| i + 1);
    if keep == tokens.len() {
        return label.to_owned();
    }
    match keep {
        0 => String::new(),
        k => label[..tokens[k - 1].1].to_owned(),
    }
}
