const DETACHED: &[char] = &[',', '.', '!', '?', ';', ':', '(', ')', '-', '"'];

/// Lowercasing rule-based tokenizer.
///
/// Whitespace separates tokens, the characters `, . ! ? ; : ( ) - "` become
/// tokens of their own, and an apostrophe starts a new token so that
/// contractions split as `it's -> it 's`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for ch in chunk.chars() {
            if DETACHED.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else if ch == '\'' {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                current.push('\'');
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}
