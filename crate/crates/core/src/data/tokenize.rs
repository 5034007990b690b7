/// A token with its character offsets in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub raw: String,
    /// Character (not byte) offsets, end exclusive.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn lower(&self) -> String {
        self.raw.to_lowercase()
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
}

/// Splits on whitespace and punctuation, keeping each punctuation character
/// as its own token. Case is preserved; see [`tokenize_lower`].
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_start = 0;
    let flush = |cur: &mut String, start: usize, end: usize, out: &mut Vec<Token>| {
        if !cur.is_empty() {
            out.push(Token {
                raw: std::mem::take(cur),
                start,
                end,
            });
        }
    };
    let mut pos = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut cur, cur_start, pos, &mut out);
        } else if is_punct(c) {
            flush(&mut cur, cur_start, pos, &mut out);
            out.push(Token {
                raw: c.to_string(),
                start: pos,
                end: pos + 1,
            });
        } else {
            if cur.is_empty() {
                cur_start = pos;
            }
            cur.push(c);
        }
        pos += 1;
    }
    flush(&mut cur, cur_start, pos, &mut out);
    out
}

pub fn tokenize_raw(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.raw).collect()
}

pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize(text).iter().map(Token::lower).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(
            tokenize_lower("Who liberated Warsaw, in 1806?"),
            vec!["who", "liberated", "warsaw", ",", "in", "1806", "?"]
        );
    }

    #[test]
    fn offsets_are_character_based() {
        let toks = tokenize("é ab.");
        assert_eq!(toks[1].start, 2);
        assert_eq!(toks[1].end, 4);
        assert_eq!(toks[2].raw, ".");
        assert_eq!(toks[2].start, 4);
    }
}
