//! Fixed character inventory for the character-level embedding.

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;

const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789.,;:!?'\"-()[]/&%$#@*+=_";

/// Number of rows in the character table (PAD, UNK and the alphabet).
pub fn char_count() -> usize {
    2 + ALPHABET.chars().count()
}

pub fn char_id(c: char) -> usize {
    let c = c.to_ascii_lowercase();
    ALPHABET
        .chars()
        .position(|a| a == c)
        .map_or(CHAR_UNK, |p| p + 2)
}

pub fn char_ids(token: &str) -> Vec<usize> {
    let ids: Vec<usize> = token.chars().map(char_id).collect();
    if ids.is_empty() {
        vec![CHAR_UNK]
    } else {
        ids
    }
}
