//! Hashed whitespace tokenizer. Collisions are accepted.

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIAL: u32 = 4;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn piece_id(piece: &str, vocab_size: usize) -> u32 {
    debug_assert!(vocab_size > NUM_SPECIAL as usize);
    let buckets = (vocab_size as u64) - NUM_SPECIAL as u64;
    NUM_SPECIAL + (fnv1a64(piece.as_bytes()) % buckets) as u32
}

/// Splits on Unicode whitespace and hashes each piece into
/// `[4, vocab_size)`.
pub fn tokenize(text: &str, vocab_size: usize) -> Vec<u32> {
    text.split_whitespace().map(|p| piece_id(p, vocab_size)).collect()
}

/// Id of one generator token: its trimmed text, or the raw string when it is
/// pure whitespace, so every answer token maps to exactly one id.
pub fn answer_token_id(token: &str, vocab_size: usize) -> u32 {
    let trimmed = token.trim();
    if trimmed.is_empty() {
        if token.is_empty() {
            UNK
        } else {
            piece_id(token, vocab_size)
        }
    } else {
        piece_id(trimmed, vocab_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("", 4096).is_empty());
        assert_eq!(tokenize("what is it", 4096), tokenize("what is it", 4096));
        assert_eq!(tokenize("a b", 4096), tokenize("a  \t b", 4096));
        assert!(tokenize("many different words here", 8).iter().all(|&id| (4..8).contains(&id)));
    }

    #[test]
    fn answer_tokens_map_to_one_id() {
        assert_eq!(answer_token_id(" Paris", 4096), answer_token_id("Paris", 4096));
        assert!(answer_token_id(" ", 4096) >= NUM_SPECIAL);
        assert_eq!(answer_token_id("", 4096), UNK);
    }
}
