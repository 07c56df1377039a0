//! Byte-level tokenizer: one token per UTF-8 byte, id 0 doubles as
//! end-of-sequence (NUL never occurs in the text we feed it).

use alloc::string::String;
use alloc::vec::Vec;

pub const VOCAB_SIZE: usize = 256;
pub const EOS: u32 = 0;

pub fn encode(text: &str) -> Vec<u32> {
    text.bytes().filter(|&b| b != 0).map(u32::from).collect()
}

/// Lossy for byte sequences that are not valid UTF-8 (a model may emit those).
pub fn decode(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter(|&&t| t != EOS)
        .filter_map(|&t| u8::try_from(t).ok())
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

pub fn token_len(text: &str) -> usize {
    text.bytes().filter(|&b| b != 0).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_ascii_and_utf8() {
        for s in ["abc", "héllo wörld", ""] {
            assert_eq!(decode(&encode(s)), s);
        }
        assert_eq!(token_len("é"), 2);
    }

    #[test]
    fn nul_bytes_are_dropped() {
        assert_eq!(encode("a\0b"), [97, 98]);
    }
}
