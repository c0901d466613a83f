//! Byte-pair-merge tokenizer over a binary vocabulary file.
//!
//! File layout, all little-endian:
//!
//! ```text
//! i32 max_token_length
//! vocab_size × { f32 score, i32 len, len raw bytes }
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Beginning-of-sequence token.
pub const BOS: TokenId = 1;

/// Byte fallback ids follow the three special tokens.
const BYTE_FALLBACK_OFFSET: TokenId = 3;

/// Stands in for bytes whose fallback id lies past the vocabulary.
pub const UNK: TokenId = 0;

const MAX_PIECE_LEN: i32 = 1024;

static SINGLE_BYTES: [u8; 256] = {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        table[i] = i as u8;
        i += 1;
    }
    table
};

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    vocab: Vec<Vec<u8>>,
    scores: Vec<f32>,
    max_token_length: usize,
    lookup: HashMap<Vec<u8>, TokenId>,
    /// Id of the `<0xNN>` piece for each byte, when the vocabulary has one.
    byte_pieces: [Option<TokenId>; 256],
    /// Raw byte that each `<0xNN>` piece decodes to.
    piece_bytes: HashMap<TokenId, u8>,
}

fn parse_byte_piece(piece: &[u8]) -> Option<u8> {
    let hex = piece.strip_prefix(b"<0x")?.strip_suffix(b">")?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(std::str::from_utf8(hex).ok()?, 16).ok()
}

impl TokenizerModel {
    /// Builds a model from in-memory pieces and scores.
    pub fn from_pieces(vocab: Vec<Vec<u8>>, scores: Vec<f32>, max_token_length: usize) -> Self {
        assert_eq!(vocab.len(), scores.len(), "one score per piece");
        let mut lookup = HashMap::with_capacity(vocab.len());
        let mut byte_pieces = [None; 256];
        let mut piece_bytes = HashMap::new();
        for (id, piece) in vocab.iter().enumerate() {
            let id = id as TokenId;
            // first occurrence wins, matching a linear scan
            lookup.entry(piece.clone()).or_insert(id);
            if let Some(b) = parse_byte_piece(piece) {
                byte_pieces[b as usize].get_or_insert(id);
                piece_bytes.insert(id, b);
            }
        }
        Self {
            vocab,
            scores,
            max_token_length,
            lookup,
            byte_pieces,
            piece_bytes,
        }
    }

    /// Parses the binary format from a byte buffer.
    pub fn from_bytes(bytes: &[u8], vocab_size: usize) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(Error::Format(format!(
                    "tokenizer file truncated reading {what}"
                )));
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        let read_i32 = |b: &[u8]| i32::from_le_bytes(b.try_into().expect("4 bytes"));

        let max_len = read_i32(take(4, "max_token_length")?);
        if max_len < 0 {
            return Err(Error::Format(format!(
                "negative max_token_length {max_len}"
            )));
        }
        let mut vocab = Vec::with_capacity(vocab_size);
        let mut scores = Vec::with_capacity(vocab_size);
        for i in 0..vocab_size {
            let score = f32::from_le_bytes(take(4, "score")?.try_into().expect("4 bytes"));
            let len = read_i32(take(4, "piece length")?);
            if !(0..=MAX_PIECE_LEN).contains(&len) {
                return Err(Error::Format(format!("piece {i} has invalid length {len}")));
            }
            vocab.push(take(len as usize, "piece bytes")?.to_vec());
            scores.push(score);
        }
        Ok(Self::from_pieces(vocab, scores, max_len as usize))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn max_token_length(&self) -> usize {
        self.max_token_length
    }

    pub fn piece(&self, token: TokenId) -> Option<&[u8]> {
        self.vocab.get(token as usize).map(Vec::as_slice)
    }

    pub fn score(&self, token: TokenId) -> Option<f32> {
        self.scores.get(token as usize).copied()
    }

    pub fn token_id(&self, piece: &[u8]) -> Option<TokenId> {
        self.lookup.get(piece).copied()
    }

    fn byte_token(&self, b: u8) -> TokenId {
        self.byte_pieces[b as usize].unwrap_or_else(|| {
            let id = b as TokenId + BYTE_FALLBACK_OFFSET;
            if (id as usize) < self.vocab.len() {
                id
            } else {
                UNK
            }
        })
    }

    /// Encodes `text` by greedy highest-score pair merging.
    ///
    /// With `add_bos`, the sequence starts with [`BOS`] and non-empty text
    /// gets a leading space, which takes part in merges.
    pub fn encode(&self, text: &[u8], add_bos: bool) -> Vec<TokenId> {
        let mut tokens = Vec::with_capacity(text.len() + 2);
        if add_bos {
            tokens.push(BOS);
            if !text.is_empty() {
                self.push_chars(b" ", &mut tokens);
            }
        }
        self.push_chars(text, &mut tokens);

        let mut merged = Vec::with_capacity(self.max_token_length * 2 + 2);
        let start = usize::from(add_bos);
        loop {
            let mut best: Option<(f32, usize, TokenId)> = None;
            for i in start..tokens.len().saturating_sub(1) {
                merged.clear();
                merged.extend_from_slice(&self.vocab[tokens[i] as usize]);
                merged.extend_from_slice(&self.vocab[tokens[i + 1] as usize]);
                if let Some(id) = self.token_id(&merged) {
                    let score = self.scores[id as usize];
                    // strict comparison keeps the leftmost pair on ties
                    if best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, i, id));
                    }
                }
            }
            let Some((_, i, id)) = best else { break };
            tokens[i] = id;
            tokens.remove(i + 1);
        }
        tokens
    }

    /// Splits `text` into UTF-8 characters (invalid bytes stand alone) and
    /// maps each to its piece, or to byte-fallback ids when it has none.
    fn push_chars(&self, text: &[u8], out: &mut Vec<TokenId>) {
        let mut i = 0;
        while i < text.len() {
            let len = utf8_char_len(&text[i..]);
            let ch = &text[i..i + len];
            match self.token_id(ch) {
                Some(id) => out.push(id),
                None => out.extend(ch.iter().map(|&b| self.byte_token(b))),
            }
            i += len;
        }
    }

    /// The bytes `token` contributes to output text after `prev_token`.
    pub fn decode(&self, prev_token: TokenId, token: TokenId) -> Result<&[u8]> {
        let piece = self.piece(token).ok_or(Error::TokenOutOfRange {
            token: token as usize,
            vocab_size: self.vocab.len(),
        })?;
        if let Some(&b) = self.piece_bytes.get(&token) {
            return Ok(std::slice::from_ref(&SINGLE_BYTES[b as usize]));
        }
        if prev_token == BOS {
            if let Some(rest) = piece.strip_prefix(b" ") {
                return Ok(rest);
            }
        }
        Ok(piece)
    }

    /// Concatenated decoding of a token sequence.
    pub fn decode_all(&self, tokens: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut prev = None;
        for &t in tokens {
            if t == BOS && prev.is_none() {
                prev = Some(t);
                continue;
            }
            out.extend_from_slice(self.decode(prev.unwrap_or(0), t)?);
            prev = Some(t);
        }
        Ok(out)
    }
}

/// Length of the UTF-8 sequence starting at `s[0]`, or 1 if it is malformed.
fn utf8_char_len(s: &[u8]) -> usize {
    let want = match s[0] {
        0x00..=0x7f => return 1,
        0xc2..=0xdf => 2,
        0xe0..=0xef => 3,
        0xf0..=0xf4 => 4,
        _ => return 1,
    };
    if s.len() >= want && std::str::from_utf8(&s[..want]).is_ok() {
        want
    } else {
        1
    }
}

/// Reads a tokenizer file holding exactly `vocab_size` records.
pub fn load_tokenizer(path: impl AsRef<Path>, vocab_size: usize) -> Result<TokenizerModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Open {
        path: path.to_owned(),
        source,
    })?;
    TokenizerModel::from_bytes(&bytes, vocab_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TokenizerModel {
        TokenizerModel::from_pieces(
            vec![b"a".to_vec(), b"b".to_vec(), b"ab".to_vec()],
            vec![0.0, -1.0, 1.0],
            2,
        )
    }

    #[test]
    fn merges_highest_scoring_pair() {
        let t = fixture();
        assert_eq!(t.encode(b"ab", false), vec![2]);
        assert_eq!(t.encode(b"ba", false), vec![1, 0]);
        assert_eq!(t.encode(b"abab", false), vec![2, 2]);
    }

    #[test]
    fn bos_only_for_empty_text() {
        assert_eq!(fixture().encode(b"", true), vec![BOS]);
        assert!(fixture().encode(b"", false).is_empty());
    }

    #[test]
    fn leftmost_pair_wins_ties() {
        let t = TokenizerModel::from_pieces(
            ["x", "y", "z", "xy", "yz"]
                .iter()
                .map(|s| s.as_bytes().to_vec())
                .collect(),
            vec![0.0, 0.0, 0.0, 1.0, 1.0],
            2,
        );
        assert_eq!(t.encode(b"xyz", false), vec![3, 2]);
    }

    #[test]
    fn unknown_bytes_use_fallback_offset() {
        // 'c' = 0x63 has no piece and no <0x63> entry
        let mut vocab: Vec<Vec<u8>> = (0..0x70u8).map(|b| vec![b'#', b]).collect();
        vocab[1] = b"ab".to_vec();
        let t = TokenizerModel::from_pieces(vocab, vec![0.0; 0x70], 2);
        assert_eq!(t.encode(b"c", false), vec![0x63 + 3]);
        assert_eq!(fixture().encode(b"c", false), vec![UNK]);
    }

    #[test]
    fn byte_pieces_round_trip() {
        let mut vocab: Vec<Vec<u8>> = vec![b"<unk>".to_vec(), b"<s>".to_vec(), b"</s>".to_vec()];
        vocab.extend((0..=255u8).map(|b| format!("<0x{b:02X}>").into_bytes()));
        let n = vocab.len();
        let t = TokenizerModel::from_pieces(vocab, vec![0.0; n], 6);
        let text = "é\n\u{1F600}".as_bytes();
        let ids = t.encode(text, false);
        assert_eq!(ids.len(), text.len());
        assert_eq!(t.decode(0, 0x0A + 3).unwrap(), b"\n");
        assert_eq!(t.decode_all(&ids).unwrap(), text);
    }

    #[test]
    fn decode_strips_space_after_bos() {
        let t = TokenizerModel::from_pieces(
            vec![b"x".to_vec(), b"<s>".to_vec(), b" hello".to_vec()],
            vec![0.0; 3],
            6,
        );
        assert_eq!(t.decode(BOS, 2).unwrap(), b"hello");
        assert_eq!(t.decode(0, 2).unwrap(), b" hello");
        assert!(matches!(t.decode(0, 3), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn malformed_utf8_splits_per_byte() {
        assert_eq!(utf8_char_len(&[0xe2, 0x82]), 1);
        assert_eq!(utf8_char_len("€".as_bytes()), 3);
        assert_eq!(utf8_char_len(&[0xff, 0x41]), 1);
    }
}
