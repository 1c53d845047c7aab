//! Fixed byte-level tokenizer: one id per byte, then the infilling sentinels
//! and an end-of-text id, then the adaptive ids at the top of the vocabulary.

use crate::model::TokenId;

pub const PRE: TokenId = 256;
pub const SUF: TokenId = 257;
pub const MID: TokenId = 258;
pub const EOS: TokenId = 259;
const N_FIXED: usize = 260;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteTokenizer {
    n_adaptive: usize,
}

impl ByteTokenizer {
    pub fn new(n_adaptive: usize) -> Self {
        Self { n_adaptive }
    }

    pub fn vocab_size(&self) -> usize {
        N_FIXED + self.n_adaptive
    }

    pub fn n_adaptive(&self) -> usize {
        self.n_adaptive
    }

    pub fn adaptive_ids(&self) -> Vec<TokenId> {
        (N_FIXED as TokenId..self.vocab_size() as TokenId).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.bytes().map(TokenId::from).collect()
    }

    /// Decodes byte ids lossily; sentinels render as `<PRE>`, `<SUF>`, `<MID>`,
    /// `<EOS>` and adaptive ids as `<A{n}>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut bytes = Vec::new();
        let flush = |bytes: &mut Vec<u8>, out: &mut String| {
            out.push_str(&String::from_utf8_lossy(bytes));
            bytes.clear();
        };
        for &id in ids {
            if id < 256 {
                bytes.push(id as u8);
                continue;
            }
            flush(&mut bytes, &mut out);
            match id {
                PRE => out.push_str("<PRE>"),
                SUF => out.push_str("<SUF>"),
                MID => out.push_str("<MID>"),
                EOS => out.push_str("<EOS>"),
                a => out.push_str(&format!("<A{}>", a as usize - N_FIXED)),
            }
        }
        flush(&mut bytes, &mut out);
        out
    }
}
