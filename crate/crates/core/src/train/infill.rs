//! Fill-in-the-middle rearrangement of training documents.
//!
//! Half of the documents stay as they are. The rest are cut at two uniform
//! character positions and emitted either prefix-suffix-middle or
//! suffix-prefix-middle, each with probability one quarter.

use std::ops::Range;

use rand::Rng;

use crate::error::TrainError;
use crate::model::TokenId;
use crate::tokenizer::{ByteTokenizer, MID, PRE, SUF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InfillFormat {
    Plain,
    Psm,
    Spm,
}

/// Character ranges partitioning a document. A plain sample keeps the whole
/// document in `prefix` and leaves the other two empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfillSample {
    pub format: InfillFormat,
    pub prefix: Range<usize>,
    pub middle: Range<usize>,
    pub suffix: Range<usize>,
}

pub const MIN_INFILL_CHARS: usize = 3;

pub fn make_infill(doc: &str, rng: &mut impl Rng) -> Result<InfillSample, TrainError> {
    let n = doc.chars().count();
    if n < MIN_INFILL_CHARS {
        return Err(TrainError::DocTooShort(n));
    }
    let u: f64 = rng.random();
    let format = if u < 0.5 {
        InfillFormat::Plain
    } else if u < 0.75 {
        InfillFormat::Psm
    } else {
        InfillFormat::Spm
    };
    if format == InfillFormat::Plain {
        return Ok(InfillSample {
            format,
            prefix: 0..n,
            middle: n..n,
            suffix: n..n,
        });
    }
    let a = rng.random_range(0..=n);
    let b = rng.random_range(0..=n);
    let (i, j) = (a.min(b), a.max(b));
    Ok(InfillSample {
        format,
        prefix: 0..i,
        middle: i..j,
        suffix: j..n,
    })
}

fn chars(doc: &str, r: &Range<usize>) -> String {
    doc.chars().skip(r.start).take(r.len()).collect()
}

/// Token stream for a sample. PSM: `PRE prefix SUF suffix MID middle`.
/// SPM: `PRE SUF suffix MID prefix middle`.
pub fn encode_infill(tok: &ByteTokenizer, doc: &str, s: &InfillSample) -> Vec<TokenId> {
    let (p, m, x) = (
        chars(doc, &s.prefix),
        chars(doc, &s.middle),
        chars(doc, &s.suffix),
    );
    let mut out = Vec::with_capacity(doc.len() + 3);
    match s.format {
        InfillFormat::Plain => out.extend(tok.encode(doc)),
        InfillFormat::Psm => {
            out.push(PRE);
            out.extend(tok.encode(&p));
            out.push(SUF);
            out.extend(tok.encode(&x));
            out.push(MID);
            out.extend(tok.encode(&m));
        }
        InfillFormat::Spm => {
            out.push(PRE);
            out.push(SUF);
            out.extend(tok.encode(&x));
            out.push(MID);
            out.extend(tok.encode(&p));
            out.extend(tok.encode(&m));
        }
    }
    out
}

/// Recovers the original document from an encoded sample. Returns `None` if
/// the sentinel layout is not one [`encode_infill`] produces or the bytes are
/// not UTF-8.
pub fn reassemble(ids: &[TokenId]) -> Option<String> {
    let bytes = |s: &[TokenId]| -> Option<Vec<u8>> { s.iter().map(|&t| u8::try_from(t).ok()).collect() };
    let text = |b: Vec<u8>| String::from_utf8(b).ok();
    let find = |t: TokenId| ids.iter().position(|&x| x == t);
    match ids.first() {
        Some(&PRE) => {
            let suf = find(SUF)?;
            let mid = find(MID)?;
            if suf == 1 {
                // SPM: the emitted tail is prefix ++ middle, already in order.
                let suffix = bytes(&ids[2..mid])?;
                let mut head = bytes(&ids[mid + 1..])?;
                head.extend(suffix);
                text(head)
            } else {
                let mut doc = bytes(&ids[1..suf])?;
                let suffix = bytes(&ids[suf + 1..mid])?;
                doc.extend(bytes(&ids[mid + 1..])?);
                doc.extend(suffix);
                text(doc)
            }
        }
        _ => text(bytes(ids)?),
    }
}
