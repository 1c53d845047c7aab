//! Training corpora: tokenized documents and synthetic generators.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::TrainError;
use crate::model::TokenId;
use crate::tokenizer::{ByteTokenizer, EOS};
use crate::train::infill::{encode_infill, make_infill, MIN_INFILL_CHARS};

/// A set of token documents. Training windows never cross document borders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Vec<TokenId>>,
}

impl Corpus {
    /// Keeps documents of at least two tokens; fails if none remain.
    pub fn new(docs: Vec<Vec<TokenId>>) -> Result<Self, TrainError> {
        let docs: Vec<_> = docs.into_iter().filter(|d| d.len() >= 2).collect();
        if docs.is_empty() {
            return Err(TrainError::CorpusTooShort { need: 2 });
        }
        Ok(Self { docs })
    }

    pub fn docs(&self) -> &[Vec<TokenId>] {
        &self.docs
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Largest token id present, if any.
    pub fn max_id(&self) -> TokenId {
        self.docs.iter().flatten().copied().max().unwrap_or(0)
    }

    /// A window of up to `len` consecutive tokens from a document chosen with
    /// probability proportional to its length.
    pub fn sample_window(&self, len: usize, rng: &mut impl Rng) -> Vec<TokenId> {
        let mut pick = rng.random_range(0..self.total_tokens());
        let doc = self
            .docs
            .iter()
            .find(|d| {
                if pick < d.len() {
                    true
                } else {
                    pick -= d.len();
                    false
                }
            })
            .expect("pick lies inside the corpus");
        let take = len.min(doc.len());
        let start = rng.random_range(0..=doc.len() - take);
        doc[start..start + take].to_vec()
    }
}

/// Reads newline-delimited documents, optionally rearranging each for
/// infilling, and appends an end-of-sequence id to every document.
pub fn load_text_corpus(
    path: &Path,
    tok: &ByteTokenizer,
    infill: bool,
    seed: u64,
) -> Result<Corpus, TrainError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TrainError::Setting(format!("cannot read corpus {}: {e}", path.display())))?;
    text_corpus(&text, tok, infill, seed)
}

pub fn text_corpus(text: &str, tok: &ByteTokenizer, infill: bool, seed: u64) -> Result<Corpus, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut ids = if infill && line.chars().count() >= MIN_INFILL_CHARS {
            let s = make_infill(line, &mut rng)?;
            encode_infill(tok, line, &s)
        } else {
            tok.encode(line)
        };
        ids.push(EOS);
        docs.push(ids);
    }
    Corpus::new(docs)
}

/// Sequences from a Markov chain over `n_states` ids. Each state has one
/// preferred successor, followed with probability `p_main`; otherwise the
/// next state is uniform over the remaining ones. The preferred successors
/// form a single random cycle through all states.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSource {
    pub successor: Vec<TokenId>,
    pub p_main: f64,
}

impl MarkovSource {
    pub fn new(n_states: usize, p_main: f64, seed: u64) -> Self {
        assert!(n_states >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<TokenId> = (0..n_states as TokenId).collect();
        order.shuffle(&mut rng);
        let mut successor = vec![0; n_states];
        for i in 0..n_states {
            successor[order[i] as usize] = order[(i + 1) % n_states];
        }
        Self { successor, p_main }
    }

    pub fn n_states(&self) -> usize {
        self.successor.len()
    }

    pub fn next(&self, cur: TokenId, rng: &mut impl Rng) -> TokenId {
        let main = self.successor[cur as usize];
        if rng.random::<f64>() < self.p_main {
            return main;
        }
        let other = rng.random_range(0..self.n_states() as TokenId - 1);
        if other >= main {
            other + 1
        } else {
            other
        }
    }

    /// The most likely continuation of `start` (the preferred cycle).
    pub fn main_path(&self, start: TokenId, len: usize) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(len);
        let mut cur = start;
        for _ in 0..len {
            cur = self.successor[cur as usize];
            out.push(cur);
        }
        out
    }

    pub fn sequence(&self, len: usize, rng: &mut impl Rng) -> Vec<TokenId> {
        let mut cur = rng.random_range(0..self.n_states() as TokenId);
        let mut out = vec![cur];
        while out.len() < len {
            cur = self.next(cur, rng);
            out.push(cur);
        }
        out
    }

    pub fn corpus(&self, n_docs: usize, doc_len: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = (0..n_docs).map(|_| self.sequence(doc_len, &mut rng)).collect();
        Corpus::new(docs).expect("doc_len >= 2")
    }
}

/// Documents that repeat a random motif: token `t` equals token `t - period`,
/// except that each position is replaced by a uniform random state with
/// probability `noise`. Predicting well requires looking `period` tokens back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicSource {
    pub n_states: usize,
    pub period: usize,
    pub noise: f64,
}

impl PeriodicSource {
    pub fn sequence(&self, len: usize, rng: &mut impl Rng) -> Vec<TokenId> {
        let n = self.n_states as TokenId;
        let motif: Vec<TokenId> = (0..self.period).map(|_| rng.random_range(0..n)).collect();
        (0..len)
            .map(|t| {
                if rng.random::<f64>() < self.noise {
                    rng.random_range(0..n)
                } else {
                    motif[t % self.period]
                }
            })
            .collect()
    }

    pub fn corpus(&self, n_docs: usize, doc_len: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = (0..n_docs).map(|_| self.sequence(doc_len, &mut rng)).collect();
        Corpus::new(docs).expect("doc_len >= 2")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_stay_inside_documents() {
        let c = Corpus::new(vec![vec![1, 2, 3], vec![10, 11, 12, 13, 14, 15], vec![7]]).unwrap();
        assert_eq!(c.docs().len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let w = c.sample_window(4, &mut rng);
            assert!(w.windows(2).all(|p| p[1] == p[0] + 1), "{w:?}");
            assert!(w.len() == 3 || w.len() == 4);
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Corpus::new(vec![vec![1]]).is_err());
        assert!(text_corpus("\n\n", &ByteTokenizer::new(1), false, 0).is_err());
    }

    #[test]
    fn text_docs_end_with_eos() {
        let tok = ByteTokenizer::new(1);
        let c = text_corpus("ab\ncd\n", &tok, false, 0).unwrap();
        assert_eq!(c.docs(), &[vec![97, 98, EOS], vec![99, 100, EOS]]);
    }

    #[test]
    fn markov_cycle_visits_every_state() {
        let m = MarkovSource::new(12, 0.9, 3);
        let path = m.main_path(0, 12);
        let mut seen = path.clone();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        assert_eq!(path[11], 0);
    }

    #[test]
    fn periodic_without_noise_repeats() {
        let src = PeriodicSource {
            n_states: 10,
            period: 4,
            noise: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = src.sequence(40, &mut rng);
        assert!((4..40).all(|t| s[t] == s[t - 4]));
    }

    #[test]
    fn markov_main_rate() {
        let m = MarkovSource::new(8, 0.8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = m.sequence(20_000, &mut rng);
        let hits = s
            .windows(2)
            .filter(|w| m.successor[w[0] as usize] == w[1])
            .count();
        let rate = hits as f64 / (s.len() - 1) as f64;
        assert!((rate - 0.8).abs() < 0.015, "{rate}");
    }
}
