//! Temperature / top-k / top-p truncation and the keyed random stream used by
//! every sampling decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::DecodeError;
use crate::model::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// 0 means greedy.
    pub temperature: f64,
    /// 0 disables the top-k cut.
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 10,
            top_p: 0.95,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(DecodeError::Sampling(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DecodeError::Sampling(format!(
                "top_p {} must lie in (0, 1]",
                self.top_p
            )));
        }
        Ok(())
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }
}

/// A normalized distribution over the tokens that survived truncation,
/// sorted by decreasing probability (ties: lower id first).
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDist {
    entries: Vec<(TokenId, f64)>,
}

impl TruncatedDist {
    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.entries
            .iter()
            .find(|(t, _)| *t == id)
            .map_or(0.0, |&(_, p)| p)
    }

    /// The `n` most probable tokens (fewer if the support is smaller).
    pub fn top(&self, n: usize) -> Vec<TokenId> {
        self.entries.iter().take(n).map(|&(t, _)| t).collect()
    }

    /// Inverse-CDF draw for `u` in [0, 1).
    pub fn sample(&self, u: f64) -> TokenId {
        let mut acc = 0.0;
        for &(t, p) in &self.entries {
            acc += p;
            if u < acc {
                return t;
            }
        }
        self.entries.last().expect("non-empty distribution").0
    }
}

/// Applies temperature, keeps the `top_k` most probable tokens, then the
/// smallest prefix of those (renormalized) whose mass reaches `top_p`, and
/// renormalizes the survivors.
pub fn truncate_dist(logits: &[f32], cfg: &SamplingConfig) -> Result<TruncatedDist, DecodeError> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..logits.len()).filter(|&i| logits[i].is_finite()).collect();
    if order.is_empty() {
        return Err(DecodeError::DegenerateLogits);
    }
    // Sorting by raw logit is sorting by probability for any positive temperature.
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    if cfg.is_greedy() {
        return Ok(TruncatedDist {
            entries: vec![(order[0] as TokenId, 1.0)],
        });
    }
    let max = logits[order[0]] as f64;
    let mut probs: Vec<f64> = order
        .iter()
        .map(|&i| ((logits[i] as f64 - max) / cfg.temperature).exp())
        .collect();
    if cfg.top_k > 0 && cfg.top_k < order.len() {
        order.truncate(cfg.top_k);
        probs.truncate(cfg.top_k);
    }
    let z: f64 = probs.iter().sum();
    let mut keep = 0;
    let mut cum = 0.0;
    for p in &probs {
        keep += 1;
        cum += p / z;
        if cum >= cfg.top_p - 1e-12 {
            break;
        }
    }
    let z2: f64 = probs[..keep].iter().sum();
    Ok(TruncatedDist {
        entries: order[..keep]
            .iter()
            .zip(&probs[..keep])
            .map(|(&i, &p)| (i as TokenId, p / z2))
            .collect(),
    })
}

/// Counter-based uniform stream: the draw for `(stream, index)` depends only
/// on the session seed and those two counters, never on how many draws were
/// made before.
#[derive(Debug, Clone, Copy)]
pub struct SessionRng {
    seed: u64,
}

impl SessionRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn uniform(&self, stream: u64, index: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(index as u128 * 2);
        rng.random::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(temperature: f64, top_k: usize, top_p: f64) -> SamplingConfig {
        SamplingConfig {
            temperature,
            top_k,
            top_p,
            seed: 0,
        }
    }

    #[test]
    fn greedy_is_point_mass_on_argmax() {
        let d = truncate_dist(&[0.1, 2.0, 2.0, -1.0], &cfg(0.0, 10, 0.95)).unwrap();
        assert_eq!(d.entries(), &[(1, 1.0)]);
        let d = truncate_dist(&[0.1, 2.0, 1.5, -1.0], &cfg(1e-6, 10, 0.95)).unwrap();
        assert_eq!(d.entries(), &[(1, 1.0)]);
    }

    #[test]
    fn uniform_logits_keep_lowest_ids() {
        let d = truncate_dist(&[0.5; 32], &cfg(1.0, 10, 0.95)).unwrap();
        assert_eq!(d.top(32), (0..10).collect::<Vec<_>>());
        for &(_, p) in d.entries() {
            assert!((p - 0.1).abs() < 1e-12);
        }
    }

    /// Brute force: enumerate every subset in order of inclusion.
    fn reference(logits: &[f64], temp: f64, top_k: usize, top_p: f64) -> Vec<(usize, f64)> {
        let z: f64 = logits.iter().map(|l| (l / temp).exp()).sum();
        let mut p: Vec<(usize, f64)> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| (i, (l / temp).exp() / z))
            .collect();
        p.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        p.truncate(top_k);
        let zk: f64 = p.iter().map(|x| x.1).sum();
        let mut out = Vec::new();
        let mut cum = 0.0;
        for (i, q) in p {
            out.push((i, q / zk));
            cum += q / zk;
            if cum >= top_p {
                break;
            }
        }
        let zn: f64 = out.iter().map(|x| x.1).sum();
        out.into_iter().map(|(i, q)| (i, q / zn)).collect()
    }

    #[test]
    fn nucleus_matches_exhaustive_reference() {
        let mut logits = vec![2.0f32, 1.0, 0.0];
        logits.extend(std::iter::repeat_n(-3.0, 13));
        let d = truncate_dist(&logits, &cfg(1.0, 10, 0.95)).unwrap();
        let want = reference(
            &logits.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            1.0,
            10,
            0.95,
        );
        assert_eq!(d.len(), want.len());
        for (&(t, p), &(i, q)) in d.entries().iter().zip(&want) {
            assert_eq!(t as usize, i);
            assert!((p - q).abs() < 1e-12);
        }
        // softmax of [2,1,0] restricted: the nucleus here is {0,1,2} plus tail
        // tokens until 0.95 of the top-10 mass is covered.
        assert!(d.prob(0) > d.prob(1) && d.prob(1) > d.prob(2));
    }

    #[test]
    fn all_infinite_is_an_error() {
        assert!(matches!(
            truncate_dist(&[f32::NEG_INFINITY; 4], &cfg(1.0, 0, 1.0)),
            Err(DecodeError::DegenerateLogits)
        ));
    }

    #[test]
    fn bad_config_rejected() {
        assert!(truncate_dist(&[0.0; 8], &cfg(-1.0, 0, 1.0)).is_err());
        assert!(truncate_dist(&[0.0; 8], &cfg(1.0, 0, 0.0)).is_err());
        assert!(truncate_dist(&[0.0; 8], &cfg(1.0, 0, 1.5)).is_err());
    }

    #[test]
    fn session_rng_is_keyed() {
        let r = SessionRng::new(42);
        assert_eq!(r.uniform(3, 1), r.uniform(3, 1));
        assert_ne!(r.uniform(3, 1), r.uniform(3, 2));
        assert_ne!(r.uniform(3, 1), r.uniform(4, 1));
        assert_ne!(r.uniform(3, 1), SessionRng::new(43).uniform(3, 1));
        let u = r.uniform(0, 0);
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn sample_inverse_cdf() {
        let d = truncate_dist(&[1.0, 1.0, f32::NEG_INFINITY, 1.0], &cfg(1.0, 0, 1.0)).unwrap();
        assert_eq!(d.sample(0.0), 0);
        assert_eq!(d.sample(0.5), 1);
        assert_eq!(d.sample(0.99), 3);
    }
}
