use crate::error::ModelError;

/// Per-layer keys and values of every position fed through the model so far.
/// Entries are stored row-major, `d_model` floats per position.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    d_model: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        Self {
            d_model,
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_layers(&self) -> usize {
        self.keys.len()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub(crate) fn keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer]
    }

    pub(crate) fn values(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    /// Appends rows for one layer; `commit` must follow once every layer is written.
    pub(crate) fn push_layer(&mut self, layer: usize, k: &[f32], v: &[f32]) {
        self.keys[layer].extend_from_slice(k);
        self.values[layer].extend_from_slice(v);
    }

    pub(crate) fn commit(&mut self, n: usize) {
        self.len += n;
        debug_assert!(self.keys.iter().all(|k| k.len() == self.len * self.d_model));
    }

    /// Drops every entry at or beyond `new_len`.
    pub fn rollback(&mut self, new_len: usize) -> Result<(), ModelError> {
        if new_len > self.len {
            return Err(ModelError::Rollback {
                len: self.len,
                requested: new_len,
            });
        }
        let keep = new_len * self.d_model;
        for (k, v) in self.keys.iter_mut().zip(&mut self.values) {
            k.truncate(keep);
            v.truncate(keep);
        }
        self.len = new_len;
        Ok(())
    }

    /// Keeps `[0, base)` plus the entries at `base + offsets[i]`, moved down to
    /// `base + i`. Offsets must be strictly increasing. Used to keep the accepted
    /// branch of a flattened draft tree.
    pub fn retain_tail(&mut self, base: usize, offsets: &[usize]) -> Result<(), ModelError> {
        let bad = ModelError::Rollback {
            len: self.len,
            requested: base + offsets.len(),
        };
        if base > self.len || offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad);
        }
        if offsets.last().is_some_and(|&o| base + o >= self.len) {
            return Err(bad);
        }
        let d = self.d_model;
        for store in self.keys.iter_mut().chain(self.values.iter_mut()) {
            for (i, &off) in offsets.iter().enumerate() {
                let (dst, src) = ((base + i) * d, (base + off) * d);
                if dst != src {
                    store.copy_within(src..src + d, dst);
                }
            }
            store.truncate((base + offsets.len()) * d);
        }
        self.len = base + offsets.len();
        Ok(())
    }
}
