/// Boolean attention mask. Rows are query positions of the current forward
/// call, columns are key positions: the cached prefix first, then the new
/// tokens in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                allowed.push(f(r, c));
            }
        }
        Self { rows, cols, allowed }
    }

    /// Lower-triangular mask for `n_new` tokens appended after `cache_len` cached ones.
    pub fn causal(n_new: usize, cache_len: usize) -> Self {
        Self::from_fn(n_new, cache_len + n_new, |r, c| c <= cache_len + r)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.allowed[row * self.cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.allowed[row * self.cols..(row + 1) * self.cols]
    }

    /// Stacks `self` on top of `other`; both must have the same column count.
    pub fn vstack(&self, other: &AttnMask) -> Option<AttnMask> {
        if self.cols != other.cols {
            return None;
        }
        let mut allowed = self.allowed.clone();
        allowed.extend_from_slice(&other.allowed);
        Some(AttnMask {
            rows: self.rows + other.rows,
            cols: self.cols,
            allowed,
        })
    }

    /// Does row `r` allow the key column that corresponds to its own query?
    pub fn allows_self(&self, r: usize) -> bool {
        let own = self.cols - self.rows + r;
        self.allowed(r, own)
    }
}
