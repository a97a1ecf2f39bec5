use crate::error::{Error, Result};

/// Boolean `query_len × key_len` attention mask; `true` means attend.
/// Every query row has at least one allowed key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(queries: usize, keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != queries * keys {
            return Err(Error::shape(
                "attention mask",
                format!("{} entries for {queries}x{keys}", allowed.len()),
            ));
        }
        for q in 0..queries {
            if !allowed[q * keys..(q + 1) * keys].iter().any(|&a| a) {
                return Err(Error::invalid(format!(
                    "attention mask row {q} has no allowed key"
                )));
            }
        }
        Ok(Self {
            queries,
            keys,
            allowed,
        })
    }

    pub fn full(queries: usize, keys: usize) -> Self {
        Self {
            queries,
            keys,
            allowed: vec![true; queries * keys],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.queries, self.keys)
    }

    #[inline]
    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.keys + key]
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.allowed[query * self.keys..(query + 1) * self.keys]
    }
}

/// Banded mask: query `i` sees keys `j` with `|i − j| ≤ window`.
pub fn local_mask(seq_len: usize, window: usize) -> Result<AttentionMask> {
    if window == 0 {
        return Err(Error::invalid("local attention window must be ≥ 1"));
    }
    let allowed = (0..seq_len * seq_len)
        .map(|idx| (idx / seq_len).abs_diff(idx % seq_len) <= window)
        .collect();
    AttentionMask::new(seq_len, seq_len, allowed)
}
