use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bijection on `0..n`, stored as `map[i] = image of i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = alloc::vec![false; n];
        for &m in &map {
            if m >= n || seen[m] {
                return Err(Error::shape("array is not a bijection"));
            }
            seen[m] = true;
        }
        Ok(Permutation(map))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = alloc::vec![0; self.0.len()];
        for (i, &m) in self.0.iter().enumerate() {
            inv[m] = i;
        }
        Permutation(inv)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Permutation) -> Self {
        Permutation(other.0.iter().map(|&i| self.0[i]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// Relabels an instance id, leaving ids outside `0..n` untouched.
    pub fn relabel(&self, label: u8) -> u8 {
        match self.0.get(label as usize) {
            Some(&m) => m as u8,
            None => label,
        }
    }
}
