use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-device plan: depth `k` plus the ranks of the deepest `k` layers,
/// ordered shallow to deep (`ranks[0]` sits on layer `L - k`).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoraConfig {
    ranks: Vec<usize>,
}

impl LoraConfig {
    /// Validates positivity and the nondecreasing-rank rule.
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if let Some(pos) = ranks.iter().position(|&r| r == 0) {
            return Err(Error::InvalidLoraConfig(format!("rank at position {pos} is zero")));
        }
        if let Some(w) = ranks.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::InvalidLoraConfig(format!(
                "ranks must be nondecreasing with depth, got {} then {} at positions {} and {}",
                ranks[w],
                ranks[w + 1],
                w,
                w + 1
            )));
        }
        Ok(LoraConfig { ranks })
    }

    /// Depth-0 config: head only.
    pub fn empty() -> Self {
        LoraConfig { ranks: Vec::new() }
    }

    /// The deepest `depth` entries of a layer-indexed rank distribution.
    pub fn suffix_of(distribution: &[usize], depth: usize) -> Result<Self> {
        if depth > distribution.len() {
            return Err(Error::InvalidLoraConfig(format!(
                "depth {depth} exceeds {} layers",
                distribution.len()
            )));
        }
        LoraConfig::new(distribution[distribution.len() - depth..].to_vec())
    }

    pub fn depth(&self) -> usize {
        self.ranks.len()
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn rank_sum(&self) -> usize {
        self.ranks.iter().sum()
    }

    /// First adapted layer index for a stack of `layers` blocks.
    pub fn first_layer(&self, layers: usize) -> usize {
        layers - self.depth()
    }

    /// `(layer_index, rank)` pairs for a stack of `layers` blocks.
    pub fn layer_ranks(&self, layers: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let first = layers.saturating_sub(self.depth());
        self.ranks.iter().enumerate().map(move |(i, &r)| (first + i, r))
    }

    /// Checks depth against `layers` and the total budget `psi`.
    pub fn validate(&self, layers: usize, psi: usize) -> Result<()> {
        if self.depth() > layers {
            return Err(Error::InvalidLoraConfig(format!(
                "depth {} exceeds {layers} layers",
                self.depth()
            )));
        }
        if self.rank_sum() > psi {
            return Err(Error::InvalidLoraConfig(format!(
                "rank sum {} exceeds budget {psi}",
                self.rank_sum()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_rejected() {
        assert!(LoraConfig::new(vec![4, 2]).is_err());
        assert!(LoraConfig::new(vec![2, 2, 4]).is_ok());
        assert!(LoraConfig::new(vec![0, 1]).is_err());
    }

    #[test]
    fn suffix_slicing() {
        let r: Vec<usize> = (2..=13).collect();
        let c = LoraConfig::suffix_of(&r, 3).unwrap();
        assert_eq!(c.ranks(), &[11, 12, 13]);
        assert_eq!(c.first_layer(12), 9);
        let pairs: Vec<_> = c.layer_ranks(12).collect();
        assert_eq!(pairs, vec![(9, 11), (10, 12), (11, 13)]);
        assert!(LoraConfig::suffix_of(&r, 13).is_err());
    }

    #[test]
    fn budget_check() {
        let c = LoraConfig::new(vec![5, 6]).unwrap();
        assert!(c.validate(2, 11).is_ok());
        assert!(c.validate(2, 10).is_err());
        assert!(c.validate(1, 100).is_err());
    }
}
