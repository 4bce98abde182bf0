use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-modality latent extents and their offsets in the joint vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockLayout {
    extents: Vec<usize>,
    offsets: Vec<usize>,
}

impl TryFrom<Vec<usize>> for BlockLayout {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BlockLayout> for Vec<usize> {
    fn from(l: BlockLayout) -> Self {
        l.extents
    }
}

impl BlockLayout {
    pub fn new(extents: Vec<usize>) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::Config("a block layout needs at least one block".into()));
        }
        if let Some(b) = extents.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("block {b} has zero extent")));
        }
        let offsets = extents
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        Ok(BlockLayout { extents, offsets })
    }

    /// `m` blocks of extent `d`.
    pub fn uniform(m: usize, d: usize) -> Result<Self> {
        Self::new(vec![d; m])
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.extents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extents.is_empty()
    }

    pub fn total(&self) -> usize {
        self.offsets.last().unwrap() + self.extents.last().unwrap()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn extent(&self, b: usize) -> usize {
        self.extents[b]
    }

    pub fn offset(&self, b: usize) -> usize {
        self.offsets[b]
    }

    pub fn range(&self, b: usize) -> Range<usize> {
        self.offsets[b]..self.offsets[b] + self.extents[b]
    }

    /// Block containing joint coordinate `k`.
    pub fn block_of(&self, k: usize) -> usize {
        self.offsets.partition_point(|&o| o <= k) - 1
    }

    /// Blocks not listed in `blocks`, ascending.
    pub fn complement(&self, blocks: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|b| !blocks.contains(b)).collect()
    }
}

/// Which strictly-lower entries of a `dim x dim` Cholesky factor may be
/// nonzero. Entries are stored row-major: (1,0), (2,0), (2,1), (3,0), ...
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct LowerMask {
    dim: usize,
    keep: Vec<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMask {
    dim: usize,
    keep: Vec<bool>,
}

impl TryFrom<RawMask> for LowerMask {
    type Error = Error;

    fn try_from(r: RawMask) -> Result<Self> {
        LowerMask::from_keep(r.dim, r.keep)
    }
}

fn lower_index(r: usize, c: usize) -> usize {
    r * (r - 1) / 2 + c
}

impl LowerMask {
    pub fn from_keep(dim: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != dim * dim.saturating_sub(1) / 2 {
            return Err(Error::Dimension(format!(
                "mask over D = {dim} needs {} flags, got {}",
                dim * dim.saturating_sub(1) / 2,
                keep.len()
            )));
        }
        Ok(LowerMask { dim, keep })
    }

    pub fn full(dim: usize) -> Self {
        LowerMask {
            dim,
            keep: vec![true; dim * dim.saturating_sub(1) / 2],
        }
    }

    /// Only the diagonal survives.
    pub fn diagonal(dim: usize) -> Self {
        LowerMask {
            dim,
            keep: vec![false; dim * dim.saturating_sub(1) / 2],
        }
    }

    /// Zero out a `density` fraction of the strictly-lower entries, keeping
    /// `floor((1 - density) * n)` positions chosen uniformly at random.
    pub fn random<R: Rng + ?Sized>(dim: usize, density: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&density) {
            return Err(Error::Config(format!("mask density {density} outside [0, 1]")));
        }
        let n = dim * dim.saturating_sub(1) / 2;
        let kept = ((1.0 - density) * n as f64 + 1e-9).floor() as usize;
        let mut keep = vec![false; n];
        for k in rand::seq::index::sample(rng, n, kept.min(n)).into_iter() {
            keep[k] = true;
        }
        Ok(LowerMask { dim, keep })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether `(r, c)` with `c < r` may be nonzero.
    pub fn keeps(&self, r: usize, c: usize) -> bool {
        debug_assert!(c < r);
        self.keep[lower_index(r, c)]
    }

    pub fn off_diagonal_count(&self) -> usize {
        self.keep.len()
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Kept strictly-lower positions in storage order.
    pub fn kept_entries(&self) -> Vec<(usize, usize)> {
        (1..self.dim)
            .flat_map(|r| (0..r).map(move |c| (r, c)))
            .filter(|&(r, c)| self.keeps(r, c))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn offsets_and_lookup() {
        let l = BlockLayout::new(vec![2, 3, 1]).unwrap();
        assert_eq!(l.offsets(), &[0, 2, 5]);
        assert_eq!(l.total(), 6);
        assert_eq!(l.block_of(4), 1);
        assert_eq!(l.block_of(5), 2);
        assert_eq!(l.complement(&[1]), vec![0, 2]);
    }

    #[test]
    fn rejects_empty_block() {
        assert!(BlockLayout::new(vec![2, 0]).is_err());
        assert!(BlockLayout::new(vec![]).is_err());
    }

    #[test]
    fn masking_counts() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let m = LowerMask::random(80, 0.84, &mut rng).unwrap();
        assert_eq!(m.off_diagonal_count(), 3160);
        assert_eq!(m.kept_count(), 505);
        assert_eq!(LowerMask::random(8, 0.0, &mut rng).unwrap().kept_count(), 28);
        assert_eq!(LowerMask::random(8, 1.0, &mut rng).unwrap().kept_count(), 0);
    }
}
