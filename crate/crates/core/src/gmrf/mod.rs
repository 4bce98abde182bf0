//! Block-structured Gaussian Markov random fields carried by their Cholesky
//! factor.

pub mod diff;
mod layout;

pub use layout::{BlockLayout, LowerMask};

use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::linalg;

pub use crate::linalg::cholesky;

/// Gaussian `N(mu, L L^T)` over a block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGaussian {
    mu: Tensor,
    chol: Tensor,
    layout: BlockLayout,
    mask: LowerMask,
}

impl BlockGaussian {
    pub fn new(mu: Tensor, chol: Tensor, layout: BlockLayout, mask: LowerMask) -> Result<Self> {
        let d = layout.total();
        if mu.shape() != [d] || chol.shape() != [d, d] || mask.dim() != d {
            return Err(Error::Dimension(format!(
                "BlockGaussian over D = {d}: mu {:?}, chol {:?}, mask {}",
                mu.shape(),
                chol.shape(),
                mask.dim()
            )));
        }
        if !mu.is_finite() || !chol.is_finite() {
            return Err(Error::Numeric("BlockGaussian parameters are not finite".into()));
        }
        for r in 0..d {
            if chol.at2(r, r) <= 0.0 {
                return Err(Error::Contract(format!(
                    "Cholesky diagonal {r} is {} (must be positive)",
                    chol.at2(r, r)
                )));
            }
            for c in r + 1..d {
                if chol.at2(r, c) != 0.0 {
                    return Err(Error::Contract(format!("Cholesky factor has entry above diagonal at ({r}, {c})")));
                }
            }
            for c in 0..r {
                if !mask.keeps(r, c) && chol.at2(r, c) != 0.0 {
                    return Err(Error::Contract(format!("masked Cholesky entry ({r}, {c}) is nonzero")));
                }
            }
        }
        Ok(BlockGaussian { mu, chol, layout, mask })
    }

    pub fn standard(layout: BlockLayout) -> Self {
        let d = layout.total();
        BlockGaussian {
            mu: Tensor::zeros(&[d]),
            chol: Tensor::eye(d),
            mask: LowerMask::full(d),
            layout,
        }
    }

    /// From a mean and a dense covariance, with every off-diagonal permitted.
    pub fn from_covariance(mu: Tensor, sigma: &Tensor, layout: BlockLayout) -> Result<Self> {
        let chol = cholesky(sigma)?;
        let mask = LowerMask::full(layout.total());
        Self::new(mu, chol, layout, mask)
    }

    /// Rebuild moments from natural parameters `(eta, lambda)`.
    pub fn from_natural(eta: &Tensor, lambda: &Tensor, layout: BlockLayout) -> Result<Self> {
        let c = cholesky(lambda)?;
        let sigma = linalg::inverse_from_cholesky(&c)?;
        let mu = Tensor::vector(linalg::matvec(&sigma, eta.data()));
        Self::from_covariance(mu, &sigma, layout)
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn chol(&self) -> &Tensor {
        &self.chol
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn mask(&self) -> &LowerMask {
        &self.mask
    }

    pub fn covariance(&self) -> Tensor {
        linalg::outer_lower(&self.chol)
    }

    /// Closed-form differential entropy.
    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        let logdet: f64 = (0..self.dim()).map(|k| self.chol.at2(k, k).ln()).sum();
        0.5 * d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + logdet
    }
}

/// `mu + L u`.
pub fn gmrf_sample(g: &BlockGaussian, u: &Tensor) -> Result<Tensor> {
    if u.shape() != [g.dim()] {
        return Err(Error::Dimension(format!("noise {:?} for D = {}", u.shape(), g.dim())));
    }
    let lu = linalg::matvec(&g.chol, u.data());
    Ok(Tensor::vector(g.mu.data().iter().zip(lu).map(|(m, v)| m + v).collect()))
}

pub fn log_density(g: &BlockGaussian, z: &Tensor) -> Result<f64> {
    if z.shape() != [g.dim()] {
        return Err(Error::Dimension(format!("point {:?} for D = {}", z.shape(), g.dim())));
    }
    let tape = Tape::new();
    let v = diff::log_density(tape.constant(g.mu.clone()), tape.constant(g.chol.clone()), tape.constant(z.clone()))?;
    Ok(v.item())
}

pub fn kl_to_standard(g: &BlockGaussian) -> f64 {
    let tape = Tape::new();
    diff::kl_to_standard(tape.constant(g.mu.clone()), tape.constant(g.chol.clone()))
        .expect("shapes validated at construction")
        .item()
}

/// `KL(q || p)`.
pub fn kl_between(q: &BlockGaussian, p: &BlockGaussian) -> Result<f64> {
    if q.layout != p.layout {
        return Err(Error::Dimension(format!(
            "KL between layouts {:?} and {:?}",
            q.layout.extents(),
            p.layout.extents()
        )));
    }
    check_conditioning(&p.chol)?;
    let tape = Tape::new();
    let v = diff::kl_between(
        tape.constant(q.mu.clone()),
        tape.constant(q.chol.clone()),
        tape.constant(p.mu.clone()),
        tape.constant(p.chol.clone()),
    )?;
    Ok(v.item())
}

fn check_conditioning(chol: &Tensor) -> Result<()> {
    let n = chol.shape()[0];
    for k in 0..n {
        if chol.at2(k, k) <= linalg::PIVOT_TOL {
            return Err(Error::Conditioning(format!(
                "Cholesky diagonal {k} is {:e}",
                chol.at2(k, k)
            )));
        }
    }
    Ok(())
}

/// `(eta, lambda) = (Sigma^{-1} mu, Sigma^{-1})`.
pub fn natural_params(g: &BlockGaussian) -> Result<(Tensor, Tensor)> {
    check_conditioning(&g.chol)?;
    let lambda = linalg::inverse_from_cholesky(&g.chol)?;
    let eta = Tensor::vector(linalg::matvec(&lambda, g.mu.data()));
    Ok((eta, lambda))
}

/// Linear-Gaussian regression of coordinates `idx_i` on `idx_j` under
/// covariance `sigma`, computed through the Cholesky factor of
/// `Sigma_jj`.
#[derive(Clone, Debug)]
pub(crate) struct Regression {
    /// Cholesky factor of `Sigma_jj`.
    pub c_jj: Tensor,
    /// `C_jj^{-1} Sigma_ji`, shape `[d_j, d_i]`.
    pub a: Tensor,
    /// `Sigma_ii - Sigma_ij Sigma_jj^{-1} Sigma_ji`.
    pub schur: Tensor,
}

impl Regression {
    pub fn new(sigma: &Tensor, idx_i: &[usize], idx_j: &[usize]) -> Result<Self> {
        let s_jj = linalg::submatrix(sigma, idx_j, idx_j);
        let c_jj = cholesky(&s_jj).map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::Conditioning(format!(
                "conditioning block is numerically singular (pivot {pivot:e} at {index})"
            )),
            other => other,
        })?;
        let s_ji = linalg::submatrix(sigma, idx_j, idx_i);
        let a = linalg::solve_lower(&c_jj, &s_ji)?;
        let mut schur = linalg::submatrix(sigma, idx_i, idx_i);
        let ata = linalg::gram_t(&a);
        for (s, v) in schur.data_mut().iter_mut().zip(ata.data()) {
            *s -= v;
        }
        Ok(Regression { c_jj, a, schur })
    }

    /// `C_jj^{-1} x`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        linalg::solve_lower(&self.c_jj, &Tensor::vector(x.to_vec()))
            .expect("validated factor")
            .into_data()
    }

    /// `Sigma_ij Sigma_jj^{-1} x`.
    pub fn regress(&self, x: &[f64]) -> Vec<f64> {
        let w = self.whiten(x);
        let (dj, di) = (self.a.shape()[0], self.a.shape()[1]);
        (0..di)
            .map(|c| (0..dj).map(|r| self.a.at2(r, c) * w[r]).sum())
            .collect()
    }

    /// `x^T Sigma_jj^{-1} x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        self.whiten(x).iter().map(|v| v * v).sum()
    }
}

/// Moments of block `i` given block `j = z_j`.
pub fn conditional(g: &BlockGaussian, i: usize, j: usize, z_j: &Tensor) -> Result<(Tensor, Tensor)> {
    let m = g.layout.len();
    if i >= m || j >= m {
        return Err(Error::Dimension(format!("block index out of range for {m} blocks")));
    }
    if i == j {
        return Err(Error::Contract("conditioning a block on itself".into()));
    }
    let cond = conditional_multi(g, &[(j, z_j.clone())])?;
    let remaining = g.layout.complement(&[j]);
    let pos = remaining.iter().position(|&b| b == i).expect("i is unobserved");
    let range = cond.layout.range(pos);
    let idx: Vec<usize> = range.clone().collect();
    let mu = Tensor::vector(cond.mu.data()[range].to_vec());
    let sigma = linalg::submatrix(&cond.covariance(), &idx, &idx);
    Ok((mu, sigma))
}

/// Distribution of the unobserved blocks, in ascending block order, given
/// values for `observed` blocks.
pub fn conditional_multi(g: &BlockGaussian, observed: &[(usize, Tensor)]) -> Result<BlockGaussian> {
    let (mu, sigma, layout) = conditional_moments(g, observed)?;
    let chol = cholesky(&sigma).map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot } => Error::Conditioning(format!(
            "conditional covariance lost definiteness (pivot {pivot:e} at {index})"
        )),
        other => other,
    })?;
    let mask = LowerMask::full(layout.total());
    BlockGaussian::new(mu, chol, layout, mask)
}

/// Observed/free split of a block layout: `(free blocks, free coordinates,
/// observed coordinates, observed values)`, with blocks in ascending order.
pub(crate) type Split = (Vec<usize>, Vec<usize>, Vec<usize>, Vec<f64>);

pub(crate) fn split_observed(layout: &BlockLayout, observed: &[(usize, Tensor)]) -> Result<Split> {
    let m = layout.len();
    if observed.is_empty() || observed.len() >= m {
        return Err(Error::Contract(format!(
            "conditioning needs between 1 and {} observed blocks, got {}",
            m - 1,
            observed.len()
        )));
    }
    let mut obs_blocks: Vec<usize> = Vec::with_capacity(observed.len());
    let mut values = Vec::new();
    let mut idx_j = Vec::new();
    let mut sorted: Vec<&(usize, Tensor)> = observed.iter().collect();
    sorted.sort_by_key(|(b, _)| *b);
    for (b, v) in sorted {
        if *b >= m {
            return Err(Error::Dimension(format!("block {b} out of range for {m} blocks")));
        }
        if obs_blocks.contains(b) {
            return Err(Error::Contract(format!("block {b} observed twice")));
        }
        let range = layout.range(*b);
        if v.shape() != [range.len()] {
            return Err(Error::Dimension(format!(
                "block {b} expects {} values, got {:?}",
                range.len(),
                v.shape()
            )));
        }
        obs_blocks.push(*b);
        idx_j.extend(range);
        values.extend_from_slice(v.data());
    }
    let free = layout.complement(&obs_blocks);
    let idx_i: Vec<usize> = free.iter().flat_map(|&b| layout.range(b)).collect();
    Ok((free, idx_i, idx_j, values))
}

/// Conditional mean and covariance of the unobserved blocks.
pub fn conditional_moments(
    g: &BlockGaussian,
    observed: &[(usize, Tensor)],
) -> Result<(Tensor, Tensor, BlockLayout)> {
    let (free, idx_i, idx_j, values) = split_observed(&g.layout, observed)?;
    let z_j: Vec<f64> = idx_j.iter().zip(values).map(|(&k, x)| x - g.mu.data()[k]).collect();
    let sigma = g.covariance();
    let reg = Regression::new(&sigma, &idx_i, &idx_j)?;
    let shift = reg.regress(&z_j);
    let mu = Tensor::vector(idx_i.iter().zip(shift).map(|(&k, s)| g.mu.data()[k] + s).collect());
    let layout = BlockLayout::new(free.iter().map(|&b| g.layout.extent(b)).collect())?;
    Ok((mu, reg.schur, layout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(rho: f64) -> BlockGaussian {
        let sigma = Tensor::matrix(2, 2, vec![1.0, rho, rho, 1.0]).unwrap();
        BlockGaussian::from_covariance(Tensor::zeros(&[2]), &sigma, BlockLayout::new(vec![1, 1]).unwrap()).unwrap()
    }

    #[test]
    fn scalar_conditional_matches_closed_form() {
        let rho = 0.6;
        let g = two_by_two(rho);
        let (mu, s) = conditional(&g, 0, 1, &Tensor::vector(vec![1.0])).unwrap();
        assert!((mu.data()[0] - rho).abs() < 1e-15);
        assert!((s.data()[0] - (1.0 - rho * rho)).abs() < 1e-15);
    }

    #[test]
    fn sample_with_zero_noise_is_mean() {
        let g = two_by_two(0.3);
        assert_eq!(gmrf_sample(&g, &Tensor::zeros(&[2])).unwrap(), *g.mu());
    }

    #[test]
    fn one_dimensional_log_density_at_mode() {
        let g = BlockGaussian::standard(BlockLayout::new(vec![1]).unwrap());
        let v = log_density(&g, &Tensor::vector(vec![0.0])).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_forms() {
        let layout = BlockLayout::new(vec![1]).unwrap();
        let g = BlockGaussian::new(Tensor::vector(vec![1.5]), Tensor::eye(1), layout.clone(), LowerMask::full(1)).unwrap();
        assert!((kl_to_standard(&g) - 1.125).abs() < 1e-15);
        assert_eq!(kl_to_standard(&BlockGaussian::standard(layout)), 0.0);
        assert!(kl_between(&g, &g).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rejects_masked_nonzero() {
        let layout = BlockLayout::new(vec![1, 1]).unwrap();
        let chol = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.5, 1.0]).unwrap();
        let err = BlockGaussian::new(Tensor::zeros(&[2]), chol, layout, LowerMask::diagonal(2));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn natural_params_of_identity() {
        let layout = BlockLayout::new(vec![2]).unwrap();
        let g = BlockGaussian::new(Tensor::vector(vec![0.5, -1.0]), Tensor::eye(2), layout, LowerMask::full(2)).unwrap();
        let (eta, lambda) = natural_params(&g).unwrap();
        assert_eq!(eta, *g.mu());
        assert_eq!(lambda, Tensor::eye(2));
    }
}
