use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gig::{GigParams, GigSampler};
use super::AsymmetricLaplace;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::gmrf::{split_observed, BlockLayout, Regression};
use crate::linalg;

/// Smallest admissible `delta = Q(z_j)`; below it the mixing law collapses.
pub const MIN_Q: f64 = 1e-8;

/// Generalized hyperbolic law of the free blocks given the observed ones:
/// `Y = mu + m W + sqrt(W) X` with `W ~ GIG(lambda, delta^2, xi^2)` and
/// `X ~ N(0, dispersion)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhParams {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: Tensor,
    pub delta: f64,
    pub mu: Tensor,
    pub dispersion: Tensor,
    pub xi: f64,
    /// Skew `dispersion * beta`.
    pub m: Tensor,
}

impl GhParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.mu.shape() != [d] || self.m.shape() != [d] || self.beta.shape() != [d] || self.dispersion.shape() != [d, d] {
            return Err(Error::Dimension(format!("inconsistent GH parameter shapes for d = {d}")));
        }
        if !(self.xi > 0.0) || !(self.delta >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Domain(format!(
                "GH needs xi > 0, delta >= 0 (got xi = {}, delta = {})",
                self.xi, self.delta
            )));
        }
        linalg::cholesky(&self.dispersion)?;
        let bdb: f64 = self.beta.data().iter().zip(self.m.data()).map(|(b, m)| b * m).sum();
        let want = self.xi * self.xi + bdb;
        if ((self.alpha * self.alpha - want) / want).abs() > 1e-10 {
            return Err(Error::Contract(format!(
                "alpha^2 = {} but xi^2 + beta' dispersion beta = {want}",
                self.alpha * self.alpha
            )));
        }
        Ok(())
    }

    /// Mixing law of `W`.
    pub fn mixing(&self) -> Result<GigParams> {
        if self.delta < MIN_Q {
            return Err(Error::DegenerateConditioning(format!(
                "Q(z_j) = {:e} is below {MIN_Q:e}",
                self.delta
            )));
        }
        GigParams::new(self.lambda, self.delta * self.delta, self.xi * self.xi)
    }

    /// Mean and covariance: `mu + m E[W]` and `E[W] dispersion + Var[W] m m'`.
    pub fn moments(&self) -> Result<(Tensor, Tensor)> {
        let gig = self.mixing()?;
        let ew = gig.mean()?;
        let vw = gig.variance()?.max(0.0);
        let d = self.dim();
        let mean = Tensor::vector(self.mu.data().iter().zip(self.m.data()).map(|(u, m)| u + m * ew).collect());
        let mut cov = Tensor::zeros(&[d, d]);
        for r in 0..d {
            for c in 0..d {
                let v = ew * self.dispersion.at2(r, c) + vw * self.m.data()[r] * self.m.data()[c];
                cov.set2(r, c, v);
            }
        }
        let cov = linalg::symmetrize(&cov);
        if !mean.is_finite() || !cov.is_finite() {
            return Err(Error::Numeric("non-finite GH moments".into()));
        }
        Ok((mean, cov))
    }
}

/// Conditional law of the free blocks of `al` given values for `observed`.
/// The free blocks appear in ascending order in the returned layout.
pub fn gh_conditional_params_multi(al: &AsymmetricLaplace, observed: &[(usize, Tensor)]) -> Result<(GhParams, BlockLayout)> {
    let layout = al.layout();
    let (free, idx_i, idx_j, z_j) = split_observed(layout, observed)?;
    let sigma = al.covariance();
    let reg = Regression::new(&sigma, &idx_i, &idx_j)?;
    let m_all = al.m().data();
    let m_j: Vec<f64> = idx_j.iter().map(|&k| m_all[k]).collect();

    let d_j = idx_j.len() as f64;
    let delta = reg.quad(&z_j).sqrt();
    let xi = (2.0 + reg.quad(&m_j)).sqrt();
    let mu = Tensor::vector(reg.regress(&z_j));
    let m = Tensor::vector(idx_i.iter().zip(reg.regress(&m_j)).map(|(&k, r)| m_all[k] - r).collect());

    let dispersion = reg.schur;
    let c = linalg::cholesky(&dispersion).map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot } => Error::Conditioning(format!(
            "conditional dispersion lost definiteness (pivot {pivot:e} at {index})"
        )),
        other => other,
    })?;
    let beta = linalg::solve_lower_t(&c, &linalg::solve_lower(&c, &m)?)?;
    let bdb: f64 = beta.data().iter().zip(m.data()).map(|(b, m)| b * m).sum();
    let params = GhParams {
        lambda: 1.0 - d_j / 2.0,
        alpha: (xi * xi + bdb).sqrt(),
        beta,
        delta,
        mu,
        dispersion,
        xi,
        m,
    };
    let out_layout = BlockLayout::new(free.iter().map(|&b| layout.extent(b)).collect())?;
    Ok((params, out_layout))
}

/// Conditional law of block `i` given block `j = z_j`, marginalising any
/// other blocks.
pub fn gh_conditional_params(al: &AsymmetricLaplace, i: usize, j: usize, z_j: &Tensor) -> Result<GhParams> {
    let nb = al.layout().len();
    if i >= nb || j >= nb {
        return Err(Error::Dimension(format!("block index out of range for {nb} blocks")));
    }
    if i == j {
        return Err(Error::Contract("conditioning a block on itself".into()));
    }
    let (full, layout) = gh_conditional_params_multi(al, &[(j, z_j.clone())])?;
    let pos = al.layout().complement(&[j]).iter().position(|&b| b == i).expect("i is free");
    let idx: Vec<usize> = layout.range(pos).collect();
    let pick = |t: &Tensor| Tensor::vector(idx.iter().map(|&k| t.data()[k]).collect());
    let mu = pick(&full.mu);
    let m = pick(&full.m);
    let dispersion = linalg::submatrix(&full.dispersion, &idx, &idx);
    let c = linalg::cholesky(&dispersion).map_err(|_| Error::Conditioning("singular block dispersion".into()))?;
    let beta = linalg::solve_lower_t(&c, &linalg::solve_lower(&c, &m)?)?;
    let bdb: f64 = beta.data().iter().zip(m.data()).map(|(b, m)| b * m).sum();
    Ok(GhParams {
        lambda: full.lambda,
        alpha: (full.xi * full.xi + bdb).sqrt(),
        beta,
        delta: full.delta,
        mu,
        dispersion,
        xi: full.xi,
        m,
    })
}

/// Moment-matched Gaussian approximation `(mean, cov)` of the GH conditional.
pub fn gh_moment_match(al: &AsymmetricLaplace, i: usize, j: usize, z_j: &Tensor) -> Result<(Tensor, Tensor)> {
    gh_conditional_params(al, i, j, z_j)?.moments()
}

pub fn gh_moment_match_multi(al: &AsymmetricLaplace, observed: &[(usize, Tensor)]) -> Result<(Tensor, Tensor, BlockLayout)> {
    let (p, layout) = gh_conditional_params_multi(al, observed)?;
    let (mean, cov) = p.moments()?;
    Ok((mean, cov, layout))
}

/// Reusable sampler with the GIG envelope and dispersion factor precomputed.
#[derive(Clone, Debug)]
pub struct GhSampler {
    gig: GigSampler,
    chol: Tensor,
    mu: Vec<f64>,
    m: Vec<f64>,
}

impl GhSampler {
    pub fn new(p: &GhParams) -> Result<Self> {
        let gig = GigSampler::new(&p.mixing()?)?;
        Ok(GhSampler {
            gig,
            chol: linalg::cholesky(&p.dispersion)?,
            mu: p.mu.data().to_vec(),
            m: p.m.data().to_vec(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let w = self.gig.sample(rng);
        let n: Vec<f64> = (0..self.mu.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_given(w, &n)
    }

    /// Draw with the mixing weight and the standard-normal noise supplied.
    pub fn sample_given(&self, w: f64, n: &[f64]) -> Tensor {
        let x = linalg::matvec(&self.chol, n);
        let sw = w.sqrt();
        Tensor::vector((0..self.mu.len()).map(|k| self.mu[k] + self.m[k] * w + sw * x[k]).collect())
    }
}

pub fn gh_sample<R: Rng + ?Sized>(p: &GhParams, rng: &mut R) -> Result<Tensor> {
    Ok(GhSampler::new(p)?.sample(rng))
}
