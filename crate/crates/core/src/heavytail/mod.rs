//! Asymmetric Laplace, generalized inverse Gaussian and generalized
//! hyperbolic distributions.

mod bessel;
mod gh;
mod gig;

pub use bessel::{bessel_k, bessel_ratio, ln_bessel_k};
pub use gh::{gh_conditional_params, gh_conditional_params_multi, gh_moment_match, gh_moment_match_multi, gh_sample, GhParams, GhSampler, MIN_Q};
pub use gig::{gig_sample, GigParams, GigSampler};

use std::f64::consts::PI;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gmrf::{diff as gdiff, BlockLayout};
use crate::linalg;

/// Asymmetric multivariate Laplace law `Y = m W + sqrt(W) L u` with
/// `W ~ Exp(1)` and `u ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AsymmetricLaplace {
    m: Tensor,
    chol: Tensor,
    layout: BlockLayout,
}

impl AsymmetricLaplace {
    pub fn new(m: Tensor, chol: Tensor, layout: BlockLayout) -> Result<Self> {
        let d = layout.total();
        if m.shape() != [d] || chol.shape() != [d, d] {
            return Err(Error::Dimension(format!(
                "AsymmetricLaplace over D = {d}: m {:?}, chol {:?}",
                m.shape(),
                chol.shape()
            )));
        }
        for r in 0..d {
            if !(chol.at2(r, r) > 0.0) {
                return Err(Error::Contract(format!("Cholesky diagonal {r} is not positive")));
            }
            if (r + 1..d).any(|c| chol.at2(r, c) != 0.0) {
                return Err(Error::Contract("Cholesky factor is not lower triangular".into()));
            }
        }
        if !m.is_finite() || !chol.is_finite() {
            return Err(Error::Numeric("AsymmetricLaplace parameters are not finite".into()));
        }
        Ok(AsymmetricLaplace { m, chol, layout })
    }

    /// Symmetric law with `m = 0`, `Sigma = I`.
    pub fn symmetric(layout: BlockLayout) -> Self {
        let d = layout.total();
        AsymmetricLaplace {
            m: Tensor::zeros(&[d]),
            chol: Tensor::eye(d),
            layout,
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn m(&self) -> &Tensor {
        &self.m
    }

    pub fn chol(&self) -> &Tensor {
        &self.chol
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn covariance(&self) -> Tensor {
        linalg::outer_lower(&self.chol)
    }

    /// [`al_sample`] with noise drawn from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let u = Tensor::vector((0..self.dim()).map(|_| rng.sample(StandardNormal)).collect());
        let e: f64 = rng.sample(Open01);
        al_sample(self, &u, e).expect("noise has the right shape and range")
    }
}

/// Unit-mean exponential weight `-ln(1 - e)`.
pub fn exponential_weight(e: f64) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Domain(format!("uniform draw {e} outside (0, 1)")));
    }
    Ok(-(-e).ln_1p())
}

pub fn al_sample(al: &AsymmetricLaplace, u: &Tensor, e: f64) -> Result<Tensor> {
    if u.shape() != [al.dim()] {
        return Err(Error::Dimension(format!("noise {:?} for D = {}", u.shape(), al.dim())));
    }
    let w = exponential_weight(e)?;
    let lu = linalg::matvec(&al.chol, u.data());
    let sw = w.sqrt();
    Ok(Tensor::vector(al.m.data().iter().zip(lu).map(|(m, v)| m * w + sw * v).collect()))
}

/// Differentiable batch of draws. `m` is `[D]` or `[B, D]`, `chol` is
/// `[D, D]` or `[B, D, D]`, `u` is `[B, D]` and `e` holds `B` uniforms.
pub fn al_sample_var<'t>(m: Var<'t>, chol: Var<'t>, u: Var<'t>, e: &[f64]) -> Result<Var<'t>> {
    let shape = u.shape();
    if shape.len() != 2 || shape[0] != e.len() {
        return Err(Error::Dimension(format!("noise {shape:?} with {} weights", e.len())));
    }
    let (b, d) = (shape[0], shape[1]);
    let mut wm = Vec::with_capacity(b * d);
    let mut sm = Vec::with_capacity(b * d);
    for &ek in e {
        let w = exponential_weight(ek)?;
        wm.extend(std::iter::repeat_n(w, d));
        sm.extend(std::iter::repeat_n(w.sqrt(), d));
    }
    let tape = u.tape();
    let wv = tape.constant(Tensor::new(vec![b, d], wm)?);
    let sv = tape.constant(Tensor::new(vec![b, d], sm)?);
    let scaled = gdiff::lower_apply(chol, u)?.mul(sv)?;
    m.mul(wv)?.add(scaled)
}

/// Log-density of the law at `y != 0`.
pub fn al_log_density(al: &AsymmetricLaplace, y: &Tensor) -> Result<f64> {
    let d = al.dim();
    if y.shape() != [d] {
        return Err(Error::Dimension(format!("point {:?} for D = {d}", y.shape())));
    }
    if y.data().iter().all(|&v| v == 0.0) {
        return Err(Error::Domain("the density is singular at the origin".into()));
    }
    let wy = linalg::solve_lower(&al.chol, y)?;
    let wm = linalg::solve_lower(&al.chol, &al.m)?;
    let qy: f64 = wy.data().iter().map(|v| v * v).sum();
    let c2: f64 = 2.0 + wm.data().iter().map(|v| v * v).sum::<f64>();
    let ym: f64 = wy.data().iter().zip(wm.data()).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..d).map(|k| al.chol.at2(k, k).ln()).sum();
    let v = (2.0 - d as f64) / 2.0;
    let out = 2f64.ln() + ym - 0.5 * d as f64 * (2.0 * PI).ln() - logdet + 0.5 * v * (qy.ln() - c2.ln())
        + ln_bessel_k(v, (c2 * qy).sqrt())?;
    if !out.is_finite() {
        return Err(Error::Numeric(format!("non-finite log-density at {y:?}")));
    }
    Ok(out)
}

/// Plain-value wrapper of [`al_sample_var`] for a single draw, used to check
/// the differentiable path against [`al_sample`].
pub fn al_sample_on_tape(al: &AsymmetricLaplace, u: &Tensor, e: f64) -> Result<Tensor> {
    let tape = Tape::new();
    let d = al.dim();
    let out = al_sample_var(
        tape.constant(al.m.clone()),
        tape.constant(al.chol.clone()),
        tape.constant(u.clone().reshape(&[1, d])?),
        &[e],
    )?;
    let v = out.value().clone();
    v.reshape(&[d])
}
