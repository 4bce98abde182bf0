//! Differentiable Gaussian terms on tape variables.
//!
//! Means are `[D]` or `[B, D]`; Cholesky factors are `[D, D]` or
//! `[B, D, D]`. Per-row results have shape `[B]`, or are rank-0 when every
//! input is unbatched.

use std::f64::consts::{E, PI};

use crate::diffcore::{Tensor, Var};
use crate::error::{Error, Result};

fn dim_of(chol: &Var<'_>) -> Result<usize> {
    let s = chol.shape();
    match s.len() {
        2 | 3 if s[s.len() - 1] == s[s.len() - 2] => Ok(s[s.len() - 1]),
        _ => Err(Error::Dimension(format!("Cholesky factor of shape {s:?}"))),
    }
}

/// Diagonal of `[D, D]` or `[B, D, D]`, as `[D]` or `[B, D]`.
pub fn diag<'t>(chol: Var<'t>) -> Result<Var<'t>> {
    let d = dim_of(&chol)?;
    let eye = chol.tape().constant(Tensor::eye(d));
    Ok(chol.mul(eye)?.sum_last())
}

/// `sum_k ln L_kk` per row.
pub fn log_det_chol<'t>(chol: Var<'t>) -> Result<Var<'t>> {
    Ok(diag(chol)?.ln().sum_last())
}

/// Row-wise `L x`.
pub fn lower_apply<'t>(chol: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    let d = dim_of(&chol)?;
    let xs = x.shape();
    match (chol.shape().len(), xs.len()) {
        (2, 1) => chol.matmul(x.reshape(&[d, 1])?)?.reshape(&[d]),
        (2, 2) => x.matmul(chol.transpose()?),
        (3, 1) => {
            let b = chol.shape()[0];
            chol.matmul(x.reshape(&[1, d, 1])?)?.reshape(&[b, d])
        }
        (3, 2) => {
            let out = chol.matmul(x.reshape(&[xs[0], d, 1])?)?;
            let b = out.shape()[0];
            out.reshape(&[b, d])
        }
        _ => Err(Error::Dimension(format!("L x with x of shape {xs:?}"))),
    }
}

/// Row-wise `L^{-1} x`.
pub fn lower_solve<'t>(chol: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    let d = dim_of(&chol)?;
    let xs = x.shape();
    match (chol.shape().len(), xs.len()) {
        (2, 1) => chol.solve_lower(x.reshape(&[d, 1])?)?.reshape(&[d]),
        (2, 2) => chol.solve_lower(x.transpose()?)?.transpose(),
        (3, 1) => {
            let b = chol.shape()[0];
            chol.solve_lower(x.reshape(&[1, d, 1])?)?.reshape(&[b, d])
        }
        (3, 2) => {
            let out = chol.solve_lower(x.reshape(&[xs[0], d, 1])?)?;
            let b = out.shape()[0];
            out.reshape(&[b, d])
        }
        _ => Err(Error::Dimension(format!("L^-1 x with x of shape {xs:?}"))),
    }
}

/// Reparametrized draw `mu + L u`.
pub fn sample<'t>(mu: Var<'t>, chol: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
    lower_apply(chol, u)?.add(mu)
}

/// Row-wise squared Euclidean norm over the last axis (or rank-0 for a vector).
fn sq_norm<'t>(x: Var<'t>) -> Var<'t> {
    x.square().sum_last()
}

/// Squared Frobenius norm of each `[D, D]` slice.
fn sq_frobenius<'t>(m: Var<'t>) -> Result<Var<'t>> {
    let s = m.shape();
    let n = s[s.len() - 1] * s[s.len() - 2];
    if s.len() == 2 {
        Ok(m.square().sum())
    } else {
        Ok(m.square().reshape(&[s[0], n])?.sum_last())
    }
}

pub fn log_density<'t>(mu: Var<'t>, chol: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
    let d = dim_of(&chol)? as f64;
    let v = lower_solve(chol, z.sub(mu)?)?;
    let quad = sq_norm(v).scale(-0.5);
    let logdet = log_det_chol(chol)?;
    Ok(quad.sub(logdet)?.offset(-0.5 * d * (2.0 * PI).ln()))
}

/// `KL(N(mu, L L^T) || N(0, I))`.
pub fn kl_to_standard<'t>(mu: Var<'t>, chol: Var<'t>) -> Result<Var<'t>> {
    let d = dim_of(&chol)? as f64;
    let tr = sq_frobenius(chol)?;
    let m2 = sq_norm(mu);
    let half = tr.add(m2)?.offset(-d).scale(0.5);
    half.sub(log_det_chol(chol)?)
}

/// `KL(q || p)` through triangular solves against `p`'s factor.
pub fn kl_between<'t>(q_mu: Var<'t>, q_chol: Var<'t>, p_mu: Var<'t>, p_chol: Var<'t>) -> Result<Var<'t>> {
    let d = dim_of(&q_chol)?;
    if dim_of(&p_chol)? != d {
        return Err(Error::Dimension("KL between different dimensions".into()));
    }
    let m = p_chol.solve_lower(q_chol)?;
    let tr = sq_frobenius(m)?;
    let diff = q_mu.sub(p_mu)?;
    let maha = sq_norm(lower_solve(p_chol, diff)?);
    let half = tr.add(maha)?.offset(-(d as f64)).scale(0.5);
    half.add(log_det_chol(p_chol)?)?.sub(log_det_chol(q_chol)?)
}

/// Closed-form entropy `D/2 ln(2 pi e) + sum_k ln L_kk`.
pub fn entropy<'t>(chol: Var<'t>) -> Result<Var<'t>> {
    let d = dim_of(&chol)? as f64;
    Ok(log_det_chol(chol)?.offset(0.5 * d * (2.0 * PI * E).ln()))
}
