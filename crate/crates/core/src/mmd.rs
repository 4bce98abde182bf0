//! Maximum mean discrepancy under a multi-scale Gaussian RBF kernel, and the
//! `ln(MMD^2 + 1)` regularizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tensor, Var};
use crate::error::{Error, Result};

/// Multipliers applied to the median pairwise distance by
/// [`KernelSpec::median_heuristic`].
pub const DEFAULT_SCALES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Mixture of Gaussian RBF kernels, averaged over bandwidths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
}

impl TryFrom<Vec<f64>> for KernelSpec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        KernelSpec::new(v)
    }
}

impl From<KernelSpec> for Vec<f64> {
    fn from(k: KernelSpec) -> Self {
        k.bandwidths
    }
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::Config("kernel needs at least one bandwidth".into()));
        }
        if let Some(b) = bandwidths.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::Config(format!("bandwidth {b} is not a positive finite number")));
        }
        Ok(KernelSpec { bandwidths })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma])
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// `scales` times the median pairwise Euclidean distance between the
    /// rows of `samples`.
    pub fn median_heuristic(samples: &Tensor, scales: &[f64]) -> Result<Self> {
        let (n, d) = rows(samples)?;
        if n < 2 {
            return Err(Error::Contract("median heuristic needs at least two samples".into()));
        }
        let x = samples.data();
        let mut dist: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|a| (a + 1..n).map(move |b| sq_dist(&x[a * d..(a + 1) * d], &x[b * d..(b + 1) * d]).sqrt()))
            .collect();
        let mid = dist.len() / 2;
        let (_, &mut upper, _) = dist.select_nth_unstable_by(mid, f64::total_cmp);
        let med = if dist.len() % 2 == 0 {
            let lower = dist[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lower + upper)
        } else {
            upper
        };
        if !(med > 0.0 && med.is_finite()) {
            return Err(Error::Numeric(format!("median pairwise distance is {med}")));
        }
        Self::new(scales.iter().map(|s| s * med).collect())
    }

    fn eval_sq(&self, d2: f64) -> f64 {
        let s: f64 = self.bandwidths.iter().map(|b| (-d2 / (2.0 * b * b)).exp()).sum();
        s / self.bandwidths.len() as f64
    }
}

fn rows(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(Error::Dimension(format!("expected [n, d] samples, got {s:?}"))),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel value between two points.
pub fn rbf(k: &KernelSpec, x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!("rbf of {:?} and {:?}", x.shape(), y.shape())));
    }
    Ok(k.eval_sq(sq_dist(x.data(), y.data())))
}

fn mean_kernel(k: &KernelSpec, x: &[f64], n: usize, y: &[f64], m: usize, d: usize) -> f64 {
    // per-row sums collected in order, so the total does not depend on scheduling
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|a| {
            let xa = &x[a * d..(a + 1) * d];
            (0..m).map(|b| k.eval_sq(sq_dist(xa, &y[b * d..(b + 1) * d]))).sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (n * m) as f64
}

/// Rows in lexicographic order, so equal multisets give bit-equal buffers.
fn canonical(x: &[f64], d: usize) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = x.chunks(d).collect();
    rows.sort_by(|a, b| a.iter().zip(*b).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rows.concat()
}

fn check_pair(x: &Tensor, y: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, d) = rows(x)?;
    let (m, d2) = rows(y)?;
    if d != d2 {
        return Err(Error::Dimension(format!("samples of width {d} and {d2}")));
    }
    if n < 2 || m < 2 {
        return Err(Error::Contract(format!("MMD needs at least two samples per side, got {n} and {m}")));
    }
    Ok((n, m, d))
}

/// Biased (V-statistic) estimate of `MMD^2` between the rows of `x` and `y`.
pub fn mmd2(k: &KernelSpec, x: &Tensor, y: &Tensor) -> Result<f64> {
    let (n, m, d) = check_pair(x, y)?;
    let (x, y) = (canonical(x.data(), d), canonical(y.data(), d));
    let kxx = mean_kernel(k, &x, n, &x, n, d);
    let kyy = mean_kernel(k, &y, m, &y, m, d);
    let kxy = mean_kernel(k, &x, n, &y, m, d);
    Ok((kxx + kyy - 2.0 * kxy).max(0.0))
}

/// `ln(mmd2 + 1)`.
pub fn mmd_regularizer(k: &KernelSpec, posterior: &Tensor, prior: &Tensor) -> Result<f64> {
    Ok(mmd2(k, posterior, prior)?.ln_1p())
}

/// Squared distances `[n, m]` between rows, clamped at zero.
fn sq_dist_var<'t>(x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    let (n, m) = (x.shape()[0], y.shape()[0]);
    let tape = x.tape();
    let xx = x.square().sum_last().reshape(&[n, 1])?;
    let yy = y.square().sum_last().reshape(&[1, m])?;
    let ones_m = tape.constant(Tensor::full(&[1, m], 1.0));
    let ones_n = tape.constant(Tensor::full(&[n, 1], 1.0));
    let cross = x.matmul(y.transpose()?)?.scale(-2.0);
    Ok(xx.matmul(ones_m)?.add(ones_n.matmul(yy)?)?.add(cross)?.relu())
}

fn mean_kernel_var<'t>(k: &KernelSpec, d2: Var<'t>) -> Var<'t> {
    let parts: Vec<Var<'t>> = k.bandwidths.iter().map(|b| d2.scale(-1.0 / (2.0 * b * b)).exp().mean()).collect();
    let mut acc = parts[0];
    for p in &parts[1..] {
        acc = acc.add(*p).expect("scalars");
    }
    acc.scale(1.0 / parts.len() as f64)
}

/// Differentiable [`mmd2`]; `x` is `[n, d]` and `y` is `[m, d]`.
pub fn mmd2_var<'t>(k: &KernelSpec, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    {
        let (xv, yv) = (x.value(), y.value());
        check_pair(&xv, &yv)?;
    }
    let kxx = mean_kernel_var(k, sq_dist_var(x, x)?);
    let kyy = mean_kernel_var(k, sq_dist_var(y, y)?);
    let kxy = mean_kernel_var(k, sq_dist_var(x, y)?);
    Ok(kxx.add(kyy)?.sub(kxy.scale(2.0))?.relu())
}

/// Differentiable `ln(mmd2 + 1)`.
pub fn mmd_regularizer_var<'t>(k: &KernelSpec, posterior: Var<'t>, prior: Var<'t>) -> Result<Var<'t>> {
    Ok(mmd2_var(k, posterior, prior)?.offset(1.0).ln())
}

/// Population `MMD^2` between `N(mu_p, sd_p^2)` and `N(mu_q, sd_q^2)` under a
/// single-bandwidth RBF kernel.
pub fn gaussian_mmd2(mu_p: f64, sd_p: f64, mu_q: f64, sd_q: f64, bandwidth: f64) -> f64 {
    let s2 = bandwidth * bandwidth;
    let cross = |v: f64, dm: f64| bandwidth / (s2 + v).sqrt() * (-dm * dm / (2.0 * (s2 + v))).exp();
    cross(2.0 * sd_p * sd_p, 0.0) + cross(2.0 * sd_q * sd_q, 0.0) - 2.0 * cross(sd_p * sd_p + sd_q * sd_q, mu_p - mu_q)
}

/// One row of the KL versus `ln(MMD^2 + 1)` diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub mu: f64,
    pub sigma: f64,
    pub bandwidth: f64,
    pub kl: f64,
    pub log_mmd: f64,
    /// Whether `KL <= ln(MMD^2 + 1)` holds for this row.
    pub holds: bool,
}

/// Compare `KL(N(mu, sigma^2) || N(0, 1))` with `ln(MMD^2 + 1)` over a grid,
/// for each bandwidth. Purely diagnostic.
pub fn kl_mmd_bound_grid(mus: &[f64], sigmas: &[f64], bandwidths: &[f64]) -> Vec<BoundCheck> {
    let mut out = Vec::new();
    for &mu in mus {
        for &sigma in sigmas {
            let kl = 0.5 * (sigma * sigma + mu * mu - 1.0) - sigma.ln();
            for &bandwidth in bandwidths {
                let log_mmd = gaussian_mmd2(mu, sigma, 0.0, 1.0, bandwidth).max(0.0).ln_1p();
                out.push(BoundCheck { mu, sigma, bandwidth, kl, log_mmd, holds: kl <= log_mmd });
            }
        }
    }
    out
}
