use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bessel::bessel_ratio;
use crate::error::{Error, Result};

/// Generalized inverse Gaussian law with density proportional to
/// `w^(lambda - 1) exp(-(chi / w + psi w) / 2)` on `w > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GigParams {
    pub lambda: f64,
    pub chi: f64,
    pub psi: f64,
}

impl GigParams {
    pub fn new(lambda: f64, chi: f64, psi: f64) -> Result<Self> {
        let p = GigParams { lambda, chi, psi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || !(self.chi > 0.0) || !(self.psi > 0.0) || !self.chi.is_finite() || !self.psi.is_finite() {
            return Err(Error::Domain(format!(
                "GIG needs finite lambda and chi, psi > 0 (got {}, {}, {})",
                self.lambda, self.chi, self.psi
            )));
        }
        Ok(())
    }

    /// `E[W] = sqrt(chi / psi) R_lambda(sqrt(chi psi))`.
    pub fn mean(&self) -> Result<f64> {
        self.validate()?;
        let omega = (self.chi * self.psi).sqrt();
        Ok((self.chi / self.psi).sqrt() * bessel_ratio(self.lambda, omega)?)
    }

    /// `Var[W]`.
    pub fn variance(&self) -> Result<f64> {
        self.validate()?;
        let omega = (self.chi * self.psi).sqrt();
        let r0 = bessel_ratio(self.lambda, omega)?;
        let r1 = bessel_ratio(self.lambda + 1.0, omega)?;
        Ok(self.chi / self.psi * (r0 * r1 - r0 * r0))
    }
}

/// Ratio-of-uniforms envelope for `X = ln(W / scale)`, whose density is
/// proportional to `exp(lambda x - omega cosh x)` and log-concave.
#[derive(Clone, Copy, Debug)]
pub struct GigSampler {
    lambda: f64,
    omega: f64,
    scale: f64,
    mode: f64,
    v_lo: f64,
    v_hi: f64,
}

impl GigSampler {
    pub fn new(p: &GigParams) -> Result<Self> {
        p.validate()?;
        let omega = (p.chi * p.psi).sqrt();
        let lambda = p.lambda;
        let mode = (lambda / omega).asinh();
        let mut s = GigSampler {
            lambda,
            omega,
            scale: (p.chi / p.psi).sqrt(),
            mode,
            v_lo: 0.0,
            v_hi: 0.0,
        };
        s.v_hi = s.extremum(1.0);
        s.v_lo = s.extremum(-1.0);
        if !(s.v_hi.is_finite() && s.v_lo.is_finite()) {
            return Err(Error::Numeric(format!("GIG envelope failed for {p:?}")));
        }
        Ok(s)
    }

    /// `h(x) - h(mode)`, written to avoid cancellation in the cosh difference.
    fn log_ratio(&self, x: f64) -> f64 {
        let dx = x - self.mode;
        let dcosh = 2.0 * (0.5 * (x + self.mode)).sinh() * (0.5 * dx).sinh();
        self.lambda * dx - self.omega * dcosh
    }

    /// Extremum of `(x - mode) exp(log_ratio(x) / 2)` on the side `dir`.
    fn extremum(&self, dir: f64) -> f64 {
        // root of 1/t + h'(mode + t)/2 = 0 along t = dir * s, s > 0
        let f = |t: f64| 1.0 / t + 0.5 * (self.lambda - self.omega * (self.mode + t).sinh());
        let mut lo = 0.0;
        let mut hi = dir;
        let mut k = 0;
        while f(hi) * dir > 0.0 && k < 200 {
            lo = hi;
            hi *= 2.0;
            k += 1;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if f(mid) * dir > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        t * (0.5 * self.log_ratio(self.mode + t)).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.random();
            if u == 0.0 {
                continue;
            }
            let v = self.v_lo + (self.v_hi - self.v_lo) * rng.random::<f64>();
            let x = self.mode + v / u;
            if 2.0 * u.ln() <= self.log_ratio(x) {
                return self.scale * x.exp();
            }
        }
    }
}

/// One draw from `GIG(lambda, chi, psi)`.
pub fn gig_sample<R: Rng + ?Sized>(p: &GigParams, rng: &mut R) -> Result<f64> {
    Ok(GigSampler::new(p)?.sample(rng))
}
