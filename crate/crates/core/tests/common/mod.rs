//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use mrf_mvae::diffcore::{Activation, Layer, Mlp, Tape, Tensor, Var};
use mrf_mvae::gmrf::BlockLayout;
use mrf_mvae::nnmrf::{Energy, PotentialNet};
use mrf_mvae::Result;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const K15_X: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const K15_W: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G7_W: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Kronrod estimate and |K15 - G7| error on [a, b].
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = K15_W[7] * fc;
    let mut g = G7_W[3] * fc;
    for i in 0..7 {
        let dx = h * K15_X[i];
        let s = f(c - dx) + f(c + dx);
        k += K15_W[i] * s;
        if i % 2 == 1 {
            g += G7_W[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature to a relative tolerance.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: u32) -> f64 {
        if whole.1 <= tol || depth > 60 {
            return whole.0;
        }
        let m = 0.5 * (a + b);
        let l = gk15(f, a, m);
        let r = gk15(f, m, b);
        rec(f, a, m, l, 0.5 * tol, depth + 1) + rec(f, m, b, r, 0.5 * tol, depth + 1)
    }
    let whole = gk15(f, a, b);
    let tol = (rtol * whole.0.abs()).max(1e-300);
    rec(f, a, b, whole, tol, 0)
}

/// Composite K15 rule over `panels` equal panels.
pub fn composite(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels).map(|p| gk15(f, a + p as f64 * w, a + (p + 1) as f64 * w).0).sum()
}

/// Product rule over the box [a, b]^2.
pub fn integrate_2d(f: &dyn Fn(f64, f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    composite(&|x| composite(&|y| f(x, y), a, b, panels), a, b, panels)
}

pub fn standard_normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Column means and sample covariance of row-major draws.
pub fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mu = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mu[k] += r[k] / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for p in 0..d {
            for q in 0..d {
                cov[p][q] += (r[p] - mu[p]) * (r[q] - mu[q]) / (n - 1.0);
            }
        }
    }
    (mu, cov)
}

pub fn rel_frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

pub fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let n = t.shape()[1];
    t.data().chunks(n).map(|c| c.to_vec()).collect()
}

/// Kolmogorov-Smirnov p-value of `x` against `cdf` (asymptotic series).
pub fn ks_pvalue(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..200)
        .map(|j| {
            let j = j as f64;
            2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lam * lam).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

/// Chi-square goodness-of-fit p-value given observed counts and expected
/// probabilities.
pub fn chi_square_pvalue(observed: &[u64], probs: &[f64], fitted_params: usize) -> f64 {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1 - fitted_params) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Compare reverse-mode gradients of `f` with central differences.
/// Returns the worst violation of `|a - n| <= atol + rtol |n|` as a ratio
/// (at most 1 means pass).
pub fn gradient_check(
    inputs: &[Tensor],
    f: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
    h: f64,
    rtol: f64,
    atol: f64,
) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| {
        let t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        f(&t, &vs).item()
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for e in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ana = g.data()[e];
            let ratio = (ana - num).abs() / (atol + rtol * num.abs());
            worst = worst.max(ratio);
        }
    }
    worst
}

/// Random lower-triangular factor with diagonal in [0.5, 1.5].
pub fn random_chol<R: Rng>(rng: &mut R, d: usize) -> Tensor {
    let mut l = Tensor::zeros(&[d, d]);
    for r in 0..d {
        for c in 0..r {
            l.set2(r, c, rng.random_range(-0.8..0.8));
        }
        l.set2(r, r, rng.random_range(0.5..1.5));
    }
    l
}

pub fn random_vec<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Tensor {
    Tensor::vector((0..d).map(|_| rng.random_range(-scale..scale)).collect())
}

/// Dense inverse via nalgebra's LU, as an independent oracle.
pub fn dense_inverse(a: &Tensor) -> Tensor {
    let n = a.shape()[0];
    let m = nalgebra::DMatrix::from_row_slice(n, n, a.data());
    let inv = m.try_inverse().expect("invertible");
    let mut out = Tensor::zeros(&[n, n]);
    for r in 0..n {
        for c in 0..n {
            out.set2(r, c, inv[(r, c)]);
        }
    }
    out
}

pub fn dense_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for r in 0..m {
        for c in 0..n {
            out.set2(r, c, (0..k).map(|q| a.at2(r, q) * b.at2(q, c)).sum());
        }
    }
    out
}

/// `ln \int exp(phi(s)) ds` over the real line for a unimodal `phi`, by
/// locating the peak on a grid and integrating the shifted integrand until
/// it falls below `exp(-80)` on both sides.
pub fn log_integral(phi: &dyn Fn(f64) -> f64) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut s = -80.0;
    while s <= 80.0 {
        let v = phi(s);
        if v > best.0 {
            best = (v, s);
        }
        s += 0.125;
    }
    let (peak, at) = best;
    let f = |s: f64| (phi(s) - peak).exp();
    let step = 0.5;
    let mut total = 0.0;
    for dir in [-1.0, 1.0] {
        let mut a = at;
        loop {
            let b = a + dir * step;
            let piece = if dir > 0.0 { composite(&f, a, b, 8) } else { composite(&f, b, a, 8) };
            total += piece;
            if phi(b) - peak < -80.0 {
                break;
            }
            a = b;
        }
    }
    peak + total.ln()
}

/// `ln K_v(x)` from `K_v(x) = (x/2)^v / 2 \int t^{-v-1} exp(-t - x^2 / 4t) dt`
/// with `t = e^s`.
pub fn ln_bessel_k_quadrature(v: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let phi = |s: f64| -v * s - s.exp() - q * (-s).exp();
    (0.5f64).ln() + v * (0.5 * x).ln() + log_integral(&phi)
}

pub fn layer(rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Layer {
    Layer { weight: Tensor::matrix(rows, cols, weight).unwrap(), bias: Tensor::vector(bias), activation }
}

/// Potentials with `psi_i = |z_i|^2 / 2 + c` and `psi_ij = rho z_i . z_j`,
/// i.e. a Gaussian MRF with precision `I + rho (J - I) (x) I_d`.
pub fn rigged(m: usize, d: usize, rho: f64, c: f64) -> PotentialNet {
    let layout = BlockLayout::uniform(m, d).unwrap();
    // unary: [z_i, e_i] -> squares of z_i -> half sum + c
    let mut w1 = vec![0.0; (d + m) * d];
    for k in 0..d {
        w1[k * d + k] = 1.0;
    }
    let unary = Mlp::from_layers(
        "prior.unary",
        vec![
            layer(d + m, d, w1, vec![0.0; d], Activation::Square),
            layer(d, 1, vec![0.5; d], vec![c], Activation::Linear),
        ],
    )
    .unwrap();
    // pair: [z_i, z_j, e_i, e_j] -> (z_i + z_j)^2, (z_i - z_j)^2 -> rho / 4 difference
    let width = 2 * d + 2 * m;
    let mut w1 = vec![0.0; width * 2 * d];
    for k in 0..d {
        w1[k * 2 * d + k] = 1.0;
        w1[(d + k) * 2 * d + k] = 1.0;
        w1[k * 2 * d + d + k] = 1.0;
        w1[(d + k) * 2 * d + d + k] = -1.0;
    }
    let mut w2 = vec![rho / 4.0; d];
    w2.extend(vec![-rho / 4.0; d]);
    let pair = Mlp::from_layers(
        "prior.pair",
        vec![
            layer(width, 2 * d, w1, vec![0.0; 2 * d], Activation::Square),
            layer(2 * d, 1, w2, vec![0.0], Activation::Linear),
        ],
    )
    .unwrap();
    PotentialNet::from_nets(layout, pair, unary).unwrap()
}

/// Covariance of [`rigged`] potentials: inverse of `I + rho (J - I) (x) I_d`.
pub fn rigged_covariance(m: usize, d: usize, rho: f64) -> Tensor {
    let n = m * d;
    let mut lam = Tensor::zeros(&[n, n]);
    for a in 0..n {
        for b in 0..n {
            let v = if a == b {
                1.0
            } else if a % d == b % d {
                rho
            } else {
                0.0
            };
            lam.set2(a, b, v);
        }
    }
    dense_inverse(&lam)
}

/// `E(z) = a |z|^2 / 2 + b . z` with named parameters `a` and `b`.
pub struct QuadLin {
    pub layout: BlockLayout,
    pub a: f64,
    pub b: Tensor,
}

impl Energy for QuadLin {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn energy_batch(&self, z: &Tensor) -> Result<Vec<f64>> {
        let d = self.layout.total();
        Ok(z
            .data()
            .chunks(d)
            .map(|r| 0.5 * self.a * r.iter().map(|v| v * v).sum::<f64>() + r.iter().zip(self.b.data()).map(|(v, b)| v * b).sum::<f64>())
            .collect())
    }

    fn energy_var<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        let a = tape.param("a", &Tensor::scalar(self.a));
        let b = tape.param("b", &self.b);
        let d = self.layout.total();
        let quad = z.square().sum_last().mul(a)?.scale(0.5);
        let lin = z.matmul(b.reshape(&[d, 1])?)?.reshape(&[z.shape()[0]])?;
        quad.add(lin)
    }
}
