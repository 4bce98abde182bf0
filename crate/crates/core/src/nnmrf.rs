//! Markov random field prior with neural unary and pairwise potentials:
//! energies, importance-sampled log-partition estimates, the evidence lower
//! bound against a Gaussian posterior, and Metropolis-Hastings sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Gradients, Mlp, Module, ParamMap, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gmrf::{diff as gdiff, BlockGaussian, BlockLayout};
use crate::rng::{substream, StreamRng};

/// Importance-sample count used while training.
pub const TRAIN_IS_SAMPLES: usize = 128;
/// Importance-sample count used for evaluation.
pub const EVAL_IS_SAMPLES: usize = 4096;

/// An unnormalised log-density `-E(z)` over a block layout.
pub trait Energy: Sync {
    fn layout(&self) -> &BlockLayout;

    /// Energies of the rows of `z: [B, D]`.
    fn energy_batch(&self, z: &Tensor) -> Result<Vec<f64>>;

    /// Differentiable energies `[B]` of `z: [B, D]`. Parameters are recorded
    /// with [`Tape::param`] so gradients come back by name.
    fn energy_var<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>>;
}

/// `E(z) = sum_{i<j} psi_ij(z_i, z_j) + sum_i psi_i(z_i)` with one shared
/// network per potential kind. Blocks are zero-padded to the widest extent
/// and tagged with one-hot positions.
#[derive(Clone, Debug)]
pub struct PotentialNet {
    pair_net: Mlp,
    unary_net: Mlp,
    layout: BlockLayout,
    width: usize,
}

impl PotentialNet {
    /// Fresh networks with ReLU hidden layers of the given widths and a
    /// linear scalar output.
    pub fn new<R: Rng + ?Sized>(prefix: &str, layout: BlockLayout, hidden: &[usize], rng: &mut R) -> Self {
        let (w, m) = (Self::block_width(&layout), layout.len());
        let dims = |input: usize| {
            let mut d = vec![input];
            d.extend_from_slice(hidden);
            d.push(1);
            d
        };
        let pair_net = Mlp::new(&format!("{prefix}.pair"), &dims(2 * w + 2 * m), Activation::Relu, Activation::Linear, rng);
        let unary_net = Mlp::new(&format!("{prefix}.unary"), &dims(w + m), Activation::Relu, Activation::Linear, rng);
        PotentialNet { pair_net, unary_net, layout, width: w }
    }

    pub fn from_nets(layout: BlockLayout, pair_net: Mlp, unary_net: Mlp) -> Result<Self> {
        let (w, m) = (Self::block_width(&layout), layout.len());
        if pair_net.input_dim() != 2 * w + 2 * m || unary_net.input_dim() != w + m {
            return Err(Error::Dimension(format!(
                "potential inputs must be {} (pair) and {} (unary), got {} and {}",
                2 * w + 2 * m,
                w + m,
                pair_net.input_dim(),
                unary_net.input_dim()
            )));
        }
        if pair_net.output_dim() != 1 || unary_net.output_dim() != 1 {
            return Err(Error::Dimension("potentials must be scalar".into()));
        }
        Ok(PotentialNet { pair_net, unary_net, layout, width: w })
    }

    fn block_width(layout: &BlockLayout) -> usize {
        layout.extents().iter().copied().max().unwrap_or(0)
    }

    /// Padded block width `w`; pair inputs are `[z_i, z_j, e_i, e_j]`
    /// of width `2w + 2M` and unary inputs `[z_i, e_i]` of width `w + M`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pair_net(&self) -> &Mlp {
        &self.pair_net
    }

    pub fn unary_net(&self) -> &Mlp {
        &self.unary_net
    }

    pub fn pair_count(&self) -> usize {
        let m = self.layout.len();
        m * (m - 1) / 2
    }

    pub fn unary_count(&self) -> usize {
        self.layout.len()
    }

    /// `(i, j)` pairs in evaluation order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let m = self.layout.len();
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect()
    }

    fn check(&self, shape: &[usize]) -> Result<usize> {
        match shape {
            [b, d] if *d == self.layout.total() => Ok(*b),
            _ => Err(Error::Dimension(format!(
                "energy expects [B, {}] latents, got {shape:?}",
                self.layout.total()
            ))),
        }
    }

    /// Appends block `i` of row `row`, zero-padded to the block width.
    fn padded_block(&self, z: &Tensor, i: usize, out: &mut Vec<f64>, row: usize) {
        let d = self.layout.total();
        let range = self.layout.range(i);
        let n = range.len();
        out.extend_from_slice(&z.data()[row * d + range.start..row * d + range.end]);
        out.extend(std::iter::repeat_n(0.0, self.width - n));
    }

    fn one_hot(&self, i: usize, out: &mut Vec<f64>) {
        let m = self.layout.len();
        out.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
    }

    fn padded_var<'t>(&self, tape: &'t Tape, z: Var<'t>, b: usize, i: usize) -> Result<Var<'t>> {
        let range = self.layout.range(i);
        let zi = z.slice(range.start, range.end)?;
        if range.len() == self.width {
            return Ok(zi);
        }
        let pad = tape.constant(Tensor::zeros(&[b, self.width - range.len()]));
        Var::concat(&[zi, pad])
    }

    fn one_hot_var<'t>(&self, tape: &'t Tape, b: usize, i: usize) -> Result<Var<'t>> {
        let m = self.layout.len();
        let mut data = Vec::with_capacity(b * m);
        for _ in 0..b {
            self.one_hot(i, &mut data);
        }
        Ok(tape.constant(Tensor::new(vec![b, m], data)?))
    }
}

impl Energy for PotentialNet {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn energy_batch(&self, z: &Tensor) -> Result<Vec<f64>> {
        let b = self.check(z.shape())?;
        let m = self.layout.len();
        let mut total = vec![0.0; b];
        for i in 0..m {
            let mut data = Vec::with_capacity(b * (self.width + m));
            for r in 0..b {
                self.padded_block(z, i, &mut data, r);
                self.one_hot(i, &mut data);
            }
            let out = self.unary_net.apply(&Tensor::new(vec![b, self.width + m], data)?)?;
            total.iter_mut().zip(out.data()).for_each(|(t, v)| *t += v);
        }
        for (i, j) in self.pairs() {
            let mut data = Vec::with_capacity(b * 2 * (self.width + m));
            for r in 0..b {
                self.padded_block(z, i, &mut data, r);
                self.padded_block(z, j, &mut data, r);
                self.one_hot(i, &mut data);
                self.one_hot(j, &mut data);
            }
            let out = self.pair_net.apply(&Tensor::new(vec![b, 2 * (self.width + m)], data)?)?;
            total.iter_mut().zip(out.data()).for_each(|(t, v)| *t += v);
        }
        Ok(total)
    }

    fn energy_var<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        let b = self.check(&z.shape())?;
        let m = self.layout.len();
        let blocks: Vec<Var<'t>> = (0..m).map(|i| self.padded_var(tape, z, b, i)).collect::<Result<_>>()?;
        let hots: Vec<Var<'t>> = (0..m).map(|i| self.one_hot_var(tape, b, i)).collect::<Result<_>>()?;
        let mut total: Option<Var<'t>> = None;
        let mut acc = |v: Var<'t>| -> Result<()> {
            total = Some(match total {
                None => v,
                Some(t) => t.add(v)?,
            });
            Ok(())
        };
        for i in 0..m {
            acc(self.unary_net.forward(tape, Var::concat(&[blocks[i], hots[i]])?)?)?;
        }
        for (i, j) in self.pairs() {
            let input = Var::concat(&[blocks[i], blocks[j], hots[i], hots[j]])?;
            acc(self.pair_net.forward(tape, input)?)?;
        }
        total.expect("at least one block").reshape(&[b])
    }
}

impl Module for PotentialNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.pair_net.visit(f);
        self.unary_net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.pair_net.visit_mut(f);
        self.unary_net.visit_mut(f);
    }
}

/// Energy of a single configuration `z: [D]`.
pub fn energy<E: Energy + ?Sized>(p: &E, z: &Tensor) -> Result<f64> {
    let d = p.layout().total();
    if z.shape() != [d] {
        return Err(Error::Dimension(format!("energy expects [{d}], got {:?}", z.shape())));
    }
    Ok(p.energy_batch(&z.clone().reshape(&[1, d])?)?[0])
}

/// Importance-sampled `ln Z` with a weight-concentration diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IsEstimate {
    pub log_z: f64,
    /// Largest normalised importance weight.
    pub max_weight_share: f64,
}

impl IsEstimate {
    /// Flags an estimate dominated by a single draw, which suggests the
    /// partition integral may not exist for the current potentials.
    pub fn divergent(&self) -> bool {
        self.max_weight_share > 0.5
    }
}

fn log_sum_exp(a: &[f64]) -> Result<(f64, f64)> {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::Numeric("every importance weight is zero".into()));
    }
    if max == f64::INFINITY {
        return Err(Error::Numeric("an importance weight is infinite".into()));
    }
    let s: f64 = a.iter().map(|v| (v - max).exp()).sum();
    Ok((max + s.ln(), 1.0 / s))
}

fn standard_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, d: usize) -> Tensor {
    Tensor::from_parts(vec![rows, d], (0..rows * d).map(|_| rng.sample(StandardNormal)).collect())
}

/// `ln (1/K) sum_k exp(-E(z_k)) / q(z_k)` from the draws `z_k = mu + L u_k`,
/// where `u` is `[K, D]`.
pub fn log_partition_from_noise<E: Energy + ?Sized>(p: &E, q: &BlockGaussian, u: &Tensor) -> Result<IsEstimate> {
    let k = u.shape()[0];
    if k < 2 {
        return Err(Error::Contract(format!("importance sampling needs K >= 2, got {k}")));
    }
    let tape = Tape::new();
    let mu = tape.constant(q.mu().clone());
    let chol = tape.constant(q.chol().clone());
    let z = gdiff::sample(mu, chol, tape.constant(u.clone()))?;
    let logq = gdiff::log_density(mu, chol, z)?;
    let z = z.value().clone();
    let e = p.energy_batch(&z)?;
    let logw: Vec<f64> = e.iter().zip(logq.value().data()).map(|(e, lq)| -e - lq).collect();
    let (lse, share) = log_sum_exp(&logw)?;
    Ok(IsEstimate { log_z: lse - (k as f64).ln(), max_weight_share: share })
}

pub fn log_partition_is_detailed<E: Energy + ?Sized, R: Rng + ?Sized>(
    p: &E,
    q: &BlockGaussian,
    k: usize,
    rng: &mut R,
) -> Result<IsEstimate> {
    if k < 2 {
        return Err(Error::Contract(format!("importance sampling needs K >= 2, got {k}")));
    }
    let u = standard_rows(rng, k, q.dim());
    log_partition_from_noise(p, q, &u)
}

/// Importance-sampled `ln Z` of `p` with proposal `q`.
pub fn log_partition_is<E: Energy + ?Sized, R: Rng + ?Sized>(
    p: &E,
    q: &BlockGaussian,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(log_partition_is_detailed(p, q, k, rng)?.log_z)
}

/// Whether the energy expectation and the partition estimate reuse the same
/// posterior draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawMode {
    #[default]
    Shared,
    Independent,
}

/// Differentiable `H(q) - mean_k E(z_k) - ln Z_hat` per batch row, an
/// estimate of `-KL(q || p)`.
///
/// `mu` is `[D]` or `[B, D]`, `chol` is `[D, D]` or `[B, D, D]`, each entry of
/// `energy_noise` is a `[B, D]` standard-normal draw, and `partition_noise`
/// supplies separate draws for the partition term (shared when `None`).
/// Returns `[B]`.
pub fn neg_kl_var<'t, E: Energy + ?Sized>(
    p: &E,
    tape: &'t Tape,
    mu: Var<'t>,
    chol: Var<'t>,
    energy_noise: &[Tensor],
    partition_noise: Option<&[Tensor]>,
) -> Result<Var<'t>> {
    let k = energy_noise.len();
    if k < 2 {
        return Err(Error::Contract(format!("importance sampling needs K >= 2, got {k}")));
    }
    let draw = |u: &Tensor| -> Result<(Var<'t>, Var<'t>)> {
        let z = gdiff::sample(mu, chol, tape.constant(u.clone()))?;
        let lq = gdiff::log_density(mu, chol, z)?;
        Ok((p.energy_var(tape, z)?, lq))
    };
    let first: Vec<(Var<'t>, Var<'t>)> = energy_noise.iter().map(draw).collect::<Result<_>>()?;
    let second: Vec<(Var<'t>, Var<'t>)> = match partition_noise {
        None => first.clone(),
        Some(noise) => {
            if noise.len() < 2 {
                return Err(Error::Contract("importance sampling needs K >= 2".into()));
            }
            noise.iter().map(draw).collect::<Result<_>>()?
        }
    };

    let mut mean_e = first[0].0;
    for (e, _) in &first[1..] {
        mean_e = mean_e.add(*e)?;
    }
    let mean_e = mean_e.scale(1.0 / k as f64);

    // log-sum-exp over draws with a detached per-row shift
    let logw: Vec<Var<'t>> = second.iter().map(|(e, lq)| e.neg().sub(*lq)).collect::<Result<_>>()?;
    let b = logw[0].value().len();
    let mut shift = vec![f64::NEG_INFINITY; b];
    for w in &logw {
        for (s, v) in shift.iter_mut().zip(w.value().data()) {
            *s = s.max(*v);
        }
    }
    if shift.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("importance weights are not finite".into()));
    }
    let shape = logw[0].shape();
    let shift = tape.constant(Tensor::new(shape, shift)?);
    let mut acc = logw[0].sub(shift)?.exp();
    for w in &logw[1..] {
        acc = acc.add(w.sub(shift)?.exp())?;
    }
    let log_z = acc.ln().add(shift)?.offset(-(second.len() as f64).ln());

    let h = gdiff::entropy(chol)?;
    h.sub(mean_e)?.sub(log_z)
}

/// Value of `recon + H(q) - mean_k E(z_k) - ln Z_hat` for a single posterior.
pub fn nnmrf_elbo<E: Energy + ?Sized, R: Rng + ?Sized>(
    p: &E,
    q: &BlockGaussian,
    recon_loglik: f64,
    k: usize,
    mode: DrawMode,
    rng: &mut R,
) -> Result<f64> {
    let d = q.dim();
    let noise: Vec<Tensor> = (0..k).map(|_| standard_rows(rng, 1, d)).collect();
    let extra: Option<Vec<Tensor>> = match mode {
        DrawMode::Shared => None,
        DrawMode::Independent => Some((0..k).map(|_| standard_rows(rng, 1, d)).collect()),
    };
    let tape = Tape::new();
    let nk = neg_kl_var(
        p,
        &tape,
        tape.constant(q.mu().clone()),
        tape.constant(q.chol().clone()),
        &noise,
        extra.as_deref(),
    )?;
    let v = recon_loglik + nk.value().data()[0];
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite ELBO {v}")));
    }
    Ok(v)
}

/// Sampler settings for the Metropolis-Hastings chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    pub proposal_std: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Independent chains advanced in lockstep; samples are collected
    /// step-major across chains.
    pub chains: usize,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig { proposal_std: 0.5, burn_in: 5000, thinning: 10, seed: 0, chains: 1 }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_std > 0.0 && self.proposal_std.is_finite()) {
            return Err(Error::Config(format!("proposal_std must be positive, got {}", self.proposal_std)));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        Ok(())
    }
}

/// Retained chain states and the overall acceptance rate.
#[derive(Clone, Debug)]
pub struct MhOutput {
    /// `[n, D]`.
    pub samples: Tensor,
    pub acceptance_rate: f64,
}

impl MhOutput {
    pub fn acceptance_warning(&self) -> Option<String> {
        let r = self.acceptance_rate;
        (!(0.1..=0.6).contains(&r)).then(|| format!("Metropolis-Hastings acceptance rate {r:.3} is outside [0.1, 0.6]"))
    }
}

fn run_chains<E: Energy + ?Sized>(p: &E, cfg: &MhConfig, free: &[usize], start: Vec<f64>, n: usize) -> Result<MhOutput> {
    cfg.validate()?;
    let d = p.layout().total();
    let c = cfg.chains;
    let mut rng: StreamRng = substream(cfg.seed, "mh");
    let mut state = Tensor::new(vec![c, d], start)?;
    let mut current = p.energy_batch(&state)?;
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut out = Vec::with_capacity(n * d);
    let mut kept = 0;
    let mut step = 0usize;
    while kept < n {
        let mut prop = state.clone();
        for r in 0..c {
            for &k in free {
                let eps: f64 = rng.sample(StandardNormal);
                prop.data_mut()[r * d + k] += cfg.proposal_std * eps;
            }
        }
        let e_new = p.energy_batch(&prop)?;
        for r in 0..c {
            let log_u = rng.random::<f64>().ln();
            proposed += 1;
            if e_new[r].is_finite() && log_u < current[r] - e_new[r] {
                accepted += 1;
                current[r] = e_new[r];
                state.data_mut()[r * d..(r + 1) * d].copy_from_slice(&prop.data()[r * d..(r + 1) * d]);
            }
        }
        step += 1;
        if step > cfg.burn_in && (step - cfg.burn_in) % cfg.thinning == 0 {
            for r in 0..c {
                if kept == n {
                    break;
                }
                out.extend_from_slice(&state.data()[r * d..(r + 1) * d]);
                kept += 1;
            }
        }
    }
    Ok(MhOutput {
        samples: Tensor::new(vec![n, d], out)?,
        acceptance_rate: accepted as f64 / proposed.max(1) as f64,
    })
}

/// Unconditional draws from `exp(-E(z)) / Z` by Gaussian random-walk
/// Metropolis-Hastings started at the origin.
pub fn mh_sample<E: Energy + ?Sized>(p: &E, cfg: &MhConfig, n: usize) -> Result<MhOutput> {
    let d = p.layout().total();
    let free: Vec<usize> = (0..d).collect();
    run_chains(p, cfg, &free, vec![0.0; cfg.chains * d], n)
}

/// Draws of the free blocks with `fixed` blocks clamped. Returned rows are
/// full configurations; fixed coordinates are copied bit for bit.
pub fn mh_conditional_sample<E: Energy + ?Sized>(
    p: &E,
    cfg: &MhConfig,
    fixed: &[(usize, Tensor)],
    n: usize,
) -> Result<MhOutput> {
    let layout = p.layout();
    let (_, idx_free, idx_fixed, values) = crate::gmrf::split_observed(layout, fixed)?;
    let d = layout.total();
    let mut start = vec![0.0; d];
    for (&k, v) in idx_fixed.iter().zip(&values) {
        start[k] = *v;
    }
    let start: Vec<f64> = std::iter::repeat_n(start, cfg.chains.max(1)).flatten().collect();
    run_chains(p, cfg, &idx_free, start, n)
}

/// `grad_theta ln Z = -E_p[grad_theta E(z)]`, estimated from model draws
/// `samples: [n, D]`. Keys are parameter names.
pub fn grad_log_partition<E: Energy + ?Sized>(p: &E, samples: &Tensor) -> Result<ParamMap> {
    if samples.rank() != 2 || samples.shape()[0] == 0 {
        return Err(Error::Contract("gradient estimate needs at least one sample".into()));
    }
    let tape = Tape::new();
    let e = p.energy_var(&tape, tape.constant(samples.clone()))?;
    let loss = e.mean().neg();
    let grads: Gradients = tape.backward(loss)?;
    Ok(grads.by_name())
}
