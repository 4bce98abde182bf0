//! Multimodal VAE with a joint latent Gaussian (or Laplace) posterior whose
//! Cholesky factor couples the modalities, in three variants that differ in
//! the prior and the regularizer.

mod config;
mod train;

pub use config::{ConditionalMode, GhMode, Likelihood, ModelConfig, Variant, BETA_SWEEP};
pub use train::{train, Checkpoint, EpochLoss, TrainState};

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Open01, StandardNormal};

use crate::diffcore::{Activation, Mlp, Module, ParamMap, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evalkit::Generator;
use crate::gmrf::{conditional_multi, diff as gdiff, BlockGaussian, BlockLayout, LowerMask};
use crate::heavytail::{al_sample_var, gh_conditional_params_multi, gh_moment_match_multi, AsymmetricLaplace, GhSampler};
use crate::linalg;
use crate::mmd::{mmd_regularizer_var, KernelSpec};
use crate::nnmrf::{mh_conditional_sample, mh_sample, neg_kl_var, DrawMode, PotentialNet};
use crate::rng::{substream, StreamRng};

/// Prior over the joint latent.
#[derive(Clone, Debug)]
pub enum Prior {
    /// Learned mean, log-diagonal and strictly-lower factor entries.
    Gaussian { mu: Tensor, log_diag: Tensor, lower: Tensor },
    Laplace(AsymmetricLaplace),
    Potential(PotentialNet),
}

/// Posterior for one full observation.
#[derive(Clone, Debug)]
pub enum EncodedPosterior {
    Gaussian(BlockGaussian),
    Laplace(AsymmetricLaplace),
}

/// Noise consumed by one evaluation of the objective. Fixing it gives common
/// random numbers across parameter perturbations.
#[derive(Clone, Debug)]
pub struct BatchNoise {
    /// `[B, D]` standard normals for the reparametrized posterior draw.
    pub u: Tensor,
    /// `B` uniforms for the Laplace mixing weights.
    pub e: Vec<f64>,
    /// `[B, D]` prior draws for the MMD term.
    pub prior: Option<Tensor>,
    /// `K` draws of `[B, D]` for the partition estimate.
    pub is_noise: Vec<Tensor>,
    pub is_extra: Option<Vec<Tensor>>,
}

/// Batch-mean objective terms. `elbo = recon - beta * regularizer`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    pub recon: f64,
    pub regularizer: f64,
}

/// 0/1 matrix `[k, D*D]` placing `k` values at flat factor positions.
fn scatter(positions: &[(usize, usize)], d: usize) -> Tensor {
    let mut s = Tensor::zeros(&[positions.len(), d * d]);
    for (k, &(r, c)) in positions.iter().enumerate() {
        s.set2(k, r * d + c, 1.0);
    }
    s
}

fn normals<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        .expect("consistent shape")
}

#[derive(Clone, Debug)]
pub struct Mvae {
    config: ModelConfig,
    layout: BlockLayout,
    mask: LowerMask,
    encoders: Vec<Mlp>,
    decoders: Vec<Mlp>,
    cov_encoder: Option<Mlp>,
    prior: Prior,
    /// Kept strictly-lower positions inside each diagonal block.
    within: Vec<Vec<(usize, usize)>>,
    /// Kept strictly-lower positions across blocks.
    cross: Vec<(usize, usize)>,
}

impl Mvae {
    /// Fresh model. The mask pattern comes from the `mask` substream and the
    /// weights from the `init` substream of `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        let mask = LowerMask::random(layout.total(), config.mask_density, &mut substream(config.seed, "mask"))?;
        Self::with_mask(config, mask)
    }

    pub fn with_mask(config: ModelConfig, mask: LowerMask) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        let d = layout.total();
        if mask.dim() != d {
            return Err(Error::Dimension(format!("mask over {} for latent dimension {d}", mask.dim())));
        }
        let mut within = vec![Vec::new(); layout.len()];
        let mut cross = Vec::new();
        for (r, c) in mask.kept_entries() {
            let b = layout.block_of(r);
            if layout.block_of(c) == b {
                within[b].push((r, c));
            } else {
                cross.push((r, c));
            }
        }
        let mut rng = substream(config.seed, "init");
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for i in 0..layout.len() {
            let di = layout.extent(i);
            let mut dims = vec![config.input_dims[i]];
            dims.extend(&config.encoder_hidden);
            dims.push(2 * di + within[i].len());
            encoders.push(Mlp::new(&format!("enc{i}"), &dims, Activation::Relu, Activation::Linear, &mut rng));
            let mut dims = vec![di];
            dims.extend(&config.decoder_hidden);
            dims.push(config.input_dims[i]);
            decoders.push(Mlp::new(&format!("dec{i}"), &dims, Activation::Relu, Activation::Linear, &mut rng));
        }
        let cov_encoder = (!cross.is_empty()).then(|| {
            let mut dims = vec![config.input_total()];
            dims.extend(&config.covariance_hidden);
            dims.push(cross.len());
            let mut net = Mlp::new("cov", &dims, Activation::Relu, Activation::Linear, &mut rng);
            // start from a block-diagonal factor
            let last = net.layers_mut().last_mut().expect("at least one layer");
            last.weight.data_mut().iter_mut().for_each(|w| *w *= 0.01);
            net
        });
        let prior = match config.variant {
            Variant::Gmrf => Prior::Gaussian {
                mu: Tensor::zeros(&[d]),
                log_diag: Tensor::zeros(&[d]),
                lower: Tensor::zeros(&[d * d.saturating_sub(1) / 2]),
            },
            Variant::Almrf => {
                let m = if config.al_prior_skew.is_empty() {
                    Tensor::zeros(&[d])
                } else {
                    Tensor::vector(config.al_prior_skew.clone())
                };
                Prior::Laplace(AsymmetricLaplace::new(m, Tensor::eye(d), layout.clone())?)
            }
            Variant::Nnmrf => {
                Prior::Potential(PotentialNet::new("potential", layout.clone(), &config.potential_hidden, &mut rng))
            }
        };
        Ok(Mvae { config, layout, mask, encoders, decoders, cov_encoder, prior, within, cross })
    }

    /// Rebuild from a configuration, mask and parameter map.
    pub fn from_parts(config: ModelConfig, mask: LowerMask, params: &ParamMap) -> Result<Self> {
        let mut model = Self::with_mask(config, mask)?;
        model.load_params(params)?;
        let known = model.params();
        if let Some(name) = params.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::Contract(format!("checkpoint has unknown parameter `{name}`")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn mask(&self) -> &LowerMask {
        &self.mask
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// Replace the prior with one of the same kind over the same layout.
    pub fn set_prior(&mut self, prior: Prior) -> Result<()> {
        let d = self.layout.total();
        let ok = match (&self.prior, &prior) {
            (Prior::Gaussian { .. }, Prior::Gaussian { mu, log_diag, lower }) => {
                mu.shape() == [d] && log_diag.shape() == [d] && lower.shape() == [d * d.saturating_sub(1) / 2]
            }
            (Prior::Laplace(_), Prior::Laplace(al)) => al.layout() == &self.layout,
            (Prior::Potential(_), Prior::Potential(p)) => {
                use crate::nnmrf::Energy;
                p.layout() == &self.layout
            }
            _ => false,
        };
        if !ok {
            return Err(Error::Contract(format!("prior does not fit a {} model over {d} latents", self.config.variant.name())));
        }
        self.prior = prior;
        Ok(())
    }

    pub fn encoders(&self) -> &[Mlp] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[Mlp] {
        &self.decoders
    }

    pub fn decoders_mut(&mut self) -> &mut [Mlp] {
        &mut self.decoders
    }

    pub fn encoders_mut(&mut self) -> &mut [Mlp] {
        &mut self.encoders
    }

    pub fn cov_encoder(&self) -> Option<&Mlp> {
        self.cov_encoder.as_ref()
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.beta = beta;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    /// Mean, factor diagonal and kept strictly-lower entries per posterior.
    pub fn distribution_param_count(&self) -> usize {
        2 * self.layout.total() + self.mask.kept_count()
    }

    fn input_width(&self) -> usize {
        self.config.input_total()
    }

    fn check_rows(&self, x: &Tensor) -> Result<usize> {
        match x.shape() {
            [b, w] if *w == self.input_width() && *b > 0 => Ok(*b),
            s => Err(Error::Dimension(format!("expected [B, {}] observations, got {s:?}", self.input_width()))),
        }
    }

    // ---- differentiable pieces ----

    fn encode_var<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let b = x.shape()[0];
        let d = self.layout.total();
        let mut mus = Vec::new();
        let mut flat: Option<Var<'t>> = None;
        let mut acc = |v: Var<'t>| -> Result<()> {
            flat = Some(match flat {
                None => v,
                Some(f) => f.add(v)?,
            });
            Ok(())
        };
        for (i, enc) in self.encoders.iter().enumerate() {
            let off = self.config.input_offset(i);
            let h = enc.forward(tape, x.slice(off, off + self.config.input_dims[i])?)?;
            let r = self.layout.range(i);
            let di = r.len();
            mus.push(h.slice(0, di)?);
            let diag: Vec<(usize, usize)> = r.clone().map(|k| (k, k)).collect();
            acc(h.slice(di, 2 * di)?.exp().matmul(tape.constant(scatter(&diag, d)))?)?;
            if !self.within[i].is_empty() {
                let w = h.slice(2 * di, 2 * di + self.within[i].len())?;
                acc(w.matmul(tape.constant(scatter(&self.within[i], d)))?)?;
            }
        }
        if let Some(cov) = &self.cov_encoder {
            acc(cov.forward(tape, x)?.matmul(tape.constant(scatter(&self.cross, d)))?)?;
        }
        let mu = Var::concat(&mus)?;
        let chol = flat.expect("at least one modality").reshape(&[b, d, d])?;
        Ok((mu, chol))
    }

    fn decode_var<'t>(&self, z: Var<'t>) -> Result<Var<'t>> {
        let tape = z.tape();
        let parts: Vec<Var<'t>> = self
            .decoders
            .iter()
            .enumerate()
            .map(|(i, dec)| {
                let r = self.layout.range(i);
                dec.forward(tape, z.slice(r.start, r.end)?)
            })
            .collect::<Result<_>>()?;
        Var::concat(&parts)
    }

    /// Per-row reconstruction log-likelihood `[B]`.
    fn recon_var<'t>(&self, x: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let diff = x.sub(self.decode_var(z)?)?;
        let w = self.input_width() as f64;
        Ok(match self.config.likelihood {
            Likelihood::Gaussian => diff.square().sum_last().scale(-0.5).offset(-0.5 * w * (2.0 * PI).ln()),
            Likelihood::Laplace => diff.abs().sum_last().neg().offset(-w * 2f64.ln()),
        })
    }

    fn gaussian_prior_var<'t>(&self, tape: &'t Tape) -> Result<(Var<'t>, Var<'t>)> {
        let Prior::Gaussian { mu, log_diag, lower } = &self.prior else {
            return Err(Error::Contract("model has no Gaussian prior".into()));
        };
        let d = self.layout.total();
        let mu = tape.param("prior.mu", mu);
        let diag: Vec<(usize, usize)> = (0..d).map(|k| (k, k)).collect();
        let low: Vec<(usize, usize)> = (1..d).flat_map(|r| (0..r).map(move |c| (r, c))).collect();
        let mut flat = tape
            .param("prior.log_diag", log_diag)
            .exp()
            .reshape(&[1, d])?
            .matmul(tape.constant(scatter(&diag, d)))?;
        if !low.is_empty() {
            let l = tape.param("prior.lower", lower).reshape(&[1, low.len()])?;
            flat = flat.add(l.matmul(tape.constant(scatter(&low, d)))?)?;
        }
        Ok((mu, flat.reshape(&[d, d])?))
    }

    /// Objective terms on `tape`, each a batch mean.
    fn objective<'t>(&self, tape: &'t Tape, x: &Tensor, noise: &BatchNoise) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let b = self.check_rows(x)?;
        let d = self.layout.total();
        if noise.u.shape() != [b, d] {
            return Err(Error::Dimension(format!("noise {:?} for batch [{b}, {d}]", noise.u.shape())));
        }
        let xv = tape.constant(x.clone());
        let (mu, chol) = self.encode_var(tape, xv)?;
        let u = tape.constant(noise.u.clone());
        let (recon, reg) = match &self.prior {
            Prior::Gaussian { .. } => {
                let z = gdiff::sample(mu, chol, u)?;
                let (p_mu, p_chol) = self.gaussian_prior_var(tape)?;
                let kl = gdiff::kl_between(mu, chol, p_mu, p_chol)?;
                (self.recon_var(xv, z)?, kl.mean())
            }
            Prior::Laplace(_) => {
                let z = al_sample_var(mu, chol, u, &noise.e)?;
                let prior = noise
                    .prior
                    .as_ref()
                    .ok_or_else(|| Error::Contract("Laplace objective needs prior draws".into()))?;
                let kernel = KernelSpec::median_heuristic(prior, &self.config.mmd_scales)?;
                let reg = mmd_regularizer_var(&kernel, z, tape.constant(prior.clone()))?;
                (self.recon_var(xv, z)?, reg)
            }
            Prior::Potential(p) => {
                let z = gdiff::sample(mu, chol, u)?;
                let nk = neg_kl_var(p, tape, mu, chol, &noise.is_noise, noise.is_extra.as_deref())?;
                (self.recon_var(xv, z)?, nk.neg().mean())
            }
        };
        let recon = recon.mean();
        let elbo = recon.sub(reg.scale(self.config.beta))?;
        Ok((elbo, recon, reg))
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> BatchNoise {
        let d = self.layout.total();
        let u = normals(rng, b, d);
        let mut noise = BatchNoise { u, e: Vec::new(), prior: None, is_noise: Vec::new(), is_extra: None };
        match &self.prior {
            Prior::Gaussian { .. } => {}
            Prior::Laplace(al) => {
                noise.e = (0..b).map(|_| rng.sample(Open01)).collect();
                let rows: Vec<f64> = (0..b).flat_map(|_| al.draw(rng).into_data()).collect();
                noise.prior = Some(Tensor::new(vec![b, d], rows).expect("consistent shape"));
            }
            Prior::Potential(_) => {
                let k = self.config.is_samples;
                noise.is_noise = (0..k).map(|_| normals(rng, b, d)).collect();
                if self.config.draw_mode == DrawMode::Independent {
                    noise.is_extra = Some((0..k).map(|_| normals(rng, b, d)).collect());
                }
            }
        }
        noise
    }

    fn terms_of(elbo: Var<'_>, recon: Var<'_>, reg: Var<'_>) -> Result<ElboTerms> {
        let t = ElboTerms { elbo: elbo.item(), recon: recon.item(), regularizer: reg.item() };
        if !t.recon.is_finite() {
            return Err(Error::NonFiniteLoss("reconstruction".into()));
        }
        if !t.regularizer.is_finite() {
            return Err(Error::NonFiniteLoss("regularizer".into()));
        }
        Ok(t)
    }

    /// Objective value on `x: [B, W]` with fixed noise.
    pub fn elbo_with_noise(&self, x: &Tensor, noise: &BatchNoise) -> Result<ElboTerms> {
        let tape = Tape::new();
        let (e, r, g) = self.objective(&tape, x, noise)?;
        Self::terms_of(e, r, g)
    }

    pub fn elbo<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<ElboTerms> {
        let noise = self.draw_noise(self.check_rows(x)?, rng);
        self.elbo_with_noise(x, &noise)
    }

    /// Objective terms and the gradient of the loss `-elbo` by parameter name.
    pub fn loss_gradients(&self, x: &Tensor, noise: &BatchNoise) -> Result<(ElboTerms, ParamMap)> {
        let tape = Tape::new();
        let (e, r, g) = self.objective(&tape, x, noise)?;
        let terms = Self::terms_of(e, r, g)?;
        let grads = tape.backward(e.neg())?.by_name();
        Ok((terms, grads))
    }

    // ---- plain forward passes ----

    /// Mean `[B, d_i]` and factor `[B, d_i, d_i]` of block `i` from encoder `i`.
    pub fn encode_block(&self, i: usize, x_i: &Tensor) -> Result<(Tensor, Tensor)> {
        if i >= self.layout.len() {
            return Err(Error::Usage(format!("modality {} does not exist", i + 1)));
        }
        let h = self.encoders[i].apply(x_i)?;
        let b = h.shape()[0];
        let r = self.layout.range(i);
        let (di, off) = (r.len(), r.start);
        let width = h.shape()[1];
        let mut mu = Vec::with_capacity(b * di);
        let mut chol = vec![0.0; b * di * di];
        for row in 0..b {
            let hr = &h.data()[row * width..(row + 1) * width];
            mu.extend_from_slice(&hr[..di]);
            let c = &mut chol[row * di * di..(row + 1) * di * di];
            for k in 0..di {
                c[k * di + k] = hr[di + k].exp();
            }
            for (t, &(rr, cc)) in self.within[i].iter().enumerate() {
                c[(rr - off) * di + (cc - off)] = hr[2 * di + t];
            }
        }
        Ok((Tensor::new(vec![b, di], mu)?, Tensor::new(vec![b, di, di], chol)?))
    }

    /// Posterior mean `[B, D]` and factor `[B, D, D]` for full observations.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let b = self.check_rows(x)?;
        let d = self.layout.total();
        let w = self.input_width();
        let mut mu = vec![0.0; b * d];
        let mut chol = vec![0.0; b * d * d];
        for i in 0..self.layout.len() {
            let off = self.config.input_offset(i);
            let wi = self.config.input_dims[i];
            let xi: Vec<f64> = (0..b).flat_map(|r| x.data()[r * w + off..r * w + off + wi].iter().copied()).collect();
            let (m, c) = self.encode_block(i, &Tensor::new(vec![b, wi], xi)?)?;
            let r = self.layout.range(i);
            let di = r.len();
            for row in 0..b {
                for k in 0..di {
                    mu[row * d + r.start + k] = m.data()[row * di + k];
                    for l in 0..=k {
                        chol[row * d * d + (r.start + k) * d + r.start + l] = c.data()[row * di * di + k * di + l];
                    }
                }
            }
        }
        if let Some(cov) = &self.cov_encoder {
            let h = cov.apply(x)?;
            for row in 0..b {
                for (t, &(r, c)) in self.cross.iter().enumerate() {
                    chol[row * d * d + r * d + c] = h.data()[row * self.cross.len() + t];
                }
            }
        }
        Ok((Tensor::new(vec![b, d], mu)?, Tensor::new(vec![b, d, d], chol)?))
    }

    /// Posterior for a single observation row `x: [W]`.
    pub fn encode(&self, x: &Tensor) -> Result<EncodedPosterior> {
        if x.shape().len() != 1 {
            return Err(Error::Dimension(format!("encode expects one row, got {:?}", x.shape())));
        }
        let (mu, chol) = self.encode_batch(&x.clone().reshape(&[1, x.len()])?)?;
        let d = self.layout.total();
        let mu = mu.reshape(&[d])?;
        let chol = chol.reshape(&[d, d])?;
        Ok(match self.config.variant {
            Variant::Almrf => EncodedPosterior::Laplace(AsymmetricLaplace::new(mu, chol, self.layout.clone())?),
            _ => EncodedPosterior::Gaussian(BlockGaussian::new(mu, chol, self.layout.clone(), self.mask.clone())?),
        })
    }

    /// Decoder means `[B, W]` for latents `z: [B, D]`; decoder `i` reads only
    /// block `i`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let d = self.layout.total();
        let b = match z.shape() {
            [b, dd] if *dd == d => *b,
            s => return Err(Error::Dimension(format!("expected [B, {d}] latents, got {s:?}"))),
        };
        let w = self.input_width();
        let mut out = vec![0.0; b * w];
        for (i, dec) in self.decoders.iter().enumerate() {
            let r = self.layout.range(i);
            let zi: Vec<f64> = (0..b).flat_map(|row| z.data()[row * d + r.start..row * d + r.end].iter().copied()).collect();
            let y = dec.apply(&Tensor::new(vec![b, r.len()], zi)?)?;
            let (off, wi) = (self.config.input_offset(i), self.config.input_dims[i]);
            for row in 0..b {
                out[row * w + off..row * w + off + wi].copy_from_slice(&y.data()[row * wi..(row + 1) * wi]);
            }
        }
        Tensor::new(vec![b, w], out)
    }

    /// Learned Gaussian prior, for the Gaussian variant.
    pub fn prior_gaussian(&self) -> Result<BlockGaussian> {
        let tape = Tape::new();
        let (mu, chol) = self.gaussian_prior_var(&tape)?;
        let d = self.layout.total();
        let (mu, chol) = (mu.value().clone(), chol.value().clone());
        BlockGaussian::new(mu, chol, self.layout.clone(), LowerMask::full(d))
    }

    /// Latent draws `[n, D]` from the prior.
    pub fn sample_prior(&self, n: usize, rng: &mut StreamRng) -> Result<Tensor> {
        let d = self.layout.total();
        match &self.prior {
            Prior::Gaussian { .. } => {
                let g = self.prior_gaussian()?;
                let u = normals(rng, n, d);
                let lu = linalg::matmul(&u, &transpose(g.chol()))?;
                let data = lu.data().chunks(d).flat_map(|r| r.iter().zip(g.mu().data()).map(|(a, m)| a + m)).collect();
                Tensor::new(vec![n, d], data)
            }
            Prior::Laplace(al) => Tensor::new(vec![n, d], (0..n).flat_map(|_| al.draw(rng).into_data()).collect()),
            Prior::Potential(p) => {
                let mut cfg = self.config.mh.clone();
                cfg.seed = rng.random();
                let out = mh_sample(p, &cfg, n)?;
                if let Some(w) = out.acceptance_warning() {
                    eprintln!("warning: {w}");
                }
                Ok(out.samples)
            }
        }
    }

    /// `n` unconditional rows `[n, W]` (decoder means).
    pub fn generate(&self, n: usize, rng: &mut StreamRng) -> Result<Tensor> {
        let z = self.sample_prior(n, rng)?;
        let x = self.decode(&z)?;
        if !x.is_finite() {
            return Err(Error::Numeric("generated values are not finite".into()));
        }
        Ok(x)
    }

    /// One full row per row of `values: [B, W_j]`, generated given modality
    /// `observed`. The observed columns echo `values`.
    pub fn conditional_generate(&self, observed: usize, values: &Tensor, rng: &mut StreamRng) -> Result<Tensor> {
        let m = self.layout.len();
        if observed >= m {
            return Err(Error::Usage(format!("cannot condition on modality {} of {m}", observed + 1)));
        }
        if m < 2 {
            return Err(Error::Contract("conditional generation needs at least two modalities".into()));
        }
        let wj = self.config.input_dims[observed];
        let b = match values.shape() {
            [b, w] if *w == wj => *b,
            s => return Err(Error::Dimension(format!("modality {} expects [B, {wj}], got {s:?}", observed + 1))),
        };
        let d = self.layout.total();
        let w = self.input_width();
        let off = self.config.input_offset(observed);
        let z = match self.config.conditional {
            ConditionalMode::Prior => self.conditional_latents(observed, values, rng)?,
            ConditionalMode::ZeroImpute => {
                let mut x = vec![0.0; b * w];
                for row in 0..b {
                    x[row * w + off..row * w + off + wj].copy_from_slice(&values.data()[row * wj..(row + 1) * wj]);
                }
                let (mu, chol) = self.encode_batch(&Tensor::new(vec![b, w], x)?)?;
                let mut z = vec![0.0; b * d];
                for row in 0..b {
                    let c = Tensor::new(vec![d, d], chol.data()[row * d * d..(row + 1) * d * d].to_vec())?;
                    let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let lu = linalg::matvec(&c, &u);
                    let weight = match self.config.variant {
                        Variant::Almrf => -(-rng.sample::<f64, _>(Open01)).ln_1p(),
                        _ => 1.0,
                    };
                    for k in 0..d {
                        let mk = mu.data()[row * d + k];
                        z[row * d + k] = match self.config.variant {
                            Variant::Almrf => mk * weight + weight.sqrt() * lu[k],
                            _ => mk + lu[k],
                        };
                    }
                }
                Tensor::new(vec![b, d], z)?
            }
        };
        let mut x = self.decode(&z)?;
        for row in 0..b {
            x.data_mut()[row * w + off..row * w + off + wj].copy_from_slice(&values.data()[row * wj..(row + 1) * wj]);
        }
        if !x.is_finite() {
            return Err(Error::Numeric("generated values are not finite".into()));
        }
        Ok(x)
    }

    /// Latents `[B, D]`: block `observed` drawn from its encoder, the rest
    /// from the prior conditioned on it.
    fn conditional_latents(&self, observed: usize, values: &Tensor, rng: &mut StreamRng) -> Result<Tensor> {
        let (mu_j, chol_j) = self.encode_block(observed, values)?;
        let b = mu_j.shape()[0];
        let d = self.layout.total();
        let r = self.layout.range(observed);
        let dj = r.len();
        let free: Vec<usize> = self
            .layout
            .complement(&[observed])
            .iter()
            .flat_map(|&blk| self.layout.range(blk))
            .collect();
        let gauss = match &self.prior {
            Prior::Gaussian { .. } => Some(self.prior_gaussian()?),
            _ => None,
        };
        let mut z = vec![0.0; b * d];
        for row in 0..b {
            let cj = Tensor::new(vec![dj, dj], chol_j.data()[row * dj * dj..(row + 1) * dj * dj].to_vec())?;
            let u: Vec<f64> = (0..dj).map(|_| rng.sample(StandardNormal)).collect();
            let zj: Vec<f64> = linalg::matvec(&cj, &u).iter().zip(&mu_j.data()[row * dj..(row + 1) * dj]).map(|(a, m)| a + m).collect();
            let obs = [(observed, Tensor::vector(zj.clone()))];
            let zfree: Vec<f64> = match &self.prior {
                Prior::Gaussian { .. } => {
                    let cond = conditional_multi(gauss.as_ref().expect("Gaussian prior"), &obs)?;
                    gaussian_draw(cond.mu(), cond.chol(), rng)
                }
                Prior::Laplace(al) => match self.config.gh_mode {
                    GhMode::MomentMatch => {
                        let (mean, cov, _) = gh_moment_match_multi(al, &obs)?;
                        gaussian_draw(&mean, &linalg::cholesky(&cov)?, rng)
                    }
                    GhMode::Sample => {
                        let (p, _) = gh_conditional_params_multi(al, &obs)?;
                        GhSampler::new(&p)?.sample(rng).into_data()
                    }
                },
                Prior::Potential(p) => {
                    let mut cfg = self.config.mh.clone();
                    cfg.seed = rng.random();
                    let out = mh_conditional_sample(p, &cfg, &obs, 1)?;
                    free.iter().map(|&k| out.samples.data()[k]).collect()
                }
            };
            let zr = &mut z[row * d..(row + 1) * d];
            zr[r.clone()].copy_from_slice(&zj);
            for (t, &k) in free.iter().enumerate() {
                zr[k] = zfree[t];
            }
        }
        Tensor::new(vec![b, d], z)
    }

    /// Masked factor entries are zero and diagonals positive on `x`'s posteriors.
    pub fn check_structure(&self, x: &Tensor) -> Result<()> {
        let (_, chol) = self.encode_batch(x)?;
        let d = self.layout.total();
        for c in chol.data().chunks(d * d) {
            for r in 0..d {
                if !(c[r * d + r] > 0.0) {
                    return Err(Error::Numeric(format!("posterior factor diagonal {r} is {}", c[r * d + r])));
                }
                for col in 0..r {
                    if !self.mask.keeps(r, col) && c[r * d + col] != 0.0 {
                        return Err(Error::Contract(format!("masked factor entry ({r}, {col}) is nonzero")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut t = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            t.set2(j, i, a.at2(i, j));
        }
    }
    t
}

fn gaussian_draw(mu: &Tensor, chol: &Tensor, rng: &mut StreamRng) -> Vec<f64> {
    let u: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
    linalg::matvec(chol, &u).iter().zip(mu.data()).map(|(a, m)| a + m).collect()
}

impl Module for Mvae {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoders.iter().for_each(|e| e.visit(f));
        self.decoders.iter().for_each(|e| e.visit(f));
        if let Some(c) = &self.cov_encoder {
            c.visit(f);
        }
        match &self.prior {
            Prior::Gaussian { mu, log_diag, lower } => {
                f("prior.mu", mu);
                f("prior.log_diag", log_diag);
                f("prior.lower", lower);
            }
            Prior::Laplace(_) => {}
            Prior::Potential(p) => p.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoders.iter_mut().for_each(|e| e.visit_mut(f));
        self.decoders.iter_mut().for_each(|e| e.visit_mut(f));
        if let Some(c) = &mut self.cov_encoder {
            c.visit_mut(f);
        }
        match &mut self.prior {
            Prior::Gaussian { mu, log_diag, lower } => {
                f("prior.mu", mu);
                f("prior.log_diag", log_diag);
                f("prior.lower", lower);
            }
            Prior::Laplace(_) => {}
            Prior::Potential(p) => p.visit_mut(f),
        }
    }
}

impl Generator for Mvae {
    fn modalities(&self) -> usize {
        self.layout.len()
    }

    fn dim(&self) -> usize {
        self.config.input_dims[0]
    }

    fn generate(&self, n: usize, rng: &mut StreamRng) -> Result<Tensor> {
        Mvae::generate(self, n, rng)
    }

    fn generate_conditional(&self, observed: usize, values: &Tensor, rng: &mut StreamRng) -> Result<Tensor> {
        self.conditional_generate(observed, values, rng)
    }
}
