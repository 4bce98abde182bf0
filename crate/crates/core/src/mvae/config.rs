use serde::{Deserialize, Serialize};

use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::gmrf::BlockLayout;
use crate::mmd::DEFAULT_SCALES;
use crate::nnmrf::{DrawMode, MhConfig, TRAIN_IS_SAMPLES};

/// Values of `beta` explored on the copula benchmark.
pub const BETA_SWEEP: [f64; 5] = [2.5, 1.0, 0.1, 0.05, 0.001];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Gaussian posterior, learned Gaussian prior, closed-form KL.
    #[default]
    Gmrf,
    /// Laplace posterior and prior, MMD regularizer.
    Almrf,
    /// Gaussian posterior, neural-potential prior, importance-sampled KL.
    Nnmrf,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Gmrf => "gmrf",
            Variant::Almrf => "almrf",
            Variant::Nnmrf => "nnmrf",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmrf" => Ok(Variant::Gmrf),
            "almrf" => Ok(Variant::Almrf),
            "nnmrf" => Ok(Variant::Nnmrf),
            _ => Err(Error::Config(format!("unknown variant `{s}` (gmrf, almrf, nnmrf)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    /// Unit-variance Gaussian.
    #[default]
    Gaussian,
    /// Unit-scale Laplace.
    Laplace,
}

/// How unobserved modalities are generated given one observed modality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalMode {
    /// Draw the observed latent block from its encoder, then condition the
    /// prior on it.
    #[default]
    Prior,
    /// Encode with unobserved modalities set to zero and sample the posterior.
    ZeroImpute,
}

/// Conditional law used by the Laplace variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GhMode {
    /// Gaussian with the moments of the exact conditional.
    #[default]
    MomentMatch,
    /// Exact generalized hyperbolic draws.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Observed extent of each modality.
    pub input_dims: Vec<usize>,
    /// Latent extent of each modality.
    pub latent_dims: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Hidden widths of the global encoder producing cross-block factor entries.
    pub covariance_hidden: Vec<usize>,
    /// Hidden widths of the unary and pairwise potential networks.
    pub potential_hidden: Vec<usize>,
    /// Fraction of strictly-lower factor entries forced to zero.
    pub mask_density: f64,
    pub beta: f64,
    pub likelihood: Likelihood,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multipliers of the median pairwise distance for the MMD kernel.
    pub mmd_scales: Vec<f64>,
    /// Importance samples per row for the neural-potential partition estimate.
    pub is_samples: usize,
    pub draw_mode: DrawMode,
    pub mh: MhConfig,
    pub conditional: ConditionalMode,
    pub gh_mode: GhMode,
    /// Skew vector of the Laplace prior; empty means zero.
    pub al_prior_skew: Vec<f64>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Gmrf,
            input_dims: vec![2; 4],
            latent_dims: vec![2; 4],
            encoder_hidden: vec![256, 256],
            decoder_hidden: vec![256, 256],
            covariance_hidden: vec![256, 256],
            potential_hidden: vec![64, 64],
            mask_density: 0.0,
            beta: 0.1,
            likelihood: Likelihood::Gaussian,
            adam: AdamConfig::default(),
            batch_size: 256,
            epochs: 200,
            mmd_scales: DEFAULT_SCALES.to_vec(),
            is_samples: TRAIN_IS_SAMPLES,
            draw_mode: DrawMode::Shared,
            mh: MhConfig::default(),
            conditional: ConditionalMode::Prior,
            gh_mode: GhMode::MomentMatch,
            al_prior_skew: Vec::new(),
            seed: 0,
        }
    }
}

fn positive_widths(what: &str, w: &[usize]) -> Result<()> {
    if w.contains(&0) {
        return Err(Error::Config(format!("{what} contains a zero width")));
    }
    Ok(())
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.input_dims.len();
        if m == 0 || self.latent_dims.len() != m {
            return Err(Error::Config(format!(
                "need one input and one latent extent per modality, got {} and {}",
                m,
                self.latent_dims.len()
            )));
        }
        positive_widths("input_dims", &self.input_dims)?;
        positive_widths("latent_dims", &self.latent_dims)?;
        positive_widths("encoder_hidden", &self.encoder_hidden)?;
        positive_widths("decoder_hidden", &self.decoder_hidden)?;
        positive_widths("covariance_hidden", &self.covariance_hidden)?;
        positive_widths("potential_hidden", &self.potential_hidden)?;
        if !(0.0..=1.0).contains(&self.mask_density) {
            return Err(Error::Config(format!("mask_density {} outside [0, 1]", self.mask_density)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be a nonnegative number, got {}", self.beta)));
        }
        let min_batch = if self.variant == Variant::Almrf { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!("batch_size must be at least {min_batch}")));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        if self.mmd_scales.is_empty() || self.mmd_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("mmd_scales must be positive numbers".into()));
        }
        if self.is_samples < 2 {
            return Err(Error::Config("is_samples must be at least 2".into()));
        }
        self.mh.validate()?;
        let d: usize = self.latent_dims.iter().sum();
        if !self.al_prior_skew.is_empty() && self.al_prior_skew.len() != d {
            return Err(Error::Config(format!("al_prior_skew needs {d} entries, got {}", self.al_prior_skew.len())));
        }
        if self.al_prior_skew.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("al_prior_skew must be finite".into()));
        }
        Ok(())
    }

    pub fn modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn layout(&self) -> Result<BlockLayout> {
        BlockLayout::new(self.latent_dims.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn latent_total(&self) -> usize {
        self.latent_dims.iter().sum()
    }

    pub fn input_total(&self) -> usize {
        self.input_dims.iter().sum()
    }

    /// Column offset of modality `i` in a data row.
    pub fn input_offset(&self, i: usize) -> usize {
        self.input_dims[..i].iter().sum()
    }
}
