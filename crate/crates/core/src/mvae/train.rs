use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Mvae, Variant};
use crate::copuladata::Dataset;
use crate::diffcore::{adam_step_module, params_from_value, to_json_string, AdamState, Module, ParamDoc, ParamMap, Tensor};
use crate::error::{Error, Result};
use crate::gmrf::LowerMask;
use crate::rng::substream_indexed;

const FORMAT: &str = "mrf-mvae-checkpoint/1";
/// Rows inspected by the post-epoch structure check.
const CHECK_ROWS: usize = 64;

/// Batch-size-weighted means over one epoch. `loss = -elbo`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub regularizer: f64,
}

/// Optimizer state and progress, everything besides the model needed to
/// resume bit-exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam: AdamState,
    pub trace: Vec<EpochLoss>,
}

fn gather(data: &Dataset, rows: &[usize]) -> Result<Tensor> {
    let w = data.width();
    let mut x = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        x.extend_from_slice(data.row(r));
    }
    Tensor::new(vec![rows.len(), w], x)
}

/// Train until `state.epoch == until`. Epoch `e` shuffles and draws all its
/// noise from `substream_indexed(seed, "train", e)`, so stopping and resuming
/// from a checkpoint reproduces an unbroken run. `on_epoch` runs after every
/// epoch.
pub fn train(
    model: &mut Mvae,
    data: &Dataset,
    state: &mut TrainState,
    until: usize,
    mut on_epoch: impl FnMut(&Mvae, &TrainState) -> Result<()>,
) -> Result<()> {
    let cfg = model.config().clone();
    if data.width() != cfg.input_total() {
        return Err(Error::Config(format!(
            "data rows have {} columns, model expects {}",
            data.width(),
            cfg.input_total()
        )));
    }
    if data.rows() == 0 {
        return Err(Error::Config("training data is empty".into()));
    }
    let min_batch = if cfg.variant == Variant::Almrf { 2 } else { 1 };
    let check = gather(data, &(0..data.rows().min(CHECK_ROWS)).collect::<Vec<_>>())?;
    while state.epoch < until {
        let epoch = state.epoch;
        let mut rng = substream_indexed(cfg.seed, "train", epoch as u64);
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.shuffle(&mut rng);
        let (mut n, mut loss, mut recon, mut reg) = (0usize, 0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < min_batch {
                continue;
            }
            let x = gather(data, batch)?;
            let noise = model.draw_noise(batch.len(), &mut rng);
            let (terms, grads) = model.loss_gradients(&x, &noise)?;
            adam_step_module(model, &grads, &mut state.adam, &cfg.adam)?;
            let b = batch.len() as f64;
            n += batch.len();
            loss -= b * terms.elbo;
            recon += b * terms.recon;
            reg += b * terms.regularizer;
        }
        model.check_structure(&check)?;
        let nf = n.max(1) as f64;
        state.trace.push(EpochLoss { epoch, loss: loss / nf, recon: recon / nf, regularizer: reg / nf });
        state.epoch += 1;
        on_epoch(model, state)?;
    }
    Ok(())
}

/// Model, optimizer state and loss trace in one JSON document.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub mask: LowerMask,
    pub params: ParamMap,
    pub state: TrainState,
}

#[derive(Serialize)]
struct AdamOut<'a> {
    step: u64,
    m: ParamDoc<'a>,
    v: ParamDoc<'a>,
}

#[derive(Serialize)]
struct DocOut<'a> {
    format: &'static str,
    config: &'a ModelConfig,
    mask: &'a LowerMask,
    epoch: usize,
    trace: &'a [EpochLoss],
    params: ParamDoc<'a>,
    adam: AdamOut<'a>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamIn {
    step: u64,
    m: serde_json::Value,
    v: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocIn {
    format: String,
    config: ModelConfig,
    mask: LowerMask,
    epoch: usize,
    trace: Vec<EpochLoss>,
    params: serde_json::Value,
    adam: AdamIn,
}

impl Checkpoint {
    pub fn new(model: &Mvae, state: &TrainState) -> Self {
        Checkpoint {
            config: model.config().clone(),
            mask: model.mask().clone(),
            params: model.params(),
            state: state.clone(),
        }
    }

    pub fn model(&self) -> Result<Mvae> {
        Mvae::from_parts(self.config.clone(), self.mask.clone(), &self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(&DocOut {
            format: FORMAT,
            config: &self.config,
            mask: &self.mask,
            epoch: self.state.epoch,
            trace: &self.state.trace,
            params: ParamDoc(&self.params),
            adam: AdamOut { step: self.state.adam.step, m: ParamDoc(&self.state.adam.m), v: ParamDoc(&self.state.adam.v) },
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: DocIn = serde_json::from_str(s)?;
        if doc.format != FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format `{}`", doc.format)));
        }
        doc.config.validate()?;
        let ck = Checkpoint {
            config: doc.config,
            mask: doc.mask,
            params: params_from_value(doc.params)?,
            state: TrainState {
                epoch: doc.epoch,
                adam: AdamState { step: doc.adam.step, m: params_from_value(doc.adam.m)?, v: params_from_value(doc.adam.v)? },
                trace: doc.trace,
            },
        };
        // fail early on a parameter set that does not fit the configuration
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
