//! Per-coordinate 1-D Wasserstein evaluation of generated copula data.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::copuladata::{normal_cdf, CopulaSpec, Dataset};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::gmrf::Regression;
use crate::linalg;
use crate::rng::{substream, StreamRng};

/// Distances are reported multiplied by this factor.
pub const SCALE: f64 = 1000.0;

/// Wasserstein-1 distance between two empirical distributions on the line,
/// via the quantile coupling.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("wasserstein1 needs nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("wasserstein1 input contains a non-finite value".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    // step quantile functions; walk the merged breakpoints k/n and l/m
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        total += (a[i] - b[j]).abs() * (next - t);
        t = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Unconditional,
    Conditional,
    /// Two independent halves of the held-out data compared to each other.
    NoiseFloor,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Unconditional => "unconditional",
            EvalMode::Conditional => "conditional",
            EvalMode::NoiseFloor => "noise_floor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub modalities: usize,
    pub dim: usize,
    /// Scaled W1 per (modality, coordinate), modality-major.
    pub scaled_w1: Vec<f64>,
    /// Mean over modalities, per coordinate.
    pub dim_means: Vec<f64>,
    pub mean: f64,
    pub generated: usize,
    pub reference: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_entries(
        mode: EvalMode,
        modalities: usize,
        dim: usize,
        scaled_w1: Vec<f64>,
        generated: usize,
        reference: usize,
        seed: u64,
    ) -> Result<Self> {
        if scaled_w1.len() != modalities * dim || scaled_w1.is_empty() {
            return Err(Error::Dimension(format!("{} entries for {modalities} x {dim}", scaled_w1.len())));
        }
        let dim_means = (0..dim)
            .map(|j| (0..modalities).map(|m| scaled_w1[m * dim + j]).sum::<f64>() / modalities as f64)
            .collect();
        let mean = scaled_w1.iter().sum::<f64>() / scaled_w1.len() as f64;
        Ok(EvalReport { mode, modalities, dim, scaled_w1, dim_means, mean, generated, reference, seed })
    }

    pub fn entry(&self, modality: usize, coordinate: usize) -> f64 {
        self.scaled_w1[modality * self.dim + coordinate]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,modality,coordinate,w1_x1000\n");
        let mode = self.mode.name();
        for m in 0..self.modalities {
            for j in 0..self.dim {
                let _ = writeln!(s, "{mode},{},{},{:.6}", m + 1, j + 1, self.entry(m, j));
            }
        }
        for (j, v) in self.dim_means.iter().enumerate() {
            let _ = writeln!(s, "{mode},mean,{},{v:.6}", j + 1);
        }
        let _ = writeln!(s, "{mode},mean,mean,{:.6}", self.mean);
        s
    }

    /// Aligned text: a modality-by-coordinate grid, then the summary line.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{} W1 x {SCALE} ({} generated vs {} reference, seed {})\n",
            self.mode.name(),
            self.generated,
            self.reference,
            self.seed
        );
        let _ = write!(s, "{:<10}", "");
        for j in 0..self.dim {
            let _ = write!(s, "{:>10}", format!("Dim {}", j + 1));
        }
        s.push('\n');
        for m in 0..self.modalities {
            let _ = write!(s, "{:<10}", format!("mod {}", m + 1));
            for j in 0..self.dim {
                let _ = write!(s, "{:>10.3}", self.entry(m, j));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<10}", "mean");
        for v in &self.dim_means {
            let _ = write!(s, "{v:>10.3}");
        }
        let _ = writeln!(s, "\n{:<10}{:>10.3}", "overall", self.mean);
        s
    }
}

/// Summary rows in the Dim 1 / Dim 2 / Mean layout, one per labelled report.
pub fn summary_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut s = format!("{:<16}", "");
    let dim = rows.first().map_or(0, |(_, r)| r.dim);
    for j in 0..dim {
        let _ = write!(s, "{:>9}", format!("Dim {}", j + 1));
    }
    let _ = writeln!(s, "{:>9}", "Mean");
    for (label, r) in rows {
        let _ = write!(s, "{label:<16}");
        for v in &r.dim_means {
            let _ = write!(s, "{v:>9.3}");
        }
        let _ = writeln!(s, "{:>9.3}", r.mean);
    }
    s
}

/// Anything that can produce joint rows of `modalities * dim` values.
pub trait Generator {
    fn modalities(&self) -> usize;
    fn dim(&self) -> usize;

    /// `[n, M * d]` unconditional draws.
    fn generate(&self, n: usize, rng: &mut StreamRng) -> Result<Tensor>;

    /// One full row per row of `values` (`[B, d]`, the observed modality).
    /// Observed columns in the output are ignored by the evaluation.
    fn generate_conditional(&self, observed: usize, values: &Tensor, rng: &mut StreamRng) -> Result<Tensor>;
}

fn check_shapes<G: Generator + ?Sized>(model: &G, heldout: &Dataset) -> Result<()> {
    if model.modalities() != heldout.modalities() || model.dim() != heldout.dim() {
        return Err(Error::Dimension(format!(
            "model has {} x {} coordinates, data {} x {}",
            model.modalities(),
            model.dim(),
            heldout.modalities(),
            heldout.dim()
        )));
    }
    if heldout.rows() == 0 {
        return Err(Error::Contract("held-out data is empty".into()));
    }
    Ok(())
}

fn generated_shape(t: &Tensor, rows: usize, width: usize) -> Result<()> {
    if t.shape() != [rows, width] {
        return Err(Error::Dimension(format!("generator returned {:?}, want [{rows}, {width}]", t.shape())));
    }
    if !t.is_finite() {
        return Err(Error::Numeric("generator returned non-finite values".into()));
    }
    Ok(())
}

fn scaled_distances(pools: &[Vec<f64>], heldout: &Dataset) -> Result<Vec<f64>> {
    let d = heldout.dim();
    pools
        .iter()
        .enumerate()
        .map(|(c, pool)| Ok(SCALE * wasserstein1(pool, &heldout.column(c / d, c % d))?))
        .collect()
}

/// Draw `n` joint samples and compare every coordinate with the held-out data.
pub fn evaluate_unconditional<G: Generator + ?Sized>(model: &G, heldout: &Dataset, n: usize, seed: u64) -> Result<EvalReport> {
    check_shapes(model, heldout)?;
    let w = heldout.width();
    let mut rng = substream(seed, "eval.unconditional");
    let out = model.generate(n, &mut rng)?;
    generated_shape(&out, n, w)?;
    let pools: Vec<Vec<f64>> = (0..w).map(|c| out.data().iter().skip(c).step_by(w).copied().collect()).collect();
    let entries = scaled_distances(&pools, heldout)?;
    EvalReport::from_entries(EvalMode::Unconditional, heldout.modalities(), heldout.dim(), entries, n, heldout.rows(), seed)
}

/// For each of the first `n` held-out rows (cycling if needed), observe one
/// modality, rotating through modalities row by row, and generate the rest.
/// Generated values of each unobserved coordinate are pooled across rows.
pub fn evaluate_conditional<G: Generator + ?Sized>(model: &G, heldout: &Dataset, n: usize, seed: u64) -> Result<EvalReport> {
    check_shapes(model, heldout)?;
    let (mm, d, w) = (heldout.modalities(), heldout.dim(), heldout.width());
    if mm < 2 {
        return Err(Error::Contract("conditional evaluation needs at least two modalities".into()));
    }
    let mut rng = substream(seed, "eval.conditional");
    let mut pools = vec![Vec::new(); w];
    for k in 0..mm {
        let rows: Vec<usize> = (0..n).filter(|r| r % mm == k).map(|r| r % heldout.rows()).collect();
        if rows.is_empty() {
            continue;
        }
        let values: Vec<f64> = rows.iter().flat_map(|&r| heldout.row(r)[k * d..(k + 1) * d].iter().copied()).collect();
        let values = Tensor::new(vec![rows.len(), d], values)?;
        let out = model.generate_conditional(k, &values, &mut rng)?;
        generated_shape(&out, rows.len(), w)?;
        for (c, pool) in pools.iter_mut().enumerate() {
            if c / d != k {
                pool.extend(out.data().iter().skip(c).step_by(w));
            }
        }
    }
    if pools.iter().any(Vec::is_empty) {
        return Err(Error::Contract(format!("{n} rows leave some modality never generated")));
    }
    let entries = scaled_distances(&pools, heldout)?;
    EvalReport::from_entries(EvalMode::Conditional, mm, d, entries, n, heldout.rows(), seed)
}

/// Scaled W1 between the first and second half of `heldout`: the level an
/// exact sampler reaches at half the sample size.
pub fn noise_floor(heldout: &Dataset) -> Result<EvalReport> {
    let half = heldout.rows() / 2;
    if half == 0 {
        return Err(Error::Contract("noise floor needs at least two rows".into()));
    }
    let (a, b) = heldout.split(half)?;
    let (mm, d) = (heldout.modalities(), heldout.dim());
    let entries = (0..mm * d)
        .map(|c| Ok(SCALE * wasserstein1(&a.column(c / d, c % d), &b.column(c / d, c % d))?))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_entries(EvalMode::NoiseFloor, mm, d, entries, a.rows(), b.rows(), 0)
}

/// Exact sampler for a copula spec, conditional draws included.
pub struct CopulaOracle {
    spec: CopulaSpec,
    chols: Vec<Tensor>,
}

impl CopulaOracle {
    pub fn new(spec: CopulaSpec) -> Result<Self> {
        spec.validate()?;
        let chols = spec.correlations.iter().map(linalg::cholesky).collect::<Result<_>>()?;
        Ok(CopulaOracle { spec, chols })
    }
}

impl Generator for CopulaOracle {
    fn modalities(&self) -> usize {
        self.spec.modalities
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn generate(&self, n: usize, rng: &mut StreamRng) -> Result<Tensor> {
        let (m, d) = (self.spec.modalities, self.spec.dim);
        let mut out = vec![0.0; n * m * d];
        let mut e = vec![0.0; m];
        for row in out.chunks_mut(m * d) {
            for (j, l) in self.chols.iter().enumerate() {
                e.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let g = linalg::matvec(l, &e);
                for k in 0..m {
                    row[k * d + j] = normal_cdf(g[k]);
                }
            }
        }
        Tensor::new(vec![n, m * d], out)
    }

    fn generate_conditional(&self, observed: usize, values: &Tensor, rng: &mut StreamRng) -> Result<Tensor> {
        let (m, d) = (self.spec.modalities, self.spec.dim);
        if observed >= m || values.shape().len() != 2 || values.shape()[1] != d {
            return Err(Error::Dimension(format!("observed modality {observed} with values {:?}", values.shape())));
        }
        let rows = values.shape()[0];
        let normal = Normal::standard();
        let free: Vec<usize> = (0..m).filter(|&k| k != observed).collect();
        let regs = self
            .spec
            .correlations
            .iter()
            .map(|r| {
                let reg = Regression::new(r, &free, &[observed])?;
                let chol = linalg::cholesky(&reg.schur)?;
                Ok((reg, chol))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = vec![0.0; rows * m * d];
        for (b, row) in out.chunks_mut(m * d).enumerate() {
            for (j, (reg, chol)) in regs.iter().enumerate() {
                let u = values.at2(b, j).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                let g_obs = normal.inverse_cdf(u);
                let mean = reg.regress(&[g_obs]);
                let e: Vec<f64> = (0..free.len()).map(|_| rng.sample(StandardNormal)).collect();
                let noise = linalg::matvec(chol, &e);
                for (t, &k) in free.iter().enumerate() {
                    row[k * d + j] = normal_cdf(mean[t] + noise[t]);
                }
                row[observed * d + j] = values.at2(b, j);
            }
        }
        Tensor::new(vec![rows, m * d], out)
    }
}
