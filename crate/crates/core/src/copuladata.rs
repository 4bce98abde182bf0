//! Synthetic benchmark: `M` modalities of `d` uniform coordinates, where
//! coordinate `j` of every modality is coupled across modalities by its own
//! Gaussian copula.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::substream_indexed;

/// Rows generated per independently seeded block.
pub const BLOCK_ROWS: usize = 1024;
/// Default number of training rows; the same number again is held out.
pub const DEFAULT_TRAIN_ROWS: usize = 10_000;
pub const DEFAULT_RHO: f64 = 0.9;

/// Largest double below one; upper clamp for the probability transform.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Correlation matrix `R^j` with entries `((-1)^j)^(k+l) rho` off the
/// diagonal (indices 1-based) and ones on it.
pub fn build_correlation(j: usize, m: usize, rho: f64) -> Result<Tensor> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Spec(format!("|rho| must be below 1, got {rho}")));
    }
    if m == 0 {
        return Err(Error::Spec("need at least one modality".into()));
    }
    let mut r = Tensor::eye(m);
    for k in 1..=m {
        for l in 1..=m {
            if k != l {
                let sign = if j % 2 == 1 && (k + l) % 2 == 1 { -1.0 } else { 1.0 };
                r.set2(k - 1, l - 1, sign * rho);
            }
        }
    }
    if let Err(e) = linalg::cholesky(&r) {
        return Err(Error::Spec(format!("R^{j} with rho = {rho} is not positive definite ({e})")));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaSpec {
    pub modalities: usize,
    pub dim: usize,
    /// One `[M, M]` correlation matrix per coordinate.
    pub correlations: Vec<Tensor>,
    /// Latent location per coordinate. Cancels under the probability transform.
    pub means: Vec<f64>,
    /// Latent scale per coordinate. Cancels under the probability transform.
    pub scales: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

impl CopulaSpec {
    /// Four 2-D modalities, `R^1` and `R^2` from [`build_correlation`],
    /// latent means 3 and scales 1.
    pub fn benchmark(n: usize, seed: u64) -> Self {
        Self::with_rho(4, 2, DEFAULT_RHO, n, seed).expect("benchmark spec is valid")
    }

    pub fn with_rho(modalities: usize, dim: usize, rho: f64, n: usize, seed: u64) -> Result<Self> {
        let correlations = (1..=dim).map(|j| build_correlation(j, modalities, rho)).collect::<Result<_>>()?;
        let spec = CopulaSpec {
            modalities,
            dim,
            correlations,
            means: vec![3.0; dim],
            scales: vec![1.0; dim],
            n,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = (self.modalities, self.dim);
        if m == 0 || d == 0 {
            return Err(Error::Spec("modalities and dim must be positive".into()));
        }
        if self.correlations.len() != d || self.means.len() != d || self.scales.len() != d {
            return Err(Error::Spec(format!(
                "need {d} correlations, means and scales; got {}, {}, {}",
                self.correlations.len(),
                self.means.len(),
                self.scales.len()
            )));
        }
        for (j, r) in self.correlations.iter().enumerate() {
            if r.shape() != [m, m] {
                return Err(Error::Spec(format!("R^{} has shape {:?}, want [{m}, {m}]", j + 1, r.shape())));
            }
            for k in 0..m {
                if r.at2(k, k) != 1.0 {
                    return Err(Error::Spec(format!("R^{} has diagonal entry {} at {k}", j + 1, r.at2(k, k))));
                }
                for l in 0..k {
                    if r.at2(k, l) != r.at2(l, k) {
                        return Err(Error::Spec(format!("R^{} is not symmetric at ({k}, {l})", j + 1)));
                    }
                }
            }
            if let Err(e) = linalg::cholesky(r) {
                return Err(Error::Spec(format!("R^{} is not positive definite ({e})", j + 1)));
            }
        }
        if self.means.iter().any(|v| !v.is_finite()) || self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Spec("latent means must be finite and scales positive".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.modalities * self.dim
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Joint samples, one row per draw, columns ordered `mod1_dim1, mod1_dim2,
/// mod2_dim1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    modalities: usize,
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn new(modalities: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let width = modalities * dim;
        if width == 0 || data.len() % width != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not fill rows of {modalities} x {dim}",
                data.len()
            )));
        }
        Ok(Dataset { modalities, dim, rows: data.len() / width, data })
    }

    pub fn from_tensor(modalities: usize, dim: usize, t: &Tensor) -> Result<Self> {
        if t.shape().len() != 2 || t.shape()[1] != modalities * dim {
            return Err(Error::Dimension(format!("tensor {:?} for {modalities} x {dim} modalities", t.shape())));
        }
        Self::new(modalities, dim, t.data().to_vec())
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.modalities * self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    /// Values of coordinate `j` of modality `m` (both 0-based).
    pub fn column(&self, m: usize, j: usize) -> Vec<f64> {
        let c = m * self.dim + j;
        self.data.iter().skip(c).step_by(self.width()).copied().collect()
    }

    /// `[rows, d]` block of modality `m`.
    pub fn modality(&self, m: usize) -> Tensor {
        let (w, d) = (self.width(), self.dim);
        let data = (0..self.rows).flat_map(|i| self.data[i * w + m * d..i * w + (m + 1) * d].iter().copied()).collect();
        Tensor::new(vec![self.rows, d], data).expect("consistent shape")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.width()], self.data.clone()).expect("consistent shape")
    }

    /// First `n` rows and the remainder.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.rows {
            return Err(Error::Contract(format!("cannot take {n} of {} rows", self.rows)));
        }
        let cut = n * self.width();
        Ok((
            Dataset::new(self.modalities, self.dim, self.data[..cut].to_vec())?,
            Dataset::new(self.modalities, self.dim, self.data[cut..].to_vec())?,
        ))
    }

    pub fn header(&self) -> Vec<String> {
        header(self.modalities, self.dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", self.header().join(",")).map_err(io)?;
        let mut line = String::new();
        for i in 0..self.rows {
            line.clear();
            for (k, v) in self.row(i).iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut records = reader.records();
        let head = match records.next() {
            Some(r) => r.map_err(|e| csv_error(path, e))?,
            None => return Err(Error::Parse { line: 1, msg: "empty file, expected a header".into() }),
        };
        let (modalities, dim) = parse_header(&head.iter().collect::<Vec<_>>())?;
        let width = modalities * dim;
        let mut data = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != width {
                return Err(Error::Parse { line, msg: format!("expected {width} fields, found {}", rec.len()) });
            }
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse { line, msg: format!("`{field}` is not a number") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line, msg: format!("non-finite value `{field}`") });
                }
                data.push(v);
            }
        }
        Dataset::new(modalities, dim, data)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse { line, msg: format!("{kind:?}") },
    }
}

fn header(modalities: usize, dim: usize) -> Vec<String> {
    (1..=modalities).flat_map(|i| (1..=dim).map(move |j| format!("mod{i}_dim{j}"))).collect()
}

fn parse_header(fields: &[&str]) -> Result<(usize, usize)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let coord = |f: &str| -> Option<(usize, usize)> {
        let rest = f.trim().strip_prefix("mod")?;
        let (i, j) = rest.split_once("_dim")?;
        Some((i.parse().ok()?, j.parse().ok()?))
    };
    let last = fields.last().ok_or_else(|| bad("empty header".into()))?;
    let (modalities, dim) = coord(last).ok_or_else(|| bad(format!("unrecognised column `{last}`")))?;
    if modalities == 0 || dim == 0 {
        return Err(bad(format!("unrecognised column `{last}`")));
    }
    let want = header(modalities, dim);
    if fields.len() != want.len() || fields.iter().zip(&want).any(|(a, b)| a.trim() != b) {
        return Err(bad(format!("header must read {}", want.join(","))));
    }
    Ok((modalities, dim))
}

/// Draw `spec.n` rows. Each block of [`BLOCK_ROWS`] rows has its own stream
/// derived from `spec.seed`, so the result is independent of thread count.
pub fn sample(spec: &CopulaSpec) -> Result<Dataset> {
    spec.validate()?;
    let (m, d, w) = (spec.modalities, spec.dim, spec.width());
    let chols: Vec<Tensor> = spec.correlations.iter().map(linalg::cholesky).collect::<Result<_>>()?;
    let mut data = vec![0.0; spec.n * w];
    data.par_chunks_mut(BLOCK_ROWS * w).enumerate().for_each(|(block, chunk)| {
        let mut rng = substream_indexed(spec.seed, "copula", block as u64);
        let mut e = vec![0.0; m];
        for row in chunk.chunks_mut(w) {
            for (j, l) in chols.iter().enumerate() {
                for v in e.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let (mu, sd) = (spec.means[j], spec.scales[j]);
                for k in 0..m {
                    let corr: f64 = (0..=k).map(|t| l.at2(k, t) * e[t]).sum();
                    let g = mu + sd * corr;
                    let u = normal_cdf((g - mu) / sd);
                    row[k * d + j] = u.clamp(f64::MIN_POSITIVE, ONE_BELOW);
                }
            }
        }
    });
    Dataset::new(m, d, data)
}

/// Benchmark data split into the default train and held-out halves.
pub fn benchmark_split(seed: u64) -> Result<(Dataset, Dataset)> {
    sample(&CopulaSpec::benchmark(2 * DEFAULT_TRAIN_ROWS, seed))?.split(DEFAULT_TRAIN_ROWS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(header(2, 2), ["mod1_dim1", "mod1_dim2", "mod2_dim1", "mod2_dim2"]);
        assert_eq!(parse_header(&["mod1_dim1", "mod1_dim2"]).unwrap(), (1, 2));
        assert!(parse_header(&["mod1_dim2", "mod1_dim1"]).is_err());
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-3.0) - 1.349_898_031_630_094_6e-3).abs() < 1e-17);
    }
}
