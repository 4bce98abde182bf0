//! Command-line front end. Every command resolves and validates its whole
//! configuration before touching the file system.

mod config;

pub use config::{DataConfig, EvalConfig, RunConfig};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::copuladata::{sample as sample_copula, Dataset};
use crate::diffcore::{Module, Tensor};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_conditional, evaluate_unconditional, EvalReport};
use crate::mvae::{train, Checkpoint, Mvae, TrainState, Variant};
use crate::rng::substream;

const CHECKPOINT: &str = "checkpoint.json";

#[derive(Debug, Parser)]
#[command(name = "mrf-mvae", version, about = "Multimodal VAEs with Markov random field latents")]
pub struct Cli {
    /// Run configuration (JSON). Missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train.csv and heldout.csv from the copula benchmark.
    GenData,
    /// Train a model and write a checkpoint and loss trace.
    Train(TrainArgs),
    /// Draw unconditional or conditional samples from a checkpoint.
    Sample(SampleArgs),
    /// Scaled Wasserstein report against held-out data.
    Eval(EvalArgs),
    /// Summarize a checkpoint, config or dataset; with no path, print the
    /// resolved configuration.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training CSV [default: <out>/train.csv]
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint; its configuration is used.
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    /// Also write checkpoint-epochNNNN.json every this many epochs.
    #[arg(long, value_name = "EPOCHS")]
    pub save_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// [default: <out>/checkpoint.json]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Rows to draw [default: 1000, or the rows of --values]
    #[arg(short = 'n', long = "n")]
    pub n: Option<usize>,
    /// Observed modality, `mod=K` with K counted from 1.
    #[arg(long, requires = "values")]
    pub condition: Option<String>,
    /// CSV with the observed modality, either alone (`mod1_dim*` header) or
    /// inside full rows.
    #[arg(long, requires = "condition")]
    pub values: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalModeArg {
    Unconditional,
    Conditional,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// [default: <out>/checkpoint.json]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// [default: <out>/heldout.csv]
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: EvalModeArg,
    /// Generated rows [default: eval.n_generated]
    #[arg(short = 'n', long = "n")]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse `args` (program name first) and run. Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Configuration after applying the file and the global flags. The model
/// seed follows the run seed.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.model.seed = cfg.seed;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve(cli)?;
    match &cli.command {
        Command::GenData => {
            cfg.validate()?;
            gen_data(&cfg)
        }
        Command::Train(a) => {
            if let Some(v) = a.variant {
                cfg.model.variant = v;
            }
            if let Some(b) = a.beta {
                cfg.model.beta = b;
            }
            if let Some(e) = a.epochs {
                cfg.model.epochs = e;
            }
            if a.resume.is_some() && (a.variant.is_some() || a.beta.is_some()) {
                return Err(Error::Usage("--variant and --beta cannot be combined with --resume".into()));
            }
            if a.save_every == Some(0) {
                return Err(Error::Usage("--save-every must be positive".into()));
            }
            cfg.validate()?;
            cmd_train(&cfg, a)
        }
        Command::Sample(a) => {
            cfg.validate()?;
            cmd_sample(&cfg, a)
        }
        Command::Eval(a) => {
            if let Some(n) = a.n {
                cfg.eval.n_generated = n;
            }
            cfg.validate()?;
            cmd_eval(&cfg, a)
        }
        Command::Inspect(a) => {
            cfg.validate()?;
            println!("{}", inspect(&cfg, a.path.as_deref())?);
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<()> {
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    if let (Some(d), serde_json::Value::Object(e)) = (doc.as_object_mut(), extra) {
        d.extend(e);
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    write(&cfg.out.join(format!("manifest-{command}.json")), &text)
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.copula_spec()?;
    let data = sample_copula(&spec)?;
    let (train_set, held) = data.split(cfg.data.train_rows)?;
    create_dir(&cfg.out)?;
    train_set.save(&cfg.out.join("train.csv"))?;
    held.save(&cfg.out.join("heldout.csv"))?;
    write_manifest(cfg, "gen-data", json!({ "spec": spec }))?;
    eprintln!("wrote {} + {} rows to {}", train_set.rows(), held.rows(), cfg.out.display());
    Ok(())
}

fn loss_csv(state: &TrainState) -> String {
    let mut s = String::from("epoch,loss,recon,regularizer\n");
    for e in &state.trace {
        let _ = writeln!(s, "{},{},{},{}", e.epoch + 1, e.loss, e.recon, e.regularizer);
    }
    s
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let data_path = a.data.clone().unwrap_or_else(|| cfg.out.join("train.csv"));
    let (mut model, mut state, until) = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let until = a.epochs.unwrap_or(ck.config.epochs);
            (ck.model()?, ck.state, until)
        }
        None => (Mvae::new(cfg.model.clone())?, TrainState::default(), cfg.model.epochs),
    };
    let data = Dataset::load(&data_path)?;
    if data.width() != model.config().input_total() {
        return Err(Error::Config(format!(
            "{} has {} columns, model expects {}",
            data_path.display(),
            data.width(),
            model.config().input_total()
        )));
    }
    create_dir(&cfg.out)?;
    let out = cfg.out.clone();
    train(&mut model, &data, &mut state, until, |m, s| {
        let last = s.trace.last().expect("one entry per epoch");
        eprintln!(
            "epoch {}/{until}  loss {:.6}  recon {:.6}  reg {:.6}",
            s.epoch, last.loss, last.recon, last.regularizer
        );
        if a.save_every.is_some_and(|k| s.epoch % k == 0) {
            Checkpoint::new(m, s).save(&out.join(format!("checkpoint-epoch{:04}.json", s.epoch)))?;
        }
        Ok(())
    })?;
    Checkpoint::new(&model, &state).save(&cfg.out.join(CHECKPOINT))?;
    write(&cfg.out.join("loss.csv"), &loss_csv(&state))?;
    let resumed = a.resume.as_ref().map(|p| p.display().to_string());
    let mut run = cfg.clone();
    run.model = model.config().clone();
    write_manifest(&run, "train", json!({ "data": data_path, "resume": resumed, "epochs": until }))
}

/// `mod=K` to a zero-based modality index.
fn parse_condition(s: &str, modalities: usize) -> Result<usize> {
    let k = s
        .strip_prefix("mod=")
        .and_then(|k| k.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Usage(format!("--condition expects mod=K, got `{s}`")))?;
    if k == 0 || k > modalities {
        return Err(Error::Usage(format!("modality {k} does not exist (model has {modalities})")));
    }
    Ok(k - 1)
}

/// Observed values `[rows, d_k]` for modality `k`.
fn observed_values(path: &Path, model: &Mvae, k: usize) -> Result<Tensor> {
    let data = Dataset::load(path)?;
    let cfg = model.config();
    let dk = cfg.input_dims[k];
    if data.width() == cfg.input_total() && data.modalities() == cfg.modalities() {
        return Ok(data.modality(k));
    }
    if data.modalities() == 1 && data.dim() == dk {
        return Ok(data.modality(0));
    }
    Err(Error::Config(format!(
        "{} holds {} x {} columns; expected modality {} alone ({dk} columns) or full rows",
        path.display(),
        data.modalities(),
        data.dim(),
        k + 1
    )))
}

fn uniform_dim(model: &Mvae) -> Result<usize> {
    let dims = &model.config().input_dims;
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::Config("the CSV schema needs modalities of equal width".into()));
    }
    Ok(dims[0])
}

fn cmd_sample(cfg: &RunConfig, a: &SampleArgs) -> Result<()> {
    let ck_path = a.checkpoint.clone().unwrap_or_else(|| cfg.out.join(CHECKPOINT));
    let model = Checkpoint::load(&ck_path)?.model()?;
    let d = uniform_dim(&model)?;
    let m = model.config().modalities();
    let mut rng = substream(cfg.seed, "sample");
    let (x, observed) = match (&a.condition, &a.values) {
        (Some(c), Some(v)) => {
            let k = parse_condition(c, m)?;
            let values = observed_values(v, &model, k)?;
            let rows = values.shape()[0];
            if rows == 0 {
                return Err(Error::Config(format!("{} has no rows", v.display())));
            }
            let n = a.n.unwrap_or(rows);
            let w = values.shape()[1];
            let cycled: Vec<f64> = (0..n).flat_map(|r| values.data()[(r % rows) * w..(r % rows + 1) * w].to_vec()).collect();
            (model.conditional_generate(k, &Tensor::new(vec![n, w], cycled)?, &mut rng)?, Some(k + 1))
        }
        _ => (model.generate(a.n.unwrap_or(1000), &mut rng)?, None),
    };
    let out = Dataset::from_tensor(m, d, &x)?;
    create_dir(&cfg.out)?;
    out.save(&cfg.out.join("samples.csv"))?;
    write_manifest(cfg, "sample", json!({ "checkpoint": ck_path, "rows": out.rows(), "observed": observed }))?;
    eprintln!("wrote {} rows to {}", out.rows(), cfg.out.join("samples.csv").display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    let ck_path = a.checkpoint.clone().unwrap_or_else(|| cfg.out.join(CHECKPOINT));
    let held_path = a.heldout.clone().unwrap_or_else(|| cfg.out.join("heldout.csv"));
    let held = Dataset::load(&held_path)?;
    let model = Checkpoint::load(&ck_path)?.model()?;
    let n = cfg.eval.n_generated;
    let mut reports: Vec<EvalReport> = Vec::new();
    if a.mode != EvalModeArg::Conditional {
        reports.push(evaluate_unconditional(&model, &held, n, cfg.seed)?);
    }
    if a.mode != EvalModeArg::Unconditional {
        reports.push(evaluate_conditional(&model, &held, n, cfg.seed)?);
    }
    if let Some(r) = reports.iter().find(|r| !r.scaled_w1.iter().all(|v| v.is_finite())) {
        return Err(Error::Numeric(format!("{} report has non-finite entries", r.mode.name())));
    }
    create_dir(&cfg.out)?;
    for r in &reports {
        let name = r.mode.name();
        write(&cfg.out.join(format!("report-{name}.csv")), &r.to_csv())?;
        write(&cfg.out.join(format!("report-{name}.txt")), &r.to_table())?;
        print!("{}", r.to_table());
    }
    write_manifest(cfg, "eval", json!({ "checkpoint": ck_path, "heldout": held_path }))
}

fn inspect(cfg: &RunConfig, path: Option<&Path>) -> Result<String> {
    let Some(path) = path else {
        return Ok(serde_json::to_string_pretty(cfg)?);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) {
        if value.get("format").is_some() {
            let ck = Checkpoint::from_json(&text)?;
            let model = ck.model()?;
            let c = model.config();
            let _ = writeln!(s, "checkpoint {}", path.display());
            let _ = writeln!(s, "variant        {}", c.variant.name());
            let _ = writeln!(s, "input dims     {:?}", c.input_dims);
            let _ = writeln!(s, "latent dims    {:?}", c.latent_dims);
            let _ = writeln!(s, "beta           {}", c.beta);
            let _ = writeln!(s, "mask           {} of {} off-diagonals kept", model.mask().kept_count(), model.mask().off_diagonal_count());
            let _ = writeln!(s, "posterior size {}", model.distribution_param_count());
            let _ = writeln!(s, "parameters     {}", model.param_count());
            let _ = writeln!(s, "epochs         {}", ck.state.epoch);
            if let Some(e) = ck.state.trace.last() {
                let _ = writeln!(s, "last loss      {} (recon {}, regularizer {})", e.loss, e.recon, e.regularizer);
            }
            return Ok(s);
        }
        let run: RunConfig = serde_json::from_value(value.get("config").cloned().unwrap_or(value))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        run.validate()?;
        return Ok(serde_json::to_string_pretty(&run)?);
    }
    let data = Dataset::load(path)?;
    let _ = writeln!(s, "dataset {}: {} rows, {} modalities x {} coordinates", path.display(), data.rows(), data.modalities(), data.dim());
    for (k, name) in data.header().iter().enumerate() {
        let col: Vec<f64> = data.data().iter().skip(k).step_by(data.width()).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len().max(1) as f64;
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let _ = writeln!(s, "{name:<12} mean {mean:.4}  min {lo:.4}  max {hi:.4}");
    }
    Ok(s)
}
