//! The full-size copula benchmark: default architecture, 10,000 training
//! rows, evaluated against a large fresh reference every 25 epochs.
//!
//! `cargo run --release --example benchmark -- [beta] [epochs]`

use std::time::Instant;

use mrf_mvae::copuladata::{benchmark_split, sample, CopulaSpec};
use mrf_mvae::evalkit::{evaluate_conditional, evaluate_unconditional, summary_table, CopulaOracle};
use mrf_mvae::mvae::{train, ModelConfig, Mvae, TrainState};

const REFERENCE_ROWS: usize = 500_000;

fn main() -> mrf_mvae::Result<()> {
    let mut args = std::env::args().skip(1);
    let beta: f64 = args.next().map(|s| s.parse().expect("beta")).unwrap_or(0.001);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(200);

    let (train_rows, _) = benchmark_split(1)?;
    let reference = sample(&CopulaSpec::benchmark(REFERENCE_ROWS, 4242))?;
    let oracle = CopulaOracle::new(CopulaSpec::benchmark(1, 0))?;
    let fu = evaluate_unconditional(&oracle, &reference, REFERENCE_ROWS, 7)?;
    let fc = evaluate_conditional(&oracle, &reference, REFERENCE_ROWS, 8)?;
    println!("{}", summary_table(&[("exact sampler, unconditional", &fu), ("exact sampler, conditional", &fc)]));

    let mut model = Mvae::new(ModelConfig { beta, epochs, ..ModelConfig::default() })?;
    let mut state = TrainState::default();
    let start = Instant::now();
    train(&mut model, &train_rows, &mut state, epochs, |m, s| {
        if s.epoch % 25 == 0 || s.epoch == epochs {
            let e = s.trace.last().expect("one epoch");
            let u = evaluate_unconditional(m, &reference, REFERENCE_ROWS, 7)?;
            let c = evaluate_conditional(m, &reference, REFERENCE_ROWS, 8)?;
            println!(
                "epoch {} ({:.0} s): loss {:.4}, regularizer {:.4}\n{}",
                s.epoch,
                start.elapsed().as_secs_f64(),
                e.loss,
                e.regularizer,
                summary_table(&[("unconditional", &u), ("conditional", &c)])
            );
        }
        Ok(())
    })?;
    Ok(())
}
