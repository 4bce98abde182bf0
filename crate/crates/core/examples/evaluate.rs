//! Scaled per-coordinate W1 reports: the exact copula sampler, a half/half
//! noise floor, and an untrained model for contrast.

use mrf_mvae::copuladata::{sample, CopulaSpec};
use mrf_mvae::evalkit::{evaluate_conditional, evaluate_unconditional, noise_floor, summary_table, wasserstein1, CopulaOracle};
use mrf_mvae::mvae::{ModelConfig, Mvae};

fn main() -> mrf_mvae::Result<()> {
    println!("W1 between {{0, 1}} and {{0.5, 1.5}}: {}", wasserstein1(&[0.0, 1.0], &[0.5, 1.5])?);

    let heldout = sample(&CopulaSpec::benchmark(20_000, 3))?;
    let oracle = CopulaOracle::new(CopulaSpec::benchmark(1, 0))?;
    let ou = evaluate_unconditional(&oracle, &heldout, 20_000, 1)?;
    let oc = evaluate_conditional(&oracle, &heldout, 20_000, 2)?;
    let floor = noise_floor(&heldout)?;

    let model = Mvae::new(ModelConfig { encoder_hidden: vec![32], decoder_hidden: vec![32], covariance_hidden: vec![16], ..ModelConfig::default() })?;
    let mu = evaluate_unconditional(&model, &heldout, 20_000, 1)?;
    let mc = evaluate_conditional(&model, &heldout, 20_000, 2)?;

    println!("{}", ou.to_table());
    println!(
        "{}",
        summary_table(&[
            ("exact, unconditional", &ou),
            ("exact, conditional", &oc),
            ("half vs half", &floor),
            ("untrained, unconditional", &mu),
            ("untrained, conditional", &mc),
        ])
    );
    Ok(())
}
