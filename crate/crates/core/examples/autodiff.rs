//! Fit a small network to `sin(x)` with the tape and Adam.

use mrf_mvae::diffcore::{adam_step_module, Activation, AdamConfig, AdamState, Mlp, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> mrf_mvae::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let n = 128;
    let xs: Vec<f64> = (0..n).map(|k| -3.0 + 6.0 * k as f64 / (n - 1) as f64).collect();
    let x = Tensor::new(vec![n, 1], xs.clone())?;
    let y = Tensor::new(vec![n, 1], xs.iter().map(|v| v.sin()).collect())?;

    let mut net = Mlp::new("net", &[1, 32, 32, 1], Activation::Relu, Activation::Linear, &mut rng);
    let cfg = AdamConfig { lr: 5e-3, ..AdamConfig::default() };
    let mut state = AdamState::default();
    for step in 0..=1500 {
        let tape = Tape::new();
        let pred = net.forward(&tape, tape.constant(x.clone()))?;
        let loss = pred.sub(tape.constant(y.clone()))?.square().mean();
        let value = loss.item();
        let grads = tape.backward(loss)?.by_name();
        adam_step_module(&mut net, &grads, &mut state, &cfg)?;
        if step % 300 == 0 {
            println!("step {step:>4}  mse {value:.2e}");
        }
    }
    let probe = Tensor::new(vec![3, 1], vec![-1.5, 0.0, 1.0])?;
    for (x, y) in probe.data().iter().zip(net.apply(&probe)?.data()) {
        println!("net({x:+.1}) = {y:+.4}   sin = {:+.4}", x.sin());
    }
    Ok(())
}
