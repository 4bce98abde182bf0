//! Neural-potential MRF: importance-sampled log partition, Metropolis-Hastings
//! draws, conditional draws, and the log-partition gradient.

use mrf_mvae::diffcore::{Activation, Layer, Mlp, Tensor};
use mrf_mvae::gmrf::{cholesky, BlockGaussian, BlockLayout};
use mrf_mvae::nnmrf::{grad_log_partition, log_partition_is, mh_conditional_sample, mh_sample, MhConfig, PotentialNet};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn layer(rows: usize, cols: usize, weight: Vec<f64>, activation: Activation) -> mrf_mvae::Result<Layer> {
    Ok(Layer { weight: Tensor::matrix(rows, cols, weight)?, bias: Tensor::zeros(&[cols]), activation })
}

/// Three 2-d blocks with `|z_i|^2 / 2` unaries and squared-sum couplings
/// `0.15 ((z_i1 + z_j1)^2 + (z_i2 - z_j2)^2)`. A freshly initialized
/// network is usually not normalizable, so this one is set by hand.
fn confining_potential() -> mrf_mvae::Result<PotentialNet> {
    let layout = BlockLayout::uniform(3, 2)?;
    // unary input [z_i (2), one-hot (3)]
    let mut w = vec![0.0; 5 * 2];
    w[0] = 1.0;
    w[3] = 1.0;
    let unary = Mlp::from_layers("prior.unary", vec![layer(5, 2, w, Activation::Square)?, layer(2, 1, vec![0.5, 0.5], Activation::Linear)?])?;
    // pair input [z_i (2), z_j (2), one-hot i (3), one-hot j (3)]
    let mut w = vec![0.0; 10 * 2];
    w[0] = 1.0; // z_i1 -> h1
    w[2 * 2] = 1.0; // z_j1 -> h1
    w[2 + 1] = 1.0; // z_i2 -> h2
    w[3 * 2 + 1] = -1.0; // z_j2 -> h2
    let pair = Mlp::from_layers("prior.pair", vec![layer(10, 2, w, Activation::Square)?, layer(2, 1, vec![0.15, 0.15], Activation::Linear)?])?;
    PotentialNet::from_nets(layout, pair, unary)
}

fn main() -> mrf_mvae::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let layout = BlockLayout::uniform(3, 2)?;
    let random = PotentialNet::new("prior", layout.clone(), &[16, 16], &mut rng);
    println!("random network: {} pair terms, {} unary terms", random.pair_count(), random.unary_count());
    let net = confining_potential()?;

    // the energy is z' Lambda z / 2, so ln Z = 3 ln(2 pi) - ln det(Lambda) / 2
    let mut lambda = Tensor::zeros(&[6, 6]);
    for a in 0..6 {
        for b in 0..6 {
            let v = match (a == b, a % 2 == b % 2, a % 2) {
                (true, _, _) => 1.6,
                (false, true, 0) => 0.3,
                (false, true, _) => -0.3,
                _ => 0.0,
            };
            lambda.set2(a, b, v);
        }
    }
    let l = cholesky(&lambda)?;
    let log_det: f64 = (0..6).map(|k| 2.0 * l.at2(k, k).ln()).sum();
    println!("exact ln Z {:.4}", 3.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det);
    let q = BlockGaussian::standard(layout.clone());
    for k in [64, 1024, 16384] {
        let est = log_partition_is(&net, &q, k, &mut rng)?;
        println!("ln Z with K = {k:>5}: {:.4}", est);
    }

    let cfg = MhConfig { burn_in: 2000, thinning: 5, seed: 1, ..MhConfig::default() };
    let out = mh_sample(&net, &cfg, 2000)?;
    println!("MH acceptance rate {:.3}", out.acceptance_rate);
    if let Some(w) = out.acceptance_warning() {
        println!("warning: {w}");
    }
    let n = out.samples.shape()[0];
    let mean: Vec<f64> = (0..6).map(|c| out.samples.data().iter().skip(c).step_by(6).sum::<f64>() / n as f64).collect();
    println!("sample mean {mean:.3?}");

    let fixed = Tensor::vector(vec![1.0, -1.0]);
    let cond = mh_conditional_sample(&net, &cfg, &[(0, fixed)], 2000)?;
    let row = &cond.samples.data()[..6];
    println!("conditional draw with block 1 fixed: {row:.3?}");

    let grads = grad_log_partition(&net, &out.samples)?;
    for (name, g) in grads.iter().take(3) {
        println!("d ln Z / d {name}: first entries {:.4?}", &g.data()[..g.len().min(3)]);
    }
    Ok(())
}
