//! Asymmetric Laplace draws, Bessel functions, and the generalized
//! hyperbolic conditional of one block given another.

use mrf_mvae::diffcore::Tensor;
use mrf_mvae::gmrf::BlockLayout;
use mrf_mvae::heavytail::{bessel_k, gh_conditional_params, gh_moment_match, gig_sample, AsymmetricLaplace, GhSampler, GigParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> mrf_mvae::Result<()> {
    for (v, x) in [(0.5, 1.0), (1.0, 0.1), (-2.5, 10.0)] {
        println!("K_{v}({x}) = {:.10e}", bessel_k(v, x)?);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let gig = GigParams::new(-0.5, 1.2, 2.0)?;
    let n = 100_000;
    let mean = (0..n).map(|_| gig_sample(&gig, &mut rng)).sum::<mrf_mvae::Result<f64>>()? / n as f64;
    println!("GIG(-0.5, 1.2, 2.0): sample mean {mean:.4}, exact {:.4}", gig.mean()?);

    #[rustfmt::skip]
    let chol = Tensor::matrix(4, 4, vec![
        1.0, 0.0, 0.0, 0.0,
        0.3, 0.9, 0.0, 0.0,
        0.4, -0.2, 0.8, 0.0,
        -0.3, 0.25, 0.1, 0.7,
    ])?;
    let al = AsymmetricLaplace::new(Tensor::vector(vec![0.4, -0.3, 0.5, 0.2]), chol, BlockLayout::new(vec![2, 2])?)?;
    let draws: Vec<Tensor> = (0..n).map(|_| al.draw(&mut rng)).collect();
    let emp: Vec<f64> = (0..4).map(|k| draws.iter().map(|d| d.data()[k]).sum::<f64>() / n as f64).collect();
    println!("AL mean {:?} (skew vector {:?})", emp, al.m().data());

    let z = Tensor::vector(vec![0.6, 0.1]);
    let (m, s) = gh_moment_match(&al, 0, 1, &z)?;
    println!("block 1 | block 2: moment-matched mean {:?}", m.data());
    println!("                   covariance {:?}", s.data());
    let sampler = GhSampler::new(&gh_conditional_params(&al, 0, 1, &z)?)?;
    let rows: Vec<Tensor> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    let gm: Vec<f64> = (0..2).map(|k| rows.iter().map(|r| r.data()[k]).sum::<f64>() / n as f64).collect();
    println!("                   exact GH draws mean {gm:?}");
    Ok(())
}
