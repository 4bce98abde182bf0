//! Block Gaussian: reparametrized draws, KL terms and conditionals of one
//! block given another.

use mrf_mvae::diffcore::Tensor;
use mrf_mvae::gmrf::{conditional, conditional_multi, gmrf_sample, kl_to_standard, log_density, BlockGaussian, BlockLayout};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> mrf_mvae::Result<()> {
    let layout = BlockLayout::new(vec![2, 1, 2])?;
    let mu = Tensor::vector(vec![0.5, -0.2, 1.0, 0.0, 0.3]);
    #[rustfmt::skip]
    let sigma = Tensor::matrix(5, 5, vec![
        1.0, 0.3, 0.5, 0.1, 0.0,
        0.3, 1.2, 0.2, 0.0, 0.1,
        0.5, 0.2, 0.9, 0.3, 0.2,
        0.1, 0.0, 0.3, 1.1, 0.4,
        0.0, 0.1, 0.2, 0.4, 0.8,
    ])?;
    let g = BlockGaussian::from_covariance(mu, &sigma, layout)?;
    println!("entropy {:.4}, KL to N(0, I) {:.4}", g.entropy(), kl_to_standard(&g));

    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let u = Tensor::vector((0..5).map(|_| StandardNormal.sample(&mut rng)).collect());
    let z = gmrf_sample(&g, &u)?;
    println!("draw {:?}, log density {:.4}", z.data(), log_density(&g, &z)?);

    let z_obs = Tensor::vector(vec![1.4]);
    let (m, s) = conditional(&g, 0, 1, &z_obs)?;
    println!("block 1 | block 2 = 1.4: mean {:?}", m.data());
    println!("                       covariance {:?}", s.data());

    let joint = conditional_multi(&g, &[(1, z_obs)])?;
    println!("blocks 1 and 3 | block 2: mean {:?}", joint.mu().data());
    Ok(())
}
