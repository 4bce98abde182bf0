//! Kernel two-sample statistics: estimates against the Gaussian closed form,
//! the median-heuristic kernel, and the KL versus ln(MMD^2 + 1) table.

use mrf_mvae::diffcore::Tensor;
use mrf_mvae::mmd::{gaussian_mmd2, kl_mmd_bound_grid, mmd2, mmd_regularizer, KernelSpec, DEFAULT_SCALES};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(rng: &mut ChaCha20Rng, n: usize, shift: f64) -> Tensor {
    Tensor::new(vec![n, 1], (0..n).map(|_| { let u: f64 = StandardNormal.sample(rng); shift + u }).collect()).expect("shape")
}

fn main() -> mrf_mvae::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let k = KernelSpec::single(1.0)?;
    for shift in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let x = normals(&mut rng, 2000, 0.0);
        let y = normals(&mut rng, 2000, shift);
        println!(
            "shift {shift:.2}: MMD^2 estimate {:.5}, population {:.5}",
            mmd2(&k, &x, &y)?,
            gaussian_mmd2(0.0, 1.0, shift, 1.0, 1.0)
        );
    }

    let prior = normals(&mut rng, 500, 0.0);
    let posterior = normals(&mut rng, 500, 0.7);
    let median = KernelSpec::median_heuristic(&prior, &DEFAULT_SCALES)?;
    println!("median-heuristic bandwidths {:?}", median.bandwidths());
    println!("ln(MMD^2 + 1) = {:.5}", mmd_regularizer(&median, &posterior, &prior)?);

    println!("\n   mu  sigma  bandwidth       KL   ln(MMD^2+1)  KL <= ln(MMD^2+1)");
    for row in kl_mmd_bound_grid(&[0.0, 0.5, 1.0], &[0.5, 1.0], &[1.0]) {
        println!("{:5.2} {:6.2} {:10.2} {:8.4} {:13.4}  {}", row.mu, row.sigma, row.bandwidth, row.kl, row.log_mmd, row.holds);
    }
    Ok(())
}
