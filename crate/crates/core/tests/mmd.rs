mod common;

use common::{gradient_check, integrate_2d, standard_normals};
use mrf_mvae::diffcore::{Tape, Tensor};
use mrf_mvae::mmd::{
    gaussian_mmd2, kl_mmd_bound_grid, mmd2, mmd2_var, mmd_regularizer, mmd_regularizer_var, rbf, KernelSpec,
    DEFAULT_SCALES,
};
use mrf_mvae::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn gaussian_rows(r: &mut ChaCha20Rng, n: usize, d: usize, shift: f64) -> Tensor {
    Tensor::new(vec![n, d], standard_normals(r, n * d).into_iter().map(|v| v + shift).collect()).unwrap()
}

#[test]
fn rbf_examples() {
    let k = KernelSpec::single(0.7).unwrap();
    let x = Tensor::vector(vec![0.3, -1.0]);
    let y = Tensor::vector(vec![1.1, 0.5]);
    assert_eq!(rbf(&k, &x, &x).unwrap(), 1.0);
    assert_eq!(rbf(&k, &x, &y).unwrap(), rbf(&k, &y, &x).unwrap());
    // |x - y|^2 = 2 sigma^2
    let z = Tensor::vector(vec![0.3 + 0.7 * 2f64.sqrt(), -1.0]);
    assert!((rbf(&k, &x, &z).unwrap() - (-1f64).exp()).abs() < 1e-15);
    assert!(matches!(rbf(&k, &x, &Tensor::vector(vec![1.0])), Err(Error::Dimension(_))));
}

#[test]
fn kernel_spec_validation() {
    assert!(matches!(KernelSpec::new(vec![]), Err(Error::Config(_))));
    assert!(matches!(KernelSpec::new(vec![1.0, 0.0]), Err(Error::Config(_))));
    assert!(matches!(KernelSpec::new(vec![f64::NAN]), Err(Error::Config(_))));
    let k: KernelSpec = serde_json::from_str("[0.5, 2.0]").unwrap();
    assert_eq!(k.bandwidths(), &[0.5, 2.0]);
    assert!(serde_json::from_str::<KernelSpec>("[-1.0]").is_err());
}

#[test]
fn median_heuristic_scales_median_distance() {
    let x = Tensor::matrix(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
    let k = KernelSpec::median_heuristic(&x, &DEFAULT_SCALES).unwrap();
    assert_eq!(k.bandwidths(), &[1.0, 2.0, 4.0, 8.0]);
    let x = Tensor::matrix(4, 1, vec![0.0, 1.0, 3.0, 7.0]).unwrap();
    // distances 1 2 3 4 6 7
    let k = KernelSpec::median_heuristic(&x, &[1.0]).unwrap();
    assert_eq!(k.bandwidths(), &[3.5]);
    let flat = Tensor::zeros(&[3, 2]);
    assert!(matches!(KernelSpec::median_heuristic(&flat, &[1.0]), Err(Error::Numeric(_))));
}

#[test]
fn identical_samples_give_zero() {
    let mut r = ChaCha20Rng::seed_from_u64(1);
    let k = KernelSpec::new(vec![0.5, 1.0, 2.0]).unwrap();
    let x = gaussian_rows(&mut r, 50, 3, 0.0);
    assert_eq!(mmd2(&k, &x, &x).unwrap(), 0.0);
    let mut order: Vec<usize> = (0..50).collect();
    order.shuffle(&mut r);
    let perm = Tensor::new(vec![50, 3], order.iter().flat_map(|&i| x.row(i).to_vec()).collect()).unwrap();
    assert_eq!(mmd2(&k, &x, &perm).unwrap(), 0.0);
}

#[test]
fn too_few_samples_rejected() {
    let k = KernelSpec::single(1.0).unwrap();
    let one = Tensor::zeros(&[1, 2]);
    let two = Tensor::zeros(&[2, 2]);
    assert!(matches!(mmd2(&k, &one, &two), Err(Error::Contract(_))));
    assert!(matches!(mmd2(&k, &two, &Tensor::zeros(&[2, 3])), Err(Error::Dimension(_))));
}

#[test]
fn same_distribution_null_is_small() {
    let mut r = ChaCha20Rng::seed_from_u64(2);
    let k = KernelSpec::single(1.0).unwrap();
    // expected V-statistic under the null: (1 - 1/sqrt 3)(1/n + 1/m)
    let expected = (1.0 - 1.0 / 3f64.sqrt()) * 2.0 / 2000.0;
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    for _ in 0..20 {
        let x = gaussian_rows(&mut r, 2000, 1, 0.0);
        let y = gaussian_rows(&mut r, 2000, 1, 0.0);
        let v = mmd2(&k, &x, &y).unwrap();
        worst = worst.max(v);
        total += v;
    }
    assert!(worst <= 0.01, "largest null MMD^2 {worst}");
    let avg = total / 20.0;
    assert!((avg / expected - 1.0).abs() < 0.3, "null mean {avg} vs {expected}");
}

#[test]
fn closed_form_matches_kernel_integrals() {
    for (mp, sp, mq, sq, b) in [(0.0, 1.0, 1.0, 1.0, 1.0), (0.5, 0.6, -0.3, 1.4, 0.8)] {
        let npdf = |x: f64, m: f64, s: f64| (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let kern = |x: f64, y: f64| (-(x - y) * (x - y) / (2.0 * b * b)).exp();
        let e = |m1: f64, s1: f64, m2: f64, s2: f64| {
            integrate_2d(&|x, y| kern(x + m1, y + m2) * npdf(x + m1, m1, s1) * npdf(y + m2, m2, s2), -12.0, 12.0, 24)
        };
        let want = e(mp, sp, mp, sp) + e(mq, sq, mq, sq) - 2.0 * e(mp, sp, mq, sq);
        let got = gaussian_mmd2(mp, sp, mq, sq, b);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    // shorthand for equal unit variances
    let (mu, s) = (1.3f64, 0.9f64);
    let short = 2.0 * s / (s * s + 2.0).sqrt() * (1.0 - (-mu * mu / (2.0 * (s * s + 2.0))).exp());
    assert!((gaussian_mmd2(0.0, 1.0, mu, 1.0, s) - short).abs() < 1e-14);
}

#[test]
fn estimator_matches_population_value() {
    let mut r = ChaCha20Rng::seed_from_u64(3);
    let k = KernelSpec::single(1.0).unwrap();
    let x = gaussian_rows(&mut r, 5000, 1, 0.0);
    let y = gaussian_rows(&mut r, 5000, 1, 1.0);
    let got = mmd2(&k, &x, &y).unwrap();
    let want = gaussian_mmd2(0.0, 1.0, 1.0, 1.0, 1.0);
    assert!((got / want - 1.0).abs() < 0.1, "{got} vs {want}");
}

#[test]
fn regularizer_examples() {
    let mut r = ChaCha20Rng::seed_from_u64(4);
    let k = KernelSpec::single(1.0).unwrap();
    let x = gaussian_rows(&mut r, 10, 2, 0.0);
    assert_eq!(mmd_regularizer(&k, &x, &x).unwrap(), 0.0);
    assert!((std::f64::consts::E - 1.0).ln_1p() - 1.0 == 0.0);
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    assert_eq!(mmd_regularizer_var(&k, xv, xv).unwrap().item(), 0.0);
    let mut last = -1.0;
    for s in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let y = gaussian_rows(&mut ChaCha20Rng::seed_from_u64(5), 200, 2, s);
        let x = gaussian_rows(&mut ChaCha20Rng::seed_from_u64(6), 200, 2, 0.0);
        let m = mmd2(&k, &x, &y).unwrap();
        let reg = mmd_regularizer(&k, &x, &y).unwrap();
        assert!((reg - m.ln_1p()).abs() < 1e-15 && reg >= 0.0);
        assert!(reg > last);
        last = reg;
    }
}

#[test]
fn tape_version_matches_and_differentiates() {
    let mut r = ChaCha20Rng::seed_from_u64(7);
    let k = KernelSpec::new(vec![0.6, 1.5]).unwrap();
    let x = gaussian_rows(&mut r, 7, 3, 0.0);
    let y = gaussian_rows(&mut r, 5, 3, 0.4);
    let tape = Tape::new();
    let v = mmd2_var(&k, tape.constant(x.clone()), tape.constant(y.clone())).unwrap().item();
    let w = mmd2(&k, &x, &y).unwrap();
    assert!((v - w).abs() < 1e-12 * w.max(1e-3), "{v} vs {w}");
    let worst = gradient_check(
        &[x.clone(), y.clone()],
        &|_t, xs| mmd_regularizer_var(&k, xs[0], xs[1]).unwrap(),
        1e-5,
        1e-5,
        1e-9,
    );
    assert!(worst <= 1.0, "gradient mismatch ratio {worst}");
}

#[test]
fn kl_bound_diagnostic_is_finite() {
    let rows = kl_mmd_bound_grid(&[0.0, 0.5, 1.0, 2.0], &[0.5, 1.0, 2.0], &[0.5, 1.0, 2.0, 4.0]);
    assert_eq!(rows.len(), 48);
    for row in &rows {
        assert!(row.kl.is_finite() && row.log_mmd.is_finite() && row.log_mmd >= 0.0);
    }
    let held = rows.iter().filter(|r| r.holds).count();
    eprintln!("KL <= ln(MMD^2 + 1) held on {held} of {} grid points", rows.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmd2_nonnegative_and_symmetric(seed in 0u64..10_000, n in 2usize..12, m in 2usize..12, d in 1usize..4, shift in -2.0f64..2.0) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let k = KernelSpec::new(vec![0.3, 1.0, 3.0]).unwrap();
        let x = gaussian_rows(&mut r, n, d, 0.0);
        let y = gaussian_rows(&mut r, m, d, shift);
        let a = mmd2(&k, &x, &y).unwrap();
        let b = mmd2(&k, &y, &x).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-14);
    }
}
