mod common;

use common::{
    chi_square_pvalue, integrate, integrate_2d, ks_pvalue, ln_bessel_k_quadrature, log_integral, moments, random_chol,
    random_vec, rel_frobenius, standard_normals,
};
use mrf_mvae::diffcore::{Tape, Tensor, Var};
use mrf_mvae::gmrf::{self, BlockGaussian, BlockLayout, LowerMask};
use mrf_mvae::heavytail::{
    al_log_density, al_sample, al_sample_on_tape, al_sample_var, bessel_k, bessel_ratio, gh_conditional_params,
    gh_conditional_params_multi, gh_moment_match, gh_sample, gig_sample, ln_bessel_k, AsymmetricLaplace, GhSampler,
    GigParams, GigSampler,
};
use mrf_mvae::linalg::{outer_lower, submatrix, symmetric_eigenvalues};
use mrf_mvae::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_al(r: &mut ChaCha20Rng, extents: Vec<usize>, skew: f64) -> AsymmetricLaplace {
    let layout = BlockLayout::new(extents).unwrap();
    let d = layout.total();
    AsymmetricLaplace::new(random_vec(r, d, skew), random_chol(r, d), layout).unwrap()
}

fn al_draws(al: &AsymmetricLaplace, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| al.draw(&mut r).into_data()).collect()
}

fn cov_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    (0..n).map(|r| (0..n).map(|c| t.at2(r, c)).collect()).collect()
}

fn rel_norm(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = want.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Draws of `al` whose `j` coordinates fall within `eps` of `z_j`, restricted
/// to the `i` coordinates.
fn eps_ball(al: &AsymmetricLaplace, i: &[usize], j: &[usize], z_j: &[f64], eps: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut kept = Vec::new();
    for _ in 0..n {
        let y = al.draw(&mut r);
        let y = y.data();
        let d2: f64 = j.iter().zip(z_j).map(|(&k, z)| (y[k] - z).powi(2)).sum();
        if d2 <= eps * eps {
            kept.push(i.iter().map(|&k| y[k]).collect());
        }
    }
    kept
}

// ---------------------------------------------------------------- Bessel

#[test]
fn bessel_matches_integral_representation() {
    let mut worst: f64 = 0.0;
    for k in 0..=40 {
        let v = -5.0 + 0.25 * k as f64;
        for x in [1e-3, 0.01, 0.1, 0.7, 1.0, 1.99, 2.0, 3.3, 10.0, 50.0] {
            let want = ln_bessel_k_quadrature(v, x);
            let got = ln_bessel_k(v, x).unwrap();
            // relative error of K itself
            let rel = (got - want).exp_m1().abs();
            worst = worst.max(rel);
            assert!(rel < 1e-9, "K_{v}({x}): {got} vs quadrature {want}");
        }
    }
    eprintln!("worst relative Bessel error {worst:e}");
}

#[test]
fn bessel_k1_at_one_against_quadrature() {
    let want = ln_bessel_k_quadrature(1.0, 1.0).exp();
    assert!((bessel_k(1.0, 1.0).unwrap() / want - 1.0).abs() < 1e-8);
}

#[test]
fn bessel_half_order_and_symmetry() {
    for x in [0.5, 1.0, 2.0] {
        let exact = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
        assert!((bessel_k(0.5, x).unwrap() / exact - 1.0).abs() < 1e-13);
        assert!((bessel_k(-0.5, x).unwrap() / exact - 1.0).abs() < 1e-13);
    }
    for v in [0.2, 1.7, 3.0, 4.9] {
        assert_eq!(ln_bessel_k(v, 0.8).unwrap(), ln_bessel_k(-v, 0.8).unwrap());
    }
}

/// Large-argument series `sqrt(pi / 2x) e^{-x} sum_k a_k(v) / x^k`, without the
/// common prefactor.
fn hankel_series(v: f64, x: f64) -> f64 {
    let mu = 4.0 * v * v;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..12 {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        sum += term;
    }
    sum
}

#[test]
fn bessel_ratio_properties() {
    for x in [0.01, 1.0, 20.0] {
        assert!((bessel_ratio(-0.5, x).unwrap() - 1.0).abs() < 1e-14);
    }
    for k in 0..=16 {
        let s = -2.0 + 0.25 * k as f64;
        let r50 = bessel_ratio(s, 50.0).unwrap();
        let series = hankel_series(s + 1.0, 50.0) / hankel_series(s, 50.0);
        assert!((r50 / series - 1.0).abs() < 1e-9, "R_{s}(50) = {r50}, series {series}");
        // within 0.05 of one up to s ~ 1.95; R_2(50) - 1 = 0.0507
        assert!((r50 - 1.0).abs() < 0.055, "R_{s}(50)");
        if s < 1.9 {
            assert!((r50 - 1.0).abs() < 0.05, "R_{s}(50)");
        }
        for x in [0.3, 1.5, 4.0] {
            let q = bessel_k(s + 1.0, x).unwrap() / bessel_k(s, x).unwrap();
            assert!((bessel_ratio(s, x).unwrap() / q - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn bessel_log_space_never_overflows() {
    let mut x = 1e-3;
    while x <= 700.0 {
        for v in [-5.0, -2.5, 0.0, 0.5, 3.3, 5.0] {
            let l = ln_bessel_k(v, x).unwrap();
            assert!(l.is_finite(), "ln K_{v}({x})");
            assert!(bessel_ratio(v, x).unwrap().is_finite());
        }
        x *= 1.7;
    }
}

#[test]
fn bessel_domain_errors() {
    assert!(matches!(bessel_k(0.3, 0.0), Err(Error::Domain(_))));
    assert!(matches!(bessel_k(0.3, -1.0), Err(Error::Domain(_))));
    assert!(matches!(bessel_ratio(0.3, f64::NAN), Err(Error::Domain(_))));
}

// ------------------------------------------------------ asymmetric Laplace

fn weighted<'t>(t: &'t Tape, w: &Tensor, v: Var<'t>) -> Var<'t> {
    v.mul(t.constant(w.clone())).unwrap().sum()
}

#[test]
fn al_sample_zero_noise_scales_skew() {
    let al = AsymmetricLaplace::new(
        Tensor::vector(vec![1.0, -2.0]),
        Tensor::matrix(2, 2, vec![1.0, 0.0, 0.3, 0.7]).unwrap(),
        BlockLayout::new(vec![1, 1]).unwrap(),
    )
    .unwrap();
    let e = 1.0 - (-1.5f64).exp();
    let y = al_sample(&al, &Tensor::zeros(&[2]), e).unwrap();
    assert!((y.data()[0] - 1.5).abs() < 1e-12 && (y.data()[1] + 3.0).abs() < 1e-12);
    for bad in [0.0, 1.0, -0.2, f64::NAN] {
        assert!(matches!(al_sample(&al, &Tensor::zeros(&[2]), bad), Err(Error::Domain(_))));
    }
}

#[test]
fn al_sample_moments() {
    let mut r = rng(3);
    let al = random_al(&mut r, vec![1, 2], 0.8);
    let n = 1_000_000;
    let rows = al_draws(&al, n, 11);
    let (mu, cov) = moments(&rows);
    let sigma = al.covariance();
    let m = al.m().data();
    for k in 0..3 {
        let se = (cov[k][k] / n as f64).sqrt();
        assert!((mu[k] - m[k]).abs() < 4.0 * se, "coordinate {k}: {} vs {}", mu[k], m[k]);
    }
    let want: Vec<Vec<f64>> = (0..3).map(|p| (0..3).map(|q| sigma.at2(p, q) + m[p] * m[q]).collect()).collect();
    let err = rel_frobenius(&cov, &want);
    assert!(err <= 0.05, "covariance error {err}");
}

#[test]
fn al_symmetric_draws_have_no_skew() {
    let mut r = rng(4);
    let layout = BlockLayout::new(vec![2, 1]).unwrap();
    let al = AsymmetricLaplace::new(Tensor::zeros(&[3]), random_chol(&mut r, 3), layout).unwrap();
    let n = 200_000;
    let rows = al_draws(&al, n, 12);
    let (_, cov) = moments(&rows);
    for k in 0..3 {
        let sd = cov[k][k].sqrt();
        let cubes: Vec<f64> = rows.iter().map(|y| (y[k] / sd).powi(3)).collect();
        let m3 = common::mean(&cubes);
        let se = (common::variance(&cubes) / n as f64).sqrt();
        assert!(m3.abs() < 4.0 * se, "coordinate {k}: skewness {m3}, se {se}");
    }
}

#[test]
fn al_sample_var_agrees_and_differentiates() {
    let mut r = rng(5);
    let al = random_al(&mut r, vec![2, 1], 0.7);
    for _ in 0..5 {
        let u = Tensor::vector(standard_normals(&mut r, 3));
        let e: f64 = r.random_range(0.01..0.99);
        let a = al_sample(&al, &u, e).unwrap();
        let b = al_sample_on_tape(&al, &u, e).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }
    let u = Tensor::new(vec![4, 3], standard_normals(&mut r, 12)).unwrap();
    let e = [0.1, 0.4, 0.7, 0.95];
    let weights = Tensor::new(vec![4, 3], standard_normals(&mut r, 12)).unwrap();
    let worst = common::gradient_check(
        &[al.m().clone(), al.chol().clone()],
        &|t, xs| weighted(t, &weights, al_sample_var(xs[0], xs[1], t.constant(u.clone()), &e).unwrap()),
        1e-5,
        1e-6,
        1e-8,
    );
    assert!(worst <= 1.0, "gradient mismatch ratio {worst}");
}

#[test]
fn al_density_one_dimensional_is_laplace() {
    let al = AsymmetricLaplace::symmetric(BlockLayout::new(vec![1]).unwrap());
    let b = 1.0 / 2f64.sqrt();
    for y in [-3.0, -0.4, 1e-6, 0.25, 2.0, 9.0] {
        let want = -(2.0 * b).ln() - f64::abs(y) / b;
        let got = al_log_density(&al, &Tensor::vector(vec![y])).unwrap();
        assert!((got - want).abs() < 1e-8, "y = {y}: {got} vs {want}");
    }
}

#[test]
fn al_density_integrates_to_one_in_two_dimensions() {
    let al = AsymmetricLaplace::new(
        Tensor::vector(vec![0.3, -0.2]),
        Tensor::matrix(2, 2, vec![0.9, 0.0, 0.25, 0.6]).unwrap(),
        BlockLayout::new(vec![1, 1]).unwrap(),
    )
    .unwrap();
    let f = |x: f64, y: f64| al_log_density(&al, &Tensor::vector(vec![x, y])).unwrap().exp();
    let total = integrate_2d(&f, -20.0, 20.0, 80);
    assert!((total - 1.0).abs() < 5e-3, "mass {total}");
}

#[test]
fn al_density_rejects_origin() {
    let al = AsymmetricLaplace::symmetric(BlockLayout::new(vec![2]).unwrap());
    assert!(matches!(al_log_density(&al, &Tensor::zeros(&[2])), Err(Error::Domain(_))));
}

#[test]
fn al_histogram_matches_density() {
    let al = AsymmetricLaplace::new(
        Tensor::vector(vec![0.4]),
        Tensor::matrix(1, 1, vec![0.8]).unwrap(),
        BlockLayout::new(vec![1]).unwrap(),
    )
    .unwrap();
    let density = |y: f64| al_log_density(&al, &Tensor::vector(vec![y])).unwrap().exp();
    let (lo, hi, inner) = (-3.0, 5.0, 48);
    let w = (hi - lo) / inner as f64;
    let mut probs = vec![0.0; inner + 2];
    for b in 0..inner {
        probs[b + 1] = integrate(&density, lo + b as f64 * w, lo + (b + 1) as f64 * w, 1e-10);
    }
    probs[0] = integrate(&density, -60.0, lo, 1e-10);
    probs[inner + 1] = integrate(&density, hi, 80.0, 1e-10);
    let mass: f64 = probs.iter().sum();
    assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");

    let mut counts = vec![0u64; inner + 2];
    for y in al_draws(&al, 100_000, 21) {
        let y = y[0];
        let k = if y < lo {
            0
        } else if y >= hi {
            inner + 1
        } else {
            1 + ((y - lo) / w) as usize
        };
        counts[k] += 1;
    }
    let p = chi_square_pvalue(&counts, &probs, 0);
    assert!(p > 0.01, "chi-square p = {p}");
}

// ------------------------------------------------------------------- GIG

fn gig_moment_quadrature(p: &GigParams, k: f64) -> f64 {
    let phi = |s: f64, extra: f64| (p.lambda + extra) * s - 0.5 * (p.chi * (-s).exp() + p.psi * s.exp());
    (log_integral(&|s| phi(s, k)) - log_integral(&|s| phi(s, 0.0))).exp()
}

#[test]
fn gig_closed_form_moments_match_quadrature() {
    for (l, chi, psi) in [(-0.5, 1.0, 2.0), (1.5, 0.3, 4.0), (-3.0, 2.0, 0.5), (0.2, 1e-3, 1e3), (4.0, 50.0, 0.1)] {
        let p = GigParams::new(l, chi, psi).unwrap();
        let m1 = gig_moment_quadrature(&p, 1.0);
        let m2 = gig_moment_quadrature(&p, 2.0);
        assert!((p.mean().unwrap() / m1 - 1.0).abs() < 1e-9, "{p:?}");
        assert!((p.variance().unwrap() / (m2 - m1 * m1) - 1.0).abs() < 1e-7, "{p:?}");
    }
}

#[test]
fn gig_inverse_gaussian_case_mean() {
    let p = GigParams::new(-0.5, 1.5, 2.0).unwrap();
    let want = gig_moment_quadrature(&p, 1.0);
    // inverse Gaussian: mean sqrt(chi / psi)
    assert!((want - (1.5f64 / 2.0).sqrt()).abs() < 1e-10);
    let mut r = rng(31);
    assert!(gig_sample(&p, &mut r).unwrap() > 0.0);
    let s = GigSampler::new(&p).unwrap();
    let draws: Vec<f64> = (0..1_000_000).map(|_| s.sample(&mut r)).collect();
    assert!(draws.iter().all(|&w| w > 0.0));
    assert!((common::mean(&draws) / want - 1.0).abs() < 0.02);
}

#[test]
fn gig_sample_mean_over_parameter_range() {
    let mut r = rng(32);
    for (l, chi, psi) in [(1.0, 0.5, 2.0), (-1.5, 4.0, 1.0), (0.0, 0.01, 0.01), (-2.0, 25.0, 9.0), (3.0, 1e-4, 2.0)] {
        let p = GigParams::new(l, chi, psi).unwrap();
        let s = GigSampler::new(&p).unwrap();
        let draws: Vec<f64> = (0..1_000_000).map(|_| s.sample(&mut r)).collect();
        assert!(draws.iter().all(|&w| w > 0.0));
        let want = p.mean().unwrap();
        assert!((common::mean(&draws) / want - 1.0).abs() < 0.02, "{p:?}: {} vs {want}", common::mean(&draws));
    }
}

#[test]
fn gig_sample_distribution_passes_ks() {
    let mut r = rng(33);
    for (l, chi, psi) in [(-0.5, 1.0, 1.0), (2.5, 0.2, 3.0), (-4.0, 6.0, 0.05)] {
        let p = GigParams::new(l, chi, psi).unwrap();
        let draws: Vec<f64> = (0..3000).map(|_| gig_sample(&p, &mut r).unwrap()).collect();
        let phi = |s: f64| l * s - 0.5 * (chi * (-s).exp() + psi * s.exp());
        let ln_z = log_integral(&phi);
        let cdf = |w: f64| {
            let f = |s: f64| (phi(s) - ln_z).exp();
            integrate(&f, w.ln() - 60.0, w.ln(), 1e-10)
        };
        let pv = ks_pvalue(&draws, cdf);
        assert!(pv > 1e-3, "{p:?}: KS p = {pv}");
    }
}

#[test]
fn gig_rejects_bad_domain() {
    assert!(matches!(GigParams::new(0.5, 0.0, 1.0), Err(Error::Domain(_))));
    assert!(matches!(GigParams::new(0.5, 1.0, -1.0), Err(Error::Domain(_))));
    let p = GigParams { lambda: 1.0, chi: -1.0, psi: 1.0 };
    assert!(matches!(gig_sample(&p, &mut rng(0)), Err(Error::Domain(_))));
}

// -------------------------------------------------------------------- GH

#[test]
fn gh_symmetric_case_plug_in() {
    let mut r = rng(41);
    let layout = BlockLayout::new(vec![2, 2]).unwrap();
    let al = AsymmetricLaplace::new(Tensor::zeros(&[4]), random_chol(&mut r, 4), layout.clone()).unwrap();
    let z = Tensor::vector(vec![0.7, -0.3]);
    let p = gh_conditional_params(&al, 0, 1, &z).unwrap();
    assert!(p.beta.data().iter().all(|&b| b.abs() < 1e-15));
    assert!((p.xi - 2f64.sqrt()).abs() < 1e-15 && (p.alpha - 2f64.sqrt()).abs() < 1e-15);
    // m = 0: mean is the linear regression of z_j
    let (mean, _) = gh_moment_match(&al, 0, 1, &z).unwrap();
    let g = BlockGaussian::new(Tensor::zeros(&[4]), al.chol().clone(), layout, LowerMask::full(4)).unwrap();
    let (mu_hat, _) = gmrf::conditional(&g, 0, 1, &z).unwrap();
    assert!(mean.max_abs_diff(&mu_hat) < 1e-12);
}

#[test]
fn gh_dispersion_is_gaussian_schur_complement() {
    let mut r = rng(42);
    for extents in [vec![2, 2], vec![1, 3], vec![3, 1, 2]] {
        let al = random_al(&mut r, extents.clone(), 0.6);
        let d = al.dim();
        let g = BlockGaussian::new(Tensor::zeros(&[d]), al.chol().clone(), al.layout().clone(), LowerMask::full(d)).unwrap();
        let j = extents.len() - 1;
        let z = random_vec(&mut r, extents[j], 1.0);
        let p = gh_conditional_params(&al, 0, j, &z).unwrap();
        let (_, sigma_hat) = gmrf::conditional(&g, 0, j, &z).unwrap();
        assert!(p.dispersion.max_abs_diff(&sigma_hat) < 1e-10);
    }
}

#[test]
fn gh_alpha_invariant_holds() {
    let mut r = rng(43);
    for _ in 0..50 {
        let al = random_al(&mut r, vec![2, 3], 1.5);
        let z = random_vec(&mut r, 3, 2.0);
        let p = gh_conditional_params(&al, 0, 1, &z).unwrap();
        let bdb: f64 = p.beta.data().iter().zip(p.m.data()).map(|(b, m)| b * m).sum();
        let want = p.xi * p.xi + bdb;
        assert!((p.alpha * p.alpha / want - 1.0).abs() < 1e-10);
        p.validate().unwrap();
    }
}

#[test]
fn gh_singular_conditioning_block() {
    let sigma = Tensor::matrix(3, 3, vec![1.0, 0.2, 0.2, 0.2, 1.0, 1.0, 0.2, 1.0, 1.0]).unwrap();
    // build a factor by hand: the trailing block is rank one
    let l = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.2, 0.96f64.sqrt(), 0.0, 0.2, 0.96f64.sqrt(), 1e-9]).unwrap();
    assert!(outer_lower(&l).max_abs_diff(&sigma) < 1e-8);
    let al = AsymmetricLaplace::new(Tensor::zeros(&[3]), l, BlockLayout::new(vec![1, 2]).unwrap()).unwrap();
    let err = gh_conditional_params(&al, 0, 1, &Tensor::vector(vec![0.1, 0.3])).unwrap_err();
    assert!(matches!(err, Error::Conditioning(_)), "{err:?}");
}

#[test]
fn gh_degenerate_observation() {
    let mut r = rng(44);
    let al = random_al(&mut r, vec![2, 2], 0.5);
    let z = Tensor::vector(vec![1e-12, 0.0]);
    let p = gh_conditional_params(&al, 0, 1, &z).unwrap();
    assert!(matches!(p.moments(), Err(Error::DegenerateConditioning(_))));
    assert!(matches!(gh_moment_match(&al, 0, 1, &z), Err(Error::DegenerateConditioning(_))));
    assert!(matches!(gh_sample(&p, &mut r), Err(Error::DegenerateConditioning(_))));
}

#[test]
fn gh_sample_given_weight_is_gaussian() {
    let mut r = rng(45);
    let al = random_al(&mut r, vec![2, 2], 0.9);
    let p = gh_conditional_params(&al, 1, 0, &Tensor::vector(vec![0.5, 1.0])).unwrap();
    let s = GhSampler::new(&p).unwrap();
    let w = 1.7;
    let n = 200_000;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| s.sample_given(w, &standard_normals(&mut r, 2)).into_data()).collect();
    let (mu, cov) = moments(&rows);
    for k in 0..2 {
        let want = p.mu.data()[k] + p.m.data()[k] * w;
        assert!((mu[k] - want).abs() < 4.0 * (cov[k][k] / n as f64).sqrt());
    }
    let want: Vec<Vec<f64>> = (0..2).map(|a| (0..2).map(|b| w * p.dispersion.at2(a, b)).collect()).collect();
    assert!(rel_frobenius(&cov, &want) < 0.02);
}

#[test]
fn gh_sample_matches_moment_match() {
    let mut r = rng(46);
    let al = random_al(&mut r, vec![2, 2], 0.9);
    let z = Tensor::vector(vec![0.8, -0.6]);
    let p = gh_conditional_params(&al, 0, 1, &z).unwrap();
    let (mean, cov) = p.moments().unwrap();
    let s = GhSampler::new(&p).unwrap();
    let rows: Vec<Vec<f64>> = (0..1_000_000).map(|_| s.sample(&mut r).into_data()).collect();
    let (mu, c) = moments(&rows);
    assert!(rel_norm(&mu, mean.data()) < 0.05, "{mu:?} vs {mean:?}");
    assert!(rel_frobenius(&c, &cov_rows(&cov)) < 0.05);
}

#[test]
fn gh_symmetric_sample_has_no_skew() {
    let mut r = rng(47);
    let layout = BlockLayout::new(vec![2, 2]).unwrap();
    let al = AsymmetricLaplace::new(Tensor::zeros(&[4]), Tensor::eye(4), layout).unwrap();
    // independent blocks and m = 0 give mu = 0 and a zero skew
    let p = gh_conditional_params(&al, 0, 1, &Tensor::vector(vec![0.6, 0.2])).unwrap();
    let rows: Vec<Vec<f64>> = (0..200_000).map(|_| gh_sample(&p, &mut r).unwrap().into_data()).collect();
    let (_, cov) = moments(&rows);
    for k in 0..2 {
        let sd = cov[k][k].sqrt();
        let sk = common::mean(&rows.iter().map(|y| (y[k] / sd).powi(3)).collect::<Vec<_>>());
        assert!(sk.abs() < 0.05, "skewness {sk}");
    }
}

#[test]
fn gh_moment_match_agrees_with_conditioned_draws() {
    let al = AsymmetricLaplace::new(
        Tensor::vector(vec![0.4, -0.3, 0.5, 0.2]),
        Tensor::matrix(4, 4, vec![1.0, 0.0, 0.0, 0.0, 0.3, 0.9, 0.0, 0.0, 0.4, -0.2, 0.8, 0.0, -0.3, 0.25, 0.1, 0.7]).unwrap(),
        BlockLayout::new(vec![2, 2]).unwrap(),
    )
    .unwrap();
    let z = [0.6, 0.1];
    let kept = eps_ball(&al, &[0, 1], &[2, 3], &z, 0.06, 8_000_000, 48);
    assert!(kept.len() >= 10_000, "{} survivors", kept.len());
    let (mu, c) = moments(&kept);
    let (mean, cov) = gh_moment_match(&al, 0, 1, &Tensor::vector(z.to_vec())).unwrap();
    let em = rel_norm(&mu, mean.data());
    let ec = rel_frobenius(&c, &cov_rows(&cov));
    assert!(em < 0.1 && ec < 0.1, "mean error {em}, covariance error {ec}");

    // exact GH sampling lands on the same conditional mean
    let p = gh_conditional_params(&al, 0, 1, &Tensor::vector(z.to_vec())).unwrap();
    let s = GhSampler::new(&p).unwrap();
    let mut r = rng(49);
    let rows: Vec<Vec<f64>> = (0..200_000).map(|_| s.sample(&mut r).into_data()).collect();
    let (gm, _) = moments(&rows);
    assert!(rel_norm(&gm, &mu) < 0.1);
}

#[test]
fn gh_mixing_order_uses_observed_dimension() {
    // three free coordinates, one observed: the two candidate orders
    // 1 - d_obs/2 = 1/2 and 1 - d_free/2 = -1/2 differ by a factor of two in E[W]
    let al = AsymmetricLaplace::new(
        Tensor::vector(vec![0.5, -0.4, 0.3, 0.6]),
        Tensor::matrix(4, 4, vec![0.9, 0.0, 0.0, 0.0, 0.2, 1.0, 0.0, 0.0, -0.3, 0.3, 0.8, 0.0, 0.4, -0.2, 0.3, 0.9]).unwrap(),
        BlockLayout::new(vec![3, 1]).unwrap(),
    )
    .unwrap();
    let z = [0.35];
    let kept = eps_ball(&al, &[0, 1, 2], &[3], &z, 0.01, 3_000_000, 50);
    assert!(kept.len() >= 10_000, "{} survivors", kept.len());
    let (mu, c) = moments(&kept);

    let p = gh_conditional_params(&al, 0, 1, &Tensor::vector(z.to_vec())).unwrap();
    assert_eq!(p.lambda, 0.5);
    let (mean, cov) = p.moments().unwrap();
    let em = rel_norm(&mu, mean.data());
    let ec = rel_frobenius(&c, &cov_rows(&cov));
    assert!(em < 0.1 && ec < 0.1, "mean error {em}, covariance error {ec}");

    let mut alt = p.clone();
    alt.lambda = -0.5;
    let (_, alt_cov) = alt.moments().unwrap();
    let alt_err = rel_frobenius(&c, &cov_rows(&alt_cov));
    assert!(alt_err > 3.0 * ec, "alternative order should be clearly worse: {alt_err} vs {ec}");
}

#[test]
fn gh_multi_block_conditioning() {
    let mut r = rng(51);
    let al = random_al(&mut r, vec![1, 2, 1], 0.6);
    let (p, layout) =
        gh_conditional_params_multi(&al, &[(0, Tensor::vector(vec![0.4])), (2, Tensor::vector(vec![-0.7]))]).unwrap();
    assert_eq!(layout.extents(), &[2]);
    assert_eq!(p.lambda, 0.0);
    let sigma = al.covariance();
    let want = {
        let g = BlockGaussian::new(Tensor::zeros(&[4]), al.chol().clone(), al.layout().clone(), LowerMask::full(4)).unwrap();
        gmrf::conditional_multi(&g, &[(0, Tensor::vector(vec![0.4])), (2, Tensor::vector(vec![-0.7]))])
            .unwrap()
            .covariance()
    };
    assert!(p.dispersion.max_abs_diff(&want) < 1e-10);
    assert!(submatrix(&sigma, &[1, 2], &[1, 2]).max_abs_diff(&p.dispersion) > 1e-6);
}

#[test]
fn gh_moment_covariance_is_psd() {
    let mut r = rng(52);
    for _ in 0..100 {
        let extents = vec![r.random_range(1..4), r.random_range(1..4)];
        let al = random_al(&mut r, extents.clone(), 2.0);
        let z = random_vec(&mut r, extents[1], 3.0);
        let (_, cov) = gh_moment_match(&al, 0, 1, &z).unwrap();
        let eig = symmetric_eigenvalues(&cov);
        assert!(eig[0] >= -1e-10, "eigenvalues {eig:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prop_ln_bessel_is_finite(v in -8.0f64..8.0, lx in (1e-3f64).ln()..(700.0f64).ln()) {
        let x = lx.exp();
        prop_assert!(ln_bessel_k(v, x).unwrap().is_finite());
        prop_assert!(bessel_ratio(v, x).unwrap().is_finite());
    }

    #[test]
    fn prop_al_draws_are_deterministic(seed in any::<u64>(), skew in 0.0f64..2.0) {
        let al = random_al(&mut rng(seed), vec![2, 1], skew);
        let a = al_draws(&al, 20, seed ^ 1);
        let b = al_draws(&al, 20, seed ^ 1);
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
