//! Generate the 4-modality copula benchmark and check its marginals and rank
//! correlations.

use mrf_mvae::copuladata::{benchmark_split, build_correlation};

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = k as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let m = (ra.len() as f64 - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
    cov / ra.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
}

fn main() -> mrf_mvae::Result<()> {
    let (train, heldout) = benchmark_split(0)?;
    println!("train {} rows, held-out {} rows, {} modalities x {} coordinates", train.rows(), heldout.rows(), train.modalities(), train.dim());
    for j in 0..2 {
        let r = build_correlation(j, 4, 0.9)?;
        println!("coordinate {} correlation row 1: {:?}", j + 1, &r.data()[..4]);
    }
    for m in 0..4 {
        let c = train.column(m, 0);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
        println!("modality {} coordinate 1: mean {mean:.4} (1/2), variance {var:.4} (1/12 = 0.0833)", m + 1);
    }
    let target = 6.0 / std::f64::consts::PI * 0.45f64.asin();
    for j in 0..2 {
        let rs = spearman(&train.column(0, j), &train.column(1, j));
        println!("Spearman between modalities 1 and 2, coordinate {}: {rs:+.4} (|target| {target:.4})", j + 1);
    }
    println!("first row: {:?}", train.row(0));
    Ok(())
}
