//! Dense linear algebra on plain (non-differentiated) square matrices.

use crate::diffcore::{gemm, solve_lower_into, solve_upper_transposed, Tensor};
use crate::error::{Error, Result};

/// Pivots at or below this value are treated as loss of positive definiteness.
pub const PIVOT_TOL: f64 = 1e-12;
/// Symmetry tolerance accepted by [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

fn square_dim(m: &Tensor, what: &str) -> Result<usize> {
    match m.shape() {
        [r, c] if r == c => Ok(*r),
        s => Err(Error::Dimension(format!("{what}: expected a square matrix, got {s:?}"))),
    }
}

/// Lower-triangular `L` with `L L^T = sigma`.
pub fn cholesky(sigma: &Tensor) -> Result<Tensor> {
    let n = square_dim(sigma, "cholesky")?;
    let a = sigma.data();
    for i in 0..n {
        for j in 0..i {
            if (a[i * n + j] - a[j * n + i]).abs() > SYMMETRY_TOL {
                return Err(Error::Contract(format!(
                    "cholesky input is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= PIVOT_TOL || d.is_nan() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(Tensor::from_parts(vec![n, n], l))
}

/// `A B` for rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Dimension(format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
    Ok(Tensor::from_parts(vec![m, n], c))
}

/// `A^T A`.
pub fn gram_t(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut c = vec![0.0; n * n];
    gemm(n, m, n, a.data(), true, a.data(), false, &mut c, false);
    Tensor::from_parts(vec![n, n], c)
}

/// `L L^T`, symmetric by construction.
pub fn outer_lower(l: &Tensor) -> Tensor {
    let n = l.shape()[0];
    let d = l.data();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..=j {
                s += d[i * n + k] * d[j * n + k];
            }
            c[i * n + j] = s;
            c[j * n + i] = s;
        }
    }
    Tensor::from_parts(vec![n, n], c)
}

pub fn matvec(a: &Tensor, x: &[f64]) -> Vec<f64> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    (0..m)
        .map(|i| (0..n).map(|j| a.data()[i * n + j] * x[j]).sum())
        .collect()
}

fn check_triangular(l: &Tensor) -> Result<usize> {
    let n = square_dim(l, "triangular solve")?;
    for i in 0..n {
        let d = l.data()[i * n + i];
        if d.abs() <= PIVOT_TOL || !d.is_finite() {
            return Err(Error::Conditioning(format!(
                "triangular factor has diagonal {d:e} at index {i}"
            )));
        }
    }
    Ok(n)
}

/// `L^{-1} B` for `B` of shape `[n]` or `[n, k]`.
pub fn solve_lower(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = check_triangular(l)?;
    let k = match b.shape() {
        [r] if *r == n => 1,
        [r, k] if *r == n => *k,
        s => return Err(Error::Dimension(format!("solve_lower rhs {s:?} for n = {n}"))),
    };
    let mut x = vec![0.0; n * k];
    solve_lower_into(l.data(), n, b.data(), k, &mut x);
    Ok(Tensor::from_parts(b.shape().to_vec(), x))
}

/// `L^{-T} B` for `B` of shape `[n]` or `[n, k]`.
pub fn solve_lower_t(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = check_triangular(l)?;
    let k = match b.shape() {
        [r] if *r == n => 1,
        [r, k] if *r == n => *k,
        s => return Err(Error::Dimension(format!("solve_lower_t rhs {s:?} for n = {n}"))),
    };
    let mut x = vec![0.0; n * k];
    solve_upper_transposed(l.data(), n, b.data(), k, &mut x);
    Ok(Tensor::from_parts(b.shape().to_vec(), x))
}

/// `(L L^T)^{-1}` from the Cholesky factor, via two triangular solves.
pub fn inverse_from_cholesky(l: &Tensor) -> Result<Tensor> {
    let n = l.shape()[0];
    let linv = solve_lower(l, &Tensor::eye(n))?;
    Ok(gram_t(&linv))
}

/// Principal submatrix on `idx` rows and `jdx` columns.
pub fn submatrix(a: &Tensor, idx: &[usize], jdx: &[usize]) -> Tensor {
    let n = a.shape()[1];
    let data = idx
        .iter()
        .flat_map(|&i| jdx.iter().map(move |&j| (i, j)))
        .map(|(i, j)| a.data()[i * n + j])
        .collect();
    Tensor::from_parts(vec![idx.len(), jdx.len()], data)
}

pub fn symmetrize(a: &Tensor) -> Tensor {
    let n = a.shape()[0];
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a.at2(i, j) + a.at2(j, i));
            out.set2(i, j, v);
            out.set2(j, i, v);
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Tensor) -> Vec<f64> {
    let n = a.shape()[0];
    let mut m = symmetrize(a).into_data();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}
