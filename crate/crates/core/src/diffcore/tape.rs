//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. [`Tape::backward`] then walks the nodes in reverse insertion
//! order, which is a reverse topological order because inputs always precede
//! their consumers.
//!
//! Binary elementwise operations accept one operand whose shape equals the
//! other's shape with the leading (batch) extent removed, or a rank-0 scalar.
//! Batched matrix products and triangular solves accept a batch extent of one
//! on either side.

use std::cell::{Ref, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Slice(usize, usize, usize),
    SolveLower(usize, usize),
    QuadForm(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of primitive operations for one differentiation pass.
///
/// A tape is confined to a single thread; the parameters it reads are cloned
/// in when registered, so later mutation of the source tensors does not
/// affect recorded values.
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("tape", &self.tape.id)
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Anonymous differentiable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Named differentiable input. Registering the same name twice returns
    /// the first handle, so shared weights accumulate a single gradient.
    pub fn param(&self, name: &str, value: &Tensor) -> Var<'_> {
        if let Some(&idx) = self.params.borrow().get(name) {
            return Var { tape: self, idx };
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.borrow_mut().insert(name.to_string(), v.idx);
        v
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if loss.tape.id != self.id {
            return Err(Error::Contract("loss was not recorded on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.idx].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.idx].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(vec![1.0]);

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            backprop_node(&nodes, i, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaves[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
            }
        }

        let params = self
            .params
            .borrow()
            .iter()
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            tape_id: self.id,
            leaves,
            shapes,
            params,
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape_id: usize,
    leaves: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, usize>,
}

impl Gradients {
    /// Gradient with respect to a leaf. Variables that did not participate,
    /// or that live on a different tape, get an all-zero tensor.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        if v.tape.id != self.tape_id {
            return Tensor::zeros(&v.shape());
        }
        match self.leaves.get(v.idx).and_then(|g| g.clone()) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.idx]),
        }
    }

    /// Gradient of every named parameter on the tape.
    pub fn by_name(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &idx)| {
                let g = self.leaves[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[idx]));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        let &idx = self.params.get(name)?;
        Some(
            self.leaves[idx]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[idx])),
        )
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

/// Reduce a gradient of the output shape down to an operand that was
/// broadcast along the leading extent (or is a scalar).
fn reduce_broadcast(g: &[f64], n_small: usize) -> Vec<f64> {
    if g.len() == n_small {
        return g.to_vec();
    }
    let mut out = vec![0.0; n_small];
    for (i, v) in g.iter().enumerate() {
        out[i % n_small] += v;
    }
    out
}

fn backprop_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let needs = |j: usize| nodes[j].needs_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if needs(*a) {
                accumulate(&mut grads[*a], reduce_broadcast(g, nodes[*a].value.len()));
            }
            if needs(*b) {
                let mut gb = reduce_broadcast(g, nodes[*b].value.len());
                if sign < 0.0 {
                    gb.iter_mut().for_each(|x| *x = -*x);
                }
                accumulate(&mut grads[*b], gb);
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            if needs(*a) {
                let nb = bv.len();
                let full: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk * bv[k % nb]).collect();
                accumulate(&mut grads[*a], reduce_broadcast(&full, av.len()));
            }
            if needs(*b) {
                let na = av.len();
                let full: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk * av[k % na]).collect();
                accumulate(&mut grads[*b], reduce_broadcast(&full, bv.len()));
            }
        }
        Op::Scale(a, c) => {
            accumulate(&mut grads[*a], g.iter().map(|x| x * c).collect());
        }
        Op::Offset(a) | Op::Reshape(a) => accumulate(&mut grads[*a], g.to_vec()),
        Op::Relu(a) => {
            let av = nodes[*a].value.data();
            let ga = g
                .iter()
                .zip(av)
                .map(|(gk, &x)| if x > 0.0 { *gk } else { 0.0 })
                .collect();
            accumulate(&mut grads[*a], ga);
        }
        Op::Exp(a) => {
            let out = node.value.data();
            accumulate(&mut grads[*a], g.iter().zip(out).map(|(gk, y)| gk * y).collect());
        }
        Op::Ln(a) => {
            let av = nodes[*a].value.data();
            accumulate(&mut grads[*a], g.iter().zip(av).map(|(gk, x)| gk / x).collect());
        }
        Op::Square(a) => {
            let av = nodes[*a].value.data();
            accumulate(
                &mut grads[*a],
                g.iter().zip(av).map(|(gk, x)| 2.0 * gk * x).collect(),
            );
        }
        Op::Abs(a) => {
            let av = nodes[*a].value.data();
            accumulate(
                &mut grads[*a],
                g.iter()
                    .zip(av)
                    .map(|(gk, &x)| if x > 0.0 { *gk } else if x < 0.0 { -gk } else { 0.0 })
                    .collect(),
            );
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.len();
            accumulate(&mut grads[*a], vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.len();
            accumulate(&mut grads[*a], vec![g[0] / n as f64; n]);
        }
        Op::SumLast(a) => {
            let av = &nodes[*a].value;
            let last = *av.shape().last().unwrap_or(&1);
            let mut ga = vec![0.0; av.len()];
            for (r, gr) in g.iter().enumerate() {
                ga[r * last..(r + 1) * last].iter_mut().for_each(|x| *x = *gr);
            }
            accumulate(&mut grads[*a], ga);
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (ba, m, k) = batch_dims(av.shape());
            let (bb, _, n) = batch_dims(bv.shape());
            let batch = ba.max(bb);
            if needs(*a) {
                let mut ga = vec![0.0; av.len()];
                for t in 0..batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let bt = &bv.data()[(t % bb) * k * n..(t % bb + 1) * k * n];
                    let at = (t % ba) * m * k;
                    gemm(m, n, k, gt, false, bt, true, &mut ga[at..at + m * k], true);
                }
                accumulate(&mut grads[*a], ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0; bv.len()];
                for t in 0..batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let at = &av.data()[(t % ba) * m * k..(t % ba + 1) * m * k];
                    let bt = (t % bb) * k * n;
                    gemm(k, m, n, at, true, gt, false, &mut gb[bt..bt + k * n], true);
                }
                accumulate(&mut grads[*b], gb);
            }
        }
        Op::Transpose(a) => {
            let shape = node.value.shape();
            let (batch, r, c) = batch_dims(shape);
            // g has the output layout [.., r, c]; transposing back gives [.., c, r].
            let mut ga = vec![0.0; g.len()];
            for t in 0..batch {
                let off = t * r * c;
                for p in 0..r {
                    for q in 0..c {
                        ga[off + q * r + p] = g[off + p * c + q];
                    }
                }
            }
            accumulate(&mut grads[*a], ga);
        }
        Op::Concat(parts) => {
            let rows = node.value.len() / node.value.shape().last().copied().unwrap_or(1);
            let total = *node.value.shape().last().unwrap_or(&1);
            let mut offset = 0;
            for &p in parts {
                let w = *nodes[p].value.shape().last().unwrap_or(&1);
                if needs(p) {
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(&mut grads[p], gp);
                }
                offset += w;
            }
        }
        Op::Slice(a, start, end) => {
            let av = &nodes[*a].value;
            let last = *av.shape().last().unwrap_or(&1);
            let w = end - start;
            let rows = av.len() / last;
            let mut ga = vec![0.0; av.len()];
            for r in 0..rows {
                ga[r * last + start..r * last + end].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            accumulate(&mut grads[*a], ga);
        }
        Op::SolveLower(l, b) => {
            let (lv, bv) = (&nodes[*l].value, &nodes[*b].value);
            let x = node.value.data();
            let (bl, n, _) = batch_dims(lv.shape());
            let (bb, _, k) = batch_dims(bv.shape());
            let batch = bl.max(bb);
            // gb = L^{-T} g ; gl = -tril(gb x^T)
            let mut gb_full = vec![0.0; batch * n * k];
            for t in 0..batch {
                let lt = &lv.data()[(t % bl) * n * n..(t % bl + 1) * n * n];
                let gt = &g[t * n * k..(t + 1) * n * k];
                let out = &mut gb_full[t * n * k..(t + 1) * n * k];
                solve_upper_transposed(lt, n, gt, k, out);
            }
            if needs(*l) {
                let mut gl = vec![0.0; lv.len()];
                for t in 0..batch {
                    let gbt = &gb_full[t * n * k..(t + 1) * n * k];
                    let xt = &x[t * n * k..(t + 1) * n * k];
                    let off = (t % bl) * n * n;
                    for r in 0..n {
                        for c in 0..=r {
                            let mut s = 0.0;
                            for q in 0..k {
                                s += gbt[r * k + q] * xt[c * k + q];
                            }
                            gl[off + r * n + c] -= s;
                        }
                    }
                }
                accumulate(&mut grads[*l], gl);
            }
            if needs(*b) {
                accumulate(&mut grads[*b], reduce_broadcast(&gb_full, bv.len()));
            }
        }
        Op::QuadForm(x, a) => {
            let (xv, av) = (&nodes[*x].value, &nodes[*a].value);
            let n = av.shape()[0];
            let rows = xv.len() / n;
            let am = av.data();
            if needs(*x) {
                let mut gx = vec![0.0; xv.len()];
                for r in 0..rows {
                    let xr = &xv.data()[r * n..(r + 1) * n];
                    for p in 0..n {
                        let mut s = 0.0;
                        for q in 0..n {
                            s += (am[p * n + q] + am[q * n + p]) * xr[q];
                        }
                        gx[r * n + p] = g[r] * s;
                    }
                }
                accumulate(&mut grads[*x], gx);
            }
            if needs(*a) {
                let mut ga = vec![0.0; n * n];
                for r in 0..rows {
                    let xr = &xv.data()[r * n..(r + 1) * n];
                    for p in 0..n {
                        for q in 0..n {
                            ga[p * n + q] += g[r] * xr[p] * xr[q];
                        }
                    }
                }
                accumulate(&mut grads[*a], ga);
            }
        }
    }
}

/// (batch, rows, cols) view of a rank-2 or rank-3 shape.
fn batch_dims(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        2 => (1, shape[0], shape[1]),
        3 => (shape[0], shape[1], shape[2]),
        _ => panic!("expected rank 2 or 3, got {shape:?}"),
    }
}

/// `c (+)= op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
/// `a_t` means `a` is stored `k x m`; `b_t` means `b` is stored `n x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strided kernel reads or
    // writes, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Solve `L X = B` for lower-triangular `L` (`n x n`) and `B` (`n x k`).
pub(crate) fn solve_lower_into(l: &[f64], n: usize, b: &[f64], k: usize, x: &mut [f64]) {
    for c in 0..k {
        for r in 0..n {
            let mut s = b[r * k + c];
            for q in 0..r {
                s -= l[r * n + q] * x[q * k + c];
            }
            x[r * k + c] = s / l[r * n + r];
        }
    }
}

/// Solve `L^T X = G` for lower-triangular `L`.
pub(crate) fn solve_upper_transposed(l: &[f64], n: usize, g: &[f64], k: usize, x: &mut [f64]) {
    for c in 0..k {
        for r in (0..n).rev() {
            let mut s = g[r * k + c];
            for q in r + 1..n {
                s -= l[q * n + r] * x[q * k + c];
            }
            x[r * k + c] = s / l[r * n + r];
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let suffix = |big: &[usize], small: &[usize]| !big.is_empty() && &big[1..] == small;
    if b.is_empty() || suffix(a, b) {
        Some(a.to_vec())
    } else if a.is_empty() || suffix(b, a) {
        Some(b.to_vec())
    } else {
        None
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.idx].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value; panics if the variable has more than one element.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn needs(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].needs_grad
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert_eq!(
            self.tape.id, other.tape.id,
            "variables from different tapes cannot be combined"
        );
    }

    fn binary(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op, name: &str) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (out, needs) = {
            let a = self.value();
            let b = other.value();
            let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                Error::Dimension(format!("{name}: {:?} vs {:?}", a.shape(), b.shape()))
            })?;
            let n: usize = shape.iter().product();
            let (ad, bd) = (a.data(), b.data());
            let (na, nb) = (ad.len(), bd.len());
            let data = (0..n).map(|k| f(ad[k % na], bd[k % nb])).collect();
            (Tensor::from_parts(shape, data), self.needs() || other.needs())
        };
        Ok(self.tape.push(out, op, needs))
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let out = self.value().map(f);
        let needs = self.needs();
        self.tape.push(out, op, needs)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |a, b| a + b, Op::Add(self.idx, other.idx), "add")
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |a, b| a - b, Op::Sub(self.idx, other.idx), "sub")
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |a, b| a * b, Op::Mul(self.idx, other.idx), "mul")
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(|x| x * c, Op::Scale(self.idx, c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(|x| x + c, Op::Offset(self.idx))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu(self.idx))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.idx))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, Op::Ln(self.idx))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, Op::Square(self.idx))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, Op::Abs(self.idx))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        let needs = self.needs();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.idx), needs)
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let s = v.sum() / v.len() as f64;
        drop(v);
        let needs = self.needs();
        self.tape.push(Tensor::scalar(s), Op::Mean(self.idx), needs)
    }

    /// Sum over the last axis.
    pub fn sum_last(self) -> Var<'t> {
        let out = {
            let v = self.value();
            let shape = v.shape();
            let last = *shape.last().unwrap_or(&1);
            let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
            let data = v.data().chunks(last.max(1)).map(|c| c.iter().sum()).collect();
            Tensor::from_parts(out_shape, data)
        };
        let needs = self.needs();
        self.tape.push(out, Op::SumLast(self.idx), needs)
    }

    /// Matrix product; rank-3 operands are batched, with batch extent one
    /// broadcasting against the other side.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let out = {
            let (a, b) = (self.value(), other.value());
            let (ra, rb) = (a.rank(), b.rank());
            if !(2..=3).contains(&ra) || !(2..=3).contains(&rb) {
                return Err(Error::Dimension(format!(
                    "matmul expects rank 2 or 3, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (ba, m, k) = batch_dims(a.shape());
            let (bb, k2, n) = batch_dims(b.shape());
            if k != k2 || (ba != bb && ba != 1 && bb != 1) {
                return Err(Error::Dimension(format!(
                    "matmul {:?} x {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let batch = ba.max(bb);
            let mut data = vec![0.0; batch * m * n];
            for t in 0..batch {
                let at = &a.data()[(t % ba) * m * k..(t % ba + 1) * m * k];
                let bt = &b.data()[(t % bb) * k * n..(t % bb + 1) * k * n];
                gemm(m, k, n, at, false, bt, false, &mut data[t * m * n..(t + 1) * m * n], false);
            }
            let shape = if ra == 2 && rb == 2 { vec![m, n] } else { vec![batch, m, n] };
            Tensor::from_parts(shape, data)
        };
        let needs = self.needs() || other.needs();
        Ok(self.tape.push(out, Op::MatMul(self.idx, other.idx), needs))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(self) -> Result<Var<'t>> {
        let out = {
            let v = self.value();
            if !(2..=3).contains(&v.rank()) {
                return Err(Error::Dimension(format!("transpose of {:?}", v.shape())));
            }
            let (batch, r, c) = batch_dims(v.shape());
            let mut data = vec![0.0; v.len()];
            for t in 0..batch {
                let off = t * r * c;
                for p in 0..r {
                    for q in 0..c {
                        data[off + q * r + p] = v.data()[off + p * c + q];
                    }
                }
            }
            let shape = if v.rank() == 2 { vec![c, r] } else { vec![batch, c, r] };
            Tensor::from_parts(shape, data)
        };
        let needs = self.needs();
        Ok(self.tape.push(out, Op::Transpose(self.idx), needs))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().clone().reshape(shape)?;
        let needs = self.needs();
        Ok(self.tape.push(out, Op::Reshape(self.idx), needs))
    }

    /// Concatenate along the last axis; leading extents must agree.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tape = first.tape;
        let out = {
            let values: Vec<_> = parts
                .iter()
                .map(|p| {
                    first.same_tape(p);
                    p.value()
                })
                .collect();
            let lead = values[0].shape()[..values[0].rank() - 1].to_vec();
            let mut widths = Vec::with_capacity(values.len());
            for v in &values {
                if v.rank() == 0 || v.shape()[..v.rank() - 1] != lead[..] {
                    return Err(Error::Dimension(format!(
                        "concat: leading extents {:?} vs {:?}",
                        lead,
                        v.shape()
                    )));
                }
                widths.push(*v.shape().last().unwrap());
            }
            let total: usize = widths.iter().sum();
            let rows: usize = lead.iter().product();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (v, &w) in values.iter().zip(&widths) {
                    data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead;
            shape.push(total);
            Tensor::from_parts(shape, data)
        };
        let needs = parts.iter().any(|p| p.needs());
        let idx = parts.iter().map(|p| p.idx).collect();
        Ok(tape.push(out, Op::Concat(idx), needs))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(self, start: usize, end: usize) -> Result<Var<'t>> {
        let out = {
            let v = self.value();
            let last = *v.shape().last().unwrap_or(&0);
            if start > end || end > last || v.rank() == 0 {
                return Err(Error::Dimension(format!(
                    "slice {start}..{end} of {:?}",
                    v.shape()
                )));
            }
            let rows = v.len() / last.max(1);
            let w = end - start;
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                data.extend_from_slice(&v.data()[r * last + start..r * last + end]);
            }
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = w;
            Tensor::from_parts(shape, data)
        };
        let needs = self.needs();
        Ok(self.tape.push(out, Op::Slice(self.idx, start, end), needs))
    }

    /// `L^{-1} B` for lower-triangular `self = L`. Only the lower triangle of
    /// `L` is read, and only the lower triangle receives gradient.
    pub fn solve_lower(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let out = {
            let (l, b) = (self.value(), rhs.value());
            if !(2..=3).contains(&l.rank()) || !(2..=3).contains(&b.rank()) {
                return Err(Error::Dimension(format!(
                    "solve_lower {:?} \\ {:?}",
                    l.shape(),
                    b.shape()
                )));
            }
            let (bl, n, n2) = batch_dims(l.shape());
            let (bb, nb, k) = batch_dims(b.shape());
            if n != n2 || n != nb || (bl != bb && bl != 1 && bb != 1) {
                return Err(Error::Dimension(format!(
                    "solve_lower {:?} \\ {:?}",
                    l.shape(),
                    b.shape()
                )));
            }
            let batch = bl.max(bb);
            let mut data = vec![0.0; batch * n * k];
            for t in 0..batch {
                let lt = &l.data()[(t % bl) * n * n..(t % bl + 1) * n * n];
                let bt = &b.data()[(t % bb) * n * k..(t % bb + 1) * n * k];
                solve_lower_into(lt, n, bt, k, &mut data[t * n * k..(t + 1) * n * k]);
            }
            let shape = if l.rank() == 2 && b.rank() == 2 { vec![n, k] } else { vec![batch, n, k] };
            Tensor::from_parts(shape, data)
        };
        let needs = self.needs() || rhs.needs();
        Ok(self.tape.push(out, Op::SolveLower(self.idx, rhs.idx), needs))
    }

    /// Row-wise `x^T A x` for `self = x` of shape `[n]` or `[B, n]`.
    pub fn quad_form(self, a: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&a);
        let out = {
            let (x, am) = (self.value(), a.value());
            if am.rank() != 2 || am.shape()[0] != am.shape()[1] {
                return Err(Error::Dimension(format!("quad_form matrix {:?}", am.shape())));
            }
            let n = am.shape()[0];
            if x.rank() == 0 || x.rank() > 2 || *x.shape().last().unwrap() != n {
                return Err(Error::Dimension(format!(
                    "quad_form vector {:?} against {:?}",
                    x.shape(),
                    am.shape()
                )));
            }
            let rows = x.len() / n;
            let data = (0..rows)
                .map(|r| {
                    let xr = &x.data()[r * n..(r + 1) * n];
                    let mut s = 0.0;
                    for p in 0..n {
                        for q in 0..n {
                            s += xr[p] * am.data()[p * n + q] * xr[q];
                        }
                    }
                    s
                })
                .collect();
            let shape = if x.rank() == 1 { vec![] } else { vec![rows] };
            Tensor::from_parts(shape, data)
        };
        let needs = self.needs() || a.needs();
        Ok(self.tape.push(out, Op::QuadForm(self.idx, a.idx), needs))
    }
}
