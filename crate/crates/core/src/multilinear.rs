//! Dense tensors with first-index-fastest linearization, mode unfoldings,
//! Khatri-Rao products and the tensors attached to two-layer blocks.
//!
//! Element `(i_1, ..., i_N)` (0-based) lives at `sum_n i_n * prod_{l<n} d_l`,
//! and the mode-`m` unfolding puts it in column
//! `sum_{n != m} i_n * prod_{l<n, l != m} d_l`.

use nalgebra::DMatrix;

use crate::error::{check_finite, dim_err, Error, Result};
use crate::polyspace::PolyVec;

/// Largest number of entries a tensor may hold.
pub const MAX_TENSOR_ENTRIES: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn checked_size(shape: &[usize]) -> Result<usize> {
    let size = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::TooLarge("tensor size overflows".into()))?;
    if size > MAX_TENSOR_ENTRIES {
        return Err(Error::TooLarge(format!(
            "tensor with {size} entries exceeds the limit of {MAX_TENSOR_ENTRIES}"
        )));
    }
    Ok(size)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument("tensor dimensions must be positive".into()));
        }
        let size = checked_size(&shape)?;
        if size != data.len() {
            return dim_err(format!("shape holds {size} entries, data has {}", data.len()));
        }
        check_finite(&data, "tensor entries")?;
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let size = checked_size(&shape)?;
        Tensor::new(shape, vec![0.0; size])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        let mut off = 0;
        let mut stride = 1;
        for (i, d) in idx.iter().zip(&self.shape) {
            off += i * stride;
            stride *= d;
        }
        off
    }

    /// Entry at a 0-based multi-index.
    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.order(), "index order mismatch");
        self.data[self.offset(idx)]
    }

    /// Outer product `a_1 o a_2 o ... o a_N`.
    pub fn outer(vectors: &[&[f64]]) -> Result<Self> {
        let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        let mut t = Tensor::zeros(shape)?;
        let mut idx = vec![0usize; vectors.len()];
        for v in t.data.iter_mut() {
            *v = idx.iter().zip(vectors).map(|(&i, a)| a[i]).product();
            advance(&mut idx, &t.shape);
        }
        Ok(t)
    }
}

/// Increments a first-index-fastest multi-index in place.
fn advance(idx: &mut [usize], shape: &[usize]) {
    for (i, d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < *d {
            return;
        }
        *i = 0;
    }
}

fn check_mode(t: &Tensor, mode: usize) -> Result<()> {
    if mode == 0 || mode > t.order() {
        return Err(Error::InvalidArgument(format!(
            "mode {mode} out of range 1..={}",
            t.order()
        )));
    }
    Ok(())
}

/// Mode-`mode` unfolding (1-based mode).
pub fn unfold(t: &Tensor, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(t, mode)?;
    let m = mode - 1;
    let rows = t.shape[m];
    let cols = t.data.len() / rows;
    let mut out = DMatrix::zeros(rows, cols);
    let mut idx = vec![0usize; t.order()];
    for &v in &t.data {
        let mut col = 0;
        let mut stride = 1;
        for (n, (&i, &d)) in idx.iter().zip(&t.shape).enumerate() {
            if n != m {
                col += i * stride;
                stride *= d;
            }
        }
        out[(idx[m], col)] = v;
        advance(&mut idx, &t.shape);
    }
    Ok(out)
}

/// Inverse of [`unfold`] for a target `shape`.
pub fn fold(matrix: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<Tensor> {
    let mut t = Tensor::zeros(shape.to_vec())?;
    check_mode(&t, mode)?;
    let m = mode - 1;
    if matrix.nrows() != shape[m] || matrix.nrows() * matrix.ncols() != t.data.len() {
        return dim_err("matrix shape does not match the tensor shape for this mode");
    }
    let mut idx = vec![0usize; shape.len()];
    for v in t.data.iter_mut() {
        let mut col = 0;
        let mut stride = 1;
        for (n, (&i, &d)) in idx.iter().zip(shape).enumerate() {
            if n != m {
                col += i * stride;
                stride *= d;
            }
        }
        *v = matrix[(idx[m], col)];
        advance(&mut idx, shape);
    }
    check_finite(&t.data, "folded matrix")?;
    Ok(t)
}

/// Column-wise Kronecker product; row `i_a * rows_b + i_b` of column `j`
/// holds `A[i_a, j] * B[i_b, j]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return dim_err(format!("column counts differ: {} vs {}", a.ncols(), b.ncols()));
    }
    let rows = a
        .nrows()
        .checked_mul(b.nrows())
        .filter(|r| r.saturating_mul(a.ncols()) <= MAX_TENSOR_ENTRIES)
        .ok_or_else(|| Error::TooLarge("Khatri-Rao product too large".into()))?;
    Ok(DMatrix::from_fn(rows, a.ncols(), |i, j| {
        a[(i / b.nrows(), j)] * b[(i % b.nrows(), j)]
    }))
}

/// `A ⊙ A ⊙ ... ⊙ A` with `k` factors.
pub fn khatri_rao_power(a: &DMatrix<f64>, k: u32) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("Khatri-Rao power needs k >= 1".into()));
    }
    let mut acc = a.clone();
    for _ in 1..k {
        acc = khatri_rao(&acc, a)?;
    }
    Ok(acc)
}

/// The partially symmetric tensor `[[W2, W1^T, ..., W1^T]]` of a two-layer
/// block with activation degree `r`: shape `d_2 x d_0 x ... x d_0`.
pub fn tensor_from_block(w1: &DMatrix<f64>, w2: &DMatrix<f64>, r: u32) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::InvalidArgument("activation degree must be at least 1".into()));
    }
    if w2.ncols() != w1.nrows() {
        return dim_err("W2 column count must equal W1 row count");
    }
    let d0 = w1.ncols();
    let mut shape = vec![w2.nrows()];
    shape.extend(std::iter::repeat_n(d0, r as usize));
    checked_size(&shape)?;
    let unfolded = w2 * khatri_rao_power(&w1.transpose(), r)?.transpose();
    // column-major storage of the mode-1 unfolding is the tensor linearization
    Tensor::new(shape, unfolded.as_slice().to_vec())
}

/// Symmetric coefficient tensor of a homogeneous polynomial vector: entry
/// `(k, j_1, ..., j_r)` is the coefficient of the monomial with exponents
/// counting the `j`'s, divided by its multinomial weight. Inverse of the
/// contraction that [`tensor_from_block`] followed by expansion performs.
pub fn tensor_from_poly(p: &PolyVec) -> Result<Tensor> {
    if !p.homogeneous() {
        return Err(Error::InvalidArgument("coefficient tensors need a homogeneous polynomial".into()));
    }
    let (d2, d0, r) = (p.n_out(), p.n_vars(), p.degree() as usize);
    let mut shape = vec![d2];
    shape.extend(std::iter::repeat_n(d0, r));
    let mut t = Tensor::zeros(shape)?;
    let basis = p.basis()?;
    let factorial = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let mut idx = vec![0usize; r];
    let mut exps = vec![0u32; d0];
    let mut lin = 0;
    loop {
        exps.iter_mut().for_each(|e| *e = 0);
        idx.iter().for_each(|&j| exps[j] += 1);
        let col = basis.index_of(&exps).expect("degree-r exponents lie in the basis");
        let weight = factorial(r as u32) / exps.iter().map(|&e| factorial(e)).product::<f64>();
        for k in 0..d2 {
            t.data[k + d2 * lin] = p.coeffs()[(k, col)] / weight;
        }
        lin += 1;
        if r == 0 || !advance_digits(&mut idx, d0) {
            break;
        }
    }
    Ok(t)
}

fn advance_digits(idx: &mut [usize], base: usize) -> bool {
    for i in idx.iter_mut() {
        *i += 1;
        if *i < base {
            return true;
        }
        *i = 0;
    }
    false
}

/// Groups modes `2..=s+1` and `s+2..=s+t+1` of an order-`(s+t+1)` tensor.
pub fn flatten_st(f: &Tensor, s: usize, t: usize) -> Result<Tensor> {
    if s == 0 || t == 0 || s + t + 1 != f.order() {
        return Err(Error::InvalidArgument(format!(
            "need s, t >= 1 with s + t = {}, got s = {s}, t = {t}",
            f.order() - 1
        )));
    }
    let g1: usize = f.shape[1..=s].iter().product();
    let g2: usize = f.shape[s + 1..].iter().product();
    Tensor::new(vec![f.shape[0], g1, g2], f.data.clone())
}

/// Order-3 reshaping for a single output with `s = floor((r-1)/2)`. The
/// first mode merges the output index with one x-mode (`r` odd) or two
/// (`r` even), x-indices fastest; the other modes take `s` x-modes each.
pub fn flatten_single_output(f: &Tensor, r: u32) -> Result<Tensor> {
    if r < 3 {
        return Err(Error::InvalidArgument("single-output flattening needs r >= 3".into()));
    }
    let r = r as usize;
    if f.order() != r + 1 {
        return dim_err(format!("tensor of order {} is not a degree-{r} block", f.order()));
    }
    let d2 = f.shape[0];
    let d0 = f.shape[1];
    if f.shape[1..].iter().any(|&d| d != d0) {
        return dim_err("x-modes of a block tensor must share one dimension");
    }
    let s = (r - 1) / 2;
    let lead = r - 2 * s; // x-modes merged into the first mode: 1 or 2
    let a_dim = d0.pow(lead as u32) * d2;
    let b_dim = d0.pow(s as u32);
    let mut out = vec![0.0; f.data.len()];
    let mut idx = vec![0usize; f.order()];
    for &v in &f.data {
        let group = |range: std::ops::Range<usize>| -> usize {
            idx[range].iter().rev().fold(0, |acc, &i| acc * d0 + i)
        };
        let a = group(1..1 + lead) + d0.pow(lead as u32) * idx[0];
        let b = group(1 + lead..1 + lead + s);
        let c = group(1 + lead + s..r + 1);
        out[a + a_dim * (b + b_dim * c)] = v;
        advance(&mut idx, &f.shape);
    }
    Tensor::new(vec![a_dim, b_dim, b_dim], out)
}
