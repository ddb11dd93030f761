//! Dense polynomial vectors over a fixed monomial basis.
//!
//! Monomials are ordered by total degree (ascending) and, inside one degree,
//! lexicographically descending in the exponent vector, so for two variables
//! and degree 2 the order is `x1^2, x1 x2, x2^2`. A homogeneous basis of degree
//! `r` is exactly the degree-`r` block of the inhomogeneous basis of degree
//! `r`; the two layouts therefore share indices on that block.

use nalgebra::DMatrix;

use crate::error::{check_finite, dim_err, Error, Result};

/// Hard cap on the number of monomials in any basis built by this crate.
pub const MAX_BASIS_SIZE: usize = 4_000_000;

/// Binomial coefficient `C(n, k)`, or `None` on overflow of `usize`.
pub fn binomial(n: usize, k: usize) -> Option<usize> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    usize::try_from(acc).ok()
}

/// Number of monomials of total degree exactly `degree` in `n_vars` variables.
pub fn hom_basis_size(n_vars: usize, degree: u32) -> Result<usize> {
    if n_vars == 0 {
        return Err(Error::InvalidArgument("n_vars must be at least 1".into()));
    }
    let d = degree as usize;
    binomial(n_vars + d - 1, d)
        .ok_or_else(|| Error::TooLarge(format!("C({}, {}) overflows", n_vars + d - 1, d)))
}

/// Number of basis monomials for a homogeneous (degree exactly `degree`) or
/// inhomogeneous (degree at most `degree`) polynomial space.
pub fn basis_size(n_vars: usize, degree: u32, homogeneous: bool) -> Result<usize> {
    if homogeneous {
        hom_basis_size(n_vars, degree)
    } else {
        hom_basis_size(n_vars + 1, degree)
    }
}

fn push_degree(n: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == n {
        prefix.push(d);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=d).rev() {
        prefix.push(e);
        push_degree(n, d - e, prefix, out);
        prefix.pop();
    }
}

/// All exponent vectors of total degree `degree` in lexicographically
/// descending order.
pub fn monomials_of_degree(n_vars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if n_vars == 0 {
        return out;
    }
    push_degree(n_vars, degree, &mut Vec::with_capacity(n_vars), &mut out);
    out
}

/// Enumerated monomial basis with constant-time ranking.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    n_vars: usize,
    degree: u32,
    homogeneous: bool,
    monomials: Vec<Vec<u32>>,
    /// `counts[v][d]` = number of monomials of degree `d` in `v` variables.
    counts: Vec<Vec<usize>>,
    /// Start index of each degree block (inhomogeneous layout only).
    offsets: Vec<usize>,
}

impl MonomialBasis {
    pub fn new(n_vars: usize, degree: u32, homogeneous: bool) -> Result<Self> {
        let size = basis_size(n_vars, degree, homogeneous)?;
        if size > MAX_BASIS_SIZE {
            return Err(Error::TooLarge(format!(
                "basis of {size} monomials exceeds the limit of {MAX_BASIS_SIZE}"
            )));
        }
        let d = degree as usize;
        let mut counts = vec![vec![0usize; d + 1]; n_vars + 1];
        counts[0][0] = 1;
        for v in 1..=n_vars {
            for k in 0..=d {
                // monomials of degree k in v vars = sum over exponent of the first var
                counts[v][k] = (0..=k).map(|e| counts[v - 1][k - e]).sum();
            }
        }
        let mut monomials = Vec::with_capacity(size);
        let mut offsets = Vec::with_capacity(d + 2);
        if homogeneous {
            offsets.push(0);
            monomials.extend(monomials_of_degree(n_vars, degree));
            offsets.push(monomials.len());
        } else {
            for k in 0..=degree {
                offsets.push(monomials.len());
                monomials.extend(monomials_of_degree(n_vars, k));
            }
            offsets.push(monomials.len());
        }
        Ok(MonomialBasis {
            n_vars,
            degree,
            homogeneous,
            monomials,
            counts,
            offsets,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomial_at(&self, i: usize) -> &[u32] {
        &self.monomials[i]
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    /// Index range occupied by the monomials of total degree `k`.
    pub fn degree_range(&self, k: u32) -> std::ops::Range<usize> {
        if self.homogeneous {
            if k == self.degree {
                0..self.monomials.len()
            } else {
                0..0
            }
        } else if k <= self.degree {
            self.offsets[k as usize]..self.offsets[k as usize + 1]
        } else {
            0..0
        }
    }

    /// Position of `exps` in the basis, or `None` if it is not a member.
    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        if exps.len() != self.n_vars {
            return None;
        }
        let total: u32 = exps.iter().sum();
        if total > self.degree || (self.homogeneous && total != self.degree) {
            return None;
        }
        let base = if self.homogeneous {
            0
        } else {
            self.offsets[total as usize]
        };
        Some(base + self.rank_within_degree(exps, total))
    }

    fn rank_within_degree(&self, exps: &[u32], total: u32) -> usize {
        let n = self.n_vars;
        let mut rem = total as usize;
        let mut rank = 0usize;
        for (k, &a) in exps.iter().enumerate().take(n - 1) {
            let a = a as usize;
            let tail_vars = n - k - 1;
            // every monomial with a larger exponent at position k comes first
            for e in (a + 1)..=rem {
                rank += self.counts[tail_vars][rem - e];
            }
            rem -= a;
        }
        rank
    }
}

/// A vector of `n_out` polynomials stored as a dense coefficient matrix whose
/// columns follow the basis order of [`MonomialBasis`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVec {
    n_vars: usize,
    degree: u32,
    homogeneous: bool,
    coeffs: DMatrix<f64>,
}

impl PolyVec {
    pub fn new(n_vars: usize, degree: u32, homogeneous: bool, coeffs: DMatrix<f64>) -> Result<Self> {
        if n_vars == 0 {
            return Err(Error::InvalidArgument("n_vars must be at least 1".into()));
        }
        if coeffs.nrows() == 0 {
            return Err(Error::InvalidArgument("a PolyVec needs at least one output".into()));
        }
        let size = basis_size(n_vars, degree, homogeneous)?;
        if coeffs.ncols() != size {
            return dim_err(format!(
                "coefficient matrix has {} columns, basis has {size}",
                coeffs.ncols()
            ));
        }
        check_finite(coeffs.as_slice(), "polynomial coefficients")?;
        Ok(PolyVec {
            n_vars,
            degree,
            homogeneous,
            coeffs,
        })
    }

    pub fn zeros(n_vars: usize, degree: u32, homogeneous: bool, n_out: usize) -> Result<Self> {
        let size = basis_size(n_vars, degree, homogeneous)?;
        PolyVec::new(n_vars, degree, homogeneous, DMatrix::zeros(n_out, size))
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn n_out(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DMatrix<f64> {
        self.coeffs
    }

    pub fn basis(&self) -> Result<MonomialBasis> {
        MonomialBasis::new(self.n_vars, self.degree, self.homogeneous)
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Max-norm of the coefficient difference; errors if the layouts differ.
    pub fn max_abs_diff(&self, other: &PolyVec) -> Result<f64> {
        self.check_same_space(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Equality up to `rel_tol` times the larger coefficient max-norm (at least 1).
    pub fn approx_eq(&self, other: &PolyVec, rel_tol: f64) -> bool {
        match self.max_abs_diff(other) {
            Ok(d) => d <= rel_tol * self.max_abs().max(other.max_abs()).max(1.0),
            Err(_) => false,
        }
    }

    fn check_same_space(&self, other: &PolyVec) -> Result<()> {
        if self.n_vars != other.n_vars
            || self.degree != other.degree
            || self.homogeneous != other.homogeneous
            || self.coeffs.shape() != other.coeffs.shape()
        {
            return dim_err("polynomial vectors live in different spaces");
        }
        Ok(())
    }
}

/// Evaluates every output polynomial at `x`.
pub fn evaluate(p: &PolyVec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.n_vars {
        return dim_err(format!("point has {} coordinates, polynomial has {} variables", x.len(), p.n_vars));
    }
    check_finite(x, "evaluation point")?;
    let basis = p.basis()?;
    let d = p.degree as usize;
    // powers[i][e] = x_i^e
    let powers: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| {
            let mut row = Vec::with_capacity(d + 1);
            let mut acc = 1.0;
            for _ in 0..=d {
                row.push(acc);
                acc *= xi;
            }
            row
        })
        .collect();
    let values: Vec<f64> = basis
        .monomials()
        .iter()
        .map(|m| m.iter().enumerate().map(|(i, &e)| powers[i][e as usize]).product())
        .collect();
    Ok((0..p.n_out())
        .map(|k| p.coeffs.row(k).iter().zip(&values).map(|(c, v)| c * v).sum())
        .collect())
}

/// Homogenizes with one extra trailing variable: `x^a` becomes
/// `x^a * x_{n+1}^(degree - |a|)`. Already homogeneous input keeps its
/// coefficients and leaves the new variable unused.
pub fn homogenize_poly(p: &PolyVec) -> Result<PolyVec> {
    let src = p.basis()?;
    let dst = MonomialBasis::new(p.n_vars + 1, p.degree, true)?;
    let mut coeffs = DMatrix::zeros(p.n_out(), dst.len());
    let mut buf = vec![0u32; p.n_vars + 1];
    for (j, m) in src.monomials().iter().enumerate() {
        buf[..p.n_vars].copy_from_slice(m);
        buf[p.n_vars] = p.degree - m.iter().sum::<u32>();
        let t = dst.index_of(&buf).expect("homogenized monomial is in the target basis");
        coeffs.set_column(t, &p.coeffs.column(j));
    }
    PolyVec::new(p.n_vars + 1, p.degree, true, coeffs)
}

/// Sets the last variable to 1, inverting [`homogenize_poly`].
pub fn dehomogenize_poly(p: &PolyVec) -> Result<PolyVec> {
    if !p.homogeneous {
        return Err(Error::InvalidArgument("dehomogenize expects a homogeneous PolyVec".into()));
    }
    if p.n_vars < 2 {
        return Err(Error::InvalidArgument("dehomogenize needs at least two variables".into()));
    }
    let src = p.basis()?;
    let dst = MonomialBasis::new(p.n_vars - 1, p.degree, false)?;
    let mut coeffs = DMatrix::zeros(p.n_out(), dst.len());
    for (j, m) in src.monomials().iter().enumerate() {
        let t = dst
            .index_of(&m[..p.n_vars - 1])
            .expect("dehomogenized monomial is in the target basis");
        coeffs.set_column(t, &p.coeffs.column(j));
    }
    PolyVec::new(p.n_vars - 1, p.degree, false, coeffs)
}

/// Keeps the monomials of total degree exactly `degree`.
pub fn truncate_leadterm(p: &PolyVec) -> Result<PolyVec> {
    if p.homogeneous {
        return Ok(p.clone());
    }
    let basis = p.basis()?;
    let range = basis.degree_range(p.degree);
    let coeffs = p.coeffs.columns(range.start, range.len()).into_owned();
    PolyVec::new(p.n_vars, p.degree, true, coeffs)
}

/// Rewrites a homogeneous PolyVec in the inhomogeneous basis of the same degree.
pub fn embed_inhomogeneous(p: &PolyVec) -> Result<PolyVec> {
    if !p.homogeneous {
        return Ok(p.clone());
    }
    let basis = MonomialBasis::new(p.n_vars, p.degree, false)?;
    let range = basis.degree_range(p.degree);
    let mut coeffs = DMatrix::zeros(p.n_out(), basis.len());
    coeffs.columns_mut(range.start, range.len()).copy_from(&p.coeffs);
    PolyVec::new(p.n_vars, p.degree, false, coeffs)
}

/// A single polynomial in the dense layout of a [`PolyRing`]. Only the prefix
/// of monomials up to `degree` is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub coeffs: Vec<f64>,
    pub degree: u32,
}

/// Arithmetic on polynomials of bounded degree with a precomputed
/// multiplication table. Used to expand network compositions exactly.
#[derive(Clone, Debug)]
pub struct PolyRing {
    basis: MonomialBasis,
    degs: Vec<u32>,
    mul: Vec<Vec<u32>>,
}

impl PolyRing {
    pub fn new(n_vars: usize, max_degree: u32) -> Result<Self> {
        let basis = MonomialBasis::new(n_vars, max_degree, false)?;
        let degs: Vec<u32> = basis.monomials().iter().map(|m| m.iter().sum()).collect();
        let mut mul = Vec::with_capacity(basis.len());
        let mut buf = vec![0u32; n_vars];
        for (i, a) in basis.monomials().iter().enumerate() {
            let room = max_degree - degs[i];
            let upto = basis.offsets[room as usize + 1];
            let mut row = Vec::with_capacity(upto);
            for b in &basis.monomials()[..upto] {
                for v in 0..n_vars {
                    buf[v] = a[v] + b[v];
                }
                row.push(basis.index_of(&buf).expect("product stays within the ring") as u32);
            }
            mul.push(row);
        }
        Ok(PolyRing { basis, degs, mul })
    }

    pub fn n_vars(&self) -> usize {
        self.basis.n_vars
    }

    pub fn max_degree(&self) -> u32 {
        self.basis.degree
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    fn len_upto(&self, degree: u32) -> usize {
        self.basis.offsets[degree as usize + 1]
    }

    pub fn zero(&self) -> Poly {
        Poly {
            coeffs: vec![0.0],
            degree: 0,
        }
    }

    pub fn constant(&self, c: f64) -> Poly {
        Poly {
            coeffs: vec![c],
            degree: 0,
        }
    }

    /// `sum_i w[i] x_i + c`.
    pub fn affine(&self, w: &[f64], c: f64) -> Poly {
        let mut coeffs = vec![0.0; self.len_upto(1.min(self.max_degree()))];
        coeffs[0] = c;
        for (i, wi) in w.iter().enumerate() {
            // degree-1 monomials are x_1, x_2, ... in this order
            coeffs[1 + i] = *wi;
        }
        Poly { coeffs, degree: 1 }
    }

    /// `acc += a * p`.
    pub fn add_scaled(&self, acc: &mut Poly, a: f64, p: &Poly) {
        if p.degree > acc.degree {
            acc.coeffs.resize(p.coeffs.len(), 0.0);
            acc.degree = p.degree;
        }
        for (c, v) in acc.coeffs.iter_mut().zip(&p.coeffs) {
            *c += a * v;
        }
    }

    /// Product of two polynomials; panics if the degree exceeds the ring.
    pub fn mul(&self, p: &Poly, q: &Poly) -> Poly {
        let degree = p.degree + q.degree;
        assert!(degree <= self.max_degree(), "product degree exceeds ring capacity");
        let mut coeffs = vec![0.0; self.len_upto(degree)];
        for (i, &a) in p.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.mul[i];
            for (j, &b) in q.coeffs.iter().enumerate() {
                coeffs[row[j] as usize] += a * b;
            }
        }
        Poly { coeffs, degree }
    }

    pub fn pow(&self, p: &Poly, r: u32) -> Poly {
        let mut acc = self.constant(1.0);
        for _ in 0..r {
            acc = self.mul(&acc, p);
        }
        acc
    }

    /// Collects polynomials into a PolyVec of the given degree. The
    /// homogeneous variant keeps only the top-degree block.
    pub fn to_polyvec(&self, polys: &[Poly], degree: u32, homogeneous: bool) -> Result<PolyVec> {
        let full = self.len_upto(degree);
        let range = if homogeneous {
            self.basis.degree_range(degree)
        } else {
            0..full
        };
        let mut coeffs = DMatrix::zeros(polys.len(), range.len());
        for (k, p) in polys.iter().enumerate() {
            for (c, j) in range.clone().enumerate() {
                coeffs[(k, c)] = p.coeffs.get(j).copied().unwrap_or(0.0);
            }
        }
        PolyVec::new(self.basis.n_vars, degree, homogeneous, coeffs)
    }

    /// Total degree of the monomial at index `i`.
    pub fn degree_of(&self, i: usize) -> u32 {
        self.degs[i]
    }
}
