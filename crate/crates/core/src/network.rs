//! Polynomial network model: parameters, evaluation, exact expansion and the
//! permutation/scaling symmetry group acting on hidden neurons.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_finite, dim_err, Error, Result};
use crate::polyspace::{basis_size, Poly, PolyRing, PolyVec, MAX_BASIS_SIZE};
use crate::rng::{gaussian_matrix, gaussian_vector};

/// Rows whose norm is below this fraction of the largest row norm in the
/// layer are treated as zero.
const ZERO_ROW_TOL: f64 = 1e-12;

/// Entries below this fraction of the row norm are skipped when choosing the
/// sign of a canonical row.
const SIGN_TOL: f64 = 1e-9;

/// Default tolerance of [`are_equivalent`].
pub const EQUIVALENCE_TOL: f64 = 1e-8;

/// Layer widths `(d_0, ..., d_L)`, activation degrees `(r_1, ..., r_{L-1})`
/// and whether every affine layer carries a bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub degrees: Vec<u32>,
    pub has_bias: bool,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, degrees: Vec<u32>, has_bias: bool) -> Result<Self> {
        let arch = Architecture {
            widths,
            degrees,
            has_bias,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "an architecture needs at least an input and an output width".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument("all widths must be at least 1".into()));
        }
        if self.degrees.len() + 2 != self.widths.len() {
            return Err(Error::InvalidArgument(format!(
                "{} widths require {} activation degrees, got {}",
                self.widths.len(),
                self.widths.len() - 2,
                self.degrees.len()
            )));
        }
        if self.degrees.contains(&0) {
            return Err(Error::InvalidArgument("activation degrees must be at least 1".into()));
        }
        self.checked_r_total()?;
        Ok(())
    }

    fn checked_r_total(&self) -> Result<u32> {
        self.degrees.iter().try_fold(1u32, |acc, &r| {
            acc.checked_mul(r)
                .ok_or_else(|| Error::TooLarge("product of activation degrees overflows".into()))
        })
    }

    /// Number of affine layers `L`.
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Degree of the network polynomial, the product of all activation degrees.
    pub fn r_total(&self) -> u32 {
        self.degrees.iter().product()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// Widths of hidden layers `d_1, ..., d_{L-1}`.
    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Total number of weight entries (biases excluded).
    pub fn n_weights(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn without_bias(&self) -> Architecture {
        Architecture {
            has_bias: false,
            ..self.clone()
        }
    }
}

/// Weights `W_l` of shape `d_l x d_{l-1}` and optional biases `b_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Option<Vec<DVector<f64>>>,
}

impl Params {
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        arch.validate()?;
        let l = arch.n_layers();
        if self.weights.len() != l {
            return dim_err(format!("expected {l} weight matrices, got {}", self.weights.len()));
        }
        for (i, w) in self.weights.iter().enumerate() {
            let want = (arch.widths[i + 1], arch.widths[i]);
            if w.shape() != want {
                return dim_err(format!(
                    "W_{} has shape {:?}, expected {:?}",
                    i + 1,
                    w.shape(),
                    want
                ));
            }
            check_finite(w.as_slice(), "weights")?;
        }
        match (&self.biases, arch.has_bias) {
            (None, false) => Ok(()),
            (Some(bs), true) => {
                if bs.len() != l {
                    return dim_err(format!("expected {l} bias vectors, got {}", bs.len()));
                }
                for (i, b) in bs.iter().enumerate() {
                    if b.len() != arch.widths[i + 1] {
                        return dim_err(format!(
                            "b_{} has length {}, expected {}",
                            i + 1,
                            b.len(),
                            arch.widths[i + 1]
                        ));
                    }
                    check_finite(b.as_slice(), "biases")?;
                }
                Ok(())
            }
            (Some(_), false) => dim_err("biases given for an architecture without bias"),
            (None, true) => dim_err("architecture has biases but none were given"),
        }
    }

    /// Standard Gaussian weights (and biases when the architecture has them).
    pub fn random(arch: &Architecture, rng: &mut impl Rng) -> Params {
        let weights = arch
            .widths
            .windows(2)
            .map(|w| gaussian_matrix(rng, w[1], w[0]))
            .collect();
        let biases = arch.has_bias.then(|| {
            arch.widths[1..]
                .iter()
                .map(|&d| gaussian_vector(rng, d))
                .collect()
        });
        Params { weights, biases }
    }

    /// Same weights with biases dropped.
    pub fn without_biases(&self) -> Params {
        Params {
            weights: self.weights.clone(),
            biases: None,
        }
    }

    fn bias(&self, layer: usize) -> Option<&DVector<f64>> {
        self.biases.as_ref().map(|b| &b[layer])
    }
}

/// Hidden-layer permutations and nonzero scalings. With `perm` and `scale` for
/// one layer, new neuron `i` is old neuron `perm[i]` multiplied by
/// `scale[perm[i]]`; the next layer's column is divided by that factor raised
/// to the activation degree.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceWitness {
    pub permutations: Vec<Vec<usize>>,
    pub scalings: Vec<Vec<f64>>,
}

impl EquivalenceWitness {
    pub fn identity(arch: &Architecture) -> Self {
        EquivalenceWitness {
            permutations: arch.hidden_widths().iter().map(|&d| (0..d).collect()).collect(),
            scalings: arch.hidden_widths().iter().map(|&d| vec![1.0; d]).collect(),
        }
    }

    /// Random permutations and scalings with magnitude in `[0.5, 2]` and random sign.
    pub fn random(arch: &Architecture, rng: &mut impl Rng) -> Self {
        let mut w = Self::identity(arch);
        for (perm, scale) in w.permutations.iter_mut().zip(w.scalings.iter_mut()) {
            perm.shuffle(rng);
            for s in scale.iter_mut() {
                let mag: f64 = rng.random_range(0.5..2.0);
                *s = if rng.random::<bool>() { mag } else { -mag };
            }
        }
        w
    }

    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let hidden = arch.hidden_widths();
        if self.permutations.len() != hidden.len() || self.scalings.len() != hidden.len() {
            return dim_err("witness does not have one entry per hidden layer");
        }
        for (l, &d) in hidden.iter().enumerate() {
            let perm = &self.permutations[l];
            if perm.len() != d || self.scalings[l].len() != d {
                return dim_err(format!("witness layer {} does not match width {d}", l + 1));
            }
            let mut seen = vec![false; d];
            for &p in perm {
                if p >= d || seen[p] {
                    return Err(Error::InvalidArgument(format!(
                        "permutation of layer {} is not a bijection",
                        l + 1
                    )));
                }
                seen[p] = true;
            }
            if self.scalings[l].iter().any(|s| *s == 0.0 || !s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "scaling of layer {} has a zero or non-finite entry",
                    l + 1
                )));
            }
        }
        Ok(())
    }

    /// The witness equal to applying `self` first and `next` second.
    pub fn compose(&self, next: &EquivalenceWitness) -> EquivalenceWitness {
        let mut out = self.clone();
        for l in 0..self.permutations.len() {
            let p1 = &self.permutations[l];
            let p2 = &next.permutations[l];
            let inv1 = invert_perm(p1);
            out.permutations[l] = p2.iter().map(|&i| p1[i]).collect();
            out.scalings[l] = (0..p1.len())
                .map(|k| self.scalings[l][k] * next.scalings[l][inv1[k]])
                .collect();
        }
        out
    }

    pub fn inverse(&self) -> EquivalenceWitness {
        let mut out = self.clone();
        for l in 0..self.permutations.len() {
            let p = &self.permutations[l];
            out.permutations[l] = invert_perm(p);
            out.scalings[l] = (0..p.len()).map(|j| 1.0 / self.scalings[l][p[j]]).collect();
        }
        out
    }

    /// Same permutations and scalings agreeing to `rel_tol`.
    pub fn approx_eq(&self, other: &EquivalenceWitness, rel_tol: f64) -> bool {
        self.permutations == other.permutations
            && self.scalings.iter().zip(&other.scalings).all(|(a, b)| {
                a.iter()
                    .zip(b)
                    .all(|(x, y)| (x - y).abs() <= rel_tol * x.abs().max(y.abs()))
            })
    }
}

fn invert_perm(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        inv[pi] = i;
    }
    inv
}

/// Evaluates the network at `x`.
pub fn forward(arch: &Architecture, params: &Params, x: &[f64]) -> Result<Vec<f64>> {
    params.validate(arch)?;
    if x.len() != arch.input_dim() {
        return dim_err(format!("input has length {}, expected {}", x.len(), arch.input_dim()));
    }
    let mut h = DVector::from_column_slice(x);
    for (l, w) in params.weights.iter().enumerate() {
        if l > 0 {
            let r = arch.degrees[l - 1] as i32;
            h.apply(|v| *v = v.powi(r));
        }
        h = w * h;
        if let Some(b) = params.bias(l) {
            h += b;
        }
    }
    Ok(h.as_slice().to_vec())
}

fn ring_for(n_vars: usize, degree: u32) -> Result<PolyRing> {
    if basis_size(n_vars, degree, false)? > MAX_BASIS_SIZE {
        return Err(Error::TooLarge("expansion basis too large".into()));
    }
    PolyRing::new(n_vars, degree)
}

/// Pre-activation polynomials of affine layer `layer` (0-based) given the
/// activated outputs of the previous layer.
fn affine_layer(ring: &PolyRing, w: &DMatrix<f64>, b: Option<&DVector<f64>>, inputs: &[Poly]) -> Vec<Poly> {
    (0..w.nrows())
        .map(|i| {
            let mut acc = ring.constant(b.map_or(0.0, |b| b[i]));
            for (j, q) in inputs.iter().enumerate() {
                ring.add_scaled(&mut acc, w[(i, j)], q);
            }
            acc
        })
        .collect()
}

/// Polynomials after the activation of hidden layer `upto` (1-based), or the
/// network outputs when `upto == L`.
pub(crate) fn layer_polys(ring: &PolyRing, arch: &Architecture, params: &Params, upto: usize) -> Vec<Poly> {
    let n = arch.input_dim();
    let mut feats: Vec<Poly> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            ring.affine(&e, 0.0)
        })
        .collect();
    for l in 0..upto {
        let pre = affine_layer(ring, &params.weights[l], params.bias(l), &feats);
        feats = if l + 1 < arch.n_layers() {
            pre.iter().map(|p| ring.pow(p, arch.degrees[l])).collect()
        } else {
            pre
        };
    }
    feats
}

/// Exact coefficient expansion of the network map. Homogeneous of degree
/// `r_total` without biases, inhomogeneous of degree at most `r_total` with.
pub fn expand(arch: &Architecture, params: &Params) -> Result<PolyVec> {
    params.validate(arch)?;
    let degree = arch.r_total();
    let ring = ring_for(arch.input_dim(), degree)?;
    let outs = layer_polys(&ring, arch, params, arch.n_layers());
    ring.to_polyvec(&outs, degree, !arch.has_bias)
}

/// Features `q_l` after the `layer`-th activation (1-based) of an hPNN.
pub fn internal_features(arch: &Architecture, params: &Params, layer: usize) -> Result<PolyVec> {
    params.validate(arch)?;
    if arch.has_bias {
        return Err(Error::InvalidArgument("internal features are defined for networks without bias".into()));
    }
    if layer == 0 || layer >= arch.n_layers() {
        return Err(Error::InvalidArgument(format!(
            "layer must lie in 1..={}, got {layer}",
            arch.n_layers() - 1
        )));
    }
    let degree: u32 = arch.degrees[..layer].iter().product();
    let ring = ring_for(arch.input_dim(), degree)?;
    let feats = layer_polys(&ring, arch, params, layer);
    ring.to_polyvec(&feats, degree, true)
}

/// Applies a permutation/scaling witness to the parameters.
pub fn apply_equivalence(arch: &Architecture, params: &Params, witness: &EquivalenceWitness) -> Result<Params> {
    params.validate(arch)?;
    witness.validate(arch)?;
    let l_total = arch.n_layers();
    let ident = |d: usize| -> (Vec<usize>, Vec<f64>) { ((0..d).collect(), vec![1.0; d]) };
    let mut weights = Vec::with_capacity(l_total);
    let mut biases = params.biases.as_ref().map(|_| Vec::with_capacity(l_total));
    for l in 0..l_total {
        let (pout, sout) = if l + 1 < l_total {
            (witness.permutations[l].clone(), witness.scalings[l].clone())
        } else {
            ident(arch.widths[l + 1])
        };
        let (pin, sin) = if l > 0 {
            (witness.permutations[l - 1].clone(), witness.scalings[l - 1].clone())
        } else {
            ident(arch.widths[0])
        };
        let r_in = if l > 0 { arch.degrees[l - 1] as i32 } else { 1 };
        let w = &params.weights[l];
        let new_w = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
            let (oi, oj) = (pout[i], pin[j]);
            let col_factor = if l > 0 { sin[oj].powi(-r_in) } else { 1.0 };
            sout[oi] * w[(oi, oj)] * col_factor
        });
        weights.push(new_w);
        if let (Some(out), Some(b)) = (biases.as_mut(), params.bias(l)) {
            out.push(DVector::from_fn(b.len(), |i, _| sout[pout[i]] * b[pout[i]]));
        }
    }
    Ok(Params { weights, biases })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

fn first_significant_sign(v: &[f64], norm: f64) -> f64 {
    v.iter()
        .find(|x| x.abs() > SIGN_TOL * norm)
        .map_or(1.0, |x| x.signum())
}

/// Incoming row of hidden neuron `i` of 0-based affine layer `l`, bias appended.
fn incoming_row(params: &Params, l: usize, i: usize) -> Vec<f64> {
    let mut row: Vec<f64> = params.weights[l].row(i).iter().copied().collect();
    if let Some(b) = params.bias(l) {
        row.push(b[i]);
    }
    row
}

/// Canonical representative of the orbit together with the witness mapping
/// `params` onto it. In lenient mode zero rows are normalized through their
/// outgoing column and sorted last instead of being rejected.
fn canonical_form(arch: &Architecture, params: &Params, strict: bool) -> Result<(Params, EquivalenceWitness)> {
    params.validate(arch)?;
    let mut cur = params.clone();
    let mut total = EquivalenceWitness::identity(arch);
    for l in 0..arch.n_layers() - 1 {
        let d = arch.widths[l + 1];
        let r = arch.degrees[l];
        let rows: Vec<Vec<f64>> = (0..d).map(|i| incoming_row(&cur, l, i)).collect();
        let norms: Vec<f64> = rows.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let layer_scale = norms.iter().cloned().fold(0.0, f64::max);
        let is_zero: Vec<bool> = norms.iter().map(|&n| n <= ZERO_ROW_TOL * layer_scale || n == 0.0).collect();

        let mut step = EquivalenceWitness::identity(arch);
        for i in 0..d {
            step.scalings[l][i] = if !is_zero[i] {
                let sign = first_significant_sign(&rows[i], norms[i]);
                // keep already-normalized rows bit-identical so canonicalization is idempotent
                if (norms[i] - 1.0).abs() <= 4.0 * f64::EPSILON {
                    sign
                } else {
                    sign / norms[i]
                }
            } else if strict {
                return Err(Error::ZeroRow { layer: l + 1, neuron: i });
            } else {
                let col: Vec<f64> = cur.weights[l + 1].column(i).iter().copied().collect();
                let cn = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                if cn == 0.0 {
                    1.0
                } else {
                    // the column is multiplied by s^(-r); pick s so the result has unit norm
                    let mag = cn.powf(1.0 / r as f64);
                    if r % 2 == 1 {
                        first_significant_sign(&col, cn) * mag
                    } else {
                        mag
                    }
                }
            };
        }
        cur = apply_equivalence(arch, &cur, &step)?;
        total = total.compose(&step);

        let keys: Vec<(bool, Vec<f64>)> = (0..d)
            .map(|i| {
                if is_zero[i] {
                    (true, cur.weights[l + 1].column(i).iter().copied().collect())
                } else {
                    (false, incoming_row(&cur, l, i))
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| keys[a].0.cmp(&keys[b].0).then_with(|| lex_cmp(&keys[a].1, &keys[b].1)));
        let mut step = EquivalenceWitness::identity(arch);
        step.permutations[l] = order;
        cur = apply_equivalence(arch, &cur, &step)?;
        total = total.compose(&step);
    }
    Ok((cur, total))
}

/// Canonical representative: unit-norm hidden rows (bias included) with a
/// positive first significant entry, rows sorted lexicographically.
pub fn canonicalize(arch: &Architecture, params: &Params) -> Result<Params> {
    canonical_form(arch, params, true).map(|(p, _)| p)
}

/// Canonical representative and the witness `w` with `apply_equivalence(params, w)` equal to it.
pub fn canonicalize_with_witness(arch: &Architecture, params: &Params) -> Result<(Params, EquivalenceWitness)> {
    canonical_form(arch, params, true)
}

fn max_rel_gap(a: &Params, b: &Params) -> f64 {
    let mut worst = 0.0f64;
    let mut visit = |x: &[f64], y: &[f64]| {
        let scale = x.iter().chain(y).fold(1.0f64, |m, v| m.max(v.abs()));
        let diff = x.iter().zip(y).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        worst = worst.max(diff / scale);
    };
    for (wa, wb) in a.weights.iter().zip(&b.weights) {
        visit(wa.as_slice(), wb.as_slice());
    }
    if let (Some(ba), Some(bb)) = (&a.biases, &b.biases) {
        for (x, y) in ba.iter().zip(bb) {
            visit(x.as_slice(), y.as_slice());
        }
    }
    worst
}

/// Returns a witness mapping `a` onto `b` when the two parameter sets lie on
/// the same orbit up to `tol`, compared per matrix relative to its largest
/// canonical entry (at least 1).
pub fn are_equivalent(arch: &Architecture, a: &Params, b: &Params, tol: f64) -> Option<EquivalenceWitness> {
    let (ca, wa) = canonical_form(arch, a, false).ok()?;
    let (cb, wb) = canonical_form(arch, b, false).ok()?;
    (max_rel_gap(&ca, &cb) <= tol).then(|| wa.compose(&wb.inverse()))
}

/// Adds a hidden neuron with zero incoming weights to layer `layer` (1-based)
/// and outgoing column `u`; the network polynomial is unchanged.
pub fn augment_nonunique(
    arch: &Architecture,
    params: &Params,
    layer: usize,
    u: &[f64],
) -> Result<(Architecture, Params)> {
    params.validate(arch)?;
    let l_total = arch.n_layers();
    if layer == 0 || layer >= l_total {
        return Err(Error::InvalidArgument(format!("layer must lie in 1..={}", l_total - 1)));
    }
    if u.len() != arch.widths[layer + 1] {
        return dim_err(format!("u has length {}, expected {}", u.len(), arch.widths[layer + 1]));
    }
    let mut new_arch = arch.clone();
    new_arch.widths[layer] += 1;
    let mut out = params.clone();
    let w = &params.weights[layer - 1];
    out.weights[layer - 1] = w.clone().insert_row(w.nrows(), 0.0);
    let next = &params.weights[layer];
    let mut grown = next.clone().insert_column(next.ncols(), 0.0);
    grown.column_mut(next.ncols()).copy_from_slice(u);
    out.weights[layer] = grown;
    if let Some(bs) = out.biases.as_mut() {
        let b = &bs[layer - 1];
        bs[layer - 1] = b.clone().insert_row(b.len(), 0.0);
    }
    Ok((new_arch, out))
}

/// Lifts a biased network to the equivalent network without bias acting on
/// `(x, 1)`: hidden layers get an extra unit that always outputs 1.
pub fn homogenize_network(arch: &Architecture, params: &Params) -> Result<(Architecture, Params)> {
    params.validate(arch)?;
    let biases = params
        .biases
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("homogenize_network needs a biased network".into()))?;
    let l_total = arch.n_layers();
    let mut widths: Vec<usize> = arch.widths.iter().map(|d| d + 1).collect();
    widths[l_total] = arch.output_dim();
    let new_arch = Architecture::new(widths, arch.degrees.clone(), false)?;
    let weights = (0..l_total)
        .map(|l| {
            let w = &params.weights[l];
            let b = &biases[l];
            let rows = if l + 1 < l_total { w.nrows() + 1 } else { w.nrows() };
            let mut m = DMatrix::zeros(rows, w.ncols() + 1);
            m.view_mut((0, 0), w.shape()).copy_from(w);
            m.view_mut((0, w.ncols()), (w.nrows(), 1)).copy_from(b);
            if l + 1 < l_total {
                m[(w.nrows(), w.ncols())] = 1.0;
            }
            m
        })
        .collect();
    Ok((new_arch, Params { weights, biases: None }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyspace::{evaluate, homogenize_poly, truncate_leadterm};
    use crate::rng::seeded;
    use proptest::prelude::*;


    fn arch(w: &[usize], r: &[u32], bias: bool) -> Architecture {
        Architecture::new(w.to_vec(), r.to_vec(), bias).unwrap()
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::new(vec![3, 2, 2], vec![2], false).is_ok());
        assert!(Architecture::new(vec![3, 2], vec![], false).is_ok());
        assert!(Architecture::new(vec![3, 2, 2], vec![], false).is_err());
        assert!(Architecture::new(vec![3, 0, 2], vec![2], false).is_err());
        assert!(Architecture::new(vec![3, 2, 2], vec![0], false).is_err());
        assert!(Architecture::new(vec![2, 2, 2, 2], vec![65536, 65536], false).is_err());
        assert_eq!(arch(&[2, 3, 2, 2], &[2, 3], false).r_total(), 6);
    }

    #[test]
    fn two_layer_expansion_is_sum_of_powers() {
        let a = arch(&[3, 2, 2], &[2], false);
        let v = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let u = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 4.0, 0.25]);
        let p = Params { weights: vec![v.clone(), u.clone()], biases: None };
        let e = expand(&a, &p).unwrap();
        assert!(e.homogeneous());
        assert_eq!(e.degree(), 2);
        let basis = e.basis().unwrap();
        // oracle: coefficient of x^a in (v.x)^2 is multinomial(a) * v^a
        for (j, m) in basis.monomials().iter().enumerate() {
            let multinom = if m.contains(&2) { 1.0 } else { 2.0 };
            for k in 0..2 {
                let mut want = 0.0;
                for n in 0..2 {
                    let vpow: f64 = (0..3).map(|i| v[(n, i)].powi(m[i] as i32)).product();
                    want += u[(k, n)] * multinom * vpow;
                }
                assert!((e.coeffs()[(k, j)] - want).abs() < 1e-12);
            }
        }
        let x = [0.3, -0.7, 1.1];
        let f = forward(&a, &p, &x).unwrap();
        let g = evaluate(&e, &x).unwrap();
        for (s, t) in f.iter().zip(&g) {
            assert!((s - t).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_degenerate_network_composes() {
        let a = arch(&[2, 3, 2], &[1], false);
        let mut rng = seeded(3);
        let p = Params::random(&a, &mut rng);
        let e = expand(&a, &p).unwrap();
        let prod = &p.weights[1] * &p.weights[0];
        for k in 0..2 {
            for j in 0..2 {
                assert!((e.coeffs()[(k, j)] - prod[(k, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let a = arch(&[2, 3, 1], &[2], true);
        let p = Params {
            weights: vec![DMatrix::zeros(3, 2), DMatrix::zeros(1, 3)],
            biases: Some(vec![DVector::zeros(3), DVector::zeros(1)]),
        };
        assert_eq!(forward(&a, &p, &[1.0, 2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn swap_and_rescale_keeps_coefficients() {
        let a = arch(&[3, 2, 2], &[2], false);
        let p = Params::random(&a, &mut seeded(11));
        let w = EquivalenceWitness {
            permutations: vec![vec![1, 0]],
            scalings: vec![vec![3.0, 1.0]],
        };
        let q = apply_equivalence(&a, &p, &w).unwrap();
        // neuron 0 scaled by 3 and moved to slot 1; its column divided by 9
        for j in 0..3 {
            assert!((q.weights[0][(1, j)] - 3.0 * p.weights[0][(0, j)]).abs() < 1e-15);
        }
        for k in 0..2 {
            assert!((q.weights[1][(k, 1)] - p.weights[1][(k, 0)] / 9.0).abs() < 1e-15);
        }
        let d = expand(&a, &p).unwrap().max_abs_diff(&expand(&a, &q).unwrap()).unwrap();
        assert!(d < 1e-12);
        let ident = apply_equivalence(&a, &p, &EquivalenceWitness::identity(&a)).unwrap();
        assert_eq!(ident, p);
    }

    #[test]
    fn zero_scaling_is_rejected() {
        let a = arch(&[3, 2, 2], &[2], false);
        let p = Params::random(&a, &mut seeded(1));
        let w = EquivalenceWitness {
            permutations: vec![vec![0, 1]],
            scalings: vec![vec![0.0, 1.0]],
        };
        assert!(apply_equivalence(&a, &p, &w).is_err());
    }

    #[test]
    fn canonical_form_properties() {
        let a = arch(&[3, 3, 2, 2], &[2, 3], true);
        let p = Params::random(&a, &mut seeded(5));
        let c = canonicalize(&a, &p).unwrap();
        assert_eq!(canonicalize(&a, &c).unwrap(), c);
        for l in 0..2 {
            for i in 0..a.widths[l + 1] {
                let row = incoming_row(&c, l, i);
                let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
                assert!(row[0] > 0.0);
            }
        }
        let other = Params::random(&a, &mut seeded(6));
        assert!(max_rel_gap(&c, &canonicalize(&a, &other).unwrap()) > 1e-3);
    }

    #[test]
    fn zero_row_is_rejected_by_canonicalize() {
        let a = arch(&[3, 2, 2], &[2], false);
        let p = Params::random(&a, &mut seeded(2));
        let (a2, p2) = augment_nonunique(&a, &p, 1, &[1.0, 1.0]).unwrap();
        assert_eq!(canonicalize(&a2, &p2), Err(Error::ZeroRow { layer: 1, neuron: 2 }));
    }

    #[test]
    fn augmentation_keeps_polynomial_and_breaks_equivalence() {
        let a = arch(&[3, 2, 2], &[2], false);
        let p = Params::random(&a, &mut seeded(8));
        let base = expand(&a, &p).unwrap();
        let us = [[0.0, 0.0], [1.0, -0.5], [0.3, 2.0]];
        let nets: Vec<_> = us.iter().map(|u| augment_nonunique(&a, &p, 1, u).unwrap()).collect();
        for (a2, p2) in &nets {
            assert_eq!(a2.widths, vec![3, 3, 2]);
            assert_eq!(expand(a2, p2).unwrap().coeffs(), base.coeffs());
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(are_equivalent(&nets[i].0, &nets[i].1, &nets[j].1, EQUIVALENCE_TOL).is_none());
            }
            assert!(are_equivalent(&nets[i].0, &nets[i].1, &nets[i].1, EQUIVALENCE_TOL).is_some());
        }
    }

    #[test]
    fn perturbation_breaks_equivalence() {
        let a = arch(&[2, 3, 2], &[2], false);
        let p = Params::random(&a, &mut seeded(9));
        let mut q = p.clone();
        q.weights[0][(1, 1)] += 1e-2;
        assert!(are_equivalent(&a, &p, &q, EQUIVALENCE_TOL).is_none());
    }

    #[test]
    fn internal_features_rank() {
        let a = arch(&[2, 2, 2], &[2], false);
        let p = Params::random(&a, &mut seeded(4));
        let q = internal_features(&a, &p, 1).unwrap();
        assert_eq!(q.n_out(), 2);
        let x = [0.4, -1.3];
        let direct: Vec<f64> = (0..2)
            .map(|i| (p.weights[0][(i, 0)] * x[0] + p.weights[0][(i, 1)] * x[1]).powi(2))
            .collect();
        let got = evaluate(&q, &x).unwrap();
        for (g, d) in got.iter().zip(&direct) {
            assert!((g - d).abs() < 1e-12);
        }
        assert_eq!(q.coeffs().rank(1e-9), 2);

        let mut dup = p.clone();
        let row = dup.weights[0].row(0).into_owned();
        dup.weights[0].set_row(1, &row);
        assert_eq!(internal_features(&a, &dup, 1).unwrap().coeffs().rank(1e-9), 1);
        assert!(internal_features(&a, &p, 2).is_err());
    }

    #[test]
    fn homogenized_two_layer_blocks() {
        let a = arch(&[2, 3, 2], &[2], true);
        let p = Params::random(&a, &mut seeded(12));
        let (h, hp) = homogenize_network(&a, &p).unwrap();
        assert_eq!(h.widths, vec![3, 4, 2]);
        let w1 = &hp.weights[0];
        assert_eq!(w1.row(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        let b1 = &p.biases.as_ref().unwrap()[0];
        for i in 0..3 {
            assert_eq!(w1[(i, 2)], b1[i]);
        }
        let b2 = &p.biases.as_ref().unwrap()[1];
        for k in 0..2 {
            assert_eq!(hp.weights[1][(k, 3)], b2[k]);
        }
        let lhs = expand(&h, &hp).unwrap();
        let rhs = homogenize_poly(&expand(&a, &p).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10 * rhs.max_abs().max(1.0));
    }

    fn arb_net() -> impl Strategy<Value = (Architecture, Params, u64)> {
        (
            proptest::collection::vec(2usize..4, 2..4),
            1usize..4,
            proptest::collection::vec(1u32..4, 2),
            any::<bool>(),
            any::<u64>(),
        )
            .prop_map(|(mut widths, out, degs, bias, seed)| {
                widths.push(out);
                let l = widths.len() - 1;
                let a = Architecture::new(widths, degs[..l - 1].to_vec(), bias).unwrap();
                let p = Params::random(&a, &mut seeded(seed));
                (a, p, seed)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn expand_is_invariant_under_witnesses((a, p, seed) in arb_net()) {
            let w = EquivalenceWitness::random(&a, &mut seeded(seed ^ 0xabc));
            let q = apply_equivalence(&a, &p, &w).unwrap();
            let e1 = expand(&a, &p).unwrap();
            let e2 = expand(&a, &q).unwrap();
            prop_assert!(e1.max_abs_diff(&e2).unwrap() <= 1e-10 * e1.max_abs().max(1.0));
            let found = are_equivalent(&a, &p, &q, EQUIVALENCE_TOL);
            prop_assert!(found.is_some());
            prop_assert!(found.unwrap().approx_eq(&w, 1e-8));
        }

        #[test]
        fn canonical_form_is_orbit_invariant((a, p, seed) in arb_net()) {
            let w = EquivalenceWitness::random(&a, &mut seeded(seed.wrapping_add(1)));
            let q = apply_equivalence(&a, &p, &w).unwrap();
            let (cp, wp) = canonicalize_with_witness(&a, &p).unwrap();
            let cq = canonicalize(&a, &q).unwrap();
            prop_assert!(max_rel_gap(&cp, &cq) <= 1e-10);
            let again = apply_equivalence(&a, &p, &wp).unwrap();
            prop_assert!(max_rel_gap(&again, &cp) <= 1e-12);
        }

        #[test]
        fn witness_group_laws((a, _p, seed) in arb_net()) {
            let w1 = EquivalenceWitness::random(&a, &mut seeded(seed));
            let w2 = EquivalenceWitness::random(&a, &mut seeded(seed ^ 7));
            let id = EquivalenceWitness::identity(&a);
            prop_assert!(w1.compose(&w1.inverse()).approx_eq(&id, 1e-12));
            prop_assert!(w1.inverse().compose(&w1).approx_eq(&id, 1e-12));
            let p = Params::random(&a, &mut seeded(seed ^ 99));
            let seq = apply_equivalence(&a, &apply_equivalence(&a, &p, &w1).unwrap(), &w2).unwrap();
            let once = apply_equivalence(&a, &p, &w1.compose(&w2)).unwrap();
            prop_assert!(max_rel_gap(&seq, &once) <= 1e-12);
        }

        #[test]
        fn leading_term_of_biased_net_is_the_bias_free_net((a, p, _seed) in arb_net()) {
            prop_assume!(a.has_bias);
            let lead = truncate_leadterm(&expand(&a, &p).unwrap()).unwrap();
            let plain = expand(&a.without_bias(), &p.without_biases()).unwrap();
            prop_assert_eq!(lead.coeffs(), plain.coeffs());
        }

        #[test]
        fn homogenized_network_matches_at_unit_last_input((a, p, seed) in arb_net()) {
            prop_assume!(a.has_bias);
            let (h, hp) = homogenize_network(&a, &p).unwrap();
            let mut rng = seeded(seed);
            let x: Vec<f64> = (0..a.input_dim()).map(|_| rand::Rng::random_range(&mut rng, -1.5..1.5)).collect();
            let mut x1 = x.clone();
            x1.push(1.0);
            let f = forward(&a, &p, &x).unwrap();
            let g = forward(&h, &hp, &x1).unwrap();
            for (s, t) in f.iter().zip(&g) {
                prop_assert!((s - t).abs() <= 1e-10 * s.abs().max(1.0));
            }
        }
    }
}
