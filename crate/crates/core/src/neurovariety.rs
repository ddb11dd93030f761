//! Dimension counts for the image of the parametrization map and a numerical
//! rank check of its Jacobian at random parameter points.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::krank::numerical_rank;
use crate::network::{Architecture, Params};
use crate::polyspace::{binomial, Poly, PolyRing, PolyVec, MAX_BASIS_SIZE};
use crate::rng::seeded;

/// Jacobians with more entries than this are refused.
pub const MAX_JACOBIAN_ENTRIES: usize = 20_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DimensionReport {
    pub dof_bound: usize,
    pub ambient_dim: usize,
    pub expected_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_rank: Option<usize>,
    pub trials: usize,
}

fn require_hpnn(arch: &Architecture) -> Result<()> {
    arch.validate()?;
    if arch.has_bias {
        return Err(Error::InvalidArgument(
            "dimension counts are defined for networks without bias".into(),
        ));
    }
    Ok(())
}

/// Parameter count minus one rescaling per hidden neuron, the ambient
/// coefficient dimension, and their minimum.
pub fn expected_dimension(arch: &Architecture) -> Result<DimensionReport> {
    require_hpnn(arch)?;
    let overflow = || Error::TooLarge("dimension count overflows".into());
    let w = &arch.widths;
    let params = w
        .windows(2)
        .try_fold(0usize, |acc, p| acc.checked_add(p[0].checked_mul(p[1])?))
        .ok_or_else(overflow)?;
    let dof_bound = params - arch.hidden_widths().iter().sum::<usize>();
    let r = arch.r_total() as usize;
    let ambient_dim = binomial(arch.input_dim() + r - 1, r)
        .and_then(|b| b.checked_mul(arch.output_dim()))
        .ok_or_else(overflow)?;
    Ok(DimensionReport {
        dof_bound,
        ambient_dim,
        expected_dim: dof_bound.min(ambient_dim),
        numeric_rank: None,
        trials: 0,
    })
}

/// All weight entries, layer by layer, each matrix row-major.
pub fn weights_to_vec(params: &Params) -> Vec<f64> {
    params
        .weights
        .iter()
        .flat_map(|w| (0..w.nrows()).flat_map(move |i| (0..w.ncols()).map(move |j| w[(i, j)])))
        .collect()
}

/// Inverse of [`weights_to_vec`] for a network without bias.
pub fn weights_from_vec(arch: &Architecture, theta: &[f64]) -> Result<Params> {
    if theta.len() != arch.n_weights() {
        return Err(Error::Dimension(format!(
            "parameter vector has length {}, expected {}",
            theta.len(),
            arch.n_weights()
        )));
    }
    let mut offset = 0;
    let weights = arch
        .widths
        .windows(2)
        .map(|p| {
            let m = DMatrix::from_row_slice(p[1], p[0], &theta[offset..offset + p[0] * p[1]]);
            offset += p[0] * p[1];
            m
        })
        .collect();
    Ok(Params { weights, biases: None })
}

/// Coefficients of the network polynomial together with their Jacobian with
/// respect to [`weights_to_vec`]. Rows follow the row-major flattening of the
/// coefficient matrix (output index major, homogeneous basis index minor).
pub fn coefficient_jacobian(arch: &Architecture, params: &Params) -> Result<(PolyVec, DMatrix<f64>)> {
    require_hpnn(arch)?;
    params.validate(arch)?;
    let degree = arch.r_total();
    let n = arch.input_dim();
    let basis_len = binomial(n + degree as usize, degree as usize).unwrap_or(usize::MAX);
    if basis_len > MAX_BASIS_SIZE {
        return Err(Error::TooLarge("expansion basis too large".into()));
    }
    let ring = PolyRing::new(n, degree)?;
    let top = ring.basis().degree_range(degree);
    let n_rows = arch.output_dim() * top.len();
    if n_rows.saturating_mul(arch.n_weights()) > MAX_JACOBIAN_ENTRIES {
        return Err(Error::TooLarge("Jacobian too large".into()));
    }
    let l_total = arch.n_layers();

    // forward pass keeping activations a_l and derivative factors r h_l^(r-1)
    let mut acts: Vec<Vec<Poly>> = vec![(0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            ring.affine(&e, 0.0)
        })
        .collect()];
    let mut slopes: Vec<Vec<Poly>> = Vec::with_capacity(l_total);
    for l in 0..l_total {
        let w = &params.weights[l];
        let pre: Vec<Poly> = (0..w.nrows())
            .map(|i| {
                let mut acc = ring.zero();
                for (j, q) in acts[l].iter().enumerate() {
                    ring.add_scaled(&mut acc, w[(i, j)], q);
                }
                acc
            })
            .collect();
        if l + 1 < l_total {
            let r = arch.degrees[l];
            let lower: Vec<Poly> = pre.iter().map(|h| ring.pow(h, r - 1)).collect();
            acts.push(pre.iter().zip(&lower).map(|(h, g)| ring.mul(h, g)).collect());
            slopes.push(
                lower
                    .into_iter()
                    .map(|mut g| {
                        g.coeffs.iter_mut().for_each(|c| *c *= r as f64);
                        g
                    })
                    .collect(),
            );
        } else {
            acts.push(pre);
        }
    }
    let p = ring.to_polyvec(&acts[l_total], degree, true)?;

    let d_out = arch.output_dim();
    let mut offsets = Vec::with_capacity(l_total);
    let mut acc = 0;
    for pair in arch.widths.windows(2) {
        offsets.push(acc);
        acc += pair[0] * pair[1];
    }
    let mut jac = DMatrix::zeros(n_rows, arch.n_weights());
    // sens[k][i] = d p_k / d h_{l,i}, starting from the identity at the output
    let mut sens: Vec<Vec<Poly>> = (0..d_out)
        .map(|k| (0..d_out).map(|m| ring.constant(if k == m { 1.0 } else { 0.0 })).collect())
        .collect();
    for l in (0..l_total).rev() {
        let w = &params.weights[l];
        for k in 0..d_out {
            for i in 0..w.nrows() {
                if sens[k][i].coeffs.iter().all(|&c| c == 0.0) {
                    continue;
                }
                for (j, a) in acts[l].iter().enumerate() {
                    let prod = ring.mul(&sens[k][i], a);
                    let col = offsets[l] + i * w.ncols() + j;
                    for (c, idx) in top.clone().enumerate() {
                        jac[(k * top.len() + c, col)] = prod.coeffs.get(idx).copied().unwrap_or(0.0);
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        sens = sens
            .iter()
            .map(|row| {
                (0..w.ncols())
                    .map(|i| {
                        let mut back = ring.zero();
                        for (m, s) in row.iter().enumerate() {
                            ring.add_scaled(&mut back, w[(m, i)], s);
                        }
                        ring.mul(&back, &slopes[l - 1][i])
                    })
                    .collect()
            })
            .collect();
    }
    Ok((p, jac))
}

/// Largest numerical rank of the coefficient Jacobian over `trials` random
/// Gaussian parameter points drawn from `seed`.
pub fn jacobian_rank(arch: &Architecture, seed: u64, trials: usize, tol: f64) -> Result<DimensionReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let mut report = expected_dimension(arch)?;
    let mut rng = seeded(seed);
    let mut best = 0;
    for _ in 0..trials {
        let params = Params::random(arch, &mut rng);
        best = best.max(rank_at(arch, &params, tol)?);
    }
    report.numeric_rank = Some(best);
    report.trials = trials;
    Ok(report)
}

/// Numerical rank of the coefficient Jacobian at a given parameter point.
pub fn rank_at(arch: &Architecture, params: &Params, tol: f64) -> Result<usize> {
    let (_, jac) = coefficient_jacobian(arch, params)?;
    numerical_rank(&jac, tol)
}
