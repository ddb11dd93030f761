//! Weight recovery from polynomial coefficients.
//!
//! Two-layer blocks are decomposed with a Jennrich pencil on an order-3
//! flattening of the symmetric coefficient tensor. Deeper networks are fitted
//! by seeded multi-start Levenberg-Marquardt on the exact coefficient map;
//! biased networks go through the homogenized network and are read back once
//! the constant unit of every hidden layer has been located.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::certify::{cert_architecture, cert_architecture_bias, Overall};
use crate::error::{Error, RecoveryFailure, Result};
use crate::krank::singular_values;
use crate::multilinear::{flatten_single_output, flatten_st, tensor_from_poly, Tensor};
use crate::network::{expand, internal_features, Architecture, Params};
use crate::neurovariety::{coefficient_jacobian, weights_from_vec, weights_to_vec};
use crate::polyspace::{binomial, homogenize_poly, PolyVec};
use crate::rng::{gaussian, gaussian_vector, seeded, SeededRng};

pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-6;
pub const DEFAULT_SEPARATION_TOL: f64 = 1e-8;
/// Fresh pencil draws after the first one before giving up.
pub const PENCIL_RETRIES: usize = 3;
/// Relative singular value gap used to decide the rank of a flattening.
const RANGE_RANK_TOL: f64 = 1e-8;
/// Relative size of the input part of a row that marks a constant unit.
const CONSTANT_UNIT_TOL: f64 = 1e-6;
/// Normalized residual at which a least-squares start counts as exact.
const STALL_WINDOW: usize = 40;
const STALL_FLOOR: f64 = 1e-5;
const FIT_EXACT: f64 = 1e-12;
const FIT_ACCEPT: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoverOptions {
    /// Largest accepted absolute coefficient error of the recovered network.
    pub tol: f64,
    /// Minimal relative eigenvalue separation of the pencil.
    pub separation_tol: f64,
    pub seed: u64,
    /// Random starts of the least-squares fit.
    pub max_starts: usize,
    /// Iterations per start.
    pub max_iters: usize,
    /// Attempt recovery on architectures that are not certified identifiable.
    pub allow_uncertified: bool,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        RecoverOptions {
            tol: DEFAULT_RESIDUAL_TOL,
            separation_tol: DEFAULT_SEPARATION_TOL,
            seed: 0,
            max_starts: 100,
            max_iters: 400,
            allow_uncertified: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub method: String,
    /// `sigma_R / sigma_1` and `sigma_{R+1} / sigma_1` of the flattening ranges.
    pub range_ratios: Vec<f64>,
    pub pencil_attempts: usize,
    /// Condition number of the pencil denominator in the accepted attempt.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pencil_condition: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigen_separation: Option<f64>,
    pub starts: usize,
    pub iterations: usize,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryResult {
    pub params: Params,
    /// Max-abs coefficient mismatch of the returned parameters.
    pub residual: f64,
    pub diagnostics: Diagnostics,
}

fn fail(layer: usize, reason: RecoveryFailure) -> Error {
    Error::Recovery { layer, reason }
}

/// Residual of `params` against `target`, recomputed from scratch.
fn residual_of(arch: &Architecture, params: &Params, target: &PolyVec) -> Result<f64> {
    expand(arch, params)?.max_abs_diff(target)
}

fn check_target(p: &PolyVec, arch: &Architecture) -> Result<()> {
    if p.n_vars() != arch.input_dim() || p.n_out() != arch.output_dim() {
        return Err(Error::Dimension(format!(
            "polynomial has {} variables and {} outputs, architecture expects {} and {}",
            p.n_vars(),
            p.n_out(),
            arch.input_dim(),
            arch.output_dim()
        )));
    }
    if p.degree() != arch.r_total() {
        return Err(Error::Dimension(format!(
            "polynomial degree {} differs from the total degree {}",
            p.degree(),
            arch.r_total()
        )));
    }
    if p.max_abs() == 0.0 {
        return Err(Error::InvalidArgument("target polynomial is zero".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Jennrich pencil

/// Leading `rank` left singular vectors, after checking that the numerical
/// rank is exactly `rank`.
fn range_basis(m: &DMatrix<f64>, rank: usize, diag: &mut Diagnostics) -> std::result::Result<DMatrix<f64>, RecoveryFailure> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = sv.first().copied().unwrap_or(0.0);
    let ratio = |k: usize| if smax > 0.0 { sv.get(k).copied().unwrap_or(0.0) / smax } else { 0.0 };
    let (low, next) = (ratio(rank - 1), ratio(rank));
    diag.range_ratios.extend([low, next]);
    if low <= RANGE_RANK_TOL || next > RANGE_RANK_TOL {
        let found = sv.iter().filter(|&&s| s > RANGE_RANK_TOL * smax).count();
        return Err(RecoveryFailure::RankDeficient {
            expected: rank,
            found,
            ratio: if found < rank { low } else { next },
        });
    }
    Ok(DMatrix::from_fn(u.nrows(), rank, |i, j| u[(i, order[j])]))
}

/// Unit null vector of a square matrix (right singular vector of the
/// smallest singular value).
fn null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let k = (0..svd.singular_values.len())
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .expect("non-empty");
    vt.row(k).transpose()
}

/// Columns proportional to the second factor of `sum_k a_k (x) b_k (x) c_k`
/// given the mode-1 slices `T_k = B diag(A[k, :]) C^T`.
fn jennrich(
    slices: &[DMatrix<f64>],
    rank: usize,
    opts: &RecoverOptions,
    rng: &mut SeededRng,
    diag: &mut Diagnostics,
) -> std::result::Result<DMatrix<f64>, RecoveryFailure> {
    let (rows, cols) = slices[0].shape();
    let k_count = slices.len();
    let wide = DMatrix::from_fn(rows, cols * k_count, |i, c| slices[c / cols][(i, c % cols)]);
    let tall_t = DMatrix::from_fn(cols, rows * k_count, |j, c| slices[c / rows][(c % rows, j)]);
    let u = range_basis(&wide, rank, diag)?;
    let v = range_basis(&tall_t, rank, diag)?;
    if rank == 1 {
        return Ok(u);
    }
    let reduced: Vec<DMatrix<f64>> = slices.iter().map(|t| u.transpose() * t * &v).collect();
    let mut last = RecoveryFailure::DegeneratePencil {
        attempts: 0,
        separation: 0.0,
    };
    for attempt in 1..=PENCIL_RETRIES + 1 {
        diag.pencil_attempts = attempt;
        let alpha = gaussian_vector(rng, k_count);
        let beta = gaussian_vector(rng, k_count);
        let combine = |c: &DVector<f64>| {
            reduced
                .iter()
                .zip(c.iter())
                .fold(DMatrix::zeros(rank, rank), |acc, (s, w)| acc + s * *w)
        };
        let (x, y) = (combine(&alpha), combine(&beta));
        let sv = singular_values(&y).expect("finite");
        let cond = sv[0] / sv[rank - 1];
        let Some(y_inv) = y.try_inverse().filter(|_| cond.is_finite() && cond < 1e12) else {
            last = RecoveryFailure::DegeneratePencil {
                attempts: attempt,
                separation: 0.0,
            };
            continue;
        };
        let m = x * y_inv;
        let eig = m.complex_eigenvalues();
        let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let imag = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if imag > opts.separation_tol * radius {
            last = RecoveryFailure::ComplexSpectrum { imag };
            continue;
        }
        let lambdas: Vec<f64> = eig.iter().map(|z| z.re).collect();
        let mut separation = f64::INFINITY;
        for i in 0..rank {
            for j in i + 1..rank {
                separation = separation.min((lambdas[i] - lambdas[j]).abs() / radius);
            }
        }
        if separation < opts.separation_tol {
            last = RecoveryFailure::DegeneratePencil {
                attempts: attempt,
                separation,
            };
            continue;
        }
        diag.pencil_condition = Some(cond);
        diag.eigen_separation = Some(separation);
        let eigvecs = DMatrix::from_columns(
            &lambdas
                .iter()
                .map(|&l| null_vector(&(&m - DMatrix::identity(rank, rank) * l)))
                .collect::<Vec<_>>(),
        );
        return Ok(u * eigvecs);
    }
    Err(last)
}

/// Recovers `v` from a vector proportional to `v^{(x) s}`: the dominant left
/// singular vector of its `d0 x d0^(s-1)` reshaping. The overall scale is
/// left to the least-squares step for the outer weights.
fn extract_row(b: &[f64], d0: usize, s: usize) -> Vec<f64> {
    let mut v: Vec<f64> = if s == 1 {
        b.to_vec()
    } else {
        let m = DMatrix::from_column_slice(d0, b.len() / d0, b);
        let svd = m.svd(true, false);
        let k = (0..svd.singular_values.len())
            .max_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("non-empty");
        svd.u.expect("requested").column(k).iter().copied().collect()
    };
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    let scale = pivot.signum() / norm;
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

/// Least-squares outer weights for fixed inner rows: columns of the design
/// matrix are the coefficients of `(v_i^T x)^r`.
fn outer_weights(p: &PolyVec, w1: &DMatrix<f64>, r: u32) -> Result<DMatrix<f64>> {
    let basis = p.basis()?;
    let factorial = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let design = DMatrix::from_fn(basis.len(), w1.nrows(), |c, i| {
        let exps = basis.monomial_at(c);
        let weight = factorial(r) / exps.iter().map(|&e| factorial(e)).product::<f64>();
        weight * exps.iter().enumerate().map(|(j, &e)| w1[(i, j)].powi(e as i32)).product::<f64>()
    });
    let rhs = p.coeffs().transpose();
    let sol = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(sol.transpose())
}

fn mode1_slices(t: &Tensor) -> Vec<DMatrix<f64>> {
    let (k_dim, i_dim, j_dim) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let data = t.data();
    (0..k_dim)
        .map(|k| DMatrix::from_fn(i_dim, j_dim, |i, j| data[k + k_dim * (i + i_dim * j)]))
        .collect()
}

/// Recovers a two-layer block `p = W2 (W1 x)^r` with `d1` hidden neurons.
pub fn recover_2layer(p: &PolyVec, d1: usize, r: u32, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let arch = Architecture::new(vec![p.n_vars(), d1, p.n_out()], vec![r], false)?;
    if !p.homogeneous() {
        return Err(Error::InvalidArgument("two-layer recovery needs a homogeneous polynomial".into()));
    }
    check_target(p, &arch)?;
    let (d0, d2) = (p.n_vars(), p.n_out());
    if r < 2 {
        return Err(fail(1, RecoveryFailure::Unsupported("degree 1 blocks are never identifiable".into())));
    }
    let f = tensor_from_poly(p)?;
    let (flat, s, method) = if d1 == 1 {
        (flatten_st(&f, 1, r as usize - 1)?, 1, "rank-one flattening")
    } else if d2 >= 2 {
        let s = r as usize / 2;
        (flatten_st(&f, s, r as usize - s)?, s, "jennrich (s,t)-flattening")
    } else if r >= 3 {
        let s = (r as usize - 1) / 2;
        (flatten_single_output(&f, r)?, s, "jennrich single-output flattening")
    } else {
        return Err(fail(
            1,
            RecoveryFailure::Unsupported("a single output needs activation degree at least 3".into()),
        ));
    };
    if binomial(d0 + s - 1, s).is_some_and(|room| room < d1) {
        return Err(fail(
            1,
            RecoveryFailure::Unsupported(format!(
                "the pencil needs C(d0 + s - 1, s) >= d1 with d0 = {d0}, s = {s}, d1 = {d1}"
            )),
        ));
    }
    let mut diag = Diagnostics {
        method: method.into(),
        ..Diagnostics::default()
    };
    let mut rng = seeded(opts.seed);
    let factors = jennrich(&mode1_slices(&flat), d1, opts, &mut rng, &mut diag).map_err(|e| fail(1, e))?;
    let rows: Vec<Vec<f64>> = (0..d1)
        .map(|i| extract_row(factors.column(i).as_slice(), d0, s))
        .collect();
    let w1 = DMatrix::from_fn(d1, d0, |i, j| rows[i][j]);
    let w2 = outer_weights(p, &w1, r)?;
    let mut params = Params {
        weights: vec![w1, w2],
        biases: None,
    };
    polish(&arch, p, &mut params, opts, &mut diag)?;
    finish(&arch, p, params, opts, diag, 1)
}

fn finish(
    arch: &Architecture,
    p: &PolyVec,
    params: Params,
    opts: &RecoverOptions,
    diagnostics: Diagnostics,
    layer: usize,
) -> Result<RecoveryResult> {
    let residual = residual_of(arch, &params, p)?;
    let tol = opts.tol;
    if !(residual <= tol) {
        return Err(fail(layer, RecoveryFailure::ResidualTooLarge { residual, tol }));
    }
    Ok(RecoveryResult {
        params,
        residual,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Least-squares fitting on the coefficient map

/// Affine parametrization of hPNN weights. Hidden entries listed in
/// `hidden_free` are optimized, the other hidden entries stay at `template`,
/// and the output layer is re-solved by linear least squares whenever the
/// hidden weights change (variable projection).
struct Fit<'a> {
    arch: &'a Architecture,
    template: Vec<f64>,
    hidden_free: Vec<usize>,
    /// `(layer, row)` of hidden rows that are held fixed.
    fixed_rows: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl<'a> Fit<'a> {
    fn new(arch: &'a Architecture, constant_units: bool) -> Self {
        let mut offsets = Vec::new();
        let mut acc = 0;
        for pair in arch.widths.windows(2) {
            offsets.push(acc);
            acc += pair[0] * pair[1];
        }
        let hidden_len = offsets[arch.n_layers() - 1];
        let mut template = vec![0.0; acc];
        let mut fixed = vec![false; hidden_len];
        let mut fixed_rows = Vec::new();
        if constant_units {
            // the last unit of every hidden layer copies the last input unit
            for l in 0..arch.n_layers() - 1 {
                let (cols, row) = (arch.widths[l], arch.widths[l + 1] - 1);
                for j in 0..cols {
                    fixed[offsets[l] + row * cols + j] = true;
                }
                template[offsets[l] + row * cols + cols - 1] = 1.0;
                fixed_rows.push((l, row));
            }
        }
        let hidden_free = (0..hidden_len).filter(|&i| !fixed[i]).collect();
        Fit {
            arch,
            template,
            hidden_free,
            fixed_rows,
            offsets,
        }
    }

    fn full(&self, theta: &[f64]) -> Vec<f64> {
        let mut full = self.template.clone();
        for (&i, &t) in self.hidden_free.iter().zip(theta) {
            full[i] = t;
        }
        full
    }

    fn theta(&self, full: &[f64]) -> Vec<f64> {
        self.hidden_free.iter().map(|&i| full[i]).collect()
    }

    /// Rescales every free hidden row to unit norm and compensates the next
    /// layer, which leaves the network polynomial unchanged.
    fn normalize(&self, theta: &mut Vec<f64>) {
        let mut full = self.full(theta);
        let w = &self.arch.widths;
        for l in 0..self.arch.n_layers() - 1 {
            let (cols, next_cols) = (w[l], w[l + 1]);
            let r = self.arch.degrees[l] as i32;
            for i in 0..w[l + 1] {
                if self.fixed_rows.contains(&(l, i)) {
                    continue;
                }
                let row = self.offsets[l] + i * cols;
                let norm = full[row..row + cols].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    continue;
                }
                full[row..row + cols].iter_mut().for_each(|v| *v /= norm);
                let comp = norm.powi(r);
                for k in 0..w[l + 2] {
                    full[self.offsets[l + 1] + k * next_cols + i] *= comp;
                }
            }
        }
        *theta = self.theta(&full);
    }

    /// Weights with the output layer solved by least squares for `target`
    /// (`d_L x N`), plus an orthonormal basis of the feature span.
    fn solve_output(&self, theta: &[f64], target: &DMatrix<f64>) -> Result<(Params, DMatrix<f64>)> {
        let mut params = weights_from_vec(self.arch, &self.full(theta))?;
        let l_last = self.arch.n_layers() - 1;
        let phi = internal_features(self.arch, &params, l_last)?.into_coeffs().transpose();
        let svd = phi.svd(true, true);
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1e-13 * smax)
            .collect();
        let u = svd.u.as_ref().expect("requested");
        let basis = DMatrix::from_fn(u.nrows(), keep.len(), |i, j| u[(i, keep[j])]);
        let sol = svd
            .solve(&target.transpose(), 1e-13 * smax)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        params.weights[l_last] = sol.transpose();
        Ok((params, basis))
    }

    /// Projected residual and its Kaufman Jacobian with respect to `theta`.
    fn evaluate(&self, theta: &[f64], target: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (params, basis) = self.solve_output(theta, target)?;
        let (p, jac) = coefficient_jacobian(self.arch, &params)?;
        let c = p.coeffs();
        let n = c.ncols();
        let e = DVector::from_fn(c.nrows() * n, |i, _| c[(i / n, i % n)] - target[(i / n, i % n)]);
        let mut j = DMatrix::from_fn(jac.nrows(), self.hidden_free.len(), |i, k| jac[(i, self.hidden_free[k])]);
        for k in 0..c.nrows() {
            let mut block = j.rows_mut(k * n, n);
            let proj = &basis * (basis.transpose() * &block);
            block -= proj;
        }
        Ok((e, j))
    }

    fn random_theta(&self, rng: &mut SeededRng) -> Vec<f64> {
        (0..self.hidden_free.len()).map(|_| gaussian(rng)).collect()
    }
}

struct FitOutcome {
    theta: Vec<f64>,
    max_err: f64,
    iterations: usize,
}

/// Levenberg-Marquardt with the gain-ratio damping update.
///
/// With `give_up` set, a run whose cost has not dropped tenfold over the
/// last `STALL_WINDOW` iterations while still far from a fit is abandoned.
fn levenberg_marquardt(
    fit: &Fit,
    target: &DMatrix<f64>,
    theta0: Vec<f64>,
    max_iters: usize,
    give_up: bool,
) -> Result<FitOutcome> {
    let mut theta = theta0;
    fit.normalize(&mut theta);
    let (mut e, mut j) = fit.evaluate(&theta, target)?;
    let mut cost = 0.5 * e.norm_squared();
    let mut mu = 1e-3 * (j.transpose() * &j).diagonal().max().max(1e-12);
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut history = vec![cost];
    while iterations < max_iters && e.amax() > 1e-15 && !theta.is_empty() {
        iterations += 1;
        if give_up && history.len() > STALL_WINDOW {
            let before = history[history.len() - 1 - STALL_WINDOW];
            if cost > 0.1 * before && e.amax() > STALL_FLOOR {
                break;
            }
        }
        history.push(cost);
        let jt = j.transpose();
        let g = &jt * &e;
        let mut a = &jt * &j;
        for i in 0..a.nrows() {
            a[(i, i)] += mu;
        }
        let Some(chol) = a.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let delta = -chol.solve(&g);
        let theta_norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if delta.norm() <= 1e-15 * (theta_norm + 1e-15) {
            break;
        }
        let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
        fit.normalize(&mut trial);
        let (e_new, j_new) = fit.evaluate(&trial, target)?;
        let cost_new = 0.5 * e_new.norm_squared();
        let predicted = 0.5 * delta.dot(&(delta.scale(mu) - &g));
        let rho = if predicted > 0.0 { (cost - cost_new) / predicted } else { -1.0 };
        if rho > 0.0 && cost_new.is_finite() {
            theta = trial;
            e = e_new;
            j = j_new;
            cost = cost_new;
            mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
        } else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e20 {
                break;
            }
        }
    }
    Ok(FitOutcome {
        max_err: e.amax(),
        theta,
        iterations,
    })
}

/// Coefficients divided by their largest magnitude, and that magnitude.
fn normalized_target(p: &PolyVec) -> (DMatrix<f64>, f64) {
    let scale = p.max_abs();
    (p.coeffs() / scale, scale)
}

/// Final weights for `theta`, with the output layer solved against the
/// unnormalized target.
fn assemble(fit: &Fit, theta: &[f64], p: &PolyVec) -> Result<Params> {
    Ok(fit.solve_output(theta, p.coeffs())?.0)
}

/// Multi-start fit of an hPNN (optionally with fixed constant units) to `p`.
fn fit_multistart(
    arch: &Architecture,
    p: &PolyVec,
    constant_units: bool,
    opts: &RecoverOptions,
    diag: &mut Diagnostics,
) -> Result<Params> {
    let fit = Fit::new(arch, constant_units);
    let (target, _) = normalized_target(p);
    let mut rng = seeded(opts.seed);
    let mut best: Option<FitOutcome> = None;
    for start in 1..=opts.max_starts.max(1) {
        diag.starts = start;
        let outcome = levenberg_marquardt(&fit, &target, fit.random_theta(&mut rng), opts.max_iters, true)?;
        diag.iterations += outcome.iterations;
        let done = outcome.max_err <= FIT_EXACT;
        if best.as_ref().is_none_or(|b| outcome.max_err < b.max_err) {
            best = Some(outcome);
        }
        if done {
            break;
        }
    }
    let mut best = best.expect("at least one start");
    if best.max_err > FIT_EXACT {
        // slow final approach near an ill-conditioned solution
        let outcome = levenberg_marquardt(&fit, &target, best.theta.clone(), 10 * opts.max_iters, false)?;
        diag.iterations += outcome.iterations;
        if outcome.max_err < best.max_err {
            best = outcome;
        }
    }
    if !(best.max_err <= FIT_ACCEPT) {
        // a loose fit near a nearly singular network may sit on a different orbit
        return Err(fail(
            arch.n_layers(),
            RecoveryFailure::NotConverged {
                starts: diag.starts,
                error: best.max_err,
            },
        ));
    }
    assemble(&fit, &best.theta, p)
}

/// A few damped Gauss-Newton steps from a close estimate to remove the
/// round-off of the algebraic stage.
fn polish(arch: &Architecture, p: &PolyVec, params: &mut Params, opts: &RecoverOptions, diag: &mut Diagnostics) -> Result<()> {
    let fit = Fit::new(arch, false);
    let (target, _) = normalized_target(p);
    let outcome = levenberg_marquardt(&fit, &target, fit.theta(&weights_to_vec(params)), opts.max_iters.min(50), false)?;
    diag.iterations += outcome.iterations;
    let polished = assemble(&fit, &outcome.theta, p)?;
    if residual_of(arch, &polished, p)? <= residual_of(arch, params, p)? {
        *params = polished;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Public entry points

fn require_certificate(verdict: Overall, opts: &RecoverOptions, layer: usize) -> Result<()> {
    if verdict == Overall::UniqueCertified || opts.allow_uncertified {
        Ok(())
    } else {
        Err(fail(
            layer,
            RecoveryFailure::Unsupported(
                "architecture is not certified identifiable; enable the override to attempt recovery anyway".into(),
            ),
        ))
    }
}

/// Recovers an hPNN from its homogeneous polynomial.
pub fn recover_deep(p: &PolyVec, arch: &Architecture, opts: &RecoverOptions) -> Result<RecoveryResult> {
    arch.validate()?;
    if arch.has_bias {
        return Err(Error::InvalidArgument("use recover_with_bias for biased architectures".into()));
    }
    if !p.homogeneous() {
        return Err(Error::InvalidArgument("an hPNN polynomial must be homogeneous".into()));
    }
    check_target(p, arch)?;
    let l_total = arch.n_layers();
    if l_total == 1 {
        let params = Params {
            weights: vec![p.coeffs().clone()],
            biases: None,
        };
        let diag = Diagnostics {
            method: "linear read-off".into(),
            ..Diagnostics::default()
        };
        return finish(arch, p, params, opts, diag, 1);
    }
    require_certificate(cert_architecture(arch)?.overall, opts, l_total)?;
    if l_total == 2 {
        return match recover_2layer(p, arch.widths[1], arch.degrees[0], opts) {
            Ok(res) => Ok(res),
            // only a pencil that cannot apply hands over to the fit; its
            // other failures are diagnoses of the input
            Err(err @ Error::Recovery {
                reason: RecoveryFailure::Unsupported(_),
                ..
            }) => {
                let mut diag = Diagnostics {
                    method: "least squares (pencil fallback)".into(),
                    notes: vec![format!("pencil stage: {err}")],
                    ..Diagnostics::default()
                };
                match fit_multistart(arch, p, false, opts, &mut diag)
                    .and_then(|params| finish(arch, p, params, opts, diag, l_total))
                {
                    Ok(res) => Ok(res),
                    Err(_) => Err(err),
                }
            }
            Err(err) => Err(err),
        };
    }
    let mut diag = Diagnostics {
        method: "least squares".into(),
        ..Diagnostics::default()
    };
    let params = fit_multistart(arch, p, false, opts, &mut diag)?;
    finish(arch, p, params, opts, diag, l_total)
}

/// Reads a biased network off homogenized weights: in every hidden layer the
/// unit whose incoming row ignores the previous layer is moved last and
/// rescaled to pass the constant through unchanged.
fn destructure(arch: &Architecture, lifted: &Params) -> std::result::Result<Params, (usize, RecoveryFailure)> {
    let l_total = arch.n_layers();
    let mut w = lifted.weights.clone();
    for l in 0..l_total - 1 {
        let cols = w[l].ncols();
        let rows = w[l].nrows();
        let candidates: Vec<usize> = (0..rows)
            .filter(|&i| {
                let row = w[l].row(i);
                let input = row.columns(0, cols - 1).norm();
                input <= CONSTANT_UNIT_TOL * row.norm()
            })
            .collect();
        let [unit] = candidates[..] else {
            return Err((l + 1, RecoveryFailure::MissingConstantUnit));
        };
        let c = w[l][(unit, cols - 1)];
        let order: Vec<usize> = (0..rows).filter(|&i| i != unit).chain([unit]).collect();
        let next = &w[l + 1];
        let mut moved_next = DMatrix::from_fn(next.nrows(), rows, |k, i| next[(k, order[i])]);
        let mut moved = DMatrix::from_fn(rows, cols, |i, j| w[l][(order[i], j)]);
        moved.row_mut(rows - 1).fill(0.0);
        moved[(rows - 1, cols - 1)] = 1.0;
        moved_next.column_mut(rows - 1).scale_mut(c.powi(arch.degrees[l] as i32));
        w[l] = moved;
        w[l + 1] = moved_next;
    }
    let mut weights = Vec::with_capacity(l_total);
    let mut biases = Vec::with_capacity(l_total);
    for (l, m) in w.iter().enumerate() {
        let (rows, cols) = (arch.widths[l + 1], arch.widths[l]);
        weights.push(m.view((0, 0), (rows, cols)).into_owned());
        biases.push(m.view((0, cols), (rows, 1)).column(0).into_owned());
    }
    Ok(Params {
        weights,
        biases: Some(biases),
    })
}

/// Recovers a biased network from its (inhomogeneous) polynomial.
pub fn recover_with_bias(p: &PolyVec, arch: &Architecture, opts: &RecoverOptions) -> Result<RecoveryResult> {
    arch.validate()?;
    if !arch.has_bias {
        return Err(Error::InvalidArgument("recover_with_bias needs a biased architecture".into()));
    }
    if p.homogeneous() {
        return Err(Error::InvalidArgument("a biased network polynomial is given in the full basis".into()));
    }
    check_target(p, arch)?;
    let l_total = arch.n_layers();
    if l_total >= 2 {
        require_certificate(cert_architecture_bias(arch)?.overall, opts, l_total)?;
    }
    let lifted = homogenize_poly(p)?;
    let mut hwidths: Vec<usize> = arch.widths.iter().map(|d| d + 1).collect();
    hwidths[l_total] = arch.output_dim();
    let harch = Architecture::new(hwidths, arch.degrees.clone(), false)?;
    let lifted_opts = RecoverOptions {
        allow_uncertified: true,
        ..opts.clone()
    };

    let mut notes = Vec::new();
    if l_total <= 2 {
        match recover_deep(&lifted, &harch, &lifted_opts) {
            Ok(res) => match destructure(arch, &res.params) {
                Ok(params) => {
                    let mut diag = res.diagnostics;
                    diag.notes.push("constant units located in the homogenized network".into());
                    return finish(arch, p, params, opts, diag, l_total);
                }
                Err((layer, reason)) => notes.push(format!("layer {layer}: {reason}")),
            },
            Err(err) => notes.push(format!("unstructured stage: {err}")),
        }
    }
    let mut diag = Diagnostics {
        method: "least squares with constant units".into(),
        notes,
        ..Diagnostics::default()
    };
    let lifted_params = fit_multistart(&harch, &lifted, true, opts, &mut diag)?;
    let params = destructure(arch, &lifted_params).map_err(|(layer, reason)| fail(layer, reason))?;
    finish(arch, p, params, opts, diag, l_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{are_equivalent, apply_equivalence, EquivalenceWitness};
    use crate::polyspace::PolyRing;
    use crate::rng::gaussian_matrix;
    use proptest::prelude::*;

    const EQ_TOL: f64 = 1e-6;

    fn arch(w: &[usize], r: &[u32], bias: bool) -> Architecture {
        Architecture::new(w.to_vec(), r.to_vec(), bias).unwrap()
    }

    fn opts(seed: u64) -> RecoverOptions {
        RecoverOptions {
            seed,
            ..RecoverOptions::default()
        }
    }

    fn round_trip(a: &Architecture, seed: u64) -> (Params, Result<RecoveryResult>) {
        let truth = Params::random(a, &mut seeded(seed));
        let p = expand(a, &truth).unwrap();
        let res = if a.has_bias {
            recover_with_bias(&p, a, &opts(seed))
        } else {
            recover_deep(&p, a, &opts(seed))
        };
        (truth, res)
    }

    #[test]
    fn running_example_round_trip() {
        let a = arch(&[3, 2, 2], &[2], false);
        for seed in 0..10 {
            let (truth, res) = round_trip(&a, seed);
            let res = res.unwrap();
            assert!(res.residual <= 1e-9, "seed {seed}: {}", res.residual);
            assert!(are_equivalent(&a, &truth, &res.params, EQ_TOL).is_some(), "seed {seed}");
            assert!(res.diagnostics.method.starts_with("jennrich"));
        }
    }

    #[test]
    fn odd_degree_and_single_output_blocks() {
        for (w, r) in [(vec![3, 3, 2], 3u32), (vec![3, 3, 1], 3), (vec![2, 2, 1], 5), (vec![4, 3, 3], 4)] {
            let a = arch(&w, &[r], false);
            let truth = Params::random(&a, &mut seeded(11));
            let p = expand(&a, &truth).unwrap();
            let res = recover_2layer(&p, w[1], r, &opts(3)).unwrap();
            assert!(are_equivalent(&a, &truth, &res.params, EQ_TOL).is_some(), "{w:?} r={r}");
        }
    }

    #[test]
    fn rank_one_square() {
        let ring = PolyRing::new(3, 2).unwrap();
        let form = ring.affine(&[1.0, -2.0, 0.5], 0.0);
        let p = ring.to_polyvec(&[ring.pow(&form, 2)], 2, true).unwrap();
        let res = recover_2layer(&p, 1, 2, &opts(0)).unwrap();
        let w1 = &res.params.weights[0];
        let ratio = w1[(0, 0)] / 1.0;
        for (j, v) in [1.0, -2.0, 0.5].iter().enumerate() {
            assert!((w1[(0, j)] - ratio * v).abs() < 1e-12);
        }
        assert!(res.residual < 1e-12);
    }

    #[test]
    fn duplicated_rows_are_reported() {
        let a = arch(&[3, 2, 2], &[2], false);
        let mut truth = Params::random(&a, &mut seeded(4));
        let row = truth.weights[0].row(0) * 1.5;
        truth.weights[0].set_row(1, &row);
        let p = expand(&a, &truth).unwrap();
        let err = recover_2layer(&p, 2, 2, &opts(0)).unwrap_err();
        assert!(matches!(
            err,
            Error::Recovery {
                reason: RecoveryFailure::RankDeficient { expected: 2, found: 1, .. },
                ..
            }
        ));
    }

    #[test]
    fn wrong_width_is_reported() {
        let a = arch(&[3, 3, 2], &[2], false);
        let p = expand(&a, &Params::random(&a, &mut seeded(5))).unwrap();
        assert!(matches!(recover_2layer(&p, 2, 2, &opts(0)), Err(Error::Recovery { .. })));
        let single = arch(&[3, 2, 1], &[2], false);
        let q = expand(&single, &Params::random(&single, &mut seeded(5))).unwrap();
        assert!(matches!(
            recover_2layer(&q, 2, 2, &opts(0)),
            Err(Error::Recovery { reason: RecoveryFailure::Unsupported(_), .. })
        ));
    }

    #[test]
    fn deep_round_trip() {
        let a = arch(&[3, 3, 2, 2], &[2, 2], false);
        for seed in 0..4 {
            let (truth, res) = round_trip(&a, seed);
            let res = res.unwrap();
            assert!(res.residual <= 1e-6);
            assert!(are_equivalent(&a, &truth, &res.params, EQ_TOL).is_some(), "seed {seed}");
        }
    }

    #[test]
    fn pencil_out_of_range_falls_back_to_fitting() {
        let a = arch(&[2, 3, 2], &[2], false);
        let o = RecoverOptions {
            allow_uncertified: true,
            ..opts(2)
        };
        let truth = Params::random(&a, &mut seeded(2));
        let res = recover_deep(&expand(&a, &truth).unwrap(), &a, &o).unwrap();
        assert!(res.diagnostics.method.contains("fallback"));
        assert!(res.residual <= 1e-6);
    }

    #[test]
    fn random_polynomial_is_rejected() {
        let a = arch(&[3, 3, 2, 2], &[2, 2], false);
        let coeffs = gaussian_matrix(&mut seeded(9), 2, 15);
        let p = PolyVec::new(3, 4, true, coeffs).unwrap();
        let o = RecoverOptions {
            max_starts: 3,
            ..opts(1)
        };
        assert!(matches!(
            recover_deep(&p, &a, &o),
            Err(Error::Recovery { reason: RecoveryFailure::NotConverged { starts: 3, .. }, .. })
        ));
    }

    #[test]
    fn linear_and_uncertified_cases() {
        let a = arch(&[3, 2], &[], false);
        let (truth, res) = round_trip(&a, 1);
        assert_eq!(res.unwrap().params, truth);
        let wide = arch(&[2, 5, 2, 2], &[2, 2], false);
        let p = expand(&wide, &Params::random(&wide, &mut seeded(1))).unwrap();
        assert!(matches!(
            recover_deep(&p, &wide, &opts(0)),
            Err(Error::Recovery { reason: RecoveryFailure::Unsupported(_), .. })
        ));
    }

    #[test]
    fn biased_round_trips() {
        let a = arch(&[3, 2, 2], &[2], true);
        for seed in 0..5 {
            let (truth, res) = round_trip(&a, seed);
            let res = res.unwrap();
            assert!(res.residual <= 1e-9);
            assert!(are_equivalent(&a, &truth, &res.params, EQ_TOL).is_some(), "seed {seed}");
        }
        let deep = arch(&[2, 2, 2, 2], &[2, 2], true);
        let (truth, res) = round_trip(&deep, 3);
        let res = res.unwrap();
        assert!(res.residual <= 1e-6);
        assert!(are_equivalent(&deep, &truth, &res.params, EQ_TOL).is_some());
    }

    #[test]
    fn zero_bias_net_recovers_zero_biases() {
        let a = arch(&[3, 2, 2], &[2], true);
        let mut truth = Params::random(&a, &mut seeded(6));
        truth.biases.as_mut().unwrap().iter_mut().for_each(|b| b.fill(0.0));
        let p = expand(&a, &truth).unwrap();
        let res = recover_with_bias(&p, &a, &opts(0)).unwrap();
        for b in res.params.biases.as_ref().unwrap() {
            assert!(b.amax() <= 1e-8, "{b}");
        }
    }

    #[test]
    fn residual_is_recomputed() {
        let a = arch(&[3, 2, 2], &[2], false);
        let (_, res) = round_trip(&a, 8);
        let res = res.unwrap();
        let p = expand(&a, &Params::random(&a, &mut seeded(8))).unwrap();
        let again = expand(&a, &res.params).unwrap().max_abs_diff(&p).unwrap();
        assert!((again - res.residual).abs() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn recovery_is_equivariant(seed in any::<u64>()) {
            let a = arch(&[3, 2, 2], &[2], false);
            let mut rng = seeded(seed);
            let truth = Params::random(&a, &mut rng);
            let moved = apply_equivalence(&a, &truth, &EquivalenceWitness::random(&a, &mut rng)).unwrap();
            let res = recover_deep(&expand(&a, &moved).unwrap(), &a, &opts(seed)).unwrap();
            prop_assert!(are_equivalent(&a, &truth, &res.params, EQ_TOL).is_some());
        }
    }
}
