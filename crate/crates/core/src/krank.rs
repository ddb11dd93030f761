//! Numerical rank and Kruskal rank with explicit tolerances.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_finite, Error, Result};

/// Default relative tolerance on singular values.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Largest column count accepted by [`kruskal_rank`].
pub const MAX_KRANK_COLUMNS: usize = 14;

/// Verdicts whose deciding singular value ratio lies within this factor of
/// the tolerance are flagged as low confidence.
pub const LOW_CONFIDENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    pub krank: usize,
    /// A dependent set of `krank + 1` columns (0-based), when one exists.
    pub limiting_subset: Option<Vec<usize>>,
    pub tol_used: f64,
    /// Smallest `sigma_min / sigma_max` over the column subsets of size
    /// `krank` after normalizing columns; a lower bound when the whole matrix
    /// has full column rank.
    pub margin: f64,
    /// `sigma_min / sigma_max` of the limiting subset.
    pub limiting_ratio: Option<f64>,
    pub low_confidence: bool,
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(m.as_slice(), "matrix")?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let sv = singular_values(m)?;
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}

/// `sigma_min / sigma_max` of unit-normalized columns, 0 when dependent by shape.
fn subset_ratio(cols: &[Vec<f64>], subset: &[usize], rows: usize) -> f64 {
    if subset.len() > rows || subset.iter().any(|&j| cols[j].is_empty()) {
        return 0.0;
    }
    let m = DMatrix::from_fn(rows, subset.len(), |i, c| cols[subset[c]][i]);
    let sv = singular_values(&m).expect("finite by construction");
    let smax = sv[0];
    if smax == 0.0 {
        0.0
    } else {
        sv[sv.len() - 1] / smax
    }
}

/// Advances `subset` to the next `k`-combination of `0..n` in lexicographic order.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Kruskal rank: the largest `k` such that every `k` columns are independent.
///
/// Columns are scaled to unit norm first (the Kruskal rank does not depend on
/// column scaling); a column whose norm is at most `tol` times the largest
/// column norm counts as zero. A subset of `k` columns is independent when
/// its `k`-th singular value exceeds `tol` times its largest one.
pub fn kruskal_rank(m: &DMatrix<f64>, tol: f64) -> Result<RankReport> {
    check_finite(m.as_slice(), "matrix")?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let n = m.ncols();
    if n > MAX_KRANK_COLUMNS {
        return Err(Error::TooLarge(format!(
            "Kruskal rank of {n} columns exceeds the limit of {MAX_KRANK_COLUMNS}"
        )));
    }
    let rows = m.nrows();
    let norms: Vec<f64> = (0..n).map(|j| m.column(j).norm()).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            if norms[j] == 0.0 || norms[j] <= tol * max_norm {
                Vec::new()
            } else {
                m.column(j).iter().map(|v| v / norms[j]).collect()
            }
        })
        .collect();

    let finish = |krank: usize, limiting: Option<(Vec<usize>, f64)>, margin: f64| {
        let low = margin <= LOW_CONFIDENCE_FACTOR * tol
            || limiting.as_ref().is_some_and(|(_, r)| *r >= tol / LOW_CONFIDENCE_FACTOR);
        RankReport {
            krank,
            limiting_ratio: limiting.as_ref().map(|(_, r)| *r),
            limiting_subset: limiting.map(|(s, _)| s),
            tol_used: tol,
            margin,
            low_confidence: low,
        }
    };

    if n == 0 {
        return Ok(finish(0, None, f64::INFINITY));
    }
    let all: Vec<usize> = (0..n).collect();
    let full_ratio = subset_ratio(&cols, &all, rows);
    if full_ratio > tol {
        return Ok(finish(n, None, full_ratio));
    }
    // ascending search for the smallest dependent subset
    let mut margin = f64::INFINITY;
    for k in 1..=n {
        let mut subset: Vec<usize> = (0..k).collect();
        let mut level_min = f64::INFINITY;
        loop {
            let ratio = subset_ratio(&cols, &subset, rows);
            if ratio <= tol {
                return Ok(finish(k - 1, Some((subset, ratio)), margin));
            }
            level_min = level_min.min(ratio);
            if !next_combination(&mut subset, n) {
                break;
            }
        }
        margin = level_min;
    }
    unreachable!("the full set was found dependent")
}

/// Lower bound `min(R, k * krank - k + 1)` on the Kruskal rank of a `k`-th
/// Khatri-Rao power of a matrix with `R` columns and Kruskal rank `krank_a`.
pub fn kr_power_bound(krank_a: usize, r: usize, k: usize) -> usize {
    if krank_a == 0 || k == 0 {
        return krank_a.min(r);
    }
    r.min(k * krank_a - k + 1)
}

/// Kruskal rank of a generic `rows x cols` matrix.
pub fn generic_krank(rows: usize, cols: usize) -> usize {
    rows.min(cols)
}
