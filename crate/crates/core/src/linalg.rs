//! Small dense helpers: nullspaces, ranks and condition estimates.
//!
//! All matrices here are tiny (at most a handful of rows/columns), so the
//! symmetric eigendecomposition of the Gram matrix is accurate enough and
//! sidesteps thin-SVD shape questions for wide inputs.

use nalgebra::{DMatrix, DVector};

/// Relative rank cutoff: singular values below `RANK_RTOL * sigma_max`
/// count as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Numerical rank with the shared relative cutoff.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        None | Some(&0.0) => 0,
        Some(&smax) => sv.iter().filter(|&&s| s > RANK_RTOL * smax).count(),
    }
}

/// Orthonormal basis of the (right) nullspace of `a`, i.e. all `v` with
/// `a v = 0`. Rows of `a` may be fewer than columns; zero rows are allowed.
///
/// The rowspace comes from the thin SVD; the complement is completed from
/// coordinate directions by pivoted Gram-Schmidt, which keeps full
/// precision on the tiny matrices involved.
pub fn nullspace(a: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let n = a.ncols();
    let mut span: Vec<DVector<f64>> = Vec::new();
    if a.nrows() > 0 {
        let svd = a.clone().svd(false, true);
        let vt = svd.v_t.as_ref().expect("svd with v_t requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if smax > 0.0 && s > RANK_RTOL * smax {
                span.push(vt.row(i).transpose());
            }
        }
    }
    let rank = span.len();
    let mut null = Vec::with_capacity(n - rank);
    while span.len() < n {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for j in 0..n {
            let mut v = DVector::from_fn(n, |i, _| ((i == j) as u8) as f64);
            for _ in 0..2 {
                for u in &span {
                    let c = u.dot(&v);
                    v -= u * c;
                }
            }
            let norm = v.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, v));
            }
        }
        let (norm, v) = best.expect("nonzero column count");
        span.push(v / norm);
        null.push(span.last().unwrap().clone());
    }
    null
}

/// Orthonormal basis of the column span of `a`, truncated at the rank cutoff.
pub fn column_span(a: &DMatrix<f64>) -> Vec<DVector<f64>> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Vec::new();
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let mut basis = Vec::new();
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > RANK_RTOL * smax {
            basis.push(u.column(j).into_owned());
        }
    }
    basis
}

/// Solve the square system `a x = b`, also returning the 2-norm condition
/// estimate sigma_max / sigma_min.
pub fn solve_with_condition(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let x = svd.solve(b, 0.0).ok()?;
    Some((x, condition))
}

/// Assemble a matrix whose rows are the given covectors.
pub fn rows_from(covectors: &[DVector<f64>], ncols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(covectors.len(), ncols);
    for (i, w) in covectors.iter().enumerate() {
        m.row_mut(i).copy_from(&w.transpose());
    }
    m
}

/// Assemble a matrix whose columns are the given vectors.
pub fn cols_from(vectors: &[DVector<f64>], nrows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nrows, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        m.column_mut(j).copy_from(v);
    }
    m
}
