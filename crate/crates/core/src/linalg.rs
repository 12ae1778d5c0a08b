//! Small dense helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::Matrix;

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with threshold `max(rel·σ_max, abs_floor)`.
pub fn rank(m: &Matrix, rel: f64, abs_floor: f64) -> usize {
    let s = singular_values(m);
    let cut = (rel * s.first().copied().unwrap_or(0.0)).max(abs_floor);
    s.iter().filter(|&&x| x > cut).count()
}

pub fn sigma_min(m: &Matrix) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Matrix::from_fn(n, c, |i, j| rows[i][j])
}

/// The `count` right singular vectors of a complex matrix with the smallest
/// singular values.
pub fn complex_null_space(m: &DMatrix<Complex<f64>>, count: usize) -> Vec<DVector<Complex<f64>>> {
    complex_null_space_with_values(m, count)
        .into_iter()
        .map(|(v, _)| v)
        .collect()
}

/// As [`complex_null_space`], pairing each vector with its singular value.
pub fn complex_null_space_with_values(
    m: &DMatrix<Complex<f64>>,
    count: usize,
) -> Vec<(DVector<Complex<f64>>, f64)> {
    let n = m.ncols();
    // pad to square so the SVD returns a full V
    let mut sq = DMatrix::<Complex<f64>>::zeros(n.max(m.nrows()), n);
    sq.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    order
        .into_iter()
        .take(count)
        .map(|k| (v_t.row(k).adjoint().into_owned(), svd.singular_values[k]))
        .collect()
}
