//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Numerical rank: singular values above `rel_tol * sigma_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    /// Absolute singular-value cutoff that was applied.
    pub threshold: f64,
    pub singular_values: Vec<f64>,
}

pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tol: f64) -> RankInfo {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return RankInfo {
            rank: 0,
            threshold: 0.0,
            singular_values: Vec::new(),
        };
    }
    let sv = matrix.singular_values();
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let threshold = rel_tol * sigma_max;
    let mut singular_values: Vec<f64> = sv.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    RankInfo {
        rank: singular_values
            .iter()
            .filter(|&&s| s > threshold && s > 0.0)
            .count(),
        threshold,
        singular_values,
    }
}

/// Minimum-norm least-squares solution of `a x = b` by truncated SVD with
/// relative cutoff `rel_tol`, together with the rank that was used.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, RankInfo) {
    let info = numerical_rank(a, rel_tol);
    if info.rank == 0 {
        return (DVector::zeros(a.ncols()), info);
    }
    let svd = a.clone().svd(true, true);
    // `solve` zeroes singular values at or below the absolute epsilon given.
    let x = svd
        .solve(b, info.threshold.max(f64::MIN_POSITIVE))
        .expect("both SVD factors were requested");
    (x, info)
}

pub fn max_abs_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a * x - b).amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system_returns_rhs() {
        let a = DMatrix::<f64>::identity(4, 4);
        let b = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let (x, info) = lstsq_min_norm(&a, &b, 1e-9);
        assert_eq!(info.rank, 4);
        assert!((x - &b).amax() < 1e-15);
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        // x + y = 2 has minimum-norm solution (1, 1).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let (x, info) = lstsq_min_norm(&a, &b, 1e-9);
        assert_eq!(info.rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wide_and_empty_matrices() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert_eq!(numerical_rank(&a, 1e-9).rank, 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(0, 3), 1e-9).rank, 0);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), 1e-9).rank, 0);
    }
}
