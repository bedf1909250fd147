//! Linear systems and least squares through the singular value decomposition.

use nalgebra::{DMatrix, DVector, SVD};

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum LinearSolution<T: Scalar> {
    Unique(DVector<T>),
    None,
    /// Consistent but rank deficient; `particular` is the minimum-norm solution.
    InfinitelyMany { particular: DVector<T>, nullity: usize },
}

impl<T: Scalar> LinearSolution<T> {
    pub fn unique(&self) -> Option<&DVector<T>> {
        match self {
            LinearSolution::Unique(x) => Some(x),
            _ => None,
        }
    }
}

fn rank_tol<T: Scalar>(rows: usize, cols: usize) -> T {
    let floor: T = lit(1e-10);
    let eps = T::default_epsilon() * lit((10 * rows.max(cols).max(1)) as f64);
    if eps > floor {
        eps
    } else {
        floor
    }
}

fn svd_threshold<T: Scalar>(svd: &SVD<T, nalgebra::Dyn, nalgebra::Dyn>, rows: usize, cols: usize) -> T {
    let sigma_max = svd.singular_values.iter().fold(T::zero(), |m, &s| m.max(s));
    sigma_max * rank_tol::<T>(rows, cols)
}

/// Numerical rank with threshold `1e-10 * ||A||_2`.
pub fn matrix_rank<T: Scalar>(a: &DMatrix<T>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let svd = SVD::new(a.clone(), false, false);
    let thr = svd_threshold(&svd, a.nrows(), a.ncols());
    svd.singular_values.iter().filter(|&&s| s > thr).count()
}

/// Classifies and solves a square system `A x = b`.
///
/// # Panics
/// If `A` is not square or `b` has the wrong length.
pub fn solve_linear<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> LinearSolution<T> {
    assert!(a.is_square(), "solve_linear needs a square matrix");
    assert_eq!(a.nrows(), b.len(), "right-hand side length mismatch");
    let n = a.ncols();
    if n == 0 {
        return LinearSolution::Unique(DVector::zeros(0));
    }
    let svd = SVD::new(a.clone(), true, true);
    let thr = svd_threshold(&svd, n, n);
    let rank = svd.singular_values.iter().filter(|&&s| s > thr).count();
    let x = pseudo_solve(&svd, b, thr, n);
    if rank == n {
        return LinearSolution::Unique(x);
    }
    let residual = (a * &x - b).amax();
    let scale = a.amax() * x.amax() + b.amax();
    let consistent = residual <= rank_tol::<T>(n, n) * lit::<T>(1e3) * scale.max(T::default_epsilon());
    if consistent {
        LinearSolution::InfinitelyMany { particular: x, nullity: n - rank }
    } else {
        LinearSolution::None
    }
}

fn pseudo_solve<T: Scalar>(
    svd: &SVD<T, nalgebra::Dyn, nalgebra::Dyn>,
    b: &DVector<T>,
    thr: T,
    cols: usize,
) -> DVector<T> {
    let u = svd.u.as_ref().expect("U computed");
    let v_t = svd.v_t.as_ref().expect("V^T computed");
    let mut x = DVector::zeros(cols);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            let coeff = u.column(i).dot(b) / s;
            x += v_t.row(i).transpose() * coeff;
        }
    }
    x
}

/// Minimum-norm least-squares solution of `A x ≈ b`.
pub fn least_squares<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    assert_eq!(a.nrows(), b.len(), "right-hand side length mismatch");
    if a.is_empty() {
        return DVector::zeros(a.ncols());
    }
    let svd = SVD::new(a.clone(), true, true);
    let thr = svd_threshold(&svd, a.nrows(), a.ncols());
    pseudo_solve(&svd, b, thr, a.ncols())
}
