//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 x' H x + f' x
//!     subject to   A_ineq x <= b_ineq
//!                  A_eq   x  = b_eq
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani: start from the
//! unconstrained minimizer, then repeatedly add the most violated
//! inequality (lowest index on ties), dropping active constraints whose
//! multipliers would turn negative. Infeasibility is detected when a
//! violated constraint cannot be reached by any primal or dual step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains non-finite entries")]
    NonFinite,
    #[error("Hessian is not positive definite even after regularization")]
    NotConvex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T: Scalar> {
    pub h: DMatrix<T>,
    pub f: DVector<T>,
    pub a_ineq: DMatrix<T>,
    pub b_ineq: DVector<T>,
    pub a_eq: DMatrix<T>,
    pub b_eq: DVector<T>,
}

impl<T: Scalar> QpProblem<T> {
    /// Unconstrained problem; `h` is symmetrized.
    pub fn new(h: DMatrix<T>, f: DVector<T>) -> Self {
        let n = f.len();
        let h = (&h + h.transpose()) * lit::<T>(0.5);
        Self {
            h,
            f,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn with_inequalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        (x.transpose() * &self.h * x)[(0, 0)] * lit(0.5) + self.f.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.f.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::Dimension(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(QpError::Dimension(format!(
                "A_ineq is {}x{} with {} bounds",
                self.a_ineq.nrows(),
                self.a_ineq.ncols(),
                self.b_ineq.len()
            )));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(QpError::Dimension(format!(
                "A_eq is {}x{} with {} right-hand sides",
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len()
            )));
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|v| v.is_finite());
        if !finite(&self.h)
            || !self.f.iter().all(|v| v.is_finite())
            || !finite(&self.a_ineq)
            || !self.b_ineq.iter().all(|v| v.is_finite())
            || !finite(&self.a_eq)
            || !self.b_eq.iter().all(|v| v.is_finite())
        {
            return Err(QpError::NonFinite);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T: Scalar> {
    pub x_star: DVector<T>,
    /// Indices into the inequality rows that are active at `x_star`, sorted.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    pub objective_value: T,
    /// Multipliers `λ >= 0` of the inequality rows (zero when inactive).
    pub lambda_ineq: DVector<T>,
    /// Multipliers of the equality rows, with `H x + f + A_ineq' λ + A_eq' μ = 0`.
    pub mu_eq: DVector<T>,
    pub iterations: usize,
    /// A ridge `1e-8 I` was added because `H` was (numerically) only semidefinite.
    pub regularized: bool,
}

impl<T: Scalar> QpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// First-order optimality residuals of a candidate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals<T> {
    pub primal: T,
    pub dual: T,
    pub complementarity: T,
    pub stationarity: T,
}

impl<T: Scalar> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.primal.max(self.dual).max(self.complementarity).max(self.stationarity)
    }
}

pub fn kkt_residuals<T: Scalar>(problem: &QpProblem<T>, sol: &QpSolution<T>) -> KktResiduals<T> {
    let x = &sol.x_star;
    let mut primal = T::zero();
    let mut complementarity = T::zero();
    let mut dual = T::zero();
    if problem.num_ineq() > 0 {
        let slack = &problem.b_ineq - &problem.a_ineq * x;
        for i in 0..slack.len() {
            primal = primal.max(-slack[i]);
            dual = dual.max(-sol.lambda_ineq[i]);
            complementarity = complementarity.max((sol.lambda_ineq[i] * slack[i]).abs());
        }
    }
    if problem.num_eq() > 0 {
        primal = primal.max((&problem.a_eq * x - &problem.b_eq).amax());
    }
    let mut grad = &problem.h * x + &problem.f;
    if problem.num_ineq() > 0 {
        grad += problem.a_ineq.transpose() * &sol.lambda_ineq;
    }
    if problem.num_eq() > 0 {
        grad += problem.a_eq.transpose() * &sol.mu_eq;
    }
    KktResiduals {
        primal,
        dual,
        complementarity,
        stationarity: grad.amax(),
    }
}

const EIG_FLOOR: f64 = 1e-9;
const RIDGE: f64 = 1e-8;

pub fn solve_qp<T: Scalar>(problem: &QpProblem<T>) -> Result<QpSolution<T>, QpError> {
    solve_qp_warm(problem, &[])
}

/// Solves `problem`, first trying the caller's guess of the optimal active
/// set. The guess is accepted only if its equality-constrained KKT point is
/// primal and dual feasible; otherwise the dual active-set iteration runs
/// from scratch, so the result never depends on the guess beyond speed.
pub fn solve_qp_warm<T: Scalar>(problem: &QpProblem<T>, warm_active: &[usize]) -> Result<QpSolution<T>, QpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let (h, regularized) = regularize(&problem.h);
    let chol = h.clone().cholesky().ok_or(QpError::NotConvex)?;

    if !warm_active.is_empty() {
        if let Some(sol) = try_active_set(problem, &h, warm_active, regularized) {
            return Ok(sol);
        }
    }

    let mut solver = DualActiveSet {
        problem,
        chol: &chol,
        active: Vec::new(),
        h_inv_n: Vec::new(),
        normals: Vec::new(),
        gram_l: DMatrix::zeros(0, 0),
        u: Vec::new(),
        x: -chol.solve(&problem.f),
        iterations: 0,
        max_iterations: 50 * (n + problem.num_ineq() + problem.num_eq()).max(1),
    };
    let status = solver.run();
    Ok(solver.finish(status, regularized))
}

fn regularize<T: Scalar>(h: &DMatrix<T>) -> (DMatrix<T>, bool) {
    let n = h.nrows();
    if n == 0 {
        return (h.clone(), false);
    }
    let sym = (h + h.transpose()) * lit::<T>(0.5);
    let min_eig = SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .fold(T::max_value().unwrap_or(lit(f64::MAX)), |m, &v| m.min(v));
    if min_eig < lit(EIG_FLOOR) {
        (sym + DMatrix::identity(n, n) * lit::<T>(RIDGE), true)
    } else {
        (sym, false)
    }
}

fn feas_tol<T: Scalar>() -> T {
    let e = T::default_epsilon() * lit(1e3);
    if e > lit(1e-10) {
        e
    } else {
        lit(1e-10)
    }
}

fn try_active_set<T: Scalar>(
    problem: &QpProblem<T>,
    h: &DMatrix<T>,
    guess: &[usize],
    regularized: bool,
) -> Option<QpSolution<T>> {
    let n = problem.num_vars();
    let m = problem.num_ineq();
    let p = problem.num_eq();
    let mut rows: Vec<usize> = guess.iter().copied().filter(|&i| i < m).collect();
    rows.sort_unstable();
    rows.dedup();
    let q = rows.len() + p;
    let dim = n + q;
    let mut kkt = DMatrix::<T>::zeros(dim, dim);
    let mut rhs = DVector::<T>::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    rhs.rows_mut(0, n).copy_from(&(-&problem.f));
    for (k, &i) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + k, j)] = problem.a_ineq[(i, j)];
            kkt[(j, n + k)] = problem.a_ineq[(i, j)];
        }
        rhs[n + k] = problem.b_ineq[i];
    }
    for e in 0..p {
        let k = rows.len() + e;
        for j in 0..n {
            kkt[(n + k, j)] = problem.a_eq[(e, j)];
            kkt[(j, n + k)] = problem.a_eq[(e, j)];
        }
        rhs[n + k] = problem.b_eq[e];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let x = sol.rows(0, n).into_owned();
    let tol = feas_tol::<T>();
    if m > 0 {
        let slack = &problem.b_ineq - &problem.a_ineq * &x;
        for i in 0..m {
            if slack[i] < -tol * (T::one() + problem.b_ineq[i].abs()) {
                return None;
            }
        }
    }
    let mut lambda = DVector::<T>::zeros(m);
    for (k, &i) in rows.iter().enumerate() {
        let l = sol[n + k];
        if l < -tol || !l.is_finite() {
            return None;
        }
        lambda[i] = l.max(T::zero());
    }
    let mu = DVector::from_fn(p, |e, _| sol[n + rows.len() + e]);
    let active_set = rows.iter().copied().filter(|&i| lambda[i] > T::zero()).collect::<Vec<_>>();
    let active_set = if active_set.is_empty() { rows } else { active_set };
    Some(QpSolution {
        objective_value: problem.objective(&x),
        x_star: x,
        active_set,
        status: QpStatus::Optimal,
        lambda_ineq: lambda,
        mu_eq: mu,
        iterations: 0,
        regularized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Eq(usize),
    Ineq(usize),
}

struct DualActiveSet<'a, T: Scalar> {
    problem: &'a QpProblem<T>,
    chol: &'a nalgebra::Cholesky<T, nalgebra::Dyn>,
    active: Vec<Row>,
    /// `H^{-1} n_j` for every active row, cached.
    h_inv_n: Vec<DVector<T>>,
    normals: Vec<DVector<T>>,
    /// Lower Cholesky factor of the active Gram matrix `Nᵀ H⁻¹ N`.
    gram_l: DMatrix<T>,
    u: Vec<T>,
    x: DVector<T>,
    iterations: usize,
    max_iterations: usize,
}

impl<T: Scalar> DualActiveSet<'_, T> {
    /// Normal `n` and offset `c` in the `n' x >= c` convention.
    fn row(&self, r: Row) -> (DVector<T>, T) {
        match r {
            Row::Ineq(i) => (-self.problem.a_ineq.row(i).transpose(), -self.problem.b_ineq[i]),
            Row::Eq(e) => (self.problem.a_eq.row(e).transpose(), self.problem.b_eq[e]),
        }
    }

    /// Primal direction `z` and dual direction `r` for adding normal `np`.
    fn step_directions(&self, np: &DVector<T>) -> (DVector<T>, DVector<T>, DVector<T>) {
        let hinv_np = self.chol.solve(np);
        let q = self.active.len();
        if q == 0 {
            return (hinv_np.clone(), DVector::zeros(0), hinv_np);
        }
        let rhs = DVector::from_fn(q, |a, _| self.normals[a].dot(&hinv_np));
        let r = self
            .gram_l
            .solve_lower_triangular(&rhs)
            .and_then(|w| self.gram_l.tr_solve_lower_triangular(&w))
            .unwrap_or_else(|| DVector::zeros(q));
        let mut z = hinv_np.clone();
        for b in 0..q {
            z -= &self.h_inv_n[b] * r[b];
        }
        (z, r, hinv_np)
    }

    /// Appends a row to the active set, extending the Cholesky factor of the
    /// Gram matrix `Nᵀ H⁻¹ N` by one row.
    fn push(&mut self, row: Row, hinv: DVector<T>, dual: T) {
        let q = self.active.len();
        let normal = self.row(row).0;
        let g = DVector::from_fn(q, |a, _| self.normals[a].dot(&hinv));
        let l = if q > 0 {
            self.gram_l.solve_lower_triangular(&g).unwrap_or_else(|| DVector::zeros(q))
        } else {
            DVector::zeros(0)
        };
        let gnn = normal.dot(&hinv);
        let floor = self.tiny(gnn);
        let d2 = gnn - l.dot(&l);
        let d = if d2 > floor { d2.sqrt() } else { floor.sqrt() };
        let mut next = DMatrix::<T>::zeros(q + 1, q + 1);
        next.view_mut((0, 0), (q, q)).copy_from(&self.gram_l);
        for j in 0..q {
            next[(q, j)] = l[j];
        }
        next[(q, q)] = d;
        self.gram_l = next;
        self.active.push(row);
        self.normals.push(normal);
        self.h_inv_n.push(hinv);
        self.u.push(dual);
    }

    /// Removes active row `k`; Givens rotations restore the triangular factor.
    fn drop_at(&mut self, k: usize) {
        let q = self.active.len();
        let mut m = self.gram_l.clone().remove_row(k);
        for j in k..q - 1 {
            let (a, b) = (m[(j, j)], m[(j, j + 1)]);
            let r = (a * a + b * b).sqrt();
            if r == T::zero() {
                continue;
            }
            let (c, s) = (a / r, b / r);
            for i in j..q - 1 {
                let (x, y) = (m[(i, j)], m[(i, j + 1)]);
                m[(i, j)] = c * x + s * y;
                m[(i, j + 1)] = c * y - s * x;
            }
        }
        self.gram_l = m.remove_column(q - 1);
        self.active.remove(k);
        self.normals.remove(k);
        self.h_inv_n.remove(k);
        self.u.remove(k);
    }

    fn tiny(&self, scale: T) -> T {
        T::default_epsilon() * lit::<T>(1e3) * scale.max(T::default_epsilon())
    }

    fn run(&mut self) -> QpStatus {
        let tol = feas_tol::<T>();
        for e in 0..self.problem.num_eq() {
            let (np, c) = self.row(Row::Eq(e));
            let s = np.dot(&self.x) - c;
            let (z, r, hinv) = self.step_directions(&np);
            let zn = z.dot(&np);
            if zn <= self.tiny(np.dot(&hinv)) {
                if s.abs() <= tol * (T::one() + c.abs()) {
                    continue;
                }
                return QpStatus::Infeasible;
            }
            let t = -s / zn;
            self.x += &z * t;
            for (uj, rj) in self.u.iter_mut().zip(r.iter()) {
                *uj -= t * *rj;
            }
            self.push(Row::Eq(e), hinv, t);
        }

        loop {
            // Most violated inactive inequality, lowest index on ties.
            let mut chosen: Option<(usize, T)> = None;
            let slack = &self.problem.b_ineq - &self.problem.a_ineq * &self.x;
            let mut is_active = vec![false; self.problem.num_ineq()];
            for row in &self.active {
                if let Row::Ineq(i) = row {
                    is_active[*i] = true;
                }
            }
            for i in 0..self.problem.num_ineq() {
                if is_active[i] {
                    continue;
                }
                let s = slack[i];
                if s < -tol * (T::one() + self.problem.b_ineq[i].abs()) {
                    match chosen {
                        Some((_, best)) if s >= best => {}
                        _ => chosen = Some((i, s)),
                    }
                }
            }
            let Some((p, _)) = chosen else {
                return QpStatus::Optimal;
            };
            let (np, c) = self.row(Row::Ineq(p));
            let mut u_plus = T::zero();
            loop {
                self.iterations += 1;
                if self.iterations > self.max_iterations {
                    return QpStatus::MaxIterations;
                }
                let (z, r, hinv) = self.step_directions(&np);
                let zn = z.dot(&np);
                let r_scale = r.iter().fold(T::one(), |m, v| m.max(v.abs()));
                // Dual step limit over active inequalities.
                let mut t1: Option<(T, usize)> = None;
                for (k, row) in self.active.iter().enumerate() {
                    if let Row::Ineq(_) = row {
                        if r[k] > self.tiny(r_scale) {
                            let ratio = self.u[k] / r[k];
                            if t1.is_none_or(|(best, _)| ratio < best) {
                                t1 = Some((ratio, k));
                            }
                        }
                    }
                }
                let s_p = np.dot(&self.x) - c;
                let t2 = if zn > self.tiny(np.dot(&hinv)) { Some(-s_p / zn) } else { None };
                match (t1, t2) {
                    (None, None) => return QpStatus::Infeasible,
                    (Some((t, k)), None) => {
                        for (uj, rj) in self.u.iter_mut().zip(r.iter()) {
                            *uj -= t * *rj;
                        }
                        u_plus += t;
                        self.drop_at(k);
                    }
                    (t1, Some(t2v)) => {
                        let partial = matches!(t1, Some((t1v, _)) if t1v < t2v);
                        let t = if partial { t1.expect("partial step").0 } else { t2v };
                        self.x += &z * t;
                        for (uj, rj) in self.u.iter_mut().zip(r.iter()) {
                            *uj -= t * *rj;
                        }
                        u_plus += t;
                        if partial {
                            self.drop_at(t1.expect("partial step").1);
                        } else {
                            self.push(Row::Ineq(p), hinv, u_plus);
                            break;
                        }
                    }
                }
            }
        }
    }

    fn finish(self, status: QpStatus, regularized: bool) -> QpSolution<T> {
        let m = self.problem.num_ineq();
        let p = self.problem.num_eq();
        let mut lambda = DVector::<T>::zeros(m);
        let mut mu = DVector::<T>::zeros(p);
        let mut active_set = Vec::new();
        for (row, &u) in self.active.iter().zip(self.u.iter()) {
            match *row {
                Row::Ineq(i) => {
                    lambda[i] = u.max(T::zero());
                    active_set.push(i);
                }
                Row::Eq(e) => mu[e] = -u,
            }
        }
        active_set.sort_unstable();
        QpSolution {
            objective_value: self.problem.objective(&self.x),
            x_star: self.x,
            active_set,
            status,
            lambda_ineq: lambda,
            mu_eq: mu,
            iterations: self.iterations,
            regularized,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn unconstrained_minimum() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![-1.0, -1.0]);
        let sol = solve_qp(&qp).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.x_star - dvector![1.0, 1.0]).amax() < 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn active_lower_bound() {
        // min x^2 s.t. x >= 1  ->  -x <= -1
        let qp = QpProblem::new(dmatrix![2.0], dvector![0.0]).with_inequalities(dmatrix![-1.0], dvector![-1.0]);
        let sol = solve_qp(&qp).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.x_star[0] - 1.0f64).abs() < 1e-12);
        assert_eq!(sol.active_set, vec![0]);
        assert!(kkt_residuals(&qp, &sol).max() < 1e-10);
    }

    #[test]
    fn quadprog_reference_example() {
        // min 1/2 x^2 + 1/2 y^2 + x  s.t. x + 2y >= 1
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![1.0, 0.0])
            .with_inequalities(dmatrix![-1.0, -2.0], dvector![-1.0]);
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.x_star - dvector![-0.6, 0.8]).amax() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let qp = QpProblem::new(DMatrix::identity(1, 1), dvector![0.0])
            .with_inequalities(dmatrix![1.0; -1.0], dvector![-1.0, -1.0]);
        assert_eq!(solve_qp(&qp).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_constraints() {
        // min x^2 + y^2 s.t. x + y = 2, x <= 0.5
        let qp = QpProblem::new(DMatrix::identity(2, 2) * 2.0, dvector![0.0, 0.0])
            .with_equalities(dmatrix![1.0, 1.0], dvector![2.0])
            .with_inequalities(dmatrix![1.0, 0.0], dvector![0.5]);
        let sol = solve_qp(&qp).unwrap();
        assert!(sol.is_optimal());
        assert!((&sol.x_star - dvector![0.5, 1.5]).amax() < 1e-12);
        assert!(kkt_residuals(&qp, &sol).max() < 1e-10);
    }

    #[test]
    fn semidefinite_hessian_is_regularized() {
        let qp: QpProblem<f64> = QpProblem::new(dmatrix![1.0, 0.0; 0.0, 0.0], dvector![0.0, 1.0])
            .with_inequalities(dmatrix![0.0, -1.0], dvector![0.0]);
        let sol = solve_qp(&qp).unwrap();
        assert!(sol.regularized);
        assert!(sol.is_optimal());
        assert!(sol.x_star[1].abs() < 1e-8_f64.max(0.0));
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![-2.0, -2.0])
            .with_inequalities(dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0], dvector![1.0, 1.5, 2.0]);
        let cold = solve_qp(&qp).unwrap();
        let warm = solve_qp_warm(&qp, &cold.active_set).unwrap();
        assert!((&cold.x_star - &warm.x_star).amax() < 1e-12);
        let bad_guess = solve_qp_warm(&qp, &[1]).unwrap();
        assert!((cold.x_star - bad_guess.x_star).amax() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![0.0, 0.0])
            .with_inequalities(dmatrix![1.0, 0.0, 0.0], dvector![1.0]);
        assert!(matches!(solve_qp(&qp), Err(QpError::Dimension(_))));
    }
}
