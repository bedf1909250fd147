use nalgebra::{DMatrix, DVector};

use super::{MpcError, Prediction};
use crate::numerics::QpProblem;
use crate::scalar::Scalar;

/// `E x_{i+1} + F u_i ≤ c` for stage `i = 0..N−1`.
///
/// Pairing `x_{i+1}` with `u_i` means state rows cover the predicted
/// trajectory `x_1..x_N` and input rows cover `u_0..u_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConstraint<T: Scalar> {
    pub e: DMatrix<T>,
    pub f: DMatrix<T>,
    pub c: DVector<T>,
}

impl<T: Scalar> StageConstraint<T> {
    pub fn new(e: DMatrix<T>, f: DMatrix<T>, c: DVector<T>) -> Result<Self, MpcError> {
        if e.nrows() != c.len() || f.nrows() != c.len() {
            return Err(MpcError::Dimension(format!(
                "E has {} rows, F has {}, c has {}",
                e.nrows(),
                f.nrows(),
                c.len()
            )));
        }
        Ok(Self { e, f, c })
    }

    /// Input box `lo ≤ u ≤ hi` on every component.
    pub fn input_box(nx: usize, lo: &DVector<T>, hi: &DVector<T>) -> Self {
        let nu = lo.len();
        let mut f = DMatrix::zeros(2 * nu, nu);
        let mut c = DVector::zeros(2 * nu);
        for j in 0..nu {
            f[(2 * j, j)] = T::one();
            c[2 * j] = hi[j];
            f[(2 * j + 1, j)] = -T::one();
            c[2 * j + 1] = -lo[j];
        }
        Self { e: DMatrix::zeros(2 * nu, nx), f, c }
    }

    pub fn rows(&self) -> usize {
        self.c.len()
    }

    /// Vertically stacks two constraint sets over the same stage.
    pub fn stack(&self, other: &Self) -> Self {
        let rows = self.rows() + other.rows();
        let mut e = DMatrix::zeros(rows, self.e.ncols());
        let mut f = DMatrix::zeros(rows, self.f.ncols());
        let mut c = DVector::zeros(rows);
        e.rows_mut(0, self.rows()).copy_from(&self.e);
        e.rows_mut(self.rows(), other.rows()).copy_from(&other.e);
        f.rows_mut(0, self.rows()).copy_from(&self.f);
        f.rows_mut(self.rows(), other.rows()).copy_from(&other.f);
        c.rows_mut(0, self.rows()).copy_from(&self.c);
        c.rows_mut(self.rows(), other.rows()).copy_from(&other.c);
        Self { e, f, c }
    }

    pub fn satisfied(&self, x_next: &DVector<T>, u: &DVector<T>, tol: T) -> bool {
        let lhs = &self.e * x_next + &self.f * u;
        lhs.iter().zip(self.c.iter()).all(|(l, c)| *l <= *c + tol)
    }
}

/// Condensed inequality `G U ≤ w + L x₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConstraints<T: Scalar> {
    pub g: DMatrix<T>,
    pub w: DVector<T>,
    pub l: DMatrix<T>,
}

impl<T: Scalar> TrajectoryConstraints<T> {
    pub fn rows(&self) -> usize {
        self.w.len()
    }

    pub fn rhs(&self, x0: &DVector<T>) -> DVector<T> {
        &self.w + &self.l * x0
    }

    pub fn stack(&self, other: &Self) -> Self {
        let rows = self.rows() + other.rows();
        let cols = self.g.ncols();
        let mut g = DMatrix::zeros(rows, cols);
        let mut l = DMatrix::zeros(rows, self.l.ncols());
        let mut w = DVector::zeros(rows);
        g.rows_mut(0, self.rows()).copy_from(&self.g);
        g.rows_mut(self.rows(), other.rows()).copy_from(&other.g);
        l.rows_mut(0, self.rows()).copy_from(&self.l);
        l.rows_mut(self.rows(), other.rows()).copy_from(&other.l);
        w.rows_mut(0, self.rows()).copy_from(&self.w);
        w.rows_mut(self.rows(), other.rows()).copy_from(&other.w);
        Self { g, w, l }
    }
}

/// Maps the same stage constraint over the horizon, plus optional rows on
/// the terminal state (`F` of the terminal constraint is ignored).
pub fn build_trajectory_constraints<T: Scalar>(
    constraint: &StageConstraint<T>,
    terminal: Option<&StageConstraint<T>>,
    pred: &Prediction<T>,
) -> Result<TrajectoryConstraints<T>, MpcError> {
    let stages = vec![constraint.clone(); pred.horizon];
    build_trajectory_constraints_staged(&stages, terminal, pred, None)
}

/// Stage-varying variant. `state_offset` is an affine term added to the
/// stacked prediction, `X = Φ x₀ + Γ U + offset`.
pub fn build_trajectory_constraints_staged<T: Scalar>(
    stages: &[StageConstraint<T>],
    terminal: Option<&StageConstraint<T>>,
    pred: &Prediction<T>,
    state_offset: Option<&DVector<T>>,
) -> Result<TrajectoryConstraints<T>, MpcError> {
    let (nx, nu, horizon) = (pred.nx, pred.nu, pred.horizon);
    if stages.len() != horizon {
        return Err(MpcError::Dimension(format!("{} stage constraints for horizon {horizon}", stages.len())));
    }
    for s in stages.iter().chain(terminal) {
        if s.e.ncols() != nx {
            return Err(MpcError::Dimension(format!("E has {} columns, nx = {nx}", s.e.ncols())));
        }
    }
    for s in stages {
        if s.f.ncols() != nu {
            return Err(MpcError::Dimension(format!("F has {} columns, nu = {nu}", s.f.ncols())));
        }
    }
    if let Some(off) = state_offset {
        if off.len() != horizon * nx {
            return Err(MpcError::Dimension("state offset length".into()));
        }
    }
    let rows: usize = stages.iter().map(|s| s.rows()).sum::<usize>() + terminal.map_or(0, |t| t.rows());
    let mut g = DMatrix::<T>::zeros(rows, horizon * nu);
    let mut w = DVector::<T>::zeros(rows);
    let mut l = DMatrix::<T>::zeros(rows, nx);
    let mut r0 = 0;
    let mut emit = |r0: &mut usize, e: &DMatrix<T>, f: Option<&DMatrix<T>>, c: &DVector<T>, i: usize| {
        let m = c.len();
        if m == 0 {
            return;
        }
        let mut gi = e * pred.gamma_rows(i);
        if let Some(f) = f {
            let mut block = gi.view_mut((0, i * nu), (m, nu));
            block += f;
        }
        g.view_mut((*r0, 0), (m, horizon * nu)).copy_from(&gi);
        let mut wi = c.clone();
        if let Some(off) = state_offset {
            wi -= e * off.rows(i * nx, nx);
        }
        w.rows_mut(*r0, m).copy_from(&wi);
        l.view_mut((*r0, 0), (m, nx)).copy_from(&(-(e * pred.phi_block(i))));
        *r0 += m;
    };
    for (i, s) in stages.iter().enumerate() {
        emit(&mut r0, &s.e, Some(&s.f), &s.c, i);
    }
    if let Some(t) = terminal {
        emit(&mut r0, &t.e, None, &t.c, horizon - 1);
    }
    Ok(TrajectoryConstraints { g, w, l })
}

/// Constraint rows relaxed by one nonnegative slack each:
/// `G U − s ≤ w + L x₀`, `s ≥ 0`, with cost `ρ₁ 1ᵀs + ½ ρ₂ sᵀs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftConstraints<T: Scalar> {
    pub constraints: TrajectoryConstraints<T>,
    pub linear_weight: T,
    pub quadratic_weight: T,
}

impl<T: Scalar> SoftConstraints<T> {
    pub fn slack_count(&self) -> usize {
        self.constraints.rows()
    }

    /// QP over `[U; s]` given the condensed input Hessian/linear term,
    /// optional hard rows `hard_g U ≤ hard_rhs` (e.g. input bounds) and `x₀`.
    pub fn qp(
        &self,
        h: &DMatrix<T>,
        f: &DVector<T>,
        hard: Option<(&DMatrix<T>, &DVector<T>)>,
        x0: &DVector<T>,
    ) -> QpProblem<T> {
        let nv = h.nrows();
        let ns = self.slack_count();
        let n = nv + ns;
        let mut hh = DMatrix::<T>::zeros(n, n);
        hh.view_mut((0, 0), (nv, nv)).copy_from(h);
        for k in 0..ns {
            hh[(nv + k, nv + k)] = self.quadratic_weight;
        }
        let mut ff = DVector::<T>::zeros(n);
        ff.rows_mut(0, nv).copy_from(f);
        for k in 0..ns {
            ff[nv + k] = self.linear_weight;
        }
        let hard_rows = hard.map_or(0, |(g, _)| g.nrows());
        let rows = 2 * ns + hard_rows;
        let mut a = DMatrix::<T>::zeros(rows, n);
        let mut b = DVector::<T>::zeros(rows);
        a.view_mut((0, 0), (ns, nv)).copy_from(&self.constraints.g);
        b.rows_mut(0, ns).copy_from(&self.constraints.rhs(x0));
        for k in 0..ns {
            a[(k, nv + k)] = -T::one();
            a[(ns + k, nv + k)] = -T::one();
        }
        if let Some((g, rhs)) = hard {
            a.view_mut((2 * ns, 0), (hard_rows, nv)).copy_from(g);
            b.rows_mut(2 * ns, hard_rows).copy_from(rhs);
        }
        QpProblem::new(hh, ff).with_inequalities(a, b)
    }
}

pub fn soften_constraints<T: Scalar>(
    constraints: &TrajectoryConstraints<T>,
    linear_weight: T,
    quadratic_weight: T,
) -> Result<SoftConstraints<T>, MpcError> {
    if linear_weight < T::zero() || quadratic_weight < T::zero() {
        return Err(MpcError::InvalidArgument("slack weights must be nonnegative".into()));
    }
    if linear_weight == T::zero() && quadratic_weight == T::zero() {
        return Err(MpcError::InvalidArgument("at least one slack weight must be positive".into()));
    }
    Ok(SoftConstraints {
        constraints: constraints.clone(),
        linear_weight,
        quadratic_weight,
    })
}

/// Replaces `c` by `c − margins`.
pub fn tighten_constraints<T: Scalar>(
    constraint: &StageConstraint<T>,
    margins: &DVector<T>,
) -> Result<StageConstraint<T>, MpcError> {
    if margins.len() != constraint.rows() {
        return Err(MpcError::Dimension(format!(
            "{} margins for {} rows",
            margins.len(),
            constraint.rows()
        )));
    }
    if let Some(i) = margins.iter().position(|m| *m < T::zero() || !m.is_finite()) {
        return Err(MpcError::InvalidArgument(format!("margin {i} is negative")));
    }
    Ok(StageConstraint {
        e: constraint.e.clone(),
        f: constraint.f.clone(),
        c: &constraint.c - margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{build_prediction, DiscreteModel};
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn input_only_constraint_structure() {
        let m = DiscreteModel::new(dmatrix![1.0, 0.1; 0.0, 1.0], dmatrix![0.0; 0.1], dmatrix![1.0, 0.0], 0.1).unwrap();
        let pred = build_prediction(&m, 3).unwrap();
        let stage = StageConstraint::input_box(2, &dvector![-1.0], &dvector![1.0]);
        let tc = build_trajectory_constraints(&stage, None, &pred).unwrap();
        assert_eq!(tc.l, DMatrix::zeros(6, 2));
        for i in 0..3 {
            for j in 0..3 {
                let block = tc.g.view((2 * i, j), (2, 1));
                if i == j {
                    assert_eq!(block, stage.f);
                } else {
                    assert_eq!(block, DMatrix::<f64>::zeros(2, 1));
                }
            }
        }
    }

    #[test]
    fn scalar_state_bound_hand_expansion() {
        let (a, b) = (1.1, 0.5);
        let m = DiscreteModel::new(dmatrix![a], dmatrix![b], dmatrix![1.0], 0.1).unwrap();
        let pred = build_prediction(&m, 2).unwrap();
        let stage = StageConstraint::new(dmatrix![1.0], dmatrix![0.0], dvector![1.0]).unwrap();
        let tc = build_trajectory_constraints(&stage, None, &pred).unwrap();
        assert_eq!(tc.g, dmatrix![b, 0.0; a * b, b]);
        assert_eq!(tc.w, dvector![1.0, 1.0]);
        assert_eq!(tc.l, dmatrix![-a; -a * a]);
    }

    #[test]
    fn softening_needs_a_weight() {
        let tc = TrajectoryConstraints { g: dmatrix![1.0], w: dvector![1.0], l: dmatrix![0.0] };
        assert!(soften_constraints(&tc, 0.0, 0.0).is_err());
        let soft = soften_constraints(&tc, 1.0, 0.0).unwrap();
        let qp = soft.qp(&dmatrix![1.0], &dvector![0.0], None, &dvector![0.0]);
        // Slack column enters with −1 on its own row: it can only relax.
        assert_eq!(qp.a_ineq[(0, 1)], -1.0);
        assert_eq!(qp.a_ineq[(1, 1)], -1.0);
        assert_eq!(qp.b_ineq[1], 0.0);
    }

    #[test]
    fn tightening() {
        let stage = StageConstraint::new(dmatrix![1.0], dmatrix![0.0], dvector![1.0]).unwrap();
        assert_eq!(tighten_constraints(&stage, &dvector![0.0]).unwrap(), stage);
        assert_eq!(tighten_constraints(&stage, &dvector![0.1]).unwrap().c, dvector![0.9]);
        assert!(tighten_constraints(&stage, &dvector![-0.1]).is_err());
        assert!(tighten_constraints(&stage, &dvector![0.1, 0.2]).is_err());
    }
}
