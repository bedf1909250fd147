use nalgebra::DMatrix;

use super::{DiscreteModel, MpcError};
use crate::numerics::matrix_rank;
use crate::scalar::Scalar;

/// Appends constant disturbance states `d⁺ = d` entering through `Bd`
/// (dynamics) and `Cd` (outputs).
///
/// Rejects the augmentation unless `[[A − I, Bd], [C, Cd]]` has full column
/// rank `n + nd`, the condition for the disturbance to be detectable.
pub fn offset_free_augment<T: Scalar>(
    model: &DiscreteModel<T>,
    bd: &DMatrix<T>,
    cd: &DMatrix<T>,
) -> Result<DiscreteModel<T>, MpcError> {
    let (n, nu, ny) = (model.nx(), model.nu(), model.ny());
    let nd = bd.ncols();
    if bd.nrows() != n || cd.nrows() != ny || cd.ncols() != nd {
        return Err(MpcError::Dimension(format!(
            "Bd is {}x{}, Cd is {}x{} for n = {n}, ny = {ny}",
            bd.nrows(),
            bd.ncols(),
            cd.nrows(),
            cd.ncols()
        )));
    }
    let mut test = DMatrix::<T>::zeros(n + ny, n + nd);
    test.view_mut((0, 0), (n, n)).copy_from(&(&model.a - DMatrix::identity(n, n)));
    test.view_mut((0, n), (n, nd)).copy_from(bd);
    test.view_mut((n, 0), (ny, n)).copy_from(&model.c);
    test.view_mut((n, n), (ny, nd)).copy_from(cd);
    let rank = matrix_rank(&test);
    if rank < n + nd {
        return Err(MpcError::Undetectable { rank, required: n + nd });
    }
    let mut a = DMatrix::<T>::zeros(n + nd, n + nd);
    a.view_mut((0, 0), (n, n)).copy_from(&model.a);
    a.view_mut((0, n), (n, nd)).copy_from(bd);
    a.view_mut((n, n), (nd, nd)).fill_with_identity();
    let mut b = DMatrix::<T>::zeros(n + nd, nu);
    b.view_mut((0, 0), (n, nu)).copy_from(&model.b);
    let mut c = DMatrix::<T>::zeros(ny, n + nd);
    c.view_mut((0, 0), (ny, n)).copy_from(&model.c);
    c.view_mut((0, n), (ny, nd)).copy_from(cd);
    DiscreteModel::new(a, b, c, model.ts)
}
