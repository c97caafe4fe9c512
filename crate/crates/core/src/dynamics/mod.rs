//! Euler-Lagrange dynamics in the control-affine form
//! `v' = G(q) (f1(q, v) + f2(q, v) + f3(q) + u)`.
//!
//! Models are evaluated at their *integration state*. For ordinary models that is the
//! constrained state itself. For [`TransformedSystem`] it is the native joint state, and the
//! returned terms describe the dynamics of the mapped coordinates.

mod constants;
mod planar;
mod transform;

use nalgebra::{DMatrix, DVector};

pub use constants::{estimate_constants, ConstantEstimator, SystemConstants};
pub use planar::{MassMode, Planar2Dof, PointMass};
pub use transform::{CoordinateMap, EllipsePlaneMap, TransformedSystem};

use crate::error::{ensure_finite, Error, Result};

/// The matrices and drift vectors of the control-affine form at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    /// `n x m` input matrix.
    pub g: DMatrix<f64>,
    /// `m x n` right inverse of `g`.
    pub g_plus: DMatrix<f64>,
    /// Velocity-quadratic drift (Coriolis/centrifugal).
    pub f1: DVector<f64>,
    /// Velocity-linear drift (damping).
    pub f2: DVector<f64>,
    /// Configuration-only drift (gravity).
    pub f3: DVector<f64>,
}

impl DynamicsTerms {
    /// `f1 + f2 + f3`.
    pub fn drift(&self) -> DVector<f64> {
        &self.f1 + &self.f2 + &self.f3
    }

    /// `G (f1 + f2 + f3 + u)`.
    pub fn acceleration(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.g * (self.drift() + u)
    }
}

/// A system `v' = G(q)(f1 + f2 + f3 + u)` with `n` coordinates and `m` inputs.
pub trait SystemModel: Send + Sync {
    fn dof(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Control-affine terms at integration state `(x, xv)`.
    fn terms(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<DynamicsTerms>;

    /// Maps an integration state to the constrained coordinates `(q, v)`.
    fn constraint_state(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((x.clone(), xv.clone()))
    }

    /// Integration-state velocity at configuration `x` whose constrained velocity is `v`.
    fn native_velocity(&self, _x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v.clone())
    }

    /// Time derivative of the integration-state velocity under input `u`.
    fn native_acceleration(&self, x: &DVector<f64>, xv: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.terms(x, xv)?.acceleration(u))
    }

    /// Integration-state configurations on a grid whose constrained image lies in `[lo, hi]`.
    /// `per_axis` is the number of samples per coordinate of the constrained box.
    fn configurations(&self, lo: &[f64], hi: &[f64], per_axis: usize) -> Result<Vec<DVector<f64>>> {
        box_grid(lo, hi, per_axis)
    }
}

/// Returns the acceleration `G(q)(f1 + f2 + f3 + u)` in the constrained coordinates.
pub fn eval_dynamics(
    model: &dyn SystemModel,
    q: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if q.len() != model.dof() || v.len() != model.dof() || u.len() != model.input_dim() {
        return Err(Error::Config(format!(
            "dimension mismatch: q {}, v {}, u {} for a model with n = {}, m = {}",
            q.len(),
            v.len(),
            u.len(),
            model.dof(),
            model.input_dim()
        )));
    }
    ensure_finite(q.as_slice(), "configuration")?;
    ensure_finite(v.as_slice(), "velocity")?;
    ensure_finite(u.as_slice(), "input")?;
    let acc = model.terms(q, v)?.acceleration(u);
    ensure_finite(acc.as_slice(), "acceleration")?;
    Ok(acc)
}

/// Full tensor grid of a box with `per_axis` points per coordinate.
pub fn box_grid(lo: &[f64], hi: &[f64], per_axis: usize) -> Result<Vec<DVector<f64>>> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::Config("box bounds must be non-empty and equally sized".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
        return Err(Error::Config("empty box: every upper bound must exceed its lower bound".into()));
    }
    let per_axis = per_axis.max(2);
    let axes: Vec<Vec<f64>> = lo.iter().zip(hi).map(|(&a, &b)| crate::grid::linspace(a, b, per_axis)).collect();
    let total = per_axis.pow(lo.len() as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; lo.len()];
    for _ in 0..total {
        out.push(DVector::from_iterator(lo.len(), idx.iter().enumerate().map(|(d, &k)| axes[d][k])));
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

/// Induced infinity norm (largest absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| row_abs_sum(m, i)).fold(0.0, f64::max)
}

/// Sum of absolute values of row `i`.
pub fn row_abs_sum(m: &DMatrix<f64>, i: usize) -> f64 {
    m.row(i).iter().map(|x| x.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_grid_covers_corners() {
        let g = box_grid(&[0.0, -1.0], &[1.0, 1.0], 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0].as_slice(), &[0.0, -1.0]);
        assert_eq!(g[8].as_slice(), &[1.0, 1.0]);
        assert!(box_grid(&[0.0], &[0.0], 3).is_err());
    }

    #[test]
    fn norms() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.25]);
        assert_eq!(row_abs_sum(&m, 0), 3.0);
        assert_eq!(inf_norm(&m), 3.0);
    }

    #[test]
    fn eval_dynamics_rejects_bad_input() {
        let arm = Planar2Dof::default();
        let q = DVector::from_vec(vec![0.0, 1.0]);
        let v = DVector::zeros(2);
        assert!(matches!(
            eval_dynamics(&arm, &q, &v, &DVector::from_vec(vec![f64::NAN, 0.0])),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(eval_dynamics(&arm, &q, &v, &DVector::zeros(3)), Err(Error::Config(_))));
    }
}
