use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{box_grid, DynamicsTerms, SystemModel};
use crate::error::{ensure_finite, Error, Result};

/// Largest Jacobian condition number accepted before the map is treated as singular.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e10;

/// A smooth change of position coordinates `q = c(x)` with analytic derivatives.
pub trait CoordinateMap: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `J(x) = dc/dx`, so that `v = J(x) xv`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `(d/dt J(x)) xv` along the motion.
    fn jacobian_dot_times(&self, x: &DVector<f64>, xv: &DVector<f64>) -> DVector<f64>;
}

/// `c1(x) = -1 + (x - r1)^T P (x - r1)`, `c2(x) = r2^T x` for two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsePlaneMap {
    /// Row-major quadratic form.
    pub p: [[f64; 2]; 2],
    pub r1: [f64; 2],
    pub r2: [f64; 2],
}

impl EllipsePlaneMap {
    fn sym(&self) -> [[f64; 2]; 2] {
        let p = self.p;
        [[2.0 * p[0][0], p[0][1] + p[1][0]], [p[0][1] + p[1][0], 2.0 * p[1][1]]]
    }
}

impl CoordinateMap for EllipsePlaneMap {
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = [x[0] - self.r1[0], x[1] - self.r1[1]];
        let p = self.p;
        let quad = d[0] * (p[0][0] * d[0] + p[0][1] * d[1]) + d[1] * (p[1][0] * d[0] + p[1][1] * d[1]);
        DVector::from_vec(vec![-1.0 + quad, self.r2[0] * x[0] + self.r2[1] * x[1]])
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = self.sym();
        let d = [x[0] - self.r1[0], x[1] - self.r1[1]];
        DMatrix::from_row_slice(
            2,
            2,
            &[s[0][0] * d[0] + s[0][1] * d[1], s[1][0] * d[0] + s[1][1] * d[1], self.r2[0], self.r2[1]],
        )
    }

    fn jacobian_dot_times(&self, _x: &DVector<f64>, xv: &DVector<f64>) -> DVector<f64> {
        let s = self.sym();
        let w = [s[0][0] * xv[0] + s[0][1] * xv[1], s[1][0] * xv[0] + s[1][1] * xv[1]];
        DVector::from_vec(vec![xv[0] * w[0] + xv[1] * w[1], 0.0])
    }
}

/// A base model re-expressed in coordinates `q = c(x)`, `v = J(x) xv`.
///
/// With `v' = J xv' + J' xv`, the transformed terms are `G = J G_b`, `G+ = G+_b J^-1`,
/// `f1 = f1_b + G+_b J^-1 J' xv`, `f2 = f2_b`, `f3 = f3_b`, all evaluated at the native
/// state. The integration state stays native.
#[derive(Debug, Clone)]
pub struct TransformedSystem<B, C> {
    pub base: B,
    pub map: C,
    /// Native box searched when enumerating configurations that map into a constrained box.
    pub native_lo: Vec<f64>,
    pub native_hi: Vec<f64>,
    /// Native grid density relative to the requested per-axis density.
    pub oversample: usize,
}

impl<B: SystemModel, C: CoordinateMap> TransformedSystem<B, C> {
    pub fn new(base: B, map: C, native_lo: Vec<f64>, native_hi: Vec<f64>) -> Self {
        TransformedSystem { base, map, native_lo, native_hi, oversample: 2 }
    }

    /// 2-norm condition number of `J(x)`.
    pub fn jacobian_condition(&self, x: &DVector<f64>) -> f64 {
        let sv = self.map.jacobian(x).singular_values();
        let (lo, hi) = (sv.min(), sv.max());
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }

    fn checked_jacobian_inverse(&self, x: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let j = self.map.jacobian(x);
        ensure_finite(j.as_slice(), "coordinate-map jacobian")?;
        let cond = self.jacobian_condition(x);
        if !(cond <= MAX_JACOBIAN_CONDITION) {
            return Err(Error::Numeric(format!(
                "coordinate map is singular at {:?} (condition number {cond:.3e})",
                x.as_slice()
            )));
        }
        let inv = j
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric(format!("coordinate map is singular at {:?}", x.as_slice())))?;
        Ok((j, inv))
    }
}

impl<B: SystemModel, C: CoordinateMap> SystemModel for TransformedSystem<B, C> {
    fn dof(&self) -> usize {
        self.base.dof()
    }

    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn terms(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<DynamicsTerms> {
        let base = self.base.terms(x, xv)?;
        let (j, j_inv) = self.checked_jacobian_inverse(x)?;
        let g_plus = &base.g_plus * &j_inv;
        let f1 = &base.f1 + &g_plus * self.map.jacobian_dot_times(x, xv);
        Ok(DynamicsTerms { g: &j * &base.g, g_plus, f1, f2: base.f2, f3: base.f3 })
    }

    fn constraint_state(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let q = self.map.value(x);
        let v = self.map.jacobian(x) * xv;
        ensure_finite(q.as_slice(), "mapped configuration")?;
        ensure_finite(v.as_slice(), "mapped velocity")?;
        Ok((q, v))
    }

    fn native_velocity(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, j_inv) = self.checked_jacobian_inverse(x)?;
        Ok(j_inv * v)
    }

    fn native_acceleration(&self, x: &DVector<f64>, xv: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.base.native_acceleration(x, xv, u)
    }

    fn configurations(&self, lo: &[f64], hi: &[f64], per_axis: usize) -> Result<Vec<DVector<f64>>> {
        if lo.len() != self.dof() || hi.len() != self.dof() {
            return Err(Error::Config("constrained box has the wrong dimension".into()));
        }
        let native = box_grid(&self.native_lo, &self.native_hi, per_axis.max(2) * self.oversample.max(1))?;
        let inside: Vec<DVector<f64>> = native
            .into_iter()
            .filter(|x| {
                let q = self.map.value(x);
                q.iter().zip(lo.iter().zip(hi)).all(|(qi, (a, b))| *qi >= *a && *qi <= *b)
            })
            .collect();
        if inside.is_empty() {
            return Err(Error::Config(
                "no native configuration in the search box maps into the constrained box".into(),
            ));
        }
        Ok(inside)
    }
}
