use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{DynamicsTerms, SystemModel};
use crate::error::{ensure_finite, Error, Result};

pub const GRAVITY: f64 = 9.81;

/// How each link's mass is distributed along the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassMode {
    /// All mass concentrated at the distal end of the link.
    #[default]
    PointMassAtTip,
    /// Uniform slender rod: centre of mass at mid-length, inertia `m l^2 / 12`.
    UniformRod,
}

/// Two-link planar revolute arm. `q1` is the shoulder angle, `q2` the elbow angle relative
/// to the first link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Planar2Dof {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    /// Viscous damping matrix `F` (row-major), `f2 = -F v`.
    pub damping: [[f64; 2]; 2],
    /// When false the arm moves in a horizontal plane and `f3 = 0`.
    pub gravity: bool,
    pub mass_mode: MassMode,
}

impl Default for Planar2Dof {
    fn default() -> Self {
        Planar2Dof {
            l1: 1.0,
            l2: 1.0,
            m1: 1.0,
            m2: 1.0,
            damping: [[0.001, 0.0], [0.0, 0.001]],
            gravity: false,
            mass_mode: MassMode::PointMassAtTip,
        }
    }
}

impl Planar2Dof {
    pub fn with_mass_mode(mut self, mode: MassMode) -> Self {
        self.mass_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("l1", self.l1), ("l2", self.l2), ("m1", self.m1), ("m2", self.m2)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {x}")));
            }
        }
        ensure_finite(&[self.damping[0][0], self.damping[0][1], self.damping[1][0], self.damping[1][1]], "damping")
            .map_err(|_| Error::Config("damping matrix must be finite".into()))
    }

    /// `(lc1, lc2, I1, I2)`: centre-of-mass distances and link inertias about the centres.
    fn link_geometry(&self) -> (f64, f64, f64, f64) {
        match self.mass_mode {
            MassMode::PointMassAtTip => (self.l1, self.l2, 0.0, 0.0),
            MassMode::UniformRod => (
                0.5 * self.l1,
                0.5 * self.l2,
                self.m1 * self.l1 * self.l1 / 12.0,
                self.m2 * self.l2 * self.l2 / 12.0,
            ),
        }
    }

    /// Inertia matrix `M(q2)`.
    pub fn inertia(&self, q2: f64) -> Matrix2<f64> {
        let (lc1, lc2, i1, i2) = self.link_geometry();
        let c2 = q2.cos();
        let m22 = self.m2 * lc2 * lc2 + i2;
        let m12 = m22 + self.m2 * self.l1 * lc2 * c2;
        let m11 = self.m1 * lc1 * lc1 + i1 + self.m2 * (self.l1 * self.l1 + lc2 * lc2 + 2.0 * self.l1 * lc2 * c2) + i2;
        Matrix2::new(m11, m12, m12, m22)
    }

    /// Coriolis matrix `C(q, v)` with `M' - 2C` skew-symmetric.
    pub fn coriolis(&self, q2: f64, v: &Vector2<f64>) -> Matrix2<f64> {
        let (_, lc2, _, _) = self.link_geometry();
        let h = -self.m2 * self.l1 * lc2 * q2.sin();
        Matrix2::new(h * v[1], h * (v[0] + v[1]), -h * v[0], 0.0)
    }

    /// Gravity torque `g(q)` for an arm in a vertical plane (zero when gravity is off).
    pub fn gravity_torque(&self, q: &Vector2<f64>) -> Vector2<f64> {
        if !self.gravity {
            return Vector2::zeros();
        }
        let (lc1, lc2, _, _) = self.link_geometry();
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        let g2 = self.m2 * lc2 * GRAVITY * c12;
        Vector2::new((self.m1 * lc1 + self.m2 * self.l1) * GRAVITY * c1 + g2, g2)
    }

    fn damping_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.damping[0][0], self.damping[0][1], self.damping[1][0], self.damping[1][1])
    }
}

fn to2(x: &DVector<f64>, what: &str) -> Result<Vector2<f64>> {
    if x.len() != 2 {
        return Err(Error::Config(format!("{what} must have 2 entries, got {}", x.len())));
    }
    ensure_finite(x.as_slice(), what)?;
    Ok(Vector2::new(x[0], x[1]))
}

fn dyn_mat(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]])
}

fn dyn_vec(v: &Vector2<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

impl SystemModel for Planar2Dof {
    fn dof(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn terms(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<DynamicsTerms> {
        let q = to2(x, "configuration")?;
        let v = to2(xv, "velocity")?;
        let m = self.inertia(q[1]);
        let g = m.try_inverse().ok_or_else(|| Error::Numeric("singular inertia matrix".into()))?;
        Ok(DynamicsTerms {
            g: dyn_mat(&g),
            g_plus: dyn_mat(&m),
            f1: dyn_vec(&-(self.coriolis(q[1], &v) * v)),
            f2: dyn_vec(&-(self.damping_matrix() * v)),
            f3: dyn_vec(&-self.gravity_torque(&q)),
        })
    }
}

/// `n` decoupled unit point masses with linear damping: `m v' = -c v + u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub n: usize,
    pub mass: f64,
    pub damping: f64,
}

impl SystemModel for PointMass {
    fn dof(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.n
    }

    fn terms(&self, x: &DVector<f64>, xv: &DVector<f64>) -> Result<DynamicsTerms> {
        if x.len() != self.n || xv.len() != self.n {
            return Err(Error::Config(format!("point mass expects {} coordinates", self.n)));
        }
        ensure_finite(xv.as_slice(), "velocity")?;
        Ok(DynamicsTerms {
            g: DMatrix::identity(self.n, self.n) / self.mass,
            g_plus: DMatrix::identity(self.n, self.n) * self.mass,
            f1: DVector::zeros(self.n),
            f2: -xv * self.damping,
            f3: DVector::zeros(self.n),
        })
    }
}
