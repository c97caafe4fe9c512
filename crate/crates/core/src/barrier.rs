//! Barrier functions for box constraints on position, velocity and input.
//!
//! Per joint, `h_up = q_max - q` and `h_low = q - q_min` measure the distance to the position
//! bounds, and the candidate barriers are `b_up = -v + gamma alpha(h_up)` and
//! `b_low = v + gamma alpha(h_low)`. The `_delta` variants inflate the position margins by
//! `delta`, which defines the enlarged set `H^delta` on which the controller stays defined.

use serde::{Deserialize, Serialize};

use crate::classk::{ClassKFn, DEFAULT_CHECK_GRID};
use crate::error::{Error, Result};
use crate::grid::minimize_scalar;

/// Default tolerance for the region boundaries `b = 0` and `b = rho`.
pub const REGION_TOL: f64 = 1e-9;

/// Box constraints `q_min <= q <= q_max`, `|v| <= v_max`, `|u| <= u_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub v_max: Vec<f64>,
    pub u_max: Vec<f64>,
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.q_min.len();
        if n == 0 || self.q_max.len() != n || self.v_max.len() != n || self.u_max.is_empty() {
            return Err(Error::Config("constraint vectors must be non-empty and q/v bounds equally sized".into()));
        }
        for i in 0..n {
            if !(self.q_max[i] > self.q_min[i]) || !self.q_max[i].is_finite() || !self.q_min[i].is_finite() {
                return Err(Error::Config(format!(
                    "degenerate position box on joint {}: [{}, {}]",
                    i + 1,
                    self.q_min[i],
                    self.q_max[i]
                )));
            }
            if !(self.v_max[i] > 0.0) {
                return Err(Error::Config(format!("v_max on joint {} must be positive", i + 1)));
            }
        }
        if self.u_max.iter().any(|u| !(*u >= 0.0) || !u.is_finite()) {
            return Err(Error::Config("u_max entries must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.q_min.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.q_max[i] - self.q_min[i]
    }

    /// `||q_min - q_max||_inf`.
    pub fn max_width(&self) -> f64 {
        (0..self.dof()).map(|i| self.width(i)).fold(0.0, f64::max)
    }

    /// The position box inflated by `delta`.
    pub fn inflated_box(&self, delta: f64) -> (Vec<f64>, Vec<f64>) {
        (
            self.q_min.iter().map(|q| q - delta).collect(),
            self.q_max.iter().map(|q| q + delta).collect(),
        )
    }

    #[inline]
    pub fn h_up(&self, i: usize, q: f64) -> f64 {
        self.q_max[i] - q
    }

    #[inline]
    pub fn h_low(&self, i: usize, q: f64) -> f64 {
        q - self.q_min[i]
    }
}

/// Barrier shaping functions and gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub alpha: ClassKFn,
    pub beta: ClassKFn,
    pub gamma: f64,
    pub nu: f64,
    pub delta: f64,
    pub eta_bar: f64,
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) || !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!(
                "gamma and nu must be positive and finite, got gamma = {}, nu = {}",
                self.gamma, self.nu
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) || !(self.eta_bar >= 0.0 && self.eta_bar.is_finite()) {
            return Err(Error::Config(format!(
                "delta and eta_bar must be non-negative and finite, got delta = {}, eta_bar = {}",
                self.delta, self.eta_bar
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn b_up(&self, spec: &ConstraintSpec, i: usize, q: f64, v: f64) -> f64 {
        -v + self.gamma * self.alpha.value(spec.h_up(i, q))
    }

    #[inline]
    pub fn b_low(&self, spec: &ConstraintSpec, i: usize, q: f64, v: f64) -> f64 {
        v + self.gamma * self.alpha.value(spec.h_low(i, q))
    }

    #[inline]
    pub fn b_up_delta(&self, spec: &ConstraintSpec, i: usize, q: f64, v: f64) -> f64 {
        -v + self.gamma * self.alpha.value(spec.h_up(i, q) + self.delta)
    }

    #[inline]
    pub fn b_low_delta(&self, spec: &ConstraintSpec, i: usize, q: f64, v: f64) -> f64 {
        v + self.gamma * self.alpha.value(spec.h_low(i, q) + self.delta)
    }

    /// The level `rho(q) = (gamma / 2)(alpha(h_up) + alpha(h_low))` at which `b_up = b_low`.
    #[inline]
    pub fn rho(&self, spec: &ConstraintSpec, i: usize, q: f64) -> f64 {
        0.5 * self.gamma * (self.alpha.value(spec.h_up(i, q)) + self.alpha.value(spec.h_low(i, q)))
    }

    /// Velocities `v` with `(q, v)` in `H_i^delta`, or `None` if `q` lies outside `Q_i^delta`.
    pub fn velocity_interval(&self, spec: &ConstraintSpec, i: usize, q: f64) -> Option<(f64, f64)> {
        if q < spec.q_min[i] - self.delta || q > spec.q_max[i] + self.delta {
            return None;
        }
        Some((
            -self.gamma * self.alpha.value(spec.h_low(i, q) + self.delta),
            self.gamma * self.alpha.value(spec.h_up(i, q) + self.delta),
        ))
    }
}

/// Per-joint cell of the decomposition of `H_i^delta` that selects the feedback terms of the
/// explicit feasible control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
    VIII,
}

impl Region {
    pub const ALL: [Region; 8] =
        [Region::I, Region::II, Region::III, Region::IV, Region::V, Region::VI, Region::VII, Region::VIII];

    pub fn index(self) -> u8 {
        self as u8 + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::I => "I",
            Region::II => "II",
            Region::III => "III",
            Region::IV => "IV",
            Region::V => "V",
            Region::VI => "VI",
            Region::VII => "VII",
            Region::VIII => "VIII",
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checks `(q_i, v_i)` against the three inequalities defining `H_i^delta`.
pub fn check_member(spec: &ConstraintSpec, cfg: &BarrierConfig, i: usize, q: f64, v: f64) -> Result<()> {
    if !q.is_finite() || !v.is_finite() {
        return Err(Error::Domain(format!("joint {}: non-finite state ({q}, {v})", i + 1)));
    }
    let (lo, hi) = (spec.q_min[i] - cfg.delta, spec.q_max[i] + cfg.delta);
    if q < lo || q > hi {
        return Err(Error::Domain(format!(
            "joint {}: q = {q} outside Q^delta = [{lo}, {hi}]",
            i + 1
        )));
    }
    let bu = cfg.b_up_delta(spec, i, q, v);
    if bu < 0.0 {
        return Err(Error::Domain(format!("joint {}: b_up^delta = {bu:.6e} < 0 at (q, v) = ({q}, {v})", i + 1)));
    }
    let bl = cfg.b_low_delta(spec, i, q, v);
    if bl < 0.0 {
        return Err(Error::Domain(format!("joint {}: b_low^delta = {bl:.6e} < 0 at (q, v) = ({q}, {v})", i + 1)));
    }
    Ok(())
}

/// Checks every joint of `(q, v)` against `H^delta`.
pub fn check_safe_set(spec: &ConstraintSpec, cfg: &BarrierConfig, q: &[f64], v: &[f64]) -> Result<()> {
    for i in 0..spec.dof() {
        check_member(spec, cfg, i, q[i], v[i])?;
    }
    Ok(())
}

/// Smallest of the margins defining `H^delta` (negative when outside).
pub fn safe_set_margin(spec: &ConstraintSpec, cfg: &BarrierConfig, q: &[f64], v: &[f64]) -> f64 {
    let mut worst = f64::INFINITY;
    for i in 0..spec.dof() {
        worst = worst
            .min(q[i] - (spec.q_min[i] - cfg.delta))
            .min(spec.q_max[i] + cfg.delta - q[i])
            .min(cfg.b_up_delta(spec, i, q[i], v[i]))
            .min(cfg.b_low_delta(spec, i, q[i], v[i]));
    }
    worst
}

/// Region of `(q_i, v_i)`. Cells V/VI take precedence, then the `b = rho` curve (VII/VIII),
/// then I-IV. On `v = 0` the `b_up < rho` branch resolves to II and the `b_low < rho` branch
/// to III.
pub fn classify_region(
    spec: &ConstraintSpec,
    cfg: &BarrierConfig,
    i: usize,
    q: f64,
    v: f64,
    tol: f64,
) -> Result<Region> {
    check_member(spec, cfg, i, q, v)?;
    let bu = cfg.b_up(spec, i, q, v);
    let bl = cfg.b_low(spec, i, q, v);
    let rho = cfg.rho(spec, i, q);
    Ok(if bu < -tol {
        Region::V
    } else if bl < -tol {
        Region::VI
    } else if (bl - rho).abs() <= tol {
        if v >= 0.0 {
            Region::VII
        } else {
            Region::VIII
        }
    } else if bu < rho {
        if v > 0.0 {
            Region::I
        } else {
            Region::II
        }
    } else if v >= 0.0 {
        Region::III
    } else {
        Region::IV
    })
}

/// `min rho(q_i)` over all joints and `q_i` in `Q_i^delta`.
pub fn rho_lower_bound(cfg: &BarrierConfig, spec: &ConstraintSpec) -> Result<f64> {
    rho_lower_bound_with(cfg, spec, DEFAULT_CHECK_GRID)
}

pub fn rho_lower_bound_with(cfg: &BarrierConfig, spec: &ConstraintSpec, grid: usize) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for i in 0..spec.dof() {
        let (_, m) = minimize_scalar(
            |q| cfg.rho(spec, i, q),
            spec.q_min[i] - cfg.delta,
            spec.q_max[i] + cfg.delta,
            grid,
        );
        worst = worst.min(m);
    }
    if !(worst > 0.0) {
        return Err(Error::Synthesis(format!(
            "lower bound of rho over Q^delta is {worst:.6e} <= 0; alpha/delta violate the margin condition"
        )));
    }
    Ok(worst)
}

/// `zeta^delta`: lower bound of `b` over `H^delta`, from the one-dimensional reduction
/// `min over h in [-delta, w + delta] of gamma (alpha(h) - alpha(h + delta))`.
pub fn zeta(cfg: &BarrierConfig, spec: &ConstraintSpec) -> f64 {
    zeta_with(cfg, spec, DEFAULT_CHECK_GRID)
}

pub fn zeta_with(cfg: &BarrierConfig, spec: &ConstraintSpec, grid: usize) -> f64 {
    (0..spec.dof())
        .map(|i| zeta_joint(&cfg.alpha, cfg.gamma, cfg.delta, spec.width(i), grid))
        .fold(0.0, f64::min)
}

/// `zeta_i^delta` for a joint of width `width`.
pub fn zeta_joint(alpha: &ClassKFn, gamma: f64, delta: f64, width: f64, grid: usize) -> f64 {
    if delta == 0.0 {
        return 0.0;
    }
    let f = |h: f64| gamma * (alpha.value(h) - alpha.value(h + delta));
    minimize_scalar(f, -delta, width + delta, grid).1.min(0.0)
}

/// Velocity bound `v_bar = gamma alpha(2 delta + ||q_min - q_max||_inf)` on `H^delta`.
pub fn velocity_bound(cfg: &BarrierConfig, spec: &ConstraintSpec) -> f64 {
    cfg.gamma * cfg.alpha.value(2.0 * cfg.delta + spec.max_width())
}
