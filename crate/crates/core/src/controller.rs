//! Safety filters: the stacked barrier constraints, the explicit feasible control `u_tilde`,
//! the continuous and sampled QP laws, and the computed-torque nominal controller.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{check_safe_set, classify_region, BarrierConfig, ConstraintSpec, Region, REGION_TOL};
use crate::dynamics::{DynamicsTerms, Planar2Dof, SystemModel};
use crate::error::{Error, Result};
use crate::qp::{ConstraintRef, QpProblem, QpSolver, QpStatus};
use crate::synthesis::SamplingConstants;

/// The stacked barrier conditions `A u >= b` at one state. Rows `0..n` are the upper-bound
/// barriers, rows `n..2n` the lower-bound barriers.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcbfConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Constrained coordinates of the state.
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub terms: DynamicsTerms,
}

impl ZcbfConstraints {
    /// `A u - b`, one entry per row.
    pub fn slack(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.a * u - &self.b
    }
}

/// Assembles `A = S G(q)` and `b = -nu p + eta 1 - S G (f1 + f2 + f3) - gamma Lambda S v` with
/// `S = [-I; I]`, `p = beta(b)` and `Lambda` holding `alpha'` at the unshifted margins.
/// No membership check.
pub fn assemble_constraints(
    model: &dyn SystemModel,
    cfg: &BarrierConfig,
    spec: &ConstraintSpec,
    x: &DVector<f64>,
    xv: &DVector<f64>,
    eta: f64,
) -> Result<ZcbfConstraints> {
    let n = model.dof();
    let m = model.input_dim();
    let terms = model.terms(x, xv)?;
    let (q, v) = model.constraint_state(x, xv)?;
    let drift = &terms.g * terms.drift();
    let mut a = DMatrix::zeros(2 * n, m);
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        let up_slope = cfg.alpha.derivative(spec.h_up(i, q[i]));
        let low_slope = cfg.alpha.derivative(spec.h_low(i, q[i]));
        let p_up = cfg.beta.value(cfg.b_up(spec, i, q[i], v[i]));
        let p_low = cfg.beta.value(cfg.b_low(spec, i, q[i], v[i]));
        for j in 0..m {
            a[(i, j)] = -terms.g[(i, j)];
            a[(n + i, j)] = terms.g[(i, j)];
        }
        b[i] = -cfg.nu * p_up + eta + drift[i] + cfg.gamma * up_slope * v[i];
        b[n + i] = -cfg.nu * p_low + eta - drift[i] - cfg.gamma * low_slope * v[i];
    }
    Ok(ZcbfConstraints { a, b, q, v, terms })
}

/// [`assemble_constraints`] after checking that the state lies in `H^delta`.
pub fn build_constraints(
    model: &dyn SystemModel,
    cfg: &BarrierConfig,
    spec: &ConstraintSpec,
    x: &DVector<f64>,
    xv: &DVector<f64>,
    eta: f64,
) -> Result<ZcbfConstraints> {
    let (q, v) = model.constraint_state(x, xv)?;
    check_safe_set(spec, cfg, q.as_slice(), v.as_slice())?;
    assemble_constraints(model, cfg, spec, x, xv, eta)
}

/// The explicit feasible control together with the region of each joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitControl {
    pub u: DVector<f64>,
    pub regions: Vec<Region>,
    /// Commanded `v'` per joint: `mu + chi + psi`.
    pub accel: DVector<f64>,
}

/// `u_tilde = G+(q)(mu + chi + psi) - f1 - f2 - f3`, with `mu`, `chi`, `psi` picked per joint
/// from the joint's region. `eta_bar` is the margin the construction is certified for.
pub fn u_tilde(
    model: &dyn SystemModel,
    cfg: &BarrierConfig,
    spec: &ConstraintSpec,
    x: &DVector<f64>,
    xv: &DVector<f64>,
    eta_bar: f64,
) -> Result<ExplicitControl> {
    let terms = model.terms(x, xv)?;
    let (q, v) = model.constraint_state(x, xv)?;
    u_tilde_from_terms(cfg, spec, &terms, &q, &v, eta_bar)
}

pub(crate) fn u_tilde_from_terms(
    cfg: &BarrierConfig,
    spec: &ConstraintSpec,
    terms: &DynamicsTerms,
    q: &DVector<f64>,
    v: &DVector<f64>,
    eta_bar: f64,
) -> Result<ExplicitControl> {
    let n = q.len();
    let mut accel = DVector::zeros(n);
    let mut regions = Vec::with_capacity(n);
    for i in 0..n {
        let region = classify_region(spec, cfg, i, q[i], v[i], REGION_TOL)?;
        let mu_up = -cfg.gamma * cfg.alpha.derivative(spec.h_up(i, q[i])) * v[i];
        let mu_low = -cfg.gamma * cfg.alpha.derivative(spec.h_low(i, q[i])) * v[i];
        let (mu, chi, psi) = match region {
            Region::I => (mu_up, 0.0, -eta_bar),
            Region::II => (0.0, 0.0, -eta_bar),
            Region::III => (0.0, 0.0, eta_bar),
            Region::IV => (mu_low, 0.0, eta_bar),
            Region::V => (mu_up, cfg.nu * cfg.beta.value(cfg.b_up(spec, i, q[i], v[i])), -eta_bar),
            Region::VI => (mu_low, -cfg.nu * cfg.beta.value(cfg.b_low(spec, i, q[i], v[i])), eta_bar),
            Region::VII => (mu_up, 0.0, 0.0),
            Region::VIII => (mu_low, 0.0, 0.0),
        };
        accel[i] = mu + chi + psi;
        regions.push(region);
    }
    let u = &terms.g_plus * &accel - terms.drift();
    Ok(ExplicitControl { u, regions, accel })
}

/// How the sampled law picks its constraint margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginPolicy {
    /// `eta(T)` from the sampling constants; periods with `eta(T) > eta_bar` are rejected.
    #[default]
    Certified,
    /// The synthesized `eta_bar`, without checking `eta(T)`.
    EtaBar,
}

/// Constraint margin for sampling period `t` under `policy`.
pub fn sampled_margin(
    cfg: &BarrierConfig,
    sampling: &SamplingConstants,
    t: f64,
    policy: MarginPolicy,
) -> Result<f64> {
    match policy {
        MarginPolicy::EtaBar => Ok(cfg.eta_bar),
        MarginPolicy::Certified => {
            let eta_t = sampling.eta_of_t(t);
            if eta_t > cfg.eta_bar {
                Err(Error::SamplingTooLarge {
                    eta_t,
                    eta_bar: cfg.eta_bar,
                    t_max: if cfg.eta_bar > 0.0 { sampling.t_of_eta(cfg.eta_bar) } else { 0.0 },
                })
            } else {
                Ok(eta_t)
            }
        }
    }
}

/// What the filter fell back to when the QP did not return an optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    None,
    /// The explicit feasible control.
    UTilde,
    /// The nominal input clipped to the input box (state outside `H^delta`).
    Clipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub u: DVector<f64>,
    pub status: QpStatus,
    pub active_set: Vec<ConstraintRef>,
    pub fallback: Fallback,
    pub constraints: ZcbfConstraints,
}

/// QP safety filter with its own solver workspace.
pub struct SafetyFilter<'a> {
    pub model: &'a dyn SystemModel,
    pub cfg: &'a BarrierConfig,
    pub spec: &'a ConstraintSpec,
    solver: QpSolver,
}

impl<'a> SafetyFilter<'a> {
    pub fn new(model: &'a dyn SystemModel, cfg: &'a BarrierConfig, spec: &'a ConstraintSpec) -> Self {
        SafetyFilter { model, cfg, spec, solver: QpSolver::default() }
    }

    /// `argmin ||u - u_nom||^2` over the barrier rows with margin `eta` and the input box.
    /// A non-optimal QP falls back to `u_tilde` inside `H^delta` and to the clipped nominal
    /// input outside it.
    pub fn filter(&mut self, x: &DVector<f64>, xv: &DVector<f64>, u_nom: &DVector<f64>, eta: f64) -> Result<FilterOutput> {
        let constraints = assemble_constraints(self.model, self.cfg, self.spec, x, xv, eta)?;
        let upper = DVector::from_column_slice(&self.spec.u_max);
        let problem = QpProblem { u_nom: u_nom.clone(), a: constraints.a.clone(), b: constraints.b.clone(), lower: -&upper, upper };
        let sol = self.solver.solve(&problem)?;
        if sol.status == QpStatus::Optimal {
            return Ok(FilterOutput {
                u: sol.u_star,
                status: sol.status,
                active_set: sol.active_set,
                fallback: Fallback::None,
                constraints,
            });
        }
        let inside = check_safe_set(self.spec, self.cfg, constraints.q.as_slice(), constraints.v.as_slice()).is_ok();
        let (u, fallback) = if inside {
            let ex = u_tilde_from_terms(self.cfg, self.spec, &constraints.terms, &constraints.q, &constraints.v, self.cfg.eta_bar)?;
            (ex.u, Fallback::UTilde)
        } else {
            (u_nom.zip_map(&problem.upper, |u, hi| u.clamp(-hi, hi)), Fallback::Clipped)
        };
        Ok(FilterOutput { u, status: sol.status, active_set: sol.active_set, fallback, constraints })
    }
}

/// Continuous-time law: the QP with zero margin.
pub fn u_star_continuous(
    model: &dyn SystemModel,
    cfg: &BarrierConfig,
    spec: &ConstraintSpec,
    x: &DVector<f64>,
    xv: &DVector<f64>,
    u_nom: &DVector<f64>,
) -> Result<FilterOutput> {
    let (q, v) = model.constraint_state(x, xv)?;
    check_safe_set(spec, cfg, q.as_slice(), v.as_slice())?;
    SafetyFilter::new(model, cfg, spec).filter(x, xv, u_nom, 0.0)
}

/// Sampled-data law: the QP with margin `eta(T)` (or `eta_bar` under [`MarginPolicy::EtaBar`]).
/// The caller holds the result over the sampling interval.
#[allow(clippy::too_many_arguments)]
pub fn u_star_sampled(
    model: &dyn SystemModel,
    cfg: &BarrierConfig,
    spec: &ConstraintSpec,
    x: &DVector<f64>,
    xv: &DVector<f64>,
    u_nom: &DVector<f64>,
    t: f64,
    sampling: &SamplingConstants,
    policy: MarginPolicy,
) -> Result<FilterOutput> {
    let eta = sampled_margin(cfg, sampling, t, policy)?;
    let (q, v) = model.constraint_state(x, xv)?;
    check_safe_set(spec, cfg, q.as_slice(), v.as_slice())?;
    SafetyFilter::new(model, cfg, spec).filter(x, xv, u_nom, eta)
}

/// A reference `r_i(t) = amplitude_i sin(frequency_i t + phase_i) + offset_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineReference {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    #[serde(default)]
    pub phase: Vec<f64>,
    pub offset: Vec<f64>,
}

impl SineReference {
    fn phase(&self, i: usize) -> f64 {
        self.phase.get(i).copied().unwrap_or(0.0)
    }

    /// `(r, r', r'')` at time `t`.
    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.amplitude.len();
        let arg = |i: usize| self.frequency[i] * t + self.phase(i);
        (
            DVector::from_fn(n, |i, _| self.amplitude[i] * arg(i).sin() + self.offset[i]),
            DVector::from_fn(n, |i, _| self.amplitude[i] * self.frequency[i] * arg(i).cos()),
            DVector::from_fn(n, |i, _| -self.amplitude[i] * self.frequency[i].powi(2) * arg(i).sin()),
        )
    }
}

/// A state-feedback law evaluated at integration-state coordinates.
pub trait NominalController: Send + Sync {
    fn control(&self, t: f64, x: &DVector<f64>, xv: &DVector<f64>) -> DVector<f64>;
}

/// `u_nom = M(q2)(r'' - e' - e) + C(q, v) v` with `e = q - r` in the arm's joint coordinates.
/// The `+ C v` term cancels the Coriolis drift `f1 = -C v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputedTorque {
    pub arm: Planar2Dof,
    pub reference: SineReference,
}

/// Computed-torque law evaluated once.
pub fn computed_torque_nominal(arm: &Planar2Dof, q: &DVector<f64>, v: &DVector<f64>, t: f64, reference: &SineReference) -> DVector<f64> {
    let (r, rd, rdd) = reference.eval(t);
    let e = q - r;
    let ed = v - rd;
    let m = arm.inertia(q[1]);
    let vv = nalgebra::Vector2::new(v[0], v[1]);
    let c = arm.coriolis(q[1], &vv) * vv;
    let w = rdd - ed - e;
    let mw = m * nalgebra::Vector2::new(w[0], w[1]);
    DVector::from_vec(vec![mw[0] + c[0], mw[1] + c[1]])
}

impl NominalController for ComputedTorque {
    fn control(&self, t: f64, x: &DVector<f64>, xv: &DVector<f64>) -> DVector<f64> {
        computed_torque_nominal(&self.arm, x, xv, t, &self.reference)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classk::ClassKFn;
    use crate::dynamics::{MassMode, PointMass};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> (PointMass, ConstraintSpec, BarrierConfig) {
        (
            PointMass { n: 1, mass: 1.0, damping: 0.0 },
            ConstraintSpec { q_min: vec![-1.0], q_max: vec![1.0], v_max: vec![2.0], u_max: vec![5.0] },
            BarrierConfig { alpha: ClassKFn::Arctangent, beta: ClassKFn::Cubic, gamma: 1.0, nu: 50.0, delta: 0.2, eta_bar: 0.1 },
        )
    }

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_joint_rows_are_the_scalar_conditions() {
        let (pm, spec, cfg) = unit();
        let (q, v) = (0.3, -0.4);
        let c = build_constraints(&pm, &cfg, &spec, &dv(&[q]), &dv(&[v]), 0.1).unwrap();
        // -u - gamma alpha'(h_up) v >= -nu beta(b_up) + eta, and u + gamma alpha'(h_low) v >= -nu beta(b_low) + eta.
        let bu = -v + (1.0 - q).atan();
        let bl = v + (q + 1.0).atan();
        assert_eq!(c.a[(0, 0)], -1.0);
        assert_eq!(c.a[(1, 0)], 1.0);
        assert!((c.b[0] - (-50.0 * bu.powi(3) + 0.1 + v / (1.0 + (1.0 - q).powi(2)))).abs() < 1e-12);
        assert!((c.b[1] - (-50.0 * bl.powi(3) + 0.1 - v / (1.0 + (q + 1.0).powi(2)))).abs() < 1e-12);
    }

    #[test]
    fn mirrored_state_swaps_rows() {
        let arm = Planar2Dof::default().with_mass_mode(MassMode::UniformRod);
        let spec = ConstraintSpec { q_min: vec![-1.0, -1.0], q_max: vec![1.0, 1.0], v_max: vec![2.0, 2.0], u_max: vec![9.0, 9.0] };
        let cfg = BarrierConfig { alpha: ClassKFn::Arctangent, beta: ClassKFn::Cubic, gamma: 0.5, nu: 30.0, delta: 0.1, eta_bar: 0.0 };
        let pm = PointMass { n: 2, mass: 1.0, damping: 0.0 };
        let _ = arm;
        let c1 = build_constraints(&pm, &cfg, &spec, &dv(&[0.3, -0.2]), &dv(&[0.1, 0.2]), 0.0).unwrap();
        let c2 = build_constraints(&pm, &cfg, &spec, &dv(&[-0.3, 0.2]), &dv(&[-0.1, -0.2]), 0.0).unwrap();
        for i in 0..2 {
            assert!((c1.b[i] - c2.b[2 + i]).abs() < 1e-12);
            assert!((c1.b[2 + i] - c2.b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_state_is_rejected() {
        let (pm, spec, cfg) = unit();
        let err = build_constraints(&pm, &cfg, &spec, &dv(&[1.5]), &dv(&[0.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn rest_at_centre_accepts_zero_input() {
        let (pm, spec, cfg) = unit();
        let c = build_constraints(&pm, &cfg, &spec, &dv(&[0.0]), &dv(&[0.0]), cfg.eta_bar).unwrap();
        assert!(c.slack(&dv(&[0.0])).min() >= 0.0);
    }

    #[test]
    fn region_v_and_vi_rows_are_tight() {
        let (pm, spec, cfg) = unit();
        // Past the upper bound with outward velocity inside H^delta: region V.
        let (q, v) = (1.05, 0.0);
        let ex = u_tilde(&pm, &cfg, &spec, &dv(&[q]), &dv(&[v]), cfg.eta_bar).unwrap();
        assert_eq!(ex.regions, vec![Region::V]);
        let c = build_constraints(&pm, &cfg, &spec, &dv(&[q]), &dv(&[v]), cfg.eta_bar).unwrap();
        assert!(c.slack(&ex.u)[0].abs() < 1e-12);
        let ex = u_tilde(&pm, &cfg, &spec, &dv(&[-1.05]), &dv(&[0.01]), cfg.eta_bar).unwrap();
        assert_eq!(ex.regions, vec![Region::VI]);
        let c = build_constraints(&pm, &cfg, &spec, &dv(&[-1.05]), &dv(&[0.01]), cfg.eta_bar).unwrap();
        assert!(c.slack(&ex.u)[1].abs() < 1e-12);
    }

    #[test]
    fn filter_projects_and_beats_u_tilde() {
        let (pm, spec, cfg) = unit();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = SafetyFilter::new(&pm, &cfg, &spec);
        for _ in 0..2000 {
            let q = rng.random_range(-1.2..1.2);
            let (lo, hi) = cfg.velocity_interval(&spec, 0, q).unwrap();
            let v = rng.random_range(lo..=hi);
            let u_nom = dv(&[rng.random_range(-20.0..20.0)]);
            let out = f.filter(&dv(&[q]), &dv(&[v]), &u_nom, cfg.eta_bar).unwrap();
            assert_eq!(out.status, QpStatus::Optimal);
            let ex = u_tilde(&pm, &cfg, &spec, &dv(&[q]), &dv(&[v]), cfg.eta_bar).unwrap();
            assert!((&out.u - &u_nom).norm() <= (&ex.u - &u_nom).norm() + 1e-12);
            let again = f.filter(&dv(&[q]), &dv(&[v]), &ex.u, cfg.eta_bar).unwrap();
            assert!((again.u - &ex.u).amax() < 1e-9);
        }
    }

    #[test]
    fn sampled_margin_policies() {
        let (_, _, cfg) = unit();
        let s = SamplingConstants { c1: 1.0, c2: 1.0, c3: 1.0, c4: 1.0, c5: 1.0 };
        let t_max = s.t_of_eta(cfg.eta_bar);
        assert!((sampled_margin(&cfg, &s, t_max * 0.5, MarginPolicy::Certified).unwrap() - s.eta_of_t(t_max * 0.5)).abs() < 1e-15);
        match sampled_margin(&cfg, &s, t_max * 1.01, MarginPolicy::Certified) {
            Err(Error::SamplingTooLarge { t_max: reported, .. }) => assert!((reported - t_max).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(sampled_margin(&cfg, &s, 1.0, MarginPolicy::EtaBar).unwrap(), cfg.eta_bar);
        assert_eq!(sampled_margin(&cfg, &s, 0.0, MarginPolicy::Certified).unwrap(), 0.0);
    }

    #[test]
    fn computed_torque_at_zero_error() {
        let arm = Planar2Dof::default();
        let reference = SineReference { amplitude: vec![0.5, 0.2], frequency: vec![1.0, 2.0], phase: vec![], offset: vec![0.1, 1.0] };
        let t = 0.7;
        let (r, rd, rdd) = reference.eval(t);
        let u = computed_torque_nominal(&arm, &r, &rd, t, &reference);
        let m = arm.inertia(r[1]);
        let vv = nalgebra::Vector2::new(rd[0], rd[1]);
        let expect = m * nalgebra::Vector2::new(rdd[0], rdd[1]) + arm.coriolis(r[1], &vv) * vv;
        assert!((u[0] - expect[0]).abs() < 1e-12 && (u[1] - expect[1]).abs() < 1e-12);
        // The law feedback-linearises the undamped arm: e'' = -e' - e.
        let e = dv(&[0.1, -0.05]);
        let ed = dv(&[0.02, 0.3]);
        let q = &r + &e;
        let v = &rd + &ed;
        let u = computed_torque_nominal(&arm, &q, &v, t, &reference);
        let undamped = Planar2Dof { damping: [[0.0; 2]; 2], ..arm };
        let acc = crate::dynamics::eval_dynamics(&undamped, &q, &v, &u).unwrap();
        assert!(((acc - rdd) + &ed + &e).amax() < 1e-12);
    }
}
