//! Empirical property checks: grid sweeps of the feasibility claims, sampled checks of the
//! barrier properties, and the QP oracle comparison. Each check reports its worst margin and up
//! to [`MAX_COUNTEREXAMPLES`] failing states.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::barrier::{check_safe_set, velocity_bound, BarrierConfig, ConstraintSpec};
use crate::classk::ClassKFn;
use crate::controller::{assemble_constraints, u_tilde_from_terms};
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::grid::linspace;
use crate::qp::{oracle, QpProblem, QpSolver, QpStatus};
use crate::synthesis::{SamplingConstants, SynthesisReport};

pub const MAX_COUNTEREXAMPLES: usize = 10;

/// Slack tolerance of the feasibility sweeps, scaled by the row magnitude.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    /// Smallest margin seen; negative values are violations.
    pub worst_margin: f64,
    pub counterexamples: Vec<String>,
}

impl std::fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} checked, worst margin {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.worst_margin
        )?;
        for c in &self.counterexamples {
            write!(f, "\n    counterexample: {c}")?;
        }
        Ok(())
    }
}

/// Running worst margin and counterexamples; `threshold` separates pass from fail.
#[derive(Debug, Clone)]
struct Tally {
    checked: usize,
    worst: f64,
    failures: usize,
    examples: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Tally { checked: 0, worst: f64::INFINITY, failures: 0, examples: Vec::new() }
    }

    fn add(&mut self, margin: f64, threshold: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        if margin < self.worst || margin.is_nan() {
            self.worst = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        }
        if !(margin >= threshold) {
            self.failures += 1;
            if self.examples.len() < MAX_COUNTEREXAMPLES {
                self.examples.push(what());
            }
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.checked += other.checked;
        self.worst = self.worst.min(other.worst);
        self.failures += other.failures;
        let room = MAX_COUNTEREXAMPLES.saturating_sub(self.examples.len());
        self.examples.extend(other.examples.into_iter().take(room));
        self
    }

    fn finish(self, name: &str) -> PropertyResult {
        PropertyResult {
            name: name.into(),
            passed: self.failures == 0 && self.checked > 0,
            checked: self.checked,
            worst_margin: self.worst,
            counterexamples: self.examples,
        }
    }
}

fn fmt_state(q: &DVector<f64>, v: &DVector<f64>) -> String {
    format!("q = {:?}, v = {:?}", q.as_slice(), v.as_slice())
}

/// All index tuples of an `n`-fold product of `k`-point axes.
fn product_indices(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = k.pow(n as u32);
    (0..total).map(move |mut flat| {
        let mut idx = vec![0; n];
        for slot in idx.iter_mut() {
            *slot = flat % k;
            flat /= k;
        }
        idx
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    /// Samples per joint along each of `q_i` and `v_i`.
    pub per_joint: usize,
    /// Margin in the barrier rows and in `u_tilde`.
    pub eta: f64,
}

/// Sweeps `H^delta` on a per-joint `(q_i, v_i)` grid: configurations from the model's grid of
/// `Q^delta`, velocities on each joint's admissible interval. Checks `u_tilde in U`, the `2n`
/// barrier rows at `u_tilde`, optimal QP status, and that the QP optimum is no farther from
/// the nominal input than `u_tilde`.
pub fn feasibility_sweep(
    model: &dyn SystemModel,
    spec: &ConstraintSpec,
    cfg: &BarrierConfig,
    opts: SweepOptions,
) -> Result<Vec<PropertyResult>> {
    spec.validate()?;
    cfg.validate()?;
    if opts.per_joint < 2 {
        return Err(Error::Config("sweep needs at least 2 points per joint".into()));
    }
    let n = spec.dof();
    let (lo, hi) = spec.inflated_box(cfg.delta);
    let configs = model.configurations(&lo, &hi, opts.per_joint)?;
    let zero = DVector::zeros(n);
    let upper = DVector::from_column_slice(&spec.u_max);

    let tallies = configs
        .par_iter()
        .enumerate()
        .map(|(ci, x)| -> Result<[Tally; 4]> {
            let mut t = [Tally::new(), Tally::new(), Tally::new(), Tally::new()];
            let mut solver = QpSolver::default();
            let (q, _) = model.constraint_state(x, &zero)?;
            let axes: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let (a, b) = cfg.velocity_interval(spec, i, q[i]).unwrap_or((0.0, 0.0));
                    linspace(a, b, opts.per_joint)
                })
                .collect();
            for (k, idx) in product_indices(n, opts.per_joint).enumerate() {
                let v = DVector::from_fn(n, |i, _| axes[i][idx[i]]);
                let xv = model.native_velocity(x, &v)?;
                let terms = model.terms(x, &xv)?;
                let ex = u_tilde_from_terms(cfg, spec, &terms, &q, &v, opts.eta)?;
                let box_margin = (0..n).map(|i| spec.u_max[i] - ex.u[i].abs()).fold(f64::INFINITY, f64::min);
                t[0].add(box_margin / (1.0 + upper.amax()), -SLACK_TOL, || {
                    format!("{}: u_tilde = {:?}, regions {:?}", fmt_state(&q, &v), ex.u.as_slice(), ex.regions)
                });
                let c = assemble_constraints(model, cfg, spec, x, &xv, opts.eta)?;
                let slack = c.slack(&ex.u);
                let row_margin = (0..2 * n)
                    .map(|j| {
                        let scale = 1.0 + c.b[j].abs() + c.a.row(j).iter().zip(ex.u.iter()).map(|(a, u)| (a * u).abs()).sum::<f64>();
                        slack[j] / scale
                    })
                    .fold(f64::INFINITY, f64::min);
                t[1].add(row_margin, -SLACK_TOL, || {
                    format!("{}: row slack {:?}, regions {:?}", fmt_state(&q, &v), slack.as_slice(), ex.regions)
                });
                let flat = (ci * 7919 + k) as f64;
                let u_nom = DVector::from_fn(n, |i, _| 3.0 * spec.u_max[i] * (1.7 * flat + i as f64).sin());
                let p = QpProblem { u_nom: u_nom.clone(), a: c.a, b: c.b, lower: -&upper, upper: upper.clone() };
                let sol = solver.solve(&p)?;
                let optimal = sol.status == QpStatus::Optimal;
                t[2].add(if optimal { 0.0 } else { -1.0 }, 0.0, || {
                    format!("{}: QP status {}", fmt_state(&q, &v), sol.status.as_str())
                });
                if optimal {
                    let (d_star, d_tilde) = ((&sol.u_star - &u_nom).norm(), (&ex.u - &u_nom).norm());
                    t[3].add((d_tilde - d_star) / (1.0 + d_tilde), -SLACK_TOL, || {
                        format!("{}: |u* - u_nom| = {d_star:.6e} > |u_tilde - u_nom| = {d_tilde:.6e}", fmt_state(&q, &v))
                    });
                }
            }
            Ok(t)
        })
        .try_reduce(
            || [Tally::new(), Tally::new(), Tally::new(), Tally::new()],
            |a, b| {
                let [a0, a1, a2, a3] = a;
                let [b0, b1, b2, b3] = b;
                Ok([a0.merge(b0), a1.merge(b1), a2.merge(b2), a3.merge(b3)])
            },
        )?;
    let [t0, t1, t2, t3] = tallies;
    Ok(vec![
        t0.finish("u_tilde in U"),
        t1.finish("barrier rows hold at u_tilde"),
        t2.finish("QP optimal"),
        t3.finish("QP optimum no farther than u_tilde"),
    ])
}

/// Uniform samples of `H^delta` by rejection from `Q^delta x [-2 v_bar, 2 v_bar]^n`.
pub fn sample_safe_set(spec: &ConstraintSpec, cfg: &BarrierConfig, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.dof();
    let span = 2.0 * velocity_bound(cfg, spec);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < count * 1000 {
        tries += 1;
        let q = DVector::from_fn(n, |i, _| rng.random_range(spec.q_min[i] - cfg.delta..=spec.q_max[i] + cfg.delta));
        let v = DVector::from_fn(n, |_, _| rng.random_range(-span..=span));
        if check_safe_set(spec, cfg, q.as_slice(), v.as_slice()).is_ok() {
            out.push((q, v));
        }
    }
    out
}

/// `|v_i| <= v_bar` on `H^delta`, and `|v_i| <= v_max_i` (the velocity box contains `H^delta`).
pub fn velocity_bounds(spec: &ConstraintSpec, cfg: &BarrierConfig, samples: usize, seed: u64) -> Vec<PropertyResult> {
    let v_bar = velocity_bound(cfg, spec);
    let (mut bound, mut boxed) = (Tally::new(), Tally::new());
    for (q, v) in sample_safe_set(spec, cfg, samples, seed) {
        bound.add(v_bar - v.amax(), -1e-12, || fmt_state(&q, &v));
        let m = (0..spec.dof()).map(|i| spec.v_max[i] - v[i].abs()).fold(f64::INFINITY, f64::min);
        boxed.add(m, -1e-12, || fmt_state(&q, &v));
    }
    vec![bound.finish("velocity bound v_bar on H^delta"), boxed.finish("H^delta inside V")]
}

/// `b_up + b_low = 2 rho` to `1e-12`.
pub fn barrier_gap(spec: &ConstraintSpec, cfg: &BarrierConfig, samples: usize, seed: u64) -> PropertyResult {
    let mut t = Tally::new();
    for (q, v) in sample_safe_set(spec, cfg, samples, seed) {
        for i in 0..spec.dof() {
            let gap = cfg.b_up(spec, i, q[i], v[i]) + cfg.b_low(spec, i, q[i], v[i]) - 2.0 * cfg.rho(spec, i, q[i]);
            t.add(1e-12 - gap.abs(), 0.0, || format!("{}: joint {} gap {gap:.3e}", fmt_state(&q, &v), i + 1));
        }
    }
    t.finish("b_up + b_low = 2 rho")
}

/// Closed forms of `zeta` against numeric minimisation for linear, arctangent and cubic
/// `alpha` at `pairs` random `(gamma, delta)` pairs, to `1e-8`.
pub fn zeta_closed_forms(pairs: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..pairs {
        let gamma = rng.random_range(0.1..3.0);
        let delta = rng.random_range(0.001..0.5);
        let width = rng.random_range(0.5..4.0);
        let slope = rng.random_range(0.2..5.0);
        for alpha in [ClassKFn::Linear { slope }, ClassKFn::Arctangent, ClassKFn::Cubic] {
            let numeric = crate::barrier::zeta_joint(&alpha, gamma, delta, width, 2000);
            let closed = alpha.zeta_closed_form(gamma, delta, width);
            let err = (numeric - closed).abs();
            t.add(1e-8 - err, 0.0, || {
                format!("{alpha} gamma = {gamma}, delta = {delta}, width = {width}: numeric {numeric}, closed {closed}")
            });
        }
    }
    t.finish("zeta closed forms")
}

/// `zeta` shrinks monotonically to 0 as `delta` decreases on a `points`-point grid.
pub fn zeta_vanishes(alpha: &ClassKFn, gamma: f64, width: f64, delta_max: f64, points: usize) -> PropertyResult {
    let mut t = Tally::new();
    let deltas = linspace(delta_max / points as f64, delta_max, points);
    let z: Vec<f64> = deltas.iter().map(|&d| crate::barrier::zeta_joint(alpha, gamma, d, width, 2000)).collect();
    for k in 1..points {
        // |zeta| grows with delta.
        t.add(z[k - 1] - z[k], -1e-14, || format!("{alpha}: zeta({}) = {} < zeta({}) = {}", deltas[k - 1], z[k - 1], deltas[k], z[k]));
    }
    let slope = gamma * alpha.lipschitz_on(-delta_max, width + 2.0 * delta_max);
    t.add(slope * deltas[0] + z[0], -1e-14, || format!("{alpha}: zeta({}) = {} not O(delta)", deltas[0], z[0]));
    t.add(-crate::barrier::zeta_joint(alpha, gamma, 0.0, width, 10).abs(), 0.0, || "zeta(0) != 0".into());
    t.finish(&format!("zeta -> 0 as delta -> 0 ({alpha})"))
}

/// `eta(0) = 0`, strict increase on a `points`-point grid of `(0, t_end]`, and
/// `t_of_eta(eta_of_t(T)) = T` to `1e-12` relative.
pub fn sampling_margin(s: &SamplingConstants, t_end: f64, points: usize) -> PropertyResult {
    let mut t = Tally::new();
    t.add(-s.eta_of_t(0.0).abs(), 0.0, || format!("eta(0) = {}", s.eta_of_t(0.0)));
    let ts = linspace(0.0, t_end, points);
    for w in ts.windows(2) {
        let (a, b) = (s.eta_of_t(w[0]), s.eta_of_t(w[1]));
        t.add(b - a, f64::MIN_POSITIVE, || format!("eta({}) = {a} >= eta({}) = {b}", w[0], w[1]));
        let back = s.t_of_eta(b);
        t.add(1e-12 - (back - w[1]).abs() / w[1], 0.0, || format!("T = {}: round trip gives {back}", w[1]));
    }
    t.finish("eta(T) zero, increasing, invertible")
}

/// A random QP around a known feasible point, with about one row in five a duplicate.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let m = rng.random_range(1..=4usize);
    let k = rng.random_range(1..=10usize);
    let x0: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut b = Vec::new();
    for _ in 0..k {
        if !rows.is_empty() && rng.random_bool(0.2) {
            let j = rng.random_range(0..rows.len());
            rows.push(rows[j].clone());
            b.push(b[j]);
            continue;
        }
        let n: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s: f64 = n.iter().zip(&x0).map(|(a, c)| a * c).sum();
        rows.push(n);
        b.push(s - rng.random_range(0.0..1.0));
    }
    QpProblem {
        u_nom: DVector::from_fn(m, |_, _| rng.random_range(-6.0..6.0)),
        a: DMatrix::from_fn(k, m, |i, j| rows[i][j]),
        b: DVector::from_vec(b),
        lower: DVector::from_fn(m, |i, _| x0[i] - rng.random_range(0.5..3.0)),
        upper: DVector::from_fn(m, |i, _| x0[i] + rng.random_range(0.5..3.0)),
    }
}

/// The active-set solver against exhaustive enumeration (`1e-8`), and invariance of the
/// solution when every row is duplicated (`1e-10`).
pub fn qp_oracle(instances: usize, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solver = QpSolver::default();
    let (mut oracle_t, mut dup_t) = (Tally::new(), Tally::new());
    for k in 0..instances {
        let p = random_qp(&mut rng);
        let s = solver.solve(&p)?;
        match oracle::solve_by_enumeration(&p, 1e-9) {
            Some(o) => {
                let err = if s.status == QpStatus::Optimal { (&s.u_star - &o).amax() } else { f64::INFINITY };
                oracle_t.add(1e-8 - err, 0.0, || format!("instance {k}: status {}, error {err:.3e}", s.status.as_str()));
            }
            None => oracle_t.add(
                if s.status == QpStatus::Infeasible { 0.0 } else { -1.0 },
                0.0,
                || format!("instance {k}: oracle infeasible, solver {}", s.status.as_str()),
            ),
        }
        let rows = p.a.nrows();
        let dup = QpProblem {
            a: DMatrix::from_fn(2 * rows, p.a.ncols(), |i, j| p.a[(i % rows, j)]),
            b: DVector::from_fn(2 * rows, |i, _| p.b[i % rows]),
            ..p.clone()
        };
        let d = solver.solve(&dup)?;
        let err = if d.status == s.status && s.status == QpStatus::Optimal {
            (&d.u_star - &s.u_star).amax()
        } else if d.status == s.status {
            0.0
        } else {
            f64::INFINITY
        };
        dup_t.add(1e-10 - err, 0.0, || format!("instance {k}: duplicated rows change the solution by {err:.3e}"));
    }
    Ok(vec![oracle_t.finish("QP matches enumeration oracle"), dup_t.finish("QP invariant to duplicated rows")])
}

/// The chosen `(gamma, delta, nu)` against the certified intervals: `delta <= delta*`,
/// `nu_1* < nu_2*`, `nu` inside, and `eta_bar <= eta*`.
pub fn parameter_intervals(report: &SynthesisReport, spec: &ConstraintSpec, cfg: &BarrierConfig) -> Result<PropertyResult> {
    let at = report.intervals_at(spec, cfg.gamma, cfg.delta)?;
    let mut t = Tally::new();
    let ctx = || format!("gamma = {}, delta = {}, nu = {}: {at:?}", cfg.gamma, cfg.delta, cfg.nu);
    t.add(report.gamma_bound() - cfg.gamma, -1e-12, || format!("gamma above min bound {}", report.gamma_bound()));
    t.add(at.delta_star - cfg.delta, -1e-12, ctx);
    t.add((at.nu2 - at.nu1) / at.nu1, f64::MIN_POSITIVE, ctx);
    t.add((cfg.nu - at.nu1) / at.nu1, 0.0, ctx);
    t.add((at.nu2 - cfg.nu) / cfg.nu, 0.0, ctx);
    t.add(at.eta_star(report, cfg.nu) - cfg.eta_bar, 0.0, ctx);
    Ok(t.finish("parameters inside certified intervals"))
}

fn rk4_native(model: &dyn SystemModel, x: &DVector<f64>, xv: &DVector<f64>, u: &DVector<f64>, h: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let f = |x: &DVector<f64>, xv: &DVector<f64>| model.native_acceleration(x, xv, u).map(|a| (xv.clone(), a));
    let (k1x, k1v) = f(x, xv)?;
    let (k2x, k2v) = f(&(x + &k1x * (0.5 * h)), &(xv + &k1v * (0.5 * h)))?;
    let (k3x, k3v) = f(&(x + &k2x * (0.5 * h)), &(xv + &k2v * (0.5 * h)))?;
    let (k4x, k4v) = f(&(x + &k3x * h), &(xv + &k3v * h))?;
    Ok((x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0), xv + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0)))
}

/// Relative mismatch between the model's constrained-coordinate derivative `(v, G (f + u))`
/// and central differences of `(q, v)` along the native flow with step `h`.
pub fn transformed_derivative_error(model: &dyn SystemModel, x: &DVector<f64>, xv: &DVector<f64>, u: &DVector<f64>, h: f64) -> Result<f64> {
    let (q, v) = model.constraint_state(x, xv)?;
    let _ = q;
    let acc = model.terms(x, xv)?.acceleration(u);
    let (xp, vp) = rk4_native(model, x, xv, u, h)?;
    let (xm, vm) = rk4_native(model, x, xv, u, -h)?;
    let (qp, vpc) = model.constraint_state(&xp, &vp)?;
    let (qm, vmc) = model.constraint_state(&xm, &vm)?;
    let dq = (qp - qm) / (2.0 * h);
    let dv = (vpc - vmc) / (2.0 * h);
    let err = (&dq - &v).amax().max((&dv - &acc).amax());
    let scale = v.amax().max(acc.amax()).max(1e-6);
    Ok(err / scale)
}

/// Everything [`run_suite`] needs besides the model and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteOptions {
    pub per_joint: usize,
    pub samples: usize,
    pub zeta_pairs: usize,
    pub qp_instances: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { per_joint: 50, samples: 10_000, zeta_pairs: 20, qp_instances: 1000, seed: 1 }
    }
}

/// The full property suite for one parameter set. `eta` is the margin the filter runs with.
pub fn run_suite(
    model: &dyn SystemModel,
    spec: &ConstraintSpec,
    cfg: &BarrierConfig,
    report: Option<&SynthesisReport>,
    sampling_period: Option<f64>,
    opts: &SuiteOptions,
) -> Result<Vec<PropertyResult>> {
    let mut out = feasibility_sweep(model, spec, cfg, SweepOptions { per_joint: opts.per_joint, eta: cfg.eta_bar })?;
    out.extend(velocity_bounds(spec, cfg, opts.samples, opts.seed));
    out.push(barrier_gap(spec, cfg, opts.samples, opts.seed + 1));
    out.push(zeta_closed_forms(opts.zeta_pairs, opts.seed + 2));
    out.push(zeta_vanishes(&cfg.alpha, cfg.gamma, spec.max_width(), cfg.delta.max(0.01), 50));
    if let Some(r) = report {
        let t_end = sampling_period.unwrap_or(1e-3) * 10.0;
        out.push(sampling_margin(&r.sampling, t_end, 100));
        out.push(parameter_intervals(r, spec, cfg)?);
    }
    out.extend(qp_oracle(opts.qp_instances, opts.seed + 3)?);
    Ok(out)
}
