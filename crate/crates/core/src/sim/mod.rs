//! Zero-order-hold closed-loop simulation with a per-substep safety monitor.

mod scenario;

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use scenario::{scenario, ModelConfig, Scenario, ScenarioModel, TransformConfig, SCENARIO_IDS};

use crate::barrier::{classify_region, safe_set_margin, BarrierConfig, ConstraintSpec, Region, REGION_TOL};
use crate::controller::{sampled_margin, Fallback, MarginPolicy, NominalController, SafetyFilter};
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::qp::QpStatus;
use crate::synthesis::SamplingConstants;

/// Violations at or below this magnitude are treated as round-off and not flagged.
pub const MONITOR_TOL: f64 = 1e-9;

pub const FLAG_Q: u8 = 1;
pub const FLAG_V: u8 = 2;
pub const FLAG_U: u8 = 4;
pub const FLAG_OUTSIDE: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    NominalOnly,
    /// QP recomputed at every substep. Diagnostic: the QP law need not be Lipschitz.
    ZcbfContinuous,
    ZcbfSampled,
}

impl ControllerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::NominalOnly => "nominal-only",
            ControllerMode::ZcbfContinuous => "zcbf-continuous",
            ControllerMode::ZcbfSampled => "zcbf-sampled",
        }
    }
}

/// Worst violation of `Q`, `V` and `U` (zero when satisfied), plus `H^delta` membership.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SafetyFlags {
    pub q: f64,
    pub v: f64,
    pub u: f64,
    pub outside: bool,
}

impl SafetyFlags {
    pub fn bits(&self) -> u8 {
        let mut b = 0;
        if self.q > MONITOR_TOL {
            b |= FLAG_Q;
        }
        if self.v > MONITOR_TOL {
            b |= FLAG_V;
        }
        if self.u > MONITOR_TOL {
            b |= FLAG_U;
        }
        if self.outside {
            b |= FLAG_OUTSIDE;
        }
        b
    }

    fn merge(&mut self, other: &SafetyFlags) {
        self.q = self.q.max(other.q);
        self.v = self.v.max(other.v);
        self.u = self.u.max(other.u);
        self.outside |= other.outside;
    }
}

fn box_excess(x: &[f64], lo: impl Fn(usize) -> f64, hi: impl Fn(usize) -> f64) -> f64 {
    x.iter().enumerate().fold(0.0, |w, (i, &xi)| w.max(lo(i) - xi).max(xi - hi(i)))
}

/// Checks `q in Q`, `v in V`, `u in U`. The sets are closed: boundary values are admissible.
/// `outside` is left false; the simulator sets it from `H^delta` membership.
pub fn monitor_safety(spec: &ConstraintSpec, q: &[f64], v: &[f64], u: &[f64]) -> SafetyFlags {
    SafetyFlags {
        q: box_excess(q, |i| spec.q_min[i], |i| spec.q_max[i]),
        v: box_excess(v, |i| -spec.v_max[i], |i| spec.v_max[i]),
        u: box_excess(u, |i| -spec.u_max[i], |i| spec.u_max[i]),
        outside: false,
    }
}

/// One sampling instant. `q`, `v` are constrained coordinates; `x`, `xv` the integration state.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub x: DVector<f64>,
    pub xv: DVector<f64>,
    pub u_nom: DVector<f64>,
    pub u: DVector<f64>,
    pub b_up: Vec<f64>,
    pub b_low: Vec<f64>,
    /// `None` outside `H^delta` or without a barrier configuration.
    pub regions: Vec<Option<Region>>,
    pub qp_status: Option<QpStatus>,
    pub fallback: Fallback,
    pub flags: SafetyFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub mode: ControllerMode,
    pub cfg: Option<BarrierConfig>,
    pub seed: u64,
    pub period: f64,
    pub substeps: usize,
    /// Margin used in the barrier rows.
    pub eta_used: f64,
    /// `eta(T)` when sampling constants were supplied.
    pub eta_of_period: Option<f64>,
    /// False when the sampled margin is below the certified `eta(T)`.
    pub certified: bool,
}

/// Worst values over every substep of the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub worst: SafetyFlags,
    /// Substeps with at least one flag set.
    pub flagged_substeps: usize,
    pub outside_substeps: usize,
    /// Smallest `H^delta` margin seen (zcbf modes).
    pub min_safe_margin: f64,
    pub fallbacks: usize,
    /// A zcbf run left `H^delta`.
    pub failed: bool,
    /// Set when integration stopped on a non-finite or undefined state.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub records: Vec<TickRecord>,
    pub summary: SimSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub mode: ControllerMode,
    pub period: f64,
    pub duration: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub margin: MarginPolicy,
}

fn default_substeps() -> usize {
    10
}

/// Additive acceleration disturbance on the integration state.
pub type Perturbation<'a> = &'a dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>;

/// Everything a closed-loop run needs besides the settings.
pub struct LoopSetup<'a> {
    pub scenario: &'a str,
    pub model: &'a dyn SystemModel,
    pub spec: &'a ConstraintSpec,
    /// Required for the zcbf modes.
    pub cfg: Option<&'a BarrierConfig>,
    pub sampling: Option<&'a SamplingConstants>,
    pub nominal: &'a dyn NominalController,
    pub perturbation: Option<Perturbation<'a>>,
    pub seed: u64,
}

fn in_safe_set(spec: &ConstraintSpec, cfg: &BarrierConfig, q: &DVector<f64>, v: &DVector<f64>) -> bool {
    (0..spec.dof()).all(|i| {
        q[i] >= spec.q_min[i]
            && q[i] <= spec.q_max[i]
            && cfg.b_up(spec, i, q[i], v[i]) >= 0.0
            && cfg.b_low(spec, i, q[i], v[i]) >= 0.0
    })
}

struct Loop<'a> {
    setup: &'a LoopSetup<'a>,
    filter: Option<SafetyFilter<'a>>,
    eta: f64,
}

struct Control {
    u_nom: DVector<f64>,
    u: DVector<f64>,
    status: Option<QpStatus>,
    fallback: Fallback,
}

impl Loop<'_> {
    fn control(&mut self, t: f64, x: &DVector<f64>, xv: &DVector<f64>) -> Result<Control> {
        let u_nom = self.setup.nominal.control(t, x, xv);
        match self.filter.as_mut() {
            None => Ok(Control { u: u_nom.clone(), u_nom, status: None, fallback: Fallback::None }),
            Some(f) => {
                let out = f.filter(x, xv, &u_nom, self.eta)?;
                Ok(Control { u_nom, u: out.u, status: Some(out.status), fallback: out.fallback })
            }
        }
    }

    fn derivative(&self, t: f64, x: &DVector<f64>, xv: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut acc = self.setup.model.native_acceleration(x, xv, u)?;
        if let Some(p) = self.setup.perturbation {
            acc += p(t, x, xv);
        }
        Ok((xv.clone(), acc))
    }

    fn rk4(&self, t: f64, h: f64, x: &DVector<f64>, xv: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (k1x, k1v) = self.derivative(t, x, xv, u)?;
        let (k2x, k2v) = self.derivative(t + 0.5 * h, &(x + &k1x * (0.5 * h)), &(xv + &k1v * (0.5 * h)), u)?;
        let (k3x, k3v) = self.derivative(t + 0.5 * h, &(x + &k2x * (0.5 * h)), &(xv + &k2v * (0.5 * h)), u)?;
        let (k4x, k4v) = self.derivative(t + h, &(x + &k3x * h), &(xv + &k3v * h), u)?;
        let x_next = x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        let v_next = xv + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        Ok((x_next, v_next))
    }

    fn assess(&self, q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> (SafetyFlags, f64) {
        let spec = self.setup.spec;
        let mut flags = monitor_safety(spec, q.as_slice(), v.as_slice(), u.as_slice());
        let margin = match (self.filter.is_some(), self.setup.cfg) {
            (true, Some(cfg)) => safe_set_margin(spec, cfg, q.as_slice(), v.as_slice()),
            _ => f64::INFINITY,
        };
        flags.outside = margin < 0.0;
        (flags, margin)
    }

    fn record(&self, t: f64, x: &DVector<f64>, xv: &DVector<f64>, c: Control) -> Result<TickRecord> {
        let spec = self.setup.spec;
        let (q, v) = self.setup.model.constraint_state(x, xv)?;
        let (flags, _) = self.assess(&q, &v, &c.u);
        let n = spec.dof();
        let (mut b_up, mut b_low, mut regions) = (vec![f64::NAN; n], vec![f64::NAN; n], vec![None; n]);
        if let Some(cfg) = self.setup.cfg {
            for i in 0..n {
                b_up[i] = cfg.b_up(spec, i, q[i], v[i]);
                b_low[i] = cfg.b_low(spec, i, q[i], v[i]);
                if !flags.outside {
                    regions[i] = classify_region(spec, cfg, i, q[i], v[i], REGION_TOL).ok();
                }
            }
        }
        Ok(TickRecord {
            t,
            q,
            v,
            x: x.clone(),
            xv: xv.clone(),
            u_nom: c.u_nom,
            u: c.u,
            b_up,
            b_low,
            regions,
            qp_status: c.status,
            fallback: c.fallback,
            flags,
        })
    }
}

/// Integrates the closed loop from `(x0, xv0)` (integration-state coordinates) with classical
/// RK4, `substeps` steps per hold interval. The control is recomputed at every tick, and at
/// every substep in [`ControllerMode::ZcbfContinuous`]. The safety monitor runs after every
/// substep. Leaving `H^delta` marks the run failed without stopping it. A non-finite or
/// undefined state stops the run and returns the trace so far.
pub fn run_closed_loop(setup: &LoopSetup, settings: &SimSettings, x0: &DVector<f64>, xv0: &DVector<f64>) -> Result<SimTrace> {
    let spec = setup.spec;
    spec.validate()?;
    let model = setup.model;
    if x0.len() != model.dof() || xv0.len() != model.dof() {
        return Err(Error::Config(format!("initial state must have {} coordinates", model.dof())));
    }
    if !(settings.period > 0.0 && settings.period.is_finite()) || !(settings.duration >= 0.0 && settings.duration.is_finite()) {
        return Err(Error::Config("period must be positive and duration non-negative".into()));
    }
    if settings.substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    let ticks = (settings.duration / settings.period).round();
    if (ticks * settings.period - settings.duration).abs() > 1e-9 * settings.duration.max(1.0) {
        return Err(Error::Config(format!(
            "duration {} is not an integral number of periods {}",
            settings.duration, settings.period
        )));
    }
    let ticks = ticks as usize;

    let zcbf = settings.mode != ControllerMode::NominalOnly;
    let eta_of_period = match (setup.sampling, setup.cfg) {
        (Some(s), Some(_)) => Some(s.eta_of_t(settings.period)),
        _ => None,
    };
    let (filter, eta, certified) = if zcbf {
        let cfg = setup.cfg.ok_or_else(|| Error::Config("zcbf modes need barrier parameters; run synth first".into()))?;
        cfg.validate()?;
        let (q, v) = model.constraint_state(x0, xv0)?;
        if !in_safe_set(spec, cfg, &q, &v) {
            return Err(Error::Domain(format!(
                "initial state q = {:?}, v = {:?} is not in the safe set",
                q.as_slice(),
                v.as_slice()
            )));
        }
        let (eta, certified) = match settings.mode {
            ControllerMode::ZcbfSampled => {
                let eta = match (settings.margin, setup.sampling) {
                    (MarginPolicy::EtaBar, _) => cfg.eta_bar,
                    (MarginPolicy::Certified, Some(s)) => sampled_margin(cfg, s, settings.period, MarginPolicy::Certified)?,
                    (MarginPolicy::Certified, None) => {
                        return Err(Error::Config("certified sampled margin needs the sampling constants".into()))
                    }
                };
                (eta, eta_of_period.is_some_and(|e| e <= eta))
            }
            _ => (0.0, false),
        };
        (Some(SafetyFilter::new(model, cfg, spec)), eta, certified)
    } else {
        (None, 0.0, false)
    };

    let mut lp = Loop { setup, filter, eta };
    let mut records = Vec::with_capacity(ticks + 1);
    let mut summary = SimSummary {
        worst: SafetyFlags::default(),
        flagged_substeps: 0,
        outside_substeps: 0,
        min_safe_margin: f64::INFINITY,
        fallbacks: 0,
        failed: false,
        aborted: None,
    };
    let (mut x, mut xv) = (x0.clone(), xv0.clone());
    let h = settings.period / settings.substeps as f64;

    'ticks: for k in 0..=ticks {
        let t = k as f64 * settings.period;
        let c = lp.control(t, &x, &xv)?;
        if c.fallback != Fallback::None {
            summary.fallbacks += 1;
        }
        let mut u = c.u.clone();
        let rec = lp.record(t, &x, &xv, c)?;
        if k == 0 {
            let (q, v) = (&rec.q, &rec.v);
            let (flags, margin) = lp.assess(q, v, &rec.u);
            summary.worst.merge(&flags);
            summary.min_safe_margin = summary.min_safe_margin.min(margin);
        }
        records.push(rec);
        if k == ticks {
            break;
        }
        for s in 0..settings.substeps {
            let ts = t + s as f64 * h;
            if s > 0 && settings.mode == ControllerMode::ZcbfContinuous {
                match lp.control(ts, &x, &xv) {
                    Ok(c) => {
                        if c.fallback != Fallback::None {
                            summary.fallbacks += 1;
                        }
                        u = c.u;
                    }
                    Err(e) => {
                        summary.aborted = Some(format!("t = {ts}: {e}"));
                        break 'ticks;
                    }
                }
            }
            let step = lp.rk4(ts, h, &x, &xv, &u).and_then(|(xn, vn)| {
                crate::error::ensure_finite(xn.as_slice(), "state")?;
                crate::error::ensure_finite(vn.as_slice(), "state")?;
                let (q, v) = model.constraint_state(&xn, &vn)?;
                Ok((xn, vn, q, v))
            });
            let (xn, vn, q, v) = match step {
                Ok(r) => r,
                Err(e) => {
                    summary.aborted = Some(format!("t = {}: {e}", ts + h));
                    break 'ticks;
                }
            };
            x = xn;
            xv = vn;
            let (flags, margin) = lp.assess(&q, &v, &u);
            summary.worst.merge(&flags);
            summary.min_safe_margin = summary.min_safe_margin.min(margin);
            if flags.bits() != 0 {
                summary.flagged_substeps += 1;
            }
            if flags.outside {
                summary.outside_substeps += 1;
                summary.failed = true;
            }
        }
    }

    Ok(SimTrace {
        meta: TraceMeta {
            scenario: setup.scenario.to_string(),
            mode: settings.mode,
            cfg: setup.cfg.cloned(),
            seed: setup.seed,
            period: settings.period,
            substeps: settings.substeps,
            eta_used: eta,
            eta_of_period,
            certified,
        },
        records,
        summary,
    })
}

impl SimTrace {
    /// Column names of the CSV trace for `n` coordinates and `m` inputs.
    pub fn csv_header(n: usize, m: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for (name, k) in [("q", n), ("v", n), ("u", m), ("bup", n), ("blow", n), ("region", n)] {
            h.extend((1..=k).map(|i| format!("{name}{i}")));
        }
        h.push("qp_status".into());
        h.push("flags".into());
        h
    }

    /// Writes one header row and one row per tick. Floats use 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let io = |e: csv::Error| Error::Config(format!("writing trace: {e}"));
        let mut out = csv::Writer::from_writer(w);
        let (n, m) = match self.records.first() {
            Some(r) => (r.q.len(), r.u.len()),
            None => (0, 0),
        };
        out.write_record(Self::csv_header(n, m)).map_err(io)?;
        let f = |x: f64| format!("{x:.16e}");
        for r in &self.records {
            let mut row = vec![f(r.t)];
            row.extend(r.q.iter().copied().map(f));
            row.extend(r.v.iter().copied().map(f));
            row.extend(r.u.iter().copied().map(f));
            row.extend(r.b_up.iter().copied().map(f));
            row.extend(r.b_low.iter().copied().map(f));
            row.extend(r.regions.iter().map(|g| g.map_or("-", Region::as_str).to_string()));
            row.push(r.qp_status.map_or("none", QpStatus::as_str).to_string());
            row.push(r.flags.bits().to_string());
            out.write_record(&row).map_err(io)?;
        }
        out.flush().map_err(|e| Error::Config(format!("writing trace: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classk::ClassKFn;
    use crate::dynamics::PointMass;

    struct Push(f64);

    impl NominalController for Push {
        fn control(&self, _t: f64, _x: &DVector<f64>, _xv: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, self.0)
        }
    }

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

    fn setup<'a>(pm: &'a PointMass, spec: &'a ConstraintSpec, cfg: &'a BarrierConfig, nominal: &'a dyn NominalController) -> LoopSetup<'a> {
        LoopSetup { scenario: "test", model: pm, spec, cfg: Some(cfg), sampling: None, nominal, perturbation: None, seed: 0 }
    }

    #[test]
    fn monitor_boundaries() {
        let (_, spec, _) = unit();
        assert_eq!(monitor_safety(&spec, &[1.0], &[0.0], &[5.0]).bits(), 0);
        assert_eq!(monitor_safety(&spec, &[-1.0], &[-2.0], &[-5.0]).bits(), 0);
        let f = monitor_safety(&spec, &[0.0], &[2.1], &[0.0]);
        assert!((f.v - 0.1).abs() < 1e-12);
        assert_eq!(f.bits(), FLAG_V);
        assert_eq!(monitor_safety(&spec, &[1.5], &[0.0], &[-6.0]).bits(), FLAG_Q | FLAG_U);
    }

    #[test]
    fn zero_duration_is_single_record() {
        let (pm, spec, cfg) = unit();
        let s = SimSettings { mode: ControllerMode::ZcbfSampled, period: 0.01, duration: 0.0, substeps: 4, margin: MarginPolicy::EtaBar };
        let tr = run_closed_loop(&setup(&pm, &spec, &cfg, &Push(100.0)), &s, &dv(&[0.2]), &dv(&[0.0])).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.records[0].q, dv(&[0.2]));
    }

    #[test]
    fn filter_holds_the_box_that_nominal_breaks() {
        let (pm, spec, cfg) = unit();
        let run = |mode| {
            let s = SimSettings { mode, period: 0.01, duration: 5.0, substeps: 5, margin: MarginPolicy::EtaBar };
            run_closed_loop(&setup(&pm, &spec, &cfg, &Push(3.0)), &s, &dv(&[0.0]), &dv(&[0.0])).unwrap()
        };
        let nominal = run(ControllerMode::NominalOnly);
        assert!(nominal.summary.worst.q > 1.0 && nominal.summary.worst.v > 1.0);
        for mode in [ControllerMode::ZcbfSampled, ControllerMode::ZcbfContinuous] {
            let safe = run(mode);
            assert_eq!(safe.summary.flagged_substeps, 0, "{mode:?} {:?}", safe.summary);
            assert!(!safe.summary.failed);
            assert_eq!(safe.records.len(), 501);
            let ts: Vec<f64> = safe.records.iter().map(|r| r.t).collect();
            assert!(ts.windows(2).all(|w| w[1] > w[0]));
            // The pushed mass creeps towards the upper bound, held off by the margin.
            let q_end = safe.records.last().unwrap().q[0];
            assert!(q_end > 0.8 && q_end < 1.0, "{q_end}");
        }
    }

    #[test]
    fn deterministic_traces() {
        let (pm, spec, cfg) = unit();
        let s = SimSettings { mode: ControllerMode::ZcbfSampled, period: 0.01, duration: 1.0, substeps: 3, margin: MarginPolicy::EtaBar };
        let a = run_closed_loop(&setup(&pm, &spec, &cfg, &Push(4.0)), &s, &dv(&[0.1]), &dv(&[0.3])).unwrap();
        let b = run_closed_loop(&setup(&pm, &spec, &cfg, &Push(4.0)), &s, &dv(&[0.1]), &dv(&[0.3])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rk4_order() {
        struct Zero;
        impl NominalController for Zero {
            fn control(&self, _t: f64, _x: &DVector<f64>, _xv: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(2)
            }
        }
        let arm = crate::dynamics::Planar2Dof::default();
        let spec = ConstraintSpec { q_min: vec![-9.0; 2], q_max: vec![9.0; 2], v_max: vec![9.0; 2], u_max: vec![9.0; 2] };
        let end = |substeps| {
            let st = LoopSetup { scenario: "order", model: &arm, spec: &spec, cfg: None, sampling: None, nominal: &Zero, perturbation: None, seed: 0 };
            let s = SimSettings { mode: ControllerMode::NominalOnly, period: 1.0, duration: 1.0, substeps, margin: MarginPolicy::EtaBar };
            run_closed_loop(&st, &s, &dv(&[0.3, 1.0]), &dv(&[2.0, -1.5])).unwrap().records[1].x.clone()
        };
        let (a, b, c) = (end(8), end(16), end(32));
        let order = ((&a - &b).norm() / (&b - &c).norm()).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn perturbation_drives_run_outside() {
        let (pm, spec, cfg) = unit();
        let kick = |_t: f64, _x: &DVector<f64>, _v: &DVector<f64>| DVector::from_element(1, 200.0);
        let st = LoopSetup { perturbation: Some(&kick), ..setup(&pm, &spec, &cfg, &Push(0.0)) };
        let s = SimSettings { mode: ControllerMode::ZcbfSampled, period: 0.01, duration: 1.0, substeps: 2, margin: MarginPolicy::EtaBar };
        let tr = run_closed_loop(&st, &s, &dv(&[0.0]), &dv(&[0.0])).unwrap();
        assert!(tr.summary.failed);
        assert!(tr.records.iter().any(|r| r.flags.outside && r.regions[0].is_none()));
    }

    #[test]
    fn initial_state_outside_is_rejected() {
        let (pm, spec, cfg) = unit();
        let s = SimSettings { mode: ControllerMode::ZcbfSampled, period: 0.01, duration: 0.1, substeps: 2, margin: MarginPolicy::EtaBar };
        assert!(run_closed_loop(&setup(&pm, &spec, &cfg, &Push(0.0)), &s, &dv(&[1.1]), &dv(&[0.0])).is_err());
        let bad = SimSettings { duration: 0.015, ..s };
        assert!(matches!(run_closed_loop(&setup(&pm, &spec, &cfg, &Push(0.0)), &bad, &dv(&[0.0]), &dv(&[0.0])), Err(Error::Config(_))));
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            SimTrace::csv_header(2, 2).join(","),
            "t,q1,q2,v1,v2,u1,u2,bup1,bup2,blow1,blow2,region1,region2,qp_status,flags"
        );
        let (pm, spec, cfg) = unit();
        let s = SimSettings { mode: ControllerMode::ZcbfSampled, period: 0.5, duration: 0.5, substeps: 2, margin: MarginPolicy::EtaBar };
        let tr = run_closed_loop(&setup(&pm, &spec, &cfg, &Push(1.0)), &s, &dv(&[0.0]), &dv(&[0.0])).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.0000000000000000e0,0.0000000000000000e0,"));
        // At rest in the middle both barriers equal rho: the tie resolves to VII.
        assert!(lines[1].ends_with(",VII,optimal,0"), "{}", lines[1]);
    }
}
