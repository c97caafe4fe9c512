//! Certified barrier parameters: the bounds `gamma_1..3*`, `delta*`, `[nu_1*, nu_2*]`, `eta*`
//! and the selection procedure that chooses `(gamma, delta, nu, eta_bar)` from them, plus the
//! zero-order-hold margin `eta(T)`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{rho_lower_bound_with, velocity_bound, zeta_with, BarrierConfig, ConstraintSpec};
use crate::classk::{check_assumption2_alpha, check_assumption2_beta, ClassKFn, DEFAULT_CHECK_GRID};
use crate::dynamics::{estimate_constants, row_abs_sum, ConstantEstimator, SystemConstants, SystemModel};
use crate::error::{Error, Result};
use crate::grid::{bisect_last_true, linspace};

/// Number of points on the descending `delta` grid used to certify `delta*`.
pub const DELTA_GRID: usize = 100;

/// Per-configuration quantities entering the control-authority bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthoritySample {
    /// Constrained configuration.
    pub q: Vec<f64>,
    /// `||e_j^T G+(q)||` (absolute row sums).
    pub g_plus_rows: Vec<f64>,
    /// `|e_j^T f3(q)|`.
    pub f3_abs: Vec<f64>,
    /// `max_i` of `alpha'` at `h_up(q_i)` and `h_low(q_i)`.
    pub y: f64,
}

/// Tabulates [`AuthoritySample`]s over `Q^delta0`.
pub fn authority_table(
    model: &dyn SystemModel,
    spec: &ConstraintSpec,
    alpha: &ClassKFn,
    delta0: f64,
    per_axis: usize,
) -> Result<Vec<AuthoritySample>> {
    let (lo, hi) = spec.inflated_box(delta0);
    let configs = model.configurations(&lo, &hi, per_axis)?;
    let n = model.dof();
    configs
        .par_iter()
        .map(|x| {
            let zero = DVector::zeros(n);
            let t = model.terms(x, &zero)?;
            let (q, _) = model.constraint_state(x, &zero)?;
            let y = (0..n)
                .flat_map(|i| [alpha.derivative(spec.h_up(i, q[i])), alpha.derivative(spec.h_low(i, q[i]))])
                .fold(0.0, f64::max);
            Ok(AuthoritySample {
                q: q.iter().copied().collect(),
                g_plus_rows: (0..t.g_plus.nrows()).map(|j| row_abs_sum(&t.g_plus, j)).collect(),
                f3_abs: t.f3.iter().map(|f| f.abs()).collect(),
                y,
            })
        })
        .collect()
}

/// Supremum of the control-authority margin and where it is attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorityMargin {
    /// Every `eps` strictly below this value satisfies the control-authority condition.
    pub epsilon_sup: f64,
    pub worst_q: Vec<f64>,
    pub worst_input: usize,
}

fn authority_margin(table: &[AuthoritySample], spec: &ConstraintSpec, eta0: f64) -> Result<AuthorityMargin> {
    let mut best = AuthorityMargin { epsilon_sup: f64::INFINITY, worst_q: Vec::new(), worst_input: 0 };
    for s in table {
        for (j, (&r, &f3)) in s.g_plus_rows.iter().zip(&s.f3_abs).enumerate() {
            let u = *spec
                .u_max
                .get(j)
                .ok_or_else(|| Error::Config(format!("u_max has {} entries, the model has more inputs", spec.u_max.len())))?;
            let eps = if r > 0.0 { (u - f3) / r - eta0 } else if u > f3 { f64::INFINITY } else { f64::NEG_INFINITY };
            if eps < best.epsilon_sup {
                best = AuthorityMargin { epsilon_sup: eps, worst_q: s.q.clone(), worst_input: j };
            }
        }
    }
    if !(best.epsilon_sup > 0.0) {
        return Err(Error::Assumption {
            which: 1,
            detail: format!(
                "insufficient control authority: u_max_{} cannot cover |f3| + eta_bar ||G+ row|| at q = {:?} \
                 (best eps = {:.6e})",
                best.worst_input + 1,
                best.worst_q,
                best.epsilon_sup
            ),
        });
    }
    Ok(best)
}

/// Largest `eps` (as a supremum) with `u_max_j > |f3_j(q)| + (eps + eta0) ||e_j^T G+(q)||` for all
/// grid `q` in `Q^delta0` and all inputs `j`.
pub fn verify_assumption1(
    model: &dyn SystemModel,
    spec: &ConstraintSpec,
    alpha: &ClassKFn,
    delta0: f64,
    eta0: f64,
    per_axis: usize,
) -> Result<AuthorityMargin> {
    spec.validate()?;
    let table = authority_table(model, spec, alpha, delta0, per_axis)?;
    authority_margin(&table, spec, eta0)
}

/// `a = alpha(2 delta + ||q_min - q_max||_inf)`.
pub fn alpha_range(alpha: &ClassKFn, spec: &ConstraintSpec, delta: f64) -> f64 {
    alpha.value(2.0 * delta + spec.max_width())
}

/// Lipschitz constant of `alpha` over every margin reachable in `Q^delta`.
pub fn alpha_lipschitz(alpha: &ClassKFn, spec: &ConstraintSpec, delta: f64) -> f64 {
    alpha.lipschitz_on(-delta, spec.max_width() + delta)
}

/// `gamma_1* = min_i v_max_i / a`.
pub fn gamma1_star(spec: &ConstraintSpec, a: f64) -> f64 {
    spec.v_max.iter().copied().fold(f64::INFINITY, f64::min) / a
}

/// Inputs to `gamma_2*` that do not depend on the configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma2Inputs<'a> {
    pub u_max: &'a [f64],
    pub f_bound: &'a [f64],
    pub k_c: f64,
    pub a: f64,
    pub eps_plus_eta: f64,
}

/// Positive root of `gamma^2 + d gamma + c = 0` minimised over the table and the inputs.
pub fn gamma2_star(table: &[AuthoritySample], inp: &Gamma2Inputs) -> Result<f64> {
    let mut best = f64::INFINITY;
    for s in table {
        for (j, (&r, &f3)) in s.g_plus_rows.iter().zip(&s.f3_abs).enumerate() {
            let den = r * s.y + inp.k_c * inp.a;
            let c_num = f3 + inp.eps_plus_eta * r - inp.u_max[j];
            if c_num >= 0.0 {
                return Err(Error::Assumption {
                    which: 1,
                    detail: format!("insufficient control authority for input {} at q = {:?}", j + 1, s.q),
                });
            }
            let root = if den > 0.0 {
                let d = inp.f_bound[j] / den;
                let c = c_num / (den * inp.a);
                // Stable form of (-d + sqrt(d^2 - 4c)) / 2 for c < 0.
                -2.0 * c / (d + (d * d - 4.0 * c).sqrt())
            } else if inp.f_bound[j] > 0.0 {
                -c_num / (inp.f_bound[j] * inp.a)
            } else {
                f64::INFINITY
            };
            best = best.min(root);
        }
    }
    Ok(best)
}

/// `gamma_3* = sqrt(eps / (L a))`.
pub fn gamma3_star(epsilon: f64, lipschitz: f64, a: f64) -> f64 {
    (epsilon / (lipschitz * a)).sqrt()
}

/// `rho_bar^delta` and `zeta^delta` for a trial `(gamma, delta)`.
pub fn margins_at(
    alpha: &ClassKFn,
    beta: &ClassKFn,
    spec: &ConstraintSpec,
    gamma: f64,
    delta: f64,
    grid: usize,
) -> Result<(f64, f64)> {
    let cfg = BarrierConfig { alpha: *alpha, beta: *beta, gamma, nu: 1.0, delta, eta_bar: 0.0 };
    Ok((rho_lower_bound_with(&cfg, spec, grid)?, zeta_with(&cfg, spec, grid)))
}

/// Largest `delta` on a descending grid of `[0, delta0]` such that `|beta(zeta^d)| < beta(rho_bar^d)`
/// holds at every grid point `d <= delta`.
pub fn delta_star(
    alpha: &ClassKFn,
    beta: &ClassKFn,
    spec: &ConstraintSpec,
    gamma: f64,
    delta0: f64,
    grid_points: usize,
) -> Result<f64> {
    if delta0 == 0.0 {
        return Ok(0.0);
    }
    let deltas = linspace(0.0, delta0, grid_points.max(2));
    let mut ok = Vec::with_capacity(deltas.len());
    for &d in &deltas {
        let (rho, zeta) = margins_at(alpha, beta, spec, gamma, d, DEFAULT_CHECK_GRID)?;
        ok.push(beta.value(zeta).abs() < beta.value(rho));
    }
    if !ok[0] {
        return Err(Error::Assumption {
            which: 2,
            detail: "the non-conflict condition fails even at delta = 0; alpha/beta pair is unusable".into(),
        });
    }
    let last = ok.iter().position(|x| !x).map_or(deltas.len() - 1, |k| k - 1);
    if last == 0 {
        return Err(Error::Synthesis(format!(
            "no positive delta on a {}-point grid of [0, {delta0}] satisfies |beta(zeta)| < beta(rho_bar)",
            deltas.len()
        )));
    }
    Ok(deltas[last])
}

/// `[nu_1*, nu_2*]`; the upper end is `+inf` when `zeta = 0`.
pub fn nu_interval(beta: &ClassKFn, gamma: f64, lipschitz: f64, a: f64, rho_bar: f64, zeta: f64, epsilon: f64) -> (f64, f64) {
    let nu1 = gamma * gamma * lipschitz * a / beta.value(rho_bar);
    let bz = beta.value(zeta).abs();
    let nu2 = if bz > 0.0 { epsilon / bz } else { f64::INFINITY };
    (nu1, nu2)
}

/// `eta* = (nu beta(rho_bar) - gamma^2 L a) / 2`.
pub fn eta_star(beta: &ClassKFn, nu: f64, gamma: f64, lipschitz: f64, a: f64, rho_bar: f64) -> f64 {
    0.5 * (nu * beta.value(rho_bar) - gamma * gamma * lipschitz * a)
}

/// Constants of the zero-order-hold margin `eta(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl SamplingConstants {
    /// `c2` is the Lipschitz constant of `beta` on `[zeta, b_max]`, the range of the barrier
    /// values over `H^delta`.
    pub fn compute(constants: &SystemConstants, cfg: &BarrierConfig, spec: &ConstraintSpec, zeta: f64) -> Self {
        let w = spec.max_width();
        let b_max = cfg.gamma * (cfg.alpha.value(w + cfg.delta) + cfg.alpha.value(w + 2.0 * cfg.delta));
        let c4 = spec.u_max.iter().copied().fold(0.0, f64::max);
        let v_bar = velocity_bound(cfg, spec);
        let k_f = constants.f_bound.iter().copied().fold(0.0, f64::max);
        SamplingConstants {
            c1: constants.c1,
            c2: cfg.beta.lipschitz_on(zeta, b_max),
            c3: constants.c3,
            c4,
            c5: constants.k_m_inf * (constants.k_c * v_bar * v_bar + k_f * v_bar + constants.k_g + c4),
        }
    }

    fn gain_and_rate(&self) -> (f64, f64) {
        let rate = self.c1 + self.c2 * self.c4;
        ((self.c1 + self.c2 + self.c3 * self.c4) * self.c5 / rate, rate)
    }

    /// `eta(T) = ((c1 + c2 + c3 c4) c5 / (c1 + c2 c4)) (exp((c1 + c2 c4) T) - 1)`.
    pub fn eta_of_t(&self, t: f64) -> f64 {
        let (k, rate) = self.gain_and_rate();
        k * (rate * t).exp_m1()
    }

    /// Inverse of [`eta_of_t`](Self::eta_of_t).
    pub fn t_of_eta(&self, eta: f64) -> f64 {
        let (k, rate) = self.gain_and_rate();
        (eta / k).ln_1p() / rate
    }
}

/// How `eps` is picked below its supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum EpsilonRule {
    /// Maximise `min(gamma_1*, gamma_2*(eps), gamma_3*(eps))`; among maximisers take the largest eps.
    Balanced,
    /// `eps = f * eps_sup` with `f` in `(0, 1)`.
    Fraction(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum GammaRule {
    /// `gamma = min(gamma_1*, gamma_2*, gamma_3*)`.
    MaxGamma,
    /// `gamma = f * min(...)` with `f` in `(0, 1]`.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum NuRule {
    Nu1,
    Nu2,
    /// Geometric midpoint of `[nu_1*, nu_2*]`, or `2 nu_1*` when `nu_2* = inf`.
    MidpointLog,
}

/// Choices made inside the certified intervals, and grid densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionPolicy {
    pub epsilon: EpsilonRule,
    pub gamma: GammaRule,
    pub nu: NuRule,
    /// Configuration samples per axis of `Q^delta0`.
    pub grid: usize,
    /// Samples per axis for the dynamics constants.
    pub constants_grid: usize,
    pub delta_grid: usize,
    pub beta_samples: usize,
    /// When set, the report includes `eta(T)` and the largest admissible period.
    pub sampling_period: Option<f64>,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            epsilon: EpsilonRule::Balanced,
            gamma: GammaRule::MaxGamma,
            nu: NuRule::MidpointLog,
            grid: 200,
            constants_grid: 60,
            delta_grid: DELTA_GRID,
            beta_samples: 10_000,
            sampling_period: None,
        }
    }
}

/// `eta(T)` for the requested period against the chosen margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingCheck {
    pub period: f64,
    pub eta_of_period: f64,
    /// Largest period with `eta(T) <= eta_bar`.
    pub t_max: f64,
    pub admissible: bool,
}

/// Everything computed by [`synthesize_parameters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub alpha: ClassKFn,
    pub beta: ClassKFn,
    pub delta0: f64,
    pub eta0: f64,
    pub grid_per_axis: usize,
    pub grid_configurations: usize,
    /// Witness of the margin condition on `alpha` at `delta0`.
    pub alpha_margin_d: f64,
    pub beta_samples: usize,
    pub authority: AuthorityMargin,
    pub epsilon: f64,
    pub a: f64,
    pub lipschitz_alpha: f64,
    pub constants: SystemConstants,
    /// `[gamma_1*, gamma_2*, gamma_3*]`.
    pub gamma_stars: [f64; 3],
    pub delta_star: f64,
    pub rho_bar: f64,
    pub zeta: f64,
    pub v_bar: f64,
    /// `[nu_1*, nu_2*]`, with `nu_2* = inf` when `delta = 0`.
    pub nu_interval: [f64; 2],
    pub eta_star: f64,
    pub chosen: BarrierConfig,
    pub sampling: SamplingConstants,
    pub sampling_check: Option<SamplingCheck>,
}

/// Bounds that depend on the chosen `(gamma, delta)`, evaluated for an arbitrary pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalsAt {
    pub gamma: f64,
    pub delta: f64,
    pub delta_star: f64,
    pub rho_bar: f64,
    pub zeta: f64,
    pub nu1: f64,
    pub nu2: f64,
}

impl IntervalsAt {
    pub fn eta_star(&self, report: &SynthesisReport, nu: f64) -> f64 {
        eta_star(&report.beta, nu, self.gamma, report.lipschitz_alpha, report.a, self.rho_bar)
    }
}

impl SynthesisReport {
    /// Re-evaluates `delta*`, `rho_bar`, `zeta` and `[nu_1*, nu_2*]` at another `(gamma, delta)`,
    /// keeping `eps`, `a` and `L` from this report.
    pub fn intervals_at(&self, spec: &ConstraintSpec, gamma: f64, delta: f64) -> Result<IntervalsAt> {
        let delta_star = delta_star(&self.alpha, &self.beta, spec, gamma, self.delta0, DELTA_GRID)?;
        let (rho_bar, zeta) = margins_at(&self.alpha, &self.beta, spec, gamma, delta, DEFAULT_CHECK_GRID)?;
        let (nu1, nu2) = nu_interval(&self.beta, gamma, self.lipschitz_alpha, self.a, rho_bar, zeta, self.epsilon);
        Ok(IntervalsAt { gamma, delta, delta_star, rho_bar, zeta, nu1, nu2 })
    }

    pub fn gamma_bound(&self) -> f64 {
        self.gamma_stars.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn choose_epsilon(
    rule: EpsilonRule,
    eps_sup: f64,
    g1: f64,
    g2: &dyn Fn(f64) -> Result<f64>,
    g3: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    let eps = match rule {
        EpsilonRule::Fixed(e) => e,
        EpsilonRule::Fraction(f) => f * eps_sup,
        EpsilonRule::Balanced => {
            if !eps_sup.is_finite() {
                return Err(Error::Synthesis("unbounded control authority; use a fixed epsilon rule".into()));
            }
            // gamma_2* falls and gamma_3* rises with eps: bisect for the crossing.
            let hi = eps_sup * (1.0 - 1e-12);
            let above = |e: f64| g2(e).map(|v| v >= g3(e)).unwrap_or(false);
            let crossing = bisect_last_true(above, hi * 1e-12, hi);
            if g2(crossing)?.min(g3(crossing)) >= g1 {
                bisect_last_true(|e| g2(e).map(|v| v >= g1).unwrap_or(false), crossing, hi)
            } else {
                crossing
            }
        }
    };
    if !(eps > 0.0 && eps < eps_sup) {
        return Err(Error::Config(format!("epsilon {eps} must lie in (0, {eps_sup})")));
    }
    Ok(eps)
}

/// Runs the full design procedure: check the structural conditions on `alpha` and `beta`,
/// find `eps`, compute the `gamma` bounds, choose `gamma`, certify `delta*`, choose `delta`,
/// compute and choose `nu`, then `eta*` and `eta_bar`.
pub fn synthesize_parameters(
    model: &dyn SystemModel,
    spec: &ConstraintSpec,
    alpha: ClassKFn,
    beta: ClassKFn,
    delta0: f64,
    eta0: f64,
    policy: &SelectionPolicy,
) -> Result<SynthesisReport> {
    spec.validate()?;
    if !(delta0 >= 0.0 && delta0.is_finite()) || !(eta0 >= 0.0 && eta0.is_finite()) {
        return Err(Error::Config(format!("delta0 and eta0 must be finite and non-negative, got {delta0}, {eta0}")));
    }
    if spec.u_max.len() != model.input_dim() || spec.dof() != model.dof() {
        return Err(Error::Config("constraint dimensions do not match the model".into()));
    }

    let alpha_check = check_assumption2_alpha(&alpha, &spec.q_min, &spec.q_max, delta0)?;
    if !alpha_check.ok {
        return Err(Error::Assumption {
            which: 2,
            detail: format!(
                "alpha margin condition fails on joint {} at e = {} (value {:.6e})",
                alpha_check.worst_joint + 1,
                alpha_check.worst_e,
                alpha_check.d
            ),
        });
    }
    let beta_check = check_assumption2_beta(&beta, policy.beta_samples);
    if let Some([a, b, c]) = beta_check.counterexample {
        return Err(Error::Assumption {
            which: 2,
            detail: format!("beta = {beta} fails beta(a) + beta(-b) >= beta(c) at (a, b, c) = ({a}, {b}, {c})"),
        });
    }

    // Control authority and the gamma bounds, all at delta0.
    let table = authority_table(model, spec, &alpha, delta0, policy.grid)?;
    let authority = authority_margin(&table, spec, eta0)?;
    let a = alpha_range(&alpha, spec, delta0);
    let lip = alpha_lipschitz(&alpha, spec, delta0);
    let (lo, hi) = spec.inflated_box(delta0);
    let estimator = ConstantEstimator {
        per_axis: policy.constants_grid,
        velocity_bound: spec.v_max.iter().copied().fold(0.0, f64::max),
        ..ConstantEstimator::default()
    };
    let constants = estimate_constants(model, &lo, &hi, &estimator)?;

    let g1 = gamma1_star(spec, a);
    let g2 = |eps: f64| {
        gamma2_star(
            &table,
            &Gamma2Inputs { u_max: &spec.u_max, f_bound: &constants.f_bound, k_c: constants.k_c, a, eps_plus_eta: eps + eta0 },
        )
    };
    let g3 = |eps: f64| gamma3_star(eps, lip, a);
    let epsilon = choose_epsilon(policy.epsilon, authority.epsilon_sup, g1, &g2, &g3)?;
    let gamma_stars = [g1, g2(epsilon)?, g3(epsilon)];
    let gamma_max = gamma_stars.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma = match policy.gamma {
        GammaRule::MaxGamma => gamma_max,
        GammaRule::Fraction(f) if f > 0.0 && f <= 1.0 => f * gamma_max,
        GammaRule::Fraction(f) => return Err(Error::Config(format!("gamma fraction {f} outside (0, 1]"))),
    };

    let d_star = delta_star(&alpha, &beta, spec, gamma, delta0, policy.delta_grid)?;
    let delta = d_star.min(delta0);
    let (rho_bar, zeta) = margins_at(&alpha, &beta, spec, gamma, delta, DEFAULT_CHECK_GRID)?;
    let (nu1, nu2) = nu_interval(&beta, gamma, lip, a, rho_bar, zeta, epsilon);
    if nu1 >= nu2 {
        return Err(Error::Synthesis(format!("empty nu interval [{nu1:.6e}, {nu2:.6e}]; delta exceeds delta*")));
    }
    let nu = match policy.nu {
        NuRule::Nu1 => nu1,
        NuRule::Nu2 if nu2.is_finite() => nu2,
        NuRule::Nu2 => return Err(Error::Config("nu_2* is unbounded for delta = 0; choose another nu rule".into())),
        NuRule::MidpointLog if nu2.is_finite() => (nu1 * nu2).sqrt(),
        NuRule::MidpointLog => 2.0 * nu1,
    };
    let eta_max = eta_star(&beta, nu, gamma, lip, a, rho_bar);
    if eta_max < -1e-12 * (nu * beta.value(rho_bar)).abs() {
        return Err(Error::Synthesis(format!("eta* = {eta_max:.6e} is negative; nu lies below nu_1*")));
    }
    let eta_max = eta_max.max(0.0);
    let eta_bar = if eta0 == 0.0 { 0.0 } else { eta0.min(eta_max) };
    if eta0 > 0.0 && !(eta_bar > 0.0) {
        return Err(Error::Synthesis("eta_bar collapsed to zero; choose nu strictly above nu_1*".into()));
    }

    let chosen = BarrierConfig { alpha, beta, gamma, nu, delta, eta_bar };
    let sampling = SamplingConstants::compute(&constants, &chosen, spec, zeta);
    let sampling_check = policy.sampling_period.map(|period| {
        let eta_t = sampling.eta_of_t(period);
        SamplingCheck {
            period,
            eta_of_period: eta_t,
            t_max: if eta_bar > 0.0 { sampling.t_of_eta(eta_bar) } else { 0.0 },
            admissible: eta_t <= eta_bar,
        }
    });

    Ok(SynthesisReport {
        alpha,
        beta,
        delta0,
        eta0,
        grid_per_axis: policy.grid,
        grid_configurations: table.len(),
        alpha_margin_d: alpha_check.d,
        beta_samples: beta_check.samples,
        authority,
        epsilon,
        a,
        lipschitz_alpha: lip,
        constants,
        gamma_stars,
        delta_star: d_star,
        rho_bar,
        zeta,
        v_bar: velocity_bound(&chosen, spec),
        nu_interval: [nu1, nu2],
        eta_star: eta_max,
        chosen,
        sampling,
        sampling_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PointMass;
    use proptest::prelude::*;

    fn unit_spec() -> ConstraintSpec {
        ConstraintSpec { q_min: vec![-1.0], q_max: vec![1.0], v_max: vec![2.0], u_max: vec![1.0] }
    }

    #[test]
    fn gamma2_reduces_to_hand_root() {
        // G = G+ = 1, y = 1, k_c = 0, f = 0, f3 = 0, u_max = 1, eps + eta = 0.5, a = 1.
        let table = vec![AuthoritySample { q: vec![0.0], g_plus_rows: vec![1.0], f3_abs: vec![0.0], y: 1.0 }];
        let g = gamma2_star(
            &table,
            &Gamma2Inputs { u_max: &[1.0], f_bound: &[0.0], k_c: 0.0, a: 1.0, eps_plus_eta: 0.5 },
        )
        .unwrap();
        assert!((g - 0.5f64.sqrt()).abs() < 1e-15);
        // With damping the root is the quadratic formula.
        let g = gamma2_star(
            &table,
            &Gamma2Inputs { u_max: &[1.0], f_bound: &[0.3], k_c: 0.0, a: 1.0, eps_plus_eta: 0.5 },
        )
        .unwrap();
        assert!((g - (-0.3 + (0.09f64 + 2.0).sqrt()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_bound_closed_forms() {
        let spec = ConstraintSpec {
            q_min: vec![-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2],
            q_max: vec![std::f64::consts::FRAC_PI_2, 5.0 * std::f64::consts::PI / 6.0],
            v_max: vec![1.5, 1.5],
            u_max: vec![18.0, 10.0],
        };
        let a = alpha_range(&ClassKFn::Arctangent, &spec, 0.1);
        assert!((a - (std::f64::consts::PI + 0.2).atan()).abs() < 1e-15);
        assert!((gamma1_star(&spec, a) - 1.5 / (std::f64::consts::PI + 0.2).atan()).abs() < 1e-15);
        assert!(gamma1_star(&spec, a) > 1.17);
        let doubled = ConstraintSpec { v_max: vec![3.0, 3.0], ..spec.clone() };
        assert!((gamma1_star(&doubled, a) - 2.0 * gamma1_star(&spec, a)).abs() < 1e-15);
        assert_eq!(alpha_lipschitz(&ClassKFn::Arctangent, &spec, 0.1), 1.0);
        assert!((gamma3_star(2.0, 1.0, 2.0) - 1.0).abs() < 1e-15);
        assert!((gamma3_star(8.0, 1.0, 2.0) - 2.0 * gamma3_star(2.0, 1.0, 2.0)).abs() < 1e-15);
    }

    #[test]
    fn assumption1_on_point_mass() {
        let pm = PointMass { n: 1, mass: 5.0, damping: 0.0 };
        let spec = ConstraintSpec { u_max: vec![10.0], ..unit_spec() };
        let m = verify_assumption1(&pm, &spec, &ClassKFn::Arctangent, 0.1, 0.0, 20).unwrap();
        assert!((m.epsilon_sup - 2.0).abs() < 1e-12);
        let m = verify_assumption1(&pm, &spec, &ClassKFn::Arctangent, 0.1, 0.5, 20).unwrap();
        assert!((m.epsilon_sup - 1.5).abs() < 1e-12);
        let zero = ConstraintSpec { u_max: vec![0.0], ..unit_spec() };
        let err = verify_assumption1(&pm, &zero, &ClassKFn::Arctangent, 0.1, 0.0, 20).unwrap_err();
        assert!(err.to_string().contains("Assumption 1 violated"));
    }

    #[test]
    fn delta_star_branches() {
        let spec = unit_spec();
        assert_eq!(delta_star(&ClassKFn::Arctangent, &ClassKFn::Cubic, &spec, 1.0, 0.0, 100).unwrap(), 0.0);
        assert_eq!(delta_star(&ClassKFn::Arctangent, &ClassKFn::Cubic, &spec, 1.0, 0.1, 100).unwrap(), 0.1);
        // Large delta0: |zeta| grows past rho_bar and the certified delta shrinks.
        let d = delta_star(&ClassKFn::Arctangent, &ClassKFn::Cubic, &spec, 1.0, 20.0, 100).unwrap();
        assert!(d > 0.0 && d < 20.0);
        let (rho, zeta) = margins_at(&ClassKFn::Arctangent, &ClassKFn::Cubic, &spec, 1.0, d, 1000).unwrap();
        assert!(zeta.powi(3).abs() < rho.powi(3));
    }

    #[test]
    fn nu_and_eta_identities() {
        let beta = ClassKFn::Cubic;
        let (nu1, nu2) = nu_interval(&beta, 1.2, 1.0, 1.3, 0.6, 0.0, 2.0);
        assert!(nu2.is_infinite());
        assert!(eta_star(&beta, nu1, 1.2, 1.0, 1.3, 0.6).abs() < 1e-12);
        let e = eta_star(&beta, 2.0 * nu1, 1.2, 1.0, 1.3, 0.6);
        assert!((e - 1.2 * 1.2 * 1.3 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_margin_examples() {
        let s = SamplingConstants { c1: 1.0, c2: 1.0, c3: 1.0, c4: 1.0, c5: 1.0 };
        assert_eq!(s.eta_of_t(0.0), 0.0);
        assert!((s.eta_of_t(0.1) - 1.5 * (0.2f64.exp() - 1.0)).abs() < 1e-15);
        assert!((s.eta_of_t(0.1) - 0.33211).abs() < 1e-5);
    }

    #[test]
    fn algorithm_on_point_mass_meets_invariants() {
        let pm = PointMass { n: 2, mass: 1.0, damping: 0.1 };
        let spec = ConstraintSpec {
            q_min: vec![-1.0, -0.5],
            q_max: vec![1.0, 0.5],
            v_max: vec![1.0, 1.0],
            u_max: vec![5.0, 5.0],
        };
        let policy = SelectionPolicy { grid: 30, constants_grid: 10, sampling_period: Some(1e-3), ..Default::default() };
        let r = synthesize_parameters(&pm, &spec, ClassKFn::Arctangent, ClassKFn::Cubic, 0.05, 0.5, &policy).unwrap();
        let c = &r.chosen;
        assert!(c.gamma <= r.gamma_bound() * (1.0 + 1e-12));
        assert!(c.delta <= r.delta_star);
        assert!(c.nu >= r.nu_interval[0] && c.nu <= r.nu_interval[1]);
        assert!(c.eta_bar > 0.0 && c.eta_bar <= r.eta_star);
        assert!(r.epsilon < r.authority.epsilon_sup);
        let chk = r.sampling_check.unwrap();
        assert!((r.sampling.eta_of_t(chk.t_max) - c.eta_bar).abs() < 1e-9 * c.eta_bar);

        let none = synthesize_parameters(&pm, &spec, ClassKFn::Arctangent, ClassKFn::Cubic, 0.05, 0.0, &policy).unwrap();
        assert_eq!(none.chosen.eta_bar, 0.0);
        let err = synthesize_parameters(&pm, &spec, ClassKFn::Arctangent, ClassKFn::Arctangent, 0.05, 0.0, &policy);
        assert!(matches!(err, Err(Error::Assumption { which: 2, .. })));
    }

    proptest! {
        #[test]
        fn sampling_margin_round_trip(t in 1e-6f64..0.5, c in prop::array::uniform5(0.1f64..5.0)) {
            let s = SamplingConstants { c1: c[0], c2: c[1], c3: c[2], c4: c[3], c5: c[4] };
            let eta = s.eta_of_t(t);
            prop_assert!((s.t_of_eta(eta) - t).abs() <= 1e-12 * t.max(1e-3));
            prop_assert!(s.eta_of_t(t * 1.01) > eta);
        }
    }
}
