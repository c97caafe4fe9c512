use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{inf_norm, SystemModel};
use crate::error::{Error, Result};

/// Grid and sampling settings for [`estimate_constants`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimator {
    /// Configuration samples per coordinate of the constrained box.
    pub per_axis: usize,
    /// Velocity directions per face of the unit infinity-sphere (per free coordinate).
    pub directions: usize,
    /// Multiplier applied to the sampled maxima of `k_c`, `f_j`, `k_m_inf`, `k_g`.
    pub inflation: f64,
    /// Multiplier applied to the finite-difference Lipschitz quotients.
    pub lipschitz_factor: f64,
    /// Number of random point pairs for the Lipschitz quotients.
    pub lipschitz_samples: usize,
    /// Velocities with `|v_i| <= velocity_bound` are used for the drift Lipschitz constant.
    pub velocity_bound: f64,
    pub seed: u64,
}

impl Default for ConstantEstimator {
    fn default() -> Self {
        ConstantEstimator {
            per_axis: 60,
            directions: 33,
            inflation: 1.0,
            lipschitz_factor: 1.2,
            lipschitz_samples: 20_000,
            velocity_bound: 1.0,
            seed: 0x5eed,
        }
    }
}

/// Bounds on the dynamics over a configuration box, all in the infinity norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    /// `||f1(q, v)|| <= k_c ||v||^2`.
    pub k_c: f64,
    /// `|f2_j(q, v)| <= f_bound_j ||v||`.
    pub f_bound: Vec<f64>,
    /// `max ||G(q)||`.
    pub k_m_inf: f64,
    /// `max ||f3(q)||`.
    pub k_g: f64,
    /// Lipschitz constant of `(q, v) -> G(q)(f1 + f2 + f3)`.
    pub c1: f64,
    /// Lipschitz constant of `q -> G(q)`.
    pub c3: f64,
}

/// Unit infinity-norm directions: for each face `x_i = +-1`, a grid of the other coordinates.
fn unit_directions(n: usize, per_face: usize) -> Vec<DVector<f64>> {
    let free = crate::grid::linspace(-1.0, 1.0, per_face.max(2));
    let mut out = Vec::new();
    for face in 0..n {
        for sign in [-1.0, 1.0] {
            let count = free.len().pow((n - 1) as u32);
            for mut k in 0..count {
                let mut v = DVector::zeros(n);
                for d in 0..n {
                    if d == face {
                        v[d] = sign;
                    } else {
                        v[d] = free[k % free.len()];
                        k /= free.len();
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

#[derive(Clone)]
struct Maxima {
    k_c: f64,
    f_bound: Vec<f64>,
    k_m_inf: f64,
    k_g: f64,
}

impl Maxima {
    fn merge(mut self, other: Maxima) -> Maxima {
        self.k_c = self.k_c.max(other.k_c);
        self.k_m_inf = self.k_m_inf.max(other.k_m_inf);
        self.k_g = self.k_g.max(other.k_g);
        for (a, b) in self.f_bound.iter_mut().zip(other.f_bound) {
            *a = a.max(b);
        }
        self
    }
}

/// Grid estimates of the dynamics constants over the constrained box `[lo, hi]`.
///
/// `k_c` and `f_j` exploit homogeneity of `f1` (quadratic) and `f2` (linear) in the velocity,
/// so only unit-norm directions are sampled. `c1` and `c3` are the largest finite-difference
/// quotients over random nearby pairs, scaled by `lipschitz_factor`.
pub fn estimate_constants(
    model: &dyn SystemModel,
    lo: &[f64],
    hi: &[f64],
    est: &ConstantEstimator,
) -> Result<SystemConstants> {
    let n = model.dof();
    let m = model.input_dim();
    if lo.len() != n || hi.len() != n {
        return Err(Error::Config("constant-estimation box has the wrong dimension".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
        return Err(Error::Config("constant-estimation box is empty".into()));
    }
    let configs = model.configurations(lo, hi, est.per_axis)?;
    let dirs = unit_directions(n, est.directions);
    let zero = Maxima { k_c: 0.0, f_bound: vec![0.0; m], k_m_inf: 0.0, k_g: 0.0 };

    let maxima = configs
        .par_iter()
        .map(|x| -> Result<Maxima> {
            let mut acc = zero.clone();
            let rest = model.terms(x, &DVector::zeros(n))?;
            acc.k_m_inf = inf_norm(&rest.g);
            acc.k_g = rest.f3.amax();
            for v in &dirs {
                let xv = model.native_velocity(x, v)?;
                let t = model.terms(x, &xv)?;
                acc.k_c = acc.k_c.max(t.f1.amax());
                for (j, b) in acc.f_bound.iter_mut().enumerate() {
                    *b = b.max(t.f2[j].abs());
                }
            }
            Ok(acc)
        })
        .try_reduce(|| zero.clone(), |a, b| Ok(a.merge(b)))?;

    let (c1, c3) = lipschitz_quotients(model, &configs, est)?;
    let k = est.inflation.max(1.0);
    Ok(SystemConstants {
        k_c: maxima.k_c * k,
        f_bound: maxima.f_bound.iter().map(|f| f * k).collect(),
        k_m_inf: maxima.k_m_inf * k,
        k_g: maxima.k_g * k,
        c1: c1 * est.lipschitz_factor,
        c3: c3 * est.lipschitz_factor,
    })
}

fn lipschitz_quotients(
    model: &dyn SystemModel,
    configs: &[DVector<f64>],
    est: &ConstantEstimator,
) -> Result<(f64, f64)> {
    let n = model.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(est.seed);
    let vb = est.velocity_bound.max(f64::MIN_POSITIVE);
    let step = 1e-4;
    let mut c1 = 0.0f64;
    let mut c3 = 0.0f64;
    for _ in 0..est.lipschitz_samples {
        let x = &configs[rng.random_range(0..configs.len())];
        let v: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-vb..=vb));
        let dx: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-step..=step));
        let dv: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-step..=step) * vb);
        let xv = model.native_velocity(x, &v)?;
        let x2 = x + dx;
        let xv2 = model.native_velocity(&x2, &(&v + &dv))?;
        let (q_a, v_a) = model.constraint_state(x, &xv)?;
        let (q_b, v_b) = model.constraint_state(&x2, &xv2)?;
        let t_a = model.terms(x, &xv)?;
        let t_b = model.terms(&x2, &xv2)?;

        let dq = (&q_b - &q_a).amax();
        let dist = dq.max((&v_b - &v_a).amax());
        if dist > 0.0 {
            let drift_a = &t_a.g * t_a.drift();
            let drift_b = &t_b.g * t_b.drift();
            c1 = c1.max((drift_b - drift_a).amax() / dist);
        }
        if dq > 0.0 {
            c3 = c3.max(inf_norm(&(&t_b.g - &t_a.g)) / dq);
        }
    }
    Ok((c1, c3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{MassMode, Planar2Dof, PointMass};
    use std::f64::consts::PI;

    fn s1_box() -> ([f64; 2], [f64; 2]) {
        ([-PI / 2.0 - 0.1, PI / 2.0 - 0.1], [PI / 2.0 + 0.1, 5.0 * PI / 6.0 + 0.1])
    }

    #[test]
    fn damping_bound_is_exact_and_gravity_free_arm_has_no_kg() {
        let arm = Planar2Dof::default().with_mass_mode(MassMode::UniformRod);
        let (lo, hi) = s1_box();
        let est = ConstantEstimator { per_axis: 10, lipschitz_samples: 500, ..Default::default() };
        let c = estimate_constants(&arm, &lo, &hi, &est).unwrap();
        assert_eq!(c.f_bound, vec![0.001, 0.001]);
        assert_eq!(c.k_g, 0.0);
    }

    #[test]
    fn k_c_matches_dense_maximisation() {
        let arm = Planar2Dof::default().with_mass_mode(MassMode::UniformRod);
        let (lo, hi) = s1_box();
        let c = estimate_constants(&arm, &lo, &hi, &ConstantEstimator { lipschitz_samples: 100, ..Default::default() })
            .unwrap();
        // Oracle: C(q, v) v written out by hand, maximised over q2 and the unit sphere.
        let h_max = |q2: f64| 0.5 * q2.sin().abs();
        let mut best = 0.0f64;
        for q2 in crate::grid::linspace(lo[1], hi[1], 400) {
            for a in crate::grid::linspace(-1.0, 1.0, 401) {
                for (v1, v2) in [(1.0, a), (-1.0, a), (a, 1.0), (a, -1.0)] {
                    let h = h_max(q2);
                    let f = [h * (v2 * v1 + (v1 + v2) * v2), h * v1 * v1];
                    best = best.max(f[0].abs().max(f[1].abs()));
                }
            }
        }
        assert!((c.k_c - best).abs() <= 2e-3 * best, "{} vs {}", c.k_c, best);
    }

    #[test]
    fn estimates_hold_on_fresh_samples() {
        let arm = Planar2Dof::default().with_mass_mode(MassMode::UniformRod);
        let (lo, hi) = s1_box();
        let est = ConstantEstimator { velocity_bound: 1.5, ..Default::default() };
        let c = estimate_constants(&arm, &lo, &hi, &est).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5000 {
            let q = DVector::from_fn(2, |i, _| rng.random_range(lo[i]..hi[i]));
            let v = DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5));
            let t = arm.terms(&q, &v).unwrap();
            let vn = v.amax();
            // Grid maxima can sit slightly below the true maximum between nodes.
            assert!(t.f1.amax() <= c.k_c * vn * vn * 1.01 + 1e-12);
            assert!(inf_norm(&t.g) <= c.k_m_inf * 1.01);
            let q2 = &q + DVector::from_fn(2, |_, _| rng.random_range(-0.01..0.01));
            let g2 = arm.terms(&q2, &v).unwrap().g;
            assert!(inf_norm(&(g2 - &t.g)) <= c.c3 * (&q2 - &q).amax() + 1e-12);
        }
    }

    #[test]
    fn point_mass_constants() {
        let pm = PointMass { n: 1, mass: 2.0, damping: 0.5 };
        let est = ConstantEstimator { per_axis: 5, lipschitz_samples: 200, velocity_bound: 1.0, ..Default::default() };
        let c = estimate_constants(&pm, &[-1.0], &[1.0], &est).unwrap();
        assert_eq!(c.k_c, 0.0);
        assert_eq!(c.f_bound, vec![0.5]);
        assert_eq!(c.k_m_inf, 0.5);
        assert!(c.c3 == 0.0);
        // Drift is -0.25 v: Lipschitz 0.25, inflated by 1.2.
        assert!((c.c1 - 0.3).abs() < 1e-9);
        assert!(estimate_constants(&pm, &[1.0], &[1.0], &est).is_err());
    }
}
