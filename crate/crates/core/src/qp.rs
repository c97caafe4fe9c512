//! Dense projection QP: `min ||u - u_nom||^2` subject to `A u >= b` and `lower <= u <= upper`.
//!
//! Solved with the Goldfarb-Idnani dual active-set method specialised to an identity
//! Hessian. The method starts from the unconstrained minimiser and adds violated constraints
//! one at a time. The working set stays linearly independent: a constraint whose normal lies
//! in the span of the working set triggers a pure dual step that drops a working constraint
//! first, so duplicated or otherwise dependent rows are harmless.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Relative size below which the projected step direction counts as zero.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub u_nom: DVector<f64>,
    /// `k x m` inequality matrix; rows are constraints `a_i^T u >= b_i`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Box bounds; infinite entries are ignored.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn validate(&self) -> Result<()> {
        let m = self.u_nom.len();
        if m == 0 || self.a.ncols() != m || self.a.nrows() != self.b.len() || self.lower.len() != m || self.upper.len() != m
        {
            return Err(Error::Config(format!(
                "QP dimensions disagree: u_nom {m}, A {}x{}, b {}, box {}/{}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config("QP box has lower > upper".into()));
        }
        if self.u_nom.iter().chain(self.a.iter()).chain(self.b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite QP data".into()));
        }
        Ok(())
    }

    fn rows(&self) -> Vec<(ConstraintRef, Vec<f64>, f64)> {
        let m = self.u_nom.len();
        let mut rows = Vec::with_capacity(self.a.nrows() + 2 * m);
        for i in 0..self.a.nrows() {
            rows.push((ConstraintRef::Row(i), self.a.row(i).iter().copied().collect(), self.b[i]));
        }
        for i in 0..m {
            if self.lower[i].is_finite() {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                rows.push((ConstraintRef::Lower(i), e, self.lower[i]));
            }
        }
        for i in 0..m {
            if self.upper[i].is_finite() {
                let mut e = vec![0.0; m];
                e[i] = -1.0;
                rows.push((ConstraintRef::Upper(i), e, -self.upper[i]));
            }
        }
        rows
    }
}

/// Identifies a constraint of a [`QpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ConstraintRef {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max-iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u_star: DVector<f64>,
    pub status: QpStatus,
    pub active_set: Vec<ConstraintRef>,
    /// Multipliers of `active_set`, in the same order.
    pub multipliers: Vec<f64>,
    /// Largest scaled violation of stationarity, primal and dual feasibility and
    /// complementarity. Each term is divided by the magnitude of the quantities involved.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// For infeasible problems: non-negative weights `y` on the constraints with
    /// `sum y_j n_j = 0` and `sum y_j b_j > 0`.
    pub certificate: Option<Vec<(ConstraintRef, f64)>>,
}

/// Active-set solver holding reusable workspace. One instance per thread.
#[derive(Debug, Clone)]
pub struct QpSolver {
    pub tol: f64,
    pub max_iter: usize,
    gram: Vec<f64>,
    chol: Vec<f64>,
}

impl Default for QpSolver {
    fn default() -> Self {
        QpSolver::new(DEFAULT_TOL, DEFAULT_MAX_ITER)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl QpSolver {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        QpSolver { tol, max_iter, gram: Vec::new(), chol: Vec::new() }
    }

    /// Solves `(N^T N) r = N^T w` for the working normals `N`; returns `None` if the Gram
    /// matrix is not numerically positive definite.
    fn project(&mut self, normals: &[&[f64]], w: &[f64]) -> Option<Vec<f64>> {
        let k = normals.len();
        self.gram.clear();
        self.gram.resize(k * k, 0.0);
        for i in 0..k {
            for j in 0..=i {
                let g = dot(normals[i], normals[j]);
                self.gram[i * k + j] = g;
                self.gram[j * k + i] = g;
            }
        }
        self.chol.clear();
        self.chol.resize(k * k, 0.0);
        for i in 0..k {
            for j in 0..=i {
                let mut s = self.gram[i * k + j];
                for p in 0..j {
                    s -= self.chol[i * k + p] * self.chol[j * k + p];
                }
                if i == j {
                    if s <= 1e-14 * self.gram[i * k + i].max(f64::MIN_POSITIVE) {
                        return None;
                    }
                    self.chol[i * k + i] = s.sqrt();
                } else {
                    self.chol[i * k + j] = s / self.chol[j * k + j];
                }
            }
        }
        let mut y: Vec<f64> = normals.iter().map(|n| dot(n, w)).collect();
        for i in 0..k {
            for p in 0..i {
                y[i] -= self.chol[i * k + p] * y[p];
            }
            y[i] /= self.chol[i * k + i];
        }
        for i in (0..k).rev() {
            for p in i + 1..k {
                y[i] -= self.chol[p * k + i] * y[p];
            }
            y[i] /= self.chol[i * k + i];
        }
        Some(y)
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution> {
        p.validate()?;
        let m = p.u_nom.len();
        let rows = p.rows();
        let mut x: Vec<f64> = p.u_nom.iter().copied().collect();
        let mut active: Vec<usize> = Vec::new();
        let mut lambda: Vec<f64> = Vec::new();
        let scale = |j: usize, x: &[f64]| {
            1.0 + rows[j].2.abs() + rows[j].1.iter().zip(x).map(|(a, b)| (a * b).abs()).sum::<f64>()
        };
        let slack = |j: usize, x: &[f64]| dot(&rows[j].1, x) - rows[j].2;
        let mut iterations = 0;

        loop {
            iterations += 1;
            if iterations > self.max_iter {
                return Ok(self.finish(p, &rows, x, active, lambda, QpStatus::MaxIterations, iterations, None));
            }
            // Most violated constraint, measured relative to its scale.
            let mut pick = None;
            let mut worst = 0.0;
            for j in 0..rows.len() {
                if active.contains(&j) {
                    continue;
                }
                let s = slack(j, &x) / scale(j, &x);
                if s < -1e-14 && s < worst {
                    worst = s;
                    pick = Some(j);
                }
            }
            let Some(pj) = pick else {
                return Ok(self.finish(p, &rows, x, active, lambda, QpStatus::Optimal, iterations, None));
            };
            let np = rows[pj].1.clone();
            let np_norm2 = dot(&np, &np);
            let mut lam_p = 0.0;

            loop {
                iterations += 1;
                if iterations > self.max_iter {
                    return Ok(self.finish(p, &rows, x, active, lambda, QpStatus::MaxIterations, iterations, None));
                }
                let normals: Vec<&[f64]> = active.iter().map(|&j| rows[j].1.as_slice()).collect();
                let r = self
                    .project(&normals, &np)
                    .ok_or_else(|| Error::Numeric("working set lost linear independence".into()))?;
                let mut z = np.clone();
                for (rj, n) in r.iter().zip(&normals) {
                    for d in 0..m {
                        z[d] -= rj * n[d];
                    }
                }
                let ztn = dot(&z, &np);
                let dependent = ztn <= DEPENDENCE_TOL * DEPENDENCE_TOL * np_norm2;

                let (mut t1, mut drop) = (f64::INFINITY, None);
                for (idx, &rj) in r.iter().enumerate() {
                    if rj > 0.0 {
                        let t = lambda[idx] / rj;
                        if t < t1 {
                            t1 = t;
                            drop = Some(idx);
                        }
                    }
                }
                let t2 = if dependent { f64::INFINITY } else { -slack(pj, &x) / ztn };
                let t = t1.min(t2);

                if !t.is_finite() {
                    let mut cert = vec![(rows[pj].0, 1.0)];
                    for (idx, &j) in active.iter().enumerate() {
                        cert.push((rows[j].0, -r[idx]));
                    }
                    return Ok(self.finish(p, &rows, x, active, lambda, QpStatus::Infeasible, iterations, Some(cert)));
                }

                for (l, rj) in lambda.iter_mut().zip(&r) {
                    *l -= t * rj;
                }
                lam_p += t;
                if t2.is_finite() {
                    for d in 0..m {
                        x[d] += t * z[d];
                    }
                }
                if t2 <= t1 {
                    active.push(pj);
                    lambda.push(lam_p);
                    break;
                }
                let k = drop.expect("finite t1 has a blocking index");
                active.remove(k);
                lambda.remove(k);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        p: &QpProblem,
        rows: &[(ConstraintRef, Vec<f64>, f64)],
        x: Vec<f64>,
        active: Vec<usize>,
        lambda: Vec<f64>,
        status: QpStatus,
        iterations: usize,
        certificate: Option<Vec<(ConstraintRef, f64)>>,
    ) -> QpSolution {
        let m = x.len();
        let mut stationarity: Vec<f64> = (0..m).map(|d| x[d] - p.u_nom[d]).collect();
        for (&j, &l) in active.iter().zip(&lambda) {
            for (s, n) in stationarity.iter_mut().zip(&rows[j].1) {
                *s -= l * n;
            }
        }
        let mag = 1.0 + p.u_nom.amax() + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut res = stationarity.iter().fold(0.0f64, |a, s| a.max(s.abs())) / mag;
        for (j, row) in rows.iter().enumerate() {
            let s = dot(&row.1, &x) - row.2;
            let scale = 1.0 + row.2.abs() + row.1.iter().zip(&x).map(|(a, b)| (a * b).abs()).sum::<f64>();
            res = res.max(-s / scale);
            if let Some(k) = active.iter().position(|&a| a == j) {
                res = res.max(-lambda[k] / mag).max((lambda[k] * s).abs() / (scale * (1.0 + lambda[k].abs())));
            }
        }
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by_key(|&k| rows[active[k]].0);
        let status = if status == QpStatus::Optimal && res > self.tol { QpStatus::MaxIterations } else { status };
        QpSolution {
            u_star: DVector::from_vec(x),
            status,
            active_set: order.iter().map(|&k| rows[active[k]].0).collect(),
            multipliers: order.iter().map(|&k| lambda[k]).collect(),
            kkt_residual: res,
            iterations,
            certificate,
        }
    }
}

/// Convenience wrapper with a fresh solver.
pub fn solve(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    QpSolver::new(tol, max_iter).solve(p)
}

/// Brute-force reference solver used to cross-check the active-set method.
pub mod oracle {
    use super::*;

    /// Enumerates every subset of at most `m` constraints (box rows included), projects
    /// `u_nom` onto the affine set where the subset is tight, keeps the projections that
    /// satisfy every constraint to `feas_tol`, and returns the one closest to `u_nom`.
    /// `None` means no candidate is feasible.
    pub fn solve_by_enumeration(p: &QpProblem, feas_tol: f64) -> Option<DVector<f64>> {
        let m = p.u_nom.len();
        let rows = p.rows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut subset = Vec::new();
        enumerate(&rows, m, 0, &mut subset, &mut |s| {
            let Some(x) = project_onto(p, &rows, s) else { return };
            let feasible = rows.iter().all(|(_, n, b)| {
                let lhs: f64 = n.iter().zip(x.iter()).map(|(a, c)| a * c).sum();
                lhs - b >= -feas_tol * (1.0 + b.abs())
            });
            if feasible {
                let obj = (&x - &p.u_nom).norm_squared();
                if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                    best = Some((obj, x));
                }
            }
        });
        best.map(|(_, x)| x)
    }

    fn enumerate<F: FnMut(&[usize])>(
        rows: &[(ConstraintRef, Vec<f64>, f64)],
        max: usize,
        start: usize,
        subset: &mut Vec<usize>,
        f: &mut F,
    ) {
        f(subset);
        if subset.len() == max {
            return;
        }
        for j in start..rows.len() {
            subset.push(j);
            enumerate(rows, max, j + 1, subset, f);
            subset.pop();
        }
    }

    fn project_onto(p: &QpProblem, rows: &[(ConstraintRef, Vec<f64>, f64)], s: &[usize]) -> Option<DVector<f64>> {
        let m = p.u_nom.len();
        if s.is_empty() {
            return Some(p.u_nom.clone());
        }
        let n = DMatrix::from_fn(m, s.len(), |d, c| rows[s[c]].1[d]);
        let gram = n.transpose() * &n;
        let rhs = DVector::from_fn(s.len(), |c, _| rows[s[c]].2) - n.transpose() * &p.u_nom;
        let chol = gram.cholesky()?;
        if chol.l().diagonal().min() < 1e-7 {
            return None;
        }
        let lam = chol.solve(&rhs);
        Some(&p.u_nom + n * lam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(u_nom: &[f64], a: &[&[f64]], b: &[f64], lo: &[f64], hi: &[f64]) -> QpProblem {
        let m = u_nom.len();
        QpProblem {
            u_nom: DVector::from_column_slice(u_nom),
            a: DMatrix::from_fn(a.len(), m, |i, j| a[i][j]),
            b: DVector::from_column_slice(b),
            lower: DVector::from_column_slice(lo),
            upper: DVector::from_column_slice(hi),
        }
    }

    #[test]
    fn interior_target_is_returned() {
        let p = problem(&[0.1, -0.2], &[&[1.0, 1.0]], &[-1.0], &[-1.0, -1.0], &[1.0, 1.0]);
        let s = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.u_star, p.u_nom);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn one_dimensional_clamp() {
        let p = problem(&[3.0], &[&[1.0]], &[0.0], &[f64::NEG_INFINITY], &[2.0]);
        let s = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u_star[0] - 2.0).abs() < 1e-15);
        assert_eq!(s.active_set, vec![ConstraintRef::Upper(0)]);
        assert!((s.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_and_scaled_rows_are_harmless() {
        let base = problem(&[2.0, 2.0], &[&[-1.0, -1.0]], &[-1.0], &[-5.0, -5.0], &[5.0, 5.0]);
        let dup = problem(
            &[2.0, 2.0],
            &[&[-1.0, -1.0], &[-1.0, -1.0], &[-2.0, -2.0]],
            &[-1.0, -1.0, -2.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
        );
        let a = solve(&base, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let b = solve(&dup, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(b.status, QpStatus::Optimal);
        assert!((&a.u_star - &b.u_star).amax() < 1e-12);
        assert!((b.u_star[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_problem_has_certificate() {
        // u >= 2 and u <= 1.
        let p = problem(&[0.0], &[&[1.0], &[-1.0]], &[2.0, -1.0], &[f64::NEG_INFINITY], &[f64::INFINITY]);
        let s = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        let cert = s.certificate.unwrap();
        let rows = p.rows();
        let mut combo = 0.0;
        let mut rhs = 0.0;
        for (c, y) in cert {
            assert!(y >= -1e-12);
            let (_, n, b) = rows.iter().find(|r| r.0 == c).unwrap();
            combo += y * n[0];
            rhs += y * b;
        }
        assert!(combo.abs() < 1e-12);
        assert!(rhs > 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut p = problem(&[0.0, 0.0], &[&[1.0, 0.0]], &[0.0], &[-1.0, -1.0], &[1.0, 1.0]);
        p.b = DVector::zeros(2);
        assert!(matches!(solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER), Err(Error::Config(_))));
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
        let m = rng.random_range(1..=4usize);
        let k = rng.random_range(1..=10usize);
        // Build around a feasible point so most instances are feasible.
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
        let u_nom: Vec<f64> = (0..m).map(|_| rng.random_range(-6.0..6.0)).collect();
        let lo: Vec<f64> = x0.iter().map(|x| x - rng.random_range(0.5..3.0)).collect();
        let hi: Vec<f64> = x0.iter().map(|x| x + rng.random_range(0.5..3.0)).collect();
        let rr: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        problem(&u_nom, &rr, &b, &lo, &hi)
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut solver = QpSolver::default();
        for _ in 0..300 {
            let p = random_problem(&mut rng);
            let s = solver.solve(&p).unwrap();
            let o = oracle::solve_by_enumeration(&p, 1e-9).expect("constructed feasible");
            assert_eq!(s.status, QpStatus::Optimal);
            assert!((&s.u_star - &o).amax() < 1e-8, "{} vs {}", s.u_star, o);
            assert!(s.kkt_residual <= DEFAULT_TOL);
        }
    }

    proptest! {
        #[test]
        fn projection_property(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng);
            let s = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            let best = (&s.u_star - &p.u_nom).norm();
            let m = p.u_nom.len();
            for _ in 0..200 {
                let u = DVector::from_fn(m, |i, _| rng.random_range(p.lower[i]..=p.upper[i]));
                if (&p.a * &u - &p.b).min() >= 0.0 {
                    prop_assert!(best <= (&u - &p.u_nom).norm() + 1e-12);
                }
            }
        }
    }
}
