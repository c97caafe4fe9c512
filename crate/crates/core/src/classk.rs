//! Extended class-K-infinity functions used as the barrier shaping functions
//! (`alpha` on position margins, `beta` on barrier values).

use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::linspace;

/// Default number of grid points per dimension for the structural checks.
pub const DEFAULT_CHECK_GRID: usize = 1000;

const BETA_SEED: u64 = 0xbe7a_5eed;

/// A strictly increasing odd-type function with `f(0) = 0` and `f(x) -> ±inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassKFn {
    Linear { slope: f64 },
    Arctangent,
    Cubic,
}

impl ClassKFn {
    pub fn linear(slope: f64) -> Result<Self> {
        if slope.is_finite() && slope > 0.0 {
            Ok(ClassKFn::Linear { slope })
        } else {
            Err(Error::Config(format!("linear class-K slope must be positive, got {slope}")))
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ClassKFn::Linear { slope } => slope * x,
            ClassKFn::Arctangent => x.atan(),
            ClassKFn::Cubic => x * x * x,
        }
    }

    /// Checked evaluation; rejects non-finite input.
    pub fn try_value(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("class-K function evaluated at {x}")));
        }
        Ok(self.value(x))
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ClassKFn::Linear { slope } => slope,
            ClassKFn::Arctangent => 1.0 / (1.0 + x * x),
            ClassKFn::Cubic => 3.0 * x * x,
        }
    }

    /// Exact Lipschitz constant of the function on `[a, b]` (endpoints in any order).
    pub fn lipschitz_on(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        match *self {
            ClassKFn::Linear { slope } => slope,
            ClassKFn::Arctangent => {
                let nearest = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
                1.0 / (1.0 + nearest * nearest)
            }
            ClassKFn::Cubic => 3.0 * lo.powi(2).max(hi.powi(2)),
        }
    }

    /// Closed form of `min_q f_up(q)` for the margin-shift construction, when one exists.
    /// `width` is the box width `q_max - q_min` of the joint.
    pub fn zeta_closed_form(&self, gamma: f64, delta: f64, width: f64) -> f64 {
        match *self {
            ClassKFn::Linear { slope } => -gamma * slope * delta,
            ClassKFn::Arctangent => -gamma * 2.0 * (delta / 2.0).atan(),
            ClassKFn::Cubic => gamma * (self.value(width + delta) - self.value(width + 2.0 * delta)),
        }
    }
}

impl fmt::Display for ClassKFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassKFn::Linear { slope } => write!(f, "linear:{slope}"),
            ClassKFn::Arctangent => write!(f, "atan"),
            ClassKFn::Cubic => write!(f, "cubic"),
        }
    }
}

impl FromStr for ClassKFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "atan" | "arctan" | "arctangent" => Ok(ClassKFn::Arctangent),
            "cubic" => Ok(ClassKFn::Cubic),
            "linear" => ClassKFn::linear(1.0),
            _ => {
                if let Some(slope) = s.strip_prefix("linear:") {
                    let slope: f64 = slope
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad linear slope in `{s}`")))?;
                    ClassKFn::linear(slope)
                } else {
                    Err(Error::Config(format!(
                        "unknown class-K function `{s}` (expected atan | linear:<slope> | cubic)"
                    )))
                }
            }
        }
    }
}

impl Serialize for ClassKFn {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClassKFn {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of the margin-overshoot condition on `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaCheck {
    pub ok: bool,
    /// Minimum of `alpha(-e) + alpha(w_i + e)` over joints and the `e` grid.
    pub d: f64,
    pub worst_joint: usize,
    pub worst_e: f64,
}

/// Checks `alpha(-e) + alpha(q_max_i - q_min_i + e) >= d > 0` for all joints and all
/// `e` on a dense grid of `[0, delta]`.
pub fn check_assumption2_alpha(
    f: &ClassKFn,
    q_min: &[f64],
    q_max: &[f64],
    delta: f64,
) -> Result<AlphaCheck> {
    check_assumption2_alpha_with(f, q_min, q_max, delta, DEFAULT_CHECK_GRID)
}

pub fn check_assumption2_alpha_with(
    f: &ClassKFn,
    q_min: &[f64],
    q_max: &[f64],
    delta: f64,
    grid: usize,
) -> Result<AlphaCheck> {
    if q_min.len() != q_max.len() || q_min.is_empty() {
        return Err(Error::Config("q_min and q_max must be non-empty and equally sized".into()));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!("delta must be a finite non-negative number, got {delta}")));
    }
    let mut best = AlphaCheck { ok: true, d: f64::INFINITY, worst_joint: 0, worst_e: 0.0 };
    for (i, (&lo, &hi)) in q_min.iter().zip(q_max).enumerate() {
        if !(hi > lo) {
            return Err(Error::Config(format!(
                "degenerate box on joint {i}: q_max = {hi} is not above q_min = {lo}"
            )));
        }
        let width = hi - lo;
        for e in linspace(0.0, delta, if delta > 0.0 { grid.max(2) } else { 1 }) {
            let val = f.value(-e) + f.value(width + e);
            if val < best.d {
                best = AlphaCheck { ok: true, d: val, worst_joint: i, worst_e: e };
            }
        }
    }
    best.ok = best.d > 0.0;
    Ok(best)
}

/// Outcome of the falsification sweep for the `beta` superadditivity-type condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaCheck {
    pub holds: bool,
    pub samples: usize,
    /// First triple `(a, b, c)` found with `beta(a) + beta(-b) < beta(c)`.
    pub counterexample: Option<[f64; 3]>,
}

/// Searches for a triple `a, c > 0`, `b >= 0`, `a - b = 2c` with
/// `beta(a) + beta(-b) < beta(c)`. This can only refute the condition, never prove it.
pub fn check_assumption2_beta(f: &ClassKFn, sample_budget: usize) -> BetaCheck {
    let budget = sample_budget.max(1);
    let violates = |b: f64, c: f64| {
        let a = 2.0 * c + b;
        let lhs = f.value(a) + f.value(-b);
        let rhs = f.value(c);
        lhs < rhs - 1e-12 * rhs.abs().max(1.0)
    };

    // Structured part: log-spaced grid over (b, c), including b = 0.
    let side = ((budget / 2) as f64).sqrt().floor().max(1.0) as usize;
    let exps = linspace(-3.0, 3.0, side.max(2));
    let mut samples = 0;
    let mut bs: Vec<f64> = exps.iter().map(|e| 10f64.powf(*e)).collect();
    bs.insert(0, 0.0);
    'grid: for &b in &bs {
        for &e in &exps {
            if samples >= budget {
                break 'grid;
            }
            let c = 10f64.powf(e);
            samples += 1;
            if violates(b, c) {
                return BetaCheck { holds: false, samples, counterexample: Some([2.0 * c + b, b, c]) };
            }
        }
    }

    // Randomized part with a fixed seed.
    let mut rng = ChaCha8Rng::seed_from_u64(BETA_SEED);
    while samples < budget {
        let c = 10f64.powf(rng.random_range(-4.0..4.0));
        let b = if rng.random_bool(0.1) { 0.0 } else { 10f64.powf(rng.random_range(-4.0..4.0)) };
        samples += 1;
        if violates(b, c) {
            return BetaCheck { holds: false, samples, counterexample: Some([2.0 * c + b, b, c]) };
        }
    }
    BetaCheck { holds: true, samples, counterexample: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [ClassKFn; 4] = [
        ClassKFn::Arctangent,
        ClassKFn::Cubic,
        ClassKFn::Linear { slope: 1.0 },
        ClassKFn::Linear { slope: 2.5 },
    ];

    #[test]
    fn value_examples() {
        assert_eq!(ClassKFn::Arctangent.value(0.0), 0.0);
        assert!((ClassKFn::Arctangent.value(1.0) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((ClassKFn::Arctangent.value(1.0) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(ClassKFn::Cubic.value(-2.0), -8.0);
        assert!(ClassKFn::Cubic.try_value(f64::NAN).is_err());
        assert!(ClassKFn::Arctangent.try_value(f64::INFINITY).is_err());
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("atan".parse::<ClassKFn>().unwrap(), ClassKFn::Arctangent);
        assert_eq!("cubic".parse::<ClassKFn>().unwrap(), ClassKFn::Cubic);
        assert_eq!("linear:2".parse::<ClassKFn>().unwrap(), ClassKFn::Linear { slope: 2.0 });
        assert!("linear:-1".parse::<ClassKFn>().is_err());
        assert!("tanh".parse::<ClassKFn>().is_err());
        for f in ALL {
            assert_eq!(f.to_string().parse::<ClassKFn>().unwrap(), f);
        }
    }

    #[test]
    fn lipschitz_closed_forms() {
        assert_eq!(ClassKFn::Arctangent.lipschitz_on(-0.1, 3.0), 1.0);
        assert!((ClassKFn::Arctangent.lipschitz_on(1.0, 2.0) - 0.5).abs() < 1e-15);
        assert!((ClassKFn::Arctangent.lipschitz_on(-3.0, -2.0) - 0.2).abs() < 1e-15);
        assert_eq!(ClassKFn::Cubic.lipschitz_on(-1.0, 2.0), 12.0);
        assert_eq!(ClassKFn::Linear { slope: 3.0 }.lipschitz_on(-5.0, 5.0), 3.0);
    }

    #[test]
    fn derivative_positive_except_cubic_origin() {
        for f in ALL {
            for x in linspace(-5.0, 5.0, 101) {
                let d = f.derivative(x);
                if matches!(f, ClassKFn::Cubic) && x == 0.0 {
                    assert_eq!(d, 0.0);
                } else {
                    assert!(d > 0.0, "{f} at {x}");
                }
            }
        }
    }

    #[test]
    fn alpha_condition_examples() {
        // arctan on [-1, 1] with delta = 0.2: direct evaluation of the expression over e.
        let oracle = linspace(0.0, 0.2, 100_001)
            .into_iter()
            .map(|e| -e.atan() + (2.0 + e).atan())
            .fold(f64::INFINITY, f64::min);
        assert!((oracle - 0.946_773).abs() < 1e-6);
        let r = check_assumption2_alpha(&ClassKFn::Arctangent, &[-1.0], &[1.0], 0.2).unwrap();
        assert!(r.ok);
        assert!((r.d - oracle).abs() < 1e-9);

        let r = check_assumption2_alpha(&ClassKFn::Linear { slope: 1.0 }, &[-1.0], &[1.0], 0.5).unwrap();
        assert!(r.ok);
        assert!((r.d - 2.0).abs() < 1e-12);

        let r = check_assumption2_alpha(&ClassKFn::Cubic, &[0.0], &[0.1], 1.0).unwrap();
        assert!(r.ok);
        assert!((r.d - 0.001).abs() < 1e-12);
        assert_eq!(r.worst_e, 0.0);
    }

    #[test]
    fn alpha_condition_rejects_degenerate_box() {
        let err = check_assumption2_alpha(&ClassKFn::Arctangent, &[0.0, 1.0], &[1.0, 1.0], 0.1);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn beta_condition_verdicts() {
        assert!(check_assumption2_beta(&ClassKFn::Cubic, 10_000).holds);
        assert!(check_assumption2_beta(&ClassKFn::Linear { slope: 1.0 }, 10_000).holds);
        // atan saturates: beta(2c + b) - beta(b) -> 0 as b grows while beta(c) stays fixed.
        let r = check_assumption2_beta(&ClassKFn::Arctangent, 10_000);
        assert!(!r.holds);
        let [a, b, c] = r.counterexample.unwrap();
        assert!((a - b - 2.0 * c).abs() < 1e-9 * a.max(1.0));
        assert!(a.atan() + (-b).atan() < c.atan());
    }

    proptest! {
        #[test]
        fn strictly_increasing(x in -50.0f64..50.0, dx in 1e-6f64..10.0) {
            for f in ALL {
                prop_assert!(f.value(x) < f.value(x + dx));
                prop_assert_eq!(f.value(x).signum() == x.signum() || x == 0.0, true);
            }
        }

        #[test]
        fn derivative_matches_central_differences(x in -4.0f64..4.0) {
            for f in ALL {
                let h = 1e-5 * (1.0 + x.abs());
                let fd = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
                let d = f.derivative(x);
                prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1e-3), "{} at {}: {} vs {}", f, x, fd, d);
            }
        }

        #[test]
        fn lipschitz_bounds_secants(a in -5.0f64..5.0, w in 0.0f64..5.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
            let b = a + w;
            let (x, y) = (a + s * w, a + t * w);
            for f in ALL {
                let l = f.lipschitz_on(a, b);
                prop_assert!(l * (x - y).abs() + 1e-12 >= (f.value(x) - f.value(y)).abs());
                let sup = linspace(a, b, 200).into_iter().map(|z| f.derivative(z).abs()).fold(0.0, f64::max);
                prop_assert!(l >= sup - 1e-12);
            }
        }
    }
}
