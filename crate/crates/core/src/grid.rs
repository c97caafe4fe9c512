//! Small 1-D sampling and minimization helpers shared by the sweeps.

/// `n` evenly spaced points on `[a, b]`, endpoints included. `n == 1` yields `[a]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            let mut out: Vec<f64> = (0..n).map(|k| a + step * k as f64).collect();
            out[n - 1] = b;
            out
        }
    }
}

/// Minimizes `f` on `[a, b]`: a dense scan followed by golden-section refinement
/// of the best bracket. Returns `(argmin, min)`.
pub fn minimize_scalar<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, scan: usize) -> (f64, f64) {
    if b <= a {
        return (a, f(a));
    }
    let xs = linspace(a, b, scan.max(3));
    let (mut best_k, mut best) = (0, f(xs[0]));
    for (k, &x) in xs.iter().enumerate().skip(1) {
        let y = f(x);
        if y < best {
            best = y;
            best_k = k;
        }
    }
    let lo = xs[best_k.saturating_sub(1)];
    let hi = xs[(best_k + 1).min(xs.len() - 1)];
    let (x, y) = golden_section(&f, lo, hi, 1e-13);
    if y < best {
        (x, y)
    } else {
        (xs[best_k], best)
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Largest `x` in `[lo, hi]` with `pred(x)` true, assuming `pred` holds on a prefix of the
/// interval. `pred(lo)` must hold.
pub(crate) fn bisect_last_true<P: Fn(f64) -> bool>(pred: P, mut lo: f64, mut hi: f64) -> f64 {
    if pred(hi) {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
