//! Brute-force reference fitter: a grid over (b, c) with the asymptote
//! solved in closed form, then pattern-search refinement. Shares nothing with
//! the production solver beyond the curve formula, which it re-derives here.

#![allow(dead_code)]

pub struct OracleFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub cost: f64,
}

fn gap(b: f64, c: f64, x: f64) -> f64 {
    b.powf(c - x)
}

/// Best `a` in [0.5, 102.5] for fixed (b, c), and the resulting cost.
fn profile(points: &[(f64, f64)], b: f64, c: f64) -> (f64, f64) {
    let n = points.len() as f64;
    let a = points.iter().map(|&(x, y)| y + gap(b, c, x)).sum::<f64>() / n;
    let a = a.clamp(0.5, 102.5);
    (a, cost(points, a, b, c))
}

pub fn cost(points: &[(f64, f64)], a: f64, b: f64, c: f64) -> f64 {
    let s: f64 = points.iter().map(|&(x, y)| (a - gap(b, c, x) - y).powi(2)).sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Grid at 0.05 on b in [1, 5] and 0.25 on c in [0, 30], then refinement of
/// (b, c) by halving pattern steps down to 1e-4 (a re-profiled at every probe).
pub fn grid_refine(points: &[(f64, f64)]) -> OracleFit {
    let mut best = (f64::INFINITY, 0.0, 1.0, 0.0);
    for bi in 0..=80 {
        let b = 1.0 + 0.05 * bi as f64;
        for ci in 0..=120 {
            let c = 0.25 * ci as f64;
            let (a, s) = profile(points, b, c);
            if s < best.0 {
                best = (s, a, b, c);
            }
        }
    }
    let (mut s, mut a, mut b, mut c) = best;
    let mut step_b = 0.05;
    let mut step_c = 0.25;
    while step_b > 1e-7 || step_c > 1e-6 {
        let mut improved = false;
        for (db, dc) in [
            (step_b, 0.0),
            (-step_b, 0.0),
            (0.0, step_c),
            (0.0, -step_c),
            (step_b, step_c),
            (-step_b, -step_c),
            (step_b, -step_c),
            (-step_b, step_c),
        ] {
            let nb = (b + db).max(1.0);
            let nc = (c + dc).max(0.0);
            let (na, ns) = profile(points, nb, nc);
            if ns < s {
                (s, a, b, c) = (ns, na, nb, nc);
                improved = true;
            }
        }
        if !improved {
            step_b *= 0.5;
            step_c *= 0.5;
        }
    }
    OracleFit { a, b, c, cost: s }
}
