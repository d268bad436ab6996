//! The saturating learning-curve family `f(x) = a - b^(c - x)`.
//!
//! `a` is the horizontal asymptote (accuracy in percent), `b >= 1` controls
//! steepness and `c >= 0` shifts the curve to the right. `x` is the rescaled
//! epoch index, starting at 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite stand-in for the unbounded upper limits on `b` and `c`.
pub const DEFAULT_INFINITY_CAP: f64 = 1e12;

/// Largest natural-log exponent evaluated before reporting overflow.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CurveParams {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    /// Natural-log exponent of the gap term, `(c - x) ln b`.
    fn exponent(&self, x: f64) -> f64 {
        (self.c - x) * self.b.ln()
    }

    /// The gap `a - f(x) = b^(c - x)`.
    fn gap(&self, x: f64) -> Result<f64> {
        if self.b == 1.0 {
            return Ok(1.0);
        }
        let e = self.exponent(x);
        if !e.is_finite() || e > MAX_EXPONENT {
            return Err(Error::EvaluationOverflow { x });
        }
        // below -700 the gap is < 1e-304, far under any residual we care about
        Ok(e.max(-MAX_EXPONENT).exp())
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let v = self.a - self.gap(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::EvaluationOverflow { x })
        }
    }

    /// Analytic gradient `(df/da, df/db, df/dc)` at `x`.
    pub fn partials(&self, x: f64) -> Result<[f64; 3]> {
        let gap = self.gap(x)?;
        let d = self.c - x;
        let db = if d == 0.0 { 0.0 } else { -d * gap / self.b };
        let dc = -self.b.ln() * gap;
        if db.is_finite() && dc.is_finite() {
            Ok([1.0, db, dc])
        } else {
            Err(Error::EvaluationOverflow { x })
        }
    }
}

/// Box constraints and starting point for the three curve parameters,
/// stored in `(a, b, c)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub init: [f64; 3],
}

impl Default for ParamBox {
    fn default() -> Self {
        default_box()
    }
}

/// `0.5 <= a <= 102.5`, `1 <= b`, `0 <= c`, starting from `(10, 1.001, 100)`.
pub fn default_box() -> ParamBox {
    ParamBox::with_cap(DEFAULT_INFINITY_CAP)
}

impl ParamBox {
    /// The default bounds with the open upper limits on `b` and `c` replaced by `cap`.
    pub fn with_cap(cap: f64) -> Self {
        Self {
            lower: [0.5, 1.0, 0.0],
            upper: [102.5, cap, cap],
            init: [10.0, 1.001, 100.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            let (lo, hi, x0) = (self.lower[i], self.upper[i], self.init[i]);
            if lo.is_nan() || hi.is_nan() || !x0.is_finite() {
                return Err(Error::InvalidConfig(format!("parameter box component {i} is not a number")));
            }
            if !(lo <= x0 && x0 <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "parameter box component {i}: need {lo} <= {x0} <= {hi}"
                )));
            }
        }
        if self.lower[1] <= 0.0 {
            return Err(Error::InvalidConfig("lower bound on b must be positive".into()));
        }
        Ok(())
    }

    pub fn project(&self, v: [f64; 3]) -> [f64; 3] {
        let mut out = v;
        for i in 0..3 {
            out[i] = v[i].clamp(self.lower[i], self.upper[i]);
        }
        out
    }

    pub fn contains(&self, p: &CurveParams) -> bool {
        p.to_array()
            .iter()
            .enumerate()
            .all(|(i, &v)| self.lower[i] <= v && v <= self.upper[i])
    }

    pub fn init_params(&self) -> CurveParams {
        CurveParams::from_array(self.init)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evaluate_examples() {
        assert_eq!(CurveParams::new(32.0, 2.0, 5.0).evaluate(5.0).unwrap(), 31.0);
        for x in [0.0, 1.0, 7.5, 40.0] {
            assert_eq!(CurveParams::new(32.0, 1.0, 17.0).evaluate(x).unwrap(), 31.0);
        }
        let v = CurveParams::new(32.0, 2.0, 0.0).evaluate(20.0).unwrap();
        assert!((v - (32.0 - 2f64.powi(-20))).abs() < 1e-12);
        assert!((v - 31.999_999_046_325_684).abs() < 1e-12);
    }

    #[test]
    fn partials_examples() {
        let p = CurveParams::new(32.0, 2.0, 5.0).partials(5.0).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
        assert!((p[2] + 2f64.ln()).abs() < 1e-15);

        let p = CurveParams::new(10.0, 1.0, 3.0).partials(1.0).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let p = CurveParams::new(50.0, 1e12, 1e12);
        assert!(matches!(p.evaluate(1.0), Err(Error::EvaluationOverflow { .. })));
        assert!(matches!(p.partials(1.0), Err(Error::EvaluationOverflow { .. })));
        // far right of the shift the gap underflows harmlessly
        let p = CurveParams::new(50.0, 1e6, 0.0);
        assert_eq!(p.evaluate(1000.0).unwrap(), 50.0);
    }

    #[test]
    fn default_box_values() {
        let b = default_box();
        assert_eq!(b.lower, [0.5, 1.0, 0.0]);
        assert_eq!(b.init, [10.0, 1.001, 100.0]);
        assert_eq!(b.upper[0], 102.5);
        assert_eq!(b.upper[1], DEFAULT_INFINITY_CAP);
        assert_eq!(b.upper[2], DEFAULT_INFINITY_CAP);
        b.validate().unwrap();
    }

    #[test]
    fn gap_halves_per_unit_step_when_b_is_two() {
        let p = CurveParams::new(60.0, 2.0, 3.0);
        for i in 0..30 {
            let x = 1.0 + i as f64 * 0.5;
            let g0 = 60.0 - p.evaluate(x).unwrap();
            let g1 = 60.0 - p.evaluate(x + 1.0).unwrap();
            assert!((g1 - g0 / 2.0).abs() <= 1e-12 * g0.max(1.0));
        }
    }

    fn in_box() -> impl Strategy<Value = CurveParams> {
        (0.5f64..102.5, 1.01f64..4.0, 0.0f64..8.0).prop_map(|(a, b, c)| CurveParams::new(a, b, c))
    }

    proptest! {
        #[test]
        fn increasing_and_concave(p in in_box()) {
            let ys: Vec<f64> = (0..60).map(|i| p.evaluate(1.0 + i as f64 * 0.25).unwrap()).collect();
            for w in ys.windows(3) {
                // resolution-limited once the gap underflows relative to a
                let scale = 1e-12 * p.a.abs().max(1.0);
                prop_assert!(w[1] - w[0] > -scale);
                prop_assert!((w[2] - w[1]) - (w[1] - w[0]) < scale);
                if p.a - w[2] > 1e-6 {
                    prop_assert!(w[1] > w[0]);
                    prop_assert!((w[2] - w[1]) < (w[1] - w[0]));
                }
            }
            for &y in &ys {
                prop_assert!(y < p.a);
            }
        }

        #[test]
        fn larger_b_is_steeper(p in in_box(), extra in 0.01f64..3.0, x in 0.0f64..20.0) {
            let q = CurveParams::new(p.a, p.b + extra, p.c);
            let gap_p = p.a - p.evaluate(x).unwrap();
            let gap_q = q.a - q.evaluate(x).unwrap();
            let tol = 1e-12 * gap_p.max(gap_q).max(1.0);
            if x > p.c {
                prop_assert!(gap_q <= gap_p + tol);
            } else if x < p.c {
                prop_assert!(gap_q >= gap_p - tol);
            }
        }

        #[test]
        fn c_is_a_right_shift(p in in_box(), delta in 0.0f64..10.0, x in 0.0f64..30.0) {
            let shifted = CurveParams::new(p.a, p.b, p.c + delta);
            let lhs = shifted.evaluate(x + delta).unwrap();
            let rhs = p.evaluate(x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }
}
