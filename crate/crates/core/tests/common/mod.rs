#![allow(dead_code)]

pub mod oracle;

use perfest_core::CurveParams;
use rand::Rng;

/// A visibly learning curve: starts at or above 0 and rises at least two
/// points over the observed horizon.
pub fn learning_curve(rng: &mut impl Rng) -> CurveParams {
    loop {
        let p = CurveParams::new(
            rng.random_range(10.0..100.0),
            rng.random_range(1.1..3.0),
            rng.random_range(1.0..10.0),
        );
        let rise = p.b.powf(p.c - 1.0);
        if rise >= 2.0 && p.evaluate(1.0).unwrap() >= 0.0 {
            return p;
        }
    }
}

pub fn sample(p: CurveParams, n: usize) -> Vec<(f64, f64)> {
    (1..=n).map(|x| (x as f64, p.evaluate(x as f64).unwrap())).collect()
}
