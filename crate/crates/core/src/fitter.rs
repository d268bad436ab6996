//! Bounded nonlinear least squares for the saturating curve family.
//!
//! The asymptote `a` enters the model linearly, so for any shape its best value
//! is the clamped mean of `y + b^(c - x)`. The solver eliminates it that way and
//! runs a damped Gauss-Newton (Levenberg-Marquardt) iteration with Marquardt
//! scaling over the two shape parameters, written as `u = c ln b` and
//! `beta = ln b` so the gap term is the plain exponential `exp(u - beta x)`.
//! In the raw `(a, b, c)` coordinates `a` and `b` are nearly collinear when `b`
//! is close to 1, and from the standard start at `c = 100` the iteration
//! collapses `c` onto its bound and stalls in a flat-line basin.
//!
//! Bounds are handled by projecting every trial point back into the box and by
//! freezing parameters that sit on a bound with the gradient pointing outward.
//! When five damped steps in a row are rejected the solver falls back to a
//! projected gradient line search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curve_model::{CurveParams, ParamBox};
use crate::error::{Error, Result};

const MAX_CONSECUTIVE_REJECTS: usize = 5;
const MULTI_START_COUNT: usize = 5;
const MULTI_START_SEED: u64 = 0x05ee_df17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub c_min: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    /// Also start from four deterministic jitters of the box's initial point
    /// and keep the best result.
    pub multi_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            c_min: 3,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-8,
            cost_tolerance: 1e-8,
            multi_start: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_min < 3 {
            return Err(Error::InvalidConfig(format!("c_min must be at least 3, got {}", self.c_min)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        for (name, v) in [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("cost_tolerance", self.cost_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    MaxIterations,
    Degenerate,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Ok => "ok",
            FitStatus::MaxIterations => "max_iterations",
            FitStatus::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: CurveParams,
    pub converged: bool,
    pub iterations: usize,
    /// Sum of squared residuals at `params`.
    pub final_cost: f64,
    pub status: FitStatus,
}

/// Fits `points` (rescaled epoch, accuracy) with the default initial point of `bx`.
pub fn fit(points: &[(f64, f64)], bx: &ParamBox, cfg: &FitConfig) -> Result<FitResult> {
    fit_observed(points, bx, cfg, |_| {})
}

/// Like [`fit`], calling `observe` with every accepted iterate.
pub fn fit_observed(
    points: &[(f64, f64)],
    bx: &ParamBox,
    cfg: &FitConfig,
    mut observe: impl FnMut(&CurveParams),
) -> Result<FitResult> {
    cfg.validate()?;
    bx.validate()?;
    check_points(points, cfg.c_min)?;

    let mut best = Solver::new(points, bx, cfg).run(bx.init, &mut observe);
    if cfg.multi_start {
        let mut rng = ChaCha8Rng::seed_from_u64(MULTI_START_SEED);
        for _ in 1..MULTI_START_COUNT {
            let start = bx.project([
                bx.init[0] * rng.random_range(0.5..8.0),
                1.0 + (bx.init[1] - 1.0).max(1e-3) * rng.random_range(1.0..500.0),
                bx.init[2] * rng.random_range(0.0..0.2),
            ]);
            let candidate = Solver::new(points, bx, cfg).run(start, &mut observe);
            if better(&candidate, &best) {
                best = candidate;
            }
        }
    }
    Ok(best)
}

fn better(candidate: &FitResult, incumbent: &FitResult) -> bool {
    let usable = |r: &FitResult| r.status != FitStatus::Degenerate;
    match (usable(candidate), usable(incumbent)) {
        (true, false) => true,
        (false, true) => false,
        _ => candidate.final_cost < incumbent.final_cost,
    }
}

fn check_points(points: &[(f64, f64)], c_min: usize) -> Result<()> {
    if points.len() < c_min {
        return Err(Error::TooFewPoints { required: c_min, got: points.len() });
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFiniteInput(format!("point ({x}, {y})")));
    }
    if points[0].0 != 1.0 {
        return Err(Error::InvalidInput(format!("first x must be 1, got {}", points[0].0)));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidInput("x values must be strictly increasing".into()));
    }
    Ok(())
}

/// The reduced problem over `q = (u, beta)` with `u = c ln b` and `beta = ln b`,
/// so the gap term is `exp(u - beta x)`. The box on `b` becomes an interval on
/// `beta`; the box on `c` becomes the wedge `c_lo beta <= u <= c_hi beta`.
struct Solver<'a> {
    points: &'a [(f64, f64)],
    bx: &'a ParamBox,
    cfg: &'a FitConfig,
    beta_range: [f64; 2],
    mean_y: f64,
}

/// Residuals, Jacobian products and cost at one point of the reduced problem.
struct Linearization {
    a: f64,
    cost: f64,
    /// `J^T r`
    grad: [f64; 2],
    /// `J^T J`
    normal: [[f64; 2]; 2],
}

const MAX_EXPONENT: f64 = 700.0;

impl<'a> Solver<'a> {
    fn new(points: &'a [(f64, f64)], bx: &'a ParamBox, cfg: &'a FitConfig) -> Self {
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
        Self {
            points,
            bx,
            cfg,
            beta_range: [bx.lower[1].ln(), bx.upper[1].ln()],
            mean_y,
        }
    }

    fn to_reduced(&self, p: [f64; 3]) -> [f64; 2] {
        let beta = p[1].ln();
        [p[2] * beta, beta]
    }

    /// Curve parameters for the reduced point. At `beta = 0` the shift has no
    /// effect on the curve and is reported as the box's lower bound.
    fn to_params(&self, a: f64, q: [f64; 2]) -> CurveParams {
        let b = q[1].exp().clamp(self.bx.lower[1], self.bx.upper[1]);
        let c = if q[1] == 0.0 { self.bx.lower[2] } else { q[0] / q[1] };
        CurveParams::new(a, b, c.clamp(self.bx.lower[2], self.bx.upper[2]))
    }

    fn u_range(&self, beta: f64) -> [f64; 2] {
        let lo = self.bx.lower[2] * beta;
        let hi = self.bx.upper[2] * beta;
        [lo.min(hi), lo.max(hi)]
    }

    fn project(&self, q: [f64; 2]) -> [f64; 2] {
        let beta = q[1].clamp(self.beta_range[0], self.beta_range[1]);
        let [lo, hi] = self.u_range(beta);
        [q[0].clamp(lo, hi), beta]
    }

    /// Gap terms `exp(u - beta x)` at every point, or `None` on overflow.
    fn gaps(&self, q: [f64; 2]) -> Option<Vec<f64>> {
        self.points
            .iter()
            .map(|&(x, _)| {
                let e = q[0] - q[1] * x;
                (e <= MAX_EXPONENT).then(|| e.max(-MAX_EXPONENT).exp())
            })
            .collect()
    }

    /// Optimal in-box asymptote for the given gaps, and whether it was clamped.
    fn best_a(&self, gaps: &[f64]) -> (f64, bool) {
        let raw = self.mean_y + gaps.iter().sum::<f64>() / gaps.len() as f64;
        let a = raw.clamp(self.bx.lower[0], self.bx.upper[0]);
        (a, a != raw)
    }

    fn cost(&self, q: [f64; 2]) -> Option<f64> {
        let gaps = self.gaps(q)?;
        let (a, _) = self.best_a(&gaps);
        let cost: f64 = self.points.iter().zip(&gaps).map(|(&(_, y), g)| (a - g - y).powi(2)).sum();
        cost.is_finite().then_some(cost)
    }

    fn linearize(&self, q: [f64; 2]) -> Option<Linearization> {
        let gaps = self.gaps(q)?;
        let n = self.points.len() as f64;
        let (a, clamped) = self.best_a(&gaps);
        // d(gap)/du = gap, d(gap)/dbeta = -x gap
        let dgap = |x: f64, g: f64| [g, -x * g];
        let mut mean_dg = [0.0; 2];
        if !clamped {
            for (&(x, _), &g) in self.points.iter().zip(&gaps) {
                let d = dgap(x, g);
                mean_dg[0] += d[0] / n;
                mean_dg[1] += d[1] / n;
            }
        }
        let mut lin = Linearization { a, cost: 0.0, grad: [0.0; 2], normal: [[0.0; 2]; 2] };
        for (&(x, y), &g) in self.points.iter().zip(&gaps) {
            let r = a - g - y;
            let d = dgap(x, g);
            // residual Jacobian with the profiled asymptote differentiated through
            let j = [mean_dg[0] - d[0], mean_dg[1] - d[1]];
            lin.cost += r * r;
            for i in 0..2 {
                lin.grad[i] += j[i] * r;
                for k in 0..2 {
                    lin.normal[i][k] += j[i] * j[k];
                }
            }
        }
        let finite = lin.cost.is_finite()
            && lin.grad.iter().all(|g| g.is_finite())
            && lin.normal.iter().flatten().all(|v| v.is_finite());
        finite.then_some(lin)
    }

    /// Parameters free to move: not pinned to a bound by an outward gradient.
    fn free_set(&self, q: &[f64; 2], grad: &[f64; 2]) -> [bool; 2] {
        let [u_lo, u_hi] = self.u_range(q[1]);
        let lower = [u_lo, self.beta_range[0]];
        let upper = [u_hi, self.beta_range[1]];
        let mut free = [true; 2];
        for i in 0..2 {
            let at_lower = q[i] <= lower[i] && grad[i] > 0.0;
            let at_upper = q[i] >= upper[i] && grad[i] < 0.0;
            free[i] = !(at_lower || at_upper);
        }
        free
    }

    /// Largest cosine between the residual vector and a free Jacobian column.
    fn gradient_measure(&self, lin: &Linearization, free: &[bool; 2]) -> f64 {
        let rnorm = lin.cost.sqrt();
        if rnorm == 0.0 {
            return 0.0;
        }
        (0..2)
            .filter(|&i| free[i] && lin.normal[i][i] > 0.0)
            .map(|i| lin.grad[i].abs() / (rnorm * lin.normal[i][i].sqrt()))
            .fold(0.0, f64::max)
    }

    fn finish(&self, a: f64, q: [f64; 2], iterations: usize, status: FitStatus) -> FitResult {
        let params = self.to_params(a, q);
        let final_cost = plain_cost(self.points, &params);
        FitResult {
            params,
            converged: status == FitStatus::Ok,
            iterations,
            final_cost,
            status,
        }
    }

    fn run(&self, start: [f64; 3], observe: &mut impl FnMut(&CurveParams)) -> FitResult {
        let start = self.bx.project(start);
        let mut q = self.project(self.to_reduced(start));
        let Some(mut lin) = self.linearize(q) else {
            return self.finish(start[0], q, 0, FitStatus::Degenerate);
        };
        observe(&self.to_params(lin.a, q));

        let y_scale: f64 = self.points.iter().map(|(_, y)| y * y).sum::<f64>().max(1.0);
        let exact = |cost: f64| cost <= (f64::EPSILON * f64::EPSILON) * y_scale;

        let mut lambda = 1e-3;
        let mut rejects = 0usize;
        let mut iterations = 0usize;

        while iterations < self.cfg.max_iterations {
            iterations += 1;
            if exact(lin.cost) {
                return self.finish(lin.a, q, iterations, FitStatus::Ok);
            }
            let free = self.free_set(&q, &lin.grad);
            if self.gradient_measure(&lin, &free) <= self.cfg.gradient_tolerance {
                return self.finish(lin.a, q, iterations, FitStatus::Ok);
            }

            let trial = if rejects >= MAX_CONSECUTIVE_REJECTS {
                match self.gradient_projection_step(q, &lin, &free) {
                    Some(t) => Some(t),
                    None => {
                        // No descent along the projected gradient either. At a
                        // minimum to working precision this is convergence;
                        // otherwise the solver is stuck.
                        let status = if self.predicted_gain_negligible(&lin, &free) {
                            FitStatus::Ok
                        } else {
                            FitStatus::Degenerate
                        };
                        return self.finish(lin.a, q, iterations, status);
                    }
                }
            } else {
                self.damped_step(q, &lin, &free, lambda)
            };

            let accepted = trial.and_then(|(q_new, predicted)| match self.cost(q_new) {
                Some(c) if c < lin.cost => self.linearize(q_new).map(|l| (q_new, predicted, l)),
                _ => None,
            });
            let Some((q_new, predicted, lin_new)) = accepted else {
                lambda *= 4.0;
                rejects += 1;
                continue;
            };

            let actual = lin.cost - lin_new.cost;
            let rho = if predicted > 0.0 { actual / predicted } else { 1.0 };
            if rho > 0.75 {
                lambda = (lambda / 3.0).max(1e-12);
            } else if rho < 0.25 {
                lambda *= 2.0;
            }
            rejects = 0;

            let tol = self.cfg.step_tolerance;
            let step_small = (0..2).all(|i| (q_new[i] - q[i]).abs() <= tol * (q[i].abs() + tol))
                && (lin_new.a - lin.a).abs() <= tol * (lin.a.abs() + tol);
            let cost_small = actual <= self.cfg.cost_tolerance * lin.cost;

            q = q_new;
            lin = lin_new;
            observe(&self.to_params(lin.a, q));

            if step_small || cost_small || exact(lin.cost) {
                return self.finish(lin.a, q, iterations, FitStatus::Ok);
            }
        }
        self.finish(lin.a, q, iterations, FitStatus::MaxIterations)
    }

    /// Solves `(J^T J + lambda D) delta = -J^T r` over the free parameters and
    /// projects the step back into the feasible region. Returns the trial
    /// point and the model's predicted cost reduction.
    fn damped_step(&self, q: [f64; 2], lin: &Linearization, free: &[bool; 2], lambda: f64) -> Option<([f64; 2], f64)> {
        let delta = self.regularized_solve(lin, free, lambda)?;
        let q_new = self.project([q[0] + delta[0], q[1] + delta[1]]);
        (q_new != q).then(|| (q_new, predicted_reduction(lin, &q, &q_new)))
    }

    fn regularized_solve(&self, lin: &Linearization, free: &[bool; 2], lambda: f64) -> Option<[f64; 2]> {
        let max_diag = lin.normal[0][0].max(lin.normal[1][1]);
        let floor = (max_diag * 1e-12).max(1e-300);
        let mut m = [[0.0; 2]; 2];
        let mut rhs = [0.0; 2];
        for i in 0..2 {
            if !free[i] {
                m[i][i] = 1.0;
                continue;
            }
            rhs[i] = -lin.grad[i];
            for k in 0..2 {
                if free[k] {
                    m[i][k] = lin.normal[i][k];
                }
            }
            m[i][i] += lambda * lin.normal[i][i].max(floor);
        }
        solve_spd(m, rhs)
    }

    /// Backtracking line search along the diagonally scaled, projected
    /// steepest-descent direction.
    fn gradient_projection_step(&self, q: [f64; 2], lin: &Linearization, free: &[bool; 2]) -> Option<([f64; 2], f64)> {
        let mut dir = [0.0; 2];
        for i in 0..2 {
            if free[i] && lin.normal[i][i] > 0.0 {
                dir[i] = -lin.grad[i] / lin.normal[i][i];
            }
        }
        if dir == [0.0; 2] {
            return None;
        }
        let mut alpha = 1.0;
        for _ in 0..60 {
            let q_new = self.project([q[0] + alpha * dir[0], q[1] + alpha * dir[1]]);
            if q_new != q {
                if let Some(c) = self.cost(q_new) {
                    // sufficient decrease along the projected path
                    let moved: f64 = (0..2).map(|i| (q_new[i] - q[i]) * lin.grad[i]).sum();
                    if c < lin.cost && lin.cost - c >= -2e-4 * moved.min(0.0) {
                        return Some((q_new, predicted_reduction(lin, &q, &q_new)));
                    }
                }
            }
            alpha *= 0.5;
        }
        None
    }

    /// Whether a nearly undamped Gauss-Newton step could still reduce the cost
    /// by more than the cost tolerance.
    fn predicted_gain_negligible(&self, lin: &Linearization, free: &[bool; 2]) -> bool {
        let Some(d) = self.regularized_solve(lin, free, 1e-10) else { return true };
        let gain = -(d[0] * lin.grad[0] + d[1] * lin.grad[1]);
        gain <= self.cfg.cost_tolerance * lin.cost
    }
}

fn plain_cost(points: &[(f64, f64)], params: &CurveParams) -> f64 {
    points
        .iter()
        .map(|&(x, y)| params.evaluate(x).map(|v| (v - y).powi(2)).unwrap_or(f64::INFINITY))
        .sum()
}

/// Reduction of the Gauss-Newton model `|r + J d|^2` for the step `q -> q_new`.
fn predicted_reduction(lin: &Linearization, q: &[f64; 2], q_new: &[f64; 2]) -> f64 {
    let d = [q_new[0] - q[0], q_new[1] - q[1]];
    let mut quad = 0.0;
    let mut lin_term = 0.0;
    for i in 0..2 {
        lin_term += d[i] * lin.grad[i];
        for k in 0..2 {
            quad += d[i] * lin.normal[i][k] * d[k];
        }
    }
    -(2.0 * lin_term + quad)
}

/// Cholesky solve of a small symmetric positive definite system.
fn solve_spd<const N: usize>(m: [[f64; N]; N], b: [f64; N]) -> Option<[f64; N]> {
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let s = (0..j).fold(m[i][j], |s, k| s - l[i][k] * l[j][k]);
            if i == j {
                if s.is_nan() || s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; N];
    for i in 0..N {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; N];
    for i in (0..N).rev() {
        let mut s = y[i];
        for k in i + 1..N {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
