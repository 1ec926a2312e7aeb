//! Limited-memory BFGS with a strong-Wolfe line search, and a projected
//! variant for box constraints.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Componentwise bounds; use infinities for free variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Exit when `‖∇f‖ <= grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub bounds: Option<Bounds>,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            bounds: None,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Validation(format!(
                "wolfe constants must satisfy 0 < c1 < c2 < 1 (c1={}, c2={})",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::Validation("optimizer memory must be >= 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::Validation("grad_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub status: ExitStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective value at every accepted iterate, starting with `x0`.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    memory: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * norm(&s) * norm(&y)) || sy <= 0.0 {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

struct Evaluator<F> {
    f: F,
    count: usize,
}

impl<F> Evaluator<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    /// Non-finite values and numerical failures become `+inf` so the line search backs off.
    fn trial(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count += 1;
        match (self.f)(x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => Ok((v, g)),
            Ok(_) => Ok((f64::INFINITY, Vec::new())),
            Err(e) if e.is_numerical() => Ok((f64::INFINITY, Vec::new())),
            Err(e) => Err(e),
        }
    }
}

/// Minimizer of the cubic interpolating `(a, fa, ga)` and `(b, fb, gb)`, safeguarded into the interval.
fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mid = 0.5 * (a + b);
    if !disc.is_finite() || disc < 0.0 || !fb.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

struct Point {
    alpha: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Strong Wolfe line search, zoom phase with cubic interpolation.
fn strong_wolfe<F>(
    eval: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let slope0 = dot(g0, dir);
    let at = |eval: &mut Evaluator<F>, alpha: f64| -> Result<Point> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = eval.trial(&xt)?;
        let slope = if f.is_finite() { dot(&g, dir) } else { f64::NAN };
        Ok(Point { alpha, f, slope, x: xt, g })
    };
    let armijo = |p: &Point| p.f.is_finite() && p.f <= f0 + cfg.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -cfg.c2 * slope0;

    let mut prev = Point { alpha: 0.0, f: f0, slope: slope0, x: x.to_vec(), g: g0.to_vec() };
    let mut alpha = alpha0;
    let mut lo_hi: Option<(Point, Point)> = None;
    for i in 0..30 {
        let cur = at(eval, alpha)?;
        if !armijo(&cur) || (i > 0 && cur.f >= prev.f) {
            lo_hi = Some((prev, cur));
            break;
        }
        if curvature(&cur) {
            debug_assert!(armijo(&cur));
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            lo_hi = Some((cur, prev));
            break;
        }
        alpha *= 2.0;
        prev = cur;
    }
    let Some((mut lo, mut hi)) = lo_hi else {
        return Ok(None);
    };
    for _ in 0..40 {
        let trial = if hi.f.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f, hi.slope)
        } else {
            lo.alpha + 0.1 * (hi.alpha - lo.alpha)
        };
        if (trial - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) + f64::MIN_POSITIVE {
            break;
        }
        let cur = at(eval, trial)?;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                debug_assert!(armijo(&cur));
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() < 1e-14 * lo.alpha.abs().max(hi.alpha.abs()) {
            break;
        }
    }
    // No strong-Wolfe point found; accept a strict decrease if one exists.
    if lo.alpha > 0.0 && lo.f < f0 {
        return Ok(Some(lo));
    }
    Ok(None)
}

/// Backtracking along the projected path `P(x + α d)` with a projected Armijo test.
fn projected_search<F>(
    eval: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    alpha0: f64,
    bounds: &Bounds,
    cfg: &LbfgsConfig,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut alpha = alpha0;
    for _ in 0..60 {
        let mut xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        bounds.project(&mut xt);
        let step: Vec<f64> = xt.iter().zip(x).map(|(a, b)| a - b).collect();
        let pred = dot(g0, &step);
        if pred < 0.0 {
            let (f, g) = eval.trial(&xt)?;
            if f.is_finite() && f <= f0 + cfg.c1 * pred {
                return Ok(Some(Point { alpha, f, slope: f64::NAN, x: xt, g }));
            }
        } else if step.iter().all(|&s| s == 0.0) {
            return Ok(None);
        }
        alpha *= 0.5;
    }
    Ok(None)
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let p = (x[i] - g[i]).clamp(bounds.lower[i], bounds.upper[i]) - x[i];
        acc += p * p;
    }
    acc.sqrt()
}

/// Minimizes `f` (value and gradient) from `x0`.
///
/// With `cfg.bounds` set, `x0` is projected first and every iterate stays in the box.
pub fn lbfgs_minimize<F>(f: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut eval = Evaluator { f, count: 0 };
    let mut x = x0.to_vec();
    if let Some(b) = &cfg.bounds {
        if b.lower.len() != x.len() || b.upper.len() != x.len() {
            return Err(Error::dims("bounds do not match the variable count"));
        }
        b.project(&mut x);
    }
    eval.count += 1;
    let (mut fx, mut g) = (eval.f)(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    if g.len() != x.len() {
        return Err(Error::dims("gradient length differs from the variable count"));
    }
    let mut hist = History { pairs: VecDeque::new(), memory: cfg.memory };
    let mut history = vec![fx];
    let gnorm = |x: &[f64], g: &[f64]| match &cfg.bounds {
        Some(b) => projected_gradient_norm(x, g, b),
        None => norm(g),
    };
    let mut iterations = 0;
    let status = loop {
        if gnorm(&x, &g) <= cfg.grad_tol * fx.abs().max(1.0) {
            break ExitStatus::Converged;
        }
        if iterations >= cfg.max_iters {
            break ExitStatus::MaxIterations;
        }

        let point = if let Some(bounds) = &cfg.bounds {
            let active: Vec<bool> = (0..x.len())
                .map(|i| (x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0))
                .collect();
            let gfree: Vec<f64> = g.iter().zip(&active).map(|(v, &a)| if a { 0.0 } else { *v }).collect();
            let mut dir = hist.direction(&gfree);
            dir.iter_mut().zip(&active).for_each(|(v, &a)| {
                if a {
                    *v = 0.0
                }
            });
            if !(dot(&dir, &g) < 0.0) {
                hist.pairs.clear();
                dir = gfree.iter().map(|v| -v).collect();
            }
            let alpha0 = if hist.pairs.is_empty() { 1.0f64.min(1.0 / norm(&gfree)) } else { 1.0 };
            projected_search(&mut eval, &x, fx, &g, &dir, alpha0, bounds, cfg)?
        } else {
            let mut dir = hist.direction(&g);
            if !(dot(&dir, &g) < 0.0) {
                hist.pairs.clear();
                dir = g.iter().map(|v| -v).collect();
            }
            let alpha0 = if hist.pairs.is_empty() { 1.0f64.min(1.0 / norm(&g)) } else { 1.0 };
            let mut found = strong_wolfe(&mut eval, &x, fx, &g, &dir, alpha0, cfg)?;
            if found.is_none() && !hist.pairs.is_empty() {
                // retry once along steepest descent with a fresh memory
                hist.pairs.clear();
                let sd: Vec<f64> = g.iter().map(|v| -v).collect();
                found = strong_wolfe(&mut eval, &x, fx, &g, &sd, 1.0f64.min(1.0 / norm(&g)), cfg)?;
            }
            found
        };

        let Some(p) = point else {
            break ExitStatus::LineSearchFailed;
        };
        debug_assert!(p.f <= fx);
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        hist.push(s, y);
        x = p.x;
        fx = p.f;
        g = p.g;
        history.push(fx);
        iterations += 1;
    };
    let grad_norm = gnorm(&x, &g);
    Ok(Minimum {
        x,
        f: fx,
        grad: g,
        grad_norm,
        status,
        iterations,
        evaluations: eval.count,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn quadratic_converges_quickly() {
        let target = [1.0, -2.0, 3.5, 0.25];
        let f = |x: &[f64]| {
            let r: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            Ok((dot(&r, &r), r.iter().map(|v| 2.0 * v).collect()))
        };
        let m = lbfgs_minimize(f, &[0.0; 4], &LbfgsConfig::default()).unwrap();
        assert_eq!(m.status, ExitStatus::Converged);
        assert!(m.iterations <= 5, "{} iterations", m.iterations);
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock_benchmark() {
        let m = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default()).unwrap();
        assert!(m.iterations <= 100, "{} iterations", m.iterations);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn history_is_monotone_and_runs_are_deterministic() {
        let a = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default()).unwrap();
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        let b = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn projected_active_constraint() {
        let cfg = LbfgsConfig {
            bounds: Some(Bounds { lower: vec![1.0], upper: vec![2.0] }),
            ..LbfgsConfig::default()
        };
        let m = lbfgs_minimize(|x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]])), &[1.7], &cfg).unwrap();
        assert_eq!(m.status, ExitStatus::Converged);
        assert_eq!(m.x[0], 1.0);
    }

    #[test]
    fn projected_rosenbrock_inside_box() {
        let cfg = LbfgsConfig {
            bounds: Some(Bounds { lower: vec![-2.0, -2.0], upper: vec![0.5, 2.0] }),
            max_iters: 1000,
            ..LbfgsConfig::default()
        };
        let m = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(m.x[0] <= 0.5 && m.x[0] >= -2.0);
        // constrained minimum lies on x = 0.5, y = 0.25
        assert!((m.x[0] - 0.5).abs() < 1e-6 && (m.x[1] - 0.25).abs() < 1e-5, "{:?}", m.x);
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = lbfgs_minimize(|_: &[f64]| Ok((f64::NAN, vec![0.0])), &[0.0], &LbfgsConfig::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn blow_up_regions_are_backed_off() {
        // infinite outside |x| < 3; minimum at 2.5
        let f = |x: &[f64]| {
            if x[0].abs() >= 3.0 {
                Err(Error::NonFinite("test".into()))
            } else {
                Ok(((x[0] - 2.5).powi(2), vec![2.0 * (x[0] - 2.5)]))
            }
        };
        let m = lbfgs_minimize(f, &[-2.9], &LbfgsConfig::default()).unwrap();
        assert!((m.x[0] - 2.5).abs() < 1e-7);
    }

    #[test]
    fn invalid_wolfe_constants() {
        let cfg = LbfgsConfig { c1: 0.9, c2: 0.1, ..LbfgsConfig::default() };
        assert!(lbfgs_minimize(rosenbrock, &[0.0, 0.0], &cfg).is_err());
    }
}
