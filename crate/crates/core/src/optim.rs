//! Dense BFGS minimiser with a strong-Wolfe line search, plus a
//! finite-difference Hessian built from an analytic gradient.

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 40;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the gradient's max-norm drops below this.
    pub grad_tol: f64,
    /// Relative objective increase tolerated by the approximate Wolfe test;
    /// zero keeps every step strictly descending.
    pub rounding: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-6,
            rounding: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.gradient)
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point {
    alpha: f64,
    x: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    slope: f64,
}

fn probe<F>(f: &mut F, x0: &[f64], dir: &[f64], alpha: f64) -> Point
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let x: Vec<f64> = x0.iter().zip(dir).map(|(x, d)| x + alpha * d).collect();
    let (value, gradient) = f(&x);
    let slope = if value.is_finite() && gradient.iter().all(|g| g.is_finite()) {
        dot(&gradient, dir)
    } else {
        f64::NAN
    };
    Point {
        alpha,
        x,
        value: if slope.is_nan() { f64::INFINITY } else { value },
        gradient,
        slope,
    }
}

fn interpolate(lo: &Point, hi: &Point) -> f64 {
    // cubic through both endpoints, safeguarded to the inner 80% of the bracket
    let (a, b) = (lo.alpha, hi.alpha);
    let (lo_edge, hi_edge) = (a.min(b), a.max(b));
    let width = hi_edge - lo_edge;
    let fallback = 0.5 * (a + b);
    if !hi.value.is_finite() || !hi.slope.is_finite() {
        return fallback;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return fallback;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    if t.is_finite() && t > lo_edge + 0.1 * width && t < hi_edge - 0.1 * width {
        t
    } else {
        fallback
    }
}

fn line_search<F>(
    f: &mut F,
    x0: &[f64],
    f0: f64,
    d0: f64,
    dir: &[f64],
    alpha0: f64,
    rounding: f64,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let armijo = |p: &Point| p.value <= f0 + C1 * p.alpha * d0;
    // Hager-Zhang approximate Wolfe: once the decrease is below the objective's
    // rounding noise, judge the step by its directional derivative instead.
    let approximate = |p: &Point| {
        rounding > 0.0
            && p.value <= f0 + rounding * f0.abs()
            && p.slope >= C2 * d0
            && p.slope <= (2.0 * C1 - 1.0) * d0
    };
    let mut best: Option<Point> = None;
    let keep_best = |p: &Point, best: &mut Option<Point>| {
        if armijo(p) && best.as_ref().is_none_or(|b| p.value < b.value) {
            *best = Some(Point {
                alpha: p.alpha,
                x: p.x.clone(),
                value: p.value,
                gradient: p.gradient.clone(),
                slope: p.slope,
            });
        }
    };

    let mut prev = Point {
        alpha: 0.0,
        x: x0.to_vec(),
        value: f0,
        gradient: Vec::new(),
        slope: d0,
    };
    let mut alpha = alpha0;
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        let p = probe(f, x0, dir, alpha);
        evals += 1;
        keep_best(&p, &mut best);
        if !armijo(&p) && approximate(&p) {
            return Some(p);
        }
        if !armijo(&p) || (prev.alpha > 0.0 && p.value >= prev.value) {
            lo = prev;
            hi = p;
            break;
        }
        if p.slope.abs() <= -C2 * d0 {
            return Some(p);
        }
        if p.slope >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        if evals >= MAX_LINE_EVALS {
            return best;
        }
        prev = p;
        alpha *= 2.0;
    }

    while evals < MAX_LINE_EVALS {
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let a = interpolate(&lo, &hi);
        let p = probe(f, x0, dir, a);
        evals += 1;
        keep_best(&p, &mut best);
        if !armijo(&p) && approximate(&p) {
            return Some(p);
        }
        if !armijo(&p) || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope.abs() <= -C2 * d0 {
                return Some(p);
            }
            if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    best
}

/// Minimises `f` (returning value and gradient) from `x0` with BFGS.
///
/// With `rounding` at zero the returned point never has a larger objective
/// than `x0`; otherwise it may exceed it by at most that relative amount.
pub fn minimize<F>(mut f: F, x0: &[f64], options: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut value, mut gradient) = f(&x);
    if n == 0 {
        return Minimum {
            x,
            value,
            gradient,
            iterations: 0,
            converged: true,
        };
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut first = true;
    let mut iterations = 0;

    while iterations < options.max_iter {
        if inf_norm(&gradient) < options.grad_tol {
            return Minimum {
                x,
                value,
                gradient,
                iterations,
                converged: true,
            };
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -dot(&h[i * n..(i + 1) * n], &gradient))
            .collect();
        let mut d0 = dot(&dir, &gradient);
        if d0 >= 0.0 || !d0.is_finite() {
            reset(&mut h, n);
            first = true;
            dir = gradient.iter().map(|g| -g).collect();
            d0 = dot(&dir, &gradient);
        }
        let alpha0 = if first {
            (1.0 / inf_norm(&dir)).min(1.0)
        } else {
            1.0
        };
        iterations += 1;
        let Some(step) = line_search(&mut f, &x, value, d0, &dir, alpha0, options.rounding) else {
            if first {
                break;
            }
            reset(&mut h, n);
            first = true;
            continue;
        };
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step
            .gradient
            .iter()
            .zip(&gradient)
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        let improvement = value - step.value;
        let shrunk = inf_norm(&step.gradient) < inf_norm(&gradient);
        x = step.x;
        value = step.value;
        gradient = step.gradient;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                for v in h.iter_mut() {
                    *v *= scale;
                }
                first = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        if improvement <= 0.0 && !shrunk && inf_norm(&gradient) >= options.grad_tol {
            // stalled at numerical precision
            break;
        }
    }
    let converged = inf_norm(&gradient) < options.grad_tol;
    Minimum {
        x,
        value,
        gradient,
        iterations,
        converged,
    }
}

fn reset(h: &mut [f64], n: usize) {
    h.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Symmetrised Hessian from central differences of an analytic gradient.
///
/// Coordinate `i` is stepped by `rel_step * max(1, |x_i|)`.
pub fn numerical_hessian<G>(mut gradient: G, x: &[f64], rel_step: f64) -> Vec<Vec<f64>>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut point = x.to_vec();
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        point[i] = x[i] + h;
        let up = gradient(&point);
        point[i] = x[i] - h;
        let down = gradient(&point);
        point[i] = x[i];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (cols[i][j] + cols[j][i])).collect())
        .collect()
}
