//! Full-batch BFGS with a strong-Wolfe line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A smooth function to minimize. `eval` writes the gradient into `grad`
/// and returns the value.
pub trait Objective {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

impl BfgsOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.grad_tol > 0.0
            && 0.0 < self.c1
            && self.c1 < self.c2
            && self.c2 < 1.0
            && self.max_line_search > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad optimizer options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    IterationCap,
    /// Neither the Wolfe search nor the steepest-descent fallback decreased the cost.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Cost at the start point and after every accepted step.
    pub costs: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Iterations where the Wolfe search failed and a steepest-descent step was taken.
    pub fallbacks: Vec<usize>,
    pub iterations: usize,
    pub stop: StopReason,
}

impl Trace {
    pub fn final_cost(&self) -> f64 {
        *self.costs.last().expect("trace holds the start cost")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Probe<'a, O: Objective> {
    obj: &'a O,
    x: &'a [f64],
    p: &'a [f64],
    xt: Vec<f64>,
    gt: Vec<f64>,
}

impl<O: Objective> Probe<'_, O> {
    /// φ(α) and φ'(α); the trial point and gradient stay in `xt`, `gt`.
    fn at(&mut self, alpha: f64) -> (f64, f64) {
        for ((t, x), p) in self.xt.iter_mut().zip(self.x).zip(self.p) {
            *t = x + alpha * p;
        }
        let f = self.obj.eval(&self.xt, &mut self.gt);
        (f, dot(&self.gt, self.p))
    }
}

/// Minimizer of the cubic through (a, fa, da) and (b, fb, db), or bisection
/// when it is not well defined or falls too close to the ends.
fn interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let mid = 0.5 * (a + b);
    if !disc.is_finite() || disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let guard = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + guard && t < hi - guard {
        t
    } else {
        mid
    }
}

/// Strong-Wolfe line search; returns the accepted step and its cost.
fn wolfe_search<O: Objective>(probe: &mut Probe<'_, O>, f0: f64, d0: f64, alpha0: f64, o: &BfgsOptions) -> Option<(f64, f64)> {
    let mut prev = (0.0, f0, d0);
    let mut alpha = alpha0;
    for i in 0..o.max_line_search {
        let (f, d) = probe.at(alpha);
        if !f.is_finite() || f > f0 + o.c1 * alpha * d0 || (i > 0 && f >= prev.1) {
            return zoom(probe, f0, d0, prev, (alpha, f, d), o);
        }
        if d.abs() <= -o.c2 * d0 {
            return Some((alpha, f));
        }
        if d >= 0.0 {
            return zoom(probe, f0, d0, (alpha, f, d), prev, o);
        }
        prev = (alpha, f, d);
        alpha *= 2.0;
    }
    None
}

fn zoom<O: Objective>(
    probe: &mut Probe<'_, O>,
    f0: f64,
    d0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    o: &BfgsOptions,
) -> Option<(f64, f64)> {
    for _ in 0..o.max_line_search {
        let alpha = if hi.1.is_finite() && hi.2.is_finite() {
            interpolate(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let (f, d) = probe.at(alpha);
        if !f.is_finite() || f > f0 + o.c1 * alpha * d0 || f >= lo.1 {
            hi = (alpha, f, d);
        } else {
            if d.abs() <= -o.c2 * d0 {
                return Some((alpha, f));
            }
            if d * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (alpha, f, d);
        }
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
    }
    None
}

/// Armijo backtracking along `p`.
fn backtrack<O: Objective>(probe: &mut Probe<'_, O>, f0: f64, d0: f64, alpha0: f64, o: &BfgsOptions) -> Option<(f64, f64)> {
    let mut alpha = alpha0;
    for _ in 0..4 * o.max_line_search {
        let (f, _) = probe.at(alpha);
        if f.is_finite() && f <= f0 + o.c1 * alpha * d0 && f < f0 {
            return Some((alpha, f));
        }
        alpha *= 0.5;
    }
    None
}

/// Minimizes `obj` from `x0`.
pub fn minimize<O: Objective>(obj: &O, x0: &[f64], opts: &BfgsOptions) -> Result<(Vec<f64>, Trace)> {
    opts.validate()?;
    let n = obj.dim();
    if x0.len() != n {
        return Err(Error::InvalidArgument(format!("start point has {} entries, objective {n}", x0.len())));
    }
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!("non-finite cost {f} at the start point")));
    }
    let mut trace = Trace {
        costs: vec![f],
        grad_norms: vec![norm(&g)],
        fallbacks: Vec::new(),
        iterations: 0,
        stop: StopReason::IterationCap,
    };
    // inverse Hessian, row-major; scaled after the first step
    let mut hinv = vec![0.0; n * n];
    let reset = |h: &mut [f64], scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut hinv, 1.0);
    let mut first = true;
    let mut p = vec![0.0; n];
    let mut hy = vec![0.0; n];

    for k in 0..opts.max_iter {
        let gnorm = norm(&g);
        if gnorm < opts.grad_tol {
            trace.stop = StopReason::GradientTolerance;
            break;
        }
        for i in 0..n {
            p[i] = -dot(&hinv[i * n..(i + 1) * n], &g);
        }
        let mut d0 = dot(&p, &g);
        if !(d0 < 0.0) {
            reset(&mut hinv, 1.0);
            first = true;
            p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
            d0 = -gnorm * gnorm;
        }
        let alpha0 = if first { 1.0 / gnorm.max(1.0) } else { 1.0 };

        let accepted = {
            let mut probe = Probe {
                obj,
                x: &x,
                p: &p,
                xt: vec![0.0; n],
                gt: vec![0.0; n],
            };
            match wolfe_search(&mut probe, f, d0, alpha0, opts) {
                Some((alpha, fa)) if fa < f => Some((alpha, fa, probe.xt, probe.gt)),
                _ => {
                    trace.fallbacks.push(k);
                    let sd: Vec<f64> = g.iter().map(|v| -v).collect();
                    let mut probe = Probe {
                        obj,
                        x: &x,
                        p: &sd,
                        xt: vec![0.0; n],
                        gt: vec![0.0; n],
                    };
                    backtrack(&mut probe, f, -gnorm * gnorm, 1.0 / gnorm.max(1.0), opts).map(|(alpha, fa)| {
                        p.copy_from_slice(&sd);
                        (alpha, fa, probe.xt, probe.gt)
                    })
                }
            }
        };
        let Some((alpha, fnew, xnew, gnew)) = accepted else {
            trace.stop = StopReason::Stalled;
            break;
        };
        if gnew.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient at iteration {k}")));
        }

        let s: Vec<f64> = p.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if first {
                reset(&mut hinv, sy / dot(&y, &y));
                first = false;
            }
            // H ← H − ρ(s·(Hy)ᵀ + (Hy)·sᵀ) + (ρ²·yᵀHy + ρ)·s·sᵀ
            let rho = 1.0 / sy;
            for i in 0..n {
                hy[i] = dot(&hinv[i * n..(i + 1) * n], &y);
            }
            let yhy = dot(&y, &hy);
            let c = rho * rho * yhy + rho;
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += c * s[i] * s[j] - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }
        x = xnew;
        g = gnew;
        f = fnew;
        trace.costs.push(f);
        trace.grad_norms.push(norm(&g));
        trace.iterations = k + 1;
    }
    if trace.stop == StopReason::IterationCap && norm(&g) < opts.grad_tol {
        trace.stop = StopReason::GradientTolerance;
    }
    Ok((x, trace))
}

/// `½ (x − c)ᵀ A (x − c)` with symmetric positive-definite `A`; a test hook
/// for the optimizer.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: Vec<Vec<f64>>,
    pub center: Vec<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        for (g, row) in grad.iter_mut().zip(&self.a) {
            *g = dot(row, &d);
        }
        0.5 * dot(&d, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, k: usize) -> Quadratic {
        let b: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let a = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| (0..k).map(|l| b[l][i] * b[l][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        Quadratic {
            a,
            center: (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        }
    }

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }

        fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    #[test]
    fn quadratic_converges_within_2k_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [2, 5, 10, 20] {
            let q = random_spd(&mut rng, k);
            // near-exact line searches give the finite-termination behavior
            let opts = BfgsOptions {
                grad_tol: 1e-11,
                c2: 1e-3,
                ..BfgsOptions::default()
            };
            let (x, t) = minimize(&q, &vec![0.0; k], &opts).unwrap();
            let err = x.iter().zip(&q.center).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "k={k} err={err}");
            assert!(t.iterations <= 2 * k, "k={k} iterations={}", t.iterations);
        }
    }

    #[test]
    fn rosenbrock_trace_is_monotone() {
        let (x, t) = minimize(&Rosenbrock, &[-1.2, 1.0], &BfgsOptions::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5, "{x:?}");
        assert_eq!(t.stop, StopReason::GradientTolerance);
        assert!(t.costs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_nan_start_and_bad_options() {
        struct Nan;
        impl Objective for Nan {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                f64::NAN
            }
        }
        assert!(matches!(minimize(&Nan, &[0.0], &BfgsOptions::default()), Err(Error::Training(_))));
        let bad = BfgsOptions {
            c1: 0.95,
            ..BfgsOptions::default()
        };
        assert!(minimize(&Rosenbrock, &[0.0, 0.0], &bad).is_err());
    }

    #[test]
    fn zero_gradient_start_stops_immediately() {
        let q = Quadratic {
            a: vec![vec![1.0]],
            center: vec![2.0],
        };
        let (x, t) = minimize(&q, &[2.0], &BfgsOptions::default()).unwrap();
        assert_eq!(x, vec![2.0]);
        assert_eq!(t.iterations, 0);
        assert_eq!(t.costs.len(), 1);
    }
}
