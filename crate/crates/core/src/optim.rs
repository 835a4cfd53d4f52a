//! Quasi-Newton minimization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Stop when the max-norm of the gradient falls below this.
    pub gtol: f64,
    /// Relative objective change regarded as stalled.
    pub ftol: f64,
    pub max_iter: usize,
    /// Cap on the max-norm of a single step in packed coordinates.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { gtol: 1e-5, ftol: 1e-8, max_iter: 500, max_step: 2.0 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

/// Central-difference step for coordinate value `x`.
#[inline]
pub fn gradient_step(x: f64) -> f64 {
    (1e-5_f64).max(1e-5 * x.abs())
}

/// Central-difference gradient.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = gradient_step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Finite-difference Hessian (central second differences).
pub fn numeric_hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut xp = x.to_vec();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS on the inverse Hessian with a backtracking Armijo line search.
///
/// Converged means the gradient max-norm reached `gtol`, or the line search
/// stalled with relative objective change below `ftol` while the gradient is
/// at the finite-difference noise floor (`100 * gtol`).
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return BfgsOutcome {
            x: x0.to_vec(),
            fx,
            grad: vec![f64::NAN; n],
            iterations: 0,
            converged: false,
            message: "objective not finite at the starting point".into(),
        };
    }
    let mut g = DVector::from_vec(numeric_gradient(&mut f, x.as_slice()));
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut last_rel = f64::INFINITY;
    let mut message = String::from("maximum iterations reached");
    let mut converged = false;

    while iterations < opts.max_iter {
        if max_abs(g.as_slice()) < opts.gtol {
            converged = true;
            message = "gradient tolerance reached".into();
            break;
        }
        let mut p = -(&hinv * &g);
        let mut slope = p.dot(&g);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            p = -g.clone();
            slope = p.dot(&g);
        }
        let pmax = max_abs(p.as_slice());
        if pmax > opts.max_step {
            p *= opts.max_step / pmax;
            slope = p.dot(&g);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-12 {
            let xn = &x + alpha * &p;
            let fn_ = f(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fn_));
                break;
            }
            let next = if fn_.is_finite() {
                // minimiser of the quadratic through f(0), f'(0), f(alpha)
                let q = -slope * alpha * alpha / (2.0 * (fn_ - fx - slope * alpha));
                q.clamp(0.1 * alpha, 0.5 * alpha)
            } else {
                0.25 * alpha
            };
            alpha = next;
        }

        let Some((xn, fn_)) = accepted else {
            if !fresh {
                hinv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            let gmax = max_abs(g.as_slice());
            converged = gmax < 100.0 * opts.gtol && last_rel < opts.ftol.sqrt();
            message = format!("line search stalled (gradient max-norm {gmax:.3e})");
            break;
        };

        iterations += 1;
        let gn = DVector::from_vec(numeric_gradient(&mut f, xn.as_slice()));
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        let rel = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        last_rel = rel;

        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            hinv -= rho * (&hy * s.transpose() + &s * hy.transpose());
            hinv += (rho * rho * yhy + rho) * (&s * s.transpose());
        }

        let gmax = max_abs(g.as_slice());
        if gmax < opts.gtol {
            converged = true;
            message = "gradient tolerance reached".into();
            break;
        }
        if rel < opts.ftol && gmax < 100.0 * opts.gtol {
            converged = true;
            message = format!("relative change below tolerance (gradient max-norm {gmax:.3e})");
            break;
        }
    }

    BfgsOutcome {
        x: x.as_slice().to_vec(),
        fx,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
        message,
    }
}
