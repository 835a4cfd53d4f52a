#![allow(dead_code)]

use nalgebra::Matrix3;
use statrs::function::gamma::ln_gamma;
use trivine::special::{expit, logit, norm_quantile};
use trivine::{QuadGrid, StudyRecord};

pub fn table(rows: &[(u64, u64, u64, u64)]) -> Vec<StudyRecord> {
    rows.iter().map(|&(tp, fp, fn_, tn)| StudyRecord::from_2x2(tp, fp, fn_, tn)).collect()
}

/// Eight studies drawn from a trivariate GLMM (normal margins, BVN blocks);
/// the GLMM optimum for this table is interior.
pub fn eight_studies() -> Vec<StudyRecord> {
    table(&[
        (61, 37, 27, 60),
        (22, 15, 4, 22),
        (116, 135, 28, 106),
        (34, 17, 6, 21),
        (9, 3, 5, 28),
        (17, 11, 2, 16),
        (94, 17, 10, 42),
        (25, 13, 14, 61),
    ])
}

pub fn example_csv() -> Vec<StudyRecord> {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example.csv");
    trivine::read_input(&p).expect("example table").records
}

pub fn ln_binom(y: u64, n: u64, p: f64) -> f64 {
    let (y, n) = (y as f64, n as f64);
    let c = ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
    let a = if y > 0.0 { y * p.ln() } else { 0.0 };
    let b = if n - y > 0.0 { (n - y) * (1.0 - p).ln() } else { 0.0 };
    c + a + b
}

/// Trivariate-normal random effects on the logit scale:
/// `mu`, `sigma`, and correlations `rho12`, `rho13` plus the partial
/// correlation `rho23|1`, combined with
/// `rho23 = rho23|1 sqrt(1 - rho12^2) sqrt(1 - rho13^2) + rho12 rho13`.
#[derive(Debug, Clone, Copy)]
pub struct Tvn {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub rho12: f64,
    pub rho13: f64,
    pub rho23_1: f64,
}

impl Tvn {
    pub fn covariance(&self) -> Matrix3<f64> {
        let rho23 = self.rho23_1 * (1.0 - self.rho12 * self.rho12).sqrt() * (1.0 - self.rho13 * self.rho13).sqrt()
            + self.rho12 * self.rho13;
        let r = Matrix3::new(1.0, self.rho12, self.rho13, self.rho12, 1.0, rho23, self.rho13, rho23, 1.0);
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::from(self.sigma));
        d * r * d
    }

    /// Log-likelihood by the product rule on the cube: `z = mu + L Phi^-1(u)`
    /// with `L` the Cholesky factor of the covariance.
    pub fn loglik(&self, data: &[StudyRecord], grid: &QuadGrid) -> f64 {
        let Some(ch) = self.covariance().cholesky() else { return f64::NEG_INFINITY };
        let l = ch.l();
        let z: Vec<f64> = grid.nodes.iter().map(|&u| norm_quantile(u)).collect();
        let nq = grid.nodes.len();
        let mut pts = Vec::with_capacity(nq * nq * nq);
        for a in 0..nq {
            for b in 0..nq {
                for c in 0..nq {
                    let v = nalgebra::Vector3::new(z[a], z[b], z[c]);
                    let x = l * v;
                    let w = grid.weights[a] * grid.weights[b] * grid.weights[c];
                    pts.push((w.ln(), [expit(self.mu[0] + x[0]), expit(self.mu[1] + x[1]), expit(self.mu[2] + x[2])]));
                }
            }
        }
        let mut total = 0.0;
        for s in data {
            let terms: Vec<f64> = pts
                .iter()
                .map(|(lw, p)| lw + ln_binom(s.y1, s.n1, p[0]) + ln_binom(s.y2, s.n2, p[1]) + ln_binom(s.y3, s.n3, p[2]))
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            total += m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        }
        total
    }

    pub fn from_free(x: &[f64]) -> Tvn {
        Tvn {
            mu: [x[0], x[1], x[2]],
            sigma: [x[3].exp(), x[4].exp(), x[5].exp()],
            rho12: x[6].tanh(),
            rho13: x[7].tanh(),
            rho23_1: x[8].tanh(),
        }
    }

    pub fn to_free(&self) -> Vec<f64> {
        vec![
            self.mu[0],
            self.mu[1],
            self.mu[2],
            self.sigma[0].ln(),
            self.sigma[1].ln(),
            self.sigma[2].ln(),
            self.rho12.atanh(),
            self.rho13.atanh(),
            self.rho23_1.atanh(),
        ]
    }

    pub fn moment_start(data: &[StudyRecord]) -> Tvn {
        let mut mu = [0.0; 3];
        for (j, m) in mu.iter_mut().enumerate() {
            let s: f64 = data.iter().map(|r| {
                let (y, n) = r.pair(j);
                logit((y as f64 + 0.5) / (n as f64 + 1.0))
            }).sum();
            *m = s / data.len() as f64;
        }
        Tvn { mu, sigma: [0.5; 3], rho12: 0.0, rho13: 0.0, rho23_1: 0.0 }
    }
}

/// Nelder-Mead minimization; returns the best point and value.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: f64, max_evals: usize, tol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() < tol {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|x| x[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let x: Vec<f64> = (0..n).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                    vals[i] = f(&x);
                    simplex[i] = x;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best].clone(), vals[best])
}

/// Maximized TVN log-likelihood by restarted Nelder-Mead.
pub fn tvn_max_loglik(data: &[StudyRecord], grid: &QuadGrid) -> (Tvn, f64) {
    let obj = |x: &[f64]| {
        let v = -Tvn::from_free(x).loglik(data, grid);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let mut x = Tvn::moment_start(data).to_free();
    let mut best = f64::INFINITY;
    for round in 0..8 {
        let step = if round == 0 { 0.5 } else { 0.1 };
        let (xn, v) = nelder_mead(obj, &x, step, 6000, 1e-10);
        let improved = best - v;
        x = xn;
        best = v;
        if round > 1 && improved < 1e-7 {
            break;
        }
    }
    (Tvn::from_free(&x), -best)
}

/// 1-D random-effects log-likelihood of coordinate `j` by quadrature.
pub fn univariate_loglik(data: &[StudyRecord], j: usize, margin: &trivine::MarginSpec, grid: &QuadGrid) -> f64 {
    data.iter()
        .map(|s| {
            let (y, n) = s.pair(j);
            let terms: Vec<f64> = grid
                .nodes
                .iter()
                .zip(&grid.weights)
                .map(|(&u, &w)| w.ln() + ln_binom(y, n, margin.latent_quantile(u).unwrap()))
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
        })
        .sum()
}
