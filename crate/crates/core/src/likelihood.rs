//! Joint likelihood of the vine copula mixed model by Gauss–Legendre
//! quadrature on the copula scale.
//!
//! For a study with counts `(y_j, n_j)` the likelihood is
//!
//! ```text
//! Σ_{q1,q2,q3} w_{q1} w_{q2} w_{q3} Π_j g(y_j; n_j, x_j(q1, q2, q3))
//! ```
//!
//! where `x_j` is the margin-`j` quantile of the vine-transformed node triple.
//! The root coordinate depends on `q1` only and leaf a on `(q1, q2)`, so the
//! sum is evaluated as nested log-sum-exps (innermost over `q3`). This is the
//! same triple sum, reorganised; every level uses max-shifting. When the vine
//! is truncated, leaf b depends on `(q1, q3)` only and the inner sum is hoisted
//! out of the `q2` loop.
//!
//! The transformed latent proportions depend on the parameters but not on the
//! data, so they are tabulated once per parameter point (as `ln x`,
//! `ln(1 - x)`) and shared by all studies. Tables are cached per coordinate and
//! only rebuilt when the copulas or margin feeding that coordinate change,
//! which is what a coordinate-wise finite-difference gradient needs.

use crate::error::{Error, Result};
use crate::margins::{binom_kernel, StudyRecord};
use crate::quadrature::QuadGrid;
use crate::special::ln_choose;
use crate::vine::VineModelSpec;

#[derive(Debug, Clone, Default)]
struct Table {
    key: Vec<u64>,
    /// `(ln x, ln(1 - x))` per grid cell.
    logs: Vec<(f64, f64)>,
}

impl Table {
    fn is_current(&self, key: &[u64]) -> bool {
        !self.logs.is_empty() && self.key == key
    }
}

fn key_of(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

fn family_code(spec: &crate::copula::CopulaSpec) -> f64 {
    spec.family as u8 as f64
}

/// Reusable likelihood evaluator for one dataset and quadrature grid.
#[derive(Debug, Clone)]
pub struct LikelihoodEvaluator {
    grid: QuadGrid,
    log_w: Vec<f64>,
    studies: Vec<StudyRecord>,
    /// `ln C(n_j, y_j)` per study and variable.
    ln_binom: Vec<[f64; 3]>,
    root: Table,
    leaf_a: Table,
    leaf_b: Table,
    cond: Table,
}

impl LikelihoodEvaluator {
    pub fn new(studies: &[StudyRecord], grid: &QuadGrid) -> Result<Self> {
        for s in studies {
            s.validate()?;
        }
        let ln_binom = studies
            .iter()
            .map(|s| {
                let mut c = [0.0; 3];
                for (j, cj) in c.iter_mut().enumerate() {
                    let (y, n) = s.pair(j);
                    *cj = ln_choose(n, y);
                }
                c
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            log_w: grid.log_weights(),
            studies: studies.to_vec(),
            ln_binom,
            root: Table::default(),
            leaf_a: Table::default(),
            leaf_b: Table::default(),
            cond: Table::default(),
        })
    }

    pub fn studies(&self) -> &[StudyRecord] {
        &self.studies
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    fn refresh(&mut self, spec: &VineModelSpec) {
        let nq = self.grid.nq();
        let nodes = &self.grid.nodes;
        let (ia, ib) = spec.perm.leaves();
        let ir = spec.perm.root();
        let mr = spec.margins[ir];
        let ma = spec.margins[ia];
        let mb = spec.margins[ib];
        let kind = mr.kind as u8 as f64;

        let key = key_of(&[kind, mr.pi, mr.disp]);
        if !self.root.is_current(&key) {
            let m = mr.prepare();
            self.root.logs = nodes.iter().map(|&u| m.log_pair(u)).collect();
            self.root.key = key;
        }

        let ea = spec.edge_a;
        let key = key_of(&[kind, ma.pi, ma.disp, family_code(&ea), ea.theta]);
        if !self.leaf_a.is_current(&key) {
            let m = ma.prepare();
            let mut logs = Vec::with_capacity(nq * nq);
            for &u1 in nodes {
                for &u2 in nodes {
                    logs.push(m.log_pair(ea.ccdf_inv_clamped(u2, u1)));
                }
            }
            self.leaf_a.logs = logs;
            self.leaf_a.key = key;
        }

        let eb = spec.edge_b;
        let ec = spec.edge_cond;
        let truncated = spec.is_truncated();
        if !truncated {
            let key = key_of(&[family_code(&ec), ec.theta]);
            if !self.cond.is_current(&key) {
                // inner inverse C_{ab|r}^{-1}(u3 | u2), stored as (value, unused)
                let mut vals = Vec::with_capacity(nq * nq);
                for &u2 in nodes {
                    for &u3 in nodes {
                        vals.push((ec.ccdf_inv_clamped(u3, u2), 0.0));
                    }
                }
                self.cond.logs = vals;
                self.cond.key = key;
            }
        }
        let key = key_of(&[
            kind,
            mb.pi,
            mb.disp,
            family_code(&eb),
            eb.theta,
            family_code(&ec),
            ec.theta,
        ]);
        if !self.leaf_b.is_current(&key) {
            let m = mb.prepare();
            let logs = if truncated {
                let mut logs = Vec::with_capacity(nq * nq);
                for &u1 in nodes {
                    for &u3 in nodes {
                        logs.push(m.log_pair(eb.ccdf_inv_clamped(u3, u1)));
                    }
                }
                logs
            } else {
                let mut logs = Vec::with_capacity(nq * nq * nq);
                for &u1 in nodes {
                    for &(inner, _) in &self.cond.logs {
                        logs.push(m.log_pair(eb.ccdf_inv_clamped(inner, u1)));
                    }
                }
                logs
            };
            self.leaf_b.logs = logs;
            self.leaf_b.key = key;
        }
    }

    /// Per-study log-likelihoods, in the order the studies were given.
    pub fn study_log_liks(&mut self, spec: &VineModelSpec) -> Vec<f64> {
        self.refresh(spec);
        let nq = self.grid.nq();
        let (ia, ib) = spec.perm.leaves();
        let ir = spec.perm.root();
        let truncated = spec.is_truncated();
        let lw = &self.log_w;

        let mut out = Vec::with_capacity(self.studies.len());
        let mut outer = vec![0.0; nq];
        let mut mid = vec![0.0; nq];
        let mut inner = vec![0.0; nq];
        let mut lg_b = vec![0.0; self.leaf_b.logs.len()];
        for (s, lc) in self.studies.iter().zip(&self.ln_binom) {
            let (yr, nr) = s.pair(ir);
            let (ya, na) = s.pair(ia);
            let (yb, nb) = s.pair(ib);
            if nr == 0 && na == 0 && nb == 0 {
                // every binomial pmf is 1 and the weights integrate to 1
                out.push(0.0);
                continue;
            }
            for (dst, &(lx, l1x)) in lg_b.iter_mut().zip(&self.leaf_b.logs) {
                *dst = binom_kernel(yb, nb, lx, l1x);
            }
            for q1 in 0..nq {
                let (lx, l1x) = self.root.logs[q1];
                let base = lw[q1] + lc[ir] + binom_kernel(yr, nr, lx, l1x);
                let hoisted = if truncated {
                    let row = &lg_b[q1 * nq..(q1 + 1) * nq];
                    for q3 in 0..nq {
                        inner[q3] = lw[q3] + row[q3];
                    }
                    Some(lse(&inner))
                } else {
                    None
                };
                for q2 in 0..nq {
                    let (lx, l1x) = self.leaf_a.logs[q1 * nq + q2];
                    let la = lw[q2] + binom_kernel(ya, na, lx, l1x);
                    let lb = match hoisted {
                        Some(v) => v,
                        None => {
                            let off = (q1 * nq + q2) * nq;
                            let row = &lg_b[off..off + nq];
                            for q3 in 0..nq {
                                inner[q3] = lw[q3] + row[q3];
                            }
                            lse(&inner)
                        }
                    };
                    mid[q2] = la + lb;
                }
                outer[q1] = base + lse(&mid);
            }
            out.push(lse(&outer) + lc[ia] + lc[ib]);
        }
        out
    }

    /// Negative joint log-likelihood. Per-study terms are summed in sorted
    /// order so the result does not depend on study order.
    pub fn nll(&mut self, spec: &VineModelSpec) -> f64 {
        let ll = self.study_log_liks(spec);
        -sorted_sum(&ll)
    }
}

pub(crate) fn sorted_sum(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

#[inline]
fn lse(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// Log-likelihood of one study.
pub fn study_log_lik(study: &StudyRecord, spec: &VineModelSpec, grid: &QuadGrid) -> Result<f64> {
    let mut ev = LikelihoodEvaluator::new(std::slice::from_ref(study), grid)?;
    Ok(ev.study_log_liks(spec)[0])
}

/// Negative joint log-likelihood of a dataset.
pub fn joint_nll(data: &[StudyRecord], spec: &VineModelSpec, grid: &QuadGrid) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("joint likelihood needs at least one study".into()));
    }
    let mut ev = LikelihoodEvaluator::new(data, grid)?;
    Ok(ev.nll(spec))
}
