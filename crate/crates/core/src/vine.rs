//! Trivariate C-vine structure.
//!
//! Variables are indexed 0 (sensitivity), 1 (specificity), 2 (prevalence).
//! A permutation picks the root of the first tree; the two level-1 edges
//! join the root to each leaf and the level-2 edge joins the leaves given
//! the root. Pair copulas always take the conditioning argument first:
//! `edge_a = C(root, leaf_a)`, `edge_b = C(root, leaf_b)` and
//! `edge_cond = C(leaf_a, leaf_b | root)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaSpec};
use crate::error::{check_open_unit, Error, Result};
use crate::margins::MarginSpec;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Permutation {
    root: usize,
}

impl Permutation {
    /// Permutation rooted at variable `root` (0-based).
    pub fn rooted_at(root: usize) -> Result<Self> {
        if root < 3 {
            Ok(Self { root })
        } else {
            Err(Error::InvalidInput(format!("permutation root {root} out of range")))
        }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Leaves in increasing variable order.
    pub fn leaves(&self) -> (usize, usize) {
        match self.root {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    /// 1-based index used on the command line (1, 2 or 3).
    pub fn index(&self) -> usize {
        self.root + 1
    }

    /// Labels of the two level-1 edges and the conditional edge, e.g.
    /// `["12", "13", "23|1"]`.
    pub fn edge_labels(&self) -> [String; 3] {
        let r = self.root + 1;
        let (a, b) = self.leaves();
        let (a, b) = (a + 1, b + 1);
        let pair = |x: usize, y: usize| format!("{}{}", x.min(y), x.max(y));
        [pair(r, a), pair(r, b), format!("{}|{}", pair(a, b), r)]
    }

    pub fn label(&self) -> String {
        let [e1, e2, e3] = self.edge_labels();
        format!("{{{e1},{e2},{e3}}}")
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Ok(i) = t.parse::<usize>() {
            if (1..=3).contains(&i) {
                return Permutation::rooted_at(i - 1);
            }
        }
        enumerate_permutations()
            .into_iter()
            .find(|p| p.label() == t || p.label().trim_matches(|c| c == '{' || c == '}') == t)
            .ok_or_else(|| Error::InvalidInput(format!("unknown permutation '{s}'")))
    }
}

impl TryFrom<String> for Permutation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Permutation> for String {
    fn from(p: Permutation) -> String {
        p.label()
    }
}

/// The three distinct C-vine orderings: roots 1, 2 and 3.
pub fn enumerate_permutations() -> Vec<Permutation> {
    (0..3).map(|root| Permutation { root }).collect()
}

/// A fully parametrized trivariate vine with its margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VineModelSpec {
    pub perm: Permutation,
    pub edge_a: CopulaSpec,
    pub edge_b: CopulaSpec,
    pub edge_cond: CopulaSpec,
    pub margins: [MarginSpec; 3],
}

impl VineModelSpec {
    pub fn is_truncated(&self) -> bool {
        self.edge_cond.family == CopulaFamily::Independence
    }

    /// Maps independent uniforms to the vine distribution, in variable order.
    pub fn transform(&self, u1: f64, u2: f64, u3: f64) -> Result<[f64; 3]> {
        vine_transform(u1, u2, u3, self)
    }

    pub(crate) fn transform_unchecked(&self, u1: f64, u2: f64, u3: f64) -> [f64; 3] {
        let va = self.edge_a.ccdf_inv_clamped(u2, u1);
        let vb = if self.is_truncated() {
            self.edge_b.ccdf_inv_clamped(u3, u1)
        } else {
            let inner = self.edge_cond.ccdf_inv_clamped(u3, u2);
            self.edge_b.ccdf_inv_clamped(inner, u1)
        };
        let mut out = [0.0; 3];
        let (a, b) = self.perm.leaves();
        out[self.perm.root()] = u1;
        out[a] = va;
        out[b] = vb;
        out
    }
}

/// Independent uniforms `(u1, u2, u3)` to dependent uniforms with the vine
/// distribution: `u1` drives the root, `u2` leaf a and `u3` leaf b. The
/// result is returned in variable order.
pub fn vine_transform(u1: f64, u2: f64, u3: f64, spec: &VineModelSpec) -> Result<[f64; 3]> {
    check_open_unit("u1", u1)?;
    check_open_unit("u2", u2)?;
    check_open_unit("u3", u3)?;
    let va = spec.edge_a.ccdf_inv(u2, u1)?;
    let vb = if spec.is_truncated() {
        spec.edge_b.ccdf_inv(u3, u1)?
    } else {
        let inner = spec.edge_cond.ccdf_inv(u3, u2)?;
        spec.edge_b.ccdf_inv(inner, u1)?
    };
    let mut out = [0.0; 3];
    let (a, b) = spec.perm.leaves();
    out[spec.perm.root()] = u1;
    out[a] = va;
    out[b] = vb;
    Ok(out)
}

/// Draws `count` triples from the vine using stream 0 of `seed`.
pub fn simulate_vine(count: usize, spec: &VineModelSpec, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = StreamRng::new(seed, 0);
    simulate_vine_with(count, spec, &mut rng)
}

pub(crate) fn simulate_vine_with(count: usize, spec: &VineModelSpec, rng: &mut StreamRng) -> Vec<[f64; 3]> {
    (0..count)
        .map(|_| {
            let u1 = rng.uniform_open();
            let u2 = rng.uniform_open();
            let u3 = rng.uniform_open();
            spec.transform_unchecked(u1, u2, u3)
        })
        .collect()
}

/// Sample Kendall tau, `(concordant - discordant) / (n choose 2)` with tied
/// pairs counted as neither. Knight's O(n log n) merge-sort algorithm.
pub fn empirical_tau(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InvalidInput("Kendall tau needs at least two pairs".into()));
    }
    if pairs.iter().any(|(x, y)| x.is_nan() || y.is_nan()) {
        return Err(Error::InvalidInput("Kendall tau input contains NaN".into()));
    }
    let mut v: Vec<(f64, f64)> = pairs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tied_groups = |vals: &mut dyn Iterator<Item = bool>| -> u64 {
        // counts pairs within runs of equal consecutive keys
        let mut total = 0u64;
        let mut run = 1u64;
        for same in vals {
            if same {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let tx = tied_groups(&mut v.windows(2).map(|w| w[0].0 == w[1].0));
    let txy = tied_groups(&mut v.windows(2).map(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1));

    let mut ys: Vec<f64> = v.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let ty = tied_groups(&mut ys.windows(2).map(|w| w[0] == w[1]));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let discordant = swaps;
    let concordant = n0 - tx - ty + txy - discordant;
    Ok((concordant as f64 - discordant as f64) / n0 as f64)
}

/// Sorts `a` ascending and returns the number of strict inversions.
fn merge_count(a: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = a.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = a.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if a[j] < a[i] {
            buf[k] = a[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = a[i];
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = a[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = a[j];
        j += 1;
        k += 1;
    }
    a.copy_from_slice(&buf[..n]);
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::MarginKind;

    fn margins() -> [MarginSpec; 3] {
        [MarginSpec::new(MarginKind::Beta, 0.8, 0.1).unwrap(); 3]
    }

    fn indep_spec() -> VineModelSpec {
        VineModelSpec {
            perm: Permutation::rooted_at(0).unwrap(),
            edge_a: CopulaSpec::independence(),
            edge_b: CopulaSpec::independence(),
            edge_cond: CopulaSpec::independence(),
            margins: margins(),
        }
    }

    fn brute_tau(p: &[(f64, f64)]) -> f64 {
        let n = p.len();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                let d = (p[i].0 - p[j].0).signum() * (p[i].1 - p[j].1).signum();
                if p[i].0 != p[j].0 && p[i].1 != p[j].1 {
                    s += d as i64;
                }
            }
        }
        s as f64 / (n * (n - 1) / 2) as f64
    }

    #[test]
    fn permutations() {
        let ps = enumerate_permutations();
        assert_eq!(ps.len(), 3);
        let labels: Vec<String> = ps.iter().map(|p| p.label()).collect();
        assert_eq!(labels, vec!["{12,13,23|1}", "{12,23,13|2}", "{13,23,12|3}"]);
        for p in &ps {
            let [_, _, cond] = p.edge_labels();
            assert!(cond.ends_with(&format!("|{}", p.index())));
        }
        let roots: Vec<usize> = ps.iter().map(|p| p.index()).collect();
        assert_eq!(roots, vec![1, 2, 3]);
        assert_eq!("2".parse::<Permutation>().unwrap(), ps[1]);
        assert_eq!("{13,23,12|3}".parse::<Permutation>().unwrap(), ps[2]);
        let js = serde_json::to_string(&ps[0]).unwrap();
        assert_eq!(js, "\"{12,13,23|1}\"");
        assert_eq!(serde_json::from_str::<Permutation>(&js).unwrap(), ps[0]);
    }

    #[test]
    fn independence_transform_is_identity() {
        let out = vine_transform(0.1, 0.2, 0.3, &indep_spec()).unwrap();
        assert_eq!(out, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn truncated_zero_bvn_leaves_third_coordinate() {
        let mut s = indep_spec();
        s.edge_a = CopulaSpec::new(CopulaFamily::Clayton0, 1.5).unwrap();
        s.edge_b = CopulaSpec::new(CopulaFamily::Bvn, 0.0).unwrap();
        let out = vine_transform(0.6, 0.2, 0.3, &s).unwrap();
        assert!((out[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn boundary_uniforms_rejected() {
        assert!(vine_transform(0.0, 0.2, 0.3, &indep_spec()).is_err());
    }

    #[test]
    fn knight_matches_brute_force_with_ties() {
        let mut rng = StreamRng::new(3, 0);
        for n in [2usize, 3, 10, 57, 200] {
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let x = (rng.uniform_open() * 6.0).floor();
                    let y = (rng.uniform_open() * 5.0).floor() + 0.3 * x;
                    (x, y.floor())
                })
                .collect();
            let k = empirical_tau(&pts).unwrap();
            assert!((k - brute_tau(&pts)).abs() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn tau_examples() {
        assert_eq!(empirical_tau(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap(), 1.0);
        assert_eq!(empirical_tau(&[(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)]).unwrap(), -1.0);
        assert!(empirical_tau(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn simulate_is_seeded() {
        let s = indep_spec();
        let a = simulate_vine(100, &s, 42);
        let b = simulate_vine(100, &s, 42);
        let c = simulate_vine(100, &s, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
