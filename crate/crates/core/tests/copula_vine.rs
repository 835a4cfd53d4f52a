mod common;

use approx::assert_relative_eq;
use common::Tvn;
use trivine::rng::StreamRng;
use trivine::special::{norm_cdf, norm_quantile};
use trivine::{
    empirical_tau, enumerate_permutations, gauss_legendre_01, simulate_vine, CopulaFamily, CopulaSpec, MarginKind,
    ParamVector, Permutation, VineStructure,
};

fn uniform_margins(perm: Permutation, families: [CopulaFamily; 3], tau: [Option<f64>; 3]) -> trivine::VineModelSpec {
    VineStructure::new(perm, MarginKind::Beta, families)
        .instantiate(&ParamVector { pi: [0.5; 3], disp: [0.1; 3], tau })
        .unwrap()
}

#[test]
fn ccdf_examples() {
    let ind = CopulaSpec::independence();
    assert_eq!(ind.ccdf_inv(0.3, 0.7).unwrap(), 0.3);
    assert_eq!(ind.ccdf(0.4, 0.9).unwrap(), 0.4);
    let bvn0 = CopulaSpec::new(CopulaFamily::Bvn, 0.0).unwrap();
    assert_relative_eq!(bvn0.ccdf_inv(0.3, 0.7).unwrap(), 0.3, epsilon = 1e-15);
    for theta in [-0.9, -0.2, 0.4, 0.95] {
        let c = CopulaSpec::new(CopulaFamily::Bvn, theta).unwrap();
        assert_relative_eq!(c.ccdf(0.5, 0.5).unwrap(), 0.5, epsilon = 1e-15);
    }
    let clayton = CopulaSpec::new(CopulaFamily::Clayton0, 2.0).unwrap();
    let w = clayton.ccdf_inv(0.5, 0.5).unwrap();
    assert_relative_eq!(clayton.ccdf(w, 0.5).unwrap(), 0.5, epsilon = 1e-14);
}

#[test]
fn density_examples() {
    assert_eq!(CopulaSpec::independence().density(0.2, 0.8).unwrap(), 1.0);
    let c = CopulaSpec::new(CopulaFamily::Bvn, 0.6).unwrap();
    assert_relative_eq!(c.density(0.5, 0.5).unwrap(), 1.25, epsilon = 1e-14);
    let f = CopulaSpec::new(CopulaFamily::Frank, 1e-6).unwrap();
    assert_eq!(f.density(0.13, 0.71).unwrap(), 1.0);
}

#[test]
fn tau_theta_examples() {
    use trivine::{tau_to_theta, theta_to_tau};
    assert_relative_eq!(tau_to_theta(CopulaFamily::Bvn, 1.0 / 3.0).unwrap(), 0.5, epsilon = 1e-14);
    assert_relative_eq!(tau_to_theta(CopulaFamily::Clayton0, 0.5).unwrap(), 2.0, epsilon = 1e-14);
    assert!((tau_to_theta(CopulaFamily::Frank, 0.5).unwrap() - 5.736).abs() < 1e-3);
    assert_relative_eq!(theta_to_tau(CopulaFamily::Bvn, 1.0).unwrap(), 1.0, epsilon = 1e-15);
    assert_relative_eq!(theta_to_tau(CopulaFamily::Clayton90, 2.0).unwrap(), -0.5, epsilon = 1e-15);
    assert!((theta_to_tau(CopulaFamily::Frank, 5.736).unwrap() - 0.5).abs() < 1e-4);
}

fn density_mass(c: &CopulaSpec, nq: usize) -> f64 {
    let g = gauss_legendre_01(nq).unwrap();
    let mut total = 0.0;
    for (u, wu) in g.nodes.iter().zip(&g.weights) {
        for (v, wv) in g.nodes.iter().zip(&g.weights) {
            total += wu * wv * c.density(*u, *v).unwrap();
        }
    }
    total
}

#[test]
fn densities_integrate_to_one() {
    for fam in CopulaFamily::ALL {
        let c = match fam.tau_interval() {
            Some((lo, _)) if lo < 0.0 => CopulaSpec::from_tau(fam, -0.3).unwrap(),
            Some(_) => CopulaSpec::from_tau(fam, 0.3).unwrap(),
            None => CopulaSpec::independence(),
        };
        let err: Vec<f64> = [40, 80, 160].iter().map(|&nq| (density_mass(&c, nq) - 1.0).abs()).collect();
        match fam {
            // corner singularities: GL40 error is 3e-6 (BVN) and 1.5e-4 (Clayton), shrinking with nq
            CopulaFamily::Bvn => assert!(err[0] < 1e-5 && err[2] < 1e-7, "{fam}: {err:?}"),
            CopulaFamily::Independence | CopulaFamily::Frank => assert!(err[0] < 1e-6, "{fam}: {err:?}"),
            _ => assert!(err[0] < 1e-3 && err[1] < err[0] / 3.0 && err[2] < err[1] / 3.0, "{fam}: {err:?}"),
        }
    }
}

#[test]
fn ccdf_inv_increasing_in_v() {
    for fam in CopulaFamily::ALL.into_iter().filter(|f| f.is_parametric()) {
        let (lo, hi) = fam.tau_interval().unwrap();
        let c = CopulaSpec::from_tau(fam, 0.5 * (lo + hi) + 0.25 * (hi - lo)).unwrap();
        for u in [0.01, 0.3, 0.5, 0.77, 0.99] {
            let mut prev = 0.0;
            for k in 1..200 {
                let w = c.ccdf_inv(k as f64 / 200.0, u).unwrap();
                assert!(w > prev, "{fam} u={u} k={k}");
                prev = w;
            }
        }
    }
}

#[test]
fn rotation_identities_from_kernel_contract() {
    let c0 = CopulaSpec::new(CopulaFamily::Clayton0, 1.7).unwrap();
    let c90 = CopulaSpec::new(CopulaFamily::Clayton90, 1.7).unwrap();
    let c180 = CopulaSpec::new(CopulaFamily::Clayton180, 1.7).unwrap();
    let c270 = CopulaSpec::new(CopulaFamily::Clayton270, 1.7).unwrap();
    for &(u, v) in &[(0.1, 0.2), (0.5, 0.5), (0.93, 0.04), (0.37, 0.81)] {
        let a = c180.ccdf_inv(v, u).unwrap();
        assert!((a - (1.0 - c0.ccdf_inv(1.0 - v, 1.0 - u).unwrap())).abs() < 1e-12);
        let b = c270.ccdf_inv(v, u).unwrap();
        assert!((b - (1.0 - c90.ccdf_inv(1.0 - v, 1.0 - u).unwrap())).abs() < 1e-12);
    }
}

#[test]
fn transform_examples() {
    let p = Permutation::rooted_at(0).unwrap();
    let ind = uniform_margins(p, [CopulaFamily::Independence; 3], [None; 3]);
    assert_eq!(ind.transform(0.1, 0.2, 0.3).unwrap(), [0.1, 0.2, 0.3]);
    let mut trunc = uniform_margins(p, [CopulaFamily::Clayton0, CopulaFamily::Bvn, CopulaFamily::Independence], [Some(0.4), Some(0.2), None]);
    trunc.edge_b = CopulaSpec::new(CopulaFamily::Bvn, 0.0).unwrap();
    let out = trunc.transform(0.6, 0.2, 0.35).unwrap();
    assert_relative_eq!(out[2], 0.35, epsilon = 1e-15);
}

#[test]
fn truncation_matches_vanishing_frank() {
    let p = Permutation::rooted_at(1).unwrap();
    let trunc = uniform_margins(p, [CopulaFamily::Bvn, CopulaFamily::Bvn, CopulaFamily::Independence], [Some(0.3), Some(-0.4), None]);
    let mut frank = trunc;
    frank.edge_cond = CopulaSpec::new(CopulaFamily::Frank, 1e-6).unwrap();
    let mut rng = StreamRng::new(1, 1);
    for _ in 0..1000 {
        let (a, b, c) = (rng.uniform_open(), rng.uniform_open(), rng.uniform_open());
        let x = trunc.transform(a, b, c).unwrap();
        let y = frank.transform(a, b, c).unwrap();
        for j in 0..3 {
            assert!((x[j] - y[j]).abs() < 1e-6);
        }
    }
}

fn pair_tau(sample: &[[f64; 3]], i: usize, j: usize) -> f64 {
    let pairs: Vec<(f64, f64)> = sample.iter().map(|v| (v[i], v[j])).collect();
    empirical_tau(&pairs).unwrap()
}

#[test]
fn bvn_vine_taus_match_tvn_identity() {
    let (r12, r13, r23_1) = (0.5_f64, -0.3_f64, 0.4_f64);
    let tvn = Tvn { mu: [0.0; 3], sigma: [1.0; 3], rho12: r12, rho13: r13, rho23_1: r23_1 };
    let cov = tvn.covariance();
    let tau = |r: f64| 2.0 / std::f64::consts::PI * r.asin();
    let spec = uniform_margins(
        Permutation::rooted_at(0).unwrap(),
        [CopulaFamily::Bvn; 3],
        [Some(tau(r12)), Some(tau(r13)), Some(tau(r23_1))],
    );
    let sample = simulate_vine(100_000, &spec, 17);
    assert!((pair_tau(&sample, 0, 1) - tau(cov[(0, 1)])).abs() < 0.01);
    assert!((pair_tau(&sample, 0, 2) - tau(cov[(0, 2)])).abs() < 0.01);
    assert!((pair_tau(&sample, 1, 2) - tau(cov[(1, 2)])).abs() < 0.01);

    // Cholesky sampling of the same TVN as a second oracle
    let l = cov.cholesky().unwrap().l();
    let mut rng = StreamRng::new(18, 0);
    let chol: Vec<[f64; 3]> = (0..20_000)
        .map(|_| {
            let z = nalgebra::Vector3::new(
                norm_quantile(rng.uniform_open()),
                norm_quantile(rng.uniform_open()),
                norm_quantile(rng.uniform_open()),
            );
            let x = l * z;
            [norm_cdf(x[0]), norm_cdf(x[1]), norm_cdf(x[2])]
        })
        .collect();
    assert!((pair_tau(&chol, 1, 2) - pair_tau(&sample, 1, 2)).abs() < 0.02);
}

#[test]
fn edge_taus_recovered_for_every_permutation() {
    for perm in enumerate_permutations() {
        let spec = uniform_margins(
            perm,
            [CopulaFamily::Clayton0, CopulaFamily::Frank, CopulaFamily::Bvn],
            [Some(0.4), Some(-0.3), Some(0.2)],
        );
        let sample = simulate_vine(40_000, &spec, perm.index() as u64);
        let r = perm.root();
        let (a, b) = perm.leaves();
        assert!((pair_tau(&sample, r.min(a), r.max(a)) - 0.4).abs() < 0.015, "{perm}");
        let t = pair_tau(&sample, r.min(b), r.max(b));
        assert!((t + 0.3).abs() < 0.015, "{perm}: {t}");
    }
}

fn ks_statistic(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn independent_draws_are_uniform() {
    let spec = uniform_margins(Permutation::rooted_at(2).unwrap(), [CopulaFamily::Independence; 3], [None; 3]);
    let sample = simulate_vine(10_000, &spec, 5);
    let crit = 1.628 / (10_000f64).sqrt();
    for j in 0..3 {
        assert!(ks_statistic(sample.iter().map(|v| v[j]).collect()) < crit);
    }
}

#[test]
fn clayton90_sample_tau() {
    let spec = uniform_margins(
        Permutation::rooted_at(0).unwrap(),
        [CopulaFamily::Clayton90, CopulaFamily::Independence, CopulaFamily::Independence],
        [Some(-0.5), None, None],
    );
    let sample = simulate_vine(100_000, &spec, 9);
    assert!((pair_tau(&sample, 0, 1) + 0.5).abs() < 0.02);
    assert_eq!(sample, simulate_vine(100_000, &spec, 9));
}

#[test]
fn seeded_repeatability() {
    let spec = uniform_margins(Permutation::rooted_at(0).unwrap(), [CopulaFamily::Frank; 3], [Some(0.2), Some(0.3), Some(-0.1)]);
    let a = simulate_vine(500, &spec, 42);
    let b = simulate_vine(500, &spec, 42);
    assert!(a.iter().zip(&b).all(|(x, y)| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())));
}

#[test]
fn empirical_tau_examples() {
    assert_eq!(empirical_tau(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap(), 1.0);
    assert_eq!(empirical_tau(&[(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)]).unwrap(), -1.0);
    let mut rng = StreamRng::new(77, 0);
    let pairs: Vec<(f64, f64)> = (0..10_000).map(|_| (rng.uniform_open(), rng.uniform_open())).collect();
    assert!(empirical_tau(&pairs).unwrap().abs() < 0.03);
}

#[test]
fn permutations_enumerated() {
    let ps = enumerate_permutations();
    assert_eq!(ps.len(), 3);
    let mut roots: Vec<usize> = ps.iter().map(|p| p.index()).collect();
    roots.sort();
    assert_eq!(roots, vec![1, 2, 3]);
    for p in ps {
        assert!(p.edge_labels()[2].ends_with(&format!("|{}", p.index())));
    }
}

#[test]
fn quadrature_examples() {
    let g = gauss_legendre_01(1).unwrap();
    assert_eq!((g.nodes[0], g.weights[0]), (0.5, 1.0));
    let g = gauss_legendre_01(2).unwrap();
    let r = 3f64.sqrt();
    assert_relative_eq!(g.nodes[0], (3.0 - r) / 6.0, epsilon = 1e-15);
    assert_relative_eq!(g.nodes[1], (3.0 + r) / 6.0, epsilon = 1e-15);
    for nq in [3, 15, 25, 40] {
        let g = gauss_legendre_01(nq).unwrap();
        let m: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| x * w).sum();
        assert!((m - 0.5).abs() < 1e-14);
    }
}
