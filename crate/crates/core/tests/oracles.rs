//! Exhaustive and exact-arithmetic checks of the variance formulas.

use num_bigint::BigInt;
use num_rational::BigRational;
use strata_rd::variance::theoretical_sigma2_margins;
use strata_rd::{var_gr, var_mgr_mh, StratifiedDataset, StratumTable, TrueParameters};

fn q(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn choose(n: u64, k: u64) -> BigRational {
    let mut c = BigInt::from(1);
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    BigRational::from_integer(c)
}

fn pow(x: &BigRational, e: u64) -> BigRational {
    let mut r = q(1, 1);
    for _ in 0..e {
        r *= x;
    }
    r
}

fn binom_pmf(m: u64, p: f64) -> Vec<f64> {
    (0..=m)
        .map(|j| {
            let c: f64 = (0..j).map(|i| (m - i) as f64 / (i + 1) as f64).product();
            c * p.powi(j as i32) * (1.0 - p).powi((m - j) as i32)
        })
        .collect()
}

/// Exact variance of the MH estimator given arm sizes, by enumerating every
/// joint outcome of independent binomial arms.
fn enumerated_variance(margins: &[(u64, u64)], p1: &[f64], p0: &[f64]) -> f64 {
    let weights: Vec<f64> = margins
        .iter()
        .map(|&(a, b)| {
            if a > 0 && b > 0 {
                (a * b) as f64 / (a + b) as f64
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    // per stratum: (probability, weighted contribution) for each (n11, n10)
    let per: Vec<Vec<(f64, f64)>> = margins
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            if weights[k] == 0.0 {
                return vec![(1.0, 0.0)];
            }
            let (f1, f0) = (binom_pmf(a, p1[k]), binom_pmf(b, p0[k]));
            let mut v = Vec::new();
            for (i, pi) in f1.iter().enumerate() {
                for (j, pj) in f0.iter().enumerate() {
                    let d = i as f64 / a as f64 - j as f64 / b as f64;
                    v.push((pi * pj, weights[k] * d / total));
                }
            }
            v
        })
        .collect();
    let mut joint = vec![(1.0, 0.0)];
    for s in &per {
        joint = joint
            .iter()
            .flat_map(|&(p, x)| s.iter().map(move |&(q, y)| (p * q, x + y)))
            .collect();
    }
    let mean: f64 = joint.iter().map(|(p, x)| p * x).sum();
    joint.iter().map(|(p, x)| p * (x - mean) * (x - mean)).sum()
}

fn truth_for(p1: &[f64], p0: &[f64]) -> TrueParameters {
    let k = p1.len();
    let delta: Vec<f64> = p1.iter().zip(p0).map(|(a, b)| a - b).collect();
    TrueParameters::new(vec![1.0 / k as f64; k], 0.5, p0.to_vec(), delta).unwrap()
}

const SMALL_MARGINS: [(u64, u64); 6] = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2)];

fn grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[test]
fn sigma2_matches_enumeration_single_and_paired_strata() {
    let g = grid();
    let mut checked = 0;
    for &a in &g {
        for &b in &g {
            for &m in &SMALL_MARGINS {
                let t = truth_for(&[a], &[b]);
                let ours = theoretical_sigma2_margins(&[m], &t).unwrap();
                let exact = enumerated_variance(&[m], &t.p1, &t.p0);
                assert!((ours - exact).abs() < 1e-12, "{m:?} p1={a} p0={b}");
                checked += 1;
            }
            for &m in &SMALL_MARGINS {
                for &l in &SMALL_MARGINS {
                    let t = truth_for(&[a, b], &[b, a]);
                    let ours = theoretical_sigma2_margins(&[m, l], &t).unwrap();
                    let exact = enumerated_variance(&[m, l], &t.p1, &t.p0);
                    assert!((ours - exact).abs() < 1e-12, "{m:?} {l:?} p1={a} p0={b}");
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 81 * (6 + 36));
}

#[test]
fn sigma2_matches_enumeration_with_three_strata_and_an_empty_arm() {
    let ps = [0.1, 0.5, 0.9];
    let margins = [(2, 2), (1, 3), (2, 0)];
    for &a in &ps {
        for &b in &ps {
            let t = truth_for(&[a, b, 0.3], &[b, 0.7, a]);
            let ours = theoretical_sigma2_margins(&margins, &t).unwrap();
            let exact = enumerated_variance(&margins, &t.p1, &t.p0);
            assert!((ours - exact).abs() < 1e-12);
        }
    }
}

fn rational_grid() -> Vec<BigRational> {
    (1..=9).map(|i| q(i, 10)).collect()
}

#[test]
fn corrected_arm_variance_is_exactly_unbiased() {
    for m in 2..=6u64 {
        for p in rational_grid() {
            let one = q(1, 1);
            let mut e = q(0, 1);
            for j in 0..=m {
                let prob = choose(m, j) * pow(&p, j) * pow(&(&one - &p), m - j);
                let term = BigRational::from_integer(BigInt::from(j * (m - j))) / q((m - 1) as i64, 1);
                e += prob * term;
            }
            let target = q(m as i64, 1) * &p * (&one - &p);
            assert_eq!(e, target, "m={m} p={p}");
        }
    }
}

#[test]
fn uncorrected_arm_variance_is_biased() {
    let p = q(1, 2);
    let m = 4u64;
    let one = q(1, 1);
    let mut e = q(0, 1);
    for j in 0..=m {
        let prob = choose(m, j) * pow(&p, j) * pow(&(&one - &p), m - j);
        e += prob * BigRational::from_integer(BigInt::from(j * (m - j))) / q(m as i64, 1);
    }
    assert!(e < q(m as i64, 1) * &p * (&one - &p));
}

/// The squared-effect estimate used by the ATE variance, checked in exact
/// arithmetic: p̂1² − s1²/m1 + p̂0² − s0²/m0 − 2 p̂1 p̂0 has mean (p1 − p0)².
#[test]
fn squared_effect_estimate_is_exactly_unbiased() {
    let one = q(1, 1);
    let sq_hat = |j: u64, m: u64| -> BigRational {
        let p = q(j as i64, m as i64);
        let s2 = q(m as i64, (m - 1) as i64) * &p * (&one - &p);
        &p * &p - s2 / q(m as i64, 1)
    };
    for (m1, m0) in [(2u64, 2u64), (2, 3), (3, 5), (4, 2)] {
        for p1 in [q(1, 10), q(1, 2), q(7, 10)] {
            for p0 in [q(3, 10), q(9, 10)] {
                let mut e = q(0, 1);
                for i in 0..=m1 {
                    let pi = choose(m1, i) * pow(&p1, i) * pow(&(&one - &p1), m1 - i);
                    for j in 0..=m0 {
                        let pj = choose(m0, j) * pow(&p0, j) * pow(&(&one - &p0), m0 - j);
                        let cross = q(2, 1) * q(i as i64, m1 as i64) * q(j as i64, m0 as i64);
                        e += &pi * &pj * (sq_hat(i, m1) + sq_hat(j, m0) - cross);
                    }
                }
                let d = &p1 - &p0;
                assert_eq!(e, &d * &d);
            }
        }
    }
}

/// GR is the plug-in delta-method variance, and mGR swaps in unbiased
/// per-arm variances.
#[test]
fn gr_and_mgr_match_plug_in_forms() {
    let d = StratifiedDataset::from_tables(vec![
        StratumTable::new("a", 3, 1, 2, 4),
        StratumTable::new("b", 0, 2, 5, 1),
        StratumTable::new("c", 1, 1, 0, 0),
        StratumTable::new("d", 4, 0, 0, 3),
    ])
    .unwrap();
    let (mut plug, mut corrected, mut w) = (0.0, 0.0, 0.0);
    for t in d.strata() {
        let (m1, m0) = (t.treated() as f64, t.control() as f64);
        if m1 == 0.0 || m0 == 0.0 {
            continue;
        }
        let wk = m1 * m0 / (m1 + m0);
        let (p1, p0) = (t.n11 as f64 / m1, t.n10 as f64 / m0);
        let v1 = p1 * (1.0 - p1) / m1;
        let v0 = p0 * (1.0 - p0) / m0;
        let c1 = if m1 > 1.0 { m1 / (m1 - 1.0) } else { 1.0 };
        let c0 = if m0 > 1.0 { m0 / (m0 - 1.0) } else { 1.0 };
        plug += wk * wk * (v1 + v0);
        corrected += wk * wk * (c1 * v1 + c0 * v0);
        w += wk;
    }
    let gr = var_gr(&d).unwrap().variance;
    let mgr = var_mgr_mh(&d).unwrap().variance;
    assert!((gr - plug / (w * w)).abs() < 1e-15);
    assert!((mgr - corrected / (w * w)).abs() < 1e-15);
}
