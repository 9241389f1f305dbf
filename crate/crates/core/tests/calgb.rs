use strata_rd::tables::calgb;
use strata_rd::{
    confidence_interval, mh_estimate, mh_test, ps_estimate, unadjusted_estimate, var_bootstrap, var_gr, var_mgr_ate,
    var_mgr_mh, var_ps, var_sato, var_unadjusted, wald_test, Estimand, Estimator, PointEstimate, VarianceEstimate,
};

const TOL: f64 = 0.02;

fn x100(v: f64) -> f64 {
    100.0 * v
}

fn se(v: &VarianceEstimate) -> f64 {
    x100(v.se().unwrap())
}

fn ci(e: &PointEstimate, v: &VarianceEstimate) -> (f64, f64) {
    let (lo, hi) = confidence_interval(e, v, 0.95).unwrap();
    (x100(lo), x100(hi))
}

/// Published bounds have two or three significant figures; allow half a
/// unit of the last printed digit, never less than the table tolerance.
fn near_printed(ours: f64, printed: f64, decimals: i32) -> bool {
    let half = 0.5 * 10f64.powi(-decimals);
    (ours - printed).abs() <= half.max(TOL)
}

#[test]
fn reconstructed_counts_match_published_rates() {
    let d = calgb::dataset();
    assert_eq!(d.k(), 21);
    assert_eq!(d.n(), 156);
    for (t, &(m1, r1, m0, r0)) in d.strata().iter().zip(calgb::PUBLISHED.iter()) {
        assert_eq!(t.treated(), m1);
        assert_eq!(t.control(), m0);
        assert!((t.n11 as f64 / m1 as f64 - r1).abs() <= calgb::RATE_TOLERANCE);
        assert!((t.n10 as f64 / m0 as f64 - r0).abs() <= calgb::RATE_TOLERANCE);
    }
}

#[test]
fn point_estimates() {
    let d = calgb::dataset();
    assert!((x100(mh_estimate(&d).unwrap().value) - 5.72).abs() <= TOL);
    assert!((x100(ps_estimate(&d).unwrap().value) - 5.69).abs() <= TOL);
    assert!((x100(unadjusted_estimate(&d).unwrap().value) - 1.79).abs() <= TOL);
}

#[test]
fn standard_errors() {
    let d = calgb::dataset();
    for (v, printed) in [
        (var_gr(&d).unwrap(), 6.32),
        (var_sato(&d).unwrap(), 7.99),
        (var_mgr_mh(&d).unwrap(), 7.30),
        (var_mgr_ate(&d).unwrap(), 7.74),
        (var_ps(&d).unwrap(), 7.66),
        (var_unadjusted(&d).unwrap(), 8.06),
    ] {
        assert!(
            (se(&v) - printed).abs() <= TOL,
            "{:?}: {} vs {printed}",
            v.method,
            se(&v)
        );
    }
}

#[test]
fn intervals() {
    let d = calgb::dataset();
    let mh = mh_estimate(&d).unwrap();
    let ps = ps_estimate(&d).unwrap();
    let un = unadjusted_estimate(&d).unwrap();
    let rows = [
        (ci(&mh, &var_gr(&d).unwrap()), (-6.67, 2), (18.10, 2)),
        (ci(&mh, &var_sato(&d).unwrap()), (-9.94, 2), (21.4, 1)),
        (ci(&mh, &var_mgr_mh(&d).unwrap()), (-8.60, 2), (20.0, 1)),
        (ci(&mh, &var_mgr_ate(&d).unwrap()), (-9.46, 2), (20.9, 1)),
        (ci(&ps, &var_ps(&d).unwrap()), (-9.33, 2), (20.7, 1)),
        (ci(&un, &var_unadjusted(&d).unwrap()), (-14.0, 1), (17.6, 1)),
    ];
    for ((lo, hi), (plo, dlo), (phi, dhi)) in rows {
        assert!(near_printed(lo, plo, dlo), "{lo} vs {plo}");
        assert!(near_printed(hi, phi, dhi), "{hi} vs {phi}");
    }
}

#[test]
fn mgr_ate_exceeds_mgr_mh() {
    let d = calgb::dataset();
    let (sigma2, nu2) = var_mgr_ate(&d).unwrap().components.unwrap();
    assert_eq!(sigma2, var_mgr_mh(&d).unwrap().variance);
    assert!(nu2 > 0.0);
}

#[test]
fn bootstrap_close_to_mgr_ate() {
    let recs = calgb::records();
    let v = var_bootstrap(&recs, Estimator::Mh, 2000, 11).unwrap();
    assert!(v.warnings.is_empty());
    // 2000 subject-level resamples: Monte Carlo sd of the SE is about 0.13
    assert!((se(&v) - 8.2).abs() < 0.5, "{}", se(&v));
    let again = var_bootstrap(&recs, Estimator::Mh, 2000, 11).unwrap();
    assert_eq!(v, again);
}

#[test]
fn tests_do_not_reject() {
    let d = calgb::dataset();
    let t = mh_test(&d).unwrap();
    assert!(t.p_value > 0.4 && t.p_value < 0.5);
    for e in [Estimand::DeltaMh, Estimand::DeltaAte] {
        let w = wald_test(&d, e, 0.0).unwrap();
        assert!(w.p_value > 0.4 && w.p_value < 0.5);
    }
}
