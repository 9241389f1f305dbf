//! Mantel-Haenszel risk-difference estimation for stratified 2×2 tables.
//!
//! Point estimators live in [`estimators`], their variance estimators and
//! Wald intervals in [`variance`], the MH chi-square and Wald tests in
//! [`hypothesis`], and a seeded Monte Carlo harness in [`simulation`].

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod estimators;
pub mod hypothesis;
pub mod simulation;
pub mod tables;
pub mod variance;

pub use error::{Error, Result};
pub use estimators::{
    mh_estimate, mh_estimate_pair, ps_estimate, stratum_effects, unadjusted_estimate, Estimator, PointEstimate,
    StratumEffect,
};
pub use hypothesis::{mh_test, wald_test, NullHypothesis, TestMethod, TestResult, TestWarning};
pub use tables::{
    aggregate_subjects, expand_records, validate, Checks, MultiArmStratumTable, StratifiedDataset, StratumTable,
    SubjectRecord, Warning,
};
pub use variance::{
    confidence_interval, theoretical_nu2, theoretical_sigma2, var_bootstrap, var_common_form, var_gr, var_mgr_ate,
    var_mgr_mh, var_ps, var_sato, var_unadjusted, Estimand, LambdaRule, TrueParameters, VarianceEstimate,
    VarianceMethod,
};

/// Rounds to `decimals` places, sending exact ties to the even neighbour.
pub fn round_half_even(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    let y = x * s;
    let r = y.round();
    let r = if (y - y.trunc()).abs() == 0.5 {
        2.0 * (y / 2.0).round()
    } else {
        r
    };
    r / s
}

#[cfg(test)]
mod tests {
    use super::round_half_even;

    #[test]
    fn ties_go_to_even() {
        assert_eq!(round_half_even(0.125, 2), 0.12);
        assert_eq!(round_half_even(0.375, 2), 0.38);
        assert_eq!(round_half_even(-2.5, 0), -2.0);
        assert_eq!(round_half_even(5.7168, 2), 5.72);
    }
}
