//! The MH chi-square test and Wald tests for the MH and ATE estimands.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::chi2_1_sf;
use crate::error::{Error, Result};
use crate::estimators::mh_estimate;
use crate::tables::StratifiedDataset;
use crate::variance::{var_mgr_ate, var_mgr_mh, Estimand, VarianceWarning};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestMethod {
    MhChi2,
    WaldMh,
    WaldAte,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::MhChi2 => "MH_CHI2",
            TestMethod::WaldMh => "WALD_MH",
            TestMethod::WaldAte => "WALD_ATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NullHypothesis {
    SharpNull,
    DeltaMhZero,
    DeltaAteZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestWarning {
    /// A one-subject stratum has no hypergeometric variance and was skipped.
    SingletonStratum {
        label: String,
    },
    /// Zero hypergeometric variance but a nonzero deviation from expectation.
    ZeroVarianceDeviation {
        label: String,
    },
    /// Some strata deviate from expectation by 5 or less, so the chi-square
    /// approximation may be rough.
    SmallDeviation {
        strata: usize,
    },
    Variance(VarianceWarning),
}

impl fmt::Display for TestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestWarning::SingletonStratum { label } => {
                write!(f, "stratum `{label}` has one subject and was skipped by the MH test")
            }
            TestWarning::ZeroVarianceDeviation { label } => write!(
                f,
                "stratum `{label}` has zero hypergeometric variance but deviates from its expectation"
            ),
            TestWarning::SmallDeviation { strata } => write!(
                f,
                "{strata} strata have |n11 - E(n11)| <= 5; the chi-square approximation may be rough"
            ),
            TestWarning::Variance(w) => w.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: u32,
    pub method: TestMethod,
    pub null_hypothesis: NullHypothesis,
    pub warnings: Vec<TestWarning>,
}

/// Per-stratum hypergeometric mean and variance of `n11` given all margins.
pub fn hypergeometric_moments(n11: u64, n10: u64, n01: u64, n00: u64) -> Option<(f64, f64)> {
    let total = (n11 + n10 + n01 + n00) as f64;
    if total < 2.0 {
        return None;
    }
    let r1 = (n11 + n10) as f64;
    let r0 = (n01 + n00) as f64;
    let m1 = (n11 + n01) as f64;
    let m0 = (n10 + n00) as f64;
    let e = r1 * m1 / total;
    let v = r1 * r0 * m1 * m0 / (total * total * (total - 1.0));
    Some((e, v))
}

pub fn mh_test(dataset: &StratifiedDataset) -> Result<TestResult> {
    let mut warnings = Vec::new();
    let (mut dev, mut var) = (0.0, 0.0);
    let mut small = 0;
    for t in dataset.strata() {
        let Some((e, v)) = hypergeometric_moments(t.n11, t.n10, t.n01, t.n00) else {
            warnings.push(TestWarning::SingletonStratum { label: t.label.clone() });
            continue;
        };
        let d = t.n11 as f64 - e;
        if v == 0.0 && d != 0.0 {
            warnings.push(TestWarning::ZeroVarianceDeviation { label: t.label.clone() });
        }
        if d.abs() <= 5.0 {
            small += 1;
        }
        dev += d;
        var += v;
    }
    if var <= 0.0 {
        return Err(Error::ZeroTotalVariance);
    }
    if small > 0 {
        warnings.push(TestWarning::SmallDeviation { strata: small });
    }
    let statistic = dev * dev / var;
    Ok(TestResult {
        statistic,
        p_value: chi2_1_sf(statistic),
        df: 1,
        method: TestMethod::MhChi2,
        null_hypothesis: NullHypothesis::SharpNull,
        warnings,
    })
}

/// Chi-square form of the Wald test of `estimand = null_value`, using the
/// MH estimate with the mGR variance for that estimand.
pub fn wald_test(dataset: &StratifiedDataset, estimand: Estimand, null_value: f64) -> Result<TestResult> {
    let est = mh_estimate(dataset)?;
    let (v, method, null_hypothesis) = match estimand {
        Estimand::DeltaMh => (var_mgr_mh(dataset)?, TestMethod::WaldMh, NullHypothesis::DeltaMhZero),
        Estimand::DeltaAte => (var_mgr_ate(dataset)?, TestMethod::WaldAte, NullHypothesis::DeltaAteZero),
    };
    Ok(wald_from_parts(
        est.value,
        v.reported_variance(),
        null_value,
        method,
        null_hypothesis,
        v.warnings,
    ))
}

pub(crate) fn wald_from_parts(
    value: f64,
    variance: f64,
    null_value: f64,
    method: TestMethod,
    null_hypothesis: NullHypothesis,
    warnings: Vec<VarianceWarning>,
) -> TestResult {
    let diff = value - null_value;
    let statistic = if diff == 0.0 {
        0.0
    } else if variance > 0.0 {
        diff * diff / variance
    } else {
        f64::INFINITY
    };
    TestResult {
        statistic,
        p_value: chi2_1_sf(statistic),
        df: 1,
        method,
        null_hypothesis,
        warnings: warnings.into_iter().map(TestWarning::Variance).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::{calgb, StratumTable};

    fn one(n11: u64, n10: u64, n01: u64, n00: u64) -> StratifiedDataset {
        StratifiedDataset::from_tables(vec![StratumTable::new("a", n11, n10, n01, n00)]).unwrap()
    }

    #[test]
    fn balanced_table_has_zero_statistic() {
        let r = mh_test(&one(2, 2, 2, 2)).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.null_hypothesis, NullHypothesis::SharpNull);
    }

    #[test]
    fn perfect_separation() {
        let r = mh_test(&one(4, 0, 0, 4)).unwrap();
        assert!((r.statistic - 7.0).abs() < 1e-14);
        assert!((r.p_value - 0.008_150_971_593_502_700).abs() < 1e-16);
    }

    #[test]
    fn singleton_and_zero_variance_strata() {
        let d = StratifiedDataset::from_tables(vec![
            StratumTable::new("one", 1, 0, 0, 0),
            StratumTable::new("pure", 2, 0, 0, 0),
            StratumTable::new("x", 3, 1, 1, 3),
        ])
        .unwrap();
        let r = mh_test(&d).unwrap();
        assert!(r
            .warnings
            .contains(&TestWarning::SingletonStratum { label: "one".into() }));
        // all-treated stratum: E = n11, zero variance, no deviation
        assert!(!r
            .warnings
            .iter()
            .any(|w| matches!(w, TestWarning::ZeroVarianceDeviation { .. })));
        assert!(mh_test(&one(3, 0, 0, 0)).is_err());
    }

    #[test]
    fn wald_at_the_estimate_is_zero() {
        let d = calgb::dataset();
        let e = mh_estimate(&d).unwrap().value;
        let r = wald_test(&d, Estimand::DeltaAte, e).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn calgb_wald_ate() {
        let r = wald_test(&calgb::dataset(), Estimand::DeltaAte, 0.0).unwrap();
        assert!((r.statistic - (0.0572f64 / 0.0774).powi(2)).abs() < 0.01);
        assert!((r.p_value - 0.46).abs() < 0.01);
        assert_eq!(r.method, TestMethod::WaldAte);
    }
}
