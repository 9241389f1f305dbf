//! Variance estimators for the MH and related risk-difference estimators,
//! variance oracles for known truth, and Wald intervals.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::two_sided_z;
use crate::error::{Error, Result};
use crate::estimators::{
    mh_estimate, mh_weight, ps_estimate, sum_mh_weights, unadjusted_estimate, Estimator, PointEstimate,
};
use crate::tables::{StratifiedDataset, StratumTable, SubjectRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VarianceMethod {
    Gr,
    Sato,
    MgrMh,
    MgrAte,
    Ps,
    Bootstrap,
    /// Two-sample binomial variance of the pooled difference.
    Unadjusted,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Gr => "GR",
            VarianceMethod::Sato => "SATO",
            VarianceMethod::MgrMh => "MGR_MH",
            VarianceMethod::MgrAte => "MGR_ATE",
            VarianceMethod::Ps => "PS",
            VarianceMethod::Bootstrap => "BOOTSTRAP",
            VarianceMethod::Unadjusted => "UNADJUSTED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Estimand {
    DeltaMh,
    DeltaAte,
}

impl Estimand {
    pub fn name(self) -> &'static str {
        match self {
            Estimand::DeltaMh => "DELTA_MH",
            Estimand::DeltaAte => "DELTA_ATE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VarianceWarning {
    NegativeVariance {
        value: f64,
    },
    /// The heterogeneity component came out negative; the reported variance
    /// is floored at the within-stratum component.
    NegativeHeterogeneity {
        value: f64,
    },
    SkippedReplicates {
        skipped: usize,
        requested: usize,
    },
}

impl fmt::Display for VarianceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceWarning::NegativeVariance { value } => {
                write!(f, "negative variance estimate {value:e}")
            }
            VarianceWarning::NegativeHeterogeneity { value } => write!(
                f,
                "heterogeneity component {value:e} is negative; floored in the reported SE"
            ),
            VarianceWarning::SkippedReplicates { skipped, requested } => write!(
                f,
                "{skipped} of {requested} bootstrap replicates had no estimate and were skipped"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub variance: f64,
    pub method: VarianceMethod,
    pub estimand: Estimand,
    /// `(sigma2, nu2)` for the additive methods.
    pub components: Option<(f64, f64)>,
    pub warnings: Vec<VarianceWarning>,
}

impl VarianceEstimate {
    fn plain(variance: f64, method: VarianceMethod, estimand: Estimand) -> Self {
        VarianceEstimate {
            variance,
            method,
            estimand,
            components: None,
            warnings: Vec::new(),
        }
    }

    fn additive(sigma2: f64, nu2: f64, method: VarianceMethod) -> Self {
        let mut warnings = Vec::new();
        if nu2 < 0.0 {
            warnings.push(VarianceWarning::NegativeHeterogeneity { value: nu2 });
        }
        VarianceEstimate {
            variance: sigma2 + nu2,
            method,
            estimand: Estimand::DeltaAte,
            components: Some((sigma2, nu2)),
            warnings,
        }
    }

    /// Variance used for intervals: additive estimates never fall below
    /// their first component.
    pub fn reported_variance(&self) -> f64 {
        match self.components {
            Some((sigma2, _)) => self.variance.max(sigma2),
            None => self.variance,
        }
    }

    /// `None` when the estimate is negative.
    pub fn se(&self) -> Option<f64> {
        let v = self.reported_variance();
        (v >= 0.0).then(|| v.sqrt())
    }
}

/// Ground truth for a stratified super-population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub k: usize,
    pub rho: Vec<f64>,
    pub pi1: f64,
    pub pi0: f64,
    pub p1: Vec<f64>,
    pub p0: Vec<f64>,
    pub delta: Vec<f64>,
    pub delta_ate: f64,
}

impl TrueParameters {
    /// `p1` is formed as `p0 + delta`; it must land in `[0, 1]`.
    pub fn new(rho: Vec<f64>, pi1: f64, p0: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        let k = rho.len();
        if k == 0 {
            return Err(Error::InvalidArgument("at least one stratum is required".into()));
        }
        for len in [p0.len(), delta.len()] {
            if len != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: len,
                });
            }
        }
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "allocation probability {pi1} must lie strictly between 0 and 1"
            )));
        }
        if rho.iter().any(|r| !(*r >= 0.0)) || (rho.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "stratum probabilities must be non-negative and sum to 1".into(),
            ));
        }
        let mut p1 = Vec::with_capacity(k);
        for (i, (&a, &d)) in p0.iter().zip(&delta).enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InfeasibleProbability { stratum: i, value: a });
            }
            let b = a + d;
            if !(-1e-12..=1.0 + 1e-12).contains(&b) {
                return Err(Error::InfeasibleProbability { stratum: i, value: b });
            }
            p1.push(b.clamp(0.0, 1.0));
        }
        let delta_ate = rho.iter().zip(&delta).map(|(r, d)| r * d).sum();
        Ok(TrueParameters {
            k,
            rho,
            pi1,
            pi0: 1.0 - pi1,
            p1,
            p0,
            delta,
            delta_ate,
        })
    }

    /// MH-weighted average of the true effects for the given arm sizes.
    pub fn delta_mh(&self, margins: &[(u64, u64)]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (&(m1, m0), d) in margins.iter().zip(&self.delta) {
            if m1 > 0 && m0 > 0 {
                let w = mh_weight(m1, m0, m1 + m0);
                num += w * d;
                den += w;
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LambdaRule {
    SatoHalf,
    GrLambda,
}

fn weight_total(dataset: &StratifiedDataset) -> Result<f64> {
    let w = sum_mh_weights(dataset);
    if w > 0.0 {
        Ok(w)
    } else {
        Err(Error::AllStrataDegenerate)
    }
}

fn f(x: u64) -> f64 {
    x as f64
}

fn gr_term(t: &StratumTable) -> f64 {
    let (n11, n10) = (f(t.n11), f(t.n10));
    let (m1, m0, nn) = (f(t.treated()), f(t.control()), f(t.total()));
    (n11 * (m1 - n11) * m0.powi(3) + n10 * (m0 - n10) * m1.powi(3)) / (m1 * m0 * nn * nn)
}

fn included(dataset: &StratifiedDataset) -> impl Iterator<Item = &StratumTable> {
    dataset.strata().iter().filter(|t| t.has_both_arms())
}

pub fn var_gr(dataset: &StratifiedDataset) -> Result<VarianceEstimate> {
    let w = weight_total(dataset)?;
    let s: f64 = included(dataset).map(gr_term).sum();
    Ok(VarianceEstimate::plain(
        s / (w * w),
        VarianceMethod::Gr,
        Estimand::DeltaMh,
    ))
}

pub fn var_sato(dataset: &StratifiedDataset) -> Result<VarianceEstimate> {
    let w = weight_total(dataset)?;
    let d = mh_estimate(dataset)?.value;
    let (mut p, mut q) = (0.0, 0.0);
    for t in included(dataset) {
        let (n11, n10) = (f(t.n11), f(t.n10));
        let (m1, m0, nn) = (f(t.treated()), f(t.control()), f(t.total()));
        p += (m1 * m1 * n10 - m0 * m0 * n11 + 0.5 * m1 * m0 * (m0 - m1)) / (nn * nn);
        q += (n11 * (m0 - n10) + n10 * (m1 - n11)) / (2.0 * nn);
    }
    let v = (d * p + q) / (w * w);
    let mut est = VarianceEstimate::plain(v, VarianceMethod::Sato, Estimand::DeltaMh);
    if v < 0.0 {
        est.warnings.push(VarianceWarning::NegativeVariance { value: v });
    }
    Ok(est)
}

/// `λ_k Â_k + (1 − λ_k) B̂_k` summed over strata. GR's λ_k is undefined for
/// balanced strata, which fall back to the direct GR term.
pub fn var_common_form(dataset: &StratifiedDataset, rule: LambdaRule) -> Result<VarianceEstimate> {
    let w = weight_total(dataset)?;
    let d = mh_estimate(dataset)?.value;
    let mut s = 0.0;
    for t in included(dataset) {
        let (n11, n10, n01, n00) = (f(t.n11), f(t.n10), f(t.n01), f(t.n00));
        let (m1, m0, nn) = (f(t.treated()), f(t.control()), f(t.total()));
        let nn2 = nn * nn;
        let a = (d * (m0 * m0 * n01 - m1 * m1 * n00) + m0 * n10 * n01 + m1 * n11 * n00) / nn2;
        let b = (d * (m1 * m1 * n10 - m0 * m0 * n11) + m0 * n11 * n00 + m1 * n10 * n01) / nn2;
        s += match rule {
            LambdaRule::SatoHalf => 0.5 * a + 0.5 * b,
            LambdaRule::GrLambda if t.treated() == t.control() => gr_term(t),
            LambdaRule::GrLambda => {
                let lambda = (m0 * n11 / m1 - m1 * n10 / m0) / (m0 - m1);
                lambda * a + (1.0 - lambda) * b
            }
        };
    }
    let v = s / (w * w);
    let method = match rule {
        LambdaRule::SatoHalf => VarianceMethod::Sato,
        LambdaRule::GrLambda => VarianceMethod::Gr,
    };
    let mut est = VarianceEstimate::plain(v, method, Estimand::DeltaMh);
    if v < 0.0 {
        est.warnings.push(VarianceWarning::NegativeVariance { value: v });
    }
    Ok(est)
}

fn correction(m: f64) -> f64 {
    if m > 1.0 {
        m / (m - 1.0)
    } else {
        1.0
    }
}

fn sigma2_hat(dataset: &StratifiedDataset, w: f64) -> f64 {
    let s: f64 = included(dataset)
        .map(|t| {
            let (m1, m0, nn) = (f(t.treated()), f(t.control()), f(t.total()));
            let wk = m1 * m0 / nn;
            let arm1 = f(t.n11) * f(t.n01) / m1.powi(3) * correction(m1);
            let arm0 = f(t.n10) * f(t.n00) / m0.powi(3) * correction(m0);
            wk * wk * (arm1 + arm0)
        })
        .sum();
    s / (w * w)
}

pub fn var_mgr_mh(dataset: &StratifiedDataset) -> Result<VarianceEstimate> {
    let w = weight_total(dataset)?;
    Ok(VarianceEstimate::plain(
        sigma2_hat(dataset, w),
        VarianceMethod::MgrMh,
        Estimand::DeltaMh,
    ))
}

/// Unbiased binary-outcome sample variance `m p (1 − p) / (m − 1)`, or 0 for
/// a single subject.
fn sample_var(p: f64, m: f64) -> f64 {
    if m > 1.0 {
        m * p * (1.0 - p) / (m - 1.0)
    } else {
        0.0
    }
}

/// Unbiased estimate of the squared stratum effect.
fn delta_sq_hat(p1: f64, m1: f64, p0: f64, m0: f64) -> f64 {
    p1 * p1 - sample_var(p1, m1) / m1 + p0 * p0 - sample_var(p0, m0) / m0 - 2.0 * p1 * p0
}

pub fn var_mgr_ate(dataset: &StratifiedDataset) -> Result<VarianceEstimate> {
    let w = weight_total(dataset)?;
    let sigma2 = sigma2_hat(dataset, w);
    let d = mh_estimate(dataset)?.value;
    let n = f(dataset.n());
    let pi1 = f(dataset.treated_total()) / n;
    let pi0 = f(dataset.control_total()) / n;
    let pp = pi1 * pi0;
    let mut acc = 0.0;
    for t in included(dataset) {
        let (m1, m0, nn) = (f(t.treated()), f(t.control()), f(t.total()));
        let (p1, p0) = (f(t.n11) / m1, f(t.n10) / m0);
        let dk = p1 - p0;
        let dk2 = delta_sq_hat(p1, m1, p0, m0);
        let spread = (dk2 - 2.0 * dk * d + d * d) * pp * (nn - 1.0) / nn * (nn - 1.0 - (4.0 * nn - 6.0) * pp) / n;
        let level = pp * pp * (nn / n) * (dk2 - d * d);
        acc += spread + level;
    }
    let nu2 = (acc / n) / ((w / n) * (w / n));
    Ok(VarianceEstimate::additive(sigma2, nu2, VarianceMethod::MgrAte))
}

pub fn var_ps(dataset: &StratifiedDataset) -> Result<VarianceEstimate> {
    let d = ps_estimate(dataset)?.value;
    let n = f(dataset.n());
    let (mut sigma2, mut level) = (0.0, 0.0);
    for t in included(dataset) {
        let (m1, m0, nn) = (f(t.treated()), f(t.control()), f(t.total()));
        let (p1, p0) = (f(t.n11) / m1, f(t.n10) / m0);
        let r = nn / n;
        sigma2 += r * r * (sample_var(p1, m1) / m1 + sample_var(p0, m0) / m0);
        level += r * delta_sq_hat(p1, m1, p0, m0);
    }
    let nu2 = (level - d * d) / n;
    Ok(VarianceEstimate::additive(sigma2, nu2, VarianceMethod::Ps))
}

/// Variance of the pooled difference with `m − 1` denominators per arm.
pub fn var_unadjusted(dataset: &StratifiedDataset) -> Result<VarianceEstimate> {
    unadjusted_estimate(dataset)?;
    let (m1, m0) = (f(dataset.treated_total()), f(dataset.control_total()));
    let p1 = dataset.strata().iter().map(|t| f(t.n11)).sum::<f64>() / m1;
    let p0 = dataset.strata().iter().map(|t| f(t.n10)).sum::<f64>() / m0;
    let v = sample_var(p1, m1) / m1 + sample_var(p0, m0) / m0;
    Ok(VarianceEstimate::plain(
        v,
        VarianceMethod::Unadjusted,
        Estimand::DeltaAte,
    ))
}

/// Resampled statistics, one per replicate (`None` where the statistic failed).
///
/// Replicate `b` draws from its own ChaCha stream `(seed, b)`, so the output
/// does not depend on how replicates are scheduled.
pub fn bootstrap_replicates<F>(
    records: &[SubjectRecord],
    replicates: usize,
    seed: u64,
    stat: F,
) -> Result<Vec<Option<f64>>>
where
    F: Fn(&StratifiedDataset) -> Result<f64> + Sync,
{
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let base = crate::tables::aggregate_subjects(records)?;
    let labels: Vec<&str> = base.strata().iter().map(|t| t.label.as_str()).collect();
    let index: std::collections::HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let coded: Vec<(usize, usize)> = records
        .iter()
        .map(|r| {
            let cell = match (r.outcome, r.arm) {
                (true, 1) => 0,
                (true, _) => 1,
                (false, 1) => 2,
                (false, _) => 3,
            };
            (index[r.stratum.as_str()], cell)
        })
        .collect();
    let n = coded.len();
    let k = labels.len();

    let out = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut counts = vec![[0u64; 4]; k];
            for _ in 0..n {
                let (s, c) = coded[rng.random_range(0..n)];
                counts[s][c] += 1;
            }
            let tables: Vec<StratumTable> = counts
                .iter()
                .zip(&labels)
                .filter(|(c, _)| c.iter().sum::<u64>() > 0)
                .map(|(c, l)| StratumTable::new(*l, c[0], c[1], c[2], c[3]))
                .collect();
            StratifiedDataset::from_tables(tables).and_then(|d| stat(&d)).ok()
        })
        .collect();
    Ok(out)
}

/// Sample variance of a bootstrapped statistic and the number of replicates
/// that were skipped.
pub fn bootstrap_variance<F>(records: &[SubjectRecord], replicates: usize, seed: u64, stat: F) -> Result<(f64, usize)>
where
    F: Fn(&StratifiedDataset) -> Result<f64> + Sync,
{
    if replicates < 2 {
        return Err(Error::InvalidArgument(
            "at least two bootstrap replicates are required".into(),
        ));
    }
    let reps = bootstrap_replicates(records, replicates, seed, stat)?;
    let vals: Vec<f64> = reps.iter().flatten().copied().collect();
    if vals.len() < 2 {
        return Err(Error::TooFewValidReplicates {
            valid: vals.len(),
            requested: replicates,
        });
    }
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    let ss: f64 = vals.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((ss / (m - 1.0), replicates - vals.len()))
}

pub fn var_bootstrap(
    records: &[SubjectRecord],
    estimator: Estimator,
    replicates: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    let stat: fn(&StratifiedDataset) -> Result<PointEstimate> = match estimator {
        Estimator::Mh => mh_estimate,
        Estimator::Ps => ps_estimate,
        Estimator::Unadjusted => unadjusted_estimate,
        Estimator::MhMultiarm => {
            return Err(Error::InvalidArgument(
                "bootstrap is available for two-arm estimators only".into(),
            ))
        }
    };
    let (v, skipped) = bootstrap_variance(records, replicates, seed, |d| stat(d).map(|e| e.value))?;
    let mut est = VarianceEstimate::plain(v, VarianceMethod::Bootstrap, Estimand::DeltaAte);
    if skipped > 0 {
        est.warnings.push(VarianceWarning::SkippedReplicates {
            skipped,
            requested: replicates,
        });
    }
    Ok(est)
}

fn margins_of(dataset: &StratifiedDataset, truth: &TrueParameters) -> Result<Vec<(u64, u64)>> {
    if dataset.k() != truth.k {
        return Err(Error::DimensionMismatch {
            expected: truth.k,
            found: dataset.k(),
        });
    }
    Ok(dataset.strata().iter().map(|t| (t.treated(), t.control())).collect())
}

/// Conditional variance of the MH estimator given the arm sizes, with the
/// true response rates plugged in. Strata are matched to `truth` by position.
pub fn theoretical_sigma2(margins: &StratifiedDataset, truth: &TrueParameters) -> Result<f64> {
    theoretical_sigma2_margins(&margins_of(margins, truth)?, truth)
}

/// As [`theoretical_sigma2`], from `(treated, control)` sizes per stratum.
/// Strata missing an arm carry no weight.
pub fn theoretical_sigma2_margins(margins: &[(u64, u64)], truth: &TrueParameters) -> Result<f64> {
    if margins.len() != truth.k {
        return Err(Error::DimensionMismatch {
            expected: truth.k,
            found: margins.len(),
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &(m1, m0)) in margins.iter().enumerate() {
        if m1 == 0 || m0 == 0 {
            continue;
        }
        let (a, b) = (f(m1), f(m0));
        let w = a * b / (a + b);
        let (p1, p0) = (truth.p1[k], truth.p0[k]);
        num += w * w * (p1 * (1.0 - p1) / a + p0 * (1.0 - p0) / b);
        den += w;
    }
    if den == 0.0 {
        return Err(Error::AllStrataDegenerate);
    }
    Ok(num / (den * den))
}

/// Between-stratum variance component for the ATE, with true effects and
/// allocation plugged in.
pub fn theoretical_nu2(margins: &StratifiedDataset, truth: &TrueParameters) -> Result<f64> {
    theoretical_nu2_margins(&margins_of(margins, truth)?, truth)
}

pub fn theoretical_nu2_margins(margins: &[(u64, u64)], truth: &TrueParameters) -> Result<f64> {
    if margins.len() != truth.k {
        return Err(Error::DimensionMismatch {
            expected: truth.k,
            found: margins.len(),
        });
    }
    let n: f64 = margins.iter().map(|&(a, b)| f(a + b)).sum();
    let pp = truth.pi1 * truth.pi0;
    let ate = truth.delta_ate;
    let (mut acc, mut w) = (0.0, 0.0);
    for (k, &(m1, m0)) in margins.iter().enumerate() {
        let nn = f(m1 + m0);
        let dk = truth.delta[k];
        if nn > 0.0 {
            acc += (dk - ate).powi(2) * pp * (nn - 1.0) / nn * (nn - 1.0 - (4.0 * nn - 6.0) * pp) / n;
        }
        acc += pp * pp * truth.rho[k] * (dk * dk - ate * ate);
        if m1 > 0 && m0 > 0 {
            w += f(m1) * f(m0) / nn;
        }
    }
    if w == 0.0 {
        return Err(Error::AllStrataDegenerate);
    }
    Ok((acc / n) / ((w / n) * (w / n)))
}

/// Wald interval `value ± z √variance`, clipped to `[-1, 1]`.
pub fn wald_interval(value: f64, variance: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    if variance < 0.0 {
        return Err(Error::NegativeVariance(variance));
    }
    let half = two_sided_z(level) * variance.sqrt();
    Ok(((value - half).max(-1.0), (value + half).min(1.0)))
}

pub fn confidence_interval(estimate: &PointEstimate, variance: &VarianceEstimate, level: f64) -> Result<(f64, f64)> {
    wald_interval(estimate.value, variance.reported_variance(), level)
}
