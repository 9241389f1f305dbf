//! Point estimators of the risk difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::{MultiArmStratumTable, StratifiedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Estimator {
    Mh,
    Ps,
    Unadjusted,
    MhMultiarm,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mh => "MH",
            Estimator::Ps => "PS",
            Estimator::Unadjusted => "UNADJUSTED",
            Estimator::MhMultiarm => "MH_MULTIARM",
        }
    }
}

/// Per-stratum quantities. Rates and the risk difference are `None` when
/// the corresponding arm is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEffect {
    pub delta_hat: Option<f64>,
    pub p1_hat: Option<f64>,
    pub p0_hat: Option<f64>,
    pub weight_mh: f64,
    pub weight_ps: f64,
    pub included: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub value: f64,
    pub estimator: Estimator,
    pub strata_used: usize,
    pub strata_dropped: usize,
}

pub fn stratum_effects(dataset: &StratifiedDataset) -> Vec<StratumEffect> {
    let n = dataset.n() as f64;
    dataset
        .strata()
        .iter()
        .map(|t| {
            let p1 = t.treated_rate();
            let p0 = t.control_rate();
            let included = t.has_both_arms();
            StratumEffect {
                delta_hat: p1.zip(p0).map(|(a, b)| a - b),
                p1_hat: p1,
                p0_hat: p0,
                weight_mh: mh_weight(t.treated(), t.control(), t.total()),
                weight_ps: t.total() as f64 / n,
                included,
            }
        })
        .collect()
}

pub(crate) fn mh_weight(m1: u64, m0: u64, total: u64) -> f64 {
    if m1 == 0 || m0 == 0 {
        0.0
    } else {
        (m1 as f64) * (m0 as f64) / total as f64
    }
}

/// One arm-pair slice of a stratum: responders and size in arm j, then arm l,
/// then the stratum total.
type ArmPair = (u64, u64, u64, u64, u64);

/// Shared by the two-arm and multi-arm paths so they agree to the bit.
fn weighted_rd(pairs: impl Iterator<Item = ArmPair>) -> (f64, f64, usize, usize) {
    let (mut num, mut den) = (0.0, 0.0);
    let (mut used, mut dropped) = (0, 0);
    for (rj, mj, rl, ml, total) in pairs {
        if mj == 0 || ml == 0 {
            dropped += 1;
            continue;
        }
        let w = mh_weight(mj, ml, total);
        let d = rj as f64 / mj as f64 - rl as f64 / ml as f64;
        num += w * d;
        den += w;
        used += 1;
    }
    (num, den, used, dropped)
}

pub(crate) fn sum_mh_weights(dataset: &StratifiedDataset) -> f64 {
    dataset
        .strata()
        .iter()
        .map(|t| mh_weight(t.treated(), t.control(), t.total()))
        .sum()
}

pub fn mh_estimate(dataset: &StratifiedDataset) -> Result<PointEstimate> {
    let pairs = dataset
        .strata()
        .iter()
        .map(|t| (t.n11, t.treated(), t.n10, t.control(), t.total()));
    let (num, den, used, dropped) = weighted_rd(pairs);
    if den == 0.0 {
        return Err(Error::AllStrataDegenerate);
    }
    Ok(PointEstimate {
        value: (num / den).clamp(-1.0, 1.0),
        estimator: Estimator::Mh,
        strata_used: used,
        strata_dropped: dropped,
    })
}

pub fn ps_estimate(dataset: &StratifiedDataset) -> Result<PointEstimate> {
    let n = dataset.n() as f64;
    let mut value = 0.0;
    let mut used = 0;
    for t in dataset.strata() {
        if let (Some(p1), Some(p0)) = (t.treated_rate(), t.control_rate()) {
            value += t.total() as f64 / n * (p1 - p0);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllStrataDegenerate);
    }
    Ok(PointEstimate {
        value: value.clamp(-1.0, 1.0),
        estimator: Estimator::Ps,
        strata_used: used,
        strata_dropped: dataset.k() - used,
    })
}

pub fn unadjusted_estimate(dataset: &StratifiedDataset) -> Result<PointEstimate> {
    let (m1, m0) = (dataset.treated_total(), dataset.control_total());
    if m1 == 0 {
        return Err(Error::EmptyArm("treated"));
    }
    if m0 == 0 {
        return Err(Error::EmptyArm("control"));
    }
    let r1: u64 = dataset.strata().iter().map(|t| t.n11).sum();
    let r0: u64 = dataset.strata().iter().map(|t| t.n10).sum();
    Ok(PointEstimate {
        value: r1 as f64 / m1 as f64 - r0 as f64 / m0 as f64,
        estimator: Estimator::Unadjusted,
        strata_used: dataset.k(),
        strata_dropped: 0,
    })
}

/// MH risk difference of arm `j` against arm `l` in a J-arm trial.
pub fn mh_estimate_pair(strata: &[MultiArmStratumTable], j: usize, l: usize) -> Result<PointEstimate> {
    if j == l {
        return Err(Error::SameArm(j));
    }
    let arms = strata.first().map_or(0, MultiArmStratumTable::arms);
    if strata.iter().any(|s| s.arms() != arms) {
        return Err(Error::InvalidArgument("strata disagree on the number of arms".into()));
    }
    for a in [j, l] {
        if a >= arms {
            return Err(Error::ArmOutOfRange {
                arm: a as u32,
                arms: arms as u32,
            });
        }
    }
    let pairs = strata
        .iter()
        .map(|s| (s.responders[j], s.totals[j], s.responders[l], s.totals[l], s.total()));
    let (num, den, used, dropped) = weighted_rd(pairs);
    if den == 0.0 {
        return Err(Error::AllStrataDegenerate);
    }
    Ok(PointEstimate {
        value: (num / den).clamp(-1.0, 1.0),
        estimator: Estimator::MhMultiarm,
        strata_used: used,
        strata_dropped: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::{calgb, StratumTable};

    fn ds(tables: Vec<StratumTable>) -> StratifiedDataset {
        StratifiedDataset::from_tables(tables).unwrap()
    }

    #[test]
    fn single_stratum_effects() {
        let d = ds(vec![StratumTable::new("a", 3, 1, 1, 3)]);
        let e = &stratum_effects(&d)[0];
        assert_eq!(e.delta_hat, Some(0.5));
        assert_eq!(e.weight_mh, 2.0);
        assert_eq!(e.weight_ps, 1.0);
        assert!(e.included);
        assert_eq!(mh_estimate(&d).unwrap().value, 0.5);
        assert_eq!(ps_estimate(&d).unwrap().value, 0.5);
        assert_eq!(unadjusted_estimate(&d).unwrap().value, 0.5);
    }

    #[test]
    fn zero_arm_stratum_is_excluded() {
        let d = ds(vec![
            StratumTable::new("a", 3, 1, 1, 3),
            StratumTable::new("b", 2, 0, 1, 0),
        ]);
        let e = &stratum_effects(&d)[1];
        assert!(!e.included);
        assert_eq!(e.weight_mh, 0.0);
        assert_eq!(e.delta_hat, None);
        assert_eq!(e.p0_hat, None);
        let mh = mh_estimate(&d).unwrap();
        assert_eq!((mh.value, mh.strata_used, mh.strata_dropped), (0.5, 1, 1));
    }

    #[test]
    fn calgb_institution_sixteen() {
        let e = &stratum_effects(&calgb::dataset())[15];
        assert!(e.delta_hat.unwrap().abs() < 0.005);
        assert!((e.weight_mh - 108.0 / 21.0).abs() < 1e-15);
        assert!((e.weight_mh - 5.14).abs() < 0.005);
    }

    #[test]
    fn two_stratum_weighted_average() {
        // w = 2, δ = 0.5 and w = 1, δ = 1
        let d = ds(vec![
            StratumTable::new("a", 3, 1, 1, 3),
            StratumTable::new("b", 1, 0, 0, 1),
        ]);
        let e = stratum_effects(&d);
        assert_eq!((e[1].weight_mh, e[1].delta_hat), (0.5, Some(1.0)));
        let d = ds(vec![
            StratumTable::new("a", 3, 1, 1, 3),
            StratumTable::new("b", 2, 0, 0, 2),
        ]);
        assert!((mh_estimate(&d).unwrap().value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ps_equal_sizes() {
        let d = ds(vec![
            StratumTable::new("a", 3, 1, 1, 3),
            StratumTable::new("b", 4, 0, 0, 4),
        ]);
        assert!((ps_estimate(&d).unwrap().value - 0.75).abs() < 1e-15);
    }

    #[test]
    fn pooled_unadjusted() {
        let d = ds(vec![
            StratumTable::new("a", 3, 1, 1, 3),
            StratumTable::new("b", 1, 1, 1, 1),
        ]);
        assert!((unadjusted_estimate(&d).unwrap().value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let d = ds(vec![StratumTable::new("a", 1, 0, 1, 0)]);
        assert_eq!(mh_estimate(&d), Err(Error::AllStrataDegenerate));
        assert_eq!(ps_estimate(&d), Err(Error::AllStrataDegenerate));
        assert_eq!(unadjusted_estimate(&d), Err(Error::EmptyArm("control")));
    }

    #[test]
    fn pair_reduces_to_two_arm() {
        let d = calgb::dataset();
        let multi: Vec<MultiArmStratumTable> = d.strata().iter().map(Into::into).collect();
        let a = mh_estimate_pair(&multi, 1, 0).unwrap();
        let b = mh_estimate(&d).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(mh_estimate_pair(&multi, 1, 1), Err(Error::SameArm(1)));
    }

    #[test]
    fn three_arm_pairs() {
        let one = MultiArmStratumTable::new("s", vec![5, 5, 2], vec![10, 10, 10]).unwrap();
        assert_eq!(mh_estimate_pair(&[one], 0, 1).unwrap().value, 0.0);

        // hand evaluation: stratum 1 w = 4·2/9, δ = 3/4 − 1/2; stratum 2 w = 2·6/10, δ = 1/2 − 1/6
        let s1 = MultiArmStratumTable::new("x", vec![3, 1, 2], vec![4, 2, 3]).unwrap();
        let s2 = MultiArmStratumTable::new("y", vec![1, 1, 0], vec![2, 6, 2]).unwrap();
        let w1 = 8.0 / 9.0;
        let w2 = 12.0 / 10.0;
        let expect = (w1 * 0.25 + w2 * (1.0 / 3.0)) / (w1 + w2);
        let got = mh_estimate_pair(&[s1, s2], 0, 1).unwrap().value;
        assert!((got - expect).abs() < 1e-15);
    }
}
