use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::SubjectRecord;
use crate::variance::TrueParameters;

pub const REJECTION_CAP: u64 = 1_000_000;

/// Normal(mu, sigma²) conditioned on `[a, b]`, by rejection.
pub fn sample_truncnorm<R: Rng + ?Sized>(a: f64, b: f64, mu: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    if !(a < b) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncated normal needs a < b and sigma > 0 (got a={a}, b={b}, sigma={sigma})"
        )));
    }
    for _ in 0..REJECTION_CAP {
        let z: f64 = rng.sample(StandardNormal);
        let x = mu + sigma * z;
        if (a..=b).contains(&x) {
            return Ok(x);
        }
    }
    Err(Error::RejectionCap(REJECTION_CAP))
}

/// Shares of the four potential-outcome types `(Y⁽⁰⁾, Y⁽¹⁾)` in a stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomeMix {
    /// (1, 0): treatment removes the response.
    pub harmed: f64,
    /// (0, 1): treatment produces the response.
    pub helped: f64,
    /// (0, 0)
    pub never: f64,
    /// (1, 1)
    pub always: f64,
}

impl PotentialOutcomeMix {
    pub fn new(harmed: f64, helped: f64, never: f64, always: f64) -> Result<Self> {
        let m = PotentialOutcomeMix {
            harmed,
            helped,
            never,
            always,
        };
        m.check(0)?;
        Ok(m)
    }

    fn check(&self, stratum: usize) -> Result<()> {
        let parts = [self.harmed, self.helped, self.never, self.always];
        if parts.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidLambda {
                stratum,
                reason: "proportions must be non-negative".into(),
            });
        }
        let s: f64 = parts.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLambda {
                stratum,
                reason: format!("proportions sum to {s}, not 1"),
            });
        }
        Ok(())
    }

    /// The mix with the given control rate and effect that never has both
    /// helped and harmed subjects.
    pub fn from_marginals(p0: f64, delta: f64) -> Result<Self> {
        let clean = |x: f64| if x.abs() < 1e-12 { 0.0 } else { x };
        let (harmed, helped, never, always) = if delta >= 0.0 {
            (0.0, delta, clean(1.0 - p0 - delta), p0)
        } else {
            (-delta, 0.0, clean(1.0 - p0), clean(p0 + delta))
        };
        PotentialOutcomeMix::new(harmed, helped, never, always)
    }

    pub fn p0(&self) -> f64 {
        self.harmed + self.always
    }

    pub fn delta(&self) -> f64 {
        self.helped - self.harmed
    }
}

/// Inverse-CDF lookup on a cumulative table; the last bucket absorbs rounding.
fn bucket(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Per-subject generator shared by both data models. `sink` receives
/// `(stratum, treated, responder)`.
pub(crate) fn draw_binomial<R: Rng>(
    truth: &TrueParameters,
    n: usize,
    rng: &mut R,
    mut sink: impl FnMut(usize, bool, bool),
) {
    let cum = cumulative(&truth.rho);
    for _ in 0..n {
        let z = bucket(&cum, rng.random::<f64>());
        let treated = rng.random::<f64>() < truth.pi1;
        let p = if treated { truth.p1[z] } else { truth.p0[z] };
        let y = rng.random::<f64>() < p;
        sink(z, treated, y);
    }
}

pub(crate) fn draw_individual_rd<R: Rng>(
    mix: &[PotentialOutcomeMix],
    rho: &[f64],
    pi1: f64,
    n: usize,
    rng: &mut R,
    mut sink: impl FnMut(usize, bool, bool),
) {
    let cum = cumulative(rho);
    let tables: Vec<Vec<f64>> = mix
        .iter()
        .map(|m| cumulative(&[m.harmed, m.helped, m.never, m.always]))
        .collect();
    for _ in 0..n {
        let z = bucket(&cum, rng.random::<f64>());
        let (y0, y1) = match bucket(&tables[z], rng.random::<f64>()) {
            0 => (true, false),
            1 => (false, true),
            2 => (false, false),
            _ => (true, true),
        };
        let treated = rng.random::<f64>() < pi1;
        sink(z, treated, if treated { y1 } else { y0 });
    }
}

pub(crate) fn stratum_label(k: usize) -> String {
    format!("z{}", k + 1)
}

fn record(z: usize, treated: bool, y: bool) -> SubjectRecord {
    SubjectRecord::new(stratum_label(z), u32::from(treated), y)
}

/// `n` subjects drawn i.i.d. from the super-population in `truth`.
pub fn sample_trial(truth: &TrueParameters, n: usize, seed: u64) -> Vec<SubjectRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    draw_binomial(truth, n, &mut rng, |z, a, y| out.push(record(z, a, y)));
    out
}

/// Checks a potential-outcome specification against the stratum probabilities.
pub fn check_mix(mix: &[PotentialOutcomeMix], rho: &[f64], pi1: f64) -> Result<()> {
    if mix.len() != rho.len() {
        return Err(Error::DimensionMismatch {
            expected: rho.len(),
            found: mix.len(),
        });
    }
    if !(pi1 > 0.0 && pi1 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "allocation probability {pi1} outside (0, 1)"
        )));
    }
    for (k, m) in mix.iter().enumerate() {
        m.check(k)?;
    }
    Ok(())
}

/// `n` subjects whose potential-outcome pairs come from `mix`; treatment then
/// reveals one of the pair.
pub fn sample_trial_individual_rd(
    mix: &[PotentialOutcomeMix],
    rho: &[f64],
    pi1: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<SubjectRecord>> {
    check_mix(mix, rho, pi1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    draw_individual_rd(mix, rho, pi1, n, &mut rng, |z, a, y| out.push(record(z, a, y)));
    Ok(out)
}

pub fn mix_for_truth(truth: &TrueParameters) -> Result<Vec<PotentialOutcomeMix>> {
    truth
        .p0
        .iter()
        .zip(&truth.delta)
        .enumerate()
        .map(|(k, (&p0, &d))| {
            PotentialOutcomeMix::from_marginals(p0, d).map_err(|e| match e {
                Error::InvalidLambda { reason, .. } => Error::InvalidLambda { stratum: k, reason },
                other => other,
            })
        })
        .collect()
}
