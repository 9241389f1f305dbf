use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::sample_truncnorm;
use crate::error::{Error, Result};
use crate::variance::TrueParameters;

pub const LARGE_RHO: [f64; 3] = [0.2, 0.3, 0.5];
pub const MIXED_LARGE_RHO: [f64; 3] = [0.1, 0.15, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    /// Three strata with fixed probabilities.
    Large,
    /// Many small strata with probabilities drawn once.
    Sparse { strata: usize },
    /// Three fixed large strata holding half the mass plus drawn small strata.
    Mixed { small_strata: usize },
}

impl Regime {
    pub fn strata(&self) -> usize {
        match *self {
            Regime::Large => 3,
            Regime::Sparse { strata } => strata,
            Regime::Mixed { small_strata } => 3 + small_strata,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EffectPattern {
    Common4a,
    Varying4b,
    Varying4c,
    /// Every response probability is 0 or 1 and every effect is -1, 0 or 1.
    Extreme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Generator {
    /// Outcomes drawn from the arm's response probability.
    Binomial,
    /// A potential-outcome pair drawn per subject, arm picks the observed one.
    IndividualRd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Probability of assignment to treatment.
    pub pi1: f64,
    pub regime: Regime,
    pub effect: EffectPattern,
    pub generator: Generator,
    pub generation_seed: u64,
    pub run_seed: u64,
}

pub fn sparse_strata_for(n: usize) -> usize {
    match n {
        500 => 30,
        300 => 18,
        200 => 15,
        _ => (n / 17).max(2),
    }
}

pub fn mixed_small_strata_for(n: usize) -> usize {
    match n {
        500 => 15,
        300 => 9,
        200 => 12,
        _ => (n / 33).max(1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegimeCode {
    Large,
    Sparse,
    Mixed,
}

/// One chosen level per factor; parsed from tokens such as `1a` or `4c-ird`.
#[derive(Debug, Clone, Default)]
pub struct FactorSelection {
    sizes: Vec<usize>,
    allocations: Vec<f64>,
    regimes: Vec<RegimeCode>,
    effects: Vec<(EffectPattern, Generator)>,
}

impl FactorSelection {
    /// Comma-separated factor levels. Factors not mentioned range over all
    /// their levels, so an empty selection is the full 54-scenario grid.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut sel = FactorSelection::default();
        for raw in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let tok = raw.to_ascii_lowercase();
            match tok.as_str() {
                "1a" => sel.sizes.push(500),
                "1b" => sel.sizes.push(300),
                "1c" => sel.sizes.push(200),
                "2a" => sel.allocations.push(2.0 / 3.0),
                "2b" => sel.allocations.push(0.5),
                "3a" => sel.regimes.push(RegimeCode::Large),
                "3b" => sel.regimes.push(RegimeCode::Sparse),
                "3c" => sel.regimes.push(RegimeCode::Mixed),
                "4a" => sel.effects.push((EffectPattern::Common4a, Generator::Binomial)),
                "4b" => sel.effects.push((EffectPattern::Varying4b, Generator::Binomial)),
                "4c" => sel.effects.push((EffectPattern::Varying4c, Generator::Binomial)),
                "4a-ird" => sel.effects.push((EffectPattern::Common4a, Generator::IndividualRd)),
                "4b-ird" => sel.effects.push((EffectPattern::Varying4b, Generator::IndividualRd)),
                "4c-ird" => sel.effects.push((EffectPattern::Varying4c, Generator::IndividualRd)),
                "4x" => sel.effects.push((EffectPattern::Extreme, Generator::IndividualRd)),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown factor level `{raw}` (expected 1a-1c, 2a-2b, 3a-3c, 4a-4c, 4a-ird..4c-ird or 4x)"
                    )))
                }
            }
        }
        if sel.sizes.is_empty() {
            sel.sizes = vec![500, 300, 200];
        }
        if sel.allocations.is_empty() {
            sel.allocations = vec![2.0 / 3.0, 0.5];
        }
        if sel.regimes.is_empty() {
            sel.regimes = vec![RegimeCode::Large, RegimeCode::Sparse, RegimeCode::Mixed];
        }
        if sel.effects.is_empty() {
            sel.effects = vec![
                (EffectPattern::Common4a, Generator::Binomial),
                (EffectPattern::Varying4b, Generator::Binomial),
                (EffectPattern::Varying4c, Generator::Binomial),
            ];
        }
        Ok(sel)
    }

    /// Scenarios in factor order: effect, then regime, then size, then allocation.
    pub fn scenarios(&self, generation_seed: u64, run_seed: u64) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &(effect, generator) in &self.effects {
            for &regime in &self.regimes {
                for &n in &self.sizes {
                    for &pi1 in &self.allocations {
                        let regime = match regime {
                            RegimeCode::Large => Regime::Large,
                            RegimeCode::Sparse => Regime::Sparse {
                                strata: sparse_strata_for(n),
                            },
                            RegimeCode::Mixed => Regime::Mixed {
                                small_strata: mixed_small_strata_for(n),
                            },
                        };
                        out.push(ScenarioConfig {
                            n,
                            pi1,
                            regime,
                            effect,
                            generator,
                            generation_seed,
                            run_seed,
                        });
                    }
                }
            }
        }
        out
    }
}

impl ScenarioConfig {
    /// A single scenario from one level of each factor, e.g. `1a,2a,3b,4c`.
    pub fn from_factors(spec: &str, generation_seed: u64, run_seed: u64) -> Result<Self> {
        let sel = FactorSelection::parse(spec)?;
        let all = sel.scenarios(generation_seed, run_seed);
        match all.as_slice() {
            [one] => Ok(*one),
            _ => Err(Error::InvalidArgument(format!(
                "`{spec}` selects {} scenarios; name one level of every factor",
                all.len()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "allocation probability {} must lie strictly between 0 and 1",
                self.pi1
            )));
        }
        match self.regime {
            Regime::Sparse { strata: 0 } => Err(Error::InvalidArgument(
                "sparse regime needs at least one stratum".into(),
            )),
            Regime::Mixed { small_strata: 0 } => Err(Error::InvalidArgument(
                "mixed regime needs at least one small stratum".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.n {
            500 => write!(f, "1a")?,
            300 => write!(f, "1b")?,
            200 => write!(f, "1c")?,
            n => write!(f, "n{n}")?,
        }
        if (self.pi1 - 2.0 / 3.0).abs() < 1e-12 {
            write!(f, "-2a")?;
        } else if self.pi1 == 0.5 {
            write!(f, "-2b")?;
        } else {
            write!(f, "-pi{}", self.pi1)?;
        }
        match self.regime {
            Regime::Large => write!(f, "-3a")?,
            Regime::Sparse { .. } => write!(f, "-3b")?,
            Regime::Mixed { .. } => write!(f, "-3c")?,
        }
        let effect = match self.effect {
            EffectPattern::Common4a => "4a",
            EffectPattern::Varying4b => "4b",
            EffectPattern::Varying4c => "4c",
            EffectPattern::Extreme => return write!(f, "-4x"),
        };
        write!(f, "-{effect}")?;
        if self.generator == Generator::IndividualRd {
            write!(f, "-ird")?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, a: f64, b: f64) -> f64 {
    a + (b - a) * rng.random::<f64>()
}

fn drawn_rho(rng: &mut impl Rng, k: usize, mass: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.2, 0.5)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|r| mass * r / s).collect()
}

fn large_effects(effect: EffectPattern) -> ([f64; 3], [f64; 3]) {
    match effect {
        EffectPattern::Common4a => ([0.5, 0.2, 0.6], [-0.1; 3]),
        EffectPattern::Varying4b => ([0.1, 0.1, 0.7], [0.0, 0.0, 0.2]),
        EffectPattern::Varying4c => ([0.8, 0.9, 0.5], [-0.5, -0.3, 0.2]),
        EffectPattern::Extreme => ([0.0, 1.0, 0.0], [1.0, -1.0, 0.0]),
    }
}

fn sparse_effects(rng: &mut impl Rng, effect: EffectPattern, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p0 = Vec::with_capacity(k);
    let mut delta = Vec::with_capacity(k);
    match effect {
        EffectPattern::Common4a => {
            for _ in 0..k {
                p0.push(uniform(rng, 0.4, 0.7));
                delta.push(-0.1);
            }
        }
        EffectPattern::Varying4b => {
            let half = k / 2;
            for i in 0..k {
                if i < half {
                    p0.push(uniform(rng, 0.1, 0.2));
                    delta.push(sample_truncnorm(0.0, 0.1, 0.05, 0.05, rng)?);
                } else {
                    p0.push(uniform(rng, 0.7, 0.8));
                    delta.push(sample_truncnorm(0.1, 0.2, 0.15, 0.05, rng)?);
                }
            }
        }
        EffectPattern::Varying4c => {
            let two_thirds = (2 * k + 1) / 3;
            for i in 0..k {
                if i < two_thirds {
                    p0.push(uniform(rng, 0.8, 0.9));
                    delta.push(uniform(rng, -0.6, -0.5));
                } else {
                    p0.push(uniform(rng, 0.4, 0.5));
                    delta.push(uniform(rng, 0.1, 0.2));
                }
            }
        }
        EffectPattern::Extreme => {
            for _ in 0..k {
                let d = match rng.random_range(0..3u32) {
                    0 => -1.0,
                    1 => 0.0,
                    _ => 1.0,
                };
                let base = match d {
                    x if x < 0.0 => 1.0,
                    x if x > 0.0 => 0.0,
                    _ => {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                p0.push(base);
                delta.push(d);
            }
        }
    }
    Ok((p0, delta))
}

/// Draws the scenario's ground truth. Random pieces come from a single
/// stream seeded by `generation_seed`: stratum probabilities first, then
/// response rates and effects stratum by stratum.
pub fn build_truth(config: &ScenarioConfig) -> Result<TrueParameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.generation_seed);
    let (rho, p0, delta) = match config.regime {
        Regime::Large => {
            let (p0, d) = large_effects(config.effect);
            (LARGE_RHO.to_vec(), p0.to_vec(), d.to_vec())
        }
        Regime::Sparse { strata } => {
            let rho = drawn_rho(&mut rng, strata, 1.0);
            let (p0, d) = sparse_effects(&mut rng, config.effect, strata)?;
            (rho, p0, d)
        }
        Regime::Mixed { small_strata } => {
            let mut rho = MIXED_LARGE_RHO.to_vec();
            rho.extend(drawn_rho(&mut rng, small_strata, 0.5));
            let (lp0, ld) = large_effects(config.effect);
            let (sp0, sd) = sparse_effects(&mut rng, config.effect, small_strata)?;
            let p0 = lp0.iter().copied().chain(sp0).collect();
            let d = ld.iter().copied().chain(sd).collect();
            (rho, p0, d)
        }
    };
    let rho = renormalize(rho);
    TrueParameters::new(rho, config.pi1, p0, delta)
}

/// Absorbs rounding so the probabilities sum to 1 to within an ulp or two.
fn renormalize(rho: Vec<f64>) -> Vec<f64> {
    let s: f64 = rho.iter().sum();
    rho.into_iter().map(|r| r / s).collect()
}
