use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{build_truth, Generator, ScenarioConfig};
use super::sampling::{draw_binomial, draw_individual_rd, mix_for_truth, stratum_label, PotentialOutcomeMix};
use crate::error::{Error, Result};
use crate::estimators::{mh_estimate, ps_estimate, unadjusted_estimate, Estimator};
use crate::hypothesis::mh_test;
use crate::round_half_even;
use crate::tables::{expand_records, StratifiedDataset, StratumTable};
use crate::variance::{
    bootstrap_variance, var_gr, var_mgr_ate, var_mgr_mh, var_ps, var_sato, var_unadjusted, wald_interval, Estimand,
    TrueParameters, VarianceEstimate, VarianceMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Methods {
    /// Bootstrap replicates per simulated trial; 0 leaves the bootstrap out.
    pub bootstrap: usize,
    pub level: f64,
}

impl Default for Methods {
    fn default() -> Self {
        Methods {
            bootstrap: 0,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub estimator: Estimator,
    pub method: VarianceMethod,
    pub estimand: Estimand,
}

/// Estimator and variance pairings evaluated in each trial.
pub fn cell_keys(methods: &Methods) -> Vec<CellKey> {
    use Estimand::*;
    use VarianceMethod as V;
    let key = |estimator, method, estimand| CellKey {
        estimator,
        method,
        estimand,
    };
    let mut out = vec![
        key(Estimator::Mh, V::Gr, DeltaMh),
        key(Estimator::Mh, V::Sato, DeltaMh),
        key(Estimator::Mh, V::MgrMh, DeltaMh),
    ];
    if methods.bootstrap > 0 {
        out.push(key(Estimator::Mh, V::Bootstrap, DeltaMh));
    }
    out.extend([
        key(Estimator::Mh, V::Gr, DeltaAte),
        key(Estimator::Mh, V::Sato, DeltaAte),
        key(Estimator::Mh, V::MgrAte, DeltaAte),
    ]);
    if methods.bootstrap > 0 {
        out.push(key(Estimator::Mh, V::Bootstrap, DeltaAte));
    }
    out.extend([
        key(Estimator::Unadjusted, V::Unadjusted, DeltaAte),
        key(Estimator::Ps, V::Ps, DeltaAte),
    ]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellDraw {
    pub estimate: f64,
    pub se: f64,
    pub covered: bool,
    pub reject: bool,
}

/// Everything kept from one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    /// `(treated, control)` per stratum, including strata left empty.
    pub margins: Vec<(u64, u64)>,
    pub delta_mh: Option<f64>,
    pub cells: Vec<Option<CellDraw>>,
    pub sigma2_hat: Option<f64>,
    pub nu2_hat: Option<f64>,
    pub mh_test_reject: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub estimator: Estimator,
    pub method: VarianceMethod,
    pub estimand: Estimand,
    pub successes: usize,
    pub failures: usize,
    pub bias: Option<f64>,
    /// Monte Carlo standard error of `bias`.
    pub bias_se: Option<f64>,
    pub sd: Option<f64>,
    pub mean_se: Option<f64>,
    pub cp: Option<f64>,
    pub power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub label: String,
    pub config: ScenarioConfig,
    pub methods: Methods,
    pub runs: usize,
    pub truth: TrueParameters,
    pub truth_mh_avg: Option<f64>,
    pub truth_ate: f64,
    pub cells: Vec<CellSummary>,
    pub mh_test_rejection: Option<f64>,
    pub nu2_hat_mean: Option<f64>,
    pub nu2_hat_mc_se: Option<f64>,
}

impl ScenarioSummary {
    pub fn cell(&self, estimator: Estimator, method: VarianceMethod, estimand: Estimand) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.estimator == estimator && c.method == method && c.estimand == estimand)
    }

    pub fn has_failures(&self) -> bool {
        self.cells.iter().any(|c| c.failures > 0)
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 picks the default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

struct Context<'a> {
    config: &'a ScenarioConfig,
    truth: &'a TrueParameters,
    mix: Option<Vec<PotentialOutcomeMix>>,
    methods: &'a Methods,
    keys: Vec<CellKey>,
}

fn draw(
    ctx: &Context<'_>,
    estimate: Option<f64>,
    variance: Result<VarianceEstimate>,
    truth: Option<f64>,
) -> Option<CellDraw> {
    let (estimate, truth) = (estimate?, truth?);
    let v = variance.ok()?;
    let se = v.se()?;
    let (lo, hi) = wald_interval(estimate, se * se, ctx.methods.level).ok()?;
    Some(CellDraw {
        estimate,
        se,
        covered: lo <= truth && truth <= hi,
        reject: lo > 0.0 || hi < 0.0,
    })
}

fn margins_by_label(d: &StratifiedDataset, k: usize) -> Vec<(u64, u64)> {
    let mut m = vec![(0, 0); k];
    for t in d.strata() {
        if let Some(i) = t.label.strip_prefix('z').and_then(|s| s.parse::<usize>().ok()) {
            m[i - 1] = (t.treated(), t.control());
        }
    }
    m
}

fn run_one(ctx: &Context<'_>, index: usize) -> Replicate {
    let k = ctx.truth.k;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.run_seed);
    rng.set_stream(index as u64);
    let mut counts = vec![[0u64; 4]; k];
    let tally = |z: usize, treated: bool, y: bool| {
        let cell = match (y, treated) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        counts[z][cell] += 1;
    };
    match &ctx.mix {
        Some(mix) => draw_individual_rd(mix, &ctx.truth.rho, ctx.truth.pi1, ctx.config.n, &mut rng, tally),
        None => draw_binomial(ctx.truth, ctx.config.n, &mut rng, tally),
    }
    let boot_seed: u64 = rng.random();

    let margins: Vec<(u64, u64)> = counts.iter().map(|c| (c[0] + c[2], c[1] + c[3])).collect();
    let tables: Vec<StratumTable> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.iter().sum::<u64>() > 0)
        .map(|(i, c)| StratumTable::new(stratum_label(i), c[0], c[1], c[2], c[3]))
        .collect();
    let dataset = StratifiedDataset::from_tables(tables);
    let delta_mh = ctx.truth.delta_mh(&margins);
    let ate = Some(ctx.truth.delta_ate);

    let Ok(d) = dataset else {
        return Replicate {
            index,
            margins,
            delta_mh,
            cells: vec![None; ctx.keys.len()],
            sigma2_hat: None,
            nu2_hat: None,
            mh_test_reject: None,
        };
    };

    let mh = mh_estimate(&d).ok().map(|e| e.value);
    let records = (ctx.methods.bootstrap > 0).then(|| expand_records(&d));
    let boot = |target: Estimand| -> Result<VarianceEstimate> {
        let recs = records.as_deref().unwrap_or_default();
        let (v, _) = match target {
            Estimand::DeltaMh => bootstrap_variance(recs, ctx.methods.bootstrap, boot_seed, |b| {
                let e = mh_estimate(b)?.value;
                let t = ctx
                    .truth
                    .delta_mh(&margins_by_label(b, k))
                    .ok_or(Error::AllStrataDegenerate)?;
                Ok(e - t)
            })?,
            Estimand::DeltaAte => {
                bootstrap_variance(recs, ctx.methods.bootstrap, boot_seed, |b| Ok(mh_estimate(b)?.value))?
            }
        };
        Ok(VarianceEstimate {
            variance: v,
            method: VarianceMethod::Bootstrap,
            estimand: target,
            components: None,
            warnings: Vec::new(),
        })
    };

    let ate_var = var_mgr_ate(&d);
    let (sigma2_hat, nu2_hat) = match &ate_var {
        Ok(v) => v.components.map_or((None, None), |(s, n)| (Some(s), Some(n))),
        Err(_) => (None, None),
    };

    let cells = ctx
        .keys
        .iter()
        .map(|key| {
            use VarianceMethod as V;
            let truth = match key.estimand {
                Estimand::DeltaMh => delta_mh,
                Estimand::DeltaAte => ate,
            };
            match (key.estimator, key.method) {
                (Estimator::Mh, V::Gr) => draw(ctx, mh, var_gr(&d), truth),
                (Estimator::Mh, V::Sato) => draw(ctx, mh, var_sato(&d), truth),
                (Estimator::Mh, V::MgrMh) => draw(ctx, mh, var_mgr_mh(&d), truth),
                (Estimator::Mh, V::MgrAte) => draw(ctx, mh, ate_var.clone(), truth),
                (Estimator::Mh, V::Bootstrap) => draw(ctx, mh, boot(key.estimand), truth),
                (Estimator::Unadjusted, _) => {
                    let e = unadjusted_estimate(&d).ok().map(|e| e.value);
                    draw(ctx, e, var_unadjusted(&d), truth)
                }
                (Estimator::Ps, _) => {
                    let e = ps_estimate(&d).ok().map(|e| e.value);
                    draw(ctx, e, var_ps(&d), truth)
                }
                _ => None,
            }
        })
        .collect();

    let alpha = 1.0 - ctx.methods.level;
    Replicate {
        index,
        margins,
        delta_mh,
        cells,
        sigma2_hat,
        nu2_hat,
        mh_test_reject: mh_test(&d).ok().map(|t| t.p_value < alpha),
    }
}

/// Simulates `runs` trials from `truth`. Trial `r` uses ChaCha stream `r`
/// under `config.run_seed`, and results come back in trial order, so the
/// output does not depend on the worker count.
pub fn run_replicates(
    config: &ScenarioConfig,
    truth: &TrueParameters,
    runs: usize,
    methods: &Methods,
) -> Result<Vec<Replicate>> {
    config.validate()?;
    if !(methods.level > 0.0 && methods.level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level {} outside (0, 1)",
            methods.level
        )));
    }
    let mix = match config.generator {
        Generator::IndividualRd => Some(mix_for_truth(truth)?),
        Generator::Binomial => None,
    };
    let ctx = Context {
        config,
        truth,
        mix,
        methods,
        keys: cell_keys(methods),
    };
    Ok((0..runs).into_par_iter().map(|r| run_one(&ctx, r)).collect())
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() as f64 - 1.0)).sqrt())
}

fn rate(flags: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for f in flags {
        total += 1;
        hits += usize::from(f);
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn summarize(
    config: &ScenarioConfig,
    truth: &TrueParameters,
    methods: &Methods,
    replicates: &[Replicate],
) -> ScenarioSummary {
    let keys = cell_keys(methods);
    let cells = keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let draws: Vec<(CellDraw, f64)> = replicates
                .iter()
                .filter_map(|r| {
                    let t = match key.estimand {
                        Estimand::DeltaMh => r.delta_mh?,
                        Estimand::DeltaAte => truth.delta_ate,
                    };
                    r.cells[i].map(|c| (c, t))
                })
                .collect();
            let est: Vec<f64> = draws.iter().map(|(c, _)| c.estimate).collect();
            let dev: Vec<f64> = draws.iter().map(|(c, t)| c.estimate - t).collect();
            let ses: Vec<f64> = draws.iter().map(|(c, _)| c.se).collect();
            CellSummary {
                estimator: key.estimator,
                method: key.method,
                estimand: key.estimand,
                successes: draws.len(),
                failures: replicates.len() - draws.len(),
                bias: mean(&dev),
                bias_se: sd(&dev).map(|s| s / (dev.len() as f64).sqrt()),
                sd: sd(&est),
                mean_se: mean(&ses),
                cp: rate(draws.iter().map(|(c, _)| c.covered)),
                power: rate(draws.iter().map(|(c, _)| c.reject)),
            }
        })
        .collect();
    let mh_truths: Vec<f64> = replicates.iter().filter_map(|r| r.delta_mh).collect();
    let nu2: Vec<f64> = replicates.iter().filter_map(|r| r.nu2_hat).collect();
    ScenarioSummary {
        label: config.label(),
        config: *config,
        methods: *methods,
        runs: replicates.len(),
        truth: truth.clone(),
        truth_mh_avg: mean(&mh_truths),
        truth_ate: truth.delta_ate,
        cells,
        mh_test_rejection: rate(replicates.iter().filter_map(|r| r.mh_test_reject)),
        nu2_hat_mean: mean(&nu2),
        nu2_hat_mc_se: sd(&nu2).map(|s| s / (nu2.len() as f64).sqrt()),
    }
}

pub fn run_scenario(config: &ScenarioConfig, runs: usize, methods: &Methods) -> Result<ScenarioSummary> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let truth = build_truth(config)?;
    let reps = run_replicates(config, &truth, runs, methods)?;
    Ok(summarize(config, &truth, methods, &reps))
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{:.1}", round_half_even(100.0 * v, 1)))
}

/// One row per scenario and cell; rates and risk differences ×100 at one decimal.
pub fn write_summaries_csv<W: Write>(summaries: &[ScenarioSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "scenario",
        "estimand",
        "estimator",
        "variance",
        "truth",
        "bias",
        "sd",
        "se",
        "cp",
        "power",
        "successes",
        "failures",
    ])
    .map_err(io)?;
    for s in summaries {
        for c in &s.cells {
            let truth = match c.estimand {
                Estimand::DeltaMh => s.truth_mh_avg,
                Estimand::DeltaAte => Some(s.truth_ate),
            };
            w.write_record([
                s.label.clone(),
                c.estimand.name().to_string(),
                c.estimator.name().to_string(),
                c.method.name().to_string(),
                pct(truth),
                pct(c.bias),
                pct(c.sd),
                pct(c.mean_se),
                pct(c.cp),
                pct(c.power),
                c.successes.to_string(),
                c.failures.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(spec: &str) -> ScenarioConfig {
        ScenarioConfig::from_factors(spec, 20_240_601, 7).unwrap()
    }

    #[test]
    fn single_run_has_no_sd() {
        let s = run_scenario(&cfg("1c,2b,3a,4a"), 1, &Methods::default()).unwrap();
        assert_eq!(s.runs, 1);
        let c = s.cell(Estimator::Mh, VarianceMethod::MgrMh, Estimand::DeltaMh).unwrap();
        assert_eq!(c.sd, None);
        assert!(c.bias.is_some());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = cfg("1c,2a,3b,4c");
        let m = Methods {
            bootstrap: 20,
            level: 0.95,
        };
        let a = with_threads(1, || run_scenario(&c, 40, &m)).unwrap().unwrap();
        let b = with_threads(4, || run_scenario(&c, 40, &m)).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rates_are_probabilities() {
        let s = run_scenario(&cfg("1c,2a,3c,4b"), 30, &Methods::default()).unwrap();
        for c in &s.cells {
            for r in [c.cp, c.power].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&r));
            }
            assert_eq!(c.successes + c.failures, 30);
        }
    }

    #[test]
    fn csv_layout() {
        let s = run_scenario(&cfg("1c,2a,3a,4a"), 5, &Methods::default()).unwrap();
        let mut buf = Vec::new();
        write_summaries_csv(std::slice::from_ref(&s), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + s.cells.len());
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("1c-2a-3a-4a,DELTA_MH,MH,GR,-10.0,"));
    }
}
