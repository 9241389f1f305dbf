//! The analysis report and its two renderings.

use serde::{Deserialize, Serialize};
use strata_rd::{
    confidence_interval, estimators::PointEstimate, mh_estimate, mh_test, ps_estimate, round_half_even,
    unadjusted_estimate, validate, var_bootstrap, var_gr, var_mgr_ate, var_mgr_mh, var_ps, var_sato, var_unadjusted,
    wald_test, Checks, Estimand, Estimator, Result, StratifiedDataset, SubjectRecord, TestResult, VarianceEstimate,
    VarianceMethod,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDigest {
    pub strata: usize,
    pub n: u64,
    pub dropped_strata: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: VarianceMethod,
    pub variance: f64,
    /// Absent when the variance estimate is negative.
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub components: Option<(f64, f64)>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: Estimator,
    pub estimand: Estimand,
    pub value: f64,
    pub methods: Vec<MethodRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dataset: DatasetDigest,
    pub level: f64,
    pub bootstrap: Option<BootstrapSettings>,
    pub estimates: Vec<EstimateRow>,
    pub tests: Vec<TestResult>,
    /// Conditions that may affect the results.
    pub warnings: Vec<String>,
    /// Advisory remarks that do not change the exit status.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub seed: u64,
}

fn method_row(est: &PointEstimate, v: VarianceEstimate, level: f64, warnings: &mut Vec<String>) -> MethodRow {
    let mut flags = Vec::new();
    for w in &v.warnings {
        warnings.push(format!("{} / {}: {w}", est.estimator.name(), v.method.name()));
        if matches!(w, strata_rd::variance::VarianceWarning::NegativeVariance { .. }) {
            flags.push("NEGATIVE_VARIANCE".to_string());
        }
    }
    MethodRow {
        method: v.method,
        variance: v.variance,
        se: v.se(),
        ci: confidence_interval(est, &v, level).ok(),
        components: v.components,
        flags,
    }
}

/// Runs every estimator, variance method and test on one dataset.
pub fn analyze(
    dataset: &StratifiedDataset,
    records: &[SubjectRecord],
    level: f64,
    bootstrap: Option<BootstrapSettings>,
) -> Result<AnalysisReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(strata_rd::Error::InvalidArgument(format!(
            "level {level} outside (0, 1)"
        )));
    }
    let mut warnings: Vec<String> = validate(dataset, Checks::default())
        .iter()
        .map(|w| w.to_string())
        .collect();
    let mut notes = Vec::new();

    let mh = mh_estimate(dataset)?;
    let mut mh_rows = Vec::new();
    for v in [var_gr(dataset)?, var_sato(dataset)?, var_mgr_mh(dataset)?] {
        mh_rows.push(method_row(&mh, v, level, &mut warnings));
    }
    let mut ate_rows = vec![method_row(&mh, var_mgr_ate(dataset)?, level, &mut warnings)];
    if let Some(b) = bootstrap {
        let v = var_bootstrap(records, Estimator::Mh, b.replicates, b.seed)?;
        ate_rows.push(method_row(&mh, v, level, &mut warnings));
    }
    let ps = ps_estimate(dataset)?;
    let ps_row = method_row(&ps, var_ps(dataset)?, level, &mut warnings);
    let un = unadjusted_estimate(dataset)?;
    let un_row = method_row(&un, var_unadjusted(dataset)?, level, &mut warnings);

    let estimates = vec![
        EstimateRow {
            estimator: Estimator::Mh,
            estimand: Estimand::DeltaMh,
            value: mh.value,
            methods: mh_rows,
        },
        EstimateRow {
            estimator: Estimator::Mh,
            estimand: Estimand::DeltaAte,
            value: mh.value,
            methods: ate_rows,
        },
        EstimateRow {
            estimator: Estimator::Ps,
            estimand: Estimand::DeltaAte,
            value: ps.value,
            methods: vec![ps_row],
        },
        EstimateRow {
            estimator: Estimator::Unadjusted,
            estimand: Estimand::DeltaAte,
            value: un.value,
            methods: vec![un_row],
        },
    ];

    let mut tests = Vec::new();
    match mh_test(dataset) {
        Ok(t) => {
            for w in &t.warnings {
                match w {
                    strata_rd::TestWarning::SmallDeviation { .. } => notes.push(format!("MH test: {w}")),
                    _ => warnings.push(format!("MH test: {w}")),
                }
            }
            tests.push(t);
        }
        Err(e) => warnings.push(format!("MH test not computed: {e}")),
    }
    tests.push(wald_test(dataset, Estimand::DeltaMh, 0.0)?);
    tests.push(wald_test(dataset, Estimand::DeltaAte, 0.0)?);

    Ok(AnalysisReport {
        dataset: DatasetDigest {
            strata: dataset.k(),
            n: dataset.n(),
            dropped_strata: dataset.dropped_strata(),
        },
        level,
        bootstrap,
        estimates,
        tests,
        warnings,
        notes,
    })
}

/// ×100 at two decimals, ties to even.
pub fn x100(v: f64) -> String {
    format!("{:.2}", round_half_even(100.0 * v, 2))
}

fn method_label(m: VarianceMethod) -> &'static str {
    match m {
        VarianceMethod::Gr => "GR",
        VarianceMethod::Sato => "Sato",
        VarianceMethod::MgrMh => "mGR",
        VarianceMethod::MgrAte => "mGR",
        VarianceMethod::Ps => "PS",
        VarianceMethod::Bootstrap => "Boot",
        VarianceMethod::Unadjusted => "Unadj",
    }
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Plain-text table: one line per estimator, estimand and variance
    /// method, entries ×100.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "strata {}  n {}  dropped {}  (entries x100, {:.0}% Wald intervals)\n\n",
            self.dataset.strata,
            self.dataset.n,
            self.dataset.dropped_strata,
            100.0 * self.level
        ));
        s.push_str(&format!(
            "{:<10} {:<10} {:<7} {:>8} {:>8}  {}\n",
            "estimand", "estimator", "method", "Est", "SE", "CI"
        ));
        for row in &self.estimates {
            for m in &row.methods {
                let se = m.se.map_or_else(|| "NaN".to_string(), x100);
                let ci =
                    m.ci.map_or_else(|| "-".to_string(), |(lo, hi)| format!("({}, {})", x100(lo), x100(hi)));
                s.push_str(&format!(
                    "{:<10} {:<10} {:<7} {:>8} {:>8}  {}\n",
                    row.estimand.name(),
                    row.estimator.name(),
                    method_label(m.method),
                    x100(row.value),
                    se,
                    ci
                ));
            }
        }
        s.push('\n');
        for t in &self.tests {
            s.push_str(&format!(
                "{:<9} statistic {:>8.4}  p-value {:.4}\n",
                t.method.name(),
                t.statistic,
                t.p_value
            ));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}
