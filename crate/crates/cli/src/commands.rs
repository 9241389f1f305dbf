use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use strata_rd::simulation::{
    run_scenario, with_threads, write_summaries_csv, FactorSelection, Methods, ScenarioSummary,
};
use strata_rd::tables::{embedded, read_aggregated_file, read_subjects_file};
use strata_rd::{aggregate_subjects, expand_records, Result, StratifiedDataset, SubjectRecord};

use crate::report::{analyze, AnalysisReport, BootstrapSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WARNINGS: i32 = 2;

const ABOUT: &str = "Mantel-Haenszel risk differences for stratified 2x2 tables";
const LONG_ABOUT: &str = "\
Mantel-Haenszel risk differences for stratified 2x2 tables.

Reports the MH estimate with GR, Sato and mGR standard errors for the MH
estimand, mGR and bootstrap standard errors for the average treatment effect,
the post-stratification and unadjusted estimators, the MH chi-square test and
Wald tests. Score-based intervals (Klingenberg, stratified Newcombe) and
G-computation are not implemented; their columns are left out of every table.

Exit status: 0 on success, 1 on usage or I/O errors, 2 when the run completed
with warnings.";

#[derive(Debug, Parser)]
#[command(name = "strata-rd", version, about = ABOUT, long_about = LONG_ABOUT)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze a stratified dataset (a CSV file or the embedded `calgb`).
    Analyze(AnalyzeArgs),
    /// Run simulation scenarios and write JSON and CSV summaries.
    Simulate(SimulateArgs),
    /// Analyze the embedded CALGB trial data.
    Calgb(CalgbArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Header `stratum,arm,outcome`, one row per subject.
    Subjects,
    /// Header `stratum,n11,n10,n01,n00`, one row per stratum.
    Aggregated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Path to a CSV file, or `calgb` for the embedded dataset.
    pub input: String,
    #[arg(long, value_enum, default_value_t = InputFormat::Subjects)]
    pub format: InputFormat,
    /// Confidence level for Wald intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Bootstrap replicates for the MH estimator (0 skips the bootstrap).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub out: OutputFormat,
}

#[derive(Debug, Args)]
pub struct CalgbArgs {
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub out: OutputFormat,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated factor levels: 1a-1c (n = 500/300/200), 2a-2b
    /// (allocation 2:1 or 1:1), 3a-3c (large, sparse, mixed strata), 4a-4c
    /// (common or varying effects), 4a-ird..4c-ird (same effects generated
    /// from individual potential outcomes) and 4x (extreme effects). Factors
    /// left out range over all their levels.
    #[arg(long, default_value = "")]
    pub factors: String,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    #[arg(long, default_value_t = 20_240_601)]
    pub gen_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub run_seed: u64,
    /// Worker threads (0 uses every core).
    #[arg(long, env = "STRATA_RD_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Bootstrap replicates per simulated trial (0 skips the bootstrap).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Directory for `summary.json` and `summary.csv`; JSON goes to stdout
    /// when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a command produced: text for stdout and the exit status.
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

pub fn load(input: &str, format: InputFormat) -> Result<(StratifiedDataset, Vec<SubjectRecord>)> {
    if let Some(d) = embedded(input) {
        let records = expand_records(&d);
        return Ok((d, records));
    }
    let path = Path::new(input);
    match format {
        InputFormat::Subjects => {
            let records = read_subjects_file(path)?;
            Ok((aggregate_subjects(&records)?, records))
        }
        InputFormat::Aggregated => {
            let d = read_aggregated_file(path)?;
            let records = expand_records(&d);
            Ok((d, records))
        }
    }
}

fn render(report: &AnalysisReport, out: OutputFormat) -> Outcome {
    let stdout = match out {
        OutputFormat::Json => report.to_json() + "\n",
        OutputFormat::Table => report.to_table(),
    };
    let code = if report.warnings.is_empty() {
        EXIT_OK
    } else {
        EXIT_WARNINGS
    };
    Outcome { stdout, code }
}

fn bootstrap(replicates: usize, seed: u64) -> Option<BootstrapSettings> {
    (replicates > 0).then_some(BootstrapSettings { replicates, seed })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Outcome> {
    let (dataset, records) = load(&args.input, args.format)?;
    let report = analyze(&dataset, &records, args.level, bootstrap(args.bootstrap, args.seed))?;
    Ok(render(&report, args.out))
}

pub fn cmd_calgb(args: &CalgbArgs) -> Result<Outcome> {
    let dataset = strata_rd::tables::calgb::dataset();
    let records = expand_records(&dataset);
    let report = analyze(&dataset, &records, args.level, bootstrap(args.bootstrap, args.seed))?;
    Ok(render(&report, args.out))
}

pub fn simulate(args: &SimulateArgs) -> Result<Vec<ScenarioSummary>> {
    let selection = FactorSelection::parse(&args.factors)?;
    let methods = Methods {
        bootstrap: args.bootstrap,
        ..Methods::default()
    };
    let scenarios = selection.scenarios(args.gen_seed, args.run_seed);
    with_threads(args.threads, || {
        scenarios
            .iter()
            .map(|c| run_scenario(c, args.runs, &methods))
            .collect::<Result<Vec<_>>>()
    })?
}

pub fn summaries_json(summaries: &[ScenarioSummary]) -> String {
    serde_json::to_string_pretty(summaries).expect("summaries serialize") + "\n"
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome> {
    let summaries = simulate(args)?;
    let json = summaries_json(&summaries);
    let stdout = match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("summary.json"), &json)?;
            let file = std::fs::File::create(dir.join("summary.csv"))?;
            write_summaries_csv(&summaries, file)?;
            format!("{} scenarios written to {}\n", summaries.len(), dir.display())
        }
        None => json,
    };
    let code = if summaries.iter().any(ScenarioSummary::has_failures) {
        EXIT_WARNINGS
    } else {
        EXIT_OK
    };
    Ok(Outcome { stdout, code })
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(s) => cmd_simulate(s),
        Command::Calgb(c) => cmd_calgb(c),
    }
}
