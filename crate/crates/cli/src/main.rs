//! `engage`: simulate, estimate, diagnose, verify and query graphs from the
//! command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 verification failure.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use engage_core::data::DesignTag;
use engage_core::diagnostics::{
    dual_scale_check, exchangeability_mean_check, interaction_scan, positivity_report,
    ExchangeabilityReport, InteractionScan, MeanTable, MetricRow, PositivityReport,
    ScaleClassification, OVERLAP_THRESHOLD,
};
use engage_core::estimators::{BootstrapOptions, Estimand, EstimatorKind, Method};
use engage_core::glm::{Family, ModelSpec};
use engage_core::graph::{
    build_canonical_graphs, canonical_graphs_from, engagement_dag, verify_claims_on, Query,
};
use engage_core::scm::{self, presets, ConditionReport};
use engage_core::verifier::{self, ScenarioSpec};
use engage_core::{CausalGraph, CompositeDataset, EstimatorConfig, SamplingDesign, ScmSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "engage", version, about = "Usual-care treatment effects from trial plus target-population data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a structural model and write the composite dataset, the full
    /// potential-outcome table and the exact estimands.
    Simulate(SimulateArgs),
    /// Estimate a treatment effect from a composite CSV.
    Estimate(EstimateArgs),
    /// Positivity, interaction and exchangeability diagnostics.
    Diagnose(DiagnoseArgs),
    /// Run Monte Carlo verification scenarios against the exact oracles.
    Verify(VerifyArgs),
    /// d-separation queries and the canonical independence claims.
    Graph(GraphArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DesignArg {
    Nested,
    NonNested,
}

impl From<DesignArg> for DesignTag {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Nested => DesignTag::Nested,
            DesignArg::NonNested => DesignTag::NonNested,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model specification: a JSON file, or a preset name (o1, o2, o3, multiplicative).
    #[arg(long)]
    spec: String,
    /// Number of simulated units.
    #[arg(long)]
    n: usize,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Sampling design of the composite dataset.
    #[arg(long, value_enum, default_value = "nested")]
    design: DesignArg,
    /// Retention fraction for participants under the non-nested design.
    #[arg(long, default_value_t = 1.0)]
    f_trial: f64,
    /// Retention fraction for non-participants under the non-nested design.
    #[arg(long, default_value_t = 1.0)]
    f_target: f64,
    /// Keep the usual-care control outcome on non-participant rows and flag
    /// them (input for relative-scale estimation).
    #[arg(long)]
    control_outcomes: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Composite CSV: `id,x1..xk,s,a,y[,control]`, blank for missing.
    #[arg(long)]
    data: PathBuf,
    /// Estimator configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Bootstrap seed; overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling design; overrides `design` in the configuration.
    #[arg(long, value_enum)]
    design: Option<DesignArg>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Composite CSV to check for positivity.
    #[arg(long, conflicts_with = "spec")]
    data: Option<PathBuf>,
    /// Model specification (file or preset); simulates a sample and adds the
    /// potential-outcome diagnostics.
    #[arg(long, requires_all = ["n", "seed"])]
    spec: Option<String>,
    /// Sample size for `--spec`.
    #[arg(long)]
    n: Option<usize>,
    /// Seed for `--spec`.
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling design of the data.
    #[arg(long, value_enum, default_value = "nested")]
    design: DesignArg,
    /// Participation model JSON (`{"family":"logistic","design":{...}}`);
    /// saturated logistic by default.
    #[arg(long)]
    participation: Option<PathBuf>,
    /// Overlap flag threshold on the fitted participation probability.
    #[arg(long, default_value_t = OVERLAP_THRESHOLD)]
    threshold: f64,
    /// Tolerance of the dual-scale interaction check.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Plot-ready CSV `stratum,metric,value,se`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Builtin scenario: S1..S6, S1-coverage, or `all` for S1..S6.
    #[arg(long, required_unless_present = "file", conflicts_with = "file")]
    scenario: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the sample size per replicate.
    #[arg(long)]
    n: Option<usize>,
    /// Override the number of Monte Carlo replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Directory for `<name>.json` reports and `<name>_replicates.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// Graph JSON: `{"nodes":[{"name":..,"latent":..}],"edges":[[from,to]]}`.
    /// Defaults to the built-in engagement DAG.
    #[arg(long)]
    file: Option<PathBuf>,
    /// d-separation query `A,B|Z`; use `;` between nodes of one set.
    #[arg(long, conflicts_with = "claims")]
    query: Option<String>,
    /// Allow conditioning on latent nodes.
    #[arg(long)]
    allow_latent: bool,
    /// Check the independence claims on the three SWIGs of the graph.
    #[arg(long)]
    claims: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, error: anyhow!(msg.into()) }
    }

    fn verification(msg: impl Into<String>) -> Self {
        Self { code: EXIT_VERIFY, error: anyhow!(msg.into()) }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_DATA, error }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Verify(a) => verify(a),
        Command::Graph(a) => graph(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

// ------------------------------------------------------------------ io

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => print_stdout(&(serde_json::to_string_pretty(value)? + "\n")),
    }
}

/// Writes to standard output; a closed pipe (`engage ... | head`) is not an error.
fn print_stdout(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_dataset(path: &Path, design: DesignTag) -> anyhow::Result<CompositeDataset> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    CompositeDataset::read_csv(BufReader::new(file), design)
        .with_context(|| format!("parsing {}", path.display()))
}

fn load_spec(arg: &str) -> anyhow::Result<ScmSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        return read_json(path);
    }
    presets::by_name(arg).ok_or_else(|| anyhow!("no spec file or preset named `{arg}`"))
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> anyhow::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn metric_csv(rows: &[MetricRow]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stratum", "metric", "value", "se"])?;
    for r in rows {
        let se = r.se.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([r.stratum.as_str(), r.metric.as_str(), &r.value.to_string(), &se])?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

// ------------------------------------------------------------ simulate

fn simulate(args: SimulateArgs) -> Outcome {
    let spec = load_spec(&args.spec)?;
    let design = match args.design {
        DesignArg::Nested => SamplingDesign::Nested,
        DesignArg::NonNested => {
            SamplingDesign::NonNested { f_trial: args.f_trial, f_target: args.f_target }
        }
    };
    let pod = scm::generate(&spec, args.n, args.seed).context("simulating")?;
    let data = scm::to_composite(&pod, &design, args.control_outcomes, args.seed)
        .context("building the composite dataset")?;
    let truth = scm::true_estimands(&spec).context("computing exact estimands")?;
    let conditions = scm::check_conditions(&spec).context("checking conditions")?;

    let out = &args.out;
    let composite = csv_bytes(|b| Ok(data.write_csv(b)?))?;
    write_atomic(&out.join("composite.csv"), &composite)?;
    let po = csv_bytes(|b| Ok(pod.write_csv(b)?))?;
    write_atomic(&out.join("potential_outcomes.csv"), &po)?;
    write_json(&out.join("truth.json"), &truth)?;
    write_json(&out.join("conditions.json"), &conditions)?;
    eprintln!(
        "wrote {} composite rows ({} trial) and {} potential-outcome rows to {}",
        data.len(),
        data.n_trial(),
        pod.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------ estimate

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BootstrapConfig {
    replicates: usize,
    #[serde(default = "default_level")]
    level: f64,
}

fn default_level() -> f64 {
    0.95
}

/// The `--config` file of `estimate`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    estimand: Estimand,
    #[serde(default = "default_method")]
    method: Method,
    /// Hájek-normalized weights (weighting estimators only).
    #[serde(default)]
    normalized: bool,
    #[serde(default)]
    outcome: Option<ModelSpec>,
    #[serde(default)]
    participation: Option<ModelSpec>,
    #[serde(default)]
    treatment: Option<ModelSpec>,
    #[serde(default)]
    target: Option<ModelSpec>,
    #[serde(default = "default_design")]
    design: DesignTag,
    #[serde(default)]
    bootstrap: Option<BootstrapConfig>,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_method() -> Method {
    Method::OutcomeModel
}

fn default_design() -> DesignTag {
    DesignTag::Nested
}

impl EstimateConfig {
    fn estimator(&self) -> anyhow::Result<EstimatorConfig> {
        let kind = EstimatorKind::select(self.estimand, self.method, self.normalized)
            .ok_or_else(|| {
                anyhow!("no {:?} estimator for the {}", self.method, self.estimand.label())
            })?;
        let mut cfg = EstimatorConfig::new(kind);
        if let Some(m) = &self.outcome {
            cfg = cfg.with_outcome(m.clone());
        }
        if let Some(m) = &self.participation {
            cfg = cfg.with_participation(m.clone());
        }
        if let Some(m) = &self.treatment {
            cfg = cfg.with_treatment(m.clone());
        }
        if let Some(m) = &self.target {
            cfg = cfg.with_target(m.clone());
        }
        Ok(cfg)
    }
}

fn estimate(args: EstimateArgs) -> Outcome {
    let config: EstimateConfig = read_json(&args.config)?;
    let estimator = config.estimator()?;
    let design = args.design.map(DesignTag::from).unwrap_or(config.design);
    let bootstrap = match &config.bootstrap {
        None => None,
        Some(b) => {
            let seed = args.seed.or(config.seed).ok_or_else(|| {
                Failure::usage("bootstrap intervals need a seed (`--seed` or `seed` in the config)")
            })?;
            Some(BootstrapOptions::new(b.replicates, b.level, seed))
        }
    };
    let data = read_dataset(&args.data, design)?;
    if data.has_control_rows() && estimator.kind != EstimatorKind::RelativeScale {
        return Err(anyhow!(
            "{}: control-flagged non-participant outcomes are accepted only for the {}",
            args.data.display(),
            Estimand::UsualCareRelative.label()
        )
        .into());
    }
    let report = match &bootstrap {
        Some(opts) => estimator.estimate_with_ci(&data, opts),
        None => estimator.estimate(&data),
    }
    .context("estimation failed")?;
    emit_json(args.out.as_deref(), &report)?;
    Ok(())
}

// ------------------------------------------------------------ diagnose

#[derive(Debug, Serialize)]
struct DiagnoseReport {
    positivity: PositivityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    interaction: Option<InteractionScan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exchangeability: Option<ExchangeabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conditions: Option<ConditionReport>,
    /// Classification of the exact per-stratum potential-outcome means.
    #[serde(skip_serializing_if = "Option::is_none")]
    dual_scale: Option<ScaleClassification>,
}

/// `E[Y^{s,a} | X=x]` of a specification, including the mean `V` shift.
fn exact_mean_table(spec: &ScmSpec, x: usize) -> MeanTable {
    let shift = spec.v_block.as_ref().map_or(0.0, |v| v.prob * v.delta);
    let pu = spec.u_given_x[x];
    let m = |s, a| (1.0 - pu) * spec.mean(s, a, x, 0) + pu * spec.mean(s, a, x, 1) + shift;
    MeanTable::new(m(1, 1), m(1, 0), m(0, 1), m(0, 0))
}

fn diagnose(args: DiagnoseArgs) -> Outcome {
    let participation = match &args.participation {
        Some(p) => read_json(p)?,
        None => ModelSpec::saturated(Family::Logistic),
    };
    let mut rows: Vec<MetricRow> = Vec::new();
    let report = match (&args.data, &args.spec) {
        (Some(path), None) => {
            let data = read_dataset(path, args.design.into())?;
            let positivity = positivity_report(&data, &participation, args.threshold).map_err(anyhow::Error::from)?;
            rows.extend(positivity.metric_rows());
            DiagnoseReport {
                positivity,
                interaction: None,
                exchangeability: None,
                conditions: None,
                dual_scale: None,
            }
        }
        (None, Some(name)) => {
            let spec = load_spec(name)?;
            let (n, seed) = (args.n.unwrap_or_default(), args.seed.unwrap_or_default());
            let pod = scm::generate(&spec, n, seed).context("simulating")?;
            let design = match args.design {
                DesignArg::Nested => SamplingDesign::Nested,
                DesignArg::NonNested => {
                    return Err(Failure::usage("--spec diagnostics use the nested design"))
                }
            };
            let data = scm::to_composite(&pod, &design, false, seed)
                .context("building the composite dataset")?;
            let positivity = positivity_report(&data, &participation, args.threshold).map_err(anyhow::Error::from)?;
            let interaction = interaction_scan(&pod).map_err(anyhow::Error::from)?;
            let exchangeability = exchangeability_mean_check(&pod).map_err(anyhow::Error::from)?;
            let conditions = scm::check_conditions(&spec).context("checking conditions")?;
            let tables: Vec<MeanTable> =
                (0..spec.n_x()).map(|x| exact_mean_table(&spec, x)).collect();
            let dual_scale = dual_scale_check(&tables, args.tolerance).map_err(anyhow::Error::from)?;
            rows.extend(positivity.metric_rows());
            rows.extend(interaction.metric_rows());
            rows.extend(exchangeability.metric_rows());
            for (x, s) in spec.x_support.iter().zip(&dual_scale.strata) {
                let label = format!(
                    "x=({})",
                    x.value.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
                );
                for (metric, value) in
                    [("exact_additive_gap", s.additive_gap), ("exact_multiplicative_gap", s.multiplicative_gap)]
                {
                    rows.push(MetricRow { stratum: label.clone(), metric: metric.into(), value, se: None });
                }
            }
            DiagnoseReport {
                positivity,
                interaction: Some(interaction),
                exchangeability: Some(exchangeability),
                conditions: Some(conditions),
                dual_scale: Some(dual_scale),
            }
        }
        _ => return Err(Failure::usage("diagnose needs exactly one of --data or --spec")),
    };
    if let Some(path) = &args.csv {
        write_atomic(path, &metric_csv(&rows)?)?;
    }
    emit_json(args.out.as_deref(), &report)?;
    Ok(())
}

// -------------------------------------------------------------- verify

fn verify(args: VerifyArgs) -> Outcome {
    let mut scenarios: Vec<ScenarioSpec> = match (&args.scenario, &args.file) {
        (Some(name), None) if name.eq_ignore_ascii_case("all") => verifier::builtin_scenarios(),
        (Some(name), None) => vec![verifier::builtin_scenario(name).map_err(|e| Failure::usage(e.to_string()))?],
        (None, Some(path)) => vec![read_json(path)?],
        _ => return Err(Failure::usage("verify needs exactly one of --scenario or --file")),
    };
    for sc in &mut scenarios {
        if let Some(seed) = args.seed {
            sc.seed = seed;
        }
        if let Some(n) = args.n {
            sc.n = n;
        }
        if let Some(r) = args.replicates {
            sc.replicates = r;
        }
    }
    let mut reports = Vec::with_capacity(scenarios.len());
    for sc in &scenarios {
        let report = verifier::run_scenario(sc).with_context(|| format!("scenario {}", sc.name))?;
        if let Some(dir) = &args.out {
            let stem = sc.name.to_ascii_lowercase();
            write_json(&dir.join(format!("{stem}.json")), &report)?;
            write_atomic(&dir.join(format!("{stem}_replicates.csv")), report.replicate_csv().as_bytes())?;
        }
        reports.push(report);
    }
    let summary = verifier::summarize(&reports).map_err(anyhow::Error::from)?;
    print_stdout(&summary.to_text())?;
    if let Some(dir) = &args.out {
        write_atomic(&dir.join("summary.txt"), summary.to_text().as_bytes())?;
    }
    if summary.all_pass {
        Ok(())
    } else {
        let failed: Vec<&str> =
            summary.rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
        Err(Failure::verification(format!("expectation failed: {}", failed.join(", "))))
    }
}

// --------------------------------------------------------------- graph

#[derive(Debug, Serialize)]
struct QueryAnswer<'a> {
    query: &'a str,
    d_separated: bool,
}

fn graph(args: GraphArgs) -> Outcome {
    let g: CausalGraph = match &args.file {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            CausalGraph::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => engagement_dag(),
    };
    if let Some(text) = &args.query {
        let q = Query::parse(text).map_err(|e| Failure::usage(e.to_string()))?;
        let d_separated = if args.allow_latent {
            fn refs(v: &[String]) -> Vec<&str> {
                v.iter().map(String::as_str).collect()
            }
            g.d_separated_with(&refs(&q.set_a), &refs(&q.set_b), &refs(&q.given), false)
        } else {
            q.evaluate(&g)
        }
        .map_err(anyhow::Error::from)?;
        emit_json(None, &QueryAnswer { query: text, d_separated })?;
        return Ok(());
    }
    if args.claims {
        let graphs = match &args.file {
            Some(_) => canonical_graphs_from(&g).map_err(anyhow::Error::from)?,
            None => build_canonical_graphs(),
        };
        let report = verify_claims_on(&graphs);
        emit_json(None, &report)?;
        if !report.all_match() {
            return Err(Failure::verification(format!(
                "{} claim(s) diverge from the expected pattern",
                report.divergent().count()
            )));
        }
        return Ok(());
    }
    print_stdout(&(g.to_json() + "\n"))?;
    Ok(())
}
