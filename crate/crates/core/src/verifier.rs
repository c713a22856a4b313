//! Monte Carlo scenarios: simulate from a specification, estimate, and
//! compare the replicate mean against an exact oracle.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SamplingDesign};
use crate::estimators::{bootstrap_ci, BootstrapOptions, EstimatorConfig, EstimatorKind};
use crate::rng;
use crate::scm::{
    self, generate, naive_nonparticipant_contrast, presets, true_estimands, GenerateError,
    PotentialOutcomeDataset, ScmSpec, SpecError, TrueEstimands,
};

/// Pass bands are this many Monte Carlo standard errors wide.
pub const SE_BAND: f64 = 3.0;
/// Scenarios fail outright when more than this share of replicates error.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

const TAG_GENERATE: u64 = 1;
const TAG_COMPOSITE: u64 = 2;
const TAG_BOOTSTRAP: u64 = 3;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown scenario {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{failed} of {total} replicates failed ({first_error})")]
    TooManyFailures { failed: usize, total: usize, first_error: String },
    #[error("nothing to summarize")]
    EmptySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // a handful per run
pub enum EstimatorChoice {
    /// An estimator run on the composite projection of each sample.
    Composite(EstimatorConfig),
    /// `Ê[Y|A=1,S=0] - Ê[Y|A=0,S=0]` read off the simulated
    /// non-participants' observed treatment and outcome.
    NaiveNonparticipant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleTarget {
    AteUsual,
    AteTrialctx,
    AteSingle,
    AteUsualS0,
}

impl OracleTarget {
    pub fn value(self, t: &TrueEstimands) -> f64 {
        match self {
            Self::AteUsual => t.ate_usual,
            Self::AteTrialctx => t.ate_trialctx,
            Self::AteSingle => t.ate_single,
            Self::AteUsualS0 => t.ate_usual_s0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    /// `|mean - oracle| <= 3 SE`.
    Recovers,
    /// `|mean - (oracle + offset)| <= 3 SE`.
    BiasedBy { offset: f64 },
}

impl Expectation {
    fn offset(self) -> f64 {
        match self {
            Self::Recovers => 0.0,
            Self::BiasedBy { offset } => offset,
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Recovers => "recovers".to_owned(),
            Self::BiasedBy { offset } => format!("biased-by {offset:+.4}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBootstrap {
    pub replicates: usize,
    pub level: f64,
    /// When set, the scenario also requires CI coverage of the oracle to
    /// fall in `[lo, hi]`.
    #[serde(default)]
    pub coverage_band: Option<(f64, f64)>,
}

fn nested() -> SamplingDesign {
    SamplingDesign::Nested
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub scm: ScmSpec,
    pub estimator: EstimatorChoice,
    #[serde(default = "nested")]
    pub design: SamplingDesign,
    /// Keep `Y^{s=0,a=0}` on non-participant rows as control outcomes.
    #[serde(default)]
    pub control_outcomes: bool,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub target: OracleTarget,
    pub expectation: Expectation,
    #[serde(default)]
    pub bootstrap: Option<ScenarioBootstrap>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.replicates < 2 {
            return Err(VerifyError::Invalid(format!(
                "{}: need at least 2 replicates, got {}",
                self.name, self.replicates
            )));
        }
        if self.n == 0 {
            return Err(VerifyError::Invalid(format!("{}: n must be positive", self.name)));
        }
        if self.bootstrap.is_some() && matches!(self.estimator, EstimatorChoice::NaiveNonparticipant) {
            return Err(VerifyError::Invalid(format!(
                "{}: bootstrap intervals need a composite estimator",
                self.name
            )));
        }
        scm::validate_spec(&self.scm)?;
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_size(mut self, n: usize, replicates: usize) -> Self {
        self.n = n;
        self.replicates = replicates;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub n: usize,
    pub seed: u64,
    pub target: OracleTarget,
    pub expectation: Expectation,
    pub replicates: Vec<ReplicateRecord>,
    pub failed: usize,
    pub mean: f64,
    /// Monte Carlo standard error of `mean`: replicate SD over sqrt(R).
    pub mc_se: f64,
    pub oracle: f64,
    /// `oracle + offset` under the expectation.
    pub expected: f64,
    pub bias: f64,
    pub tolerance: f64,
    pub coverage: Option<f64>,
    pub coverage_band: Option<(f64, f64)>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn estimates(&self) -> impl Iterator<Item = f64> + '_ {
        self.replicates.iter().filter_map(|r| r.estimate)
    }

    /// `replicate,estimate,ci_lower,ci_upper,covered` lines.
    pub fn replicate_csv(&self) -> String {
        let mut out = String::from("replicate,estimate,ci_lower,ci_upper,covered\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.replicates {
            let covered = r.ci.map(|(lo, hi)| (lo <= self.oracle && self.oracle <= hi).to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.index,
                opt(r.estimate),
                opt(r.ci.map(|c| c.0)),
                opt(r.ci.map(|c| c.1)),
                covered.unwrap_or_default()
            );
        }
        out
    }
}

fn naive_contrast(pod: &PotentialOutcomeDataset) -> Result<f64, String> {
    let mut sum = [0.0; 2];
    let mut count = [0.0; 2];
    for u in pod.units.iter().filter(|u| u.s == 0) {
        sum[u.a as usize] += f64::from(u.y);
        count[u.a as usize] += 1.0;
    }
    if count.contains(&0.0) {
        return Err("no non-participants in one usual-care treatment group".to_owned());
    }
    Ok(sum[1] / count[1] - sum[0] / count[0])
}

fn run_replicate(sc: &ScenarioSpec, r: usize) -> ReplicateRecord {
    let fail = |error: String| ReplicateRecord { index: r, estimate: None, ci: None, error: Some(error) };
    let pod = match generate(&sc.scm, sc.n, rng::derive_seed(sc.seed, TAG_GENERATE, r as u64)) {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    let config = match &sc.estimator {
        EstimatorChoice::NaiveNonparticipant => {
            return match naive_contrast(&pod) {
                Ok(v) => ReplicateRecord { index: r, estimate: Some(v), ci: None, error: None },
                Err(e) => fail(e),
            };
        }
        EstimatorChoice::Composite(c) => c,
    };
    let composite_seed = rng::derive_seed(sc.seed, TAG_COMPOSITE, r as u64);
    let data = match scm::to_composite(&pod, &sc.design, sc.control_outcomes, composite_seed) {
        Ok(d) => d,
        Err(e) => return fail(e.to_string()),
    };
    drop(pod);
    let estimate = match config.point(&data, None) {
        Ok(p) => p.value,
        Err(e) => return fail(e.to_string()),
    };
    let ci = match sc.bootstrap {
        None => None,
        Some(b) => {
            let opts = BootstrapOptions::new(
                b.replicates,
                b.level,
                rng::derive_seed(sc.seed, TAG_BOOTSTRAP, r as u64),
            );
            match bootstrap_ci(&data, config, &opts) {
                Ok(ci) => Some((ci.lower, ci.upper)),
                Err(e) => return fail(e.to_string()),
            }
        }
    };
    ReplicateRecord { index: r, estimate: Some(estimate), ci, error: None }
}

/// Runs `sc.replicates` independent simulations. Replicate `r` derives its
/// own seeds from `(sc.seed, r)`, and results are reduced in replicate order,
/// so the report is bit-identical across runs and thread counts.
pub fn run_scenario(sc: &ScenarioSpec) -> Result<VerificationReport, VerifyError> {
    sc.validate()?;
    let oracle = sc.target.value(&true_estimands(&sc.scm)?);
    let replicates: Vec<ReplicateRecord> =
        (0..sc.replicates).into_par_iter().map(|r| run_replicate(sc, r)).collect();
    let failed = replicates.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * sc.replicates as f64 {
        let first_error = replicates.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(VerifyError::TooManyFailures { failed, total: sc.replicates, first_error });
    }
    let values: Vec<f64> = replicates.iter().filter_map(|r| r.estimate).collect();
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let mc_se = (var / k).sqrt();
    let expected = oracle + sc.expectation.offset();
    let tolerance = SE_BAND * mc_se;
    let cis: Vec<(f64, f64)> = replicates.iter().filter_map(|r| r.ci).collect();
    let coverage = (!cis.is_empty()).then(|| {
        cis.iter().filter(|(lo, hi)| *lo <= oracle && oracle <= *hi).count() as f64
            / cis.len() as f64
    });
    let coverage_band = sc.bootstrap.and_then(|b| b.coverage_band);
    let coverage_ok = match (coverage_band, coverage) {
        (Some((lo, hi)), Some(c)) => lo <= c && c <= hi,
        (Some(_), None) => false,
        (None, _) => true,
    };
    Ok(VerificationReport {
        name: sc.name.clone(),
        n: sc.n,
        seed: sc.seed,
        target: sc.target,
        expectation: sc.expectation,
        replicates,
        failed,
        mean,
        mc_se,
        oracle,
        expected,
        bias: mean - oracle,
        tolerance,
        coverage,
        coverage_band,
        pass: (mean - expected).abs() <= tolerance && coverage_ok,
    })
}

pub const DEFAULT_N: usize = 20_000;
pub const DEFAULT_REPLICATES: usize = 500;
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_BOOTSTRAP: usize = 500;

fn scenario(
    name: &str,
    description: &str,
    scm: ScmSpec,
    estimator: EstimatorChoice,
    target: OracleTarget,
    expectation: Expectation,
) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_owned(),
        description: description.to_owned(),
        scm,
        estimator,
        design: SamplingDesign::Nested,
        control_outcomes: false,
        n: DEFAULT_N,
        replicates: DEFAULT_REPLICATES,
        seed: DEFAULT_SEED,
        target,
        expectation,
        bootstrap: None,
    }
}

fn composite(kind: EstimatorKind) -> EstimatorChoice {
    EstimatorChoice::Composite(EstimatorConfig::new(kind))
}

/// The six reference scenarios S1 to S6. Bias offsets are computed from the
/// exact oracles of each specification.
pub fn builtin_scenarios() -> Vec<ScenarioSpec> {
    let o1 = presets::o1();
    let o2 = presets::o2();
    let t1 = true_estimands(&o1).expect("preset is valid");
    let t2 = true_estimands(&o2).expect("preset is valid");
    let naive = naive_nonparticipant_contrast(&o1).expect("preset is valid");
    vec![
        scenario(
            "S1",
            "standardization recovers the usual-care ATE without S-by-A interaction",
            o1.clone(),
            composite(EstimatorKind::OmAll),
            OracleTarget::AteUsual,
            Expectation::Recovers,
        ),
        scenario(
            "S2",
            "S-by-A interaction: standardization lands on the trial-context ATE",
            o2.clone(),
            composite(EstimatorKind::OmAll),
            OracleTarget::AteUsual,
            Expectation::BiasedBy { offset: t2.ate_trialctx - t2.ate_usual },
        ),
        scenario(
            "S3",
            "latent V breaks exchangeability over S but not the effect; standardization recovers",
            presets::o3(),
            composite(EstimatorKind::OmAll),
            OracleTarget::AteUsual,
            Expectation::Recovers,
        ),
        ScenarioSpec {
            control_outcomes: true,
            ..scenario(
                "S4",
                "multiplicative outcome model: relative-scale estimator recovers",
                presets::multiplicative(2.0),
                composite(EstimatorKind::RelativeScale),
                OracleTarget::AteUsual,
                Expectation::Recovers,
            )
        },
        scenario(
            "S5",
            "confounded non-participant contrast is biased for the usual-care ATE",
            o1,
            EstimatorChoice::NaiveNonparticipant,
            OracleTarget::AteUsual,
            Expectation::BiasedBy { offset: naive - t1.ate_usual },
        ),
        scenario(
            "S6",
            "standardization recovers the trial-context ATE",
            o2,
            composite(EstimatorKind::TrialctxAll),
            OracleTarget::AteTrialctx,
            Expectation::Recovers,
        ),
    ]
}

/// S1 with percentile bootstrap intervals and the coverage requirement.
pub fn s1_with_coverage() -> ScenarioSpec {
    let mut s1 = builtin_scenarios().swap_remove(0);
    s1.bootstrap = Some(ScenarioBootstrap {
        replicates: DEFAULT_BOOTSTRAP,
        level: 0.95,
        coverage_band: Some((0.92, 0.98)),
    });
    s1
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioSpec, VerifyError> {
    let upper = name.to_ascii_uppercase();
    if upper == "S1-COVERAGE" {
        return Ok(s1_with_coverage());
    }
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == upper)
        .ok_or_else(|| VerifyError::Unknown(name.to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub expectation: String,
    pub oracle: f64,
    pub expected: f64,
    pub mean: f64,
    pub bias: f64,
    pub mc_se: f64,
    pub coverage: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub all_pass: bool,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:<18} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8}  {}\n",
            "scenario", "expectation", "oracle", "expected", "mean", "bias", "mc_se", "coverage", "result"
        );
        for r in &self.rows {
            let cov = r.coverage.map(|c| format!("{c:.3}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<12} {:<18} {:>8.4} {:>8.4} {:>9.5} {:>+9.5} {:>8.5} {:>8}  {}",
                r.name,
                r.expectation,
                r.oracle,
                r.expected,
                r.mean,
                r.bias,
                r.mc_se,
                cov,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

pub fn summarize(reports: &[VerificationReport]) -> Result<Summary, VerifyError> {
    if reports.is_empty() {
        return Err(VerifyError::EmptySummary);
    }
    let rows: Vec<SummaryRow> = reports
        .iter()
        .map(|r| SummaryRow {
            name: r.name.clone(),
            expectation: r.expectation.label(),
            oracle: r.oracle,
            expected: r.expected,
            mean: r.mean,
            bias: r.bias,
            mc_se: r.mc_se,
            coverage: r.coverage,
            pass: r.pass,
        })
        .collect();
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(Summary { rows, all_pass })
}
