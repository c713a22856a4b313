//! Estimators of the usual-care average treatment effect and its variants
//! from a composite dataset.
//!
//! Every estimator here is a function of per-cell sums (weights and
//! weighted outcomes by covariate cell, participation and arm), so an
//! estimate on a bootstrap resample is the same computation with integer
//! case weights. Nuisance models are fit on those aggregates.

mod bootstrap;

pub use bootstrap::{bootstrap_ci, percentile, BootstrapCi, BootstrapOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CompositeDataset, DesignTag};
use crate::glm::{self, Design, DesignSpec, Family, FitOptions, GlmError, GlmFit, ModelSpec};

/// Weighting estimators refuse estimated probabilities outside
/// `(POSITIVITY_EPS, 1 - POSITIVITY_EPS)`.
pub const POSITIVITY_EPS: f64 = 1e-6;
/// The relative-scale estimator refuses trial control means at or below this.
pub const RATIO_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("no trial rows in arm a={0}")]
    MissingArm(u8),
    #[error("{condition} positivity failure: {model} = {value} at x = {x:?}")]
    Positivity { condition: &'static str, model: &'static str, x: Vec<f64>, value: f64 },
    #[error("positivity failure: no data for {model} at x = {x:?}")]
    EmptyCell { model: &'static str, x: Vec<f64> },
    #[error("{model} did not converge{}", if *.separated { " (separation)" } else { "" })]
    NotConverged { model: &'static str, separated: bool },
    #[error("the all-population estimand needs a nested design")]
    NotNested,
    #[error("no non-participant (s=0) rows")]
    NoNonparticipants,
    #[error("relative-scale estimation needs control-flagged non-participant outcomes")]
    MissingControlRows,
    #[error("risk ratio undefined: trial control mean {value} at x = {x:?}")]
    RatioUndefined { x: Vec<f64>, value: f64 },
    #[error("weights do not match the dataset")]
    Weights,
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error("{skipped} of {total} bootstrap resamples failed; interval refused ({first_error})")]
    TooManySkipped { skipped: usize, total: usize, first_error: String },
    #[error(transparent)]
    Glm(#[from] GlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// `E[Y^{s=0,a=1} - Y^{s=0,a=0}]` over the whole target population.
    UsualCareAll,
    /// The same contrast among non-participants.
    UsualCareNonparticipants,
    /// Usual-care ATE identified through a no-interaction assumption on the
    /// risk-ratio scale.
    UsualCareRelative,
    /// `E[Y^{s=1,a=1} - Y^{s=1,a=0}]`.
    TrialContext,
}

impl Estimand {
    pub fn label(self) -> &'static str {
        match self {
            Self::UsualCareAll => "all-population usual-care ATE",
            Self::UsualCareNonparticipants => "nonparticipant usual-care ATE",
            Self::UsualCareRelative => "relative-scale usual-care ATE",
            Self::TrialContext => "trial-context ATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OutcomeModel,
    Ipw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    OmAll,
    IpwAll {
        #[serde(default)]
        normalized: bool,
    },
    OmNonparticipants,
    IpwNonparticipants,
    RelativeScale,
    TrialctxAll,
}

impl EstimatorKind {
    pub fn estimand(self) -> Estimand {
        match self {
            Self::OmAll | Self::IpwAll { .. } => Estimand::UsualCareAll,
            Self::OmNonparticipants | Self::IpwNonparticipants => {
                Estimand::UsualCareNonparticipants
            }
            Self::RelativeScale => Estimand::UsualCareRelative,
            Self::TrialctxAll => Estimand::TrialContext,
        }
    }

    pub fn method(self) -> Method {
        match self {
            Self::IpwAll { .. } | Self::IpwNonparticipants => Method::Ipw,
            _ => Method::OutcomeModel,
        }
    }

    /// Maps an (estimand, method) selection onto an estimator.
    pub fn select(estimand: Estimand, method: Method, normalized: bool) -> Option<Self> {
        Some(match (estimand, method) {
            (Estimand::UsualCareAll, Method::OutcomeModel) => Self::OmAll,
            (Estimand::UsualCareAll, Method::Ipw) => Self::IpwAll { normalized },
            (Estimand::UsualCareNonparticipants, Method::OutcomeModel) => Self::OmNonparticipants,
            (Estimand::UsualCareNonparticipants, Method::Ipw) => Self::IpwNonparticipants,
            (Estimand::UsualCareRelative, Method::OutcomeModel) => Self::RelativeScale,
            (Estimand::TrialContext, Method::OutcomeModel) => Self::TrialctxAll,
            _ => return None,
        })
    }
}

fn linear_saturated() -> ModelSpec {
    ModelSpec::saturated(Family::Linear)
}

fn logistic_saturated() -> ModelSpec {
    ModelSpec::saturated(Family::Logistic)
}

/// An estimator together with its nuisance models. Defaults are saturated
/// cell-mean fits throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    #[serde(flatten)]
    pub kind: EstimatorKind,
    /// `E[Y | X, S=1, A=a]`, fit separately per arm.
    #[serde(default = "linear_saturated")]
    pub outcome: ModelSpec,
    /// `Pr[S=1 | X]`.
    #[serde(default = "logistic_saturated")]
    pub participation: ModelSpec,
    /// `Pr[A=1 | X, S=1]`.
    #[serde(default = "logistic_saturated")]
    pub treatment: ModelSpec,
    /// `E[Y | X, S=0]` on control-flagged rows (relative scale only).
    #[serde(default = "linear_saturated")]
    pub target: ModelSpec,
    #[serde(skip)]
    pub fit_options: FitOptions,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            outcome: linear_saturated(),
            participation: logistic_saturated(),
            treatment: logistic_saturated(),
            target: linear_saturated(),
            fit_options: FitOptions::default(),
        }
    }

    pub fn with_outcome(mut self, spec: ModelSpec) -> Self {
        self.outcome = spec;
        self
    }

    pub fn with_participation(mut self, spec: ModelSpec) -> Self {
        self.participation = spec;
        self
    }

    pub fn with_treatment(mut self, spec: ModelSpec) -> Self {
        self.treatment = spec;
        self
    }

    pub fn with_target(mut self, spec: ModelSpec) -> Self {
        self.target = spec;
        self
    }

    /// Point estimate with diagnostics.
    pub fn estimate(&self, data: &CompositeDataset) -> Result<EstimateReport, EstimateError> {
        let p = self.point(data, None)?;
        Ok(EstimateReport {
            estimand: self.kind.estimand(),
            label: self.kind.estimand().label().to_owned(),
            method: self.kind.method(),
            point: p.value,
            ci: None,
            diagnostics: p.diagnostics,
            rows: RowCounts::of(data),
        })
    }

    /// Point estimate followed by a percentile bootstrap interval.
    pub fn estimate_with_ci(
        &self,
        data: &CompositeDataset,
        opts: &BootstrapOptions,
    ) -> Result<EstimateReport, EstimateError> {
        let mut report = self.estimate(data)?;
        report.ci = Some(bootstrap_ci(data, self, opts)?);
        Ok(report)
    }

    /// The estimate on `data` with optional per-row case weights (a
    /// bootstrap resample is integer weights).
    pub fn point(
        &self,
        data: &CompositeDataset,
        weights: Option<&[f64]>,
    ) -> Result<PointEstimate, EstimateError> {
        if weights.is_some_and(|w| w.len() != data.len()) {
            return Err(EstimateError::Weights);
        }
        let sums = CellSums::collect(data, weights);
        let mut diagnostics = Vec::new();
        let value = match self.kind {
            EstimatorKind::OmAll | EstimatorKind::TrialctxAll => {
                if data.design() != DesignTag::Nested {
                    return Err(EstimateError::NotNested);
                }
                let g = self.outcome_contrast(data, &sums, &sums.all, &mut diagnostics)?;
                weighted_mean(&sums.all, &g)
            }
            EstimatorKind::OmNonparticipants => {
                if sums.target.iter().sum::<f64>() <= 0.0 {
                    return Err(EstimateError::NoNonparticipants);
                }
                let g = self.outcome_contrast(data, &sums, &sums.target, &mut diagnostics)?;
                weighted_mean(&sums.target, &g)
            }
            EstimatorKind::IpwAll { normalized } => {
                if data.design() != DesignTag::Nested {
                    return Err(EstimateError::NotNested);
                }
                self.ipw(data, &sums, Weighting::All { normalized }, &mut diagnostics)?
            }
            EstimatorKind::IpwNonparticipants => {
                if sums.target.iter().sum::<f64>() <= 0.0 {
                    return Err(EstimateError::NoNonparticipants);
                }
                self.ipw(data, &sums, Weighting::InverseOdds, &mut diagnostics)?
            }
            EstimatorKind::RelativeScale => self.relative(data, &sums, &mut diagnostics)?,
        };
        Ok(PointEstimate { value, diagnostics })
    }

    /// `g1(x) - g0(x)` on every cell where `need` has weight.
    fn outcome_contrast(
        &self,
        data: &CompositeDataset,
        sums: &CellSums,
        need: &[f64],
        diags: &mut Vec<FitDiagnostic>,
    ) -> Result<Vec<f64>, EstimateError> {
        let [g0, g1] = self.arm_means(data, sums, need, diags)?;
        Ok(g1.iter().zip(&g0).map(|(a, b)| a - b).collect())
    }

    fn arm_means(
        &self,
        data: &CompositeDataset,
        sums: &CellSums,
        need: &[f64],
        diags: &mut Vec<FitDiagnostic>,
    ) -> Result<[Vec<f64>; 2], EstimateError> {
        let mut out: [Vec<f64>; 2] = Default::default();
        for arm in [0u8, 1] {
            let a = arm as usize;
            let w: Vec<f64> = sums.arm_w.iter().map(|v| v[a]).collect();
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(EstimateError::MissingArm(arm));
            }
            let wy: Vec<f64> = sums.arm_y.iter().map(|v| v[a]).collect();
            let model = if arm == 1 { "outcome model a=1" } else { "outcome model a=0" };
            let fit = fit_cells(model, &self.outcome, data, &w, &wy, &self.fit_options, diags)?;
            out[a] = predict_cells(model, &fit, data, need)?;
        }
        Ok(out)
    }

    fn ipw(
        &self,
        data: &CompositeDataset,
        sums: &CellSums,
        weighting: Weighting,
        diags: &mut Vec<FitDiagnostic>,
    ) -> Result<f64, EstimateError> {
        for arm in [0u8, 1] {
            if sums.arm_w.iter().all(|v| v[arm as usize] <= 0.0) {
                return Err(EstimateError::MissingArm(arm));
            }
        }
        let ps_model = "participation model Pr[S=1|X]";
        let ps = fit_cells(
            ps_model,
            &self.participation,
            data,
            &sums.all,
            &sums.trial,
            &self.fit_options,
            diags,
        )?;
        let ps = predict_cells(ps_model, &ps, data, &sums.all)?;
        check_positivity("A5", ps_model, data, &ps, &sums.all)?;
        let e_model = "treatment model Pr[A=1|X,S=1]";
        let treated: Vec<f64> = sums.arm_w.iter().map(|v| v[1]).collect();
        let e = fit_cells(
            e_model,
            &self.treatment,
            data,
            &sums.trial,
            &treated,
            &self.fit_options,
            diags,
        )?;
        let e = predict_cells(e_model, &e, data, &sums.trial)?;
        check_positivity("A4", e_model, data, &e, &sums.trial)?;

        // Per-cell weight of a trial row in each arm.
        let mut num = [0.0; 2];
        let mut den = [0.0; 2];
        for c in 0..data.cells().len() {
            if sums.trial[c] <= 0.0 {
                continue;
            }
            let base = match weighting {
                Weighting::All { .. } => 1.0 / ps[c],
                Weighting::InverseOdds => (1.0 - ps[c]) / ps[c],
            };
            let arm_w = [base / (1.0 - e[c]), base / e[c]];
            for a in 0..2 {
                num[a] += arm_w[a] * sums.arm_y[c][a];
                den[a] += arm_w[a] * sums.arm_w[c][a];
            }
        }
        Ok(match weighting {
            Weighting::All { normalized: true } => num[1] / den[1] - num[0] / den[0],
            Weighting::All { normalized: false } => (num[1] - num[0]) / sums.total(),
            Weighting::InverseOdds => (num[1] - num[0]) / sums.target.iter().sum::<f64>(),
        })
    }

    fn relative(
        &self,
        data: &CompositeDataset,
        sums: &CellSums,
        diags: &mut Vec<FitDiagnostic>,
    ) -> Result<f64, EstimateError> {
        if sums.ctl_w.iter().sum::<f64>() <= 0.0 {
            return Err(EstimateError::MissingControlRows);
        }
        let [g0, g1] = self.arm_means(data, sums, &sums.all, diags)?;
        let q_model = "target control model E[Y|X,S=0]";
        let q = fit_cells(q_model, &self.target, data, &sums.ctl_w, &sums.ctl_y, &self.fit_options, diags)?;
        let q0 = predict_cells(q_model, &q, data, &sums.all)?;
        let mut total = 0.0;
        for (c, x) in data.cells().iter().enumerate() {
            if sums.all[c] <= 0.0 {
                continue;
            }
            if g0[c] <= RATIO_EPS {
                return Err(EstimateError::RatioUndefined { x: x.clone(), value: g0[c] });
            }
            total += sums.all[c] * q0[c] * (g1[c] / g0[c] - 1.0);
        }
        Ok(total / sums.total())
    }
}

#[derive(Debug, Clone, Copy)]
enum Weighting {
    All { normalized: bool },
    InverseOdds,
}

/// Weights and weighted outcomes per covariate cell.
#[derive(Debug, Clone)]
struct CellSums {
    all: Vec<f64>,
    trial: Vec<f64>,
    target: Vec<f64>,
    arm_w: Vec<[f64; 2]>,
    arm_y: Vec<[f64; 2]>,
    ctl_w: Vec<f64>,
    ctl_y: Vec<f64>,
}

impl CellSums {
    fn collect(data: &CompositeDataset, weights: Option<&[f64]>) -> Self {
        let k = data.cells().len();
        let mut s = Self {
            all: vec![0.0; k],
            trial: vec![0.0; k],
            target: vec![0.0; k],
            arm_w: vec![[0.0; 2]; k],
            arm_y: vec![[0.0; 2]; k],
            ctl_w: vec![0.0; k],
            ctl_y: vec![0.0; k],
        };
        for (i, (row, &c)) in data.rows().iter().zip(data.cell_of()).enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            s.all[c] += w;
            if row.s == 1 {
                s.trial[c] += w;
                let a = row.a.expect("trial rows carry a") as usize;
                s.arm_w[c][a] += w;
                s.arm_y[c][a] += w * f64::from(row.y.expect("trial rows carry y"));
            } else {
                s.target[c] += w;
                if row.control {
                    s.ctl_w[c] += w;
                    s.ctl_y[c] += w * f64::from(row.y.expect("control rows carry y"));
                }
            }
        }
        s
    }

    fn total(&self) -> f64 {
        self.all.iter().sum()
    }
}

fn weighted_mean(w: &[f64], v: &[f64]) -> f64 {
    let (num, den) = w
        .iter()
        .zip(v)
        .filter(|(w, _)| **w > 0.0)
        .fold((0.0, 0.0), |(n, d), (w, v)| (n + w * v, d + w));
    num / den
}

/// Fits `spec` to per-cell aggregates: total weight `w` and weighted
/// response sum `wy`.
fn fit_cells(
    model: &'static str,
    spec: &ModelSpec,
    data: &CompositeDataset,
    w: &[f64],
    wy: &[f64],
    opts: &FitOptions,
    diags: &mut Vec<FitDiagnostic>,
) -> Result<GlmFit, EstimateError> {
    let cells = data.cells();
    let fit = if matches!(spec.design, DesignSpec::Saturated { cell_means: true }) {
        let design = Design::new(&spec.design, data.arity(), cells)?;
        let sums: Vec<(f64, f64)> = w.iter().copied().zip(wy.iter().copied()).collect();
        glm::from_cell_sums(&design, &sums, spec.family)
    } else {
        let occupied: Vec<usize> = (0..cells.len()).filter(|&c| w[c] > 0.0).collect();
        let x: Vec<&[f64]> = occupied.iter().map(|&c| cells[c].as_slice()).collect();
        let y: Vec<f64> = occupied.iter().map(|&c| wy[c] / w[c]).collect();
        let cw: Vec<f64> = occupied.iter().map(|&c| w[c]).collect();
        let levels: Vec<Vec<f64>> = x.iter().map(|v| v.to_vec()).collect();
        let design = Design::new(&spec.design, data.arity(), &levels)?;
        match spec.family {
            Family::Logistic => glm::fit_logistic(&design, &x, &y, Some(&cw), opts)?,
            Family::Linear => glm::fit_linear(&design, &x, &y, Some(&cw))?,
        }
    };
    diags.push(FitDiagnostic::of(model, &fit));
    if !fit.converged {
        return Err(EstimateError::NotConverged { model, separated: fit.separated });
    }
    Ok(fit)
}

/// Predictions on every cell with positive `need` weight; other cells get
/// NaN and must not be read.
fn predict_cells(
    model: &'static str,
    fit: &GlmFit,
    data: &CompositeDataset,
    need: &[f64],
) -> Result<Vec<f64>, EstimateError> {
    data.cells()
        .iter()
        .enumerate()
        .map(|(c, x)| {
            if need[c] <= 0.0 {
                return Ok(f64::NAN);
            }
            fit.predict(x).map_err(|e| match e {
                GlmError::EmptyCell(x) => EstimateError::EmptyCell { model, x },
                other => other.into(),
            })
        })
        .collect()
}

fn check_positivity(
    condition: &'static str,
    model: &'static str,
    data: &CompositeDataset,
    p: &[f64],
    need: &[f64],
) -> Result<(), EstimateError> {
    for (c, x) in data.cells().iter().enumerate() {
        if need[c] > 0.0 && !(p[c] > POSITIVITY_EPS && p[c] < 1.0 - POSITIVITY_EPS) {
            return Err(EstimateError::Positivity { condition, model, x: x.clone(), value: p[c] });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostic {
    pub model: String,
    pub family: Family,
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
    pub max_abs_update: f64,
    pub coefficients: Vec<f64>,
}

impl FitDiagnostic {
    fn of(model: &str, fit: &GlmFit) -> Self {
        Self {
            model: model.to_owned(),
            family: fit.family,
            converged: fit.converged,
            separated: fit.separated,
            iterations: fit.iterations,
            max_abs_update: fit.max_abs_update,
            coefficients: fit.coefficients.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub total: usize,
    pub trial: usize,
    pub target: usize,
    pub trial_treated: usize,
    pub trial_control: usize,
    pub control_flagged: usize,
}

impl RowCounts {
    pub fn of(data: &CompositeDataset) -> Self {
        let rows = data.rows();
        let count = |f: &dyn Fn(&crate::data::CompositeRow) -> bool| rows.iter().filter(|r| f(r)).count();
        Self {
            total: rows.len(),
            trial: count(&|r| r.s == 1),
            target: count(&|r| r.s == 0),
            trial_treated: count(&|r| r.s == 1 && r.a == Some(1)),
            trial_control: count(&|r| r.s == 1 && r.a == Some(0)),
            control_flagged: count(&|r| r.control),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub value: f64,
    pub diagnostics: Vec<FitDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub label: String,
    pub method: Method,
    pub point: f64,
    pub ci: Option<BootstrapCi>,
    pub diagnostics: Vec<FitDiagnostic>,
    pub rows: RowCounts,
}

/// Outcome-model standardization over all rows: the trial conditional
/// mean difference averaged over the target covariate distribution.
pub fn estimate_om_all(
    data: &CompositeDataset,
    outcome: &ModelSpec,
) -> Result<EstimateReport, EstimateError> {
    EstimatorConfig::new(EstimatorKind::OmAll).with_outcome(outcome.clone()).estimate(data)
}

/// Inverse-probability weighting of trial outcomes by
/// `1 / (Pr[S=1|X] Pr[A=a|X,S=1])`.
pub fn estimate_ipw_all(
    data: &CompositeDataset,
    participation: &ModelSpec,
    treatment: &ModelSpec,
    normalized: bool,
) -> Result<EstimateReport, EstimateError> {
    EstimatorConfig::new(EstimatorKind::IpwAll { normalized })
        .with_participation(participation.clone())
        .with_treatment(treatment.clone())
        .estimate(data)
}

pub fn estimate_om_nonparticipants(
    data: &CompositeDataset,
    outcome: &ModelSpec,
) -> Result<EstimateReport, EstimateError> {
    EstimatorConfig::new(EstimatorKind::OmNonparticipants)
        .with_outcome(outcome.clone())
        .estimate(data)
}

/// Inverse-odds-of-participation weighting for the non-participant estimand.
pub fn estimate_ipw_nonparticipants(
    data: &CompositeDataset,
    participation: &ModelSpec,
    treatment: &ModelSpec,
) -> Result<EstimateReport, EstimateError> {
    EstimatorConfig::new(EstimatorKind::IpwNonparticipants)
        .with_participation(participation.clone())
        .with_treatment(treatment.clone())
        .estimate(data)
}

/// `mean over rows of q0(x) (g1(x)/g0(x) - 1)` with `q0` fit on
/// control-flagged non-participant outcomes.
pub fn estimate_relative_scale(
    data: &CompositeDataset,
    trial: &ModelSpec,
    target: &ModelSpec,
) -> Result<EstimateReport, EstimateError> {
    EstimatorConfig::new(EstimatorKind::RelativeScale)
        .with_outcome(trial.clone())
        .with_target(target.clone())
        .estimate(data)
}

/// Same functional as [`estimate_om_all`], reported as the trial-context
/// effect.
pub fn estimate_trialctx_all(
    data: &CompositeDataset,
    outcome: &ModelSpec,
) -> Result<EstimateReport, EstimateError> {
    EstimatorConfig::new(EstimatorKind::TrialctxAll).with_outcome(outcome.clone()).estimate(data)
}
