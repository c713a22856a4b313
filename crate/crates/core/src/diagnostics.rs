//! Assumption-facing reports: trial-participation and treatment positivity,
//! participation-by-treatment interaction on both scales, the dual-scale
//! classifier, and mean exchangeability across participation.
//!
//! The interaction and exchangeability checks read potential-outcome
//! columns, which exist only for simulated data. A composite dataset has no
//! outcomes for non-participants, so nothing here approximates them from one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CompositeDataset;
use crate::glm::{self, Design, DesignSpec, Family, FitOptions, GlmError, ModelSpec};
use crate::scm::PotentialOutcomeDataset;

/// Default practical-positivity cutoff on estimated `Pr[S=1 | X]`.
pub const OVERLAP_THRESHOLD: f64 = 0.01;

pub const PO_ONLY_NOTE: &str = "computed from simulated potential outcomes; \
     not estimable from a composite dataset, which has no outcomes for non-participants";

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("no units")]
    Empty,
    #[error("no units with s={s} at x = {x:?}")]
    EmptyCell { x: Vec<f64>, s: u8 },
    #[error("zero denominator for the multiplicative contrast at x = {x:?}")]
    ZeroDenominator { x: Vec<f64> },
    #[error("mean table entry {value} is not positive")]
    NonPositiveMean { value: f64 },
    #[error(transparent)]
    Glm(#[from] GlmError),
}

/// One plot-ready line: `stratum, metric, value, se`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub stratum: String,
    pub metric: String,
    pub value: f64,
    pub se: Option<f64>,
}

fn stratum_label(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| v.to_string()).collect();
    format!("x=({})", parts.join(";"))
}

fn row(x: &[f64], metric: impl Into<String>, value: f64, se: Option<f64>) -> MetricRow {
    MetricRow { stratum: stratum_label(x), metric: metric.into(), value, se }
}

// ---------------------------------------------------------------- positivity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityStratum {
    pub x: Vec<f64>,
    pub total: usize,
    pub target: usize,
    pub trial: usize,
    /// Trial rows in arms a=0 and a=1.
    pub arms: [usize; 2],
    pub p_hat_s: f64,
    pub low_overlap: bool,
    pub empty_arm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub threshold: f64,
    pub total: usize,
    pub strata: Vec<PositivityStratum>,
}

impl PositivityReport {
    pub fn flagged(&self) -> impl Iterator<Item = &PositivityStratum> {
        self.strata.iter().filter(|s| s.low_overlap || s.empty_arm)
    }

    pub fn metric_rows(&self) -> Vec<MetricRow> {
        self.strata
            .iter()
            .flat_map(|s| {
                [
                    row(&s.x, "target_count", s.target as f64, None),
                    row(&s.x, "trial_count", s.trial as f64, None),
                    row(&s.x, "trial_a0_count", s.arms[0] as f64, None),
                    row(&s.x, "trial_a1_count", s.arms[1] as f64, None),
                    row(&s.x, "p_hat_s", s.p_hat_s, None),
                ]
            })
            .collect()
    }
}

/// Per-stratum counts and fitted participation probabilities. Strata are
/// the distinct covariate tuples of the data.
pub fn positivity_report(
    data: &CompositeDataset,
    ps: &ModelSpec,
    threshold: f64,
) -> Result<PositivityReport, DiagnosticsError> {
    let k = data.cells().len();
    let mut total = vec![0usize; k];
    let mut trial = vec![0usize; k];
    let mut arms = vec![[0usize; 2]; k];
    for (r, &c) in data.rows().iter().zip(data.cell_of()) {
        total[c] += 1;
        if r.s == 1 {
            trial[c] += 1;
            arms[c][r.a.expect("trial rows carry a") as usize] += 1;
        }
    }
    let p_hat: Vec<f64> = match ps.design {
        DesignSpec::Saturated { cell_means: true } => {
            (0..k).map(|c| trial[c] as f64 / total[c] as f64).collect()
        }
        _ => {
            let design = Design::new(&ps.design, data.arity(), data.cells())?;
            let y: Vec<f64> = (0..k).map(|c| trial[c] as f64 / total[c] as f64).collect();
            let w: Vec<f64> = total.iter().map(|&t| t as f64).collect();
            let fit = match ps.family {
                Family::Logistic => {
                    glm::fit_logistic(&design, data.cells(), &y, Some(&w), &FitOptions::default())?
                }
                Family::Linear => glm::fit_linear(&design, data.cells(), &y, Some(&w))?,
            };
            data.cells().iter().map(|x| fit.predict(x)).collect::<Result<_, _>>()?
        }
    };
    let strata = (0..k)
        .map(|c| PositivityStratum {
            x: data.cells()[c].clone(),
            total: total[c],
            target: total[c] - trial[c],
            trial: trial[c],
            arms: arms[c],
            p_hat_s: p_hat[c],
            low_overlap: p_hat[c] < threshold,
            empty_arm: arms[c].contains(&0),
        })
        .collect();
    Ok(PositivityReport { threshold, total: data.len(), strata })
}

// --------------------------------------------------------------- interaction

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionStratum {
    pub x: Vec<f64>,
    pub n: usize,
    /// Sample means of `Y^{s,a}` at index `2s + a`.
    pub means: [f64; 4],
    /// `(m11 - m10) - (m01 - m00)`.
    pub additive: f64,
    pub additive_se: f64,
    /// `(m11 / m10) / (m01 / m00)`.
    pub multiplicative: f64,
    pub multiplicative_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionScan {
    pub note: String,
    pub strata: Vec<InteractionStratum>,
}

impl InteractionScan {
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        self.strata
            .iter()
            .flat_map(|s| {
                [
                    row(&s.x, "additive_interaction", s.additive, Some(s.additive_se)),
                    row(
                        &s.x,
                        "multiplicative_interaction",
                        s.multiplicative,
                        Some(s.multiplicative_se),
                    ),
                ]
            })
            .collect()
    }
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var, n)
}

/// Absolute- and relative-scale participation-by-treatment interaction per
/// covariate level, with Monte Carlo standard errors. Units are paired
/// across the four potential outcomes, so the additive SE is that of the
/// individual contrast of contrasts and the multiplicative SE is a delta
/// method on the ratio scale over the same pairs.
pub fn interaction_scan(pod: &PotentialOutcomeDataset) -> Result<InteractionScan, DiagnosticsError> {
    if pod.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut strata = Vec::new();
    for (xi, x) in pod.x_values.iter().enumerate() {
        let units: Vec<_> = pod.units.iter().filter(|u| u.x == xi).collect();
        if units.is_empty() {
            continue;
        }
        let n = units.len() as f64;
        let means: [f64; 4] =
            std::array::from_fn(|k| units.iter().map(|u| f64::from(u.po[k])).sum::<f64>() / n);
        let [m00, m01, m10, m11] = means;
        let (additive, var_c, _) = mean_var(units.iter().map(|u| f64::from(u.interaction())));
        if m10 == 0.0 || m01 == 0.0 {
            return Err(DiagnosticsError::ZeroDenominator { x: x.clone() });
        }
        let ratio = m11 * m00 / (m10 * m01);
        let z = units.iter().map(|u| {
            let y = u.po.map(f64::from);
            (m00 * y[3] + m11 * y[0]) / (m10 * m01) - ratio * y[2] / m10 - ratio * y[1] / m01
        });
        let (_, var_z, _) = mean_var(z);
        strata.push(InteractionStratum {
            x: x.clone(),
            n: units.len(),
            means,
            additive,
            additive_se: (var_c / n).sqrt(),
            multiplicative: ratio,
            multiplicative_se: (var_z / n).sqrt(),
        });
    }
    Ok(InteractionScan { note: PO_ONLY_NOTE.to_owned(), strata })
}

// ---------------------------------------------------------------- dual scale

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Degeneracy {
    /// Risk ratio 1 (and so risk difference 0) in both contexts.
    NullEffect,
    /// Participation does not move the control mean: `m10 = m00`.
    EqualControl,
    Both,
    /// Different strata degenerate differently.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", content = "degeneracy", rename_all = "kebab-case")]
pub enum ScaleClass {
    AdditiveOnly,
    MultiplicativeOnly,
    BothDegenerate(Degeneracy),
    Neither,
}

/// Means `m(s,a)` at one covariate level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanTable {
    pub m11: f64,
    pub m10: f64,
    pub m01: f64,
    pub m00: f64,
}

impl MeanTable {
    pub fn new(m11: f64, m10: f64, m01: f64, m00: f64) -> Self {
        Self { m11, m10, m01, m00 }
    }

    pub fn additive_gap(&self) -> f64 {
        (self.m11 - self.m10) - (self.m01 - self.m00)
    }

    pub fn multiplicative_gap(&self) -> f64 {
        self.m11 / self.m10 - self.m01 / self.m00
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStratum {
    pub table: MeanTable,
    pub additive_gap: f64,
    pub multiplicative_gap: f64,
    pub class: ScaleClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleClassification {
    pub class: ScaleClass,
    pub tolerance: f64,
    pub strata: Vec<ScaleStratum>,
}

/// Which degeneracy explains a table on which both no-interaction
/// conditions hold. Both conditions together force
/// `(r - 1)(m10 - m00) = 0`; with tolerance `tol` on the conditions the
/// factors are only pinned to about `sqrt(tol)`, so that is the cutoff, and
/// if neither factor is inside it the smaller one is reported.
fn degeneracy(t: &MeanTable, tol: f64) -> Degeneracy {
    let cut = tol.sqrt();
    let null = (t.m11 / t.m10 - 1.0).abs();
    let control = (t.m10 - t.m00).abs();
    match (null <= cut, control <= cut) {
        (true, true) => Degeneracy::Both,
        (true, false) => Degeneracy::NullEffect,
        (false, true) => Degeneracy::EqualControl,
        (false, false) if null <= control => Degeneracy::NullEffect,
        _ => Degeneracy::EqualControl,
    }
}

fn classify(additive: bool, multiplicative: bool, deg: impl FnOnce() -> Degeneracy) -> ScaleClass {
    match (additive, multiplicative) {
        (true, true) => ScaleClass::BothDegenerate(deg()),
        (true, false) => ScaleClass::AdditiveOnly,
        (false, true) => ScaleClass::MultiplicativeOnly,
        (false, false) => ScaleClass::Neither,
    }
}

/// Classifies per-stratum mean tables by which no-interaction condition
/// holds (within `tol`) and, when both do, by which degeneracy forces it.
pub fn dual_scale_check(
    tables: &[MeanTable],
    tol: f64,
) -> Result<ScaleClassification, DiagnosticsError> {
    if tables.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut strata = Vec::with_capacity(tables.len());
    for t in tables {
        for value in [t.m11, t.m10, t.m01, t.m00] {
            if value.is_nan() || value <= 0.0 {
                return Err(DiagnosticsError::NonPositiveMean { value });
            }
        }
        let additive_gap = t.additive_gap();
        let multiplicative_gap = t.multiplicative_gap();
        let class = classify(additive_gap.abs() <= tol, multiplicative_gap.abs() <= tol, || {
            degeneracy(t, tol)
        });
        strata.push(ScaleStratum { table: *t, additive_gap, multiplicative_gap, class });
    }
    let additive = strata.iter().all(|s| s.additive_gap.abs() <= tol);
    let multiplicative = strata.iter().all(|s| s.multiplicative_gap.abs() <= tol);
    let class = classify(additive, multiplicative, || {
        let mut kinds = strata.iter().map(|s| match s.class {
            ScaleClass::BothDegenerate(d) => d,
            _ => unreachable!("both conditions hold in every stratum"),
        });
        let first = kinds.next().expect("nonempty");
        if kinds.all(|d| d == first) {
            first
        } else {
            Degeneracy::Mixed
        }
    });
    Ok(ScaleClassification { class, tolerance: tol, strata })
}

// ----------------------------------------------------------- exchangeability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGap {
    pub x: Vec<f64>,
    /// Which potential outcome `Y^{s,a}` is compared.
    pub s: u8,
    pub a: u8,
    pub mean_trial: f64,
    pub mean_target: f64,
    /// `E[Y^{s,a} | x, S=1] - E[Y^{s,a} | x, S=0]`.
    pub gap: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastGap {
    pub x: Vec<f64>,
    /// `Δ1(x | S=1) - Δ1(x)` for `Δ1 = Y^{1,1} - Y^{1,0}`.
    pub gap: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeabilityReport {
    pub note: String,
    pub levels: Vec<LevelGap>,
    pub contrasts: Vec<ContrastGap>,
}

impl ExchangeabilityReport {
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut out: Vec<MetricRow> = self
            .levels
            .iter()
            .map(|l| row(&l.x, format!("level_gap_y{}{}", l.s, l.a), l.gap, Some(l.se)))
            .collect();
        out.extend(self.contrasts.iter().map(|c| row(&c.x, "contrast_gap", c.gap, Some(c.se))));
        out
    }
}

/// Compares potential-outcome means between participants and
/// non-participants within each covariate level, and the trial-context
/// contrast among participants against the whole level.
pub fn exchangeability_mean_check(
    pod: &PotentialOutcomeDataset,
) -> Result<ExchangeabilityReport, DiagnosticsError> {
    if pod.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut levels = Vec::new();
    let mut contrasts = Vec::new();
    for (xi, x) in pod.x_values.iter().enumerate() {
        let by_s: [Vec<_>; 2] = std::array::from_fn(|s| {
            pod.units.iter().filter(|u| u.x == xi && u.s == s as u8).collect()
        });
        if by_s[0].is_empty() && by_s[1].is_empty() {
            continue;
        }
        for s in [0u8, 1] {
            if by_s[s as usize].is_empty() {
                return Err(DiagnosticsError::EmptyCell { x: x.clone(), s });
            }
        }
        let stats = |s: usize, f: &dyn Fn(&crate::scm::Unit) -> f64| {
            mean_var(by_s[s].iter().map(|u| f(u)))
        };
        for ps in [0u8, 1] {
            for pa in [0u8, 1] {
                let f = move |u: &crate::scm::Unit| f64::from(u.y_sa(ps, pa));
                let (m1, v1, n1) = stats(1, &f);
                let (m0, v0, n0) = stats(0, &f);
                levels.push(LevelGap {
                    x: x.clone(),
                    s: ps,
                    a: pa,
                    mean_trial: m1,
                    mean_target: m0,
                    gap: m1 - m0,
                    se: (v1 / n1 as f64 + v0 / n0 as f64).sqrt(),
                });
            }
        }
        let c = |u: &crate::scm::Unit| f64::from(u.y_sa(1, 1)) - f64::from(u.y_sa(1, 0));
        let (c1, v1, n1) = stats(1, &c);
        let (c0, v0, n0) = stats(0, &c);
        // Δ1(x|S=1) - Δ1(x) = (1 - π)(c1 - c0) with π the trial share at x.
        let off = n0 as f64 / (n0 + n1) as f64;
        contrasts.push(ContrastGap {
            x: x.clone(),
            gap: off * (c1 - c0),
            se: off * (v1 / n1 as f64 + v0 / n0 as f64).sqrt(),
        });
    }
    Ok(ExchangeabilityReport { note: PO_ONLY_NOTE.to_owned(), levels, contrasts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::d6;
    use crate::data::{CompositeRow, DesignTag};
    use crate::scm::{generate, presets, Coupling, Unit};
    use approx::assert_abs_diff_eq;

    fn sat() -> ModelSpec {
        ModelSpec::saturated(Family::Logistic)
    }

    #[test]
    fn d6_positivity() {
        let r = positivity_report(&d6(), &sat(), OVERLAP_THRESHOLD).unwrap();
        assert_eq!(r.strata.len(), 2);
        for s in &r.strata {
            assert_abs_diff_eq!(s.p_hat_s, 2.0 / 3.0, epsilon = 1e-15);
            assert!(!s.low_overlap && !s.empty_arm);
        }
        assert_eq!(r.strata.iter().map(|s| s.total).sum::<usize>(), r.total);
        assert_eq!(r.flagged().count(), 0);
    }

    #[test]
    fn positivity_flags() {
        let mut rows = d6().rows().to_vec();
        rows.push(CompositeRow::target(10, vec![2.0]));
        // x=3: one trial row among 200 -> p_hat 0.005
        rows.push(CompositeRow::trial(11, vec![3.0], 1, 0));
        for i in 0..199 {
            rows.push(CompositeRow::target(12 + i, vec![3.0]));
        }
        let d = CompositeDataset::new(rows, DesignTag::Nested).unwrap();
        let r = positivity_report(&d, &sat(), OVERLAP_THRESHOLD).unwrap();
        let at = |x: f64| r.strata.iter().find(|s| s.x == vec![x]).unwrap();
        assert!(at(2.0).empty_arm && at(2.0).low_overlap);
        assert_abs_diff_eq!(at(3.0).p_hat_s, 0.005);
        assert!(at(3.0).low_overlap && at(3.0).empty_arm);
        assert_eq!(r.strata.iter().map(|s| s.total).sum::<usize>(), d.len());
    }

    #[test]
    fn parametric_participation_model() {
        let spec = ModelSpec {
            family: Family::Logistic,
            design: DesignSpec::Main { intercept: true, columns: None, interactions: false },
        };
        let r = positivity_report(&d6(), &spec, OVERLAP_THRESHOLD).unwrap();
        for s in &r.strata {
            assert_abs_diff_eq!(s.p_hat_s, 2.0 / 3.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn dual_scale_examples() {
        let one = |t| dual_scale_check(&[t], 1e-9).unwrap().class;
        assert_eq!(one(MeanTable::new(0.6, 0.3, 0.4, 0.2)), ScaleClass::MultiplicativeOnly);
        assert_eq!(one(MeanTable::new(0.5, 0.3, 0.4, 0.2)), ScaleClass::AdditiveOnly);
        assert_eq!(
            one(MeanTable::new(0.3, 0.3, 0.2, 0.2)),
            ScaleClass::BothDegenerate(Degeneracy::NullEffect)
        );
        assert_eq!(
            one(MeanTable::new(0.5, 0.25, 0.5, 0.25)),
            ScaleClass::BothDegenerate(Degeneracy::EqualControl)
        );
        assert_eq!(one(MeanTable::new(0.9, 0.3, 0.4, 0.2)), ScaleClass::Neither);
        assert!(matches!(
            dual_scale_check(&[MeanTable::new(0.5, 0.0, 0.4, 0.2)], 1e-9),
            Err(DiagnosticsError::NonPositiveMean { .. })
        ));
    }

    #[test]
    fn dual_scale_mixed_strata() {
        let c = dual_scale_check(
            &[MeanTable::new(0.3, 0.3, 0.2, 0.2), MeanTable::new(0.5, 0.25, 0.5, 0.25)],
            1e-9,
        )
        .unwrap();
        assert_eq!(c.class, ScaleClass::BothDegenerate(Degeneracy::Mixed));
    }

    fn unit(x: usize, s: u8, po: [u8; 4]) -> Unit {
        Unit { x, u: 0, v: None, eps: [0.5; 4], s, a_s0: 0, a_s1: 0, a: 0, po, y: po[2 * s as usize] }
    }

    #[test]
    fn equal_means_give_null_contrasts() {
        let pod = PotentialOutcomeDataset {
            x_values: vec![vec![0.0]],
            coupling: Coupling::SharedLatent,
            units: vec![unit(0, 0, [1; 4]), unit(0, 1, [0; 4]), unit(0, 1, [1; 4]), unit(0, 0, [0; 4])],
        };
        let scan = interaction_scan(&pod).unwrap();
        assert_eq!(scan.strata[0].additive, 0.0);
        assert_eq!(scan.strata[0].multiplicative, 1.0);
        let ex = exchangeability_mean_check(&pod).unwrap();
        assert!(ex.levels.iter().all(|l| l.gap == 0.0));
    }

    #[test]
    fn zero_denominator_and_empty_cell() {
        let pod = PotentialOutcomeDataset {
            x_values: vec![vec![0.0]],
            coupling: Coupling::SharedLatent,
            units: vec![unit(0, 1, [1, 1, 0, 1])],
        };
        assert!(matches!(interaction_scan(&pod), Err(DiagnosticsError::ZeroDenominator { .. })));
        assert_eq!(
            exchangeability_mean_check(&pod).unwrap_err(),
            DiagnosticsError::EmptyCell { x: vec![0.0], s: 0 }
        );
    }

    #[test]
    fn o2_additive_interaction() {
        let pod = generate(&presets::o2(), 40_000, 5).unwrap();
        let scan = interaction_scan(&pod).unwrap();
        for s in &scan.strata {
            assert!((s.additive - 0.2).abs() <= 3.0 * s.additive_se, "{s:?}");
        }
        let pod = generate(&presets::o1(), 40_000, 5).unwrap();
        for s in &interaction_scan(&pod).unwrap().strata {
            assert!(s.additive.abs() <= 3.0 * s.additive_se, "{s:?}");
        }
    }

    #[test]
    fn o3_level_gap() {
        let pod = generate(&presets::o3(), 100_000, 9).unwrap();
        let ex = exchangeability_mean_check(&pod).unwrap();
        for l in &ex.levels {
            assert!((l.gap - 0.04).abs() <= 3.0 * l.se, "{l:?}");
        }
        for c in &ex.contrasts {
            assert!(c.gap.abs() <= 3.0 * c.se, "{c:?}");
        }
        assert!(!ex.metric_rows().is_empty());
    }
}
