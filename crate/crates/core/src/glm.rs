//! Nuisance-model fitting: logistic regression by iteratively reweighted
//! least squares and linear regression by QR least squares.
//!
//! All fits accept optional nonnegative case weights, and logistic fits
//! accept fractional responses in `[0, 1]`. Together these let callers fit
//! on per-cell aggregates (total weight, mean response) instead of raw rows,
//! which gives the same maximizer for both families.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GlmError {
    #[error("weighted design matrix is singular")]
    Singular,
    #[error("design matrix is rank deficient (rank {rank} < {features} features)")]
    RankDeficient { rank: usize, features: usize },
    #[error("design expects {expected} covariates, row has {found}")]
    Arity { expected: usize, found: usize },
    #[error("no observations in covariate cell {0:?}")]
    EmptyCell(Vec<f64>),
    #[error("{rows} weighted rows cannot identify {features} coefficients")]
    TooFewRows { rows: usize, features: usize },
    #[error("response {0} outside [0, 1]")]
    Response(f64),
    #[error("weights must be finite and nonnegative")]
    Weights,
    #[error("covariate column {0} does not exist")]
    Column(usize),
    #[error("x, y and weights have different lengths")]
    Length,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Linear,
}

fn default_true() -> bool {
    true
}

/// Feature map from a covariate tuple to a numeric vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// One indicator per distinct covariate tuple. With `cell_means` the fit
    /// is the per-cell (weighted) mean computed directly, without IRLS.
    Saturated {
        #[serde(default = "default_true")]
        cell_means: bool,
    },
    /// Intercept, the selected covariate columns (all when `None`) and,
    /// optionally, every pairwise product of them.
    Main {
        #[serde(default = "default_true")]
        intercept: bool,
        #[serde(default)]
        columns: Option<Vec<usize>>,
        #[serde(default)]
        interactions: bool,
    },
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self::Saturated { cell_means: true }
    }
}

/// A family plus a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub design: DesignSpec,
}

impl ModelSpec {
    pub fn saturated(family: Family) -> Self {
        Self { family, design: DesignSpec::default() }
    }
}

fn cmp_tuple(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// A design resolved against a covariate arity (and, for saturated designs,
/// the list of cells). Its feature vectors have length [`Design::len`]:
/// the number of cells when saturated, otherwise
/// `intercept + p + p(p-1)/2 * interactions` for `p` selected columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    spec: DesignSpec,
    arity: usize,
    columns: Vec<usize>,
    levels: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(spec: &DesignSpec, arity: usize, levels: &[Vec<f64>]) -> Result<Self, GlmError> {
        let columns = match spec {
            DesignSpec::Main { columns: Some(c), .. } => {
                if let Some(&bad) = c.iter().find(|&&j| j >= arity) {
                    return Err(GlmError::Column(bad));
                }
                c.clone()
            }
            _ => (0..arity).collect(),
        };
        let mut levels = match spec {
            DesignSpec::Saturated { .. } => levels.to_vec(),
            DesignSpec::Main { .. } => Vec::new(),
        };
        for l in &levels {
            if l.len() != arity {
                return Err(GlmError::Arity { expected: arity, found: l.len() });
            }
        }
        levels.sort_by(|a, b| cmp_tuple(a, b));
        levels.dedup_by(|a, b| cmp_tuple(a, b).is_eq());
        Ok(Self { spec: spec.clone(), arity, columns, levels })
    }

    /// Main-effects design with an intercept over all `arity` columns.
    pub fn main(arity: usize) -> Self {
        Self::new(
            &DesignSpec::Main { intercept: true, columns: None, interactions: false },
            arity,
            &[],
        )
        .expect("all columns exist")
    }

    pub fn saturated(levels: &[Vec<f64>]) -> Self {
        let arity = levels.first().map_or(0, Vec::len);
        Self::new(&DesignSpec::Saturated { cell_means: true }, arity, levels)
            .expect("levels share one arity")
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self.spec, DesignSpec::Saturated { .. })
    }

    pub fn uses_cell_means(&self) -> bool {
        matches!(self.spec, DesignSpec::Saturated { cell_means: true })
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn level_of(&self, x: &[f64]) -> Option<usize> {
        self.levels.binary_search_by(|l| cmp_tuple(l, x)).ok()
    }

    pub fn len(&self) -> usize {
        match &self.spec {
            DesignSpec::Saturated { .. } => self.levels.len(),
            DesignSpec::Main { intercept, interactions, .. } => {
                let p = self.columns.len();
                usize::from(*intercept) + p + if *interactions { p * (p - 1) / 2 } else { 0 }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, GlmError> {
        if x.len() != self.arity {
            return Err(GlmError::Arity { expected: self.arity, found: x.len() });
        }
        match &self.spec {
            DesignSpec::Saturated { .. } => {
                let k = self.level_of(x).ok_or_else(|| GlmError::EmptyCell(x.to_vec()))?;
                let mut f = vec![0.0; self.levels.len()];
                f[k] = 1.0;
                Ok(f)
            }
            DesignSpec::Main { intercept, interactions, .. } => {
                let mut f = Vec::with_capacity(self.len());
                if *intercept {
                    f.push(1.0);
                }
                f.extend(self.columns.iter().map(|&j| x[j]));
                if *interactions {
                    for (i, &a) in self.columns.iter().enumerate() {
                        for &b in &self.columns[i + 1..] {
                            f.push(x[a] * x[b]);
                        }
                    }
                }
                Ok(f)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop when the largest absolute coefficient update is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Adds this multiple of the identity to the weighted normal equations.
    pub ridge: Option<f64>,
    /// Fitted probabilities this close to 0 or 1 count as separated.
    pub separation_eps: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100, ridge: None, separation_eps: 1e-10 }
    }
}

impl FitOptions {
    pub const RIDGE: f64 = 1e-8;

    pub fn with_ridge(self) -> Self {
        Self { ridge: Some(Self::RIDGE), ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub family: Family,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_update: f64,
    /// Fitted probabilities collapsed onto 0/1 for a whole response class.
    pub separated: bool,
    /// Log-likelihood after each accepted IRLS step (logistic only);
    /// non-decreasing up to [`LL_NOISE`] relative rounding.
    pub log_likelihood: Vec<f64>,
    design: Design,
    /// Total weight per level for cell-mean fits; zero marks an empty cell.
    cell_weight: Option<Vec<f64>>,
}

impl GlmFit {
    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64, GlmError> {
        if let Some(w) = &self.cell_weight {
            if x.len() != self.design.arity {
                return Err(GlmError::Arity { expected: self.design.arity, found: x.len() });
            }
            let k = self.design.level_of(x).ok_or_else(|| GlmError::EmptyCell(x.to_vec()))?;
            if w[k] <= 0.0 {
                return Err(GlmError::EmptyCell(x.to_vec()));
            }
            return Ok(self.coefficients[k]);
        }
        let f = self.design.features(x)?;
        Ok(f.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }

    /// Mean response at `x`: inverse-logit of the linear predictor for
    /// logistic fits, the linear predictor itself otherwise.
    pub fn predict(&self, x: &[f64]) -> Result<f64, GlmError> {
        let eta = self.linear_predictor(x)?;
        Ok(match self.family {
            Family::Logistic => inv_logit(eta),
            Family::Linear => eta,
        })
    }
}

pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^eta)` without overflow.
fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn check_inputs<X: AsRef<[f64]>>(
    x: &[X],
    y: &[f64],
    w: Option<&[f64]>,
) -> Result<Vec<f64>, GlmError> {
    if x.len() != y.len() || w.is_some_and(|w| w.len() != y.len()) {
        return Err(GlmError::Length);
    }
    let w = w.map_or_else(|| vec![1.0; y.len()], <[f64]>::to_vec);
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(GlmError::Weights);
    }
    Ok(w)
}

fn design_matrix<X: AsRef<[f64]>>(design: &Design, x: &[X]) -> Result<DMatrix<f64>, GlmError> {
    let p = design.len();
    let mut m = DMatrix::zeros(x.len(), p);
    for (i, row) in x.iter().enumerate() {
        for (j, v) in design.features(row.as_ref())?.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Weighted least squares `argmin sum w_i (z_i - x_i b)^2` through a QR
/// factorization of `sqrt(W) X`, optionally ridge-augmented.
fn weighted_lstsq(
    x: &DMatrix<f64>,
    z: &DVector<f64>,
    w: &[f64],
    ridge: Option<f64>,
) -> Result<DVector<f64>, GlmError> {
    let (n, p) = x.shape();
    let extra = if ridge.is_some() { p } else { 0 };
    let mut a = DMatrix::zeros(n + extra, p);
    let mut b = DVector::zeros(n + extra);
    for i in 0..n {
        let sw = w[i].sqrt();
        for j in 0..p {
            a[(i, j)] = sw * x[(i, j)];
        }
        b[i] = sw * z[i];
    }
    if let Some(r) = ridge {
        for j in 0..p {
            a[(n + j, j)] = r.sqrt();
        }
    }
    if a.nrows() < p {
        return Err(GlmError::TooFewRows { rows: a.nrows(), features: p });
    }
    let qr = a.qr();
    let r = qr.r();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let rank = (0..p).filter(|&j| r[(j, j)].abs() > 1e-10 * scale.max(f64::MIN_POSITIVE)).count();
    if rank < p {
        return Err(GlmError::RankDeficient { rank, features: p });
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or(GlmError::Singular)
}

/// Least-squares linear regression.
pub fn fit_linear<X: AsRef<[f64]>>(
    design: &Design,
    x: &[X],
    y: &[f64],
    w: Option<&[f64]>,
) -> Result<GlmFit, GlmError> {
    let w = check_inputs(x, y, w)?;
    if design.uses_cell_means() {
        return fit_cell_means(design, x, y, Some(&w), Family::Linear);
    }
    let rows = w.iter().filter(|&&v| v > 0.0).count();
    if rows < design.len() {
        return Err(GlmError::TooFewRows { rows, features: design.len() });
    }
    let m = design_matrix(design, x)?;
    let beta = weighted_lstsq(&m, &DVector::from_column_slice(y), &w, None)?;
    Ok(GlmFit {
        family: Family::Linear,
        coefficients: beta.iter().copied().collect(),
        converged: true,
        iterations: 1,
        max_abs_update: 0.0,
        separated: false,
        log_likelihood: Vec::new(),
        design: design.clone(),
        cell_weight: None,
    })
}

/// Relative rounding allowance of the log-likelihood in the step-halving test.
pub const LL_NOISE: f64 = 1e-12;

fn logistic_ll(eta: &DVector<f64>, y: &[f64], w: &[f64]) -> f64 {
    eta.iter().zip(y).zip(w).map(|((&e, &yi), &wi)| wi * (yi * e - log1p_exp(e))).sum()
}

/// Logistic regression by IRLS with step halving, so the log-likelihood
/// never decreases between accepted steps beyond rounding noise. Responses
/// may be fractional.
///
/// Separation (all rows of one response class fitted within
/// `separation_eps` of their label) stops the iteration and is reported as
/// a non-converged fit with `separated` set.
pub fn fit_logistic<X: AsRef<[f64]>>(
    design: &Design,
    x: &[X],
    y: &[f64],
    w: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<GlmFit, GlmError> {
    let w = check_inputs(x, y, w)?;
    if let Some(&bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(GlmError::Response(bad));
    }
    if design.uses_cell_means() {
        return fit_cell_means(design, x, y, Some(&w), Family::Logistic);
    }
    let p = design.len();
    let rows = w.iter().filter(|&&v| v > 0.0).count();
    if rows < p {
        return Err(GlmError::TooFewRows { rows, features: p });
    }
    let m = design_matrix(design, x)?;
    let mut beta = DVector::zeros(p);
    let mut eta = &m * &beta;
    let mut ll = logistic_ll(&eta, y, &w);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut separated = false;
    let mut max_update = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if is_separated(&eta, y, &w, opts.separation_eps) {
            separated = true;
            break;
        }
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| inv_logit(e)).collect();
        let var: Vec<f64> = mu.iter().map(|&m| m * (1.0 - m)).collect();
        let irls_w: Vec<f64> = w.iter().zip(&var).map(|(&wi, &v)| wi * v).collect();
        let z = DVector::from_iterator(
            y.len(),
            (0..y.len()).map(|i| {
                if var[i] > 0.0 {
                    eta[i] + (y[i] - mu[i]) / var[i]
                } else {
                    eta[i]
                }
            }),
        );
        let target = match weighted_lstsq(&m, &z, &irls_w, opts.ridge) {
            Ok(b) => b,
            Err(GlmError::RankDeficient { .. }) | Err(GlmError::Singular)
                if is_separated(&eta, y, &w, opts.separation_eps.sqrt()) =>
            {
                separated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let step = &target - &beta;
        let full = step.amax();
        // Near the optimum the gain of a Newton step drops below the rounding
        // error of the log-likelihood sum; such steps are taken as they are.
        let noise = LL_NOISE * ll.abs().max(1.0);
        let mut scale = 1.0;
        let accepted = loop {
            let cand = &beta + &step * scale;
            let cand_eta = &m * &cand;
            let cand_ll = logistic_ll(&cand_eta, y, &w);
            if cand_ll >= ll - noise {
                break Some((cand, cand_eta, cand_ll));
            }
            if full * scale <= opts.tolerance {
                break None;
            }
            scale *= 0.5;
        };
        max_update = full;
        let stuck = accepted.is_none();
        if let Some((next_beta, next_eta, next_ll)) = accepted {
            beta = next_beta;
            eta = next_eta;
            ll = next_ll;
            trace.push(ll);
        }
        if full <= opts.tolerance {
            converged = true;
            break;
        }
        if stuck {
            // no ascent along a non-negligible Newton step
            break;
        }
    }
    if !converged && !separated && is_separated(&eta, y, &w, opts.separation_eps) {
        separated = true;
    }
    Ok(GlmFit {
        family: Family::Logistic,
        coefficients: beta.iter().copied().collect(),
        converged: converged && !separated,
        iterations,
        max_abs_update: max_update,
        separated,
        log_likelihood: trace,
        design: design.clone(),
        cell_weight: None,
    })
}

fn is_separated(eta: &DVector<f64>, y: &[f64], w: &[f64], eps: f64) -> bool {
    let mut class = [(false, true), (false, true)]; // (any row, all at bound)
    for i in 0..y.len() {
        if w[i] <= 0.0 {
            continue;
        }
        let mu = inv_logit(eta[i]);
        if y[i] == 1.0 {
            class[1].0 = true;
            class[1].1 &= mu >= 1.0 - eps;
        } else if y[i] == 0.0 {
            class[0].0 = true;
            class[0].1 &= mu <= eps;
        }
    }
    class.iter().any(|&(any, all)| any && all)
}

/// Saturated fit by direct per-cell weighted means. Cells with no weight
/// are kept but refuse predictions.
pub fn fit_cell_means<X: AsRef<[f64]>>(
    design: &Design,
    x: &[X],
    y: &[f64],
    w: Option<&[f64]>,
    family: Family,
) -> Result<GlmFit, GlmError> {
    let w = check_inputs(x, y, w)?;
    let mut sums = vec![(0.0, 0.0); design.levels.len()];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(&w) {
        let row = row.as_ref();
        if row.len() != design.arity {
            return Err(GlmError::Arity { expected: design.arity, found: row.len() });
        }
        let k = design.level_of(row).ok_or_else(|| GlmError::EmptyCell(row.to_vec()))?;
        sums[k].0 += wi;
        sums[k].1 += wi * yi;
    }
    Ok(from_cell_sums(design, &sums, family))
}

/// Builds a saturated fit from `(total weight, weighted response sum)` per
/// design level.
pub fn from_cell_sums(design: &Design, sums: &[(f64, f64)], family: Family) -> GlmFit {
    let coefficients = sums
        .iter()
        .map(|&(w, s)| {
            if w <= 0.0 {
                f64::NAN
            } else {
                let mean = s / w;
                match family {
                    Family::Linear => mean,
                    Family::Logistic => logit(mean),
                }
            }
        })
        .collect();
    GlmFit {
        family,
        coefficients,
        converged: true,
        iterations: 0,
        max_abs_update: 0.0,
        separated: false,
        log_likelihood: Vec::new(),
        design: design.clone(),
        cell_weight: Some(sums.iter().map(|s| s.0).collect()),
    }
}
