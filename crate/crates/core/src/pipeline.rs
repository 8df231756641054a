//! The three-step calibration estimator and its comparators.
//!
//! 1. Predict `x2` over the whole first phase (`x2*`).
//! 2. Fit the outcome model on `s1` with `x2*` (the proxy model) and
//!    calibrate the `s2` weights to the weighted `s1` totals of the proxy
//!    score contributions.
//! 3. Refit the outcome model on `s2` with the calibrated weights.
//!
//! Calibrating on the proxy scores `h_i = (y_i − p*_i) x*_i` gives the same
//! chi-square factors as calibrating on the proxy influences `Δ̂_i`, since
//! `Δ̂_i` is `h_i` times a fixed invertible matrix.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::calib::{self, CalibError, CalibrationProblem, Distance};
use crate::datamodel::{design_frame, ColumnRef, DataError, TwoPhaseDataset};
use crate::linalg;
use crate::varest::{self, Auxiliaries, StackedSystem, VarError, VarianceEstimate};
use crate::wlogit::{self, FitError, FitOptions, LogisticFit, ModelError, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("empty second phase")]
    EmptySecondPhase,
    #[error("no observed x2")]
    NoObservedX2,
    #[error("oracle unavailable: x2 is missing on part of the first phase")]
    OracleUnavailable,
    #[error("prediction model: {0}")]
    Predictor(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("fit: {0}")]
    Fit(#[from] FitError),
    #[error("calibration: {0}")]
    Calib(#[from] CalibError),
    #[error("variance: {0}")]
    Variance(#[from] VarError),
    #[error("design: {0}")]
    Data(#[from] DataError),
}

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    DirectS2,
    CalibFP,
    CalibInfluence,
    DirectS1Oracle,
    Imputation,
}

/// How `x2*` is produced over the first phase.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    /// An existing `x1`/`z` column used verbatim.
    PassthroughColumn(String),
    /// Weighted least squares of `x2` on `(1, regressors)` over `s2`.
    LinearInS2(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub values: Vec<f64>,
    /// Weighted `R²` of `x2` against `x2*` over `s2`.
    pub r2: f64,
    /// Least-squares coefficients for `LinearInS2`.
    pub gamma: Option<Vec<f64>>,
}

/// Which auxiliaries the calibration step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AuxForm {
    ProxyScore,
    ProxyInfluence,
}

/// Linearization of the calibrated estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarianceMode {
    /// Stack the proxy fit with the calibration and outcome equations.
    Stacked,
    /// Treat the proxy coefficients as fixed.
    PlugIn,
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    pub fit: FitOptions,
    pub aux: AuxForm,
    pub variance: VarianceMode,
    /// Skip variance estimation (point estimates only).
    pub point_only: bool,
    /// Lower bound on calibration factors.
    pub factor_floor: Option<f64>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            fit: FitOptions::default(),
            aux: AuxForm::ProxyScore,
            variance: VarianceMode::Stacked,
            point_only: false,
            factor_floor: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub n_used: usize,
    pub fit_iterations: usize,
    pub calibration_residual: Option<f64>,
    pub negative_weight_count: Option<usize>,
    pub prediction_r2: Option<f64>,
    /// `max |N⁻¹(Σ_{s2} F w h − Σ_{s1} w1 h)|` over the proxy scores.
    pub score_constraint_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorOutput {
    pub method: Method,
    pub coefficient_names: Vec<String>,
    pub beta: Vec<f64>,
    pub variance: Option<VarianceEstimate>,
    pub diagnostics: Diagnostics,
}

impl EstimatorOutput {
    pub fn df(&self) -> Option<i64> {
        self.variance.as_ref().map(|v| v.df)
    }

    pub fn variances(&self) -> Option<Vec<f64>> {
        self.variance.as_ref().map(|v| (0..self.beta.len()).map(|j| v.covariance[(j, j)]).collect())
    }
}

fn resolve(ds: &TwoPhaseDataset, name: &str) -> Result<ColumnRef, EstimateError> {
    match ds.column(name) {
        Some(ColumnRef::X2) => Err(EstimateError::Predictor("x2 cannot predict itself".into())),
        Some(c) => Ok(c),
        None => Err(ModelError::UnknownColumn(name.to_string()).into()),
    }
}

fn weighted_r2(x2: &[f64], pred: &[f64], w: &[f64]) -> f64 {
    let tw: f64 = w.iter().sum();
    let mean = x2.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / tw;
    let tss: f64 = x2.iter().zip(w).map(|(a, b)| b * (a - mean).powi(2)).sum();
    let rss: f64 = x2.iter().zip(pred).zip(w).map(|((a, p), b)| b * (a - p).powi(2)).sum();
    1.0 - rss / tss
}

/// Step 1: `x2*` for every first-phase row.
pub fn predict_x2(ds: &TwoPhaseDataset, spec: &PredictorSpec) -> Result<Prediction, EstimateError> {
    let s2 = ds.s2_indices();
    if s2.is_empty() {
        return Err(EstimateError::EmptySecondPhase);
    }
    let x2: Vec<f64> = s2.iter().map(|&i| ds.rows[i].x2.ok_or(EstimateError::NoObservedX2)).collect::<Result<_, _>>()?;
    let w: Vec<f64> = s2.iter().map(|&i| ds.rows[i].combined_weight().unwrap_or(f64::NAN)).collect();
    match spec {
        PredictorSpec::PassthroughColumn(name) => {
            let col = resolve(ds, name)?;
            let values: Vec<f64> = (0..ds.n1()).map(|i| ds.value(i, col).unwrap_or(f64::NAN)).collect();
            let pred: Vec<f64> = s2.iter().map(|&i| values[i]).collect();
            Ok(Prediction { r2: weighted_r2(&x2, &pred, &w), values, gamma: None })
        }
        PredictorSpec::LinearInS2(names) => {
            let cols: Vec<ColumnRef> = names.iter().map(|n| resolve(ds, n)).collect::<Result<_, _>>()?;
            let k = cols.len() + 1;
            if s2.len() <= k {
                return Err(EstimateError::Predictor(format!("{} second-phase units for {k} regressors", s2.len())));
            }
            let design = |i: usize| -> Vec<f64> {
                std::iter::once(1.0).chain(cols.iter().map(|&c| ds.value(i, c).unwrap_or(f64::NAN))).collect()
            };
            let tw: f64 = w.iter().sum();
            let mean = x2.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / tw;
            let spread = x2.iter().zip(&w).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>();
            if !(spread > 0.0) {
                return Err(EstimateError::Predictor("x2 has zero variance on the second phase".into()));
            }
            let xm = DMatrix::from_fn(s2.len(), k, |j, c| design(s2[j])[c]);
            let gram = wlogit::weighted_gram(&xm, &w);
            let rhs = xm.tr_mul(&DVector::from_iterator(s2.len(), x2.iter().zip(&w).map(|(a, b)| a * b)));
            let gamma = linalg::solve_symmetric(&gram, &rhs, linalg::CONDITION_LIMIT).map_err(|e| {
                EstimateError::Predictor(format!(
                    "rank-deficient regressors (condition {:.3e}, columns {:?})",
                    e.condition, e.directions
                ))
            })?;
            let values: Vec<f64> =
                (0..ds.n1()).map(|i| design(i).iter().zip(gamma.iter()).map(|(a, b)| a * b).sum()).collect();
            let pred: Vec<f64> = s2.iter().map(|&i| values[i]).collect();
            Ok(Prediction { r2: weighted_r2(&x2, &pred, &w), values, gamma: Some(gamma.iter().copied().collect()) })
        }
    }
}

struct Phase2 {
    rows: Vec<usize>,
    x: DMatrix<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

fn phase2(ds: &TwoPhaseDataset, model: &ModelSpec) -> Result<Phase2, EstimateError> {
    let rows = ds.s2_indices();
    if rows.is_empty() {
        return Err(EstimateError::EmptySecondPhase);
    }
    let x2: Vec<f64> = rows.iter().map(|&i| ds.rows[i].x2.unwrap_or(f64::NAN)).collect();
    if model.uses_x2() && x2.iter().any(|v| v.is_nan()) {
        return Err(EstimateError::NoObservedX2);
    }
    Ok(Phase2 {
        x: model.design_matrix(ds, &rows, &x2),
        y: rows.iter().map(|&i| ds.rows[i].y).collect(),
        w: rows.iter().map(|&i| ds.rows[i].combined_weight().unwrap_or(f64::NAN)).collect(),
        rows,
    })
}

fn output(method: Method, ds: &TwoPhaseDataset, model: &ModelSpec, fit: &LogisticFit, n_used: usize) -> EstimatorOutput {
    EstimatorOutput {
        method,
        coefficient_names: model.coefficient_names(ds),
        beta: fit.beta.iter().copied().collect(),
        variance: None,
        diagnostics: Diagnostics { n_used, fit_iterations: fit.iterations, ..Default::default() },
    }
}

/// Direct fit on all of `s1` with weights `w1`, `x2` column supplied.
fn fit_phase1(
    method: Method,
    ds: &TwoPhaseDataset,
    model: &ModelSpec,
    x2: &[f64],
    opts: &EstimateOptions,
) -> Result<EstimatorOutput, EstimateError> {
    let rows: Vec<usize> = (0..ds.n1()).collect();
    let x = model.design_matrix(ds, &rows, x2);
    let y: Vec<f64> = ds.rows.iter().map(|r| r.y).collect();
    let w: Vec<f64> = ds.rows.iter().map(|r| r.w1).collect();
    let n = ds.n_scale();
    let fit = wlogit::fit(&x, &y, &w, n, &opts.fit)?;
    let mut out = output(method, ds, model, &fit, rows.len());
    if !opts.point_only {
        let frame = design_frame(ds)?;
        out.variance = Some(varest::variance_direct(&fit, &x, &y, &w, &rows, &frame, n)?);
    }
    Ok(out)
}

/// Weighted fit on `s2` with combined weights `w1·w2`.
pub fn estimate_direct_s2(
    ds: &TwoPhaseDataset,
    model: &ModelSpec,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput, EstimateError> {
    let p2 = phase2(ds, model)?;
    let n = ds.n_scale();
    let fit = wlogit::fit(&p2.x, &p2.y, &p2.w, n, &opts.fit)?;
    let mut out = output(Method::DirectS2, ds, model, &fit, p2.rows.len());
    if !opts.point_only {
        let frame = design_frame(ds)?;
        out.variance = Some(varest::variance_direct(&fit, &p2.x, &p2.y, &p2.w, &p2.rows, &frame, n)?);
    }
    Ok(out)
}

/// Fit on `s1` with the true `x2` everywhere (simulation oracle).
pub fn estimate_direct_s1(
    ds: &TwoPhaseDataset,
    model: &ModelSpec,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput, EstimateError> {
    let x2 = ds.full_x2().ok_or(EstimateError::OracleUnavailable)?;
    if x2.iter().any(|v| !v.is_finite()) {
        return Err(EstimateError::OracleUnavailable);
    }
    fit_phase1(Method::DirectS1Oracle, ds, model, &x2, opts)
}

/// Single deterministic imputation: `x2` where observed, `x2*` elsewhere,
/// fitted on `s1` with `w1`. The variance treats the imputed values as fixed.
pub fn estimate_imputation(
    ds: &TwoPhaseDataset,
    model: &ModelSpec,
    spec: &PredictorSpec,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput, EstimateError> {
    if !ds.rows.iter().any(|r| r.in_s2 && r.x2.is_some()) {
        return Err(EstimateError::NoObservedX2);
    }
    let pred = predict_x2(ds, spec)?;
    let x2: Vec<f64> = ds.rows.iter().zip(&pred.values).map(|(r, &p)| if r.in_s2 { r.x2.unwrap_or(p) } else { p }).collect();
    let mut out = fit_phase1(Method::Imputation, ds, model, &x2, opts)?;
    out.diagnostics.prediction_r2 = Some(pred.r2);
    Ok(out)
}

/// Known population totals of `(1, columns…)` for [`estimate_calib_fp`].
#[derive(Debug, Clone)]
pub struct FpTotals {
    pub columns: Vec<String>,
    /// Population size followed by one total per column.
    pub totals: Vec<f64>,
}

/// Calibrate the `s2` weights to population totals of `(1, columns)`, then
/// fit on `s2`.
pub fn estimate_calib_fp(
    ds: &TwoPhaseDataset,
    model: &ModelSpec,
    fp: &FpTotals,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput, EstimateError> {
    let p2 = phase2(ds, model)?;
    let cols: Vec<ColumnRef> = fp.columns.iter().map(|n| resolve(ds, n)).collect::<Result<_, _>>()?;
    assert_eq!(fp.totals.len(), cols.len() + 1, "one total per auxiliary plus the population size");
    let v_s2 = DMatrix::from_fn(p2.rows.len(), cols.len() + 1, |j, c| {
        if c == 0 {
            1.0
        } else {
            ds.value(p2.rows[j], cols[c - 1]).unwrap_or(f64::NAN)
        }
    });
    let n = ds.n_scale();
    let totals = DVector::from_column_slice(&fp.totals);
    let mut problem = CalibrationProblem::with_totals(v_s2.clone(), &p2.w, totals.clone(), Distance::ChiSquare, n);
    problem.floor = opts.factor_floor;
    let cal = calib::solve(&problem)?;
    let fit_opts = FitOptions { allow_nonpositive_weights: true, ..opts.fit };
    let fit = wlogit::fit(&p2.x, &p2.y, &cal.calibrated_weights, n, &fit_opts)?;
    let mut out = output(Method::CalibFP, ds, model, &fit, p2.rows.len());
    out.diagnostics.calibration_residual = Some(cal.constraint_residual);
    out.diagnostics.negative_weight_count = Some(cal.negative_weight_count);
    if !opts.point_only {
        let frame = design_frame(ds)?;
        let sys = StackedSystem {
            x: p2.x,
            y2: p2.y,
            w2: p2.w,
            s2_rows: p2.rows,
            n1: ds.n1(),
            aux: Auxiliaries::Totals { v_s2, totals },
            distance: Distance::ChiSquare,
            n_scale: n,
        };
        let theta = sys.theta(&fit.beta, &DVector::from_vec(cal.eta.clone()));
        out.variance = Some(sys.variance(&theta, &frame)?);
    }
    Ok(out)
}

/// The calibration estimator: proxy fit on `s1` with `x2*`, calibration of
/// `s2` on the proxy scores (or influences), calibrated fit on `s2`.
pub fn estimate_calib_influence(
    ds: &TwoPhaseDataset,
    model: &ModelSpec,
    spec: &PredictorSpec,
    distance: Distance,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput, EstimateError> {
    let p2 = phase2(ds, model)?;
    let pred = predict_x2(ds, spec)?;
    let n = ds.n_scale();
    let all: Vec<usize> = (0..ds.n1()).collect();
    let xs = model.design_matrix(ds, &all, &pred.values);
    let y1: Vec<f64> = ds.rows.iter().map(|r| r.y).collect();
    let w1: Vec<f64> = ds.rows.iter().map(|r| r.w1).collect();
    let proxy = wlogit::fit(&xs, &y1, &w1, n, &opts.fit)?;

    let mut h = xs.clone();
    for i in 0..h.nrows() {
        h.row_mut(i).scale_mut(y1[i] - proxy.fitted_p[i]);
    }
    let aux = match opts.aux {
        AuxForm::ProxyScore => h.clone(),
        AuxForm::ProxyInfluence => proxy.influence.clone(),
    };
    let mut problem = CalibrationProblem::from_phase1(&aux, &w1, &p2.rows, &p2.w, distance, n);
    problem.floor = opts.factor_floor;
    let cal = calib::solve(&problem)?;

    let fit_opts = FitOptions { allow_nonpositive_weights: true, ..opts.fit };
    let fit = wlogit::fit(&p2.x, &p2.y, &cal.calibrated_weights, n, &fit_opts)?;

    // The calibrated s2 proxy score must reproduce the s1 proxy score.
    let h_s2 = h.select_rows(&p2.rows);
    let s1_total = h.tr_mul(&DVector::from_column_slice(&w1));
    let s2_total = h_s2.tr_mul(&DVector::from_column_slice(&cal.calibrated_weights));
    let score_residual = ((s2_total - s1_total) / n).amax();

    let mut out = output(Method::CalibInfluence, ds, model, &fit, p2.rows.len());
    out.diagnostics.calibration_residual = Some(cal.constraint_residual);
    out.diagnostics.negative_weight_count = Some(cal.negative_weight_count);
    out.diagnostics.prediction_r2 = Some(pred.r2);
    out.diagnostics.score_constraint_residual = Some(score_residual);

    if !opts.point_only {
        let frame = design_frame(ds)?;
        let eta = DVector::from_vec(cal.eta.clone());
        // η on the proxy-score scale: Δ̂_i = M h_i with M = −(N U*_β)⁻¹,
        // so v_iᵀη_Δ = h_iᵀ M η_Δ.
        let eta_h = match opts.aux {
            AuxForm::ProxyScore => eta,
            AuxForm::ProxyInfluence => {
                let m = linalg::inverse_symmetric(&(-&proxy.score_jacobian * n), 1e16)
                    .map_err(|e| VarError::Singular(e.condition))?;
                m * eta
            }
        };
        let sys = StackedSystem {
            x: p2.x,
            y2: p2.y,
            w2: p2.w,
            s2_rows: p2.rows,
            n1: ds.n1(),
            aux: Auxiliaries::ProxyScore {
                xs,
                y1,
                w1,
                beta_star: proxy.beta.clone(),
                stack_proxy: opts.variance == VarianceMode::Stacked,
            },
            distance,
            n_scale: n,
        };
        let theta = sys.theta(&fit.beta, &eta_h);
        out.variance = Some(sys.variance(&theta, &frame)?);
    }
    Ok(out)
}
