//! Weighted logistic regression from design-weighted estimating equations.
//!
//! The score is `U(β) = N⁻¹ Σ w_i (y_i − p_i) x_i` with `x_i = (1, covariates)`.
//! It is solved by Newton–Raphson with step-halving on the weighted deviance.
//! Per-unit influences `Δ̂_i = ∂β̂/∂w_i = (Σ w p(1−p) x xᵀ)⁻¹ (y_i − p_i) x_i`
//! come out of the same factorization.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::datamodel::{ColumnRef, TwoPhaseDataset};
use crate::linalg::{self, expit, CONDITION_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{n} units cannot identify {k} coefficients")]
    TooFewUnits { n: usize, k: usize },
    #[error("outcome has a single class")]
    SingleClass,
    #[error("weight {index} is not positive")]
    NonPositiveWeight { index: usize },
    #[error("design is rank deficient (condition {condition:.3e}); collinear columns {columns:?}")]
    RankDeficient { columns: Vec<usize>, condition: f64 },
    #[error("separation: |beta| reached {max_abs_beta:.1} after {iterations} iterations")]
    Separation { iterations: usize, max_abs_beta: f64 },
    #[error("no convergence after {iterations} iterations (max score {max_score:.3e})")]
    NoConvergence { beta: Vec<f64>, max_score: f64, iterations: usize },
    #[error("score Jacobian is singular")]
    SingularJacobian,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("interaction `{0}` must be written as `a:b`")]
    BadInteraction(String),
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Bound on `max |U|` after rescaling the score to a weighted mean.
    pub tolerance: f64,
    /// `max |β_j|` beyond which the fit is declared separated.
    pub beta_bound: f64,
    /// Accept zero or negative weights (chi-square calibration can produce
    /// them).
    pub allow_nonpositive_weights: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 50, tolerance: 1e-10, beta_bound: 30.0, allow_nonpositive_weights: false }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    /// `U_β = ∂U/∂β` at `beta` (includes the `N⁻¹` factor).
    pub score_jacobian: DMatrix<f64>,
    pub fitted_p: Vec<f64>,
    /// Row `i` is `Δ̂_i`.
    pub influence: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_score: f64,
    /// Weighted deviance of every accepted iterate, starting point first.
    pub deviance_trace: Vec<f64>,
}

/// `Xᵀ diag(d) X`.
pub fn weighted_gram(x: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut xs = x.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            xs[(i, j)] *= d[i];
        }
    }
    x.tr_mul(&xs)
}

fn probabilities(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (x * beta).iter().map(|&u| expit(u)).collect()
}

/// Weighted deviance `−2 Σ w [y log p + (1−y) log(1−p)]`.
pub fn weighted_deviance(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&u, &yi), &wi)| {
            // log(1 + e^u) computed stably
            let softplus = if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
            2.0 * wi * (softplus - yi * u)
        })
        .sum()
}

/// `U(β) = N⁻¹ Σ w_i (y_i − p_i) x_i`.
pub fn score_at(beta: &DVector<f64>, x: &DMatrix<f64>, y: &[f64], w: &[f64], n_scale: f64) -> DVector<f64> {
    let p = probabilities(x, beta);
    let r = DVector::from_iterator(y.len(), (0..y.len()).map(|i| w[i] * (y[i] - p[i])));
    x.tr_mul(&r) / n_scale
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], w: &[f64], opts: &FitOptions) -> Result<(), FitError> {
    let (n, k) = x.shape();
    assert_eq!(y.len(), n, "outcome length");
    assert_eq!(w.len(), n, "weight length");
    if n < k {
        return Err(FitError::TooFewUnits { n, k });
    }
    if let Some(index) = w.iter().position(|&v| !v.is_finite() || (v <= 0.0 && !opts.allow_nonpositive_weights)) {
        return Err(FitError::NonPositiveWeight { index });
    }
    let cases = y.iter().filter(|&&v| v == 1.0).count();
    if cases == 0 || cases == n {
        return Err(FitError::SingleClass);
    }
    let (condition, columns) = linalg::symmetric_condition(&weighted_gram(x, w));
    if !(condition <= CONDITION_LIMIT) {
        return Err(FitError::RankDeficient { columns, condition });
    }
    Ok(())
}

/// Solve the weighted score equation. The first column of `x` must be the
/// intercept.
pub fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    n_scale: f64,
    opts: &FitOptions,
) -> Result<LogisticFit, FitError> {
    check_inputs(x, y, w, opts)?;
    let (n, k) = x.shape();
    let total_w: f64 = w.iter().sum();
    // Scores are compared on the weighted-mean scale whatever `n_scale` is.
    let to_mean = n_scale / total_w;

    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total_w;
    let ybar = if ybar.is_finite() { ybar.clamp(1e-6, 1.0 - 1e-6) } else { 0.5 };
    let mut beta = DVector::zeros(k);
    beta[0] = linalg::logit(ybar).clamp(-5.0, 5.0);
    let mut deviance = weighted_deviance(x, y, w, &beta);
    let mut trace = vec![deviance];

    let mut iterations = 0;
    let mut max_score;
    loop {
        let p = probabilities(x, &beta);
        let r = DVector::from_iterator(n, (0..n).map(|i| w[i] * (y[i] - p[i])));
        let score = x.tr_mul(&r) / n_scale;
        max_score = score.amax() * to_mean;
        if max_score <= opts.tolerance {
            break;
        }
        if iterations == opts.max_iterations {
            return Err(FitError::NoConvergence { beta: beta.iter().copied().collect(), max_score, iterations });
        }
        iterations += 1;
        let d: Vec<f64> = (0..n).map(|i| w[i] * p[i] * (1.0 - p[i])).collect();
        let info = weighted_gram(x, &d) / n_scale;
        let step = match linalg::solve_symmetric(&info, &score, 1e16) {
            Ok(s) => s,
            Err(_) => {
                return Err(FitError::Separation { iterations, max_abs_beta: beta.amax() });
            }
        };
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_dev = weighted_deviance(x, y, w, &candidate);
        let mut halvings = 0;
        while !(cand_dev <= deviance * (1.0 + 1e-13) + 1e-300) && halvings < 40 {
            t *= 0.5;
            candidate = &beta + &step * t;
            cand_dev = weighted_deviance(x, y, w, &candidate);
            halvings += 1;
        }
        if halvings == 40 {
            // Rounding floor: the deviance cannot be lowered any further.
            if max_score <= opts.tolerance * 1e3 {
                break;
            }
            return Err(FitError::NoConvergence { beta: beta.iter().copied().collect(), max_score, iterations });
        }
        beta = candidate;
        deviance = cand_dev;
        trace.push(deviance);
        let max_abs_beta = beta.amax();
        if max_abs_beta > opts.beta_bound {
            return Err(FitError::Separation { iterations, max_abs_beta });
        }
    }

    let fitted_p = probabilities(x, &beta);
    let d: Vec<f64> = (0..n).map(|i| w[i] * fitted_p[i] * (1.0 - fitted_p[i])).collect();
    let gram = weighted_gram(x, &d);
    let score_jacobian = -&gram / n_scale;
    let influence = influence_rows(&gram, x, y, &fitted_p)?;
    Ok(LogisticFit {
        beta,
        score_jacobian,
        fitted_p,
        influence,
        converged: true,
        iterations,
        max_score,
        deviance_trace: trace,
    })
}

fn influence_rows(gram: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], p: &[f64]) -> Result<DMatrix<f64>, FitError> {
    let inv = linalg::inverse_symmetric(gram, 1e16).map_err(|_| FitError::SingularJacobian)?;
    let mut s = x.clone();
    for i in 0..x.nrows() {
        let r = y[i] - p[i];
        for j in 0..x.ncols() {
            s[(i, j)] *= r;
        }
    }
    Ok(s * inv)
}

/// Plug-in influences `Δ̂_i = −N⁻¹ U_β⁻¹ (y_i − p_i) x_i` at a converged fit.
pub fn influence(fit: &LogisticFit, x: &DMatrix<f64>, y: &[f64], n_scale: f64) -> Result<DMatrix<f64>, FitError> {
    let gram = -&fit.score_jacobian * n_scale;
    influence_rows(&gram, x, y, &fit.fitted_p)
}

/// One regressor of the outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Column(ColumnRef),
    Product(ColumnRef, ColumnRef),
}

/// Which columns enter the design row `(1, x_iᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub terms: Vec<Term>,
}

impl ModelSpec {
    /// Resolve covariate names and `a:b` interactions against the dataset.
    pub fn parse(ds: &TwoPhaseDataset, covariates: &[&str], interactions: &[&str]) -> Result<Self, ModelError> {
        let col = |n: &str| ds.column(n.trim()).ok_or_else(|| ModelError::UnknownColumn(n.trim().to_string()));
        let mut terms = Vec::new();
        for c in covariates {
            terms.push(Term::Column(col(c)?));
        }
        for it in interactions {
            let (a, b) = it.split_once(':').ok_or_else(|| ModelError::BadInteraction(it.to_string()))?;
            terms.push(Term::Product(col(a)?, col(b)?));
        }
        Ok(ModelSpec { terms })
    }

    pub fn dim(&self) -> usize {
        1 + self.terms.len()
    }

    pub fn uses_x2(&self) -> bool {
        self.terms.iter().any(|t| match *t {
            Term::Column(c) => c == ColumnRef::X2,
            Term::Product(a, b) => a == ColumnRef::X2 || b == ColumnRef::X2,
        })
    }

    pub fn coefficient_names(&self, ds: &TwoPhaseDataset) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain(self.terms.iter().map(|t| match *t {
                Term::Column(c) => ds.column_name(c),
                Term::Product(a, b) => format!("{}:{}", ds.column_name(a), ds.column_name(b)),
            }))
            .collect()
    }

    /// Design rows for the listed dataset rows; `x2[j]` stands in for the
    /// `x2` column of row `rows[j]` (observed value, prediction or oracle).
    pub fn design_matrix(&self, ds: &TwoPhaseDataset, rows: &[usize], x2: &[f64]) -> DMatrix<f64> {
        let k = self.dim();
        let mut m = DMatrix::zeros(rows.len(), k);
        for (j, &i) in rows.iter().enumerate() {
            let val = |c: ColumnRef| match c {
                ColumnRef::X2 => x2[j],
                other => ds.value(i, other).expect("column resolved at parse time"),
            };
            m[(j, 0)] = 1.0;
            for (t, term) in self.terms.iter().enumerate() {
                m[(j, t + 1)] = match *term {
                    Term::Column(c) => val(c),
                    Term::Product(a, b) => val(a) * val(b),
                };
            }
        }
        m
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Twenty units with one continuous covariate, fixed for oracle checks.
    pub(crate) fn corpus20() -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let xs = [
            -1.8, -1.3, -1.1, -0.9, -0.6, -0.5, -0.3, -0.1, 0.0, 0.2, 0.3, 0.5, 0.6, 0.8, 1.0, 1.1, 1.4, 1.6,
            1.9, 2.3,
        ];
        let ys = [0., 0., 1., 0., 0., 1., 0., 0., 1., 0., 1., 0., 1., 1., 0., 1., 1., 0., 1., 1.];
        let ws = [
            1.0, 2.0, 1.5, 0.8, 1.2, 2.5, 1.0, 0.7, 1.1, 1.9, 1.3, 0.9, 2.2, 1.0, 1.4, 0.6, 1.8, 1.0, 1.2, 0.5,
        ];
        let mut x = DMatrix::zeros(20, 2);
        for i in 0..20 {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xs[i];
        }
        (x, ys.to_vec(), ws.to_vec())
    }

    fn n_of(w: &[f64]) -> f64 {
        w.iter().sum()
    }

    #[test]
    fn independent_outcome_gives_logit_of_weighted_mean() {
        // y is balanced within each x level, so the slope is exactly zero.
        let xs = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 0.0, 1.0, 2.0];
        let ys = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let mut x = DMatrix::zeros(9, 2);
        for i in 0..9 {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xs[i];
        }
        let w = vec![1.0; 9];
        let f = fit(&x, &ys, &w, 9.0, &FitOptions::default()).unwrap();
        let ybar: f64 = 3.0 / 9.0;
        assert!((f.beta[0] - (ybar / (1.0 - ybar)).ln()).abs() < 1e-8);
        assert!(f.beta[1].abs() < 1e-8);
    }

    #[test]
    fn score_is_zero_and_influences_sum_to_zero() {
        let (x, y, w) = corpus20();
        let n = n_of(&w);
        let f = fit(&x, &y, &w, n, &FitOptions::default()).unwrap();
        assert!(score_at(&f.beta, &x, &y, &w, n).amax() <= 1e-10);
        let mut sum = DVector::zeros(2);
        for i in 0..20 {
            sum += f.influence.row(i).transpose() * w[i];
        }
        assert!(sum.amax() < 1e-10, "{sum}");
        // U_β symmetric negative definite
        let j = &f.score_jacobian;
        assert!((j - j.transpose()).amax() < 1e-15);
        assert!(j.clone().symmetric_eigen().eigenvalues.iter().all(|&e| e < 0.0));
    }

    #[test]
    fn score_at_zero_beta() {
        let (x, y, w) = corpus20();
        let got = score_at(&DVector::zeros(2), &x, &y, &w, 7.0);
        let mut want = DVector::zeros(2);
        for i in 0..20 {
            want += x.row(i).transpose() * (w[i] * (y[i] - 0.5));
        }
        assert!((got - want / 7.0).amax() < 1e-15);
    }

    #[test]
    fn score_is_gradient_of_loglik() {
        let (x, y, w) = corpus20();
        let beta = DVector::from_vec(vec![0.2, -0.4]);
        let n = 3.0;
        let u = score_at(&beta, &x, &y, &w, n);
        let h = 1e-6;
        for j in 0..2 {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[j] += h;
            bm[j] -= h;
            // loglik = -deviance / 2
            let fd = -(weighted_deviance(&x, &y, &w, &bp) - weighted_deviance(&x, &y, &w, &bm)) / (4.0 * h) / n;
            assert!((fd - u[j]).abs() <= 1e-7, "{j}: {fd} vs {}", u[j]);
        }
    }

    #[test]
    fn six_unit_fit_matches_grid_search() {
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5];
        let ys = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let ws = [1.0, 2.0, 1.5, 1.0, 0.5, 2.0];
        let mut x = DMatrix::zeros(6, 2);
        for i in 0..6 {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xs[i];
        }
        let f = fit(&x, &ys, &ws, 8.0, &FitOptions::default()).unwrap();
        // Oracle: maximize the weighted log-likelihood by nested grid refinement.
        let loglik = |a: f64, b: f64| -> f64 {
            (0..6)
                .map(|i| {
                    let p = 1.0 / (1.0 + (-(a + b * xs[i])).exp());
                    ws[i] * (ys[i] * p.ln() + (1.0 - ys[i]) * (1.0 - p).ln())
                })
                .sum()
        };
        let (mut ca, mut cb, mut span) = (0.0, 0.0, 4.0);
        for _ in 0..60 {
            let mut best = (f64::NEG_INFINITY, ca, cb);
            for ia in -10..=10 {
                for ib in -10..=10 {
                    let a = ca + span * ia as f64 / 10.0;
                    let b = cb + span * ib as f64 / 10.0;
                    let l = loglik(a, b);
                    if l > best.0 {
                        best = (l, a, b);
                    }
                }
            }
            ca = best.1;
            cb = best.2;
            span *= 0.5;
        }
        assert!((f.beta[0] - ca).abs() <= 1e-6 && (f.beta[1] - cb).abs() <= 1e-6, "{} vs ({ca},{cb})", f.beta);
    }

    #[test]
    fn influence_matches_finite_difference() {
        let (x, y, w) = corpus20();
        let opts = FitOptions::default();
        // Fixed N so only w_i moves the estimate.
        let n = 25.0;
        let f = fit(&x, &y, &w, n, &opts).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..20 {
            let h = 1e-5 * w[i];
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let bp = fit(&x, &y, &wp, n, &opts).unwrap().beta;
            let bm = fit(&x, &y, &wm, n, &opts).unwrap().beta;
            let fd = (bp - bm) / (2.0 * h);
            let d = f.influence.row(i).transpose();
            worst = worst.max((fd - &d).amax() / d.amax());
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn influence_is_proportional_to_score_contribution() {
        let (x, y, w) = corpus20();
        let n = n_of(&w);
        let f = fit(&x, &y, &w, n, &FitOptions::default()).unwrap();
        let m = -f.score_jacobian.clone().try_inverse().unwrap() / n;
        let again = influence(&f, &x, &y, n).unwrap();
        for i in 0..20 {
            let s = x.row(i).transpose() * (y[i] - f.fitted_p[i]);
            let want = &m * s;
            assert!((f.influence.row(i).transpose() - &want).amax() < 1e-12);
            assert!((again.row(i) - f.influence.row(i)).amax() < 1e-15);
        }
    }

    #[test]
    fn duplicated_half_weight_units_give_same_fit() {
        let (x, y, w) = corpus20();
        let f = fit(&x, &y, &w, 30.0, &FitOptions::default()).unwrap();
        let x2 = DMatrix::from_fn(40, 2, |i, j| x[(i % 20, j)]);
        let y2: Vec<f64> = (0..40).map(|i| y[i % 20]).collect();
        let w2: Vec<f64> = (0..40).map(|i| w[i % 20] / 2.0).collect();
        let g = fit(&x2, &y2, &w2, 30.0, &FitOptions::default()).unwrap();
        assert!((&f.beta - &g.beta).amax() < 1e-10);
        for i in 0..20 {
            assert!((f.influence.row(i) - g.influence.row(i)).amax() < 1e-10);
        }
    }

    #[test]
    fn weight_scaling_leaves_beta_unchanged() {
        let (x, y, w) = corpus20();
        let f = fit(&x, &y, &w, n_of(&w), &FitOptions::default()).unwrap();
        let ws: Vec<f64> = w.iter().map(|v| v * 137.0).collect();
        let g = fit(&x, &y, &ws, n_of(&ws), &FitOptions::default()).unwrap();
        assert!((&f.beta - &g.beta).amax() <= 1e-10);
        // Δ̂_i scales as 1/c, so Δ̂_i times the total weight is invariant.
        for i in 0..20 {
            let a = f.influence.row(i) * n_of(&w);
            let b = g.influence.row(i) * n_of(&ws);
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn deviance_never_increases() {
        let (x, y, w) = corpus20();
        let f = fit(&x, &y, &w, 1.0, &FitOptions::default()).unwrap();
        assert!(f.deviance_trace.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-13)));
    }

    #[test]
    fn failure_modes() {
        let (x, y, w) = corpus20();
        let opts = FitOptions::default();
        let mut ybad = y.clone();
        ybad.iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(fit(&x, &ybad, &w, 1.0, &opts).unwrap_err(), FitError::SingleClass);
        let mut wbad = w.clone();
        wbad[3] = 0.0;
        assert_eq!(fit(&x, &y, &wbad, 1.0, &opts).unwrap_err(), FitError::NonPositiveWeight { index: 3 });
        let xc = DMatrix::from_fn(20, 3, |i, j| if j < 2 { x[(i, j)] } else { 2.0 * x[(i, 1)] });
        match fit(&xc, &y, &w, 1.0, &opts).unwrap_err() {
            FitError::RankDeficient { columns, .. } => assert_eq!(columns, vec![1, 2]),
            e => panic!("{e:?}"),
        }
        // perfectly separated
        let ysep: Vec<f64> = (0..20).map(|i| if x[(i, 1)] > 0.1 { 1.0 } else { 0.0 }).collect();
        assert!(matches!(fit(&x, &ysep, &w, 1.0, &opts).unwrap_err(), FitError::Separation { .. }));
        let short = FitOptions { max_iterations: 1, ..opts };
        assert!(matches!(fit(&x, &y, &w, 1.0, &short).unwrap_err(), FitError::NoConvergence { .. }));
    }
}
