//! Calibration of second-phase weights to reference totals.
//!
//! Calibrated weights are `w̃_i = F(v_iᵀη) w_i` with `η` solving
//! `Σ_{s2} F(v_iᵀη) w_i v_i = T`, where `T` is either the weighted
//! first-phase total `Σ_{s1} w1_i v_i` or a known population total.
//! Under the chi-square distance `F(u) = 1 + u` and the root is available in
//! closed form; the exponential distance `F(u) = e^u` is solved by Newton.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, CONDITION_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Distance {
    ChiSquare,
    Exponential,
}

impl Distance {
    /// Calibration factor `F(u)`.
    pub fn factor(self, u: f64) -> f64 {
        match self {
            Distance::ChiSquare => 1.0 + u,
            Distance::Exponential => u.exp(),
        }
    }

    /// `F'(u)`.
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Distance::ChiSquare => 1.0,
            Distance::Exponential => u.exp(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("{k} auxiliaries exceed the {n2} second-phase units")]
    TooManyAuxiliaries { k: usize, n2: usize },
    #[error("no auxiliaries")]
    NoAuxiliaries,
    #[error("calibration Gram matrix is singular (condition {condition:.3e}); offending directions {directions:?}")]
    Singular { condition: f64, directions: Vec<usize> },
    #[error("calibration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    /// Auxiliary vectors of the second-phase units, one per row.
    pub v_s2: DMatrix<f64>,
    /// Combined second-phase weights `w = w1 w2`.
    pub w: Vec<f64>,
    /// Totals the calibrated weights must reproduce.
    pub target: DVector<f64>,
    pub distance: Distance,
    pub n_scale: f64,
    /// Lower bound applied to the factors after solving. Flooring breaks the
    /// constraint, which then shows in `constraint_residual`.
    pub floor: Option<f64>,
}

impl CalibrationProblem {
    /// Calibrate `s2` (rows `s2_rows` of `v_s1`) to the weighted `s1` total.
    pub fn from_phase1(
        v_s1: &DMatrix<f64>,
        w1: &[f64],
        s2_rows: &[usize],
        w: &[f64],
        distance: Distance,
        n_scale: f64,
    ) -> Self {
        let target = v_s1.tr_mul(&DVector::from_column_slice(w1));
        let v_s2 = v_s1.select_rows(s2_rows);
        CalibrationProblem { v_s2, w: w.to_vec(), target, distance, n_scale, floor: None }
    }

    /// Calibrate to externally known totals.
    pub fn with_totals(v_s2: DMatrix<f64>, w: &[f64], target: DVector<f64>, distance: Distance, n_scale: f64) -> Self {
        CalibrationProblem { v_s2, w: w.to_vec(), target, distance, n_scale, floor: None }
    }

    pub fn k(&self) -> usize {
        self.v_s2.ncols()
    }

    fn check(&self) -> Result<(), CalibError> {
        let (n2, k) = self.v_s2.shape();
        if k == 0 {
            return Err(CalibError::NoAuxiliaries);
        }
        if k > n2 {
            return Err(CalibError::TooManyAuxiliaries { k, n2 });
        }
        assert_eq!(self.w.len(), n2, "weight length");
        assert_eq!(self.target.len(), k, "target length");
        Ok(())
    }

    /// Column scales bringing every auxiliary to unit max-abs over `s2`.
    fn scales(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.k(),
            (0..self.k()).map(|j| {
                let m = linalg::max_abs(self.v_s2.column(j).iter().copied());
                if m > 0.0 && m.is_finite() {
                    1.0 / m
                } else {
                    1.0
                }
            }),
        )
    }

    /// `N⁻¹(Σ_{s2} w̃ v − T)` for the given calibrated weights.
    pub fn residual(&self, calibrated: &[f64]) -> DVector<f64> {
        (self.v_s2.tr_mul(&DVector::from_column_slice(calibrated)) - &self.target) / self.n_scale
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResult {
    pub eta: Vec<f64>,
    pub factors: Vec<f64>,
    pub calibrated_weights: Vec<f64>,
    /// `max |N⁻¹(Σ_{s2} w̃ v − T)|`.
    pub constraint_residual: f64,
    pub negative_weight_count: usize,
    pub solver_iterations: usize,
}

fn scaled_aux(p: &CalibrationProblem, s: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut v = p.v_s2.clone();
    for j in 0..v.ncols() {
        v.column_mut(j).scale_mut(s[j]);
    }
    (v, p.target.component_mul(s))
}

fn finish(p: &CalibrationProblem, eta: DVector<f64>, mut factors: Vec<f64>, iterations: usize) -> CalibrationResult {
    if let Some(floor) = p.floor {
        factors.iter_mut().for_each(|f| *f = f.max(floor));
    }
    let calibrated: Vec<f64> = factors.iter().zip(&p.w).map(|(f, w)| f * w).collect();
    let constraint_residual = p.residual(&calibrated).amax();
    CalibrationResult {
        eta: eta.iter().copied().collect(),
        negative_weight_count: factors.iter().filter(|&&f| f <= 0.0).count(),
        factors,
        calibrated_weights: calibrated,
        constraint_residual,
        solver_iterations: iterations,
    }
}

/// Closed-form chi-square calibration: `G η = T − Σ_{s2} w v` with
/// `G = Σ_{s2} w v vᵀ`, factors `F_i = 1 + v_iᵀη`.
pub fn solve_chisq(p: &CalibrationProblem) -> Result<CalibrationResult, CalibError> {
    p.check()?;
    let s = scaled_aux(p, &p.scales());
    let (v, t) = s;
    let scales = p.scales();
    let w = DVector::from_column_slice(&p.w);
    let gram = crate::wlogit::weighted_gram(&v, &p.w) / p.n_scale;
    let rhs = (t - v.tr_mul(&w)) / p.n_scale;
    let eta_s = linalg::solve_symmetric(&gram, &rhs, CONDITION_LIMIT)
        .map_err(|e| CalibError::Singular { condition: e.condition, directions: e.directions })?;
    let factors: Vec<f64> = (&v * &eta_s).iter().map(|u| 1.0 + u).collect();
    Ok(finish(p, eta_s.component_mul(&scales), factors, 1))
}

/// Newton–Raphson on `Q(η) = N⁻¹(Σ_{s2} F(vᵀη) w v − T)` from `η = 0`, with
/// step-halving on `max |Q|`.
pub fn solve_newton(p: &CalibrationProblem) -> Result<CalibrationResult, CalibError> {
    const MAX_ITER: usize = 100;
    p.check()?;
    let scales = p.scales();
    let (v, t) = scaled_aux(p, &scales);
    let n = p.n_scale;
    let d = p.distance;
    let q_of = |eta: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let u = &v * eta;
        let fw = DVector::from_iterator(u.len(), u.iter().zip(&p.w).map(|(&ui, &wi)| d.factor(ui) * wi));
        ((v.tr_mul(&fw) - &t) / n, u)
    };
    let tol = 1e-12 * (1.0 + t.amax() / n);
    let mut eta = DVector::zeros(p.k());
    let (mut q, mut u) = q_of(&eta);
    let mut iterations = 0;
    while q.amax() > tol {
        if iterations == MAX_ITER {
            return Err(CalibError::NoConvergence { iterations, residual: q.amax() });
        }
        iterations += 1;
        let dw: Vec<f64> = u.iter().zip(&p.w).map(|(&ui, &wi)| d.derivative(ui) * wi).collect();
        let jac = crate::wlogit::weighted_gram(&v, &dw) / n;
        let step = linalg::solve_symmetric(&jac, &q, CONDITION_LIMIT)
            .map_err(|e| CalibError::Singular { condition: e.condition, directions: e.directions })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &eta - &step * lambda;
            let (cq, cu) = q_of(&cand);
            if cq.amax().is_finite() && cq.amax() < q.amax() {
                eta = cand;
                q = cq;
                u = cu;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(CalibError::NoConvergence { iterations, residual: q.amax() });
        }
    }
    let factors = u.iter().map(|&ui| d.factor(ui)).collect();
    Ok(finish(p, eta.component_mul(&scales), factors, iterations))
}

/// Solve with the method matching the problem's distance.
pub fn solve(p: &CalibrationProblem) -> Result<CalibrationResult, CalibError> {
    match p.distance {
        Distance::ChiSquare => solve_chisq(p),
        Distance::Exponential => solve_newton(p),
    }
}

/// True when chi-square factors from auxiliaries `M v_i` (and totals `M T`)
/// agree with those from `v_i` within 1e-9.
pub fn linear_map_factor_invariance_check(p: &CalibrationProblem, m: &DMatrix<f64>) -> bool {
    let mut mapped = p.clone();
    mapped.distance = Distance::ChiSquare;
    mapped.v_s2 = &p.v_s2 * m.transpose();
    mapped.target = m * &p.target;
    let mut base = p.clone();
    base.distance = Distance::ChiSquare;
    match (solve_chisq(&base), solve_chisq(&mapped)) {
        (Ok(a), Ok(b)) => a.factors.iter().zip(&b.factors).all(|(x, y)| (x - y).abs() <= 1e-9),
        _ => false,
    }
}
