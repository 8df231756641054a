//! Taylor-linearization variances under stratified multistage designs.
//!
//! Every estimator here is an M-estimator `Σ_i ψ_i(θ̂) = 0` summed over the
//! first-phase sample. Its variance is `A⁻¹ B̂ A⁻ᵀ` with `A = ∂Σψ/∂θ` and `B̂`
//! the with-replacement (ultimate cluster) variance of phase-1 PSU totals of
//! `ψ_i` within phase-1 strata. Phase-2 sampling nests inside phase-1 PSUs,
//! so the same PSU totals also carry the phase-2 variability.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::calib::Distance;
use crate::datamodel::DesignFrame;
use crate::linalg::{self, expit};
use crate::wlogit::LogisticFit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarError {
    #[error("stratum `{0}` has a single PSU; variance cannot be estimated")]
    SinglePsu(String),
    #[error("estimating-equation Jacobian is singular (condition {0:.3e})")]
    Singular(f64),
    #[error("covariance is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("design degrees of freedom must be at least 1, got {0}")]
    NoDf(i64),
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    #[serde(serialize_with = "ser_matrix")]
    pub covariance: DMatrix<f64>,
    pub df: i64,
    pub total_psus: usize,
    pub total_strata: usize,
    pub stratum_psu_counts: Vec<(String, usize)>,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

impl VarianceEstimate {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.covariance.nrows()).map(|j| self.covariance[(j, j)].max(0.0).sqrt()).collect()
    }
}

/// `B̂ = Σ_h m_h/(m_h−1) Σ_j (t_hj − t̄_h)(t_hj − t̄_h)ᵀ` over PSU totals
/// `t_hj` of the rows of `psi`.
///
/// Totals are accumulated in a canonical (sorted) order so the result does
/// not depend on the order of units within a PSU.
pub fn psu_meat(psi: &DMatrix<f64>, frame: &DesignFrame) -> Result<DMatrix<f64>, VarError> {
    let d = psi.ncols();
    if let Some(s) = frame.strata.iter().find(|s| s.psu_count() < 2) {
        return Err(VarError::SinglePsu(s.label.clone()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); frame.total_psus];
    for (i, &g) in frame.unit_psu.iter().enumerate() {
        members[g].push(i);
    }
    let mut totals = DMatrix::zeros(frame.total_psus, d);
    let mut buf = Vec::new();
    for (g, rows) in members.iter().enumerate() {
        for c in 0..d {
            buf.clear();
            buf.extend(rows.iter().map(|&i| psi[(i, c)]));
            buf.sort_by(f64::total_cmp);
            totals[(g, c)] = buf.iter().sum();
        }
    }
    let mut meat = DMatrix::zeros(d, d);
    let mut offset = 0;
    for s in &frame.strata {
        let m = s.psu_count();
        let block = totals.rows(offset, m);
        let mean = block.row_mean();
        let mut centered = block.clone_owned();
        for j in 0..m {
            let mut r = centered.row_mut(j);
            r -= &mean;
        }
        meat += centered.tr_mul(&centered) * (m as f64 / (m as f64 - 1.0));
        offset += m;
    }
    Ok(meat)
}

/// Symmetrize and check `λ_min ≥ −1e-12·trace`.
pub fn checked_covariance(c: DMatrix<f64>) -> Result<DMatrix<f64>, VarError> {
    let c = (&c + c.transpose()) * 0.5;
    let trace = c.trace();
    let min = c.clone().symmetric_eigen().eigenvalues.min();
    if !(min >= -1e-12 * trace.abs()) || !trace.is_finite() {
        return Err(VarError::NotPsd(min));
    }
    Ok(c)
}

fn estimate(covariance: DMatrix<f64>, df: i64, frame: &DesignFrame) -> Result<VarianceEstimate, VarError> {
    if df < 1 {
        return Err(VarError::NoDf(df));
    }
    Ok(VarianceEstimate {
        covariance: checked_covariance(covariance)?,
        df,
        total_psus: frame.total_psus,
        total_strata: frame.total_strata,
        stratum_psu_counts: frame.strata.iter().map(|s| (s.label.clone(), s.psu_count())).collect(),
    })
}

/// `V̂(β̂) = U_β⁻¹ B̂ U_β⁻ᵀ` for a direct weighted fit on the dataset rows
/// `rows` (row `j` of `x` belongs to dataset row `rows[j]`).
///
/// The degrees of freedom count only strata holding fitted rows.
pub fn variance_direct(
    fit: &LogisticFit,
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    rows: &[usize],
    frame: &DesignFrame,
    n_scale: f64,
) -> Result<VarianceEstimate, VarError> {
    let k = x.ncols();
    let n1 = frame.unit_psu.len();
    let mut psi = DMatrix::zeros(n1, k);
    let mut mask = vec![false; n1];
    for (j, &i) in rows.iter().enumerate() {
        let r = w[j] * (y[j] - fit.fitted_p[j]) / n_scale;
        for c in 0..k {
            psi[(i, c)] = r * x[(j, c)];
        }
        mask[i] = true;
    }
    let meat = psu_meat(&psi, frame)?;
    let inv = linalg::inverse_symmetric(&fit.score_jacobian, 1e16).map_err(|e| VarError::Singular(e.condition))?;
    estimate(&inv * meat * inv.transpose(), frame.df_for(&mask), frame)
}

/// What the second-phase weights are calibrated on.
#[derive(Debug, Clone)]
pub enum Auxiliaries {
    /// Proxy scores `v_i = (y_i − p*_i) x*_i` of the proxy model fitted on
    /// `s1` with weights `w1`. With `stack_proxy` the proxy coefficients `β*`
    /// join `θ`; otherwise they are held at `beta_star`.
    ProxyScore { xs: DMatrix<f64>, y1: Vec<f64>, w1: Vec<f64>, beta_star: DVector<f64>, stack_proxy: bool },
    /// Fixed auxiliaries over `s1` calibrated to their weighted `s1` total.
    Phase1 { v: DMatrix<f64>, w1: Vec<f64> },
    /// Fixed auxiliaries over `s2` calibrated to known totals.
    Totals { v_s2: DMatrix<f64>, totals: DVector<f64> },
}

/// The calibrated estimator as one system of estimating equations in
/// `θ = (β, η[, β*])`:
///
/// * `G1 = N⁻¹ Σ_{s2} F(v_iᵀη) w_i (y_i − p_i) x_i`
/// * `G2 = N⁻¹ (Σ_{s2} F(v_iᵀη) w_i v_i − T)`, `T = Σ_{s1} w1_i v_i` or known
/// * `G3 = N⁻¹ Σ_{s1} w1_i (y_i − p*_i) x*_i` (proxy model, when stacked)
#[derive(Debug, Clone)]
pub struct StackedSystem {
    /// Outcome-model design rows of the second-phase units.
    pub x: DMatrix<f64>,
    pub y2: Vec<f64>,
    /// Uncalibrated combined weights.
    pub w2: Vec<f64>,
    /// First-phase row of every second-phase unit.
    pub s2_rows: Vec<usize>,
    pub n1: usize,
    pub aux: Auxiliaries,
    pub distance: Distance,
    pub n_scale: f64,
}

struct Parts {
    beta: DVector<f64>,
    eta: DVector<f64>,
    beta_star: Option<DVector<f64>>,
}

impl StackedSystem {
    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        match &self.aux {
            Auxiliaries::ProxyScore { xs, .. } => xs.ncols(),
            Auxiliaries::Phase1 { v, .. } => v.ncols(),
            Auxiliaries::Totals { v_s2, .. } => v_s2.ncols(),
        }
    }

    fn stacked_proxy(&self) -> Option<usize> {
        match &self.aux {
            Auxiliaries::ProxyScore { xs, stack_proxy: true, .. } => Some(xs.ncols()),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.k() + self.q() + self.stacked_proxy().unwrap_or(0)
    }

    /// Assemble `θ` from its blocks.
    pub fn theta(&self, beta: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        let mut parts: Vec<f64> = beta.iter().chain(eta.iter()).copied().collect();
        if let (Some(_), Auxiliaries::ProxyScore { beta_star, .. }) = (self.stacked_proxy(), &self.aux) {
            parts.extend(beta_star.iter());
        }
        DVector::from_vec(parts)
    }

    fn split(&self, theta: &DVector<f64>) -> Parts {
        let (k, q) = (self.k(), self.q());
        Parts {
            beta: theta.rows(0, k).into_owned(),
            eta: theta.rows(k, q).into_owned(),
            beta_star: self.stacked_proxy().map(|ks| theta.rows(k + q, ks).into_owned()),
        }
    }

    /// Auxiliaries of every phase-1 row (`None` for the `Totals` form) and of
    /// every phase-2 unit, with the proxy probabilities when applicable.
    fn aux_rows(&self, parts: &Parts) -> (Option<DMatrix<f64>>, DMatrix<f64>, Option<Vec<f64>>) {
        match &self.aux {
            Auxiliaries::ProxyScore { xs, y1, beta_star, .. } => {
                let bs = parts.beta_star.as_ref().unwrap_or(beta_star);
                let ps: Vec<f64> = (xs * bs).iter().map(|&u| expit(u)).collect();
                let mut v = xs.clone();
                for i in 0..v.nrows() {
                    v.row_mut(i).scale_mut(y1[i] - ps[i]);
                }
                let v2 = v.select_rows(&self.s2_rows);
                (Some(v), v2, Some(ps))
            }
            Auxiliaries::Phase1 { v, .. } => (Some(v.clone()), v.select_rows(&self.s2_rows), None),
            Auxiliaries::Totals { v_s2, .. } => (None, v_s2.clone(), None),
        }
    }

    fn phase1_weights(&self) -> Option<&[f64]> {
        match &self.aux {
            Auxiliaries::ProxyScore { w1, .. } | Auxiliaries::Phase1 { w1, .. } => Some(w1),
            Auxiliaries::Totals { .. } => None,
        }
    }

    /// Per-unit contributions `ψ_i` (one row per phase-1 unit) so that
    /// `Σ_i ψ_i` equals the stacked totals up to the constant known total.
    pub fn contributions(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let parts = self.split(theta);
        let (k, q) = (self.k(), self.q());
        let n = self.n_scale;
        let (v1, v2, _) = self.aux_rows(&parts);
        let mut psi = DMatrix::zeros(self.n1, self.dim());
        let p: Vec<f64> = (&self.x * &parts.beta).iter().map(|&u| expit(u)).collect();
        for (j, &i) in self.s2_rows.iter().enumerate() {
            let u = v2.row(j).dot(&parts.eta.transpose());
            let fw = self.distance.factor(u) * self.w2[j] / n;
            let r = fw * (self.y2[j] - p[j]);
            for c in 0..k {
                psi[(i, c)] += r * self.x[(j, c)];
            }
            for c in 0..q {
                psi[(i, k + c)] += fw * v2[(j, c)];
            }
        }
        if let (Some(v1), Some(w1)) = (v1, self.phase1_weights()) {
            for i in 0..self.n1 {
                for c in 0..q {
                    let t = w1[i] * v1[(i, c)] / n;
                    psi[(i, k + c)] -= t;
                    if self.stacked_proxy().is_some() {
                        psi[(i, k + q + c)] += t;
                    }
                }
            }
        }
        psi
    }

    /// Stacked estimating-equation totals `(G1, G2[, G3])` at `θ`.
    pub fn totals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let psi = self.contributions(theta);
        let mut g = DVector::from_iterator(psi.ncols(), psi.column_iter().map(|c| c.sum()));
        if let Auxiliaries::Totals { totals, .. } = &self.aux {
            let k = self.k();
            for c in 0..self.q() {
                g[k + c] -= totals[c] / self.n_scale;
            }
        }
        g
    }

    /// Analytic Jacobian `A = ∂(G1, G2[, G3])/∂θ`.
    pub fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let parts = self.split(theta);
        let (k, q) = (self.k(), self.q());
        let n = self.n_scale;
        let d = self.dim();
        let (_, v2, ps) = self.aux_rows(&parts);
        let mut a = DMatrix::zeros(d, d);
        let p: Vec<f64> = (&self.x * &parts.beta).iter().map(|&u| expit(u)).collect();
        let proxy = match (&self.aux, self.stacked_proxy()) {
            (Auxiliaries::ProxyScore { xs, w1, .. }, Some(_)) => Some((xs, w1, ps.as_ref().expect("proxy probabilities"))),
            _ => None,
        };
        // H_i = ∂v_i/∂β* = −p*(1−p*) x* x*ᵀ
        let hess = |i: usize| -> DMatrix<f64> {
            let (xs, _, ps) = proxy.expect("stacked proxy");
            let xr = xs.row(i).transpose();
            &xr * xr.transpose() * (-ps[i] * (1.0 - ps[i]))
        };
        for (j, &i) in self.s2_rows.iter().enumerate() {
            let xj = self.x.row(j).transpose();
            let vj = v2.row(j).transpose();
            let u = vj.dot(&parts.eta);
            let f = self.distance.factor(u);
            let fd = self.distance.derivative(u);
            let w = self.w2[j] / n;
            let s = &xj * (self.y2[j] - p[j]);
            // ∂G1/∂β
            let mut blk = a.view_mut((0, 0), (k, k));
            blk += &xj * xj.transpose() * (-f * w * p[j] * (1.0 - p[j]));
            // ∂G1/∂η
            let mut blk = a.view_mut((0, k), (k, q));
            blk += &s * vj.transpose() * (fd * w);
            // ∂G2/∂η
            let mut blk = a.view_mut((k, k), (q, q));
            blk += &vj * vj.transpose() * (fd * w);
            if proxy.is_some() {
                let h = hess(i);
                let h_eta = &h * &parts.eta;
                // ∂G1/∂β*
                let mut blk = a.view_mut((0, k + q), (k, q));
                blk += &s * h_eta.transpose() * (fd * w);
                // ∂G2/∂β*, phase-2 part
                let mut blk = a.view_mut((k, k + q), (q, q));
                blk += (&h * f + &vj * h_eta.transpose() * fd) * w;
            }
        }
        if let Some((_, w1, _)) = proxy {
            for i in 0..self.n1 {
                let h = hess(i) * (w1[i] / n);
                let mut blk = a.view_mut((k, k + q), (q, q));
                blk -= &h;
                let mut blk = a.view_mut((k + q, k + q), (q, q));
                blk += &h;
            }
        }
        a
    }

    /// Top-left `β` block of `A⁻¹ B̂ A⁻ᵀ` at `θ`, with design df over the
    /// whole phase-1 frame.
    pub fn variance(&self, theta: &DVector<f64>, frame: &DesignFrame) -> Result<VarianceEstimate, VarError> {
        let a = self.jacobian(theta);
        let inv = linalg::inverse_general(&a, 1e16).map_err(|e| VarError::Singular(e.condition))?;
        let meat = psu_meat(&self.contributions(theta), frame)?;
        let top = inv.rows(0, self.k()).into_owned();
        estimate(&top * meat * top.transpose(), frame.df(), frame)
    }
}

/// Student-t multiplier `t_{df, (1+level)/2}`.
pub fn t_multiplier(df: i64, level: f64) -> f64 {
    assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
    assert!(df >= 1, "df must be at least 1");
    let t = StudentsT::new(0.0, 1.0, df as f64).expect("valid t parameters");
    t.inverse_cdf(0.5 + level / 2.0)
}

/// Wald intervals `β̂_j ± t_{df,1−α/2} SE_j`.
pub fn wald_ci(beta: &[f64], variance: &DMatrix<f64>, df: i64, level: f64) -> Vec<(f64, f64)> {
    let m = t_multiplier(df, level);
    beta.iter()
        .enumerate()
        .map(|(j, &b)| {
            let se = variance[(j, j)].max(0.0).sqrt();
            (b - m * se, b + m * se)
        })
        .collect()
}
