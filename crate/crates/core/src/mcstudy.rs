//! Monte Carlo replication of the two-phase designs.
//!
//! A study fixes one finite population, draws `R` independent two-phase
//! samples from it and runs every requested estimator on each. Replicates
//! run in parallel and are reduced in replicate order, so results do not
//! depend on scheduling.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calib::Distance;
use crate::datamodel::TwoPhaseDataset;
use crate::pipeline::{self, EstimateOptions, FpTotals, PredictorSpec, VarianceMode};
use crate::simgen::{self, FinitePopulation, FpConfig, Phase2Mechanism, SimError, StageDraws};
use crate::wlogit::{self, FitError, FitOptions, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("census fit failed: {0}")]
    Census(FitError),
    #[error("{method}: {failures} of {replicates} replicates failed (first error: {first_error})")]
    Abort { method: String, failures: usize, replicates: usize, first_error: String },
}

/// The nine estimators compared in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SimMethod {
    DirectS2,
    CalibFp,
    CalibX2s,
    CalibX2ss,
    CalibX2sss,
    DirectS1,
    ImpX2s,
    ImpX2ss,
    ImpX2sss,
}

impl SimMethod {
    pub const ALL: [SimMethod; 9] = [
        SimMethod::DirectS2,
        SimMethod::CalibFp,
        SimMethod::CalibX2s,
        SimMethod::CalibX2ss,
        SimMethod::CalibX2sss,
        SimMethod::DirectS1,
        SimMethod::ImpX2s,
        SimMethod::ImpX2ss,
        SimMethod::ImpX2sss,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SimMethod::DirectS2 => "Direct.s2",
            SimMethod::CalibFp => "Calib.FP",
            SimMethod::CalibX2s => "Calib.X2*",
            SimMethod::CalibX2ss => "Calib.X2**",
            SimMethod::CalibX2sss => "Calib.X2***",
            SimMethod::DirectS1 => "Direct.s1",
            SimMethod::ImpX2s => "Imp.X2*",
            SimMethod::ImpX2ss => "Imp.X2**",
            SimMethod::ImpX2sss => "Imp.X2***",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            SimMethod::DirectS2 => "direct_s2",
            SimMethod::CalibFp => "calib_fp",
            SimMethod::CalibX2s => "calib_x2s",
            SimMethod::CalibX2ss => "calib_x2ss",
            SimMethod::CalibX2sss => "calib_x2sss",
            SimMethod::DirectS1 => "direct_s1",
            SimMethod::ImpX2s => "imp_x2s",
            SimMethod::ImpX2ss => "imp_x2ss",
            SimMethod::ImpX2sss => "imp_x2sss",
        }
    }

    pub fn parse(s: &str) -> Option<SimMethod> {
        SimMethod::ALL.into_iter().find(|m| m.key() == s || m.label() == s)
    }

    /// The ancillary column holding this method's prediction of `x2`.
    fn predictor(self) -> Option<&'static str> {
        match self {
            SimMethod::CalibX2s | SimMethod::ImpX2s => Some("z_3"),
            SimMethod::CalibX2ss | SimMethod::ImpX2ss => Some("z_4"),
            SimMethod::CalibX2sss | SimMethod::ImpX2sss => Some("z_5"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DesignSpec {
    TypeI { n1: usize, f2: f64, mechanism: Phase2Mechanism },
    TypeII { cycles: usize, with_x2: usize, n_per_cycle: usize },
}

impl DesignSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DesignSpec::TypeI { .. } => "TypeI",
            DesignSpec::TypeII { .. } => "TypeII",
        }
    }

    /// Type II counterpart of a Type I design with matched `n1` and `n2`:
    /// `C = round(1/f2)`, `B = 1`, `n = n1 / C`.
    pub fn type2_matching(n1: usize, f2: f64) -> DesignSpec {
        let cycles = (1.0 / f2).round().max(1.0) as usize;
        DesignSpec::TypeII { cycles, with_x2: 1, n_per_cycle: n1 / cycles }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub fp: FpConfig,
    pub design: DesignSpec,
    pub draws: StageDraws,
    pub replicates: usize,
    pub methods: Vec<SimMethod>,
    pub seed: u64,
    /// Draw a fresh population for every replicate (model-based runs).
    pub regenerate_fp: bool,
    pub variance: VarianceMode,
}

impl StudyConfig {
    pub fn check(&self) -> Result<(), StudyError> {
        if self.replicates < 2 {
            return Err(StudyError::Config("at least 2 replicates are required".into()));
        }
        if self.methods.is_empty() {
            return Err(StudyError::Config("no methods selected".into()));
        }
        self.fp.check()?;
        Ok(())
    }
}

/// Covariates of the outcome model and the auxiliaries of Calib.FP.
pub const MODEL_COVARIATES: [&str; 3] = ["x1_1", "x1_2", "x2"];
pub const MODEL_INTERACTIONS: [&str; 1] = ["x2:x1_2"];
pub const FP_CALIBRATION_COLUMNS: [&str; 4] = ["x1_1", "x1_2", "z_1", "z_2"];

pub fn study_model(ds: &TwoPhaseDataset) -> ModelSpec {
    ModelSpec::parse(ds, &MODEL_COVARIATES, &MODEL_INTERACTIONS).expect("simulated datasets carry the model columns")
}

/// One estimator's output on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateEstimate {
    pub beta: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Everything fixed across the replicates of a study.
pub struct StudyContext {
    pub fp: FinitePopulation,
    /// Census coefficients: the unweighted fit over the whole population.
    pub census_beta: Vec<f64>,
    pub fp_totals: FpTotals,
}

impl StudyContext {
    pub fn new(fp: FinitePopulation) -> Result<Self, StudyError> {
        let census_beta = census_fit(&fp)?;
        let fp_totals = FpTotals {
            columns: FP_CALIBRATION_COLUMNS.iter().map(|s| s.to_string()).collect(),
            totals: fp.totals(&FP_CALIBRATION_COLUMNS).expect("known columns"),
        };
        Ok(StudyContext { fp, census_beta, fp_totals })
    }
}

/// Unweighted fit of the outcome model over the whole population.
pub fn census_fit(fp: &FinitePopulation) -> Result<Vec<f64>, StudyError> {
    let n = fp.len();
    let x = nalgebra::DMatrix::from_fn(n, 5, |i, j| match j {
        0 => 1.0,
        1 => fp.x1_1[i],
        2 => fp.x1_2[i],
        3 => fp.x2[i],
        _ => fp.x2[i] * fp.x1_2[i],
    });
    let w = vec![1.0; n];
    let f = wlogit::fit(&x, &fp.y, &w, n as f64, &FitOptions::default()).map_err(StudyError::Census)?;
    Ok(f.beta.iter().copied().collect())
}

/// Draw replicate `r`'s two-phase sample.
pub fn draw_sample(fp: &FinitePopulation, cfg: &StudyConfig, seed: u64) -> Result<TwoPhaseDataset, SimError> {
    match cfg.design {
        DesignSpec::TypeI { n1, f2, mechanism } => simgen::sample_type1(fp, n1, f2, cfg.draws, mechanism, seed),
        DesignSpec::TypeII { cycles, with_x2, n_per_cycle } => {
            simgen::sample_type2(fp, cycles, with_x2, n_per_cycle, cfg.draws, seed)
        }
    }
}

/// Run one method on one dataset.
pub fn run_method(
    method: SimMethod,
    ds: &TwoPhaseDataset,
    fp_totals: &FpTotals,
    opts: &EstimateOptions,
) -> Result<ReplicateEstimate, String> {
    let model = study_model(ds);
    let pred = method.predictor().map(|c| PredictorSpec::PassthroughColumn(c.to_string()));
    let out = match method {
        SimMethod::DirectS2 => pipeline::estimate_direct_s2(ds, &model, opts),
        SimMethod::CalibFp => pipeline::estimate_calib_fp(ds, &model, fp_totals, opts),
        SimMethod::CalibX2s | SimMethod::CalibX2ss | SimMethod::CalibX2sss => {
            pipeline::estimate_calib_influence(ds, &model, pred.as_ref().unwrap(), Distance::ChiSquare, opts)
        }
        SimMethod::DirectS1 => pipeline::estimate_direct_s1(ds, &model, opts),
        SimMethod::ImpX2s | SimMethod::ImpX2ss | SimMethod::ImpX2sss => {
            pipeline::estimate_imputation(ds, &model, pred.as_ref().unwrap(), opts)
        }
    }
    .map_err(|e| e.to_string())?;
    let variance = out.variances().unwrap_or_else(|| vec![f64::NAN; out.beta.len()]);
    Ok(ReplicateEstimate { beta: out.beta, variance })
}

/// Per-replicate outcomes, `results[r][m]` for method `cfg.methods[m]`.
pub type ReplicateTable = Vec<Vec<Result<ReplicateEstimate, String>>>;

/// Run all replicates on a fixed population context.
pub fn run_replicates(ctx: &StudyContext, cfg: &StudyConfig) -> Result<ReplicateTable, StudyError> {
    cfg.check()?;
    let opts = EstimateOptions { variance: cfg.variance, ..EstimateOptions::default() };
    let table: Vec<Result<Vec<Result<ReplicateEstimate, String>>, StudyError>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = simgen::derive_seed(cfg.seed, r as u64);
            let regenerated;
            let (fp, totals) = if cfg.regenerate_fp {
                let fp_cfg = FpConfig { seed: simgen::derive_seed(cfg.fp.seed, r as u64), ..cfg.fp.clone() };
                let fp = simgen::generate_fp(&fp_cfg)?;
                let totals = FpTotals {
                    columns: ctx.fp_totals.columns.clone(),
                    totals: fp.totals(&FP_CALIBRATION_COLUMNS).expect("known columns"),
                };
                regenerated = (fp, totals);
                (&regenerated.0, &regenerated.1)
            } else {
                (&ctx.fp, &ctx.fp_totals)
            };
            let ds = draw_sample(fp, cfg, seed)?;
            Ok(cfg.methods.iter().map(|&m| run_method(m, &ds, totals, &opts)).collect())
        })
        .collect();
    table.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSummary {
    pub coefficient: String,
    pub truth: f64,
    pub mean: f64,
    /// `100 (mean − truth) / truth`, or the absolute bias when the truth is 0.
    pub relative_bias_pct: f64,
    pub bias_is_absolute: bool,
    pub empirical_variance: f64,
    pub mean_analytic_variance: f64,
    pub variance_ratio: f64,
    pub mse: f64,
}

/// Summaries over replicate estimates `estimates[r][j]` with analytic
/// variances `analytic[r][j]`.
pub fn summarize(names: &[String], estimates: &[Vec<f64>], truth: &[f64], analytic: &[Vec<f64>]) -> Vec<CoefficientSummary> {
    let r = estimates.len();
    assert!(r >= 2, "at least two replicates are needed");
    let rf = r as f64;
    (0..truth.len())
        .map(|j| {
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / rf;
            let empirical_variance = estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (rf - 1.0);
            let mean_analytic_variance = analytic.iter().map(|a| a[j]).sum::<f64>() / analytic.len() as f64;
            let bias = mean - truth[j];
            let absolute = truth[j] == 0.0;
            CoefficientSummary {
                coefficient: names[j].clone(),
                truth: truth[j],
                mean,
                relative_bias_pct: if absolute { bias } else { 100.0 * bias / truth[j] },
                bias_is_absolute: absolute,
                empirical_variance,
                mean_analytic_variance,
                variance_ratio: mean_analytic_variance / empirical_variance,
                mse: empirical_variance + bias * bias,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: SimMethod,
    pub label: String,
    pub successes: usize,
    pub failures: usize,
    /// Relative to the census coefficients.
    pub coefficients: Vec<CoefficientSummary>,
    /// Relative bias (%) against the generating coefficients.
    pub relative_bias_model_pct: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub design: String,
    pub replicates: usize,
    pub coefficient_names: Vec<String>,
    pub census_beta: Vec<f64>,
    pub model_beta: Vec<f64>,
    pub methods: Vec<MethodSummary>,
}

impl McSummary {
    pub fn method(&self, m: SimMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// `EmpVar(Direct.s2) / EmpVar(m)` per coefficient.
    pub fn efficiency_gain(&self, m: SimMethod) -> Option<Vec<f64>> {
        let base = self.method(SimMethod::DirectS2)?;
        let other = self.method(m)?;
        Some(
            base.coefficients
                .iter()
                .zip(&other.coefficients)
                .map(|(b, o)| b.empirical_variance / o.empirical_variance)
                .collect(),
        )
    }

    /// One row per method × coefficient.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,coefficient,truth,mean,relative_bias_pct,bias_is_absolute,relative_bias_model_pct,empirical_variance,mean_analytic_variance,variance_ratio,mse,successes,failures\n",
        );
        for m in &self.methods {
            for (j, c) in m.coefficients.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    m.label,
                    c.coefficient,
                    c.truth,
                    c.mean,
                    c.relative_bias_pct,
                    c.bias_is_absolute,
                    m.relative_bias_model_pct[j],
                    c.empirical_variance,
                    c.mean_analytic_variance,
                    c.variance_ratio,
                    c.mse,
                    m.successes,
                    m.failures
                ));
            }
        }
        out
    }
}

pub const COEFFICIENT_NAMES: [&str; 5] = ["(Intercept)", "x1_1", "x1_2", "x2", "x2:x1_2"];

/// Reduce a replicate table; aborts when any method fails on more than 5%
/// of the replicates.
pub fn summarize_table(ctx: &StudyContext, cfg: &StudyConfig, table: &ReplicateTable) -> Result<McSummary, StudyError> {
    let names: Vec<String> = COEFFICIENT_NAMES.iter().map(|s| s.to_string()).collect();
    let model_beta = cfg.fp.beta.to_vec();
    let mut methods = Vec::new();
    for (k, &m) in cfg.methods.iter().enumerate() {
        let ok: Vec<&ReplicateEstimate> = table.iter().filter_map(|row| row[k].as_ref().ok()).collect();
        let failures = cfg.replicates - ok.len();
        if failures * 20 > cfg.replicates || ok.len() < 2 {
            let first_error = table.iter().find_map(|row| row[k].as_ref().err()).cloned().unwrap_or_default();
            return Err(StudyError::Abort { method: m.label().into(), failures, replicates: cfg.replicates, first_error });
        }
        let est: Vec<Vec<f64>> = ok.iter().map(|e| e.beta.clone()).collect();
        let var: Vec<Vec<f64>> = ok.iter().map(|e| e.variance.clone()).collect();
        let coefficients = summarize(&names, &est, &ctx.census_beta, &var);
        let relative_bias_model_pct =
            coefficients.iter().zip(&model_beta).map(|(c, t)| 100.0 * (c.mean - t) / t).collect();
        methods.push(MethodSummary {
            method: m,
            label: m.label().into(),
            successes: ok.len(),
            failures,
            coefficients,
            relative_bias_model_pct,
        });
    }
    Ok(McSummary {
        design: cfg.design.name().into(),
        replicates: cfg.replicates,
        coefficient_names: names,
        census_beta: ctx.census_beta.clone(),
        model_beta,
        methods,
    })
}

/// Generate the population, run every replicate and summarize.
pub fn run_study(cfg: &StudyConfig) -> Result<McSummary, StudyError> {
    cfg.check()?;
    let ctx = StudyContext::new(simgen::generate_fp(&cfg.fp)?)?;
    run_study_on(&ctx, cfg)
}

pub fn run_study_on(ctx: &StudyContext, cfg: &StudyConfig) -> Result<McSummary, StudyError> {
    let table = run_replicates(ctx, cfg)?;
    summarize_table(ctx, cfg, &table)
}

/// The quantity a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    /// Second-phase fraction; Type II uses `C = round(1/f2)`, `B = 1`.
    F2,
    /// `ρ(X1,1, X2)` of the population.
    RhoX11X2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// `"TypeI"` and/or `"TypeII"`.
    pub designs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub design: String,
    pub param: String,
    pub value: f64,
    pub method: String,
    pub coefficient: String,
    pub gain: f64,
    pub empirical_variance: f64,
    pub direct_s2_variance: f64,
    pub replicates: usize,
}

/// Efficiency gains `EmpVar(Direct.s2)/EmpVar(method)` over a grid.
///
/// `cfg.design` supplies `n1` (and the phase-2 mechanism); the design type
/// of each block comes from `sweep.designs`.
pub fn efficiency_sweep(cfg: &StudyConfig, sweep: &Sweep) -> Result<Vec<SweepRow>, StudyError> {
    if sweep.values.is_empty() {
        return Err(StudyError::Config("empty sweep grid".into()));
    }
    let (n1, base_f2, mechanism) = match cfg.design {
        DesignSpec::TypeI { n1, f2, mechanism } => (n1, f2, mechanism),
        DesignSpec::TypeII { cycles, n_per_cycle, .. } => (cycles * n_per_cycle, 1.0 / cycles as f64, Phase2Mechanism::WithinPsu),
    };
    let mut methods = cfg.methods.clone();
    if !methods.contains(&SimMethod::DirectS2) {
        methods.insert(0, SimMethod::DirectS2);
    }
    let mut rows = Vec::new();
    let mut shared: Option<StudyContext> = None;
    for &value in &sweep.values {
        let (fp_cfg, f2) = match sweep.param {
            SweepParam::F2 => (cfg.fp.clone(), value),
            SweepParam::RhoX11X2 => {
                let rho = simgen::rho_x11_z2_for(value, cfg.fp.eps_sd);
                (FpConfig { rho_x11_z2: rho, ..cfg.fp.clone() }, base_f2)
            }
        };
        let ctx_owned;
        let ctx = match sweep.param {
            SweepParam::F2 => {
                if shared.is_none() {
                    shared = Some(StudyContext::new(simgen::generate_fp(&fp_cfg)?)?);
                }
                shared.as_ref().unwrap()
            }
            SweepParam::RhoX11X2 => {
                ctx_owned = StudyContext::new(simgen::generate_fp(&fp_cfg)?)?;
                &ctx_owned
            }
        };
        for design in &sweep.designs {
            let spec = match design.as_str() {
                "TypeI" => DesignSpec::TypeI { n1, f2, mechanism },
                "TypeII" => DesignSpec::type2_matching(n1, f2),
                other => return Err(StudyError::Config(format!("unknown design `{other}`"))),
            };
            let point = StudyConfig { fp: fp_cfg.clone(), design: spec, methods: methods.clone(), ..cfg.clone() };
            let summary = run_study_on(ctx, &point)?;
            let base = summary.method(SimMethod::DirectS2).expect("Direct.s2 is always run");
            for m in &summary.methods {
                for (c, b) in m.coefficients.iter().zip(&base.coefficients) {
                    rows.push(SweepRow {
                        design: design.clone(),
                        param: match sweep.param {
                            SweepParam::F2 => "f2".into(),
                            SweepParam::RhoX11X2 => "rho_x11_x2".into(),
                        },
                        value,
                        method: m.label.clone(),
                        coefficient: c.coefficient.clone(),
                        gain: b.empirical_variance / c.empirical_variance,
                        empirical_variance: c.empirical_variance,
                        direct_s2_variance: b.empirical_variance,
                        replicates: summary.replicates,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("design,param,value,method,coefficient,gain,empirical_variance,direct_s2_variance,replicates\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.design, r.param, r.value, r.method, r.coefficient, r.gain, r.empirical_variance, r.direct_s2_variance, r.replicates
        ));
    }
    out
}

/// Gain of `method` for `coefficient` at one grid point.
pub fn sweep_gain(rows: &[SweepRow], design: &str, value: f64, method: SimMethod, coefficient: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.design == design && r.value == value && r.method == method.label() && r.coefficient == coefficient)
        .map(|r| r.gain)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn constant_estimates_at_truth() {
        let est = vec![vec![1.0, -2.0]; 4];
        let s = summarize(&names(), &est, &[1.0, -2.0], &vec![vec![0.0, 0.0]; 4]);
        assert!(s.iter().all(|c| c.relative_bias_pct == 0.0 && c.empirical_variance == 0.0));
    }

    #[test]
    fn two_replicates() {
        let (t, d) = (0.7, 0.05);
        let est = vec![vec![t - d], vec![t + d]];
        let s = summarize(&names()[..1], &est, &[t], &[vec![1.0], vec![1.0]]);
        assert!((s[0].empirical_variance - 2.0 * d * d).abs() < 1e-15);
    }

    #[test]
    fn three_replicate_fixture() {
        let est = vec![vec![0.9, 0.0], vec![1.1, 0.3], vec![1.3, -0.6]];
        let var = vec![vec![0.04, 0.1], vec![0.05, 0.2], vec![0.03, 0.3]];
        let s = summarize(&names(), &est, &[1.0, 0.0], &var);
        // hand arithmetic
        let mean0 = (0.9 + 1.1 + 1.3) / 3.0;
        let ev0 = ((0.9f64 - mean0).powi(2) + (1.1f64 - mean0).powi(2) + (1.3f64 - mean0).powi(2)) / 2.0;
        assert!((s[0].mean - 1.1).abs() < 1e-12);
        assert!((s[0].empirical_variance - ev0).abs() < 1e-12);
        assert!((s[0].empirical_variance - 0.04).abs() < 1e-12);
        assert!((s[0].relative_bias_pct - 10.0).abs() < 1e-12);
        assert!((s[0].mean_analytic_variance - 0.04).abs() < 1e-12);
        assert!((s[0].variance_ratio - 1.0).abs() < 1e-12);
        assert!((s[0].mse - (0.04 + 0.01)).abs() < 1e-12);
        // zero truth: absolute bias, flagged
        assert!(s[1].bias_is_absolute);
        assert!((s[1].relative_bias_pct - (-0.1)).abs() < 1e-12);
        assert!((s[1].empirical_variance - 0.21).abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in SimMethod::ALL {
            assert_eq!(SimMethod::parse(m.key()), Some(m));
            assert_eq!(SimMethod::parse(m.label()), Some(m));
        }
    }

    #[test]
    fn type2_matching() {
        assert_eq!(DesignSpec::type2_matching(2000, 1.0 / 3.0), DesignSpec::TypeII { cycles: 3, with_x2: 1, n_per_cycle: 666 });
        assert_eq!(DesignSpec::type2_matching(2000, 0.1), DesignSpec::TypeII { cycles: 10, with_x2: 1, n_per_cycle: 200 });
    }
}
