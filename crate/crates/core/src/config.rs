//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys carry a section prefix (`fp.n`, `design.type`, `study.replicates`).
//! Lists are comma separated; fractions such as `1/3` are accepted wherever
//! a real number is expected. Every error names the offending line.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::calib::Distance;
use crate::datamodel::{CsvOptions, DesignType};
use crate::mcstudy::{DesignSpec, SimMethod, StudyConfig, Sweep, SweepParam};
use crate::pipeline::{AuxForm, PredictorSpec, VarianceMode};
use crate::simgen::{self, FpConfig, Phase2Mechanism, StageDraws};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config file `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key/value pairs with their source lines.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, Entry>,
}

const STUDY_KEYS: &[&str] = &[
    "fp.n",
    "fp.rho_x11_x2",
    "fp.rho_x11_z2",
    "fp.eps_sd",
    "fp.beta",
    "fp.stage1_clusters",
    "fp.stage2_per_stage1",
    "fp.units_per_stage2",
    "fp.mos_coefficient",
    "fp.cluster_resid_loading",
    "fp.cluster_z1_noise",
    "fp.seed",
    "design.type",
    "design.n1",
    "design.f2",
    "design.phase2",
    "design.cycles",
    "design.cycles_with_x2",
    "design.n_per_cycle",
    "design.stage1_draws",
    "design.stage2_draws",
    "study.replicates",
    "study.methods",
    "study.seed",
    "study.regenerate_fp",
    "study.variance",
    "sweep.param",
    "sweep.values",
    "sweep.designs",
];

const MODEL_KEYS: &[&str] = &[
    "model.outcome",
    "model.covariates",
    "model.interactions",
    "predictor.mode",
    "predictor.columns",
    "calibration.distance",
    "calibration.auxiliaries",
    "calibration.variance",
    "design.type",
    "design.fp_size",
    "design.cycles",
    "design.cycles_with_x2",
];

/// Parse a real number or a fraction `a/b`.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b) = (a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?);
            if b == 0.0 {
                return None;
            }
            a / b
        }
        None => s.parse::<f64>().ok()?,
    };
    v.is_finite().then_some(v)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

impl ConfigFile {
    /// Parse text, rejecting malformed lines, duplicate keys and keys not in
    /// `allowed`.
    fn parse_with(text: &str, allowed: &[&str]) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Line {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Line { line, message: "empty key".into() });
            }
            if !allowed.contains(&key) {
                return Err(ConfigError::Line { line, message: format!("unknown key `{key}`") });
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                return Err(ConfigError::Line {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            entries.insert(key.to_string(), Entry { value: value.to_string(), line });
        }
        Ok(ConfigFile { entries })
    }

    /// Parse a study / sweep configuration.
    pub fn parse_study(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with(text, STUDY_KEYS)
    }

    /// Parse an analysis model specification.
    pub fn parse_model(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with(text, MODEL_KEYS)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn bad(&self, key: &str, what: &str) -> ConfigError {
        let e = &self.entries[key];
        ConfigError::Line { line: e.line, message: format!("`{key}`: expected {what}, found `{}`", e.value) }
    }

    fn get<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| self.bad(key, what)),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_real(v).map(Some).ok_or_else(|| self.bad(key, "a real number")),
        }
    }

    fn reals(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => split_list(v)
                .iter()
                .map(|t| parse_real(t))
                .collect::<Option<Vec<_>>>()
                .filter(|l| !l.is_empty())
                .map(Some)
                .ok_or_else(|| self.bad(key, "a comma-separated list of numbers")),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.get::<usize>(key, "a non-negative integer")
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_bool(v).map(Some).ok_or_else(|| self.bad(key, "true or false")),
        }
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(split_list)
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T, ConfigError> {
        v.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Attach the line of `key` (or the file as a whole) to a semantic error.
    fn at(&self, key: &str, message: String) -> ConfigError {
        match self.entries.get(key) {
            Some(e) => ConfigError::Line { line: e.line, message },
            None => ConfigError::Invalid(message),
        }
    }
}

fn design_type(cfg: &ConfigFile) -> Result<Option<DesignType>, ConfigError> {
    match cfg.raw("design.type") {
        None => Ok(None),
        Some(v) => match v.to_ascii_lowercase().as_str() {
            "typei" | "type1" | "i" => Ok(Some(DesignType::TypeI)),
            "typeii" | "type2" | "ii" => Ok(Some(DesignType::TypeII)),
            _ => Err(cfg.bad("design.type", "TypeI or TypeII")),
        },
    }
}

/// A simulation job: the study plus an optional sweep.
#[derive(Debug, Clone)]
pub struct StudyJob {
    pub study: StudyConfig,
    pub sweep: Option<Sweep>,
}

fn fp_config(cfg: &ConfigFile, study_seed: u64) -> Result<FpConfig, ConfigError> {
    let mut fp = FpConfig { seed: study_seed, ..FpConfig::default() };
    if let Some(v) = cfg.count("fp.n")? {
        fp.n = v;
    }
    if let Some(v) = cfg.real("fp.eps_sd")? {
        fp.eps_sd = v;
    }
    match (cfg.real("fp.rho_x11_x2")?, cfg.real("fp.rho_x11_z2")?) {
        (Some(_), Some(_)) => {
            return Err(cfg.at("fp.rho_x11_z2", "set only one of `fp.rho_x11_x2` and `fp.rho_x11_z2`".into()))
        }
        (Some(r), None) => fp.rho_x11_z2 = simgen::rho_x11_z2_for(r, fp.eps_sd),
        (None, Some(r)) => fp.rho_x11_z2 = r,
        (None, None) => {}
    }
    if let Some(b) = cfg.reals("fp.beta")? {
        fp.beta = b.try_into().map_err(|_| cfg.bad("fp.beta", "five coefficients (b0, b11, b12, b2, b22)"))?;
    }
    if let Some(v) = cfg.count("fp.stage1_clusters")? {
        fp.stage1_clusters = v;
    }
    if let Some(v) = cfg.count("fp.stage2_per_stage1")? {
        fp.stage2_per_stage1 = v;
    }
    if let Some(v) = cfg.count("fp.units_per_stage2")? {
        fp.units_per_stage2 = v;
    }
    if let Some(v) = cfg.real("fp.mos_coefficient")? {
        fp.mos_coefficient = v;
    }
    if let Some(v) = cfg.real("fp.cluster_resid_loading")? {
        fp.cluster_resid_loading = v;
    }
    if let Some(v) = cfg.real("fp.cluster_z1_noise")? {
        fp.cluster_z1_noise = v;
    }
    if let Some(v) = cfg.get::<u64>("fp.seed", "an unsigned integer")? {
        fp.seed = v;
    }
    fp.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(fp)
}

fn design_spec(cfg: &ConfigFile) -> Result<DesignSpec, ConfigError> {
    match design_type(cfg)?.unwrap_or(DesignType::TypeI) {
        DesignType::TypeI => {
            let n1 = cfg.count("design.n1")?.unwrap_or(2000);
            let f2 = cfg.real("design.f2")?.unwrap_or(1.0 / 3.0);
            if !(f2 > 0.0 && f2 <= 1.0) {
                return Err(cfg.at("design.f2", format!("`design.f2` must lie in (0, 1], found {f2}")));
            }
            let mechanism = match cfg.raw("design.phase2").map(str::to_ascii_lowercase).as_deref() {
                None | Some("within_psu") => Phase2Mechanism::WithinPsu,
                Some("srs") => Phase2Mechanism::Srs,
                Some(_) => return Err(cfg.bad("design.phase2", "within_psu or srs")),
            };
            Ok(DesignSpec::TypeI { n1, f2, mechanism })
        }
        DesignType::TypeII => {
            let cycles = cfg.required("design.cycles", cfg.count("design.cycles")?)?;
            let with_x2 = cfg.count("design.cycles_with_x2")?.unwrap_or(1);
            let n_per_cycle = cfg.required("design.n_per_cycle", cfg.count("design.n_per_cycle")?)?;
            if with_x2 == 0 || with_x2 > cycles {
                return Err(cfg.at(
                    "design.cycles_with_x2",
                    format!("`design.cycles_with_x2` must lie in 1..={cycles}, found {with_x2}"),
                ));
            }
            Ok(DesignSpec::TypeII { cycles, with_x2, n_per_cycle })
        }
    }
}

fn sweep(cfg: &ConfigFile) -> Result<Option<Sweep>, ConfigError> {
    let Some(param) = cfg.raw("sweep.param") else {
        if cfg.contains("sweep.values") || cfg.contains("sweep.designs") {
            return Err(ConfigError::Missing("sweep.param".into()));
        }
        return Ok(None);
    };
    let param = match param.to_ascii_lowercase().as_str() {
        "f2" => SweepParam::F2,
        "rho_x11_x2" => SweepParam::RhoX11X2,
        _ => return Err(cfg.bad("sweep.param", "f2 or rho_x11_x2")),
    };
    let values = cfg.required("sweep.values", cfg.reals("sweep.values")?)?;
    let designs = match cfg.list("sweep.designs") {
        None => vec!["TypeI".to_string()],
        Some(list) => list
            .iter()
            .map(|d| match d.to_ascii_lowercase().as_str() {
                "typei" | "type1" => Ok("TypeI".to_string()),
                "typeii" | "type2" => Ok("TypeII".to_string()),
                _ => Err(cfg.bad("sweep.designs", "a list of TypeI / TypeII")),
            })
            .collect::<Result<_, _>>()?,
    };
    if designs.is_empty() {
        return Err(cfg.bad("sweep.designs", "at least one design"));
    }
    Ok(Some(Sweep { param, values, designs }))
}

/// Build a study (and optional sweep) from a parsed file. `seed` overrides
/// `study.seed`; when `fp.seed` is absent the population uses the study seed.
pub fn study_job(cfg: &ConfigFile, seed: Option<u64>) -> Result<StudyJob, ConfigError> {
    let study_seed = match seed {
        Some(s) => s,
        None => cfg.get::<u64>("study.seed", "an unsigned integer")?.unwrap_or(1),
    };
    let fp = fp_config(cfg, study_seed)?;
    let design = design_spec(cfg)?;
    let draws = StageDraws {
        stage1: cfg.count("design.stage1_draws")?.unwrap_or(StageDraws::default().stage1),
        stage2: cfg.count("design.stage2_draws")?.unwrap_or(StageDraws::default().stage2),
    };
    let replicates = cfg.count("study.replicates")?.unwrap_or(500);
    let methods = match cfg.list("study.methods") {
        None => SimMethod::ALL.to_vec(),
        Some(list) if list.len() == 1 && list[0].eq_ignore_ascii_case("all") => SimMethod::ALL.to_vec(),
        Some(list) => {
            let mut out = Vec::new();
            for name in &list {
                let m = SimMethod::parse(name)
                    .ok_or_else(|| cfg.at("study.methods", format!("unknown method `{name}`")))?;
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            out
        }
    };
    let regenerate_fp = cfg.bool("study.regenerate_fp")?.unwrap_or(false);
    let variance = match cfg.raw("study.variance").map(str::to_ascii_lowercase).as_deref() {
        None | Some("stacked") => VarianceMode::Stacked,
        Some("plugin") | Some("plug-in") => VarianceMode::PlugIn,
        Some(_) => return Err(cfg.bad("study.variance", "stacked or plugin")),
    };
    let study = StudyConfig { fp, design, draws, replicates, methods, seed: study_seed, regenerate_fp, variance };
    study.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(StudyJob { study, sweep: sweep(cfg)? })
}

/// Model and estimator settings for `analyze`.
#[derive(Debug, Clone)]
pub struct AnalysisSpec {
    pub covariates: Vec<String>,
    pub interactions: Vec<String>,
    pub predictor: PredictorSpec,
    pub distance: Distance,
    pub aux: AuxForm,
    pub variance: VarianceMode,
    pub csv: CsvOptions,
}

pub fn analysis_spec(cfg: &ConfigFile) -> Result<AnalysisSpec, ConfigError> {
    if let Some(y) = cfg.raw("model.outcome") {
        if y != "y" {
            return Err(cfg.at("model.outcome", format!("the outcome column must be `y`, found `{y}`")));
        }
    }
    let covariates = cfg.required("model.covariates", cfg.list("model.covariates"))?;
    if covariates.is_empty() {
        return Err(cfg.bad("model.covariates", "at least one column"));
    }
    let interactions = cfg.list("model.interactions").unwrap_or_default();
    if let Some(bad) = interactions.iter().find(|t| t.split(':').count() != 2) {
        return Err(cfg.at("model.interactions", format!("interaction `{bad}` must have the form `a:b`")));
    }
    let columns = cfg.required("predictor.columns", cfg.list("predictor.columns"))?;
    let predictor = match cfg.raw("predictor.mode").map(str::to_ascii_lowercase).as_deref() {
        None | Some("passthrough") => {
            if columns.len() != 1 {
                return Err(cfg.bad("predictor.columns", "exactly one column for passthrough mode"));
            }
            PredictorSpec::PassthroughColumn(columns[0].clone())
        }
        Some("linear") => {
            if columns.is_empty() {
                return Err(cfg.bad("predictor.columns", "at least one regressor"));
            }
            PredictorSpec::LinearInS2(columns)
        }
        Some(_) => return Err(cfg.bad("predictor.mode", "passthrough or linear")),
    };
    let distance = match cfg.raw("calibration.distance").map(str::to_ascii_lowercase).as_deref() {
        None | Some("chisq") | Some("chi-square") | Some("chisquare") => Distance::ChiSquare,
        Some("exponential") | Some("exp") => Distance::Exponential,
        Some(_) => return Err(cfg.bad("calibration.distance", "chisq or exponential")),
    };
    let aux = match cfg.raw("calibration.auxiliaries").map(str::to_ascii_lowercase).as_deref() {
        None | Some("score") => AuxForm::ProxyScore,
        Some("influence") => AuxForm::ProxyInfluence,
        Some(_) => return Err(cfg.bad("calibration.auxiliaries", "score or influence")),
    };
    let variance = match cfg.raw("calibration.variance").map(str::to_ascii_lowercase).as_deref() {
        None | Some("stacked") => VarianceMode::Stacked,
        Some("plugin") | Some("plug-in") => VarianceMode::PlugIn,
        Some(_) => return Err(cfg.bad("calibration.variance", "stacked or plugin")),
    };
    let fp_size = cfg.real("design.fp_size")?;
    if fp_size.is_some_and(|n| n <= 0.0) {
        return Err(cfg.bad("design.fp_size", "a positive population size"));
    }
    let csv = CsvOptions {
        design_type: design_type(cfg)?,
        fp_size,
        cycles_total: cfg.count("design.cycles")?,
        cycles_with_x2: cfg.count("design.cycles_with_x2")?,
    };
    Ok(AnalysisSpec { covariates, interactions, predictor, distance, aux, variance, csv })
}
