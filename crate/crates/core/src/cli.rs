//! The `twophase` command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 study abort,
//! 4 data or validation failure (including per-method estimation failures
//! in `analyze`).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{self, AnalysisSpec, ConfigError, ConfigFile};
use crate::datamodel::{self, DataError, TwoPhaseDataset};
use crate::mcstudy::{self, McSummary, StudyError, SweepRow};
use crate::pipeline::{self, EstimateOptions, EstimatorOutput};
use crate::simgen;
use crate::varest;
use crate::wlogit::ModelSpec;
use crate::VERSION;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_DATA: i32 = 4;

/// Recorded in every simulation output.
pub const GAIN_DEFINITION: &str = "efficiency_gain = EmpVar(Direct.s2) / EmpVar(method), per coefficient";

#[derive(Debug, Parser)]
#[command(name = "twophase", version, about = "Calibrated logistic regression for two-phase survey samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Write only one format (both by default).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write summary.{csv,json} and run_metadata.json.
    Simulate {
        config: PathBuf,
        /// Override `study.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the first replicate's sample as sample.csv.
        #[arg(long)]
        export_sample: bool,
        /// Also write the finite population as population.csv.
        #[arg(long)]
        export_fp: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run an efficiency sweep and write sweep.csv (long format).
    Sweep {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate a model on a two-phase dataset and write estimates.{csv,json}.
    Analyze {
        data: PathBuf,
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check a dataset against the schema invariants.
    Validate {
        data: PathBuf,
        /// Optional model file supplying design metadata.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
    fn data(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_DATA, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Config(_) => Failure::config(e),
            _ => Failure { code: EXIT_ABORT, message: e.to_string() },
        }
    }
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32, Failure> {
    match cmd {
        Command::Simulate { config, seed, export_sample, export_fp, common } => {
            with_threads(common.threads, || simulate(&config, seed, export_sample, export_fp, &common))
        }
        Command::Sweep { config, seed, common } => with_threads(common.threads, || sweep(&config, seed, &common)),
        Command::Analyze { data, model, common } => with_threads(common.threads, || analyze(&data, &model, &common)),
        Command::Validate { data, model } => validate(&data, model.as_deref()),
    }
}

fn with_threads<F>(threads: Option<usize>, f: F) -> Result<i32, Failure>
where
    F: FnOnce() -> Result<i32, Failure> + Send,
{
    match threads {
        None => f(),
        Some(0) => Err(Failure::config("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::config(format!("cannot start thread pool: {e}")))?
            .install(f),
    }
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written together: staged under temporary names, then renamed.
struct Staged {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    fn new(dir: &Path) -> Self {
        Staged { dir: dir.to_path_buf(), files: Vec::new() }
    }

    fn add(&mut self, name: &str, content: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), content.into()));
    }

    fn commit(self) -> Result<(), Failure> {
        let io = |e: std::io::Error, p: &Path| Failure::config(format!("cannot write `{}`: {e}", p.display()));
        fs::create_dir_all(&self.dir).map_err(|e| io(e, &self.dir))?;
        let mut staged = Vec::new();
        for (name, content) in &self.files {
            let tmp = self.dir.join(format!(".{name}.partial"));
            let mut f = fs::File::create(&tmp).map_err(|e| io(e, &tmp))?;
            f.write_all(content).and_then(|_| f.sync_all()).map_err(|e| io(e, &tmp))?;
            staged.push((tmp, self.dir.join(name)));
        }
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).map_err(|e| io(e, &dest))?;
        }
        Ok(())
    }
}

/// `# key: value` lines prepended to CSV outputs.
fn header(meta: &[(&str, String)]) -> String {
    meta.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect()
}

fn wants(format: Option<Format>, f: Format) -> bool {
    format.is_none_or(|x| x == f)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn study_metadata(config_path: &Path, text: &str, job: &config::StudyJob) -> Vec<(&'static str, String)> {
    vec![
        ("tool", format!("twophase {VERSION}")),
        ("config", config_path.display().to_string()),
        ("config_sha256", sha256_hex(text.as_bytes())),
        ("seed", job.study.seed.to_string()),
        ("fp_seed", job.study.fp.seed.to_string()),
        ("replicates", job.study.replicates.to_string()),
        ("replicate_seed_rule", "splitmix64(seed + replicate index)".into()),
        ("efficiency_gain", GAIN_DEFINITION.into()),
    ]
}

fn meta_json(meta: &[(&str, String)]) -> serde_json::Map<String, serde_json::Value> {
    meta.iter().map(|(k, v)| (k.to_string(), json!(v))).collect()
}

fn simulate(
    path: &Path,
    seed: Option<u64>,
    export_sample: bool,
    export_fp: bool,
    common: &Common,
) -> Result<i32, Failure> {
    let text = read_text(path)?;
    let job = config::study_job(&ConfigFile::parse_study(&text)?, seed)?;
    let fp = simgen::generate_fp(&job.study.fp).map_err(Failure::config)?;
    let ctx = mcstudy::StudyContext::new(fp)?;
    let summary: McSummary = mcstudy::run_study_on(&ctx, &job.study)?;
    let meta = study_metadata(path, &text, &job);
    let mut out = Staged::new(&common.out);
    if wants(common.format, Format::Csv) {
        out.add("summary.csv", header(&meta) + &summary.to_csv());
    }
    if wants(common.format, Format::Json) {
        out.add("summary.json", to_json(&json!({ "metadata": meta_json(&meta), "summary": summary })));
    }
    let gains: serde_json::Map<String, serde_json::Value> = summary
        .methods
        .iter()
        .filter_map(|m| summary.efficiency_gain(m.method).map(|g| (m.label.clone(), json!(g))))
        .collect();
    out.add(
        "run_metadata.json",
        to_json(&json!({
            "metadata": meta_json(&meta),
            "study": job.study,
            "census_beta": summary.census_beta,
            "efficiency_gain": gains,
        })),
    );
    if export_sample {
        let ds = mcstudy::draw_sample(&ctx.fp, &job.study, simgen::derive_seed(job.study.seed, 0))
            .map_err(Failure::config)?;
        out.add("sample.csv", header(&meta) + &dataset_csv(&ds)?);
    }
    if export_fp {
        out.add("population.csv", header(&meta) + &dataset_csv(&ctx.fp.to_dataset())?);
    }
    out.commit()?;
    eprintln!("simulate: {} replicates, {} methods, output in {}", job.study.replicates, summary.methods.len(), common.out.display());
    Ok(EXIT_OK)
}

fn dataset_csv(ds: &TwoPhaseDataset) -> Result<String, Failure> {
    let mut buf = Vec::new();
    datamodel::write_dataset(ds, &mut buf).map_err(Failure::data)?;
    String::from_utf8(buf).map_err(Failure::data)
}

fn sweep(path: &Path, seed: Option<u64>, common: &Common) -> Result<i32, Failure> {
    let text = read_text(path)?;
    let job = config::study_job(&ConfigFile::parse_study(&text)?, seed)?;
    let sweep = job.sweep.clone().ok_or_else(|| ConfigError::Missing("sweep.param".into()))?;
    let rows: Vec<SweepRow> = mcstudy::efficiency_sweep(&job.study, &sweep)?;
    let meta = study_metadata(path, &text, &job);
    let mut out = Staged::new(&common.out);
    if wants(common.format, Format::Csv) {
        out.add("sweep.csv", header(&meta) + &mcstudy::sweep_csv(&rows));
    }
    if wants(common.format, Format::Json) {
        out.add("sweep.json", to_json(&json!({ "metadata": meta_json(&meta), "sweep": sweep, "rows": rows })));
    }
    out.commit()?;
    eprintln!("sweep: {} rows, output in {}", rows.len(), common.out.display());
    Ok(EXIT_OK)
}

fn load_dataset(path: &Path, spec_csv: &datamodel::CsvOptions) -> Result<TwoPhaseDataset, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::data(format!("cannot read `{}`: {e}", path.display())))?;
    datamodel::read_dataset(file, spec_csv).map_err(|e: DataError| Failure::data(format!("{}: {e}", path.display())))
}

fn report_violations(report: &datamodel::ValidationReport) {
    for v in &report.violations {
        match v.row {
            Some(r) => eprintln!("row {r}: {} ({})", v.message, v.rule),
            None => eprintln!("dataset: {} ({})", v.message, v.rule),
        }
    }
}

/// One estimator run for `analyze`.
#[derive(Debug, Serialize)]
struct MethodResult {
    method: &'static str,
    #[serde(flatten)]
    outcome: MethodOutcome,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum MethodOutcome {
    Ok { estimates: Vec<CoefficientRow>, diagnostics: pipeline::Diagnostics, df: Option<i64> },
    Err { error: String },
}

#[derive(Debug, Serialize)]
struct CoefficientRow {
    coefficient: String,
    estimate: f64,
    variance: f64,
    se: f64,
    ci_lower: f64,
    ci_upper: f64,
}

fn coefficient_rows(out: &EstimatorOutput) -> Vec<CoefficientRow> {
    let (var, ci) = match &out.variance {
        Some(v) => (
            (0..out.beta.len()).map(|j| v.covariance[(j, j)]).collect::<Vec<_>>(),
            varest::wald_ci(&out.beta, &v.covariance, v.df, 0.95),
        ),
        None => (vec![f64::NAN; out.beta.len()], vec![(f64::NAN, f64::NAN); out.beta.len()]),
    };
    out.coefficient_names
        .iter()
        .enumerate()
        .map(|(j, name)| CoefficientRow {
            coefficient: name.clone(),
            estimate: out.beta[j],
            variance: var[j],
            se: var[j].sqrt(),
            ci_lower: ci[j].0,
            ci_upper: ci[j].1,
        })
        .collect()
}

fn run_analysis(ds: &TwoPhaseDataset, spec: &AnalysisSpec) -> Vec<MethodResult> {
    let opts = EstimateOptions { aux: spec.aux, variance: spec.variance, ..EstimateOptions::default() };
    let covs: Vec<&str> = spec.covariates.iter().map(String::as_str).collect();
    let ints: Vec<&str> = spec.interactions.iter().map(String::as_str).collect();
    let model = ModelSpec::parse(ds, &covs, &ints);
    let methods: [(&'static str, u8); 3] = [("DirectS2", 0), ("Imputation", 1), ("CalibInfluence", 2)];
    methods
        .iter()
        .map(|&(name, k)| {
            let res = model.clone().map_err(pipeline::EstimateError::from).and_then(|m| match k {
                0 => pipeline::estimate_direct_s2(ds, &m, &opts),
                1 => pipeline::estimate_imputation(ds, &m, &spec.predictor, &opts),
                _ => pipeline::estimate_calib_influence(ds, &m, &spec.predictor, spec.distance, &opts),
            });
            let outcome = match res {
                Ok(out) => MethodOutcome::Ok { estimates: coefficient_rows(&out), df: out.df(), diagnostics: out.diagnostics },
                Err(e) => MethodOutcome::Err { error: e.to_string() },
            };
            MethodResult { method: name, outcome }
        })
        .collect()
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn estimates_csv(results: &[MethodResult]) -> String {
    let mut s = String::from(
        "method,coefficient,estimate,variance,se,df,ci_lower,ci_upper,calibration_residual,negative_weight_count,prediction_r2,score_constraint_residual\n",
    );
    for r in results {
        if let MethodOutcome::Ok { estimates, diagnostics: d, df } = &r.outcome {
            for c in estimates {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.method,
                    c.coefficient,
                    c.estimate,
                    c.variance,
                    c.se,
                    df.map_or(String::new(), |x| x.to_string()),
                    c.ci_lower,
                    c.ci_upper,
                    opt_num(d.calibration_residual),
                    d.negative_weight_count.map_or(String::new(), |x| x.to_string()),
                    opt_num(d.prediction_r2),
                    opt_num(d.score_constraint_residual),
                ));
            }
        }
    }
    s
}

fn analyze(data: &Path, model: &Path, common: &Common) -> Result<i32, Failure> {
    let model_text = read_text(model)?;
    let spec = config::analysis_spec(&ConfigFile::parse_model(&model_text)?)?;
    let ds = load_dataset(data, &spec.csv)?;
    let report = datamodel::validate(&ds);
    if !report.is_accepted() {
        report_violations(&report);
        return Err(Failure::data(format!("{} validation failure(s) in `{}`", report.violations.len(), data.display())));
    }
    let results = run_analysis(&ds, &spec);
    let data_bytes = fs::read(data).map_err(Failure::data)?;
    let meta = vec![
        ("tool", format!("twophase {VERSION}")),
        ("data", data.display().to_string()),
        ("data_sha256", sha256_hex(&data_bytes)),
        ("model", model.display().to_string()),
        ("config_sha256", sha256_hex(model_text.as_bytes())),
        ("seed", "none".to_string()),
        ("n1", ds.n1().to_string()),
        ("n2", ds.n2().to_string()),
    ];
    let mut failed = 0;
    let mut failures = String::new();
    for r in &results {
        if let MethodOutcome::Err { error } = &r.outcome {
            failed += 1;
            eprintln!("{}: {error}", r.method);
            failures.push_str(&format!("# failed {}: {error}\n", r.method));
        }
    }
    let mut out = Staged::new(&common.out);
    if wants(common.format, Format::Csv) {
        out.add("estimates.csv", header(&meta) + &failures + &estimates_csv(&results));
    }
    if wants(common.format, Format::Json) {
        out.add("estimates.json", to_json(&json!({ "metadata": meta_json(&meta), "methods": results })));
    }
    out.commit()?;
    Ok(if failed > 0 { EXIT_DATA } else { EXIT_OK })
}

fn validate(data: &Path, model: Option<&Path>) -> Result<i32, Failure> {
    let csv = match model {
        Some(m) => config::analysis_spec(&ConfigFile::parse_model(&read_text(m)?)?)?.csv,
        None => datamodel::CsvOptions::default(),
    };
    let ds = load_dataset(data, &csv)?;
    let report = datamodel::validate(&ds);
    print!("{}", report.to_json_lines());
    if report.is_accepted() {
        println!("accepted: {} rows, {} in the second phase", ds.n1(), ds.n2());
        Ok(EXIT_OK)
    } else {
        report_violations(&report);
        println!("rejected: {} violation(s)", report.violations.len());
        Ok(EXIT_DATA)
    }
}
