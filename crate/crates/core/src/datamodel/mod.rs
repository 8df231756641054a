//! Two-phase survey records, weight algebra for both design types, design
//! frames and dataset validation.
//!
//! A [`TwoPhaseDataset`] holds the whole first-phase sample `s1`; second-phase
//! membership is the `in_s2` flag on each [`Row`]. Phase-2 weights `w2` are
//! conditional on `s1`, so the combined weight of an `s2` unit is `w1 * w2`.

mod csvio;

pub use csvio::{read_dataset, write_dataset, CsvOptions};

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unknown designated cycle `{0}`")]
    UnknownCycle(String),
    #[error("expected {expected} cycle samples, got {got}")]
    CycleCount { expected: usize, got: usize },
    #[error("invalid cycle configuration: {0}")]
    CycleConfig(String),
    #[error("design frame has {psus} PSUs in {strata} strata: degrees of freedom must be at least 1")]
    DegenerateFrame { psus: usize, strata: usize },
    #[error("io: {0}")]
    Io(String),
}

/// Which weight construction produced the second phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DesignType {
    /// `s2` is a random subsample of a single `s1`.
    TypeI,
    /// `s1` is the union of `C` survey cycles, `s2` the union of `B` of them.
    TypeII,
}

/// How phase-2 sampling relates to the phase-1 design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase2StrataRule {
    /// Phase-1 PSUs act as phase-2 strata (Type I).
    Phase1PsuAsStratum,
    /// Phase 2 keeps whole cycles (Type II).
    CycleSubset,
}

/// A named covariate column of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnRef {
    X1(usize),
    Z(usize),
    X2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub unit_id: String,
    pub stratum: String,
    pub psu: String,
    pub cycle: Option<String>,
    pub w1: f64,
    pub in_s2: bool,
    pub w2: Option<f64>,
    pub y: f64,
    pub x1: Vec<f64>,
    pub x2: Option<f64>,
    pub z: Vec<f64>,
}

impl Row {
    /// Combined weight `w1 * w2`, defined for second-phase rows only.
    pub fn combined_weight(&self) -> Option<f64> {
        match (self.in_s2, self.w2) {
            (true, Some(w2)) => Some(self.w1 * w2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseDataset {
    pub rows: Vec<Row>,
    pub design_type: DesignType,
    pub phase2_strata_rule: Phase2StrataRule,
    /// Finite-population size `N`, when known.
    pub fp_size: Option<f64>,
    pub cycles_total: Option<usize>,
    pub cycles_with_x2: Option<usize>,
    /// Cycles designated as carrying `x2` (Type II).
    pub x2_cycles: Option<Vec<String>>,
    pub x1_names: Vec<String>,
    pub z_names: Vec<String>,
    /// True `x2` for every row, available only for simulated data.
    pub oracle_x2: Option<Vec<f64>>,
}

impl TwoPhaseDataset {
    pub fn type1(rows: Vec<Row>, x1_names: Vec<String>, z_names: Vec<String>) -> Self {
        TwoPhaseDataset {
            rows,
            design_type: DesignType::TypeI,
            phase2_strata_rule: Phase2StrataRule::Phase1PsuAsStratum,
            fp_size: None,
            cycles_total: None,
            cycles_with_x2: None,
            x2_cycles: None,
            x1_names,
            z_names,
            oracle_x2: None,
        }
    }

    pub fn n1(&self) -> usize {
        self.rows.len()
    }

    pub fn n2(&self) -> usize {
        self.rows.iter().filter(|r| r.in_s2).count()
    }

    /// `N̂ = Σ_{s1} w1`.
    pub fn n_hat(&self) -> f64 {
        self.rows.iter().map(|r| r.w1).sum()
    }

    /// The divisor used by every estimating equation: `N` when supplied,
    /// otherwise `N̂`.
    pub fn n_scale(&self) -> f64 {
        self.fp_size.unwrap_or_else(|| self.n_hat())
    }

    pub fn s2_indices(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].in_s2).collect()
    }

    /// Resolve a column name (`x1_*`, `z_*` as listed in the dataset, or `x2`).
    pub fn column(&self, name: &str) -> Option<ColumnRef> {
        if name == "x2" {
            return Some(ColumnRef::X2);
        }
        if let Some(i) = self.x1_names.iter().position(|n| n == name) {
            return Some(ColumnRef::X1(i));
        }
        self.z_names.iter().position(|n| n == name).map(ColumnRef::Z)
    }

    pub fn column_name(&self, col: ColumnRef) -> String {
        match col {
            ColumnRef::X1(i) => self.x1_names[i].clone(),
            ColumnRef::Z(i) => self.z_names[i].clone(),
            ColumnRef::X2 => "x2".to_string(),
        }
    }

    /// Value of a phase-1 column (`x1` or `z`) for row `i`. `x2` is not a
    /// phase-1 column and yields `None` unless observed.
    pub fn value(&self, i: usize, col: ColumnRef) -> Option<f64> {
        let r = &self.rows[i];
        match col {
            ColumnRef::X1(j) => r.x1.get(j).copied(),
            ColumnRef::Z(j) => r.z.get(j).copied(),
            ColumnRef::X2 => r.x2,
        }
    }

    /// `x2` for every row from the oracle sidecar or, failing that, from the
    /// rows themselves when every row carries it.
    pub fn full_x2(&self) -> Option<Vec<f64>> {
        if let Some(o) = &self.oracle_x2 {
            return Some(o.clone());
        }
        self.rows.iter().map(|r| r.x2).collect()
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Zero-based data row, `None` for dataset-level rules.
    pub row: Option<usize>,
    pub rule: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, row: Option<usize>, rule: &'static str, message: impl Into<String>) {
        self.violations.push(Violation { row, rule, message: message.into() });
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for v in &self.violations {
            out.push_str(&serde_json::to_string(v).expect("violation serializes"));
            out.push('\n');
        }
        out
    }
}

/// Check every row and dataset invariant. The dataset is acceptable iff the
/// returned report is empty.
pub fn validate(ds: &TwoPhaseDataset) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let p1 = ds.x1_names.len();
    let q = ds.z_names.len();
    for (i, r) in ds.rows.iter().enumerate() {
        let at = Some(i);
        if r.stratum.is_empty() || r.psu.is_empty() {
            rep.push(at, "label_missing", "stratum and psu labels are required");
        }
        if !(r.w1.is_finite() && r.w1 > 0.0) {
            rep.push(at, "w1_positive", format!("w1 must be positive, got {}", r.w1));
        }
        match (r.in_s2, r.w2) {
            (true, None) => rep.push(at, "w2_missing", "missing phase-2 weight"),
            (true, Some(w)) if !(w.is_finite() && w > 0.0) => {
                rep.push(at, "w2_positive", format!("w2 must be positive, got {w}"))
            }
            (false, Some(_)) => rep.push(at, "w2_unexpected", "phase-2 weight on a row outside s2"),
            _ => {}
        }
        if r.in_s2 && r.x2.is_none() {
            rep.push(at, "x2_missing", "x2 must be observed on every s2 row");
        }
        if r.y != 0.0 && r.y != 1.0 {
            rep.push(at, "y_binary", format!("outcome must be 0 or 1, got {}", r.y));
        }
        if r.x1.len() != p1 {
            rep.push(at, "x1_length", format!("expected {p1} x1 values, got {}", r.x1.len()));
        }
        if r.z.len() != q {
            rep.push(at, "z_length", format!("expected {q} z values, got {}", r.z.len()));
        }
        if r.x1.iter().chain(r.z.iter()).chain(r.x2.iter()).any(|v| !v.is_finite()) {
            rep.push(at, "nonfinite", "covariates must be finite");
        }
        if ds.design_type == DesignType::TypeII && r.cycle.as_deref().is_none_or(str::is_empty) {
            rep.push(at, "cycle_required", "cycle required for TypeII");
        }
    }

    let n_hat = ds.n_hat();
    if !(n_hat.is_finite() && n_hat > 0.0) {
        rep.push(None, "n_hat_positive", "sum of phase-1 weights must be positive");
    }
    if let Some(n) = ds.fp_size {
        if !(n.is_finite() && n > 0.0) {
            rep.push(None, "fp_size_positive", "population size must be positive");
        }
    }
    if let Some(o) = &ds.oracle_x2 {
        if o.len() != ds.rows.len() {
            rep.push(None, "oracle_length", "oracle x2 sidecar does not match the rows");
        }
    }
    if ds.design_type == DesignType::TypeII {
        validate_cycles(ds, &mut rep);
    }
    rep
}

fn validate_cycles(ds: &TwoPhaseDataset, rep: &mut ValidationReport) {
    let present: BTreeSet<&str> = ds.rows.iter().filter_map(|r| r.cycle.as_deref()).collect();
    let designated: BTreeSet<String> = match &ds.x2_cycles {
        Some(d) => d.iter().cloned().collect(),
        None => ds
            .rows
            .iter()
            .filter(|r| r.in_s2)
            .filter_map(|r| r.cycle.clone())
            .collect(),
    };
    let c = ds.cycles_total.unwrap_or(present.len());
    let b = ds.cycles_with_x2.unwrap_or(designated.len());
    if !(c >= b && b >= 1) {
        rep.push(None, "cycle_counts", format!("need C >= B >= 1, got C = {c}, B = {b}"));
    }
    if present.len() != c {
        rep.push(None, "cycle_counts", format!("C = {c} but {} distinct cycles present", present.len()));
    }
    if designated.len() != b {
        rep.push(None, "cycle_counts", format!("B = {b} but {} cycles designated", designated.len()));
    }
    for (i, r) in ds.rows.iter().enumerate() {
        if let Some(cy) = &r.cycle {
            if r.in_s2 != designated.contains(cy) {
                rep.push(
                    Some(i),
                    "cycle_membership",
                    format!("in_s2 must hold exactly for designated cycles (cycle `{cy}`)"),
                );
            }
        }
    }
}

/// A survey cycle's own sample; each row's `w1` holds the per-cycle weight
/// `w^(c)`.
#[derive(Debug, Clone)]
pub struct CycleSample {
    pub label: String,
    pub rows: Vec<Row>,
}

/// Pool `C` independent cycle samples into a Type II two-phase dataset.
///
/// Every row gets `w1 = w^(c) / C`; rows of the designated cycles join `s2`
/// with combined weight `w^(c) / B`, i.e. `w2 = C / B`. `x2` is kept only for
/// designated cycles; when every row came with `x2` the full column is kept
/// in the oracle sidecar.
pub fn combine_cycles(
    samples: Vec<CycleSample>,
    cycles_total: usize,
    designated: &[String],
    x1_names: Vec<String>,
    z_names: Vec<String>,
) -> Result<TwoPhaseDataset, DataError> {
    if samples.len() != cycles_total {
        return Err(DataError::CycleCount { expected: cycles_total, got: samples.len() });
    }
    let labels: BTreeSet<&str> = samples.iter().map(|s| s.label.as_str()).collect();
    if labels.len() != samples.len() {
        return Err(DataError::CycleConfig("duplicate cycle labels".into()));
    }
    if designated.is_empty() {
        return Err(DataError::CycleConfig("at least one cycle must carry x2".into()));
    }
    for d in designated {
        if !labels.contains(d.as_str()) {
            return Err(DataError::UnknownCycle(d.clone()));
        }
    }
    let chosen: BTreeSet<&str> = designated.iter().map(String::as_str).collect();
    let c = cycles_total as f64;
    let b = chosen.len() as f64;
    let all_x2 = samples.iter().all(|s| s.rows.iter().all(|r| r.x2.is_some()));
    let mut rows = Vec::new();
    let mut oracle = Vec::new();
    for s in samples {
        let in_s2 = chosen.contains(s.label.as_str());
        for mut r in s.rows {
            oracle.push(r.x2.unwrap_or(f64::NAN));
            r.w1 /= c;
            r.cycle = Some(s.label.clone());
            r.in_s2 = in_s2;
            if in_s2 {
                r.w2 = Some(c / b);
            } else {
                r.w2 = None;
                r.x2 = None;
            }
            rows.push(r);
        }
    }
    Ok(TwoPhaseDataset {
        rows,
        design_type: DesignType::TypeII,
        phase2_strata_rule: Phase2StrataRule::CycleSubset,
        fp_size: None,
        cycles_total: Some(cycles_total),
        cycles_with_x2: Some(chosen.len()),
        x2_cycles: Some(chosen.iter().map(|s| s.to_string()).collect()),
        x1_names,
        z_names,
        oracle_x2: all_x2.then_some(oracle),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumInfo {
    pub label: String,
    pub psus: Vec<String>,
}

impl StratumInfo {
    pub fn psu_count(&self) -> usize {
        self.psus.len()
    }
}

/// Phase-1 strata and PSUs with the stratum/PSU position of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignFrame {
    pub strata: Vec<StratumInfo>,
    pub total_psus: usize,
    pub total_strata: usize,
    /// Stratum index of each row.
    pub unit_stratum: Vec<usize>,
    /// Global PSU index of each row (PSUs numbered stratum by stratum).
    pub unit_psu: Vec<usize>,
    /// Stratum index of each global PSU.
    pub psu_stratum: Vec<usize>,
}

impl DesignFrame {
    /// Design degrees of freedom, total PSUs minus total strata.
    pub fn df(&self) -> i64 {
        self.total_psus as i64 - self.total_strata as i64
    }

    /// Degrees of freedom restricted to strata holding at least one row
    /// selected by `mask` (e.g. the second phase).
    pub fn df_for(&self, mask: &[bool]) -> i64 {
        let mut used = vec![false; self.total_strata];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                used[self.unit_stratum[i]] = true;
            }
        }
        self.strata
            .iter()
            .zip(&used)
            .filter(|(_, &u)| u)
            .map(|(s, _)| s.psu_count() as i64 - 1)
            .sum()
    }
}

/// Build the phase-1 design frame. Under Type II, the cycle label is
/// prepended to the stratum label so cycles act as additional strata.
pub fn design_frame(ds: &TwoPhaseDataset) -> Result<DesignFrame, DataError> {
    let mut strata: Vec<StratumInfo> = Vec::new();
    let mut stratum_index: HashMap<String, usize> = HashMap::new();
    let mut psu_index: Vec<HashMap<String, usize>> = Vec::new();
    let mut unit_stratum = Vec::with_capacity(ds.rows.len());
    let mut local_psu = Vec::with_capacity(ds.rows.len());
    for r in &ds.rows {
        let key = match (ds.design_type, &r.cycle) {
            (DesignType::TypeII, Some(c)) => format!("{c}/{}", r.stratum),
            _ => r.stratum.clone(),
        };
        let h = *stratum_index.entry(key.clone()).or_insert_with(|| {
            strata.push(StratumInfo { label: key, psus: Vec::new() });
            psu_index.push(HashMap::new());
            strata.len() - 1
        });
        let next = strata[h].psus.len();
        let j = *psu_index[h].entry(r.psu.clone()).or_insert(next);
        if j == next {
            strata[h].psus.push(r.psu.clone());
        }
        unit_stratum.push(h);
        local_psu.push(j);
    }
    let mut offsets = Vec::with_capacity(strata.len());
    let mut psu_stratum = Vec::new();
    let mut total = 0;
    for (h, s) in strata.iter().enumerate() {
        offsets.push(total);
        total += s.psus.len();
        psu_stratum.extend(std::iter::repeat_n(h, s.psus.len()));
    }
    let unit_psu = unit_stratum.iter().zip(&local_psu).map(|(&h, &j)| offsets[h] + j).collect();
    let frame = DesignFrame {
        total_psus: total,
        total_strata: strata.len(),
        strata,
        unit_stratum,
        unit_psu,
        psu_stratum,
    };
    if frame.df() < 1 {
        return Err(DataError::DegenerateFrame { psus: frame.total_psus, strata: frame.total_strata });
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(id: &str, stratum: &str, psu: &str, w1: f64, s2: Option<f64>) -> Row {
        Row {
            unit_id: id.into(),
            stratum: stratum.into(),
            psu: psu.into(),
            cycle: None,
            w1,
            in_s2: s2.is_some(),
            w2: s2,
            y: 1.0,
            x1: vec![0.5],
            x2: s2.map(|_| 1.5),
            z: vec![0.1],
        }
    }

    fn toy() -> TwoPhaseDataset {
        TwoPhaseDataset::type1(
            vec![
                row("a", "1", "1", 10.0, Some(2.0)),
                row("b", "1", "2", 12.0, None),
                row("c", "2", "1", 8.0, Some(2.0)),
                row("d", "2", "2", 9.0, None),
            ],
            vec!["x1_1".into()],
            vec!["z_1".into()],
        )
    }

    #[test]
    fn well_formed_toy_is_accepted() {
        let rep = validate(&toy());
        assert!(rep.is_accepted(), "{:?}", rep);
    }

    #[test]
    fn missing_phase2_weight_is_reported() {
        let mut ds = toy();
        ds.rows[0].w2 = None;
        let rep = validate(&ds);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].rule, "w2_missing");
        assert_eq!(rep.violations[0].message, "missing phase-2 weight");
        assert_eq!(rep.violations[0].row, Some(0));
        let line = rep.to_json_lines();
        assert!(line.contains("\"row\":0") && line.ends_with('\n'));
    }

    #[test]
    fn type2_requires_cycles() {
        let mut ds = toy();
        ds.design_type = DesignType::TypeII;
        for r in ds.rows.iter_mut() {
            r.cycle = Some(if r.in_s2 { "1" } else { "2" }.into());
        }
        assert!(validate(&ds).is_accepted(), "{:?}", validate(&ds));
        ds.rows[1].cycle = None;
        let rep = validate(&ds);
        assert!(rep.violations.iter().any(|v| v.rule == "cycle_required"
            && v.message == "cycle required for TypeII"
            && v.row == Some(1)));
    }

    #[test]
    fn other_row_rules() {
        let mut ds = toy();
        ds.rows[1].w2 = Some(3.0);
        ds.rows[2].y = 0.5;
        ds.rows[3].w1 = -1.0;
        ds.rows[0].x2 = None;
        let rules: Vec<_> = validate(&ds).violations.iter().map(|v| v.rule).collect();
        assert!(rules.contains(&"w2_unexpected"));
        assert!(rules.contains(&"y_binary"));
        assert!(rules.contains(&"w1_positive"));
        assert!(rules.contains(&"x2_missing"));
    }

    fn cycle(label: &str, w: f64, n: usize) -> CycleSample {
        CycleSample {
            label: label.into(),
            rows: (0..n).map(|i| row(&format!("{label}-{i}"), "1", &format!("{}", i % 2), w, None))
                .map(|mut r| {
                    r.x2 = Some(2.0);
                    r
                })
                .collect(),
        }
    }

    #[test]
    fn combine_two_cycles_one_designated() {
        let ds = combine_cycles(
            vec![cycle("1", 100.0, 2), cycle("2", 80.0, 2)],
            2,
            &["1".into()],
            vec!["x1_1".into()],
            vec!["z_1".into()],
        )
        .unwrap();
        let r = &ds.rows[0];
        assert_eq!(r.w1, 50.0);
        assert!(r.in_s2);
        assert_eq!(r.combined_weight(), Some(100.0));
        assert!(!ds.rows[2].in_s2 && ds.rows[2].x2.is_none() && ds.rows[2].w1 == 40.0);
        assert_eq!(ds.oracle_x2.as_ref().unwrap()[2], 2.0);
        assert!(validate(&ds).is_accepted(), "{:?}", validate(&ds));
    }

    #[test]
    fn combine_ten_cycles_one_designated() {
        let samples = (1..=10).map(|c| cycle(&c.to_string(), 40.0, 2)).collect();
        let ds = combine_cycles(samples, 10, &["1".into()], vec!["x1_1".into()], vec!["z_1".into()])
            .unwrap();
        let r = &ds.rows[0];
        assert!((r.w1 - 4.0).abs() < 1e-15);
        assert!((r.w2.unwrap() - 10.0).abs() < 1e-15);
        assert!((r.combined_weight().unwrap() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn combine_all_designated_gives_unit_w2() {
        let ds = combine_cycles(
            vec![cycle("a", 10.0, 3), cycle("b", 10.0, 3)],
            2,
            &["a".into(), "b".into()],
            vec!["x1_1".into()],
            vec!["z_1".into()],
        )
        .unwrap();
        assert!(ds.rows.iter().all(|r| r.w2 == Some(1.0) && r.combined_weight() == Some(r.w1)));
    }

    #[test]
    fn combine_errors() {
        let e = combine_cycles(vec![cycle("1", 1.0, 1)], 2, &["1".into()], vec![], vec![]);
        assert!(matches!(e, Err(DataError::CycleCount { .. })));
        let e = combine_cycles(vec![cycle("1", 1.0, 1)], 1, &["9".into()], vec![], vec![]);
        assert_eq!(e.unwrap_err(), DataError::UnknownCycle("9".into()));
    }

    #[test]
    fn frame_counts_and_df() {
        let f = design_frame(&toy()).unwrap();
        assert_eq!((f.total_strata, f.total_psus, f.df()), (2, 4, 2));
        assert_eq!(f.unit_psu, vec![0, 1, 2, 3]);
        assert_eq!(f.psu_stratum, vec![0, 0, 1, 1]);
    }

    #[test]
    fn frame_type2_cycles_become_strata() {
        let samples = (1..=3)
            .map(|c| CycleSample {
                label: c.to_string(),
                rows: (0..8)
                    .map(|i| {
                        let mut r = row(&format!("{c}-{i}"), &format!("{}", i / 2), &format!("{}", i % 2), 5.0, None);
                        r.x2 = Some(1.0);
                        r
                    })
                    .collect(),
            })
            .collect();
        let ds = combine_cycles(samples, 3, &["1".into()], vec!["x1_1".into()], vec!["z_1".into()]).unwrap();
        let f = design_frame(&ds).unwrap();
        assert_eq!((f.total_strata, f.total_psus, f.df()), (12, 24, 12));
    }

    #[test]
    fn single_psu_frame_is_rejected() {
        let ds = TwoPhaseDataset::type1(
            vec![row("a", "1", "1", 1.0, Some(1.0)), row("b", "1", "1", 1.0, None)],
            vec!["x1_1".into()],
            vec!["z_1".into()],
        );
        assert_eq!(design_frame(&ds).unwrap_err(), DataError::DegenerateFrame { psus: 1, strata: 1 });
    }
}
