//! Finite-population generator and two-phase samplers for the simulation
//! study.
//!
//! The population follows the covariate and outcome model exactly; cluster
//! membership is a permutation of the units. Stage-1 clusters are formed by
//! sorting on a noisy copy of the model residual `y − p`, which gives the
//! outcome scores a modest intra-cluster correlation, and stage-2 clusters
//! within each stage-1 cluster by sorting on a noisy copy of `z1`, which
//! makes the size measures (and hence the weights) informative.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::datamodel::{combine_cycles, CycleSample, DataError, Row, TwoPhaseDataset};
use crate::linalg::expit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("infeasible sample: {0}")]
    Infeasible(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Names of the first-phase covariates in generated datasets.
pub const X1_NAMES: [&str; 2] = ["x1_1", "x1_2"];
/// Ancillary columns: `z1`, `z2` and the three predictions of `x2`.
pub const Z_NAMES: [&str; 5] = ["z_1", "z_2", "z_3", "z_4", "z_5"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpConfig {
    pub n: usize,
    pub rho_x11_z2: f64,
    pub eps_sd: f64,
    /// `(β0, β1,1, β1,2, β2, β2,2)`.
    pub beta: [f64; 5],
    pub stage1_clusters: usize,
    pub stage2_per_stage1: usize,
    pub units_per_stage2: usize,
    pub mos_coefficient: f64,
    /// Loading of the model residual in the stage-1 sort key.
    pub cluster_resid_loading: f64,
    /// Noise added to `z1` before sorting units into stage-2 clusters.
    pub cluster_z1_noise: f64,
    pub seed: u64,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            n: 200_000,
            rho_x11_z2: 0.0995,
            eps_sd: 0.5,
            beta: [-3.0, 0.7, 0.9, 0.5, 0.3],
            stage1_clusters: 400,
            stage2_per_stage1: 10,
            units_per_stage2: 50,
            mos_coefficient: 0.2,
            cluster_resid_loading: 1.0,
            cluster_z1_noise: 0.5,
            seed: 20_240_601,
        }
    }
}

/// `ρ(X1,1, X2)` implied by `ρ(X1,1, Z2)`: `1.5 ρ / sqrt(0.25 + 2.25 + σ²)`.
pub fn rho_x11_x2(rho_x11_z2: f64, eps_sd: f64) -> f64 {
    1.5 * rho_x11_z2 / (2.5 + eps_sd * eps_sd).sqrt()
}

/// Inverse of [`rho_x11_x2`].
pub fn rho_x11_z2_for(rho_x11_x2: f64, eps_sd: f64) -> f64 {
    rho_x11_x2 * (2.5 + eps_sd * eps_sd).sqrt() / 1.5
}

impl FpConfig {
    pub fn check(&self) -> Result<(), SimError> {
        let g = self.stage1_clusters * self.stage2_per_stage1 * self.units_per_stage2;
        if g != self.n || self.n == 0 {
            return Err(SimError::Geometry(format!(
                "{} x {} x {} clusters do not make up N = {}",
                self.stage1_clusters, self.stage2_per_stage1, self.units_per_stage2, self.n
            )));
        }
        if !(0.0..1.0).contains(&self.rho_x11_z2) {
            return Err(SimError::Parameter(format!("rho_x11_z2 = {} must lie in [0, 1)", self.rho_x11_z2)));
        }
        if !(self.eps_sd >= 0.0) || !(self.cluster_z1_noise >= 0.0) || !self.cluster_resid_loading.is_finite() {
            return Err(SimError::Parameter("noise scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Geometry with `N / 4000` units per stage-2 cluster.
    pub fn with_size(n: usize) -> Self {
        FpConfig { n, units_per_stage2: n / 4000, ..FpConfig::default() }
    }
}

/// Population columns, stored cluster by cluster: stage-2 cluster `k` of
/// stage-1 cluster `g` holds units `(g·S2 + k)·M .. (g·S2 + k + 1)·M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    pub config: FpConfig,
    pub x1_1: Vec<f64>,
    pub x1_2: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub eps: Vec<f64>,
    pub x2: Vec<f64>,
    pub x2_star: Vec<f64>,
    pub x2_2star: Vec<f64>,
    pub x2_3star: Vec<f64>,
    pub y: Vec<f64>,
    pub stage1_cluster: Vec<usize>,
    pub stage2_cluster: Vec<usize>,
    /// Size measure of every stage-2 cluster (global index `g·S2 + k`).
    pub mos2: Vec<f64>,
    /// Size measure of every stage-1 cluster.
    pub mos1: Vec<f64>,
}

/// splitmix64 finalizer; seeds of derived streams are `splitmix64(base + i)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generate the finite population.
pub fn generate_fp(cfg: &FpConfig) -> Result<FinitePopulation, SimError> {
    cfg.check()?;
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rho = cfg.rho_x11_z2;
    let b = cfg.beta;
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    let mut x11 = Vec::with_capacity(n);
    let mut x12 = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    for _ in 0..n {
        z1.push(normal(&mut rng));
        let a = normal(&mut rng);
        let c = normal(&mut rng);
        x11.push(a);
        z2.push(rho * a + (1.0 - rho * rho).sqrt() * c);
        x12.push(if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 });
        eps.push(cfg.eps_sd * normal(&mut rng));
    }
    let mut sorted = z2.clone();
    sorted.sort_by(f64::total_cmp);
    let q40 = sorted[(0.4 * n as f64).ceil() as usize - 1];
    let q60 = sorted[(0.6 * n as f64).ceil() as usize - 1];
    let mut x2 = Vec::with_capacity(n);
    let mut x2s = Vec::with_capacity(n);
    let mut x2ss = Vec::with_capacity(n);
    let mut x2sss = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut key1 = Vec::with_capacity(n);
    for i in 0..n {
        x2.push(1.0 + 0.5 * z1[i] + 1.5 * z2[i] + eps[i]);
        x2s.push(1.0 + 0.5 * z1[i] + 1.5 * z2[i]);
        let zt = if z2[i] <= q40 {
            1.0
        } else if z2[i] <= q60 {
            2.0
        } else {
            3.0
        };
        x2ss.push(-1.9 + 0.5 * z1[i] + 1.45 * zt);
        x2sss.push(1.0 + 0.5 * z1[i]);
        let p = expit(b[0] + b[1] * x11[i] + b[2] * x12[i] + b[3] * x2[i] + b[4] * x2[i] * x12[i]);
        let yi = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        y.push(yi);
        key1.push(cfg.cluster_resid_loading * (yi - p) + normal(&mut rng));
    }

    // Stage-1 clusters by the residual key, stage-2 clusters by noisy z1.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key1[a].total_cmp(&key1[b]).then(a.cmp(&b)));
    let per1 = cfg.stage2_per_stage1 * cfg.units_per_stage2;
    for chunk in order.chunks_mut(per1) {
        let key2: Vec<(f64, usize)> =
            chunk.iter().map(|&i| (z1[i] + cfg.cluster_z1_noise * normal(&mut rng), i)).collect();
        let mut key2 = key2;
        key2.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, (_, i)) in chunk.iter_mut().zip(key2) {
            *slot = i;
        }
    }
    let pick = |v: &[f64]| -> Vec<f64> { order.iter().map(|&i| v[i]).collect() };
    let z1 = pick(&z1);
    let s2_count = cfg.stage1_clusters * cfg.stage2_per_stage1;
    let m = cfg.units_per_stage2;
    let mos2: Vec<f64> =
        (0..s2_count).map(|k| z1[k * m..(k + 1) * m].iter().map(|v| (cfg.mos_coefficient * v).exp()).sum()).collect();
    let mos1: Vec<f64> = mos2.chunks(cfg.stage2_per_stage1).map(|c| c.iter().sum()).collect();
    Ok(FinitePopulation {
        x1_1: pick(&x11),
        x1_2: pick(&x12),
        z2: pick(&z2),
        eps: pick(&eps),
        x2: pick(&x2),
        x2_star: pick(&x2s),
        x2_2star: pick(&x2ss),
        x2_3star: pick(&x2sss),
        y: pick(&y),
        z1,
        stage1_cluster: (0..n).map(|i| i / per1).collect(),
        stage2_cluster: (0..n).map(|i| i / m).collect(),
        mos2,
        mos1,
        config: cfg.clone(),
    })
}

impl FinitePopulation {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Value of a named dataset column for unit `i`.
    pub fn column_value(&self, name: &str, i: usize) -> Option<f64> {
        Some(match name {
            "x1_1" => self.x1_1[i],
            "x1_2" => self.x1_2[i],
            "z_1" => self.z1[i],
            "z_2" => self.z2[i],
            "z_3" => self.x2_star[i],
            "z_4" => self.x2_2star[i],
            "z_5" => self.x2_3star[i],
            "x2" => self.x2[i],
            "y" => self.y[i],
            _ => return None,
        })
    }

    /// Population totals of `(1, columns…)`; the first entry is `N`.
    pub fn totals(&self, columns: &[&str]) -> Option<Vec<f64>> {
        let mut out = vec![self.len() as f64];
        for c in columns {
            let mut v: Vec<f64> = (0..self.len()).map(|i| self.column_value(c, i)).collect::<Option<_>>()?;
            v.sort_by(f64::total_cmp);
            out.push(v.iter().sum());
        }
        Some(out)
    }

    /// The whole population as a single-phase dataset: every unit in `s2`
    /// with unit weights, stage-1 clusters as PSUs.
    pub fn to_dataset(&self) -> TwoPhaseDataset {
        let rows = (0..self.len())
            .map(|i| Row {
                in_s2: true,
                w2: Some(1.0),
                ..self.row(i, i.to_string(), &(self.stage1_cluster[i] + 1).to_string(), 1.0)
            })
            .collect();
        let (x1, z) = names();
        let mut ds = TwoPhaseDataset::type1(rows, x1, z);
        ds.fp_size = Some(self.len() as f64);
        ds
    }

    fn row(&self, i: usize, id: String, psu: &str, w1: f64) -> Row {
        Row {
            unit_id: id,
            stratum: "1".into(),
            psu: psu.into(),
            cycle: None,
            w1,
            in_s2: false,
            w2: None,
            y: self.y[i],
            x1: vec![self.x1_1[i], self.x1_2[i]],
            x2: Some(self.x2[i]),
            z: vec![self.z1[i], self.z2[i], self.x2_star[i], self.x2_2star[i], self.x2_3star[i]],
        }
    }
}

/// Stage sizes of the two-stage PPS-WR first-phase design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageDraws {
    pub stage1: usize,
    pub stage2: usize,
}

impl Default for StageDraws {
    fn default() -> Self {
        StageDraws { stage1: 50, stage2: 2 }
    }
}

/// Phase-2 selection for Type I.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase2Mechanism {
    /// SRS without replacement inside every phase-1 PSU at rate `f2`.
    WithinPsu,
    /// One SRS without replacement of `round(f2 · n1)` units from `s1`.
    Srs,
}

/// Draw from cumulative sizes by inversion.
fn pps_draw(rng: &mut ChaCha8Rng, cum: &[f64]) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn cumulative(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Two-stage PPS-WR first-phase sample of `n1` units with every unit's `x2`.
///
/// Each stage-1 draw is its own PSU. Within it, `a2` stage-2 clusters are
/// drawn PPS-WR and `m` units taken by SRS without replacement from each;
/// the `n1` units are spread evenly over the `a1·a2` stage-2 draws with the
/// remainder going to the first draws. A unit selected twice within one PSU
/// appears once with the summed weight.
pub fn sample_phase1(fp: &FinitePopulation, n1: usize, draws: StageDraws, rng: &mut ChaCha8Rng) -> Result<Vec<Row>, SimError> {
    let cfg = &fp.config;
    let (a1, a2) = (draws.stage1, draws.stage2);
    let m_units = cfg.units_per_stage2;
    if a1 < 2 || a2 < 1 {
        return Err(SimError::Infeasible("need at least 2 stage-1 draws and 1 stage-2 draw".into()));
    }
    let slots = a1 * a2;
    if n1 < slots || n1 > slots * m_units {
        return Err(SimError::Infeasible(format!(
            "n1 = {n1} cannot be spread over {slots} stage-2 draws of at most {m_units} units"
        )));
    }
    let cum1 = cumulative(&fp.mos1);
    let total = cum1[cum1.len() - 1];
    let s2 = cfg.stage2_per_stage1;
    let mut rows = Vec::with_capacity(n1);
    for d in 0..a1 {
        let g = pps_draw(rng, &cum1);
        let p_g = fp.mos1[g] / total;
        let cum2 = cumulative(&fp.mos2[g * s2..(g + 1) * s2]);
        let mut units: Vec<(usize, f64)> = Vec::new();
        for e in 0..a2 {
            let slot = d * a2 + e;
            let m = n1 / slots + usize::from(slot < n1 % slots);
            let k = pps_draw(rng, &cum2);
            let p_k = fp.mos2[g * s2 + k] / fp.mos1[g];
            let w = 1.0 / (a1 as f64 * p_g) / (a2 as f64 * p_k) * (m_units as f64 / m as f64);
            let base = (g * s2 + k) * m_units;
            units.extend(index::sample(rng, m_units, m).into_iter().map(|j| (base + j, w)));
        }
        let psu = (d + 1).to_string();
        rows.extend(merge_draws(&units).into_iter().map(|(i, w)| fp.row(i, format!("{i}-{}", d + 1), &psu, w)));
    }
    Ok(rows)
}

/// Collapse repeated draws of a unit within one PSU into a single entry
/// carrying the summed weight. The result is sorted by unit and does not
/// depend on the order of the draws.
pub fn merge_draws(draws: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut by_unit: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(i, w) in draws {
        by_unit.entry(i).or_default().push(w);
    }
    by_unit
        .into_iter()
        .map(|(i, mut ws)| {
            ws.sort_by(f64::total_cmp);
            (i, ws.iter().sum())
        })
        .collect()
}

fn names() -> (Vec<String>, Vec<String>) {
    (X1_NAMES.iter().map(|s| s.to_string()).collect(), Z_NAMES.iter().map(|s| s.to_string()).collect())
}

/// Type I two-phase sample: PPS-WR first phase, then a random subsample at
/// rate `f2` (within PSUs by default). The true `x2` of every first-phase
/// unit is kept in the oracle sidecar.
pub fn sample_type1(
    fp: &FinitePopulation,
    n1: usize,
    f2: f64,
    draws: StageDraws,
    mechanism: Phase2Mechanism,
    seed: u64,
) -> Result<TwoPhaseDataset, SimError> {
    if !(f2 > 0.0 && f2 <= 1.0) {
        return Err(SimError::Parameter(format!("f2 = {f2} must lie in (0, 1]")));
    }
    if (n1 as f64 * f2) < 6.0 {
        return Err(SimError::Infeasible(format!("n1·f2 = {} is too small to fit the model", n1 as f64 * f2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = sample_phase1(fp, n1, draws, &mut rng)?;
    let oracle: Vec<f64> = rows.iter().map(|r| r.x2.unwrap_or(f64::NAN)).collect();
    let n = rows.len();
    let mut chosen = vec![false; n];
    let mut w2 = vec![1.0 / f2; n];
    match mechanism {
        Phase2Mechanism::WithinPsu => {
            let mut start = 0;
            while start < n {
                let mut end = start;
                while end < n && rows[end].psu == rows[start].psu {
                    end += 1;
                }
                let nh = end - start;
                let target = f2 * nh as f64;
                let mut take = target.floor() as usize;
                if rng.random::<f64>() < target - target.floor() {
                    take += 1;
                }
                for j in index::sample(&mut rng, nh, take.min(nh)) {
                    chosen[start + j] = true;
                }
                start = end;
            }
        }
        Phase2Mechanism::Srs => {
            let take = ((f2 * n as f64).round() as usize).clamp(1, n);
            for j in index::sample(&mut rng, n, take) {
                chosen[j] = true;
            }
            w2.iter_mut().for_each(|w| *w = n as f64 / take as f64);
        }
    }
    for (i, r) in rows.iter_mut().enumerate() {
        r.in_s2 = chosen[i];
        if chosen[i] {
            r.w2 = Some(w2[i]);
        } else {
            r.x2 = None;
        }
    }
    let (x1, z) = names();
    let mut ds = TwoPhaseDataset::type1(rows, x1, z);
    ds.fp_size = Some(fp.len() as f64);
    ds.oracle_x2 = Some(oracle);
    Ok(ds)
}

/// Type II two-phase sample: `C` independent first-phase samples of
/// `n_per_cycle` units each; the first `B` carry `x2`.
pub fn sample_type2(
    fp: &FinitePopulation,
    cycles: usize,
    with_x2: usize,
    n_per_cycle: usize,
    draws: StageDraws,
    seed: u64,
) -> Result<TwoPhaseDataset, SimError> {
    if !(cycles >= with_x2 && with_x2 >= 1) {
        return Err(SimError::Parameter(format!("need C >= B >= 1, got C = {cycles}, B = {with_x2}")));
    }
    let mut samples = Vec::with_capacity(cycles);
    for c in 0..cycles {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
        samples.push(CycleSample { label: format!("c{}", c + 1), rows: sample_phase1(fp, n_per_cycle, draws, &mut rng)? });
    }
    let designated: Vec<String> = (0..with_x2).map(|c| format!("c{}", c + 1)).collect();
    let (x1, z) = names();
    let mut ds = combine_cycles(samples, cycles, &designated, x1, z)?;
    ds.fp_size = Some(fp.len() as f64);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{design_frame, validate};

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn small() -> FinitePopulation {
        generate_fp(&FpConfig { n: 20_000, stage1_clusters: 40, ..FpConfig::default() }).unwrap()
    }

    #[test]
    fn population_correlations() {
        let fp = generate_fp(&FpConfig::default()).unwrap();
        let c1 = corr(&fp.x2, &fp.x2_star);
        let c2 = corr(&fp.x2, &fp.x2_2star);
        let c3 = corr(&fp.x2, &fp.x2_3star);
        assert!((c1 - (2.5f64 / 2.75).sqrt()).abs() < 0.005, "{c1}");
        assert!((c2 - 0.84).abs() < 0.02, "{c2}");
        assert!((c3 - 0.25 / (0.25f64 * 2.75).sqrt()).abs() < 0.01, "{c3}");
        let cx = corr(&fp.x1_1, &fp.x2);
        assert!((cx - 0.09).abs() < 0.01, "{cx}");
    }

    #[test]
    fn outcome_model_holds_exactly() {
        let fp = small();
        for i in 0..fp.len() {
            assert_eq!(fp.x2[i] - (1.0 + 0.5 * fp.z1[i] + 1.5 * fp.z2[i] + fp.eps[i]), 0.0);
            assert!(fp.x1_2[i] == 0.0 || fp.x1_2[i] == 1.0);
            assert!(fp.y[i] == 0.0 || fp.y[i] == 1.0);
        }
    }

    #[test]
    fn quantile_coding_proportions() {
        let fp = small();
        let n = fp.len() as f64;
        let count = |lvl: f64| fp.z1.iter().zip(&fp.x2_2star).filter(|(z, x)| (**x - (-1.9 + 0.5 * **z + 1.45 * lvl)).abs() < 1e-12).count() as f64 / n;
        assert!((count(1.0) - 0.4).abs() <= 0.01);
        assert!((count(2.0) - 0.2).abs() <= 0.01);
        assert!((count(3.0) - 0.4).abs() <= 0.01);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = small();
        let b = small();
        assert_eq!(a, b);
        let s1 = sample_type1(&a, 400, 0.5, StageDraws { stage1: 10, stage2: 2 }, Phase2Mechanism::WithinPsu, 9).unwrap();
        let s2 = sample_type1(&b, 400, 0.5, StageDraws { stage1: 10, stage2: 2 }, Phase2Mechanism::WithinPsu, 9).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn geometry_is_checked() {
        let bad = FpConfig { n: 1000, ..FpConfig::default() };
        assert!(matches!(generate_fp(&bad), Err(SimError::Geometry(_))));
    }

    #[test]
    fn full_phase_two() {
        let fp = small();
        let ds = sample_type1(&fp, 300, 1.0, StageDraws { stage1: 10, stage2: 2 }, Phase2Mechanism::WithinPsu, 3).unwrap();
        assert!(ds.rows.iter().all(|r| r.in_s2 && r.w2 == Some(1.0)));
        assert!(validate(&ds).is_accepted());
    }

    #[test]
    fn desk_sizes() {
        let fp = generate_fp(&FpConfig::default()).unwrap();
        let ds = sample_type1(&fp, 2000, 1.0 / 3.0, StageDraws::default(), Phase2Mechanism::WithinPsu, 11).unwrap();
        // within-PSU duplicates are merged, so rows can fall a little short
        assert!(ds.n1() <= 2000 && ds.n1() >= 1900, "{}", ds.n1());
        assert!((ds.n2() as f64 - 667.0).abs() < 40.0, "{}", ds.n2());
        assert!(validate(&ds).is_accepted(), "{:?}", validate(&ds));
        let frame = design_frame(&ds).unwrap();
        assert_eq!(frame.df(), 49);
        let w: Vec<f64> = ds.rows.iter().map(|r| r.w1).collect();
        let ratio = w.iter().cloned().fold(0.0, f64::max) / w.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((2.0..=10.0).contains(&ratio), "max/min w1 = {ratio}");
    }

    #[test]
    fn type2_weights_and_frame() {
        let fp = small();
        let ds = sample_type2(&fp, 3, 1, 200, StageDraws { stage1: 10, stage2: 2 }, 5).unwrap();
        assert!(validate(&ds).is_accepted(), "{:?}", validate(&ds));
        assert!(ds.rows.iter().filter(|r| r.in_s2).all(|r| r.w2 == Some(3.0)));
        assert!(ds.rows.iter().all(|r| r.in_s2 == (r.cycle.as_deref() == Some("c1"))));
        let frame = design_frame(&ds).unwrap();
        assert_eq!(frame.total_strata, 3);
        assert_eq!(frame.total_psus, 30);
        let one = sample_type2(&fp, 1, 1, 200, StageDraws { stage1: 10, stage2: 2 }, 5).unwrap();
        assert!(one.rows.iter().all(|r| r.in_s2 && r.w2 == Some(1.0)));
    }

    #[test]
    fn seeds_are_split() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(1, 1), derive_seed(2, 0));
    }

    #[test]
    fn rho_conversions() {
        assert!((rho_x11_x2(rho_x11_z2_for(0.81, 0.5), 0.5) - 0.81).abs() < 1e-15);
        assert!((rho_x11_z2_for(0.09, 0.5) - 0.0995).abs() < 1e-4);
    }
}
