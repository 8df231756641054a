#![allow(dead_code)]

use twophase::mcstudy;
use twophase::simgen::{self, FinitePopulation, FpConfig, Phase2Mechanism, StageDraws};
use twophase::wlogit::ModelSpec;
use twophase::TwoPhaseDataset;

/// 20k-unit population with 40 stage-1 clusters of 500 units.
pub fn small_fp(seed: u64) -> FinitePopulation {
    simgen::generate_fp(&FpConfig { n: 20_000, stage1_clusters: 40, seed, ..FpConfig::default() }).unwrap()
}

pub fn type1(fp: &FinitePopulation, n1: usize, f2: f64, seed: u64) -> TwoPhaseDataset {
    simgen::sample_type1(fp, n1, f2, StageDraws { stage1: 20, stage2: 2 }, Phase2Mechanism::WithinPsu, seed).unwrap()
}

pub fn model(ds: &TwoPhaseDataset) -> ModelSpec {
    mcstudy::study_model(ds)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Append a `z` column.
pub fn with_z(mut ds: TwoPhaseDataset, name: &str, values: &[f64]) -> TwoPhaseDataset {
    ds.z_names.push(name.to_string());
    for (r, v) in ds.rows.iter_mut().zip(values) {
        r.z.push(*v);
    }
    ds
}
