#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use synthcontrol::panel::{validate_panel, PanelDataset, RawPanel};
use synthcontrol::synthgen::{generate, write_long_csv, SynthParams};

pub fn weeks(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2024, 1, 7).unwrap();
    (0..n).map(|i| start + Duration::days(7 * i as i64)).collect()
}

/// `tables[v][u]` is the weekly series of variable `v` for unit `u`.
pub fn panel(units: &[&str], variables: &[&str], tables: &[Vec<Vec<f64>>]) -> PanelDataset {
    let n_weeks = tables[0][0].len();
    let values = tables.iter().flatten().flatten().map(|x| Some(*x)).collect();
    validate_panel(RawPanel {
        unit_ids: units.iter().map(|s| s.to_string()).collect(),
        week_index: weeks(n_weeks),
        variables: variables.iter().map(|s| s.to_string()).collect(),
        values,
    })
    .unwrap()
}

pub fn synth_csv(dir: &Path, params: &SynthParams) -> PathBuf {
    let path = dir.join(format!("synth_{}.csv", params.seed));
    let g = generate(params).unwrap();
    write_long_csv(std::fs::File::create(&path).unwrap(), &g.observations).unwrap();
    path
}

pub const STUDY_TOML: &str = r#"seed = 3

[data]
input_csv = "data.csv"

[outcome]
variable = "price"

[predictors]
candidates = ["cov_1", "cov_2", "cov_3", "price"]

[study]
treated = "U00"
treatment_week = "2023-11-12"

[placebo]
shift_weeks = 12
"#;
