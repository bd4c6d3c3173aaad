//! Declarative study configuration and the preparation pipeline it drives.
//!
//! One TOML document describes a whole study. Unknown keys are rejected.
//! Paths are resolved relative to the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::engine::{OuterOptions, VSearch};
use crate::error::{Result, ScmError};
use crate::inference::{RankScope, DEFAULT_PASS_THRESHOLD};
use crate::ingest::{
    self, load_long_csv, log_transform, normalize_max, screen_predictors, to_weekly, wallet_value,
    Aggregation, ScreeningReport, DEFAULT_LOG_FLOOR,
};
use crate::panel::{validate_spec, PanelDataset, StudySpec};
use crate::sensitivity::{LooOptions, DEFAULT_DEGRADATION_MULTIPLE, DEFAULT_WEIGHT_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub outcome: OutcomeConfig,
    #[serde(default)]
    pub transforms: BTreeMap<String, Transform>,
    pub predictors: PredictorConfig,
    pub study: StudyUnits,
    #[serde(default)]
    pub placebo: PlaceboConfig,
    #[serde(default)]
    pub loo: LooConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub input_csv: PathBuf,
    /// First day of each week, e.g. `"sun"` or `"monday"`.
    #[serde(default = "default_anchor")]
    pub week_anchor: String,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_log_floor")]
    pub log_floor: f64,
}

fn default_anchor() -> String {
    "sun".into()
}

fn default_log_floor() -> f64 {
    DEFAULT_LOG_FLOOR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTransform {
    #[default]
    Raw,
    WalletValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    /// Source variable (a price series for `wallet_value`).
    pub variable: String,
    #[serde(default)]
    pub transform: OutcomeTransform,
    /// Week the wallet is bought; defaults to the first pre-treatment week.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_week: Option<NaiveDate>,
    /// Name of the derived outcome variable; defaults to `wallet_value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    None,
    Log,
    NormalizeMax,
}

impl Transform {
    /// Name of the derived variable, or `None` for the identity.
    pub fn derived_name(&self, variable: &str) -> Option<String> {
        match self {
            Transform::None => None,
            Transform::Log => Some(format!("{variable}_log")),
            Transform::NormalizeMax => Some(format!("{variable}_norm")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    /// Screening order matters: earlier candidates win correlated pairs.
    pub candidates: Vec<String>,
    /// Absolute correlation above which a later candidate is dropped; absent
    /// disables screening.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screening_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyUnits {
    pub treated: String,
    /// Donor pool; empty means every other unit in the panel.
    #[serde(default)]
    pub donors: Vec<String>,
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_note: Option<String>,
    /// Any date inside the first treated week.
    pub treatment_week: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_start: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_end: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceboConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_weeks: Option<usize>,
    /// Pre-MSPE cutoff multiples for the in-space placebo.
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<f64>,
    /// Also report the study without any cutoff.
    #[serde(default = "default_true")]
    pub no_limit: bool,
    #[serde(default = "default_pass_threshold")]
    pub pass_threshold: f64,
    #[serde(default)]
    pub rank_scope: RankScope,
    #[serde(default)]
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub units: Vec<String>,
}

fn default_cutoffs() -> Vec<f64> {
    vec![10.0, 100.0]
}

fn default_true() -> bool {
    true
}

fn default_pass_threshold() -> f64 {
    DEFAULT_PASS_THRESHOLD
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        PlaceboConfig {
            shift_weeks: None,
            cutoffs: default_cutoffs(),
            no_limit: true,
            pass_threshold: DEFAULT_PASS_THRESHOLD,
            rank_scope: RankScope::AllFitted,
            outcomes: Vec::new(),
            units: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LooConfig {
    #[serde(default = "default_floor")]
    pub weight_floor: f64,
    #[serde(default = "default_degradation")]
    pub degradation_multiple: f64,
}

fn default_floor() -> f64 {
    DEFAULT_WEIGHT_FLOOR
}

fn default_degradation() -> f64 {
    DEFAULT_DEGRADATION_MULTIPLE
}

impl Default for LooConfig {
    fn default() -> Self {
        LooConfig {
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            degradation_multiple: DEFAULT_DEGRADATION_MULTIPLE,
        }
    }
}

impl LooConfig {
    pub fn options(&self) -> LooOptions {
        LooOptions {
            weight_floor: self.weight_floor,
            degradation_multiple: self.degradation_multiple,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_refine")]
    pub refine: usize,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

fn default_starts() -> usize {
    OuterOptions::default().starts
}

fn default_refine() -> usize {
    OuterOptions::default().refine
}

fn default_max_evals() -> usize {
    OuterOptions::default().max_evals
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            starts: default_starts(),
            refine: default_refine(),
            max_evals: default_max_evals(),
        }
    }
}

pub fn parse_weekday(s: &str) -> Result<Weekday> {
    Weekday::from_str(s).map_err(|_| ScmError::Config(format!("invalid week_anchor `{s}`")))
}

impl StudyConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(s).map_err(|e| ScmError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `input_csv` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScmError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.data.input_csv.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.input_csv = dir.join(&cfg.data.input_csv);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ScmError::Config(e.to_string()))
    }

    fn check(&self) -> Result<()> {
        parse_weekday(&self.data.week_anchor)?;
        if !(self.data.log_floor > 0.0) {
            return Err(ScmError::Config("data.log_floor must be positive".into()));
        }
        if let Some(t) = self.predictors.screening_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(ScmError::Config("predictors.screening_threshold must be in (0, 1]".into()));
            }
        }
        if self.placebo.cutoffs.iter().any(|c| !(*c > 0.0)) {
            return Err(ScmError::Config("placebo.cutoffs must be positive".into()));
        }
        if self.placebo.shift_weeks == Some(0) {
            return Err(ScmError::Config("placebo.shift_weeks must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.loo.weight_floor) {
            return Err(ScmError::Config("loo.weight_floor must be in [0, 1)".into()));
        }
        if self.optimizer.refine == 0 {
            return Err(ScmError::Config("optimizer.refine must be at least 1".into()));
        }
        Ok(())
    }

    pub fn outcome_name(&self) -> String {
        match self.outcome.transform {
            OutcomeTransform::Raw => self.outcome.variable.clone(),
            OutcomeTransform::WalletValue => self
                .outcome
                .name
                .clone()
                .unwrap_or_else(|| "wallet_value".into()),
        }
    }

    pub fn search(&self) -> VSearch {
        VSearch::Optimize(OuterOptions {
            starts: self.optimizer.starts,
            refine: self.optimizer.refine,
            seed: self.seed,
            max_evals: self.optimizer.max_evals,
        })
    }

    /// Loads the input CSV and runs [`prepare_panel`].
    pub fn prepare(&self) -> Result<Prepared> {
        let file = std::fs::File::open(&self.data.input_csv).map_err(|e| {
            ScmError::Io(format!("cannot open {}: {e}", self.data.input_csv.display()))
        })?;
        let observations = load_long_csv(std::io::BufReader::new(file))?;
        let anchor = parse_weekday(&self.data.week_anchor)?;
        let panel = to_weekly(&observations, anchor, self.data.aggregation)?;
        prepare_panel(self, panel, observations.len())
    }
}

/// Prepared panel plus the resolved study spec.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub panel: PanelDataset,
    pub spec: StudySpec,
    pub report: PrepReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub input_rows: usize,
    pub units: Vec<String>,
    pub first_week: NaiveDate,
    pub last_week: NaiveDate,
    pub n_weeks: usize,
    pub variables: Vec<String>,
    pub derived_variables: Vec<String>,
    pub outcome: String,
    pub treated: String,
    pub donors: Vec<String>,
    pub excluded_donors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_note: Option<String>,
    pub treatment_week: NaiveDate,
    pub pre_weeks: usize,
    pub post_weeks: usize,
    pub screening: ScreeningReport,
    /// Candidates removed by screening (correlated or constant).
    pub dropped_predictors: Vec<String>,
}

fn locate_week(panel: &PanelDataset, date: NaiveDate, anchor: Weekday, what: &str) -> Result<usize> {
    let start = ingest::week_start(date, anchor);
    panel
        .week_position(start)
        .ok_or_else(|| ScmError::Config(format!("{what} {date} is outside the panel")))
}

/// Derives transformed variables and the outcome, then resolves the study.
/// Predictors are screened on the treated unit's pre-treatment series.
pub fn prepare_panel(cfg: &StudyConfig, mut panel: PanelDataset, input_rows: usize) -> Result<Prepared> {
    let anchor = parse_weekday(&cfg.data.week_anchor)?;
    let mut derived = Vec::new();
    for (var, t) in &cfg.transforms {
        let Some(name) = t.derived_name(var) else { continue };
        let v = panel
            .variable_position(var)
            .ok_or_else(|| ScmError::UnknownVariable(var.clone()))?;
        let floor = cfg.data.log_floor;
        let source = panel.clone();
        panel = panel.with_variable(&name, |u, _| {
            let s = source.series_at(v, u);
            match t {
                Transform::Log => log_transform(s, floor),
                Transform::NormalizeMax => normalize_max(s),
                Transform::None => Ok(s.to_vec()),
            }
        })?;
        derived.push(name);
    }

    let t0 = locate_week(&panel, cfg.study.treatment_week, anchor, "treatment week")?;
    let pre_start = match cfg.study.pre_start {
        Some(d) => locate_week(&panel, d, anchor, "pre_start")?,
        None => 0,
    };
    let post_end = match cfg.study.post_end {
        Some(d) => locate_week(&panel, d, anchor, "post_end")?,
        None => panel.n_weeks() - 1,
    };

    let outcome = cfg.outcome_name();
    if cfg.outcome.transform == OutcomeTransform::WalletValue {
        let v = panel
            .variable_position(&cfg.outcome.variable)
            .ok_or_else(|| ScmError::UnknownVariable(cfg.outcome.variable.clone()))?;
        let baseline = match cfg.outcome.baseline_week {
            Some(d) => locate_week(&panel, d, anchor, "baseline_week")?,
            None => pre_start,
        };
        let source = panel.clone();
        panel = panel.with_variable(&outcome, |u, _| wallet_value(source.series_at(v, u), baseline))?;
        derived.push(outcome.clone());
    }

    if panel.unit_position(&cfg.study.treated).is_none() {
        return Err(ScmError::UnknownUnit(cfg.study.treated.clone()));
    }
    for u in cfg.study.donors.iter().chain(&cfg.study.exclude) {
        if panel.unit_position(u).is_none() {
            return Err(ScmError::UnknownUnit(u.clone()));
        }
    }
    let pool: Vec<String> = if cfg.study.donors.is_empty() {
        panel
            .unit_ids()
            .iter()
            .filter(|u| **u != cfg.study.treated)
            .cloned()
            .collect()
    } else {
        cfg.study.donors.clone()
    };
    let donors: Vec<String> = pool
        .into_iter()
        .filter(|u| !cfg.study.exclude.contains(u))
        .collect();

    let mut spec = StudySpec::with_windows(
        cfg.study.treated.clone(),
        donors,
        outcome.clone(),
        cfg.predictors.candidates.clone(),
        pre_start,
        t0,
        post_end,
    );
    for c in &cfg.predictors.candidates {
        if panel.variable_position(c).is_none() {
            return Err(ScmError::UnknownVariable(c.clone()));
        }
    }
    let screening = match cfg.predictors.screening_threshold {
        Some(th) if t0 > pre_start => screen_predictors(
            &panel,
            &cfg.predictors.candidates,
            th,
            &cfg.study.treated,
            spec.pre_window,
        )?,
        _ => ScreeningReport {
            kept: cfg.predictors.candidates.clone(),
            ..Default::default()
        },
    };
    spec.predictor_variables = screening.kept.clone();
    let spec = validate_spec(spec, &panel)?;

    let dropped_predictors = screening
        .excluded
        .iter()
        .map(|e| e.variable.clone())
        .chain(screening.constant.iter().cloned())
        .collect();
    let report = PrepReport {
        input_rows,
        units: panel.unit_ids().to_vec(),
        first_week: panel.week_index()[0],
        last_week: *panel.week_index().last().expect("nonempty"),
        n_weeks: panel.n_weeks(),
        variables: panel.variables().to_vec(),
        derived_variables: derived,
        outcome,
        treated: spec.treated_unit.clone(),
        donors: spec.donor_units.clone(),
        excluded_donors: cfg.study.exclude.clone(),
        exclusion_note: cfg.study.exclusion_note.clone(),
        treatment_week: panel.week_index()[t0],
        pre_weeks: spec.pre_window.len(),
        post_weeks: spec.post_window.len(),
        screening,
        dropped_predictors,
    };
    Ok(Prepared { panel, spec, report })
}
