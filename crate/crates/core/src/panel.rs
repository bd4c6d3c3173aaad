//! Panel data representation and study specification.
//!
//! A [`PanelDataset`] is a dense, rectangular `variable × unit × week` cube of
//! finite reals. It is only obtainable through [`validate_panel`], so every
//! other module can index it without re-checking coordinates.

use std::collections::HashSet;
use std::marker::PhantomData;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};

/// Hard lower bound on pre-treatment weeks.
pub const MIN_PRE_WEEKS: usize = 2;
/// Below this many pre-treatment weeks a warning is logged.
pub const RECOMMENDED_PRE_WEEKS: usize = 8;
/// Tolerance on `sum(weights) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Candidate panel as assembled by the ingester; cells may be missing.
///
/// Values are laid out variable-major, then unit, then week.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub unit_ids: Vec<String>,
    pub week_index: Vec<NaiveDate>,
    pub variables: Vec<String>,
    pub values: Vec<Option<f64>>,
}

/// Validated, immutable weekly panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    week_index: Vec<NaiveDate>,
    variables: Vec<String>,
    values: Vec<f64>,
}

/// Checks every panel invariant and returns the dense panel.
///
/// Errors name the first offending coordinate in the order: units, variables,
/// week spacing, then cells scanned variable, unit, week.
pub fn validate_panel(raw: RawPanel) -> Result<PanelDataset> {
    if raw.unit_ids.is_empty() {
        return Err(ScmError::EmptyPanel("units"));
    }
    if raw.week_index.is_empty() {
        return Err(ScmError::EmptyPanel("weeks"));
    }
    if raw.variables.is_empty() {
        return Err(ScmError::EmptyPanel("variables"));
    }
    let mut seen = HashSet::new();
    for u in &raw.unit_ids {
        if !seen.insert(u.as_str()) {
            return Err(ScmError::DuplicateUnit(u.clone()));
        }
    }
    let mut seen = HashSet::new();
    for v in &raw.variables {
        if !seen.insert(v.as_str()) {
            return Err(ScmError::DuplicateVariable(v.clone()));
        }
    }
    for pair in raw.week_index.windows(2) {
        let gap = (pair[1] - pair[0]).num_days();
        if gap != 7 {
            return Err(ScmError::IrregularWeekSpacing {
                from: pair[0],
                to: pair[1],
                gap_days: gap,
            });
        }
    }
    let (nv, nu, nw) = (raw.variables.len(), raw.unit_ids.len(), raw.week_index.len());
    if raw.values.len() != nv * nu * nw {
        return Err(ScmError::ShapeMismatch {
            expected: nv * nu * nw,
            actual: raw.values.len(),
        });
    }
    let mut values = Vec::with_capacity(raw.values.len());
    for (i, cell) in raw.values.iter().enumerate() {
        let (v, u, w) = (i / (nu * nw), (i / nw) % nu, i % nw);
        match cell {
            None => {
                return Err(ScmError::MissingValue {
                    variable: raw.variables[v].clone(),
                    unit: raw.unit_ids[u].clone(),
                    week: raw.week_index[w],
                })
            }
            Some(x) if !x.is_finite() => {
                return Err(ScmError::NonFiniteValue {
                    variable: raw.variables[v].clone(),
                    unit: raw.unit_ids[u].clone(),
                    week: raw.week_index[w],
                })
            }
            Some(x) => values.push(*x),
        }
    }
    Ok(PanelDataset {
        unit_ids: raw.unit_ids,
        week_index: raw.week_index,
        variables: raw.variables,
        values,
    })
}

impl PanelDataset {
    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn week_index(&self) -> &[NaiveDate] {
        &self.week_index
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.week_index.len()
    }

    pub fn unit_position(&self, unit: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == unit)
    }

    pub fn variable_position(&self, variable: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == variable)
    }

    pub fn week_position(&self, week: NaiveDate) -> Option<usize> {
        self.week_index.iter().position(|w| *w == week)
    }

    fn offset(&self, variable: usize, unit: usize) -> usize {
        (variable * self.n_units() + unit) * self.n_weeks()
    }

    /// Value at `(variable, unit, week)` by position.
    pub fn value(&self, variable: usize, unit: usize, week: usize) -> f64 {
        self.values[self.offset(variable, unit) + week]
    }

    /// Full-horizon series of one variable for one unit, by position.
    pub fn series_at(&self, variable: usize, unit: usize) -> &[f64] {
        let start = self.offset(variable, unit);
        &self.values[start..start + self.n_weeks()]
    }

    /// Full-horizon series looked up by name.
    pub fn series(&self, variable: &str, unit: &str) -> Result<&[f64]> {
        let v = self
            .variable_position(variable)
            .ok_or_else(|| ScmError::UnknownVariable(variable.to_string()))?;
        let u = self
            .unit_position(unit)
            .ok_or_else(|| ScmError::UnknownUnit(unit.to_string()))?;
        Ok(self.series_at(v, u))
    }

    /// Returns a new panel with `name` appended (or replaced, if it exists).
    ///
    /// `series_for_unit` is called once per unit in panel order and must
    /// return a full-horizon series.
    pub fn with_variable<F>(&self, name: &str, mut series_for_unit: F) -> Result<PanelDataset>
    where
        F: FnMut(usize, &str) -> Result<Vec<f64>>,
    {
        let mut block = Vec::with_capacity(self.n_units() * self.n_weeks());
        for (u, unit) in self.unit_ids.iter().enumerate() {
            let s = series_for_unit(u, unit)?;
            if s.len() != self.n_weeks() {
                return Err(ScmError::LengthMismatch {
                    left: s.len(),
                    right: self.n_weeks(),
                });
            }
            block.extend(s);
        }
        let mut raw = self.to_raw();
        match self.variable_position(name) {
            Some(v) => {
                let start = self.offset(v, 0);
                for (i, x) in block.into_iter().enumerate() {
                    raw.values[start + i] = Some(x);
                }
            }
            None => {
                raw.variables.push(name.to_string());
                raw.values.extend(block.into_iter().map(Some));
            }
        }
        validate_panel(raw)
    }

    /// Lossless conversion back to the candidate form.
    pub fn to_raw(&self) -> RawPanel {
        RawPanel {
            unit_ids: self.unit_ids.clone(),
            week_index: self.week_index.clone(),
            variables: self.variables.clone(),
            values: self.values.iter().copied().map(Some).collect(),
        }
    }
}

/// Inclusive range of week positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekRange {
    pub start: usize,
    pub end: usize,
}

impl WeekRange {
    pub fn new(start: usize, end: usize) -> Self {
        WeekRange { start, end }
    }

    pub fn len(&self) -> usize {
        if self.end < self.start {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Declarative description of a single synthetic-control study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub treated_unit: String,
    pub donor_units: Vec<String>,
    /// Position of the first treated week.
    pub treatment_week: usize,
    pub outcome_variable: String,
    pub predictor_variables: Vec<String>,
    pub pre_window: WeekRange,
    pub post_window: WeekRange,
}

impl StudySpec {
    /// Spec with the pre window running from `pre_start` to the week before
    /// treatment and the post window from treatment to `post_end`.
    pub fn with_windows(
        treated_unit: impl Into<String>,
        donor_units: Vec<String>,
        outcome_variable: impl Into<String>,
        predictor_variables: Vec<String>,
        pre_start: usize,
        treatment_week: usize,
        post_end: usize,
    ) -> Self {
        StudySpec {
            treated_unit: treated_unit.into(),
            donor_units,
            treatment_week,
            outcome_variable: outcome_variable.into(),
            predictor_variables,
            pre_window: WeekRange::new(pre_start, treatment_week.saturating_sub(1)),
            post_window: WeekRange::new(treatment_week, post_end),
        }
    }

    /// All units taking part in the study, treated first.
    pub fn all_units(&self) -> Vec<String> {
        std::iter::once(self.treated_unit.clone())
            .chain(self.donor_units.iter().cloned())
            .collect()
    }
}

/// Checks that `spec` is well formed against `panel`.
pub fn validate_spec(spec: StudySpec, panel: &PanelDataset) -> Result<StudySpec> {
    if panel.unit_position(&spec.treated_unit).is_none() {
        return Err(ScmError::UnknownUnit(spec.treated_unit.clone()));
    }
    let mut seen = HashSet::new();
    for d in &spec.donor_units {
        if *d == spec.treated_unit {
            return Err(ScmError::TreatedInDonorPool(d.clone()));
        }
        if panel.unit_position(d).is_none() {
            return Err(ScmError::UnknownUnit(d.clone()));
        }
        if !seen.insert(d.as_str()) {
            return Err(ScmError::DuplicateUnit(d.clone()));
        }
    }
    if spec.donor_units.len() < 2 {
        return Err(ScmError::TooFewDonors(spec.donor_units.len()));
    }
    if panel.variable_position(&spec.outcome_variable).is_none() {
        return Err(ScmError::UnknownVariable(spec.outcome_variable.clone()));
    }
    if spec.predictor_variables.is_empty() {
        return Err(ScmError::NoPredictors);
    }
    let mut seen = HashSet::new();
    for p in &spec.predictor_variables {
        if panel.variable_position(p).is_none() {
            return Err(ScmError::UnknownVariable(p.clone()));
        }
        if !seen.insert(p.as_str()) {
            return Err(ScmError::DuplicateVariable(p.clone()));
        }
    }
    let n = panel.n_weeks();
    let (pre, post, t0) = (spec.pre_window, spec.post_window, spec.treatment_week);
    if t0 == 0 || t0 >= n {
        return Err(ScmError::InvalidWindow(format!(
            "treatment week {t0} is not strictly inside a {n}-week panel"
        )));
    }
    if pre.end + 1 != t0 || post.start != t0 {
        return Err(ScmError::InvalidWindow(format!(
            "pre window must end at week {} and post window start at week {t0}",
            t0 - 1
        )));
    }
    if pre.start > pre.end {
        return Err(ScmError::InsufficientPreWindow {
            weeks: 0,
            min: MIN_PRE_WEEKS,
        });
    }
    if post.end < post.start || post.end >= n {
        return Err(ScmError::InvalidWindow(format!(
            "post window {}..={} is outside the {n}-week panel",
            post.start, post.end
        )));
    }
    if pre.len() < MIN_PRE_WEEKS {
        return Err(ScmError::InsufficientPreWindow {
            weeks: pre.len(),
            min: MIN_PRE_WEEKS,
        });
    }
    if pre.len() < RECOMMENDED_PRE_WEEKS {
        log::warn!(
            "pre-treatment window has only {} weeks; fit quality may be poor",
            pre.len()
        );
    }
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Donor;
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Predictor;

/// Labelled weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Weights<K> {
    labels: Vec<String>,
    values: Vec<f64>,
    #[serde(skip)]
    _kind: PhantomData<K>,
}

pub type DonorWeights = Weights<Donor>;
pub type PredictorWeights = Weights<Predictor>;

impl<K> Weights<K> {
    /// Accepts weights already on the simplex (each in `[0, 1]`, sum 1 within
    /// [`SIMPLEX_TOL`]).
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(ScmError::LengthMismatch {
                left: labels.len(),
                right: values.len(),
            });
        }
        if values.is_empty() {
            return Err(ScmError::InvalidParameter("empty weight vector".into()));
        }
        let sum: f64 = values.iter().sum();
        if values.iter().any(|w| !(0.0..=1.0).contains(w)) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ScmError::InvalidParameter(format!(
                "weights are not on the simplex (sum {sum})"
            )));
        }
        Ok(Weights {
            labels,
            values,
            _kind: PhantomData,
        })
    }

    /// Clamps negatives to zero and rescales to sum one.
    pub fn normalized(labels: Vec<String>, values: &[f64]) -> Result<Self> {
        let clamped: Vec<f64> = values.iter().map(|w| w.max(0.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(ScmError::InvalidParameter(
                "weights have no positive mass".into(),
            ));
        }
        let values = clamped.iter().map(|w| (w / sum).min(1.0)).collect();
        Self::new(labels, values)
    }

    /// Equal weights over `labels`.
    pub fn uniform(labels: Vec<String>) -> Result<Self> {
        let n = labels.len().max(1) as f64;
        let values = vec![1.0 / n; labels.len()];
        Self::normalized(labels, &values)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.labels
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }

    /// Entries with weight above `floor`, in declaration order.
    pub fn nonzero(&self, floor: f64) -> Vec<(&str, f64)> {
        self.iter().filter(|(_, w)| *w > floor).collect()
    }
}
