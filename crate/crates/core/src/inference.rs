//! Placebo tests and MSPE-ratio rank inference.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit, window_mspe, FitResult, VSearch};
use crate::error::{Result, ScmError};
use crate::panel::{validate_spec, PanelDataset, StudySpec, WeekRange, MIN_PRE_WEEKS};

/// Default pass threshold on the in-time placebo MSPE ratio.
pub const DEFAULT_PASS_THRESHOLD: f64 = 2.0;
/// Sustained divergence: `|gap| > DIVERGENCE_RMSPE_MULTIPLE * pre RMSPE` ...
pub const DIVERGENCE_RMSPE_MULTIPLE: f64 = 2.0;
/// ... for this many consecutive weeks.
pub const DIVERGENCE_RUN: usize = 3;

/// `post_mspe / pre_mspe`.
pub fn mspe_ratio(fit: &FitResult) -> Result<f64> {
    if !(fit.pre_mspe > 0.0) {
        return Err(ScmError::ZeroPreMspe);
    }
    Ok(fit.post_mspe / fit.pre_mspe)
}

/// Like [`mspe_ratio`] but substitutes machine epsilon for a zero pre-MSPE.
/// The flag reports whether the substitution happened.
pub fn mspe_ratio_or_floor(fit: &FitResult) -> (f64, bool) {
    match mspe_ratio(fit) {
        Ok(r) => (r, false),
        Err(_) => {
            log::warn!(
                "unit `{}` has zero pre-treatment MSPE; using machine epsilon",
                fit.spec.treated_unit
            );
            (fit.post_mspe / f64::EPSILON, true)
        }
    }
}

/// Rank of `treated_ratio` among `ratios` (which must include it) and the
/// permutation p-value: the share of units whose ratio is at least the
/// treated unit's.
pub fn rank_p_value(treated_ratio: f64, ratios: &[f64]) -> (usize, f64) {
    let rank = ratios.iter().filter(|r| **r >= treated_ratio).count().max(1);
    let n = ratios.len().max(1);
    (rank, rank as f64 / n as f64)
}

/// Donors whose pre-MSPE exceeds `multiple` times the treated pre-MSPE.
/// `None` means no limit.
pub fn discarded_units(
    pre_mspes: &[(String, f64)],
    treated_pre_mspe: f64,
    multiple: Option<f64>,
) -> Vec<String> {
    match multiple {
        None => Vec::new(),
        Some(c) => pre_mspes
            .iter()
            .filter(|(_, p)| *p > c * treated_pre_mspe)
            .map(|(u, _)| u.clone())
            .collect(),
    }
}

/// Which units enter the rank p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankScope {
    /// Every successfully fitted unit, regardless of cutoff.
    #[default]
    AllFitted,
    /// Only units surviving the MSPE cutoff.
    Retained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboUnit {
    pub unit: String,
    pub fit: FitResult,
    pub ratio: f64,
    /// Pre-MSPE was zero and machine epsilon was used instead.
    pub pre_mspe_floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboFailure {
    pub unit: String,
    pub error: String,
}

/// Per-unit placebo fits with rank statistics under one cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboStudy {
    pub treated: String,
    /// Treated unit first, then donors in spec order.
    pub units: Vec<PlaceboUnit>,
    pub failures: Vec<PlaceboFailure>,
    pub cutoff_multiple: Option<f64>,
    pub rank_scope: RankScope,
    pub discarded: Vec<String>,
    pub treated_rank: usize,
    pub n_ranked: usize,
    pub p_value: f64,
}

impl PlaceboStudy {
    pub fn ratios(&self) -> Vec<(String, f64)> {
        self.units.iter().map(|u| (u.unit.clone(), u.ratio)).collect()
    }

    pub fn treated_fit(&self) -> &FitResult {
        &self.units[0].fit
    }

    /// Same fits, re-ranked under a different cutoff and scope.
    pub fn with_cutoff(&self, cutoff_multiple: Option<f64>, rank_scope: RankScope) -> PlaceboStudy {
        let treated = &self.units[0];
        let pre: Vec<(String, f64)> = self.units[1..]
            .iter()
            .map(|u| (u.unit.clone(), u.fit.pre_mspe))
            .collect();
        let discarded = discarded_units(&pre, treated.fit.pre_mspe, cutoff_multiple);
        let ranked: Vec<f64> = self
            .units
            .iter()
            .filter(|u| rank_scope == RankScope::AllFitted || !discarded.contains(&u.unit))
            .map(|u| u.ratio)
            .collect();
        let (treated_rank, p_value) = rank_p_value(treated.ratio, &ranked);
        PlaceboStudy {
            treated: self.treated.clone(),
            units: self.units.clone(),
            failures: self.failures.clone(),
            cutoff_multiple,
            rank_scope,
            discarded,
            treated_rank,
            n_ranked: ranked.len(),
            p_value,
        }
    }

    /// Gap series of the treated unit and every retained placebo unit.
    pub fn retained_gaps(&self) -> Vec<(&str, &[f64])> {
        self.units
            .iter()
            .filter(|u| !self.discarded.contains(&u.unit))
            .map(|u| (u.unit.as_str(), u.fit.gap.as_slice()))
            .collect()
    }
}

/// Spec with `unit` treated and every other study unit as a donor.
fn reassigned(spec: &StudySpec, unit: &str) -> StudySpec {
    let donors = spec
        .all_units()
        .into_iter()
        .filter(|u| u != unit)
        .collect();
    StudySpec {
        treated_unit: unit.to_string(),
        donor_units: donors,
        ..spec.clone()
    }
}

/// Refits the study with each unit cast as treated.
///
/// A failing donor fit is recorded in `failures` and left out of the ranks;
/// a failing treated fit is an error.
pub fn placebo_in_space(
    panel: &PanelDataset,
    spec: &StudySpec,
    cutoff_multiple: Option<f64>,
    rank_scope: RankScope,
    search: &VSearch,
) -> Result<PlaceboStudy> {
    if let Some(c) = cutoff_multiple {
        if !(c > 0.0) {
            return Err(ScmError::InvalidParameter(format!("cutoff multiple {c} must be positive")));
        }
    }
    let spec = validate_spec(spec.clone(), panel)?;
    let units = spec.all_units();
    let results: Vec<Result<FitResult>> = units
        .par_iter()
        .map(|u| fit(panel, &reassigned(&spec, u), search))
        .collect();

    let mut placebo_units = Vec::new();
    let mut failures = Vec::new();
    for (i, (unit, res)) in units.iter().zip(results).enumerate() {
        match res {
            Ok(f) => {
                let (ratio, floored) = mspe_ratio_or_floor(&f);
                placebo_units.push(PlaceboUnit {
                    unit: unit.clone(),
                    fit: f,
                    ratio,
                    pre_mspe_floored: floored,
                });
            }
            Err(e) if i == 0 => return Err(e),
            Err(e) => {
                log::warn!("placebo fit for `{unit}` failed: {e}");
                failures.push(PlaceboFailure {
                    unit: unit.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let base = PlaceboStudy {
        treated: spec.treated_unit.clone(),
        units: placebo_units,
        failures,
        cutoff_multiple: None,
        rank_scope,
        discarded: Vec::new(),
        treated_rank: 0,
        n_ranked: 0,
        p_value: 1.0,
    };
    Ok(base.with_cutoff(cutoff_multiple, rank_scope))
}

/// Outcome of an in-time placebo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceVerdict {
    pub shift_weeks: usize,
    pub placebo_treatment_week: usize,
    pub placebo_treatment_date: NaiveDate,
    /// MSPE over the weeks from the placebo date up to the true treatment.
    pub placebo_post_mspe: f64,
    pub pre_mspe: f64,
    pub ratio: f64,
    pub pass_threshold: f64,
    pub pass: bool,
    /// First week where `|gap|` exceeds twice the pre-window RMSPE for three
    /// consecutive weeks.
    pub first_divergence_week: Option<NaiveDate>,
}

/// First index `>= from` starting a run of `run` weeks with `|gap| > threshold`.
pub fn first_sustained_divergence(gap: &[f64], from: usize, threshold: f64, run: usize) -> Option<usize> {
    let mut streak = 0;
    for (i, g) in gap.iter().enumerate().skip(from) {
        if g.abs() > threshold {
            streak += 1;
            if streak == run {
                return Some(i + 1 - run);
            }
        } else {
            streak = 0;
        }
    }
    None
}

/// Refits with the treatment moved `shift_weeks` earlier and judges whether
/// the gap diverges before the real treatment date.
pub fn placebo_in_time(
    panel: &PanelDataset,
    spec: &StudySpec,
    shift_weeks: usize,
    pass_threshold: f64,
    search: &VSearch,
) -> Result<(FitResult, DivergenceVerdict)> {
    let spec = validate_spec(spec.clone(), panel)?;
    if shift_weeks == 0 {
        return Err(ScmError::InvalidParameter("shift must be at least one week".into()));
    }
    let t0 = spec.treatment_week;
    let available = t0.saturating_sub(spec.pre_window.start);
    if shift_weeks >= t0 || available < shift_weeks + MIN_PRE_WEEKS {
        return Err(ScmError::InsufficientPreWindow {
            weeks: available.saturating_sub(shift_weeks),
            min: MIN_PRE_WEEKS,
        });
    }
    let t_placebo = t0 - shift_weeks;
    let shifted = StudySpec {
        treatment_week: t_placebo,
        pre_window: WeekRange::new(spec.pre_window.start, t_placebo - 1),
        post_window: WeekRange::new(t_placebo, spec.post_window.end),
        ..spec.clone()
    };
    let f = fit(panel, &shifted, search)?;
    let placebo_post_mspe = window_mspe(&f.gap, WeekRange::new(t_placebo, t0 - 1))?;
    let pre = if f.pre_mspe > 0.0 { f.pre_mspe } else { f64::EPSILON };
    let ratio = placebo_post_mspe / pre;
    let threshold = DIVERGENCE_RMSPE_MULTIPLE * f.pre_mspe.sqrt();
    let first = first_sustained_divergence(&f.gap, t_placebo, threshold, DIVERGENCE_RUN)
        .map(|i| panel.week_index()[i]);
    let verdict = DivergenceVerdict {
        shift_weeks,
        placebo_treatment_week: t_placebo,
        placebo_treatment_date: panel.week_index()[t_placebo],
        placebo_post_mspe,
        pre_mspe: f.pre_mspe,
        ratio,
        pass_threshold,
        pass: ratio < pass_threshold,
        first_divergence_week: first,
    };
    Ok((f, verdict))
}

/// Refits with a different outcome variable; it is removed from the
/// predictors if present.
pub fn placebo_outcome_swap(
    panel: &PanelDataset,
    spec: &StudySpec,
    new_outcome: &str,
    search: &VSearch,
) -> Result<FitResult> {
    if panel.variable_position(new_outcome).is_none() {
        return Err(ScmError::UnknownVariable(new_outcome.to_string()));
    }
    let mut swapped = spec.clone();
    if new_outcome != spec.outcome_variable {
        swapped.outcome_variable = new_outcome.to_string();
        swapped.predictor_variables.retain(|p| p != new_outcome);
    }
    fit(panel, &swapped, search)
}

/// Refits with a donor cast as treated; the original treated unit takes the
/// donor's slot in the pool.
pub fn unit_swap(
    panel: &PanelDataset,
    spec: &StudySpec,
    new_treated: &str,
    search: &VSearch,
) -> Result<FitResult> {
    let Some(pos) = spec.donor_units.iter().position(|d| d == new_treated) else {
        return Err(ScmError::UnknownUnit(new_treated.to_string()));
    };
    let mut swapped = spec.clone();
    swapped.donor_units[pos] = spec.treated_unit.clone();
    swapped.treated_unit = new_treated.to_string();
    fit(panel, &swapped, search)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_strictly_largest() {
        let ratios: Vec<f64> = std::iter::once(30.0).chain((1..24).map(f64::from)).collect();
        let (rank, p) = rank_p_value(30.0, &ratios);
        assert_eq!(rank, 1);
        assert_eq!(p, 1.0 / 24.0);
    }

    #[test]
    fn rank_with_three_above() {
        let mut ratios = vec![5.0, 9.0, 8.0, 7.0];
        ratios.extend(std::iter::repeat_n(1.0, 16));
        let (rank, p) = rank_p_value(5.0, &ratios);
        assert_eq!(rank, 4);
        assert_eq!(p, 0.2);
    }

    #[test]
    fn cutoff_threshold_rule() {
        let pre = vec![
            ("a".to_string(), 5.0),
            ("b".to_string(), 15.0),
            ("c".to_string(), 200.0),
        ];
        assert_eq!(discarded_units(&pre, 1.0, Some(10.0)), vec!["b", "c"]);
        assert_eq!(discarded_units(&pre, 1.0, Some(100.0)), vec!["c"]);
        assert!(discarded_units(&pre, 1.0, None).is_empty());
    }

    #[test]
    fn divergence_needs_a_run() {
        let gap = [0.0, 5.0, 0.0, 5.0, 5.0, 5.0, 5.0];
        assert_eq!(first_sustained_divergence(&gap, 0, 1.0, 3), Some(3));
        assert_eq!(first_sustained_divergence(&gap, 0, 10.0, 3), None);
    }
}
