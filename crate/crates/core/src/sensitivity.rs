//! Leave-one-out donor robustness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit, FitResult, VSearch};
use crate::error::{Result, ScmError};
use crate::panel::{PanelDataset, StudySpec};

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-3;
pub const DEFAULT_DEGRADATION_MULTIPLE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooOptions {
    /// Donors with baseline weight above this are refitted without.
    pub weight_floor: f64,
    /// A refit whose pre-MSPE exceeds this multiple of the baseline counts as
    /// a degraded pre-treatment fit.
    pub degradation_multiple: f64,
}

impl Default for LooOptions {
    fn default() -> Self {
        LooOptions {
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            degradation_multiple: DEFAULT_DEGRADATION_MULTIPLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooEntry {
    pub excluded_donor: String,
    pub baseline_weight: f64,
    /// `None` when the refit failed; see `error`.
    pub fit: Option<FitResult>,
    pub average_post_gap: Option<f64>,
    pub sign_flipped: bool,
    pub pre_fit_degraded: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub baseline_average_gap: f64,
    pub baseline_pre_mspe: f64,
    pub options: LooOptions,
    pub entries: Vec<LooEntry>,
}

impl LooReport {
    /// False when any refit flips the effect's sign, degrades the pre-fit, or
    /// fails.
    pub fn robust(&self) -> bool {
        self.entries
            .iter()
            .all(|e| !e.sign_flipped && !e.pre_fit_degraded && e.error.is_none())
    }

    pub fn verdict(&self) -> &'static str {
        if self.robust() {
            "robust: direction and pre-treatment fit hold under every leave-one-out refit"
        } else {
            "NOT robust: at least one leave-one-out refit flips the sign or degrades the pre-treatment fit"
        }
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Refits `spec` once per donor whose baseline weight exceeds the floor, with
/// that donor removed from the pool.
pub fn leave_one_out(
    panel: &PanelDataset,
    spec: &StudySpec,
    baseline: &FitResult,
    options: &LooOptions,
    search: &VSearch,
) -> Result<LooReport> {
    if !(0.0..1.0).contains(&options.weight_floor) {
        return Err(ScmError::InvalidParameter(format!(
            "weight floor {} outside [0, 1)",
            options.weight_floor
        )));
    }
    if !(options.degradation_multiple > 0.0) {
        return Err(ScmError::InvalidParameter(
            "degradation multiple must be positive".into(),
        ));
    }
    let targets: Vec<(String, f64)> = spec
        .donor_units
        .iter()
        .filter_map(|d| {
            let w = baseline.donor_weights.get(d)?;
            (w > options.weight_floor).then(|| (d.clone(), w))
        })
        .collect();

    let entries = targets
        .par_iter()
        .map(|(donor, weight)| {
            let mut reduced = spec.clone();
            reduced.donor_units.retain(|d| d != donor);
            match fit(panel, &reduced, search) {
                Ok(f) => LooEntry {
                    excluded_donor: donor.clone(),
                    baseline_weight: *weight,
                    average_post_gap: Some(f.average_post_gap),
                    sign_flipped: sign(f.average_post_gap) != sign(baseline.average_post_gap),
                    pre_fit_degraded: f.pre_mspe > options.degradation_multiple * baseline.pre_mspe,
                    fit: Some(f),
                    error: None,
                },
                Err(e) => LooEntry {
                    excluded_donor: donor.clone(),
                    baseline_weight: *weight,
                    fit: None,
                    average_post_gap: None,
                    sign_flipped: false,
                    pre_fit_degraded: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(LooReport {
        baseline_average_gap: baseline.average_post_gap,
        baseline_pre_mspe: baseline.pre_mspe,
        options: options.clone(),
        entries,
    })
}
