//! Long CSV ingestion into weekly panels plus the variable transforms.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::panel::{validate_panel, PanelDataset, RawPanel, WeekRange};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-9;
const WALLET_BASE: f64 = 100.0;

/// One row of the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongObservation {
    pub unit: String,
    pub date: NaiveDate,
    pub variable: String,
    pub value: f64,
}

/// How daily observations inside one week are collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Latest observation by date; later rows win on equal dates.
    Last,
}

const HEADER: [&str; 4] = ["unit", "date", "variable", "value"];

/// Reads `unit,date,variable,value` rows. Line numbers in errors are 1-based
/// and count the header.
pub fn load_long_csv<R: Read>(source: R) -> Result<Vec<LongObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(ScmError::Parse {
                line: 1,
                column: "header".into(),
                reason: e.to_string(),
            })
        }
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(ScmError::EmptyInput);
    }
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(ScmError::Parse {
            line: 1,
            column: "header".into(),
            reason: format!(
                "expected header `{}`, found `{}`",
                HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ScmError::Parse {
                line,
                column: "-".into(),
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let unit = field(0);
        if unit.is_empty() {
            return Err(ScmError::Parse {
                line,
                column: "unit".into(),
                reason: "empty unit identifier".into(),
            });
        }
        let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d").map_err(|e| ScmError::Parse {
            line,
            column: "date".into(),
            reason: format!("invalid date `{}`: {e}", field(1)),
        })?;
        let variable = field(2);
        if variable.is_empty() {
            return Err(ScmError::Parse {
                line,
                column: "variable".into(),
                reason: "empty variable name".into(),
            });
        }
        let value: f64 = field(3).parse().map_err(|_| ScmError::Parse {
            line,
            column: "value".into(),
            reason: format!("invalid number `{}`", field(3)),
        })?;
        if !value.is_finite() {
            return Err(ScmError::Parse {
                line,
                column: "value".into(),
                reason: format!("non-finite number `{}`", field(3)),
            });
        }
        out.push(LongObservation {
            unit: unit.to_string(),
            date,
            variable: variable.to_string(),
            value,
        });
    }
    if out.is_empty() {
        return Err(ScmError::EmptyInput);
    }
    Ok(out)
}

/// First day of the week containing `date`, for weeks starting on `anchor`.
pub fn week_start(date: NaiveDate, anchor: Weekday) -> NaiveDate {
    let offset = (date.weekday().num_days_from_monday() + 7 - anchor.num_days_from_monday()) % 7;
    date - Duration::days(offset as i64)
}

/// Buckets observations into weeks and validates the resulting panel.
///
/// Units and variables keep their first-appearance order. The week axis spans
/// every week between the earliest and latest observation, so an empty bucket
/// surfaces as a `MissingValue`.
pub fn to_weekly(
    observations: &[LongObservation],
    anchor: Weekday,
    aggregation: Aggregation,
) -> Result<PanelDataset> {
    if observations.is_empty() {
        return Err(ScmError::EmptyInput);
    }
    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<&str, usize> = HashMap::new();
    let mut variables: Vec<String> = Vec::new();
    let mut var_pos: HashMap<&str, usize> = HashMap::new();
    for o in observations {
        if !unit_pos.contains_key(o.unit.as_str()) {
            unit_pos.insert(&o.unit, units.len());
            units.push(o.unit.clone());
        }
        if !var_pos.contains_key(o.variable.as_str()) {
            var_pos.insert(&o.variable, variables.len());
            variables.push(o.variable.clone());
        }
    }
    let first = observations.iter().map(|o| o.date).min().expect("nonempty");
    let last = observations.iter().map(|o| o.date).max().expect("nonempty");
    let first_week = week_start(first, anchor);
    let n_weeks = ((week_start(last, anchor) - first_week).num_days() / 7 + 1) as usize;
    let week_index: Vec<NaiveDate> = (0..n_weeks)
        .map(|i| first_week + Duration::days(7 * i as i64))
        .collect();

    // (var, unit, week) -> (sum, count) or (date, value)
    let mut sums: BTreeMap<(usize, usize, usize), (f64, usize)> = BTreeMap::new();
    let mut lasts: BTreeMap<(usize, usize, usize), (NaiveDate, f64)> = BTreeMap::new();
    for o in observations {
        let w = ((week_start(o.date, anchor) - first_week).num_days() / 7) as usize;
        let key = (var_pos[o.variable.as_str()], unit_pos[o.unit.as_str()], w);
        match aggregation {
            Aggregation::Mean => {
                let e = sums.entry(key).or_insert((0.0, 0));
                e.0 += o.value;
                e.1 += 1;
            }
            Aggregation::Last => {
                let e = lasts.entry(key).or_insert((o.date, o.value));
                if o.date >= e.0 {
                    *e = (o.date, o.value);
                }
            }
        }
    }

    let (nv, nu) = (variables.len(), units.len());
    let mut values = vec![None; nv * nu * n_weeks];
    match aggregation {
        Aggregation::Mean => {
            for ((v, u, w), (s, c)) in sums {
                values[(v * nu + u) * n_weeks + w] = Some(s / c as f64);
            }
        }
        Aggregation::Last => {
            for ((v, u, w), (_, x)) in lasts {
                values[(v * nu + u) * n_weeks + w] = Some(x);
            }
        }
    }
    validate_panel(RawPanel {
        unit_ids: units,
        week_index,
        variables,
        values,
    })
}

/// Value of a 100-currency-unit position bought at `baseline_week`.
pub fn wallet_value(prices: &[f64], baseline_week: usize) -> Result<Vec<f64>> {
    let base = *prices
        .get(baseline_week)
        .ok_or_else(|| ScmError::InvalidParameter(format!("baseline week {baseline_week} out of range")))?;
    if !(base > 0.0) {
        return Err(ScmError::NonPositiveBaselinePrice {
            week: baseline_week,
            price: base,
        });
    }
    if let Some(&neg) = prices.iter().find(|p| **p < 0.0) {
        return Err(ScmError::NegativeValue(neg));
    }
    // Ratio form keeps the baseline exactly 100 and is scale-free.
    Ok(prices.iter().map(|p| WALLET_BASE * (p / base)).collect())
}

/// Divides by the series maximum so values lie in `[0, 1]`.
pub fn normalize_max(series: &[f64]) -> Result<Vec<f64>> {
    if let Some(&neg) = series.iter().find(|x| **x < 0.0) {
        return Err(ScmError::NegativeValue(neg));
    }
    let max = series.iter().copied().fold(0.0_f64, f64::max);
    if !(max > 0.0) {
        return Err(ScmError::NonPositiveMaximum(max));
    }
    Ok(series.iter().map(|x| x / max).collect())
}

/// Natural log with values below `floor` clamped to it.
pub fn log_transform(series: &[f64], floor: f64) -> Result<Vec<f64>> {
    if !(floor > 0.0) {
        return Err(ScmError::InvalidParameter(format!("log floor {floor} must be positive")));
    }
    Ok(series.iter().map(|x| x.max(floor).ln()).collect())
}

/// Pearson correlation, `None` when either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPredictor {
    pub variable: String,
    pub correlated_with: String,
    pub correlation: f64,
}

/// Outcome of correlation screening.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub kept: Vec<String>,
    pub excluded: Vec<ExcludedPredictor>,
    /// Candidates with zero variance over the window.
    pub constant: Vec<String>,
}

/// Greedy forward screen over `candidates` in the given order.
///
/// A candidate survives iff its absolute Pearson correlation with every
/// previously kept candidate is at most `threshold`, measured on the treated
/// unit's pre-window series.
pub fn screen_predictors(
    panel: &PanelDataset,
    candidates: &[String],
    threshold: f64,
    treated: &str,
    pre_window: WeekRange,
) -> Result<ScreeningReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ScmError::InvalidParameter(format!(
            "screening threshold {threshold} outside (0, 1]"
        )));
    }
    if pre_window.is_empty() || pre_window.end >= panel.n_weeks() {
        return Err(ScmError::InvalidWindow("screening window outside panel".into()));
    }
    let mut report = ScreeningReport::default();
    let mut kept_series: Vec<&[f64]> = Vec::new();
    for name in candidates {
        let full = panel.series(name, treated)?;
        let s = &full[pre_window.start..=pre_window.end];
        if pearson(s, s).is_none() {
            log::warn!("predictor `{name}` is constant over the screening window; dropped");
            report.constant.push(name.clone());
            continue;
        }
        let conflict = report
            .kept
            .iter()
            .zip(&kept_series)
            .filter_map(|(k, ks)| pearson(s, ks).map(|r| (k, r)))
            .find(|(_, r)| r.abs() > threshold);
        match conflict {
            Some((k, r)) => report.excluded.push(ExcludedPredictor {
                variable: name.clone(),
                correlated_with: k.clone(),
                correlation: r,
            }),
            None => {
                report.kept.push(name.clone());
                kept_series.push(s);
            }
        }
    }
    Ok(report)
}
