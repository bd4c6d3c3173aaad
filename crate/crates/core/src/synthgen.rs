//! Seeded linear factor-model panels with a known treatment effect.
//!
//! Donor loadings are drawn uniformly; the treated unit's loadings are an
//! exact convex combination of three donors, so a perfect synthetic control
//! exists in the noise-free part. Outcomes are
//! `price_jt = 100 * (1 + sum_f loading_jf * factor_ft) + noise + effect`,
//! with the effect added to the treated unit from the treatment week on.
//! Covariates `cov_f` observe the loadings with small noise.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::ingest::LongObservation;

pub const OUTCOME_SCALE: f64 = 100.0;
pub const OUTCOME_VARIABLE: &str = "price";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub units: usize,
    pub weeks: usize,
    pub factors: usize,
    /// Additive effect on the treated outcome from the treatment week on.
    pub effect: f64,
    /// Noise standard deviation as a fraction of the outcome scale (100).
    pub noise: f64,
    /// Position of the first treated week; defaults to three quarters in.
    pub treatment_week: Option<usize>,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            units: 12,
            weeks: 60,
            factors: 3,
            effect: 0.0,
            noise: 0.02,
            treatment_week: None,
            start: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub treated: String,
    pub donors: Vec<String>,
    pub treatment_week: usize,
    pub treatment_date: NaiveDate,
    pub effect: f64,
    pub noise_sd: f64,
    /// Donor weights reproducing the treated unit's noise-free path.
    pub weights: Vec<(String, f64)>,
    pub covariates: Vec<String>,
    pub outcome: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPanel {
    pub observations: Vec<LongObservation>,
    pub truth: GroundTruth,
}

pub fn unit_name(i: usize) -> String {
    format!("U{i:02}")
}

pub fn generate(params: &SynthParams) -> Result<SynthPanel> {
    if params.units < 3 {
        return Err(ScmError::InvalidParameter(format!("units must be >= 3, got {}", params.units)));
    }
    if params.weeks < 10 {
        return Err(ScmError::InvalidParameter(format!("weeks must be >= 10, got {}", params.weeks)));
    }
    if params.factors < 1 {
        return Err(ScmError::InvalidParameter("factors must be >= 1".into()));
    }
    if !(params.noise >= 0.0) || !params.effect.is_finite() {
        return Err(ScmError::InvalidParameter("noise must be >= 0 and effect finite".into()));
    }
    let t0 = params.treatment_week.unwrap_or(params.weeks * 3 / 4);
    if t0 < 2 || t0 >= params.weeks {
        return Err(ScmError::InvalidParameter(format!(
            "treatment week {t0} must leave >= 2 pre weeks and >= 1 post week"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (n, t_len, f_len) = (params.units, params.weeks, params.factors);

    let factors: Vec<Vec<f64>> = (0..f_len)
        .map(|_| {
            let amp = rng.gen_range(0.1..0.4);
            let period = rng.gen_range(15.0..40.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let drift = rng.gen_range(-0.3..0.5);
            (0..t_len)
                .map(|t| {
                    let t = t as f64;
                    amp * ((std::f64::consts::TAU * t / period + phase).sin() - phase.sin())
                        + drift * t / t_len as f64
                })
                .collect()
        })
        .collect();

    let mut loadings: Vec<Vec<f64>> = vec![Vec::new(); n];
    for l in loadings.iter_mut().skip(1) {
        *l = (0..f_len).map(|_| rng.gen_range(0.0..1.0) / f_len as f64).collect();
    }
    let mut pool: Vec<usize> = (1..n).collect();
    pool.shuffle(&mut rng);
    let members: Vec<usize> = pool.into_iter().take(3.min(n - 1)).collect();
    let draws: Vec<f64> = members.iter().map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut true_w = vec![0.0; n];
    for (m, d) in members.iter().zip(&draws) {
        true_w[*m] = d / total;
    }
    loadings[0] = (0..f_len)
        .map(|f| (1..n).map(|j| true_w[j] * loadings[j][f]).sum())
        .collect();

    let noise_sd = params.noise * OUTCOME_SCALE;
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("valid sd");
    let cov_noise = Normal::new(0.0, 0.01 / f_len as f64).expect("valid sd");
    let weeks: Vec<NaiveDate> = (0..t_len)
        .map(|i| params.start + Duration::days(7 * i as i64))
        .collect();
    let covariates: Vec<String> = (0..f_len).map(|f| format!("cov_{}", f + 1)).collect();

    let mut observations = Vec::with_capacity(n * t_len * (1 + f_len));
    for (j, load) in loadings.iter().enumerate() {
        for (t, week) in weeks.iter().enumerate() {
            let signal: f64 = (0..f_len).map(|f| load[f] * factors[f][t]).sum();
            let mut y = OUTCOME_SCALE * (1.0 + signal);
            if noise_sd > 0.0 {
                y += noise.sample(&mut rng);
            }
            if j == 0 && t >= t0 {
                y += params.effect;
            }
            observations.push(LongObservation {
                unit: unit_name(j),
                date: *week,
                variable: OUTCOME_VARIABLE.into(),
                value: y,
            });
            for (f, name) in covariates.iter().enumerate() {
                observations.push(LongObservation {
                    unit: unit_name(j),
                    date: *week,
                    variable: name.clone(),
                    value: load[f] + cov_noise.sample(&mut rng),
                });
            }
        }
    }

    let truth = GroundTruth {
        treated: unit_name(0),
        donors: (1..n).map(unit_name).collect(),
        treatment_week: t0,
        treatment_date: weeks[t0],
        effect: params.effect,
        noise_sd,
        weights: (1..n)
            .filter(|j| true_w[*j] > 0.0)
            .map(|j| (unit_name(j), true_w[j]))
            .collect(),
        covariates,
        outcome: OUTCOME_VARIABLE.into(),
        seed: params.seed,
    };
    Ok(SynthPanel {
        observations,
        truth,
    })
}

/// Writes observations in the `unit,date,variable,value` format.
pub fn write_long_csv<W: Write>(out: W, observations: &[LongObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "date", "variable", "value"])?;
    for o in observations {
        w.write_record([
            o.unit.as_str(),
            &o.date.format("%Y-%m-%d").to_string(),
            o.variable.as_str(),
            &o.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let p = SynthParams {
            seed: 9,
            effect: 25.0,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_long_csv(&mut a, &generate(&p).unwrap().observations).unwrap();
        write_long_csv(&mut b, &generate(&p).unwrap().observations).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_long_csv(&mut c, &generate(&SynthParams { seed: 10, ..p }).unwrap().observations).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truth_weights_on_simplex() {
        let g = generate(&SynthParams::default()).unwrap();
        let s: f64 = g.truth.weights.iter().map(|(_, w)| w).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(g.truth.treatment_week, 45);
    }

    #[test]
    fn noiseless_treated_is_convex_combination_pre_treatment() {
        let g = generate(&SynthParams {
            noise: 0.0,
            effect: 10.0,
            ..Default::default()
        })
        .unwrap();
        let price = |u: &str, t: usize| {
            g.observations
                .iter()
                .filter(|o| o.unit == u && o.variable == OUTCOME_VARIABLE)
                .nth(t)
                .unwrap()
                .value
        };
        for t in [0, 20, 44, 50] {
            let synth: f64 = g.truth.weights.iter().map(|(u, w)| w * price(u, t)).sum();
            let expected = if t >= 45 { 10.0 } else { 0.0 };
            assert!((price("U00", t) - synth - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_small_dimensions() {
        assert!(generate(&SynthParams {
            units: 2,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&SynthParams {
            weeks: 9,
            ..Default::default()
        })
        .is_err());
    }
}
