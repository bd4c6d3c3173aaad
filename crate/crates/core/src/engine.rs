//! Synthetic control fitting.
//!
//! Donor weights `W` minimize the predictor discrepancy
//! `sum_m v_m (X1_m - (X0 W)_m)^2` over the donor simplex for fixed predictor
//! weights `V`; `V` itself is chosen over the predictor simplex to minimize
//! the pre-treatment outcome MSPE `||Z1 - Z0 W(V)||^2 / T_pre`.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::panel::{validate_spec, DonorWeights, PanelDataset, PredictorWeights, StudySpec, WeekRange};
use crate::solver::simplex_least_squares;

/// Pre-treatment predictor and outcome blocks for one study.
///
/// Column `j` of `x0` and `z0` belongs to `donors[j]`; row `m` of `x1`/`x0`
/// to `predictors[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmMatrices {
    pub donors: Vec<String>,
    pub predictors: Vec<String>,
    pub x1: DVector<f64>,
    pub x0: DMatrix<f64>,
    pub z1: DVector<f64>,
    pub z0: DMatrix<f64>,
}

impl ScmMatrices {
    pub fn new(
        donors: Vec<String>,
        predictors: Vec<String>,
        x1: DVector<f64>,
        x0: DMatrix<f64>,
        z1: DVector<f64>,
        z0: DMatrix<f64>,
    ) -> Result<Self> {
        let (k, j, t) = (predictors.len(), donors.len(), z1.len());
        if x1.len() != k || x0.nrows() != k {
            return Err(ScmError::LengthMismatch {
                left: x0.nrows(),
                right: k,
            });
        }
        if x0.ncols() != j || z0.ncols() != j {
            return Err(ScmError::LengthMismatch {
                left: x0.ncols(),
                right: j,
            });
        }
        if z0.nrows() != t {
            return Err(ScmError::LengthMismatch {
                left: z0.nrows(),
                right: t,
            });
        }
        Ok(ScmMatrices {
            donors,
            predictors,
            x1,
            x0,
            z1,
            z0,
        })
    }

    pub fn n_donors(&self) -> usize {
        self.donors.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.len()
    }

    /// Per-predictor sample standard deviation across all units (treated and
    /// donors). Zero-spread rows get scale 1.
    pub fn predictor_scales(&self) -> Vec<f64> {
        (0..self.n_predictors())
            .map(|m| {
                let row: Vec<f64> = std::iter::once(self.x1[m])
                    .chain(self.x0.row(m).iter().copied())
                    .collect();
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let sd = var.sqrt();
                if sd > 1e-12 * (1.0 + mean.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Copy with each predictor row divided by its scale.
    pub fn standardized(&self) -> ScmMatrices {
        let scales = self.predictor_scales();
        let mut out = self.clone();
        for (m, s) in scales.iter().enumerate() {
            out.x1[m] /= s;
            for v in out.x0.row_mut(m).iter_mut() {
                *v /= s;
            }
        }
        out
    }

    /// Copy without donor column `j`.
    pub fn without_donor(&self, j: usize) -> ScmMatrices {
        let mut donors = self.donors.clone();
        donors.remove(j);
        ScmMatrices {
            donors,
            predictors: self.predictors.clone(),
            x1: self.x1.clone(),
            x0: self.x0.clone().remove_column(j),
            z1: self.z1.clone(),
            z0: self.z0.clone().remove_column(j),
        }
    }
}

fn pre_window_mean(series: &[f64], window: WeekRange) -> f64 {
    let s = &series[window.start..=window.end];
    s.iter().sum::<f64>() / s.len() as f64
}

/// Assembles `X1, X0` (pre-window predictor means) and `Z1, Z0` (raw
/// pre-window outcomes).
pub fn build_matrices(panel: &PanelDataset, spec: &StudySpec) -> Result<ScmMatrices> {
    let spec = validate_spec(spec.clone(), panel)?;
    let pre = spec.pre_window;
    let treated = panel.unit_position(&spec.treated_unit).expect("validated");
    let donors: Vec<usize> = spec
        .donor_units
        .iter()
        .map(|d| panel.unit_position(d).expect("validated"))
        .collect();
    let preds: Vec<usize> = spec
        .predictor_variables
        .iter()
        .map(|p| panel.variable_position(p).expect("validated"))
        .collect();
    let outcome = panel.variable_position(&spec.outcome_variable).expect("validated");

    let (k, j, t) = (preds.len(), donors.len(), pre.len());
    let x1 = DVector::from_fn(k, |m, _| pre_window_mean(panel.series_at(preds[m], treated), pre));
    let x0 = DMatrix::from_fn(k, j, |m, c| pre_window_mean(panel.series_at(preds[m], donors[c]), pre));
    let z1 = DVector::from_fn(t, |i, _| panel.value(outcome, treated, pre.start + i));
    let z0 = DMatrix::from_fn(t, j, |i, c| panel.value(outcome, donors[c], pre.start + i));
    ScmMatrices::new(
        spec.donor_units.clone(),
        spec.predictor_variables.clone(),
        x1,
        x0,
        z1,
        z0,
    )
}

/// Donor weights for fixed predictor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerFit {
    pub weights: DonorWeights,
    /// `sum_m v_m (X1_m - (X0 W)_m)^2` at the optimum.
    pub objective: f64,
    pub degenerate: bool,
}

fn check_v(m: &ScmMatrices, v: &PredictorWeights) -> Result<()> {
    if v.len() != m.n_predictors() {
        return Err(ScmError::LengthMismatch {
            left: v.len(),
            right: m.n_predictors(),
        });
    }
    if v.labels() != m.predictors.as_slice() {
        return Err(ScmError::InvalidParameter(
            "predictor weight labels do not match matrix rows".into(),
        ));
    }
    Ok(())
}

/// `sum_m v_m (X1_m - (X0 w)_m)^2`.
pub fn predictor_objective(m: &ScmMatrices, v: &[f64], w: &[f64]) -> f64 {
    let fitted = &m.x0 * DVector::from_column_slice(w);
    (0..m.n_predictors())
        .map(|i| v[i] * (m.x1[i] - fitted[i]).powi(2))
        .sum()
}

/// `||Z1 - Z0 w||^2 / T_pre`.
pub fn outcome_mspe(m: &ScmMatrices, w: &[f64]) -> f64 {
    let r = &m.z1 - &m.z0 * DVector::from_column_slice(w);
    r.norm_squared() / m.z1.len().max(1) as f64
}

fn solve_w_raw(m: &ScmMatrices, v: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
    if m.n_donors() < 2 {
        return Err(ScmError::TooFewDonors(m.n_donors()));
    }
    if m.n_predictors() == 0 {
        return Err(ScmError::NoPredictors);
    }
    let root: Vec<f64> = v.iter().map(|x| x.max(0.0).sqrt()).collect();
    let a = DMatrix::from_fn(m.n_predictors(), m.n_donors(), |i, j| root[i] * m.x0[(i, j)]);
    let b = DVector::from_fn(m.n_predictors(), |i, _| root[i] * m.x1[i]);
    let sol = simplex_least_squares(&a, &b)?;
    let sum: f64 = sol.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || sol.weights.iter().any(|w| *w < 0.0) {
        return Err(ScmError::OptimizerFailure(format!(
            "donor weights off the simplex (sum {sum})"
        )));
    }
    Ok((sol.weights, sol.objective, sol.degenerate))
}

/// Donor weights minimizing the `v`-weighted predictor discrepancy.
pub fn solve_w(m: &ScmMatrices, v: &PredictorWeights) -> Result<InnerFit> {
    check_v(m, v)?;
    let (w, objective, degenerate) = solve_w_raw(m, v.values())?;
    Ok(InnerFit {
        weights: DonorWeights::new(m.donors.clone(), w)?,
        objective,
        degenerate,
    })
}

/// Settings for the predictor-weight search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterOptions {
    /// Random Dirichlet(1) starting points, in addition to the vertices, the
    /// centroid and (for up to three predictors) a lattice of step 1/20.
    pub starts: usize,
    /// How many of the best starting points are refined by Nelder-Mead.
    pub refine: usize,
    pub seed: u64,
    /// Evaluation budget per refinement.
    pub max_evals: usize,
}

impl Default for OuterOptions {
    fn default() -> Self {
        OuterOptions {
            starts: 24,
            refine: 5,
            seed: 0,
            max_evals: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterFit {
    pub predictor_weights: PredictorWeights,
    pub inner: InnerFit,
    pub pre_mspe: f64,
    pub evaluations: usize,
}

fn simplex_lattice(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k - 1 {
            cur.push(left as f64 / steps as f64);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for i in 0..=left {
            cur.push(i as f64 / steps as f64);
            rec(k, left - i, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, steps, steps, &mut Vec::new(), &mut out);
    out
}

fn squares_to_simplex(y: &[f64]) -> Option<Vec<f64>> {
    let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
    let s: f64 = sq.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    Some(sq.iter().map(|v| v / s).collect())
}

/// Nested search: `V` over the predictor simplex minimizing the pre-treatment
/// outcome MSPE of `W(V)`.
///
/// Candidates (vertices, centroid, lattice for `k <= 3`, seeded Dirichlet
/// draws) are scored in parallel; the best `refine` are polished by
/// Nelder-Mead on `v = y^2 / |y|^2`, which reaches the simplex boundary.
/// Ties keep the earliest candidate, so the result does not depend on thread
/// count.
pub fn optimize_v(m: &ScmMatrices, opts: &OuterOptions) -> Result<OuterFit> {
    let k = m.n_predictors();
    if k == 0 {
        return Err(ScmError::NoPredictors);
    }
    if m.z1.len() < 2 {
        return Err(ScmError::InsufficientPreWindow { weeks: m.z1.len(), min: 2 });
    }
    let loss = |v: &[f64]| -> f64 {
        match solve_w_raw(m, v) {
            Ok((w, _, _)) => outcome_mspe(m, &w),
            Err(_) => f64::INFINITY,
        }
    };

    let (best_v, evaluations) = if k == 1 {
        (vec![1.0], 1)
    } else {
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        for i in 0..k {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            candidates.push(e);
        }
        candidates.push(vec![1.0 / k as f64; k]);
        if k <= 3 {
            candidates.extend(simplex_lattice(k, 20));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.starts {
            let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
            let s: f64 = draws.iter().sum();
            candidates.push(draws.iter().map(|d| d / s).collect());
        }

        let scored: Vec<f64> = candidates.par_iter().map(|v| loss(v)).collect();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| scored[a].total_cmp(&scored[b]).then(a.cmp(&b)));
        let mut evaluations = candidates.len();

        let nm_opts = NelderMeadOptions {
            max_evals: opts.max_evals,
            f_tol: 1e-16,
            x_tol: 1e-10,
            initial_step: 0.25,
        };
        let refined: Vec<(Vec<f64>, f64, usize)> = order
            .iter()
            .take(opts.refine.max(1))
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&&i| {
                let y0: Vec<f64> = candidates[i].iter().map(|v| v.sqrt()).collect();
                let r = nelder_mead::minimize(
                    |y| squares_to_simplex(y).map_or(f64::INFINITY, |v| loss(&v)),
                    &y0,
                    nm_opts,
                );
                let v = squares_to_simplex(&r.x).unwrap_or_else(|| candidates[i].clone());
                let f = loss(&v);
                (v, f, r.evals)
            })
            .collect();

        let mut best = (candidates[order[0]].clone(), scored[order[0]]);
        for (v, f, e) in refined {
            evaluations += e;
            if f < best.1 {
                best = (v, f);
            }
        }
        if !best.1.is_finite() {
            return Err(ScmError::OptimizerFailure(
                "no predictor weighting produced a feasible donor fit".into(),
            ));
        }
        (best.0, evaluations)
    };

    let predictor_weights = PredictorWeights::normalized(m.predictors.clone(), &best_v)?;
    let inner = solve_w(m, &predictor_weights)?;
    let pre_mspe = outcome_mspe(m, inner.weights.values());
    Ok(OuterFit {
        predictor_weights,
        inner,
        pre_mspe,
        evaluations,
    })
}

/// `sum_j w_j * outcome_j[t]` over the full panel horizon.
pub fn synthesize(panel: &PanelDataset, spec: &StudySpec, w: &DonorWeights) -> Result<Vec<f64>> {
    let outcome = panel
        .variable_position(&spec.outcome_variable)
        .ok_or_else(|| ScmError::UnknownVariable(spec.outcome_variable.clone()))?;
    let mut out = vec![0.0; panel.n_weeks()];
    for (donor, weight) in w.iter() {
        let u = panel
            .unit_position(donor)
            .ok_or_else(|| ScmError::UnknownUnit(donor.to_string()))?;
        for (o, y) in out.iter_mut().zip(panel.series_at(outcome, u)) {
            *o += weight * y;
        }
    }
    Ok(out)
}

pub fn gap_series(treated: &[f64], synthetic: &[f64]) -> Result<Vec<f64>> {
    if treated.len() != synthetic.len() {
        return Err(ScmError::LengthMismatch {
            left: treated.len(),
            right: synthetic.len(),
        });
    }
    Ok(treated.iter().zip(synthetic).map(|(t, s)| t - s).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub average_post_gap: f64,
    pub pre_mspe: f64,
    pub post_mspe: f64,
}

fn window_slice<'a>(gap: &'a [f64], w: WeekRange, name: &'static str) -> Result<&'a [f64]> {
    if w.is_empty() {
        return Err(ScmError::EmptyWindow(name));
    }
    if w.end >= gap.len() {
        return Err(ScmError::InvalidWindow(format!(
            "{name} window ends at week {} beyond a {}-week series",
            w.end,
            gap.len()
        )));
    }
    Ok(&gap[w.start..=w.end])
}

/// Mean squared value of `gap` over `window`.
pub fn window_mspe(gap: &[f64], window: WeekRange) -> Result<f64> {
    let s = window_slice(gap, window, "mspe")?;
    Ok(s.iter().map(|g| g * g).sum::<f64>() / s.len() as f64)
}

pub fn effect_summary(gap: &[f64], spec: &StudySpec) -> Result<EffectSummary> {
    let pre = window_slice(gap, spec.pre_window, "pre")?;
    let post = window_slice(gap, spec.post_window, "post")?;
    let mean_sq = |s: &[f64]| s.iter().map(|g| g * g).sum::<f64>() / s.len() as f64;
    Ok(EffectSummary {
        average_post_gap: post.iter().sum::<f64>() / post.len() as f64,
        pre_mspe: mean_sq(pre),
        post_mspe: mean_sq(post),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub predictor: String,
    pub treated: f64,
    pub synthetic: f64,
    pub sample_mean: f64,
    /// `|treated - sample_mean| - |treated - synthetic|`; positive when the
    /// synthetic unit is closer than the plain donor average.
    pub improvement: f64,
}

impl BalanceRow {
    pub fn new(predictor: impl Into<String>, treated: f64, synthetic: f64, sample_mean: f64) -> Self {
        BalanceRow {
            predictor: predictor.into(),
            treated,
            synthetic,
            sample_mean,
            improvement: (treated - sample_mean).abs() - (treated - synthetic).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
}

pub fn balance_table(m: &ScmMatrices, w: &DonorWeights) -> Result<BalanceTable> {
    if w.labels() != m.donors.as_slice() {
        return Err(ScmError::InvalidParameter(
            "donor weight labels do not match matrix columns".into(),
        ));
    }
    let synth = &m.x0 * DVector::from_column_slice(w.values());
    let rows = (0..m.n_predictors())
        .map(|i| {
            let mean = m.x0.row(i).iter().sum::<f64>() / m.n_donors() as f64;
            BalanceRow::new(m.predictors[i].clone(), m.x1[i], synth[i], mean)
        })
        .collect();
    Ok(BalanceTable { rows })
}

/// How predictor weights are obtained for a fit.
#[derive(Debug, Clone, PartialEq)]
pub enum VSearch {
    Optimize(OuterOptions),
    /// Use these weights as given (labels must match the predictors).
    Fixed(PredictorWeights),
}

impl Default for VSearch {
    fn default() -> Self {
        VSearch::Optimize(OuterOptions::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// The donor-weight optimum may not be unique.
    pub degenerate: bool,
    pub predictor_objective: f64,
    pub evaluations: usize,
    /// Divisors applied to each predictor row before optimization.
    pub predictor_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: StudySpec,
    pub weeks: Vec<NaiveDate>,
    pub donor_weights: DonorWeights,
    pub predictor_weights: PredictorWeights,
    pub treated_outcome: Vec<f64>,
    pub synthetic_outcome: Vec<f64>,
    pub gap: Vec<f64>,
    pub pre_mspe: f64,
    pub post_mspe: f64,
    pub average_post_gap: f64,
    pub balance: BalanceTable,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    /// Post/pre MSPE ratio, see [`crate::inference::mspe_ratio`].
    pub fn mspe_ratio(&self) -> Result<f64> {
        crate::inference::mspe_ratio(self)
    }
}

/// Full fit. Weights are estimated on standardized predictors; the balance
/// table reports raw values.
pub fn fit(panel: &PanelDataset, spec: &StudySpec, search: &VSearch) -> Result<FitResult> {
    let spec = validate_spec(spec.clone(), panel)?;
    let raw = build_matrices(panel, &spec)?;
    let scales = raw.predictor_scales();
    let std = raw.standardized();
    let (predictor_weights, inner, evaluations) = match search {
        VSearch::Optimize(opts) => {
            let o = optimize_v(&std, opts)?;
            (o.predictor_weights, o.inner, o.evaluations)
        }
        VSearch::Fixed(v) => {
            let inner = solve_w(&std, v)?;
            (v.clone(), inner, 0)
        }
    };
    let synthetic = synthesize(panel, &spec, &inner.weights)?;
    let treated = panel.series(&spec.outcome_variable, &spec.treated_unit)?.to_vec();
    let gap = gap_series(&treated, &synthetic)?;
    let effect = effect_summary(&gap, &spec)?;
    let balance = balance_table(&raw, &inner.weights)?;
    Ok(FitResult {
        weeks: panel.week_index().to_vec(),
        donor_weights: inner.weights,
        predictor_weights,
        treated_outcome: treated,
        synthetic_outcome: synthetic,
        gap,
        pre_mspe: effect.pre_mspe,
        post_mspe: effect.post_mspe,
        average_post_gap: effect.average_post_gap,
        balance,
        diagnostics: FitDiagnostics {
            degenerate: inner.degenerate,
            predictor_objective: inner.objective,
            evaluations,
            predictor_scales: scales,
        },
        spec,
    })
}
