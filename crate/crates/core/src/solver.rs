//! Least squares over the probability simplex.
//!
//! Solves `min ||A w - b||²` subject to `w >= 0`, `sum(w) = 1` with an
//! active-set method in the style of Lawson-Hanson NNLS: variables enter the
//! support one at a time by most negative reduced cost, and each equality
//! constrained subproblem is solved by SVD in a basis of the simplex tangent
//! space. Rank-deficient subproblems get the minimum-norm step, so the method
//! also handles `k < J` (more donors than predictors).

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ScmError};

/// Solution of a simplex-constrained least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    /// `||A w - b||²` at `weights`.
    pub objective: f64,
    /// The optimum may not be unique (flat directions exist at the solution).
    pub degenerate: bool,
    pub iterations: usize,
}

/// Active-set solve of `min ||A w - b||²` over the simplex.
pub fn simplex_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<SimplexSolution> {
    let n = a.ncols();
    if n == 0 {
        return Err(ScmError::InvalidParameter("no columns to weight".into()));
    }
    if a.nrows() != b.len() {
        return Err(ScmError::LengthMismatch {
            left: a.nrows(),
            right: b.len(),
        });
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(ScmError::OptimizerFailure("non-finite problem data".into()));
    }

    let scale = 1.0 + a.norm_squared() + a.norm() * b.norm();
    let kkt_tol = 1e-12 * scale;
    let max_iter = 10 * n + 100;

    // Start at the best vertex; ties go to the lowest index.
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for j in 0..n {
        let v = (a.column(j) - b).norm_squared();
        if v < best_val {
            best = j;
            best_val = v;
        }
    }
    let mut w = DVector::zeros(n);
    w[best] = 1.0;
    let mut support = vec![best];
    // Columns whose entry was immediately undone; cleared on any real progress.
    let mut skipped: Vec<usize> = Vec::new();
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(ScmError::OptimizerFailure(format!(
                "active set did not converge in {max_iter} iterations"
            )));
        }
        let grad = a.tr_mul(&(a * &w - b));
        let mu = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
        let entering = (0..n)
            .filter(|j| !support.contains(j) && !skipped.contains(j))
            .map(|j| (j, grad[j] - mu))
            .filter(|(_, rc)| *rc < -kkt_tol)
            .min_by(|x, y| x.1.total_cmp(&y.1));
        let Some((j, _)) = entering else { break };

        let before = support.clone();
        support.push(j);
        support.sort_unstable();

        let mut first_step = true;
        let mut rejected = false;
        loop {
            let z = subproblem(a, b, &w, &support);
            let blocking: Vec<usize> = support.iter().copied().filter(|&i| z[i] <= 0.0).collect();
            if blocking.is_empty() {
                w = z;
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&i| w[i] / (w[i] - z[i]))
                .fold(1.0_f64, f64::min)
                .clamp(0.0, 1.0);
            w += (z - &w) * alpha;
            for &i in &blocking {
                if w[i] <= 1e-15 {
                    w[i] = 0.0;
                }
            }
            support.retain(|&i| w[i] > 0.0);
            if support.is_empty() {
                return Err(ScmError::OptimizerFailure("active set emptied".into()));
            }
            if first_step && support == before {
                rejected = true;
                break;
            }
            first_step = false;
        }
        if rejected {
            skipped.push(j);
        } else {
            skipped.clear();
        }
    }

    let mut weights: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(ScmError::OptimizerFailure("degenerate weight vector".into()));
    }
    weights.iter_mut().for_each(|x| *x /= sum);
    let wv = DVector::from_column_slice(&weights);
    let residual = a * &wv - b;
    let objective = residual.norm_squared();
    if !objective.is_finite() {
        return Err(ScmError::OptimizerFailure("non-finite objective".into()));
    }
    let degenerate = is_degenerate(a, b, &wv, &support, kkt_tol);
    Ok(SimplexSolution {
        weights,
        objective,
        degenerate,
        iterations,
    })
}

/// Columns `a_i - a_last` for `i` in the support except the last.
fn tangent_matrix(a: &DMatrix<f64>, support: &[usize]) -> DMatrix<f64> {
    let last = *support.last().expect("nonempty support");
    let mut m = DMatrix::zeros(a.nrows(), support.len() - 1);
    for (c, &i) in support[..support.len() - 1].iter().enumerate() {
        m.set_column(c, &(a.column(i) - a.column(last)));
    }
    m
}

/// Minimizer over the affine hull of `support`, nearest to `w` when not unique.
fn subproblem(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    let mut z = w.clone();
    if support.len() == 1 {
        z.fill(0.0);
        z[support[0]] = 1.0;
        return z;
    }
    let m = tangent_matrix(a, support);
    let r = a * w - b;
    let dim = m.nrows().max(m.ncols()) as f64;
    let svd = m.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * dim;
    let y = svd
        .solve(&(-r), tol.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(support.len() - 1));
    let last = *support.last().unwrap();
    for (c, &i) in support[..support.len() - 1].iter().enumerate() {
        z[i] += y[c];
        z[last] -= y[c];
    }
    z
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    let tol = smax * 1e-10;
    sv.iter().filter(|s| **s > tol).count()
}

/// True when some feasible direction leaves the objective flat.
fn is_degenerate(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &DVector<f64>,
    support: &[usize],
    kkt_tol: f64,
) -> bool {
    let base = if support.len() > 1 {
        tangent_matrix(a, support)
    } else {
        DMatrix::zeros(a.nrows(), 0)
    };
    let rank = numerical_rank(&base);
    if rank < base.ncols() {
        return true;
    }
    let grad = a.tr_mul(&(a * w - b));
    let mu = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
    let last = *support.last().unwrap();
    for j in 0..a.ncols() {
        if support.contains(&j) || (grad[j] - mu).abs() > 1e3 * kkt_tol {
            continue;
        }
        let mut aug = base.clone().insert_column(base.ncols(), 0.0);
        aug.set_column(base.ncols(), &(a.column(j) - a.column(last)));
        if numerical_rank(&aug) == rank {
            return true;
        }
    }
    false
}
