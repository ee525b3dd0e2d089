//! Fractional multinomial logit: quasi-maximum-likelihood regression of
//! class-membership fractions on respondent covariates, with sandwich
//! standard errors.
//!
//! The same solver fits the membership model inside the EM estimator, where
//! the fractions are the current posterior responsibilities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::log_sum_exp;
use crate::linalg::{psd_solve, sym_pinv};
use crate::optim::inf_norm;
use crate::posterior::PosteriorMatrix;
use crate::stats::normal_two_sided;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FmnlOptions {
    pub reference_class: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for FmnlOptions {
    fn default() -> Self {
        Self {
            reference_class: 0,
            max_iter: 200,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FmnlResult {
    /// `constant` followed by the covariate names.
    pub coefficient_names: Vec<String>,
    pub reference_class: usize,
    /// `C x (1 + P)`; the reference row is zero.
    pub gamma: Vec<Vec<f64>>,
    pub quasi_loglik: f64,
    pub robust_se: Vec<Vec<Option<f64>>>,
    pub p_values: Vec<Vec<Option<f64>>>,
    /// Robust covariance over the non-reference coefficients, class-major.
    pub covariance: Vec<Vec<f64>>,
    pub n_respondents: usize,
    pub convergence: Convergence,
}

impl FmnlResult {
    pub fn n_classes(&self) -> usize {
        self.gamma.len()
    }

    /// z statistic of coefficient `(class, col)`, if it has a standard error.
    pub fn t_stat(&self, class: usize, col: usize) -> Option<f64> {
        self.robust_se[class][col].map(|se| self.gamma[class][col] / se)
    }
}

fn with_intercept(covariates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    covariates
        .iter()
        .map(|row| std::iter::once(1.0).chain(row.iter().copied()).collect())
        .collect()
}

fn log_shares(gamma: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = gamma
        .iter()
        .map(|g| g.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    let norm = log_sum_exp(&s);
    s.iter().map(|v| v - norm).collect()
}

fn check_rows(fractions: &[Vec<f64>], design: &[Vec<f64>], gamma: &[Vec<f64>]) -> Result<()> {
    if fractions.len() != design.len() {
        return Err(Error::Shape(format!(
            "{} posterior rows for {} covariate rows",
            fractions.len(),
            design.len()
        )));
    }
    let width = gamma.first().map_or(0, |g| g.len());
    if design.iter().any(|r| r.len() != width) || fractions.iter().any(|r| r.len() != gamma.len()) {
        return Err(Error::Shape(
            "coefficient block does not match the data".into(),
        ));
    }
    if let Some(v) = design.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("covariate {v}")));
    }
    Ok(())
}

/// `sum_n sum_c P(c | y_n) log pi_nc(gamma)` with `pi = softmax([1, x_n]' gamma)`.
///
/// `gamma` is `C x (1 + P)` and `covariates` is `N x P` without the intercept.
pub fn fmnl_quasi_loglik(
    posterior: &PosteriorMatrix,
    covariates: &[Vec<f64>],
    gamma: &[Vec<f64>],
) -> Result<f64> {
    let design = with_intercept(covariates);
    check_rows(&posterior.probs, &design, gamma)?;
    Ok(quasi_loglik(&posterior.probs, &design, gamma))
}

/// Gradient of [`fmnl_quasi_loglik`] with respect to every entry of `gamma`.
pub fn fmnl_gradient(
    posterior: &PosteriorMatrix,
    covariates: &[Vec<f64>],
    gamma: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let design = with_intercept(covariates);
    check_rows(&posterior.probs, &design, gamma)?;
    let mut grad = vec![vec![0.0; gamma[0].len()]; gamma.len()];
    for (y, x) in posterior.probs.iter().zip(&design) {
        let pi = log_shares(gamma, x);
        for (c, g) in grad.iter_mut().enumerate() {
            let r = y[c] - pi[c].exp();
            g.iter_mut().zip(x).for_each(|(a, b)| *a += r * b);
        }
    }
    Ok(grad)
}

fn quasi_loglik(fractions: &[Vec<f64>], design: &[Vec<f64>], gamma: &[Vec<f64>]) -> f64 {
    fractions
        .iter()
        .zip(design)
        .map(|(y, x)| {
            log_shares(gamma, x)
                .iter()
                .zip(y)
                .map(|(lp, w)| if *w == 0.0 { 0.0 } else { w * lp })
                .sum::<f64>()
        })
        .sum()
}

/// Predicted class shares `softmax([1, x_n]' gamma)` for every row.
pub fn predict_shares(gamma: &[Vec<f64>], covariates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    with_intercept(covariates)
        .iter()
        .map(|x| log_shares(gamma, x).iter().map(|l| l.exp()).collect())
        .collect()
}

/// Result of maximising the weighted membership objective.
#[derive(Debug, Clone)]
pub(crate) struct MembershipFit {
    pub gamma: Vec<Vec<f64>>,
    pub iterations: usize,
}

struct Derivatives {
    value: f64,
    gradient: DVector<f64>,
    /// Negative Hessian (information), positive semi-definite.
    information: DMatrix<f64>,
    /// Per-row scores, for the sandwich.
    scores: Vec<DVector<f64>>,
}

fn free_classes(n_classes: usize, reference: usize) -> Vec<usize> {
    (0..n_classes).filter(|&c| c != reference).collect()
}

fn derivatives(
    fractions: &[Vec<f64>],
    design: &[Vec<f64>],
    gamma: &[Vec<f64>],
    reference: usize,
    with_scores: bool,
) -> Derivatives {
    let classes = free_classes(gamma.len(), reference);
    let d = design.first().map_or(0, |r| r.len());
    let dim = classes.len() * d;
    let mut gradient = DVector::zeros(dim);
    let mut information = DMatrix::zeros(dim, dim);
    let mut scores = Vec::new();
    let mut value = 0.0;
    for (y, x) in fractions.iter().zip(design) {
        let lp = log_shares(gamma, x);
        let pi: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        value += lp
            .iter()
            .zip(y)
            .map(|(l, w)| if *w == 0.0 { 0.0 } else { w * l })
            .sum::<f64>();
        let mut score = DVector::zeros(dim);
        for (a, &c) in classes.iter().enumerate() {
            let r = y[c] - pi[c];
            for (i, xi) in x.iter().enumerate() {
                score[a * d + i] = r * xi;
            }
            for (b, &c2) in classes.iter().enumerate() {
                let w = pi[c] * ((c == c2) as u8 as f64 - pi[c2]);
                if w == 0.0 {
                    continue;
                }
                for (i, xi) in x.iter().enumerate() {
                    for (j, xj) in x.iter().enumerate() {
                        information[(a * d + i, b * d + j)] += w * xi * xj;
                    }
                }
            }
        }
        gradient += &score;
        if with_scores {
            scores.push(score);
        }
    }
    Derivatives {
        value,
        gradient,
        information,
        scores,
    }
}

fn unpack(theta: &DVector<f64>, n_classes: usize, reference: usize, d: usize) -> Vec<Vec<f64>> {
    let mut gamma = vec![vec![0.0; d]; n_classes];
    for (a, c) in free_classes(n_classes, reference).into_iter().enumerate() {
        for i in 0..d {
            gamma[c][i] = theta[a * d + i];
        }
    }
    gamma
}

fn pack(gamma: &[Vec<f64>], reference: usize) -> DVector<f64> {
    let d = gamma.first().map_or(0, |g| g.len());
    let classes = free_classes(gamma.len(), reference);
    let mut theta = DVector::zeros(classes.len() * d);
    for (a, &c) in classes.iter().enumerate() {
        for i in 0..d {
            theta[a * d + i] = gamma[c][i] - gamma[reference][i];
        }
    }
    theta
}

/// Damped Newton ascent on the weighted membership objective from `start`.
///
/// Line-searched steps increase the objective; once the gain is at rounding
/// level a full Newton step is taken only if it shrinks the gradient.
pub(crate) fn fit_membership(
    fractions: &[Vec<f64>],
    design: &[Vec<f64>],
    reference: usize,
    start: &[Vec<f64>],
    max_iter: usize,
    grad_tol: f64,
) -> MembershipFit {
    let c_n = start.len();
    let d = start.first().map_or(0, |g| g.len());
    let mut theta = pack(start, reference);
    let mut gamma = unpack(&theta, c_n, reference, d);
    let mut cur = derivatives(fractions, design, &gamma, reference, false);
    let mut iterations = 0;
    while iterations < max_iter && cur.gradient.amax() >= grad_tol {
        iterations += 1;
        let mut step = psd_solve(&cur.information, &cur.gradient);
        if step.dot(&cur.gradient) <= 0.0 || !step.iter().all(|v| v.is_finite()) {
            step = cur.gradient.clone();
        }
        let slope = step.dot(&cur.gradient);
        // Near the optimum the Newton gain drops below the rounding noise of the
        // objective and Armijo cannot tell a good step from a bad one; the
        // gradient still can.
        if slope < 1e-12 * (1.0 + cur.value.abs()) {
            let cand = &theta + &step;
            let g = unpack(&cand, c_n, reference, d);
            let next = derivatives(fractions, design, &g, reference, false);
            if next.value.is_finite() && next.gradient.amax() < cur.gradient.amax() {
                theta = cand;
                gamma = g;
                cur = next;
                continue;
            }
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let g = unpack(&cand, c_n, reference, d);
            let v = quasi_loglik(fractions, design, &g);
            if v.is_finite() && v >= cur.value + 1e-4 * t * step.dot(&cur.gradient) {
                theta = cand;
                gamma = g;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        cur = derivatives(fractions, design, &gamma, reference, false);
        if theta.norm() > 1e3 {
            break;
        }
    }
    MembershipFit { gamma, iterations }
}

/// Fits the fractional multinomial logit of posterior probabilities on covariates.
///
/// `covariates` is `N x P` (no intercept column), aligned with `posterior` rows.
pub fn estimate_fmnl(
    posterior: &PosteriorMatrix,
    covariates: &[Vec<f64>],
    covariate_names: &[String],
    options: &FmnlOptions,
) -> Result<FmnlResult> {
    let n = posterior.probs.len();
    let c_n = posterior.n_classes();
    if options.reference_class >= c_n {
        return Err(Error::InvalidSpec(format!(
            "reference class {} out of range",
            options.reference_class
        )));
    }
    let p = covariate_names.len();
    if covariates.iter().any(|r| r.len() != p) {
        return Err(Error::Shape(format!(
            "covariate rows must have {p} entries"
        )));
    }
    if n <= (c_n - 1) * (p + 1) {
        return Err(Error::Precondition(format!(
            "{n} respondents cannot identify {} coefficients",
            (c_n - 1) * (p + 1)
        )));
    }
    let design = with_intercept(covariates);
    let zero = vec![vec![0.0; p + 1]; c_n];
    check_rows(&posterior.probs, &design, &zero)?;

    let fit = fit_membership(
        &posterior.probs,
        &design,
        options.reference_class,
        &zero,
        options.max_iter,
        options.grad_tol,
    );
    let norm = fit
        .gamma
        .iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > 50.0 {
        return Err(Error::Separation(norm));
    }

    let at = derivatives(
        &posterior.probs,
        &design,
        &fit.gamma,
        options.reference_class,
        true,
    );
    let (a_inv, _) = sym_pinv(&at.information);
    let dim = at.gradient.len();
    let mut meat = DMatrix::zeros(dim, dim);
    for s in &at.scores {
        meat += s * s.transpose();
    }
    let cov = &a_inv * meat * &a_inv;
    let d = p + 1;
    let mut robust_se = vec![vec![None; d]; c_n];
    let mut p_values = vec![vec![None; d]; c_n];
    for (a, c) in free_classes(c_n, options.reference_class)
        .into_iter()
        .enumerate()
    {
        for i in 0..d {
            let v = cov[(a * d + i, a * d + i)];
            if v > 0.0 && at.information[(a * d + i, a * d + i)] > 0.0 {
                let se = v.sqrt();
                robust_se[c][i] = Some(se);
                p_values[c][i] = Some(normal_two_sided(fit.gamma[c][i] / se));
            }
        }
    }
    let gradient_norm = inf_norm(at.gradient.as_slice());
    Ok(FmnlResult {
        coefficient_names: std::iter::once("constant".to_string())
            .chain(covariate_names.iter().cloned())
            .collect(),
        reference_class: options.reference_class,
        gamma: fit.gamma,
        quasi_loglik: at.value,
        robust_se,
        p_values,
        covariance: (0..dim)
            .map(|i| (0..dim).map(|j| cov[(i, j)]).collect())
            .collect(),
        n_respondents: n,
        convergence: Convergence {
            iterations: fit.iterations,
            gradient_norm,
            converged: gradient_norm < options.grad_tol.max(1e-8),
        },
    })
}
