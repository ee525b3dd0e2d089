//! Maximum-likelihood estimation: EM from random starts, then a BFGS polish
//! of the full likelihood with bound detection for sign-constrained terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::fmnl::fit_membership;
use crate::kernels::{log_sum_exp, Constraint, Kernel};
use crate::optim::{inf_norm, minimize, BfgsOptions};

use super::inference::{
    differential, fit_statistics, standard_errors_for, Coefficient, ConvergenceInfo,
    EstimationResult, StartSummary, Status, NULL_MODEL,
};
use super::layout::{Blocks, Layout};
use super::model::CompiledModel;
use super::spec::{ClassOrder, ModelSpec, ParamTable, Params};

/// Classes whose every utility coefficient differs by less than this many
/// combined standard errors are reported as indistinguishable.
pub const INDISTINGUISHABLE_Z: f64 = 3.0;

/// Relative log-likelihood noise tolerated by the final quasi-Newton stage.
const POLISH_ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationOptions {
    pub n_starts: usize,
    pub seed: u64,
    /// EM stops when the relative log-likelihood change falls below this.
    pub tol: f64,
    /// EM iterations per start; zero skips optimisation entirely.
    pub max_iter: usize,
    pub polish_iter: usize,
    /// Max-norm gradient tolerance of the polish, on the optimiser's scale.
    pub grad_tol: f64,
    /// BFGS iterations per class in each M-step.
    pub m_step_iter: usize,
    /// Constrained coefficients closer to zero than this are fixed at zero.
    pub bound_threshold: f64,
    pub class_order: ClassOrder,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            n_starts: 20,
            seed: 0,
            tol: 1e-8,
            max_iter: 500,
            polish_iter: 100,
            grad_tol: 1e-5,
            m_step_iter: 10,
            bound_threshold: 1e-4,
            class_order: ClassOrder::Share,
        }
    }
}

/// Seed of start `index`.
pub fn start_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Random starting point: free coefficients in [-0.5, 0.5] (magnitudes for
/// sign-constrained ones), membership coefficients in [-1, 1], free nesting
/// parameters in [0.5, 1).
pub fn random_start(spec: &ModelSpec, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::initial(spec);
    for (c, row) in p.alpha.iter_mut().enumerate() {
        for a in row.iter_mut() {
            let v: f64 = rng.random_range(-1.0..1.0);
            if c != spec.reference_class {
                *a = v;
            }
        }
    }
    let constraints = spec.utility.constraints();
    for row in &mut p.beta {
        for (b, c) in row.iter_mut().zip(&constraints) {
            let v: f64 = rng.random_range(-0.5..0.5);
            *b = match c {
                Constraint::Free => v,
                Constraint::NonNegative => v.abs().max(1e-3),
                Constraint::NonPositive => -v.abs().max(1e-3),
                Constraint::Fixed(f) => *f,
            };
        }
    }
    if let Kernel::Nested(n) = &spec.kernel {
        for row in &mut p.lambdas {
            for (k, l) in row.iter_mut().enumerate() {
                let v: f64 = rng.random_range(0.5..1.0);
                if n.is_free(k) {
                    *l = v;
                }
            }
        }
    }
    p
}

/// Log-likelihood path of an EM run.
#[derive(Debug, Clone)]
pub struct EmTrace {
    pub params: Params,
    /// Log-likelihood before each M-step and at the final point.
    pub logliks: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Negative log-likelihood and gradient over `layout`'s unconstrained parameters.
fn objective(
    model: &CompiledModel,
    data: &ChoiceDataset,
    layout: &Layout,
    base: &Params,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let p = layout.from_theta(theta, base);
    match model.loglik_gradient(data, &p) {
        Ok((ll, g)) => (
            -ll,
            layout
                .theta_gradient(&p, &g)
                .into_iter()
                .map(|v| -v)
                .collect(),
        ),
        Err(_) => (f64::INFINITY, vec![0.0; theta.len()]),
    }
}

/// Posterior-weighted class objective `-sum_n h_nc log P(y_n | c)` over `layout`.
fn class_objective(
    model: &CompiledModel,
    data: &ChoiceDataset,
    weights: &[f64],
    class: usize,
    layout: &Layout,
    base: &Params,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let p = layout.from_theta(theta, base);
    let beta = &p.beta[class];
    let lambdas = &p.lambdas[class];
    let parts: Result<Vec<_>> = data
        .respondents
        .par_iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(r, &w)| {
            model
                .class_sequence_gradient(r, beta, lambdas)
                .map(|g| (w, g))
        })
        .collect();
    let Ok(parts) = parts else {
        return (f64::INFINITY, vec![0.0; theta.len()]);
    };
    let mut value = 0.0;
    let mut natural = Params::filled(&model.spec, 0.0);
    for (w, g) in &parts {
        value -= w * g.loglik;
        for (a, b) in natural.beta[class].iter_mut().zip(&g.beta) {
            *a -= w * b;
        }
        for (a, b) in natural.lambdas[class].iter_mut().zip(&g.lambdas) {
            *a -= w * b;
        }
    }
    (value, layout.theta_gradient(&p, &natural))
}

/// EM from `start` with entries in `bound_fixed` held at their start values.
///
/// Every M-step starts at the current point and only accepts improvements, so
/// the log-likelihood path is non-decreasing.
pub fn run_em(
    data: &ChoiceDataset,
    spec: &ModelSpec,
    start: &Params,
    bound_fixed: &ParamTable<bool>,
    options: &EstimationOptions,
) -> Result<EmTrace> {
    let model = CompiledModel::new(spec, data)?;
    start.check_shape(spec)?;
    em(&model, data, start.clone(), bound_fixed, options)
}

fn em(
    model: &CompiledModel,
    data: &ChoiceDataset,
    mut params: Params,
    bound_fixed: &ParamTable<bool>,
    options: &EstimationOptions,
) -> Result<EmTrace> {
    let spec = &model.spec;
    let designs: Vec<Vec<f64>> = data
        .respondents
        .iter()
        .map(|r| model.design_row(r))
        .collect();
    let class_layouts: Vec<Layout> = (0..spec.n_classes)
        .map(|c| Layout::new(spec, bound_fixed, Blocks::Class(c)))
        .collect();
    // strict descent keeps EM monotone
    let m_opts = BfgsOptions {
        max_iter: options.m_step_iter,
        grad_tol: 1e-8,
        rounding: 0.0,
    };
    let mut logliks: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let terms = model.all_terms(data, &params)?;
        let ll: f64 = terms.iter().map(|t| t.loglik()).sum();
        if !ll.is_finite() {
            return Err(Error::NonFinite("EM log-likelihood".into()));
        }
        if let Some(&prev) = logliks.last() {
            if (ll - prev).abs() <= options.tol * f64::abs(prev) {
                logliks.push(ll);
                converged = true;
                break;
            }
        }
        logliks.push(ll);
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;
        let post: Vec<Vec<f64>> = terms.iter().map(|t| t.posterior()).collect();

        let updated: Vec<Params> = (0..spec.n_classes)
            .into_par_iter()
            .map(|c| {
                let layout = &class_layouts[c];
                if layout.is_empty() {
                    return params.clone();
                }
                let weights: Vec<f64> = post.iter().map(|h| h[c]).collect();
                let theta0 = layout.to_theta(&params);
                let m = minimize(
                    |t| class_objective(model, data, &weights, c, layout, &params, t),
                    &theta0,
                    &m_opts,
                );
                layout.from_theta(&m.x, &params)
            })
            .collect();
        for (c, p) in updated.into_iter().enumerate() {
            params.beta[c] = p.beta[c].clone();
            params.lambdas[c] = p.lambdas[c].clone();
        }

        if spec.n_classes > 1 {
            let fit = fit_membership(
                &post,
                &designs,
                spec.reference_class,
                &params.alpha,
                25,
                1e-10,
            );
            params.alpha = fit.gamma;
        }
    }
    Ok(EmTrace {
        params,
        logliks,
        iterations,
        converged,
    })
}

/// Outcome of one start.
#[derive(Debug, Clone)]
pub struct Fit {
    pub params: Params,
    pub bound_fixed: ParamTable<bool>,
    pub loglik: f64,
    pub em_iterations: usize,
    pub polish_iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

fn polish(
    model: &CompiledModel,
    data: &ChoiceDataset,
    params: &Params,
    bound_fixed: &ParamTable<bool>,
    options: &EstimationOptions,
) -> (Params, f64, usize, f64, bool) {
    let layout = Layout::new(&model.spec, bound_fixed, Blocks::All);
    let m = minimize(
        |t| objective(model, data, &layout, params, t),
        &layout.to_theta(params),
        &BfgsOptions {
            max_iter: options.polish_iter,
            grad_tol: options.grad_tol,
            rounding: POLISH_ROUNDING,
        },
    );
    let converged = m.converged;
    (
        layout.from_theta(&m.x, params),
        -m.value,
        m.iterations,
        m.grad_norm(),
        converged,
    )
}

/// EM, polish and bound fixing from one starting point.
pub fn fit_from(
    data: &ChoiceDataset,
    spec: &ModelSpec,
    start: &Params,
    options: &EstimationOptions,
) -> Result<Fit> {
    let model = CompiledModel::new(spec, data)?;
    start.check_shape(spec)?;
    fit_compiled(&model, data, start.clone(), options)
}

fn fit_compiled(
    model: &CompiledModel,
    data: &ChoiceDataset,
    start: Params,
    options: &EstimationOptions,
) -> Result<Fit> {
    let spec = &model.spec;
    let mut bound_fixed = ParamTable::filled(spec, false);
    if options.max_iter == 0 {
        let layout = Layout::new(spec, &bound_fixed, Blocks::All);
        let (value, grad) = objective(model, data, &layout, &start, &layout.to_theta(&start));
        return Ok(Fit {
            params: start,
            bound_fixed,
            loglik: -value,
            em_iterations: 0,
            polish_iterations: 0,
            gradient_norm: inf_norm(&grad),
            converged: false,
        });
    }
    let trace = em(model, data, start, &bound_fixed, options)?;
    let (mut params, mut loglik, mut polish_iterations, mut gradient_norm, mut converged) =
        polish(model, data, &trace.params, &bound_fixed, options);
    let constraints = spec.utility.constraints();
    loop {
        let mut changed = false;
        for c in 0..spec.n_classes {
            for (t, con) in constraints.iter().enumerate() {
                let sign_bound = matches!(con, Constraint::NonNegative | Constraint::NonPositive);
                if sign_bound
                    && !bound_fixed.beta[c][t]
                    && params.beta[c][t].abs() < options.bound_threshold
                {
                    bound_fixed.beta[c][t] = true;
                    params.beta[c][t] = 0.0;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        let (p, ll, it, g, conv) = polish(model, data, &params, &bound_fixed, options);
        params = p;
        loglik = ll;
        polish_iterations += it;
        gradient_norm = g;
        converged = conv;
    }
    if !loglik.is_finite() {
        return Err(Error::NonFinite("log-likelihood after polish".into()));
    }
    Ok(Fit {
        params,
        bound_fixed,
        loglik,
        em_iterations: trace.iterations,
        polish_iterations,
        gradient_norm,
        converged,
    })
}

/// Mean prior membership probability per class.
fn class_shares(model: &CompiledModel, data: &ChoiceDataset, alpha: &[Vec<f64>]) -> Vec<f64> {
    let mut shares = vec![0.0; model.n_classes()];
    for r in &data.respondents {
        for (s, lp) in shares
            .iter_mut()
            .zip(model.log_priors(&model.design_row(r), alpha))
        {
            *s += lp.exp();
        }
    }
    let n = data.n_respondents() as f64;
    shares.iter().map(|s| s / n).collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Class permutation for `order`: new class `i` is old class `result[i]`.
pub(crate) fn class_permutation(
    order: &ClassOrder,
    spec: &ModelSpec,
    params: &Params,
    shares: &[f64],
) -> Result<Vec<usize>> {
    let c_n = spec.n_classes;
    let mut idx: Vec<usize> = (0..c_n).collect();
    match order {
        ClassOrder::AsEstimated => {}
        ClassOrder::Share => idx.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]).then(a.cmp(&b))),
        ClassOrder::CompensatingDifferential {
            attribute,
            numeraire,
        } => {
            let names = spec.utility.term_names();
            let find = |n: &str| {
                names
                    .iter()
                    .position(|t| t == n)
                    .ok_or_else(|| Error::UnknownName(n.to_string()))
            };
            let (a, m) = (find(attribute)?, find(numeraire)?);
            let key: Vec<f64> = (0..c_n)
                .map(|c| {
                    differential(
                        Coefficient::new(params.beta[c][a], Some(0.0)),
                        Coefficient::new(params.beta[c][m], Some(0.0)),
                        1.0,
                    )
                    .unwrap_or(f64::INFINITY)
                })
                .collect();
            idx.sort_by(|&x, &y| {
                key[x]
                    .total_cmp(&key[y])
                    .then(shares[y].total_cmp(&shares[x]))
            });
        }
        ClassOrder::MatchBeta { beta } => {
            if beta.len() != c_n || beta.iter().any(|b| b.len() != spec.utility.n_terms()) {
                return Err(Error::Shape(
                    "target coefficients do not match the specification".into(),
                ));
            }
            let cost = |perm: &[usize]| -> f64 {
                perm.iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        beta[i]
                            .iter()
                            .zip(&params.beta[c])
                            .map(|(x, y)| (x - y).powi(2))
                            .sum::<f64>()
                    })
                    .sum()
            };
            idx = permutations(c_n)
                .into_iter()
                .min_by(|a, b| cost(a).total_cmp(&cost(b)))
                .unwrap_or(idx);
        }
    }
    Ok(idx)
}

fn start_value(seed: u64, spec: &ModelSpec) -> Params {
    random_start(spec, seed)
}

/// Multi-start maximum-likelihood estimation.
pub fn estimate(
    data: &ChoiceDataset,
    spec: &ModelSpec,
    options: &EstimationOptions,
) -> Result<EstimationResult> {
    if data.n_respondents() == 0 {
        return Err(Error::Precondition("dataset has no respondents".into()));
    }
    let model = CompiledModel::new(spec, data)?;
    let n_starts = options.n_starts.max(1);
    let fits: Vec<Result<Fit>> = (0..n_starts)
        .into_par_iter()
        .map(|s| {
            fit_compiled(
                &model,
                data,
                start_value(start_seed(options.seed, s), spec),
                options,
            )
        })
        .collect();
    let logliks: Vec<Option<f64>> = fits
        .iter()
        .map(|f| f.as_ref().ok().map(|f| f.loglik))
        .collect();
    let best_start = logliks
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|l| (i, l)))
        .fold(None, |best: Option<(usize, f64)>, (i, l)| match best {
            Some((_, b)) if b >= l => best,
            _ => Some((i, l)),
        })
        .map(|(i, _)| i);
    let Some(best_start) = best_start else {
        let err = fits.into_iter().find_map(|f| f.err());
        return Err(err.unwrap_or_else(|| Error::Precondition("no start completed".into())));
    };
    for (i, f) in fits.iter().enumerate() {
        if let Err(e) = f {
            log::warn!("start {i} failed: {e}");
        }
    }
    let best_ll = logliks[best_start].unwrap_or(f64::NEG_INFINITY);
    let starts = StartSummary {
        count: n_starts,
        completed: logliks.iter().flatten().count(),
        best_start,
        best_seed: start_seed(options.seed, best_start),
        within_tolerance: logliks
            .iter()
            .flatten()
            .filter(|&&l| best_ll - l <= 1e-4)
            .count(),
        logliks,
    };
    let best = fits
        .into_iter()
        .nth(best_start)
        .and_then(|f| f.ok())
        .ok_or_else(|| Error::Precondition("best start vanished".into()))?;
    if !best.converged {
        log::warn!(
            "best start did not converge (gradient norm {:.3e})",
            best.gradient_norm
        );
    }
    let shares = class_shares(&model, data, &best.params.alpha);
    let perm = class_permutation(&options.class_order, spec, &best.params, &shares)?;
    let mut params = best.params.permuted(&perm);
    params.normalize_reference(spec.reference_class);
    let bound_fixed = best.bound_fixed.permuted(&perm);
    let convergence = ConvergenceInfo {
        em_iterations: best.em_iterations,
        polish_iterations: best.polish_iterations,
        gradient_norm: best.gradient_norm,
        status: if best.converged {
            Status::Converged
        } else {
            Status::NotConverged
        },
    };
    finalize(
        &model,
        data,
        params,
        bound_fixed,
        ParamTable::filled(spec, false),
        convergence,
        starts,
        options.class_order.clone(),
    )
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    model: &CompiledModel,
    data: &ChoiceDataset,
    params: Params,
    bound_fixed: ParamTable<bool>,
    frozen: ParamTable<bool>,
    convergence: ConvergenceInfo,
    starts: StartSummary,
    class_order: ClassOrder,
) -> Result<EstimationResult> {
    let spec = &model.spec;
    let full = Layout::new(spec, &bound_fixed, Blocks::All);
    let sequential = frozen.beta.iter().flatten().any(|&f| f);
    let se_layout = if sequential {
        Layout::new(spec, &bound_fixed, Blocks::Membership)
    } else {
        full.clone()
    };
    let inference = standard_errors_for(model, data, &params, &se_layout)?;
    let terms = model.all_terms(data, &params)?;
    let loglik: f64 = terms.iter().map(|t| t.loglik()).sum();
    let loglik_null = CompiledModel::null_loglik(data);
    let n_params = full.len();
    let stats = fit_statistics(loglik, loglik_null, n_params, data.n_situations());
    let shares = class_shares(model, data, &params.alpha);

    let posteriors: Vec<Vec<f64>> = terms.iter().map(|t| t.posterior()).collect();
    let degenerate_classes: Vec<usize> = (0..spec.n_classes)
        .filter(|&c| posteriors.iter().map(|p| p[c]).fold(0.0, f64::max) < 1e-6)
        .collect();
    // A spurious split is chosen to make the classes look different, so the
    // usual two-sigma band is too tight to catch it.
    let mut indistinguishable_classes = Vec::new();
    for c in 0..spec.n_classes {
        for d in c + 1..spec.n_classes {
            let close = (0..spec.utility.n_terms()).all(|t| {
                let diff = (params.beta[c][t] - params.beta[d][t]).abs();
                match (
                    inference.std_errors.beta[c][t],
                    inference.std_errors.beta[d][t],
                ) {
                    (Some(a), Some(b)) => diff < INDISTINGUISHABLE_Z * (a * a + b * b).sqrt(),
                    _ => diff < 1e-6,
                }
            });
            if close {
                indistinguishable_classes.push((c, d));
            }
        }
    }
    // A class is redundant when deleting it (and renormalising the others'
    // membership) costs less log-likelihood than BIC charges for its parameters.
    let n_membership = if spec.n_classes > 1 {
        spec.n_membership()
    } else {
        0
    };
    let redundant_classes: Vec<usize> = (0..spec.n_classes)
        .filter(|_| spec.n_classes > 1)
        .filter(|&d| {
            let k = Layout::new(spec, &bound_fixed, Blocks::Class(d)).len() + n_membership;
            let dropped: f64 = terms
                .iter()
                .map(|t| {
                    let keep = |v: &[f64]| -> Vec<f64> {
                        v.iter()
                            .enumerate()
                            .filter(|&(c, _)| c != d)
                            .map(|(_, x)| *x)
                            .collect()
                    };
                    log_sum_exp(&keep(&t.joint())) - log_sum_exp(&keep(&t.log_prior))
                })
                .sum();
            let gain = loglik - dropped;
            !gain.is_nan() && 2.0 * gain < k as f64 * (data.n_situations() as f64).ln()
        })
        .collect();
    let mut warnings = Vec::new();
    if !inference.positive_definite {
        warnings.push("information matrix not positive definite; pseudo-inverse standard errors are unreliable".into());
    }
    for &c in &degenerate_classes {
        warnings.push(format!(
            "class {} is degenerate: largest posterior probability below 1e-6",
            c + 1
        ));
        log::warn!("class {} is degenerate", c + 1);
    }
    for &(c, d) in &indistinguishable_classes {
        warnings.push(format!(
            "classes {} and {} have utility coefficients within three standard errors of each other",
            c + 1,
            d + 1
        ));
        log::warn!("classes {} and {} are indistinguishable", c + 1, d + 1);
    }
    for &d in &redundant_classes {
        warnings.push(format!(
            "class {} does not pay for its parameters: dropping it lowers BIC",
            d + 1
        ));
        log::warn!("class {} is redundant", d + 1);
    }
    if convergence.status == Status::NotConverged {
        warnings.push("estimation did not converge".into());
    }
    Ok(EstimationResult {
        spec: spec.clone(),
        params,
        bound_fixed,
        frozen,
        std_errors: inference.std_errors,
        p_values: inference.p_values,
        hessian_positive_definite: inference.positive_definite,
        loglik,
        loglik_null,
        null_model: NULL_MODEL.to_string(),
        n_params,
        n_respondents: data.n_respondents(),
        n_observations: data.n_situations(),
        adj_rho2: stats.adj_rho2,
        aic: stats.aic,
        bic: stats.bic,
        class_shares: shares,
        convergence,
        starts,
        class_order,
        degenerate_classes,
        indistinguishable_classes,
        redundant_classes,
        warnings,
    })
}

/// Re-estimates only the membership model, holding every utility and nesting
/// parameter of `baseline` fixed, with `covariates` added to the membership design.
///
/// Class-conditional likelihoods are computed once. Membership starts from the
/// baseline constants with zero covariate weights.
pub fn estimate_sequential_membership(
    data: &ChoiceDataset,
    baseline: &EstimationResult,
    covariates: &[String],
    options: &EstimationOptions,
) -> Result<EstimationResult> {
    let mut spec = baseline.spec.clone();
    spec.membership_covariates = covariates.to_vec();
    let model = CompiledModel::new(&spec, data)?;
    let base = &baseline.params;
    let cached: Vec<Vec<f64>> = data
        .respondents
        .par_iter()
        .map(|r| {
            (0..spec.n_classes)
                .map(|c| model.class_sequence_loglik(r, &base.beta[c], &base.lambdas[c]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let designs: Vec<Vec<f64>> = data
        .respondents
        .iter()
        .map(|r| model.design_row(r))
        .collect();

    let mut start = Params::filled(&spec, 0.0);
    for c in 0..spec.n_classes {
        start.alpha[c][0] = base.alpha[c][0];
    }
    start.beta = base.beta.clone();
    start.lambdas = base.lambdas.clone();
    start.normalize_reference(spec.reference_class);

    let bound_fixed = ParamTable {
        alpha: ParamTable::filled(&spec, false).alpha,
        beta: baseline.bound_fixed.beta.clone(),
        lambdas: baseline.bound_fixed.lambdas.clone(),
    };
    let layout = Layout::new(&spec, &bound_fixed, Blocks::Membership);
    let alpha_objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let p = layout.from_theta(theta, &start);
        let mut ll = 0.0;
        let mut grad = Params::filled(&spec, 0.0);
        for (z, cl) in designs.iter().zip(&cached) {
            let log_prior = model.log_priors(z, &p.alpha);
            let joint: Vec<f64> = log_prior.iter().zip(cl).map(|(a, b)| a + b).collect();
            let l = log_sum_exp(&joint);
            ll += l;
            for c in 0..spec.n_classes {
                let r = (joint[c] - l).exp() - log_prior[c].exp();
                for (g, x) in grad.alpha[c].iter_mut().zip(z) {
                    *g += r * x;
                }
            }
        }
        if !ll.is_finite() {
            return (f64::INFINITY, vec![0.0; theta.len()]);
        }
        (
            -ll,
            layout
                .theta_gradient(&p, &grad)
                .into_iter()
                .map(|v| -v)
                .collect(),
        )
    };
    let (params, iterations, gradient_norm, converged) = if options.max_iter == 0 {
        let g = alpha_objective(&layout.to_theta(&start)).1;
        (start.clone(), 0, inf_norm(&g), false)
    } else {
        let m = minimize(
            alpha_objective,
            &layout.to_theta(&start),
            &BfgsOptions {
                max_iter: options.max_iter,
                grad_tol: options.grad_tol,
                rounding: POLISH_ROUNDING,
            },
        );
        (
            layout.from_theta(&m.x, &start),
            m.iterations,
            m.grad_norm(),
            m.converged,
        )
    };
    let mut frozen = ParamTable::filled(&spec, true);
    frozen.alpha = ParamTable::filled(&spec, false).alpha;
    let ll = -alpha_objective(&layout.to_theta(&params)).0;
    let mut result = finalize(
        &model,
        data,
        params,
        bound_fixed,
        frozen,
        ConvergenceInfo {
            em_iterations: 0,
            polish_iterations: iterations,
            gradient_norm,
            status: if converged {
                Status::Converged
            } else {
                Status::NotConverged
            },
        },
        StartSummary::single(options.seed, ll),
        ClassOrder::AsEstimated,
    )?;
    result.warnings.push(
        "membership standard errors are conditional on the frozen class-specific parameters".into(),
    );
    Ok(result)
}
