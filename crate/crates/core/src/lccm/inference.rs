//! Standard errors, fit statistics and derived quantities of an estimated model.

use serde::{Deserialize, Serialize};

use crate::dataset::{ChoiceDataset, RespondentRecord};
use crate::error::{Error, Result};
use crate::kernels::Constraint;
use crate::linalg::{sym_pinv, to_matrix};
use crate::stats::{normal_cdf, normal_two_sided};

use super::layout::{Blocks, Layout, Slot};
use super::model::{softmax, CompiledModel};
use super::spec::{ClassOrder, ModelSpec, ParamTable, Params};

/// Description of the baseline log-likelihood written alongside every result.
pub const NULL_MODEL: &str =
    "equal shares: sum over choice situations of ln(1 / available alternatives)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInfo {
    pub em_iterations: usize,
    pub polish_iterations: usize,
    /// Max-norm of the log-likelihood gradient over the free parameters (optimiser scale).
    pub gradient_norm: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub count: usize,
    /// Starts that finished without a numerical failure.
    pub completed: usize,
    pub best_start: usize,
    pub best_seed: u64,
    /// Starts whose final log-likelihood is within 1e-4 of the best.
    pub within_tolerance: usize,
    pub logliks: Vec<Option<f64>>,
}

impl StartSummary {
    pub fn single(seed: u64, loglik: f64) -> Self {
        Self {
            count: 1,
            completed: 1,
            best_start: 0,
            best_seed: seed,
            within_tolerance: 1,
            logliks: vec![Some(loglik)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub adj_rho2: f64,
    pub aic: f64,
    pub bic: f64,
}

/// `adj_rho2 = 1 - (LL - K) / LL0`, `AIC = 2K - 2LL`, `BIC = K ln(N_obs) - 2LL`.
pub fn fit_statistics(
    loglik: f64,
    loglik_null: f64,
    n_params: usize,
    n_observations: usize,
) -> FitStats {
    let k = n_params as f64;
    FitStats {
        adj_rho2: 1.0 - (loglik - k) / loglik_null,
        aic: 2.0 * k - 2.0 * loglik,
        bic: k * (n_observations as f64).ln() - 2.0 * loglik,
    }
}

/// Everything known about a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub spec: ModelSpec,
    pub params: Params,
    /// Constrained coefficients fixed at zero after reaching their bound.
    pub bound_fixed: ParamTable<bool>,
    /// Entries held at values from an earlier fit (sequential estimation).
    pub frozen: ParamTable<bool>,
    pub std_errors: ParamTable<Option<f64>>,
    pub p_values: ParamTable<Option<f64>>,
    pub hessian_positive_definite: bool,
    pub loglik: f64,
    pub loglik_null: f64,
    pub null_model: String,
    pub n_params: usize,
    pub n_respondents: usize,
    pub n_observations: usize,
    pub adj_rho2: f64,
    pub aic: f64,
    pub bic: f64,
    /// Mean prior membership probability per class.
    pub class_shares: Vec<f64>,
    pub convergence: ConvergenceInfo,
    pub starts: StartSummary,
    pub class_order: ClassOrder,
    /// Classes whose largest posterior probability is below 1e-6.
    pub degenerate_classes: Vec<usize>,
    /// Class pairs whose utility coefficients all differ by less than
    /// `INDISTINGUISHABLE_Z` combined standard errors.
    pub indistinguishable_classes: Vec<(usize, usize)>,
    /// Classes whose removal would lower BIC.
    #[serde(default)]
    pub redundant_classes: Vec<usize>,
    pub warnings: Vec<String>,
}

impl EstimationResult {
    pub fn fit_stats(&self) -> FitStats {
        fit_statistics(
            self.loglik,
            self.loglik_null,
            self.n_params,
            self.n_observations,
        )
    }

    pub fn converged(&self) -> bool {
        self.convergence.status == Status::Converged
    }

    pub fn flagged(&self) -> bool {
        !self.degenerate_classes.is_empty()
            || !self.indistinguishable_classes.is_empty()
            || !self.redundant_classes.is_empty()
    }

    /// Coefficient of utility term `name` in `class`.
    pub fn coefficient(&self, class: usize, name: &str) -> Result<Coefficient> {
        let term = self
            .spec
            .utility
            .term_names()
            .iter()
            .position(|t| t == name || t.strip_prefix("asc_") == Some(name))
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(Coefficient {
            estimate: self.params.beta[class][term],
            p_value: self.p_values.beta[class][term],
            bound_fixed: self.bound_fixed.beta[class][term],
        })
    }

    /// Flat list of every parameter with its name and inference.
    pub fn estimates(&self) -> Vec<NamedEstimate> {
        let mut out = Vec::new();
        let membership = self.spec.membership_names();
        let terms = self.spec.utility.term_names();
        let constraints = self.spec.utility.constraints();
        let nests = self.spec.nest_names();
        for class in 0..self.spec.n_classes {
            for (col, name) in membership.iter().enumerate() {
                out.push(NamedEstimate {
                    block: Block::Membership,
                    class,
                    name: name.clone(),
                    estimate: self.params.alpha[class][col],
                    std_error: self.std_errors.alpha[class][col],
                    p_value: self.p_values.alpha[class][col],
                    status: if class == self.spec.reference_class {
                        EntryStatus::Reference
                    } else if self.frozen.alpha[class][col] {
                        EntryStatus::Frozen
                    } else {
                        EntryStatus::Estimated
                    },
                });
            }
            for (term, name) in terms.iter().enumerate() {
                out.push(NamedEstimate {
                    block: Block::Utility,
                    class,
                    name: name.clone(),
                    estimate: self.params.beta[class][term],
                    std_error: self.std_errors.beta[class][term],
                    p_value: self.p_values.beta[class][term],
                    status: if matches!(constraints[term], Constraint::Fixed(_)) {
                        EntryStatus::Fixed
                    } else if self.bound_fixed.beta[class][term] {
                        EntryStatus::BoundFixed
                    } else if self.frozen.beta[class][term] {
                        EntryStatus::Frozen
                    } else {
                        EntryStatus::Estimated
                    },
                });
            }
            for (nest, name) in nests.iter().enumerate() {
                let free = match &self.spec.kernel {
                    crate::kernels::Kernel::Nested(n) => n.is_free(nest),
                    crate::kernels::Kernel::Mnl => false,
                };
                out.push(NamedEstimate {
                    block: Block::Nesting,
                    class,
                    name: name.clone(),
                    estimate: self.params.lambdas[class][nest],
                    std_error: self.std_errors.lambdas[class][nest],
                    p_value: self.p_values.lambdas[class][nest],
                    status: if !free {
                        EntryStatus::Fixed
                    } else if self.frozen.lambdas[class][nest] {
                        EntryStatus::Frozen
                    } else {
                        EntryStatus::Estimated
                    },
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Membership,
    Utility,
    Nesting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Estimated,
    /// Fixed by the specification.
    Fixed,
    /// Reached its zero bound and was not estimated.
    BoundFixed,
    /// Reference class of the membership model.
    Reference,
    /// Carried over from an earlier fit.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub block: Block,
    pub class: usize,
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub p_value: Option<f64>,
    pub status: EntryStatus,
}

/// Inference for the free slots of `layout` from a central-difference Hessian
/// of the analytic gradient in natural parameters.
pub(crate) struct Inference {
    pub std_errors: ParamTable<Option<f64>>,
    pub p_values: ParamTable<Option<f64>>,
    pub positive_definite: bool,
}

const HESSIAN_STEP: f64 = 1e-5;

pub(crate) fn standard_errors_for(
    model: &CompiledModel,
    data: &ChoiceDataset,
    params: &Params,
    layout: &Layout,
) -> Result<Inference> {
    let spec = &model.spec;
    let slots: Vec<Slot> = layout.slots().collect();
    let x = layout.natural(params);
    let grad_at = |values: &[f64]| -> Result<Vec<f64>> {
        let p = layout.with_natural(values, params);
        let (_, g) = model.loglik_gradient(data, &p)?;
        Ok(layout.natural_gradient(&g))
    };
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut point = x.clone();
    for i in 0..n {
        let h = HESSIAN_STEP * x[i].abs().max(1.0);
        let upper_bounded = matches!(slots[i], Slot::Lambda { .. }) && x[i] + h > 1.0;
        let col: Vec<f64> = if upper_bounded {
            // nesting parameters cannot exceed one: backward difference
            let g0 = grad_at(&point)?;
            point[i] = x[i] - h;
            let down = grad_at(&point)?;
            g0.iter().zip(&down).map(|(a, b)| (a - b) / h).collect()
        } else {
            point[i] = x[i] + h;
            let up = grad_at(&point)?;
            point[i] = x[i] - h;
            let down = grad_at(&point)?;
            up.iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()
        };
        point[i] = x[i];
        cols.push(col);
    }
    let neg_hessian: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| -0.5 * (cols[i][j] + cols[j][i])).collect())
        .collect();
    let (cov, positive_definite) = sym_pinv(&to_matrix(&neg_hessian));
    if !positive_definite {
        log::warn!("information matrix is not positive definite; standard errors use a pseudo-inverse and are unreliable");
    }
    let mut std_errors = ParamTable::filled(spec, None);
    let mut p_values = ParamTable::filled(spec, None);
    for (i, slot) in slots.iter().enumerate() {
        let var = cov[(i, i)];
        if var <= 0.0 || !var.is_finite() {
            continue;
        }
        let se = var.sqrt();
        match *slot {
            Slot::Alpha { class, col } => {
                std_errors.alpha[class][col] = Some(se);
                p_values.alpha[class][col] = Some(normal_two_sided(x[i] / se));
            }
            Slot::Beta { class, term } => {
                std_errors.beta[class][term] = Some(se);
                p_values.beta[class][term] = Some(normal_two_sided(x[i] / se));
            }
            Slot::Lambda { class, nest } => {
                std_errors.lambdas[class][nest] = Some(se);
                // one-sided against lambda = 1
                p_values.lambdas[class][nest] = Some(normal_cdf((x[i] - 1.0) / se));
            }
        }
    }
    Ok(Inference {
        std_errors,
        p_values,
        positive_definite,
    })
}

/// Standard errors and p-values, aligned to the parameters.
pub type ErrorTables = (ParamTable<Option<f64>>, ParamTable<Option<f64>>);

/// Recomputes standard errors and p-values of `result` on `data`.
pub fn standard_errors(result: &EstimationResult, data: &ChoiceDataset) -> Result<ErrorTables> {
    let model = CompiledModel::new(&result.spec, data)?;
    let mut skip = result.bound_fixed.clone();
    for (s, f) in [
        (&mut skip.alpha, &result.frozen.alpha),
        (&mut skip.beta, &result.frozen.beta),
        (&mut skip.lambdas, &result.frozen.lambdas),
    ] {
        for (row, frow) in s.iter_mut().zip(f) {
            for (a, b) in row.iter_mut().zip(frow) {
                *a |= *b;
            }
        }
    }
    let blocks = if result.frozen.beta.iter().flatten().any(|&f| f) {
        Blocks::Membership
    } else {
        Blocks::All
    };
    let layout = Layout::new(&result.spec, &skip, blocks);
    let inf = standard_errors_for(&model, data, &result.params, &layout)?;
    Ok((inf.std_errors, inf.p_values))
}

/// Prior class-membership probabilities `softmax_c(alpha_c' [1, z])`.
pub fn membership_probs(z: &[f64], alpha: &[Vec<f64>]) -> Result<Vec<f64>> {
    let design: Vec<f64> = std::iter::once(1.0).chain(z.iter().copied()).collect();
    if alpha.iter().any(|a| a.len() != design.len()) {
        return Err(Error::Shape(format!(
            "membership coefficients need {} entries per class",
            design.len()
        )));
    }
    let scores: Vec<f64> = alpha
        .iter()
        .map(|a| a.iter().zip(&design).map(|(x, z)| x * z).sum())
        .collect();
    Ok(softmax(&scores))
}

/// `sum_t log P(y_nt | c)` of one respondent under one class's coefficients.
pub fn class_sequence_loglik(
    data: &ChoiceDataset,
    spec: &ModelSpec,
    respondent: &RespondentRecord,
    beta: &[f64],
    lambdas: &[f64],
) -> Result<f64> {
    CompiledModel::new(spec, data)?.class_sequence_loglik(respondent, beta, lambdas)
}

/// Marginal log-likelihood of the mixture, summed over respondents in dataset order.
pub fn marginal_loglik(data: &ChoiceDataset, params: &Params, spec: &ModelSpec) -> Result<f64> {
    params.check_shape(spec)?;
    CompiledModel::new(spec, data)?.marginal_loglik(data, params)
}

/// Utility coefficient with the inference needed for ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub p_value: Option<f64>,
    pub bound_fixed: bool,
}

impl Coefficient {
    pub fn new(estimate: f64, p_value: Option<f64>) -> Self {
        Self {
            estimate,
            p_value,
            bound_fixed: false,
        }
    }
}

/// Significance level below which an attribute coefficient enters a differential.
pub const CWD_SIGNIFICANCE: f64 = 0.05;

/// `beta_attr / beta_numeraire * scale`.
///
/// Zero when the attribute coefficient is bound-fixed or not significant at 5%;
/// `None` when the numeraire coefficient is bound-fixed or not positive.
pub fn differential(attribute: Coefficient, numeraire: Coefficient, scale: f64) -> Option<f64> {
    if numeraire.bound_fixed || numeraire.estimate <= 0.0 {
        return None;
    }
    let insignificant = attribute.p_value.is_none_or(|p| p > CWD_SIGNIFICANCE);
    if attribute.bound_fixed || insignificant {
        return Some(0.0);
    }
    Some(attribute.estimate / numeraire.estimate * scale)
}

/// Per-class compensating differential of `attribute` priced in `numeraire`.
pub fn compensating_differential(
    result: &EstimationResult,
    attribute: &str,
    numeraire: &str,
    scale: f64,
) -> Result<Vec<Option<f64>>> {
    (0..result.spec.n_classes)
        .map(|c| {
            Ok(differential(
                result.coefficient(c, attribute)?,
                result.coefficient(c, numeraire)?,
                scale,
            ))
        })
        .collect()
}

/// Alternative group used by [`avg_predicted_probs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeGroup {
    pub name: String,
    pub alternatives: Vec<String>,
}

/// Per class, the mean over all choice situations of the predicted probability
/// mass on each group. Groups must partition the alternatives.
pub fn avg_predicted_probs(
    result: &EstimationResult,
    data: &ChoiceDataset,
    groups: &[AlternativeGroup],
) -> Result<Vec<Vec<f64>>> {
    let j_n = data.n_alternatives();
    let mut group_of = vec![None; j_n];
    for (g, group) in groups.iter().enumerate() {
        for alt in &group.alternatives {
            let j = data
                .alternative_index(alt)
                .ok_or_else(|| Error::UnknownName(alt.clone()))?;
            if group_of[j].replace(g).is_some() {
                return Err(Error::InvalidSpec(format!(
                    "alternative `{alt}` is in two groups"
                )));
            }
        }
    }
    if let Some(j) = group_of.iter().position(|g| g.is_none()) {
        return Err(Error::InvalidSpec(format!(
            "alternative `{}` is in no group",
            data.alternative_ids[j]
        )));
    }
    let model = CompiledModel::new(&result.spec, data)?;
    let n_obs = data.n_situations() as f64;
    (0..result.spec.n_classes)
        .map(|c| {
            let mut mass = vec![0.0; groups.len()];
            for r in &data.respondents {
                for s in &r.situations {
                    let lp = model.situation_log_probs(
                        s,
                        &result.params.beta[c],
                        &result.params.lambdas[c],
                    )?;
                    for (j, l) in lp.iter().enumerate() {
                        if let Some(g) = group_of[j] {
                            mass[g] += l.exp();
                        }
                    }
                }
            }
            Ok(mass.into_iter().map(|m| m / n_obs).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_stats_substitution() {
        let s = fit_statistics(-100.0, -100.0, 0, 10);
        assert_eq!(s.adj_rho2, 0.0);
        let s = fit_statistics(-50.0, -100.0, 0, 10);
        assert_eq!(s.adj_rho2, 0.5);
        let s = fit_statistics(-50.0, -100.0, 4, 10);
        assert!((s.aic - 108.0).abs() < 1e-12);
        assert!((s.bic - (4.0 * 10f64.ln() + 100.0)).abs() < 1e-12);
    }

    #[test]
    fn uniform_membership() {
        let p = membership_probs(&[], &vec![vec![0.0]; 4]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        assert!(membership_probs(&[1.0], &vec![vec![0.0]; 2]).is_err());
    }

    #[test]
    fn differential_rules() {
        let num = Coefficient::new(0.5, Some(0.0));
        assert_eq!(
            differential(Coefficient::new(1.0, Some(0.01)), num, 1000.0),
            Some(2000.0)
        );
        assert_eq!(
            differential(Coefficient::new(1.0, Some(0.2)), num, 1000.0),
            Some(0.0)
        );
        let bound = Coefficient {
            estimate: 0.0,
            p_value: None,
            bound_fixed: true,
        };
        assert_eq!(differential(bound, num, 1000.0), Some(0.0));
        assert_eq!(
            differential(Coefficient::new(1.0, Some(0.0)), bound, 1000.0),
            None
        );
        assert_eq!(
            differential(
                Coefficient::new(1.0, Some(0.0)),
                Coefficient::new(-0.1, Some(0.0)),
                1.0
            ),
            None
        );
    }
}
