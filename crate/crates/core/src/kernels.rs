//! Class-conditional choice kernels: multinomial logit and two-level nested logit.
//!
//! All probabilities are evaluated in log space. Unavailable alternatives get
//! a log-probability of `-inf`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign or value restriction on a coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    Free,
    NonNegative,
    NonPositive,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTerm {
    pub attribute: String,
    #[serde(default)]
    pub constraint: Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantTerm {
    pub alternative: String,
    #[serde(default)]
    pub constraint: Constraint,
}

/// Linear-in-parameters utility: attribute terms followed by alternative-specific constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UtilitySpec {
    pub attributes: Vec<AttributeTerm>,
    #[serde(default)]
    pub constants: Vec<ConstantTerm>,
}

impl UtilitySpec {
    /// Free coefficients on the named attributes, no constants.
    pub fn linear(attributes: &[&str]) -> Self {
        Self {
            attributes: attributes
                .iter()
                .map(|a| AttributeTerm {
                    attribute: a.to_string(),
                    constraint: Constraint::Free,
                })
                .collect(),
            constants: Vec::new(),
        }
    }

    pub fn n_terms(&self) -> usize {
        self.attributes.len() + self.constants.len()
    }

    pub fn term_names(&self) -> Vec<String> {
        self.attributes
            .iter()
            .map(|t| t.attribute.clone())
            .chain(
                self.constants
                    .iter()
                    .map(|c| format!("asc_{}", c.alternative)),
            )
            .collect()
    }

    pub fn constraints(&self) -> Vec<Constraint> {
        self.attributes
            .iter()
            .map(|t| t.constraint)
            .chain(self.constants.iter().map(|c| c.constraint))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.attributes.iter().enumerate() {
            if self.attributes[..i]
                .iter()
                .any(|u| u.attribute == t.attribute)
            {
                return Err(Error::InvalidSpec(format!(
                    "attribute `{}` appears twice",
                    t.attribute
                )));
            }
        }
        for (i, c) in self.constants.iter().enumerate() {
            if self.constants[..i]
                .iter()
                .any(|u| u.alternative == c.alternative)
            {
                return Err(Error::InvalidSpec(format!(
                    "constant for `{}` appears twice",
                    c.alternative
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nest {
    pub name: String,
    pub alternatives: Vec<String>,
    /// `None` estimates the nesting parameter in (0, 1); singleton nests are always fixed at 1.
    #[serde(default)]
    pub fixed_lambda: Option<f64>,
}

/// Partition of the alternatives into nests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestStructure {
    pub nests: Vec<Nest>,
}

impl NestStructure {
    /// Resolves alternative ids to indices, checking the nests partition `alternative_ids`.
    pub fn resolve(&self, alternative_ids: &[String]) -> Result<Nesting> {
        let mut of_alternative = vec![usize::MAX; alternative_ids.len()];
        let mut members = Vec::with_capacity(self.nests.len());
        for (k, nest) in self.nests.iter().enumerate() {
            if nest.alternatives.is_empty() {
                return Err(Error::InvalidNests(format!(
                    "nest `{}` is empty",
                    nest.name
                )));
            }
            let mut m = Vec::with_capacity(nest.alternatives.len());
            for alt in &nest.alternatives {
                let j = alternative_ids
                    .iter()
                    .position(|a| a == alt)
                    .ok_or_else(|| Error::InvalidNests(format!("unknown alternative `{alt}`")))?;
                if of_alternative[j] != usize::MAX {
                    return Err(Error::InvalidNests(format!(
                        "alternative `{alt}` in two nests"
                    )));
                }
                of_alternative[j] = k;
                m.push(j);
            }
            members.push(m);
        }
        if let Some(j) = of_alternative.iter().position(|&k| k == usize::MAX) {
            return Err(Error::InvalidNests(format!(
                "alternative `{}` belongs to no nest",
                alternative_ids[j]
            )));
        }
        Ok(Nesting {
            members,
            of_alternative,
        })
    }

    /// Whether nest `k` carries an estimated nesting parameter.
    pub fn is_free(&self, k: usize) -> bool {
        self.nests[k].alternatives.len() > 1 && self.nests[k].fixed_lambda.is_none()
    }

    /// Starting/fixed value of the nesting parameter for nest `k`.
    pub fn fixed_value(&self, k: usize) -> f64 {
        if self.nests[k].alternatives.len() == 1 {
            1.0
        } else {
            self.nests[k].fixed_lambda.unwrap_or(1.0)
        }
    }
}

/// Nest membership by alternative index.
#[derive(Debug, Clone, PartialEq)]
pub struct Nesting {
    pub members: Vec<Vec<usize>>,
    pub of_alternative: Vec<usize>,
}

impl Nesting {
    pub fn n_nests(&self) -> usize {
        self.members.len()
    }
}

/// Choice kernel of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Mnl,
    Nested(NestStructure),
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

fn check_inputs(utilities: &[f64], available: &[bool]) -> Result<()> {
    if utilities.len() != available.len() {
        return Err(Error::Shape(format!(
            "{} utilities for {} availability flags",
            utilities.len(),
            available.len()
        )));
    }
    if !available.iter().any(|&a| a) {
        return Err(Error::NoAvailableAlternative);
    }
    if let Some(u) = utilities
        .iter()
        .zip(available)
        .find(|(u, &a)| a && !u.is_finite())
    {
        return Err(Error::NonFinite(format!("utility {}", u.0)));
    }
    Ok(())
}

/// Multinomial logit log-probabilities over the available alternatives.
pub fn mnl_log_probs(utilities: &[f64], available: &[bool]) -> Result<Vec<f64>> {
    check_inputs(utilities, available)?;
    let max = utilities
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(u, _)| *u)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = utilities
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(u, _)| (u - max).exp())
        .sum();
    let norm = max + sum.ln();
    Ok(utilities
        .iter()
        .zip(available)
        .map(|(u, &a)| if a { u - norm } else { f64::NEG_INFINITY })
        .collect())
}

/// Per-nest quantities of a nested logit evaluation.
struct NestTerms {
    /// `log sum exp(u_j / lambda_k)` over available members, `-inf` for empty nests.
    inclusive: Vec<f64>,
    /// log of the nest probability.
    log_nest_prob: Vec<f64>,
}

fn nest_terms(
    utilities: &[f64],
    available: &[bool],
    nesting: &Nesting,
    lambdas: &[f64],
) -> Result<NestTerms> {
    check_inputs(utilities, available)?;
    if lambdas.len() != nesting.n_nests() {
        return Err(Error::Shape(format!(
            "{} nesting parameters for {} nests",
            lambdas.len(),
            nesting.n_nests()
        )));
    }
    if nesting.of_alternative.len() != utilities.len() {
        return Err(Error::Shape(
            "nest structure does not cover the alternatives".into(),
        ));
    }
    if let Some(&l) = lambdas.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::InvalidLambda(l));
    }
    let mut inclusive = Vec::with_capacity(nesting.n_nests());
    let mut scratch = Vec::new();
    for (members, &lambda) in nesting.members.iter().zip(lambdas) {
        scratch.clear();
        scratch.extend(
            members
                .iter()
                .filter(|&&j| available[j])
                .map(|&j| utilities[j] / lambda),
        );
        inclusive.push(log_sum_exp(&scratch));
    }
    let upper: Vec<f64> = inclusive
        .iter()
        .zip(lambdas)
        .map(|(&iv, &l)| if iv == f64::NEG_INFINITY { iv } else { l * iv })
        .collect();
    let total = log_sum_exp(&upper);
    let log_nest_prob = upper.iter().map(|&v| v - total).collect();
    Ok(NestTerms {
        inclusive,
        log_nest_prob,
    })
}

/// Two-level nested logit log-probabilities.
///
/// Within nest `k` utilities are scaled by `1 / lambda_k`; the nest itself
/// enters the upper level with `lambda_k` times its inclusive value. Nests
/// with no available member drop out.
pub fn nl_log_probs(
    utilities: &[f64],
    available: &[bool],
    nesting: &Nesting,
    lambdas: &[f64],
) -> Result<Vec<f64>> {
    let terms = nest_terms(utilities, available, nesting, lambdas)?;
    Ok((0..utilities.len())
        .map(|j| {
            if !available[j] {
                return f64::NEG_INFINITY;
            }
            let k = nesting.of_alternative[j];
            utilities[j] / lambdas[k] - terms.inclusive[k] + terms.log_nest_prob[k]
        })
        .collect())
}

/// Log-probability of the chosen alternative and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    pub log_prob: f64,
    /// d log P(chosen) / d utility, zero for unavailable alternatives.
    pub utilities: Vec<f64>,
    /// d log P(chosen) / d lambda per nest; empty for MNL.
    pub lambdas: Vec<f64>,
}

/// Gradient of the chosen alternative's log-probability with respect to the
/// utilities and (for nested logit) the nesting parameters.
pub fn kernel_gradient(
    utilities: &[f64],
    available: &[bool],
    nests: Option<(&Nesting, &[f64])>,
    chosen: usize,
) -> Result<KernelGradient> {
    if chosen >= available.len() || !available[chosen] {
        return Err(Error::Precondition(
            "chosen alternative is unavailable".into(),
        ));
    }
    match nests {
        None => {
            let lp = mnl_log_probs(utilities, available)?;
            let grad = lp
                .iter()
                .enumerate()
                .map(|(j, &l)| (j == chosen) as u8 as f64 - l.exp())
                .collect();
            Ok(KernelGradient {
                log_prob: lp[chosen],
                utilities: grad,
                lambdas: Vec::new(),
            })
        }
        Some((nesting, lambdas)) => nl_gradient(utilities, available, nesting, lambdas, chosen),
    }
}

fn nl_gradient(
    utilities: &[f64],
    available: &[bool],
    nesting: &Nesting,
    lambdas: &[f64],
    chosen: usize,
) -> Result<KernelGradient> {
    let terms = nest_terms(utilities, available, nesting, lambdas)?;
    let n_alt = utilities.len();
    let n_nests = nesting.n_nests();
    // P(j | nest) and marginal P(j)
    let mut within = vec![0.0; n_alt];
    let mut marginal = vec![0.0; n_alt];
    for j in (0..n_alt).filter(|&j| available[j]) {
        let k = nesting.of_alternative[j];
        within[j] = (utilities[j] / lambdas[k] - terms.inclusive[k]).exp();
        marginal[j] = within[j] * terms.log_nest_prob[k].exp();
    }
    let m = nesting.of_alternative[chosen];
    let lm = lambdas[m];

    let mut d_util = vec![0.0; n_alt];
    for j in (0..n_alt).filter(|&j| available[j]) {
        let mut g = -marginal[j];
        if nesting.of_alternative[j] == m {
            g += within[j] * (1.0 - 1.0 / lm);
            if j == chosen {
                g += 1.0 / lm;
            }
        }
        d_util[j] = g;
    }

    // dI_k/dlambda_k = -sum_{j in k} P(j|k) u_j / lambda_k^2
    let mut d_lambda = vec![0.0; n_nests];
    for k in 0..n_nests {
        if terms.inclusive[k] == f64::NEG_INFINITY {
            continue;
        }
        let lk = lambdas[k];
        let d_inc: f64 = -nesting.members[k]
            .iter()
            .filter(|&&j| available[j])
            .map(|&j| within[j] * utilities[j])
            .sum::<f64>()
            / (lk * lk);
        let upper = terms.inclusive[k] + lk * d_inc;
        let mut g = -terms.log_nest_prob[k].exp() * upper;
        if k == m {
            g += -utilities[chosen] / (lk * lk) - d_inc + upper;
        }
        d_lambda[k] = g;
    }

    let log_prob = utilities[chosen] / lm - terms.inclusive[m] + terms.log_nest_prob[m];
    Ok(KernelGradient {
        log_prob,
        utilities: d_util,
        lambdas: d_lambda,
    })
}
