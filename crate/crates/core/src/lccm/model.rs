//! Likelihood of a model specification bound to a dataset.

use rayon::prelude::*;

use crate::dataset::{ChoiceDataset, RespondentRecord, Situation};
use crate::error::{Error, Result};
use crate::kernels::{kernel_gradient, log_sum_exp, mnl_log_probs, nl_log_probs, Kernel, Nesting};

use super::spec::{ModelSpec, Params};

/// A [`ModelSpec`] with names resolved against a dataset's columns.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub spec: ModelSpec,
    attr_cols: Vec<usize>,
    asc_alts: Vec<usize>,
    cov_cols: Vec<usize>,
    nesting: Option<Nesting>,
    n_attributes: usize,
    n_alternatives: usize,
}

/// Per-respondent ingredients of the mixture likelihood.
#[derive(Debug, Clone)]
pub struct RespondentTerms {
    pub log_prior: Vec<f64>,
    /// `sum_t log P(y_nt | c)` per class.
    pub class_loglik: Vec<f64>,
}

impl RespondentTerms {
    pub fn joint(&self) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(&self.class_loglik)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn loglik(&self) -> f64 {
        log_sum_exp(&self.joint())
    }

    /// Posterior class probabilities.
    pub fn posterior(&self) -> Vec<f64> {
        softmax(&self.joint())
    }
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(xs);
    xs.iter().map(|x| (x - norm).exp()).collect()
}

/// Gradient of one class's sequence log-likelihood.
#[derive(Debug, Clone)]
pub(crate) struct ClassGradient {
    pub loglik: f64,
    pub beta: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl CompiledModel {
    pub fn new(spec: &ModelSpec, data: &ChoiceDataset) -> Result<Self> {
        spec.validate()?;
        let attr_cols = spec
            .utility
            .attributes
            .iter()
            .map(|t| {
                data.attribute_index(&t.attribute)
                    .ok_or_else(|| Error::UnknownName(t.attribute.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let asc_alts = spec
            .utility
            .constants
            .iter()
            .map(|c| {
                data.alternative_index(&c.alternative)
                    .ok_or_else(|| Error::UnknownName(c.alternative.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        if !spec.utility.constants.is_empty()
            && asc_alts.len() >= data.n_alternatives()
            && !spec
                .utility
                .constants
                .iter()
                .any(|c| c.constraint == crate::kernels::Constraint::Fixed(0.0))
        {
            return Err(Error::InvalidSpec(
                "constants on every alternative need one fixed to zero as reference".into(),
            ));
        }
        let cov_cols = spec
            .membership_covariates
            .iter()
            .map(|c| {
                data.covariate_index(c)
                    .ok_or_else(|| Error::UnknownName(c.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let nesting = match &spec.kernel {
            Kernel::Mnl => None,
            Kernel::Nested(n) => Some(n.resolve(&data.alternative_ids)?),
        };
        Ok(Self {
            spec: spec.clone(),
            attr_cols,
            asc_alts,
            cov_cols,
            nesting,
            n_attributes: data.n_attributes(),
            n_alternatives: data.n_alternatives(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn nesting(&self) -> Option<&Nesting> {
        self.nesting.as_ref()
    }

    /// Systematic utilities of every alternative in a situation.
    pub fn utilities(&self, s: &Situation, beta: &[f64]) -> Vec<f64> {
        let n_terms = self.attr_cols.len();
        (0..self.n_alternatives)
            .map(|j| {
                let row = s.attribute_row(j, self.n_attributes);
                let mut v: f64 = self
                    .attr_cols
                    .iter()
                    .zip(beta)
                    .map(|(&a, b)| row[a] * b)
                    .sum();
                for (k, &alt) in self.asc_alts.iter().enumerate() {
                    if alt == j {
                        v += beta[n_terms + k];
                    }
                }
                v
            })
            .collect()
    }

    /// Class-conditional log-probabilities of every alternative.
    pub fn situation_log_probs(
        &self,
        s: &Situation,
        beta: &[f64],
        lambdas: &[f64],
    ) -> Result<Vec<f64>> {
        let u = self.utilities(s, beta);
        match &self.nesting {
            None => mnl_log_probs(&u, &s.available),
            Some(n) => nl_log_probs(&u, &s.available, n, lambdas),
        }
    }

    /// `sum_t log P(y_nt | c)` for one class's coefficients.
    pub fn class_sequence_loglik(
        &self,
        r: &RespondentRecord,
        beta: &[f64],
        lambdas: &[f64],
    ) -> Result<f64> {
        let mut total = 0.0;
        for s in &r.situations {
            let lp = self.situation_log_probs(s, beta, lambdas)?;
            total += lp[s.chosen];
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "class log-likelihood of `{}`",
                r.id
            )));
        }
        Ok(total)
    }

    pub(crate) fn class_sequence_gradient(
        &self,
        r: &RespondentRecord,
        beta: &[f64],
        lambdas: &[f64],
    ) -> Result<ClassGradient> {
        let n_terms = beta.len();
        let n_attr_terms = self.attr_cols.len();
        let mut out = ClassGradient {
            loglik: 0.0,
            beta: vec![0.0; n_terms],
            lambdas: vec![0.0; lambdas.len()],
        };
        for s in &r.situations {
            let u = self.utilities(s, beta);
            let g = kernel_gradient(
                &u,
                &s.available,
                self.nesting.as_ref().map(|n| (n, lambdas)),
                s.chosen,
            )?;
            out.loglik += g.log_prob;
            for (j, &du) in g.utilities.iter().enumerate() {
                if du == 0.0 {
                    continue;
                }
                let row = s.attribute_row(j, self.n_attributes);
                for (t, &a) in self.attr_cols.iter().enumerate() {
                    out.beta[t] += du * row[a];
                }
                for (k, &alt) in self.asc_alts.iter().enumerate() {
                    if alt == j {
                        out.beta[n_attr_terms + k] += du;
                    }
                }
            }
            for (acc, d) in out.lambdas.iter_mut().zip(&g.lambdas) {
                *acc += d;
            }
        }
        if !out.loglik.is_finite() {
            return Err(Error::NonFinite(format!(
                "class log-likelihood of `{}`",
                r.id
            )));
        }
        Ok(out)
    }

    /// Membership design row `[1, z_n...]`.
    pub fn design_row(&self, r: &RespondentRecord) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.cov_cols.iter().map(|&c| r.covariates[c]))
            .collect()
    }

    pub fn log_priors(&self, design: &[f64], alpha: &[Vec<f64>]) -> Vec<f64> {
        let scores: Vec<f64> = alpha
            .iter()
            .map(|a| a.iter().zip(design).map(|(x, z)| x * z).sum())
            .collect();
        let norm = log_sum_exp(&scores);
        scores.iter().map(|s| s - norm).collect()
    }

    pub fn respondent_terms(
        &self,
        r: &RespondentRecord,
        params: &Params,
    ) -> Result<RespondentTerms> {
        let log_prior = self.log_priors(&self.design_row(r), &params.alpha);
        let class_loglik = (0..self.n_classes())
            .map(|c| self.class_sequence_loglik(r, &params.beta[c], &params.lambdas[c]))
            .collect::<Result<Vec<_>>>()?;
        Ok(RespondentTerms {
            log_prior,
            class_loglik,
        })
    }

    pub fn all_terms(&self, data: &ChoiceDataset, params: &Params) -> Result<Vec<RespondentTerms>> {
        data.respondents
            .par_iter()
            .map(|r| self.respondent_terms(r, params))
            .collect()
    }

    /// Per-respondent log-likelihood contributions, in dataset order.
    pub fn respondent_logliks(&self, data: &ChoiceDataset, params: &Params) -> Result<Vec<f64>> {
        Ok(self
            .all_terms(data, params)?
            .iter()
            .map(|t| t.loglik())
            .collect())
    }

    /// `sum_n log sum_c P(c) P(y_n | c)`, summed in dataset order.
    pub fn marginal_loglik(&self, data: &ChoiceDataset, params: &Params) -> Result<f64> {
        Ok(self.respondent_logliks(data, params)?.iter().sum())
    }

    /// Log-likelihood and its gradient with respect to every natural parameter.
    pub fn loglik_gradient(&self, data: &ChoiceDataset, params: &Params) -> Result<(f64, Params)> {
        let c_n = self.n_classes();
        let parts = data
            .respondents
            .par_iter()
            .map(|r| -> Result<(f64, Params)> {
                let design = self.design_row(r);
                let log_prior = self.log_priors(&design, &params.alpha);
                let grads = (0..c_n)
                    .map(|c| self.class_sequence_gradient(r, &params.beta[c], &params.lambdas[c]))
                    .collect::<Result<Vec<_>>>()?;
                let joint: Vec<f64> = log_prior
                    .iter()
                    .zip(&grads)
                    .map(|(p, g)| p + g.loglik)
                    .collect();
                let ll = log_sum_exp(&joint);
                let post: Vec<f64> = joint.iter().map(|j| (j - ll).exp()).collect();
                let prior: Vec<f64> = log_prior.iter().map(|p| p.exp()).collect();
                let alpha = (0..c_n)
                    .map(|c| design.iter().map(|z| (post[c] - prior[c]) * z).collect())
                    .collect();
                let beta = grads
                    .iter()
                    .zip(&post)
                    .map(|(g, h)| g.beta.iter().map(|d| h * d).collect())
                    .collect();
                let lambdas = grads
                    .iter()
                    .zip(&post)
                    .map(|(g, h)| g.lambdas.iter().map(|d| h * d).collect())
                    .collect();
                Ok((
                    ll,
                    Params {
                        alpha,
                        beta,
                        lambdas,
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut grad = Params::filled(&self.spec, 0.0);
        for (ll, g) in &parts {
            total += ll;
            add_into(&mut grad, g);
        }
        Ok((total, grad))
    }

    /// Equal-shares baseline: `sum over situations of log(1 / J_available)`.
    pub fn null_loglik(data: &ChoiceDataset) -> f64 {
        data.respondents
            .iter()
            .flat_map(|r| r.situations.iter())
            .map(|s| -(s.n_available() as f64).ln())
            .sum()
    }
}

pub(crate) fn add_into(acc: &mut Params, g: &Params) {
    for (a, b) in acc.alpha.iter_mut().zip(&g.alpha) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    for (a, b) in acc.beta.iter_mut().zip(&g.beta) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    for (a, b) in acc.lambdas.iter_mut().zip(&g.lambdas) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}
