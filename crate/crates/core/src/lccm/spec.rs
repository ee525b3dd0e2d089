use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Constraint, Kernel, UtilitySpec};

/// Declarative latent class choice model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_classes: usize,
    #[serde(default)]
    pub kernel: Kernel,
    pub utility: UtilitySpec,
    /// Respondent covariates in the membership model; empty means constants only.
    #[serde(default)]
    pub membership_covariates: Vec<String>,
    /// Class whose membership coefficients are fixed to zero.
    #[serde(default)]
    pub reference_class: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::InvalidSpec("at least one class is required".into()));
        }
        if self.reference_class >= self.n_classes {
            return Err(Error::InvalidSpec(format!(
                "reference class {} out of range for {} classes",
                self.reference_class, self.n_classes
            )));
        }
        self.utility.validate()
    }

    /// Membership design width: intercept plus covariates.
    pub fn n_membership(&self) -> usize {
        1 + self.membership_covariates.len()
    }

    pub fn n_nests(&self) -> usize {
        match &self.kernel {
            Kernel::Mnl => 0,
            Kernel::Nested(n) => n.nests.len(),
        }
    }

    pub fn membership_names(&self) -> Vec<String> {
        std::iter::once("constant".to_string())
            .chain(self.membership_covariates.iter().cloned())
            .collect()
    }

    pub fn nest_names(&self) -> Vec<String> {
        match &self.kernel {
            Kernel::Mnl => Vec::new(),
            Kernel::Nested(n) => n.nests.iter().map(|n| n.name.clone()).collect(),
        }
    }
}

/// Values laid out like the model's parameters: membership, utility and nesting blocks per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTable<T> {
    /// `C x (1 + |z|)`; the reference class row is zero.
    pub alpha: Vec<Vec<T>>,
    /// `C x |utility terms|`.
    pub beta: Vec<Vec<T>>,
    /// `C x |nests|`; empty rows for MNL.
    pub lambdas: Vec<Vec<T>>,
}

pub type Params = ParamTable<f64>;

impl<T: Clone> ParamTable<T> {
    pub fn filled(spec: &ModelSpec, value: T) -> Self {
        let c = spec.n_classes;
        Self {
            alpha: vec![vec![value.clone(); spec.n_membership()]; c],
            beta: vec![vec![value.clone(); spec.utility.n_terms()]; c],
            lambdas: vec![vec![value; spec.n_nests()]; c],
        }
    }

    /// Reorders classes so that new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            alpha: order.iter().map(|&c| self.alpha[c].clone()).collect(),
            beta: order.iter().map(|&c| self.beta[c].clone()).collect(),
            lambdas: order.iter().map(|&c| self.lambdas[c].clone()).collect(),
        }
    }
}

impl Params {
    /// Zero coefficients, fixed values applied, nesting parameters at 1.
    pub fn initial(spec: &ModelSpec) -> Self {
        let mut p = Self::filled(spec, 0.0);
        for row in &mut p.beta {
            for (b, c) in row.iter_mut().zip(spec.utility.constraints()) {
                if let Constraint::Fixed(v) = c {
                    *b = v;
                }
            }
        }
        if let Kernel::Nested(n) = &spec.kernel {
            for row in &mut p.lambdas {
                for (k, l) in row.iter_mut().enumerate() {
                    *l = n.fixed_value(k);
                }
            }
        }
        p
    }

    pub fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        let c = spec.n_classes;
        let ok = self.alpha.len() == c
            && self.beta.len() == c
            && self.lambdas.len() == c
            && self.alpha.iter().all(|r| r.len() == spec.n_membership())
            && self.beta.iter().all(|r| r.len() == spec.utility.n_terms())
            && self.lambdas.iter().all(|r| r.len() == spec.n_nests());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "parameter block does not match the model specification".into(),
            ))
        }
    }

    /// Shifts membership coefficients so the reference class row is zero.
    pub fn normalize_reference(&mut self, reference: usize) {
        let base = self.alpha[reference].clone();
        for row in &mut self.alpha {
            for (a, b) in row.iter_mut().zip(&base) {
                *a -= b;
            }
        }
    }
}

/// How classes are ordered after estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    /// Descending class share.
    #[default]
    Share,
    /// Ascending compensating differential of `attribute` relative to `numeraire`.
    CompensatingDifferential {
        attribute: String,
        numeraire: String,
    },
    /// Closest match (squared distance) to the given utility coefficients.
    MatchBeta { beta: Vec<Vec<f64>> },
    /// Keep the labels produced by the optimiser.
    AsEstimated,
}
