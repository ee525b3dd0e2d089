//! Mapping between constrained natural parameters and the unconstrained
//! vector seen by the optimiser.

use serde::{Deserialize, Serialize};

use crate::kernels::{Constraint, Kernel};

use super::spec::{ModelSpec, ParamTable, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Alpha { class: usize, col: usize },
    Beta { class: usize, term: usize },
    Lambda { class: usize, nest: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Identity,
    /// `value = exp(theta)`
    Exp,
    /// `value = -exp(theta)`
    NegExp,
    /// `value = 1 / (1 + exp(-theta))`
    Logistic,
}

const FLOOR: f64 = 1e-12;

impl Transform {
    fn forward(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Exp => theta.exp(),
            Transform::NegExp => -theta.exp(),
            Transform::Logistic => 1.0 / (1.0 + (-theta).exp()),
        }
    }

    fn inverse(self, value: f64) -> f64 {
        match self {
            Transform::Identity => value,
            Transform::Exp => value.max(FLOOR).ln(),
            Transform::NegExp => (-value).max(FLOOR).ln(),
            Transform::Logistic => {
                let v = value.clamp(FLOOR, 1.0 - 1e-10);
                (v / (1.0 - v)).ln()
            }
        }
    }

    /// d value / d theta expressed through the value.
    fn derivative(self, value: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Exp | Transform::NegExp => value,
            Transform::Logistic => value * (1.0 - value),
        }
    }
}

/// Which parameter blocks a layout exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blocks {
    All,
    Membership,
    /// Utility and nesting parameters of one class.
    Class(usize),
}

/// Ordered list of free parameters.
#[derive(Debug, Clone)]
pub struct Layout {
    slots: Vec<(Slot, Transform)>,
}

impl Layout {
    /// Free slots of `spec`, skipping the reference membership row, fixed
    /// coefficients, fixed nesting parameters and entries in `bound_fixed`.
    pub fn new(spec: &ModelSpec, bound_fixed: &ParamTable<bool>, blocks: Blocks) -> Self {
        let mut slots = Vec::new();
        let wants = |class: usize, membership: bool| match blocks {
            Blocks::All => true,
            Blocks::Membership => membership,
            Blocks::Class(c) => !membership && c == class,
        };
        for class in 0..spec.n_classes {
            if class == spec.reference_class || !wants(class, true) {
                continue;
            }
            for col in 0..spec.n_membership() {
                slots.push((Slot::Alpha { class, col }, Transform::Identity));
            }
        }
        let constraints = spec.utility.constraints();
        for class in 0..spec.n_classes {
            if !wants(class, false) {
                continue;
            }
            for (term, c) in constraints.iter().enumerate() {
                if bound_fixed.beta[class][term] {
                    continue;
                }
                let t = match c {
                    Constraint::Free => Transform::Identity,
                    Constraint::NonNegative => Transform::Exp,
                    Constraint::NonPositive => Transform::NegExp,
                    Constraint::Fixed(_) => continue,
                };
                slots.push((Slot::Beta { class, term }, t));
            }
            if let Kernel::Nested(n) = &spec.kernel {
                for nest in 0..n.nests.len() {
                    if n.is_free(nest) && !bound_fixed.lambdas[class][nest] {
                        slots.push((Slot::Lambda { class, nest }, Transform::Logistic));
                    }
                }
            }
        }
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.slots.iter().map(|(s, _)| *s)
    }

    fn get(p: &Params, slot: Slot) -> f64 {
        match slot {
            Slot::Alpha { class, col } => p.alpha[class][col],
            Slot::Beta { class, term } => p.beta[class][term],
            Slot::Lambda { class, nest } => p.lambdas[class][nest],
        }
    }

    fn set(p: &mut Params, slot: Slot, v: f64) {
        match slot {
            Slot::Alpha { class, col } => p.alpha[class][col] = v,
            Slot::Beta { class, term } => p.beta[class][term] = v,
            Slot::Lambda { class, nest } => p.lambdas[class][nest] = v,
        }
    }

    pub fn to_theta(&self, p: &Params) -> Vec<f64> {
        self.slots
            .iter()
            .map(|&(s, t)| t.inverse(Self::get(p, s)))
            .collect()
    }

    /// Copy of `base` with free slots set from `theta`.
    pub fn from_theta(&self, theta: &[f64], base: &Params) -> Params {
        let mut p = base.clone();
        for (&(s, t), &x) in self.slots.iter().zip(theta) {
            Self::set(&mut p, s, t.forward(x));
        }
        p
    }

    /// Chain rule from a natural-parameter gradient to theta.
    pub fn theta_gradient(&self, p: &Params, natural: &Params) -> Vec<f64> {
        self.slots
            .iter()
            .map(|&(s, t)| Self::get(natural, s) * t.derivative(Self::get(p, s)))
            .collect()
    }

    /// Natural values of the free slots.
    pub fn natural(&self, p: &Params) -> Vec<f64> {
        self.slots.iter().map(|&(s, _)| Self::get(p, s)).collect()
    }

    pub fn natural_gradient(&self, natural: &Params) -> Vec<f64> {
        self.slots
            .iter()
            .map(|&(s, _)| Self::get(natural, s))
            .collect()
    }

    pub fn with_natural(&self, values: &[f64], base: &Params) -> Params {
        let mut p = base.clone();
        for (&(s, _), &v) in self.slots.iter().zip(values) {
            Self::set(&mut p, s, v);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{AttributeTerm, UtilitySpec};

    fn spec() -> ModelSpec {
        ModelSpec {
            n_classes: 2,
            kernel: Kernel::Mnl,
            utility: UtilitySpec {
                attributes: vec![
                    AttributeTerm {
                        attribute: "a".into(),
                        constraint: Constraint::Free,
                    },
                    AttributeTerm {
                        attribute: "b".into(),
                        constraint: Constraint::NonNegative,
                    },
                    AttributeTerm {
                        attribute: "c".into(),
                        constraint: Constraint::Fixed(2.0),
                    },
                ],
                constants: vec![],
            },
            membership_covariates: vec![],
            reference_class: 0,
        }
    }

    #[test]
    fn skips_reference_and_fixed() {
        let s = spec();
        let l = Layout::new(&s, &ParamTable::filled(&s, false), Blocks::All);
        // one alpha (class 1 constant) + 2 free betas per class
        assert_eq!(l.len(), 5);
        let mut bound = ParamTable::filled(&s, false);
        bound.beta[1][1] = true;
        assert_eq!(Layout::new(&s, &bound, Blocks::All).len(), 4);
        assert_eq!(Layout::new(&s, &bound, Blocks::Class(1)).len(), 1);
        assert_eq!(Layout::new(&s, &bound, Blocks::Membership).len(), 1);
    }

    #[test]
    fn theta_round_trip() {
        let s = spec();
        let l = Layout::new(&s, &ParamTable::filled(&s, false), Blocks::All);
        let mut p = Params::initial(&s);
        p.alpha[1][0] = -0.4;
        p.beta[0] = vec![0.3, 1.7, 2.0];
        p.beta[1] = vec![-2.0, 0.05, 2.0];
        let back = l.from_theta(&l.to_theta(&p), &p);
        for (a, b) in back.beta.iter().flatten().zip(p.beta.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(back.alpha, p.alpha);
    }
}
