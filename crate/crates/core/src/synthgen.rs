//! Synthetic panels with known ground truth, and the direct-arithmetic
//! oracles the test suites compare against.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ChoiceDataset, IndicatorMatrix, RespondentRecord, Situation};
use crate::error::{Error, Result};
use crate::kernels::{mnl_log_probs, nl_log_probs, AttributeTerm, Constraint, Kernel, UtilitySpec};
use crate::lccm::{fit_from, EstimationOptions, ModelSpec, Params};

/// Distribution of one attribute (or covariate) value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeLaw {
    /// Uniform draw from a discrete level set.
    Levels(Vec<f64>),
    Uniform {
        low: f64,
        high: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    Constant(f64),
}

impl AttributeLaw {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            AttributeLaw::Levels(levels) => levels[rng.random_range(0..levels.len())],
            AttributeLaw::Uniform { low, high } => rng.random_range(*low..*high),
            AttributeLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            AttributeLaw::Constant(v) => *v,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match self {
            AttributeLaw::Levels(l) => !l.is_empty() && l.iter().all(|v| v.is_finite()),
            AttributeLaw::Uniform { low, high } => {
                low < high && low.is_finite() && high.is_finite()
            }
            AttributeLaw::Normal { mean, sd } => mean.is_finite() && *sd >= 0.0 && sd.is_finite(),
            AttributeLaw::Constant(v) => v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid law for `{what}`")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub law: AttributeLaw,
    /// Alternative-specific laws overriding `law`.
    #[serde(default)]
    pub per_alternative: BTreeMap<String, AttributeLaw>,
}

impl AttributeSpec {
    pub fn new(name: &str, law: AttributeLaw) -> Self {
        Self {
            name: name.to_string(),
            law,
            per_alternative: BTreeMap::new(),
        }
    }
}

/// Respondent covariate entering the membership model; also emitted as an indicator column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub law: AttributeLaw,
}

/// Class-dependent indicators: `mu_c + sigma * noise`, optionally rounded to the scale grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorLaw {
    pub names: Vec<String>,
    /// `C x K` class means.
    pub class_means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub scale: (f64, f64),
    /// Round to integers and clamp to `scale`; otherwise values stay continuous and unbounded.
    #[serde(default = "yes")]
    pub discretize: bool,
}

fn yes() -> bool {
    true
}

/// Common-factor noise for the indicators: `noise = L f + psi e` with unit-variance items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMode {
    /// `K x F` standardised loadings; row sums of squares at most one.
    pub loadings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub spec: ModelSpec,
    pub true_params: Params,
    pub n_respondents: usize,
    pub n_situations: usize,
    pub alternatives: Vec<String>,
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub indicators: Option<IndicatorLaw>,
    #[serde(default)]
    pub factor_mode: Option<FactorMode>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub choices: ChoiceDataset,
    /// Covariate columns followed by class-driven indicator columns.
    pub indicators: IndicatorMatrix,
    /// True class of each respondent.
    pub classes: Vec<usize>,
    /// True common factors per respondent, when factor mode is on.
    pub factors: Option<Vec<Vec<f64>>>,
}

/// Seed, truth and labels of a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: ModelSpec,
    pub true_params: Params,
    pub respondent_ids: Vec<String>,
    pub classes: Vec<usize>,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.true_params.check_shape(&self.spec)?;
        if self.n_respondents == 0 || self.n_situations == 0 {
            return Err(Error::InvalidSpec(
                "need at least one respondent and one situation".into(),
            ));
        }
        if self.alternatives.len() < 2 {
            return Err(Error::InvalidSpec("need at least two alternatives".into()));
        }
        for a in &self.attributes {
            a.law.validate(&a.name)?;
            for (alt, law) in &a.per_alternative {
                if !self.alternatives.contains(alt) {
                    return Err(Error::UnknownName(alt.clone()));
                }
                law.validate(&a.name)?;
            }
        }
        for c in &self.covariates {
            c.law.validate(&c.name)?;
        }
        for name in &self.spec.membership_covariates {
            if !self.covariates.iter().any(|c| &c.name == name) {
                return Err(Error::UnknownName(name.clone()));
            }
        }
        if let Some(law) = &self.indicators {
            let k = law.names.len();
            if law.class_means.len() != self.spec.n_classes
                || law.class_means.iter().any(|m| m.len() != k)
            {
                return Err(Error::Shape("indicator means must be C x K".into()));
            }
            if law.sigma <= 0.0 {
                return Err(Error::InvalidSpec(
                    "indicator sigma must be positive".into(),
                ));
            }
            let (lo, hi) = law.scale;
            if law.class_means.iter().flatten().any(|m| *m < lo || *m > hi) {
                return Err(Error::InvalidSpec(
                    "indicator means must lie within the scale".into(),
                ));
            }
            if let Some(f) = &self.factor_mode {
                if f.loadings.len() != k {
                    return Err(Error::Shape(
                        "factor loadings must have one row per indicator".into(),
                    ));
                }
                if f.loadings
                    .iter()
                    .any(|r| r.iter().map(|v| v * v).sum::<f64>() > 1.0 + 1e-12)
                {
                    return Err(Error::InvalidSpec(
                        "loading row sums of squares exceed one".into(),
                    ));
                }
            }
        } else if self.factor_mode.is_some() {
            return Err(Error::InvalidSpec(
                "factor mode needs an indicator law".into(),
            ));
        }
        Ok(())
    }
}

struct Draw {
    record: RespondentRecord,
    class: usize,
    indicators: Vec<f64>,
    factors: Vec<f64>,
}

fn softmax_draw(rng: &mut ChaCha8Rng, log_probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding slack: last alternative with positive probability
    log_probs.iter().rposition(|lp| lp.is_finite()).unwrap_or(0)
}

/// Draws a panel. Each respondent uses its own counter-based stream, so the
/// output does not depend on the thread count.
pub fn generate(g: &GeneratorSpec) -> Result<Generated> {
    g.validate()?;
    let spec = &g.spec;
    let attr_names: Vec<String> = g.attributes.iter().map(|a| a.name.clone()).collect();
    let term_attr = spec
        .utility
        .attributes
        .iter()
        .map(|t| {
            attr_names
                .iter()
                .position(|a| a == &t.attribute)
                .ok_or_else(|| Error::UnknownName(t.attribute.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let asc_alt = spec
        .utility
        .constants
        .iter()
        .map(|c| {
            g.alternatives
                .iter()
                .position(|a| a == &c.alternative)
                .ok_or_else(|| Error::UnknownName(c.alternative.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let nesting = match &spec.kernel {
        Kernel::Mnl => None,
        Kernel::Nested(n) => Some(n.resolve(&g.alternatives)?),
    };
    let cov_idx: Vec<usize> = spec
        .membership_covariates
        .iter()
        .map(|name| {
            g.covariates
                .iter()
                .position(|c| &c.name == name)
                .unwrap_or(0)
        })
        .collect();
    let laws: Vec<Vec<&AttributeLaw>> = g
        .alternatives
        .iter()
        .map(|alt| {
            g.attributes
                .iter()
                .map(|a| a.per_alternative.get(alt).unwrap_or(&a.law))
                .collect()
        })
        .collect();
    let j_n = g.alternatives.len();
    let a_n = g.attributes.len();
    let n_terms = spec.utility.attributes.len();
    let p = &g.true_params;

    let draws: Vec<Draw> = (0..g.n_respondents)
        .into_par_iter()
        .map(|n| -> Result<Draw> {
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            rng.set_stream(n as u64);
            let covariates: Vec<f64> = g.covariates.iter().map(|c| c.law.draw(&mut rng)).collect();
            let design: Vec<f64> = std::iter::once(1.0)
                .chain(cov_idx.iter().map(|&i| covariates[i]))
                .collect();
            let scores: Vec<f64> = p
                .alpha
                .iter()
                .map(|a| a.iter().zip(&design).map(|(x, z)| x * z).sum())
                .collect();
            let norm = crate::kernels::log_sum_exp(&scores);
            let priors: Vec<f64> = scores.iter().map(|s| s - norm).collect();
            let class = softmax_draw(&mut rng, &priors);
            let beta = &p.beta[class];

            let mut situations = Vec::with_capacity(g.n_situations);
            for t in 0..g.n_situations {
                let mut attributes = Vec::with_capacity(j_n * a_n);
                for alt_laws in &laws {
                    for law in alt_laws {
                        attributes.push(law.draw(&mut rng));
                    }
                }
                let utilities: Vec<f64> = (0..j_n)
                    .map(|j| {
                        let row = &attributes[j * a_n..(j + 1) * a_n];
                        let mut v: f64 = term_attr.iter().zip(beta).map(|(&a, b)| row[a] * b).sum();
                        for (k, &alt) in asc_alt.iter().enumerate() {
                            if alt == j {
                                v += beta[n_terms + k];
                            }
                        }
                        v
                    })
                    .collect();
                let available = vec![true; j_n];
                let lp = match &nesting {
                    None => mnl_log_probs(&utilities, &available)?,
                    Some(nest) => nl_log_probs(&utilities, &available, nest, &p.lambdas[class])?,
                };
                let chosen = softmax_draw(&mut rng, &lp);
                situations.push(Situation {
                    id: (t + 1).to_string(),
                    attributes,
                    available,
                    chosen,
                });
            }

            let mut indicators = covariates.clone();
            let mut factors = Vec::new();
            if let Some(law) = &g.indicators {
                let k_n = law.names.len();
                let noise: Vec<f64> = match &g.factor_mode {
                    None => (0..k_n)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    Some(fm) => {
                        let f_n = fm.loadings.first().map_or(0, |r| r.len());
                        factors = (0..f_n)
                            .map(|_| rng.sample::<f64, _>(StandardNormal))
                            .collect();
                        fm.loadings
                            .iter()
                            .map(|row| {
                                let common: f64 =
                                    row.iter().zip(&factors).map(|(l, f)| l * f).sum();
                                let psi = (1.0 - row.iter().map(|l| l * l).sum::<f64>())
                                    .max(0.0)
                                    .sqrt();
                                common + psi * rng.sample::<f64, _>(StandardNormal)
                            })
                            .collect()
                    }
                };
                for (k, e) in noise.iter().enumerate() {
                    let x = law.class_means[class][k] + law.sigma * e;
                    indicators.push(if law.discretize {
                        x.round().clamp(law.scale.0, law.scale.1)
                    } else {
                        x
                    });
                }
            }
            Ok(Draw {
                record: RespondentRecord {
                    id: (n + 1).to_string(),
                    situations,
                    covariates,
                },
                class,
                indicators,
                factors,
            })
        })
        .collect::<Result<_>>()?;

    let mut indicator_names: Vec<String> = g.covariates.iter().map(|c| c.name.clone()).collect();
    let mut scale = (f64::NEG_INFINITY, f64::INFINITY);
    if let Some(law) = &g.indicators {
        indicator_names.extend(law.names.iter().cloned());
        if law.discretize && g.covariates.is_empty() {
            scale = law.scale;
        }
    }
    let ids: Vec<String> = draws.iter().map(|d| d.record.id.clone()).collect();
    let indicators = IndicatorMatrix::from_rows(
        ids,
        indicator_names,
        draws
            .iter()
            .map(|d| d.indicators.iter().map(|&v| Some(v)).collect())
            .collect(),
        scale,
    )?;
    let classes = draws.iter().map(|d| d.class).collect();
    let factors = g
        .factor_mode
        .as_ref()
        .map(|_| draws.iter().map(|d| d.factors.clone()).collect());
    let choices = ChoiceDataset::new(
        draws.into_iter().map(|d| d.record).collect(),
        attr_names,
        g.alternatives.clone(),
        g.covariates.iter().map(|c| c.name.clone()).collect(),
    )?;
    Ok(Generated {
        choices,
        indicators,
        classes,
        factors,
    })
}

impl Generated {
    pub fn ground_truth(&self, g: &GeneratorSpec) -> GroundTruth {
        GroundTruth {
            seed: g.seed,
            spec: g.spec.clone(),
            true_params: g.true_params.clone(),
            respondent_ids: self.choices.respondent_ids(),
            classes: self.classes.clone(),
        }
    }
}

pub const BRUTE_FORCE_MAX_RESPONDENTS: usize = 20;
pub const BRUTE_FORCE_MAX_SITUATIONS: usize = 5;
pub const BRUTE_FORCE_MAX_CLASSES: usize = 4;

fn guard(data: &ChoiceDataset, spec: &ModelSpec) -> Result<()> {
    let t_max = data
        .respondents
        .iter()
        .map(|r| r.situations.len())
        .max()
        .unwrap_or(0);
    if data.n_respondents() > BRUTE_FORCE_MAX_RESPONDENTS
        || t_max > BRUTE_FORCE_MAX_SITUATIONS
        || spec.n_classes > BRUTE_FORCE_MAX_CLASSES
    {
        return Err(Error::TooLarge(format!(
            "N={}, T={}, C={} (limits {}, {}, {})",
            data.n_respondents(),
            t_max,
            spec.n_classes,
            BRUTE_FORCE_MAX_RESPONDENTS,
            BRUTE_FORCE_MAX_SITUATIONS,
            BRUTE_FORCE_MAX_CLASSES
        )));
    }
    Ok(())
}

/// Class-conditional probability of each alternative by direct exponentiation.
fn naive_probs(
    data: &ChoiceDataset,
    spec: &ModelSpec,
    s: &Situation,
    beta: &[f64],
    lambdas: &[f64],
) -> Result<Vec<f64>> {
    let a_n = data.n_attributes();
    let j_n = data.n_alternatives();
    let mut u = vec![0.0; j_n];
    for (j, uj) in u.iter_mut().enumerate() {
        for (t, term) in spec.utility.attributes.iter().enumerate() {
            let a = data
                .attribute_index(&term.attribute)
                .ok_or_else(|| Error::UnknownName(term.attribute.clone()))?;
            *uj += beta[t] * s.attributes[j * a_n + a];
        }
        for (k, c) in spec.utility.constants.iter().enumerate() {
            if data.alternative_ids[j] == c.alternative {
                *uj += beta[spec.utility.attributes.len() + k];
            }
        }
    }
    let e: Vec<f64> = (0..j_n)
        .map(|j| if s.available[j] { u[j].exp() } else { 0.0 })
        .collect();
    match &spec.kernel {
        Kernel::Mnl => {
            let total: f64 = e.iter().sum();
            Ok(e.iter().map(|v| v / total).collect())
        }
        Kernel::Nested(nests) => {
            let mut nest_sum = Vec::new();
            let mut nest_of = vec![0; j_n];
            for (k, nest) in nests.nests.iter().enumerate() {
                let mut sum = 0.0;
                for alt in &nest.alternatives {
                    let j = data
                        .alternative_index(alt)
                        .ok_or_else(|| Error::UnknownName(alt.clone()))?;
                    nest_of[j] = k;
                    if s.available[j] {
                        sum += (u[j] / lambdas[k]).exp();
                    }
                }
                nest_sum.push(sum);
            }
            let denom: f64 = nest_sum.iter().zip(lambdas).map(|(s, l)| s.powf(*l)).sum();
            Ok((0..j_n)
                .map(|j| {
                    if !s.available[j] {
                        return 0.0;
                    }
                    let k = nest_of[j];
                    (u[j] / lambdas[k]).exp() / nest_sum[k] * nest_sum[k].powf(lambdas[k]) / denom
                })
                .collect())
        }
    }
}

fn naive_joint(data: &ChoiceDataset, params: &Params, spec: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    guard(data, spec)?;
    params.check_shape(spec)?;
    data.respondents
        .iter()
        .map(|r| {
            let z: Vec<f64> = std::iter::once(1.0)
                .chain(spec.membership_covariates.iter().map(|name| {
                    let i = data.covariate_index(name).unwrap_or(usize::MAX);
                    r.covariates.get(i).copied().unwrap_or(f64::NAN)
                }))
                .collect();
            let weights: Vec<f64> = params
                .alpha
                .iter()
                .map(|a| a.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>().exp())
                .collect();
            let total: f64 = weights.iter().sum();
            (0..spec.n_classes)
                .map(|c| {
                    let mut prod = weights[c] / total;
                    for s in &r.situations {
                        prod *= naive_probs(data, spec, s, &params.beta[c], &params.lambdas[c])?
                            [s.chosen];
                    }
                    Ok(prod)
                })
                .collect()
        })
        .collect()
}

/// `sum_c P(c) prod_t P(y_nt | c)` per respondent, in plain arithmetic.
pub fn brute_force_marginal(
    data: &ChoiceDataset,
    params: &Params,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    Ok(naive_joint(data, params, spec)?
        .iter()
        .map(|j| j.iter().sum())
        .collect())
}

/// Bayes posterior per respondent, in plain arithmetic.
pub fn brute_force_posterior(
    data: &ChoiceDataset,
    params: &Params,
    spec: &ModelSpec,
) -> Result<Vec<Vec<f64>>> {
    Ok(naive_joint(data, params, spec)?
        .into_iter()
        .map(|j| {
            let total: f64 = j.iter().sum();
            j.iter().map(|v| v / total).collect()
        })
        .collect())
}

/// Central differences with step `step * max(1, |x_i|)` per coordinate.
pub fn finite_diff_gradient<F>(mut objective: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = step * point[i].abs().max(1.0);
        x[i] = point[i] + h;
        let up = objective(&x);
        x[i] = point[i] - h;
        let down = objective(&x);
        x[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Textbook one-way ANOVA F over groups of observations.
pub fn classical_anova_f(groups: &[Vec<f64>]) -> f64 {
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        between += g.len() as f64 * (m - grand).powi(2);
        within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    (between / (groups.len() - 1) as f64) / (within / (n - groups.len()) as f64)
}

/// Textbook Welch two-sample t and Welch–Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v / n, n)
    };
    let (ma, sa, na) = stats(a);
    let (mb, sb, nb) = stats(b);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    (t, df)
}

/// Multinomial logit of hard class labels on covariates, fitted as a
/// one-class choice model whose alternatives are the classes.
///
/// Returns `C x (1 + P)` coefficients with a zero `reference` row.
pub fn hard_label_mnl(
    labels: &[usize],
    covariates: &[Vec<f64>],
    n_classes: usize,
    reference: usize,
) -> Result<Vec<Vec<f64>>> {
    let p = covariates.first().map_or(0, |r| r.len());
    let d = p + 1;
    let free: Vec<usize> = (0..n_classes).filter(|&c| c != reference).collect();
    let names: Vec<String> = free
        .iter()
        .flat_map(|c| (0..d).map(move |i| format!("x_{c}_{i}")))
        .collect();
    let alternatives: Vec<String> = (0..n_classes).map(|c| c.to_string()).collect();
    let a_n = names.len();
    let respondents = labels
        .iter()
        .zip(covariates)
        .enumerate()
        .map(|(n, (&label, x))| {
            let design: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
            let mut attributes = vec![0.0; n_classes * a_n];
            for (f, &c) in free.iter().enumerate() {
                for i in 0..d {
                    attributes[c * a_n + f * d + i] = design[i];
                }
            }
            RespondentRecord {
                id: (n + 1).to_string(),
                situations: vec![Situation {
                    id: "1".into(),
                    attributes,
                    available: vec![true; n_classes],
                    chosen: label,
                }],
                covariates: Vec::new(),
            }
        })
        .collect();
    let data = ChoiceDataset::new(respondents, names.clone(), alternatives, Vec::new())?;
    let spec = ModelSpec {
        n_classes: 1,
        kernel: Kernel::Mnl,
        utility: UtilitySpec {
            attributes: names
                .iter()
                .map(|n| AttributeTerm {
                    attribute: n.clone(),
                    constraint: Constraint::Free,
                })
                .collect(),
            constants: Vec::new(),
        },
        membership_covariates: Vec::new(),
        reference_class: 0,
    };
    let options = EstimationOptions {
        n_starts: 1,
        polish_iter: 500,
        grad_tol: 1e-10,
        ..EstimationOptions::default()
    };
    let fit = fit_from(&data, &spec, &Params::initial(&spec), &options)?;
    let mut gamma = vec![vec![0.0; d]; n_classes];
    for (f, &c) in free.iter().enumerate() {
        gamma[c].copy_from_slice(&fit.params.beta[0][f * d..(f + 1) * d]);
    }
    Ok(gamma)
}
