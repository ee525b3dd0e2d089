//! Posterior class membership and posterior-weighted profiling of indicators.
//!
//! Profiling statistics treat each class's posterior probabilities as
//! respondent weights. Respondents missing the profiled value are dropped
//! from every statistic on that value.

use serde::{Deserialize, Serialize};

use crate::dataset::{ChoiceDataset, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::lccm::{CompiledModel, EstimationResult};
use crate::stats::{f_upper_tail, t_two_sided};

/// `N x C` posterior class-membership probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMatrix {
    pub respondent_ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

impl PosteriorMatrix {
    pub fn n_classes(&self) -> usize {
        self.probs.first().map_or(0, |r| r.len())
    }

    pub fn n_respondents(&self) -> usize {
        self.probs.len()
    }

    /// Posterior weights of one class.
    pub fn class_weights(&self, class: usize) -> Vec<f64> {
        self.probs.iter().map(|r| r[class]).collect()
    }

    /// Builds from 0/1 class labels.
    pub fn crisp(respondent_ids: Vec<String>, labels: &[usize], n_classes: usize) -> Self {
        let probs = labels
            .iter()
            .map(|&l| (0..n_classes).map(|c| (c == l) as u8 as f64).collect())
            .collect();
        Self {
            respondent_ids,
            probs,
        }
    }

    /// Mean posterior probability per class.
    pub fn shares(&self) -> Vec<f64> {
        let n = self.n_respondents() as f64;
        (0..self.n_classes())
            .map(|c| self.probs.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect()
    }

    /// Class with the largest posterior per respondent.
    pub fn modal_classes(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &p)| {
                        if p > best.1 {
                            (c, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    /// Reorders rows to follow `ids`.
    pub fn reorder(&self, ids: &[String]) -> Result<PosteriorMatrix> {
        let pos: std::collections::HashMap<&str, usize> = self
            .respondent_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let probs = ids
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .map(|&i| self.probs[i].clone())
                    .ok_or_else(|| Error::UnknownName(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorMatrix {
            respondent_ids: ids.to_vec(),
            probs,
        })
    }
}

/// Bayes update of the membership priors with each respondent's choice likelihood.
pub fn posterior_membership(
    data: &ChoiceDataset,
    result: &EstimationResult,
) -> Result<PosteriorMatrix> {
    let model = CompiledModel::new(&result.spec, data)?;
    result.params.check_shape(&result.spec)?;
    let terms = model.all_terms(data, &result.params)?;
    Ok(PosteriorMatrix {
        respondent_ids: data.respondent_ids(),
        probs: terms.iter().map(|t| t.posterior()).collect(),
    })
}

/// Weighted class means, variances and Kish effective sizes of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    /// `None` when the class has no posterior weight among non-missing respondents.
    pub means: Vec<Option<f64>>,
    pub variances: Vec<Option<f64>>,
    pub effective_n: Vec<f64>,
    /// Total posterior weight per class.
    pub weights: Vec<f64>,
    /// Non-missing respondents used.
    pub n: usize,
}

fn complete(posterior: &PosteriorMatrix, values: &[Option<f64>]) -> Result<Vec<(usize, f64)>> {
    if values.len() != posterior.n_respondents() {
        return Err(Error::Shape(format!(
            "{} values for {} posterior rows",
            values.len(),
            posterior.n_respondents()
        )));
    }
    Ok(values
        .iter()
        .enumerate()
        .filter_map(|(n, v)| v.map(|x| (n, x)))
        .collect())
}

/// Mask-based adapter: `values[n]` is used when `missing[n]` is false.
pub fn masked(values: &[f64], missing: &[bool]) -> Vec<Option<f64>> {
    values
        .iter()
        .zip(missing)
        .map(|(&v, &m)| if m { None } else { Some(v) })
        .collect()
}

/// Posterior-weighted mean, variance and effective sample size per class.
pub fn class_profile(posterior: &PosteriorMatrix, values: &[Option<f64>]) -> Result<ClassProfile> {
    let rows = complete(posterior, values)?;
    if rows.len() < 2 {
        return Err(Error::Precondition(
            "fewer than two non-missing values".into(),
        ));
    }
    let c_n = posterior.n_classes();
    let mut means = Vec::with_capacity(c_n);
    let mut variances = Vec::with_capacity(c_n);
    let mut effective_n = Vec::with_capacity(c_n);
    let mut weights = Vec::with_capacity(c_n);
    for c in 0..c_n {
        let w_sum: f64 = rows.iter().map(|&(n, _)| posterior.probs[n][c]).sum();
        let w_sq: f64 = rows
            .iter()
            .map(|&(n, _)| posterior.probs[n][c].powi(2))
            .sum();
        weights.push(w_sum);
        if w_sum <= 0.0 {
            means.push(None);
            variances.push(None);
            effective_n.push(0.0);
            continue;
        }
        let mean = rows
            .iter()
            .map(|&(n, x)| posterior.probs[n][c] * x)
            .sum::<f64>()
            / w_sum;
        let var = rows
            .iter()
            .map(|&(n, x)| posterior.probs[n][c] * (x - mean).powi(2))
            .sum::<f64>()
            / w_sum;
        means.push(Some(mean));
        variances.push(Some(var));
        effective_n.push(w_sum * w_sum / w_sq);
    }
    Ok(ClassProfile {
        means,
        variances,
        effective_n,
        weights,
        n: rows.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
}

/// Posterior-weighted one-way ANOVA:
/// between-class mean square over within-class mean square with
/// degrees of freedom `(C - 1, N - C)`.
pub fn weighted_anova(posterior: &PosteriorMatrix, values: &[Option<f64>]) -> Result<AnovaResult> {
    let profile = class_profile(posterior, values)?;
    let rows = complete(posterior, values)?;
    let c_n = posterior.n_classes();
    let active = profile.weights.iter().filter(|&&w| w > 0.0).count();
    if active < 2 {
        return Err(Error::Precondition(
            "ANOVA needs two classes with positive weight".into(),
        ));
    }
    let n = rows.len() as f64;
    let grand = rows.iter().map(|&(_, x)| x).sum::<f64>() / n;
    let mut between = 0.0;
    let mut within = 0.0;
    for c in 0..c_n {
        let Some(m) = profile.means[c] else { continue };
        between += profile.weights[c] * (m - grand).powi(2);
        within += rows
            .iter()
            .map(|&(i, x)| posterior.probs[i][c] * (x - m).powi(2))
            .sum::<f64>();
    }
    let df1 = (c_n - 1) as f64;
    let df2 = n - c_n as f64;
    if df2 <= 0.0 {
        return Err(Error::Precondition(format!(
            "{n} observations for {c_n} classes"
        )));
    }
    let (f, p) = if between == 0.0 {
        (0.0, 1.0)
    } else if within == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (between / df1) / (within / df2);
        (f, f_upper_tail(f, df1, df2))
    };
    Ok(AnovaResult { f, df1, df2, p })
}

/// Variance entering the pairwise t statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TTestVariance {
    /// Weighted variance scaled by `N_c / (N_c - 1)`; reduces to the sample variance under 0/1 weights.
    #[default]
    KishCorrected,
    /// Weighted variance as is (divides by the class weight total).
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom with Kish effective sizes.
    pub df: f64,
    pub p: f64,
}

/// Pairwise t test between classes `c` and `d` on one column.
pub fn pairwise_t(
    posterior: &PosteriorMatrix,
    values: &[Option<f64>],
    c: usize,
    d: usize,
) -> Result<TTestResult> {
    pairwise_t_with(posterior, values, c, d, TTestVariance::default())
}

pub fn pairwise_t_with(
    posterior: &PosteriorMatrix,
    values: &[Option<f64>],
    c: usize,
    d: usize,
    variance: TTestVariance,
) -> Result<TTestResult> {
    let profile = class_profile(posterior, values)?;
    pairwise_from_profile(&profile, c, d, variance)
}

fn pairwise_from_profile(
    profile: &ClassProfile,
    c: usize,
    d: usize,
    variance: TTestVariance,
) -> Result<TTestResult> {
    let c_n = profile.means.len();
    if c >= c_n || d >= c_n {
        return Err(Error::Shape(format!(
            "class index out of range for {c_n} classes"
        )));
    }
    let stats = |k: usize| -> Result<(f64, f64, f64)> {
        let ne = profile.effective_n[k];
        match (profile.means[k], profile.variances[k]) {
            (Some(m), Some(v)) if ne >= 2.0 => {
                let v = match variance {
                    TTestVariance::KishCorrected => v * ne / (ne - 1.0),
                    TTestVariance::Weighted => v,
                };
                Ok((m, v / ne, ne))
            }
            _ => Err(Error::Precondition(format!(
                "class {} has effective size below 2",
                k + 1
            ))),
        }
    };
    let (m1, a, n1) = stats(c)?;
    let (m2, b, n2) = stats(d)?;
    let diff = m1 - m2;
    let se2 = a + b;
    if se2 == 0.0 {
        let t = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTestResult { t, df: f64::NAN, p });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    Ok(TTestResult {
        t,
        df,
        p: t_two_sided(t, df),
    })
}

/// Profiling summary of one indicator or factor score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub name: String,
    pub class_means: Vec<Option<f64>>,
    pub class_vars: Vec<Option<f64>>,
    pub effective_n: Vec<f64>,
    pub n: usize,
    pub anova: Option<AnovaResult>,
    /// Upper-triangular pairs `(c, d, test)` with `c < d`.
    pub pairwise: Vec<(usize, usize, Option<TTestResult>)>,
}

/// Profiles for every column of an indicator (or factor score) matrix aligned with `posterior`.
pub fn profile_report(
    posterior: &PosteriorMatrix,
    columns: &IndicatorMatrix,
) -> Result<Vec<ProfileReport>> {
    if posterior.n_classes() < 2 {
        return Err(Error::Precondition("profiling requires C ≥ 2".into()));
    }
    let aligned = columns.reorder(&posterior.respondent_ids)?;
    let c_n = posterior.n_classes();
    (0..aligned.n_indicators())
        .map(|k| {
            let values = aligned.column(k);
            let profile = class_profile(posterior, &values)?;
            let anova = weighted_anova(posterior, &values).ok();
            let mut pairwise = Vec::with_capacity(c_n * (c_n - 1) / 2);
            for c in 0..c_n {
                for d in c + 1..c_n {
                    pairwise.push((
                        c,
                        d,
                        pairwise_from_profile(&profile, c, d, TTestVariance::default()).ok(),
                    ));
                }
            }
            Ok(ProfileReport {
                name: aligned.indicator_names[k].clone(),
                class_means: profile.means,
                class_vars: profile.variances,
                effective_n: profile.effective_n,
                n: profile.n,
                anova,
                pairwise,
            })
        })
        .collect()
}

/// Number of hypothesis tests in a set of reports (ANOVA plus pairwise); no multiplicity correction is applied.
pub fn tests_performed(reports: &[ProfileReport]) -> usize {
    reports
        .iter()
        .map(|r| r.anova.is_some() as usize + r.pairwise.iter().filter(|p| p.2.is_some()).count())
        .sum()
}
