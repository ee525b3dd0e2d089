//! Side-by-side membership coefficients from the three posterior-analysis
//! routes: FMNL on baseline posteriors, simultaneous estimation with
//! membership covariates, and sequential membership re-estimation.

use serde::{Deserialize, Serialize};

use crate::dataset::JoinedPanel;
use crate::error::{Error, Result};
use crate::fmnl::{estimate_fmnl, FmnlOptions, FmnlResult};
use crate::lccm::{
    estimate, estimate_sequential_membership, ClassOrder, EstimationOptions, EstimationResult,
};
use crate::posterior::{posterior_membership, PosteriorMatrix};

/// Coefficients with |t| above this in the FMNL fit enter the agreement summary.
pub const T_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub class: usize,
    pub coefficient: String,
    /// Class-specific constant; constants are listed but left out of the agreement summary.
    pub constant: bool,
    pub fmnl: f64,
    pub fmnl_t: Option<f64>,
    pub simultaneous: f64,
    pub simultaneous_se: Option<f64>,
    pub sequential: f64,
    pub sequential_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub t_threshold: f64,
    /// Covariate coefficients with |t| above the threshold in the FMNL fit.
    pub n_significant: usize,
    /// Share of those on which all three routes agree in sign; `None` when there are none.
    pub sign_agreement: Option<f64>,
    /// Largest absolute difference from the FMNL estimate among them.
    pub max_abs_diff: Option<f64>,
    /// Largest difference relative to the FMNL estimate among them.
    pub max_rel_diff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub covariates: Vec<String>,
    pub fmnl: FmnlResult,
    pub simultaneous: EstimationResult,
    pub sequential: EstimationResult,
    pub rows: Vec<ComparisonRow>,
    pub agreement: Agreement,
}

pub fn agreement(rows: &[ComparisonRow], t_threshold: f64) -> Agreement {
    let sig: Vec<&ComparisonRow> = rows
        .iter()
        .filter(|r| !r.constant && r.fmnl_t.is_some_and(|t| t.abs() > t_threshold))
        .collect();
    if sig.is_empty() {
        return Agreement {
            t_threshold,
            n_significant: 0,
            sign_agreement: None,
            max_abs_diff: None,
            max_rel_diff: None,
        };
    }
    let agree = sig
        .iter()
        .filter(|r| {
            r.fmnl.signum() == r.simultaneous.signum() && r.fmnl.signum() == r.sequential.signum()
        })
        .count();
    let abs: Vec<f64> = sig
        .iter()
        .flat_map(|r| {
            [
                (r.simultaneous - r.fmnl).abs(),
                (r.sequential - r.fmnl).abs(),
            ]
        })
        .collect();
    let rel = sig
        .iter()
        .flat_map(|r| {
            [
                (r.simultaneous - r.fmnl).abs() / r.fmnl.abs(),
                (r.sequential - r.fmnl).abs() / r.fmnl.abs(),
            ]
        })
        .fold(0.0, f64::max);
    Agreement {
        t_threshold,
        n_significant: sig.len(),
        sign_agreement: Some(agree as f64 / sig.len() as f64),
        max_abs_diff: Some(abs.into_iter().fold(0.0, f64::max)),
        max_rel_diff: Some(rel),
    }
}

/// Runs all three routes against `baseline`, a constants-only fit on `panel.choices`.
pub fn compare_models(
    panel: &JoinedPanel,
    baseline: &EstimationResult,
    covariates: &[String],
    options: &EstimationOptions,
) -> Result<Comparison> {
    if covariates.is_empty() {
        return Err(Error::Precondition(
            "comparison needs at least one covariate".into(),
        ));
    }
    if !baseline.spec.membership_covariates.is_empty() {
        return Err(Error::Precondition(
            "baseline must be a constants-only model".into(),
        ));
    }
    let data = panel.with_covariates(covariates)?;
    let reference = baseline.spec.reference_class;

    // respondents complete on the covariates
    let posterior_all = posterior_membership(&panel.choices, baseline)?;
    let posterior: PosteriorMatrix = posterior_all.reorder(&data.respondent_ids())?;
    let indicators = panel
        .indicators
        .reorder(&data.respondent_ids())?
        .select(covariates)?;
    let x: Vec<Vec<f64>> = (0..indicators.n_respondents())
        .map(|n| {
            indicators
                .row(n)
                .into_iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let fmnl = estimate_fmnl(
        &posterior,
        &x,
        covariates,
        &FmnlOptions {
            reference_class: reference,
            ..FmnlOptions::default()
        },
    )?;

    let mut spec = baseline.spec.clone();
    spec.membership_covariates = covariates.to_vec();
    let simultaneous = estimate(
        &data,
        &spec,
        &EstimationOptions {
            class_order: ClassOrder::MatchBeta {
                beta: baseline.params.beta.clone(),
            },
            ..options.clone()
        },
    )?;
    let sequential = estimate_sequential_membership(&data, baseline, covariates, options)?;

    let names = spec.membership_names();
    let mut rows = Vec::new();
    for class in (0..spec.n_classes).filter(|&c| c != reference) {
        for (col, name) in names.iter().enumerate() {
            rows.push(ComparisonRow {
                class,
                coefficient: name.clone(),
                constant: col == 0,
                fmnl: fmnl.gamma[class][col],
                fmnl_t: fmnl.t_stat(class, col),
                simultaneous: simultaneous.params.alpha[class][col],
                simultaneous_se: simultaneous.std_errors.alpha[class][col],
                sequential: sequential.params.alpha[class][col],
                sequential_se: sequential.std_errors.alpha[class][col],
            });
        }
    }
    let agreement = agreement(&rows, T_THRESHOLD);
    Ok(Comparison {
        covariates: covariates.to_vec(),
        fmnl,
        simultaneous,
        sequential,
        rows,
        agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(f: f64, t: f64, s: f64, q: f64) -> ComparisonRow {
        ComparisonRow {
            class: 1,
            coefficient: "z".into(),
            constant: false,
            fmnl: f,
            fmnl_t: Some(t),
            simultaneous: s,
            simultaneous_se: None,
            sequential: q,
            sequential_se: None,
        }
    }

    #[test]
    fn summary_counts_only_significant() {
        let rows = vec![
            row(1.0, 5.0, 1.1, 0.95),
            row(-0.2, 1.0, 0.3, 0.1),
            row(-2.0, -4.0, -1.8, 2.0),
        ];
        let a = agreement(&rows, 3.0);
        assert_eq!(a.n_significant, 2);
        assert_eq!(a.sign_agreement, Some(0.5));
        assert!((a.max_abs_diff.unwrap() - 4.0).abs() < 1e-12);
        assert!((a.max_rel_diff.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constants_are_not_summarised() {
        let mut r = row(1.0, 9.0, -1.0, 1.0);
        r.constant = true;
        assert_eq!(agreement(&[r], 3.0).n_significant, 0);
    }

    #[test]
    fn no_significant_coefficients() {
        let a = agreement(&[row(0.1, 0.5, 0.2, 0.1)], 3.0);
        assert_eq!(a.n_significant, 0);
        assert_eq!(a.sign_agreement, None);
    }
}
