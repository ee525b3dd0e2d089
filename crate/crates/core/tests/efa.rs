mod common;

use lccm::efa::{
    apply_retention, factor_scores, fit_efa, scores_matrix, Exclusion, FactorCount, SALIENCE,
};
use lccm::synthgen::{generate, FactorMode, IndicatorLaw};

fn two_factor_loadings() -> Vec<Vec<f64>> {
    (0..8)
        .map(|k| {
            if k < 4 {
                vec![0.8, 0.0]
            } else {
                vec![0.0, 0.8]
            }
        })
        .collect()
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn eigenvalue_rule_finds_two_factors() {
    let items = common::factor_items(&two_factor_loadings(), 3000, 1);
    let fit = fit_efa(&items, FactorCount::Auto).unwrap();
    assert_eq!(fit.n_factors(), 2);
    assert!(fit.eigenvalues[1] > 1.0 && fit.eigenvalues[2] < 1.0);
}

#[test]
fn scores_track_generating_factors() {
    let mut g = common::indicator_driven(2, 3000);
    g.indicators = Some(IndicatorLaw {
        names: (1..=8).map(|k| format!("v{k}")).collect(),
        class_means: vec![vec![0.0; 8]; 3],
        sigma: 1.0,
        scale: (f64::NEG_INFINITY, f64::INFINITY),
        discretize: false,
    });
    g.factor_mode = Some(FactorMode {
        loadings: two_factor_loadings(),
    });
    let out = generate(&g).unwrap();
    let truth = out.factors.unwrap();
    let items = out
        .indicators
        .select(&(1..=8).map(|k| format!("v{k}")).collect::<Vec<_>>())
        .unwrap();
    let fit = fit_efa(&items, FactorCount::Fixed(2)).unwrap();
    let scores: Vec<Vec<f64>> = factor_scores(&fit, &items)
        .unwrap()
        .into_iter()
        .map(Option::unwrap)
        .collect();
    for j in 0..2 {
        let est: Vec<f64> = scores.iter().map(|s| s[j]).collect();
        let best = (0..2)
            .map(|f| corr(&est, &truth.iter().map(|t| t[f]).collect::<Vec<_>>()).abs())
            .fold(0.0, f64::max);
        assert!(best > 0.9, "factor {j}: {best}");
    }
}

#[test]
fn score_moments() {
    let items = common::factor_items(&two_factor_loadings(), 2000, 3);
    let fit = fit_efa(&items, FactorCount::Fixed(2)).unwrap();
    let scores = scores_matrix(&fit, &items, false).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = scores.column(j).into_iter().map(Option::unwrap).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 1e-8);
        assert!(var <= 1.0 + 1e-6, "variance {var}");
    }
    for (c, u) in fit.communalities.iter().zip(&fit.uniquenesses) {
        assert!((c + u - 1.0).abs() < 1e-8);
    }
    assert!(fit.loadings.iter().flatten().all(|l| l.abs() <= 1.0 + 1e-6));
}

#[test]
fn mean_respondent_scores_zero() {
    let items = common::factor_items(&two_factor_loadings(), 500, 4);
    let fit = fit_efa(&items, FactorCount::Fixed(2)).unwrap();
    let at_mean = lccm::dataset::IndicatorMatrix::from_rows(
        vec!["m".into()],
        items.indicator_names.clone(),
        vec![fit.means.iter().map(|m| Some(*m)).collect()],
        (f64::NEG_INFINITY, f64::INFINITY),
    )
    .unwrap();
    let s = factor_scores(&fit, &at_mean).unwrap();
    assert!(s[0].as_ref().unwrap().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn one_strong_factor_keeps_every_item() {
    let loadings = vec![vec![0.7]; 6];
    let items = common::factor_items(&loadings, 2000, 5);
    let fit = apply_retention(&fit_efa(&items, FactorCount::Fixed(1)).unwrap(), SALIENCE).unwrap();
    assert!(fit.retained.iter().all(|e| *e == Exclusion::None));
    assert_eq!(fit.retained_items().len(), 6);
}
