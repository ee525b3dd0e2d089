// oracles are written as plain index loops on purpose
#![allow(clippy::needless_range_loop)]

use lccm::fmnl::{estimate_fmnl, fmnl_gradient, fmnl_quasi_loglik, predict_shares, FmnlOptions};
use lccm::posterior::PosteriorMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Soft posteriors loosely tied to two covariates.
fn scenario(seed: u64, n: usize, c_n: usize) -> (PosteriorMatrix, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            vec![
                rng.sample::<f64, _>(StandardNormal),
                rng.random_range(0.0..3.0),
            ]
        })
        .collect();
    let probs = x
        .iter()
        .map(|xi| {
            let s: Vec<f64> = (0..c_n)
                .map(|c| {
                    (0.6 * c as f64 * xi[0] - 0.3 * c as f64 * xi[1]
                        + rng.sample::<f64, _>(StandardNormal))
                    .exp()
                })
                .collect();
            let total: f64 = s.iter().sum();
            s.iter().map(|v| v / total).collect()
        })
        .collect();
    let post = PosteriorMatrix {
        respondent_ids: (1..=n).map(|i| i.to_string()).collect(),
        probs,
    };
    (post, x)
}

fn names() -> Vec<String> {
    vec!["x1".into(), "x2".into()]
}

#[test]
fn quasi_loglik_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let (post, x) = scenario(seed, 50, 3);
        let gamma: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                if c == 0 {
                    vec![0.0; 3]
                } else {
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()
                }
            })
            .collect();
        let mut naive = 0.0;
        for n in 0..50 {
            let v: Vec<f64> = gamma
                .iter()
                .map(|g| g[0] + g[1] * x[n][0] + g[2] * x[n][1])
                .collect();
            let denom: f64 = v.iter().map(|u| u.exp()).sum();
            for c in 0..3 {
                naive += post.probs[n][c] * (v[c].exp() / denom).ln();
            }
        }
        let got = fmnl_quasi_loglik(&post, &x, &gamma).unwrap();
        assert!((got - naive).abs() < 1e-12 * naive.abs().max(1.0));
    }
}

#[test]
fn optimum_is_calibrated() {
    let (post, x) = scenario(2, 400, 3);
    let fit = estimate_fmnl(&post, &x, &names(), &FmnlOptions::default()).unwrap();
    assert!(fit.convergence.converged, "{:?}", fit.convergence);
    let grad = fmnl_gradient(&post, &x, &fit.gamma).unwrap();
    for row in grad.iter().skip(1) {
        assert!(row.iter().all(|g| g.abs() < 1e-8), "{row:?}");
    }
    let shares = predict_shares(&fit.gamma, &x);
    for c in 0..3 {
        let predicted: f64 = shares.iter().map(|r| r[c]).sum::<f64>() / 400.0;
        let posterior: f64 = post.probs.iter().map(|r| r[c]).sum::<f64>() / 400.0;
        assert!((predicted - posterior).abs() < 1e-8);
    }
}

#[test]
fn shifting_covariates_moves_only_intercepts() {
    let (post, x) = scenario(3, 300, 3);
    let shifted: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] + 5.0, r[1] - 2.0]).collect();
    let a = estimate_fmnl(&post, &x, &names(), &FmnlOptions::default()).unwrap();
    let b = estimate_fmnl(&post, &shifted, &names(), &FmnlOptions::default()).unwrap();
    for c in 1..3 {
        for k in 1..3 {
            assert!((a.gamma[c][k] - b.gamma[c][k]).abs() < 1e-6);
        }
    }
    assert!((a.quasi_loglik - b.quasi_loglik).abs() < 1e-8);
}

#[test]
fn reference_class_is_a_relabelling() {
    let (post, x) = scenario(4, 300, 3);
    let a = estimate_fmnl(&post, &x, &names(), &FmnlOptions::default()).unwrap();
    let b = estimate_fmnl(
        &post,
        &x,
        &names(),
        &FmnlOptions {
            reference_class: 2,
            ..FmnlOptions::default()
        },
    )
    .unwrap();
    assert!(b.gamma[2].iter().all(|v| *v == 0.0));
    let sa = predict_shares(&a.gamma, &x);
    let sb = predict_shares(&b.gamma, &x);
    for (ra, rb) in sa.iter().zip(&sb) {
        for (p, q) in ra.iter().zip(rb) {
            assert!((p - q).abs() < 1e-8);
        }
    }
    // class 1 against class 3 is the same contrast either way
    for k in 0..3 {
        assert!((b.gamma[0][k] - (a.gamma[0][k] - a.gamma[2][k])).abs() < 1e-6);
    }
}
