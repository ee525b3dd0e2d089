// oracles are written as plain index loops on purpose
#![allow(clippy::needless_range_loop)]

mod common;

use lccm::dataset::IndicatorMatrix;
use lccm::lccm::{estimate, EstimationOptions, EstimationResult};
use lccm::posterior::{
    class_profile, posterior_membership, profile_report, tests_performed, PosteriorMatrix,
};
use lccm::synthgen::{brute_force_posterior, generate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// An estimation result whose parameters are replaced by `params`.
fn result_at(
    data: &lccm::dataset::ChoiceDataset,
    g: &lccm::synthgen::GeneratorSpec,
) -> EstimationResult {
    let options = EstimationOptions {
        n_starts: 1,
        max_iter: 0,
        ..EstimationOptions::default()
    };
    let mut r = estimate(data, &g.spec, &options).unwrap();
    r.params = g.true_params.clone();
    r
}

#[test]
fn identical_classes_give_uniform_rows() {
    let mut g = common::three_class_mnl(1);
    g.n_respondents = 30;
    g.true_params.alpha = vec![vec![0.0]; 3];
    g.true_params.beta = vec![vec![0.7, -0.2, 1.1]; 3];
    let data = generate(&g).unwrap().choices;
    let post = posterior_membership(&data, &result_at(&data, &g)).unwrap();
    for row in &post.probs {
        for p in row {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn impossible_choices_zero_the_class() {
    let mut g = common::three_class_mnl(2);
    g.n_respondents = 30;
    let data = generate(&g).unwrap().choices;
    // class 3 is effectively deterministic in x1 and contradicts some observed choice
    g.true_params.beta[2] = vec![1e4, 0.0, 0.0];
    let post = posterior_membership(&data, &result_at(&data, &g)).unwrap();
    let mut zeroed = 0;
    for (r, row) in data.respondents.iter().zip(&post.probs) {
        let contradicted = r.situations.iter().any(|s| {
            let x = |j| s.attribute_row(j, 3)[0];
            x(s.chosen) < x(1 - s.chosen)
        });
        if contradicted {
            assert_eq!(row[2], 0.0);
            zeroed += 1;
        }
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(zeroed > 0);
}

#[test]
fn tiny_posteriors_match_brute_force() {
    for seed in 0..50 {
        let g = common::tiny(seed);
        let data = generate(&g).unwrap().choices;
        let post = posterior_membership(&data, &result_at(&data, &g)).unwrap();
        let naive = brute_force_posterior(&data, &g.true_params, &g.spec).unwrap();
        for (a, b) in post.probs.iter().zip(&naive) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "seed {seed}: {x} vs {y}");
            }
        }
    }
}

fn random_posterior(rng: &mut ChaCha8Rng, n: usize, c_n: usize) -> PosteriorMatrix {
    let probs = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..c_n).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    PosteriorMatrix {
        respondent_ids: (1..=n).map(|i| i.to_string()).collect(),
        probs,
    }
}

#[test]
fn weighted_moments_match_a_plain_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(5..200);
        let c_n = rng.random_range(2..5);
        let post = random_posterior(&mut rng, n, c_n);
        let values: Vec<Option<f64>> = (0..n)
            .map(|_| rng.random_bool(0.9).then(|| rng.random_range(1.0..7.0)))
            .collect();
        let prof = class_profile(&post, &values).unwrap();
        for c in 0..c_n {
            let (mut w, mut wx, mut w2) = (0.0, 0.0, 0.0);
            for i in 0..n {
                if let Some(x) = values[i] {
                    w += post.probs[i][c];
                    wx += post.probs[i][c] * x;
                    w2 += post.probs[i][c] * post.probs[i][c];
                }
            }
            let mean = wx / w;
            let mut ss = 0.0;
            for i in 0..n {
                if let Some(x) = values[i] {
                    ss += post.probs[i][c] * (x - mean) * (x - mean);
                }
            }
            assert!((prof.means[c].unwrap() - mean).abs() < 1e-12);
            assert!((prof.variances[c].unwrap() - ss / w).abs() < 1e-12);
            assert!((prof.effective_n[c] - w * w / w2).abs() < 1e-12 * n as f64);
        }
    }
}

fn matrix(names: &[&str], columns: Vec<Vec<f64>>) -> IndicatorMatrix {
    let n = columns[0].len();
    let rows = (0..n)
        .map(|i| columns.iter().map(|c| Some(c[i])).collect())
        .collect();
    IndicatorMatrix::from_rows(
        (1..=n).map(|i| i.to_string()).collect(),
        names.iter().map(|s| s.to_string()).collect(),
        rows,
        (f64::MIN, f64::MAX),
    )
    .unwrap()
}

#[test]
fn report_shapes() {
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let post = PosteriorMatrix::crisp((1..=40).map(|i| i.to_string()).collect(), &labels, 2);
    let one = matrix(&["q"], vec![(0..40).map(|i| (i % 7) as f64).collect()]);
    let reports = profile_report(&post, &one).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].anova.is_some());
    assert_eq!(reports[0].pairwise.len(), 1);
    assert_eq!(tests_performed(&reports), 2);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let post = random_posterior(&mut rng, 60, 4);
    let cols: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..60).map(|_| rng.random_range(1.0..5.0)).collect())
        .collect();
    let reports = profile_report(&post, &matrix(&["a", "b", "c", "d", "e"], cols)).unwrap();
    assert_eq!(reports.len(), 5);
    assert!(reports.iter().all(|r| r.pairwise.len() == 6));
}

#[test]
fn shifted_indicator_has_the_largest_f() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 600;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let post = PosteriorMatrix::crisp((1..=n).map(|i| i.to_string()).collect(), &labels, 3);
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            labels
                .iter()
                .map(|&c| {
                    let shift = if k == 0 && c == 0 { 1.0 } else { 0.0 };
                    3.0 + shift + rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect();
    let reports = profile_report(&post, &matrix(&["q1", "q2", "q3", "q4"], cols)).unwrap();
    let f: Vec<f64> = reports.iter().map(|r| r.anova.unwrap().f).collect();
    assert!(f[1..].iter().all(|&x| x < f[0]), "{f:?}");
}
