// oracles are written as plain index loops on purpose
#![allow(clippy::needless_range_loop)]

mod common;

use lccm::dataset::{join, ChoiceDataset, RespondentRecord, Situation};
use lccm::kernels::{AttributeTerm, ConstantTerm, Constraint, Kernel, UtilitySpec};
use lccm::lccm::{
    avg_predicted_probs, class_sequence_loglik, compensating_differential, estimate,
    estimate_sequential_membership, fit_from, marginal_loglik, membership_probs, AlternativeGroup,
    ClassOrder, EntryStatus, EstimationOptions, ModelSpec, Params,
};
use lccm::synthgen::{brute_force_marginal, generate, AttributeLaw, AttributeSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softmax(xs: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn quick(n_starts: usize) -> EstimationOptions {
    EstimationOptions {
        n_starts,
        seed: 3,
        ..EstimationOptions::default()
    }
}

#[test]
fn membership_examples() {
    let p = membership_probs(&[], &vec![vec![0.0]; 4]).unwrap();
    assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    let p = membership_probs(&[], &[vec![0.0], vec![0.0]]).unwrap();
    assert_eq!(p, vec![0.5, 0.5]);
    // constants of a fitted four-class membership model
    let alpha = [0.0, -3.052, -1.003, -2.248];
    let p = membership_probs(&[], &alpha.iter().map(|a| vec![*a]).collect::<Vec<_>>()).unwrap();
    let want = softmax(&alpha);
    for (a, b) in p.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

fn one_respondent(situations: Vec<Situation>, j_n: usize) -> ChoiceDataset {
    ChoiceDataset::new(
        vec![RespondentRecord {
            id: "1".into(),
            situations,
            covariates: vec![],
        }],
        vec!["x".into()],
        (0..j_n).map(|j| j.to_string()).collect(),
        vec![],
    )
    .unwrap()
}

fn mnl_spec(c: usize) -> ModelSpec {
    ModelSpec {
        n_classes: c,
        kernel: Kernel::Mnl,
        utility: UtilitySpec::linear(&["x"]),
        membership_covariates: vec![],
        reference_class: 0,
    }
}

#[test]
fn sequence_loglik_examples() {
    let sit = |id: &str, avail: Vec<bool>, chosen: usize| Situation {
        id: id.into(),
        attributes: vec![0.3, -0.2],
        available: avail,
        chosen,
    };
    let data = one_respondent(
        vec![sit("1", vec![true, true], 0), sit("2", vec![true, true], 1)],
        2,
    );
    let ll = class_sequence_loglik(&data, &mnl_spec(1), &data.respondents[0], &[0.0], &[]).unwrap();
    assert!((ll - 0.25f64.ln()).abs() < 1e-15);

    // datasets reject single-alternative situations, but the kernel itself
    // should still give certainty to a forced choice
    let data = one_respondent(vec![sit("1", vec![true, true], 1)], 2);
    let mut forced = data.respondents[0].clone();
    forced.situations[0].available = vec![false, true];
    let ll = class_sequence_loglik(&data, &mnl_spec(1), &forced, &[1.7], &[]).unwrap();
    assert_eq!(ll, 0.0);
}

#[test]
fn mixture_reductions() {
    let g = common::three_class_mnl(1);
    let mut g = g;
    g.n_respondents = 40;
    let data = generate(&g).unwrap().choices;
    // C = 1 is the plain MNL log-likelihood
    let spec1 = ModelSpec {
        n_classes: 1,
        ..g.spec.clone()
    };
    let mut p1 = Params::initial(&spec1);
    p1.beta = vec![vec![0.4, -0.3, 0.8]];
    let mut mnl = 0.0;
    for r in &data.respondents {
        for s in &r.situations {
            let u: Vec<f64> = (0..2)
                .map(|j| {
                    s.attribute_row(j, 3)
                        .iter()
                        .zip(&p1.beta[0])
                        .map(|(x, b)| x * b)
                        .sum()
                })
                .collect();
            mnl += u[s.chosen] - (u[0].exp() + u[1].exp()).ln();
        }
    }
    let ll1 = marginal_loglik(&data, &p1, &spec1).unwrap();
    assert!((ll1 - mnl).abs() < 1e-9 * mnl.abs());

    // identical components: mixture value does not depend on alpha
    let spec2 = ModelSpec {
        n_classes: 2,
        ..g.spec.clone()
    };
    for a in [-3.0, 0.0, 2.5] {
        let mut p2 = Params::initial(&spec2);
        p2.alpha = vec![vec![0.0], vec![a]];
        p2.beta = vec![p1.beta[0].clone(); 2];
        let ll2 = marginal_loglik(&data, &p2, &spec2).unwrap();
        assert!((ll2 - ll1).abs() < 1e-9 * ll1.abs());
    }
}

#[test]
fn tiny_marginal_matches_brute_force() {
    let mut g = common::three_class_mnl(2);
    g.spec.n_classes = 2;
    g.true_params.alpha.truncate(2);
    g.true_params.beta.truncate(2);
    g.true_params.lambdas.truncate(2);
    g.n_respondents = 3;
    g.n_situations = 2;
    let data = generate(&g).unwrap().choices;
    let ll = marginal_loglik(&data, &g.true_params, &g.spec).unwrap();
    let naive: f64 = brute_force_marginal(&data, &g.true_params, &g.spec)
        .unwrap()
        .iter()
        .map(|v| v.ln())
        .sum();
    assert!((ll - naive).abs() <= 1e-10 * naive.abs());
}

fn two_class(seed: u64, n: usize) -> lccm::synthgen::GeneratorSpec {
    let mut g = common::three_class_mnl(seed);
    g.spec.n_classes = 2;
    g.true_params.alpha = vec![vec![0.0], vec![0.4]];
    g.true_params.beta = vec![vec![1.5, 0.5, -1.5], vec![-1.0, 2.0, 1.0]];
    g.true_params.lambdas = vec![vec![]; 2];
    g.n_respondents = n;
    g
}

#[test]
fn two_class_recovery_within_three_se() {
    let g = two_class(21, 600);
    let data = generate(&g).unwrap().choices;
    let options = EstimationOptions {
        class_order: ClassOrder::MatchBeta {
            beta: g.true_params.beta.clone(),
        },
        ..quick(4)
    };
    let r = estimate(&data, &g.spec, &options).unwrap();
    assert!(r.converged());
    for c in 0..2 {
        for (k, b) in r.params.beta[c].iter().enumerate() {
            let se = r.std_errors.beta[c][k].unwrap();
            assert!(
                (b - g.true_params.beta[c][k]).abs() < 3.0 * se,
                "class {c} term {k}: {b} ± {se}"
            );
        }
    }
    let se = r.std_errors.alpha[1][0].unwrap();
    assert!((r.params.alpha[1][0] - 0.4).abs() < 3.0 * se);
    assert!(r.hessian_positive_definite);
    assert!(!r.flagged());
    assert!(r.adj_rho2 > 0.0 && r.adj_rho2 < 1.0);
    // reference row is exactly zero and carries no inference
    assert_eq!(r.params.alpha[0], vec![0.0]);
    assert_eq!(r.p_values.alpha[0][0], None);
}

#[test]
fn one_class_data_fitted_with_two_is_flagged() {
    for seed in 42..46 {
        let mut g = two_class(seed, 300);
        g.true_params.beta = vec![vec![1.0, -1.0, 0.5]; 2];
        let data = generate(&g).unwrap().choices;
        let r = estimate(&data, &g.spec, &quick(2)).unwrap();
        assert!(
            r.flagged(),
            "seed {seed}: {:?} / {:?}",
            r.params.beta,
            r.std_errors.beta
        );
        assert!(!r.warnings.is_empty());
    }
}

#[test]
fn sequential_without_covariates_reproduces_baseline() {
    let g = two_class(23, 300);
    let data = generate(&g).unwrap().choices;
    let baseline = estimate(&data, &g.spec, &quick(3)).unwrap();
    let seq = estimate_sequential_membership(&data, &baseline, &[], &quick(1)).unwrap();
    assert!((seq.params.alpha[1][0] - baseline.params.alpha[1][0]).abs() < 1e-6);
    // frozen coefficients are carried over bit for bit
    assert_eq!(seq.params.beta, baseline.params.beta);
    assert!(seq.frozen.beta.iter().flatten().all(|f| *f));
    assert!(seq.std_errors.beta.iter().flatten().all(Option::is_none));
    assert!((seq.loglik - baseline.loglik).abs() < 1e-6);
    assert_eq!(seq.n_params, baseline.n_params);
}

#[test]
fn sequential_recovers_covariate_signs() {
    let g = common::indicator_driven(24, 600);
    let out = generate(&g).unwrap();
    let choices = common::without_covariates(&out.choices);
    let panel = join(&choices, &out.indicators).unwrap();
    let mut spec = g.spec.clone();
    spec.membership_covariates.clear();
    let options = EstimationOptions {
        class_order: ClassOrder::MatchBeta {
            beta: g.true_params.beta.clone(),
        },
        ..quick(4)
    };
    let baseline = estimate(&panel.choices, &spec, &options).unwrap();
    let covs = vec!["z1".to_string(), "z2".to_string()];
    let data = panel.with_covariates(&covs).unwrap();
    let seq = estimate_sequential_membership(&data, &baseline, &covs, &quick(1)).unwrap();
    for c in 1..3 {
        for i in 1..3 {
            let truth = g.true_params.alpha[c][i];
            assert_eq!(
                seq.params.alpha[c][i].signum(),
                truth.signum(),
                "class {c} covariate {i}"
            );
        }
    }
    assert!(seq
        .estimates()
        .iter()
        .any(|e| e.status == EntryStatus::Frozen));
}

#[test]
fn binary_constant_standard_error_is_analytic() {
    // one-class model with a single alternative-specific constant: the MLE is the
    // empirical log-odds and its standard error is 1 / sqrt(N p (1 - p))
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2000;
    let respondents: Vec<RespondentRecord> = (0..n)
        .map(|i| RespondentRecord {
            id: (i + 1).to_string(),
            situations: vec![Situation {
                id: "1".into(),
                attributes: vec![0.0, 0.0],
                available: vec![true, true],
                chosen: rng.random_bool(0.3) as usize,
            }],
            covariates: vec![],
        })
        .collect();
    let data = ChoiceDataset::new(
        respondents,
        vec!["x".into()],
        vec!["a".into(), "b".into()],
        vec![],
    )
    .unwrap();
    let chose_b = data
        .respondents
        .iter()
        .filter(|r| r.situations[0].chosen == 1)
        .count() as f64;
    let p = chose_b / n as f64;
    let spec = ModelSpec {
        n_classes: 1,
        kernel: Kernel::Mnl,
        utility: UtilitySpec {
            attributes: vec![],
            constants: vec![ConstantTerm {
                alternative: "b".into(),
                constraint: Constraint::Free,
            }],
        },
        membership_covariates: vec![],
        reference_class: 0,
    };
    let r = estimate(&data, &spec, &quick(1)).unwrap();
    let want = 1.0 / (n as f64 * p * (1.0 - p)).sqrt();
    assert!((r.params.beta[0][0] - (p / (1.0 - p)).ln()).abs() < 1e-5);
    assert!((r.std_errors.beta[0][0].unwrap() - want).abs() < 1e-4);
}

#[test]
fn fixed_coefficient_has_no_p_value() {
    let g = two_class(25, 200);
    let data = generate(&g).unwrap().choices;
    let mut spec = g.spec.clone();
    spec.utility.attributes[2] = AttributeTerm {
        attribute: "x3".into(),
        constraint: Constraint::Fixed(0.0),
    };
    let r = estimate(&data, &spec, &quick(2)).unwrap();
    for c in 0..2 {
        assert_eq!(r.params.beta[c][2], 0.0);
        assert_eq!(r.p_values.beta[c][2], None);
        assert_eq!(r.std_errors.beta[c][2], None);
    }
}

#[test]
fn standard_errors_shrink_with_root_n() {
    let spec = mnl_spec(1);
    let fit = |n: usize| {
        let mut g = two_class(26, n);
        g.spec = ModelSpec {
            utility: common::free_terms(&["x1", "x2", "x3"]),
            ..mnl_spec(1)
        };
        g.true_params = Params::initial(&g.spec);
        g.true_params.beta = vec![vec![0.8, -0.5, 0.3]];
        let data = generate(&g).unwrap().choices;
        estimate(&data, &g.spec, &quick(1)).unwrap()
    };
    let _ = spec;
    let small = fit(500);
    let large = fit(2000);
    for k in 0..3 {
        let ratio = small.std_errors.beta[0][k].unwrap() / large.std_errors.beta[0][k].unwrap();
        assert!((ratio - 2.0).abs() / 2.0 < 0.15, "term {k}: ratio {ratio}");
    }
}

#[test]
fn non_negative_coefficient_at_zero_is_bound_fixed() {
    let mut g = two_class(27, 400);
    g.true_params.beta = vec![vec![1.5, 0.0, -1.5], vec![-1.0, 0.0, 1.0]];
    let data = generate(&g).unwrap().choices;
    let mut spec = g.spec.clone();
    spec.utility.attributes[1].constraint = Constraint::NonNegative;
    let free = estimate(&data, &g.spec, &quick(2)).unwrap();
    let r = estimate(&data, &spec, &quick(2)).unwrap();
    assert!(r.params.beta.iter().all(|b| b[1] >= 0.0));
    let fixed = r.bound_fixed.beta.iter().filter(|b| b[1]).count();
    if fixed > 0 {
        assert_eq!(r.n_params + fixed, free.n_params);
        for c in 0..2 {
            if r.bound_fixed.beta[c][1] {
                assert_eq!(r.params.beta[c][1], 0.0);
                assert_eq!(r.p_values.beta[c][1], None);
            }
        }
    }
}

#[test]
fn differentials_from_an_estimate() {
    let g = two_class(28, 300);
    let data = generate(&g).unwrap().choices;
    let options = EstimationOptions {
        class_order: ClassOrder::MatchBeta {
            beta: g.true_params.beta.clone(),
        },
        ..quick(2)
    };
    let r = estimate(&data, &g.spec, &options).unwrap();
    let cwd = compensating_differential(&r, "x2", "x1", 1000.0).unwrap();
    // class 1 prices x2 against a positive x1 coefficient
    let b = &r.params.beta[0];
    assert!((cwd[0].unwrap() - b[1] / b[0] * 1000.0).abs() < 1e-9);
    // class 2 has a negative x1 coefficient: no valid numeraire
    assert_eq!(cwd[1], None);
}

#[test]
fn predicted_probability_groups() {
    let attrs = vec![AttributeSpec::new(
        "x1",
        AttributeLaw::Uniform {
            low: 0.0,
            high: 1.0,
        },
    )];
    let spec = ModelSpec {
        n_classes: 1,
        kernel: Kernel::Mnl,
        utility: common::free_terms(&["x1"]),
        membership_covariates: vec![],
        reference_class: 0,
    };
    let g = lccm::synthgen::GeneratorSpec {
        spec: spec.clone(),
        true_params: Params::initial(&spec),
        n_respondents: 30,
        n_situations: 2,
        alternatives: ["a", "b", "c", "d", "e"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        attributes: attrs,
        covariates: vec![],
        indicators: None,
        factor_mode: None,
        seed: 1,
    };
    let data = generate(&g).unwrap().choices;
    let mut r = estimate(&data, &spec, &quick(1)).unwrap();
    r.params = Params::initial(&spec);
    let group = |name: &str, alts: &[&str]| AlternativeGroup {
        name: name.into(),
        alternatives: alts.iter().map(|s| s.to_string()).collect(),
    };
    let all = avg_predicted_probs(&r, &data, &[group("all", &["a", "b", "c", "d", "e"])]).unwrap();
    assert!((all[0][0] - 1.0).abs() < 1e-12);
    let split = avg_predicted_probs(
        &r,
        &data,
        &[
            group("ab", &["a", "b"]),
            group("cd", &["c", "d"]),
            group("e", &["e"]),
        ],
    )
    .unwrap();
    for (v, want) in split[0].iter().zip([0.4, 0.4, 0.2]) {
        assert!((v - want).abs() < 1e-12);
    }
    assert!(avg_predicted_probs(&r, &data, &[group("ab", &["a", "b"])]).is_err());
}

/// Nested-logit choice probabilities written out directly.
fn naive_nl(u: &[f64], lambda_bc: f64) -> [f64; 4] {
    let ia = u[0].exp();
    let sum_bc = (u[1] / lambda_bc).exp() + (u[2] / lambda_bc).exp();
    let ibc = sum_bc.powf(lambda_bc);
    let id = u[3].exp();
    let total = ia + ibc + id;
    [
        ia / total,
        ibc / total * (u[1] / lambda_bc).exp() / sum_bc,
        ibc / total * (u[2] / lambda_bc).exp() / sum_bc,
        id / total,
    ]
}

#[test]
fn nested_group_shares_match_simulation() {
    let mut g = common::three_class_nl(29);
    g.n_respondents = 50;
    g.n_situations = 4;
    let data = generate(&g).unwrap().choices;
    let mut r = estimate(
        &data,
        &g.spec,
        &EstimationOptions {
            max_iter: 0,
            ..quick(1)
        },
    )
    .unwrap();
    r.params = g.true_params.clone();
    let groups: Vec<AlternativeGroup> = [vec!["a"], vec!["b", "c"], vec!["d"]]
        .iter()
        .enumerate()
        .map(|(i, alts)| AlternativeGroup {
            name: i.to_string(),
            alternatives: alts.iter().map(|s| s.to_string()).collect(),
        })
        .collect();
    let shares = avg_predicted_probs(&r, &data, &groups).unwrap();
    let situations: Vec<&Situation> = data
        .respondents
        .iter()
        .flat_map(|r| &r.situations)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for c in 0..3 {
        let beta = &g.true_params.beta[c];
        let mut counts = [0usize; 3];
        let draws = 1_000_000;
        for _ in 0..draws {
            let s = situations[rng.random_range(0..situations.len())];
            let u: Vec<f64> = (0..4)
                .map(|j| {
                    s.attribute_row(j, 3)
                        .iter()
                        .zip(beta)
                        .map(|(x, b)| x * b)
                        .sum()
                })
                .collect();
            let p = naive_nl(&u, g.true_params.lambdas[c][1]);
            let mut x = rng.random_range(0.0..1.0);
            let mut j = 0;
            while j < 3 && x >= p[j] {
                x -= p[j];
                j += 1;
            }
            counts[[0, 1, 1, 2][j]] += 1;
        }
        for k in 0..3 {
            let sim = counts[k] as f64 / draws as f64;
            assert!(
                (sim - shares[c][k]).abs() < 0.01,
                "class {c} group {k}: {sim} vs {}",
                shares[c][k]
            );
        }
    }
}

#[test]
fn same_seed_same_estimate() {
    let g = two_class(31, 200);
    let data = generate(&g).unwrap().choices;
    let a = estimate(&data, &g.spec, &quick(3)).unwrap();
    let b = estimate(&data, &g.spec, &quick(3)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn zero_iterations_is_not_converged() {
    let g = two_class(32, 100);
    let data = generate(&g).unwrap().choices;
    let r = estimate(
        &data,
        &g.spec,
        &EstimationOptions {
            max_iter: 0,
            ..quick(1)
        },
    )
    .unwrap();
    assert!(!r.converged());
    assert!(r.warnings.iter().any(|w| w.contains("did not converge")));
}

#[test]
fn relabelled_starts_reach_the_relabelled_optimum() {
    let mut g = common::three_class_mnl(33);
    g.n_respondents = 300;
    let data = generate(&g).unwrap().choices;
    let order = [2, 0, 1];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start = g.true_params.clone();
        for b in start.beta.iter_mut().flatten() {
            *b += rng.random_range(-0.5..0.5);
        }
        start.alpha[1][0] += rng.random_range(-0.5..0.5);
        let a = fit_from(&data, &g.spec, &start, &quick(1)).unwrap();
        let b = fit_from(&data, &g.spec, &start.permuted(&order), &quick(1)).unwrap();
        assert!(
            (a.loglik - b.loglik).abs() < 1e-6,
            "seed {seed}: {} vs {}",
            a.loglik,
            b.loglik
        );
        for (k, &c) in order.iter().enumerate() {
            for (x, y) in b.params.beta[k].iter().zip(&a.params.beta[c]) {
                assert!((x - y).abs() < 1e-3, "seed {seed}");
            }
        }
    }
}
