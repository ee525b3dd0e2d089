//! Shared synthetic scenarios for the integration suites.
#![allow(dead_code)]

use lccm::dataset::{ChoiceDataset, IndicatorMatrix};
use lccm::kernels::{AttributeTerm, Constraint, Kernel, Nest, NestStructure, UtilitySpec};
use lccm::lccm::{ModelSpec, Params};
use lccm::synthgen::{AttributeLaw, AttributeSpec, CovariateSpec, GeneratorSpec, IndicatorLaw};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn free_terms(names: &[&str]) -> UtilitySpec {
    UtilitySpec {
        attributes: names
            .iter()
            .map(|n| AttributeTerm {
                attribute: n.to_string(),
                constraint: Constraint::Free,
            })
            .collect(),
        constants: vec![],
    }
}

fn binary_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec::new("x1", AttributeLaw::Levels(vec![0.0, 1.0, 2.0, 3.0])),
        AttributeSpec::new("x2", AttributeLaw::Levels(vec![0.0, 1.0, 2.0])),
        AttributeSpec::new("x3", AttributeLaw::Levels(vec![-1.0, 0.0, 1.0])),
    ]
}

/// Three well-separated MNL classes over two alternatives (N=1000, T=8).
pub fn three_class_mnl(seed: u64) -> GeneratorSpec {
    let spec = ModelSpec {
        n_classes: 3,
        kernel: Kernel::Mnl,
        utility: free_terms(&["x1", "x2", "x3"]),
        membership_covariates: vec![],
        reference_class: 0,
    };
    let mut p = Params::initial(&spec);
    p.alpha = vec![vec![0.0], vec![-0.3], vec![-0.6]];
    p.beta = vec![
        vec![1.0, 0.5, -1.0],
        vec![-0.5, 1.5, 0.5],
        vec![0.2, -1.0, 2.0],
    ];
    GeneratorSpec {
        spec,
        true_params: p,
        n_respondents: 1000,
        n_situations: 8,
        alternatives: vec!["a".into(), "b".into()],
        attributes: binary_attributes(),
        covariates: vec![],
        indicators: None,
        factor_mode: None,
        seed,
    }
}

/// Three nested-logit classes over four alternatives; alternatives `b`, `c` share a nest (true lambda 0.6).
pub fn three_class_nl(seed: u64) -> GeneratorSpec {
    let nests = NestStructure {
        nests: vec![
            Nest {
                name: "a".into(),
                alternatives: vec!["a".into()],
                fixed_lambda: None,
            },
            Nest {
                name: "bc".into(),
                alternatives: vec!["b".into(), "c".into()],
                fixed_lambda: None,
            },
            Nest {
                name: "d".into(),
                alternatives: vec!["d".into()],
                fixed_lambda: None,
            },
        ],
    };
    let spec = ModelSpec {
        n_classes: 3,
        kernel: Kernel::Nested(nests),
        utility: free_terms(&["x1", "x2", "x3"]),
        membership_covariates: vec![],
        reference_class: 0,
    };
    let mut p = Params::initial(&spec);
    p.alpha = vec![vec![0.0], vec![-0.3], vec![-0.6]];
    p.beta = vec![
        vec![1.0, 0.5, -1.0],
        vec![-0.5, 1.5, 0.5],
        vec![0.2, -1.0, 2.0],
    ];
    p.lambdas = vec![vec![1.0, 0.6, 1.0]; 3];
    GeneratorSpec {
        spec,
        true_params: p,
        n_respondents: 1000,
        n_situations: 8,
        alternatives: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        attributes: binary_attributes(),
        covariates: vec![],
        indicators: None,
        factor_mode: None,
        seed,
    }
}

/// Membership driven by two respondent covariates that are also emitted as
/// indicator columns; three strongly separated classes.
pub fn indicator_driven(seed: u64, n: usize) -> GeneratorSpec {
    let spec = ModelSpec {
        n_classes: 3,
        kernel: Kernel::Mnl,
        utility: free_terms(&["x1", "x2", "x3"]),
        membership_covariates: vec!["z1".into(), "z2".into()],
        reference_class: 0,
    };
    let mut p = Params::initial(&spec);
    p.alpha = vec![
        vec![0.0, 0.0, 0.0],
        vec![0.5, 1.2, -0.8],
        vec![-0.6, -1.0, 1.5],
    ];
    p.beta = vec![
        vec![2.0, 1.0, -2.0],
        vec![-1.0, 3.0, 1.0],
        vec![0.5, -2.0, 3.0],
    ];
    GeneratorSpec {
        spec,
        true_params: p,
        n_respondents: n,
        n_situations: 10,
        alternatives: vec!["a".into(), "b".into()],
        attributes: binary_attributes(),
        covariates: vec![
            CovariateSpec {
                name: "z1".into(),
                law: AttributeLaw::Normal { mean: 0.0, sd: 1.0 },
            },
            CovariateSpec {
                name: "z2".into(),
                law: AttributeLaw::Normal { mean: 0.0, sd: 1.0 },
            },
        ],
        indicators: Some(IndicatorLaw {
            names: vec!["q1".into(), "q2".into()],
            class_means: vec![vec![2.0, 4.0], vec![3.0, 3.0], vec![4.0, 2.0]],
            sigma: 1.0,
            scale: (1.0, 5.0),
            discretize: true,
        }),
        factor_mode: None,
        seed,
    }
}

/// Same choice data without the respondent covariate columns.
pub fn without_covariates(data: &ChoiceDataset) -> ChoiceDataset {
    let respondents = data
        .respondents
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.covariates.clear();
            r
        })
        .collect();
    ChoiceDataset::new(
        respondents,
        data.attribute_names.clone(),
        data.alternative_ids.clone(),
        vec![],
    )
    .unwrap()
}

/// Random tiny scenario: N <= 20, T <= 5, C <= 4, MNL or NL, optional covariate.
pub fn tiny(seed: u64) -> GeneratorSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_n = rng.random_range(1..=4usize);
    let nested = rng.random_bool(0.5);
    let with_z = rng.random_bool(0.5);
    let alternatives: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let kernel = if nested {
        Kernel::Nested(NestStructure {
            nests: vec![
                Nest {
                    name: "a".into(),
                    alternatives: vec!["a".into()],
                    fixed_lambda: None,
                },
                Nest {
                    name: "bc".into(),
                    alternatives: vec!["b".into(), "c".into()],
                    fixed_lambda: None,
                },
            ],
        })
    } else {
        Kernel::Mnl
    };
    let spec = ModelSpec {
        n_classes: c_n,
        kernel,
        utility: free_terms(&["x1", "x2"]),
        membership_covariates: if with_z { vec!["z".into()] } else { vec![] },
        reference_class: 0,
    };
    let mut p = Params::initial(&spec);
    for (c, row) in p.alpha.iter_mut().enumerate().skip(1) {
        for a in row.iter_mut() {
            *a = rng.random_range(-1.0..1.0) * (c as f64).min(1.0);
        }
    }
    for row in &mut p.beta {
        for b in row.iter_mut() {
            *b = rng.random_range(-2.0..2.0);
        }
    }
    for row in &mut p.lambdas {
        if nested {
            row[1] = rng.random_range(0.2..1.0);
        }
    }
    GeneratorSpec {
        spec,
        true_params: p,
        n_respondents: rng.random_range(1..=20),
        n_situations: rng.random_range(1..=5),
        alternatives,
        attributes: vec![
            AttributeSpec::new(
                "x1",
                AttributeLaw::Uniform {
                    low: -2.0,
                    high: 2.0,
                },
            ),
            AttributeSpec::new("x2", AttributeLaw::Levels(vec![0.0, 1.0])),
        ],
        covariates: if with_z {
            vec![CovariateSpec {
                name: "z".into(),
                law: AttributeLaw::Normal { mean: 0.0, sd: 1.0 },
            }]
        } else {
            vec![]
        },
        indicators: None,
        factor_mode: None,
        seed,
    }
}

/// `x = L f + sqrt(1 - |L_k|^2) e` with standard normal factors and noise.
pub fn factor_items(loadings: &[Vec<f64>], n: usize, seed: u64) -> IndicatorMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_n = loadings[0].len();
    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|_| {
            let f: Vec<f64> = (0..f_n).map(|_| rng.sample(StandardNormal)).collect();
            loadings
                .iter()
                .map(|l| {
                    let common: f64 = l.iter().zip(&f).map(|(a, b)| a * b).sum();
                    let psi = (1.0 - l.iter().map(|v| v * v).sum::<f64>()).sqrt();
                    let e: f64 = rng.sample(StandardNormal);
                    Some(common + psi * e)
                })
                .collect()
        })
        .collect();
    IndicatorMatrix::from_rows(
        (1..=n).map(|i| i.to_string()).collect(),
        (1..=loadings.len()).map(|k| format!("v{k}")).collect(),
        rows,
        (f64::NEG_INFINITY, f64::INFINITY),
    )
    .unwrap()
}
