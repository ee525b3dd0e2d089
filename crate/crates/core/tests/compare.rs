mod common;

use lccm::compare::compare_models;
use lccm::dataset::join;
use lccm::lccm::{estimate, ClassOrder, EstimationOptions};
use lccm::synthgen::generate;

#[test]
fn noise_covariates_are_not_significant() {
    let mut g = common::indicator_driven(12, 600);
    // z1, z2 are still drawn and emitted but no longer drive membership
    for row in &mut g.true_params.alpha {
        row[1] = 0.0;
        row[2] = 0.0;
    }
    let out = generate(&g).unwrap();
    let panel = join(&common::without_covariates(&out.choices), &out.indicators).unwrap();
    let mut spec = g.spec.clone();
    spec.membership_covariates.clear();
    let options = EstimationOptions {
        n_starts: 3,
        seed: 4,
        class_order: ClassOrder::MatchBeta {
            beta: g.true_params.beta.clone(),
        },
        ..EstimationOptions::default()
    };
    let baseline = estimate(&panel.choices, &spec, &options).unwrap();
    let cmp = compare_models(&panel, &baseline, &["z1".into(), "z2".into()], &options).unwrap();
    assert_eq!(cmp.agreement.n_significant, 0, "{:#?}", cmp.rows);
    assert_eq!(cmp.agreement.sign_agreement, None);
    // constants are still listed
    assert!(cmp.rows.iter().any(|r| r.constant));
}
