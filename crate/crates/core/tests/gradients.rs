use handfit::model::toy::{toy_model, TOY_SEED};
use handfit::optim::suite::{gradient_suite, SUITE_TERMS};

#[test]
fn every_term_matches_finite_differences() {
    let model = toy_model(TOY_SEED);
    for seed in 0..2 {
        let rows = gradient_suite(&model, seed, 64, 12).unwrap();
        for term in SUITE_TERMS {
            assert!(rows.iter().any(|r| r.term == term), "{term} not checked");
        }
        for r in &rows {
            println!("{:>8} {:>8} seed {seed}: {:.2e} ({} checked, {} skipped)", r.term, r.block, r.rel_err, r.checked, r.skipped);
            assert!(r.passed(), "{}/{}: {} >= {}", r.term, r.block, r.rel_err, r.tolerance);
            assert!(r.checked > 0);
        }
    }
}
