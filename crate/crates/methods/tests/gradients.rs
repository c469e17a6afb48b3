//! Finite-difference agreement of the full training losses, double
//! precision, micro backbone. A lighter probe count than the acceptance
//! suite; same machinery.

use rsprompt_methods::check::finite_difference_check;
use rsprompt_methods::Method;

fn run(method: Method) {
    let report = finite_difference_check(method, 13, 24, 1e-5).unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "{method:?}: max relative error {} over {} coordinates",
        report.max_rel_err,
        report.probed_coordinates
    );
}

#[test]
fn coop_context_gradients_match_finite_differences() {
    run(Method::Coop);
}

#[test]
fn cocoop_meta_net_gradients_match_finite_differences() {
    run(Method::Cocoop);
}

#[test]
fn maple_coupling_and_deep_prompt_gradients_match_finite_differences() {
    run(Method::Maple);
}

#[test]
fn promptsrc_composite_loss_gradients_match_finite_differences() {
    run(Method::Promptsrc);
}
