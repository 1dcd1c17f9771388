mod common;

#[test]
fn analytic_gradients_match_central_differences() {
    let worst = common::gradient_check(12, 7);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn projections_and_action_tables() {
    common::projection_suite().unwrap();
}

#[test]
fn reward_examples_by_hand() {
    assert!(common::reward_examples().unwrap() >= 12);
}

#[test]
fn e2e_reward_is_the_ha_reward() {
    common::e2e_matches_ha(10_000, 3).unwrap();
}

#[test]
fn return_maxima_are_on_the_expected_scale() {
    let (dodge, ha) = common::return_scales();
    assert!((dodge - 10.0).abs() <= 2.0, "dodge max {dodge}");
    assert!((ha - 15.0).abs() <= 3.0, "ha max {ha}");
}
