#[path = "support/gradcases.rs"]
mod gradcases;

#[test]
fn every_operation_and_loss_matches_central_differences() {
    let mut failures = Vec::new();
    for (name, worst) in gradcases::run_all() {
        match worst {
            Ok(e) if e <= gradcases::REL_TOL => {}
            other => failures.push(format!("{name}: {other:?}")),
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
