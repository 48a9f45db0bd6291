use dalight::checks::{gradient_suite, model_gradcheck, GRAD_TOL};

#[test]
fn every_primitive_and_block_matches_finite_differences() {
    let entries = gradient_suite(5, 0).unwrap();
    let mut failed = Vec::new();
    for e in &entries {
        println!("{:<24} checked {:>6} max_rel {:.3e} at {}", e.name, e.checked, e.max_rel_error, e.worst);
        if !e.passed {
            failed.push(e.name);
        }
    }
    assert!(entries.len() >= 25);
    assert!(failed.is_empty(), "failing entries: {failed:?}");
}

#[test]
fn whole_model_matches_finite_differences() {
    for seed in 0..2 {
        let r = model_gradcheck(seed).unwrap();
        println!("seed {seed}: checked {} max_rel {:.3e} at {}", r.checked, r.max_rel_error, r.worst);
        assert!(r.max_rel_error <= GRAD_TOL, "{r:?}");
    }
}
