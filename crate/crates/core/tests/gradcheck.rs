mod common;

use common::gradcheck::{run_all, REL_TOL};

#[test]
fn every_op_matches_finite_differences() {
    let mut bad = Vec::new();
    for (name, o) in run_all(100, 11) {
        println!("{name:<18} checked {:>6}  worst rel {:.2e}  failures {}", o.checked, o.worst_rel, o.failures);
        if o.failures > 0 {
            bad.push(name);
        }
    }
    assert!(bad.is_empty(), "ops failing at rel {REL_TOL}: {bad:?}");
}

#[test]
fn harness_detects_wrong_derivative() {
    use common::gradcheck::{check, Case};
    use weightgen::numerics::Tensor;
    let c = Case {
        inputs: vec![Tensor::new(vec![3], vec![0.3, -0.7, 1.1]).unwrap()],
        build: Box::new(|g, v| Ok(g.tanh(v[0]))),
        oracle: Box::new(|x| x[0].iter().map(|v| v.sin()).collect()),
        h: 1e-4,
    };
    let mut rng = weightgen::rng::stream(0, "neg");
    assert!(check(&c, &mut rng).failures > 0);
}
