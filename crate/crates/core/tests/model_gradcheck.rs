//! Whole-model gradient check: every parameter of a deliberately tiny
//! 2-layer, d=16 masked LM against central finite differences.

use dart_core::tensor::gradcheck::model_suite;

const TOL: f32 = 1e-2;

#[test]
fn every_parameter_matches_finite_differences() {
    let reports = model_suite();
    let mut worst = 0.0f32;
    for r in &reports {
        println!("{:<24} normwise rel err {:.2e}", r.name, r.error);
        worst = worst.max(r.error);
    }
    println!("worst {worst:.2e}");
    for r in reports {
        assert!(r.error < TOL, "{}: relative error {}", r.name, r.error);
    }
}
