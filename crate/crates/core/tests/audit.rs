mod common;

use std::sync::Arc;

use adpmpc::audit::{audit, AuditConfig, GridSpec, Verdict};
use adpmpc::model::{build_switched_model, QuantizedControlSet};
use adpmpc::polytope::Polytope;
use adpmpc::synthesis::build_p1_set;
use adpmpc::{ControlBox, ControllerSpec, CostWeights, NonlinearPlant, Strategy, SynthesisOptions, ValueSource};
use nalgebra::DMatrix;

fn scalar(a: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, a)
}

/// Scalar plant `x⁺ = a_plant x + u` under a law designed for `a_model`.
fn scalar_loop(a_model: f64, a_plant: f64, horizon: usize) -> (ControllerSpec, NonlinearPlant) {
    // fixed point of the scalar Riccati recursion
    let mut p = 1.0;
    for _ in 0..500 {
        p = 1.0 + a_model * a_model * p - (a_model * p).powi(2) / (1.0 + p);
    }
    let w = CostWeights::new(scalar(1.0), scalar(1.0), scalar(p)).unwrap();
    let bounds = ControlBox::scalar(-1.0, 1.0).unwrap();
    let levels = QuantizedControlSet::uniform(&bounds, 21).unwrap();
    let model = build_switched_model(&scalar(a_model), &scalar(1.0), &levels, &w).unwrap();
    let set = build_p1_set(&model, &SynthesisOptions { horizon, ..Default::default() }).unwrap();
    let plant =
        NonlinearPlant::discrete_linear(scalar(a_plant), scalar(1.0), Polytope::everything(1), bounds, 1.0).unwrap();
    let spec = ControllerSpec::new(Strategy::Adp1, &model, ValueSource::Set(Arc::new(set)), horizon).unwrap();
    (spec, plant)
}

fn interval(points: usize) -> AuditConfig {
    let mut c = AuditConfig::new(Polytope::from_box(&[-2.0], &[2.0]).unwrap());
    c.grid = GridSpec::PointsPerAxis(points);
    c
}

#[test]
fn stable_scalar_loop_is_certified() {
    let (spec, plant) = scalar_loop(0.95, 0.95, 3);
    let report = audit(&interval(41), &spec, &plant).unwrap();
    assert_eq!(report.verdict, Verdict::CertifiedDecrease, "{report}");
    assert!(report.c2 > 0.0);
    assert_eq!(report.c1, 1.0);
    assert_eq!(report.points_tested + report.points_excluded, 41);
}

#[test]
fn destabilized_plant_is_caught() {
    let (spec, plant) = scalar_loop(1.0, 3.0, 2);
    let report = audit(&interval(41), &spec, &plant).unwrap();
    assert_eq!(report.verdict, Verdict::Violated);
    assert!(report.c2 < 0.0);
    let x = report.worst_state[0];
    assert!(x.abs() > 0.4, "witness {x}");
}

#[test]
fn finer_grid_never_raises_the_margin() {
    let (spec, plant) = scalar_loop(0.95, 0.95, 3);
    let coarse = audit(&interval(11), &spec, &plant).unwrap();
    let fine = audit(&interval(21), &spec, &plant).unwrap();
    assert!(fine.c2 <= coarse.c2);
    assert!(fine.grid_step < coarse.grid_step);
}

#[test]
fn audit_does_not_depend_on_thread_count() {
    let sys = common::default_system();
    let set = Arc::new(sys.synthesize().unwrap());
    let spec = sys.controller(Strategy::Adp1, &set, None).unwrap();
    let mut cfg = sys.audit_config();
    cfg.grid = GridSpec::PointsPerAxis(7);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| audit(&cfg, &spec, &sys.error_plant).unwrap());
    let b = three.install(|| audit(&cfg, &spec, &sys.error_plant).unwrap());
    assert_eq!(a.c2, b.c2);
    assert_eq!(a.worst_state, b.worst_state);
}
