mod common;

use std::sync::Arc;

use adpmpc::sim::{compute_ise, run_closed_loop};
use adpmpc::Strategy;

#[test]
fn default_run_has_one_row_per_sample() {
    let sys = common::default_system();
    let parent = Arc::new(sys.synthesize().unwrap());
    let map = Arc::new(sys.regions(&parent).unwrap());
    let spec = sys.controller(Strategy::Adp3, &parent, Some(&map)).unwrap();
    let trace = run_closed_loop(&sys.scenario().unwrap(), &spec).unwrap();
    assert_eq!(trace.len(), 25_001);
    assert!((trace.records.last().unwrap().t - 250.0).abs() < 1e-9);
    assert!(trace.failure.is_none());
}

#[test]
fn noise_is_reproducible_from_the_seed() {
    let sys = common::default_system();
    let set = Arc::new(sys.synthesize().unwrap());
    let spec = sys.controller(Strategy::Adp1, &set, None).unwrap();
    let mut scenario = sys.scenario().unwrap();
    scenario.duration = 3.0;
    scenario.noise_std = 0.002;
    let a = run_closed_loop(&scenario, &spec).unwrap();
    let b = run_closed_loop(&scenario, &spec).unwrap();
    let states = |t: &adpmpc::sim::SimTrace| t.records.iter().map(|r| r.x_measured.clone()).collect::<Vec<_>>();
    assert_eq!(states(&a), states(&b));
    scenario.seed += 1;
    let c = run_closed_loop(&scenario, &spec).unwrap();
    assert_ne!(states(&a), states(&c));
}

#[test]
fn starting_at_the_set_point_stays_there() {
    let sys = common::default_system();
    let set = Arc::new(sys.synthesize().unwrap());
    for s in [Strategy::Adp1, Strategy::Adp2] {
        let spec = sys.controller(s, &set, None).unwrap();
        let mut scenario = sys.scenario().unwrap();
        scenario.initial_state = sys.setpoint.x_r.clone();
        scenario.duration = 20.0;
        let trace = run_closed_loop(&scenario, &spec).unwrap();
        assert!(compute_ise(&trace, sys.setpoint.x_r.as_slice()) < 1e-18, "{s}");
        assert!(trace.records.iter().all(|r| r.u[0] == sys.setpoint.u_r[0]));
    }
}

#[test]
fn every_adp_law_approaches_the_set_point() {
    let sys = common::default_system();
    let set = Arc::new(sys.synthesize().unwrap());
    let map = Arc::new(sys.regions(&set).unwrap());
    for s in [Strategy::Adp1, Strategy::Adp2, Strategy::Adp3] {
        let spec = sys.controller(s, &set, Some(&map)).unwrap();
        let trace = run_closed_loop(&sys.scenario().unwrap(), &spec).unwrap();
        let err = |x: &[f64]| x.iter().zip(sys.setpoint.x_r.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let first = err(&trace.records[0].x_true);
        let last = err(&trace.records.last().unwrap().x_true);
        assert!(last < 0.05 * first, "{s}: {first} -> {last}");
    }
}
