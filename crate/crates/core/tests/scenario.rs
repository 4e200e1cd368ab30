use failsafe_core::dynamics::{FaultVector, V_X_MIN};
use failsafe_core::scenario::{
    error_metrics, run_scenario, run_suite, MetricsReport, ScenarioConfig, ScenarioError, Vehicle,
    STOP_VELOCITY_TOL,
};
use failsafe_core::tdm::{Mode, Strategy};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

fn fault_free(duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        fault_injection_time: None,
        duration,
        ..ScenarioConfig::default()
    }
}

#[test]
fn zero_duration_keeps_initial_conditions_only() {
    let cfg = ScenarioConfig {
        duration: 0.0,
        ..ScenarioConfig::default()
    };
    let trace = run_scenario(&cfg).unwrap();
    assert_eq!(trace.records.len(), 1);
    let r = &trace.records[0];
    assert_eq!(r.t, 0.0);
    let gap = cfg.acc.h_dg * cfg.acc.v_ref;
    assert_eq!(r.vehicle(Vehicle::Lead).state.d_x, 2.0 * gap);
    assert_eq!(r.vehicle(Vehicle::Following).state.d_x, gap);
    assert_eq!(r.vehicle(Vehicle::Trailing).state.d_x, 0.0);
    assert_eq!(trace.t_a, None);
}

#[test]
fn fault_free_string_holds_steady_state() {
    let trace = run_scenario(&fault_free(10.0)).unwrap();
    assert_eq!(trace.records.len(), 1001);
    for r in &trace.records {
        assert_eq!(r.mode, Mode::Nominal);
        for e in [r.e_tg.fv_lv, r.e_tg.tv_fv, r.e_tg.tv_active] {
            let e = e.unwrap();
            assert!(e.abs() <= 1e-3, "e_tg {e} at t = {}", r.t);
        }
    }
}

#[test]
fn time_base_is_uniform() {
    let trace = run_scenario(&fault_free(2.0)).unwrap();
    for (k, r) in trace.records.iter().enumerate() {
        assert_eq!(r.t, k as f64 * 0.01);
    }
}

#[test]
fn brake_in_lane_departs_then_decelerates_monotonically() {
    let trace = run_scenario(&ScenarioConfig::default()).unwrap();
    let (t_a, t_b) = (trace.t_a.unwrap(), trace.t_b.unwrap());
    assert!(t_a < t_b, "t_a {t_a} t_b {t_b}");
    let start = trace.index_of(t_a);
    let v: Vec<f64> = trace.records[start..]
        .iter()
        .map(|r| r.vehicle(Vehicle::Following).state.v_x)
        .collect();
    for w in v.windows(2) {
        assert!(w[1] <= w[0], "speed rose from {} to {}", w[0], w[1]);
    }
    assert!((v.last().unwrap() - V_X_MIN).abs() <= STOP_VELOCITY_TOL);
    assert_eq!(trace.records.last().unwrap().mode, Mode::Stopped);
}

#[test]
fn identical_configs_give_identical_traces() {
    let cfg = ScenarioConfig {
        duration: 18.0,
        plant_fault: FaultVector::STEERING_HALF,
        ..ScenarioConfig::default()
    };
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    // Debug output of f64 round-trips, so equal strings mean equal bits.
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn trace_against_itself_has_zero_error() {
    let trace = run_scenario(&ScenarioConfig {
        duration: 6.0,
        fault_injection_time: Some(0.5),
        ..ScenarioConfig::default()
    });
    // Too short for the duration margin.
    assert!(matches!(trace, Err(ScenarioError::InvalidConfig(_))));

    let trace = run_scenario(&fault_free(3.0)).unwrap();
    let e = error_metrics(&trace, &trace).unwrap();
    assert_eq!((e.max_delta, e.max_d_y, e.max_r), (0.0, 0.0, 0.0));
    let shorter = run_scenario(&fault_free(2.0)).unwrap();
    assert!(matches!(
        error_metrics(&trace, &shorter),
        Err(ScenarioError::Misaligned(_))
    ));
}

#[test]
fn invalid_configs_report_field_paths() {
    let mut cfg = ScenarioConfig::default();
    cfg.acc.h_dg = 0.0;
    let d = cfg.diagnostics();
    assert_eq!(d.len(), 1, "{d:?}");
    assert!(d[0].starts_with("acc.h_dg"), "{d:?}");

    let mut cfg = ScenarioConfig::default();
    cfg.nmpc.horizon = 0;
    let d = cfg.diagnostics();
    assert_eq!(d.len(), 1, "{d:?}");
    assert!(d[0].starts_with("nmpc.horizon"), "{d:?}");

    let cfg = ScenarioConfig {
        dt: 0.0,
        ..ScenarioConfig::default()
    };
    assert!(cfg.diagnostics().iter().any(|e| e.starts_with("dt")));
    assert!(matches!(
        run_scenario(&cfg),
        Err(ScenarioError::InvalidConfig(_))
    ));

    let mut cfg = ScenarioConfig::default();
    cfg.nmpc.dt = 0.015;
    assert!(cfg
        .diagnostics()
        .iter()
        .any(|e| e.contains("integer multiple")));

    assert!(ScenarioConfig::default().diagnostics().is_empty());
}

#[test]
fn metrics_are_nonnegative_or_unset() {
    let trace = run_scenario(&ScenarioConfig {
        strategy: Strategy::BrakeOutOfLane,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let m = MetricsReport::compute(&trace, None).unwrap();
    for v in [
        m.t_a,
        m.t_b,
        m.stop_time,
        m.stop_distance,
        m.tv_gap_closing_time,
        m.e_tg_at_t_b,
    ] {
        assert!(v.unwrap() >= 0.0, "{m:?}");
    }
    assert!(m.max_d_y_error.is_none());
    assert!(m.max_abs_delta >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 3, ..ProptestConfig::default() })]

    // Strategy trade-offs hold across a band of initial speeds, time gaps and
    // lane-change durations.
    #[test]
    fn strategy_trade_offs_hold_in_perturbation_band(
        speed in 0.8..1.2_f64,
        gap in 0.8..1.2_f64,
        lane_change in 0.8..1.2_f64,
    ) {
        let mut base = ScenarioConfig { duration: 40.0, ..ScenarioConfig::default() };
        base.acc.v_ref *= speed;
        base.acc.h_dg *= gap;
        base.lane_change_duration *= lane_change;
        let configs = [Strategy::BrakeInLane, Strategy::BrakeOutOfLane]
            .map(|strategy| ScenarioConfig { strategy, ..base.clone() });
        let runs = run_suite(&configs).unwrap();
        let (bil, bol) = (&runs[0].metrics, &runs[1].metrics);
        prop_assert!(bil.stop_time.unwrap() < bol.stop_time.unwrap(), "{bil:?} {bol:?}");
        prop_assert!(bil.stop_distance.unwrap() < bol.stop_distance.unwrap(), "{bil:?} {bol:?}");
        prop_assert!(
            bil.tv_gap_closing_time.unwrap() > bol.tv_gap_closing_time.unwrap(),
            "{bil:?} {bol:?}"
        );
    }
}
