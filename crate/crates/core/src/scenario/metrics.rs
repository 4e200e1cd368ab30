use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleState, V_X_MIN};

use super::{ScenarioError, SimTrace, SolverOutcome, Vehicle};

/// Velocity error at which the FV counts as stopped [m/s].
pub const STOP_VELOCITY_TOL: f64 = 0.01;
/// Lateral error at which the FV counts as parked [m].
pub const STOP_LATERAL_TOL: f64 = 0.001;
/// |e_tg| that opens a gap-closing episode [s].
pub const GAP_OPEN_THRESHOLD: f64 = 0.4;
/// |e_tg| below which the gap counts as closed [s].
pub const GAP_CLOSED_THRESHOLD: f64 = 0.01;
/// Observation window required after a signal settles [s].
pub const SETTLE_MARGIN: f64 = 5.0;

/// True when every state of `tail` is within the stop thresholds.
pub fn stop_condition(tail: &[VehicleState], goal_velocity: f64, goal_d_y: f64) -> bool {
    !tail.is_empty()
        && tail.iter().all(|x| {
            (x.v_x - goal_velocity).abs() <= STOP_VELOCITY_TOL
                && (x.d_y - goal_d_y).abs() <= STOP_LATERAL_TOL
        })
}

/// First index `>= start` from which the stop condition holds to the end.
pub fn stop_index(
    states: &[VehicleState],
    start: usize,
    goal_velocity: f64,
    goal_d_y: f64,
) -> Option<usize> {
    if start >= states.len() {
        return None;
    }
    let mut first = states.len();
    while first > start && stop_condition(&states[first - 1..first], goal_velocity, goal_d_y) {
        first -= 1;
    }
    (first < states.len()).then_some(first)
}

/// Time from the first `|e| > 0.4` at or after `start` until `|e|` drops
/// below 0.01 for good. Unset if the episode never opens, never closes, or
/// closes less than [`SETTLE_MARGIN`] before the end of the signal.
pub fn gap_closing_time(times: &[f64], e_tg: &[Option<f64>], start: usize) -> Option<f64> {
    assert_eq!(times.len(), e_tg.len());
    let open =
        (start..e_tg.len()).find(|&i| e_tg[i].is_some_and(|e| e.abs() > GAP_OPEN_THRESHOLD))?;
    let last_high = (open..e_tg.len())
        .rev()
        .find(|&i| !e_tg[i].is_some_and(|e| e.abs() < GAP_CLOSED_THRESHOLD))?;
    let closed = last_high + 1;
    if closed >= times.len() || times[times.len() - 1] - times[closed] < SETTLE_MARGIN - 1e-9 {
        return None;
    }
    Some(times[closed] - times[open])
}

/// `(stop_time, stop_distance)` of the FV, measured from `t_a`.
pub fn stop_metrics(trace: &SimTrace) -> Option<(f64, f64)> {
    let t_a = trace.t_a?;
    let start = trace.index_of(t_a);
    let fv: Vec<VehicleState> = trace
        .records
        .iter()
        .map(|r| r.vehicle(Vehicle::Following).state)
        .collect();
    let i = stop_index(&fv, start, V_X_MIN, trace.config.geometry.shoulder_offset())?;
    Some((
        trace.records[i].t - trace.records[start].t,
        fv[i].d_x - fv[start].d_x,
    ))
}

/// FV differences against a baseline run on the same time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub delta: Vec<f64>,
    pub d_y: Vec<f64>,
    pub r: Vec<f64>,
    pub max_delta: f64,
    pub max_d_y: f64,
    pub max_r: f64,
}

pub fn error_metrics(trace: &SimTrace, baseline: &SimTrace) -> Result<ErrorSeries, ScenarioError> {
    if trace.records.len() != baseline.records.len() {
        return Err(ScenarioError::Misaligned(format!(
            "{} records against {}",
            trace.records.len(),
            baseline.records.len()
        )));
    }
    if trace.dt() != baseline.dt() {
        return Err(ScenarioError::Misaligned(format!(
            "dt {} against {}",
            trace.dt(),
            baseline.dt()
        )));
    }
    let pairs = trace.records.iter().zip(&baseline.records).map(|(a, b)| {
        let a = a.vehicle(Vehicle::Following);
        let b = b.vehicle(Vehicle::Following);
        (
            a.input.delta - b.input.delta,
            a.state.d_y - b.state.d_y,
            a.state.r - b.state.r,
        )
    });
    let (mut delta, mut d_y, mut r) = (Vec::new(), Vec::new(), Vec::new());
    for (a, b, c) in pairs {
        delta.push(a);
        d_y.push(b);
        r.push(c);
    }
    let max_abs = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    Ok(ErrorSeries {
        max_delta: max_abs(&delta),
        max_d_y: max_abs(&d_y),
        max_r: max_abs(&r),
        delta,
        d_y,
        r,
    })
}

/// Summary of one run. Metrics whose trigger never fired are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub t_a: Option<f64>,
    pub t_b: Option<f64>,
    /// [s]
    pub stop_time: Option<f64>,
    /// [m]
    pub stop_distance: Option<f64>,
    /// TV re-connection time to the LV [s].
    pub tv_gap_closing_time: Option<f64>,
    /// |e_tg| of the TV against the LV at `t_b` [s].
    pub e_tg_at_t_b: Option<f64>,
    /// Against the baseline run [m].
    pub max_d_y_error: Option<f64>,
    /// Against the baseline run [rad/s].
    pub max_r_error: Option<f64>,
    /// Against the baseline run [rad].
    pub max_delta_error: Option<f64>,
    /// Largest applied FV steering angle [rad].
    pub max_abs_delta: f64,
    /// Largest internal-model |a_y| under the applied input [m/s^2].
    pub max_abs_a_y_model: f64,
    pub solver_failures: usize,
    pub solver_max_iter: usize,
}

impl MetricsReport {
    pub fn compute(trace: &SimTrace, baseline: Option<&SimTrace>) -> Result<Self, ScenarioError> {
        let (stop_time, stop_distance) = match stop_metrics(trace) {
            Some((t, d)) => (Some(t), Some(d)),
            None => (None, None),
        };
        let (closing, at_t_b) = match trace.t_b {
            Some(t_b) => {
                let i = trace.index_of(t_b);
                let times: Vec<f64> = trace.records.iter().map(|r| r.t).collect();
                let e: Vec<Option<f64>> = trace.records.iter().map(|r| r.e_tg.tv_lv).collect();
                (gap_closing_time(&times, &e, i), e[i].map(f64::abs))
            }
            None => (None, None),
        };
        let errors = baseline.map(|b| error_metrics(trace, b)).transpose()?;
        let mut max_abs_delta = 0.0_f64;
        let mut max_abs_a_y_model = 0.0_f64;
        let mut solver_failures = 0;
        let mut solver_max_iter = 0;
        for r in &trace.records {
            max_abs_delta = max_abs_delta.max(r.vehicle(Vehicle::Following).input.delta.abs());
            if let Some(s) = &r.safety {
                max_abs_a_y_model = max_abs_a_y_model.max(s.a_y_model.abs());
                match s.solver.map(|d| d.outcome) {
                    Some(SolverOutcome::Failed) => solver_failures += 1,
                    Some(SolverOutcome::MaxIter) => solver_max_iter += 1,
                    _ => {}
                }
            }
        }
        Ok(Self {
            name: trace.config.name.clone(),
            t_a: trace.t_a,
            t_b: trace.t_b,
            stop_time,
            stop_distance,
            tv_gap_closing_time: closing,
            e_tg_at_t_b: at_t_b,
            max_d_y_error: errors.as_ref().map(|e| e.max_d_y),
            max_r_error: errors.as_ref().map(|e| e.max_r),
            max_delta_error: errors.as_ref().map(|e| e.max_delta),
            max_abs_delta,
            max_abs_a_y_model,
            solver_failures,
            solver_max_iter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parked(v: f64, d_y: f64) -> VehicleState {
        let mut x = VehicleState::cruising(v, 0.0);
        x.d_y = d_y;
        x
    }

    #[test]
    fn on_goal_from_start_stops_immediately() {
        let xs = vec![parked(V_X_MIN, -3.5); 50];
        assert_eq!(stop_index(&xs, 0, V_X_MIN, -3.5), Some(0));
        assert!(stop_condition(&xs, V_X_MIN, -3.5));
    }

    #[test]
    fn persistent_velocity_error_never_stops() {
        let xs = vec![parked(V_X_MIN + 0.02, -3.5); 50];
        assert_eq!(stop_index(&xs, 0, V_X_MIN, -3.5), None);
        assert!(!stop_condition(&xs, V_X_MIN, -3.5));
        assert!(!stop_condition(&[], V_X_MIN, -3.5));
    }

    #[test]
    fn stop_requires_holding_to_the_end() {
        let mut xs = vec![parked(V_X_MIN, -3.5); 50];
        xs[10] = parked(V_X_MIN, -3.4);
        xs[30] = parked(V_X_MIN, -3.498);
        assert_eq!(stop_index(&xs, 0, V_X_MIN, -3.5), Some(31));
        assert_eq!(stop_index(&xs, 40, V_X_MIN, -3.5), Some(40));
        xs[49] = parked(2.0, -3.5);
        assert_eq!(stop_index(&xs, 0, V_X_MIN, -3.5), None);
    }

    fn signal(dt: f64, end: f64, f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<Option<f64>>) {
        let n = (end / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let e = times.iter().map(|&t| Some(f(t))).collect();
        (times, e)
    }

    #[test]
    fn closing_time_of_constructed_signal() {
        let (times, e) = signal(0.01, 12.0, |t| {
            if t < 1.0 - 1e-9 {
                0.0
            } else if t < 4.0 - 1e-9 {
                0.5 * (4.0 - t) / 3.0 + 0.01
            } else {
                0.005
            }
        });
        let c = gap_closing_time(&times, &e, 0).unwrap();
        assert!((c - 3.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn closing_time_uses_magnitude() {
        let (times, e) = signal(0.01, 12.0, |t| {
            if t < 1.0 - 1e-9 {
                0.0
            } else if t < 4.0 - 1e-9 {
                -0.5
            } else {
                -0.001
            }
        });
        assert!((gap_closing_time(&times, &e, 0).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn closing_time_unset_cases() {
        let (times, e) = signal(0.01, 12.0, |_| 0.3);
        assert_eq!(gap_closing_time(&times, &e, 0), None);
        // Settles too close to the end of the run.
        let (times, e) = signal(0.01, 8.0, |t| if t < 4.0 { 0.5 } else { 0.0 });
        assert_eq!(gap_closing_time(&times, &e, 0), None);
        // Never settles.
        let (times, e) = signal(0.01, 20.0, |t| if t < 4.0 { 0.5 } else { 0.02 });
        assert_eq!(gap_closing_time(&times, &e, 0), None);
    }
}
