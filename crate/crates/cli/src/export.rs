//! Delimited-text writers. Floats use Rust's shortest round-trip formatting,
//! so equal traces give byte-identical files.

use std::io::Write;

use anyhow::Result;
use failsafe_core::scenario::{ErrorSeries, MetricsReport, SimTrace, StepRecord, Vehicle};

/// Column order of trace files: one row per step and vehicle. Safety-channel
/// columns are empty on rows where they do not apply.
pub const TRACE_COLUMNS: [&str; 24] = [
    "t",
    "vehicle",
    "a_x",
    "v_x",
    "v_y",
    "d_y",
    "r",
    "theta",
    "d_x",
    "a_x_c",
    "delta",
    "e_tg",
    "mode",
    "goal_velocity",
    "z_v_x",
    "z_d_y",
    "z_theta",
    "a_y_model",
    "a_y_plant",
    "delta_bound",
    "solver_status",
    "solver_iterations",
    "kkt_residual",
    "slack",
];

/// Plotted signals per vehicle, in plot-file column order.
pub const PLOT_SIGNALS: [&str; 5] = ["v_x", "a_x", "delta", "d_y", "r"];

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "name",
    "strategy",
    "t_a",
    "t_b",
    "stop_time",
    "stop_distance",
    "tv_gap_closing_time",
    "e_tg_at_t_b",
    "max_d_y_error",
    "max_r_error",
    "max_delta_error",
    "max_abs_delta",
    "max_abs_a_y_model",
    "solver_failures",
    "solver_max_iter",
];

fn num(v: f64) -> String {
    // Debug switches to exponent notation for very small and large values.
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Time-gap error of `vehicle` against the vehicle it currently follows.
fn own_gap_error(rec: &StepRecord, vehicle: Vehicle) -> Option<f64> {
    match vehicle {
        Vehicle::Lead => None,
        Vehicle::Following => rec.e_tg.fv_lv,
        Vehicle::Trailing => rec.e_tg.tv_active,
    }
}

fn trace_row(rec: &StepRecord, vehicle: Vehicle) -> Vec<String> {
    let v = rec.vehicle(vehicle);
    let x = &v.state;
    let mut row = vec![
        num(rec.t),
        vehicle.as_str().to_string(),
        num(x.a_x),
        num(x.v_x),
        num(x.v_y),
        num(x.d_y),
        num(x.r),
        num(x.theta),
        num(x.d_x),
        num(v.input.a_x_c),
        num(v.input.delta),
        opt(own_gap_error(rec, vehicle)),
        rec.mode.as_str().to_string(),
    ];
    let safety = rec.safety.filter(|_| vehicle == Vehicle::Following);
    match safety {
        Some(s) => {
            row.extend([
                num(s.goal_velocity),
                num(s.reference.z_v_x),
                num(s.reference.z_d_y),
                num(s.reference.z_theta),
                num(s.a_y_model),
                num(s.a_y_plant),
                num(s.delta_bound),
            ]);
            match s.solver {
                Some(d) => row.extend([
                    d.outcome.as_str().to_string(),
                    d.iterations.to_string(),
                    num(d.kkt_residual),
                    num(d.slack),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        None => row.extend(std::iter::repeat_n(String::new(), 11)),
    }
    row
}

pub fn write_trace<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for rec in &trace.records {
        for v in Vehicle::ALL {
            w.write_record(trace_row(rec, v))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide time series: `t`, then `<vehicle>_<signal>` for every vehicle and
/// signal in [`PLOT_SIGNALS`], then the TV time-gap errors.
pub fn write_plot_data<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for v in Vehicle::ALL {
        header.extend(PLOT_SIGNALS.iter().map(|s| format!("{}_{s}", v.as_str())));
    }
    header.extend(["e_tg_fv_lv", "e_tg_tv_fv", "e_tg_tv_lv"].map(String::from));
    w.write_record(&header)?;
    for rec in &trace.records {
        let mut row = vec![num(rec.t)];
        for v in Vehicle::ALL {
            let r = rec.vehicle(v);
            row.extend(
                [
                    r.state.v_x,
                    r.state.a_x,
                    r.input.delta,
                    r.state.d_y,
                    r.state.r,
                ]
                .map(num),
            );
        }
        row.extend([rec.e_tg.fv_lv, rec.e_tg.tv_fv, rec.e_tg.tv_lv].map(opt));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// FV differences against the baseline run.
pub fn write_errors<W: Write>(trace: &SimTrace, errors: &ErrorSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "delta_error", "d_y_error", "r_error"])?;
    for (i, rec) in trace.records.iter().enumerate() {
        w.write_record([rec.t, errors.delta[i], errors.d_y[i], errors.r[i]].map(num))?;
    }
    w.flush()?;
    Ok(())
}

fn summary_row(m: &MetricsReport, strategy: &str) -> Vec<String> {
    vec![
        m.name.clone(),
        strategy.to_string(),
        opt(m.t_a),
        opt(m.t_b),
        opt(m.stop_time),
        opt(m.stop_distance),
        opt(m.tv_gap_closing_time),
        opt(m.e_tg_at_t_b),
        opt(m.max_d_y_error),
        opt(m.max_r_error),
        opt(m.max_delta_error),
        num(m.max_abs_delta),
        num(m.max_abs_a_y_model),
        m.solver_failures.to_string(),
        m.solver_max_iter.to_string(),
    ]
}

/// One row per run; unset metrics are empty cells.
pub fn write_summary_csv<W: Write>(rows: &[(&MetricsReport, &str)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for (m, strategy) in rows {
        w.write_record(summary_row(m, strategy))?;
    }
    w.flush()?;
    Ok(())
}

/// Unset metrics are `null`.
pub fn write_summary_json<W: Write>(metrics: &[&MetricsReport], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, metrics)?;
    Ok(())
}
