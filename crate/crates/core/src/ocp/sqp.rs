//! Multiple-shooting Gauss-Newton SQP.
//!
//! Each iteration linearizes the prediction model around the current shooting
//! iterate, eliminates the state increments through the linearized dynamics
//! (including the shooting gaps) and solves the resulting dense QP in the
//! control moves plus one shared slack. Steps are globalized with a
//! backtracking line search on the l1 merit function
//! `cost + mu * sum |gap|`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{idx, ControlInput, StateVector, VehicleState, STATE_DIM};
use crate::qp::QpProblem;

use super::{MeritStep, Ocp, OcpError, OcpSolution, SolveStatus};

/// Slack above which a converged solution is reported as soft-infeasible.
const SLACK_REPORT_TOL: f64 = 1e-6;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone)]
struct Iterate {
    moves: Vec<ControlInput>,
    states: Vec<VehicleState>,
    slack: f64,
}

/// Tracked state components with their weights and reference accessors.
fn tracked(ocp: &Ocp, k: usize) -> [(usize, f64, f64); 3] {
    let w = &ocp.config.weights;
    let z = &ocp.refs[k];
    [
        (idx::V_X, w.w_v_x, z.z_v_x),
        (idx::D_Y, w.w_d_y, z.z_d_y),
        (idx::THETA, w.w_theta, z.z_theta),
    ]
}

impl Iterate {
    fn cold(ocp: &Ocp) -> Self {
        let moves = project_hard(ocp, vec![ControlInput::default(); ocp.control_horizon()]);
        let states = ocp.rollout(&moves);
        Self {
            moves,
            states,
            slack: 0.0,
        }
    }

    /// Previous solution shifted one step forward in time.
    fn shifted(ocp: &Ocp, prev: &OcpSolution) -> Option<Self> {
        let n = ocp.horizon();
        if prev.controls.len() != n || prev.predicted_states.len() != n + 1 {
            return None;
        }
        let moves: Vec<ControlInput> = (0..ocp.control_horizon())
            .map(|j| prev.controls[(j + 1).min(n - 1)])
            .collect();
        let moves = project_hard(ocp, moves);
        let mut states = Vec::with_capacity(n + 1);
        states.push(ocp.x_init);
        states.extend_from_slice(&prev.predicted_states[2..]);
        let tail = ocp
            .model
            .step(&prev.predicted_states[n], &prev.controls[n - 1]);
        states.push(tail);
        if !states.iter().all(VehicleState::is_finite) {
            return None;
        }
        Some(Self {
            moves,
            states,
            slack: prev.slack_used.max(0.0),
        })
    }

    fn tracking_cost(&self, ocp: &Ocp) -> f64 {
        ocp.tracking_cost(&self.states, &self.moves)
            + ocp.config.slack_weight * self.slack * self.slack
    }

    fn gaps(&self, ocp: &Ocp) -> Vec<StateVector> {
        (0..ocp.horizon())
            .map(|k| {
                let next = ocp.model.step(&self.states[k], &self.moves[ocp.block(k)]);
                next.to_vector() - self.states[k + 1].to_vector()
            })
            .collect()
    }
}

fn l1(gaps: &[StateVector]) -> f64 {
    gaps.iter().map(|g| g.abs().sum()).sum()
}

fn linf(gaps: &[StateVector]) -> f64 {
    gaps.iter().map(|g| g.amax()).fold(0.0, f64::max)
}

/// Sequentially clamp moves into the box and rate windows.
fn project_hard(ocp: &Ocp, mut moves: Vec<ControlInput>) -> Vec<ControlInput> {
    let b = &ocp.config.bounds;
    let dt = ocp.config.dt;
    let mut prev = ocp.u_prev;
    for u in moves.iter_mut() {
        u.a_x_c = u
            .a_x_c
            .clamp(
                prev.a_x_c + b.a_x_c_rate[0] * dt,
                prev.a_x_c + b.a_x_c_rate[1] * dt,
            )
            .clamp(b.a_x_c[0], b.a_x_c[1]);
        let dd = b.delta_rate_max * dt;
        u.delta = u
            .delta
            .clamp(prev.delta - dd, prev.delta + dd)
            .clamp(-b.delta_max, b.delta_max);
        prev = *u;
    }
    moves
}

/// Sensitivities of the shooting states to the QP variables.
///
/// `sens[k]` is `nv x 7`: column `i` holds `d x_k[i] / d w`. `offset[k]` is the
/// state increment produced by closing the linearized gaps with `w = 0`.
struct Condensed {
    sens: Vec<DMatrix<f64>>,
    offset: Vec<StateVector>,
}

fn condense(ocp: &Ocp, it: &Iterate, gaps: &[StateVector], nv: usize) -> Condensed {
    let n = ocp.horizon();
    let mut sens = Vec::with_capacity(n + 1);
    let mut offset = Vec::with_capacity(n + 1);
    sens.push(DMatrix::zeros(nv, STATE_DIM));
    offset.push(StateVector::zeros());
    for k in 0..n {
        let (a, b) = ocp.model.jacobians(&it.states[k]);
        let block = ocp.block(k);
        // Rows beyond the moves used so far are still zero.
        let live = 2 * (block + 1);
        let prev = &sens[k];
        let mut next = DMatrix::zeros(nv, STATE_DIM);
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                let aij = a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                for r in 0..live {
                    next[(r, i)] += aij * prev[(r, j)];
                }
            }
        }
        for i in 0..STATE_DIM {
            for c in 0..2 {
                next[(2 * block + c, i)] += b[(i, c)];
            }
        }
        let off = a * offset[k] + gaps[k];
        sens.push(next);
        offset.push(off);
    }
    Condensed { sens, offset }
}

struct Subproblem {
    qp: QpProblem,
    condensed: Condensed,
}

fn build_subproblem(ocp: &Ocp, it: &Iterate, gaps: &[StateVector]) -> Result<Subproblem, OcpError> {
    let n = ocp.horizon();
    let s_moves = ocp.control_horizon();
    let nv = 2 * s_moves + 1;
    let si = nv - 1;
    let cfg = &ocp.config;
    let w = &cfg.weights;
    let bnd = &cfg.bounds;
    let dt = cfg.dt;

    let condensed = condense(ocp, it, gaps, nv);
    let mut h = DMatrix::<f64>::zeros(nv, nv);
    let mut g = DVector::<f64>::zeros(nv);

    for k in 1..=n {
        let sens = &condensed.sens[k];
        let x = it.states[k].to_vector();
        for (i, weight, target) in tracked(ocp, k - 1) {
            if weight == 0.0 {
                continue;
            }
            let col = sens.column(i);
            let resid = x[i] + condensed.offset[k][i] - target;
            h.ger(2.0 * weight, &col, &col, 1.0);
            g.axpy(2.0 * weight * resid, &col, 1.0);
        }
    }
    for (j, u) in it.moves.iter().enumerate() {
        let cnt = ocp.block_count(j) as f64;
        h[(2 * j, 2 * j)] += 2.0 * w.w_a_x * cnt;
        h[(2 * j + 1, 2 * j + 1)] += 2.0 * w.w_delta * cnt;
        g[2 * j] += 2.0 * w.w_a_x * cnt * u.a_x_c;
        g[2 * j + 1] += 2.0 * w.w_delta * cnt * u.delta;
    }
    h[(si, si)] += 2.0 * cfg.slack_weight;
    g[si] += 2.0 * cfg.slack_weight * it.slack;

    let mut qp = QpProblem::new(h, g)?;
    let s = it.slack;

    // Hard input bounds.
    for (j, u) in it.moves.iter().enumerate() {
        qp.push_lower_bound(2 * j, bnd.a_x_c[0] - u.a_x_c);
        qp.push_upper_bound(2 * j, bnd.a_x_c[1] - u.a_x_c);
        qp.push_lower_bound(2 * j + 1, -bnd.delta_max - u.delta);
        qp.push_upper_bound(2 * j + 1, bnd.delta_max - u.delta);
    }
    // Hard rate bounds between consecutive moves.
    let mut row = vec![0.0; nv];
    for j in 0..s_moves {
        let prev = if j == 0 { ocp.u_prev } else { it.moves[j - 1] };
        let u = it.moves[j];
        let limits = [
            (
                0,
                u.a_x_c - prev.a_x_c,
                bnd.a_x_c_rate[0] * dt,
                bnd.a_x_c_rate[1] * dt,
            ),
            (
                1,
                u.delta - prev.delta,
                -bnd.delta_rate_max * dt,
                bnd.delta_rate_max * dt,
            ),
        ];
        for (c, diff, lo, hi) in limits {
            row.fill(0.0);
            row[2 * j + c] = 1.0;
            if j > 0 {
                row[2 * (j - 1) + c] = -1.0;
            }
            qp.push_constraint(&row, lo - diff);
            for v in row.iter_mut() {
                *v = -*v;
            }
            qp.push_constraint(&row, diff - hi);
        }
    }
    qp.push_lower_bound(si, -s);

    // Soft state bounds, sharing the slack.
    let soft_pair = |qp: &mut QpProblem, row: &mut Vec<f64>, value: f64, lo: f64, hi: f64| {
        // row . dw + value + ds >= lo - s
        row[si] = 1.0;
        qp.push_constraint(row, lo - value - s);
        for v in row[..si].iter_mut() {
            *v = -*v;
        }
        qp.push_constraint(row, value - hi - s);
    };
    for k in 1..=n {
        let sens = &condensed.sens[k];
        let x = it.states[k].to_vector();
        for (i, [lo, hi]) in [(idx::V_X, bnd.v_x), (idx::A_X, bnd.a_x)] {
            row.copy_from_slice(sens.column(i).as_slice());
            soft_pair(&mut qp, &mut row, x[i] + condensed.offset[k][i], lo, hi);
        }
    }
    for k in 0..n {
        let sens = &condensed.sens[k];
        let block = ocp.block(k);
        let (ay, grad) = ocp.lateral_acceleration(&it.states[k], it.moves[block].delta);
        let off = &condensed.offset[k];
        row.fill(0.0);
        let mut value = ay;
        for (i, gi) in [(idx::V_X, grad[0]), (idx::V_Y, grad[1]), (idx::R, grad[2])] {
            if gi != 0.0 {
                for (r, v) in row.iter_mut().zip(sens.column(i).iter()) {
                    *r += gi * v;
                }
                value += gi * off[i];
            }
        }
        row[2 * block + 1] += grad[3];
        soft_pair(&mut qp, &mut row, value, -bnd.a_y_max, bnd.a_y_max);
    }
    Ok(Subproblem { qp, condensed })
}

/// Directional derivative and curvature of the objective along a step.
fn cost_slope(ocp: &Ocp, it: &Iterate, dx: &[StateVector], dw: &DVector<f64>) -> (f64, f64) {
    let cfg = &ocp.config;
    let w = &cfg.weights;
    let (mut slope, mut curv) = (0.0, 0.0);
    for (k, dxk) in dx.iter().enumerate().skip(1) {
        let x = it.states[k].to_vector();
        for (i, weight, target) in tracked(ocp, k - 1) {
            slope += 2.0 * weight * (x[i] - target) * dxk[i];
            curv += 2.0 * weight * dxk[i] * dxk[i];
        }
    }
    for (j, u) in it.moves.iter().enumerate() {
        let cnt = ocp.block_count(j) as f64;
        let (da, dd) = (dw[2 * j], dw[2 * j + 1]);
        slope += cnt * 2.0 * (w.w_a_x * u.a_x_c * da + w.w_delta * u.delta * dd);
        curv += cnt * 2.0 * (w.w_a_x * da * da + w.w_delta * dd * dd);
    }
    let ds = dw[dw.len() - 1];
    slope += 2.0 * cfg.slack_weight * it.slack * ds;
    curv += 2.0 * cfg.slack_weight * ds * ds;
    (slope, curv)
}

fn kkt_residual(sub: &Subproblem, dw: &DVector<f64>, multipliers: &[f64]) -> f64 {
    let stationarity = (&sub.qp.hessian * dw).amax();
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for (i, &lambda) in multipliers.iter().enumerate() {
        // Constraint value at the current iterate is -lower.
        let lower = sub.qp.lower(i);
        primal = primal.max(lower);
        complementarity = complementarity.max((lambda * lower).abs());
    }
    stationarity.max(primal).max(complementarity)
}

fn take_step(
    ocp: &Ocp,
    it: &Iterate,
    dx: &[StateVector],
    dw: &DVector<f64>,
    alpha: f64,
) -> Iterate {
    let moves = it
        .moves
        .iter()
        .enumerate()
        .map(|(j, u)| {
            ControlInput::new(u.a_x_c + alpha * dw[2 * j], u.delta + alpha * dw[2 * j + 1])
        })
        .collect();
    let states = it
        .states
        .iter()
        .zip(dx)
        .enumerate()
        .map(|(k, (x, d))| {
            if k == 0 {
                ocp.x_init
            } else {
                VehicleState::from_vector(&(x.to_vector() + alpha * d))
            }
        })
        .collect();
    Iterate {
        moves,
        states,
        slack: (it.slack + alpha * dw[dw.len() - 1]).max(0.0),
    }
}

/// Solve `ocp`, warm-starting from the time-shifted `warm_start` when given.
pub fn solve(ocp: &Ocp, warm_start: Option<&OcpSolution>) -> Result<OcpSolution, OcpError> {
    let cfg = &ocp.config;
    let mut it = warm_start
        .and_then(|prev| Iterate::shifted(ocp, prev))
        .unwrap_or_else(|| Iterate::cold(ocp));
    let mut penalty = 1.0_f64;
    let mut merit_steps = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut kkt = f64::INFINITY;
    let mut gaps = it.gaps(ocp);
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let sub = match build_subproblem(ocp, &it, &gaps) {
            Ok(sub) => sub,
            Err(e) if iterations == 1 => return Err(e),
            Err(_) => break,
        };
        let qp_sol = match sub.qp.solve() {
            Ok(sol) => sol,
            Err(e) if iterations == 1 => return Err(e.into()),
            Err(_) => break,
        };
        let dw = qp_sol.x;
        kkt = kkt_residual(&sub, &dw, &qp_sol.multipliers);
        let max_gap = linf(&gaps);
        if kkt <= cfg.kkt_tolerance && max_gap <= cfg.gap_tolerance {
            status = SolveStatus::Converged;
            break;
        }

        let dx: Vec<StateVector> = sub
            .condensed
            .sens
            .iter()
            .zip(&sub.condensed.offset)
            .map(|(sens, off)| sens.tr_mul(&dw).fixed_rows::<STATE_DIM>(0).into_owned() + off)
            .collect();
        let gap_l1 = l1(&gaps);
        let (slope, curv) = cost_slope(ocp, &it, &dx, &dw);
        if gap_l1 > 0.0 {
            let required = (slope + 0.5 * curv) / (0.5 * gap_l1);
            if required > penalty {
                penalty = 1.1 * required;
            }
        }
        let merit0 = it.tracking_cost(ocp) + penalty * gap_l1;
        let descent = slope - penalty * gap_l1;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = take_step(ocp, &it, &dx, &dw, alpha);
            let trial_gaps = trial.gaps(ocp);
            let merit = trial.tracking_cost(ocp) + penalty * l1(&trial_gaps);
            if merit <= merit0 + ARMIJO * alpha * descent.min(0.0) {
                accepted = Some((trial, trial_gaps, merit));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, trial_gaps, merit)) => {
                merit_steps.push(MeritStep {
                    before: merit0,
                    after: merit,
                    step_length: alpha,
                });
                it = trial;
                gaps = trial_gaps;
            }
            None => break,
        }
    }

    if status == SolveStatus::Converged && it.slack > SLACK_REPORT_TOL {
        status = SolveStatus::InfeasibleSoft;
    }
    let objective = it.tracking_cost(ocp);
    Ok(OcpSolution {
        controls: ocp.expand(&it.moves),
        predicted_states: it.states,
        status,
        kkt_residual: kkt,
        max_gap: linf(&gaps),
        iterations,
        slack_used: it.slack,
        objective,
        merit_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_discrete, ActuationModel, FaultVector, VehicleParams};
    use crate::ocp::{build_ocp, reconfigure, MpcController, OcpBounds, OcpConfig};
    use crate::trajectory::{sample_reference, QuinticPath, ReferencePoint};

    fn straight(v: f64, n: usize) -> Vec<ReferencePoint> {
        vec![
            ReferencePoint {
                z_v_x: v,
                ..ReferencePoint::default()
            };
            n
        ]
    }

    /// Sample starting `t` seconds into a 4.5 s move to the shoulder.
    fn lane_change_refs(t: f64, cfg: &OcpConfig) -> Vec<ReferencePoint> {
        let path = QuinticPath::lane_change(0.0, -3.5, 4.5).unwrap();
        sample_reference(&path, t + cfg.dt, 25.0, 25.0, cfg.horizon, cfg.dt)
    }

    fn lane_change_ocp(t: f64, cfg: &OcpConfig) -> Ocp {
        let path = QuinticPath::lane_change(0.0, -3.5, 4.5).unwrap();
        let mut x = VehicleState::cruising(25.0, 0.0);
        x.d_y = path.position(t) + 0.05;
        build_ocp(
            x,
            &lane_change_refs(t, cfg),
            ControlInput::default(),
            &VehicleParams::default(),
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_is_optimal() {
        let cfg = OcpConfig::default();
        let x = VehicleState::cruising(22.0, 5.0);
        let ocp = build_ocp(
            x,
            &straight(22.0, 30),
            ControlInput::default(),
            &VehicleParams::default(),
            &cfg,
        )
        .unwrap();
        let sol = solve(&ocp, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        let umax = sol
            .controls
            .iter()
            .map(|u| u.a_x_c.abs().max(u.delta.abs()))
            .fold(0.0, f64::max);
        assert!(umax <= 1e-6);
        assert!(sol.objective <= 1e-10);
        assert_eq!(sol.predicted_states[0], x);
    }

    /// Test-local single-track step written from the tyre-force form.
    fn oracle_step(x: &VehicleState, u: &ControlInput, dt: f64, tau: f64) -> VehicleState {
        let p = VehicleParams::default();
        let alpha_f = u.delta - (x.v_y + p.l_f * x.r) / x.v_x;
        let alpha_r = -(x.v_y - p.l_r * x.r) / x.v_x;
        let fy_f = p.c_alpha_f * alpha_f;
        let fy_r = p.c_alpha_r * alpha_r;
        VehicleState {
            a_x: x.a_x + dt / tau * (u.a_x_c - x.a_x),
            v_x: x.v_x + dt * x.a_x,
            v_y: x.v_y + dt * ((fy_f + fy_r) / p.mass - x.v_x * x.r),
            d_y: x.d_y + dt * (x.v_x * x.theta.sin() + x.v_y * x.theta.cos()),
            r: x.r + dt * (p.l_f * fy_f - p.l_r * fy_r) / p.i_z,
            theta: x.theta + dt * x.r,
            d_x: x.d_x + dt * (x.v_x * x.theta.cos() - x.v_y * x.theta.sin()),
        }
    }

    fn oracle_cost(
        x0: &VehicleState,
        u: &[ControlInput; 2],
        z: &[ReferencePoint],
        cfg: &OcpConfig,
    ) -> f64 {
        let w = &cfg.weights;
        let mut x = *x0;
        let mut cost = 0.0;
        for k in 0..2 {
            x = oracle_step(&x, &u[k], cfg.dt, cfg.actuation_tau);
            cost += w.w_v_x * (z[k].z_v_x - x.v_x).powi(2)
                + w.w_d_y * (z[k].z_d_y - x.d_y).powi(2)
                + w.w_theta * (z[k].z_theta - x.theta).powi(2)
                + w.w_a_x * u[k].a_x_c.powi(2)
                + w.w_delta * u[k].delta.powi(2);
        }
        cost
    }

    #[test]
    fn two_step_problem_matches_grid_search() {
        let cfg = OcpConfig {
            horizon: 2,
            control_horizon: 2,
            dt: 0.1,
            actuation_tau: 0.1,
            bounds: OcpBounds {
                delta_max: 1.0,
                delta_rate_max: 100.0,
                a_x: [-50.0, 50.0],
                a_x_c: [-10.0, 10.0],
                a_x_c_rate: [-1000.0, 1000.0],
                v_x: [1.26, 100.0],
                a_y_max: 100.0,
            },
            ..OcpConfig::default()
        };
        let mut x0 = VehicleState::cruising(20.0, 0.0);
        x0.v_y = 0.1;
        x0.r = 0.02;
        let z = [
            ReferencePoint {
                z_v_x: 19.0,
                z_d_y: 0.1,
                z_theta: 0.01,
            },
            ReferencePoint {
                z_v_x: 19.0,
                z_d_y: 0.2,
                z_theta: 0.02,
            },
        ];
        let ocp = build_ocp(
            x0,
            &z,
            ControlInput::default(),
            &VehicleParams::default(),
            &cfg,
        )
        .unwrap();
        let sol = solve(&ocp, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        let u_sqp = [sol.controls[0], sol.controls[1]];
        let f_sqp = oracle_cost(&x0, &u_sqp, &z, &cfg);
        assert!((f_sqp - sol.objective).abs() <= 1e-9 * (1.0 + f_sqp));

        let a_grid: Vec<f64> = (0..21).map(|i| -3.0 + 0.2 * i as f64).collect();
        let d_grid: Vec<f64> = (0..21).map(|i| -0.1 + 0.025 * i as f64).collect();
        let mut best = (f64::INFINITY, [ControlInput::default(); 2]);
        for &a0 in &a_grid {
            for &d0 in &d_grid {
                for &a1 in &a_grid {
                    for &d1 in &d_grid {
                        let u = [ControlInput::new(a0, d0), ControlInput::new(a1, d1)];
                        let f = oracle_cost(&x0, &u, &z, &cfg);
                        if f < best.0 {
                            best = (f, u);
                        }
                    }
                }
            }
        }
        assert!(f_sqp <= best.0 + 1e-12, "sqp {f_sqp} grid {}", best.0);
        for (u, b) in u_sqp.iter().zip(&best.1) {
            assert!((u.a_x_c - b.a_x_c).abs() <= 0.2);
            assert!((u.delta - b.delta).abs() <= 0.025);
        }
    }

    #[test]
    fn velocity_step_hits_rate_and_box_limits() {
        let cfg = OcpConfig::default();
        let x = VehicleState::cruising(25.0, 0.0);
        let refs = straight(20.0, 30);
        let params = VehicleParams::default();

        let ocp = build_ocp(x, &refs, ControlInput::default(), &params, &cfg).unwrap();
        let sol = solve(&ocp, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        // From rest the first move is limited by the jerk bound.
        assert!((sol.controls[0].a_x_c + 0.14).abs() <= 1e-9);
        for w in sol.controls.windows(2) {
            assert!(w[1].a_x_c - w[0].a_x_c >= -0.14 - 1e-9);
        }

        let ocp = build_ocp(x, &refs, ControlInput::new(-3.5, 0.0), &params, &cfg).unwrap();
        let sol = solve(&ocp, None).unwrap();
        assert!((sol.controls[0].a_x_c + 3.5).abs() <= 1e-9);
    }

    #[test]
    fn merit_is_non_increasing() {
        let cfg = OcpConfig::default();
        for t in [0.5, 1.5, 2.25, 3.5] {
            let sol = solve(&lane_change_ocp(t, &cfg), None).unwrap();
            assert_eq!(sol.status, SolveStatus::Converged);
            assert!(!sol.merit_steps.is_empty());
            for m in &sol.merit_steps {
                assert!(m.after <= m.before, "{m:?}");
            }
        }
    }

    #[test]
    fn condensed_gradient_matches_finite_differences() {
        let cfg = OcpConfig::default();
        let ocp = lane_change_ocp(1.5, &cfg);
        let mut it = Iterate::cold(&ocp);
        // A point away from the origin with consistent states.
        for (j, u) in it.moves.iter_mut().enumerate() {
            *u = ControlInput::new(-0.01 * j as f64, -0.0005 * j as f64);
        }
        it.states = ocp.rollout(&it.moves);
        let gaps = it.gaps(&ocp);
        assert!(linf(&gaps) == 0.0);
        let sub = build_subproblem(&ocp, &it, &gaps).unwrap();
        let nv = sub.qp.dim();
        let reduced = |moves: &[ControlInput]| ocp.tracking_cost(&ocp.rollout(moves), moves);
        for j in 0..nv - 1 {
            let h = 1e-6;
            let mut plus = it.moves.clone();
            let mut minus = it.moves.clone();
            if j % 2 == 0 {
                plus[j / 2].a_x_c += h;
                minus[j / 2].a_x_c -= h;
            } else {
                plus[j / 2].delta += h;
                minus[j / 2].delta -= h;
            }
            let fd = (reduced(&plus) - reduced(&minus)) / (2.0 * h);
            let g = sub.qp.gradient[j];
            assert!(
                (g - fd).abs() <= 1e-6 * g.abs().max(1.0),
                "j={j} g={g} fd={fd}"
            );
        }
    }

    #[test]
    fn weight_scaling_leaves_controls_unchanged() {
        let cfg = OcpConfig::default();
        let base = solve(&lane_change_ocp(1.0, &cfg), None).unwrap();
        let scaled_cfg = OcpConfig {
            weights: cfg.weights.scaled(7.0),
            ..cfg
        };
        let scaled = solve(&lane_change_ocp(1.0, &scaled_cfg), None).unwrap();
        assert_eq!(scaled.status, SolveStatus::Converged);
        for (a, b) in base.controls.iter().zip(&scaled.controls) {
            assert!((a.a_x_c - b.a_x_c).abs() <= 1e-6);
            assert!((a.delta - b.delta).abs() <= 1e-6);
        }
    }

    #[test]
    fn reconfigured_prediction_equals_plant() {
        let params = VehicleParams::default();
        for fault in [FaultVector::STEERING_HALF, FaultVector::REAR_STIFFNESS_HALF] {
            let cfg = reconfigure(&OcpConfig::default(), fault).unwrap();
            let ocp = lane_change_ocp(1.0, &cfg);
            let sol = solve(&ocp, None).unwrap();
            assert_eq!(sol.status, SolveStatus::Converged);
            assert!(sol.max_gap <= 1e-8);
            let act = ActuationModel::from_time_constant(cfg.actuation_tau, cfg.dt).unwrap();
            let predicted = ocp.rollout(&sol.controls);
            let mut x = ocp.x_init;
            for k in 0..cfg.horizon {
                x = step_discrete(&x, &sol.controls[k], &params, &fault, &act).unwrap();
                let diff = (x.to_vector() - predicted[k + 1].to_vector()).amax();
                assert!(diff <= 1e-10, "step {k}: {diff}");
                let diff = (x.to_vector() - sol.predicted_states[k + 1].to_vector()).amax();
                assert!(diff <= 1e-7, "step {k}: {diff}");
            }
        }
    }

    #[test]
    fn warm_start_saves_iterations() {
        let params = VehicleParams::default();
        let cfg = OcpConfig::default();
        let act = ActuationModel::from_time_constant(0.1, cfg.dt).unwrap();
        let mut totals = [0usize; 2];
        for (slot, warm) in [(0, true), (1, false)] {
            let mut mpc = MpcController::new(params, cfg, ControlInput::default())
                .unwrap()
                .with_warm_start(warm);
            let mut x = VehicleState::cruising(25.0, 0.0);
            for step in 0..150 {
                let t = step as f64 * cfg.dt;
                let (u, sol) = mpc.step(&x, &lane_change_refs(t, &cfg)).unwrap();
                totals[slot] += sol.iterations;
                x = step_discrete(&x, &u, &params, &FaultVector::NOMINAL, &act).unwrap();
            }
        }
        assert!(
            totals[0] < totals[1],
            "warm {} cold {}",
            totals[0],
            totals[1]
        );
    }

    #[test]
    fn applied_controls_respect_bounds() {
        let params = VehicleParams::default();
        let cfg = OcpConfig::default();
        let b = cfg.bounds;
        let act = ActuationModel::from_time_constant(0.1, cfg.dt).unwrap();
        let mut mpc = MpcController::new(params, cfg, ControlInput::default()).unwrap();
        let mut x = VehicleState::cruising(25.0, 0.0);
        let mut prev = ControlInput::default();
        for step in 0..300 {
            let t = step as f64 * cfg.dt;
            let mut refs = lane_change_refs(t, &cfg);
            for r in refs.iter_mut() {
                r.z_v_x = 10.0;
            }
            let (u, _) = mpc.step(&x, &refs).unwrap();
            let tol = 1e-6;
            assert!(u.a_x_c >= b.a_x_c[0] - tol && u.a_x_c <= b.a_x_c[1] + tol);
            assert!(u.delta.abs() <= b.delta_max + tol);
            let rate = (u.a_x_c - prev.a_x_c) / cfg.dt;
            assert!(rate >= b.a_x_c_rate[0] - tol && rate <= b.a_x_c_rate[1] + tol);
            assert!((u.delta - prev.delta).abs() / cfg.dt <= b.delta_rate_max + tol);
            prev = u;
            x = step_discrete(&x, &u, &params, &FaultVector::NOMINAL, &act).unwrap();
            assert!(x.v_x >= b.v_x[0] - tol && x.v_x <= b.v_x[1] + tol);
            assert!(x.a_x >= b.a_x[0] - tol && x.a_x <= b.a_x[1] + tol);
        }
    }
}
