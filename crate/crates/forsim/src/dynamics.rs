//! Kinematic bicycle model, PID trajectory-tracking controller, and the
//! composed one-step propagator used everywhere virtual states advance.
//!
//! Integration scheme: forward Euler with all derivatives evaluated at the
//! old state, so the position moves along the old heading. The model is
//! kinematic; `(vx, vy)` always equals `speed * (cos h, sin h)` and reverse
//! motion is not modeled (speed clamps at zero).

use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec2};
use crate::world::{AgentState, SimConfig, Trajectory};

/// Longitudinal acceleration and front-steer command, clamped at
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    accel: f64,
    steer: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer: f64, a_max: f64, steer_max: f64) -> Self {
        ControlInput {
            accel: accel.clamp(-a_max, a_max),
            steer: steer.clamp(-steer_max, steer_max),
        }
    }

    pub fn zero() -> Self {
        ControlInput { accel: 0.0, steer: 0.0 }
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }
}

/// Controller memory, owned per rollout branch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub speed_integral: f64,
    pub prev_speed_error: f64,
    pub lateral_integral: f64,
    pub prev_cross_track_error: f64,
}

/// One forward-Euler step of the kinematic bicycle model.
///
/// Speed clamps to `[0, v_max]` (no reverse); the heading pair is rebuilt
/// from the propagated angle, so it stays on the unit circle.
pub fn bicycle_step(
    s: &AgentState,
    u: ControlInput,
    wheelbase: f64,
    dt: f64,
    v_max: f64,
) -> AgentState {
    debug_assert!(dt > 0.0 && wheelbase > 0.0);
    let v = s.speed();
    let theta = s.heading_angle();
    let x = s.x + v * s.cos_h * dt;
    let y = s.y + v * s.sin_h * dt;
    let theta_next = theta + v / wheelbase * u.steer().tan() * dt;
    let v_next = (v + u.accel() * dt).clamp(0.0, v_max);
    AgentState::from_pose(x, y, theta_next, v_next)
}

/// PID tracking of a target trajectory: longitudinal PID on the speed error
/// against the lookahead point, lateral PID on the cross-track error mixed
/// with `k_heading` times the heading error against the target polyline.
pub fn pid_control(
    s: &AgentState,
    target: &Trajectory,
    pid: &PidState,
    cfg: &SimConfig,
) -> (ControlInput, PidState) {
    debug_assert!(!target.is_empty());
    let gains = &cfg.pid;
    let dt = target.dt;
    let mut next = *pid;

    // Longitudinal loop on the lookahead point's speed.
    let lookahead = gains.lookahead.min(target.len() - 1);
    let target_speed = target.points[lookahead].speed();
    let speed_error = target_speed - s.speed();
    next.speed_integral =
        (pid.speed_integral + speed_error * dt).clamp(-gains.anti_windup, gains.anti_windup);
    let speed_deriv = (speed_error - pid.prev_speed_error) / dt;
    next.prev_speed_error = speed_error;
    let accel = gains.speed_kp * speed_error
        + gains.speed_ki * next.speed_integral
        + gains.speed_kd * speed_deriv;

    // Lateral loop on cross-track + heading error. Cross-track is positive
    // when the vehicle sits left of the path, so it enters negated.
    let (cross_track, heading_error) = if target.len() >= 2 {
        let path: Vec<Vec2> = target.points.iter().map(|p| p.position()).collect();
        let proj = geom::project_to_polyline(&path, s.position());
        let path_heading = proj.tangent.y.atan2(proj.tangent.x);
        (proj.signed_offset, geom::wrap_angle(path_heading - s.heading_angle()))
    } else {
        (0.0, 0.0)
    };
    let lateral_error = -cross_track + gains.k_heading * heading_error;
    next.lateral_integral =
        (pid.lateral_integral + lateral_error * dt).clamp(-gains.anti_windup, gains.anti_windup);
    let cross_track_deriv = (cross_track - pid.prev_cross_track_error) / dt;
    next.prev_cross_track_error = cross_track;
    let steer = gains.lateral_kp * lateral_error
        + gains.lateral_ki * next.lateral_integral
        + gains.lateral_kd * (-cross_track_deriv);

    (ControlInput::new(accel, steer, cfg.a_max, cfg.steer_max), next)
}

/// One-step execution: PID tracking followed by kinematic bicycle
/// propagation. This is the single composition point for advancing virtual
/// states.
pub fn propagate(
    s: &AgentState,
    target: &Trajectory,
    pid: &PidState,
    wheelbase: f64,
    cfg: &SimConfig,
) -> (AgentState, PidState) {
    let (control, next_pid) = pid_control(s, target, pid, cfg);
    let next = bicycle_step(s, control, wheelbase, target.dt, cfg.v_max);
    (next, next_pid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_target(speed: f64, len: usize, dt: f64) -> Trajectory {
        let points = (0..len)
            .map(|k| AgentState::from_pose(speed * dt * k as f64, 0.0, 0.0, speed))
            .collect();
        Trajectory::new(points, dt)
    }

    #[test]
    fn straight_line_motion() {
        let s = AgentState::from_pose(0.0, 0.0, 0.0, 5.0);
        let next = bicycle_step(&s, ControlInput::zero(), 2.7, 0.1, 15.0);
        assert_abs_diff_eq!(next.x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(next.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.heading_angle(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.speed(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn no_reverse_motion() {
        let s = AgentState::from_pose(0.0, 0.0, 0.0, 0.0);
        let u = ControlInput::new(-1.0, 0.0, 4.0, 0.6);
        let next = bicycle_step(&s, u, 2.7, 0.1, 15.0);
        assert_eq!(next.speed(), 0.0);
    }

    #[test]
    fn constant_steer_turning_radius() {
        // Closed-form circular arc of the continuous model: R = L / tan(delta).
        let wheelbase = 2.5;
        let steer = 0.343;
        let radius = wheelbase / steer.tan();
        let dt = 1e-3;
        let speed = 5.0;
        let u = ControlInput::new(0.0, steer, 4.0, 0.6);
        let mut s = AgentState::from_pose(0.0, 0.0, 0.0, speed);
        let period = (2.0 * std::f64::consts::PI * radius / (speed * dt)).round() as usize;
        assert!(period <= 10_000);
        let mut points = Vec::with_capacity(period);
        for _ in 0..period {
            points.push(s.position());
            s = bicycle_step(&s, u, wheelbase, dt, 15.0);
        }
        let n = points.len() as f64;
        let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
        let mean_r = points
            .iter()
            .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n;
        assert!(
            (mean_r - radius).abs() / radius < 0.005,
            "radius {mean_r} vs expected {radius}"
        );
    }

    #[test]
    fn pid_zero_error_fixed_point() {
        let cfg = SimConfig::default();
        let target = straight_target(5.0, 10, cfg.dt);
        let s = target.points[0];
        let (u, _) = pid_control(&s, &target, &PidState::default(), &cfg);
        assert!(u.accel().abs() < 1e-6);
        assert!(u.steer().abs() < 1e-6);
    }

    #[test]
    fn pure_p_speed_term() {
        let mut cfg = SimConfig::default();
        cfg.pid.speed_ki = 0.0;
        cfg.pid.speed_kd = 0.0;
        let target = straight_target(5.0, 10, cfg.dt);
        let s = AgentState::from_pose(0.0, 0.0, 0.0, 0.0);
        let (u, _) = pid_control(&s, &target, &PidState::default(), &cfg);
        let expected = (cfg.pid.speed_kp * 5.0).min(cfg.a_max);
        assert_abs_diff_eq!(u.accel(), expected, epsilon = 1e-12);
    }

    #[test]
    fn left_offset_steers_right() {
        let cfg = SimConfig::default();
        let target = straight_target(5.0, 10, cfg.dt);
        let s = AgentState::from_pose(0.0, 1.0, 0.0, 5.0);
        let (u, _) = pid_control(&s, &target, &PidState::default(), &cfg);
        assert!(u.steer() < 0.0, "steer {} should point right", u.steer());
    }

    #[test]
    fn propagate_composes_and_is_deterministic() {
        let cfg = SimConfig::default();
        let target = straight_target(5.0, 10, cfg.dt);
        let s = target.points[0];
        let (a1, p1) = propagate(&s, &target, &PidState::default(), 2.7, &cfg);
        let (a2, p2) = propagate(&s, &target, &PidState::default(), 2.7, &cfg);
        assert_eq!(a1, a2);
        assert_eq!(p1, p2);
        // Zero-error input advances exactly like the zero-control bicycle step.
        let free = bicycle_step(&s, ControlInput::zero(), 2.7, cfg.dt, cfg.v_max);
        assert_abs_diff_eq!(a1.x, free.x, epsilon = 1e-9);
        assert_abs_diff_eq!(a1.y, free.y, epsilon = 1e-9);
    }

    #[test]
    fn speed_converges_to_straight_reference() {
        let cfg = SimConfig::default();
        let mut s = AgentState::from_pose(0.0, 0.0, 0.0, 0.0);
        let mut pid = PidState::default();
        for _ in 0..100 {
            // Regenerate the target from the current position, as the rollout
            // engine does.
            let points = (0..10)
                .map(|k| AgentState::from_pose(s.x + 5.0 * cfg.dt * k as f64, 0.0, 0.0, 5.0))
                .collect();
            let target = Trajectory::new(points, cfg.dt);
            let (next, next_pid) = propagate(&s, &target, &pid, 2.7, &cfg);
            s = next;
            pid = next_pid;
        }
        assert!(
            (s.speed() - 5.0).abs() / 5.0 < 0.05,
            "speed {} did not converge",
            s.speed()
        );
    }

    #[test]
    fn cross_track_converges_from_one_meter_offset() {
        let cfg = SimConfig::default();
        let target = straight_target(5.0, 200, cfg.dt);
        let mut s = AgentState::from_pose(0.0, 1.0, 0.0, 5.0);
        let mut pid = PidState::default();
        let steps = (5.0 / cfg.dt) as usize;
        for _ in 0..steps {
            let (next, next_pid) = propagate(&s, &target, &pid, 2.7, &cfg);
            s = next;
            pid = next_pid;
        }
        assert!(s.y.abs() < 0.1, "cross-track error {} after 5 s", s.y);
    }

    #[test]
    fn unit_circle_survives_random_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SimConfig::default();
        let mut s = AgentState::from_pose(0.0, 0.0, 0.3, 4.0);
        for _ in 0..10_000 {
            let u = ControlInput::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-0.6..0.6),
                cfg.a_max,
                cfg.steer_max,
            );
            s = bicycle_step(&s, u, 2.7, cfg.dt, cfg.v_max);
            assert!(s.unit_circle_error() < 1e-9);
            assert!(s.speed() >= 0.0);
            assert!(s.x.is_finite() && s.y.is_finite());
        }
    }
}
