//! Other-agent rollout paradigms and the trainable trajectory predictor.
//!
//! The predictor is a linear map from an H-step kinematic history feature
//! vector (body-frame positions, velocities, headings, plus a leading-gap
//! interaction pair and a bias) to a horizon-length sequence of
//! (acceleration, yaw-rate) controls. Controls are rolled through the
//! kinematic bicycle model, so predicted trajectories are physically
//! feasible by construction. Gradients are computed by reverse accumulation
//! through the unroll and are checked against finite differences in tests.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{bicycle_step, ControlInput};
use crate::geom::Vec2;
use crate::rollout::WorldState;
use crate::world::{AgentState, SimConfig, Trajectory, VehicleGeometry};

/// Features per history step: body-frame position delta, body-frame
/// velocity, relative heading pair.
pub const FEATURES_PER_STEP: usize = 6;
/// Leading-gap distance and closing speed.
pub const INTERACTION_FEATURES: usize = 2;

/// Gap feature saturation; also the "no leader" value.
const GAP_CAP: f64 = 50.0;
/// Half-width of the corridor in which an agent counts as leading.
const LEAD_CORRIDOR: f64 = 2.5;
const CLOSING_CAP: f64 = 20.0;
/// Speed floor for the yaw-rate to steer conversion.
const V_EPS: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum AgentsError {
    #[error("prediction horizon must be at least 3 steps for central differences, got {0}")]
    HorizonTooShort(usize),
    #[error("prediction batch shape mismatch: {0}")]
    BatchMismatch(String),
}

/// How other agents advance during forward simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OthersParadigm {
    /// Repeat the recorded control through the whole horizon.
    ConstantAction,
    /// Predict once at initialization and replay the result verbatim.
    SinglePrediction,
    /// Re-predict from the evolving virtual state at every step and execute
    /// only the first predicted step.
    StepwisePrediction,
}

impl OthersParadigm {
    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "constant-action" => Some(OthersParadigm::ConstantAction),
            "single-prediction" => Some(OthersParadigm::SinglePrediction),
            "stepwise-prediction" => Some(OthersParadigm::StepwisePrediction),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            OthersParadigm::ConstantAction => "constant-action",
            OthersParadigm::SinglePrediction => "single-prediction",
            OthersParadigm::StepwisePrediction => "stepwise-prediction",
        }
    }
}

/// Bounded window of recent agent states, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentHistory {
    states: VecDeque<AgentState>,
    cap: usize,
}

impl AgentHistory {
    pub fn new(cap: usize) -> Self {
        AgentHistory {
            states: VecDeque::with_capacity(cap),
            cap: cap.max(1),
        }
    }

    pub fn from_states(states: Vec<AgentState>, cap: usize) -> Self {
        let mut h = AgentHistory::new(cap);
        for s in states {
            h.push(s);
        }
        h
    }

    pub fn push(&mut self, state: AgentState) {
        if self.states.len() == self.cap {
            self.states.pop_front();
        }
        self.states.push_back(state);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Window of exactly `h` states, oldest first, padded by repeating the
    /// oldest available state.
    pub fn window(&self, h: usize) -> Vec<AgentState> {
        assert!(!self.states.is_empty(), "history must hold at least one state");
        let mut out = Vec::with_capacity(h);
        let missing = h.saturating_sub(self.states.len());
        for _ in 0..missing {
            out.push(*self.states.front().unwrap());
        }
        let take = h - missing;
        for s in self.states.iter().skip(self.states.len() - take) {
            out.push(*s);
        }
        out
    }
}

/// Linear per-agent-type map from history features to a horizon of
/// (acceleration, yaw-rate) controls.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    horizon: usize,
    history_len: usize,
    /// Row-major (2 * horizon) x feature_dim.
    weights: Vec<f64>,
}

impl PredictorParams {
    pub fn zeros(horizon: usize, history_len: usize) -> Self {
        let rows = 2 * horizon;
        let cols = Self::feature_dim_for(history_len);
        PredictorParams {
            horizon,
            history_len,
            weights: vec![0.0; rows * cols],
        }
    }

    pub fn for_config(cfg: &SimConfig) -> Self {
        Self::zeros(cfg.horizon, cfg.history_len)
    }

    pub fn feature_dim_for(history_len: usize) -> usize {
        history_len * FEATURES_PER_STEP + INTERACTION_FEATURES + 1
    }

    pub fn feature_dim(&self) -> usize {
        Self::feature_dim_for(self.history_len)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn from_flat(horizon: usize, history_len: usize, flat: Vec<f64>) -> Option<Self> {
        let expected = 2 * horizon * Self::feature_dim_for(history_len);
        if flat.len() != expected || flat.iter().any(|w| !w.is_finite()) {
            return None;
        }
        Some(PredictorParams {
            horizon,
            history_len,
            weights: flat,
        })
    }

    /// Raw control sequence `W . phi`, alternating (accel, yaw-rate).
    pub fn controls(&self, features: &[f64]) -> Vec<f64> {
        let cols = self.feature_dim();
        assert_eq!(features.len(), cols, "feature dimension mismatch");
        let mut out = vec![0.0; 2 * self.horizon];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * cols..(r + 1) * cols];
            *o = row.iter().zip(features.iter()).map(|(w, f)| w * f).sum();
        }
        out
    }
}

/// Leading-gap interaction features of `ego` against `neighbors`:
/// (clamped bumper gap, clamped closing speed). `neighbors` carries position,
/// velocity, and body half-length of every other agent.
pub fn leading_gap_features(
    ego: &AgentState,
    ego_geometry: &VehicleGeometry,
    neighbors: &[(Vec2, Vec2, f64)],
) -> [f64; INTERACTION_FEATURES] {
    let heading = Vec2::new(ego.cos_h, ego.sin_h);
    let lateral = heading.left_normal();
    let mut best_gap = GAP_CAP;
    let mut closing = 0.0;
    for (pos, vel, half_len) in neighbors {
        let rel = *pos - ego.position();
        let forward = rel.dot(heading);
        let side = rel.dot(lateral);
        if forward <= 0.0 || side.abs() > LEAD_CORRIDOR {
            continue;
        }
        let gap = (forward - ego_geometry.length / 2.0 - half_len).max(0.0);
        if gap < best_gap {
            best_gap = gap;
            let ego_v = Vec2::new(ego.vx, ego.vy);
            closing = ((ego_v - *vel).dot(heading)).clamp(-CLOSING_CAP, CLOSING_CAP);
        }
    }
    [best_gap, closing]
}

fn neighbors_excluding(world: &WorldState, skip_other: Option<usize>) -> Vec<(Vec2, Vec2, f64)> {
    let mut out = Vec::with_capacity(world.others.len() + 1);
    out.push((
        world.center.state.position(),
        Vec2::new(world.center.state.vx, world.center.state.vy),
        world.center.geometry.length / 2.0,
    ));
    for (k, other) in world.others.iter().enumerate() {
        if Some(k) == skip_other {
            continue;
        }
        out.push((
            other.state.position(),
            Vec2::new(other.state.vx, other.state.vy),
            other.geometry.length / 2.0,
        ));
    }
    out
}

/// Assemble the predictor input for other agent `k`: H history steps in the
/// current body frame, the leading-gap pair, and a bias term.
pub fn predictor_features(world: &WorldState, k: usize, cfg: &SimConfig) -> Vec<f64> {
    let actor = &world.others[k];
    let window = world.histories[k].window(cfg.history_len);
    let current = &actor.state;
    let mut phi = Vec::with_capacity(PredictorParams::feature_dim_for(cfg.history_len));
    let (c, s) = (current.cos_h, current.sin_h);
    for st in &window {
        let dx = st.x - current.x;
        let dy = st.y - current.y;
        phi.push(c * dx + s * dy);
        phi.push(-s * dx + c * dy);
        phi.push(c * st.vx + s * st.vy);
        phi.push(-s * st.vx + c * st.vy);
        phi.push(st.cos_h * c + st.sin_h * s);
        phi.push(st.sin_h * c - st.cos_h * s);
    }
    let inter = leading_gap_features(current, &actor.geometry, &neighbors_excluding(world, Some(k)));
    phi.extend_from_slice(&inter);
    phi.push(1.0);
    phi
}

// ---------------------------------------------------------------------------
// Control unroll with reverse-mode tape
// ---------------------------------------------------------------------------

struct UnrollStep {
    theta: f64,
    v: f64,
    /// Steer after the clamp.
    steer: f64,
    /// atan argument omega * L / vden.
    z: f64,
    vden: f64,
    v_above_eps: bool,
    steer_inside: bool,
    accel_inside: bool,
    speed_inside: bool,
}

pub(crate) struct UnrollTape {
    steps: Vec<UnrollStep>,
    wheelbase: f64,
    dt: f64,
}

/// Roll raw (accel, yaw-rate) controls through the bicycle model. Yaw rate
/// converts to a front-steer angle via `delta = atan(omega * L / v)` before
/// clamping, so the motion stays within the configured steer envelope.
pub(crate) fn unroll_controls(
    start: &AgentState,
    controls: &[f64],
    wheelbase: f64,
    cfg: &SimConfig,
) -> (Vec<AgentState>, UnrollTape) {
    let horizon = controls.len() / 2;
    let mut states = Vec::with_capacity(horizon);
    let mut steps = Vec::with_capacity(horizon);
    let mut s = *start;
    for t in 0..horizon {
        let accel_raw = controls[2 * t];
        let omega_raw = controls[2 * t + 1];
        let v = s.speed();
        let theta = s.heading_angle();
        let vden = v.max(V_EPS);
        let z = omega_raw * wheelbase / vden;
        let delta = z.atan();
        let steer = delta.clamp(-cfg.steer_max, cfg.steer_max);
        let accel = accel_raw.clamp(-cfg.a_max, cfg.a_max);
        let v_next_raw = v + accel * cfg.dt;
        steps.push(UnrollStep {
            theta,
            v,
            steer,
            z,
            vden,
            v_above_eps: v > V_EPS,
            steer_inside: delta.abs() < cfg.steer_max,
            accel_inside: accel_raw.abs() < cfg.a_max,
            speed_inside: v_next_raw > 0.0 && v_next_raw < cfg.v_max,
        });
        s = bicycle_step(&s, ControlInput::new(accel, steer, cfg.a_max, cfg.steer_max), wheelbase, cfg.dt, cfg.v_max);
        states.push(s);
    }
    (
        states,
        UnrollTape {
            steps,
            wheelbase,
            dt: cfg.dt,
        },
    )
}

/// Reverse accumulation through the unroll: maps per-output-state gradients
/// over the six state channels to gradients over the raw control vector.
pub(crate) fn backprop_unroll(
    tape: &UnrollTape,
    states: &[AgentState],
    point_grads: &[[f64; 6]],
) -> Vec<f64> {
    let horizon = tape.steps.len();
    assert_eq!(states.len(), horizon);
    assert_eq!(point_grads.len(), horizon);
    let (l, dt) = (tape.wheelbase, tape.dt);
    let mut control_grads = vec![0.0; 2 * horizon];
    let (mut gx, mut gy, mut gtheta, mut gv) = (0.0, 0.0, 0.0, 0.0);
    for t in (0..horizon).rev() {
        // Inject the loss gradient at output state t (the post-step state).
        let out = &states[t];
        let g = &point_grads[t];
        let (cos_t, sin_t, v_out) = (out.cos_h, out.sin_h, out.speed());
        gx += g[0];
        gy += g[1];
        gtheta += -sin_t * g[2] + cos_t * g[3] - v_out * sin_t * g[4] + v_out * cos_t * g[5];
        gv += cos_t * g[4] + sin_t * g[5];

        let step = &tape.steps[t];
        let (theta, v) = (step.theta, step.v);
        let (sin_old, cos_old) = theta.sin_cos();
        let tan_steer = step.steer.tan();
        let sec2 = 1.0 + tan_steer * tan_steer;

        // v_{t+1} = clamp(v + a dt): pass-through only strictly inside.
        let gv_next = gv;
        let mut gv_old = if step.speed_inside { gv_next } else { 0.0 };
        let ga = if step.speed_inside { gv_next * dt } else { 0.0 };

        // theta_{t+1} = theta + v / L * tan(steer) * dt
        let gtheta_next = gtheta;
        let mut gtheta_old = gtheta_next;
        gv_old += gtheta_next * tan_steer / l * dt;
        let gsteer = gtheta_next * v / l * sec2 * dt;

        // steer = clamp(atan(z), +-steer_max); z = omega * L / vden, and
        // dz/dv = -omega * L / vden^2 = -z / vden while v > V_EPS.
        let gomega;
        if step.steer_inside {
            let gz = gsteer / (1.0 + step.z * step.z);
            gomega = gz * l / step.vden;
            if step.v_above_eps {
                gv_old += gz * (-step.z / step.vden);
            }
        } else {
            gomega = 0.0;
        }

        // x_{t+1} = x + v cos(theta) dt ; y_{t+1} = y + v sin(theta) dt
        let (gx_next, gy_next) = (gx, gy);
        gv_old += gx_next * cos_old * dt + gy_next * sin_old * dt;
        gtheta_old += -gx_next * v * sin_old * dt + gy_next * v * cos_old * dt;

        // a = clamp(a_raw)
        control_grads[2 * t] = if step.accel_inside { ga } else { 0.0 };
        control_grads[2 * t + 1] = gomega;

        gv = gv_old;
        gtheta = gtheta_old;
        // gx, gy pass through unchanged (x_{t+1} depends on x_t with factor 1).
    }
    control_grads
}

// ---------------------------------------------------------------------------
// Prediction paradigms
// ---------------------------------------------------------------------------

/// Horizon-T trajectories for all other agents from the current histories.
pub fn predict(world: &WorldState, p: &PredictorParams, cfg: &SimConfig) -> Vec<Trajectory> {
    (0..world.others.len())
        .map(|k| {
            let phi = predictor_features(world, k, cfg);
            let controls = p.controls(&phi);
            let (states, _) =
                unroll_controls(&world.others[k].state, &controls, world.others[k].geometry.wheelbase, cfg);
            Trajectory::new(states, cfg.dt)
        })
        .collect()
}

/// Open-loop rollout repeating each agent's recorded control.
pub fn rollout_constant_action(world: &WorldState, horizon: usize, cfg: &SimConfig) -> Vec<Trajectory> {
    world
        .others
        .iter()
        .map(|actor| {
            let mut s = actor.state;
            let mut points = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                s = bicycle_step(&s, actor.last_control, actor.geometry.wheelbase, cfg.dt, cfg.v_max);
                points.push(s);
            }
            Trajectory::new(points, cfg.dt)
        })
        .collect()
}

/// Predict once at initialization and use the result verbatim. Returns the
/// trajectories and the predictor invocation count (always 1).
pub fn rollout_single_prediction(
    world: &WorldState,
    p: &PredictorParams,
    cfg: &SimConfig,
) -> (Vec<Trajectory>, usize) {
    (predict(world, p, cfg), 1)
}

/// Re-predict at every virtual step and execute only the first predicted
/// step; the center agent advances by its recorded control. Returns the
/// realized trajectories and the predictor invocation count (the horizon).
pub fn rollout_stepwise_prediction(
    world: &WorldState,
    p: &PredictorParams,
    cfg: &SimConfig,
) -> (Vec<Trajectory>, usize) {
    let mut sim = world.clone();
    let mut calls = 0;
    let mut tracks: Vec<Vec<AgentState>> = vec![Vec::with_capacity(cfg.horizon); sim.others.len()];
    for _ in 0..cfg.horizon {
        let predictions = predict(&sim, p, cfg);
        calls += 1;
        for (k, pred) in predictions.iter().enumerate() {
            let next = pred.points[0];
            sim.others[k].state = next;
            sim.histories[k].push(next);
            tracks[k].push(next);
        }
        sim.center.state = bicycle_step(
            &sim.center.state,
            sim.center.last_control,
            sim.center.geometry.wheelbase,
            cfg.dt,
            cfg.v_max,
        );
    }
    (
        tracks
            .into_iter()
            .map(|points| Trajectory::new(points, cfg.dt))
            .collect(),
        calls,
    )
}

// ---------------------------------------------------------------------------
// Composite prediction loss
// ---------------------------------------------------------------------------

/// Predicted trajectories paired with the realized targets over the
/// supervised window.
#[derive(Debug, Clone)]
pub struct PredictionBatch {
    pub predictions: Vec<Trajectory>,
    pub targets: Vec<Trajectory>,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub anchor: f64,
    pub kin: f64,
    pub smooth: f64,
}

/// SmoothL1 with beta = 1: `0.5 x^2` for |x| < 1, else `|x| - 0.5`.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct LossAccumulator {
    anchor_sum: f64,
    anchor_count: usize,
    kin_sum: f64,
    kin_count: usize,
    dv_sum: f64,
    dv_count: usize,
    ddv_sum: f64,
    ddv_count: usize,
}

impl LossAccumulator {
    fn new() -> Self {
        LossAccumulator {
            anchor_sum: 0.0,
            anchor_count: 0,
            kin_sum: 0.0,
            kin_count: 0,
            dv_sum: 0.0,
            dv_count: 0,
            ddv_sum: 0.0,
            ddv_count: 0,
        }
    }

    fn breakdown(&self, cfg: &SimConfig) -> LossBreakdown {
        let mean = |sum: f64, count: usize| if count > 0 { sum / count as f64 } else { 0.0 };
        let anchor = mean(self.anchor_sum, self.anchor_count);
        let kin = mean(self.kin_sum, self.kin_count);
        let smooth = mean(self.dv_sum, self.dv_count) + mean(self.ddv_sum, self.ddv_count);
        LossBreakdown {
            total: cfg.w_anchor * anchor + cfg.w_kin * kin + cfg.w_smooth * smooth,
            anchor,
            kin,
            smooth,
        }
    }
}

fn accumulate_pair(
    acc: &mut LossAccumulator,
    pred: &Trajectory,
    target: &[AgentState],
    dt: f64,
) {
    let horizon = pred.len();
    // Anchor over all six channels of the supervised window.
    for (p, y) in pred.points.iter().zip(target.iter()) {
        let (pa, ya) = (p.to_array(), y.to_array());
        for c in 0..6 {
            acc.anchor_sum += smooth_l1(pa[c] - ya[c]);
            acc.anchor_count += 1;
        }
    }
    // Kinematic consistency on interior steps of the prediction.
    for t in 1..horizon - 1 {
        let cd_x = (pred.points[t + 1].x - pred.points[t - 1].x) / (2.0 * dt);
        let cd_y = (pred.points[t + 1].y - pred.points[t - 1].y) / (2.0 * dt);
        acc.kin_sum += smooth_l1(pred.points[t].vx - cd_x) + smooth_l1(pred.points[t].vy - cd_y);
        acc.kin_count += 2;
    }
    // Velocity smoothness: first and second differences.
    for t in 0..horizon - 1 {
        acc.dv_sum += (pred.points[t + 1].vx - pred.points[t].vx).abs()
            + (pred.points[t + 1].vy - pred.points[t].vy).abs();
        acc.dv_count += 2;
    }
    for t in 0..horizon.saturating_sub(2) {
        let ddvx = pred.points[t + 2].vx - 2.0 * pred.points[t + 1].vx + pred.points[t].vx;
        let ddvy = pred.points[t + 2].vy - 2.0 * pred.points[t + 1].vy + pred.points[t].vy;
        acc.ddv_sum += ddvx.abs() + ddvy.abs();
        acc.ddv_count += 2;
    }
}

/// Composite prediction loss: `w_anchor * L_anchor + w_kin * L_kin +
/// w_smooth * L_smooth`, each term averaged over its elements.
pub fn prediction_loss(batch: &PredictionBatch, cfg: &SimConfig) -> Result<LossBreakdown, AgentsError> {
    if batch.predictions.len() != batch.targets.len() {
        return Err(AgentsError::BatchMismatch(format!(
            "{} predictions vs {} targets",
            batch.predictions.len(),
            batch.targets.len()
        )));
    }
    let mut acc = LossAccumulator::new();
    for (pred, target) in batch.predictions.iter().zip(batch.targets.iter()) {
        if pred.len() < 3 {
            return Err(AgentsError::HorizonTooShort(pred.len()));
        }
        if target.len() > pred.len() {
            return Err(AgentsError::BatchMismatch(format!(
                "target window {} exceeds prediction horizon {}",
                target.len(),
                pred.len()
            )));
        }
        accumulate_pair(&mut acc, pred, &target.points, batch.dt);
    }
    Ok(acc.breakdown(cfg))
}

/// Per-point gradient of the (weighted, element-averaged) loss with respect
/// to the six channels of every predicted point.
fn prediction_loss_point_grads(
    acc_counts: &LossAccumulator,
    pred: &Trajectory,
    target: &[AgentState],
    dt: f64,
    cfg: &SimConfig,
) -> Vec<[f64; 6]> {
    let horizon = pred.len();
    let mut grads = vec![[0.0; 6]; horizon];
    let anchor_scale = cfg.w_anchor / acc_counts.anchor_count.max(1) as f64;
    for (t, y) in target.iter().enumerate() {
        let (pa, ya) = (pred.points[t].to_array(), y.to_array());
        for c in 0..6 {
            grads[t][c] += anchor_scale * smooth_l1_grad(pa[c] - ya[c]);
        }
    }
    let kin_scale = cfg.w_kin / acc_counts.kin_count.max(1) as f64;
    for t in 1..horizon - 1 {
        let ex = pred.points[t].vx - (pred.points[t + 1].x - pred.points[t - 1].x) / (2.0 * dt);
        let ey = pred.points[t].vy - (pred.points[t + 1].y - pred.points[t - 1].y) / (2.0 * dt);
        let (gx, gy) = (kin_scale * smooth_l1_grad(ex), kin_scale * smooth_l1_grad(ey));
        grads[t][4] += gx;
        grads[t][5] += gy;
        grads[t + 1][0] += -gx / (2.0 * dt);
        grads[t - 1][0] += gx / (2.0 * dt);
        grads[t + 1][1] += -gy / (2.0 * dt);
        grads[t - 1][1] += gy / (2.0 * dt);
    }
    let dv_scale = cfg.w_smooth / acc_counts.dv_count.max(1) as f64;
    for t in 0..horizon - 1 {
        let sx = sign(pred.points[t + 1].vx - pred.points[t].vx);
        let sy = sign(pred.points[t + 1].vy - pred.points[t].vy);
        grads[t + 1][4] += dv_scale * sx;
        grads[t][4] -= dv_scale * sx;
        grads[t + 1][5] += dv_scale * sy;
        grads[t][5] -= dv_scale * sy;
    }
    let ddv_scale = cfg.w_smooth / acc_counts.ddv_count.max(1) as f64;
    for t in 0..horizon.saturating_sub(2) {
        let sx = sign(pred.points[t + 2].vx - 2.0 * pred.points[t + 1].vx + pred.points[t].vx);
        let sy = sign(pred.points[t + 2].vy - 2.0 * pred.points[t + 1].vy + pred.points[t].vy);
        grads[t + 2][4] += ddv_scale * sx;
        grads[t + 1][4] -= 2.0 * ddv_scale * sx;
        grads[t][4] += ddv_scale * sx;
        grads[t + 2][5] += ddv_scale * sy;
        grads[t + 1][5] -= 2.0 * ddv_scale * sy;
        grads[t][5] += ddv_scale * sy;
    }
    grads
}

/// One training sample: assembled input features, the start state, and the
/// realized target states over the supervised window.
#[derive(Debug, Clone)]
pub struct PredictionSample {
    pub features: Vec<f64>,
    pub start: AgentState,
    pub wheelbase: f64,
    pub targets: Vec<AgentState>,
}

/// Loss over a sample batch and its gradient with respect to the flat
/// predictor weights.
pub fn predictor_loss_and_grad(
    samples: &[PredictionSample],
    p: &PredictorParams,
    cfg: &SimConfig,
) -> (LossBreakdown, Vec<f64>) {
    let cols = p.feature_dim();
    let mut grad = vec![0.0; p.weights().len()];
    let mut acc = LossAccumulator::new();
    let mut per_sample: Vec<(Vec<AgentState>, UnrollTape, Vec<f64>)> = Vec::with_capacity(samples.len());
    for sample in samples {
        let controls = p.controls(&sample.features);
        let (states, tape) = unroll_controls(&sample.start, &controls, sample.wheelbase, cfg);
        let traj = Trajectory::new(states.clone(), cfg.dt);
        accumulate_pair(&mut acc, &traj, &sample.targets, cfg.dt);
        per_sample.push((states, tape, controls));
    }
    for (sample, (states, tape, _)) in samples.iter().zip(per_sample.iter()) {
        let traj = Trajectory::new(states.clone(), cfg.dt);
        let point_grads = prediction_loss_point_grads(&acc, &traj, &sample.targets, cfg.dt, cfg);
        let control_grads = backprop_unroll(tape, states, &point_grads);
        for (r, gc) in control_grads.iter().enumerate() {
            if *gc == 0.0 {
                continue;
            }
            let row = &mut grad[r * cols..(r + 1) * cols];
            for (g, f) in row.iter_mut().zip(sample.features.iter()) {
                *g += gc * f;
            }
        }
    }
    (acc.breakdown(cfg), grad)
}

/// Plain gradient-descent steps on the composite loss over a fixed batch.
/// Returns the updated parameters and the loss recorded before each step.
pub fn train_predictor(
    samples: &[PredictionSample],
    p: &PredictorParams,
    cfg: &SimConfig,
    steps: usize,
) -> (PredictorParams, Vec<f64>) {
    let mut params = p.clone();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, grad) = predictor_loss_and_grad(samples, &params, cfg);
        losses.push(loss.total);
        for (w, g) in params.weights_mut().iter_mut().zip(grad.iter()) {
            *w -= cfg.predictor_lr * g;
        }
    }
    (params, losses)
}
