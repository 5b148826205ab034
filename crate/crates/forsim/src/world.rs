//! Core domain types: agent states, trajectories, candidate grids, vector
//! maps, scenarios, and the global simulation configuration.
//!
//! All types here are immutable after construction and safe to share across
//! concurrent rollout branches.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Vec2};
use crate::optimization::RewardConfig;

/// Number of features the candidate scoring head consumes.
pub const NUM_CANDIDATE_FEATURES: usize = 5;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pose, heading direction, and velocity of one agent at one timestep.
///
/// The heading is stored as a `(cos, sin)` pair kept on the unit circle;
/// construction re-normalizes, so `cos_h^2 + sin_h^2 = 1` within 1e-9 always
/// holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub cos_h: f64,
    pub sin_h: f64,
    pub vx: f64,
    pub vy: f64,
}

impl AgentState {
    /// Checked constructor used by file loaders: rejects non-finite fields and
    /// heading pairs far from the unit circle, re-normalizing mild drift.
    pub fn new(x: f64, y: f64, cos_h: f64, sin_h: f64, vx: f64, vy: f64) -> Result<Self, WorldError> {
        for (name, v) in [("x", x), ("y", y), ("cos_h", cos_h), ("sin_h", sin_h), ("vx", vx), ("vy", vy)] {
            if !v.is_finite() {
                return Err(WorldError::Validation(format!(
                    "agent state field `{name}` must be finite, got {v}"
                )));
            }
        }
        let norm = cos_h.hypot(sin_h);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(WorldError::Validation(format!(
                "heading pair (cos, sin) must lie on the unit circle, |(cos, sin)| = {norm}"
            )));
        }
        Ok(AgentState {
            x,
            y,
            cos_h: cos_h / norm,
            sin_h: sin_h / norm,
            vx,
            vy,
        })
    }

    /// Build a state from a pose angle and scalar forward speed.
    pub fn from_pose(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        let (sin_h, cos_h) = heading.sin_cos();
        AgentState {
            x,
            y,
            cos_h,
            sin_h,
            vx: speed * cos_h,
            vy: speed * sin_h,
        }
    }

    /// Heading angle in (-pi, pi], the atan2 of the stored pair.
    pub fn heading_angle(&self) -> f64 {
        let a = self.sin_h.atan2(self.cos_h);
        // atan2 returns -pi for (-1, -0.0); fold onto the (-pi, pi] convention.
        if a == -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            a
        }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn unit_circle_error(&self) -> f64 {
        (self.cos_h * self.cos_h + self.sin_h * self.sin_h - 1.0).abs()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.cos_h, self.sin_h, self.vx, self.vy]
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self, WorldError> {
        AgentState::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }
}

impl Serialize for AgentState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AgentState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let a = <[f64; 6]>::deserialize(deserializer)?;
        AgentState::from_array(a).map_err(serde::de::Error::custom)
    }
}

/// An ordered sequence of agent states at fixed time spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<AgentState>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<AgentState>, dt: f64) -> Self {
        debug_assert!(!points.is_empty() && dt > 0.0);
        Trajectory { points, dt }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn terminal(&self) -> &AgentState {
        self.points.last().expect("trajectory is non-empty")
    }

    /// Largest displacement between consecutive points.
    pub fn max_step_displacement(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].position().dist(w[1].position()))
            .fold(0.0, f64::max)
    }

    /// Plausibility bound: consecutive displacement within `v_max * dt + slack`.
    pub fn is_plausible(&self, v_max: f64, slack: f64) -> bool {
        self.max_step_displacement() <= v_max * self.dt + slack
    }
}

/// Dense `n_ref x n_lon` grid of candidate trajectories with confidence
/// scores (pre-softmax logits) and, once scored, the per-candidate feature
/// vectors the scores were computed from.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    n_ref: usize,
    n_lon: usize,
    trajectories: Vec<Trajectory>,
    scores: Vec<f64>,
    features: Vec<[f64; NUM_CANDIDATE_FEATURES]>,
    /// Set when fewer reference lines were reachable than `n_ref` and the
    /// nearest line was duplicated to keep the grid dense.
    pub degenerate_lattice: bool,
}

impl CandidateSet {
    pub fn new(n_ref: usize, n_lon: usize, trajectories: Vec<Trajectory>) -> Self {
        assert_eq!(trajectories.len(), n_ref * n_lon, "candidate grid must be dense");
        let g = trajectories.len();
        CandidateSet {
            n_ref,
            n_lon,
            trajectories,
            scores: vec![0.0; g],
            features: vec![[0.0; NUM_CANDIDATE_FEATURES]; g],
            degenerate_lattice: false,
        }
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    /// Total number of candidates, the group size G.
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n_ref && j < self.n_lon);
        i * self.n_lon + j
    }

    pub fn grid_index(&self, flat: usize) -> (usize, usize) {
        (flat / self.n_lon, flat % self.n_lon)
    }

    pub fn trajectory(&self, i: usize, j: usize) -> &Trajectory {
        &self.trajectories[self.flat_index(i, j)]
    }

    pub fn trajectory_flat(&self, flat: usize) -> &Trajectory {
        &self.trajectories[flat]
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[self.flat_index(i, j)]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn set_scores(&mut self, scores: Vec<f64>) {
        assert_eq!(scores.len(), self.trajectories.len());
        debug_assert!(scores.iter().all(|s| s.is_finite()), "scores must be finite");
        self.scores = scores;
    }

    pub fn features(&self) -> &[[f64; NUM_CANDIDATE_FEATURES]] {
        &self.features
    }

    pub fn set_features(&mut self, features: Vec<[f64; NUM_CANDIDATE_FEATURES]>) {
        assert_eq!(features.len(), self.trajectories.len());
        self.features = features;
    }
}

pub type Polyline = Vec<Vec2>;

/// Vectorized map: lane reference lines, drivable-area polygons, and route
/// polylines for controlled agents (`routes[0]` is the center agent's route).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMap {
    pub reference_lines: Vec<Polyline>,
    pub drivable_area: Vec<Polyline>,
    pub routes: Vec<Polyline>,
}

impl VectorMap {
    /// Index and projection of the reference line closest to `p`.
    pub fn nearest_reference_line(&self, p: Vec2) -> Option<(usize, geom::PolylineProjection)> {
        self.reference_lines
            .iter()
            .enumerate()
            .map(|(i, line)| (i, geom::project_to_polyline(line, p)))
            .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
    }

    pub fn is_drivable(&self, p: Vec2) -> bool {
        geom::point_in_any_polygon(&self.drivable_area, p)
    }

    pub fn center_route(&self) -> &Polyline {
        &self.routes[0]
    }
}

/// Rigid vehicle footprint and wheelbase, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        VehicleGeometry {
            length: 4.5,
            width: 1.9,
            wheelbase: 2.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioAgent {
    pub state: AgentState,
    pub geometry: VehicleGeometry,
}

/// The unit of simulation input: a map plus initial agent placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: VectorMap,
    pub center_agent: ScenarioAgent,
    pub other_agents: Vec<ScenarioAgent>,
    /// Rollout horizon T in steps.
    pub horizon: usize,
    /// Seconds per step.
    pub dt: f64,
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// PID gains and controller shape, exposed under `"pid"` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub speed_kp: f64,
    pub speed_ki: f64,
    pub speed_kd: f64,
    pub lateral_kp: f64,
    pub lateral_ki: f64,
    pub lateral_kd: f64,
    /// Weight of the heading-error term mixed into the lateral error signal.
    pub k_heading: f64,
    /// Index of the target point used for the speed setpoint.
    pub lookahead: usize,
    /// Anti-windup clamp for the integral terms.
    pub anti_windup: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            speed_kp: 1.0,
            speed_ki: 0.05,
            speed_kd: 0.0,
            lateral_kp: 0.8,
            lateral_ki: 0.0,
            lateral_kd: 0.2,
            k_heading: 1.0,
            lookahead: 3,
            anti_windup: 2.0,
        }
    }
}

/// Parameters of the real-time environment behavior for other agents
/// (lane-following with a simple gap-based speed limiter).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Gap at which a follower targets zero speed.
    pub gap_min: f64,
    /// Gap beyond which a follower drives at cruise speed.
    pub gap_follow: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            gap_min: 4.0,
            gap_follow: 12.0,
        }
    }
}

/// Global simulation and training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Lateral candidate count (reference lines used by the lattice).
    pub n_ref: usize,
    /// Longitudinal candidate count (speed profiles).
    pub n_lon: usize,
    /// Rollout horizon T in steps.
    pub horizon: usize,
    /// Supervised prediction window T_f <= T.
    pub t_f: usize,
    /// Seconds per step.
    pub dt: f64,
    /// Discount factor for branch returns.
    pub gamma: f64,
    /// PPO clip width.
    pub epsilon: f64,
    /// Dual-clip constant c > 1 + epsilon.
    pub dual_clip: f64,
    /// Inner fine-tuning epochs per iteration (mu).
    pub inner_epochs: usize,
    /// Outer training iterations (I).
    pub iterations: usize,
    pub w_anchor: f64,
    pub w_kin: f64,
    pub w_smooth: f64,
    pub reward: RewardConfig,
    pub pid: PidConfig,
    pub environment: EnvConfig,
    pub v_max: f64,
    pub a_max: f64,
    pub steer_max: f64,
    /// Kinematic history length H consumed by the predictor.
    pub history_len: usize,
    pub predictor_lr: f64,
    pub policy_lr: f64,
    pub buffer_capacity: usize,
    pub minibatch: usize,
    /// Std-dev of optional lattice lateral noise; 0 disables RNG use.
    pub candidate_noise_std: f64,
    /// Slack for the trajectory displacement plausibility bound.
    pub traj_slack: f64,
    /// Reference speed sample for the S-WD metric; `None` uses the shipped
    /// truncated-normal fixture.
    pub reference_speeds: Option<Vec<f64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_ref: 3,
            n_lon: 4,
            horizon: 40,
            t_f: 20,
            dt: 0.1,
            gamma: 0.9,
            epsilon: 0.2,
            dual_clip: 3.0,
            inner_epochs: 2,
            iterations: 10,
            w_anchor: 1.0,
            w_kin: 0.5,
            w_smooth: 0.5,
            reward: RewardConfig::default(),
            pid: PidConfig::default(),
            environment: EnvConfig::default(),
            v_max: 15.0,
            a_max: 4.0,
            steer_max: 0.6,
            history_len: 5,
            predictor_lr: 1e-2,
            policy_lr: 0.05,
            buffer_capacity: 2048,
            minibatch: 64,
            candidate_noise_std: 0.0,
            traj_slack: 1.0,
            reference_speeds: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let fail = |msg: String| Err(WorldError::Validation(msg));
        if self.n_ref == 0 || self.n_lon == 0 {
            return fail("n_ref and n_lon must be positive".into());
        }
        if self.horizon < 2 {
            return fail(format!("horizon T must be >= 2, got {}", self.horizon));
        }
        if self.t_f == 0 || self.t_f > self.horizon {
            return fail(format!("t_f must satisfy 0 < t_f <= T, got {}", self.t_f));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return fail(format!("dt must lie in (0, 1], got {}", self.dt));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.dual_clip <= 1.0 + self.epsilon {
            return fail(format!(
                "dual-clip constant must exceed 1 + epsilon, got {} vs {}",
                self.dual_clip,
                1.0 + self.epsilon
            ));
        }
        for (name, w) in [
            ("w_anchor", self.w_anchor),
            ("w_kin", self.w_kin),
            ("w_smooth", self.w_smooth),
            ("w_progress", self.reward.w_progress),
            ("w_collision", self.reward.w_collision),
            ("w_offroad", self.reward.w_offroad),
            ("w_comfort", self.reward.w_comfort),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("weight {name} must be nonnegative and finite, got {w}"));
            }
        }
        if self.reward.comfort_accel_threshold <= 0.0 {
            return fail("comfort acceleration threshold must be positive".into());
        }
        if self.v_max <= 0.0 || self.a_max <= 0.0 || self.steer_max <= 0.0 {
            return fail("v_max, a_max, and steer_max must be positive".into());
        }
        if self.history_len == 0 {
            return fail("history_len must be positive".into());
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SimConfig =
            serde_json::from_str(&text).map_err(|e| WorldError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Scenario file format
// ---------------------------------------------------------------------------

mod schema {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    pub struct ScenarioFile {
        pub version: u32,
        pub dt: f64,
        pub horizon: usize,
        pub map: MapFile,
        pub center_agent: AgentFile,
        pub other_agents: Vec<AgentFile>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct MapFile {
        pub reference_lines: Vec<Vec<[f64; 2]>>,
        pub drivable_area: Vec<Vec<[f64; 2]>>,
        pub routes: Vec<Vec<[f64; 2]>>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct AgentFile {
        pub state: [f64; 6],
        pub length: f64,
        pub width: f64,
        pub wheelbase: f64,
    }
}

fn polyline_from_schema(raw: &[[f64; 2]]) -> Polyline {
    raw.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

fn polyline_to_schema(poly: &[Vec2]) -> Vec<[f64; 2]> {
    poly.iter().map(|p| [p.x, p.y]).collect()
}

fn agent_from_schema(raw: &schema::AgentFile, what: &str) -> Result<ScenarioAgent, WorldError> {
    let state = AgentState::from_array(raw.state)
        .map_err(|e| WorldError::Validation(format!("{what}: {e}")))?;
    if !(raw.length > 0.0 && raw.width > 0.0 && raw.wheelbase > 0.0) {
        return Err(WorldError::Validation(format!(
            "{what}: vehicle geometry (length, width, wheelbase) must be positive"
        )));
    }
    Ok(ScenarioAgent {
        state,
        geometry: VehicleGeometry {
            length: raw.length,
            width: raw.width,
            wheelbase: raw.wheelbase,
        },
    })
}

/// Drop a duplicated closing vertex so polygons are stored in implicit-closed
/// form.
fn canonicalize_polygon(mut poly: Polyline) -> Polyline {
    if poly.len() >= 2 {
        let first = poly[0];
        let last = *poly.last().unwrap();
        if first.dist(last) < 1e-12 {
            poly.pop();
        }
    }
    poly
}

fn scenario_from_schema(file: schema::ScenarioFile) -> Result<Scenario, WorldError> {
    if file.version != 1 {
        return Err(WorldError::Parse(format!(
            "unsupported scenario version {}, expected 1",
            file.version
        )));
    }
    let map = VectorMap {
        reference_lines: file.map.reference_lines.iter().map(|l| polyline_from_schema(l)).collect(),
        drivable_area: file
            .map
            .drivable_area
            .iter()
            .map(|l| canonicalize_polygon(polyline_from_schema(l)))
            .collect(),
        routes: file.map.routes.iter().map(|l| polyline_from_schema(l)).collect(),
    };
    let center_agent = agent_from_schema(&file.center_agent, "center agent")?;
    let other_agents = file
        .other_agents
        .iter()
        .enumerate()
        .map(|(k, a)| agent_from_schema(a, &format!("other agent {k}")))
        .collect::<Result<Vec<_>, _>>()?;
    let scenario = Scenario {
        map,
        center_agent,
        other_agents,
        horizon: file.horizon,
        dt: file.dt,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn scenario_to_schema(s: &Scenario) -> schema::ScenarioFile {
    let agent_to_schema = |a: &ScenarioAgent| schema::AgentFile {
        state: a.state.to_array(),
        length: a.geometry.length,
        width: a.geometry.width,
        wheelbase: a.geometry.wheelbase,
    };
    schema::ScenarioFile {
        version: 1,
        dt: s.dt,
        horizon: s.horizon,
        map: schema::MapFile {
            reference_lines: s.map.reference_lines.iter().map(|l| polyline_to_schema(l)).collect(),
            drivable_area: s.map.drivable_area.iter().map(|l| polyline_to_schema(l)).collect(),
            routes: s.map.routes.iter().map(|l| polyline_to_schema(l)).collect(),
        },
        center_agent: agent_to_schema(&s.center_agent),
        other_agents: s.other_agents.iter().map(agent_to_schema).collect(),
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.horizon < 2 {
            return Err(WorldError::Validation(format!(
                "scenario horizon T must be >= 2, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(WorldError::Validation(format!(
                "scenario dt must lie in (0, 1], got {}",
                self.dt
            )));
        }
        for (kind, polys) in [("reference line", &self.map.reference_lines), ("route", &self.map.routes)] {
            for (i, poly) in polys.iter().enumerate() {
                if poly.len() < 2 {
                    return Err(WorldError::Validation(format!(
                        "{kind} {i} must have at least 2 points, got {}",
                        poly.len()
                    )));
                }
            }
        }
        for (i, poly) in self.map.drivable_area.iter().enumerate() {
            if poly.len() < 3 {
                return Err(WorldError::Validation(format!(
                    "drivable polygon {i} must have at least 3 points, got {}",
                    poly.len()
                )));
            }
            if !geom::polygon_is_simple(poly) {
                return Err(WorldError::Validation(format!(
                    "drivable polygon {i} must be simple (non-self-intersecting)"
                )));
            }
        }
        if self.map.routes.is_empty() {
            return Err(WorldError::Validation(
                "scenario must provide a route for the center agent".into(),
            ));
        }
        // Route membership is checked by sampling route vertices.
        for (i, route) in self.map.routes.iter().enumerate() {
            for (k, p) in route.iter().enumerate() {
                let d = geom::distance_to_drivable(&self.map.drivable_area, *p);
                if d > 0.1 {
                    return Err(WorldError::Validation(format!(
                        "route {i} vertex {k} lies {d:.3} m outside the drivable area (tolerance 0.1 m)"
                    )));
                }
            }
        }
        let mut boxes = Vec::with_capacity(1 + self.other_agents.len());
        boxes.push(crate::metrics::agent_obb(&self.center_agent.state, &self.center_agent.geometry));
        for a in &self.other_agents {
            boxes.push(crate::metrics::agent_obb(&a.state, &a.geometry));
        }
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if crate::metrics::obb_overlap(&boxes[i], &boxes[j]) {
                    return Err(WorldError::Validation(format!(
                        "agent bounding boxes {i} and {j} overlap at t=0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(scenario_to_schema(self)).expect("scenario serialization")
    }
}

/// Load and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, WorldError> {
    let text = std::fs::read_to_string(path)?;
    load_scenario_str(&text)
}

pub fn load_scenario_str(text: &str) -> Result<Scenario, WorldError> {
    let file: schema::ScenarioFile =
        serde_json::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
    scenario_from_schema(file)
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), WorldError> {
    let file = scenario_to_schema(scenario);
    let text = serde_json::to_string_pretty(&file).map_err(|e| WorldError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
