//! Candidate-trajectory generation and scoring.
//!
//! A synthetic lattice generator produces the dense `n_ref x n_lon` candidate
//! grid (longitudinal speed ramps crossed with lateral reference lines), and
//! a linear scoring head over five interpretable features defines the
//! confidence scores whose softmax gives trajectory-level likelihoods.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geom::{self, Vec2};
use crate::rollout::WorldState;
use crate::world::{
    AgentState, CandidateSet, SimConfig, Trajectory, VectorMap, NUM_CANDIDATE_FEATURES,
};

/// Clearance feature saturates here; also the value reported when no other
/// agents exist.
const CLEARANCE_CAP: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no reference line within {0} m of the agent")]
    NoReferenceLine(f64),
}

/// Lattice generation parameters. Lateral offsets come from the map's
/// reference lines (nearest first, duplicated when fewer than `n_ref` are
/// reachable); longitudinal profiles are constant-jerk ramps to `n_lon`
/// evenly spaced terminal speeds in `[0, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticePolicy {
    /// Reference lines farther than this are not reachable.
    pub reach_radius: f64,
}

impl Default for LatticePolicy {
    fn default() -> Self {
        LatticePolicy { reach_radius: 10.0 }
    }
}

/// Weight vector of the linear scoring head; houses the trainable policy
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringParams {
    pub theta: [f64; NUM_CANDIDATE_FEATURES],
}

impl ScoringParams {
    pub fn zeros() -> Self {
        ScoringParams {
            theta: [0.0; NUM_CANDIDATE_FEATURES],
        }
    }

    /// Hand-tuned cruise defaults used by the CLI when no checkpoint is
    /// given: make progress, keep clear of traffic, stay on the road.
    pub fn default_cruise() -> Self {
        ScoringParams {
            theta: [0.5, 0.05, -0.2, -8.0, 0.2],
        }
    }

    pub fn from_vec(v: &[f64]) -> Option<Self> {
        if v.len() != NUM_CANDIDATE_FEATURES || v.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let mut theta = [0.0; NUM_CANDIDATE_FEATURES];
        theta.copy_from_slice(v);
        Some(ScoringParams { theta })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.theta.to_vec()
    }

    pub fn dot(&self, features: &[f64; NUM_CANDIDATE_FEATURES]) -> f64 {
        self.theta
            .iter()
            .zip(features.iter())
            .map(|(t, f)| t * f)
            .sum()
    }
}

/// Constant-jerk speed ramp from 0 to 1 (two parabolic segments).
fn jerk_ramp(u: f64) -> f64 {
    if u <= 0.5 {
        2.0 * u * u
    } else {
        1.0 - 2.0 * (1.0 - u) * (1.0 - u)
    }
}

/// Quintic smoothstep.
fn quintic(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

fn build_candidate(
    start: &AgentState,
    line: &[Vec2],
    terminal_speed: f64,
    lateral_noise: f64,
    cfg: &SimConfig,
) -> Trajectory {
    let horizon = cfg.horizon;
    let proj = geom::project_to_polyline(line, start.position());
    let d0 = proj.signed_offset;
    let blend_steps = (horizon / 2).max(1) as f64;
    let v0 = start.speed();

    let mut speeds = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let u = if horizon > 1 { k as f64 / (horizon - 1) as f64 } else { 1.0 };
        let v = v0 + (terminal_speed - v0) * jerk_ramp(u);
        speeds.push(v.clamp(0.0, cfg.v_max));
    }

    let mut points = Vec::with_capacity(horizon);
    points.push(*start);
    let mut arc = proj.arc_length;
    let mut prev_pos = start.position();
    let mut prev_heading = start.heading_angle();
    for k in 1..horizon {
        arc += 0.5 * (speeds[k - 1] + speeds[k]) * cfg.dt;
        let (base, tangent) = geom::point_at_arc_length(line, arc);
        let ease = quintic(k as f64 / blend_steps);
        let offset = d0 * (1.0 - ease) + lateral_noise * ease;
        let pos = base + tangent.left_normal().scaled(offset);
        let step = pos - prev_pos;
        let heading = if step.norm() > 1e-9 {
            step.y.atan2(step.x)
        } else {
            prev_heading
        };
        points.push(AgentState::from_pose(pos.x, pos.y, heading, speeds[k]));
        prev_pos = pos;
        prev_heading = heading;
    }
    Trajectory::new(points, cfg.dt)
}

/// Generate the dense candidate grid from the agent's current state and
/// score it. Every candidate's first point equals the current state.
///
/// Reference lines are ranked nearest-first; when fewer than `n_ref` are
/// reachable the nearest is duplicated and the degeneracy flag set. Fails
/// with [`PolicyError::NoReferenceLine`] when no line lies within reach.
pub fn generate_candidates(
    world: &WorldState,
    map: &VectorMap,
    pol: &LatticePolicy,
    params: &ScoringParams,
    cfg: &SimConfig,
    mut noise_rng: Option<&mut ChaCha8Rng>,
) -> Result<CandidateSet, PolicyError> {
    let start = &world.center.state;
    let p = start.position();

    let mut reachable: Vec<(usize, f64)> = map
        .reference_lines
        .iter()
        .enumerate()
        .map(|(i, line)| (i, geom::distance_to_polyline(line, p)))
        .filter(|(_, d)| *d <= pol.reach_radius)
        .collect();
    reachable.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    if reachable.is_empty() {
        return Err(PolicyError::NoReferenceLine(pol.reach_radius));
    }

    let mut line_indices = Vec::with_capacity(cfg.n_ref);
    for i in 0..cfg.n_ref {
        let pick = reachable.get(i).unwrap_or(&reachable[0]).0;
        line_indices.push(pick);
    }
    let degenerate = reachable.len() < cfg.n_ref;

    let mut trajectories = Vec::with_capacity(cfg.n_ref * cfg.n_lon);
    for &line_idx in &line_indices {
        let line = &map.reference_lines[line_idx];
        for j in 0..cfg.n_lon {
            let terminal_speed = if cfg.n_lon > 1 {
                cfg.v_max * j as f64 / (cfg.n_lon - 1) as f64
            } else {
                start.speed()
            };
            let noise = match noise_rng.as_deref_mut() {
                Some(rng) if cfg.candidate_noise_std > 0.0 => {
                    let z: f64 = rng.sample(StandardNormal);
                    z * cfg.candidate_noise_std
                }
                _ => 0.0,
            };
            trajectories.push(build_candidate(start, line, terminal_speed, noise, cfg));
        }
    }

    let mut cands = CandidateSet::new(cfg.n_ref, cfg.n_lon, trajectories);
    cands.degenerate_lattice = degenerate;
    score_candidates(&mut cands, world, map, params, cfg);
    Ok(cands)
}

/// Feature vector of one candidate: route progress, minimum clearance to
/// other agents, mean absolute acceleration, off-road overlap fraction, and
/// terminal speed.
pub fn candidate_features(
    traj: &Trajectory,
    world: &WorldState,
    map: &VectorMap,
    cfg: &SimConfig,
) -> [f64; NUM_CANDIDATE_FEATURES] {
    let route = map.center_route();
    let arc_start = geom::project_to_polyline(route, traj.points[0].position()).arc_length;
    let arc_end = geom::project_to_polyline(route, traj.terminal().position()).arc_length;
    let progress = arc_end - arc_start;

    let mut clearance = CLEARANCE_CAP;
    for point in traj.points.iter().skip(1) {
        for other in &world.others {
            clearance = clearance.min(point.position().dist(other.state.position()));
        }
    }

    let mut accel_sum = 0.0;
    for w in traj.points.windows(2) {
        accel_sum += (w[1].speed() - w[0].speed()).abs() / traj.dt;
    }
    let mean_accel = if traj.len() > 1 {
        accel_sum / (traj.len() - 1) as f64
    } else {
        0.0
    };

    let offroad_points = traj
        .points
        .iter()
        .filter(|p| !map.is_drivable(p.position()))
        .count();
    let offroad_frac = offroad_points as f64 / traj.len() as f64;

    let terminal_speed = traj.terminal().speed();
    debug_assert!(cfg.horizon > 0);
    [progress, clearance, mean_accel, offroad_frac, terminal_speed]
}

/// Fill features and scores: `score(i, j) = theta . features(candidate)`.
pub fn score_candidates(
    cands: &mut CandidateSet,
    world: &WorldState,
    map: &VectorMap,
    params: &ScoringParams,
    cfg: &SimConfig,
) {
    let features: Vec<[f64; NUM_CANDIDATE_FEATURES]> = (0..cands.len())
        .map(|flat| candidate_features(cands.trajectory_flat(flat), world, map, cfg))
        .collect();
    let scores = features.iter().map(|f| params.dot(f)).collect();
    cands.set_features(features);
    cands.set_scores(scores);
}

pub(crate) fn softmax_slice(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    softmax_slice(scores)
}

/// Softmax likelihoods of the stored scores, over the whole grid.
pub fn likelihoods(cands: &CandidateSet) -> Vec<f64> {
    softmax(cands.scores())
}

/// Softmax likelihood of the candidate at `index` under the stored scores.
pub fn likelihood(cands: &CandidateSet, index: (usize, usize)) -> f64 {
    likelihoods(cands)[cands.flat_index(index.0, index.1)]
}

/// Likelihood of `index` under a different parameter vector, re-scoring the
/// stored features. Used for the likelihood ratio between updated and old
/// policies.
pub fn likelihood_for_params(
    cands: &CandidateSet,
    index: (usize, usize),
    params: &ScoringParams,
) -> f64 {
    let scores: Vec<f64> = cands.features().iter().map(|f| params.dot(f)).collect();
    softmax(&scores)[cands.flat_index(index.0, index.1)]
}

/// Gradient of `log pi_theta(candidate | state)` with respect to theta:
/// `features(index) - sum_k pi_k * features(k)`.
pub fn likelihood_grad(
    cands: &CandidateSet,
    index: (usize, usize),
    params: &ScoringParams,
) -> [f64; NUM_CANDIDATE_FEATURES] {
    let scores: Vec<f64> = cands.features().iter().map(|f| params.dot(f)).collect();
    let probs = softmax(&scores);
    let mut grad = cands.features()[cands.flat_index(index.0, index.1)];
    for (p, f) in probs.iter().zip(cands.features().iter()) {
        for k in 0..NUM_CANDIDATE_FEATURES {
            grad[k] -= p * f[k];
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rollout::WorldState;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn world_and_map(lines: Vec<Vec<Vec2>>, center: AgentState) -> (WorldState, VectorMap) {
        let map = VectorMap {
            reference_lines: lines,
            drivable_area: vec![vec![
                Vec2::new(-50.0, -50.0),
                Vec2::new(500.0, -50.0),
                Vec2::new(500.0, 50.0),
                Vec2::new(-50.0, 50.0),
            ]],
            routes: vec![vec![Vec2::new(-50.0, 0.0), Vec2::new(500.0, 0.0)]],
        };
        let scenario = crate::world::Scenario {
            map: map.clone(),
            center_agent: crate::world::ScenarioAgent {
                state: center,
                geometry: Default::default(),
            },
            other_agents: vec![],
            horizon: 20,
            dt: 0.1,
        };
        let cfg = SimConfig {
            horizon: 20,
            ..SimConfig::default()
        };
        (WorldState::from_scenario(&scenario, &cfg), map)
    }

    fn straight_line(y: f64) -> Vec<Vec2> {
        vec![Vec2::new(-50.0, y), Vec2::new(500.0, y)]
    }

    #[test]
    fn single_line_grid_is_straight_speed_profiles() {
        let center = AgentState::from_pose(0.0, 0.0, 0.0, 5.0);
        let (world, map) = world_and_map(vec![straight_line(0.0)], center);
        let cfg = SimConfig {
            n_ref: 1,
            n_lon: 3,
            horizon: 20,
            ..SimConfig::default()
        };
        let cands = generate_candidates(
            &world,
            &map,
            &LatticePolicy::default(),
            &ScoringParams::zeros(),
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(cands.len(), 3);
        assert!(!cands.degenerate_lattice);
        for j in 0..3 {
            let traj = cands.trajectory(0, j);
            for p in &traj.points {
                assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-9);
            }
            let expected_terminal = cfg.v_max * j as f64 / 2.0;
            assert_abs_diff_eq!(traj.terminal().speed(), expected_terminal, epsilon = 1e-9);
        }
    }

    #[test]
    fn two_lane_candidates_differ_by_lane_offset() {
        let center = AgentState::from_pose(0.0, 0.0, 0.0, 5.0);
        let (world, map) = world_and_map(vec![straight_line(0.0), straight_line(3.5)], center);
        let cfg = SimConfig {
            n_ref: 2,
            n_lon: 2,
            horizon: 20,
            ..SimConfig::default()
        };
        let cands = generate_candidates(
            &world,
            &map,
            &LatticePolicy::default(),
            &ScoringParams::zeros(),
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(cands.len(), 4);
        for j in 0..2 {
            let near = cands.trajectory(0, j).terminal();
            let far = cands.trajectory(1, j).terminal();
            assert_abs_diff_eq!(far.y - near.y, 3.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn off_map_agent_is_rejected() {
        let center = AgentState::from_pose(0.0, 50.0, 0.0, 5.0);
        let (world, map) = world_and_map(vec![straight_line(0.0)], center);
        let err = generate_candidates(
            &world,
            &map,
            &LatticePolicy::default(),
            &ScoringParams::zeros(),
            &SimConfig::default(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, PolicyError::NoReferenceLine(10.0));
    }

    #[test]
    fn degenerate_lattice_pads_and_flags() {
        let center = AgentState::from_pose(0.0, 0.0, 0.0, 5.0);
        let (world, map) = world_and_map(vec![straight_line(0.0)], center);
        let cfg = SimConfig {
            n_ref: 3,
            n_lon: 2,
            horizon: 20,
            ..SimConfig::default()
        };
        let cands = generate_candidates(
            &world,
            &map,
            &LatticePolicy::default(),
            &ScoringParams::zeros(),
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(cands.len(), 6);
        assert!(cands.degenerate_lattice);
    }

    #[test]
    fn candidates_anchor_at_current_state() {
        let scenario = fixtures::multimodal();
        let cfg = SimConfig {
            horizon: scenario.horizon,
            ..SimConfig::default()
        };
        let world = WorldState::from_scenario(&scenario, &cfg);
        let cands = generate_candidates(
            &world,
            &scenario.map,
            &LatticePolicy::default(),
            &ScoringParams::zeros(),
            &cfg,
            None,
        )
        .unwrap();
        for flat in 0..cands.len() {
            let first = cands.trajectory_flat(flat).points[0];
            assert!(first.position().dist(world.center.state.position()) < 1e-9);
        }
    }

    #[test]
    fn zero_params_zero_scores() {
        let center = AgentState::from_pose(0.0, 0.0, 0.0, 5.0);
        let (world, map) = world_and_map(vec![straight_line(0.0)], center);
        let cands = generate_candidates(
            &world,
            &map,
            &LatticePolicy::default(),
            &ScoringParams::zeros(),
            &SimConfig::default(),
            None,
        )
        .unwrap();
        assert!(cands.scores().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn progress_weight_prefers_max_progress_candidate() {
        let center = AgentState::from_pose(0.0, 0.0, 0.0, 5.0);
        let (world, map) = world_and_map(vec![straight_line(0.0)], center);
        let params = ScoringParams::from_vec(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let cands = generate_candidates(
            &world,
            &map,
            &LatticePolicy::default(),
            &params,
            &SimConfig::default(),
            None,
        )
        .unwrap();
        let argmax = (0..cands.len())
            .max_by(|&a, &b| cands.scores()[a].total_cmp(&cands.scores()[b]))
            .unwrap();
        let max_progress = (0..cands.len())
            .max_by(|&a, &b| cands.features()[a][0].total_cmp(&cands.features()[b][0]))
            .unwrap();
        assert_eq!(argmax, max_progress);
    }

    #[test]
    fn scores_match_independent_dot_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let center = AgentState::from_pose(0.0, 0.0, 0.0, 5.0);
        let (world, map) = world_and_map(vec![straight_line(0.0), straight_line(3.5)], center);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..NUM_CANDIDATE_FEATURES)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect();
            let params = ScoringParams::from_vec(&theta).unwrap();
            let cands = generate_candidates(
                &world,
                &map,
                &LatticePolicy::default(),
                &params,
                &SimConfig::default(),
                None,
            )
            .unwrap();
            for flat in 0..cands.len() {
                // Oracle: explicit loop-based dot product.
                let f = cands.features()[flat];
                let mut expected = 0.0;
                for k in 0..NUM_CANDIDATE_FEATURES {
                    expected += theta[k] * f[k];
                }
                assert_abs_diff_eq!(cands.scores()[flat], expected, epsilon = 1e-12);
            }
        }
    }

    fn toy_candidates(scores: Vec<f64>) -> CandidateSet {
        let n = scores.len();
        let point = AgentState::from_pose(0.0, 0.0, 0.0, 0.0);
        let trajs = vec![Trajectory::new(vec![point, point], 0.1); n];
        let mut cands = CandidateSet::new(1, n, trajs);
        let features: Vec<[f64; NUM_CANDIDATE_FEATURES]> = (0..n)
            .map(|i| {
                let mut f = [0.0; NUM_CANDIDATE_FEATURES];
                f[0] = scores[i];
                f
            })
            .collect();
        cands.set_features(features);
        cands.set_scores(scores);
        cands
    }

    #[test]
    fn uniform_softmax() {
        let cands = toy_candidates(vec![0.7; 4]);
        for j in 0..4 {
            assert_abs_diff_eq!(likelihood(&cands, (0, j)), 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_arithmetic() {
        let cands = toy_candidates(vec![0.0, 3f64.ln()]);
        assert_abs_diff_eq!(likelihood(&cands, (0, 0)), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(likelihood(&cands, (0, 1)), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let shifted: Vec<f64> = scores.iter().map(|s| s + 13.25).collect();
            let a = likelihoods(&toy_candidates(scores));
            let b = likelihoods(&toy_candidates(shifted));
            let total: f64 = a.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grad_uniform_case_is_feature_minus_mean() {
        let cands = toy_candidates(vec![0.0, 0.0, 0.0, 0.0]);
        let params = ScoringParams::zeros();
        let grad = likelihood_grad(&cands, (0, 2), &params);
        let mean0: f64 = cands.features().iter().map(|f| f[0]).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(grad[0], cands.features()[2][0] - mean0, epsilon = 1e-12);
        for k in 1..NUM_CANDIDATE_FEATURES {
            assert_abs_diff_eq!(grad[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grad_single_candidate_is_zero() {
        let cands = toy_candidates(vec![1.3]);
        let grad = likelihood_grad(&cands, (0, 0), &ScoringParams::zeros());
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let h = 1e-5;
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let mut cands = toy_candidates(vec![0.0; n]);
            let features: Vec<[f64; NUM_CANDIDATE_FEATURES]> = (0..n)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.5..1.5)))
                .collect();
            cands.set_features(features);
            let theta: Vec<f64> = (0..NUM_CANDIDATE_FEATURES)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let params = ScoringParams::from_vec(&theta).unwrap();
            let index = (0, rng.gen_range(0..n));
            let grad = likelihood_grad(&cands, index, &params);
            for k in 0..NUM_CANDIDATE_FEATURES {
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                let lp = likelihood_for_params(&cands, index, &ScoringParams::from_vec(&up).unwrap());
                let lm = likelihood_for_params(&cands, index, &ScoringParams::from_vec(&dn).unwrap());
                let fd = (lp.ln() - lm.ln()) / (2.0 * h);
                let denom = grad[k].abs().max(1e-8);
                assert!(
                    ((grad[k] - fd) / denom).abs() < 1e-4,
                    "component {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }
}
