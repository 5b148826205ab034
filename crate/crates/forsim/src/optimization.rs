//! Reward model, discounted returns, group-relative advantages, the
//! dual-clipped surrogate objective, and the outer closed-loop training
//! loop.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, PredictionSample, PredictorParams};
use crate::dynamics::{propagate, PidState};
use crate::geom;
use crate::metrics;
use crate::policy::{self, LatticePolicy, ScoringParams};
use crate::rollout::{
    branch_dispersion, forward_simulate, Environment, ParadigmConfig, RolloutBranch, SimContext,
    WorldState,
};
use crate::selection::{self, GridIndex};
use crate::world::{Scenario, SimConfig, VectorMap, NUM_CANDIDATE_FEATURES};

/// Advantages degenerate to zero when the return spread drops below this.
pub const STD_GUARD: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("group-relative advantages need at least 2 returns, got {0}")]
    GroupTooSmall(usize),
}

/// Weights and thresholds of the stepwise reward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub w_progress: f64,
    pub w_collision: f64,
    pub w_offroad: f64,
    pub w_comfort: f64,
    /// Longitudinal |accel| above this counts as uncomfortable.
    pub comfort_accel_threshold: f64,
    /// Flat return assigned to branches that failed mid-rollout.
    pub failure_reward: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_progress: 1.0,
            w_collision: 10.0,
            w_offroad: 2.0,
            w_comfort: 0.5,
            comfort_accel_threshold: 2.4,
            failure_reward: -50.0,
        }
    }
}

/// Per-branch returns with their normalized group-relative advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEvaluation {
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Stepwise reward of the transition `prev -> world`: weighted route
/// progress minus collision, off-road, and discomfort penalties (indicators
/// evaluated at the arrived state).
pub fn step_reward(
    prev: &WorldState,
    world: &WorldState,
    map: &VectorMap,
    cfg: &SimConfig,
) -> f64 {
    let rc = &cfg.reward;
    let route = map.center_route();
    let progress = geom::project_to_polyline(route, world.center.state.position()).arc_length
        - geom::project_to_polyline(route, prev.center.state.position()).arc_length;
    let collision = metrics::collision_indicator(world);
    let offroad = metrics::offroad_indicator(world, map);
    let accel = (world.center.state.speed() - prev.center.state.speed()) / cfg.dt;
    let uncomfortable = accel.abs() > rc.comfort_accel_threshold;
    rc.w_progress * progress
        - rc.w_collision * f64::from(collision)
        - rc.w_offroad * f64::from(offroad)
        - rc.w_comfort * f64::from(uncomfortable)
}

/// Per-transition rewards along a branch.
pub fn branch_rewards(branch: &RolloutBranch, map: &VectorMap, cfg: &SimConfig) -> Vec<f64> {
    branch
        .states
        .windows(2)
        .map(|w| step_reward(&w[0], &w[1], map, cfg))
        .collect()
}

/// Discounted return over the branch's reward steps; failed branches get
/// the configured failure reward.
pub fn branch_return(branch: &RolloutBranch, map: &VectorMap, cfg: &SimConfig) -> f64 {
    if branch.failed.is_some() {
        return cfg.reward.failure_reward;
    }
    branch_rewards(branch, map, cfg)
        .iter()
        .enumerate()
        .map(|(t, r)| cfg.gamma.powi(t as i32) * r)
        .sum()
}

/// Normalized group-relative advantages with a population-std denominator;
/// a spread below [`STD_GUARD`] yields all-zero advantages.
pub fn group_advantages(returns: &[f64]) -> Result<GroupEvaluation, OptimError> {
    let g = returns.len();
    if g < 2 {
        return Err(OptimError::GroupTooSmall(g));
    }
    let mean = returns.iter().sum::<f64>() / g as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    let advantages = if std > STD_GUARD {
        returns.iter().map(|r| (r - mean) / std).collect()
    } else {
        vec![0.0; g]
    };
    Ok(GroupEvaluation {
        returns: returns.to_vec(),
        advantages,
        mean,
        std,
    })
}

/// Fill per-branch rewards and evaluate the group.
pub fn evaluate_branches(
    branches: &mut [RolloutBranch],
    map: &VectorMap,
    cfg: &SimConfig,
) -> Result<GroupEvaluation, OptimError> {
    let mut returns = Vec::with_capacity(branches.len());
    for branch in branches.iter_mut() {
        branch.rewards = if branch.failed.is_some() {
            Vec::new()
        } else {
            branch_rewards(branch, map, cfg)
        };
        returns.push(branch_return(branch, map, cfg));
    }
    group_advantages(&returns)
}

/// Dual-clipped surrogate: the PPO clipped objective for nonnegative
/// advantages, with an extra `c * advantage` lower bound for negative ones.
pub fn dual_clip(rho: f64, advantage: f64, epsilon: f64, c: f64) -> f64 {
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    let inner = unclipped.min(clipped);
    if advantage >= 0.0 {
        inner
    } else {
        inner.max(c * advantage)
    }
}

/// Value and subgradient in rho. At kinks the clipped (flat) branch wins.
fn dual_clip_grad(rho: f64, advantage: f64, epsilon: f64, c: f64) -> (f64, f64) {
    let unclipped = rho * advantage;
    let clip_inside = rho > 1.0 - epsilon && rho < 1.0 + epsilon;
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    let d_clipped = if clip_inside { advantage } else { 0.0 };
    let (inner, d_inner) = if unclipped < clipped {
        (unclipped, advantage)
    } else {
        (clipped, d_clipped)
    };
    if advantage >= 0.0 {
        (inner, d_inner)
    } else if inner > c * advantage {
        (inner, d_inner)
    } else {
        (c * advantage, 0.0)
    }
}

/// One stored real-time step: the candidate features and old-policy
/// likelihoods of its grid plus the evaluated group advantages.
#[derive(Debug, Clone)]
pub struct Transition {
    pub features: Vec<[f64; NUM_CANDIDATE_FEATURES]>,
    pub old_likelihoods: Vec<f64>,
    pub executed: GridIndex,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// FIFO experience store for policy transitions and predictor samples.
pub struct RolloutBuffer {
    transitions: VecDeque<Transition>,
    samples: VecDeque<PredictionSample>,
    capacity: usize,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        RolloutBuffer {
            transitions: VecDeque::new(),
            samples: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push_transition(&mut self, t: Transition) {
        if self.transitions.len() == self.capacity {
            self.transitions.pop_front();
        }
        self.transitions.push_back(t);
    }

    pub fn push_sample(&mut self, s: PredictionSample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
    }

    pub fn transitions(&self) -> &VecDeque<Transition> {
        &self.transitions
    }

    pub fn samples(&self) -> &VecDeque<PredictionSample> {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Mean dual-clipped surrogate over a transition batch and its gradient in
/// theta. Likelihood ratios re-score the stored features under `params`
/// against the stored old-policy likelihoods.
pub fn policy_objective(
    batch: &[&Transition],
    params: &ScoringParams,
    cfg: &SimConfig,
) -> (f64, [f64; NUM_CANDIDATE_FEATURES]) {
    let mut value = 0.0;
    let mut grad = [0.0; NUM_CANDIDATE_FEATURES];
    if batch.is_empty() {
        return (value, grad);
    }
    for tr in batch {
        let g = tr.features.len();
        let scores: Vec<f64> = tr.features.iter().map(|f| params.dot(f)).collect();
        let probs = policy::softmax_slice(&scores);
        let mut mean_feat = [0.0; NUM_CANDIDATE_FEATURES];
        for (p, f) in probs.iter().zip(tr.features.iter()) {
            for k in 0..NUM_CANDIDATE_FEATURES {
                mean_feat[k] += p * f[k];
            }
        }
        for i in 0..g {
            let rho = probs[i] / tr.old_likelihoods[i];
            let (psi, dpsi) = dual_clip_grad(rho, tr.advantages[i], cfg.epsilon, cfg.dual_clip);
            value += psi / g as f64;
            if dpsi != 0.0 {
                let scale = dpsi * rho / g as f64;
                for k in 0..NUM_CANDIDATE_FEATURES {
                    grad[k] += scale * (tr.features[i][k] - mean_feat[k]);
                }
            }
        }
    }
    let n = batch.len() as f64;
    for gk in grad.iter_mut() {
        *gk /= n;
    }
    (value / n, grad)
}

// ---------------------------------------------------------------------------
// Outer training loop
// ---------------------------------------------------------------------------

/// Trainable state carried across iterations (and checkpoints).
#[derive(Debug, Clone)]
pub struct TrainState {
    pub scoring: ScoringParams,
    pub predictor: PredictorParams,
    pub iteration: usize,
}

impl TrainState {
    pub fn fresh(cfg: &SimConfig) -> Self {
        TrainState {
            scoring: ScoringParams::zeros(),
            predictor: PredictorParams::for_config(cfg),
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_return: f64,
    pub objective: f64,
    pub pred_loss: f64,
    pub collapse_dispersion: f64,
    /// Softmax probability of the dominant (highest-return) modality,
    /// probed at the first scenario's initial state.
    pub dominant_prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub iterations: Vec<IterationStats>,
}

impl TrainingLog {
    pub fn csv_header() -> &'static str {
        "iteration,mean_return,objective,pred_loss,collapse_dispersion,dominant_prob"
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                it.iteration,
                it.mean_return,
                it.objective,
                it.pred_loss,
                it.collapse_dispersion,
                it.dominant_prob
            ));
        }
        out
    }
}

fn probe_dominant_probability(
    scenario: &Scenario,
    state: &TrainState,
    lattice: &LatticePolicy,
    cfg: &SimConfig,
    paradigms: ParadigmConfig,
    dominant: &mut Option<GridIndex>,
    seed: u64,
) -> f64 {
    let world = WorldState::from_scenario(scenario, cfg);
    let ctx = SimContext {
        map: &scenario.map,
        lattice,
        scoring: &state.scoring,
        predictor: &state.predictor,
        cfg,
    };
    let cands = match policy::generate_candidates(&world, &scenario.map, lattice, &state.scoring, cfg, None)
    {
        Ok(c) => c,
        Err(_) => return 0.0,
    };
    if dominant.is_none() {
        let mut branches = forward_simulate(&ctx, &world, &cands, paradigms, seed);
        if let Ok(eval) = evaluate_branches(&mut branches, &scenario.map, cfg) {
            let best = eval
                .returns
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            *dominant = Some(cands.grid_index(best));
        }
    }
    match dominant {
        Some(idx) => policy::likelihood(&cands, *idx),
        None => 0.0,
    }
}

/// Closed-loop traffic policy optimization: alternating collection (real
/// steps execute the maximum-score candidate; every step forward-simulates
/// the whole candidate group) and fine-tuning (predictor descent on the
/// composite loss, policy ascent on the dual-clipped objective).
/// Deterministic given inputs and `seed`.
pub fn train(
    scenarios: &[Scenario],
    cfg: &SimConfig,
    paradigms: ParadigmConfig,
    seed: u64,
    init: TrainState,
) -> (TrainState, TrainingLog) {
    let lattice = LatticePolicy::default();
    let mut state = init;
    let mut buffer = RolloutBuffer::new(cfg.buffer_capacity);
    let mut log = TrainingLog::default();
    let mut dominant: Option<GridIndex> = None;

    for outer in 0..cfg.iterations {
        let iteration = state.iteration + 1;
        let scoring_old = state.scoring;
        let mut dispersions = Vec::new();
        let mut iter_returns = Vec::new();

        for (scen_idx, scenario) in scenarios.iter().enumerate() {
            let mut world = WorldState::from_scenario(scenario, cfg);
            let mut env = Environment::new(&world);
            let mut pid = PidState::default();
            // Realized other-agent states per real step, for predictor targets.
            let mut realized: Vec<Vec<crate::world::AgentState>> = Vec::new();
            let mut pending: Vec<Vec<PredictionSample>> = Vec::new();
            let rollout_seed = seed
                .wrapping_add(outer as u64 * 0x9E37_79B9)
                .wrapping_add(scen_idx as u64 * 0x85EB_CA6B);

            for _real_step in 0..scenario.horizon {
                let ctx = SimContext {
                    map: &scenario.map,
                    lattice: &lattice,
                    scoring: &scoring_old,
                    predictor: &state.predictor,
                    cfg,
                };
                let cands = match policy::generate_candidates(
                    &world,
                    &scenario.map,
                    &lattice,
                    &scoring_old,
                    cfg,
                    None,
                ) {
                    Ok(c) => c,
                    Err(_) => break,
                };
                let mut branches = forward_simulate(&ctx, &world, &cands, paradigms, rollout_seed);
                let eval = match evaluate_branches(&mut branches, &scenario.map, cfg) {
                    Ok(e) => e,
                    Err(_) => break,
                };
                if let Ok(d) = branch_dispersion(&branches) {
                    dispersions.push(d);
                }
                iter_returns.push(eval.mean);

                let executed = selection::select_max_likelihood(&cands);
                buffer.push_transition(Transition {
                    features: cands.features().to_vec(),
                    old_likelihoods: policy::likelihoods(&cands),
                    executed,
                    advantages: eval.advantages.clone(),
                    returns: eval.returns.clone(),
                });

                // Stage predictor samples; targets come from realized futures.
                let staged: Vec<PredictionSample> = (0..world.others.len())
                    .map(|k| PredictionSample {
                        features: agents::predictor_features(&world, k, cfg),
                        start: world.others[k].state,
                        wheelbase: world.others[k].geometry.wheelbase,
                        targets: Vec::new(),
                    })
                    .collect();
                pending.push(staged);

                // Execute the highest-score candidate for one real step.
                let target = cands.trajectory(executed.0, executed.1);
                let (next_center, next_pid) = propagate(
                    &world.center.state,
                    target,
                    &pid,
                    world.center.geometry.wheelbase,
                    cfg,
                );
                pid = next_pid;
                world.center.state = next_center;
                env.step(&mut world, &scenario.map, cfg);
                realized.push(world.others.iter().map(|a| a.state).collect());
            }

            // Fill prediction targets for steps with a full supervised window.
            for (t, staged) in pending.into_iter().enumerate() {
                if t + cfg.t_f > realized.len() {
                    break;
                }
                for (k, mut sample) in staged.into_iter().enumerate() {
                    sample.targets = (t..t + cfg.t_f).map(|u| realized[u][k]).collect();
                    buffer.push_sample(sample);
                }
            }
        }

        // Fine-tuning phase.
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(iteration as u64 * 0xC2B2_AE35));
        for _epoch in 0..cfg.inner_epochs {
            if !buffer.samples().is_empty() {
                let batch: Vec<PredictionSample> = (0..cfg.minibatch.min(buffer.samples().len()))
                    .map(|_| buffer.samples()[rng.gen_range(0..buffer.samples().len())].clone())
                    .collect();
                let (_, grad) = agents::predictor_loss_and_grad(&batch, &state.predictor, cfg);
                for (w, g) in state.predictor.weights_mut().iter_mut().zip(grad.iter()) {
                    *w -= cfg.predictor_lr * g;
                }
            }
            if !buffer.is_empty() {
                let batch: Vec<&Transition> = (0..cfg.minibatch.min(buffer.len()))
                    .map(|_| &buffer.transitions()[rng.gen_range(0..buffer.len())])
                    .collect();
                let (_, grad) = policy_objective(&batch, &state.scoring, cfg);
                for (t, g) in state.scoring.theta.iter_mut().zip(grad.iter()) {
                    *t += cfg.policy_lr * g;
                }
            }
        }
        state.iteration = iteration;

        // Iteration statistics.
        let all: Vec<&Transition> = buffer.transitions().iter().collect();
        let (objective, _) = policy_objective(&all, &state.scoring, cfg);
        let pred_loss = if buffer.samples().is_empty() {
            0.0
        } else {
            let probe: Vec<PredictionSample> = buffer
                .samples()
                .iter()
                .take(128)
                .cloned()
                .collect();
            agents::predictor_loss_and_grad(&probe, &state.predictor, cfg).0.total
        };
        let mean_return = if iter_returns.is_empty() {
            0.0
        } else {
            iter_returns.iter().sum::<f64>() / iter_returns.len() as f64
        };
        let collapse_dispersion = if dispersions.is_empty() {
            0.0
        } else {
            dispersions.iter().sum::<f64>() / dispersions.len() as f64
        };
        let dominant_prob = if scenarios.is_empty() {
            0.0
        } else {
            probe_dominant_probability(
                &scenarios[0],
                &state,
                &lattice,
                cfg,
                paradigms,
                &mut dominant,
                seed,
            )
        };
        log.iterations.push(IterationStats {
            iteration,
            mean_return,
            objective,
            pred_loss,
            collapse_dispersion,
            dominant_prob,
        });
    }

    (state, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlInput;
    use crate::fixtures;
    use crate::rollout::ActorState;
    use crate::world::AgentState;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn world_at(x: f64, speed: f64) -> WorldState {
        let scenario = fixtures::straight_road(speed);
        let cfg = SimConfig::default();
        let mut w = WorldState::from_scenario(&scenario, &cfg);
        w.center.state = AgentState::from_pose(x, 0.0, 0.0, speed);
        w
    }

    #[test]
    fn step_reward_single_term() {
        let scenario = fixtures::straight_road(10.0);
        let cfg = SimConfig::default();
        let prev = world_at(0.0, 10.0);
        let world = world_at(1.0, 10.0);
        let r = step_reward(&prev, &world, &scenario.map, &cfg);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn step_reward_collision_arithmetic() {
        let scenario = fixtures::straight_road(5.0);
        let cfg = SimConfig::default();
        let prev = world_at(0.0, 5.0);
        let mut world = world_at(0.5, 5.0);
        world.others.push(ActorState {
            state: world.center.state,
            geometry: Default::default(),
            last_control: ControlInput::zero(),
        });
        let r = step_reward(&prev, &world, &scenario.map, &cfg);
        assert_abs_diff_eq!(r, 0.5 - 10.0, epsilon = 1e-9);
    }

    #[test]
    fn step_reward_stationary_zero() {
        let scenario = fixtures::straight_road(0.0);
        let cfg = SimConfig::default();
        let w = world_at(3.0, 0.0);
        assert_eq!(step_reward(&w, &w, &scenario.map, &cfg), 0.0);
    }

    fn unit_reward_branch(transitions: usize) -> (RolloutBranch, Scenario, SimConfig) {
        // 1 m progress per transition at constant speed, no events.
        let scenario = fixtures::straight_road(10.0);
        let cfg = SimConfig::default();
        let states: Vec<WorldState> = (0..=transitions).map(|t| world_at(t as f64, 10.0)).collect();
        let branch = RolloutBranch {
            seed_index: (0, 0),
            states,
            selected: vec![(0, 0); transitions],
            selected_target: vec![crate::geom::Vec2::ZERO; transitions],
            rewards: Vec::new(),
            failed: None,
            predictor_calls: 0,
        };
        (branch, scenario, cfg)
    }

    #[test]
    fn branch_return_discounted_sum() {
        // T = 2: three transitions x_0..x_3, RM = 1 each, gamma = 0.5.
        let (branch, scenario, mut cfg) = unit_reward_branch(3);
        cfg.gamma = 0.5;
        assert_abs_diff_eq!(branch_return(&branch, &scenario.map, &cfg), 1.75, epsilon = 1e-9);
    }

    #[test]
    fn branch_return_zero_and_undiscounted() {
        let (mut branch, scenario, mut cfg) = unit_reward_branch(3);
        cfg.gamma = 1.0;
        assert_abs_diff_eq!(branch_return(&branch, &scenario.map, &cfg), 3.0, epsilon = 1e-9);
        // Stationary branch: zero reward.
        let still = world_at(0.0, 0.0);
        branch.states = vec![still.clone(), still.clone(), still];
        assert_eq!(branch_return(&branch, &scenario.map, &cfg), 0.0);
    }

    #[test]
    fn failed_branch_gets_failure_reward() {
        let (mut branch, scenario, cfg) = unit_reward_branch(3);
        branch.failed = Some("no reference line".into());
        assert_eq!(
            branch_return(&branch, &scenario.map, &cfg),
            cfg.reward.failure_reward
        );
    }

    #[test]
    fn group_advantages_example() {
        let eval = group_advantages(&[1.0, 2.0, 3.0]).unwrap();
        let expect = (3.0f64 / 2.0).sqrt();
        assert_abs_diff_eq!(eval.advantages[0], -expect, epsilon = 1e-4);
        assert_abs_diff_eq!(eval.advantages[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eval.advantages[2], expect, epsilon = 1e-4);
        assert_abs_diff_eq!(eval.mean, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_group_is_all_zero() {
        let eval = group_advantages(&[4.0; 6]).unwrap();
        assert!(eval.advantages.iter().all(|a| *a == 0.0));
        assert_eq!(group_advantages(&[1.0]).unwrap_err(), OptimError::GroupTooSmall(1));
    }

    #[test]
    fn advantages_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let returns: Vec<f64> = (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let a = rng.gen_range(0.1..5.0);
            let b = rng.gen_range(-20.0..20.0);
            let mapped: Vec<f64> = returns.iter().map(|r| a * r + b).collect();
            let e1 = group_advantages(&returns).unwrap();
            let e2 = group_advantages(&mapped).unwrap();
            for (x, y) in e1.advantages.iter().zip(e2.advantages.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn group_statistics_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let g = rng.gen_range(2..16);
            let returns: Vec<f64> = (0..g).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let eval = group_advantages(&returns).unwrap();
            if eval.std > STD_GUARD {
                let mean: f64 = eval.advantages.iter().sum::<f64>() / g as f64;
                let var: f64 =
                    eval.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / g as f64;
                assert!(mean.abs() < 1e-9);
                assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dual_clip_examples() {
        assert_abs_diff_eq!(dual_clip(1.5, 1.0, 0.2, 3.0), 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(dual_clip(5.0, -1.0, 0.2, 3.0), -3.0, epsilon = 1e-12);
        for adv in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert_eq!(dual_clip(1.0, adv, 0.2, 3.0), adv);
        }
    }

    #[test]
    fn dual_clip_matches_piecewise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let rho = rng.gen_range(1e-3..5.0);
            let adv = rng.gen_range(-3.0..3.0);
            let eps = rng.gen_range(0.05..0.5);
            let c = 1.0 + eps + rng.gen_range(0.1..3.0);
            // Oracle: literal piecewise definition.
            let clip = rho.clamp(1.0 - eps, 1.0 + eps);
            let expected = if adv >= 0.0 {
                (rho * adv).min(clip * adv)
            } else {
                (rho * adv).min(clip * adv).max(c * adv)
            };
            assert_eq!(dual_clip(rho, adv, eps, c), expected);
        }
    }

    #[test]
    fn dual_clip_coincides_with_ppo_clip_for_nonnegative_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let rho = rng.gen_range(1e-3..5.0);
            let adv = rng.gen_range(0.0..3.0);
            let eps = rng.gen_range(0.05..0.5);
            let ppo = (rho * adv).min(rho.clamp(1.0 - eps, 1.0 + eps) * adv);
            assert_eq!(dual_clip(rho, adv, eps, 1.0 + eps + 1.0), ppo);
        }
    }

    #[test]
    fn dual_clip_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let rho = rng.gen_range(1e-3..5.0);
            let adv = rng.gen_range(-3.0..3.0);
            let eps = 0.2;
            let c = 3.0;
            let psi = dual_clip(rho, adv, eps, c);
            let upper = (rho * adv).max((1.0 + eps) * adv).max(c * adv);
            assert!(psi <= upper + 1e-12);
            if adv < 0.0 {
                assert!(psi >= c * adv - 1e-12);
            }
        }
    }

    fn random_transition(rng: &mut ChaCha8Rng, g: usize, old: &ScoringParams) -> Transition {
        let features: Vec<[f64; NUM_CANDIDATE_FEATURES]> = (0..g)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let scores: Vec<f64> = features.iter().map(|f| old.dot(f)).collect();
        let old_likelihoods = policy::softmax_slice(&scores);
        let returns: Vec<f64> = (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let advantages = group_advantages(&returns).unwrap().advantages;
        Transition {
            features,
            old_likelihoods,
            executed: (0, 0),
            advantages,
            returns,
        }
    }

    #[test]
    fn objective_zero_on_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = SimConfig::default();
        let old = ScoringParams::from_vec(&[0.3, -0.2, 0.5, 0.1, -0.4]).unwrap();
        let transitions: Vec<Transition> =
            (0..20).map(|_| random_transition(&mut rng, 8, &old)).collect();
        let refs: Vec<&Transition> = transitions.iter().collect();
        let (value, _) = policy_objective(&refs, &old, &cfg);
        assert!(value.abs() < 1e-9, "on-policy objective {value}");
    }

    #[test]
    fn objective_zero_gradient_for_zero_advantages() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = SimConfig::default();
        let old = ScoringParams::zeros();
        let mut tr = random_transition(&mut rng, 6, &old);
        tr.advantages = vec![0.0; 6];
        let (value, grad) = policy_objective(&[&tr], &old, &cfg);
        assert_eq!(value, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = SimConfig::default();
        let h = 1e-6;
        for _ in 0..20 {
            let old = ScoringParams::from_vec(
                &(0..NUM_CANDIDATE_FEATURES)
                    .map(|_| rng.gen_range(-0.5..0.5))
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let transitions: Vec<Transition> =
                (0..4).map(|_| random_transition(&mut rng, 6, &old)).collect();
            let refs: Vec<&Transition> = transitions.iter().collect();
            // Evaluate slightly off-policy but away from clip kinks.
            let mut theta = old;
            for t in theta.theta.iter_mut() {
                *t += rng.gen_range(-0.01..0.01);
            }
            let (_, grad) = policy_objective(&refs, &theta, &cfg);
            for k in 0..NUM_CANDIDATE_FEATURES {
                let mut up = theta;
                up.theta[k] += h;
                let mut dn = theta;
                dn.theta[k] -= h;
                let (vu, _) = policy_objective(&refs, &up, &cfg);
                let (vd, _) = policy_objective(&refs, &dn, &cfg);
                let fd = (vu - vd) / (2.0 * h);
                let denom = grad[k].abs().max(1e-6);
                assert!(
                    ((grad[k] - fd) / denom).abs() < 1e-4,
                    "component {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn zero_iterations_is_a_no_op() {
        let scenario = fixtures::bandit();
        let mut cfg = fixtures::bandit_config();
        cfg.iterations = 0;
        let init = TrainState::fresh(&cfg);
        let paradigms = ParadigmConfig {
            center: crate::selection::CenterParadigm::TrajectoryAligned,
            others: crate::agents::OthersParadigm::StepwisePrediction,
        };
        let (out, log) = train(&[scenario], &cfg, paradigms, 1, init.clone());
        assert_eq!(out.scoring.theta, init.scoring.theta);
        assert_eq!(out.predictor.weights(), init.predictor.weights());
        assert_eq!(out.iteration, 0);
        assert!(log.iterations.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let scenario = fixtures::bandit();
        let mut cfg = fixtures::bandit_config();
        cfg.iterations = 2;
        let paradigms = ParadigmConfig {
            center: crate::selection::CenterParadigm::TrajectoryAligned,
            others: crate::agents::OthersParadigm::StepwisePrediction,
        };
        let (a_state, a_log) = train(&[scenario.clone()], &cfg, paradigms, 11, TrainState::fresh(&cfg));
        let (b_state, b_log) = train(&[scenario], &cfg, paradigms, 11, TrainState::fresh(&cfg));
        assert_eq!(a_state.scoring.theta, b_state.scoring.theta);
        assert_eq!(a_state.predictor.weights(), b_state.predictor.weights());
        assert_eq!(a_log, b_log);
    }
}
