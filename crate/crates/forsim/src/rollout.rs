//! Stepwise forward simulation: unrolls G rollout branches, one per seed
//! candidate, combining center-agent candidate selection with other-agent
//! propagation.
//!
//! A branch records the real state `x_0` and the virtual states
//! `x_1 .. x_{T+1}`: one seeding transition that tracks the seed candidate,
//! then `T` loop transitions that regenerate candidates from the evolving
//! virtual state. Branches share only immutable inputs and may be evaluated
//! concurrently; `FORSIM_THREADS` caps the worker count.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{self, AgentHistory, OthersParadigm, PredictorParams};
use crate::dynamics::{bicycle_step, propagate, ControlInput, PidState};
use crate::geom::Vec2;
use crate::policy::{self, LatticePolicy, ScoringParams};
use crate::selection::{self, CenterParadigm, GridIndex, SelectionParadigm};
use crate::world::{AgentState, CandidateSet, Scenario, SimConfig, Trajectory, VectorMap, VehicleGeometry};

#[derive(Debug, Error, PartialEq)]
pub enum RolloutError {
    #[error("dispersion needs at least 2 branches, got {0}")]
    TooFewBranches(usize),
}

/// One agent inside the simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub state: AgentState,
    pub geometry: VehicleGeometry,
    pub last_control: ControlInput,
}

/// Full world snapshot at one virtual step.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub center: ActorState,
    pub others: Vec<ActorState>,
    /// Virtual step index t-tilde.
    pub step: usize,
    /// Recent-state windows per other agent, for the predictor.
    pub histories: Vec<AgentHistory>,
}

impl WorldState {
    /// Initial world for a scenario. Controls start at zero; other-agent
    /// histories are bootstrapped by backcasting along the nearest reference
    /// line at the current speed (agents are assumed to have been
    /// lane-following until now), falling back to pad-by-repetition.
    pub fn from_scenario(scenario: &Scenario, cfg: &SimConfig) -> Self {
        let center = ActorState {
            state: scenario.center_agent.state,
            geometry: scenario.center_agent.geometry,
            last_control: ControlInput::zero(),
        };
        let others: Vec<ActorState> = scenario
            .other_agents
            .iter()
            .map(|a| ActorState {
                state: a.state,
                geometry: a.geometry,
                last_control: ControlInput::zero(),
            })
            .collect();
        let histories = others
            .iter()
            .map(|a| backcast_history(&a.state, &scenario.map, cfg))
            .collect();
        WorldState {
            center,
            others,
            step: 0,
            histories,
        }
    }
}

fn backcast_history(state: &AgentState, map: &VectorMap, cfg: &SimConfig) -> AgentHistory {
    let mut history = AgentHistory::new(cfg.history_len.max(1));
    let speed = state.speed();
    let near = map.nearest_reference_line(state.position());
    match near {
        Some((idx, proj)) if proj.distance <= 10.0 && speed > 0.05 => {
            let line = &map.reference_lines[idx];
            for age in (1..cfg.history_len).rev() {
                let arc = proj.arc_length - age as f64 * speed * cfg.dt;
                let (base, tangent) = crate::geom::point_at_arc_length(line, arc);
                let pos = base + tangent.left_normal().scaled(proj.signed_offset);
                let heading = tangent.y.atan2(tangent.x);
                history.push(AgentState::from_pose(pos.x, pos.y, heading, speed));
            }
        }
        _ => {}
    }
    history.push(*state);
    history
}

/// Center and other-agent paradigm pair for one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParadigmConfig {
    pub center: CenterParadigm,
    pub others: OthersParadigm,
}

/// One virtual-time rollout produced for one seed candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBranch {
    pub seed_index: GridIndex,
    /// `x_0 .. x_{T+1}`; `states[k].step == k`.
    pub states: Vec<WorldState>,
    /// Selected candidate index per transition; `selected[0]` is the seed.
    pub selected: Vec<GridIndex>,
    /// Terminal position of the selected candidate per transition, for
    /// modality-drift analysis.
    pub selected_target: Vec<Vec2>,
    /// Per-transition rewards, filled by the optimization module.
    pub rewards: Vec<f64>,
    /// Failure reason when a sub-operation errored mid-branch; the branch
    /// keeps the states recorded up to the failure.
    pub failed: Option<String>,
    pub predictor_calls: usize,
}

impl RolloutBranch {
    pub fn terminal_center_position(&self) -> Vec2 {
        self.states
            .last()
            .expect("branch has at least the real state")
            .center
            .state
            .position()
    }
}

/// Immutable inputs shared by every branch of a forward simulation.
#[derive(Clone, Copy)]
pub struct SimContext<'a> {
    pub map: &'a VectorMap,
    pub lattice: &'a LatticePolicy,
    pub scoring: &'a ScoringParams,
    pub predictor: &'a PredictorParams,
    pub cfg: &'a SimConfig,
}

enum OtherDriver {
    Constant,
    Single { frozen: Vec<Trajectory> },
    Stepwise,
}

fn advance_others(
    world: &mut WorldState,
    driver: &OtherDriver,
    ctx: &SimContext,
    transition: usize,
    predictor_calls: &mut usize,
) {
    match driver {
        OtherDriver::Constant => {
            for k in 0..world.others.len() {
                let actor = &world.others[k];
                let next = bicycle_step(
                    &actor.state,
                    actor.last_control,
                    actor.geometry.wheelbase,
                    ctx.cfg.dt,
                    ctx.cfg.v_max,
                );
                world.others[k].state = next;
                world.histories[k].push(next);
            }
        }
        OtherDriver::Single { frozen } => {
            for k in 0..world.others.len() {
                let next = if transition < frozen[k].len() {
                    frozen[k].points[transition]
                } else {
                    // Prediction horizon exhausted: hold constant velocity.
                    bicycle_step(
                        &world.others[k].state,
                        ControlInput::zero(),
                        world.others[k].geometry.wheelbase,
                        ctx.cfg.dt,
                        ctx.cfg.v_max,
                    )
                };
                world.others[k].state = next;
                world.histories[k].push(next);
            }
        }
        OtherDriver::Stepwise => {
            let predictions = agents::predict(world, ctx.predictor, ctx.cfg);
            *predictor_calls += 1;
            for (k, pred) in predictions.iter().enumerate() {
                let next = pred.points[0];
                world.others[k].state = next;
                world.histories[k].push(next);
            }
        }
    }
}

fn simulate_branch(
    ctx: &SimContext,
    real_state: &WorldState,
    cands: &CandidateSet,
    seed_index: GridIndex,
    paradigms: ParadigmConfig,
    branch_seed: u64,
) -> RolloutBranch {
    let cfg = ctx.cfg;
    let horizon = cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(branch_seed);
    let seed_traj = cands.trajectory(seed_index.0, seed_index.1).clone();

    let mut world = real_state.clone();
    world.step = 0;
    let mut states = Vec::with_capacity(horizon + 2);
    states.push(world.clone());
    let mut selected = Vec::with_capacity(horizon + 1);
    let mut selected_target = Vec::with_capacity(horizon + 1);
    let mut predictor_calls = 0;
    let mut failed = None;

    let mut driver = match paradigms.others {
        OthersParadigm::ConstantAction => OtherDriver::Constant,
        OthersParadigm::SinglePrediction => {
            let frozen = agents::predict(&world, ctx.predictor, cfg);
            predictor_calls += 1;
            OtherDriver::Single { frozen }
        }
        OthersParadigm::StepwisePrediction => OtherDriver::Stepwise,
    };
    if world.others.is_empty() {
        // No agents to predict; the driver choice cannot matter.
        driver = OtherDriver::Constant;
    }

    // Seeding transition: track the seed candidate for one step.
    let mut pid = PidState::default();
    let (next_center, next_pid) = propagate(
        &world.center.state,
        &seed_traj,
        &pid,
        world.center.geometry.wheelbase,
        cfg,
    );
    pid = next_pid;
    world.center.state = next_center;
    advance_others(&mut world, &driver, ctx, 0, &mut predictor_calls);
    world.step = 1;
    selected.push(seed_index);
    selected_target.push(seed_traj.terminal().position());
    states.push(world.clone());

    let paradigm = match paradigms.center {
        CenterParadigm::MaxLikelihood => SelectionParadigm::MaxLikelihood,
        CenterParadigm::ModeConsistent => SelectionParadigm::ModeConsistent { seed: seed_index },
        CenterParadigm::TrajectoryAligned => SelectionParadigm::TrajectoryAligned {
            seed: seed_index,
            reference: seed_traj.clone(),
        },
    };

    let mut last_selected = seed_index;
    for t in 1..=horizon {
        let cands_t = match policy::generate_candidates(
            &world,
            ctx.map,
            ctx.lattice,
            ctx.scoring,
            cfg,
            Some(&mut rng),
        ) {
            Ok(c) => c,
            Err(e) => {
                failed = Some(e.to_string());
                break;
            }
        };
        let sel = match paradigms.center {
            CenterParadigm::MaxLikelihood => selection::select_max_likelihood(&cands_t),
            CenterParadigm::ModeConsistent => seed_index,
            CenterParadigm::TrajectoryAligned => {
                if t < seed_traj.len() {
                    match selection::select_trajectory_aligned(&cands_t, &paradigm, t) {
                        Ok(sel) => sel,
                        Err(e) => {
                            failed = Some(e.to_string());
                            break;
                        }
                    }
                } else {
                    // Reference exhausted: keep the previous selection.
                    last_selected
                }
            }
        };
        let target = cands_t.trajectory(sel.0, sel.1);
        let (next_center, next_pid) =
            propagate(&world.center.state, target, &pid, world.center.geometry.wheelbase, cfg);
        pid = next_pid;
        world.center.state = next_center;
        advance_others(&mut world, &driver, ctx, t, &mut predictor_calls);
        world.step = t + 1;
        selected.push(sel);
        selected_target.push(target.terminal().position());
        states.push(world.clone());
        last_selected = sel;
    }

    RolloutBranch {
        seed_index,
        states,
        selected,
        selected_target,
        rewards: Vec::new(),
        failed,
        predictor_calls,
    }
}

fn branch_seed(seed: u64, flat: usize) -> u64 {
    seed ^ (flat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn thread_pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads: usize = std::env::var("FORSIM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .ok()
    })
    .as_ref()
}

/// Unroll one branch per seed candidate. Deterministic given the inputs and
/// `seed`; branch order follows the flat grid order regardless of the worker
/// count.
pub fn forward_simulate(
    ctx: &SimContext,
    real_state: &WorldState,
    cands: &CandidateSet,
    paradigms: ParadigmConfig,
    seed: u64,
) -> Vec<RolloutBranch> {
    let seeds: Vec<(GridIndex, u64)> = (0..cands.len())
        .map(|flat| (cands.grid_index(flat), branch_seed(seed, flat)))
        .collect();
    let run = |(index, s): &(GridIndex, u64)| {
        simulate_branch(ctx, real_state, cands, *index, paradigms, *s)
    };
    match thread_pool() {
        Some(pool) => pool.install(|| seeds.par_iter().map(run).collect()),
        None => seeds.par_iter().map(run).collect(),
    }
}

/// Tracking baselines that bypass the traffic policy during forward
/// simulation (other agents always follow constant action).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingBaseline {
    /// Replay the seed candidate verbatim.
    PerfectTracking,
    /// PID-track the fixed seed candidate without reselection.
    TrajectoryTracking,
}

impl TrackingBaseline {
    pub fn tag(&self) -> &'static str {
        match self {
            TrackingBaseline::PerfectTracking => "perfect-tracking",
            TrackingBaseline::TrajectoryTracking => "trajectory-tracking",
        }
    }
}

/// Unroll the tracking baselines over the same branch structure as
/// [`forward_simulate`].
pub fn simulate_tracking(
    ctx: &SimContext,
    real_state: &WorldState,
    cands: &CandidateSet,
    baseline: TrackingBaseline,
) -> Vec<RolloutBranch> {
    let cfg = ctx.cfg;
    let horizon = cfg.horizon;
    (0..cands.len())
        .map(|flat| {
            let seed_index = cands.grid_index(flat);
            let seed_traj = cands.trajectory_flat(flat).clone();
            let mut world = real_state.clone();
            world.step = 0;
            let mut states = Vec::with_capacity(horizon + 2);
            states.push(world.clone());
            let mut selected = Vec::with_capacity(horizon + 1);
            let mut selected_target = Vec::with_capacity(horizon + 1);
            let mut pid = PidState::default();
            let mut calls = 0;
            for t in 0..=horizon {
                match baseline {
                    TrackingBaseline::PerfectTracking => {
                        let next = if t + 1 < seed_traj.len() {
                            seed_traj.points[t + 1]
                        } else {
                            bicycle_step(
                                &world.center.state,
                                ControlInput::zero(),
                                world.center.geometry.wheelbase,
                                cfg.dt,
                                cfg.v_max,
                            )
                        };
                        world.center.state = next;
                    }
                    TrackingBaseline::TrajectoryTracking => {
                        let (next, next_pid) = propagate(
                            &world.center.state,
                            &seed_traj,
                            &pid,
                            world.center.geometry.wheelbase,
                            cfg,
                        );
                        pid = next_pid;
                        world.center.state = next;
                    }
                }
                advance_others(&mut world, &OtherDriver::Constant, ctx, t, &mut calls);
                world.step = t + 1;
                selected.push(seed_index);
                selected_target.push(seed_traj.terminal().position());
                states.push(world.clone());
            }
            RolloutBranch {
                seed_index,
                states,
                selected,
                selected_target,
                rewards: Vec::new(),
                failed: None,
                predictor_calls: calls,
            }
        })
        .collect()
}

/// Mean pairwise Euclidean distance between branch terminal center
/// positions.
pub fn branch_dispersion(branches: &[RolloutBranch]) -> Result<f64, RolloutError> {
    if branches.len() < 2 {
        return Err(RolloutError::TooFewBranches(branches.len()));
    }
    let terminals: Vec<Vec2> = branches.iter().map(|b| b.terminal_center_position()).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..terminals.len() {
        for j in i + 1..terminals.len() {
            sum += terminals[i].dist(terminals[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

// ---------------------------------------------------------------------------
// Real-time environment
// ---------------------------------------------------------------------------

/// Lane-following environment driving other agents in the real-time loop:
/// each agent PID-tracks its nearest reference line at its initial cruise
/// speed, slowing when the gap to a leading agent closes.
pub struct Environment {
    pids: Vec<PidState>,
    cruise: Vec<f64>,
}

impl Environment {
    pub fn new(world: &WorldState) -> Self {
        Environment {
            pids: vec![PidState::default(); world.others.len()],
            cruise: world.others.iter().map(|a| a.state.speed()).collect(),
        }
    }

    pub fn step(&mut self, world: &mut WorldState, map: &VectorMap, cfg: &SimConfig) {
        let snapshot: Vec<(Vec2, Vec2, f64)> = std::iter::once((
            world.center.state.position(),
            Vec2::new(world.center.state.vx, world.center.state.vy),
            world.center.geometry.length / 2.0,
        ))
        .chain(world.others.iter().map(|a| {
            (
                a.state.position(),
                Vec2::new(a.state.vx, a.state.vy),
                a.geometry.length / 2.0,
            )
        }))
        .collect();

        for k in 0..world.others.len() {
            let actor = world.others[k].clone();
            let neighbors: Vec<(Vec2, Vec2, f64)> = snapshot
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k + 1)
                .map(|(_, n)| *n)
                .collect();
            let [gap, _closing] =
                agents::leading_gap_features(&actor.state, &actor.geometry, &neighbors);
            let env = &cfg.environment;
            let gap_scale =
                ((gap - env.gap_min) / (env.gap_follow - env.gap_min)).clamp(0.0, 1.0);
            let target_speed = self.cruise[k] * gap_scale;

            let next = match map.nearest_reference_line(actor.state.position()) {
                Some((idx, proj)) if proj.distance <= 10.0 => {
                    let line = &map.reference_lines[idx];
                    let points: Vec<AgentState> = (0..cfg.pid.lookahead + 2)
                        .map(|i| {
                            let arc = proj.arc_length + i as f64 * target_speed.max(0.5) * cfg.dt;
                            let (base, tangent) = crate::geom::point_at_arc_length(line, arc);
                            AgentState::from_pose(
                                base.x,
                                base.y,
                                tangent.y.atan2(tangent.x),
                                target_speed,
                            )
                        })
                        .collect();
                    let target = Trajectory::new(points, cfg.dt);
                    let (control, next_pid) =
                        crate::dynamics::pid_control(&actor.state, &target, &self.pids[k], cfg);
                    self.pids[k] = next_pid;
                    world.others[k].last_control = control;
                    bicycle_step(&actor.state, control, actor.geometry.wheelbase, cfg.dt, cfg.v_max)
                }
                _ => bicycle_step(
                    &actor.state,
                    actor.last_control,
                    actor.geometry.wheelbase,
                    cfg.dt,
                    cfg.v_max,
                ),
            };
            world.others[k].state = next;
            world.histories[k].push(next);
        }
    }
}

/// Real-time closed loop: the center executes the highest-score candidate
/// each step while other agents follow the lane-following environment.
/// Returns the realized episode `x_0 .. x_T` in real time.
pub fn run_real_episode(
    scenario: &Scenario,
    scoring: &ScoringParams,
    cfg: &SimConfig,
) -> Vec<WorldState> {
    let lattice = LatticePolicy::default();
    let mut world = WorldState::from_scenario(scenario, cfg);
    let mut env = Environment::new(&world);
    let mut pid = PidState::default();
    let mut episode = Vec::with_capacity(scenario.horizon + 1);
    episode.push(world.clone());
    for step in 0..scenario.horizon {
        match policy::generate_candidates(&world, &scenario.map, &lattice, scoring, cfg, None) {
            Ok(cands) => {
                let executed = selection::select_max_likelihood(&cands);
                let target = cands.trajectory(executed.0, executed.1);
                let (next, next_pid) = propagate(
                    &world.center.state,
                    target,
                    &pid,
                    world.center.geometry.wheelbase,
                    cfg,
                );
                pid = next_pid;
                world.center.state = next;
            }
            Err(_) => {
                // The center left the mapped area; coast along.
                world.center.state = bicycle_step(
                    &world.center.state,
                    ControlInput::zero(),
                    world.center.geometry.wheelbase,
                    cfg.dt,
                    cfg.v_max,
                );
            }
        }
        env.step(&mut world, &scenario.map, cfg);
        world.step = step + 1;
        episode.push(world.clone());
    }
    episode
}
