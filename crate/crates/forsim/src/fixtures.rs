//! Scenario builders used by the test suites and the paradigm-comparison
//! examples, plus a synthetic corpus for predictor training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::PredictionSample;
use crate::geom::Vec2;
use crate::policy::ScoringParams;
use crate::rollout::{Environment, WorldState};
use crate::world::{
    AgentState, Polyline, Scenario, ScenarioAgent, SimConfig, VectorMap, VehicleGeometry,
};

fn line(y: f64, x0: f64, x1: f64) -> Polyline {
    vec![Vec2::new(x0, y), Vec2::new(x1, y)]
}

fn band(x0: f64, x1: f64, y0: f64, y1: f64) -> Polyline {
    vec![
        Vec2::new(x0, y0),
        Vec2::new(x1, y0),
        Vec2::new(x1, y1),
        Vec2::new(x0, y1),
    ]
}

fn vehicle(x: f64, y: f64, heading: f64, speed: f64) -> ScenarioAgent {
    ScenarioAgent {
        state: AgentState::from_pose(x, y, heading, speed),
        geometry: VehicleGeometry::default(),
    }
}

/// Single straight lane, no other agents.
pub fn straight_road(speed: f64) -> Scenario {
    Scenario {
        map: VectorMap {
            reference_lines: vec![line(0.0, -50.0, 600.0)],
            drivable_area: vec![band(-50.0, 600.0, -8.0, 8.0)],
            routes: vec![line(0.0, -50.0, 600.0)],
        },
        center_agent: vehicle(0.0, 0.0, 0.0, speed),
        other_agents: vec![],
        horizon: 40,
        dt: 0.1,
    }
}

/// Center agent 20 m behind a lead agent on the same lane.
pub fn lead_brake() -> Scenario {
    Scenario {
        map: VectorMap {
            reference_lines: vec![line(0.0, -50.0, 600.0)],
            drivable_area: vec![band(-50.0, 600.0, -8.0, 8.0)],
            routes: vec![line(0.0, -50.0, 600.0)],
        },
        center_agent: vehicle(0.0, 0.0, 0.0, 8.0),
        other_agents: vec![vehicle(20.0, 0.0, 0.0, 6.0)],
        horizon: 40,
        dt: 0.1,
    }
}

/// Three parallel lanes with the center agent slightly below the middle
/// lane, so the distance ordering of the lanes flips as a branch crosses
/// between lattice cells.
pub fn multimodal() -> Scenario {
    Scenario {
        map: VectorMap {
            reference_lines: vec![
                line(0.0, -50.0, 400.0),
                line(-3.5, -50.0, 400.0),
                line(3.5, -50.0, 400.0),
            ],
            drivable_area: vec![band(-50.0, 400.0, -10.0, 10.0)],
            routes: vec![line(0.0, -50.0, 400.0)],
        },
        center_agent: vehicle(0.0, -0.2, 0.0, 6.0),
        other_agents: vec![],
        horizon: 40,
        dt: 0.1,
    }
}

/// Scoring weights for the multimodal fixture: progress and terminal speed
/// dominate so the highest-score candidate is unambiguous at every state.
pub fn multimodal_scoring() -> ScoringParams {
    ScoringParams::from_vec(&[0.5, 0.0, -0.05, -4.0, 0.3]).unwrap()
}

/// Straight three-lane road with no traffic: one modality (the route lane's
/// fastest profile) strictly dominates the reward.
pub fn bandit() -> Scenario {
    Scenario {
        map: VectorMap {
            reference_lines: vec![
                line(0.0, -50.0, 400.0),
                line(-3.5, -50.0, 400.0),
                line(3.5, -50.0, 400.0),
            ],
            drivable_area: vec![band(-50.0, 400.0, -10.0, 10.0)],
            routes: vec![line(0.0, -50.0, 400.0)],
        },
        center_agent: vehicle(0.0, -0.2, 0.0, 5.0),
        other_agents: vec![],
        horizon: 20,
        dt: 0.1,
    }
}

/// Training configuration sized for the bandit fixture.
pub fn bandit_config() -> SimConfig {
    SimConfig {
        horizon: 20,
        t_f: 10,
        iterations: 20,
        inner_epochs: 2,
        minibatch: 32,
        buffer_capacity: 512,
        policy_lr: 0.05,
        ..SimConfig::default()
    }
}

/// One scenario of the curved-road suite: a constant-curvature lane with one
/// lane-following agent ahead of the center. Radii and speeds vary with `k`.
pub fn curved_road(k: usize) -> Scenario {
    let radius = 20.0 + 2.0 * k as f64;
    let speed = 7.0 + 0.2 * (k % 5) as f64;
    let half_width = 2.5;
    // Arc around (0, radius), starting at the origin heading +x.
    let arc_len = 140.0_f64.min(radius * std::f64::consts::PI * 0.9);
    let steps = 96;
    let polar = |r: f64, s: f64| {
        let phi = -std::f64::consts::FRAC_PI_2 + s / radius;
        Vec2::new(r * phi.cos(), radius + r * phi.sin())
    };
    let lane: Polyline = (0..=steps)
        .map(|i| polar(radius, arc_len * i as f64 / steps as f64))
        .collect();
    let mut ring: Polyline = (0..=steps)
        .map(|i| polar(radius + half_width, arc_len * i as f64 / steps as f64))
        .collect();
    ring.extend((0..=steps).rev().map(|i| polar(radius - half_width, arc_len * i as f64 / steps as f64)));

    let start = lane[0];
    let tangent0 = (lane[1] - lane[0]).normalized();
    let heading0 = tangent0.y.atan2(tangent0.x);
    let ahead = crate::geom::point_at_arc_length(&lane, 14.0);
    let heading_ahead = ahead.1.y.atan2(ahead.1.x);

    Scenario {
        map: VectorMap {
            reference_lines: vec![lane.clone()],
            drivable_area: vec![ring],
            routes: vec![lane],
        },
        center_agent: vehicle(start.x, start.y, heading0, speed),
        other_agents: vec![vehicle(ahead.0.x, ahead.0.y, heading_ahead, speed)],
        horizon: 40,
        dt: 0.1,
    }
}

/// The ten-scenario curved-road suite.
pub fn curved_suite() -> Vec<Scenario> {
    (0..10).map(curved_road).collect()
}

// ---------------------------------------------------------------------------
// Synthetic predictor corpus
// ---------------------------------------------------------------------------

fn corpus_sample(
    scenario: &Scenario,
    agent: usize,
    cfg: &SimConfig,
) -> Option<PredictionSample> {
    let mut world = WorldState::from_scenario(scenario, cfg);
    let mut env = Environment::new(&world);
    // Warm the histories with realized environment motion.
    for _ in 0..cfg.history_len {
        env.step(&mut world, &scenario.map, cfg);
    }
    let features = crate::agents::predictor_features(&world, agent, cfg);
    let start = world.others[agent].state;
    let wheelbase = world.others[agent].geometry.wheelbase;
    let mut targets = Vec::with_capacity(cfg.t_f);
    for _ in 0..cfg.t_f {
        env.step(&mut world, &scenario.map, cfg);
        targets.push(world.others[agent].state);
    }
    Some(PredictionSample {
        features,
        start,
        wheelbase,
        targets,
    })
}

/// Deterministic corpus of environment-realized motion: lone cruising,
/// sustained arcs of mixed curvature, and straight-lane car-following at
/// varied gaps. Trains the predictor on the same behavior the real-time
/// environment produces.
pub fn synthetic_motion_corpus(cfg: &SimConfig, seed: u64) -> Vec<PredictionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Lone cruisers on a straight lane.
    for _ in 0..8 {
        let v = rng.gen_range(2.0..10.0);
        let mut scenario = straight_road(0.0);
        scenario.other_agents = vec![vehicle(0.0, 0.0, 0.0, v)];
        scenario.center_agent = vehicle(0.0, -40.0, 0.0, 0.0);
        scenario.map.drivable_area = vec![band(-50.0, 600.0, -45.0, 8.0)];
        scenario.map.routes = vec![line(0.0, -50.0, 600.0)];
        if let Some(s) = corpus_sample(&scenario, 0, cfg) {
            out.push(s);
        }
    }

    // Sustained arcs, both turn directions.
    for i in 0..24 {
        let radius: f64 = rng.gen_range(15.0..60.0);
        let v = rng.gen_range(4.0..10.0);
        let left = i % 2 == 0;
        let steps = 96;
        let arc_len = (radius * std::f64::consts::PI * 0.9).min(200.0);
        let lane: Polyline = (0..=steps)
            .map(|j| {
                let s = arc_len * j as f64 / steps as f64;
                let phi = s / radius;
                if left {
                    Vec2::new(radius * phi.sin(), radius * (1.0 - phi.cos()))
                } else {
                    Vec2::new(radius * phi.sin(), -radius * (1.0 - phi.cos()))
                }
            })
            .collect();
        let tangent = (lane[1] - lane[0]).normalized();
        let heading = tangent.y.atan2(tangent.x);
        let scenario = Scenario {
            map: VectorMap {
                reference_lines: vec![lane.clone()],
                drivable_area: vec![band(-250.0, 250.0, -250.0, 250.0)],
                routes: vec![lane.clone()],
            },
            center_agent: vehicle(lane[0].x, lane[0].y - 100.0 * if left { 1.0 } else { -1.0 }, 0.0, 0.0),
            other_agents: vec![vehicle(lane[0].x, lane[0].y, heading, v)],
            horizon: cfg.horizon,
            dt: cfg.dt,
        };
        if let Some(s) = corpus_sample(&scenario, 0, cfg) {
            out.push(s);
        }
    }

    // Car-following on a straight lane: follower behind a slower or stopped
    // leader at varied gaps.
    for _ in 0..24 {
        let v = rng.gen_range(4.0..10.0);
        let v_lead = rng.gen_range(0.0..v);
        let gap = rng.gen_range(6.0..30.0);
        let mut scenario = straight_road(0.0);
        scenario.center_agent = vehicle(0.0, -40.0, 0.0, 0.0);
        scenario.map.drivable_area = vec![band(-50.0, 600.0, -45.0, 8.0)];
        scenario.other_agents = vec![
            vehicle(0.0, 0.0, 0.0, v),
            vehicle(gap, 0.0, 0.0, v_lead),
        ];
        if let Some(s) = corpus_sample(&scenario, 0, cfg) {
            out.push(s);
        }
    }

    out
}

/// Write the shipped fixture files (scenario JSONs) into `dir`.
pub fn write_shipped_fixtures(dir: &std::path::Path) -> std::io::Result<()> {
    let write = |name: &str, s: &Scenario| {
        crate::world::save_scenario(s, &dir.join(name))
            .map_err(|e| std::io::Error::other(e.to_string()))
    };
    write("lead-brake.json", &lead_brake())?;
    write("multimodal.json", &multimodal())?;
    write("bandit.json", &bandit())?;
    for (k, s) in curved_suite().iter().enumerate() {
        write(&format!("curved-{k:02}.json"), s)?;
    }
    Ok(())
}
