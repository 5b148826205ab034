//! Kinematic, interaction, map, and comfort metrics, plus the oriented
//! bounding-box collision geometry underpinning them.
//!
//! Report columns follow the fixed order S-SW, S-WD, A-SW, CPK, RP, 2D-TTC,
//! ACT, ORR, UC.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::geom::{self, Vec2};
use crate::rollout::WorldState;
use crate::world::{AgentState, SimConfig, VectorMap, VehicleGeometry};

/// Conflicts farther out than this are reported as infinity.
const TTC_HORIZON: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("sample has zero variance")]
    DegenerateSample,
    #[error("shapiro-wilk needs 3..=5000 samples, got {0}")]
    InvalidSampleSize(usize),
    #[error("episode too short: need at least 3 states, got {0}")]
    EpisodeTooShort(usize),
}

/// Oriented rectangle: center, half extents, and heading pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbShape {
    pub center: Vec2,
    pub half_length: f64,
    pub half_width: f64,
    pub heading: (f64, f64),
}

impl ObbShape {
    pub fn axes(&self) -> (Vec2, Vec2) {
        let long = Vec2::new(self.heading.0, self.heading.1);
        (long, long.left_normal())
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (ax, ay) = self.axes();
        let dx = ax.scaled(self.half_length);
        let dy = ay.scaled(self.half_width);
        [
            self.center + dx + dy,
            self.center + dx - dy,
            self.center - dx - dy,
            self.center - dx + dy,
        ]
    }

    /// Projection radius onto a unit axis.
    fn radius(&self, axis: Vec2) -> f64 {
        let (ax, ay) = self.axes();
        self.half_length * ax.dot(axis).abs() + self.half_width * ay.dot(axis).abs()
    }
}

/// Footprint box of an agent at its current pose.
pub fn agent_obb(state: &AgentState, geometry: &VehicleGeometry) -> ObbShape {
    ObbShape {
        center: state.position(),
        half_length: geometry.length / 2.0,
        half_width: geometry.width / 2.0,
        heading: (state.cos_h, state.sin_h),
    }
}

/// Separating-axis overlap test over the four face normals; exact for
/// rectangles. Touching boxes count as overlapping.
pub fn obb_overlap(a: &ObbShape, b: &ObbShape) -> bool {
    let (ax, ay) = a.axes();
    let (bx, by) = b.axes();
    let d = b.center - a.center;
    for axis in [ax, ay, bx, by] {
        if d.dot(axis).abs() > a.radius(axis) + b.radius(axis) {
            return false;
        }
    }
    true
}

/// Minimum distance between box boundaries; zero when they overlap.
pub fn obb_boundary_distance(a: &ObbShape, b: &ObbShape) -> f64 {
    if obb_overlap(a, b) {
        return 0.0;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            best = best.min(geom::segment_segment_distance(
                ca[i],
                ca[(i + 1) % 4],
                cb[j],
                cb[(j + 1) % 4],
            ));
        }
    }
    best
}

/// Full-box drivable-area containment, checked at the four corners and the
/// center.
pub fn obb_inside_drivable(obb: &ObbShape, map: &VectorMap) -> bool {
    if !map.is_drivable(obb.center) {
        return false;
    }
    obb.corners().iter().all(|c| map.is_drivable(*c))
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (Royston's approximation)
// ---------------------------------------------------------------------------

fn normal_quantile(p: f64) -> f64 {
    static STD_NORMAL: OnceLock<Normal> = OnceLock::new();
    STD_NORMAL
        .get_or_init(|| Normal::new(0.0, 1.0).expect("standard normal"))
        .inverse_cdf(p)
}

/// Shapiro-Wilk W statistic with Royston's coefficient approximation
/// (exact coefficients for n = 3). Valid for 3 <= n <= 5000 samples with
/// nonzero variance.
pub fn shapiro_wilk(samples: &[f64]) -> Result<f64, MetricsError> {
    let n = samples.len();
    if !(3..=5000).contains(&n) {
        return Err(MetricsError::InvalidSampleSize(n));
    }
    let mut x: Vec<f64> = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss <= 0.0 {
        return Err(MetricsError::DegenerateSample);
    }

    let mut a = vec![0.0; n];
    if n == 3 {
        let r = 0.5f64.sqrt();
        a[0] = -r;
        a[2] = r;
    } else {
        let m: Vec<f64> = (1..=n)
            .map(|i| normal_quantile((i as f64 - 0.375) / (n as f64 + 0.25)))
            .collect();
        let ssq: f64 = m.iter().map(|v| v * v).sum();
        let rsn = 1.0 / (n as f64).sqrt();
        let poly = |c: &[f64], x: f64| c.iter().fold(0.0, |acc, ci| acc * x + ci);
        // Royston 1995 polynomial corrections for the extreme coefficients.
        let an = poly(&[-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0], rsn)
            + m[n - 1] / ssq.sqrt();
        if n > 5 {
            let an1 = poly(&[-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0], rsn)
                + m[n - 2] / ssq.sqrt();
            let fac = ((ssq - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2])
                / (1.0 - 2.0 * an * an - 2.0 * an1 * an1))
                .sqrt();
            for i in 2..n - 2 {
                a[i] = m[i] / fac;
            }
            a[n - 1] = an;
            a[n - 2] = an1;
            a[0] = -an;
            a[1] = -an1;
        } else {
            let fac = ((ssq - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * an * an)).sqrt();
            for i in 1..n - 1 {
                a[i] = m[i] / fac;
            }
            a[n - 1] = an;
            a[0] = -an;
        }
    }

    let b: f64 = a.iter().zip(x.iter()).map(|(ai, xi)| ai * xi).sum();
    Ok((b * b / ss).min(1.0))
}

// ---------------------------------------------------------------------------
// 1-D Wasserstein distance
// ---------------------------------------------------------------------------

/// W1 between empirical distributions via quantile-function integration.
/// Equal sizes reduce to the mean absolute difference of the sorted samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "samples must be non-empty");
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut q_prev = 0.0;
    let mut total = 0.0;
    while i < xs.len() && j < ys.len() {
        let qa = (i + 1) as f64 / n;
        let qb = (j + 1) as f64 / m;
        let q = qa.min(qb);
        total += (q - q_prev) * (xs[i] - ys[j]).abs();
        q_prev = q;
        if qa <= q {
            i += 1;
        }
        if qb <= q {
            j += 1;
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Time-to-collision and ACT
// ---------------------------------------------------------------------------

/// Earliest `t >= 0` at which the two boxes, each translated by its constant
/// velocity, first overlap; infinity when no overlap occurs within 20 s.
/// The sweep solves the per-axis overlap windows of the separating-axis test
/// in closed form, exact for non-rotating rectangles.
pub fn ttc_2d(a: &ObbShape, vel_a: Vec2, b: &ObbShape, vel_b: Vec2) -> f64 {
    let (ax, ay) = a.axes();
    let (bx, by) = b.axes();
    let d0 = b.center - a.center;
    let dv = vel_b - vel_a;
    let mut lo = 0.0f64;
    let mut hi = TTC_HORIZON;
    for axis in [ax, ay, bx, by] {
        let dist = d0.dot(axis);
        let rate = dv.dot(axis);
        let radius = a.radius(axis) + b.radius(axis);
        if rate.abs() < 1e-12 {
            if dist.abs() > radius {
                return f64::INFINITY;
            }
            continue;
        }
        let t1 = (-radius - dist) / rate;
        let t2 = (radius - dist) / rate;
        lo = lo.max(t1.min(t2));
        hi = hi.min(t1.max(t2));
        if lo > hi {
            return f64::INFINITY;
        }
    }
    if lo > TTC_HORIZON {
        f64::INFINITY
    } else {
        lo
    }
}

/// Anticipated collision time: minimum boundary distance divided by its
/// closing rate under the current velocities; infinity when the distance is
/// not decreasing. This closing-rate form approximates the cited definition.
pub fn act(a: &ObbShape, vel_a: Vec2, b: &ObbShape, vel_b: Vec2) -> f64 {
    let d0 = obb_boundary_distance(a, b);
    if d0 == 0.0 {
        return 0.0;
    }
    let h = 1e-3;
    let a_moved = ObbShape {
        center: a.center + vel_a.scaled(h),
        ..*a
    };
    let b_moved = ObbShape {
        center: b.center + vel_b.scaled(h),
        ..*b
    };
    let d1 = obb_boundary_distance(&a_moved, &b_moved);
    let rate = (d0 - d1) / h;
    if rate <= 1e-9 {
        f64::INFINITY
    } else {
        d0 / rate
    }
}

// ---------------------------------------------------------------------------
// Episode metrics
// ---------------------------------------------------------------------------

/// One row of the metric suite, in report-column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub s_sw: f64,
    pub s_wd: f64,
    pub a_sw: f64,
    pub cpk: f64,
    pub rp: f64,
    pub ttc_2d: f64,
    pub act: f64,
    pub orr: f64,
    pub uc: f64,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "s_sw,s_wd,a_sw,cpk,rp,ttc_2d,act,orr,uc"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.s_sw, self.s_wd, self.a_sw, self.cpk, self.rp, self.ttc_2d, self.act, self.orr, self.uc
        )
    }
}

fn reference_speed_fixture() -> &'static [f64] {
    static SAMPLE: OnceLock<Vec<f64>> = OnceLock::new();
    SAMPLE.get_or_init(|| {
        serde_json::from_str(include_str!("../fixtures/reference_speeds.json"))
            .expect("reference speed fixture parses")
    })
}

/// W statistic, treating zero-variance or too-short series as maximally
/// regular (W = 1) so reports never carry NaN.
fn sw_or_degenerate(samples: &[f64]) -> f64 {
    match shapiro_wilk(samples) {
        Ok(w) => w,
        Err(_) => 1.0,
    }
}

/// Collision, off-road, and comfort indicators of one transition, reused by
/// the reward model.
pub fn collision_indicator(world: &WorldState) -> bool {
    let center = agent_obb(&world.center.state, &world.center.geometry);
    world
        .others
        .iter()
        .any(|o| obb_overlap(&center, &agent_obb(&o.state, &o.geometry)))
}

pub fn offroad_indicator(world: &WorldState, map: &VectorMap) -> bool {
    !obb_inside_drivable(&agent_obb(&world.center.state, &world.center.geometry), map)
}

/// Metric suite over a completed episode of world states.
pub fn episode_metrics(
    episode: &[WorldState],
    map: &VectorMap,
    cfg: &SimConfig,
) -> Result<MetricReport, MetricsError> {
    let n = episode.len();
    if n < 3 {
        return Err(MetricsError::EpisodeTooShort(n));
    }
    let dt = cfg.dt;
    let speeds: Vec<f64> = episode.iter().map(|w| w.center.state.speed()).collect();
    // Acceleration by central differences of speed; endpoints excluded.
    let accels: Vec<f64> = (1..n - 1)
        .map(|t| (speeds[t + 1] - speeds[t - 1]) / (2.0 * dt))
        .collect();

    let s_sw = sw_or_degenerate(&speeds);
    let a_sw = sw_or_degenerate(&accels);
    let reference: &[f64] = match &cfg.reference_speeds {
        Some(r) => r,
        None => reference_speed_fixture(),
    };
    let s_wd = wasserstein_1d(&speeds, reference);

    let mut distance = 0.0;
    for w in episode.windows(2) {
        distance += w[0]
            .center
            .state
            .position()
            .dist(w[1].center.state.position());
    }

    // Collisions on rising edges: one overlap episode counts once.
    let mut collisions = 0usize;
    let mut prev_overlap = false;
    for w in episode {
        let overlap = collision_indicator(w);
        if overlap && !prev_overlap {
            collisions += 1;
        }
        prev_overlap = overlap;
    }
    let cpk = if collisions == 0 {
        0.0
    } else {
        collisions as f64 / (distance / 1000.0).max(1e-9)
    };

    let route = map.center_route();
    let rp = geom::project_to_polyline(route, episode[n - 1].center.state.position()).arc_length
        - geom::project_to_polyline(route, episode[0].center.state.position()).arc_length;

    let mut min_ttc = f64::INFINITY;
    let mut min_act = f64::INFINITY;
    for w in episode {
        let center_box = agent_obb(&w.center.state, &w.center.geometry);
        let center_vel = Vec2::new(w.center.state.vx, w.center.state.vy);
        for o in &w.others {
            let other_box = agent_obb(&o.state, &o.geometry);
            let other_vel = Vec2::new(o.state.vx, o.state.vy);
            min_ttc = min_ttc.min(ttc_2d(&center_box, center_vel, &other_box, other_vel));
            min_act = min_act.min(act(&center_box, center_vel, &other_box, other_vel));
        }
    }

    let offroad_steps = episode.iter().filter(|w| offroad_indicator(w, map)).count();
    let orr = 100.0 * offroad_steps as f64 / n as f64;

    let uncomfortable = accels
        .iter()
        .filter(|a| a.abs() > cfg.reward.comfort_accel_threshold)
        .count();
    let uc = 100.0 * uncomfortable as f64 / accels.len() as f64;

    Ok(MetricReport {
        s_sw,
        s_wd,
        a_sw,
        cpk,
        rp,
        ttc_2d: min_ttc,
        act: min_act,
        orr,
        uc,
    })
}

/// Fraction (percent) of (state, agent) samples off the drivable area,
/// counting the center and every other agent. Used for paradigm comparisons
/// where the propagated agents carry the signal.
pub fn offroad_rate_all_agents(episode: &[WorldState], map: &VectorMap) -> f64 {
    let mut off = 0usize;
    let mut total = 0usize;
    for w in episode {
        total += 1;
        if offroad_indicator(w, map) {
            off += 1;
        }
        for o in &w.others {
            total += 1;
            if !obb_inside_drivable(&agent_obb(&o.state, &o.geometry), map) {
                off += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * off as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxat(x: f64, y: f64, heading: f64, hl: f64, hw: f64) -> ObbShape {
        ObbShape {
            center: Vec2::new(x, y),
            half_length: hl,
            half_width: hw,
            heading: (heading.cos(), heading.sin()),
        }
    }

    #[test]
    fn identical_boxes_overlap() {
        let a = boxat(1.0, 2.0, 0.3, 2.0, 1.0);
        assert!(obb_overlap(&a, &a));
    }

    #[test]
    fn distant_boxes_do_not_overlap() {
        let a = boxat(0.0, 0.0, 0.0, 2.0, 1.0);
        let b = boxat(10.0, 0.0, 1.0, 2.0, 1.0);
        assert!(!obb_overlap(&a, &b));
    }

    #[test]
    fn overlap_agrees_with_sampling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut checked = 0;
        for _ in 0..1000 {
            let a = boxat(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.2..3.2),
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.3..1.5),
            );
            let b = boxat(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.2..3.2),
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.3..1.5),
            );
            // Oracle: dense sampling of box b's interior and boundary,
            // testing containment in a via its axis frame.
            let (ax, ay) = a.axes();
            let mut any_inside = false;
            let samples = 10;
            for i in 0..=samples {
                for j in 0..=samples {
                    let u = -1.0 + 2.0 * i as f64 / samples as f64;
                    let v = -1.0 + 2.0 * j as f64 / samples as f64;
                    let (bx, by) = b.axes();
                    let p =
                        b.center + bx.scaled(u * b.half_length) + by.scaled(v * b.half_width);
                    let rel = p - a.center;
                    if rel.dot(ax).abs() <= a.half_length && rel.dot(ay).abs() <= a.half_width {
                        any_inside = true;
                    }
                }
            }
            let sat = obb_overlap(&a, &b);
            // Sampling misses shallow corner overlaps; only check agreement
            // when the configuration is not marginal.
            let margin = obb_boundary_distance(&a, &b);
            if any_inside {
                assert!(sat, "sampling found overlap but SAT disagrees");
                checked += 1;
            } else if !sat || margin > 1e-6 {
                if sat {
                    // SAT says overlap but sampling missed it: must be a
                    // shallow overlap; verify by corner containment of a in b.
                    let (bx, by) = b.axes();
                    let shallow = a.corners().iter().any(|c| {
                        let rel = *c - b.center;
                        rel.dot(bx).abs() <= b.half_length + 1e-6
                            && rel.dot(by).abs() <= b.half_width + 1e-6
                    }) || b.corners().iter().any(|c| {
                        let rel = *c - a.center;
                        rel.dot(ax).abs() <= a.half_length + 1e-6
                            && rel.dot(ay).abs() <= a.half_width + 1e-6
                    });
                    assert!(shallow, "SAT overlap not confirmed by any sampling route");
                }
                checked += 1;
            }
        }
        assert!(checked > 900);
    }

    #[test]
    fn shapiro_wilk_three_point_exact() {
        let w = shapiro_wilk(&[-1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn shapiro_wilk_normal_draws_score_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let samples: Vec<f64> = (0..500)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let w = shapiro_wilk(&samples).unwrap();
        assert!(w > 0.99, "W = {w}");
    }

    #[test]
    fn shapiro_wilk_two_point_distribution_scores_low() {
        let samples: Vec<f64> = (0..500).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let w = shapiro_wilk(&samples).unwrap();
        assert!(w < 0.8, "W = {w}");
    }

    #[test]
    fn shapiro_wilk_scale_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..5.0)).collect();
        let w = shapiro_wilk(&samples).unwrap();
        let transformed: Vec<f64> = samples.iter().map(|x| 3.5 * x - 11.0).collect();
        let w2 = shapiro_wilk(&transformed).unwrap();
        assert_abs_diff_eq!(w, w2, epsilon = 1e-9);
    }

    #[test]
    fn shapiro_wilk_degenerate_and_size_errors() {
        assert_eq!(
            shapiro_wilk(&[2.0, 2.0, 2.0]).unwrap_err(),
            MetricsError::DegenerateSample
        );
        assert_eq!(
            shapiro_wilk(&[1.0, 2.0]).unwrap_err(),
            MetricsError::InvalidSampleSize(2)
        );
    }

    #[test]
    fn wasserstein_trivials() {
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), 0.0);
        assert_abs_diff_eq!(wasserstein_1d(&[0.0, 2.0], &[1.0, 3.0]), 1.0, epsilon = 1e-12);
        let a = [0.5, 1.5, 4.0, 2.0];
        let shifted: Vec<f64> = a.iter().map(|x| x + 2.25).collect();
        assert_abs_diff_eq!(wasserstein_1d(&a, &shifted), 2.25, epsilon = 1e-12);
    }

    #[test]
    fn wasserstein_unequal_sizes_matches_reference_value() {
        // Frozen against scipy.stats.wasserstein_distance([0, 1, 3], [5, 9]).
        let w = wasserstein_1d(&[0.0, 1.0, 3.0], &[5.0, 9.0]);
        assert_abs_diff_eq!(w, 5.666666666666667, epsilon = 1e-12);
    }

    #[test]
    fn ttc_head_on_closed_form() {
        // Bumper gap 20 m, closing speed 10 m/s.
        let a = boxat(0.0, 0.0, 0.0, 2.0, 1.0);
        let b = boxat(24.0, 0.0, 0.0, 2.0, 1.0);
        let t = ttc_2d(&a, Vec2::new(10.0, 0.0), &b, Vec2::ZERO);
        assert_abs_diff_eq!(t, 2.0, epsilon = 1e-3);
    }

    #[test]
    fn ttc_parallel_lanes_no_conflict() {
        let a = boxat(0.0, 0.0, 0.0, 2.0, 1.0);
        let b = boxat(0.0, 5.0, 0.0, 2.0, 1.0);
        let t = ttc_2d(&a, Vec2::new(10.0, 0.0), &b, Vec2::new(10.0, 0.0));
        assert_eq!(t, f64::INFINITY);
    }

    #[test]
    fn ttc_overlapping_is_zero() {
        let a = boxat(0.0, 0.0, 0.0, 2.0, 1.0);
        let b = boxat(1.0, 0.0, 0.0, 2.0, 1.0);
        assert_eq!(ttc_2d(&a, Vec2::ZERO, &b, Vec2::ZERO), 0.0);
    }

    #[test]
    fn ttc_monotone_in_gap() {
        let a = boxat(0.0, 0.0, 0.0, 2.0, 1.0);
        let mut prev = 0.0;
        for gap in [5.0, 10.0, 20.0, 40.0, 80.0] {
            let b = boxat(gap + 4.0, 0.0, 0.0, 2.0, 1.0);
            let t = ttc_2d(&a, Vec2::new(10.0, 0.0), &b, Vec2::ZERO);
            if t.is_finite() {
                assert!(t >= prev);
                prev = t;
            }
        }
    }

    #[test]
    fn act_examples() {
        let a = boxat(0.0, 0.0, 0.0, 2.0, 1.0);
        let b = boxat(24.0, 0.0, 0.0, 2.0, 1.0);
        assert_abs_diff_eq!(act(&a, Vec2::new(10.0, 0.0), &b, Vec2::ZERO), 2.0, epsilon = 1e-2);
        assert_eq!(act(&a, Vec2::new(-5.0, 0.0), &b, Vec2::ZERO), f64::INFINITY);
        assert_eq!(act(&a, Vec2::ZERO, &b, Vec2::ZERO), f64::INFINITY);
    }

    fn clean_episode(n: usize, speed: f64) -> (Vec<WorldState>, VectorMap, SimConfig) {
        let scenario = crate::fixtures::straight_road(speed);
        let cfg = SimConfig {
            horizon: scenario.horizon,
            ..SimConfig::default()
        };
        let base = WorldState::from_scenario(&scenario, &cfg);
        let episode: Vec<WorldState> = (0..n)
            .map(|t| {
                let mut w = base.clone();
                w.step = t;
                w.center.state = AgentState::from_pose(speed * cfg.dt * t as f64, 0.0, 0.0, speed);
                w
            })
            .collect();
        (episode, scenario.map, cfg)
    }

    #[test]
    fn clean_episode_metrics() {
        let (episode, map, cfg) = clean_episode(30, 5.0);
        let report = episode_metrics(&episode, &map, &cfg).unwrap();
        assert_eq!(report.cpk, 0.0);
        assert_eq!(report.orr, 0.0);
        assert_eq!(report.uc, 0.0);
        assert_abs_diff_eq!(report.rp, 5.0 * 0.1 * 29.0, epsilon = 1e-6);
        assert_eq!(report.ttc_2d, f64::INFINITY);
        assert_eq!(report.s_sw, 1.0); // constant speed treated as degenerate
    }

    #[test]
    fn cpk_arithmetic() {
        // Two collision events over 500 m of travel -> 4 per km. 100 steps
        // of 5 m each at dt = 0.1 s means 50 m/s.
        let (mut episode, map, cfg) = clean_episode(101, 50.0);
        for w in episode.iter_mut() {
            let t = w.step;
            w.center.state = AgentState::from_pose(5.0 * t as f64, 0.0, 0.0, 50.0);
        }
        // Overlapping other agent at steps 10-12 (one event) and 50 (another).
        let intruder = crate::rollout::ActorState {
            state: AgentState::from_pose(0.0, 0.0, 0.0, 0.0),
            geometry: Default::default(),
            last_control: crate::dynamics::ControlInput::zero(),
        };
        for t in [10usize, 11, 12, 50] {
            let mut other = intruder.clone();
            other.state = episode[t].center.state;
            episode[t].others.push(other);
        }
        let report = episode_metrics(&episode, &map, &cfg).unwrap();
        assert_abs_diff_eq!(report.cpk, 2.0 / 0.5, epsilon = 1e-9);
    }

    #[test]
    fn orr_arithmetic() {
        let (mut episode, map, cfg) = clean_episode(30, 5.0);
        for t in 0..3 {
            episode[t].center.state = AgentState::from_pose(0.0, 500.0, 0.0, 5.0);
        }
        let report = episode_metrics(&episode, &map, &cfg).unwrap();
        assert_abs_diff_eq!(report.orr, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn episode_too_short() {
        let (episode, map, cfg) = clean_episode(2, 5.0);
        assert_eq!(
            episode_metrics(&episode, &map, &cfg).unwrap_err(),
            MetricsError::EpisodeTooShort(2)
        );
    }

    #[test]
    fn metrics_rigid_transform_invariance() {
        let (episode, map, cfg) = clean_episode(40, 6.0);
        // Add a moving other agent so interaction metrics are finite.
        let mut episode = episode;
        for (t, w) in episode.iter_mut().enumerate() {
            w.others.push(crate::rollout::ActorState {
                state: AgentState::from_pose(30.0 + 0.2 * t as f64, 1.0, 0.0, 2.0),
                geometry: Default::default(),
                last_control: crate::dynamics::ControlInput::zero(),
            });
            let v = 6.0 + (t as f64 * 0.37).sin();
            w.center.state = AgentState::from_pose(w.center.state.x, 0.0, 0.0, v);
        }
        let report = episode_metrics(&episode, &map, &cfg).unwrap();

        let angle: f64 = 0.83;
        let (sin_a, cos_a) = angle.sin_cos();
        let shift = Vec2::new(-40.0, 17.0);
        let xf_point = |p: Vec2| Vec2::new(cos_a * p.x - sin_a * p.y, sin_a * p.x + cos_a * p.y) + shift;
        let xf_state = |s: &AgentState| {
            let p = xf_point(s.position());
            AgentState::from_pose(p.x, p.y, s.heading_angle() + angle, s.speed())
        };
        let episode2: Vec<WorldState> = episode
            .iter()
            .map(|w| {
                let mut w2 = w.clone();
                w2.center.state = xf_state(&w.center.state);
                for o in w2.others.iter_mut() {
                    o.state = xf_state(&o.state);
                }
                w2
            })
            .collect();
        let map2 = VectorMap {
            reference_lines: map
                .reference_lines
                .iter()
                .map(|l| l.iter().map(|p| xf_point(*p)).collect())
                .collect(),
            drivable_area: map
                .drivable_area
                .iter()
                .map(|l| l.iter().map(|p| xf_point(*p)).collect())
                .collect(),
            routes: map
                .routes
                .iter()
                .map(|l| l.iter().map(|p| xf_point(*p)).collect())
                .collect(),
        };
        let report2 = episode_metrics(&episode2, &map2, &cfg).unwrap();
        assert_abs_diff_eq!(report.s_sw, report2.s_sw, epsilon = 1e-9);
        assert_abs_diff_eq!(report.s_wd, report2.s_wd, epsilon = 1e-9);
        assert_abs_diff_eq!(report.a_sw, report2.a_sw, epsilon = 1e-9);
        assert_abs_diff_eq!(report.cpk, report2.cpk, epsilon = 1e-9);
        assert_abs_diff_eq!(report.rp, report2.rp, epsilon = 1e-6);
        assert_abs_diff_eq!(report.ttc_2d, report2.ttc_2d, epsilon = 1e-6);
        assert_abs_diff_eq!(report.act, report2.act, epsilon = 1e-6);
        assert_abs_diff_eq!(report.orr, report2.orr, epsilon = 1e-9);
        assert_abs_diff_eq!(report.uc, report2.uc, epsilon = 1e-9);
    }
}
