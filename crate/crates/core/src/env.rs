//! Continuous-pose agent in a discrete occupancy world: the discrete
//! action set, raycast depth and egocentric patch sensors, the shaped
//! reward, and the episode lifecycle.
//!
//! Headings are quantized to the 36-state 10-degree cycle by
//! construction: all rotations are exact members of that cycle, so
//! TurnLeft followed by TurnRight restores the pose bit-for-bit.

use crate::grid::OccupancyGrid;
use std::f64::consts::PI;
use thiserror::Error;

/// Forward translation per step, meters.
pub const FORWARD_STEP_M: f64 = 0.25;
/// Rotation per turn action, radians (10 degrees).
pub const TURN_STEP_RAD: f64 = PI / 18.0;
/// Number of distinct headings reachable by turning.
pub const HEADING_STATES: usize = 36;
/// Radius around a goal that counts as reaching it, meters.
pub const SUCCESS_RADIUS_M: f64 = 0.2;
/// Terminal bonus of the shaped reward.
pub const REWARD_GOAL_BONUS: f64 = 10.0;
/// Per-step slack penalty of the shaped reward.
pub const REWARD_SLACK: f64 = -0.01;
/// Default episode step budget.
pub const DEFAULT_MAX_STEPS: usize = 500;
/// Minimum start-to-goal geodesic distance for a valid episode, meters.
pub const MIN_GEODESIC_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid episode spec: {0}")]
    InvalidSpec(String),
}

/// The discrete action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const COUNT: usize = 3;

    pub fn id(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::TurnLeft => 1,
            Action::TurnRight => 2,
        }
    }

    pub fn from_id(id: usize) -> Option<Action> {
        match id {
            0 => Some(Action::Forward),
            1 => Some(Action::TurnLeft),
            2 => Some(Action::TurnRight),
            _ => None,
        }
    }
}

/// Wraps an angle into [0, 2*pi).
pub fn wrap_to_2pi(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi;
    if r < 0.0 {
        r += two_pi;
    }
    if r >= two_pi {
        r = 0.0;
    }
    r
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_to_pi(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi;
    if r > PI {
        r -= two_pi;
    } else if r <= -PI {
        r += two_pi;
    }
    r
}

/// Continuous agent pose. `heading` is radians in [0, 2*pi), 0 along +x,
/// counter-clockwise positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_to_2pi(heading),
        }
    }

    /// Pose at heading-cycle index `k` (k * 10 degrees).
    pub fn at_heading_step(x: f64, y: f64, k: usize) -> Self {
        Self {
            x,
            y,
            heading: (k % HEADING_STATES) as f64 * TURN_STEP_RAD,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Index of the nearest heading in the 36-state cycle.
    pub fn heading_step(&self) -> usize {
        ((self.heading / TURN_STEP_RAD).round() as i64).rem_euclid(HEADING_STATES as i64) as usize
    }

    /// Rotates by whole 10-degree steps. The result is the exact cycle
    /// member, so opposite turns cancel bit-for-bit.
    pub fn turned(&self, steps: i64) -> Pose {
        let k = (self.heading_step() as i64 + steps).rem_euclid(HEADING_STATES as i64);
        Pose {
            x: self.x,
            y: self.y,
            heading: k as f64 * TURN_STEP_RAD,
        }
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        (self.x - p.0).hypot(self.y - p.1)
    }
}

/// Sensor geometry for the depth scan and the egocentric patch.
#[derive(Debug, Clone)]
pub struct SensorConfig {
    /// Number of depth rays.
    pub rays: usize,
    /// Field of view of the scan, radians, centered on the heading.
    pub fov: f64,
    /// Depth cap, meters.
    pub max_range: f64,
    /// Patch side length, cells.
    pub patch_size: usize,
    /// Patch sampling pitch, meters per cell.
    pub patch_cell: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: 64,
            fov: PI / 2.0,
            max_range: 5.0,
            patch_size: 16,
            patch_cell: 0.1,
        }
    }
}

/// One sensor reading: depth scan, egocentric occupancy patch, pointgoal
/// (distance, relative bearing), and the global heading.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth_scan: Vec<f64>,
    pub patch: Vec<f64>,
    pub pointgoal: (f64, f64),
    pub heading: f64,
}

/// Applies one action. Forward translates 0.25 m along the heading unless
/// the swept segment crosses a blocked cell, in which case the pose is
/// unchanged. Turns rotate by exactly 10 degrees and never translate.
pub fn step(pose: &Pose, action: Action, grid: &OccupancyGrid) -> Pose {
    match action {
        Action::TurnLeft => pose.turned(1),
        Action::TurnRight => pose.turned(-1),
        Action::Forward => {
            let dir = (pose.heading.cos(), pose.heading.sin());
            let target = (
                pose.x + FORWARD_STEP_M * dir.0,
                pose.y + FORWARD_STEP_M * dir.1,
            );
            if grid.segment_blocked((pose.x, pose.y), target) {
                *pose
            } else {
                Pose {
                    x: target.0,
                    y: target.1,
                    heading: pose.heading,
                }
            }
        }
    }
}

/// Senses the world from a pose. Pure: identical inputs give identical
/// outputs.
pub fn observe(
    pose: &Pose,
    goal: (f64, f64),
    grid: &OccupancyGrid,
    sensors: &SensorConfig,
) -> Observation {
    let mut depth_scan = Vec::with_capacity(sensors.rays);
    let start = pose.heading - sensors.fov / 2.0;
    for i in 0..sensors.rays {
        let ang = start + (i as f64 + 0.5) * sensors.fov / sensors.rays as f64;
        let dir = (ang.cos(), ang.sin());
        let t = grid
            .raycast_occupied((pose.x, pose.y), dir, sensors.max_range)
            .unwrap_or(sensors.max_range);
        depth_scan.push(t.min(sensors.max_range));
    }

    let p = sensors.patch_size;
    let half = (p as f64 - 1.0) / 2.0;
    let (ch, sh) = (pose.heading.cos(), pose.heading.sin());
    let mut patch = Vec::with_capacity(p * p);
    for r in 0..p {
        // Row 0 is the farthest-forward band; columns increase to the
        // agent's right.
        let fwd = (half - r as f64) * sensors.patch_cell;
        for c in 0..p {
            let side = (c as f64 - half) * sensors.patch_cell;
            let wx = pose.x + fwd * ch + side * sh;
            let wy = pose.y + fwd * sh - side * ch;
            patch.push(if grid.point_occupied(wx, wy) { 1.0 } else { 0.0 });
        }
    }

    let dx = goal.0 - pose.x;
    let dy = goal.1 - pose.y;
    let distance = dx.hypot(dy);
    let bearing = wrap_to_pi(dy.atan2(dx) - pose.heading);

    Observation {
        depth_scan,
        patch,
        pointgoal: (distance, bearing),
        heading: pose.heading,
    }
}

/// Shaped reward: progress along the geodesic plus a slack penalty, with
/// a terminal bonus when the goal is reached.
pub fn reward(d_prev: f64, d_curr: f64, goal_reached: bool) -> f64 {
    let base = d_prev - d_curr + REWARD_SLACK;
    if goal_reached {
        REWARD_GOAL_BONUS + base
    } else {
        base
    }
}

/// One navigation episode: start pose, goal point, step budget, and the
/// precomputed geodesic start-to-goal length.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub start: Pose,
    pub goal: (f64, f64),
    pub max_steps: usize,
    pub shortest_path_length: f64,
}

impl EpisodeSpec {
    pub fn new(start: Pose, goal: (f64, f64), shortest_path_length: f64) -> Self {
        Self {
            start,
            goal,
            max_steps: DEFAULT_MAX_STEPS,
            shortest_path_length,
        }
    }
}

/// Chooses the next action from an observation.
pub trait ActionSource {
    fn next_action(&mut self, obs: &Observation) -> Action;
}

impl<F: FnMut(&Observation) -> Action> ActionSource for F {
    fn next_action(&mut self, obs: &Observation) -> Action {
        self(obs)
    }
}

/// Supplies the active navigation target for an episode. Plain point-goal
/// navigation uses a single target; waypoint curricula advance through a
/// sub-goal sequence as the agent gets within the success radius.
pub trait SubGoalSource {
    /// Current target, advancing past any waypoints within the success
    /// radius of `pose` (never past the last).
    fn current_target(&mut self, pose: &Pose) -> (f64, f64);
    /// The episode's final goal (the last waypoint).
    fn final_goal(&self) -> (f64, f64);
    /// Geodesic distance from `pose` to the active target.
    fn geodesic_to_target(&self, pose: &Pose) -> f64;
    /// Index of the active waypoint.
    fn segment_index(&self) -> usize;
    /// Total number of waypoints.
    fn segment_count(&self) -> usize;
}

/// One recorded transition.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub t: usize,
    /// Pose before the action.
    pub pose: Pose,
    pub action: Action,
    pub reward: f64,
    /// Geodesic distance to the active target before the action.
    pub d_prev: f64,
    /// Geodesic distance to the active target after the action.
    pub d_curr: f64,
    pub target: (f64, f64),
    pub segment: usize,
    /// Whether the terminal bonus was granted at this step.
    pub bonus: bool,
}

/// Per-waypoint accounting used for piecewise SPL during curricula.
#[derive(Debug, Clone)]
pub struct SegmentRecord {
    /// Geodesic distance to the waypoint when it became active; 0 for
    /// segments that were never started.
    pub shortest: f64,
    /// Translation accumulated while the waypoint was active.
    pub travelled: f64,
    pub reached: bool,
}

/// Full record of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub final_pose: Pose,
    pub success: bool,
    /// Sum of realized translations, meters.
    pub path_length: f64,
    pub segments: Vec<SegmentRecord>,
}

impl EpisodeTrace {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Mean success-weighted path length over the waypoint segments: the
    /// training-time metric for waypoint curricula. Single-segment
    /// episodes reduce to the plain metric.
    pub fn piecewise_spl(&self) -> f64 {
        let mut total = 0.0;
        for seg in &self.segments {
            if !seg.reached {
                continue;
            }
            if seg.shortest <= 1e-9 {
                total += 1.0;
            } else {
                total += seg.shortest / seg.shortest.max(seg.travelled);
            }
        }
        total / self.segments.len() as f64
    }
}

/// Runs one episode: observe, act, step, reward, until the agent is
/// within the success radius of the final goal (success; the terminal
/// Done is executed automatically) or the step budget runs out.
pub fn run_episode(
    spec: &EpisodeSpec,
    grid: &OccupancyGrid,
    sensors: &SensorConfig,
    policy: &mut dyn ActionSource,
    goals: &mut dyn SubGoalSource,
) -> Result<EpisodeTrace, EnvError> {
    if grid.point_blocked(spec.start.x, spec.start.y) {
        return Err(EnvError::InvalidSpec("start pose in blocked space".into()));
    }
    if grid.point_blocked(spec.goal.0, spec.goal.1) {
        return Err(EnvError::InvalidSpec("goal in blocked space".into()));
    }

    let mut pose = spec.start;
    let mut steps = Vec::new();
    let mut segments: Vec<SegmentRecord> = Vec::new();
    let mut path_length = 0.0;

    let mut success = pose.distance_to(goals.final_goal()) < SUCCESS_RADIUS_M;
    let mut target = goals.current_target(&pose);
    let mut segment = goals.segment_index();
    let mut d_prev = goals.geodesic_to_target(&pose);
    // Waypoints skipped by the initial multi-advance count as reached
    // with no travel.
    for _ in 0..segment {
        segments.push(SegmentRecord {
            shortest: 0.0,
            travelled: 0.0,
            reached: true,
        });
    }
    segments.push(SegmentRecord {
        shortest: d_prev,
        travelled: 0.0,
        reached: success,
    });

    let mut t = 0;
    while !success && t < spec.max_steps {
        let obs = observe(&pose, target, grid, sensors);
        let action = policy.next_action(&obs);
        let next = step(&pose, action, grid);
        let moved = next.distance_to((pose.x, pose.y));
        path_length += moved;
        segments.last_mut().expect("segment open").travelled += moved;

        let d_curr = goals.geodesic_to_target(&next);
        let reached_target = next.distance_to(target) < SUCCESS_RADIUS_M;
        let r = reward(d_prev, d_curr, reached_target);
        steps.push(TraceStep {
            t,
            pose,
            action,
            reward: r,
            d_prev,
            d_curr,
            target,
            segment,
            bonus: reached_target,
        });
        pose = next;
        t += 1;

        success = pose.distance_to(goals.final_goal()) < SUCCESS_RADIUS_M;
        if success {
            segments.last_mut().expect("segment open").reached = true;
            break;
        }

        let new_target = goals.current_target(&pose);
        let new_segment = goals.segment_index();
        if new_segment != segment {
            segments.last_mut().expect("segment open").reached = true;
            for _ in segment + 1..new_segment {
                segments.push(SegmentRecord {
                    shortest: 0.0,
                    travelled: 0.0,
                    reached: true,
                });
            }
            target = new_target;
            segment = new_segment;
            // Re-seed the shaping baseline from the new waypoint's
            // distance field so the switch itself is reward-neutral.
            d_prev = goals.geodesic_to_target(&pose);
            segments.push(SegmentRecord {
                shortest: d_prev,
                travelled: 0.0,
                reached: false,
            });
        } else {
            d_prev = d_curr;
        }
    }

    // Waypoints never started count as unreached segments.
    for _ in segments.len()..goals.segment_count() {
        segments.push(SegmentRecord {
            shortest: 0.0,
            travelled: 0.0,
            reached: false,
        });
    }

    Ok(EpisodeTrace {
        steps,
        final_pose: pose,
        success,
        path_length,
        segments,
    })
}

/// Formats one trace as line-delimited records, one per step, fields
/// `episode_id t x y heading action reward d_t`.
pub fn trace_to_records(episode_id: usize, trace: &EpisodeTrace) -> String {
    let mut out = String::new();
    for s in &trace.steps {
        out.push_str(&format!(
            "{} {} {:?} {:?} {:?} {} {:?} {:?}\n",
            episode_id, s.t, s.pose.x, s.pose.y, s.pose.heading, s.action.id(), s.reward, s.d_prev
        ));
    }
    out
}
