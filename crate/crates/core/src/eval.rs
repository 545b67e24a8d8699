//! Navigation metrics and the test harness: success-weighted path length,
//! exponentially averaged training curves, seeded episode suites shared
//! across agents, and greedy-mode policy evaluation.

use crate::agent::{ActMode, ActorState, NetActor, PolicyNetwork};
use crate::curriculum::{CurriculumError, EpisodeGoals, EpisodeSampler};
use crate::env::{run_episode, EnvError, EpisodeSpec, EpisodeTrace, Pose, SensorConfig};
use crate::grid::OccupancyGrid;
use crate::perception::{EncodeMode, TwinVae};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shortest path length must be positive, got {0}")]
    NonPositiveShortestPath(f64),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("suite was generated for map {suite}, not {grid}")]
    SuiteMapMismatch { suite: String, grid: String },
    #[error("malformed suite or report text: {0}")]
    Malformed(String),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Success-weighted path length: `success * l / max(l, p)`.
pub fn spl(success: bool, shortest: f64, path_length: f64) -> Result<f64, EvalError> {
    if !(shortest > 0.0) {
        return Err(EvalError::NonPositiveShortestPath(shortest));
    }
    if !success {
        return Ok(0.0);
    }
    Ok(shortest / shortest.max(path_length))
}

/// Exponentially weighted moving average: `y_0 = x_0`,
/// `y_t = alpha * x_t + (1 - alpha) * y_{t-1}`.
pub fn ema_curve(values: &[f64], alpha: f64) -> Result<Vec<f64>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut out = Vec::with_capacity(values.len());
    let mut y = values[0];
    out.push(y);
    for &x in &values[1..] {
        y = alpha * x + (1.0 - alpha) * y;
        out.push(y);
    }
    Ok(out)
}

/// A seeded set of episodes shared by all agents compared on one map.
#[derive(Debug, Clone)]
pub struct EpisodeSuite {
    pub map_hash: String,
    pub seed: u64,
    pub episodes: Vec<EpisodeSpec>,
}

impl EpisodeSuite {
    /// Deterministic text serialization: header plus one record per
    /// episode `(index, start pose, goal, shortest length)`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("gridnav-suite v1\n");
        out.push_str(&format!("maphash {}\n", self.map_hash));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("count {}\n", self.episodes.len()));
        for (i, e) in self.episodes.iter().enumerate() {
            out.push_str(&format!(
                "{} {:?} {:?} {:?} {:?} {:?} {:?}\n",
                i,
                e.start.x,
                e.start.y,
                e.start.heading,
                e.goal.0,
                e.goal.1,
                e.shortest_path_length
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EvalError> {
        let bad = |m: &str| EvalError::Malformed(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("gridnav-suite v1") {
            return Err(bad("missing suite header"));
        }
        let field = |line: Option<&str>, key: &str| -> Result<String, EvalError> {
            let line = line.ok_or_else(|| bad("truncated header"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(&format!("expected `{key}` line")));
            }
            it.next()
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("missing `{key}` value")))
        };
        let map_hash = field(lines.next(), "maphash")?;
        let seed: u64 = field(lines.next(), "seed")?
            .parse()
            .map_err(|_| bad("bad seed"))?;
        let count: usize = field(lines.next(), "count")?
            .parse()
            .map_err(|_| bad("bad count"))?;
        let mut episodes = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("missing episode record"))?;
            let nums: Vec<f64> = line
                .split_whitespace()
                .skip(1)
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_, _>>()?;
            if nums.len() != 6 {
                return Err(bad("episode record needs 6 fields"));
            }
            episodes.push(EpisodeSpec::new(
                Pose::new(nums[0], nums[1], nums[2]),
                (nums[3], nums[4]),
                nums[5],
            ));
        }
        Ok(Self {
            map_hash,
            seed,
            episodes,
        })
    }
}

/// Generates `n_episodes` valid episodes with precomputed geodesic
/// lengths. All agents compared on a map must share one suite.
pub fn generate_suite(
    grid: &OccupancyGrid,
    n_episodes: usize,
    seed: u64,
) -> Result<EpisodeSuite, CurriculumError> {
    let mut sampler = EpisodeSampler::new(grid, seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let (spec, _) = sampler.sample()?;
        episodes.push(spec);
    }
    Ok(EpisodeSuite {
        map_hash: grid.map_hash(),
        seed,
        episodes,
    })
}

/// Per-episode evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub episode: usize,
    pub success: bool,
    pub spl: f64,
    pub path_length: f64,
    pub shortest: f64,
    pub steps: usize,
}

/// Suite-level evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map_hash: String,
    pub episodes: Vec<EpisodeResult>,
    pub mean_spl: f64,
    pub mean_success: f64,
}

impl EvalReport {
    fn from_results(map_hash: String, episodes: Vec<EpisodeResult>) -> Self {
        let n = episodes.len().max(1) as f64;
        let mean_spl = episodes.iter().map(|e| e.spl).sum::<f64>() / n;
        let mean_success = episodes.iter().filter(|e| e.success).count() as f64 / n;
        Self {
            map_hash,
            episodes,
            mean_spl,
            mean_success,
        }
    }

    /// Decimal-text report: per-episode rows plus the aggregate footer.
    pub fn to_text(&self) -> String {
        let mut out = String::from("gridnav-report v1\n");
        out.push_str(&format!("maphash {}\n", self.map_hash));
        out.push_str(&format!("count {}\n", self.episodes.len()));
        out.push_str("episode success spl path_length shortest steps\n");
        for e in &self.episodes {
            out.push_str(&format!(
                "{} {} {:?} {:?} {:?} {}\n",
                e.episode,
                u8::from(e.success),
                e.spl,
                e.path_length,
                e.shortest,
                e.steps
            ));
        }
        out.push_str(&format!("mean_success {:?}\n", self.mean_success));
        out.push_str(&format!("mean_spl {:?}\n", self.mean_spl));
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EvalError> {
        let bad = |m: &str| EvalError::Malformed(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("gridnav-report v1") {
            return Err(bad("missing report header"));
        }
        let map_hash = lines
            .next()
            .and_then(|l| l.strip_prefix("maphash "))
            .ok_or_else(|| bad("missing maphash"))?
            .to_string();
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("count "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing count"))?;
        lines.next();
        let mut episodes = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("missing episode row"))?;
            let mut it = line.split_whitespace();
            let episode: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("bad row"))?;
            let success = it.next() == Some("1");
            let nums: Vec<f64> = it
                .by_ref()
                .take(3)
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_, _>>()?;
            let steps: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("bad steps"))?;
            episodes.push(EpisodeResult {
                episode,
                success,
                spl: nums[0],
                path_length: nums[1],
                shortest: nums[2],
                steps,
            });
        }
        Ok(Self::from_results(map_hash, episodes))
    }
}

/// Evaluates a policy on a suite in greedy mode: no curriculum, no
/// waypoint planning, deterministic given checkpoint and suite. Episodes
/// run in parallel; the report is assembled in episode order.
pub fn evaluate(
    net: &PolicyNetwork,
    vae: &TwinVae,
    encode_mode: EncodeMode,
    suite: &EpisodeSuite,
    grid: &OccupancyGrid,
    sensors: &SensorConfig,
) -> Result<EvalReport, EvalError> {
    Ok(evaluate_detailed(net, vae, encode_mode, suite, grid, sensors)?.0)
}

/// As `evaluate`, also returning the per-episode traces (for trajectory
/// export and path figures).
pub fn evaluate_detailed(
    net: &PolicyNetwork,
    vae: &TwinVae,
    encode_mode: EncodeMode,
    suite: &EpisodeSuite,
    grid: &OccupancyGrid,
    sensors: &SensorConfig,
) -> Result<(EvalReport, Vec<EpisodeTrace>), EvalError> {
    let grid_hash = grid.map_hash();
    if suite.map_hash != grid_hash {
        return Err(EvalError::SuiteMapMismatch {
            suite: suite.map_hash.clone(),
            grid: grid_hash,
        });
    }
    let expected_frame = 2 * vae.config.n_z + 5;
    if net.frame_dim != expected_frame {
        return Err(EvalError::Malformed(format!(
            "policy expects frame width {}, encoder produces {expected_frame}",
            net.frame_dim
        )));
    }
    let rows: Result<Vec<(EpisodeResult, EpisodeTrace)>, EvalError> = suite
        .episodes
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            // Greedy actions never draw randomness; the encode stream is
            // seeded per episode so sampled embeddings stay reproducible.
            let encode_seed = suite
                .seed
                .wrapping_add((i as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let mut state = ActorState::new(net.frame_stack, 0, encode_seed);
            let mut actor = NetActor {
                net,
                vae,
                encode_mode,
                mode: ActMode::Greedy,
                state: &mut state,
                recording: false,
            };
            let mut goals = EpisodeGoals::single(grid, spec.goal)?;
            let trace = run_episode(spec, grid, sensors, &mut actor, &mut goals)?;
            let spl_value = spl(trace.success, spec.shortest_path_length, trace.path_length)
                .unwrap_or(0.0);
            Ok((
                EpisodeResult {
                    episode: i,
                    success: trace.success,
                    spl: spl_value,
                    path_length: trace.path_length,
                    shortest: spec.shortest_path_length,
                    steps: trace.step_count(),
                },
                trace,
            ))
        })
        .collect();
    let mut results = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in rows? {
        results.push(r);
        traces.push(t);
    }
    Ok((EvalReport::from_results(grid_hash, results), traces))
}

/// Near-optimal probe agent: plans a full action sequence offline by
/// searching the agent's true configuration lattice (positions reachable
/// by 0.25 m steps at the 36 quantized headings), guided by the goal's
/// geodesic field, then replays it.
pub struct OracleNavigator {
    script: std::collections::VecDeque<crate::env::Action>,
}

impl OracleNavigator {
    /// Plans with best-first search over (position, heading) states.
    /// Returns None only if the episode is kinematically unsolvable
    /// within the expansion cap.
    pub fn plan(grid: &OccupancyGrid, spec: &EpisodeSpec) -> Result<Option<Self>, CurriculumError> {
        use crate::env::{step, Action, FORWARD_STEP_M, SUCCESS_RADIUS_M};
        use std::cmp::Ordering;
        use std::collections::{BinaryHeap, HashMap};

        let field = crate::planner::distance_field(grid, spec.goal)?;

        #[derive(PartialEq)]
        struct Entry {
            f: f64,
            id: usize,
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                other
                    .f
                    .total_cmp(&self.f)
                    .then_with(|| other.id.cmp(&self.id))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let key = |p: &Pose| {
            (
                (p.x * 1000.0).round() as i64,
                (p.y * 1000.0).round() as i64,
                p.heading_step(),
            )
        };
        let h = |p: &Pose| field.query(p.x, p.y) / FORWARD_STEP_M;

        let mut nodes: Vec<(Pose, usize, Option<Action>, f64)> = vec![(spec.start, usize::MAX, None, 0.0)];
        let mut best: HashMap<(i64, i64, usize), f64> = HashMap::new();
        best.insert(key(&spec.start), 0.0);
        let mut heap = BinaryHeap::new();
        heap.push(Entry {
            f: h(&spec.start),
            id: 0,
        });

        let mut expansions = 0usize;
        while let Some(Entry { id, .. }) = heap.pop() {
            let (pose, _, _, g) = nodes[id];
            if best.get(&key(&pose)).copied().unwrap_or(f64::INFINITY) < g {
                continue;
            }
            if pose.distance_to(spec.goal) < SUCCESS_RADIUS_M {
                let mut script = std::collections::VecDeque::new();
                let mut cur = id;
                while nodes[cur].1 != usize::MAX {
                    script.push_front(nodes[cur].2.expect("non-root has an action"));
                    cur = nodes[cur].1;
                }
                return Ok(Some(Self { script }));
            }
            expansions += 1;
            if expansions > 500_000 {
                return Ok(None);
            }
            for action in [Action::Forward, Action::TurnLeft, Action::TurnRight] {
                let next = step(&pose, action, grid);
                if action == Action::Forward && next == pose {
                    continue;
                }
                let ng = g + 1.0;
                let k = key(&next);
                if best.get(&k).copied().unwrap_or(f64::INFINITY) <= ng {
                    continue;
                }
                best.insert(k, ng);
                let nid = nodes.len();
                nodes.push((next, id, Some(action), ng));
                heap.push(Entry {
                    f: ng + h(&next),
                    id: nid,
                });
            }
        }
        Ok(None)
    }
}

impl crate::env::ActionSource for OracleNavigator {
    fn next_action(&mut self, _obs: &crate::env::Observation) -> crate::env::Action {
        self.script
            .pop_front()
            .unwrap_or(crate::env::Action::TurnLeft)
    }
}
