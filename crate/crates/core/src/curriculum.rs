//! Training schedules that feed A*-derived sub-goals to episodes: WP-N
//! (fixed waypoint count), SWP-N (waypoint count decreasing over training
//! stages), and FWP (a single waypoint sliding from 20% to 100% of the
//! path). Every schedule ends as plain point-goal navigation.

use crate::env::{EpisodeSpec, Pose, SubGoalSource, DEFAULT_MAX_STEPS, MIN_GEODESIC_M, SUCCESS_RADIUS_M};
use crate::grid::OccupancyGrid;
use crate::planner::{
    astar, distance_field, extract_waypoints, point_at_fraction, DistanceField, PlanError,
    PlannedPath,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("stage table invalid: {0}")]
    BadStageTable(String),
    #[error("could not sample a valid episode after {0} attempts")]
    SamplingExhausted(usize),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Stage table entry: from `start_episode` onward, use `n` waypoints.
pub type StageEntry = (u64, usize);

/// Default SWP stage table: WP-10 below 10k episodes, then 8, 6, 4, 3, 2,
/// and plain point-goal navigation from 80k on.
pub fn default_swp_stages() -> Vec<StageEntry> {
    vec![
        (0, 10),
        (10_000, 8),
        (20_000, 6),
        (30_000, 4),
        (40_000, 3),
        (60_000, 2),
        (80_000, 1),
    ]
}

/// Which training schedule drives episode sub-goals.
#[derive(Debug, Clone, PartialEq)]
pub enum CurriculumSchedule {
    /// No sub-goals: the episode goal is the only target.
    PointNav,
    /// Fixed number of equidistant waypoints every episode.
    Wpn(usize),
    /// Waypoint count follows a stage table over episode indices.
    Swpn(Vec<StageEntry>),
    /// One waypoint at a fraction of the path, ramping linearly from
    /// `f_start` to `f_end` over `ramp_episodes`.
    Fwp {
        f_start: f64,
        f_end: f64,
        ramp_episodes: u64,
    },
}

/// What the schedule prescribes for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageSpec {
    Waypoints(usize),
    Fraction(f64),
}

impl CurriculumSchedule {
    pub fn default_swpn() -> Self {
        CurriculumSchedule::Swpn(default_swp_stages())
    }

    pub fn default_fwp() -> Self {
        CurriculumSchedule::Fwp {
            f_start: 0.2,
            f_end: 1.0,
            ramp_episodes: 64_000,
        }
    }

    /// Validates table monotonicity and the final point-goal stage.
    pub fn validate(&self) -> Result<(), CurriculumError> {
        match self {
            CurriculumSchedule::Swpn(table) => {
                if table.is_empty() {
                    return Err(CurriculumError::BadStageTable("empty table".into()));
                }
                if table[0].0 != 0 {
                    return Err(CurriculumError::BadStageTable(
                        "first stage must start at episode 0".into(),
                    ));
                }
                for pair in table.windows(2) {
                    if pair[1].0 <= pair[0].0 {
                        return Err(CurriculumError::BadStageTable(
                            "episode boundaries must strictly increase".into(),
                        ));
                    }
                    if pair[1].1 >= pair[0].1 {
                        return Err(CurriculumError::BadStageTable(
                            "waypoint counts must strictly decrease".into(),
                        ));
                    }
                }
                if table.last().unwrap().1 != 1 {
                    return Err(CurriculumError::BadStageTable(
                        "final stage must be a single waypoint".into(),
                    ));
                }
                Ok(())
            }
            CurriculumSchedule::Wpn(n) if *n == 0 => {
                Err(CurriculumError::BadStageTable("WP-0 is not a schedule".into()))
            }
            CurriculumSchedule::Fwp { f_start, f_end, .. } => {
                if !(0.0 < *f_start && f_start <= f_end && *f_end <= 1.0) {
                    return Err(CurriculumError::BadStageTable(
                        "fractions must satisfy 0 < start <= end <= 1".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Uniformly rescales episode boundaries (and the FWP ramp) so desk
    /// runs traverse the whole curriculum; 0.01 maps 10k to 100.
    pub fn scaled(&self, stage_scale: f64) -> Self {
        let scale = |e: u64| ((e as f64 * stage_scale).round() as u64).max(1);
        match self {
            CurriculumSchedule::Swpn(table) => CurriculumSchedule::Swpn(
                table
                    .iter()
                    .map(|&(e, n)| (if e == 0 { 0 } else { scale(e) }, n))
                    .collect(),
            ),
            CurriculumSchedule::Fwp {
                f_start,
                f_end,
                ramp_episodes,
            } => CurriculumSchedule::Fwp {
                f_start: *f_start,
                f_end: *f_end,
                ramp_episodes: scale(*ramp_episodes),
            },
            other => other.clone(),
        }
    }

    /// The stage prescription for an episode index.
    pub fn stage_for_episode(&self, episode: u64) -> StageSpec {
        match self {
            CurriculumSchedule::PointNav => StageSpec::Waypoints(1),
            CurriculumSchedule::Wpn(n) => StageSpec::Waypoints(*n),
            CurriculumSchedule::Swpn(table) => {
                let mut n = table[0].1;
                for &(start, count) in table {
                    if episode >= start {
                        n = count;
                    }
                }
                StageSpec::Waypoints(n)
            }
            CurriculumSchedule::Fwp {
                f_start,
                f_end,
                ramp_episodes,
            } => {
                let f = f_start
                    + (f_end - f_start) * (episode as f64 / *ramp_episodes as f64);
                StageSpec::Fraction(f.min(*f_end))
            }
        }
    }

    /// Human-readable stage label for logs.
    pub fn stage_label(&self, episode: u64) -> String {
        match self.stage_for_episode(episode) {
            StageSpec::Waypoints(1) => "pointnav".to_string(),
            StageSpec::Waypoints(n) => format!("wp{n}"),
            StageSpec::Fraction(f) => format!("f{f:.3}"),
        }
    }
}

/// Sub-goal state for one episode: the waypoint list, the active index,
/// and a geodesic distance field per started waypoint.
pub struct EpisodeGoals<'g> {
    grid: &'g OccupancyGrid,
    waypoints: Vec<(f64, f64)>,
    active: usize,
    fields: Vec<Option<DistanceField>>,
}

impl<'g> EpisodeGoals<'g> {
    /// Plain point-goal navigation: a single target.
    pub fn single(grid: &'g OccupancyGrid, goal: (f64, f64)) -> Result<Self, CurriculumError> {
        Self::with_waypoints(grid, vec![goal])
    }

    /// Single target with an already-computed distance field (the episode
    /// sampler produces one while validating the pair).
    pub fn single_with_field(
        grid: &'g OccupancyGrid,
        goal: (f64, f64),
        field: DistanceField,
    ) -> Self {
        Self {
            grid,
            waypoints: vec![goal],
            active: 0,
            fields: vec![Some(field)],
        }
    }

    pub fn with_waypoints(
        grid: &'g OccupancyGrid,
        waypoints: Vec<(f64, f64)>,
    ) -> Result<Self, CurriculumError> {
        assert!(!waypoints.is_empty(), "at least one waypoint required");
        let mut fields = Vec::with_capacity(waypoints.len());
        fields.resize_with(waypoints.len(), || None);
        let mut goals = Self {
            grid,
            waypoints,
            active: 0,
            fields,
        };
        goals.ensure_field(0)?;
        Ok(goals)
    }

    pub fn waypoints(&self) -> &[(f64, f64)] {
        &self.waypoints
    }

    fn ensure_field(&mut self, idx: usize) -> Result<(), CurriculumError> {
        if self.fields[idx].is_none() {
            let wp = self.waypoints[idx];
            self.fields[idx] = Some(field_for_point(self.grid, wp)?);
        }
        Ok(())
    }
}

/// Distance field sourced at `p`, snapping to the nearest free cell when
/// rounding lands the point in a blocked one (interpolated waypoints on
/// diagonal path segments can fall on cell corners).
pub fn field_for_point(
    grid: &OccupancyGrid,
    p: (f64, f64),
) -> Result<DistanceField, CurriculumError> {
    if !grid.point_blocked(p.0, p.1) {
        return Ok(distance_field(grid, p)?);
    }
    let (r, c) = grid.cell_of(p.0, p.1).ok_or(PlanError::BlockedEndpoint)?;
    let mut best: Option<((f64, f64), f64)> = None;
    for dr in -2i64..=2 {
        for dc in -2i64..=2 {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if grid.blocked(nr, nc) {
                continue;
            }
            let center = grid.cell_center(nr as usize, nc as usize);
            let d = (center.0 - p.0).hypot(center.1 - p.1);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((center, d));
            }
        }
    }
    let source = best.map(|(c, _)| c).ok_or(PlanError::BlockedEndpoint)?;
    Ok(distance_field(grid, source)?)
}

impl SubGoalSource for EpisodeGoals<'_> {
    fn current_target(&mut self, pose: &Pose) -> (f64, f64) {
        while self.active + 1 < self.waypoints.len()
            && pose.distance_to(self.waypoints[self.active]) < SUCCESS_RADIUS_M
        {
            self.active += 1;
        }
        self.ensure_field(self.active)
            .expect("waypoint lies on a free-space path");
        self.waypoints[self.active]
    }

    fn final_goal(&self) -> (f64, f64) {
        *self.waypoints.last().unwrap()
    }

    fn geodesic_to_target(&self, pose: &Pose) -> f64 {
        self.fields[self.active]
            .as_ref()
            .expect("field built when the waypoint became active")
            .query(pose.x, pose.y)
    }

    fn segment_index(&self) -> usize {
        self.active
    }

    fn segment_count(&self) -> usize {
        self.waypoints.len()
    }
}

/// Builds the episode's sub-goal state for the schedule at this episode
/// index. Waypoint curricula subdivide the A* path; FWP plants a single
/// waypoint at the ramped fraction; both reduce to point-goal navigation
/// once exhausted.
pub fn plan_episode_goals<'g>(
    schedule: &CurriculumSchedule,
    episode: u64,
    path: &PlannedPath,
    grid: &'g OccupancyGrid,
) -> Result<EpisodeGoals<'g>, CurriculumError> {
    let waypoints = match schedule.stage_for_episode(episode) {
        StageSpec::Waypoints(n) => extract_waypoints(path, n)?,
        StageSpec::Fraction(f) => vec![point_at_fraction(path, f)?],
    };
    EpisodeGoals::with_waypoints(grid, waypoints)
}

/// Supplies training episodes: the standard rejection sampler in normal
/// runs, bespoke distributions in tests and demos.
pub trait EpisodeSource {
    fn next_episode(&mut self) -> Result<(EpisodeSpec, DistanceField), CurriculumError>;
    fn plan_path(&mut self, spec: &EpisodeSpec) -> Result<PlannedPath, CurriculumError>;
}

/// Rejection sampler for valid training/evaluation episodes: start and
/// goal in free space (start heading from the 36-state cycle), the
/// straight segment between them blocked, and geodesic separation of at
/// least one meter.
pub struct EpisodeSampler<'g> {
    grid: &'g OccupancyGrid,
    free: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
    pub max_steps: usize,
}

impl<'g> EpisodeSampler<'g> {
    pub fn new(grid: &'g OccupancyGrid, seed: u64) -> Self {
        Self {
            grid,
            free: grid.free_cells(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    fn random_free_point(&mut self) -> (f64, f64) {
        let (r, c) = self.free[self.rng.gen_range(0..self.free.len())];
        let (cx, cy) = self.grid.cell_center(r, c);
        (
            cx + self.rng.gen_range(-0.5..0.5) * self.grid.cell_size() * 0.9,
            cy + self.rng.gen_range(-0.5..0.5) * self.grid.cell_size() * 0.9,
        )
    }

    /// Draws the next valid episode plus the goal's distance field (the
    /// source of the episode's geodesic length).
    pub fn sample(&mut self) -> Result<(EpisodeSpec, DistanceField), CurriculumError> {
        const ATTEMPTS: usize = 500;
        for _ in 0..ATTEMPTS {
            let (sx, sy) = self.random_free_point();
            let goal = self.random_free_point();
            // Straight-line-reachable pairs are rejected: the task is
            // only interesting when some obstacle intervenes.
            if !self.grid.segment_blocked((sx, sy), goal) {
                continue;
            }
            let field = distance_field(self.grid, goal)?;
            let l = field.query(sx, sy);
            if !l.is_finite() || l < MIN_GEODESIC_M {
                continue;
            }
            let k = self.rng.gen_range(0..crate::env::HEADING_STATES);
            let start = Pose::at_heading_step(sx, sy, k);
            let mut spec = EpisodeSpec::new(start, goal, l);
            spec.max_steps = self.max_steps;
            return Ok((spec, field));
        }
        Err(CurriculumError::SamplingExhausted(ATTEMPTS))
    }

    /// Plans the episode's A* path, start cell to goal cell.
    pub fn plan_path(&self, spec: &EpisodeSpec) -> Result<PlannedPath, CurriculumError> {
        Ok(astar(self.grid, (spec.start.x, spec.start.y), spec.goal)?)
    }
}

impl EpisodeSource for EpisodeSampler<'_> {
    fn next_episode(&mut self) -> Result<(EpisodeSpec, DistanceField), CurriculumError> {
        self.sample()
    }

    fn plan_path(&mut self, spec: &EpisodeSpec) -> Result<PlannedPath, CurriculumError> {
        EpisodeSampler::plan_path(self, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{run_episode, Action, ActionSource, Observation};
    use crate::mapgen;

    #[test]
    fn swp_table_lookups_follow_the_stage_listing() {
        let swp = CurriculumSchedule::default_swpn();
        swp.validate().unwrap();
        let cases = [
            (0, 10),
            (9_999, 10),
            (10_000, 8),
            (15_000, 8),
            (20_000, 6),
            (30_000, 4),
            (40_000, 3),
            (59_999, 3),
            (60_000, 2),
            (80_000, 1),
            (200_000, 1),
        ];
        for (episode, n) in cases {
            assert_eq!(
                swp.stage_for_episode(episode),
                StageSpec::Waypoints(n),
                "episode {episode}"
            );
        }
    }

    #[test]
    fn fwp_fraction_ramps_linearly() {
        let fwp = CurriculumSchedule::default_fwp();
        fwp.validate().unwrap();
        let f = |e| match fwp.stage_for_episode(e) {
            StageSpec::Fraction(f) => f,
            _ => unreachable!(),
        };
        assert!((f(0) - 0.2).abs() < 1e-12);
        assert!((f(32_000) - 0.6).abs() < 1e-12);
        assert!((f(64_000) - 1.0).abs() < 1e-12);
        assert!((f(1_000_000) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedules_are_monotone() {
        let swp = CurriculumSchedule::default_swpn();
        let fwp = CurriculumSchedule::default_fwp();
        let mut prev_n = usize::MAX;
        let mut prev_f = 0.0;
        for e in (0..100_000).step_by(500) {
            if let StageSpec::Waypoints(n) = swp.stage_for_episode(e) {
                assert!(n <= prev_n);
                prev_n = n;
            }
            if let StageSpec::Fraction(f) = fwp.stage_for_episode(e) {
                assert!(f >= prev_f);
                prev_f = f;
            }
        }
    }

    #[test]
    fn every_schedule_ends_as_pointnav() {
        let far = 10_000_000;
        assert_eq!(
            CurriculumSchedule::PointNav.stage_for_episode(far),
            StageSpec::Waypoints(1)
        );
        assert_eq!(
            CurriculumSchedule::default_swpn().stage_for_episode(far),
            StageSpec::Waypoints(1)
        );
        assert_eq!(
            CurriculumSchedule::default_fwp().stage_for_episode(far),
            StageSpec::Fraction(1.0)
        );
    }

    #[test]
    fn bad_tables_rejected() {
        let cases = vec![
            vec![(0, 10), (10, 10)],
            vec![(0, 10), (10, 8), (5, 6)],
            vec![(0, 10), (10, 2)],
            vec![(5, 10), (10, 1)],
        ];
        for table in cases {
            assert!(CurriculumSchedule::Swpn(table).validate().is_err());
        }
    }

    #[test]
    fn stage_scale_rescales_boundaries() {
        let swp = CurriculumSchedule::default_swpn().scaled(0.01);
        assert_eq!(swp.stage_for_episode(99), StageSpec::Waypoints(10));
        assert_eq!(swp.stage_for_episode(100), StageSpec::Waypoints(8));
        assert_eq!(swp.stage_for_episode(800), StageSpec::Waypoints(1));
        let fwp = CurriculumSchedule::default_fwp().scaled(0.01);
        match fwp.stage_for_episode(640) {
            StageSpec::Fraction(f) => assert!((f - 1.0).abs() < 1e-12),
            _ => unreachable!(),
        }
    }

    #[test]
    fn waypoints_on_a_ten_meter_path() {
        let grid = mapgen::corridor(40, 0.1);
        let path = crate::planner::PlannedPath::from_points(vec![(0.0, 0.0), (10.0, 0.0)]);
        let goals = plan_episode_goals(&CurriculumSchedule::Wpn(4), 0, &path, &grid);
        // The synthetic path leaves the map, so field construction can
        // fail; only the waypoint geometry is checked here.
        let wps = extract_waypoints(&path, 4).unwrap();
        assert_eq!(wps, vec![(2.5, 0.0), (5.0, 0.0), (7.5, 0.0), (10.0, 0.0)]);
        drop(goals);
    }

    #[test]
    fn swp_after_final_stage_is_single_goal() {
        let grid = mapgen::rooms_and_corridors(32, 32, 0.1, 30);
        let mut sampler = EpisodeSampler::new(&grid, 4);
        let (spec, _field) = sampler.sample().unwrap();
        let path = sampler.plan_path(&spec).unwrap();
        let goals = plan_episode_goals(
            &CurriculumSchedule::default_swpn(),
            85_000,
            &path,
            &grid,
        )
        .unwrap();
        assert_eq!(goals.waypoints().len(), 1);
        assert_eq!(goals.final_goal(), *path.points.last().unwrap());

        let fwp_goals = plan_episode_goals(
            &CurriculumSchedule::default_fwp(),
            70_000,
            &path,
            &grid,
        )
        .unwrap();
        assert_eq!(fwp_goals.final_goal(), *path.points.last().unwrap());
    }

    #[test]
    fn waypoint_advancement_rules() {
        let grid = mapgen::corridor(60, 0.1);
        // Waypoints along the corridor midline.
        let wps = vec![(1.0, 0.35), (2.0, 0.35), (2.3, 0.35), (4.0, 0.35)];
        let mut goals = EpisodeGoals::with_waypoints(&grid, wps).unwrap();

        // Far from waypoint 0: unchanged.
        let pose = Pose::new(0.5, 0.35, 0.0);
        assert_eq!(goals.current_target(&pose), (1.0, 0.35));

        // 0.25 m away: still outside the advancement radius.
        let pose = Pose::new(0.75, 0.35, 0.0);
        assert_eq!(goals.current_target(&pose), (1.0, 0.35));

        // 0.15 m away: advance to waypoint 1.
        let pose = Pose::new(0.85, 0.35, 0.0);
        assert_eq!(goals.current_target(&pose), (2.0, 0.35));
        assert_eq!(goals.segment_index(), 1);

        // Within 0.2 m of waypoints 1 AND 2: multi-advance to waypoint 3.
        let pose = Pose::new(2.15, 0.35, 0.0);
        assert_eq!(goals.current_target(&pose), (4.0, 0.35));
        assert_eq!(goals.segment_index(), 3);

        // Near the last waypoint: never advances past it.
        let pose = Pose::new(3.95, 0.35, 0.0);
        assert_eq!(goals.current_target(&pose), (4.0, 0.35));
    }

    #[test]
    fn sampler_produces_valid_episodes() {
        let grid = mapgen::rooms_and_corridors(32, 32, 0.1, 12);
        let mut sampler = EpisodeSampler::new(&grid, 9);
        for _ in 0..20 {
            let (spec, field) = sampler.sample().unwrap();
            assert!(!grid.point_blocked(spec.start.x, spec.start.y));
            assert!(!grid.point_blocked(spec.goal.0, spec.goal.1));
            assert!(grid.segment_blocked((spec.start.x, spec.start.y), spec.goal));
            assert!(spec.shortest_path_length >= MIN_GEODESIC_M);
            let l = field.query(spec.start.x, spec.start.y);
            assert_eq!(l, spec.shortest_path_length);
        }
    }

    #[test]
    fn sampler_deterministic_in_seed() {
        let grid = mapgen::rooms_and_corridors(32, 32, 0.1, 12);
        let mut a = EpisodeSampler::new(&grid, 9);
        let mut b = EpisodeSampler::new(&grid, 9);
        for _ in 0..5 {
            let (sa, _) = a.sample().unwrap();
            let (sb, _) = b.sample().unwrap();
            assert_eq!(sa.start, sb.start);
            assert_eq!(sa.goal, sb.goal);
        }
    }

    /// Scripted corridor run: drive straight to the goal.
    struct DriveForward;
    impl ActionSource for DriveForward {
        fn next_action(&mut self, _: &Observation) -> Action {
            Action::Forward
        }
    }

    #[test]
    fn scripted_corridor_run_is_near_geodesic() {
        let grid = mapgen::corridor(60, 0.1);
        let start = Pose::new(0.55, 0.35, 0.0);
        let goal = (3.05, 0.35);
        let field = distance_field(&grid, goal).unwrap();
        let l = field.query(start.x, start.y);
        let spec = EpisodeSpec::new(start, goal, l);
        let mut goals = EpisodeGoals::single(&grid, goal).unwrap();
        let trace = run_episode(
            &spec,
            &grid,
            &crate::env::SensorConfig::default(),
            &mut DriveForward,
            &mut goals,
        )
        .unwrap();
        assert!(trace.success);
        assert!(
            (trace.path_length - l).abs() <= 0.1 * l + 0.3,
            "path {} vs geodesic {l}",
            trace.path_length
        );
    }

    #[test]
    fn immediate_success_takes_no_steps() {
        let grid = mapgen::corridor(60, 0.1);
        let start = Pose::new(1.0, 0.35, 0.0);
        let goal = (1.15, 0.35);
        let spec = EpisodeSpec::new(start, goal, 0.15);
        let mut goals = EpisodeGoals::single(&grid, goal).unwrap();
        let trace = run_episode(
            &spec,
            &grid,
            &crate::env::SensorConfig::default(),
            &mut DriveForward,
            &mut goals,
        )
        .unwrap();
        assert!(trace.success);
        assert_eq!(trace.step_count(), 0);
        assert_eq!(trace.path_length, 0.0);
    }

    struct AlwaysLeft;
    impl ActionSource for AlwaysLeft {
        fn next_action(&mut self, _: &Observation) -> Action {
            Action::TurnLeft
        }
    }

    #[test]
    fn spinning_forever_fails_at_max_steps() {
        let grid = mapgen::corridor(60, 0.1);
        let start = Pose::new(0.55, 0.35, 0.0);
        let goal = (3.05, 0.35);
        let spec = EpisodeSpec::new(start, goal, 2.5);
        let mut goals = EpisodeGoals::single(&grid, goal).unwrap();
        let trace = run_episode(
            &spec,
            &grid,
            &crate::env::SensorConfig::default(),
            &mut AlwaysLeft,
            &mut goals,
        )
        .unwrap();
        assert!(!trace.success);
        assert_eq!(trace.step_count(), DEFAULT_MAX_STEPS);
        assert_eq!(trace.path_length, 0.0);
    }

    #[test]
    fn blocked_start_is_invalid_spec() {
        let grid = mapgen::corridor(60, 0.1);
        let spec = EpisodeSpec::new(Pose::new(0.05, 0.05, 0.0), (3.05, 0.35), 2.5);
        let mut goals = EpisodeGoals::single(&grid, (3.05, 0.35)).unwrap();
        let err = run_episode(
            &spec,
            &grid,
            &crate::env::SensorConfig::default(),
            &mut DriveForward,
            &mut goals,
        )
        .unwrap_err();
        assert!(matches!(err, crate::env::EnvError::InvalidSpec(_)));
    }

    #[test]
    fn rewards_telescope_over_the_trace() {
        use crate::env::{reward, REWARD_SLACK};
        let grid = mapgen::rooms_and_corridors(32, 32, 0.1, 5);
        let mut sampler = EpisodeSampler::new(&grid, 31);
        let (spec, _) = sampler.sample().unwrap();
        let path = sampler.plan_path(&spec).unwrap();
        let mut goals =
            plan_episode_goals(&CurriculumSchedule::Wpn(4), 0, &path, &grid).unwrap();
        // A weak scripted wanderer: forward, sometimes turning.
        struct Wander(u64);
        impl ActionSource for Wander {
            fn next_action(&mut self, _: &Observation) -> Action {
                self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1);
                match (self.0 >> 33) % 4 {
                    0 => Action::TurnLeft,
                    1 => Action::TurnRight,
                    _ => Action::Forward,
                }
            }
        }
        let trace = run_episode(
            &spec,
            &grid,
            &crate::env::SensorConfig::default(),
            &mut Wander(9),
            &mut goals,
        )
        .unwrap();

        // Each recorded reward recomputes exactly from its fields.
        for s in &trace.steps {
            assert_eq!(s.reward, reward(s.d_prev, s.d_curr, s.bonus));
        }
        // Per-segment telescoping: within one active-waypoint segment the
        // shaping terms collapse to d_first - d_last.
        let mut i = 0;
        while i < trace.steps.len() {
            let seg = trace.steps[i].segment;
            let mut j = i;
            while j + 1 < trace.steps.len() && trace.steps[j + 1].segment == seg {
                j += 1;
            }
            let steps = &trace.steps[i..=j];
            let total: f64 = steps.iter().map(|s| s.reward).sum();
            let bonuses: f64 = steps
                .iter()
                .filter(|s| s.bonus)
                .count() as f64
                * crate::env::REWARD_GOAL_BONUS;
            let expected = steps[0].d_prev - steps[steps.len() - 1].d_curr
                + steps.len() as f64 * REWARD_SLACK
                + bonuses;
            assert!(
                (total - expected).abs() < 1e-9,
                "segment {seg}: {total} vs {expected}"
            );
            i = j + 1;
        }
    }
}
