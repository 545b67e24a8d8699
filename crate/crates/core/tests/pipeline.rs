//! End-to-end pipeline tests: perception pretraining feeding frozen
//! encoders into PPO, trivial-task learning, reproducibility, and the
//! transfer-learning flow.

use gridnav_core::agent::{
    train, train_with_source, PolicyNetwork, PpoConfig, TrainBudget, TrainOptions,
};
use gridnav_core::curriculum::{
    CurriculumError, CurriculumSchedule, EpisodeSource,
};
use gridnav_core::env::{EpisodeSpec, Pose, SensorConfig};
use gridnav_core::eval::{evaluate, generate_suite, EpisodeSuite};
use gridnav_core::grid::OccupancyGrid;
use gridnav_core::mapgen;
use gridnav_core::perception::{collect_dataset, EncodeMode, TwinVae, VaeConfig};
use gridnav_core::planner::{distance_field, DistanceField, PlannedPath};

fn small_sensors() -> SensorConfig {
    SensorConfig {
        rays: 16,
        patch_size: 8,
        ..SensorConfig::default()
    }
}

fn small_vae_config() -> VaeConfig {
    VaeConfig {
        n_z: 6,
        hidden: (32, 16),
        beta: 1.0,
        lr: 1e-3,
        batch: 32,
        iterations: 300,
    }
}

fn small_ppo() -> PpoConfig {
    PpoConfig {
        trunk: (48, 32),
        head_hidden: 24,
        frame_stack: 2,
        horizon: 256,
        minibatch: 64,
        lr: 1e-3,
        ..PpoConfig::default()
    }
}

/// Replays one fixed trivial episode forever: open corridor, goal half a
/// meter straight ahead.
struct TrivialEpisode<'g> {
    grid: &'g OccupancyGrid,
    spec: EpisodeSpec,
    field: DistanceField,
}

impl<'g> TrivialEpisode<'g> {
    fn new(grid: &'g OccupancyGrid) -> Self {
        let start = Pose::new(0.55, 0.35, 0.0);
        let goal = (1.05, 0.35);
        let field = distance_field(grid, goal).unwrap();
        let mut spec = EpisodeSpec::new(start, goal, field.query(start.x, start.y));
        spec.max_steps = 100;
        Self { grid, spec, field }
    }
}

impl EpisodeSource for TrivialEpisode<'_> {
    fn next_episode(&mut self) -> Result<(EpisodeSpec, DistanceField), CurriculumError> {
        Ok((self.spec.clone(), self.field.clone()))
    }

    fn plan_path(&mut self, spec: &EpisodeSpec) -> Result<PlannedPath, CurriculumError> {
        Ok(gridnav_core::planner::astar(
            self.grid,
            (spec.start.x, spec.start.y),
            spec.goal,
        )?)
    }
}

#[test]
fn learns_the_trivial_goal_ahead_task() {
    let grid = mapgen::corridor(40, 0.1);
    let sensors = small_sensors();
    let mut vae = TwinVae::new(&sensors, small_vae_config(), 1).unwrap();
    vae.ablation_allow_untrained = true;

    let mut opts = TrainOptions::new(
        CurriculumSchedule::PointNav,
        TrainBudget {
            max_episodes: 2000,
            max_env_steps: u64::MAX,
        },
        7,
    );
    opts.ppo = small_ppo();
    opts.encode_mode = EncodeMode::MeanMu;
    opts.sensors = sensors;
    opts.episode_max_steps = 100;

    let mut source = TrivialEpisode::new(&grid);
    let out = train_with_source(&grid, &vae, &opts, None, &mut source).unwrap();
    assert!(out.log.len() <= 2000);
    let tail = &out.log[out.log.len().saturating_sub(200)..];
    let rate = tail.iter().filter(|e| e.success).count() as f64 / tail.len() as f64;
    assert!(rate >= 0.95, "trivial-task success rate {rate}");
}

#[test]
fn fixed_seed_reproduces_checkpoints_bit_for_bit() {
    let grid = mapgen::rooms_and_corridors(32, 32, 0.1, 3);
    let sensors = small_sensors();
    let data = collect_dataset(&grid, 15, &sensors, 5).unwrap();
    let mut vae = TwinVae::new(&sensors, small_vae_config(), 2).unwrap();
    vae.train(&data, 3).unwrap();
    let vae_bytes_before = vae.save(&[]);

    let run = |seed: u64| {
        let mut opts = TrainOptions::new(
            CurriculumSchedule::PointNav,
            TrainBudget {
                max_episodes: 60,
                max_env_steps: u64::MAX,
            },
            seed,
        );
        opts.ppo = small_ppo();
        opts.sensors = small_sensors();
        opts.episode_max_steps = 60;
        train(&grid, &vae, &opts, None).unwrap()
    };
    let a = run(11);
    let b = run(11);
    let c = run(12);
    assert!(a.updates >= 1, "updates must happen to exercise the optimizer");
    assert_eq!(
        a.policy.save(&[]),
        b.policy.save(&[]),
        "same seed must give identical checkpoints"
    );
    assert_ne!(
        a.policy.save(&[]),
        c.policy.save(&[]),
        "different seeds should diverge"
    );

    // Decoupling: policy training leaves the perception weights alone.
    assert_eq!(vae_bytes_before, vae.save(&[]));
}

#[test]
fn vae_checkpoint_feeds_policy_training_and_evaluation() {
    let grid = mapgen::rooms_and_corridors(32, 32, 0.1, 3);
    let sensors = small_sensors();
    let data = collect_dataset(&grid, 15, &sensors, 5).unwrap();
    let mut vae = TwinVae::new(&sensors, small_vae_config(), 2).unwrap();
    vae.train(&data, 3).unwrap();
    let bytes = vae.save(&[("map_hash".to_string(), grid.map_hash())]);

    // Reload as the frozen encoder for policy training.
    let frozen = TwinVae::load(&bytes).unwrap();
    assert!(frozen.trained);
    let mut opts = TrainOptions::new(
        CurriculumSchedule::default_swpn().scaled(0.001),
        TrainBudget {
            max_episodes: 40,
            max_env_steps: u64::MAX,
        },
        21,
    );
    opts.ppo = small_ppo();
    opts.sensors = small_sensors();
    opts.episode_max_steps = 60;
    let out = train(&grid, &frozen, &opts, None).unwrap();

    // The trained policy round-trips and evaluates on a shared suite.
    let policy_bytes = out.policy.save(&[("map_hash".to_string(), grid.map_hash())]);
    let (loaded, meta) = PolicyNetwork::load(&policy_bytes).unwrap();
    assert!(meta.iter().any(|(k, v)| k == "component" && v == "policy"));
    let suite = generate_suite(&grid, 8, 77).unwrap();
    let report = evaluate(
        &loaded,
        &frozen,
        EncodeMode::SampleZ,
        &suite,
        &grid,
        &small_sensors(),
    )
    .unwrap();
    assert_eq!(report.episodes.len(), 8);
    assert!(report.mean_spl <= report.mean_success + 1e-12);
}

#[test]
fn transfer_initialization_starts_from_nonzero_success() {
    // Train on map A, then evaluate the checkpoint as the starting point
    // for map B fine-tuning on an easy suite.
    let map_a = mapgen::rooms_and_corridors(32, 32, 0.1, 41);
    let map_b = mapgen::rooms_and_corridors(32, 32, 0.1, 42);
    let sensors = small_sensors();
    let data = collect_dataset(&map_a, 20, &sensors, 5).unwrap();
    let mut vae = TwinVae::new(&sensors, small_vae_config(), 2).unwrap();
    vae.train(&data, 3).unwrap();

    let mut opts = TrainOptions::new(
        CurriculumSchedule::Wpn(4),
        TrainBudget {
            max_episodes: u64::MAX,
            max_env_steps: 40_000,
        },
        31,
    );
    opts.ppo = small_ppo();
    opts.sensors = small_sensors();
    let trained_on_a = train(&map_a, &vae, &opts, None).unwrap();

    // Easy suite on B: the shortest valid episodes.
    let mut suite = generate_suite(&map_b, 60, 9).unwrap();
    suite
        .episodes
        .sort_by(|a, b| a.shortest_path_length.total_cmp(&b.shortest_path_length));
    suite.episodes.truncate(20);
    let easy = EpisodeSuite {
        map_hash: suite.map_hash.clone(),
        seed: suite.seed,
        episodes: suite.episodes.clone(),
    };

    let report = evaluate(
        &trained_on_a.policy,
        &vae,
        EncodeMode::SampleZ,
        &easy,
        &map_b,
        &small_sensors(),
    )
    .unwrap();
    assert!(
        report.mean_success > 0.0,
        "transferred policy should succeed somewhere on the easy suite"
    );

    // The fine-tune flow itself: initialize from A's weights on map B.
    let mut ft_opts = TrainOptions::new(
        CurriculumSchedule::PointNav,
        TrainBudget {
            max_episodes: 20,
            max_env_steps: u64::MAX,
        },
        32,
    );
    ft_opts.ppo = small_ppo();
    ft_opts.sensors = small_sensors();
    ft_opts.episode_max_steps = 60;
    let fine_tuned = train(&map_b, &vae, &ft_opts, Some(trained_on_a.policy)).unwrap();
    assert_eq!(fine_tuned.log.len(), 20);
}
