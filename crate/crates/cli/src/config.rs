//! Run configuration: flat UTF-8 `key = value` lines with at most one
//! dotted prefix per key (`ppo.gamma = 0.95`). Unknown keys are rejected;
//! every command writes the fully resolved configuration (defaults
//! expanded) beside its outputs, and re-running from that file reproduces
//! the outputs.

use gridnav_core::curriculum::{default_swp_stages, CurriculumSchedule, StageEntry};
use gridnav_core::perception::EncodeMode;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Which curriculum block the run uses.
#[derive(Debug, Clone, PartialEq)]
pub enum CurriculumKind {
    PointNav,
    Wp,
    Swp,
    Fwp,
}

impl CurriculumKind {
    fn as_str(&self) -> &'static str {
        match self {
            CurriculumKind::PointNav => "pointnav",
            CurriculumKind::Wp => "wp",
            CurriculumKind::Swp => "swp",
            CurriculumKind::Fwp => "fwp",
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub map: PathBuf,
    pub seed: u64,
    pub out: PathBuf,

    pub perception_n_z: usize,
    pub perception_encode_mode: EncodeMode,
    pub perception_batch: usize,
    pub perception_iterations: usize,
    pub perception_lr: f64,
    pub perception_beta: f64,
    pub perception_poses: usize,

    pub ppo_gamma: f64,
    pub ppo_clip_eps: f64,
    pub ppo_gae_lambda: f64,
    pub ppo_horizon: usize,
    pub ppo_epochs: usize,
    pub ppo_minibatch: usize,
    pub ppo_entropy_coef: f64,
    pub ppo_value_coef: f64,
    pub ppo_lr: f64,
    pub ppo_frame_stack: usize,

    pub curriculum_kind: CurriculumKind,
    pub curriculum_n: usize,
    pub curriculum_stages: Vec<StageEntry>,
    pub curriculum_f_start: f64,
    pub curriculum_f_end: f64,
    pub curriculum_ramp_episodes: u64,
    pub curriculum_stage_scale: f64,

    pub training_episodes: u64,
    pub training_max_env_steps: u64,

    pub evaluation_suite_size: usize,
    pub evaluation_suite_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: PathBuf::from("map.txt"),
            seed: 1,
            out: PathBuf::from("out"),
            perception_n_z: 16,
            perception_encode_mode: EncodeMode::SampleZ,
            perception_batch: 64,
            perception_iterations: 5000,
            perception_lr: 1e-3,
            perception_beta: 1.0,
            perception_poses: 100,
            ppo_gamma: 0.95,
            ppo_clip_eps: 0.1,
            ppo_gae_lambda: 1.0,
            ppo_horizon: 2048,
            ppo_epochs: 4,
            ppo_minibatch: 64,
            ppo_entropy_coef: 0.0,
            ppo_value_coef: 0.5,
            ppo_lr: 2.5e-4,
            ppo_frame_stack: 4,
            curriculum_kind: CurriculumKind::PointNav,
            curriculum_n: 4,
            curriculum_stages: default_swp_stages(),
            curriculum_f_start: 0.2,
            curriculum_f_end: 1.0,
            curriculum_ramp_episodes: 64_000,
            curriculum_stage_scale: 1.0,
            training_episodes: 100_000,
            training_max_env_steps: 0,
            evaluation_suite_size: 500,
            evaluation_suite_seed: 1234,
        }
    }
}

fn parse_stages(raw: &str) -> Result<Vec<StageEntry>, ConfigError> {
    // Format: `10@0,8@10000,...` meaning `n@start_episode`.
    let mut out = Vec::new();
    for part in raw.split(',') {
        let mut it = part.split('@');
        let n: usize = it
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| ConfigError(format!("bad stage entry {part:?}")))?;
        let start: u64 = it
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| ConfigError(format!("bad stage entry {part:?}")))?;
        out.push((start, n));
    }
    Ok(out)
}

fn stages_to_string(stages: &[StageEntry]) -> String {
    stages
        .iter()
        .map(|(start, n)| format!("{n}@{start}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Parses config text, starting from defaults. Unknown keys are
    /// errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |what: &str| ConfigError(format!("bad {what} value {value:?}"));
        macro_rules! num {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "map" => self.map = PathBuf::from(value),
            "seed" => self.seed = num!("seed"),
            "out" => self.out = PathBuf::from(value),
            "perception.n_z" => self.perception_n_z = num!("perception.n_z"),
            "perception.encode_mode" => {
                self.perception_encode_mode = EncodeMode::parse(value)
                    .ok_or_else(|| ConfigError(format!(
                        "perception.encode_mode must be sample_z or mean_mu, got {value:?}"
                    )))?;
            }
            "perception.batch" => self.perception_batch = num!("perception.batch"),
            "perception.iterations" => self.perception_iterations = num!("perception.iterations"),
            "perception.lr" => self.perception_lr = num!("perception.lr"),
            "perception.beta" => self.perception_beta = num!("perception.beta"),
            "perception.poses" => self.perception_poses = num!("perception.poses"),
            "ppo.gamma" => self.ppo_gamma = num!("ppo.gamma"),
            "ppo.clip_eps" => self.ppo_clip_eps = num!("ppo.clip_eps"),
            "ppo.gae_lambda" => self.ppo_gae_lambda = num!("ppo.gae_lambda"),
            "ppo.horizon" => self.ppo_horizon = num!("ppo.horizon"),
            "ppo.epochs" => self.ppo_epochs = num!("ppo.epochs"),
            "ppo.minibatch" => self.ppo_minibatch = num!("ppo.minibatch"),
            "ppo.entropy_coef" => self.ppo_entropy_coef = num!("ppo.entropy_coef"),
            "ppo.value_coef" => self.ppo_value_coef = num!("ppo.value_coef"),
            "ppo.lr" => self.ppo_lr = num!("ppo.lr"),
            "ppo.frame_stack" => self.ppo_frame_stack = num!("ppo.frame_stack"),
            "curriculum.kind" => {
                self.curriculum_kind = match value {
                    "pointnav" => CurriculumKind::PointNav,
                    "wp" => CurriculumKind::Wp,
                    "swp" => CurriculumKind::Swp,
                    "fwp" => CurriculumKind::Fwp,
                    _ => {
                        return Err(ConfigError(format!(
                            "curriculum.kind must be pointnav, wp, swp, or fwp, got {value:?}"
                        )))
                    }
                };
            }
            "curriculum.n" => self.curriculum_n = num!("curriculum.n"),
            "curriculum.stages" => self.curriculum_stages = parse_stages(value)?,
            "curriculum.f_start" => self.curriculum_f_start = num!("curriculum.f_start"),
            "curriculum.f_end" => self.curriculum_f_end = num!("curriculum.f_end"),
            "curriculum.ramp_episodes" => {
                self.curriculum_ramp_episodes = num!("curriculum.ramp_episodes")
            }
            "curriculum.stage_scale" => self.curriculum_stage_scale = num!("curriculum.stage_scale"),
            "training.episodes" => self.training_episodes = num!("training.episodes"),
            "training.max_env_steps" => self.training_max_env_steps = num!("training.max_env_steps"),
            "evaluation.suite_size" => self.evaluation_suite_size = num!("evaluation.suite_size"),
            "evaluation.suite_seed" => self.evaluation_suite_seed = num!("evaluation.suite_seed"),
            other => return Err(ConfigError(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Serializes every field, defaults expanded, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "map = {}", self.map.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "perception.n_z = {}", self.perception_n_z);
        let _ = writeln!(
            s,
            "perception.encode_mode = {}",
            self.perception_encode_mode.as_str()
        );
        let _ = writeln!(s, "perception.batch = {}", self.perception_batch);
        let _ = writeln!(s, "perception.iterations = {}", self.perception_iterations);
        let _ = writeln!(s, "perception.lr = {:?}", self.perception_lr);
        let _ = writeln!(s, "perception.beta = {:?}", self.perception_beta);
        let _ = writeln!(s, "perception.poses = {}", self.perception_poses);
        let _ = writeln!(s, "ppo.gamma = {:?}", self.ppo_gamma);
        let _ = writeln!(s, "ppo.clip_eps = {:?}", self.ppo_clip_eps);
        let _ = writeln!(s, "ppo.gae_lambda = {:?}", self.ppo_gae_lambda);
        let _ = writeln!(s, "ppo.horizon = {}", self.ppo_horizon);
        let _ = writeln!(s, "ppo.epochs = {}", self.ppo_epochs);
        let _ = writeln!(s, "ppo.minibatch = {}", self.ppo_minibatch);
        let _ = writeln!(s, "ppo.entropy_coef = {:?}", self.ppo_entropy_coef);
        let _ = writeln!(s, "ppo.value_coef = {:?}", self.ppo_value_coef);
        let _ = writeln!(s, "ppo.lr = {:?}", self.ppo_lr);
        let _ = writeln!(s, "ppo.frame_stack = {}", self.ppo_frame_stack);
        let _ = writeln!(s, "curriculum.kind = {}", self.curriculum_kind.as_str());
        let _ = writeln!(s, "curriculum.n = {}", self.curriculum_n);
        let _ = writeln!(
            s,
            "curriculum.stages = {}",
            stages_to_string(&self.curriculum_stages)
        );
        let _ = writeln!(s, "curriculum.f_start = {:?}", self.curriculum_f_start);
        let _ = writeln!(s, "curriculum.f_end = {:?}", self.curriculum_f_end);
        let _ = writeln!(
            s,
            "curriculum.ramp_episodes = {}",
            self.curriculum_ramp_episodes
        );
        let _ = writeln!(
            s,
            "curriculum.stage_scale = {:?}",
            self.curriculum_stage_scale
        );
        let _ = writeln!(s, "training.episodes = {}", self.training_episodes);
        let _ = writeln!(s, "training.max_env_steps = {}", self.training_max_env_steps);
        let _ = writeln!(s, "evaluation.suite_size = {}", self.evaluation_suite_size);
        let _ = writeln!(s, "evaluation.suite_seed = {}", self.evaluation_suite_seed);
        s
    }

    /// The curriculum schedule this config describes, stage-scale
    /// applied.
    pub fn schedule(&self) -> CurriculumSchedule {
        let schedule = match self.curriculum_kind {
            CurriculumKind::PointNav => CurriculumSchedule::PointNav,
            CurriculumKind::Wp => CurriculumSchedule::Wpn(self.curriculum_n),
            CurriculumKind::Swp => CurriculumSchedule::Swpn(self.curriculum_stages.clone()),
            CurriculumKind::Fwp => CurriculumSchedule::Fwp {
                f_start: self.curriculum_f_start,
                f_end: self.curriculum_f_end,
                ramp_episodes: self.curriculum_ramp_episodes,
            },
        };
        schedule.scaled(self.curriculum_stage_scale)
    }
}
