//! PPO actor-critic over the compact navigation state: frame-stacked
//! latent embeddings plus pointgoal and heading features, a tanh trunk
//! with separate policy and value heads, clipped-surrogate updates with
//! GAE advantages.

use crate::curriculum::{plan_episode_goals, CurriculumError, CurriculumSchedule, EpisodeSampler};
use crate::env::{
    run_episode, Action, ActionSource, EnvError, Observation, SensorConfig,
    DEFAULT_MAX_STEPS,
};
use crate::grid::OccupancyGrid;
use crate::nn::{
    clip_global_norm, load_checkpoint, log_softmax, matvec, orthogonal_init, save_checkpoint,
    softmax, Activation, AdamConfig, AdamState, NnError, NodeId, ParamId, ParamStore, Tape,
};
use crate::perception::{EncodeMode, LatentEmbedding, PerceptionError, TwinVae};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("training diverged: {0}")]
    DivergedTraining(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// PPO hyperparameters and network shape.
#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub epochs_per_update: usize,
    pub minibatch: usize,
    pub horizon: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub frame_stack: usize,
    pub trunk: (usize, usize),
    pub head_hidden: usize,
    pub grad_clip: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            clip_eps: 0.1,
            gae_lambda: 1.0,
            epochs_per_update: 4,
            minibatch: 64,
            horizon: 2048,
            value_coef: 0.5,
            entropy_coef: 0.0,
            lr: 2.5e-4,
            frame_stack: 4,
            trunk: (512, 256),
            head_hidden: 256,
            grad_clip: 0.5,
        }
    }
}

/// Per-frame feature vector: both latents, pointgoal distance, bearing
/// sine/cosine, heading sine/cosine.
pub fn state_features(emb: &LatentEmbedding, obs: &Observation) -> Vec<f64> {
    let mut f = Vec::with_capacity(emb.z_depth.len() + emb.z_patch.len() + 5);
    f.extend_from_slice(&emb.z_depth);
    f.extend_from_slice(&emb.z_patch);
    f.push(obs.pointgoal.0);
    f.push(obs.pointgoal.1.sin());
    f.push(obs.pointgoal.1.cos());
    f.push(obs.heading.sin());
    f.push(obs.heading.cos());
    f
}

/// Observation memory replacing a recurrent layer: the network sees the
/// last `depth` frames concatenated oldest-first.
#[derive(Debug, Clone)]
pub struct FrameStack {
    depth: usize,
    frames: Vec<Vec<f64>>,
}

impl FrameStack {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            frames: Vec::new(),
        }
    }

    /// Fills the stack with copies of the episode's first frame.
    pub fn reset(&mut self, frame: Vec<f64>) {
        self.frames = vec![frame; self.depth];
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        self.frames.remove(0);
        self.frames.push(frame);
    }

    pub fn state(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    w: ParamId,
    b: ParamId,
}

/// Actor-critic: shared tanh trunk, a tanh hidden layer per head, three
/// action logits and a scalar value.
#[derive(Debug, Clone)]
pub struct PolicyNetwork {
    pub params: ParamStore,
    pub frame_dim: usize,
    pub frame_stack: usize,
    trunk0: LayerIds,
    trunk1: LayerIds,
    pi0: LayerIds,
    pi1: LayerIds,
    v0: LayerIds,
    v1: LayerIds,
    trunk_dims: (usize, usize),
    head_hidden: usize,
}

/// Action selection mode: sample from the softmax (training) or take the
/// most probable action (test).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

impl PolicyNetwork {
    pub fn input_dim(&self) -> usize {
        self.frame_dim * self.frame_stack
    }

    pub fn new(n_z: usize, cfg: &PpoConfig, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame_dim = 2 * n_z + 5;
        let input = frame_dim * cfg.frame_stack;
        let (t0, t1) = cfg.trunk;
        let h = cfg.head_hidden;
        let mut ps = ParamStore::new();
        let layer = |ps: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng|
         -> Result<LayerIds, NnError> {
            let w = ps.add(
                format!("{name}.w"),
                vec![rows, cols],
                orthogonal_init(rows, cols, 1.0, rng),
            )?;
            let b = ps.add(format!("{name}.b"), vec![rows], vec![0.0; rows])?;
            Ok(LayerIds { w, b })
        };
        let trunk0 = layer(&mut ps, "policy.trunk0", t0, input, &mut rng)?;
        let trunk1 = layer(&mut ps, "policy.trunk1", t1, t0, &mut rng)?;
        let pi0 = layer(&mut ps, "policy.pi0", h, t1, &mut rng)?;
        let pi1 = layer(&mut ps, "policy.pi1", Action::COUNT, h, &mut rng)?;
        let v0 = layer(&mut ps, "policy.v0", h, t1, &mut rng)?;
        let v1 = layer(&mut ps, "policy.v1", 1, h, &mut rng)?;
        Ok(Self {
            params: ps,
            frame_dim,
            frame_stack: cfg.frame_stack,
            trunk0,
            trunk1,
            pi0,
            pi1,
            v0,
            v1,
            trunk_dims: (t0, t1),
            head_hidden: h,
        })
    }

    fn wire(
        params: ParamStore,
        frame_dim: usize,
        frame_stack: usize,
        trunk_dims: (usize, usize),
        head_hidden: usize,
    ) -> Result<Self, NnError> {
        let ids = |name: &str| -> Result<LayerIds, NnError> {
            Ok(LayerIds {
                w: params.id_of(&format!("{name}.w"))?,
                b: params.id_of(&format!("{name}.b"))?,
            })
        };
        let trunk0 = ids("policy.trunk0")?;
        let trunk1 = ids("policy.trunk1")?;
        let pi0 = ids("policy.pi0")?;
        let pi1 = ids("policy.pi1")?;
        let v0 = ids("policy.v0")?;
        let v1 = ids("policy.v1")?;
        Ok(Self {
            params,
            frame_dim,
            frame_stack,
            trunk0,
            trunk1,
            pi0,
            pi1,
            v0,
            v1,
            trunk_dims,
            head_hidden,
        })
    }

    fn layer_plain(&self, ids: LayerIds, x: &[f64], act: Activation) -> Vec<f64> {
        let w = self.params.get(ids.w);
        let b = self.params.get(ids.b);
        let mut out = vec![0.0; w.shape[0]];
        matvec(&w.values, w.shape[0], w.shape[1], x, &b.values, &mut out);
        out.iter_mut().for_each(|v| *v = act.apply(*v));
        out
    }

    /// Untaped forward pass: (logits, value).
    pub fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, f64), NnError> {
        if state.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                what: "policy state",
                expected: self.input_dim(),
                got: state.len(),
            });
        }
        let t0 = self.layer_plain(self.trunk0, state, Activation::Tanh);
        let t1 = self.layer_plain(self.trunk1, &t0, Activation::Tanh);
        let p0 = self.layer_plain(self.pi0, &t1, Activation::Tanh);
        let logits = self.layer_plain(self.pi1, &p0, Activation::Identity);
        let v0 = self.layer_plain(self.v0, &t1, Activation::Tanh);
        let value = self.layer_plain(self.v1, &v0, Activation::Identity)[0];
        Ok((logits, value))
    }

    /// Taped forward pass for updates: (logits node, value node).
    pub fn forward_tape(&self, tape: &mut Tape, state: NodeId) -> Result<(NodeId, NodeId), NnError> {
        let t0 = tape.dense(&self.params, state, self.trunk0.w, self.trunk0.b, Activation::Tanh)?;
        let t1 = tape.dense(&self.params, t0, self.trunk1.w, self.trunk1.b, Activation::Tanh)?;
        let p0 = tape.dense(&self.params, t1, self.pi0.w, self.pi0.b, Activation::Tanh)?;
        let logits = tape.dense(&self.params, p0, self.pi1.w, self.pi1.b, Activation::Identity)?;
        let v0 = tape.dense(&self.params, t1, self.v0.w, self.v0.b, Activation::Tanh)?;
        let value = tape.dense(&self.params, v0, self.v1.w, self.v1.b, Activation::Identity)?;
        Ok((logits, value))
    }

    /// Batched taped forward: rows x input states to (rows x actions
    /// logits, rows x 1 values).
    pub fn forward_tape_batch(
        &self,
        tape: &mut Tape,
        states: NodeId,
    ) -> Result<(NodeId, NodeId), NnError> {
        let t0 = tape.dense_batch(&self.params, states, self.trunk0.w, self.trunk0.b, Activation::Tanh)?;
        let t1 = tape.dense_batch(&self.params, t0, self.trunk1.w, self.trunk1.b, Activation::Tanh)?;
        let p0 = tape.dense_batch(&self.params, t1, self.pi0.w, self.pi0.b, Activation::Tanh)?;
        let logits = tape.dense_batch(&self.params, p0, self.pi1.w, self.pi1.b, Activation::Identity)?;
        let v0 = tape.dense_batch(&self.params, t1, self.v0.w, self.v0.b, Activation::Tanh)?;
        let value = tape.dense_batch(&self.params, v0, self.v1.w, self.v1.b, Activation::Identity)?;
        Ok((logits, value))
    }

    /// Chooses an action. Greedy mode is deterministic (ties break to the
    /// lowest action id) and never touches the RNG.
    pub fn act(
        &self,
        state: &[f64],
        mode: ActMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Action, f64, f64), NnError> {
        let (logits, value) = self.forward(state)?;
        let probs = softmax(&logits)?;
        let idx = match mode {
            ActMode::Greedy => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                best
            }
            ActMode::Sample => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                chosen
            }
        };
        let lp = log_softmax(&logits)?[idx];
        Ok((Action::from_id(idx).expect("3 actions"), lp, value))
    }

    /// Serializes the network with shape metadata.
    pub fn save(&self, extra_metadata: &[(String, String)]) -> Vec<u8> {
        let mut meta = vec![
            ("component".to_string(), "policy".to_string()),
            ("frame_dim".to_string(), self.frame_dim.to_string()),
            ("frame_stack".to_string(), self.frame_stack.to_string()),
            (
                "trunk".to_string(),
                format!("{},{}", self.trunk_dims.0, self.trunk_dims.1),
            ),
            ("head_hidden".to_string(), self.head_hidden.to_string()),
        ];
        meta.extend_from_slice(extra_metadata);
        save_checkpoint(&self.params, &meta)
    }

    /// Restores a network and its metadata from checkpoint bytes.
    pub fn load(bytes: &[u8]) -> Result<(Self, Vec<(String, String)>), NnError> {
        let loaded = load_checkpoint(bytes)?;
        let get = |key: &str| -> Result<String, NnError> {
            loaded
                .meta(key)
                .map(str::to_string)
                .ok_or(NnError::UnknownParam(format!("metadata {key}")))
        };
        let frame_dim: usize = get("frame_dim")?
            .parse()
            .map_err(|_| NnError::UnknownParam("frame_dim".into()))?;
        let frame_stack: usize = get("frame_stack")?
            .parse()
            .map_err(|_| NnError::UnknownParam("frame_stack".into()))?;
        let trunk_raw = get("trunk")?;
        let mut it = trunk_raw.split(',');
        let t0: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(NnError::UnknownParam("trunk".into()))?;
        let t1: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(NnError::UnknownParam("trunk".into()))?;
        let head_hidden: usize = get("head_hidden")?
            .parse()
            .map_err(|_| NnError::UnknownParam("head_hidden".into()))?;
        let metadata = loaded.metadata.clone();
        let net = Self::wire(loaded.params, frame_dim, frame_stack, (t0, t1), head_hidden)?;
        Ok((net, metadata))
    }
}

/// Generalized advantage estimation. With lambda = 1 the advantages equal
/// the discounted returns minus the value baseline.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(NnError::ShapeMismatch {
            what: "gae lengths",
            expected: n,
            got: values.len().min(dones.len()),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap_value
        };
        let delta = rewards[t] + gamma * next_value * mask - values[t];
        gae = delta + gamma * lambda * mask * gae;
        advantages[t] = gae;
    }
    let returns = advantages
        .iter()
        .zip(values.iter())
        .map(|(a, v)| a + v)
        .collect();
    Ok((advantages, returns))
}

/// Normalizes advantages to zero mean and unit deviation (std floored at
/// 1e-8), as applied once per update.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    advantages.iter().map(|a| (a - mean) / std).collect()
}

/// Component nodes of one PPO minibatch loss.
pub struct PpoLossNodes {
    pub total: NodeId,
    pub policy: NodeId,
    pub value: NodeId,
    pub entropy: NodeId,
}

/// Builds the clipped-surrogate PPO loss for one minibatch on the tape:
/// `-mean(min(ratio*A, clip(ratio)*A)) + value_coef*mse(V, returns)
/// - entropy_coef*mean(entropy)`.
pub fn ppo_loss_on_tape(
    net: &PolicyNetwork,
    tape: &mut Tape,
    states: &[Vec<f64>],
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<PpoLossNodes, NnError> {
    let n = states.len();
    if [actions.len(), old_log_probs.len(), advantages.len(), returns.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(NnError::ShapeMismatch {
            what: "ppo batch",
            expected: n,
            got: actions.len(),
        });
    }
    let input_dim = net.input_dim();
    let mut flat = Vec::with_capacity(n * input_dim);
    for s in states {
        if s.len() != input_dim {
            return Err(NnError::ShapeMismatch {
                what: "ppo state",
                expected: input_dim,
                got: s.len(),
            });
        }
        flat.extend_from_slice(s);
    }
    let x = tape.input_mat(flat, n);
    let (logits, values) = net.forward_tape_batch(tape, x)?;
    let lp = tape.log_prob_rows(logits, actions)?;
    let neg_old: Vec<f64> = old_log_probs.iter().map(|v| -v).collect();
    let shifted = tape.add_const_vec(lp, &neg_old)?;
    let ratio = tape.exp(shifted);
    let surr1 = tape.mul_const_vec(ratio, advantages)?;
    let clipped = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surr2 = tape.mul_const_vec(clipped, advantages)?;
    let surrogate = tape.min2(surr1, surr2)?;
    let pol_sum = tape.sum_vec(surrogate);
    let policy = tape.affine(pol_sum, -1.0 / n as f64, 0.0);
    let vdiff = tape.sq_err_rows(values, returns)?;
    let val_sum = tape.sum_vec(vdiff);
    let value = tape.affine(val_sum, cfg.value_coef / n as f64, 0.0);
    let ent = tape.entropy_rows(logits)?;
    let ent_sum = tape.sum_vec(ent);
    let entropy = tape.affine(ent_sum, 1.0 / n as f64, 0.0);
    let neg_entropy = tape.affine(entropy, -cfg.entropy_coef, 0.0);
    let total = tape.sum_many(&[policy, value, neg_entropy]);
    if !tape.scalar(total).is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    Ok(PpoLossNodes {
        total,
        policy,
        value,
        entropy,
    })
}

/// Per-step transitions collected between updates; cleared after each
/// update.
#[derive(Debug, Default)]
pub struct RolloutBuffer {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn clear(&mut self) {
        self.states.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
    }
}

/// Long-lived rollout state: the frame stack, the RNG streams, and the
/// per-step records captured during training.
pub struct ActorState {
    frames: FrameStack,
    action_rng: ChaCha8Rng,
    encode_rng: ChaCha8Rng,
    pub records: Vec<(Vec<f64>, usize, f64, f64)>,
}

impl ActorState {
    pub fn new(frame_depth: usize, action_seed: u64, encode_seed: u64) -> Self {
        Self {
            frames: FrameStack::new(frame_depth),
            action_rng: ChaCha8Rng::seed_from_u64(action_seed),
            encode_rng: ChaCha8Rng::seed_from_u64(encode_seed),
            records: Vec::new(),
        }
    }

    /// Clears per-episode memory (the frame stack refills on first use).
    pub fn start_episode(&mut self) {
        let depth = self.frames.depth;
        self.frames = FrameStack::new(depth);
    }
}

/// Acts on observations through the frozen encoder and the policy
/// network; in recording mode it captures (state, action, log-prob,
/// value) per step. Borrows the network only for the episode.
pub struct NetActor<'a> {
    pub net: &'a PolicyNetwork,
    pub vae: &'a TwinVae,
    pub encode_mode: EncodeMode,
    pub mode: ActMode,
    pub state: &'a mut ActorState,
    pub recording: bool,
}

impl ActionSource for NetActor<'_> {
    fn next_action(&mut self, obs: &Observation) -> Action {
        let emb = self
            .vae
            .encode(obs, self.encode_mode, &mut self.state.encode_rng)
            .expect("encoder validated before rollout");
        let frame = state_features(&emb, obs);
        if self.state.frames.is_empty() {
            self.state.frames.reset(frame);
        } else {
            self.state.frames.push(frame);
        }
        let stacked = self.state.frames.state();
        let (action, lp, value) = self
            .net
            .act(&stacked, self.mode, &mut self.state.action_rng)
            .expect("state width fixed by construction");
        if self.recording {
            self.state.records.push((stacked, action.id(), lp, value));
        }
        action
    }
}

/// Stop conditions for training; whichever budget is hit first ends the
/// run at an episode boundary.
#[derive(Debug, Clone, Copy)]
pub struct TrainBudget {
    pub max_episodes: u64,
    pub max_env_steps: u64,
}

/// Everything a training run needs besides the map and the encoder.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub ppo: PpoConfig,
    pub schedule: CurriculumSchedule,
    pub encode_mode: EncodeMode,
    pub budget: TrainBudget,
    pub seed: u64,
    pub episode_max_steps: usize,
    pub sensors: SensorConfig,
}

impl TrainOptions {
    pub fn new(schedule: CurriculumSchedule, budget: TrainBudget, seed: u64) -> Self {
        Self {
            ppo: PpoConfig::default(),
            schedule,
            encode_mode: EncodeMode::SampleZ,
            budget,
            seed,
            episode_max_steps: DEFAULT_MAX_STEPS,
            sensors: SensorConfig::default(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub episode: u64,
    pub stage: String,
    pub steps: usize,
    pub success: bool,
    pub spl: f64,
    pub ret: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub policy: PolicyNetwork,
    pub log: Vec<EpisodeLog>,
    pub env_steps: u64,
    pub updates: u64,
}

/// Trains a policy with PPO under the given curriculum using the
/// standard episode sampler. The encoder is frozen (taken by shared
/// reference); a fixed seed makes the outcome bit-reproducible.
/// `init_from` starts from existing policy weights for fine-tuning.
pub fn train(
    grid: &OccupancyGrid,
    vae: &TwinVae,
    opts: &TrainOptions,
    init_from: Option<PolicyNetwork>,
) -> Result<TrainOutcome, AgentError> {
    let mut sampler = EpisodeSampler::new(grid, opts.seed.wrapping_add(10));
    sampler.max_steps = opts.episode_max_steps;
    train_with_source(grid, vae, opts, init_from, &mut sampler)
}

/// As `train`, drawing episodes from a caller-supplied source.
pub fn train_with_source(
    grid: &OccupancyGrid,
    vae: &TwinVae,
    opts: &TrainOptions,
    init_from: Option<PolicyNetwork>,
    source: &mut dyn crate::curriculum::EpisodeSource,
) -> Result<TrainOutcome, AgentError> {
    if !vae.trained && !vae.ablation_allow_untrained {
        return Err(PerceptionError::UntrainedEncoder.into());
    }
    opts.schedule.validate()?;
    let frame_dim = 2 * vae.config.n_z + 5;
    let net = match init_from {
        Some(net) => {
            if net.frame_dim != frame_dim {
                return Err(NnError::ShapeMismatch {
                    what: "policy frame width vs encoder",
                    expected: frame_dim,
                    got: net.frame_dim,
                }
                .into());
            }
            net
        }
        None => PolicyNetwork::new(vae.config.n_z, &opts.ppo, opts.seed.wrapping_add(14))?,
    };
    let mut net = net;
    let mut adam = AdamState::new(&net.params, AdamConfig::with_lr(opts.ppo.lr));
    let mut actor_state = ActorState::new(
        opts.ppo.frame_stack,
        opts.seed.wrapping_add(11),
        opts.seed.wrapping_add(13),
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(12));

    let mut buffer = RolloutBuffer::default();
    let mut log = Vec::new();
    let mut env_steps: u64 = 0;
    let mut updates: u64 = 0;
    let mut episode: u64 = 0;

    while episode < opts.budget.max_episodes && env_steps < opts.budget.max_env_steps {
        let (spec, goal_field) = source.next_episode()?;
        actor_state.start_episode();
        let trace = {
            let mut actor = NetActor {
                net: &net,
                vae,
                encode_mode: opts.encode_mode,
                mode: ActMode::Sample,
                state: &mut actor_state,
                recording: true,
            };
            match &opts.schedule {
                CurriculumSchedule::PointNav => {
                    let mut goals = crate::curriculum::EpisodeGoals::single_with_field(
                        grid,
                        spec.goal,
                        goal_field,
                    );
                    run_episode(&spec, grid, &opts.sensors, &mut actor, &mut goals)?
                }
                schedule => {
                    let path = source.plan_path(&spec)?;
                    let mut goals = plan_episode_goals(schedule, episode, &path, grid)?;
                    run_episode(&spec, grid, &opts.sensors, &mut actor, &mut goals)?
                }
            }
        };
        debug_assert_eq!(actor_state.records.len(), trace.steps.len());

        env_steps += trace.step_count() as u64;
        for (k, (state, action, lp, value)) in actor_state.records.drain(..).enumerate() {
            buffer.states.push(state);
            buffer.actions.push(action);
            buffer.log_probs.push(lp);
            buffer.values.push(value);
            buffer.rewards.push(trace.steps[k].reward);
            buffer.dones.push(k + 1 == trace.steps.len());
        }

        log.push(EpisodeLog {
            episode,
            stage: opts.schedule.stage_label(episode),
            steps: trace.step_count(),
            success: trace.success,
            spl: trace.piecewise_spl(),
            ret: trace.total_reward(),
        });
        episode += 1;

        if buffer.len() >= opts.ppo.horizon {
            update(&mut net, &mut adam, &buffer, &mut shuffle_rng, &opts.ppo)?;
            updates += 1;
            buffer.clear();
        }
    }

    Ok(TrainOutcome {
        policy: net,
        log,
        env_steps,
        updates,
    })
}

/// One PPO update: GAE over the buffer, advantage normalization, then
/// `epochs * ceil(n / minibatch)` clipped-surrogate steps.
fn update(
    net: &mut PolicyNetwork,
    adam: &mut AdamState,
    buffer: &RolloutBuffer,
    shuffle_rng: &mut ChaCha8Rng,
    cfg: &PpoConfig,
) -> Result<(), AgentError> {
    // Episodes in the buffer are complete, so nothing bootstraps past
    // the final step.
    let (advantages, returns) = compute_gae(
        &buffer.rewards,
        &buffer.values,
        &buffer.dones,
        0.0,
        cfg.gamma,
        cfg.gae_lambda,
    )?;
    let advantages = normalize_advantages(&advantages);
    let n = buffer.len();
    let mut indices: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs_per_update {
        // Fisher-Yates off the dedicated stream keeps runs reproducible.
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        for chunk in indices.chunks(cfg.minibatch) {
            let states: Vec<Vec<f64>> = chunk.iter().map(|&i| buffer.states[i].clone()).collect();
            let actions: Vec<usize> = chunk.iter().map(|&i| buffer.actions[i]).collect();
            let old_lps: Vec<f64> = chunk.iter().map(|&i| buffer.log_probs[i]).collect();
            let advs: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let rets: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let mut tape = Tape::new();
            let nodes = ppo_loss_on_tape(
                net, &mut tape, &states, &actions, &old_lps, &advs, &rets, cfg,
            )
            .map_err(|e| match e {
                NnError::NonFiniteLoss => AgentError::DivergedTraining("non-finite loss".into()),
                other => AgentError::Nn(other),
            })?;
            tape.backward(nodes.total, &mut net.params)?;
            clip_global_norm(&mut net.params, cfg.grad_clip);
            adam.apply(&mut net.params).map_err(|e| match e {
                NnError::NonFiniteGradient(name) => {
                    AgentError::DivergedTraining(format!("non-finite gradient in {name}"))
                }
                other => AgentError::Nn(other),
            })?;
        }
    }
    net.params
        .assert_values_finite()
        .map_err(|_| AgentError::DivergedTraining("non-finite parameters".into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> PpoConfig {
        PpoConfig {
            trunk: (16, 12),
            head_hidden: 8,
            frame_stack: 2,
            minibatch: 8,
            horizon: 64,
            ..PpoConfig::default()
        }
    }

    fn force_logits(net: &mut PolicyNetwork, logits: [f64; 3]) {
        let w = net.params.id_of("policy.pi1.w").unwrap();
        let b = net.params.id_of("policy.pi1.b").unwrap();
        net.params.get_mut(w).values.iter_mut().for_each(|v| *v = 0.0);
        net.params.get_mut(b).values.copy_from_slice(&logits);
    }

    #[test]
    fn greedy_takes_the_dominant_logit() {
        let mut net = PolicyNetwork::new(4, &tiny_cfg(), 1).unwrap();
        force_logits(&mut net, [10.0, 0.0, 0.0]);
        let state = vec![0.1; net.input_dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (action, lp, _v) = net.act(&state, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(action, Action::Forward);
        assert!(lp.exp() > 0.9999);
    }

    #[test]
    fn greedy_is_deterministic_and_seed_free() {
        let net = PolicyNetwork::new(4, &tiny_cfg(), 2).unwrap();
        let state = vec![0.3; net.input_dim()];
        let mut rng1 = ChaCha8Rng::seed_from_u64(1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(999);
        let a = net.act(&state, ActMode::Greedy, &mut rng1).unwrap();
        let b = net.act(&state, ActMode::Greedy, &mut rng2).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut net = PolicyNetwork::new(4, &tiny_cfg(), 3).unwrap();
        force_logits(&mut net, [0.0, 0.0, 0.0]);
        let state = vec![0.0; net.input_dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            let (a, _, _) = net.act(&state, ActMode::Sample, &mut rng).unwrap();
            counts[a.id()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn wrong_state_width_is_shape_mismatch() {
        let net = PolicyNetwork::new(4, &tiny_cfg(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            net.act(&[0.0; 3], ActMode::Greedy, &mut rng),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn greedy_argmax_shift_invariant() {
        let logits = [0.3, -0.2, 1.1];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.456).collect();
        let p1 = softmax(&logits).unwrap();
        let p2 = softmax(&shifted).unwrap();
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&p1), argmax(&p2));
    }

    #[test]
    fn gae_two_step_example() {
        let (adv, ret) =
            compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[false, true], 0.0, 0.95, 1.0).unwrap();
        assert!((adv[0] - 1.95).abs() < 1e-12);
        assert!((adv[1] - 1.0).abs() < 1e-12);
        assert_eq!(ret, adv);
    }

    #[test]
    fn gae_zeros_give_zeros() {
        let (adv, _) = compute_gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.95, 1.0).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    /// O(T^2) brute-force GAE: sums (gamma*lambda)^l * delta_{t+l} with
    /// done masking applied through products.
    fn gae_brute_force(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        bootstrap: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = rewards.len();
        let delta = |t: usize| {
            let mask = if dones[t] { 0.0 } else { 1.0 };
            let next = if t + 1 < n { values[t + 1] } else { bootstrap };
            rewards[t] + gamma * next * mask - values[t]
        };
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut weight = 1.0;
                for l in t..n {
                    total += weight * delta(l);
                    if dones[l] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn gae_matches_brute_force_for_general_parameters() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 50;
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
            let bootstrap = rng.gen_range(-1.0..1.0);
            let gamma = rng.gen_range(0.5..1.0);
            let lambda = rng.gen_range(0.0..1.0);
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
            let brute = gae_brute_force(&rewards, &values, &dones, bootstrap, gamma, lambda);
            for (a, b) in adv.iter().zip(brute.iter()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            for ((r, a), v) in ret.iter().zip(adv.iter()).zip(values.iter()) {
                assert!((r - (a + v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_one_reduces_to_discounted_return_minus_value() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 60;
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut dones = vec![false; n];
        dones[29] = true;
        dones[n - 1] = true;
        let gamma = 0.95;
        let (adv, _) = compute_gae(&rewards, &values, &dones, 0.0, gamma, 1.0).unwrap();
        // Discounted return from t within the episode segment.
        for t in 0..n {
            let mut g = 0.0;
            let mut w = 1.0;
            for l in t..n {
                g += w * rewards[l];
                if dones[l] {
                    break;
                }
                w *= gamma;
            }
            assert!((adv[t] - (g - values[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn ratio_one_gives_zero_policy_term_after_normalization() {
        use rand::Rng;
        let net = PolicyNetwork::new(3, &tiny_cfg(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 16;
        let states: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut actions = Vec::new();
        let mut old_lps = Vec::new();
        for s in &states {
            let (a, lp, _) = net.act(s, ActMode::Sample, &mut rng).unwrap();
            actions.push(a.id());
            old_lps.push(lp);
        }
        let advs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let advs = normalize_advantages(&advs);
        let rets = vec![0.0; n];
        let mut tape = Tape::new();
        let nodes = ppo_loss_on_tape(
            &net,
            &mut tape,
            &states,
            &actions,
            &old_lps,
            &advs,
            &rets,
            &PpoConfig::default(),
        )
        .unwrap();
        assert!(tape.scalar(nodes.policy).abs() < 1e-12);
    }

    #[test]
    fn clip_arithmetic_single_sample() {
        // ratio 1.3, advantage 1, eps 0.1: clipped term wins at -1.1.
        let net = PolicyNetwork::new(3, &tiny_cfg(), 10).unwrap();
        let state = vec![0.2; net.input_dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, lp, _) = net.act(&state, ActMode::Sample, &mut rng).unwrap();
        let old_lp = lp - 1.3f64.ln();
        let mut tape = Tape::new();
        let nodes = ppo_loss_on_tape(
            &net,
            &mut tape,
            &[state],
            &[a.id()],
            &[old_lp],
            &[1.0],
            &[0.0],
            &PpoConfig::default(),
        )
        .unwrap();
        assert!((tape.scalar(nodes.policy) - (-1.1)).abs() < 1e-12);
    }

    #[test]
    fn saturated_clip_has_zero_policy_gradient() {
        // ratio 1.5 > 1 + eps with positive advantage: the clipped branch
        // is active and constant, so no gradient reaches the parameters.
        let mut net = PolicyNetwork::new(3, &tiny_cfg(), 11).unwrap();
        let state = vec![0.4; net.input_dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, lp, _) = net.act(&state, ActMode::Sample, &mut rng).unwrap();
        let old_lp = lp - 1.5f64.ln();
        let mut tape = Tape::new();
        let s = tape.input(state.clone());
        let (logits, _value) = net.forward_tape(&mut tape, s).unwrap();
        let lp_node = tape.log_prob(logits, a.id()).unwrap();
        let shifted = tape.affine(lp_node, 1.0, -old_lp);
        let ratio = tape.exp(shifted);
        let cfg = PpoConfig::default();
        let surr1 = tape.affine(ratio, 1.0, 0.0);
        let clipped = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let surr2 = tape.affine(clipped, 1.0, 0.0);
        let m = tape.min2(surr1, surr2).unwrap();
        let loss = tape.affine(m, -1.0, 0.0);
        tape.backward(loss, &mut net.params).unwrap();
        for t in net.params.iter() {
            assert!(t.grad.iter().all(|&g| g == 0.0), "gradient in {}", t.name);
        }
    }

    #[test]
    fn batched_loss_matches_per_sample_composition() {
        use rand::Rng;
        let mut net = PolicyNetwork::new(3, &tiny_cfg(), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let states: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut actions = Vec::new();
        let mut old_lps = Vec::new();
        for s in &states {
            let (a, lp, _) = net.act(s, ActMode::Sample, &mut rng).unwrap();
            actions.push(a.id());
            old_lps.push(lp + rng.gen_range(-0.2..0.2));
        }
        let advs =
            normalize_advantages(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let rets: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = PpoConfig {
            entropy_coef: 0.02,
            ..PpoConfig::default()
        };

        // Batched path.
        let mut tape = Tape::new();
        let nodes = ppo_loss_on_tape(
            &net, &mut tape, &states, &actions, &old_lps, &advs, &rets, &cfg,
        )
        .unwrap();
        let batched_total = tape.scalar(nodes.total);
        tape.backward(nodes.total, &mut net.params).unwrap();
        let batched_grads: Vec<Vec<f64>> = net.params.iter().map(|t| t.grad.clone()).collect();
        net.params.zero_grads();

        // Per-sample composition of the same objective.
        let mut tape = Tape::new();
        let mut pol = Vec::new();
        let mut val = Vec::new();
        let mut ent = Vec::new();
        for i in 0..n {
            let s = tape.input(states[i].clone());
            let (logits, value) = net.forward_tape(&mut tape, s).unwrap();
            let lp = tape.log_prob(logits, actions[i]).unwrap();
            let shifted = tape.affine(lp, 1.0, -old_lps[i]);
            let ratio = tape.exp(shifted);
            let s1 = tape.affine(ratio, advs[i], 0.0);
            let clipped = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            let s2 = tape.affine(clipped, advs[i], 0.0);
            pol.push(tape.min2(s1, s2).unwrap());
            val.push(tape.sq_err_sum(value, &[rets[i]]).unwrap());
            ent.push(tape.entropy(logits).unwrap());
        }
        let pol_sum = tape.sum_many(&pol);
        let policy = tape.affine(pol_sum, -1.0 / n as f64, 0.0);
        let val_sum = tape.sum_many(&val);
        let value = tape.affine(val_sum, cfg.value_coef / n as f64, 0.0);
        let ent_sum = tape.sum_many(&ent);
        let entropy = tape.affine(ent_sum, 1.0 / n as f64, 0.0);
        let neg = tape.affine(entropy, -cfg.entropy_coef, 0.0);
        let total = tape.sum_many(&[policy, value, neg]);
        let scalar_total = tape.scalar(total);
        tape.backward(total, &mut net.params).unwrap();

        assert!(
            (batched_total - scalar_total).abs() <= 1e-12 * scalar_total.abs().max(1.0),
            "{batched_total} vs {scalar_total}"
        );
        for (t, bg) in net.params.iter().zip(batched_grads.iter()) {
            for (a, b) in t.grad.iter().zip(bg.iter()) {
                assert!(
                    (a - b).abs() <= 1e-11 * a.abs().max(1.0),
                    "{}: {a} vs {b}",
                    t.name
                );
            }
        }
    }

    #[test]
    fn full_ppo_loss_gradients_match_finite_differences() {
        use rand::Rng;
        let mut net = PolicyNetwork::new(2, &tiny_cfg(), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let states: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut actions = Vec::new();
        let mut old_lps = Vec::new();
        for s in &states {
            let (a, lp, _) = net.act(s, ActMode::Sample, &mut rng).unwrap();
            actions.push(a.id());
            // Perturb so ratios straddle the clip boundary.
            old_lps.push(lp + rng.gen_range(-0.3..0.3));
        }
        let advs = normalize_advantages(
            &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
        );
        let rets: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = PpoConfig {
            entropy_coef: 0.01,
            ..PpoConfig::default()
        };

        let mut tape = Tape::new();
        let nodes = ppo_loss_on_tape(
            &net, &mut tape, &states, &actions, &old_lps, &advs, &rets, &cfg,
        )
        .unwrap();
        tape.backward(nodes.total, &mut net.params).unwrap();

        let states_c = states.clone();
        let actions_c = actions.clone();
        let old_c = old_lps.clone();
        let advs_c = advs.clone();
        let rets_c = rets.clone();
        let net_shape = net.clone();
        crate::nn::test_support::finite_difference_check(
            &mut net.params,
            move |ps| {
                let mut probe = net_shape.clone();
                probe.params = ps.clone();
                let mut tape = Tape::new();
                let nodes = ppo_loss_on_tape(
                    &probe, &mut tape, &states_c, &actions_c, &old_c, &advs_c, &rets_c, &cfg,
                )
                .unwrap();
                tape.scalar(nodes.total)
            },
            1e-4,
        );
    }
}
