//! Twin VAE perception: independent depth-scan and patch branches trained
//! on 360-degree sweep data, exposing a frozen encoder that turns an
//! observation into the latent half of the policy state.

use crate::env::{observe, Observation, Pose, SensorConfig, HEADING_STATES};
use crate::grid::OccupancyGrid;
use crate::nn::{
    gaussian_vec, load_checkpoint, orthogonal_init, save_checkpoint, Activation, AdamConfig,
    AdamState, NnError, ParamId, ParamStore, Tape,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("map has too little free space: need {need}, have {have}")]
    InsufficientFreeSpace { need: usize, have: usize },
    #[error("training diverged at iteration {0} (non-finite loss)")]
    DivergedTraining(usize),
    #[error("encoder has not been trained (set the ablation flag to encode anyway)")]
    UntrainedEncoder,
    #[error("malformed dataset or checkpoint contents")]
    MalformedDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Hyperparameters for one VAE branch (both branches share them).
#[derive(Debug, Clone)]
pub struct VaeConfig {
    /// Latent width per branch.
    pub n_z: usize,
    /// Encoder hidden sizes; the decoder mirrors them.
    pub hidden: (usize, usize),
    /// Weight on the KL term.
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub iterations: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            n_z: 16,
            hidden: (256, 128),
            beta: 1.0,
            lr: 1e-3,
            batch: 64,
            iterations: 5000,
        }
    }
}

/// KL(N(mu, exp(logvar)) || N(0, I)) in closed form.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64, PerceptionError> {
    if mu.len() != logvar.len() {
        return Err(NnError::ShapeMismatch {
            what: "kl",
            expected: mu.len(),
            got: logvar.len(),
        }
        .into());
    }
    if mu.iter().chain(logvar.iter()).any(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteInput.into());
    }
    Ok(mu
        .iter()
        .zip(logvar.iter())
        .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
        .sum())
}

/// z = mu + exp(logvar / 2) * noise.
pub fn reparameterize(
    mu: &[f64],
    logvar: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>, PerceptionError> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(NnError::ShapeMismatch {
            what: "reparameterize",
            expected: mu.len(),
            got: logvar.len().max(noise.len()),
        }
        .into());
    }
    Ok(mu
        .iter()
        .zip(logvar.iter())
        .zip(noise.iter())
        .map(|((m, l), n)| m + (0.5 * l).exp() * n)
        .collect())
}

/// L2 reconstruction plus beta-weighted KL.
pub fn vae_loss(
    input: &[f64],
    reconstruction: &[f64],
    mu: &[f64],
    logvar: &[f64],
    beta: f64,
) -> Result<f64, PerceptionError> {
    if input.len() != reconstruction.len() {
        return Err(NnError::ShapeMismatch {
            what: "vae_loss",
            expected: input.len(),
            got: reconstruction.len(),
        }
        .into());
    }
    let recon: f64 = input
        .iter()
        .zip(reconstruction.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(recon + beta * kl_divergence(mu, logvar)?)
}

/// Observations gathered by full-circle sweeps at random free poses,
/// normalized for VAE training: depth by max range, patch already binary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepDataset {
    pub rays: usize,
    pub patch_size: usize,
    pub max_range: f64,
    pub patch_cell: f64,
    pub depth: Vec<Vec<f64>>,
    pub patch: Vec<Vec<f64>>,
}

impl SweepDataset {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    const MAGIC: &'static [u8; 4] = b"NVD1";

    /// Deterministic binary serialization.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.rays as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch_size as u32).to_le_bytes());
        out.extend_from_slice(&self.max_range.to_bits().to_le_bytes());
        out.extend_from_slice(&self.patch_cell.to_bits().to_le_bytes());
        for (d, p) in self.depth.iter().zip(self.patch.iter()) {
            for v in d.iter().chain(p.iter()) {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PerceptionError> {
        if bytes.len() < 36 || &bytes[..4] != Self::MAGIC {
            return Err(PerceptionError::MalformedDataset);
        }
        let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let rays = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let patch_size = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let max_range = f64::from_bits(u64::from_le_bytes(bytes[20..28].try_into().unwrap()));
        let patch_cell = f64::from_bits(u64::from_le_bytes(bytes[28..36].try_into().unwrap()));
        let per = rays + patch_size * patch_size;
        let body = &bytes[36..];
        if body.len() != count * per * 8 {
            return Err(PerceptionError::MalformedDataset);
        }
        let mut depth = Vec::with_capacity(count);
        let mut patch = Vec::with_capacity(count);
        for i in 0..count {
            let base = i * per * 8;
            let read = |k: usize| {
                let off = base + k * 8;
                f64::from_bits(u64::from_le_bytes(body[off..off + 8].try_into().unwrap()))
            };
            depth.push((0..rays).map(read).collect());
            patch.push((rays..per).map(read).collect());
        }
        Ok(Self {
            rays,
            patch_size,
            max_range,
            patch_cell,
            depth,
            patch,
        })
    }
}

/// Samples `n_poses` uniformly random free poses and records observations
/// at all 36 headings of the 360-degree sweep: `n_poses * 36` samples.
pub fn collect_dataset(
    grid: &OccupancyGrid,
    n_poses: usize,
    sensors: &SensorConfig,
    seed: u64,
) -> Result<SweepDataset, PerceptionError> {
    let free = grid.free_cells();
    if free.len() < n_poses {
        return Err(PerceptionError::InsufficientFreeSpace {
            need: n_poses,
            have: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut depth = Vec::with_capacity(n_poses * HEADING_STATES);
    let mut patch = Vec::with_capacity(n_poses * HEADING_STATES);
    for _ in 0..n_poses {
        let (r, c) = free[rng.gen_range(0..free.len())];
        let (cx, cy) = grid.cell_center(r, c);
        let x = cx + rng.gen_range(-0.5..0.5) * grid.cell_size() * 0.9;
        let y = cy + rng.gen_range(-0.5..0.5) * grid.cell_size() * 0.9;
        for k in 0..HEADING_STATES {
            let pose = Pose::at_heading_step(x, y, k);
            let obs = observe(&pose, (x, y), grid, sensors);
            depth.push(obs.depth_scan.iter().map(|d| d / sensors.max_range).collect());
            patch.push(obs.patch);
        }
    }
    Ok(SweepDataset {
        rays: sensors.rays,
        patch_size: sensors.patch_size,
        max_range: sensors.max_range,
        patch_cell: sensors.patch_cell,
        depth,
        patch,
    })
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    w: ParamId,
    b: ParamId,
}

/// One VAE branch: encoder `input -> h1 -> h2 -> 2*n_z` (relu hidden, no
/// activation on the latent layer) and a mirror decoder with a sigmoid
/// output.
#[derive(Debug, Clone)]
pub struct VaeBranch {
    pub input_dim: usize,
    pub n_z: usize,
    enc: [LayerIds; 3],
    dec: [LayerIds; 3],
}

impl VaeBranch {
    fn new(
        ps: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        cfg: &VaeConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let (h1, h2) = cfg.hidden;
        let relu_gain = 2.0f64.sqrt();
        let layer = |ps: &mut ParamStore,
                         name: String,
                         rows: usize,
                         cols: usize,
                         gain: f64,
                         rng: &mut ChaCha8Rng|
         -> Result<LayerIds, NnError> {
            let w = ps.add(
                format!("{name}.w"),
                vec![rows, cols],
                orthogonal_init(rows, cols, gain, rng),
            )?;
            let b = ps.add(format!("{name}.b"), vec![rows], vec![0.0; rows])?;
            Ok(LayerIds { w, b })
        };
        let enc = [
            layer(ps, format!("{prefix}.enc0"), h1, input_dim, relu_gain, rng)?,
            layer(ps, format!("{prefix}.enc1"), h2, h1, relu_gain, rng)?,
            layer(ps, format!("{prefix}.enc2"), 2 * cfg.n_z, h2, 1.0, rng)?,
        ];
        let dec = [
            layer(ps, format!("{prefix}.dec0"), h2, cfg.n_z, relu_gain, rng)?,
            layer(ps, format!("{prefix}.dec1"), h1, h2, relu_gain, rng)?,
            layer(ps, format!("{prefix}.dec2"), input_dim, h1, 1.0, rng)?,
        ];
        Ok(Self {
            input_dim,
            n_z: cfg.n_z,
            enc,
            dec,
        })
    }

    fn wire(ps: &ParamStore, prefix: &str, input_dim: usize, n_z: usize) -> Result<Self, NnError> {
        let ids = |name: String| -> Result<LayerIds, NnError> {
            Ok(LayerIds {
                w: ps.id_of(&format!("{name}.w"))?,
                b: ps.id_of(&format!("{name}.b"))?,
            })
        };
        Ok(Self {
            input_dim,
            n_z,
            enc: [
                ids(format!("{prefix}.enc0"))?,
                ids(format!("{prefix}.enc1"))?,
                ids(format!("{prefix}.enc2"))?,
            ],
            dec: [
                ids(format!("{prefix}.dec0"))?,
                ids(format!("{prefix}.dec1"))?,
                ids(format!("{prefix}.dec2"))?,
            ],
        })
    }

    /// Plain (untaped) encoder pass: returns (mu, logvar).
    pub fn encode_stats(&self, ps: &ParamStore, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = input.to_vec();
        for (i, l) in self.enc.iter().enumerate() {
            let w = ps.get(l.w);
            let b = ps.get(l.b);
            let mut out = vec![0.0; w.shape[0]];
            crate::nn::matvec(&w.values, w.shape[0], w.shape[1], &h, &b.values, &mut out);
            if i < 2 {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        let mu = h[..self.n_z].to_vec();
        let logvar = h[self.n_z..].to_vec();
        (mu, logvar)
    }

    /// Taped forward through encoder, reparameterization, and decoder;
    /// returns the scalar loss node.
    pub fn loss_on_tape(
        &self,
        ps: &ParamStore,
        tape: &mut Tape,
        input: &[f64],
        noise: &[f64],
        beta: f64,
    ) -> Result<crate::nn::NodeId, NnError> {
        let x = tape.input(input.to_vec());
        let e0 = tape.dense(ps, x, self.enc[0].w, self.enc[0].b, Activation::Relu)?;
        let e1 = tape.dense(ps, e0, self.enc[1].w, self.enc[1].b, Activation::Relu)?;
        let stats = tape.dense(ps, e1, self.enc[2].w, self.enc[2].b, Activation::Identity)?;
        let mu = tape.slice(stats, 0, self.n_z);
        let logvar = tape.slice(stats, self.n_z, self.n_z);
        let half = tape.affine(logvar, 0.5, 0.0);
        let sigma = tape.exp(half);
        let eps = tape.input(noise.to_vec());
        let scaled = tape.mul(sigma, eps)?;
        let z = tape.add(mu, scaled)?;
        let d0 = tape.dense(ps, z, self.dec[0].w, self.dec[0].b, Activation::Relu)?;
        let d1 = tape.dense(ps, d0, self.dec[1].w, self.dec[1].b, Activation::Relu)?;
        let recon = tape.dense(ps, d1, self.dec[2].w, self.dec[2].b, Activation::Sigmoid)?;
        let rec_loss = tape.sq_err_sum(recon, input)?;
        let kl = tape.kl_std_normal(mu, logvar)?;
        let weighted = tape.affine(kl, beta, 0.0);
        Ok(tape.sum_many(&[rec_loss, weighted]))
    }

    /// Batched loss over a whole minibatch: returns the scalar mean-loss
    /// node.
    pub fn batch_loss_on_tape(
        &self,
        ps: &ParamStore,
        tape: &mut Tape,
        inputs: &[f64],
        rows: usize,
        noise: &[f64],
        beta: f64,
    ) -> Result<crate::nn::NodeId, NnError> {
        let x = tape.input_mat(inputs.to_vec(), rows);
        let e0 = tape.dense_batch(ps, x, self.enc[0].w, self.enc[0].b, Activation::Relu)?;
        let e1 = tape.dense_batch(ps, e0, self.enc[1].w, self.enc[1].b, Activation::Relu)?;
        let stats = tape.dense_batch(ps, e1, self.enc[2].w, self.enc[2].b, Activation::Identity)?;
        let mu = tape.slice_cols(stats, 0, self.n_z);
        let logvar = tape.slice_cols(stats, self.n_z, self.n_z);
        let half = tape.affine(logvar, 0.5, 0.0);
        let sigma = tape.exp(half);
        let eps = tape.input_mat(noise.to_vec(), rows);
        let scaled = tape.mul(sigma, eps)?;
        let z = tape.add(mu, scaled)?;
        let d0 = tape.dense_batch(ps, z, self.dec[0].w, self.dec[0].b, Activation::Relu)?;
        let d1 = tape.dense_batch(ps, d0, self.dec[1].w, self.dec[1].b, Activation::Relu)?;
        let recon = tape.dense_batch(ps, d1, self.dec[2].w, self.dec[2].b, Activation::Sigmoid)?;
        let rec_rows = tape.sq_err_rows(recon, inputs)?;
        let kl = tape.kl_rows(mu, logvar)?;
        let weighted = tape.affine(kl, beta, 0.0);
        let per_sample = tape.add(rec_rows, weighted)?;
        let total = tape.sum_vec(per_sample);
        Ok(tape.affine(total, 1.0 / rows as f64, 0.0))
    }
}

/// Which latent to hand to the policy: a Gaussian sample or the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    SampleZ,
    MeanMu,
}

impl EncodeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncodeMode::SampleZ => "sample_z",
            EncodeMode::MeanMu => "mean_mu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sample_z" => Some(EncodeMode::SampleZ),
            "mean_mu" => Some(EncodeMode::MeanMu),
            _ => None,
        }
    }
}

/// Concatenable latent embedding of one observation.
#[derive(Debug, Clone)]
pub struct LatentEmbedding {
    pub z_depth: Vec<f64>,
    pub z_patch: Vec<f64>,
    pub mode: EncodeMode,
}

/// Per-iteration mean batch losses.
#[derive(Debug, Clone, Default)]
pub struct VaeLossCurve {
    pub depth: Vec<f64>,
    pub patch: Vec<f64>,
}

/// The two branches plus their shared parameter store.
#[derive(Debug, Clone)]
pub struct TwinVae {
    pub params: ParamStore,
    pub depth: VaeBranch,
    pub patch: VaeBranch,
    pub config: VaeConfig,
    pub max_range: f64,
    pub trained: bool,
    /// Permits encoding with untrained weights for ablations.
    pub ablation_allow_untrained: bool,
}

impl TwinVae {
    pub fn new(sensors: &SensorConfig, config: VaeConfig, seed: u64) -> Result<Self, PerceptionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let depth = VaeBranch::new(&mut params, "vae.depth", sensors.rays, &config, &mut rng)?;
        let patch = VaeBranch::new(
            &mut params,
            "vae.patch",
            sensors.patch_size * sensors.patch_size,
            &config,
            &mut rng,
        )?;
        Ok(Self {
            params,
            depth,
            patch,
            config,
            max_range: sensors.max_range,
            trained: false,
            ablation_allow_untrained: false,
        })
    }

    /// Trains both branches on the sweep dataset with mini-batch Adam.
    pub fn train(&mut self, data: &SweepDataset, seed: u64) -> Result<VaeLossCurve, PerceptionError> {
        if data.is_empty() {
            return Err(PerceptionError::InsufficientFreeSpace { need: 1, have: 0 });
        }
        let depth_curve = self.train_branch(true, &data.depth, seed.wrapping_add(1))?;
        let patch_curve = self.train_branch(false, &data.patch, seed.wrapping_add(2))?;
        self.trained = true;
        Ok(VaeLossCurve {
            depth: depth_curve,
            patch: patch_curve,
        })
    }

    fn train_branch(
        &mut self,
        is_depth: bool,
        samples: &[Vec<f64>],
        seed: u64,
    ) -> Result<Vec<f64>, PerceptionError> {
        let branch = if is_depth { self.depth.clone() } else { self.patch.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adam = AdamState::new(&self.params, AdamConfig::with_lr(self.config.lr));
        let mut curve = Vec::with_capacity(self.config.iterations);
        let batch = self.config.batch;
        for it in 0..self.config.iterations {
            let mut inputs = Vec::with_capacity(batch * branch.input_dim);
            let mut noise = Vec::with_capacity(batch * branch.n_z);
            for _ in 0..batch {
                inputs.extend_from_slice(&samples[rng.gen_range(0..samples.len())]);
                noise.extend(gaussian_vec(branch.n_z, &mut rng));
            }
            let mut tape = Tape::new();
            let mean = branch.batch_loss_on_tape(
                &self.params,
                &mut tape,
                &inputs,
                batch,
                &noise,
                self.config.beta,
            )?;
            let loss_value = tape.scalar(mean);
            if !loss_value.is_finite() {
                return Err(PerceptionError::DivergedTraining(it));
            }
            tape.backward(mean, &mut self.params).map_err(|e| match e {
                NnError::NonFiniteLoss => PerceptionError::DivergedTraining(it),
                other => PerceptionError::Nn(other),
            })?;
            adam.apply(&mut self.params)?;
            curve.push(loss_value);
        }
        Ok(curve)
    }

    /// Mean loss of the current weights over a sample set with noise from
    /// `seed`; compares trained weights against the untrained baseline.
    pub fn mean_loss(&self, samples: &[Vec<f64>], is_depth: bool, seed: u64) -> f64 {
        let branch = if is_depth { &self.depth } else { &self.patch };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for sample in samples {
            let mut tape = Tape::new();
            let noise = gaussian_vec(branch.n_z, &mut rng);
            let loss = branch
                .loss_on_tape(&self.params, &mut tape, sample, &noise, self.config.beta)
                .expect("shapes fixed");
            total += tape.scalar(loss);
        }
        total / samples.len() as f64
    }

    /// Deterministic decoder pass from a latent vector.
    pub fn decode_mean(&self, is_depth: bool, z: &[f64]) -> Vec<f64> {
        let branch = if is_depth { &self.depth } else { &self.patch };
        let mut h = z.to_vec();
        for (i, l) in branch.dec.iter().enumerate() {
            let w = self.params.get(l.w);
            let b = self.params.get(l.b);
            let mut out = vec![0.0; w.shape[0]];
            crate::nn::matvec(&w.values, w.shape[0], w.shape[1], &h, &b.values, &mut out);
            if i < 2 {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                out.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
            }
            h = out;
        }
        h
    }

    /// Mean squared reconstruction error decoding from the latent mean
    /// (no sampling noise); the fit measure reported for trained
    /// branches.
    pub fn mean_reconstruction_error(&self, samples: &[Vec<f64>], is_depth: bool) -> f64 {
        let branch = if is_depth { &self.depth } else { &self.patch };
        let mut total = 0.0;
        for s in samples {
            let (mu, _) = branch.encode_stats(&self.params, s);
            let recon = self.decode_mean(is_depth, &mu);
            total += recon
                .iter()
                .zip(s.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        total / samples.len() as f64
    }

    /// Normalizes an observation exactly as the training data was.
    fn normalized(&self, obs: &Observation) -> (Vec<f64>, Vec<f64>) {
        let depth = obs.depth_scan.iter().map(|d| d / self.max_range).collect();
        (depth, obs.patch.clone())
    }

    /// Encodes an observation into the latent embedding. `MeanMu` is
    /// deterministic; `SampleZ` draws reparameterization noise from `rng`.
    pub fn encode(
        &self,
        obs: &Observation,
        mode: EncodeMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<LatentEmbedding, PerceptionError> {
        if !self.trained && !self.ablation_allow_untrained {
            return Err(PerceptionError::UntrainedEncoder);
        }
        let (depth_in, patch_in) = self.normalized(obs);
        let (dmu, dlv) = self.depth.encode_stats(&self.params, &depth_in);
        let (pmu, plv) = self.patch.encode_stats(&self.params, &patch_in);
        let (z_depth, z_patch) = match mode {
            EncodeMode::MeanMu => (dmu, pmu),
            EncodeMode::SampleZ => {
                let dn = gaussian_vec(self.depth.n_z, rng);
                let pn = gaussian_vec(self.patch.n_z, rng);
                (
                    reparameterize(&dmu, &dlv, &dn)?,
                    reparameterize(&pmu, &plv, &pn)?,
                )
            }
        };
        Ok(LatentEmbedding {
            z_depth,
            z_patch,
            mode,
        })
    }

    /// Serializes weights plus branch geometry.
    pub fn save(&self, extra_metadata: &[(String, String)]) -> Vec<u8> {
        let mut meta = vec![
            ("component".to_string(), "vae".to_string()),
            ("n_z".to_string(), self.config.n_z.to_string()),
            (
                "hidden".to_string(),
                format!("{},{}", self.config.hidden.0, self.config.hidden.1),
            ),
            ("beta".to_string(), format!("{:?}", self.config.beta)),
            ("depth_input".to_string(), self.depth.input_dim.to_string()),
            ("patch_input".to_string(), self.patch.input_dim.to_string()),
            ("max_range".to_string(), format!("{:?}", self.max_range)),
            ("trained".to_string(), self.trained.to_string()),
        ];
        meta.extend_from_slice(extra_metadata);
        save_checkpoint(&self.params, &meta)
    }

    pub fn load(bytes: &[u8]) -> Result<Self, PerceptionError> {
        let loaded = load_checkpoint(bytes)?;
        let get = |key: &str| -> Result<String, PerceptionError> {
            loaded
                .meta(key)
                .map(str::to_string)
                .ok_or(PerceptionError::MalformedDataset)
        };
        let parse_usize = |s: String| s.parse::<usize>().map_err(|_| PerceptionError::MalformedDataset);
        let parse_f64 = |s: String| s.parse::<f64>().map_err(|_| PerceptionError::MalformedDataset);
        let n_z = parse_usize(get("n_z")?)?;
        let hidden_raw = get("hidden")?;
        let mut hs = hidden_raw.split(',');
        let h1 = hs
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(PerceptionError::MalformedDataset)?;
        let h2 = hs
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(PerceptionError::MalformedDataset)?;
        let depth_input = parse_usize(get("depth_input")?)?;
        let patch_input = parse_usize(get("patch_input")?)?;
        let beta = parse_f64(get("beta")?)?;
        let max_range = parse_f64(get("max_range")?)?;
        let trained = get("trained")? == "true";
        let config = VaeConfig {
            n_z,
            hidden: (h1, h2),
            beta,
            ..VaeConfig::default()
        };
        let depth = VaeBranch::wire(&loaded.params, "vae.depth", depth_input, n_z)?;
        let patch = VaeBranch::wire(&loaded.params, "vae.patch", patch_input, n_z)?;
        Ok(Self {
            params: loaded.params,
            depth,
            patch,
            config,
            max_range,
            trained,
            ablation_allow_untrained: false,
        })
    }
}
