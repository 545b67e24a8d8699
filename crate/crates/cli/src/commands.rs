//! Implementations of the CLI subcommands. Every command resolves its
//! configuration, writes the expanded config and a manifest beside its
//! outputs, and is reproducible from (config, seed, inputs).

use crate::config::RunConfig;
use crate::manifest::ExperimentManifest;
use crate::svg;
use gridnav_core::agent::{
    train, AgentError, PolicyNetwork, PpoConfig, TrainBudget, TrainOptions,
};
use gridnav_core::env::{trace_to_records, SensorConfig};
use gridnav_core::eval::{evaluate_detailed, generate_suite, EpisodeSuite, EvalReport};
use gridnav_core::grid::OccupancyGrid;
use gridnav_core::mapgen;
use gridnav_core::perception::{collect_dataset, PerceptionError, SweepDataset, TwinVae, VaeConfig};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Failures mapped to process exit codes: data problems exit 2, training
/// divergence exits 3.
#[derive(Debug)]
pub enum CliError {
    Data(String),
    Diverged(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::DivergedTraining(m) => CliError::Diverged(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PerceptionError> for CliError {
    fn from(e: PerceptionError) -> Self {
        match e {
            PerceptionError::DivergedTraining(it) => {
                CliError::Diverged(format!("at iteration {it}"))
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_grid(cfg: &RunConfig) -> Result<OccupancyGrid, CliError> {
    let text = read_text(&cfg.map)?;
    OccupancyGrid::parse(&text).map_err(data)
}

/// Writes the fully resolved config next to the command's outputs.
fn write_resolved(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    let path = cfg.out.join(format!("{command}.resolved.cfg"));
    write_file(&path, cfg.to_text().as_bytes())?;
    Ok(path)
}

fn vae_config(cfg: &RunConfig) -> VaeConfig {
    VaeConfig {
        n_z: cfg.perception_n_z,
        beta: cfg.perception_beta,
        lr: cfg.perception_lr,
        batch: cfg.perception_batch,
        iterations: cfg.perception_iterations,
        ..VaeConfig::default()
    }
}

fn ppo_config(cfg: &RunConfig) -> PpoConfig {
    PpoConfig {
        gamma: cfg.ppo_gamma,
        clip_eps: cfg.ppo_clip_eps,
        gae_lambda: cfg.ppo_gae_lambda,
        epochs_per_update: cfg.ppo_epochs,
        minibatch: cfg.ppo_minibatch,
        horizon: cfg.ppo_horizon,
        value_coef: cfg.ppo_value_coef,
        entropy_coef: cfg.ppo_entropy_coef,
        lr: cfg.ppo_lr,
        frame_stack: cfg.ppo_frame_stack,
        ..PpoConfig::default()
    }
}

pub fn cmd_gen_map(
    out: &Path,
    width: usize,
    height: usize,
    seed: u64,
    cell_size: f64,
) -> Result<(), CliError> {
    let grid = mapgen::rooms_and_corridors(width, height, cell_size, seed);
    write_file(out, grid.canonical_text().as_bytes())?;
    println!("wrote {} ({} free cells)", out.display(), grid.free_cells().len());
    Ok(())
}

pub fn cmd_collect(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = load_grid(cfg)?;
    let sensors = SensorConfig::default();
    let data_set = collect_dataset(&grid, cfg.perception_poses, &sensors, cfg.seed)?;
    let out_path = cfg.out.join("dataset.bin");
    write_file(&out_path, &data_set.to_bytes())?;
    let resolved = write_resolved(cfg, "collect")?;
    let mut manifest = ExperimentManifest::new("collect", &cfg.to_text(), &grid.map_hash());
    manifest.add_artifact(&out_path);
    manifest.add_artifact(&resolved);
    manifest.write(&cfg.out).map_err(data)?;
    println!(
        "collected {} samples ({} poses x 36 headings) -> {}",
        data_set.len(),
        cfg.perception_poses,
        out_path.display()
    );
    Ok(())
}

pub fn cmd_train_vae(cfg: &RunConfig, dataset: Option<PathBuf>) -> Result<(), CliError> {
    let grid = load_grid(cfg)?;
    let dataset_path = dataset.unwrap_or_else(|| cfg.out.join("dataset.bin"));
    let data_set = SweepDataset::from_bytes(&read(&dataset_path)?)?;
    let mut vae = TwinVae::new(&SensorConfig::default(), vae_config(cfg), cfg.seed)?;

    let meta = vec![("map_hash".to_string(), grid.map_hash())];
    let mut manifest = ExperimentManifest::new("train-vae", &cfg.to_text(), &grid.map_hash());
    manifest.add_lineage("dataset", &dataset_path);

    if cfg.perception_iterations == 0 {
        eprintln!("warning: perception.iterations = 0, writing initialized weights only");
        vae.trained = false;
        let ckpt = cfg.out.join("vae.ckpt");
        write_file(&ckpt, &vae.save(&meta))?;
        let resolved = write_resolved(cfg, "train-vae")?;
        manifest.add_artifact(&ckpt);
        manifest.add_artifact(&resolved);
        manifest.write(&cfg.out).map_err(data)?;
        return Ok(());
    }

    match vae.train(&data_set, cfg.seed) {
        Ok(curve) => {
            let ckpt = cfg.out.join("vae.ckpt");
            write_file(&ckpt, &vae.save(&meta))?;
            let mut csv = String::from("iteration,depth_loss,patch_loss\n");
            for (i, (d, p)) in curve.depth.iter().zip(curve.patch.iter()).enumerate() {
                let _ = writeln!(csv, "{i},{d:?},{p:?}");
            }
            let curve_path = cfg.out.join("vae_loss.csv");
            write_file(&curve_path, csv.as_bytes())?;
            let resolved = write_resolved(cfg, "train-vae")?;
            manifest.add_artifact(&ckpt);
            manifest.add_artifact(&curve_path);
            manifest.add_artifact(&resolved);
            manifest.write(&cfg.out).map_err(data)?;
            println!("trained twin VAE -> {}", ckpt.display());
            Ok(())
        }
        Err(PerceptionError::DivergedTraining(it)) => {
            // Keep what we have, but mark it unmistakably partial.
            let mut flagged = meta.clone();
            flagged.push(("diverged".to_string(), "true".to_string()));
            let ckpt = cfg.out.join("vae.partial.ckpt");
            write_file(&ckpt, &vae.save(&flagged))?;
            eprintln!(
                "training diverged at iteration {it}; partial checkpoint at {}",
                ckpt.display()
            );
            Err(CliError::Diverged(format!("at iteration {it}")))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_train_policy(
    cfg: &RunConfig,
    vae_path: Option<PathBuf>,
    init_from: Option<PathBuf>,
) -> Result<(), CliError> {
    let grid = load_grid(cfg)?;
    let vae_path = vae_path.unwrap_or_else(|| cfg.out.join("vae.ckpt"));
    let vae = TwinVae::load(&read(&vae_path)?)?;
    if vae.config.n_z != cfg.perception_n_z {
        eprintln!(
            "warning: checkpoint n_z = {} overrides config n_z = {}",
            vae.config.n_z, cfg.perception_n_z
        );
    }

    let schedule = cfg.schedule();
    schedule.validate().map_err(data)?;
    let budget = TrainBudget {
        max_episodes: if cfg.training_episodes == 0 {
            u64::MAX
        } else {
            cfg.training_episodes
        },
        max_env_steps: if cfg.training_max_env_steps == 0 {
            u64::MAX
        } else {
            cfg.training_max_env_steps
        },
    };
    let mut opts = TrainOptions::new(schedule.clone(), budget, cfg.seed);
    opts.ppo = ppo_config(cfg);
    opts.encode_mode = cfg.perception_encode_mode;

    let init_net = match &init_from {
        Some(path) => {
            let (net, _meta) = PolicyNetwork::load(&read(path)?).map_err(data)?;
            Some(net)
        }
        None => None,
    };

    let outcome = train(&grid, &vae, &opts, init_net)?;

    let mut meta = vec![
        ("map_hash".to_string(), grid.map_hash()),
        ("n_z".to_string(), vae.config.n_z.to_string()),
        (
            "encode_mode".to_string(),
            cfg.perception_encode_mode.as_str().to_string(),
        ),
    ];
    if let Some(parent) = &init_from {
        meta.push(("parent".to_string(), parent.display().to_string()));
    }
    let ckpt = cfg.out.join("policy.ckpt");
    write_file(&ckpt, &outcome.policy.save(&meta))?;

    let mut csv = String::from("episode,stage,steps,success,spl,return\n");
    let mut last_stage = String::new();
    for e in &outcome.log {
        if e.stage != last_stage {
            let _ = writeln!(csv, "# stage {} from episode {}", e.stage, e.episode);
            last_stage = e.stage.clone();
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{:?},{:?}",
            e.episode,
            e.stage,
            e.steps,
            u8::from(e.success),
            e.spl,
            e.ret
        );
    }
    let log_path = cfg.out.join("train_log.csv");
    write_file(&log_path, csv.as_bytes())?;

    let resolved = write_resolved(cfg, "train-policy")?;
    let mut manifest = ExperimentManifest::new("train-policy", &cfg.to_text(), &grid.map_hash());
    manifest.add_lineage("vae", &vae_path);
    if let Some(parent) = &init_from {
        manifest.add_lineage("init_from", parent);
    }
    manifest.add_artifact(&ckpt);
    manifest.add_artifact(&log_path);
    manifest.add_artifact(&resolved);
    manifest.write(&cfg.out).map_err(data)?;
    println!(
        "trained policy: {} episodes, {} env steps, {} updates -> {}",
        outcome.log.len(),
        outcome.env_steps,
        outcome.updates,
        ckpt.display()
    );
    Ok(())
}

pub fn cmd_gen_suite(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = load_grid(cfg)?;
    let suite = generate_suite(&grid, cfg.evaluation_suite_size, cfg.evaluation_suite_seed)
        .map_err(data)?;
    let path = cfg.out.join("suite.txt");
    write_file(&path, suite.to_text().as_bytes())?;
    let resolved = write_resolved(cfg, "gen-suite")?;
    let mut manifest = ExperimentManifest::new("gen-suite", &cfg.to_text(), &grid.map_hash());
    manifest.add_artifact(&path);
    manifest.add_artifact(&resolved);
    manifest.write(&cfg.out).map_err(data)?;
    println!("wrote {} episodes -> {}", suite.episodes.len(), path.display());
    Ok(())
}

pub fn cmd_eval(
    cfg: &RunConfig,
    policy: Option<PathBuf>,
    vae_path: Option<PathBuf>,
    suite_path: Option<PathBuf>,
    dump_traces: bool,
) -> Result<(), CliError> {
    let grid = load_grid(cfg)?;
    let policy_path = policy.unwrap_or_else(|| cfg.out.join("policy.ckpt"));
    let (net, meta) = PolicyNetwork::load(&read(&policy_path)?).map_err(data)?;
    let vae_path = vae_path.unwrap_or_else(|| cfg.out.join("vae.ckpt"));
    let vae = TwinVae::load(&read(&vae_path)?)?;
    let suite_path = suite_path.unwrap_or_else(|| cfg.out.join("suite.txt"));
    let suite = EpisodeSuite::from_text(&read_text(&suite_path)?).map_err(data)?;

    // Fail fast when artifacts come from different maps.
    let ckpt_map = meta
        .iter()
        .find(|(k, _)| k == "map_hash")
        .map(|(_, v)| v.as_str());
    if let Some(ckpt_map) = ckpt_map {
        if ckpt_map != suite.map_hash {
            return Err(CliError::Data(format!(
                "policy was trained on map {ckpt_map} but the suite is for map {}",
                suite.map_hash
            )));
        }
    }
    let encode_mode = meta
        .iter()
        .find(|(k, _)| k == "encode_mode")
        .and_then(|(_, v)| gridnav_core::perception::EncodeMode::parse(v))
        .unwrap_or(cfg.perception_encode_mode);

    let (report, traces) = evaluate_detailed(
        &net,
        &vae,
        encode_mode,
        &suite,
        &grid,
        &SensorConfig::default(),
    )
    .map_err(data)?;

    let report_path = cfg.out.join("report.txt");
    write_file(&report_path, report.to_text().as_bytes())?;
    let resolved = write_resolved(cfg, "eval")?;
    let mut manifest = ExperimentManifest::new("eval", &cfg.to_text(), &grid.map_hash());
    manifest.add_lineage("policy", &policy_path);
    manifest.add_lineage("vae", &vae_path);
    manifest.add_lineage("suite", &suite_path);
    manifest.add_artifact(&report_path);
    manifest.add_artifact(&resolved);
    if dump_traces {
        let mut text = String::new();
        for (i, trace) in traces.iter().enumerate() {
            text.push_str(&trace_to_records(i, trace));
        }
        let traces_path = cfg.out.join("traces.txt");
        write_file(&traces_path, text.as_bytes())?;
        manifest.add_artifact(&traces_path);
    }
    manifest.write(&cfg.out).map_err(data)?;
    println!(
        "evaluated {} episodes: mean success {:.3}, mean SPL {:.3} -> {}",
        report.episodes.len(),
        report.mean_success,
        report.mean_spl,
        report_path.display()
    );
    Ok(())
}

/// Figure kinds emitted by `plot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Curve,
    Paths,
    Bars,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Parses a training log; returns (episode, success, spl) per row.
fn parse_train_log(text: &str) -> Result<Vec<(u64, f64, f64)>, CliError> {
    let mut rows = Vec::new();
    for line in text.lines().skip_while(|l| l.starts_with("episode")) {
        if line.starts_with('#') || line.starts_with("episode") || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(CliError::Data(format!("malformed log row {line:?}")));
        }
        let episode: u64 = parts[0]
            .parse()
            .map_err(|_| CliError::Data(format!("bad episode in {line:?}")))?;
        let success: f64 = parts[3]
            .parse()
            .map_err(|_| CliError::Data(format!("bad success in {line:?}")))?;
        let spl: f64 = parts[4]
            .parse()
            .map_err(|_| CliError::Data(format!("bad spl in {line:?}")))?;
        rows.push((episode, success, spl));
    }
    if rows.is_empty() {
        return Err(CliError::Data("empty curve input".to_string()));
    }
    Ok(rows)
}

pub fn cmd_plot(
    kind: PlotKind,
    out: &Path,
    map: Option<PathBuf>,
    alpha: f64,
    metric: &str,
    inputs: &[PathBuf],
) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::Data("plot needs at least one input file".into()));
    }
    let svg_text = match kind {
        PlotKind::Curve => {
            let mut series = Vec::new();
            for path in inputs {
                let rows = parse_train_log(&read_text(path)?)?;
                let values: Vec<f64> = rows
                    .iter()
                    .map(|&(_, success, spl)| if metric == "success" { success } else { spl })
                    .collect();
                let smooth = gridnav_core::eval::ema_curve(&values, alpha).map_err(data)?;
                let points = rows
                    .iter()
                    .zip(smooth.iter())
                    .map(|(&(e, _, _), &y)| (e as f64, y))
                    .collect();
                series.push((stem(path), points));
            }
            svg::plot_curves(&series, metric)
        }
        PlotKind::Paths => {
            let map_path =
                map.ok_or_else(|| CliError::Data("plot --kind paths needs --map".into()))?;
            let grid = OccupancyGrid::parse(&read_text(&map_path)?).map_err(data)?;
            let mut paths = Vec::new();
            for path in inputs {
                let text = read_text(path)?;
                let mut grouped: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
                for line in text.lines() {
                    let nums: Vec<f64> = line
                        .split_whitespace()
                        .filter_map(|t| t.parse().ok())
                        .collect();
                    match nums.len() {
                        // Planner vertex dump: `x y`.
                        2 => {
                            if grouped.is_empty() {
                                grouped.push((stem(path), Vec::new()));
                            }
                            grouped.last_mut().unwrap().1.push((nums[0], nums[1]));
                        }
                        // Trace record: episode t x y heading action reward d.
                        8 => {
                            let label = format!("{}#{}", stem(path), nums[0] as u64);
                            if grouped.last().map(|(l, _)| l.as_str()) != Some(label.as_str()) {
                                grouped.push((label, Vec::new()));
                            }
                            grouped.last_mut().unwrap().1.push((nums[2], nums[3]));
                        }
                        _ => {
                            return Err(CliError::Data(format!(
                                "unrecognized path record in {}: {line:?}",
                                path.display()
                            )))
                        }
                    }
                }
                if grouped.iter().all(|(_, pts)| pts.is_empty()) {
                    return Err(CliError::Data(format!("no paths in {}", path.display())));
                }
                paths.extend(grouped);
            }
            svg::plot_paths(&grid, &paths)
        }
        PlotKind::Bars => {
            let mut entries = Vec::new();
            for path in inputs {
                let report = EvalReport::from_text(&read_text(path)?).map_err(data)?;
                entries.push((stem(path), report.mean_spl, report.mean_success));
            }
            svg::plot_bars(&entries)
        }
    };
    write_file(out, svg_text.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}
