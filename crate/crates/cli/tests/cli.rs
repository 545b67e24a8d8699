//! End-to-end tests of the `gridnav` binary: the full pipeline on tiny
//! budgets, reproducibility, and the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridnav"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let base = "map = map.txt\nseed = 5\nout = run\n\
                perception.n_z = 4\nperception.poses = 10\n\
                perception.iterations = 60\nperception.batch = 32\n\
                ppo.horizon = 256\nppo.minibatch = 64\n\
                training.episodes = 0\ntraining.max_env_steps = 600\n\
                evaluation.suite_size = 6\nevaluation.suite_seed = 3\n";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

#[test]
fn full_pipeline_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&run(
        &["gen-map", "--out", "map.txt", "--width", "32", "--height", "32", "--seed", "7"],
        dir,
    ));
    write_config(dir, "run.cfg", "curriculum.kind = swp\ncurriculum.stage_scale = 0.0001\n");

    assert_ok(&run(&["collect", "--config", "run.cfg"], dir));
    // Re-collecting with the same seed gives identical bytes.
    let first = std::fs::read(dir.join("run/dataset.bin")).unwrap();
    assert_ok(&run(&["collect", "--config", "run.cfg"], dir));
    assert_eq!(first, std::fs::read(dir.join("run/dataset.bin")).unwrap());

    assert_ok(&run(&["train-vae", "--config", "run.cfg"], dir));
    assert!(dir.join("run/vae.ckpt").exists());
    assert!(dir.join("run/vae_loss.csv").exists());

    assert_ok(&run(&["gen-suite", "--config", "run.cfg"], dir));
    assert_ok(&run(&["train-policy", "--config", "run.cfg"], dir));
    let log = std::fs::read_to_string(dir.join("run/train_log.csv")).unwrap();
    assert!(log.starts_with("episode,stage,steps,success,spl,return"));
    assert!(log.contains("# stage "), "stage transitions must be logged");

    let eval_out = run(&["eval", "--config", "run.cfg", "--dump-traces"], dir);
    assert_ok(&eval_out);
    let report = std::fs::read_to_string(dir.join("run/report.txt")).unwrap();
    assert!(report.contains("mean_success"));
    assert!(report.contains("mean_spl"));
    assert!(dir.join("run/traces.txt").exists());

    // Evaluation is reproducible byte for byte.
    let first_report = std::fs::read(dir.join("run/report.txt")).unwrap();
    assert_ok(&run(&["eval", "--config", "run.cfg"], dir));
    assert_eq!(first_report, std::fs::read(dir.join("run/report.txt")).unwrap());

    assert_ok(&run(
        &["plot", "--kind", "curve", "--out", "run/curve.svg", "run/train_log.csv"],
        dir,
    ));
    assert_ok(&run(
        &["plot", "--kind", "paths", "--out", "run/paths.svg", "--map", "map.txt", "run/traces.txt"],
        dir,
    ));
    assert_ok(&run(
        &["plot", "--kind", "bars", "--out", "run/bars.svg", "run/report.txt"],
        dir,
    ));
    for f in ["run/curve.svg", "run/paths.svg", "run/bars.svg"] {
        let svg = std::fs::read_to_string(dir.join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f} must be an svg");
    }

    // Every command left a manifest and a resolved config.
    for cmd in ["collect", "train-vae", "gen-suite", "train-policy", "eval"] {
        assert!(dir.join(format!("run/{cmd}.manifest.json")).exists());
        assert!(dir.join(format!("run/{cmd}.resolved.cfg")).exists());
    }

    // The resolved config re-runs to identical outputs.
    let resolved = dir.join("run/collect.resolved.cfg");
    let resolved_to = dir.join("run2");
    assert_ok(&run(
        &[
            "collect",
            "--config",
            resolved.to_str().unwrap(),
            "--out",
            resolved_to.to_str().unwrap(),
        ],
        dir,
    ));
    assert_eq!(
        std::fs::read(dir.join("run/dataset.bin")).unwrap(),
        std::fs::read(dir.join("run2/dataset.bin")).unwrap()
    );
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["no-such-command"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["collect"], tmp.path());
    assert_eq!(out.status.code(), Some(1), "missing --config is a usage error");
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Ragged map.
    std::fs::write(dir.join("map.txt"), "cellsize 0.1\n.....\n....\n.....\n").unwrap();
    write_config(dir, "run.cfg", "");
    let out = run(&["collect", "--config", "run.cfg"], dir);
    assert_eq!(out.status.code(), Some(2));

    // Unknown config key.
    std::fs::write(dir.join("bad.cfg"), "map = map.txt\nbogus.key = 1\n").unwrap();
    let out = run(&["collect", "--config", "bad.cfg"], dir);
    assert_eq!(out.status.code(), Some(2));

    // Missing checkpoint.
    assert_ok(&run(
        &["gen-map", "--out", "map.txt", "--width", "32", "--height", "32", "--seed", "7"],
        dir,
    ));
    let out = run(&["eval", "--config", "run.cfg"], dir);
    assert_eq!(out.status.code(), Some(2));

    // Too little free space for the requested poses.
    std::fs::write(
        dir.join("tiny.cfg"),
        "map = tiny.txt\nout = run\nperception.poses = 100\n",
    )
    .unwrap();
    std::fs::write(dir.join("tiny.txt"), "cellsize 0.1\n.....\n.....\n.....\n.....\n.....\n")
        .unwrap();
    let out = run(&["collect", "--config", "tiny.cfg"], dir);
    assert_eq!(out.status.code(), Some(2));

    // Empty curve input.
    std::fs::write(dir.join("empty.csv"), "").unwrap();
    let out = run(
        &["plot", "--kind", "curve", "--out", "x.svg", "empty.csv"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_iterations_writes_initialized_checkpoint_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&run(
        &["gen-map", "--out", "map.txt", "--width", "32", "--height", "32", "--seed", "7"],
        dir,
    ));
    write_config(dir, "run.cfg", "perception.iterations = 0\n");
    assert_ok(&run(&["collect", "--config", "run.cfg"], dir));
    let out = run(&["train-vae", "--config", "run.cfg"], dir);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(dir.join("run/vae.ckpt").exists());
}

#[test]
fn eval_rejects_cross_map_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for (name, seed) in [("map.txt", "7"), ("other.txt", "8")] {
        assert_ok(&run(
            &["gen-map", "--out", name, "--width", "32", "--height", "32", "--seed", seed],
            dir,
        ));
    }
    write_config(dir, "a.cfg", "");
    assert_ok(&run(&["collect", "--config", "a.cfg"], dir));
    assert_ok(&run(&["train-vae", "--config", "a.cfg"], dir));
    assert_ok(&run(&["train-policy", "--config", "a.cfg"], dir));

    // Suite generated for the other map.
    std::fs::write(
        dir.join("b.cfg"),
        "map = other.txt\nout = runb\nevaluation.suite_size = 5\n",
    )
    .unwrap();
    assert_ok(&run(&["gen-suite", "--config", "b.cfg"], dir));
    let out = run(
        &[
            "eval",
            "--config",
            "a.cfg",
            "--suite",
            dir.join("runb/suite.txt").to_str().unwrap(),
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("map"));
}

#[test]
fn encode_mode_is_selectable_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&run(
        &["gen-map", "--out", "map.txt", "--width", "32", "--height", "32", "--seed", "7"],
        dir,
    ));
    write_config(dir, "z.cfg", "perception.encode_mode = sample_z\n");
    assert_ok(&run(&["collect", "--config", "z.cfg"], dir));
    assert_ok(&run(&["train-vae", "--config", "z.cfg"], dir));
    assert_ok(&run(&["train-policy", "--config", "z.cfg"], dir));
    let z_ckpt = std::fs::read(dir.join("run/policy.ckpt")).unwrap();

    write_config(dir, "mu.cfg", "perception.encode_mode = mean_mu\n");
    assert_ok(&run(
        &["train-policy", "--config", "mu.cfg", "--out", "run_mu", "--vae", "run/vae.ckpt"],
        dir,
    ));
    let mu_ckpt = std::fs::read(dir.join("run_mu/policy.ckpt")).unwrap();
    assert_ne!(z_ckpt, mu_ckpt, "the two encodings must train differently");
}
