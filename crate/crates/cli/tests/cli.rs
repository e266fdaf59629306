use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn atlaslab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_atlaslab"));
    cmd.env_remove("ATLASLAB_SEED");
    cmd
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    atlaslab()
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const SMALL_STATIONARITY: &str = r#"
experiment = "stationarity"
seed = 11
replicas = 200

[sim]
n_particles = 8
horizon = 0.2
dt = 1e-3
k_obs = 3
record_stride = 20

[stationarity]
gaps = 3
times = [0.05, 0.1, 0.2]
"#;

#[test]
fn negative_dt_exits_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "experiment = \"stationarity\"\n[sim]\ndt = -0.001\n");
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim.dt"), "{err}");
    assert!(!dir.path().join("out").join("report.json").exists());
}

#[test]
fn malformed_toml_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "experiment = \"stationarity\"\n\n[sim]\ndt = \"fast\"\n");
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn validate_rejects_a_below_a_min_and_notes_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let neg = write_config(dir.path(), "neg.toml", "experiment = \"stationarity\"\na = -0.1\n");
    let out = atlaslab().args(["validate", "--config"]).arg(&neg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("a_min = 0 "), "{text}");

    let zero = write_config(dir.path(), "zero.toml", "experiment = \"stationarity\"\na = 0.0\n");
    let out = atlaslab()
        .current_dir(dir.path())
        .args(["validate", "--config"])
        .arg(&zero)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("boundary"), "{text}");
    assert!(text.contains("suggested N >= 21"), "{text}");
    assert!(text.contains("estimated runtime"), "{text}");
    // A dry run writes nothing.
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "st.toml", SMALL_STATIONARITY);
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    let again = dir.path().join("again");
    for (out, threads) in [(&one, "1"), (&two, "2"), (&again, "1")] {
        let o = run(&cfg, out, &["--threads", threads]);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(2), "{o:?}");
    }
    for name in ["trajectory.csv", "occupation.csv", "rates.csv", "ks.csv", "summary.txt", "config.toml"] {
        let a = std::fs::read(one.join(name)).unwrap();
        assert_eq!(a, std::fs::read(two.join(name)).unwrap(), "{name} differs across threads");
        assert_eq!(a, std::fs::read(again.join(name)).unwrap(), "{name} differs across runs");
    }
    let mut r1 = report(&one);
    let mut r2 = report(&two);
    r1.as_object_mut().unwrap().remove("timing");
    r2.as_object_mut().unwrap().remove("timing");
    assert_eq!(r1, r2);
    assert_eq!(report(&one)["schema"], 1);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "st.toml", SMALL_STATIONARITY);
    let first = dir.path().join("first");
    run(&cfg, &first, &["--seed", "99"]);
    let second = dir.path().join("second");
    run(&first.join("config.toml"), &second, &[]);
    assert_eq!(
        std::fs::read(first.join("trajectory.csv")).unwrap(),
        std::fs::read(second.join("trajectory.csv")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("trajectory.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 99);
    assert!(manifest["content_hash"].as_str().unwrap().starts_with("sha256:"));
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "swap.toml",
        "experiment = \"swap_invariance\"\nseed = 5\n[swap]\nn_samples = 2000\n",
    );
    let file = dir.path().join("file");
    run(&cfg, &file, &[]);
    assert_eq!(report(&file)["rng"]["seed"], 5);

    let env = dir.path().join("env");
    atlaslab()
        .env("ATLASLAB_SEED", "6")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&env)
        .output()
        .unwrap();
    assert_eq!(report(&env)["rng"]["seed"], 6);

    let flag = dir.path().join("flag");
    atlaslab()
        .env("ATLASLAB_SEED", "6")
        .args(["run", "--seed", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag)
        .output()
        .unwrap();
    assert_eq!(report(&flag)["rng"]["seed"], 7);
    assert_eq!(report(&flag)["config"]["seed"], 7);
}

#[test]
fn coupling_sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.toml",
        r#"
experiment = "coupling_sweep"
replicas = 100

[sim]
n_particles = 6
dt = 1e-4

[coupling]
i = 1
deltas = [[0.05, 0.05], [0.05, 0.02], [0.02, 0.05]]
s = [0.01, 0.03, 0.05]
underline_delta = 0.1
"#,
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(2), "{o:?}");
    let text = std::fs::read_to_string(out.join("coupling.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "delta1,delta2,i,s,p_E1,p_E2,p_E,p_coupled,ci_lo,ci_hi"
    );
    assert_eq!(lines.count(), 3 * 3);
}

#[test]
fn failing_checks_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // With a' = a every affinity is 1, so the decrease check fails.
    let cfg = write_config(
        dir.path(),
        "k.toml",
        "experiment = \"kakutani\"\na = 1.0\n[kakutani]\na_prime = 1.0\n",
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kakutani_strictly_decreasing"));
    assert_eq!(report(&out)["pass"], false);
}

#[test]
fn bundled_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = atlaslab().args(["validate", "--config"]).arg(&path).output().unwrap();
            assert_eq!(o.status.code(), Some(0), "{}: {o:?}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 10);
}
