//! Run artifacts: `report.json`, CSV tables, trajectory manifests and the
//! text summary.
//!
//! Everything written here is a deterministic function of the resolved
//! config except the `timing` block of `report.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::dynamics::GapTrajectory;
use crate::error::Result;
use crate::rng::{STREAM_ALGORITHM, SUBSTREAM_INIT, SUBSTREAM_NOISE_BASE};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub target: f64,
    pub estimate: f64,
    /// Absent for single-path or exact checks.
    pub stderr: Option<f64>,
    pub pass: bool,
}

impl CheckRecord {
    pub fn new(
        name: impl Into<String>,
        target: f64,
        estimate: f64,
        stderr: Option<f64>,
        pass: bool,
    ) -> Self {
        Self {
            name: name.into(),
            target,
            estimate,
            stderr,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngProvenance {
    pub seed: u64,
    pub algorithm: String,
    /// How a replica index and substream become a stream id.
    pub replica_stream_map: String,
    pub substreams: BTreeMap<String, u64>,
    pub replicas: usize,
}

impl RngProvenance {
    pub fn new(seed: u64, replicas: usize) -> Self {
        let substreams = BTreeMap::from([
            ("initial_gaps".to_string(), SUBSTREAM_INIT),
            ("rank_noise".to_string(), SUBSTREAM_NOISE_BASE),
        ]);
        Self {
            seed,
            algorithm: STREAM_ALGORITHM.to_string(),
            replica_stream_map: "stream_id = (replica << 20) | substream; replica r uses streams of r"
                .to_string(),
            substreams,
            replicas,
        }
    }
}

/// Fields that change from run to run of the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
    pub rng: RngProvenance,
    /// Experiment-specific tables and diagnostics.
    pub details: serde_json::Value,
    pub files: Vec<String>,
    pub notes: Vec<String>,
    pub timing: Timing,
}

impl Report {
    pub fn failed(&self) -> Vec<&CheckRecord> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Shortest round-trip decimal form, empty for a missing value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Serialize a table to CSV bytes.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner()
        .map_err(|e| crate::error::Error::Io(e.into_error()))
}

pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let bytes = csv_bytes(header, rows)?;
    std::fs::write(dir.join(name), &bytes)?;
    Ok(bytes)
}

/// SHA-256 over git's blob framing, `"blob <len>\0" ++ bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("sha256:{}", hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub file: String,
    pub replica: u64,
    pub seed: u64,
    pub rows: usize,
    pub columns: Vec<String>,
    pub content_hash: String,
    pub config: ExperimentConfig,
}

/// `trajectory.csv` with header `t,z1,...,zk` and its manifest
/// `trajectory.manifest.json`. Returns the file names written.
pub fn write_trajectory(
    dir: &Path,
    traj: &GapTrajectory,
    config: &ExperimentConfig,
) -> Result<Vec<String>> {
    let k = traj.k_obs();
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("z{i}")));
    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.gaps)
        .map(|(t, z)| {
            std::iter::once(fmt_f64(*t))
                .chain(z.iter().map(|v| fmt_f64(*v)))
                .collect()
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let bytes = write_csv(dir, "trajectory.csv", &header_refs, &rows)?;
    let manifest = TrajectoryManifest {
        file: "trajectory.csv".into(),
        replica: traj.replica,
        seed: config.seed,
        rows: rows.len(),
        columns: header,
        content_hash: content_hash(&bytes),
        config: config.clone(),
    };
    std::fs::write(
        dir.join("trajectory.manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(vec!["trajectory.csv".into(), "trajectory.manifest.json".into()])
}

/// `occupation.csv` with header `i,eps,occupation`: the replica mean of the
/// time gap `i` spent in `[0, ε]` over the whole horizon.
pub fn write_occupation(dir: &Path, trajectories: &[GapTrajectory]) -> Result<String> {
    let mut rows = Vec::new();
    if let Some(first) = trajectories.first() {
        let n = trajectories.len() as f64;
        for i in 0..first.k_obs() {
            for (e, eps) in first.eps_ladder.iter().enumerate() {
                let total: f64 = trajectories.iter().map(|t| t.final_occupation()[i][e]).sum();
                rows.push(vec![(i + 1).to_string(), fmt_f64(*eps), fmt_f64(total / n)]);
            }
        }
    }
    write_csv(dir, "occupation.csv", &["i", "eps", "occupation"], &rows)?;
    Ok("occupation.csv".into())
}

fn short(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.4e}")
    }
}

/// One-page text summary. Timing is left out so the file is reproducible.
pub fn summary_text(report: &Report) -> String {
    let cfg = &report.config;
    let sim = &cfg.sim;
    let mut s = String::new();
    let drift = cfg.drift.name().unwrap_or("custom");
    let _ = writeln!(s, "atlaslab {}", report.experiment);
    let _ = writeln!(
        s,
        "drift {drift} prefix {:?}, a = {}, seed = {}",
        cfg.drift.prefix(),
        cfg.a,
        cfg.seed
    );
    if cfg.experiment.simulates() {
        let _ = writeln!(
            s,
            "N = {}, T = {}, dt = {}, k_obs = {}, replicas = {}",
            sim.n_particles(),
            sim.horizon,
            sim.dt,
            sim.k_obs,
            cfg.replicas
        );
    }
    let passed = report.checks.iter().filter(|c| c.pass).count();
    let _ = writeln!(s);
    let _ = writeln!(s, "checks: {passed}/{} passed", report.checks.len());
    for c in &report.checks {
        let _ = writeln!(
            s,
            "  {} {:<36} estimate {:<12} target {:<12} stderr {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            short(c.estimate),
            short(c.target),
            c.stderr.map_or("-".to_string(), |e| format!("{e:.3e}"))
        );
    }
    if !report.notes.is_empty() {
        let _ = writeln!(s);
        for n in &report.notes {
            let _ = writeln!(s, "note: {n}");
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "verdict: {}", if report.pass { "PASS" } else { "FAIL" });
    let _ = writeln!(s, "files: {}", report.files.join(", "));
    s
}

pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("summary.txt"), summary_text(report))?;
    Ok(())
}
