//! Experiment configuration files.
//!
//! A config is TOML with a handful of top-level keys and one optional
//! section per experiment family. Every section has defaults, unknown keys
//! are rejected, and [`ExperimentConfig::resolve`] fills the remaining
//! derived defaults so the echoed config reruns the experiment exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::{build_geometry, check_event_preconditions};
use crate::drift::{admissibility, Admissibility, DriftSpec};
use crate::dynamics::{default_truncation, SimConfig, DEFAULT_DT, DEFAULT_RECORD_STRIDE};
use crate::error::{Error, Result};
use crate::experiments::{ItoSpec, ProductPair, LAPLACE_MULTIPLIERS};
use crate::local_time::{default_eps_ladder, MIN_REPLICAS};
use crate::stats::Observable;

pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Stationarity,
    NuIdentities,
    ProductIdentity,
    Laplace,
    CouplingSweep,
    LemctySearch,
    ErgodicAverage,
    TruncationStudy,
    SwapInvariance,
    Kakutani,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Stationarity => "stationarity",
            ExperimentKind::NuIdentities => "nu_identities",
            ExperimentKind::ProductIdentity => "product_identity",
            ExperimentKind::Laplace => "laplace",
            ExperimentKind::CouplingSweep => "coupling_sweep",
            ExperimentKind::LemctySearch => "lemcty_search",
            ExperimentKind::ErgodicAverage => "ergodic_average",
            ExperimentKind::TruncationStudy => "truncation_study",
            ExperimentKind::SwapInvariance => "swap_invariance",
            ExperimentKind::Kakutani => "kakutani",
        }
    }

    /// Experiments that simulate particle paths.
    pub fn simulates(self) -> bool {
        !matches!(self, ExperimentKind::SwapInvariance | ExperimentKind::Kakutani)
    }

    /// Experiments that simulate a batch of stationary replicas.
    pub fn uses_panel(self) -> bool {
        matches!(
            self,
            ExperimentKind::Stationarity
                | ExperimentKind::NuIdentities
                | ExperimentKind::ProductIdentity
                | ExperimentKind::Laplace
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Defaults to `default_truncation(k_obs, horizon)`.
    #[serde(default)]
    pub n_particles: Option<usize>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "five")]
    pub k_obs: usize,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            n_particles: None,
            horizon: 1.0,
            dt: DEFAULT_DT,
            k_obs: 5,
            record_stride: DEFAULT_RECORD_STRIDE,
        }
    }
}

impl SimSection {
    pub fn n_particles(&self) -> usize {
        self.n_particles
            .unwrap_or_else(|| default_truncation(self.k_obs, self.horizon))
    }

    pub fn to_sim(&self, seed: u64) -> SimConfig {
        SimConfig {
            n_particles: self.n_particles(),
            horizon: self.horizon,
            dt: self.dt,
            k_obs: self.k_obs,
            seed,
            record_stride: self.record_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaritySection {
    /// Gaps `1..=gaps` are tested.
    #[serde(default = "five")]
    pub gaps: usize,
    #[serde(default = "default_ks_times")]
    pub times: Vec<f64>,
}

impl Default for StationaritySection {
    fn default() -> Self {
        Self {
            gaps: 5,
            times: default_ks_times(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalTimeSection {
    /// Defaults to `{4, 8, 16, 32}·√dt`.
    #[serde(default)]
    pub eps_ladder: Option<Vec<f64>>,
    /// `ν̂_i` is checked against its target for `i = 1..=nu_gaps`.
    #[serde(default = "three")]
    pub nu_gaps: usize,
    /// Balance residuals are checked for these `i` (each at least 2).
    #[serde(default = "default_balance")]
    pub balance: Vec<usize>,
    #[serde(default = "default_product_pairs")]
    pub product_pairs: Vec<ProductPair>,
    /// Laplace checks for gaps `1..=laplace_gaps`.
    #[serde(default = "three")]
    pub laplace_gaps: usize,
    /// `λ = c·ν_i/4` for each multiplier `c`.
    #[serde(default = "default_multipliers")]
    pub laplace_multipliers: Vec<f64>,
    /// Itô consistency check of `ψ_ε` on one gap.
    #[serde(default)]
    pub ito: Option<ItoSpec>,
}

impl Default for LocalTimeSection {
    fn default() -> Self {
        Self {
            eps_ladder: None,
            nu_gaps: 3,
            balance: default_balance(),
            product_pairs: default_product_pairs(),
            laplace_gaps: 3,
            laplace_multipliers: default_multipliers(),
            ito: None,
        }
    }
}

impl LocalTimeSection {
    /// Number of `ν` estimates the balance and `ν` checks need.
    pub fn nu_estimates(&self) -> usize {
        let balance = self.balance.iter().map(|i| i + 1).max().unwrap_or(0);
        self.nu_gaps.max(balance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// Start gaps; defaults to `N − 1` unit gaps.
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub i: usize,
    /// `(δ₁, δ₂)` cells.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<[f64; 2]>,
    #[serde(default = "default_s")]
    pub s: Vec<f64>,
    /// Event level `δ̲`. Without it only coupling frequencies are estimated.
    #[serde(default)]
    pub underline_delta: Option<f64>,
    /// Require the 95% interval of `P(coupled by s)` to exclude 0.
    #[serde(default)]
    pub require_positive: bool,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_t1_grid")]
    pub t1_grid: Vec<f64>,
    #[serde(default = "default_delta0_grid")]
    pub delta0_grid: Vec<f64>,
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self {
            z: None,
            i: 1,
            deltas: default_deltas(),
            s: default_s(),
            underline_delta: None,
            require_positive: false,
            eta: default_eta(),
            t1_grid: default_t1_grid(),
            delta0_grid: default_delta0_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicSection {
    #[serde(default = "default_observable")]
    pub observable: Observable,
    /// Which replica stream drives the single path.
    #[serde(default)]
    pub replica: u64,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        Self {
            observable: default_observable(),
            replica: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    /// Ranked particle whose path is compared.
    #[serde(default = "one_usize")]
    pub rank: usize,
    /// Largest accepted 99th percentile of the sup-distance at the
    /// second-largest level.
    #[serde(default = "default_truncation_tol")]
    pub tol: f64,
}

impl Default for TruncationSection {
    fn default() -> Self {
        Self {
            n_list: default_n_list(),
            rank: 1,
            tol: default_truncation_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapSection {
    #[serde(default = "one_usize")]
    pub i: usize,
    #[serde(default = "default_swap_samples")]
    pub n_samples: usize,
}

impl Default for SwapSection {
    fn default() -> Self {
        Self {
            i: 1,
            n_samples: default_swap_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KakutaniSection {
    pub a_prime: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// The partial product at `n_max` must fall below this.
    #[serde(default = "default_kakutani_tol")]
    pub tol: f64,
}

impl Default for KakutaniSection {
    fn default() -> Self {
        Self {
            a_prime: 1.0,
            n_max: default_n_max(),
            tol: default_kakutani_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "DriftSpec::atlas1")]
    pub drift: DriftSpec,
    #[serde(default)]
    pub a: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub stationarity: StationaritySection,
    #[serde(default)]
    pub local_time: LocalTimeSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub ergodic: ErgodicSection,
    #[serde(default)]
    pub truncation: TruncationSection,
    #[serde(default)]
    pub swap: SwapSection,
    #[serde(default)]
    pub kakutani: KakutaniSection,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: DEFAULT_SEED,
            out_dir: None,
            drift: DriftSpec::atlas1(),
            a: 0.0,
            replicas: default_replicas(),
            sim: SimSection::default(),
            stationarity: StationaritySection::default(),
            local_time: LocalTimeSection::default(),
            coupling: CouplingSection::default(),
            ergodic: ErgodicSection::default(),
            truncation: TruncationSection::default(),
            swap: SwapSection::default(),
            kakutani: KakutaniSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Fill derived defaults (`n_particles`, ε-ladder, coupling start) in place.
    pub fn resolve(&mut self) {
        let n = self.sim.n_particles();
        self.sim.n_particles = Some(n);
        if self.local_time.eps_ladder.is_none() {
            self.local_time.eps_ladder = Some(default_eps_ladder(self.sim.dt));
        }
        if self.coupling.z.is_none() && n >= 2 {
            self.coupling.z = Some(vec![1.0; n - 1]);
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        self.sim.to_sim(self.seed)
    }

    pub fn eps_ladder(&self) -> Vec<f64> {
        self.local_time
            .eps_ladder
            .clone()
            .unwrap_or_else(|| default_eps_ladder(self.sim.dt))
    }

    pub fn coupling_start(&self) -> Vec<f64> {
        self.coupling
            .z
            .clone()
            .unwrap_or_else(|| vec![1.0; self.sim.n_particles().saturating_sub(1)])
    }

    /// Check every precondition of the configured experiment without
    /// simulating. Returns advisory notes.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut notes = Vec::new();
        if self.replicas == 0 {
            return Err(Error::config("replicas", "must be at least 1"));
        }
        self.drift.validate()?;
        if !self.a.is_finite() {
            return Err(Error::config("a", "must be finite"));
        }
        let a_min = self.drift.a_min();
        match admissibility(&self.drift, self.a) {
            Admissibility::Interior => {}
            Admissibility::Boundary => notes.push(format!(
                "a = a_min = {a_min} is the boundary case, allowed because the drift is in D1"
            )),
            Admissibility::Inadmissible => {
                return Err(Error::config(
                    "a",
                    format!("a = {} is below the admissible minimum a_min = {a_min}", self.a),
                ))
            }
        }
        let sim = self.sim_config();
        sim.validate()?;
        let suggested = default_truncation(sim.k_obs, sim.horizon);
        if self.experiment.uses_panel() && sim.n_particles < suggested {
            notes.push(format!(
                "n_particles = {} is below the default truncation {suggested} for k_obs = {} and T = {}",
                sim.n_particles, sim.k_obs, sim.horizon
            ));
        }

        let kind = self.experiment;
        if kind.uses_panel() {
            self.validate_panel(&sim)?;
        }
        match kind {
            ExperimentKind::Stationarity => {
                let s = &self.stationarity;
                if s.gaps == 0 || s.gaps > sim.k_obs {
                    return Err(Error::config(
                        "stationarity.gaps",
                        format!("must be in 1..={}, got {}", sim.k_obs, s.gaps),
                    ));
                }
                if s.times.is_empty() {
                    return Err(Error::config("stationarity.times", "must not be empty"));
                }
                if let Some(t) = s.times.iter().find(|t| !(**t >= 0.0 && **t <= sim.horizon)) {
                    return Err(Error::config(
                        "stationarity.times",
                        format!("time {t} outside [0, {}]", sim.horizon),
                    ));
                }
                if self.replicas < 2 {
                    return Err(Error::config("replicas", "rate MLEs need at least 2 replicas"));
                }
            }
            ExperimentKind::NuIdentities => {
                let lt = &self.local_time;
                if lt.nu_gaps == 0 {
                    return Err(Error::config("local_time.nu_gaps", "must be positive"));
                }
                if let Some(i) = lt.balance.iter().find(|&&i| i < 2) {
                    return Err(Error::config(
                        "local_time.balance",
                        format!("balance is checked for i >= 2, got {i}"),
                    ));
                }
                self.need_k_obs("local_time.nu_gaps", lt.nu_estimates(), &sim)?;
                if let Some(ito) = lt.ito {
                    if ito.i == 0 || !(ito.eps > 0.0) {
                        return Err(Error::config(
                            "local_time.ito",
                            "needs a gap index >= 1 and eps > 0",
                        ));
                    }
                    self.need_k_obs("local_time.ito", ito.i + 1, &sim)?;
                }
            }
            ExperimentKind::ProductIdentity => {
                let pairs = &self.local_time.product_pairs;
                if pairs.is_empty() {
                    return Err(Error::config("local_time.product_pairs", "must not be empty"));
                }
                for p in pairs {
                    if p.i == p.j || p.i == 0 || p.j == 0 {
                        return Err(Error::config(
                            "local_time.product_pairs",
                            format!("pair ({}, {}) needs distinct indices >= 1", p.i, p.j),
                        ));
                    }
                    self.need_k_obs("local_time.product_pairs", p.i.max(p.j), &sim)?;
                }
            }
            ExperimentKind::Laplace => {
                let lt = &self.local_time;
                if lt.laplace_gaps == 0 {
                    return Err(Error::config("local_time.laplace_gaps", "must be positive"));
                }
                self.need_k_obs("local_time.laplace_gaps", lt.laplace_gaps, &sim)?;
                if let Some(c) = lt.laplace_multipliers.iter().find(|c| !(c.abs() <= 2.0)) {
                    return Err(Error::config(
                        "local_time.laplace_multipliers",
                        format!("|c| must be at most 2 so that |λ| <= ν_i/2, got {c}"),
                    ));
                }
            }
            ExperimentKind::CouplingSweep => {
                let c = &self.coupling;
                self.validate_coupling_start()?;
                if c.deltas.is_empty() {
                    return Err(Error::config("coupling.deltas", "must not be empty"));
                }
                positive_list("coupling.s", &c.s)?;
                let z = self.coupling_start();
                for &[d1, d2] in &c.deltas {
                    let geom = build_geometry(&z, d1, d2, c.i, &self.drift)?;
                    if let Some(ud) = c.underline_delta {
                        check_event_preconditions(&geom, &self.drift, &c.s, ud)?;
                    }
                }
            }
            ExperimentKind::LemctySearch => {
                let c = &self.coupling;
                self.validate_coupling_start()?;
                if !(c.eta > 0.0 && c.eta < 1.0) {
                    return Err(Error::config("coupling.eta", format!("must be in (0, 1), got {}", c.eta)));
                }
                positive_list("coupling.t1_grid", &c.t1_grid)?;
                positive_list("coupling.delta0_grid", &c.delta0_grid)?;
                let ud = c.underline_delta.ok_or_else(|| {
                    Error::config("coupling.underline_delta", "the search needs the event level")
                })?;
                let z = self.coupling_start();
                let d0 = c.delta0_grid.iter().copied().fold(f64::NAN, f64::max);
                let geom = build_geometry(&z, d0 / 2.0, d0 / 2.0, c.i, &self.drift)?;
                check_event_preconditions(&geom, &self.drift, &c.t1_grid, ud)?;
            }
            ExperimentKind::ErgodicAverage => {
                let gap = self.ergodic.observable.gap_index().unwrap_or(1);
                if gap == 0 {
                    return Err(Error::config("ergodic.observable", "gap indices start at 1"));
                }
                self.need_k_obs("ergodic.observable", gap, &sim)?;
                if self.replicas > 1 {
                    notes.push("ergodic_average follows a single path; replicas is ignored".into());
                }
            }
            ExperimentKind::TruncationStudy => {
                let t = &self.truncation;
                if t.n_list.len() < 2 {
                    return Err(Error::config("truncation.n_list", "needs at least two levels"));
                }
                if let Some(n) = t.n_list.iter().find(|&&n| n <= t.rank) {
                    return Err(Error::config(
                        "truncation.n_list",
                        format!("N = {n} has no particle of rank {}", t.rank),
                    ));
                }
                if !(t.tol > 0.0) {
                    return Err(Error::config("truncation.tol", "must be positive"));
                }
            }
            ExperimentKind::SwapInvariance => {
                if self.swap.i == 0 {
                    return Err(Error::config("swap.i", "indices start at 1"));
                }
                if self.swap.n_samples < 2 {
                    return Err(Error::config("swap.n_samples", "must be at least 2"));
                }
            }
            ExperimentKind::Kakutani => {
                let k = &self.kakutani;
                if k.n_max == 0 {
                    return Err(Error::config("kakutani.n_max", "must be positive"));
                }
                if admissibility(&self.drift, k.a_prime) == Admissibility::Inadmissible {
                    return Err(Error::config(
                        "kakutani.a_prime",
                        format!("a' = {} is below a_min = {a_min}", k.a_prime),
                    ));
                }
                if k.a_prime == self.a {
                    notes.push("a' = a: the two laws coincide and every affinity is 1".into());
                }
            }
        }
        Ok(notes)
    }

    fn validate_panel(&self, sim: &SimConfig) -> Result<()> {
        if self.replicas < MIN_REPLICAS && self.experiment != ExperimentKind::Stationarity {
            return Err(Error::config(
                "replicas",
                format!("local-time estimates need at least {MIN_REPLICAS}, got {}", self.replicas),
            ));
        }
        let ladder = self.eps_ladder();
        if ladder.is_empty() {
            return Err(Error::config("local_time.eps_ladder", "must not be empty"));
        }
        let floor = 4.0 * sim.dt.sqrt();
        if let Some(e) = ladder.iter().find(|e| !(**e >= floor * (1.0 - 1e-12))) {
            return Err(Error::config(
                "local_time.eps_ladder",
                format!("every ε must be at least 4√dt = {floor}, got {e}"),
            ));
        }
        if self.experiment != ExperimentKind::Stationarity && sim.horizon < 1.0 {
            return Err(Error::config(
                "sim.horizon",
                format!("local-time estimates need T >= 1, got {}", sim.horizon),
            ));
        }
        Ok(())
    }

    fn validate_coupling_start(&self) -> Result<()> {
        let z = self.coupling_start();
        if let Some(n) = self.sim.n_particles {
            if z.len() + 1 != n {
                return Err(Error::config(
                    "coupling.z",
                    format!("{} gaps given but sim.n_particles = {n}", z.len()),
                ));
            }
        }
        if !(self.sim.dt > 0.0) {
            return Err(Error::config("sim.dt", "must be positive"));
        }
        Ok(())
    }

    fn need_k_obs(&self, field: &str, gaps: usize, sim: &SimConfig) -> Result<()> {
        if gaps > sim.k_obs {
            return Err(Error::config(
                field,
                format!("needs gap {gaps} observed but sim.k_obs = {}", sim.k_obs),
            ));
        }
        Ok(())
    }
}

fn positive_list(field: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::config(field, format!("entries must be positive, got {v}")));
    }
    Ok(())
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_replicas() -> usize {
    1000
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn three() -> usize {
    3
}
fn five() -> usize {
    5
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_stride() -> usize {
    DEFAULT_RECORD_STRIDE
}
fn default_ks_times() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_balance() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_multipliers() -> Vec<f64> {
    LAPLACE_MULTIPLIERS.to_vec()
}
fn default_product_pairs() -> Vec<ProductPair> {
    [(1, 2), (2, 1)]
        .into_iter()
        .map(|(i, j)| ProductPair {
            i,
            j,
            f: Observable::ExpMoment { i, lambda: -1.0 },
        })
        .collect()
}
fn default_deltas() -> Vec<[f64; 2]> {
    vec![[0.05, 0.05]]
}
fn default_s() -> Vec<f64> {
    vec![0.01, 0.05]
}
fn default_eta() -> f64 {
    0.1
}
fn default_t1_grid() -> Vec<f64> {
    vec![0.02, 0.03, 0.04, 0.05]
}
fn default_delta0_grid() -> Vec<f64> {
    vec![0.09, 0.06, 0.04, 0.02]
}
fn default_observable() -> Observable {
    Observable::Coordinate { i: 1 }
}
fn default_n_list() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_truncation_tol() -> f64 {
    0.05
}
fn default_swap_samples() -> usize {
    100_000
}
fn default_n_max() -> usize {
    50
}
fn default_kakutani_tol() -> f64 {
    1e-3
}
