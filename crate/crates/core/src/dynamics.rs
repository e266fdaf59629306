//! Finite-N truncation of the ordered g-Atlas model.
//!
//! The scheme is Euler–Maruyama on the particle positions with a stable
//! re-sort after every step: the particle of rank `j` receives
//! `g_j dt + ΔB_j`, where `ΔB_j` is read from the rank-`j` noise stream, and
//! the sort realizes the ranking map (ties keep their current order). The top
//! particle has nobody above it, so the truncated system is exactly the
//! finite ordered system with no upper collision term.
//!
//! Collision local times are not integrated directly. Instead every step adds
//! `dt · 1{Z_i ≤ ε}` to an occupation accumulator for each observed gap and
//! each `ε` of a ladder; `local_time` turns those into local-time estimates.

use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::rng::{stream, RankNoise, SUBSTREAM_INIT};
use crate::sampler::{sample_gaps, ProductLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Particle count `N`.
    pub n_particles: usize,
    /// Horizon `T`.
    pub horizon: f64,
    pub dt: f64,
    /// Number of observed gaps, `1 <= k_obs <= N - 1`.
    pub k_obs: usize,
    pub seed: u64,
    /// Steps between recorded frames.
    pub record_stride: usize,
}

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_RECORD_STRIDE: usize = 100;

/// Default particle count for observing `k_obs` gaps over `[0, horizon]`.
pub fn default_truncation(k_obs: usize, horizon: f64) -> usize {
    let extra = (8.0 * (horizon + horizon.sqrt())).ceil() as usize;
    k_obs + extra.max(16)
}

impl SimConfig {
    pub fn new(k_obs: usize, horizon: f64, seed: u64) -> Self {
        Self {
            n_particles: default_truncation(k_obs, horizon),
            horizon,
            dt: DEFAULT_DT,
            k_obs,
            seed,
            record_stride: DEFAULT_RECORD_STRIDE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("sim.dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(Error::config(
                "sim.horizon",
                format!("must be at least dt = {}, got {}", self.dt, self.horizon),
            ));
        }
        if self.n_particles < 2 {
            return Err(Error::config(
                "sim.n_particles",
                format!("need at least 2 particles, got {}", self.n_particles),
            ));
        }
        if self.k_obs == 0 || self.k_obs >= self.n_particles {
            return Err(Error::config(
                "sim.k_obs",
                format!(
                    "must satisfy 1 <= k_obs <= N - 1 = {}, got {}",
                    self.n_particles - 1,
                    self.k_obs
                ),
            ));
        }
        if self.record_stride == 0 {
            return Err(Error::config("sim.record_stride", "must be positive"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Initial gap law of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    /// `π_a^g` truncated to the first `N - 1` gaps.
    Stationary { a: f64 },
    Product { law: ProductLaw },
    Fixed { gaps: Vec<f64> },
}

impl InitialLaw {
    /// Draw `count` initial gaps for `replica`.
    pub fn sample_gaps(
        &self,
        spec: &DriftSpec,
        count: usize,
        seed: u64,
        replica: u64,
    ) -> Result<Vec<f64>> {
        match self {
            InitialLaw::Stationary { a } => {
                let law = ProductLaw::pi_a(spec, *a, count)?;
                Ok(sample_gaps(&law, &mut stream(seed, replica, SUBSTREAM_INIT)))
            }
            InitialLaw::Product { law } => {
                if law.k() < count {
                    return Err(Error::config(
                        "initial.law",
                        format!("law has {} components, need {count}", law.k()),
                    ));
                }
                let mut z = sample_gaps(law, &mut stream(seed, replica, SUBSTREAM_INIT));
                z.truncate(count);
                Ok(z)
            }
            InitialLaw::Fixed { gaps } => {
                if gaps.len() < count {
                    return Err(Error::config(
                        "initial.gaps",
                        format!("{} gaps given, need {count}", gaps.len()),
                    ));
                }
                if gaps.iter().any(|z| !(*z >= 0.0)) {
                    return Err(Error::config("initial.gaps", "gaps must be nonnegative"));
                }
                Ok(gaps[..count].to_vec())
            }
        }
    }
}

/// Positions `(0, z_1, z_1 + z_2, ...)`.
pub fn positions_from_gaps(gaps: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(gaps.len() + 1);
    let mut acc = 0.0;
    y.push(acc);
    for &z in gaps {
        acc += z;
        y.push(acc);
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Ranked positions `Y_(0) <= ... <= Y_(N-1)`.
    pub y: Vec<f64>,
    pub t: f64,
    pub eps_ladder: Vec<f64>,
    /// `occupation[i-1][e] = ∫_0^t 1{0 <= Z_i <= eps_ladder[e]} ds`.
    pub occupation: Vec<Vec<f64>>,
}

impl SystemState {
    pub fn new(y: Vec<f64>, k_obs: usize, eps_ladder: &[f64]) -> Self {
        Self {
            y,
            t: 0.0,
            eps_ladder: eps_ladder.to_vec(),
            occupation: vec![vec![0.0; eps_ladder.len()]; k_obs],
        }
    }

    /// `Z_i = Y_(i) - Y_(i-1)`, `i >= 1`.
    pub fn gap(&self, i: usize) -> f64 {
        self.y[i] - self.y[i - 1]
    }

    pub fn gaps(&self, k: usize, out: &mut [f64]) {
        for (i, z) in out.iter_mut().take(k).enumerate() {
            *z = self.y[i + 1] - self.y[i];
        }
    }

    fn accumulate_occupation(&mut self, gaps: &[f64], dt: f64) {
        for (acc, &z) in self.occupation.iter_mut().zip(gaps) {
            for (slot, &eps) in acc.iter_mut().zip(&self.eps_ladder) {
                if z <= eps {
                    *slot += dt;
                }
            }
        }
    }
}

/// Per-rank drift increments `g_j dt`.
pub fn drift_increments(spec: &DriftSpec, n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|j| spec.g(j) * dt).collect()
}

/// Stable sort of positions; ties keep their current order.
pub fn rank_sort(y: &mut [f64]) {
    // Insertion sort: positions are nearly sorted after one small step, so
    // this is linear in practice, and it is stable.
    for k in 1..y.len() {
        let x = y[k];
        let mut j = k;
        while j > 0 && y[j - 1] > x {
            y[j] = y[j - 1];
            j -= 1;
        }
        y[j] = x;
    }
}

/// Advance ranked positions by one Euler step using precomputed increments.
#[inline]
pub fn advance(y: &mut [f64], drift_dt: &[f64], noise: &[f64]) {
    for ((x, d), w) in y.iter_mut().zip(drift_dt).zip(noise) {
        *x += d + w;
    }
    rank_sort(y);
}

/// Like [`advance`], also returning the discrete collision local times of
/// the step.
///
/// The sort moves rank `j` by `Δ_j = y_sorted_j − y_unsorted_j`. Matching
/// the ordered equations `ΔX_j = … + ½ΔL_j − ½ΔL_{j+1}` gives
/// `ΔL_i = −2 Σ_{j<i} Δ_j`, which is nonnegative because sorted prefix sums
/// are minimal. `dl[i-1]` receives `ΔL_i` for `i = 1..=dl.len()`.
pub fn advance_with_local_time(y: &mut [f64], drift_dt: &[f64], noise: &[f64], dl: &mut [f64]) {
    let m = dl.len().min(y.len().saturating_sub(1));
    for ((x, d), w) in y.iter_mut().zip(drift_dt).zip(noise) {
        *x += d + w;
    }
    // Prefix sums of the unsorted ranks, stored in dl for now.
    let mut acc = 0.0;
    for (slot, x) in dl[..m].iter_mut().zip(y.iter()) {
        acc += x;
        *slot = acc;
    }
    rank_sort(y);
    let mut acc = 0.0;
    for (slot, x) in dl[..m].iter_mut().zip(y.iter()) {
        acc += x;
        *slot = (-2.0 * (acc - *slot)).max(0.0);
    }
    for slot in dl[m..].iter_mut() {
        *slot = 0.0;
    }
}

/// One Euler–Maruyama step of the ranked system.
pub fn step_unranked(state: &mut SystemState, spec: &DriftSpec, dt: f64, noise: &mut RankNoise) {
    let n = state.y.len();
    let drift = drift_increments(spec, n, dt);
    let mut w = vec![0.0; n];
    noise.fill(&mut w, dt.sqrt());
    advance(&mut state.y, &drift, &w);
    state.t += dt;
}

/// Per-step hook into a running simulation.
pub trait GapObserver {
    /// Called once per step with the observed gaps at the left end of the
    /// step and the rank increments `ΔB_j` about to be applied.
    fn on_step(&mut self, _t: f64, _gaps: &[f64], _noise: &[f64], _dt: f64) {}

    /// Whether [`GapObserver::on_local_time`] should be fed.
    fn wants_local_time(&self) -> bool {
        false
    }

    /// Called after each step with the discrete local-time increments
    /// `ΔL_i` of gaps `1..=k_obs + 1` (see [`advance_with_local_time`]).
    fn on_local_time(&mut self, _dl: &[f64]) {}
}

impl GapObserver for () {}

impl<A: GapObserver, B: GapObserver> GapObserver for (A, B) {
    fn on_step(&mut self, t: f64, gaps: &[f64], noise: &[f64], dt: f64) {
        self.0.on_step(t, gaps, noise, dt);
        self.1.on_step(t, gaps, noise, dt);
    }

    fn wants_local_time(&self) -> bool {
        self.0.wants_local_time() || self.1.wants_local_time()
    }

    fn on_local_time(&mut self, dl: &[f64]) {
        self.0.on_local_time(dl);
        self.1.on_local_time(dl);
    }
}

impl<O: GapObserver> GapObserver for Vec<O> {
    fn on_step(&mut self, t: f64, gaps: &[f64], noise: &[f64], dt: f64) {
        for o in self.iter_mut() {
            o.on_step(t, gaps, noise, dt);
        }
    }

    fn wants_local_time(&self) -> bool {
        self.iter().any(GapObserver::wants_local_time)
    }

    fn on_local_time(&mut self, dl: &[f64]) {
        for o in self.iter_mut() {
            o.on_local_time(dl);
        }
    }
}

impl<O: GapObserver> GapObserver for Option<O> {
    fn on_step(&mut self, t: f64, gaps: &[f64], noise: &[f64], dt: f64) {
        if let Some(o) = self {
            o.on_step(t, gaps, noise, dt);
        }
    }

    fn wants_local_time(&self) -> bool {
        self.as_ref().is_some_and(GapObserver::wants_local_time)
    }

    fn on_local_time(&mut self, dl: &[f64]) {
        if let Some(o) = self {
            o.on_local_time(dl);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTrajectory {
    pub replica: u64,
    pub times: Vec<f64>,
    /// `gaps[frame][i-1] = Z_i(times[frame])`.
    pub gaps: Vec<Vec<f64>>,
    pub eps_ladder: Vec<f64>,
    /// Occupation accumulators at each frame, `[frame][i-1][eps]`.
    pub occupation: Vec<Vec<Vec<f64>>>,
    /// `noise[frame][j] = B*_j(times[frame])` for ranks `0..=k_obs`, when recorded.
    pub noise: Option<Vec<Vec<f64>>>,
}

impl GapTrajectory {
    pub fn k_obs(&self) -> usize {
        self.gaps.first().map_or(0, Vec::len)
    }

    pub fn final_gaps(&self) -> &[f64] {
        self.gaps.last().expect("trajectory has frames")
    }

    pub fn final_occupation(&self) -> &[Vec<f64>] {
        self.occupation.last().expect("trajectory has frames")
    }

    /// Frame index closest to time `t`.
    pub fn frame_at(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .expect("trajectory has frames")
    }

    /// `W*_i = B*_i - B*_{i-1}` at every frame, when noise was recorded.
    pub fn gap_noise(&self, i: usize) -> Option<Vec<f64>> {
        self.noise
            .as_ref()
            .map(|frames| frames.iter().map(|b| b[i] - b[i - 1]).collect())
    }
}

/// Options for [`simulate_gap_paths`] beyond the core configuration.
#[derive(Debug, Clone, Default)]
pub struct PathOptions {
    pub replica: u64,
    /// Record cumulative rank noise for ranks `0..=k_obs` at each frame.
    pub record_noise: bool,
}

/// Simulate one replica of the truncated system and record the first
/// `k_obs` gaps.
pub fn simulate_gap_paths<O: GapObserver>(
    spec: &DriftSpec,
    init: &InitialLaw,
    cfg: &SimConfig,
    eps_ladder: &[f64],
    opts: &PathOptions,
    observer: &mut O,
) -> Result<GapTrajectory> {
    cfg.validate()?;
    let n = cfg.n_particles;
    let k = cfg.k_obs;
    let z0 = init.sample_gaps(spec, n - 1, cfg.seed, opts.replica)?;
    let mut state = SystemState::new(positions_from_gaps(&z0), k, eps_ladder);

    let steps = cfg.n_steps();
    let drift = drift_increments(spec, n, cfg.dt);
    let sqrt_dt = cfg.dt.sqrt();
    let mut rank_noise = RankNoise::new(cfg.seed, opts.replica, n);
    let mut w = vec![0.0; n];
    let mut gaps = vec![0.0; k];
    let mut cum_noise = vec![0.0; k + 1];
    let track_local_time = observer.wants_local_time();
    let mut dl = vec![0.0; (k + 1).min(n - 1)];

    let frames = steps / cfg.record_stride + 2;
    let mut traj = GapTrajectory {
        replica: opts.replica,
        times: Vec::with_capacity(frames),
        gaps: Vec::with_capacity(frames),
        eps_ladder: eps_ladder.to_vec(),
        occupation: Vec::with_capacity(frames),
        noise: opts.record_noise.then(|| Vec::with_capacity(frames)),
    };
    let record = |traj: &mut GapTrajectory, state: &SystemState, gaps: &[f64], cum: &[f64]| {
        traj.times.push(state.t);
        traj.gaps.push(gaps.to_vec());
        traj.occupation.push(state.occupation.clone());
        if let Some(noise) = traj.noise.as_mut() {
            noise.push(cum.to_vec());
        }
    };

    for step in 0..steps {
        state.gaps(k, &mut gaps);
        if step % cfg.record_stride == 0 {
            record(&mut traj, &state, &gaps, &cum_noise);
        }
        rank_noise.fill(&mut w, sqrt_dt);
        state.accumulate_occupation(&gaps, cfg.dt);
        observer.on_step(state.t, &gaps, &w, cfg.dt);
        if opts.record_noise {
            for (c, dw) in cum_noise.iter_mut().zip(&w) {
                *c += dw;
            }
        }
        if track_local_time {
            advance_with_local_time(&mut state.y, &drift, &w, &mut dl);
            observer.on_local_time(&dl);
        } else {
            advance(&mut state.y, &drift, &w);
        }
        state.t = (step + 1) as f64 * cfg.dt;
    }
    state.gaps(k, &mut gaps);
    record(&mut traj, &state, &gaps, &cum_noise);
    Ok(traj)
}

/// Sup-distance of one ranked particle between truncation levels.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationRow {
    pub n_particles: usize,
    pub median: f64,
    pub mean: f64,
    pub p99: f64,
    /// `sup_t |Y^{(N)}_rank(t) - Y^{(N_max)}_rank(t)|` for every replica.
    pub per_replica: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationTable {
    pub rank: usize,
    pub reference_n: usize,
    pub rows: Vec<TruncationRow>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Compare the path of ranked particle `rank` across truncation levels
/// driven by shared rank noise and a shared initial configuration.
///
/// For each replica the initial gaps of the largest system are drawn once
/// and every smaller system uses their prefix. `cfg.n_particles` is ignored;
/// the levels come from `n_list`.
pub fn truncation_sensitivity(
    spec: &DriftSpec,
    init: &InitialLaw,
    cfg: &SimConfig,
    n_list: &[usize],
    rank: usize,
    replicas: usize,
    threads: Option<usize>,
) -> Result<TruncationTable> {
    let n_max = *n_list
        .iter()
        .max()
        .ok_or_else(|| Error::config("n_list", "must not be empty"))?;
    if let Some(&n) = n_list.iter().find(|&&n| n <= rank) {
        return Err(Error::config(
            "n_list",
            format!("N = {n} has no particle of rank {rank}"),
        ));
    }
    let steps = cfg.n_steps();
    let stride = cfg.record_stride.max(1);

    let per_replica: Vec<Result<Vec<f64>>> =
        crate::parallel::run_replicas(threads, replicas, |replica| {
            let z0 = init.sample_gaps(spec, n_max - 1, cfg.seed, replica)?;
            let paths: Vec<Vec<f64>> = n_list
                .iter()
                .map(|&n| {
                    let mut y = positions_from_gaps(&z0[..n - 1]);
                    let drift = drift_increments(spec, n, cfg.dt);
                    let mut noise = RankNoise::new(cfg.seed, replica, n);
                    let mut w = vec![0.0; n];
                    let mut path = Vec::with_capacity(steps / stride + 2);
                    for step in 0..steps {
                        if step % stride == 0 {
                            path.push(y[rank]);
                        }
                        noise.fill(&mut w, cfg.dt.sqrt());
                        advance(&mut y, &drift, &w);
                    }
                    path.push(y[rank]);
                    path
                })
                .collect();
            let reference = &paths[n_list.iter().position(|&n| n == n_max).unwrap()];
            Ok(paths
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(reference)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .collect())
        });
    let per_replica = per_replica.into_iter().collect::<Result<Vec<_>>>()?;

    let rows = n_list
        .iter()
        .enumerate()
        .map(|(col, &n)| {
            let values: Vec<f64> = per_replica.iter().map(|r| r[col]).collect();
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            TruncationRow {
                n_particles: n,
                median: quantile(&sorted, 0.5),
                mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
                p99: quantile(&sorted, 0.99),
                per_replica: values,
            }
        })
        .collect();
    Ok(TruncationTable {
        rank,
        reference_n: n_max,
        rows,
    })
}

/// Number of frames in which two adjacent observed gaps are both below `tol`.
pub fn triple_collision_monitor(trajectory: &GapTrajectory, tol: f64) -> usize {
    trajectory
        .gaps
        .iter()
        .filter(|frame| frame.windows(2).any(|w| w[0] < tol && w[1] < tol))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::run_replicas;
    use crate::stats::{ks_exponential, Moments};

    fn cfg(n: usize, k: usize, horizon: f64, dt: f64, seed: u64) -> SimConfig {
        SimConfig {
            n_particles: n,
            horizon,
            dt,
            k_obs: k,
            seed,
            record_stride: 10,
        }
    }

    #[test]
    fn default_truncation_rule() {
        assert_eq!(default_truncation(5, 1.0), 21);
        assert_eq!(default_truncation(2, 4.0), 2 + 48);
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut c = cfg(8, 8, 1.0, 1e-3, 0);
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sim.k_obs"),
            other => panic!("unexpected {other:?}"),
        }
        c.k_obs = 3;
        c.dt = -1.0;
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sim.dt"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn discrete_local_time_closes_the_gap_equations() {
        let spec = DriftSpec::new(vec![1.0, -0.5, 0.25]);
        let n = 12;
        let dt = 0.01;
        let drift = drift_increments(&spec, n, dt);
        let mut noise = RankNoise::new(5, 0, n);
        let mut y = positions_from_gaps(&[0.05; 11]);
        let mut w = vec![0.0; n];
        let mut dl = vec![0.0; n - 1];
        let mut pushes = 0;
        for _ in 0..2000 {
            let before = y.clone();
            noise.fill(&mut w, dt.sqrt());
            advance_with_local_time(&mut y, &drift, &w, &mut dl);
            let mut sorted_before = before.clone();
            for (x, (d, dw)) in sorted_before.iter_mut().zip(drift.iter().zip(&w)) {
                *x += d + dw;
            }
            let mut a = sorted_before.clone();
            a.sort_by(f64::total_cmp);
            assert_eq!(a, y);
            for i in 1..n {
                assert!(dl[i - 1] >= 0.0);
                let lower = if i >= 2 { dl[i - 2] } else { 0.0 };
                let upper = if i < n - 1 { dl[i] } else { 0.0 };
                let dz = (y[i] - y[i - 1]) - (before[i] - before[i - 1]);
                let rhs = spec.h(i) * dt + (w[i] - w[i - 1]) + dl[i - 1] - 0.5 * lower - 0.5 * upper;
                assert!((dz - rhs).abs() < 1e-12, "gap {i}: {dz} vs {rhs}");
            }
            pushes += dl.iter().filter(|&&d| d > 0.0).count();
        }
        assert!(pushes > 0);
    }

    #[test]
    fn rank_sort_is_a_stable_permutation() {
        let mut y = vec![0.3, -1.0, 0.3, 2.0, 0.1, -1.0];
        let mut expect = y.clone();
        expect.sort_by(f64::total_cmp);
        rank_sort(&mut y);
        assert_eq!(y, expect);
    }

    #[test]
    fn single_particle_drift() {
        let spec = DriftSpec::new(vec![0.7]);
        let mut state = SystemState::new(vec![0.0], 0, &[]);
        let mut noise = RankNoise::new(3, 0, 1);
        let dt = 1e-3;
        let steps = 100_000;
        for _ in 0..steps {
            step_unranked(&mut state, &spec, dt, &mut noise);
        }
        let t = steps as f64 * dt;
        let mean_drift = state.y[0] / t;
        // sd of Y(t)/t is 1/√t.
        assert!((mean_drift - 0.7).abs() < 3.0 / t.sqrt(), "drift {mean_drift}");
    }

    #[test]
    fn euler_consistency_single_particle() {
        // N = 1: Y(T) ~ N(g_0 T, T).
        let spec = DriftSpec::new(vec![0.5]);
        let horizon = 1.0;
        let dt = 0.05;
        let finals = run_replicas(None, 100_000, |r| {
            let mut state = SystemState::new(vec![0.0], 0, &[]);
            let mut noise = RankNoise::new(17, r, 1);
            for _ in 0..20 {
                step_unranked(&mut state, &spec, dt, &mut noise);
            }
            state.y[0]
        });
        let m: Moments = finals.iter().copied().collect();
        let se_mean = (horizon / m.count as f64).sqrt();
        assert!((m.mean - 0.5 * horizon).abs() < 4.0 * se_mean);
        // Var of the sample variance of a Gaussian: 2σ⁴/(n-1).
        let se_var = (2.0 * horizon * horizon / (m.count - 1) as f64).sqrt();
        assert!((m.variance() - horizon).abs() < 4.0 * se_var);
    }

    #[test]
    fn two_particle_gap_is_reflected_bm() {
        // g = 0: Z_1 = |√2 B_t| in law, so E Z_1(t)^2 = 2t.
        let spec = DriftSpec::zero();
        let c = SimConfig {
            record_stride: 500,
            ..cfg(2, 1, 0.25, 1e-4, 4)
        };
        let init = InitialLaw::Fixed { gaps: vec![0.0] };
        let sq = run_replicas(None, 10_000, |r| {
            let opts = PathOptions {
                replica: r,
                ..Default::default()
            };
            let traj = simulate_gap_paths(&spec, &init, &c, &[], &opts, &mut ()).unwrap();
            traj.gaps.iter().map(|f| f[0] * f[0]).collect::<Vec<_>>()
        });
        let times = [0.05, 0.1, 0.15, 0.2, 0.25];
        for (frame, t) in times.iter().enumerate() {
            let mean = sq.iter().map(|v| v[frame + 1]).sum::<f64>() / sq.len() as f64;
            assert!((mean / (2.0 * t) - 1.0).abs() < 0.05, "t {t}: {mean}");
        }
    }

    #[test]
    fn two_particle_atlas_is_stationary_from_exp() {
        // N = 2 with g¹: the finite gap system is stationary under Exp(1).
        let spec = DriftSpec::atlas1();
        let c = SimConfig {
            record_stride: 5000,
            ..cfg(2, 1, 0.5, 1e-4, 6)
        };
        let init = InitialLaw::Product {
            law: ProductLaw::exponential(&[1.0]).unwrap(),
        };
        let z: Vec<f64> = run_replicas(None, 4000, |r| {
            let opts = PathOptions {
                replica: r,
                ..Default::default()
            };
            simulate_gap_paths(&spec, &init, &c, &[], &opts, &mut ())
                .unwrap()
                .final_gaps()[0]
        });
        let ks = ks_exponential(&z, 1.0).unwrap();
        assert!(ks.p_value > 0.01, "p {}", ks.p_value);
    }

    #[test]
    fn zero_drift_from_collapsed_start_spreads_out() {
        let spec = DriftSpec::zero();
        let c = cfg(8, 7, 0.2, 1e-3, 9);
        let init = InitialLaw::Fixed { gaps: vec![0.0; 7] };
        let traj = simulate_gap_paths(&spec, &init, &c, &[0.1], &PathOptions::default(), &mut ())
            .unwrap();
        assert!(traj.gaps.iter().flatten().all(|&z| z >= 0.0));
        assert!(traj.final_gaps().iter().any(|&z| z > 0.0));
    }

    #[test]
    fn trajectories_are_deterministic() {
        let spec = DriftSpec::atlas1();
        let c = cfg(12, 4, 0.2, 1e-3, 21);
        let init = InitialLaw::Stationary { a: 0.5 };
        let opts = PathOptions {
            replica: 3,
            record_noise: true,
        };
        let a = simulate_gap_paths(&spec, &init, &c, &[0.05, 0.1], &opts, &mut ()).unwrap();
        let b = simulate_gap_paths(&spec, &init, &c, &[0.05, 0.1], &opts, &mut ()).unwrap();
        assert_eq!(a, b);
        let other = PathOptions {
            replica: 4,
            record_noise: true,
        };
        let c2 = simulate_gap_paths(&spec, &init, &c, &[0.05, 0.1], &other, &mut ()).unwrap();
        assert_ne!(a.gaps, c2.gaps);
    }

    #[test]
    fn occupation_is_monotone() {
        let spec = DriftSpec::atlas1();
        let c = cfg(10, 3, 0.5, 1e-3, 2);
        let ladder = [0.02, 0.05, 0.1, 0.2];
        let traj = simulate_gap_paths(
            &spec,
            &InitialLaw::Stationary { a: 0.0 },
            &c,
            &ladder,
            &PathOptions::default(),
            &mut (),
        )
        .unwrap();
        for w in traj.occupation.windows(2) {
            for (prev, next) in w[0].iter().zip(&w[1]) {
                for (p, n) in prev.iter().zip(next) {
                    assert!(n >= p);
                }
            }
        }
        for gap in traj.final_occupation() {
            assert!(gap.windows(2).all(|w| w[1] >= w[0]));
            assert!(gap.iter().all(|&x| (0.0..=0.5 + 1e-9).contains(&x)));
        }
    }

    #[test]
    fn observer_sees_every_step() {
        struct Count(usize, f64);
        impl GapObserver for Count {
            fn on_step(&mut self, _t: f64, _g: &[f64], _n: &[f64], dt: f64) {
                self.0 += 1;
                self.1 += dt;
            }
        }
        let mut counter = Count(0, 0.0);
        let c = cfg(6, 2, 0.1, 1e-3, 1);
        simulate_gap_paths(
            &DriftSpec::atlas1(),
            &InitialLaw::Stationary { a: 0.0 },
            &c,
            &[],
            &PathOptions::default(),
            &mut counter,
        )
        .unwrap();
        assert_eq!(counter.0, 100);
        assert!((counter.1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn truncation_self_comparison_is_zero() {
        let c = cfg(16, 1, 0.1, 1e-3, 5);
        let table = truncation_sensitivity(
            &DriftSpec::atlas1(),
            &InitialLaw::Stationary { a: 0.0 },
            &c,
            &[16],
            0,
            20,
            None,
        )
        .unwrap();
        assert!(table.rows[0].per_replica.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn truncation_zero_drift_lowest_particle() {
        let c = SimConfig {
            record_stride: 10,
            ..cfg(64, 1, 0.1, 1e-4, 8)
        };
        let table = truncation_sensitivity(
            &DriftSpec::zero(),
            &InitialLaw::Stationary { a: 1.0 },
            &c,
            &[16, 64],
            0,
            1000,
            None,
        )
        .unwrap();
        let small = &table.rows[0].per_replica;
        let ok = small.iter().filter(|&&d| d < 1e-3).count();
        assert!(ok as f64 >= 0.99 * small.len() as f64, "{ok}");
    }

    #[test]
    fn triple_collision_monitor_counts() {
        let traj = GapTrajectory {
            replica: 0,
            times: vec![0.0, 1.0, 2.0],
            gaps: vec![vec![0.0, 0.0, 1.0], vec![0.5, 0.01, 0.02], vec![1.0, 1.0, 1.0]],
            eps_ladder: vec![],
            occupation: vec![vec![]; 3],
            noise: None,
        };
        assert_eq!(triple_collision_monitor(&traj, 0.0), 0);
        assert_eq!(triple_collision_monitor(&traj, 0.001), 1);
        assert_eq!(triple_collision_monitor(&traj, 0.05), 2);
    }
}
