//! Mirror/synchronous coupling of two g-Atlas systems started from `z` and
//! `z + δ₁e_i − δ₂e_{i+1}`.
//!
//! Ranks `0..=i` of the second copy are driven by `H·B`, the reflection of
//! the first copy's Brownian motions in the hyperplane orthogonal to `v`,
//! until `v′B` first reaches `‖v‖²/2` (time σ). From σ on both copies use
//! the same increments. Ranks above `i` share increments throughout.

use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::dynamics::{advance, drift_increments, positions_from_gaps};
use crate::error::{Error, Result};
use crate::parallel::run_replicas;
use crate::rng::RankNoise;
use crate::stats::{normal_sf, proportion_ci, Moments};

/// Largest position difference still read as a merge after σ. Rounding in
/// `H·ΔB` accumulates at the 1e-15 level per step.
pub const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct CouplingGeometry {
    pub i: usize,
    pub delta1: f64,
    pub delta2: f64,
    /// `(i+1)×(i+1)`, `−1` on the diagonal and `+1` above it.
    pub d: Vec<Vec<i64>>,
    /// `−1` on and above the diagonal.
    pub d_inv: Vec<Vec<i64>>,
    /// `(g_1−g_0, …, g_i−g_{i−1}, −g_i)`.
    pub b: Vec<f64>,
    pub psi0: Vec<f64>,
    pub psi0_tilde: Vec<f64>,
    pub v: Vec<f64>,
    pub v_norm: f64,
    pub r: f64,
    pub time_cap: f64,
    /// Start positions `y = (0, z_1, z_1+z_2, …)` of the first copy.
    pub y: Vec<f64>,
    pub y_tilde: Vec<f64>,
    /// `(y_i + y_{i+1} + δ₂)/2`.
    pub level: f64,
}

impl CouplingGeometry {
    pub fn n_particles(&self) -> usize {
        self.y.len()
    }

    /// Gaps of the second copy's start, `z + δ₁e_i − δ₂e_{i+1}`.
    pub fn z_tilde(&self) -> Vec<f64> {
        self.y_tilde.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

pub fn bidiagonal(i: usize) -> Vec<Vec<i64>> {
    let n = i + 1;
    (0..n)
        .map(|j| {
            (0..n)
                .map(|l| match l {
                    _ if l == j => -1,
                    _ if l == j + 1 => 1,
                    _ => 0,
                })
                .collect()
        })
        .collect()
}

pub fn bidiagonal_inverse(i: usize) -> Vec<Vec<i64>> {
    let n = i + 1;
    (0..n)
        .map(|j| (0..n).map(|l| if l >= j { -1 } else { 0 }).collect())
        .collect()
}

pub fn int_mat_mul(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let m = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..m)
                .map(|l| row.iter().zip(b).map(|(x, brow)| x * brow[l]).sum())
                .collect()
        })
        .collect()
}

pub fn int_mat_vec(a: &[Vec<i64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(&m, &v)| m as f64 * v).sum())
        .collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn build_geometry(
    z: &[f64],
    delta1: f64,
    delta2: f64,
    i: usize,
    spec: &DriftSpec,
) -> Result<CouplingGeometry> {
    if i == 0 {
        return Err(Error::Geometry("pair index i must be at least 1".into()));
    }
    if z.len() < i + 1 {
        return Err(Error::Geometry(format!(
            "need at least {} gaps for i = {i}, got {}",
            i + 1,
            z.len()
        )));
    }
    if let Some(j) = z.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Geometry(format!("gap {} is {}", j + 1, z[j])));
    }
    if let Some(j) = z[..=i].iter().position(|x| *x <= 0.0) {
        return Err(Error::Geometry(format!("gap {} must be positive", j + 1)));
    }
    if !(delta1 > 0.0 && delta1.is_finite()) {
        return Err(Error::Geometry(format!("delta1 must be positive, got {delta1}")));
    }
    if !(delta2 > 0.0 && delta2 < z[i]) {
        return Err(Error::Geometry(format!(
            "delta2 must lie in (0, z_{}) = (0, {}), got {delta2}",
            i + 1,
            z[i]
        )));
    }
    let d = bidiagonal(i);
    let d_inv = bidiagonal_inverse(i);
    let mut psi0: Vec<f64> = z[..i].to_vec();
    psi0.push((z[i] + delta2) / 2.0);
    let mut psi0_tilde = psi0.clone();
    psi0_tilde[i - 1] += delta1;
    psi0_tilde[i] = (z[i] - delta2) / 2.0;
    // Ψ̃(0) − Ψ(0) written out, so δ₁ = δ₂ cancels exactly.
    let mut diff = vec![0.0; i + 1];
    diff[i - 1] = delta1;
    diff[i] = -delta2;
    let v = int_mat_vec(&d_inv, &diff);
    let v_norm = norm(&v);
    let r = d
        .iter()
        .zip(psi0.iter().zip(&psi0_tilde))
        .map(|(row, (p, q))| {
            let row_norm = (row.iter().map(|x| x * x).sum::<i64>() as f64).sqrt();
            p.min(*q) / row_norm
        })
        .fold(f64::INFINITY, f64::min);
    let mut b: Vec<f64> = (1..=i).map(|j| spec.h(j)).collect();
    b.push(-spec.g(i));
    let time_cap = r / (8.0 * norm(&int_mat_vec(&d_inv, &b)) + 1.0);
    let y = positions_from_gaps(z);
    let mut y_tilde = y.clone();
    for p in y_tilde.iter_mut().take(i) {
        *p += delta2 - delta1;
    }
    y_tilde[i] += delta2;
    let level = (y[i] + y[i + 1] + delta2) / 2.0;
    Ok(CouplingGeometry {
        i,
        delta1,
        delta2,
        d,
        d_inv,
        b,
        psi0,
        psi0_tilde,
        v,
        v_norm,
        r,
        time_cap,
        y,
        y_tilde,
        level,
    })
}

/// `H = I − 2vv′/‖v‖²`.
pub fn mirror_reflection(v: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n2: f64 = v.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    Ok((0..v.len())
        .map(|j| {
            (0..v.len())
                .map(|l| f64::from(u8::from(j == l)) - 2.0 * v[j] * v[l] / n2)
                .collect()
        })
        .collect())
}

/// `out = x − 2v(v′x)/‖v‖²` without forming `H`.
fn reflect_into(v: &[f64], v_norm2: f64, x: &[f64], out: &mut [f64]) {
    let c = 2.0 * dot(v, x) / v_norm2;
    for ((o, xi), vi) in out.iter_mut().zip(x).zip(v) {
        *o = xi - c * vi;
    }
}

/// `Φ̄(u) = P(N(0,1) > u)`.
pub fn gaussian_tail(u: f64) -> f64 {
    normal_sf(u)
}

/// Upper bound on `P(E¹(s)ᶜ)`:
/// `√8·e^{−c₁²/4s}·e^{y_{i+1}²/4}·Σ_{j>i} e^{−y_j²/8}` with
/// `c₁ = (z_{i+1} − (2g^l+1)δ̲)/2`. The sum runs over the simulated particles.
pub fn event_bound_e1(geom: &CouplingGeometry, spec: &DriftSpec, s: f64, underline_delta: f64) -> f64 {
    let i = geom.i;
    let gl = spec.lower_bound();
    let z_next = geom.y[i + 1] - geom.y[i];
    let c1 = (z_next - (2.0 * gl + 1.0) * underline_delta) / 2.0;
    let tail: f64 = geom.y[i + 1..].iter().map(|y| (-y * y / 8.0).exp()).sum();
    8f64.sqrt() * (-c1 * c1 / (4.0 * s)).exp() * (geom.y[i + 1].powi(2) / 4.0).exp() * tail
}

/// Largest admissible `δ̲`: `z_{i+1}/(2 + 4g^l)` (exclusive).
pub fn underline_delta_bound(geom: &CouplingGeometry, spec: &DriftSpec) -> f64 {
    let z_next = geom.y[geom.i + 1] - geom.y[geom.i];
    z_next / (2.0 + 4.0 * spec.lower_bound())
}

/// Checks `δ̲ ∈ (0, z_{i+1}/(2+4g^l))`, every `s ≤ δ̲` and `δ₁, δ₂ < δ̲`.
pub fn check_event_preconditions(
    geom: &CouplingGeometry,
    spec: &DriftSpec,
    s_list: &[f64],
    underline_delta: f64,
) -> Result<()> {
    let bound = underline_delta_bound(geom, spec);
    if !(underline_delta > 0.0 && underline_delta < bound) {
        return Err(Error::config(
            "coupling.underline_delta",
            format!("must lie in (0, {bound}), got {underline_delta}"),
        ));
    }
    if let Some(s) = s_list.iter().find(|s| !(**s > 0.0 && **s <= underline_delta)) {
        return Err(Error::config(
            "coupling.s",
            format!("event times must lie in (0, {underline_delta}], got {s}"),
        ));
    }
    if geom.delta1 >= underline_delta || geom.delta2 >= underline_delta {
        return Err(Error::config(
            "coupling.delta",
            format!(
                "delta1 = {} and delta2 = {} must be below {underline_delta}",
                geom.delta1, geom.delta2
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    pub stride: usize,
    pub k_obs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub dt: f64,
    pub seed: u64,
    /// Times at which coupling and events are read off; the run ends at the last.
    pub checkpoints: Vec<f64>,
    /// `δ̲` of the event E¹; events are tracked only when set.
    pub underline_delta: Option<f64>,
    pub record: Option<RecordSpec>,
}

impl PairConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("coupling.dt", format!("must be positive, got {}", self.dt)));
        }
        if self.checkpoints.is_empty() || self.checkpoints.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config("coupling.s", "need nonnegative finite checkpoint times"));
        }
        if let Some(r) = self.record {
            if r.stride == 0 {
                return Err(Error::config("coupling.record.stride", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EventFlags {
    pub e1: bool,
    pub e2: bool,
}

impl EventFlags {
    pub fn e(&self) -> bool {
        self.e1 && self.e2
    }
}

/// Recorded gaps of both copies.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFrames {
    pub times: Vec<f64>,
    pub gaps: Vec<Vec<f64>>,
    pub gaps_tilde: Vec<Vec<f64>>,
    /// `B^{(i)}` at each frame, for decomposition checks.
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub replica: u64,
    /// Interpolated first time `v′B = ‖v‖²/2`.
    pub sigma: Option<f64>,
    /// Grid time from which the two copies are identical.
    pub tau_c: Option<f64>,
    /// Per checkpoint: `τ̂_c ≤ s`.
    pub coupled_by: Vec<bool>,
    /// Per checkpoint, empty unless events were requested.
    pub events: Vec<EventFlags>,
    pub frames: Option<PairFrames>,
}

struct Window {
    step: usize,
    value: Option<bool>,
}

fn window_steps(t: f64, dt: f64) -> usize {
    (t / dt + 1e-9).floor() as usize
}

/// Simulates one coupled pair.
pub fn run_coupled_pair(
    geom: &CouplingGeometry,
    spec: &DriftSpec,
    cfg: &PairConfig,
    replica: u64,
) -> Result<PairOutcome> {
    cfg.validate()?;
    if geom.v_norm == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let n = geom.n_particles();
    let m = geom.i + 1;
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let v = &geom.v;
    let v_norm2 = geom.v_norm * geom.v_norm;
    let half = v_norm2 / 2.0;
    let drift = drift_increments(spec, n, dt);
    let mut noise = RankNoise::new(cfg.seed, replica, n);

    let mut y = geom.y.clone();
    let mut yt = geom.y_tilde.clone();
    let mut w = vec![0.0; n];
    let mut wt = vec![0.0; n];
    let mut hw = vec![0.0; m];
    // Cumulative B for ranks 0..=i and every rank's free path y_j(0) + B_j.
    let mut b_low = vec![0.0; m];
    let mut free: Vec<f64> = geom.y.clone();
    let mut s_old = 0.0;
    let mut sigma = None;
    let mut tau_c = None;

    let last = cfg.checkpoints.iter().copied().fold(0.0, f64::max);
    let steps = window_steps(last, dt);
    let tracking = cfg.underline_delta.is_some();
    let threshold = cfg
        .underline_delta
        .map(|ud| geom.level + spec.lower_bound() * ud)
        .unwrap_or(f64::NEG_INFINITY);
    let mut e1_windows: Vec<Window> = cfg
        .checkpoints
        .iter()
        .map(|&s| Window { step: window_steps(s, dt), value: None })
        .collect();
    let mut e2_windows: Vec<Window> = cfg
        .checkpoints
        .iter()
        .map(|&s| Window { step: window_steps(s.min(geom.time_cap), dt), value: None })
        .collect();
    let e2_last = e2_windows.iter().map(|w| w.step).max().unwrap_or(0);
    let mut free_min = free[m..].iter().copied().fold(f64::INFINITY, f64::min);
    let (mut m_min, mut m_max, mut perp_max) = (0.0f64, 0.0f64, 0.0f64);

    let gaps_of = |p: &[f64], k: usize| -> Vec<f64> { (1..=k).map(|j| p[j] - p[j - 1]).collect() };
    let mut frames = cfg.record.map(|_| PairFrames {
        times: Vec::new(),
        gaps: Vec::new(),
        gaps_tilde: Vec::new(),
        b: Vec::new(),
    });
    let record = |frames: &mut Option<PairFrames>, t: f64, y: &[f64], yt: &[f64], b: &[f64]| {
        if let (Some(f), Some(r)) = (frames.as_mut(), cfg.record) {
            let k = r.k_obs.min(n - 1);
            f.times.push(t);
            f.gaps.push(gaps_of(y, k));
            f.gaps_tilde.push(gaps_of(yt, k));
            f.b.push(b.to_vec());
        }
    };

    let snapshot = |step: usize,
                    e1: &mut [Window],
                    e2: &mut [Window],
                    free_min: f64,
                    (m_min, m_max, perp_max): (f64, f64, f64)| {
        for win in e1.iter_mut().filter(|w| w.step == step) {
            win.value = Some(free_min > threshold);
        }
        for win in e2.iter_mut().filter(|w| w.step == step) {
            win.value = Some(
                m_min > -geom.r / 4.0 && m_max >= geom.v_norm / 2.0 && perp_max < geom.r / 4.0,
            );
        }
    };
    if tracking {
        snapshot(0, &mut e1_windows, &mut e2_windows, free_min, (m_min, m_max, perp_max));
    }
    record(&mut frames, 0.0, &y, &yt, &b_low);

    for step in 0..steps {
        let t_next = (step + 1) as f64 * dt;
        let merged = tau_c.is_some();
        if merged && !tracking && frames.is_none() {
            break;
        }
        if merged && tracking && frames.is_none() && step + 1 > e2_last {
            // Only the free paths of the upper ranks still matter.
            noise.fill(&mut w, sqrt_dt);
            for (f, dw) in free.iter_mut().zip(&w).skip(m) {
                *f += dw;
            }
            free_min = free_min.min(free[m..].iter().copied().fold(f64::INFINITY, f64::min));
            snapshot(step + 1, &mut e1_windows, &mut e2_windows, free_min, (m_min, m_max, perp_max));
            continue;
        }
        noise.fill(&mut w, sqrt_dt);
        for (b, dw) in b_low.iter_mut().zip(&w) {
            *b += dw;
        }
        for (f, dw) in free.iter_mut().zip(&w).skip(m) {
            *f += dw;
        }
        let s_new = dot(v, &b_low);

        wt.copy_from_slice(&w);
        match sigma {
            None if s_new >= half => {
                let theta = ((half - s_old) / (s_new - s_old)).clamp(0.0, 1.0);
                sigma = Some(step as f64 * dt + theta * dt);
                reflect_into(v, v_norm2, &w[..m], &mut hw);
                for ((o, h), dw) in wt[..m].iter_mut().zip(&hw).zip(&w[..m]) {
                    *o = theta * h + (1.0 - theta) * dw;
                }
            }
            None => {
                reflect_into(v, v_norm2, &w[..m], &mut hw);
                wt[..m].copy_from_slice(&hw);
            }
            Some(_) => {}
        }
        s_old = s_new;

        advance(&mut y, &drift, &w);
        if merged {
            yt.copy_from_slice(&y);
        } else {
            advance(&mut yt, &drift, &wt);
            if sigma.is_some() && y.iter().zip(&yt).all(|(a, b)| (a - b).abs() <= MERGE_TOL) {
                yt.copy_from_slice(&y);
                tau_c = Some(t_next);
            }
        }

        if tracking {
            let mval = s_new / geom.v_norm;
            let c = s_new / v_norm2;
            let perp = b_low
                .iter()
                .zip(v)
                .map(|(b, vi)| (b - c * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            m_min = m_min.min(mval);
            m_max = m_max.max(mval);
            perp_max = perp_max.max(perp);
            free_min = free_min.min(free[m..].iter().copied().fold(f64::INFINITY, f64::min));
            snapshot(step + 1, &mut e1_windows, &mut e2_windows, free_min, (m_min, m_max, perp_max));
        }
        if let Some(r) = cfg.record {
            if (step + 1) % r.stride == 0 || step + 1 == steps {
                record(&mut frames, t_next, &y, &yt, &b_low);
            }
        }
    }

    let coupled_by = cfg
        .checkpoints
        .iter()
        .map(|&s| tau_c.is_some_and(|t| t <= s + 1e-9 * dt))
        .collect();
    let events = if tracking {
        e1_windows
            .iter()
            .zip(&e2_windows)
            .map(|(a, b)| EventFlags {
                e1: a.value.expect("every E¹ window closes by the last step"),
                e2: b.value.expect("every E² window closes by the last step"),
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(PairOutcome {
        replica,
        sigma,
        tau_c,
        coupled_by,
        events,
        frames,
    })
}

/// Monte Carlo settings shared by the coupling estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSim {
    pub dt: f64,
    pub seed: u64,
    pub replicas: usize,
}

fn run_pairs(
    geom: &CouplingGeometry,
    spec: &DriftSpec,
    sim: &CouplingSim,
    checkpoints: &[f64],
    underline_delta: Option<f64>,
    threads: Option<usize>,
) -> Result<Vec<PairOutcome>> {
    if sim.replicas == 0 {
        return Err(Error::config("coupling.replicas", "must be at least 1"));
    }
    let cfg = PairConfig {
        dt: sim.dt,
        seed: sim.seed,
        checkpoints: checkpoints.to_vec(),
        underline_delta,
        record: None,
    };
    cfg.validate()?;
    run_replicas(threads, sim.replicas, |r| run_coupled_pair(geom, spec, &cfg, r))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingRow {
    pub s: f64,
    pub p_coupled: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: usize,
}

/// Fraction of pairs coupled by each `s`, with Wilson 95% intervals.
pub fn coupling_probability(
    geom: &CouplingGeometry,
    spec: &DriftSpec,
    s_list: &[f64],
    sim: &CouplingSim,
    threads: Option<usize>,
) -> Result<Vec<CouplingRow>> {
    let pairs = run_pairs(geom, spec, sim, s_list, None, threads)?;
    Ok(s_list
        .iter()
        .enumerate()
        .map(|(q, &s)| {
            let k = pairs.iter().filter(|p| p.coupled_by[q]).count() as u64;
            let (p, lo, hi) = proportion_ci(k, pairs.len() as u64);
            CouplingRow {
                s,
                p_coupled: p,
                ci_lo: lo,
                ci_hi: hi,
                replicas: pairs.len(),
            }
        })
        .collect())
}

/// One row of the coupling sweep CSV.
#[derive(Debug, Clone, Serialize)]
pub struct EventRow {
    pub delta1: f64,
    pub delta2: f64,
    pub i: usize,
    pub s: f64,
    pub p_e1: f64,
    pub p_e2: f64,
    pub p_e: f64,
    pub p_coupled: f64,
    /// Wilson 95% interval for `p_coupled`.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: usize,
    /// Pairs in E(s) that were not coupled by s.
    pub e_not_coupled: usize,
    /// `p_E ≤ p_coupled + 3·se`.
    pub inclusion_ok: bool,
}

fn event_rows(geom: &CouplingGeometry, s_list: &[f64], pairs: &[PairOutcome]) -> Vec<EventRow> {
    let n = pairs.len() as f64;
    s_list
        .iter()
        .enumerate()
        .map(|(q, &s)| {
            let count = |f: &dyn Fn(&PairOutcome) -> bool| pairs.iter().filter(|p| f(p)).count();
            let e1 = count(&|p| p.events[q].e1);
            let e2 = count(&|p| p.events[q].e2);
            let e = count(&|p| p.events[q].e());
            let coupled = count(&|p| p.coupled_by[q]);
            let e_not_coupled = count(&|p| p.events[q].e() && !p.coupled_by[q]);
            let diff: Moments = pairs
                .iter()
                .map(|p| f64::from(u8::from(p.events[q].e())) - f64::from(u8::from(p.coupled_by[q])))
                .collect();
            let (p, lo, hi) = proportion_ci(coupled as u64, pairs.len() as u64);
            EventRow {
                delta1: geom.delta1,
                delta2: geom.delta2,
                i: geom.i,
                s,
                p_e1: e1 as f64 / n,
                p_e2: e2 as f64 / n,
                p_e: e as f64 / n,
                p_coupled: p,
                ci_lo: lo,
                ci_hi: hi,
                replicas: pairs.len(),
                e_not_coupled,
                inclusion_ok: diff.mean <= 3.0 * diff.stderr(),
            }
        })
        .collect()
}

/// Monte Carlo probabilities of E¹(s), E²(s), E(s) and of coupling by `s`.
pub fn event_probabilities(
    geom: &CouplingGeometry,
    spec: &DriftSpec,
    s_list: &[f64],
    underline_delta: f64,
    sim: &CouplingSim,
    threads: Option<usize>,
) -> Result<Vec<EventRow>> {
    check_event_preconditions(geom, spec, s_list, underline_delta)?;
    let pairs = run_pairs(geom, spec, sim, s_list, Some(underline_delta), threads)?;
    Ok(event_rows(geom, s_list, &pairs))
}

/// [`event_probabilities`] over a grid of `(δ₁, δ₂)` cells.
pub fn coupling_sweep(
    z: &[f64],
    i: usize,
    spec: &DriftSpec,
    deltas: &[(f64, f64)],
    s_list: &[f64],
    underline_delta: f64,
    sim: &CouplingSim,
    threads: Option<usize>,
) -> Result<Vec<EventRow>> {
    let mut rows = Vec::with_capacity(deltas.len() * s_list.len());
    for &(d1, d2) in deltas {
        let geom = build_geometry(z, d1, d2, i, spec)?;
        rows.extend(event_probabilities(&geom, spec, s_list, underline_delta, sim, threads)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct LemctyCell {
    pub delta1: f64,
    pub delta2: f64,
    pub t1: f64,
    pub time_cap: f64,
    /// Estimated `P(τ_c > t₁)` and its standard error.
    pub p_not_coupled: f64,
    pub p_not_coupled_se: f64,
    /// Estimated `P(E(t₁)ᶜ)`.
    pub p_e_complement: f64,
    /// Mean and standard error of `1{E(t₁)ᶜ} − 1{τ_c > t₁}` over pairs.
    pub gap_mean: f64,
    pub gap_se: f64,
    pub below_eta: bool,
    /// `P(E(t₁)ᶜ) ≥ P(τ_c > t₁) − 3σ`.
    pub ordered: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemctyCandidate {
    pub t1: f64,
    pub delta0: f64,
    /// `t₁` below every cell's time cap.
    pub admissible: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemctyReport {
    pub eta: f64,
    pub underline_delta: f64,
    pub found: Option<(f64, f64)>,
    /// Cells of the accepted candidate, or of the last one tried.
    pub cells: Vec<LemctyCell>,
    pub tried: Vec<LemctyCandidate>,
}

/// Grid search for `(t₁, δ₀)` with `P(τ_c > t₁) ≤ η` and the ordering
/// `P(E(t₁)ᶜ) ≥ P(τ_c > t₁) − 3σ` at every `δ₁, δ₂ ∈ {δ₀/4, δ₀/2}`.
///
/// Candidates are visited by decreasing `δ₀`, then decreasing `t₁`; `t₁`
/// values at or above a cell's time cap are skipped.
pub fn lemcty_search(
    z: &[f64],
    i: usize,
    spec: &DriftSpec,
    eta: f64,
    t1_grid: &[f64],
    delta0_grid: &[f64],
    underline_delta: f64,
    sim: &CouplingSim,
    threads: Option<usize>,
) -> Result<LemctyReport> {
    let mut t1s = t1_grid.to_vec();
    t1s.sort_by(|a, b| b.total_cmp(a));
    let mut d0s = delta0_grid.to_vec();
    d0s.sort_by(|a, b| b.total_cmp(a));
    if t1s.is_empty() || d0s.is_empty() {
        return Err(Error::config("lemcty", "t1 and delta0 grids must be nonempty"));
    }
    let mut report = LemctyReport {
        eta,
        underline_delta,
        found: None,
        cells: Vec::new(),
        tried: Vec::new(),
    };
    for &d0 in &d0s {
        let mut runs = Vec::new();
        for &(d1, d2) in &[(d0 / 4.0, d0 / 4.0), (d0 / 4.0, d0 / 2.0), (d0 / 2.0, d0 / 4.0), (d0 / 2.0, d0 / 2.0)] {
            let geom = build_geometry(z, d1, d2, i, spec)?;
            check_event_preconditions(&geom, spec, &t1s, underline_delta)?;
            let pairs = run_pairs(&geom, spec, sim, &t1s, Some(underline_delta), threads)?;
            runs.push((geom, pairs));
        }
        for (q, &t1) in t1s.iter().enumerate() {
            let admissible = runs.iter().all(|(g, _)| t1 < g.time_cap);
            let cells: Vec<LemctyCell> = runs
                .iter()
                .map(|(g, pairs)| {
                    let not_coupled: Moments =
                        pairs.iter().map(|p| f64::from(u8::from(!p.coupled_by[q]))).collect();
                    let e_c: Moments =
                        pairs.iter().map(|p| f64::from(u8::from(!p.events[q].e()))).collect();
                    let gap: Moments = pairs
                        .iter()
                        .map(|p| {
                            f64::from(u8::from(!p.events[q].e())) - f64::from(u8::from(!p.coupled_by[q]))
                        })
                        .collect();
                    LemctyCell {
                        delta1: g.delta1,
                        delta2: g.delta2,
                        t1,
                        time_cap: g.time_cap,
                        p_not_coupled: not_coupled.mean,
                        p_not_coupled_se: not_coupled.stderr(),
                        p_e_complement: e_c.mean,
                        gap_mean: gap.mean,
                        gap_se: gap.stderr(),
                        below_eta: not_coupled.mean <= eta,
                        ordered: gap.mean >= -3.0 * gap.stderr(),
                    }
                })
                .collect();
            let pass = admissible && cells.iter().all(|c| c.below_eta && c.ordered);
            report.tried.push(LemctyCandidate {
                t1,
                delta0: d0,
                admissible,
                pass,
            });
            if admissible {
                report.cells = cells;
            }
            if pass {
                report.found = Some((t1, d0));
                return Ok(report);
            }
        }
    }
    Ok(report)
}
