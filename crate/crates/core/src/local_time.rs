//! Collision local times from occupation densities, and the identities they
//! satisfy under `π_a^g`.
//!
//! `(1/ε) ∫_0^t 1{Z_i ≤ ε} ds` estimates `L*_i(t)`. Under stationarity its
//! expectation is `t · π_i[0, ε] / ε`, which tends to `ν_i = E L*_i(1)`.

use serde::Serialize;

use crate::drift::DriftSpec;
use crate::dynamics::{GapObserver, GapTrajectory};
use crate::error::{Error, Result};
use crate::stats::{Moments, Observable};

pub const MIN_REPLICAS: usize = 100;

/// Default ε-ladder `{4, 8, 16, 32} · √dt`.
pub fn default_eps_ladder(dt: f64) -> Vec<f64> {
    [4.0, 8.0, 16.0, 32.0].iter().map(|k| k * dt.sqrt()).collect()
}

/// `ν_i = i (a + 2 ḡ_i)`.
pub fn nu_target(spec: &DriftSpec, a: f64, i: usize) -> f64 {
    i as f64 * (a + 2.0 * spec.bar_g(i))
}

/// `ψ_ε` and its first two derivatives at `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEps {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

pub fn psi_eps(z: f64, eps: f64) -> PsiEps {
    if z <= eps {
        PsiEps {
            value: 0.5 * z * z,
            first: z.clamp(0.0, eps),
            second: if z < eps { 1.0 } else { 0.0 },
        }
    } else {
        PsiEps {
            value: 0.5 * eps * eps + (z - eps) * eps,
            first: eps,
            second: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NuEstimate {
    pub i: usize,
    pub eps_ladder: Vec<f64>,
    /// `(1/ε) E[occupation_i(t)] / t` for each ladder entry.
    pub raw: Vec<f64>,
    pub raw_stderr: Vec<f64>,
    /// Intercept of the least-squares line `raw(ε) = ν + c ε`.
    pub extrapolated: f64,
    pub stderr: f64,
    /// Fit quality of the line through `raw`.
    pub r_squared: f64,
    /// Per-replica extrapolated values, for the paired balance diagnostic.
    #[serde(skip)]
    pub per_replica: Vec<f64>,
}

impl NuEstimate {
    /// An error-free value, as when feeding closed-form rates to the checks.
    pub fn exact(i: usize, value: f64) -> Self {
        Self {
            i,
            eps_ladder: Vec::new(),
            raw: Vec::new(),
            raw_stderr: Vec::new(),
            extrapolated: value,
            stderr: 0.0,
            r_squared: 1.0,
            per_replica: Vec::new(),
        }
    }

    /// Raw estimate at the smallest ladder entry.
    pub fn raw_at_min_eps(&self) -> f64 {
        self.eps_ladder
            .iter()
            .zip(&self.raw)
            .min_by(|a, b| a.0.total_cmp(b.0))
            .map_or(self.extrapolated, |(_, r)| *r)
    }
}

/// Terminal occupation accumulators of each replica, `[replica][gap][eps]`.
pub fn final_occupations(trajectories: &[GapTrajectory]) -> Vec<Vec<Vec<f64>>> {
    trajectories
        .iter()
        .map(|t| t.final_occupation().to_vec())
        .collect()
}

/// Least-squares intercept weights: `intercept = Σ w_e y_e`.
fn intercept_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return vec![1.0; x.len()];
    }
    let mean = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    x.iter().map(|v| 1.0 / n - mean * (v - mean) / sxx).collect()
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 3 {
        return 1.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    1.0 - sse / syy
}

/// Estimate `ν_i` from terminal occupations of stationary replicas over
/// `[0, horizon]`.
pub fn estimate_nu(
    occupations: &[Vec<Vec<f64>>],
    horizon: f64,
    i: usize,
    eps_ladder: &[f64],
) -> Result<NuEstimate> {
    if occupations.len() < MIN_REPLICAS {
        return Err(Error::InsufficientData(format!(
            "{} replicas, need at least {MIN_REPLICAS}",
            occupations.len()
        )));
    }
    if i == 0 || eps_ladder.is_empty() {
        return Err(Error::Domain("need i >= 1 and a nonempty ladder".into()));
    }
    let weights = intercept_weights(eps_ladder);
    let mut per_eps = vec![Moments::default(); eps_ladder.len()];
    let mut per_replica = Vec::with_capacity(occupations.len());
    for occ in occupations {
        let row = occ.get(i - 1).ok_or_else(|| {
            Error::InsufficientData(format!("gap {i} was not observed"))
        })?;
        let mut intercept = 0.0;
        for (e, eps) in eps_ladder.iter().enumerate() {
            let value = row[e] / (eps * horizon);
            per_eps[e].push(value);
            intercept += weights[e] * value;
        }
        per_replica.push(intercept);
    }
    let raw: Vec<f64> = per_eps.iter().map(|m| m.mean).collect();
    let fit: Moments = per_replica.iter().copied().collect();
    Ok(NuEstimate {
        i,
        eps_ladder: eps_ladder.to_vec(),
        raw_stderr: per_eps.iter().map(Moments::stderr).collect(),
        r_squared: r_squared(eps_ladder, &raw),
        raw,
        extrapolated: fit.mean,
        stderr: fit.stderr(),
        per_replica,
    })
}

/// 99th percentile of `(1/ε) occupation_i(t) / t` across replicas, per ε.
pub fn occupation_p99(
    occupations: &[Vec<Vec<f64>>],
    horizon: f64,
    i: usize,
    eps_ladder: &[f64],
) -> Vec<f64> {
    eps_ladder
        .iter()
        .enumerate()
        .map(|(e, eps)| {
            let mut v: Vec<f64> = occupations
                .iter()
                .map(|occ| occ[i - 1][e] / (eps * horizon))
                .collect();
            v.sort_by(f64::total_cmp);
            let k = ((v.len() as f64 * 0.99).ceil() as usize).clamp(1, v.len()) - 1;
            v[k]
        })
        .collect()
}

/// One row of a local-time report.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityRow {
    pub check: String,
    pub i: usize,
    pub j: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceResidual {
    pub i: usize,
    pub residual: f64,
    /// `sqrt(se_i² + ¼se_{i−1}² + ¼se_{i+1}²)`; the pass decision uses this.
    pub stderr: f64,
    /// Standard error of the per-replica residuals, which keeps the
    /// correlation between neighbouring gaps. Reported only.
    pub paired_stderr: Option<f64>,
    pub pass: bool,
}

impl BalanceResidual {
    pub fn row(&self) -> IdentityRow {
        IdentityRow {
            check: "balance".into(),
            i: self.i,
            j: None,
            lhs: self.residual,
            rhs: 0.0,
            stderr: self.stderr,
            pass: self.pass,
        }
    }
}

/// Residuals `h_i + ν̂_i − ½ν̂_{i−1} − ½ν̂_{i+1}` for `i = 2..k−1`, where
/// `nus[n]` estimates `ν_{n+1}`. Pass if `|residual| ≤ 3·stderr` with errors
/// propagated as if independent.
pub fn check_balance_recursion(nus: &[NuEstimate], spec: &DriftSpec) -> Result<Vec<BalanceResidual>> {
    if nus.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "balance needs nu_1..nu_3 at least, got {}",
            nus.len()
        )));
    }
    for (n, nu) in nus.iter().enumerate() {
        if nu.i != n + 1 {
            return Err(Error::Domain(format!(
                "estimates must be ordered by gap index, found {} at position {n}",
                nu.i
            )));
        }
    }
    let paired = nus.iter().all(|nu| !nu.per_replica.is_empty())
        && nus
            .windows(2)
            .all(|w| w[0].per_replica.len() == w[1].per_replica.len());
    Ok((2..nus.len())
        .map(|i| {
            let (lo, mid, hi) = (&nus[i - 2], &nus[i - 1], &nus[i]);
            let h = spec.h(i);
            let residual = h + mid.extrapolated - 0.5 * lo.extrapolated - 0.5 * hi.extrapolated;
            let stderr =
                (mid.stderr.powi(2) + 0.25 * lo.stderr.powi(2) + 0.25 * hi.stderr.powi(2)).sqrt();
            let paired_stderr = paired.then(|| {
                let m: Moments = (0..mid.per_replica.len())
                    .map(|r| {
                        mid.per_replica[r] - 0.5 * lo.per_replica[r] - 0.5 * hi.per_replica[r]
                    })
                    .collect();
                m.stderr()
            });
            // Exact inputs still pay floating-point rounding.
            let floor = 1e-12 * (1.0 + mid.extrapolated.abs());
            BalanceResidual {
                i,
                residual,
                stderr,
                paired_stderr,
                pass: residual.abs() <= 3.0 * stderr + floor,
            }
        })
        .collect())
}

/// Accumulates the pieces of `E ∫ f(Z_i) dL*_j` along one path.
///
/// `dL*_j` is approximated by `(1/ε) 1{Z_j ≤ ε} ds`.
#[derive(Debug, Clone)]
pub struct ProductObserver {
    pub i: usize,
    pub j: usize,
    pub eps: f64,
    pub f: Observable,
    lhs: f64,
    f_time: f64,
    occ_j: f64,
    elapsed: f64,
}

/// Per-replica summary produced by [`ProductObserver`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductSample {
    /// `(1/t) ∫ f(Z_i) (1/ε) 1{Z_j ≤ ε} ds`.
    pub lhs: f64,
    /// `(1/t) ∫ f(Z_i) ds`.
    pub f_mean: f64,
    /// `(1/t) (1/ε) ∫ 1{Z_j ≤ ε} ds`.
    pub nu_j: f64,
}

impl ProductObserver {
    pub fn new(i: usize, j: usize, eps: f64, f: Observable) -> Result<Self> {
        if i == j {
            return Err(Error::Domain(format!("product identity needs i != j, got {i}")));
        }
        if i == 0 || j == 0 || !(eps > 0.0) {
            return Err(Error::Domain("need i, j >= 1 and eps > 0".into()));
        }
        Ok(Self {
            i,
            j,
            eps,
            f,
            lhs: 0.0,
            f_time: 0.0,
            occ_j: 0.0,
            elapsed: 0.0,
        })
    }

    /// Largest gap index this observer reads.
    pub fn k_required(&self) -> usize {
        self.i.max(self.j)
    }

    pub fn sample(&self) -> ProductSample {
        let t = self.elapsed;
        ProductSample {
            lhs: self.lhs / (self.eps * t),
            f_mean: self.f_time / t,
            nu_j: self.occ_j / (self.eps * t),
        }
    }
}

impl GapObserver for ProductObserver {
    fn on_step(&mut self, _t: f64, gaps: &[f64], _noise: &[f64], dt: f64) {
        let fz = self.f.eval_at(gaps[self.i - 1]);
        self.f_time += fz * dt;
        if gaps[self.j - 1] <= self.eps {
            self.lhs += fz * dt;
            self.occ_j += dt;
        }
        self.elapsed += dt;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProductCheck {
    pub i: usize,
    pub j: usize,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub pass: bool,
}

impl ProductCheck {
    pub fn row(&self) -> IdentityRow {
        IdentityRow {
            check: "product".into(),
            i: self.i,
            j: Some(self.j),
            lhs: self.lhs,
            rhs: self.rhs,
            stderr: (self.lhs_stderr.powi(2) + self.rhs_stderr.powi(2)).sqrt(),
            pass: self.pass,
        }
    }
}

/// Compare `E ∫ f(Z_i) dL*_j` with `ν̂_j · E_π f(Z_i)`.
///
/// Both sides use the same `ε`, so for `f ≡ 1` they coincide. The right side
/// is a product of two replica means; its error comes from the delta method
/// with their empirical covariance. The check passes when the two 3σ
/// intervals overlap.
pub fn check_product_identity(samples: &[ProductSample], i: usize, j: usize) -> Result<ProductCheck> {
    if i == j {
        return Err(Error::Domain(format!("product identity needs i != j, got {i}")));
    }
    if samples.len() < MIN_REPLICAS {
        return Err(Error::InsufficientData(format!(
            "{} replicas, need at least {MIN_REPLICAS}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let lhs: Moments = samples.iter().map(|s| s.lhs).collect();
    let nu: Moments = samples.iter().map(|s| s.nu_j).collect();
    let fm: Moments = samples.iter().map(|s| s.f_mean).collect();
    let cov = samples
        .iter()
        .map(|s| (s.nu_j - nu.mean) * (s.f_mean - fm.mean))
        .sum::<f64>()
        / (n - 1.0);
    let rhs = nu.mean * fm.mean;
    let var_rhs = (fm.mean.powi(2) * nu.variance()
        + nu.mean.powi(2) * fm.variance()
        + 2.0 * nu.mean * fm.mean * cov)
        / n;
    let rhs_stderr = var_rhs.max(0.0).sqrt();
    let lhs_stderr = lhs.stderr();
    let pass = (lhs.mean - rhs).abs() <= 3.0 * (lhs_stderr + rhs_stderr) + 1e-12 * rhs.abs();
    Ok(ProductCheck {
        i,
        j,
        lhs: lhs.mean,
        lhs_stderr,
        rhs,
        rhs_stderr,
        pass,
    })
}

/// Largest λ accepted by the Laplace check: `λ ≤ ν_i/2` and `λ < 2 i ḡ_i`.
pub fn laplace_bound(spec: &DriftSpec, i: usize, nu_i: f64) -> (f64, f64) {
    (0.5 * nu_i, 2.0 * i as f64 * spec.bar_g(i))
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceRow {
    pub i: usize,
    pub lambda: f64,
    pub empirical: f64,
    pub stderr: f64,
    /// `ν̂_i / (ν̂_i − λ)`.
    pub predicted: f64,
    pub rel_error: f64,
    pub pass: bool,
}

impl LaplaceRow {
    pub fn row(&self) -> IdentityRow {
        IdentityRow {
            check: format!("laplace(lambda={})", self.lambda),
            i: self.i,
            j: None,
            lhs: self.empirical,
            rhs: self.predicted,
            stderr: self.stderr,
            pass: self.pass,
        }
    }
}

pub const LAPLACE_REL_TOL: f64 = 0.05;

/// Empirical `E e^{λ Z_i}` over every recorded frame of stationary replicas
/// against `ν_i/(ν_i − λ)`, with `nu_i` usually the local-time estimate.
pub fn check_laplace_identity(
    trajectories: &[GapTrajectory],
    spec: &DriftSpec,
    i: usize,
    nu_i: f64,
    lambda_grid: &[f64],
) -> Result<Vec<LaplaceRow>> {
    let (half, mgf) = laplace_bound(spec, i, nu_i);
    if let Some(&bad) = lambda_grid.iter().find(|&&l| l > half || l >= mgf) {
        return Err(Error::Domain(format!(
            "lambda = {bad} outside the admissible range (<= {half}, < {mgf})"
        )));
    }
    if trajectories.is_empty() {
        return Err(Error::InsufficientData("no trajectories".into()));
    }
    lambda_grid
        .iter()
        .map(|&lambda| {
            let per_replica: Moments = trajectories
                .iter()
                .map(|t| {
                    t.gaps.iter().map(|f| (lambda * f[i - 1]).exp()).sum::<f64>()
                        / t.gaps.len() as f64
                })
                .collect();
            let predicted = nu_i / (nu_i - lambda);
            let rel_error = (per_replica.mean - predicted).abs() / predicted;
            Ok(LaplaceRow {
                i,
                lambda,
                empirical: per_replica.mean,
                stderr: per_replica.stderr(),
                predicted,
                rel_error,
                pass: rel_error <= LAPLACE_REL_TOL,
            })
        })
        .collect()
}

/// Discretized Itô expansion of `ψ_ε(Z_i)` along one path.
///
/// Tracks `ψ_ε(Z_i(t)) − ψ_ε(Z_i(0))` minus the drift, martingale,
/// quadratic-variation and neighbouring local-time terms, with the
/// neighbours' local times taken from the sort displacements of the scheme.
/// `ψ'_ε(0) = 0` removes `dL*_i` itself.
///
/// The `dL*_{i±1}` integrands are read at the collision inside the step: the
/// free (unsorted) gap path is interpolated linearly to the time the
/// neighbouring gap reaches zero. A left-point rule carries an `O(√dt)` bias
/// because `Z_i` moves with the push during the step.
///
/// Needs the observed gaps `i − 1`, `i`, `i + 1` (`k_obs ≥ i + 1`).
#[derive(Debug, Clone)]
pub struct ItoPsiObserver {
    pub i: usize,
    pub eps: f64,
    h: [f64; 3],
    psi_start: Option<f64>,
    gap: f64,
    free: f64,
    theta: [f64; 2],
    compensator: f64,
}

/// Fraction of the step at which a gap moving linearly from `z` by `dz`
/// reaches zero; 1 when it does not.
fn hitting_fraction(z: f64, dz: f64) -> f64 {
    if z + dz < 0.0 && dz < 0.0 {
        (z / -dz).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

impl ItoPsiObserver {
    pub fn new(spec: &DriftSpec, i: usize, eps: f64) -> Self {
        let lower = if i >= 2 { spec.h(i - 1) } else { 0.0 };
        Self {
            i,
            eps,
            h: [lower, spec.h(i), spec.h(i + 1)],
            psi_start: None,
            gap: 0.0,
            free: 0.0,
            theta: [1.0; 2],
            compensator: 0.0,
        }
    }

    /// Residual given the gap at the end of the path.
    pub fn residual(&self, final_gap: f64) -> f64 {
        let start = self.psi_start.unwrap_or(0.0);
        psi_eps(final_gap, self.eps).value - start - self.compensator
    }
}

impl GapObserver for ItoPsiObserver {
    fn on_step(&mut self, _t: f64, gaps: &[f64], noise: &[f64], dt: f64) {
        let i = self.i;
        let psi = psi_eps(gaps[i - 1], self.eps);
        if self.psi_start.is_none() {
            self.psi_start = Some(psi.value);
        }
        let dw = noise[i] - noise[i - 1];
        // d<W*_i> = 2 dt, so the Itô correction is ψ'' dt.
        self.compensator += psi.first * (self.h[1] * dt + dw) + psi.second * dt;
        self.gap = gaps[i - 1];
        self.free = self.h[1] * dt + dw;
        self.theta[0] = if i >= 2 {
            hitting_fraction(gaps[i - 2], self.h[0] * dt + noise[i - 1] - noise[i - 2])
        } else {
            1.0
        };
        self.theta[1] = hitting_fraction(gaps[i], self.h[2] * dt + noise[i + 1] - noise[i]);
    }

    fn wants_local_time(&self) -> bool {
        true
    }

    fn on_local_time(&mut self, dl: &[f64]) {
        let i = self.i;
        let lower = if i >= 2 { dl[i - 2] } else { 0.0 };
        let upper = dl.get(i).copied().unwrap_or(0.0);
        for (theta, push) in self.theta.iter().zip([lower, upper]) {
            if push > 0.0 {
                let slope = psi_eps((self.gap + theta * self.free).max(0.0), self.eps).first;
                self.compensator -= slope * 0.5 * push;
            }
        }
    }
}
