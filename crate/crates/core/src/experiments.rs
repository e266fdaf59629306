//! Verification experiments built from the simulation and estimation layers.
//!
//! A [`Panel`] is one batch of stationary replicas with every per-step
//! observer the local-time checks need; the stationarity, `ν`, balance,
//! product and Laplace analyses all read the same panel.

use serde::{Deserialize, Serialize};

use crate::drift::{pi_a_rates, DriftSpec};
use crate::dynamics::{
    advance, drift_increments, positions_from_gaps, simulate_gap_paths, GapObserver,
    GapTrajectory, InitialLaw, PathOptions, SimConfig,
};
use crate::error::{Error, Result};
use crate::local_time::{
    check_balance_recursion, check_laplace_identity, check_product_identity, estimate_nu,
    final_occupations, nu_target, BalanceResidual, ItoPsiObserver, LaplaceRow, NuEstimate,
    ProductCheck, ProductObserver, ProductSample,
};
use crate::parallel::run_replicas;
use crate::rng::RankNoise;
use crate::sampler::ProductLaw;
use crate::stats::{
    holm_reject, ks_exponential, linear_fit, rate_mle, time_average, LinearFit, Moments,
    Observable,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductPair {
    pub i: usize,
    pub j: usize,
    pub f: Observable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoSpec {
    pub i: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub a: f64,
    pub sim: SimConfig,
    pub replicas: usize,
    pub eps_ladder: Vec<f64>,
    #[serde(default)]
    pub product_pairs: Vec<ProductPair>,
    #[serde(default)]
    pub ito: Option<ItoSpec>,
}

/// Stationary replicas plus the per-replica observer summaries.
#[derive(Debug, Clone)]
pub struct Panel {
    pub a: f64,
    pub horizon: f64,
    pub eps_ladder: Vec<f64>,
    pub trajectories: Vec<GapTrajectory>,
    /// `product[pair][replica]`.
    pub product: Vec<Vec<ProductSample>>,
    pub ito_residuals: Vec<f64>,
}

struct PanelObserver {
    products: Vec<ProductObserver>,
    ito: Option<ItoPsiObserver>,
}

impl GapObserver for PanelObserver {
    fn on_step(&mut self, t: f64, gaps: &[f64], noise: &[f64], dt: f64) {
        self.products.on_step(t, gaps, noise, dt);
        self.ito.on_step(t, gaps, noise, dt);
    }

    fn wants_local_time(&self) -> bool {
        self.ito.wants_local_time()
    }

    fn on_local_time(&mut self, dl: &[f64]) {
        self.ito.on_local_time(dl);
    }
}

pub fn run_panel(spec: &DriftSpec, cfg: &PanelConfig, threads: Option<usize>) -> Result<Panel> {
    cfg.sim.validate()?;
    let smallest = cfg.eps_ladder.iter().copied().fold(f64::INFINITY, f64::min);
    for pair in &cfg.product_pairs {
        if pair.i.max(pair.j) > cfg.sim.k_obs {
            return Err(Error::config(
                "panel.product_pairs",
                format!("pair ({}, {}) exceeds k_obs = {}", pair.i, pair.j, cfg.sim.k_obs),
            ));
        }
        ProductObserver::new(pair.i, pair.j, smallest, pair.f.clone())?;
    }
    if let Some(ito) = cfg.ito {
        if ito.i == 0 || ito.i + 1 > cfg.sim.k_obs {
            return Err(Error::config(
                "panel.ito",
                format!("gap {} needs k_obs >= {}", ito.i, ito.i + 1),
            ));
        }
    }
    let init = InitialLaw::Stationary { a: cfg.a };
    let results = run_replicas(threads, cfg.replicas, |replica| {
        let mut observer = PanelObserver {
            products: cfg
                .product_pairs
                .iter()
                .map(|p| ProductObserver::new(p.i, p.j, smallest, p.f.clone()))
                .collect::<Result<Vec<_>>>()?,
            ito: cfg
                .ito
                .map(|s| ItoPsiObserver::new(spec, s.i, s.eps)),
        };
        let opts = PathOptions {
            replica,
            record_noise: false,
        };
        let traj =
            simulate_gap_paths(spec, &init, &cfg.sim, &cfg.eps_ladder, &opts, &mut observer)?;
        let products: Vec<ProductSample> = observer.products.iter().map(|o| o.sample()).collect();
        let ito = observer
            .ito
            .as_ref()
            .map(|o| o.residual(traj.final_gaps()[o.i - 1]));
        Ok::<_, Error>((traj, products, ito))
    });
    let mut panel = Panel {
        a: cfg.a,
        horizon: cfg.sim.n_steps() as f64 * cfg.sim.dt,
        eps_ladder: cfg.eps_ladder.clone(),
        trajectories: Vec::with_capacity(cfg.replicas),
        product: vec![Vec::with_capacity(cfg.replicas); cfg.product_pairs.len()],
        ito_residuals: Vec::new(),
    };
    for result in results {
        let (traj, products, ito) = result?;
        panel.trajectories.push(traj);
        for (col, s) in panel.product.iter_mut().zip(products) {
            col.push(s);
        }
        if let Some(r) = ito {
            panel.ito_residuals.push(r);
        }
    }
    Ok(panel)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub i: usize,
    pub t: f64,
    pub target: f64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KsRow {
    pub i: usize,
    pub t: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub a: f64,
    pub rates: Vec<RateRow>,
    pub ks: Vec<KsRow>,
    /// Fit of the scaled KS statistic `√n D` against `t`, pooled over gaps.
    pub trend: LinearFit,
    pub trend_pass: bool,
    pub pass: bool,
}

pub const RATE_REL_TOL: f64 = 0.05;

/// Rate MLEs at the horizon and KS tests at each of `times` for gaps
/// `1..=gaps`.
///
/// Passes when every terminal rate is within 5% of `n(2ḡ_n + a)`, no KS test
/// is rejected at family level 0.01 (Holm), and the slope of `√n D` in `t`
/// is within three standard errors of zero.
pub fn stationarity_check(
    panel: &Panel,
    spec: &DriftSpec,
    gaps: usize,
    times: &[f64],
) -> Result<StationarityReport> {
    let rates = pi_a_rates(spec, panel.a, gaps)?;
    let first = panel
        .trajectories
        .first()
        .ok_or_else(|| Error::InsufficientData("empty panel".into()))?;
    let column = |frame: usize, i: usize| -> Vec<f64> {
        panel.trajectories.iter().map(|t| t.gaps[frame][i - 1]).collect()
    };

    let last = first.times.len() - 1;
    let t_end = first.times[last];
    let mut rate_rows = Vec::with_capacity(gaps);
    for i in 1..=gaps {
        let est = rate_mle(&column(last, i))?;
        let target = rates.rate(i);
        let rel_error = (est.rate - target).abs() / target;
        rate_rows.push(RateRow {
            i,
            t: t_end,
            target,
            rate: est.rate,
            ci_lo: est.ci_lo,
            ci_hi: est.ci_hi,
            rel_error,
            pass: rel_error <= RATE_REL_TOL,
        });
    }

    let mut ks_rows = Vec::new();
    for &t in times {
        let frame = first.frame_at(t);
        for i in 1..=gaps {
            let ks = ks_exponential(&column(frame, i), rates.rate(i))?;
            ks_rows.push(KsRow {
                i,
                t: first.times[frame],
                statistic: ks.statistic,
                p_value: ks.p_value,
                rejected: false,
            });
        }
    }
    let p: Vec<f64> = ks_rows.iter().map(|r| r.p_value).collect();
    for (row, rej) in ks_rows.iter_mut().zip(holm_reject(&p, 0.01)) {
        row.rejected = rej;
    }
    let n = panel.trajectories.len() as f64;
    let x: Vec<f64> = ks_rows.iter().map(|r| r.t).collect();
    let y: Vec<f64> = ks_rows.iter().map(|r| n.sqrt() * r.statistic).collect();
    let trend = linear_fit(&x, &y)?;
    let trend_pass = trend.slope.abs() <= 3.0 * trend.se_slope;
    let pass = rate_rows.iter().all(|r| r.pass) && !ks_rows.iter().any(|r| r.rejected) && trend_pass;
    Ok(StationarityReport {
        a: panel.a,
        rates: rate_rows,
        ks: ks_rows,
        trend,
        trend_pass,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NuRow {
    pub i: usize,
    pub target: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub rel_error: f64,
    pub r_squared: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NuReport {
    pub a: f64,
    pub rows: Vec<NuRow>,
    pub balance: Vec<BalanceResidual>,
    #[serde(skip)]
    pub estimates: Vec<NuEstimate>,
}

pub const NU_REL_TOL: f64 = 0.10;

/// `ν̂_i` for `i = 1..=k` against `i(a + 2ḡ_i)`, and balance residuals for
/// `i = 2..k−1`.
pub fn nu_check(panel: &Panel, spec: &DriftSpec, k: usize) -> Result<NuReport> {
    let occ = final_occupations(&panel.trajectories);
    let estimates = (1..=k)
        .map(|i| estimate_nu(&occ, panel.horizon, i, &panel.eps_ladder))
        .collect::<Result<Vec<_>>>()?;
    let rows = estimates
        .iter()
        .map(|e| {
            let target = nu_target(spec, panel.a, e.i);
            let rel_error = (e.extrapolated - target).abs() / target;
            NuRow {
                i: e.i,
                target,
                estimate: e.extrapolated,
                stderr: e.stderr,
                rel_error,
                r_squared: e.r_squared,
                pass: rel_error <= NU_REL_TOL,
            }
        })
        .collect();
    let balance = check_balance_recursion(&estimates, spec)?;
    Ok(NuReport {
        a: panel.a,
        rows,
        balance,
        estimates,
    })
}

/// `∫ f dExp(rate)` by composite Simpson on a range holding all but
/// `e^{-60}` of the mass.
pub fn exponential_expectation(f: &Observable, rate: f64) -> f64 {
    let upper = 60.0 / rate;
    let n = 20_000;
    let h = upper / n as f64;
    let g = |z: f64| f.eval_at(z) * rate * (-rate * z).exp();
    let mut s = g(0.0) + g(upper);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
    }
    s * h / 3.0
}

#[derive(Debug, Clone, Serialize)]
pub struct ProductRow {
    #[serde(flatten)]
    pub check: ProductCheck,
    /// `ν_j ∫ f dπ_i` from the closed-form rates.
    pub target: f64,
}

pub fn product_checks(
    panel: &Panel,
    pairs: &[ProductPair],
    spec: &DriftSpec,
) -> Result<Vec<ProductRow>> {
    pairs
        .iter()
        .zip(&panel.product)
        .map(|(pair, samples)| {
            let check = check_product_identity(samples, pair.i, pair.j)?;
            let rate_i = nu_target(spec, panel.a, pair.i);
            let target = nu_target(spec, panel.a, pair.j) * exponential_expectation(&pair.f, rate_i);
            Ok(ProductRow { check, target })
        })
        .collect()
}

/// `λ = c ν_i / 4` for each multiplier `c`, so that `|c| <= 2` keeps
/// `|λ| <= ν_i / 2`.
pub fn laplace_grid(spec: &DriftSpec, a: f64, i: usize, multipliers: &[f64]) -> Vec<f64> {
    let nu = nu_target(spec, a, i);
    multipliers.iter().map(|c| c * nu / 4.0).collect()
}

pub const LAPLACE_MULTIPLIERS: [f64; 3] = [-2.0, -1.0, 0.5];

pub fn laplace_checks(
    panel: &Panel,
    spec: &DriftSpec,
    nus: &[NuEstimate],
    gaps: usize,
    multipliers: &[f64],
) -> Result<Vec<LaplaceRow>> {
    let mut rows = Vec::new();
    for i in 1..=gaps {
        let nu_hat = nus
            .iter()
            .find(|e| e.i == i)
            .ok_or_else(|| Error::InsufficientData(format!("no estimate of nu_{i}")))?
            .extrapolated;
        let grid = laplace_grid(spec, panel.a, i, multipliers);
        rows.extend(check_laplace_identity(&panel.trajectories, spec, i, nu_hat, &grid)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ItoReport {
    pub mean: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub pass: bool,
}

/// Mean of the per-replica Itô residuals of `ψ_ε`, centred within 4 standard errors.
pub fn ito_check(panel: &Panel) -> Result<ItoReport> {
    if panel.ito_residuals.is_empty() {
        return Err(Error::InsufficientData("panel has no Itô observer".into()));
    }
    let m: Moments = panel.ito_residuals.iter().copied().collect();
    Ok(ItoReport {
        mean: m.mean,
        stderr: m.stderr(),
        replicas: m.count,
        pass: m.mean.abs() <= 4.0 * m.stderr(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicConfig {
    pub a: f64,
    pub sim: SimConfig,
    pub observable: Observable,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicReport {
    pub horizon: f64,
    pub final_average: f64,
    pub target: f64,
    pub rel_error: f64,
    pub pass: bool,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub averages: Vec<f64>,
}

pub const ERGODIC_REL_TOL: f64 = 0.10;

/// One long stationary path and the running average of an observable.
pub fn ergodic_average(
    spec: &DriftSpec,
    cfg: &ErgodicConfig,
    replica: u64,
) -> Result<ErgodicReport> {
    let sim = &cfg.sim;
    sim.validate()?;
    let n = sim.n_particles;
    let k = sim.k_obs;
    let obs_gap = cfg.observable.gap_index().unwrap_or(1);
    if obs_gap > k {
        return Err(Error::config(
            "ergodic.observable",
            format!("gap {obs_gap} is not among the {k} observed gaps"),
        ));
    }
    let law = ProductLaw::pi_a(spec, cfg.a, n - 1)?;
    let z0 = InitialLaw::Product { law }.sample_gaps(spec, n - 1, sim.seed, replica)?;
    let mut y = positions_from_gaps(&z0);
    let drift = drift_increments(spec, n, sim.dt);
    let mut noise = RankNoise::new(sim.seed, replica, n);
    let mut w = vec![0.0; n];
    let steps = sim.n_steps();

    let mut times = Vec::with_capacity(steps / sim.record_stride + 2);
    let mut frames = Vec::with_capacity(steps / sim.record_stride + 2);
    let gaps_of = |y: &[f64]| -> Vec<f64> { (1..=k).map(|i| y[i] - y[i - 1]).collect() };
    for step in 0..steps {
        if step % sim.record_stride == 0 {
            times.push(step as f64 * sim.dt);
            frames.push(gaps_of(&y));
        }
        noise.fill(&mut w, sim.dt.sqrt());
        advance(&mut y, &drift, &w);
    }
    times.push(steps as f64 * sim.dt);
    frames.push(gaps_of(&y));

    let averages = time_average(&times, &frames, &cfg.observable);
    let final_average = *averages.last().expect("at least one frame");
    let gaps_law = ProductLaw::pi_a(spec, cfg.a, k)?;
    let target = match &cfg.observable {
        Observable::Constant { value } => *value,
        obs => {
            let rate = match &gaps_law.components[obs_gap - 1] {
                crate::sampler::Marginal::Exponential { rate } => *rate,
                crate::sampler::Marginal::Empirical { .. } => unreachable!("π_a is exponential"),
            };
            exponential_expectation(obs, rate)
        }
    };
    let rel_error = (final_average - target).abs() / target.abs();
    Ok(ErgodicReport {
        horizon: *times.last().unwrap(),
        final_average,
        target,
        rel_error,
        pass: rel_error <= ERGODIC_REL_TOL,
        times,
        averages,
    })
}
