//! Statistics shared by the verification experiments: mergeable moments,
//! exponential-rate MLEs, one-sample KS tests, Holm correction, linear fits,
//! running time averages, and the scaled-transposition invariance test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::drift::{pi_a_rates, DriftSpec};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sampler::{sample_gaps, ProductLaw};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn normal_sf(u: f64) -> f64 {
    0.5 * erfc(u / std::f64::consts::SQRT_2)
}

/// Mergeable first and second moments (Welford / Chan).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / n as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64 * other.count as f64) / n as f64;
        Moments { count: n, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Exponential rate MLE `1 / mean` with asymptotic 95% interval.
pub fn rate_mle(samples: &[f64]) -> Result<RateEstimate> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "rate MLE needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(x) = samples.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("rate MLE needs positive samples, got {x}")));
    }
    let n = samples.len();
    let rate = n as f64 / samples.iter().sum::<f64>();
    let half = Z95 / (n as f64).sqrt();
    Ok(RateEstimate {
        rate,
        ci_lo: rate * (1.0 - half),
        ci_hi: rate * (1.0 + half),
        n,
    })
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // The alternating series converges slowly here and the value is 1 to
        // double precision anyway.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsResult {
    /// `sup |F_n - F|`.
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test of `samples` against the Exp(`rate`) CDF.
///
/// The p-value uses Stephens' finite-sample scaling
/// `(√n + 0.12 + 0.11/√n) D` fed to the asymptotic Kolmogorov law. It is
/// accurate to a few percent in p for n ≥ 5 and reduces to the plain
/// asymptotic test for large n, so small samples need no separate table.
pub fn ks_exponential(samples: &[f64], rate: f64) -> Result<KsResult> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("KS rate must be positive, got {rate}")));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("KS test needs samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let cdf = 1.0 - (-rate * x.max(0.0)).exp();
            (cdf - k as f64 / nf).max((k + 1) as f64 / nf - cdf)
        })
        .fold(0.0, f64::max);
    let sqrt_n = nf.sqrt();
    let p_value = kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * statistic);
    Ok(KsResult {
        statistic,
        p_value,
        n,
    })
}

/// Two-sample KS test; the p-value uses the effective size `nm/(n+m)` with
/// the same finite-sample scaling as [`ks_exponential`].
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS test needs two nonempty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut p, mut q, mut statistic) = (0usize, 0usize, 0.0f64);
    while p < x.len() && q < y.len() {
        let v = x[p].min(y[q]);
        while p < x.len() && x[p] <= v {
            p += 1;
        }
        while q < y.len() && y[q] <= v {
            q += 1;
        }
        statistic = statistic.max((p as f64 / n - q as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_sf((ne + 0.12 + 0.11 / ne) * statistic),
        n: x.len().min(y.len()),
    })
}

/// Holm–Bonferroni step-down procedure; returns which hypotheses are rejected.
pub fn holm_reject(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut rejected = vec![false; m];
    for (rank, &idx) in order.iter().enumerate() {
        if p_values[idx] <= alpha / (m - rank) as f64 {
            rejected[idx] = true;
        } else {
            break;
        }
    }
    rejected
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs two equal-length series of length >= 2 ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|&xi| (xi - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("linear fit needs distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(&xi, &yi)| (xi - mx) * (yi - my)).sum();
    let syy: f64 = y.iter().map(|&yi| (yi - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let s2 = if n > 2 { sse / (nf - 2.0) } else { 0.0 };
    let se_slope = (s2 / sxx).sqrt();
    let se_intercept = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit {
        intercept,
        slope,
        se_intercept,
        se_slope,
        r_squared,
    })
}

/// Wilson score interval for a binomial proportion at 95%.
pub fn proportion_ci(successes: u64, trials: u64) -> (f64, f64, f64) {
    if trials == 0 {
        return (0.0, 0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (p, lo, hi)
}

/// Functions of the gap vector whose time averages are tracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Constant { value: f64 },
    /// `z_i` (1-based gap index).
    Coordinate { i: usize },
    /// `1{z_i > threshold}`.
    Indicator { i: usize, threshold: f64 },
    /// `e^{λ z_i}`.
    ExpMoment { i: usize, lambda: f64 },
    /// Piecewise-linear interpolation of `values` on `grid`, clamped at the ends.
    Tabulated {
        i: usize,
        grid: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Observable {
    pub fn eval(&self, gaps: &[f64]) -> f64 {
        match self {
            Observable::Constant { value } => *value,
            Observable::Coordinate { i } => gaps[i - 1],
            Observable::Indicator { i, threshold } => {
                if gaps[i - 1] > *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Observable::ExpMoment { i, lambda } => (lambda * gaps[i - 1]).exp(),
            Observable::Tabulated { i, grid, values } => interpolate(grid, values, gaps[i - 1]),
        }
    }

    /// Value when the observed gap equals `z` (the gap index is ignored).
    pub fn eval_at(&self, z: f64) -> f64 {
        match self {
            Observable::Constant { value } => *value,
            Observable::Coordinate { .. } => z,
            Observable::Indicator { threshold, .. } => {
                if z > *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Observable::ExpMoment { lambda, .. } => (lambda * z).exp(),
            Observable::Tabulated { grid, values, .. } => interpolate(grid, values, z),
        }
    }

    /// Range of the observable when it is bounded.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            Observable::Constant { value } => Some((*value, *value)),
            Observable::Indicator { .. } => Some((0.0, 1.0)),
            Observable::Tabulated { values, .. } => Some((
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )),
            Observable::ExpMoment { lambda, .. } if *lambda <= 0.0 => Some((0.0, 1.0)),
            _ => None,
        }
    }

    pub fn gap_index(&self) -> Option<usize> {
        match self {
            Observable::Constant { .. } => None,
            Observable::Coordinate { i }
            | Observable::Indicator { i, .. }
            | Observable::ExpMoment { i, .. }
            | Observable::Tabulated { i, .. } => Some(*i),
        }
    }
}

fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    if x <= grid[0] {
        return values[0];
    }
    let last = grid.len() - 1;
    if x >= grid[last] {
        return values[last];
    }
    let k = grid.partition_point(|&g| g <= x) - 1;
    let w = (x - grid[k]) / (grid[k + 1] - grid[k]);
    values[k] + w * (values[k + 1] - values[k])
}

/// Trapezoid accumulator over a contiguous time segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrapezoidSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub v_start: f64,
    pub v_end: f64,
    pub integral: f64,
}

impl TrapezoidSegment {
    pub fn point(t: f64, v: f64) -> Self {
        Self {
            t_start: t,
            t_end: t,
            v_start: v,
            v_end: v,
            integral: 0.0,
        }
    }

    pub fn extend(&mut self, t: f64, v: f64) {
        self.integral += 0.5 * (self.v_end + v) * (t - self.t_end);
        self.t_end = t;
        self.v_end = v;
    }

    /// Join two segments where `next` starts at the frame `self` ends on.
    pub fn merge(&self, next: &TrapezoidSegment) -> TrapezoidSegment {
        debug_assert_eq!(self.t_end, next.t_start);
        TrapezoidSegment {
            t_start: self.t_start,
            t_end: next.t_end,
            v_start: self.v_start,
            v_end: next.v_end,
            integral: self.integral + next.integral,
        }
    }

    pub fn average(&self) -> f64 {
        let span = self.t_end - self.t_start;
        if span > 0.0 {
            self.integral / span
        } else {
            self.v_start
        }
    }
}

/// Running averages `A_t = (1/t) ∫_0^t obs(Z(s)) ds` on the recorded grid.
///
/// The first entry is the observable at the first frame.
pub fn time_average(times: &[f64], frames: &[Vec<f64>], obs: &Observable) -> Vec<f64> {
    assert_eq!(times.len(), frames.len());
    let mut out = Vec::with_capacity(times.len());
    let Some(first) = frames.first() else {
        return out;
    };
    let mut seg = TrapezoidSegment::point(times[0], obs.eval(first));
    out.push(seg.average());
    for (t, frame) in times.iter().zip(frames).skip(1) {
        seg.extend(*t, obs.eval(frame));
        let avg = seg.average();
        out.push(match obs.bounds() {
            // Rounding in the division must not leave the observable's range.
            Some((lo, hi)) => avg.clamp(lo, hi),
            None => avg,
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SwapVerdict {
    pub i: usize,
    /// `c_i / c_{i+1}`.
    pub scale: f64,
    pub p_values: Vec<f64>,
    pub rejected: Vec<bool>,
    pub pass: bool,
}

/// Apply the scaled transposition of coordinates `(i, i+1)` in place.
pub fn scaled_transposition(z: &mut [f64], i: usize, scale: f64) {
    let zi = z[i - 1];
    let zj = z[i];
    z[i - 1] = scale * zj;
    z[i] = zi / scale;
}

/// Check that the scaled transposition of coordinates `(i, i+1)` maps `π_a^g`
/// to itself: each coordinate of the transformed sample is KS-tested against
/// its `π_a^g` marginal, with Holm correction at family level 0.01.
pub fn swap_invariance_test(
    spec: &DriftSpec,
    a: f64,
    i: usize,
    n_samples: usize,
    seed: u64,
) -> Result<SwapVerdict> {
    if i == 0 {
        return Err(Error::Domain("swap index starts at 1".into()));
    }
    let k = i + 2;
    let rates = pi_a_rates(spec, a, k)?;
    let scale = rates.scale(i) / rates.scale(i + 1);
    let law = ProductLaw::exponential(&rates.rates)?;
    let mut rng = stream(seed, 0, 0);
    let mut columns = vec![Vec::with_capacity(n_samples); k];
    for _ in 0..n_samples {
        let mut z = sample_gaps(&law, &mut rng);
        scaled_transposition(&mut z, i, scale);
        for (col, x) in columns.iter_mut().zip(z) {
            col.push(x);
        }
    }
    let p_values = columns
        .iter()
        .zip(&rates.rates)
        .map(|(col, &r)| ks_exponential(col, r).map(|ks| ks.p_value))
        .collect::<Result<Vec<_>>>()?;
    let rejected = holm_reject(&p_values, 0.01);
    let pass = !rejected.iter().any(|&r| r);
    Ok(SwapVerdict {
        i,
        scale,
        p_values,
        rejected,
        pass,
    })
}
