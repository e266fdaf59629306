//! Drift vectors of the g-Atlas model and the quantities derived from them.
//!
//! A drift vector is stored as a finite prefix `g_0..g_{m-1}` followed by a
//! zero tail. The zero tail makes `Σ g_i²` finite, so every [`DriftSpec`]
//! lies in the square-summable class D, and it also makes membership in D₁
//! decidable in closed form (see [`check_class_d1`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TailRule {
    /// `g_i = 0` for every index past the prefix.
    #[default]
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "DriftSpecRepr", into = "DriftSpecRepr")]
pub struct DriftSpec {
    prefix: Vec<f64>,
    tail: TailRule,
    name: Option<String>,
    /// `partial_sums[n] = g_0 + ... + g_{n-1}` for `n <= prefix.len()`.
    partial_sums: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DriftSpecRepr {
    prefix: Vec<f64>,
    #[serde(default)]
    tail: TailRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

impl From<DriftSpecRepr> for DriftSpec {
    fn from(r: DriftSpecRepr) -> Self {
        let mut spec = DriftSpec::new(r.prefix);
        spec.tail = r.tail;
        spec.name = r.name;
        spec
    }
}

impl From<DriftSpec> for DriftSpecRepr {
    fn from(s: DriftSpec) -> Self {
        DriftSpecRepr {
            prefix: s.prefix,
            tail: s.tail,
            name: s.name,
        }
    }
}

impl PartialEq for DriftSpec {
    fn eq(&self, other: &Self) -> bool {
        self.prefix == other.prefix && self.tail == other.tail && self.name == other.name
    }
}

impl DriftSpec {
    pub fn new(prefix: Vec<f64>) -> Self {
        let mut partial_sums = Vec::with_capacity(prefix.len() + 1);
        let mut acc = 0.0;
        partial_sums.push(acc);
        for &g in &prefix {
            acc += g;
            partial_sums.push(acc);
        }
        Self {
            prefix,
            tail: TailRule::Zero,
            name: None,
            partial_sums,
        }
    }

    pub fn named(prefix: Vec<f64>, name: &str) -> Self {
        let mut spec = Self::new(prefix);
        spec.name = Some(name.to_string());
        spec
    }

    /// The infinite Atlas drift `(1, 0, 0, ...)`.
    pub fn atlas1() -> Self {
        Self::named(vec![1.0], "atlas1")
    }

    pub fn zero() -> Self {
        Self::named(vec![], "zero")
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    pub fn tail(&self) -> TailRule {
        self.tail
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.prefix.iter().position(|g| !g.is_finite()) {
            return Err(Error::config(
                format!("drift.prefix[{i}]"),
                "drift entries must be finite",
            ));
        }
        Ok(())
    }

    /// `g_i`, applying the tail rule past the prefix.
    pub fn g(&self, i: usize) -> f64 {
        match self.tail {
            TailRule::Zero => self.prefix.get(i).copied().unwrap_or(0.0),
        }
    }

    /// `g_0 + ... + g_{n-1}`.
    pub fn partial_sum(&self, n: usize) -> f64 {
        let m = self.prefix.len();
        self.partial_sums[n.min(m)]
    }

    /// Running average `ḡ_n`, `n >= 1`.
    pub fn bar_g(&self, n: usize) -> f64 {
        assert!(n >= 1, "running average is defined for n >= 1");
        self.partial_sum(n) / n as f64
    }

    /// Gap drift `h_i = g_i - g_{i-1}`, `i >= 1`.
    pub fn h(&self, i: usize) -> f64 {
        self.g(i) - self.g(i - 1)
    }

    /// Lower drift bound `g^l >= 1` with `g_j >= -g^l` for every `j`.
    pub fn lower_bound(&self) -> f64 {
        self.prefix.iter().fold(1.0_f64, |acc, &g| acc.max(-g))
    }

    /// `inf_{n >= 1} ḡ_n` over the whole (infinite) sequence.
    pub fn inf_bar_g(&self) -> f64 {
        let m = self.prefix.len();
        let head = (1..=m.max(1))
            .map(|n| self.bar_g(n))
            .fold(f64::INFINITY, f64::min);
        // Past the prefix ḡ_n = S/n: decreasing to 0 when S > 0 (infimum 0,
        // not attained), increasing to 0 when S < 0 (minimum at n = m + 1).
        let total = self.partial_sum(m);
        let tail = if total >= 0.0 {
            0.0
        } else {
            total / (m + 1) as f64
        };
        head.min(tail)
    }

    /// Smallest admissible shift: `a_min = -2 inf_n ḡ_n`.
    pub fn a_min(&self) -> f64 {
        // `+ 0.0` turns the `-0.0` of a zero infimum into `0.0`.
        -2.0 * self.inf_bar_g() + 0.0
    }

    /// Whether the infimum of ḡ is attained only in the limit along strict
    /// running minima, i.e. whether the drift lies in D₁.
    pub fn in_class_d1(&self) -> bool {
        let m = self.prefix.len();
        self.partial_sum(m) > 0.0 && (1..=m).all(|n| self.bar_g(n) > 0.0)
    }
}

/// `(ḡ_1, ..., ḡ_{n_max})`.
pub fn average_drifts(spec: &DriftSpec, n_max: usize) -> Vec<f64> {
    assert!(n_max >= 1, "n_max must be positive");
    (1..=n_max).map(|n| spec.bar_g(n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    /// `a > a_min`.
    Interior,
    /// `a = a_min` and the drift is in D₁.
    Boundary,
    /// `a < a_min`, or `a = a_min` outside D₁.
    Inadmissible,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryRates {
    pub a: f64,
    /// `rates[n-1] = n (2 ḡ_n + a)` for `n = 1..=k`.
    pub rates: Vec<f64>,
    pub a_min: f64,
    pub admissibility: Admissibility,
}

impl StationaryRates {
    pub fn rate(&self, n: usize) -> f64 {
        self.rates[n - 1]
    }

    /// Scale factors `c_n = 2 / rate_n` that make `Z_n / c_n` iid Exp(2).
    pub fn scale(&self, n: usize) -> f64 {
        2.0 / self.rates[n - 1]
    }
}

pub fn admissibility(spec: &DriftSpec, a: f64) -> Admissibility {
    let a_min = spec.a_min();
    if a > a_min {
        Admissibility::Interior
    } else if a == a_min && spec.in_class_d1() {
        Admissibility::Boundary
    } else {
        Admissibility::Inadmissible
    }
}

/// Exponential rates of the first `k` gap marginals of `π_a^g`.
pub fn pi_a_rates(spec: &DriftSpec, a: f64, k: usize) -> Result<StationaryRates> {
    assert!(k >= 1, "k must be positive");
    let rates: Vec<f64> = (1..=k)
        .map(|n| n as f64 * (2.0 * spec.bar_g(n) + a))
        .collect();
    if let Some((index, &rate)) = rates.iter().enumerate().find(|(_, r)| **r <= 0.0) {
        return Err(Error::NonpositiveRate {
            index: index + 1,
            rate,
        });
    }
    Ok(StationaryRates {
        a,
        rates,
        a_min: spec.a_min(),
        admissibility: admissibility(spec, a),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct D1Certificate {
    /// Exact D₁ membership, decidable for zero-tail drifts.
    pub member: bool,
    /// Every `N` in `[2, n_max]` with `ḡ_k > ḡ_N` for all `k < N`.
    pub witnesses: Vec<usize>,
}

/// Scan `[2, n_max]` for strict running minima of ḡ.
///
/// The witness list is a finite-horizon certificate. For a zero tail the
/// infinite question has a closed form: past the prefix `ḡ_N = S/N`, so
/// infinitely many witnesses exist iff `S > 0` and every `ḡ_k` is positive.
pub fn check_class_d1(spec: &DriftSpec, n_max: usize) -> D1Certificate {
    assert!(n_max >= 2, "n_max must be at least 2");
    let mut witnesses = Vec::new();
    let mut running_min = spec.bar_g(1);
    for n in 2..=n_max {
        let current = spec.bar_g(n);
        if running_min > current {
            witnesses.push(n);
        }
        running_min = running_min.min(current);
    }
    D1Certificate {
        member: spec.in_class_d1(),
        witnesses,
    }
}

/// Stationary rates `2l(ḡ_l - ḡ_N)`, `l = 1..N-1`, of the `N`-particle gap system.
pub fn finite_system_rates(spec: &DriftSpec, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Domain(format!("finite system needs N >= 2, got {n}")));
    }
    let bar_n = spec.bar_g(n);
    let rates: Vec<f64> = (1..n)
        .map(|l| 2.0 * l as f64 * (spec.bar_g(l) - bar_n))
        .collect();
    if let Some((index, &rate)) = rates.iter().enumerate().find(|(_, r)| **r <= 0.0) {
        return Err(Error::NonpositiveRate {
            index: index + 1,
            rate,
        });
    }
    Ok(rates)
}
