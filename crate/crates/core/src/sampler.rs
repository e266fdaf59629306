//! Product-form gap laws: sampling, Laplace transforms, Hellinger affinities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drift::{pi_a_rates, DriftSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Exponential { rate: f64 },
    /// Resamples uniformly from a fixed multiset of nonnegative values.
    Empirical { samples: Vec<f64> },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::Exponential { rate } if !(*rate > 0.0 && rate.is_finite()) => {
                Err(Error::Domain(format!("exponential rate must be positive, got {rate}")))
            }
            Marginal::Empirical { samples } if samples.is_empty() => {
                Err(Error::Domain("empirical marginal needs samples".into()))
            }
            Marginal::Empirical { samples }
                if samples.iter().any(|x| !(*x >= 0.0 && x.is_finite())) =>
            {
                Err(Error::Domain("empirical samples must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Marginal::Exponential { rate } => sample_exponential(rng, *rate),
            Marginal::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        }
    }
}

/// Inverse-CDF draw from Exp(rate).
pub fn sample_exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductLaw {
    pub components: Vec<Marginal>,
}

impl ProductLaw {
    pub fn new(components: Vec<Marginal>) -> Result<Self> {
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    pub fn exponential(rates: &[f64]) -> Result<Self> {
        Self::new(
            rates
                .iter()
                .map(|&rate| Marginal::Exponential { rate })
                .collect(),
        )
    }

    /// First `k` coordinates of `π_a^g`.
    pub fn pi_a(spec: &DriftSpec, a: f64, k: usize) -> Result<Self> {
        Self::exponential(&pi_a_rates(spec, a, k)?.rates)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }
}

/// One independent draw per component, in coordinate order.
pub fn sample_gaps<R: Rng + ?Sized>(law: &ProductLaw, rng: &mut R) -> Vec<f64> {
    law.components.iter().map(|c| c.sample(rng)).collect()
}

/// `∫ e^{λz} Exp(ν)(dz) = ν / (ν - λ)` for `λ < ν`.
pub fn laplace_exponential(nu: f64, lambda: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("rate must be positive, got {nu}")));
    }
    if lambda >= nu {
        return Err(Error::Domain(format!(
            "exponential moment diverges for lambda = {lambda} >= rate {nu}"
        )));
    }
    Ok(nu / (nu - lambda))
}

/// Hellinger affinity `∫ √(f g)` between Exp(λ) and Exp(μ).
pub fn hellinger_affinity(lambda: f64, mu: f64) -> Result<f64> {
    if !(lambda > 0.0 && mu > 0.0) {
        return Err(Error::Domain(format!(
            "rates must be positive, got {lambda} and {mu}"
        )));
    }
    Ok(2.0 * (lambda * mu).sqrt() / (lambda + mu))
}

/// Partial products of Hellinger affinities between two product-exponential laws.
///
/// By Kakutani's dichotomy the infinite product laws are mutually singular
/// exactly when these partial products tend to zero.
pub fn kakutani_affinity_product(rates_a: &[f64], rates_b: &[f64]) -> Result<Vec<f64>> {
    if rates_a.len() != rates_b.len() {
        return Err(Error::Domain(format!(
            "rate lists differ in length: {} vs {}",
            rates_a.len(),
            rates_b.len()
        )));
    }
    let mut acc = 1.0;
    rates_a
        .iter()
        .zip(rates_b)
        .map(|(&l, &m)| {
            acc *= hellinger_affinity(l, m)?;
            Ok(acc)
        })
        .collect()
}
