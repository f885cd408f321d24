//! Seller counter-offer sampling.
//!
//! Each priced seller turn draws from a normal distribution truncated to the
//! current bargaining interval `[lower, upper]`. The interval's top is pinned
//! to the seller's previous offer, so successive offers never rise, and its
//! bottom never drops below the product's bottom price.
//!
//! The centroid sits at `lower + γ·(upper − lower)` with
//! `γ = max(γ_min, γ₀·decay^k)` for the k-th concession, and the spread is
//! `β·(upper − lower)`. Early counters therefore anchor high and later ones
//! move toward the floor.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

use crate::domain::Product;
use crate::money::Money;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    MinorUnit,
    WholeUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub centroid_gamma0: f64,
    pub gamma_decay: f64,
    pub gamma_min: f64,
    pub delta_beta: f64,
    pub rounding: Rounding,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            centroid_gamma0: 0.8,
            gamma_decay: 0.85,
            gamma_min: 0.1,
            delta_beta: 0.15,
            rounding: Rounding::WholeUnit,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid sampler config: {0}")]
pub struct SamplerConfigError(pub String);

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerConfigError> {
        let ok = 0.0 < self.gamma_min
            && self.gamma_min <= self.centroid_gamma0
            && self.centroid_gamma0 <= 1.0
            && 0.0 < self.gamma_decay
            && self.gamma_decay <= 1.0
            && self.delta_beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SamplerConfigError(format!("{self:?}")))
        }
    }

    /// Centroid position for the given concession index.
    pub fn gamma(&self, concession_index: u32) -> f64 {
        (self.centroid_gamma0 * self.gamma_decay.powi(concession_index as i32)).max(self.gamma_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Money,
    pub upper: Money,
    /// Number of prior priced seller offers.
    pub concession_index: u32,
}

impl Bounds {
    pub fn is_degenerate(&self) -> bool {
        self.lower >= self.upper
    }
}

/// Computes `[l_t, h_t]` for the next priced seller turn.
pub fn update_bounds(
    product: &Product,
    seller_offers: &[Money],
    latest_buyer_offer: Option<Money>,
) -> Bounds {
    let upper = seller_offers.last().copied().unwrap_or(product.list_price);
    let lower = latest_buyer_offer
        .unwrap_or(product.bottom_price)
        .max(product.bottom_price);
    let lower = if lower > upper { upper } else { lower };
    Bounds {
        lower,
        upper,
        concession_index: seller_offers.len() as u32,
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_inv_cdf(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// One inverse-CDF draw from `N(mean, std)` truncated to `[lower, upper]`.
///
/// Consumes exactly one uniform from `rng`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    lower: f64,
    upper: f64,
    mean: f64,
    std: f64,
    rng: &mut R,
) -> f64 {
    let u: f64 = rng.random();
    if upper <= lower {
        return upper;
    }
    if std <= 0.0 || !std.is_finite() {
        return mean.clamp(lower, upper);
    }
    let a = std_normal_cdf((lower - mean) / std);
    let b = std_normal_cdf((upper - mean) / std);
    let p = a + u * (b - a);
    let x = if b - a <= f64::EPSILON {
        mean.clamp(lower, upper)
    } else {
        mean + std * std_normal_inv_cdf(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
    };
    x.clamp(lower, upper)
}

/// Draws the seller's next price inside `bounds`.
pub fn sample_price<R: Rng + ?Sized>(bounds: &Bounds, config: &SamplerConfig, rng: &mut R) -> Money {
    if bounds.is_degenerate() {
        return bounds.upper;
    }
    let lower = bounds.lower.minor() as f64;
    let upper = bounds.upper.minor() as f64;
    let width = upper - lower;
    let mean = lower + config.gamma(bounds.concession_index) * width;
    let std = config.delta_beta * width;
    let raw = sample_truncated_normal(lower, upper, mean, std, rng);
    let minor = Money::from_minor(raw.round() as i64);
    let rounded = match config.rounding {
        Rounding::MinorUnit => minor,
        Rounding::WholeUnit => minor.round_whole(),
    };
    rounded.clamp_to(bounds.lower, bounds.upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn product() -> Product {
        Product {
            id: "p".into(),
            title: "t".into(),
            description: String::new(),
            category: String::new(),
            list_price: Money::from_major(250),
            bottom_price: Money::from_major(200),
        }
    }

    fn m(major: i64) -> Money {
        Money::from_major(major)
    }

    #[test]
    fn bounds_rules() {
        let b = update_bounds(&product(), &[], None);
        assert_eq!((b.lower, b.upper, b.concession_index), (m(200), m(250), 0));
        let b = update_bounds(&product(), &[m(230)], Some(m(210)));
        assert_eq!((b.lower, b.upper, b.concession_index), (m(210), m(230), 1));
        let b = update_bounds(&product(), &[m(230)], Some(m(260)));
        assert_eq!((b.lower, b.upper), (m(230), m(230)));
        let b = update_bounds(&product(), &[], Some(m(150)));
        assert_eq!(b.lower, m(200));
    }

    #[test]
    fn degenerate_interval_returns_bound() {
        let b = Bounds {
            lower: m(100),
            upper: m(100),
            concession_index: 3,
        };
        let mut rng = stream(1, 0, Stream::Sampler);
        assert_eq!(sample_price(&b, &SamplerConfig::default(), &mut rng), m(100));
    }

    #[test]
    fn normal_helpers_are_inverse() {
        for x in [-3.0, -1.0, 0.0, 0.5, 2.5] {
            let back = std_normal_inv_cdf(std_normal_cdf(x));
            assert!((back - x).abs() < 1e-9, "{x} -> {back}");
        }
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_decays_to_floor() {
        let c = SamplerConfig::default();
        assert!((c.gamma(0) - 0.8).abs() < 1e-12);
        assert!((c.gamma(1) - 0.68).abs() < 1e-12);
        assert_eq!(c.gamma(50), 0.1);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig {
            gamma_min: 0.9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            delta_beta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn minor_unit_rounding_keeps_cents() {
        let cfg = SamplerConfig {
            rounding: Rounding::MinorUnit,
            ..Default::default()
        };
        let b = update_bounds(&product(), &[], None);
        let mut rng = stream(3, 0, Stream::Sampler);
        let draws: Vec<Money> = (0..50).map(|_| sample_price(&b, &cfg, &mut rng)).collect();
        assert!(draws.iter().any(|d| !d.is_whole()));
    }
}
