//! Scripted buyer for self-play.
//!
//! The buyer's willingness to pay starts at its target and rises
//! geometrically toward its walk-away price. Each turn it accepts the
//! seller's standing offer if it is within willingness, otherwise it greets,
//! asks, or makes an offer phrased as an absolute price, a percent discount
//! or an amount off.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Product, Session, Speaker};
use crate::money::Money;
use crate::prompts::render_template;
use crate::rng::{stream, Stream};

const DEFAULT_BUYER_TEMPLATES: &str = include_str!("../prompts/buyer_templates.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuyerError {
    #[error("invalid buyer profile: {0}")]
    InvalidProfile(String),
    #[error("invalid profile distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerProfile {
    pub target_price: Money,
    /// The most the buyer will pay.
    pub walkaway_price: Money,
    /// Buyer turns before giving up.
    pub patience: u32,
    pub concession_rate: f64,
    pub question_prob: f64,
    pub greeting_prob: f64,
    pub rng_seed: u64,
}

impl BuyerProfile {
    pub fn validate(&self) -> Result<(), BuyerError> {
        let fraction = |x: f64| (0.0..=1.0).contains(&x);
        if self.target_price > self.walkaway_price {
            return Err(BuyerError::InvalidProfile("target_price above walkaway_price".into()));
        }
        if self.target_price <= Money::ZERO || self.patience == 0 {
            return Err(BuyerError::InvalidProfile("prices and patience must be positive".into()));
        }
        if !(self.concession_rate > 0.0 && self.concession_rate < 1.0) {
            return Err(BuyerError::InvalidProfile("concession_rate must be in (0, 1)".into()));
        }
        if !fraction(self.question_prob) || !fraction(self.greeting_prob) {
            return Err(BuyerError::InvalidProfile("probabilities must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `w_k = target + (walkaway − target)(1 − rate^k)`, rounded to the minor unit.
pub fn willingness(profile: &BuyerProfile, k: u32) -> Money {
    let gap = (profile.walkaway_price - profile.target_price).minor() as f64;
    let step = gap * (1.0 - profile.concession_rate.powi(k.min(i32::MAX as u32) as i32));
    let w = profile.target_price + Money::from_minor(step.round() as i64);
    w.min(profile.walkaway_price)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BuyerMove {
    Greeting { text: String },
    Question { text: String },
    /// A request for a better price without a number.
    Inquiry { text: String },
    /// `price` is what the phrasing resolves to against the standing offer.
    Offer { text: String, price: Money },
    Accept { text: String },
    Abandon,
}

impl BuyerMove {
    pub fn text(&self) -> Option<&str> {
        match self {
            BuyerMove::Greeting { text }
            | BuyerMove::Question { text }
            | BuyerMove::Inquiry { text }
            | BuyerMove::Offer { text, .. }
            | BuyerMove::Accept { text } => Some(text),
            BuyerMove::Abandon => None,
        }
    }
}

/// Buyer phrasing, in the same `key → [templates]` format as the seller's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuyerTemplates {
    entries: BTreeMap<String, Vec<String>>,
}

const BUYER_KEYS: [&str; 7] = [
    "GREETING",
    "QUESTION",
    "INQUIRY",
    "OFFER_ABSOLUTE",
    "OFFER_PERCENT",
    "OFFER_AMOUNT_OFF",
    "ACCEPT",
];

impl Default for BuyerTemplates {
    fn default() -> Self {
        BuyerTemplates::from_json(DEFAULT_BUYER_TEMPLATES).expect("bundled buyer templates are complete")
    }
}

impl BuyerTemplates {
    pub fn from_json(text: &str) -> Result<Self, crate::generator::TemplateError> {
        let entries: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        for key in BUYER_KEYS {
            if entries.get(key).is_none_or(|v| v.is_empty()) {
                return Err(crate::generator::TemplateError::MissingKey(key.to_string()));
            }
        }
        Ok(BuyerTemplates { entries })
    }

    fn pick(&self, key: &str, u: f64, bindings: &BTreeMap<&str, String>) -> String {
        let list = &self.entries[key];
        let idx = ((u * list.len() as f64) as usize).min(list.len() - 1);
        render_template(&list[idx], bindings).unwrap_or_else(|_| list[idx].clone())
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1) / b
}

/// The buyer's next move. `session` must be open with the buyer to speak.
pub fn buyer_step(profile: &BuyerProfile, session: &Session, templates: &BuyerTemplates) -> BuyerMove {
    let k = session
        .utterances
        .iter()
        .filter(|u| u.speaker == Speaker::Buyer)
        .count() as u32;
    if k >= profile.patience {
        return BuyerMove::Abandon;
    }
    let mut rng = stream(profile.rng_seed, u64::from(k), Stream::Buyer);
    // Fixed draw order so every branch consumes the same stream positions.
    let u_greet: f64 = rng.random();
    let u_question: f64 = rng.random();
    let u_inquiry: f64 = rng.random();
    let u_form: f64 = rng.random();
    let u_template: f64 = rng.random();

    let product = &session.product;
    let currency = session.currency.as_str();
    let mut bindings = BTreeMap::from([("title", product.title.clone())]);
    let agent_spoke = session.utterances.iter().any(|u| u.speaker == Speaker::SellerAgent);
    let w = willingness(profile, k);

    if k == 0 && u_greet < profile.greeting_prob {
        return BuyerMove::Greeting {
            text: templates.pick("GREETING", u_template, &bindings),
        };
    }
    if agent_spoke && session.standing_offer() <= w.max(profile.target_price) {
        return BuyerMove::Accept {
            text: templates.pick("ACCEPT", u_template, &bindings),
        };
    }
    if u_question < profile.question_prob {
        return if u_inquiry < 0.5 {
            BuyerMove::Inquiry {
                text: templates.pick("INQUIRY", u_template, &bindings),
            }
        } else {
            BuyerMove::Question {
                text: templates.pick("QUESTION", u_template, &bindings),
            }
        };
    }

    let offer = w.floor_whole().min(profile.walkaway_price).max(Money::from_major(1));
    let base = session.standing_offer();
    let relative_ok = offer < base;
    if relative_ok && u_form < 1.0 / 3.0 {
        // Smallest whole percent that brings the base down to the offer.
        let shortfall = (base - offer).minor();
        let percent = ceil_div(shortfall * 100, base.minor());
        if (1..100).contains(&percent) {
            let price = base.discounted_by_bp(percent * 100);
            bindings.insert("percent", percent.to_string());
            return BuyerMove::Offer {
                text: templates.pick("OFFER_PERCENT", u_template, &bindings),
                price,
            };
        }
    } else if relative_ok && u_form < 2.0 / 3.0 && base.is_whole() {
        let off = base - offer;
        bindings.insert("amount", off.render(currency));
        return BuyerMove::Offer {
            text: templates.pick("OFFER_AMOUNT_OFF", u_template, &bindings),
            price: offer,
        };
    }
    bindings.insert("price", offer.render(currency));
    BuyerMove::Offer {
        text: templates.pick("OFFER_ABSOLUTE", u_template, &bindings),
        price: offer,
    }
}

/// Ranges for sampling products and buyer profiles per episode. Buyer
/// prices are fractions of the list price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileDistribution {
    /// Whole currency units.
    pub list_price: Range<i64>,
    pub bottom_ratio: Range<f64>,
    pub target_ratio: Range<f64>,
    pub walkaway_ratio: Range<f64>,
    pub patience: Range<u32>,
    pub concession_rate: Range<f64>,
    pub question_prob: Range<f64>,
    pub greeting_prob: Range<f64>,
    pub titles: Vec<String>,
}

impl Default for ProfileDistribution {
    fn default() -> Self {
        ProfileDistribution {
            list_price: 50..2000,
            bottom_ratio: 0.7..0.9,
            target_ratio: 0.55..0.85,
            walkaway_ratio: 0.8..1.02,
            patience: 4..13,
            concession_rate: 0.5..0.9,
            question_prob: 0.0..0.35,
            greeting_prob: 0.0..0.7,
            titles: [
                "Road bike",
                "Film camera",
                "Acoustic guitar",
                "Espresso machine",
                "Standing desk",
                "Noise cancelling headphones",
                "Leather armchair",
                "Mechanical keyboard",
                "Hiking backpack",
                "Vintage record player",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

/// One sampled episode setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSetup {
    pub product: Product,
    pub profile: BuyerProfile,
}

fn draw_f64(rng: &mut impl Rng, range: &Range<f64>) -> f64 {
    if range.start >= range.end {
        range.start
    } else {
        rng.random_range(range.clone())
    }
}

impl ProfileDistribution {
    pub fn validate(&self) -> Result<(), BuyerError> {
        let bad = |what: &str| Err(BuyerError::InvalidDistribution(what.to_string()));
        if self.list_price.start < 1 || self.list_price.start > self.list_price.end {
            return bad("list_price range");
        }
        if self.bottom_ratio.start <= 0.0 || self.bottom_ratio.end > 1.0 {
            return bad("bottom_ratio must lie in (0, 1]");
        }
        if self.target_ratio.start <= 0.0 || self.target_ratio.start > self.target_ratio.end {
            return bad("target_ratio range");
        }
        if self.patience.start == 0 || self.patience.start > self.patience.end {
            return bad("patience range");
        }
        if self.concession_rate.start <= 0.0 || self.concession_rate.end >= 1.0 {
            return bad("concession_rate must lie in (0, 1)");
        }
        for r in [&self.question_prob, &self.greeting_prob] {
            if r.start < 0.0 || r.end > 1.0 || r.start > r.end {
                return bad("probability range");
            }
        }
        if self.titles.is_empty() || self.titles.iter().any(|t| t.chars().any(|c| c.is_ascii_digit())) {
            return bad("titles must be non-empty and free of digits");
        }
        Ok(())
    }

    /// Deterministic product and buyer for episode `index`.
    pub fn sample(&self, seed: u64, index: u64) -> EpisodeSetup {
        let mut rng = stream(seed, index, Stream::Product);
        let list_major = if self.list_price.start >= self.list_price.end {
            self.list_price.start
        } else {
            rng.random_range(self.list_price.clone())
        };
        let list = Money::from_major(list_major);
        let bottom = list
            .scaled(draw_f64(&mut rng, &self.bottom_ratio))
            .round_whole()
            .clamp_to(Money::from_major(1), list);
        let title = self.titles[rng.random_range(0..self.titles.len())].clone();
        let product = Product {
            id: format!("prod-{index}"),
            title,
            description: "Used, in good working condition.".to_string(),
            category: String::new(),
            list_price: list,
            bottom_price: bottom,
        };

        let mut rng = stream(seed, index, Stream::Profile);
        let target = list
            .scaled(draw_f64(&mut rng, &self.target_ratio))
            .round_whole()
            .max(Money::from_major(1));
        let walkaway = list
            .scaled(draw_f64(&mut rng, &self.walkaway_ratio))
            .round_whole()
            .max(target);
        let patience = if self.patience.start >= self.patience.end {
            self.patience.start
        } else {
            rng.random_range(self.patience.clone())
        };
        let profile = BuyerProfile {
            target_price: target,
            walkaway_price: walkaway,
            patience,
            concession_rate: draw_f64(&mut rng, &self.concession_rate),
            question_prob: draw_f64(&mut rng, &self.question_prob),
            greeting_prob: draw_f64(&mut rng, &self.greeting_prob),
            rng_seed: rng.random(),
        };
        EpisodeSetup { product, profile }
    }
}
