//! Shared negotiation vocabulary and the session state machine.
//!
//! A [`Session`] is an immutable snapshot. [`Session::advance`] applies one
//! buyer or agent event and returns the next snapshot; it never mutates the
//! input. Everything the engine, the harness and the service persist is a
//! `Session`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

/// Default agent-turn cap before a session expires.
pub const DEFAULT_T_MAX: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub category: String,
    pub list_price: Money,
    pub bottom_price: Money,
}

impl Product {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.list_price <= Money::ZERO {
            return Err(DomainError::InvalidProduct(format!(
                "list_price must be positive, got {}",
                self.list_price.minor()
            )));
        }
        if self.bottom_price <= Money::ZERO {
            return Err(DomainError::InvalidProduct(format!(
                "bottom_price must be positive, got {}",
                self.bottom_price.minor()
            )));
        }
        if self.bottom_price > self.list_price {
            return Err(DomainError::InvalidProduct(format!(
                "bottom_price {} exceeds list_price {}",
                self.bottom_price.minor(),
                self.list_price.minor()
            )));
        }
        Ok(())
    }
}

/// The seven bargaining dialogue actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Deal,
    Propose,
    Counter,
    CounterNoprice,
    Reject,
    Hello,
    Ans,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::Deal,
        Action::Propose,
        Action::Counter,
        Action::CounterNoprice,
        Action::Reject,
        Action::Hello,
        Action::Ans,
    ];

    /// Label as shown to the language model and in the action table.
    pub fn label(self) -> &'static str {
        match self {
            Action::Deal => "DEAL",
            Action::Propose => "PROPOSE",
            Action::Counter => "COUNTER",
            Action::CounterNoprice => "COUNTER-NOPRICE",
            Action::Reject => "REJECT",
            Action::Hello => "HELLO",
            Action::Ans => "ANS",
        }
    }

    /// Identifier used in template keys and JSON (`COUNTER_NOPRICE`).
    pub fn key(self) -> &'static str {
        match self {
            Action::CounterNoprice => "COUNTER_NOPRICE",
            other => other.label(),
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Action::Deal => "Buyer and seller reach a deal",
            Action::Propose => "Initiate a price or a price range for the product.",
            Action::Counter => "Propose a new price or a new price range.",
            Action::CounterNoprice => {
                "Want to propose a new price but do not specifically mention a new price."
            }
            Action::Reject => "There is no room for negotiation. Stick to the bottom price.",
            Action::Hello => "Say hello or chat randomly.",
            Action::Ans => "Answer buyer questions based on the product information.",
        }
    }

    /// Actions whose decision must carry a seller price.
    pub fn requires_price(self) -> bool {
        matches!(self, Action::Propose | Action::Counter | Action::Reject)
    }

    /// Actions whose decision must not carry a seller price.
    pub fn forbids_price(self) -> bool {
        matches!(self, Action::CounterNoprice | Action::Hello | Action::Ans)
    }

    pub fn from_key(key: &str) -> Option<Action> {
        Action::ALL
            .into_iter()
            .find(|a| a.key().eq_ignore_ascii_case(key) || a.label().eq_ignore_ascii_case(key))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Persuasion style applied on top of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LanguageSkill {
    Emphasis,
    AddedValue,
    Emotional,
    CompareMarket,
    TransactionGuarantee,
    CreateUrgency,
    Chat,
}

impl LanguageSkill {
    pub const ALL: [LanguageSkill; 7] = [
        LanguageSkill::Emphasis,
        LanguageSkill::AddedValue,
        LanguageSkill::Emotional,
        LanguageSkill::CompareMarket,
        LanguageSkill::TransactionGuarantee,
        LanguageSkill::CreateUrgency,
        LanguageSkill::Chat,
    ];

    pub fn key(self) -> &'static str {
        match self {
            LanguageSkill::Emphasis => "EMPHASIS",
            LanguageSkill::AddedValue => "ADDED_VALUE",
            LanguageSkill::Emotional => "EMOTIONAL",
            LanguageSkill::CompareMarket => "COMPARE_MARKET",
            LanguageSkill::TransactionGuarantee => "TRANSACTION_GUARANTEE",
            LanguageSkill::CreateUrgency => "CREATE_URGENCY",
            LanguageSkill::Chat => "CHAT",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            LanguageSkill::Emphasis => "Emphasis",
            LanguageSkill::AddedValue => "Added Value",
            LanguageSkill::Emotional => "Emotional Strategy",
            LanguageSkill::CompareMarket => "Compare the Market",
            LanguageSkill::TransactionGuarantee => "Transaction Guarantee",
            LanguageSkill::CreateUrgency => "Create Urgency",
            LanguageSkill::Chat => "Chat",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            LanguageSkill::Emphasis => {
                "Highlight the cost value, quality or bottom price of the product to show the rationality of the pricing."
            }
            LanguageSkill::AddedValue => {
                "Provide additional value beyond the product, such as gifts, free shipping, etc."
            }
            LanguageSkill::Emotional => {
                "Use humor, expressions, complaints, and identity recognition to resonate with the other party."
            }
            LanguageSkill::CompareMarket => {
                "Compare the product with other products on the market to highlight the advantages of its own products."
            }
            LanguageSkill::TransactionGuarantee => {
                "Promise to ensure transaction security and reliability by offering good after-sales service."
            }
            LanguageSkill::CreateUrgency => {
                "Create urgency by reminding that the product may sell out soon or prices may rise shortly."
            }
            LanguageSkill::Chat => "Do not use techniques and simply reply to the other party.",
        }
    }

    pub fn from_key(key: &str) -> Option<LanguageSkill> {
        LanguageSkill::ALL
            .into_iter()
            .find(|s| s.key().eq_ignore_ascii_case(key))
    }
}

impl fmt::Display for LanguageSkill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Buyer,
    SellerAgent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub turn: u32,
    /// Caller-supplied clock reading; logical in simulation, epoch millis in the service.
    pub timestamp: u64,
}

/// One planner output for one agent turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub skill: Option<LanguageSkill>,
    pub seller_price: Option<Money>,
    pub buyer_price_seen: Option<Money>,
    #[serde(default)]
    pub rationale: Vec<String>,
    #[serde(default)]
    pub anticipated_buyer_moves: Vec<String>,
}

impl Decision {
    /// Names every Decision invariant this value breaks for `product`.
    pub fn violations(&self, product: &Product) -> Vec<String> {
        let mut out = Vec::new();
        if self.action.requires_price() && self.seller_price.is_none() {
            out.push(format!("{} requires seller_price", self.action.key()));
        }
        if self.action.forbids_price() && self.seller_price.is_some() {
            out.push(format!("{} must not carry seller_price", self.action.key()));
        }
        if self.action == Action::Reject && self.seller_price.is_some_and(|p| p != product.bottom_price)
        {
            out.push("REJECT seller_price must equal bottom_price".to_string());
        }
        if self.action != Action::Deal && self.skill.is_none() {
            out.push(format!("{} requires a language skill", self.action.key()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Deal,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub product: Product,
    pub utterances: Vec<Utterance>,
    pub decisions: Vec<Decision>,
    #[serde(default)]
    pub seller_offers: Vec<Money>,
    #[serde(default)]
    pub buyer_offers: Vec<Money>,
    pub status: SessionStatus,
    pub deal_price: Option<Money>,
    /// Unclamped deal price, kept only when clamping changed it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_deal_price: Option<Money>,
    pub rng_seed: u64,
    #[serde(default = "default_t_max")]
    pub t_max: u32,
    #[serde(default = "default_currency")]
    pub currency: String,
}

fn default_t_max() -> u32 {
    DEFAULT_T_MAX
}

fn default_currency() -> String {
    "$".to_string()
}

/// Input to [`Session::advance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    BuyerUtterance {
        text: String,
        /// The buyer price extracted from `text`, if any.
        offer: Option<Money>,
        timestamp: u64,
    },
    AgentTurn {
        decision: Decision,
        text: String,
        timestamp: u64,
    },
    /// The buyer left; the session expires.
    BuyerLeft { timestamp: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid product: {0}")]
    InvalidProduct(String),
    #[error("alternation violation: {0} spoke twice in a row")]
    AlternationViolation(&'static str),
    #[error("session is terminal ({0:?})")]
    TerminalSession(SessionStatus),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
}

/// One broken Session invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub index: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} at index {}: {}", self.invariant, i, self.detail),
            None => write!(f, "{}: {}", self.invariant, self.detail),
        }
    }
}

impl Session {
    pub fn new(id: impl Into<String>, product: Product, rng_seed: u64) -> Result<Self, DomainError> {
        product.validate()?;
        Ok(Session {
            id: id.into(),
            product,
            utterances: Vec::new(),
            decisions: Vec::new(),
            seller_offers: Vec::new(),
            buyer_offers: Vec::new(),
            status: SessionStatus::Open,
            deal_price: None,
            raw_deal_price: None,
            rng_seed,
            t_max: DEFAULT_T_MAX,
            currency: default_currency(),
        })
    }

    pub fn with_t_max(mut self, t_max: u32) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_currency(mut self, currency: impl Into<String>) -> Self {
        self.currency = currency.into();
        self
    }

    pub fn is_open(&self) -> bool {
        self.status == SessionStatus::Open
    }

    pub fn agent_turns(&self) -> usize {
        self.decisions.len()
    }

    pub fn last_seller_offer(&self) -> Option<Money> {
        self.seller_offers.last().copied()
    }

    pub fn last_buyer_offer(&self) -> Option<Money> {
        self.buyer_offers.last().copied()
    }

    pub fn last_decision(&self) -> Option<&Decision> {
        self.decisions.last()
    }

    /// The offer standing on the table from the seller's side: the latest
    /// quoted price, or the listing itself.
    pub fn standing_offer(&self) -> Money {
        self.last_seller_offer().unwrap_or(self.product.list_price)
    }

    fn last_speaker(&self) -> Option<Speaker> {
        self.utterances.last().map(|u| u.speaker)
    }

    fn next_timestamp(&self, requested: u64) -> u64 {
        self.utterances
            .last()
            .map_or(requested, |u| requested.max(u.timestamp))
    }

    /// Applies one event and returns the next snapshot.
    pub fn advance(&self, event: Event) -> Result<Session, DomainError> {
        if self.status != SessionStatus::Open {
            return Err(DomainError::TerminalSession(self.status));
        }
        let mut next = self.clone();
        let turn = next.utterances.len() as u32;
        match event {
            Event::BuyerUtterance {
                text,
                offer,
                timestamp,
            } => {
                if self.last_speaker() == Some(Speaker::Buyer) {
                    return Err(DomainError::AlternationViolation("buyer"));
                }
                let accepted = offer.is_none() && is_acceptance(&text);
                next.utterances.push(Utterance {
                    speaker: Speaker::Buyer,
                    text,
                    turn,
                    timestamp: self.next_timestamp(timestamp),
                });
                if let Some(price) = offer {
                    next.buyer_offers.push(price);
                }
                if accepted {
                    let agreed = self.standing_offer();
                    next.record_deal(agreed);
                } else if self.decisions.len() >= self.t_max as usize {
                    next.status = SessionStatus::Expired;
                }
            }
            Event::AgentTurn {
                decision,
                text,
                timestamp,
            } => {
                if self.last_speaker() != Some(Speaker::Buyer) {
                    return Err(DomainError::AlternationViolation("seller_agent"));
                }
                let problems = decision.violations(&self.product);
                if !problems.is_empty() {
                    return Err(DomainError::InvalidDecision(problems.join("; ")));
                }
                if let Some(price) = decision.seller_price {
                    if price < self.product.bottom_price {
                        return Err(DomainError::InvalidDecision(format!(
                            "seller price {} below bottom price {}",
                            price, self.product.bottom_price
                        )));
                    }
                    if let Some(prev) = self.last_seller_offer() {
                        if price > prev {
                            return Err(DomainError::InvalidDecision(format!(
                                "seller price {price} raises previous offer {prev}"
                            )));
                        }
                    } else if price > self.product.list_price {
                        return Err(DomainError::InvalidDecision(format!(
                            "seller price {price} above list price"
                        )));
                    }
                    next.seller_offers.push(price);
                }
                next.utterances.push(Utterance {
                    speaker: Speaker::SellerAgent,
                    text,
                    turn,
                    timestamp: self.next_timestamp(timestamp),
                });
                let is_deal = decision.action == Action::Deal;
                let agreed = decision
                    .buyer_price_seen
                    .or(self.last_buyer_offer())
                    .unwrap_or_else(|| self.standing_offer());
                next.decisions.push(decision);
                if is_deal {
                    next.record_deal(agreed);
                }
            }
            Event::BuyerLeft { .. } => {
                next.status = SessionStatus::Expired;
            }
        }
        Ok(next)
    }

    /// Marks the session expired (the buyer walked away).
    pub fn expire(&self, timestamp: u64) -> Result<Session, DomainError> {
        self.advance(Event::BuyerLeft { timestamp })
    }

    fn record_deal(&mut self, raw: Money) {
        let clamped = raw.clamp_to(self.product.bottom_price, self.product.list_price);
        self.status = SessionStatus::Deal;
        self.deal_price = Some(clamped);
        self.raw_deal_price = (clamped != raw).then_some(raw);
    }

    /// Checks every Session invariant; empty means the snapshot is sound.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |invariant: &str, index: Option<usize>, detail: String| {
            out.push(Violation {
                invariant: invariant.to_string(),
                index,
                detail,
            })
        };

        if let Err(e) = self.product.validate() {
            push("product", None, e.to_string());
        }
        for (i, pair) in self.utterances.windows(2).enumerate() {
            if pair[0].speaker == pair[1].speaker {
                push("speaker alternation", Some(i + 1), "same speaker twice".into());
            }
            if pair[1].turn <= pair[0].turn {
                push("turn order", Some(i + 1), "turn not strictly increasing".into());
            }
        }
        if let Some(first) = self.utterances.first() {
            if first.speaker != Speaker::Buyer {
                push("speaker alternation", Some(0), "session must open with the buyer".into());
            }
        }
        for (i, pair) in self.seller_offers.windows(2).enumerate() {
            if pair[1] > pair[0] {
                push(
                    "seller offers non-increasing",
                    Some(i + 1),
                    format!("{} after {}", pair[1], pair[0]),
                );
            }
        }
        for (i, offer) in self.seller_offers.iter().enumerate() {
            if *offer < self.product.bottom_price {
                push("seller offer floor", Some(i), format!("{offer} below bottom price"));
            }
        }
        match (self.status, self.deal_price) {
            (SessionStatus::Deal, None) | (SessionStatus::Open | SessionStatus::Expired, Some(_)) => {
                push(
                    "status/deal_price consistency",
                    None,
                    format!("status {:?} with deal_price {:?}", self.status, self.deal_price),
                );
            }
            _ => {}
        }
        if let Some(deal) = self.deal_price {
            if deal < self.product.bottom_price || deal > self.product.list_price {
                push("deal price range", None, format!("{deal} outside [bottom, list]"));
            }
        }
        let seller_turns = self
            .utterances
            .iter()
            .filter(|u| u.speaker == Speaker::SellerAgent)
            .count();
        if seller_turns != self.decisions.len() {
            push(
                "decision count",
                None,
                format!("{} agent utterances vs {} decisions", seller_turns, self.decisions.len()),
            );
        }
        for (i, d) in self.decisions.iter().enumerate() {
            for problem in d.violations(&self.product) {
                push("decision invariant", Some(i), problem);
            }
            if d.action == Action::Deal && i + 1 != self.decisions.len() {
                push("terminality", Some(i), "decision after DEAL".into());
            }
        }
        if self.decisions.last().is_some_and(|d| d.action == Action::Deal)
            && self.status != SessionStatus::Deal
        {
            push("terminality", None, "DEAL decision without deal status".into());
        }
        out
    }
}

/// Whether a buyer line accepts the standing offer ("deal", "ok I'll take it").
///
/// Lines carrying numerals are offers, not acceptances; questions and
/// negations never accept.
pub fn is_acceptance(text: &str) -> bool {
    let lower = text.to_lowercase();
    if lower.contains('?') || lower.chars().any(|c| c.is_ascii_digit()) {
        return false;
    }
    const NEGATIONS: [&str; 6] = ["no deal", "not ", "n't", "never", "too much", "too expensive"];
    if NEGATIONS.iter().any(|n| lower.contains(n)) {
        return false;
    }
    const PHRASES: [&str; 9] = [
        "deal",
        "i'll take it",
        "i will take it",
        "take it",
        "sold",
        "agreed",
        "accept",
        "sounds good",
        "let's do it",
    ];
    PHRASES.iter().any(|p| contains_phrase(&lower, p))
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    haystack.match_indices(phrase).any(|(start, _)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + phrase.len()..].chars().next();
        !before.is_some_and(|c| c.is_alphanumeric()) && !after.is_some_and(|c| c.is_alphanumeric())
    })
}
