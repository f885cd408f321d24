//! Policy planning: which action to take, with which language skill, at
//! which price.
//!
//! Two policies share one entry point, [`plan`]. The rule policy is a fixed
//! decision table over the extracted buyer offer and the session history;
//! it doubles as the baseline and as the fallback whenever a model call
//! fails or returns something unusable. The model policy asks a backend to
//! pick an action from the rendered action prompt.

use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, BackendRequest, ChatMessage};
use crate::domain::{Action, Decision, LanguageSkill, Session};
use crate::extractor::{parse_expressions, ExpressionKind, PriceExtraction};
use crate::money::Money;
use crate::prompts::{render_action_prompt, render_anticipation_prompt, PromptBundle, PromptError};
use crate::rng::{stream, Stream};
use crate::sampler::{sample_price, update_bounds, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub use_actions: bool,
    pub use_skills: bool,
    pub use_bidirectional: bool,
    pub accept_threshold_ratio: f64,
    pub skill_no_repeat: bool,
    /// Mixed into the session seed for skill draws.
    pub rng_seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            use_actions: true,
            use_skills: true,
            use_bidirectional: true,
            accept_threshold_ratio: 0.95,
            skill_no_repeat: true,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("accept_threshold_ratio must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("no action label in model reply")]
    UnparseableAction,
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.accept_threshold_ratio > 0.0 && self.accept_threshold_ratio <= 1.0 {
            Ok(())
        } else {
            Err(PlannerError::InvalidThreshold(self.accept_threshold_ratio))
        }
    }
}

/// Backends for the two planner call sites; `None` selects the rule path.
#[derive(Clone, Copy, Default)]
pub struct PlannerBackends<'a> {
    pub action: Option<&'a dyn Backend>,
    pub anticipation: Option<&'a dyn Backend>,
}

/// A predicted buyer move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnticipatedMove {
    pub label: String,
    pub price: Option<Money>,
}

impl AnticipatedMove {
    fn new(label: &str, price: Option<Money>) -> Self {
        AnticipatedMove {
            label: label.to_string(),
            price,
        }
    }

    pub fn render(&self, currency: &str) -> String {
        match self.price {
            Some(p) => format!("{} @ {}", self.label, p.render(currency)),
            None => self.label.clone(),
        }
    }
}

/// Uniform draw over `available`, skipping `previous` when `no_repeat` is
/// set and another skill exists.
pub fn choose_skill<R: Rng + ?Sized>(
    available: &[LanguageSkill],
    previous: Option<LanguageSkill>,
    no_repeat: bool,
    rng: &mut R,
) -> LanguageSkill {
    assert!(!available.is_empty(), "skill set must be non-empty");
    let pool: Vec<LanguageSkill> = if no_repeat && available.len() > 1 {
        available
            .iter()
            .copied()
            .filter(|s| Some(*s) != previous)
            .collect()
    } else {
        available.to_vec()
    };
    let pool = if pool.is_empty() { available.to_vec() } else { pool };
    pool[rng.random_range(0..pool.len())]
}

fn median_increment(offers: &[Money]) -> Option<i64> {
    let mut diffs: Vec<i64> = offers
        .windows(2)
        .map(|w| w[1].minor() - w[0].minor())
        .collect();
    if diffs.is_empty() {
        return None;
    }
    diffs.sort_unstable();
    let mid = diffs.len() / 2;
    Some(if diffs.len() % 2 == 1 {
        diffs[mid]
    } else {
        (diffs[mid - 1] + diffs[mid]).div_euclid(2)
    })
}

/// Rule-based anticipation from the buyer's offer trajectory.
pub fn anticipate_rule(session: &Session) -> Vec<AnticipatedMove> {
    let product = &session.product;
    let offers = &session.buyer_offers;
    let Some(last) = offers.last().copied() else {
        return vec![AnticipatedMove::new("ask question / greet", None)];
    };
    let mut moves = Vec::new();
    if last >= product.bottom_price {
        moves.push(AnticipatedMove::new("accept or walk away", None));
    }
    match median_increment(offers) {
        Some(step) if step > 0 => {
            let next = Money::from_minor(last.minor() + step).min(product.list_price);
            moves.push(AnticipatedMove::new("COUNTER", Some(next)));
            if session.last_seller_offer().is_some_and(|s| next >= s) {
                moves.push(AnticipatedMove::new("accept seller offer", None));
            }
        }
        Some(_) => moves.push(AnticipatedMove::new("hold firm or walk away", Some(last))),
        None if moves.is_empty() => {
            moves.push(AnticipatedMove::new("counter with a higher offer", None));
        }
        None => {}
    }
    moves.truncate(3);
    moves
}

/// Model-based anticipation: parses `MOVE:` or bulleted lines from the reply.
pub fn parse_anticipation_reply(text: &str) -> Vec<AnticipatedMove> {
    text.lines()
        .map(str::trim)
        .filter_map(|line| {
            let body = line
                .strip_prefix("MOVE:")
                .or_else(|| line.strip_prefix("Move:"))
                .or_else(|| line.strip_prefix("- "))
                .or_else(|| line.strip_prefix("* "))?
                .trim();
            if body.is_empty() {
                return None;
            }
            let (label, price_part) = match body.split_once('@') {
                Some((l, p)) => (l.trim(), Some(p)),
                None => (body, None),
            };
            let price = price_part.and_then(|p| {
                parse_expressions(p).into_iter().find_map(|e| match e.kind {
                    ExpressionKind::Absolute { amount } => Some(amount),
                    _ => None,
                })
            });
            Some(AnticipatedMove::new(label, price))
        })
        .take(3)
        .collect()
}

/// Runs anticipation on the model path when a backend is given, else the
/// rule path. Backend failures yield an empty list.
pub fn anticipate(
    session: &Session,
    bundle: &PromptBundle,
    backend: Option<&dyn Backend>,
) -> Vec<AnticipatedMove> {
    let Some(backend) = backend else {
        return anticipate_rule(session);
    };
    let Ok(prompt) = render_anticipation_prompt(bundle, session) else {
        return Vec::new();
    };
    let request = BackendRequest::new(vec![ChatMessage::user(prompt)]).with_temperature(0.0);
    match backend.complete(&request) {
        Ok(reply) => parse_anticipation_reply(&reply.text),
        Err(e) => {
            tracing::warn!(error = %e, "anticipation call failed");
            Vec::new()
        }
    }
}

fn action_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(counter[-_ ]noprice|deal|propose|counter|reject|hello|ans)\b")
            .expect("action regex")
    })
}

/// First action label in a model reply, case-insensitive.
pub fn parse_action_reply(text: &str) -> Result<Action, PlannerError> {
    let m = action_regex()
        .find(text)
        .ok_or(PlannerError::UnparseableAction)?;
    let token = m.as_str().to_ascii_uppercase();
    Ok(match token.as_str() {
        "DEAL" => Action::Deal,
        "PROPOSE" => Action::Propose,
        "COUNTER" => Action::Counter,
        "REJECT" => Action::Reject,
        "HELLO" => Action::Hello,
        "ANS" => Action::Ans,
        _ => Action::CounterNoprice,
    })
}

const GREETING_WORDS: &[&str] = &["hi", "hello", "hey", "hiya", "morning", "evening", "available"];
const QUESTION_STARTS: &[&str] = &[
    "does", "do", "is", "are", "can", "could", "would", "will", "what", "how", "when", "where",
    "why", "which", "any", "has", "have", "did", "was", "were",
];
const INQUIRY_PHRASES: &[&str] = &[
    "best price",
    "lowest",
    "go lower",
    "come down",
    "cheaper",
    "discount",
    "any room",
    "negotiable",
    "better price",
    "last price",
    "final price",
    "bottom price",
    "lower price",
    "reduce",
];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn is_greeting(text: &str) -> bool {
    words(text).iter().any(|w| GREETING_WORDS.contains(&w.as_str()))
}

pub fn is_question(text: &str) -> bool {
    text.contains('?')
        || words(text)
            .first()
            .is_some_and(|w| QUESTION_STARTS.contains(&w.as_str()))
}

/// A request for a better price that names no number.
pub fn is_price_inquiry(text: &str) -> bool {
    let lower = text.to_lowercase();
    INQUIRY_PHRASES.iter().any(|p| lower.contains(p))
}

/// Everything the planner reads for one agent turn.
pub struct PlanInput<'a> {
    /// Session including the latest buyer utterance.
    pub session: &'a Session,
    pub extraction: &'a PriceExtraction,
    pub config: &'a PlannerConfig,
    pub sampler: &'a SamplerConfig,
    pub prompts: &'a PromptBundle,
}

fn accept_threshold(session: &Session, ratio: f64) -> f64 {
    let list = session.product.list_price.minor() as f64;
    (ratio * list).max(session.product.bottom_price.minor() as f64)
}

fn deal_condition(session: &Session, offer: Money, ratio: f64, rationale: &mut Vec<String>) -> bool {
    let threshold = accept_threshold(session, ratio);
    if offer.minor() as f64 >= threshold {
        rationale.push(format!(
            "buyer offer {offer} >= accept threshold {:.2}",
            threshold / 100.0
        ));
        return true;
    }
    if let Some(standing) = session.last_seller_offer() {
        if offer >= standing {
            rationale.push(format!("buyer offer {offer} meets standing seller offer {standing}"));
            return true;
        }
    }
    false
}

/// Outcome of the action-choice stage, before pricing and skills.
struct ActionChoice {
    action: Action,
    rationale: Vec<String>,
}

fn rule_action(
    session: &Session,
    buyer_text: &str,
    offer: Option<Money>,
    config: &PlannerConfig,
    anticipated: &[AnticipatedMove],
) -> ActionChoice {
    let mut rationale = vec!["policy: rule table".to_string()];
    let product = &session.product;
    let bottom = product.bottom_price;
    let bottom_quoted = session.last_seller_offer() == Some(bottom);

    let action = if let Some(b) = offer {
        if deal_condition(session, b, config.accept_threshold_ratio, &mut rationale) {
            Action::Deal
        } else if b < bottom {
            let earlier = &session.buyer_offers[..session.buyer_offers.len().saturating_sub(1)];
            let lowballed_before = earlier.iter().any(|o| *o < bottom);
            if bottom_quoted || lowballed_before {
                rationale.push(format!(
                    "buyer offer {b} below bottom again (bottom quoted: {bottom_quoted})"
                ));
                Action::Reject
            } else {
                rationale.push(format!("first buyer offer {b} below bottom; counter"));
                Action::Counter
            }
        } else {
            let counters = session
                .decisions
                .iter()
                .filter(|d| matches!(d.action, Action::Counter | Action::CounterNoprice))
                .count();
            let mut action = if (counters + 1) % 3 == 0 {
                rationale.push("every third concession holds price".to_string());
                Action::CounterNoprice
            } else {
                rationale.push(format!("buyer offer {b} inside bargaining zone; counter"));
                Action::Counter
            };
            let threshold = accept_threshold(session, config.accept_threshold_ratio);
            let rising_to_deal = anticipated.iter().any(|m| {
                m.label == "COUNTER" && m.price.is_some_and(|p| p.minor() as f64 >= threshold)
            });
            let held_last = session
                .last_decision()
                .is_some_and(|d| d.action == Action::CounterNoprice);
            if action == Action::Counter && rising_to_deal && !held_last {
                rationale.push("anticipation: buyer expected to reach threshold; hold price".into());
                action = Action::CounterNoprice;
            }
            action
        }
    } else if is_price_inquiry(buyer_text) {
        if session.last_seller_offer() == Some(bottom) {
            rationale.push("price inquiry at bottom price; stick to it".to_string());
            Action::Reject
        } else if session.buyer_offers.is_empty() && session.seller_offers.is_empty() {
            rationale.push("price inquiry before any offer; initiate a price".to_string());
            Action::Propose
        } else {
            rationale.push("price inquiry; concede".to_string());
            Action::Counter
        }
    } else if is_question(buyer_text) && !is_greeting(buyer_text) {
        rationale.push("question detected".to_string());
        Action::Ans
    } else {
        rationale.push("no offer; greet or chat".to_string());
        Action::Hello
    };
    ActionChoice { action, rationale }
}

fn naive_action(session: &Session, offer: Option<Money>, config: &PlannerConfig) -> ActionChoice {
    let mut rationale = vec!["policy: no explicit actions".to_string()];
    let action = match offer {
        Some(b) if deal_condition(session, b, config.accept_threshold_ratio, &mut rationale) => {
            Action::Deal
        }
        _ => Action::CounterNoprice,
    };
    ActionChoice { action, rationale }
}

fn model_action(
    input: &PlanInput<'_>,
    backend: &dyn Backend,
    anticipated: &[String],
) -> Result<Action, PlannerError> {
    let prompt = render_action_prompt(input.prompts, input.session, anticipated)
        .map_err(|e: PromptError| PlannerError::BackendFailure(BackendError::InvalidRequest(e.to_string())))?;
    let request = BackendRequest::new(vec![ChatMessage::user(prompt)])
        .with_temperature(0.0)
        .with_max_tokens(64);
    let reply = backend.complete(&request)?;
    parse_action_reply(&reply.text)
}

/// Forces a model-chosen action into a state the session can accept.
fn repair_model_action(
    session: &Session,
    action: Action,
    offer: Option<Money>,
    rationale: &mut Vec<String>,
) -> Option<Action> {
    let bottom = session.product.bottom_price;
    match action {
        Action::Deal => match offer.or(session.last_buyer_offer()) {
            Some(b) if b < bottom => {
                rationale.push(format!("model chose DEAL below bottom ({b}); overruled"));
                None
            }
            _ => Some(Action::Deal),
        },
        Action::Propose if !session.buyer_offers.is_empty() => {
            rationale.push("PROPOSE after a buyer offer becomes COUNTER".to_string());
            Some(Action::Counter)
        }
        Action::Counter if session.buyer_offers.is_empty() && session.seller_offers.is_empty() => {
            rationale.push("COUNTER before any offer becomes PROPOSE".to_string());
            Some(Action::Propose)
        }
        other => Some(other),
    }
}

/// Chooses action, skill and price for the next agent turn.
pub fn plan(input: &PlanInput<'_>, backends: PlannerBackends<'_>) -> Decision {
    let session = input.session;
    let config = input.config;
    let turn = session.agent_turns() as u64;
    let offer = input.extraction.price;
    let buyer_text = session
        .utterances
        .last()
        .map(|u| u.text.as_str())
        .unwrap_or("");

    let moves = if config.use_bidirectional {
        anticipate(session, input.prompts, backends.anticipation)
    } else {
        Vec::new()
    };
    let move_strings: Vec<String> = moves.iter().map(|m| m.render(&session.currency)).collect();

    let mut choice = if !config.use_actions {
        naive_action(session, offer, config)
    } else if let Some(backend) = backends.action {
        let mut rationale = vec!["policy: model".to_string()];
        match model_action(input, backend, &move_strings) {
            Ok(action) => match repair_model_action(session, action, offer, &mut rationale) {
                Some(action) => {
                    rationale.push(format!("model chose {}", action.label()));
                    ActionChoice { action, rationale }
                }
                None => {
                    let mut fallback = rule_action(session, buyer_text, offer, config, &moves);
                    rationale.append(&mut fallback.rationale);
                    ActionChoice {
                        action: fallback.action,
                        rationale,
                    }
                }
            },
            Err(e) => {
                rationale.push(format!("fallback to rule table: {e}"));
                let mut fallback = rule_action(session, buyer_text, offer, config, &moves);
                rationale.append(&mut fallback.rationale);
                ActionChoice {
                    action: fallback.action,
                    rationale,
                }
            }
        }
    } else {
        rule_action(session, buyer_text, offer, config, &moves)
    };

    let seller_price = match choice.action {
        Action::Reject => Some(session.product.bottom_price),
        Action::Propose | Action::Counter => {
            let bounds = update_bounds(&session.product, &session.seller_offers, session.last_buyer_offer());
            let mut rng = stream(session.rng_seed, turn, Stream::Sampler);
            let price = sample_price(&bounds, input.sampler, &mut rng);
            choice.rationale.push(format!(
                "sampled {price} from [{}, {}] at concession {}",
                bounds.lower, bounds.upper, bounds.concession_index
            ));
            Some(price)
        }
        _ => None,
    };

    let skill = if config.use_skills {
        let previous = session.last_decision().and_then(|d| d.skill);
        let mut rng = stream(session.rng_seed ^ config.rng_seed, turn, Stream::Skill);
        choose_skill(&LanguageSkill::ALL, previous, config.skill_no_repeat, &mut rng)
    } else {
        LanguageSkill::Chat
    };

    Decision {
        action: choice.action,
        skill: Some(skill),
        seller_price,
        buyer_price_seen: offer,
        rationale: choice.rationale,
        anticipated_buyer_moves: move_strings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FailingBackend, MockBackend};
    use crate::domain::{Event, Product};
    use crate::extractor::{extract, ExtractorConfig};

    fn product() -> Product {
        Product {
            id: "p".into(),
            title: "Guitar".into(),
            description: String::new(),
            category: String::new(),
            list_price: Money::from_major(250),
            bottom_price: Money::from_major(200),
        }
    }

    fn m(major: i64) -> Money {
        Money::from_major(major)
    }

    struct Fixture {
        session: Session,
        extraction: PriceExtraction,
        config: PlannerConfig,
        sampler: SamplerConfig,
        prompts: PromptBundle,
    }

    impl Fixture {
        fn new(session: Session, buyer: &str) -> Self {
            let s = session.clone();
            let extraction = {
                let tmp = s
                    .advance(Event::BuyerUtterance {
                        text: buyer.into(),
                        offer: None,
                        timestamp: 0,
                    })
                    .unwrap();
                extract(&tmp.product, &tmp.utterances, &tmp.seller_offers, &ExtractorConfig::default())
                    .unwrap()
            };
            let session = s
                .advance(Event::BuyerUtterance {
                    text: buyer.into(),
                    offer: extraction.price,
                    timestamp: 0,
                })
                .unwrap();
            Fixture {
                session,
                extraction,
                config: PlannerConfig::default(),
                sampler: SamplerConfig::default(),
                prompts: PromptBundle::default(),
            }
        }

        fn input(&self) -> PlanInput<'_> {
            PlanInput {
                session: &self.session,
                extraction: &self.extraction,
                config: &self.config,
                sampler: &self.sampler,
                prompts: &self.prompts,
            }
        }

        fn plan(&self) -> Decision {
            plan(&self.input(), PlannerBackends::default())
        }
    }

    fn fresh() -> Session {
        Session::new("s", product(), 11).unwrap()
    }

    fn after_agent(s: Session, action: Action, price: Option<i64>) -> Session {
        s.advance(Event::AgentTurn {
            decision: Decision {
                action,
                skill: Some(LanguageSkill::Chat),
                seller_price: price.map(m),
                buyer_price_seen: None,
                rationale: vec![],
                anticipated_buyer_moves: vec![],
            },
            text: "..".into(),
            timestamp: 0,
        })
        .unwrap()
    }

    #[test]
    fn offer_above_threshold_is_a_deal() {
        let f = Fixture::new(fresh(), "I can do 240");
        let d = f.plan();
        assert_eq!(d.action, Action::Deal);
        assert_eq!(d.buyer_price_seen, Some(m(240)));
    }

    #[test]
    fn greeting_gets_hello() {
        let d = Fixture::new(fresh(), "hi, still available?").plan();
        assert_eq!(d.action, Action::Hello);
        assert!(d.seller_price.is_none());
    }

    #[test]
    fn product_question_gets_answer() {
        let d = Fixture::new(fresh(), "Does it come with the case?").plan();
        assert_eq!(d.action, Action::Ans);
    }

    #[test]
    fn lowball_after_bottom_quoted_is_rejected() {
        let s = fresh()
            .advance(Event::BuyerUtterance {
                text: "170?".into(),
                offer: Some(m(170)),
                timestamp: 0,
            })
            .unwrap();
        let s = after_agent(s, Action::Counter, Some(200));
        let d = Fixture::new(s, "how about 150").plan();
        assert_eq!(d.action, Action::Reject);
        assert_eq!(d.seller_price, Some(m(200)));
    }

    #[test]
    fn first_lowball_is_countered_inside_bounds() {
        let d = Fixture::new(fresh(), "150 and I'll pick it up").plan();
        assert_eq!(d.action, Action::Counter);
        let p = d.seller_price.unwrap();
        assert!(p >= m(200) && p <= m(250), "{p}");
    }

    #[test]
    fn inquiry_before_offers_proposes() {
        let d = Fixture::new(fresh(), "what's your best price?").plan();
        assert_eq!(d.action, Action::Propose);
        assert!(d.seller_price.is_some());
    }

    #[test]
    fn third_concession_holds_price() {
        let mut s = fresh();
        for (buyer, seller) in [(205, 240), (207, 232)] {
            s = s
                .advance(Event::BuyerUtterance {
                    text: format!("{buyer}"),
                    offer: Some(m(buyer)),
                    timestamp: 0,
                })
                .unwrap();
            s = after_agent(s, Action::Counter, Some(seller));
        }
        let mut f = Fixture::new(s, "209 then");
        f.config.use_bidirectional = false;
        assert_eq!(f.plan().action, Action::CounterNoprice);
    }

    #[test]
    fn skills_off_means_chat_and_bidirectional_off_means_no_moves() {
        let mut f = Fixture::new(fresh(), "210?");
        f.config.use_skills = false;
        f.config.use_bidirectional = false;
        let d = f.plan();
        assert_eq!(d.skill, Some(LanguageSkill::Chat));
        assert!(d.anticipated_buyer_moves.is_empty());
    }

    #[test]
    fn actions_off_never_prices() {
        let mut f = Fixture::new(fresh(), "210?");
        f.config.use_actions = false;
        let d = f.plan();
        assert_eq!(d.action, Action::CounterNoprice);
        assert!(d.seller_price.is_none());
        let mut f = Fixture::new(fresh(), "245?");
        f.config.use_actions = false;
        assert_eq!(f.plan().action, Action::Deal);
    }

    #[test]
    fn choose_skill_edges() {
        let mut rng = stream(1, 0, Stream::Skill);
        assert_eq!(
            choose_skill(&[LanguageSkill::Chat], Some(LanguageSkill::Chat), true, &mut rng),
            LanguageSkill::Chat
        );
        for _ in 0..200 {
            let s = choose_skill(&LanguageSkill::ALL, Some(LanguageSkill::Emphasis), true, &mut rng);
            assert_ne!(s, LanguageSkill::Emphasis);
        }
    }

    #[test]
    fn anticipation_rules() {
        let mut s = fresh();
        assert_eq!(
            anticipate_rule(&s),
            vec![AnticipatedMove::new("ask question / greet", None)]
        );
        s.buyer_offers = vec![m(180), m(190)];
        assert_eq!(
            anticipate_rule(&s),
            vec![AnticipatedMove::new("COUNTER", Some(m(200)))]
        );
        s.buyer_offers = vec![m(200)];
        assert_eq!(
            anticipate_rule(&s),
            vec![AnticipatedMove::new("accept or walk away", None)]
        );
    }

    #[test]
    fn median_of_increments() {
        assert_eq!(median_increment(&[m(100), m(110), m(130), m(135)]), Some(1000));
        assert_eq!(median_increment(&[m(100), m(110), m(130)]), Some(1500));
        assert_eq!(median_increment(&[m(100)]), None);
    }

    #[test]
    fn action_reply_parsing() {
        assert_eq!(
            parse_action_reply("Action: COUNTER-NOPRICE because the buyer is close").unwrap(),
            Action::CounterNoprice
        );
        assert_eq!(parse_action_reply("deal").unwrap(), Action::Deal);
        assert_eq!(parse_action_reply("counter_noprice").unwrap(), Action::CounterNoprice);
        assert_eq!(parse_action_reply("I'd say ANS.").unwrap(), Action::Ans);
        assert_eq!(
            parse_action_reply("let's keep chatting"),
            Err(PlannerError::UnparseableAction)
        );
        assert_eq!(parse_action_reply("answers"), Err(PlannerError::UnparseableAction));
    }

    #[test]
    fn model_path_uses_reply_and_falls_back() {
        let f = Fixture::new(fresh(), "210?");
        let mock = MockBackend::from_script(["REJECT"]).unwrap();
        let d = plan(
            &f.input(),
            PlannerBackends {
                action: Some(&mock),
                anticipation: None,
            },
        );
        assert_eq!(d.action, Action::Reject);
        assert_eq!(d.seller_price, Some(m(200)));

        let d = plan(
            &f.input(),
            PlannerBackends {
                action: Some(&FailingBackend),
                anticipation: Some(&FailingBackend),
            },
        );
        assert!(d.rationale.iter().any(|r| r.starts_with("fallback to rule table")));
        assert!(d.anticipated_buyer_moves.is_empty());
        assert_eq!(d.action, Action::Counter);
    }

    #[test]
    fn model_deal_below_bottom_is_overruled() {
        let f = Fixture::new(fresh(), "150?");
        let mock = MockBackend::from_script(["DEAL"]).unwrap();
        let d = plan(
            &f.input(),
            PlannerBackends {
                action: Some(&mock),
                anticipation: None,
            },
        );
        assert_ne!(d.action, Action::Deal);
    }

    #[test]
    fn anticipation_reply_parsing() {
        let moves = parse_anticipation_reply("MOVE: counter @ $210\n- walk away\nnoise\n* ask about shipping\n- extra");
        assert_eq!(moves.len(), 3);
        assert_eq!(moves[0], AnticipatedMove::new("counter", Some(m(210))));
        assert_eq!(moves[1], AnticipatedMove::new("walk away", None));
    }

    #[test]
    fn plan_is_deterministic() {
        let f = Fixture::new(fresh(), "205?");
        assert_eq!(f.plan(), f.plan());
    }
}
