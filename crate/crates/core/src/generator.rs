//! Seller reply generation.
//!
//! The model path renders the response prompt and checks the reply: a
//! priced decision must state exactly its price, a no-price counter must
//! state none. One regeneration is allowed, after which the deterministic
//! template table answers. The template path is total, so generation never
//! fails.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendRequest, ChatMessage};
use crate::domain::{Action, Decision, LanguageSkill, Product};
use crate::extractor::{parse_expressions, ExpressionKind};
use crate::prompts::render_template;

const DEFAULT_TEMPLATES: &str = include_str!("../prompts/templates.json");

pub const DEFAULT_MAX_REPLY_CHARS: usize = 280;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse template table: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("template table has no entry for {0}")]
    MissingKey(String),
    #[error("unknown template key {0}")]
    UnknownKey(String),
}

/// `"ACTION.SKILL"` → candidate templates with `{{title}}`, `{{price}}` and
/// `{{description}}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateTable {
    entries: BTreeMap<(Action, LanguageSkill), Vec<String>>,
}

impl Default for TemplateTable {
    fn default() -> Self {
        TemplateTable::from_json(DEFAULT_TEMPLATES).expect("bundled templates are complete")
    }
}

impl TemplateTable {
    /// Parses a table; every action/skill pair must have at least one template.
    pub fn from_json(text: &str) -> Result<Self, TemplateError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        let mut entries = BTreeMap::new();
        for (key, templates) in raw {
            let (a, s) = key
                .split_once('.')
                .ok_or_else(|| TemplateError::UnknownKey(key.clone()))?;
            let action = Action::from_key(a).ok_or_else(|| TemplateError::UnknownKey(key.clone()))?;
            let skill =
                LanguageSkill::from_key(s).ok_or_else(|| TemplateError::UnknownKey(key.clone()))?;
            entries.insert((action, skill), templates);
        }
        for action in Action::ALL {
            for skill in LanguageSkill::ALL {
                if entries.get(&(action, skill)).is_none_or(|v| v.is_empty()) {
                    return Err(TemplateError::MissingKey(format!("{}.{}", action.key(), skill.key())));
                }
            }
        }
        Ok(TemplateTable { entries })
    }

    /// Loads an override file; keys it omits keep the bundled templates.
    pub fn load_with_defaults(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let overrides: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
        let mut merged: BTreeMap<String, Vec<String>> = serde_json::from_str(DEFAULT_TEMPLATES)?;
        merged.extend(overrides);
        TemplateTable::from_json(&serde_json::to_string(&merged)?)
    }

    pub fn templates(&self, action: Action, skill: LanguageSkill) -> &[String] {
        &self.entries[&(action, skill)]
    }
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for part in parts {
        for b in *part {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

pub fn truncate_chars(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => text[..idx].trim_end().to_string(),
        None => text.to_string(),
    }
}

/// Deterministic template reply for `decision`.
pub fn template_reply(
    table: &TemplateTable,
    decision: &Decision,
    product: &Product,
    currency: &str,
) -> String {
    let skill = decision.skill.unwrap_or(LanguageSkill::Chat);
    let candidates = table.templates(decision.action, skill);
    let price_key = decision.seller_price.map_or(-1, |p| p.minor()).to_le_bytes();
    let buyer_key = decision.buyer_price_seen.map_or(-1, |p| p.minor()).to_le_bytes();
    let idx = fnv1a(&[product.id.as_bytes(), &price_key, &buyer_key]) as usize % candidates.len();
    let bindings = BTreeMap::from([
        ("title", product.title.clone()),
        ("description", product.description.clone()),
        (
            "price",
            decision
                .seller_price
                .map(|p| p.render(currency))
                .unwrap_or_default(),
        ),
    ]);
    // Unknown slots in a user-supplied template render literally rather than failing.
    let text = render_template(&candidates[idx], &bindings).unwrap_or_else(|_| candidates[idx].clone());
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub max_reply_chars: usize,
    pub temperature: f64,
    pub banned_phrases: Vec<String>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            max_reply_chars: DEFAULT_MAX_REPLY_CHARS,
            temperature: 0.7,
            banned_phrases: Vec::new(),
        }
    }
}

/// Inputs for one reply.
pub struct GenerationRequest<'a> {
    pub product: &'a Product,
    pub decision: &'a Decision,
    /// Rendered response prompt.
    pub prompt: String,
    pub currency: &'a str,
    pub config: &'a GeneratorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySource {
    Model,
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub text: String,
    pub source: ReplySource,
    pub model_calls: usize,
    pub notes: Vec<String>,
}

/// Why a reply fails the post-checks, if it does.
pub fn check_reply(text: &str, decision: &Decision, currency: &str, config: &GeneratorConfig) -> Option<String> {
    if text.trim().is_empty() {
        return Some("empty reply".into());
    }
    if text.chars().count() > config.max_reply_chars {
        return Some("reply too long".into());
    }
    let lower = text.to_lowercase();
    if let Some(b) = config
        .banned_phrases
        .iter()
        .find(|b| !b.is_empty() && lower.contains(&b.to_lowercase()))
    {
        return Some(format!("banned phrase {b:?}"));
    }
    let expressions = parse_expressions(text);
    if let Some(price) = decision.seller_price {
        let rendered = price.amount_string();
        if !text.contains(&rendered) {
            return Some(format!("price {} not stated", price.render(currency)));
        }
        let exact = !expressions.is_empty()
            && expressions
                .iter()
                .all(|e| e.kind == ExpressionKind::Absolute { amount: price });
        if !exact {
            return Some("reply states a price other than the decision's".into());
        }
    } else if decision.action == Action::CounterNoprice && !expressions.is_empty() {
        return Some("no-price counter mentions a price".into());
    }
    None
}

fn clean(text: &str, max_chars: usize) -> String {
    let trimmed = text.trim().trim_matches('"').trim();
    truncate_chars(trimmed, max_chars)
}

/// Produces the seller reply. Never fails: model problems fall back to the
/// template table.
pub fn generate(
    request: &GenerationRequest<'_>,
    table: &TemplateTable,
    backend: Option<&dyn Backend>,
) -> Generated {
    let mut notes = Vec::new();
    let mut model_calls = 0;
    if let Some(backend) = backend {
        let call = BackendRequest::new(vec![ChatMessage::user(request.prompt.clone())])
            .with_temperature(request.config.temperature)
            .with_max_tokens(256);
        for attempt in 0..2 {
            model_calls += 1;
            match backend.complete(&call) {
                Ok(reply) => {
                    let text = clean(&reply.text, request.config.max_reply_chars);
                    match check_reply(&text, request.decision, request.currency, request.config) {
                        None => {
                            return Generated {
                                text,
                                source: ReplySource::Model,
                                model_calls,
                                notes,
                            }
                        }
                        Some(why) => notes.push(format!("attempt {}: {why}", attempt + 1)),
                    }
                }
                Err(e) => {
                    notes.push(format!("attempt {}: backend failure: {e}", attempt + 1));
                    break;
                }
            }
        }
    }
    let text = truncate_chars(
        &template_reply(table, request.decision, request.product, request.currency),
        request.config.max_reply_chars,
    );
    if backend.is_some() {
        notes.push("template fallback".into());
    }
    Generated {
        text,
        source: ReplySource::Template,
        model_calls,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FailingBackend, MockBackend};
    use crate::money::Money;

    fn product() -> Product {
        Product {
            id: "p1".into(),
            title: "Desk lamp".into(),
            description: "Warm light, no scratches.".into(),
            category: String::new(),
            list_price: Money::from_major(250),
            bottom_price: Money::from_major(200),
        }
    }

    fn decision(action: Action, skill: LanguageSkill, price: Option<i64>) -> Decision {
        Decision {
            action,
            skill: Some(skill),
            seller_price: price.map(Money::from_major),
            buyer_price_seen: None,
            rationale: vec![],
            anticipated_buyer_moves: vec![],
        }
    }

    fn request<'a>(p: &'a Product, d: &'a Decision, cfg: &'a GeneratorConfig) -> GenerationRequest<'a> {
        GenerationRequest {
            product: p,
            decision: d,
            prompt: "prompt".into(),
            currency: "$",
            config: cfg,
        }
    }

    #[test]
    fn every_template_passes_its_own_checks() {
        let table = TemplateTable::default();
        let p = product();
        let cfg = GeneratorConfig::default();
        for action in Action::ALL {
            for skill in LanguageSkill::ALL {
                let price = match action {
                    Action::Reject => Some(200),
                    a if a.requires_price() => Some(215),
                    _ => None,
                };
                let d = decision(action, skill, price);
                for i in 0..table.templates(action, skill).len() {
                    let mut p = p.clone();
                    p.id = format!("p{i}");
                    let text = template_reply(&table, &d, &p, "$");
                    assert_eq!(check_reply(&text, &d, "$", &cfg), None, "{action:?}/{skill:?}: {text}");
                }
            }
        }
    }

    #[test]
    fn reject_template_is_firm() {
        let d = decision(Action::Reject, LanguageSkill::Emphasis, Some(200));
        let text = template_reply(&TemplateTable::default(), &d, &product(), "$");
        assert!(text.contains("200"));
        assert!(text.contains("bottom price") || text.contains("stick to"), "{text}");
    }

    #[test]
    fn hello_template_has_no_numerals() {
        let d = decision(Action::Hello, LanguageSkill::Chat, None);
        let text = template_reply(&TemplateTable::default(), &d, &product(), "$");
        assert!(!text.chars().any(|c| c.is_ascii_digit()), "{text}");
    }

    #[test]
    fn added_value_counter_offers_extras() {
        let d = decision(Action::Counter, LanguageSkill::AddedValue, Some(215));
        let text = template_reply(&TemplateTable::default(), &d, &product(), "$");
        assert!(text.contains("215"));
        assert!(text.contains("free shipping"), "{text}");
    }

    #[test]
    fn deal_template_contains_agreement() {
        let d = decision(Action::Deal, LanguageSkill::Chat, None);
        let cfg = GeneratorConfig::default();
        let out = generate(&request(&product(), &d, &cfg), &TemplateTable::default(), None);
        assert!(out.text.to_lowercase().contains("deal"));
        assert_eq!(out.source, ReplySource::Template);
    }

    #[test]
    fn missing_price_triggers_retry_then_template() {
        let d = decision(Action::Counter, LanguageSkill::Chat, Some(215));
        let cfg = GeneratorConfig::default();
        let mock = MockBackend::from_script(["Maybe we can work something out."]).unwrap();
        let out = generate(&request(&product(), &d, &cfg), &TemplateTable::default(), Some(&mock));
        assert_eq!(out.source, ReplySource::Template);
        assert_eq!(mock.call_count(), 2);
        assert!(out.text.contains("215"));
    }

    #[test]
    fn model_reply_with_price_is_used() {
        let d = decision(Action::Counter, LanguageSkill::Chat, Some(215));
        let cfg = GeneratorConfig::default();
        let mock = MockBackend::from_script(["\"I can do $215, deal?\""]).unwrap();
        let out = generate(&request(&product(), &d, &cfg), &TemplateTable::default(), Some(&mock));
        assert_eq!(out.source, ReplySource::Model);
        assert_eq!(out.text, "I can do $215, deal?");
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn noprice_reply_with_number_is_refused() {
        let d = decision(Action::CounterNoprice, LanguageSkill::Chat, None);
        let cfg = GeneratorConfig::default();
        let mock = MockBackend::from_script(["How about 230?", "Could you come up a bit?"]).unwrap();
        let out = generate(&request(&product(), &d, &cfg), &TemplateTable::default(), Some(&mock));
        assert_eq!(out.source, ReplySource::Model);
        assert_eq!(out.text, "Could you come up a bit?");
    }

    #[test]
    fn backend_failure_falls_back_without_retry() {
        let d = decision(Action::Hello, LanguageSkill::Chat, None);
        let cfg = GeneratorConfig::default();
        let out = generate(&request(&product(), &d, &cfg), &TemplateTable::default(), Some(&FailingBackend));
        assert_eq!(out.source, ReplySource::Template);
        assert_eq!(out.model_calls, 1);
    }

    #[test]
    fn long_replies_are_truncated() {
        let d = decision(Action::Hello, LanguageSkill::Chat, None);
        let cfg = GeneratorConfig {
            max_reply_chars: 10,
            ..Default::default()
        };
        let mock = MockBackend::from_script(["a".repeat(50)]).unwrap();
        let out = generate(&request(&product(), &d, &cfg), &TemplateTable::default(), Some(&mock));
        assert_eq!(out.text.chars().count(), 10);
    }

    #[test]
    fn banned_phrases_are_refused() {
        let d = decision(Action::Hello, LanguageSkill::Chat, None);
        let cfg = GeneratorConfig {
            banned_phrases: vec!["whatsapp".into()],
            ..Default::default()
        };
        let mock = MockBackend::from_script(["Message me on WhatsApp"]).unwrap();
        let out = generate(&request(&product(), &d, &cfg), &TemplateTable::default(), Some(&mock));
        assert_eq!(out.source, ReplySource::Template);
    }

    #[test]
    fn table_requires_every_pair() {
        assert!(matches!(
            TemplateTable::from_json(r#"{"DEAL.CHAT": ["ok"]}"#),
            Err(TemplateError::MissingKey(_))
        ));
        assert!(matches!(
            TemplateTable::from_json(r#"{"NOPE.CHAT": ["ok"]}"#),
            Err(TemplateError::UnknownKey(_))
        ));
    }
}
