//! Prompt bundle loading and `{{placeholder}}` rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, Decision, Session, Speaker};

const DEFAULT_BUNDLE: &str = include_str!("../prompts/default.json");

const DEFAULT_ANTICIPATION_PROMPT: &str = "You are helping the seller of {{title}} (listed at {{currency}}{{list_price}}). Predict the buyer's most likely next moves. Write one to three lines, each of the form MOVE: <what the buyer does> [@ <price>].";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template references unbound placeholder {{{{{0}}}}}")]
    MissingPlaceholder(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
    #[error("cannot read prompt bundle {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse prompt bundle: {0}")]
    Parse(#[from] serde_json::Error),
}

/// The three model prompts: action selection, bi-directional thinking and
/// response generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub action_prompt: String,
    pub bidirectional_prompt: String,
    pub response_prompt: String,
    #[serde(default = "default_anticipation_prompt")]
    pub anticipation_prompt: String,
}

fn default_anticipation_prompt() -> String {
    DEFAULT_ANTICIPATION_PROMPT.to_string()
}

impl Default for PromptBundle {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_BUNDLE).expect("bundled prompts parse")
    }
}

impl PromptBundle {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Names of every `{{placeholder}}` in `template`.
pub fn placeholders(template: &str) -> Result<BTreeSet<String>, PromptError> {
    let mut names = BTreeSet::new();
    scan(template, |name| {
        names.insert(name.to_string());
        Ok(String::new())
    })?;
    Ok(names)
}

/// Substitutes every `{{name}}`; an unbound name is an error.
pub fn render_template(
    template: &str,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, PromptError> {
    scan(template, |name| {
        bindings
            .get(name)
            .cloned()
            .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))
    })
}

fn scan(
    template: &str,
    mut on_slot: impl FnMut(&str) -> Result<String, PromptError>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut offset = 0;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or(PromptError::Unterminated(offset + open))?;
        out.push_str(&on_slot(after[..close].trim())?);
        let consumed = open + 2 + close + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

fn base_bindings(session: &Session) -> BTreeMap<&'static str, String> {
    let p = &session.product;
    BTreeMap::from([
        ("title", p.title.clone()),
        ("description", p.description.clone()),
        ("category", p.category.clone()),
        ("list_price", p.list_price.amount_string()),
        ("bottom_price", p.bottom_price.amount_string()),
        ("currency", session.currency.clone()),
        ("turn", session.agent_turns().to_string()),
    ])
}

fn product_section(session: &Session) -> String {
    let p = &session.product;
    let join = |offers: &[crate::money::Money]| {
        if offers.is_empty() {
            "none".to_string()
        } else {
            offers
                .iter()
                .map(|o| o.render(&session.currency))
                .collect::<Vec<_>>()
                .join(", ")
        }
    };
    format!(
        "### Product\nTitle: {}\nCategory: {}\nDescription: {}\nList price: {}\nBottom price: {}\nSeller offers so far: {}\nBuyer offers so far: {}",
        p.title,
        p.category,
        p.description,
        p.list_price.render(&session.currency),
        p.bottom_price.render(&session.currency),
        join(&session.seller_offers),
        join(&session.buyer_offers),
    )
}

/// One line per utterance, oldest first.
pub fn transcript_section(session: &Session) -> String {
    let mut out = String::from("### Conversation");
    for u in &session.utterances {
        let who = match u.speaker {
            Speaker::Buyer => "Buyer",
            Speaker::SellerAgent => "Seller",
        };
        let text = u.text.replace(['\r', '\n'], " ");
        out.push_str(&format!("\n{who}: {text}"));
    }
    out
}

fn actions_section() -> String {
    let mut out = String::from("### Allowed actions");
    for a in Action::ALL {
        out.push_str(&format!("\n{}: {}", a.label(), a.definition()));
    }
    out
}

/// Builds the action-selection prompt. The anticipation section appears
/// only when `anticipated` is non-empty.
pub fn render_action_prompt(
    bundle: &PromptBundle,
    session: &Session,
    anticipated: &[String],
) -> Result<String, PromptError> {
    let mut bindings = base_bindings(session);
    let mut out = render_template(&bundle.action_prompt, &bindings)?;
    if !anticipated.is_empty() {
        let moves = anticipated
            .iter()
            .map(|m| format!("- {m}"))
            .collect::<Vec<_>>()
            .join("\n");
        bindings.insert("anticipated_moves", moves);
        out.push_str("\n\n### Anticipated buyer moves\n");
        out.push_str(&render_template(&bundle.bidirectional_prompt, &bindings)?);
    }
    out.push_str("\n\n");
    out.push_str(&product_section(session));
    out.push_str("\n\n");
    out.push_str(&transcript_section(session));
    out.push_str("\n\n");
    out.push_str(&actions_section());
    Ok(out)
}

pub fn render_anticipation_prompt(
    bundle: &PromptBundle,
    session: &Session,
) -> Result<String, PromptError> {
    let bindings = base_bindings(session);
    let mut out = render_template(&bundle.anticipation_prompt, &bindings)?;
    out.push_str("\n\n");
    out.push_str(&product_section(session));
    out.push_str("\n\n");
    out.push_str(&transcript_section(session));
    Ok(out)
}

/// Builds the response-generation prompt for `decision`.
pub fn render_response_prompt(
    bundle: &PromptBundle,
    session: &Session,
    decision: &Decision,
) -> Result<String, PromptError> {
    let mut bindings = base_bindings(session);
    let skill = decision.skill.unwrap_or(crate::domain::LanguageSkill::Chat);
    let price = decision
        .seller_price
        .map(|p| p.render(&session.currency))
        .unwrap_or_else(|| "(no price)".to_string());
    bindings.insert("action", decision.action.label().to_string());
    bindings.insert("action_definition", decision.action.definition().to_string());
    bindings.insert("skill", skill.display_name().to_string());
    bindings.insert("skill_definition", skill.definition().to_string());
    bindings.insert("price", price.clone());
    let mut out = render_template(&bundle.response_prompt, &bindings)?;
    out.push_str("\n\n");
    out.push_str(&product_section(session));
    out.push_str("\n\n");
    out.push_str(&transcript_section(session));
    out.push_str(&format!(
        "\n\n### Your move\nAction: {} ({})\nSkill: {} ({})\nPrice: {}",
        decision.action.label(),
        decision.action.definition(),
        skill.display_name(),
        skill.definition(),
        price
    ));
    Ok(out)
}
