//! One agent turn end to end: extract, plan, generate, advance.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, BackendSettings};
use crate::domain::{DomainError, Event, Product, Session, Speaker, Utterance, DEFAULT_T_MAX};
use crate::extractor::{extract, ExtractError, ExtractionKind, ExtractorConfig, ModelExtractor, PriceExtraction, Span};
use crate::generator::{generate, GenerationRequest, GeneratorConfig, ReplySource, TemplateError, TemplateTable};
use crate::money::Money;
use crate::planner::{plan, PlanInput, PlannerBackends, PlannerConfig, PlannerError};
use crate::prompts::{render_response_prompt, PromptBundle, PromptError};
use crate::sampler::{SamplerConfig, SamplerConfigError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Sampler(#[from] SamplerConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("cannot read engine config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse engine config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid engine config: {0}")]
    Invalid(String),
}

/// Backend selection for each model call site.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub action: BackendSettings,
    pub anticipation: BackendSettings,
    pub response: BackendSettings,
    pub extractor: BackendSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub planner: PlannerConfig,
    pub sampler: SamplerConfig,
    /// Prompt bundle file; the bundled prompts when unset.
    pub prompts: Option<PathBuf>,
    /// Template table file; keys it omits keep the bundled templates.
    pub templates: Option<PathBuf>,
    pub backends: BackendConfig,
    pub t_max: u32,
    pub max_reply_chars: usize,
    pub banned_phrases: Vec<String>,
    pub currency: String,
    /// When off, the agent reads buyer prices naively: the first bare number
    /// in the message, with no relative-discount arithmetic.
    pub use_price_extractor: bool,
    pub extractor: ExtractorConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            planner: PlannerConfig::default(),
            sampler: SamplerConfig::default(),
            prompts: None,
            templates: None,
            backends: BackendConfig::default(),
            t_max: DEFAULT_T_MAX,
            max_reply_chars: GeneratorConfig::default().max_reply_chars,
            banned_phrases: Vec::new(),
            currency: "$".to_string(),
            use_price_extractor: true,
            extractor: ExtractorConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|source| EngineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: EngineConfig = serde_json::from_str(&text)?;
        // Relative file references are taken from the config's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for file in [&mut config.prompts, &mut config.templates].into_iter().flatten() {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(config)
    }
}

/// Backends built from [`BackendConfig`].
#[derive(Clone, Default)]
pub struct Backends {
    pub action: Option<Arc<dyn Backend>>,
    pub anticipation: Option<Arc<dyn Backend>>,
    pub response: Option<Arc<dyn Backend>>,
    pub extractor: Option<Arc<dyn Backend>>,
}

impl Backends {
    pub fn build(config: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Backends {
            action: config.action.build()?,
            anticipation: config.anticipation.build()?,
            response: config.response.build()?,
            extractor: config.extractor.build()?,
        })
    }
}

/// Result of one buyer message.
#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub session: Session,
    pub extraction: PriceExtraction,
    /// Absent when the buyer message itself ended the session.
    pub reply: Option<String>,
    pub decision: Option<crate::domain::Decision>,
    pub reply_source: Option<ReplySource>,
    pub notes: Vec<String>,
}

/// A validated configuration with its prompts, templates and backends loaded.
pub struct Engine {
    config: EngineConfig,
    prompts: PromptBundle,
    templates: TemplateTable,
    generator: GeneratorConfig,
    backends: Backends,
}

impl Engine {
    /// Loads every referenced file and builds the backends; any problem is
    /// reported here rather than mid-conversation.
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        let backends = Backends::build(&config.backends)?;
        Engine::with_backends(config, backends)
    }

    pub fn with_backends(config: EngineConfig, backends: Backends) -> Result<Self, EngineError> {
        config.planner.validate()?;
        config.sampler.validate()?;
        if config.t_max == 0 {
            return Err(EngineError::Invalid("t_max must be positive".into()));
        }
        if config.max_reply_chars == 0 {
            return Err(EngineError::Invalid("max_reply_chars must be positive".into()));
        }
        let e = &config.extractor;
        if !(0.0 <= e.min_list_ratio && e.min_list_ratio < e.max_list_ratio) {
            return Err(EngineError::Invalid("extractor ratio window is empty".into()));
        }
        let prompts = match &config.prompts {
            Some(path) => PromptBundle::load(path)?,
            None => PromptBundle::default(),
        };
        let templates = match &config.templates {
            Some(path) => TemplateTable::load_with_defaults(path)?,
            None => TemplateTable::default(),
        };
        let generator = GeneratorConfig {
            max_reply_chars: config.max_reply_chars,
            banned_phrases: config.banned_phrases.clone(),
            ..GeneratorConfig::default()
        };
        Ok(Engine {
            config,
            prompts,
            templates,
            generator,
            backends,
        })
    }

    /// A copy with backends rebuilt from the config, so scripted mocks start
    /// from the top of their script.
    pub fn fork(&self) -> Result<Engine, EngineError> {
        Ok(Engine {
            config: self.config.clone(),
            prompts: self.prompts.clone(),
            templates: self.templates.clone(),
            generator: self.generator.clone(),
            backends: Backends::build(&self.config.backends)?,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn new_session(&self, id: impl Into<String>, product: Product, rng_seed: u64) -> Result<Session, EngineError> {
        Ok(Session::new(id, product, rng_seed)?
            .with_t_max(self.config.t_max)
            .with_currency(self.config.currency.clone()))
    }

    /// Reads the buyer's price from `text` given the current session.
    pub fn extract_offer(&self, session: &Session, text: &str) -> Result<PriceExtraction, EngineError> {
        let mut history = session.utterances.clone();
        history.push(Utterance {
            speaker: Speaker::Buyer,
            text: text.to_string(),
            turn: history.len() as u32,
            timestamp: 0,
        });
        if !self.config.use_price_extractor {
            return Ok(naive_extract(&session.product, text, &self.config.extractor));
        }
        if let Some(backend) = &self.backends.extractor {
            let model = ModelExtractor {
                backend: backend.as_ref(),
                temperature: 0.0,
            };
            match model.extract(&session.product, &history, &session.seller_offers) {
                Ok(x) => return Ok(x),
                Err(ExtractError::Backend(e)) => {
                    tracing::warn!(error = %e, "model extraction failed; using lexical extractor");
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(extract(&session.product, &history, &session.seller_offers, &self.config.extractor)?)
    }

    /// Applies one buyer message and, if the session stays open, the agent's
    /// reply.
    pub fn respond(&self, session: &Session, text: &str, timestamp: u64) -> Result<TurnOutcome, EngineError> {
        if !session.is_open() {
            return Err(DomainError::TerminalSession(session.status).into());
        }
        let extraction = match self.extract_offer(session, text) {
            Ok(x) => x,
            Err(EngineError::Extract(ExtractError::AmbiguousExpression { first, second })) => {
                PriceExtraction::none(vec![format!("ambiguous between {first} and {second}; no offer read")])
            }
            Err(e) => return Err(e),
        };
        let after_buyer = session.advance(Event::BuyerUtterance {
            text: text.to_string(),
            offer: extraction.price,
            timestamp,
        })?;
        if !after_buyer.is_open() {
            return Ok(TurnOutcome {
                session: after_buyer,
                extraction,
                reply: None,
                decision: None,
                reply_source: None,
                notes: Vec::new(),
            });
        }

        let input = PlanInput {
            session: &after_buyer,
            extraction: &extraction,
            config: &self.config.planner,
            sampler: &self.config.sampler,
            prompts: &self.prompts,
        };
        let backends = PlannerBackends {
            action: self.backends.action.as_deref(),
            anticipation: self.backends.anticipation.as_deref(),
        };
        let decision = plan(&input, backends);

        let prompt = match render_response_prompt(&self.prompts, &after_buyer, &decision) {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!(error = %e, "response prompt failed to render");
                String::new()
            }
        };
        let response_backend = if prompt.is_empty() {
            None
        } else {
            self.backends.response.as_deref()
        };
        let generated = generate(
            &GenerationRequest {
                product: &after_buyer.product,
                decision: &decision,
                prompt,
                currency: &after_buyer.currency,
                config: &self.generator,
            },
            &self.templates,
            response_backend,
        );
        let session = after_buyer.advance(Event::AgentTurn {
            decision: decision.clone(),
            text: generated.text.clone(),
            timestamp,
        })?;
        Ok(TurnOutcome {
            session,
            extraction,
            reply: Some(generated.text),
            decision: Some(decision),
            reply_source: Some(generated.source),
            notes: generated.notes,
        })
    }
}

fn first_number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d{1,2})?").expect("number regex"))
}

/// The extractor-off reading: the first bare number, taken as an absolute
/// price if it is plausible.
pub fn naive_extract(product: &Product, text: &str, config: &ExtractorConfig) -> PriceExtraction {
    let Some(m) = first_number().find(text) else {
        return PriceExtraction::none(vec!["naive reading: no number".into()]);
    };
    let Ok(value) = m.as_str().parse::<f64>() else {
        return PriceExtraction::none(vec!["naive reading: unparseable number".into()]);
    };
    let price = Money::from_minor((value * 100.0).round() as i64);
    let list = product.list_price.minor() as f64;
    let minor = price.minor() as f64;
    if price <= Money::ZERO || minor < config.min_list_ratio * list || minor > config.max_list_ratio * list {
        return PriceExtraction::none(vec![format!("naive reading: {price} implausible")]);
    }
    PriceExtraction {
        price: Some(price),
        kind: ExtractionKind::Absolute,
        base_used: None,
        audit: vec![format!("naive reading: first number {price}")],
        source_span: Some(Span {
            start: m.start(),
            end: m.end(),
        }),
    }
}
