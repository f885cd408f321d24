//! Core of the bargaining seller agent: domain model, price extraction,
//! action planning, price sampling, reply generation, model backends, a
//! simulated buyer and the evaluation harness.

pub mod backend;
pub mod buyer;
pub mod domain;
pub mod engine;
pub mod extractor;
pub mod generator;
pub mod harness;
pub mod money;
pub mod planner;
pub mod prompts;
pub mod rng;
pub mod sampler;

pub use domain::{Action, Decision, Event, LanguageSkill, Product, Session, SessionStatus};
pub use money::Money;
