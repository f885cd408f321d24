//! Batch self-play and the AT / SR / SL% metrics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buyer::{buyer_step, BuyerMove, BuyerProfile, BuyerTemplates, ProfileDistribution};
use crate::domain::{Action, Product, Session, SessionStatus, Speaker};
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::money::Money;
use crate::rng::{derive_seed, Stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid prices: lowest {lowest} above list {list}")]
    InvalidPrices { lowest: Money, list: Money },
    #[error("episode count must be positive")]
    NoEpisodes,
    #[error("batch config has no labels")]
    NoLabels,
    #[error("duplicate config label {0}")]
    DuplicateLabel(String),
    #[error("config {label}: {source}")]
    Config { label: String, source: EngineError },
    #[error(transparent)]
    Buyer(#[from] crate::buyer::BuyerError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("transcript line {line}: {source}")]
    Transcript { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Where the deal landed in the seller's band: `(deal − lowest)/(list − lowest)`
/// clamped to `[0, 1]`. With a zero-width band the result is 1 when the deal
/// reaches the list price and 0 otherwise.
pub fn sl_ratio(deal: Money, list: Money, lowest: Money) -> Result<f64, HarnessError> {
    if lowest > list {
        return Err(HarnessError::InvalidPrices { lowest, list });
    }
    if lowest == list {
        return Ok(if deal >= list { 1.0 } else { 0.0 });
    }
    let ratio = (deal.minor() - lowest.minor()) as f64 / (list.minor() - lowest.minor()) as f64;
    Ok(ratio.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub session_id: String,
    pub config_label: String,
    pub turns: u32,
    pub success: bool,
    pub deal_price: Option<Money>,
    pub sl_ratio: Option<f64>,
}

impl EpisodeReport {
    pub fn from_session(label: &str, session: &Session) -> Self {
        let success = session.status == SessionStatus::Deal && session.deal_price.is_some();
        let deal_price = if success { session.deal_price } else { None };
        let sl = deal_price.and_then(|d| {
            sl_ratio(d, session.product.list_price, session.product.bottom_price).ok()
        });
        EpisodeReport {
            session_id: session.id.clone(),
            config_label: label.to_string(),
            turns: session.decisions.len() as u32,
            success: sl.is_some(),
            deal_price: deal_price.filter(|_| sl.is_some()),
            sl_ratio: sl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub config_label: String,
    pub episode_count: usize,
    /// Mean agent turns over successful episodes.
    pub at: Option<f64>,
    /// Mean agent turns over all episodes.
    pub at_all_episodes: Option<f64>,
    pub sr: f64,
    pub sl_mean: Option<f64>,
    pub episodes: Vec<EpisodeReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl BatchReport {
    pub fn aggregate(label: &str, episodes: Vec<EpisodeReport>) -> Self {
        let n = episodes.len();
        let successes: Vec<&EpisodeReport> = episodes.iter().filter(|e| e.success).collect();
        BatchReport {
            config_label: label.to_string(),
            episode_count: n,
            at: mean(successes.iter().map(|e| f64::from(e.turns))),
            at_all_episodes: mean(episodes.iter().map(|e| f64::from(e.turns))),
            sr: if n == 0 { 0.0 } else { successes.len() as f64 / n as f64 },
            sl_mean: mean(successes.iter().filter_map(|e| e.sl_ratio)),
            episodes,
        }
    }
}

/// One engine configuration under a report label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledConfig {
    pub label: String,
    #[serde(default)]
    pub engine: EngineConfig,
}

/// Batch config file: labels with feature flags plus the profile distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub configs: Vec<LabeledConfig>,
    #[serde(default)]
    pub profiles: ProfileDistribution,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            configs: ablation_configs(&EngineConfig::default()),
            profiles: ProfileDistribution::default(),
        }
    }
}

impl BatchConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const ABLATION_LABELS: [&str; 6] = [
    "baseline",
    "+price_extractor",
    "+action",
    "+language_skills",
    "+bidirectional",
    "all",
];

/// The six ablation rows: the baseline with every feature off, each feature
/// alone on top of it, and everything on. Other fields come from `base`.
pub fn ablation_configs(base: &EngineConfig) -> Vec<LabeledConfig> {
    ABLATION_LABELS
        .iter()
        .map(|label| {
            let mut engine = base.clone();
            let on = |name: &str| *label == "all" || *label == name;
            engine.use_price_extractor = on("+price_extractor");
            engine.planner.use_actions = on("+action");
            engine.planner.use_skills = on("+language_skills");
            engine.planner.use_bidirectional = on("+bidirectional");
            LabeledConfig {
                label: label.to_string(),
                engine,
            }
        })
        .collect()
}

/// One persisted transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub config_label: String,
    pub episode: u64,
    pub buyer_profile: BuyerProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub session: Session,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub reports: Vec<BatchReport>,
    pub transcripts: Vec<TranscriptRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportFile {
    reports: Vec<BatchReport>,
}

/// Plays one episode. Logical timestamps count messages.
pub fn run_episode(
    engine: &Engine,
    product: Product,
    profile: &BuyerProfile,
    session_id: String,
    session_seed: u64,
    templates: &BuyerTemplates,
) -> Result<Session, (Session, EngineError)> {
    let mut session = engine
        .new_session(session_id.clone(), product.clone(), session_seed)
        .map_err(|e| (placeholder_session(&session_id, product, session_seed), e))?;
    let mut clock = 0u64;
    while session.is_open() {
        let step = buyer_step(profile, &session, templates);
        let Some(text) = step.text() else {
            session = session.expire(clock).map_err(|e| (session.clone(), e.into()))?;
            break;
        };
        let outcome = engine.respond(&session, text, clock).map_err(|e| (session.clone(), e))?;
        session = outcome.session;
        clock += 2;
    }
    Ok(session)
}

fn placeholder_session(id: &str, product: Product, seed: u64) -> Session {
    Session {
        id: id.to_string(),
        product,
        utterances: Vec::new(),
        decisions: Vec::new(),
        seller_offers: Vec::new(),
        buyer_offers: Vec::new(),
        status: SessionStatus::Open,
        deal_price: None,
        raw_deal_price: None,
        rng_seed: seed,
        t_max: crate::domain::DEFAULT_T_MAX,
        currency: "$".to_string(),
    }
}

/// Seed for episode `index`; shared by every label so ablations face the
/// same buyers.
pub fn episode_seed(base_seed: u64, index: u64) -> u64 {
    base_seed.wrapping_add(index)
}

/// Runs `n_episodes` per label. Episode `i` uses seed `base_seed + i` for
/// its product, buyer and session under every label.
pub fn run_batch(
    configs: &[LabeledConfig],
    profiles: &ProfileDistribution,
    n_episodes: u64,
    base_seed: u64,
) -> Result<BatchOutput, HarnessError> {
    if n_episodes == 0 {
        return Err(HarnessError::NoEpisodes);
    }
    if configs.is_empty() {
        return Err(HarnessError::NoLabels);
    }
    profiles.validate()?;
    let mut seen = std::collections::BTreeSet::new();
    let mut engines = Vec::with_capacity(configs.len());
    for c in configs {
        if !seen.insert(c.label.clone()) {
            return Err(HarnessError::DuplicateLabel(c.label.clone()));
        }
        let engine = Engine::new(c.engine.clone()).map_err(|source| HarnessError::Config {
            label: c.label.clone(),
            source,
        })?;
        engines.push(engine);
    }
    let templates = BuyerTemplates::default();

    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| (0..n_episodes).map(move |i| (c, i)))
        .collect();
    let transcripts: Vec<TranscriptRecord> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let label = &configs[c].label;
            let seed = episode_seed(base_seed, i);
            let setup = profiles.sample(seed, i);
            let session_id = format!("{label}-{i:06}");
            let session_seed = derive_seed(seed, 0, Stream::Session);
            let played = catch_unwind(AssertUnwindSafe(|| {
                let engine = engines[c].fork().map_err(|e| {
                    (placeholder_session(&session_id, setup.product.clone(), session_seed), e)
                })?;
                run_episode(
                    &engine,
                    setup.product.clone(),
                    &setup.profile,
                    session_id.clone(),
                    session_seed,
                    &templates,
                )
            }));
            let (session, error) = match played {
                Ok(Ok(session)) => (session, None),
                Ok(Err((session, e))) => {
                    tracing::error!(label = %label, episode = i, error = %e, "episode failed");
                    (session, Some(e.to_string()))
                }
                Err(panic) => {
                    let msg = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".to_string());
                    tracing::error!(label = %label, episode = i, panic = %msg, "episode panicked");
                    (
                        placeholder_session(&session_id, setup.product.clone(), session_seed),
                        Some(format!("panic: {msg}")),
                    )
                }
            };
            TranscriptRecord {
                config_label: label.clone(),
                episode: i,
                buyer_profile: setup.profile,
                error,
                session,
            }
        })
        .collect();
    let reports = reports_from_transcripts(&transcripts);
    Ok(BatchOutput {
        reports,
        transcripts,
    })
}

/// Recomputes every report from transcripts, grouped by label in first-seen
/// order with episodes in file order.
pub fn reports_from_transcripts(transcripts: &[TranscriptRecord]) -> Vec<BatchReport> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<EpisodeReport>> = BTreeMap::new();
    for t in transcripts {
        let entry = grouped.entry(t.config_label.as_str()).or_insert_with(|| {
            order.push(t.config_label.as_str());
            Vec::new()
        });
        let mut report = EpisodeReport::from_session(&t.config_label, &t.session);
        if t.error.is_some() {
            report.success = false;
            report.deal_price = None;
            report.sl_ratio = None;
        }
        entry.push(report);
    }
    order
        .into_iter()
        .map(|label| BatchReport::aggregate(label, grouped.remove(label).unwrap_or_default()))
        .collect()
}

pub fn report_json(reports: &[BatchReport]) -> Result<String, HarnessError> {
    let mut text = serde_json::to_string_pretty(&ReportFile {
        reports: reports.to_vec(),
    })?;
    text.push('\n');
    Ok(text)
}

pub fn report_csv(reports: &[BatchReport]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config_label", "episodes", "AT", "SR", "SL_mean"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        w.write_record([
            r.config_label.clone(),
            r.episode_count.to_string(),
            opt(r.at),
            r.sr.to_string(),
            opt(r.sl_mean),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_transcripts(path: &Path, transcripts: &[TranscriptRecord]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    for t in transcripts {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptRecord>, HarnessError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| HarnessError::Transcript {
            line: n + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes `transcripts.jsonl`, `report.json` and `report.csv` into `dir`.
pub fn write_batch(dir: &Path, output: &BatchOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_transcripts(&dir.join("transcripts.jsonl"), &output.transcripts)?;
    let json = dir.join("report.json");
    std::fs::write(&json, report_json(&output.reports)?).map_err(io_err(&json))?;
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, report_csv(&output.reports)?).map_err(io_err(&csv_path))?;
    Ok(())
}

/// A self-play dialogue annotated with the moves that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDialogue {
    pub product: Product,
    pub status: SessionStatus,
    pub deal_price: Option<Money>,
    pub turns: Vec<SynthTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTurn {
    pub speaker: Speaker,
    pub text: String,
    /// Seller offers standing when this line was said.
    pub seller_offers_before: Vec<Money>,
    /// Buyer lines: the price the buyer meant.
    pub gold_offer: Option<Money>,
    /// Agent lines: the chosen action and quoted price.
    pub gold_action: Option<Action>,
    pub gold_price: Option<Money>,
}

/// `n` annotated dialogues from the full rule-based agent against sampled
/// buyers.
pub fn synth_corpus(n: usize, seed: u64) -> Vec<SynthDialogue> {
    let engine = Engine::new(EngineConfig::default()).expect("default engine config is valid");
    let profiles = ProfileDistribution::default();
    let templates = BuyerTemplates::default();
    (0..n as u64)
        .map(|i| {
            let episode_seed = episode_seed(seed, i);
            let setup = profiles.sample(episode_seed, i);
            let mut session = engine
                .new_session(format!("synth-{i:06}"), setup.product.clone(), derive_seed(episode_seed, 0, Stream::Session))
                .expect("sampled products are valid");
            let mut turns = Vec::new();
            let mut clock = 0;
            while session.is_open() {
                let step = buyer_step(&setup.profile, &session, &templates);
                let Some(text) = step.text().map(str::to_string) else {
                    session = session.expire(clock).expect("open session expires");
                    break;
                };
                let gold_offer = match &step {
                    BuyerMove::Offer { price, .. } => Some(*price),
                    _ => None,
                };
                let before = session.seller_offers.clone();
                let outcome = engine
                    .respond(&session, &text, clock)
                    .expect("rule engine turns do not fail");
                turns.push(SynthTurn {
                    speaker: Speaker::Buyer,
                    text,
                    seller_offers_before: before.clone(),
                    gold_offer,
                    gold_action: None,
                    gold_price: None,
                });
                if let (Some(reply), Some(decision)) = (outcome.reply, outcome.decision) {
                    turns.push(SynthTurn {
                        speaker: Speaker::SellerAgent,
                        text: reply,
                        seller_offers_before: before,
                        gold_offer: None,
                        gold_action: Some(decision.action),
                        gold_price: decision.seller_price,
                    });
                }
                session = outcome.session;
                clock += 2;
            }
            SynthDialogue {
                product: session.product.clone(),
                status: session.status,
                deal_price: session.deal_price,
                turns,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(turns: u32, success: bool) -> EpisodeReport {
        EpisodeReport {
            session_id: String::new(),
            config_label: "x".into(),
            turns,
            success,
            deal_price: success.then_some(Money::from_major(90)),
            sl_ratio: success.then_some(0.5),
        }
    }

    #[test]
    fn sl_examples() {
        let m = Money::from_major;
        assert_eq!(sl_ratio(m(80), m(100), m(80)).unwrap(), 0.0);
        assert_eq!(sl_ratio(m(100), m(100), m(80)).unwrap(), 1.0);
        assert_eq!(sl_ratio(m(90), m(100), m(80)).unwrap(), 0.5);
        assert_eq!(sl_ratio(m(70), m(100), m(80)).unwrap(), 0.0);
        assert_eq!(sl_ratio(m(120), m(100), m(80)).unwrap(), 1.0);
        assert_eq!(sl_ratio(m(100), m(100), m(100)).unwrap(), 1.0);
        assert_eq!(sl_ratio(m(99), m(100), m(100)).unwrap(), 0.0);
        assert!(matches!(
            sl_ratio(m(90), m(80), m(100)),
            Err(HarnessError::InvalidPrices { .. })
        ));
    }

    #[test]
    fn aggregate_examples() {
        let r = BatchReport::aggregate("x", vec![ep(4, true), ep(6, true), ep(5, true)]);
        assert_eq!(r.at, Some(5.0));
        let r = BatchReport::aggregate("x", vec![ep(4, true), ep(6, false), ep(5, true), ep(10, false)]);
        assert_eq!(r.sr, 0.5);
        let r = BatchReport::aggregate("x", vec![ep(10, false), ep(10, false)]);
        assert_eq!((r.at, r.sl_mean, r.sr), (None, None, 0.0));
        assert_eq!(r.at_all_episodes, Some(10.0));
    }

    #[test]
    fn ablation_rows() {
        let rows = ablation_configs(&EngineConfig::default());
        let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ABLATION_LABELS);
        let base = &rows[0].engine;
        assert!(!base.use_price_extractor && !base.planner.use_actions);
        assert!(!base.planner.use_skills && !base.planner.use_bidirectional);
        let all = &rows[5].engine;
        assert!(all.use_price_extractor && all.planner.use_actions);
        assert!(all.planner.use_skills && all.planner.use_bidirectional);
        assert!(rows[2].engine.planner.use_actions && !rows[2].engine.planner.use_skills);
    }

    #[test]
    fn csv_layout() {
        let r = BatchReport::aggregate("all", vec![ep(4, true), ep(6, false)]);
        let text = report_csv(&[r]).unwrap();
        assert_eq!(text, "config_label,episodes,AT,SR,SL_mean\nall,2,4,0.5,0.5\n");
    }

    #[test]
    fn small_batch_round_trips() {
        let out = run_batch(&BatchConfig::default().configs, &ProfileDistribution::default(), 5, 3).unwrap();
        assert_eq!(out.reports.len(), 6);
        assert_eq!(out.transcripts.len(), 30);
        assert_eq!(reports_from_transcripts(&out.transcripts), out.reports);
        for t in &out.transcripts {
            assert!(t.error.is_none(), "{:?}", t.error);
            assert!(t.session.validate().is_empty());
        }
    }
}
