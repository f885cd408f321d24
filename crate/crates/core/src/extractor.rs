//! Buyer price extraction.
//!
//! Two stages: [`parse_expressions`] is a purely lexical pass that finds
//! every price-like expression in one utterance, and [`resolve`] turns those
//! expressions into a single buyer offer using the product and the seller's
//! standing offer. Every arithmetic step is written to the audit trail.
//!
//! Supported surface forms:
//! - absolute: `$200`, `200`, `1,250.50`, `1.2k`, `two hundred fifty`, `fifty bucks`
//! - percent discount: `20%`, `20 percent off`, `a discount of 15%`
//! - amount off: `$30 off`, `30 bucks less`, `knock off 25`, `a discount of 40`
//!
//! Written numerals cover units, teens, tens, `hundred` and `thousand`.
//! Bare unit words (`one`, `two`) are ignored unless they scale a
//! `hundred`/`thousand`; they are nearly always quantities.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendRequest, ChatMessage};
use crate::domain::{Product, Speaker, Utterance};
use crate::money::{Money, MINOR_PER_MAJOR};

/// Byte range into the source utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExpressionKind {
    Absolute { amount: Money },
    /// Discount in basis points (20% = 2000).
    PercentDiscount { basis_points: i64 },
    AmountOff { amount: Money },
}

/// One lexical price expression with its location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExpression {
    pub kind: ExpressionKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionKind {
    Absolute,
    RelativePercentDiscount,
    RelativeAmountOff,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceExtraction {
    pub price: Option<Money>,
    pub kind: ExtractionKind,
    pub base_used: Option<Money>,
    pub audit: Vec<String>,
    pub source_span: Option<Span>,
}

impl PriceExtraction {
    pub fn none(audit: Vec<String>) -> Self {
        PriceExtraction {
            price: None,
            kind: ExtractionKind::None,
            base_used: None,
            audit,
            source_span: None,
        }
    }
}

/// Plausibility window for resolved prices, as fractions of list price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub min_list_ratio: f64,
    pub max_list_ratio: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            min_list_ratio: 0.01,
            max_list_ratio: 10.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("ambiguous price expression: {first} vs {second}")]
    AmbiguousExpression { first: Money, second: Money },
    #[error("extraction needs a non-empty history ending with a buyer utterance")]
    NotBuyerTurn,
    #[error("model extraction failed: {0}")]
    Backend(String),
}

const CURRENCY_WORDS: &[&str] = &[
    "dollar", "dollars", "buck", "bucks", "usd", "yuan", "rmb", "kuai", "euro", "euros", "quid",
    "pounds",
];

const OFF_CUES: &[&str] = &["off", "less", "cheaper", "lower", "discount", "down"];

/// Words that mark a numeral as a quantity, duration or model number rather than a price.
const UNIT_WORDS: &[&str] = &[
    "day", "days", "week", "weeks", "month", "months", "year", "years", "yr", "yrs", "hour",
    "hours", "hr", "hrs", "minute", "minutes", "min", "mins", "second", "seconds", "sec", "secs",
    "pm", "am", "piece", "pieces", "pcs", "item", "items", "times", "time", "people", "person",
    "km", "kg", "g", "gb", "tb", "mb", "mm", "cm", "inch", "inches", "ft", "feet",
    "miles", "mile", "lbs", "lb", "pounds-weight", "x", "of", "units", "unit", "pairs", "pair",
    "sets", "set", "stars", "star", "percentile", "st", "nd", "rd", "th", "more", "left",
];

const UNITS: &[(&str, i64)] = &[
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
];

const TEENS_AND_TENS: &[(&str, i64)] = &[
    ("ten", 10),
    ("eleven", 11),
    ("twelve", 12),
    ("thirteen", 13),
    ("fourteen", 14),
    ("fifteen", 15),
    ("sixteen", 16),
    ("seventeen", 17),
    ("eighteen", 18),
    ("nineteen", 19),
    ("twenty", 20),
    ("thirty", 30),
    ("forty", 40),
    ("fifty", 50),
    ("sixty", 60),
    ("seventy", 70),
    ("eighty", 80),
    ("ninety", 90),
];

#[derive(Debug, Clone)]
enum TokKind {
    /// A numeral in hundredths (two implied decimals), with whether it was
    /// written with a currency symbol.
    Num { hundredths: i64, currency: bool },
    Word(String),
    Percent,
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    span: Span,
}

fn lexer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?P<num>(?:(?P<cur>[$¥€£])\s?)?(?P<digits>\d[\d,]*(?:\.\d+)?|\.\d+)(?P<k>[kK])?)|(?P<word>[A-Za-z]+(?:'[A-Za-z]+)?)|(?P<pct>%)")
            .expect("lexer regex")
    })
}

/// Parses a decimal numeral into hundredths. Rejects bad digit grouping
/// and more than two decimals.
fn parse_hundredths(digits: &str) -> Option<i64> {
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let int_value: i64 = if int_part.is_empty() {
        0
    } else if int_part.contains(',') {
        let mut groups = int_part.split(',');
        let head = groups.next()?;
        if head.is_empty() || head.len() > 3 {
            return None;
        }
        let mut joined = head.to_string();
        for g in groups {
            if g.len() != 3 {
                return None;
            }
            joined.push_str(g);
        }
        joined.parse().ok()?
    } else {
        int_part.parse().ok()?
    };
    let frac_value = match frac_part {
        None => 0,
        Some(f) if f.is_empty() || f.len() > 2 => return None,
        Some(f) if f.len() == 1 => f.parse::<i64>().ok()? * 10,
        Some(f) => f.parse::<i64>().ok()?,
    };
    int_value.checked_mul(100)?.checked_add(frac_value)
}

fn tokenize(text: &str) -> Vec<Tok> {
    let mut toks = Vec::new();
    for caps in lexer().captures_iter(text) {
        if let Some(m) = caps.name("num") {
            let before = text[..m.start()].chars().next_back();
            let after = text[m.end()..].chars().next();
            // Glued to letters: model numbers, ordinals, sizes ("iphone12", "2nd", "12gb").
            if before.is_some_and(|c| c.is_alphabetic()) || after.is_some_and(|c| c.is_alphabetic()) {
                continue;
            }
            let mut digits = caps["digits"].to_string();
            let mut end = m.end();
            while digits.ends_with(',') {
                digits.pop();
                end -= 1;
            }
            let Some(mut hundredths) = parse_hundredths(&digits) else {
                continue;
            };
            if caps.name("k").is_some() {
                hundredths *= 1000;
            }
            toks.push(Tok {
                kind: TokKind::Num {
                    hundredths,
                    currency: caps.name("cur").is_some(),
                },
                span: Span {
                    start: m.start(),
                    end,
                },
            });
        } else if let Some(m) = caps.name("word") {
            toks.push(Tok {
                kind: TokKind::Word(m.as_str().to_lowercase()),
                span: Span {
                    start: m.start(),
                    end: m.end(),
                },
            });
        } else if let Some(m) = caps.name("pct") {
            toks.push(Tok {
                kind: TokKind::Percent,
                span: Span {
                    start: m.start(),
                    end: m.end(),
                },
            });
        }
    }
    merge_written_numbers(toks, text)
}

fn lookup(table: &[(&str, i64)], word: &str) -> Option<i64> {
    table.iter().find(|(w, _)| *w == word).map(|(_, v)| *v)
}

fn number_word(word: &str) -> bool {
    lookup(UNITS, word).is_some()
        || lookup(TEENS_AND_TENS, word).is_some()
        || word == "hundred"
        || word == "thousand"
}

/// Collapses runs like `two hundred fifty` into numeral tokens.
fn merge_written_numbers(toks: Vec<Tok>, text: &str) -> Vec<Tok> {
    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        let TokKind::Word(w) = &toks[i].kind else {
            out.push(toks[i].clone());
            i += 1;
            continue;
        };
        if !number_word(w) {
            out.push(toks[i].clone());
            i += 1;
            continue;
        }
        let mut j = i;
        let mut total = 0i64;
        let mut current = 0i64;
        let mut scaled = false;
        let mut has_tens = false;
        let mut last_end = toks[i].span.end;
        while j < toks.len() {
            let TokKind::Word(word) = &toks[j].kind else { break };
            // Words must be adjacent (space or hyphen only).
            if j > i && !text[last_end..toks[j].span.start].chars().all(|c| c == ' ' || c == '-') {
                break;
            }
            if word == "and" {
                if j > i && j + 1 < toks.len() {
                    if let TokKind::Word(next) = &toks[j + 1].kind {
                        if number_word(next) && scaled {
                            last_end = toks[j].span.end;
                            j += 1;
                            continue;
                        }
                    }
                }
                break;
            }
            if let Some(v) = lookup(UNITS, word) {
                current += v;
            } else if let Some(v) = lookup(TEENS_AND_TENS, word) {
                current += v;
                has_tens = true;
            } else if word == "hundred" {
                current = current.max(1) * 100;
                scaled = true;
            } else if word == "thousand" {
                total += current.max(1) * 1000;
                current = 0;
                scaled = true;
            } else {
                break;
            }
            last_end = toks[j].span.end;
            j += 1;
        }
        if scaled || has_tens {
            out.push(Tok {
                kind: TokKind::Num {
                    hundredths: (total + current) * 100,
                    currency: false,
                },
                span: Span {
                    start: toks[i].span.start,
                    end: last_end,
                },
            });
        } else {
            out.extend(toks[i..j].iter().cloned());
        }
        i = j.max(i + 1);
    }
    out
}

fn word_at(toks: &[Tok], idx: usize) -> Option<&str> {
    match toks.get(idx).map(|t| &t.kind) {
        Some(TokKind::Word(w)) => Some(w.as_str()),
        _ => None,
    }
}

/// Lexical pass: every candidate price expression, left to right.
pub fn parse_expressions(text: &str) -> Vec<RawExpression> {
    let toks = tokenize(text);
    let mut out = Vec::new();
    for (i, tok) in toks.iter().enumerate() {
        let TokKind::Num {
            hundredths,
            currency,
        } = tok.kind
        else {
            continue;
        };
        let mut span = tok.span;
        let mut next = i + 1;

        let is_percent = match toks.get(next).map(|t| &t.kind) {
            Some(TokKind::Percent) => {
                span.end = toks[next].span.end;
                next += 1;
                true
            }
            Some(TokKind::Word(w)) if w == "percent" || w == "pct" => {
                span.end = toks[next].span.end;
                next += 1;
                true
            }
            Some(TokKind::Word(w)) if w == "per" && word_at(&toks, next + 1) == Some("cent") => {
                span.end = toks[next + 1].span.end;
                next += 2;
                true
            }
            _ => false,
        };

        if is_percent {
            if currency || hundredths <= 0 || hundredths >= 10_000 {
                continue;
            }
            out.push(RawExpression {
                kind: ExpressionKind::PercentDiscount {
                    basis_points: hundredths,
                },
                span,
            });
            continue;
        }

        while word_at(&toks, next).is_some_and(|w| CURRENCY_WORDS.contains(&w)) {
            next += 1;
        }
        let following = word_at(&toks, next);
        if !currency && following.is_some_and(|w| UNIT_WORDS.contains(&w)) {
            continue;
        }
        let prev = i.checked_sub(1).and_then(|p| word_at(&toks, p));
        let prev2 = i.checked_sub(2).and_then(|p| word_at(&toks, p));
        let off_after = following.is_some_and(|w| OFF_CUES.contains(&w));
        let off_before = matches!(
            (prev2, prev),
            (Some("discount"), Some("of"))
                | (Some("knock"), Some("off"))
                | (Some("take"), Some("off"))
                | (_, Some("minus"))
        );
        let amount = Money::from_minor(hundredths * MINOR_PER_MAJOR / 100);
        let kind = if off_after || off_before {
            ExpressionKind::AmountOff { amount }
        } else {
            ExpressionKind::Absolute { amount }
        };
        out.push(RawExpression { kind, span });
    }
    out
}

struct Candidate {
    price: Money,
    kind: ExtractionKind,
    base: Option<Money>,
    span: Span,
    steps: Vec<String>,
}

/// Picks one buyer offer from the expressions of one utterance.
///
/// Relative expressions resolve against the latest seller offer, else the
/// list price. Candidates outside the plausibility window are dropped; the
/// last surviving expression in text order wins.
pub fn resolve(
    expressions: &[RawExpression],
    product: &Product,
    seller_offers: &[Money],
    config: &ExtractorConfig,
) -> Result<PriceExtraction, ExtractError> {
    let (base, base_label) = match seller_offers.last() {
        Some(offer) => (*offer, "latest seller offer"),
        None => (product.list_price, "list price"),
    };
    let list = product.list_price.minor() as f64;
    let min = config.min_list_ratio * list;
    let max = config.max_list_ratio * list;

    let mut audit = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    for expr in expressions {
        let candidate = match expr.kind {
            ExpressionKind::Absolute { amount } => Candidate {
                price: amount,
                kind: ExtractionKind::Absolute,
                base: None,
                span: expr.span,
                steps: vec![format!(
                    "absolute offer {} at bytes {}..{}",
                    amount, expr.span.start, expr.span.end
                )],
            },
            ExpressionKind::PercentDiscount { basis_points } => {
                let price = base.discounted_by_bp(basis_points);
                Candidate {
                    price,
                    kind: ExtractionKind::RelativePercentDiscount,
                    base: Some(base),
                    span: expr.span,
                    steps: vec![
                        format!("base = {base_label} {base}"),
                        format!(
                            "{} x (1 - {}/100) = {}",
                            base,
                            Money::from_minor(basis_points).amount_string(),
                            price
                        ),
                    ],
                }
            }
            ExpressionKind::AmountOff { amount } => {
                let price = base - amount;
                Candidate {
                    price,
                    kind: ExtractionKind::RelativeAmountOff,
                    base: Some(base),
                    span: expr.span,
                    steps: vec![
                        format!("base = {base_label} {base}"),
                        format!("{base} - {amount} = {price}"),
                    ],
                }
            }
        };
        let value = candidate.price.minor() as f64;
        if candidate.price <= Money::ZERO || value < min || value > max {
            audit.extend(candidate.steps);
            audit.push(format!(
                "dropped {}: outside plausible range [{:.2}, {:.2}]",
                candidate.price,
                min / 100.0,
                max / 100.0
            ));
            continue;
        }
        candidates.push(candidate);
    }

    candidates.sort_by_key(|c| c.span.start);
    let Some(chosen) = candidates.pop() else {
        audit.push("no price expression".to_string());
        return Ok(PriceExtraction::none(audit));
    };
    if let Some(prev) = candidates.last() {
        if prev.span.start == chosen.span.start && prev.price != chosen.price {
            return Err(ExtractError::AmbiguousExpression {
                first: prev.price,
                second: chosen.price,
            });
        }
    }
    for dropped in &candidates {
        audit.push(format!(
            "superseded {} by later expression",
            dropped.price
        ));
    }
    audit.extend(chosen.steps);
    audit.push(format!("buyer offer = {}", chosen.price));
    Ok(PriceExtraction {
        price: Some(chosen.price),
        kind: chosen.kind,
        base_used: chosen.base,
        audit,
        source_span: Some(chosen.span),
    })
}

/// Extracts the offer implied by the latest buyer utterance.
pub fn extract(
    product: &Product,
    history: &[Utterance],
    seller_offers: &[Money],
    config: &ExtractorConfig,
) -> Result<PriceExtraction, ExtractError> {
    let last = history.last().ok_or(ExtractError::NotBuyerTurn)?;
    if last.speaker != Speaker::Buyer {
        return Err(ExtractError::NotBuyerTurn);
    }
    resolve(&parse_expressions(&last.text), product, seller_offers, config)
}

/// Model-backed extractor. The model is asked for a computation trace and a
/// final `PRICE:` line; the trace is kept verbatim as the audit.
pub struct ModelExtractor<'a> {
    pub backend: &'a dyn Backend,
    pub temperature: f64,
}

impl ModelExtractor<'_> {
    pub fn build_prompt(product: &Product, history: &[Utterance], seller_offers: &[Money]) -> String {
        let mut prompt = format!(
            "Product: {}\nList price: {}\n",
            product.title,
            product.list_price.amount_string()
        );
        match seller_offers.last() {
            Some(o) => prompt.push_str(&format!("Latest seller offer: {}\n", o.amount_string())),
            None => prompt.push_str("Latest seller offer: none\n"),
        }
        prompt.push_str("Conversation:\n");
        for u in history {
            let who = match u.speaker {
                Speaker::Buyer => "Buyer",
                Speaker::SellerAgent => "Seller",
            };
            prompt.push_str(&format!("{who}: {}\n", u.text));
        }
        prompt.push_str(
            "What price is the buyer offering in their latest message? Show each computation step \
             on its own line starting with STEP:, then finish with PRICE: <amount> or PRICE: none, \
             and KIND: absolute | relative_percent_discount | relative_amount_off | none.\n",
        );
        prompt
    }

    pub fn extract(
        &self,
        product: &Product,
        history: &[Utterance],
        seller_offers: &[Money],
    ) -> Result<PriceExtraction, ExtractError> {
        if history.last().map(|u| u.speaker) != Some(Speaker::Buyer) {
            return Err(ExtractError::NotBuyerTurn);
        }
        let request = BackendRequest::new(vec![ChatMessage::user(Self::build_prompt(
            product,
            history,
            seller_offers,
        ))])
        .with_temperature(self.temperature);
        let reply = self
            .backend
            .complete(&request)
            .map_err(|e| ExtractError::Backend(e.to_string()))?;
        parse_model_reply(&reply.text, product, seller_offers)
    }
}

/// Decodes a model extraction reply into the common extraction shape.
pub fn parse_model_reply(
    reply: &str,
    product: &Product,
    seller_offers: &[Money],
) -> Result<PriceExtraction, ExtractError> {
    let audit: Vec<String> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let mut prices: Vec<Option<Money>> = Vec::new();
    let mut kind = None;
    for line in &audit {
        let upper = line.to_ascii_uppercase();
        if let Some(rest) = upper.strip_prefix("PRICE:") {
            let rest = rest.trim();
            if rest.eq_ignore_ascii_case("none") {
                prices.push(None);
            } else {
                let amount = parse_expressions(rest).into_iter().find_map(|e| match e.kind {
                    ExpressionKind::Absolute { amount } => Some(amount),
                    _ => None,
                });
                prices.push(amount);
            }
        } else if let Some(rest) = upper.strip_prefix("KIND:") {
            kind = Some(match rest.trim() {
                "RELATIVE_PERCENT_DISCOUNT" => ExtractionKind::RelativePercentDiscount,
                "RELATIVE_AMOUNT_OFF" => ExtractionKind::RelativeAmountOff,
                "NONE" => ExtractionKind::None,
                _ => ExtractionKind::Absolute,
            });
        }
    }
    let distinct: Vec<Money> = {
        let mut v: Vec<Money> = prices.iter().flatten().copied().collect();
        v.sort();
        v.dedup();
        v
    };
    if distinct.len() > 1 {
        return Err(ExtractError::AmbiguousExpression {
            first: distinct[0],
            second: distinct[1],
        });
    }
    let Some(price) = distinct.first().copied().filter(|p| *p > Money::ZERO) else {
        return Ok(PriceExtraction::none(audit));
    };
    let kind = match kind {
        None | Some(ExtractionKind::None) => ExtractionKind::Absolute,
        Some(k) => k,
    };
    let base_used = match kind {
        ExtractionKind::RelativePercentDiscount | ExtractionKind::RelativeAmountOff => {
            Some(seller_offers.last().copied().unwrap_or(product.list_price))
        }
        _ => None,
    };
    Ok(PriceExtraction {
        price: Some(price),
        kind,
        base_used,
        audit,
        source_span: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product() -> Product {
        Product {
            id: "p".into(),
            title: "Camera".into(),
            description: String::new(),
            category: String::new(),
            list_price: Money::from_major(250),
            bottom_price: Money::from_major(200),
        }
    }

    fn buyer(text: &str) -> Vec<Utterance> {
        vec![Utterance {
            speaker: Speaker::Buyer,
            text: text.into(),
            turn: 0,
            timestamp: 0,
        }]
    }

    fn abs(major: i64) -> ExpressionKind {
        ExpressionKind::Absolute {
            amount: Money::from_major(major),
        }
    }

    fn kinds(text: &str) -> Vec<ExpressionKind> {
        parse_expressions(text).into_iter().map(|e| e.kind).collect()
    }

    #[test]
    fn absolute_dollar_offer() {
        let x = extract(&product(), &buyer("Is $200 OK?"), &[], &Default::default()).unwrap();
        assert_eq!(x.price, Some(Money::from_major(200)));
        assert_eq!(x.kind, ExtractionKind::Absolute);
        assert_eq!(x.source_span.unwrap().slice("Is $200 OK?"), "$200");
    }

    #[test]
    fn percent_discount_against_list_price() {
        let x = extract(
            &product(),
            &buyer("How about a 20% discount?"),
            &[],
            &Default::default(),
        )
        .unwrap();
        assert_eq!(x.price, Some(Money::from_major(200)));
        assert_eq!(x.kind, ExtractionKind::RelativePercentDiscount);
        assert_eq!(x.base_used, Some(Money::from_major(250)));
        assert!(!x.audit.is_empty());
    }

    #[test]
    fn no_price_question() {
        let x = extract(
            &product(),
            &buyer("Does it come with the charger?"),
            &[],
            &Default::default(),
        )
        .unwrap();
        assert_eq!(x, PriceExtraction::none(x.audit.clone()));
    }

    #[test]
    fn lexical_pass_examples() {
        assert_eq!(kinds("150 or 160, your pick"), vec![abs(150), abs(160)]);
        assert_eq!(
            kinds("knock 10% off and I'll pay now"),
            vec![ExpressionKind::PercentDiscount { basis_points: 1000 }]
        );
        assert!(parse_expressions("").is_empty());
    }

    #[test]
    fn lexical_forms() {
        assert_eq!(kinds("two hundred fifty?"), vec![abs(250)]);
        assert_eq!(kinds("twenty-five bucks"), vec![abs(25)]);
        assert_eq!(kinds("$1,250.50 final"), vec![ExpressionKind::Absolute { amount: Money::from_minor(125050) }]);
        assert_eq!(kinds("1.2k"), vec![abs(1200)]);
        assert_eq!(
            kinds("take $30 off"),
            vec![ExpressionKind::AmountOff { amount: Money::from_major(30) }]
        );
        assert_eq!(
            kinds("knock off 25 and it's a deal"),
            vec![ExpressionKind::AmountOff { amount: Money::from_major(25) }]
        );
        assert_eq!(
            kinds("twelve and a half percent"),
            vec![abs(12)],
            "'and a half' is not part of the lexicon"
        );
        assert_eq!(
            kinds("12.5% off"),
            vec![ExpressionKind::PercentDiscount { basis_points: 1250 }]
        );
        assert!(kinds("I can pick it up in 2 days").is_empty());
        assert!(kinds("is the iphone12 unlocked, 64gb?").is_empty());
        assert!(kinds("one more question").is_empty());
        assert!(kinds("1,23").is_empty());
        assert!(kinds("100% sure").is_empty());
    }

    #[test]
    fn last_expression_wins() {
        let exprs = parse_expressions("150 or 160, your pick");
        let x = resolve(&exprs, &product(), &[], &Default::default()).unwrap();
        assert_eq!(x.price, Some(Money::from_major(160)));
    }

    #[test]
    fn percent_uses_latest_seller_offer() {
        let exprs = parse_expressions("knock 10% off and I'll pay now");
        let x = resolve(&exprs, &product(), &[Money::from_major(220)], &Default::default()).unwrap();
        assert_eq!(x.price, Some(Money::from_major(198)));
        assert_eq!(x.base_used, Some(Money::from_major(220)));
    }

    #[test]
    fn implausible_prices_are_dropped() {
        let x = resolve(
            &[RawExpression {
                kind: abs(1),
                span: Span { start: 0, end: 1 },
            }],
            &product(),
            &[],
            &Default::default(),
        )
        .unwrap();
        assert_eq!(x.kind, ExtractionKind::None);
        assert_eq!(x.price, None);
    }

    #[test]
    fn same_span_conflict_is_ambiguous() {
        let span = Span { start: 0, end: 3 };
        let err = resolve(
            &[
                RawExpression { kind: abs(150), span },
                RawExpression { kind: abs(160), span },
            ],
            &product(),
            &[],
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ExtractError::AmbiguousExpression { .. }));
    }

    #[test]
    fn extract_requires_buyer_turn() {
        let mut h = buyer("hi");
        h[0].speaker = Speaker::SellerAgent;
        assert_eq!(
            extract(&product(), &h, &[], &Default::default()),
            Err(ExtractError::NotBuyerTurn)
        );
        assert_eq!(
            extract(&product(), &[], &[], &Default::default()),
            Err(ExtractError::NotBuyerTurn)
        );
    }

    #[test]
    fn model_reply_parsing() {
        let x = parse_model_reply(
            "STEP: base is 250\nSTEP: 250 * 0.8 = 200\nPRICE: 200\nKIND: relative_percent_discount",
            &product(),
            &[],
        )
        .unwrap();
        assert_eq!(x.price, Some(Money::from_major(200)));
        assert_eq!(x.kind, ExtractionKind::RelativePercentDiscount);
        assert_eq!(x.audit.len(), 4);
        assert!(matches!(
            parse_model_reply("PRICE: 200\nPRICE: 210", &product(), &[]),
            Err(ExtractError::AmbiguousExpression { .. })
        ));
        assert_eq!(
            parse_model_reply("PRICE: none", &product(), &[]).unwrap().kind,
            ExtractionKind::None
        );
    }
}
