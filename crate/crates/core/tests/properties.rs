use bargain_core::buyer::{willingness, BuyerProfile};
use bargain_core::domain::{Product, Session, SessionStatus};
use bargain_core::engine::{Engine, EngineConfig};
use bargain_core::extractor::{parse_expressions, ExpressionKind};
use bargain_core::harness::sl_ratio;
use bargain_core::money::Money;
use bargain_core::rng::{stream, Stream};
use bargain_core::sampler::{sample_price, Bounds, Rounding, SamplerConfig};
use proptest::prelude::*;

fn product(list: i64, bottom: i64) -> Product {
    Product {
        id: "p".into(),
        title: "Desk lamp".into(),
        description: String::new(),
        category: String::new(),
        list_price: Money::from_minor(list),
        bottom_price: Money::from_minor(bottom),
    }
}

proptest! {
    #[test]
    fn discount_stays_between_zero_and_price(price in 0i64..10_000_000, bp in 0i64..=10_000, more in 0i64..=10_000) {
        let p = Money::from_minor(price);
        let d = p.discounted_by_bp(bp);
        prop_assert!(d >= Money::ZERO && d <= p);
        let deeper = p.discounted_by_bp(bp.max(more));
        prop_assert!(deeper <= d);
    }

    #[test]
    fn rendered_prices_parse_back(minor in 1i64..100_000_000) {
        let p = Money::from_minor(minor);
        let text = format!("I could do {} today.", p.render("$"));
        let exprs = parse_expressions(&text);
        prop_assert_eq!(exprs.len(), 1);
        prop_assert_eq!(exprs[0].kind, ExpressionKind::Absolute { amount: p });
    }

    #[test]
    fn willingness_rises_to_walkaway(
        target in 1_000i64..100_000,
        gap in 0i64..100_000,
        rate in 0.0f64..1.0,
        k in 0u32..40,
    ) {
        let profile = BuyerProfile {
            target_price: Money::from_minor(target),
            walkaway_price: Money::from_minor(target + gap),
            patience: 10,
            concession_rate: rate,
            question_prob: 0.0,
            greeting_prob: 0.0,
            rng_seed: 0,
        };
        let now = willingness(&profile, k);
        let next = willingness(&profile, k + 1);
        prop_assert!(now <= next);
        prop_assert!(now >= profile.target_price && next <= profile.walkaway_price);
    }

    #[test]
    fn sl_ratio_is_a_fraction(deal in 0i64..1_000_000, lowest in 0i64..500_000, width in 0i64..500_000) {
        let r = sl_ratio(Money::from_minor(deal), Money::from_minor(lowest + width), Money::from_minor(lowest)).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn sampled_prices_stay_in_bounds(
        lower in 100i64..1_000_000,
        width in 0i64..1_000_000,
        k in 0u32..20,
        seed in any::<u64>(),
        minor in any::<bool>(),
    ) {
        let bounds = Bounds {
            lower: Money::from_minor(lower),
            upper: Money::from_minor(lower + width),
            concession_index: k,
        };
        let config = SamplerConfig {
            rounding: if minor { Rounding::MinorUnit } else { Rounding::WholeUnit },
            ..SamplerConfig::default()
        };
        let mut rng = stream(seed, 0, Stream::Sampler);
        for _ in 0..20 {
            let p = sample_price(&bounds, &config, &mut rng);
            prop_assert!(p >= bounds.lower && p <= bounds.upper);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sessions_never_concede_below_bottom(
        list in 5_000i64..200_000,
        bottom_ratio in 0.5f64..1.0,
        offers in prop::collection::vec(0.2f64..1.3, 1..12),
        seed in any::<u64>(),
    ) {
        let bottom = (list as f64 * bottom_ratio) as i64;
        let engine = Engine::new(EngineConfig::default()).unwrap();
        let mut session: Session = engine.new_session("prop", product(list, bottom), seed).unwrap();
        for (i, ratio) in offers.iter().enumerate() {
            if session.status != SessionStatus::Open {
                break;
            }
            let offer = Money::from_minor((list as f64 * ratio) as i64).round_whole();
            let text = format!("Would you take {}?", offer.render("$"));
            session = engine.respond(&session, &text, i as u64 * 2).unwrap().session;
        }
        prop_assert!(session.validate().is_empty(), "{:?}", session.validate());
        for w in session.seller_offers.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for p in &session.seller_offers {
            prop_assert!(*p >= session.product.bottom_price);
        }
    }
}
