use bargain_core::domain::{Action, Speaker, Utterance};
use bargain_core::extractor::{extract, ExtractorConfig};
use bargain_core::harness::synth_corpus;

#[test]
fn extractor_recovers_simulated_buyer_offers() {
    let corpus = synth_corpus(200, 3);
    let mut offers = 0;
    for dialogue in &corpus {
        for turn in dialogue.turns.iter().filter(|t| t.speaker == Speaker::Buyer) {
            let history = [Utterance {
                speaker: Speaker::Buyer,
                text: turn.text.clone(),
                turn: 0,
                timestamp: 0,
            }];
            let got = extract(&dialogue.product, &history, &turn.seller_offers_before, &ExtractorConfig::default()).unwrap();
            assert_eq!(got.price, turn.gold_offer, "{:?} with offers {:?}", turn.text, turn.seller_offers_before);
            offers += usize::from(turn.gold_offer.is_some());
        }
    }
    assert!(offers > 200, "only {offers} offers");
}

#[test]
fn seller_turns_carry_consistent_gold_labels() {
    for dialogue in synth_corpus(100, 9) {
        for turn in dialogue.turns.iter().filter(|t| t.speaker == Speaker::SellerAgent) {
            let action = turn.gold_action.expect("seller turns are labelled");
            assert_eq!(turn.gold_price.is_some(), action.requires_price(), "{action:?}");
            if action == Action::Reject {
                assert_eq!(turn.gold_price, Some(dialogue.product.bottom_price));
            }
        }
    }
}
