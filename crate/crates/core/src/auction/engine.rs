//! Strict generalized second-price auction over one traffic record.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ledger::BudgetLedger;
use super::traffic::{Candidate, TrafficRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionConfig {
    /// Price per click paid by the last winner when nobody ranks below it.
    pub reserve_price: f64,
}

impl Default for AuctionConfig {
    fn default() -> Self {
        Self { reserve_price: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Winner {
    pub campaign: String,
    /// Zero-based slot.
    pub slot: usize,
    pub ecpm: f64,
    /// Second price per click.
    pub price: f64,
    pub clicked: bool,
    pub converted: bool,
    pub pcvr: f64,
    /// Amount actually deducted from the ledger (zero without a click).
    pub charged: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuctionOutcome {
    pub winners: Vec<Winner>,
}

/// Ranks eligible candidates by eCPM (ties: campaign id ascending), fills the
/// record's slots and charges clicked winners their second price, capped at
/// what the ledger still holds.
pub fn run_auction(record: &TrafficRecord, ledger: &mut BudgetLedger, cfg: &AuctionConfig) -> AuctionOutcome {
    let mut ranked: Vec<&Candidate> = record
        .candidates
        .iter()
        .filter(|c| ledger.is_eligible(&c.campaign, &record.channel))
        .collect();
    ranked.sort_by(|a, b| {
        b.ecpm()
            .partial_cmp(&a.ecpm())
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.campaign.cmp(&b.campaign))
    });

    let winners = ranked.len().min(record.slots);
    let mut outcome = AuctionOutcome {
        winners: Vec::with_capacity(winners),
    };
    for k in 0..winners {
        let c = ranked[k];
        let price = match ranked.get(k + 1) {
            Some(next) if c.pctr > 0.0 => next.ecpm() / c.pctr,
            Some(_) => 0.0,
            None => cfg.reserve_price,
        }
        .min(c.bid);
        let charged = if c.clicked {
            ledger.charge(&c.campaign, &record.channel, price)
        } else {
            0.0
        };
        outcome.winners.push(Winner {
            campaign: c.campaign.clone(),
            slot: k,
            ecpm: c.ecpm(),
            price,
            clicked: c.clicked,
            converted: c.converted,
            pcvr: c.pcvr,
            charged,
        });
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::ledger::BudgetAllocation;
    use crate::matrix::DenseMatrix;

    fn cand(campaign: &str, bid: f64, pctr: f64) -> Candidate {
        Candidate {
            campaign: campaign.into(),
            pctr,
            pcvr: 0.1,
            bid,
            clicked: true,
            converted: false,
        }
    }

    fn record(slots: usize, candidates: Vec<Candidate>) -> TrafficRecord {
        TrafficRecord {
            id: 0,
            timestamp: 0,
            channel: "x".into(),
            slots,
            candidates,
        }
    }

    fn ledger(budgets: &[(&str, f64)]) -> BudgetLedger {
        let ids: Vec<String> = budgets.iter().map(|(id, _)| id.to_string()).collect();
        let totals: Vec<f64> = budgets.iter().map(|(_, b)| *b).collect();
        let cells = DenseMatrix::from_vec(ids.len(), 1, totals.clone()).unwrap();
        BudgetLedger::from_allocation(&BudgetAllocation::new(ids, vec!["x".into()], cells, totals).unwrap())
    }

    #[test]
    fn hand_computed_second_prices() {
        let r = record(2, vec![cand("a", 10.0, 1.0), cand("b", 6.0, 1.0), cand("c", 2.0, 1.0)]);
        let mut l = ledger(&[("a", 100.0), ("b", 100.0), ("c", 100.0)]);
        let out = run_auction(&r, &mut l, &AuctionConfig::default());
        let paid: Vec<(String, f64)> = out.winners.iter().map(|w| (w.campaign.clone(), w.charged)).collect();
        assert_eq!(paid, vec![("a".into(), 6.0), ("b".into(), 2.0)]);
    }

    #[test]
    fn lone_candidate_pays_reserve() {
        let r = record(5, vec![cand("a", 5.0, 1.0)]);
        let mut l = ledger(&[("a", 10.0)]);
        let out = run_auction(&r, &mut l, &AuctionConfig::default());
        assert_eq!(out.winners.len(), 1);
        assert_eq!(out.winners[0].slot, 0);
        assert_eq!(out.winners[0].charged, 0.0);

        let mut l = ledger(&[("a", 10.0)]);
        let out = run_auction(&r, &mut l, &AuctionConfig { reserve_price: 0.5 });
        assert_eq!(out.winners[0].charged, 0.5);
    }

    #[test]
    fn exhausted_candidate_is_not_ranked() {
        let r = record(2, vec![cand("a", 10.0, 1.0), cand("b", 6.0, 1.0), cand("c", 2.0, 1.0)]);
        let mut l = ledger(&[("a", 0.0), ("b", 100.0), ("c", 100.0)]);
        let out = run_auction(&r, &mut l, &AuctionConfig::default());
        let names: Vec<&str> = out.winners.iter().map(|w| w.campaign.as_str()).collect();
        assert_eq!(names, vec!["b", "c"]);
        assert_eq!(out.winners[0].charged, 2.0);
        assert_eq!(out.winners[1].charged, 0.0);
    }

    #[test]
    fn ties_break_by_campaign_id_and_pctr_normalizes_price() {
        let r = record(2, vec![cand("b", 4.0, 0.5), cand("a", 2.0, 1.0), cand("c", 1.0, 0.5)]);
        let mut l = ledger(&[("a", 100.0), ("b", 100.0), ("c", 100.0)]);
        let out = run_auction(&r, &mut l, &AuctionConfig::default());
        let names: Vec<&str> = out.winners.iter().map(|w| w.campaign.as_str()).collect();
        assert_eq!(names, vec!["a", "b"]);
        // a pays b's eCPM (2.0) / 1.0, b pays c's eCPM (0.5) / 0.5
        assert_eq!(out.winners[0].price, 2.0);
        assert_eq!(out.winners[1].price, 1.0);
    }

    #[test]
    fn charge_is_capped_and_campaign_goes_offline() {
        let r = record(1, vec![cand("a", 10.0, 1.0), cand("b", 6.0, 1.0)]);
        let mut l = ledger(&[("a", 4.0), ("b", 100.0)]);
        let out = run_auction(&r, &mut l, &AuctionConfig::default());
        assert_eq!(out.winners[0].charged, 4.0);
        assert!(!l.is_alive("a"));
        let out = run_auction(&r, &mut l, &AuctionConfig::default());
        assert_eq!(out.winners[0].campaign, "b");
    }

    #[test]
    fn unclicked_winner_pays_nothing() {
        let mut c = cand("a", 10.0, 1.0);
        c.clicked = false;
        let r = record(1, vec![c, cand("b", 6.0, 1.0)]);
        let mut l = ledger(&[("a", 10.0), ("b", 10.0)]);
        let out = run_auction(&r, &mut l, &AuctionConfig::default());
        assert_eq!(out.winners[0].price, 6.0);
        assert_eq!(out.winners[0].charged, 0.0);
        assert_eq!(l.total_remaining("a"), Some(10.0));
    }
}
