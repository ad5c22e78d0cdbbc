//! Betting-odds algebra: overrounds, consumer prices, implied probabilities,
//! and the three tax-shrouding policy transformations.
//!
//! A decimal odd `r > 1` is the gross payout per unit wagered. For an event
//! with mutually exclusive outcomes, the bookmaker's markup (overround) is
//! the sum of reciprocal odds, and the consumer price of a one-unit bet is
//! `p = 1 - 1/markup`: the bookmaker's expected net return per unit wagered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the algebraic identities this module guarantees.
pub const PRICE_IDENTITY_TOL: f64 = 1e-12;

/// One event's decimal odds across its mutually exclusive outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct EventQuote {
    event_id: String,
    odds: Vec<f64>,
}

impl EventQuote {
    /// Builds a quote, rejecting odds that imply a non-positive gross return.
    pub fn new(event_id: impl Into<String>, odds: Vec<f64>) -> Result<Self> {
        if odds.len() < 2 {
            return Err(Error::validation(format!(
                "quote needs at least 2 outcomes, got {}",
                odds.len()
            )));
        }
        for (s, &r) in odds.iter().enumerate() {
            if !r.is_finite() || r <= 1.0 {
                return Err(Error::validation(format!(
                    "invalid quote: odd {r} for outcome {s} must be a finite value > 1"
                )));
            }
        }
        Ok(Self {
            event_id: event_id.into(),
            odds,
        })
    }

    pub fn event_id(&self) -> &str {
        &self.event_id
    }

    pub fn odds(&self) -> &[f64] {
        &self.odds
    }

    pub fn n_outcomes(&self) -> usize {
        self.odds.len()
    }

    /// Bookmaker markup: the sum of reciprocal odds. 1 for a fair book.
    pub fn overround(&self) -> f64 {
        self.odds.iter().map(|r| 1.0 / r).sum()
    }

    /// Consumer price of a one-unit bet, `1 - 1/overround`.
    pub fn price(&self) -> f64 {
        1.0 - 1.0 / self.overround()
    }

    /// Implied probability of outcome `s`, `1 / (overround * odd_s)`.
    pub fn implied_probability(&self, s: usize) -> Result<f64> {
        let r = self.odds.get(s).ok_or_else(|| {
            Error::validation(format!(
                "outcome index {s} out of range for quote with {} outcomes",
                self.odds.len()
            ))
        })?;
        Ok(1.0 / (self.overround() * r))
    }

    /// All implied probabilities; they sum to 1 by construction.
    pub fn implied_probabilities(&self) -> Vec<f64> {
        let theta = self.overround();
        self.odds.iter().map(|r| 1.0 / (theta * r)).collect()
    }
}

/// How a bookmaker folds the statutory tax into a posted quote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Posted odds are the effective odds.
    NoShroud,
    /// Winnings are reduced by the tax: effective odd = posted * (1 - rate).
    DeductFromWinnings,
    /// The wager is grossed up by the tax: effective odd = posted / (1 + rate).
    DeductFromWager,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::NoShroud => "no_shroud",
            PolicyKind::DeductFromWinnings => "deduct_from_winnings",
            PolicyKind::DeductFromWager => "deduct_from_wager",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no_shroud" => Ok(PolicyKind::NoShroud),
            "deduct_from_winnings" => Ok(PolicyKind::DeductFromWinnings),
            "deduct_from_wager" => Ok(PolicyKind::DeductFromWager),
            other => Err(Error::validation(format!(
                "unknown shrouding policy '{other}'"
            ))),
        }
    }
}

/// A shrouding policy with its statutory rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShroudingPolicy {
    pub kind: PolicyKind,
    pub rate: f64,
}

/// The German statutory rate on betting turnover.
pub const DEFAULT_TAX_RATE: f64 = 0.05;

impl ShroudingPolicy {
    pub fn new(kind: PolicyKind, rate: f64) -> Result<Self> {
        if !rate.is_finite() || !(0.0..1.0).contains(&rate) {
            return Err(Error::validation(format!(
                "tax rate {rate} must lie in [0, 1)"
            )));
        }
        Ok(Self { kind, rate })
    }

    pub fn no_shroud() -> Self {
        Self {
            kind: PolicyKind::NoShroud,
            rate: 0.0,
        }
    }

    pub fn deduct_from_winnings(rate: f64) -> Result<Self> {
        Self::new(PolicyKind::DeductFromWinnings, rate)
    }

    pub fn deduct_from_wager(rate: f64) -> Result<Self> {
        Self::new(PolicyKind::DeductFromWager, rate)
    }

    /// Effective rate entering the formulas; NoShroud always acts as 0.
    fn effective_rate(&self) -> f64 {
        match self.kind {
            PolicyKind::NoShroud => 0.0,
            _ => self.rate,
        }
    }

    /// Transforms a single posted odd into its effective odd.
    pub fn effective_odd(&self, posted_odd: f64) -> f64 {
        let t = self.effective_rate();
        match self.kind {
            PolicyKind::NoShroud => posted_odd,
            PolicyKind::DeductFromWinnings => posted_odd * (1.0 - t),
            PolicyKind::DeductFromWager => posted_odd / (1.0 + t),
        }
    }

    /// Transforms a posted quote into the effective, surcharge-inclusive quote.
    ///
    /// Rejects quotes where a deduction pushes an effective odd to 1 or below;
    /// such bets have a non-positive gross return and clamping them would
    /// corrupt downstream price statistics.
    pub fn apply(&self, posted: &EventQuote) -> Result<EventQuote> {
        let effective: Vec<f64> = posted.odds.iter().map(|&r| self.effective_odd(r)).collect();
        for (s, &r) in effective.iter().enumerate() {
            if r <= 1.0 {
                return Err(Error::validation(format!(
                    "degenerate quote: effective odd {r} for outcome {s} \
                     is <= 1 after applying {:?} at rate {}",
                    self.kind, self.rate
                )));
            }
        }
        Ok(EventQuote {
            event_id: posted.event_id.clone(),
            odds: effective,
        })
    }

    /// Closed-form shrouded surcharge: the effective minus posted price.
    ///
    /// 0 without shrouding, `t / posted_markup` when deducting from winnings,
    /// `t / ((1 + t) * posted_markup)` when deducting from the wager.
    pub fn surcharge(&self, posted: &EventQuote) -> f64 {
        let t = self.effective_rate();
        let posted_markup = posted.overround();
        match self.kind {
            PolicyKind::NoShroud => 0.0,
            PolicyKind::DeductFromWinnings => t / posted_markup,
            PolicyKind::DeductFromWager => t / ((1.0 + t) * posted_markup),
        }
    }

    /// Net payout of a winning bet: wager times the effective odd.
    pub fn net_payout(&self, posted_odd: f64, wager: f64) -> Result<f64> {
        if !(wager > 0.0) {
            return Err(Error::validation(format!("wager {wager} must be positive")));
        }
        if !(posted_odd > 1.0) {
            return Err(Error::validation(format!(
                "posted odd {posted_odd} must exceed 1"
            )));
        }
        Ok(wager * self.effective_odd(posted_odd))
    }
}

/// Posted/effective price pair for one quote under one policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceDecomposition {
    pub posted_price: f64,
    pub effective_price: f64,
    pub surcharge: f64,
    pub posted_markup: f64,
    pub effective_markup: f64,
}

impl PriceDecomposition {
    /// Decomposes a posted quote under a policy.
    ///
    /// The closed-form surcharge and the compositional price difference agree
    /// within [`PRICE_IDENTITY_TOL`]; the compositional route is used for the
    /// effective price so that `effective = posted + surcharge` holds exactly
    /// at the closed form.
    pub fn compute(posted: &EventQuote, policy: &ShroudingPolicy) -> Result<Self> {
        let effective_quote = policy.apply(posted)?;
        let posted_price = posted.price();
        let surcharge = policy.surcharge(posted);
        Ok(Self {
            posted_price,
            effective_price: posted_price + surcharge,
            surcharge,
            posted_markup: posted.overround(),
            effective_markup: effective_quote.overround(),
        })
    }
}
