//! Bertrand price competition with shrouded tax surcharges.
//!
//! Firms post a salient price and either shroud the per-unit tax or fold it
//! into the posted price. A share of consumers compares effective prices
//! (paying a fixed disutility when buying from a shrouding firm); the rest
//! select on posted prices alone and misperceive shrouded surcharges by an
//! attention factor. The module evaluates demand, profits, and welfare for
//! arbitrary strategy profiles, constructs the two-segment zero-profit
//! equilibrium, and refutes candidate profiles by exhaustive unilateral
//! deviation search over a price grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance on deviation gains.
pub const DEVIATION_TOL: f64 = 1e-9;

/// Quadratic enjoyment and linear harm from consuming the sin good:
/// `enjoyment(x) = choke*x - slope/2 * x^2`, `harm(x) = marginal_harm * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    /// Intercept of marginal enjoyment (the choke price).
    pub choke: f64,
    /// Slope of marginal enjoyment; must be positive so demand is well behaved.
    pub slope: f64,
    /// Constant marginal harm of consumption.
    pub marginal_harm: f64,
}

impl Preferences {
    pub fn new(choke: f64, slope: f64, marginal_harm: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::validation(format!(
                "preference slope {slope} must be positive"
            )));
        }
        if !(choke > 0.0 && choke.is_finite()) {
            return Err(Error::validation(format!(
                "choke price {choke} must be positive"
            )));
        }
        if !(marginal_harm >= 0.0 && marginal_harm.is_finite()) {
            return Err(Error::validation(format!(
                "marginal harm {marginal_harm} must be non-negative"
            )));
        }
        Ok(Self {
            choke,
            slope,
            marginal_harm,
        })
    }

    pub fn enjoyment(&self, x: f64) -> f64 {
        self.choke * x - 0.5 * self.slope * x * x
    }

    pub fn harm(&self, x: f64) -> f64 {
        self.marginal_harm * x
    }
}

/// Parameters of the shrouding game.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarketConfig {
    pub n_firms: usize,
    pub marginal_cost: f64,
    pub tax: f64,
    /// Share of consumers who compare effective prices.
    pub attentive_share: f64,
    /// Fraction of a shrouded surcharge the remaining consumers perceive.
    pub attention: f64,
    /// Fixed disutility an attentive consumer incurs buying from a shrouder.
    pub shroud_disutility: f64,
    pub prefs: Preferences,
    /// Share of the harm consumers internalize when choosing quantities.
    pub internalized_share: f64,
    /// Per-consumer endowment; must cover worst-case spending.
    pub income: f64,
    /// Exogenous lump-sum transfer on top of recycled tax revenue.
    pub transfer: f64,
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_firms < 2 {
            return Err(Error::validation(format!(
                "need at least 2 firms, got {}",
                self.n_firms
            )));
        }
        if !(self.marginal_cost >= 0.0 && self.marginal_cost.is_finite()) {
            return Err(Error::validation("marginal cost must be non-negative"));
        }
        if !(self.tax >= 0.0 && self.tax.is_finite()) {
            return Err(Error::validation("tax must be non-negative"));
        }
        for (name, v) in [
            ("attentive share", self.attentive_share),
            ("attention", self.attention),
            ("internalized share", self.internalized_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} {v} must lie in [0, 1]")));
            }
        }
        if !(self.shroud_disutility >= 0.0) {
            return Err(Error::validation("shroud disutility must be non-negative"));
        }
        if !(self.transfer >= 0.0) {
            return Err(Error::validation("transfer must be non-negative"));
        }
        Preferences::new(self.prefs.choke, self.prefs.slope, self.prefs.marginal_harm)?;
        if self.prefs.choke - self.prefs.marginal_harm <= self.marginal_cost {
            return Err(Error::validation(
                "choked market: choke price minus marginal harm must exceed marginal cost",
            ));
        }
        // Worst-case spend: price below choke + hidden tax, times maximal demand.
        let worst_spend = (self.prefs.choke + self.tax) * self.prefs.choke / self.prefs.slope;
        if self.income < worst_spend {
            return Err(Error::validation(format!(
                "income {} cannot cover worst-case sin-good spend {worst_spend}",
                self.income
            )));
        }
        Ok(())
    }
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            n_firms: 4,
            marginal_cost: 1.0,
            tax: 0.05,
            attentive_share: 0.5,
            attention: 0.5,
            shroud_disutility: 0.01,
            prefs: Preferences {
                choke: 10.0,
                slope: 1.0,
                marginal_harm: 2.0,
            },
            internalized_share: 0.5,
            income: 250.0,
            transfer: 0.0,
        }
    }
}

/// One firm's choice: a posted price and whether the tax is shrouded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirmStrategy {
    pub posted_price: f64,
    pub shroud: bool,
}

impl FirmStrategy {
    /// Money price a customer actually pays: posted plus any shrouded surcharge.
    pub fn consumer_price(&self, tax: f64) -> f64 {
        self.posted_price + if self.shroud { tax } else { 0.0 }
    }
}

/// A strategy per firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub strategies: Vec<FirmStrategy>,
}

impl StrategyProfile {
    pub fn new(strategies: Vec<FirmStrategy>) -> Self {
        Self { strategies }
    }

    pub fn n_firms(&self) -> usize {
        self.strategies.len()
    }

    /// Every firm unshrouded at the same posted price.
    pub fn symmetric_unshrouded(n: usize, posted_price: f64) -> Self {
        Self::new(vec![
            FirmStrategy {
                posted_price,
                shroud: false
            };
            n
        ])
    }

    /// Every firm shrouding at the same posted price.
    pub fn symmetric_shrouded(n: usize, posted_price: f64) -> Self {
        Self::new(vec![
            FirmStrategy {
                posted_price,
                shroud: true
            };
            n
        ])
    }
}

/// Quantity demanded at a perceived price: `max(0, (choke - share*harm - p)/slope)`.
pub fn demand_quantity(perceived_price: f64, prefs: &Preferences, internalized_share: f64) -> f64 {
    let intercept = prefs.choke - internalized_share * prefs.marginal_harm;
    ((intercept - perceived_price) / prefs.slope).max(0.0)
}

/// Price a consumer type acts on when evaluating one firm.
///
/// Unshrouded firms show the same price to everyone. At a shrouding firm an
/// attentive consumer compares the full price plus the shroud disutility; an
/// inattentive one sees the posted price plus the misperceived surcharge.
pub fn perceived_price(strategy: &FirmStrategy, attentive: bool, config: &MarketConfig) -> f64 {
    if !strategy.shroud {
        strategy.posted_price
    } else if attentive {
        strategy.posted_price + config.tax + config.shroud_disutility
    } else {
        strategy.posted_price + config.attention * config.tax
    }
}

/// Mass-weighted quantities a firm sells to each consumer type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FirmSales {
    pub attentive: f64,
    pub inattentive: f64,
}

impl FirmSales {
    pub fn total(&self) -> f64 {
        self.attentive + self.inattentive
    }
}

/// Result of splitting both consumer types across the firms.
#[derive(Debug, Clone, Serialize)]
pub struct DemandAllocation {
    /// Mass-weighted quantities per firm.
    pub sales: Vec<FirmSales>,
    /// Firms sharing the lowest attentive comparison price.
    pub attentive_sellers: Vec<usize>,
    /// Firms sharing the lowest posted price.
    pub inattentive_sellers: Vec<usize>,
    /// Average per-consumer quantity bought by attentive consumers.
    pub attentive_quantity: f64,
    /// Average per-consumer quantity bought by inattentive consumers.
    pub inattentive_quantity: f64,
}

fn argmins(values: &[f64]) -> Vec<usize> {
    let mut min = f64::INFINITY;
    for &v in values {
        if v < min {
            min = v;
        }
    }
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == min)
        .map(|(k, _)| k)
        .collect()
}

/// Splits demand across firms.
///
/// Attentive consumers buy at the firm(s) with the lowest comparison price;
/// inattentive consumers at the firm(s) with the lowest posted price. Ties
/// split the type's mass equally. Each sub-mass buys the quantity implied by
/// its own firm's perceived price.
pub fn allocate_demand(
    profile: &StrategyProfile,
    config: &MarketConfig,
) -> Result<DemandAllocation> {
    if profile.n_firms() == 0 {
        return Err(Error::validation("profile has no firms"));
    }
    let attentive_prices: Vec<f64> = profile
        .strategies
        .iter()
        .map(|s| perceived_price(s, true, config))
        .collect();
    let posted_prices: Vec<f64> = profile.strategies.iter().map(|s| s.posted_price).collect();

    let attentive_sellers = argmins(&attentive_prices);
    let inattentive_sellers = argmins(&posted_prices);

    let mut sales = vec![FirmSales::default(); profile.n_firms()];
    let lambda = config.attentive_share;

    let mut attentive_quantity = 0.0;
    let share = 1.0 / attentive_sellers.len() as f64;
    for &k in &attentive_sellers {
        let x = demand_quantity(
            attentive_prices[k],
            &config.prefs,
            config.internalized_share,
        );
        attentive_quantity += share * x;
        sales[k].attentive = lambda * share * x;
    }

    let mut inattentive_quantity = 0.0;
    let share = 1.0 / inattentive_sellers.len() as f64;
    for &k in &inattentive_sellers {
        let perceived = perceived_price(&profile.strategies[k], false, config);
        let x = demand_quantity(perceived, &config.prefs, config.internalized_share);
        inattentive_quantity += share * x;
        sales[k].inattentive = (1.0 - lambda) * share * x;
    }

    Ok(DemandAllocation {
        sales,
        attentive_sellers,
        inattentive_sellers,
        attentive_quantity,
        inattentive_quantity,
    })
}

/// All firms' profits under a profile: `(consumer price - tax - cost) * volume`.
pub fn firm_profits(profile: &StrategyProfile, config: &MarketConfig) -> Result<Vec<f64>> {
    let allocation = allocate_demand(profile, config)?;
    Ok(profile
        .strategies
        .iter()
        .zip(&allocation.sales)
        .map(|(s, sold)| {
            (s.consumer_price(config.tax) - config.tax - config.marginal_cost) * sold.total()
        })
        .collect())
}

/// One firm's profit; errors on an out-of-range index.
pub fn firm_profit(profile: &StrategyProfile, firm: usize, config: &MarketConfig) -> Result<f64> {
    let profits = firm_profits(profile, config)?;
    profits.get(firm).copied().ok_or_else(|| {
        Error::validation(format!(
            "firm index {firm} out of range for {} firms",
            profits.len()
        ))
    })
}

/// First-best quantity: marginal enjoyment net of harm equals marginal cost.
pub fn first_best_quantity(prefs: &Preferences, marginal_cost: f64) -> Result<f64> {
    let x = (prefs.choke - prefs.marginal_harm - marginal_cost) / prefs.slope;
    if x <= 0.0 {
        return Err(Error::validation(format!(
            "choked market: first-best quantity {x} is not positive"
        )));
    }
    Ok(x)
}

/// Aggregate welfare: consumer utility of both types plus firm profits, with
/// tax revenue recycled into the lump-sum transfer.
///
/// The shroud disutility is charged only to attentive consumers who buy from
/// a shrouding firm.
pub fn aggregate_welfare(profile: &StrategyProfile, config: &MarketConfig) -> Result<f64> {
    let allocation = allocate_demand(profile, config)?;
    let total_quantity: f64 = allocation.sales.iter().map(FirmSales::total).sum();
    let transfer = config.transfer + config.tax * total_quantity;

    let mut welfare = 0.0;
    let spend_type = |mass: f64, sellers: &[usize], attentive: bool| -> Result<f64> {
        let mut utility = 0.0;
        let share = 1.0 / sellers.len() as f64;
        for &k in sellers {
            let strategy = &profile.strategies[k];
            let perceived = perceived_price(strategy, attentive, config);
            let x = demand_quantity(perceived, &config.prefs, config.internalized_share);
            let paid = strategy.consumer_price(config.tax);
            let z = config.income + transfer - paid * x;
            if z < 0.0 {
                return Err(Error::validation(format!(
                    "budget violation: income {} insufficient for spend {}",
                    config.income,
                    paid * x
                )));
            }
            let disutility = if attentive && strategy.shroud {
                config.shroud_disutility
            } else {
                0.0
            };
            utility += share * (config.prefs.enjoyment(x) - config.prefs.harm(x) + z - disutility);
        }
        Ok(mass * utility)
    };

    welfare += spend_type(config.attentive_share, &allocation.attentive_sellers, true)?;
    welfare += spend_type(
        1.0 - config.attentive_share,
        &allocation.inattentive_sellers,
        false,
    )?;
    welfare += firm_profits(profile, config)?.iter().sum::<f64>();
    Ok(welfare)
}

/// Welfare at the first-best allocation, for comparison.
pub fn first_best_welfare(config: &MarketConfig) -> Result<f64> {
    let x = first_best_quantity(&config.prefs, config.marginal_cost)?;
    Ok(
        config.prefs.enjoyment(x) - config.prefs.harm(x) - config.marginal_cost * x
            + config.income
            + config.transfer,
    )
}

/// Two-segment zero-profit profile: `floor(n/2)` firms shroud at marginal
/// cost, the rest post cost plus tax without shrouding.
///
/// Requires at least four firms so each segment keeps internal price
/// competition. Which firms land in which segment is arbitrary; shrouding
/// firms come first.
pub fn segmented_equilibrium(config: &MarketConfig) -> Result<StrategyProfile> {
    config.validate()?;
    if config.n_firms < 4 {
        return Err(Error::validation(format!(
            "segmented equilibrium requires N >= 4 firms (two per segment), got {}",
            config.n_firms
        )));
    }
    let n_shroud = config.n_firms / 2;
    let mut strategies = Vec::with_capacity(config.n_firms);
    for k in 0..config.n_firms {
        if k < n_shroud {
            strategies.push(FirmStrategy {
                posted_price: config.marginal_cost,
                shroud: true,
            });
        } else {
            strategies.push(FirmStrategy {
                posted_price: config.marginal_cost + config.tax,
                shroud: false,
            });
        }
    }
    Ok(StrategyProfile::new(strategies))
}

/// Posted-price grid for the unilateral deviation search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Gains at or below this tolerance do not refute a profile.
    pub tolerance: f64,
}

impl DeviationGrid {
    /// Default grid spanning `[cost - tax, cost + 2 tax]` at step `tax/100`.
    pub fn default_for(config: &MarketConfig) -> Self {
        if config.tax > 0.0 {
            Self {
                lo: (config.marginal_cost - config.tax).max(0.0),
                hi: config.marginal_cost + 2.0 * config.tax,
                step: config.tax / 100.0,
                tolerance: DEVIATION_TOL,
            }
        } else {
            let span = 0.05 * config.marginal_cost.max(1.0);
            Self {
                lo: (config.marginal_cost - span).max(0.0),
                hi: config.marginal_cost + span,
                step: span / 100.0,
                tolerance: DEVIATION_TOL,
            }
        }
    }

    pub fn prices(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || self.hi < self.lo {
            return Err(Error::validation(format!(
                "empty deviation grid: lo {} hi {} step {}",
                self.lo, self.hi, self.step
            )));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.lo + i as f64 * self.step).collect())
    }
}

/// The most profitable unilateral deviation found on the grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Deviation {
    pub firm: usize,
    pub strategy: FirmStrategy,
    pub gain: f64,
}

/// Full evaluation of a profile: profits, quantities, welfare, and the
/// outcome of the deviation search.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub profile: StrategyProfile,
    pub profits: Vec<f64>,
    pub attentive_quantity: f64,
    pub inattentive_quantity: f64,
    pub welfare: f64,
    pub best_deviation: Option<Deviation>,
    pub max_gain: f64,
    pub verified: bool,
    pub grid_points: usize,
    pub tolerance: f64,
}

/// Exhaustive unilateral-deviation check over `{shroud, no-shroud} x grid`.
///
/// `verified` means no firm can raise its profit by more than the grid
/// tolerance by changing its own posted price (to a grid point) or its
/// shrouding flag.
pub fn verify_equilibrium(
    profile: &StrategyProfile,
    config: &MarketConfig,
    grid: &DeviationGrid,
) -> Result<EquilibriumReport> {
    config.validate()?;
    if profile.n_firms() != config.n_firms {
        return Err(Error::validation(format!(
            "profile has {} firms but config expects {}",
            profile.n_firms(),
            config.n_firms
        )));
    }
    let prices = grid.prices()?;
    let base_profits = firm_profits(profile, config)?;
    let allocation = allocate_demand(profile, config)?;

    let mut best: Option<Deviation> = None;
    let mut max_gain = f64::NEG_INFINITY;
    let mut candidate = profile.clone();
    for (firm, &base_profit) in base_profits.iter().enumerate() {
        let original = candidate.strategies[firm];
        for &posted_price in &prices {
            for shroud in [false, true] {
                let strategy = FirmStrategy {
                    posted_price,
                    shroud,
                };
                if strategy == original {
                    continue;
                }
                candidate.strategies[firm] = strategy;
                let profit = firm_profits(&candidate, config)?[firm];
                let gain = profit - base_profit;
                if gain > max_gain {
                    max_gain = gain;
                    best = Some(Deviation {
                        firm,
                        strategy,
                        gain,
                    });
                }
            }
        }
        candidate.strategies[firm] = original;
    }

    let max_gain = if max_gain.is_finite() { max_gain } else { 0.0 };
    Ok(EquilibriumReport {
        profile: profile.clone(),
        profits: base_profits,
        attentive_quantity: allocation.attentive_quantity,
        inattentive_quantity: allocation.inattentive_quantity,
        welfare: aggregate_welfare(profile, config)?,
        best_deviation: best,
        max_gain,
        verified: max_gain <= grid.tolerance,
        grid_points: prices.len(),
        tolerance: grid.tolerance,
    })
}

/// Welfare curve over a tax grid evaluated on the segmented equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct TaxSweep {
    pub best_tax: f64,
    pub best_welfare: f64,
    /// `(tax, welfare)` pairs in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Grid search for the welfare-maximizing uniform tax on the segmented
/// equilibrium. Ties resolve to the lowest tax.
pub fn second_best_tax_sweep(
    config: &MarketConfig,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<TaxSweep> {
    config.validate()?;
    if !(step > 0.0) || hi < lo || lo < 0.0 {
        return Err(Error::validation(format!(
            "empty tax grid: lo {lo} hi {hi} step {step}"
        )));
    }
    let pigouvian = (1.0 - config.internalized_share) * config.prefs.marginal_harm;
    let reference = if config.attention > 0.0 {
        pigouvian / config.attention
    } else {
        pigouvian
    };
    if reference > 0.0 && step > reference / 200.0 {
        return Err(Error::validation(format!(
            "tax grid step {step} exceeds required resolution {}",
            reference / 200.0
        )));
    }

    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let mut curve = Vec::with_capacity(n);
    let mut best_tax = lo;
    let mut best_welfare = f64::NEG_INFINITY;
    for i in 0..n {
        let tax = lo + i as f64 * step;
        let config_t = MarketConfig { tax, ..*config };
        let profile = segmented_equilibrium(&config_t)?;
        let welfare = aggregate_welfare(&profile, &config_t)?;
        if welfare > best_welfare {
            best_welfare = welfare;
            best_tax = tax;
        }
        curve.push((tax, welfare));
    }
    Ok(TaxSweep {
        best_tax,
        best_welfare,
        curve,
    })
}
