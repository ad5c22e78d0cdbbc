//! Closed-form incidence and corrective-tax formulas.
//!
//! These are the analytic oracles the simulator is checked against: the
//! textbook competitive pass-through, the monopoly pass-through with the
//! inverse-marginal-surplus term, the salience-adjusted incidence split, and
//! the attention-scaled corrective tax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance below which a pass-through denominator counts as singular.
pub const SINGULAR_DENOMINATOR_TOL: f64 = 1e-12;

/// A price elasticity that may be exactly infinite.
///
/// Perfectly elastic supply is a first-class value, not a large float, so the
/// limit cases are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elasticity {
    Finite(f64),
    Infinite,
}

impl Elasticity {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Elasticity::Infinite)
    }

    fn finite_positive(&self, name: &str) -> Result<Option<f64>> {
        match *self {
            Elasticity::Infinite => Ok(None),
            Elasticity::Finite(v) if v.is_finite() && v > 0.0 => Ok(Some(v)),
            Elasticity::Finite(v) => Err(Error::validation(format!(
                "{name} must be positive or infinite, got {v}"
            ))),
        }
    }
}

impl Serialize for Elasticity {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Elasticity::Finite(v) => ser.serialize_f64(*v),
            Elasticity::Infinite => ser.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for Elasticity {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let value = serde_json::Value::deserialize(de)?;
        match value {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Elasticity::Finite)
                .ok_or_else(|| D::Error::custom("elasticity must be a finite number")),
            serde_json::Value::String(s) if s == "infinite" || s == "inf" => {
                Ok(Elasticity::Infinite)
            }
            other => Err(D::Error::custom(format!(
                "elasticity must be a number or \"infinite\", got {other}"
            ))),
        }
    }
}

/// Inputs to the pass-through and incidence formulas.
///
/// `demand_elasticity` uses the positive-sign convention. The
/// marginal-surplus elasticity may be negative (very convex demand);
/// `salience` is the perceived fraction of the tax surcharge.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElasticityInputs {
    pub demand_elasticity: f64,
    pub supply_elasticity: Elasticity,
    #[serde(default = "default_ms_elasticity")]
    pub marginal_surplus_elasticity: f64,
    #[serde(default = "default_salience")]
    pub salience: f64,
    #[serde(default = "default_price")]
    pub consumer_price: f64,
    #[serde(default = "default_price")]
    pub producer_price: f64,
}

fn default_ms_elasticity() -> f64 {
    1.0
}
fn default_salience() -> f64 {
    1.0
}
fn default_price() -> f64 {
    1.0
}

impl ElasticityInputs {
    fn demand(&self) -> Result<f64> {
        if self.demand_elasticity.is_finite() && self.demand_elasticity > 0.0 {
            Ok(self.demand_elasticity)
        } else {
            Err(Error::validation(format!(
                "demand elasticity must be positive, got {}",
                self.demand_elasticity
            )))
        }
    }

    fn price_ratio(&self) -> Result<f64> {
        if !(self.consumer_price > 0.0) || !(self.producer_price > 0.0) {
            return Err(Error::validation(format!(
                "prices must be positive, got consumer {} / producer {}",
                self.consumer_price, self.producer_price
            )));
        }
        if self.consumer_price < self.producer_price {
            return Err(Error::validation(format!(
                "consumer price {} below producer price {}",
                self.consumer_price, self.producer_price
            )));
        }
        Ok(self.consumer_price / self.producer_price)
    }
}

/// Competitive pass-through `1 / (1 + demand/supply)`.
///
/// Exactly 1 under perfectly elastic supply, and the relatively less elastic
/// market side bears more of the tax.
pub fn passthrough_competitive(inputs: &ElasticityInputs) -> Result<f64> {
    let demand = inputs.demand()?;
    match inputs
        .supply_elasticity
        .finite_positive("supply elasticity")?
    {
        None => Ok(1.0),
        Some(supply) => Ok(1.0 / (1.0 + demand / supply)),
    }
}

/// Monopoly pass-through `1 / (1 + (demand - 1)/supply + 1/ms)`.
///
/// Over-shifting (a value above 1) requires the bracketed sum to fall below
/// 1; with perfectly elastic supply that happens exactly when the
/// marginal-surplus elasticity is negative.
pub fn passthrough_monopoly(inputs: &ElasticityInputs) -> Result<f64> {
    let demand = inputs.demand()?;
    let ms = inputs.marginal_surplus_elasticity;
    if !ms.is_finite() || ms == 0.0 {
        return Err(Error::validation(format!(
            "marginal-surplus elasticity must be finite and nonzero, got {ms}"
        )));
    }
    let supply_term = match inputs
        .supply_elasticity
        .finite_positive("supply elasticity")?
    {
        None => 0.0,
        Some(supply) => (demand - 1.0) / supply,
    };
    let denominator = 1.0 + supply_term + 1.0 / ms;
    if denominator.abs() < SINGULAR_DENOMINATOR_TOL {
        return Err(Error::computation(format!(
            "singular pass-through configuration: denominator {denominator} within \
             {SINGULAR_DENOMINATOR_TOL} of zero"
        )));
    }
    Ok(1.0 / denominator)
}

/// Producer/consumer incidence of a tax that is only partially perceived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SalienceIncidence {
    /// Change in the producer price per unit of tax, at most 0.
    pub producer: f64,
    /// Change in the consumer price per unit of tax, in [0, 1].
    pub consumer: f64,
}

/// Incidence under partial salience.
///
/// `producer = -salience * demand / (ratio * supply + demand)` with
/// `ratio = consumer_price / producer_price`, and `consumer = 1 + producer`.
/// A fully shrouded tax (salience 0) falls entirely on consumers; full
/// salience reproduces the competitive split.
pub fn incidence_salience(inputs: &ElasticityInputs) -> Result<SalienceIncidence> {
    let demand = inputs.demand()?;
    let ratio = inputs.price_ratio()?;
    if !(inputs.salience.is_finite() && inputs.salience >= 0.0) {
        return Err(Error::validation(format!(
            "salience must be non-negative, got {}",
            inputs.salience
        )));
    }
    let producer = match inputs
        .supply_elasticity
        .finite_positive("supply elasticity")?
    {
        None => 0.0,
        Some(supply) => -inputs.salience * demand / (ratio * supply + demand),
    };
    Ok(SalienceIncidence {
        producer,
        consumer: 1.0 + producer,
    })
}

/// Inputs to the corrective-tax formula.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SinTaxInputs {
    /// Share of the good's future cost the consumer internalizes.
    pub internalized_share: f64,
    /// Perceived fraction of the tax; zero makes taxation ineffective.
    pub attention: f64,
    /// Marginal cost of the good at the first-best quantity.
    pub marginal_harm: f64,
}

impl SinTaxInputs {
    pub fn new(internalized_share: f64, attention: f64, marginal_harm: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&internalized_share) {
            return Err(Error::validation(format!(
                "internalized share {internalized_share} must lie in [0, 1]"
            )));
        }
        if !(attention.is_finite() && attention >= 0.0) {
            return Err(Error::validation(format!(
                "attention {attention} must be non-negative"
            )));
        }
        if !(marginal_harm.is_finite() && marginal_harm >= 0.0) {
            return Err(Error::validation(format!(
                "marginal harm {marginal_harm} must be non-negative"
            )));
        }
        Ok(Self {
            internalized_share,
            attention,
            marginal_harm,
        })
    }
}

/// Corrective per-unit tax `(1 - internalized) * harm / attention`.
///
/// One unit of uninternalized harm takes `1/attention` tax units to correct;
/// at full attention this is the plain Pigouvian level.
pub fn optimal_sin_tax(inputs: &SinTaxInputs) -> Result<f64> {
    if inputs.attention == 0.0 {
        return Err(Error::validation(
            "corrective taxation ineffective: consumers perceive none of the tax",
        ));
    }
    Ok((1.0 - inputs.internalized_share) * inputs.marginal_harm / inputs.attention)
}
