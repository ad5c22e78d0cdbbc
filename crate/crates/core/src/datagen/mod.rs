//! Seeded synthetic odds-panel generator.
//!
//! Reproduces the market structure the estimators are aimed at: a roster of
//! betting agencies quoting every event in a fixed league calendar, a tax
//! reform at a known week, staggered adoption of shrouding policies by
//! treated agencies, and an additive effective-price process with known
//! injected treatment effects. Every random draw comes from a splittable
//! stream keyed by `(master_seed, domain, ids...)`, so output is a pure
//! function of the configuration.

pub mod io;

use rand::Rng;
use rand_distr::{Dirichlet, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odds::{EventQuote, PolicyKind, PriceDecomposition, ShroudingPolicy, DEFAULT_TAX_RATE};
use crate::rng::StreamKey;

const DOMAIN_EVENT: u64 = 1;
const DOMAIN_NOISE: u64 = 2;
const DOMAIN_SHOCK: u64 = 3;

/// Sports covered by the default league calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sport {
    Soccer,
    Handball,
    Basketball,
    AmericanFootball,
    Hockey,
}

impl Sport {
    /// Three-way markets for soccer and handball, two-way otherwise.
    pub fn n_outcomes(&self) -> usize {
        match self {
            Sport::Soccer | Sport::Handball => 3,
            _ => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Sport::Soccer => "soccer",
            Sport::Handball => "handball",
            Sport::Basketball => "basketball",
            Sport::AmericanFootball => "american_football",
            Sport::Hockey => "hockey",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "soccer" => Ok(Sport::Soccer),
            "handball" => Ok(Sport::Handball),
            "basketball" => Ok(Sport::Basketball),
            "american_football" => Ok(Sport::AmericanFootball),
            "hockey" => Ok(Sport::Hockey),
            other => Err(Error::validation(format!("unknown sport '{other}'"))),
        }
    }
}

/// One league: a weekly batch of events with a price level shift.
///
/// Domestic leagues carry the `de_` id prefix; the cross-league sample
/// filter relies on that convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeagueSpec {
    pub league_id: String,
    pub sport: Sport,
    /// Additive shift of this league's price level.
    pub league_effect: f64,
    pub events_per_week: usize,
}

/// One agency: its treatment status, shrouding policy, and price process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgencySpec {
    pub agency_id: String,
    pub treated: bool,
    pub policy: PolicyKind,
    /// First week the shrouding policy is active; present iff the policy
    /// shrouds.
    pub policy_start_week: Option<u32>,
    /// Time-invariant price level of the agency.
    pub agency_effect: f64,
    /// Post-reform price response while no shrouding policy is active.
    pub target_posted_response: f64,
}

/// Shape of the post-reform response of observations without an active
/// shrouding policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectProfile {
    /// Constant at the agency's target response.
    Flat,
    /// Rises linearly from zero at the reform to the target in the last
    /// quarter.
    LinearRamp,
}

/// Full data-generating configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub master_seed: u64,
    pub n_control_agencies: usize,
    pub treated_agencies: Vec<AgencySpec>,
    pub leagues: Vec<LeagueSpec>,
    pub n_weeks: u32,
    pub weeks_per_quarter: u32,
    pub reform_week: u32,
    pub tax_rate: f64,
    /// Grand price level before agency, league, time, and treatment shifts.
    pub base_price: f64,
    /// Total linear decline of the common time effect over the sample.
    pub trend_amplitude: f64,
    /// Amplitude of the annual cosine in the common time effect.
    pub seasonal_amplitude: f64,
    /// Standard deviation of the idiosyncratic price noise.
    pub noise_sd: f64,
    /// Standard deviation of agency-by-quarter shocks.
    pub cluster_shock_sd: f64,
    /// Half-width of the evenly spaced control-agency price levels.
    pub control_effect_spread: f64,
    /// Effective-price effect while a shrouding policy is active.
    pub shroud_active_effect: f64,
    pub unshrouded_profile: EffectProfile,
    /// Concentration of the symmetric Dirichlet for outcome probabilities.
    pub dirichlet_concentration: f64,
    /// Outcome probabilities are redrawn until the largest is below this cap
    /// and the smallest above `min_outcome_probability`, keeping every
    /// generated odd comfortably above 1.
    pub max_outcome_probability: f64,
    pub min_outcome_probability: f64,
    pub max_retries: u32,
}

/// Default shrouding schedule: policy kind and adoption delay in weeks after
/// the reform for the ten treated agencies. Six deduct from winnings, two
/// from the wager (one of them a very late adopter), two never shroud.
const TREATED_SCHEDULE: [(PolicyKind, Option<u32>); 10] = [
    (PolicyKind::DeductFromWinnings, Some(0)),
    (PolicyKind::DeductFromWinnings, Some(4)),
    (PolicyKind::DeductFromWager, Some(4)),
    (PolicyKind::DeductFromWinnings, Some(13)),
    (PolicyKind::DeductFromWinnings, Some(17)),
    (PolicyKind::DeductFromWinnings, Some(22)),
    (PolicyKind::DeductFromWinnings, Some(35)),
    (PolicyKind::DeductFromWager, Some(186)),
    (PolicyKind::NoShroud, None),
    (PolicyKind::NoShroud, None),
];

/// League calendar: id, sport, and price level of the sixteen default
/// competitions. Levels are converted to zero-mean league effects.
const LEAGUE_LEVELS: [(&str, Sport, f64); 16] = [
    ("de_bundesliga", Sport::Soccer, 0.0621),
    ("de_bundesliga2", Sport::Soccer, 0.0792),
    ("de_liga3", Sport::Soccer, 0.0887),
    ("en_premier_league", Sport::Soccer, 0.0576),
    ("en_championship", Sport::Soccer, 0.0740),
    ("es_primera", Sport::Soccer, 0.0616),
    ("es_segunda", Sport::Soccer, 0.0847),
    ("it_serie_a", Sport::Soccer, 0.0627),
    ("it_serie_b", Sport::Soccer, 0.0848),
    ("fr_ligue1", Sport::Soccer, 0.0659),
    ("fr_ligue2", Sport::Soccer, 0.0819),
    ("de_handball_bundesliga", Sport::Handball, 0.0932),
    ("de_basketball_bundesliga", Sport::Basketball, 0.0752),
    ("us_nba", Sport::Basketball, 0.0615),
    ("us_nfl", Sport::AmericanFootball, 0.0585),
    ("us_nhl", Sport::Hockey, 0.0630),
];

impl Default for DgpConfig {
    fn default() -> Self {
        let reform_week = 169; // 13 pre-reform quarters of 13 weeks
        let treated_agencies = (0..10)
            .map(|i| {
                let (policy, delay) = TREATED_SCHEDULE[i];
                AgencySpec {
                    agency_id: format!("t{:02}", i + 1),
                    treated: true,
                    policy,
                    policy_start_week: delay.map(|d| reform_week + d),
                    agency_effect: -0.006 + 0.012 * i as f64 / 9.0,
                    target_posted_response: 0.0086,
                }
            })
            .collect();

        let level_mean: f64 =
            LEAGUE_LEVELS.iter().map(|(_, _, l)| l).sum::<f64>() / LEAGUE_LEVELS.len() as f64;
        let leagues = LEAGUE_LEVELS
            .iter()
            .map(|(id, sport, level)| LeagueSpec {
                league_id: (*id).to_string(),
                sport: *sport,
                league_effect: level - level_mean,
                events_per_week: 2,
            })
            .collect();

        Self {
            master_seed: 42,
            n_control_agencies: 55,
            treated_agencies,
            leagues,
            n_weeks: 507, // 39 quarters: 13 pre, 26 post
            weeks_per_quarter: 13,
            reform_week,
            tax_rate: DEFAULT_TAX_RATE,
            base_price: 0.0668,
            trend_amplitude: 0.012,
            seasonal_amplitude: 0.002,
            noise_sd: 0.01,
            cluster_shock_sd: 0.002,
            control_effect_spread: 0.008,
            shroud_active_effect: 0.048,
            unshrouded_profile: EffectProfile::Flat,
            dirichlet_concentration: 3.0,
            max_outcome_probability: 0.78,
            min_outcome_probability: 0.001,
            max_retries: 100,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_control_agencies == 0 {
            return Err(Error::validation("need at least one control agency"));
        }
        if self.treated_agencies.is_empty() {
            return Err(Error::validation("need at least one treated agency"));
        }
        if self.leagues.is_empty() {
            return Err(Error::validation("need at least one league"));
        }
        if self.weeks_per_quarter == 0 {
            return Err(Error::validation("weeks_per_quarter must be positive"));
        }
        if self.reform_week >= self.n_weeks {
            return Err(Error::validation(format!(
                "reform_week {} must lie strictly inside the sample of {} weeks",
                self.reform_week, self.n_weeks
            )));
        }
        if self.reform_week / self.weeks_per_quarter < 8 {
            return Err(Error::validation(format!(
                "reform_week {} leaves fewer than 8 pre-reform quarters",
                self.reform_week
            )));
        }
        if !(0.0..1.0).contains(&self.tax_rate) {
            return Err(Error::validation(format!(
                "tax_rate {} must lie in [0, 1)",
                self.tax_rate
            )));
        }
        if self.noise_sd < 0.0 || self.cluster_shock_sd < 0.0 {
            return Err(Error::validation(
                "noise standard deviations must be non-negative",
            ));
        }
        if !(self.dirichlet_concentration > 0.0) {
            return Err(Error::validation(
                "dirichlet_concentration must be positive",
            ));
        }
        if !(self.min_outcome_probability > 0.0)
            || !(self.max_outcome_probability < 0.95)
            || self.min_outcome_probability >= self.max_outcome_probability
        {
            return Err(Error::validation(
                "outcome probability bounds must satisfy 0 < min < max < 0.95",
            ));
        }
        for league in &self.leagues {
            if league.events_per_week == 0 {
                return Err(Error::validation(format!(
                    "league {} has zero events per week",
                    league.league_id
                )));
            }
        }
        for agency in &self.treated_agencies {
            if !agency.treated {
                return Err(Error::validation(format!(
                    "agency {} in the treated list is not flagged treated",
                    agency.agency_id
                )));
            }
            match (agency.policy, agency.policy_start_week) {
                (PolicyKind::NoShroud, Some(_)) => {
                    return Err(Error::validation(format!(
                        "agency {} has no shrouding policy but a policy start week",
                        agency.agency_id
                    )));
                }
                (PolicyKind::NoShroud, None) => {}
                (_, None) => {
                    return Err(Error::validation(format!(
                        "shrouding agency {} needs a policy start week",
                        agency.agency_id
                    )));
                }
                (_, Some(start)) if start < self.reform_week => {
                    return Err(Error::validation(format!(
                        "agency {} starts shrouding in week {start}, before the reform week {}",
                        agency.agency_id, self.reform_week
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_quarters(&self) -> u32 {
        self.n_weeks.div_ceil(self.weeks_per_quarter)
    }

    pub fn reform_quarter(&self) -> u32 {
        self.reform_week / self.weeks_per_quarter
    }

    /// Full agency roster in canonical id order: controls, then treated.
    pub fn agency_roster(&self) -> Vec<AgencySpec> {
        let n = self.n_control_agencies;
        let mut roster: Vec<AgencySpec> = (0..n)
            .map(|i| AgencySpec {
                agency_id: format!("c{:02}", i + 1),
                treated: false,
                policy: PolicyKind::NoShroud,
                policy_start_week: None,
                agency_effect: if n == 1 {
                    0.0
                } else {
                    -self.control_effect_spread
                        + 2.0 * self.control_effect_spread * i as f64 / (n - 1) as f64
                },
                target_posted_response: 0.0,
            })
            .collect();
        roster.extend(self.treated_agencies.iter().cloned());
        roster.sort_by(|a, b| a.agency_id.cmp(&b.agency_id));
        roster
    }

    /// Common weekly time effect, demeaned over the sample.
    pub fn time_effects(&self) -> Vec<f64> {
        let n = self.n_weeks as usize;
        let mut effects: Vec<f64> = (0..n)
            .map(|w| {
                let frac = if n > 1 {
                    w as f64 / (n - 1) as f64
                } else {
                    0.0
                };
                let trend = -self.trend_amplitude * (frac - 0.5);
                let seasonal = self.seasonal_amplitude
                    * (2.0 * std::f64::consts::PI * (w % 52) as f64 / 52.0).cos();
                trend + seasonal
            })
            .collect();
        let mean = effects.iter().sum::<f64>() / n as f64;
        for e in &mut effects {
            *e -= mean;
        }
        effects
    }

    /// Ground-truth effect path by post-reform quarter: the injected effect
    /// averaged over treated agencies and the quarter's weeks.
    pub fn injected_quarter_path(&self) -> Vec<f64> {
        let treated: Vec<&AgencySpec> =
            self.treated_agencies.iter().filter(|a| a.treated).collect();
        let mut path = Vec::new();
        for q in self.reform_quarter()..self.n_quarters() {
            let weeks: Vec<u32> = (q * self.weeks_per_quarter
                ..((q + 1) * self.weeks_per_quarter).min(self.n_weeks))
                .collect();
            let mut total = 0.0;
            let mut count = 0usize;
            for agency in &treated {
                for &w in &weeks {
                    total += injected_effect(agency, w, self);
                    count += 1;
                }
            }
            path.push(total / count as f64);
        }
        path
    }
}

/// Injected effective-price effect for one agency-week.
///
/// Zero before the reform and for untreated agencies. After the reform a
/// treated agency contributes its unshrouded response until its policy start
/// week, and the active-shrouding effect from then on.
pub fn injected_effect(agency: &AgencySpec, week: u32, config: &DgpConfig) -> f64 {
    if !agency.treated || week < config.reform_week {
        return 0.0;
    }
    let active = match (agency.policy, agency.policy_start_week) {
        (PolicyKind::NoShroud, _) | (_, None) => false,
        (_, Some(start)) => week >= start,
    };
    if active {
        return config.shroud_active_effect;
    }
    match config.unshrouded_profile {
        EffectProfile::Flat => agency.target_posted_response,
        EffectProfile::LinearRamp => {
            let quarter = week / config.weeks_per_quarter;
            let k = (quarter - config.reform_quarter()) as f64;
            let k_max = (config.n_quarters() - 1 - config.reform_quarter()) as f64;
            if k_max > 0.0 {
                agency.target_posted_response * k / k_max
            } else {
                agency.target_posted_response
            }
        }
    }
}

/// One agency-event observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub agency_id: String,
    pub event_id: String,
    pub week: u32,
    pub quarter: u32,
    pub league_id: String,
    pub sport: Sport,
    pub n_outcomes: u8,
    pub treated: bool,
    pub post: bool,
    pub policy: PolicyKind,
    pub policy_active: bool,
    pub posted_price: f64,
    pub effective_price: f64,
    /// Outcome probabilities behind the odds, retained for audit.
    pub true_probabilities: Option<Vec<f64>>,
}

struct EventDraw {
    event_id: String,
    league_idx: usize,
    week: u32,
    ordinal: u64,
    probabilities: Vec<f64>,
    max_probability: f64,
}

fn draw_event_probabilities(
    config: &DgpConfig,
    week: u32,
    league_idx: usize,
    slot: usize,
) -> Result<Vec<f64>> {
    let n = config.leagues[league_idx].sport.n_outcomes();
    let alpha = vec![config.dirichlet_concentration; n];
    let dirichlet = Dirichlet::new(&alpha)
        .map_err(|e| Error::computation(format!("dirichlet setup failed: {e}")))?;
    for attempt in 0..=config.max_retries as u64 {
        let mut rng = StreamKey::new(config.master_seed)
            .with(DOMAIN_EVENT)
            .with(week as u64)
            .with(league_idx as u64)
            .with(slot as u64)
            .with(attempt)
            .rng();
        let probs = dirichlet.sample(&mut rng);
        let max = probs.iter().cloned().fold(0.0, f64::max);
        let min = probs.iter().cloned().fold(1.0, f64::min);
        if max <= config.max_outcome_probability && min >= config.min_outcome_probability {
            return Ok(probs);
        }
    }
    Err(Error::computation(format!(
        "no admissible outcome probabilities for week {week} league {league_idx} slot {slot} \
         after {} retries",
        config.max_retries
    )))
}

fn generate_events(config: &DgpConfig) -> Result<Vec<EventDraw>> {
    let mut events = Vec::new();
    let mut ordinal = 0u64;
    for week in 0..config.n_weeks {
        for (league_idx, league) in config.leagues.iter().enumerate() {
            for slot in 0..league.events_per_week {
                let probabilities = draw_event_probabilities(config, week, league_idx, slot)?;
                let max_probability = probabilities.iter().cloned().fold(0.0, f64::max);
                events.push(EventDraw {
                    event_id: format!("e{week:03}_{league_idx:02}_{slot:02}"),
                    league_idx,
                    week,
                    ordinal,
                    probabilities,
                    max_probability,
                });
                ordinal += 1;
            }
        }
    }
    Ok(events)
}

fn generate_row(
    config: &DgpConfig,
    agency: &AgencySpec,
    agency_idx: usize,
    event: &EventDraw,
    time_effects: &[f64],
) -> Result<PanelRow> {
    let league = &config.leagues[event.league_idx];
    let week = event.week;
    let quarter = week / config.weeks_per_quarter;
    let post = week >= config.reform_week;
    let policy_active = agency.policy != PolicyKind::NoShroud
        && agency.policy_start_week.is_some_and(|start| week >= start);

    let shock = if config.cluster_shock_sd > 0.0 {
        let mut rng = StreamKey::new(config.master_seed)
            .with(DOMAIN_SHOCK)
            .with(agency_idx as u64)
            .with(quarter as u64)
            .rng();
        let normal = Normal::new(0.0, config.cluster_shock_sd)
            .map_err(|e| Error::computation(e.to_string()))?;
        normal.sample(&mut rng)
    } else {
        0.0
    };

    let base = config.base_price
        + agency.agency_effect
        + time_effects[week as usize]
        + league.league_effect
        + injected_effect(agency, week, config)
        + shock;

    let policy = if policy_active {
        ShroudingPolicy::new(agency.policy, config.tax_rate)?
    } else {
        ShroudingPolicy::no_shroud()
    };

    let price_cap = 1.0 - event.max_probability - 1e-6;
    for attempt in 0..=config.max_retries as u64 {
        let noise = if config.noise_sd > 0.0 {
            let mut rng = StreamKey::new(config.master_seed)
                .with(DOMAIN_NOISE)
                .with(agency_idx as u64)
                .with(event.ordinal)
                .with(attempt)
                .rng();
            rng.sample(
                Normal::new(0.0, config.noise_sd).map_err(|e| Error::computation(e.to_string()))?,
            )
        } else {
            0.0
        };
        let target_effective = base + noise;
        if target_effective <= 1e-6 || target_effective >= price_cap {
            continue;
        }

        // Posted markup that makes the policy-composed effective price hit
        // the target exactly.
        let effective_markup = 1.0 / (1.0 - target_effective);
        let posted_markup = match policy.kind {
            PolicyKind::NoShroud => effective_markup,
            PolicyKind::DeductFromWinnings => effective_markup * (1.0 - policy.rate),
            PolicyKind::DeductFromWager => effective_markup / (1.0 + policy.rate),
        };
        let posted_odds: Vec<f64> = event
            .probabilities
            .iter()
            .map(|p| 1.0 / (posted_markup * p))
            .collect();
        let posted = EventQuote::new(event.event_id.clone(), posted_odds)?;
        let decomposition = PriceDecomposition::compute(&posted, &policy)?;

        return Ok(PanelRow {
            agency_id: agency.agency_id.clone(),
            event_id: event.event_id.clone(),
            week,
            quarter,
            league_id: league.league_id.clone(),
            sport: league.sport,
            n_outcomes: league.sport.n_outcomes() as u8,
            treated: agency.treated,
            post,
            policy: agency.policy,
            policy_active,
            posted_price: decomposition.posted_price,
            effective_price: decomposition.effective_price,
            true_probabilities: Some(event.probabilities.clone()),
        });
    }
    Err(Error::computation(format!(
        "no feasible price for agency {} event {} after {} retries \
         (base {base}, cap {price_cap})",
        agency.agency_id, event.event_id, config.max_retries
    )))
}

/// Generates the full panel in canonical order (agency, week, event).
///
/// Deterministic in the master seed; agencies are generated in parallel and
/// concatenated in roster order.
pub fn generate_panel(config: &DgpConfig) -> Result<Vec<PanelRow>> {
    config.validate()?;
    let roster = config.agency_roster();
    let events = generate_events(config)?;
    let time_effects = config.time_effects();

    let per_agency: Vec<Result<Vec<PanelRow>>> = roster
        .par_iter()
        .enumerate()
        .map(|(agency_idx, agency)| {
            events
                .iter()
                .map(|event| generate_row(config, agency, agency_idx, event, &time_effects))
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(roster.len() * events.len());
    for agency_rows in per_agency {
        rows.extend(agency_rows?);
    }
    Ok(rows)
}

/// Nearest-rank quantile of a sorted slice.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Drops rows whose effective price falls outside the per-quarter
/// `[lower, upper]` nearest-rank quantiles.
pub fn trim_quantiles(rows: Vec<PanelRow>, lower: f64, upper: f64) -> Result<Vec<PanelRow>> {
    if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower >= upper {
        return Err(Error::validation(format!(
            "quantile bounds must satisfy 0 <= lower < upper <= 1, got {lower}/{upper}"
        )));
    }
    if rows.is_empty() {
        return Err(Error::validation(
            "cannot trim an empty panel: no quarter groups",
        ));
    }
    let max_quarter = rows.iter().map(|r| r.quarter).max().unwrap() as usize;
    let mut grouped: Vec<Vec<f64>> = vec![Vec::new(); max_quarter + 1];
    for row in &rows {
        grouped[row.quarter as usize].push(row.effective_price);
    }
    let mut bounds: Vec<Option<(f64, f64)>> = Vec::with_capacity(grouped.len());
    for group in &mut grouped {
        if group.is_empty() {
            bounds.push(None);
            continue;
        }
        group.sort_by(|a, b| a.total_cmp(b));
        bounds.push(Some((
            nearest_rank(group, lower),
            nearest_rank(group, upper),
        )));
    }
    Ok(rows
        .into_iter()
        .filter(|row| {
            let (lo, hi) = bounds[row.quarter as usize].expect("group exists for row");
            row.effective_price >= lo && row.effective_price <= hi
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Small but structurally complete configuration for fast tests.
    pub(crate) fn small_config() -> DgpConfig {
        let mut config = DgpConfig::default();
        config.n_control_agencies = 8;
        config.n_weeks = 130;
        config.reform_week = 104; // 8 pre-reform quarters of 13 weeks
        config.leagues.truncate(4);
        for league in &mut config.leagues {
            league.events_per_week = 1;
        }
        config.treated_agencies = vec![
            AgencySpec {
                agency_id: "t01".into(),
                treated: true,
                policy: PolicyKind::DeductFromWinnings,
                policy_start_week: Some(104),
                agency_effect: -0.002,
                target_posted_response: 0.0086,
            },
            AgencySpec {
                agency_id: "t02".into(),
                treated: true,
                policy: PolicyKind::DeductFromWager,
                policy_start_week: Some(117),
                agency_effect: 0.000,
                target_posted_response: 0.0086,
            },
            AgencySpec {
                agency_id: "t03".into(),
                treated: true,
                policy: PolicyKind::NoShroud,
                policy_start_week: None,
                agency_effect: 0.002,
                target_posted_response: 0.0086,
            },
        ];
        config
    }

    #[test]
    fn deterministic_additive_process_without_noise() {
        let mut config = small_config();
        config.noise_sd = 0.0;
        config.cluster_shock_sd = 0.0;
        config.shroud_active_effect = 0.0;
        for agency in &mut config.treated_agencies {
            agency.target_posted_response = 0.0;
        }
        let time_effects = config.time_effects();
        let roster = config.agency_roster();
        let rows = generate_panel(&config).unwrap();
        for row in &rows {
            let agency = roster
                .iter()
                .find(|a| a.agency_id == row.agency_id)
                .unwrap();
            let league = config
                .leagues
                .iter()
                .find(|l| l.league_id == row.league_id)
                .unwrap();
            let expected = config.base_price
                + agency.agency_effect
                + time_effects[row.week as usize]
                + league.league_effect;
            assert_abs_diff_eq!(row.effective_price, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn emitted_prices_satisfy_surcharge_identity() {
        let config = small_config();
        let rows = generate_panel(&config).unwrap();
        assert_eq!(
            rows.len(),
            11 * config.n_weeks as usize * config.leagues.len()
        );
        for row in rows.iter().step_by(97) {
            let probs = row.true_probabilities.as_ref().unwrap();
            let posted_markup = 1.0 / (1.0 - row.posted_price);
            let posted_odds: Vec<f64> = probs.iter().map(|p| 1.0 / (posted_markup * p)).collect();
            let posted = EventQuote::new(row.event_id.clone(), posted_odds).unwrap();
            let policy = if row.policy_active {
                ShroudingPolicy::new(row.policy, config.tax_rate).unwrap()
            } else {
                ShroudingPolicy::no_shroud()
            };
            let surcharge = policy.surcharge(&posted);
            assert_abs_diff_eq!(
                row.effective_price,
                row.posted_price + surcharge,
                epsilon = 1e-9
            );
            if !row.policy_active {
                assert_eq!(row.posted_price, row.effective_price);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_identical_rows() {
        let config = small_config();
        let a = generate_panel(&config).unwrap();
        let b = generate_panel(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let config = small_config();
        let mut other = small_config();
        other.master_seed = 43;
        let a = generate_panel(&config).unwrap();
        let b = generate_panel(&other).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn no_policy_active_before_reform() {
        let rows = generate_panel(&small_config()).unwrap();
        assert!(rows.iter().all(|r| r.post || !r.policy_active));
        // Staggered adopter switches on only at its start week.
        let adopter: Vec<&PanelRow> = rows.iter().filter(|r| r.agency_id == "t02").collect();
        assert!(adopter.iter().all(|r| (r.week >= 117) == r.policy_active));
    }

    #[test]
    fn injected_effect_schedule() {
        let config = small_config();
        let control = &config.agency_roster()[0];
        assert!(!control.treated);
        assert_eq!(injected_effect(control, 120, &config), 0.0);

        let shrouder = &config.treated_agencies[0];
        assert_eq!(injected_effect(shrouder, 50, &config), 0.0);
        assert_eq!(
            injected_effect(shrouder, 104, &config),
            config.shroud_active_effect
        );

        let late = &config.treated_agencies[1];
        assert_eq!(
            injected_effect(late, 110, &config),
            late.target_posted_response
        );
        assert_eq!(
            injected_effect(late, 117, &config),
            config.shroud_active_effect
        );

        let transparent = &config.treated_agencies[2];
        assert_eq!(injected_effect(transparent, 104, &config), 0.0086);
        assert_eq!(injected_effect(transparent, 50, &config), 0.0);
    }

    #[test]
    fn linear_ramp_profile_rises_to_target() {
        let mut config = small_config();
        config.unshrouded_profile = EffectProfile::LinearRamp;
        let transparent = &config.treated_agencies[2];
        let at_reform = injected_effect(transparent, config.reform_week, &config);
        let last = injected_effect(transparent, config.n_weeks - 1, &config);
        assert_abs_diff_eq!(at_reform, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(last, transparent.target_posted_response, epsilon = 1e-12);
    }

    #[test]
    fn pooled_mean_matches_default_calibration() {
        // The grand mean is level-calibrated; a thinner event calendar keeps
        // the same mean, so the check stays cheap.
        let mut config = DgpConfig::default();
        for league in &mut config.leagues {
            league.events_per_week = 1;
        }
        config.n_weeks = 507;
        let rows = generate_panel(&config).unwrap();
        let mean: f64 = rows.iter().map(|r| r.effective_price).sum::<f64>() / rows.len() as f64;
        assert!((mean - 0.0706).abs() < 0.005, "pooled mean {mean}");
    }

    #[test]
    fn trim_identity_and_degenerate_groups() {
        let rows = generate_panel(&small_config()).unwrap();
        let n = rows.len();
        let kept = trim_quantiles(rows, 0.0, 1.0).unwrap();
        assert_eq!(kept.len(), n);
    }

    #[test]
    fn trim_removes_extreme_outlier() {
        let config = small_config();
        let mut rows = generate_panel(&config).unwrap();
        // Make one row an extreme outlier within its quarter.
        rows[10].effective_price = 0.5;
        let quarter = rows[10].quarter;
        let event = rows[10].event_id.clone();
        let agency = rows[10].agency_id.clone();
        let group_n = rows.iter().filter(|r| r.quarter == quarter).count();
        assert!(group_n > 100);

        // Oracle: sort-and-slice the quarter's prices.
        let mut prices: Vec<f64> = rows
            .iter()
            .filter(|r| r.quarter == quarter)
            .map(|r| r.effective_price)
            .collect();
        prices.sort_by(|a, b| a.total_cmp(b));
        let hi = prices[((0.99 * group_n as f64).ceil() as usize).clamp(1, group_n) - 1];
        assert!(hi < 0.5);

        let kept = trim_quantiles(rows, 0.01, 0.99).unwrap();
        assert!(!kept
            .iter()
            .any(|r| r.agency_id == agency && r.event_id == event));
    }

    #[test]
    fn trim_keeps_identical_prices() {
        let mut rows = generate_panel(&small_config()).unwrap();
        for row in &mut rows {
            row.effective_price = 0.07;
        }
        let n = rows.len();
        let kept = trim_quantiles(rows, 0.01, 0.99).unwrap();
        assert_eq!(kept.len(), n);
    }

    #[test]
    fn trim_validates_bounds_and_empty_input() {
        assert!(trim_quantiles(Vec::new(), 0.01, 0.99).is_err());
        let rows = generate_panel(&small_config()).unwrap();
        assert!(trim_quantiles(rows, 0.99, 0.01).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_schedules() {
        let mut config = small_config();
        config.reform_week = config.n_weeks;
        assert!(config.validate().is_err());

        let mut config = small_config();
        config.treated_agencies[0].policy_start_week = Some(10);
        assert!(config.validate().is_err());

        let mut config = small_config();
        config.treated_agencies[2].policy_start_week = Some(120);
        assert!(config.validate().is_err());

        let mut config = small_config();
        config.treated_agencies[0].policy_start_week = None;
        assert!(config.validate().is_err());
    }

    #[test]
    fn quarter_path_tracks_staggered_adoption() {
        let config = DgpConfig::default();
        let path = config.injected_quarter_path();
        assert_eq!(path.len(), 26);
        // Ramp-up over the first quarters, then a plateau.
        assert!(path[0] < path[3], "path should rise: {path:?}");
        assert!(path[3] > 0.9 * path[13]);
        // Late bump when the last adopter switches on.
        assert!(path[25] > path[13]);
    }
}
