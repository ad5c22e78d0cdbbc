//! Subcommand implementations.
//!
//! Every run resolves its configuration, computes, writes the artifact(s),
//! and drops a manifest beside the primary output. Artifacts are pure
//! functions of (configuration, seed, version); manifests additionally
//! record wall time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bettax::datagen::{self, DgpConfig};
use bettax::econometrics::{
    did_average, did_heterogeneous, event_study, event_study_heterogeneous, passthrough_from_beta,
    ClusterBy, FeDimension, RegressionFit, RegressionSpec, SampleFilter, TimeGranularity,
};
use bettax::equilibrium::{
    aggregate_welfare, demand_quantity, first_best_quantity, first_best_welfare,
    second_best_tax_sweep, segmented_equilibrium, verify_equilibrium as verify_profile,
    DeviationGrid, MarketConfig, StrategyProfile,
};
use bettax::error::{Error, Result};
use bettax::rng::StreamKey;
use bettax::theory::{
    incidence_salience, optimal_sin_tax, passthrough_competitive, passthrough_monopoly, Elasticity,
    ElasticityInputs, SinTaxInputs,
};

use crate::{ClusterArg, DesignArg, FilterArg};

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    /// SHA-256 of the resolved configuration (canonical JSON).
    config_hash: String,
    master_seed: Option<u64>,
    artifacts: Vec<String>,
    tool_version: String,
    wall_time_secs: f64,
}

fn config_hash<T: Serialize>(resolved: &T) -> Result<String> {
    let canonical = serde_json::to_string(resolved)
        .map_err(|e| Error::computation(format!("cannot serialize config: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_manifest(
    primary_out: &Path,
    subcommand: &str,
    config_hash: String,
    master_seed: Option<u64>,
    artifacts: Vec<&Path>,
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config_hash,
        master_seed,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let path = manifest_path(primary_out);
    write_json(&path, &manifest)
}

fn manifest_path(primary_out: &Path) -> PathBuf {
    let mut name = primary_out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary_out.with_file_name(name)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let file = File::open(path)
        .map_err(|e| Error::validation(format!("cannot open {what} {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::validation(format!("bad {what} {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::computation(format!("cannot write {}: {e}", path.display())))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn simulate(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    with_probabilities: bool,
) -> Result<()> {
    let started = Instant::now();
    let mut cfg: DgpConfig = match config {
        Some(path) => read_json(path, "generator config")?,
        None => DgpConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;

    let rows = datagen::generate_panel(&cfg)?;
    if with_probabilities {
        datagen::io::write_panel_with_probabilities(out, &rows)?;
    } else {
        datagen::io::write_panel(out, &rows)?;
    }
    write_manifest(
        out,
        "simulate",
        config_hash(&cfg)?,
        Some(cfg.master_seed),
        vec![out],
        started,
    )
}

pub struct EstimateArgs {
    pub panel: PathBuf,
    pub design: DesignArg,
    pub fe: Option<String>,
    pub cluster: ClusterArg,
    pub baseline: i32,
    pub filter: FilterArg,
    pub domestic_prefix: String,
    pub tax: f64,
    pub out: PathBuf,
    pub coefficients_csv: Option<PathBuf>,
}

/// Point on an event-study path after the reporting transform.
#[derive(Serialize, Deserialize)]
pub struct PathPoint {
    pub k: i32,
    pub estimate: f64,
    pub std_error: f64,
}

/// Shrouded and unshrouded dynamic paths from the interacted design:
/// shrouded is the base lag coefficient, unshrouded adds the interaction.
#[derive(Serialize, Deserialize)]
pub struct EventPaths {
    pub shrouded: Vec<PathPoint>,
    pub unshrouded: Vec<PathPoint>,
}

/// Artifact written by `estimate`.
#[derive(Serialize, Deserialize)]
pub struct EstimateReport {
    pub design: String,
    pub tax: f64,
    /// Pass-through implied by the average treatment coefficient.
    pub passthrough: Option<f64>,
    pub event_paths: Option<EventPaths>,
    pub fit: RegressionFit,
}

fn parse_fe(tokens: &str) -> Result<(Vec<FeDimension>, Option<TimeGranularity>)> {
    let mut dims = Vec::new();
    let mut granularity = None;
    for token in tokens.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token {
            "agency" => dims.push(FeDimension::Agency),
            "league" => dims.push(FeDimension::League),
            "league_agency" => dims.push(FeDimension::LeagueByAgency),
            "week" | "quarter" => {
                let wanted = if token == "week" {
                    TimeGranularity::Week
                } else {
                    TimeGranularity::Quarter
                };
                if granularity.is_some_and(|g| g != wanted) {
                    return Err(Error::validation(
                        "cannot absorb both week and quarter time effects",
                    ));
                }
                granularity = Some(wanted);
                if !dims.contains(&FeDimension::Time) {
                    dims.push(FeDimension::Time);
                }
            }
            other => {
                return Err(Error::validation(format!(
                    "unknown fixed effect '{other}' (expected agency, week, quarter, league, \
                     league_agency)"
                )))
            }
        }
    }
    if dims.is_empty() {
        return Err(Error::validation("no fixed effects given"));
    }
    Ok((dims, granularity))
}

fn event_paths_from(fit: &RegressionFit) -> Option<EventPaths> {
    let mut shrouded = Vec::new();
    let mut unshrouded = Vec::new();
    let index_of = |name: &str| fit.coefficients.iter().position(|c| c.name == name);
    for (pos, c) in fit.coefficients.iter().enumerate() {
        let Some(k) = c.name.strip_prefix('D').and_then(|s| s.parse::<i32>().ok()) else {
            continue;
        };
        shrouded.push(PathPoint {
            k,
            estimate: c.estimate,
            std_error: c.std_error,
        });
        if k >= 0 {
            if let Some(ipos) = index_of(&format!("DxNS{k}")) {
                let ic = &fit.coefficients[ipos];
                let variance = fit.covariance[(pos, pos)]
                    + fit.covariance[(ipos, ipos)]
                    + 2.0 * fit.covariance[(pos, ipos)];
                unshrouded.push(PathPoint {
                    k,
                    estimate: c.estimate + ic.estimate,
                    std_error: variance.max(0.0).sqrt(),
                });
            }
        }
    }
    if shrouded.is_empty() {
        None
    } else {
        Some(EventPaths {
            shrouded,
            unshrouded,
        })
    }
}

fn write_coefficients_csv(path: &Path, report: &EstimateReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "name,k,interacted,estimate,std_error,t_stat,rho")?;
    for c in &report.fit.coefficients {
        let (k, interacted) = if let Some(k) = c.name.strip_prefix("DxNS") {
            (k.parse::<i32>().ok(), true)
        } else if let Some(k) = c.name.strip_prefix('D') {
            (k.parse::<i32>().ok(), false)
        } else {
            (None, false)
        };
        let k_field = k.map(|v| v.to_string()).unwrap_or_default();
        let rho = c.estimate / report.tax;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.name, k_field, interacted as u8, c.estimate, c.std_error, c.t_stat, rho
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let started = Instant::now();
    if !(args.tax > 0.0) {
        return Err(Error::validation(format!(
            "tax {} must be positive",
            args.tax
        )));
    }

    let mut spec = match args.design {
        DesignArg::Did | DesignArg::DidHet => RegressionSpec::did_default(),
        DesignArg::EventStudy | DesignArg::EventStudyHet => RegressionSpec::event_study_default(),
    };
    if let Some(fe) = &args.fe {
        let (dims, granularity) = parse_fe(fe)?;
        spec.fixed_effects = dims;
        if let Some(granularity) = granularity {
            spec.time_granularity = granularity;
        }
    }
    spec.cluster = match args.cluster {
        ClusterArg::Agency => ClusterBy::Agency,
        ClusterArg::League => ClusterBy::League,
    };
    spec.baseline = args.baseline;
    spec.filter = match args.filter {
        FilterArg::All => SampleFilter::All,
        FilterArg::SoccerOnly => SampleFilter::SoccerOnly,
        FilterArg::ExclCross => SampleFilter::ExcludeCross {
            domestic_prefix: args.domestic_prefix.clone(),
        },
    };

    let panel = datagen::io::read_panel(&args.panel)?;
    let fit = match args.design {
        DesignArg::Did => did_average(&panel, &spec)?,
        DesignArg::EventStudy => event_study(&panel, &spec)?,
        DesignArg::DidHet => did_heterogeneous(&panel, &spec)?,
        DesignArg::EventStudyHet => event_study_heterogeneous(&panel, &spec)?,
    };

    let passthrough = fit
        .coefficient("T")
        .map(|c| passthrough_from_beta(c.estimate, args.tax))
        .transpose()?;
    let event_paths = if args.design == DesignArg::EventStudyHet {
        event_paths_from(&fit)
    } else {
        None
    };
    let report = EstimateReport {
        design: fit.design.clone(),
        tax: args.tax,
        passthrough,
        event_paths,
        fit,
    };
    write_json(&args.out, &report)?;

    let mut artifacts = vec![args.out.as_path()];
    if let Some(csv_path) = &args.coefficients_csv {
        write_coefficients_csv(csv_path, &report)?;
        artifacts.push(csv_path.as_path());
    }
    write_manifest(
        &args.out,
        "estimate",
        config_hash(&spec)?,
        None,
        artifacts,
        started,
    )
}

#[derive(Deserialize, Serialize)]
struct TheoryRequest {
    #[serde(default)]
    elasticities: Option<ElasticityInputs>,
    #[serde(default)]
    sin_tax: Option<SinTaxInputs>,
}

#[derive(Serialize)]
struct CompetitiveBlock {
    passthrough: f64,
    demand_elasticity: f64,
    supply_elasticity: Elasticity,
}

#[derive(Serialize)]
struct MonopolyBlock {
    passthrough: f64,
    supply_term: f64,
    surplus_term: f64,
    denominator: f64,
}

#[derive(Serialize)]
struct SalienceBlock {
    consumer_incidence: f64,
    producer_incidence: f64,
    salience: f64,
    price_ratio: f64,
}

#[derive(Serialize)]
struct SinTaxBlock {
    optimal_tax: f64,
    pigouvian_tax: f64,
    attention: f64,
    tax_dollars_per_harm_dollar: f64,
}

#[derive(Serialize)]
struct TheoryReport {
    competitive: Option<CompetitiveBlock>,
    monopoly: Option<MonopolyBlock>,
    salience: Option<SalienceBlock>,
    sin_tax: Option<SinTaxBlock>,
}

pub fn theory(config: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let request: TheoryRequest = read_json(config, "theory parameters")?;
    if request.elasticities.is_none() && request.sin_tax.is_none() {
        return Err(Error::validation(
            "theory parameters need an 'elasticities' and/or 'sin_tax' block",
        ));
    }

    let mut report = TheoryReport {
        competitive: None,
        monopoly: None,
        salience: None,
        sin_tax: None,
    };
    if let Some(inputs) = &request.elasticities {
        report.competitive = Some(CompetitiveBlock {
            passthrough: passthrough_competitive(inputs)?,
            demand_elasticity: inputs.demand_elasticity,
            supply_elasticity: inputs.supply_elasticity,
        });
        let supply_term = match inputs.supply_elasticity {
            Elasticity::Infinite => 0.0,
            Elasticity::Finite(s) => (inputs.demand_elasticity - 1.0) / s,
        };
        let surplus_term = 1.0 / inputs.marginal_surplus_elasticity;
        report.monopoly = Some(MonopolyBlock {
            passthrough: passthrough_monopoly(inputs)?,
            supply_term,
            surplus_term,
            denominator: 1.0 + supply_term + surplus_term,
        });
        let incidence = incidence_salience(inputs)?;
        report.salience = Some(SalienceBlock {
            consumer_incidence: incidence.consumer,
            producer_incidence: incidence.producer,
            salience: inputs.salience,
            price_ratio: inputs.consumer_price / inputs.producer_price,
        });
    }
    if let Some(raw) = &request.sin_tax {
        let inputs = SinTaxInputs::new(raw.internalized_share, raw.attention, raw.marginal_harm)?;
        let optimal = optimal_sin_tax(&inputs)?;
        report.sin_tax = Some(SinTaxBlock {
            optimal_tax: optimal,
            pigouvian_tax: (1.0 - inputs.internalized_share) * inputs.marginal_harm,
            attention: inputs.attention,
            tax_dollars_per_harm_dollar: 1.0 / inputs.attention,
        });
    }

    write_json(out, &report)?;
    write_manifest(
        out,
        "theory",
        config_hash(&request)?,
        None,
        vec![out],
        started,
    )
}

#[derive(Deserialize, Serialize)]
struct EquilibriumRequest {
    market: MarketConfig,
    #[serde(default)]
    profile: Option<StrategyProfile>,
    #[serde(default)]
    grid: Option<DeviationGrid>,
}

pub fn verify_equilibrium(config: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let request: EquilibriumRequest = read_json(config, "equilibrium config")?;
    request.market.validate()?;
    let profile = match &request.profile {
        Some(profile) => profile.clone(),
        None => segmented_equilibrium(&request.market)?,
    };
    let grid = request
        .grid
        .clone()
        .unwrap_or_else(|| DeviationGrid::default_for(&request.market));
    let report = verify_profile(&profile, &request.market, &grid)?;
    write_json(out, &report)?;
    write_manifest(
        out,
        "verify-equilibrium",
        config_hash(&request)?,
        None,
        vec![out],
        started,
    )
}

#[derive(Deserialize, Serialize)]
struct SweepRequest {
    market: MarketConfig,
    #[serde(default)]
    lo: f64,
    #[serde(default)]
    hi: Option<f64>,
    #[serde(default)]
    step: Option<f64>,
}

pub fn tax_sweep(config: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let request: SweepRequest = read_json(config, "sweep config")?;
    let market = &request.market;
    market.validate()?;
    let pigouvian = (1.0 - market.internalized_share) * market.prefs.marginal_harm;
    let reference = if market.attention > 0.0 {
        pigouvian / market.attention
    } else {
        pigouvian
    };
    let hi = request.hi.unwrap_or(1.5 * reference);
    let step = request.step.unwrap_or(pigouvian / 400.0);
    let sweep = second_best_tax_sweep(market, request.lo, hi, step)?;
    write_json(out, &sweep)?;
    write_manifest(
        out,
        "tax-sweep",
        config_hash(&request)?,
        None,
        vec![out],
        started,
    )
}

fn default_attention_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75]
}
fn default_share_grid() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}
fn default_disutility_grid() -> Vec<f64> {
    vec![0.0, 0.005, 0.01]
}
fn default_homogeneous_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_internalized_grid() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}
fn default_sweep_points() -> usize {
    1000
}
fn default_sweep_seed() -> u64 {
    7
}

#[derive(Deserialize, Serialize)]
struct VerifyTheoryRequest {
    #[serde(default)]
    market: MarketConfig,
    /// Firm counts for the segmented-equilibrium checks.
    #[serde(default)]
    n_firms_grid: Option<Vec<usize>>,
    #[serde(default = "default_share_grid")]
    attentive_share_grid: Vec<f64>,
    #[serde(default = "default_attention_grid")]
    attention_grid: Vec<f64>,
    #[serde(default = "default_disutility_grid")]
    disutility_grid: Vec<f64>,
    #[serde(default = "default_homogeneous_grid")]
    homogeneous_attention_grid: Vec<f64>,
    #[serde(default = "default_internalized_grid")]
    internalized_share_grid: Vec<f64>,
    #[serde(default = "default_sweep_points")]
    salience_sweep_points: usize,
    #[serde(default = "default_sweep_seed")]
    salience_sweep_seed: u64,
    /// An explicit profile to verify against the base market.
    #[serde(default)]
    profile: Option<StrategyProfile>,
}

#[derive(Serialize)]
struct Check {
    name: String,
    passed: bool,
    details: String,
}

#[derive(Serialize)]
struct VerifyTheoryReport {
    checks: Vec<Check>,
    all_passed: bool,
}

pub fn verify_theory(config: Option<&Path>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let request: VerifyTheoryRequest = match config {
        Some(path) => read_json(path, "verify-theory config")?,
        None => serde_json::from_str("{}").expect("defaults"),
    };
    let market = request.market;
    market.validate()?;
    let n_grid = request
        .n_firms_grid
        .clone()
        .unwrap_or_else(|| vec![market.n_firms]);

    let mut checks = Vec::new();

    // Corrective tax restores the first best under homogeneous attention.
    {
        let mut worst_quantity_gap = 0.0f64;
        let mut worst_welfare_gap = 0.0f64;
        for &attention in &request.homogeneous_attention_grid {
            for &share in &request.internalized_share_grid {
                let mut cfg = market;
                cfg.attentive_share = 0.0;
                cfg.attention = attention;
                cfg.internalized_share = share;
                cfg.tax = optimal_sin_tax(&SinTaxInputs::new(
                    share,
                    attention,
                    cfg.prefs.marginal_harm,
                )?)?;
                cfg.validate()?;
                let x_star = first_best_quantity(&cfg.prefs, cfg.marginal_cost)?;
                let perceived = cfg.marginal_cost + attention * cfg.tax;
                let x = demand_quantity(perceived, &cfg.prefs, share);
                worst_quantity_gap = worst_quantity_gap.max((x - x_star).abs());
                let profile = segmented_equilibrium(&cfg)?;
                let welfare = aggregate_welfare(&profile, &cfg)?;
                worst_welfare_gap =
                    worst_welfare_gap.max((welfare - first_best_welfare(&cfg)?).abs());
            }
        }
        checks.push(Check {
            name: "corrective_tax_first_best".into(),
            passed: worst_quantity_gap <= 1e-12 && worst_welfare_gap <= 1e-9,
            details: format!(
                "max quantity gap {worst_quantity_gap:.3e}, max welfare gap {worst_welfare_gap:.3e}"
            ),
        });
    }

    // Segmented equilibrium survives deviations over the parameter grid.
    {
        let mut max_gain = f64::NEG_INFINITY;
        let mut max_profit = 0.0f64;
        let mut all_verified = true;
        for &n in &n_grid {
            for &share in &request.attentive_share_grid {
                for &attention in &request.attention_grid {
                    for &disutility in &request.disutility_grid {
                        let mut cfg = market;
                        cfg.n_firms = n;
                        cfg.attentive_share = share;
                        cfg.attention = attention;
                        cfg.shroud_disutility = disutility;
                        let profile = segmented_equilibrium(&cfg)?;
                        let report =
                            verify_profile(&profile, &cfg, &DeviationGrid::default_for(&cfg))?;
                        all_verified &= report.verified;
                        max_gain = max_gain.max(report.max_gain);
                        for p in &report.profits {
                            max_profit = max_profit.max(p.abs());
                        }
                    }
                }
            }
        }
        checks.push(Check {
            name: "segmented_equilibrium_verified".into(),
            passed: all_verified && max_profit <= 1e-12,
            details: format!("max deviation gain {max_gain:.3e}, max |profit| {max_profit:.3e}"),
        });
    }

    // All-unshroud pricing is refuted by a shrouding undercut whenever some
    // consumers are inattentive.
    {
        let mut all_refuted = true;
        let mut witness = String::new();
        for &share in &request.attentive_share_grid {
            if !(share > 0.0 && share < 1.0) {
                continue;
            }
            for &attention in &request.attention_grid {
                if attention >= 1.0 {
                    continue;
                }
                let mut cfg = market;
                cfg.attentive_share = share;
                cfg.attention = attention;
                let profile =
                    StrategyProfile::symmetric_unshrouded(cfg.n_firms, cfg.marginal_cost + cfg.tax);
                let report = verify_profile(&profile, &cfg, &DeviationGrid::default_for(&cfg))?;
                let refuted = !report.verified
                    && report
                        .best_deviation
                        .is_some_and(|d| d.gain > 0.0 && d.strategy.shroud);
                if refuted && witness.is_empty() {
                    let d = report.best_deviation.unwrap();
                    witness = format!(
                        "e.g. share {share}, attention {attention}: firm {} shrouds at {:.4} \
                         for gain {:.3e}",
                        d.firm, d.strategy.posted_price, d.gain
                    );
                }
                all_refuted &= refuted;
            }
        }
        checks.push(Check {
            name: "all_unshroud_refuted".into(),
            passed: all_refuted,
            details: witness,
        });
    }

    // Fully shrouded taxes fall on consumers; full salience matches the
    // competitive split.
    {
        let mut rng = StreamKey::new(request.salience_sweep_seed).with(1).rng();
        let mut max_gap = 0.0f64;
        let mut shrouded_exact = true;
        for _ in 0..200 {
            let demand = rng.uniform_in(0.2, 4.2);
            let supply = rng.uniform_in(0.2, 4.2);
            let mut inputs = ElasticityInputs {
                demand_elasticity: demand,
                supply_elasticity: Elasticity::Finite(supply),
                marginal_surplus_elasticity: 1.0,
                salience: 0.0,
                consumer_price: 1.0,
                producer_price: 1.0,
            };
            shrouded_exact &= incidence_salience(&inputs)?.consumer == 1.0;
            inputs.salience = 1.0;
            let incidence = incidence_salience(&inputs)?;
            let competitive = passthrough_competitive(&inputs)?;
            max_gap = max_gap.max((incidence.consumer - competitive).abs());
        }
        checks.push(Check {
            name: "salience_boundary_cases".into(),
            passed: shrouded_exact && max_gap <= 1e-12,
            details: format!("max |full-salience - competitive| {max_gap:.3e}"),
        });
    }

    // Monopoly over-shifting happens exactly when the marginal-surplus
    // elasticity is negative (perfectly elastic supply, valid denominators).
    {
        let mut rng = StreamKey::new(request.salience_sweep_seed).with(2).rng();
        let mut tested = 0usize;
        let mut agree = true;
        while tested < request.salience_sweep_points {
            let demand = rng.uniform_in(0.2, 5.0);
            let magnitude = rng.uniform_in(0.05, 5.05);
            let ms = if rng.coin_flip() {
                magnitude
            } else {
                -magnitude
            };
            let inputs = ElasticityInputs {
                demand_elasticity: demand,
                supply_elasticity: Elasticity::Infinite,
                marginal_surplus_elasticity: ms,
                salience: 1.0,
                consumer_price: 1.0,
                producer_price: 1.0,
            };
            let denominator = 1.0 + 1.0 / ms;
            if denominator <= 1e-6 {
                continue;
            }
            tested += 1;
            let rho = passthrough_monopoly(&inputs)?;
            agree &= (rho > 1.0) == (ms < 0.0);
        }
        checks.push(Check {
            name: "monopoly_overshifting_iff_negative_surplus_elasticity".into(),
            passed: agree,
            details: format!("{tested} valid parameter points"),
        });
    }

    if let Some(profile) = &request.profile {
        let report = verify_profile(profile, &market, &DeviationGrid::default_for(&market))?;
        let details = match report.best_deviation {
            Some(d) => format!(
                "best deviation: firm {} to posted {:.4} (shroud: {}) for gain {:.3e}",
                d.firm, d.strategy.posted_price, d.strategy.shroud, d.gain
            ),
            None => "no deviation candidates".to_string(),
        };
        checks.push(Check {
            name: "supplied_profile_verified".into(),
            passed: report.verified,
            details,
        });
    }

    let all_passed = checks.iter().all(|c| c.passed);
    let report = VerifyTheoryReport { checks, all_passed };
    write_json(out, &report)?;
    write_manifest(
        out,
        "verify-theory",
        config_hash(&request)?,
        None,
        vec![out],
        started,
    )
}

pub fn report(
    fits: &[PathBuf],
    out_dir: &Path,
    target_rho: Option<f64>,
    rho_tol: f64,
) -> Result<()> {
    let started = Instant::now();
    if fits.is_empty() {
        return Err(Error::validation("no estimate reports given"));
    }
    std::fs::create_dir_all(out_dir)?;

    let summary_path = out_dir.join("summary.txt");
    let mut summary = BufWriter::new(File::create(&summary_path)?);
    writeln!(
        summary,
        "{:<28} {:>10} {:>9} {:>4} {:>9} {:>8} {:>8}  status",
        "fit", "N", "beta_T", "G", "rho", "R2", "target"
    )?;

    let mut artifact_paths = vec![summary_path.clone()];
    for path in fits {
        let report: EstimateReport = read_json(path, "estimate report")?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("fit");
        let csv_path = out_dir.join(format!("{stem}_coefficients.csv"));
        write_coefficients_csv(&csv_path, &report)?;
        artifact_paths.push(csv_path);

        let beta = report.fit.coefficient("T").map(|c| c.estimate);
        let rho = report.passthrough;
        let status = match (rho, target_rho) {
            (Some(rho), Some(target)) => {
                if (rho - target).abs() <= rho_tol {
                    "PASS"
                } else {
                    "FAIL"
                }
            }
            _ => "-",
        };
        writeln!(
            summary,
            "{:<28} {:>10} {:>9} {:>4} {:>9} {:>8.3} {:>8}  {}",
            stem,
            report.fit.n_obs,
            beta.map(|b| format!("{b:.4}"))
                .unwrap_or_else(|| "-".into()),
            report.fit.n_clusters,
            rho.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into()),
            report.fit.r_squared,
            target_rho
                .map(|t| format!("{t:.2}"))
                .unwrap_or_else(|| "-".into()),
            status
        )?;
    }
    summary.flush()?;

    let primary = out_dir.join("summary.txt");
    write_manifest(
        &primary,
        "report",
        config_hash(&(target_rho, rho_tol))?,
        None,
        artifact_paths.iter().map(PathBuf::as_path).collect(),
        started,
    )
}
