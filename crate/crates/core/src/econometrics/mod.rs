//! Panel estimators: average and dynamic difference-in-differences with
//! high-dimensional fixed-effect absorption and agency-clustered inference.
//!
//! Every fit is a pure function of the panel rows and a [`RegressionSpec`]:
//! construct the treatment dummies, absorb the fixed effects by alternating
//! projections, solve by QR, and wrap the cluster-robust sandwich around the
//! result.

pub mod absorb;
pub mod ols;

use serde::{Deserialize, Serialize};

use crate::datagen::{PanelRow, Sport};
use crate::error::{Error, Result};

use absorb::{Absorber, AbsorptionDiagnostics, FixedEffectDim, ABSORB_MAX_ITER, ABSORB_TOL};
use ols::{cluster_covariance, ols};

/// Outcome column of a regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    EffectivePrice,
    PostedPrice,
}

/// Calendar resolution of the time fixed effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGranularity {
    Week,
    Quarter,
}

/// Fixed-effect dimensions that can be absorbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeDimension {
    Agency,
    Time,
    League,
    LeagueByAgency,
}

/// Row filters mirroring the samples used in the estimations.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFilter {
    All,
    SoccerOnly,
    /// Keep domestic leagues for treated agencies and foreign leagues for
    /// controls. Domestic leagues are identified by an id prefix.
    ExcludeCross {
        domestic_prefix: String,
    },
}

impl SampleFilter {
    fn keeps(&self, row: &PanelRow) -> bool {
        match self {
            SampleFilter::All => true,
            SampleFilter::SoccerOnly => row.sport == Sport::Soccer,
            SampleFilter::ExcludeCross { domestic_prefix } => {
                row.treated == row.league_id.starts_with(domestic_prefix.as_str())
            }
        }
    }
}

/// Clustering dimension for the sandwich covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterBy {
    Agency,
    League,
}

/// Full specification of one regression.
#[derive(Debug, Clone, Serialize)]
pub struct RegressionSpec {
    pub response: Response,
    pub fixed_effects: Vec<FeDimension>,
    pub time_granularity: TimeGranularity,
    pub cluster: ClusterBy,
    /// Omitted event-study period, in quarters relative to the reform.
    pub baseline: i32,
    pub filter: SampleFilter,
    pub absorb_tol: f64,
    pub absorb_max_iter: usize,
}

impl RegressionSpec {
    /// Average-effect default: agency, week, and league effects.
    pub fn did_default() -> Self {
        Self {
            response: Response::EffectivePrice,
            fixed_effects: vec![FeDimension::Agency, FeDimension::Time, FeDimension::League],
            time_granularity: TimeGranularity::Week,
            cluster: ClusterBy::Agency,
            baseline: -1,
            filter: SampleFilter::All,
            absorb_tol: ABSORB_TOL,
            absorb_max_iter: ABSORB_MAX_ITER,
        }
    }

    /// Event-study default: quarterly time effects for readable dynamics.
    pub fn event_study_default() -> Self {
        Self {
            time_granularity: TimeGranularity::Quarter,
            ..Self::did_default()
        }
    }
}

/// One estimated coefficient with its clustered standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
}

/// A fitted regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionFit {
    pub design: String,
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub k_regressors: usize,
    /// Model degrees of freedom consumed by absorbed fixed effects.
    pub df_absorbed: usize,
    /// Share of raw outcome variance explained including the absorbed
    /// effects.
    pub r_squared: f64,
    /// Share of within-transformed variance explained by the regressors.
    pub r_squared_within: f64,
    /// Sample mean of the outcome, reported in place of an intercept: with
    /// absorbed fixed effects a separate constant is not identified.
    pub grand_mean: f64,
    pub absorption: AbsorptionDiagnostics,
    /// Warnings, e.g. event-study cells dropped for lack of data.
    pub notes: Vec<String>,
    #[serde(skip, default = "empty_covariance")]
    pub covariance: nalgebra::DMatrix<f64>,
}

fn empty_covariance() -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::zeros(0, 0)
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Event-study coefficients as `(k, estimate, se, interacted)` rows.
    pub fn event_rows(&self) -> Vec<(i32, f64, f64, bool)> {
        let mut rows = Vec::new();
        for c in &self.coefficients {
            if let Some(k) = c.name.strip_prefix("DxNS") {
                if let Ok(k) = k.parse() {
                    rows.push((k, c.estimate, c.std_error, true));
                }
            } else if let Some(k) = c.name.strip_prefix('D') {
                if let Ok(k) = k.parse() {
                    rows.push((k, c.estimate, c.std_error, false));
                }
            }
        }
        rows
    }
}

/// Pass-through rate implied by a price coefficient at a given tax.
pub fn passthrough_from_beta(beta: f64, tax: f64) -> Result<f64> {
    if !(tax > 0.0) {
        return Err(Error::validation(format!(
            "tax {tax} must be positive for pass-through"
        )));
    }
    Ok(beta / tax)
}

fn filtered<'p>(panel: &'p [PanelRow], spec: &RegressionSpec) -> Result<Vec<&'p PanelRow>> {
    let rows: Vec<&PanelRow> = panel.iter().filter(|r| spec.filter.keeps(r)).collect();
    if rows.is_empty() {
        return Err(Error::validation("no observations left after filtering"));
    }
    Ok(rows)
}

fn response_values(rows: &[&PanelRow], response: Response) -> Vec<f64> {
    match response {
        Response::EffectivePrice => rows.iter().map(|r| r.effective_price).collect(),
        Response::PostedPrice => rows.iter().map(|r| r.posted_price).collect(),
    }
}

fn fe_dimensions(rows: &[&PanelRow], spec: &RegressionSpec) -> Vec<FixedEffectDim> {
    spec.fixed_effects
        .iter()
        .map(|fe| match fe {
            FeDimension::Agency => {
                FixedEffectDim::from_keys("agency", rows.iter().map(|r| r.agency_id.as_str()))
            }
            FeDimension::Time => match spec.time_granularity {
                TimeGranularity::Week => {
                    FixedEffectDim::from_keys("week", rows.iter().map(|r| r.week))
                }
                TimeGranularity::Quarter => {
                    FixedEffectDim::from_keys("quarter", rows.iter().map(|r| r.quarter))
                }
            },
            FeDimension::League => {
                FixedEffectDim::from_keys("league", rows.iter().map(|r| r.league_id.as_str()))
            }
            FeDimension::LeagueByAgency => FixedEffectDim::from_keys(
                "league_x_agency",
                rows.iter()
                    .map(|r| (r.league_id.as_str(), r.agency_id.as_str())),
            ),
        })
        .collect()
}

fn cluster_assignment(rows: &[&PanelRow], spec: &RegressionSpec) -> FixedEffectDim {
    match spec.cluster {
        ClusterBy::Agency => {
            FixedEffectDim::from_keys("agency", rows.iter().map(|r| r.agency_id.as_str()))
        }
        ClusterBy::League => {
            FixedEffectDim::from_keys("league", rows.iter().map(|r| r.league_id.as_str()))
        }
    }
}

/// Absorbs, solves, and wraps the sandwich; shared by all designs.
fn run_regression(
    rows: &[&PanelRow],
    spec: &RegressionSpec,
    design: &str,
    names: Vec<String>,
    mut columns: Vec<Vec<f64>>,
    notes: Vec<String>,
) -> Result<RegressionFit> {
    let y_raw = response_values(rows, spec.response);
    let n = y_raw.len();
    let grand_mean = y_raw.iter().sum::<f64>() / n as f64;
    let tss_raw: f64 = y_raw
        .iter()
        .map(|v| (v - grand_mean) * (v - grand_mean))
        .sum();

    let mut absorber = Absorber::new(fe_dimensions(rows, spec))?;
    absorber.tol = spec.absorb_tol;
    absorber.max_iter = spec.absorb_max_iter;

    let mut y = y_raw.clone();
    let mut refs: Vec<&mut [f64]> = Vec::with_capacity(columns.len() + 1);
    refs.push(&mut y);
    for column in &mut columns {
        refs.push(column.as_mut_slice());
    }
    let absorption = absorber.absorb(&mut refs)?;

    let solved = ols(&columns, &y, &names)?;
    let tss_within: f64 = y.iter().map(|v| v * v).sum();

    let clusters = cluster_assignment(rows, spec);
    let df_absorbed = absorber.degrees_of_freedom();
    let covariance = cluster_covariance(
        &columns,
        &solved.residuals,
        clusters.groups(),
        clusters.n_levels(),
        &solved.xtx_inverse,
        df_absorbed,
    )?;

    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let estimate = solved.coefficients[j];
            let std_error = covariance[(j, j)].max(0.0).sqrt();
            Coefficient {
                name: name.clone(),
                estimate,
                std_error,
                t_stat: if std_error > 0.0 {
                    estimate / std_error
                } else {
                    f64::NAN
                },
            }
        })
        .collect();

    Ok(RegressionFit {
        design: design.to_string(),
        coefficients,
        n_obs: n,
        n_clusters: clusters.n_levels(),
        k_regressors: names.len(),
        df_absorbed,
        r_squared: if tss_raw > 0.0 {
            1.0 - solved.rss / tss_raw
        } else {
            0.0
        },
        r_squared_within: if tss_within > 0.0 {
            1.0 - solved.rss / tss_within
        } else {
            0.0
        },
        grand_mean,
        absorption,
        notes,
        covariance,
    })
}

fn check_four_cells(rows: &[&PanelRow]) -> Result<()> {
    let mut cells = [false; 4];
    for row in rows {
        cells[(row.treated as usize) * 2 + row.post as usize] = true;
    }
    if !cells.iter().all(|&c| c) {
        return Err(Error::validation(
            "need pre- and post-reform observations for both treated and control agencies",
        ));
    }
    Ok(())
}

/// Treated-and-post indicator per row.
fn treatment_column(rows: &[&PanelRow]) -> Vec<f64> {
    rows.iter()
        .map(|r| (r.treated && r.post) as u8 as f64)
        .collect()
}

/// Post-reform indicator of having no active shrouding policy.
fn no_shroud_flag(row: &PanelRow) -> bool {
    row.post && !row.policy_active
}

/// Average tax effect: outcome on treated-and-post with absorbed fixed
/// effects, every observation weighted equally.
pub fn did_average(panel: &[PanelRow], spec: &RegressionSpec) -> Result<RegressionFit> {
    let rows = filtered(panel, spec)?;
    check_four_cells(&rows)?;
    let columns = vec![treatment_column(&rows)];
    run_regression(
        &rows,
        spec,
        "did",
        vec!["T".to_string()],
        columns,
        Vec::new(),
    )
}

/// Reform quarter: the earliest quarter flagged post-reform.
fn reform_quarter(rows: &[&PanelRow]) -> Result<u32> {
    rows.iter()
        .filter(|r| r.post)
        .map(|r| r.quarter)
        .min()
        .ok_or_else(|| Error::validation("panel has no post-reform observations"))
}

struct EventDesign {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    notes: Vec<String>,
}

fn event_design(rows: &[&PanelRow], baseline: i32, with_interactions: bool) -> Result<EventDesign> {
    let reform = reform_quarter(rows)? as i32;
    let mut ks: Vec<i32> = rows.iter().map(|r| r.quarter as i32 - reform).collect();
    ks.sort_unstable();
    ks.dedup();

    let pre_periods = ks.iter().filter(|&&k| k < 0).count();
    if pre_periods < 2 {
        return Err(Error::validation(format!(
            "event study needs at least 2 pre-reform quarters, found {pre_periods}"
        )));
    }
    if !ks.contains(&baseline) {
        return Err(Error::validation(format!(
            "baseline period {baseline} not present in the panel"
        )));
    }

    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut notes = Vec::new();
    for &k in &ks {
        if k == baseline {
            continue;
        }
        let column: Vec<f64> = rows
            .iter()
            .map(|r| (r.treated && (r.quarter as i32 - reform == k)) as u8 as f64)
            .collect();
        if column.iter().all(|&v| v == 0.0) {
            notes.push(format!(
                "dropped D{k}: no treated observations in that quarter"
            ));
            continue;
        }
        names.push(format!("D{k}"));
        columns.push(column);
    }
    if with_interactions {
        for &k in &ks {
            if k < 0 || k == baseline {
                continue;
            }
            let column: Vec<f64> = rows
                .iter()
                .map(|r| {
                    (r.treated && no_shroud_flag(r) && (r.quarter as i32 - reform == k)) as u8
                        as f64
                })
                .collect();
            if column.iter().all(|&v| v == 0.0) {
                notes.push(format!(
                    "dropped DxNS{k}: no unshrouded treated observations in that quarter"
                ));
                continue;
            }
            names.push(format!("DxNS{k}"));
            columns.push(column);
        }
    }
    Ok(EventDesign {
        names,
        columns,
        notes,
    })
}

/// Dynamic effects: quarterly leads and lags of treatment relative to the
/// reform, with the baseline quarter omitted.
pub fn event_study(panel: &[PanelRow], spec: &RegressionSpec) -> Result<RegressionFit> {
    let rows = filtered(panel, spec)?;
    check_four_cells(&rows)?;
    let design = event_design(&rows, spec.baseline, false)?;
    run_regression(
        &rows,
        spec,
        "event_study",
        design.names,
        design.columns,
        design.notes,
    )
}

/// Average effects split by active shrouding: the treatment dummy measures
/// the effect under an active shrouding policy, the interaction the
/// difference for treated observations without one.
pub fn did_heterogeneous(panel: &[PanelRow], spec: &RegressionSpec) -> Result<RegressionFit> {
    let rows = filtered(panel, spec)?;
    check_four_cells(&rows)?;

    let treated_post: Vec<&&PanelRow> = rows.iter().filter(|r| r.treated && r.post).collect();
    let n_no_shroud = treated_post.iter().filter(|r| no_shroud_flag(r)).count();
    if n_no_shroud == 0 || n_no_shroud == treated_post.len() {
        return Err(Error::validation(
            "degenerate no-shroud interaction: treated post-reform observations are all \
             shrouded or all unshrouded",
        ));
    }

    let t = treatment_column(&rows);
    let interaction: Vec<f64> = rows
        .iter()
        .map(|r| (r.treated && no_shroud_flag(r)) as u8 as f64)
        .collect();
    run_regression(
        &rows,
        spec,
        "did_heterogeneous",
        vec!["T".to_string(), "TxNoShroud".to_string()],
        vec![t, interaction],
        Vec::new(),
    )
}

/// Dynamic effects with the no-shroud interaction on every lag.
///
/// The shrouded path is the base lag coefficients; the unshrouded path adds
/// the interaction coefficient at each lag.
pub fn event_study_heterogeneous(
    panel: &[PanelRow],
    spec: &RegressionSpec,
) -> Result<RegressionFit> {
    let rows = filtered(panel, spec)?;
    check_four_cells(&rows)?;
    let design = event_design(&rows, spec.baseline, true)?;
    run_regression(
        &rows,
        spec,
        "event_study_heterogeneous",
        design.names,
        design.columns,
        design.notes,
    )
}

#[cfg(test)]
mod tests;
