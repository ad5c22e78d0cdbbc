use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::absorb::{Absorber, FixedEffectDim};
use super::ols::ols;
use super::*;
use crate::datagen::{generate_panel, DgpConfig, PanelRow, Sport};
use crate::odds::PolicyKind;
use crate::rng::StreamKey;

fn toy_row(
    agency: &str,
    treated: bool,
    week: u32,
    league: &str,
    post: bool,
    policy_active: bool,
    price: f64,
) -> PanelRow {
    PanelRow {
        agency_id: agency.to_string(),
        event_id: format!("e{week}"),
        week,
        quarter: week / 13,
        league_id: league.to_string(),
        sport: Sport::Soccer,
        n_outcomes: 3,
        treated,
        post,
        policy: PolicyKind::NoShroud,
        policy_active,
        posted_price: price,
        effective_price: price,
        true_probabilities: None,
    }
}

fn two_fe_spec() -> RegressionSpec {
    RegressionSpec {
        fixed_effects: vec![FeDimension::Agency, FeDimension::Time],
        ..RegressionSpec::did_default()
    }
}

#[test]
fn hand_two_by_two_recovers_cell_difference() {
    // Control: 10 -> 12, treated: 10 -> 15; DID = 3. Two observations per
    // cell so the clustered sandwich has residual degrees of freedom.
    let mut panel = Vec::new();
    for rep in 0..2 {
        let w = rep; // two pre weeks
        panel.push(toy_row("ctl", false, w, "l1", false, false, 10.0));
        panel.push(toy_row("trt", true, w, "l1", false, false, 10.0));
        let w = 10 + rep; // two post weeks
        panel.push(toy_row("ctl", false, w, "l1", true, false, 12.0));
        panel.push(toy_row("trt", true, w, "l1", true, false, 15.0));
    }
    let fit = did_average(&panel, &two_fe_spec()).unwrap();
    let t = fit.coefficient("T").unwrap();
    assert_abs_diff_eq!(t.estimate, 3.0, epsilon = 1e-10);
    assert_eq!(fit.n_obs, 8);
    assert_eq!(fit.n_clusters, 2);
}

#[test]
fn did_requires_all_four_cells() {
    let panel = vec![
        toy_row("ctl", false, 0, "l1", false, false, 10.0),
        toy_row("trt", true, 0, "l1", false, false, 10.0),
        toy_row("trt", true, 10, "l1", true, false, 15.0),
    ];
    assert!(did_average(&panel, &two_fe_spec()).is_err());
}

/// Unbalanced 5-agency x 10-week x 3-league toy panel with seeded noise.
fn toy_unbalanced_panel(effect: f64) -> Vec<PanelRow> {
    let mut rng = StreamKey::new(77).with(0).rng();
    let normal = Normal::new(0.0, 0.01).unwrap();
    let mut panel = Vec::new();
    for a in 0..5u32 {
        let treated = a >= 3;
        for w in 0..10u32 {
            let post = w >= 5;
            for l in 0..3u32 {
                if (a + w + l) % 7 == 0 {
                    continue; // unbalanced
                }
                let price = 0.07
                    + 0.002 * a as f64
                    + 0.001 * (w as f64).sin()
                    + 0.003 * l as f64
                    + if treated && post { effect } else { 0.0 }
                    + normal.sample(&mut rng);
                panel.push(toy_row(
                    &format!("a{a}"),
                    treated,
                    w,
                    &format!("l{l}"),
                    post,
                    false,
                    price,
                ));
            }
        }
    }
    panel
}

/// Explicit dummy-variable OLS oracle: intercept, treatment, and one dummy
/// per non-reference level of each fixed effect. Returns the treatment
/// estimate and its brute-force clustered standard error.
fn dummy_ols_oracle(panel: &[PanelRow]) -> (f64, f64) {
    let n = panel.len();
    let agencies: Vec<String> = {
        let mut v: Vec<String> = panel.iter().map(|r| r.agency_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    };
    let weeks: Vec<u32> = {
        let mut v: Vec<u32> = panel.iter().map(|r| r.week).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let leagues: Vec<String> = {
        let mut v: Vec<String> = panel.iter().map(|r| r.league_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    };

    let k = 2 + (agencies.len() - 1) + (weeks.len() - 1) + (leagues.len() - 1);
    let mut x = DMatrix::zeros(n, k);
    let mut y = DMatrix::zeros(n, 1);
    for (i, row) in panel.iter().enumerate() {
        let mut j = 0;
        x[(i, j)] = 1.0;
        j += 1;
        x[(i, j)] = (row.treated && row.post) as u8 as f64;
        j += 1;
        for a in &agencies[1..] {
            x[(i, j)] = (row.agency_id == *a) as u8 as f64;
            j += 1;
        }
        for w in &weeks[1..] {
            x[(i, j)] = (row.week == *w) as u8 as f64;
            j += 1;
        }
        for l in &leagues[1..] {
            x[(i, j)] = (row.league_id == *l) as u8 as f64;
            j += 1;
        }
        y[(i, 0)] = row.effective_price;
    }

    let xtx_inv = (x.transpose() * &x).try_inverse().expect("full rank");
    let beta = &xtx_inv * x.transpose() * &y;
    let residuals = &y - &x * &beta;

    // Brute-force block sandwich clustered by agency.
    let mut meat: DMatrix<f64> = DMatrix::zeros(k, k);
    for agency in &agencies {
        let mut score: DMatrix<f64> = DMatrix::zeros(k, 1);
        for (i, row) in panel.iter().enumerate() {
            if row.agency_id == *agency {
                for j in 0..k {
                    score[(j, 0)] += x[(i, j)] * residuals[(i, 0)];
                }
            }
        }
        meat += &score * score.transpose();
    }
    let g = agencies.len() as f64;
    let n_f = n as f64;
    let correction = g / (g - 1.0) * (n_f - 1.0) / (n_f - k as f64);
    let cov = &xtx_inv * meat * &xtx_inv * correction;
    (beta[(1, 0)], cov[(1, 1)].sqrt())
}

#[test]
fn absorbed_fit_equals_explicit_dummy_regression() {
    let panel = toy_unbalanced_panel(0.03);
    let fit = did_average(&panel, &RegressionSpec::did_default()).unwrap();
    let (oracle_beta, oracle_se) = dummy_ols_oracle(&panel);

    let t = fit.coefficient("T").unwrap();
    assert_abs_diff_eq!(t.estimate, oracle_beta, epsilon = 1e-8);
    assert_abs_diff_eq!(t.std_error, oracle_se, epsilon = 1e-10);
}

#[test]
fn row_order_never_changes_the_fit() {
    let mut panel = toy_unbalanced_panel(0.02);
    let base = did_average(&panel, &RegressionSpec::did_default()).unwrap();
    let mut rng = StreamKey::new(5).with(1).rng();
    panel.shuffle(&mut rng);
    let shuffled = did_average(&panel, &RegressionSpec::did_default()).unwrap();
    let a = base.coefficient("T").unwrap();
    let b = shuffled.coefficient("T").unwrap();
    assert_abs_diff_eq!(a.estimate, b.estimate, epsilon = 1e-10);
    assert_abs_diff_eq!(a.std_error, b.std_error, epsilon = 1e-10);
}

#[test]
fn level_shift_leaves_slopes_unchanged() {
    let panel = toy_unbalanced_panel(0.02);
    let base = did_average(&panel, &RegressionSpec::did_default()).unwrap();
    let mut shifted = panel.clone();
    for row in &mut shifted {
        row.effective_price += 0.5;
    }
    let moved = did_average(&shifted, &RegressionSpec::did_default()).unwrap();
    assert_abs_diff_eq!(
        base.coefficient("T").unwrap().estimate,
        moved.coefficient("T").unwrap().estimate,
        epsilon = 1e-10
    );
    assert_abs_diff_eq!(moved.grand_mean, base.grand_mean + 0.5, epsilon = 1e-12);
}

#[test]
fn treated_group_dummy_is_reported_rank_deficient() {
    let panel = toy_unbalanced_panel(0.02);
    let refs: Vec<&PanelRow> = panel.iter().collect();
    let dim = FixedEffectDim::from_keys("agency", refs.iter().map(|r| r.agency_id.as_str()));
    let absorber = Absorber::new(vec![dim]).unwrap();

    let mut y: Vec<f64> = refs.iter().map(|r| r.effective_price).collect();
    let mut treated_dummy: Vec<f64> = refs.iter().map(|r| r.treated as u8 as f64).collect();
    absorber.absorb(&mut [&mut y, &mut treated_dummy]).unwrap();

    let err = ols(&[treated_dummy], &y, &["treated_group".to_string()]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("treated_group"), "got: {msg}");
    assert!(msg.contains("rank deficiency"), "got: {msg}");
}

/// Shared reduced DGP for estimator tests.
fn small_dgp(active_effect: f64, unshrouded_effect: f64) -> DgpConfig {
    let mut config = DgpConfig::default();
    config.n_control_agencies = 12;
    config.n_weeks = 195; // 15 quarters
    config.reform_week = 104; // 8 pre-reform quarters
                              // Two domestic / two foreign leagues, two soccer / two other sports.
    let keep = [
        "de_bundesliga",
        "en_premier_league",
        "de_basketball_bundesliga",
        "us_nhl",
    ];
    config
        .leagues
        .retain(|l| keep.contains(&l.league_id.as_str()));
    for league in &mut config.leagues {
        league.events_per_week = 1;
    }
    config.shroud_active_effect = active_effect;
    for (i, agency) in config.treated_agencies.iter_mut().enumerate() {
        agency.target_posted_response = unshrouded_effect;
        // Preserve the policy mix, but keep start weeks in range: the two
        // late adopters switch on mid-sample.
        if let Some(start) = agency.policy_start_week.as_mut() {
            *start = (104 + [0u32, 4, 4, 13, 17, 22, 35, 65][i.min(7)]).min(190);
        }
    }
    config
}

#[test]
fn placebo_effect_is_statistically_zero() {
    let config = small_dgp(0.0, 0.0);
    let panel = generate_panel(&config).unwrap();
    let fit = did_average(&panel, &RegressionSpec::did_default()).unwrap();
    let t = fit.coefficient("T").unwrap();
    assert!(
        t.estimate.abs() < 2.0 * t.std_error,
        "placebo beta {} vs se {}",
        t.estimate,
        t.std_error
    );
}

#[test]
fn pre_reform_group_gap_has_no_trend() {
    let config = small_dgp(0.04, 0.01);
    let panel = generate_panel(&config).unwrap();
    // Quarterly treated-minus-control gaps before the reform.
    let reform_quarter = config.reform_quarter();
    let mut gaps = Vec::new();
    for q in 0..reform_quarter {
        let treated: Vec<f64> = panel
            .iter()
            .filter(|r| r.quarter == q && r.treated)
            .map(|r| r.effective_price)
            .collect();
        let control: Vec<f64> = panel
            .iter()
            .filter(|r| r.quarter == q && !r.treated)
            .map(|r| r.effective_price)
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        gaps.push(mean(&treated) - mean(&control));
    }
    // Slope of the gap over quarters, with its standard error.
    let n = gaps.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let g_mean = gaps.iter().sum::<f64>() / n;
    let sxx: f64 = (0..gaps.len()).map(|q| (q as f64 - t_mean).powi(2)).sum();
    let sxy: f64 = gaps
        .iter()
        .enumerate()
        .map(|(q, g)| (q as f64 - t_mean) * (g - g_mean))
        .sum();
    let slope = sxy / sxx;
    let rss: f64 = gaps
        .iter()
        .enumerate()
        .map(|(q, g)| (g - g_mean - slope * (q as f64 - t_mean)).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    assert!(slope.abs() < 3.0 * se, "pre-trend slope {slope} vs se {se}");
}

#[test]
fn step_effect_event_study_traces_the_step() {
    // Uniform 0.04 step at the reform for every treated agency.
    let mut config = small_dgp(0.04, 0.04);
    for agency in &mut config.treated_agencies {
        if agency.policy != PolicyKind::NoShroud {
            agency.policy_start_week = Some(config.reform_week);
        }
    }
    let panel = generate_panel(&config).unwrap();
    let fit = event_study(&panel, &RegressionSpec::event_study_default()).unwrap();

    let rows = fit.event_rows();
    let lags: Vec<_> = rows
        .iter()
        .filter(|(k, _, _, interacted)| *k >= 0 && !interacted)
        .collect();
    assert_eq!(lags.len(), 7);
    for (k, estimate, _, _) in &lags {
        assert!(
            (estimate - 0.04).abs() < 0.004,
            "lag {k} estimate {estimate} should be near 0.04"
        );
    }
    // Leads stay within 2 clustered standard errors of zero.
    let leads: Vec<_> = rows.iter().filter(|(k, _, _, i)| *k < 0 && !i).collect();
    let covered = leads
        .iter()
        .filter(|(_, b, se, _)| b.abs() <= 2.0 * se)
        .count();
    assert!(
        covered * 10 >= leads.len() * 9,
        "{covered}/{} leads within 2 SE",
        leads.len()
    );
}

#[test]
fn heterogeneous_did_separates_the_two_paths() {
    let config = small_dgp(0.046, 0.008);
    let panel = generate_panel(&config).unwrap();
    let fit = did_heterogeneous(&panel, &RegressionSpec::did_default()).unwrap();
    let base = fit.coefficient("T").unwrap();
    let interaction = fit.coefficient("TxNoShroud").unwrap();
    assert!(
        (base.estimate - 0.046).abs() < 0.004,
        "shrouded-path effect {}",
        base.estimate
    );
    assert!(
        (interaction.estimate - (0.008 - 0.046)).abs() < 0.004,
        "interaction {}",
        interaction.estimate
    );
}

#[test]
fn heterogeneous_did_equals_cell_contrasts_on_toy_panel() {
    // Three agencies: control, always-shrouding, never-shrouding. One league
    // and flat time effects make the cell arithmetic exact.
    let mut panel = Vec::new();
    for w in 0..4u32 {
        let post = w >= 2;
        for rep in 0..2 {
            let _ = rep;
            panel.push(toy_row("ctl", false, w, "l1", post, false, 0.07));
            let shroud_price = if post { 0.07 + 0.045 } else { 0.07 };
            let mut r = toy_row("sh", true, w, "l1", post, post, shroud_price);
            r.policy = PolicyKind::DeductFromWinnings;
            panel.push(r);
            let clear_price = if post { 0.07 + 0.005 } else { 0.07 };
            panel.push(toy_row("ns", true, w, "l1", post, false, clear_price));
        }
    }
    let fit = did_heterogeneous(&panel, &two_fe_spec()).unwrap();
    assert_abs_diff_eq!(
        fit.coefficient("T").unwrap().estimate,
        0.045,
        epsilon = 1e-10
    );
    assert_abs_diff_eq!(
        fit.coefficient("TxNoShroud").unwrap().estimate,
        0.005 - 0.045,
        epsilon = 1e-10
    );
}

#[test]
fn heterogeneous_did_rejects_degenerate_interaction() {
    // All treated post observations shrouded.
    let mut panel = Vec::new();
    for w in 0..4u32 {
        let post = w >= 2;
        for rep in 0..2 {
            let _ = rep;
            panel.push(toy_row("ctl", false, w, "l1", post, false, 0.07));
            panel.push(toy_row("sh", true, w, "l1", post, post, 0.07));
        }
    }
    let err = did_heterogeneous(&panel, &two_fe_spec()).unwrap_err();
    assert!(err.to_string().contains("degenerate"), "got: {err}");
}

#[test]
fn heterogeneous_event_study_recovers_both_paths() {
    let config = small_dgp(0.045, 0.012);
    let panel = generate_panel(&config).unwrap();
    let fit = event_study_heterogeneous(&panel, &RegressionSpec::event_study_default()).unwrap();

    let rows = fit.event_rows();
    for k in 1..=6 {
        let base = rows.iter().find(|(kk, _, _, i)| *kk == k && !i);
        let inter = rows.iter().find(|(kk, _, _, i)| *kk == k && *i);
        let (_, b, _, _) = base.expect("base lag present");
        // Shrouded path near the active effect once most adopters are in.
        if k >= 3 {
            assert!((b - 0.045).abs() < 0.006, "lag {k} shrouded path {b}");
        }
        if let Some((_, ib, _, _)) = inter {
            let unshrouded = b + ib;
            assert!(
                (unshrouded - 0.012).abs() < 0.006,
                "lag {k} unshrouded path {unshrouded}"
            );
        }
    }
}

#[test]
fn event_study_requires_pre_periods_and_valid_baseline() {
    let config = small_dgp(0.04, 0.01);
    let panel = generate_panel(&config).unwrap();
    let post_only: Vec<PanelRow> = panel.iter().filter(|r| r.post).cloned().collect();
    assert!(event_study(&post_only, &RegressionSpec::event_study_default()).is_err());

    let mut spec = RegressionSpec::event_study_default();
    spec.baseline = -99;
    assert!(event_study(&panel, &spec).is_err());
}

#[test]
fn week_and_quarter_granularity_agree_on_averages() {
    let config = small_dgp(0.04, 0.01);
    let panel = generate_panel(&config).unwrap();
    let week_fit = did_average(&panel, &RegressionSpec::did_default()).unwrap();
    let mut spec = RegressionSpec::did_default();
    spec.time_granularity = TimeGranularity::Quarter;
    let quarter_fit = did_average(&panel, &spec).unwrap();
    let a = week_fit.coefficient("T").unwrap().estimate;
    let b = quarter_fit.coefficient("T").unwrap().estimate;
    assert!((a - b).abs() < 0.002, "week {a} vs quarter {b}");
}

#[test]
fn filters_subset_the_sample() {
    let config = small_dgp(0.04, 0.01);
    let panel = generate_panel(&config).unwrap();

    let mut spec = RegressionSpec::did_default();
    spec.filter = SampleFilter::SoccerOnly;
    let soccer = did_average(&panel, &spec).unwrap();
    assert!(soccer.n_obs < panel.len());

    spec.filter = SampleFilter::ExcludeCross {
        domestic_prefix: "de_".to_string(),
    };
    let no_cross = did_average(&panel, &spec).unwrap();
    assert!(no_cross.n_obs < panel.len());
    // Estimates stay close to the blended injected effect in both samples.
    for fit in [&soccer, &no_cross] {
        let t = fit.coefficient("T").unwrap();
        assert!(
            (t.estimate - 0.029).abs() < 0.008,
            "estimate {}",
            t.estimate
        );
    }
}

#[test]
fn passthrough_conversion() {
    assert_abs_diff_eq!(
        passthrough_from_beta(0.038, 0.05).unwrap(),
        0.76,
        epsilon = 1e-12
    );
    assert_eq!(passthrough_from_beta(0.0, 0.05).unwrap(), 0.0);
    assert_abs_diff_eq!(
        passthrough_from_beta(0.05, 0.05).unwrap(),
        1.0,
        epsilon = 1e-12
    );
    assert!(passthrough_from_beta(0.01, 0.0).is_err());
}

#[test]
fn r_squared_includes_absorbed_effects() {
    let config = small_dgp(0.04, 0.01);
    let panel = generate_panel(&config).unwrap();
    let fit = did_average(&panel, &RegressionSpec::did_default()).unwrap();
    // Fixed effects soak up most raw variance; the within share is small.
    assert!(fit.r_squared > 0.5, "full R2 {}", fit.r_squared);
    assert!(fit.r_squared_within < fit.r_squared);
    assert!(fit.df_absorbed > 0);
}

#[test]
fn ramp_profile_paths_jump_and_climb() {
    // Active shrouding lifts prices immediately; the unshrouded response
    // climbs toward its target over the post period.
    let mut config = DgpConfig::default();
    config.n_control_agencies = 20;
    for league in &mut config.leagues {
        league.events_per_week = 1;
    }
    config.shroud_active_effect = 0.045;
    config.unshrouded_profile = crate::datagen::EffectProfile::LinearRamp;
    for agency in &mut config.treated_agencies {
        agency.target_posted_response = 0.0167;
    }
    let panel = generate_panel(&config).unwrap();
    let fit = event_study_heterogeneous(&panel, &RegressionSpec::event_study_default()).unwrap();

    let rows = fit.event_rows();
    let base = |k: i32| rows.iter().find(|(kk, _, _, i)| *kk == k && !i).map(|(_, b, _, _)| *b);
    let inter = |k: i32| rows.iter().find(|(kk, _, _, i)| *kk == k && *i).map(|(_, b, _, _)| *b);

    // Shrouded path sits at the active effect from the first post quarter.
    let first = base(0).unwrap();
    assert!((first - 0.045).abs() < 0.004, "shrouded path at k=0: {first}");
    let late = base(20).unwrap();
    assert!((late - 0.045).abs() < 0.004, "shrouded path at k=20: {late}");

    // Unshrouded path starts near zero and climbs toward the target.
    let early_unshrouded = base(1).unwrap() + inter(1).unwrap();
    let final_unshrouded = base(25).unwrap() + inter(25).unwrap();
    assert!(early_unshrouded < 0.007, "early unshrouded path {early_unshrouded}");
    assert!(
        (final_unshrouded - 0.0167).abs() < 0.005,
        "final unshrouded path {final_unshrouded}"
    );
    assert!(final_unshrouded > early_unshrouded + 0.008);
}
