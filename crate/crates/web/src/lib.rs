//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every entry point reruns the simulation from `(seed, preset, days)` and returns JSON,
//! so the page holds no state beyond its form fields.

use hybridwatch::aggregation::{count_based, quality_weighted, HumanEnsembleConfig};
use hybridwatch::data::Dataset;
use hybridwatch::metrics::{
    conditional_bot_probability, evaluate_flags, mean_sd, reporter_f1_table, ClassMetrics, ReportCounting,
};
use hybridwatch::simulator::{run_experiment, PoolPreset, SimConfig};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn dataset(seed: u64, preset: &str, days: u32) -> Result<Dataset> {
    let preset: PoolPreset =
        serde_json::from_value(json!(preset)).map_err(|_| format!("unknown reporter pool `{preset}`"))?;
    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    cfg.n_days = days;
    cfg.reporters.preset = preset;
    run_experiment(&cfg).map(|o| o.dataset).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Row {
    strategy: String,
    flagged: usize,
    metrics: ClassMetrics,
}

/// Dataset overview: sizes, suspensions and the reporter F1 distribution.
pub fn summary(seed: u64, preset: &str, days: u32) -> Result<String> {
    let ds = dataset(seed, preset, days)?;
    let f1: Vec<f64> = reporter_f1_table(&ds.reports, &ds.labels(), &ds.universe())
        .map_err(|e| e.to_string())?
        .into_values()
        .collect();
    let (mean, sd) = mean_sd(&f1);
    let suspended = |bot: bool| {
        ds.accounts
            .iter()
            .filter(|a| a.role.is_bot() == bot && a.status == hybridwatch::data::Status::Suspended)
            .count()
    };
    Ok(json!({
        "accounts": ds.accounts.len(),
        "bots": ds.n_bots(),
        "events": ds.events.len(),
        "reports": ds.reports.len(),
        "reporters": f1.len(),
        "suspended_bots": suspended(true),
        "suspended_humans": suspended(false),
        "mean_reporter_f1": mean,
        "sd_reporter_f1": sd,
    })
    .to_string())
}

/// Count-based rules for `k = 1..=k_max` next to quality-weighted voting at `tau`.
///
/// Reporter weights are each reporter's F1 over all of their reports.
pub fn human_aggregation(seed: u64, preset: &str, days: u32, tau: f64, k_max: usize) -> Result<String> {
    let ds = dataset(seed, preset, days)?;
    let (labels, universe) = (ds.labels(), ds.universe());
    let err = |e: hybridwatch::Error| e.to_string();
    let mut rows = Vec::new();
    for k in 1..=k_max.max(1) {
        let flags = count_based(&ds.reports, k).map_err(err)?;
        rows.push(Row {
            strategy: format!("count:{k}"),
            flagged: flags.len(),
            metrics: evaluate_flags(&flags, &labels, &universe).map_err(err)?,
        });
    }
    let weights = reporter_f1_table(&ds.reports, &labels, &universe).map_err(err)?;
    let qw = quality_weighted(&ds.reports, &HumanEnsembleConfig::new(tau, weights).map_err(err)?).map_err(err)?;
    rows.push(Row {
        strategy: "quality_weighted".into(),
        flagged: qw.flags.len(),
        metrics: evaluate_flags(&qw.flags, &labels, &universe).map_err(err)?,
    });
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// `P(bot | k reporters)` for every `k` present.
pub fn bot_probability(seed: u64, preset: &str, days: u32, raw_counts: bool) -> Result<String> {
    let ds = dataset(seed, preset, days)?;
    let counting = if raw_counts {
        ReportCounting::RawReports
    } else {
        ReportCounting::DistinctReporters
    };
    let buckets = conditional_bot_probability(&ds.reports, &ds.labels(), &ds.universe(), counting)
        .map_err(|e| e.to_string())?;
    let rows: Vec<_> = buckets
        .iter()
        .map(|(k, b)| json!({"k": k, "accounts": b.n_accounts, "bots": b.n_bots, "p_bot": b.p_bot}))
        .collect();
    Ok(serde_json::Value::Array(rows).to_string())
}

#[wasm_bindgen(js_name = summary)]
pub fn summary_js(seed: u32, preset: &str, days: u32) -> std::result::Result<String, JsError> {
    summary(u64::from(seed), preset, days).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = humanAggregation)]
pub fn human_aggregation_js(seed: u32, preset: &str, days: u32, tau: f64, k_max: u32) -> std::result::Result<String, JsError> {
    human_aggregation(u64::from(seed), preset, days, tau, k_max as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = botProbability)]
pub fn bot_probability_js(seed: u32, preset: &str, days: u32, raw_counts: bool) -> std::result::Result<String, JsError> {
    bot_probability(u64::from(seed), preset, days, raw_counts).map_err(|e| JsError::new(&e))
}
