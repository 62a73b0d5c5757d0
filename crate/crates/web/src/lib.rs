//! Browser bindings for the staircase demo page in `www/`.
//!
//! Every export takes and returns plain strings (JSON, CSV or SVG) so the
//! page needs no generated TypeScript types. The `*_impl` functions hold the
//! logic and run natively under `cargo test`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use stairprune::advisor::{recommend_for_budget, Rationale};
use stairprune::dispatch::{count_dispatched_jobs, Method, SplitPolicy};
use stairprune::io::parse_curves_str;
use stairprune::model::builtin_network;
use stairprune::pipeline::{self, EmulateOptions};
use stairprune::profile::Profile;
use stairprune::report::{emit_heatmap, HeatmapFormat, DEFAULT_DISTANCES};
use stairprune::staircase::{detect_plateaus, optimal_points, regime_split, speedup_map};

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct EmulateParams {
    pub method: String,
    pub min_channels: u32,
    pub ns_per_arith_instr: f64,
    pub ns_per_mem_instr: f64,
    pub job_overhead_ms: f64,
    pub vector_width: u32,
    pub main_tile: u32,
    pub merge_full_tile_remainder: bool,
    pub rel_tol: f64,
    pub regimes: usize,
}

impl Default for EmulateParams {
    fn default() -> Self {
        let p = Profile::layer16();
        Self {
            method: "gemm".into(),
            min_channels: 64,
            ns_per_arith_instr: p.device.ns_per_arith_instr,
            ns_per_mem_instr: p.device.ns_per_mem_instr,
            job_overhead_ms: p.device.job_overhead_ms,
            vector_width: p.cost.split.vector_width,
            main_tile: p.cost.split.main_tile,
            merge_full_tile_remainder: p.cost.split.merge_full_tile_remainder,
            rel_tol: stairprune::staircase::DEFAULT_REL_TOL,
            regimes: 2,
        }
    }
}

#[derive(Debug, Serialize)]
struct PointOut {
    channels: u32,
    latency_ms: f64,
    jobs: Option<usize>,
    regime: Option<usize>,
}

#[derive(Debug, Serialize)]
struct PlateauOut {
    start: u32,
    end: u32,
    level_ms: f64,
}

#[derive(Debug, Serialize)]
struct EmulateOut {
    points: Vec<PointOut>,
    plateaus: Vec<PlateauOut>,
    optimal: Vec<u32>,
    curve_csv: String,
}

#[derive(Debug, Serialize)]
struct RecommendationOut {
    layer_id: String,
    base_channels: u32,
    target_channels: u32,
    predicted_latency_ms: f64,
    speedup_vs_base: f64,
    rationale: &'static str,
}

pub fn emulate_layer16_impl(params_json: &str) -> Result<String, String> {
    let p: EmulateParams = serde_json::from_str(params_json).map_err(|e| e.to_string())?;
    let method: Method = p.method.parse().map_err(|e: stairprune::Error| e.to_string())?;
    let split = SplitPolicy {
        vector_width: p.vector_width,
        main_tile: p.main_tile,
        merge_full_tile_remainder: p.merge_full_tile_remainder,
    };
    split.validate().map_err(|e| e.to_string())?;

    let mut profile = Profile::layer16();
    profile.device.ns_per_arith_instr = p.ns_per_arith_instr;
    profile.device.ns_per_mem_instr = p.ns_per_mem_instr;
    profile.device.job_overhead_ms = p.job_overhead_ms;
    profile.device.validate().map_err(|e| e.to_string())?;
    profile.cost.split = split;

    let err = |e: stairprune::Error| e.to_string();
    let net = builtin_network("resnet50").map_err(err)?;
    let configs = pipeline::sweep(&net, "ResNet.L16", p.min_channels, 1).map_err(err)?;
    let opts = EmulateOptions { method, runs: 1, ..Default::default() };
    let curves = pipeline::ingest(&pipeline::emulate(&configs, &profile, &opts).map_err(err)?).map_err(err)?;
    let curve = &curves[0];

    let plateaus = detect_plateaus(curve, p.rel_tol).map_err(err)?;
    let regimes = if p.regimes > 0 { regime_split(curve, p.regimes).ok() } else { None };
    let points = configs
        .iter()
        .rev()
        .map(|layer| {
            let c = layer.out_channels();
            PointOut {
                channels: c,
                latency_ms: curve.latency(c).unwrap_or(f64::NAN),
                jobs: count_dispatched_jobs(layer, method, &split).ok(),
                regime: regimes.as_ref().and_then(|r| r.labels.get(&c).copied()),
            }
        })
        .collect();
    let out = EmulateOut {
        points,
        optimal: optimal_points(&plateaus).into_iter().map(|(c, _)| c).collect(),
        plateaus: plateaus
            .iter()
            .map(|pl| PlateauOut { start: pl.start_channels, end: pl.end_channels, level_ms: pl.level_ms })
            .collect(),
        curve_csv: stairprune::io::curves_to_csv(&curves),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn parse_distances(text: &str) -> Result<Vec<u32>, String> {
    if text.trim().is_empty() {
        return Ok(DEFAULT_DISTANCES.to_vec());
    }
    text.split(',').map(|d| d.trim().parse::<u32>().map_err(|e| format!("distance `{d}`: {e}"))).collect()
}

pub fn speedup_heatmap_impl(curves_csv: &str, distances: &str) -> Result<String, String> {
    let err = |e: stairprune::Error| e.to_string();
    let curves = parse_curves_str(curves_csv).map_err(err)?;
    let maps = curves
        .iter()
        .map(|c| {
            let base = c.base_channels().ok_or("empty curve")?;
            Ok((c.layer_id().to_string(), speedup_map(c, base).map_err(err)?))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let grid = pipeline::heatmap(&maps, None, &parse_distances(distances)?).map_err(err)?;
    emit_heatmap(&grid, HeatmapFormat::Svg).map_err(err)
}

pub fn recommend_budget_impl(curves_csv: &str, budget_ms: f64) -> Result<String, String> {
    let curves = parse_curves_str(curves_csv).map_err(|e| e.to_string())?;
    if curves.is_empty() {
        return Err("no curves".into());
    }
    let recs = curves
        .iter()
        .map(|c| {
            let r = recommend_for_budget(c, budget_ms).map_err(|e| format!("{}: {e}", c.layer_id()))?;
            debug_assert_eq!(r.rationale, Rationale::BudgetFit);
            Ok(RecommendationOut {
                layer_id: r.layer_id,
                base_channels: r.base_channels,
                target_channels: r.target_channels,
                predicted_latency_ms: r.predicted_latency_ms,
                speedup_vs_base: r.speedup_vs_base,
                rationale: r.rationale.as_str(),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&recs).map_err(|e| e.to_string())
}

/// Emulate ResNet-50 layer 16 with adjusted device rates and split policy.
/// Returns `{points, plateaus, optimal, curve_csv}` as JSON.
#[wasm_bindgen(js_name = emulateLayer16)]
pub fn emulate_layer16(params_json: &str) -> Result<String, JsValue> {
    emulate_layer16_impl(params_json).map_err(|e| JsValue::from_str(&e))
}

/// Speedup heatmap SVG for a curve CSV; `distances` is comma-separated,
/// empty for the default set.
#[wasm_bindgen(js_name = speedupHeatmap)]
pub fn speedup_heatmap(curves_csv: &str, distances: &str) -> Result<String, JsValue> {
    speedup_heatmap_impl(curves_csv, distances).map_err(|e| JsValue::from_str(&e))
}

/// Budget-fit recommendation per curve, as a JSON array.
#[wasm_bindgen(js_name = recommendBudget)]
pub fn recommend_budget(curves_csv: &str, budget_ms: f64) -> Result<String, JsValue> {
    recommend_budget_impl(curves_csv, budget_ms).map_err(|e| JsValue::from_str(&e))
}
