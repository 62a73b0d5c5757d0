//! End-to-end stages: sweep, emulate, ingest, analyze, advise, report.
//!
//! Each stage is a pure function over in-memory values; the `write_*`
//! helpers put the results on disk with fixed file names.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::advisor::{recommend, LayerReport, Objective};
use crate::dispatch::{emulate_latency, Method};
use crate::error::{Error, Result};
use crate::io::{
    optimal_points_to_csv, plateaus_to_csv, recommendations_to_csv, recommendations_to_text, regimes_to_csv,
    speedups_to_csv, MeasurementFile,
};
use crate::model::{ConvLayerSpec, LatencyCurve, LatencySample, NetworkModel};
use crate::profile::Profile;
use crate::pruning::sweep_configs;
use crate::report::HeatmapGrid;
use crate::staircase::{
    aggregate_median, detect_plateaus, optimal_points, regime_split, slowdown_regions, speedup_map, Plateau,
    RegimeAssignment, SpeedupMap,
};

pub fn sweep(network: &NetworkModel, layer_id: &str, min_channels: u32, step: u32) -> Result<Vec<ConvLayerSpec>> {
    let layer = network
        .layer(layer_id)
        .ok_or_else(|| Error::validation(format!("network `{}` has no layer `{layer_id}`", network.name())))?;
    sweep_configs(layer, min_channels, step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmulateOptions {
    pub method: Method,
    /// Timed runs per configuration.
    pub runs: u32,
    /// Relative run-to-run noise amplitude; each run is scaled by a factor
    /// drawn uniformly from `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for EmulateOptions {
    fn default() -> Self {
        Self { method: Method::Gemm, runs: 10, jitter: 0.0, seed: 0 }
    }
}

/// Synthesize a measurement file for every configuration.
pub fn emulate(configs: &[ConvLayerSpec], profile: &Profile, opts: &EmulateOptions) -> Result<MeasurementFile> {
    if opts.runs == 0 {
        return Err(Error::validation("runs must be at least 1"));
    }
    if !(0.0..1.0).contains(&opts.jitter) {
        return Err(Error::validation(format!("jitter must be in [0, 1), got {}", opts.jitter)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut samples = Vec::with_capacity(configs.len() * opts.runs as usize);
    for layer in configs {
        let t = emulate_latency(layer, opts.method, &profile.cost, &profile.device)?;
        for run in 0..opts.runs {
            let factor = if opts.jitter > 0.0 { 1.0 + rng.gen_range(-opts.jitter..=opts.jitter) } else { 1.0 };
            samples.push(LatencySample::new(layer.layer_id(), layer.out_channels(), run, t * factor)?);
        }
    }
    let mut metadata = Vec::new();
    if let Some(label) = &profile.label {
        metadata.push(("device".to_string(), label.clone()));
    }
    metadata.push(("method".to_string(), opts.method.to_string()));
    Ok(MeasurementFile { metadata, samples })
}

/// One median curve per layer, in order of first appearance.
pub fn ingest(file: &MeasurementFile) -> Result<Vec<LatencyCurve>> {
    if file.samples.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut order: Vec<&str> = Vec::new();
    for s in &file.samples {
        if !order.contains(&s.layer_id.as_str()) {
            order.push(&s.layer_id);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let group: Vec<LatencySample> = file.samples.iter().filter(|s| s.layer_id == id).cloned().collect();
            aggregate_median(&group)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAnalysis {
    pub layer_id: String,
    pub plateaus: Vec<Plateau>,
    pub optimal_points: Vec<(u32, f64)>,
    pub speedups: SpeedupMap,
    pub slowdowns: Vec<(u32, u32)>,
    pub regimes: Option<RegimeAssignment>,
}

fn analyze_curve(curve: &LatencyCurve, rel_tol: f64, regimes: Option<usize>) -> Result<LayerAnalysis> {
    let plateaus = detect_plateaus(curve, rel_tol)?;
    let base = curve.base_channels().ok_or(Error::EmptyCurve)?;
    let speedups = speedup_map(curve, base)?;
    Ok(LayerAnalysis {
        layer_id: curve.layer_id().to_string(),
        optimal_points: optimal_points(&plateaus),
        slowdowns: slowdown_regions(&speedups),
        plateaus,
        speedups,
        regimes: regimes.map(|k| regime_split(curve, k)).transpose()?,
    })
}

/// Staircase analysis of every curve. Layers are analysed in parallel;
/// output order follows the input.
pub fn analyze(curves: &[LatencyCurve], rel_tol: f64, regimes: Option<usize>) -> Result<Vec<LayerAnalysis>> {
    if curves.is_empty() || curves.iter().all(LatencyCurve::is_empty) {
        return Err(Error::EmptyCurve);
    }
    curves.par_iter().map(|c| analyze_curve(c, rel_tol, regimes)).collect()
}

pub const PLATEAUS_FILE: &str = "plateaus.csv";
pub const OPTIMAL_FILE: &str = "optimal_points.csv";
pub const SPEEDUPS_FILE: &str = "speedups.csv";
pub const REGIMES_FILE: &str = "regimes.csv";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.csv";
pub const REPORT_FILE: &str = "report.txt";

/// Write the analysis CSVs into `dir`, returning the paths written.
pub fn write_analysis(dir: &Path, analyses: &[LayerAnalysis]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let plateaus: Vec<_> = analyses.iter().map(|a| (a.layer_id.clone(), a.plateaus.clone())).collect();
    let optimal: Vec<_> = analyses.iter().map(|a| (a.layer_id.clone(), a.optimal_points.clone())).collect();
    let speedups: Vec<_> = analyses.iter().map(|a| (a.layer_id.clone(), a.speedups.clone())).collect();
    let mut files = vec![
        (PLATEAUS_FILE, plateaus_to_csv(&plateaus)),
        (OPTIMAL_FILE, optimal_points_to_csv(&optimal)),
        (SPEEDUPS_FILE, speedups_to_csv(&speedups)),
    ];
    let regimes: Vec<_> = analyses.iter().filter_map(|a| a.regimes.clone().map(|r| (a.layer_id.clone(), r))).collect();
    if !regimes.is_empty() {
        files.push((REGIMES_FILE, regimes_to_csv(&regimes)));
    }
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}

/// Recommendations for every curve (or every network layer, in network
/// order, when a network is given). Layers without a curve are skipped;
/// an objective a layer cannot meet is an error.
pub fn advise(
    curves: &[LatencyCurve],
    network: Option<&NetworkModel>,
    objective: Objective<'_>,
) -> Result<Vec<LayerReport>> {
    if curves.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let one = |curve: &LatencyCurve| -> Result<LayerReport> {
        let recommendation = recommend(curve, objective)?;
        let slowdowns = slowdown_regions(&speedup_map(curve, recommendation.base_channels)?);
        Ok(LayerReport::Recommended { recommendation, slowdowns })
    };
    match network {
        None => curves.iter().map(one).collect(),
        Some(net) => net
            .layers()
            .iter()
            .map(|layer| match curves.iter().find(|c| c.layer_id() == layer.layer_id()) {
                Some(c) => one(c),
                None => Ok(LayerReport::Skipped {
                    layer_id: layer.layer_id().to_string(),
                    reason: "no latency curve".into(),
                }),
            })
            .collect(),
    }
}

pub fn write_advice(dir: &Path, title: &str, reports: &[LayerReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(RECOMMENDATIONS_FILE);
    let txt = dir.join(REPORT_FILE);
    std::fs::write(&csv, recommendations_to_csv(reports))?;
    std::fs::write(&txt, recommendations_to_text(title, reports))?;
    Ok(vec![csv, txt])
}

/// Heatmap grid from speedup maps, rows in network order when a network is
/// given (layers the network does not list go last).
pub fn heatmap(
    speedups: &[(String, SpeedupMap)],
    network: Option<&NetworkModel>,
    distances: &[u32],
) -> Result<HeatmapGrid> {
    if speedups.is_empty() {
        return Err(Error::validation("no speedup rows to plot"));
    }
    let mut ordered: Vec<(String, SpeedupMap)> = Vec::with_capacity(speedups.len());
    if let Some(net) = network {
        for layer in net.layers() {
            if let Some(row) = speedups.iter().find(|(id, _)| id == layer.layer_id()) {
                ordered.push(row.clone());
            }
        }
    }
    for row in speedups {
        if !ordered.iter().any(|(id, _)| *id == row.0) {
            ordered.push(row.clone());
        }
    }
    Ok(HeatmapGrid::from_speedups(&ordered, distances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_network;

    fn l16_sweep() -> Vec<ConvLayerSpec> {
        sweep(&builtin_network("resnet50").unwrap(), "ResNet.L16", 1, 1).unwrap()
    }

    #[test]
    fn sweep_unknown_layer() {
        assert!(sweep(&builtin_network("vgg16").unwrap(), "ResNet.L16", 1, 1).is_err());
    }

    #[test]
    fn emulated_gemm_staircase_has_96_edge() {
        let meas = emulate(&l16_sweep(), &Profile::layer16(), &EmulateOptions::default()).unwrap();
        assert_eq!(meas.samples.len(), 128 * 10);
        assert_eq!(meas.device(), Some("resnet50-l16-mali-synthetic"));
        let curves = ingest(&meas).unwrap();
        let a = &analyze(&curves, 0.03, Some(2)).unwrap()[0];
        let edges: Vec<u32> = a.optimal_points.iter().map(|p| p.0).collect();
        assert!(edges.contains(&96), "{edges:?}");
        let p = a.plateaus.iter().find(|p| p.end_channels == 96).unwrap();
        assert_eq!(p.start_channels, 93);
        // 92 and 97 sit on the slow staircase, 93..=96 on the fast one
        let r = a.regimes.as_ref().unwrap();
        assert_eq!([92, 93, 96, 97].map(|c| r.labels[&c]), [1, 0, 0, 1]);
    }

    #[test]
    fn emulated_76_to_78_gap() {
        let curves = ingest(&emulate(&l16_sweep(), &Profile::layer16(), &EmulateOptions::default()).unwrap()).unwrap();
        let c = &curves[0];
        assert!(c.latency(76).unwrap() > c.latency(78).unwrap());
    }

    #[test]
    fn jitter_is_seeded() {
        let opts = EmulateOptions { jitter: 0.01, seed: 7, runs: 10, method: Method::Gemm };
        let a = emulate(&l16_sweep(), &Profile::layer16(), &opts).unwrap();
        let b = emulate(&l16_sweep(), &Profile::layer16(), &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().any(|s| s.run_index == 3));
        let c = emulate(&l16_sweep(), &Profile::layer16(), &EmulateOptions { seed: 8, ..opts }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn analyze_needs_points() {
        assert!(matches!(analyze(&[], 0.03, None), Err(Error::EmptyCurve)));
    }

    #[test]
    fn advise_budget_below_minimum() {
        let c = LatencyCurve::from_points("ResNet.L16", [(1, 5.0), (2, 6.0)]).unwrap();
        assert!(matches!(advise(&[c], None, Objective::Budget(1.0)), Err(Error::InfeasibleBudget { .. })));
    }

    #[test]
    fn advise_in_network_order_with_skips() {
        let net = builtin_network("alexnet").unwrap();
        let c = LatencyCurve::from_points("AlexNet.L6", (1..=384).map(|c| (c, c as f64))).unwrap();
        let reports = advise(&[c], Some(&net), Objective::ParetoEdge).unwrap();
        assert_eq!(reports.len(), 5);
        assert!(matches!(reports[2], LayerReport::Recommended { .. }));
        assert_eq!(reports.iter().filter(|r| matches!(r, LayerReport::Skipped { .. })).count(), 4);
    }
}
