//! CSV file formats.
//!
//! | file | header |
//! |------|--------|
//! | measurements | `layer_id,out_channels,run_index,latency_ms` (optional leading `# key: value` metadata lines) |
//! | curves | `layer_id,out_channels,latency_ms` |
//! | layer configs | `layer_id,in_channels,out_channels,kernel_h,kernel_w,input_h,input_w,stride,padding` |
//! | plateaus | `layer_id,start_channels,end_channels,level_ms,points` |
//! | optimal points | `layer_id,out_channels,latency_ms` |
//! | speedups | `layer_id,baseline_channels,distance,speedup` |
//! | regimes | `layer_id,out_channels,regime` |
//! | recommendations | `layer_id,status,base_channels,target_channels,predicted_latency_ms,speedup_vs_base,rationale,slowdown_regions,reason` |
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! re-parsing a written file gives back bit-identical values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::advisor::LayerReport;
use crate::error::{Error, Result};
use crate::model::{ConvLayerSpec, LatencyCurve, LatencySample, LayerGeometry};
use crate::staircase::{Plateau, RegimeAssignment, SpeedupMap};

pub const MEASUREMENT_HEADER: &str = "layer_id,out_channels,run_index,latency_ms";
pub const CURVE_HEADER: &str = "layer_id,out_channels,latency_ms";
pub const CONFIG_HEADER: &str = "layer_id,in_channels,out_channels,kernel_h,kernel_w,input_h,input_w,stride,padding";
pub const PLATEAU_HEADER: &str = "layer_id,start_channels,end_channels,level_ms,points";
pub const OPTIMAL_HEADER: &str = "layer_id,out_channels,latency_ms";
pub const SPEEDUP_HEADER: &str = "layer_id,baseline_channels,distance,speedup";
pub const REGIME_HEADER: &str = "layer_id,out_channels,regime";
pub const RECOMMENDATION_HEADER: &str =
    "layer_id,status,base_channels,target_channels,predicted_latency_ms,speedup_vs_base,rationale,slowdown_regions,reason";

/// A measurement file: optional `key: value` metadata plus timed runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementFile {
    pub metadata: Vec<(String, String)>,
    pub samples: Vec<LatencySample>,
}

impl MeasurementFile {
    pub fn device(&self) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == "device").map(|(_, v)| v.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(MEASUREMENT_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{}", s.layer_id, s.out_channels, s.run_index, s.latency_ms);
        }
        out
    }
}

type Metadata = Vec<(String, String)>;

/// Split leading `# key: value` lines from the CSV body. Returns the
/// metadata, the body and how many lines were consumed.
fn split_metadata(text: &str) -> Result<(Metadata, &str, u64)> {
    let mut metadata = Vec::new();
    let mut rest = text;
    let mut consumed = 0;
    while let Some(line) = rest.lines().next() {
        let Some(comment) = line.strip_prefix('#') else { break };
        consumed += 1;
        let (k, v) = comment.split_once(':').ok_or_else(|| Error::Parse {
            line: consumed,
            message: "metadata lines must look like `# key: value`".into(),
        })?;
        metadata.push((k.trim().to_string(), v.trim().to_string()));
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    Ok((metadata, rest, consumed))
}

fn check_header(reader: &mut csv::Reader<&[u8]>, expected: &str, line: u64) -> Result<()> {
    let headers = reader.headers().map_err(|e| Error::Parse { line, message: e.to_string() })?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got.join(",") != expected {
        return Err(Error::Parse { line, message: format!("expected header `{expected}`, got `{}`", got.join(",")) });
    }
    Ok(())
}

fn reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(body.as_bytes())
}

/// Iterate data records with absolute 1-based line numbers.
fn records(body: &str, expected_header: &str, line_offset: u64) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = reader(body);
    check_header(&mut rdr, expected_header, line_offset + 1)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: line_offset + e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = line_offset + rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).ok_or_else(|| Error::Parse { line, message: format!("missing column {name}") })?;
    raw.parse().map_err(|e| Error::Parse { line, message: format!("{name} `{raw}`: {e}") })
}

fn positive_latency(value: f64, line: u64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::RowValidation { line, message: format!("latency_ms must be positive, got {value}") })
    }
}

pub fn parse_measurements_str(text: &str) -> Result<MeasurementFile> {
    let (metadata, body, offset) = split_metadata(text)?;
    let mut samples = Vec::new();
    for (line, rec) in records(body, MEASUREMENT_HEADER, offset)? {
        let layer_id: String = field(&rec, 0, "layer_id", line)?;
        let out_channels = field(&rec, 1, "out_channels", line)?;
        let run_index = field(&rec, 2, "run_index", line)?;
        let latency_ms = positive_latency(field(&rec, 3, "latency_ms", line)?, line)?;
        samples.push(LatencySample { layer_id, out_channels, run_index, latency_ms });
    }
    Ok(MeasurementFile { metadata, samples })
}

pub fn parse_measurements(path: impl AsRef<Path>) -> Result<MeasurementFile> {
    parse_measurements_str(&std::fs::read_to_string(path)?)
}

pub fn curves_to_csv(curves: &[LatencyCurve]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for curve in curves {
        for (c, t) in curve.iter() {
            let _ = writeln!(out, "{},{c},{t}", curve.layer_id());
        }
    }
    out
}

/// Curves in order of first appearance of each layer id.
pub fn parse_curves_str(text: &str) -> Result<Vec<LatencyCurve>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut order: Vec<String> = Vec::new();
    let mut points: BTreeMap<String, BTreeMap<u32, f64>> = BTreeMap::new();
    for (line, rec) in records(text, CURVE_HEADER, 0)? {
        let layer_id: String = field(&rec, 0, "layer_id", line)?;
        let c: u32 = field(&rec, 1, "out_channels", line)?;
        let t = positive_latency(field(&rec, 2, "latency_ms", line)?, line)?;
        if !points.contains_key(&layer_id) {
            order.push(layer_id.clone());
        }
        if points.entry(layer_id.clone()).or_default().insert(c, t).is_some() {
            return Err(Error::RowValidation {
                line,
                message: format!("duplicate point for `{layer_id}` at {c} channels"),
            });
        }
    }
    order
        .into_iter()
        .map(|id| {
            let p = points.remove(&id).unwrap_or_default();
            LatencyCurve::new(id, p)
        })
        .collect()
}

pub fn parse_curves(path: impl AsRef<Path>) -> Result<Vec<LatencyCurve>> {
    parse_curves_str(&std::fs::read_to_string(path)?)
}

fn deserialize_rows<T: DeserializeOwned>(text: &str, header: &str) -> Result<Vec<(u64, T)>> {
    let mut rdr = reader(text);
    check_header(&mut rdr, header, 1)?;
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    rdr.records()
        .map(|rec| {
            let rec =
                rec.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
            let line = rec.position().map_or(0, |p| p.line());
            let row = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse { line, message: e.to_string() })?;
            Ok((line, row))
        })
        .collect()
}

pub fn configs_to_csv(configs: &[ConvLayerSpec]) -> String {
    let mut out = format!("{CONFIG_HEADER}\n");
    for s in configs {
        let g = s.geometry();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            g.layer_id,
            g.in_channels,
            g.out_channels,
            g.kernel_h,
            g.kernel_w,
            g.input_h,
            g.input_w,
            g.stride,
            g.padding
        );
    }
    out
}

pub fn parse_configs_str(text: &str) -> Result<Vec<ConvLayerSpec>> {
    deserialize_rows::<LayerGeometry>(text, CONFIG_HEADER)?
        .into_iter()
        .map(|(line, g)| ConvLayerSpec::new(g).map_err(|e| Error::RowValidation { line, message: e.to_string() }))
        .collect()
}

pub fn plateaus_to_csv(rows: &[(String, Vec<Plateau>)]) -> String {
    let mut out = format!("{PLATEAU_HEADER}\n");
    for (id, plateaus) in rows {
        for p in plateaus {
            let _ = writeln!(out, "{id},{},{},{},{}", p.start_channels, p.end_channels, p.level_ms, p.points);
        }
    }
    out
}

pub fn parse_plateaus_str(text: &str) -> Result<Vec<(String, Plateau)>> {
    records(text, PLATEAU_HEADER, 0)?
        .into_iter()
        .map(|(line, rec)| {
            Ok((
                field(&rec, 0, "layer_id", line)?,
                Plateau {
                    start_channels: field(&rec, 1, "start_channels", line)?,
                    end_channels: field(&rec, 2, "end_channels", line)?,
                    level_ms: field(&rec, 3, "level_ms", line)?,
                    points: field(&rec, 4, "points", line)?,
                },
            ))
        })
        .collect()
}

pub fn optimal_points_to_csv(rows: &[(String, Vec<(u32, f64)>)]) -> String {
    let mut out = format!("{OPTIMAL_HEADER}\n");
    for (id, points) in rows {
        for (c, t) in points {
            let _ = writeln!(out, "{id},{c},{t}");
        }
    }
    out
}

pub fn speedups_to_csv(rows: &[(String, SpeedupMap)]) -> String {
    let mut out = format!("{SPEEDUP_HEADER}\n");
    for (id, map) in rows {
        for (d, s) in &map.entries {
            let _ = writeln!(out, "{id},{},{d},{s}", map.baseline_channels);
        }
    }
    out
}

/// Speedup maps in order of first appearance of each layer id.
pub fn parse_speedups_str(text: &str) -> Result<Vec<(String, SpeedupMap)>> {
    let mut rows: Vec<(String, SpeedupMap)> = Vec::new();
    for (line, rec) in records(text, SPEEDUP_HEADER, 0)? {
        let id: String = field(&rec, 0, "layer_id", line)?;
        let baseline: u32 = field(&rec, 1, "baseline_channels", line)?;
        let d: u32 = field(&rec, 2, "distance", line)?;
        let s: f64 = field(&rec, 3, "speedup", line)?;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::RowValidation { line, message: format!("speedup must be positive, got {s}") });
        }
        match rows.iter_mut().find(|(existing, _)| *existing == id) {
            Some((_, map)) if map.baseline_channels == baseline => {
                map.entries.insert(d, s);
            }
            Some(_) => {
                return Err(Error::RowValidation { line, message: format!("layer `{id}` has two baselines") });
            }
            None => rows.push((id, SpeedupMap { baseline_channels: baseline, entries: BTreeMap::from([(d, s)]) })),
        }
    }
    Ok(rows)
}

pub fn regimes_to_csv(rows: &[(String, RegimeAssignment)]) -> String {
    let mut out = format!("{REGIME_HEADER}\n");
    for (id, r) in rows {
        for (c, label) in &r.labels {
            let _ = writeln!(out, "{id},{c},{label}");
        }
    }
    out
}

fn regions_field(regions: &[(u32, u32)]) -> String {
    regions.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(";")
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn recommendations_to_csv(reports: &[LayerReport]) -> String {
    let mut out = format!("{RECOMMENDATION_HEADER}\n");
    for r in reports {
        match r {
            LayerReport::Recommended { recommendation: rec, slowdowns } => {
                let _ = writeln!(
                    out,
                    "{},ok,{},{},{},{},{},{},",
                    rec.layer_id,
                    rec.base_channels,
                    rec.target_channels,
                    rec.predicted_latency_ms,
                    rec.speedup_vs_base,
                    rec.rationale,
                    regions_field(slowdowns)
                );
            }
            LayerReport::Skipped { layer_id, reason } => {
                let _ = writeln!(out, "{layer_id},skipped,,,,,,,{}", csv_escape(reason));
            }
        }
    }
    out
}

/// Human-readable summary of a set of layer reports.
pub fn recommendations_to_text(title: &str, reports: &[LayerReport]) -> String {
    let mut out = format!("{title}\n{}\n", "=".repeat(title.len()));
    for r in reports {
        match r {
            LayerReport::Recommended { recommendation: rec, slowdowns } => {
                let _ = writeln!(
                    out,
                    "{}: prune {} -> {} channels, {:.3} ms ({:.2}x vs base) [{}]",
                    rec.layer_id,
                    rec.base_channels,
                    rec.target_channels,
                    rec.predicted_latency_ms,
                    rec.speedup_vs_base,
                    rec.rationale
                );
                if !slowdowns.is_empty() {
                    let _ = writeln!(
                        out,
                        "  warning: slower than unpruned at prune distances {}",
                        regions_field(slowdowns)
                    );
                }
            }
            LayerReport::Skipped { layer_id, reason } => {
                let _ = writeln!(out, "{layer_id}: skipped ({reason})");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisor::{PruneRecommendation, Rationale};
    use proptest::prelude::*;

    #[test]
    fn three_rows() {
        let text = "layer_id,out_channels,run_index,latency_ms\nl16,96,0,14.1\nl16,96,1,14.0\nl16,95,0,13.9\n";
        let m = parse_measurements_str(text).unwrap();
        assert_eq!(m.samples.len(), 3);
        assert_eq!(m.samples[2], LatencySample::new("l16", 95, 0, 13.9).unwrap());
    }

    #[test]
    fn negative_latency_reports_line() {
        let text = "# device: hikey970\nlayer_id,out_channels,run_index,latency_ms\nl16,97,0,1.0\nl16,96,0,-1.0\n";
        match parse_measurements_str(text) {
            Err(Error::RowValidation { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "layer_id,out_channels,run_index,latency_ms\nl16,96,0,1.0\nl16,abc,0,1.0\n";
        assert!(matches!(parse_measurements_str(text), Err(Error::Parse { line: 3, .. })));
        let short = "layer_id,out_channels,run_index,latency_ms\nl16,96,0\n";
        assert!(matches!(parse_measurements_str(short), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_measurements_str("a,b,c,d\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn metadata_carries_device() {
        let m = parse_measurements_str(
            "# device: jetson-tx2\n# method: gemm\nlayer_id,out_channels,run_index,latency_ms\n",
        )
        .unwrap();
        assert_eq!(m.device(), Some("jetson-tx2"));
        assert_eq!(m.metadata.len(), 2);
    }

    #[test]
    fn curves_round_trip_and_order() {
        let a = LatencyCurve::from_points("b", [(1, 2.5), (3, 1.25)]).unwrap();
        let b = LatencyCurve::from_points("a", [(2, 0.1)]).unwrap();
        let text = curves_to_csv(&[a.clone(), b.clone()]);
        assert_eq!(parse_curves_str(&text).unwrap(), vec![a, b]);
        assert!(parse_curves_str("").unwrap().is_empty());
        assert!(parse_curves_str(&format!("{CURVE_HEADER}\n")).unwrap().is_empty());
        assert!(parse_curves_str(&format!("{CURVE_HEADER}\nx,1,1\nx,1,2\n")).is_err());
    }

    #[test]
    fn configs_validate_geometry() {
        let ok = format!("{CONFIG_HEADER}\nl,3,8,3,3,8,8,1,1\n");
        assert_eq!(parse_configs_str(&ok).unwrap()[0].output(), (8, 8));
        let bad = format!("{CONFIG_HEADER}\nl,3,8,3,3,8,8,1,1\nl,3,8,3,3,4,4,2,0\n");
        assert!(matches!(parse_configs_str(&bad), Err(Error::RowValidation { line: 3, .. })));
    }

    #[test]
    fn speedups_round_trip() {
        let map = SpeedupMap { baseline_channels: 10, entries: BTreeMap::from([(0, 1.0), (3, 0.5), (9, 2.75)]) };
        let rows = vec![("x".to_string(), map)];
        assert_eq!(parse_speedups_str(&speedups_to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn recommendation_outputs() {
        let rec = PruneRecommendation {
            layer_id: "l".into(),
            base_channels: 10,
            target_channels: 5,
            predicted_latency_ms: 10.0,
            speedup_vs_base: 2.0,
            rationale: Rationale::BudgetFit,
        };
        let reports = vec![
            LayerReport::Recommended { recommendation: rec, slowdowns: vec![(1, 4), (7, 7)] },
            LayerReport::Skipped { layer_id: "m".into(), reason: "no latency curve, sorry".into() },
        ];
        let csv = recommendations_to_csv(&reports);
        assert_eq!(
            csv,
            format!("{RECOMMENDATION_HEADER}\nl,ok,10,5,10,2,BUDGET_FIT,1-4;7-7,\nm,skipped,,,,,,,\"no latency curve, sorry\"\n")
        );
        let text = recommendations_to_text("Report", &reports);
        assert!(text.contains("l: prune 10 -> 5 channels"));
        assert!(text.contains("warning"));
        assert!(text.contains("m: skipped"));
    }

    proptest! {
        #[test]
        fn measurement_round_trip(
            rows in prop::collection::vec(("[a-zA-Z][a-zA-Z0-9._]{0,8}", 1u32..4096, 0u32..20, 1e-6f64..1e6), 0..40),
            device in prop::option::of("[a-z0-9-]{1,12}"),
        ) {
            let file = MeasurementFile {
                metadata: device.into_iter().map(|d| ("device".to_string(), d)).collect(),
                samples: rows.into_iter().map(|(id, c, r, t)| LatencySample::new(id, c, r, t).unwrap()).collect(),
            };
            prop_assert_eq!(parse_measurements_str(&file.to_csv()).unwrap(), file);
        }
    }
}
