//! Speedup heatmaps: one row per layer, one column per prune distance.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::staircase::SpeedupMap;

/// Prune distances shown by default.
pub const DEFAULT_DISTANCES: [u32; 12] = [1, 4, 8, 16, 32, 64, 96, 128, 192, 256, 384, 512];

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub layer_id: String,
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub distances: Vec<u32>,
    pub rows: Vec<HeatmapRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Svg,
}

impl FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(HeatmapFormat::Csv),
            "svg" => Ok(HeatmapFormat::Svg),
            other => Err(Error::validation(format!("unknown format `{other}` (expected csv or svg)"))),
        }
    }
}

impl HeatmapGrid {
    /// Rows follow the order of `maps`; a cell is empty when the layer has no
    /// entry at that distance.
    pub fn from_speedups(maps: &[(String, SpeedupMap)], distances: &[u32]) -> Self {
        let rows = maps
            .iter()
            .map(|(id, map)| HeatmapRow {
                layer_id: id.clone(),
                cells: distances.iter().map(|d| map.get(*d)).collect(),
            })
            .collect();
        Self { distances: distances.to_vec(), rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() || self.distances.is_empty()
    }

    pub fn get(&self, layer_id: &str, distance: u32) -> Option<f64> {
        let col = self.distances.iter().position(|&d| d == distance)?;
        self.rows.iter().find(|r| r.layer_id == layer_id)?.cells[col]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_id");
        for d in &self.distances {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.layer_id);
            for cell in &row.cells {
                out.push(',');
                if let Some(v) = cell {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
        if headers.get(0) != Some("layer_id") {
            return Err(Error::Parse { line: 1, message: "first column must be layer_id".into() });
        }
        let distances = headers
            .iter()
            .skip(1)
            .map(|h| h.parse::<u32>().map_err(|e| Error::Parse { line: 1, message: format!("distance `{h}`: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec =
                rec.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
            let line = rec.position().map_or(0, |p| p.line());
            let cells = rec
                .iter()
                .skip(1)
                .map(|v| {
                    if v.is_empty() {
                        Ok(None)
                    } else {
                        v.parse().map(Some).map_err(|e| Error::Parse { line, message: format!("`{v}`: {e}") })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(HeatmapRow { layer_id: rec[0].to_string(), cells });
        }
        Ok(Self { distances, rows })
    }

    pub fn to_svg(&self) -> String {
        const LABEL_W: usize = 120;
        const HEADER_H: usize = 36;
        const CELL_W: usize = 52;
        const CELL_H: usize = 24;
        let width = LABEL_W + CELL_W * self.distances.len() + 10;
        let height = HEADER_H + CELL_H * self.rows.len() + 10;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width}" height="{height}" style="fill:#ffffff"/>"#);
        let _ = writeln!(svg, r#"<text x="4" y="14" style="fill:#333333">prune distance</text>"#);
        for (j, d) in self.distances.iter().enumerate() {
            let x = LABEL_W + j * CELL_W + CELL_W / 2;
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{}" text-anchor="middle" style="fill:#333333">{d}</text>"#,
                HEADER_H - 8
            );
        }
        for (i, row) in self.rows.iter().enumerate() {
            let y = HEADER_H + i * CELL_H;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end" style="fill:#333333">{}</text>"#,
                LABEL_W - 6,
                y + CELL_H / 2 + 4,
                xml_escape(&row.layer_id)
            );
            for (j, cell) in row.cells.iter().enumerate() {
                let Some(v) = cell else { continue };
                let x = LABEL_W + j * CELL_W;
                let class = if *v < 1.0 { "slowdown" } else { "speedup" };
                let _ = writeln!(
                    svg,
                    r#"<rect class="{class}" x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" style="fill:{};stroke:#ffffff;stroke-width:1"/>"#,
                    speedup_color(*v)
                );
                let ink = if (v.log2() / 3.0).abs() > 0.55 { "#ffffff" } else { "#222222" };
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" text-anchor="middle" style="fill:{ink}">{v:.2}</text>"#,
                    x + CELL_W / 2,
                    y + CELL_H / 2 + 4
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

pub fn emit_heatmap(grid: &HeatmapGrid, format: HeatmapFormat) -> Result<String> {
    if grid.is_empty() {
        return Err(Error::validation("heatmap has no rows or no distance columns"));
    }
    Ok(match format {
        HeatmapFormat::Csv => grid.to_csv(),
        HeatmapFormat::Svg => grid.to_svg(),
    })
}

const NEUTRAL: (f64, f64, f64) = (247.0, 247.0, 247.0);
const GAIN: (f64, f64, f64) = (26.0, 152.0, 80.0);
const LOSS: (f64, f64, f64) = (215.0, 48.0, 39.0);

/// Diverging log-scale colour: 1x is neutral grey, speedups go green,
/// slowdowns red, saturating at 8x either way.
pub fn speedup_color(speedup: f64) -> String {
    let t = (speedup.log2() / 3.0).clamp(-1.0, 1.0);
    let (end, t) = if t >= 0.0 { (GAIN, t) } else { (LOSS, -t) };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(NEUTRAL.0, end.0), mix(NEUTRAL.1, end.1), mix(NEUTRAL.2, end.2))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn one_cell(v: f64) -> HeatmapGrid {
        HeatmapGrid {
            distances: vec![12],
            rows: vec![HeatmapRow { layer_id: "ResNet.L45".into(), cells: vec![Some(v)] }],
        }
    }

    #[test]
    fn single_cell_csv() {
        assert_eq!(emit_heatmap(&one_cell(2.57), HeatmapFormat::Csv).unwrap(), "layer_id,12\nResNet.L45,2.57\n");
    }

    #[test]
    fn empty_cells() {
        let grid = HeatmapGrid {
            distances: vec![1, 4],
            rows: vec![HeatmapRow { layer_id: "a".into(), cells: vec![None, Some(1.5)] }],
        };
        assert_eq!(grid.to_csv(), "layer_id,1,4\na,,1.5\n");
        let svg = grid.to_svg();
        assert_eq!(svg.matches("<rect class=").count(), 1);
        assert_eq!(HeatmapGrid::from_csv(&grid.to_csv()).unwrap(), grid);
    }

    #[test]
    fn all_ones_is_uniformly_neutral() {
        let grid = HeatmapGrid {
            distances: vec![1, 4, 8],
            rows: (0..3).map(|i| HeatmapRow { layer_id: format!("l{i}"), cells: vec![Some(1.0); 3] }).collect(),
        };
        let svg = grid.to_svg();
        assert_eq!(svg.matches("<rect class=").count(), 9);
        assert_eq!(svg.matches("fill:#f7f7f7;").count(), 9);
    }

    #[test]
    fn slowdowns_look_different() {
        assert_eq!(speedup_color(1.0), "#f7f7f7");
        assert_ne!(speedup_color(0.5), speedup_color(2.0));
        assert_eq!(speedup_color(100.0), "#1a9850");
        assert_eq!(speedup_color(0.01), "#d73027");
        assert!(one_cell(0.2).to_svg().contains(r#"class="slowdown""#));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let grid = HeatmapGrid { distances: vec![1], rows: vec![] };
        assert!(emit_heatmap(&grid, HeatmapFormat::Svg).is_err());
    }

    #[test]
    fn grid_from_maps() {
        let map = SpeedupMap { baseline_channels: 64, entries: BTreeMap::from([(0, 1.0), (1, 0.2), (4, 1.3)]) };
        let grid = HeatmapGrid::from_speedups(&[("a".into(), map)], &DEFAULT_DISTANCES);
        assert_eq!(grid.get("a", 1), Some(0.2));
        assert_eq!(grid.get("a", 4), Some(1.3));
        assert_eq!(grid.get("a", 8), None);
    }

    proptest! {
        #[test]
        fn csv_round_trip(cells in prop::collection::vec(prop::collection::vec(prop::option::of(1e-3f64..1e3), 4), 1..6)) {
            let grid = HeatmapGrid {
                distances: vec![1, 4, 8, 16],
                rows: cells.into_iter().enumerate().map(|(i, c)| HeatmapRow { layer_id: format!("L{i}"), cells: c }).collect(),
            };
            let back = HeatmapGrid::from_csv(&grid.to_csv()).unwrap();
            prop_assert_eq!(&back.distances, &grid.distances);
            for (a, b) in back.rows.iter().zip(&grid.rows) {
                for (x, y) in a.cells.iter().zip(&b.cells) {
                    match (x, y) {
                        (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9),
                        (None, None) => {}
                        _ => prop_assert!(false),
                    }
                }
            }
        }
    }
}
