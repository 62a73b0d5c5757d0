//! Staircase structure of latency curves.
//!
//! A layer's latency as a function of its filter count is piecewise flat.
//! This module aggregates raw runs into a curve, segments the curve into
//! plateaus, picks the right edge of each plateau as a pruning target, and
//! measures how much pruning by a given distance helps or hurts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{LatencyCurve, LatencySample};

/// Default relative tolerance for plateau membership. Comfortably below the
/// smallest step ratios seen in practice (about 1.18x).
pub const DEFAULT_REL_TOL: f64 = 0.03;

/// Median with the even-length rule: mean of the two middle values.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

fn sorted_median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Collapse repeated runs into one median latency per channel count.
pub fn aggregate_median(samples: &[LatencySample]) -> Result<LatencyCurve> {
    let first = samples.first().ok_or(Error::EmptyCurve)?;
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in samples {
        if s.layer_id != first.layer_id {
            return Err(Error::validation(format!("samples mix layers `{}` and `{}`", first.layer_id, s.layer_id)));
        }
        groups.entry(s.out_channels).or_default().push(s.latency_ms);
    }
    let points =
        groups.into_iter().map(|(c, mut runs)| (c, median(&mut runs).expect("groups are non-empty"))).collect();
    LatencyCurve::new(first.layer_id.clone(), points)
}

/// A maximal run of channel counts sharing one latency level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub start_channels: u32,
    pub end_channels: u32,
    /// Median latency of the member points.
    pub level_ms: f64,
    /// Number of curve points in the run.
    pub points: usize,
}

impl Plateau {
    pub fn contains(&self, channels: u32) -> bool {
        (self.start_channels..=self.end_channels).contains(&channels)
    }
}

fn within(sorted: &[f64], rel_tol: f64) -> bool {
    let m = sorted_median(sorted);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    (m - lo) <= rel_tol * m && (hi - m) <= rel_tol * m
}

/// Greedy left-to-right segmentation into plateaus.
///
/// A run keeps extending while every member stays within `rel_tol` of the
/// run's median. Runs cover every point; single-point runs are allowed.
pub fn detect_plateaus(curve: &LatencyCurve, rel_tol: f64) -> Result<Vec<Plateau>> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::validation(format!("rel_tol must be in (0, 1), got {rel_tol}")));
    }
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let points: Vec<(u32, f64)> = curve.iter().collect();
    let mut plateaus = Vec::new();
    let mut i = 0;
    while i < points.len() {
        let mut members = vec![points[i].1];
        let mut j = i + 1;
        while j < points.len() {
            let t = points[j].1;
            let at = members.partition_point(|&x| x <= t);
            members.insert(at, t);
            if !within(&members, rel_tol) {
                members.remove(at);
                break;
            }
            j += 1;
        }
        plateaus.push(Plateau {
            start_channels: points[i].0,
            end_channels: points[j - 1].0,
            level_ms: sorted_median(&members),
            points: members.len(),
        });
        i = j;
    }
    Ok(plateaus)
}

/// Right edge of every plateau: the most channels obtainable at that level.
pub fn optimal_points(plateaus: &[Plateau]) -> Vec<(u32, f64)> {
    plateaus.iter().map(|p| (p.end_channels, p.level_ms)).collect()
}

/// Speedup of pruning by each distance, relative to a baseline.
///
/// Entries are `T(baseline) / T(baseline - d)`: above 1 pruning helped,
/// below 1 it made the layer slower.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupMap {
    pub baseline_channels: u32,
    pub entries: BTreeMap<u32, f64>,
}

impl SpeedupMap {
    pub fn get(&self, distance: u32) -> Option<f64> {
        self.entries.get(&distance).copied()
    }
}

pub fn speedup_map(curve: &LatencyCurve, baseline_channels: u32) -> Result<SpeedupMap> {
    let base = curve.latency(baseline_channels).ok_or_else(|| {
        Error::validation(format!("baseline {baseline_channels} channels is not in curve `{}`", curve.layer_id()))
    })?;
    let entries = curve
        .iter()
        .filter(|&(c, _)| c <= baseline_channels)
        .map(|(c, t)| (baseline_channels - c, if c == baseline_channels { 1.0 } else { base / t }))
        .collect();
    Ok(SpeedupMap { baseline_channels, entries })
}

/// Maximal runs of consecutive map entries (in distance order) with
/// speedup below 1, as inclusive `(first_distance, last_distance)` pairs.
pub fn slowdown_regions(map: &SpeedupMap) -> Vec<(u32, u32)> {
    let mut regions = Vec::new();
    let mut open: Option<(u32, u32)> = None;
    for (&d, &s) in &map.entries {
        if s < 1.0 {
            open = Some(match open {
                Some((start, _)) => (start, d),
                None => (d, d),
            });
        } else if let Some(r) = open.take() {
            regions.push(r);
        }
    }
    regions.extend(open);
    regions
}

/// Per-point latency regime labels. Label 0 is the fastest regime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegimeAssignment {
    pub k: usize,
    pub labels: BTreeMap<u32, usize>,
}

impl RegimeAssignment {
    /// The sub-curve of points carrying `label`.
    pub fn regime_curve(&self, curve: &LatencyCurve, label: usize) -> Result<LatencyCurve> {
        LatencyCurve::new(curve.layer_id(), curve.iter().filter(|(c, _)| self.labels.get(c) == Some(&label)).collect())
    }

    /// Plateaus of each regime's own staircase. Empty regimes yield no plateaus.
    pub fn staircases(&self, curve: &LatencyCurve, rel_tol: f64) -> Result<Vec<Vec<Plateau>>> {
        (0..self.k)
            .map(|label| {
                let sub = self.regime_curve(curve, label)?;
                if sub.is_empty() {
                    Ok(Vec::new())
                } else {
                    detect_plateaus(&sub, rel_tol)
                }
            })
            .collect()
    }
}

/// Optimal 1-D k-medians over sorted values. Returns the start index of each
/// cluster. Boundaries only fall between distinct values.
fn kmedians_1d(sorted: &[f64], k: usize) -> Vec<usize> {
    let n = sorted.len();
    let cost = |i: usize, j: usize| -> f64 {
        let seg = &sorted[i..j];
        let m = sorted_median(seg);
        seg.iter().map(|x| (x - m).abs()).sum()
    };
    // dp[m][j]: best cost of splitting sorted[..j] into m clusters
    let mut dp = vec![vec![f64::INFINITY; n + 1]; k + 1];
    let mut arg = vec![vec![0usize; n + 1]; k + 1];
    dp[0][0] = 0.0;
    for m in 1..=k {
        for j in m..=n {
            if j < n && sorted[j - 1] == sorted[j] {
                continue;
            }
            for i in (m - 1)..j {
                if i > 0 && sorted[i - 1] == sorted[i] {
                    continue;
                }
                if !dp[m - 1][i].is_finite() {
                    continue;
                }
                let c = dp[m - 1][i] + cost(i, j);
                if c < dp[m][j] {
                    dp[m][j] = c;
                    arg[m][j] = i;
                }
            }
        }
    }
    let mut starts = vec![0; k];
    let mut j = n;
    for m in (1..=k).rev() {
        starts[m - 1] = arg[m][j];
        j = arg[m][j];
    }
    starts
}

fn distinct_levels(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Default sliding window for [`regime_split`]: enough to see two full
/// periods of a group-of-4 interleave.
pub fn default_regime_window(k: usize) -> usize {
    (8 * k).max(16)
}

pub fn regime_split(curve: &LatencyCurve, k: usize) -> Result<RegimeAssignment> {
    regime_split_with_window(curve, k, default_regime_window(k))
}

/// Assign each point to one of `k` latency regimes.
///
/// For every point, the latencies in a window of neighbouring channel counts
/// are clustered into `k` levels (exact 1-D k-medians) and the point takes
/// the rank of its level. A window that holds fewer than `k` distinct
/// latencies is widened until it does.
pub fn regime_split_with_window(curve: &LatencyCurve, k: usize, window: usize) -> Result<RegimeAssignment> {
    if k == 0 {
        return Err(Error::validation("regime count must be at least 1"));
    }
    if curve.len() < 2 * k {
        return Err(Error::validation(format!(
            "{k} regimes need at least {} points, curve has {}",
            2 * k,
            curve.len()
        )));
    }
    let latencies: Vec<f64> = curve.iter().map(|(_, t)| t).collect();
    let levels = distinct_levels(&latencies);
    if k > levels {
        return Err(Error::DegenerateCluster { k, levels });
    }
    let channels: Vec<u32> = curve.channels().collect();
    let n = latencies.len();
    let half = window.max(1) / 2;
    let mut labels = BTreeMap::new();
    for (idx, &c) in channels.iter().enumerate() {
        let mut reach = half;
        let (lo, hi) = loop {
            let lo = idx.saturating_sub(reach);
            let hi = (idx + reach + 1).min(n);
            if distinct_levels(&latencies[lo..hi]) >= k || (lo == 0 && hi == n) {
                break (lo, hi);
            }
            reach += 1;
        };
        let mut sorted = latencies[lo..hi].to_vec();
        sorted.sort_by(f64::total_cmp);
        let starts = kmedians_1d(&sorted, k);
        let pos = sorted.partition_point(|&x| x < latencies[idx]);
        let label = starts.iter().rposition(|&s| s <= pos).unwrap_or(0);
        labels.insert(c, label);
    }
    Ok(RegimeAssignment { k, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(points: impl IntoIterator<Item = (u32, f64)>) -> LatencyCurve {
        LatencyCurve::from_points("l", points).unwrap()
    }

    fn two_step() -> LatencyCurve {
        curve((1..=10).map(|c| (c, if c <= 5 { 10.0 } else { 20.0 })))
    }

    fn samples(runs: &[(u32, f64)]) -> Vec<LatencySample> {
        runs.iter().enumerate().map(|(i, &(c, t))| LatencySample::new("l", c, i as u32, t).unwrap()).collect()
    }

    #[test]
    fn medians() {
        assert_eq!(aggregate_median(&samples(&[(64, 5.0)])).unwrap().latency(64), Some(5.0));
        assert_eq!(aggregate_median(&samples(&[(8, 1.0), (8, 3.0), (8, 2.0)])).unwrap().latency(8), Some(2.0));
        let even = samples(&[(8, 1.0), (8, 2.0), (8, 3.0), (8, 10.0)]);
        assert_eq!(aggregate_median(&even).unwrap().latency(8), Some(2.5));
    }

    #[test]
    fn median_errors() {
        assert!(matches!(aggregate_median(&[]), Err(Error::EmptyCurve)));
        let mut mixed = samples(&[(8, 1.0), (8, 2.0)]);
        mixed[1].layer_id = "other".into();
        assert!(matches!(aggregate_median(&mixed), Err(Error::Validation(_))));
    }

    #[test]
    fn constant_curve_is_one_plateau() {
        let c = curve((1..=50).map(|c| (c, 7.5)));
        let p = detect_plateaus(&c, 0.01).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].start_channels, p[0].end_channels, p[0].level_ms), (1, 50, 7.5));
    }

    #[test]
    fn two_step_plateaus_and_edges() {
        let p = detect_plateaus(&two_step(), 0.05).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].start_channels, p[0].end_channels, p[0].level_ms), (1, 5, 10.0));
        assert_eq!((p[1].start_channels, p[1].end_channels, p[1].level_ms), (6, 10, 20.0));
        assert_eq!(optimal_points(&p), vec![(5, 10.0), (10, 20.0)]);
    }

    #[test]
    fn alternating_levels_give_single_point_plateaus() {
        let c = curve((1..=12).map(|c| (c, if c % 2 == 0 { 14.0 } else { 23.0 })));
        let p = detect_plateaus(&c, 0.05).unwrap();
        assert_eq!(p.len(), 12);
        assert!(p.iter().all(|p| p.start_channels == p.end_channels));
    }

    #[test]
    fn cudnn_shaped_edges() {
        // flat above 96, step at 96, another at 64, another at 32
        let c = curve((1..=128).map(|c| {
            let t = match c {
                97.. => 4.0,
                65..=96 => 3.1,
                33..=64 => 2.0,
                _ => 1.2,
            };
            (c, t)
        }));
        let edges: Vec<u32> =
            optimal_points(&detect_plateaus(&c, DEFAULT_REL_TOL).unwrap()).into_iter().map(|(c, _)| c).collect();
        assert_eq!(edges, vec![32, 64, 96, 128]);
    }

    #[test]
    fn boundary_point_attaches_left() {
        // 10.25 is within 3% of either run; it stays with the left one
        let c = curve([(1, 10.0), (2, 10.0), (3, 10.25), (4, 10.5), (5, 10.5)]);
        let p = detect_plateaus(&c, 0.03).unwrap();
        assert_eq!(p[0].end_channels, 3);
        assert_eq!(p[1].start_channels, 4);
    }

    #[test]
    fn bad_tolerance() {
        assert!(detect_plateaus(&two_step(), 0.0).is_err());
        assert!(detect_plateaus(&two_step(), 1.0).is_err());
    }

    #[test]
    fn quoted_speedups() {
        let l45 = curve([(2024, 7.67), (2036, 19.69)]);
        let s = speedup_map(&l45, 2036).unwrap();
        assert!((s.get(12).unwrap() - 2.57).abs() <= 0.01);
        assert_eq!(s.get(0), Some(1.0));

        let l16 = curve([(76, 20.12), (78, 10.996)]);
        let s = speedup_map(&l16, 78).unwrap();
        assert!((s.get(2).unwrap() - 0.547).abs() <= 0.005);
        assert!((1.0 / s.get(2).unwrap() - 1.83).abs() <= 0.01);
        assert!(speedup_map(&l16, 77).is_err());
    }

    #[test]
    fn slowdowns() {
        let mono = curve((1..=20).map(|c| (c, c as f64)));
        assert!(slowdown_regions(&speedup_map(&mono, 20).unwrap()).is_empty());

        let c0 = 20;
        let acl = curve((1..=c0).map(|c| (c, if (c0 - 4..c0).contains(&c) { 2.0 } else { 1.0 })));
        assert_eq!(slowdown_regions(&speedup_map(&acl, c0).unwrap()), vec![(1, 4)]);

        let single = SpeedupMap { baseline_channels: 9, entries: BTreeMap::from([(1, 0.2)]) };
        assert_eq!(slowdown_regions(&single), vec![(1, 1)]);
    }

    #[test]
    fn regimes_single() {
        let r = regime_split(&two_step(), 1).unwrap();
        assert!(r.labels.values().all(|&l| l == 0));
        assert_eq!(r.regime_curve(&two_step(), 0).unwrap(), two_step());
    }

    #[test]
    fn regimes_interleaved_groups_of_four() {
        let c = curve((1..=128).map(|c| (c, if (1..=4).contains(&((c - 1) % 8 + 1)) { 14.0 } else { 23.0 })));
        let r = regime_split(&c, 2).unwrap();
        for (ch, t) in c.iter() {
            assert_eq!(r.labels[&ch], usize::from(t == 23.0), "channel {ch}");
        }
    }

    #[test]
    fn regimes_three_levels() {
        let levels = [1.0, 1.18, 1.21];
        let c = curve((1..=60).map(|c| (c, 10.0 * levels[(c % 3) as usize])));
        let r = regime_split(&c, 3).unwrap();
        for ch in 1..=60u32 {
            assert_eq!(r.labels[&ch], (ch % 3) as usize);
        }
    }

    #[test]
    fn regimes_on_a_rising_double_staircase() {
        // both staircases step up every 16 channels; the slow one sits 60% higher
        let c = curve((1..=128).map(|c| {
            let level = 10.0 + ((c - 1) / 16) as f64 * 2.0;
            let slow = (c - 1) % 16 < 12;
            (c, if slow { level * 1.6 } else { level })
        }));
        let r = regime_split(&c, 2).unwrap();
        for ch in 1..=128u32 {
            assert_eq!(r.labels[&ch], usize::from((ch - 1) % 16 < 12), "channel {ch}");
        }
    }

    #[test]
    fn regime_errors() {
        let flat = curve((1..=10).map(|c| (c, 3.0)));
        assert!(matches!(regime_split(&flat, 2), Err(Error::DegenerateCluster { k: 2, levels: 1 })));
        assert!(regime_split(&two_step(), 0).is_err());
        assert!(regime_split(&two_step(), 6).is_err());
    }

    proptest! {
        #[test]
        fn plateaus_partition_the_curve(values in prop::collection::vec(0.5f64..50.0, 1..80), tol in 0.005f64..0.3) {
            let c = curve(values.iter().enumerate().map(|(i, &t)| (i as u32 + 1, t)));
            let plateaus = detect_plateaus(&c, tol).unwrap();
            let mut covered = Vec::new();
            for p in &plateaus {
                covered.extend(c.channels().filter(|&ch| p.contains(ch)));
                let mut members: Vec<f64> = c.iter().filter(|&(ch, _)| p.contains(ch)).map(|(_, t)| t).collect();
                let m = median(&mut members).unwrap();
                prop_assert!(members.iter().all(|t| (t - m).abs() <= tol * m + 1e-12));
            }
            prop_assert_eq!(covered, c.channels().collect::<Vec<_>>());
            let edges: Vec<u32> = optimal_points(&plateaus).iter().map(|p| p.0).collect();
            prop_assert!(edges.iter().all(|e| plateaus.iter().any(|p| p.end_channels == *e)));
        }

        #[test]
        fn speedups_are_scale_invariant(values in prop::collection::vec(0.5f64..50.0, 2..60), k in 0.01f64..100.0) {
            let c = curve(values.iter().enumerate().map(|(i, &t)| (i as u32 + 1, t)));
            let base = c.base_channels().unwrap();
            let a = speedup_map(&c, base).unwrap();
            let b = speedup_map(&c.scaled(k).unwrap(), base).unwrap();
            for (d, s) in &a.entries {
                prop_assert!((s - b.entries[d]).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }

        #[test]
        fn slowdowns_agree_with_map(values in prop::collection::vec(0.5f64..50.0, 2..60)) {
            let c = curve(values.iter().enumerate().map(|(i, &t)| (i as u32 + 1, t)));
            let map = speedup_map(&c, c.base_channels().unwrap()).unwrap();
            let regions = slowdown_regions(&map);
            for (&d, &s) in &map.entries {
                let inside = regions.iter().any(|&(a, b)| (a..=b).contains(&d));
                prop_assert_eq!(inside, s < 1.0);
            }
        }

        #[test]
        fn single_regime_keeps_plateaus(values in prop::collection::vec(0.5f64..50.0, 2..60), tol in 0.01f64..0.2) {
            let c = curve(values.iter().enumerate().map(|(i, &t)| (i as u32 + 1, t)));
            let r = regime_split(&c, 1).unwrap();
            let sub = r.regime_curve(&c, 0).unwrap();
            prop_assert_eq!(detect_plateaus(&sub, tol).unwrap(), detect_plateaus(&c, tol).unwrap());
        }
    }
}
