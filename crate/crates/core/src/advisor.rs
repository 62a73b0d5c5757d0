//! Pruning recommendations from analysed latency curves.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{LatencyCurve, NetworkModel};
use crate::staircase::{slowdown_regions, speedup_map};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rationale {
    /// Nearest stair edge below the unpruned configuration.
    ParetoEdge,
    /// Most channels that fit a latency budget.
    BudgetFit,
    /// Fastest configuration that keeps an accuracy floor.
    AccuracyFloor,
}

impl Rationale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rationale::ParetoEdge => "PARETO_EDGE",
            Rationale::BudgetFit => "BUDGET_FIT",
            Rationale::AccuracyFloor => "ACCURACY_FLOOR",
        }
    }
}

impl fmt::Display for Rationale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRecommendation {
    pub layer_id: String,
    pub base_channels: u32,
    pub target_channels: u32,
    pub predicted_latency_ms: f64,
    pub speedup_vs_base: f64,
    pub rationale: Rationale,
}

/// Estimated accuracy of a layer pruned to a channel count, in `[0, 1]`.
///
/// Implementations must answer the same way for the same input within one
/// advisory run.
pub trait AccuracyOracle {
    fn accuracy(&self, layer_id: &str, channels: u32) -> f64;
}

impl<F: Fn(&str, u32) -> f64> AccuracyOracle for F {
    fn accuracy(&self, layer_id: &str, channels: u32) -> f64 {
        self(layer_id, channels)
    }
}

/// Synthetic toy oracle: accuracy is the fraction of channels kept,
/// `channels / base`. For demos and tests only; it knows nothing about any
/// trained model. Unknown layers score 0.
#[derive(Debug, Clone, Default)]
pub struct LinearOracle {
    bases: BTreeMap<String, u32>,
}

impl LinearOracle {
    pub fn new(bases: impl IntoIterator<Item = (String, u32)>) -> Self {
        Self { bases: bases.into_iter().collect() }
    }

    pub fn from_curves<'a>(curves: impl IntoIterator<Item = &'a LatencyCurve>) -> Self {
        Self::new(curves.into_iter().filter_map(|c| c.base_channels().map(|b| (c.layer_id().to_string(), b))))
    }
}

impl AccuracyOracle for LinearOracle {
    fn accuracy(&self, layer_id: &str, channels: u32) -> f64 {
        match self.bases.get(layer_id) {
            Some(&base) if base > 0 => (f64::from(channels) / f64::from(base)).min(1.0),
            _ => 0.0,
        }
    }
}

/// Points not dominated in (more channels, less latency), by descending channels.
///
/// A point survives iff it is strictly faster than every configuration with
/// more channels.
pub fn pareto_front(curve: &LatencyCurve) -> Result<Vec<(u32, f64)>> {
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut front = Vec::new();
    let mut best = f64::INFINITY;
    for (c, t) in curve.iter().rev() {
        if t < best {
            front.push((c, t));
            best = t;
        }
    }
    Ok(front)
}

fn recommendation(curve: &LatencyCurve, (target, latency): (u32, f64), rationale: Rationale) -> PruneRecommendation {
    let base = curve.base_channels().expect("non-empty curve");
    let base_latency = curve.latency(base).expect("base is a curve point");
    PruneRecommendation {
        layer_id: curve.layer_id().to_string(),
        base_channels: base,
        target_channels: target,
        predicted_latency_ms: latency,
        speedup_vs_base: base_latency / latency,
        rationale,
    }
}

/// First stair below the unpruned configuration: the most channels that
/// still buy a latency reduction. Falls back to the base when nothing is
/// faster.
pub fn recommend_pareto_edge(curve: &LatencyCurve) -> Result<PruneRecommendation> {
    let front = pareto_front(curve)?;
    let pick = front.get(1).copied().unwrap_or(front[0]);
    Ok(recommendation(curve, pick, Rationale::ParetoEdge))
}

pub fn recommend_for_budget(curve: &LatencyCurve, latency_budget_ms: f64) -> Result<PruneRecommendation> {
    if !(latency_budget_ms.is_finite() && latency_budget_ms > 0.0) {
        return Err(Error::validation(format!("latency budget must be positive, got {latency_budget_ms}")));
    }
    let front = pareto_front(curve)?;
    let pick = front.iter().copied().find(|&(_, t)| t <= latency_budget_ms).ok_or_else(|| Error::InfeasibleBudget {
        budget_ms: latency_budget_ms,
        min_latency_ms: front.last().map_or(f64::NAN, |p| p.1),
    })?;
    Ok(recommendation(curve, pick, Rationale::BudgetFit))
}

pub fn recommend_with_accuracy(
    curve: &LatencyCurve,
    oracle: &dyn AccuracyOracle,
    min_accuracy: f64,
) -> Result<PruneRecommendation> {
    if min_accuracy.is_nan() || min_accuracy < 0.0 {
        return Err(Error::validation(format!("accuracy floor must be in [0, 1], got {min_accuracy}")));
    }
    let front = pareto_front(curve)?;
    let mut pick: Option<(u32, f64)> = None;
    // front is by descending channels, so a strict `<` keeps ties on the larger layer
    for &(c, t) in &front {
        let acc = oracle.accuracy(curve.layer_id(), c);
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::validation(format!(
                "oracle returned accuracy {acc} for `{}` at {c} channels",
                curve.layer_id()
            )));
        }
        if acc >= min_accuracy && pick.is_none_or(|(_, best)| t < best) {
            pick = Some((c, t));
        }
    }
    let pick = pick.ok_or(Error::InfeasibleAccuracy { floor: min_accuracy })?;
    Ok(recommendation(curve, pick, Rationale::AccuracyFloor))
}

#[derive(Clone, Copy)]
pub enum Objective<'a> {
    ParetoEdge,
    Budget(f64),
    Accuracy { oracle: &'a dyn AccuracyOracle, min_accuracy: f64 },
}

impl fmt::Debug for Objective<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::ParetoEdge => f.write_str("ParetoEdge"),
            Objective::Budget(b) => write!(f, "Budget({b})"),
            Objective::Accuracy { min_accuracy, .. } => write!(f, "Accuracy({min_accuracy})"),
        }
    }
}

pub fn recommend(curve: &LatencyCurve, objective: Objective<'_>) -> Result<PruneRecommendation> {
    match objective {
        Objective::ParetoEdge => recommend_pareto_edge(curve),
        Objective::Budget(b) => recommend_for_budget(curve, b),
        Objective::Accuracy { oracle, min_accuracy } => recommend_with_accuracy(curve, oracle, min_accuracy),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerReport {
    Recommended {
        recommendation: PruneRecommendation,
        /// Prune-distance intervals where the layer gets slower.
        slowdowns: Vec<(u32, u32)>,
    },
    Skipped {
        layer_id: String,
        reason: String,
    },
}

impl LayerReport {
    pub fn layer_id(&self) -> &str {
        match self {
            LayerReport::Recommended { recommendation, .. } => &recommendation.layer_id,
            LayerReport::Skipped { layer_id, .. } => layer_id,
        }
    }
}

fn layer_report(curve: &LatencyCurve, objective: Objective<'_>) -> LayerReport {
    let analysed = recommend(curve, objective).and_then(|rec| {
        let map = speedup_map(curve, rec.base_channels)?;
        Ok((rec, slowdown_regions(&map)))
    });
    match analysed {
        Ok((recommendation, slowdowns)) => LayerReport::Recommended { recommendation, slowdowns },
        Err(e) => LayerReport::Skipped { layer_id: curve.layer_id().to_string(), reason: e.to_string() },
    }
}

/// One entry per network layer, in network order. Layers without a curve,
/// or whose objective cannot be met, are reported as skipped.
pub fn network_report(network: &NetworkModel, curves: &[LatencyCurve], objective: Objective<'_>) -> Vec<LayerReport> {
    network
        .layers()
        .iter()
        .map(|layer| match curves.iter().find(|c| c.layer_id() == layer.layer_id()) {
            Some(curve) => layer_report(curve, objective),
            None => LayerReport::Skipped { layer_id: layer.layer_id().to_string(), reason: "no latency curve".into() },
        })
        .collect()
}

/// Like [`network_report`] but over whatever curves are given, in order.
pub fn curves_report(curves: &[LatencyCurve], objective: Objective<'_>) -> Vec<LayerReport> {
    curves.iter().map(|c| layer_report(c, objective)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvLayerSpec, LayerGeometry};
    use proptest::prelude::*;

    fn curve(id: &str, points: impl IntoIterator<Item = (u32, f64)>) -> LatencyCurve {
        LatencyCurve::from_points(id, points).unwrap()
    }

    fn two_step() -> LatencyCurve {
        curve("l", (1..=10).map(|c| (c, if c <= 5 { 10.0 } else { 20.0 })))
    }

    fn interleaved() -> LatencyCurve {
        curve("l", (1..=28).map(|c| (c, if (c - 1) % 8 < 4 { 14.0 } else { 23.0 })))
    }

    /// Brute-force dominance check.
    fn dominated(points: &[(u32, f64)], (c, t): (u32, f64)) -> bool {
        points.iter().any(|&(c2, t2)| (c2 >= c && t2 < t) || (c2 > c && t2 <= t))
    }

    #[test]
    fn front_of_increasing_curve_is_everything() {
        let c = curve("l", (1..=20).map(|c| (c, c as f64)));
        assert_eq!(pareto_front(&c).unwrap().len(), 20);
    }

    #[test]
    fn front_of_two_step() {
        assert_eq!(pareto_front(&two_step()).unwrap(), vec![(10, 20.0), (5, 10.0)]);
    }

    #[test]
    fn front_of_interleave_keeps_fast_edges() {
        let front = pareto_front(&interleaved()).unwrap();
        assert_eq!(front, vec![(28, 14.0)]);
        assert!(front.iter().all(|&(_, t)| t == 14.0));
    }

    #[test]
    fn budgets() {
        let r = recommend_for_budget(&two_step(), 15.0).unwrap();
        assert_eq!((r.target_channels, r.predicted_latency_ms, r.rationale), (5, 10.0, Rationale::BudgetFit));
        assert_eq!(r.speedup_vs_base, 2.0);
        assert_eq!(recommend_for_budget(&two_step(), 20.0).unwrap().target_channels, 10);
        assert!(matches!(recommend_for_budget(&two_step(), 9.0), Err(Error::InfeasibleBudget { .. })));
        assert!(recommend_for_budget(&two_step(), 0.0).is_err());
    }

    #[test]
    fn accuracy_floor() {
        let c = two_step();
        let always = |_: &str, _: u32| 1.0;
        let r = recommend_with_accuracy(&c, &always, 0.9).unwrap();
        assert_eq!((r.target_channels, r.rationale), (5, Rationale::AccuracyFloor));

        let linear = LinearOracle::from_curves([&c]);
        assert_eq!(recommend_with_accuracy(&c, &linear, 0.5).unwrap().target_channels, 5);
        assert_eq!(recommend_with_accuracy(&c, &linear, 0.6).unwrap().target_channels, 10);
        assert!(matches!(recommend_with_accuracy(&c, &linear, 1.01), Err(Error::InfeasibleAccuracy { .. })));

        let broken = |_: &str, _: u32| 1.5;
        assert!(matches!(recommend_with_accuracy(&c, &broken, 0.5), Err(Error::Validation(_))));
    }

    #[test]
    fn pareto_edge_is_first_step_down() {
        let r = recommend_pareto_edge(&two_step()).unwrap();
        assert_eq!((r.target_channels, r.rationale), (5, Rationale::ParetoEdge));
        let flat = curve("l", [(1, 3.0), (2, 3.0)]);
        assert_eq!(recommend_pareto_edge(&flat).unwrap().target_channels, 2);
    }

    fn layer(id: &str, n: u32) -> ConvLayerSpec {
        ConvLayerSpec::new(LayerGeometry {
            layer_id: id.into(),
            in_channels: 64,
            out_channels: n,
            kernel_h: 3,
            kernel_w: 3,
            input_h: 14,
            input_w: 14,
            stride: 1,
            padding: 1,
        })
        .unwrap()
    }

    #[test]
    fn report_monotone_single_layer() {
        let net = NetworkModel::new("n", vec![layer("a", 20)]).unwrap();
        let curves = [curve("a", (1..=20).map(|c| (c, c as f64)))];
        let report = network_report(&net, &curves, Objective::ParetoEdge);
        match &report[..] {
            [LayerReport::Recommended { recommendation, slowdowns }] => {
                assert_eq!(recommendation.rationale, Rationale::ParetoEdge);
                assert!(slowdowns.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_flags_direct_slowdown() {
        let net = NetworkModel::new("n", vec![layer("a", 64)]).unwrap();
        // pruning one channel is 5x slower
        let curves = [curve("a", (1..=64).map(|c| (c, if c == 63 { 50.0 } else { 10.0 * c as f64 / 64.0 })))];
        let report = network_report(&net, &curves, Objective::ParetoEdge);
        let LayerReport::Recommended { slowdowns, .. } = &report[0] else { panic!() };
        assert_eq!(slowdowns.first().map(|r| r.0), Some(1));
    }

    #[test]
    fn report_skips_missing_curves() {
        let net = NetworkModel::new("n", vec![layer("a", 10), layer("b", 10)]).unwrap();
        let curves = [curve("a", (1..=10).map(|c| (c, c as f64)))];
        let report = network_report(&net, &curves, Objective::Budget(5.0));
        assert!(matches!(report[0], LayerReport::Recommended { .. }));
        assert!(matches!(&report[1], LayerReport::Skipped { layer_id, .. } if layer_id == "b"));
    }

    fn arb_curve() -> impl Strategy<Value = LatencyCurve> {
        prop::collection::vec(0.5f64..50.0, 1..60)
            .prop_map(|v| curve("p", v.into_iter().enumerate().map(|(i, t)| (i as u32 + 1, t))))
    }

    proptest! {
        #[test]
        fn front_matches_brute_force(c in arb_curve()) {
            let points: Vec<(u32, f64)> = c.iter().collect();
            let mut expected: Vec<(u32, f64)> = points.iter().copied().filter(|&p| !dominated(&points, p)).collect();
            expected.reverse();
            let front = pareto_front(&c).unwrap();
            prop_assert_eq!(&front, &expected);
            for &p in &front {
                prop_assert!(!dominated(&front, p));
            }
        }

        #[test]
        fn front_is_scale_invariant(c in arb_curve(), k in 0.01f64..100.0) {
            let a: Vec<u32> = pareto_front(&c).unwrap().iter().map(|p| p.0).collect();
            let b: Vec<u32> = pareto_front(&c.scaled(k).unwrap()).unwrap().iter().map(|p| p.0).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn budget_is_monotone(c in arb_curve(), b1 in 0.5f64..60.0, extra in 0.0f64..30.0) {
            let front = pareto_front(&c).unwrap();
            if let Ok(lo) = recommend_for_budget(&c, b1) {
                prop_assert!(front.iter().any(|&(ch, _)| ch == lo.target_channels));
                let hi = recommend_for_budget(&c, b1 + extra).unwrap();
                prop_assert!(hi.target_channels >= lo.target_channels);
            }
        }

        #[test]
        fn zero_floor_is_fastest_front_point(c in arb_curve()) {
            let any = |_: &str, ch: u32| f64::from(ch % 7) / 7.0;
            let r = recommend_with_accuracy(&c, &any, 0.0).unwrap();
            let fastest = *pareto_front(&c).unwrap().last().unwrap();
            prop_assert_eq!((r.target_channels, r.predicted_latency_ms), fastest);
        }
    }
}
