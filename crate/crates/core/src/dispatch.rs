//! Analytical model of how GPU convolution libraries dispatch a layer.
//!
//! Three execution paths are modelled:
//!
//! * **GEMM** (im2col + reshape + one or two `gemm_mm` kernels). The runtime
//!   splits the output channels into a main block of full tiles and a
//!   vector-padded remainder, and every extra kernel is an extra GPU job.
//! * **Direct** convolution: a single kernel whose instruction count grows in
//!   proportion to the channel count, but whose throughput depends on the
//!   work-group shape the library picks for that channel count.
//! * **TVM**-style hybrid: each channel count is routed to one of the above.
//!
//! Instruction counts are exact integers. Latency synthesis is floating point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConvLayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub vector_width: u32,
    pub main_tile: u32,
    pub merge_full_tile_remainder: bool,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self { vector_width: 4, main_tile: 16, merge_full_tile_remainder: true }
    }
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.vector_width == 0 || self.main_tile == 0 || !self.main_tile.is_multiple_of(self.vector_width) {
            return Err(Error::validation(format!(
                "main_tile ({}) must be a positive multiple of vector_width ({})",
                self.main_tile, self.vector_width
            )));
        }
        Ok(())
    }
}

/// Channel widths of the `gemm_mm` kernels dispatched for `c_out` filters.
///
/// The main kernel covers whole tiles; the remainder is padded up to the
/// vector width and dispatched as a second kernel, unless it pads out to a
/// full tile, in which case it is folded into the main kernel.
pub fn split_gemm_channels(c_out: u32, policy: &SplitPolicy) -> Result<Vec<u32>> {
    policy.validate()?;
    if c_out == 0 {
        return Err(Error::Range("cannot split 0 output channels".into()));
    }
    let tile = policy.main_tile;
    let vw = policy.vector_width;
    let main = c_out / tile * tile;
    let remainder = (c_out - main).div_ceil(vw) * vw;
    let widths = if remainder == 0 {
        vec![main]
    } else if policy.merge_full_tile_remainder && remainder == tile {
        vec![main + tile]
    } else if main == 0 {
        vec![remainder]
    } else {
        vec![main, remainder]
    };
    Ok(widths)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCost {
    pub kernel_name: String,
    pub arith_instr: u64,
    pub mem_instr: u64,
}

impl KernelCost {
    pub fn new(kernel_name: impl Into<String>, arith_instr: u64, mem_instr: u64) -> Self {
        Self { kernel_name: kernel_name.into(), arith_instr, mem_instr }
    }
}

/// Per-kernel instruction counts for one dispatched layer, in dispatch order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KernelCostBreakdown {
    pub kernels: Vec<KernelCost>,
}

pub const RESHAPE_KERNEL: &str = "reshape_to_columns";
pub const GEMM_KERNEL: &str = "gemm_mm";
pub const DIRECT_KERNEL: &str = "direct_convolution";

pub fn im2col_kernel_name(kernel_h: u32, kernel_w: u32) -> String {
    format!("im2col{kernel_h}x{kernel_w}_nhwc")
}

impl KernelCostBreakdown {
    pub fn new(kernels: Vec<KernelCost>) -> Self {
        Self { kernels }
    }

    pub fn total_arith(&self) -> u64 {
        self.kernels.iter().map(|k| k.arith_instr).sum()
    }

    pub fn total_mem(&self) -> u64 {
        self.kernels.iter().map(|k| k.mem_instr).sum()
    }

    pub fn gemm_kernels(&self) -> impl Iterator<Item = &KernelCost> {
        self.kernels.iter().filter(|k| k.kernel_name == GEMM_KERNEL)
    }

    /// CSV with header `kernel_name,arith_instr,mem_instr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kernel_name,arith_instr,mem_instr\n");
        for k in &self.kernels {
            out.push_str(&format!("{},{},{}\n", k.kernel_name, k.arith_instr, k.mem_instr));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if headers != vec!["kernel_name", "arith_instr", "mem_instr"] {
            return Err(Error::Parse { line: 1, message: "expected header kernel_name,arith_instr,mem_instr".into() });
        }
        let mut kernels = Vec::new();
        for record in reader.records() {
            let record = record
                .map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
            let line = record.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<u64> {
                record[i].trim().parse().map_err(|e| Error::Parse { line, message: format!("column {}: {e}", i + 1) })
            };
            kernels.push(KernelCost::new(record[0].trim(), num(1)?, num(2)?));
        }
        Ok(Self { kernels })
    }
}

/// Per-layer GEMM-path instruction model.
///
/// `im2col` grows affinely with the output channel count, the reshape kernel
/// is constant, and each `gemm_mm` kernel costs a fixed number of
/// instructions per (padded) output channel it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GemmCostCoefficients {
    pub im2col_arith_slope: u64,
    pub im2col_arith_intercept: u64,
    pub im2col_mem_slope: u64,
    pub im2col_mem_intercept: u64,
    pub reshape_arith_const: u64,
    pub reshape_mem_const: u64,
    pub gemm_arith_unit: u64,
    pub gemm_mem_unit: u64,
}

impl GemmCostCoefficients {
    fn check_calibrated(&self) -> Result<()> {
        if self.gemm_arith_unit == 0 || self.gemm_mem_unit == 0 {
            return Err(Error::Calibration("gemm units must be positive; coefficients are uncalibrated".into()));
        }
        Ok(())
    }
}

pub fn gemm_cost(
    layer: &ConvLayerSpec,
    coeffs: &GemmCostCoefficients,
    policy: &SplitPolicy,
) -> Result<KernelCostBreakdown> {
    coeffs.check_calibrated()?;
    let c = u64::from(layer.out_channels());
    let (kh, kw) = layer.kernel();
    let mut kernels = vec![
        KernelCost::new(
            im2col_kernel_name(kh, kw),
            coeffs.im2col_arith_intercept + coeffs.im2col_arith_slope * c,
            coeffs.im2col_mem_intercept + coeffs.im2col_mem_slope * c,
        ),
        KernelCost::new(RESHAPE_KERNEL, coeffs.reshape_arith_const, coeffs.reshape_mem_const),
    ];
    for w in split_gemm_channels(layer.out_channels(), policy)? {
        let w = u64::from(w);
        kernels.push(KernelCost::new(GEMM_KERNEL, coeffs.gemm_arith_unit * w, coeffs.gemm_mem_unit * w));
    }
    Ok(KernelCostBreakdown { kernels })
}

/// A measured GEMM-path breakdown at a known channel count.
#[derive(Debug, Clone, Copy)]
pub struct ObservedCost<'a> {
    pub out_channels: u32,
    pub breakdown: &'a KernelCostBreakdown,
}

struct GemmParts<'a> {
    im2col: &'a KernelCost,
    reshape: &'a KernelCost,
    gemm: Vec<&'a KernelCost>,
}

fn gemm_parts<'a>(obs: &ObservedCost<'a>) -> Result<GemmParts<'a>> {
    let ks = &obs.breakdown.kernels;
    let shape_err = || {
        Error::Calibration(format!(
            "table at {} channels is not im2col, {RESHAPE_KERNEL}, then {GEMM_KERNEL} kernels",
            obs.out_channels
        ))
    };
    if ks.len() < 3 || !ks[0].kernel_name.starts_with("im2col") || ks[1].kernel_name != RESHAPE_KERNEL {
        return Err(shape_err());
    }
    if ks[2..].iter().any(|k| k.kernel_name != GEMM_KERNEL) {
        return Err(shape_err());
    }
    Ok(GemmParts { im2col: &ks[0], reshape: &ks[1], gemm: ks[2..].iter().collect() })
}

fn exact_div(num: u64, den: u64, what: &str) -> Result<u64> {
    if den == 0 || !num.is_multiple_of(den) {
        return Err(Error::Calibration(format!("{what}: {num} is not divisible by {den}")));
    }
    Ok(num / den)
}

/// Recover GEMM coefficients from two observed breakdowns.
///
/// The im2col line comes from the two points; the gemm units come from a
/// table whose layer was dispatched as a single `gemm_mm` kernel. Both tables
/// are then checked against the split model, so a table that disagrees with
/// `policy` is a calibration error rather than a silently wrong fit.
pub fn calibrate_gemm(a: ObservedCost<'_>, b: ObservedCost<'_>, policy: &SplitPolicy) -> Result<GemmCostCoefficients> {
    if a.out_channels == b.out_channels {
        return Err(Error::DegenerateCalibration(a.out_channels));
    }
    let (lo, hi) = if a.out_channels < b.out_channels { (a, b) } else { (b, a) };
    let (plo, phi) = (gemm_parts(&lo)?, gemm_parts(&hi)?);
    let dc = u64::from(hi.out_channels - lo.out_channels);

    let line = |y_lo: u64, y_hi: u64, what: &str| -> Result<(u64, u64)> {
        let rise =
            y_hi.checked_sub(y_lo).ok_or_else(|| Error::Calibration(format!("{what} decreases with channel count")))?;
        let slope = exact_div(rise, dc, what)?;
        let intercept = y_lo
            .checked_sub(slope * u64::from(lo.out_channels))
            .ok_or_else(|| Error::Calibration(format!("{what} has a negative intercept")))?;
        Ok((slope, intercept))
    };
    let (im2col_arith_slope, im2col_arith_intercept) =
        line(plo.im2col.arith_instr, phi.im2col.arith_instr, "im2col arithmetic")?;
    let (im2col_mem_slope, im2col_mem_intercept) = line(plo.im2col.mem_instr, phi.im2col.mem_instr, "im2col memory")?;

    if plo.reshape.arith_instr != phi.reshape.arith_instr || plo.reshape.mem_instr != phi.reshape.mem_instr {
        return Err(Error::Calibration(format!("{RESHAPE_KERNEL} differs between the two tables")));
    }

    let (single, single_parts) = if plo.gemm.len() == 1 {
        (lo, &plo)
    } else if phi.gemm.len() == 1 {
        (hi, &phi)
    } else {
        return Err(Error::Calibration(format!("neither table has a single {GEMM_KERNEL} kernel")));
    };
    let widths = split_gemm_channels(single.out_channels, policy)?;
    if widths.len() != 1 {
        return Err(Error::Calibration(format!(
            "split policy gives {} kernels at {} channels but the table has one",
            widths.len(),
            single.out_channels
        )));
    }
    let w = u64::from(widths[0]);
    let gemm = single_parts.gemm[0];
    let coeffs = GemmCostCoefficients {
        im2col_arith_slope,
        im2col_arith_intercept,
        im2col_mem_slope,
        im2col_mem_intercept,
        reshape_arith_const: plo.reshape.arith_instr,
        reshape_mem_const: plo.reshape.mem_instr,
        gemm_arith_unit: exact_div(gemm.arith_instr, w, "gemm arithmetic unit")?,
        gemm_mem_unit: exact_div(gemm.mem_instr, w, "gemm memory unit")?,
    };
    coeffs.check_calibrated()?;

    for (obs, parts) in [(lo, &plo), (hi, &phi)] {
        let widths = split_gemm_channels(obs.out_channels, policy)?;
        let consistent = widths.len() == parts.gemm.len()
            && widths.iter().zip(&parts.gemm).all(|(&w, k)| {
                k.arith_instr == coeffs.gemm_arith_unit * u64::from(w)
                    && k.mem_instr == coeffs.gemm_mem_unit * u64::from(w)
            });
        if !consistent {
            return Err(Error::Calibration(format!(
                "{GEMM_KERNEL} kernels at {} channels do not match split {:?}",
                obs.out_channels, widths
            )));
        }
    }
    Ok(coeffs)
}

/// Direct convolution instruction count, proportional to the channel count
/// through the origin: `base_instr * c_out / c_ref`, rounded half up.
pub fn direct_cost(layer: &ConvLayerSpec, base_instr: u64, c_ref: u32) -> Result<u64> {
    if c_ref == 0 {
        return Err(Error::Range("reference channel count must be at least 1".into()));
    }
    let num = u128::from(base_instr) * u128::from(layer.out_channels());
    let den = u128::from(c_ref);
    u64::try_from((2 * num + den) / (2 * den)).map_err(|_| Error::Range("direct instruction count overflows".into()))
}

/// Reference point for the direct path: instruction counts at `reference_channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectCostModel {
    pub reference_channels: u32,
    pub base_arith: u64,
    pub base_mem: u64,
}

impl DirectCostModel {
    pub fn cost(&self, layer: &ConvLayerSpec) -> Result<KernelCostBreakdown> {
        Ok(KernelCostBreakdown::new(vec![KernelCost::new(
            DIRECT_KERNEL,
            direct_cost(layer, self.base_arith, self.reference_channels)?,
            direct_cost(layer, self.base_mem, self.reference_channels)?,
        )]))
    }
}

/// OpenCL work-group dimensions `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct WorkGroup(pub u32, pub u32, pub u32);

impl From<[u32; 3]> for WorkGroup {
    fn from([x, y, z]: [u32; 3]) -> Self {
        WorkGroup(x, y, z)
    }
}

impl From<WorkGroup> for [u32; 3] {
    fn from(w: WorkGroup) -> Self {
        [w.0, w.1, w.2]
    }
}

impl fmt::Display for WorkGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.0, self.1, self.2)
    }
}

/// Which work group the library picks per channel count, and how much slower
/// each shape runs relative to the fastest one. Shapes without a penalty
/// entry run at full speed.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkGroupPolicy {
    default: WorkGroup,
    by_channels: BTreeMap<u32, WorkGroup>,
    penalties: BTreeMap<WorkGroup, f64>,
}

impl WorkGroupPolicy {
    pub fn new(
        default: WorkGroup,
        by_channels: BTreeMap<u32, WorkGroup>,
        penalties: BTreeMap<WorkGroup, f64>,
    ) -> Result<Self> {
        let bad_shape = std::iter::once(&default)
            .chain(by_channels.values())
            .chain(penalties.keys())
            .find(|w| w.0 == 0 || w.1 == 0 || w.2 == 0);
        if let Some(w) = bad_shape {
            return Err(Error::validation(format!("work group {w} has a zero dimension")));
        }
        if let Some((w, p)) = penalties.iter().find(|(_, p)| !(p.is_finite() && **p >= 1.0)) {
            return Err(Error::validation(format!("penalty for {w} must be >= 1, got {p}")));
        }
        let fastest = penalties.values().copied().fold(f64::INFINITY, f64::min);
        if !penalties.is_empty() && fastest != 1.0 {
            return Err(Error::validation(format!("fastest work-group penalty must be exactly 1, got {fastest}")));
        }
        Ok(Self { default, by_channels, penalties })
    }

    pub fn uniform(default: WorkGroup) -> Self {
        Self { default, by_channels: BTreeMap::new(), penalties: BTreeMap::new() }
    }

    pub fn default_group(&self) -> WorkGroup {
        self.default
    }

    pub fn mapped(&self) -> &BTreeMap<u32, WorkGroup> {
        &self.by_channels
    }

    pub fn penalties(&self) -> &BTreeMap<WorkGroup, f64> {
        &self.penalties
    }

    pub fn penalty(&self, group: WorkGroup) -> f64 {
        self.penalties.get(&group).copied().unwrap_or(1.0)
    }
}

pub fn select_workgroup(c_out: u32, policy: &WorkGroupPolicy) -> WorkGroup {
    policy.by_channels.get(&c_out).copied().unwrap_or(policy.default)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub ns_per_arith_instr: f64,
    pub ns_per_mem_instr: f64,
    pub job_overhead_ms: f64,
    pub workgroup_policy: WorkGroupPolicy,
    pub tvm_direct_channels: BTreeSet<u32>,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ns_per_arith_instr", self.ns_per_arith_instr),
            ("ns_per_mem_instr", self.ns_per_mem_instr),
            ("job_overhead_ms", self.job_overhead_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gemm,
    Direct,
    Tvm,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gemm" => Ok(Method::Gemm),
            "direct" => Ok(Method::Direct),
            "tvm" => Ok(Method::Tvm),
            other => Err(Error::validation(format!("unknown method `{other}` (expected gemm, direct or tvm)"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gemm => "gemm",
            Method::Direct => "direct",
            Method::Tvm => "tvm",
        })
    }
}

/// Number of GPU jobs one layer dispatch turns into.
pub fn count_dispatched_jobs(layer: &ConvLayerSpec, method: Method, policy: &SplitPolicy) -> Result<usize> {
    match method {
        Method::Gemm => Ok(2 + split_gemm_channels(layer.out_channels(), policy)?.len()),
        Method::Direct => Ok(1),
        Method::Tvm => Err(Error::validation("tvm routes per channel count; resolve it to gemm or direct first")),
    }
}

/// Everything needed to cost one layer on either path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerCostModel {
    pub split: SplitPolicy,
    pub gemm: Option<GemmCostCoefficients>,
    pub direct: Option<DirectCostModel>,
}

/// The resolved dispatch of one layer: which path ran, what it cost, and
/// the work group used (direct path only).
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    pub method: Method,
    pub kernels: KernelCostBreakdown,
    pub workgroup: Option<WorkGroup>,
    pub penalty: f64,
}

impl DispatchPlan {
    pub fn jobs(&self) -> usize {
        self.kernels.kernels.len()
    }
}

pub fn resolve_method(c_out: u32, method: Method, profile: &DeviceProfile) -> Method {
    match method {
        Method::Tvm if profile.tvm_direct_channels.contains(&c_out) => Method::Direct,
        Method::Tvm => Method::Gemm,
        m => m,
    }
}

pub fn dispatch_plan(
    layer: &ConvLayerSpec,
    method: Method,
    model: &LayerCostModel,
    profile: &DeviceProfile,
) -> Result<DispatchPlan> {
    match resolve_method(layer.out_channels(), method, profile) {
        Method::Gemm => {
            let coeffs = model
                .gemm
                .as_ref()
                .ok_or_else(|| Error::Calibration("no gemm coefficients in the cost model".into()))?;
            Ok(DispatchPlan {
                method: Method::Gemm,
                kernels: gemm_cost(layer, coeffs, &model.split)?,
                workgroup: None,
                penalty: 1.0,
            })
        }
        _ => {
            let direct = model
                .direct
                .as_ref()
                .ok_or_else(|| Error::Calibration("no direct-convolution reference in the cost model".into()))?;
            let wg = select_workgroup(layer.out_channels(), &profile.workgroup_policy);
            Ok(DispatchPlan {
                method: Method::Direct,
                kernels: direct.cost(layer)?,
                workgroup: Some(wg),
                penalty: profile.workgroup_policy.penalty(wg),
            })
        }
    }
}

/// Synthetic latency in milliseconds: per-kernel instruction time scaled by
/// the work-group penalty, plus a fixed overhead per dispatched job.
pub fn emulate_latency(
    layer: &ConvLayerSpec,
    method: Method,
    model: &LayerCostModel,
    profile: &DeviceProfile,
) -> Result<f64> {
    profile.validate()?;
    let plan = dispatch_plan(layer, method, model, profile)?;
    let kernel_ns: f64 = plan
        .kernels
        .kernels
        .iter()
        .map(|k| {
            (k.arith_instr as f64 * profile.ns_per_arith_instr + k.mem_instr as f64 * profile.ns_per_mem_instr)
                * plan.penalty
        })
        .sum();
    Ok(kernel_ns * 1e-6 + profile.job_overhead_ms * plan.jobs() as f64)
}

/// Instruction tables measured for ResNet-50 layer 16 (3x3, 128 filters,
/// 28x28) on the ACL GEMM path, at 92, 93, 96 and 97 output channels.
pub mod reference {
    use super::{KernelCost, KernelCostBreakdown, GEMM_KERNEL, RESHAPE_KERNEL};

    pub const LAYER16_CHANNELS: [u32; 4] = [92, 93, 96, 97];

    const IM2COL: &str = "im2col3x3_nhwc";
    const RESHAPE: (u64, u64) = (44_183_104, 3_615_808);

    pub fn layer16_table(out_channels: u32) -> Option<KernelCostBreakdown> {
        let (im2col, gemm): ((u64, u64), &[(u64, u64)]) = match out_channels {
            92 => ((1_365_198, 212_152), &[(706_713_280, 36_267_840), (106_006_992, 5_440_176)]),
            93 => ((1_379_034, 214_458), &[(848_055_936, 43_521_408)]),
            96 => ((1_420_542, 221_376), &[(848_055_936, 43_521_408)]),
            97 => ((1_434_378, 223_682), &[(848_055_936, 43_521_408), (35_335_664, 1_813_392)]),
            _ => return None,
        };
        let mut kernels =
            vec![KernelCost::new(IM2COL, im2col.0, im2col.1), KernelCost::new(RESHAPE_KERNEL, RESHAPE.0, RESHAPE.1)];
        kernels.extend(gemm.iter().map(|&(a, m)| KernelCost::new(GEMM_KERNEL, a, m)));
        Some(KernelCostBreakdown::new(kernels))
    }

    /// Direct-convolution work groups and relative executed instructions
    /// observed at 90..=93 channels: `(channels, (x, y, z), relative)`.
    pub const DIRECT_WORKGROUPS: [(u32, (u32, u32, u32), f64); 4] =
        [(90, (2, 1, 8), 1.0), (91, (1, 1, 8), 1.011), (92, (4, 1, 1), 1.023), (93, (1, 1, 8), 1.034)];
}
