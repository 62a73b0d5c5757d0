//! Device profile configuration files (TOML).
//!
//! ```toml
//! label = "my-board"
//!
//! [device]
//! ns_per_arith_instr = 0.0074
//! ns_per_mem_instr = 0.0296
//! job_overhead_ms = 2.0
//! tvm_direct_channels = [90, 91]
//!
//! [split]            # optional, defaults to 4 / 16 / true
//! vector_width = 4
//! main_tile = 16
//! merge_full_tile_remainder = true
//!
//! [gemm]             # optional; required for the gemm and tvm methods
//! im2col_arith_slope = 13836
//! # ... every GemmCostCoefficients field
//!
//! [direct]           # optional; required for the direct and tvm methods
//! reference_channels = 90
//! base_arith = 20000000000
//! base_mem = 600000000
//!
//! [workgroup]
//! default = [2, 1, 8]
//! [[workgroup.map]]
//! channels = 91
//! size = [1, 1, 8]
//! [[workgroup.penalty]]
//! size = [1, 1, 8]
//! multiplier = 1.17
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispatch::{
    DeviceProfile, DirectCostModel, GemmCostCoefficients, LayerCostModel, SplitPolicy, WorkGroup, WorkGroupPolicy,
};
use crate::error::{Error, Result};

/// Bundled synthetic profile for ResNet-50 layer 16.
pub const LAYER16_PROFILE: &str = include_str!("../profiles/resnet50_l16_hikey.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub device: DeviceSection,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default)]
    pub gemm: Option<GemmCostCoefficients>,
    #[serde(default)]
    pub direct: Option<DirectCostModel>,
    pub workgroup: WorkGroupSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub ns_per_arith_instr: f64,
    pub ns_per_mem_instr: f64,
    pub job_overhead_ms: f64,
    #[serde(default)]
    pub tvm_direct_channels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkGroupSection {
    pub default: WorkGroup,
    #[serde(default)]
    pub map: Vec<WorkGroupEntry>,
    #[serde(default)]
    pub penalty: Vec<PenaltyEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkGroupEntry {
    pub channels: u32,
    pub size: WorkGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyEntry {
    pub size: WorkGroup,
    pub multiplier: f64,
}

/// A loaded profile: the device rates plus the per-layer cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub label: Option<String>,
    pub device: DeviceProfile,
    pub cost: LayerCostModel,
}

impl ProfileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<Profile> {
        let mut by_channels = BTreeMap::new();
        for e in &self.workgroup.map {
            if by_channels.insert(e.channels, e.size).is_some() {
                return Err(Error::Config(format!("work group for {} channels given twice", e.channels)));
            }
        }
        let mut penalties = BTreeMap::new();
        for p in &self.workgroup.penalty {
            if penalties.insert(p.size, p.multiplier).is_some() {
                return Err(Error::Config(format!("penalty for {} given twice", p.size)));
            }
        }
        let device = DeviceProfile {
            ns_per_arith_instr: self.device.ns_per_arith_instr,
            ns_per_mem_instr: self.device.ns_per_mem_instr,
            job_overhead_ms: self.device.job_overhead_ms,
            workgroup_policy: WorkGroupPolicy::new(self.workgroup.default, by_channels, penalties)?,
            tvm_direct_channels: self.device.tvm_direct_channels.iter().copied().collect::<BTreeSet<_>>(),
        };
        device.validate()?;
        self.split.validate()?;
        Ok(Profile {
            label: self.label.clone(),
            device,
            cost: LayerCostModel { split: self.split, gemm: self.gemm, direct: self.direct },
        })
    }
}

impl Profile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        ProfileConfig::from_toml_str(text)?.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn layer16() -> Self {
        Self::from_toml_str(LAYER16_PROFILE).expect("bundled profile is valid")
    }
}
