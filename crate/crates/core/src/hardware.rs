//! Parametric device model: memory tiers, capacities, bandwidths and cluster
//! limits.
//!
//! Bandwidth defaults for the H100 profile are placeholders that preserve the
//! qualitative ordering (DSM slows as clusters grow and only the largest
//! cluster falls below global bandwidth). Capacities and limits are hardware
//! facts. Profiles are plain `key = value` text:
//!
//! ```text
//! name = h100
//! max_cluster_blocks = 16
//! cluster_dim_options = 1,2,4,8,16
//! mma_tile = 16,16,16
//! reg.capacity_bytes = 262144
//! reg.bandwidth = 1.3e14
//! smem.capacity_bytes = 232448
//! smem.bandwidth = 3.3e13
//! dsm.bandwidth[2] = 2.6e13       # one entry per cluster block-count > 1
//! l2.capacity_bytes = 52428800    # optional tier
//! l2.bandwidth = 1.2e13
//! global.capacity_bytes = 85899345920
//! global.bandwidth = 3e12
//! ```
//!
//! Bandwidths are bytes/second, aggregated over the device. DSM capacity is
//! not configured: a cluster of `b` blocks pools `b` shared memories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Memory tiers, fastest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Reg,
    Smem,
    Dsm,
    L2,
    Global,
}

impl Tier {
    pub const ALL: [Tier; 5] = [Tier::Reg, Tier::Smem, Tier::Dsm, Tier::L2, Tier::Global];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Reg => "reg",
            Tier::Smem => "smem",
            Tier::Dsm => "dsm",
            Tier::L2 => "l2",
            Tier::Global => "global",
        }
    }

    pub fn scope(self) -> Scope {
        match self {
            Tier::Reg | Tier::Smem => Scope::PerBlock,
            Tier::Dsm => Scope::PerCluster,
            Tier::L2 | Tier::Global => Scope::Device,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerBlock,
    PerCluster,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryLevel {
    pub capacity_bytes: u64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub name: String,
    pub reg: MemoryLevel,
    pub smem: MemoryLevel,
    /// Keyed by blocks per cluster (> 1).
    pub dsm_bandwidth: BTreeMap<u64, f64>,
    pub l2: Option<MemoryLevel>,
    pub global: MemoryLevel,
    pub max_cluster_blocks: u64,
    pub cluster_dim_options: Vec<u64>,
    pub mma_tile: [u64; 3],
}

impl DeviceModel {
    pub fn default_h100() -> DeviceModel {
        DeviceModel {
            name: "h100".into(),
            reg: MemoryLevel {
                capacity_bytes: 256 * 1024,
                bandwidth: 1.3e14,
            },
            smem: MemoryLevel {
                capacity_bytes: 227 * 1024,
                bandwidth: 3.3e13,
            },
            dsm_bandwidth: BTreeMap::from([(2, 2.6e13), (4, 2.0e13), (8, 1.4e13), (16, 2.9e12)]),
            l2: Some(MemoryLevel {
                capacity_bytes: 50 * 1024 * 1024,
                bandwidth: 1.2e13,
            }),
            global: MemoryLevel {
                capacity_bytes: 80 * 1024 * 1024 * 1024,
                bandwidth: 3.0e12,
            },
            max_cluster_blocks: 16,
            cluster_dim_options: vec![1, 2, 4, 8, 16],
            mma_tile: [16, 16, 16],
        }
    }

    /// Copy of this device restricted to singleton clusters (no DSM).
    pub fn without_clusters(&self) -> DeviceModel {
        DeviceModel {
            cluster_dim_options: vec![1],
            ..self.clone()
        }
    }

    /// Tiers present on this device, fastest first.
    pub fn hierarchy(&self) -> Vec<Tier> {
        Tier::ALL
            .into_iter()
            .filter(|t| *t != Tier::L2 || self.l2.is_some())
            .collect()
    }

    /// Capacity of a tier as seen by a cluster of `cluster_blocks` blocks.
    pub fn capacity(&self, tier: Tier, cluster_blocks: u64) -> u64 {
        match tier {
            Tier::Reg => self.reg.capacity_bytes,
            Tier::Smem => self.smem.capacity_bytes,
            Tier::Dsm => cluster_blocks * self.smem.capacity_bytes,
            Tier::L2 => self.l2.map_or(0, |l| l.capacity_bytes),
            Tier::Global => self.global.capacity_bytes,
        }
    }

    pub fn dsm_bandwidth(&self, cluster_blocks: u64) -> Result<f64> {
        if cluster_blocks > self.max_cluster_blocks {
            return Err(Error::ClusterTooLarge {
                blocks: cluster_blocks,
                limit: self.max_cluster_blocks,
            });
        }
        if cluster_blocks <= 1 {
            return Ok(self.smem.bandwidth);
        }
        self.dsm_bandwidth.get(&cluster_blocks).copied().ok_or_else(|| {
            Error::InvalidProfile(vec![format!(
                "no dsm bandwidth entry for {cluster_blocks} blocks"
            )])
        })
    }

    pub fn bandwidth(&self, tier: Tier, cluster_blocks: u64) -> Result<f64> {
        Ok(match tier {
            Tier::Reg => self.reg.bandwidth,
            Tier::Smem => self.smem.bandwidth,
            Tier::Dsm => self.dsm_bandwidth(cluster_blocks)?,
            Tier::L2 => self.l2.map_or(self.global.bandwidth, |l| l.bandwidth),
            Tier::Global => self.global.bandwidth,
        })
    }

    /// Block counts a cluster can take: products of three dim options within the limit.
    pub fn reachable_cluster_sizes(&self) -> BTreeSet<u64> {
        let mut out = BTreeSet::new();
        for &a in &self.cluster_dim_options {
            for &b in &self.cluster_dim_options {
                for &c in &self.cluster_dim_options {
                    let p = a * b * c;
                    if p <= self.max_cluster_blocks {
                        out.insert(p);
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, lvl) in [("reg", self.reg), ("smem", self.smem), ("global", self.global)] {
            if lvl.capacity_bytes == 0 {
                errs.push(format!("{name} capacity is zero"));
            }
            if !(lvl.bandwidth > 0.0 && lvl.bandwidth.is_finite()) {
                errs.push(format!("{name} bandwidth must be positive"));
            }
        }
        if let Some(l2) = self.l2 {
            if !(l2.bandwidth > 0.0 && l2.bandwidth.is_finite()) {
                errs.push("l2 bandwidth must be positive".into());
            }
        }
        if self.max_cluster_blocks == 0 {
            errs.push("max_cluster_blocks is zero".into());
        }
        if !self.cluster_dim_options.contains(&1) {
            errs.push("cluster_dim_options must contain 1".into());
        }
        if self.cluster_dim_options.contains(&0) {
            errs.push("cluster_dim_options contains 0".into());
        }
        if self.mma_tile.contains(&0) {
            errs.push("mma_tile has a zero extent".into());
        }
        let mut prev: Option<f64> = None;
        for (&blocks, &bw) in &self.dsm_bandwidth {
            if !(bw > 0.0 && bw.is_finite()) {
                errs.push(format!("dsm bandwidth[{blocks}] must be positive"));
            }
            if blocks > self.max_cluster_blocks {
                errs.push(format!("dsm bandwidth[{blocks}] exceeds max_cluster_blocks"));
            }
            if let Some(p) = prev {
                if bw > p {
                    errs.push(format!("dsm bandwidth not non-increasing at cluster {blocks}"));
                }
            }
            prev = Some(bw);
        }
        let largest = self.dsm_bandwidth.keys().next_back().copied();
        for (&blocks, &bw) in &self.dsm_bandwidth {
            if Some(blocks) != largest && bw < self.global.bandwidth {
                errs.push(format!(
                    "dsm bandwidth[{blocks}] below global bandwidth (only the largest cluster may be)"
                ));
            }
        }
        if !self.cluster_dim_options.contains(&0) {
            for size in self.reachable_cluster_sizes() {
                if size > 1 && !self.dsm_bandwidth.contains_key(&size) {
                    errs.push(format!("missing dsm bandwidth for cluster of {size} blocks"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidProfile(errs))
        }
    }

    pub fn to_profile_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "max_cluster_blocks = {}", self.max_cluster_blocks);
        let _ = writeln!(s, "cluster_dim_options = {}", join(&self.cluster_dim_options));
        let _ = writeln!(s, "mma_tile = {}", join(&self.mma_tile));
        let level = |s: &mut String, name: &str, l: &MemoryLevel| {
            let _ = writeln!(s, "{name}.capacity_bytes = {}", l.capacity_bytes);
            let _ = writeln!(s, "{name}.bandwidth = {:e}", l.bandwidth);
        };
        level(&mut s, "reg", &self.reg);
        level(&mut s, "smem", &self.smem);
        for (b, bw) in &self.dsm_bandwidth {
            let _ = writeln!(s, "dsm.bandwidth[{b}] = {bw:e}");
        }
        if let Some(l2) = &self.l2 {
            level(&mut s, "l2", l2);
        }
        level(&mut s, "global", &self.global);
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_profile_text()).map_err(|e| Error::Usage(e.to_string()))
    }
}

#[derive(Default)]
struct LevelDraft {
    capacity: Option<u64>,
    bandwidth: Option<f64>,
}

/// Parses and validates a profile.
pub fn parse_device_profile(text: &str) -> Result<DeviceModel> {
    let mut name = None;
    let mut max_blocks = None;
    let mut options = None;
    let mut mma = None;
    let mut levels: BTreeMap<String, LevelDraft> = BTreeMap::new();
    let mut dsm = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| perr(format!("expected 'key = value', got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map_err(|_| perr(format!("'{key}' expects an integer, got '{v}'")))
        };
        let float = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| perr(format!("'{key}' expects a number, got '{v}'")))
        };
        let list = |v: &str| v.split(',').map(int).collect::<Result<Vec<u64>>>();
        match key {
            "name" => name = Some(value.to_string()),
            "max_cluster_blocks" => max_blocks = Some(int(value)?),
            "cluster_dim_options" => options = Some(list(value)?),
            "mma_tile" => {
                let v = list(value)?;
                let arr: [u64; 3] = v
                    .try_into()
                    .map_err(|_| perr("mma_tile expects three integers".into()))?;
                mma = Some(arr);
            }
            _ => {
                if let Some(rest) = key.strip_prefix("dsm.bandwidth[") {
                    let blocks = rest
                        .strip_suffix(']')
                        .ok_or_else(|| perr(format!("malformed key '{key}'")))?;
                    dsm.insert(int(blocks)?, float(value)?);
                    continue;
                }
                let (tier, field) = key
                    .split_once('.')
                    .ok_or_else(|| perr(format!("unknown key '{key}'")))?;
                if !["reg", "smem", "l2", "global"].contains(&tier) {
                    return Err(perr(format!("unknown tier '{tier}'")));
                }
                let entry = levels.entry(tier.to_string()).or_default();
                match field {
                    "capacity_bytes" => entry.capacity = Some(int(value)?),
                    "bandwidth" => entry.bandwidth = Some(float(value)?),
                    _ => return Err(perr(format!("unknown field '{field}'"))),
                }
            }
        }
    }

    let mut errs = Vec::new();
    let mut take = |tier: &str, required: bool| -> Option<MemoryLevel> {
        match levels.remove(tier) {
            Some(LevelDraft {
                capacity: Some(c),
                bandwidth: Some(b),
            }) => Some(MemoryLevel {
                capacity_bytes: c,
                bandwidth: b,
            }),
            Some(_) => {
                errs.push(format!("tier {tier} needs capacity_bytes and bandwidth"));
                None
            }
            None => {
                if required {
                    errs.push(format!("missing tier {tier}"));
                }
                None
            }
        }
    };
    let reg = take("reg", true);
    let smem = take("smem", true);
    let l2 = take("l2", false);
    let global = take("global", true);
    if dsm.is_empty() && options.as_ref().is_none_or(|o: &Vec<u64>| o.iter().any(|&v| v > 1)) {
        errs.push("missing tier dsm".into());
    }
    if !errs.is_empty() {
        return Err(Error::InvalidProfile(errs));
    }
    let d = DeviceModel {
        name: name.unwrap_or_else(|| "custom".into()),
        reg: reg.expect("checked"),
        smem: smem.expect("checked"),
        dsm_bandwidth: dsm,
        l2,
        global: global.expect("checked"),
        max_cluster_blocks: max_blocks.unwrap_or(16),
        cluster_dim_options: options.unwrap_or_else(|| vec![1, 2, 4, 8, 16]),
        mma_tile: mma.unwrap_or([16, 16, 16]),
    };
    d.validate()?;
    Ok(d)
}

pub fn load_device_profile(path: impl AsRef<Path>) -> Result<DeviceModel> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Usage(format!("{}: {e}", path.as_ref().display())))?;
    parse_device_profile(&text)
}

/// `h100` (or `default`) selects the built-in profile, anything else is a path.
pub fn resolve_device(spec: &str) -> Result<DeviceModel> {
    match spec.to_ascii_lowercase().as_str() {
        "h100" | "default" => Ok(DeviceModel::default_h100()),
        _ => load_device_profile(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h100_defaults() {
        let d = DeviceModel::default_h100();
        assert_eq!(d.capacity(Tier::Smem, 1), 232448);
        assert_eq!(d.capacity(Tier::Reg, 1), 262144);
        assert_eq!(d.global.bandwidth, 3.0e12);
        assert_eq!(d.max_cluster_blocks, 16);
        assert_eq!(d.cluster_dim_options, vec![1, 2, 4, 8, 16]);
        assert_eq!(d.capacity(Tier::Dsm, 16), 16 * 232448);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn dsm_bandwidth_lookup() {
        let d = DeviceModel::default_h100();
        assert_eq!(d.dsm_bandwidth(1).unwrap(), d.smem.bandwidth);
        let smallest = d.dsm_bandwidth.values().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(d.dsm_bandwidth(16).unwrap(), smallest);
        assert!(matches!(
            d.dsm_bandwidth(32),
            Err(Error::ClusterTooLarge { blocks: 32, limit: 16 })
        ));
        let mut prev = f64::INFINITY;
        for b in [2, 4, 8, 16] {
            let bw = d.dsm_bandwidth(b).unwrap();
            assert!(bw <= prev);
            prev = bw;
        }
    }

    #[test]
    fn profile_round_trip() {
        let d = DeviceModel::default_h100();
        let text = d.to_profile_text();
        let back = parse_device_profile(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_profile_text(), text);
    }

    #[test]
    fn increasing_dsm_rejected() {
        let text = DeviceModel::default_h100()
            .to_profile_text()
            .replace("dsm.bandwidth[8] = 1.4e13", "dsm.bandwidth[8] = 2.2e13");
        match parse_device_profile(&text) {
            Err(Error::InvalidProfile(v)) => {
                assert!(v.iter().any(|e| e.contains("dsm bandwidth not non-increasing")))
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_zero_tiers() {
        let text = DeviceModel::default_h100()
            .to_profile_text()
            .lines()
            .filter(|l| !l.starts_with("smem."))
            .collect::<Vec<_>>()
            .join("\n");
        match parse_device_profile(&text) {
            Err(Error::InvalidProfile(v)) => assert!(v.iter().any(|e| e.contains("missing tier smem"))),
            other => panic!("{other:?}"),
        }
        let zero = DeviceModel::default_h100()
            .to_profile_text()
            .replace("reg.capacity_bytes = 262144", "reg.capacity_bytes = 0");
        assert!(matches!(parse_device_profile(&zero), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn l2_is_optional() {
        let text = DeviceModel::default_h100()
            .to_profile_text()
            .lines()
            .filter(|l| !l.starts_with("l2."))
            .collect::<Vec<_>>()
            .join("\n");
        let d = parse_device_profile(&text).unwrap();
        assert!(d.l2.is_none());
        assert_eq!(d.hierarchy(), vec![Tier::Reg, Tier::Smem, Tier::Dsm, Tier::Global]);
    }

    #[test]
    fn parse_error_has_line() {
        match parse_device_profile("name = x\nreg.capacity_bytes = lots\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
