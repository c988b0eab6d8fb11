//! Fusion-plan IR: loop schedules, tile sizes, cluster geometry and
//! structural validity.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{DeviceModel, Tier};
use crate::workload::{ChainGraph, Dim, DimMap, DimensionSpec, MMA_EXTENT};

/// Version tag written into every plan file.
pub const PLAN_SCHEMA_VERSION: u32 = 1;

/// Spatial/temporal partition of the loop dims plus the temporal nesting
/// order (outermost first).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LoopSchedule {
    pub spatial: Vec<Dim>,
    pub temporal: Vec<Dim>,
}

impl LoopSchedule {
    pub fn new(spatial: &[Dim], temporal: &[Dim]) -> Result<LoopSchedule> {
        let mut spatial = spatial.to_vec();
        spatial.sort();
        let s = LoopSchedule {
            spatial,
            temporal: temporal.to_vec(),
        };
        let errs = s.violations();
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::InvalidPlan(errs))
        }
    }

    /// Parses `S=MK;T=NL` style text (also accepts `MK/NL`).
    pub fn parse(text: &str) -> Result<LoopSchedule> {
        let t = text.trim();
        let (s, rest) = if let Some((a, b)) = t.split_once(';') {
            (a, b)
        } else if let Some((a, b)) = t.split_once('/') {
            (a, b)
        } else {
            (t, "")
        };
        let dims = |part: &str| -> Result<Vec<Dim>> {
            let body = part.trim();
            let body = body
                .strip_prefix("S=")
                .or_else(|| body.strip_prefix("T="))
                .unwrap_or(body);
            body.chars()
                .filter(|c| !c.is_whitespace() && *c != ',')
                .map(|c| Dim::from_letter(c).ok_or_else(|| Error::Usage(format!("bad dim '{c}' in schedule"))))
                .collect()
        };
        LoopSchedule::new(&dims(s)?, &dims(rest)?)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.spatial.is_empty() {
            errs.push("spatial set is empty".into());
        }
        let mut seen = [0u8; 4];
        for d in self.spatial.iter().chain(&self.temporal) {
            seen[d.index()] += 1;
        }
        for d in Dim::ALL {
            match seen[d.index()] {
                1 => {}
                0 => errs.push(format!("dim {d} is neither spatial nor temporal")),
                _ => errs.push(format!("dim {d} appears more than once in the schedule")),
            }
        }
        errs
    }

    pub fn is_spatial(&self, d: Dim) -> bool {
        self.spatial.contains(&d)
    }

    /// Position of `d` in the temporal order.
    pub fn position(&self, d: Dim) -> Option<usize> {
        self.temporal.iter().position(|x| *x == d)
    }

    /// K is temporal but some temporal loop sits inside it.
    pub fn k_outside_innermost(&self) -> bool {
        matches!(self.position(Dim::K), Some(p) if p + 1 != self.temporal.len())
    }

    pub fn reduction_mode(&self) -> ReductionMode {
        match self.position(Dim::K) {
            None => ReductionMode::SpatialK,
            Some(p) if p + 1 == self.temporal.len() => ReductionMode::InnerK,
            Some(_) => ReductionMode::PartialK,
        }
    }

    pub fn encoding(&self) -> String {
        let s: String = self.spatial.iter().map(|d| d.letter()).collect();
        let t: String = self.temporal.iter().map(|d| d.letter()).collect();
        format!("S={s};T={t}")
    }
}

/// Where the GEMM0 reduction lives relative to the fused loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMode {
    /// K is the innermost temporal loop: C completes before GEMM1 runs.
    InnerK,
    /// K is spatial: each cluster reduces its K range in one step.
    SpatialK,
    /// K is temporal with loops inside it: GEMM1 consumes partial C.
    PartialK,
}

impl fmt::Display for LoopSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encoding())
    }
}

/// `Σ_{i=1..j} C(j,i)·(j−i)!`.
pub fn schedule_count(num_dims: u64) -> u64 {
    let fact = |n: u64| (1..=n).product::<u64>();
    (1..=num_dims)
        .map(|i| fact(num_dims) / (fact(i) * fact(num_dims - i)) * fact(num_dims - i))
        .sum()
}

/// Every (spatial set, temporal order) over the first `num_dims` of M,N,K,L,
/// ordered by spatial cardinality, then spatial set, then temporal order.
///
/// # Panics
/// If `num_dims` is not in `1..=4`.
pub fn enumerate_schedules(num_dims: usize) -> Vec<LoopSchedule> {
    assert!((1..=4).contains(&num_dims), "schedules exist for 1..=4 dims");
    let dims = &Dim::ALL[..num_dims];
    let mut out = Vec::new();
    for mask in 1u32..(1 << num_dims) {
        let spatial: Vec<Dim> = dims
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, d)| *d)
            .collect();
        let rest: Vec<Dim> = dims.iter().copied().filter(|d| !spatial.contains(d)).collect();
        for temporal in permutations(&rest) {
            out.push(LoopSchedule {
                spatial: spatial.clone(),
                temporal,
            });
        }
    }
    out.sort_by(|a, b| (a.spatial.len(), a).cmp(&(b.spatial.len(), b)));
    out
}

fn permutations(items: &[Dim]) -> Vec<Vec<Dim>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, *head);
            out.push(tail);
        }
    }
    out
}

/// Block extents and per-dim cluster block-counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileSizes {
    pub block: DimMap<u64>,
    pub cluster: DimMap<u64>,
}

/// `(cls_shuffle, cls_reduce)` for a cluster tuple.
pub fn derive_cluster_groups(cls_m: u64, cls_n: u64, cls_k: u64, cls_l: u64) -> Result<(u64, u64)> {
    let infeasible = |reason| Error::InfeasibleCluster {
        m: cls_m,
        n: cls_n,
        k: cls_k,
        l: cls_l,
        reason,
    };
    if cls_m == 0 || cls_n == 0 || cls_k == 0 || cls_l == 0 {
        return Err(infeasible("cluster extents must be positive"));
    }
    if cls_l % cls_k != 0 {
        return Err(infeasible("cls_k does not divide cls_l"));
    }
    if (cls_n * cls_k) % cls_l != 0 {
        return Err(infeasible("cls_l does not divide cls_n*cls_k"));
    }
    Ok((cls_l / cls_k, cls_n * cls_k / cls_l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub cls_m: u64,
    pub cls_n: u64,
    pub cls_k: u64,
    pub cls_l: u64,
    pub cls_shuffle: u64,
    pub cls_reduce: u64,
}

impl ClusterConfig {
    pub fn new(cls_m: u64, cls_n: u64, cls_k: u64, cls_l: u64) -> Result<ClusterConfig> {
        let (cls_shuffle, cls_reduce) = derive_cluster_groups(cls_m, cls_n, cls_k, cls_l)?;
        Ok(ClusterConfig {
            cls_m,
            cls_n,
            cls_k,
            cls_l,
            cls_shuffle,
            cls_reduce,
        })
    }

    pub fn from_map(c: DimMap<u64>) -> Result<ClusterConfig> {
        Self::new(c.m, c.n, c.k, c.l)
    }

    pub fn singleton() -> ClusterConfig {
        Self::new(1, 1, 1, 1).expect("singleton cluster is feasible")
    }

    pub fn blocks(&self) -> u64 {
        self.cls_m * self.cls_n * self.cls_k
    }

    pub fn as_map(&self) -> DimMap<u64> {
        DimMap::new(self.cls_m, self.cls_n, self.cls_k, self.cls_l)
    }
}

/// How a gated chain is mapped onto the two-GEMM template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GatedLowering {
    /// Half of the K-split blocks run the gate branch, half the up branch;
    /// all_exchange combines with SiLU-then-Mul.
    #[serde(rename = "spatial_split")]
    SpatialSplit,
    /// Both branches run in one block: every K step stages one A tile plus the
    /// B0 and B1 tiles and feeds two accumulators (twice the K work per block).
    #[serde(rename = "doubled_k")]
    DoubledK,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl GatedLowering {
    pub fn name(self) -> &'static str {
        match self {
            GatedLowering::SpatialSplit => "spatial_split",
            GatedLowering::DoubledK => "doubled_k",
            GatedLowering::NotApplicable => "n/a",
        }
    }

    /// Lowerings a graph admits, in search order.
    pub fn candidates(graph: &ChainGraph) -> Vec<GatedLowering> {
        if graph.is_gated() {
            vec![GatedLowering::SpatialSplit, GatedLowering::DoubledK]
        } else {
            vec![GatedLowering::NotApplicable]
        }
    }
}

/// Bytes one tensor holds in each tier (per block).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMapping {
    pub allocations: BTreeMap<Tier, u64>,
}

impl TensorMapping {
    pub fn total(&self) -> u64 {
        self.allocations.values().sum()
    }

    pub fn get(&self, tier: Tier) -> u64 {
        self.allocations.get(&tier).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceMapping {
    pub tensors: BTreeMap<String, TensorMapping>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FusionPlan {
    pub schedule: LoopSchedule,
    pub tiles: TileSizes,
    pub cluster: ClusterConfig,
    pub gated_lowering: GatedLowering,
    pub mapping: Option<ResourceMappingKey>,
}

/// Mapping wrapper that keeps `FusionPlan: Hash + Eq` (mappings compare by content).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceMappingKey(pub ResourceMapping);

impl std::hash::Hash for ResourceMappingKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        for (name, m) in &self.0.tensors {
            name.hash(state);
            for (t, b) in &m.allocations {
                t.hash(state);
                b.hash(state);
            }
        }
    }
}

impl FusionPlan {
    pub fn new(schedule: LoopSchedule, block: DimMap<u64>, cluster: ClusterConfig, lowering: GatedLowering) -> FusionPlan {
        FusionPlan {
            schedule,
            tiles: TileSizes {
                block,
                cluster: cluster.as_map(),
            },
            cluster,
            gated_lowering: lowering,
            mapping: None,
        }
    }

    pub fn mapping(&self) -> Option<&ResourceMapping> {
        self.mapping.as_ref().map(|m| &m.0)
    }

    pub fn with_mapping(mut self, mapping: ResourceMapping) -> FusionPlan {
        self.mapping = Some(ResourceMappingKey(mapping));
        self
    }

    /// Total order used for deterministic tie-breaks.
    pub fn sort_key(&self) -> (LoopSchedule, [u64; 4], [u64; 4], GatedLowering) {
        (
            self.schedule.clone(),
            self.cluster.as_map().to_array(),
            self.tiles.block.to_array(),
            self.gated_lowering,
        )
    }

    /// One-line description.
    pub fn label(&self) -> String {
        let b = self.tiles.block;
        let c = self.cluster;
        let mut s = format!(
            "{} blk=({},{},{},{}) cls=({},{},{},{})",
            self.schedule, b.m, b.n, b.k, b.l, c.cls_m, c.cls_n, c.cls_k, c.cls_l
        );
        if self.gated_lowering != GatedLowering::NotApplicable {
            s.push_str(&format!(" {}", self.gated_lowering.name()));
        }
        s
    }

    /// K-split factor inside a cluster: blocks that share one K range.
    pub fn k_split(&self) -> u64 {
        match self.gated_lowering {
            GatedLowering::SpatialSplit => self.cluster.cls_k / 2,
            _ => self.cluster.cls_k,
        }
    }

    /// Loop extents the plan tiles.
    pub fn loop_extents(&self, dims: &DimensionSpec) -> DimMap<u64> {
        dims.extents()
    }

    /// Grid/trip geometry; fails if the cluster tile does not divide an extent.
    pub fn geometry(&self, dims: &DimensionSpec) -> Result<Geometry> {
        let extents = self.loop_extents(dims);
        let split = DimMap::new(self.cluster.cls_m, self.cluster.cls_n, self.k_split(), self.cluster.cls_l);
        let mut errs = Vec::new();
        let chunk = DimMap::from_fn(|d| split[d] * self.tiles.block[d]);
        for d in Dim::ALL {
            if chunk[d] == 0 || extents[d] % chunk[d] != 0 {
                errs.push(format!(
                    "cluster tile {d}={} does not divide extent {}",
                    chunk[d], extents[d]
                ));
            }
        }
        if !errs.is_empty() {
            return Err(Error::InvalidPlan(errs));
        }
        let grid = DimMap::from_fn(|d| {
            if self.schedule.is_spatial(d) {
                extents[d] / chunk[d]
            } else {
                1
            }
        });
        let trips = DimMap::from_fn(|d| {
            if self.schedule.is_spatial(d) {
                1
            } else {
                extents[d] / chunk[d]
            }
        });
        Ok(Geometry {
            extents,
            chunk,
            grid,
            trips,
            k_split: split.k,
        })
    }
}

impl fmt::Display for FusionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Derived iteration space of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub extents: DimMap<u64>,
    /// Extent covered by one cluster per step.
    pub chunk: DimMap<u64>,
    /// Clusters along each dim (1 for temporal dims).
    pub grid: DimMap<u64>,
    /// Loop trips along each dim (1 for spatial dims).
    pub trips: DimMap<u64>,
    pub k_split: u64,
}

impl Geometry {
    pub fn clusters(&self) -> u64 {
        self.grid.to_array().iter().product()
    }
}

/// Lists every structural violation of a plan against a graph and device.
pub fn validate_plan(plan: &FusionPlan, graph: &ChainGraph, device: &DeviceModel) -> Vec<String> {
    let mut errs = plan.schedule.violations();
    let dims = graph.dims;
    let c = plan.cluster;
    let b = plan.tiles.block;

    for d in Dim::ALL {
        let t = b[d];
        let s = dims.extent(d);
        if t == 0 || t % MMA_EXTENT != 0 {
            errs.push(format!("{d} tile {t} not multiple of {MMA_EXTENT}"));
        }
        if t == 0 || s % t != 0 {
            errs.push(format!("{d} tile {t} does not divide extent {s}"));
        }
        let v = plan.tiles.cluster[d];
        if v != c.as_map()[d] {
            errs.push(format!("tiles.cluster {d}={v} disagrees with cluster config"));
        }
        if !device.cluster_dim_options.contains(&v) {
            errs.push(format!("cluster {d}={v} not in device options"));
        }
    }
    if c.blocks() > device.max_cluster_blocks {
        errs.push(format!(
            "blocks_per_cluster {} > {}",
            c.blocks(),
            device.max_cluster_blocks
        ));
    }
    match derive_cluster_groups(c.cls_m, c.cls_n, c.cls_k, c.cls_l) {
        Ok((g, r)) => {
            if (g, r) != (c.cls_shuffle, c.cls_reduce) {
                errs.push(format!(
                    "derived groups ({g},{r}) disagree with recorded ({},{})",
                    c.cls_shuffle, c.cls_reduce
                ));
            }
        }
        Err(Error::InfeasibleCluster { reason, .. }) => errs.push(reason.to_string()),
        Err(e) => errs.push(e.to_string()),
    }
    match (graph.is_gated(), plan.gated_lowering) {
        (false, GatedLowering::NotApplicable) => {}
        (false, l) => errs.push(format!("lowering {} needs a gated chain", l.name())),
        (true, GatedLowering::NotApplicable) => errs.push("gated chain needs a lowering".into()),
        (true, GatedLowering::SpatialSplit) => {
            if c.cls_k % 2 != 0 {
                errs.push("spatial_split needs an even cls_k".into());
            }
        }
        (true, GatedLowering::DoubledK) => {}
    }
    if errs.is_empty() {
        if let Err(Error::InvalidPlan(v)) = plan.geometry(&dims) {
            errs.extend(v);
        }
    }
    errs
}

/// On-disk plan body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub version: u32,
    pub schedule: LoopSchedule,
    pub tiles: TileSizes,
    pub gated_lowering: GatedLowering,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<ResourceMapping>,
}

impl From<&FusionPlan> for PlanDocument {
    fn from(p: &FusionPlan) -> Self {
        PlanDocument {
            version: PLAN_SCHEMA_VERSION,
            schedule: p.schedule.clone(),
            tiles: p.tiles,
            gated_lowering: p.gated_lowering,
            mapping: p.mapping().cloned(),
        }
    }
}

impl PlanDocument {
    pub fn into_plan(self) -> Result<FusionPlan> {
        if self.version != PLAN_SCHEMA_VERSION {
            return Err(Error::InvalidPlan(vec![format!(
                "unsupported plan schema version {}",
                self.version
            )]));
        }
        let errs = self.schedule.violations();
        if !errs.is_empty() {
            return Err(Error::InvalidPlan(errs));
        }
        let cluster = ClusterConfig::from_map(self.tiles.cluster)?;
        let mut plan = FusionPlan::new(self.schedule, self.tiles.block, cluster, self.gated_lowering);
        if let Some(m) = self.mapping {
            plan = plan.with_mapping(m);
        }
        Ok(plan)
    }
}

pub fn plan_to_json(plan: &FusionPlan) -> String {
    serde_json::to_string_pretty(&PlanDocument::from(plan)).expect("plan serializes")
}

pub fn plan_from_json(text: &str) -> Result<FusionPlan> {
    serde_json::from_str::<PlanDocument>(text)?.into_plan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_gated_ffn, build_standard_ffn, Activation};

    #[test]
    fn shuffle_and_reduce_groups() {
        assert_eq!(derive_cluster_groups(2, 4, 2, 4).unwrap(), (2, 2));
        assert_eq!(derive_cluster_groups(2, 4, 2, 8).unwrap(), (4, 1));
        assert_eq!(derive_cluster_groups(1, 1, 1, 1).unwrap(), (1, 1));
        assert!(matches!(
            derive_cluster_groups(1, 2, 2, 8),
            Err(Error::InfeasibleCluster { .. })
        ));
        assert!(derive_cluster_groups(1, 1, 2, 1).is_err());
    }

    #[test]
    fn group_identity_over_all_options() {
        let opts = [1u64, 2, 4, 8, 16];
        let mut feasible = 0;
        for m in opts {
            for n in opts {
                for k in opts {
                    for l in opts {
                        if let Ok((g, r)) = derive_cluster_groups(m, n, k, l) {
                            assert_eq!(l * r, n * k);
                            assert_eq!(g * k, l);
                            feasible += 1;
                        }
                    }
                }
            }
        }
        assert!(feasible > 0);
    }

    #[test]
    fn schedule_counts() {
        let s = enumerate_schedules(4);
        assert_eq!(s.len(), 41);
        let by = |n| s.iter().filter(|x| x.spatial.len() == n).count();
        assert_eq!((by(1), by(2), by(3), by(4)), (24, 12, 4, 1));
        assert_eq!(enumerate_schedules(2).len(), 3);
        assert_eq!(enumerate_schedules(1).len(), 1);
        assert_eq!(enumerate_schedules(3).len() as u64, schedule_count(3));
        let mut dedup = s.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 41);
        assert!(s.iter().all(|x| x.violations().is_empty()));
        assert_eq!(s, enumerate_schedules(4));
    }

    #[test]
    fn schedule_parse() {
        let s = LoopSchedule::parse("S=M;T=NKL").unwrap();
        assert_eq!(s.spatial, vec![Dim::M]);
        assert_eq!(s.temporal, vec![Dim::N, Dim::K, Dim::L]);
        assert!(s.k_outside_innermost());
        assert_eq!(LoopSchedule::parse(&s.encoding()).unwrap(), s);
        assert!(LoopSchedule::parse("S=;T=MNKL").is_err());
        assert!(LoopSchedule::parse("S=MN;T=NKL").is_err());
    }

    fn device() -> DeviceModel {
        DeviceModel::default_h100()
    }

    #[test]
    fn validate_examples() {
        let g = build_standard_ffn(DimensionSpec::new(128, 512, 128, 512), Activation::Relu).unwrap();
        let sched = LoopSchedule::new(&[Dim::M], &[Dim::N, Dim::L, Dim::K]).unwrap();
        let ok = FusionPlan::new(
            sched.clone(),
            DimMap::splat(64),
            ClusterConfig::new(2, 4, 2, 4).unwrap(),
            GatedLowering::NotApplicable,
        );
        assert!(validate_plan(&ok, &g, &device()).is_empty(), "{:?}", validate_plan(&ok, &g, &device()));

        let big = FusionPlan::new(
            sched.clone(),
            DimMap::splat(16),
            ClusterConfig::new(4, 4, 2, 4).unwrap(),
            GatedLowering::NotApplicable,
        );
        let v = validate_plan(&big, &g, &device());
        assert!(v.iter().any(|e| e.contains("blocks_per_cluster 32 > 16")), "{v:?}");

        let odd = FusionPlan::new(
            sched,
            DimMap::new(24, 64, 64, 64),
            ClusterConfig::singleton(),
            GatedLowering::NotApplicable,
        );
        let v = validate_plan(&odd, &g, &device());
        assert!(v.iter().any(|e| e.contains("not multiple of 16")));
        assert!(v.iter().any(|e| e.contains("does not divide extent")));
    }

    #[test]
    fn gated_lowering_checks() {
        let g = build_gated_ffn(DimensionSpec::new(128, 256, 128, 256)).unwrap();
        let sched = LoopSchedule::new(&[Dim::M], &[Dim::N, Dim::L, Dim::K]).unwrap();
        let odd = FusionPlan::new(
            sched.clone(),
            DimMap::splat(32),
            ClusterConfig::new(1, 1, 1, 1).unwrap(),
            GatedLowering::SpatialSplit,
        );
        assert!(validate_plan(&odd, &g, &device())
            .iter()
            .any(|e| e.contains("even cls_k")));
        let dk = FusionPlan::new(
            sched,
            DimMap::splat(32),
            ClusterConfig::new(1, 1, 2, 2).unwrap(),
            GatedLowering::DoubledK,
        );
        assert!(validate_plan(&dk, &g, &device()).is_empty());
        let geo = dk.geometry(&g.dims).unwrap();
        assert_eq!(geo.extents.k, 128);
        assert_eq!(geo.trips.k, 2);
    }

    #[test]
    fn geometry_grid_and_trips() {
        let sched = LoopSchedule::new(&[Dim::M, Dim::K], &[Dim::N, Dim::L]).unwrap();
        let p = FusionPlan::new(
            sched,
            DimMap::splat(32),
            ClusterConfig::new(2, 2, 1, 2).unwrap(),
            GatedLowering::NotApplicable,
        );
        let geo = p.geometry(&DimensionSpec::new(128, 256, 64, 128)).unwrap();
        assert_eq!(geo.grid, DimMap::new(2, 1, 2, 1));
        assert_eq!(geo.trips, DimMap::new(1, 4, 1, 2));
        assert_eq!(geo.clusters(), 4);
    }

    #[test]
    fn plan_json_round_trip() {
        let p = FusionPlan::new(
            LoopSchedule::new(&[Dim::M, Dim::N], &[Dim::L, Dim::K]).unwrap(),
            DimMap::new(64, 128, 32, 16),
            ClusterConfig::new(2, 4, 2, 8).unwrap(),
            GatedLowering::NotApplicable,
        );
        let text = plan_to_json(&p);
        let back = plan_from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(plan_to_json(&back), text);
        assert!(text.contains("\"version\": 1"));
    }
}
