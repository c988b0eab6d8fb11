//! Dataflow analyzer: closed-form per-tier byte volumes for a fusion plan and
//! greedy placement of the reused tensors.
//!
//! Event model shared with the simulator:
//!
//! * an input/output tile is (re)loaded or flushed whenever any temporal loop
//!   at or outside its innermost indexing loop advances;
//! * with K innermost, C completes once per point of the other temporal loops;
//!   otherwise C is recomputed whenever its own residency slot changes;
//! * GEMM1 runs once per completed C (K innermost) or once per loop point.
//!
//! Tier bytes: global counts input loads, E stores (atomic adds) and E spill
//! below DSM; smem counts input staging plus 2x the smem share of C/E per use;
//! reg counts 2x the register share; dsm counts the three cluster primitives
//! plus 2x the DSM share of spilled C/E. L2 is capacity only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{DeviceModel, Tier};
use crate::plan::{FusionPlan, GatedLowering, Geometry, PlanDocument, ReductionMode};
use crate::workload::{ChainGraph, Dim, DimMap, TensorDecl, TensorRole};

pub use crate::plan::{ResourceMapping, TensorMapping};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficMode {
    /// Schedule-order-aware residency (default).
    #[default]
    ReuseAware,
    /// Multiply only over the loops that index a tensor.
    LiteralAlg1,
}

/// Bytes moved per tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DataMovementVolume {
    pub global: u64,
    pub l2: u64,
    pub dsm: u64,
    pub smem: u64,
    pub reg: u64,
}

impl DataMovementVolume {
    pub fn get(&self, tier: Tier) -> u64 {
        match tier {
            Tier::Global => self.global,
            Tier::L2 => self.l2,
            Tier::Dsm => self.dsm,
            Tier::Smem => self.smem,
            Tier::Reg => self.reg,
        }
    }

    pub fn get_mut(&mut self, tier: Tier) -> &mut u64 {
        match tier {
            Tier::Global => &mut self.global,
            Tier::L2 => &mut self.l2,
            Tier::Dsm => &mut self.dsm,
            Tier::Smem => &mut self.smem,
            Tier::Reg => &mut self.reg,
        }
    }

    /// `(tier, predicted - measured)` for every tier that differs.
    pub fn deltas(&self, other: &DataMovementVolume) -> Vec<(Tier, i128)> {
        Tier::ALL
            .into_iter()
            .filter(|t| self.get(*t) != other.get(*t))
            .map(|t| (t, self.get(t) as i128 - other.get(t) as i128))
            .collect()
    }
}

/// DSM primitive bytes plus the global atomic-reduce share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrimitiveBytes {
    pub all_exchange: u64,
    pub shuffle: u64,
    pub reduce_scatter: u64,
    pub dsm_spill: u64,
    /// E store bytes beyond one store of the full output.
    pub inter_cluster_reduce: u64,
}

impl PrimitiveBytes {
    pub fn dsm_total(&self) -> u64 {
        self.all_exchange + self.shuffle + self.reduce_scatter + self.dsm_spill
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TensorTraffic {
    pub load: u64,
    pub store: u64,
}

/// Per-tier, per-primitive and per-tensor byte counts. The analyzer predicts
/// one, the simulator measures one; parity compares them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrafficCounts {
    pub volume: DataMovementVolume,
    pub primitives: PrimitiveBytes,
    pub tensors: BTreeMap<String, TensorTraffic>,
}

/// Bytes of one block tile of `tensor`.
pub fn footprint(tensor: &TensorDecl, block: &DimMap<u64>, element_size: u64) -> u64 {
    tensor.indexing_dims.iter().map(|d| block[*d]).product::<u64>() * element_size
}

/// Per-block capacity ledger used by greedy placement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupancy {
    pub cluster_blocks: u64,
    used: [u64; 5],
}

fn slot(t: Tier) -> usize {
    match t {
        Tier::Reg => 0,
        Tier::Smem => 1,
        Tier::Dsm => 2,
        Tier::L2 => 3,
        Tier::Global => 4,
    }
}

impl Occupancy {
    pub fn new(cluster_blocks: u64) -> Occupancy {
        Occupancy {
            cluster_blocks,
            used: [0; 5],
        }
    }

    pub fn used(&self, tier: Tier) -> u64 {
        self.used[slot(tier)]
    }

    pub fn commit(&mut self, tier: Tier, bytes: u64) {
        self.used[slot(tier)] += bytes;
    }

    /// Free bytes; DSM is the cluster's pooled smem minus this block's use.
    pub fn free(&self, device: &DeviceModel, tier: Tier) -> u64 {
        let cap = device.capacity(tier, self.cluster_blocks);
        match tier {
            Tier::Dsm => cap.saturating_sub(self.used(Tier::Smem) + self.used(Tier::Dsm)),
            _ => cap.saturating_sub(self.used(tier)),
        }
    }
}

fn place_raw(footprint: u64, device: &DeviceModel, floor: Tier, occ: &mut Occupancy) -> std::result::Result<[u64; 5], u64> {
    let mut alloc = [0u64; 5];
    let mut remaining = footprint;
    for tier in Tier::ALL {
        if remaining == 0 || tier > floor {
            break;
        }
        if tier == Tier::L2 && device.l2.is_none() {
            continue;
        }
        let take = remaining.min(occ.free(device, tier));
        if take > 0 {
            occ.commit(tier, take);
            alloc[slot(tier)] = take;
            remaining -= take;
        }
    }
    if remaining > 0 {
        Err(remaining)
    } else {
        Ok(alloc)
    }
}

fn mapping_of(alloc: &[u64; 5]) -> TensorMapping {
    TensorMapping {
        allocations: Tier::ALL
            .into_iter()
            .filter(|t| alloc[slot(*t)] > 0)
            .map(|t| (t, alloc[slot(t)]))
            .collect(),
    }
}

/// Greedy fill from the fastest tier down to `spill_floor`.
pub fn place_tensor(
    name: &str,
    footprint: u64,
    device: &DeviceModel,
    spill_floor: Tier,
    occupancy: &mut Occupancy,
) -> Result<TensorMapping> {
    let before = occupancy.clone();
    match place_raw(footprint, device, spill_floor, occupancy) {
        Ok(alloc) => Ok(mapping_of(&alloc)),
        Err(_) => {
            *occupancy = before;
            Err(Error::CapacityExceeded {
                tensor: name.to_string(),
                floor: spill_floor,
                needed: footprint,
            })
        }
    }
}

/// Product of trips over temporal loops from the outermost down to the
/// innermost loop indexing any of `dims`.
fn prefix_events(plan: &FusionPlan, geo: &Geometry, dims: &[Dim]) -> u64 {
    let t = &plan.schedule.temporal;
    match t.iter().rposition(|d| dims.contains(d)) {
        Some(p) => t[..=p].iter().map(|d| geo.trips[*d]).product(),
        None => 1,
    }
}

fn literal_events(plan: &FusionPlan, geo: &Geometry, dims: &[Dim]) -> u64 {
    plan.schedule
        .temporal
        .iter()
        .filter(|d| dims.contains(d))
        .map(|d| geo.trips[*d])
        .product()
}

fn all_trips_except(plan: &FusionPlan, geo: &Geometry, skip: Option<Dim>) -> u64 {
    plan.schedule
        .temporal
        .iter()
        .filter(|d| Some(**d) != skip)
        .map(|d| geo.trips[*d])
        .product()
}

/// Event counts for one plan execution (per cluster).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub a: u64,
    pub b: u64,
    pub d: u64,
    /// Completed-C events (one all_exchange each).
    pub c: u64,
    pub gemm1_passes: u64,
    /// E flushes (reduce_scatter + atomic store each).
    pub e: u64,
}

pub fn event_counts(plan: &FusionPlan, geo: &Geometry, mode: TrafficMode) -> EventCounts {
    use Dim::*;
    let io = |dims: &[Dim]| match mode {
        TrafficMode::ReuseAware => prefix_events(plan, geo, dims),
        TrafficMode::LiteralAlg1 => literal_events(plan, geo, dims),
    };
    let (c, gemm1_passes) = match plan.schedule.reduction_mode() {
        ReductionMode::InnerK => {
            let outer = all_trips_except(plan, geo, Some(K));
            (outer, outer)
        }
        _ => (prefix_events(plan, geo, &[M, N, K]), all_trips_except(plan, geo, None)),
    };
    EventCounts {
        a: io(&[M, K]),
        b: io(&[K, N]),
        d: io(&[N, L]),
        c,
        gemm1_passes,
        e: io(&[M, L]),
    }
}

/// Tile footprints in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprints {
    pub a: u64,
    pub b: u64,
    pub d: u64,
    /// Output tile at element size (global store).
    pub e: u64,
    /// Intermediate tile at accumulator size.
    pub c: u64,
    /// Output partial at accumulator size.
    pub e_partial: u64,
    /// On-chip C accumulators per block (two under doubled-K).
    pub c_resident: u64,
}

pub fn footprints(graph: &ChainGraph, plan: &FusionPlan) -> Footprints {
    let b = plan.tiles.block;
    let es = graph.dims.element_size;
    let acc = graph.dims.accumulator_size;
    let c = b.m * b.n * acc;
    Footprints {
        a: b.m * b.k * es,
        b: b.k * b.n * es,
        d: b.n * b.l * es,
        e: b.m * b.l * es,
        c,
        e_partial: b.m * b.l * acc,
        c_resident: if plan.gated_lowering == GatedLowering::DoubledK { 2 * c } else { c },
    }
}

/// Everything the closed forms produce, without string-keyed maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluation {
    pub geometry: Geometry,
    pub events: EventCounts,
    pub footprints: Footprints,
    pub volume: DataMovementVolume,
    pub primitives: PrimitiveBytes,
    pub loads: InputLoads,
    pub e_store: u64,
    pub c_alloc: [u64; 5],
    pub e_alloc: [u64; 5],
    pub occupancy: [u64; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InputLoads {
    pub a: u64,
    /// B (standard) or B0 (gated).
    pub b0: u64,
    /// B1 (gated only).
    pub b1: u64,
    pub d: u64,
}

impl InputLoads {
    pub fn total(&self) -> u64 {
        self.a + self.b0 + self.b1 + self.d
    }
}

/// Intermediate C would have to cross clusters: nonlinear activation with the
/// K reduction split over the grid.
fn k_grid_violation(graph: &ChainGraph, plan: &FusionPlan, geo: &Geometry) -> bool {
    !graph.effective_activation().is_linear() && plan.schedule.is_spatial(Dim::K) && geo.grid.k > 1
}

/// Closed-form evaluation of a plan. Fails on infeasible geometry or when a
/// reused tensor cannot be placed above its spill floor.
pub fn evaluate(graph: &ChainGraph, device: &DeviceModel, plan: &FusionPlan, mode: TrafficMode) -> Result<Evaluation> {
    let geo = plan.geometry(&graph.dims)?;
    let cls = plan.cluster;
    let blocks = cls.blocks();
    if blocks > device.max_cluster_blocks {
        return Err(Error::ClusterTooLarge {
            blocks,
            limit: device.max_cluster_blocks,
        });
    }
    let fp = footprints(graph, plan);
    if k_grid_violation(graph, plan, &geo) {
        return Err(Error::CapacityExceeded {
            tensor: graph.intermediate().name.clone(),
            floor: Tier::Dsm,
            needed: graph.dims.m * graph.dims.n * graph.dims.accumulator_size,
        });
    }

    let mut occ = Occupancy::new(blocks);
    let c_alloc = place_raw(fp.c_resident, device, Tier::Dsm, &mut occ).map_err(|_| Error::CapacityExceeded {
        tensor: graph.intermediate().name.clone(),
        floor: Tier::Dsm,
        needed: fp.c_resident,
    })?;
    let e_alloc = place_raw(fp.e_partial, device, Tier::Global, &mut occ).map_err(|_| Error::CapacityExceeded {
        tensor: graph.output().name.clone(),
        floor: Tier::Global,
        needed: fp.e_partial,
    })?;

    let ev = event_counts(plan, &geo, mode);
    let clusters = geo.clusters();
    let g0 = cls.cls_k;
    let g1 = cls.cls_shuffle;
    let r = cls.cls_reduce;

    let b_total = clusters * blocks * fp.b * ev.b;
    let (b0, b1) = match plan.gated_lowering {
        GatedLowering::NotApplicable => (b_total, 0),
        GatedLowering::SpatialSplit => {
            let half = clusters * cls.cls_m * cls.cls_n * geo.k_split * fp.b * ev.b;
            (half, half)
        }
        GatedLowering::DoubledK => (b_total, b_total),
    };
    let loads = InputLoads {
        a: clusters * blocks * fp.a * ev.a,
        b0,
        b1,
        d: clusters * cls.cls_m * cls.cls_n * cls.cls_l * fp.d * ev.d,
    };
    let e_store = clusters * cls.cls_m * cls.cls_l * fp.e * ev.e;

    let exchanged = fp.c_resident;
    let per_block = clusters * blocks * 2;
    let tier_bytes = |t: Tier| per_block * (c_alloc[slot(t)] * ev.c + e_alloc[slot(t)] * ev.e);
    let primitives = PrimitiveBytes {
        all_exchange: clusters * ev.c * cls.cls_m * cls.cls_n * g0 * (g0 - 1) * exchanged,
        shuffle: clusters * ev.gemm1_passes * cls.cls_m * cls.cls_k * r * g1 * (g1 - 1) * fp.c,
        reduce_scatter: clusters * ev.e * cls.cls_m * cls.cls_l * (r - 1) * fp.e_partial,
        dsm_spill: tier_bytes(Tier::Dsm),
        inter_cluster_reduce: e_store.saturating_sub(graph.dims.m * graph.dims.l * graph.dims.element_size),
    };
    let e_deep = per_block * (e_alloc[slot(Tier::L2)] + e_alloc[slot(Tier::Global)]) * ev.e;
    let volume = DataMovementVolume {
        global: loads.total() + e_store + e_deep,
        l2: 0,
        dsm: primitives.dsm_total(),
        smem: loads.total() + tier_bytes(Tier::Smem),
        reg: tier_bytes(Tier::Reg),
    };
    Ok(Evaluation {
        geometry: geo,
        events: ev,
        footprints: fp,
        volume,
        primitives,
        loads,
        e_store,
        c_alloc,
        e_alloc,
        occupancy: occ.used,
    })
}

impl Evaluation {
    pub fn traffic(&self, graph: &ChainGraph) -> TrafficCounts {
        let mut tensors = BTreeMap::new();
        let load = |v| TensorTraffic { load: v, store: 0 };
        tensors.insert("A".to_string(), load(self.loads.a));
        if graph.is_gated() {
            tensors.insert("B0".to_string(), load(self.loads.b0));
            tensors.insert("B1".to_string(), load(self.loads.b1));
        } else {
            tensors.insert("B".to_string(), load(self.loads.b0));
        }
        tensors.insert("D".to_string(), load(self.loads.d));
        tensors.insert(
            "E".to_string(),
            TensorTraffic {
                load: 0,
                store: self.e_store,
            },
        );
        TrafficCounts {
            volume: self.volume,
            primitives: self.primitives,
            tensors,
        }
    }

    pub fn mapping(&self, graph: &ChainGraph) -> ResourceMapping {
        let mut tensors = BTreeMap::new();
        tensors.insert(graph.intermediate().name.clone(), mapping_of(&self.c_alloc));
        tensors.insert(graph.output().name.clone(), mapping_of(&self.e_alloc));
        ResourceMapping { tensors }
    }
}

/// Global-tier traffic of an input or output tensor.
pub fn io_traffic(tensor: &TensorDecl, graph: &ChainGraph, plan: &FusionPlan, mode: TrafficMode) -> Result<u64> {
    if tensor.role == TensorRole::Intermediate {
        return Err(Error::WrongTensorClass(tensor.name.clone()));
    }
    let geo = plan.geometry(&graph.dims)?;
    let fp = footprints(graph, plan);
    let ev = event_counts(plan, &geo, mode);
    let cls = plan.cluster;
    let clusters = geo.clusters();
    let blocks = cls.blocks();
    Ok(match tensor.name.as_str() {
        "A" => clusters * blocks * fp.a * ev.a,
        "B" => clusters * blocks * fp.b * ev.b,
        "B0" | "B1" => match plan.gated_lowering {
            GatedLowering::SpatialSplit => clusters * cls.cls_m * cls.cls_n * geo.k_split * fp.b * ev.b,
            _ => clusters * blocks * fp.b * ev.b,
        },
        "D" => clusters * cls.cls_m * cls.cls_n * cls.cls_l * fp.d * ev.d,
        "E" => clusters * cls.cls_m * cls.cls_l * fp.e * ev.e,
        other => return Err(Error::Usage(format!("unknown tensor {other}"))),
    })
}

/// DSM bytes split by primitive.
pub fn dsm_traffic(graph: &ChainGraph, device: &DeviceModel, plan: &FusionPlan) -> Result<PrimitiveBytes> {
    Ok(evaluate(graph, device, plan, TrafficMode::ReuseAware)?.primitives)
}

/// Free bytes per tier after placement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headroom {
    pub reg: u64,
    pub smem: u64,
    pub dsm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub mode: TrafficMode,
    pub plan: PlanDocument,
    pub clusters: u64,
    pub blocks_per_cluster: u64,
    pub events: EventCounts,
    pub footprints: Footprints,
    pub traffic: TrafficCounts,
    pub headroom: Headroom,
}

/// Analysis result: volumes plus the plan with its mapping filled in.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub volume: DataMovementVolume,
    pub plan: FusionPlan,
    pub evaluation: Evaluation,
    pub traffic: TrafficCounts,
    pub mode: TrafficMode,
}

impl Analysis {
    pub fn report(&self, device: &DeviceModel) -> AnalysisReport {
        let mut occ = Occupancy::new(self.plan.cluster.blocks());
        occ.used = self.evaluation.occupancy;
        AnalysisReport {
            mode: self.mode,
            plan: PlanDocument::from(&self.plan),
            clusters: self.evaluation.geometry.clusters(),
            blocks_per_cluster: self.plan.cluster.blocks(),
            events: self.evaluation.events,
            footprints: self.evaluation.footprints,
            traffic: self.traffic.clone(),
            headroom: Headroom {
                reg: occ.free(device, Tier::Reg),
                smem: occ.free(device, Tier::Smem),
                dsm: occ.free(device, Tier::Dsm),
            },
        }
    }
}

pub fn analyze(graph: &ChainGraph, device: &DeviceModel, plan: &FusionPlan, mode: TrafficMode) -> Result<Analysis> {
    let ev = evaluate(graph, device, plan, mode)?;
    let traffic = ev.traffic(graph);
    let completed = plan.clone().with_mapping(ev.mapping(graph));
    Ok(Analysis {
        volume: ev.volume,
        plan: completed,
        evaluation: ev,
        traffic,
        mode,
    })
}

/// Rows per panel in the two-kernel baseline.
pub const BASELINE_PANEL_ROWS: u64 = 128;

/// Closed-form traffic of the unfused baseline: GEMM0 writes C to global,
/// GEMM1 reads it back. Each kernel streams row panels of A (resp. C) once and
/// rereads the weight matrix once per panel.
pub fn unfused_traffic(graph: &ChainGraph) -> TrafficCounts {
    let d = graph.dims;
    let es = d.element_size;
    let panels = d.m.div_ceil(BASELINE_PANEL_ROWS);
    let mut tensors = BTreeMap::new();
    tensors.insert("A".to_string(), TensorTraffic { load: d.m * d.k * es, store: 0 });
    let weights = panels * d.k * d.n * es;
    if graph.is_gated() {
        tensors.insert("B0".to_string(), TensorTraffic { load: weights, store: 0 });
        tensors.insert("B1".to_string(), TensorTraffic { load: weights, store: 0 });
    } else {
        tensors.insert("B".to_string(), TensorTraffic { load: weights, store: 0 });
    }
    let c = d.m * d.n * es;
    tensors.insert("C".to_string(), TensorTraffic { load: c, store: c });
    tensors.insert("D".to_string(), TensorTraffic { load: panels * d.n * d.l * es, store: 0 });
    tensors.insert("E".to_string(), TensorTraffic { load: 0, store: d.m * d.l * es });
    let global = tensors.values().map(|t| t.load + t.store).sum();
    TrafficCounts {
        volume: DataMovementVolume {
            global,
            ..Default::default()
        },
        primitives: PrimitiveBytes::default(),
        tensors,
    }
}
