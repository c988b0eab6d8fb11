//! Fusion search: candidate space, pruning, cost ranking and space accounting.
//!
//! Candidates are `(lowering, schedule, cluster tuple, block tiles)`. Rules
//! run in published order 1..5; stages 0..4 are counted in closed form,
//! stage 5 by a parallel scan that also ranks the survivors.

pub mod cost;
pub mod rules;

use std::cmp::Ordering;
use std::collections::HashSet;

use num_bigint::BigUint;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::analyzer::{analyze, evaluate, DataMovementVolume, PrimitiveBytes, TrafficMode};
use crate::error::{Error, Result};
use crate::hardware::DeviceModel;
use crate::plan::{enumerate_schedules, ClusterConfig, FusionPlan, GatedLowering, LoopSchedule, PlanDocument};
use crate::simulator;
use crate::workload::{ChainGraph, Dim, DimMap, WorkloadInfo, MMA_EXTENT};

pub use cost::{cost, CostBreakdown};
pub use rules::{
    first_violation, rule1_divisible, rule2_cluster, rule2_cluster_for, rule3_activation, rule4_dependency,
    rule5_capacity, Candidate, RuleSet,
};

/// Default list length.
pub const DEFAULT_TOP_K: usize = 11;

fn ser_big<S: Serializer>(v: &BigUint, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

fn de_big<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BigUint, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    /// Exact count, as a decimal string.
    #[serde(serialize_with = "ser_big", deserialize_with = "de_big")]
    pub count: BigUint,
    /// Survivors relative to the previous stage.
    pub kept_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceReport {
    pub workload: WorkloadInfo,
    pub cluster_options: Vec<u64>,
    pub max_cluster_blocks: u64,
    pub schedules: usize,
    pub lowerings: Vec<GatedLowering>,
    pub strict_identity: bool,
    pub stages: Vec<StageCount>,
}

impl SpaceReport {
    pub fn count(&self, stage: &str) -> Option<&BigUint> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| &s.count)
    }

    fn push(&mut self, stage: String, count: BigUint) {
        let kept_fraction = self.stages.last().map(|prev| ratio(&count, &prev.count));
        self.stages.push(StageCount {
            stage,
            count,
            kept_fraction,
        });
    }
}

fn ratio(a: &BigUint, b: &BigUint) -> f64 {
    let f = |x: &BigUint| x.to_string().parse::<f64>().unwrap_or(f64::INFINITY);
    if *b == BigUint::from(0u32) {
        0.0
    } else {
        f(a) / f(b)
    }
}

/// Block tile choices per dim: multiples of 16, optionally only divisors.
fn tile_lattice(graph: &ChainGraph, rule1: bool) -> DimMap<Vec<u64>> {
    DimMap::from_fn(|d| {
        let s = graph.dims.extent(d);
        (1..=s / MMA_EXTENT)
            .map(|i| i * MMA_EXTENT)
            .filter(|t| !rule1 || s % t == 0)
            .collect()
    })
}

fn all_tuples(device: &DeviceModel) -> Vec<DimMap<u64>> {
    let o = &device.cluster_dim_options;
    let mut out = Vec::with_capacity(o.len().pow(4));
    for &m in o {
        for &n in o {
            for &k in o {
                for &l in o {
                    out.push(DimMap::new(m, n, k, l));
                }
            }
        }
    }
    out
}

struct Space {
    lowerings: Vec<GatedLowering>,
    schedules: Vec<LoopSchedule>,
    tuples: Vec<DimMap<u64>>,
}

impl Space {
    fn new(graph: &ChainGraph, device: &DeviceModel) -> Space {
        Space {
            lowerings: GatedLowering::candidates(graph),
            schedules: enumerate_schedules(4),
            tuples: all_tuples(device),
        }
    }

    fn schedules_passing(&self, graph: &ChainGraph, rules: &RuleSet, upto: usize) -> Vec<LoopSchedule> {
        self.schedules
            .iter()
            .filter(|s| {
                (upto < 3 || !rules.has(3) || rule3_activation(s, graph, rules.strict_identity))
                    && (upto < 4 || !rules.has(4) || rule4_dependency(s))
            })
            .cloned()
            .collect()
    }

    fn tuples_passing(&self, device: &DeviceModel, rules: &RuleSet, low: GatedLowering, upto: usize) -> Vec<DimMap<u64>> {
        self.tuples
            .iter()
            .filter(|c| upto < 2 || !rules.has(2) || rule2_cluster_for(c, device, low))
            .copied()
            .collect()
    }
}

fn closed_form(graph: &ChainGraph, device: &DeviceModel, rules: &RuleSet, space: &Space, upto: usize) -> BigUint {
    let lattice = tile_lattice(graph, upto >= 1 && rules.has(1));
    let tiles: BigUint = Dim::ALL
        .iter()
        .map(|d| BigUint::from(lattice[*d].len()))
        .product();
    let scheds = BigUint::from(space.schedules_passing(graph, rules, upto).len());
    let mut total = BigUint::from(0u32);
    for &low in &space.lowerings {
        let tuples = BigUint::from(space.tuples_passing(device, rules, low, upto).len());
        total += &scheds * &tuples * &tiles;
    }
    total
}

fn stage_name(i: usize) -> String {
    if i == 0 {
        "original".into()
    } else {
        format!("rule{i}")
    }
}

fn new_report(graph: &ChainGraph, device: &DeviceModel, rules: &RuleSet, space: &Space) -> SpaceReport {
    SpaceReport {
        workload: WorkloadInfo::of(graph),
        cluster_options: device.cluster_dim_options.clone(),
        max_cluster_blocks: device.max_cluster_blocks,
        schedules: space.schedules.len(),
        lowerings: space.lowerings.clone(),
        strict_identity: rules.strict_identity,
        stages: Vec::new(),
    }
}

/// Work unit of the stage-5 scan: one lowering and one cluster tuple.
struct Item {
    lowering: GatedLowering,
    cluster: ClusterConfig,
}

fn scan_items(device: &DeviceModel, rules: &RuleSet, space: &Space) -> Result<Vec<Item>> {
    if !rules.has(1) || !rules.has(2) {
        return Err(Error::Usage("rule 5 enumeration needs rules 1 and 2".into()));
    }
    let mut items = Vec::new();
    for &low in &space.lowerings {
        for c in space.tuples_passing(device, rules, low, 2) {
            items.push(Item {
                lowering: low,
                cluster: ClusterConfig::from_map(c)?,
            });
        }
    }
    Ok(items)
}

/// Visits every Rule-5 survivor of one item; returns how many there were.
fn scan_item(
    graph: &ChainGraph,
    device: &DeviceModel,
    item: &Item,
    schedules: &[LoopSchedule],
    lattice: &DimMap<Vec<u64>>,
    mode: TrafficMode,
    mut visit: impl FnMut(&FusionPlan, &DataMovementVolume),
) -> u64 {
    let mut count = 0;
    for sched in schedules {
        let mut plan = FusionPlan::new(sched.clone(), DimMap::splat(MMA_EXTENT), item.cluster, item.lowering);
        let extents = plan.loop_extents(&graph.dims);
        let split = DimMap::new(item.cluster.cls_m, item.cluster.cls_n, plan.k_split(), item.cluster.cls_l);
        let ok = |d: Dim| -> Vec<u64> {
            lattice[d]
                .iter()
                .copied()
                .filter(|t| extents[d] % (t * split[d]) == 0)
                .collect()
        };
        let (tm, tn, tk, tl) = (ok(Dim::M), ok(Dim::N), ok(Dim::K), ok(Dim::L));
        for &bm in &tm {
            for &bn in &tn {
                for &bk in &tk {
                    for &bl in &tl {
                        plan.tiles.block = DimMap::new(bm, bn, bk, bl);
                        if let Ok(ev) = evaluate(graph, device, &plan, mode) {
                            count += 1;
                            visit(&plan, &ev.volume);
                        }
                    }
                }
            }
        }
    }
    count
}

/// Exact per-stage counts for the enabled rules, in published order.
pub fn count_space(graph: &ChainGraph, device: &DeviceModel, rules: &RuleSet) -> Result<SpaceReport> {
    count_space_with(graph, device, rules, None)
}

pub fn count_space_with(
    graph: &ChainGraph,
    device: &DeviceModel,
    rules: &RuleSet,
    threads: Option<usize>,
) -> Result<SpaceReport> {
    let space = Space::new(graph, device);
    let mut report = new_report(graph, device, rules, &space);
    report.push(stage_name(0), closed_form(graph, device, &RuleSet::none(), &space, 0));
    for r in 1..=4 {
        if rules.has(r) {
            report.push(stage_name(r), closed_form(graph, device, rules, &space, r));
        }
    }
    if rules.has(5) {
        let items = scan_items(device, rules, &space)?;
        let schedules = space.schedules_passing(graph, rules, 4);
        let lattice = tile_lattice(graph, true);
        let run = || {
            items
                .par_iter()
                .map(|it| scan_item(graph, device, it, &schedules, &lattice, TrafficMode::ReuseAware, |_, _| {}))
                .sum::<u64>()
        };
        let n = with_threads(threads, run)?;
        report.push(stage_name(5), BigUint::from(n));
    }
    Ok(report)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub top_k: usize,
    pub rules: RuleSet,
    pub mode: TrafficMode,
    pub threads: Option<usize>,
    /// Upper bound on simulated block-steps for the re-ranking pass.
    pub rerank_budget: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            top_k: DEFAULT_TOP_K,
            rules: RuleSet::all(),
            mode: TrafficMode::ReuseAware,
            threads: None,
            rerank_budget: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPlan {
    pub rank: usize,
    pub cost: CostBreakdown,
    pub volume: DataMovementVolume,
    pub primitives: PrimitiveBytes,
    pub plan: PlanDocument,
    /// Cost recomputed from the simulator's measured trace, when re-ranked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankInfo {
    /// `simulated` or `skipped`.
    pub status: String,
    pub work: u64,
    pub budget: u64,
    /// Plans whose measured volume differed from the prediction.
    pub mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub version: u32,
    pub workload: WorkloadInfo,
    pub device: String,
    pub mode: TrafficMode,
    pub top_k: usize,
    pub plans: Vec<RankedPlan>,
    pub space: SpaceReport,
    pub rerank: RerankInfo,
}

impl SearchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search result serializes")
    }

    pub fn plan(&self, idx: usize) -> Result<FusionPlan> {
        self.plans
            .get(idx)
            .ok_or_else(|| Error::Usage(format!("plan index {idx} out of range ({} plans)", self.plans.len())))?
            .plan
            .clone()
            .into_plan()
    }
}

type TopKey = (LoopSchedule, [u64; 4], [u64; 4], GatedLowering);

struct Entry {
    total: f64,
    key: TopKey,
    plan: FusionPlan,
}

fn cmp_entry(a_total: f64, a_key: &TopKey, b: &Entry) -> Ordering {
    a_total.total_cmp(&b.total).then_with(|| a_key.cmp(&b.key))
}

/// Sorted, bounded list under the total order (cost, plan key).
struct TopK {
    k: usize,
    entries: Vec<Entry>,
}

impl TopK {
    fn new(k: usize) -> TopK {
        TopK {
            k,
            entries: Vec::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, total: f64, plan: &FusionPlan) {
        if self.entries.len() == self.k {
            let worst = self.entries.last().expect("k >= 1");
            if total.total_cmp(&worst.total) == Ordering::Greater {
                return;
            }
        }
        let key = plan.sort_key();
        if self.entries.len() == self.k && cmp_entry(total, &key, self.entries.last().expect("k >= 1")) != Ordering::Less {
            return;
        }
        let pos = self
            .entries
            .partition_point(|e| cmp_entry(total, &key, e) == Ordering::Greater);
        self.entries.insert(
            pos,
            Entry {
                total,
                key,
                plan: plan.clone(),
            },
        );
        self.entries.truncate(self.k);
    }

    fn merge(mut self, other: TopK) -> TopK {
        for e in other.entries {
            let pos = self
                .entries
                .partition_point(|x| cmp_entry(e.total, &e.key, x) == Ordering::Greater);
            self.entries.insert(pos, e);
        }
        self.entries.truncate(self.k);
        self
    }
}

/// Runs the engine: prune, cost every survivor, keep the best `top_k`, then
/// re-rank by simulated traffic when the work budget allows.
pub fn search(graph: &ChainGraph, device: &DeviceModel, config: &SearchConfig) -> Result<SearchResult> {
    if config.top_k == 0 {
        return Err(Error::Usage("top-k must be at least 1".into()));
    }
    device.validate()?;
    let rules = config.rules;
    let space = Space::new(graph, device);
    let mut report = new_report(graph, device, &rules, &space);
    report.push(stage_name(0), closed_form(graph, device, &RuleSet::none(), &space, 0));
    for r in 1..=4 {
        if rules.has(r) {
            report.push(stage_name(r), closed_form(graph, device, &rules, &space, r));
        }
    }

    let items = scan_items(device, &rules, &space)?;
    let schedules = space.schedules_passing(graph, &rules, 4);
    let lattice = tile_lattice(graph, true);
    let k = config.top_k;
    let mode = config.mode;
    let run = || {
        items
            .par_iter()
            .map(|it| {
                let mut top = TopK::new(k);
                let blocks = it.cluster.blocks();
                let n = scan_item(graph, device, it, &schedules, &lattice, mode, |plan, vol| {
                    if let Ok(c) = cost(vol, device, blocks) {
                        top.offer(c.total, plan);
                    }
                });
                (n, top)
            })
            .reduce(|| (0, TopK::new(k)), |a, b| (a.0 + b.0, a.1.merge(b.1)))
    };
    let (survivors, top) = with_threads(config.threads, run)?;
    report.push(stage_name(5), BigUint::from(survivors));
    if let Some(empty) = report.stages.iter().find(|s| s.count == BigUint::from(0u32)) {
        return Err(Error::EmptySpace {
            stage: empty.stage.clone(),
        });
    }

    let mut plans = Vec::with_capacity(top.entries.len());
    for (rank, e) in top.entries.iter().enumerate() {
        let a = analyze(graph, device, &e.plan, mode)?;
        plans.push(RankedPlan {
            rank,
            cost: cost(&a.volume, device, e.plan.cluster.blocks())?,
            volume: a.volume,
            primitives: a.traffic.primitives,
            plan: PlanDocument::from(&a.plan),
            measured_cost: None,
        });
    }
    let rerank = rerank(graph, device, config, &mut plans)?;
    Ok(SearchResult {
        version: crate::plan::PLAN_SCHEMA_VERSION,
        workload: WorkloadInfo::of(graph),
        device: device.name.clone(),
        mode,
        top_k: k,
        plans,
        space: report,
        rerank,
    })
}

/// Replaces hardware profiling: replays each listed plan in the traffic-only
/// simulator and orders by the cost of the measured bytes (stable on ties).
fn rerank(graph: &ChainGraph, device: &DeviceModel, config: &SearchConfig, plans: &mut [RankedPlan]) -> Result<RerankInfo> {
    let mut work = 0u64;
    let mut bodies = Vec::with_capacity(plans.len());
    for p in plans.iter() {
        let plan = p.plan.clone().into_plan()?;
        work = work.saturating_add(simulator::traffic_work(graph, &plan)?);
        bodies.push(plan);
    }
    if work > config.rerank_budget {
        return Ok(RerankInfo {
            status: "skipped".into(),
            work,
            budget: config.rerank_budget,
            mismatches: 0,
        });
    }
    let mut mismatches = 0;
    for (p, plan) in plans.iter_mut().zip(&bodies) {
        let trace = simulator::simulate_traffic(graph, device, plan)?;
        if trace.volume != p.volume {
            mismatches += 1;
        }
        p.measured_cost = Some(cost(&trace.volume, device, plan.cluster.blocks())?.total);
    }
    plans.sort_by(|a, b| {
        a.measured_cost
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.measured_cost.unwrap_or(f64::INFINITY))
            .then(a.rank.cmp(&b.rank))
    });
    for (i, p) in plans.iter_mut().enumerate() {
        p.rank = i;
    }
    Ok(RerankInfo {
        status: "simulated".into(),
        work,
        budget: config.rerank_budget,
        mismatches,
    })
}

/// Draws distinct Rule-1..5 survivors: uniform over lowering, Rule-2 tuple,
/// Rule-3/4 schedule and divisor tiles, then rejection on Rule 5 and `accept`.
pub fn sample_surviving<R: Rng>(
    graph: &ChainGraph,
    device: &DeviceModel,
    rules: &RuleSet,
    count: usize,
    rng: &mut R,
    max_draws: usize,
    accept: impl Fn(&FusionPlan) -> bool,
) -> Vec<FusionPlan> {
    let space = Space::new(graph, device);
    let schedules = space.schedules_passing(graph, rules, 4);
    let tuples: Vec<(GatedLowering, Vec<DimMap<u64>>)> = space
        .lowerings
        .iter()
        .map(|&l| (l, space.tuples_passing(device, rules, l, 2)))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let lattice = tile_lattice(graph, rules.has(1));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    if schedules.is_empty() || tuples.is_empty() {
        return out;
    }
    for _ in 0..max_draws {
        if out.len() == count {
            break;
        }
        let (low, ts) = &tuples[rng.gen_range(0..tuples.len())];
        let c = ts[rng.gen_range(0..ts.len())];
        let Ok(cluster) = ClusterConfig::from_map(c) else {
            continue;
        };
        let sched = schedules[rng.gen_range(0..schedules.len())].clone();
        let block = DimMap::from_fn(|d| lattice[d][rng.gen_range(0..lattice[d].len())]);
        let plan = FusionPlan::new(sched, block, cluster, *low);
        if rules.has(5) && !rule5_capacity(&plan, graph, device) {
            continue;
        }
        if plan.geometry(&graph.dims).is_err() || !accept(&plan) {
            continue;
        }
        if seen.insert(plan.clone()) {
            out.push(plan);
        }
    }
    out
}
