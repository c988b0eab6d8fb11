//! Pruning rules and the search-space element they judge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analyzer::{evaluate, TrafficMode};
use crate::error::{Error, Result};
use crate::hardware::DeviceModel;
use crate::plan::{derive_cluster_groups, enumerate_schedules, ClusterConfig, FusionPlan, GatedLowering, LoopSchedule};
use crate::workload::{ChainGraph, Dim, DimMap, DimensionSpec, MMA_EXTENT};

/// Rule 1: every block tile is a multiple of the MMA extent and divides its dim.
pub fn rule1_divisible(block: &DimMap<u64>, dims: &DimensionSpec) -> bool {
    Dim::ALL.into_iter().all(|d| {
        let t = block[d];
        t > 0 && t % MMA_EXTENT == 0 && dims.extent(d) % t == 0
    })
}

/// Rule 2: one cluster tuple for both GEMMs, within the block limit, with
/// integral shuffle and reduce groups.
pub fn rule2_cluster(cls: &DimMap<u64>, device: &DeviceModel) -> bool {
    cls.to_array().iter().all(|v| device.cluster_dim_options.contains(v))
        && cls.m * cls.n * cls.k <= device.max_cluster_blocks
        && derive_cluster_groups(cls.m, cls.n, cls.k, cls.l).is_ok()
}

/// Rule 2 plus lowering constraints (spatial split halves the K blocks).
pub fn rule2_cluster_for(cls: &DimMap<u64>, device: &DeviceModel, lowering: GatedLowering) -> bool {
    rule2_cluster(cls, device) && (lowering != GatedLowering::SpatialSplit || cls.k % 2 == 0)
}

/// Rule 3: a nonlinear activation needs complete C before GEMM1, so K may
/// not be a temporal loop with other loops nested inside it. Identity chains
/// are exempt unless `strict`.
pub fn rule3_activation(schedule: &LoopSchedule, graph: &ChainGraph, strict: bool) -> bool {
    let constrained = strict || !graph.effective_activation().is_linear();
    !(constrained && schedule.k_outside_innermost())
}

/// Rule 4: L must not be split across the grid.
pub fn rule4_dependency(schedule: &LoopSchedule) -> bool {
    !schedule.is_spatial(Dim::L)
}

/// Rule 5: the plan is geometrically feasible and every reused tensor fits
/// above its spill floor.
pub fn rule5_capacity(plan: &FusionPlan, graph: &ChainGraph, device: &DeviceModel) -> bool {
    evaluate(graph, device, plan, TrafficMode::ReuseAware).is_ok()
}

/// Which rules are active. `strict_identity` applies Rule 3 to identity chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleSet {
    pub enabled: [bool; 5],
    pub strict_identity: bool,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::all()
    }
}

impl RuleSet {
    pub fn all() -> RuleSet {
        RuleSet {
            enabled: [true; 5],
            strict_identity: false,
        }
    }

    pub fn none() -> RuleSet {
        RuleSet {
            enabled: [false; 5],
            strict_identity: false,
        }
    }

    pub fn without(mut self, rule: usize) -> RuleSet {
        self.enabled[rule - 1] = false;
        self
    }

    pub fn has(&self, rule: usize) -> bool {
        self.enabled[rule - 1]
    }

    /// Parses `0,1,2` style lists; `0` (the unpruned space) is always implied.
    pub fn parse(text: &str) -> Result<RuleSet> {
        let mut set = RuleSet::none();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let n: usize = part
                .parse()
                .map_err(|_| Error::Usage(format!("bad rule number '{part}'")))?;
            match n {
                0 => {}
                1..=5 => set.enabled[n - 1] = true,
                _ => return Err(Error::Usage(format!("rules are numbered 0..5, got {n}"))),
            }
        }
        Ok(set)
    }

    pub fn active(&self) -> Vec<usize> {
        (1..=5).filter(|r| self.has(*r)).collect()
    }
}

/// One point of the unpruned space. The cluster tuple is raw (it may be
/// infeasible), so this is not yet a plan.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub schedule: LoopSchedule,
    pub cluster: DimMap<u64>,
    pub block: DimMap<u64>,
    pub lowering: GatedLowering,
}

impl Candidate {
    pub fn to_plan(&self) -> Result<FusionPlan> {
        let cluster = ClusterConfig::from_map(self.cluster)?;
        Ok(FusionPlan::new(self.schedule.clone(), self.block, cluster, self.lowering))
    }

    /// Uniform draw from the unpruned space: any schedule, any option per
    /// cluster dim, any multiple of 16 up to each extent.
    pub fn random<R: Rng>(graph: &ChainGraph, device: &DeviceModel, rng: &mut R) -> Candidate {
        let schedules = enumerate_schedules(4);
        let opts = &device.cluster_dim_options;
        let lowerings = GatedLowering::candidates(graph);
        let schedule = schedules[rng.gen_range(0..schedules.len())].clone();
        let cluster = DimMap::from_fn(|_| opts[rng.gen_range(0..opts.len())]);
        let block = DimMap::from_fn(|d| MMA_EXTENT * rng.gen_range(1..=graph.dims.extent(d) / MMA_EXTENT));
        let lowering = lowerings[rng.gen_range(0..lowerings.len())];
        Candidate {
            schedule,
            cluster,
            block,
            lowering,
        }
    }
}

/// First enabled rule (1..=5) the candidate violates, or `None` if it survives.
pub fn first_violation(c: &Candidate, graph: &ChainGraph, device: &DeviceModel, rules: &RuleSet) -> Option<usize> {
    if rules.has(1) && !rule1_divisible(&c.block, &graph.dims) {
        return Some(1);
    }
    if rules.has(2) && !rule2_cluster_for(&c.cluster, device, c.lowering) {
        return Some(2);
    }
    if rules.has(3) && !rule3_activation(&c.schedule, graph, rules.strict_identity) {
        return Some(3);
    }
    if rules.has(4) && !rule4_dependency(&c.schedule) {
        return Some(4);
    }
    if rules.has(5) {
        let ok = match c.to_plan() {
            Ok(p) => rule5_capacity(&p, graph, device),
            Err(_) => false,
        };
        if !ok {
            return Some(5);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_standard_ffn, Activation};

    fn relu() -> ChainGraph {
        build_standard_ffn(DimensionSpec::new(96, 96, 96, 96), Activation::Relu).unwrap()
    }

    #[test]
    fn rule1_examples() {
        let dims = DimensionSpec::new(96, 96, 96, 96);
        assert!(rule1_divisible(&DimMap::splat(48), &dims));
        assert!(!rule1_divisible(&DimMap::new(24, 48, 48, 48), &dims));
        assert!(!rule1_divisible(&DimMap::new(64, 48, 48, 48), &dims));
    }

    #[test]
    fn rule2_examples() {
        let d = DeviceModel::default_h100();
        assert!(rule2_cluster(&DimMap::new(2, 4, 2, 4), &d));
        assert!(!rule2_cluster(&DimMap::new(4, 4, 2, 4), &d));
        assert!(!rule2_cluster(&DimMap::new(1, 2, 2, 8), &d));
        assert!(!rule2_cluster_for(&DimMap::new(1, 1, 1, 1), &d, GatedLowering::SpatialSplit));
        let opts = [1u64, 2, 4, 8, 16];
        let mut n = 0;
        for m in opts {
            for nn in opts {
                for k in opts {
                    for l in opts {
                        n += rule2_cluster(&DimMap::new(m, nn, k, l), &d) as usize;
                    }
                }
            }
        }
        assert_eq!(n, 70);
    }

    #[test]
    fn rule3_examples() {
        use Dim::*;
        let g = relu();
        let s = |sp: &[Dim], t: &[Dim]| LoopSchedule::new(sp, t).unwrap();
        assert!(rule3_activation(&s(&[M], &[N, L, K]), &g, false));
        assert!(!rule3_activation(&s(&[M], &[K, N, L]), &g, false));
        let id = build_standard_ffn(DimensionSpec::new(96, 96, 96, 96), Activation::Identity).unwrap();
        assert!(rule3_activation(&s(&[M, K], &[N, L]), &id, false));
        assert!(rule3_activation(&s(&[M], &[K, N, L]), &id, false));
        assert!(!rule3_activation(&s(&[M], &[K, N, L]), &id, true));
        let schedules = enumerate_schedules(4);
        assert_eq!(schedules.iter().filter(|x| rule3_activation(x, &g, false)).count(), 26);
    }

    #[test]
    fn rule4_examples() {
        use Dim::*;
        assert!(rule4_dependency(&LoopSchedule::new(&[M], &[N, K, L]).unwrap()));
        assert!(!rule4_dependency(&LoopSchedule::new(&[M, L], &[N, K]).unwrap()));
        assert!(!rule4_dependency(&LoopSchedule::new(&[M, N, K, L], &[]).unwrap()));
    }

    #[test]
    fn rule5_examples() {
        use Dim::*;
        let d = DeviceModel::default_h100();
        let g = relu();
        let tiny = FusionPlan::new(
            LoopSchedule::new(&[M], &[N, L, K]).unwrap(),
            DimMap::splat(16),
            ClusterConfig::singleton(),
            GatedLowering::NotApplicable,
        );
        assert!(rule5_capacity(&tiny, &g, &d));

        // C tile of 512 x 1024 f32 = 2 MiB: too big for one block, fits a 16-block cluster
        let big = build_standard_ffn(DimensionSpec::new(512, 1024, 256, 256), Activation::Relu).unwrap();
        let single = FusionPlan::new(
            LoopSchedule::new(&[M], &[N, L, K]).unwrap(),
            DimMap::new(512, 1024, 64, 16),
            ClusterConfig::singleton(),
            GatedLowering::NotApplicable,
        );
        assert!(!rule5_capacity(&single, &big, &d));
        let clustered = FusionPlan::new(
            LoopSchedule::new(&[M], &[N, L, K]).unwrap(),
            DimMap::new(512, 1024, 16, 16),
            ClusterConfig::new(1, 1, 16, 16).unwrap(),
            GatedLowering::NotApplicable,
        );
        assert!(rule5_capacity(&clustered, &big, &d));
    }

    #[test]
    fn rule_set_parse() {
        let r = RuleSet::parse("0,1").unwrap();
        assert_eq!(r.active(), vec![1]);
        assert!(RuleSet::parse("0,7").is_err());
        assert_eq!(RuleSet::parse("1,2,3,4,5").unwrap(), RuleSet::all());
    }
}
