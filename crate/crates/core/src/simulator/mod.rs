//! Tile-level simulator: runs a plan on real matrices, counts every byte
//! that crosses a tier boundary and compares against a dense oracle.

mod baseline;
mod dot;
mod exec;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analyzer::{analyze, TrafficCounts, TrafficMode};
use crate::error::{Error, Result};
use crate::hardware::{DeviceModel, Tier};
use crate::matrix::Matrix;
use crate::plan::{FusionPlan, PlanDocument};
use crate::scalar::Scalar;
use crate::workload::{silu, ChainGraph};

pub use baseline::unfused_baseline;
pub use dot::TileGraph;

/// Measured counters; same shape as the analyzer's prediction.
pub type TrafficTrace = TrafficCounts;

pub const DEFAULT_MEMORY_BUDGET: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn tolerance(self) -> f64 {
        match self {
            Dtype::F32 => f32::TOLERANCE,
            Dtype::F64 => f64::TOLERANCE,
        }
    }

    fn bytes(self) -> u64 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        })
    }
}

impl FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Dtype> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Usage(format!("unknown dtype '{other}' (f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dtype: Dtype,
    pub seed: u64,
    /// Relative max-error bound; dtype default when unset.
    pub tolerance: Option<f64>,
    pub memory_budget: u64,
    /// Analyzer mode used for the parity check.
    pub mode: TrafficMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dtype: Dtype::F64,
            seed: 42,
            tolerance: None,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            mode: TrafficMode::ReuseAware,
        }
    }
}

impl SimConfig {
    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or_else(|| self.dtype.tolerance())
    }
}

/// Input matrices of a chain. `b1` is present for gated chains only.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInputs<T> {
    pub a: Matrix<T>,
    pub b0: Matrix<T>,
    pub b1: Option<Matrix<T>>,
    pub d: Matrix<T>,
}

impl<T: Scalar> ChainInputs<T> {
    /// Uniform [-1, 1] entries from `seed`; rows past `valid_m` are zero.
    pub fn random(graph: &ChainGraph, seed: u64) -> ChainInputs<T> {
        let d = graph.dims;
        let (m, n, k, l) = (d.m as usize, d.n as usize, d.k as usize, d.l as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let valid = graph.valid_m as usize;
        let a = Matrix::<f64>::random(m, k, &mut rng);
        let a = Matrix::from_fn(m, k, |r, c| if r < valid { a.get(r, c) } else { 0.0 });
        let b0 = Matrix::<f64>::random(k, n, &mut rng);
        let b1 = graph.is_gated().then(|| Matrix::<f64>::random(k, n, &mut rng));
        let dm = Matrix::<f64>::random(n, l, &mut rng);
        ChainInputs {
            a: a.cast(),
            b0: b0.cast(),
            b1: b1.map(|b| b.cast()),
            d: dm.cast(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ChainInputs<U> {
        ChainInputs {
            a: self.a.cast(),
            b0: self.b0.cast(),
            b1: self.b1.as_ref().map(|b| b.cast()),
            d: self.d.cast(),
        }
    }

    pub fn check(&self, graph: &ChainGraph) -> Result<()> {
        let d = graph.dims;
        let (m, n, k, l) = (d.m as usize, d.n as usize, d.k as usize, d.l as usize);
        let mut bad = Vec::new();
        let mut want = |name: &str, x: &Matrix<T>, r: usize, c: usize| {
            if (x.rows(), x.cols()) != (r, c) {
                bad.push(format!("{name} is {}x{}, expected {r}x{c}", x.rows(), x.cols()));
            }
        };
        want("A", &self.a, m, k);
        want(if graph.is_gated() { "B0" } else { "B" }, &self.b0, k, n);
        want("D", &self.d, n, l);
        match (&self.b1, graph.is_gated()) {
            (Some(b1), true) => want("B1", b1, k, n),
            (None, true) => bad.push("gated chain needs B1".into()),
            (Some(_), false) => bad.push("B1 given for a standard chain".into()),
            (None, false) => {}
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(bad.join("; ")))
        }
    }
}

/// Dense reference: `act(A·B)·D`, or `(SiLU(A·B0) ⊙ (A·B1))·D`.
pub fn oracle<T: Scalar>(graph: &ChainGraph, inputs: &ChainInputs<T>) -> Result<Matrix<T>> {
    inputs.check(graph)?;
    let g = inputs.a.matmul(&inputs.b0)?;
    let c = match &inputs.b1 {
        Some(b1) => g.zip_map(&inputs.a.matmul(b1)?, |x, y| silu(x) * y)?,
        None => g.map(|x| graph.activation.apply(x)),
    };
    c.matmul(&inputs.d)
}

/// Bytes of full-size tensors a numeric run holds.
pub fn memory_needed(graph: &ChainGraph, dtype: Dtype) -> u64 {
    let d = graph.dims;
    let b = if graph.is_gated() { 2 } else { 1 };
    // inputs, oracle intermediate(s), two outputs
    (d.m * d.k + b * d.k * d.n + d.n * d.l + (b + 1) * d.m * d.n + 2 * d.m * d.l) * dtype.bytes()
}

fn guard(graph: &ChainGraph, config: &SimConfig) -> Result<()> {
    let needed = memory_needed(graph, config.dtype);
    if needed > config.memory_budget {
        return Err(Error::SimulationTooLarge {
            needed,
            budget: config.memory_budget,
        });
    }
    Ok(())
}

/// Runs `plan` on `inputs`; returns the simulated output and the measured trace.
pub fn execute_plan<T: Scalar>(
    graph: &ChainGraph,
    device: &DeviceModel,
    plan: &FusionPlan,
    inputs: &ChainInputs<T>,
    config: &SimConfig,
) -> Result<(Matrix<T>, TrafficTrace)> {
    guard(graph, config)?;
    let out = exec::run(graph, device, plan, Some(inputs), None)?;
    Ok((out.e.expect("numeric run"), out.trace))
}

/// Traffic-only replay (no arithmetic, no memory guard).
pub fn simulate_traffic(graph: &ChainGraph, device: &DeviceModel, plan: &FusionPlan) -> Result<TrafficTrace> {
    Ok(exec::run::<f64>(graph, device, plan, None, None)?.trace)
}

/// Traffic-only replay that also records the first cluster's tile graph.
pub fn tile_graph(graph: &ChainGraph, device: &DeviceModel, plan: &FusionPlan) -> Result<(TileGraph, TrafficTrace)> {
    let mut g = TileGraph::default();
    let trace = exec::run::<f64>(graph, device, plan, None, Some(&mut g))?.trace;
    Ok((g, trace))
}

/// Block-steps of a replay: clusters x loop points x blocks.
pub fn traffic_work(graph: &ChainGraph, plan: &FusionPlan) -> Result<u64> {
    let geo = plan.geometry(&graph.dims)?;
    let points: u64 = geo.trips.to_array().iter().product();
    Ok(geo.clusters().saturating_mul(points).saturating_mul(plan.cluster.blocks()))
}

/// Upper bound on multiply-adds of a numeric replay.
pub fn numeric_work(graph: &ChainGraph, plan: &FusionPlan) -> Result<u64> {
    let b = plan.tiles.block;
    let branches = if plan.gated_lowering == crate::plan::GatedLowering::DoubledK { 2 } else { 1 };
    let per_step = branches * b.m * b.n * b.k + plan.cluster.cls_shuffle * b.m * b.n * b.l;
    Ok(traffic_work(graph, plan)?.saturating_mul(per_step))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierParity {
    pub tier: Tier,
    pub predicted: u64,
    pub measured: u64,
    pub delta: i128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub mode: TrafficMode,
    /// Only the reuse-aware mode promises equality.
    pub enforced: bool,
    pub equal: bool,
    pub tiers: Vec<TierParity>,
    pub predicted: TrafficCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub dtype: Dtype,
    pub seed: u64,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub numeric_pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parity: Option<ParityReport>,
    pub pass: bool,
    pub plan: PlanDocument,
    pub trace: TrafficTrace,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Oracle + replay (+ analyzer when `check_parity`).
pub fn verify(
    graph: &ChainGraph,
    device: &DeviceModel,
    plan: &FusionPlan,
    config: &SimConfig,
    check_parity: bool,
) -> Result<VerifyReport> {
    match config.dtype {
        Dtype::F32 => verify_as::<f32>(graph, device, plan, config, check_parity),
        Dtype::F64 => verify_as::<f64>(graph, device, plan, config, check_parity),
    }
}

fn verify_as<T: Scalar>(
    graph: &ChainGraph,
    device: &DeviceModel,
    plan: &FusionPlan,
    config: &SimConfig,
    check_parity: bool,
) -> Result<VerifyReport> {
    guard(graph, config)?;
    let inputs = ChainInputs::<T>::random(graph, config.seed);
    let (e, trace) = execute_plan(graph, device, plan, &inputs, config)?;
    // reference at f64 on the same (rounded) inputs
    let reference = oracle(graph, &inputs.cast::<f64>())?;
    let err = e.cast::<f64>().max_relative_error(&reference, graph.valid_m as usize)?;
    let tolerance = config.tolerance();
    let numeric_pass = err <= tolerance;
    let parity = if check_parity {
        let predicted = analyze(graph, device, plan, config.mode)?.traffic;
        let tiers: Vec<TierParity> = Tier::ALL
            .into_iter()
            .map(|t| {
                let (p, m) = (predicted.volume.get(t), trace.volume.get(t));
                TierParity {
                    tier: t,
                    predicted: p,
                    measured: m,
                    delta: p as i128 - m as i128,
                }
            })
            .collect();
        Some(ParityReport {
            mode: config.mode,
            enforced: config.mode == TrafficMode::ReuseAware,
            equal: tiers.iter().all(|t| t.delta == 0),
            tiers,
            predicted,
        })
    } else {
        None
    };
    let pass = numeric_pass && parity.as_ref().map_or(true, |p| p.equal || !p.enforced);
    Ok(VerifyReport {
        dtype: config.dtype,
        seed: config.seed,
        tolerance,
        max_relative_error: err,
        numeric_pass,
        parity,
        pass,
        plan: PlanDocument::from(plan),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{evaluate, unfused_traffic};
    use crate::plan::{ClusterConfig, GatedLowering, LoopSchedule};
    use crate::workload::{build_gated_ffn, build_standard_ffn, Activation, DimMap, DimensionSpec};

    fn dev() -> DeviceModel {
        DeviceModel::default_h100()
    }

    fn plan(s: &str, blk: u64, c: (u64, u64, u64, u64), low: GatedLowering) -> FusionPlan {
        FusionPlan::new(
            LoopSchedule::parse(s).unwrap(),
            DimMap::splat(blk),
            ClusterConfig::new(c.0, c.1, c.2, c.3).unwrap(),
            low,
        )
    }

    fn check(g: &ChainGraph, p: &FusionPlan) -> VerifyReport {
        let r = verify(g, &dev(), p, &SimConfig::default(), true).unwrap();
        let predicted = evaluate(g, &dev(), p, TrafficMode::ReuseAware).unwrap().traffic(g);
        assert_eq!(r.trace, predicted, "{p}");
        assert!(r.pass, "{p}: err {}", r.max_relative_error);
        r
    }

    #[test]
    fn oracle_identity_and_relu_kill() {
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 64, 64), Activation::Identity).unwrap();
        let i = Matrix::<f64>::identity(64);
        let inp = ChainInputs {
            a: i.clone(),
            b0: i.clone(),
            b1: None,
            d: i.clone(),
        };
        assert_eq!(oracle(&g, &inp).unwrap(), i);
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 64, 64), Activation::Relu).unwrap();
        let neg = ChainInputs {
            a: i.clone(),
            b0: i.map(|x| -x),
            b1: None,
            d: i,
        };
        assert_eq!(oracle(&g, &neg).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn oracle_cross_check() {
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 64, 64), Activation::Relu).unwrap();
        let inp = ChainInputs::<f64>::random(&g, 42);
        let e = oracle(&g, &inp).unwrap();
        for (r, c) in [(0, 0), (17, 40), (63, 63)] {
            let mut v = 0.0;
            for j in 0..64 {
                let mut s = 0.0;
                for k in 0..64 {
                    s += inp.a.get(r, k) * inp.b0.get(k, j);
                }
                v += s.max(0.0) * inp.d.get(j, c);
            }
            assert!((v - e.get(r, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_cluster_has_no_dsm() {
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 64, 64), Activation::Relu).unwrap();
        let r = check(&g, &plan("S=M;T=NLK", 32, (1, 1, 1, 1), GatedLowering::NotApplicable));
        assert_eq!(r.trace.volume.dsm, 0);
    }

    #[test]
    fn two_by_two_k_split_parity() {
        let g = build_standard_ffn(DimensionSpec::new(128, 512, 128, 512), Activation::Relu).unwrap();
        let r = check(&g, &plan("S=MNK;T=L", 64, (2, 4, 2, 4), GatedLowering::NotApplicable));
        assert!(r.trace.primitives.all_exchange > 0);
        assert!(r.trace.primitives.reduce_scatter > 0);
        assert!(r.trace.primitives.shuffle > 0);
    }

    #[test]
    fn schedules_and_clusters_agree() {
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 64, 128), Activation::Silu).unwrap();
        for s in ["S=M;T=NLK", "S=M;T=LNK", "S=MN;T=LK", "S=MK;T=NL", "S=L;T=MNK", "S=N;T=KML"] {
            for c in [(1, 1, 1, 1), (1, 2, 2, 4), (2, 2, 1, 1), (1, 1, 2, 2)] {
                let p = plan(s, 16, c, GatedLowering::NotApplicable);
                if evaluate(&g, &dev(), &p, TrafficMode::ReuseAware).is_err() {
                    continue;
                }
                let r = verify(&g, &dev(), &p, &SimConfig::default(), true).unwrap();
                assert!(r.parity.as_ref().unwrap().equal, "{p}");
                if !s.contains("KML") {
                    assert!(r.numeric_pass, "{p}");
                }
            }
        }
    }

    #[test]
    fn gated_lowerings_agree_numerically() {
        let g = build_gated_ffn(DimensionSpec::new(64, 64, 64, 64)).unwrap();
        let a = check(&g, &plan("S=MN;T=LK", 32, (1, 2, 2, 2), GatedLowering::SpatialSplit));
        let b = check(&g, &plan("S=MN;T=LK", 32, (1, 2, 2, 2), GatedLowering::DoubledK));
        assert_ne!(a.trace, b.trace);
        let b0 = b.trace.tensors["B0"].load;
        assert_eq!(b0, b.trace.tensors["B1"].load);
    }

    #[test]
    fn partial_k_with_relu_is_wrong() {
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 64, 64), Activation::Relu).unwrap();
        let p = plan("S=M;T=KNL", 16, (1, 1, 1, 1), GatedLowering::NotApplicable);
        let r = verify(&g, &dev(), &p, &SimConfig::default(), true).unwrap();
        assert!(!r.numeric_pass);
        assert!(r.parity.unwrap().equal);
    }

    #[test]
    fn identity_k_grid_uses_atomics() {
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 128, 64), Activation::Identity).unwrap();
        let p = plan("S=MK;T=NL", 32, (1, 1, 1, 1), GatedLowering::NotApplicable);
        let r = check(&g, &p);
        assert!(r.trace.primitives.inter_cluster_reduce > 0);
    }

    #[test]
    fn literal_mode_flags_but_does_not_fail() {
        let g = build_standard_ffn(DimensionSpec::new(64, 64, 64, 64), Activation::Relu).unwrap();
        let p = plan("S=M;T=NLK", 16, (1, 1, 1, 1), GatedLowering::NotApplicable);
        let cfg = SimConfig {
            mode: TrafficMode::LiteralAlg1,
            ..Default::default()
        };
        let r = verify(&g, &dev(), &p, &cfg, true).unwrap();
        let par = r.parity.unwrap();
        assert!(!par.enforced);
        assert!(r.pass);
    }

    #[test]
    fn baseline_matches_closed_form_and_oracle() {
        let g = build_standard_ffn(DimensionSpec::new(256, 64, 32, 48), Activation::Relu).unwrap();
        let inp = ChainInputs::<f64>::random(&g, 1);
        let (e, t) = unfused_baseline(&g, &inp).unwrap();
        assert_eq!(t, unfused_traffic(&g));
        let c = &t.tensors["C"];
        assert_eq!(c.load + c.store, 2 * 256 * 64 * 2);
        let err = e.max_relative_error(&oracle(&g, &inp).unwrap(), 256).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn guardrail_and_shape_errors() {
        let g = build_standard_ffn(DimensionSpec::new(4096, 16384, 4096, 4096), Activation::Relu).unwrap();
        let p = plan("S=M;T=NLK", 16, (1, 1, 1, 1), GatedLowering::NotApplicable);
        assert!(matches!(
            verify(&g, &dev(), &p, &SimConfig::default(), false),
            Err(Error::SimulationTooLarge { .. })
        ));
        let small = build_standard_ffn(DimensionSpec::new(64, 64, 64, 64), Activation::Relu).unwrap();
        let inp = ChainInputs::<f64>::random(&small, 0);
        let g2 = build_standard_ffn(DimensionSpec::new(64, 32, 64, 64), Activation::Relu).unwrap();
        assert!(matches!(oracle(&g2, &inp), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn tile_graph_weights_match_trace() {
        let g = build_standard_ffn(DimensionSpec::new(32, 128, 64, 128), Activation::Relu).unwrap();
        let p = plan("S=M;T=NLK", 32, (1, 2, 2, 2), GatedLowering::NotApplicable);
        let (tg, trace) = tile_graph(&g, &dev(), &p).unwrap();
        assert_eq!(tg.bytes_of("all_exchange"), trace.primitives.all_exchange);
        assert!(tg.to_dot("x").starts_with("digraph"));
    }
}
