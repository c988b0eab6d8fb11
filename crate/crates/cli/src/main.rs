use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clusterfuse::analyzer::{self, TrafficMode};
use clusterfuse::hardware::resolve_device;
use clusterfuse::plan::{plan_from_json, PlanDocument};
use clusterfuse::search::{self, cost, RuleSet, SearchConfig, SearchResult};
use clusterfuse::simulator::{self, Dtype, SimConfig, DEFAULT_MEMORY_BUDGET};
use clusterfuse::workload::{
    build_gated_ffn, build_standard_ffn, parse_workload, preset, preset_catalog, WorkloadInfo,
};
use clusterfuse::{
    Activation, ChainGraph, ClusterConfig, DeviceModel, DimMap, DimensionSpec, Error, FusionPlan, GatedLowering,
    LoopSchedule,
};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "clusterfuse", version, about = "Cluster-aware fusion planner for two-GEMM chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the built-in workload presets.
    ListPresets(OutArgs),
    /// Prune, cost and rank fusion plans.
    Search(SearchArgs),
    /// Count the plan space after each pruning rule.
    CountSpace(CountArgs),
    /// Analytical traffic and cost of one plan.
    Analyze(PlanCmdArgs),
    /// Replay a plan on random matrices and check it.
    Simulate(SimulateArgs),
    /// Write the executed tile graph of one cluster as Graphviz DOT.
    ExportDot(PlanCmdArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct WorkloadArgs {
    /// Preset id (see list-presets).
    #[arg(long, conflicts_with_all = ["dims", "workload"])]
    preset: Option<String>,
    /// Extents in m,n,k,l order.
    #[arg(long, value_parser = parse_dims, conflicts_with = "workload")]
    dims: Option<[u64; 4]>,
    /// Key-value workload file.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// With --dims: build the gated (SiLU-gated) chain.
    #[arg(long, requires = "dims")]
    gated: bool,
    /// With --dims: activation between the GEMMs.
    #[arg(long, requires = "dims")]
    activation: Option<Activation>,
    /// With --dims: bytes per element.
    #[arg(long, requires = "dims")]
    element_size: Option<u64>,
}

#[derive(Args, Debug)]
struct DeviceArgs {
    /// `h100` or a device profile path.
    #[arg(long, default_value = "h100")]
    device: String,
    /// Trip-count traffic model instead of the schedule-aware one.
    #[arg(long)]
    literal_alg1: bool,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, default_value_t = search::DEFAULT_TOP_K)]
    top_k: usize,
    /// Active pruning rules, e.g. 1,2,3,4,5.
    #[arg(long, default_value = "1,2,3,4,5")]
    rules: String,
    /// Apply the activation rule to identity chains as well.
    #[arg(long)]
    strict_identity: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Simulated block-steps allowed for re-ranking.
    #[arg(long, default_value_t = 20_000_000)]
    rerank_budget: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value = "h100")]
    device: String,
    #[arg(long, default_value = "0,1,2,3,4,5")]
    rules: String,
    #[arg(long)]
    strict_identity: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Plan file: `plans.json#IDX` for a search result, or a plan document.
    #[arg(long, conflicts_with = "schedule")]
    plan: Option<String>,
    /// Inline plan schedule, e.g. `S=MN;T=LK`.
    #[arg(long, requires_all = ["block"])]
    schedule: Option<String>,
    /// Inline block tile m,n,k,l.
    #[arg(long, value_parser = parse_dims)]
    block: Option<[u64; 4]>,
    /// Inline cluster shape m,n,k,l.
    #[arg(long, value_parser = parse_dims)]
    cluster: Option<[u64; 4]>,
    /// Gated lowering: spatial_split or doubled_k.
    #[arg(long)]
    lowering: Option<String>,
}

#[derive(Args, Debug)]
struct PlanCmdArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    device: DeviceArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: PlanCmdArgs,
    #[arg(long, default_value = "f64")]
    dtype: Dtype,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Relative error bound (dtype default otherwise).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Fail unless the result matches the reference within tolerance.
    #[arg(long)]
    check_oracle: bool,
    /// Fail unless measured bytes equal the analyzer's prediction.
    #[arg(long)]
    check_traffic: bool,
    /// Also write the executed tile graph (DOT) here.
    #[arg(long)]
    dump_tilegraph: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET)]
    memory_budget: u64,
}

fn parse_dims(s: &str) -> Result<[u64; 4], String> {
    let parts: Vec<_> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 comma-separated values, got '{s}'"));
    }
    let mut out = [0u64; 4];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("'{p}' is not a non-negative integer"))?;
    }
    Ok(out)
}

/// Failures, split by exit code.
enum Failure {
    Usage(String),
    Domain(Error),
    /// A requested check did not hold; the report was already written.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(_)
            | Error::Parse { .. }
            | Error::UnknownPreset(_)
            | Error::Json(_)
            | Error::InvalidDimension { .. }
            | Error::InvalidProfile(_) => Failure::Usage(e.to_string()),
            other => Failure::Domain(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidPlan(_) => "invalid_plan",
        Error::CapacityExceeded { .. } => "capacity_exceeded",
        Error::ClusterTooLarge { .. } => "cluster_too_large",
        Error::InfeasibleCluster { .. } => "infeasible_cluster",
        Error::EmptySpace { .. } => "empty_space",
        Error::SimulationTooLarge { .. } => "simulation_too_large",
        Error::UnsupportedConvChain(_) => "unsupported_conv_chain",
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::WrongTensorClass(_) => "wrong_tensor_class",
        _ => "error",
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, body: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, format!("{body}\n")).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            stdout(&format!("{body}\n"));
            Ok(())
        }
    }
}

/// Like `print!`, but a closed pipe is not an error.
fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

impl WorkloadArgs {
    fn given(&self) -> bool {
        self.preset.is_some() || self.dims.is_some() || self.workload.is_some()
    }

    fn graph(&self) -> CliResult<ChainGraph> {
        if let Some(id) = &self.preset {
            return Ok(preset(id)?);
        }
        if let Some(path) = &self.workload {
            return Ok(parse_workload(&read(path)?)?);
        }
        let Some([m, n, k, l]) = self.dims else {
            return Err(Failure::Usage("a workload is required: --preset, --dims or --workload".into()));
        };
        let mut dims = DimensionSpec::new(m, n, k, l);
        if let Some(es) = self.element_size {
            dims = dims.with_element_size(es);
        }
        if self.gated {
            if self.activation.is_some() {
                return Err(Failure::Usage("--activation does not apply to gated chains".into()));
            }
            Ok(build_gated_ffn(dims)?)
        } else {
            Ok(build_standard_ffn(dims, self.activation.unwrap_or(Activation::Relu))?)
        }
    }
}

impl DeviceArgs {
    fn mode(&self) -> TrafficMode {
        if self.literal_alg1 {
            TrafficMode::LiteralAlg1
        } else {
            TrafficMode::ReuseAware
        }
    }
}

fn parse_lowering(s: &str) -> CliResult<GatedLowering> {
    serde_json::from_value(Value::String(s.replace('-', "_").to_ascii_lowercase()))
        .map_err(|_| Failure::Usage(format!("unknown lowering '{s}'")))
}

/// Resolves the plan and, when the plan came from a search result and no
/// workload flag was given, the workload stored alongside it.
fn load_plan(args: &PlanArgs, workload: &WorkloadArgs) -> CliResult<(FusionPlan, ChainGraph)> {
    if let Some(schedule) = &args.schedule {
        let graph = workload.graph()?;
        let block = args.block.expect("clap enforces --block");
        let [cm, cn, ck, cl] = args.cluster.unwrap_or([1; 4]);
        let lowering = match &args.lowering {
            Some(s) => parse_lowering(s)?,
            None => GatedLowering::candidates(&graph)[0],
        };
        let plan = FusionPlan::new(
            LoopSchedule::parse(schedule)?,
            DimMap::new(block[0], block[1], block[2], block[3]),
            ClusterConfig::new(cm, cn, ck, cl)?,
            lowering,
        );
        return Ok((plan, graph));
    }
    let Some(spec) = &args.plan else {
        return Err(Failure::Usage("a plan is required: --plan FILE[#IDX] or --schedule/--block".into()));
    };
    let (path, idx) = match spec.rsplit_once('#') {
        Some((p, i)) => {
            let i = i.parse::<usize>().map_err(|_| Failure::Usage(format!("bad plan index in '{spec}'")))?;
            (p, Some(i))
        }
        None => (spec.as_str(), None),
    };
    let text = read(Path::new(path))?;
    let value: Value = serde_json::from_str(&text).map_err(Error::from)?;
    if value.get("plans").is_some() {
        let result: SearchResult = serde_json::from_value(value).map_err(Error::from)?;
        let plan = result.plan(idx.unwrap_or(0))?;
        let graph = if workload.given() { workload.graph()? } else { result.workload.to_graph()? };
        Ok((plan, graph))
    } else {
        if idx.is_some_and(|i| i != 0) {
            return Err(Failure::Usage(format!("{path} holds a single plan")));
        }
        Ok((plan_from_json(&text)?, workload.graph()?))
    }
}

fn rules_from(text: &str, strict: bool) -> CliResult<RuleSet> {
    let mut rules = RuleSet::parse(text)?;
    rules.strict_identity = strict;
    Ok(rules)
}

fn device_of(spec: &str) -> CliResult<DeviceModel> {
    Ok(resolve_device(spec)?)
}

fn list_presets(args: OutArgs) -> CliResult<()> {
    let catalog = preset_catalog();
    for p in &catalog {
        eprintln!("{:<4} {:<13} {:<16} {}x{}x{}x{}", p.id, p.kind, p.model, p.m, p.n, p.k, p.l);
    }
    emit(args.out.as_deref(), &pretty(&json!({ "presets": catalog })))
}

fn run_search(args: SearchArgs) -> CliResult<()> {
    let graph = args.workload.graph()?;
    let device = device_of(&args.device.device)?;
    let config = SearchConfig {
        top_k: args.top_k,
        rules: rules_from(&args.rules, args.strict_identity)?,
        mode: args.device.mode(),
        threads: args.threads,
        rerank_budget: args.rerank_budget,
    };
    let result = search::search(&graph, &device, &config)?;
    for s in &result.space.stages {
        eprintln!("{:<9} {:>28}", s.stage, s.count);
    }
    eprintln!("rerank: {} (work {}, budget {})", result.rerank.status, result.rerank.work, result.rerank.budget);
    for p in &result.plans {
        eprintln!(
            "#{:<2} {:.3e}s {:<6} {}",
            p.rank,
            p.cost.total,
            p.cost.bottleneck.name(),
            p.plan.clone().into_plan().map(|pl| pl.label()).unwrap_or_default()
        );
    }
    emit(args.out.as_deref(), &result.to_json())
}

fn count_space(args: CountArgs) -> CliResult<()> {
    let graph = args.workload.graph()?;
    let device = device_of(&args.device)?;
    let rules = rules_from(&args.rules, args.strict_identity)?;
    let report = search::count_space_with(&graph, &device, &rules, args.threads)?;
    for s in &report.stages {
        let kept = s.kept_fraction.map(|f| format!("x{f:.3e}")).unwrap_or_default();
        eprintln!("{:<9} {:>28} {kept}", s.stage, s.count);
    }
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report).map_err(Error::from)?)
}

fn analyze(args: PlanCmdArgs) -> CliResult<()> {
    let (plan, graph) = load_plan(&args.plan, &args.workload)?;
    let device = device_of(&args.device.device)?;
    let analysis = analyzer::analyze(&graph, &device, &plan, args.device.mode())?;
    let breakdown = cost(&analysis.volume, &device, plan.cluster.blocks())?;
    let v = analysis.volume;
    eprintln!("{}", plan.label());
    eprintln!(
        "bytes: global {} dsm {} smem {} reg {}; cost {:.3e}s ({})",
        v.global,
        v.dsm,
        v.smem,
        v.reg,
        breakdown.total,
        breakdown.bottleneck.name()
    );
    let body = json!({
        "workload": WorkloadInfo::of(&graph),
        "device": device.name,
        "volume": analysis.volume,
        "primitives": analysis.evaluation.primitives,
        "cost": breakdown,
        "unfused": analyzer::unfused_traffic(&graph),
        "report": analysis.report(&device),
    });
    emit(args.out.as_deref(), &pretty(&body))
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let common = &args.common;
    let (plan, graph) = load_plan(&common.plan, &common.workload)?;
    let device = device_of(&common.device.device)?;
    let config = SimConfig {
        dtype: args.dtype,
        seed: args.seed,
        tolerance: args.tolerance,
        memory_budget: args.memory_budget,
        mode: common.device.mode(),
    };
    let report = simulator::verify(&graph, &device, &plan, &config, args.check_traffic)?;
    if let Some(path) = &args.dump_tilegraph {
        let (tiles, _) = simulator::tile_graph(&graph, &device, &plan)?;
        fs::write(path, tiles.to_dot(&plan.label())).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    eprintln!(
        "{}: max relative error {:.3e} (tol {:.1e}) {}",
        plan.label(),
        report.max_relative_error,
        report.tolerance,
        if report.numeric_pass { "ok" } else { "MISMATCH" }
    );
    let mut failed = Vec::new();
    if args.check_oracle && !report.numeric_pass {
        failed.push("oracle");
    }
    if let Some(p) = &report.parity {
        for t in p.tiers.iter().filter(|t| t.delta != 0) {
            eprintln!("  {} predicted {} measured {}", t.tier.name(), t.predicted, t.measured);
        }
        eprintln!("traffic parity: {}{}", if p.equal { "equal" } else { "differs" }, if p.enforced { "" } else { " (not enforced)" });
        if p.enforced && !p.equal {
            failed.push("traffic");
        }
    }
    emit(common.out.as_deref(), &report.to_json())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("check failed: {}", failed.join(", "))))
    }
}

fn export_dot(args: PlanCmdArgs) -> CliResult<()> {
    let (plan, graph) = load_plan(&args.plan, &args.workload)?;
    let device = device_of(&args.device.device)?;
    let (tiles, trace) = simulator::tile_graph(&graph, &device, &plan)?;
    let dot = tiles.to_dot(&plan.label());
    let mut bytes = serde_json::Map::new();
    for ((_, _, kind), b) in &tiles.edges {
        let e = bytes.entry(kind.clone()).or_insert(json!(0u64));
        *e = json!(e.as_u64().unwrap_or(0) + b);
    }
    let summary = json!({
        "plan": PlanDocument::from(&plan),
        "nodes": tiles.nodes.len(),
        "edges": tiles.edges.len(),
        "bytes_by_kind": bytes,
        "volume": trace.volume,
    });
    eprintln!("{} nodes, {} edges", tiles.nodes.len(), tiles.edges.len());
    match &args.out {
        Some(path) => {
            fs::write(path, &dot).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            stdout(&format!("{}\n", pretty(&summary)));
        }
        None => stdout(&dot),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::ListPresets(a) => list_presets(a),
        Command::Search(a) => run_search(a),
        Command::CountSpace(a) => count_space(a),
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::ExportDot(a) => export_dot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `clusterfuse --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            stdout(&format!("{}\n", pretty(&json!({ "error": { "kind": error_kind(&e), "message": e.to_string() } }))));
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}
