use clusterfuse::analyzer::{analyze, TrafficMode};
use clusterfuse::plan::{enumerate_schedules, plan_from_json, plan_to_json};
use clusterfuse::search::{first_violation, sample_surviving, Candidate, RuleSet};
use clusterfuse::simulator::{simulate_traffic, verify, Dtype, SimConfig};
use clusterfuse::workload::{build_gated_ffn, build_standard_ffn};
use clusterfuse::{Activation, ChainGraph, DeviceModel, DimensionSpec, LoopSchedule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_graph() -> impl Strategy<Value = ChainGraph> {
    let ext = prop::sample::select(vec![16u64, 32, 48, 64, 96, 128]);
    let act = prop::sample::select(vec![Activation::Identity, Activation::Relu, Activation::Silu]);
    (ext.clone(), ext.clone(), ext.clone(), ext, act, any::<bool>()).prop_map(|(m, n, k, l, act, gated)| {
        let dims = DimensionSpec::new(m, n, k, l);
        if gated {
            build_gated_ffn(dims).unwrap()
        } else {
            build_standard_ffn(dims, act).unwrap()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn surviving_plans_replay_exactly(graph in small_graph(), seed in any::<u64>()) {
        let device = DeviceModel::default_h100();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plans = sample_surviving(&graph, &device, &RuleSet::all(), 2, &mut rng, 10_000, |_| true);
        prop_assert!(!plans.is_empty());
        for plan in plans {
            let config = SimConfig { dtype: Dtype::F64, seed, ..SimConfig::default() };
            let report = verify(&graph, &device, &plan, &config, true).unwrap();
            prop_assert!(report.numeric_pass, "{} err {}", plan.label(), report.max_relative_error);
            prop_assert!(report.parity.unwrap().equal, "{}", plan.label());
        }
    }

    #[test]
    fn global_bytes_cover_compulsory_io(graph in small_graph(), seed in any::<u64>()) {
        let device = DeviceModel::default_h100();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = graph.dims;
        let weights = if graph.is_gated() { 2 * d.k * d.n } else { d.k * d.n };
        let compulsory = (d.m * d.k + weights + d.n * d.l + d.m * d.l) * d.element_size;
        for plan in sample_surviving(&graph, &device, &RuleSet::all(), 4, &mut rng, 10_000, |_| true) {
            let a = analyze(&graph, &device, &plan, TrafficMode::ReuseAware).unwrap();
            prop_assert!(a.volume.global >= compulsory, "{} < {}", a.volume.global, compulsory);
            // measured trace agrees without numerics too
            prop_assert_eq!(simulate_traffic(&graph, &device, &plan).unwrap().volume, a.volume);
        }
    }

    #[test]
    fn accepted_candidates_always_analyze(graph in small_graph(), seed in any::<u64>()) {
        let device = DeviceModel::default_h100();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let c = Candidate::random(&graph, &device, &mut rng);
            if first_violation(&c, &graph, &device, &RuleSet::all()).is_none() {
                let plan = c.to_plan().unwrap();
                prop_assert!(analyze(&graph, &device, &plan, TrafficMode::ReuseAware).is_ok());
                prop_assert_eq!(plan_from_json(&plan_to_json(&plan)).unwrap(), plan);
            }
        }
    }

    #[test]
    fn schedule_text_round_trips(idx in 0usize..41) {
        let s = &enumerate_schedules(4)[idx];
        prop_assert_eq!(&LoopSchedule::parse(&s.encoding()).unwrap(), s);
    }
}
