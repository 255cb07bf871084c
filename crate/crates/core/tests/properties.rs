use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ufhlab::evolution::{CacheEvent, EvolutionConfig, Search, Technique};
use ufhlab::metrics::{auc, Sample, TimeCourse};
use ufhlab::scheduler::{self, CostModel};
use ufhlab::space::{EvalConfig, GraphProblem, GraphSpace, Problem, ProgramProblem, ProgramSpace, TaskKind, TaskSpec};
use ufhlab::ufh::{decompose_float, HashConfig};

fn staircase(steps: &[(f64, f64)], horizon: f64) -> TimeCourse {
    let mut tc = TimeCourse { horizon, ..TimeCourse::default() };
    let (mut t, mut best) = (0.0, 0.0f64);
    for &(dt, f) in steps {
        t += dt;
        best = best.max(f);
        tc.push(Sample {
            time: t,
            step: 0,
            index: 0,
            fitness: f,
            best_fitness: best,
            population_best: f,
            event: CacheEvent::Evaluated,
            hash: None,
            evaluations: 1,
        });
    }
    tc
}

proptest! {
    #[test]
    fn auc_bounded_and_monotone(
        steps in prop::collection::vec((0.0..10.0f64, 0.0..1.0f64), 1..40),
        lift in 0.0..0.5f64,
        extra in 0.1..50.0f64,
    ) {
        let horizon = steps.iter().map(|s| s.0).sum::<f64>() + extra;
        let low = staircase(&steps, horizon);
        let high_steps: Vec<_> = steps.iter().map(|&(dt, f)| (dt, (f + lift).min(1.0))).collect();
        let high = staircase(&high_steps, horizon);
        let (a, b) = (auc(&low).unwrap(), auc(&high).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn decompose_matches_bit_fields(bits in any::<u64>(), m in 0u32..=52) {
        let x = f64::from_bits(bits);
        prop_assume!(!x.is_nan());
        let fp = decompose_float(x, m);
        prop_assert_eq!(fp.sign, bits >> 63);
        prop_assert_eq!(fp.exponent, (bits >> 52) & 0x7FF);
        let kept = if m == 0 { 0 } else { (bits & ((1u64 << 52) - 1)) >> (52 - m) };
        prop_assert_eq!(fp.mantissa, kept);
    }

    #[test]
    fn program_rewrites_hash_equal(seed in any::<u64>()) {
        let p = ProgramProblem::new(ProgramSpace::default(), TaskSpec::default(), EvalConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = p.random_candidate(&mut rng);
        let cfg = HashConfig { m_bits: 52, ..HashConfig::default() };
        prop_assert_eq!(p.functional_hash(&c, &cfg), p.functional_hash(&c, &cfg));
        if let Ok(r) = p.space.equivalent_rewrite(&c, &mut rng) {
            prop_assert_eq!(p.functional_hash(&c, &cfg), p.functional_hash(&r, &cfg));
            prop_assert_eq!(p.true_fitness(&c).to_bits(), p.true_fitness(&r).to_bits());
        }
    }

    #[test]
    fn graph_rewrites_hash_equal(seed in any::<u64>()) {
        let task = TaskSpec { kind: TaskKind::NonlinearRegression, ..TaskSpec::default() };
        let p = GraphProblem::new(GraphSpace::default(), task, EvalConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = p.random_candidate(&mut rng);
        if let Ok(r) = p.space.equivalent_rewrite(&c, &mut rng) {
            let cfg = HashConfig { m_bits: 52, ..HashConfig::default() };
            prop_assert_eq!(p.functional_hash(&c, &cfg), p.functional_hash(&r, &cfg));
        }
    }

    #[test]
    fn candidates_round_trip_through_json(seed in any::<u64>()) {
        let p = ProgramProblem::new(ProgramSpace::default(), TaskSpec::default(), EvalConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = p.random_candidate(&mut rng);
        let back = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(c, back);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hit_and_miss_fractions_sum_to_one(seed in any::<u64>(), fea in any::<bool>()) {
        let p = ProgramProblem::new(ProgramSpace::default(), TaskSpec::default(), EvalConfig::default());
        let technique = if fea { Technique::Fea { max_evals: 3 } } else { Technique::Fec };
        let mut s = Search::new(&p, EvolutionConfig::new(10, 3, 150, technique), HashConfig::default(), seed);
        let tc = scheduler::run_serial(&mut s, &CostModel::default(), None);
        let st = s.stats();
        let hit = st.hit_fraction();
        let miss = st.misses as f64 / (st.hits + st.misses) as f64;
        prop_assert!((hit + miss - 1.0).abs() < 1e-12);
        prop_assert_eq!(tc.samples.len(), 150);
        prop_assert!(tc.samples.windows(2).all(|w| w[0].time <= w[1].time));
    }
}
