use proptest::prelude::*;

use forge_core::dataset::{rules_key, rules_rank_keys, RulesKey};
use forge_core::lang::mutate::{crossover, mutate, restart};
use forge_core::lang::{eval_reward, parse_program, print_program, seed_program, EvalContext, Limits};
use forge_core::policy::{PolicyParams, TrainConfig};
use forge_core::rng;
use forge_core::screen::{cumulative_rewards, reward_rank};
use forge_core::sim::controllers::{OrcaRobot, StraightLine};
use forge_core::sim::{generate_scenario, orca_velocity, run_episode, Agent, Episode, RobotPolicy, Scenario, Status, WorkspaceConfig};
use forge_core::stats::{descending_ranks, spearman, RankVector};
use forge_core::Vec2;

fn small_env(humans: usize) -> WorkspaceConfig {
    WorkspaceConfig { human_count: humans, horizon: 80, ..WorkspaceConfig::default() }
}

fn roll(sc: &Scenario, cfg: &WorkspaceConfig, orca: bool, seed: u64) -> Episode {
    let mut r = rng::stream(seed, "prop", &[]);
    let mut straight = StraightLine;
    let mut o = OrcaRobot::default();
    let p: &mut dyn RobotPolicy = if orca { &mut o } else { &mut straight };
    run_episode(sc, p, None, cfg, &mut r).unwrap()
}

fn rank_sum_ok(r: &RankVector) -> bool {
    let n = r.len() as f64;
    (r.0.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn episodes_respect_physics(seed in 0u64..10_000, humans in 0usize..8, orca in any::<bool>()) {
        let cfg = small_env(humans);
        let sc = generate_scenario(&cfg, seed, 0).unwrap();
        let ep = roll(&sc, &cfg, orca, seed);
        // Determinism.
        prop_assert_eq!(&ep, &roll(&sc, &cfg, orca, seed));
        // Exactly one terminal status, on the last frame only.
        let terminal: Vec<usize> = ep.frames.iter().enumerate().filter(|(_, f)| f.status.is_terminal()).map(|(i, _)| i).collect();
        prop_assert_eq!(terminal, vec![ep.len() - 1]);
        prop_assert_eq!(ep.outcome, ep.last().status);
        for w in ep.frames.windows(2) {
            prop_assert!(w[0].robot.pos.dist(w[1].robot.pos) <= cfg.v_max * cfg.dt + 1e-9);
        }
        for f in &ep.frames {
            for h in &f.all_humans {
                prop_assert!(h.vel.norm() <= h.pref_speed + 1e-9);
            }
            if f.status == Status::Running {
                for h in &f.all_humans {
                    prop_assert!(h.pos.dist(f.robot.pos) > f.robot.radius + h.radius);
                }
            }
        }
    }

    #[test]
    fn orca_pair_symmetry(px in -4.0f64..4.0, py in -4.0f64..4.0, vx in -1.0f64..1.0, vy in -1.0f64..1.0, gx in -6.0f64..6.0, gy in -6.0f64..6.0, r in 0.2f64..0.5) {
        // The pair is symmetric under the half-turn about the origin.
        prop_assume!(px.hypot(py) > r + 0.05);
        let a = Agent { pos: Vec2::new(px, py), vel: Vec2::new(vx, vy), radius: r, goal: Vec2::new(gx, gy), pref_speed: 1.0 };
        let b = Agent { pos: Vec2::new(-px, -py), vel: Vec2::new(-vx, -vy), radius: r, goal: Vec2::new(-gx, -gy), pref_speed: 1.0 };
        let va = orca_velocity(&a, std::slice::from_ref(&b), 5.0, 0.25);
        let vb = orca_velocity(&b, std::slice::from_ref(&a), 5.0, 0.25);
        prop_assert!((va + vb).norm() < 1e-9, "{:?} {:?}", va, vb);
    }

    #[test]
    fn programs_are_total_and_roundtrip(seed in 0u64..100_000, world in 0u64..1000, humans in 0usize..6) {
        let mut r = rng::stream(seed, "prop-programs", &[]);
        let a = mutate(&seed_program(), &mut r);
        let b = restart(&mut r);
        let p = crossover(&a, &b, &mut r);
        let cfg = small_env(humans);
        let sc = generate_scenario(&cfg, world, 0).unwrap();
        let ep = roll(&sc, &cfg, true, world);
        let positions = ep.positions();
        for prog in [&a, &b, &p] {
            let text = print_program(prog.ast());
            let again = parse_program(&text, Limits::default()).unwrap();
            prop_assert_eq!(again.ast(), prog.ast());
            for (t, f) in ep.frames.iter().enumerate() {
                let ctx = EvalContext::new(f, &sc, &positions[..=t], &cfg);
                let x = eval_reward(prog, &ctx).unwrap();
                prop_assert!(x.is_finite());
                prop_assert_eq!(x.to_bits(), eval_reward(prog, &ctx).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn rules_ranking_classes_dominate(world in 0u64..500, f in 0usize..60) {
        let cfg = small_env(4);
        let sc = generate_scenario(&cfg, world, 0).unwrap();
        let eps: Vec<Episode> = (0..4).map(|i| roll(&sc, &cfg, i % 2 == 0, world + i)).collect();
        let keys: Vec<RulesKey> = eps.iter().map(|e| rules_key(&sc, e, f)).collect();
        let ranks = rules_rank_keys(&keys);
        prop_assert!(rank_sum_ok(&ranks));
        for i in 0..keys.len() {
            for j in 0..keys.len() {
                if keys[i].class() > keys[j].class() {
                    prop_assert!(ranks.0[i] < ranks.0[j]);
                }
            }
            // Success and collision are absorbing.
            prop_assert!(rules_key(&sc, &eps[i], f + 1).class() == keys[i].class() || keys[i].class() == 1);
        }
    }

    #[test]
    fn spearman_symmetric_and_self_one(a in prop::collection::vec(-5i32..5, 2..12), b_seed in any::<u64>()) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let mut r = rng::stream(b_seed, "prop-b", &[]);
        use rand::Rng;
        let b: Vec<f64> = (0..a.len()).map(|_| f64::from(r.random_range(-5i32..5))).collect();
        prop_assert_eq!(spearman(&a, &b).unwrap(), spearman(&b, &a).unwrap());
        if a.iter().any(|x| *x != a[0]) {
            prop_assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
        let ra = descending_ranks(&a);
        prop_assert!(rank_sum_ok(&ra));
    }

    #[test]
    fn reward_rank_ignores_positive_affine_maps(world in 0u64..300, scale in 0.1f64..10.0, shift in -5.0f64..5.0, f in 0usize..40) {
        let cfg = small_env(3);
        let sc = generate_scenario(&cfg, world, 0).unwrap();
        let eps: Vec<Episode> = (0..4).map(|i| roll(&sc, &cfg, i % 2 == 0, world * 7 + i)).collect();
        let p = seed_program();
        let base = reward_rank(&p, &sc, &eps, f, &cfg).unwrap();
        let sums: Vec<f64> = eps.iter().map(|e| scale * cumulative_rewards(&p, &sc, e, f, &cfg).unwrap()[f] + shift).collect();
        let mapped = descending_ranks(&sums);
        prop_assert_eq!(base, mapped);
    }

    #[test]
    fn policy_mean_is_feasible(seed in any::<u64>(), hidden in 1usize..12, scale in 0.1f64..50.0) {
        let tc = TrainConfig::proxy(10, seed);
        let cfg = small_env(3);
        let input = forge_core::policy::feature_dim(tc.k_nearest);
        let mut r = rng::stream(seed, "prop-params", &[]);
        let mut p = PolicyParams::<f64>::init(input, hidden, cfg.v_max, &mut r);
        p.data.iter_mut().for_each(|x| *x *= scale);
        let sc = generate_scenario(&cfg, seed % 1000, 0).unwrap();
        let ep = roll(&sc, &cfg, true, seed);
        for f in &ep.frames {
            let x = forge_core::policy::extract_features::<f64>(f, tc.k_nearest, &cfg);
            let out = p.forward(&x);
            prop_assert!(out.mean.norm() <= cfg.v_max + 1e-12);
        }
    }
}
