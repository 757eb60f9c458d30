use rand::Rng;

use super::*;
use crate::lang::seed_program;
use crate::rng;
use crate::sim::{Agent, Frame, Status, WorkspaceConfig};
use crate::Vec2;

fn frame_with(humans: Vec<Agent>, robot: Agent) -> Frame {
    Frame::observe(0, robot, humans, Status::Running, &WorkspaceConfig::default())
}

fn robot_at(x: f64, y: f64, goal: (f64, f64)) -> Agent {
    Agent::at_rest(Vec2::new(x, y), Vec2::new(goal.0, goal.1), 0.3, 1.0)
}

#[test]
fn sentinel_padding_without_humans() {
    let cfg = WorkspaceConfig::default();
    let f = frame_with(vec![], robot_at(1.0, 1.0, (4.0, 5.0)));
    let x: Vec<f64> = extract_features(&f, 5, &cfg);
    assert_eq!(x.len(), 30);
    assert_eq!(&x[..5], &[3.0, 4.0, 5.0, 0.0, 0.0]);
    for b in 0..5 {
        assert_eq!(&x[5 + 5 * b..10 + 5 * b], &[0.0, 0.0, 0.0, 0.0, 5.0]);
    }
}

#[test]
fn robot_at_goal_has_zero_goal_block() {
    let cfg = WorkspaceConfig::default();
    let f = frame_with(vec![], robot_at(2.0, 2.0, (2.0, 2.0)));
    let x: Vec<f32> = extract_features(&f, 2, &cfg);
    assert_eq!(&x[..3], &[0.0, 0.0, 0.0]);
}

#[test]
fn humans_sorted_by_distance_with_hand_layout() {
    let cfg = WorkspaceConfig::default();
    let mut robot = robot_at(0.0, 0.0, (6.0, 0.0));
    robot.vel = Vec2::new(0.5, 0.0);
    let mut far = Agent::at_rest(Vec2::new(0.0, 3.0), Vec2::zero(), 0.4, 1.0);
    far.vel = Vec2::new(0.0, -1.0);
    let near = Agent::at_rest(Vec2::new(-1.0, 0.0), Vec2::zero(), 0.3, 1.0);
    let out_of_range = Agent::at_rest(Vec2::new(9.0, 0.0), Vec2::zero(), 0.3, 1.0);
    let f = frame_with(vec![far, out_of_range, near], robot);
    let x: Vec<f64> = extract_features(&f, 3, &cfg);
    let expected = [
        6.0, 0.0, 6.0, 0.5, 0.0, // robot
        -1.0, 0.0, -0.5, 0.0, 1.0 - 0.6, // near
        0.0, 3.0, -0.5, -1.0, 3.0 - 0.7, // far
        0.0, 0.0, 0.0, 0.0, 5.0,
    ];
    assert_eq!(x.len(), expected.len());
    for (a, b) in x.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{x:?}");
    }
}

#[test]
fn zero_params_give_zero_outputs() {
    let p = PolicyParams::<f64>::zeros(7, 4, 1.0);
    let out = p.forward(&[0.3, -1.0, 2.0, 0.0, 5.0, 1.0, 1.0]);
    assert_eq!(out.mean, Vec2::zero());
    assert_eq!(out.value, 0.0);
    assert_eq!(out.log_std, [0.0, 0.0]);
}

#[test]
fn one_unit_network_matches_hand_chain() {
    let mut p = PolicyParams::<f64>::zeros(1, 1, 2.0);
    p.tensor_mut("w1").unwrap()[0] = 0.5;
    p.tensor_mut("b1").unwrap()[0] = 0.1;
    p.tensor_mut("w2").unwrap()[0] = -1.5;
    p.tensor_mut("b2").unwrap()[0] = 0.2;
    p.tensor_mut("w_mean").unwrap().copy_from_slice(&[0.8, -0.6]);
    p.tensor_mut("b_mean").unwrap().copy_from_slice(&[0.05, 0.0]);
    p.tensor_mut("log_std").unwrap().copy_from_slice(&[-0.5, 7.0]);
    p.tensor_mut("w_value").unwrap()[0] = 3.0;
    p.tensor_mut("b_value").unwrap()[0] = -0.25;

    let x = 1.2;
    let h1 = (0.5 * x + 0.1f64).tanh();
    let h2 = (-1.5 * h1 + 0.2f64).tanh();
    let z = (0.8 * h2 + 0.05, -0.6 * h2);
    let r = (z.0 * z.0 + z.1 * z.1).sqrt();
    let k = 2.0 * r.tanh() / r;
    let out = p.forward(&[x]);
    assert!((out.mean.x - k * z.0).abs() < 1e-14);
    assert!((out.mean.y - k * z.1).abs() < 1e-14);
    assert!((out.value - (3.0 * h2 - 0.25)).abs() < 1e-14);
    assert_eq!(out.log_std, [-0.5, 1.0]);
}

#[test]
fn mean_is_bounded_by_v_max() {
    let mut r = rng::stream(4, "bound", &[]);
    for trial in 0..50 {
        let mut p = PolicyParams::<f64>::init(6, 8, 1.5, &mut r);
        p.data.iter_mut().for_each(|w| *w *= 1.0 + trial as f64);
        let x: Vec<f64> = (0..6).map(|_| r.random_range(-10.0..10.0)).collect();
        assert!(p.forward(&x).mean.norm() <= 1.5 + 1e-12);
    }
}

fn random_setup(seed: u64, objective: Objective) -> (PolicyParams<f64>, Vec<Transition<f64>>, LossWeights) {
    let mut r = rng::stream(seed, "fd", &[]);
    let mut p = PolicyParams::<f64>::init(4, 5, 1.0, &mut r);
    // Lift the mean head off its tiny init so every path is exercised.
    for w in p.tensor_mut("w_mean").unwrap() {
        *w = r.random_range(-1.0..1.0);
    }
    p.tensor_mut("log_std").unwrap().copy_from_slice(&[-0.3, 0.2]);
    let batch = (0..6)
        .map(|_| {
            let obs: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let out = p.forward(&obs);
            let action = [r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)];
            Transition {
                advantage: r.random_range(-2.0..2.0),
                ret: r.random_range(-3.0..3.0),
                old_log_prob: log_prob(action, out.mean, out.log_std) + r.random_range(-0.4..0.4),
                obs,
                action,
            }
        })
        .collect();
    (p, batch, LossWeights { objective, value_coef: 0.5, entropy_coef: 0.01 })
}

fn max_relative_fd_error(objective: Objective, seed: u64) -> f64 {
    let (p, batch, w) = random_setup(seed, objective);
    let (grad, _) = compute_update(&p, &batch, &w);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    #[allow(clippy::needless_range_loop)]
    for i in 0..p.len() {
        let mut plus = p.clone();
        plus.data[i] += h;
        let mut minus = p.clone();
        minus.data[i] -= h;
        let fd = (batch_loss(&plus, &batch, &w) - batch_loss(&minus, &batch, &w)) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn policy_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = max_relative_fd_error(Objective::PolicyGradient, seed);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn clipped_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = max_relative_fd_error(Objective::Clipped { clip: 0.2 }, seed);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn zero_advantage_without_entropy_has_no_policy_gradient() {
    let (p, mut batch, _) = random_setup(9, Objective::PolicyGradient);
    batch.iter_mut().for_each(|t| t.advantage = 0.0);
    let w = LossWeights { objective: Objective::PolicyGradient, value_coef: 0.0, entropy_coef: 0.0 };
    let (grad, stats) = compute_update(&p, &batch, &w);
    assert!(grad.iter().all(|&g| g == 0.0));
    assert_eq!(stats.policy_loss, 0.0);
}

#[test]
fn single_transition_bias_gradient_matches_symbolic() {
    // Only b_mean.x = beta is nonzero, so mean = (v tanh beta, 0) and
    // dL/dbeta = -adv (a - m) / sigma^2 * v (1 - tanh^2 beta).
    let (beta, v, sigma_log, a, adv) = (0.7f64, 1.3, -0.4f64, 0.2, 1.7);
    let mut p = PolicyParams::<f64>::zeros(2, 3, v);
    p.tensor_mut("b_mean").unwrap()[0] = beta;
    p.tensor_mut("log_std").unwrap().copy_from_slice(&[sigma_log, sigma_log]);
    let t = Transition { obs: vec![0.4, -0.9], action: [a, 0.0], advantage: adv, ret: 0.0, old_log_prob: 0.0 };
    let w = LossWeights { objective: Objective::PolicyGradient, value_coef: 0.0, entropy_coef: 0.0 };
    let (grad, _) = compute_update(&p, &[t], &w);
    let m = v * beta.tanh();
    let s2 = (2.0 * sigma_log).exp();
    let expected = -adv * (a - m) / s2 * v * (1.0 - beta.tanh().powi(2));
    let idx = p.offset("b_mean").unwrap();
    assert!((grad[idx] - expected).abs() < 1e-12, "{} vs {expected}", grad[idx]);
    assert_eq!(grad[idx + 1], 0.0);
}

#[test]
fn value_only_gradient() {
    let mut p = PolicyParams::<f64>::zeros(1, 2, 1.0);
    p.tensor_mut("b_value").unwrap()[0] = 0.75;
    let t = Transition { obs: vec![1.0], action: [0.0, 0.0], advantage: 0.0, ret: 2.0, old_log_prob: 0.0 };
    let w = LossWeights { objective: Objective::PolicyGradient, value_coef: 0.5, entropy_coef: 0.0 };
    let (grad, stats) = compute_update(&p, &[t], &w);
    assert!((grad[p.len() - 1] - 2.0 * 0.5 * (0.75 - 2.0)).abs() < 1e-15);
    assert!((stats.value_loss - 1.5625).abs() < 1e-15);
}

#[test]
fn log_std_outside_range_gets_no_gradient() {
    let (mut p, batch, w) = random_setup(2, Objective::PolicyGradient);
    p.tensor_mut("log_std").unwrap()[0] = 3.0;
    let (grad, _) = compute_update(&p, &batch, &w);
    let at = p.offset("log_std").unwrap();
    assert_eq!(grad[at], 0.0);
    assert_ne!(grad[at + 1], 0.0);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut x = vec![1.0f64, -2.0];
    let mut opt = Adam::new(2, 0.1);
    opt.step(&mut x, &[3.0, -0.5]);
    assert!((x[0] - 0.9).abs() < 1e-7 && (x[1] + 1.9).abs() < 1e-7);
}

#[test]
fn orthogonal_init_has_orthonormal_columns() {
    let mut r = rng::stream(0, "ortho", &[]);
    let p = PolicyParams::<f64>::init(10, 4, 1.0, &mut r);
    let w1 = p.tensor("w1").unwrap();
    for a in 0..4 {
        for b in 0..4 {
            let dot: f64 = (0..10).map(|i| w1[i * 4 + a] * w1[i * 4 + b]).sum::<f64>() / 2.0;
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-10);
        }
    }
}

#[test]
fn single_precision_forward_tracks_double() {
    let mut r = rng::stream(1, "f32", &[]);
    let p = PolicyParams::<f64>::init(30, 16, 1.0, &mut r);
    let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = p.forward(&x);
    let pf = p.cast::<f32>();
    let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let b = pf.forward(&xf);
    assert!((a.value - b.value as f64).abs() < 1e-4);
    assert!((a.mean.x - b.mean.x as f64).abs() < 1e-5);
}

#[test]
fn zero_steps_returns_initialization() {
    let env = WorkspaceConfig::default();
    let tc = TrainConfig { steps: 0, seed: 5, ..TrainConfig::proxy(0, 5) };
    let (p, log) = train_policy(&seed_program(), &tc, &env).unwrap();
    assert_eq!(p, initial_params(&tc, &env));
    assert!(log.records.is_empty());
}

#[test]
fn training_is_deterministic() {
    let env = WorkspaceConfig::default();
    for tc in [TrainConfig::proxy(30, 3), TrainConfig { rollout: 128, minibatch: 32, hidden: 16, ..TrainConfig::full(300, 3) }] {
        let (a, la) = train_policy(&seed_program(), &tc, &env).unwrap();
        let (b, lb) = train_policy(&seed_program(), &tc, &env).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(la, lb);
        assert_ne!(a, initial_params(&tc, &env));
        assert!(a.is_finite());
    }
}

#[test]
fn ppo_counts_environment_steps() {
    let env = WorkspaceConfig::default();
    let tc = TrainConfig { rollout: 64, minibatch: 16, hidden: 8, epochs: 1, ..TrainConfig::full(200, 1) };
    let (_, log) = train_policy(&seed_program(), &tc, &env).unwrap();
    assert!(log.env_steps >= 200 && log.env_steps < 200 + tc.n_envs);
}

#[test]
fn params_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng::stream(2, "io", &[]);
    let p = Network::init(30, 8, 1.0, &mut r);
    let path = dir.path().join("p.json");
    p.save(&path).unwrap();
    let q = Network::load(&path).unwrap();
    assert_eq!(p, q);
    let mut f = p.to_file();
    f.data[3] += 1.0;
    assert!(Network::from_file(f).is_err());
}
