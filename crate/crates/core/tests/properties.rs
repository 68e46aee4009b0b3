use proptest::prelude::*;

use arq_core::cells::{goodness, goodness_grad, GoodnessKind};
use arq_core::envs::{bang_bang_actions, EnvConfig};
use arq_core::learner::{EpsilonSchedule, ReplayBuffer};
use arq_core::linalg::SeededRng;
use arq_core::network::{argmax, select_action, EnsembleMode, QReadout};

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 2..48)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn rms_is_shift_invariant(y in vector(), c in -1e3f64..1e3) {
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let a = goodness(&y, GoodnessKind::Rms);
        let b = goodness(&shifted, GoodnessKind::Rms);
        // cancellation in the shifted mean costs about |c| / rms digits
        let tol = 1e-12 * (1.0 + c.abs() / a.max(1e-12));
        prop_assert!((a - b).abs() <= tol * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn rms_is_absolutely_homogeneous(y in vector(), c in -1e3f64..1e3) {
        let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        let a = goodness(&scaled, GoodnessKind::Rms);
        let b = c.abs() * goodness(&y, GoodnessKind::Rms);
        prop_assert!(rel(a, b) < 1e-12 || (a == 0.0 && b == 0.0));
    }

    #[test]
    fn squared_rms_is_variance(y in vector()) {
        let r = goodness(&y, GoodnessKind::Rms);
        prop_assert!(rel(r * r, goodness(&y, GoodnessKind::Var)) < 1e-12);
    }

    #[test]
    fn second_moment_goodness_is_nonnegative(y in vector()) {
        for k in [GoodnessKind::Rms, GoodnessKind::Ms, GoodnessKind::Var] {
            prop_assert!(goodness(&y, k) >= 0.0);
        }
    }

    #[test]
    fn centered_goodness_gradients_sum_to_zero(y in vector()) {
        for k in [GoodnessKind::Rms, GoodnessKind::Var] {
            let g = goodness_grad(&y, k);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
            prop_assert!(g.iter().sum::<f64>().abs() / scale < 1e-10);
        }
    }

    #[test]
    fn argmax_is_invariant_to_positive_scale(q in prop::collection::vec(-10.0f64..10.0, 1..12), s in 1e-3f64..1e3) {
        let scaled: Vec<f64> = q.iter().map(|v| v * s).collect();
        prop_assert_eq!(argmax(&q), argmax(&scaled));
    }

    #[test]
    fn argmax_picks_a_maximum(q in prop::collection::vec(-10.0f64..10.0, 1..12)) {
        let i = argmax(&q);
        prop_assert!(q.iter().all(|&v| v <= q[i]));
        prop_assert!(q[..i].iter().all(|&v| v < q[i]));
    }

    #[test]
    fn epsilon_schedule_is_monotone_and_bounded(a in 0u64..10_000_000, b in 0u64..10_000_000) {
        let s = EpsilonSchedule { start: 1.0, end: 0.01, exploration_fraction: 0.1, total_steps: 4_000_000 };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.epsilon_at(lo) >= s.epsilon_at(hi));
        prop_assert!((0.01..=1.0).contains(&s.epsilon_at(a)));
    }

    #[test]
    fn bang_bang_vectors_are_signs(k in 1usize..10) {
        let v = bang_bang_actions(k).unwrap();
        prop_assert_eq!(v.len(), 1 << k);
        prop_assert!(v.iter().all(|a| a.len() == k && a.iter().all(|&x| x == 1.0 || x == -1.0)));
        prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn minatar_grids_are_binary_with_integer_rewards(
        game in prop::sample::select(vec!["breakout", "space_invaders"]),
        seed in 0u64..1_000,
        actions in prop::collection::vec(0usize..6, 1..300),
    ) {
        let run = || {
            let mut env = EnvConfig::named(game).build().unwrap();
            let mut trace = vec![env.reset(Some(seed))];
            let mut ret = 0.0;
            for &a in &actions {
                let s = env.step(a).unwrap();
                assert!(s.reward >= 0.0 && s.reward.fract() == 0.0);
                ret += s.reward;
                let done = s.done;
                trace.push(s.obs);
                if done {
                    trace.push(env.reset(None));
                }
            }
            (trace, ret)
        };
        let (a, ret) = run();
        prop_assert!(ret.fract() == 0.0);
        prop_assert!(a.iter().flatten().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(a, run().0);
    }
}

#[test]
fn replay_sampling_is_uniform() {
    const SLOTS: usize = 50;
    const DRAWS: usize = 1_000_000;
    let mut buf = ReplayBuffer::new(SLOTS);
    for i in 0..SLOTS + 17 {
        buf.push(i);
    }
    let mut counts = [0usize; SLOTS];
    let mut rng = SeededRng::new(0);
    for _ in 0..DRAWS / 1_000 {
        for i in buf.sample_indices(1_000, &mut rng) {
            counts[i] += 1;
        }
    }
    let p = 1.0 / SLOTS as f64;
    let expected = DRAWS as f64 * p;
    let sigma = (DRAWS as f64 * p * (1.0 - p)).sqrt();
    for (slot, &c) in counts.iter().enumerate() {
        assert!((c as f64 - expected).abs() < 5.0 * sigma, "slot {slot}: {c} vs {expected}");
    }
}

#[test]
fn full_exploration_is_uniform_over_actions() {
    const DRAWS: usize = 600_000;
    let q = QReadout::combine(vec![vec![0.0, 5.0, 1.0, -2.0, 3.0, 4.0]], EnsembleMode::Mean);
    let mut counts = [0usize; 6];
    let mut rng = SeededRng::new(1);
    for _ in 0..DRAWS {
        counts[select_action(&q, 1.0, &mut rng)] += 1;
    }
    let p = 1.0 / 6.0;
    let sigma = (DRAWS as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - DRAWS as f64 * p).abs() < 5.0 * sigma);
    }
}
