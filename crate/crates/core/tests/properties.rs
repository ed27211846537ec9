use bsad_core::exploration::{alpha_weight, alpha_weights};
use bsad_core::mdp::{
    exact_q, exact_q_enumerated, initial_value, max_visitation, state_visitation, suffix_reward_distribution,
};
use bsad_core::oracle::exact_preference_probability;
use bsad_core::{DeterministicPolicy, TabularEpisodicMdp, TrajectoryReward};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random instance with small-integer transition weights and rewards on a
/// 0.1 grid. Some rows are deterministic so ties and zero-probability
/// branches show up.
fn instance(s: usize, a: usize, h: usize, seed: u64) -> (TabularEpisodicMdp, TrajectoryReward) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = |rng: &mut ChaCha8Rng| {
        let w: Vec<u32> = if rng.gen_bool(0.2) {
            let hit = rng.gen_range(0..s);
            (0..s).map(|x| (x == hit) as u32).collect()
        } else {
            (0..s).map(|_| rng.gen_range(1..=5)).collect()
        };
        let total: u32 = w.iter().sum();
        w.into_iter().map(|x| x as f64 / total as f64).collect::<Vec<f64>>()
    };
    let initial = row(&mut rng);
    let mut t = Vec::new();
    for _ in 0..(h - 1) * s * a {
        t.extend(row(&mut rng));
    }
    let r = (0..h * s * a).map(|_| rng.gen_range(0..=10) as f64 / 10.0).collect();
    let mdp = TabularEpisodicMdp::new(s, a, h, t, initial).unwrap();
    let f = TrajectoryReward::cumulative(h, s, a, r).unwrap();
    (mdp, f)
}

fn random_policy(h: usize, s: usize, a: usize, rng: &mut ChaCha8Rng) -> DeterministicPolicy {
    let table: Vec<Vec<usize>> = (0..h).map(|_| (0..s).map(|_| rng.gen_range(0..a)).collect()).collect();
    DeterministicPolicy::from_table(&table)
}

/// Plain backward induction, written independently of the library.
fn reference_q(mdp: &TabularEpisodicMdp, f: &TrajectoryReward, pi: &DeterministicPolicy) -> Vec<Vec<Vec<f64>>> {
    let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut q = vec![vec![vec![0.0; a_len]; s_len]; h_len];
    let mut v_next = vec![0.0; s_len];
    for h in (0..h_len).rev() {
        for s in 0..s_len {
            for a in 0..a_len {
                let future: f64 = if h + 1 < h_len {
                    mdp.transition_row(h, s, a).iter().zip(&v_next).map(|(p, v)| p * v).sum()
                } else {
                    0.0
                };
                q[h][s][a] = f.step_reward(h, s, a).unwrap() + future;
            }
        }
        v_next = (0..s_len).map(|s| q[h][s][pi.get(h, s).unwrap()]).collect();
    }
    q
}

fn all_policies(h: usize, s: usize, a: usize) -> Vec<DeterministicPolicy> {
    let n = h * s;
    (0..a.pow(n as u32))
        .map(|mut code| {
            let table: Vec<Vec<usize>> = (0..h)
                .map(|_| {
                    (0..s)
                        .map(|_| {
                            let x = code % a;
                            code /= a;
                            x
                        })
                        .collect()
                })
                .collect();
            DeterministicPolicy::from_table(&table)
        })
        .collect()
}

/// `P(sum of m draws from x > sum of m draws from y)` plus half the tie
/// mass, by brute-force enumeration of both batches.
fn brute_preference(x: &[(f64, f64)], y: &[(f64, f64)], m: usize) -> f64 {
    fn sums(atoms: &[(f64, f64)], m: usize) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 1.0)];
        for _ in 0..m {
            out = out
                .iter()
                .flat_map(|&(v, p)| atoms.iter().map(move |&(w, q)| (v + w, p * q)))
                .collect();
        }
        out
    }
    let (sx, sy) = (sums(x, m), sums(y, m));
    let mut total = 0.0;
    for &(vx, px) in &sx {
        for &(vy, py) in &sy {
            if (vx - vy).abs() < 1e-9 {
                total += 0.5 * px * py;
            } else if vx > vy {
                total += px * py;
            }
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dp_matches_enumeration_and_reference(
        s in 1usize..=4, a in 1usize..=3, h in 1usize..=3, seed in any::<u64>()
    ) {
        let (mdp, f) = instance(s, a, h, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let pi = random_policy(h, s, a, &mut rng);
        let reference = reference_q(&mdp, &f, &pi);
        for step in 0..h {
            for state in 0..s {
                for act in 0..a {
                    let dp = exact_q(&mdp, &f, &pi, step, state, act).unwrap();
                    let en = exact_q_enumerated(&mdp, &f, &pi, step, state, act).unwrap();
                    prop_assert!((dp - reference[step][state][act]).abs() < 1e-9);
                    prop_assert!((en - reference[step][state][act]).abs() < 1e-9);
                }
            }
        }
        // the general-reward path agrees with the cumulative one
        let g = TrajectoryReward::tabulate(&mdp, None, |t| f.evaluate(t).unwrap()).unwrap();
        let v_cum = initial_value(&mdp, &f, &pi).unwrap();
        let v_gen = initial_value(&mdp, &g, &pi).unwrap();
        prop_assert!((v_cum - v_gen).abs() < 1e-9);
    }

    #[test]
    fn max_visitation_is_the_policy_maximum(
        s in 1usize..=3, a in 1usize..=2, h in 1usize..=3, seed in any::<u64>()
    ) {
        let (mdp, _) = instance(s, a, h, seed);
        let policies = all_policies(h, s, a);
        for step in 0..h {
            for state in 0..s {
                let best = max_visitation(&mdp, step, state).unwrap();
                let brute = policies
                    .iter()
                    .map(|pi| state_visitation(&mdp, pi, step, state).unwrap())
                    .fold(0.0, f64::max);
                prop_assert!((best - brute).abs() < 1e-12, "{} vs {}", best, brute);
            }
        }
    }

    #[test]
    fn preference_is_antisymmetric_and_matches_enumeration(
        s in 1usize..=3, h in 1usize..=3, m in 1usize..=3, seed in any::<u64>()
    ) {
        let (mdp, f) = instance(s, 3, h, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let tail = random_policy(h, s, 3, &mut rng);
        let step = rng.gen_range(0..h);
        let state = rng.gen_range(0..s);
        for a0 in 0..3 {
            prop_assert_eq!(exact_preference_probability(&mdp, &f, step, state, a0, a0, &tail, m).unwrap(), 0.5);
            for a1 in a0 + 1..3 {
                let p = exact_preference_probability(&mdp, &f, step, state, a0, a1, &tail, m).unwrap();
                let q = exact_preference_probability(&mdp, &f, step, state, a1, a0, &tail, m).unwrap();
                prop_assert_eq!(p + q, 1.0);
                let x = suffix_reward_distribution(&mdp, &f, step, state, a0, &tail).unwrap();
                let y = suffix_reward_distribution(&mdp, &f, step, state, a1, &tail).unwrap();
                let brute = brute_preference(&x, &y, m);
                prop_assert!((p - brute).abs() < 1e-9, "{} vs {}", p, brute);
            }
        }
    }

    #[test]
    fn alpha_weights_sum_to_one_and_match_pointwise(t in 1u64..=400, h in 1usize..=5) {
        let w = alpha_weights(t, h);
        prop_assert!((w[1..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(w[0], 0.0);
        for i in [1, t / 2 + 1, t] {
            let direct = alpha_weight(t, i, h).unwrap();
            prop_assert!((direct - w[i as usize]).abs() <= 1e-15 + 1e-12 * direct);
        }
    }
}

#[test]
fn sampling_frequencies_follow_the_kernel() {
    let (mdp, _) = instance(4, 2, 2, 77);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 40_000;
    let mut check = |probs: &[f64], draw: &mut dyn FnMut(&mut ChaCha8Rng) -> usize| {
        let mut counts = vec![0usize; probs.len()];
        for _ in 0..n {
            counts[draw(&mut rng)] += 1;
        }
        for (c, &p) in counts.iter().zip(probs) {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() <= 5.0 * sd + 1e-12, "freq {freq} vs p {p}");
        }
    };
    let init = mdp.initial_dist().to_vec();
    check(&init, &mut |r| mdp.sample_initial(r));
    for (s, a) in [(0, 0), (1, 1), (3, 0)] {
        let row = mdp.transition_row(0, s, a).to_vec();
        check(&row, &mut |r| mdp.sample_next(0, s, a, r));
    }
}
