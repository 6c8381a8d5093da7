use feudal::oracle::{reference_advantage, reference_rewards, RewardQuery};
use feudal::rewards::{
    estimate_advantage, grid_advantages, manager_rewards, manager_rewards_2level, submanager_rewards, worker_rewards_2level,
    worker_rewards_dynamic, worker_rewards_static, EpisodeRewards, RewardFlags, TruncationScheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_episode(rng: &mut ChaCha8Rng, subs: usize) -> EpisodeRewards {
    let len = rng.random_range(1..24);
    let nw = rng.random_range(1..6);
    EpisodeRewards {
        num_workers: nw,
        num_submanagers: subs,
        external: (0..len).map(|_| (0..nw).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        // 2-level episodes carry empty supervisor rows
        supervisors: (0..len).map(|_| (0..nw).filter(|_| subs > 0).map(|_| rng.random_range(0..subs.max(1))).collect()).collect(),
    }
}

fn values(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn close(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len() && a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= 1e-9)
}

fn random_flags(rng: &mut ChaCha8Rng) -> RewardFlags {
    match rng.random_range(0..4) {
        0 => RewardFlags::default(),
        1 => RewardFlags {
            full_local: true,
            ..Default::default()
        },
        2 => RewardFlags {
            no_local: true,
            ..Default::default()
        },
        _ => RewardFlags {
            external_only: true,
            ..Default::default()
        },
    }
}

#[test]
fn reward_module_matches_reference_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let k = rng.random_range(1..4);
        let alpha = [1, 2, 5][rng.random_range(0..3)];
        let gamma = 0.99;
        let flags = random_flags(&mut rng);
        let ep = random_episode(&mut rng, 4);
        let nw = ep.num_workers;
        let period = alpha * k;
        let vm = values(&mut rng, ep.intervals(period), 4);
        let vs = values(&mut rng, ep.intervals(alpha), nw);
        let r_m = manager_rewards(&ep, period);
        let a_m = grid_advantages(&r_m, &vm, gamma, 0.0);
        let r_s = submanager_rewards(&ep, alpha, k, &a_m, flags).unwrap();
        let a_s: Vec<Vec<f64>> = (0..nw)
            .map(|w| {
                let r: Vec<f64> = r_s.iter().map(|row| row[w]).collect();
                let v: Vec<f64> = vs.iter().map(|row| row[w]).collect();
                estimate_advantage(&r, &v, 0.0, gamma, 0.0)
            })
            .collect();
        let a_s: Vec<Vec<f64>> = (0..r_s.len()).map(|i| (0..nw).map(|w| a_s[w][i]).collect()).collect();
        let t_star = if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..2 * period)) };
        let schemes = [None, Some(TruncationScheme::submanager(t_star)), Some(TruncationScheme::worker(t_star)), Some(TruncationScheme::no_values())];
        for scheme in schemes {
            let ours = match scheme {
                None => worker_rewards_static(&ep, alpha, &a_s, flags),
                Some(s) => worker_rewards_dynamic(&ep, alpha, k, s, &r_s, &vs, gamma, flags).unwrap(),
            };
            let reference = reference_rewards(&RewardQuery {
                episode: &ep,
                alpha,
                k,
                manager_values: &vm,
                sub_values: &vs,
                gamma,
                gamma_s: gamma,
                worker_scheme: scheme,
                flags,
            });
            let pairs = reference.manager.iter().flatten().zip(r_m.iter().flatten()).chain(reference.manager_adv.iter().flatten().zip(a_m.iter().flatten()));
            for (a, b) in pairs {
                assert_eq!(a.is_some(), b.is_some());
                assert!((a.unwrap_or(0.0) - b.unwrap_or(0.0)).abs() <= 1e-9);
            }
            assert!(close(&reference.sub, &r_s));
            assert!(close(&reference.worker, &ours), "{scheme:?} {flags:?} alpha={alpha} k={k}");
        }

        // 2-level
        let ep2 = random_episode(&mut rng, 0);
        let nw2 = ep2.num_workers;
        let v2 = values(&mut rng, ep2.intervals(alpha), nw2);
        let r2 = manager_rewards_2level(&ep2, alpha);
        let a2: Vec<Vec<f64>> = grid_advantages(&r2.iter().map(|row| row.iter().map(|&x| Some(x)).collect()).collect::<Vec<_>>(), &v2, gamma, 0.0)
            .into_iter()
            .map(|row| row.into_iter().map(Option::unwrap).collect())
            .collect();
        let flags2 = if flags.no_local { RewardFlags::default() } else { flags };
        let ours = worker_rewards_2level(&ep2, alpha, &a2, flags2).unwrap();
        let reference = reference_rewards(&RewardQuery {
            episode: &ep2,
            alpha,
            k,
            manager_values: &v2,
            sub_values: &[],
            gamma,
            gamma_s: gamma,
            worker_scheme: None,
            flags: flags2,
        });
        assert!(close(&reference.worker, &ours));
    }
}

#[test]
fn gae_matches_explicit_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(1..15);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let boot = rng.random_range(-1.0..1.0);
        let lam = rng.random_range(0.0..1.0);
        let a = estimate_advantage(&r, &v, boot, 0.97, lam);
        let b = reference_advantage(&r, &v, boot, 0.97, lam);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
    }
}
