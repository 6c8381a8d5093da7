//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 3 5`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use feudal::envs::Env;
use feudal::harness::{self, load_config, RunConfig};
use feudal::hiergraph::HierarchyTracker;
use feudal::msgpass::{GraphBatch, RawObs, Snapshot};
use feudal::nn::{Mat, Tape};
use feudal::oracle::{reference_rewards, RewardQuery};
use feudal::policy::{ActionSpace, Level};
use feudal::rewards::{
    estimate_advantage, grid_advantages, manager_rewards, manager_rewards_2level, submanager_rewards, worker_rewards_2level,
    worker_rewards_dynamic, worker_rewards_static, EpisodeRewards, RewardFlags, TruncationScheme,
};
use feudal::trainer::{random_baseline, Model, RunSummary};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn bundled_configs() -> Vec<PathBuf> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir).expect("configs directory").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out);
            } else if p.extension().is_some_and(|e| e == "toml") {
                out.push(p);
            }
        }
    }
    let mut out = Vec::new();
    walk(&configs_dir(), &mut out);
    out
}

fn load(name: &str, sets: &[String]) -> Result<RunConfig> {
    Ok(load_config(Some(&configs_dir().join(name)), sets)?)
}

/// Run artifacts shared between criteria.
#[derive(Default)]
struct Cache {
    lbfws_seed0_csv: Option<Vec<u8>>,
}

fn gradient_audit() -> Result<String> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut groups = 0;
    let configs = bundled_configs();
    for path in &configs {
        let cfg = load_config(Some(path), &[])?;
        for g in harness::gradcheck(&cfg, 20)? {
            ensure!(g.max_rel_error < 1e-4, "{}: {:?}/{:?} relative error {:e}", path.display(), g.level, g.group, g.max_rel_error);
            ensure!(g.checked > 0, "{}: {:?}/{:?} checked nothing", path.display(), g.level, g.group);
            worst = worst.max(g.max_rel_error);
            groups += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s");
    Ok(format!("{} configs, {groups} level/group audits, 20 trials, max relative error {worst:.2e}", configs.len()))
}

fn random_rewards(rng: &mut ChaCha8Rng, subs: usize) -> EpisodeRewards {
    let len = rng.random_range(1..24);
    let nw = rng.random_range(1..6);
    EpisodeRewards {
        num_workers: nw,
        num_submanagers: subs,
        external: (0..len).map(|_| (0..nw).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        supervisors: (0..len).map(|_| (0..nw).filter(|_| subs > 0).map(|_| rng.random_range(0..subs.max(1))).collect()).collect(),
    }
}

fn grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn max_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| if x.len() != y.len() { f64::INFINITY } else { x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) }).fold(0.0, f64::max)
}

fn transpose(g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = g.first().map_or(0, Vec::len);
    (0..w).map(|c| g.iter().map(|r| r[c]).collect()).collect()
}

/// Column-wise one-step TD residuals of a `[step][entity]` grid.
fn td_columns(r: &[Vec<f64>], v: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = transpose(r).iter().zip(transpose(v)).map(|(rc, vc)| estimate_advantage(rc, &vc, 0.0, gamma, 0.0)).collect();
    transpose(&cols)
}

fn reward_oracle() -> Result<String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let flag_sets = [
        RewardFlags::default(),
        RewardFlags {
            full_local: true,
            ..Default::default()
        },
        RewardFlags {
            no_local: true,
            ..Default::default()
        },
        RewardFlags {
            external_only: true,
            ..Default::default()
        },
    ];
    for _ in 0..1000 {
        let k = rng.random_range(1..4);
        let alpha = [1, 2, 5][rng.random_range(0..3)];
        let gamma = 0.99;
        let flags = flag_sets[rng.random_range(0..4)];
        let ep = random_rewards(&mut rng, 4);
        let nw = ep.num_workers;
        let period = alpha * k;
        let vm = grid(&mut rng, ep.intervals(period), 4);
        let vs = grid(&mut rng, ep.intervals(alpha), nw);
        let r_m = manager_rewards(&ep, period);
        let a_m = grid_advantages(&r_m, &vm, gamma, 0.0);
        let r_s = submanager_rewards(&ep, alpha, k, &a_m, flags)?;
        let a_s = td_columns(&r_s, &vs, gamma);
        let t_star = if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..2 * period)) };
        for scheme in [None, Some(TruncationScheme::submanager(t_star)), Some(TruncationScheme::worker(t_star)), Some(TruncationScheme::no_values())] {
            let ours = match scheme {
                None => worker_rewards_static(&ep, alpha, &a_s, flags),
                Some(s) => worker_rewards_dynamic(&ep, alpha, k, s, &r_s, &vs, gamma, flags)?,
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
            for (a, b) in reference.manager.iter().flatten().zip(r_m.iter().flatten()) {
                ensure!(a.is_some() == b.is_some(), "empty-cell mismatch");
                worst = worst.max((a.unwrap_or(0.0) - b.unwrap_or(0.0)).abs());
            }
            worst = worst.max(max_gap(&reference.sub, &r_s)).max(max_gap(&reference.worker, &ours));
        }
        let ep2 = random_rewards(&mut rng, 0);
        let v2 = grid(&mut rng, ep2.intervals(alpha), ep2.num_workers);
        let r2 = manager_rewards_2level(&ep2, alpha);
        let a2 = td_columns(&r2, &v2, gamma);
        let flags2 = if flags.no_local { RewardFlags::default() } else { flags };
        let ours = worker_rewards_2level(&ep2, alpha, &a2, flags2)?;
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
        worst = worst.max(max_gap(&reference.worker, &ours));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("1000 batches, K in 1..=3, alpha in {{1,2,5}}, max deviation {worst:.2e}"))
}

fn manager_alignment() -> Result<String> {
    let report = harness::verify(0)?;
    let managers: Vec<_> = report.checked.iter().filter(|r| r.identities.iter().any(|i| i.name.starts_with("manager"))).collect();
    let held = managers.iter().filter(|r| r.holds() && r.violations.is_empty()).count();
    ensure!(held >= 3, "identity held on {held} homogeneous systems");
    let cx = report.flagged.first().context("no counterexample")?;
    ensure!(!cx.violations.is_empty(), "counterexample not flagged");
    let gap = cx.identities[0].discrepancy;
    Ok(format!("{held}/{} homogeneous systems within 1e-9; counterexample flagged ({} violations, gap {gap:.3})", managers.len(), cx.violations.len()))
}

fn lemma1() -> Result<String> {
    let report = harness::verify(0)?;
    let pairs: Vec<_> = report.checked.iter().filter(|r| r.mdp.contains(" pair ")).collect();
    ensure!(pairs.len() == harness::LEMMA_PAIRS, "found {} pairs", pairs.len());
    let worst = pairs.iter().flat_map(|r| &r.identities).map(|i| i.discrepancy).fold(0.0, f64::max);
    ensure!(pairs.iter().all(|r| r.holds()) && worst <= 1e-9, "max gap {worst:e}");
    Ok(format!("{} manager policy pairs, max gap {worst:.2e}", pairs.len()))
}

fn gae_limits() -> Result<String> {
    // dyadic inputs with gamma = 1/2 keep every operation exact
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dyadic = |rng: &mut ChaCha8Rng| rng.random_range(-32i32..=32) as f64 / 8.0;
    let gamma = 0.5;
    for _ in 0..500 {
        let n = rng.random_range(1..13);
        let r: Vec<f64> = (0..n).map(|_| dyadic(&mut rng)).collect();
        let v: Vec<f64> = (0..n).map(|_| dyadic(&mut rng)).collect();
        let boot = dyadic(&mut rng);
        let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let td: Vec<f64> = (0..n).map(|t| r[t] + gamma * next(t) - v[t]).collect();
        ensure!(estimate_advantage(&r, &v, boot, gamma, 0.0) == td, "lambda = 0 differs from the TD residuals");
        let mut ret = vec![0.0; n];
        let mut acc = boot;
        for t in (0..n).rev() {
            acc = r[t] + gamma * acc;
            ret[t] = acc;
        }
        let mc: Vec<f64> = ret.iter().zip(&v).map(|(g, x)| g - x).collect();
        ensure!(estimate_advantage(&r, &v, boot, gamma, 1.0) == mc, "lambda = 1 differs from return minus value");
    }
    Ok("500 trajectories, bitwise equal at lambda 0 and 1".into())
}

fn conservation() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let gamma = 0.97;
    for _ in 0..500 {
        let alpha = rng.random_range(1..6);
        let k = rng.random_range(1..4);
        let ep = random_rewards(&mut rng, 4);
        let nw = ep.num_workers;
        let n_int = ep.intervals(alpha);
        let r_s = grid(&mut rng, n_int, nw);
        let vs = grid(&mut rng, n_int, nw);
        let a_s = td_columns(&r_s, &vs, gamma);
        let flat = RewardFlags::default();
        let stat = worker_rewards_static(&ep, alpha, &a_s, flat);
        let dynm = worker_rewards_dynamic(&ep, alpha, k, TruncationScheme::submanager(None), &r_s, &vs, gamma, flat)?;
        for i in 0..n_int {
            for w in 0..nw {
                let span = i * alpha..((i + 1) * alpha).min(ep.len());
                for out in [&stat, &dynm] {
                    let sum: f64 = span.clone().map(|t| out[t][w]).sum();
                    worst = worst.max((sum - a_s[i][w]).abs());
                }
            }
        }
    }
    ensure!(worst <= 1e-12, "max gap {worst:e}");
    Ok(format!("500 episodes, static and untruncated dynamic, max gap {worst:.2e}"))
}

/// Head and value rows of one level for one snapshot.
fn level_outputs(model: &Model, level: Level, obs: &[RawObs], positions: &[[f64; 2]], goals: &[Vec<f64>], comm: feudal::hiergraph::CommRange) -> Result<(Mat, Mat)> {
    let mut tracker = HierarchyTracker::new(model.hierarchy.clone(), comm);
    let graph = model.graph(&mut tracker, positions);
    let gb = GraphBatch::new(model.schema, &[Snapshot { obs, graph: &graph }])?;
    let slot = model.slot(level).context("level")?;
    let rows: Vec<usize> = if slot.net.role.rows_are_subs() { (0..graph.num_submanagers).collect() } else { (0..obs.len()).collect() };
    let gm = slot.net.role.needs_goal().then(|| Mat::from_vec(rows.len(), model.goal_dim, rows.iter().flat_map(|&r| goals[r].clone()).collect()));
    let mut tape = Tape::new();
    let (h, v) = slot.net.forward(&mut tape, &slot.store, &gb, &rows, gm.as_ref())?;
    Ok((tape.value(h).clone(), tape.value(v).clone()))
}

fn permutation() -> Result<String> {
    let mut worst = 0.0f64;
    let mut cases = 0;
    let model = "[model]\nd = 32\nmsg_hidden = 32\n";
    for text in [
        "[env]\nkind = \"lbfws\"\n",
        "[env]\nkind = \"sampling\"\n",
        "variant = \"gppo-flat\"\n[env]\nkind = \"lbfws\"\n",
        "variant = \"ippo\"\n[env]\nkind = \"sampling\"\n",
        "[env]\nkind = \"sampling\"\nrobots = 7\ncomm_range = 1.5\n",
    ] {
        cases += permutation_case(&harness::parse_config(&format!("{text}{model}"), &[])?, &mut worst)?;
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    Ok(format!("{cases} level/relabeling cases, max deviation {worst:.2e}"))
}

fn permutation_case(cfg: &RunConfig, worst: &mut f64) -> Result<usize> {
    let mut env: Box<dyn Env> = cfg.env.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = Model::new(cfg.variant, cfg.hierarchy_spec(), &cfg.model, env.obs_schema(), env.action_space(), 5)?;
    let mut cases = 0;
    for _ in 0..5 {
        env.reset(&mut rng)?;
        for _ in 0..rng.random_range(0..20) {
            let n = env.num_agents();
            let acts: Vec<Vec<f64>> = match env.action_space() {
                ActionSpace::Discrete(k) => (0..n).map(|_| vec![rng.random_range(0..k) as f64]).collect(),
                ActionSpace::Continuous(k) => (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            };
            if env.step(&acts, &mut rng)?.done {
                break;
            }
        }
        let (obs, pos) = (env.observe(), env.positions());
        let n = obs.len();
        let goals: Vec<Vec<f64>> = (0..n.max(4)).map(|_| (0..model.goal_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pobs: Vec<RawObs> = perm.iter().map(|&p| obs[p].clone()).collect();
        let ppos: Vec<[f64; 2]> = perm.iter().map(|&p| pos[p]).collect();
        let pgoals: Vec<Vec<f64>> = perm.iter().map(|&p| goals[p].clone()).collect();
        for slot in &model.levels {
            let subs = slot.net.role.rows_are_subs();
            // sub-manager rows keep their identity; worker rows are relabelled
            let (h0, v0) = level_outputs(&model, slot.level, &obs, &pos, &goals, env.comm_range())?;
            let (h1, v1) = level_outputs(&model, slot.level, &pobs, &ppos, if subs { &goals } else { &pgoals }, env.comm_range())?;
            for r in 0..h1.rows {
                let src = if subs { r } else { perm[r] };
                for (a, b) in h1.row(r).iter().zip(h0.row(src)).chain(v1.row(r).iter().zip(v0.row(src))) {
                    *worst = worst.max((a - b).abs());
                }
            }
            cases += 1;
        }
    }
    Ok(cases)
}

fn learning(config: &str, steps: u64, bar: f64, minutes: f64, cache: Option<&mut Cache>) -> Result<String> {
    let start = Instant::now();
    let base = load(config, &[])?;
    ensure!(base.train.total_steps <= steps, "config budget {} exceeds {steps}", base.train.total_steps);
    let random = random_baseline(&base.env, 200, 12_345)?;
    let mut ratios = Vec::new();
    let mut seed0_csv = None;
    for seed in 0..4u64 {
        let cfg = load(config, &[format!("seed={seed}")])?;
        let dir = tempfile::tempdir()?;
        let summary: RunSummary = harness::train(&cfg, dir.path(), |_| {})?;
        // only evaluations made within the step budget count
        let within: Vec<f64> = summary.evaluations.iter().filter(|e| e.global_step <= steps).map(|e| e.mean_return).collect();
        let tail = &within[within.len().saturating_sub(20)..];
        ensure!(!tail.is_empty(), "seed {seed}: no evaluations");
        ratios.push(tail.iter().sum::<f64>() / tail.len() as f64 / random);
        if seed == 0 {
            seed0_csv = Some(std::fs::read(dir.path().join(harness::artifacts::CSV_FILE))?);
        }
    }
    if let Some(c) = cache {
        c.lbfws_seed0_csv = seed0_csv;
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = ratios.iter().filter(|&&r| r >= bar).count();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    let detail = format!("random {random:.3}, final-20 ratios [{}], {passed}/4 >= {bar}, {:.1} min", shown.join(", "), secs / 60.0);
    ensure!(passed >= 3, "{detail}");
    ensure!(secs <= minutes * 60.0, "{detail}");
    Ok(detail)
}

fn ablations() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (alpha, k, gamma) = (2, 2, 0.99);
    let period = alpha * k;
    // frozen batch: dyadic rewards and cells of 1 or 2 workers keep every
    // reordered sum exact
    let len = 16;
    let nw = 5;
    let ep = EpisodeRewards {
        num_workers: nw,
        num_submanagers: 4,
        external: (0..len).map(|_| (0..nw).map(|_| rng.random_range(-8i32..=8) as f64 / 4.0).collect()).collect(),
        supervisors: (0..len).map(|t| (0..nw).map(|w| (w + t / 3) % 4).collect()).collect(),
    };
    let vm = grid(&mut rng, ep.intervals(period), 4);
    let vs = grid(&mut rng, ep.intervals(alpha), nw);
    let base = RewardFlags::default();
    let r_m = manager_rewards(&ep, period);
    let a_m = grid_advantages(&r_m, &vm, gamma, 0.0);
    let r_s = submanager_rewards(&ep, alpha, k, &a_m, base)?;
    let a_s = td_columns(&r_s, &vs, gamma);
    let scheme = TruncationScheme::worker(Some(1));
    // each stream is computed from the frozen upstream values
    let streams = |flags: RewardFlags, scheme: TruncationScheme| -> Result<[Vec<Vec<f64>>; 3]> {
        Ok([
            submanager_rewards(&ep, alpha, k, &a_m, flags)?,
            worker_rewards_dynamic(&ep, alpha, k, scheme, &r_s, &vs, gamma, flags)?,
            worker_rewards_static(&ep, alpha, &a_s, flags),
        ])
    };
    let reference = streams(base, scheme)?;
    let bits = |g: &[Vec<f64>]| -> Vec<u64> { g.iter().flatten().map(|x| x.to_bits()).collect() };
    let names = ["sub-manager", "dynamic worker", "static worker"];
    let cases = [
        ("FL", RewardFlags { full_local: true, ..base }, scheme, [false, true, true]),
        ("NL", RewardFlags { no_local: true, ..base }, scheme, [true, false, false]),
        ("ER", RewardFlags { external_only: true, ..base }, scheme, [true, true, true]),
        ("NV", base, TruncationScheme::no_values(), [false, true, false]),
    ];
    let mut lines = Vec::new();
    for (name, flags, sch, expect) in cases {
        let got = streams(flags, sch)?;
        let changed: Vec<bool> = got.iter().zip(&reference).map(|(a, b)| bits(a) != bits(b)).collect();
        ensure!(changed == expect, "{name}: changed {changed:?}, expected {expect:?}");
        let which: Vec<&str> = names.iter().zip(&changed).filter(|(_, &c)| c).map(|(n, _)| *n).collect();
        lines.push(format!("{name}->{}", which.join("+")));
    }
    // 2L: the sub-manager stream disappears, the manager keeps the same team
    // signal per interval and the workers follow the manager advantage
    let ep2 = EpisodeRewards {
        num_submanagers: 0,
        supervisors: vec![Vec::new(); len],
        ..ep.clone()
    };
    let m2 = manager_rewards_2level(&ep2, period);
    for (j, row) in m2.iter().enumerate() {
        let cells = ep.supervisors[j * period].clone();
        let team3: f64 = (0..4)
            .filter_map(|s| {
                let size = cells.iter().filter(|&&c| c == s).count() as f64;
                r_m[j][s].map(|x| x * size)
            })
            .sum();
        ensure!(row.iter().sum::<f64>().to_bits() == team3.to_bits(), "2L: manager team signal changed at interval {j}");
    }
    let v2 = grid(&mut ChaCha8Rng::seed_from_u64(10), ep2.intervals(period), nw);
    let w2 = worker_rewards_2level(&ep2, period, &td_columns(&m2, &v2, gamma), base)?;
    ensure!(bits(&w2) != bits(&reference[1]) && bits(&w2) != bits(&reference[2]), "2L: worker stream unchanged");
    lines.push("2L->worker (sub-manager removed, manager team signal identical)".into());
    Ok(lines.join(", "))
}

fn determinism(cache: &Cache) -> Result<String> {
    let cfg = load("mini_lbfws.toml", &["seed=0".into()])?;
    let run = || -> Result<Vec<u8>> {
        let dir = tempfile::tempdir()?;
        harness::train(&cfg, dir.path(), |_| {})?;
        Ok(std::fs::read(dir.path().join(harness::artifacts::CSV_FILE))?)
    };
    let first = match &cache.lbfws_seed0_csv {
        Some(b) => b.clone(),
        None => run()?,
    };
    let second = run()?;
    ensure!(first == second, "CSV files differ");
    Ok(format!("{} bytes identical", first.len()))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |i: usize| wanted.is_empty() || wanted.contains(&i);
    let mut cache = Cache::default();
    let mut failed = 0;
    let mut report = |i: usize, name: &str, f: &mut dyn FnMut() -> Result<String>| {
        if !on(i) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Err(anyhow::anyhow!("panicked: {msg}"))
        });
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        match outcome {
            Ok(detail) => println!("PASS {i:>2} {name}: {detail} ({took:.1?})"),
            Err(e) => {
                failed += 1;
                println!("FAIL {i:>2} {name}: {e:#} ({took:.1?})");
            }
        }
    };
    report(1, "gradient audit", &mut gradient_audit);
    report(2, "reward oracle", &mut reward_oracle);
    report(3, "manager alignment", &mut manager_alignment);
    report(4, "policy improvement identity", &mut lemma1);
    report(5, "GAE limits", &mut gae_limits);
    report(6, "worker reward conservation", &mut conservation);
    report(7, "permutation equivariance", &mut permutation);
    report(8, "Mini-LBFwS learning", &mut || learning("mini_lbfws.toml", 200_000, 2.0, 30.0, Some(&mut cache)));
    report(9, "Mini-Sampling learning", &mut || learning("mini_sampling.toml", 300_000, 1.5, 45.0, None));
    report(10, "ablation differentiation", &mut ablations);
    report(11, "reproducible logs", &mut || determinism(&cache));
    if failed > 0 {
        std::process::exit(1);
    }
}
