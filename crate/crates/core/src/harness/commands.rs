//! What the subcommands do, as library calls.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::artifacts::{
    config_hash, load_checkpoint, save_checkpoint, version_string, write_metadata, write_replay, CsvLog, Metadata, CHECKPOINT_FILE, CONFIG_FILE,
    CSV_FILE, METADATA_FILE, REPLAY_FILE,
};
use super::RunConfig;
use crate::nn::gradcheck::GradCheckConfig;
use crate::nn::Group;
use crate::oracle::{self, AlignmentReport, FeudalPolicy, LowerLevelPolicies};
use crate::policy::Level;
use crate::trainer::{assign, check_level_gradients, run_episode, EvalLog, LogEvent, Model, RunSummary, Sample};

/// Trains and writes config, metadata, CSV, checkpoint and a greedy replay
/// into `out`.
pub fn train(cfg: &RunConfig, out: &Path, mut progress: impl FnMut(&EvalLog)) -> anyhow::Result<RunSummary> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let resolved = cfg.to_toml();
    let hash = config_hash(&resolved);
    fs::write(out.join(CONFIG_FILE), &resolved)?;
    let mut trainer = cfg.trainer()?;
    let csv_path = out.join(CSV_FILE);
    let file = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    let mut csv = CsvLog::new(BufWriter::new(file))?;
    let summary = trainer.run(|ev| -> anyhow::Result<()> {
        match ev {
            LogEvent::Episode(e) => csv.episode(e)?,
            LogEvent::Evaluation(e) => {
                csv.eval(e)?;
                progress(e);
            }
        }
        Ok(())
    })?;
    csv.flush()?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &trainer.model, &hash)?;
    let mut env = cfg.env.build()?;
    let ep = run_episode(&trainer.model, env.as_mut(), 0.0, true, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    write_replay(BufWriter::new(File::create(out.join(REPLAY_FILE))?), &[ep])?;
    write_metadata(
        &out.join(METADATA_FILE),
        &Metadata {
            config_hash: hash,
            seed: cfg.seed,
            variant: cfg.variant.name().to_string(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            version: version_string(),
            global_step: summary.global_step,
            episodes: summary.episodes,
            updates: summary.updates,
        },
    )?;
    Ok(summary)
}

/// Greedy evaluation over `episodes` episodes, from a checkpoint if given.
/// With `out`, also writes a replay of the episodes.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, episodes: usize, out: Option<&Path>) -> anyhow::Result<EvalLog> {
    let mut trainer = cfg.trainer()?;
    if let Some(path) = checkpoint {
        let hash = config_hash(&cfg.to_toml());
        load_checkpoint(path, &mut trainer.model, &hash).with_context(|| format!("loading {}", path.display()))?;
    }
    let log = trainer.evaluate(episodes, 0)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut env = cfg.env.build()?;
        let ep = run_episode(&trainer.model, env.as_mut(), 0.0, true, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        write_replay(BufWriter::new(File::create(dir.join(REPLAY_FILE))?), &[ep])?;
    }
    Ok(log)
}

/// Oracle reports, split by whether their identities are expected to hold.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checked: Vec<AlignmentReport>,
    /// Systems that break the homogeneity assumptions; a gap is expected.
    pub flagged: Vec<AlignmentReport>,
}

impl VerifyReport {
    /// Names of failed identities, as `system: identity`.
    pub fn failures(&self) -> Vec<String> {
        self.checked
            .iter()
            .flat_map(|r| r.identities.iter().filter(|i| !i.holds()).map(move |i| format!("{}: {}", r.mdp, i.name)))
            .collect()
    }
}

/// Number of random (old, new) manager pairs checked against the policy
/// improvement identity.
pub const LEMMA_PAIRS: usize = 10;

/// Runs the oracle suite: manager alignment on every bundled homogeneous
/// system and on the heterogeneous counterexample, the improvement
/// identity on random manager pairs, and the lower-level identities.
pub fn verify(seed: u64) -> anyhow::Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toys = oracle::bundled();
    let mut checked = Vec::new();
    for mdp in &toys {
        let pol = FeudalPolicy::random(mdp, &mut rng);
        checked.push(oracle::verify_manager_alignment(mdp, &pol)?);
    }
    for i in 0..LEMMA_PAIRS {
        let mdp = &toys[i % toys.len()];
        let old = FeudalPolicy::random(mdp, &mut rng);
        let other = FeudalPolicy::random(mdp, &mut rng);
        let new = FeudalPolicy::mix(&other, &old, &old);
        let mut rep = oracle::verify_lemma1(mdp, &old, &new)?;
        rep.mdp = format!("{} pair {i}", rep.mdp);
        checked.push(rep);
    }
    for mdp in oracle::lower_level_toys(1.0 - 1e-6, 1) {
        let pols = LowerLevelPolicies {
            old: FeudalPolicy::random(&mdp, &mut rng),
            new: FeudalPolicy::random(&mdp, &mut rng),
        };
        checked.push(oracle::verify_lower_levels(&mdp, &pols, Some(1e-6))?);
    }
    let cx = oracle::counterexample();
    let pol = FeudalPolicy::random(&cx, &mut rng);
    let flagged = vec![oracle::verify_manager_alignment(&cx, &pol)?];
    Ok(VerifyReport { checked, flagged })
}

/// Worst relative error of one parameter group of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub level: Level,
    pub group: Group,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinks: usize,
}

/// Rows per level and tensor entries per tensor in one gradient check.
const CHECK_ROWS: usize = 6;
const CHECK_ENTRIES: usize = 6;

/// Finite-difference audit of the PPO loss gradient of every level of the
/// configured model. Each trial draws fresh weights and a fresh episode;
/// old log-probabilities are perturbed so both branches of the clipped
/// objective are exercised.
pub fn gradcheck(cfg: &RunConfig, trials: usize) -> anyhow::Result<Vec<GroupCheck>> {
    let mut out: Vec<GroupCheck> = Vec::new();
    let mut env = cfg.env.build()?;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(trial as u64));
        let mut model = Model::new(cfg.variant, cfg.hierarchy_spec(), &cfg.model, env.obs_schema(), env.action_space(), rng.random())?;
        let ep = run_episode(&model, env.as_mut(), cfg.train.sigma.init, false, &mut rng)?;
        let (_, samples) = assign(&ep, 0, &model, cfg.reward_scheme(), &cfg.train)?;
        let episodes = [ep];
        let schema = model.schema;
        for slot in &mut model.levels {
            let pool = &samples[&slot.level];
            if pool.is_empty() {
                continue;
            }
            let picked: Vec<Sample> = (0..CHECK_ROWS)
                .map(|_| {
                    let mut s = pool[rng.random_range(0..pool.len())].clone();
                    s.log_prob += rng.random_range(-0.3..0.3);
                    s.advantage += rng.random_range(-1.0..1.0);
                    s
                })
                .collect();
            let batch: Vec<&Sample> = picked.iter().collect();
            let check = GradCheckConfig {
                max_entries: CHECK_ENTRIES,
                ..Default::default()
            };
            let report = check_level_gradients(slot, schema, &episodes, &batch, &cfg.train, check, &mut rng)?;
            for (t, p) in report.tensors.iter().zip(slot.store.params()) {
                let entry = match out.iter_mut().find(|g| g.level == slot.level && g.group == p.group) {
                    Some(e) => e,
                    None => {
                        out.push(GroupCheck {
                            level: slot.level,
                            group: p.group,
                            max_rel_error: 0.0,
                            checked: 0,
                            kinks: 0,
                        });
                        out.last_mut().expect("just pushed")
                    }
                };
                entry.max_rel_error = entry.max_rel_error.max(t.max_rel_error);
                entry.checked += t.checked;
                entry.kinks += t.kinks;
            }
        }
    }
    Ok(out)
}
