//! Clipped-surrogate PPO for one level.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::msgpass::{GraphBatch, ObsSchema, Snapshot};
use crate::nn::gradcheck::{self, GradCheckConfig, GradCheckReport};
use crate::nn::{Group, Mat, NnError, ParamStore, Tape, Var};
use crate::policy::ActionSpace;

use super::{Episode, LevelSlot, Sample, TrainConfig, TrainError};

/// Mean 0, standard deviation 1 (population), within one minibatch.
/// Invariant to positive affine maps of the input.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // a constant minibatch carries no signal; scale-free otherwise
    if std > 0.0 {
        adv.iter().map(|a| (a - mean) / std).collect()
    } else {
        vec![0.0; adv.len()]
    }
}

/// What the loss needs to know about one row.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoRow<'a> {
    pub action: &'a [f64],
    pub old_log_prob: f64,
    /// Already normalised.
    pub advantage: f64,
    pub ret: f64,
}

/// Minibatch loss and its gradients with respect to the head outputs and
/// the values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clipped: usize,
    pub head_grad: Mat,
    pub value_grad: Mat,
}

/// `-mean(min(rho A, clip(rho) A)) - c_ent mean(H) + c_v mean((V - R)^2)`.
pub fn ppo_loss(space: ActionSpace, heads: &Mat, values: &Mat, rows: &[PpoRow<'_>], sigma: f64, cfg: &TrainConfig) -> LossTerms {
    let n = rows.len() as f64;
    let mut head_grad = Mat::zeros(heads.rows, heads.cols);
    let mut value_grad = Mat::zeros(values.rows, 1);
    let (mut policy, mut value, mut entropy, mut clipped) = (0.0, 0.0, 0.0, 0);
    for (r, row) in rows.iter().enumerate() {
        let h = heads.row(r);
        let rho = (space.log_prob(h, sigma, row.action) - row.old_log_prob).exp();
        let a = row.advantage;
        let plain = rho * a;
        let capped = rho.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        // gradient flows only through the unclipped branch of the min
        let coef = if plain <= capped {
            -rho * a / n
        } else {
            clipped += 1;
            0.0
        };
        policy -= plain.min(capped) / n;
        let ent = space.entropy(h, sigma);
        entropy += ent / n;
        let glp = space.grad_log_prob(h, sigma, row.action);
        let gent = space.grad_entropy(h);
        for ((g, lp), e) in head_grad.row_mut(r).iter_mut().zip(&glp).zip(&gent) {
            *g = coef * lp - cfg.entropy_coef / n * e;
        }
        let diff = values.get(r, 0) - row.ret;
        value += diff * diff / n;
        value_grad.data[r] = 2.0 * cfg.value_coef * diff / n;
    }
    LossTerms {
        loss: policy - cfg.entropy_coef * entropy + cfg.value_coef * value,
        policy,
        value,
        entropy,
        clipped,
        head_grad,
        value_grad,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LevelStats {
    pub samples: usize,
    pub minibatches: usize,
    /// Means over minibatches.
    pub loss: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Graph batch, head rows and goal inputs for a set of samples.
fn prepare(slot: &LevelSlot, schema: ObsSchema, episodes: &[Episode], batch: &[&Sample]) -> Result<(GraphBatch, Vec<usize>, Option<Mat>), TrainError> {
    let mut keys: HashMap<(usize, usize), usize> = HashMap::new();
    let mut snaps = Vec::new();
    let mut group = Vec::with_capacity(batch.len());
    for s in batch {
        let g = *keys.entry((s.episode, s.t)).or_insert_with(|| {
            let ep = &episodes[s.episode];
            snaps.push(Snapshot {
                obs: &ep.obs[s.t],
                graph: &ep.graphs[s.t],
            });
            snaps.len() - 1
        });
        group.push(g);
    }
    let gb = GraphBatch::new(schema, &snaps)?;
    let subs = slot.net.role.rows_are_subs();
    let rows: Vec<usize> = batch
        .iter()
        .zip(&group)
        .map(|(s, &g)| s.row + if subs { gb.sub_offset[g] } else { gb.worker_offset[g] })
        .collect();
    let goals = slot.net.role.needs_goal().then(|| {
        let d = batch[0].goal.len();
        Mat::from_vec(batch.len(), d, batch.iter().flat_map(|s| s.goal.iter().copied()).collect())
    });
    Ok((gb, rows, goals))
}

fn ppo_rows<'a>(batch: &[&'a Sample]) -> Vec<PpoRow<'a>> {
    let adv = normalize_advantages(&batch.iter().map(|s| s.advantage).collect::<Vec<_>>());
    batch
        .iter()
        .zip(adv)
        .map(|(s, a)| PpoRow {
            action: &s.action,
            old_log_prob: s.log_prob,
            advantage: a,
            ret: s.ret,
        })
        .collect()
}

/// Loss of `batch` under the parameters in `store`, with the tape to
/// backpropagate it.
fn batch_loss(
    slot: &LevelSlot,
    store: &ParamStore,
    inputs: &(GraphBatch, Vec<usize>, Option<Mat>),
    rows: &[PpoRow<'_>],
    sigma: f64,
    cfg: &TrainConfig,
) -> Result<(Tape, [(Var, Mat); 2], LossTerms), TrainError> {
    let (gb, idx, goals) = inputs;
    let mut tape = Tape::new();
    let (head, value) = slot.net.forward(&mut tape, store, gb, idx, goals.as_ref())?;
    let terms = ppo_loss(slot.net.space, tape.value(head), tape.value(value), rows, sigma, cfg);
    let seeds = [(head, terms.head_grad.clone()), (value, terms.value_grad.clone())];
    Ok((tape, seeds, terms))
}

/// One optimizer step on `batch`.
fn minibatch_step(slot: &mut LevelSlot, schema: ObsSchema, episodes: &[Episode], batch: &[&Sample], cfg: &TrainConfig, index: usize) -> Result<LossTerms, TrainError> {
    let inputs = prepare(slot, schema, episodes, batch)?;
    let rows = ppo_rows(batch);
    let sigma = episodes[batch[0].episode].sigma;
    let (tape, seeds, terms) = batch_loss(slot, &slot.store, &inputs, &rows, sigma, cfg)?;
    if !terms.loss.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            level: slot.level,
            minibatch: index,
        });
    }
    slot.store.zero_grad();
    tape.backward(&mut slot.store, &seeds)?;
    slot.store.gradient_clip(-cfg.grad_clip, cfg.grad_clip);
    let (actor, critic) = (cfg.actor_lr, cfg.critic_lr);
    slot.store.adam_step_with(|g| match g {
        Group::Actor => actor,
        Group::Critic => critic,
    })?;
    Ok(terms)
}

/// Finite-difference audit of the full PPO loss gradient of one level on
/// `batch`, through every parameter tensor of the level.
pub fn check_level_gradients(
    slot: &mut LevelSlot,
    schema: ObsSchema,
    episodes: &[Episode],
    batch: &[&Sample],
    cfg: &TrainConfig,
    check: GradCheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport, TrainError> {
    let inputs = prepare(slot, schema, episodes, batch)?;
    let rows = ppo_rows(batch);
    let sigma = episodes[batch[0].episode].sigma;
    let mut store = std::mem::take(&mut slot.store);
    let net: &LevelSlot = slot;
    let fail = std::cell::RefCell::new(None);
    let keep = |e: TrainError| {
        *fail.borrow_mut() = Some(e);
        NnError::NonFiniteGradient { param: String::new(), index: 0 }
    };
    let report = gradcheck::check(
        &mut store,
        |s| batch_loss(net, s, &inputs, &rows, sigma, cfg).map(|(_, _, t)| t.loss).map_err(keep),
        |s| {
            let (tape, seeds, _) = batch_loss(net, s, &inputs, &rows, sigma, cfg).map_err(keep)?;
            tape.backward(s, &seeds).map(|_| ())
        },
        check,
        rng,
    );
    slot.store = store;
    match (report, fail.into_inner()) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}

/// Epochs of shuffled minibatch updates of one level.
pub fn ppo_update(slot: &mut LevelSlot, schema: ObsSchema, episodes: &[Episode], samples: &[Sample], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<LevelStats, TrainError> {
    let mut stats = LevelStats {
        samples: samples.len(),
        ..Default::default()
    };
    if samples.is_empty() {
        return Ok(stats);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut clipped = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let terms = minibatch_step(slot, schema, episodes, &batch, cfg, stats.minibatches)?;
            stats.minibatches += 1;
            stats.loss += terms.loss;
            stats.policy += terms.policy;
            stats.value += terms.value;
            stats.entropy += terms.entropy;
            clipped += terms.clipped;
        }
    }
    let m = stats.minibatches as f64;
    stats.loss /= m;
    stats.policy /= m;
    stats.value /= m;
    stats.entropy /= m;
    stats.clip_fraction = clipped as f64 / (samples.len() * cfg.epochs) as f64;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::envs::{BanditConfig, EnvSpec};
    use crate::hiergraph::HierarchySpec;
    use crate::trainer::{assign, run_episode, Model, ModelConfig, RewardScheme, Variant};

    fn no_entropy() -> TrainConfig {
        TrainConfig {
            entropy_coef: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn unit_ratio_gives_vanilla_policy_gradient() {
        let space = ActionSpace::Discrete(3);
        let heads = Mat::from_vec(2, 3, vec![0.1, 0.5, -0.2, 1.0, 0.0, 0.3]);
        let values = Mat::zeros(2, 1);
        let acts = [[1.0], [2.0]];
        let adv = [0.7, -1.3];
        let rows: Vec<PpoRow<'_>> = (0..2)
            .map(|r| PpoRow {
                action: &acts[r],
                old_log_prob: space.log_prob(heads.row(r), 0.0, &acts[r]),
                advantage: adv[r],
                ret: 0.0,
            })
            .collect();
        let terms = ppo_loss(space, &heads, &values, &rows, 0.0, &no_entropy());
        for r in 0..2 {
            let glp = space.grad_log_prob(heads.row(r), 0.0, &acts[r]);
            for (g, lp) in terms.head_grad.row(r).iter().zip(&glp) {
                assert!((g + adv[r] * lp / 2.0).abs() < 1e-15);
            }
        }
        assert_eq!(terms.clipped, 0);
    }

    #[test]
    fn clipped_branch_for_large_ratio() {
        let space = ActionSpace::Discrete(2);
        let heads = Mat::from_vec(1, 2, vec![0.0, 0.0]);
        let a = [0.0];
        let rows = [PpoRow {
            action: &a,
            old_log_prob: space.log_prob(heads.row(0), 0.0, &a) - 1.5f64.ln(),
            advantage: 2.0,
            ret: 0.0,
        }];
        let terms = ppo_loss(space, &heads, &Mat::zeros(1, 1), &rows, 0.0, &no_entropy());
        assert!((terms.policy + 1.2 * 2.0).abs() < 1e-12);
        assert_eq!(terms.clipped, 1);
        assert!(terms.head_grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_sample_loss_by_hand() {
        let cfg = TrainConfig::default();
        let space = ActionSpace::Continuous(1);
        let heads = Mat::from_vec(2, 1, vec![0.0, 1.0]);
        let values = Mat::from_vec(2, 1, vec![0.5, -0.5]);
        let (x0, x1) = ([0.2], [1.0]);
        let sigma: f64 = 0.5;
        // old log-probs make rho_0 = 1 and rho_1 = 0.5
        let rows = [
            PpoRow {
                action: &x0,
                old_log_prob: space.log_prob(&[0.0], sigma, &x0),
                advantage: 1.0,
                ret: 1.0,
            },
            PpoRow {
                action: &x1,
                old_log_prob: space.log_prob(&[1.0], sigma, &x1) + 2f64.ln(),
                advantage: -1.0,
                ret: 0.5,
            },
        ];
        let t = ppo_loss(space, &heads, &values, &rows, sigma, &cfg);
        // sample 0: min(1, 1) = 1; sample 1: min(-0.5, -0.8) = -0.8, clipped
        assert!((t.policy - (-(1.0 - 0.8) / 2.0)).abs() < 1e-12);
        assert_eq!(t.clipped, 1);
        // d/dmu of -rho A / n with rho = 1: -(x - mu) / sigma^2 / 2
        assert!((t.head_grad.data[0] - (-0.2 / 0.25 / 2.0)).abs() < 1e-12);
        assert_eq!(t.head_grad.data[1], 0.0);
        assert!((t.value - (0.25 + 1.0) / 2.0).abs() < 1e-12);
        assert!((t.value_grad.data[0] - (-0.5 / 2.0)).abs() < 1e-12);
        assert!((t.value_grad.data[1] - (-1.0 / 2.0)).abs() < 1e-12);
        let h = space.entropy(&[0.0], sigma);
        assert!((t.loss - (t.policy - 0.01 * h + 0.5 * t.value)).abs() < 1e-12);
    }

    #[test]
    fn normalisation_is_affine_invariant() {
        let a = [0.3, -1.2, 2.5, 0.0, 0.7];
        let base = normalize_advantages(&a);
        let moved: Vec<f64> = a.iter().map(|x| 3.5 * x - 2.0).collect();
        for (x, y) in base.iter().zip(normalize_advantages(&moved)) {
            assert!((x - y).abs() < 1e-12);
        }
        let mean: f64 = base.iter().sum::<f64>() / 5.0;
        let var: f64 = base.iter().map(|x| x * x).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(normalize_advantages(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    fn loss_at(slot: &LevelSlot, schema: ObsSchema, eps: &[Episode], rows: &[Sample], store: &crate::nn::ParamStore, cfg: &TrainConfig) -> f64 {
        let snaps: Vec<Snapshot<'_>> = rows.iter().map(|s| Snapshot { obs: &eps[s.episode].obs[s.t], graph: &eps[s.episode].graphs[s.t] }).collect();
        let gb = GraphBatch::new(schema, &snaps).unwrap();
        let idx: Vec<usize> = (0..rows.len()).map(|i| gb.worker_offset[i] + rows[i].row).collect();
        let mut tape = Tape::new();
        let (h, v) = slot.net.forward(&mut tape, store, &gb, &idx, None).unwrap();
        let adv = normalize_advantages(&rows.iter().map(|s| s.advantage).collect::<Vec<_>>());
        let pr: Vec<PpoRow<'_>> = rows
            .iter()
            .zip(&adv)
            .map(|(s, &a)| PpoRow {
                action: &s.action,
                old_log_prob: s.log_prob,
                advantage: a,
                ret: s.ret,
            })
            .collect();
        ppo_loss(slot.net.space, tape.value(h), tape.value(v), &pr, 0.0, cfg).loss
    }

    #[test]
    fn one_step_update_matches_difference_gradient() {
        // one agent, two bandit steps: a 2-sample minibatch
        let env = EnvSpec::Bandit(BanditConfig { agents: 1, arms: 3, horizon: 2 });
        let mut e = env.build().unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            minibatch: 2,
            ..Default::default()
        };
        let mc = ModelConfig {
            d: 4,
            msg_hidden: 4,
            rounds: 0,
            ..Default::default()
        };
        let mut model = Model::new(Variant::Ippo, HierarchySpec::two_level(1), &mc, e.obs_schema(), e.action_space(), 5).unwrap();
        let ep = run_episode(&model, e.as_mut(), 0.0, false, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (_, mut samples) = assign(&ep, 0, &model, RewardScheme::default(), &cfg).unwrap();
        let rows = samples.remove(&crate::policy::Level::Worker).unwrap();
        assert_eq!(rows.len(), 2);
        let eps = [ep];
        let schema = model.schema;
        let slot = &mut model.levels[0];
        let before = slot.store.clone();
        let h = 1e-6;
        let mut expected = Vec::new();
        for pi in 0..before.params().len() {
            for k in 0..before.params()[pi].len() {
                let mut p = before.clone();
                p.params_mut()[pi].value[k] += h;
                let mut m = before.clone();
                m.params_mut()[pi].value[k] -= h;
                let g = (loss_at(slot, schema, &eps, &rows, &p, &cfg) - loss_at(slot, schema, &eps, &rows, &m, &cfg)) / (2.0 * h);
                expected.push(g.clamp(-1.0, 1.0));
            }
        }
        ppo_update(slot, schema, &eps, &rows, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let moved: Vec<f64> = slot.store.flat_values().iter().zip(before.flat_values()).map(|(a, b)| a - b).collect();
        let mut checked = 0;
        for ((g, d), p) in expected.iter().zip(&moved).zip(before.params().iter().flat_map(|p| std::iter::repeat_n(p.group, p.len()))) {
            let lr = if p == Group::Actor { cfg.actor_lr } else { cfg.critic_lr };
            // first Adam step moves by lr * g / (|g| + eps)
            if g.abs() > 1e-5 {
                assert!((d + lr * g / (g.abs() + 1e-8)).abs() < 1e-9 * lr.max(1.0), "{g} {d}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
