//! Exhaustive trajectory enumeration for the sub-manager and worker
//! identities.
//!
//! Values of the old policies are conditional expectations given the whole
//! history up to the decision, computed over the enumerated tree. Since
//! trajectories are generated in lexicographic order, all trajectories
//! sharing a prefix form one contiguous run.

use super::tabular::{FeudalPolicy, TabularFeudalMdp};
use super::{pairwise_sum, AlignmentReport, Identity, OracleError, FRONTIER_LIMIT};

/// Old and new tables. The manager always comes from `old`; the new sub-
/// manager and worker tables are swapped in one level at a time.
#[derive(Debug, Clone)]
pub struct LowerLevelPolicies {
    pub old: FeudalPolicy,
    pub new: FeudalPolicy,
}

const OLD: usize = 0;
const HAT_S: usize = 1;
const HAT_W: usize = 2;

#[derive(Clone)]
struct Path {
    choices: Vec<u8>,
    p: [f64; 3],
    x: Vec<usize>,
    gm: Vec<usize>,
    gs: Vec<usize>,
    rewards: Vec<Vec<f64>>,
}

struct Tree {
    paths: Vec<Path>,
    /// Prefix length at each manager emission (before the goal is drawn).
    manager_nodes: Vec<usize>,
    /// Prefix length at each sub-manager emission (after any manager goal,
    /// before the sub-manager goals).
    sub_nodes: Vec<usize>,
}

fn branch(paths: Vec<Path>, limit: usize, mut f: impl FnMut(&Path) -> Vec<(u8, [f64; 3], Box<dyn Fn(&mut Path)>)>) -> Result<Vec<Path>, OracleError> {
    let mut out = Vec::new();
    for path in &paths {
        for (c, factor, apply) in f(path) {
            let p = [path.p[0] * factor[0], path.p[1] * factor[1], path.p[2] * factor[2]];
            if p.iter().all(|&q| q == 0.0) {
                continue;
            }
            let mut next = path.clone();
            next.choices.push(c);
            next.p = p;
            apply(&mut next);
            out.push(next);
        }
        if out.len() > limit {
            return Err(OracleError::FrontierExceeded { limit });
        }
    }
    Ok(out)
}

fn build_tree(mdp: &TabularFeudalMdp, pols: &[FeudalPolicy; 3], limit: usize) -> Result<Tree, OracleError> {
    let nw = mdp.num_workers();
    let mut paths = vec![Path {
        choices: Vec::new(),
        p: [1.0; 3],
        x: vec![0; nw],
        gm: vec![0; mdp.num_subs],
        gs: vec![0; nw],
        rewards: Vec::new(),
    }];
    for w in 0..nw {
        let init = mdp.init[w].clone();
        paths = branch(paths, limit, |_| {
            init.iter()
                .enumerate()
                .map(|(x, &p)| (x as u8, [p; 3], Box::new(move |q: &mut Path| q.x[w] = x) as Box<dyn Fn(&mut Path)>))
                .collect()
        })?;
    }
    let mut manager_nodes = Vec::new();
    let mut sub_nodes = Vec::new();
    for t in 0..mdp.horizon {
        if t % mdp.period() == 0 {
            manager_nodes.push(paths[0].choices.len());
            for s in 0..mdp.num_subs {
                paths = branch(paths, limit, |path| {
                    let xi = mdp.joint_index(&path.x.iter().map(|&x| x as u8).collect::<Vec<_>>());
                    (0..mdp.manager_goals)
                        .map(|g| {
                            let f = [0, 1, 2].map(|v| pols[v].manager[s][xi][g]);
                            (g as u8, f, Box::new(move |q: &mut Path| q.gm[s] = g) as Box<dyn Fn(&mut Path)>)
                        })
                        .collect()
                })?;
            }
        }
        if t % mdp.alpha == 0 {
            sub_nodes.push(paths[0].choices.len());
            for w in 0..nw {
                let s = mdp.partition[w];
                paths = branch(paths, limit, |path| {
                    (0..mdp.sub_goals)
                        .map(|g| {
                            let f = [0, 1, 2].map(|v| pols[v].sub[s][path.gm[s]][path.x[w]][g]);
                            (g as u8, f, Box::new(move |q: &mut Path| q.gs[w] = g) as Box<dyn Fn(&mut Path)>)
                        })
                        .collect()
                })?;
            }
        }
        for p in &mut paths {
            p.rewards.push(vec![0.0; nw]);
        }
        for w in 0..nw {
            paths = branch(paths, limit, |path| {
                let x = path.x[w];
                (0..mdp.num_actions)
                    .map(|a| {
                        let f = [0, 1, 2].map(|v| pols[v].worker[w][path.gs[w]][x][a]);
                        let r = mdp.reward[w][x][a];
                        (
                            a as u8,
                            f,
                            Box::new(move |q: &mut Path| *q.rewards.last_mut().unwrap().get_mut(w).unwrap() = r) as Box<dyn Fn(&mut Path)>,
                        )
                    })
                    .collect()
            })?;
            paths = branch(paths, limit, |path| {
                let x = path.x[w];
                let a = *path.choices.last().unwrap() as usize;
                mdp.transition[w][x][a]
                    .iter()
                    .enumerate()
                    .map(|(x2, &p)| (x2 as u8, [p; 3], Box::new(move |q: &mut Path| q.x[w] = x2) as Box<dyn Fn(&mut Path)>))
                    .collect()
            })?;
        }
    }
    Ok(Tree {
        paths,
        manager_nodes,
        sub_nodes,
    })
}

/// Conditional expectation of `f` under the old policy, given the first
/// `len` choices of each trajectory.
fn conditional(tree: &Tree, f: &[f64], len: usize) -> Vec<f64> {
    let paths = &tree.paths;
    let mut out = vec![0.0; paths.len()];
    let mut start = 0;
    while start < paths.len() {
        let mut end = start + 1;
        while end < paths.len() && paths[end].choices[..len] == paths[start].choices[..len] {
            end += 1;
        }
        let w: Vec<f64> = (start..end).map(|i| paths[i].p[OLD]).collect();
        let wf: Vec<f64> = (start..end).map(|i| paths[i].p[OLD] * f[i]).collect();
        let total = pairwise_sum(&w);
        let value = if total > 0.0 { pairwise_sum(&wf) / total } else { 0.0 };
        out[start..end].iter_mut().for_each(|v| *v = value);
        start = end;
    }
    out
}

fn expect(tree: &Tree, variant: usize, f: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<f64> = (0..tree.paths.len()).map(|i| tree.paths[i].p[variant] * f(i)).collect();
    pairwise_sum(&terms)
}

/// Checks the sub-manager and worker identities on `mdp`. `tolerance`
/// `None` only reports the gaps.
pub fn verify_lower_levels(mdp: &TabularFeudalMdp, pols: &LowerLevelPolicies, tolerance: Option<f64>) -> Result<AlignmentReport, OracleError> {
    mdp.validate()?;
    pols.old.validate(mdp)?;
    pols.new.validate(mdp)?;
    let old = &pols.old;
    let variants = [
        old.clone(),
        FeudalPolicy::mix(old, &pols.new, old),
        FeudalPolicy::mix(old, old, &pols.new),
    ];
    let tree = build_tree(mdp, &variants, FRONTIER_LIMIT)?;
    let n = tree.paths.len();
    let nw = mdp.num_workers();
    let cells = mdp.cells();
    let (p, alpha, k) = (mdp.period(), mdp.alpha, mdp.k);
    let jn = mdp.intervals();
    let i_n = mdp.horizon / alpha;

    // manager rewards and old manager values, per trajectory
    let mut r_m = vec![vec![vec![0.0; n]; mdp.num_subs]; jn];
    for (j, row) in r_m.iter_mut().enumerate() {
        for (s, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            for (i, path) in tree.paths.iter().enumerate() {
                let total: f64 = cell.iter().map(|&w| (j * p..(j + 1) * p).map(|t| path.rewards[t][w]).sum::<f64>()).sum();
                row[s][i] = total / cell.len() as f64;
            }
        }
    }
    let mut v_m = vec![vec![vec![0.0; n]; mdp.num_subs]; jn + 1];
    for s in 0..mdp.num_subs {
        let mut ret = vec![0.0; n];
        for j in (0..jn).rev() {
            for i in 0..n {
                ret[i] = r_m[j][s][i] + mdp.gamma * ret[i];
            }
            v_m[j][s] = conditional(&tree, &ret, tree.manager_nodes[j]);
        }
    }
    let a_m = |j: usize, s: usize, i: usize| r_m[j][s][i] + mdp.gamma * v_m[j + 1][s][i] - v_m[j][s][i];

    // sub-manager rewards and old sub-manager values
    let mut r_s = vec![vec![vec![0.0; n]; nw]; i_n];
    for (ii, row) in r_s.iter_mut().enumerate() {
        let j = ii * alpha / p;
        for (w, col) in row.iter_mut().enumerate() {
            let s = mdp.partition[w];
            for (i, path) in tree.paths.iter().enumerate() {
                let local: f64 = (ii * alpha..(ii + 1) * alpha).map(|t| path.rewards[t][w]).sum();
                col[i] = a_m(j, s, i) / k as f64 + local;
            }
        }
    }
    let mut v_s = vec![vec![vec![0.0; n]; nw]; i_n + 1];
    for w in 0..nw {
        let mut ret = vec![0.0; n];
        for ii in (0..i_n).rev() {
            for i in 0..n {
                ret[i] = r_s[ii][w][i] + mdp.gamma_s * ret[i];
            }
            v_s[ii][w] = conditional(&tree, &ret, tree.sub_nodes[ii]);
        }
    }

    let eta = |v: usize| -> f64 {
        let per: Vec<f64> = (0..nw)
            .map(|w| expect(&tree, v, |i| (0..mdp.horizon).map(|t| mdp.gamma.powi((t / p) as i32) * tree.paths[i].rewards[t][w]).sum()))
            .collect();
        pairwise_sum(&per) / nw as f64
    };
    let eta_m_old = pairwise_sum(
        &(0..mdp.num_subs)
            .map(|s| expect(&tree, OLD, |i| (0..jn).map(|j| mdp.gamma.powi(j as i32) * r_m[j][s][i]).sum()))
            .collect::<Vec<_>>(),
    );
    let eta_adv = |v: usize| -> f64 {
        let per: Vec<f64> = (0..mdp.num_subs)
            .filter(|&s| !cells[s].is_empty())
            .map(|s| expect(&tree, v, |i| (0..jn).map(|j| mdp.gamma.powi(j as i32) * a_m(j, s, i)).sum()))
            .collect();
        pairwise_sum(&per)
    };
    let eta_s = |v: usize| -> f64 {
        let per: Vec<f64> = (0..nw)
            .map(|w| expect(&tree, v, |i| (0..i_n).map(|ii| mdp.gamma_s.powi(ii as i32) * r_s[ii][w][i]).sum()))
            .collect();
        pairwise_sum(&per) / nw as f64
    };
    let eta_w = |v: usize| -> f64 {
        let per: Vec<f64> = (0..nw)
            .map(|w| {
                expect(&tree, v, |i| {
                    (0..mdp.horizon)
                        .map(|t| {
                            let ii = t / alpha;
                            let a_s = r_s[ii][w][i] + mdp.gamma_s * v_s[ii + 1][w][i] - v_s[ii][w][i];
                            mdp.gamma_w.powi(t as i32) * a_s / alpha as f64
                        })
                        .sum()
                })
            })
            .collect();
        pairwise_sum(&per) / nw as f64
    };

    let k_m = mdp.k_m();
    let g = mdp.gamma;
    let c_k = if g == 1.0 { 1.0 } else { (1.0 - g.powi(k as i32)) / (k as f64 * (1.0 - g)) };
    let k_s = (c_k + 1.0) / k_m;
    let k_w = if g == 1.0 { 1.0 } else { (1.0 - g.powi(alpha as i32)) / (alpha as f64 * (1.0 - g)) };
    let eta_old = eta(OLD);
    let adv_s = eta_adv(HAT_S);
    let adv_w = eta_adv(HAT_W);
    let mut violations = mdp.homogeneity_violations();
    if mdp.gamma_s != mdp.gamma || mdp.gamma_w != mdp.gamma {
        violations.push("discounts differ across levels".into());
    }
    Ok(AlignmentReport {
        mdp: mdp.name.clone(),
        eta: eta_old,
        eta_m: eta_m_old,
        k_m,
        identities: vec![
            Identity::new("lemma (sampled advantage): eta(hat_s) = eta(old) + eta_adv(hat_s) / k_m", eta(HAT_S), eta_old + adv_s / k_m, Some(1e-9)),
            Identity::new("sub-managers: eta_s(hat_s) = k_s eta_adv(hat_s) + eta(old)", eta_s(HAT_S), k_s * adv_s + eta_old, tolerance),
            Identity::new(
                "workers: eta_w(hat_w) = k_w [k_s eta_adv(hat_w) + eta(old) - eta_s(old)]",
                eta_w(HAT_W),
                k_w * (k_s * adv_w + eta_old - eta_s(OLD)),
                tolerance,
            ),
        ],
        violations,
    })
}
