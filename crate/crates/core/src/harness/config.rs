//! Run configuration: a TOML file plus `--set key=value` overrides, merged
//! over defaults that depend on the variant and the environment kind.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::envs::{BanditConfig, EnvSpec, LbfwsPreset, SamplingConfig};
use crate::hiergraph::HierarchySpec;
use crate::rewards::{RewardFlags, TruncationScheme};
use crate::trainer::{ModelConfig, RewardScheme, TrainConfig, Trainer, Variant};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("bad override `{0}`: expected key.path=value")]
    Set(String),
    #[error("`{first}` conflicts with `{second}`: {reason}")]
    Conflict {
        first: &'static str,
        second: String,
        reason: &'static str,
    },
    #[error("`{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub levels: u8,
    /// Steps per sub-manager goal (per manager goal in a 2-level hierarchy).
    pub alpha: usize,
    /// Sub-manager goals per manager goal.
    pub k: usize,
    pub dynamic: bool,
}

impl HierarchyConfig {
    pub fn spec(&self) -> HierarchySpec {
        if self.levels == 3 {
            HierarchySpec::three_level(self.alpha, self.k, self.dynamic)
        } else {
            HierarchySpec::two_level(self.alpha)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Workers also see the external reward.
    pub fl: bool,
    /// Sub-managers lose the local external term.
    pub nl: bool,
    /// Sub-managers and workers learn from external rewards only.
    pub er: bool,
    /// No sub-manager values in the worker reward.
    pub nv: bool,
    /// Drop the sub-manager level.
    #[serde(rename = "2l")]
    pub two_level: bool,
    /// Freeze the hierarchy at the start of each episode.
    pub sg: bool,
    /// `"(T_w, 1)"`, `"(T_s, 2)"`, `"(T_w, inf)"`. Defaults to `(T_w, 1)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<String>,
}

/// Reads `(T_w, t*)` or `(T_s, t*)`; `t*` may be `inf`.
pub fn parse_truncation(s: &str) -> Option<TruncationScheme> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (kind, t) = inner.split_once(',')?;
    let t_star = match t.trim() {
        "inf" | "none" => None,
        n => Some(n.parse().ok()?),
    };
    match kind.trim() {
        "T_w" => Some(TruncationScheme::worker(t_star)),
        "T_s" => Some(TruncationScheme::submanager(t_star)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub env: EnvSpec,
    /// Absent for flat variants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn default_env(kind: &str) -> Option<EnvSpec> {
    Some(match kind {
        "lbfws" => EnvSpec::Lbfws(LbfwsPreset::Mini.config()),
        "sampling" => EnvSpec::Sampling(SamplingConfig::default()),
        "bandit" => EnvSpec::Bandit(BanditConfig {
            agents: 1,
            arms: 3,
            horizon: 1,
        }),
        _ => None?,
    })
}

impl RunConfig {
    /// Defaults for one variant on one environment kind.
    pub fn defaults(variant: Variant, env: EnvSpec) -> Self {
        let continuous = matches!(env, EnvSpec::Sampling(_));
        let hierarchy = variant.is_hierarchical().then_some(match env {
            EnvSpec::Sampling(_) => HierarchyConfig {
                levels: 3,
                alpha: 5,
                k: 2,
                dynamic: true,
            },
            EnvSpec::Lbfws(_) => HierarchyConfig {
                levels: 2,
                alpha: 5,
                k: 1,
                dynamic: false,
            },
            EnvSpec::Bandit(_) => HierarchyConfig {
                levels: 2,
                alpha: 1,
                k: 1,
                dynamic: false,
            },
        });
        let mut model = ModelConfig::default();
        let mut train = TrainConfig {
            episodes_per_update: if continuous { 32 } else { 40 },
            ..TrainConfig::default()
        };
        match variant {
            Variant::Himppo => {}
            Variant::Ippo => {
                model.rounds = 0;
                model.actor_hidden = vec![128, 64];
                model.critic_hidden = vec![128, 64];
                model.separate_critic = true;
                train.actor_lr = 5e-4;
                train.critic_lr = 1e-5;
                train.grad_clip = 5.0;
            }
            _ => {
                model.rounds = 2;
                model.actor_hidden = vec![64, 32];
                model.critic_hidden = vec![64, 32];
                model.separate_critic = true;
                train.actor_lr = 1e-4;
                train.critic_lr = 1e-4;
                train.grad_clip = 5.0;
            }
        }
        Self {
            seed: 0,
            variant,
            output: None,
            env,
            hierarchy,
            ablation: variant.is_hierarchical().then(AblationConfig::default),
            model,
            train,
        }
    }

    pub fn hierarchy_spec(&self) -> HierarchySpec {
        self.hierarchy.map_or(HierarchySpec::two_level(1), |h| h.spec())
    }

    pub fn reward_scheme(&self) -> RewardScheme {
        let mut scheme = RewardScheme::default();
        if let Some(a) = &self.ablation {
            scheme.flags = RewardFlags {
                full_local: a.fl,
                no_local: a.nl,
                external_only: a.er,
            };
            if a.nv {
                scheme.truncation = TruncationScheme::no_values();
            } else if let Some(t) = a.truncation.as_deref().and_then(parse_truncation) {
                scheme.truncation = t;
            }
        }
        scheme
    }

    pub fn trainer(&self) -> anyhow::Result<Trainer> {
        Ok(Trainer::new(
            self.env.clone(),
            self.variant,
            self.hierarchy_spec(),
            &self.model,
            self.reward_scheme(),
            self.train.clone(),
            self.seed,
        )?)
    }

    /// Canonical TOML form, as written into run directories.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises to TOML")
    }

    /// Checks that need the merged values.
    fn check(&self) -> Result<(), ConfigError> {
        let invalid = |key, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        if let (Some(h), Some(a)) = (&self.hierarchy, &self.ablation) {
            if !(2..=3).contains(&h.levels) {
                return invalid("hierarchy.levels", "must be 2 or 3");
            }
            if h.levels == 2 {
                for (on, key) in [(a.nl, "ablation.nl"), (a.nv, "ablation.nv"), (a.sg, "ablation.sg"), (a.truncation.is_some(), "ablation.truncation")] {
                    if on {
                        return invalid(key, "needs a 3-level hierarchy");
                    }
                }
            }
            if let Some(t) = &a.truncation {
                if parse_truncation(t).is_none() {
                    return invalid("ablation.truncation", &format!("cannot read {t:?}, expected e.g. \"(T_w, 1)\""));
                }
            }
            if h.levels == 3 && !matches!(self.env, EnvSpec::Sampling(_)) {
                return invalid("hierarchy.levels", "3 levels need positions in the continuous arena");
            }
        }
        self.model.validate().map_err(|e| ConfigError::Invalid {
            key: "model",
            reason: e.to_string(),
        })?;
        self.train.validate().map_err(|e| ConfigError::Invalid {
            key: "train",
            reason: e.to_string(),
        })?;
        if let Err(e) = self.env.build() {
            return invalid("env", &e.to_string());
        }
        Ok(())
    }
}

fn lookup<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

fn is_true(table: &Table, path: &str) -> bool {
    lookup(table, path).and_then(Value::as_bool) == Some(true)
}

/// Exclusivity rules, checked on what the user wrote.
fn conflicts(user: &Table) -> Result<(), ConfigError> {
    let conflict = |first, second: String, reason| Err(ConfigError::Conflict { first, second, reason });
    let variant = lookup(user, "variant").and_then(Value::as_str).unwrap_or("himppo");
    if variant != "himppo" {
        for section in ["hierarchy", "ablation"] {
            if let Some(t) = lookup(user, section).and_then(Value::as_table) {
                let key = t.keys().next().map_or(section.to_string(), |k| format!("{section}.{k}"));
                return conflict("variant", key, "flat variants have no hierarchy or reward ablations");
            }
        }
    }
    if is_true(user, "ablation.er") {
        for key in ["ablation.fl", "ablation.nl"] {
            if is_true(user, key) {
                return conflict("ablation.er", key.into(), "external rewards replace the assigned rewards altogether");
            }
        }
    }
    if is_true(user, "ablation.nv") && lookup(user, "ablation.truncation").is_some() {
        return conflict("ablation.nv", "ablation.truncation".into(), "NV fixes the truncation");
    }
    if is_true(user, "ablation.2l") {
        if lookup(user, "hierarchy.levels").and_then(Value::as_integer) == Some(3) {
            return conflict("ablation.2l", "hierarchy.levels".into(), "2L removes the sub-manager level");
        }
        for key in ["ablation.nl", "ablation.nv", "ablation.sg"] {
            if is_true(user, key) {
                return conflict("ablation.2l", key.into(), "the ablation acts on the sub-manager level, which 2L removes");
            }
        }
        if lookup(user, "ablation.truncation").is_some() {
            return conflict("ablation.2l", "ablation.truncation".into(), "the ablation acts on the sub-manager level, which 2L removes");
        }
    }
    if is_true(user, "ablation.sg") && is_true(user, "hierarchy.dynamic") {
        return conflict("ablation.sg", "hierarchy.dynamic".into(), "SG freezes the hierarchy");
    }
    Ok(())
}

/// Parses the value of an override as TOML, falling back to a bare string.
fn override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_set(table: &mut Table, set: &str) -> Result<(), ConfigError> {
    let (key, raw) = set.split_once('=').ok_or_else(|| ConfigError::Set(set.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Set(set.to_string()));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry.as_table_mut().ok_or_else(|| ConfigError::Set(set.to_string()))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a config text with overrides applied on top.
pub fn parse_config(text: &str, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let mut user: Table = text.parse()?;
    for s in sets {
        apply_set(&mut user, s)?;
    }
    conflicts(&user)?;
    let variant: Variant = match user.get("variant") {
        Some(v) => v.clone().try_into()?,
        None => Variant::Himppo,
    };
    let kind = lookup(&user, "env.kind").and_then(Value::as_str).unwrap_or("lbfws");
    let env = default_env(kind).ok_or_else(|| ConfigError::Invalid {
        key: "env.kind",
        reason: format!("unknown environment {kind:?}"),
    })?;
    let defaults = RunConfig::defaults(variant, env);
    let mut merged = Table::try_from(&defaults).expect("defaults serialise to TOML");
    merge(&mut merged, user);
    let mut cfg: RunConfig = merged.try_into()?;
    if let (Some(h), Some(a)) = (cfg.hierarchy.as_mut(), cfg.ablation.as_ref()) {
        if a.two_level {
            h.levels = 2;
        }
        if a.sg {
            h.dynamic = false;
        }
    }
    cfg.check()?;
    Ok(cfg)
}

/// Reads the file (or nothing, for the defaults) and applies the overrides.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.display().to_string(),
            source,
        })?,
        None => String::new(),
    };
    parse_config(&text, sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::Truncation;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("", &[]).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.variant, Variant::Himppo);
        assert_eq!(cfg.env, EnvSpec::Lbfws(LbfwsPreset::Mini.config()));
        assert_eq!(cfg.hierarchy.unwrap().levels, 2);
        assert_eq!(cfg.reward_scheme(), RewardScheme::default());
    }

    #[test]
    fn flat_variant_with_hierarchy_names_both_keys() {
        let err = parse_config("variant = \"ippo\"\n[hierarchy]\nlevels = 2\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`variant`") && msg.contains("`hierarchy.levels`"), "{msg}");
        let err = parse_config("", &["variant=gppo-star".into(), "ablation.fl=true".into()]).unwrap_err();
        assert!(err.to_string().contains("ablation.fl"));
    }

    #[test]
    fn truncation_strings() {
        assert_eq!(parse_truncation("(T_w, 1)"), Some(TruncationScheme::worker(Some(1))));
        assert_eq!(parse_truncation("(T_s,3)"), Some(TruncationScheme::submanager(Some(3))));
        assert_eq!(parse_truncation("(T_w, inf)"), Some(TruncationScheme::worker(None)));
        assert_eq!(parse_truncation("T_w 1"), None);
        let cfg = parse_config("[env]\nkind = \"sampling\"\n[ablation]\ntruncation = \"(T_s, 2)\"\n", &[]).unwrap();
        assert_eq!(cfg.reward_scheme().truncation, TruncationScheme::submanager(Some(2)));
    }

    #[test]
    fn nv_routes_to_no_values() {
        let cfg = parse_config("[env]\nkind = \"sampling\"\n[ablation]\nnv = true\n", &[]).unwrap();
        assert_eq!(cfg.reward_scheme().truncation.variant, Truncation::None);
        let err = parse_config("[env]\nkind = \"sampling\"\n[ablation]\nnv = true\ntruncation = \"(T_w, 1)\"\n", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Conflict { first: "ablation.nv", .. }));
    }

    #[test]
    fn exclusive_flags() {
        let bad = [
            "[ablation]\ner = true\nfl = true\n",
            "[env]\nkind = \"sampling\"\n[ablation]\ner = true\nnl = true\n",
            "[env]\nkind = \"sampling\"\n[hierarchy]\nlevels = 3\n[ablation]\n2l = true\n",
            "[env]\nkind = \"sampling\"\n[ablation]\n2l = true\nsg = true\n",
            "[env]\nkind = \"sampling\"\n[hierarchy]\ndynamic = true\n[ablation]\nsg = true\n",
        ];
        for text in bad {
            assert!(matches!(parse_config(text, &[]), Err(ConfigError::Conflict { .. })), "{text}");
        }
        // sub-manager ablations on a 2-level hierarchy
        assert!(matches!(parse_config("[ablation]\nnl = true\n", &[]), Err(ConfigError::Invalid { key: "ablation.nl", .. })));
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(parse_config("[train]\nlearning_rate = 1.0\n", &[]).is_err());
        assert!(parse_config("colour = 1\n", &[]).is_err());
        assert!(parse_config("[env]\nkind = \"lbfws\"\nwalls = 3\n", &[]).is_err());
    }

    #[test]
    fn overrides_and_env_switch() {
        let cfg = parse_config("", &["env.kind=sampling".into(), "train.epochs=3".into(), "seed=7".into()]).unwrap();
        assert_eq!(cfg.env, EnvSpec::Sampling(SamplingConfig::default()));
        assert_eq!(cfg.hierarchy.unwrap().levels, 3);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.episodes_per_update, 32);
        assert_eq!(cfg.seed, 7);
        assert!(matches!(apply_set(&mut Table::new(), "nonsense"), Err(ConfigError::Set(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        for text in [
            "",
            "variant = \"ippo\"",
            "variant = \"gppo-cycle\"\n[env]\nkind = \"sampling\"",
            "[env]\nkind = \"sampling\"\n[ablation]\n2l = true",
            "[env]\nkind = \"sampling\"\n[ablation]\nsg = true\nnl = true",
        ] {
            let cfg = parse_config(text, &[]).unwrap();
            let again = parse_config(&cfg.to_toml(), &[]).unwrap();
            assert_eq!(cfg, again, "{text}");
        }
    }

    #[test]
    fn two_level_ablation_drops_the_sub_level() {
        let cfg = parse_config("[env]\nkind = \"sampling\"\n[ablation]\n2l = true", &[]).unwrap();
        let h = cfg.hierarchy_spec();
        assert_eq!(h.levels, 2);
        assert_eq!(h.alpha, 5);
    }
}
