//! Experiment configuration: a strict TOML schema (unknown keys rejected)
//! covering dataset, attack, defense, and victim settings, plus a stable
//! content hash for report provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacher::{LinkRule, SelectRule};
use crate::bilevel::BilevelConfig;
use crate::defense::OdConfig;
use crate::error::{Error, Result};
use crate::models::{Arch, TrainConfig};
use crate::pool::PoolConfig;
use crate::sba::SbaConfig;
use crate::synth::SbmSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Independent runs per architecture, seeded `seed..seed+runs`.
    #[serde(default = "default_runs")]
    pub runs: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub victim: VictimConfig,
}

fn default_runs() -> u64 {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Sbm,
    Bundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Bundle directory; required when `source = "bundle"`.
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default = "d_blocks")]
    pub blocks: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_p_in")]
    pub p_in: f64,
    #[serde(default = "d_p_out")]
    pub p_out: f64,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_noise")]
    pub noise: f64,
}

fn d_blocks() -> usize {
    4
}
fn d_n() -> usize {
    400
}
fn d_p_in() -> f64 {
    0.05
}
fn d_p_out() -> f64 {
    0.005
}
fn d_dim() -> usize {
    16
}
fn d_noise() -> f64 {
    0.1
}

impl DatasetConfig {
    pub fn sbm_spec(&self, seed: u64) -> SbmSpec {
        SbmSpec {
            blocks: self.blocks,
            n: self.n,
            p_in: self.p_in,
            p_out: self.p_out,
            dim: self.dim,
            noise: self.noise,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Eumc,
    Sba,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "wo-stru")]
    WoStru,
    #[serde(rename = "wo-feat")]
    WoFeat,
    #[serde(rename = "wo-tgt")]
    WoTgt,
    #[serde(rename = "wo-sele")]
    WoSele,
    #[serde(rename = "link-all")]
    LinkAll,
    #[serde(rename = "link-one")]
    LinkOne,
}

pub const ALL_ABLATIONS: [Ablation; 7] = [
    Ablation::None,
    Ablation::WoStru,
    Ablation::WoFeat,
    Ablation::WoTgt,
    Ablation::WoSele,
    Ablation::LinkAll,
    Ablation::LinkOne,
];

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::WoStru => "wo-stru",
            Ablation::WoFeat => "wo-feat",
            Ablation::WoTgt => "wo-tgt",
            Ablation::WoSele => "wo-sele",
            Ablation::LinkAll => "link-all",
            Ablation::LinkOne => "link-one",
        }
    }

    pub fn parse(s: &str) -> Option<Ablation> {
        ALL_ABLATIONS.iter().copied().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "d_method")]
    pub method: AttackMethod,
    #[serde(default = "d_ablation")]
    pub ablation: Ablation,
    /// Size of the poisoned node set.
    #[serde(default = "d_poisoned")]
    pub poisoned: usize,
    #[serde(default = "d_candidates")]
    pub candidates: usize,
    #[serde(default = "d_trigger_size")]
    pub trigger_size: usize,
    #[serde(default = "d_pool_per_category")]
    pub pool_per_category: usize,
    #[serde(default = "d_aps_threshold")]
    pub aps_threshold: f64,
    #[serde(default = "d_tau_a")]
    pub tau_a: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_tau_l")]
    pub tau_l: f64,
    #[serde(default = "d_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "d_outer_iters")]
    pub outer_iters: usize,
    #[serde(default = "d_lr")]
    pub inner_lr: f64,
    #[serde(default = "d_lr")]
    pub outer_lr: f64,
    #[serde(default = "d_hidden")]
    pub surrogate_hidden: usize,
    #[serde(default = "d_surrogate_epochs")]
    pub surrogate_epochs: usize,
    #[serde(default = "d_lr")]
    pub surrogate_lr: f64,
    #[serde(default = "d_surrogate_wd")]
    pub surrogate_weight_decay: f64,
    #[serde(default = "d_surrogate_dropout")]
    pub surrogate_dropout: f64,
    #[serde(default = "d_minibatch")]
    pub minibatch: usize,
    #[serde(default = "d_plateau")]
    pub plateau_window: usize,
    #[serde(default)]
    pub cold_restart: bool,
    /// Edge probability of the baseline's random trigger.
    #[serde(default = "d_p_edge")]
    pub p_edge: f64,
}

fn d_method() -> AttackMethod {
    AttackMethod::Eumc
}
fn d_ablation() -> Ablation {
    Ablation::None
}
fn d_poisoned() -> usize {
    20
}
fn d_candidates() -> usize {
    300
}
fn d_trigger_size() -> usize {
    5
}
fn d_pool_per_category() -> usize {
    10
}
fn d_aps_threshold() -> f64 {
    0.2
}
fn d_tau_a() -> f64 {
    0.2
}
fn d_alpha() -> f64 {
    5.0
}
fn d_tau_l() -> f64 {
    0.6
}
fn d_inner_steps() -> usize {
    5
}
fn d_outer_iters() -> usize {
    200
}
fn d_lr() -> f64 {
    0.01
}
fn d_hidden() -> usize {
    64
}
fn d_minibatch() -> usize {
    256
}
fn d_plateau() -> usize {
    20
}
fn d_surrogate_epochs() -> usize {
    100
}
fn d_surrogate_wd() -> f64 {
    5e-3
}
fn d_surrogate_dropout() -> f64 {
    0.5
}
fn d_p_edge() -> f64 {
    0.3
}

impl Default for AttackConfig {
    fn default() -> Self {
        toml::from_str("").expect("attack defaults")
    }
}

impl AttackConfig {
    /// Evaluation/optimization trigger selection under this ablation.
    pub fn select_rule(&self) -> SelectRule {
        match self.ablation {
            Ablation::WoSele => SelectRule::Random,
            _ => SelectRule::BestScore,
        }
    }

    /// Host-connection rule under this ablation.
    pub fn link_rule(&self) -> LinkRule {
        match self.ablation {
            Ablation::LinkAll => LinkRule::All,
            Ablation::LinkOne => LinkRule::One,
            _ => LinkRule::Threshold(self.tau_a),
        }
    }

    pub fn pool_config(&self, seed: u64) -> PoolConfig {
        PoolConfig {
            n_candidates: self.candidates,
            trigger_size: self.trigger_size,
            n_pool: self.pool_per_category,
            aps_threshold: self.aps_threshold,
            tau_a: self.tau_a,
            seed,
        }
    }

    pub fn bilevel_config(&self, seed: u64) -> BilevelConfig {
        BilevelConfig {
            alpha: self.alpha,
            tau_l: self.tau_l,
            inner_steps: self.inner_steps,
            outer_iters: if self.ablation == Ablation::WoFeat {
                0
            } else {
                self.outer_iters
            },
            inner_lr: self.inner_lr,
            outer_lr: self.outer_lr,
            hidden: self.surrogate_hidden,
            minibatch: self.minibatch,
            select: self.select_rule(),
            link: self.link_rule(),
            plateau_window: self.plateau_window,
            cold_restart: self.cold_restart,
            seed,
        }
    }

    pub fn sba_config(&self, seed: u64) -> SbaConfig {
        SbaConfig {
            trigger_size: self.trigger_size,
            p_edge: self.p_edge,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefenseMethod {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "prune")]
    Prune,
    #[serde(rename = "prune-ld")]
    PruneLd,
    #[serde(rename = "od")]
    Od,
}

impl DefenseMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DefenseMethod::None => "none",
            DefenseMethod::Prune => "prune",
            DefenseMethod::PruneLd => "prune-ld",
            DefenseMethod::Od => "od",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    #[serde(default = "d_defense_method")]
    pub method: DefenseMethod,
    #[serde(default = "d_prune_fraction")]
    pub prune_fraction: f64,
    /// When set, prune by cosine cutoff instead of by fraction.
    #[serde(default)]
    pub prune_threshold: Option<f64>,
    #[serde(default = "d_od_rho")]
    pub od_rho: f64,
    #[serde(default = "d_od_lambda")]
    pub od_lambda: f64,
    #[serde(default = "d_od_epochs")]
    pub od_epochs: usize,
}

fn d_defense_method() -> DefenseMethod {
    DefenseMethod::None
}
fn d_prune_fraction() -> f64 {
    0.1
}
fn d_od_rho() -> f64 {
    0.05
}
fn d_od_lambda() -> f64 {
    0.5
}
fn d_od_epochs() -> usize {
    100
}

impl Default for DefenseConfig {
    fn default() -> Self {
        toml::from_str("").expect("defense defaults")
    }
}

impl DefenseConfig {
    pub fn prune_mode(&self) -> crate::defense::PruneMode {
        match self.prune_threshold {
            Some(tau) => crate::defense::PruneMode::Threshold(tau),
            None => crate::defense::PruneMode::Percentile(self.prune_fraction),
        }
    }

    pub fn od_config(&self, seed: u64) -> OdConfig {
        OdConfig {
            rho: self.od_rho,
            lambda: self.od_lambda,
            epochs: self.od_epochs,
            seed,
            ..OdConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimConfig {
    #[serde(default = "d_archs")]
    pub archs: Vec<String>,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
}

fn d_archs() -> Vec<String> {
    vec!["gcn".into(), "sage".into(), "gat".into()]
}
fn d_epochs() -> usize {
    200
}
fn d_weight_decay() -> f64 {
    5e-4
}
fn d_dropout() -> f64 {
    0.5
}

impl Default for VictimConfig {
    fn default() -> Self {
        toml::from_str("").expect("victim defaults")
    }
}

impl VictimConfig {
    pub fn arch_list(&self) -> Result<Vec<Arch>> {
        self.archs
            .iter()
            .map(|s| {
                Arch::parse(s)
                    .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
            })
            .collect()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            hidden: self.hidden,
            dropout: self.dropout,
            seed,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be ≥ 1".into()));
        }
        if self.dataset.source == DatasetSource::Bundle && self.dataset.path.is_none() {
            return Err(Error::Config("dataset.source = \"bundle\" needs dataset.path".into()));
        }
        let a = &self.attack;
        if a.method != AttackMethod::None {
            if a.poisoned == 0 {
                return Err(Error::Config("attack.poisoned must be ≥ 1".into()));
            }
            if a.trigger_size == 0 {
                return Err(Error::Config("attack.trigger_size must be ≥ 1".into()));
            }
        }
        for (name, v, lo, hi) in [
            ("attack.tau_a", a.tau_a, -1.0, 1.0),
            ("attack.tau_l", a.tau_l, -1.0, 1.0),
            ("attack.p_edge", a.p_edge, 0.0, 1.0),
            ("defense.prune_fraction", self.defense.prune_fraction, 0.0, 1.0),
            ("defense.od_lambda", self.defense.od_lambda, 0.0, 1.0),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        if a.alpha < 0.0 {
            return Err(Error::Config("attack.alpha must be ≥ 0".into()));
        }
        if self.defense.od_rho >= 1.0 || self.defense.od_rho < 0.0 {
            return Err(Error::Config("defense.od_rho must be in [0, 1)".into()));
        }
        if self.victim.archs.is_empty() {
            return Err(Error::Config("victim.archs must not be empty".into()));
        }
        self.victim.arch_list()?;
        if !(0.0..1.0).contains(&self.victim.dropout) {
            return Err(Error::Config("victim.dropout must be in [0, 1)".into()));
        }
        if self.victim.epochs == 0 {
            return Err(Error::Config("victim.epochs must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Canonical serialization used for hashing and provenance.
    pub fn canonical_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        fnv1a_hex(&self.canonical_string())
    }
}

/// 64-bit FNV-1a, hex-encoded. Stable across platforms and releases,
/// unlike the standard library's default hasher.
pub fn fnv1a_hex(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in text.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[dataset]\nsource = \"sbm\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.runs, 5);
        assert_eq!(cfg.dataset.blocks, 4);
        assert_eq!(cfg.dataset.n, 400);
        assert_eq!(cfg.attack.method, AttackMethod::Eumc);
        assert_eq!(cfg.attack.alpha, 5.0);
        assert_eq!(cfg.attack.poisoned, 20);
        assert_eq!(cfg.defense.method, DefenseMethod::None);
        assert_eq!(cfg.victim.archs, vec!["gcn", "sage", "gat"]);
        assert_eq!(cfg.victim.dropout, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = "typo = 1\n[dataset]\nsource = \"sbm\"\n";
        assert!(parse_config(top).is_err());
        let nested = "[dataset]\nsource = \"sbm\"\n[attack]\nalpha2 = 3.0\n";
        assert!(parse_config(nested).is_err());
    }

    #[test]
    fn bundle_requires_path() {
        let cfg = "[dataset]\nsource = \"bundle\"\n";
        let err = parse_config(cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ok = "[dataset]\nsource = \"bundle\"\npath = \"data/x\"\n";
        assert!(parse_config(ok).is_ok());
    }

    #[test]
    fn ablation_and_method_names_parse() {
        let text = "[dataset]\nsource = \"sbm\"\n[attack]\nmethod = \"sba\"\nablation = \"wo-stru\"\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.attack.method, AttackMethod::Sba);
        assert_eq!(cfg.attack.ablation, Ablation::WoStru);
        for a in ALL_ABLATIONS {
            assert_eq!(Ablation::parse(a.as_str()), Some(a));
        }
    }

    #[test]
    fn ablations_map_to_rules() {
        let mut attack = AttackConfig::default();
        attack.ablation = Ablation::WoSele;
        assert_eq!(attack.select_rule(), SelectRule::Random);
        attack.ablation = Ablation::LinkOne;
        assert_eq!(attack.link_rule(), LinkRule::One);
        attack.ablation = Ablation::WoFeat;
        assert_eq!(attack.bilevel_config(0).outer_iters, 0);
        attack.ablation = Ablation::None;
        assert_eq!(attack.link_rule(), LinkRule::Threshold(0.2));
        assert_eq!(attack.bilevel_config(0).outer_iters, 200);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for bad in [
            "[dataset]\nsource = \"sbm\"\n[attack]\ntau_a = 1.5\n",
            "[dataset]\nsource = \"sbm\"\n[attack]\nalpha = -1.0\n",
            "[dataset]\nsource = \"sbm\"\n[defense]\nod_rho = 1.0\n",
            "[dataset]\nsource = \"sbm\"\n[victim]\ndropout = 1.0\n",
            "[dataset]\nsource = \"sbm\"\n[victim]\narchs = [\"vgg\"]\n",
            "[dataset]\nsource = \"sbm\"\nruns = 0\n",
        ] {
            assert!(parse_config(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(fnv1a_hex(""), "cbf29ce484222325");
        assert_eq!(fnv1a_hex("a"), "af63dc4c8601ec8c");
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(MINIMAL).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config("seed = 1\n[dataset]\nsource = \"sbm\"\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let text = "seed = 3\nruns = 2\n[dataset]\nsource = \"sbm\"\nn = 100\n[attack]\nmethod = \"eumc\"\nouter_iters = 30\n[defense]\nmethod = \"prune\"\n[victim]\narchs = [\"gcn\"]\n";
        let cfg = parse_config(text).unwrap();
        let back = parse_config(&cfg.canonical_string()).unwrap();
        assert_eq!(cfg, back);
    }
}
