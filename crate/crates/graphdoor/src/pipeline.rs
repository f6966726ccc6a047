//! End-to-end experiment pipeline: dataset, split, attack, defense,
//! victim training, and inductive evaluation.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacher::{Attached, LinkRule};
use crate::bilevel::{run_bilevel, BilevelLog};
use crate::config::{
    Ablation, AttackConfig, AttackMethod, DatasetSource, DefenseConfig, DefenseMethod,
    ExperimentConfig,
};
use crate::defense::{edge_similarities, od_filter, prune, prune_ld, DefenseReport};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, IdMap, NodeOrigin, Role};
use crate::linalg::DenseMatrix;
use crate::metrics::{compute_asr, compute_clean_accuracy, InductiveEval, TriggerSource};
use crate::models::{train_model, Arch, Model, TrainConfig};
use crate::pool::{build_pool, build_trigger_pool, compute_aps, SubgraphTrigger, TriggerPool};
use crate::report::{DefenseSummary, EvalReport, SimilaritySummary};
use crate::sampling::{sample_candidate_pool, select_poisoned_nodes};
use crate::sba::{sba_attack, SbaTrigger};
use crate::synth::generate_sbm;

/// Derive a per-stage seed from the run seed so stages draw from
/// decorrelated streams. FNV-1a over the seed bytes plus a stage tag.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in seed.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Assign roles to `n` nodes: a fifth are held out for inductive
/// evaluation (half attack targets, half clean probes). Of the rest, a
/// fifth carry labels — half train, a quarter validation, the remainder
/// test — and everything else is unlabeled.
pub fn split_roles(n: usize, seed: u64) -> Vec<Role> {
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(&mut ids[..], &mut rng);

    let masked = n / 5;
    let target = masked / 2;
    let remaining = n - masked;
    let labeled = remaining / 5;
    let l_train = labeled / 2;
    let l_val = labeled / 4;

    let mut roles = vec![Role::Unlabeled; n];
    for (pos, &v) in ids.iter().enumerate() {
        roles[v] = if pos < target {
            Role::Target
        } else if pos < masked {
            Role::Clean
        } else if pos < masked + l_train {
            Role::Train
        } else if pos < masked + l_train + l_val {
            Role::Val
        } else if pos < masked + labeled {
            Role::Test
        } else {
            Role::Unlabeled
        };
    }
    roles
}

/// Overwrite the dataset's split with a fresh role assignment. Fails if a
/// node drawn into a labeled role has no label.
pub fn apply_split(ds: &mut Dataset, seed: u64) -> Result<()> {
    ds.split = split_roles(ds.num_nodes(), seed);
    ds.validate()
}

/// The training graph an attacker and victim both see: held-out nodes
/// dropped, labels visible only on train/val/test nodes.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<Option<usize>>,
    /// View node id to original dataset id.
    pub idmap: IdMap,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

pub fn training_view(ds: &Dataset) -> Result<TrainView> {
    let keep: Vec<usize> = (0..ds.num_nodes())
        .filter(|&v| !ds.split[v].is_held_out())
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (sub, idmap) = ds.induced(&keep)?;
    let train = sub.role_indices(Role::Train);
    let val = sub.role_indices(Role::Val);
    let test = sub.role_indices(Role::Test);
    let unlabeled = sub.role_indices(Role::Unlabeled);
    let labels = (0..sub.num_nodes())
        .map(|v| match sub.split[v] {
            Role::Train | Role::Val | Role::Test => sub.labels[v],
            _ => None,
        })
        .collect();
    Ok(TrainView {
        graph: sub.graph,
        features: sub.features,
        labels,
        idmap,
        train,
        val,
        test,
        unlabeled,
    })
}

/// Everything an attack run produces. With `method = "none"` the attached
/// graph is just a copy of the clean training view.
#[derive(Debug, Clone)]
pub struct AttackArtifacts {
    pub att: Attached,
    /// `(view host id, category)` pairs; hosts are labeled with these
    /// categories in the victim's training data.
    pub assignments: Vec<(usize, usize)>,
    pub pool: Option<TriggerPool>,
    pub sba_triggers: Option<Vec<SbaTrigger>>,
    pub surrogate: Option<Model>,
    pub poisoned: Vec<usize>,
    pub log: Option<BilevelLog>,
}

impl AttackArtifacts {
    fn clean(view: &TrainView) -> Self {
        AttackArtifacts {
            att: Attached::new(view.graph.clone(), view.features.clone()),
            assignments: Vec::new(),
            pool: None,
            sba_triggers: None,
            surrogate: None,
            poisoned: Vec::new(),
            log: None,
        }
    }

    /// How evaluation should attach triggers, if an attack ran.
    pub fn trigger_source(&self, attack: &AttackConfig) -> Option<TriggerSource<'_>> {
        if let Some(pool) = &self.pool {
            return Some(TriggerSource::Pool {
                pool,
                select: attack.select_rule(),
                link: attack.link_rule(),
            });
        }
        self.sba_triggers
            .as_deref()
            .map(|triggers| TriggerSource::Sba { triggers })
    }
}

/// Train the clean selection surrogate and cluster its logits to pick the
/// poisoned node set from the unlabeled pool.
fn pick_poisoned(
    view: &TrainView,
    num_classes: usize,
    attack: &AttackConfig,
    surrogate_train: &TrainConfig,
    seed: u64,
) -> Result<(Vec<usize>, Model)> {
    let mut tc = surrogate_train.clone();
    tc.dropout = 0.0;
    tc.seed = sub_seed(seed, "surrogate");
    let (model, _) = train_model(
        Arch::Gcn,
        &view.graph,
        &view.features,
        &view.labels,
        &view.train,
        &view.val,
        num_classes,
        &tc,
    )?;
    let embeddings = model.forward(&view.graph, &view.features)?.logits;
    let poisoned = select_poisoned_nodes(
        &embeddings,
        &view.unlabeled,
        attack.poisoned,
        sub_seed(seed, "select"),
    )?;
    Ok((poisoned, model))
}

/// Candidate pool with uniformly random target categories instead of the
/// shift-based assignment, skipping the shift threshold entirely.
fn build_pool_random_targets(
    model: &Model,
    view: &TrainView,
    poisoned: &[usize],
    num_classes: usize,
    cfg: &crate::pool::PoolConfig,
) -> Result<TriggerPool> {
    let candidates = sample_candidate_pool(
        &view.graph,
        &view.features,
        &view.unlabeled,
        cfg.n_candidates,
        cfg.trigger_size,
        cfg.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "random-target"));
    let mut triggers = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        let aps = compute_aps(
            model,
            &view.graph,
            &view.features,
            cand,
            poisoned,
            LinkRule::Threshold(cfg.tau_a),
        )?;
        let target_category = rng.gen_range(0..num_classes);
        triggers.push(SubgraphTrigger {
            source_nodes: cand.nodes.clone(),
            internal_edges: cand.internal_edges.clone(),
            features: cand.features.clone(),
            score: aps[target_category],
            aps,
            target_category,
        });
    }
    Ok(build_pool(triggers, cfg.n_pool, num_classes))
}

/// Run the configured attack against a training view.
pub fn run_attack(
    view: &TrainView,
    num_classes: usize,
    attack: &AttackConfig,
    surrogate_train: &TrainConfig,
    seed: u64,
) -> Result<AttackArtifacts> {
    match attack.method {
        AttackMethod::None => Ok(AttackArtifacts::clean(view)),
        AttackMethod::Sba => {
            let (poisoned, _) = pick_poisoned(view, num_classes, attack, surrogate_train, seed)?;
            let (triggers, att, assignments) = sba_attack(
                &view.graph,
                &view.features,
                &poisoned,
                num_classes,
                &attack.sba_config(sub_seed(seed, "sba")),
            )?;
            Ok(AttackArtifacts {
                att,
                assignments,
                pool: None,
                sba_triggers: Some(triggers),
                surrogate: None,
                poisoned,
                log: None,
            })
        }
        AttackMethod::Eumc => {
            let (poisoned, surrogate) =
                pick_poisoned(view, num_classes, attack, surrogate_train, seed)?;
            let pool_cfg = attack.pool_config(sub_seed(seed, "pool"));
            let mut pool = if attack.ablation == Ablation::WoTgt {
                build_pool_random_targets(&surrogate, view, &poisoned, num_classes, &pool_cfg)?
            } else {
                build_trigger_pool(
                    &surrogate,
                    &view.graph,
                    &view.features,
                    &view.unlabeled,
                    &poisoned,
                    num_classes,
                    &pool_cfg,
                )?
            };
            if attack.ablation == Ablation::WoStru {
                for (k, j) in pool.trigger_ids() {
                    pool.trigger_mut(k, j).internal_edges.clear();
                }
            }
            let outcome = run_bilevel(
                &view.graph,
                &view.features,
                &view.labels,
                &view.train,
                &view.unlabeled,
                &poisoned,
                num_classes,
                pool,
                &attack.bilevel_config(sub_seed(seed, "bilevel")),
            )?;
            Ok(AttackArtifacts {
                att: outcome.backdoored,
                assignments: outcome.final_assignments,
                pool: Some(outcome.pool),
                sba_triggers: None,
                surrogate: Some(outcome.surrogate),
                poisoned,
                log: Some(outcome.log),
            })
        }
    }
}

/// The graph the victim actually trains on, after any defense.
#[derive(Debug, Clone)]
pub struct DefendedView {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<Option<usize>>,
    pub origins: Vec<NodeOrigin>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Original dataset id to defended-graph id; `None` for held-out or
    /// defense-removed nodes.
    pub orig_to_base: Vec<Option<usize>>,
    pub report: Option<DefenseReport>,
}

/// Apply the configured defense to the (possibly backdoored) training
/// graph and rebuild the masks and id maps the victim needs.
pub fn run_defense(
    ds: &Dataset,
    view: &TrainView,
    artifacts: &AttackArtifacts,
    defense: &DefenseConfig,
    seed: u64,
) -> Result<DefendedView> {
    let att = &artifacts.att;
    let n_att = att.graph.num_nodes();
    let n_view = view.graph.num_nodes();

    // Victim-side labels: the view's visible labels plus the attacker's
    // poisoned assignments, which also join the training mask.
    let mut labels = vec![None; n_att];
    labels[..n_view].copy_from_slice(&view.labels);
    let mut train = view.train.clone();
    for &(host, cat) in &artifacts.assignments {
        labels[host] = Some(cat);
        train.push(host);
    }
    train.sort_unstable();
    train.dedup();
    let mut val = view.val.clone();
    let mut test = view.test.clone();

    let orig_to_view = |v: usize| view.idmap.to_new(v);

    match defense.method {
        DefenseMethod::None => Ok(DefendedView {
            graph: att.graph.clone(),
            features: att.features.clone(),
            labels,
            origins: att.origins.clone(),
            train,
            val,
            test,
            orig_to_base: (0..ds.num_nodes()).map(orig_to_view).collect(),
            report: None,
        }),
        DefenseMethod::Prune => {
            let (graph, report) = prune(&att.graph, &att.features, &att.origins, defense.prune_mode())?;
            Ok(DefendedView {
                graph,
                features: att.features.clone(),
                labels,
                origins: att.origins.clone(),
                train,
                val,
                test,
                orig_to_base: (0..ds.num_nodes()).map(orig_to_view).collect(),
                report: Some(report),
            })
        }
        DefenseMethod::PruneLd => {
            let (graph, labels, report) = prune_ld(
                &att.graph,
                &att.features,
                &labels,
                &att.origins,
                defense.prune_mode(),
            )?;
            train.retain(|&v| labels[v].is_some());
            val.retain(|&v| labels[v].is_some());
            test.retain(|&v| labels[v].is_some());
            Ok(DefendedView {
                graph,
                features: att.features.clone(),
                labels,
                origins: att.origins.clone(),
                train,
                val,
                test,
                orig_to_base: (0..ds.num_nodes()).map(orig_to_view).collect(),
                report: Some(report),
            })
        }
        DefenseMethod::Od => {
            let (graph, map, report) = od_filter(
                &att.graph,
                &att.features,
                &labels,
                &att.origins,
                &defense.od_config(sub_seed(seed, "od")),
            )?;
            let kept = map.len();
            let mut features = DenseMatrix::zeros(kept, att.features.cols());
            let mut new_labels = vec![None; kept];
            let mut origins = vec![NodeOrigin::Original; kept];
            for new in 0..kept {
                let old = map.to_old(new);
                features.row_mut(new).copy_from_slice(att.features.row(old));
                new_labels[new] = labels[old];
                origins[new] = att.origins[old];
            }
            let remap = |list: Vec<usize>| -> Vec<usize> {
                list.into_iter().filter_map(|v| map.to_new(v)).collect()
            };
            Ok(DefendedView {
                graph,
                features,
                labels: new_labels,
                origins,
                train: remap(train),
                val: remap(val),
                test: remap(test),
                orig_to_base: (0..ds.num_nodes())
                    .map(|v| orig_to_view(v).and_then(|b| map.to_new(b)))
                    .collect(),
                report: Some(report),
            })
        }
    }
}

/// Surrogate training setup: the victim's schedule, the attack's hidden
/// width, and no dropout.
pub fn surrogate_train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.attack.surrogate_epochs,
        lr: cfg.attack.surrogate_lr,
        weight_decay: cfg.attack.surrogate_weight_decay,
        hidden: cfg.attack.surrogate_hidden,
        dropout: cfg.attack.surrogate_dropout,
        seed: 0,
    }
}

/// Load or synthesize the dataset a config names. Synthetic graphs use
/// the config's base seed so every run sees the same graph.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.dataset.source {
        DatasetSource::Sbm => generate_sbm(&cfg.dataset.sbm_spec(cfg.seed)),
        DatasetSource::Bundle => {
            let path = cfg
                .dataset
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.source = \"bundle\" needs dataset.path".into()))?;
            Dataset::load(path)
        }
    }
}

/// Attack-stage output: the split dataset, the training view, and the
/// attack artifacts, before any defense.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub dataset: Dataset,
    pub view: TrainView,
    pub artifacts: AttackArtifacts,
    pub num_classes: usize,
}

pub fn prepare_attack(cfg: &ExperimentConfig, seed: u64) -> Result<AttackRun> {
    cfg.validate()?;
    let mut dataset = load_dataset(cfg)?;
    apply_split(&mut dataset, sub_seed(seed, "split"))?;
    let num_classes = dataset.num_classes()?;
    let view = training_view(&dataset)?;
    let artifacts = run_attack(
        &view,
        num_classes,
        &cfg.attack,
        &surrogate_train_config(cfg),
        seed,
    )?;
    Ok(AttackRun {
        dataset,
        view,
        artifacts,
        num_classes,
    })
}

/// One run's arch-independent state: split, attack, and defense outputs.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub dataset: Dataset,
    pub view: TrainView,
    pub artifacts: AttackArtifacts,
    pub defended: DefendedView,
    pub num_classes: usize,
    pub config_hash: String,
    pub seed: u64,
}

pub fn prepare_run(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedRun> {
    let AttackRun {
        dataset,
        view,
        artifacts,
        num_classes,
    } = prepare_attack(cfg, seed)?;
    let defended = run_defense(&dataset, &view, &artifacts, &cfg.defense, seed)?;
    Ok(PreparedRun {
        dataset,
        view,
        artifacts,
        defended,
        num_classes,
        config_hash: cfg.hash(),
        seed,
    })
}

/// Train one victim on the defended graph and measure attack success and
/// clean accuracy inductively.
pub fn evaluate_victim(
    cfg: &ExperimentConfig,
    prepared: &PreparedRun,
    arch: Arch,
    seed: u64,
) -> Result<EvalReport> {
    let d = &prepared.defended;
    let tc = cfg
        .victim
        .train_config(sub_seed(seed, &format!("victim-{}", arch.as_str())));
    let (model, _) = train_model(
        arch,
        &d.graph,
        &d.features,
        &d.labels,
        &d.train,
        &d.val,
        prepared.num_classes,
        &tc,
    )?;

    let eval = InductiveEval {
        dataset: &prepared.dataset,
        base_graph: &d.graph,
        base_features: &d.features,
        orig_to_base: &d.orig_to_base,
    };
    let targets = prepared.dataset.role_indices(Role::Target);
    let clean_nodes = prepared.dataset.role_indices(Role::Clean);

    let asr = match prepared.artifacts.trigger_source(&cfg.attack) {
        Some(source) => compute_asr(
            &model,
            &eval,
            &source,
            &targets,
            prepared.num_classes,
            sub_seed(seed, "asr"),
        )?,
        None => vec![0.0; prepared.num_classes],
    };
    let clean_accuracy = compute_clean_accuracy(&model, &eval, &clean_nodes)?;

    let defense = d
        .report
        .as_ref()
        .map(|r| DefenseSummary::from_report(cfg.defense.method.as_str(), r));
    let sims = edge_similarities(
        &prepared.artifacts.att.graph,
        &prepared.artifacts.att.features,
        &prepared.artifacts.att.origins,
    );
    let similarity = Some(SimilaritySummary {
        clean_mean: sims.clean_mean(),
        connection_mean: sims.connection_mean(),
        internal_mean: sims.internal_mean(),
    });

    Ok(EvalReport::new(
        prepared.config_hash.clone(),
        arch.as_str().to_string(),
        seed,
        asr,
        clean_accuracy,
        defense,
        similarity,
    ))
}

/// Full experiment: for each run seed, prepare the attacked and defended
/// graph once, then train and evaluate every victim architecture on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let archs = cfg.victim.arch_list()?;
    let mut reports = Vec::new();
    for run in 0..cfg.runs {
        let seed = cfg.seed.wrapping_add(run as u64);
        let prepared = prepare_run(cfg, seed)?;
        for &arch in &archs {
            reports.push(evaluate_victim(cfg, &prepared, arch, seed)?);
        }
    }
    Ok(reports)
}

/// Bundle the backdoored training graph as a dataset: poisoned hosts
/// become training nodes under their assigned categories and trigger
/// nodes stay unlabeled.
pub fn attacked_dataset(view: &TrainView, artifacts: &AttackArtifacts) -> Dataset {
    let att = &artifacts.att;
    let n = att.graph.num_nodes();
    let n_view = view.graph.num_nodes();
    let mut labels = vec![None; n];
    labels[..n_view].copy_from_slice(&view.labels);
    let mut split = vec![Role::Unlabeled; n];
    for &v in &view.train {
        split[v] = Role::Train;
    }
    for &v in &view.val {
        split[v] = Role::Val;
    }
    for &v in &view.test {
        split[v] = Role::Test;
    }
    for &(host, cat) in &artifacts.assignments {
        labels[host] = Some(cat);
        split[host] = Role::Train;
    }
    Dataset {
        graph: att.graph.clone(),
        features: att.features.clone(),
        labels,
        split,
    }
}

/// Same bundling for a defended view; masks already reflect any label
/// discards or node removals.
pub fn defended_dataset(d: &DefendedView) -> Dataset {
    let n = d.graph.num_nodes();
    let mut split = vec![Role::Unlabeled; n];
    for &v in &d.train {
        split[v] = Role::Train;
    }
    for &v in &d.val {
        split[v] = Role::Val;
    }
    for &v in &d.test {
        split[v] = Role::Test;
    }
    Dataset {
        graph: d.graph.clone(),
        features: d.features.clone(),
        labels: d.labels.clone(),
        split,
    }
}

/// Write an id map as `new\told` lines.
pub fn write_idmap(path: impl AsRef<Path>, map: &IdMap, total_old: usize) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "# total_old\t{total_old}").map_err(io)?;
    for new in 0..map.len() {
        writeln!(w, "{new}\t{}", map.to_old(new)).map_err(io)?;
    }
    std::io::Write::flush(&mut w).map_err(io)
}

pub fn read_idmap(path: impl AsRef<Path>) -> Result<IdMap> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |line: usize, detail: String| Error::Parse {
        file: path.display().to_string(),
        line,
        detail,
    };
    let mut total_old = None;
    let mut kept = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let a = parts.next().unwrap_or("");
        let b = parts.next().unwrap_or("");
        if a == "# total_old" {
            total_old = Some(
                b.parse::<usize>()
                    .map_err(|_| bad(i + 1, format!("bad node count {b:?}")))?,
            );
            continue;
        }
        let new: usize = a
            .parse()
            .map_err(|_| bad(i + 1, format!("bad new id {a:?}")))?;
        let old: usize = b
            .parse()
            .map_err(|_| bad(i + 1, format!("bad old id {b:?}")))?;
        if new != kept.len() {
            return Err(bad(i + 1, format!("expected new id {}, got {new}", kept.len())));
        }
        kept.push(old);
    }
    let total = total_old.ok_or_else(|| bad(0, "missing # total_old header".into()))?;
    IdMap::from_kept(total, &kept)
}

/// Write an original-id to base-id map as `orig\tbase` lines; unmapped
/// nodes are omitted.
pub fn write_orig_map(path: impl AsRef<Path>, map: &[Option<usize>]) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "# total\t{}", map.len()).map_err(io)?;
    for (orig, base) in map.iter().enumerate() {
        if let Some(b) = base {
            writeln!(w, "{orig}\t{b}").map_err(io)?;
        }
    }
    std::io::Write::flush(&mut w).map_err(io)
}

pub fn read_orig_map(path: impl AsRef<Path>) -> Result<Vec<Option<usize>>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |line: usize, detail: String| Error::Parse {
        file: path.display().to_string(),
        line,
        detail,
    };
    let mut map: Option<Vec<Option<usize>>> = None;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let a = parts.next().unwrap_or("");
        let b = parts.next().unwrap_or("");
        if a == "# total" {
            let n: usize = b
                .parse()
                .map_err(|_| bad(i + 1, format!("bad node count {b:?}")))?;
            map = Some(vec![None; n]);
            continue;
        }
        let m = map
            .as_mut()
            .ok_or_else(|| bad(i + 1, "entry before # total header".into()))?;
        let orig: usize = a
            .parse()
            .map_err(|_| bad(i + 1, format!("bad original id {a:?}")))?;
        let base: usize = b
            .parse()
            .map_err(|_| bad(i + 1, format!("bad base id {b:?}")))?;
        if orig >= m.len() {
            return Err(bad(i + 1, format!("id {orig} out of range")));
        }
        m[orig] = Some(base);
    }
    map.ok_or_else(|| bad(0, "missing # total header".into()))
}

/// Dump per-iteration losses as `iter,loss_s,loss_a,loss_h` CSV.
pub fn write_bilevel_log(path: impl AsRef<Path>, log: &BilevelLog) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "iter,loss_s,loss_a,loss_h").map_err(io)?;
    for i in 0..log.loss_a.len() {
        writeln!(w, "{i},{},{},{}", log.loss_s[i], log.loss_a[i], log.loss_h[i]).map_err(io)?;
    }
    std::io::Write::flush(&mut w).map_err(io)
}
