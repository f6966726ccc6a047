//! Command-line front end. Thin: argument parsing and file plumbing only;
//! all behavior lives in the library modules.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attacher::{read_manifest, write_manifest, Attached, AttachmentPlan};
use crate::config::{load_config, AttackMethod, ExperimentConfig, ALL_ABLATIONS};
use crate::defense::{
    edge_similarities, read_defense_report, similarity_histogram, write_defense_report,
    write_histogram_csv,
};
use crate::error::{Error, Result};
use crate::graph::{read_origins, write_origins, Dataset, NodeOrigin, Role};
use crate::metrics::{compute_asr, compute_clean_accuracy, InductiveEval, TriggerSource};
use crate::models::{load_model, save_model, train_model, Arch, Model};
use crate::pipeline::{
    apply_split, attacked_dataset, defended_dataset, prepare_attack, read_orig_map, run_defense,
    run_experiment, sub_seed, training_view, write_bilevel_log, write_idmap, write_orig_map,
    AttackArtifacts, AttackRun,
};
use crate::pool::{load_pool, save_pool};
use crate::report::{
    aggregate, emit_report, read_reports, write_reports, DefenseSummary, EvalReport, ReportFormat,
    SimilaritySummary,
};
use crate::sba::{pool_to_sba, sba_to_pool};
use crate::synth::{generate_sbm, SbmSpec};

#[derive(Parser, Debug)]
#[command(
    name = "graphdoor",
    version,
    about = "Multi-category graph backdoor attacks, defenses, and evaluation"
)]
struct Cli {
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for command outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic stochastic-block-model dataset bundle.
    GenSbm {
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        p_in: f64,
        #[arg(long, default_value_t = 0.005)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Assign fresh split roles to a dataset bundle.
    Split {
        /// Bundle directory to re-split.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the configured attack; write the backdoored bundle, trigger
    /// pool, and attachment manifest.
    Attack {
        #[arg(long)]
        config: PathBuf,
    },
    /// Apply the configured defense inside an attacked run directory.
    Defend {
        #[arg(long)]
        config: PathBuf,
        /// Run directory produced by `attack`.
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Train one victim model on a bundle's train/val roles.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Bundle directory to train on.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        arch: String,
    },
    /// Evaluate attack success and clean accuracy. Runs the full
    /// experiment in memory, or consumes a staged run directory.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Evaluate artifacts staged by `attack`/`defend` instead of
        /// rerunning the pipeline.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Render saved reports as CSV or a markdown table.
    Report {
        /// reports.json produced by `eval`.
        #[arg(long)]
        reports: PathBuf,
        /// `csv` or `markdown`.
        #[arg(long)]
        format: String,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every ablation arm and write per-arm reports plus a summary.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Edge-similarity histogram of the backdoored training graph.
    Simhist {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
}

/// Entry point for the `graphdoor` binary. Returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| Error::Config("--out-dir is required for this command".into()))
}

fn load_cfg(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSbm {
            blocks,
            n,
            p_in,
            p_out,
            dim,
            noise,
        } => {
            let out = require_out(&cli.out_dir)?;
            let spec = SbmSpec {
                blocks,
                n,
                p_in,
                p_out,
                dim,
                noise,
                seed: cli.seed.unwrap_or(0),
            };
            let ds = generate_sbm(&spec)?;
            ds.save(&out)?;
            println!(
                "wrote {} nodes, {} edges, {} blocks to {}",
                ds.num_nodes(),
                ds.graph.num_edges(),
                blocks,
                out.display()
            );
            Ok(())
        }
        Command::Split { data } => {
            let out = require_out(&cli.out_dir)?;
            let mut ds = Dataset::load(&data)?;
            apply_split(&mut ds, cli.seed.unwrap_or(0))?;
            ds.save(&out)?;
            let count = |r: Role| ds.role_indices(r).len();
            println!(
                "split {}: {} train, {} val, {} test, {} unlabeled, {} target, {} clean",
                out.display(),
                count(Role::Train),
                count(Role::Val),
                count(Role::Test),
                count(Role::Unlabeled),
                count(Role::Target),
                count(Role::Clean)
            );
            Ok(())
        }
        Command::Attack { config } => {
            let out = require_out(&cli.out_dir)?;
            let cfg = load_cfg(&config, cli.seed)?;
            let run = prepare_attack(&cfg, cfg.seed)?;
            save_attack_run(&cfg, &run, &out)?;
            println!(
                "attacked {} hosts with {} trigger instances; run dir {}",
                run.artifacts.assignments.len(),
                run.artifacts.att.plans.len(),
                out.display()
            );
            Ok(())
        }
        Command::Defend { config, run_dir } => {
            let cfg = load_cfg(&config, cli.seed)?;
            let out = cli.out_dir.unwrap_or_else(|| run_dir.clone());
            let dataset = Dataset::load(run_dir.join("dataset"))?;
            let view = training_view(&dataset)?;
            let artifacts = load_artifacts(&run_dir)?;
            let defended = run_defense(&dataset, &view, &artifacts, &cfg.defense, cfg.seed)?;
            let ddir = out.join("defended");
            defended_dataset(&defended).save(&ddir)?;
            write_origins(ddir.join("origins.tsv"), &defended.origins)?;
            write_orig_map(ddir.join("orig_map.tsv"), &defended.orig_to_base)?;
            match &defended.report {
                Some(report) => {
                    write_defense_report(report, &out.join("defense.json"))?;
                    println!(
                        "{}: removed {} edges, {} nodes, {} labels; trigger hit rate {:.3}",
                        cfg.defense.method.as_str(),
                        report.edges_removed_count,
                        report.nodes_removed.len(),
                        report.labels_discarded.len(),
                        report.trigger_hit_rate
                    );
                }
                None => println!("defense method is \"none\"; wrote an unchanged copy"),
            }
            Ok(())
        }
        Command::Train { config, data, arch } => {
            let out = require_out(&cli.out_dir)?;
            let cfg = load_cfg(&config, cli.seed)?;
            let arch = Arch::parse(&arch)
                .ok_or_else(|| Error::Config(format!("unknown architecture {arch:?}")))?;
            let ds = Dataset::load(&data)?;
            let model = train_victim(&cfg, &ds, ds.num_classes()?, arch)?;
            ensure_dir(&out)?;
            let path = out.join(format!("model_{}.bin", arch.as_str()));
            save_model(&path, &model)?;
            println!("saved {}", path.display());
            Ok(())
        }
        Command::Eval { config, run_dir } => {
            let cfg = load_cfg(&config, cli.seed)?;
            let (reports, out) = match run_dir {
                None => (run_experiment(&cfg)?, require_out(&cli.out_dir)?),
                Some(dir) => {
                    let out = cli.out_dir.unwrap_or_else(|| dir.clone());
                    (eval_staged(&cfg, &dir)?, out)
                }
            };
            finish_reports(&reports, &out)
        }
        Command::Report {
            reports,
            format,
            out,
        } => {
            let fmt = ReportFormat::parse(&format)
                .ok_or_else(|| Error::Config(format!("unknown format {format:?} (csv|markdown)")))?;
            let list = read_reports(&reports)?;
            emit_report(&list, fmt, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Ablate { config } => {
            let out = require_out(&cli.out_dir)?;
            let base = load_cfg(&config, cli.seed)?;
            ensure_dir(&out)?;
            let mut rows = Vec::new();
            for arm in ALL_ABLATIONS {
                let mut cfg = base.clone();
                cfg.attack.ablation = arm;
                let reports = run_experiment(&cfg)?;
                write_reports(&reports, &out.join(format!("reports_{}.json", arm.as_str())))?;
                let n = reports.len() as f64;
                let asr = reports.iter().map(|r| r.asr_avg).sum::<f64>() / n;
                let clean = reports.iter().map(|r| r.clean_accuracy).sum::<f64>() / n;
                println!("{}: asr {asr:.4}, clean {clean:.4}", arm.as_str());
                rows.push((arm.as_str(), asr, clean));
            }
            write_ablation_summary(&rows, &out)
        }
        Command::Simhist { config, bins } => {
            let out = require_out(&cli.out_dir)?;
            let cfg = load_cfg(&config, cli.seed)?;
            let run = prepare_attack(&cfg, cfg.seed)?;
            let att = &run.artifacts.att;
            let sims = edge_similarities(&att.graph, &att.features, &att.origins);
            ensure_dir(&out)?;
            write_histogram_csv(
                &similarity_histogram(&sims, bins),
                &out.join("similarity_histogram.csv"),
            )?;
            let summary = SimilaritySummary {
                clean_mean: sims.clean_mean(),
                connection_mean: sims.connection_mean(),
                internal_mean: sims.internal_mean(),
            };
            let json = serde_json::to_string_pretty(&summary)
                .map_err(|e| Error::Config(format!("similarity summary: {e}")))?;
            let path = out.join("similarity.json");
            fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
            println!(
                "clean mean {:?}, connection mean {:?}, internal mean {:?}",
                summary.clean_mean, summary.connection_mean, summary.internal_mean
            );
            Ok(())
        }
    }
}

/// Write everything an attack run produced: the split dataset, the
/// backdoored bundle with sidecars, the trigger pool, the attachment
/// manifest, optimization logs, and the effective config.
fn save_attack_run(cfg: &ExperimentConfig, run: &AttackRun, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    run.dataset.save(out.join("dataset"))?;

    let bdir = out.join("backdoored");
    attacked_dataset(&run.view, &run.artifacts).save(&bdir)?;
    write_origins(bdir.join("origins.tsv"), &run.artifacts.att.origins)?;
    write_idmap(bdir.join("idmap.tsv"), &run.view.idmap, run.dataset.num_nodes())?;
    let orig_to_base: Vec<Option<usize>> = (0..run.dataset.num_nodes())
        .map(|v| run.view.idmap.to_new(v))
        .collect();
    write_orig_map(bdir.join("orig_map.tsv"), &orig_to_base)?;

    write_manifest(out.join("manifest.jsonl"), &run.artifacts.att.plans)?;
    if let Some(pool) = &run.artifacts.pool {
        save_pool(out.join("pool"), pool)?;
    } else if let Some(triggers) = &run.artifacts.sba_triggers {
        save_pool(out.join("pool"), &sba_to_pool(triggers, run.num_classes))?;
    }
    if let Some(log) = &run.artifacts.log {
        write_bilevel_log(out.join("bilevel_log.csv"), log)?;
    }
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, cfg.canonical_string())
        .map_err(|e| Error::io(cfg_path.display().to_string(), e))
}

/// Rebuild attack artifacts from an attack run directory: the backdoored
/// bundle plus its origin and manifest sidecars.
fn load_artifacts(run_dir: &Path) -> Result<AttackArtifacts> {
    let bdir = run_dir.join("backdoored");
    let bundle = Dataset::load(&bdir)?;
    let origins = read_origins(bdir.join("origins.tsv"), bundle.num_nodes())?;
    let plans: Vec<AttachmentPlan> = read_manifest(run_dir.join("manifest.jsonl"))?;

    let mut instance_nodes: Vec<Vec<usize>> = vec![Vec::new(); plans.len()];
    for (v, o) in origins.iter().enumerate() {
        if let NodeOrigin::Trigger { instance, .. } = o {
            if *instance >= instance_nodes.len() {
                return Err(Error::Parse {
                    file: bdir.join("origins.tsv").display().to_string(),
                    line: 0,
                    detail: format!("instance {instance} has no manifest entry"),
                });
            }
            instance_nodes[*instance].push(v);
        }
    }
    let assignments: Vec<(usize, usize)> = plans.iter().map(|p| (p.host, p.category)).collect();
    let poisoned: Vec<usize> = assignments.iter().map(|&(h, _)| h).collect();
    Ok(AttackArtifacts {
        att: Attached {
            graph: bundle.graph,
            features: bundle.features,
            origins,
            plans,
            instance_nodes,
        },
        assignments,
        pool: None,
        sba_triggers: None,
        surrogate: None,
        poisoned,
        log: None,
    })
}

fn train_victim(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    num_classes: usize,
    arch: Arch,
) -> Result<Model> {
    let tc = cfg
        .victim
        .train_config(sub_seed(cfg.seed, &format!("victim-{}", arch.as_str())));
    let (model, _) = train_model(
        arch,
        &ds.graph,
        &ds.features,
        &ds.labels,
        &ds.role_indices(Role::Train),
        &ds.role_indices(Role::Val),
        num_classes,
        &tc,
    )?;
    Ok(model)
}

/// Evaluate a staged run directory: use the defended bundle when present,
/// loading or training victim models as needed.
fn eval_staged(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<EvalReport>> {
    let dataset = Dataset::load(run_dir.join("dataset"))?;
    let num_classes = dataset.num_classes()?;
    let bdir = run_dir.join("backdoored");
    let ddir = run_dir.join("defended");
    let (base_dir, defense_report) = if ddir.is_dir() {
        (ddir, Some(read_defense_report(&run_dir.join("defense.json"))?))
    } else {
        (bdir.clone(), None)
    };
    let base = Dataset::load(&base_dir)?;
    let orig_to_base = read_orig_map(base_dir.join("orig_map.tsv"))?;

    let pool = match cfg.attack.method {
        AttackMethod::None => None,
        _ => Some(load_pool(run_dir.join("pool"))?),
    };
    let sba_triggers = match (&pool, cfg.attack.method) {
        (Some(p), AttackMethod::Sba) => Some(pool_to_sba(p)),
        _ => None,
    };

    let att_bundle = Dataset::load(&bdir)?;
    let att_origins = read_origins(bdir.join("origins.tsv"), att_bundle.num_nodes())?;
    let sims = edge_similarities(&att_bundle.graph, &att_bundle.features, &att_origins);
    let similarity = Some(SimilaritySummary {
        clean_mean: sims.clean_mean(),
        connection_mean: sims.connection_mean(),
        internal_mean: sims.internal_mean(),
    });

    let targets = dataset.role_indices(Role::Target);
    let clean_nodes = dataset.role_indices(Role::Clean);
    let eval = InductiveEval {
        dataset: &dataset,
        base_graph: &base.graph,
        base_features: &base.features,
        orig_to_base: &orig_to_base,
    };

    let mut reports = Vec::new();
    for arch in cfg.victim.arch_list()? {
        let model_path = run_dir.join(format!("model_{}.bin", arch.as_str()));
        let model = if model_path.is_file() {
            load_model(&model_path)?
        } else {
            let m = train_victim(cfg, &base, num_classes, arch)?;
            save_model(&model_path, &m)?;
            m
        };
        let asr = match (&pool, &sba_triggers) {
            (None, _) => vec![0.0; num_classes],
            (Some(_), Some(triggers)) => compute_asr(
                &model,
                &eval,
                &TriggerSource::Sba { triggers },
                &targets,
                num_classes,
                sub_seed(cfg.seed, "asr"),
            )?,
            (Some(p), None) => compute_asr(
                &model,
                &eval,
                &TriggerSource::Pool {
                    pool: p,
                    select: cfg.attack.select_rule(),
                    link: cfg.attack.link_rule(),
                },
                &targets,
                num_classes,
                sub_seed(cfg.seed, "asr"),
            )?,
        };
        let clean_accuracy = compute_clean_accuracy(&model, &eval, &clean_nodes)?;
        let defense = defense_report
            .as_ref()
            .map(|r| DefenseSummary::from_report(cfg.defense.method.as_str(), r));
        reports.push(EvalReport::new(
            cfg.hash(),
            arch.as_str().to_string(),
            cfg.seed,
            asr,
            clean_accuracy,
            defense,
            similarity.clone(),
        ));
    }
    Ok(reports)
}

fn finish_reports(reports: &[EvalReport], out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_reports(reports, &out.join("reports.json"))?;
    emit_report(reports, ReportFormat::Csv, &out.join("report.csv"))?;
    emit_report(reports, ReportFormat::Markdown, &out.join("report.md"))?;
    for row in aggregate(reports) {
        println!(
            "{}: asr {:.4} ± {:.4}, clean {:.4} ± {:.4} over {} runs",
            row.arch, row.asr_mean, row.asr_sd, row.clean_mean, row.clean_sd, row.runs
        );
    }
    Ok(())
}

fn write_ablation_summary(rows: &[(&str, f64, f64)], out: &Path) -> Result<()> {
    let csv_path = out.join("ablation.csv");
    let mut csv = fs::File::create(&csv_path)
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let io_csv = |e| Error::io(csv_path.display().to_string(), e);
    writeln!(csv, "arm,asr_avg,clean_accuracy").map_err(io_csv)?;
    for (arm, asr, clean) in rows {
        writeln!(csv, "{arm},{asr},{clean}").map_err(io_csv)?;
    }

    let md_path = out.join("ablation.md");
    let mut md =
        fs::File::create(&md_path).map_err(|e| Error::io(md_path.display().to_string(), e))?;
    let io_md = |e| Error::io(md_path.display().to_string(), e);
    writeln!(md, "| Arm | ASR | Clean Accuracy |").map_err(io_md)?;
    writeln!(md, "|-----|-----|----------------|").map_err(io_md)?;
    for (arm, asr, clean) in rows {
        writeln!(md, "| {arm} | {asr:.4} | {clean:.4} |").map_err(io_md)?;
    }
    Ok(())
}
