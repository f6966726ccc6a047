//! The full trigger-optimization loop: a few surrogate steps on the
//! poisoned graph, one trigger-feature step against the misleading and
//! similarity losses, repeated until the total loss plateaus, then the
//! final random-category poisoning pass.

use graphdoor::bilevel::{run_bilevel, BilevelConfig};
use graphdoor::models::{train_model, Arch, TrainConfig};
use graphdoor::pipeline::{apply_split, training_view};
use graphdoor::pool::{build_trigger_pool, PoolConfig};
use graphdoor::sampling::select_poisoned_nodes;
use graphdoor::synth::{generate_sbm, SbmSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ds = generate_sbm(&SbmSpec {
        seed: 7,
        ..SbmSpec::default()
    })?;
    apply_split(&mut ds, 7)?;
    let view = training_view(&ds)?;
    let num_classes = ds.num_classes()?;

    let tc = TrainConfig {
        dropout: 0.0,
        seed: 11,
        ..TrainConfig::default()
    };
    let (surrogate, _) = train_model(
        Arch::Gcn,
        &view.graph,
        &view.features,
        &view.labels,
        &view.train,
        &view.val,
        num_classes,
        &tc,
    )?;
    let embeddings = surrogate.forward(&view.graph, &view.features)?.logits;
    let poisoned = select_poisoned_nodes(&embeddings, &view.unlabeled, 20, 13)?;
    let pool = build_trigger_pool(
        &surrogate,
        &view.graph,
        &view.features,
        &view.unlabeled,
        &poisoned,
        num_classes,
        &PoolConfig {
            aps_threshold: 0.1,
            n_pool: 10,
            ..PoolConfig::default()
        },
    )?;

    let cfg = BilevelConfig {
        alpha: 5.0,
        outer_iters: 60,
        seed: 19,
        ..BilevelConfig::default()
    };
    let outcome = run_bilevel(
        &view.graph,
        &view.features,
        &view.labels,
        &view.train,
        &view.unlabeled,
        &poisoned,
        num_classes,
        pool,
        &cfg,
    )?;

    let log = &outcome.log;
    println!("ran {} outer iterations", log.outer_iters_run);
    println!("iter   loss_s   loss_a   loss_h");
    for i in (0..log.outer_iters_run).step_by(10).chain([log.outer_iters_run - 1]) {
        println!(
            "{i:>4}  {:>7.4}  {:>7.4}  {:>7.4}",
            log.loss_s[i], log.loss_a[i], log.loss_h[i]
        );
    }

    println!("final assignments (host -> category): {:?}", outcome.final_assignments);
    println!(
        "backdoored graph: {} nodes ({} added), {} edges ({} added)",
        outcome.backdoored.graph.num_nodes(),
        outcome.backdoored.graph.num_nodes() - view.graph.num_nodes(),
        outcome.backdoored.graph.num_edges(),
        outcome.backdoored.graph.num_edges() - view.graph.num_edges(),
    );
    Ok(())
}
