//! Attach a trigger to one host: score every pool entry for the target
//! category by summed cosine with the host features, take the best, then
//! connect the trigger nodes whose similarity clears the link threshold.

use graphdoor::attacher::{attach, plan_links, select_trigger, LinkRule};
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

    let host = poisoned[0];
    let category = pool.covered_categories()[0];
    let host_row: Vec<f64> = view.features.row(host).to_vec();

    let (best, score) = select_trigger(&pool, category, &host_row)?;
    println!("host {host}, category {category}: trigger {best} wins with summed cosine {score:.3}");
    for (j, t) in pool.category(category).iter().enumerate() {
        let s = graphdoor::attacher::trigger_score(&t.features, &host_row);
        println!("  pool[{j}] score {s:.3}{}", if j == best { "  <-" } else { "" });
    }

    // The same trigger wired three ways.
    let trigger = pool.trigger(category, best);
    for rule in [LinkRule::Threshold(0.2), LinkRule::One, LinkRule::All] {
        let (connect, scores) = plan_links(&trigger.features, &host_row, rule);
        println!(
            "{rule:?}: connect local nodes {connect:?} (cosines {:?})",
            scores.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }

    let (att, plan) = attach(&view.graph, &view.features, &pool, host, category, 0.2)?;
    println!(
        "attached instance: {} new nodes, {} host links, graph now {} nodes / {} edges",
        trigger.features.rows(),
        plan.connected_local_ids.len(),
        att.graph.num_nodes(),
        att.graph.num_edges()
    );
    Ok(())
}
