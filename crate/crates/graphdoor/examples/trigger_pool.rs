//! Build the per-category trigger pool: BFS candidate subgraphs from the
//! unlabeled region, scored by how far attaching them to every poisoned
//! node shifts a surrogate's average predictions.

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

    // The surrogate doubles as the node-selection embedder: its logits
    // are clustered so one representative per cluster gets poisoned.
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
    println!("poisoned hosts ({}): {:?}", poisoned.len(), poisoned);

    let cfg = PoolConfig {
        n_candidates: 300,
        trigger_size: 5,
        n_pool: 10,
        aps_threshold: 0.1,
        tau_a: 0.2,
        seed: 17,
    };
    let pool = build_trigger_pool(
        &surrogate,
        &view.graph,
        &view.features,
        &view.unlabeled,
        &poisoned,
        num_classes,
        &cfg,
    )?;

    println!("covered categories: {:?}", pool.covered_categories());
    for cat in 0..num_classes {
        let list = pool.category(cat);
        print!("category {cat}: {:>2} triggers", list.len());
        if let Some(best) = list.first() {
            print!(
                "  best shift {:.3} (nodes {:?}, {} internal edges)",
                best.score,
                best.source_nodes,
                best.internal_edges.len()
            );
        }
        println!();
    }
    Ok(())
}
