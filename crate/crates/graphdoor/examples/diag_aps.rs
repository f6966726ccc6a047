//! Scratch diagnostic (not part of the example suite): measure surrogate
//! confidence and the max-APS distribution under different SBM densities
//! and surrogate training lengths.

use graphdoor::linalg::softmax_rows;
use graphdoor::models::{train_model, Arch, TrainConfig};
use graphdoor::pipeline::{apply_split, training_view};
use graphdoor::pool::{build_trigger_pool, PoolConfig};
use graphdoor::sampling::select_poisoned_nodes;
use graphdoor::synth::{generate_sbm, SbmSpec};

fn run(
    p_in: f64,
    p_out: f64,
    epochs: usize,
    dropout: f64,
    hidden: usize,
    n_candidates: usize,
    seed: u64,
) -> Result<(), Box<dyn std::error::Error>> {
    let mut ds = generate_sbm(&SbmSpec {
        seed,
        p_in,
        p_out,
        ..SbmSpec::default()
    })?;
    apply_split(&mut ds, seed)?;
    let view = training_view(&ds)?;
    let num_classes = ds.num_classes()?;

    let tc = TrainConfig {
        dropout,
        epochs,
        weight_decay: 5e-3,
        hidden,
        seed: 11,
        ..TrainConfig::default()
    };
    let (surrogate, log) = train_model(
        Arch::Gcn,
        &view.graph,
        &view.features,
        &view.labels,
        &view.train,
        &view.val,
        num_classes,
        &tc,
    )?;
    let logits = surrogate.forward(&view.graph, &view.features)?.logits;
    let probs = softmax_rows(&logits);
    let test_acc = graphdoor::models::accuracy(&logits, &view.labels, &view.test)?;
    let poisoned = select_poisoned_nodes(&logits, &view.unlabeled, 20, 13)?;
    let conf = |nodes: &[usize]| -> f64 {
        nodes
            .iter()
            .map(|&v| (0..num_classes).map(|c| probs.get(v, c)).fold(0.0, f64::max))
            .sum::<f64>()
            / nodes.len() as f64
    };

    let cfg = PoolConfig {
        n_candidates,
        trigger_size: 5,
        n_pool: 10,
        aps_threshold: f64::NEG_INFINITY,
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
    let per_cat: Vec<usize> = (0..num_classes)
        .map(|k| pool.category(k).iter().filter(|t| t.score > 0.05).count())
        .collect();
    let best_per_cat: Vec<f64> = (0..num_classes)
        .map(|k| {
            pool.category(k)
                .first()
                .map(|t| (t.score * 100.0).round() / 100.0)
                .unwrap_or(f64::NAN)
        })
        .collect();
    let clean_edge_mean = {
        let edges = view.graph.edges();
        let mut sum = 0.0;
        for &(u, v) in edges.iter() {
            sum += graphdoor::linalg::cosine(view.features.row(u), view.features.row(v));
        }
        sum / edges.len() as f64
    };
    println!(
        "p={p_in:.3}/{p_out:.4} ep={epochs:<3} do={dropout:.1} h={hidden:<2} seed={seed}: \
         test {:.2}, conf {:.2}, edge-cos {:.2}, best/cat {:?}, >0.05/cat {:?}",
        test_acc,
        conf(&poisoned),
        clean_edge_mean,
        best_per_cat,
        per_cat,
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for seed in [0u64, 1, 2, 3, 4, 7, 8, 9] {
        for &(p_in, p_out) in &[(0.05, 0.005), (0.04, 0.004)] {
            for &epochs in &[200usize, 100] {
                run(p_in, p_out, epochs, 0.5, 16, 600, seed)?;
            }
        }
        println!();
    }
    Ok(())
}
