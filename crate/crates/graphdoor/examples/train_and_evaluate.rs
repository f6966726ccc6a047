//! Train each victim architecture on a clean graph, then score it two
//! ways: transductively on the test mask and inductively on held-out
//! nodes spliced back one at a time.

use graphdoor::graph::Role;
use graphdoor::metrics::{compute_clean_accuracy, InductiveEval};
use graphdoor::models::{accuracy, train_model, TrainConfig, ALL_ARCHS};
use graphdoor::pipeline::{apply_split, training_view};
use graphdoor::synth::{generate_sbm, SbmSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ds = generate_sbm(&SbmSpec {
        seed: 1,
        ..SbmSpec::default()
    })?;
    apply_split(&mut ds, 1)?;
    let view = training_view(&ds)?;
    let num_classes = ds.num_classes()?;

    let orig_to_base: Vec<Option<usize>> = (0..ds.num_nodes())
        .map(|v| view.idmap.to_new(v))
        .collect();
    let eval = InductiveEval {
        dataset: &ds,
        base_graph: &view.graph,
        base_features: &view.features,
        orig_to_base: &orig_to_base,
    };
    let held_out = ds.role_indices(Role::Clean);

    for arch in ALL_ARCHS {
        let tc = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let (model, curve) = train_model(
            arch,
            &view.graph,
            &view.features,
            &view.labels,
            &view.train,
            &view.val,
            num_classes,
            &tc,
        )?;
        let logits = model.forward(&view.graph, &view.features)?.logits;
        let test_acc = accuracy(&logits, &view.labels, &view.test)?;
        let inductive = compute_clean_accuracy(&model, &eval, &held_out)?;
        println!(
            "{:<5} test {:.3}  held-out {:.3}  best val {:.3}",
            arch.as_str(),
            test_acc,
            inductive,
            curve.val_acc.iter().fold(0.0f64, |a, &b| a.max(b)),
        );
    }
    Ok(())
}
