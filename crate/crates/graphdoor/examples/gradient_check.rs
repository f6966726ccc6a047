//! Every gradient in the crate is hand-derived; this is the harness that
//! keeps them honest. Compare analytic gradients against central finite
//! differences for a model loss and for the trigger-feature losses.

use graphdoor::bilevel::{
    loss_a, loss_a_with_grads, loss_h, loss_h_accumulate, rebuild_attached, scatter_feature_grads,
    PoolGrads,
};
use graphdoor::linalg::{finite_diff_check, softmax_xent_backward, softmax_xent_forward, DenseMatrix};
use graphdoor::models::{Arch, Model};
use graphdoor::pool::{build_pool, SubgraphTrigger, TriggerPool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = graphdoor::graph::Graph::from_edges(
        8,
        [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 7), (2, 6)],
    )?;
    let x = DenseMatrix::from_fn(8, 4, |_, _| rng.gen_range(-1.0..1.0));
    let labels: Vec<Option<usize>> = (0..8).map(|v| Some(v % 3)).collect();
    let mask = vec![0, 2, 4, 6];

    // Model loss vs features, for each architecture.
    for arch in graphdoor::models::ALL_ARCHS {
        let model = Model::new(arch, 4, 6, 3, &mut rng);
        let fwd = model.forward(&g, &x)?;
        let (loss, probs) = softmax_xent_forward(&fwd.logits, &labels, &mask)?;
        let d_logits = softmax_xent_backward(&probs, &labels, &mask)?;
        let grads = model.backward(&x, &fwd, &d_logits)?;
        let worst = finite_diff_check(
            |probe| {
                let fwd = model.forward(&g, probe).unwrap();
                softmax_xent_forward(&fwd.logits, &labels, &mask).unwrap().0
            },
            &x,
            &grads.d_x,
            1e-5,
        );
        println!("{:<5} loss {loss:.4}, worst d_x relative error {worst:.2e}", arch.as_str());
    }

    // Trigger-feature gradients through an attached graph: the misleading
    // loss flows through the model, the hinge is analytic.
    let trigger = |seed: u64, cat: usize| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        SubgraphTrigger {
            source_nodes: vec![0, 1, 2],
            internal_edges: vec![(0, 1), (1, 2)],
            features: DenseMatrix::from_fn(3, 4, |_, _| r.gen_range(-1.0..1.0)),
            aps: vec![0.0; 3],
            target_category: cat,
            score: 0.0,
        }
    };
    let pool = build_pool(vec![trigger(0, 0), trigger(1, 1), trigger(2, 2)], 1, 3);
    let model = Model::new(Arch::Gcn, 4, 6, 3, &mut rng);
    let mut att = graphdoor::attacher::Attached::new(g.clone(), x.clone());
    for (host, cat) in [(0usize, 0usize), (3, 1), (5, 2)] {
        att.attach_from_pool(
            &pool,
            host,
            cat,
            graphdoor::attacher::SelectRule::BestScore,
            graphdoor::attacher::LinkRule::Threshold(0.2),
            &mut rng,
        )?;
    }
    let plans = att.plans.clone();

    let (la, d_x_att) = loss_a_with_grads(&model, &att)?;
    let lh = loss_h(&att, 0.9);
    let mut grads = PoolGrads::zeros_like(&pool);
    scatter_feature_grads(&att, &d_x_att, 1.0, &mut grads);
    loss_h_accumulate(&att, 0.9, 2.0, &mut grads);

    let total = |p: &TriggerPool| -> f64 {
        let a = rebuild_attached(&g, &x, p, &plans).unwrap();
        loss_a(&model, &a).unwrap() + 2.0 * loss_h(&a, 0.9)
    };
    let mut worst = 0.0f64;
    for (k, j) in pool.trigger_ids() {
        let worst_kj = finite_diff_check(
            |probe| {
                let mut p = pool.clone();
                p.trigger_mut(k, j).features = probe.clone();
                total(&p)
            },
            &pool.trigger(k, j).features.clone(),
            grads.get(k, j),
            1e-5,
        );
        worst = worst.max(worst_kj);
    }
    println!("attack losses: misleading {la:.4}, hinge {lh:.4}, worst trigger-feature error {worst:.2e}");
    Ok(())
}
