//! The random-subgraph baseline: one fixed Erdős–Rényi trigger per
//! category with verbatim training-row features, attached by a single
//! random edge. Its connection edges ignore the host, which is exactly
//! what similarity pruning looks for.

use graphdoor::config::{parse_config, AttackMethod, DefenseMethod};
use graphdoor::defense::edge_similarities;
use graphdoor::pipeline::{prepare_attack, run_defense};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = r#"
        seed = 3
        [dataset]
        source = "sbm"
        [attack]
        method = "METHOD"
        aps_threshold = 0.1
        outer_iters = 40
        [victim]
        archs = ["gcn"]
    "#;

    for method in [AttackMethod::Sba, AttackMethod::Eumc] {
        let name = match method {
            AttackMethod::Sba => "sba",
            _ => "eumc",
        };
        let cfg = parse_config(&base.replace("METHOD", name))?;
        let run = prepare_attack(&cfg, cfg.seed)?;
        let att = &run.artifacts.att;
        let sims = edge_similarities(&att.graph, &att.features, &att.origins);
        println!(
            "{name}: {} trigger instances, host-link cosine mean {:.3} (clean edges {:.3})",
            att.plans.len(),
            sims.connection_mean().unwrap_or(f64::NAN),
            sims.clean_mean().unwrap_or(f64::NAN),
        );

        let mut dcfg = cfg.defense.clone();
        dcfg.method = DefenseMethod::Prune;
        dcfg.prune_fraction = 0.1;
        let defended = run_defense(&run.dataset, &run.view, &run.artifacts, &dcfg, cfg.seed)?;
        let report = defended.report.expect("defense ran");
        println!(
            "      prune 10%: {} of {} removed edges touched triggers (hit rate {:.3})",
            (report.trigger_hit_rate * report.edges_removed_count as f64).round() as usize,
            report.edges_removed_count,
            report.trigger_hit_rate
        );
    }
    Ok(())
}
