//! How the similarity hinge changes the footprint: optimize triggers with
//! and without it, then compare host-link cosines against clean edges and
//! dump a histogram.

use graphdoor::config::parse_config;
use graphdoor::defense::{edge_similarities, similarity_histogram, write_histogram_csv};
use graphdoor::pipeline::prepare_attack;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = r#"
        seed = 3
        [dataset]
        source = "sbm"
        [attack]
        alpha = ALPHA
        aps_threshold = 0.1
        outer_iters = 60
        [victim]
        archs = ["gcn"]
    "#;

    for alpha in ["0.0", "5.0"] {
        let cfg = parse_config(&base.replace("ALPHA", alpha))?;
        let run = prepare_attack(&cfg, cfg.seed)?;
        let att = &run.artifacts.att;
        let sims = edge_similarities(&att.graph, &att.features, &att.origins);
        println!(
            "alpha {alpha}: clean mean {:.3}, host-link mean {:.3}, in-trigger mean {:.3}",
            sims.clean_mean().unwrap_or(f64::NAN),
            sims.connection_mean().unwrap_or(f64::NAN),
            sims.internal_mean().unwrap_or(f64::NAN),
        );

        let path = std::env::temp_dir().join(format!("graphdoor_simhist_alpha_{alpha}.csv"));
        write_histogram_csv(&similarity_histogram(&sims, 40), &path)?;
        println!("          histogram written to {}", path.display());
    }
    Ok(())
}
