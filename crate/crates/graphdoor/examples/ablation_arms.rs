//! Switch off one attack ingredient at a time — trigger structure,
//! feature optimization, shift-based target assignment, similarity-aware
//! selection, or the link rule — and compare attack success.

use graphdoor::config::{parse_config, ALL_ABLATIONS};
use graphdoor::pipeline::run_experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = parse_config(
        r#"
        seed = 3
        runs = 1
        [dataset]
        source = "sbm"
        [attack]
        aps_threshold = 0.1
        outer_iters = 40
        [victim]
        archs = ["gcn"]
        epochs = 100
        "#,
    )?;

    println!("{:<10} {:>8} {:>8}", "arm", "asr", "clean");
    for arm in ALL_ABLATIONS {
        let mut cfg = base.clone();
        cfg.attack.ablation = arm;
        let reports = run_experiment(&cfg)?;
        let n = reports.len() as f64;
        let asr = reports.iter().map(|r| r.asr_avg).sum::<f64>() / n;
        let clean = reports.iter().map(|r| r.clean_accuracy).sum::<f64>() / n;
        println!("{:<10} {asr:>8.3} {clean:>8.3}", arm.as_str());
    }
    Ok(())
}
