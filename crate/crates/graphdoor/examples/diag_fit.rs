//! Scratch diagnostic: do trained victims actually fit the poisoned hosts,
//! and how are final assignments distributed across categories?

use graphdoor::config::parse_config;
use graphdoor::linalg::argmax;
use graphdoor::models::Arch;
use graphdoor::pipeline::{prepare_run, sub_seed};
use graphdoor::train::train_model;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg_text = r#"
seed = 0
runs = 5

[dataset]
source = "sbm"

[attack]
candidates = 600
aps_threshold = 0.05
surrogate_hidden = 16
outer_iters = 300

[victim]
archs = ["gcn", "sage", "gat"]

[defense]
method = "none"
"#;
    let cfg = parse_config(cfg_text)?;
    for run in 0..cfg.runs {
        let seed = cfg.seed + run;
        let prepared = prepare_run(&cfg, seed)?;
        let d = &prepared.defended;
        let mut counts = vec![0usize; prepared.num_classes];
        for &(_, k) in &prepared.artifacts.assignments {
            counts[k] += 1;
        }
        let mut line = format!("seed {seed}: hosts/cat {counts:?}");
        for arch in [Arch::Gcn, Arch::Sage, Arch::Gat] {
            let tc = cfg
                .victim
                .train_config(sub_seed(seed, &format!("victim-{}", arch.as_str())));
            let (model, _) = train_model(
                arch,
                &d.graph,
                &d.features,
                &d.labels,
                &d.train,
                &d.val,
                prepared.num_classes,
                &tc,
            )?;
            let fwd = model.forward(&d.graph, &d.features)?;
            let mut fit = 0usize;
            let mut per_cat = vec![(0usize, 0usize); prepared.num_classes];
            for &(host, k) in &prepared.artifacts.assignments {
                per_cat[k].1 += 1;
                if argmax(fwd.logits.row(host)) == k {
                    fit += 1;
                    per_cat[k].0 += 1;
                }
            }
            let frac: Vec<String> = per_cat
                .iter()
                .map(|&(h, n)| format!("{h}/{n}"))
                .collect();
            line.push_str(&format!(
                "  {} host-fit {fit}/{} [{}]",
                arch.as_str(),
                prepared.artifacts.assignments.len(),
                frac.join(" ")
            ));
        }
        println!("{line}");
    }
    Ok(())
}
