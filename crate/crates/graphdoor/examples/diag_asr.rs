//! Scratch diagnostic: full-pipeline attack success at benchmark settings,
//! across seeds and config variants, with timing.

use std::time::Instant;

use graphdoor::config::parse_config;
use graphdoor::models::Arch;
use graphdoor::pipeline::{evaluate_victim, prepare_run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let variants: Vec<(&str, String)> = vec![
        (
            "base",
            "surrogate_hidden = 16\nouter_iters = 300".to_string(),
        ),
        (
            "window10",
            "surrogate_hidden = 16\nouter_iters = 300\nplateau_window = 10".to_string(),
        ),
        (
            "window15",
            "surrogate_hidden = 16\nouter_iters = 300\nplateau_window = 15".to_string(),
        ),
        (
            "hidden32",
            "surrogate_hidden = 32\nouter_iters = 300".to_string(),
        ),
        (
            "hidden64",
            "surrogate_hidden = 64\nouter_iters = 300".to_string(),
        ),
        (
            "cold",
            "surrogate_hidden = 16\nouter_iters = 300\ncold_restart = true".to_string(),
        ),
        (
            "fast-outer",
            "surrogate_hidden = 16\nouter_iters = 300\nouter_lr = 0.02".to_string(),
        ),
    ];
    for (name, extra) in &variants {
        let cfg_text = format!(
            r#"
seed = 0
runs = 5

[dataset]
source = "sbm"

[attack]
candidates = 600
aps_threshold = 0.05
{extra}

[victim]
archs = ["gcn", "sage", "gat"]

[defense]
method = "none"
"#
        );
        let cfg = parse_config(&cfg_text)?;
        let mut means = [0.0f64; 3];
        let mut mins = [1.0f64; 3];
        let mut cat_sums = vec![[0.0f64; 3]; 4];
        let t0 = Instant::now();
        let mut iters = Vec::new();
        for run in 0..cfg.runs {
            let seed = cfg.seed + run;
            let prepared = prepare_run(&cfg, seed)?;
            let log = prepared.artifacts.log.clone().unwrap_or_default();
            iters.push(log.outer_iters_run);
            for (ai, arch) in [Arch::Gcn, Arch::Sage, Arch::Gat].into_iter().enumerate() {
                let report = evaluate_victim(&cfg, &prepared, arch, seed)?;
                means[ai] += report.asr_avg / cfg.runs as f64;
                mins[ai] = mins[ai].min(report.asr_avg);
                for (k, &v) in report.asr_per_category.iter().enumerate() {
                    cat_sums[k][ai] += v / cfg.runs as f64;
                }
            }
        }
        let worst_cat: Vec<f64> = (0..3)
            .map(|ai| {
                cat_sums
                    .iter()
                    .map(|c| c[ai])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        println!(
            "{name:12} gcn {:.3} (min {:.2}, worst-cat {:.2})  sage {:.3} (min {:.2})  gat {:.3} (min {:.2})  iters {:?}  {:.0}s",
            means[0], mins[0], worst_cat[0], means[1], mins[1], means[2], mins[2], iters,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
