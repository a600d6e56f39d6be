//! Ablation sweep on the default synthetic dataset.
//!
//! `cargo run --release -p scpnet-core --example ablation [seeds]`
//!
//! Prints final test mAP per variant and, for the full configuration, the
//! per-epoch pseudo-label precision without and with graph calibration.

use scpnet::data::{synth_generate, SynthConfig};
use scpnet::train::{train, TrainConfig};
use scpnet::GraphMode;

fn main() -> scpnet::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let full = TrainConfig::synthetic();
    let variants = [
        ("baseline", full.clone().baseline()),
        ("+sam", full.clone().sam_only()),
        ("full", full.clone()),
        ("dynamic", TrainConfig { graph_mode: GraphMode::Dynamic, ..full }),
    ];
    for (name, base) in &variants {
        let mut maps = Vec::new();
        for seed in 0..seeds {
            let data = synth_generate(&SynthConfig { seed, ..Default::default() })?;
            let cfg = TrainConfig { seed, ..base.clone() };
            let out = train(&cfg, &data.train, Some(&data.test), &data.embeddings)?;
            let last = out.log.last().and_then(|r| r.test_map).unwrap_or(f64::NAN);
            println!("{name:>9} seed {seed}: final mAP {last:.4}");
            if *name == "full" {
                for r in &out.log.records {
                    println!(
                        "          epoch {:>2}: precision {:.4} calibrated {:.4}",
                        r.epoch,
                        r.pseudo_precision.unwrap_or(f64::NAN),
                        r.pseudo_precision_calibrated.unwrap_or(f64::NAN)
                    );
                }
            }
            maps.push(last);
        }
        println!("{name:>9} mean final mAP {:.4}", maps.iter().sum::<f64>() / maps.len() as f64);
    }
    Ok(())
}
