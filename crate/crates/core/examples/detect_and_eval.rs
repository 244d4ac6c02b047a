//! Trains briefly, detects on held-out scenes, and prints the evaluation
//! report and miss-rate/FPPI curve.
//!
//! cargo run --release --example detect_and_eval -- [epochs]

use vishud::datasets::{synth_generate, SynthCfg};
use vishud::eval::{evaluate, format_curve, DEFAULT_IOU};
use vishud::inference::{detect, format_detections, ClusterCfg};
use vishud::saliency::SaliencySettings;
use vishud::training::{train, LossWeights, Sample, TrainConfig};
use vishud::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let scenes = synth_generate(&SynthCfg { count: 140, seed: 7, ..SynthCfg::default() })?;
    let (train_part, test_part) = scenes.split_at(120);
    let samples: Vec<Sample> = train_part.iter().map(|(i, a)| Sample::new(i.clone(), a.boxes.clone())).collect();
    let net = NetConfig::desk();
    let cfg = TrainConfig {
        epochs,
        lr_decay_start_epoch: epochs.saturating_sub(epochs / 3),
        seed: 7,
        ..TrainConfig::desk()
    };
    let sal = SaliencySettings::builtin();
    let out = train(&samples, &cfg, &net, LossWeights::default(), &sal)?;

    let mut per_image = Vec::new();
    let mut rows = Vec::new();
    for (img, ann) in test_part {
        let dets = detect(&out.params, &net, img, &sal, None, &ClusterCfg::default())?;
        rows.push((ann.image_path.clone(), dets.clone()));
        per_image.push((dets, ann.boxes.clone()));
    }
    let report = evaluate(&per_image, DEFAULT_IOU)?;
    println!("-- first detections");
    let text = format_detections(rows.iter().map(|(id, d)| (id.as_str(), d.as_slice())));
    for line in text.lines().take(8) {
        println!("{line}");
    }
    println!("-- report\n{}", report.to_text());
    println!("-- curve (fppi,miss_rate,threshold)\n{}", format_curve(&report.curve));
    Ok(())
}
