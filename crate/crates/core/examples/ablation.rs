//! Three-run ablation on cluttered synthetic scenes: raw input, modulated
//! input, and modulated input trained on a mix of clean and cluttered
//! scenes. All three are scored on the same cluttered test images.
//!
//! cargo run --release --example ablation -- [seed]

use vishud::datasets::{split_manifest, synth_generate, SynthCfg};
use vishud::eval::{evaluate, DEFAULT_IOU};
use vishud::inference::{detect, ClusterCfg};
use vishud::saliency::SaliencySettings;
use vishud::training::{train, LossWeights, Sample, TrainConfig};
use vishud::NetConfig;

fn samples(scenes: &[(vishud::Image, vishud::datasets::Annotation)], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| Sample::new(scenes[i].0.clone(), scenes[i].1.boxes.clone())).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(42), |s| s.parse())?;
    let cluttered = synth_generate(&SynthCfg { count: 360, clutter_density: 0.8, occlusion_prob: 0.5, seed, ..SynthCfg::default() })?;
    let clean = synth_generate(&SynthCfg { count: 150, clutter_density: 0.2, occlusion_prob: 0.0, seed: seed + 1, ..SynthCfg::default() })?;
    let [tr, _, te] = split_manifest(cluttered.len(), [300.0 / 360.0, 0.0, 60.0 / 360.0], seed)?;
    let train_cluttered = samples(&cluttered, &tr.entries);
    let test = samples(&cluttered, &te.entries);
    // Half the cluttered training set plus the clean domain.
    let mut combined: Vec<Sample> = train_cluttered.iter().step_by(2).cloned().collect();
    combined.extend(clean.iter().map(|(i, a)| Sample::new(i.clone(), a.boxes.clone())));

    let net = NetConfig::desk();
    let cfg = TrainConfig { seed, ..TrainConfig::desk() };
    let runs = [
        ("saliency off", SaliencySettings::off(), &train_cluttered),
        ("saliency builtin", SaliencySettings::builtin(), &train_cluttered),
        ("builtin, combined domains", SaliencySettings::builtin(), &combined),
    ];
    for (name, sal, data) in runs {
        let out = train(data, &cfg, &net, LossWeights::default(), &sal)?;
        let per_image: Vec<_> = test
            .iter()
            .map(|s| Ok((detect(&out.params, &net, &s.image, &sal, None, &ClusterCfg::default())?, s.boxes.clone())))
            .collect::<Result<_, vishud::inference::DetectError>>()?;
        let report = evaluate(&per_image, DEFAULT_IOU)?;
        println!("== {name} ({} training images)\n{}", data.len(), report.to_text());
    }
    Ok(())
}
