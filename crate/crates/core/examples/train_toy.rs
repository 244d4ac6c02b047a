//! Trains the default desk network on synthetic scenes and reports test
//! accuracy.
//!
//! cargo run --release --example train_toy -- [seed] [clutter] [occlusion] [off|builtin]

use std::time::Instant;

use vishud::datasets::{split_manifest, synth_generate, SynthCfg};
use vishud::eval;
use vishud::inference::{detect, ClusterCfg};
use vishud::saliency::SaliencySettings;
use vishud::training::{train_with_validation, LossWeights, Sample, TrainConfig};
use vishud::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(Ok(42), |s| s.parse())?;
    let clutter: f64 = args.get(1).map_or(Ok(0.3), |s| s.parse())?;
    let occlusion: f64 = args.get(2).map_or(Ok(0.1), |s| s.parse())?;
    let sal = match args.get(3).map(String::as_str) {
        Some("off") => SaliencySettings::off(),
        _ => SaliencySettings::builtin(),
    };

    let synth = SynthCfg {
        count: 360,
        clutter_density: clutter,
        occlusion_prob: occlusion,
        seed,
        ..SynthCfg::default()
    };
    let scenes = synth_generate(&synth)?;
    let [train_split, _, test_split] = split_manifest(scenes.len(), [300.0 / 360.0, 0.0, 60.0 / 360.0], seed)?;
    let to_samples = |idx: &[usize]| -> Vec<Sample> {
        idx.iter()
            .map(|&i| Sample::new(scenes[i].0.clone(), scenes[i].1.boxes.clone()))
            .collect()
    };
    let train_set = to_samples(&train_split.entries);
    let test_set = to_samples(&test_split.entries);

    let net = NetConfig::desk();
    let cfg = TrainConfig { seed, ..TrainConfig::desk() };
    let start = Instant::now();
    let out = train_with_validation(&train_set, &test_set, &cfg, &net, LossWeights::default(), &sal)?;
    let first = out.epoch_mean_loss(0).unwrap_or(f64::NAN);
    let last = out.epoch_mean_loss(cfg.epochs - 1).unwrap_or(f64::NAN);
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    println!("epoch loss: first {first:.4}, last {last:.4}, ratio {:.3}", last / first);
    println!("per-epoch test accuracy: {:?}", out.val_accuracy);

    let per_image: Vec<_> = test_set
        .iter()
        .map(|s| {
            let dets = detect(&out.params, &net, &s.image, &sal, None, &ClusterCfg::default())?;
            Ok((dets, s.boxes.clone()))
        })
        .collect::<Result<_, vishud::inference::DetectError>>()?;
    let report = eval::evaluate(&per_image, eval::DEFAULT_IOU)?;
    print!("{}", report.to_text());
    Ok(())
}
