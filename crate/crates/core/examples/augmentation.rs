//! Expands one annotated image into its 14 flip/rotation variants and prints
//! the transformed boxes.
//!
//! cargo run --example augmentation -- [out_dir]

use std::path::PathBuf;

use vishud::datasets::{synth_generate, SynthCfg};
use vishud::raster::save_pnm;
use vishud::training::{augment, AUGMENT_ANGLES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let scenes = synth_generate(&SynthCfg { count: 1, humans_per_image: (2, 2), ..SynthCfg::default() })?;
    let (img, ann) = &scenes[0];
    let mut names = vec!["original".to_string(), "flip".to_string()];
    names.extend(AUGMENT_ANGLES.iter().map(|a| format!("rotate {a:+}")));
    names.extend(AUGMENT_ANGLES.iter().map(|a| format!("rotate {a:+}, flip")));

    for (k, (variant, boxes)) in augment(img, &ann.boxes).iter().enumerate() {
        let shown: Vec<String> = boxes.iter().map(|b| b.to_string()).collect();
        println!("{k:>2} {:<16} {}", names[k], shown.join(" "));
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("aug_{k:02}.ppm")), save_pnm(variant))?;
        }
    }
    Ok(())
}
