//! Computes the built-in saliency map of a synthetic scene and the
//! modulated image fed to the detector, and writes both as PNM files.
//!
//! cargo run --example saliency_mvsi -- [out_dir]

use std::path::PathBuf;

use vishud::datasets::{synth_generate, SynthCfg};
use vishud::raster::save_pnm;
use vishud::saliency::{frequency_tuned_saliency, modulate, ModulationCfg, DEFAULT_SIGMA};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "saliency_out".into()));
    std::fs::create_dir_all(&out)?;
    let scenes = synth_generate(&SynthCfg { count: 1, clutter_density: 0.6, ..SynthCfg::default() })?;
    let (img, ann) = &scenes[0];
    let map = frequency_tuned_saliency(img, DEFAULT_SIGMA);
    let mvsi = modulate(img, &map, ModulationCfg::default())?;

    // Mean saliency inside vs outside the people.
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.get(x, y);
            if ann.boxes.iter().any(|b| b.contains(x as f64 + 0.5, y as f64 + 0.5)) {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
                n_out += 1;
            }
        }
    }
    println!("people: {:?}", ann.boxes);
    println!("mean saliency inside boxes {:.3}, outside {:.3}", inside / n_in as f64, outside / n_out.max(1) as f64);

    std::fs::write(out.join("input.ppm"), save_pnm(img))?;
    std::fs::write(out.join("saliency.pgm"), save_pnm(&map.to_image()))?;
    std::fs::write(out.join("mvsi.ppm"), save_pnm(&mvsi))?;
    println!("wrote input.ppm, saliency.pgm, mvsi.ppm to {}", out.display());
    Ok(())
}
