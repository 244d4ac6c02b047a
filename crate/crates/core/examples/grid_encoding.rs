//! Encodes boxes onto the coverage/offset grid, prints it, and decodes it
//! back into candidates and clustered detections.
//!
//! cargo run --example grid_encoding

use vishud::gridcodec::{decode, encode, BBox, GridSpec};
use vishud::inference::{cluster, ClusterCfg};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::for_image(64, 64, 16)?;
    let boxes = [BBox::new(4.0, 2.0, 26.0, 60.0)?, BBox::new(36.0, 10.0, 58.0, 46.0)?];
    let label = encode(&boxes, grid)?;
    println!("i j coverage dc x1off y1off x2off y2off");
    print!("{}", label.dump());

    let candidates = decode(&label.coverage, &label.offsets, grid, 0.5);
    println!("\n{} candidates from {} covered cells", candidates.len(), label.covered_cells().count());
    for d in cluster(&candidates, &ClusterCfg::default()) {
        println!("detection {} score {} from {} cells", d.bbox, d.score, d.cluster_size);
    }
    Ok(())
}
