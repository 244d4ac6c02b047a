//! Compares backpropagated gradients of the total loss with central finite
//! differences on a two-block network.
//!
//! cargo run --release --example gradient_check

use vishud::gridcodec::{encode, BBox};
use vishud::network::{backward, forward, init, Block, NetConfig, NetParams};
use vishud::raster::Image;
use vishud::training::{bbox_loss, coverage_loss, total_loss, LossWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = NetConfig {
        input_w: 16,
        input_h: 16,
        input_channels: 3,
        blocks: vec![Block::new(4, 3, true), Block::new(6, 3, true)],
        dropout_rate: 0.5,
        bbox_scale: 1.0,
    };
    let mut params = init(&cfg, 7)?;
    let mut img = Image::filled(16, 16, 3, 0.0);
    for y in 0..16 {
        for x in 0..16 {
            for c in 0..3 {
                img.set(x, y, c, 0.5 + 0.4 * ((x * 3 + y * 5 + c) as f64).sin());
            }
        }
    }
    let truth = vec![encode(&[BBox::new(3.0, 2.0, 7.5, 13.0)?], cfg.grid())?];
    let seed = 99;
    let loss = |p: &NetParams| -> f64 {
        let (pred, _) = forward(p, &cfg, &img, true, seed).unwrap();
        let cov = coverage_loss(&truth, &[pred.coverage]).unwrap();
        let bb = bbox_loss(&truth, &[pred.bbox]).unwrap();
        total_loss(cov, bb, LossWeights::default()).total
    };

    let (pred, cache) = forward(&params, &cfg, &img, true, seed)?;
    let terms = total_loss(
        coverage_loss(&truth, &[pred.coverage])?,
        bbox_loss(&truth, &[pred.bbox])?,
        LossWeights::default(),
    );
    let grads = backward(&cache, &params, &terms.grad_coverage[0], &terms.grad_bbox[0])?;
    println!("loss {:.6}, {} parameters", terms.total, params.len());

    let h = 1e-4;
    let n_buffers = params.buffers().count();
    for bi in 0..n_buffers {
        let mut worst: f64 = 0.0;
        let len = params.buffers().nth(bi).unwrap().len();
        for j in 0..len {
            let orig = params.buffers().nth(bi).unwrap()[j];
            params.buffers_mut().nth(bi).unwrap()[j] = orig + h;
            let up = loss(&params);
            params.buffers_mut().nth(bi).unwrap()[j] = orig - h;
            let down = loss(&params);
            params.buffers_mut().nth(bi).unwrap()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let exact = grads.buffers().nth(bi).unwrap()[j];
            worst = worst.max((numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-8));
        }
        println!("buffer {bi:>2} ({len:>4} values): max relative error {worst:.2e}");
    }
    Ok(())
}
