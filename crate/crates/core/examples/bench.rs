//! Forward and training-step timings of the mini backbone with a single-view head.

use mammocascade::netforge::*;
use mammocascade::pixelops::Plane;
use std::time::Instant;

fn main() {
    let cfg = BackboneConfig::mini();
    for (h, w) in [(288usize, 224usize), (64, 64)] {
        let bb = build_backbone::<f32>(&cfg, (h, w), 1).unwrap();
        let (m, _) = attach_seeded(&bb, HeadSpec::single_view(HeadSpec::cv_blocks(96, 2)), 2).unwrap();
        let x = ModelInput::Single(Plane::new(h, w, (0..h * w).map(|i| ((i * 7919) % 255) as f32 - 128.0).collect()).unwrap());
        let t = Instant::now();
        for _ in 0..10 {
            m.predict(&x).unwrap();
        }
        let f = t.elapsed().as_secs_f64() / 10.0;
        let t = Instant::now();
        for _ in 0..10 {
            let mut g = m.new_grads();
            m.loss_and_grad(&x, 1, &mut g).unwrap();
        }
        let b = t.elapsed().as_secs_f64() / 10.0;
        println!("{h}x{w}: forward {:.2} ms, train step {:.2} ms, weights {}", f * 1e3, b * 1e3, m.params.n_weights());
    }
}
