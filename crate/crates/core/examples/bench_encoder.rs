// quick micro-bench of encoder fwd+bwd through the public API
use eegscreen::autodiff::{Layer, Mode, Tensor};
use eegscreen::neural::{EegNetEncoder, EncoderConfig};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut enc = EegNetEncoder::new(EncoderConfig::default(), &mut rng);
    let b = 32;
    let x = Tensor::from_vec(
        &[b, 1, 19, 600],
        (0..b * 19 * 600).map(|i| (i as f64 * 0.001).sin()).collect(),
    );
    // warmup
    let y = enc.forward(&x, Mode::Train);
    let g = Tensor::from_vec(&y.shape, vec![1.0; y.len()]);
    enc.backward(&g);

    let iters = 20;
    let t0 = Instant::now();
    for _ in 0..iters {
        let y = enc.forward(&x, Mode::Train);
        let g = Tensor::from_vec(&y.shape, vec![1.0; y.len()]);
        enc.backward(&g);
    }
    let dt = t0.elapsed().as_secs_f64();
    let frames = (iters * b) as f64;
    // temporal conv dominates: ~17.5M MACs fwd+bwd per frame
    let flops = frames * 40.0e6;
    println!(
        "fwd+bwd: {:.2} ms/frame, ~{:.2} GFLOP/s",
        1000.0 * dt / frames,
        flops / dt / 1e9
    );
}
