use pwfn_core::synth::synth_batch;
use pwfn_core::train::{TrainConfig, Trainer};
use pwfn_core::model::MessageBits;
use pwfn_core::noise::NoisePool;
use pwfn_core::tensor::Tensor;
use rand::SeedableRng;
use std::time::Instant;

fn probe(size: usize, batch: usize, channels: usize, msg_len: usize, pool: &str, steps: u64) {
    let mut cfg = TrainConfig::default();
    cfg.image_size = size;
    cfg.message_len = msg_len;
    cfg.batch_size = batch;
    cfg.base_channels = channels;
    cfg.noise_pool = NoisePool::parse(pool).unwrap();
    cfg.steps = steps;
    let mut trainer = Trainer::new(cfg).unwrap();
    let images = synth_batch::<f32>(batch, size, size, 42);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let msgs = MessageBits::random(batch, msg_len, &mut rng);
    let covers: Tensor<f32> = images.tensor().clone();
    // warmup
    trainer.train_step(&covers, &msgs).unwrap();
    let t0 = Instant::now();
    for _ in 0..steps {
        trainer.train_step(&covers, &msgs).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / steps as f64;
    println!("size={size} batch={batch} ch={channels} pool={pool}: {:.1} ms/step -> {:.1}s for 1000 steps", dt*1e3, dt*1000.0);
}

fn main() {
    probe(64, 8, 8, 8, "identity", 20);
    probe(64, 8, 12, 8, "identity", 20);
    probe(64, 8, 16, 8, "identity", 10);
    probe(32, 8, 8, 8, "dropout:0.3,blur:2.0,jpeg_sim:50,resize:0.8,crop:0.035", 20);
    probe(48, 8, 8, 8, "dropout:0.3,blur:2.0,jpeg_sim:50,resize:0.8,crop:0.035", 20);
}
