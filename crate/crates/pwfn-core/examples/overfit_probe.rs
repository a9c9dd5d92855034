use pwfn_core::model::MessageBits;
use pwfn_core::noise::NoisePool;
use pwfn_core::synth::synth_batch;
use pwfn_core::tensor::Tensor;
use pwfn_core::train::{TrainConfig, Trainer};
use rand::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let l2: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let ch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let mut cfg = TrainConfig::default();
    cfg.image_size = 32;
    cfg.message_len = 8;
    cfg.batch_size = 4;
    cfg.base_channels = ch;
    cfg.lambda_decoder = l2;
    cfg.noise_pool = NoisePool::parse("identity").unwrap();
    cfg.steps = 400;
    let mut trainer = Trainer::new(cfg).unwrap();
    let images = synth_batch::<f32>(4, 32, 32, 42);
    let covers: Tensor<f32> = images.tensor().clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let msgs = MessageBits::random(4, 8, &mut rng);
    for step in 1..=400u64 {
        let m = trainer.train_step(&covers, &msgs).unwrap();
        if step % 50 == 0 {
            println!(
                "step {step}: l_enc={:.6} l_dec={:.4} l_den={:.5} d={:.4} bar={:.3}",
                m.l_enc, m.l_dec, m.l_den, m.d_loss, m.bar
            );
        }
    }
}
