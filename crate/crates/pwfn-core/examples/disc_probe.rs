use pwfn_core::model::MessageBits;
use pwfn_core::noise::NoisePool;
use pwfn_core::synth::synth_batch;
use pwfn_core::tensor::Tensor;
use pwfn_core::train::{TrainConfig, Trainer};
use rand::SeedableRng;

fn main() {
    let mut cfg = TrainConfig::default();
    cfg.image_size = 32;
    cfg.message_len = 8;
    cfg.batch_size = 4;
    cfg.base_channels = 8;
    cfg.noise_pool = NoisePool::parse("identity").unwrap();
    let mut trainer = Trainer::new(cfg).unwrap();
    let images = synth_batch::<f32>(4, 32, 32, 42);
    let covers: Tensor<f32> = images.tensor().clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let msgs = MessageBits::random(4, 8, &mut rng);
    for step in 1..=60u64 {
        let m = trainer.train_step(&covers, &msgs).unwrap();
        if step % 20 == 0 {
            let store = trainer.store();
            let head_w = store.find("discriminator.head.weight").unwrap();
            let norm: f32 = store.get(head_w).unwrap().value().data().iter().map(|v| v*v).sum::<f32>().sqrt();
            let enc_head = store.find("encoder.head.weight").unwrap();
            let enorm: f32 = store.get(enc_head).unwrap().value().data().iter().map(|v| v*v).sum::<f32>().sqrt();
            println!("step {step}: d={:.5} bar={:.3} ||disc.head||={:.6} ||enc.head||={:.6}", m.d_loss, m.bar, norm, enorm);
        }
    }
}
