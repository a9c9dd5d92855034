use pwfn_core::synth::write_synth_dataset;
use pwfn_core::train::{train_loop, TrainConfig};
use pwfn_core::noise::NoisePool;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let size: usize = a[1].parse().unwrap();
    let steps: u64 = a[2].parse().unwrap();
    let ch: usize = a[3].parse().unwrap();
    let l1: f64 = a[4].parse().unwrap();
    let l2: f64 = a[5].parse().unwrap();
    let seed: u64 = a[6].parse().unwrap();
    let pool = a.get(7).cloned().unwrap_or_else(|| "identity".into());
    let lr: f64 = a.get(8).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let l4: f64 = a.get(9).map(|s| s.parse().unwrap()).unwrap_or(1.5);
    let root = std::env::temp_dir().join("pwfn_tune");
    write_synth_dataset(&root.join(format!("data{size}")), 64, size, size, 1234).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.image_size = size;
    cfg.message_len = 8;
    cfg.batch_size = 8;
    cfg.steps = steps;
    cfg.base_channels = ch;
    cfg.lambda_encoder = l1;
    cfg.lambda_decoder = l2;
    cfg.lambda_denoiser = l4;
    cfg.lr = lr;
    cfg.noise_pool = NoisePool::parse(&pool).unwrap();
    cfg.seed = seed;
    cfg.checkpoint_interval = 0;
    cfg.data_dir = root.join(format!("data{size}"));
    cfg.out_dir = root.join(format!("o{size}_{seed}_{steps}_{ch}_{l1}_{l2}_{lr}_{l4}_{}", pool.len()));
    cfg.holdout_fraction = 0.125;
    cfg.eval_messages = 4;
    let t0 = std::time::Instant::now();
    let run = train_loop(cfg, None).unwrap();
    println!(
        "size={size} steps={steps} ch={ch} l1={l1} l2={l2} lr={lr} seed={seed} pool={pool} l4={l4}: psnr={:.2} bar_id={:.4} bar_pool={:.4} ({:.0}s)",
        run.eval.psnr, run.eval.bar_identity, run.eval.bar_pool, t0.elapsed().as_secs_f64()
    );
}
