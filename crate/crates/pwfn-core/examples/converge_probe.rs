use pwfn_core::synth::write_synth_dataset;
use pwfn_core::train::{train_loop, TrainConfig};
use pwfn_core::noise::NoisePool;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(800);
    let ch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);
    let dir = std::env::temp_dir().join(format!("pwfn_probe_{seed}"));
    write_synth_dataset(&dir.join("data"), 64, 64, 64, 1234).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.image_size = 64;
    cfg.message_len = 8;
    cfg.batch_size = 8;
    cfg.steps = steps;
    cfg.base_channels = ch;
    cfg.noise_pool = NoisePool::parse("identity").unwrap();
    cfg.seed = seed;
    cfg.checkpoint_interval = 0;
    cfg.data_dir = dir.join("data");
    cfg.out_dir = dir.join(format!("out_{seed}_{steps}_{ch}"));
    cfg.holdout_fraction = 0.125;
    cfg.eval_messages = 4;
    let t0 = std::time::Instant::now();
    let run = train_loop(cfg, None).unwrap();
    println!(
        "steps={steps} ch={ch} seed={seed}: psnr={:.2} ssim={:.4} bar_id={:.4} ({:.0}s)",
        run.eval.psnr, run.eval.ssim, run.eval.bar_identity, t0.elapsed().as_secs_f64()
    );
    // tail of metrics
    let csv = std::fs::read_to_string(&run.metrics_csv).unwrap();
    for line in csv.lines().rev().take(3) { println!("  {line}"); }
}
