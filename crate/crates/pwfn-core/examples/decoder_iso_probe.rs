// Supervised isolation: cover + fixed linear grid watermark -> decoder.
use pwfn_core::model::{hard_threshold, losses, Ctx, MessageBits, ModelConfig, DecoderNet};
use pwfn_core::metrics::bit_accuracy;
use pwfn_core::synth::synth_batch;
use pwfn_core::tensor::{Adam, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let amp: f32 = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let steps: u64 = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(500);
    let size = 32usize;
    let l = 8usize;
    let b = 8usize;
    let cfg = ModelConfig { image_size: size, message_len: l, base_channels: 8, ..Default::default() };
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let decoder = DecoderNet::new(&cfg, &mut store, &mut rng).unwrap();
    let mut opt = Adam::new(1e-3, &decoder.params(), &store);
    // Fixed dispersion matrix: each bit owns 32 random grid cells with +/- amp.
    let mut arng = ChaCha8Rng::seed_from_u64(99);
    let disp: Vec<f32> = (0..256 * l).map(|_| if arng.gen::<bool>() { amp } else { -amp }).collect();
    let covers = synth_batch::<f32>(64, size, size, 7);
    let cell = size / 16;
    for step in 1..=steps {
        let msgs = MessageBits::random(b, l, &mut rng);
        let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..64)).collect();
        // watermarked = cover + map, map replicated per cell
        let mut data = Vec::with_capacity(b * 3 * size * size);
        for (bi, &i) in idx.iter().enumerate() {
            let plane = 3 * size * size;
            let cov = &covers.tensor().data()[i * plane..(i + 1) * plane];
            let bits = msgs.row(bi);
            for c in 0..3 {
                for y in 0..size {
                    for x in 0..size {
                        let cell_i = (y / cell) * 16 + x / cell;
                        let mut v = cov[c * size * size + y * size + x];
                        let mut add = 0.0f32;
                        for (j, &bit) in bits.iter().enumerate() {
                            add += disp[cell_i * l + j] * if bit == 1 { 1.0 } else { -1.0 };
                        }
                        v += add;
                        data.push(v);
                    }
                }
            }
        }
        let wm = Tensor::new(vec![b, 3, size, size], data).unwrap();
        let mut tape = Tape::new();
        let img = tape.constant(&wm);
        let msg_t = msgs.to_tensor::<f32>();
        let msg_v = tape.constant(&msg_t);
        let zeros = tape.zeros(vec![b, 3, size, size]);
        let scores = { let mut cx = Ctx::new(&mut tape, &store, true); decoder.forward(&mut cx, zeros, img).unwrap() };
        let loss = losses::decoder_loss(&mut tape, msg_v, scores).unwrap();
        let bar = bit_accuracy(&msgs, &hard_threshold(&tape.value(scores))).unwrap();
        let lval = tape.scalar_value(loss);
        tape.backward(loss).unwrap();
        let grads = tape.param_grads();
        opt.step(&mut store, &grads).unwrap();
        if step % 100 == 0 { println!("step {step}: l_dec={lval:.4} bar={bar:.3}"); }
    }
}
