//! The optimization loop: one discriminator step then one generator step
//! per batch, explicit RNG threading, periodic checkpoints.

use super::checkpoint::{Checkpoint, Record};
use super::{TrainConfig, TrainError};
use crate::image::{load_images, ImageBatch};
use crate::metrics::bit_accuracy;
use crate::model::{hard_threshold, losses, Ctx, MessageBits, WatermarkModel};
use crate::noise::{self, NoiseSpec};
use crate::tensor::{Adam, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Per-step scalar diagnostics.
#[derive(Clone, Debug)]
pub struct StepMetrics {
    pub step: u64,
    pub l_enc: f64,
    pub l_dec: f64,
    pub l_adv: f64,
    pub l_den: f64,
    pub d_loss: f64,
    pub bar: f64,
    pub noise: NoiseSpec,
}

impl StepMetrics {
    pub fn csv_header() -> &'static str {
        "step,l_enc,l_dec,l_adv,l_den,bar,noise_kind"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.step, self.l_enc, self.l_dec, self.l_adv, self.l_den, self.bar, self.noise
        )
    }
}

/// Weighted sum of the four generator-side losses. Every component must be
/// finite; a non-finite one aborts naming the offending term.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    l_enc: Var,
    l_dec: Var,
    l_adv: Var,
    l_den: Var,
    lambdas: [f64; 4],
) -> Result<Var, TrainError> {
    let named = [
        ("encoder", l_enc),
        ("decoder", l_dec),
        ("adversarial", l_adv),
        ("denoiser", l_den),
    ];
    for (component, v) in named {
        if !tape.scalar_value(v).is_finite() {
            return Err(TrainError::NonFinite {
                component,
                step: 0,
                last_checkpoint: None,
            });
        }
    }
    let t1 = tape.mul_scalar(l_enc, T::from_f64(lambdas[0]))?;
    let t2 = tape.mul_scalar(l_dec, T::from_f64(lambdas[1]))?;
    let t3 = tape.mul_scalar(l_adv, T::from_f64(lambdas[2]))?;
    let t4 = tape.mul_scalar(l_den, T::from_f64(lambdas[3]))?;
    let a = tape.add(t1, t2)?;
    let b = tape.add(t3, t4)?;
    Ok(tape.add(a, b)?)
}

/// Scale gradients so their global L2 norm does not exceed `max_norm`
/// (0 disables).
fn clip_global_norm(grads: &mut [(ParamId, Vec<f32>)], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let sq: f64 = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for (_, g) in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    model: WatermarkModel,
    store: ParamStore<f32>,
    opt_gen: Adam<f32>,
    opt_disc: Adam<f32>,
    step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = WatermarkModel::new(cfg.model_config(), &mut store, &mut rng)?;
        let opt_gen = Adam::new(cfg.lr, &model.gen_params(), &store);
        let opt_disc = Adam::new(cfg.lr, &model.disc_params(), &store);
        Ok(Self {
            cfg,
            model,
            store,
            opt_gen,
            opt_disc,
            step: 0,
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Runtime knobs (steps, directories, checkpoint interval) may be
    /// adjusted after a resume; structural fields describe the already-built
    /// model and must stay put.
    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.cfg
    }

    pub fn model(&self) -> &WatermarkModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One full optimization step: discriminator first, then the generator
    /// side through encode -> distort -> denoise -> decode.
    pub fn train_step(
        &mut self,
        covers: &Tensor<f32>,
        messages: &MessageBits,
    ) -> Result<StepMetrics, TrainError> {
        self.step += 1;
        let step = self.step;
        let msg_t = messages.to_tensor::<f32>();

        // Discriminator update on real vs (frozen) encoded images.
        let d_loss = {
            let mut tape = Tape::new();
            let cover_v = tape.constant(covers);
            let msg_v = tape.constant(&msg_t);
            let encoded = {
                let mut cx = Ctx::new(&mut tape, &self.store, false);
                self.model.encode(&mut cx, cover_v, msg_v)?
            };
            let (real_logits, fake_logits) = {
                let mut cx = Ctx::new(&mut tape, &self.store, true);
                let real = self.model.discriminate(&mut cx, cover_v)?;
                let fake = self.model.discriminate(&mut cx, encoded)?;
                (real, fake)
            };
            let shape = tape.shape(real_logits).to_vec();
            let ones = tape.full_like(&shape, 1.0);
            let zeros = tape.full_like(&shape, 0.0);
            let real_term = tape.bce_with_logits(real_logits, ones)?;
            let fake_term = tape.bce_with_logits(fake_logits, zeros)?;
            let d_loss = tape.add(real_term, fake_term)?;
            let value = tape.scalar_value(d_loss) as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    component: "discriminator",
                    step,
                    last_checkpoint: None,
                });
            }
            tape.backward(d_loss)?;
            let mut grads = tape.param_grads();
            clip_global_norm(&mut grads, self.cfg.clip_grad_norm);
            self.opt_disc.step(&mut self.store, &grads)?;
            value
        };

        // Generator update through the full pipeline.
        let mut tape = Tape::new();
        let cover_v = tape.constant(covers);
        let msg_v = tape.constant(&msg_t);
        let encoded = {
            let mut cx = Ctx::new(&mut tape, &self.store, true);
            self.model.encode(&mut cx, cover_v, msg_v)?
        };
        let (noised, chosen) = noise::sample_and_apply(
            &mut tape,
            &self.cfg.noise_pool,
            encoded,
            cover_v,
            &mut self.rng,
        )?;
        let (residual, scores) = {
            let mut cx = Ctx::new(&mut tape, &self.store, true);
            let residual = self.model.predict_residual(&mut cx, noised)?;
            let scores = self.model.decode(&mut cx, residual, noised)?;
            (residual, scores)
        };
        let l_enc = losses::encoder_loss(&mut tape, encoded, cover_v)?;
        let l_dec = losses::decoder_loss(&mut tape, msg_v, scores)?;
        let l_den = if self.model.denoiser.is_some() {
            // The residual target is a label for the denoiser, not a
            // training signal for the encoder, so it is detached here.
            let target_encoded = tape.detach(encoded)?;
            losses::denoiser_loss(&mut tape, residual, target_encoded, cover_v)?
        } else {
            tape.zeros(vec![1])
        };
        let l_adv = {
            let mut cx = Ctx::new(&mut tape, &self.store, false);
            let fake_logits = self.model.discriminate(&mut cx, encoded)?;
            let shape = cx.tape.shape(fake_logits).to_vec();
            let ones = cx.tape.full_like(&shape, 1.0);
            cx.tape.bce_with_logits(fake_logits, ones)?
        };
        let lambdas = [
            self.cfg.lambda_encoder,
            self.cfg.lambda_decoder,
            self.cfg.lambda_adversarial,
            self.cfg.lambda_denoiser,
        ];
        let total =
            total_loss(&mut tape, l_enc, l_dec, l_adv, l_den, lambdas).map_err(|e| match e {
                TrainError::NonFinite { component, .. } => TrainError::NonFinite {
                    component,
                    step,
                    last_checkpoint: None,
                },
                other => other,
            })?;
        let metrics = StepMetrics {
            step,
            l_enc: tape.scalar_value(l_enc) as f64,
            l_dec: tape.scalar_value(l_dec) as f64,
            l_adv: tape.scalar_value(l_adv) as f64,
            l_den: tape.scalar_value(l_den) as f64,
            d_loss,
            bar: bit_accuracy(messages, &hard_threshold(&tape.value(scores)))?,
            noise: chosen,
        };
        tape.backward(total)?;
        let mut grads = tape.param_grads();
        clip_global_norm(&mut grads, self.cfg.clip_grad_norm);
        self.opt_gen.step(&mut self.store, &grads)?;
        Ok(metrics)
    }

    /// Sample a batch (indices and fresh fair-coin messages) from the
    /// training images and run one step.
    pub fn run_step(&mut self, train_images: &ImageBatch<f32>) -> Result<StepMetrics, TrainError> {
        let n = train_images.batch();
        let plane = 3 * train_images.height() * train_images.width();
        let b = self.cfg.batch_size;
        let indices: Vec<usize> = (0..b).map(|_| self.rng.gen_range(0..n)).collect();
        let mut data = Vec::with_capacity(b * plane);
        for &i in &indices {
            data.extend_from_slice(&train_images.tensor().data()[i * plane..(i + 1) * plane]);
        }
        let covers = Tensor::new(
            vec![b, 3, train_images.height(), train_images.width()],
            data,
        )?;
        let messages = MessageBits::random(b, self.cfg.message_len, &mut self.rng);
        self.train_step(&covers, &messages)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let mut cp = Checkpoint::new();
        for (_, p) in self.store.iter() {
            cp.push(p.name().to_string(), Record::tensor(p.value()))?;
        }
        for (prefix, opt) in [("optim.gen", &self.opt_gen), ("optim.disc", &self.opt_disc)] {
            for (id, m, v) in opt.moments() {
                let name = self.store.get(id)?.name().to_string();
                cp.push(
                    format!("{prefix}.m.{name}"),
                    Record::from_slice(vec![m.len()], m),
                )?;
                cp.push(
                    format!("{prefix}.v.{name}"),
                    Record::from_slice(vec![v.len()], v),
                )?;
            }
            cp.push(format!("{prefix}.t"), Record::u64_scalar(opt.t()))?;
        }
        cp.push("trainer.step", Record::u64_scalar(self.step))?;
        let mut rng_bytes = Vec::with_capacity(56);
        rng_bytes.extend_from_slice(&self.rng.get_seed());
        rng_bytes.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        rng_bytes.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        cp.push("trainer.rng", Record::Bytes(rng_bytes))?;
        cp.push(
            "trainer.config",
            Record::Bytes(self.cfg.to_canonical_text().into_bytes()),
        )?;
        cp.save(path)?;
        Ok(())
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self, TrainError> {
        let cp = Checkpoint::load(path)?;
        let config_text = String::from_utf8(cp.take_bytes("trainer.config")?.to_vec())
            .map_err(|_| TrainError::BadConfig("config snapshot is not utf-8".into()))?;
        let cfg = TrainConfig::parse_text(&config_text, "checkpoint")?;
        let mut trainer = Self::new(cfg)?;

        let mut expected: Vec<String> = Vec::new();
        for (_, p) in trainer.store.iter() {
            expected.push(p.name().to_string());
        }
        for prefix in ["optim.gen", "optim.disc"] {
            let opt = if prefix == "optim.gen" {
                &trainer.opt_gen
            } else {
                &trainer.opt_disc
            };
            for (id, _, _) in opt.moments() {
                let name = trainer.store.get(id)?.name().to_string();
                expected.push(format!("{prefix}.m.{name}"));
                expected.push(format!("{prefix}.v.{name}"));
            }
            expected.push(format!("{prefix}.t"));
        }
        expected.extend(
            ["trainer.step", "trainer.rng", "trainer.config"]
                .iter()
                .map(|s| s.to_string()),
        );
        for name in cp.names() {
            if !expected.iter().any(|e| e == name) {
                return Err(TrainError::Checkpoint(
                    super::checkpoint::CheckpointError::Unexpected(name.to_string()),
                ));
            }
        }

        let ids: Vec<ParamId> = trainer.store.ids().collect();
        for id in ids {
            let (name, shape) = {
                let p = trainer.store.get(id)?;
                (p.name().to_string(), p.value().shape().to_vec())
            };
            let data = cp.take_f32(&name, &shape)?;
            let t = Tensor::new(shape, data).map_err(TrainError::Tensor)?;
            *trainer.store.get_mut(id)?.value_mut() = t;
        }
        for (prefix, opt) in [
            ("optim.gen", &mut trainer.opt_gen),
            ("optim.disc", &mut trainer.opt_disc),
        ] {
            let t = cp.take_u64(&format!("{prefix}.t"))?;
            let entries: Vec<(ParamId, usize)> = opt
                .moments()
                .map(|(id, m, _)| (id, m.len()))
                .collect();
            for (id, len) in entries {
                let name = trainer.store.get(id)?.name().to_string();
                let m = cp.take_f32(&format!("{prefix}.m.{name}"), &[len])?;
                let v = cp.take_f32(&format!("{prefix}.v.{name}"), &[len])?;
                opt.restore(id, m, v, t)?;
            }
        }
        trainer.step = cp.take_u64("trainer.step")?;
        let rng_bytes = cp.take_bytes("trainer.rng")?;
        if rng_bytes.len() != 56 {
            return Err(TrainError::Checkpoint(
                super::checkpoint::CheckpointError::Truncated("trainer.rng".into()),
            ));
        }
        let seed: [u8; 32] = rng_bytes[0..32].try_into().expect("length checked");
        let word_pos = u128::from_le_bytes(rng_bytes[32..48].try_into().expect("length checked"));
        let stream = u64::from_le_bytes(rng_bytes[48..56].try_into().expect("length checked"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        trainer.rng = rng;
        Ok(trainer)
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub eval: super::eval::EvalReport,
    pub steps_run: u64,
}

/// Split a loaded directory into train/holdout (holdout takes the
/// lexicographic tail).
pub fn split_holdout(
    images: &ImageBatch<f32>,
    fraction: f64,
) -> Result<(ImageBatch<f32>, ImageBatch<f32>), TrainError> {
    let n = images.batch();
    let holdout_n = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let train_n = n - holdout_n;
    if train_n == 0 {
        return Err(TrainError::BadConfig(
            "holdout fraction leaves no training images".into(),
        ));
    }
    let plane = 3 * images.height() * images.width();
    let (h, w) = (images.height(), images.width());
    let data = images.tensor().data();
    let train = Tensor::new(vec![train_n, 3, h, w], data[..train_n * plane].to_vec())?;
    let train = ImageBatch::new(train, images.role())?;
    let holdout_n = holdout_n.max(1).min(n);
    let start = n - holdout_n;
    let hold = Tensor::new(vec![holdout_n, 3, h, w], data[start * plane..].to_vec())?;
    let hold = ImageBatch::new(hold, images.role())?;
    Ok((train, hold))
}

/// Run a full training session: load data, iterate steps, write the
/// metrics CSV and periodic checkpoints, then evaluate the holdout split.
pub fn train_loop(cfg: TrainConfig, resume: Option<&Path>) -> Result<RunSummary, TrainError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| TrainError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let images = load_images::<f32>(&cfg.data_dir, cfg.image_size, cfg.image_size)?;
    let (train_images, holdout_images) = split_holdout(&images, cfg.holdout_fraction)?;

    let mut trainer = match resume {
        None => Trainer::new(cfg.clone())?,
        Some(path) => {
            let mut t = Trainer::from_checkpoint(path)?;
            let run = t.config_mut();
            run.steps = cfg.steps;
            run.data_dir = cfg.data_dir.clone();
            run.out_dir = cfg.out_dir.clone();
            run.checkpoint_interval = cfg.checkpoint_interval;
            t
        }
    };

    let csv_path = trainer.config().out_dir.join("metrics.csv");
    let mut csv = if resume.is_some() && csv_path.exists() {
        std::fs::OpenOptions::new()
            .append(true)
            .open(&csv_path)
            .map_err(|source| TrainError::Io {
                path: csv_path.clone(),
                source,
            })?
    } else {
        let mut f = std::fs::File::create(&csv_path).map_err(|source| TrainError::Io {
            path: csv_path.clone(),
            source,
        })?;
        writeln!(f, "{}", StepMetrics::csv_header()).map_err(|source| TrainError::Io {
            path: csv_path.clone(),
            source,
        })?;
        f
    };

    let mut last_checkpoint: Option<PathBuf> = None;
    while trainer.step() < trainer.config().steps {
        let metrics = trainer.run_step(&train_images).map_err(|e| match e {
            TrainError::NonFinite {
                component, step, ..
            } => TrainError::NonFinite {
                component,
                step,
                last_checkpoint: last_checkpoint.clone(),
            },
            other => other,
        })?;
        writeln!(csv, "{}", metrics.csv_row()).map_err(|source| TrainError::Io {
            path: csv_path.clone(),
            source,
        })?;
        let interval = trainer.config().checkpoint_interval;
        if interval > 0 && metrics.step % interval == 0 {
            let path = trainer
                .config()
                .out_dir
                .join(format!("checkpoint_{:06}.pwfn", metrics.step));
            trainer.save_checkpoint(&path)?;
            last_checkpoint = Some(path);
        }
    }
    drop(csv);

    let final_checkpoint = trainer.config().out_dir.join("checkpoint_final.pwfn");
    trainer.save_checkpoint(&final_checkpoint)?;

    let eval = super::eval::evaluate(
        trainer.model(),
        trainer.store(),
        &holdout_images,
        &trainer.config().noise_pool,
        trainer.config().eval_messages,
        trainer.config().seed,
    )?;
    Ok(RunSummary {
        final_checkpoint,
        metrics_csv: csv_path,
        eval,
        steps_run: trainer.step(),
    })
}
