//! Alternating generator/discriminator optimization, training loop and
//! checkpointed state.

mod adam;
pub mod checkpoint;
pub mod predict;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datapipe::{self, AugmentConfig, SourceItem, TrainingSample};
use crate::discriminator::{self, Discriminator};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::imgcore::{self, RgbImage, TrimapLabel};
use crate::losses::{self, LossReport};
use crate::nn::{apply_bn_stats, Ctx, Mode, Weights};
use crate::tensor::ops;
use crate::tensor::{Gradients, Tensor, Var};

pub use adam::{Adam, AdamParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use predict::predict;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total number of generator updates; a resumed run continues up to it.
    pub steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub d_steps_per_g: usize,
    pub seed: u64,
    pub gan_enabled: bool,
    /// Write a checkpoint every this many steps; 0 disables intermediate ones.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            steps: 1000,
            lr_g: 1e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            d_steps_per_g: 1,
            seed: 0,
            gan_enabled: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if self.gan_enabled && self.d_steps_per_g == 0 {
            return bad("d_steps_per_g must be >= 1 when the adversarial term is on".into());
        }
        Ok(())
    }
}

pub(crate) fn adam_params(cfg: &TrainConfig, generator: bool) -> AdamParams {
    AdamParams {
        lr: if generator { cfg.lr_g } else { cfg.lr_d },
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    }
}

/// Indexed supply of training samples. `sample(i)` must depend only on `i`
/// so that batches can be built in parallel and runs can resume.
pub trait DataSource: Sync {
    fn sample(&self, index: u64) -> Result<TrainingSample>;
}

/// A fixed list of samples, cycled in order.
#[derive(Clone, Debug)]
pub struct FixedSamples(pub Vec<TrainingSample>);

impl DataSource for FixedSamples {
    fn sample(&self, index: u64) -> Result<TrainingSample> {
        if self.0.is_empty() {
            return Err(Error::Dataset("no training samples".into()));
        }
        Ok(self.0[(index % self.0.len() as u64) as usize].clone())
    }
}

/// Foregrounds composited on the fly over random backgrounds.
#[derive(Clone, Debug)]
pub struct AugmentedSource {
    pub items: Vec<SourceItem>,
    pub backgrounds: Vec<RgbImage>,
    pub augment: AugmentConfig,
}

impl AugmentedSource {
    pub fn new(items: Vec<SourceItem>, backgrounds: Vec<RgbImage>, augment: AugmentConfig) -> Result<Self> {
        augment.validate()?;
        if items.is_empty() || backgrounds.is_empty() {
            return Err(Error::Dataset(format!(
                "need foregrounds and backgrounds, got {} and {}",
                items.len(),
                backgrounds.len()
            )));
        }
        Ok(AugmentedSource {
            items,
            backgrounds,
            augment,
        })
    }

    /// Load `fg/`, `alpha/` and `bg/` below `dir`.
    pub fn from_dir(dir: &Path, augment: AugmentConfig) -> Result<Self> {
        let items = datapipe::load_source_items(&dir.join("fg"), &dir.join("alpha"))?
            .into_iter()
            .map(|(_, item)| item)
            .collect();
        let backgrounds = datapipe::png_stems(&dir.join("bg"))?
            .values()
            .map(imgcore::load_rgb)
            .collect::<Result<Vec<_>>>()?;
        Self::new(items, backgrounds, augment)
    }
}

impl DataSource for AugmentedSource {
    fn sample(&self, index: u64) -> Result<TrainingSample> {
        let mut rng = datapipe::sample_rng(self.augment.seed, index);
        let item = &self.items[rng.random_range(0..self.items.len())];
        let bg = &self.backgrounds[rng.random_range(0..self.backgrounds.len())];
        datapipe::make_training_sample(item, bg, &self.augment, &mut rng)
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub next_sample: u64,
    pub generator: Weights,
    pub discriminator: Weights,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
}

/// A batch laid out as `[n, c, h, w]` tensors.
struct BatchTensors {
    input: Tensor<f32>,
    rgb: Tensor<f32>,
    alpha_gt: Tensor<f32>,
    fg: Tensor<f32>,
    bg: Tensor<f32>,
    /// Background used for discriminator inputs.
    bg_disc: Tensor<f32>,
    trimap: Tensor<f32>,
    unknown: Tensor<f32>,
    known_fill: Tensor<f32>,
}

fn batch_tensor(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Tensor<f32>> {
    Tensor::new(vec![n, c, h, w], data)
}

impl BatchTensors {
    fn new(gen: &Generator, batch: &[TrainingSample], fresh_background: bool) -> Result<Self> {
        let pairs: Vec<_> = batch.iter().map(|s| (&s.composite, &s.trimap)).collect();
        let (input, rgb) = gen.input_tensors(&pairs)?;
        let n = batch.len();
        let (h, w) = batch[0].dims();
        let gather = |f: &dyn Fn(&TrainingSample) -> Vec<f32>| batch.iter().flat_map(f).collect::<Vec<f32>>();
        let alpha_gt = gather(&|s| s.alpha_gt.data().to_vec());
        let fg = gather(&|s| s.foreground.data().to_vec());
        let bg = gather(&|s| s.background.data().to_vec());
        let trimap = gather(&|s| s.trimap.plane());
        let unknown = gather(&|s| {
            s.trimap
                .labels()
                .iter()
                .map(|&l| (l == TrimapLabel::Unknown) as u8 as f32)
                .collect()
        });
        let known_fill = gather(&|s| {
            s.trimap
                .labels()
                .iter()
                .map(|&l| (l == TrimapLabel::Foreground) as u8 as f32)
                .collect()
        });
        // The fresh background for sample i is the background of sample i + 1.
        let bg_disc = if fresh_background && n > 1 {
            let per = 3 * h * w;
            let mut rolled = bg[per..].to_vec();
            rolled.extend_from_slice(&bg[..per]);
            rolled
        } else {
            bg.clone()
        };
        Ok(BatchTensors {
            input,
            rgb,
            alpha_gt: batch_tensor(n, 1, h, w, alpha_gt)?,
            fg: batch_tensor(n, 3, h, w, fg)?,
            bg: batch_tensor(n, 3, h, w, bg)?,
            bg_disc: batch_tensor(n, 3, h, w, bg_disc)?,
            trimap: batch_tensor(n, 1, h, w, trimap)?,
            unknown: batch_tensor(n, 1, h, w, unknown)?,
            known_fill: batch_tensor(n, 1, h, w, known_fill)?,
        })
    }

    /// Composite of the ground truth over the discriminator background.
    fn composite_disc(&self) -> Result<Tensor<f32>> {
        Ok(ops::blend(&Var::constant(self.alpha_gt.clone()), &self.fg, &self.bg_disc)?
            .value()
            .clone())
    }
}

fn gradients_of(ctx: &Ctx<f32>, grads: &Gradients<f32>) -> Vec<(String, Tensor<f32>)> {
    ctx.params()
        .into_iter()
        .map(|(name, var)| {
            let g = grads.get_or_zeros(&var);
            (name, g)
        })
        .collect()
}

fn scalar(v: &Var<f32>) -> f64 {
    v.value().item() as f64
}

fn finite(step: u64, component: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { step, component })
    }
}

/// The networks plus their evolving state.
pub struct Trainer {
    cfg: ExperimentConfig,
    gen: Generator,
    disc: Discriminator,
    pub state: TrainState,
}

impl Trainer {
    /// Fresh networks. `pretrained` optionally supplies encoder weights.
    pub fn new(cfg: &ExperimentConfig, pretrained: Option<&Weights>) -> Result<Self> {
        cfg.validate()?;
        let gen = Generator::new(&cfg.generator)?;
        let disc = Discriminator::new(&cfg.discriminator)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let generator = gen.init_weights(pretrained, &mut rng)?;
        let discriminator = disc.init_weights(&mut rng);
        Ok(Trainer {
            cfg: cfg.clone(),
            gen,
            disc,
            state: TrainState {
                step: 0,
                next_sample: 0,
                generator,
                discriminator,
                gen_opt: Adam::new(adam_params(&cfg.train, true)),
                disc_opt: Adam::new(adam_params(&cfg.train, false)),
            },
        })
    }

    /// Resume from a checkpoint, optionally under a modified config (for
    /// example a larger step budget). The architecture must still match.
    pub fn from_checkpoint(ckpt: Checkpoint, cfg: Option<&ExperimentConfig>) -> Result<Self> {
        let cfg = cfg.cloned().unwrap_or_else(|| ckpt.config.clone());
        cfg.validate()?;
        ckpt.validate_against(&cfg)?;
        let mut gen_opt = ckpt.gen_opt;
        let mut disc_opt = ckpt.disc_opt;
        gen_opt.params = adam_params(&cfg.train, true);
        disc_opt.params = adam_params(&cfg.train, false);
        Ok(Trainer {
            gen: Generator::new(&cfg.generator)?,
            disc: Discriminator::new(&cfg.discriminator)?,
            cfg,
            state: TrainState {
                step: ckpt.step,
                next_sample: ckpt.rng.next_sample,
                generator: ckpt.generator,
                discriminator: ckpt.discriminator,
                gen_opt,
                disc_opt,
            },
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.state.step,
            rng: RngState {
                algorithm: "chacha8-per-sample-stream".into(),
                seed: self.cfg.augment.seed,
                next_sample: self.state.next_sample,
            },
            generator: self.state.generator.clone(),
            discriminator: self.state.discriminator.clone(),
            gen_opt: self.state.gen_opt.clone(),
            disc_opt: self.state.disc_opt.clone(),
        }
    }

    /// Draw the next `batch_size` samples in parallel, in index order.
    pub fn next_batch(&mut self, source: &dyn DataSource) -> Result<Vec<TrainingSample>> {
        let start = self.state.next_sample;
        let n = self.cfg.train.batch_size as u64;
        let batch = (start..start + n)
            .into_par_iter()
            .map(|i| source.sample(i))
            .collect::<Result<Vec<_>>>()?;
        self.state.next_sample += n;
        Ok(batch)
    }

    /// Generator output with known pixels overwritten by their trimap value.
    fn clamped_prediction(&self, ctx: &Ctx<f32>, b: &BatchTensors) -> Result<Var<f32>> {
        let pred = self.gen.forward(ctx, &Var::constant(b.input.clone()), &Var::constant(b.rgb.clone()))?;
        ops::select(&b.unknown, &pred, &b.known_fill)
    }

    /// Discriminator output used by the adversarial losses.
    fn disc_scores(&self, ctx: &Ctx<f32>, stack: &Var<f32>) -> Result<Var<f32>> {
        let (patches, mean) = self.disc.forward(ctx, stack)?;
        Ok(if self.cfg.loss.per_patch { patches } else { mean })
    }

    /// One round of `d_steps_per_g` discriminator updates followed by one
    /// generator update. The report holds the losses as evaluated during
    /// the step, before the corresponding update was applied.
    pub fn train_step(&mut self, batch: &[TrainingSample]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::InvalidValue("empty batch".into()));
        }
        let step = self.state.step + 1;
        let loss_cfg = self.cfg.loss.clone();
        let b = BatchTensors::new(&self.gen, batch, self.cfg.discriminator.fresh_background)?;
        let composite = Tensor::stack(&batch.iter().map(|s| Tensor::new(vec![3, s.dims().0, s.dims().1], s.composite.data().to_vec())).collect::<Result<Vec<_>>>()?)?;

        let mut l_gan_d = 0.0;
        if self.cfg.train.gan_enabled {
            let fake_alpha = {
                let ctx = Ctx::<f32>::new(&self.state.generator, Mode::FROZEN_TRAIN);
                self.clamped_prediction(&ctx, &b)?.detach()
            };
            let real_stack = ops::concat_channels(&[
                &Var::constant(b.composite_disc()?),
                &Var::constant(b.trimap.clone()),
            ])?;
            let fake_stack = discriminator::compose_stack(&fake_alpha, &b.fg, &b.bg_disc, &b.trimap)?;
            for _ in 0..self.cfg.train.d_steps_per_g {
                let ctx = Ctx::<f32>::new(&self.state.discriminator, Mode::TRAIN);
                let real = self.disc_scores(&ctx, &real_stack)?;
                let fake = self.disc_scores(&ctx, &fake_stack)?;
                let loss = losses::gan_loss_d_var(&real, &fake, loss_cfg.eps_log)?;
                l_gan_d = finite(step, "l_gan_d", scalar(&loss))?;
                let grads = gradients_of(&ctx, &loss.backward());
                let stats = ctx.take_stats();
                drop(ctx);
                self.state.disc_opt.step(&mut self.state.discriminator, &grads)?;
                apply_bn_stats(&mut self.state.discriminator, &stats)?;
            }
        }

        let ctx = Ctx::<f32>::new(&self.state.generator, Mode::TRAIN);
        let alpha = self.clamped_prediction(&ctx, &b)?;
        let l_alpha = losses::alpha_loss_var(&alpha, &b.alpha_gt, &b.unknown, loss_cfg.eps)?;
        let l_comp = losses::composition_loss_var(&alpha, &b.fg, &b.bg, &composite, &b.unknown, loss_cfg.eps)?;
        let w = &loss_cfg.weights;
        let mut terms = vec![(&l_alpha, w.alpha), (&l_comp, w.comp)];
        let l_gan_g = if self.cfg.train.gan_enabled {
            let dctx = Ctx::<f32>::new(&self.state.discriminator, Mode::FROZEN_TRAIN);
            let stack = discriminator::compose_stack(&alpha, &b.fg, &b.bg_disc, &b.trimap)?;
            let fake = self.disc_scores(&dctx, &stack)?;
            Some(losses::gan_loss_g_var(&fake, loss_cfg.eps_log, loss_cfg.saturating))
        } else {
            None
        };
        if let Some(g) = &l_gan_g {
            terms.push((g, w.gan));
        }
        let total = ops::weighted_sum(&terms);
        let report = LossReport {
            l_alpha: finite(step, "l_alpha", scalar(&l_alpha))?,
            l_comp: finite(step, "l_comp", scalar(&l_comp))?,
            l_gan_g: finite(step, "l_gan_g", l_gan_g.as_ref().map_or(0.0, scalar))?,
            l_gan_d,
            total_g: finite(step, "total_g", scalar(&total))?,
        };
        let grads = gradients_of(&ctx, &total.backward());
        let stats = ctx.take_stats();
        drop(ctx);
        self.state.gen_opt.step(&mut self.state.generator, &grads)?;
        apply_bn_stats(&mut self.state.generator, &stats)?;
        self.state.step = step;
        Ok(report)
    }

    /// Loss values for a batch under the current weights, without updating
    /// anything. Batch statistics are used for normalization, as in training.
    pub fn eval_losses(&self, batch: &[TrainingSample]) -> Result<LossReport> {
        let loss_cfg = &self.cfg.loss;
        let b = BatchTensors::new(&self.gen, batch, self.cfg.discriminator.fresh_background)?;
        let composite = Tensor::stack(&batch.iter().map(|s| Tensor::new(vec![3, s.dims().0, s.dims().1], s.composite.data().to_vec())).collect::<Result<Vec<_>>>()?)?;
        let ctx = Ctx::<f32>::new(&self.state.generator, Mode::FROZEN_TRAIN);
        let alpha = self.clamped_prediction(&ctx, &b)?;
        let l_alpha = scalar(&losses::alpha_loss_var(&alpha, &b.alpha_gt, &b.unknown, loss_cfg.eps)?);
        let l_comp = scalar(&losses::composition_loss_var(&alpha, &b.fg, &b.bg, &composite, &b.unknown, loss_cfg.eps)?);
        let (mut l_gan_g, mut l_gan_d) = (0.0, 0.0);
        if self.cfg.train.gan_enabled {
            let dctx = Ctx::<f32>::new(&self.state.discriminator, Mode::FROZEN_TRAIN);
            let real_stack = ops::concat_channels(&[
                &Var::constant(b.composite_disc()?),
                &Var::constant(b.trimap.clone()),
            ])?;
            let fake_stack = discriminator::compose_stack(&alpha, &b.fg, &b.bg_disc, &b.trimap)?;
            let real = self.disc_scores(&dctx, &real_stack)?;
            let fake = self.disc_scores(&dctx, &fake_stack)?;
            l_gan_d = scalar(&losses::gan_loss_d_var(&real, &fake, loss_cfg.eps_log)?);
            l_gan_g = scalar(&losses::gan_loss_g_var(&fake, loss_cfg.eps_log, loss_cfg.saturating));
        }
        Ok(losses::total_generator_loss(l_alpha, l_comp, l_gan_g, l_gan_d, &loss_cfg.weights))
    }

    /// Train until `train.steps` generator updates have been made, writing
    /// one JSON line per step to `log` and checkpoints below `out_dir`.
    pub fn train_loop(
        &mut self,
        source: &dyn DataSource,
        out_dir: Option<&Path>,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Checkpoint> {
        while self.state.step < self.cfg.train.steps {
            let started = Instant::now();
            let batch = self.next_batch(source)?;
            let report = self.train_step(&batch)?;
            let line = LogLine {
                step: self.state.step,
                l_alpha: report.l_alpha,
                l_comp: report.l_comp,
                l_gan_g: report.l_gan_g,
                l_gan_d: report.l_gan_d,
                total_g: report.total_g,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            };
            if let Some(w) = log.as_deref_mut() {
                let text = serde_json::to_string(&line)?;
                writeln!(w, "{text}").map_err(|e| Error::io("<training log>", e))?;
            }
            log::info!(
                "step {} total_g {:.5} l_alpha {:.5} l_gan_d {:.4}",
                line.step,
                line.total_g,
                line.l_alpha,
                line.l_gan_d
            );
            let every = self.cfg.train.checkpoint_every;
            if let Some(dir) = out_dir {
                if every > 0 && self.state.step % every == 0 && self.state.step < self.cfg.train.steps {
                    save_checkpoint(&self.checkpoint(), &step_dir(dir, self.state.step))?;
                }
            }
        }
        let ckpt = self.checkpoint();
        if let Some(dir) = out_dir {
            save_checkpoint(&ckpt, &dir.join("final"))?;
        }
        Ok(ckpt)
    }
}

/// Directory of the intermediate checkpoint for `step`.
pub fn step_dir(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("step_{step:07}"))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    pub l_alpha: f64,
    pub l_comp: f64,
    pub l_gan_g: f64,
    pub l_gan_d: f64,
    pub total_g: f64,
    pub wall_ms: f64,
}
