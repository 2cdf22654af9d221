//! Training loop, loss history, checkpoint round trips and inference.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dcepk_core::physics::relative_enhancement;
use dcepk_core::{AcqParams, DceSeries, PkMap, PlasmaCurve, TkModel};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::data::{sample_paired, sample_unpaired, Dataset, UnpairedBatch};
use super::losses::{cycle_terms, lsgan_discriminator_loss, lsgan_generator_loss, physics_loss, supervised_loss};
use super::physics_op::TkForward;
use crate::autodiff::{lr_linear_decay, AdamConfig, AdamState, Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::error::{NnError, Result};
use crate::networks::{clamp_inference_output, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, CP_SCALE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "cyclegan")]
    CycleGan,
    #[serde(rename = "supervised")]
    Supervised,
    #[serde(rename = "supervised-physics")]
    SupervisedPhysics,
}

impl FromStr for TrainMode {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclegan" => Ok(TrainMode::CycleGan),
            "supervised" => Ok(TrainMode::Supervised),
            "supervised-physics" => Ok(TrainMode::SupervisedPhysics),
            other => Err(NnError::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the cycle term against the adversarial term.
    pub gamma: f64,
    /// Weight of the plasma-curve cycle term.
    pub rho: f64,
    /// Supervised L1 weight.
    pub alpha: f64,
    /// Physics L1 weight.
    pub beta: f64,
    pub batch_size: usize,
    pub patch: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    /// First epoch of the linear learning-rate decay; half of `epochs` if unset.
    pub decay_start: Option<usize>,
    pub seed: u64,
    pub base_channels: usize,
    /// Checkpoint cadence in steps; 0 writes only the initial and final ones.
    pub checkpoint_every: usize,
    /// Loss rows are kept for every `log_every`-th step.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::CycleGan,
            gamma: 10.0,
            rho: 1.0,
            alpha: 10.0,
            beta: 10.0,
            batch_size: 32,
            patch: 48,
            epochs: 200,
            steps_per_epoch: 100,
            lr: 1e-5,
            decay_start: None,
            seed: 0,
            base_channels: 64,
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_frames: usize, model: TkModel) -> Result<()> {
        let err = |m: String| Err(NnError::Config(m));
        for (name, w) in [("gamma", self.gamma), ("rho", self.rho), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(w.is_finite() && w > 0.0) {
                return err(format!("{name} must be positive, got {w}"));
            }
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.log_every == 0 {
            return err("batch_size, steps_per_epoch and log_every must be positive".into());
        }
        let min = self.generator_spec(model, n_frames).min_input();
        if self.patch < min || DiscriminatorSpec::new(model.n_params()).output_size(self.patch).is_none() {
            return err(format!("patch {} is below the network minimum {min}", self.patch));
        }
        if self.decay_start.is_some_and(|d| d > self.epochs) {
            return err("decay_start exceeds epochs".into());
        }
        AdamConfig { lr: self.lr, ..AdamConfig::default() }.validate()
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let decay_start = self.decay_start.unwrap_or(self.epochs / 2);
        lr_linear_decay(self.lr, step / self.steps_per_epoch, self.epochs, decay_start)
    }

    fn generator_spec(&self, model: TkModel, n_frames: usize) -> GeneratorSpec {
        GeneratorSpec::new(model, n_frames).with_base_channels(self.base_channels)
    }
}

/// Losses of one step. Component columns not used by the mode are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub generator_total: f64,
    pub cycle_pk: Option<f64>,
    pub cycle_signal: Option<f64>,
    pub cycle_cp: Option<f64>,
    pub cycle_total: Option<f64>,
    pub gan_generator: Option<f64>,
    pub discriminator: Option<f64>,
    /// Unweighted mean L1 between predicted and label PK (scaled).
    pub supervised: Option<f64>,
    /// Unweighted mean L1 between input and reconstructed signal.
    pub physics: Option<f64>,
}

impl LossRecord {
    fn new(step: usize, epoch: usize, lr: f64, generator_total: f64) -> Self {
        LossRecord {
            step,
            epoch,
            lr,
            generator_total,
            cycle_pk: None,
            cycle_signal: None,
            cycle_cp: None,
            cycle_total: None,
            gan_generator: None,
            discriminator: None,
            supervised: None,
            physics: None,
        }
    }
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(NnError::from)).collect()
}

/// Per-epoch means of `generator_total`, in epoch order.
pub fn epoch_means(records: &[LossRecord]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some((e, sum, n)) if *e == r.epoch => {
                *sum += r.generator_total;
                *n += 1;
            }
            _ => out.push((r.epoch, r.generator_total, 1)),
        }
    }
    out.into_iter().map(|(e, sum, n)| (e, sum / n as f64)).collect()
}

/// splitmix64 finaliser of `seed + stream`.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GENERATOR_STREAM: u64 = u64::MAX;
const DISCRIMINATOR_STREAM: u64 = u64::MAX - 1;

/// Zeroes PK channels outside the mask [B, H, W].
fn masked_pk<'t>(pk: Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    let shape = pk.shape();
    let (channels, plane) = (shape[1], shape[2] * shape[3]);
    let m = mask.data();
    let full = Tensor::from_fn(&shape, |i| m[(i / (channels * plane)) * plane + i % plane]);
    let c = pk.tape().constant(full);
    pk.mul(c)
}

fn finite(step: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) { Ok(()) } else { Err(NnError::NonFiniteLoss { step }) }
}

pub struct Trainer {
    cfg: TrainConfig,
    model: TkModel,
    acq: AcqParams,
    generator: Generator,
    discriminator: Option<Discriminator>,
    adam_g: AdamState,
    adam_d: Option<AdamState>,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, dataset: &Dataset) -> Result<Self> {
        cfg.validate(dataset.n_frames(), dataset.model)?;
        let model = dataset.model;
        let generator = Generator::new(cfg.generator_spec(model, dataset.n_frames()), mix(cfg.seed, GENERATOR_STREAM))?;
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let adam_g = AdamState::new(adam, &generator.params);
        let (discriminator, adam_d) = if cfg.mode == TrainMode::CycleGan {
            let d = Discriminator::new(DiscriminatorSpec::new(model.n_params()), mix(cfg.seed, DISCRIMINATOR_STREAM))?;
            let state = AdamState::new(adam, &d.params);
            (Some(d), Some(state))
        } else {
            (None, None)
        };
        Ok(Trainer { cfg, model, acq: dataset.acq, generator, discriminator, adam_g, adam_d, step: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed steps.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_steps()
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_ref()
    }

    /// One optimisation step: generator then discriminator for CycleGAN,
    /// generator only otherwise.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<LossRecord> {
        if dataset.model != self.model || dataset.acq != self.acq {
            return Err(NnError::Config("dataset does not match the trainer's model or protocol".into()));
        }
        let step = self.step;
        let lr = self.cfg.lr_at(step);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, step as u64));
        let record = match self.cfg.mode {
            TrainMode::CycleGan => self.cycle_step(dataset, &mut rng, lr)?,
            TrainMode::Supervised | TrainMode::SupervisedPhysics => self.supervised_step(dataset, &mut rng, lr)?,
        };
        self.step += 1;
        Ok(record)
    }

    fn cycle_step(&mut self, dataset: &Dataset, rng: &mut ChaCha8Rng, lr: f64) -> Result<LossRecord> {
        let batch = sample_unpaired(dataset, self.cfg.batch_size, self.cfg.patch, rng)?;
        let (mut record, fake_pk) = self.generator_step(&batch, lr)?;
        record.discriminator = Some(self.discriminator_step(&batch.p.pk, &fake_pk, lr)?);
        Ok(record)
    }

    fn discriminator_ref(&self) -> Result<&Discriminator> {
        self.discriminator.as_ref().ok_or_else(|| NnError::Config("CycleGAN needs a discriminator".into()))
    }

    /// Generator update on γ·cycle + LSGAN generator term with the
    /// discriminator held fixed. Returns the losses and the fake PK patches.
    pub fn generator_step(&mut self, batch: &UnpairedBatch, lr: f64) -> Result<(LossRecord, Tensor)> {
        let cfg = &self.cfg;
        let disc = self.discriminator_ref()?;
        let tape = Tape::new();
        let gp = self.generator.params.bind(&tape, true);
        let dp = disc.params.bind(&tape, false);
        let s = tape.constant(batch.s.signal.clone());
        let mut fake = self.generator.forward(&gp, s, Some(&batch.s.mask))?;
        fake.pk = masked_pk(fake.pk, &batch.s.mask)?;
        let s_op = TkForward::new(self.model, &self.acq, &batch.s.t1_seconds, &batch.s.mask)?;
        let s_cycled = tape.apply(s_op, &[fake.pk, fake.cp])?;

        let p = tape.constant(batch.p.pk.clone());
        let cp = tape.constant(batch.cp.clone());
        let p_op = TkForward::new(self.model, &self.acq, &batch.p.t1_seconds, &batch.p.mask)?;
        let s_from_p = tape.apply(p_op, &[p, cp])?;
        let back = self.generator.forward(&gp, s_from_p, Some(&batch.p.mask))?;
        let back_pk = masked_pk(back.pk, &batch.p.mask)?;

        let cycle = cycle_terms(p, back_pk, s, s_cycled, cp, back.cp, cfg.rho)?;
        let gan = lsgan_generator_loss(disc.forward(&dp, fake.pk)?)?;
        let total = cycle.total.scale(cfg.gamma)?.add(gan)?;

        let mut record = LossRecord::new(self.step, self.step / cfg.steps_per_epoch, lr, total.value().item());
        record.cycle_pk = Some(cycle.pk.value().item());
        record.cycle_signal = Some(cycle.signal.value().item());
        record.cycle_cp = Some(cycle.cp.value().item());
        record.cycle_total = Some(cycle.total.value().item());
        record.gan_generator = Some(gan.value().item());
        finite(self.step, &[record.generator_total])?;
        let fake_pk = (*fake.pk.value()).clone();
        let grads = tape.backward(total)?;
        let g_grads = gp.gradients(&grads);
        drop(tape);
        self.adam_g.set_lr(lr);
        self.adam_g.step(&mut self.generator.params, &g_grads)?;
        Ok((record, fake_pk))
    }

    /// Discriminator update on the LSGAN discriminator loss. Returns the loss.
    pub fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor, lr: f64) -> Result<f64> {
        let disc = self.discriminator_ref()?;
        let tape = Tape::new();
        let dp = disc.params.bind(&tape, true);
        let real_score = disc.forward(&dp, tape.constant(real.clone()))?;
        let fake_score = disc.forward(&dp, tape.constant(fake.clone()))?;
        let loss = lsgan_discriminator_loss(real_score, fake_score)?;
        let value = loss.value().item();
        finite(self.step, &[value])?;
        let grads = tape.backward(loss)?;
        let d_grads = dp.gradients(&grads);
        drop(tape);
        if let (Some(disc), Some(adam_d)) = (self.discriminator.as_mut(), self.adam_d.as_mut()) {
            adam_d.set_lr(lr);
            adam_d.step(&mut disc.params, &d_grads)?;
        }
        Ok(value)
    }

    fn supervised_step(&mut self, dataset: &Dataset, rng: &mut ChaCha8Rng, lr: f64) -> Result<LossRecord> {
        let cfg = &self.cfg;
        let batch = sample_paired(dataset, cfg.batch_size, cfg.patch, rng)?;
        let tape = Tape::new();
        let gp = self.generator.params.bind(&tape, true);
        let s = tape.constant(batch.s.signal.clone());
        let out = self.generator.forward(&gp, s, Some(&batch.s.mask))?;
        let pk = masked_pk(out.pk, &batch.s.mask)?;
        let sup = supervised_loss(pk, tape.constant(batch.pk), 1.0)?;
        let mut total = sup.scale(cfg.alpha)?;
        let mut phys_value = None;
        if cfg.mode == TrainMode::SupervisedPhysics {
            let op = TkForward::new(self.model, &self.acq, &batch.s.t1_seconds, &batch.s.mask)?;
            let rebuilt = tape.apply(op, &[pk, tape.constant(batch.cp)])?;
            let phys = physics_loss(s, rebuilt, 1.0)?;
            phys_value = Some(phys.value().item());
            total = total.add(phys.scale(cfg.beta)?)?;
        }
        let mut record = LossRecord::new(self.step, self.step / cfg.steps_per_epoch, lr, total.value().item());
        record.supervised = Some(sup.value().item());
        record.physics = phys_value;
        finite(self.step, &[record.generator_total])?;
        let grads = tape.backward(total)?;
        let g_grads = gp.gradients(&grads);
        drop(tape);
        self.adam_g.set_lr(lr);
        self.adam_g.step(&mut self.generator.params, &g_grads)?;
        Ok(record)
    }

    /// Runs steps until the schedule ends or `max_step` steps are complete,
    /// calling `on_step` after each one.
    pub fn run_until(
        &mut self,
        dataset: &Dataset,
        max_step: usize,
        mut on_step: impl FnMut(&Trainer, &LossRecord) -> Result<()>,
    ) -> Result<()> {
        let end = max_step.min(self.cfg.total_steps());
        while self.step < end {
            let record = self.train_step(dataset)?;
            on_step(self, &record)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        let mut push_store = |prefix: &str, store: &ParamStore| {
            for (name, t) in store.iter() {
                tensors.push((format!("{prefix}/{name}"), t.clone()));
            }
        };
        push_store("generator", &self.generator.params);
        if let Some(d) = &self.discriminator {
            push_store("discriminator", &d.params);
        }
        let mut push_adam = |prefix: &str, state: &AdamState, store: &ParamStore| {
            for (i, (name, _)) in store.iter().enumerate() {
                tensors.push((format!("{prefix}/m/{name}"), state.first_moment[i].clone()));
                tensors.push((format!("{prefix}/v/{name}"), state.second_moment[i].clone()));
            }
        };
        push_adam("adam_g", &self.adam_g, &self.generator.params);
        if let (Some(d), Some(state)) = (&self.discriminator, &self.adam_d) {
            push_adam("adam_d", state, &d.params);
        }
        let meta = json!({
            "model": self.model,
            "acq": self.acq,
            "generator_spec": self.generator.spec(),
            "discriminator_spec": self.discriminator.as_ref().map(|d| d.spec()),
            "train_config": self.cfg,
            "step": self.step,
            "adam_g": { "config": self.adam_g.config, "step_count": self.adam_g.step_count },
            "adam_d": self.adam_d.as_ref().map(|a| json!({ "config": a.config, "step_count": a.step_count })),
        });
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = meta_field(ckpt, "train_config")?;
        let model: TkModel = meta_field(ckpt, "model")?;
        let acq: AcqParams = meta_field(ckpt, "acq")?;
        let step: usize = meta_field(ckpt, "step")?;
        let generator = load_generator(ckpt)?;
        let mut adam_g = AdamState::new(meta_field(ckpt, "adam_g.config")?, &generator.params);
        adam_g.step_count = meta_field(ckpt, "adam_g.step_count")?;
        load_moments(ckpt, "adam_g", &generator.params, &mut adam_g)?;
        let spec: Option<DiscriminatorSpec> = meta_field(ckpt, "discriminator_spec")?;
        let (discriminator, adam_d) = match spec {
            Some(spec) => {
                let mut d = Discriminator::new(spec, 0)?;
                load_store(ckpt, "discriminator", &mut d.params)?;
                let mut state = AdamState::new(meta_field(ckpt, "adam_d.config")?, &d.params);
                state.step_count = meta_field(ckpt, "adam_d.step_count")?;
                load_moments(ckpt, "adam_d", &d.params, &mut state)?;
                (Some(d), Some(state))
            }
            None => (None, None),
        };
        if (cfg.mode == TrainMode::CycleGan) != discriminator.is_some() {
            return Err(NnError::Checkpoint("discriminator presence does not match the training mode".into()));
        }
        Ok(Trainer { cfg, model, acq, generator, discriminator, adam_g, adam_d, step })
    }
}

/// Reads a dotted path from the checkpoint meta.
fn meta_field<T: serde::de::DeserializeOwned>(ckpt: &Checkpoint, path: &str) -> Result<T> {
    let mut v = &ckpt.meta;
    for key in path.split('.') {
        v = v.get(key).ok_or_else(|| NnError::Checkpoint(format!("meta is missing `{path}`")))?;
    }
    serde_json::from_value(v.clone()).map_err(|e| NnError::Checkpoint(format!("meta `{path}`: {e}")))
}

fn load_store(ckpt: &Checkpoint, prefix: &str, store: &mut ParamStore) -> Result<()> {
    for (name, t) in store.iter_mut() {
        let key = format!("{prefix}/{name}");
        let src = ckpt.tensor(&key).ok_or_else(|| NnError::Checkpoint(format!("missing tensor {key}")))?;
        if src.shape() != t.shape() {
            return Err(NnError::Checkpoint(format!("{key} has shape {:?}, expected {:?}", src.shape(), t.shape())));
        }
        *t = src.clone();
    }
    Ok(())
}

fn load_moments(ckpt: &Checkpoint, prefix: &str, store: &ParamStore, state: &mut AdamState) -> Result<()> {
    let mut m = store.clone();
    let mut v = store.clone();
    load_store(ckpt, &format!("{prefix}/m"), &mut m)?;
    load_store(ckpt, &format!("{prefix}/v"), &mut v)?;
    state.first_moment = m.iter().map(|(_, t)| t.clone()).collect();
    state.second_moment = v.iter().map(|(_, t)| t.clone()).collect();
    Ok(())
}

pub fn load_generator(ckpt: &Checkpoint) -> Result<Generator> {
    let spec: GeneratorSpec = meta_field(ckpt, "generator_spec")?;
    let mut g = Generator::new(spec, 0)?;
    load_store(ckpt, "generator", &mut g.params)?;
    Ok(g)
}

/// Loss rows and final state of a run.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub history: Vec<LossRecord>,
}

/// Trains in memory over the full schedule.
pub fn train(cfg: TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, dataset)?;
    let mut history = Vec::new();
    let total = trainer.cfg.total_steps();
    trainer.run_until(dataset, total, |t, r| {
        if (r.step + 1) % t.cfg.log_every == 0 {
            history.push(r.clone());
        }
        Ok(())
    })?;
    Ok(TrainOutcome { trainer, history })
}

pub const LOSS_CSV: &str = "loss.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint_step{step:07}.ckpt"))
}

/// Trains with files in `out_dir`: `loss.csv`, periodic checkpoints and
/// `latest.ckpt`. With `resume`, continues from `latest.ckpt` if present and
/// drops loss rows past its step. `stop_at` ends the run early after that
/// many completed steps.
pub fn train_in_dir(
    cfg: TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    resume: bool,
    stop_at: Option<usize>,
) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir)?;
    let latest = out_dir.join(LATEST_CHECKPOINT);
    let csv_path = out_dir.join(LOSS_CSV);
    let (mut trainer, mut history) = if resume && latest.exists() {
        let trainer = Trainer::from_checkpoint(&Checkpoint::load(&latest)?)?;
        if trainer.cfg != cfg {
            return Err(NnError::Config("training config differs from the checkpoint being resumed".into()));
        }
        let mut history = if csv_path.exists() { read_loss_csv(&csv_path)? } else { Vec::new() };
        history.retain(|r| r.step < trainer.step);
        (trainer, history)
    } else {
        let trainer = Trainer::new(cfg, dataset)?;
        trainer.checkpoint().save(&checkpoint_path(out_dir, 0))?;
        (trainer, Vec::new())
    };
    trainer.checkpoint().save(&latest)?;
    write_loss_csv(&csv_path, &history)?;

    let every = trainer.cfg.checkpoint_every;
    let end = stop_at.unwrap_or(usize::MAX);
    trainer.run_until(dataset, end, |t, r| {
        if (r.step + 1) % t.cfg.log_every == 0 {
            history.push(r.clone());
        }
        if every > 0 && t.step % every == 0 {
            let ckpt = t.checkpoint();
            ckpt.save(&checkpoint_path(out_dir, t.step))?;
            ckpt.save(&latest)?;
            write_loss_csv(&csv_path, &history)?;
        }
        Ok(())
    })?;
    let ckpt = trainer.checkpoint();
    ckpt.save(&latest)?;
    if trainer.is_finished() {
        ckpt.save(&checkpoint_path(out_dir, trainer.step))?;
    }
    write_loss_csv(&csv_path, &history)?;
    Ok(TrainOutcome { trainer, history })
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub pk: PkMap,
    pub cp: PlasmaCurve,
}

/// Full-image generator pass on a series. PK maps are zero outside `mask`.
pub fn infer(generator: &Generator, series: &DceSeries, mask: &Array2<bool>) -> Result<Inference> {
    let spec = generator.spec();
    let t = series.acq().n_frames();
    if t != spec.in_channels {
        return Err(NnError::FrameCountMismatch { expected: spec.in_channels, found: t });
    }
    let (h, w) = series.dim();
    if mask.dim() != (h, w) {
        return Err(NnError::Config(format!("mask is {:?}, series is {h}x{w}", mask.dim())));
    }
    let signal = relative_enhancement(series, mask);
    let x = Tensor::new(vec![1, t, h, w], signal.iter().copied().collect())?;
    let m = Tensor::new(vec![1, h, w], mask.iter().map(|&v| f64::from(u8::from(v))).collect())?;
    let tape = Tape::new();
    let params = generator.params.bind(&tape, false);
    let out = generator.forward(&params, tape.constant(x), Some(&m))?;
    let mut pk = (*out.pk.value()).clone();
    let hw = h * w;
    for (i, v) in pk.data_mut().iter_mut().enumerate() {
        if m.data()[i % hw] == 0.0 {
            *v = 0.0;
        }
    }
    let cp: Vec<f64> = out.cp.value().data().iter().map(|v| (v / CP_SCALE).max(0.0)).collect();
    Ok(Inference {
        pk: clamp_inference_output(&pk, spec.model())?,
        cp: PlasmaCurve::new(cp, series.acq().time_grid())?,
    })
}

/// [`infer`] with the generator read from a checkpoint.
pub fn infer_from_checkpoint(ckpt: &Checkpoint, series: &DceSeries, mask: &Array2<bool>) -> Result<Inference> {
    infer(&load_generator(ckpt)?, series, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for (name, mode) in [
            ("cyclegan", TrainMode::CycleGan),
            ("supervised", TrainMode::Supervised),
            ("supervised-physics", TrainMode::SupervisedPhysics),
        ] {
            assert_eq!(name.parse::<TrainMode>().unwrap(), mode);
            assert_eq!(serde_json::to_value(mode).unwrap(), name);
        }
        assert!("gan".parse::<TrainMode>().is_err());
    }

    #[test]
    fn step_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|s| mix(7, s)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn epoch_means_group_consecutive_rows() {
        let rows: Vec<LossRecord> =
            [(0, 1.0), (0, 3.0), (1, 5.0)].iter().map(|&(e, v)| LossRecord::new(0, e, 0.0, v)).collect();
        assert_eq!(epoch_means(&rows), vec![(0, 2.0), (1, 5.0)]);
    }
}
