//! Training engine: schedule, alternating updates, logging, checkpoints.
//!
//! Training splits the epoch budget into one phase per resolution level.
//! Within a phase for level >= 1, alpha ramps linearly over the first
//! `fade_fraction` of the phase's epochs and then holds at 1; level 0 has
//! nothing to fade. Alpha is constant within an epoch, so scheduling does
//! not depend on dataset size.
//!
//! Each step runs `n_critic` critic updates (fresh latents per update, the
//! generator frozen) followed by one generator update (the critic frozen).
//! The loop appends one metrics record per step, writes a checkpoint and a
//! fixed-latent sample grid every epoch, and can resume from a checkpoint
//! bit-exactly in deterministic loader mode.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, CheckpointError, ParamBlock};
use crate::data::{DataError, DatasetIndex, ImageBatch, Loader};
use crate::grid;
use crate::networks::{Discriminator, Generator, NetworkPlan, PhaseState};
use crate::nn::Parameter;
use crate::optim::{Adam, AdamSlot};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor, TensorError};
use crate::wgan::{self, LossReport};

const INIT_TAG: u64 = 0x494e_4954; // "INIT"
const GROW_TAG: u64 = 0x4752_4f57; // "GROW"
const TRAIN_TAG: u64 = 0x5452_4e53; // "TRNS"
const SAMPLE_TAG: u64 = 0x534d_504c; // "SMPL"

/// Run settings. All values have working defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub total_epochs: u64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub max_level: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_gp: f64,
    /// Drift coefficient on E[D(real)^2]; 0 disables the term.
    pub eps_drift: f64,
    pub n_critic: usize,
    pub seed: u64,
    pub workers: usize,
    /// Fraction of each phase spent ramping alpha from 0 to 1.
    pub fade_fraction: f64,
    /// Single-producer data loading (bit-reproducible runs).
    pub deterministic: bool,
    /// Optional hard stop after this many global steps.
    pub max_steps: Option<u64>,
    /// Epoch interval between checkpoints.
    pub checkpoint_every: u64,
    /// Sample-grid geometry written each epoch.
    pub sample_rows: usize,
    pub sample_cols: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            total_epochs: 100,
            batch_size: 16,
            latent_dim: 256,
            max_level: 4,
            learning_rate: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            lambda_gp: wgan::LAMBDA_GP,
            eps_drift: wgan::EPS_DRIFT,
            n_critic: 1,
            seed: 0,
            workers: 8,
            fade_fraction: 0.5,
            deterministic: false,
            max_steps: None,
            checkpoint_every: 1,
            sample_rows: 4,
            sample_cols: 4,
        }
    }
}

impl TrainingConfig {
    pub fn phases(&self) -> u64 {
        self.max_level as u64 + 1
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let plan = NetworkPlan::standard();
        if self.batch_size < 2 {
            return Err(TrainError::Config(
                "batch size must be at least 2 (minibatch statistic)".into(),
            ));
        }
        if self.latent_dim == 0 {
            return Err(TrainError::Config("latent dimension must be positive".into()));
        }
        if self.max_level > plan.max_level() {
            return Err(TrainError::Config(format!(
                "max level {} exceeds supported {}",
                self.max_level,
                plan.max_level()
            )));
        }
        if self.total_epochs == 0 || !self.total_epochs.is_multiple_of(self.phases()) {
            return Err(TrainError::Config(format!(
                "total epochs {} must divide into {} equal phases",
                self.total_epochs,
                self.phases()
            )));
        }
        if !(0.0..=1.0).contains(&self.fade_fraction) {
            return Err(TrainError::Config(format!(
                "fade fraction {} outside [0, 1]",
                self.fade_fraction
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.n_critic == 0 {
            return Err(TrainError::Config("n_critic must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(TrainError::Config("workers must be at least 1".into()));
        }
        if self.lambda_gp < 0.0 || self.eps_drift < 0.0 {
            return Err(TrainError::Config("penalty weights must be nonnegative".into()));
        }
        if self.sample_rows == 0 || self.sample_cols == 0 {
            return Err(TrainError::Config("sample grid must be nonempty".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> NetworkPlan {
        NetworkPlan::with_latent_dim(self.latent_dim)
    }
}

#[derive(Debug)]
pub enum TrainError {
    Tensor(TensorError),
    Data(DataError),
    Checkpoint(CheckpointError),
    Io(std::io::Error),
    Config(String),
    EpochOutOfRange { epoch: u64, total: u64 },
    /// A loss term produced a non-finite value; `stage` names it.
    Step { stage: &'static str, source: TensorError },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::Data(e) => write!(f, "{e}"),
            TrainError::Checkpoint(e) => write!(f, "{e}"),
            TrainError::Io(e) => write!(f, "i/o error: {e}"),
            TrainError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            TrainError::EpochOutOfRange { epoch, total } => {
                write!(f, "epoch {epoch} outside [0, {total})")
            }
            TrainError::Step { stage, source } => write!(f, "{stage} failed: {source}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

impl From<grid::GridError> for TrainError {
    fn from(e: grid::GridError) -> Self {
        match e {
            grid::GridError::Io(io) => TrainError::Io(io),
            other => TrainError::Config(other.to_string()),
        }
    }
}

/// Rejects resuming under a config that would change the model or its
/// trajectory. Run-control fields (step limit, workers, checkpoint cadence,
/// determinism) may differ; the epoch budget may not, because it defines the
/// phase schedule.
fn structural_match(ckpt: &TrainingConfig, run: &TrainingConfig) -> Result<(), TrainError> {
    let pairs: [(&str, bool); 11] = [
        ("total_epochs", ckpt.total_epochs == run.total_epochs),
        ("batch", ckpt.batch_size == run.batch_size),
        ("latent_dim", ckpt.latent_dim == run.latent_dim),
        ("max_level", ckpt.max_level == run.max_level),
        ("lr", ckpt.learning_rate == run.learning_rate),
        ("beta1/beta2", ckpt.beta1 == run.beta1 && ckpt.beta2 == run.beta2),
        ("adam_eps", ckpt.adam_eps == run.adam_eps),
        ("lambda_gp", ckpt.lambda_gp == run.lambda_gp),
        ("eps_drift", ckpt.eps_drift == run.eps_drift),
        ("n_critic", ckpt.n_critic == run.n_critic),
        (
            "seed/fade_fraction",
            ckpt.seed == run.seed && ckpt.fade_fraction == run.fade_fraction,
        ),
    ];
    for (name, ok) in pairs {
        if !ok {
            return Err(TrainError::Config(format!(
                "resume config differs from checkpoint in {name}"
            )));
        }
    }
    Ok(())
}

/// Phase for a given epoch under the progressive schedule.
pub fn schedule(epoch: u64, config: &TrainingConfig) -> Result<PhaseState, TrainError> {
    if epoch >= config.total_epochs {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            total: config.total_epochs,
        });
    }
    let phase_len = config.total_epochs / config.phases();
    let level = (epoch / phase_len) as usize;
    let epoch_in_phase = epoch % phase_len;
    let alpha = if level == 0 {
        1.0
    } else {
        let fade_epochs = (phase_len as f64 * config.fade_fraction).floor() as u64;
        if epoch_in_phase < fade_epochs {
            (epoch_in_phase + 1) as f64 / fade_epochs as f64
        } else {
            1.0
        }
    };
    PhaseState::new(level, alpha, epoch_in_phase).map_err(TrainError::Tensor)
}

/// Generator/critic pair with optimizer state and the training RNG stream.
pub struct Trainer {
    pub config: TrainingConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub adam_g: Adam<f32>,
    pub adam_d: Adam<f32>,
    /// Stream for latents and penalty interpolation draws; checkpointed.
    pub rng: Rng,
    pub global_step: u64,
    pub next_epoch: u64,
}

fn apply_named_grads(
    adam: &mut Adam<f32>,
    params: Vec<&mut Parameter<f32>>,
    grads: &std::collections::BTreeMap<String, Tensor<f32>>,
    stage: &'static str,
) -> Result<(), TrainError> {
    let mut updates: Vec<(&mut Parameter<f32>, &Tensor<f32>)> = Vec::new();
    for p in params {
        if let Some(g) = grads.get(&p.name) {
            updates.push((p, g));
        }
    }
    adam
        .step(&mut updates)
        .map_err(|source| TrainError::Step { stage, source })
}

impl Trainer {
    /// Fresh run: level-0 networks initialized from the seed.
    pub fn new(config: TrainingConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let plan = config.plan();
        let mut init_rng = Rng::derive(config.seed, &[INIT_TAG]);
        let generator = Generator::build(&plan, 0, &mut init_rng)?;
        let discriminator = Discriminator::build(&plan, 0, &mut init_rng)?;
        let adam_g = Adam::new(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
        let adam_d = Adam::new(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
        let rng = Rng::derive(config.seed, &[TRAIN_TAG]);
        Ok(Trainer {
            config,
            generator,
            discriminator,
            adam_g,
            adam_d,
            rng,
            global_step: 0,
            next_epoch: 0,
        })
    }

    /// Resumes from a checkpoint; every field is restored bit-exactly.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        ckpt.config.validate()?;
        let plan = ckpt.config.plan();
        // network construction draws are placeholders; all parameters are
        // overwritten from the checkpoint below
        let mut build_rng = Rng::derive(ckpt.config.seed, &[INIT_TAG]);
        let mut generator = Generator::build(&plan, ckpt.phase.level, &mut build_rng)?;
        let mut discriminator = Discriminator::build(&plan, ckpt.phase.level, &mut build_rng)?;

        let mut adam_g = Adam::new(
            ckpt.config.learning_rate,
            ckpt.config.beta1,
            ckpt.config.beta2,
            ckpt.config.adam_eps,
        );
        let mut adam_d = adam_g.clone();
        adam_g.set_step(ckpt.adam_g_step);
        adam_d.set_step(ckpt.adam_d_step);

        let restore = |params: Vec<&mut Parameter<f32>>,
                       blocks: &[ParamBlock],
                       adam: &mut Adam<f32>|
         -> Result<(), TrainError> {
            let by_name: std::collections::BTreeMap<&str, &ParamBlock> =
                blocks.iter().map(|b| (b.name.as_str(), b)).collect();
            let mut restored = 0;
            for p in params {
                let block = by_name.get(p.name.as_str()).ok_or_else(|| {
                    TrainError::Checkpoint(CheckpointError::Corrupt(format!(
                        "missing parameter {}",
                        p.name
                    )))
                })?;
                if block.param.shape() != p.value.shape() {
                    return Err(TrainError::Checkpoint(CheckpointError::Corrupt(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        p.name,
                        block.param.shape(),
                        p.value.shape()
                    ))));
                }
                p.value = block.param.clone();
                adam.insert_slot(
                    p.name.clone(),
                    AdamSlot {
                        m: block.m.clone(),
                        v: block.v.clone(),
                    },
                );
                restored += 1;
            }
            if restored != blocks.len() {
                return Err(TrainError::Checkpoint(CheckpointError::Corrupt(format!(
                    "{} checkpoint parameters but {restored} network parameters",
                    blocks.len()
                ))));
            }
            Ok(())
        };
        restore(generator.parameters_mut(), &ckpt.params_g, &mut adam_g)?;
        restore(discriminator.parameters_mut(), &ckpt.params_d, &mut adam_d)?;

        Ok(Trainer {
            config: ckpt.config,
            generator,
            discriminator,
            adam_g,
            adam_d,
            rng: Rng::from_state(ckpt.rng_state),
            global_step: ckpt.global_step,
            next_epoch: ckpt.next_epoch,
        })
    }

    /// Rebuilds only the generator from a checkpoint (sampling does not need
    /// the critic).
    pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<Generator<f32>, TrainError> {
        let plan = ckpt.config.plan();
        let mut build_rng = Rng::derive(ckpt.config.seed, &[INIT_TAG]);
        let mut generator = Generator::build(&plan, ckpt.phase.level, &mut build_rng)?;
        let by_name: std::collections::BTreeMap<&str, &ParamBlock> =
            ckpt.params_g.iter().map(|b| (b.name.as_str(), b)).collect();
        for p in generator.parameters_mut() {
            let block = by_name.get(p.name.as_str()).ok_or_else(|| {
                TrainError::Checkpoint(CheckpointError::Corrupt(format!(
                    "missing generator parameter {}",
                    p.name
                )))
            })?;
            if block.param.shape() != p.value.shape() {
                return Err(TrainError::Checkpoint(CheckpointError::Corrupt(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    block.param.shape(),
                    p.value.shape()
                ))));
            }
            p.value = block.param.clone();
        }
        Ok(generator)
    }

    /// Snapshot for [`checkpoint::save`].
    pub fn to_checkpoint(&self, phase: PhaseState) -> Checkpoint {
        let collect = |params: Vec<&Parameter<f32>>, adam: &Adam<f32>| -> Vec<ParamBlock> {
            params
                .into_iter()
                .map(|p| {
                    let (m, v) = match adam.slot(&p.name) {
                        Some(slot) => (slot.m.clone(), slot.v.clone()),
                        None => (
                            Tensor::zeros(p.value.shape().to_vec()),
                            Tensor::zeros(p.value.shape().to_vec()),
                        ),
                    };
                    ParamBlock {
                        name: p.name.clone(),
                        param: p.value.clone(),
                        m,
                        v,
                    }
                })
                .collect()
        };
        Checkpoint {
            config: self.config.clone(),
            phase,
            next_epoch: self.next_epoch,
            global_step: self.global_step,
            rng_state: self.rng.state(),
            adam_g_step: self.adam_g.step_count(),
            adam_d_step: self.adam_d.step_count(),
            params_g: collect(self.generator.parameters(), &self.adam_g),
            params_d: collect(self.discriminator.parameters(), &self.adam_d),
        }
    }

    /// Grows both networks until they reach `level`. Transferred parameters
    /// and their optimizer moments are untouched; new layers start fresh.
    pub fn ensure_level(&mut self, level: usize) -> Result<(), TrainError> {
        while self.generator.level() < level {
            let next = self.generator.level() + 1;
            let mut grow_rng = Rng::derive(self.config.seed, &[GROW_TAG, next as u64]);
            self.generator = self.generator.grow(&mut grow_rng)?;
            self.discriminator = self.discriminator.grow(&mut grow_rng)?;
        }
        Ok(())
    }

    /// Standard-normal latent batch `[n, 1, 1, latent_dim]`.
    pub fn draw_latents(&mut self, n: usize) -> Tensor<f32> {
        let dim = self.config.latent_dim;
        let rng = &mut self.rng;
        Tensor::from_fn(vec![n, 1, 1, dim], |_| rng.normal_f64() as f32)
    }

    /// One critic update on `real`; the generator is frozen.
    pub fn critic_update(
        &mut self,
        real: &Tensor<f32>,
        phase: &PhaseState,
    ) -> Result<wgan::CriticLoss<f32>, TrainError> {
        let tape = crate::tensor::Tape::new();
        let bound_g = self.generator.bind(&tape, false)?;
        let bound_d = self.discriminator.bind(&tape, true)?;

        let z = self.draw_latents(real.shape()[0]);
        let zv = tape.leaf_owned(z, false)?;
        let fake = bound_g
            .forward(&zv, phase)
            .map_err(|source| TrainError::Step {
                stage: "generator forward",
                source,
            })?
            .to_tensor();

        let score = |x: &crate::tensor::Var<f32>| bound_d.forward(x, phase);
        let parts = wgan::critic_loss(
            &tape,
            &score,
            real,
            &fake,
            self.config.lambda_gp,
            self.config.eps_drift,
            &mut self.rng,
        )
        .map_err(|source| TrainError::Step {
            stage: "critic loss",
            source,
        })?;

        let grads = parts.total.backward().map_err(|source| TrainError::Step {
            stage: "critic backward",
            source,
        })?;
        let mut named = std::collections::BTreeMap::new();
        for (name, leaf) in bound_d.bindings() {
            if let Some(g) = grads.get_tensor(leaf) {
                named.insert(name.clone(), g);
            }
        }
        apply_named_grads(
            &mut self.adam_d,
            self.discriminator.parameters_mut(),
            &named,
            "critic update",
        )?;
        Ok(parts)
    }

    /// One generator update; the critic is frozen.
    pub fn generator_update(
        &mut self,
        batch_size: usize,
        phase: &PhaseState,
    ) -> Result<f64, TrainError> {
        let tape = crate::tensor::Tape::new();
        let bound_g = self.generator.bind(&tape, true)?;
        let bound_d = self.discriminator.bind(&tape, false)?;

        let z = self.draw_latents(batch_size);
        let zv = tape.leaf_owned(z, false)?;
        let fake = bound_g
            .forward(&zv, phase)
            .map_err(|source| TrainError::Step {
                stage: "generator forward",
                source,
            })?;
        let score = |x: &crate::tensor::Var<f32>| bound_d.forward(x, phase);
        let loss = wgan::generator_loss(&score, &fake).map_err(|source| TrainError::Step {
            stage: "generator loss",
            source,
        })?;
        let value = loss.scalar()?.to_f64();

        let grads = loss.backward().map_err(|source| TrainError::Step {
            stage: "generator backward",
            source,
        })?;
        let mut named = std::collections::BTreeMap::new();
        for (name, leaf) in bound_g.bindings() {
            if let Some(g) = grads.get_tensor(leaf) {
                named.insert(name.clone(), g);
            }
        }
        apply_named_grads(
            &mut self.adam_g,
            self.generator.parameters_mut(),
            &named,
            "generator update",
        )?;
        Ok(value)
    }

    /// `n_critic` critic updates followed by one generator update.
    pub fn train_step(
        &mut self,
        real: &ImageBatch,
        phase: &PhaseState,
    ) -> Result<LossReport, TrainError> {
        let mut last = None;
        for _ in 0..self.config.n_critic {
            last = Some(self.critic_update(&real.tensor, phase)?);
        }
        let critic = last.expect("n_critic >= 1");
        let generator_loss = self.generator_update(real.tensor.shape()[0], phase)?;
        self.global_step += 1;
        Ok(LossReport {
            critic_loss: critic.critic_loss,
            generator_loss,
            wasserstein_estimate: critic.wasserstein_estimate,
            gradient_penalty: critic.gradient_penalty,
            drift_term: critic.drift_term,
        })
    }

    /// Renders a grid of samples from fixed latents at the given phase.
    fn write_sample_grid(&self, phase: &PhaseState, path: &Path) -> Result<(), TrainError> {
        let (rows, cols) = (self.config.sample_rows, self.config.sample_cols);
        let count = rows * cols;
        let mut sample_rng = Rng::derive(self.config.seed, &[SAMPLE_TAG]);
        let dim = self.config.latent_dim;
        let z = Tensor::from_fn(vec![count, 1, 1, dim], |_| sample_rng.normal_f64() as f32);
        let tape = crate::tensor::Tape::new();
        let zv = tape.leaf_owned(z, false)?;
        let out = self.generator.bind(&tape, false)?.forward(&zv, phase)?;
        let batch = out.to_tensor();
        let tiles: Vec<Vec<u8>> = (0..count)
            .map(|i| grid::image_to_u8(&grid::batch_image(&batch, i)))
            .collect();
        grid::write_png_grid(&tiles, phase.resolution(), rows, cols, path)?;
        Ok(())
    }
}

/// Files produced by a training run.
#[derive(Debug)]
pub struct RunSummary {
    pub epochs_run: u64,
    pub steps_run: u64,
    pub final_checkpoint: Option<PathBuf>,
    pub metrics_path: PathBuf,
}

fn metrics_line(epoch: u64, step: u64, phase: &PhaseState, report: &LossReport) -> String {
    format!(
        "{epoch} {step} {} {} {} {} {} {} {}\n",
        phase.level,
        phase.alpha,
        report.critic_loss,
        report.generator_loss,
        report.wasserstein_estimate,
        report.gradient_penalty,
        report.drift_term
    )
}

/// Runs (or resumes) training end to end.
///
/// Produces under `out_dir`: `metrics.log` (one record per step:
/// `epoch step level alpha critic_loss gen_loss w_estimate gp drift`),
/// `ckpt-epoch-N.pgck` checkpoints, and `samples/epoch-N.png` grids drawn
/// from latents that stay fixed across the whole run. On a non-finite loss
/// the trainer writes `ckpt-abort.pgck` before returning the error.
pub fn run_training(
    config: TrainingConfig,
    dataset: &DatasetIndex,
    out_dir: &Path,
    resume: Option<Checkpoint>,
) -> Result<RunSummary, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let samples_dir = out_dir.join("samples");
    std::fs::create_dir_all(&samples_dir)?;
    let metrics_path = out_dir.join("metrics.log");

    let mut trainer = match resume {
        Some(ckpt) => {
            structural_match(&ckpt.config, &config)?;
            let mut t = Trainer::from_checkpoint(ckpt)?;
            // run-control fields (step limit, worker count, determinism)
            // come from the caller; everything that shapes the model or its
            // trajectory must match the checkpoint
            t.config = config.clone();
            t
        }
        None => Trainer::new(config)?,
    };
    let config = trainer.config.clone();

    let mut metrics = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)?;

    let mut last_ckpt = None;
    let start_epoch = trainer.next_epoch;
    let mut stopped = false;
    for epoch in start_epoch..config.total_epochs {
        // the step limit is honored at epoch granularity so an interrupted
        // run can always resume from a clean epoch boundary
        if config
            .max_steps
            .is_some_and(|limit| trainer.global_step >= limit)
        {
            break;
        }
        let phase = schedule(epoch, &config)?;
        trainer.ensure_level(phase.level)?;

        let loader = Loader::epoch(
            dataset,
            epoch,
            phase,
            config.batch_size,
            config.workers,
            config.deterministic,
        );
        for batch in loader {
            let batch = batch?;
            let report = match trainer.train_step(&batch, &phase) {
                Ok(report) => report,
                Err(e) => {
                    let abort = out_dir.join("ckpt-abort.pgck");
                    let _ = checkpoint::save(&trainer.to_checkpoint(phase), &abort);
                    return Err(e);
                }
            };
            metrics.write_all(
                metrics_line(epoch, trainer.global_step, &phase, &report).as_bytes(),
            )?;
        }
        metrics.flush()?;
        trainer.next_epoch = epoch + 1;
        if config
            .max_steps
            .is_some_and(|limit| trainer.global_step >= limit)
        {
            stopped = true;
        }

        if stopped || config.checkpoint_every == 0 || epoch.is_multiple_of(config.checkpoint_every) {
            let path = out_dir.join(format!("ckpt-epoch-{epoch}.pgck"));
            checkpoint::save(&trainer.to_checkpoint(phase), &path)?;
            last_ckpt = Some(path);
        }
        trainer.write_sample_grid(&phase, &samples_dir.join(format!("epoch-{epoch}.png")))?;
        if stopped {
            break;
        }
    }

    Ok(RunSummary {
        epochs_run: trainer.next_epoch - start_epoch,
        steps_run: trainer.global_step,
        final_checkpoint: last_ckpt,
        metrics_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> TrainingConfig {
        TrainingConfig {
            total_epochs: 2,
            batch_size: 2,
            latent_dim: 16,
            max_level: 0,
            seed: 11,
            workers: 1,
            deterministic: true,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let ok = quick_config();
        assert!(ok.validate().is_ok());
        assert!(TrainingConfig {
            batch_size: 1,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            total_epochs: 99,
            max_level: 4,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            fade_fraction: 1.5,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            max_level: 9,
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn schedule_covers_the_default_run() {
        let config = TrainingConfig::default();
        let first = schedule(0, &config).unwrap();
        assert_eq!((first.level, first.alpha), (0, 1.0));

        let last = schedule(99, &config).unwrap();
        assert_eq!((last.level, last.alpha), (4, 1.0));

        // 6th epoch of the level-1 phase: alpha = 6/10
        let mid = schedule(25, &config).unwrap();
        assert_eq!(mid.level, 1);
        assert!((mid.alpha - 0.6).abs() < 1e-12);

        assert!(schedule(100, &config).is_err());
    }

    #[test]
    fn schedule_is_total_and_monotone() {
        let config = TrainingConfig::default();
        let mut prev_level = 0;
        let mut prev_alpha = 1.0;
        for epoch in 0..config.total_epochs {
            let p = schedule(epoch, &config).unwrap();
            assert!(p.level >= prev_level, "resolution never shrinks");
            if p.level == prev_level && epoch > 0 {
                assert!(p.alpha >= prev_alpha, "alpha non-decreasing within a phase");
            }
            prev_level = p.level;
            prev_alpha = p.alpha;
        }
        // growth happens in exactly max_level steps
        let levels: std::collections::BTreeSet<usize> = (0..config.total_epochs)
            .map(|e| schedule(e, &config).unwrap().level)
            .collect();
        assert_eq!(levels.len(), 5);
    }

    #[test]
    fn updates_are_isolated_between_networks() {
        let mut trainer = Trainer::new(quick_config()).unwrap();
        let phase = PhaseState::stable(0);
        let mut rng = Rng::seed_from_u64(5);
        let real = ImageBatch {
            tensor: Tensor::from_fn(vec![2, 4, 4, 3], |_| (rng.normal_f64() * 0.3) as f32),
        };

        let g_bits: Vec<Vec<u32>> = trainer
            .generator
            .parameters()
            .iter()
            .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        trainer.critic_update(&real.tensor, &phase).unwrap();
        let g_after: Vec<Vec<u32>> = trainer
            .generator
            .parameters()
            .iter()
            .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(g_bits, g_after, "critic update must not touch generator");

        let d_bits: Vec<Vec<u32>> = trainer
            .discriminator
            .parameters()
            .iter()
            .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        trainer.generator_update(2, &phase).unwrap();
        let d_after: Vec<Vec<u32>> = trainer
            .discriminator
            .parameters()
            .iter()
            .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(d_bits, d_after, "generator update must not touch critic");
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_fixed() {
        let mut config = quick_config();
        config.learning_rate = f64::MIN_POSITIVE; // effectively zero, still valid
        let mut trainer = Trainer::new(config).unwrap();
        let phase = PhaseState::stable(0);
        let mut rng = Rng::seed_from_u64(6);
        let real = Tensor::from_fn(vec![2, 4, 4, 3], |_| (rng.normal_f64() * 0.3) as f32);

        let before: Vec<Vec<f32>> = trainer
            .discriminator
            .parameters()
            .iter()
            .map(|p| p.value.data().to_vec())
            .collect();
        let parts = trainer.critic_update(&real, &phase).unwrap();
        let after: Vec<Vec<f32>> = trainer
            .discriminator
            .parameters()
            .iter()
            .map(|p| p.value.data().to_vec())
            .collect();
        for (a, b) in before.iter().zip(&after) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(parts.critic_loss.is_finite());
    }

    #[test]
    fn growth_keeps_transferred_values_across_ensure_level() {
        let mut config = quick_config();
        config.max_level = 2;
        config.total_epochs = 3;
        let mut trainer = Trainer::new(config).unwrap();
        let before: Vec<(String, Vec<u32>)> = trainer
            .generator
            .parameters()
            .iter()
            .map(|p| (p.name.clone(), p.value.data().iter().map(|v| v.to_bits()).collect()))
            .collect();
        trainer.ensure_level(2).unwrap();
        assert_eq!(trainer.generator.level(), 2);
        assert_eq!(trainer.discriminator.level(), 2);
        for (name, bits) in before {
            let now = trainer
                .generator
                .parameters()
                .into_iter()
                .find(|p| p.name == name)
                .unwrap();
            let now_bits: Vec<u32> = now.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, now_bits);
        }
    }

    /// Linear critic on scalar samples against a frozen sampler: Adam should
    /// drive the Wasserstein estimate to the penalty-limited optimum
    /// `(1 + gap / (2 lambda)) * gap`, within 10% of the true mean gap.
    #[test]
    fn linear_critic_approaches_mean_gap() {
        let gap = 1.0;
        let lambda = wgan::LAMBDA_GP;
        let mut adam = Adam::<f64>::new(1e-2, 0.0, 0.99, 1e-8);
        // off-zero start: at w == 0 the penalty's gradient norm has a kink
        // and its derivative is genuinely undefined
        let mut w = Parameter {
            name: "w".into(),
            value: Tensor::scalar(0.05),
            fan_in: 1,
        };
        let mut b = Parameter {
            name: "b".into(),
            value: Tensor::scalar(0.0),
            fan_in: 1,
        };
        let mut rng = Rng::seed_from_u64(7);
        let mut w_est = 0.0;
        for _ in 0..500 {
            let real = Tensor::from_fn(vec![16, 1, 1, 1], |_| gap + 0.05 * rng.normal_f64());
            let fake = Tensor::from_fn(vec![16, 1, 1, 1], |_| 0.05 * rng.normal_f64());
            let tape = crate::tensor::Tape::new();
            let wv = tape.leaf(&w.value, true).unwrap();
            let bv = tape.leaf(&b.value, true).unwrap();
            let score = |x: &crate::tensor::Var<f64>| {
                let s = x.reduce_sum(&[1, 2, 3])?;
                let wb = wv.reshape(&[1, 1, 1, 1])?.broadcast_to(&s.shape())?;
                let bb = bv.reshape(&[1, 1, 1, 1])?.broadcast_to(&s.shape())?;
                s.mul(&wb)?.add(&bb)
            };
            let parts =
                wgan::critic_loss(&tape, &score, &real, &fake, lambda, 1e-3, &mut rng).unwrap();
            let grads = parts.total.backward().unwrap();
            let gw = grads.get_tensor(&wv).unwrap();
            let gb = grads.get_tensor(&bv).unwrap();
            adam.step(&mut [(&mut w, &gw), (&mut b, &gb)]).unwrap();
            w_est = parts.wasserstein_estimate;
        }
        assert!(
            (w_est - gap).abs() / gap < 0.10,
            "estimate {w_est} not within 10% of gap {gap}"
        );
    }
}
