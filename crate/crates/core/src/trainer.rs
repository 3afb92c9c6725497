//! Alternating generator / discriminator training.
//!
//! Each iteration updates the generator on a fresh noise batch (the
//! discriminator is differentiated through but left untouched), then
//! resamples the noise and updates the discriminator on the real batch and
//! the new generated batch. Everything random (noise, dropout masks, epoch
//! shuffles) is drawn from the single stream stored in [`TrainerState`], so
//! config, seed and data determine every parameter trajectory.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_weighted, gan_discriminator_loss, gan_generator_loss, generator_loss_fgan,
    CentroidGrad,
};
use crate::math::{Matrix, RngState};
use crate::neural::{Activation, Mlp, Mode};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Encirclement + dispersion generator, γ-weighted discriminator.
    #[default]
    Fgan,
    /// Minimax GAN objectives.
    Vanilla,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Standard normal.
    #[default]
    Normal,
    /// Uniform on [-1, 1).
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidMode {
    #[default]
    Full,
    Detached,
}

impl From<CentroidMode> for CentroidGrad {
    fn from(m: CentroidMode) -> Self {
        match m {
            CentroidMode::Full => CentroidGrad::Full,
            CentroidMode::Detached => CentroidGrad::Detached,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

impl LayerSpec {
    pub fn new(units: usize, activation: Activation, dropout: f64) -> Self {
        LayerSpec {
            units,
            activation,
            dropout,
        }
    }
}

/// Hidden stack, output head and optimizer of one network. The output
/// width comes from the data (generator) or is 1 (discriminator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub layers: Vec<LayerSpec>,
    pub output_activation: Activation,
    pub optimizer: OptimizerSpec,
}

impl NetSpec {
    fn build<T: Scalar>(&self, rng: &mut RngState, input: usize, output: usize, eps: f64) -> Result<Mlp<T>> {
        let mut dims = vec![input];
        dims.extend(self.layers.iter().map(|l| l.units));
        dims.push(output);
        let mut acts: Vec<Activation> = self.layers.iter().map(|l| l.activation).collect();
        acts.push(self.output_activation);
        let mut drops: Vec<f64> = self.layers.iter().map(|l| l.dropout).collect();
        drops.push(0.0);
        Mlp::init_glorot(rng, &dims, &acts, &drops, eps)
    }
}

fn default_steps() -> usize {
    1
}

fn default_eps() -> f64 {
    1e-7
}

/// Every training hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FganConfig {
    /// Target discriminator score for generated points.
    pub alpha: f64,
    /// Dispersion weight.
    pub beta: f64,
    /// Weight of the generated-sample term in the discriminator loss.
    pub gamma: f64,
    pub latent_dim: usize,
    pub epochs: u64,
    pub batch_size: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossVariant,
    #[serde(default)]
    pub centroid: CentroidMode,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default = "default_steps")]
    pub g_steps: usize,
    #[serde(default = "default_steps")]
    pub d_steps: usize,
    pub generator: NetSpec,
    pub discriminator: NetSpec,
}

impl FganConfig {
    /// Defaults for the two-dimensional Gaussian experiment.
    pub fn gaussian_2d() -> Self {
        let lrelu = Activation::LeakyRelu(0.1);
        FganConfig {
            alpha: 0.5,
            beta: 15.0,
            gamma: 0.5,
            latent_dim: 8,
            epochs: 2000,
            batch_size: 100,
            eps: 1e-7,
            seed: 0,
            loss: LossVariant::Fgan,
            centroid: CentroidMode::Full,
            noise: NoiseKind::Normal,
            g_steps: 1,
            d_steps: 1,
            generator: NetSpec {
                layers: vec![LayerSpec::new(64, Activation::Relu, 0.0); 3],
                output_activation: Activation::Linear,
                optimizer: OptimizerSpec::adam(1e-4, 0.0),
            },
            discriminator: NetSpec {
                layers: vec![LayerSpec::new(64, lrelu, 0.0); 3],
                output_activation: Activation::Sigmoid,
                optimizer: OptimizerSpec::adam(1e-4, 0.0),
            },
        }
    }

    /// KDD99 architecture and hyperparameters.
    pub fn kdd99() -> Self {
        let lrelu = Activation::LeakyRelu(0.1);
        FganConfig {
            alpha: 0.5,
            beta: 30.0,
            gamma: 0.5,
            latent_dim: 32,
            epochs: 50,
            batch_size: 256,
            eps: 1e-7,
            seed: 0,
            loss: LossVariant::Fgan,
            centroid: CentroidMode::Full,
            noise: NoiseKind::Normal,
            g_steps: 1,
            d_steps: 1,
            generator: NetSpec {
                layers: vec![
                    LayerSpec::new(64, Activation::Relu, 0.2),
                    LayerSpec::new(128, Activation::Relu, 0.2),
                ],
                output_activation: Activation::Linear,
                optimizer: OptimizerSpec::adam(1e-4, 1e-3),
            },
            discriminator: NetSpec {
                layers: vec![
                    LayerSpec::new(256, lrelu, 0.0),
                    LayerSpec::new(128, lrelu, 0.0),
                    LayerSpec::new(128, lrelu, 0.0),
                ],
                output_activation: Activation::Sigmoid,
                optimizer: OptimizerSpec::sgd(8e-6, 1e-3),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be finite and ≥ 0", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} must lie in (0, 1]", self.gamma));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be ≥ 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be ≥ 2".into());
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return bad(format!("eps {} must lie in (0, 0.5)", self.eps));
        }
        if self.g_steps == 0 || self.d_steps == 0 {
            return bad("g_steps and d_steps must be ≥ 1".into());
        }
        for (name, net) in [("generator", &self.generator), ("discriminator", &self.discriminator)] {
            net.optimizer.validate()?;
            for (i, l) in net.layers.iter().enumerate() {
                if l.units == 0 || !(0.0..1.0).contains(&l.dropout) {
                    return bad(format!("{name} layer {i}: units must be > 0 and dropout in [0, 1)"));
                }
            }
        }
        if self.discriminator.output_activation != Activation::Sigmoid {
            return bad("discriminator output activation must be sigmoid".into());
        }
        Ok(())
    }
}

/// Losses and learning rates of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

/// Per-epoch telemetry: mean losses over the epoch's iterations and the
/// learning rates used by its last iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState<T> {
    pub generator: Mlp<T>,
    pub discriminator: Mlp<T>,
    pub gen_opt: Optimizer<T>,
    pub disc_opt: Optimizer<T>,
    pub rng: RngState,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed iterations.
    pub step: u64,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainerState<T> {
    /// Fresh networks for `data_dim`-wide data, seeded from `config.seed`.
    pub fn init(config: &FganConfig, data_dim: usize) -> Result<Self> {
        config.validate()?;
        if data_dim == 0 {
            return Err(Error::invalid("data width must be positive"));
        }
        let mut rng = RngState::new(config.seed);
        let generator = config
            .generator
            .build(&mut rng, config.latent_dim, data_dim, config.eps)?;
        let discriminator = config.discriminator.build(&mut rng, data_dim, 1, config.eps)?;
        let gen_opt = config.generator.optimizer.build(&generator);
        let disc_opt = config.discriminator.optimizer.build(&discriminator);
        Ok(TrainerState {
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            rng,
            epoch: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn data_dim(&self) -> usize {
        self.discriminator.input_dim()
    }

    /// Noise batch of `n` rows from the configured prior, drawn from the
    /// training stream.
    pub fn sample_noise(&mut self, config: &FganConfig, n: usize) -> Result<Matrix<T>> {
        sample_noise(&mut self.rng, config.noise, n, self.generator.input_dim())
    }

    /// Eval-mode generator samples. Uses `rng` rather than the training
    /// stream, so inspecting a run does not change its trajectory.
    pub fn generate(&self, config: &FganConfig, n: usize, rng: &mut RngState) -> Result<Matrix<T>> {
        let z = sample_noise(rng, config.noise, n, self.generator.input_dim())?;
        self.generator.predict(&z)
    }
}

pub fn sample_noise<T: Scalar>(rng: &mut RngState, kind: NoiseKind, n: usize, k: usize) -> Result<Matrix<T>> {
    match kind {
        NoiseKind::Normal => Matrix::sample_standard_normal(rng, n, k),
        NoiseKind::Uniform => Matrix::sample_uniform(rng, n, k, -1.0, 1.0),
    }
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} became {v}")))
    }
}

/// One generator update on `n` fresh noise rows; the discriminator is
/// read but not modified. Returns the loss before the update and the
/// learning rate applied.
pub fn generator_phase<T: Scalar>(state: &mut TrainerState<T>, config: &FganConfig, n: usize) -> Result<(f64, f64)> {
    let z = state.sample_noise(config, n)?;
    let (points, g_trace) = state.generator.forward(&z, Mode::Train, &mut state.rng)?;
    let (scores, d_trace) = state.discriminator.forward(&points, Mode::Train, &mut state.rng)?;
    let loss = match config.loss {
        LossVariant::Fgan => generator_loss_fgan(
            &scores,
            &points,
            config.alpha,
            config.beta,
            config.eps,
            config.centroid.into(),
        )?,
        LossVariant::Vanilla => gan_generator_loss(&scores, config.eps)?,
    };
    let grad_scores = loss.grad_scores.as_ref().expect("generator loss has score gradient");
    let mut grad_points = state.discriminator.backward_input(&d_trace, grad_scores)?;
    if let Some(gp) = &loss.grad_points {
        grad_points.add_assign(gp)?;
    }
    let (grads, _) = state.generator.backward(&g_trace, &grad_points)?;
    let value = finite("generator loss", loss.value.to_f64_lossless())?;
    let lr = state.gen_opt.step(&mut state.generator, &grads)?;
    Ok((value, lr))
}

/// One discriminator update on `batch` against freshly generated points;
/// the generator is read but not modified.
pub fn discriminator_phase<T: Scalar>(
    state: &mut TrainerState<T>,
    batch: &Matrix<T>,
    config: &FganConfig,
) -> Result<(f64, f64)> {
    let z = state.sample_noise(config, batch.rows())?;
    let (points, _) = state.generator.forward(&z, Mode::Train, &mut state.rng)?;
    let (real_scores, real_trace) = state.discriminator.forward(batch, Mode::Train, &mut state.rng)?;
    let (gen_scores, gen_trace) = state.discriminator.forward(&points, Mode::Train, &mut state.rng)?;
    let loss = match config.loss {
        LossVariant::Fgan => discriminator_loss_weighted(&real_scores, &gen_scores, config.gamma, config.eps)?,
        LossVariant::Vanilla => gan_discriminator_loss(&real_scores, &gen_scores, config.eps)?,
    };
    let (mut grads, _) = state
        .discriminator
        .backward(&real_trace, loss.grad_real_scores.as_ref().expect("real score gradient"))?;
    let (gen_grads, _) = state
        .discriminator
        .backward(&gen_trace, loss.grad_scores.as_ref().expect("generated score gradient"))?;
    grads.accumulate(&gen_grads)?;
    let value = finite("discriminator loss", loss.value.to_f64_lossless())?;
    let lr = state.disc_opt.step(&mut state.discriminator, &grads)?;
    Ok((value, lr))
}

/// One generator phase followed by one discriminator phase (each repeated
/// `g_steps` / `d_steps` times). `batch` is the real-data batch; its row
/// count sets the noise batch size.
pub fn train_step<T: Scalar>(
    state: &mut TrainerState<T>,
    batch: &Matrix<T>,
    config: &FganConfig,
) -> Result<StepReport> {
    let n = batch.rows();
    if batch.cols() != state.data_dim() {
        return Err(Error::shape(
            "train_step",
            format!("batch width {} but model width {}", batch.cols(), state.data_dim()),
        ));
    }
    if n < 2 {
        return Err(Error::invalid("training batch needs at least 2 rows"));
    }
    let mut report = StepReport {
        gen_loss: 0.0,
        disc_loss: 0.0,
        lr_g: state.gen_opt.current_lr(),
        lr_d: state.disc_opt.current_lr(),
    };

    for _ in 0..config.g_steps {
        let (loss, lr) = generator_phase(state, config, n)?;
        report.gen_loss = loss;
        report.lr_g = lr;
    }
    for _ in 0..config.d_steps {
        let (loss, lr) = discriminator_phase(state, batch, config)?;
        report.disc_loss = loss;
        report.lr_d = lr;
    }

    state.step += 1;
    Ok(report)
}

/// Splits a shuffled permutation into batches of `batch_size`. A trailing
/// batch of a single row is folded into the previous one, since the
/// dispersion term needs at least two points.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::with_capacity(n.div_ceil(batch_size));
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        out.push(start..end);
        start = end;
    }
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").end = last.end;
    }
    out
}

/// Runs `epochs` more epochs on `data`, reshuffling from the state's rng at
/// the start of each. `on_epoch` sees every new history record.
pub fn run_epochs<T: Scalar>(
    state: &mut TrainerState<T>,
    config: &FganConfig,
    data: &Matrix<T>,
    epochs: u64,
    mut on_epoch: impl FnMut(&EpochRecord, &TrainerState<T>),
) -> Result<()> {
    if data.cols() != state.data_dim() {
        return Err(Error::shape(
            "train",
            format!("data width {} but model width {}", data.cols(), state.data_dim()),
        ));
    }
    let n = data.rows();
    if n < 2 {
        return Err(Error::Data("training needs at least 2 rows".into()));
    }
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..epochs {
        order.clear();
        order.extend(0..n);
        order.shuffle(&mut state.rng);
        let (mut g_sum, mut d_sum, mut count) = (0.0, 0.0, 0usize);
        let mut last = None;
        for range in batch_ranges(n, config.batch_size) {
            let batch = data.select_rows(&order[range])?;
            let r = train_step(state, &batch, config)?;
            g_sum += r.gen_loss;
            d_sum += r.disc_loss;
            count += 1;
            last = Some(r);
        }
        let last = last.expect("at least one batch");
        state.epoch += 1;
        let record = EpochRecord {
            epoch: state.epoch,
            gen_loss: g_sum / count as f64,
            disc_loss: d_sum / count as f64,
            lr_g: last.lr_g,
            lr_d: last.lr_d,
        };
        state.history.push(record);
        on_epoch(&record, state);
    }
    Ok(())
}

/// Initializes from `config.seed` and trains for `config.epochs`.
pub fn train<T: Scalar>(
    config: &FganConfig,
    data: &Matrix<T>,
    on_epoch: impl FnMut(&EpochRecord, &TrainerState<T>),
) -> Result<TrainerState<T>> {
    let mut state = TrainerState::init(config, data.cols())?;
    run_epochs(&mut state, config, data, config.epochs, on_epoch)?;
    Ok(state)
}

/// [`train`] with the minimax objectives regardless of `config.loss`.
pub fn train_baseline_gan<T: Scalar>(
    config: &FganConfig,
    data: &Matrix<T>,
    on_epoch: impl FnMut(&EpochRecord, &TrainerState<T>),
) -> Result<TrainerState<T>> {
    let config = FganConfig {
        loss: LossVariant::Vanilla,
        ..config.clone()
    };
    train(&config, data, on_epoch)
}
