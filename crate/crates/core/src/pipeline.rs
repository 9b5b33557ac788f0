//! End-to-end training recipes shared by the command-line runner and the
//! acceptance suite: rectified-flow pretraining on 2-D targets, their
//! distillation, and the text-to-token stack (infilling model, duration
//! predictor, conditional distillation).

use rand::Rng;

use crate::dmd::{
    distill, BatchSpec, DistillState, DmdError, DriftScore, Generator, NetFake, OneStepGen,
};
use crate::flow::{rf_fit_step, FlowError, FlowSchedule, MlpDrift, TimeSampler};
use crate::metrics::{MetricsSink, Phase};
use crate::nn::{AdamW, DiffModel, Ema, MlpConfig, ParamStore};
use crate::oracle::{GaussianSpec, MixtureSpec};
use crate::rng::{seed_rng, stream_rng, Prng};
use crate::tensor::Tensor;
use crate::toytts::duration::{duration_train_step, sample_observation, DurationConfig, DurationModel};
use crate::toytts::t2t::{t2t_train_step, T2TCond, T2TConfig, T2TFake, T2TModel, T2TStudent};
use crate::toytts::{sample_mask, MaskSpec, ToyTask, ToyUtterance};

/// A sampleable 2-D target with closed-form scores.
#[derive(Clone, Debug)]
pub enum Target2d {
    Gaussian(GaussianSpec),
    Mixture(MixtureSpec),
}

impl Target2d {
    pub fn dim(&self) -> usize {
        match self {
            Target2d::Gaussian(g) => g.dim(),
            Target2d::Mixture(m) => m.dim(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Target2d::Gaussian(g) => g.sample(rng),
            Target2d::Mixture(m) => m.sample(rng),
        }
    }

    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend(self.sample(rng));
        }
        Tensor::new(vec![n, d], data)
    }
}

#[derive(Clone, Debug)]
pub struct TeacherConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub ema_decay: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            steps: 20000,
            batch: 256,
            lr: 1e-4,
            ema_decay: 0.9999,
            hidden_width: 128,
            hidden_layers: 4,
        }
    }
}

pub struct TrainedTeacher {
    /// Raw parameters at the last step.
    pub model: DiffModel,
    /// EMA parameters; evaluation always uses these.
    pub ema: ParamStore,
}

impl TrainedTeacher {
    /// Model with the EMA weights swapped in.
    pub fn ema_model(&self) -> DiffModel {
        let mut m = self.model.clone();
        m.params.copy_from(&self.ema).expect("ema shapes mirror params");
        m
    }
}

/// Train a drift network on fresh target batches with the regression loss.
pub fn train_teacher_2d(
    target: &Target2d,
    cfg: &TeacherConfig,
    seed: u64,
    sink: &mut MetricsSink,
) -> Result<TrainedTeacher, FlowError> {
    let mut rng = seed_rng(seed);
    let mut mlp_cfg = MlpConfig::drift(target.dim());
    mlp_cfg.hidden_width = cfg.hidden_width;
    mlp_cfg.hidden_layers = cfg.hidden_layers;
    let mut model = DiffModel::new(mlp_cfg, &mut rng);
    let mut opt = AdamW::new(&model.params, cfg.lr);
    let mut ema = Ema::new(&model.params, cfg.ema_decay);
    let schedule = FlowSchedule::default();
    let sampler = TimeSampler::uniform(&schedule);

    for step in 0..cfg.steps {
        let x1 = target.sample_batch(cfg.batch, &mut rng);
        let loss = rf_fit_step(&mut model, &mut opt, &x1, &sampler, &mut rng)?;
        ema.update(&model.params)?;
        if step % 50 == 0 || step + 1 == cfg.steps {
            sink.push(step as u64, Phase::Teacher, loss, 0.0);
        }
    }
    Ok(TrainedTeacher { model, ema: ema.into_shadow() })
}

#[derive(Clone, Debug)]
pub struct DistillConfig {
    pub gen_steps: usize,
    pub fake_batch: usize,
    pub gen_batch: usize,
    pub ttur_ratio: usize,
    pub lr: f64,
    pub ema_decay: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        // EMA window sized to the run: at a few thousand generator steps a
        // 0.9999 decay would still remember the collapsed initialization.
        Self {
            gen_steps: 1000,
            fake_batch: 128,
            gen_batch: 128,
            ttur_ratio: 10,
            lr: 1e-4,
            ema_decay: 0.99,
        }
    }
}

pub struct Distilled2d {
    /// One-step generator with EMA weights (evaluation parameters).
    pub student: OneStepGen,
    /// Raw (non-EMA) student parameters at the last step.
    pub raw_params: ParamStore,
    pub gen_updates: u64,
    pub fake_updates: u64,
}

/// Algorithm-1 distillation of a trained 2-D teacher: fake score and
/// generator both start as copies of the teacher (EMA weights), fake
/// trains by denoising score matching on generated samples, generator by
/// the score-difference surrogate under the two-timescale schedule.
pub fn distill_2d(
    teacher: &TrainedTeacher,
    cfg: &DistillConfig,
    seed: u64,
    sink: &mut MetricsSink,
) -> Result<Distilled2d, DmdError> {
    let schedule = FlowSchedule::default();
    let teacher_model = teacher.ema_model();
    let dim = teacher_model.config.in_dim;
    let teacher_score = DriftScore { field: MlpDrift { model: teacher_model.clone() }, schedule };
    let fake = NetFake::from_teacher(&teacher_model, cfg.lr, schedule);
    let generator = OneStepGen::from_teacher(&teacher_model, &schedule);

    let mut state = DistillState::new(teacher_score, fake, generator, cfg.lr, cfg.ema_decay, schedule);
    state.ttur_ratio = cfg.ttur_ratio;

    let mut rng = seed_rng(seed);
    distill(
        &mut state,
        cfg.gen_steps,
        BatchSpec { fake_batch: cfg.fake_batch, gen_batch: cfg.gen_batch },
        &mut |_| (vec![1, dim], ()),
        sink,
        &mut rng,
    )?;

    let raw_params = state.generator.params().clone();
    let mut student = state.generator;
    student
        .drift
        .params
        .copy_from(state.gen_ema.shadow())
        .expect("ema shapes mirror params");
    Ok(Distilled2d {
        student,
        raw_params,
        gen_updates: state.gen_updates,
        fake_updates: state.fake_updates,
    })
}

// ---- text-to-token stack ----

#[derive(Clone, Debug)]
pub struct T2TTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub ema_decay: f64,
    pub model: T2TConfig,
}

impl T2TTrainConfig {
    pub fn small(task: &ToyTask) -> Self {
        Self {
            steps: 9000,
            batch: 16,
            lr: 1e-4,
            ema_decay: 0.999,
            model: T2TConfig::small(task.config.alphabet_size, task.config.token_dim),
        }
    }
}

pub struct TrainedT2T {
    pub model: T2TModel,
    pub ema: ParamStore,
}

impl TrainedT2T {
    pub fn ema_model(&self) -> T2TModel {
        let mut m = self.model.clone();
        m.params.copy_from(&self.ema).expect("ema shapes mirror params");
        m
    }
}

/// Train the infilling model: per step, draw a batch of utterances and
/// masks, perturb the masked spans, regress the velocity there.
pub fn train_t2t(
    data: &[ToyUtterance],
    cfg: &T2TTrainConfig,
    seed: u64,
    sink: &mut MetricsSink,
) -> Result<TrainedT2T, FlowError> {
    let mut rng = seed_rng(seed);
    let mut model = T2TModel::new(cfg.model, &mut rng);
    let mut opt = AdamW::new(&model.params, cfg.lr);
    let mut ema = Ema::new(&model.params, cfg.ema_decay);
    let schedule = FlowSchedule::default();
    let sampler = TimeSampler::uniform(&schedule);

    for step in 0..cfg.steps {
        let batch: Vec<(&ToyUtterance, MaskSpec)> = (0..cfg.batch)
            .map(|_| {
                let u = &data[rng.gen_range(0..data.len())];
                let m = sample_mask(u.n_speech(), &mut rng);
                (u, m)
            })
            .collect();
        let loss = t2t_train_step(&mut model, &mut opt, &batch, &sampler, &mut rng)?;
        ema.update(&model.params)?;
        if step % 50 == 0 || step + 1 == cfg.steps {
            sink.push(step as u64, Phase::Teacher, loss, 0.0);
        }
    }
    Ok(TrainedT2T { model, ema: ema.into_shadow() })
}

#[derive(Clone, Debug)]
pub struct DurationTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub model: DurationConfig,
}

impl DurationTrainConfig {
    pub fn small(task: &ToyTask) -> Self {
        Self {
            steps: 4000,
            batch: 32,
            lr: 3e-4,
            model: DurationConfig::small(task.config.alphabet_size),
        }
    }
}

pub fn train_duration(
    data: &[ToyUtterance],
    cfg: &DurationTrainConfig,
    seed: u64,
    sink: &mut MetricsSink,
) -> Result<DurationModel, crate::nn::NnError> {
    let mut rng = seed_rng(seed);
    let mut model = DurationModel::new(cfg.model, &mut rng);
    let mut opt = AdamW::new(&model.params, cfg.lr);
    for step in 0..cfg.steps {
        let batch: Vec<(&ToyUtterance, Vec<Option<usize>>)> = (0..cfg.batch)
            .map(|_| {
                let u = &data[rng.gen_range(0..data.len())];
                let obs = sample_observation(&u.durations, &mut rng);
                (u, obs)
            })
            .collect();
        let loss = duration_train_step(&mut model, &mut opt, &batch, &mut rng)?;
        if step % 50 == 0 || step + 1 == cfg.steps {
            sink.push(step as u64, Phase::Duration, loss, 0.0);
        }
    }
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct T2TDistillConfig {
    pub gen_steps: usize,
    pub fake_batch: usize,
    pub gen_batch: usize,
    pub ttur_ratio: usize,
    pub lr: f64,
    pub ema_decay: f64,
    /// Fraction of distillation conditions that use a full mask; the rest
    /// follow the training mask distribution.
    pub full_mask_fraction: f64,
}

impl Default for T2TDistillConfig {
    fn default() -> Self {
        Self {
            gen_steps: 900,
            fake_batch: 8,
            gen_batch: 8,
            ttur_ratio: 10,
            lr: 1e-4,
            ema_decay: 0.999,
            full_mask_fraction: 0.5,
        }
    }
}

pub struct DistilledT2T {
    /// One-step student with EMA weights.
    pub student: T2TStudent,
    pub gen_updates: u64,
    pub fake_updates: u64,
}

/// Conditional distillation: the same loop as the 2-D case with
/// per-example conditioning (text, mask, clean context) passed through to
/// generator, fake score, and teacher score alike.
pub fn distill_t2t(
    teacher: &TrainedT2T,
    data: &[ToyUtterance],
    cfg: &T2TDistillConfig,
    seed: u64,
    sink: &mut MetricsSink,
) -> Result<DistilledT2T, DmdError> {
    let schedule = FlowSchedule::default();
    let teacher_model = teacher.ema_model();
    let token_dim = teacher_model.config.token_dim;
    let teacher_score = DriftScore {
        field: crate::toytts::t2t::OwnedT2TDrift { model: teacher_model.clone() },
        schedule,
    };
    let fake = T2TFake::from_teacher(&teacher_model, cfg.lr, schedule);
    let generator = T2TStudent::from_teacher(&teacher_model, &schedule);

    let mut state = DistillState::new(teacher_score, fake, generator, cfg.lr, cfg.ema_decay, schedule);
    state.ttur_ratio = cfg.ttur_ratio;
    // Sequence states hold ~mask_len x token_dim values; smaller tapes keep
    // the per-chunk memory in check.
    state.chunk_size = 4;

    let full_mask_fraction = cfg.full_mask_fraction;
    let mut rng = seed_rng(seed);
    let data_ref = data;
    distill(
        &mut state,
        cfg.gen_steps,
        BatchSpec { fake_batch: cfg.fake_batch, gen_batch: cfg.gen_batch },
        &mut |r: &mut Prng| {
            let u = &data_ref[r.gen_range(0..data_ref.len())];
            let mask = if r.gen::<f64>() < full_mask_fraction {
                MaskSpec::full(u.n_speech())
            } else {
                sample_mask(u.n_speech(), r)
            };
            let cond = T2TCond::from_utterance(u, mask);
            (vec![mask.len, token_dim], cond)
        },
        sink,
        &mut rng,
    )?;

    let mut student = state.generator;
    student
        .model
        .params
        .copy_from(state.gen_ema.shadow())
        .expect("ema shapes mirror params");
    Ok(DistilledT2T {
        student,
        gen_updates: state.gen_updates,
        fake_updates: state.fake_updates,
    })
}

/// Deterministic train/held-out split of a generated dataset.
pub fn split_dataset(data: Vec<ToyUtterance>, held_out: usize) -> (Vec<ToyUtterance>, Vec<ToyUtterance>) {
    assert!(held_out < data.len());
    let mut train = data;
    let eval = train.split_off(train.len() - held_out);
    (train, eval)
}

/// Per-utterance derived seed helper for evaluation loops.
pub fn eval_rng(seed: u64, item: usize) -> Prng {
    stream_rng(seed, item as u64)
}
