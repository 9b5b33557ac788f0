//! Distillation-loop properties beyond the unit oracles: teacher
//! immutability under the full loop, and the mode-seeking sanity check on
//! a well-separated 1-D mixture.

use flowdistill_core::dmd::{
    distill, BatchSpec, DistillState, DriftScore, Generator, MixtureScore, NetFake, OneStepGen,
};
use flowdistill_core::flow::{rf_fit_step, FlowSchedule, MlpDrift, TimeSampler};
use flowdistill_core::metrics::MetricsSink;
use flowdistill_core::nn::{AdamW, DiffModel, MlpConfig};
use flowdistill_core::oracle::{GaussianSpec, MixtureSpec};
use flowdistill_core::rng::{randn, seed_rng};
use flowdistill_core::Tensor;

fn pretrain_mixture_drift(mix: &MixtureSpec, steps: usize, seed: u64) -> DiffModel {
    let mut rng = seed_rng(seed);
    let mut cfg = MlpConfig::drift(1);
    cfg.hidden_width = 96;
    cfg.hidden_layers = 3;
    let mut model = DiffModel::new(cfg, &mut rng);
    let mut opt = AdamW::new(&model.params, 3e-4);
    let schedule = FlowSchedule::default();
    let sampler = TimeSampler::uniform(&schedule);
    for _ in 0..steps {
        let mut data = Vec::with_capacity(256);
        for _ in 0..256 {
            data.extend(mix.sample(&mut rng));
        }
        let x1 = Tensor::new(vec![256, 1], data);
        rf_fit_step(&mut model, &mut opt, &x1, &sampler, &mut rng).unwrap();
    }
    model
}

#[test]
fn mode_seeking_keeps_samples_on_data_support() {
    // Two well-separated 1-D modes; after distillation against the
    // analytic mixture score, one-step samples must concentrate on the
    // data support: < 1% farther than 4 sigma from both means.
    let sigma = 0.4;
    let mix = MixtureSpec::new(vec![
        (0.5, GaussianSpec::isotropic(vec![-2.0], sigma * sigma)),
        (0.5, GaussianSpec::isotropic(vec![2.0], sigma * sigma)),
    ])
    .unwrap();
    let schedule = FlowSchedule::default();

    let pretrained = pretrain_mixture_drift(&mix, 2500, 11);
    let teacher = MixtureScore(mix.clone());
    let fake = NetFake::from_teacher(&pretrained, 4e-4, schedule);
    let generator = OneStepGen::from_teacher(&pretrained, &schedule);
    let mut state = DistillState::new(teacher, fake, generator, 4e-4, 0.99, schedule);
    // Late times resolve the inter-mode gap; bias the gradient there.
    state.time_sampler = TimeSampler { lo: 0.4, hi: schedule.t_max };

    let mut sink = MetricsSink::new();
    let mut rng = seed_rng(12);
    distill(
        &mut state,
        3000,
        BatchSpec { fake_batch: 128, gen_batch: 128 },
        &mut |_| (vec![1, 1], ()),
        &mut sink,
        &mut rng,
    )
    .unwrap();

    let z = randn(&[10_000, 1], &mut rng);
    let samples = state.generator.generate(&z, &());
    let off_support = samples
        .data()
        .iter()
        .filter(|&&x| (x + 2.0).abs() > 4.0 * sigma && (x - 2.0).abs() > 4.0 * sigma)
        .count();
    let frac = off_support as f64 / samples.len() as f64;
    assert!(frac < 0.01, "{:.3}% of samples off support", 100.0 * frac);

    // Both modes should still be populated (the data are symmetric).
    let left = samples.data().iter().filter(|&&x| x < 0.0).count();
    assert!(left > 1000 && left < 9000, "left-mode count {left}");
}

#[test]
fn teacher_is_bit_identical_after_distill() {
    let target = GaussianSpec::isotropic(vec![0.4, -0.2], 1.0);
    let schedule = FlowSchedule::default();
    let mut rng = seed_rng(21);
    let mut cfg = MlpConfig::drift(2);
    cfg.hidden_width = 32;
    cfg.hidden_layers = 2;
    let teacher_net = DiffModel::new(cfg, &mut rng);
    let checksum_before = teacher_net.params.checksum();

    let teacher = DriftScore { field: MlpDrift { model: teacher_net }, schedule };
    let fake = NetFake::from_teacher(&teacher.field.model, 1e-4, schedule);
    let generator = OneStepGen::from_teacher(&teacher.field.model, &schedule);
    let mut state = DistillState::new(teacher, fake, generator, 1e-4, 0.999, schedule);

    let mut sink = MetricsSink::new();
    let _ = target;
    distill(
        &mut state,
        8,
        BatchSpec { fake_batch: 16, gen_batch: 16 },
        &mut |_| (vec![1, 2], ()),
        &mut sink,
        &mut rng,
    )
    .unwrap();

    assert_eq!(state.teacher.field.model.params.checksum(), checksum_before);
    // Fake and generator have moved away from the shared initialization.
    assert_ne!(state.fake.drift.params.checksum(), checksum_before);
    assert_ne!(state.generator.params().checksum(), checksum_before);
}

#[test]
fn divergence_guard_reports_step() {
    // A absurdly scaled weighting forces a huge surrogate gradient.
    let target = GaussianSpec::isotropic(vec![50.0, -50.0], 0.0001);
    let schedule = FlowSchedule::default();
    let teacher = flowdistill_core::dmd::GaussianScore(target);
    let gen = flowdistill_core::dmd::AffineGenerator::identity(2);
    let fake = flowdistill_core::dmd::TrackingFake::new(gen.implied_gaussian().unwrap());
    let mut state = DistillState::new(teacher, fake, gen, 1e-4, 0.999, schedule);
    state.weighting.scale = 1e9;
    state.grad_norm_limit = 1e4;

    let mut sink = MetricsSink::new();
    let mut rng = seed_rng(31);
    let err = distill(
        &mut state,
        3,
        BatchSpec { fake_batch: 8, gen_batch: 8 },
        &mut |_| (vec![1, 2], ()),
        &mut sink,
        &mut rng,
    )
    .unwrap_err();
    assert!(err.to_string().contains("step"), "{err}");
}
