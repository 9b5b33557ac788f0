//! Manual DMD diagnostics on the 8-mode mixture with a cached teacher.
//! `PROBE_*` env vars control the variant. Ignored by default.

use std::path::PathBuf;
use std::time::Instant;

use flowdistill_core::ckpt;
use flowdistill_core::dmd::{
    distill, BatchSpec, DistillState, DriftScore, Generator, MixtureScore, NetFake, OneStepGen,
};
use flowdistill_core::flow::{euler_sample, FlowSchedule, MlpDrift};
use flowdistill_core::metrics::{MetricsSink, Phase};
use flowdistill_core::nn::{DiffModel, MlpConfig};
use flowdistill_core::oracle::{mmd, MixtureSpec};
use flowdistill_core::pipeline::{train_teacher_2d, Target2d, TeacherConfig};
use flowdistill_core::rng::{randn, seed_rng};
use flowdistill_core::Tensor;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(|r| r.to_vec()).collect()
}

fn envn(k: &str, d: usize) -> usize {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn envf(k: &str, d: f64) -> f64 {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn cached_teacher(target: &Target2d) -> DiffModel {
    let steps = envn("PROBE_TEACHER_STEPS", 8000);
    let path = PathBuf::from(format!("/tmp/flowdistill_probe_teacher_{steps}.e1ck"));
    let mut cfg = MlpConfig::drift(2);
    cfg.hidden_width = 128;
    cfg.hidden_layers = 4;
    if let Ok(store) = ckpt::load(&path) {
        let mut model = DiffModel::new(cfg, &mut seed_rng(0));
        if model.params.copy_from(&store).is_ok() {
            println!("teacher: loaded from cache ({steps} steps)");
            return model;
        }
    }
    let mut sink = MetricsSink::new();
    let mut tcfg = TeacherConfig::default();
    tcfg.steps = steps;
    let teacher = train_teacher_2d(target, &tcfg, 11, &mut sink).unwrap();
    let model = teacher.ema_model();
    ckpt::save(&path, &model.params).unwrap();
    println!("teacher: trained and cached ({steps} steps)");
    model
}

fn mode_stats(samples: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut counts = vec![0usize; centers.len()];
    let mut dist_acc = 0.0;
    for s in samples {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (m, c) in centers.iter().enumerate() {
            let d: f64 = s.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        counts[best] += 1;
        dist_acc += best_d.sqrt();
    }
    (counts, dist_acc / samples.len() as f64)
}

#[test]
#[ignore]
fn dmd_diagnostics() {
    let mix = MixtureSpec::ring(8, 2.0, 0.25);
    let target = Target2d::Mixture(mix.clone());
    let schedule = FlowSchedule::default();
    let teacher_model = cached_teacher(&target);

    let mut r = seed_rng(21);
    let held_out: Vec<Vec<f64>> = (0..500).map(|_| mix.sample(&mut r)).collect();

    let use_analytic_teacher = std::env::var("PROBE_ANALYTIC_TEACHER").is_ok();
    let gen_steps = envn("PROBE_GEN_STEPS", 1500);
    let fake_lr = envf("PROBE_FAKE_LR", 1e-4);
    let gen_lr = envf("PROBE_GEN_LR", 1e-4);
    let fake_batch = envn("PROBE_FAKE_BATCH", 128);
    let gen_batch = envn("PROBE_GEN_BATCH", 128);
    let ttur = envn("PROBE_TTUR", 10);
    println!(
        "variant: steps={gen_steps} fake_lr={fake_lr} gen_lr={gen_lr} fb={fake_batch} gb={gen_batch} ttur={ttur} analytic_teacher={use_analytic_teacher}"
    );

    let ema_decay = envf("PROBE_EMA", 0.995);
    let mut sink = MetricsSink::new();
    let mut rng = seed_rng(41);
    let t0 = Instant::now();
    let quick_mmd = |params: &flowdistill_core::nn::ParamStore, held: &[Vec<f64>]| -> f64 {
        let mut s = OneStepGen::from_teacher(&teacher_model, &schedule);
        s.drift.params.copy_from(params).unwrap();
        let z = randn(&[400, 2], &mut seed_rng(99));
        let out = s.generate(&z, &());
        mmd(&rows(&out), &held[..400].to_vec())
    };
    let segments = (gen_steps / 250).max(1);
    let (raw_params, ema_params, fake_model) = if use_analytic_teacher {
        let teacher = MixtureScore(mix.clone());
        let fake = NetFake::from_teacher(&teacher_model, fake_lr, schedule);
        let generator = OneStepGen::from_teacher(&teacher_model, &schedule);
        let mut state = DistillState::new(teacher, fake, generator, gen_lr, ema_decay, schedule);
        state.ttur_ratio = ttur;
        for seg in 0..segments {
            distill(
                &mut state,
                gen_steps / segments,
                BatchSpec { fake_batch, gen_batch },
                &mut |_| (vec![1, 2], ()),
                &mut sink,
                &mut rng,
            )
            .unwrap();
            println!(
                "  seg {seg}: raw mmd {:.5} ema mmd {:.5}",
                quick_mmd(state.generator.params(), &held_out),
                quick_mmd(state.gen_ema.shadow(), &held_out)
            );
        }
        (
            state.generator.params().clone(),
            state.gen_ema.shadow().clone(),
            state.fake.drift.clone(),
        )
    } else {
        let teacher = DriftScore { field: MlpDrift { model: teacher_model.clone() }, schedule };
        let fake = NetFake::from_teacher(&teacher_model, fake_lr, schedule);
        let generator = OneStepGen::from_teacher(&teacher_model, &schedule);
        let mut state = DistillState::new(teacher, fake, generator, gen_lr, ema_decay, schedule);
        state.ttur_ratio = ttur;
        for seg in 0..segments {
            distill(
                &mut state,
                gen_steps / segments,
                BatchSpec { fake_batch, gen_batch },
                &mut |_| (vec![1, 2], ()),
                &mut sink,
                &mut rng,
            )
            .unwrap();
            println!(
                "  seg {seg}: raw mmd {:.5} ema mmd {:.5}",
                quick_mmd(state.generator.params(), &held_out),
                quick_mmd(state.gen_ema.shadow(), &held_out)
            );
        }
        (
            state.generator.params().clone(),
            state.gen_ema.shadow().clone(),
            state.fake.drift.clone(),
        )
    };
    println!("distill: {:.1} s", t0.elapsed().as_secs_f64());

    let fake_losses = sink.losses(Phase::Fake);
    let gen_rows: Vec<_> = sink
        .rows
        .iter()
        .filter(|row| row.phase == Phase::Gen)
        .collect();
    let head = 100.min(fake_losses.len());
    println!(
        "fake loss head {:.4} tail {:.4}",
        fake_losses[..head].iter().sum::<f64>() / head as f64,
        fake_losses[fake_losses.len() - head..].iter().sum::<f64>() / head as f64
    );
    println!(
        "gen grad norm head {:.4} tail {:.4}",
        gen_rows[..head.min(gen_rows.len())]
            .iter()
            .map(|r| r.grad_norm)
            .sum::<f64>()
            / head.min(gen_rows.len()) as f64,
        gen_rows[gen_rows.len() - head.min(gen_rows.len())..]
            .iter()
            .map(|r| r.grad_norm)
            .sum::<f64>()
            / head.min(gen_rows.len()) as f64
    );

    let mut student = OneStepGen::from_teacher(&teacher_model, &schedule);
    for (params, label) in [(&raw_params, "raw"), (&ema_params, "ema")] {
        student.drift.params.copy_from(params).unwrap();
        let z = randn(&[10_000, 2], &mut seed_rng(77));
        let samples = student.generate(&z, &());
        let srows = rows(&samples);
        let stat = mmd(&srows[..500].to_vec(), &held_out);
        let (counts, mean_dist) = mode_stats(&srows, &mix.means());
        println!("{label}: mmd {stat:.5}, mean nearest-center dist {mean_dist:.3}, counts {counts:?}");
    }

    // Teacher reference.
    let field = MlpDrift { model: teacher_model.clone() };
    let z = randn(&[500, 2], &mut seed_rng(78));
    let tsamples = euler_sample(&field, &z, 128, &(), &schedule).unwrap();
    let tstat = mmd(&rows(&tsamples), &held_out);
    let (tcounts, tdist) = mode_stats(&rows(&tsamples), &mix.means());
    println!("teacher(128): mmd {tstat:.5}, mean nearest-center dist {tdist:.3}, counts {tcounts:?}");
    let _ = fake_model;
}
