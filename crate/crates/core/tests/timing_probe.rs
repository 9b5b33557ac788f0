//! Manual timing probe for sizing training runs. Ignored by default:
//! `cargo test --release -p flowdistill-core --test timing_probe -- --ignored --nocapture`

use std::time::Instant;

use flowdistill_core::flow::{euler_sample, rf_fit_step, FlowSchedule, MlpDrift, TimeSampler};
use flowdistill_core::nn::{AdamW, DiffModel, MlpConfig};
use flowdistill_core::rng::{randn, seed_rng};
use flowdistill_core::toytts::t2t::{t2t_train_step, T2TConfig, T2TModel};
use flowdistill_core::toytts::{gen_dataset, sample_mask, ToyTask, ToyTaskConfig};

#[test]
#[ignore]
fn timing_probe() {
    let schedule = FlowSchedule::default();
    let sampler = TimeSampler::uniform(&schedule);
    let mut r = seed_rng(1);

    // 2-D drift MLP training step.
    let mut model = DiffModel::new(MlpConfig::drift(2), &mut r);
    let mut opt = AdamW::new(&model.params, 1e-4);
    println!("mlp params: {}", model.params.num_values());
    let x1 = randn(&[256, 2], &mut r);
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        rf_fit_step(&mut model, &mut opt, &x1, &sampler, &mut r).unwrap();
    }
    println!("rf_fit_step b=256: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // Euler(128) on a 10k x 2 batch.
    let field = MlpDrift { model: model.clone() };
    let z = randn(&[10_000, 2], &mut r);
    let t0 = Instant::now();
    euler_sample(&field, &z, 128, &(), &schedule).unwrap();
    println!("euler 128 steps on 10k points: {:.2} s", t0.elapsed().as_secs_f64());

    // T2T training step at the default small config.
    let task = ToyTask::new(ToyTaskConfig::default(), 7);
    let data = gen_dataset(&task, 64, 2);
    for (w, depth) in [(48, 2), (64, 2), (64, 3)] {
        let mut cfg = T2TConfig::small(16, 8);
        cfg.width = w;
        cfg.depth = depth;
        let mut t2t = T2TModel::new(cfg, &mut r);
        println!("t2t w={w} d={depth} params: {}", t2t.params.num_values());
        let mut opt = AdamW::new(&t2t.params, 1e-4);
        for bs in [8usize, 16] {
            let batch: Vec<_> = data
                .iter()
                .take(bs)
                .map(|u| (u, sample_mask(u.n_speech(), &mut r)))
                .collect();
            let t0 = Instant::now();
            let reps = 5;
            for _ in 0..reps {
                t2t_train_step(&mut t2t, &mut opt, &batch, &sampler, &mut r).unwrap();
            }
            println!(
                "t2t_train_step w={w} d={depth} b={bs}: {:.1} ms",
                t0.elapsed().as_secs_f64() * 1e3 / reps as f64
            );
        }
    }
}
