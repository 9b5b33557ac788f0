//! One function per subcommand. Each writes its outputs (metrics CSV,
//! checkpoints, resolved config, SVG plots) into the run's output
//! directory and returns a short status line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use flowdistill_core::ckpt;
use flowdistill_core::dmd::Generator;
use flowdistill_core::flow::{euler_sample, FlowSchedule, MlpDrift};
use flowdistill_core::metrics::{MetricsSink, Phase};
use flowdistill_core::nn::{DiffModel, MlpConfig, ParamStore};
use flowdistill_core::oracle::{GaussianSpec, MixtureSpec};
use flowdistill_core::pipeline::{
    self, distill_2d, distill_t2t, split_dataset, train_duration, train_t2t, train_teacher_2d,
    DistillConfig, DurationTrainConfig, T2TDistillConfig, T2TTrainConfig, Target2d, TeacherConfig,
};
use flowdistill_core::rng::{randn, seed_rng, stream_rng};
use flowdistill_core::tensor::Tensor;
use flowdistill_core::toytts::t2t::{T2TConfig, T2TModel, T2TStudent};
use flowdistill_core::toytts::{
    self, diversity_eval, duration_sweep, gen_dataset, DurationConfig, DurationModel, Synth,
    ToyTask, ToyTaskConfig,
};

use crate::config::{RunConfig, TaskKind};
use crate::plot;
use crate::CliError;

pub struct Outcome {
    pub summary: String,
}

fn target_2d(cfg: &RunConfig) -> Target2d {
    match cfg.task {
        TaskKind::Gauss2d => Target2d::Gaussian(
            GaussianSpec::new(vec![1.0, -0.5], vec![vec![1.0, 0.35], vec![0.35, 0.6]])
                .expect("built-in target is SPD"),
        ),
        TaskKind::Mixture8 => Target2d::Mixture(MixtureSpec::ring(8, 2.0, 0.25)),
        TaskKind::Toytts => unreachable!("2-D target on a toytts run"),
    }
}

fn toy_task(cfg: &RunConfig) -> ToyTask {
    let mut tc = ToyTaskConfig::default();
    tc.alphabet_size = cfg.alphabet_size;
    tc.token_dim = cfg.token_dim;
    tc.jitter_sigma = cfg.jitter_sigma;
    tc.duration_noise = cfg.duration_noise;
    ToyTask::new(tc, cfg.seed)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("writing {path:?}: {e}")))
}

fn finish_run(
    out: &Path,
    cfg: &RunConfig,
    experiment: &str,
    sink: &MetricsSink,
) -> Result<(), CliError> {
    write(&out.join("resolved.cfg"), &cfg.resolved_text(experiment))?;
    write(&out.join("metrics.csv"), &sink.to_csv())?;
    if !sink.wall_ms.is_empty() {
        write(&out.join("timing.csv"), &sink.timing_csv())?;
    }
    Ok(())
}

fn loss_curve_svg(sink: &MetricsSink, phase: Phase, title: &str) -> String {
    let losses = sink.losses(phase);
    let pts: Vec<(f64, f64)> = losses.iter().enumerate().map(|(i, &l)| (i as f64, l)).collect();
    plot::line_chart(title, "logged step", "loss", &[(phase.as_str(), pts)])
}

fn load_store(path: &Path) -> Result<ParamStore, CliError> {
    ckpt::load(path).map_err(|e| match e {
        ckpt::CkptError::VersionMismatch { found } => CliError::Runtime(format!(
            "checkpoint version mismatch at {path:?}: file has {found}, this build reads {}",
            ckpt::VERSION
        )),
        other => CliError::Runtime(format!("loading {path:?}: {other}")),
    })
}

fn mlp_from_store(cfg: &RunConfig, store: &ParamStore, prefix: &str) -> Result<DiffModel, CliError> {
    let mut model_cfg = MlpConfig::drift(2);
    model_cfg.hidden_width = cfg.teacher_width;
    model_cfg.hidden_layers = cfg.teacher_depth;
    let mut rng = seed_rng(0);
    let mut model = DiffModel::new(model_cfg, &mut rng);
    let sub = store.strip_prefix(prefix);
    model
        .params
        .copy_from(&sub)
        .map_err(|e| CliError::Runtime(format!("checkpoint does not match [teacher] config: {e}")))?;
    Ok(model)
}

fn t2t_from_store(cfg: &RunConfig, store: &ParamStore, prefix: &str) -> Result<T2TModel, CliError> {
    let mut mc = T2TConfig::small(cfg.alphabet_size, cfg.token_dim);
    mc.width = cfg.teacher_width;
    mc.depth = cfg.teacher_depth;
    let mut rng = seed_rng(0);
    let mut model = T2TModel::new(mc, &mut rng);
    let sub = store.strip_prefix(prefix);
    model
        .params
        .copy_from(&sub)
        .map_err(|e| CliError::Runtime(format!("checkpoint does not match [teacher] config: {e}")))?;
    Ok(model)
}

fn rows(t: &Tensor) -> Vec<(f64, f64)> {
    t.data().chunks(2).map(|r| (r[0], r[1])).collect()
}

pub fn train_teacher(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut sink = MetricsSink::new();
    match cfg.task {
        TaskKind::Gauss2d | TaskKind::Mixture8 => {
            let target = target_2d(cfg);
            let tcfg = TeacherConfig {
                steps: cfg.teacher_steps,
                batch: cfg.teacher_batch,
                lr: cfg.teacher_lr,
                ema_decay: cfg.teacher_ema,
                hidden_width: cfg.teacher_width,
                hidden_layers: cfg.teacher_depth,
            };
            let teacher = train_teacher_2d(&target, &tcfg, cfg.seed, &mut sink)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut store = teacher.model.params.with_prefix("raw.");
            for (name, v) in teacher.ema.with_prefix("ema.").iter() {
                store.insert(name, v.clone()).expect("disjoint prefixes");
            }
            ckpt::save(&out.join("teacher.e1ck"), &store)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write(&out.join("loss.svg"), &loss_curve_svg(&sink, Phase::Teacher, "teacher loss"))?;
            finish_run(out, cfg, "train-teacher", &sink)?;
            let last = sink.losses(Phase::Teacher).last().copied().unwrap_or(f64::NAN);
            Ok(Outcome { summary: format!("teacher trained, final loss {last:.4}") })
        }
        TaskKind::Toytts => {
            let task = toy_task(cfg);
            let data = gen_dataset(&task, cfg.dataset_size, cfg.seed ^ 0x5eed);
            write(&out.join("dataset.txt"), &toytts::task::write_dataset(&task, &data))?;
            let (train, _eval) = split_dataset(data, cfg.held_out);

            let mut tcfg = T2TTrainConfig::small(&task);
            tcfg.steps = cfg.teacher_steps;
            tcfg.batch = cfg.teacher_batch;
            tcfg.lr = cfg.teacher_lr;
            tcfg.ema_decay = cfg.teacher_ema;
            tcfg.model.width = cfg.teacher_width;
            tcfg.model.depth = cfg.teacher_depth;
            let teacher = train_t2t(&train, &tcfg, cfg.seed, &mut sink)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut store = teacher.model.params.with_prefix("raw.");
            for (name, v) in teacher.ema.with_prefix("ema.").iter() {
                store.insert(name, v.clone()).expect("disjoint prefixes");
            }
            ckpt::save(&out.join("t2t.e1ck"), &store).map_err(|e| CliError::Runtime(e.to_string()))?;

            let dcfg = DurationTrainConfig::small(&task);
            let duration = train_duration(&train, &dcfg, cfg.seed ^ 0xd0, &mut sink)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            ckpt::save(&out.join("duration.e1ck"), &duration.params)
                .map_err(|e| CliError::Runtime(e.to_string()))?;

            write(&out.join("loss.svg"), &loss_curve_svg(&sink, Phase::Teacher, "infilling loss"))?;
            finish_run(out, cfg, "train-teacher", &sink)?;
            let last = sink.losses(Phase::Teacher).last().copied().unwrap_or(f64::NAN);
            Ok(Outcome { summary: format!("t2t + duration trained, final infilling loss {last:.4}") })
        }
    }
}

pub fn distill(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut sink = MetricsSink::new();
    let teacher_path = PathBuf::from(&cfg.sample_checkpoint);
    let teacher_path = if teacher_path.is_absolute() { teacher_path } else { out.join(&cfg.sample_checkpoint) };
    let store = load_store(&teacher_path)?;
    let dcfg = DistillConfig {
        gen_steps: cfg.distill_steps,
        fake_batch: cfg.distill_fake_batch,
        gen_batch: cfg.distill_gen_batch,
        ttur_ratio: cfg.distill_ttur,
        lr: cfg.distill_lr,
        ema_decay: cfg.distill_ema,
    };
    match cfg.task {
        TaskKind::Gauss2d | TaskKind::Mixture8 => {
            let model = mlp_from_store(cfg, &store, "raw.")?;
            let ema = mlp_from_store(cfg, &store, "ema.")?;
            let teacher = pipeline::TrainedTeacher { model, ema: ema.params.clone() };
            let res = distill_2d(&teacher, &dcfg, cfg.seed, &mut sink)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut all = teacher.ema.with_prefix("teacher.");
            for (name, v) in res.raw_params.with_prefix("generator.").iter() {
                all.insert(name, v.clone()).expect("disjoint prefixes");
            }
            for (name, v) in res.student.drift.params.with_prefix("ema.").iter() {
                all.insert(name, v.clone()).expect("disjoint prefixes");
            }
            ckpt::save(&out.join("student.e1ck"), &all)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write(&out.join("loss.svg"), &loss_curve_svg(&sink, Phase::Fake, "fake-score loss"))?;
            finish_run(out, cfg, "distill", &sink)?;
            Ok(Outcome {
                summary: format!(
                    "distilled: {} generator updates, {} fake updates",
                    res.gen_updates, res.fake_updates
                ),
            })
        }
        TaskKind::Toytts => {
            let task = toy_task(cfg);
            let dataset_text = fs::read_to_string(out.join("dataset.txt"))
                .map_err(|e| CliError::Runtime(format!("reading dataset.txt: {e}")))?;
            let (_task2, data) = toytts::task::read_dataset(&dataset_text)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let (train, _eval) = split_dataset(data, cfg.held_out);
            let model = t2t_from_store(cfg, &store, "raw.")?;
            let ema = t2t_from_store(cfg, &store, "ema.")?;
            let teacher = pipeline::TrainedT2T { model, ema: ema.params.clone() };
            let tdcfg = T2TDistillConfig {
                gen_steps: cfg.distill_steps,
                fake_batch: cfg.distill_fake_batch,
                gen_batch: cfg.distill_gen_batch,
                ttur_ratio: cfg.distill_ttur,
                lr: cfg.distill_lr,
                ema_decay: cfg.distill_ema,
                full_mask_fraction: 0.5,
            };
            let res = distill_t2t(&teacher, &train, &tdcfg, cfg.seed, &mut sink)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut all = teacher.ema.with_prefix("teacher.");
            for (name, v) in res.student.model.params.with_prefix("ema.").iter() {
                all.insert(name, v.clone()).expect("disjoint prefixes");
            }
            ckpt::save(&out.join("student.e1ck"), &all)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write(&out.join("loss.svg"), &loss_curve_svg(&sink, Phase::Fake, "fake-score loss"))?;
            finish_run(out, cfg, "distill", &sink)?;
            let _ = task;
            Ok(Outcome {
                summary: format!(
                    "distilled t2t: {} generator updates, {} fake updates",
                    res.gen_updates, res.fake_updates
                ),
            })
        }
    }
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let sink = MetricsSink::new();
    let path = out.join(&cfg.sample_checkpoint);
    let store = load_store(&path)?;
    match cfg.task {
        TaskKind::Gauss2d | TaskKind::Mixture8 => {
            // Prefer EMA weights; fall back to namespaces produced by distill.
            let (prefix, one_step) = if store.iter().any(|(n, _)| n.starts_with("ema.")) {
                ("ema.", cfg.sample_steps <= 1)
            } else {
                ("teacher.", false)
            };
            let model = mlp_from_store(cfg, &store, prefix)?;
            let mut rng = seed_rng(cfg.seed);
            let z = randn(&[cfg.sample_count, 2], &mut rng);
            let samples = if one_step {
                let gen = flowdistill_core::dmd::OneStepGen {
                    drift: model,
                    t_gen: FlowSchedule::default().t_min,
                };
                gen.generate(&z, &())
            } else {
                let field = MlpDrift { model };
                euler_sample(&field, &z, cfg.sample_steps.max(1), &(), &FlowSchedule::default())
                    .map_err(|e| CliError::Runtime(e.to_string()))?
            };
            let mut csv = String::from("x0,x1\n");
            for (a, b) in rows(&samples) {
                let _ = writeln!(csv, "{a},{b}");
            }
            write(&out.join("samples.csv"), &csv)?;
            let target = target_2d(cfg);
            let mut r2 = stream_rng(cfg.seed, 1);
            let data = target.sample_batch(cfg.sample_count.min(2000), &mut r2);
            write(
                &out.join("samples.svg"),
                &plot::scatter("samples vs target", &[("model", rows(&samples)), ("target", rows(&data))]),
            )?;
            finish_run(out, cfg, "sample", &sink)?;
            Ok(Outcome { summary: format!("{} samples written", cfg.sample_count) })
        }
        TaskKind::Toytts => {
            let task = toy_task(cfg);
            let dataset_text = fs::read_to_string(out.join("dataset.txt"))
                .map_err(|e| CliError::Runtime(format!("reading dataset.txt: {e}")))?;
            let (_t, data) = toytts::task::read_dataset(&dataset_text)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let (_train, eval) = split_dataset(data, cfg.held_out);
            let model = if store.iter().any(|(n, _)| n.starts_with("ema.")) {
                t2t_from_store(cfg, &store, "ema.")?
            } else {
                t2t_from_store(cfg, &store, "raw.")?
            };
            let schedule = FlowSchedule::default();
            let student;
            let synth = if cfg.sample_steps <= 1 {
                student = T2TStudent { model: model.clone(), t_gen: schedule.t_min };
                Synth::Student { gen: &student }
            } else {
                Synth::Teacher { model: &model, steps: cfg.sample_steps, schedule }
            };
            let n = cfg.sample_count.min(eval.len());
            let mut outputs = Vec::with_capacity(n);
            for (i, u) in eval.iter().take(n).enumerate() {
                let tokens = toytts::eval::synthesize(
                    &synth,
                    &u.text,
                    u.total_duration(),
                    task.config.token_dim,
                    cfg.seed,
                    i as u64,
                )
                .map_err(|e| CliError::Runtime(e.to_string()))?;
                outputs.push((tokens, u.text.clone()));
            }
            let ter = toytts::task::token_error_rate(&task, &outputs);
            let mut csv = String::from("item,decoded,reference\n");
            for (i, (tokens, text)) in outputs.iter().enumerate() {
                let dec: Vec<String> = task.decode(tokens).iter().map(|s| s.to_string()).collect();
                let refs: Vec<String> = text.iter().map(|s| s.to_string()).collect();
                let _ = writeln!(csv, "{i},{},{}", dec.join(" "), refs.join(" "));
            }
            write(&out.join("synthesis.csv"), &csv)?;
            finish_run(out, cfg, "sample", &sink)?;
            Ok(Outcome { summary: format!("synthesized {n} texts, token error rate {ter:.4}") })
        }
    }
}

fn load_toytts_eval_stack(
    cfg: &RunConfig,
    out: &Path,
) -> Result<(ToyTask, Vec<toytts::ToyUtterance>, T2TModel, DurationModel), CliError> {
    let task = toy_task(cfg);
    let dataset_text = fs::read_to_string(out.join("dataset.txt"))
        .map_err(|e| CliError::Runtime(format!("reading dataset.txt: {e}")))?;
    let (_t, data) =
        toytts::task::read_dataset(&dataset_text).map_err(|e| CliError::Runtime(e.to_string()))?;
    let (_train, eval) = split_dataset(data, cfg.held_out);

    let store = load_store(&out.join(&cfg.sample_checkpoint))?;
    let model = if store.iter().any(|(n, _)| n.starts_with("ema.")) {
        t2t_from_store(cfg, &store, "ema.")?
    } else {
        t2t_from_store(cfg, &store, "raw.")?
    };

    let dstore = load_store(&out.join(&cfg.duration_checkpoint))?;
    let mut rng = seed_rng(0);
    let mut duration = DurationModel::new(DurationConfig::small(cfg.alphabet_size), &mut rng);
    duration
        .params
        .copy_from(&dstore)
        .map_err(|e| CliError::Runtime(format!("duration checkpoint mismatch: {e}")))?;
    Ok((task, eval, model, duration))
}

pub fn inpaint(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let sink = MetricsSink::new();
    let (task, eval, model, duration) = load_toytts_eval_stack(cfg, out)?;
    let schedule = FlowSchedule::default();
    let student;
    let synth = if cfg.sample_steps <= 1 {
        student = T2TStudent { model: model.clone(), t_gen: schedule.t_min };
        Synth::Student { gen: &student }
    } else {
        Synth::Teacher { model: &model, steps: cfg.sample_steps, schedule }
    };

    let n = cfg.eval_count.min(eval.len());
    let mut outputs = Vec::with_capacity(n);
    let mut context_exact = true;
    for (i, u) in eval.iter().take(n).enumerate() {
        let l = u.text.len();
        let (s, e) = (l / 3, (2 * l) / 3);
        let tokens = toytts::eval::inpaint(&synth, u, (s, e), &u.text[s..e].to_vec(), &duration, cfg.seed, i as u64)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let (tok_s, tok_e) = u.token_range(s, e);
        let d = task.config.token_dim;
        let suffix = u.n_speech() - tok_e;
        let on = tokens.shape()[0];
        for k in 0..tok_s * d {
            if tokens.data()[k].to_bits() != u.tokens.data()[k].to_bits() {
                context_exact = false;
            }
        }
        for k in 0..suffix * d {
            if tokens.data()[on * d - 1 - k].to_bits() != u.tokens.data()[u.n_speech() * d - 1 - k].to_bits() {
                context_exact = false;
            }
        }
        outputs.push((tokens, u.text.clone()));
    }
    let err = toytts::task::token_error_rate(&task, &outputs);
    let mut csv = String::from("item,decode_error\n");
    for (i, (tokens, text)) in outputs.iter().enumerate() {
        let dec = task.decode(tokens);
        let e = toytts::task::edit_distance(&dec, text) as f64 / text.len() as f64;
        let _ = writeln!(csv, "{i},{e}");
    }
    write(&out.join("inpaint.csv"), &csv)?;
    finish_run(out, cfg, "inpaint", &sink)?;
    Ok(Outcome {
        summary: format!(
            "inpainted {n} utterances, decode error {err:.4}, context bit-exact: {context_exact}"
        ),
    })
}

pub fn eval_sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let sink = MetricsSink::new();
    let (task, eval, model, duration) = load_toytts_eval_stack(cfg, out)?;
    let schedule = FlowSchedule::default();
    let student;
    let synth = if cfg.sample_steps <= 1 {
        student = T2TStudent { model: model.clone(), t_gen: schedule.t_min };
        Synth::Student { gen: &student }
    } else {
        Synth::Teacher { model: &model, steps: cfg.sample_steps, schedule }
    };
    let subset = &eval[..cfg.eval_count.min(eval.len())];
    let table = duration_sweep(&synth, &duration, &task, subset, &cfg.sweep_factors, cfg.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut csv = String::from("factor,token_error_rate\n");
    for (f, e) in &table {
        let _ = writeln!(csv, "{f},{e}");
    }
    write(&out.join("sweep.csv"), &csv)?;
    let pts: Vec<(f64, f64)> = table.clone();
    write(
        &out.join("sweep.svg"),
        &plot::line_chart("duration-scale robustness", "factor", "token error rate", &[("error", pts)]),
    )?;
    finish_run(out, cfg, "eval-sweep", &sink)?;
    let row = table
        .iter()
        .map(|(f, e)| format!("{f}:{e:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Outcome { summary: format!("sweep {row}") })
}

pub fn eval_diversity(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let sink = MetricsSink::new();
    let (task, eval, model, duration) = load_toytts_eval_stack(cfg, out)?;
    let _ = duration;
    let schedule = FlowSchedule::default();
    let student;
    let synth = if cfg.sample_steps <= 1 {
        student = T2TStudent { model: model.clone(), t_gen: schedule.t_min };
        Synth::Student { gen: &student }
    } else {
        Synth::Teacher { model: &model, steps: cfg.sample_steps, schedule }
    };
    let u = &eval[0];
    let report = diversity_eval(
        &synth,
        &task,
        &u.text,
        u.total_duration(),
        cfg.diversity_prompt_free,
        cfg.diversity_samples,
        cfg.seed,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let csv = format!(
        "n_samples,token_dtw,duration_dist\n{},{},{}\n",
        cfg.diversity_samples, report.token_dtw, report.duration_dist
    );
    write(&out.join("diversity.csv"), &csv)?;
    finish_run(out, cfg, "eval-diversity", &sink)?;
    Ok(Outcome {
        summary: format!(
            "diversity over {} samples: token DTW {:.4}, duration dist {:.4}",
            cfg.diversity_samples, report.token_dtw, report.duration_dist
        ),
    })
}

pub fn selftest(out: &Path) -> Result<Outcome, CliError> {
    let mut report = String::new();
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool| {
        let _ = writeln!(report, "{} {name}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // Conversion identity on a grid.
    {
        let g = GaussianSpec::new(vec![0.5, -1.0], vec![vec![1.3, 0.4], vec![0.4, 0.9]]).unwrap();
        let schedule = FlowSchedule::default();
        let mut worst: f64 = 0.0;
        for ti in 0..10 {
            let t = 0.05 + 0.1 * ti as f64;
            for xi in 0..10 {
                for yi in 0..10 {
                    let x = [-2.0 + 0.45 * xi as f64, -2.0 + 0.45 * yi as f64];
                    let v = Tensor::from_vec(g.analytic_drift(t, &x).unwrap());
                    let xt = Tensor::from_vec(x.to_vec());
                    let s = flowdistill_core::flow::score_from_drift(&v, &xt, t, &schedule).unwrap();
                    let want = g.perturbed_score(t, &x).unwrap();
                    for (a, b) in s.data().iter().zip(&want) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
        }
        check(&format!("conversion identity (max abs err {worst:.2e})"), worst < 1e-9);
    }

    // Rotary norm preservation and shift invariance.
    {
        let mut r = seed_rng(1);
        let v = randn(&[6, 16], &mut r);
        let idx: Vec<f64> = (0..6).map(|i| 0.37 * i as f64).collect();
        let rot = flowdistill_core::nn::rope_apply(&v, &idx, 10000.0);
        let mut worst: f64 = 0.0;
        for p in 0..6 {
            let a: f64 = v.data()[p * 16..(p + 1) * 16].iter().map(|x| x * x).sum::<f64>().sqrt();
            let b: f64 = rot.data()[p * 16..(p + 1) * 16].iter().map(|x| x * x).sum::<f64>().sqrt();
            worst = worst.max((a - b).abs());
        }
        check(&format!("rope norm preservation (max err {worst:.2e})"), worst < 1e-9);

        let q = randn(&[1, 16], &mut r);
        let k = randn(&[1, 16], &mut r);
        let dot = |a: &Tensor, b: &Tensor| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        let l1 = dot(
            &flowdistill_core::nn::rope_apply(&q, &[1.2], 10000.0),
            &flowdistill_core::nn::rope_apply(&k, &[3.7], 10000.0),
        );
        let l2 = dot(
            &flowdistill_core::nn::rope_apply(&q, &[1.2 + 0.55], 10000.0),
            &flowdistill_core::nn::rope_apply(&k, &[3.7 + 0.55], 10000.0),
        );
        check(&format!("rope shift invariance (err {:.2e})", (l1 - l2).abs()), (l1 - l2).abs() < 1e-6);
    }

    // Fractional index table.
    {
        let p = flowdistill_core::nn::assign_position_indices(2, 4);
        check(
            "fractional position indices (2 text, 4 speech)",
            p.speech_indices == vec![0.0, 0.5, 1.0, 1.5],
        );
    }

    // Gradient check on a small MLP.
    {
        let mut r = seed_rng(2);
        let mut mc = MlpConfig::drift(2);
        mc.hidden_width = 16;
        mc.hidden_layers = 2;
        let model = DiffModel::new(mc, &mut r);
        let x = randn(&[4, 2], &mut r);
        let ts = [0.2, 0.4, 0.6, 0.8];
        let target = randn(&[4, 2], &mut r);
        let (_, grads) = model
            .forward_backward(&x, &ts, |tape, out| tape.mse_const(out, &target))
            .unwrap();
        let fd = flowdistill_core::oracle::finite_diff_grad(
            |p| {
                let probe = DiffModel { config: model.config.clone(), params: p.clone() };
                let out = probe.forward(&x, &ts).unwrap();
                let d = out.sub(&target);
                d.dot(&d) / d.len() as f64
            },
            &model.params,
            1e-5,
        );
        let rel = flowdistill_core::oracle::fd::max_rel_err(&grads, &fd, 1e-6);
        check(&format!("reverse-mode vs finite differences (rel err {rel:.2e})"), rel < 1e-4);
    }

    // Checkpoint round-trip.
    {
        let mut r = seed_rng(3);
        let mut store = ParamStore::new();
        store.insert("w", randn(&[5, 3], &mut r)).unwrap();
        let path = out.join("selftest.e1ck");
        ckpt::save(&path, &store).map_err(|e| CliError::Runtime(e.to_string()))?;
        let back = load_store(&path)?;
        let same = store
            .iter()
            .zip(back.iter())
            .all(|((n1, v1), (n2, v2))| n1 == n2 && v1.data() == v2.data());
        check("checkpoint round-trip", same);
    }

    // Mask sampler statistics (reduced draw count).
    {
        let mut r = seed_rng(4);
        let n = 20_000;
        let mut full = 0;
        for _ in 0..n {
            if toytts::sample_mask(1000, &mut r).is_full() {
                full += 1;
            }
        }
        let rate = full as f64 / n as f64;
        check(&format!("mask sampler full rate ({rate:.4})"), (rate - 0.1009).abs() < 0.008);
    }

    print!("{report}");
    if all_ok {
        Ok(Outcome { summary: "selftest passed".into() })
    } else {
        Err(CliError::Runtime(format!("selftest failures:\n{report}")))
    }
}
