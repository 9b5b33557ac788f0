//! Inference pipelines (synthesis, inpainting) and the robustness and
//! diversity evaluation protocols.

use super::duration::DurationModel;
use super::mask::MaskSpec;
use super::t2t::{T2TCond, T2TDrift, T2TModel, T2TStudent};
use super::task::{token_error_rate, ToyTask, ToyUtterance};
use crate::flow::{euler_sample, FlowError, FlowSchedule};
use crate::oracle::dtw::mean_pairwise_dtw;
use crate::rng::{randn, stream_rng};
use crate::tensor::Tensor;
use crate::{dmd, par};

/// Which sampler fills a masked span: the iterative teacher or the
/// one-step student.
pub enum Synth<'a> {
    Teacher { model: &'a T2TModel, steps: usize, schedule: FlowSchedule },
    Student { gen: &'a T2TStudent },
}

impl Synth<'_> {
    /// Fill the masked span of `cond` starting from the given noise.
    pub fn sample(&self, z: &Tensor, cond: &T2TCond) -> Result<Tensor, FlowError> {
        match self {
            Synth::Teacher { model, steps, schedule } => {
                let drift = T2TDrift { model };
                euler_sample(&drift, z, *steps, cond, schedule)
            }
            Synth::Student { gen } => Ok(dmd::one_step_generate(*gen, z, cond)),
        }
    }
}

/// Full-mask generation: noise tokens of the requested length conditioned
/// on the text. Output length equals `total_duration` exactly.
pub fn synthesize(
    synth: &Synth,
    text: &[u16],
    total_duration: usize,
    token_dim: usize,
    seed: u64,
    stream: u64,
) -> Result<Tensor, FlowError> {
    assert!(total_duration >= 1);
    let cond = T2TCond::full(text.to_vec(), total_duration, token_dim);
    let mut rng = stream_rng(seed, stream);
    let z = randn(&[total_duration, token_dim], &mut rng);
    synth.sample(&z, &cond)
}

/// Text-based editing: replace the symbols of `edit` (a half-open span of
/// the utterance text) with `new_text`, keep unedited durations from the
/// known alignment, fill edited durations from the duration model, hold
/// prefix/suffix tokens fixed as clean conditioning, and regenerate only
/// the middle. An empty edit with empty replacement returns the original
/// tokens.
pub fn inpaint(
    synth: &Synth,
    utterance: &ToyUtterance,
    edit: (usize, usize),
    new_text: &[u16],
    duration_model: &DurationModel,
    seed: u64,
    stream: u64,
) -> Result<Tensor, FlowError> {
    let (sym_start, sym_end) = edit;
    assert!(sym_start <= sym_end && sym_end <= utterance.text.len(), "bad edit span");
    if new_text.is_empty() && sym_start == sym_end {
        return Ok(utterance.tokens.clone());
    }

    let mut text: Vec<u16> = Vec::new();
    text.extend_from_slice(&utterance.text[..sym_start]);
    text.extend_from_slice(new_text);
    text.extend_from_slice(&utterance.text[sym_end..]);
    assert!(!text.is_empty(), "edit removed the whole text");

    // Durations: ground-truth alignment outside the edit, model inside.
    let mut observed: Vec<Option<usize>> = Vec::with_capacity(text.len());
    observed.extend(utterance.durations[..sym_start].iter().map(|&d| Some(d)));
    observed.extend(std::iter::repeat(None).take(new_text.len()));
    observed.extend(utterance.durations[sym_end..].iter().map(|&d| Some(d)));
    let durations = duration_model.assemble(&text, &observed);

    let d = utterance.tokens.shape()[1];
    let (tok_start, tok_end) = utterance.token_range(sym_start, sym_end);
    let prefix_len = tok_start;
    let suffix_len = utterance.n_speech() - tok_end;
    let middle_len: usize = durations[sym_start..sym_start + new_text.len()].iter().sum();
    let n_speech = prefix_len + middle_len + suffix_len;

    let mut canvas = Tensor::zeros(&[n_speech, d]);
    canvas.data_mut()[..prefix_len * d].copy_from_slice(&utterance.tokens.data()[..tok_start * d]);
    canvas.data_mut()[(prefix_len + middle_len) * d..]
        .copy_from_slice(&utterance.tokens.data()[tok_end * d..]);

    if middle_len == 0 {
        // Pure deletion: nothing to generate, splice the context.
        return Ok(canvas);
    }

    let cond = T2TCond {
        text,
        mask: MaskSpec::middle(prefix_len, middle_len, n_speech),
        clean: canvas.clone(),
    };
    let mut rng = stream_rng(seed, stream);
    let z = randn(&[middle_len, d], &mut rng);
    let filled = synth.sample(&z, &cond)?;

    canvas.data_mut()[prefix_len * d..(prefix_len + middle_len) * d]
        .copy_from_slice(filled.data());
    Ok(canvas)
}

/// Scale the predicted total duration by each factor, synthesize, and
/// report the token error rate per factor. Totals round to the nearest
/// integer with a floor of the text length.
pub fn duration_sweep(
    synth: &Synth,
    duration_model: &DurationModel,
    task: &ToyTask,
    test_set: &[ToyUtterance],
    factors: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>, FlowError> {
    assert!(factors.iter().all(|f| (0.5..=1.5).contains(f)), "factors outside [0.5, 1.5]");
    let mut table = Vec::with_capacity(factors.len());
    for (fi, &factor) in factors.iter().enumerate() {
        let outputs: Vec<Result<(Tensor, Vec<u16>), FlowError>> =
            par::map_indexed(test_set.len(), |i| {
                let u = &test_set[i];
                let predicted = duration_model.predict_total(&u.text);
                let total = ((factor * predicted).round() as i64).max(u.text.len() as i64) as usize;
                let stream = (fi * test_set.len() + i) as u64;
                let tokens =
                    synthesize(synth, &u.text, total, task.config.token_dim, seed, stream)?;
                Ok((tokens, u.text.clone()))
            });
        let outputs: Vec<(Tensor, Vec<u16>)> = outputs.into_iter().collect::<Result<_, _>>()?;
        table.push((factor, token_error_rate(task, &outputs)));
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug)]
pub struct DiversityReport {
    /// Mean pairwise DTW distance between generated token sequences.
    pub token_dtw: f64,
    /// Mean pairwise Euclidean distance between decoded per-symbol
    /// duration vectors.
    pub duration_dist: f64,
}

/// Generate `n_samples` for one fixed text with distinct noise seeds and
/// report mean pairwise distances. With `prompt_free` the whole sequence
/// is generated; otherwise the first third of a reference generation is
/// held fixed as clean context across samples (the prompted analog).
pub fn diversity_eval(
    synth: &Synth,
    task: &ToyTask,
    text: &[u16],
    total_duration: usize,
    prompt_free: bool,
    n_samples: usize,
    seed: u64,
) -> Result<DiversityReport, FlowError> {
    assert!(n_samples >= 2);
    let d = task.config.token_dim;

    let conds: Vec<T2TCond> = if prompt_free {
        vec![T2TCond::full(text.to_vec(), total_duration, d); 1]
    } else {
        let reference = synthesize(synth, text, total_duration, d, seed, u64::MAX - 1)?;
        let prompt_len = (total_duration / 3).max(1).min(total_duration - 1);
        vec![T2TCond {
            text: text.to_vec(),
            mask: MaskSpec::middle(prompt_len, total_duration - prompt_len, total_duration),
            clean: reference,
        }]
    };
    let cond = &conds[0];

    let samples: Vec<Result<Tensor, FlowError>> = par::map_indexed(n_samples, |k| {
        let mut rng = stream_rng(seed, k as u64);
        let z = randn(&[cond.mask.len, d], &mut rng);
        let filled = synth.sample(&z, cond)?;
        if cond.mask.is_full() {
            Ok(filled)
        } else {
            let mut canvas = cond.clean.clone();
            canvas.data_mut()[cond.mask.start * d..cond.mask.end() * d]
                .copy_from_slice(filled.data());
            Ok(canvas)
        }
    });
    let samples: Vec<Tensor> = samples.into_iter().collect::<Result<_, _>>()?;

    let seqs: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|s| s.data().chunks(d).map(|r| r.to_vec()).collect())
        .collect();
    let token_dtw = mean_pairwise_dtw(&seqs);

    let dur_vecs: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| task.decoded_durations(s, text.len()))
        .collect();
    let mut dur_acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..dur_vecs.len() {
        for j in i + 1..dur_vecs.len() {
            let dist: f64 = dur_vecs[i]
                .iter()
                .zip(&dur_vecs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dur_acc += dist;
            pairs += 1;
        }
    }
    Ok(DiversityReport { token_dtw, duration_dist: dur_acc / pairs as f64 })
}
