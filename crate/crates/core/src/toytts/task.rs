//! Task definition, dataset generation, decoding, and the dataset file
//! format.
//!
//! Durations are a near-deterministic function of the text (a bigram rule
//! over symbol values, occasionally replaced by a uniform draw) so a
//! context-conditioned predictor has something to learn, while the
//! marginal duration histogram stays uniform over the repeat range.
//! Texts never repeat a symbol twice in a row, so nearest-codeword
//! decoding plus run collapsing recovers the text exactly when the jitter
//! is small against the codeword separation.

use rand::Rng;

use crate::par;
use crate::rng::{normal, stream_rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyTaskConfig {
    pub alphabet_size: usize,
    pub token_dim: usize,
    pub repeat_min: usize,
    pub repeat_max: usize,
    pub jitter_sigma: f64,
    pub len_min: usize,
    pub len_max: usize,
    /// Probability that a symbol's duration ignores the bigram rule and is
    /// drawn uniformly instead.
    pub duration_noise: f64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 16,
            token_dim: 8,
            repeat_min: 1,
            repeat_max: 3,
            jitter_sigma: 0.05,
            len_min: 4,
            len_max: 12,
            duration_noise: 0.06,
        }
    }
}

/// Task instance: config plus the codebook derived from `codebook_seed`.
#[derive(Clone, Debug)]
pub struct ToyTask {
    pub config: ToyTaskConfig,
    pub codebook_seed: u64,
    codebook: Vec<Vec<f64>>,
}

const MAX_PAIRWISE_COS: f64 = 0.8;

impl ToyTask {
    /// Sample unit-norm codewords until every pair has |cosine| below the
    /// separation bound.
    pub fn new(config: ToyTaskConfig, codebook_seed: u64) -> Self {
        assert!(config.repeat_min >= 1, "repeats must be at least 1");
        assert!(config.repeat_min <= config.repeat_max);
        assert!(config.len_min >= 1 && config.len_min <= config.len_max);
        assert!(config.alphabet_size >= 2);
        let mut rng = stream_rng(codebook_seed, u64::MAX);
        let codebook = loop {
            let cand: Vec<Vec<f64>> = (0..config.alphabet_size)
                .map(|_| {
                    let mut v: Vec<f64> = (0..config.token_dim).map(|_| normal(&mut rng)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter_mut().for_each(|x| *x /= n);
                    v
                })
                .collect();
            let mut ok = true;
            'outer: for i in 0..cand.len() {
                for j in i + 1..cand.len() {
                    let cos: f64 = cand[i].iter().zip(&cand[j]).map(|(a, b)| a * b).sum();
                    if cos.abs() >= MAX_PAIRWISE_COS {
                        ok = false;
                        break 'outer;
                    }
                }
            }
            if ok {
                break cand;
            }
        };
        Self { config, codebook_seed, codebook }
    }

    pub fn codebook(&self) -> &[Vec<f64>] {
        &self.codebook
    }

    /// The bigram duration rule before noise: repeat_min plus
    /// (s_i + s_{i-1}) mod span, with s_{-1} = 0.
    pub fn rule_duration(&self, text: &[u16], i: usize) -> usize {
        let span = self.config.repeat_max - self.config.repeat_min + 1;
        let prev = if i == 0 { 0 } else { text[i - 1] as usize };
        self.config.repeat_min + ((text[i] as usize + prev) % span)
    }

    pub fn sample_text(&self, rng: &mut impl Rng) -> Vec<u16> {
        let k = self.config.alphabet_size as u16;
        let len = rng.gen_range(self.config.len_min..=self.config.len_max);
        let mut text = Vec::with_capacity(len);
        for i in 0..len {
            loop {
                let s = rng.gen_range(0..k);
                if i == 0 || text[i - 1] != s {
                    text.push(s);
                    break;
                }
            }
        }
        text
    }

    pub fn sample_durations(&self, text: &[u16], rng: &mut impl Rng) -> Vec<usize> {
        (0..text.len())
            .map(|i| {
                if rng.gen::<f64>() < self.config.duration_noise {
                    rng.gen_range(self.config.repeat_min..=self.config.repeat_max)
                } else {
                    self.rule_duration(text, i)
                }
            })
            .collect()
    }

    /// Repeat each symbol's codeword for its duration and add jitter.
    pub fn render_tokens(&self, text: &[u16], durations: &[usize], rng: &mut impl Rng) -> Tensor {
        let d = self.config.token_dim;
        let n_speech: usize = durations.iter().sum();
        let mut data = Vec::with_capacity(n_speech * d);
        for (&s, &dur) in text.iter().zip(durations) {
            for _ in 0..dur {
                for &c in &self.codebook[s as usize] {
                    data.push(c + self.config.jitter_sigma * normal(rng));
                }
            }
        }
        Tensor::new(vec![n_speech, d], data)
    }

    pub fn sample_utterance(&self, rng: &mut impl Rng) -> ToyUtterance {
        let text = self.sample_text(rng);
        let durations = self.sample_durations(&text, rng);
        let tokens = self.render_tokens(&text, &durations, rng);
        ToyUtterance { text, durations, tokens }
    }

    /// Nearest-codeword label per token row.
    pub fn labels(&self, tokens: &Tensor) -> Vec<u16> {
        let d = self.config.token_dim;
        tokens
            .data()
            .chunks(d)
            .map(|row| {
                let mut best = 0u16;
                let mut best_d = f64::INFINITY;
                for (s, c) in self.codebook.iter().enumerate() {
                    let dist: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if dist < best_d {
                        best_d = dist;
                        best = s as u16;
                    }
                }
                best
            })
            .collect()
    }

    /// Nearest-codeword decode with run collapsing.
    pub fn decode(&self, tokens: &Tensor) -> Vec<u16> {
        let labels = self.labels(tokens);
        let mut out = Vec::new();
        for &l in &labels {
            if out.last() != Some(&l) {
                out.push(l);
            }
        }
        out
    }

    /// Per-symbol durations implied by the decoded labels: run lengths,
    /// padded with zeros or truncated to the reference length.
    pub fn decoded_durations(&self, tokens: &Tensor, n_text: usize) -> Vec<f64> {
        let labels = self.labels(tokens);
        let mut runs: Vec<f64> = Vec::new();
        let mut prev: Option<u16> = None;
        for &l in &labels {
            if prev == Some(l) {
                *runs.last_mut().unwrap() += 1.0;
            } else {
                runs.push(1.0);
                prev = Some(l);
            }
        }
        runs.resize(n_text, 0.0);
        runs
    }
}

/// A (text, durations, tokens) triple with alignment known by construction;
/// n_speech = sum of durations.
#[derive(Clone, Debug)]
pub struct ToyUtterance {
    pub text: Vec<u16>,
    pub durations: Vec<usize>,
    pub tokens: Tensor,
}

impl ToyUtterance {
    pub fn n_speech(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn total_duration(&self) -> usize {
        self.durations.iter().sum()
    }

    /// Token-row range covered by the text span [sym_start, sym_end).
    pub fn token_range(&self, sym_start: usize, sym_end: usize) -> (usize, usize) {
        let before: usize = self.durations[..sym_start].iter().sum();
        let within: usize = self.durations[sym_start..sym_end].iter().sum();
        (before, before + within)
    }
}

/// i.i.d. utterances, one derived RNG stream per item, so the dataset is
/// identical no matter how generation is scheduled.
pub fn gen_dataset(task: &ToyTask, n: usize, seed: u64) -> Vec<ToyUtterance> {
    par::map_indexed(n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        task.sample_utterance(&mut rng)
    })
}

/// Levenshtein distance between symbol sequences.
pub fn edit_distance(a: &[u16], b: &[u16]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ai) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Mean normalized edit distance between decoded outputs and reference
/// texts (the word-error-rate analog of this task).
pub fn token_error_rate(task: &ToyTask, outputs: &[(Tensor, Vec<u16>)]) -> f64 {
    let total: f64 = outputs
        .iter()
        .map(|(tokens, text)| {
            let decoded = task.decode(tokens);
            edit_distance(&decoded, text) as f64 / text.len() as f64
        })
        .sum();
    total / outputs.len() as f64
}

// ---- dataset file format ----

/// Serialize as newline-delimited records under a two-line header. Record
/// fields: comma-joined symbols, comma-joined durations, hex-encoded f64
/// little-endian token payload, tab-separated.
pub fn write_dataset(task: &ToyTask, data: &[ToyUtterance]) -> String {
    let c = &task.config;
    let mut out = String::from("#E1TS v1\n");
    out.push_str(&format!(
        "#task alphabet_size={} token_dim={} repeat_min={} repeat_max={} jitter_sigma={} len_min={} len_max={} duration_noise={} seed={}\n",
        c.alphabet_size, c.token_dim, c.repeat_min, c.repeat_max, c.jitter_sigma,
        c.len_min, c.len_max, c.duration_noise, task.codebook_seed
    ));
    for u in data {
        let text: Vec<String> = u.text.iter().map(|s| s.to_string()).collect();
        let durs: Vec<String> = u.durations.iter().map(|d| d.to_string()).collect();
        let mut hex = String::with_capacity(u.tokens.len() * 16);
        for x in u.tokens.data() {
            for b in x.to_le_bytes() {
                hex.push_str(&format!("{b:02x}"));
            }
        }
        out.push_str(&format!("{}\t{}\t{}\n", text.join(","), durs.join(","), hex));
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("bad dataset header: {0}")]
    BadHeader(String),
    #[error("bad record at line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

pub fn read_dataset(text: &str) -> Result<(ToyTask, Vec<ToyUtterance>), DatasetError> {
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != "#E1TS v1" {
        return Err(DatasetError::BadHeader(format!("unexpected first line `{magic}`")));
    }
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("#task "))
        .ok_or_else(|| DatasetError::BadHeader("missing #task line".into()))?;

    let mut cfg = ToyTaskConfig::default();
    let mut seed = 0u64;
    for kv in header.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| DatasetError::BadHeader(format!("bad pair `{kv}`")))?;
        let parse_err = |_| DatasetError::BadHeader(format!("bad value for `{k}`"));
        match k {
            "alphabet_size" => cfg.alphabet_size = v.parse().map_err(parse_err)?,
            "token_dim" => cfg.token_dim = v.parse().map_err(parse_err)?,
            "repeat_min" => cfg.repeat_min = v.parse().map_err(parse_err)?,
            "repeat_max" => cfg.repeat_max = v.parse().map_err(parse_err)?,
            "jitter_sigma" => cfg.jitter_sigma = v.parse().map_err(|_| DatasetError::BadHeader(format!("bad value for `{k}`")))?,
            "len_min" => cfg.len_min = v.parse().map_err(parse_err)?,
            "len_max" => cfg.len_max = v.parse().map_err(parse_err)?,
            "duration_noise" => cfg.duration_noise = v.parse().map_err(|_| DatasetError::BadHeader(format!("bad value for `{k}`")))?,
            "seed" => seed = v.parse().map_err(parse_err)?,
            other => return Err(DatasetError::BadHeader(format!("unknown key `{other}`"))),
        }
    }
    let task = ToyTask::new(cfg, seed);
    let d = task.config.token_dim;

    let mut data = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| DatasetError::BadRecord { line: lineno + 3, reason: reason.into() };
        let mut fields = line.split('\t');
        let text: Vec<u16> = fields
            .next()
            .ok_or_else(|| bad("missing text"))?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad symbol")))
            .collect::<Result<_, _>>()?;
        let durations: Vec<usize> = fields
            .next()
            .ok_or_else(|| bad("missing durations"))?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad duration")))
            .collect::<Result<_, _>>()?;
        let hex = fields.next().ok_or_else(|| bad("missing tokens"))?;
        if hex.len() % 16 != 0 {
            return Err(bad("token payload not a whole number of f64"));
        }
        let mut values = Vec::with_capacity(hex.len() / 16);
        for chunk in hex.as_bytes().chunks(16) {
            let mut bytes = [0u8; 8];
            for (i, pair) in chunk.chunks(2).enumerate() {
                let s = std::str::from_utf8(pair).map_err(|_| bad("bad hex"))?;
                bytes[i] = u8::from_str_radix(s, 16).map_err(|_| bad("bad hex"))?;
            }
            values.push(f64::from_le_bytes(bytes));
        }
        let n_speech: usize = durations.iter().sum();
        if values.len() != n_speech * d {
            return Err(bad("token payload does not match durations"));
        }
        data.push(ToyUtterance {
            text,
            durations,
            tokens: Tensor::new(vec![n_speech, d], values),
        });
    }
    Ok((task, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    #[test]
    fn noiseless_tokens_decode_exactly() {
        let mut cfg = ToyTaskConfig::default();
        cfg.jitter_sigma = 0.0;
        let task = ToyTask::new(cfg, 7);
        let data = gen_dataset(&task, 50, 3);
        for u in &data {
            assert_eq!(task.decode(&u.tokens), u.text);
            assert_eq!(u.n_speech(), u.total_duration());
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let task = ToyTask::new(ToyTaskConfig::default(), 7);
        let a = gen_dataset(&task, 20, 5);
        let b = gen_dataset(&task, 20, 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text);
            assert_eq!(x.durations, y.durations);
            assert_eq!(x.tokens, y.tokens);
        }
    }

    #[test]
    fn codebook_is_separated_and_unit_norm() {
        let task = ToyTask::new(ToyTaskConfig::default(), 7);
        let cb = task.codebook();
        for (i, a) in cb.iter().enumerate() {
            let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            for b in &cb[i + 1..] {
                let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!(cos.abs() < 0.8);
            }
        }
    }

    #[test]
    fn duration_histogram_is_uniform() {
        let task = ToyTask::new(ToyTaskConfig::default(), 7);
        let data = gen_dataset(&task, 10_000, 11);
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for u in &data {
            for &d in &u.durations {
                counts[d - 1] += 1;
                total += 1;
            }
        }
        // Chi-square against uniform on {1,2,3}, threshold at p = 0.01
        // (df = 2 -> 9.21).
        let expected = total as f64 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 9.21, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn durations_are_mostly_text_predictable() {
        let task = ToyTask::new(ToyTaskConfig::default(), 7);
        let data = gen_dataset(&task, 2000, 13);
        let mut rule_hits = 0usize;
        let mut total = 0usize;
        for u in &data {
            for i in 0..u.text.len() {
                if u.durations[i] == task.rule_duration(&u.text, i) {
                    rule_hits += 1;
                }
                total += 1;
            }
        }
        let frac = rule_hits as f64 / total as f64;
        // duration_noise = 0.06, and a noisy draw still hits the rule value
        // a third of the time: expected fraction ~ 0.96.
        assert!(frac > 0.93 && frac < 0.99, "rule fraction {frac}");
    }

    #[test]
    fn no_adjacent_symbol_repeats() {
        let task = ToyTask::new(ToyTaskConfig::default(), 7);
        for u in gen_dataset(&task, 200, 17) {
            for w in u.text.windows(2) {
                assert_ne!(w[0], w[1]);
            }
        }
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(edit_distance(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&[1, 2], &[2, 1]), 2);
    }

    #[test]
    fn dataset_roundtrip() {
        let task = ToyTask::new(ToyTaskConfig::default(), 7);
        let data = gen_dataset(&task, 10, 23);
        let text = write_dataset(&task, &data);
        let (task2, data2) = read_dataset(&text).unwrap();
        assert_eq!(task.config, task2.config);
        assert_eq!(task.codebook(), task2.codebook());
        assert_eq!(data.len(), data2.len());
        for (a, b) in data.iter().zip(&data2) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.durations, b.durations);
            for (x, y) in a.tokens.data().iter().zip(b.tokens.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn decoded_durations_recover_alignment_for_clean_tokens() {
        let mut cfg = ToyTaskConfig::default();
        cfg.jitter_sigma = 0.0;
        let task = ToyTask::new(cfg, 7);
        let mut r = seed_rng(31);
        let u = task.sample_utterance(&mut r);
        let durs = task.decoded_durations(&u.tokens, u.text.len());
        for (a, &b) in durs.iter().zip(&u.durations) {
            assert_eq!(*a, b as f64);
        }
    }
}
