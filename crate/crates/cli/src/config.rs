//! Flat sectioned key = value configuration.
//!
//! Grammar (documented in the README): `[section]` headers, `key = value`
//! pairs, `#` comments, blank lines. Every key must belong to the known
//! schema; unknown sections or keys are rejected. Command-line overrides
//! use dotted keys: `--set section.key=value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown key `{section}.{key}`")]
    UnknownKey { section: String, key: String },
    #[error("bad value for `{section}.{key}`: `{value}` ({expected})")]
    BadValue {
        section: String,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("bad override `{0}` (expected section.key=value)")]
    BadOverride(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

/// Raw parsed pairs, last write wins.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    values: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out = Self::default();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                    line: i + 1,
                    reason: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                reason: format!("expected key = value, got `{line}`"),
            })?;
            if section.is_empty() {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    reason: "key before any [section] header".into(),
                });
            }
            out.values
                .insert((section.clone(), key.trim().to_string()), value.trim().to_string());
        }
        Ok(out)
    }

    /// Apply one `section.key=value` override.
    pub fn set_dotted(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
        self.values.insert(
            (section.trim().to_string(), key.trim().to_string()),
            value.trim().to_string(),
        );
        Ok(())
    }
}

/// Tracks consumption so leftovers can be rejected.
pub struct ConfigReader {
    raw: RawConfig,
    consumed: Vec<(String, String)>,
}

impl ConfigReader {
    pub fn new(raw: RawConfig) -> Self {
        Self { raw, consumed: Vec::new() }
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        let k = (section.to_string(), key.to_string());
        let v = self.raw.values.get(&k).cloned();
        if v.is_some() {
            self.consumed.push(k);
        }
        v
    }

    pub fn get_u64(&mut self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                section: section.into(),
                key: key.into(),
                value: v,
                expected: "unsigned integer",
            }),
        }
    }

    pub fn get_usize(&mut self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.get_u64(section, key, default as u64)? as usize)
    }

    pub fn get_f64(&mut self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                section: section.into(),
                key: key.into(),
                value: v,
                expected: "real number",
            }),
        }
    }

    pub fn get_string(&mut self, section: &str, key: &str, default: &str) -> String {
        self.take(section, key).unwrap_or_else(|| default.to_string())
    }

    pub fn get_f64_list(
        &mut self,
        section: &str,
        key: &str,
        default: &[f64],
    ) -> Result<Vec<f64>, ConfigError> {
        match self.take(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| ConfigError::BadValue {
                    section: section.into(),
                    key: key.into(),
                    value: v,
                    expected: "comma-separated reals",
                }),
        }
    }

    /// Every key must have been consumed by now.
    pub fn finish(self) -> Result<(), ConfigError> {
        for (section, key) in self.raw.values.keys() {
            if !self.consumed.contains(&(section.clone(), key.clone())) {
                return Err(ConfigError::UnknownKey { section: section.clone(), key: key.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Gauss2d,
    Mixture8,
    Toytts,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Gauss2d => "gauss2d",
            TaskKind::Mixture8 => "mixture8",
            TaskKind::Toytts => "toytts",
        }
    }
}

/// Fully resolved run configuration; every run writes this next to its
/// outputs.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub task: TaskKind,
    // toytts task parameters
    pub alphabet_size: usize,
    pub token_dim: usize,
    pub jitter_sigma: f64,
    pub duration_noise: f64,
    pub dataset_size: usize,
    pub held_out: usize,
    // teacher training
    pub teacher_steps: usize,
    pub teacher_batch: usize,
    pub teacher_lr: f64,
    pub teacher_ema: f64,
    pub teacher_width: usize,
    pub teacher_depth: usize,
    // distillation
    pub distill_steps: usize,
    pub distill_fake_batch: usize,
    pub distill_gen_batch: usize,
    pub distill_ttur: usize,
    pub distill_lr: f64,
    pub distill_ema: f64,
    // sampling / evaluation
    pub sample_count: usize,
    pub sample_steps: usize,
    pub sample_checkpoint: String,
    pub duration_checkpoint: String,
    pub sweep_factors: Vec<f64>,
    pub diversity_samples: usize,
    pub diversity_prompt_free: bool,
    pub eval_count: usize,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut r = ConfigReader::new(raw);
        let task = match r.get_string("task", "kind", "mixture8").as_str() {
            "gauss2d" => TaskKind::Gauss2d,
            "mixture8" => TaskKind::Mixture8,
            "toytts" => TaskKind::Toytts,
            other => {
                return Err(ConfigError::BadValue {
                    section: "task".into(),
                    key: "kind".into(),
                    value: other.into(),
                    expected: "gauss2d | mixture8 | toytts",
                })
            }
        };
        let toy = task == TaskKind::Toytts;
        let cfg = Self {
            seed: r.get_u64("run", "seed", 42)?,
            out_dir: r.get_string("run", "out_dir", "run-out"),
            task,
            alphabet_size: r.get_usize("task", "alphabet_size", 16)?,
            token_dim: r.get_usize("task", "token_dim", 8)?,
            jitter_sigma: r.get_f64("task", "jitter_sigma", 0.05)?,
            duration_noise: r.get_f64("task", "duration_noise", 0.06)?,
            dataset_size: r.get_usize("task", "dataset_size", 4200)?,
            held_out: r.get_usize("task", "held_out", 200)?,
            teacher_steps: r.get_usize("teacher", "steps", if toy { 9000 } else { 8000 })?,
            teacher_batch: r.get_usize("teacher", "batch", if toy { 16 } else { 256 })?,
            teacher_lr: r.get_f64("teacher", "lr", 1e-4)?,
            teacher_ema: r.get_f64("teacher", "ema_decay", if toy { 0.999 } else { 0.9999 })?,
            teacher_width: r.get_usize("teacher", "width", if toy { 64 } else { 128 })?,
            teacher_depth: r.get_usize("teacher", "depth", if toy { 2 } else { 4 })?,
            distill_steps: r.get_usize("distill", "gen_steps", if toy { 900 } else { 1500 })?,
            distill_fake_batch: r.get_usize("distill", "fake_batch", if toy { 8 } else { 128 })?,
            distill_gen_batch: r.get_usize("distill", "gen_batch", if toy { 8 } else { 128 })?,
            distill_ttur: r.get_usize("distill", "ttur_ratio", 10)?,
            distill_lr: r.get_f64("distill", "lr", 1e-4)?,
            distill_ema: r.get_f64("distill", "ema_decay", 0.999)?,
            sample_count: r.get_usize("sample", "count", 1000)?,
            sample_steps: r.get_usize("sample", "steps", 128)?,
            sample_checkpoint: r.get_string("sample", "checkpoint", "teacher.e1ck"),
            duration_checkpoint: r.get_string("sample", "duration_checkpoint", "duration.e1ck"),
            sweep_factors: r.get_f64_list("sweep", "factors", &[0.7, 0.85, 1.0, 1.15, 1.3])?,
            diversity_samples: r.get_usize("diversity", "n_samples", 100)?,
            diversity_prompt_free: r.get_string("diversity", "prompt_free", "true") == "true",
            eval_count: r.get_usize("eval", "count", 200)?,
        };
        r.finish()?;
        Ok(cfg)
    }

    /// Serialize back in the same grammar, fully resolved.
    pub fn resolved_text(&self, experiment: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "experiment = {experiment}");
        let _ = writeln!(s, "out_dir = {}", self.out_dir);
        let _ = writeln!(s, "\n[task]");
        let _ = writeln!(s, "kind = {}", self.task.as_str());
        if self.task == TaskKind::Toytts {
            let _ = writeln!(s, "alphabet_size = {}", self.alphabet_size);
            let _ = writeln!(s, "token_dim = {}", self.token_dim);
            let _ = writeln!(s, "jitter_sigma = {}", self.jitter_sigma);
            let _ = writeln!(s, "duration_noise = {}", self.duration_noise);
            let _ = writeln!(s, "dataset_size = {}", self.dataset_size);
            let _ = writeln!(s, "held_out = {}", self.held_out);
        }
        let _ = writeln!(s, "\n[teacher]");
        let _ = writeln!(s, "steps = {}", self.teacher_steps);
        let _ = writeln!(s, "batch = {}", self.teacher_batch);
        let _ = writeln!(s, "lr = {}", self.teacher_lr);
        let _ = writeln!(s, "ema_decay = {}", self.teacher_ema);
        let _ = writeln!(s, "width = {}", self.teacher_width);
        let _ = writeln!(s, "depth = {}", self.teacher_depth);
        let _ = writeln!(s, "\n[distill]");
        let _ = writeln!(s, "gen_steps = {}", self.distill_steps);
        let _ = writeln!(s, "fake_batch = {}", self.distill_fake_batch);
        let _ = writeln!(s, "gen_batch = {}", self.distill_gen_batch);
        let _ = writeln!(s, "ttur_ratio = {}", self.distill_ttur);
        let _ = writeln!(s, "lr = {}", self.distill_lr);
        let _ = writeln!(s, "ema_decay = {}", self.distill_ema);
        let _ = writeln!(s, "\n[sample]");
        let _ = writeln!(s, "count = {}", self.sample_count);
        let _ = writeln!(s, "steps = {}", self.sample_steps);
        let _ = writeln!(s, "checkpoint = {}", self.sample_checkpoint);
        let _ = writeln!(s, "duration_checkpoint = {}", self.duration_checkpoint);
        let _ = writeln!(s, "\n[sweep]");
        let factors: Vec<String> = self.sweep_factors.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(s, "factors = {}", factors.join(","));
        let _ = writeln!(s, "\n[diversity]");
        let _ = writeln!(s, "n_samples = {}", self.diversity_samples);
        let _ = writeln!(s, "prompt_free = {}", self.diversity_prompt_free);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "count = {}", self.eval_count);
        s
    }
}
