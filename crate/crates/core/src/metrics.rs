//! Per-step training metrics and their CSV form.
//!
//! The metrics table is deterministic given a seed (step, phase, loss,
//! gradient norm). Wall-clock timings are collected separately so metric
//! files stay byte-identical across runs.

use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Teacher,
    Gen,
    Fake,
    Duration,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Teacher => "teacher",
            Phase::Gen => "gen",
            Phase::Fake => "fake",
            Phase::Duration => "duration",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MetricRow {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Collects metric rows and (separately) wall-clock timings.
#[derive(Default)]
pub struct MetricsSink {
    pub rows: Vec<MetricRow>,
    pub wall_ms: Vec<(u64, f64)>,
}

impl MetricsSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, phase: Phase, loss: f64, grad_norm: f64) {
        self.rows.push(MetricRow { step, phase, loss, grad_norm });
    }

    pub fn push_wall(&mut self, step: u64, ms: f64) {
        self.wall_ms.push((step, ms));
    }

    /// Deterministic CSV: `step,phase,loss,grad_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,phase,loss,grad_norm\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.step, r.phase.as_str(), r.loss, r.grad_norm);
        }
        out
    }

    /// Separate timing table: `step,wall_ms`.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("step,wall_ms\n");
        for (step, ms) in &self.wall_ms {
            let _ = writeln!(out, "{step},{ms:.3}");
        }
        out
    }

    /// Losses for one phase in step order (for loss-curve plots and tests).
    pub fn losses(&self, phase: Phase) -> Vec<f64> {
        self.rows.iter().filter(|r| r.phase == phase).map(|r| r.loss).collect()
    }
}

/// 50-step moving average used by training-curve tests.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if xs.len() < window {
        return vec![];
    }
    let mut out = Vec::with_capacity(xs.len() - window + 1);
    let mut acc: f64 = xs[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..xs.len() {
        acc += xs[i] - xs[i - window];
        out.push(acc / window as f64);
    }
    out
}
