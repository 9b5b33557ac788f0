//! Rectified-flow machinery: the linear interpolation schedule, the
//! regression loss, drift-to-score conversion, and the Euler ODE sampler.
//!
//! Conventions, fixed once here: X_t = t*X1 + (1-t)*X0 with X0 standard
//! normal; the drift regresses (X0 - X1), so integrating toward data uses a
//! negative step, and the score of the perturbed marginal is
//! s(x, t) = -(t*v + x) / (1 - t).

use rand::Rng;
use thiserror::Error;

use crate::nn::{AdamW, DiffModel, NnError, ParamStore, Tape};
use crate::rng::{normal, randn, uniform};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("time {t} outside clamp bounds [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("non-finite state at Euler step {step}")]
    NonFiniteState { step: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The (alpha, sigma) = (t, 1-t) interpolation with clamp bounds for
/// training, conversion, and integration endpoints.
#[derive(Clone, Copy, Debug)]
pub struct FlowSchedule {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for FlowSchedule {
    fn default() -> Self {
        Self { t_min: 0.02, t_max: 0.98 }
    }
}

impl FlowSchedule {
    pub fn new(t_min: f64, t_max: f64) -> Self {
        assert!(0.0 < t_min && t_min < t_max && t_max < 1.0, "need 0 < t_min < t_max < 1");
        Self { t_min, t_max }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        t
    }

    pub fn sigma(&self, t: f64) -> f64 {
        1.0 - t
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.t_min, self.t_max)
    }

    pub fn contains(&self, t: f64) -> bool {
        (self.t_min..=self.t_max).contains(&t)
    }
}

/// Sampling distribution for training times; uniform on the clamp interval.
#[derive(Clone, Copy, Debug)]
pub struct TimeSampler {
    pub lo: f64,
    pub hi: f64,
}

impl TimeSampler {
    pub fn uniform(schedule: &FlowSchedule) -> Self {
        Self { lo: schedule.t_min, hi: schedule.t_max }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        uniform(self.lo, self.hi, rng)
    }
}

/// A velocity field over states. A "state" is whatever tensor the field
/// understands: `[batch, d]` rows for point clouds, `[seq, d]` canvases for
/// token sequences. One `t` applies to the whole state.
pub trait DriftField: Sync {
    type Cond: Sync;
    fn velocity(&self, x: &Tensor, t: f64, cond: &Self::Cond) -> Tensor;
}

/// Drift defined by a closure; used for analytic oracle fields in tests.
pub struct FnDrift<F>(pub F);

impl<F: Fn(&Tensor, f64) -> Tensor + Sync> DriftField for FnDrift<F> {
    type Cond = ();
    fn velocity(&self, x: &Tensor, t: f64, _cond: &()) -> Tensor {
        (self.0)(x, t)
    }
}

/// An MLP drift network over `[batch, d]` rows (shared `t` per call).
pub struct MlpDrift {
    pub model: DiffModel,
}

impl DriftField for MlpDrift {
    type Cond = ();
    fn velocity(&self, x: &Tensor, t: f64, _cond: &()) -> Tensor {
        let ts = vec![t; x.shape()[0]];
        self.model.forward(x, &ts).expect("drift input shape")
    }
}

/// x_t = t*x1 + (1-t)*x0.
pub fn perturb(x1: &Tensor, x0: &Tensor, t: f64) -> Tensor {
    assert!((0.0..=1.0).contains(&t), "perturb needs t in [0, 1], got {t}");
    assert_eq!(x1.shape(), x0.shape(), "perturb shape mismatch");
    x1.scale(t).add(&x0.scale(1.0 - t))
}

/// Score of the perturbed marginal from the drift value at the same point:
/// s = -(t*v + x_t)/(1-t). Rejects times outside the clamp interval, where
/// the conversion is singular or extrapolated.
pub fn score_from_drift(
    v: &Tensor,
    x_t: &Tensor,
    t: f64,
    schedule: &FlowSchedule,
) -> Result<Tensor, FlowError> {
    if !schedule.contains(t) {
        return Err(FlowError::TimeOutOfRange { t, lo: schedule.t_min, hi: schedule.t_max });
    }
    assert_eq!(v.shape(), x_t.shape(), "score_from_drift shape mismatch");
    let s = v
        .scale(t)
        .add(x_t)
        .scale(-1.0 / (1.0 - t));
    Ok(s)
}

/// Mean squared error of the drift against the (x0 - x1) regression target,
/// averaged over batch elements and dimensions.
pub fn rf_loss<F: DriftField>(
    field: &F,
    x1: &[Tensor],
    x0: &[Tensor],
    ts: &[f64],
    conds: &[&F::Cond],
) -> Result<f64, FlowError> {
    assert_eq!(x1.len(), x0.len());
    assert_eq!(x1.len(), ts.len());
    assert_eq!(x1.len(), conds.len());
    let mut acc = 0.0;
    for (((x1_i, x0_i), &t), cond) in x1.iter().zip(x0).zip(ts).zip(conds) {
        let x_t = perturb(x1_i, x0_i, t);
        let v = field.velocity(&x_t, t, cond);
        let target = x0_i.sub(x1_i);
        let d = v.sub(&target);
        acc += d.dot(&d) / d.len() as f64;
    }
    let loss = acc / x1.len() as f64;
    if !loss.is_finite() {
        return Err(FlowError::NonFiniteLoss);
    }
    Ok(loss)
}

/// Integrate dy = -v(y, t) dt from the clamped start time to 1 with
/// `n_steps` uniform Euler steps. Evaluation times are clamped to
/// [t_min, t_max]; steps beyond t_max extrapolate the endpoint value.
/// With n_steps = 1 this is exactly the one-step generator readout
/// z - v(z, t_min) * (1 - t_min).
pub fn euler_sample<F: DriftField>(
    field: &F,
    z: &Tensor,
    n_steps: usize,
    cond: &F::Cond,
    schedule: &FlowSchedule,
) -> Result<Tensor, FlowError> {
    assert!(n_steps >= 1, "euler_sample needs at least one step");
    let dt = (1.0 - schedule.t_min) / n_steps as f64;
    let mut y = z.clone();
    for step in 0..n_steps {
        let t = schedule.clamp(schedule.t_min + step as f64 * dt);
        let v = field.velocity(&y, t, cond);
        y.add_scaled(&v, -dt);
        if !y.all_finite() {
            return Err(FlowError::NonFiniteState { step });
        }
    }
    Ok(y)
}

/// Rows per tape when splitting a training batch across workers.
const FIT_CHUNK_ROWS: usize = 64;

/// One rectified-flow regression step on an MLP drift network over a batch
/// of data rows: draw per-row times and noise, perturb, regress (x0 - x1),
/// apply one AdamW update. Returns the loss. Denoising score matching on
/// generated samples is this same update with x1 = the generated batch.
pub fn rf_fit_step(
    model: &mut DiffModel,
    opt: &mut AdamW,
    x1: &Tensor,
    sampler: &TimeSampler,
    rng: &mut impl Rng,
) -> Result<f64, FlowError> {
    let (b, d) = (x1.shape()[0], x1.shape()[1]);
    let ts: Vec<f64> = (0..b).map(|_| sampler.draw(rng)).collect();
    let x0 = randn(&[b, d], rng);
    let mut xt = Tensor::zeros(&[b, d]);
    let mut target = Tensor::zeros(&[b, d]);
    for i in 0..b * d {
        let row = i / d;
        let t = ts[row];
        xt.data_mut()[i] = t * x1.data()[i] + (1.0 - t) * x0.data()[i];
        target.data_mut()[i] = x0.data()[i] - x1.data()[i];
    }

    // Fixed-size chunks, each on its own tape; losses and gradients are
    // summed in chunk order so results do not depend on scheduling.
    let n_chunks = b.div_ceil(FIT_CHUNK_ROWS);
    let model_ref = &*model;
    let partials: Vec<Result<(f64, ParamStore), FlowError>> =
        crate::par::map_indexed(n_chunks, |c| {
            let lo = c * FIT_CHUNK_ROWS;
            let hi = ((c + 1) * FIT_CHUNK_ROWS).min(b);
            let rows = hi - lo;
            let xt_c = Tensor::new(vec![rows, d], xt.data()[lo * d..hi * d].to_vec());
            let tgt_c = Tensor::new(vec![rows, d], target.data()[lo * d..hi * d].to_vec());
            let feats = model_ref.features(&xt_c, &ts[lo..hi])?;
            let mut tape = Tape::new();
            let f = tape.constant(feats);
            let out = model_ref.apply(&mut tape, f);
            let mse = tape.mse_const(out, &tgt_c);
            let scaled = tape.scale(mse, rows as f64 / b as f64);
            let value = tape.value(scaled).item();
            Ok((value, tape.backward(scaled, &model_ref.params)))
        });

    let mut loss_value = 0.0;
    let mut grads = model.params.zeros_like();
    for part in partials {
        let (v, g) = part?;
        loss_value += v;
        for (name, acc) in grads.iter_mut() {
            acc.add_scaled(g.get(name).unwrap(), 1.0);
        }
    }
    if !loss_value.is_finite() {
        return Err(FlowError::NonFiniteLoss);
    }
    opt.step(&mut model.params, &grads)?;
    Ok(loss_value)
}

/// Apply a per-row closure to a `[n, d]` tensor (plumbing for analytic
/// drifts and scores defined on points).
pub fn rows_map(x: &Tensor, f: impl Fn(&[f64]) -> Vec<f64>) -> Tensor {
    let d = *x.shape().last().expect("rows_map needs a last axis");
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        let v = f(row);
        assert_eq!(v.len(), d);
        out.extend(v);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Draw a standard-normal batch shaped like the rows of the target.
pub fn noise_like(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::GaussianSpec;
    use crate::rng;

    #[test]
    fn perturb_endpoints_and_midpoint() {
        let x1 = Tensor::from_vec(vec![2.0, -1.0]);
        let x0 = Tensor::from_vec(vec![0.0, 4.0]);
        assert_eq!(perturb(&x1, &x0, 1.0), x1);
        assert_eq!(perturb(&x1, &x0, 0.0), x0);
        let mid = perturb(&x1, &x0, 0.5);
        assert_eq!(mid.data(), &[1.0, 1.5]);
    }

    #[test]
    fn perturb_is_affine() {
        let mut r = rng::seed_rng(7);
        let x1 = rng::randn(&[4], &mut r);
        let x0 = rng::randn(&[4], &mut r);
        let a = 2.75;
        let lhs = perturb(&x1.scale(a), &x0.scale(a), 0.3);
        let rhs = perturb(&x1, &x0, 0.3).scale(a);
        for (l, rv) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - rv).abs() < 1e-12);
        }
    }

    #[test]
    fn cheating_drift_has_zero_loss() {
        let mut r = rng::seed_rng(8);
        let sched = FlowSchedule::default();
        for _ in 0..5 {
            let x1 = rng::randn(&[3], &mut r);
            let x0 = rng::randn(&[3], &mut r);
            let t = uniform(sched.t_min, sched.t_max, &mut r);
            let target = x0.sub(&x1);
            let cheat = FnDrift(move |_x: &Tensor, _t: f64| target.clone());
            let loss = rf_loss(&cheat, &[x1.clone()], &[x0.clone()], &[t], &[&()]).unwrap();
            assert!(loss < 1e-24);
        }
    }

    #[test]
    fn zero_drift_loss_is_one_per_dimension() {
        // x1 = 0, x0 ~ N(0, I): target = x0, E||x0||^2 / d = 1.
        let mut r = rng::seed_rng(9);
        let d = 4;
        let n = 20_000;
        let zero = FnDrift(|x: &Tensor, _t: f64| Tensor::zeros_like(x));
        let x1: Vec<Tensor> = (0..n).map(|_| Tensor::zeros(&[d])).collect();
        let x0: Vec<Tensor> = (0..n).map(|_| rng::randn(&[d], &mut r)).collect();
        let ts = vec![0.5; n];
        let conds: Vec<&()> = vec![&(); n];
        let loss = rf_loss(&zero, &x1, &x0, &ts, &conds).unwrap();
        // Var of per-sample mean-square is 2/d; standard error ~ sqrt(2/(d n)).
        let se = (2.0 / (d as f64 * n as f64)).sqrt();
        assert!((loss - 1.0).abs() < 4.0 * se, "loss {loss}");
    }

    #[test]
    fn score_conversion_point_mass_and_origin() {
        let sched = FlowSchedule::default();
        let t = 0.6;
        let x = Tensor::from_vec(vec![0.8, -0.4]);
        // Point mass at 0: v = x/(1-t) gives s = -x/(1-t)^2.
        let v = x.scale(1.0 / (1.0 - t));
        let s = score_from_drift(&v, &x, t, &sched).unwrap();
        for (si, xi) in s.data().iter().zip(x.data()) {
            assert!((si - (-xi / ((1.0 - t) * (1.0 - t)))).abs() < 1e-12);
        }
        // v = 0 at x = 0 gives s = 0.
        let zero = Tensor::zeros(&[2]);
        let s0 = score_from_drift(&zero, &zero, t, &sched).unwrap();
        assert_eq!(s0.data(), &[0.0, 0.0]);
    }

    #[test]
    fn score_conversion_rejects_out_of_clamp_times() {
        let sched = FlowSchedule::default();
        let x = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            score_from_drift(&x, &x, 0.999, &sched),
            Err(FlowError::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn conversion_identity_on_grid() {
        let sched = FlowSchedule::new(0.02, 0.98);
        let g = GaussianSpec::new(vec![0.5, -1.0], vec![vec![1.3, 0.4], vec![0.4, 0.9]]).unwrap();
        for ti in 0..10 {
            let t = 0.05 + 0.1 * ti as f64;
            for xi in 0..5 {
                for yi in 0..5 {
                    let x = [-2.0 + xi as f64, -2.0 + yi as f64];
                    let v = Tensor::from_vec(g.analytic_drift(t, &x).unwrap());
                    let xt = Tensor::from_vec(x.to_vec());
                    let s = score_from_drift(&v, &xt, t, &sched).unwrap();
                    let want = g.perturbed_score(t, &x).unwrap();
                    for (a, b) in s.data().iter().zip(&want) {
                        assert!((a - b).abs() < 1e-9, "identity broke: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn euler_identity_flow_returns_noise() {
        let zero = FnDrift(|x: &Tensor, _t: f64| Tensor::zeros_like(x));
        let sched = FlowSchedule::default();
        let mut r = rng::seed_rng(10);
        let z = rng::randn(&[6, 2], &mut r);
        for n in [1, 7, 32] {
            let out = euler_sample(&zero, &z, n, &(), &sched).unwrap();
            assert_eq!(out, z);
        }
    }

    #[test]
    fn euler_gaussian_moments() {
        // Analytic drift for N(mu, I): Euler(128) sample moments approach
        // the target within Monte-Carlo error.
        let mu = [1.0, -0.5];
        let g = GaussianSpec::isotropic(mu.to_vec(), 1.0);
        let drift = FnDrift(move |x: &Tensor, t: f64| {
            rows_map(x, |row| g.analytic_drift(t, row).unwrap())
        });
        let sched = FlowSchedule::default();
        let n = 10_000;
        let mut r = rng::seed_rng(11);
        let z = rng::randn(&[n, 2], &mut r);
        let out = euler_sample(&drift, &z, 128, &(), &sched).unwrap();

        let mut mean = [0.0; 2];
        for row in out.data().chunks(2) {
            mean[0] += row[0] / n as f64;
            mean[1] += row[1] / n as f64;
        }
        let mut var = [0.0; 2];
        for row in out.data().chunks(2) {
            var[0] += (row[0] - mean[0]).powi(2) / n as f64;
            var[1] += (row[1] - mean[1]).powi(2) / n as f64;
        }
        let se_mean = (1.0 / n as f64).sqrt();
        for k in 0..2 {
            assert!((mean[k] - mu[k]).abs() < 3.0 * se_mean + 0.02, "mean[{k}] = {}", mean[k]);
            // Discretization + clamp bias allowance on top of 3 SE.
            let se_var = (2.0 / n as f64).sqrt();
            assert!((var[k] - 1.0).abs() < 3.0 * se_var + 0.05, "var[{k}] = {}", var[k]);
        }
    }

    #[test]
    fn rf_fit_step_with_zero_lr_keeps_params() {
        let mut r = rng::seed_rng(12);
        let mut model = DiffModel::new(crate::nn::MlpConfig::drift(2), &mut r);
        let before = model.params.checksum();
        let mut opt = AdamW::new(&model.params, 0.0);
        let x1 = rng::randn(&[16, 2], &mut r);
        let sched = FlowSchedule::default();
        rf_fit_step(&mut model, &mut opt, &x1, &TimeSampler::uniform(&sched), &mut r).unwrap();
        assert_eq!(model.params.checksum(), before);
        assert_eq!(opt.step_count(), 1);
    }
}
