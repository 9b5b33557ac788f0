//! Distribution matching distillation: initialize a one-step generator and
//! a trainable "fake" score estimator from a frozen teacher, then alternate
//! generator updates (score-difference surrogate gradient) with fake-score
//! updates (denoising score matching on generated samples) under a
//! two-timescale schedule, tracking the generator with EMA.

use rand::Rng;
use thiserror::Error;

use crate::flow::{
    perturb, rf_fit_step, score_from_drift, DriftField, FlowError, FlowSchedule, TimeSampler,
};
use crate::metrics::{MetricsSink, Phase};
use crate::nn::{AdamW, DiffModel, Ema, NnError, NodeId, ParamStore, Tape};
use crate::oracle::{GaussianSpec, MixtureSpec};
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::{par, rng};

#[derive(Debug, Error)]
pub enum DmdError {
    #[error("generator gradient norm {norm:.3e} exceeded {limit:.3e} at step {step}")]
    Diverged { step: u64, norm: f64, limit: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Time weighting w(t) of the distillation objective. The default
/// sigma_t^2 = (1-t)^2 cancels the 1/(1-t) growth of converted scores, so
/// gradient scale stays even across t. `scale` multiplies the whole thing.
#[derive(Clone, Copy, Debug)]
pub struct WeightingSpec {
    pub scale: f64,
    pub kind: WeightingKind,
}

#[derive(Clone, Copy, Debug)]
pub enum WeightingKind {
    SigmaSquared,
    Constant,
}

impl Default for WeightingSpec {
    fn default() -> Self {
        Self { scale: 1.0, kind: WeightingKind::SigmaSquared }
    }
}

impl WeightingSpec {
    pub fn w(&self, t: f64) -> f64 {
        let base = match self.kind {
            WeightingKind::SigmaSquared => (1.0 - t) * (1.0 - t),
            WeightingKind::Constant => 1.0,
        };
        self.scale * base
    }
}

/// A perturbed-marginal score estimate s(x, t | cond).
pub trait ScoreFn: Sync {
    type Cond: Sync;
    fn score(&self, x: &Tensor, t: f64, cond: &Self::Cond) -> Result<Tensor, FlowError>;
}

/// Score obtained from a drift field through the conversion identity.
pub struct DriftScore<F: DriftField> {
    pub field: F,
    pub schedule: FlowSchedule,
}

impl<F: DriftField> ScoreFn for DriftScore<F> {
    type Cond = F::Cond;
    fn score(&self, x: &Tensor, t: f64, cond: &Self::Cond) -> Result<Tensor, FlowError> {
        let v = self.field.velocity(x, t, cond);
        score_from_drift(&v, x, t, &self.schedule)
    }
}

/// Exact perturbed score of a Gaussian, applied row-wise.
pub struct GaussianScore(pub GaussianSpec);

impl ScoreFn for GaussianScore {
    type Cond = ();
    fn score(&self, x: &Tensor, t: f64, _cond: &()) -> Result<Tensor, FlowError> {
        Ok(crate::flow::rows_map(x, |row| self.0.perturbed_score(t, row).expect("spec dim")))
    }
}

/// Exact perturbed score of a Gaussian mixture, applied row-wise.
pub struct MixtureScore(pub MixtureSpec);

impl ScoreFn for MixtureScore {
    type Cond = ();
    fn score(&self, x: &Tensor, t: f64, _cond: &()) -> Result<Tensor, FlowError> {
        Ok(crate::flow::rows_map(x, |row| self.0.perturbed_score(t, row).expect("spec dim")))
    }
}

/// A one-step sampler with trainable parameters. `generate` must be
/// deterministic given (params, z, cond); `generate_traced` must compute
/// the same value while registering parameters on the tape.
pub trait Generator: Sync {
    type Cond: Sync + Clone;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn generate(&self, z: &Tensor, cond: &Self::Cond) -> Tensor;
    fn generate_traced(&self, tape: &mut Tape, z: &Tensor, cond: &Self::Cond) -> NodeId;
    /// Closed-form sample law, when the generator has one (affine case).
    fn implied_gaussian(&self) -> Option<GaussianSpec> {
        None
    }
}

/// x_hat = a^T z + b over `[batch, d]` rows of z; the analytically
/// tractable generator used by the gradient and convergence oracles.
pub struct AffineGenerator {
    params: ParamStore,
    dim: usize,
}

impl AffineGenerator {
    pub fn identity(dim: usize) -> Self {
        let mut params = ParamStore::new();
        let mut eye = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            eye.data_mut()[i * dim + i] = 1.0;
        }
        params.insert("a", eye).unwrap();
        params.insert("b", Tensor::zeros(&[dim])).unwrap();
        Self { params, dim }
    }

    pub fn with_values(a_rows: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        let dim = b.len();
        let mut gen = Self::identity(dim);
        let flat: Vec<f64> = a_rows.into_iter().flatten().collect();
        gen.params.set("a", Tensor::new(vec![dim, dim], flat)).unwrap();
        gen.params.set("b", Tensor::from_vec(b)).unwrap();
        gen
    }
}

impl Generator for AffineGenerator {
    type Cond = ();

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn generate(&self, z: &Tensor, _cond: &()) -> Tensor {
        let a = self.params.get("a").unwrap();
        let b = self.params.get("b").unwrap();
        let mut out = z.matmul(a);
        for row in out.data_mut().chunks_mut(self.dim) {
            for (o, &bi) in row.iter_mut().zip(b.data()) {
                *o += bi;
            }
        }
        out
    }

    fn generate_traced(&self, tape: &mut Tape, z: &Tensor, _cond: &()) -> NodeId {
        let zc = tape.constant(z.clone());
        let a = tape.param(&self.params, "a");
        let b = tape.param(&self.params, "b");
        let za = tape.matmul(zc, a);
        tape.add_bias(za, b)
    }

    fn implied_gaussian(&self) -> Option<GaussianSpec> {
        let a = self.params.get("a").unwrap();
        let b = self.params.get("b").unwrap();
        let d = self.dim;
        // cov = a^T a for x_hat = z * a with z ~ N(0, I).
        let mut cov = vec![vec![0.0; d]; d];
        for (i, row) in cov.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..d).map(|k| a.data()[k * d + i] * a.data()[k * d + j]).sum();
            }
        }
        GaussianSpec::new(b.data().to_vec(), cov).ok()
    }
}

/// One full-interval Euler step of a drift network at a fixed read-out
/// time: x_hat = z - v(z, t_gen) * (1 - t_gen). Initialized from the
/// teacher, this is the standard one-step student parameterization.
pub struct OneStepGen {
    pub drift: DiffModel,
    pub t_gen: f64,
}

impl OneStepGen {
    pub fn from_teacher(teacher: &DiffModel, schedule: &FlowSchedule) -> Self {
        Self { drift: teacher.clone(), t_gen: schedule.t_min }
    }
}

impl Generator for OneStepGen {
    type Cond = ();

    fn params(&self) -> &ParamStore {
        &self.drift.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.drift.params
    }

    fn generate(&self, z: &Tensor, _cond: &()) -> Tensor {
        let ts = vec![self.t_gen; z.shape()[0]];
        let v = self.drift.forward(z, &ts).expect("generator input shape");
        let mut out = z.clone();
        out.add_scaled(&v, -(1.0 - self.t_gen));
        out
    }

    fn generate_traced(&self, tape: &mut Tape, z: &Tensor, _cond: &()) -> NodeId {
        let ts = vec![self.t_gen; z.shape()[0]];
        let feats = self.drift.features(z, &ts).expect("generator input shape");
        let f = tape.constant(feats);
        let v = self.drift.apply(tape, f);
        let zc = tape.constant(z.clone());
        let step = tape.scale(v, -(1.0 - self.t_gen));
        tape.add(zc, step)
    }
}

/// One-step sample from the current generator (Algorithm output surface).
pub fn one_step_generate<G: Generator>(gen: &G, z: &Tensor, cond: &G::Cond) -> Tensor {
    gen.generate(z, cond)
}

/// The fake-score estimator: scores the generator's current sample law and
/// can be updated toward it. Net estimators train by denoising score
/// matching on generated samples; analytic trackers resynchronize from the
/// generator's implied law and report no loss.
pub trait FakeEstimator<C>: Sync {
    fn score(&self, x: &Tensor, t: f64, cond: &C) -> Result<Tensor, FlowError>;
    fn update(
        &mut self,
        samples: &[Tensor],
        conds: &[C],
        implied: Option<&GaussianSpec>,
        rng: &mut Prng,
    ) -> Result<Option<f64>, FlowError>;
}

/// MLP drift network trained with denoising score matching (realized as
/// the rectified-flow regression on the sample batch).
pub struct NetFake {
    pub drift: DiffModel,
    pub opt: AdamW,
    pub schedule: FlowSchedule,
    pub sampler: TimeSampler,
}

impl NetFake {
    pub fn from_teacher(teacher: &DiffModel, lr: f64, schedule: FlowSchedule) -> Self {
        Self {
            drift: teacher.clone(),
            opt: AdamW::new(&teacher.params, lr),
            schedule,
            sampler: TimeSampler::uniform(&schedule),
        }
    }
}

impl FakeEstimator<()> for NetFake {
    fn score(&self, x: &Tensor, t: f64, _cond: &()) -> Result<Tensor, FlowError> {
        let ts = vec![t; x.shape()[0]];
        let v = self.drift.forward(x, &ts)?;
        score_from_drift(&v, x, t, &self.schedule)
    }

    fn update(
        &mut self,
        samples: &[Tensor],
        _conds: &[()],
        _implied: Option<&GaussianSpec>,
        rng: &mut Prng,
    ) -> Result<Option<f64>, FlowError> {
        // Rows of every sample tensor stacked into one batch.
        let d = *samples[0].shape().last().unwrap();
        let total: usize = samples.iter().map(|s| s.len()).sum();
        let mut data = Vec::with_capacity(total);
        for s in samples {
            data.extend_from_slice(s.data());
        }
        let batch = Tensor::new(vec![total / d, d], data);
        let loss = rf_fit_step(&mut self.drift, &mut self.opt, &batch, &self.sampler, rng)?;
        Ok(Some(loss))
    }
}

/// Always-converged estimator: scores the generator's implied Gaussian.
/// Models the TTUR limit where the fake score has fully caught up.
pub struct TrackingFake {
    current: GaussianSpec,
}

impl TrackingFake {
    pub fn new(initial: GaussianSpec) -> Self {
        Self { current: initial }
    }
}

impl FakeEstimator<()> for TrackingFake {
    fn score(&self, x: &Tensor, t: f64, _cond: &()) -> Result<Tensor, FlowError> {
        Ok(crate::flow::rows_map(x, |row| {
            self.current.perturbed_score(t, row).expect("tracking dim")
        }))
    }

    fn update(
        &mut self,
        _samples: &[Tensor],
        _conds: &[()],
        implied: Option<&GaussianSpec>,
        _rng: &mut Prng,
    ) -> Result<Option<f64>, FlowError> {
        self.current = implied.expect("tracking fake needs an affine generator").clone();
        Ok(None)
    }
}

/// One Monte-Carlo (or quadrature) node of the generator gradient:
/// noise seed `z`, independent perturbation noise `w` (shaped like the
/// generated sample), time `t`, and probability mass `weight`.
pub struct GradSample<C> {
    pub z: Tensor,
    pub w: Tensor,
    pub t: f64,
    pub weight: f64,
    pub cond: C,
}

/// Paired (generator, fake, frozen teacher) models plus the optimizer, EMA,
/// and two-timescale bookkeeping of the distillation loop.
pub struct DistillState<G, T, F>
where
    G: Generator,
    T: ScoreFn<Cond = G::Cond>,
    F: FakeEstimator<G::Cond>,
{
    pub teacher: T,
    pub fake: F,
    pub generator: G,
    pub gen_opt: AdamW,
    pub gen_ema: Ema,
    pub ttur_ratio: usize,
    pub weighting: WeightingSpec,
    pub time_sampler: TimeSampler,
    pub schedule: FlowSchedule,
    pub gen_updates: u64,
    pub fake_updates: u64,
    /// Abort threshold for the generator gradient norm.
    pub grad_norm_limit: f64,
    /// Elements per tape when batching the surrogate graph.
    pub chunk_size: usize,
}

impl<G, T, F> DistillState<G, T, F>
where
    G: Generator,
    T: ScoreFn<Cond = G::Cond>,
    F: FakeEstimator<G::Cond>,
{
    pub fn new(
        teacher: T,
        fake: F,
        generator: G,
        gen_lr: f64,
        ema_decay: f64,
        schedule: FlowSchedule,
    ) -> Self {
        let gen_opt = AdamW::new(generator.params(), gen_lr);
        let gen_ema = Ema::new(generator.params(), ema_decay);
        Self {
            teacher,
            fake,
            generator,
            gen_opt,
            gen_ema,
            ttur_ratio: 10,
            weighting: WeightingSpec::default(),
            time_sampler: TimeSampler::uniform(&schedule),
            schedule,
            gen_updates: 0,
            fake_updates: 0,
            grad_norm_limit: 1e4,
            chunk_size: 32,
        }
    }
}

/// The surrogate whose gradient realizes the score-difference objective:
/// sum_i weight_i * <detach[w(t_i) * alpha(t_i) * (s_fake - s_teacher)(x_t_i)], g(z_i)>.
/// The bracket is evaluated without gradients; gradient flows only through
/// g(z). Returns (surrogate value, gradients over generator parameters).
pub fn generator_gradient<G, T, F>(
    gen: &G,
    teacher: &T,
    fake: &F,
    weighting: &WeightingSpec,
    schedule: &FlowSchedule,
    samples: &[GradSample<G::Cond>],
    chunk_size: usize,
) -> Result<(f64, ParamStore), DmdError>
where
    G: Generator,
    T: ScoreFn<Cond = G::Cond>,
    F: FakeEstimator<G::Cond>,
{
    assert!(!samples.is_empty());
    let chunks: Vec<&[GradSample<G::Cond>]> = samples.chunks(chunk_size.max(1)).collect();
    let partials: Vec<Result<(f64, ParamStore), DmdError>> = par::map_slice(&chunks, |chunk| {
        let mut tape = Tape::new();
        let mut loss_nodes: Vec<NodeId> = Vec::with_capacity(chunk.len());
        for s in chunk.iter() {
            let out = gen.generate_traced(&mut tape, &s.z, &s.cond);
            let x_hat = tape.value(out).clone();
            let x_t = perturb(&x_hat, &s.w, s.t);
            let s_fake = fake.score(&x_t, s.t, &s.cond)?;
            let s_teacher = teacher.score(&x_t, s.t, &s.cond)?;
            let coeff = s.weight * weighting.w(s.t) * schedule.alpha(s.t);
            let c = s_fake.sub(&s_teacher).scale(coeff);
            if !c.all_finite() {
                return Err(FlowError::NonFiniteLoss.into());
            }
            loss_nodes.push(tape.dot_const(out, c));
        }
        let mut total = loss_nodes[0];
        for &n in &loss_nodes[1..] {
            total = tape.add(total, n);
        }
        let value = tape.value(total).item();
        let grads = tape.backward(total, gen.params());
        Ok((value, grads))
    });

    let mut surrogate = 0.0;
    let mut grads = gen.params().zeros_like();
    for part in partials {
        let (v, g) = part?;
        surrogate += v;
        for (name, acc) in grads.iter_mut() {
            acc.add_scaled(g.get(name).unwrap(), 1.0);
        }
    }
    Ok((surrogate, grads))
}

/// Draw a Monte-Carlo gradient batch: z and w fresh standard normal per
/// element (w independent of z), t from the time sampler, uniform weight.
pub fn draw_grad_batch<C: Clone>(
    shapes: &[(Vec<usize>, C)],
    sampler: &TimeSampler,
    rng: &mut impl Rng,
) -> Vec<GradSample<C>> {
    let b = shapes.len();
    shapes
        .iter()
        .map(|(shape, cond)| GradSample {
            z: rng::randn(shape, rng),
            w: rng::randn(shape, rng),
            t: sampler.draw(rng),
            weight: 1.0 / b as f64,
            cond: cond.clone(),
        })
        .collect()
}

/// Deterministic 1-D gradient batch for oracle comparisons: midpoint nodes
/// in t crossed with Gauss-Hermite nodes in (z, w). For affine generators
/// and Gaussian scores the integrand is a low-degree polynomial in (z, w),
/// so the expectation is exact and the result can be held against finite
/// differences of the closed-form objective.
pub fn quadrature_grad_batch(
    schedule: &FlowSchedule,
    t_nodes: usize,
    gh_nodes: usize,
) -> Vec<GradSample<()>> {
    let (zs, zw) = crate::oracle::quad::gauss_hermite(gh_nodes);
    let dt = (schedule.t_max - schedule.t_min) / t_nodes as f64;
    let mut out = Vec::with_capacity(t_nodes * gh_nodes * gh_nodes);
    for j in 0..t_nodes {
        let t = schedule.t_min + (j as f64 + 0.5) * dt;
        for (zi, &wz) in zs.iter().zip(&zw) {
            for (wi, &ww) in zs.iter().zip(&zw) {
                out.push(GradSample {
                    z: Tensor::new(vec![1, 1], vec![*zi]),
                    w: Tensor::new(vec![1, 1], vec![*wi]),
                    t,
                    weight: wz * ww / t_nodes as f64,
                    cond: (),
                });
            }
        }
    }
    out
}

/// Per-generator-step batch sizes for the distillation loop.
#[derive(Clone, Copy, Debug)]
pub struct BatchSpec {
    /// Elements per fake-score update.
    pub fake_batch: usize,
    /// Elements per generator gradient estimate.
    pub gen_batch: usize,
}

/// Run `steps` iterations of the distillation loop: per generator update,
/// `ttur_ratio` fake-score updates on freshly generated batches, then one
/// surrogate gradient + AdamW + EMA update of the generator. `draw` supplies
/// (noise shape, conditioning) pairs. Aborts if the generator gradient norm
/// exceeds the configured limit.
pub fn distill<G, T, F>(
    state: &mut DistillState<G, T, F>,
    steps: usize,
    batch: BatchSpec,
    draw: &mut dyn FnMut(&mut Prng) -> (Vec<usize>, G::Cond),
    sink: &mut MetricsSink,
    rng: &mut Prng,
) -> Result<(), DmdError>
where
    G: Generator,
    T: ScoreFn<Cond = G::Cond>,
    F: FakeEstimator<G::Cond>,
{
    for _ in 0..steps {
        let step_t0 = std::time::Instant::now();
        for _ in 0..state.ttur_ratio {
            let specs: Vec<(Vec<usize>, G::Cond)> = (0..batch.fake_batch).map(|_| draw(rng)).collect();
            let zs: Vec<Tensor> = specs.iter().map(|(shape, _)| rng::randn(shape, rng)).collect();
            let conds: Vec<G::Cond> = specs.iter().map(|(_, c)| c.clone()).collect();
            let samples: Vec<Tensor> = {
                let gen = &state.generator;
                let pairs: Vec<(&Tensor, &G::Cond)> = zs.iter().zip(conds.iter()).collect();
                par::map_slice(&pairs, |(z, c)| gen.generate(z, c))
            };
            let implied = state.generator.implied_gaussian();
            let loss = state.fake.update(&samples, &conds, implied.as_ref(), rng)?;
            state.fake_updates += 1;
            if let Some(l) = loss {
                sink.push(state.fake_updates, Phase::Fake, l, 0.0);
            }
        }

        let specs: Vec<(Vec<usize>, G::Cond)> = (0..batch.gen_batch).map(|_| draw(rng)).collect();
        let grad_batch = draw_grad_batch(&specs, &state.time_sampler, rng);
        let (surrogate, grads) = generator_gradient(
            &state.generator,
            &state.teacher,
            &state.fake,
            &state.weighting,
            &state.schedule,
            &grad_batch,
            state.chunk_size,
        )?;
        let norm = grads.norm_l2();
        if norm > state.grad_norm_limit {
            return Err(DmdError::Diverged {
                step: state.gen_updates,
                norm,
                limit: state.grad_norm_limit,
            });
        }
        state.gen_opt.step(state.generator.params_mut(), &grads)?;
        state.gen_ema.update(state.generator.params())?;
        state.gen_updates += 1;
        sink.push(state.gen_updates, Phase::Gen, surrogate, norm);
        sink.push_wall(state.gen_updates, step_t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::euler_sample;
    use crate::oracle::finite_diff_grad;
    use crate::rng::seed_rng;

    #[test]
    fn identity_generator_passes_noise_through() {
        let gen = AffineGenerator::identity(2);
        let mut r = seed_rng(1);
        let z = rng::randn(&[5, 2], &mut r);
        let out = one_step_generate(&gen, &z, &());
        assert_eq!(out, z);
    }

    #[test]
    fn one_step_matches_euler_single_step() {
        let mut r = seed_rng(2);
        let schedule = FlowSchedule::default();
        let teacher = DiffModel::new(crate::nn::MlpConfig::drift(2), &mut r);
        let gen = OneStepGen::from_teacher(&teacher, &schedule);
        let z = rng::randn(&[4, 2], &mut r);
        let a = gen.generate(&z, &());
        let field = crate::flow::MlpDrift { model: teacher };
        let b = euler_sample(&field, &z, 1, &(), &schedule).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn traced_generation_matches_plain() {
        let mut r = seed_rng(3);
        let schedule = FlowSchedule::default();
        let teacher = DiffModel::new(crate::nn::MlpConfig::drift(2), &mut r);
        let gen = OneStepGen::from_teacher(&teacher, &schedule);
        let z = rng::randn(&[3, 2], &mut r);
        let plain = gen.generate(&z, &());
        let mut tape = Tape::new();
        let node = gen.generate_traced(&mut tape, &z, &());
        for (a, b) in plain.data().iter().zip(tape.value(node).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_when_scores_agree() {
        // Fake == teacher law: the score difference, and so the gradient,
        // is exactly zero.
        let spec = GaussianSpec::standard(2);
        let teacher = GaussianScore(spec.clone());
        let fake = TrackingFake::new(spec);
        let gen = AffineGenerator::identity(2);
        let schedule = FlowSchedule::default();
        let mut r = seed_rng(4);
        let shapes: Vec<(Vec<usize>, ())> = (0..16).map(|_| (vec![1, 2], ())).collect();
        let batch = draw_grad_batch(&shapes, &TimeSampler::uniform(&schedule), &mut r);
        let (_, grads) =
            generator_gradient(&gen, &teacher, &fake, &WeightingSpec::default(), &schedule, &batch, 8)
                .unwrap();
        assert!(grads.norm_l2() < 1e-12);
    }

    #[test]
    fn gradient_is_linear_in_weighting_scale() {
        let target = GaussianSpec::isotropic(vec![0.7, -0.3], 1.0);
        let teacher = GaussianScore(target);
        let gen = AffineGenerator::with_values(vec![vec![1.1, 0.0], vec![0.1, 0.9]], vec![0.2, 0.4]);
        let fake = TrackingFake::new(gen.implied_gaussian().unwrap());
        let schedule = FlowSchedule::default();
        let mut r = seed_rng(5);
        let shapes: Vec<(Vec<usize>, ())> = (0..8).map(|_| (vec![1, 2], ())).collect();
        let batch = draw_grad_batch(&shapes, &TimeSampler::uniform(&schedule), &mut r);

        let w1 = WeightingSpec::default();
        let mut w3 = WeightingSpec::default();
        w3.scale = 3.0;
        let (_, g1) = generator_gradient(&gen, &teacher, &fake, &w1, &schedule, &batch, 4).unwrap();
        let (_, g3) = generator_gradient(&gen, &teacher, &fake, &w3, &schedule, &batch, 4).unwrap();
        for (name, a) in g1.iter() {
            let b = g3.get(name).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((3.0 * x - y).abs() < 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn affine_gradient_matches_finite_differences_of_quadrature_kl() {
        // 1-D affine generator vs Gaussian data with analytic scores on
        // both sides; the same midpoint t-rule on both routes and
        // Gauss-Hermite nodes in (z, w) make the surrogate expectation
        // exact, so it must match finite differences of the weighted KL.
        let schedule = FlowSchedule::default();
        let weighting = WeightingSpec::default();
        let target = GaussianSpec::standard(1);
        let (a, b) = (1.3, -0.4);
        let gen = AffineGenerator::with_values(vec![vec![a]], vec![b]);
        let teacher = GaussianScore(target.clone());
        let fake = TrackingFake::new(gen.implied_gaussian().unwrap());

        let batch = quadrature_grad_batch(&schedule, 64, 16);
        let (_, grads) =
            generator_gradient(&gen, &teacher, &fake, &weighting, &schedule, &batch, 2048).unwrap();

        let objective = |p: &ParamStore| {
            let av = p.get("a").unwrap().data()[0];
            let bv = p.get("b").unwrap().data()[0];
            crate::oracle::gaussian::weighted_kl_1d(
                av,
                bv,
                (schedule.t_min, schedule.t_max),
                |t| weighting.w(t),
                64,
            )
        };
        let fd = finite_diff_grad(objective, gen.params(), 1e-6);
        let rel = crate::oracle::fd::max_rel_err(&grads, &fd, 1e-8);
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn ttur_bookkeeping_is_exact() {
        let target = GaussianSpec::isotropic(vec![0.3, 0.1], 1.0);
        let teacher = GaussianScore(target);
        let gen = AffineGenerator::identity(2);
        let fake = TrackingFake::new(gen.implied_gaussian().unwrap());
        let schedule = FlowSchedule::default();
        let mut state = DistillState::new(teacher, fake, gen, 1e-3, 0.99, schedule);
        state.ttur_ratio = 7;
        let mut sink = MetricsSink::new();
        let mut r = seed_rng(6);
        distill(
            &mut state,
            5,
            BatchSpec { fake_batch: 4, gen_batch: 8 },
            &mut |_| (vec![1, 2], ()),
            &mut sink,
            &mut r,
        )
        .unwrap();
        assert_eq!(state.gen_updates, 5);
        assert_eq!(state.fake_updates, 7 * 5);
        assert_eq!(state.gen_opt.step_count(), 5);
    }

    #[test]
    fn zero_steps_leaves_state_unchanged() {
        let target = GaussianSpec::standard(2);
        let teacher = GaussianScore(target);
        let gen = AffineGenerator::identity(2);
        let fake = TrackingFake::new(gen.implied_gaussian().unwrap());
        let schedule = FlowSchedule::default();
        let mut state = DistillState::new(teacher, fake, gen, 1e-3, 0.99, schedule);
        let before = state.generator.params().checksum();
        let mut sink = MetricsSink::new();
        let mut r = seed_rng(7);
        distill(
            &mut state,
            0,
            BatchSpec { fake_batch: 4, gen_batch: 4 },
            &mut |_| (vec![1, 2], ()),
            &mut sink,
            &mut r,
        )
        .unwrap();
        assert_eq!(state.generator.params().checksum(), before);
        assert_eq!(state.gen_updates, 0);
        assert_eq!(state.fake_updates, 0);
    }
}
