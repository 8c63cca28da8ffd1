//! Conditional denoising diffusion in latent space.
//!
//! The forward process is the closed-form Gaussian corruption
//! z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps with abar_t the running
//! product of (1 - beta_s). The denoiser predicts eps from (z_t, a
//! sinusoidal step embedding, a learned attribute embedding) and is
//! trained with conditioning dropout so a null token yields an
//! unconditional score. Sampling runs an accelerated reverse pass over a
//! strictly decreasing sub-sequence of steps; with no injected noise the
//! update is fully deterministic, with injected noise it matches the
//! forward transition posteriors.

use crate::numerics::{linalg, Activation, AdamConfig, DenseNet, Matrix, NetGrads, OptimState, RngStream};
use crate::{Error, Result};

pub const TIME_EMBED_DIM: usize = 16;
pub const ATTR_EMBED_DIM: usize = 4;
/// Rows of the attribute table: a=0, a=1, and the null token.
pub const ATTR_ROWS: usize = 3;

pub const DEFAULT_T_STEPS: usize = 250;
pub const DEFAULT_BETA_START: f64 = 2.0e-4;
pub const DEFAULT_BETA_END: f64 = 2.0e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Schedule {
    /// Linear schedule over `t_steps` steps, strictly increasing.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps < 2 {
            return Err(Error::InvalidArgument("schedule needs at least 2 steps".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start < beta_end) {
            return Err(Error::InvalidArgument(format!(
                "beta range ({beta_start}, {beta_end}) must satisfy 0 < start < end < 1"
            )));
        }
        let betas = (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect();
        Ok(Schedule::from_betas(betas))
    }

    pub(crate) fn from_betas(betas: Vec<f64>) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Schedule { betas, alpha_bars }
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// abar_t = prod_{s<=t} (1 - beta_s); abar_0 = 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(Error::InvalidArgument(format!(
                "step {t} outside 1..={}",
                self.t_max()
            )));
        }
        Ok(())
    }
}

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) noise.
pub fn forward_diffuse(schedule: &Schedule, z0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if z0.len() != noise.len() {
        return Err(Error::Shape {
            context: "forward_diffuse noise",
            expected: z0.len(),
            got: noise.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(noise).map(|(&z, &e)| s * z + n * e).collect())
}

/// Sinusoidal step embedding: interleaved sin/cos at geometric frequencies.
pub fn time_embedding(t: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), TIME_EMBED_DIM);
    let half = TIME_EMBED_DIM / 2;
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as f64) / half as f64);
        let arg = t as f64 * freq;
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cond {
    Attr(u8),
    Null,
}

impl Cond {
    pub(crate) fn row(self) -> Result<usize> {
        match self {
            Cond::Attr(0) => Ok(0),
            Cond::Attr(1) => Ok(1),
            Cond::Null => Ok(2),
            Cond::Attr(a) => Err(Error::InvalidArgument(format!("attribute {a} is not binary"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub(crate) net: DenseNet,
    pub(crate) attr_embed: Matrix,
    latent_dim: usize,
}

impl Denoiser {
    pub fn new(latent_dim: usize, hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut dims = vec![latent_dim + TIME_EMBED_DIM + ATTR_EMBED_DIM];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        let net = DenseNet::relu_stack(&dims, Activation::Identity, rng)?;
        let attr_embed = Matrix::from_fn(ATTR_ROWS, ATTR_EMBED_DIM, |_, _| rng.standard_normal());
        Ok(Denoiser {
            net,
            attr_embed,
            latent_dim,
        })
    }

    pub(crate) fn from_parts(net: DenseNet, attr_embed: Matrix) -> Result<Self> {
        let latent_dim = net.output_dim();
        if net.input_dim() != latent_dim + TIME_EMBED_DIM + ATTR_EMBED_DIM
            || attr_embed.rows() != ATTR_ROWS
            || attr_embed.cols() != ATTR_EMBED_DIM
        {
            return Err(Error::Store("denoiser parts have inconsistent shapes".into()));
        }
        Ok(Denoiser {
            net,
            attr_embed,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn fill_input(&self, z_t: &[f64], t: usize, cond: Cond, input: &mut Vec<f64>) -> Result<()> {
        if z_t.len() != self.latent_dim {
            return Err(Error::Shape {
                context: "denoiser latent",
                expected: self.latent_dim,
                got: z_t.len(),
            });
        }
        input.clear();
        input.extend_from_slice(z_t);
        let at = input.len();
        input.resize(at + TIME_EMBED_DIM, 0.0);
        time_embedding(t, &mut input[at..at + TIME_EMBED_DIM]);
        input.extend_from_slice(self.attr_embed.row(cond.row()?));
        Ok(())
    }

    /// Predicted noise for z_t at step t under the given conditioning.
    pub fn predict_eps(&self, z_t: &[f64], t: usize, cond: Cond) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(self.net.input_dim());
        self.fill_input(z_t, t, cond, &mut input)?;
        self.net.forward(&input)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cond_dropout: f64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            hidden: vec![128, 128],
            epochs: 40,
            batch_size: 64,
            learning_rate: 1e-3,
            cond_dropout: 0.1,
        }
    }
}

/// Mean squared noise-prediction error of the current denoiser over the
/// sampled (row, t, eps) triples of one batch.
#[derive(Debug, Clone)]
pub struct DenoiserTrace {
    pub epoch_losses: Vec<f64>,
}

/// Train eps-prediction on the given latents (already perturbed by phi
/// when disentanglement is in play). The attribute embedding is dropped to
/// the null row at `cond_dropout` rate so unconditional scores exist.
pub fn train_denoiser(
    latents: &[Vec<f64>],
    attrs: &[u8],
    schedule: &Schedule,
    cfg: &DenoiserTrainConfig,
    rng: &mut RngStream,
) -> Result<(Denoiser, DenoiserTrace)> {
    if latents.is_empty() || latents.len() != attrs.len() {
        return Err(Error::InvalidArgument(
            "denoiser training needs aligned nonempty latents and attributes".into(),
        ));
    }
    let d = latents[0].len();
    if !(0.0..1.0).contains(&cfg.cond_dropout) {
        return Err(Error::InvalidArgument(format!(
            "conditioning dropout {} outside [0, 1)",
            cfg.cond_dropout
        )));
    }
    let mut init_rng = rng.fork("init");
    let mut den = Denoiser::new(d, &cfg.hidden, &mut init_rng)?;
    let n_net = den.net.param_count();
    let n_emb = ATTR_ROWS * ATTR_EMBED_DIM;
    let mut opt = OptimState::new(n_net + n_emb);
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };

    let n = latents.len();
    let batch = cfg.batch_size.min(n).max(1);
    let mut grads = NetGrads::zeros_like(&den.net);
    let mut emb_grad = vec![0.0; n_emb];
    let mut params = Vec::with_capacity(n_net + n_emb);
    let mut flat_grads = Vec::with_capacity(n_net + n_emb);
    let mut trace = Default::default();
    let mut input = Vec::with_capacity(den.net.input_dim());
    let mut eps = vec![0.0; d];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_rng = rng.fork(&format!("epoch/{epoch}"));
        let order = epoch_rng.permutation(n);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grads.reset();
            emb_grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let t = 1 + epoch_rng.below(schedule.t_max());
                for e in eps.iter_mut() {
                    *e = epoch_rng.standard_normal();
                }
                let z_t = forward_diffuse(schedule, &latents[i], t, &eps)?;
                let cond = if epoch_rng.uniform01() < cfg.cond_dropout {
                    Cond::Null
                } else {
                    Cond::Attr(attrs[i])
                };
                let row = cond.row()?;
                den.fill_input(&z_t, t, cond, &mut input)?;
                den.net.forward_trace(&input, &mut trace)?;
                let out = trace.output();
                // loss = mean_j (out_j - eps_j)^2; gradient 2(out - eps)/d.
                let mut dl = Vec::with_capacity(d);
                for (o, e) in out.iter().zip(&eps) {
                    batch_loss += (o - e) * (o - e) / d as f64;
                    dl.push(2.0 * (o - e) / d as f64);
                }
                let dinput = den.net.backward(&trace, &dl, &mut grads);
                let emb_at = d + TIME_EMBED_DIM;
                for j in 0..ATTR_EMBED_DIM {
                    emb_grad[row * ATTR_EMBED_DIM + j] += dinput[emb_at + j];
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.scale(scale);
            linalg::scale(&mut emb_grad, scale);
            epoch_loss += batch_loss;

            params.clear();
            den.net.push_params(&mut params);
            params.extend_from_slice(den.attr_embed.data());
            flat_grads.clear();
            DenseNet::push_grads(&grads, &mut flat_grads);
            flat_grads.extend_from_slice(&emb_grad);
            opt.step(&adam, "denoiser", &mut params, &mut flat_grads)?;
            let used = den.net.load_params(&params)?;
            den.attr_embed.data_mut().copy_from_slice(&params[used..]);
        }
        epoch_losses.push(epoch_loss / n as f64);
    }
    Ok((den, DenoiserTrace { epoch_losses }))
}

/// Per-transition noise for stochastic reverse sampling: one latent-dim
/// vector per sub-sequence step. Absent noise makes sampling deterministic.
#[derive(Debug, Clone)]
pub struct StepNoise(pub(crate) Vec<Vec<f64>>);

impl StepNoise {
    pub fn draw(steps: usize, latent_dim: usize, rng: &mut RngStream) -> Self {
        StepNoise(
            (0..steps)
                .map(|_| rng.normal_vec(latent_dim))
                .collect(),
        )
    }
}

/// The descending sub-sequence T = t_1 > t_2 > ... > t_S >= 1 visited by
/// accelerated sampling; the final update lands on t = 0.
pub fn ddim_times(t_max: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("sampling needs at least one step".into()));
    }
    if steps > t_max {
        return Err(Error::InvalidArgument(format!(
            "{steps} sampling steps exceed the {t_max}-step schedule"
        )));
    }
    let mut times = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = ((t_max * (steps - i)) as f64 / steps as f64).round() as usize;
        times.push(t.clamp(1, t_max));
    }
    times.dedup();
    Ok(times)
}

/// Accelerated reverse sampling from z_T to z0 for an arbitrary noise
/// predictor. Each visited step forms the z0 estimate
/// (z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t) and moves to the next step;
/// with injected noise the transition uses the forward-posterior variance,
/// without it the variance is zero and the pass is deterministic.
pub fn ddim_sample<F>(
    mut eps_fn: F,
    schedule: &Schedule,
    z_start: &[f64],
    steps: usize,
    noise: Option<&StepNoise>,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let times = ddim_times(schedule.t_max(), steps)?;
    if let Some(sn) = noise {
        if sn.0.len() != times.len() {
            return Err(Error::Shape {
                context: "step noise count",
                expected: times.len(),
                got: sn.0.len(),
            });
        }
    }
    let d = z_start.len();
    let mut z = z_start.to_vec();
    for (i, &t) in times.iter().enumerate() {
        let t_next = if i + 1 < times.len() { times[i + 1] } else { 0 };
        let ab_t = schedule.alpha_bar(t);
        let ab_n = schedule.alpha_bar(t_next);
        let eps = eps_fn(&z, t)?;
        if eps.len() != d {
            return Err(Error::Shape {
                context: "predicted noise",
                expected: d,
                got: eps.len(),
            });
        }
        let (sab_t, sab_n) = (ab_t.sqrt(), ab_n.sqrt());
        let rem_t = (1.0 - ab_t).sqrt();
        let sigma2 = match noise {
            Some(_) => (1.0 - ab_n) / (1.0 - ab_t) * (1.0 - ab_t / ab_n),
            None => 0.0,
        };
        let dir = (1.0 - ab_n - sigma2).max(0.0).sqrt();
        for j in 0..d {
            let z0_hat = (z[j] - rem_t * eps[j]) / sab_t;
            let mut next = sab_n * z0_hat + dir * eps[j];
            if let Some(sn) = noise {
                next += sigma2.sqrt() * sn.0[i][j];
            }
            z[j] = next;
        }
        if !linalg::all_finite(&z) {
            return Err(Error::NonFinite(format!("reverse sample at step {t}")));
        }
    }
    Ok(z)
}

/// Reverse sampling through a trained denoiser under fixed conditioning.
pub fn sample_reverse(
    den: &Denoiser,
    schedule: &Schedule,
    z_start: &[f64],
    cond: Cond,
    steps: usize,
    noise: Option<&StepNoise>,
) -> Result<Vec<f64>> {
    ddim_sample(
        |z, t| den.predict_eps(z, t, cond),
        schedule,
        z_start,
        steps,
        noise,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::mean;

    const ABAR_250: f64 = 0.7594312682654413;

    #[test]
    fn reduced_schedule_alpha_bar_matches_direct_product() {
        let s = Schedule::linear(DEFAULT_T_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        assert_eq!(s.t_max(), 250);
        assert!((s.beta(1) - 2.0e-4).abs() < 1e-18);
        assert!((s.beta(250) - 2.0e-3).abs() < 1e-18);
        assert!((s.alpha_bar(250) - ABAR_250).abs() < 1e-14);
        assert!(s.alpha_bar(250) < s.alpha_bar(1));
        for t in 1..=250 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            if t > 1 {
                assert!(s.beta(t) > s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn zero_beta_schedule_is_the_identity_corruption() {
        let s = Schedule::from_betas(vec![0.0; 5]);
        let z0 = vec![1.25, -0.5];
        let noise = vec![3.0, -7.0];
        for t in 1..=5 {
            assert_eq!(forward_diffuse(&s, &z0, t, &noise).unwrap(), z0);
        }
    }

    #[test]
    fn forward_moments_match_the_law() {
        let s = Schedule::linear(50, 0.01, 0.2).unwrap();
        let z0 = vec![2.0, -1.0, 0.5];
        let mut rng = RngStream::new(42, "forward-law");
        for t in [1, 10, 25, 50] {
            let n = 20_000;
            let mut std_sum = 0.0;
            let mut std_sq = 0.0;
            for _ in 0..n {
                let noise = rng.normal_vec(3);
                let zt = forward_diffuse(&s, &z0, t, &noise).unwrap();
                let ab = s.alpha_bar(t);
                for j in 0..3 {
                    let std = (zt[j] - ab.sqrt() * z0[j]) / (1.0 - ab).sqrt();
                    std_sum += std;
                    std_sq += std * std;
                }
            }
            let m = n as f64 * 3.0;
            let mean_hat = std_sum / m;
            let var_hat = std_sq / m;
            assert!(mean_hat.abs() < 3.0 / m.sqrt(), "t={t} mean {mean_hat}");
            assert!((var_hat - 1.0).abs() < 3.0 * (2.0 / m).sqrt(), "t={t} var {var_hat}");
        }
    }

    #[test]
    fn forward_rejects_bad_steps_and_shapes() {
        let s = Schedule::linear(10, 0.01, 0.1).unwrap();
        assert!(forward_diffuse(&s, &[0.0], 0, &[0.0]).is_err());
        assert!(forward_diffuse(&s, &[0.0], 11, &[0.0]).is_err());
        assert!(forward_diffuse(&s, &[0.0, 1.0], 1, &[0.0]).is_err());
        assert!(Schedule::linear(1, 0.01, 0.1).is_err());
        assert!(Schedule::linear(10, 0.0, 0.1).is_err());
        assert!(Schedule::linear(10, 0.2, 0.1).is_err());
    }

    #[test]
    fn zero_denoiser_collapses_to_rescaling() {
        let s = Schedule::linear(DEFAULT_T_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        let z_t = vec![0.7, -1.3, 2.2];
        let zero_eps = |z: &[f64], _t: usize| Ok(vec![0.0; z.len()]);
        let z0 = ddim_sample(zero_eps, &s, &z_t, 50, None).unwrap();
        let ab = s.alpha_bar(s.t_max());
        for j in 0..3 {
            let want = z_t[j] / ab.sqrt();
            assert!(
                ((z0[j] - want) / want).abs() < 1e-12,
                "coord {j}: {} vs {want}",
                z0[j]
            );
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = Schedule::linear(DEFAULT_T_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        let mut rng = RngStream::new(9, "den");
        let den = Denoiser::new(4, &[32], &mut rng).unwrap();
        let z_t: Vec<f64> = rng.normal_vec(4);
        let a = ddim_sample(|z, t| den.predict_eps(z, t, Cond::Attr(1)), &s, &z_t, 50, None).unwrap();
        let b = ddim_sample(|z, t| den.predict_eps(z, t, Cond::Attr(1)), &s, &z_t, 50, None).unwrap();
        assert_eq!(a, b);
        let mut n1 = RngStream::new(13, "noise");
        let mut n2 = RngStream::new(13, "noise");
        let sn1 = StepNoise::draw(50, 4, &mut n1);
        let sn2 = StepNoise::draw(50, 4, &mut n2);
        let c = sample_reverse(&den, &s, &z_t, Cond::Attr(1), 50, Some(&sn1)).unwrap();
        let d = sample_reverse(&den, &s, &z_t, Cond::Attr(1), 50, Some(&sn2)).unwrap();
        assert_eq!(c, d);
        assert_ne!(a, c);
        let e = sample_reverse(&den, &s, &z_t, Cond::Attr(0), 50, Some(&sn1)).unwrap();
        assert_ne!(c, e);
    }

    /// With z0 ~ N(0,1) the optimal predictor is eps(z_t, t) =
    /// sqrt(1 - abar_t) z_t, and the stochastic reverse chain's conditional
    /// mean given z_T is exactly sqrt(abar_T) z_T for any sub-sequence.
    #[test]
    fn analytic_gaussian_oracle_recovers_the_posterior_mean() {
        let s = Schedule::linear(DEFAULT_T_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        let analytic = |z: &[f64], t: usize| {
            let ab = s.alpha_bar(t);
            Ok(z.iter().map(|&v| (1.0 - ab).sqrt() * v).collect())
        };
        let mut rng = RngStream::new(31, "oracle");
        for &z_t in &[1.3, -0.8] {
            let n = 4000;
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let sn = StepNoise::draw(50, 1, &mut rng);
                let z0 = ddim_sample(analytic, &s, &[z_t], 50, Some(&sn)).unwrap();
                samples.push(z0[0]);
            }
            let m = mean(&samples);
            let var = crate::numerics::linalg::sample_variance(&samples);
            let se = (var / n as f64).sqrt();
            let want = s.alpha_bar(s.t_max()).sqrt() * z_t;
            assert!(
                (m - want).abs() < 3.0 * se,
                "z_T={z_t}: mean {m} vs {want} (se {se})"
            );
        }
    }

    #[test]
    fn ddim_times_are_strictly_decreasing_and_bounded() {
        for (t_max, steps) in [(250, 50), (250, 250), (250, 1), (10, 3), (7, 7)] {
            let times = ddim_times(t_max, steps).unwrap();
            assert_eq!(times[0], t_max);
            for w in times.windows(2) {
                assert!(w[0] > w[1]);
            }
            assert!(*times.last().unwrap() >= 1);
        }
        assert!(ddim_times(10, 11).is_err());
        assert!(ddim_times(10, 0).is_err());
    }

    #[test]
    fn zeroed_denoiser_loss_equals_latent_dim() {
        let s = Schedule::linear(DEFAULT_T_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        let d = 6;
        let mut rng = RngStream::new(3, "zero-loss");
        let mut den = Denoiser::new(d, &[16], &mut rng).unwrap();
        let zeros = vec![0.0; den.net.param_count()];
        den.net.load_params(&zeros).unwrap();
        // E ||eps - 0||^2 = d; average over many draws, 3 SE band with
        // Var(chi2_d) = 2d.
        let n = 20_000;
        let mut total = 0.0;
        for _ in 0..n {
            let z0 = rng.normal_vec(d);
            let eps = rng.normal_vec(d);
            let t = 1 + rng.below(s.t_max());
            let z_t = forward_diffuse(&s, &z0, t, &eps).unwrap();
            let pred = den.predict_eps(&z_t, t, Cond::Attr(0)).unwrap();
            total += pred
                .iter()
                .zip(&eps)
                .map(|(p, e)| (p - e) * (p - e))
                .sum::<f64>();
        }
        let avg = total / n as f64;
        let se = (2.0 * d as f64 / n as f64).sqrt();
        assert!((avg - d as f64).abs() < 3.0 * se, "avg {avg}");
    }

    #[test]
    fn training_reduces_loss_for_most_seeds() {
        let s = Schedule::linear(50, 0.005, 0.05).unwrap();
        let mut wins = 0;
        for seed in 0..5 {
            let mut data_rng = RngStream::new(seed, "den-data");
            let latents: Vec<Vec<f64>> = (0..256)
                .map(|_| {
                    let c = if data_rng.bernoulli(0.5) { 2.0 } else { -2.0 };
                    vec![c + 0.1 * data_rng.standard_normal(), 0.5 * data_rng.standard_normal()]
                })
                .collect();
            let attrs: Vec<u8> = (0..256).map(|_| u8::from(data_rng.bernoulli(0.3))).collect();
            let cfg = DenoiserTrainConfig {
                hidden: vec![32],
                epochs: 8,
                ..DenoiserTrainConfig::default()
            };
            let mut rng = RngStream::new(seed, "den-train");
            let (_, trace) = train_denoiser(&latents, &attrs, &s, &cfg, &mut rng).unwrap();
            if trace.epoch_losses.last().unwrap() < trace.epoch_losses.first().unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 3, "loss fell for only {wins} of 5 seeds");
    }

    #[test]
    fn conditioning_rows_differ_after_training() {
        let s = Schedule::linear(50, 0.005, 0.05).unwrap();
        let mut data_rng = RngStream::new(7, "cond-data");
        // Attribute determines the latent cluster, so the conditional
        // scores must differ between a=0 and a=1.
        let mut latents = Vec::new();
        let mut attrs = Vec::new();
        for _ in 0..256 {
            let a = u8::from(data_rng.bernoulli(0.5));
            let c = if a == 1 { 3.0 } else { -3.0 };
            latents.push(vec![c + 0.1 * data_rng.standard_normal()]);
            attrs.push(a);
        }
        let cfg = DenoiserTrainConfig {
            hidden: vec![32],
            epochs: 30,
            ..DenoiserTrainConfig::default()
        };
        let mut rng = RngStream::new(8, "cond-train");
        let (den, _) = train_denoiser(&latents, &attrs, &s, &cfg, &mut rng).unwrap();
        let e0 = den.predict_eps(&[0.0], 25, Cond::Attr(0)).unwrap();
        let e1 = den.predict_eps(&[0.0], 25, Cond::Attr(1)).unwrap();
        // At z=0 the true scores point toward opposite clusters.
        assert!((e0[0] - e1[0]).abs() > 0.2, "e0 {} e1 {}", e0[0], e1[0]);
    }
}
