//! Mutual-information lower bounds via the Donsker-Varadhan dual.
//!
//! A scalar critic T(u, v) scores concatenated pairs; the bound is
//! mean over joint pairs of T minus log mean over product-of-marginals
//! pairs of e^T. Marginal pairs come from a caller-supplied permutation of
//! the v side, so estimates are reproducible and two models can be
//! compared on identical pairings.

use crate::numerics::{Activation, AdamConfig, DenseNet, NetGrads, OptimState, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Critic {
    pub(crate) net: DenseNet,
}

impl Critic {
    pub fn new(u_dim: usize, v_dim: usize, hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut dims = vec![u_dim + v_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(Critic {
            net: DenseNet::relu_stack(&dims, Activation::Identity, rng)?,
        })
    }

    pub fn pair_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn score(&self, u: &[f64], v: &[f64], buf: &mut Vec<f64>) -> Result<f64> {
        buf.clear();
        buf.extend_from_slice(u);
        buf.extend_from_slice(v);
        Ok(self.net.forward(buf)?[0])
    }
}

/// log(mean(exp(x))) without overflow.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

/// Donsker-Varadhan bound: joint pairs are (us[i], vs[i]), marginal pairs
/// are (us[i], vs[perm[i]]).
pub fn mine_estimate(critic: &Critic, us: &[Vec<f64>], vs: &[Vec<f64>], perm: &[usize]) -> Result<f64> {
    if us.is_empty() || us.len() != vs.len() || perm.len() != us.len() {
        return Err(Error::InvalidArgument(
            "MI estimate needs aligned nonempty samples and permutation".into(),
        ));
    }
    let mut buf = Vec::with_capacity(critic.pair_dim());
    let mut joint = 0.0;
    let mut marg = Vec::with_capacity(us.len());
    for i in 0..us.len() {
        joint += critic.score(&us[i], &vs[i], &mut buf)?;
        let j = perm[i];
        if j >= vs.len() {
            return Err(Error::InvalidArgument(format!(
                "permutation index {j} out of range"
            )));
        }
        marg.push(critic.score(&us[i], &vs[j], &mut buf)?);
    }
    Ok(joint / us.len() as f64 - log_mean_exp(&marg))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CriticTrainConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for CriticTrainConfig {
    fn default() -> Self {
        CriticTrainConfig {
            hidden: vec![64, 64],
            steps: 3000,
            batch_size: 256,
            learning_rate: 1e-3,
        }
    }
}

/// One ascent step on the DV bound over the given joint/marginal index
/// batches. Returns the batch bound value before the update.
pub(crate) fn critic_ascent_step(
    critic: &mut Critic,
    us: &[Vec<f64>],
    vs: &[Vec<f64>],
    joint_idx: &[usize],
    marg_idx: &[(usize, usize)],
    grads: &mut NetGrads,
    opt: &mut OptimState,
    adam: &AdamConfig,
) -> Result<f64> {
    let b = joint_idx.len();
    let m = marg_idx.len();
    if b == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty critic batch".into()));
    }
    grads.reset();
    let mut trace = Default::default();
    let mut buf = Vec::with_capacity(critic.pair_dim());
    let mut joint_sum = 0.0;
    // Maximizing the bound means descending its negation: joint terms get
    // gradient -1/b each.
    for &i in joint_idx {
        buf.clear();
        buf.extend_from_slice(&us[i]);
        buf.extend_from_slice(&vs[i]);
        critic.net.forward_trace(&buf, &mut trace)?;
        joint_sum += trace.output()[0];
        critic.net.backward(&trace, &[-1.0 / b as f64], grads);
    }
    // Marginal terms carry softmax weights from d/dT log-sum-exp. Score
    // first, then backpropagate with the weights.
    let mut scores = Vec::with_capacity(m);
    for &(i, j) in marg_idx {
        buf.clear();
        buf.extend_from_slice(&us[i]);
        buf.extend_from_slice(&vs[j]);
        scores.push(critic.net.forward(&buf)?[0]);
    }
    let lme = log_mean_exp(&scores);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    for (k, &(i, j)) in marg_idx.iter().enumerate() {
        let w = (scores[k] - max).exp() / denom;
        buf.clear();
        buf.extend_from_slice(&us[i]);
        buf.extend_from_slice(&vs[j]);
        critic.net.forward_trace(&buf, &mut trace)?;
        critic.net.backward(&trace, &[w], grads);
    }
    let mut params = Vec::with_capacity(critic.net.param_count());
    critic.net.push_params(&mut params);
    let mut flat = Vec::with_capacity(critic.net.param_count());
    DenseNet::push_grads(grads, &mut flat);
    opt.step(adam, "critic", &mut params, &mut flat)?;
    critic.net.load_params(&params)?;
    Ok(joint_sum / b as f64 - lme)
}

/// Fit a critic by stochastic ascent on the DV bound.
pub fn train_critic(
    us: &[Vec<f64>],
    vs: &[Vec<f64>],
    cfg: &CriticTrainConfig,
    rng: &mut RngStream,
) -> Result<Critic> {
    if us.is_empty() || us.len() != vs.len() {
        return Err(Error::InvalidArgument(
            "critic training needs aligned nonempty samples".into(),
        ));
    }
    let n = us.len();
    let mut init_rng = rng.fork("init");
    let mut critic = Critic::new(us[0].len(), vs[0].len(), &cfg.hidden, &mut init_rng)?;
    let mut opt = OptimState::new(critic.net.param_count());
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut grads = NetGrads::zeros_like(&critic.net);
    let b = cfg.batch_size.min(n).max(2);
    let mut step_rng = rng.fork("steps");
    for _ in 0..cfg.steps {
        let joint_idx: Vec<usize> = (0..b).map(|_| step_rng.below(n)).collect();
        let marg_idx: Vec<(usize, usize)> = (0..b)
            .map(|_| (step_rng.below(n), step_rng.below(n)))
            .collect();
        critic_ascent_step(
            &mut critic,
            us,
            vs,
            &joint_idx,
            &marg_idx,
            &mut grads,
            &mut opt,
            &adam,
        )?;
    }
    Ok(critic)
}

pub(crate) fn one_hot_attr(a: u8) -> Vec<f64> {
    vec![f64::from(a == 0), f64::from(a == 1)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::mean;

    /// -0.5 ln(1 - 0.81), the closed-form MI of a rho=0.9 Gaussian pair.
    const MI_RHO_09: f64 = 0.8303656034108256;

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = RngStream::new(seed, "gauss-pair");
        let mut us = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for _ in 0..n {
            let a = rng.standard_normal();
            let b = rng.standard_normal();
            us.push(vec![a]);
            vs.push(vec![rho * a + (1.0 - rho * rho).sqrt() * b]);
        }
        (us, vs)
    }

    #[test]
    fn zero_critic_estimates_zero() {
        let mut rng = RngStream::new(1, "zero-critic");
        let mut critic = Critic::new(1, 1, &[8], &mut rng).unwrap();
        let zeros = vec![0.0; critic.net.param_count()];
        critic.net.load_params(&zeros).unwrap();
        let (us, vs) = gaussian_pair(500, 0.9, 2);
        let perm = RngStream::new(3, "perm").permutation(500);
        let got = mine_estimate(&critic, &us, &vs, &perm).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn log_mean_exp_is_stable_and_correct() {
        let xs = [1.0f64, 2.0, 3.0];
        let direct = ((xs[0].exp() + xs[1].exp() + xs[2].exp()) / 3.0).ln();
        assert!((log_mean_exp(&xs) - direct).abs() < 1e-12);
        // Values that would overflow exp directly.
        let big = [1000.0, 1001.0];
        let got = log_mean_exp(&big);
        let want = 1001.0 + ((1.0 + (-1.0f64).exp()) / 2.0).ln();
        assert!((got - want).abs() < 1e-9);
        assert!(log_mean_exp(&[-1e308, -1e308]).is_finite() || log_mean_exp(&[-1e308, -1e308]) < 0.0);
    }

    #[test]
    fn correlated_gaussian_bound_approaches_closed_form() {
        let n = 100_000;
        let (us, vs) = gaussian_pair(n, 0.9, 40);
        let cfg = CriticTrainConfig::default();
        let mut rng = RngStream::new(41, "train");
        let critic = train_critic(&us, &vs, &cfg, &mut rng).unwrap();
        let perm = RngStream::new(42, "perm").permutation(n);
        let got = mine_estimate(&critic, &us, &vs, &perm).unwrap();
        assert!(
            (got - MI_RHO_09).abs() < 0.05,
            "estimate {got} vs {MI_RHO_09}"
        );
    }

    #[test]
    fn independent_pair_stays_near_zero() {
        let n = 20_000;
        let (us, vs) = gaussian_pair(n, 0.0, 50);
        let cfg = CriticTrainConfig {
            steps: 1000,
            ..CriticTrainConfig::default()
        };
        let mut rng = RngStream::new(51, "train");
        let critic = train_critic(&us, &vs, &cfg, &mut rng).unwrap();
        let perm = RngStream::new(52, "perm").permutation(n);
        let got = mine_estimate(&critic, &us, &vs, &perm).unwrap();
        assert!(got.abs() <= 0.02, "estimate {got}");
    }

    #[test]
    fn estimate_validates_inputs() {
        let mut rng = RngStream::new(1, "v");
        let critic = Critic::new(1, 1, &[4], &mut rng).unwrap();
        let (us, vs) = gaussian_pair(10, 0.5, 9);
        assert!(mine_estimate(&critic, &[], &[], &[]).is_err());
        assert!(mine_estimate(&critic, &us, &vs[..5].to_vec(), &(0..10).collect::<Vec<_>>()).is_err());
        let bad_perm = vec![99; 10];
        assert!(mine_estimate(&critic, &us, &vs, &bad_perm).is_err());
    }

    #[test]
    fn ascent_step_raises_the_batch_bound() {
        let (us, vs) = gaussian_pair(2000, 0.9, 60);
        let mut rng = RngStream::new(61, "asc");
        let mut critic = Critic::new(1, 1, &[32], &mut rng).unwrap();
        let mut opt = OptimState::new(critic.net.param_count());
        let adam = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        let mut grads = NetGrads::zeros_like(&critic.net);
        let joint: Vec<usize> = (0..512).collect();
        let marg: Vec<(usize, usize)> = (0..512).map(|i| (i, 512 + i)).collect();
        let mut bounds = Vec::new();
        for _ in 0..60 {
            bounds.push(
                critic_ascent_step(&mut critic, &us, &vs, &joint, &marg, &mut grads, &mut opt, &adam)
                    .unwrap(),
            );
        }
        let early = mean(&bounds[..10]);
        let late = mean(&bounds[50..]);
        assert!(late > early + 0.05, "early {early}, late {late}");
    }
}
