//! The latent perturbation map and its adversarial training.
//!
//! phi(z) = z + lambda * m(z)/||m(z)|| moves every latent a fixed distance
//! lambda along a learned direction; samples where m vanishes pass through
//! unchanged. Training alternates five critic ascent steps on the
//! Donsker-Varadhan bound between phi(z) and the attribute against one
//! descent step on the perturbation network, so the direction field learns
//! to erase attribute information while the critic keeps chasing it.

use super::mine::{critic_ascent_step, log_mean_exp, mine_estimate, one_hot_attr, Critic};
use crate::numerics::linalg::{dot, norm2};
use crate::numerics::net::Trace;
use crate::numerics::{Activation, AdamConfig, DenseNet, NetGrads, OptimState, RngStream};
use crate::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Disentangler {
    pub(crate) net: DenseNet,
    pub(crate) lambda: f64,
}

impl Disentangler {
    pub fn new(latent_dim: usize, hidden: &[usize], lambda: f64, rng: &mut RngStream) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "perturbation scale {lambda} must be finite and nonnegative"
            )));
        }
        let mut dims = vec![latent_dim];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        Ok(Disentangler {
            net: DenseNet::relu_stack(&dims, Activation::Identity, rng)?,
            lambda,
        })
    }

    pub(crate) fn from_parts(net: DenseNet, lambda: f64) -> Result<Self> {
        if net.input_dim() != net.output_dim() {
            return Err(Error::Store("perturbation network must preserve dimension".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Store(format!("bad perturbation scale {lambda}")));
        }
        Ok(Disentangler { net, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// z + lambda * m(z)/||m(z)||; identity where the direction vanishes.
    pub fn phi(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.net.forward(z)?;
        let norm = norm2(&m);
        if norm < NORM_FLOOR || self.lambda == 0.0 {
            return Ok(z.to_vec());
        }
        Ok(z.iter()
            .zip(&m)
            .map(|(&zj, &mj)| zj + self.lambda * mj / norm)
            .collect())
    }

    /// phi plus backpropagation: accumulates d(loss)/d(net params) given
    /// the upstream gradient in phi's output. The unit normalization
    /// projects out the radial component: dphi/dm = lambda (I - uu^T)/||m||.
    fn phi_backward(
        &self,
        z: &[f64],
        upstream: &[f64],
        trace: &mut Trace,
        grads: &mut NetGrads,
    ) -> Result<Vec<f64>> {
        self.net.forward_trace(z, trace)?;
        let m = trace.output().to_vec();
        let norm = norm2(&m);
        let mut out = z.to_vec();
        if norm < NORM_FLOOR || self.lambda == 0.0 {
            return Ok(out);
        }
        let u: Vec<f64> = m.iter().map(|&v| v / norm).collect();
        for j in 0..out.len() {
            out[j] += self.lambda * u[j];
        }
        let radial = dot(upstream, &u);
        let dm: Vec<f64> = upstream
            .iter()
            .zip(&u)
            .map(|(&g, &uj)| self.lambda * (g - radial * uj) / norm)
            .collect();
        self.net.backward(trace, &dm, grads);
        Ok(out)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DisentangleTrainConfig {
    pub perturb_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub lambda: f64,
    pub phi_steps: usize,
    pub critic_steps_per_phi: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DisentangleTrainConfig {
    fn default() -> Self {
        DisentangleTrainConfig {
            perturb_hidden: vec![64],
            critic_hidden: vec![64, 64],
            lambda: 1e-3,
            phi_steps: 300,
            critic_steps_per_phi: 5,
            batch_size: 64,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DisentangleTrace {
    /// DV bound seen at each perturbation step (training batches).
    pub bound_history: Vec<f64>,
    /// Bound of the final critic on the training data under the initial
    /// (randomly initialized) perturbation and under the trained one,
    /// evaluated with one shared permutation.
    pub initial_bound: f64,
    pub final_bound: f64,
}

/// Adversarial training of the perturbation against a MI critic.
/// Returns the trained map, the final critic (for held-out evaluation),
/// and a trace of the bound.
pub fn train_disentangler(
    latents: &[Vec<f64>],
    attrs: &[u8],
    cfg: &DisentangleTrainConfig,
    rng: &mut RngStream,
) -> Result<(Disentangler, Critic, DisentangleTrace)> {
    if latents.is_empty() || latents.len() != attrs.len() {
        return Err(Error::InvalidArgument(
            "disentangler training needs aligned nonempty latents and attributes".into(),
        ));
    }
    if !(cfg.lambda > 0.0) {
        return Err(Error::InvalidArgument("training requires lambda > 0".into()));
    }
    if cfg.critic_steps_per_phi == 0 {
        return Err(Error::InvalidArgument("critic needs at least one step per phi step".into()));
    }
    let n = latents.len();
    let d = latents[0].len();
    let mut init_rng = rng.fork("init");
    let phi0 = Disentangler::new(d, &cfg.perturb_hidden, cfg.lambda, &mut init_rng)?;
    let mut phi = phi0.clone();
    let mut critic = Critic::new(d, 2, &cfg.critic_hidden, &mut init_rng)?;

    let attrs_hot: Vec<Vec<f64>> = attrs.iter().map(|&a| one_hot_attr(a)).collect();
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut critic_opt = OptimState::new(critic.net.param_count());
    let mut phi_opt = OptimState::new(phi.net.param_count());
    let mut critic_grads = NetGrads::zeros_like(&critic.net);
    let mut critic_scratch = NetGrads::zeros_like(&critic.net);
    let mut phi_grads = NetGrads::zeros_like(&phi.net);
    let b = cfg.batch_size.min(n).max(2);
    let mut step_rng = rng.fork("steps");
    let mut bound_history = Vec::with_capacity(cfg.phi_steps);
    let mut phi_trace = Trace::default();
    let mut critic_trace = Trace::default();
    let mut pair = Vec::with_capacity(d + 2);

    for _step in 0..cfg.phi_steps {
        // Critic phase: ascend the bound on phi-transformed batches.
        for _ in 0..cfg.critic_steps_per_phi {
            let joint_idx: Vec<usize> = (0..b).map(|_| step_rng.below(n)).collect();
            let marg_idx: Vec<(usize, usize)> =
                (0..b).map(|_| (step_rng.below(n), step_rng.below(n))).collect();
            let mut need: Vec<usize> = joint_idx.clone();
            need.extend(marg_idx.iter().flat_map(|&(i, j)| [i, j]));
            need.sort_unstable();
            need.dedup();
            // Transform only the latents this batch touches, keyed by row.
            let mut us: Vec<Vec<f64>> = vec![Vec::new(); 0];
            let mut lookup = std::collections::HashMap::new();
            for &i in &need {
                lookup.insert(i, us.len());
                us.push(phi.phi(&latents[i])?);
            }
            let joint_l: Vec<usize> = joint_idx.iter().map(|i| lookup[i]).collect();
            let marg_l: Vec<(usize, usize)> = marg_idx
                .iter()
                .map(|&(i, j)| (lookup[&i], lookup[&j]))
                .collect();
            let vs_l: Vec<Vec<f64>> = need.iter().map(|&i| attrs_hot[i].clone()).collect();
            critic_ascent_step(
                &mut critic,
                &us,
                &vs_l,
                &joint_l,
                &marg_l,
                &mut critic_grads,
                &mut critic_opt,
                &adam,
            )?;
        }

        // Perturbation phase: descend the same bound through phi.
        let joint_idx: Vec<usize> = (0..b).map(|_| step_rng.below(n)).collect();
        let marg_idx: Vec<(usize, usize)> =
            (0..b).map(|_| (step_rng.below(n), step_rng.below(n))).collect();
        phi_grads.reset();

        let mut joint_sum = 0.0;
        let mut marg_scores = Vec::with_capacity(b);
        // First pass: scores for the log-sum-exp weights.
        for &(i, j) in &marg_idx {
            let u = phi.phi(&latents[i])?;
            let s = critic.score(&u, &attrs_hot[j], &mut pair)?;
            marg_scores.push(s);
        }
        let max = marg_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = marg_scores.iter().map(|&s| (s - max).exp()).sum();

        // Joint terms: d bound / d u = +critic input grad / b; phi descends
        // the bound, so the loss gradient is the same sign.
        for &i in &joint_idx {
            let u = phi.phi(&latents[i])?;
            pair.clear();
            pair.extend_from_slice(&u);
            pair.extend_from_slice(&attrs_hot[i]);
            critic.net.forward_trace(&pair, &mut critic_trace)?;
            joint_sum += critic_trace.output()[0];
            critic_scratch.reset();
            let din = critic.net.backward(&critic_trace, &[1.0 / b as f64], &mut critic_scratch);
            phi.phi_backward(&latents[i], &din[..d], &mut phi_trace, &mut phi_grads)?;
        }
        // Marginal terms enter with negative softmax weights.
        for (k, &(i, j)) in marg_idx.iter().enumerate() {
            let u = phi.phi(&latents[i])?;
            pair.clear();
            pair.extend_from_slice(&u);
            pair.extend_from_slice(&attrs_hot[j]);
            critic.net.forward_trace(&pair, &mut critic_trace)?;
            let w = (marg_scores[k] - max).exp() / denom;
            critic_scratch.reset();
            let din = critic.net.backward(&critic_trace, &[-w], &mut critic_scratch);
            phi.phi_backward(&latents[i], &din[..d], &mut phi_trace, &mut phi_grads)?;
        }
        bound_history.push(joint_sum / b as f64 - log_mean_exp(&marg_scores));

        let mut params = Vec::with_capacity(phi.net.param_count());
        phi.net.push_params(&mut params);
        let mut flat = Vec::with_capacity(phi.net.param_count());
        DenseNet::push_grads(&phi_grads, &mut flat);
        phi_opt.step(&adam, "perturbation", &mut params, &mut flat)?;
        phi.net.load_params(&params)?;
    }

    // Compare initial and trained perturbations under the one fixed critic
    // and permutation, on the training latents.
    let perm = rng.fork("eval-perm").permutation(n);
    let initial_bound = attr_bound(&critic, latents, attrs, Some(&phi0), &perm)?;
    let final_bound = attr_bound(&critic, latents, attrs, Some(&phi), &perm)?;
    Ok((
        phi,
        critic,
        DisentangleTrace {
            bound_history,
            initial_bound,
            final_bound,
        },
    ))
}

/// DV bound between (optionally perturbed) latents and one-hot attributes
/// under a fixed critic and pairing permutation.
pub fn attr_bound(
    critic: &Critic,
    latents: &[Vec<f64>],
    attrs: &[u8],
    phi: Option<&Disentangler>,
    perm: &[usize],
) -> Result<f64> {
    if latents.len() != attrs.len() {
        return Err(Error::Shape {
            context: "attr_bound attrs",
            expected: latents.len(),
            got: attrs.len(),
        });
    }
    let us: Vec<Vec<f64>> = match phi {
        Some(p) => latents.iter().map(|z| p.phi(z)).collect::<Result<_>>()?,
        None => latents.to_vec(),
    };
    let vs: Vec<Vec<f64>> = attrs.iter().map(|&a| one_hot_attr(a)).collect();
    mine_estimate(critic, &us, &vs, perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::{central_diff, rel_err};
    use crate::numerics::linalg;

    #[test]
    fn zero_lambda_is_the_identity() {
        let mut rng = RngStream::new(1, "zero-lambda");
        let phi = Disentangler::new(3, &[8], 0.0, &mut rng).unwrap();
        let z = vec![0.3, -1.1, 2.2];
        assert_eq!(phi.phi(&z).unwrap(), z);
    }

    #[test]
    fn displacement_norm_equals_lambda() {
        let mut rng = RngStream::new(2, "unit-norm");
        let lambda = 1e-3;
        let phi = Disentangler::new(4, &[16], lambda, &mut rng).unwrap();
        for _ in 0..20 {
            let z = rng.normal_vec(4);
            let out = phi.phi(&z).unwrap();
            let disp: Vec<f64> = out.iter().zip(&z).map(|(a, b)| a - b).collect();
            let norm = linalg::norm2(&disp);
            if norm == 0.0 {
                continue;
            }
            assert!(
                (norm - lambda).abs() < 1e-12,
                "displacement {norm} vs {lambda}"
            );
        }
    }

    #[test]
    fn vanishing_direction_passes_through() {
        let mut rng = RngStream::new(3, "vanish");
        let mut phi = Disentangler::new(2, &[4], 1e-3, &mut rng).unwrap();
        let zeros = vec![0.0; phi.net.param_count()];
        phi.net.load_params(&zeros).unwrap();
        let z = vec![0.5, -0.25];
        assert_eq!(phi.phi(&z).unwrap(), z);
    }

    #[test]
    fn phi_backward_matches_finite_differences() {
        let mut rng = RngStream::new(4, "fd-phi");
        let net = DenseNet::new(&[3, 8, 3], &[Activation::Tanh, Activation::Identity], &mut rng)
            .unwrap();
        let phi = Disentangler::from_parts(net, 0.05).unwrap();
        let z = vec![0.4, -0.7, 0.9];
        let upstream = vec![0.3, -1.0, 0.6];

        let loss_of = |p: &Disentangler| {
            let out = p.phi(&z).unwrap();
            dot(&out, &upstream)
        };

        let mut grads = NetGrads::zeros_like(&phi.net);
        let mut trace = Trace::default();
        phi.phi_backward(&z, &upstream, &mut trace, &mut grads).unwrap();
        let mut analytic = Vec::new();
        DenseNet::push_grads(&grads, &mut analytic);

        let mut flat = Vec::new();
        phi.net.push_params(&mut flat);
        let mut probe = RngStream::new(5, "which");
        for _ in 0..30 {
            let i = probe.below(flat.len());
            let mut f = |p: &[f64]| {
                let mut copy = phi.clone();
                copy.net.load_params(p).unwrap();
                loss_of(&copy)
            };
            let num = central_diff(&mut f, &flat, i, 1e-6);
            assert!(
                rel_err(num, analytic[i]) < 1e-4 || (num.abs() < 1e-9 && analytic[i].abs() < 1e-9),
                "param {i}: fd {num} vs {}",
                analytic[i]
            );
        }
    }

    fn informative_latents(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = RngStream::new(seed, "latents");
        let mut zs = Vec::with_capacity(n);
        let mut attrs = Vec::with_capacity(n);
        for _ in 0..n {
            let a = u8::from(rng.bernoulli(0.3));
            let shift = if a == 1 { 1.5 } else { -1.5 };
            zs.push(vec![
                shift + 0.5 * rng.standard_normal(),
                rng.standard_normal(),
                rng.standard_normal(),
            ]);
            attrs.push(a);
        }
        (zs, attrs)
    }

    #[test]
    fn training_lowers_the_bound_versus_initialization() {
        let mut wins = 0;
        for seed in 0..5 {
            let (zs, attrs) = informative_latents(1500, 100 + seed);
            let cfg = DisentangleTrainConfig {
                phi_steps: 150,
                ..DisentangleTrainConfig::default()
            };
            let mut rng = RngStream::new(seed, "train-dis");
            let (_, _, trace) = train_disentangler(&zs, &attrs, &cfg, &mut rng).unwrap();
            if trace.final_bound < trace.initial_bound {
                wins += 1;
            }
        }
        assert!(wins >= 3, "bound fell for only {wins} of 5 seeds");
    }

    #[test]
    fn training_is_deterministic() {
        let (zs, attrs) = informative_latents(300, 7);
        let cfg = DisentangleTrainConfig {
            phi_steps: 10,
            ..DisentangleTrainConfig::default()
        };
        let mut r1 = RngStream::new(9, "det");
        let mut r2 = RngStream::new(9, "det");
        let (p1, _, t1) = train_disentangler(&zs, &attrs, &cfg, &mut r1).unwrap();
        let (p2, _, t2) = train_disentangler(&zs, &attrs, &cfg, &mut r2).unwrap();
        assert_eq!(t1.bound_history, t2.bound_history);
        let z = vec![0.1, 0.2, 0.3];
        assert_eq!(p1.phi(&z).unwrap(), p2.phi(&z).unwrap());
    }
}
