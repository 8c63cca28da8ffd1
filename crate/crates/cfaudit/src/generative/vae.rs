//! Variational autoencoder over feature vectors.
//!
//! The encoder maps x to a diagonal Gaussian (mu, log-variance) in latent
//! space; the prior is standard normal. The decoder reconstructs x from a
//! latent sample concatenated with a learned attribute embedding, sharing
//! the three-row table convention (a=0, a=1, null) with the denoiser so
//! unconditional decoding exists. Training maximizes the usual ELBO with
//! reparameterized sampling and a unit-variance Gaussian likelihood.

use super::diffusion::{Cond, ATTR_EMBED_DIM, ATTR_ROWS};
use crate::numerics::net::Trace;
use crate::numerics::{linalg, Activation, AdamConfig, DenseNet, Matrix, NetGrads, OptimState, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Vae {
    pub(crate) encoder: DenseNet,
    pub(crate) decoder: DenseNet,
    pub(crate) attr_embed: Matrix,
    latent_dim: usize,
}

impl Vae {
    pub fn new(
        feature_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        if latent_dim == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument("zero VAE dimension".into()));
        }
        let mut enc_dims = vec![feature_dim];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(2 * latent_dim);
        let encoder = DenseNet::relu_stack(&enc_dims, Activation::Identity, rng)?;
        let mut dec_dims = vec![latent_dim + ATTR_EMBED_DIM];
        dec_dims.extend(hidden.iter().rev());
        dec_dims.push(feature_dim);
        let decoder = DenseNet::relu_stack(&dec_dims, Activation::Identity, rng)?;
        let attr_embed = Matrix::from_fn(ATTR_ROWS, ATTR_EMBED_DIM, |_, _| rng.standard_normal());
        Ok(Vae {
            encoder,
            decoder,
            attr_embed,
            latent_dim,
        })
    }

    pub(crate) fn from_parts(encoder: DenseNet, decoder: DenseNet, attr_embed: Matrix) -> Result<Self> {
        if encoder.output_dim() % 2 != 0 {
            return Err(Error::Store("encoder must emit (mu, logvar) pairs".into()));
        }
        let latent_dim = encoder.output_dim() / 2;
        if decoder.input_dim() != latent_dim + ATTR_EMBED_DIM
            || decoder.output_dim() != encoder.input_dim()
            || attr_embed.rows() != ATTR_ROWS
            || attr_embed.cols() != ATTR_EMBED_DIM
        {
            return Err(Error::Store("VAE parts have inconsistent shapes".into()));
        }
        Ok(Vae {
            encoder,
            decoder,
            attr_embed,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Posterior parameters (mu, logvar) for one input.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.encoder.forward(x)?;
        let (mu, logvar) = out.split_at(self.latent_dim);
        Ok((mu.to_vec(), logvar.to_vec()))
    }

    /// One reparameterized draw z = mu + exp(logvar/2) * eps.
    pub fn sample_posterior(&self, x: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let (mu, logvar) = self.encode(x)?;
        Ok(mu
            .iter()
            .zip(&logvar)
            .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.standard_normal())
            .collect())
    }

    pub fn decode(&self, z: &[f64], cond: Cond) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::Shape {
                context: "decoder latent",
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        let mut input = Vec::with_capacity(self.decoder.input_dim());
        input.extend_from_slice(z);
        input.extend_from_slice(self.attr_embed.row(cond.row()?));
        self.decoder.forward(&input)
    }
}

/// KL( N(mu, diag e^logvar) || N(0, I) ).
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

#[derive(Default)]
pub(crate) struct VaeScratch {
    enc_trace: Trace,
    dec_trace: Trace,
    dec_input: Vec<f64>,
}

/// Single-sample negative ELBO (up to the Gaussian normalizing constant)
/// and its gradients, accumulated into the three gradient buffers. The
/// reparameterization noise is supplied so training loops control it and
/// finite-difference checks can hold it fixed.
pub(crate) fn loss_and_grads(
    vae: &Vae,
    x: &[f64],
    cond: Cond,
    eps: &[f64],
    enc_grads: &mut NetGrads,
    dec_grads: &mut NetGrads,
    emb_grad: &mut [f64],
    scratch: &mut VaeScratch,
) -> Result<f64> {
    let d = vae.latent_dim;
    vae.encoder.forward_trace(x, &mut scratch.enc_trace)?;
    let enc_out = scratch.enc_trace.output().to_vec();
    let (mu, logvar) = enc_out.split_at(d);

    scratch.dec_input.clear();
    for j in 0..d {
        scratch.dec_input.push(mu[j] + (0.5 * logvar[j]).exp() * eps[j]);
    }
    let row = cond.row()?;
    scratch.dec_input.extend_from_slice(vae.attr_embed.row(row));
    vae.decoder.forward_trace(&scratch.dec_input, &mut scratch.dec_trace)?;
    let xhat = scratch.dec_trace.output();

    let mut recon = 0.0;
    let mut dl_dxhat = Vec::with_capacity(x.len());
    for (h, v) in xhat.iter().zip(x) {
        recon += 0.5 * (h - v) * (h - v);
        dl_dxhat.push(h - v);
    }
    let kl = kl_to_standard_normal(mu, logvar);

    let dinput = vae.decoder.backward(&scratch.dec_trace, &dl_dxhat, dec_grads);
    for j in 0..ATTR_EMBED_DIM {
        emb_grad[row * ATTR_EMBED_DIM + j] += dinput[d + j];
    }
    let mut denc = vec![0.0; 2 * d];
    for j in 0..d {
        let dz = dinput[j];
        denc[j] = dz + mu[j];
        denc[d + j] = dz * eps[j] * 0.5 * (0.5 * logvar[j]).exp() + 0.5 * (logvar[j].exp() - 1.0);
    }
    vae.encoder.backward(&scratch.enc_trace, &denc, enc_grads);

    let loss = recon + kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite("VAE loss".into()));
    }
    Ok(loss)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cond_dropout: f64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            latent_dim: 8,
            hidden: vec![64, 64],
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            cond_dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VaeTrace {
    /// Mean negative ELBO per epoch (reconstruction + KL, constants dropped).
    pub epoch_losses: Vec<f64>,
}

pub fn train_vae(
    xs: &[Vec<f64>],
    attrs: &[u8],
    cfg: &VaeTrainConfig,
    rng: &mut RngStream,
) -> Result<(Vae, VaeTrace)> {
    if xs.is_empty() || xs.len() != attrs.len() {
        return Err(Error::InvalidArgument(
            "VAE training needs aligned nonempty features and attributes".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.cond_dropout) {
        return Err(Error::InvalidArgument(format!(
            "conditioning dropout {} outside [0, 1)",
            cfg.cond_dropout
        )));
    }
    let k = xs[0].len();
    let d = cfg.latent_dim;
    let mut init_rng = rng.fork("init");
    let mut vae = Vae::new(k, d, &cfg.hidden, &mut init_rng)?;

    let n_enc = vae.encoder.param_count();
    let n_dec = vae.decoder.param_count();
    let n_emb = ATTR_ROWS * ATTR_EMBED_DIM;
    let mut opt = OptimState::new(n_enc + n_dec + n_emb);
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };

    let n = xs.len();
    let batch = cfg.batch_size.min(n).max(1);
    let mut enc_grads = NetGrads::zeros_like(&vae.encoder);
    let mut dec_grads = NetGrads::zeros_like(&vae.decoder);
    let mut emb_grad = vec![0.0; n_emb];
    let mut scratch = VaeScratch::default();
    let mut eps = vec![0.0; d];
    let mut params = Vec::with_capacity(n_enc + n_dec + n_emb);
    let mut flat = Vec::with_capacity(n_enc + n_dec + n_emb);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_rng = rng.fork(&format!("epoch/{epoch}"));
        let order = epoch_rng.permutation(n);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            enc_grads.reset();
            dec_grads.reset();
            emb_grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                for e in eps.iter_mut() {
                    *e = epoch_rng.standard_normal();
                }
                let cond = if epoch_rng.uniform01() < cfg.cond_dropout {
                    Cond::Null
                } else {
                    Cond::Attr(attrs[i])
                };
                epoch_loss += loss_and_grads(
                    &vae,
                    &xs[i],
                    cond,
                    &eps,
                    &mut enc_grads,
                    &mut dec_grads,
                    &mut emb_grad,
                    &mut scratch,
                )?;
            }
            let scale = 1.0 / chunk.len() as f64;
            enc_grads.scale(scale);
            dec_grads.scale(scale);
            linalg::scale(&mut emb_grad, scale);

            params.clear();
            vae.encoder.push_params(&mut params);
            vae.decoder.push_params(&mut params);
            params.extend_from_slice(vae.attr_embed.data());
            flat.clear();
            DenseNet::push_grads(&enc_grads, &mut flat);
            DenseNet::push_grads(&dec_grads, &mut flat);
            flat.extend_from_slice(&emb_grad);
            opt.step(&adam, "vae", &mut params, &mut flat)?;
            let used_enc = vae.encoder.load_params(&params)?;
            let used_dec = vae.decoder.load_params(&params[used_enc..])?;
            vae.attr_embed
                .data_mut()
                .copy_from_slice(&params[used_enc + used_dec..]);
        }
        epoch_losses.push(epoch_loss / n as f64);
    }
    Ok((vae, VaeTrace { epoch_losses }))
}

/// Monte Carlo ELBO (one posterior draw per row) including the Gaussian
/// likelihood constant, so values are comparable across models.
pub fn elbo(vae: &Vae, xs: &[Vec<f64>], attrs: &[u8], rng: &mut RngStream) -> Result<f64> {
    if xs.is_empty() || xs.len() != attrs.len() {
        return Err(Error::InvalidArgument("ELBO needs aligned nonempty data".into()));
    }
    let k = vae.feature_dim() as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (x, &a) in xs.iter().zip(attrs) {
        let (mu, logvar) = vae.encode(x)?;
        let z: Vec<f64> = mu
            .iter()
            .zip(&logvar)
            .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.standard_normal())
            .collect();
        let xhat = vae.decode(&z, Cond::Attr(a))?;
        let recon: f64 = xhat.iter().zip(x).map(|(h, v)| (h - v) * (h - v)).sum();
        total += -0.5 * recon - 0.5 * k * ln2pi - kl_to_standard_normal(&mu, &logvar);
    }
    Ok(total / xs.len() as f64)
}
