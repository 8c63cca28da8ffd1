//! The counterfactual feature generator.
//!
//! Four learned pieces compose into one bundle per dataset:
//!
//! 1. a feature scaler and a conditional [`vae`] giving a latent code
//!    z0 for every row;
//! 2. a [`disentangle`] perturbation phi trained adversarially against a
//!    mutual-information critic ([`mine`]) so phi(z0) carries as little
//!    attribute information as the perturbation budget allows;
//! 3. a conditional denoiser over a fixed [`diffusion`] schedule, trained
//!    on the perturbed latents, whose reverse pass regenerates latents
//!    under a chosen attribute conditioning.
//!
//! Auditing encodes a real row, perturbs it, pushes it to the terminal
//! noise level once, and reverse-decodes it several times under different
//! attribute conditionings with shared per-step noise, so that paired
//! comparisons see identical randomness on both arms.

pub mod diffusion;
pub mod disentangle;
pub mod mine;
pub mod vae;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::linalg::mean;
use crate::numerics::RngStream;
use crate::scm::LabeledDataset;
use crate::store::{
    self, push_matrix, push_net, push_scaler, read_matrix, read_net, read_scaler, ParamFile,
    KIND_DENOISER, KIND_DISENTANGLER, KIND_VAE,
};
use crate::zoo::linear::Scaler;
use crate::{Error, Result};

pub use diffusion::{
    forward_diffuse, sample_reverse, Cond, Denoiser, DenoiserTrainConfig, Schedule, StepNoise,
    DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T_STEPS,
};
pub use disentangle::{attr_bound, Disentangler, DisentangleTrainConfig};
pub use mine::{mine_estimate, train_critic, Critic, CriticTrainConfig};
pub use vae::{train_vae, Vae, VaeTrainConfig};

use diffusion::{train_denoiser, DenoiserTrace};
use disentangle::{train_disentangler, DisentangleTrace};
use vae::VaeTrace;

/// Everything needed to train one generator bundle.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BundleConfig {
    /// Forward-process length.
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// P(attribute = 1) used when marginalizing conditionings. Unset means
    /// estimate it from the training rows.
    pub attr_prior: Option<f64>,
    pub vae: VaeTrainConfig,
    pub disentangle: DisentangleTrainConfig,
    pub denoiser: DenoiserTrainConfig,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            t_steps: DEFAULT_T_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            attr_prior: None,
            vae: VaeTrainConfig::default(),
            disentangle: DisentangleTrainConfig::default(),
            denoiser: DenoiserTrainConfig::default(),
        }
    }
}

/// A trained generator: scaler + VAE + perturbation + denoiser + schedule
/// + attribute prior.
#[derive(Debug, Clone)]
pub struct GenerativeBundle {
    pub(crate) scaler: Scaler,
    pub(crate) vae: Vae,
    pub(crate) phi: Disentangler,
    pub(crate) schedule: Schedule,
    pub(crate) denoiser: Denoiser,
    attr_prior: f64,
}

#[derive(Debug, Clone)]
pub struct BundleTrace {
    pub vae: VaeTrace,
    pub disentangle: DisentangleTrace,
    pub denoiser: DenoiserTrace,
}

impl GenerativeBundle {
    pub fn latent_dim(&self) -> usize {
        self.vae.latent_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.vae.feature_dim()
    }

    /// P(attribute = 1) used for marginalized scores.
    pub fn attr_prior(&self) -> f64 {
        self.attr_prior
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// One posterior draw z0 for a raw (unscaled) feature row.
    pub fn encode_sample(&self, x_raw: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        if x_raw.len() != self.scaler.dim() {
            return Err(Error::Shape {
                context: "bundle feature row",
                expected: self.scaler.dim(),
                got: x_raw.len(),
            });
        }
        self.vae.sample_posterior(&self.scaler.transform(x_raw), rng)
    }

    /// The trained latent perturbation phi.
    pub fn perturb(&self, z0: &[f64]) -> Result<Vec<f64>> {
        self.phi.phi(z0)
    }

    /// One forward draw to the terminal noise level of the schedule.
    pub fn to_terminal(&self, z: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let noise = rng.normal_vec(z.len());
        forward_diffuse(&self.schedule, z, self.schedule.t_max(), &noise)
    }

    /// Reverse-diffuse a terminal latent under the given conditioning and
    /// decode to a raw feature vector. `noise` carries the shared per-step
    /// randomness; pass the same draws across conditionings for paired
    /// comparisons, or `None` for the deterministic pass.
    pub fn reverse_features(
        &self,
        z_terminal: &[f64],
        cond: Cond,
        ddim_steps: usize,
        noise: Option<&StepNoise>,
    ) -> Result<Vec<f64>> {
        let z0 = sample_reverse(&self.denoiser, &self.schedule, z_terminal, cond, ddim_steps, noise)?;
        self.decode_features(&z0, cond)
    }

    /// Decode a latent to raw feature space under the given conditioning.
    pub fn decode_features(&self, z0: &[f64], cond: Cond) -> Result<Vec<f64>> {
        Ok(self.scaler.inverse(&self.vae.decode(z0, cond)?))
    }

    /// Content hash over all parameters, schedule, and prior.
    pub fn fingerprint(&self) -> String {
        let files = self.component_files();
        let mut chunks: Vec<Vec<u8>> = files.iter().map(|(_, pf)| pf.to_bytes()).collect();
        chunks.push(format!("prior={:.17e}", self.attr_prior).into_bytes());
        let refs: Vec<&[u8]> = chunks.iter().map(|c| c.as_slice()).collect();
        store::sha256_hex(&refs)
    }

    fn component_files(&self) -> Vec<(&'static str, ParamFile)> {
        let mut vae_pf = ParamFile::new(KIND_VAE);
        push_scaler(&mut vae_pf, "scaler", &self.scaler);
        push_net(&mut vae_pf, "encoder", &self.vae.encoder);
        push_net(&mut vae_pf, "decoder", &self.vae.decoder);
        push_matrix(&mut vae_pf, "attr_embed", &self.vae.attr_embed);

        let mut den_pf = ParamFile::new(KIND_DENOISER);
        push_net(&mut den_pf, "net", &self.denoiser.net);
        push_matrix(&mut den_pf, "attr_embed", &self.denoiser.attr_embed);

        let mut dis_pf = ParamFile::new(KIND_DISENTANGLER);
        push_net(&mut dis_pf, "net", &self.phi.net);
        dis_pf.push_f64("lambda", vec![self.phi.lambda()]);

        vec![
            ("vae.cfpd", vae_pf),
            ("denoiser.cfpd", den_pf),
            ("disentangler.cfpd", dis_pf),
        ]
    }

    /// Write the bundle into `dir`: one parameter file per component plus
    /// `bundle.json` with the schedule, prior, and content fingerprints.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io_at(dir))?;
        let mut files = BTreeMap::new();
        for (name, pf) in self.component_files() {
            pf.write(&dir.join(name))?;
            files.insert(name.to_string(), pf.fingerprint());
        }
        let meta = BundleMeta {
            format_version: store::FORMAT_VERSION,
            t_steps: self.schedule.t_max(),
            beta_start: self.schedule.beta(1),
            beta_end: self.schedule.beta(self.schedule.t_max()),
            attr_prior: self.attr_prior,
            files,
        };
        let path = dir.join("bundle.json");
        let mut text = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Store(format!("bundle meta: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(Error::io_at(path))
    }

    /// Load a bundle saved by [`GenerativeBundle::save`], verifying content
    /// fingerprints and shape consistency.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("bundle.json");
        let text = std::fs::read_to_string(&meta_path).map_err(Error::io_at(&meta_path))?;
        let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.display().to_string(),
            msg: e.to_string(),
        })?;
        if meta.format_version != store::FORMAT_VERSION {
            return Err(Error::Store(format!(
                "bundle format {} unsupported (expected {})",
                meta.format_version,
                store::FORMAT_VERSION
            )));
        }
        if !(meta.attr_prior > 0.0 && meta.attr_prior < 1.0) {
            return Err(Error::Store(format!(
                "attribute prior {} outside (0, 1)",
                meta.attr_prior
            )));
        }
        let read_checked = |name: &str, kind: u32| -> Result<ParamFile> {
            let want = meta.files.get(name).ok_or_else(|| {
                Error::Store(format!("bundle.json lists no fingerprint for {name}"))
            })?;
            let pf = ParamFile::read(&dir.join(name))?;
            if pf.kind() != kind {
                return Err(Error::Store(format!(
                    "{name} has kind {} (expected {kind})",
                    pf.kind()
                )));
            }
            if &pf.fingerprint() != want {
                return Err(Error::Store(format!("{name} does not match its fingerprint")));
            }
            Ok(pf)
        };

        let vae_pf = read_checked("vae.cfpd", KIND_VAE)?;
        let scaler = read_scaler(&vae_pf, "scaler")?;
        let vae = Vae::from_parts(
            read_net(&vae_pf, "encoder")?,
            read_net(&vae_pf, "decoder")?,
            read_matrix(&vae_pf, "attr_embed")?,
        )?;
        if scaler.dim() != vae.feature_dim() {
            return Err(Error::Store(format!(
                "scaler dimension {} vs VAE feature dimension {}",
                scaler.dim(),
                vae.feature_dim()
            )));
        }

        let den_pf = read_checked("denoiser.cfpd", KIND_DENOISER)?;
        let denoiser = Denoiser::from_parts(
            read_net(&den_pf, "net")?,
            read_matrix(&den_pf, "attr_embed")?,
        )?;

        let dis_pf = read_checked("disentangler.cfpd", KIND_DISENTANGLER)?;
        let phi = Disentangler::from_parts(
            read_net(&dis_pf, "net")?,
            dis_pf.scalar_f64("lambda")?,
        )?;

        if denoiser.latent_dim() != vae.latent_dim() || phi.latent_dim() != vae.latent_dim() {
            return Err(Error::Store("bundle components disagree on latent dimension".into()));
        }
        let schedule = Schedule::linear(meta.t_steps, meta.beta_start, meta.beta_end)?;
        Ok(GenerativeBundle {
            scaler,
            vae,
            phi,
            schedule,
            denoiser,
            attr_prior: meta.attr_prior,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleMeta {
    format_version: u32,
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
    attr_prior: f64,
    files: BTreeMap<String, String>,
}

/// Train the full generator on one dataset. Phases run strictly in order:
/// VAE, then perturbation (on posterior draws), then denoiser (on perturbed
/// draws), each on its own labelled RNG stream.
pub fn train_bundle(
    data: &LabeledDataset,
    cfg: &BundleConfig,
    rng: &mut RngStream,
) -> Result<(GenerativeBundle, BundleTrace)> {
    let schedule = Schedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end)?;
    let attr_prior = match cfg.attr_prior {
        Some(p) if p > 0.0 && p < 1.0 => p,
        Some(p) => {
            return Err(Error::Config(format!("attribute prior {p} outside (0, 1)")));
        }
        None => {
            let hat = mean(
                &data.attrs().iter().map(|&a| f64::from(a)).collect::<Vec<f64>>(),
            );
            if !(hat > 0.0 && hat < 1.0) {
                return Err(Error::InsufficientData(
                    "training data has a constant attribute; pass an explicit prior".into(),
                ));
            }
            hat
        }
    };

    let scaler = Scaler::fit(data);
    let xs: Vec<Vec<f64>> = (0..data.len())
        .map(|i| scaler.transform(data.features(i)))
        .collect();
    let attrs = data.attrs().to_vec();

    let mut vae_rng = rng.fork("vae");
    let (vae, vae_trace) = train_vae(&xs, &attrs, &cfg.vae, &mut vae_rng)?;

    let mut latent_rng = rng.fork("latents");
    let z0: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| vae.sample_posterior(x, &mut latent_rng))
        .collect::<Result<_>>()?;

    let mut dis_rng = rng.fork("disentangle");
    let (phi, _critic, dis_trace) = train_disentangler(&z0, &attrs, &cfg.disentangle, &mut dis_rng)?;

    let perturbed: Vec<Vec<f64>> = z0.iter().map(|z| phi.phi(z)).collect::<Result<_>>()?;
    let mut den_rng = rng.fork("denoiser");
    let (denoiser, den_trace) = train_denoiser(&perturbed, &attrs, &schedule, &cfg.denoiser, &mut den_rng)?;

    Ok((
        GenerativeBundle {
            scaler,
            vae,
            phi,
            schedule,
            denoiser,
            attr_prior,
        },
        BundleTrace {
            vae: vae_trace,
            disentangle: dis_trace,
            denoiser: den_trace,
        },
    ))
}

/// Held-out mutual-information comparison for the perturbation map.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MiGap {
    /// DV bound between raw posterior latents and the attribute.
    pub identity_bound: f64,
    /// Same bound with the trained perturbation applied, same critic and
    /// pairing permutation.
    pub phi_bound: f64,
}

/// Train encoder + perturbation on `train`, then score the final critic's
/// bound on `heldout` rows with and without the perturbation. Both arms use
/// one critic and one pairing permutation, so the difference isolates the
/// perturbation's effect.
pub fn mi_gap(
    train: &LabeledDataset,
    heldout: &LabeledDataset,
    cfg: &BundleConfig,
    seed: u64,
) -> Result<MiGap> {
    if heldout.feature_dim() != train.feature_dim() {
        return Err(Error::Shape {
            context: "held-out feature dimension",
            expected: train.feature_dim(),
            got: heldout.feature_dim(),
        });
    }
    let rng = RngStream::new(seed, "mi-gap");
    let scaler = Scaler::fit(train);
    let xs: Vec<Vec<f64>> = (0..train.len())
        .map(|i| scaler.transform(train.features(i)))
        .collect();
    let attrs = train.attrs().to_vec();
    let mut vae_rng = rng.fork("vae");
    let (vae, _) = train_vae(&xs, &attrs, &cfg.vae, &mut vae_rng)?;

    let mut latent_rng = rng.fork("latents");
    let z0: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| vae.sample_posterior(x, &mut latent_rng))
        .collect::<Result<_>>()?;
    let mut dis_rng = rng.fork("disentangle");
    let (phi, critic, _) = train_disentangler(&z0, &attrs, &cfg.disentangle, &mut dis_rng)?;

    let mut held_rng = rng.fork("heldout-latents");
    let z_held: Vec<Vec<f64>> = (0..heldout.len())
        .map(|i| vae.sample_posterior(&scaler.transform(heldout.features(i)), &mut held_rng))
        .collect::<Result<_>>()?;
    let perm = rng.fork("perm").permutation(heldout.len());
    let identity_bound = attr_bound(&critic, &z_held, heldout.attrs(), None, &perm)?;
    let phi_bound = attr_bound(&critic, &z_held, heldout.attrs(), Some(&phi), &perm)?;
    Ok(MiGap {
        identity_bound,
        phi_bound,
    })
}
