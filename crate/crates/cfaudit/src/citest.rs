//! The counterfactual-invariance test.
//!
//! For each test row the pipeline encodes the features to a latent, applies
//! the disentangling perturbation, pushes the result to the terminal noise
//! level once, and regenerates features under (a) the row's own attribute
//! and (b) an attribute-free conditioning. A classifier is counterfactually
//! invariant when its expected score does not depend on which conditioning
//! produced the features; the test compares the two score estimates with a
//! paired t-test over rows.
//!
//! Generation is classifier-independent, so the per-row samples live in a
//! [`SampleBank`] that many classifiers evaluate against. All conditionings
//! of one sample share the same per-step noise (common random numbers),
//! which leaves the null distribution untouched while collapsing the
//! variance of the paired differences.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::generative::{Cond, GenerativeBundle, StepNoise};
use crate::numerics::linalg::{mean, sample_variance};
use crate::numerics::special::student_t_sf;
use crate::numerics::RngStream;
use crate::scm::LabeledDataset;
use crate::store::sha256_hex;
use crate::zoo::Predictor;
use crate::{Error, Result};

/// How the attribute-free score estimate is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HMode {
    /// Average the per-attribute estimates under the bundle's attribute
    /// prior (exact, the default).
    Marginalize,
    /// Regenerate under the learned null conditioning row.
    NullToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CitConfig {
    /// Reverse-diffusion samples per test row and conditioning.
    pub n_mc: usize,
    /// Length of the accelerated reverse sub-sequence.
    pub ddim_steps: usize,
    /// Attribute-free estimate mode.
    pub h_mode: HMode,
    /// Significance level.
    pub alpha: f64,
    /// Seed for all generation randomness in the test.
    pub seed: u64,
    /// Independent terminal-noise draws per row; estimates average over
    /// them. One draw is the default.
    pub forward_draws: usize,
}

impl Default for CitConfig {
    fn default() -> Self {
        CitConfig {
            n_mc: 32,
            ddim_steps: 50,
            h_mode: HMode::Marginalize,
            alpha: 0.05,
            seed: 0,
            forward_draws: 1,
        }
    }
}

impl CitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be at least 1".into()));
        }
        if self.ddim_steps == 0 {
            return Err(Error::Config("ddim_steps must be at least 1".into()));
        }
        if self.forward_draws == 0 {
            return Err(Error::Config("forward_draws must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }

    /// Content hash of the configuration, recorded in reports.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("CitConfig serializes");
        sha256_hex(&[text.as_bytes()])
    }
}

/// Result of one invariance test of one classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub method: String,
    pub classifier: String,
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: usize,
    pub n_rows: usize,
    /// Mean and sample variance of the per-row paired differences
    /// d_i = yhat_i * (h_i - g_i).
    pub diff_mean: f64,
    pub diff_variance: f64,
    /// First and second moments of yhat_i * g_i (attribute-conditioned arm).
    pub mu_az: f64,
    pub var_az: f64,
    /// First and second moments of yhat_i * h_i (attribute-free arm).
    pub mu_z: f64,
    pub var_z: f64,
    /// True when every paired difference is identical (zero variance);
    /// the test then reports p = 1 rather than dividing by zero.
    pub degenerate: bool,
    pub alpha: f64,
    /// p < alpha; never set when degenerate.
    pub reject: bool,
    pub dataset_fingerprint: String,
    pub bundle_fingerprint: String,
    pub config_hash: String,
    pub wall_time_s: f64,
}

/// Differences whose largest magnitude sits below this floor are pure
/// floating-point noise: scores live in [0, 1], so their rounding error is
/// ~1e-16, while any genuine Monte Carlo signal is several orders larger.
/// Without the floor, a classifier that is exactly invariant can produce
/// identical ulp-scale differences with near-zero variance and an
/// astronomically large t.
const TIE_FLOOR: f64 = 1e-12;

/// The paired t-test core on per-row differences: t = mean / (sd / sqrt n),
/// two-sided p with n - 1 degrees of freedom. Zero variance (or differences
/// indistinguishable from rounding noise) yields the degenerate report
/// (t = 0, p = 1) instead of an error.
pub fn paired_t(diffs: &[f64]) -> Result<PairedT> {
    if diffs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "paired test needs at least 2 differences, got {}",
            diffs.len()
        )));
    }
    if !crate::numerics::linalg::all_finite(diffs) {
        return Err(Error::NonFinite("paired differences".into()));
    }
    let n = diffs.len();
    let m = mean(diffs);
    let var = sample_variance(diffs);
    let max_abs = diffs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if var == 0.0 || max_abs < TIE_FLOOR {
        return Ok(PairedT {
            t: 0.0,
            p: 1.0,
            dof: n - 1,
            mean: m,
            variance: var,
            degenerate: true,
        });
    }
    let t = m / (var / n as f64).sqrt();
    let p = student_t_sf(t, (n - 1) as f64)?;
    Ok(PairedT {
        t,
        p,
        dof: n - 1,
        mean: m,
        variance: var,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PairedT {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
    pub mean: f64,
    pub variance: f64,
    pub degenerate: bool,
}

/// Classifier-independent generated samples for every test row.
///
/// Building the bank runs the whole generative pipeline once; evaluating a
/// classifier against it only costs prediction calls, so auditing a pool of
/// classifiers on one dataset amortizes all the diffusion work.
pub struct SampleBank {
    rows: Vec<RowSamples>,
    h_mode: HMode,
    attr_prior: f64,
    alpha: f64,
    dataset_fingerprint: String,
    bundle_fingerprint: String,
    config_hash: String,
}

/// One row of [`SampleBank::arm_scores`]: factual prediction plus the mean
/// generated-sample score under each attribute conditioning.
#[derive(Debug, Clone, Copy)]
pub struct ArmScore {
    pub attr: u8,
    pub y_hat: f64,
    pub g0: f64,
    pub g1: f64,
}

struct RowSamples {
    x: Vec<f64>,
    attr: u8,
    /// Decoded feature samples under conditioning a = 0 / a = 1. In
    /// null-token mode only the row's own arm is populated.
    by_attr: [Vec<Vec<f64>>; 2],
    /// Decoded samples under the null conditioning (null-token mode only).
    null: Vec<Vec<f64>>,
}

/// Score estimate under one conditioning: the classifier averaged over that
/// conditioning's generated samples.
fn mean_score(f: &dyn Predictor, samples: &[Vec<f64>]) -> Result<f64> {
    let mut acc = 0.0;
    for x in samples {
        acc += checked_proba(f, x)?;
    }
    Ok(acc / samples.len() as f64)
}

fn checked_proba(f: &dyn Predictor, x: &[f64]) -> Result<f64> {
    let p = f.predict_proba(x)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "predict_proba returned {p}, outside [0, 1]"
        )));
    }
    Ok(p)
}

/// Run the generative pipeline for every test row and cache the decoded
/// samples. Rejects test sets smaller than 8 rows: below that the paired
/// test has no meaningful power.
pub fn build_sample_bank(
    bundle: &GenerativeBundle,
    d_test: &LabeledDataset,
    cfg: &CitConfig,
) -> Result<SampleBank> {
    cfg.validate()?;
    if d_test.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "{} test rows; the invariance test needs at least 8",
            d_test.len()
        )));
    }
    if d_test.feature_dim() != bundle.feature_dim() {
        return Err(Error::Shape {
            context: "test feature dimension",
            expected: bundle.feature_dim(),
            got: d_test.feature_dim(),
        });
    }
    let d = bundle.latent_dim();
    let step_count = crate::generative::diffusion::ddim_times(
        bundle.schedule().t_max(),
        cfg.ddim_steps,
    )?
    .len();
    let root = RngStream::new(cfg.seed, "cit-bank");
    let mut rows = Vec::with_capacity(d_test.len());
    for i in 0..d_test.len() {
        let row_rng = root.fork(&format!("row/{i}"));
        let x = d_test.features(i).to_vec();
        let attr = d_test.attr(i);

        let per_cond = cfg.n_mc * cfg.forward_draws;
        let mut by_attr = [
            Vec::with_capacity(per_cond),
            Vec::with_capacity(per_cond),
        ];
        let mut null = Vec::new();
        let conds: Vec<Cond> = match cfg.h_mode {
            HMode::Marginalize => vec![Cond::Attr(0), Cond::Attr(1)],
            HMode::NullToken => vec![Cond::Attr(attr), Cond::Null],
        };
        for draw in 0..cfg.forward_draws {
            // Each forward draw re-runs the stochastic encode, so averaging
            // over draws integrates the posterior along with the forward
            // noise instead of freezing one posterior sample per row.
            let z0 = bundle.encode_sample(&x, &mut row_rng.fork(&format!("encode/{draw}")))?;
            let z_perturbed = bundle.perturb(&z0)?;
            let z_terminal =
                bundle.to_terminal(&z_perturbed, &mut row_rng.fork(&format!("terminal/{draw}")))?;
            for s in 0..cfg.n_mc {
                // One noise trajectory shared by every conditioning of this
                // sample: the paired difference sees identical randomness.
                let noise = StepNoise::draw(
                    step_count,
                    d,
                    &mut row_rng.fork(&format!("steps/{draw}/{s}")),
                );
                for &cond in &conds {
                    let xhat = bundle.reverse_features(&z_terminal, cond, cfg.ddim_steps, Some(&noise))?;
                    match cond {
                        Cond::Attr(a) => by_attr[a as usize].push(xhat),
                        Cond::Null => null.push(xhat),
                    }
                }
            }
        }
        rows.push(RowSamples {
            x,
            attr,
            by_attr,
            null,
        });
    }
    Ok(SampleBank {
        rows,
        h_mode: cfg.h_mode,
        attr_prior: bundle.attr_prior(),
        alpha: cfg.alpha,
        dataset_fingerprint: d_test.fingerprint(),
        bundle_fingerprint: bundle.fingerprint(),
        config_hash: cfg.hash(),
    })
}

impl SampleBank {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dataset_fingerprint(&self) -> &str {
        &self.dataset_fingerprint
    }

    /// Per-row diagnostic: the classifier's factual score and its mean
    /// score over the generated samples of each conditioning arm. Exposes
    /// how strongly the generator moves this classifier when the attribute
    /// conditioning flips — the raw material behind the paired statistic.
    /// In null-token mode only the factual arm carries samples, so the
    /// opposite arm is reported as NaN.
    pub fn arm_scores(&self, f: &dyn Predictor) -> Result<Vec<ArmScore>> {
        let mut out = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let y_hat = checked_proba(f, &row.x)?;
            let score = |arm: &[Vec<f64>]| -> Result<f64> {
                if arm.is_empty() {
                    Ok(f64::NAN)
                } else {
                    mean_score(f, arm)
                }
            };
            out.push(ArmScore {
                attr: row.attr,
                y_hat,
                g0: score(&row.by_attr[0])?,
                g1: score(&row.by_attr[1])?,
            });
        }
        Ok(out)
    }

    /// Test one classifier against the cached samples.
    pub fn evaluate(&self, f: &dyn Predictor) -> Result<TestReport> {
        let start = Instant::now();
        let n = self.rows.len();
        let mut diffs = Vec::with_capacity(n);
        let mut yg = Vec::with_capacity(n);
        let mut yh = Vec::with_capacity(n);
        for row in &self.rows {
            let y_hat = checked_proba(f, &row.x)?;
            let g = mean_score(f, &row.by_attr[row.attr as usize])?;
            let (h, d) = match self.h_mode {
                HMode::Marginalize => {
                    let g0 = mean_score(f, &row.by_attr[0])?;
                    let g1 = mean_score(f, &row.by_attr[1])?;
                    let h = (1.0 - self.attr_prior) * g0 + self.attr_prior * g1;
                    // h - g reduces to a weighted cross-arm difference;
                    // computing it that way keeps the difference exactly
                    // zero whenever the two arms score identically.
                    let d = if row.attr == 0 {
                        y_hat * self.attr_prior * (g1 - g0)
                    } else {
                        y_hat * (1.0 - self.attr_prior) * (g0 - g1)
                    };
                    (h, d)
                }
                HMode::NullToken => {
                    let h = mean_score(f, &row.null)?;
                    (h, y_hat * (h - g))
                }
            };
            diffs.push(d);
            yg.push(y_hat * g);
            yh.push(y_hat * h);
        }
        let tt = paired_t(&diffs)?;
        Ok(TestReport {
            method: "cit-lr".into(),
            classifier: f.id(),
            t_stat: tt.t,
            p_value: tt.p,
            dof: tt.dof,
            n_rows: n,
            diff_mean: tt.mean,
            diff_variance: tt.variance,
            mu_az: mean(&yg),
            var_az: sample_variance(&yg),
            mu_z: mean(&yh),
            var_z: sample_variance(&yh),
            degenerate: tt.degenerate,
            alpha: self.alpha,
            reject: !tt.degenerate && tt.p < self.alpha,
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            bundle_fingerprint: self.bundle_fingerprint.clone(),
            config_hash: self.config_hash.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Attribute-conditioned score estimate for one terminal latent: the mean
/// classifier score over `n_mc` regenerated feature vectors.
pub fn estimate_g(
    bundle: &GenerativeBundle,
    f: &dyn Predictor,
    attr: u8,
    z_terminal: &[f64],
    n_mc: usize,
    ddim_steps: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let step_count =
        crate::generative::diffusion::ddim_times(bundle.schedule().t_max(), ddim_steps)?.len();
    let mut acc = 0.0;
    for s in 0..n_mc {
        let noise = StepNoise::draw(step_count, bundle.latent_dim(), &mut rng.fork(&format!("mc/{s}")));
        let xhat = bundle.reverse_features(z_terminal, Cond::Attr(attr), ddim_steps, Some(&noise))?;
        acc += checked_proba(f, &xhat)?;
    }
    Ok(acc / n_mc as f64)
}

/// Attribute-free score estimate for one terminal latent, either by
/// marginalizing the per-attribute estimates over the bundle's prior or by
/// regenerating under the null conditioning. Noise trajectories are shared
/// with [`estimate_g`] when the same `rng` labels are used.
pub fn estimate_h(
    bundle: &GenerativeBundle,
    f: &dyn Predictor,
    z_terminal: &[f64],
    n_mc: usize,
    ddim_steps: usize,
    mode: HMode,
    rng: &mut RngStream,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    match mode {
        HMode::Marginalize => {
            let g0 = estimate_g(bundle, f, 0, z_terminal, n_mc, ddim_steps, rng)?;
            let g1 = estimate_g(bundle, f, 1, z_terminal, n_mc, ddim_steps, rng)?;
            Ok((1.0 - bundle.attr_prior()) * g0 + bundle.attr_prior() * g1)
        }
        HMode::NullToken => {
            let step_count =
                crate::generative::diffusion::ddim_times(bundle.schedule().t_max(), ddim_steps)?
                    .len();
            let mut acc = 0.0;
            for s in 0..n_mc {
                let noise = StepNoise::draw(
                    step_count,
                    bundle.latent_dim(),
                    &mut rng.fork(&format!("mc/{s}")),
                );
                let xhat = bundle.reverse_features(z_terminal, Cond::Null, ddim_steps, Some(&noise))?;
                acc += checked_proba(f, &xhat)?;
            }
            Ok(acc / n_mc as f64)
        }
    }
}

/// The one-shot invariance test: build the per-row sample bank and evaluate
/// a single classifier. Pools of classifiers should build the bank once via
/// [`build_sample_bank`] and call [`SampleBank::evaluate`] per classifier.
pub fn cit_lr(
    f: &dyn Predictor,
    bundle: &GenerativeBundle,
    d_test: &LabeledDataset,
    cfg: &CitConfig,
) -> Result<TestReport> {
    let start = Instant::now();
    let bank = build_sample_bank(bundle, d_test, cfg)?;
    let mut report = bank.evaluate(f)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{
        train_bundle, BundleConfig, DenoiserTrainConfig, DisentangleTrainConfig, VaeTrainConfig,
    };
    use crate::zoo::testing::{ConstantPredictor, ThresholdPredictor};

    fn tiny_bundle_config() -> BundleConfig {
        BundleConfig {
            t_steps: 40,
            attr_prior: Some(0.3),
            vae: VaeTrainConfig {
                latent_dim: 3,
                hidden: vec![16],
                epochs: 4,
                ..VaeTrainConfig::default()
            },
            disentangle: DisentangleTrainConfig {
                perturb_hidden: vec![8],
                critic_hidden: vec![16],
                phi_steps: 8,
                ..DisentangleTrainConfig::default()
            },
            denoiser: DenoiserTrainConfig {
                hidden: vec![32],
                epochs: 4,
                ..DenoiserTrainConfig::default()
            },
            ..BundleConfig::default()
        }
    }

    fn toy_data(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = RngStream::new(seed, "cit-toy");
        let mut xs = Vec::new();
        let mut attrs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let a = u8::from(rng.bernoulli(0.3));
            let shift = if a == 1 { 1.2 } else { -1.2 };
            xs.push(vec![
                shift + 0.4 * rng.standard_normal(),
                rng.standard_normal(),
            ]);
            attrs.push(a);
            ys.push(u8::from(rng.bernoulli(0.5)));
        }
        LabeledDataset::new(2, xs, attrs, ys).unwrap()
    }

    fn toy_bundle(seed: u64) -> (GenerativeBundle, LabeledDataset) {
        let train = toy_data(200, seed);
        let test = toy_data(40, seed + 1000);
        let mut rng = RngStream::new(seed, "cit-bundle");
        let (bundle, _) = train_bundle(&train, &tiny_bundle_config(), &mut rng).unwrap();
        (bundle, test)
    }

    #[test]
    fn hand_computed_t_statistic_matches() {
        // d = (0.1, -0.2, 0.05, 0.0, 0.15): mean 0.02, sample variance
        // 0.073/4 = 0.01825, t = 0.02 / sqrt(0.01825/5).
        let d = [0.1, -0.2, 0.05, 0.0, 0.15];
        let got = paired_t(&d).unwrap();
        let want_t = 0.02 / (0.01825f64 / 5.0).sqrt();
        assert!((got.t - want_t).abs() < 1e-12, "{} vs {want_t}", got.t);
        assert_eq!(got.dof, 4);
        assert!(!got.degenerate);
        assert!(got.p > 0.0 && got.p < 1.0);
    }

    #[test]
    fn sign_flip_negates_t_and_preserves_p() {
        let d = [0.1, -0.2, 0.05, 0.0, 0.15];
        let flipped: Vec<f64> = d.iter().map(|v| -v).collect();
        let a = paired_t(&d).unwrap();
        let b = paired_t(&flipped).unwrap();
        assert_eq!(a.t, -b.t);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn zero_variance_is_degenerate_with_unit_p() {
        let d = [0.25; 10];
        let got = paired_t(&d).unwrap();
        assert!(got.degenerate);
        assert_eq!(got.p, 1.0);
        assert_eq!(got.t, 0.0);
    }

    #[test]
    fn rounding_noise_differences_are_degenerate() {
        // Ulp-scale leftovers of exact invariance must not manufacture an
        // enormous t out of zero real variance.
        let d = [1e-16, -2.0e-16, 5.0e-17, 0.0, 1.5e-16, -1e-16, 3e-17, -4e-17];
        let got = paired_t(&d).unwrap();
        assert!(got.degenerate);
        assert_eq!(got.p, 1.0);
        // Anything at real Monte Carlo scale is not degenerate.
        let real = [1e-3, -2e-3, 0.5e-3, 1.2e-3, -0.3e-3];
        assert!(!paired_t(&real).unwrap().degenerate);
    }

    #[test]
    fn constant_classifier_is_degenerate_end_to_end() {
        let (bundle, test) = toy_bundle(3);
        for h_mode in [HMode::Marginalize, HMode::NullToken] {
            let report = cit_lr(&ConstantPredictor(0.4), &bundle, &test, &CitConfig {
                n_mc: 2,
                ddim_steps: 8,
                h_mode,
                ..CitConfig::default()
            })
            .unwrap();
            assert!(report.degenerate, "{h_mode:?}");
            assert_eq!(report.p_value, 1.0);
            assert!(!report.reject);
            assert_eq!(report.dof, test.len() - 1);
            // Constant integrand: both moment estimates equal c * c.
            assert!((report.mu_az - 0.4 * 0.4).abs() < 1e-12);
            assert!((report.mu_z - 0.4 * 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn small_test_sets_are_refused() {
        let (bundle, _) = toy_bundle(4);
        let tiny = toy_data(7, 99);
        let err = cit_lr(
            &ConstantPredictor(0.5),
            &bundle,
            &tiny,
            &CitConfig {
                n_mc: 1,
                ddim_steps: 4,
                ..CitConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)), "{err}");
    }

    #[test]
    fn bank_reuse_matches_one_shot_and_is_deterministic() {
        let (bundle, test) = toy_bundle(5);
        let cfg = CitConfig {
            n_mc: 2,
            ddim_steps: 6,
            seed: 9,
            ..CitConfig::default()
        };
        let f = ThresholdPredictor {
            feature: 0,
            threshold: 0.0,
        };
        let bank = build_sample_bank(&bundle, &test, &cfg).unwrap();
        let r1 = bank.evaluate(&f).unwrap();
        let r2 = bank.evaluate(&f).unwrap();
        let one_shot = cit_lr(&f, &bundle, &test, &cfg).unwrap();
        assert_eq!(r1.t_stat, r2.t_stat);
        assert_eq!(r1.p_value, r2.p_value);
        assert_eq!(r1.t_stat, one_shot.t_stat);
        assert_eq!(r1.p_value, one_shot.p_value);
        assert_eq!(r1.diff_mean, one_shot.diff_mean);
    }

    #[test]
    fn marginalization_mixes_per_attribute_estimates_exactly() {
        let (bundle, test) = toy_bundle(6);
        let cfg = CitConfig {
            n_mc: 2,
            ddim_steps: 6,
            ..CitConfig::default()
        };
        let f = ThresholdPredictor {
            feature: 0,
            threshold: 0.0,
        };
        // Recompute h for row 0 by hand from the two per-attribute means.
        let root = RngStream::new(cfg.seed, "cit-bank");
        let row_rng = root.fork("row/0");
        let z0 = bundle
            .encode_sample(test.features(0), &mut row_rng.fork("encode/0"))
            .unwrap();
        let zp = bundle.perturb(&z0).unwrap();
        let zt = bundle
            .to_terminal(&zp, &mut row_rng.fork("terminal/0"))
            .unwrap();
        let step_count =
            crate::generative::diffusion::ddim_times(bundle.schedule().t_max(), cfg.ddim_steps)
                .unwrap()
                .len();
        let mut scores = [0.0f64; 2];
        for s in 0..cfg.n_mc {
            let noise = StepNoise::draw(
                step_count,
                bundle.latent_dim(),
                &mut row_rng.fork(&format!("steps/0/{s}")),
            );
            for a in 0..2 {
                let xhat = bundle
                    .reverse_features(&zt, Cond::Attr(a as u8), cfg.ddim_steps, Some(&noise))
                    .unwrap();
                scores[a] += f.predict_proba(&xhat).unwrap();
            }
        }
        let g0 = scores[0] / cfg.n_mc as f64;
        let g1 = scores[1] / cfg.n_mc as f64;
        let expect_h = 0.7 * g0 + 0.3 * g1;

        // The bank's h for row 0 must be exactly that mixture. Reconstruct
        // it from bank internals via a single-row dataset evaluation.
        let bank = build_sample_bank(&bundle, &test, &cfg).unwrap();
        let row = &bank.rows[0];
        let g0_bank = mean_score(&f, &row.by_attr[0]).unwrap();
        let g1_bank = mean_score(&f, &row.by_attr[1]).unwrap();
        assert_eq!(g0_bank, g0);
        assert_eq!(g1_bank, g1);
        let h_bank = 0.7 * g0_bank + 0.3 * g1_bank;
        assert!((h_bank - expect_h).abs() < 1e-15);
    }

    #[test]
    fn estimate_g_is_constant_for_constant_classifier() {
        let (bundle, _) = toy_bundle(7);
        let mut rng = RngStream::new(3, "probe");
        let z = rng.normal_vec(bundle.latent_dim());
        let g = estimate_g(&bundle, &ConstantPredictor(0.8), 1, &z, 4, 6, &mut rng.fork("g"))
            .unwrap();
        assert_eq!(g, 0.8);
        let h = estimate_h(
            &bundle,
            &ConstantPredictor(0.8),
            &z,
            4,
            6,
            HMode::NullToken,
            &mut rng.fork("h"),
        )
        .unwrap();
        assert_eq!(h, 0.8);
    }

    #[test]
    fn null_token_mode_runs_end_to_end() {
        let (bundle, test) = toy_bundle(8);
        let cfg = CitConfig {
            n_mc: 2,
            ddim_steps: 6,
            h_mode: HMode::NullToken,
            ..CitConfig::default()
        };
        let f = ThresholdPredictor {
            feature: 0,
            threshold: 0.0,
        };
        let report = cit_lr(&f, &bundle, &test, &cfg).unwrap();
        assert!(report.p_value >= 0.0 && report.p_value <= 1.0);
        assert_eq!(report.n_rows, test.len());
        assert_eq!(report.method, "cit-lr");
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = CitConfig::default();
        cfg.alpha = 1.5;
        assert!(cfg.validate().is_err());
        cfg = CitConfig::default();
        cfg.n_mc = 0;
        assert!(cfg.validate().is_err());
        cfg = CitConfig::default();
        cfg.forward_draws = 0;
        assert!(cfg.validate().is_err());
        // Unknown keys in serialized form are rejected.
        let err = serde_json::from_str::<CitConfig>("{\"bogus\": 1}");
        assert!(err.is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = CitConfig::default();
        let mut b = CitConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.n_mc = 33;
        assert_ne!(a.hash(), b.hash());
    }
}
